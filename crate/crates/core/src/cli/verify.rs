//! Built-in oracle suite behind `snippet-smc verify`.

use std::f64::consts::PI;
use std::fmt;

use crate::adaptation::{contraction_curve, fit_epsilon_distribution, EpsilonDistribution};
use crate::estimators::{rao_blackwell_oracle, variance_decomposition_check};
use crate::integrators::{build_snippet, ExactFlow, Leapfrog, Snippet};
use crate::models::{FlatTarget, GaussianPath, GaussianTarget};
use crate::phase::{log_mu, PhaseState, VelocityLaw};
use crate::rng::RandomStream;
use crate::smc::{EpsilonMode, Sampler, SmcConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{tag}  {:w$}  {}", c.name, c.detail)?;
        }
        Ok(())
    }
}

/// Random snippets for a tempered Gaussian pair, leapfrog integrator.
pub fn random_gaussian_snippets(n: usize, t: usize, rng: &mut RandomStream) -> Vec<Snippet> {
    let path = GaussianPath::new(vec![1.5], vec![0.7]).expect("valid");
    let vel = VelocityLaw::standard(1);
    let (g0, g1) = (0.2 + 0.3 * rng.uniform(), 0.6 + 0.4 * rng.uniform());
    let lf = Leapfrog { target: &path, gamma: g1 };
    let eps = 0.1 + 0.5 * rng.uniform();
    (0..n)
        .map(|_| {
            let z = PhaseState { x: vec![1.5 * rng.normal()], v: vec![rng.normal()] };
            let prev = log_mu(&path, &vel, g0, &z);
            build_snippet(&lf, eps, t, z, &path, g1, &vel, prev, 0).expect("finite seed")
        })
        .collect()
}

/// Exhaustive folded/unfolded check over `N ≤ 3`, `T ≤ 2`. With `corrupt`, the
/// unfolded weights get the wrong sign (negative control).
pub fn rao_blackwell_grid(seed: u64, corrupt: bool) -> (f64, usize) {
    let mut rng = RandomStream::new(seed);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for n in 1..=3 {
        for t in 1..=2 {
            for _ in 0..5 {
                let mut s = random_gaussian_snippets(n, t, &mut rng);
                if corrupt {
                    for sn in s.iter_mut() {
                        sn.log_w.iter_mut().for_each(|w| *w = -*w);
                    }
                }
                let d = rao_blackwell_oracle(&s, &|z| z.x[0]).unwrap_or(f64::INFINITY);
                worst = worst.max(d);
                count += 1;
            }
        }
    }
    (worst, count)
}

fn golden_min(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    while (b - a).abs() > 1e-13 {
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - r * (b - a);
        d = a + r * (b - a);
    }
    0.5 * (a + b)
}

fn ig_fit_check() -> Check {
    let mut rng = RandomStream::new(21);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let s = if i % 2 == 0 { 1.0 } else { 3.0 };
        let k = 2 + rng.index(20);
        let pairs: Vec<(f64, f64)> = (0..k).map(|_| ((4.0 * rng.normal()).exp() * 0.1, rng.uniform())).collect();
        let closed = fit_epsilon_distribution(&pairs, s, 1.0).expect("valid pairs");
        let nll = |u: f64| -> f64 {
            let d = EpsilonDistribution { theta: u.exp(), s };
            -pairs.iter().map(|(e, v)| v * d.log_density(*e)).sum::<f64>()
        };
        let lo = pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).ln() - 5.0;
        let hi = pairs.iter().map(|p| p.0).fold(0.0, f64::max).ln() + 5.0;
        let numeric = golden_min(&nll, lo, hi).exp();
        worst = worst.max((closed / numeric - 1.0).abs());
    }
    Check { name: "ig_fit_vs_numeric_kl", passed: worst <= 1e-6, detail: format!("max rel err {worst:.2e}") }
}

fn free_particle_check() -> Check {
    let flat = FlatTarget { dim: 3 };
    let lf = Leapfrog { target: &flat, gamma: 1.0 };
    let mut ok = true;
    let mut rng = RandomStream::new(3);
    for _ in 0..20 {
        let dy = |r: &mut RandomStream, q: f64| (r.index(33) as f64 - 16.0) * q;
        let x1: Vec<f64> = (0..3).map(|_| dy(&mut rng, 0.125)).collect();
        let mut x2: Vec<f64> = (0..3).map(|_| dy(&mut rng, 0.125)).collect();
        if x1 == x2 {
            x2[0] += 1.0;
        }
        let v: Vec<f64> = (0..3).map(|_| dy(&mut rng, 0.25)).collect();
        let k = contraction_curve(&lf, 0.5, 16, &x1, &x2, &v);
        ok &= k.iter().enumerate().all(|(i, &c)| {
            let m = (i + 1) as f64;
            c == (m + 1.0) / m
        });
    }
    Check { name: "free_particle_contraction", passed: ok, detail: "kappa_m == (m+1)/m".into() }
}

fn variance_check() -> Check {
    let g = GaussianTarget::new(vec![1.0]).expect("valid");
    let flow = ExactFlow { target: g.clone() };
    let r = variance_decomposition_check(&g, &flow, PI / 32.0, 16, 100_000, &|z| z.x[0], &RandomStream::new(17))
        .expect("sampling");
    let se = r.combined_se();
    let passed = r.residual().abs() <= 3.0 * se && r.between < r.total - 3.0 * r.se_total;
    Check {
        name: "variance_decomposition",
        passed,
        detail: format!(
            "between {:.4} + within {:.4} vs total {:.4} (3 SE = {:.4})",
            r.between,
            r.within,
            r.total,
            3.0 * se
        ),
    }
}

fn evidence_check() -> Check {
    let p = GaussianPath::new(vec![1.0], vec![1.0]).expect("valid");
    let cfg = SmcConfig { n: 64, t: 8, epsilon: EpsilonMode::Fixed(0.1), ..Default::default() };
    let s = Sampler::new(&p, cfg).expect("valid config");
    let root = RandomStream::new(2024);
    let zs: Vec<f64> = (0..100).map(|r| s.run(&root.substream(r)).map(|o| o.log_z.exp()).unwrap_or(f64::NAN)).collect();
    let n = zs.len() as f64;
    let m = zs.iter().sum::<f64>() / n;
    let sd = (zs.iter().map(|z| (z - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let exact = p.log_evidence(1.0).exp();
    let se = sd / n.sqrt();
    Check {
        name: "gaussian_evidence",
        passed: (m - exact).abs() <= 3.0 * se,
        detail: format!("mean Z {m:.5} vs {exact:.5} (SE {se:.5})"),
    }
}

fn exact_flow_weight_check() -> Check {
    let g = GaussianTarget::new(vec![0.3, 2.0]).expect("valid");
    let vel = VelocityLaw::standard(2);
    let flow = ExactFlow { target: g.clone() };
    let mut rng = RandomStream::new(9);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let z = PhaseState { x: rng.normal_vec(2), v: rng.normal_vec(2) };
        let prev = log_mu(&g, &vel, 1.0, &z);
        let s = build_snippet(&flow, 0.37, 10, z, &g, 1.0, &vel, prev, 0).expect("finite");
        worst = s.log_w.iter().fold(worst, |w, l| w.max((l.exp() - 1.0).abs()));
    }
    Check { name: "exact_flow_unit_weights", passed: worst <= 1e-12, detail: format!("max |w-1| {worst:.2e}") }
}

/// Run every check.
pub fn run_verification() -> VerifyReport {
    let (rb, count) = rao_blackwell_grid(11, false);
    let mut checks = vec![Check {
        name: "rao_blackwell_exhaustive",
        passed: rb <= 1e-12,
        detail: format!("{count} instances, max discrepancy {rb:.2e}"),
    }];
    checks.push(variance_check());
    checks.push(ig_fit_check());
    checks.push(free_particle_check());
    checks.push(exact_flow_weight_check());
    checks.push(evidence_check());
    VerifyReport { checks }
}
