//! Expectation estimators, diagnostics and exhaustive oracles.

use rayon::prelude::*;
use serde::Serialize;

use crate::adaptation::ess_of_log_weights;
use crate::error::{Error, Result};
use crate::integrators::{normalize_log_weights, Integrator, Snippet};
use crate::phase::{log_mu, PhaseState, TemperedTarget, VelocityLaw};
use crate::rng::RandomStream;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightedEstimate {
    pub value: Vec<f64>,
    pub self_normalized: bool,
    pub ess: f64,
    /// States with nonzero weight.
    pub count: usize,
}

impl WeightedEstimate {
    pub fn scalar(&self) -> f64 {
        self.value[0]
    }
}

fn accumulate(acc: &mut Vec<f64>, w: f64, fx: &[f64]) {
    if acc.is_empty() {
        acc.resize(fx.len(), 0.0);
    }
    for (a, b) in acc.iter_mut().zip(fx) {
        *a += w * b;
    }
}

/// `μ̂(f)`: all snippet states, jointly normalized weights.
pub fn estimate_unfolded(snippets: &[Snippet], f: &dyn Fn(&PhaseState) -> Vec<f64>) -> Result<WeightedEstimate> {
    let all: Vec<f64> = snippets.iter().flat_map(|s| s.log_w.iter().cloned()).collect();
    let p = normalize_log_weights(&all).ok_or(Error::Degenerate { iteration: 0 })?;
    let mut value = Vec::new();
    let mut count = 0;
    for (pk, z) in p.iter().zip(snippets.iter().flat_map(|s| s.states.iter())) {
        if *pk > 0.0 {
            accumulate(&mut value, *pk, &f(z));
            count += 1;
        }
    }
    Ok(WeightedEstimate { value, self_normalized: true, ess: ess_of_log_weights(&all), count })
}

/// `μ̌(f) = N⁻¹ Σ_i Σ_k q_ik f(z_ik)` with weights normalized inside each snippet.
pub fn estimate_folded(snippets: &[Snippet], f: &dyn Fn(&PhaseState) -> Vec<f64>) -> Result<WeightedEstimate> {
    let n = snippets.len() as f64;
    let mut value = Vec::new();
    let mut count = 0;
    let mut flat = Vec::new();
    for (i, s) in snippets.iter().enumerate() {
        let q = normalize_log_weights(&s.log_w).ok_or(Error::EmptySnippet { index: i })?;
        for (qk, z) in q.iter().zip(&s.states) {
            if *qk > 0.0 {
                accumulate(&mut value, qk / n, &f(z));
                count += 1;
            }
            flat.push((qk / n).ln());
        }
    }
    Ok(WeightedEstimate { value, self_normalized: true, ess: ess_of_log_weights(&flat), count })
}

/// Exact `E[μ̌(f)]` over all multinomial outcomes `(b_j, a_j)`, compared with `μ̂(f)`.
///
/// Resampling probabilities and within-snippet weights are rebuilt from the
/// cached densities `log_mu_next` and `log_mu_prev_seed`, not from `log_w`.
pub fn rao_blackwell_oracle(snippets: &[Snippet], f: &dyn Fn(&PhaseState) -> f64) -> Result<f64> {
    let n = snippets.len();
    let k1 = snippets.first().map_or(0, |s| s.len());
    let cand = n * k1;
    let outcomes = (cand as f64).powi(n as i32);
    if n == 0 || outcomes > 1e7 {
        return Err(Error::TooLarge { outcomes });
    }
    // P(b, a) ∝ μ_n(z_{b,a}) / μ_{n-1}(z_{b,0})
    let raw: Vec<f64> =
        snippets.iter().flat_map(|s| s.log_mu_next.iter().map(move |l| l - s.log_mu_prev_seed)).collect();
    let m = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = raw.iter().map(|l| (l - m).exp()).collect();
    let tot: f64 = w.iter().sum();
    let prob: Vec<f64> = w.iter().map(|a| a / tot).collect();
    // snippet-level contribution of a resampled seed b
    let mut g = Vec::with_capacity(n);
    for s in snippets {
        let m = s.log_mu_next.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            g.push(f64::NAN);
            continue;
        }
        let q: Vec<f64> = s.log_mu_next.iter().map(|l| (l - m).exp()).collect();
        let qs: f64 = q.iter().sum();
        g.push(q.iter().zip(&s.states).map(|(a, z)| a / qs * f(z)).sum::<f64>());
    }
    let mut expect = 0.0;
    let mut idx = vec![0usize; n];
    loop {
        let mut p = 1.0;
        let mut est = 0.0;
        for &c in &idx {
            p *= prob[c];
            est += g[c / k1];
        }
        if p > 0.0 {
            expect += p * est / n as f64;
        }
        let mut j = 0;
        while j < n {
            idx[j] += 1;
            if idx[j] < cand {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
        if j == n {
            break;
        }
    }
    let unfolded = estimate_unfolded(snippets, &|z| vec![f(z)])?.scalar();
    Ok((expect - unfolded).abs())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VarianceDecomposition {
    /// `var(E[f̄ | Ž])`.
    pub between: f64,
    /// `E[var(f̄ | Ž)]`.
    pub within: f64,
    /// `var_μ(f)`.
    pub total: f64,
    pub se_between: f64,
    pub se_within: f64,
    pub se_total: f64,
}

impl VarianceDecomposition {
    pub fn combined_se(&self) -> f64 {
        (self.se_between.powi(2) + self.se_within.powi(2) + self.se_total.powi(2)).sqrt()
    }

    pub fn residual(&self) -> f64 {
        self.between + self.within - self.total
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, var.sqrt())
}

/// Monte Carlo check of `var(E[f̄|Ž]) + E[var(f̄|Ž)] = var_μ(f)` with exact
/// mixture samples: `z ~ μ`, `k ~ U{0..T}`, `ž = σ ψ^k σ z`.
///
/// `μ = π(·; 0) ⊗ ϖ`, sampled through `target.sample_prior`.
#[allow(clippy::too_many_arguments)]
pub fn variance_decomposition_check(
    target: &dyn TemperedTarget,
    integrator: &dyn Integrator,
    epsilon: f64,
    t: usize,
    samples: usize,
    f: &(dyn Fn(&PhaseState) -> f64 + Sync),
    rng: &RandomStream,
) -> Result<VarianceDecomposition> {
    if samples < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    let vel = VelocityLaw::standard(target.dim());
    let rows: Vec<(f64, f64, f64)> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.substream(i as u64);
            let z = PhaseState { x: target.sample_prior(&mut r)?, v: vel.sample(&mut r) };
            let k = r.index(t + 1);
            let mut back = integrator.start(z.flipped());
            for _ in 0..k {
                back = integrator.step(epsilon, &back);
            }
            let seed = back.z.flipped();
            let mut p = integrator.start(seed);
            let mut lw = vec![log_mu(target, &vel, 0.0, &p.z)];
            let mut fv = vec![f(&p.z)];
            for _ in 0..t {
                p = integrator.step(epsilon, &p);
                lw.push(log_mu(target, &vel, 0.0, &p.z));
                fv.push(f(&p.z));
            }
            let q = normalize_log_weights(&lw).ok_or(Error::EmptySnippet { index: i })?;
            let m = fv[0] + q.iter().zip(&fv).map(|(a, b)| a * (b - fv[0])).sum::<f64>();
            let v: f64 = q.iter().zip(&fv).map(|(a, b)| a * (b - m) * (b - m)).sum();
            Ok((m, v, f(&z)))
        })
        .collect::<Result<_>>()?;
    let ms: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let vs: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let fs: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let n = samples as f64;
    let (mm, _) = mean_sd(&ms);
    let (fm, _) = mean_sd(&fs);
    let dm: Vec<f64> = ms.iter().map(|a| (a - mm) * (a - mm)).collect();
    let df: Vec<f64> = fs.iter().map(|a| (a - fm) * (a - fm)).collect();
    let (within, sd_w) = mean_sd(&vs);
    let (_, sd_b) = mean_sd(&dm);
    let (_, sd_t) = mean_sd(&df);
    Ok(VarianceDecomposition {
        between: dm.iter().sum::<f64>() / (n - 1.0),
        within,
        total: df.iter().sum::<f64>() / (n - 1.0),
        se_between: sd_b / n.sqrt(),
        se_within: sd_w / n.sqrt(),
        se_total: sd_t / n.sqrt(),
    })
}

/// `(Σw)²/Σw²` over every snippet state.
pub fn unfolded_ess(snippets: &[Snippet]) -> f64 {
    let all: Vec<f64> = snippets.iter().flat_map(|s| s.log_w.iter().cloned()).collect();
    ess_of_log_weights(&all)
}

/// Bound-based ESS `(N/2)·E[S]² / (2E[S²] - E[S]²)` with `S_i = Σ_k w_ik`.
pub fn bound_ess(snippets: &[Snippet]) -> f64 {
    let all: Vec<f64> = snippets.iter().flat_map(|s| s.log_w.iter().cloned()).collect();
    let m = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return 0.0;
    }
    let sums: Vec<f64> = snippets.iter().map(|s| s.log_w.iter().map(|l| (l - m).exp()).sum()).collect();
    let n = sums.len() as f64;
    let e1 = sums.iter().sum::<f64>() / n;
    let e2 = sums.iter().map(|a| a * a).sum::<f64>() / n;
    0.5 * n * e1 * e1 / (2.0 * e2 - e1 * e1)
}

/// Sum over snippets and ordered pairs `k < l` of `(f_l W̄_l - f_k W̄_k)²`,
/// `W̄` normalized within the snippet.
pub fn esjd(snippets: &[Snippet], f: &dyn Fn(&PhaseState) -> f64) -> f64 {
    let mut total = 0.0;
    for s in snippets {
        let Some(w) = s.normalized_weights() else { continue };
        let fw: Vec<f64> = s.states.iter().zip(&w).map(|(z, wk)| f(z) * wk).collect();
        for k in 0..fw.len() {
            for l in k + 1..fw.len() {
                total += (fw[l] - fw[k]).powi(2);
            }
        }
    }
    total
}

/// Empirical relative-efficiency ratios of the snippet weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RelativeEfficiency {
    pub re0: f64,
    pub re1: f64,
    pub re2: f64,
}

/// Moment ratios computed from `r_ik = w_ik / mean(w)`, `K = T + 1`:
/// `RE0 = 2(2E[(Σr)²]/K - K)`, `RE1 = (2E[(Σr)²]/K - K)/(2Σ_k E[r_k²]/K - K)`,
/// `RE2 = (4E[(Σr)²]/K² - 2)/(E[(r_0 + r_T)²] - 2)`.
pub fn relative_efficiency(snippets: &[Snippet]) -> RelativeEfficiency {
    let all: Vec<f64> = snippets.iter().flat_map(|s| s.log_w.iter().cloned()).collect();
    let m = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let nan = RelativeEfficiency { re0: f64::NAN, re1: f64::NAN, re2: f64::NAN };
    if !m.is_finite() || snippets.is_empty() {
        return nan;
    }
    let mean_w = all.iter().map(|l| (l - m).exp()).sum::<f64>() / all.len() as f64;
    let n = snippets.len() as f64;
    let k = snippets[0].len() as f64;
    let (mut s2, mut r2, mut ends) = (0.0, 0.0, 0.0);
    for s in snippets {
        let r: Vec<f64> = s.log_w.iter().map(|l| (l - m).exp() / mean_w).collect();
        let sum: f64 = r.iter().sum();
        s2 += sum * sum / n;
        r2 += r.iter().map(|a| a * a).sum::<f64>() / n;
        ends += (r[0] + r[r.len() - 1]).powi(2) / n;
    }
    let num = 2.0 * s2 / k - k;
    RelativeEfficiency { re0: 2.0 * num, re1: num / (2.0 * r2 / k - k), re2: (4.0 * s2 / (k * k) - 2.0) / (ends - 2.0) }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snip(xs: &[f64], lw: &[f64]) -> Snippet {
        Snippet {
            states: xs.iter().map(|x| PhaseState { x: vec![*x], v: vec![0.0] }).collect(),
            log_mu_next: lw.to_vec(),
            log_mu_prev_seed: 0.0,
            log_w: lw.to_vec(),
            epsilon: 0.1,
            label: 0,
        }
    }

    fn fx(z: &PhaseState) -> Vec<f64> {
        z.x.clone()
    }

    #[test]
    fn constant_function_estimates_one() {
        let s = vec![snip(&[1.0, 2.0], &[0.3, -1.0]), snip(&[5.0, 0.0], &[2.0, f64::NEG_INFINITY])];
        let one = |_: &PhaseState| vec![1.0];
        assert!((estimate_unfolded(&s, &one).unwrap().scalar() - 1.0).abs() < 1e-15);
        assert!((estimate_folded(&s, &one).unwrap().scalar() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn equal_weights_give_plain_average() {
        let s = vec![snip(&[1.0, 2.0], &[0.0, 0.0]), snip(&[3.0, 6.0], &[0.0, 0.0])];
        assert!((estimate_unfolded(&s, &fx).unwrap().scalar() - 3.0).abs() < 1e-15);
        assert_eq!(unfolded_ess(&s), 4.0);
    }

    #[test]
    fn single_snippet_folded_equals_unfolded() {
        let s = vec![snip(&[1.0, 2.0, 4.0], &[0.1, -0.4, 1.3])];
        let a = estimate_unfolded(&s, &fx).unwrap().scalar();
        let b = estimate_folded(&s, &fx).unwrap().scalar();
        assert!((a - b).abs() < 1e-15);
        let c = vec![snip(&[1.0, 7.0], &[f64::NEG_INFINITY, 0.0])];
        assert_eq!(estimate_folded(&c, &fx).unwrap().scalar(), 7.0);
        let dead = vec![snip(&[1.0], &[f64::NEG_INFINITY])];
        assert!(matches!(estimate_folded(&dead, &fx), Err(Error::EmptySnippet { index: 0 })));
    }

    #[test]
    fn ess_cases() {
        let s = vec![snip(&[0.0, 0.0, 0.0], &[0.0, 0.0, 2f64.ln()])];
        assert!((unfolded_ess(&s) - 16.0 / 6.0).abs() < 1e-12);
        let one = vec![snip(&[0.0, 0.0], &[0.0, f64::NEG_INFINITY])];
        assert_eq!(unfolded_ess(&one), 1.0);
        let shifted = vec![snip(&[0.0, 0.0, 0.0], &[5.0, 5.0, 5.0 + 2f64.ln()])];
        assert!((unfolded_ess(&shifted) - unfolded_ess(&s)).abs() < 1e-12);
    }

    #[test]
    fn esjd_cases() {
        let f = |z: &PhaseState| z.x[0];
        assert_eq!(esjd(&[snip(&[3.0], &[0.0])], &f), 0.0);
        assert!((esjd(&[snip(&[0.0, 2.0], &[0.0, 0.0])], &f) - 1.0).abs() < 1e-15);
        assert_eq!(esjd(&[snip(&[1.0, 1.0, 1.0], &[0.0; 3])], &f), 0.0);
    }

    #[test]
    fn rao_blackwell_degenerate_weights() {
        let s = vec![snip(&[1.0, 2.0], &[0.0, f64::NEG_INFINITY]), snip(&[3.0, 4.0], &[f64::NEG_INFINITY; 2])];
        let d = rao_blackwell_oracle(&s, &|z| z.x[0]).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn relative_efficiency_hand_computed() {
        let l3 = 3f64.ln();
        let s = vec![snip(&[0.0, 1.0], &[0.0, l3]), snip(&[0.0, 1.0], &[0.0, l3])];
        let re = relative_efficiency(&s);
        // r = (0.5, 1.5): E[(Σr)²] = 4, Σ_k E[r_k²] = 2.5, E[(r_0 + r_T)²] = 4, K = 2
        assert!((re.re0 - 4.0).abs() < 1e-12);
        assert!((re.re1 - 4.0).abs() < 1e-12);
        assert!((re.re2 - 1.0).abs() < 1e-12);
        assert!((bound_ess(&s) - 1.0).abs() < 1e-12);
    }
}
