//! Tempering schedule, stepsize distribution and trajectory length tuning.

use std::f64::consts::PI;

use rand_distr::{Distribution, InverseGaussian};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrators::{Integrator, Snippet};
use crate::phase::{PhaseState, TemperedTarget};
use crate::rng::RandomStream;
use crate::smc::Particle;

/// Inverse Gaussian law of stepsizes with mean `theta` and skewness `s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpsilonDistribution {
    pub theta: f64,
    pub s: f64,
}

impl EpsilonDistribution {
    pub fn new(theta: f64, s: f64) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite() && s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidArgument("theta and s must be positive".into()));
        }
        Ok(EpsilonDistribution { theta, s })
    }

    /// Shape parameter `λ = 9θ/s²`.
    pub fn shape(&self) -> f64 {
        9.0 * self.theta / (self.s * self.s)
    }

    pub fn log_density(&self, eps: f64) -> f64 {
        if !(eps > 0.0) {
            return f64::NEG_INFINITY;
        }
        let (t, s2) = (self.theta, self.s * self.s);
        0.5 * (9.0 * t / (2.0 * PI * eps.powi(3) * s2)).ln() - 9.0 * t * (eps - t).powi(2) / (2.0 * t * t * eps * s2)
    }

    pub fn density(&self, eps: f64) -> f64 {
        self.log_density(eps).exp()
    }

    pub fn sample(&self, rng: &mut RandomStream) -> f64 {
        sample_epsilon(self.theta, self.s, rng)
    }
}

/// One inverse Gaussian draw, clamped to `[1e-12, 1e12]`.
pub fn sample_epsilon(theta: f64, s: f64, rng: &mut RandomStream) -> f64 {
    let ig = InverseGaussian::new(theta, 9.0 * theta / (s * s)).expect("positive parameters");
    ig.sample(rng).clamp(1e-12, 1e12)
}

/// ESS of `exp(lw)` as a fraction-free count `(Σw)²/Σw²`; 0 if all zero.
pub fn ess_of_log_weights(lw: &[f64]) -> f64 {
    let m = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return 0.0;
    }
    let (mut s1, mut s2) = (0.0, 0.0);
    for l in lw {
        let w = (l - m).exp();
        s1 += w;
        s2 += w * w;
    }
    s1 * s1 / s2
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaChoice {
    pub gamma: f64,
    /// Seed ESS `N/χ̂(γ)` at the chosen value.
    pub ess: f64,
}

/// Largest `γ ≤ 1` whose seed ESS stays above `alpha·N`, by bisection.
///
/// `log_increment(γ)` must return the per-seed `log π(x; γ) - log π(x; γ_n)`.
pub fn next_gamma_with(
    log_increment: &dyn Fn(f64) -> Vec<f64>,
    n: usize,
    gamma_n: f64,
    alpha: f64,
    tol: f64,
) -> Result<GammaChoice> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument("ess target ratio must lie in (0, 1)".into()));
    }
    let ess = |g: f64| -> f64 {
        if g == gamma_n {
            n as f64
        } else {
            ess_of_log_weights(&log_increment(g))
        }
    };
    let target = alpha * n as f64;
    let e1 = ess(1.0);
    if e1 >= target {
        return Ok(GammaChoice { gamma: 1.0, ess: e1 });
    }
    let (mut lo, mut hi) = (gamma_n, 1.0);
    let mut e_lo = n as f64;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let e = ess(mid);
        if e >= target {
            lo = mid;
            e_lo = e;
        } else {
            hi = mid;
        }
    }
    Ok(GammaChoice { gamma: lo, ess: e_lo })
}

/// Next inverse temperature from the loglik values of the seeds (geometric path).
pub fn next_gamma_linear(logliks: &[f64], gamma_n: f64, alpha: f64, tol: f64) -> Result<GammaChoice> {
    let n = logliks.len();
    let mut finite: Vec<f64> = logliks.iter().cloned().filter(|l| l.is_finite()).collect();
    finite.sort_by(|a, b| a.partial_cmp(b).unwrap());
    finite.dedup();
    if finite.len() < 2 {
        return Ok(GammaChoice { gamma: 1.0, ess: n as f64 });
    }
    let f = |g: f64| -> Vec<f64> {
        logliks
            .iter()
            .map(|l| {
                let v = (g - gamma_n) * l;
                if v.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    v
                }
            })
            .collect()
    };
    next_gamma_with(&f, n, gamma_n, alpha, tol)
}

/// Next inverse temperature for seeds at positions `xs` under `target`.
pub fn next_gamma(
    target: &dyn TemperedTarget,
    xs: &[&[f64]],
    gamma_n: f64,
    alpha: f64,
    tol: f64,
) -> Result<GammaChoice> {
    if target.is_linear_path() {
        let ll: Vec<f64> = xs.par_iter().map(|x| target.log_likelihood(x)).collect();
        next_gamma_linear(&ll, gamma_n, alpha, tol)
    } else {
        let f = |g: f64| -> Vec<f64> { xs.par_iter().map(|x| target.log_increment(x, gamma_n, g)).collect() };
        next_gamma_with(&f, xs.len(), gamma_n, alpha, tol)
    }
}

/// Weighted variance of positions along a snippet (normalized snippet weights).
pub fn snippet_variance_criterion(snippet: &Snippet) -> f64 {
    let Some(p) = snippet.normalized_weights() else {
        return 0.0;
    };
    let d = snippet.states[0].dim();
    let mut mean = vec![0.0; d];
    for (pk, z) in p.iter().zip(&snippet.states) {
        for (m, x) in mean.iter_mut().zip(&z.x) {
            *m += pk * x;
        }
    }
    p.iter()
        .zip(&snippet.states)
        .map(|(pk, z)| pk * z.x.iter().zip(&mean).map(|(a, m)| (a - m) * (a - m)).sum::<f64>())
        .sum()
}

/// Closed-form inverse Gaussian fit to `(ε_i, v_i)` pairs.
///
/// Returns `previous` when every `v_i` is zero.
pub fn fit_epsilon_distribution(pairs: &[(f64, f64)], s: f64, previous: f64) -> Result<f64> {
    if pairs.iter().any(|(e, _)| !(*e > 0.0)) {
        return Err(Error::InvalidArgument("stepsizes must be positive".into()));
    }
    if pairs.iter().any(|(_, v)| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("variance criteria must be finite and nonnegative".into()));
    }
    let sv: f64 = pairs.iter().map(|(_, v)| v).sum();
    if !(sv > 0.0) {
        return Ok(previous);
    }
    let m1 = pairs.iter().map(|(e, v)| v * e).sum::<f64>() / sv;
    let mm1 = pairs.iter().map(|(e, v)| v / e).sum::<f64>() / sv;
    let a = s * s / 9.0;
    Ok((a + (a * a + 4.0 * mm1 * m1).sqrt()) / (2.0 * mm1))
}

/// Coupled-trajectory contraction curves and their binned average.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ContractionData {
    pub pair_epsilon: Vec<f64>,
    /// `kappa[j][m-1]` for `m = 1..=T_n` (shorter if a pair diverged).
    pub kappa: Vec<Vec<f64>>,
    pub bin_centers: Vec<f64>,
    /// Mean κ per bin; `None` for empty bins.
    pub bin_means: Vec<Option<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TauEstimate {
    pub tau: f64,
    pub t_next: usize,
    pub data: ContractionData,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `κ_m = m⁻¹ Σ_{k=0}^{m} |x¹_k - x²_k| / |x¹_0 - x²_0|` for two coupled trajectories.
pub fn contraction_curve(
    integrator: &dyn Integrator,
    eps: f64,
    t: usize,
    x1: &[f64],
    x2: &[f64],
    v: &[f64],
) -> Vec<f64> {
    let d0 = distance(x1, x2);
    let mut p1 = integrator.start(PhaseState { x: x1.to_vec(), v: v.to_vec() });
    let mut p2 = integrator.start(PhaseState { x: x2.to_vec(), v: v.to_vec() });
    let mut acc = 1.0;
    let mut out = Vec::with_capacity(t);
    for m in 1..=t {
        p1 = integrator.step(eps, &p1);
        p2 = integrator.step(eps, &p2);
        let r = distance(&p1.z.x, &p2.z.x) / d0;
        if !r.is_finite() {
            break;
        }
        acc += r;
        out.push(acc / m as f64);
    }
    out
}

/// Bin `(τ, κ)` points into `bins` equal-width bins on `[0, max τ]`.
pub fn bin_contractions(points: &[(f64, f64)], bins: usize) -> (Vec<f64>, Vec<Option<f64>>) {
    let tmax = points.iter().map(|p| p.0).fold(0.0, f64::max);
    let width = tmax / bins as f64;
    let mut sum = vec![0.0; bins];
    let mut cnt = vec![0usize; bins];
    for &(tau, k) in points {
        let i = ((tau / width) as usize).min(bins - 1);
        sum[i] += k;
        cnt[i] += 1;
    }
    let centers = (0..bins).map(|i| (i as f64 + 0.5) * width).collect();
    let means = sum.iter().zip(&cnt).map(|(s, &c)| (c > 0).then(|| s / c as f64)).collect();
    (centers, means)
}

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Integration time from coupled pairs of refreshed particles.
///
/// `integrators[label]` is the map used by a particle with that label.
/// Returns `None` when no pair has distinct positions.
pub fn estimate_tau(
    particles: &[Particle],
    integrators: &[Box<dyn Integrator + '_>],
    t_n: usize,
    t_max: usize,
    bins: usize,
    rng: &mut RandomStream,
) -> Result<Option<TauEstimate>> {
    let n = particles.len();
    if n < 4 || t_n < 1 || t_max < 1 || bins < 1 {
        return Err(Error::InvalidArgument("estimate_tau needs N >= 4, T >= 1, bins >= 1".into()));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.index(i + 1));
    }
    let pairs: Vec<(usize, usize)> = (0..n / 2)
        .map(|j| (perm[2 * j], perm[2 * j + 1]))
        .filter(|&(a, b)| particles[a].z.x != particles[b].z.x)
        .collect();
    if pairs.is_empty() {
        return Ok(None);
    }
    let curves: Vec<Vec<f64>> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let pa = &particles[a];
            contraction_curve(&*integrators[pa.label], pa.epsilon, t_n, &pa.z.x, &particles[b].z.x, &pa.z.v)
        })
        .collect();
    let pair_epsilon: Vec<f64> = pairs.iter().map(|&(a, _)| particles[a].epsilon).collect();
    let points: Vec<(f64, f64)> = curves
        .iter()
        .zip(&pair_epsilon)
        .flat_map(|(c, e)| c.iter().enumerate().map(move |(i, k)| ((i + 1) as f64 * e, *k)))
        .collect();
    if points.is_empty() {
        return Ok(None);
    }
    let (bin_centers, bin_means) = bin_contractions(&points, bins);
    let mut best: Option<(f64, f64)> = None;
    for (c, m) in bin_centers.iter().zip(&bin_means) {
        if let Some(m) = m {
            if best.is_none_or(|(_, bm)| *m < bm) {
                best = Some((*c, *m));
            }
        }
    }
    let tau = best.expect("non-empty points").0;
    let eps: Vec<f64> = particles.iter().map(|p| p.epsilon).collect();
    let t_next = ((tau / median(&eps)).ceil() as usize).clamp(1, t_max);
    Ok(Some(TauEstimate { tau, t_next, data: ContractionData { pair_epsilon, kappa: curves, bin_centers, bin_means } }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrators::ExactFlow;
    use crate::models::GaussianTarget;

    #[test]
    fn ig_density_integrates_to_one() {
        for (theta, s) in [(0.2, 3.0), (1.0, 1.0), (0.05, 2.0)] {
            let d = EpsilonDistribution::new(theta, s).unwrap();
            // substitution ε = e^u, Simpson's rule on u
            let (a, b, n) = (-40.0f64, 8.0f64, 200_000usize);
            let h = (b - a) / n as f64;
            let f = |u: f64| d.density(u.exp()) * u.exp();
            let mut acc = f(a) + f(b);
            for i in 1..n {
                acc += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            assert!((acc * h / 3.0 - 1.0).abs() < 1e-6, "{theta} {s}");
        }
    }

    #[test]
    fn ig_sampling_moments() {
        let mut rng = RandomStream::new(11);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_epsilon(0.2, 3.0, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // var = θ²s²/9 = 0.04; fourth central moment of IG = 15μ⁷/λ³ + 3μ⁶/λ²
        let lam: f64 = 9.0 * 0.2 / 9.0;
        assert!((mean - 0.2).abs() < 3.0 * (0.04 / n as f64).sqrt());
        let mu4 = 15.0 * 0.2f64.powi(7) / lam.powi(3) + 3.0 * 0.2f64.powi(6) / lam.powi(2);
        let se_var = ((mu4 - 0.04 * 0.04) / n as f64).sqrt();
        assert!((var - 0.04).abs() < 3.0 * se_var, "{var} {se_var}");
        let a = sample_epsilon(0.3, 3.0, &mut RandomStream::new(5));
        let b = sample_epsilon(0.3, 3.0, &mut RandomStream::new(5));
        assert_eq!(a, b);
    }

    #[test]
    fn point_mass_fit() {
        let pairs = vec![(0.07, 1.0), (0.07, 2.5), (0.07, 0.1)];
        let th = fit_epsilon_distribution(&pairs, 3.0, 1.0).unwrap();
        assert!((th - 0.07 * (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-12);
        let conc = vec![(0.07, 1.0), (0.9, 0.0), (0.01, 0.0)];
        assert!((fit_epsilon_distribution(&conc, 3.0, 1.0).unwrap() - th).abs() < 1e-15);
        assert_eq!(fit_epsilon_distribution(&[(0.1, 0.0)], 3.0, 0.42).unwrap(), 0.42);
        assert!(fit_epsilon_distribution(&[(0.0, 1.0)], 3.0, 0.42).is_err());
    }

    #[test]
    fn fit_scale_equivariant() {
        let mut rng = RandomStream::new(12);
        let pairs: Vec<(f64, f64)> = (0..30).map(|_| (0.01 + rng.uniform(), rng.uniform())).collect();
        let scaled: Vec<(f64, f64)> = pairs.iter().map(|(e, v)| (3.7 * e, *v)).collect();
        let a = fit_epsilon_distribution(&pairs, 3.0, 1.0).unwrap();
        let b = fit_epsilon_distribution(&scaled, 3.0, 1.0).unwrap();
        assert!((b / a - 3.7).abs() < 1e-10);
    }

    #[test]
    fn gamma_degenerate_and_two_particle() {
        assert_eq!(next_gamma_linear(&[-2.0, -2.0, -2.0], 0.3, 0.8, 1e-8).unwrap().gamma, 1.0);
        // loglik (0, log u): ESS(γ) = (1 + u^δ)² / (1 + u^{2δ}), δ = γ - γ_n
        let u: f64 = 1e-6;
        let g = next_gamma_linear(&[0.0, u.ln()], 0.0, 0.8, 1e-10).unwrap().gamma;
        // ESS = 1.6 ⇔ r = u^δ solves 0.6 r² - 2 r + 0.6 = 0 (smaller root)
        let r = (2.0 - (4.0 - 4.0 * 0.36f64).sqrt()) / 1.2;
        let expect = r.ln() / u.ln();
        assert!((g - expect).abs() < 1e-6, "{g} {expect}");
    }

    #[test]
    fn variance_criterion_small_cases() {
        let z = |x: f64| PhaseState { x: vec![x], v: vec![0.0] };
        let s = Snippet {
            states: vec![z(0.0), z(2.0)],
            log_mu_next: vec![0.0, 0.0],
            log_mu_prev_seed: 0.0,
            log_w: vec![0.0, 0.0],
            epsilon: 0.1,
            label: 0,
        };
        assert!((snippet_variance_criterion(&s) - 1.0).abs() < 1e-15);
        let mut same = s.clone();
        same.states = vec![z(1.0), z(1.0)];
        assert_eq!(snippet_variance_criterion(&same), 0.0);
        let mut dead = s.clone();
        dead.log_w = vec![f64::NEG_INFINITY; 2];
        assert_eq!(snippet_variance_criterion(&dead), 0.0);
    }

    #[test]
    fn tau_bounds_respected() {
        let g = GaussianTarget::new(vec![1.0]).unwrap();
        let ints: Vec<Box<dyn Integrator>> = vec![Box::new(ExactFlow { target: g })];
        let mut rng = RandomStream::new(2);
        let ps: Vec<Particle> = (0..40)
            .map(|_| Particle {
                z: PhaseState { x: vec![rng.normal()], v: vec![rng.normal()] },
                epsilon: 0.05,
                label: 0,
            })
            .collect();
        let est = estimate_tau(&ps, &ints, 100, 7, 50, &mut rng).unwrap().unwrap();
        assert!(est.t_next >= 1 && est.t_next <= 7);
        let same: Vec<Particle> = ps.iter().map(|p| Particle { z: ps[0].z.clone(), ..p.clone() }).collect();
        assert!(estimate_tau(&same, &ints, 10, 7, 50, &mut rng).unwrap().is_none());
    }
}
