//! One-step maps and snippet construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{exact_gaussian_flow, GaussianTarget};
use crate::phase::{sanitize, Constraint, PhaseState, TemperedTarget, VelocityLaw};
use crate::rng::RandomStream;

/// A trajectory point with whatever the integrator cached at it.
#[derive(Clone, Debug)]
pub struct Point {
    pub z: PhaseState,
    /// `log π(x; γ)` when the integrator already computed it.
    pub log_pi: Option<f64>,
    /// `∇ log π(x; γ)` for gradient-based integrators.
    pub grad: Option<Vec<f64>>,
}

impl Point {
    pub fn bare(z: PhaseState) -> Self {
        Point { z, log_pi: None, grad: None }
    }
}

/// Deterministic one-step map `ψ_ε`.
pub trait Integrator: Send + Sync {
    fn name(&self) -> &'static str;

    fn is_volume_preserving(&self) -> bool {
        true
    }

    /// Prepare a trajectory start (computes caches such as the gradient).
    fn start(&self, z: PhaseState) -> Point {
        Point::bare(z)
    }

    fn step(&self, eps: f64, p: &Point) -> Point;

    /// Uncached convenience: one step from a bare state.
    fn apply(&self, eps: f64, z: &PhaseState) -> PhaseState {
        self.step(eps, &self.start(z.clone())).z
    }
}

/// Single leapfrog step with an explicit `∇U` accessor (two gradient calls).
pub fn leapfrog_step(grad_u: &dyn Fn(&[f64]) -> Vec<f64>, eps: f64, z: &PhaseState) -> PhaseState {
    let g0 = grad_u(&z.x);
    let vh: Vec<f64> = z.v.iter().zip(&g0).map(|(v, g)| v - 0.5 * eps * g).collect();
    let x: Vec<f64> = z.x.iter().zip(&vh).map(|(x, v)| x + eps * v).collect();
    let g1 = grad_u(&x);
    let v = vh.iter().zip(&g1).map(|(v, g)| v - 0.5 * eps * g).collect();
    PhaseState { x, v }
}

/// Leapfrog on `U = -log π(·; γ)` with the end-point gradient cached.
pub struct Leapfrog<'a> {
    pub target: &'a dyn TemperedTarget,
    pub gamma: f64,
}

impl Leapfrog<'_> {
    fn eval(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; x.len()];
        if !x.iter().all(|a| a.is_finite()) {
            g.fill(f64::NAN);
            return (f64::NEG_INFINITY, g);
        }
        let lp = self.target.log_density_and_grad(x, self.gamma, &mut g);
        (lp, g)
    }
}

impl Integrator for Leapfrog<'_> {
    fn name(&self) -> &'static str {
        "leapfrog"
    }

    fn start(&self, z: PhaseState) -> Point {
        let (lp, g) = self.eval(&z.x);
        Point { z, log_pi: Some(lp), grad: Some(g) }
    }

    fn step(&self, eps: f64, p: &Point) -> Point {
        let g0 = match &p.grad {
            Some(g) => g.clone(),
            None => self.eval(&p.z.x).1,
        };
        let h = 0.5 * eps;
        let vh: Vec<f64> = p.z.v.iter().zip(&g0).map(|(v, g)| v + h * g).collect();
        let x: Vec<f64> = p.z.x.iter().zip(&vh).map(|(x, v)| x + eps * v).collect();
        let (lp, g1) = self.eval(&x);
        let v = vh.iter().zip(&g1).map(|(v, g)| v + h * g).collect();
        Point { z: PhaseState { x, v }, log_pi: Some(lp), grad: Some(g1) }
    }
}

/// Exact Hamiltonian flow of a Gaussian, used as an oracle integrator.
pub struct ExactFlow {
    pub target: GaussianTarget,
}

impl Integrator for ExactFlow {
    fn name(&self) -> &'static str {
        "exact_flow"
    }

    fn step(&self, eps: f64, p: &Point) -> Point {
        Point::bare(exact_gaussian_flow(&self.target, eps, &p.z))
    }
}

fn bounce(constraint: &dyn Constraint, eps: f64, z: &PhaseState, snug: bool) -> PhaseState {
    let xt: Vec<f64> = z.x.iter().zip(&z.v).map(|(x, v)| x + eps * v).collect();
    let mut g = vec![0.0; xt.len()];
    constraint.grad(&xt, &mut g);
    let norm = g.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm == 0.0 {
        let x = xt.iter().zip(&z.v).map(|(x, v)| x + eps * v).collect();
        return PhaseState { x, v: z.v.clone() };
    }
    let dot: f64 = z.v.iter().zip(&g).map(|(v, n)| v * n / norm).sum();
    let v: Vec<f64> =
        z.v.iter()
            .zip(&g)
            .map(|(v, n)| {
                let r = v - 2.0 * dot * n / norm;
                if snug {
                    -r
                } else {
                    r
                }
            })
            .collect();
    let x = xt.iter().zip(&v).map(|(x, v)| x + eps * v).collect();
    PhaseState { x, v }
}

/// Drift, reflect the velocity in the constraint normal, drift.
pub fn thug_step(constraint: &dyn Constraint, eps: f64, z: &PhaseState) -> PhaseState {
    bounce(constraint, eps, z, false)
}

/// Drift, negated reflection (keeps the normal component, flips the tangential one), drift.
pub fn snug_step(constraint: &dyn Constraint, eps: f64, z: &PhaseState) -> PhaseState {
    bounce(constraint, eps, z, true)
}

pub struct Thug<'a> {
    pub constraint: &'a dyn Constraint,
}

impl Integrator for Thug<'_> {
    fn name(&self) -> &'static str {
        "thug"
    }
    fn step(&self, eps: f64, p: &Point) -> Point {
        Point::bare(thug_step(self.constraint, eps, &p.z))
    }
}

pub struct Snug<'a> {
    pub constraint: &'a dyn Constraint,
}

impl Integrator for Snug<'_> {
    fn name(&self) -> &'static str {
        "snug"
    }
    fn step(&self, eps: f64, p: &Point) -> Point {
        Point::bare(snug_step(self.constraint, eps, &p.z))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorKind {
    Leapfrog,
    Thug,
    Snug,
    ExactFlow,
}

/// Build the integrator of a given kind for `π(·; γ)`.
pub fn make_integrator<'a>(
    kind: IntegratorKind,
    target: &'a dyn TemperedTarget,
    gamma: f64,
) -> Result<Box<dyn Integrator + 'a>> {
    Ok(match kind {
        IntegratorKind::Leapfrog => Box::new(Leapfrog { target, gamma }),
        IntegratorKind::Thug => Box::new(Thug {
            constraint: target
                .constraint()
                .ok_or_else(|| Error::InvalidArgument("thug needs a constrained target".into()))?,
        }),
        IntegratorKind::Snug => Box::new(Snug {
            constraint: target
                .constraint()
                .ok_or_else(|| Error::InvalidArgument("snug needs a constrained target".into()))?,
        }),
        IntegratorKind::ExactFlow => Box::new(ExactFlow {
            target: target
                .gaussian_at(gamma)
                .ok_or_else(|| Error::InvalidArgument("exact flow needs a Gaussian target".into()))?,
        }),
    })
}

/// A trajectory `z_0..z_T` with its weights against the next target.
#[derive(Clone, Debug)]
pub struct Snippet {
    pub states: Vec<PhaseState>,
    /// `log μ_n(z_k)`.
    pub log_mu_next: Vec<f64>,
    /// `log μ_{n-1}(z_0)`.
    pub log_mu_prev_seed: f64,
    /// `log_mu_next[k] - log_mu_prev_seed`.
    pub log_w: Vec<f64>,
    pub epsilon: f64,
    pub label: usize,
}

impl Snippet {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Weights normalized within the snippet; `None` if all are zero.
    pub fn normalized_weights(&self) -> Option<Vec<f64>> {
        normalize_log_weights(&self.log_w)
    }
}

/// `exp(lw - max)` normalized to sum 1; `None` if no finite entry.
pub fn normalize_log_weights(lw: &[f64]) -> Option<Vec<f64>> {
    let m = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return None;
    }
    let w: Vec<f64> = lw.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = w.iter().sum();
    Some(w.into_iter().map(|a| a / s).collect())
}

/// `log Σ exp(lw)`, -inf for an empty or all -inf input.
pub fn log_sum_exp(lw: &[f64]) -> f64 {
    let m = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return f64::NEG_INFINITY;
    }
    m + lw.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

/// Grow `T` steps from `z0` and weight every state against `π(·; gamma_next) ⊗ ϖ`.
///
/// A state that turns non-finite ends the trajectory: the remaining slots
/// repeat the last finite state with weight zero.
#[allow(clippy::too_many_arguments)]
pub fn build_snippet(
    integrator: &dyn Integrator,
    epsilon: f64,
    t: usize,
    z0: PhaseState,
    target: &dyn TemperedTarget,
    gamma_next: f64,
    vel: &VelocityLaw,
    log_mu_prev_seed: f64,
    label: usize,
) -> Result<Snippet> {
    if t < 1 || !(epsilon > 0.0) {
        return Err(Error::InvalidArgument("need T >= 1 and epsilon > 0".into()));
    }
    if log_mu_prev_seed == f64::NEG_INFINITY || log_mu_prev_seed.is_nan() {
        return Err(Error::SeedOutsideSupport { index: 0 });
    }
    let log_mu = |p: &Point| -> f64 {
        if !p.z.is_finite() {
            return f64::NEG_INFINITY;
        }
        let lp = match p.log_pi {
            Some(v) => v,
            None => target.log_density(&p.z.x, gamma_next),
        };
        sanitize(lp + vel.log_density(&p.z.v))
    };
    let mut states = Vec::with_capacity(t + 1);
    let mut log_mu_next = Vec::with_capacity(t + 1);
    let mut p = integrator.start(z0);
    log_mu_next.push(log_mu(&p));
    states.push(p.z.clone());
    for _ in 0..t {
        let q = integrator.step(epsilon, &p);
        if !q.z.is_finite() {
            break;
        }
        log_mu_next.push(log_mu(&q));
        states.push(q.z.clone());
        p = q;
    }
    while states.len() < t + 1 {
        states.push(states.last().unwrap().clone());
        log_mu_next.push(f64::NEG_INFINITY);
    }
    let log_w = log_mu_next.iter().map(|l| sanitize(l - log_mu_prev_seed)).collect();
    Ok(Snippet { states, log_mu_next, log_mu_prev_seed, log_w, epsilon, label })
}

/// Draw an integrator label from mixture proportions.
pub fn mixture_select(proportions: &[f64], rng: &mut RandomStream) -> Result<usize> {
    validate_proportions(proportions)?;
    Ok(rng.categorical(proportions).expect("validated proportions"))
}

pub fn validate_proportions(proportions: &[f64]) -> Result<()> {
    if proportions.is_empty() || proportions.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidArgument("mixture proportions must be nonnegative".into()));
    }
    let s: f64 = proportions.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!("mixture proportions sum to {s}, not 1")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Ellipsoid, FlatTarget, LogisticRegressionTarget};
    use crate::phase::{log_mu, Counted};

    fn st(x: &[f64], v: &[f64]) -> PhaseState {
        PhaseState::new(x.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn free_particle_step() {
        let z = st(&[1.0, 2.0], &[0.5, -1.0]);
        let out = leapfrog_step(&|x: &[f64]| vec![0.0; x.len()], 0.1, &z);
        assert_eq!(out.x, vec![1.05, 1.9]);
        assert_eq!(out.v, z.v);
    }

    #[test]
    fn harmonic_step_by_hand() {
        let z = st(&[1.0], &[0.0]);
        let out = leapfrog_step(&|x: &[f64]| x.to_vec(), 0.1, &z);
        // v½ = -0.05, x' = 0.995, v' = -0.05 - 0.05*0.995
        assert!((out.x[0] - 0.995).abs() < 1e-15);
        assert!((out.v[0] + 0.09975).abs() < 1e-15);
        // cached integrator agrees
        let g = GaussianTarget::new(vec![1.0]).unwrap();
        let lf = Leapfrog { target: &g, gamma: 1.0 };
        let o2 = lf.apply(0.1, &z);
        assert_eq!(o2, out);
    }

    #[test]
    fn harmonic_energy_bounded() {
        let g = GaussianTarget::new(vec![1.0]).unwrap();
        let lf = Leapfrog { target: &g, gamma: 1.0 };
        let mut p = lf.start(st(&[1.0], &[0.0]));
        let h0 = g.hamiltonian(&p.z);
        for _ in 0..100 {
            p = lf.step(0.1, &p);
            assert!((g.hamiltonian(&p.z) - h0).abs() <= 0.01 * h0);
        }
    }

    #[test]
    fn chained_leapfrog_gradient_count() {
        let g = GaussianTarget::new(vec![1.0, 2.0]).unwrap();
        let c = Counted::new(&g);
        let lf = Leapfrog { target: &c, gamma: 1.0 };
        let vel = VelocityLaw::standard(2);
        let z = st(&[0.1, 0.2], &[0.3, 0.4]);
        let prev = log_mu(&g, &vel, 1.0, &z);
        build_snippet(&lf, 0.1, 25, z, &c, 1.0, &vel, prev, 0).unwrap();
        assert_eq!(c.gradient_evaluations(), 26);
    }

    #[test]
    fn thug_special_cases() {
        let e = Ellipsoid { variances: vec![1.0, 1.0], c: 1.0 };
        // x̃ = (1, 0) with tangent velocity (0, 1): pure double drift
        let z = st(&[1.0, -0.1], &[0.0, 1.0]);
        let out = thug_step(&e, 0.1, &z);
        assert_eq!(out.x, vec![1.0, 0.1]);
        assert_eq!(out.v, z.v);
        // velocity along the normal at x̃ = (1.1, 0)
        let z2 = st(&[1.0, 0.0], &[1.0, 0.0]);
        let o2 = thug_step(&e, 0.1, &z2);
        assert!((o2.x[0] - 1.0).abs() < 1e-15 && o2.x[1].abs() < 1e-15);
        assert!((o2.v[0] + 1.0).abs() < 1e-15);
        // degenerate gradient at the origin
        let z3 = st(&[-0.1, 0.0], &[1.0, 0.0]);
        let o3 = snug_step(&e, 0.1, &z3);
        assert!((o3.x[0] - 0.1).abs() < 1e-15 && o3.v == z3.v);
    }

    #[test]
    fn divergent_snippet_has_zero_weight_tail() {
        let t = LogisticRegressionTarget::new(
            vec![vec![3.0, -1.0], vec![-2.0, 4.0], vec![1.0, 1.0]],
            vec![1.0, -1.0, 1.0],
            vec![0.01, 0.01, 0.01],
        )
        .unwrap();
        let vel = VelocityLaw::standard(3);
        let lf = Leapfrog { target: &t, gamma: 1.0 };
        let z = st(&[0.01, 0.02, -0.01], &[1.0, 1.0, 1.0]);
        let prev = log_mu(&t, &vel, 0.0, &z);
        let s = build_snippet(&lf, 50.0, 30, z, &t, 1.0, &vel, prev, 0).unwrap();
        assert_eq!(s.len(), 31);
        assert!(s.log_w.contains(&f64::NEG_INFINITY));
        let first_bad = s.log_w.iter().position(|w| *w == f64::NEG_INFINITY).unwrap();
        assert!(s.log_w[first_bad..].iter().all(|w| *w == f64::NEG_INFINITY));
        let w = s.normalized_weights().unwrap();
        assert!(w.iter().all(|a| a.is_finite()));
        assert!(s.states.iter().all(|z| z.is_finite()));
    }

    #[test]
    fn seed_outside_support_is_error() {
        let t = FlatTarget { dim: 1 };
        let vel = VelocityLaw::standard(1);
        let lf = Leapfrog { target: &t, gamma: 0.0 };
        let r = build_snippet(&lf, 0.1, 2, st(&[0.0], &[0.0]), &t, 0.0, &vel, f64::NEG_INFINITY, 0);
        assert!(matches!(r, Err(Error::SeedOutsideSupport { .. })));
    }

    #[test]
    fn mixture_select_cases() {
        let mut rng = RandomStream::new(8);
        for _ in 0..100 {
            assert_eq!(mixture_select(&[1.0, 0.0], &mut rng).unwrap(), 0);
        }
        assert!(mixture_select(&[1.2, -0.2], &mut rng).is_err());
        assert!(mixture_select(&[0.5, 0.4], &mut rng).is_err());
        let n = 100_000;
        let mut r2 = RandomStream::new(9);
        let c = (0..n).filter(|_| mixture_select(&[0.8, 0.2], &mut r2).unwrap() == 0).count();
        let sd = (n as f64 * 0.8 * 0.2).sqrt();
        assert!((c as f64 - 0.8 * n as f64).abs() < 3.0 * sd);
        let a: Vec<usize> = {
            let mut r = RandomStream::new(10);
            (0..50).map(|_| mixture_select(&[0.5, 0.5], &mut r).unwrap()).collect()
        };
        let b: Vec<usize> = {
            let mut r = RandomStream::new(10);
            (0..50).map(|_| mixture_select(&[0.5, 0.5], &mut r).unwrap()).collect()
        };
        assert_eq!(a, b);
    }
}
