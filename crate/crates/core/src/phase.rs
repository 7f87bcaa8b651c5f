//! Phase-space points, the tempered target abstraction and the velocity law.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::models::GaussianTarget;
use crate::rng::RandomStream;

/// A point `z = (x, v)` in position-velocity space.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseState {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl PhaseState {
    pub fn new(x: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if x.is_empty() || x.len() != v.len() {
            return Err(Error::Dimension { expected: x.len().max(1), got: v.len() });
        }
        if !x.iter().chain(&v).all(|a| a.is_finite()) {
            return Err(Error::InvalidArgument("phase state has non-finite entries".into()));
        }
        Ok(PhaseState { x, v })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.v).all(|a| a.is_finite())
    }

    /// The velocity flip `σ(x, v) = (x, -v)`.
    pub fn flipped(&self) -> PhaseState {
        PhaseState { x: self.x.clone(), v: self.v.iter().map(|a| -a).collect() }
    }
}

/// Level-set function used by the bounce integrators.
pub trait Constraint: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn grad(&self, x: &[f64], out: &mut [f64]);
}

/// A path of unnormalized densities `log π(x; γ)`, `γ ∈ [0, 1]`.
///
/// The provided methods implement the geometric path
/// `γ·loglik(x) + logprior(x)`; targets on other paths override them and
/// report `is_linear_path() == false`.
pub trait TemperedTarget: Send + Sync {
    fn dim(&self) -> usize;
    fn log_prior(&self, x: &[f64]) -> f64;
    fn log_likelihood(&self, x: &[f64]) -> f64;
    fn grad_log_prior(&self, x: &[f64], out: &mut [f64]);
    fn grad_log_likelihood(&self, x: &[f64], out: &mut [f64]);

    /// Draw from `π(·; 0)`.
    fn sample_prior(&self, rng: &mut RandomStream) -> Result<Vec<f64>>;

    fn log_density(&self, x: &[f64], gamma: f64) -> f64 {
        let p = self.log_prior(x);
        let v = if gamma == 0.0 { p } else { gamma * self.log_likelihood(x) + p };
        sanitize(v)
    }

    fn grad_log_density(&self, x: &[f64], gamma: f64, out: &mut [f64]) {
        self.grad_log_prior(x, out);
        if gamma != 0.0 {
            let mut g = vec![0.0; out.len()];
            self.grad_log_likelihood(x, &mut g);
            for (o, gi) in out.iter_mut().zip(&g) {
                *o += gamma * gi;
            }
        }
    }

    /// Log density and its gradient in one pass.
    fn log_density_and_grad(&self, x: &[f64], gamma: f64, out: &mut [f64]) -> f64 {
        self.grad_log_density(x, gamma, out);
        self.log_density(x, gamma)
    }

    /// `log π(x; to) - log π(x; from)` for a point in the support at `from`.
    fn log_increment(&self, x: &[f64], from: f64, to: f64) -> f64 {
        sanitize((to - from) * self.log_likelihood(x))
    }

    /// Whether `log_increment` is linear in `to - from` with slope `log_likelihood`.
    fn is_linear_path(&self) -> bool {
        true
    }

    fn constraint(&self) -> Option<&dyn Constraint> {
        None
    }

    /// The Gaussian `π(·; γ)` when it has one, enabling the exact flow.
    fn gaussian_at(&self, _gamma: f64) -> Option<GaussianTarget> {
        None
    }
}

/// Map NaN and +inf to -inf so that bad points get zero weight.
#[inline]
pub fn sanitize(v: f64) -> f64 {
    if v.is_nan() || v == f64::INFINITY {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Standard normal velocity law `N(0, I_d)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VelocityLaw {
    dim: usize,
}

impl VelocityLaw {
    pub fn standard(dim: usize) -> Self {
        VelocityLaw { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn log_density(&self, v: &[f64]) -> f64 {
        let sq: f64 = v.iter().map(|a| a * a).sum();
        sanitize(-0.5 * sq - 0.5 * self.dim as f64 * (2.0 * PI).ln())
    }

    pub fn sample(&self, rng: &mut RandomStream) -> Vec<f64> {
        rng.normal_vec(self.dim)
    }
}

/// `log μ(z; γ) = log π(x; γ) + log ϖ(v)`, or -inf when anything is non-finite.
pub fn log_mu(target: &dyn TemperedTarget, vel: &VelocityLaw, gamma: f64, z: &PhaseState) -> f64 {
    assert_eq!(z.x.len(), target.dim(), "position dimension mismatch");
    assert_eq!(z.v.len(), vel.dim(), "velocity dimension mismatch");
    if !z.is_finite() {
        return f64::NEG_INFINITY;
    }
    sanitize(target.log_density(&z.x, gamma) + vel.log_density(&z.v))
}

/// `∇_x log π(x; γ)`; all NaN when `x` is not finite.
pub fn grad_log_mu_x(target: &dyn TemperedTarget, gamma: f64, x: &[f64]) -> Vec<f64> {
    if !x.iter().all(|a| a.is_finite()) {
        return vec![f64::NAN; x.len()];
    }
    let mut g = vec![0.0; x.len()];
    target.grad_log_density(x, gamma, &mut g);
    g
}

/// Wraps a target and counts gradient evaluations, including constraint
/// gradients taken by THUG/SNUG.
pub struct Counted<'a> {
    inner: &'a dyn TemperedTarget,
    grads: Arc<AtomicU64>,
    constraint: Option<CountedConstraint<'a>>,
}

struct CountedConstraint<'a> {
    inner: &'a dyn Constraint,
    grads: Arc<AtomicU64>,
}

impl Constraint for CountedConstraint<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.inner.value(x)
    }
    fn grad(&self, x: &[f64], out: &mut [f64]) {
        self.grads.fetch_add(1, Ordering::Relaxed);
        self.inner.grad(x, out)
    }
}

impl<'a> Counted<'a> {
    pub fn new(inner: &'a dyn TemperedTarget) -> Self {
        let grads = Arc::new(AtomicU64::new(0));
        let constraint = inner.constraint().map(|c| CountedConstraint { inner: c, grads: grads.clone() });
        Counted { inner, grads, constraint }
    }

    pub fn gradient_evaluations(&self) -> u64 {
        self.grads.load(Ordering::Relaxed)
    }

    fn tick(&self) {
        self.grads.fetch_add(1, Ordering::Relaxed);
    }
}

impl TemperedTarget for Counted<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn log_prior(&self, x: &[f64]) -> f64 {
        self.inner.log_prior(x)
    }
    fn log_likelihood(&self, x: &[f64]) -> f64 {
        self.inner.log_likelihood(x)
    }
    fn grad_log_prior(&self, x: &[f64], out: &mut [f64]) {
        self.inner.grad_log_prior(x, out)
    }
    fn grad_log_likelihood(&self, x: &[f64], out: &mut [f64]) {
        self.inner.grad_log_likelihood(x, out)
    }
    fn sample_prior(&self, rng: &mut RandomStream) -> Result<Vec<f64>> {
        self.inner.sample_prior(rng)
    }
    fn log_density(&self, x: &[f64], gamma: f64) -> f64 {
        self.inner.log_density(x, gamma)
    }
    fn grad_log_density(&self, x: &[f64], gamma: f64, out: &mut [f64]) {
        self.tick();
        self.inner.grad_log_density(x, gamma, out)
    }
    fn log_density_and_grad(&self, x: &[f64], gamma: f64, out: &mut [f64]) -> f64 {
        self.tick();
        self.inner.log_density_and_grad(x, gamma, out)
    }
    fn log_increment(&self, x: &[f64], from: f64, to: f64) -> f64 {
        self.inner.log_increment(x, from, to)
    }
    fn is_linear_path(&self) -> bool {
        self.inner.is_linear_path()
    }
    fn constraint(&self) -> Option<&dyn Constraint> {
        self.constraint.as_ref().map(|c| c as &dyn Constraint)
    }
    fn gaussian_at(&self, gamma: f64) -> Option<GaussianTarget> {
        self.inner.gaussian_at(gamma)
    }
}
