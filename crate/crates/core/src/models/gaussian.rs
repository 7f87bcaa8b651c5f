use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::phase::{PhaseState, TemperedTarget};
use crate::rng::RandomStream;

fn check_variances(v: &[f64]) -> Result<()> {
    if v.is_empty() || !v.iter().all(|s| s.is_finite() && *s > 0.0) {
        return Err(Error::InvalidArgument("variances must be finite and positive".into()));
    }
    Ok(())
}

fn log_normal(x: &[f64], variances: &[f64]) -> f64 {
    x.iter().zip(variances).map(|(a, s2)| -0.5 * a * a / s2 - 0.5 * (2.0 * PI * s2).ln()).sum()
}

/// `N(0, diag(σ²))`, constant along the tempering path.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianTarget {
    variances: Vec<f64>,
}

impl GaussianTarget {
    pub fn new(variances: Vec<f64>) -> Result<Self> {
        check_variances(&variances)?;
        Ok(GaussianTarget { variances })
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// `H(z) = Σ x²/(2σ²) + |v|²/2`.
    pub fn hamiltonian(&self, z: &PhaseState) -> f64 {
        let pot: f64 = z.x.iter().zip(&self.variances).map(|(a, s2)| 0.5 * a * a / s2).sum();
        pot + 0.5 * z.v.iter().map(|a| a * a).sum::<f64>()
    }
}

/// Exact Hamiltonian flow for time `t` under `H(z) = Σ x²/(2σ²) + |v|²/2`.
pub fn exact_gaussian_flow(target: &GaussianTarget, t: f64, z: &PhaseState) -> PhaseState {
    let d = z.dim();
    let mut x = Vec::with_capacity(d);
    let mut v = Vec::with_capacity(d);
    for i in 0..d {
        let s = target.variances[i].sqrt();
        let (sn, cs) = (t / s).sin_cos();
        x.push(z.x[i] * cs + s * z.v[i] * sn);
        v.push(z.v[i] * cs - z.x[i] / s * sn);
    }
    PhaseState { x, v }
}

impl TemperedTarget for GaussianTarget {
    fn dim(&self) -> usize {
        self.variances.len()
    }
    fn log_prior(&self, x: &[f64]) -> f64 {
        log_normal(x, &self.variances)
    }
    fn log_likelihood(&self, _x: &[f64]) -> f64 {
        0.0
    }
    fn grad_log_prior(&self, x: &[f64], out: &mut [f64]) {
        for ((o, a), s2) in out.iter_mut().zip(x).zip(&self.variances) {
            *o = -a / s2;
        }
    }
    fn grad_log_likelihood(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn grad_log_density(&self, x: &[f64], _gamma: f64, out: &mut [f64]) {
        self.grad_log_prior(x, out)
    }
    fn sample_prior(&self, rng: &mut RandomStream) -> Result<Vec<f64>> {
        Ok(self.variances.iter().map(|s2| s2.sqrt() * rng.normal()).collect())
    }
    fn gaussian_at(&self, _gamma: f64) -> Option<GaussianTarget> {
        Some(self.clone())
    }
}

/// Gaussian prior `N(0, diag(s0²))` tempered by the Gaussian-shaped likelihood
/// `exp(-Σ x²/(2 sl²))`. The evidence is available in closed form.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPath {
    prior_variances: Vec<f64>,
    likelihood_variances: Vec<f64>,
}

impl GaussianPath {
    pub fn new(prior_variances: Vec<f64>, likelihood_variances: Vec<f64>) -> Result<Self> {
        check_variances(&prior_variances)?;
        check_variances(&likelihood_variances)?;
        if prior_variances.len() != likelihood_variances.len() {
            return Err(Error::Dimension { expected: prior_variances.len(), got: likelihood_variances.len() });
        }
        Ok(GaussianPath { prior_variances, likelihood_variances })
    }

    /// `log Z(γ) = log ∫ N(x; 0, s0²) exp(-γ x²/(2 sl²)) dx`.
    pub fn log_evidence(&self, gamma: f64) -> f64 {
        self.prior_variances
            .iter()
            .zip(&self.likelihood_variances)
            .map(|(s0, sl)| -0.5 * (1.0 + gamma * s0 / sl).ln())
            .sum()
    }
}

impl TemperedTarget for GaussianPath {
    fn dim(&self) -> usize {
        self.prior_variances.len()
    }
    fn log_prior(&self, x: &[f64]) -> f64 {
        log_normal(x, &self.prior_variances)
    }
    fn log_likelihood(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.likelihood_variances).map(|(a, s2)| -0.5 * a * a / s2).sum()
    }
    fn grad_log_prior(&self, x: &[f64], out: &mut [f64]) {
        for ((o, a), s2) in out.iter_mut().zip(x).zip(&self.prior_variances) {
            *o = -a / s2;
        }
    }
    fn grad_log_likelihood(&self, x: &[f64], out: &mut [f64]) {
        for ((o, a), s2) in out.iter_mut().zip(x).zip(&self.likelihood_variances) {
            *o = -a / s2;
        }
    }
    fn grad_log_density(&self, x: &[f64], gamma: f64, out: &mut [f64]) {
        for i in 0..x.len() {
            out[i] = -x[i] / self.prior_variances[i] - gamma * x[i] / self.likelihood_variances[i];
        }
    }
    fn sample_prior(&self, rng: &mut RandomStream) -> Result<Vec<f64>> {
        Ok(self.prior_variances.iter().map(|s2| s2.sqrt() * rng.normal()).collect())
    }
    fn gaussian_at(&self, gamma: f64) -> Option<GaussianTarget> {
        let v = self
            .prior_variances
            .iter()
            .zip(&self.likelihood_variances)
            .map(|(s0, sl)| 1.0 / (1.0 / s0 + gamma / sl))
            .collect();
        GaussianTarget::new(v).ok()
    }
}

/// Zero-gradient target (free particle); every position has density 1.
#[derive(Clone, Copy, Debug)]
pub struct FlatTarget {
    pub dim: usize,
}

impl TemperedTarget for FlatTarget {
    fn dim(&self) -> usize {
        self.dim
    }
    fn log_prior(&self, _x: &[f64]) -> f64 {
        0.0
    }
    fn log_likelihood(&self, _x: &[f64]) -> f64 {
        0.0
    }
    fn grad_log_prior(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0)
    }
    fn grad_log_likelihood(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0)
    }
    fn sample_prior(&self, _rng: &mut RandomStream) -> Result<Vec<f64>> {
        Err(Error::InvalidArgument("the flat target has no proper prior".into()))
    }
}
