use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::phase::{sanitize, Constraint, TemperedTarget};
use crate::rng::RandomStream;

/// `ℓ(x) = xᵀ Σ⁻¹ x - c` with diagonal `Σ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ellipsoid {
    pub variances: Vec<f64>,
    pub c: f64,
}

impl Constraint for Ellipsoid {
    fn value(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.variances).map(|(a, s)| a * a / s).sum::<f64>() - self.c
    }

    fn grad(&self, x: &[f64], out: &mut [f64]) {
        for ((o, a), s) in out.iter_mut().zip(x).zip(&self.variances) {
            *o = 2.0 * a / s;
        }
    }
}

/// `π(x; γ) ∝ ε(γ)⁻¹ 1{|ℓ(x)| ≤ ε(γ)} N(x; 0, I)` where the tolerance
/// `ε(γ) = ε₀^{1-γ} ε₁^γ` shrinks geometrically along the path.
#[derive(Clone, Debug)]
pub struct FilamentaryTarget {
    ellipsoid: Ellipsoid,
    initial_tolerance: f64,
    final_tolerance: f64,
}

impl FilamentaryTarget {
    pub fn new(variances: Vec<f64>, c: f64, initial_tolerance: f64, final_tolerance: f64) -> Result<Self> {
        if variances.is_empty() || !variances.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::InvalidArgument("variances must be finite and positive".into()));
        }
        if !(final_tolerance > 0.0 && initial_tolerance >= final_tolerance && initial_tolerance.is_finite()) {
            return Err(Error::InvalidArgument("tolerances must satisfy 0 < final <= initial < inf".into()));
        }
        Ok(FilamentaryTarget { ellipsoid: Ellipsoid { variances, c }, initial_tolerance, final_tolerance })
    }

    pub fn ellipsoid(&self) -> &Ellipsoid {
        &self.ellipsoid
    }

    pub fn tolerance(&self, gamma: f64) -> f64 {
        (self.initial_tolerance.ln() * (1.0 - gamma) + self.final_tolerance.ln() * gamma).exp()
    }

    fn log_base(x: &[f64]) -> f64 {
        -0.5 * x.iter().map(|a| a * a).sum::<f64>() - 0.5 * x.len() as f64 * (2.0 * PI).ln()
    }

    fn log_kernel(&self, x: &[f64], gamma: f64) -> f64 {
        let tol = self.tolerance(gamma);
        if self.ellipsoid.value(x).abs() <= tol {
            -tol.ln()
        } else {
            f64::NEG_INFINITY
        }
    }
}

impl TemperedTarget for FilamentaryTarget {
    fn dim(&self) -> usize {
        self.ellipsoid.variances.len()
    }

    fn log_prior(&self, x: &[f64]) -> f64 {
        self.log_density(x, 0.0)
    }

    /// `log π(x; 1) - log π(x; 0)`, -inf outside the final band.
    fn log_likelihood(&self, x: &[f64]) -> f64 {
        self.log_increment(x, 0.0, 1.0)
    }

    fn grad_log_prior(&self, x: &[f64], out: &mut [f64]) {
        for (o, a) in out.iter_mut().zip(x) {
            *o = -a;
        }
    }

    fn grad_log_likelihood(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn log_density(&self, x: &[f64], gamma: f64) -> f64 {
        sanitize(Self::log_base(x) + self.log_kernel(x, gamma))
    }

    fn grad_log_density(&self, x: &[f64], _gamma: f64, out: &mut [f64]) {
        self.grad_log_prior(x, out)
    }

    fn log_increment(&self, x: &[f64], from: f64, to: f64) -> f64 {
        let a = self.log_kernel(x, to);
        let b = self.log_kernel(x, from);
        if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            a - b
        }
    }

    fn is_linear_path(&self) -> bool {
        false
    }

    fn constraint(&self) -> Option<&dyn Constraint> {
        Some(&self.ellipsoid)
    }

    fn sample_prior(&self, rng: &mut RandomStream) -> Result<Vec<f64>> {
        for _ in 0..1_000_000 {
            let x = rng.normal_vec(self.dim());
            if self.log_kernel(&x, 0.0) > f64::NEG_INFINITY {
                return Ok(x);
            }
        }
        Err(Error::InvalidArgument(
            "initial tolerance too small: rejection sampling from the base density failed".into(),
        ))
    }
}
