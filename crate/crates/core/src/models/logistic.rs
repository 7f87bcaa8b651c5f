use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};
use crate::phase::{sanitize, TemperedTarget};
use crate::rng::RandomStream;

/// Bayesian logistic regression with independent zero-mean Gaussian priors.
#[derive(Clone, Debug)]
pub struct LogisticRegressionTarget {
    /// Row-major `n_obs × d` design, intercept column included.
    design: Vec<f64>,
    y: Vec<f64>,
    prior_scales: Vec<f64>,
    n_obs: usize,
    d: usize,
}

/// `log(1 + e^t)` without overflow.
#[inline]
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// `1 / (1 + e^t)`.
#[inline]
fn sigmoid_neg(t: f64) -> f64 {
    if t >= 0.0 {
        let e = (-t).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + t.exp())
    }
}

impl LogisticRegressionTarget {
    /// `design` is row-major without the intercept; a column of ones is prepended.
    pub fn new(covariates: Vec<Vec<f64>>, y: Vec<f64>, prior_scales: Vec<f64>) -> Result<Self> {
        let n_obs = covariates.len();
        if n_obs == 0 || n_obs != y.len() {
            return Err(Error::InvalidArgument("need as many responses as rows (>= 1)".into()));
        }
        let p = covariates[0].len();
        let d = p + 1;
        if prior_scales.len() != d {
            return Err(Error::Dimension { expected: d, got: prior_scales.len() });
        }
        if !prior_scales.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::InvalidArgument("prior scales must be positive".into()));
        }
        if y.iter().any(|&t| t != 1.0 && t != -1.0) {
            return Err(Error::InvalidArgument("responses must be +1 or -1".into()));
        }
        let mut design = Vec::with_capacity(n_obs * d);
        for row in &covariates {
            if row.len() != p {
                return Err(Error::Dimension { expected: p, got: row.len() });
            }
            design.push(1.0);
            design.extend_from_slice(row);
        }
        Ok(LogisticRegressionTarget { design, y, prior_scales, n_obs, d })
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.design[i * self.d..(i + 1) * self.d]
    }

    pub fn responses(&self) -> &[f64] {
        &self.y
    }

    pub fn prior_scales(&self) -> &[f64] {
        &self.prior_scales
    }

    #[inline]
    fn margin(&self, i: usize, x: &[f64]) -> f64 {
        let r = self.row(i);
        let mut s = 0.0;
        for j in 0..self.d {
            s += r[j] * x[j];
        }
        self.y[i] * s
    }

    /// Shared pass: log-likelihood and, optionally, its gradient added into `grad`.
    fn loglik_pass(&self, x: &[f64], grad: Option<(&mut [f64], f64)>) -> f64 {
        let mut ll = 0.0;
        match grad {
            None => {
                for i in 0..self.n_obs {
                    ll -= softplus(-self.margin(i, x));
                }
            }
            Some((g, scale)) => {
                for i in 0..self.n_obs {
                    let m = self.margin(i, x);
                    ll -= softplus(-m);
                    let c = scale * self.y[i] * sigmoid_neg(m);
                    let r = self.row(i);
                    for j in 0..self.d {
                        g[j] += c * r[j];
                    }
                }
            }
        }
        ll
    }
}

/// Read a Sonar-style CSV: 60 reals then a class token `R` (+1) or `M` (-1).
pub fn load_sonar(path: impl AsRef<Path>) -> Result<LogisticRegressionTarget> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    let mut ys = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let bad = |message: String| Error::Data { path: path.to_path_buf(), line: line_no, message };
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(bad("expected covariates followed by a class token".into()));
        }
        let (label, covs) = fields.split_last().unwrap();
        if let Some(w) = width {
            if covs.len() != w {
                return Err(bad(format!("expected {w} covariates, found {}", covs.len())));
            }
        } else if covs.len() != 60 {
            return Err(bad(format!("expected 60 covariates, found {}", covs.len())));
        }
        width = Some(covs.len());
        let row = covs
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| bad(format!("cannot parse {s:?} as a number"))))
            .collect::<Result<Vec<f64>>>()?;
        let y = match *label {
            "R" => 1.0,
            "M" => -1.0,
            other => return Err(bad(format!("unknown class token {other:?}"))),
        };
        rows.push(row);
        ys.push(y);
    }
    if rows.is_empty() {
        return Err(Error::Data { path: path.to_path_buf(), line: 0, message: "no data rows".into() });
    }
    let d = rows[0].len() + 1;
    let mut scales = vec![5.0; d];
    scales[0] = 20.0;
    LogisticRegressionTarget::new(rows, ys, scales)
}

impl TemperedTarget for LogisticRegressionTarget {
    fn dim(&self) -> usize {
        self.d
    }

    fn log_prior(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.prior_scales).map(|(a, s)| -0.5 * (a / s) * (a / s) - 0.5 * (2.0 * PI * s * s).ln()).sum()
    }

    fn log_likelihood(&self, x: &[f64]) -> f64 {
        self.loglik_pass(x, None)
    }

    fn grad_log_prior(&self, x: &[f64], out: &mut [f64]) {
        for ((o, a), s) in out.iter_mut().zip(x).zip(&self.prior_scales) {
            *o = -a / (s * s);
        }
    }

    fn grad_log_likelihood(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        self.loglik_pass(x, Some((out, 1.0)));
    }

    fn log_density_and_grad(&self, x: &[f64], gamma: f64, out: &mut [f64]) -> f64 {
        self.grad_log_prior(x, out);
        if gamma == 0.0 {
            return sanitize(self.log_prior(x));
        }
        let ll = self.loglik_pass(x, Some((out, gamma)));
        sanitize(gamma * ll + self.log_prior(x))
    }

    fn grad_log_density(&self, x: &[f64], gamma: f64, out: &mut [f64]) {
        self.log_density_and_grad(x, gamma, out);
    }

    fn sample_prior(&self, rng: &mut RandomStream) -> Result<Vec<f64>> {
        Ok(self.prior_scales.iter().map(|s| s * rng.normal()).collect())
    }
}
