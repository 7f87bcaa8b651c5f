//! Markov snippets: trajectories grown by a random-walk Metropolis kernel.
//!
//! A snippet stores log densities of `μ_n` and `μ_{n-1}` relative to a
//! reference measure `υ` for which the kernel is reversible. Deterministic
//! volume-preserving integrators are reversible for Lebesgue measure; a
//! Metropolis kernel targeting `μ_{n-1}` is reversible for `μ_{n-1}` itself,
//! in which case `dμ_n/dυ = μ_n/μ_{n-1}` and `dμ_{n-1}/dυ = 1`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::adaptation::{ess_of_log_weights, next_gamma};
use crate::error::{Error, Result};
use crate::integrators::{log_sum_exp, normalize_log_weights, Snippet};
use crate::phase::TemperedTarget;
use crate::rng::RandomStream;

/// Gaussian random-walk proposal `N(0, L Lᵀ)`.
#[derive(Clone, Debug)]
pub struct ProposalCovariance {
    chol: DMatrix<f64>,
}

impl ProposalCovariance {
    /// `scale · I`; `scale = 0` gives a proposal that never moves.
    pub fn scaled_identity(dim: usize, scale: f64) -> Result<Self> {
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument("proposal scale must be nonnegative".into()));
        }
        Ok(ProposalCovariance { chol: DMatrix::identity(dim, dim) * scale.sqrt() })
    }

    pub fn from_covariance(cov: DMatrix<f64>) -> Result<Self> {
        let chol = cov.cholesky().ok_or(Error::NotPositiveDefinite)?;
        Ok(ProposalCovariance { chol: chol.l() })
    }

    /// `2.38² Σ̂ / d` from particle positions, loaded by `1e-9·tr(Σ̂)/d`.
    pub fn from_positions(xs: &[&[f64]]) -> Result<Self> {
        let n = xs.len();
        if n < 2 {
            return Err(Error::InvalidArgument("need at least two particles".into()));
        }
        let d = xs[0].len();
        let mut mean = DVector::zeros(d);
        for x in xs {
            mean += DVector::from_column_slice(x);
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(d, d);
        for x in xs {
            let c = DVector::from_column_slice(x) - &mean;
            cov.ger(1.0, &c, &c, 1.0);
        }
        cov /= (n - 1) as f64;
        let load = 1e-9 * cov.trace() / d as f64;
        for i in 0..d {
            cov[(i, i)] += load;
        }
        Self::from_covariance(cov * (2.38f64.powi(2) / d as f64))
    }

    pub fn propose(&self, x: &[f64], rng: &mut RandomStream) -> Vec<f64> {
        let e = DVector::from_vec(rng.normal_vec(x.len()));
        let step = &self.chol * e;
        x.iter().zip(step.iter()).map(|(a, b)| a + b).collect()
    }
}

/// One Metropolis-Hastings step. Returns the new position, its log density
/// and whether the proposal was accepted.
pub fn rwmh_step(
    log_density: &dyn Fn(&[f64]) -> f64,
    proposal: &ProposalCovariance,
    x: &[f64],
    log_p: f64,
    rng: &mut RandomStream,
) -> (Vec<f64>, f64, bool) {
    let y = proposal.propose(x, rng);
    let lq = log_density(&y);
    let u = rng.uniform();
    if lq.is_finite() && u.ln() < lq - log_p {
        (y, lq, true)
    } else {
        (x.to_vec(), log_p, false)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ReferenceMeasure {
    Lebesgue,
    /// The previous target `μ_{n-1}`.
    PreviousTarget,
}

#[derive(Clone, Debug)]
pub struct MarkovSnippet {
    pub states: Vec<Vec<f64>>,
    /// `log dμ_n/dυ (z_k)`.
    pub log_mu_next: Vec<f64>,
    /// `log dμ_{n-1}/dυ (z_0)`.
    pub log_mu_prev_seed: f64,
    pub reference: ReferenceMeasure,
    pub accepted: usize,
}

impl MarkovSnippet {
    /// View an integrator snippet as a Markov snippet for the deterministic kernel.
    pub fn from_integrator_snippet(s: &Snippet) -> Self {
        MarkovSnippet {
            states: s.states.iter().map(|z| z.x.iter().chain(&z.v).cloned().collect()).collect(),
            log_mu_next: s.log_mu_next.clone(),
            log_mu_prev_seed: s.log_mu_prev_seed,
            reference: ReferenceMeasure::Lebesgue,
            accepted: s.len() - 1,
        }
    }
}

/// Per-state `log w_k = log dμ_n/dυ(z_k) - log dμ_{n-1}/dυ(z_0)` and `log w̄`.
pub fn markov_snippet_weights(s: &MarkovSnippet) -> Result<(Vec<f64>, f64)> {
    if !s.log_mu_prev_seed.is_finite() {
        return Err(Error::SeedOutsideSupport { index: 0 });
    }
    let lw: Vec<f64> = s
        .log_mu_next
        .iter()
        .map(|l| {
            let v = l - s.log_mu_prev_seed;
            if v.is_nan() {
                f64::NEG_INFINITY
            } else {
                v
            }
        })
        .collect();
    let bar = log_sum_exp(&lw) - (lw.len() as f64).ln();
    Ok((lw, bar))
}

/// Grow `t` Metropolis steps targeting `π(·; gamma_prev)` from `x0`.
pub fn grow_rwmh_snippet(
    target: &dyn TemperedTarget,
    gamma_prev: f64,
    gamma_next: f64,
    proposal: &ProposalCovariance,
    x0: &[f64],
    t: usize,
    rng: &mut RandomStream,
) -> Result<MarkovSnippet> {
    let lp0 = target.log_density(x0, gamma_prev);
    if !lp0.is_finite() {
        return Err(Error::SeedOutsideSupport { index: 0 });
    }
    let density = |x: &[f64]| target.log_density(x, gamma_prev);
    let mut states = vec![x0.to_vec()];
    let mut ratio = vec![target.log_increment(x0, gamma_prev, gamma_next)];
    let (mut x, mut lp) = (x0.to_vec(), lp0);
    let mut accepted = 0;
    for _ in 0..t {
        let (y, ly, acc) = rwmh_step(&density, proposal, &x, lp, rng);
        accepted += acc as usize;
        ratio.push(target.log_increment(&y, gamma_prev, gamma_next));
        states.push(y.clone());
        x = y;
        lp = ly;
    }
    Ok(MarkovSnippet {
        states,
        log_mu_next: ratio,
        log_mu_prev_seed: 0.0,
        reference: ReferenceMeasure::PreviousTarget,
        accepted,
    })
}

#[derive(Clone, Debug)]
pub struct MarkovCloud {
    pub xs: Vec<Vec<f64>>,
    pub gamma: f64,
    pub iteration: usize,
    pub log_z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarkovRecord {
    pub iter: usize,
    pub gamma: f64,
    pub log_z_increment: f64,
    pub log_z_cumulative: f64,
    pub ess: f64,
    pub acceptance_rate: f64,
}

/// One folded Markov-snippet iteration: grow chains from the seeds, weight
/// every state against `π(·; gamma_next)`, pick a snippet by `w̄` and a state
/// inside it by the normalized `w_k`. The refresh kernel is the identity.
pub fn run_markov_snippet_iteration(
    target: &dyn TemperedTarget,
    cloud: &MarkovCloud,
    gamma_next: f64,
    t: usize,
    rng: &RandomStream,
) -> Result<(MarkovCloud, MarkovRecord, Vec<MarkovSnippet>)> {
    let n = cloud.xs.len();
    let refs: Vec<&[f64]> = cloud.xs.iter().map(|x| x.as_slice()).collect();
    let proposal = ProposalCovariance::from_positions(&refs)?;
    let grow = rng.substream(1);
    let snippets: Vec<MarkovSnippet> = cloud
        .xs
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut r = grow.substream(i as u64);
            grow_rwmh_snippet(target, cloud.gamma, gamma_next, &proposal, x, t, &mut r)
                .map_err(|_| Error::SeedOutsideSupport { index: i })
        })
        .collect::<Result<_>>()?;
    let weights: Vec<(Vec<f64>, f64)> = snippets.iter().map(markov_snippet_weights).collect::<Result<_>>()?;
    let all: Vec<f64> = weights.iter().flat_map(|w| w.0.iter().cloned()).collect();
    let lse = log_sum_exp(&all);
    let iteration = cloud.iteration + 1;
    if lse == f64::NEG_INFINITY {
        return Err(Error::Degenerate { iteration });
    }
    let log_z_increment = lse - (all.len() as f64).ln();
    let bars: Vec<f64> = weights.iter().map(|w| w.1).collect();
    let pb = normalize_log_weights(&bars).ok_or(Error::Degenerate { iteration })?;
    let mut rs = rng.substream(0);
    let mut xs = Vec::with_capacity(n);
    for _ in 0..n {
        let b = rs.categorical(&pb).ok_or(Error::Degenerate { iteration })?;
        let q = normalize_log_weights(&weights[b].0).ok_or(Error::EmptySnippet { index: b })?;
        let a = rs.categorical(&q).ok_or(Error::EmptySnippet { index: b })?;
        xs.push(snippets[b].states[a].clone());
    }
    let accepted: usize = snippets.iter().map(|s| s.accepted).sum();
    let record = MarkovRecord {
        iter: iteration,
        gamma: gamma_next,
        log_z_increment,
        log_z_cumulative: cloud.log_z + log_z_increment,
        ess: ess_of_log_weights(&all),
        acceptance_rate: accepted as f64 / (n * t.max(1)) as f64,
    };
    let cloud = MarkovCloud { xs, gamma: gamma_next, iteration, log_z: cloud.log_z + log_z_increment };
    Ok((cloud, record, snippets))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarkovConfig {
    pub n: usize,
    pub t: usize,
    pub ess_target: f64,
    pub max_iterations: usize,
}

/// Tempering loop with Markov snippets, from prior draws to `γ = 1`.
pub fn run_markov_snippet(
    target: &dyn TemperedTarget,
    config: MarkovConfig,
    rng: &RandomStream,
) -> Result<(MarkovCloud, Vec<MarkovRecord>)> {
    if config.n < 2 || config.t < 1 {
        return Err(Error::InvalidArgument("need N >= 2 and T >= 1".into()));
    }
    let init = rng.substream(0);
    let xs = (0..config.n)
        .into_par_iter()
        .map(|i| target.sample_prior(&mut init.substream(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mut cloud = MarkovCloud { xs, gamma: 0.0, iteration: 0, log_z: 0.0 };
    let mut records = Vec::new();
    while cloud.gamma < 1.0 {
        if records.len() >= config.max_iterations {
            return Err(Error::IterationCap { cap: config.max_iterations, gamma: cloud.gamma });
        }
        let refs: Vec<&[f64]> = cloud.xs.iter().map(|x| x.as_slice()).collect();
        let g = next_gamma(target, &refs, cloud.gamma, config.ess_target, 1e-8)?.gamma;
        let g = g.max(cloud.gamma + 1e-8).min(1.0);
        let it = rng.substream(cloud.iteration as u64 + 1);
        let (next, rec, _) = run_markov_snippet_iteration(target, &cloud, g, config.t, &it)?;
        cloud = next;
        records.push(rec);
    }
    Ok((cloud, records))
}
