//! The unfolded integrator-snippet SMC engine.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptation::{
    ess_of_log_weights, estimate_tau, fit_epsilon_distribution, median, next_gamma, sample_epsilon,
    snippet_variance_criterion,
};
use crate::error::{Error, Result};
use crate::estimators::estimate_unfolded;
use crate::integrators::{
    build_snippet, log_sum_exp, make_integrator, mixture_select, validate_proportions, Integrator, IntegratorKind,
    Snippet,
};
use crate::phase::{log_mu, Counted, PhaseState, TemperedTarget, VelocityLaw};
use crate::rng::RandomStream;

#[derive(Clone, Debug, PartialEq)]
pub struct Particle {
    pub z: PhaseState,
    pub epsilon: f64,
    pub label: usize,
}

#[derive(Clone, Debug)]
pub struct ParticleCloud {
    pub particles: Vec<Particle>,
    pub gamma: f64,
    pub iteration: usize,
    pub log_z: f64,
    /// Mean of the stepsize distribution when stepsizes are adapted.
    pub theta: Option<f64>,
}

impl ParticleCloud {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn positions(&self) -> Vec<&[f64]> {
        self.particles.iter().map(|p| p.z.x.as_slice()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub gamma: f64,
    /// Stepsize-distribution mean after this iteration's update (NaN if fixed).
    pub theta: f64,
    pub t: usize,
    /// Estimated integration time (NaN when not estimated).
    pub tau: f64,
    pub log_z_increment: f64,
    pub log_z_cumulative: f64,
    pub ess_unfolded: f64,
    pub ess_seed: f64,
    pub median_epsilon: f64,
    pub min_log_weight: f64,
    pub max_log_weight: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    #[default]
    Multinomial,
    Systematic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonMode {
    Fixed(f64),
    Adaptive { theta0: f64, s: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmcConfig {
    pub n: usize,
    /// Snippet length; the initial value when `adapt_tau` is set.
    pub t: usize,
    pub adapt_tau: bool,
    pub t_max: usize,
    pub bins: usize,
    pub epsilon: EpsilonMode,
    pub ess_target: f64,
    pub integrators: Vec<IntegratorKind>,
    pub proportions: Vec<f64>,
    pub resampling: Resampling,
    pub max_iterations: usize,
    pub min_gamma_increment: f64,
    pub gamma_tolerance: f64,
    pub initial_gamma: f64,
}

impl Default for SmcConfig {
    fn default() -> Self {
        SmcConfig {
            n: 500,
            t: 30,
            adapt_tau: false,
            t_max: 100,
            bins: 50,
            epsilon: EpsilonMode::Adaptive { theta0: 0.1, s: 3.0 },
            ess_target: 0.8,
            integrators: vec![IntegratorKind::Leapfrog],
            proportions: vec![1.0],
            resampling: Resampling::Multinomial,
            max_iterations: 1000,
            min_gamma_increment: 1e-8,
            gamma_tolerance: 1e-8,
            initial_gamma: 0.0,
        }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.n < 2 {
            return bad("N must be at least 2");
        }
        if self.t < 1 || self.t_max < 1 {
            return bad("T and T_max must be at least 1");
        }
        if self.adapt_tau && (self.n < 4 || self.bins < 1) {
            return bad("integration-time adaptation needs N >= 4 and bins >= 1");
        }
        if !(self.ess_target > 0.0 && self.ess_target < 1.0) {
            return bad("ess_target must lie in (0, 1)");
        }
        match self.epsilon {
            EpsilonMode::Fixed(e) if !(e > 0.0 && e.is_finite()) => return bad("epsilon must be positive"),
            EpsilonMode::Adaptive { theta0, s } if !(theta0 > 0.0 && s > 0.0) => {
                return bad("theta0 and s must be positive")
            }
            _ => {}
        }
        if self.integrators.is_empty() || self.integrators.len() != self.proportions.len() {
            return bad("need one mixture proportion per integrator");
        }
        validate_proportions(&self.proportions)?;
        if !(0.0..=1.0).contains(&self.initial_gamma) {
            return bad("initial gamma must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Result of one engine iteration.
pub struct IterationOutput {
    pub cloud: ParticleCloud,
    pub record: IterationRecord,
    pub snippets: Vec<Snippet>,
}

pub struct RunOutput {
    pub cloud: ParticleCloud,
    pub records: Vec<IterationRecord>,
    /// Snippets of the final iteration (empty if no iteration ran).
    pub final_snippets: Vec<Snippet>,
    pub log_z: f64,
    /// Self-normalized estimate of the final-target mean of `x`.
    pub posterior_mean: Vec<f64>,
    pub gradient_evaluations: u64,
}

/// `N` multinomial draws from the normalized `exp(log_weights)`.
pub fn resample_multinomial(log_weights: &[f64], n: usize, rng: &mut RandomStream) -> Result<Vec<usize>> {
    let cum = cumulative(log_weights)?;
    let total = *cum.last().unwrap();
    Ok((0..n).map(|_| pick(&cum, rng.uniform() * total)).collect())
}

/// Systematic resampling: one uniform, `N` evenly spaced points.
pub fn resample_systematic(log_weights: &[f64], n: usize, rng: &mut RandomStream) -> Result<Vec<usize>> {
    let cum = cumulative(log_weights)?;
    let total = *cum.last().unwrap();
    let u = rng.uniform();
    Ok((0..n).map(|j| pick(&cum, (j as f64 + u) / n as f64 * total)).collect())
}

fn cumulative(log_weights: &[f64]) -> Result<Vec<f64>> {
    let m = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::Degenerate { iteration: 0 });
    }
    let mut acc = 0.0;
    Ok(log_weights
        .iter()
        .map(|l| {
            acc += (l - m).exp();
            acc
        })
        .collect())
}

fn pick(cum: &[f64], u: f64) -> usize {
    let i = cum.partition_point(|c| *c <= u);
    if i < cum.len() {
        return i;
    }
    // u landed on the total through rounding: last index with positive mass
    let last = *cum.last().unwrap();
    cum.partition_point(|c| *c < last)
}

pub struct Sampler<'a> {
    target: &'a dyn TemperedTarget,
    vel: VelocityLaw,
    config: SmcConfig,
}

impl<'a> Sampler<'a> {
    pub fn new(target: &'a dyn TemperedTarget, config: SmcConfig) -> Result<Self> {
        config.validate()?;
        Ok(Sampler { target, vel: VelocityLaw::standard(target.dim()), config })
    }

    pub fn config(&self) -> &SmcConfig {
        &self.config
    }

    pub fn velocity(&self) -> &VelocityLaw {
        &self.vel
    }

    fn theta0(&self) -> Option<f64> {
        match self.config.epsilon {
            EpsilonMode::Adaptive { theta0, .. } => Some(theta0),
            EpsilonMode::Fixed(_) => None,
        }
    }

    fn draw_epsilon(&self, theta: Option<f64>, rng: &mut RandomStream) -> f64 {
        match (self.config.epsilon, theta) {
            (EpsilonMode::Adaptive { s, .. }, Some(t)) => sample_epsilon(t, s, rng),
            (EpsilonMode::Fixed(e), _) => e,
            (EpsilonMode::Adaptive { theta0, s }, None) => sample_epsilon(theta0, s, rng),
        }
    }

    /// Seeds from `π(·; γ₀) ⊗ ϖ`; each particle uses its own substream.
    pub fn initialize(&self, rng: &RandomStream) -> Result<ParticleCloud> {
        if self.config.initial_gamma != 0.0 && self.config.initial_gamma != 1.0 {
            return Err(Error::InvalidArgument(
                "the prior can only be sampled at gamma = 0 (or skipped at gamma = 1)".into(),
            ));
        }
        let init = rng.substream(0);
        let theta = self.theta0();
        let particles = (0..self.config.n)
            .into_par_iter()
            .map(|i| {
                let mut r = init.substream(i as u64);
                let x = self.target.sample_prior(&mut r)?;
                let v = self.vel.sample(&mut r);
                let epsilon = self.draw_epsilon(theta, &mut r);
                let label = mixture_select(&self.config.proportions, &mut r)?;
                Ok(Particle { z: PhaseState { x, v }, epsilon, label })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ParticleCloud { particles, gamma: self.config.initial_gamma, iteration: 0, log_z: 0.0, theta })
    }

    pub fn integrators<'b>(&self, target: &'b dyn TemperedTarget, gamma: f64) -> Result<Vec<Box<dyn Integrator + 'b>>> {
        self.config.integrators.iter().map(|k| make_integrator(*k, target, gamma)).collect()
    }

    /// One full iteration toward `gamma_next` with snippets of length `t + 1`.
    pub fn run_iteration(
        &self,
        cloud: &ParticleCloud,
        gamma_next: f64,
        t: usize,
        rng: &RandomStream,
    ) -> Result<IterationOutput> {
        self.iterate(self.target, cloud, gamma_next, t, rng, f64::NAN, f64::NAN)
    }

    #[allow(clippy::too_many_arguments)]
    fn iterate(
        &self,
        target: &dyn TemperedTarget,
        cloud: &ParticleCloud,
        gamma_next: f64,
        t: usize,
        rng: &RandomStream,
        ess_seed: f64,
        tau: f64,
    ) -> Result<IterationOutput> {
        let start = Instant::now();
        if !(gamma_next > cloud.gamma && gamma_next <= 1.0) && !(gamma_next == cloud.gamma) {
            return Err(Error::InvalidArgument(format!(
                "gamma_next = {gamma_next} must lie in (gamma, 1] with gamma = {}",
                cloud.gamma
            )));
        }
        if t < 1 {
            return Err(Error::InvalidArgument("T must be at least 1".into()));
        }
        let iteration = cloud.iteration + 1;
        let ints = self.integrators(target, gamma_next)?;
        let vel = &self.vel;
        let snippets: Vec<Snippet> = cloud
            .particles
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let prev = log_mu(target, vel, cloud.gamma, &p.z);
                if prev == f64::NEG_INFINITY {
                    return Err(Error::SeedOutsideSupport { index: i });
                }
                build_snippet(&*ints[p.label], p.epsilon, t, p.z.clone(), target, gamma_next, vel, prev, p.label)
            })
            .collect::<Result<_>>()?;

        let k1 = t + 1;
        let all: Vec<f64> = snippets.iter().flat_map(|s| s.log_w.iter().cloned()).collect();
        let lse = log_sum_exp(&all);
        if lse == f64::NEG_INFINITY {
            return Err(Error::Degenerate { iteration });
        }
        let log_z_increment = lse - (all.len() as f64).ln();
        let ess_unfolded = ess_of_log_weights(&all);

        let n = cloud.len();
        let mut rs = rng.substream(0);
        let picks = match self.config.resampling {
            Resampling::Multinomial => resample_multinomial(&all, n, &mut rs),
            Resampling::Systematic => resample_systematic(&all, n, &mut rs),
        }
        .map_err(|_| Error::Degenerate { iteration })?;

        let theta = match self.config.epsilon {
            EpsilonMode::Adaptive { s, .. } => {
                let v: Vec<f64> = snippets.par_iter().map(snippet_variance_criterion).collect();
                let pairs: Vec<(f64, f64)> =
                    picks.iter().map(|idx| (snippets[idx / k1].epsilon, v[idx / k1])).collect();
                let prev = cloud.theta.or(self.theta0()).expect("adaptive theta");
                Some(fit_epsilon_distribution(&pairs, s, prev)?)
            }
            EpsilonMode::Fixed(_) => None,
        };

        let refresh = rng.substream(1);
        let particles: Vec<Particle> = picks
            .par_iter()
            .enumerate()
            .map(|(j, idx)| {
                let s = &snippets[idx / k1];
                let mut r = refresh.substream(j as u64);
                let x = s.states[idx % k1].x.clone();
                let v = vel.sample(&mut r);
                let epsilon = match self.config.epsilon {
                    EpsilonMode::Adaptive { .. } => self.draw_epsilon(theta, &mut r),
                    EpsilonMode::Fixed(_) => s.epsilon,
                };
                let label = mixture_select(&self.config.proportions, &mut r)?;
                Ok(Particle { z: PhaseState { x, v }, epsilon, label })
            })
            .collect::<Result<_>>()?;

        let finite: Vec<f64> = all.iter().cloned().filter(|w| w.is_finite()).collect();
        let eps_used: Vec<f64> = snippets.iter().map(|s| s.epsilon).collect();
        let log_z = cloud.log_z + log_z_increment;
        let record = IterationRecord {
            iter: iteration,
            gamma: gamma_next,
            theta: theta.unwrap_or(f64::NAN),
            t,
            tau,
            log_z_increment,
            log_z_cumulative: log_z,
            ess_unfolded,
            ess_seed,
            median_epsilon: median(&eps_used),
            min_log_weight: finite.iter().cloned().fold(f64::INFINITY, f64::min),
            max_log_weight: finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        let cloud = ParticleCloud { particles, gamma: gamma_next, iteration, log_z, theta };
        Ok(IterationOutput { cloud, record, snippets })
    }

    /// Run the tempering loop from the prior to `γ = 1`.
    pub fn run(&self, rng: &RandomStream) -> Result<RunOutput> {
        let counted = Counted::new(self.target);
        let mut cloud = self.initialize(rng)?;
        let mut records = Vec::new();
        let mut final_snippets = Vec::new();
        let mut t = if self.config.adapt_tau { self.config.t.min(self.config.t_max) } else { self.config.t };
        while cloud.gamma < 1.0 {
            if records.len() >= self.config.max_iterations {
                return Err(Error::IterationCap { cap: self.config.max_iterations, gamma: cloud.gamma });
            }
            let it_rng = rng.substream(cloud.iteration as u64 + 1);
            let choice = next_gamma(
                &counted,
                &cloud.positions(),
                cloud.gamma,
                self.config.ess_target,
                self.config.gamma_tolerance,
            )?;
            let gamma_next = choice.gamma.max(cloud.gamma + self.config.min_gamma_increment).min(1.0);
            let mut tau = f64::NAN;
            if self.config.adapt_tau {
                let ints = self.integrators(&counted, gamma_next)?;
                let mut r = it_rng.substream(2);
                if let Some(est) =
                    estimate_tau(&cloud.particles, &ints, t, self.config.t_max, self.config.bins, &mut r)?
                {
                    tau = est.tau;
                    t = est.t_next;
                }
            }
            let out = self.iterate(&counted, &cloud, gamma_next, t, &it_rng, choice.ess, tau)?;
            cloud = out.cloud;
            records.push(out.record);
            final_snippets = out.snippets;
        }
        let posterior_mean = if final_snippets.is_empty() {
            let n = cloud.len() as f64;
            let mut m = vec![0.0; self.target.dim()];
            for p in &cloud.particles {
                for (a, b) in m.iter_mut().zip(&p.z.x) {
                    *a += b / n;
                }
            }
            m
        } else {
            estimate_unfolded(&final_snippets, &|z: &PhaseState| z.x.clone())?.value
        };
        Ok(RunOutput {
            log_z: cloud.log_z,
            cloud,
            records,
            final_snippets,
            posterior_mean,
            gradient_evaluations: counted.gradient_evaluations(),
        })
    }
}
