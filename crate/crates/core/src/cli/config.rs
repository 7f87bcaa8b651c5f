use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::trace::write_trace;
use crate::error::{Error, Result};
use crate::integrators::IntegratorKind;
use crate::markov_snippet::{run_markov_snippet, MarkovConfig};
use crate::models::{load_sonar, FilamentaryTarget, GaussianPath, GaussianTarget, LogisticRegressionTarget};
use crate::phase::TemperedTarget;
use crate::rng::RandomStream;
use crate::smc::{EpsilonMode, IterationRecord, Resampling, Sampler, SmcConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSpec {
    pub initial: f64,
    #[serde(rename = "final")]
    pub final_: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `N(0, prior_variances)`; with `likelihood_variances`, tempered by a
    /// Gaussian-shaped likelihood.
    Gaussian {
        prior_variances: Vec<f64>,
        #[serde(default)]
        likelihood_variances: Option<Vec<f64>>,
    },
    /// Sonar-format CSV; relative paths are resolved against the config file.
    Logistic { data: PathBuf },
    /// Ellipsoid shell; variances default to alternating 1 and 0.1.
    Filamentary {
        d: usize,
        c: f64,
        #[serde(default)]
        variances: Option<Vec<f64>>,
        tolerance: ToleranceSpec,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub kind: IntegratorKind,
    pub proportion: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    #[default]
    Snippet,
    /// Random-walk Metropolis snippets (position only).
    MarkovSnippet,
}

fn d_n() -> usize {
    500
}
fn d_t() -> usize {
    30
}
fn d_bins() -> usize {
    50
}
fn d_eps() -> EpsilonMode {
    EpsilonMode::Adaptive { theta0: 0.1, s: 3.0 }
}
fn d_ess() -> f64 {
    0.8
}
fn d_mix() -> Vec<MixtureComponent> {
    vec![MixtureComponent { kind: IntegratorKind::Leapfrog, proportion: 1.0 }]
}
fn d_out() -> PathBuf {
    PathBuf::from("out")
}
fn d_one() -> usize {
    1
}
fn d_cap() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    #[serde(default = "d_n")]
    pub n: usize,
    /// Snippet length, or the initial one when `adapt_tau` is set.
    #[serde(default = "d_t")]
    pub t: usize,
    #[serde(default)]
    pub adapt_tau: bool,
    #[serde(default)]
    pub t_max: Option<usize>,
    #[serde(default = "d_bins")]
    pub bins: usize,
    #[serde(default = "d_eps")]
    pub epsilon: EpsilonMode,
    #[serde(default = "d_ess")]
    pub ess_target: f64,
    #[serde(default = "d_mix")]
    pub integrators: Vec<MixtureComponent>,
    #[serde(default)]
    pub resampling: Resampling,
    #[serde(default)]
    pub sampler: SamplerKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_out")]
    pub output_dir: PathBuf,
    #[serde(default = "d_one")]
    pub replications: usize,
    #[serde(default = "d_cap")]
    pub max_iterations: usize,
    /// Write measured per-iteration times into the trace (breaks bitwise reproducibility).
    #[serde(default)]
    pub trace_wall_clock: bool,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config("n must be at least 2".into()));
        }
        if self.t < 1 {
            return Err(Error::Config("t must be at least 1".into()));
        }
        if !(self.ess_target > 0.0 && self.ess_target < 1.0) {
            return Err(Error::Config("ess_target must lie in (0, 1)".into()));
        }
        if self.replications < 1 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        self.smc_config().validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn smc_config(&self) -> SmcConfig {
        SmcConfig {
            n: self.n,
            t: self.t,
            adapt_tau: self.adapt_tau,
            t_max: self.t_max.unwrap_or(self.t),
            bins: self.bins,
            epsilon: self.epsilon,
            ess_target: self.ess_target,
            integrators: self.integrators.iter().map(|c| c.kind).collect(),
            proportions: self.integrators.iter().map(|c| c.proportion).collect(),
            resampling: self.resampling,
            max_iterations: self.max_iterations,
            ..SmcConfig::default()
        }
    }
}

/// Parse a JSON config; relative data paths are resolved against its directory.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg: RunConfig =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if let ModelSpec::Logistic { data } = &mut cfg.model {
        if data.is_relative() {
            if let Some(dir) = path.parent() {
                *data = dir.join(&*data);
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// A concrete model built from a [`ModelSpec`].
pub enum Model {
    Gaussian(GaussianTarget),
    GaussianPath(GaussianPath),
    Logistic(LogisticRegressionTarget),
    Filamentary(FilamentaryTarget),
}

impl Model {
    pub fn build(spec: &ModelSpec) -> Result<Model> {
        Ok(match spec {
            ModelSpec::Gaussian { prior_variances, likelihood_variances: None } => {
                Model::Gaussian(GaussianTarget::new(prior_variances.clone())?)
            }
            ModelSpec::Gaussian { prior_variances, likelihood_variances: Some(l) } => {
                Model::GaussianPath(GaussianPath::new(prior_variances.clone(), l.clone())?)
            }
            ModelSpec::Logistic { data } => Model::Logistic(load_sonar(data)?),
            ModelSpec::Filamentary { d, c, variances, tolerance } => {
                let v =
                    variances.clone().unwrap_or_else(|| (0..*d).map(|i| if i % 2 == 0 { 1.0 } else { 0.1 }).collect());
                if v.len() != *d {
                    return Err(Error::Config(format!("filamentary: {} variances for d = {d}", v.len())));
                }
                Model::Filamentary(FilamentaryTarget::new(v, *c, tolerance.initial, tolerance.final_)?)
            }
        })
    }

    pub fn target(&self) -> &dyn TemperedTarget {
        match self {
            Model::Gaussian(t) => t,
            Model::GaussianPath(t) => t,
            Model::Logistic(t) => t,
            Model::Filamentary(t) => t,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub replication: usize,
    pub seed: u64,
    pub log_z: f64,
    pub posterior_mean: Vec<f64>,
    pub iterations: usize,
    pub gradient_evaluations: u64,
    pub final_gamma: f64,
    pub final_theta: Option<f64>,
    pub final_t: usize,
    pub wall_seconds: f64,
    pub trace: PathBuf,
}

fn file_name(stem: &str, ext: &str, rep: usize, reps: usize) -> String {
    if reps == 1 {
        format!("{stem}.{ext}")
    } else {
        format!("{stem}_rep{rep}.{ext}")
    }
}

/// Execute every replication, writing `trace*.csv` and `summary*.json` to `out`.
pub fn run_config(cfg: &RunConfig, out: &Path) -> Result<Vec<RunSummary>> {
    cfg.validate()?;
    let model = Model::build(&cfg.model)?;
    let target = model.target();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let root = RandomStream::new(cfg.seed);
    let mut summaries = Vec::with_capacity(cfg.replications);
    for rep in 0..cfg.replications {
        let start = Instant::now();
        let rng = root.substream(rep as u64);
        let (records, log_z, mean, grads, gamma, theta) = match cfg.sampler {
            SamplerKind::Snippet => {
                let sampler = Sampler::new(target, cfg.smc_config())?;
                let o = sampler.run(&rng)?;
                (o.records, o.log_z, o.posterior_mean, o.gradient_evaluations, o.cloud.gamma, o.cloud.theta)
            }
            SamplerKind::MarkovSnippet => {
                let mc =
                    MarkovConfig { n: cfg.n, t: cfg.t, ess_target: cfg.ess_target, max_iterations: cfg.max_iterations };
                let (cloud, recs) = run_markov_snippet(target, mc, &rng)?;
                let d = target.dim();
                let mut mean = vec![0.0; d];
                for x in &cloud.xs {
                    for (m, a) in mean.iter_mut().zip(x) {
                        *m += a / cloud.xs.len() as f64;
                    }
                }
                let records = recs
                    .iter()
                    .map(|r| IterationRecord {
                        iter: r.iter,
                        gamma: r.gamma,
                        theta: f64::NAN,
                        t: cfg.t,
                        tau: f64::NAN,
                        log_z_increment: r.log_z_increment,
                        log_z_cumulative: r.log_z_cumulative,
                        ess_unfolded: r.ess,
                        ess_seed: f64::NAN,
                        median_epsilon: f64::NAN,
                        min_log_weight: f64::NAN,
                        max_log_weight: f64::NAN,
                        wall_ms: 0.0,
                    })
                    .collect();
                (records, cloud.log_z, mean, 0, cloud.gamma, None)
            }
        };
        let trace = out.join(file_name("trace", "csv", rep, cfg.replications));
        write_trace(&trace, &records, cfg.trace_wall_clock)?;
        let summary = RunSummary {
            replication: rep,
            seed: cfg.seed,
            log_z,
            posterior_mean: mean,
            iterations: records.len(),
            gradient_evaluations: grads,
            final_gamma: gamma,
            final_theta: theta,
            final_t: records.last().map_or(cfg.t, |r| r.t),
            wall_seconds: start.elapsed().as_secs_f64(),
            trace,
        };
        let path = out.join(file_name("summary", "json", rep, cfg.replications));
        let json = serde_json::to_string_pretty(&summary)?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        summaries.push(summary);
    }
    Ok(summaries)
}

/// Canned logistic-regression configuration for a Sonar CSV.
pub fn sonar_demo_config(data: &Path) -> RunConfig {
    RunConfig {
        model: ModelSpec::Logistic { data: data.to_path_buf() },
        n: 500,
        t: 30,
        adapt_tau: false,
        t_max: None,
        bins: 50,
        epsilon: EpsilonMode::Adaptive { theta0: 0.1, s: 3.0 },
        ess_target: 0.8,
        integrators: d_mix(),
        resampling: Resampling::Multinomial,
        sampler: SamplerKind::Snippet,
        seed: 1,
        output_dir: PathBuf::from("sonar-demo"),
        replications: 1,
        max_iterations: 1000,
        trace_wall_clock: false,
    }
}
