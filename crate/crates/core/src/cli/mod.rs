//! Run configuration, experiment drivers, trace output and the oracle suite.

mod config;
mod trace;
pub mod verify;

pub use config::{
    load_config, run_config, sonar_demo_config, MixtureComponent, Model, ModelSpec, RunConfig, RunSummary, SamplerKind,
    ToleranceSpec,
};
pub use trace::{write_trace, TRACE_HEADER};
