use std::path::Path;

use crate::error::{Error, Result};
use crate::smc::IterationRecord;

pub const TRACE_HEADER: [&str; 11] =
    ["iter", "gamma", "theta", "T", "tau", "logZ_inc", "logZ_cum", "ess_unfolded", "ess_seed", "median_eps", "wall_ms"];

/// Write one row per iteration. Wall-clock times are written as 0 unless
/// `wall_clock` is set, so that identical runs give identical files.
pub fn write_trace(path: &Path, records: &[IterationRecord], wall_clock: bool) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(TRACE_HEADER)?;
    for r in records {
        let wall = if wall_clock { r.wall_ms } else { 0.0 };
        w.write_record([
            r.iter.to_string(),
            r.gamma.to_string(),
            r.theta.to_string(),
            r.t.to_string(),
            r.tau.to_string(),
            r.log_z_increment.to_string(),
            r.log_z_cumulative.to_string(),
            r.ess_unfolded.to_string(),
            r.ess_seed.to_string(),
            r.median_epsilon.to_string(),
            wall.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
