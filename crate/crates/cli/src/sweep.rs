//! Independent runs over a grid of configurations.
//!
//! Cells share nothing mutable. Cell `i` of a grid built by [`seed_grid`]
//! uses seed `mix(base_seed, i)`, so any cell can be rerun on its own.

use coded_backoff_core::rng::mix;
use coded_backoff_core::sim::{run_quiet, RunConfig, RunError, RunReport};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SweepError {
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

/// `runs` copies of each template, template-major, with mixed seeds.
pub fn seed_grid(templates: &[RunConfig], runs: u64, base_seed: u64) -> Vec<RunConfig> {
    let mut out = Vec::new();
    for template in templates {
        for _ in 0..runs {
            let mut c = template.clone();
            c.seed = mix(base_seed, out.len() as u64);
            out.push(c);
        }
    }
    out
}

/// Runs every cell. Results come back in grid order; a failed cell does not
/// stop the others.
pub fn sweep(
    grid: &[RunConfig],
    jobs: usize,
) -> Result<Vec<Result<RunReport, RunError>>, SweepError> {
    if grid.is_empty() {
        return Err(SweepError::EmptyGrid);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| SweepError::Pool(e.to_string()))?;
    Ok(pool.install(|| grid.par_iter().map(run_quiet).collect()))
}
