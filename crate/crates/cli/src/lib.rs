//! Experiment harness: configuration, scenarios and run artifacts.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

pub mod artifacts;
pub mod config;
pub mod scenarios;

use artifacts::Outcome;
use config::{ExperimentConfig, Resolved, Scenario};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("{scenario}: {source}")]
    Compute { scenario: Scenario, source: psido_core::Error },
    #[error("writing artifacts: {0}")]
    Io(#[from] std::io::Error),
}

/// One finished scenario.
#[derive(Debug)]
pub struct RunRecord {
    pub scenario: Scenario,
    pub dir: PathBuf,
    pub outcome: Outcome,
    pub elapsed: Duration,
}

extern "C" {
    fn openblas_set_num_threads(n: i32);
}

/// Caps the BLAS worker pool. Dense kernels are the only parallel sections.
pub fn set_threads(n: usize) {
    // SAFETY: plain setter exported by the linked OpenBLAS.
    unsafe { openblas_set_num_threads(n.max(1) as i32) }
}

/// Runs `cfg` into `out`; `full-suite` runs every scenario with its defaults into `out/<name>/`.
pub fn execute(cfg: &Resolved, out: &Path, mut progress: impl FnMut(&RunRecord)) -> Result<Vec<RunRecord>, RunError> {
    if let Some(t) = cfg.threads {
        set_threads(t);
    }
    let mut runs = Vec::new();
    let plan: Vec<(Resolved, PathBuf)> = if cfg.scenario == Scenario::FullSuite {
        Scenario::suite()
            .iter()
            .map(|s| {
                let sub = ExperimentConfig { seed: Some(cfg.seed), threads: cfg.threads, ..ExperimentConfig::for_scenario(*s) };
                Ok((Resolved::from_config(&sub, None)?, out.join(s.name())))
            })
            .collect::<Result<_, RunError>>()?
    } else {
        vec![(cfg.clone(), out.to_path_buf())]
    };
    for (c, dir) in plan {
        let start = Instant::now();
        let outcome = scenarios::run_scenario(&c).map_err(|source| RunError::Compute { scenario: c.scenario, source })?;
        artifacts::write_run(&dir, &c, &outcome)?;
        let rec = RunRecord { scenario: c.scenario, dir, outcome, elapsed: start.elapsed() };
        progress(&rec);
        runs.push(rec);
    }
    Ok(runs)
}
