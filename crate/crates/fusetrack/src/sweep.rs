//! Seeded multi-run evaluation sweeps: simulate, fuse and score one scenario
//! per seed. Runs are independent, so with the `parallel` feature they fan
//! out over a rayon pool; the sequential path is always available and
//! produces identical results.

use crate::error::Result;
use crate::motion::RotationConvention;
use crate::association::CostCovariance;
use crate::sim::{simulate, ScenarioConfig};
use crate::tracker::{process_log, TrackerConfig};
use crate::truth_eval::{evaluate, EvalConfig, MseReport};

/// Evaluation of one seeded run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub report: MseReport,
}

/// Tracker settings used for accuracy sweeps: chi-square-consistent gating
/// and the kinematically consistent rotation sign.
pub fn sweep_tracker_config() -> TrackerConfig {
    TrackerConfig {
        cost_covariance: CostCovariance::TrackPlusObs,
        rotation: RotationConvention::Negated,
        ..TrackerConfig::default()
    }
}

/// Simulate, fuse and evaluate a single seed.
pub fn run_one(
    base: &ScenarioConfig,
    tracker: &TrackerConfig,
    eval_cfg: &EvalConfig,
    seed: u64,
) -> Result<RunResult> {
    let mut config = base.clone();
    config.seed = seed;
    let bundle = simulate(&config)?;
    let (fused, _stats) = process_log(&bundle.sensor_frames, &bundle.ego, tracker)?;
    let report = evaluate(&bundle.sensor_frames, &fused, &bundle.truth, &bundle.ego, eval_cfg)?;
    Ok(RunResult { seed, report })
}

/// Sequential sweep over seeds.
pub fn run_sweep_sequential(
    base: &ScenarioConfig,
    tracker: &TrackerConfig,
    eval_cfg: &EvalConfig,
    seeds: &[u64],
) -> Result<Vec<RunResult>> {
    seeds
        .iter()
        .map(|&s| run_one(base, tracker, eval_cfg, s))
        .collect()
}

/// Sweep over seeds, in parallel when the `parallel` feature is enabled.
pub fn run_sweep(
    base: &ScenarioConfig,
    tracker: &TrackerConfig,
    eval_cfg: &EvalConfig,
    seeds: &[u64],
) -> Result<Vec<RunResult>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        seeds
            .par_iter()
            .map(|&s| run_one(base, tracker, eval_cfg, s))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_sweep_sequential(base, tracker, eval_cfg, seeds)
    }
}
