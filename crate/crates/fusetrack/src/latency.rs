//! Wall-clock latency harness for the per-frame tracker step.
//!
//! Frames are generated up front; only `Tracker::step` runs inside the timed
//! region, mirroring an algorithm-only runtime measurement.

use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::association::CostCovariance;
use crate::error::{Error, Result};
use crate::filtering::SensorId;
use crate::motion::EgoMotion;
use crate::tracker::{Detection, SensorFrame, Tracker, TrackerConfig};

/// Per-cycle latency summary, in microseconds.
#[derive(Debug, Clone)]
pub struct LatencyReport {
    pub n_obstacles: usize,
    pub samples: usize,
    pub median_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
    pub mean_us: f64,
}

impl std::fmt::Display for LatencyReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "step latency over {} cycles with {} obstacles: median {:.2} us, p99 {:.2} us, max {:.2} us, mean {:.2} us",
            self.samples, self.n_obstacles, self.median_us, self.p99_us, self.max_us, self.mean_us
        )
    }
}

/// Build the synthetic frame sequence: `n_obstacles` persistent objects
/// observed alternately by both sensors with small jitter.
pub fn synthetic_frames(n_obstacles: usize, n_cycles: usize, seed: u64) -> Vec<SensorFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<(f64, f64)> = (0..n_obstacles)
        .map(|i| {
            let row = (i / 10) as f64;
            let col = (i % 10) as f64;
            (10.0 + col * 8.0, -20.0 + row * 8.0)
        })
        .collect();
    (0..n_cycles)
        .map(|c| {
            let sensor = if c % 2 == 0 { SensorId::Lidar } else { SensorId::Radar };
            let detections = centers
                .iter()
                .map(|&(x, y)| {
                    let jitter = |r: &mut ChaCha8Rng| {
                        let g: f64 = r.sample(StandardNormal);
                        g * 0.05
                    };
                    Detection {
                        x: x + jitter(&mut rng),
                        y: y + jitter(&mut rng),
                        vx: jitter(&mut rng),
                        vy: jitter(&mut rng),
                    }
                })
                .collect();
            SensorFrame { t: 0.02 * (c + 1) as f64, sensor, detections }
        })
        .collect()
}

/// Run `n_cycles` tracker steps over `n_obstacles` persistent objects and
/// report per-step wall-clock statistics.
pub fn bench(n_obstacles: usize, n_cycles: usize, seed: u64) -> Result<LatencyReport> {
    if n_obstacles == 0 {
        return Err(Error::InvalidInput("n_obstacles must be >= 1".into()));
    }
    if n_cycles == 0 {
        return Err(Error::InvalidInput("n_cycles must be >= 1".into()));
    }
    let frames = synthetic_frames(n_obstacles, n_cycles + 1, seed);
    let config = TrackerConfig {
        cost_covariance: CostCovariance::TrackPlusObs,
        ..TrackerConfig::default()
    };
    let mut tracker = Tracker::new(config)?;
    let ego = EgoMotion { t: 0.0, v: 0.0, omega: 0.0 };

    // warm-up frame initializes the list outside the timed region
    tracker.step(&frames[0], &ego)?;

    let mut samples_us = Vec::with_capacity(n_cycles);
    for frame in &frames[1..] {
        let start = Instant::now();
        let out = tracker.step(frame, &ego)?;
        let elapsed = start.elapsed();
        samples_us.push(elapsed.as_secs_f64() * 1e6);
        debug_assert_eq!(out.tracks.len(), n_obstacles);
    }

    samples_us.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pct = |q: f64| {
        let idx = ((samples_us.len() as f64 - 1.0) * q).round() as usize;
        samples_us[idx]
    };
    Ok(LatencyReport {
        n_obstacles,
        samples: samples_us.len(),
        median_us: pct(0.5),
        p99_us: pct(0.99),
        max_us: *samples_us.last().unwrap(),
        mean_us: samples_us.iter().sum::<f64>() / samples_us.len() as f64,
    })
}
