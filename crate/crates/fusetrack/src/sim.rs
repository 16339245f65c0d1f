//! Deterministic two-vehicle scenario simulator.
//!
//! Both vehicles follow the same piecewise-constant-curvature path (straight
//! highway, or alternating bends), the target leading the ego by an
//! arc-length gap. Sensor frames, odometry, RTK fixes and the exact relative
//! truth are sampled from closed-form poses, so a fixed seed reproduces the
//! log bundle byte for byte.

use nalgebra::Vector2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filtering::SensorId;
use crate::motion::EgoMotion;
use crate::tracker::{Detection, SensorFrame};
use crate::truth_eval::{wrap_angle, RelativeState, RtkFix, Vehicle};

/// RNG stream ids, so adding a sensor never perturbs the other streams.
mod stream {
    pub const LIDAR: u64 = 1;
    pub const RADAR: u64 = 2;
    pub const RTK_EGO: u64 = 3;
    pub const RTK_TARGET: u64 = 4;
    pub const LIDAR_DROPOUT: u64 = 5;
    pub const RADAR_DROPOUT: u64 = 6;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Highway,
    Bend,
}

/// Emulated sensor: rate, field of view, diagonal noise and availability.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensorSpec {
    pub rate_hz: f64,
    /// full angular aperture (rad), centred on the forward axis
    pub fov_rad: f64,
    /// phase offset of the first emission, as a fraction of the period
    pub phase: f64,
    /// diagonal of the observation covariance (variances)
    pub obs_var: [f64; 4],
    /// windows (start, end) during which the target is never detected
    pub dropout_windows: Vec<(f64, f64)>,
    /// independent per-frame miss probability outside the windows
    pub dropout_prob: f64,
    /// hold the reported velocity for this many frames (0 disables); mimics
    /// piecewise-constant velocity readouts seen on some Lidar stacks
    pub velocity_hold_frames: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub duration: f64,
    pub seed: u64,
    /// ego (and target) path speed, m/s
    pub speed: f64,
    /// arc-length lead of the target, m
    pub gap: f64,
    pub lidar: SensorSpec,
    pub radar: SensorSpec,
    pub rtk_rate_hz: f64,
    pub rtk_sigma_pos: f64,
    pub rtk_sigma_vel: f64,
    pub ego_rate_hz: f64,
    pub truth_rate_hz: f64,
    /// bend geometry: curvature magnitude (1/m) and length of each arc (m)
    pub bend_curvature: f64,
    pub bend_arc_len: f64,
    /// straight lead-in before the first bend (m)
    pub bend_lead_in: f64,
}

impl ScenarioConfig {
    pub fn highway(duration: f64, seed: u64) -> Self {
        Self {
            kind: ScenarioKind::Highway,
            duration,
            seed,
            speed: 26.4, // ~95 km/h
            gap: 20.0,
            lidar: SensorSpec {
                rate_hz: 25.0,
                fov_rad: std::f64::consts::TAU,
                phase: 1.0,
                obs_var: [0.02, 0.02, 0.5, 0.5],
                dropout_windows: Vec::new(),
                dropout_prob: 0.0,
                velocity_hold_frames: 0,
            },
            radar: SensorSpec {
                rate_hz: 15.0,
                fov_rad: 2.0 * 28.0f64.to_radians(),
                phase: 0.5,
                obs_var: [0.5, 0.5, 0.02, 0.02],
                dropout_windows: Vec::new(),
                dropout_prob: 0.0,
                velocity_hold_frames: 0,
            },
            rtk_rate_hz: 100.0,
            rtk_sigma_pos: 0.02,
            rtk_sigma_vel: 0.02,
            ego_rate_hz: 100.0,
            truth_rate_hz: 100.0,
            bend_curvature: 0.02,
            bend_arc_len: 80.0,
            bend_lead_in: 20.0,
        }
    }

    pub fn bend(duration: f64, seed: u64) -> Self {
        let mut cfg = Self::highway(duration, seed);
        cfg.kind = ScenarioKind::Bend;
        cfg.speed = 14.0;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.duration > 0.0) {
            problems.push(format!("duration must be > 0 (got {})", self.duration));
        }
        if !(self.speed > 0.0) {
            problems.push(format!("speed must be > 0 (got {})", self.speed));
        }
        for (name, spec) in [("lidar", &self.lidar), ("radar", &self.radar)] {
            if !(spec.rate_hz > 0.0) {
                problems.push(format!("{name}.rate_hz must be > 0 (got {})", spec.rate_hz));
            }
            if !(spec.fov_rad > 0.0 && spec.fov_rad <= std::f64::consts::TAU) {
                problems.push(format!(
                    "{name}.fov_rad must lie in (0, 2*pi] (got {})",
                    spec.fov_rad
                ));
            }
            if !(0.0..=1.0).contains(&spec.dropout_prob) {
                problems.push(format!(
                    "{name}.dropout_prob must lie in [0, 1] (got {})",
                    spec.dropout_prob
                ));
            }
            if spec.obs_var.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                problems.push(format!("{name}.obs_var entries must be finite and >= 0"));
            }
            for (a, b) in &spec.dropout_windows {
                if !(a < b) {
                    problems.push(format!("{name} dropout window ({a}, {b}) is empty"));
                }
            }
        }
        for (name, rate) in [
            ("rtk_rate_hz", self.rtk_rate_hz),
            ("ego_rate_hz", self.ego_rate_hz),
            ("truth_rate_hz", self.truth_rate_hz),
        ] {
            if !(rate > 0.0) {
                problems.push(format!("{name} must be > 0 (got {rate})"));
            }
        }
        if self.rtk_sigma_pos < 0.0 || self.rtk_sigma_vel < 0.0 {
            problems.push("rtk sigmas must be >= 0".into());
        }
        if self.kind == ScenarioKind::Bend {
            if !(self.bend_curvature > 0.0) {
                problems.push(format!(
                    "bend_curvature must be > 0 (got {})",
                    self.bend_curvature
                ));
            }
            if !(self.bend_arc_len > 0.0) {
                problems.push(format!("bend_arc_len must be > 0 (got {})", self.bend_arc_len));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// Pose and curvature of a path follower at a given arc length.
#[derive(Debug, Clone, Copy)]
pub struct PathState {
    pub position: Vector2<f64>,
    pub heading: f64,
    pub curvature: f64,
}

/// Piecewise constant-curvature path starting at the origin, heading 0.
#[derive(Debug, Clone)]
pub struct Path {
    /// (segment length, curvature); the last segment extends to infinity
    segments: Vec<(f64, f64)>,
}

impl Path {
    pub fn straight() -> Self {
        Self { segments: vec![(f64::INFINITY, 0.0)] }
    }

    /// Lead-in straight followed by arcs of alternating curvature sign.
    pub fn alternating_bends(lead_in: f64, curvature: f64, arc_len: f64, total_len: f64) -> Self {
        let mut segments = vec![(lead_in, 0.0)];
        let mut built = lead_in;
        let mut sign = 1.0;
        while built < total_len {
            segments.push((arc_len, sign * curvature));
            built += arc_len;
            sign = -sign;
        }
        // keep the final curvature beyond the planned length
        if let Some(last) = segments.last_mut() {
            last.0 = f64::INFINITY;
        }
        Self { segments }
    }

    pub fn state_at(&self, s: f64) -> PathState {
        let mut pos = Vector2::zeros();
        let mut heading = 0.0f64;
        let mut remaining = s.max(0.0);
        for &(len, kappa) in &self.segments {
            let run = remaining.min(len);
            if kappa.abs() < 1e-12 {
                pos += run * Vector2::new(heading.cos(), heading.sin());
            } else {
                let h1 = heading + kappa * run;
                pos += Vector2::new(
                    (h1.sin() - heading.sin()) / kappa,
                    (heading.cos() - h1.cos()) / kappa,
                );
                heading = h1;
            }
            remaining -= run;
            if remaining <= 0.0 {
                return PathState {
                    position: pos,
                    heading: wrap_angle(heading),
                    curvature: kappa,
                };
            }
        }
        let kappa = self.segments.last().map_or(0.0, |s| s.1);
        PathState { position: pos, heading: wrap_angle(heading), curvature: kappa }
    }
}

/// World snapshot of one vehicle.
#[derive(Debug, Clone, Copy)]
pub struct VehicleState {
    pub position: Vector2<f64>,
    pub velocity: Vector2<f64>,
    pub heading: f64,
    pub omega: f64,
}

fn vehicle_state(path: &Path, s: f64, speed: f64) -> VehicleState {
    let p = path.state_at(s);
    VehicleState {
        position: p.position,
        velocity: speed * Vector2::new(p.heading.cos(), p.heading.sin()),
        heading: p.heading,
        omega: p.curvature * speed,
    }
}

/// Exact relative state (transport term included) of target w.r.t. ego.
fn exact_relative(t: f64, ego: &VehicleState, target: &VehicleState) -> RelativeState {
    let (sh, ch) = ego.heading.sin_cos();
    let rot = |v: Vector2<f64>| Vector2::new(ch * v[0] + sh * v[1], -sh * v[0] + ch * v[1]);
    let r = rot(target.position - ego.position);
    let mut v = rot(target.velocity - ego.velocity);
    v -= ego.omega * Vector2::new(-r[1], r[0]);
    RelativeState { t, x: r[0], y: r[1], vx: v[0], vy: v[1] }
}

/// A complete simulated log bundle.
#[derive(Debug, Clone)]
pub struct LogBundle {
    /// both sensors merged, time ordered
    pub sensor_frames: Vec<SensorFrame>,
    pub ego: Vec<EgoMotion>,
    pub rtk: Vec<RtkFix>,
    pub truth: Vec<RelativeState>,
}

struct SimWorld {
    path: Path,
    speed: f64,
    gap: f64,
}

impl SimWorld {
    fn ego_at(&self, t: f64) -> VehicleState {
        vehicle_state(&self.path, self.speed * t, self.speed)
    }

    fn target_at(&self, t: f64) -> VehicleState {
        vehicle_state(&self.path, self.speed * t + self.gap, self.speed)
    }

    fn relative_at(&self, t: f64) -> RelativeState {
        exact_relative(t, &self.ego_at(t), &self.target_at(t))
    }
}

fn sensor_frames(
    world: &SimWorld,
    spec: &SensorSpec,
    sensor: SensorId,
    duration: f64,
    seed: u64,
    noise_stream: u64,
    dropout_stream: u64,
) -> Vec<SensorFrame> {
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(noise_stream);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(seed);
    drop_rng.set_stream(dropout_stream);

    let period = 1.0 / spec.rate_hz;
    let sigma: Vec<f64> = spec.obs_var.iter().map(|v| v.sqrt()).collect();
    let mut frames = Vec::new();
    let mut held_vel: Option<(f64, f64)> = None;
    let mut frame_idx: u64 = 0;
    loop {
        let t = (frame_idx as f64 + spec.phase) * period;
        if t > duration + 1e-9 {
            break;
        }
        frame_idx += 1;
        let rel = world.relative_at(t);
        let bearing = rel.y.atan2(rel.x);
        let in_fov = bearing.abs() <= spec.fov_rad * 0.5;
        let in_window = spec
            .dropout_windows
            .iter()
            .any(|&(a, b)| t >= a && t < b);
        // the random miss draw happens every frame so that the noise stream
        // is independent of the window configuration
        let random_miss = drop_rng.gen_bool(spec.dropout_prob.clamp(0.0, 1.0));
        let n: [f64; 4] = std::array::from_fn(|i| {
            let g: f64 = noise_rng.sample(StandardNormal);
            g * sigma[i]
        });

        let mut detections = Vec::new();
        if in_fov && !in_window && !random_miss {
            let mut vx = rel.vx + n[2];
            let mut vy = rel.vy + n[3];
            if spec.velocity_hold_frames > 1 {
                let refresh = (frame_idx - 1) % u64::from(spec.velocity_hold_frames) == 0;
                match (held_vel, refresh) {
                    (Some((hx, hy)), false) => {
                        vx = hx;
                        vy = hy;
                    }
                    _ => held_vel = Some((vx, vy)),
                }
            }
            detections.push(Detection {
                x: rel.x + n[0],
                y: rel.y + n[1],
                vx,
                vy,
            });
        }
        frames.push(SensorFrame { t, sensor, detections });
    }
    frames
}

/// Run the scenario and produce the four log streams.
pub fn simulate(config: &ScenarioConfig) -> Result<LogBundle> {
    config.validate()?;
    let path_len = config.speed * config.duration + config.gap + 10.0;
    let path = match config.kind {
        ScenarioKind::Highway => Path::straight(),
        ScenarioKind::Bend => Path::alternating_bends(
            config.bend_lead_in,
            config.bend_curvature,
            config.bend_arc_len,
            path_len,
        ),
    };
    let world = SimWorld { path, speed: config.speed, gap: config.gap };

    let lidar = sensor_frames(
        &world,
        &config.lidar,
        SensorId::Lidar,
        config.duration,
        config.seed,
        stream::LIDAR,
        stream::LIDAR_DROPOUT,
    );
    let radar = sensor_frames(
        &world,
        &config.radar,
        SensorId::Radar,
        config.duration,
        config.seed,
        stream::RADAR,
        stream::RADAR_DROPOUT,
    );
    let mut sensor_frames: Vec<SensorFrame> = lidar.into_iter().chain(radar).collect();
    sensor_frames.sort_by(|a, b| {
        a.t.partial_cmp(&b.t)
            .unwrap()
            .then_with(|| format!("{:?}", a.sensor).cmp(&format!("{:?}", b.sensor)))
    });

    let mut ego = Vec::new();
    let ego_n = (config.duration * config.ego_rate_hz + 1e-9).floor() as u64;
    for i in 0..=ego_n {
        let t = i as f64 / config.ego_rate_hz;
        let state = world.ego_at(t);
        ego.push(EgoMotion { t, v: config.speed, omega: state.omega });
    }

    let mut rtk = Vec::new();
    let mut rng_ego = ChaCha8Rng::seed_from_u64(config.seed);
    rng_ego.set_stream(stream::RTK_EGO);
    let mut rng_target = ChaCha8Rng::seed_from_u64(config.seed);
    rng_target.set_stream(stream::RTK_TARGET);
    let rtk_n = (config.duration * config.rtk_rate_hz + 1e-9).floor() as u64;
    for i in 0..=rtk_n {
        let t = i as f64 / config.rtk_rate_hz;
        for (vehicle, state, rng) in [
            (Vehicle::Ego, world.ego_at(t), &mut rng_ego),
            (Vehicle::Target, world.target_at(t), &mut rng_target),
        ] {
            let n: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
            rtk.push(RtkFix {
                t,
                vehicle,
                px: state.position[0] + n[0] * config.rtk_sigma_pos,
                py: state.position[1] + n[1] * config.rtk_sigma_pos,
                vx: state.velocity[0] + n[2] * config.rtk_sigma_vel,
                vy: state.velocity[1] + n[3] * config.rtk_sigma_vel,
                heading: Some(state.heading),
                omega: (vehicle == Vehicle::Ego).then_some(state.omega),
            });
        }
    }

    let mut truth = Vec::new();
    let truth_n = (config.duration * config.truth_rate_hz + 1e-9).floor() as u64;
    for i in 0..=truth_n {
        let t = i as f64 / config.truth_rate_hz;
        truth.push(world.relative_at(t));
    }

    Ok(LogBundle { sensor_frames, ego, rtk, truth })
}

/// True relative state at `t`, without sampling (for tests and oracles).
pub fn true_relative(config: &ScenarioConfig, t: f64) -> Result<RelativeState> {
    config.validate()?;
    let path_len = config.speed * config.duration + config.gap + 10.0;
    let path = match config.kind {
        ScenarioKind::Highway => Path::straight(),
        ScenarioKind::Bend => Path::alternating_bends(
            config.bend_lead_in,
            config.bend_curvature,
            config.bend_arc_len,
            path_len,
        ),
    };
    let world = SimWorld { path, speed: config.speed, gap: config.gap };
    Ok(world.relative_at(t))
}
