//! The fused-object-list pipeline: initialize on the first sensor frame,
//! then per frame compensate ego motion, associate, gate, correct, insert
//! and remove tracks.
//!
//! Detections report the rate of change of relative position in the rotating
//! ego frame. The printed state propagation assumes ground-referenced
//! velocities expressed in the ego frame, so by default the tracker bridges
//! the two conventions with the odometry sample of the frame: ingest with
//! `v_state = v_det + omega x r + v_ego`, report the inverse. The bridge is
//! exact given the odometry and can be disabled for sensors that already
//! deliver ground-referenced velocities.

use serde::{Deserialize, Serialize};

use crate::association::{hungarian_solve, mahalanobis_cost, CostCovariance};
use crate::error::{Error, Result};
use crate::filtering::{
    chi2_gate_threshold, kalman_update, symmetrize, Mat4, NoiseModel, SensorId, StateEstimate,
    Vec4,
};
use crate::motion::{ego_compensate, EgoMotion, FrameStep, RotationConvention};

/// A single sensor return, relative to the ego frame at emission time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

impl Detection {
    pub fn as_vec4(&self) -> Vec4 {
        Vec4::new(self.x, self.y, self.vx, self.vy)
    }

    pub fn from_vec4(v: &Vec4) -> Self {
        Self { x: v[0], y: v[1], vx: v[2], vy: v[3] }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.vx.is_finite() && self.vy.is_finite()
    }
}

/// Timestamped batch of detections from one sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    pub t: f64,
    pub sensor: SensorId,
    pub detections: Vec<Detection>,
}

/// One tracked obstacle.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub state: StateEstimate,
    /// number of updates absorbed, >= 1
    pub age: u32,
    pub created_at: f64,
    pub updated_at: f64,
    pub last_sensor: SensorId,
    /// consecutive cycles survived without an update
    pub coasted: u32,
}

/// The fused obstacle list at a given time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FusedList {
    pub t: f64,
    pub tracks: Vec<Track>,
}

impl FusedList {
    pub fn empty(t: f64) -> Self {
        Self { t, tracks: Vec::new() }
    }
}

/// What the velocity components of a detection mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionVelocity {
    /// Rate of change of the relative position in the rotating ego frame;
    /// the tracker bridges to ground-referenced velocities via odometry.
    #[default]
    RelativeRate,
    /// Already ground-referenced in the ego frame; no bridging.
    GroundInFrame,
}

#[derive(Debug, Clone)]
pub struct TrackerConfig {
    /// gate quantile order (chi-square, 4 dof)
    pub alpha: f64,
    /// cycles an unassociated track survives before deletion
    pub coast_cycles: u32,
    /// whether a frame with no detections deletes every track
    pub empty_frame_deletes: bool,
    pub cost_covariance: CostCovariance,
    /// optional pre-assignment gate on cost entries
    pub forbid_above: Option<f64>,
    pub rotation: RotationConvention,
    pub detection_velocity: DetectionVelocity,
    pub lidar: NoiseModel,
    pub radar: NoiseModel,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        let process = Mat4::from_diagonal(&Vec4::new(0.05, 0.05, 0.05, 0.05));
        Self {
            alpha: 0.9,
            coast_cycles: 0,
            empty_frame_deletes: true,
            cost_covariance: CostCovariance::default(),
            forbid_above: None,
            rotation: RotationConvention::default(),
            detection_velocity: DetectionVelocity::default(),
            lidar: NoiseModel {
                sensor_id: SensorId::Lidar,
                process_cov: process,
                obs_cov: Mat4::from_diagonal(&Vec4::new(0.02, 0.02, 0.5, 0.5)),
            },
            radar: NoiseModel {
                sensor_id: SensorId::Radar,
                process_cov: process,
                obs_cov: Mat4::from_diagonal(&Vec4::new(0.5, 0.5, 0.02, 0.02)),
            },
        }
    }
}

impl TrackerConfig {
    pub fn noise(&self, sensor: SensorId) -> &NoiseModel {
        match sensor {
            SensorId::Lidar => &self.lidar,
            SensorId::Radar => &self.radar,
        }
    }
}

/// Linear map turning a relative-rate vector into a ground-referenced one
/// (without the constant ego-velocity shift).
fn bridge_matrix(omega: f64) -> Mat4 {
    let mut t = Mat4::identity();
    t[(2, 1)] = -omega;
    t[(3, 0)] = omega;
    t
}

fn ingest_vector(z: &Vec4, ego: &EgoMotion) -> Vec4 {
    Vec4::new(
        z[0],
        z[1],
        z[2] - ego.omega * z[1] + ego.v,
        z[3] + ego.omega * z[0],
    )
}

fn report_vector(s: &Vec4, ego: &EgoMotion) -> Vec4 {
    Vec4::new(
        s[0],
        s[1],
        s[2] + ego.omega * s[1] - ego.v,
        s[3] - ego.omega * s[0],
    )
}

/// First fused list: one track per detection, state taken verbatim from the
/// sensor with the sensor's observation covariance as uncertainty.
pub fn init_list(frame: &SensorFrame, noise: &NoiseModel) -> FusedList {
    let tracks = frame
        .detections
        .iter()
        .enumerate()
        .map(|(i, d)| Track {
            id: i as u64,
            state: StateEstimate::new(d.as_vec4(), noise.obs_cov),
            age: 1,
            created_at: frame.t,
            updated_at: frame.t,
            last_sensor: noise.sensor_id,
            coasted: 0,
        })
        .collect();
    FusedList { t: frame.t, tracks }
}

/// Summary counters from a replay.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProcessStats {
    pub frames: u64,
    pub dropped_stale: u64,
    pub ego_misses: u64,
}

/// Latest ego-motion record at or before `t`, if any.
pub fn ego_at(records: &[EgoMotion], t: f64) -> Option<EgoMotion> {
    let idx = records.partition_point(|e| e.t <= t);
    if idx == 0 {
        None
    } else {
        Some(records[idx - 1])
    }
}

/// Stateful GNN tracker over an asynchronous Lidar/Radar frame stream.
pub struct Tracker {
    config: TrackerConfig,
    gamma: f64,
    list: Option<FusedList>,
    next_id: u64,
    pub stats: ProcessStats,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        let gamma = chi2_gate_threshold(config.alpha, 4)?;
        Ok(Self {
            config,
            gamma,
            list: None,
            next_id: 0,
            stats: ProcessStats::default(),
        })
    }

    pub fn gate_threshold(&self) -> f64 {
        self.gamma
    }

    /// Internal list in the tracker's working velocity convention.
    pub fn list(&self) -> Option<&FusedList> {
        self.list.as_ref()
    }

    fn fresh_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn spawn(&mut self, mean: Vec4, cov: Mat4, t: f64, sensor: SensorId) -> Track {
        Track {
            id: self.fresh_id(),
            state: StateEstimate::new(mean, cov),
            age: 1,
            created_at: t,
            updated_at: t,
            last_sensor: sensor,
            coasted: 0,
        }
    }

    /// Process one frame; returns the updated list expressed back in the
    /// detection velocity convention.
    pub fn step(&mut self, frame: &SensorFrame, ego: &EgoMotion) -> Result<FusedList> {
        for d in &frame.detections {
            if !d.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "non-finite detection in frame at t={}",
                    frame.t
                )));
            }
        }
        let bridge = self.config.detection_velocity == DetectionVelocity::RelativeRate;
        let noise = self.config.noise(frame.sensor).clone();
        let (obs_cov, observations): (Mat4, Vec<Vec4>) = if bridge {
            let tm = bridge_matrix(ego.omega);
            (
                symmetrize(&(tm * noise.obs_cov * tm.transpose())),
                frame
                    .detections
                    .iter()
                    .map(|d| ingest_vector(&d.as_vec4(), ego))
                    .collect(),
            )
        } else {
            (
                noise.obs_cov,
                frame.detections.iter().map(|d| d.as_vec4()).collect(),
            )
        };

        let list = match self.list.take() {
            None => {
                // first frame initializes the list
                let mut list = FusedList::empty(frame.t);
                for z in &observations {
                    list.tracks.push(self.spawn(*z, obs_cov, frame.t, frame.sensor));
                }
                self.stats.frames += 1;
                list
            }
            Some(prev) => {
                if frame.t <= prev.t {
                    let err = Error::StaleFrame {
                        frame_t: frame.t,
                        list_t: prev.t,
                    };
                    self.list = Some(prev);
                    self.stats.dropped_stale += 1;
                    return Err(err);
                }
                let next = self.advance(&prev, frame, ego, &observations, &obs_cov)?;
                self.stats.frames += 1;
                next
            }
        };
        let reported = if bridge {
            report_list(&list, ego)
        } else {
            list.clone()
        };
        self.list = Some(list);
        Ok(reported)
    }

    fn advance(
        &mut self,
        prev: &FusedList,
        frame: &SensorFrame,
        ego: &EgoMotion,
        observations: &[Vec4],
        obs_cov: &Mat4,
    ) -> Result<FusedList> {
        let noise = self.config.noise(frame.sensor);
        let step = FrameStep::new(frame.t - prev.t, ego)?;
        let compensated: Vec<StateEstimate> = prev
            .tracks
            .iter()
            .map(|tr| {
                ego_compensate(&tr.state, &step, &noise.process_cov, self.config.rotation)
                    .map_err(|_| Error::SingularInnovation { track: Some(tr.id) })
            })
            .collect::<Result<_>>()?;

        let costs = mahalanobis_cost(
            &compensated,
            observations,
            obs_cov,
            self.config.cost_covariance,
        )
        .map_err(|e| match e {
            Error::SingularInnovation { track: Some(idx) } => Error::SingularInnovation {
                track: Some(prev.tracks[idx as usize].id),
            },
            other => other,
        })?;
        let assignment = hungarian_solve(&costs, self.config.forbid_above);

        let n_tracks = prev.tracks.len();
        let mut updated: Vec<Option<Track>> = vec![None; n_tracks];
        let mut obs_taken = vec![false; observations.len()];

        for &(ti, oi) in &assignment.pairs {
            let d2 = costs.get(ti, oi);
            if d2 < self.gamma {
                let (state, _innov) = kalman_update(&compensated[ti], &observations[oi], obs_cov)
                    .map_err(|_| Error::SingularInnovation {
                        track: Some(prev.tracks[ti].id),
                    })?;
                let old = &prev.tracks[ti];
                updated[ti] = Some(Track {
                    id: old.id,
                    state,
                    age: old.age + 1,
                    created_at: old.created_at,
                    updated_at: frame.t,
                    last_sensor: frame.sensor,
                    coasted: 0,
                });
                obs_taken[oi] = true;
            }
            // gate failure: both sides fall through as unassociated
        }

        let empty_frame = frame.detections.is_empty();
        let keep_all = empty_frame && !self.config.empty_frame_deletes;
        let mut tracks = Vec::with_capacity(n_tracks + observations.len());
        for (ti, slot) in updated.into_iter().enumerate() {
            match slot {
                Some(tr) => tracks.push(tr),
                None => {
                    let old = &prev.tracks[ti];
                    if keep_all || old.coasted < self.config.coast_cycles {
                        tracks.push(Track {
                            id: old.id,
                            state: compensated[ti].clone(),
                            age: old.age,
                            created_at: old.created_at,
                            updated_at: old.updated_at,
                            last_sensor: old.last_sensor,
                            coasted: if keep_all { old.coasted } else { old.coasted + 1 },
                        });
                    }
                    // otherwise removed
                }
            }
        }
        for (oi, z) in observations.iter().enumerate() {
            if !obs_taken[oi] {
                tracks.push(self.spawn(*z, *obs_cov, frame.t, frame.sensor));
            }
        }
        Ok(FusedList { t: frame.t, tracks })
    }
}

/// Express a fused list back in the detection velocity convention.
fn report_list(list: &FusedList, ego: &EgoMotion) -> FusedList {
    let inv = bridge_matrix(-ego.omega); // exact inverse of bridge_matrix(omega)
    let ego_back = EgoMotion { t: ego.t, v: ego.v, omega: ego.omega };
    FusedList {
        t: list.t,
        tracks: list
            .tracks
            .iter()
            .map(|tr| {
                let mean = report_vector(&tr.state.mean, &ego_back);
                let cov = symmetrize(&(inv * tr.state.cov * inv.transpose()));
                Track {
                    state: StateEstimate::new(mean, cov),
                    ..tr.clone()
                }
            })
            .collect(),
    }
}

/// Replay driver: one output list per accepted frame; ego lookup takes the
/// latest record at or before the frame, stationary if none exists yet.
pub fn process_log(
    frames: &[SensorFrame],
    ego: &[EgoMotion],
    config: &TrackerConfig,
) -> Result<(Vec<FusedList>, ProcessStats)> {
    let mut tracker = Tracker::new(config.clone())?;
    let mut out = Vec::with_capacity(frames.len());
    for frame in frames {
        let motion = match ego_at(ego, frame.t) {
            Some(m) => m,
            None => {
                tracker.stats.ego_misses += 1;
                EgoMotion::stationary(frame.t)
            }
        };
        match tracker.step(frame, &motion) {
            Ok(list) => out.push(list),
            Err(Error::StaleFrame { frame_t, list_t }) => {
                log::warn!("dropping stale frame t={frame_t} (list at t={list_t})");
            }
            Err(other) => return Err(other),
        }
    }
    Ok((out, tracker.stats))
}
