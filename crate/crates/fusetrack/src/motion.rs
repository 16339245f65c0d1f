//! Constant-velocity transition matrices and the ego-motion compensated
//! re-expression of tracked states in the new ego frame.
//!
//! Between two sensor frames the ego vehicle travels `d = v * delta` and
//! rotates by the cap angle `theta = omega * delta`. Tracks kept in the old
//! ego frame are advanced under constant velocity, shifted by the travelled
//! distance and rotated into the new frame.

use nalgebra::{Matrix2, Matrix4, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filtering::{symmetrize, Mat4, StateEstimate, Vec4};

/// Odometry sample from the CAN stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoMotion {
    /// timestamp (s)
    pub t: f64,
    /// linear speed (m/s)
    pub v: f64,
    /// angular rate (rad/s)
    pub omega: f64,
}

impl EgoMotion {
    pub fn stationary(t: f64) -> Self {
        Self { t, v: 0.0, omega: 0.0 }
    }
}

/// Elapsed-time step derived from an [`EgoMotion`] sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameStep {
    /// elapsed time (s), strictly positive
    pub delta: f64,
    /// cap angle theta = omega * delta (rad)
    pub theta: f64,
    /// travelled distance d = v * delta (m)
    pub d: f64,
}

impl FrameStep {
    pub fn new(delta: f64, ego: &EgoMotion) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidInput(format!(
                "frame step delta must be > 0, got {delta}"
            )));
        }
        if !ego.v.is_finite() || !ego.omega.is_finite() {
            return Err(Error::InvalidInput("non-finite ego motion".into()));
        }
        Ok(Self {
            delta,
            theta: ego.omega * delta,
            d: ego.v * delta,
        })
    }
}

/// Sign convention for the frame-change rotation.
///
/// The reference formulation rotates by `+theta`; standard kinematics for a
/// frame that itself rotated by `+theta` calls for `-theta`. Both are kept
/// selectable; the simulator round-trip tests show that `Negated` is the one
/// consistent with a frame rotating by `+theta` (see the tracker tests).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RotationConvention {
    /// Rotate state by `R(+theta)` as printed in the reference formulation.
    #[default]
    Legacy,
    /// Rotate state by `R(-theta)`.
    Negated,
}

/// Constant-velocity transition for an elapsed time `delta`.
pub fn cv_transition(delta: f64) -> Result<Mat4> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidInput(format!(
            "cv_transition requires delta > 0, got {delta}"
        )));
    }
    let mut f = Mat4::identity();
    f[(0, 2)] = delta;
    f[(1, 3)] = delta;
    Ok(f)
}

fn rotation2(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Block-diagonal rotation acting on `[x, y, vx, vy]`.
pub fn block_rotation(theta: f64) -> Mat4 {
    let r = rotation2(theta);
    let mut b = Matrix4::zeros();
    for i in 0..2 {
        for j in 0..2 {
            b[(i, j)] = r[(i, j)];
            b[(i + 2, j + 2)] = r[(i, j)];
        }
    }
    b
}

/// Re-express a track in the new ego frame after the ego vehicle moved by
/// `step` (constant-velocity advance, travelled-distance shift, rotation).
///
/// Positions map as `R(position + delta * velocity - [d cos theta, d sin theta])`
/// and velocities as `R velocity`, with `R` rotating by `+theta` or `-theta`
/// depending on `convention`. The covariance is propagated through the CV
/// transition, inflated by `process_cov` and congruently rotated.
pub fn ego_compensate(
    track: &StateEstimate,
    step: &FrameStep,
    process_cov: &Mat4,
    convention: RotationConvention,
) -> Result<StateEstimate> {
    if !track.is_finite() {
        return Err(Error::InvalidInput("non-finite track state".into()));
    }
    if !process_cov.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("non-finite process covariance".into()));
    }
    let f = cv_transition(step.delta)?;
    let angle = match convention {
        RotationConvention::Legacy => step.theta,
        RotationConvention::Negated => -step.theta,
    };
    let r = rotation2(angle);
    let (s, c) = step.theta.sin_cos();

    let pos = Vector2::new(track.mean[0], track.mean[1]);
    let vel = Vector2::new(track.mean[2], track.mean[3]);
    let advanced = pos + vel * step.delta - Vector2::new(step.d * c, step.d * s);
    let pos_new = r * advanced;
    let vel_new = r * vel;

    let block = block_rotation(angle);
    let cov = symmetrize(&(block * (f * track.cov * f.transpose() + process_cov) * block.transpose()));

    Ok(StateEstimate {
        mean: Vec4::new(pos_new[0], pos_new[1], vel_new[0], vel_new[1]),
        cov,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtering::kalman_predict;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn cv_transition_shape() {
        let f = cv_transition(0.04).unwrap();
        let state = Vec4::new(10.0, 0.0, -5.0, 0.0);
        let out = f * state;
        assert_abs_diff_eq!(out, Vec4::new(9.8, 0.0, -5.0, 0.0), epsilon = 1e-12);

        let f = cv_transition(1.0).unwrap();
        let out = f * Vec4::new(0.0, 0.0, 1.0, 2.0);
        assert_abs_diff_eq!(out, Vec4::new(1.0, 2.0, 1.0, 2.0), epsilon = 1e-12);
    }

    #[test]
    fn cv_transition_small_delta_near_identity() {
        let f = cv_transition(1e-12).unwrap();
        assert_abs_diff_eq!(f, Mat4::identity(), epsilon = 1e-11);
    }

    #[test]
    fn cv_transition_rejects_nonpositive() {
        assert!(cv_transition(0.0).is_err());
        assert!(cv_transition(-0.1).is_err());
        assert!(cv_transition(f64::NAN).is_err());
    }

    #[test]
    fn stationary_ego_reduces_to_cv_predict() {
        let track = StateEstimate::new(
            Vec4::new(5.0, -3.0, 1.0, 0.5),
            Mat4::from_diagonal(&Vec4::new(0.2, 0.2, 0.1, 0.1)),
        );
        let q = Mat4::identity() * 0.01;
        let step = FrameStep::new(0.1, &EgoMotion::stationary(0.0)).unwrap();
        let out = ego_compensate(&track, &step, &q, RotationConvention::Legacy).unwrap();
        let expect = kalman_predict(&track, &cv_transition(0.1).unwrap(), &q).unwrap();
        assert_abs_diff_eq!(out.mean, expect.mean, epsilon = 1e-12);
        assert_abs_diff_eq!(out.cov, expect.cov, epsilon = 1e-12);
    }

    #[test]
    fn straight_line_travel_shifts_position() {
        let track = StateEstimate::new(Vec4::new(20.0, 0.0, 0.0, 0.0), Mat4::identity());
        let ego = EgoMotion { t: 0.0, v: 10.0, omega: 0.0 };
        let step = FrameStep::new(0.1, &ego).unwrap();
        let out = ego_compensate(&track, &step, &Mat4::zeros(), RotationConvention::Legacy).unwrap();
        assert_abs_diff_eq!(out.mean, Vec4::new(19.0, 0.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn pure_rotation_case() {
        // v = 0, zero velocities, theta = pi/2
        let track = StateEstimate::new(Vec4::new(1.0, 0.0, 0.0, 0.0), Mat4::identity());
        let ego = EgoMotion { t: 0.0, v: 0.0, omega: FRAC_PI_2 };
        let step = FrameStep::new(1.0, &ego).unwrap();
        let out = ego_compensate(&track, &step, &Mat4::zeros(), RotationConvention::Legacy).unwrap();
        assert_abs_diff_eq!(out.mean, Vec4::new(0.0, 1.0, 0.0, 0.0), epsilon = 1e-12);
        let out = ego_compensate(&track, &step, &Mat4::zeros(), RotationConvention::Negated).unwrap();
        assert_abs_diff_eq!(out.mean, Vec4::new(0.0, -1.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn rotation_preserves_norms() {
        let track = StateEstimate::new(Vec4::new(3.0, 4.0, 0.0, 0.0), Mat4::identity());
        for theta in [-1.2, -0.3, 0.7, 2.9] {
            let ego = EgoMotion { t: 0.0, v: 0.0, omega: theta };
            let step = FrameStep::new(1.0, &ego).unwrap();
            let out =
                ego_compensate(&track, &step, &Mat4::zeros(), RotationConvention::Legacy).unwrap();
            let pos_norm = (out.mean[0].powi(2) + out.mean[1].powi(2)).sqrt();
            assert_abs_diff_eq!(pos_norm, 5.0, epsilon = 1e-12);
            let vel_norm = (out.mean[2].powi(2) + out.mean[3].powi(2)).sqrt();
            assert_abs_diff_eq!(vel_norm, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rotations_compose() {
        let track = StateEstimate::new(Vec4::new(2.0, -1.0, 0.0, 0.0), Mat4::identity());
        let (t1, t2) = (0.4, -0.9);
        let step = |theta: f64| {
            FrameStep::new(1.0, &EgoMotion { t: 0.0, v: 0.0, omega: theta }).unwrap()
        };
        let q = Mat4::zeros();
        let two = ego_compensate(
            &ego_compensate(&track, &step(t1), &q, RotationConvention::Legacy).unwrap(),
            &step(t2),
            &q,
            RotationConvention::Legacy,
        )
        .unwrap();
        let one = ego_compensate(&track, &step(t1 + t2), &q, RotationConvention::Legacy).unwrap();
        assert_abs_diff_eq!(two.mean, one.mean, epsilon = 1e-9);
    }

    #[test]
    fn covariance_stays_symmetric_psd() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let a = Mat4::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let cov = symmetrize(&(a * a.transpose()));
            let track = StateEstimate::new(
                Vec4::from_fn(|_, _| rng.gen_range(-20.0..20.0)),
                cov,
            );
            let ego = EgoMotion {
                t: 0.0,
                v: rng.gen_range(-30.0..30.0),
                omega: rng.gen_range(-1.0..1.0),
            };
            let step = FrameStep::new(rng.gen_range(0.01..0.5), &ego).unwrap();
            let q = Mat4::identity() * rng.gen_range(0.0..0.5);
            let out = ego_compensate(&track, &step, &q, RotationConvention::Legacy).unwrap();
            let asym = (out.cov - out.cov.transpose()).abs().max();
            assert!(asym <= 1e-9);
            let eig = out.cov.symmetric_eigenvalues();
            assert!(eig.iter().all(|&l| l >= -1e-9), "not PSD: {eig:?}");
        }
    }

    #[test]
    fn frame_step_rejects_bad_delta() {
        let ego = EgoMotion::stationary(0.0);
        assert!(FrameStep::new(0.0, &ego).is_err());
        assert!(FrameStep::new(-1.0, &ego).is_err());
        assert!(FrameStep::new(f64::INFINITY, &ego).is_err());
    }
}
