//! Ground truth from two-vehicle RTK logs (composition of movements),
//! target matching, interpolation, MSE computation and sensor noise
//! covariance estimation.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filtering::{Mat4, Vec4};
use crate::motion::EgoMotion;
use crate::tracker::{FusedList, SensorFrame};

/// Which vehicle an RTK fix belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vehicle {
    Ego,
    Target,
}

/// One RTK sample: global pose and velocity in the reference frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RtkFix {
    pub t: f64,
    pub vehicle: Vehicle,
    pub px: f64,
    pub py: f64,
    pub vx: f64,
    pub vy: f64,
    /// heading in (-pi, pi]; required for the ego vehicle
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heading: Option<f64>,
    /// angular rate; carried for the ego vehicle so the recomposition does
    /// not have to differentiate the heading numerically
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
}

/// Relative state of the target in the ego frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeState {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

impl RelativeState {
    pub fn as_vec4(&self) -> Vec4 {
        Vec4::new(self.x, self.y, self.vx, self.vy)
    }
}

/// The four evaluated quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    X,
    Y,
    Vx,
    Vy,
}

impl Quantity {
    pub const ALL: [Quantity; 4] = [Quantity::X, Quantity::Y, Quantity::Vx, Quantity::Vy];

    pub fn of(&self, s: &RelativeState) -> f64 {
        match self {
            Quantity::X => s.x,
            Quantity::Y => s.y,
            Quantity::Vx => s.vx,
            Quantity::Vy => s.vy,
        }
    }
}

impl std::fmt::Display for Quantity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Quantity::X => "x",
            Quantity::Y => "y",
            Quantity::Vx => "vx",
            Quantity::Vy => "vy",
        };
        write!(f, "{s}")
    }
}

/// Data source being scored against the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Radar,
    Lidar,
    Fusion,
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Source::Radar => "Radar",
            Source::Lidar => "Lidar",
            Source::Fusion => "Fusion",
        };
        write!(f, "{s}")
    }
}

/// One row of the evaluation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MseRow {
    pub source: Source,
    pub quantity: Quantity,
    pub mse: f64,
    pub n: usize,
    pub availability: f64,
}

/// Full evaluation report: one row per source and quantity.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MseReport {
    pub rows: Vec<MseRow>,
}

impl MseReport {
    pub fn get(&self, source: Source, quantity: Quantity) -> Option<&MseRow> {
        self.rows
            .iter()
            .find(|r| r.source == source && r.quantity == quantity)
    }

    pub fn mse(&self, source: Source, quantity: Quantity) -> f64 {
        self.get(source, quantity).map_or(f64::NAN, |r| r.mse)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("source,quantity,mse,n,availability\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.source, r.quantity, r.mse, r.n, r.availability
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

fn rotation(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut w = a % two_pi;
    if w <= -std::f64::consts::PI {
        w += two_pi;
    } else if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

/// Relative state of `target` in the ego frame via composition of movements.
///
/// Position: `r = R(-heading) (p_t - p_e)`. Velocity: the rotated velocity
/// difference, minus the transport term `omega x r` when `include_transport`
/// is set, which makes it the exact derivative of `r` in the rotating frame.
pub fn relative_state(
    ego: &RtkFix,
    target: &RtkFix,
    omega: f64,
    include_transport: bool,
) -> Result<RelativeState> {
    let heading = ego
        .heading
        .ok_or_else(|| Error::InvalidInput("ego RTK fix is missing the heading".into()))?;
    if (ego.t - target.t).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "ego and target fixes must share a timestamp ({} vs {})",
            ego.t, target.t
        )));
    }
    let rot = rotation(-heading);
    let r = rot * Vector2::new(target.px - ego.px, target.py - ego.py);
    let mut v = rot * Vector2::new(target.vx - ego.vx, target.vy - ego.vy);
    if include_transport {
        // omega x r = omega * (-r_y, r_x)
        v -= omega * Vector2::new(-r[1], r[0]);
    }
    Ok(RelativeState {
        t: ego.t,
        x: r[0],
        y: r[1],
        vx: v[0],
        vy: v[1],
    })
}

/// Linear interpolation of a time-ordered scalar series. `None` outside the
/// covered range or when the bracketing samples are further apart than
/// `max_gap`; an exact sample time returns that sample.
pub fn interpolate(series: &[(f64, f64)], t: f64, max_gap: f64) -> Option<f64> {
    if series.is_empty() {
        return None;
    }
    let idx = series.partition_point(|&(st, _)| st < t);
    if idx < series.len() && series[idx].0 == t {
        return Some(series[idx].1);
    }
    if idx == 0 || idx == series.len() {
        return None;
    }
    let (t0, v0) = series[idx - 1];
    let (t1, v1) = series[idx];
    if t1 - t0 > max_gap {
        return None;
    }
    let w = (t - t0) / (t1 - t0);
    Some(v0 + w * (v1 - v0))
}

/// Componentwise interpolation of a relative-state series.
pub fn interpolate_state(series: &[RelativeState], t: f64, max_gap: f64) -> Option<RelativeState> {
    if series.is_empty() {
        return None;
    }
    let idx = series.partition_point(|s| s.t < t);
    if idx < series.len() && series[idx].t == t {
        return Some(series[idx]);
    }
    if idx == 0 || idx == series.len() {
        return None;
    }
    let (a, b) = (&series[idx - 1], &series[idx]);
    if b.t - a.t > max_gap {
        return None;
    }
    let w = (t - a.t) / (b.t - a.t);
    let lerp = |x: f64, y: f64| x + w * (y - x);
    Some(RelativeState {
        t,
        x: lerp(a.x, b.x),
        y: lerp(a.y, b.y),
        vx: lerp(a.vx, b.vx),
        vy: lerp(a.vy, b.vy),
    })
}

/// Among non-static candidates, index of the one nearest to the ground-truth
/// position. A candidate is static when its ground-frame speed estimate
/// `|(vx, vy) + (ego_speed, 0)|` stays at or below `static_threshold`.
pub fn match_target(
    candidates: &[Vec4],
    truth: &RelativeState,
    ego_speed: f64,
    static_threshold: f64,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let ground_speed = ((c[2] + ego_speed).powi(2) + c[3].powi(2)).sqrt();
        if ground_speed <= static_threshold {
            continue;
        }
        let d = ((c[0] - truth.x).powi(2) + (c[1] - truth.y).powi(2)).sqrt();
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// Mean squared error of one quantity against the interpolated truth.
/// Sample times where the truth cannot be interpolated are excluded.
pub fn mse(
    series_sensor: &[RelativeState],
    series_truth: &[RelativeState],
    quantity: Quantity,
    max_gap: f64,
) -> Result<(f64, usize)> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for s in series_sensor {
        if let Some(truth) = interpolate_state(series_truth, s.t, max_gap) {
            let d = quantity.of(s) - quantity.of(&truth);
            sum += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::UndefinedMse);
    }
    Ok((sum / n as f64, n))
}

/// Diagonal observation-noise estimate from (sensor, truth) pairs: unbiased
/// per-component residual variance, scaled by `inflation`, off-diagonals 0.
pub fn estimate_noise_cov(paired: &[(Vec4, Vec4)], inflation: f64) -> Result<Mat4> {
    if paired.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: paired.len(),
        });
    }
    let n = paired.len() as f64;
    let mut mean = Vec4::zeros();
    for (s, t) in paired {
        mean += s - t;
    }
    mean /= n;
    let mut var = Vec4::zeros();
    for (s, t) in paired {
        let r = (s - t) - mean;
        var += r.component_mul(&r);
    }
    var /= n - 1.0;
    Ok(Mat4::from_diagonal(&(var * inflation)))
}

/// Evaluation settings.
#[derive(Debug, Clone, Copy)]
pub struct EvalConfig {
    pub static_threshold: f64,
    pub max_gap: f64,
    pub transport: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            static_threshold: 0.5,
            max_gap: 0.5,
            transport: true,
        }
    }
}

/// Target series extracted from a stream of per-time candidate sets.
fn matched_series(
    samples: impl Iterator<Item = (f64, Vec<Vec4>)>,
    truth: &[RelativeState],
    ego: &[EgoMotion],
    cfg: &EvalConfig,
) -> (Vec<RelativeState>, usize) {
    let ego_speed: Vec<(f64, f64)> = ego.iter().map(|e| (e.t, e.v)).collect();
    let mut matched = Vec::new();
    let mut interpolable = 0usize;
    for (t, candidates) in samples {
        let Some(truth_here) = interpolate_state(truth, t, cfg.max_gap) else {
            continue;
        };
        interpolable += 1;
        let speed = interpolate(&ego_speed, t, cfg.max_gap).unwrap_or(0.0);
        if let Some(idx) = match_target(&candidates, &truth_here, speed, cfg.static_threshold) {
            let c = candidates[idx];
            matched.push(RelativeState {
                t,
                x: c[0],
                y: c[1],
                vx: c[2],
                vy: c[3],
            });
        }
    }
    (matched, interpolable)
}

/// Score Radar, Lidar and Fusion series against the truth. Produces one row
/// per (source, quantity); sources with no input samples at all are skipped,
/// while a source whose samples never overlap the truth is an error.
pub fn evaluate(
    frames: &[SensorFrame],
    fused: &[FusedList],
    truth: &[RelativeState],
    ego: &[EgoMotion],
    cfg: &EvalConfig,
) -> Result<MseReport> {
    use crate::filtering::SensorId;
    let mut report = MseReport::default();
    let sources = [
        (Source::Radar, Some(SensorId::Radar)),
        (Source::Lidar, Some(SensorId::Lidar)),
        (Source::Fusion, None),
    ];
    for (source, sensor) in sources {
        let present = match sensor {
            Some(id) => frames.iter().any(|f| f.sensor == id),
            None => !fused.is_empty(),
        };
        if !present {
            continue;
        }
        let (series, interpolable) = match sensor {
            Some(id) => matched_series(
                frames.iter().filter(|f| f.sensor == id).map(|f| {
                    (
                        f.t,
                        f.detections.iter().map(|d| d.as_vec4()).collect::<Vec<_>>(),
                    )
                }),
                truth,
                ego,
                cfg,
            ),
            None => matched_series(
                fused.iter().map(|l| {
                    (
                        l.t,
                        l.tracks.iter().map(|tr| tr.state.mean).collect::<Vec<_>>(),
                    )
                }),
                truth,
                ego,
                cfg,
            ),
        };
        let availability = if interpolable == 0 {
            0.0
        } else {
            series.len() as f64 / interpolable as f64
        };
        for quantity in Quantity::ALL {
            let (value, n) = mse(&series, truth, quantity, cfg.max_gap)?;
            report.rows.push(MseRow {
                source,
                quantity,
                mse: value,
                n,
                availability,
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn fix(t: f64, vehicle: Vehicle, px: f64, py: f64, vx: f64, vy: f64, heading: Option<f64>) -> RtkFix {
        RtkFix { t, vehicle, px, py, vx, vy, heading, omega: None }
    }

    #[test]
    fn relative_state_plain_subtraction() {
        let ego = fix(0.0, Vehicle::Ego, 0.0, 0.0, 3.0, 1.0, Some(0.0));
        let target = fix(0.0, Vehicle::Target, 10.0, 5.0, 3.0, 1.0, None);
        let r = relative_state(&ego, &target, 0.0, true).unwrap();
        assert_abs_diff_eq!(r.x, 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.y, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.vx, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.vy, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn relative_state_rotated_heading() {
        let ego = fix(0.0, Vehicle::Ego, 0.0, 0.0, 0.0, 0.0, Some(FRAC_PI_2));
        let target = fix(0.0, Vehicle::Target, 10.0, 5.0, 0.0, 0.0, None);
        let r = relative_state(&ego, &target, 0.0, false).unwrap();
        assert_abs_diff_eq!(r.x, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.y, -10.0, epsilon = 1e-12);
    }

    #[test]
    fn relative_state_transport_term() {
        let ego = fix(0.0, Vehicle::Ego, 0.0, 0.0, 5.0, 0.0, Some(0.0));
        let target = fix(0.0, Vehicle::Target, 10.0, 0.0, 5.0, 0.0, None);
        let r = relative_state(&ego, &target, 0.1, true).unwrap();
        assert_abs_diff_eq!(r.vx, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.vy, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn relative_state_transport_matches_finite_difference() {
        // ego on a circle, target fixed in the world; differentiate
        // R(-psi(t)) (p_t - p_e(t)) numerically and compare
        let omega = 0.3;
        let speed = 10.0;
        let radius = speed / omega;
        let pose = |t: f64| {
            let psi = omega * t;
            (radius * psi.sin(), radius * (1.0 - psi.cos()), psi)
        };
        let target = (40.0, 5.0);
        let state_at = |t: f64| {
            let (px, py, psi) = pose(t);
            let ego = fix(t, Vehicle::Ego, px, py, speed * psi.cos(), speed * psi.sin(), Some(psi));
            let tgt = fix(t, Vehicle::Target, target.0, target.1, 0.0, 0.0, None);
            relative_state(&ego, &tgt, omega, true).unwrap()
        };
        let t0 = 1.2;
        let h = 1e-5;
        let a = state_at(t0 - h);
        let b = state_at(t0 + h);
        let c = state_at(t0);
        assert_abs_diff_eq!(c.vx, (b.x - a.x) / (2.0 * h), epsilon = 1e-6);
        assert_abs_diff_eq!(c.vy, (b.y - a.y) / (2.0 * h), epsilon = 1e-6);
    }

    #[test]
    fn relative_state_requires_heading() {
        let ego = fix(0.0, Vehicle::Ego, 0.0, 0.0, 0.0, 0.0, None);
        let target = fix(0.0, Vehicle::Target, 1.0, 0.0, 0.0, 0.0, None);
        assert!(relative_state(&ego, &target, 0.0, true).is_err());
    }

    #[test]
    fn interpolate_midpoint_and_bounds() {
        let s = vec![(0.0, 0.0), (1.0, 10.0)];
        assert_abs_diff_eq!(interpolate(&s, 0.5, 10.0).unwrap(), 5.0, epsilon = 1e-12);
        assert_eq!(interpolate(&s, 1.5, 10.0), None);
        assert_eq!(interpolate(&s, -0.5, 10.0), None);
        // exact sample time returns the sample
        assert_eq!(interpolate(&s, 1.0, 10.0), Some(10.0));
    }

    #[test]
    fn interpolate_gap_exclusion() {
        let s = vec![(0.0, 0.0), (2.0, 10.0)];
        assert_eq!(interpolate(&s, 1.0, 0.5), None);
        assert!(interpolate(&s, 1.0, 2.5).is_some());
    }

    #[test]
    fn match_target_cases() {
        let truth = RelativeState { t: 0.0, x: 10.0, y: 0.0, vx: 0.0, vy: 0.0 };
        // single moving object at the truth position
        let c = vec![Vec4::new(10.0, 0.0, 0.0, 0.0)];
        assert_eq!(match_target(&c, &truth, 20.0, 0.5), Some(0));
        // nearest of two moving objects
        let c = vec![Vec4::new(13.0, 0.0, 0.0, 0.0), Vec4::new(11.0, 0.0, 0.0, 0.0)];
        assert_eq!(match_target(&c, &truth, 20.0, 0.5), Some(1));
        // static object filtered out: ground speed 0.1 below threshold 0.5
        let c = vec![Vec4::new(10.0, 0.0, -19.9, 0.0)];
        assert_eq!(match_target(&c, &truth, 20.0, 0.5), None);
        assert_eq!(match_target(&[], &truth, 20.0, 0.5), None);
    }

    #[test]
    fn mse_hand_values() {
        let at = |t: f64, x: f64| RelativeState { t, x, y: 0.0, vx: 0.0, vy: 0.0 };
        let truth = vec![at(0.0, 1.0), at(1.0, 1.0), at(2.0, 1.0)];
        let sensor = vec![at(0.0, 1.0), at(1.0, 2.0), at(2.0, 3.0)];
        let (v, n) = mse(&sensor, &truth, Quantity::X, 10.0).unwrap();
        assert_eq!(n, 3);
        assert_abs_diff_eq!(v, 5.0 / 3.0, epsilon = 1e-12);
        // identical series
        let (v, _) = mse(&truth, &truth, Quantity::X, 10.0).unwrap();
        assert_eq!(v, 0.0);
        // constant offset 0.5
        let off: Vec<_> = truth.iter().map(|s| at(s.t, s.x + 0.5)).collect();
        let (v, _) = mse(&off, &truth, Quantity::X, 10.0).unwrap();
        assert_abs_diff_eq!(v, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn mse_order_invariant() {
        let at = |t: f64, x: f64| RelativeState { t, x, y: 0.0, vx: 0.0, vy: 0.0 };
        let truth = vec![at(0.0, 0.0), at(1.0, 1.0), at(2.0, 0.5)];
        let sensor = vec![at(0.2, 0.3), at(1.4, 0.7), at(1.9, 0.1)];
        let mut shuffled = sensor.clone();
        shuffled.swap(0, 2);
        let (a, _) = mse(&sensor, &truth, Quantity::X, 10.0).unwrap();
        let (b, _) = mse(&shuffled, &truth, Quantity::X, 10.0).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        assert!(a > 0.0);
    }

    #[test]
    fn mse_undefined_without_overlap() {
        let at = |t: f64, x: f64| RelativeState { t, x, y: 0.0, vx: 0.0, vy: 0.0 };
        let truth = vec![at(0.0, 0.0), at(1.0, 1.0)];
        let sensor = vec![at(5.0, 0.3)];
        assert!(matches!(
            mse(&sensor, &truth, Quantity::X, 10.0),
            Err(Error::UndefinedMse)
        ));
    }

    #[test]
    fn noise_cov_estimation() {
        let zero = Vec4::zeros();
        // residuals all zero
        let pairs = vec![(zero, zero), (zero, zero), (zero, zero)];
        let m = estimate_noise_cov(&pairs, 1.0).unwrap();
        assert_eq!(m, Mat4::zeros());
        // residuals x in {-1, 1}: unbiased variance 2
        let pairs = vec![
            (Vec4::new(-1.0, 0.0, 0.0, 0.0), zero),
            (Vec4::new(1.0, 0.0, 0.0, 0.0), zero),
        ];
        let m = estimate_noise_cov(&pairs, 1.0).unwrap();
        assert_abs_diff_eq!(m[(0, 0)], 2.0, epsilon = 1e-12);
        let m = estimate_noise_cov(&pairs, 1.5).unwrap();
        assert_abs_diff_eq!(m[(0, 0)], 3.0, epsilon = 1e-12);
        assert_eq!(m[(0, 1)], 0.0);
        // too few pairs
        assert!(estimate_noise_cov(&pairs[..1], 1.0).is_err());
    }

    #[test]
    fn wrap_angle_range() {
        for a in [-10.0, -3.2, 0.0, 3.2, 10.0, 100.0] {
            let w = wrap_angle(a);
            assert!(w > -std::f64::consts::PI - 1e-12 && w <= std::f64::consts::PI + 1e-12);
            assert_abs_diff_eq!(w.sin(), a.sin(), epsilon = 1e-9);
            assert_abs_diff_eq!(w.cos(), a.cos(), epsilon = 1e-9);
        }
    }
}
