//! Linear Kalman prediction/update for the 4-state obstacle model,
//! innovation statistics and the chi-square validation gate.
//!
//! States are `[x, y, vx, vy]` in the ego frame. The observation matrix is
//! the identity (sensors report full state vectors), so update formulas are
//! specialized accordingly.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec4 = Vector4<f64>;
pub type Mat4 = Matrix4<f64>;

/// Which physical sensor produced a frame or noise model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorId {
    Lidar,
    Radar,
}

impl std::fmt::Display for SensorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SensorId::Lidar => write!(f, "Lidar"),
            SensorId::Radar => write!(f, "Radar"),
        }
    }
}

/// Gaussian state estimate: mean `[x, y, vx, vy]` and 4x4 covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEstimate {
    pub mean: Vec4,
    pub cov: Mat4,
}

impl StateEstimate {
    pub fn new(mean: Vec4, cov: Mat4) -> Self {
        Self { mean, cov }
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().all(|v| v.is_finite()) && self.cov.iter().all(|v| v.is_finite())
    }
}

/// Per-sensor process and observation noise covariances.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    pub sensor_id: SensorId,
    /// Process noise added at every prediction driven by this sensor's frame.
    pub process_cov: Mat4,
    /// Observation noise of this sensor; must be positive definite.
    pub obs_cov: Mat4,
}

/// Innovation of an update: residual, its covariance and the normalized
/// squared distance `d2 = r' S^-1 r`.
#[derive(Debug, Clone)]
pub struct Innovation {
    pub residual: Vec4,
    pub cov: Mat4,
    pub d2: f64,
}

/// Force exact symmetry, suppressing floating point drift.
pub fn symmetrize(m: &Mat4) -> Mat4 {
    (m + m.transpose()) * 0.5
}

fn check_finite_mat(m: &Mat4, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} contains non-finite entries")))
    }
}

fn check_finite_vec(v: &Vec4, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} contains non-finite entries")))
    }
}

/// Prediction step: `mean' = F mean`, `cov' = F cov F' + Q`.
pub fn kalman_predict(state: &StateEstimate, f: &Mat4, process_cov: &Mat4) -> Result<StateEstimate> {
    check_finite_vec(&state.mean, "state mean")?;
    check_finite_mat(&state.cov, "state covariance")?;
    check_finite_mat(f, "transition matrix")?;
    check_finite_mat(process_cov, "process covariance")?;
    let mean = f * state.mean;
    let cov = symmetrize(&(f * state.cov * f.transpose() + process_cov));
    Ok(StateEstimate { mean, cov })
}

/// Update step with identity observation matrix.
///
/// `S = R + P`, `W = P S^-1`, `mean' = mean + W (z - mean)`,
/// `cov' = P - W S W'`. Returns the updated state together with the
/// innovation carrying the gate distance.
pub fn kalman_update(
    predicted: &StateEstimate,
    z: &Vec4,
    obs_cov: &Mat4,
) -> Result<(StateEstimate, Innovation)> {
    check_finite_vec(z, "observation")?;
    check_finite_mat(obs_cov, "observation covariance")?;
    let s = symmetrize(&(obs_cov + predicted.cov));
    let chol = s
        .cholesky()
        .ok_or(Error::SingularInnovation { track: None })?;
    let s_inv = chol.inverse();
    let residual = z - predicted.mean;
    let gain = predicted.cov * s_inv;
    let mean = predicted.mean + gain * residual;
    let cov = symmetrize(&(predicted.cov - gain * s * gain.transpose()));
    let d2 = (residual.transpose() * s_inv * residual)[0].max(0.0);
    Ok((
        StateEstimate { mean, cov },
        Innovation { residual, cov: s, d2 },
    ))
}

/// Normalized innovation `d2 = r' S^-1 r` for an externally built innovation.
pub fn gate_distance(residual: &Vec4, cov: &Mat4) -> Result<f64> {
    let chol = cov
        .cholesky()
        .ok_or(Error::SingularInnovation { track: None })?;
    let s_inv = chol.inverse();
    Ok((residual.transpose() * s_inv * residual)[0].max(0.0))
}

/// Gate threshold: the `alpha` quantile of the chi-square distribution with
/// `dof` degrees of freedom, found by bisecting the regularized lower
/// incomplete gamma CDF.
pub fn chi2_gate_threshold(alpha: f64, dof: u32) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) || !alpha.is_finite() {
        return Err(Error::InvalidInput(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if dof == 0 {
        return Err(Error::InvalidInput("dof must be >= 1".into()));
    }
    let a = f64::from(dof) * 0.5;
    let cdf = |x: f64| lower_regularized_gamma(a, x * 0.5);
    let mut hi = 1.0;
    while cdf(hi) < alpha {
        hi *= 2.0;
        if hi > 1e12 {
            break;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Regularized lower incomplete gamma P(a, x): series expansion for
/// x < a + 1, continued fraction (modified Lentz) otherwise.
pub fn lower_regularized_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        // series representation
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..500 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        sum * (-x + a * x.ln() - ln_gamma(a)).exp()
    } else {
        // continued fraction for Q(a, x)
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        let q = (-x + a * x.ln() - ln_gamma(a)).exp() * h;
        1.0 - q
    }
}

/// Lanczos approximation of ln Gamma.
fn ln_gamma(x: f64) -> f64 {
    const G: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut y = x;
    let tmp = x + 5.5;
    let tmp = tmp - (x + 0.5) * tmp.ln();
    let mut ser = 1.000000000190015;
    for g in G {
        y += 1.0;
        ser += g / y;
    }
    -tmp + (2.5066282746310005 * ser / x).ln()
}
