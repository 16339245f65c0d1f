//! Mahalanobis cost matrices between tracks and detections, and the
//! Hungarian (minimum cost one-to-one) assignment between them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filtering::{Mat4, StateEstimate, Vec4};

/// Which covariance normalizes the association distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostCovariance {
    /// The track's propagated covariance alone (the printed formulation).
    #[default]
    Track,
    /// Track covariance plus the sensor's observation covariance, which is
    /// the distribution of the innovation and makes the gate chi-square.
    TrackPlusObs,
}

/// `n_tracks x n_obs` matrix of squared Mahalanobis distances. Entries are
/// nonnegative; `+inf` marks a forbidden pair.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    pub n_tracks: usize,
    pub n_obs: usize,
    costs: Vec<f64>,
}

impl CostMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n_tracks = rows.len();
        let n_obs = rows.first().map_or(0, |r| r.len());
        let mut costs = Vec::with_capacity(n_tracks * n_obs);
        for r in rows {
            assert_eq!(r.len(), n_obs, "ragged cost matrix");
            costs.extend_from_slice(r);
        }
        Self { n_tracks, n_obs, costs }
    }

    #[inline]
    pub fn get(&self, track: usize, obs: usize) -> f64 {
        self.costs[track * self.n_obs + obs]
    }
}

/// Result of an assignment: matched pairs plus the leftovers on both sides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    /// `(track_index, obs_index)` pairs, sorted by track index.
    pub pairs: Vec<(usize, usize)>,
    pub unassigned_tracks: Vec<usize>,
    pub unassigned_obs: Vec<usize>,
}

impl Assignment {
    pub fn total_cost(&self, costs: &CostMatrix) -> f64 {
        self.pairs.iter().map(|&(i, j)| costs.get(i, j)).sum()
    }
}

/// Squared Mahalanobis distance between every compensated track and every
/// detection. The normalizing covariance per track is selected by `mode`.
pub fn mahalanobis_cost(
    tracks: &[StateEstimate],
    observations: &[Vec4],
    obs_cov: &Mat4,
    mode: CostCovariance,
) -> Result<CostMatrix> {
    let n_obs = observations.len();
    let mut costs = Vec::with_capacity(tracks.len() * n_obs);
    for (idx, track) in tracks.iter().enumerate() {
        let cov = match mode {
            CostCovariance::Track => track.cov,
            CostCovariance::TrackPlusObs => track.cov + obs_cov,
        };
        let chol = cov.cholesky().ok_or(Error::SingularInnovation {
            track: Some(idx as u64),
        })?;
        let inv = chol.inverse();
        for z in observations {
            let diff = track.mean - z;
            costs.push((diff.transpose() * inv * diff)[0].max(0.0));
        }
    }
    Ok(CostMatrix {
        n_tracks: tracks.len(),
        n_obs,
        costs,
    })
}

/// Minimum-cost one-to-one matching saturating the smaller side.
///
/// Entries that are infinite or `>= forbid_above` never appear in the
/// returned pairs; a track (or detection) whose every partner is forbidden
/// ends up unassigned. Empty inputs yield an empty assignment.
pub fn hungarian_solve(costs: &CostMatrix, forbid_above: Option<f64>) -> Assignment {
    let (nt, no) = (costs.n_tracks, costs.n_obs);
    if nt == 0 || no == 0 {
        return Assignment {
            pairs: Vec::new(),
            unassigned_tracks: (0..nt).collect(),
            unassigned_obs: (0..no).collect(),
        };
    }

    let forbidden = |v: f64| !v.is_finite() || forbid_above.is_some_and(|lim| v >= lim);
    let dim = nt.max(no);
    let max_finite = costs
        .costs
        .iter()
        .copied()
        .filter(|v| !forbidden(*v))
        .fold(0.0f64, f64::max);
    // larger than any complete matching made of real entries
    let big = (dim as f64) * max_finite + 1.0;

    // square grid: real entries, `big` for forbidden, 0 on padding
    let grid = |i: usize, j: usize| -> f64 {
        if i < nt && j < no {
            let v = costs.get(i, j);
            if forbidden(v) {
                big
            } else {
                v
            }
        } else {
            0.0
        }
    };

    let row_of_col = solve_square(dim, &grid);

    let mut pairs = Vec::new();
    let mut track_used = vec![false; nt];
    let mut obs_used = vec![false; no];
    for (j, &i) in row_of_col.iter().enumerate() {
        if i < nt && j < no && !forbidden(costs.get(i, j)) {
            pairs.push((i, j));
            track_used[i] = true;
            obs_used[j] = true;
        }
    }
    pairs.sort_unstable();
    Assignment {
        pairs,
        unassigned_tracks: (0..nt).filter(|&i| !track_used[i]).collect(),
        unassigned_obs: (0..no).filter(|&j| !obs_used[j]).collect(),
    }
}

/// Hungarian algorithm with potentials, O(n^3). Returns the assigned row for
/// every column.
fn solve_square(n: usize, cost: &dyn Fn(usize, usize) -> f64) -> Vec<usize> {
    const INF: f64 = f64::INFINITY;
    // 1-based internally; index 0 is the virtual start column
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j] = row matched to column j (0 = free)
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    (1..=n).map(|j| p[j] - 1).collect()
}

/// Exhaustive minimum-cost matching saturating the smaller side. Test oracle,
/// exponential; only usable for small matrices.
#[doc(hidden)]
pub fn brute_force_min_cost(costs: &CostMatrix, forbid_above: Option<f64>) -> (f64, usize) {
    let forbidden = |v: f64| !v.is_finite() || forbid_above.is_some_and(|lim| v >= lim);
    let (nt, no) = (costs.n_tracks, costs.n_obs);
    let transpose = nt > no;
    let (rows, cols) = if transpose { (no, nt) } else { (nt, no) };
    let entry = |i: usize, j: usize| {
        if transpose {
            costs.get(j, i)
        } else {
            costs.get(i, j)
        }
    };
    // enumerate injections rows -> cols, maximizing matched count first,
    // then minimizing cost
    let mut used = vec![false; cols];
    fn rec(
        i: usize,
        rows: usize,
        cols: usize,
        used: &mut [bool],
        matched: usize,
        cost_acc: f64,
        entry: &dyn Fn(usize, usize) -> f64,
        forbidden: &dyn Fn(f64) -> bool,
        best: &mut (usize, f64),
    ) {
        if i == rows {
            if matched > best.0 || (matched == best.0 && cost_acc < best.1) {
                *best = (matched, cost_acc);
            }
            return;
        }
        // leave row i unmatched
        rec(i + 1, rows, cols, used, matched, cost_acc, entry, forbidden, best);
        for j in 0..cols {
            if !used[j] {
                let c = entry(i, j);
                if !forbidden(c) {
                    used[j] = true;
                    rec(i + 1, rows, cols, used, matched + 1, cost_acc + c, entry, forbidden, best);
                    used[j] = false;
                }
            }
        }
    }
    let mut best = (0usize, f64::INFINITY);
    rec(0, rows, cols, &mut used, 0, 0.0, &entry, &|v| forbidden(v), &mut best);
    if best.0 == 0 {
        (0.0, 0)
    } else {
        (best.1, best.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtering::symmetrize;
    use approx::assert_abs_diff_eq;
    use nalgebra::Matrix4;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand::Rng as _;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cost_zero_for_identical() {
        let track = StateEstimate::new(Vec4::new(1.0, 2.0, 3.0, 4.0), Mat4::identity());
        let obs = vec![Vec4::new(1.0, 2.0, 3.0, 4.0)];
        let cm = mahalanobis_cost(&[track], &obs, &Mat4::identity(), CostCovariance::Track).unwrap();
        assert_abs_diff_eq!(cm.get(0, 0), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn cost_identity_covariance() {
        let track = StateEstimate::new(Vec4::zeros(), Mat4::identity());
        let obs = vec![Vec4::new(1.0, 1.0, 1.0, 1.0)];
        let cm = mahalanobis_cost(&[track], &obs, &Mat4::identity(), CostCovariance::Track).unwrap();
        assert_abs_diff_eq!(cm.get(0, 0), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn cost_diagonal_by_hand() {
        let cov = Mat4::from_diagonal(&Vec4::new(0.25, 0.25, 1.0, 1.0));
        let track = StateEstimate::new(Vec4::zeros(), cov);
        let obs = vec![Vec4::new(1.0, 0.0, 0.0, 0.0)];
        let cm = mahalanobis_cost(&[track], &obs, &Mat4::zeros(), CostCovariance::Track).unwrap();
        assert_abs_diff_eq!(cm.get(0, 0), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn cost_track_plus_obs_adds_sensor_noise() {
        let track = StateEstimate::new(Vec4::zeros(), Mat4::identity());
        let obs = vec![Vec4::new(2.0, 0.0, 0.0, 0.0)];
        let r = Mat4::identity();
        let cm = mahalanobis_cost(&[track], &obs, &r, CostCovariance::TrackPlusObs).unwrap();
        assert_abs_diff_eq!(cm.get(0, 0), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn cost_singular_track_names_index() {
        let good = StateEstimate::new(Vec4::zeros(), Mat4::identity());
        let bad = StateEstimate::new(Vec4::zeros(), Mat4::zeros());
        let err = mahalanobis_cost(
            &[good, bad],
            &[Vec4::zeros()],
            &Mat4::zeros(),
            CostCovariance::Track,
        )
        .unwrap_err();
        match err {
            crate::error::Error::SingularInnovation { track } => assert_eq!(track, Some(1)),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn solve_two_by_two() {
        let cm = CostMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        let a = hungarian_solve(&cm, None);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_abs_diff_eq!(a.total_cost(&cm), 2.0);
        assert!(a.unassigned_tracks.is_empty());
        assert!(a.unassigned_obs.is_empty());
    }

    #[test]
    fn solve_single_forbidden() {
        let cm = CostMatrix::from_rows(&[vec![5.0]]);
        let a = hungarian_solve(&cm, Some(4.0));
        assert!(a.pairs.is_empty());
        assert_eq!(a.unassigned_tracks, vec![0]);
        assert_eq!(a.unassigned_obs, vec![0]);
    }

    #[test]
    fn solve_rectangular() {
        let cm = CostMatrix::from_rows(&[vec![1.0, 3.0, 5.0], vec![2.0, 0.0, 9.0]]);
        let a = hungarian_solve(&cm, None);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_abs_diff_eq!(a.total_cost(&cm), 1.0);
        assert_eq!(a.unassigned_obs, vec![2]);
    }

    #[test]
    fn solve_empty() {
        let cm = CostMatrix::from_rows(&[]);
        let a = hungarian_solve(&cm, None);
        assert!(a.pairs.is_empty());
        let cm = CostMatrix {
            n_tracks: 2,
            n_obs: 0,
            costs: vec![],
        };
        let a = hungarian_solve(&cm, None);
        assert_eq!(a.unassigned_tracks, vec![0, 1]);
    }

    #[test]
    fn solve_infinite_entries() {
        let inf = f64::INFINITY;
        let cm = CostMatrix::from_rows(&[vec![inf, 1.0], vec![inf, inf]]);
        let a = hungarian_solve(&cm, None);
        assert_eq!(a.pairs, vec![(0, 1)]);
        assert_eq!(a.unassigned_tracks, vec![1]);
        assert_eq!(a.unassigned_obs, vec![0]);
    }

    #[test]
    fn partition_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let nt = rng.gen_range(0..6);
            let no = rng.gen_range(0..6);
            let rows: Vec<Vec<f64>> = (0..nt)
                .map(|_| (0..no).map(|_| rng.gen_range(0.0..10.0)).collect())
                .collect();
            let cm = CostMatrix {
                n_tracks: nt,
                n_obs: no,
                costs: rows.iter().flatten().copied().collect(),
            };
            let a = hungarian_solve(&cm, Some(8.0));
            let mut tracks: Vec<usize> = a.pairs.iter().map(|p| p.0).collect();
            tracks.extend(&a.unassigned_tracks);
            tracks.sort_unstable();
            assert_eq!(tracks, (0..nt).collect::<Vec<_>>());
            let mut obs: Vec<usize> = a.pairs.iter().map(|p| p.1).collect();
            obs.extend(&a.unassigned_obs);
            obs.sort_unstable();
            assert_eq!(obs, (0..no).collect::<Vec<_>>());
            for &(i, j) in &a.pairs {
                assert!(cm.get(i, j) < 8.0);
            }
        }
    }

    #[test]
    fn matches_brute_force_with_forbidden() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let nt = rng.gen_range(1..=5);
            let no = rng.gen_range(1..=5);
            let costs: Vec<f64> = (0..nt * no).map(|_| rng.gen_range(0.0..10.0)).collect();
            let cm = CostMatrix { n_tracks: nt, n_obs: no, costs };
            let limit = if rng.gen_bool(0.5) { Some(rng.gen_range(2.0..9.0)) } else { None };
            let a = hungarian_solve(&cm, limit);
            let (best_cost, best_matched) = brute_force_min_cost(&cm, limit);
            assert_eq!(a.pairs.len(), best_matched, "matched count differs");
            assert_abs_diff_eq!(a.total_cost(&cm), best_cost, epsilon = 1e-9);
        }
    }

    proptest! {
        #[test]
        fn permutation_equivariance(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(2..=5);
            let costs: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.0..10.0)).collect();
            let cm = CostMatrix { n_tracks: n, n_obs: n, costs: costs.clone() };
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            // permute rows
            let permuted: Vec<f64> = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| costs[perm[i] * n + j])
                .collect();
            let cm_p = CostMatrix { n_tracks: n, n_obs: n, costs: permuted };
            let a = hungarian_solve(&cm, None);
            let a_p = hungarian_solve(&cm_p, None);
            prop_assert!((a.total_cost(&cm) - a_p.total_cost(&cm_p)).abs() < 1e-9);
        }

        #[test]
        fn constant_shift_preserves_argmin(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            let n = rng.gen_range(2..=5);
            let costs: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.0..10.0)).collect();
            let shift = rng.gen_range(0.0..5.0);
            let cm = CostMatrix { n_tracks: n, n_obs: n, costs: costs.clone() };
            let cm_s = CostMatrix {
                n_tracks: n,
                n_obs: n,
                costs: costs.iter().map(|c| c + shift).collect(),
            };
            let a = hungarian_solve(&cm, None);
            let a_s = hungarian_solve(&cm_s, None);
            // both optimal: shifted total equals original total + n * shift
            let t = a.total_cost(&cm);
            let t_s = a_s.total_cost(&cm_s);
            prop_assert!((t_s - t - n as f64 * shift).abs() < 1e-9);
        }
    }

    #[test]
    fn mahalanobis_symmetric_in_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let a = Matrix4::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let cov = symmetrize(&(a * a.transpose())) + Mat4::identity() * 0.1;
            let mean = Vec4::from_fn(|_, _| rng.gen_range(-5.0..5.0));
            let z = Vec4::from_fn(|_, _| rng.gen_range(-5.0..5.0));
            let c1 = mahalanobis_cost(
                &[StateEstimate::new(mean, cov)],
                &[z],
                &Mat4::zeros(),
                CostCovariance::Track,
            )
            .unwrap();
            let c2 = mahalanobis_cost(
                &[StateEstimate::new(z, cov)],
                &[mean],
                &Mat4::zeros(),
                CostCovariance::Track,
            )
            .unwrap();
            assert_abs_diff_eq!(c1.get(0, 0), c2.get(0, 0), epsilon = 1e-9);
        }
    }
}
