use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ld::lshift;
use crate::sensint::{sample, SensitivityTrajectory};

pub const DEFAULT_RANK_TOL: f64 = 1e-6;
pub const DEFAULT_ABS_FLOOR: f64 = 1e-12;

/// Numerical rank rule: `sigma_i` counts when it exceeds `rank_tol * sigma_1`,
/// and a matrix whose largest singular value is at most `abs_floor` has rank 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankRule {
    pub rank_tol: f64,
    pub abs_floor: f64,
}

impl Default for RankRule {
    fn default() -> Self {
        RankRule {
            rank_tol: DEFAULT_RANK_TOL,
            abs_floor: DEFAULT_ABS_FLOOR,
        }
    }
}

impl RankRule {
    pub fn validate(&self) -> Result<()> {
        if !(self.rank_tol > 0.0 && self.rank_tol < 1.0) {
            return Err(Error::invalid(format!(
                "rank tolerance must lie in (0, 1), got {}",
                self.rank_tol
            )));
        }
        if !(self.abs_floor >= 0.0) || !self.abs_floor.is_finite() {
            return Err(Error::invalid(format!(
                "absolute floor must be >= 0, got {}",
                self.abs_floor
            )));
        }
        Ok(())
    }

    /// Threshold below which a singular value is treated as zero.
    pub fn threshold(&self, sigma_1: f64) -> f64 {
        if sigma_1 <= self.abs_floor {
            f64::INFINITY
        } else {
            self.rank_tol * sigma_1
        }
    }

    /// `sv` sorted in descending order.
    pub fn rank(&self, sv: &[f64]) -> usize {
        let Some(&s1) = sv.first() else { return 0 };
        let thr = self.threshold(s1);
        sv.iter().filter(|&&s| s > thr).count()
    }
}

/// Stacked left-shifted output sensitivities `[S(t_0); ...; S(t_N)]` with its SVD.
#[derive(Debug, Clone, PartialEq)]
pub struct LSercMatrix {
    entries: DMatrix<f64>,
    d: Vec<f64>,
    sample_times: Vec<f64>,
    singular_values: Vec<f64>,
    right_vectors: DMatrix<f64>,
    rank: usize,
    rule: RankRule,
}

/// Flips each column so that its first entry above `1e-12` in magnitude is positive.
fn canonicalize_columns(v: &mut DMatrix<f64>) {
    for mut col in v.column_iter_mut() {
        if let Some(first) = col.iter().copied().find(|x| x.abs() > 1e-12) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
}

impl LSercMatrix {
    pub fn from_entries(
        entries: DMatrix<f64>,
        d: Vec<f64>,
        sample_times: Vec<f64>,
        rule: RankRule,
    ) -> Result<Self> {
        rule.validate()?;
        let n_p = entries.ncols();
        if n_p == 0 {
            return Err(Error::invalid("rank matrix has no columns"));
        }
        if entries.nrows() < n_p {
            return Err(Error::Precondition(format!(
                "need (N+1)*n_y >= n_p, got {} rows for {} parameters",
                entries.nrows(),
                n_p
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("rank matrix has non-finite entries"));
        }
        let svd = entries.clone().svd(false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| Error::invalid("SVD did not produce right singular vectors"))?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
        let mut right_vectors = DMatrix::from_fn(n_p, n_p, |r, c| v_t[(order[c], r)]);
        canonicalize_columns(&mut right_vectors);
        let rank = rule.rank(&singular_values);
        Ok(LSercMatrix {
            entries,
            d,
            sample_times,
            singular_values,
            right_vectors,
            rank,
            rule,
        })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }
    pub fn d(&self) -> &[f64] {
        &self.d
    }
    pub fn sample_times(&self) -> &[f64] {
        &self.sample_times
    }
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }
    /// Right singular vectors as columns, in the order of `singular_values`.
    pub fn right_vectors(&self) -> &DMatrix<f64> {
        &self.right_vectors
    }
    pub fn rank(&self) -> usize {
        self.rank
    }
    pub fn rule(&self) -> RankRule {
        self.rule
    }
    pub fn n_p(&self) -> usize {
        self.entries.ncols()
    }
    pub fn is_full_rank(&self) -> bool {
        self.rank == self.n_p()
    }

    /// The zero threshold actually applied.
    pub fn tol_used(&self) -> f64 {
        self.rule.threshold(self.singular_values[0])
    }

    /// Indices of singular values treated as zero.
    pub fn zero_indices(&self) -> Vec<usize> {
        (self.rank..self.n_p()).collect()
    }

    /// Right singular vectors spanning the numerical null space.
    pub fn null_vectors(&self) -> Vec<DVector<f64>> {
        self.zero_indices()
            .into_iter()
            .map(|i| self.right_vectors.column(i).into_owned())
            .collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }
}

/// Stacks `lshift(Y*(t_k))` over the sample times and classifies the rank.
pub fn build_lserc(
    traj: &SensitivityTrajectory,
    sample_times: &[f64],
    rule: RankRule,
) -> Result<LSercMatrix> {
    let n_p = traj.d.len();
    let n_y = traj.y_sens.first().map_or(0, |y| y.nrows());
    if sample_times.len() * n_y < n_p {
        return Err(Error::Precondition(format!(
            "need (N+1)*n_y >= n_p: {} samples x {} outputs < {} parameters",
            sample_times.len(),
            n_y,
            n_p
        )));
    }
    let blocks = sample(traj, sample_times)?
        .iter()
        .map(lshift)
        .collect::<Result<Vec<_>>>()?;
    let entries = DMatrix::from_fn(blocks.len() * n_y, n_p, |r, c| blocks[r / n_y][(r % n_y, c)]);
    LSercMatrix::from_entries(entries, traj.d.clone(), sample_times.to_vec(), rule)
}

/// `|Y dtheta|^2`, the local output mismatch along `dtheta`.
pub fn rss_quadratic(m: &LSercMatrix, delta_theta: &[f64]) -> Result<f64> {
    if delta_theta.len() != m.n_p() {
        return Err(Error::invalid(format!(
            "expected {} parameter offsets, got {}",
            m.n_p(),
            delta_theta.len()
        )));
    }
    let r = m.entries() * DVector::from_column_slice(delta_theta);
    Ok(r.dot(&r))
}
