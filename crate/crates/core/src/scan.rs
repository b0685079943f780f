//! Offline scan: the dimension-averaged discrepancy profile over all
//! admissible splits and the change-point estimate.

use crate::error::{DakError, Result};
use crate::kernel::{xi_matrix, xi_matrix_rows, XiMatrix};
use crate::sample::SampleMatrix;

/// The scan profile W_d(t) over the admissible splits, together with the
/// per-coordinate matrix it was averaged from (retained for calibration).
#[derive(Debug, Clone)]
pub struct ScanProfile {
    n_obs: usize,
    n_dims: usize,
    split_set: Vec<usize>,
    w_values: Vec<f64>,
    xi: XiMatrix,
}

impl ScanProfile {
    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn split_set(&self) -> &[usize] {
        &self.split_set
    }

    /// W_d(t) for each t in the split set, in order.
    pub fn w_values(&self) -> &[f64] {
        &self.w_values
    }

    pub fn xi(&self) -> &XiMatrix {
        &self.xi
    }
}

/// Change-point estimate: the smallest split maximizing the profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChangePointEstimate {
    pub tau_hat: usize,
    pub max_value: f64,
}

/// Scan all admissible splits. The profile is the cross-coordinate mean of
/// the xi matrix, accumulated in fixed coordinate order so the result does
/// not depend on thread count.
pub fn scan(sample: &SampleMatrix) -> Result<ScanProfile> {
    let xi = xi_matrix(sample)?;
    Ok(profile_from_xi(xi))
}

/// Scan borrowed observation rows (e.g. the contents of a sliding window,
/// oldest first) without copying them into a matrix.
pub fn scan_rows(rows: &[&[f64]]) -> Result<ScanProfile> {
    let xi = xi_matrix_rows(rows)?;
    Ok(profile_from_xi(xi))
}

/// Assemble a profile from an existing xi matrix.
pub fn profile_from_xi(xi: XiMatrix) -> ScanProfile {
    let d = xi.n_dims();
    let m = xi.n_splits();
    let mut w_values = vec![0.0f64; m];
    for k in 1..=d {
        let row = xi.coordinate_row(k);
        for (acc, v) in w_values.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let df = d as f64;
    for w in &mut w_values {
        *w /= df;
    }
    ScanProfile {
        n_obs: xi.n_obs(),
        n_dims: d,
        split_set: xi.split_set().to_vec(),
        w_values,
        xi,
    }
}

/// Smallest maximizer of the scan profile.
pub fn locate(profile: &ScanProfile) -> Result<ChangePointEstimate> {
    let mut best: Option<(usize, f64)> = None;
    for (&t, &w) in profile.split_set.iter().zip(&profile.w_values) {
        match best {
            Some((_, bw)) if w <= bw => {}
            _ => best = Some((t, w)),
        }
    }
    let (tau_hat, max_value) =
        best.ok_or_else(|| DakError::Config("empty scan profile".into()))?;
    Ok(ChangePointEstimate { tau_hat, max_value })
}
