//! Observation blocks: `N` time-indexed rows of `d` coordinates.

use crate::error::{DakError, Result};

/// Minimum sequence length; below this the admissible split set {2,...,N-2}
/// is empty and no scan is defined.
pub const MIN_OBS: usize = 4;

/// Dense N x d observation block. Row i is the observation at time i+1,
/// column k is coordinate k+1. All entries are finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    n_obs: usize,
    n_dims: usize,
    values: Vec<f64>, // row-major
}

impl SampleMatrix {
    /// Build from row-major storage, rejecting non-finite entries and
    /// sequences too short to scan.
    pub fn new(n_obs: usize, n_dims: usize, values: Vec<f64>) -> Result<Self> {
        if n_obs < MIN_OBS {
            return Err(DakError::Config(format!(
                "need at least {MIN_OBS} observations, got {n_obs}"
            )));
        }
        if n_dims == 0 {
            return Err(DakError::Config("need at least one coordinate".into()));
        }
        if values.len() != n_obs * n_dims {
            return Err(DakError::InvalidInput(format!(
                "expected {} values for a {}x{} matrix, got {}",
                n_obs * n_dims,
                n_obs,
                n_dims,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(DakError::InvalidInput(format!(
                "non-finite entry at row {}, column {}",
                pos / n_dims + 1,
                pos % n_dims + 1
            )));
        }
        Ok(Self { n_obs, n_dims, values })
    }

    /// Build from a list of equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_obs = rows.len();
        let n_dims = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(n_obs * n_dims);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_dims {
                return Err(DakError::InvalidInput(format!(
                    "ragged input: row {} has {} entries, expected {}",
                    i + 1,
                    row.len(),
                    n_dims
                )));
            }
            values.extend_from_slice(row);
        }
        Self::new(n_obs, n_dims, values)
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    /// Entry at time `i` (1-based) and coordinate `k` (1-based).
    pub fn value(&self, i: usize, k: usize) -> f64 {
        assert!(i >= 1 && i <= self.n_obs && k >= 1 && k <= self.n_dims);
        self.values[(i - 1) * self.n_dims + (k - 1)]
    }

    /// Row at time `i` (1-based).
    pub fn row(&self, i: usize) -> &[f64] {
        assert!(i >= 1 && i <= self.n_obs);
        &self.values[(i - 1) * self.n_dims..i * self.n_dims]
    }

    /// Copy coordinate `k` (1-based) into `out`, one value per time index.
    pub fn copy_column(&self, k: usize, out: &mut Vec<f64>) {
        assert!(k >= 1 && k <= self.n_dims);
        out.clear();
        out.extend((0..self.n_obs).map(|i| self.values[i * self.n_dims + (k - 1)]));
    }

    /// Admissible split set {2, ..., N-2}.
    pub fn split_set(&self) -> Vec<usize> {
        (2..=self.n_obs - 2).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// One column of a [`SampleMatrix`] paired with its sorted copy, which the
/// kernel engine uses for strict-interval anchor counting.
#[derive(Debug, Clone)]
pub struct CoordinateSlice {
    values: Vec<f64>,
    sorted: Vec<f64>,
}

impl CoordinateSlice {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(DakError::Config("coordinate slice needs at least 2 values".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DakError::InvalidInput("non-finite value in coordinate slice".into()));
        }
        let mut sorted = values.clone();
        sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(Self { values, sorted })
    }

    /// Column `k` (1-based) of `sample`.
    pub fn from_sample(sample: &SampleMatrix, k: usize) -> Self {
        let mut values = Vec::new();
        sample.copy_column(k, &mut values);
        // already validated at ingestion
        let mut sorted = values.clone();
        sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        Self { values, sorted }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        let err = SampleMatrix::new(4, 1, vec![1.0, 2.0, f64::NAN, 4.0]).unwrap_err();
        assert!(matches!(err, DakError::InvalidInput(_)));
        let err = SampleMatrix::new(4, 1, vec![1.0, 2.0, f64::INFINITY, 4.0]).unwrap_err();
        assert!(matches!(err, DakError::InvalidInput(_)));
    }

    #[test]
    fn rejects_short_sequences() {
        let err = SampleMatrix::new(3, 2, vec![0.0; 6]).unwrap_err();
        assert!(matches!(err, DakError::Config(_)));
    }

    #[test]
    fn rejects_ragged_rows() {
        let rows = vec![vec![1.0, 2.0], vec![3.0], vec![4.0, 5.0], vec![6.0, 7.0]];
        let err = SampleMatrix::from_rows(&rows).unwrap_err();
        assert!(matches!(err, DakError::InvalidInput(_)));
    }

    #[test]
    fn split_set_matches_convention() {
        let m = SampleMatrix::new(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.split_set(), vec![2]);
        let m = SampleMatrix::new(10, 1, (0..10).map(f64::from).collect()).unwrap();
        assert_eq!(m.split_set(), (2..=8).collect::<Vec<_>>());
    }

    #[test]
    fn sorted_copy_is_permutation() {
        let s = CoordinateSlice::new(vec![3.0, 1.0, 2.0, 1.0]).unwrap();
        assert_eq!(s.sorted(), &[1.0, 1.0, 2.0, 3.0]);
        let mut resorted = s.values().to_vec();
        resorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(resorted, s.sorted());
    }
}
