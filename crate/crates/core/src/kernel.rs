//! Angular-kernel engine: strict-interval anchor counting, pooled pair
//! kernels, and the per-coordinate split statistics xi_k(t).
//!
//! The one-dimensional angular kernel records whether an anchor lies strictly
//! between two values. Pooling anchors over the whole column turns each pair
//! value into a count divided by N, so the engine stores integer counts and
//! converts to floating point only at the very end. This makes the
//! incremental split sweep exactly (bit-for-bit) equal to a naive triple-sum
//! evaluation, and makes tie handling exact: strict comparisons never count
//! an anchor equal to either endpoint.

use crate::error::{DakError, Result};
use crate::sample::{CoordinateSlice, SampleMatrix};
use rayon::prelude::*;

/// Indicator that `r` lies strictly between `p` and `q`; zero when `r`
/// equals either endpoint or falls outside the open interval.
#[inline]
pub fn angular_indicator(p: f64, q: f64, r: f64) -> u32 {
    let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
    u32::from(r > lo && r < hi)
}

/// Number of entries of `sorted` strictly inside the open interval
/// `(min(a,b), max(a,b))`, by two binary searches.
#[inline]
fn count_strictly_between(sorted: &[f64], a: f64, b: f64) -> usize {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let below_hi = sorted.partition_point(|&x| x < hi);
    let at_or_below_lo = sorted.partition_point(|&x| x <= lo);
    below_hi.saturating_sub(at_or_below_lo)
}

/// Pooled-anchor empirical kernel for the pair `(i, j)` (1-based indices):
/// the fraction of column values strictly between the two entries.
pub fn pooled_pair_kernel(slice: &CoordinateSlice, i: usize, j: usize) -> Result<f64> {
    let n = slice.len();
    if i == j {
        return Err(DakError::Domain(format!(
            "pair kernel undefined on the diagonal (i = j = {i})"
        )));
    }
    if i < 1 || i > n || j < 1 || j > n {
        return Err(DakError::Domain(format!("pair index out of range: ({i}, {j}) with N = {n}")));
    }
    let count =
        count_strictly_between(slice.sorted(), slice.values()[i - 1], slice.values()[j - 1]);
    Ok(count as f64 / n as f64)
}

/// Per-value order statistics against the sorted column: for each value,
/// how many entries lie strictly below it and at-or-below it.
fn fill_order_stats(values: &[f64], sorted: &[f64], below: &mut [usize], at_or_below: &mut [usize]) {
    for (idx, &v) in values.iter().enumerate() {
        below[idx] = sorted.partition_point(|&x| x < v);
        at_or_below[idx] = sorted.partition_point(|&x| x <= v);
    }
}

/// Symmetric anchor counts for all pairs, written into `counts` (n x n,
/// diagonal untouched and expected zeroed by the caller).
fn fill_pair_counts(values: &[f64], below: &[usize], at_or_below: &[usize], counts: &mut [u32]) {
    let n = values.len();
    for i in 0..n {
        for j in (i + 1)..n {
            let (lo, hi) = if values[i] <= values[j] { (i, j) } else { (j, i) };
            let c = below[hi].saturating_sub(at_or_below[lo]) as u32;
            counts[i * n + j] = c;
            counts[j * n + i] = c;
        }
    }
}

/// Incremental sweep over splits t = 2, ..., N-2 on integer pair counts:
/// xi(t) from the three block sums, updated in O(N) as the split advances.
/// Integer arithmetic makes this identical to recomputing each block sum
/// from scratch.
fn xi_sweep_into(counts: &[u32], n: usize, out: &mut [f64]) {
    debug_assert!(n >= 4);
    debug_assert_eq!(out.len(), n - 3);
    let count = |i: usize, j: usize| u64::from(counts[(i - 1) * n + (j - 1)]);

    // unordered-pair block sums at t = 2
    let mut s_x: u64 = count(1, 2);
    let mut s_cross: u64 = 0;
    let mut s_y: u64 = 0;
    for i in 1..=2usize {
        for j in 3..=n {
            s_cross += count(i, j);
        }
    }
    for i in 3..=n {
        for j in (i + 1)..=n {
            s_y += count(i, j);
        }
    }

    let nf = n as f64;
    for t in 2..=(n - 2) {
        let tf = t as f64;
        let rf = (n - t) as f64;
        out[t - 2] = 2.0 * s_cross as f64 / (nf * tf * rf)
            - 2.0 * s_x as f64 / (nf * tf * (tf - 1.0))
            - 2.0 * s_y as f64 / (nf * rf * (rf - 1.0));

        // advance the split: row t+1 moves from the right block to the left
        if t < n - 2 {
            let moved = t + 1;
            let mut to_left: u64 = 0;
            for i in 1..=t {
                to_left += count(i, moved);
            }
            let mut to_right: u64 = 0;
            for j in (moved + 1)..=n {
                to_right += count(moved, j);
            }
            s_x += to_left;
            s_cross = s_cross - to_left + to_right;
            s_y -= to_right;
        }
    }
}

/// Symmetric matrix of pooled pair-kernel anchor counts for one coordinate.
///
/// Entry (i, j) holds `N * rho_hat(Z_i, Z_j)`, an integer in {0, ..., N-2};
/// the diagonal is fixed to zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairKernelMatrix {
    n: usize,
    counts: Vec<u32>, // row-major n x n, diagonal zero
}

impl PairKernelMatrix {
    pub fn n_obs(&self) -> usize {
        self.n
    }

    /// Anchor count for the pair (1-based indices).
    pub fn count(&self, i: usize, j: usize) -> u32 {
        self.counts[(i - 1) * self.n + (j - 1)]
    }

    /// Kernel value `count / N` (1-based indices).
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.count(i, j) as f64 / self.n as f64
    }

    /// Build a matrix from explicit counts (test support). Counts must be
    /// symmetric with a zero diagonal and bounded by N - 2.
    pub fn from_counts(n: usize, counts: Vec<u32>) -> Result<Self> {
        if counts.len() != n * n {
            return Err(DakError::Config("count buffer does not match matrix size".into()));
        }
        for i in 0..n {
            if counts[i * n + i] != 0 {
                return Err(DakError::Config("pair kernel diagonal must be zero".into()));
            }
            for j in 0..n {
                if counts[i * n + j] != counts[j * n + i] {
                    return Err(DakError::Config("pair kernel counts must be symmetric".into()));
                }
                if n >= 2 && counts[i * n + j] > (n - 2) as u32 {
                    return Err(DakError::Config("pair kernel count exceeds N - 2".into()));
                }
            }
        }
        Ok(Self { n, counts })
    }
}

/// Batched pooled pair kernel over one coordinate: O(N log N) preprocessing
/// plus O(1) per pair.
pub fn build_pair_kernel(slice: &CoordinateSlice) -> PairKernelMatrix {
    let n = slice.len();
    let mut below = vec![0usize; n];
    let mut at_or_below = vec![0usize; n];
    fill_order_stats(slice.values(), slice.sorted(), &mut below, &mut at_or_below);
    let mut counts = vec![0u32; n * n];
    fill_pair_counts(slice.values(), &below, &at_or_below, &mut counts);
    PairKernelMatrix { n, counts }
}

/// Split statistics for one coordinate from its pair-kernel counts.
///
/// For each t in {2, ..., N-2} this evaluates twice the cross-block mean
/// minus the two within-block means of the pooled kernel, by the
/// incremental integer sweep.
pub fn xi_profile(pk: &PairKernelMatrix) -> Result<Vec<f64>> {
    let n = pk.n;
    if n < 4 {
        return Err(DakError::Config(format!("xi profile needs N >= 4, got {n}")));
    }
    let mut out = vec![0.0f64; n - 3];
    xi_sweep_into(&pk.counts, n, &mut out);
    Ok(out)
}

/// Per-coordinate split statistics xi_k(t) for every admissible split,
/// stored row-per-coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct XiMatrix {
    n_obs: usize,
    n_dims: usize,
    split_set: Vec<usize>,
    data: Vec<f64>, // row-major: n_dims rows of |split_set| values
}

impl XiMatrix {
    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn split_set(&self) -> &[usize] {
        &self.split_set
    }

    pub fn n_splits(&self) -> usize {
        self.split_set.len()
    }

    /// Row of xi values for coordinate `k` (1-based), ordered by split.
    pub fn coordinate_row(&self, k: usize) -> &[f64] {
        let m = self.split_set.len();
        &self.data[(k - 1) * m..k * m]
    }

    /// xi_k(t) by coordinate (1-based) and split index into the split set.
    pub fn entry(&self, k: usize, split_idx: usize) -> f64 {
        self.data[(k - 1) * self.split_set.len() + split_idx]
    }

    /// Copy the cross-coordinate column for one split index into `out`.
    pub fn copy_split_column(&self, split_idx: usize, out: &mut Vec<f64>) {
        let m = self.split_set.len();
        out.clear();
        out.extend((0..self.n_dims).map(|k| self.data[k * m + split_idx]));
    }
}

/// Reused per-thread scratch for the per-coordinate pipeline.
struct CoordScratch {
    column: Vec<f64>,
    sorted: Vec<f64>,
    below: Vec<usize>,
    at_or_below: Vec<usize>,
    counts: Vec<u32>,
}

impl CoordScratch {
    fn new(n: usize) -> Self {
        Self {
            column: vec![0.0; n],
            sorted: vec![0.0; n],
            below: vec![0; n],
            at_or_below: vec![0; n],
            counts: vec![0; n * n],
        }
    }

    /// xi row for the gathered column currently in `self.column`.
    fn xi_row(&mut self, n: usize, out: &mut [f64]) {
        self.sorted.copy_from_slice(&self.column);
        self.sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        fill_order_stats(&self.column, &self.sorted, &mut self.below, &mut self.at_or_below);
        self.counts.fill(0);
        fill_pair_counts(&self.column, &self.below, &self.at_or_below, &mut self.counts);
        xi_sweep_into(&self.counts, n, out);
    }
}

/// Work below which the coordinate loop runs sequentially; either path
/// writes the same bits.
const PAR_WORK_THRESHOLD: usize = 1 << 17;

fn xi_matrix_impl<C>(n: usize, d: usize, gather: C) -> XiMatrix
where
    C: Fn(usize, &mut [f64]) + Sync,
{
    let split_set: Vec<usize> = (2..=n - 2).collect();
    let m = split_set.len();
    let mut data = vec![0.0f64; d * m];

    if n * n * d < PAR_WORK_THRESHOLD {
        let mut scratch = CoordScratch::new(n);
        for (k0, row) in data.chunks_mut(m).enumerate() {
            gather(k0, &mut scratch.column);
            scratch.xi_row(n, row);
        }
    } else {
        data.par_chunks_mut(m).enumerate().for_each_init(
            || CoordScratch::new(n),
            |scratch, (k0, row)| {
                gather(k0, &mut scratch.column);
                scratch.xi_row(n, row);
            },
        );
    }
    XiMatrix { n_obs: n, n_dims: d, split_set, data }
}

/// All per-coordinate split statistics for a sample. Coordinates are
/// independent work units; rows are computed in parallel and written to
/// disjoint storage, so the result does not depend on thread count.
pub fn xi_matrix(sample: &SampleMatrix) -> Result<XiMatrix> {
    let n = sample.n_obs();
    let d = sample.n_dims();
    let values = sample.values();
    Ok(xi_matrix_impl(n, d, |k0, column| {
        for (i, slot) in column.iter_mut().enumerate() {
            *slot = values[i * d + k0];
        }
    }))
}

/// Same as [`xi_matrix`] over borrowed observation rows (newest-last window
/// contents, for example). Rows must be equal-length and finite.
pub fn xi_matrix_rows(rows: &[&[f64]]) -> Result<XiMatrix> {
    let n = rows.len();
    if n < 4 {
        return Err(DakError::Config(format!("need at least 4 observations, got {n}")));
    }
    let d = rows[0].len();
    if d == 0 {
        return Err(DakError::Config("need at least one coordinate".into()));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != d {
            return Err(DakError::InvalidInput(format!(
                "ragged input: row {} has {} entries, expected {d}",
                i + 1,
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(DakError::InvalidInput(format!("non-finite entry in row {}", i + 1)));
        }
    }
    Ok(xi_matrix_impl(n, d, |k0, column| {
        for (slot, row) in column.iter_mut().zip(rows) {
            *slot = row[k0];
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slice(values: &[f64]) -> CoordinateSlice {
        CoordinateSlice::new(values.to_vec()).unwrap()
    }

    #[test]
    fn angular_indicator_convention() {
        assert_eq!(angular_indicator(1.0, 3.0, 2.0), 1);
        assert_eq!(angular_indicator(3.0, 1.0, 2.0), 1);
        assert_eq!(angular_indicator(1.0, 3.0, 1.0), 0); // anchor equals endpoint
        assert_eq!(angular_indicator(1.0, 3.0, 3.0), 0);
        assert_eq!(angular_indicator(1.0, 3.0, 0.0), 0); // outside
        assert_eq!(angular_indicator(1.0, 3.0, 4.0), 0);
        assert_eq!(angular_indicator(2.0, 2.0, 2.0), 0); // degenerate interval
    }

    #[test]
    fn pooled_pair_kernel_counts_interior_anchors() {
        let s = slice(&[10.0, 20.0, 30.0, 40.0]);
        assert_eq!(pooled_pair_kernel(&s, 1, 4).unwrap(), 0.5);
        assert_eq!(pooled_pair_kernel(&s, 4, 1).unwrap(), 0.5);
        assert_eq!(pooled_pair_kernel(&s, 1, 2).unwrap(), 0.0);
    }

    #[test]
    fn pooled_pair_kernel_is_exact_under_ties() {
        let s = slice(&[5.0, 5.0, 5.0, 9.0]);
        assert_eq!(pooled_pair_kernel(&s, 1, 4).unwrap(), 0.0);
        assert_eq!(pooled_pair_kernel(&s, 1, 2).unwrap(), 0.0);
    }

    #[test]
    fn pooled_pair_kernel_rejects_diagonal() {
        let s = slice(&[1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(pooled_pair_kernel(&s, 2, 2), Err(DakError::Domain(_))));
    }

    #[test]
    fn pooled_kernel_agrees_with_anchor_enumeration() {
        // counting matches a direct sum of angular indicators over anchors
        let vals = [0.4, -1.0, 0.4, 2.2, 1.7, -0.3, 0.39];
        let s = slice(&vals);
        let n = vals.len();
        for i in 1..=n {
            for j in 1..=n {
                if i == j {
                    continue;
                }
                let direct: u32 =
                    vals.iter().map(|&r| angular_indicator(vals[i - 1], vals[j - 1], r)).sum();
                assert_eq!(
                    pooled_pair_kernel(&s, i, j).unwrap(),
                    f64::from(direct) / n as f64
                );
            }
        }
    }

    #[test]
    fn build_matches_pointwise_kernel() {
        let s = slice(&[10.0, 20.0, 30.0, 40.0]);
        let pk = build_pair_kernel(&s);
        assert_eq!(pk.value(1, 4), 0.5);
        assert_eq!(pk.value(1, 3), 0.25);
        assert_eq!(pk.value(2, 3), 0.0);
        for i in 1..=4 {
            assert_eq!(pk.value(i, i), 0.0);
            for j in 1..=4 {
                if i != j {
                    assert_eq!(pk.value(i, j), pooled_pair_kernel(&s, i, j).unwrap());
                }
            }
        }
    }

    #[test]
    fn two_points_have_no_interior_anchor() {
        let pk = build_pair_kernel(&slice(&[7.0, -1.0]));
        assert_eq!(pk.value(1, 2), 0.0);
        assert_eq!(pk.value(2, 1), 0.0);
    }

    #[test]
    fn constant_column_is_all_zero() {
        let pk = build_pair_kernel(&slice(&[3.0; 6]));
        for i in 1..=6 {
            for j in 1..=6 {
                assert_eq!(pk.count(i, j), 0);
            }
        }
    }

    /// Naive per-split triple sum over the pair-kernel counts; the oracle
    /// the incremental sweep must match exactly.
    fn xi_profile_naive(pk: &PairKernelMatrix) -> Vec<f64> {
        let n = pk.n_obs();
        let nf = n as f64;
        (2..=(n - 2))
            .map(|t| {
                let mut s_cross: u64 = 0;
                let mut s_x: u64 = 0;
                let mut s_y: u64 = 0;
                for i in 1..=n {
                    for j in (i + 1)..=n {
                        let c = u64::from(pk.count(i, j));
                        if j <= t {
                            s_x += c;
                        } else if i > t {
                            s_y += c;
                        } else {
                            s_cross += c;
                        }
                    }
                }
                let tf = t as f64;
                let rf = (n - t) as f64;
                2.0 * s_cross as f64 / (nf * tf * rf)
                    - 2.0 * s_x as f64 / (nf * tf * (tf - 1.0))
                    - 2.0 * s_y as f64 / (nf * rf * (rf - 1.0))
            })
            .collect()
    }

    #[test]
    fn xi_profile_zero_matrix() {
        let pk = PairKernelMatrix::from_counts(5, vec![0; 25]).unwrap();
        assert_eq!(xi_profile(&pk).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn xi_profile_hand_case_cross_only() {
        // N = 4 with all four cross pairs (over t = 2) equal to c = 1/4 and
        // within pairs zero: xi(2) = 2c.
        let n = 4;
        let mut counts = vec![0u32; 16];
        for (i, j) in [(1usize, 3usize), (1, 4), (2, 3), (2, 4)] {
            counts[(i - 1) * n + (j - 1)] = 1;
            counts[(j - 1) * n + (i - 1)] = 1;
        }
        let pk = PairKernelMatrix::from_counts(n, counts).unwrap();
        let xi = xi_profile(&pk).unwrap();
        assert_eq!(xi.len(), 1);
        assert_eq!(xi[0], 2.0 * 0.25);
    }

    #[test]
    fn xi_profile_matches_naive_exactly() {
        // pseudo-random symmetric count matrices; equality must be exact
        let mut state = 0x1234_5678_u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for n in [4usize, 5, 6, 9, 12] {
            let mut counts = vec![0u32; n * n];
            for i in 0..n {
                for j in (i + 1)..n {
                    let c = (next() % (n as u64 - 1)) as u32; // 0..=n-2
                    counts[i * n + j] = c;
                    counts[j * n + i] = c;
                }
            }
            let pk = PairKernelMatrix::from_counts(n, counts).unwrap();
            let fast = xi_profile(&pk).unwrap();
            let slow = xi_profile_naive(&pk);
            assert_eq!(fast, slow, "exact equality required for N = {n}");
        }
    }

    #[test]
    fn xi_bound_holds() {
        let vals: Vec<f64> = (0..24).map(|i| ((i * 37 % 24) as f64).sin()).collect();
        let pk = build_pair_kernel(&slice(&vals));
        for xi in xi_profile(&pk).unwrap() {
            assert!(xi.abs() <= 2.0);
        }
    }

    #[test]
    fn xi_matrix_single_column_reduces_to_profile() {
        let vals = vec![0.3, -1.2, 0.7, 2.5, -0.4, 1.1];
        let sample = SampleMatrix::new(6, 1, vals.clone()).unwrap();
        let xim = xi_matrix(&sample).unwrap();
        let pk = build_pair_kernel(&slice(&vals));
        assert_eq!(xim.coordinate_row(1), xi_profile(&pk).unwrap().as_slice());
    }

    #[test]
    fn duplicated_column_gives_identical_rows() {
        let col = vec![0.5, 2.0, -1.0, 0.1, 3.0, -2.2];
        let mut values = Vec::new();
        for v in &col {
            values.push(*v);
            values.push(*v);
        }
        let sample = SampleMatrix::new(6, 2, values).unwrap();
        let xim = xi_matrix(&sample).unwrap();
        assert_eq!(xim.coordinate_row(1), xim.coordinate_row(2));
    }

    #[test]
    fn monotone_rescaling_leaves_row_unchanged() {
        let col: Vec<f64> = vec![0.5, 2.0, -1.0, 0.1, 3.0, -2.2, 0.9, 1.4];
        let transformed: Vec<f64> = col.iter().map(|v| (v * 0.7).exp() + 5.0).collect();
        let mut values = Vec::new();
        for (a, b) in col.iter().zip(&transformed) {
            values.push(*a);
            values.push(*b);
        }
        let sample = SampleMatrix::new(8, 2, values).unwrap();
        let xim = xi_matrix(&sample).unwrap();
        assert_eq!(xim.coordinate_row(1), xim.coordinate_row(2));
    }

    #[test]
    fn rows_entry_point_matches_matrix_entry_point() {
        let rows: Vec<Vec<f64>> = (0..7)
            .map(|i| (0..5).map(|k| ((i * 5 + k) as f64 * 1.37).sin()).collect())
            .collect();
        let borrowed: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let a = xi_matrix_rows(&borrowed).unwrap();
        let b = xi_matrix(&SampleMatrix::from_rows(&rows).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rows_entry_point_validates() {
        let r1 = vec![1.0, 2.0];
        let r2 = vec![3.0];
        let rows: Vec<&[f64]> = vec![&r1, &r2, &r1, &r1];
        assert!(matches!(xi_matrix_rows(&rows), Err(DakError::InvalidInput(_))));
        let bad = vec![f64::NAN, 1.0];
        let rows: Vec<&[f64]> = vec![&r1, &bad, &r1, &r1];
        assert!(matches!(xi_matrix_rows(&rows), Err(DakError::InvalidInput(_))));
        let rows: Vec<&[f64]> = vec![&r1, &r1];
        assert!(matches!(xi_matrix_rows(&rows), Err(DakError::Config(_))));
    }
}
