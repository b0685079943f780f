//! Shared test support: an independent, deliberately naive evaluation of the
//! three-term discrepancy from raw angular-indicator triple sums, O(N^4 d).
//! This never touches the production counting/sweeping path.

use dak_core::kernel::angular_indicator;

/// Pooled-anchor kernel for one coordinate pair by direct anchor enumeration.
fn rho_hat(column: &[f64], i: usize, j: usize) -> f64 {
    let n = column.len();
    let mut count = 0u32;
    for r in 0..n {
        count += angular_indicator(column[i], column[j], column[r]);
    }
    f64::from(count) / n as f64
}

/// Coordinate-averaged kernel between observations i and j (0-based).
fn rho_bar(rows: &[Vec<f64>], i: usize, j: usize) -> f64 {
    let d = rows[0].len();
    let n = rows.len();
    let mut acc = 0.0;
    let mut column = vec![0.0f64; n];
    for k in 0..d {
        for (slot, row) in column.iter_mut().zip(rows) {
            *slot = row[k];
        }
        acc += rho_hat(&column, i, j);
    }
    acc / d as f64
}

/// The scan profile evaluated directly from the three-term form:
/// 2 T_xy - T_xx - T_yy at every admissible split.
pub fn naive_scan(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len();
    assert!(n >= 4);
    let mut out = Vec::new();
    for t in 2..=(n - 2) {
        let mut t_xy = 0.0;
        for i in 0..t {
            for j in t..n {
                t_xy += rho_bar(rows, i, j);
            }
        }
        t_xy /= (t * (n - t)) as f64;

        let mut t_xx = 0.0;
        for i in 0..t {
            for j in 0..t {
                if i != j {
                    t_xx += rho_bar(rows, i, j);
                }
            }
        }
        t_xx /= (t * (t - 1)) as f64;

        let mut t_yy = 0.0;
        for i in t..n {
            for j in t..n {
                if i != j {
                    t_yy += rho_bar(rows, i, j);
                }
            }
        }
        t_yy /= ((n - t) * (n - t - 1)) as f64;

        out.push(2.0 * t_xy - t_xx - t_yy);
    }
    out
}
