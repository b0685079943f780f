//! Exact deterministic quantities behind the scan: the unimodal shape
//! function of the population mean, the null covariance template, the
//! dilogarithm, and the signal factor in its closed-form, quadrature, and
//! Monte-Carlo routes.

use crate::error::{DakError, Result};
use crate::linalg::{cholesky, sym_eigen};
use crate::rng::substream;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// pi^2 / 6, the dilogarithm at 1.
pub const PI_SQ_OVER_6: f64 = PI * PI / 6.0;

/// Deterministic unimodal shape of the population scan mean: equal to 1 at
/// the true change-point, strictly increasing before it and strictly
/// decreasing after.
pub fn shape(tau: usize, n_obs: usize, t: usize) -> Result<f64> {
    if n_obs < 4 || tau < 2 || tau > n_obs - 2 {
        return Err(DakError::Domain(format!(
            "change-point {tau} outside admissible range for N = {n_obs}"
        )));
    }
    if t < 1 || t > n_obs {
        return Err(DakError::Domain(format!("split {t} outside [1, {n_obs}]")));
    }
    let (nf, tauf, tf) = (n_obs as f64, tau as f64, t as f64);
    Ok(if t <= tau {
        ((nf - tauf) * (nf - tauf - 1.0)) / ((nf - tf) * (nf - tf - 1.0))
    } else {
        (tauf * (tauf - 1.0)) / (tf * (tf - 1.0))
    })
}

/// Shape values over the full index range [1, N].
#[derive(Debug, Clone)]
pub struct ShapeProfile {
    pub tau: usize,
    pub n_obs: usize,
    pub values: Vec<f64>,
}

impl ShapeProfile {
    pub fn new(tau: usize, n_obs: usize) -> Result<Self> {
        let values = (1..=n_obs).map(|t| shape(tau, n_obs, t)).collect::<Result<_>>()?;
        Ok(Self { tau, n_obs, values })
    }

    /// Separation gap 1 - max over admissible splits t != tau.
    pub fn separation_gap(&self) -> f64 {
        let mut max_other = f64::NEG_INFINITY;
        for t in 2..=self.n_obs - 2 {
            if t != self.tau {
                max_other = max_other.max(self.values[t - 1]);
            }
        }
        1.0 - max_other
    }
}

/// Relative eigenvalue floor below which the covariance template counts as
/// numerically non-PSD.
const PSD_TOLERANCE: f64 = 1e-10;

/// Deterministic |T| x |T| null covariance template K(N) together with a
/// factor G satisfying G G^T = K for Gaussian sampling.
///
/// The factor is the Cholesky lower triangle when every pivot is healthy;
/// otherwise the construction falls back to a symmetric eigendecomposition
/// with negative eigenvalues clipped to zero.
#[derive(Debug, Clone)]
pub struct CovarianceTemplate {
    n_obs: usize,
    split_set: Vec<usize>,
    matrix: Vec<f64>,
    factor: Vec<f64>,
    min_eigenvalue: f64,
    max_eigenvalue: f64,
}

impl CovarianceTemplate {
    pub fn new(n_obs: usize) -> Result<Self> {
        if n_obs < 4 {
            return Err(DakError::Config(format!(
                "covariance template needs N >= 4, got {n_obs}"
            )));
        }
        let split_set: Vec<usize> = (2..=n_obs - 2).collect();
        let m = split_set.len();
        let nf = n_obs as f64;
        let scale = 2.0 * (nf - 1.0) * (nf - 2.0);

        let mut matrix = vec![0.0f64; m * m];
        for (a, &t) in split_set.iter().enumerate() {
            for (b, &tp) in split_set.iter().enumerate() {
                let lo = t.min(tp) as f64;
                let hi = t.max(tp) as f64;
                matrix[a * m + b] = scale / (hi * (hi - 1.0) * (nf - lo) * (nf - lo - 1.0));
            }
        }

        let (eig, vecs) = sym_eigen(&matrix, m);
        let min_eigenvalue = eig[0];
        let max_eigenvalue = eig[m - 1];
        if min_eigenvalue < -PSD_TOLERANCE * max_eigenvalue.abs() {
            return Err(DakError::Numerical(format!(
                "covariance template for N = {n_obs} is not numerically PSD \
                 (min eigenvalue {min_eigenvalue:e})"
            )));
        }

        let trace: f64 = (0..m).map(|i| matrix[i * m + i]).sum();
        let pivot_floor = 1e-12 * trace / m as f64;
        let factor = match cholesky(&matrix, m, pivot_floor) {
            Some(l) => l,
            None => {
                // eigendecomposition fallback: G = Q diag(sqrt(max(e, 0)))
                let mut g = vec![0.0f64; m * m];
                for i in 0..m {
                    for j in 0..m {
                        g[i * m + j] = vecs[i * m + j] * eig[j].max(0.0).sqrt();
                    }
                }
                g
            }
        };

        Ok(Self { n_obs, split_set, matrix, factor, min_eigenvalue, max_eigenvalue })
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn split_set(&self) -> &[usize] {
        &self.split_set
    }

    pub fn n_splits(&self) -> usize {
        self.split_set.len()
    }

    /// K entry by split values (not indices).
    pub fn entry_by_split(&self, t: usize, tp: usize) -> f64 {
        let m = self.split_set.len();
        let a = t - 2;
        let b = tp - 2;
        self.matrix[a * m + b]
    }

    /// K entry by indices into the split set.
    pub fn entry(&self, a: usize, b: usize) -> f64 {
        self.matrix[a * self.split_set.len() + b]
    }

    /// Diagonal entry K_tt by index into the split set.
    pub fn diagonal(&self, a: usize) -> f64 {
        self.entry(a, a)
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    /// Sampling factor G with G G^T = K.
    pub fn factor(&self) -> &[f64] {
        &self.factor
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    /// Symmetric inverse square root K^{-1/2}, for whitening scan vectors.
    /// Fails when the template is numerically singular.
    pub fn inverse_sqrt(&self) -> Result<Vec<f64>> {
        let m = self.split_set.len();
        let (eig, vecs) = sym_eigen(&self.matrix, m);
        let floor = 1e-12 * self.max_eigenvalue;
        if eig[0] <= floor {
            return Err(DakError::Numerical(format!(
                "covariance template for N = {} is numerically singular (min eigenvalue {:e})",
                self.n_obs, eig[0]
            )));
        }
        let mut out = vec![0.0f64; m * m];
        for i in 0..m {
            for j in 0..m {
                let mut s = 0.0;
                for k in 0..m {
                    s += vecs[i * m + k] / eig[k].sqrt() * vecs[j * m + k];
                }
                out[i * m + j] = s;
            }
        }
        Ok(out)
    }
}

/// Dilogarithm Li_2 on [0, 1] by direct series summation, using the Euler
/// reflection Li2(x) + Li2(1-x) = pi^2/6 - ln(x) ln(1-x) above 1/2 so the
/// series argument never exceeds 1/2. Absolute error below 1e-14.
pub fn dilog(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(DakError::Domain(format!("dilog defined on [0, 1], got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(PI_SQ_OVER_6);
    }
    if x <= 0.5 {
        Ok(dilog_series(x))
    } else {
        let y = 1.0 - x;
        Ok(PI_SQ_OVER_6 - x.ln() * y.ln() - dilog_series(y))
    }
}

fn dilog_series(x: f64) -> f64 {
    debug_assert!((0.0..=0.5).contains(&x));
    let mut term = x;
    let mut sum = x;
    let mut m = 1.0f64;
    loop {
        m += 1.0;
        term *= x;
        let add = term / (m * m);
        sum += add;
        if add < 1e-17 * sum.max(f64::MIN_POSITIVE) || m > 200.0 {
            break;
        }
    }
    sum
}

/// How a signal factor was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalMethod {
    ClosedFormGaussian,
    ClosedFormCauchy,
    NumericCvm,
    MonteCarlo,
}

/// Aggregated signal factor: the magnitude of the population scan peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalFactor {
    pub value: f64,
    pub method: SignalMethod,
    /// Monte-Carlo standard error where applicable.
    pub std_error: Option<f64>,
}

/// Closed-form signal factor for a Cauchy scale change by factor `lambda`,
/// evaluated through the dilogarithm.
pub fn delta_cauchy_scale(lambda: f64, n_obs: usize) -> Result<SignalFactor> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(DakError::Domain(format!("scale factor must be positive, got {lambda}")));
    }
    if n_obs < 4 {
        return Err(DakError::Config(format!("need N >= 4, got {n_obs}")));
    }
    let rho = (lambda - 1.0) / (lambda + 1.0);
    let nf = n_obs as f64;
    let value = (nf - 1.0) / (nf * PI * PI) * dilog(rho * rho)?;
    Ok(SignalFactor { value, method: SignalMethod::ClosedFormCauchy, std_error: None })
}

/// Standard normal CDF through the complementary error function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Integration half-width for normal-weighted quadrature. The neglected
/// tail mass 2*Phi(-8) ~ 1.2e-15 is far below the 1e-12 budget.
const NORMAL_TAIL_CUTOFF: f64 = 8.0;
const QUADRATURE_POINTS: usize = 200;

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0f64; n];
    let mut weights = vec![0.0f64; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based initial guess
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // evaluate P_n(x) and P'_n(x)
            let mut p0 = 1.0f64;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// E[(Phi(Z) - Phi(Z - m))^2] for Z standard normal, by fixed high-order
/// Gauss-Legendre quadrature against the normal density.
pub fn gaussian_shift_moment(m: f64) -> f64 {
    let (nodes, weights) = gauss_legendre(QUADRATURE_POINTS);
    let half = NORMAL_TAIL_CUTOFF;
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(&weights) {
        let z = half * x;
        let diff = normal_cdf(z) - normal_cdf(z - m);
        let dens = (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
        acc += w * dens * diff * diff;
    }
    acc * half
}

/// Closed-form signal factor for a Gaussian mean shift `mu` against the
/// standard normal, with the per-coordinate expectation evaluated by
/// quadrature.
pub fn delta_gaussian_shift(mu: &[f64], n_obs: usize) -> Result<SignalFactor> {
    if n_obs < 4 {
        return Err(DakError::Config(format!("need N >= 4, got {n_obs}")));
    }
    if mu.is_empty() {
        return Err(DakError::Domain("shift vector must be non-empty".into()));
    }
    if mu.iter().any(|v| !v.is_finite()) {
        return Err(DakError::Domain("shift vector must be finite".into()));
    }
    let d = mu.len() as f64;
    let nf = n_obs as f64;
    let mut acc = 0.0;
    for &m in mu {
        if m != 0.0 {
            acc += gaussian_shift_moment(m);
        }
    }
    let value = 2.0 * (nf - 1.0) / (nf * d) * acc;
    Ok(SignalFactor { value, method: SignalMethod::ClosedFormGaussian, std_error: None })
}

/// Small-shift approximation of the Gaussian mean-shift signal factor:
/// (N-1)/(N pi sqrt(3)) * ||mu||^2 / d.
pub fn delta_gaussian_shift_small(mu: &[f64], n_obs: usize) -> f64 {
    let nf = n_obs as f64;
    let norm_sq: f64 = mu.iter().map(|m| m * m).sum();
    (nf - 1.0) / (nf * PI * 3.0f64.sqrt()) * norm_sq / mu.len() as f64
}

/// Monte-Carlo signal factor for arbitrary marginals: averages
/// (F_k(Z) - G_k(Z))^2 over draws Z from the sampler, per coordinate, and
/// applies the 2(N-1)/N scaling. Returns the estimate with its standard
/// error.
///
/// `cdf_f`/`cdf_g` map (coordinate index, value) to the marginal CDFs;
/// `sampler` draws from the integrating marginal of the given coordinate.
pub fn delta_numeric_cvm<F, G, S>(
    cdf_f: F,
    cdf_g: G,
    mut sampler: S,
    n_obs: usize,
    n_dims: usize,
    n_mc: usize,
    seed: u64,
) -> Result<SignalFactor>
where
    F: Fn(usize, f64) -> f64,
    G: Fn(usize, f64) -> f64,
    S: FnMut(usize, &mut rand_chacha::ChaCha12Rng) -> f64,
{
    if n_obs < 4 {
        return Err(DakError::Config(format!("need N >= 4, got {n_obs}")));
    }
    if n_dims == 0 || n_mc == 0 {
        return Err(DakError::Domain("n_dims and n_mc must be positive".into()));
    }
    let scale = 2.0 * (n_obs as f64 - 1.0) / n_obs as f64;
    let total = (n_dims * n_mc) as f64;

    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    for k in 0..n_dims {
        let mut rng = substream(seed, &[0x6376_6d00, k as u64]);
        for _ in 0..n_mc {
            let z = sampler(k, &mut rng);
            let diff = cdf_f(k, z) - cdf_g(k, z);
            let v = diff * diff;
            sum += v;
            sum_sq += v * v;
        }
    }
    let mean = sum / total;
    let var = (sum_sq / total - mean * mean).max(0.0);
    let se = scale * (var / total).sqrt();
    Ok(SignalFactor {
        value: scale * mean,
        method: SignalMethod::NumericCvm,
        std_error: Some(se),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_examples() {
        assert_eq!(shape(15, 40, 15).unwrap(), 1.0);
        assert!((shape(15, 40, 20).unwrap() - 15.0 * 14.0 / (20.0 * 19.0)).abs() < 1e-15);
        assert!((shape(15, 40, 14).unwrap() - (25.0 * 24.0) / (26.0 * 25.0)).abs() < 1e-15);
    }

    #[test]
    fn shape_rejects_out_of_range() {
        assert!(shape(1, 40, 5).is_err());
        assert!(shape(39, 40, 5).is_err());
        assert!(shape(15, 40, 0).is_err());
        assert!(shape(15, 40, 41).is_err());
    }

    #[test]
    fn shape_profile_unimodal_in_unit_interval() {
        for (tau, n) in [(2usize, 6usize), (5, 12), (15, 40), (20, 40)] {
            let p = ShapeProfile::new(tau, n).unwrap();
            assert_eq!(p.values[tau - 1], 1.0);
            for t in 1..tau {
                assert!(p.values[t - 1] < p.values[t], "increasing before tau");
            }
            for t in tau..n - 1 {
                assert!(p.values[t] < p.values[t - 1], "decreasing after tau");
            }
            assert!(p.values.iter().all(|&v| v > 0.0 && v <= 1.0));
            let gap = p.separation_gap();
            assert!(gap > 0.0 && gap < 1.0);
        }
    }

    #[test]
    fn template_matches_hand_values() {
        let k10 = CovarianceTemplate::new(10).unwrap();
        assert!((k10.entry_by_split(2, 2) - 2.0 * 9.0 * 8.0 / (2.0 * 1.0 * 8.0 * 7.0)).abs() < 1e-14);
        let k40 = CovarianceTemplate::new(40).unwrap();
        assert!((k40.entry_by_split(2, 2) - 2.0 * 39.0 * 38.0 / (2.0 * 1.0 * 38.0 * 37.0)).abs() < 1e-14);
    }

    #[test]
    fn template_symmetric_positive_and_factored() {
        for n in [4usize, 5, 10, 12, 20, 40] {
            let k = CovarianceTemplate::new(n).unwrap();
            let m = k.n_splits();
            assert_eq!(m, n - 3);
            for a in 0..m {
                for b in 0..m {
                    assert_eq!(k.entry(a, b), k.entry(b, a));
                    assert!(k.entry(a, b) > 0.0);
                }
            }
            assert!(k.min_eigenvalue() > -1e-10 * k.max_eigenvalue);
            // G G^T = K
            let g = k.factor();
            for a in 0..m {
                for b in 0..m {
                    let mut s = 0.0;
                    for c in 0..m {
                        s += g[a * m + c] * g[b * m + c];
                    }
                    assert!((s - k.entry(a, b)).abs() < 1e-10, "N={n} factor mismatch");
                }
            }
        }
    }

    #[test]
    fn template_inverse_sqrt_whitens() {
        let k = CovarianceTemplate::new(12).unwrap();
        let m = k.n_splits();
        let w = k.inverse_sqrt().unwrap();
        // W K W = I
        let mut kw = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                let mut s = 0.0;
                for c in 0..m {
                    s += k.entry(i, c) * w[c * m + j];
                }
                kw[i * m + j] = s;
            }
        }
        for i in 0..m {
            for j in 0..m {
                let mut s = 0.0;
                for c in 0..m {
                    s += w[i * m + c] * kw[c * m + j];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((s - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dilog_reference_values() {
        assert_eq!(dilog(0.0).unwrap(), 0.0);
        assert!((dilog(1.0).unwrap() - PI_SQ_OVER_6).abs() < 1e-15);
        // series oracle for x = 1/9, summed to machine precision
        let x: f64 = 1.0 / 9.0;
        let mut oracle = 0.0;
        for m in 1..60 {
            oracle += x.powi(m) / (m as f64 * m as f64);
        }
        assert!((dilog(x).unwrap() - oracle).abs() < 1e-15);
        assert!((dilog(x).unwrap() - 0.114360206978510).abs() < 1e-12);
        assert!(dilog(-0.1).is_err());
        assert!(dilog(1.5).is_err());
    }

    #[test]
    fn dilog_reflection_identity_on_grid() {
        for i in 1..200 {
            let x = i as f64 / 200.0;
            let lhs = dilog(x).unwrap() + dilog(1.0 - x).unwrap();
            let rhs = PI_SQ_OVER_6 - x.ln() * (1.0 - x).ln();
            assert!((lhs - rhs).abs() < 1e-10, "x = {x}");
        }
    }

    #[test]
    fn cauchy_scale_delta() {
        assert_eq!(delta_cauchy_scale(1.0, 40).unwrap().value, 0.0);
        // composed from the dilog oracle value above
        let d = delta_cauchy_scale(2.0, 40).unwrap().value;
        assert!((d - (39.0 / 40.0) / (PI * PI) * 0.1143602069785100).abs() < 1e-12);
        // invariance under lambda -> 1/lambda
        for lam in [0.25, 0.5, 3.0, 7.5] {
            let a = delta_cauchy_scale(lam, 12).unwrap().value;
            let b = delta_cauchy_scale(1.0 / lam, 12).unwrap().value;
            assert!((a - b).abs() < 1e-15);
        }
        assert!(delta_cauchy_scale(0.0, 12).is_err());
        assert!(delta_cauchy_scale(-2.0, 12).is_err());
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(1.0) - 0.841344746068543).abs() < 1e-14);
        assert!((normal_cdf(-1.0) - 0.158655253931457).abs() < 1e-14);
        assert!((normal_cdf(1.96) - 0.975002104851780).abs() < 1e-14);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (nodes, weights) = gauss_legendre(20);
        let total: f64 = weights.iter().sum();
        assert!((total - 2.0).abs() < 1e-13);
        // x^4 over [-1,1] = 2/5
        let quartic: f64 = nodes.iter().zip(&weights).map(|(x, w)| w * x.powi(4)).sum();
        assert!((quartic - 0.4).abs() < 1e-13);
    }

    #[test]
    fn gaussian_shift_delta_zero_and_small() {
        let zero = delta_gaussian_shift(&[0.0, 0.0, 0.0], 40).unwrap();
        assert_eq!(zero.value, 0.0);
        // small-shift law: ratio to the limit expression tends to 1
        let mu = vec![1e-3; 8];
        let exact = delta_gaussian_shift(&mu, 40).unwrap().value;
        let law = delta_gaussian_shift_small(&mu, 40);
        assert!((exact / law - 1.0).abs() < 1e-2, "ratio {}", exact / law);
    }

    #[test]
    fn cvm_numeric_matches_cauchy_closed_form() {
        let lambda = 2.0;
        let cdf_f = |_k: usize, z: f64| 0.5 + z.atan() / PI;
        let cdf_g = move |_k: usize, z: f64| 0.5 + (z / lambda).atan() / PI;
        let sampler = |_k: usize, rng: &mut rand_chacha::ChaCha12Rng| {
            use rand::Rng;
            let u: f64 = rng.random();
            (PI * (u - 0.5)).tan()
        };
        let n_obs = 12;
        let est = delta_numeric_cvm(cdf_f, cdf_g, sampler, n_obs, 4, 50_000, 99).unwrap();
        let exact = delta_cauchy_scale(lambda, n_obs).unwrap().value;
        let se = est.std_error.unwrap();
        assert!((est.value - exact).abs() <= 3.0 * se, "est {} exact {exact} se {se}", est.value);
    }

    #[test]
    fn cvm_identical_marginals_vanish() {
        let cdf = |_k: usize, z: f64| normal_cdf(z);
        let sampler = |_k: usize, rng: &mut rand_chacha::ChaCha12Rng| {
            use rand::Rng;
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        };
        let est = delta_numeric_cvm(cdf, cdf, sampler, 12, 3, 1000, 5).unwrap();
        assert_eq!(est.value, 0.0);
    }
}
