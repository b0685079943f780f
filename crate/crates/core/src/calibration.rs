//! Plug-in Gaussian calibration: Bartlett-HAC long-run variance across
//! coordinates, median aggregation over splits, Monte-Carlo max-quantile
//! thresholds, and the studentized max test.

use crate::error::{DakError, Result};
use crate::rng::{derive_seed, substream};
use crate::sample::SampleMatrix;
use crate::scan::{locate, scan, ChangePointEstimate, ScanProfile};
use crate::theory::CovarianceTemplate;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Channel ids for substream derivation.
const CHANNEL_THRESHOLD: u64 = 0x7468_7265;
const CHANNEL_PERMUTATION: u64 = 0x7065_726d;

/// Pinned generator identity, recorded in serialized models and reports.
pub const GENERATOR_ID: &str = "chacha12/splitmix64-substreams/ziggurat-normal";

/// Bandwidth selection for the Bartlett-HAC estimator.
///
/// The default rule floor(d^(1/3)) grows without bound and is o(sqrt(d)),
/// the regime the consistency theory asks for.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HacConfig {
    /// Explicit bandwidth override; must satisfy 1 <= L < d.
    pub explicit_bandwidth: Option<usize>,
}

impl HacConfig {
    pub fn bandwidth(&self, n_dims: usize) -> Result<usize> {
        if n_dims < 2 {
            return Err(DakError::Config(format!(
                "HAC estimation needs at least 2 coordinates, got {n_dims}"
            )));
        }
        match self.explicit_bandwidth {
            Some(l) => {
                if l == 0 || l >= n_dims {
                    Err(DakError::Config(format!(
                        "bandwidth must satisfy 1 <= L < d; got L = {l}, d = {n_dims}"
                    )))
                } else {
                    Ok(l)
                }
            }
            None => {
                // exact integer floor of d^(1/3)
                let mut l = (n_dims as f64).cbrt().floor() as usize;
                while (l + 1).saturating_pow(3) <= n_dims {
                    l += 1;
                }
                while l > 1 && l.saturating_pow(3) > n_dims {
                    l -= 1;
                }
                Ok(l.clamp(1, n_dims - 1))
            }
        }
    }
}

/// Sample autocovariance at lag `r` with divisor d (not d - r).
pub fn autocovariance(xs: &[f64], mean: f64, r: usize) -> Result<f64> {
    let d = xs.len();
    if r >= d {
        return Err(DakError::Domain(format!("lag {r} out of range for length {d}")));
    }
    let mut acc = 0.0;
    for k in 0..d - r {
        acc += (xs[k] - mean) * (xs[k + r] - mean);
    }
    Ok(acc / d as f64)
}

/// Bartlett-weighted HAC long-run variance: gamma_0 + 2 sum w_r gamma_r with
/// w_r = 1 - r/(L+1). May be negative; no flooring at this stage.
pub fn hac_lrv(xs: &[f64], mean: f64, bandwidth: usize) -> Result<f64> {
    let d = xs.len();
    if bandwidth == 0 || bandwidth >= d {
        return Err(DakError::Config(format!(
            "bandwidth must satisfy 1 <= L < d; got L = {bandwidth}, d = {d}"
        )));
    }
    let mut acc = autocovariance(xs, mean, 0)?;
    for r in 1..=bandwidth {
        let w = 1.0 - r as f64 / (bandwidth as f64 + 1.0);
        acc += 2.0 * w * autocovariance(xs, mean, r)?;
    }
    Ok(acc)
}

/// Which estimator produced the long-run scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleEstimator {
    HacPlugin,
    PermutationWhitened,
}

/// Calibration state: the long-run variance estimate and, once completed,
/// the Monte-Carlo threshold. Serializes to JSON so offline calibration can
/// be reused by the monitor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationModel {
    /// Sequence length the model was calibrated for.
    pub n_obs: usize,
    /// Number of coordinates in the calibration data.
    pub n_dims: usize,
    /// Median over splits of the per-split plug-in variances. May be negative.
    pub sigma2_long: f64,
    /// Guarded scale sqrt(|sigma2_long|) used for studentization.
    pub sigma_long: f64,
    /// Per-split plug-in variances LRV(N;t) / K_tt, in split order.
    pub per_split_sigma2: Vec<f64>,
    /// HAC bandwidth used (0 when the permutation estimator produced the scale).
    pub bandwidth: usize,
    pub estimator: ScaleEstimator,
    /// Minimum eigenvalue of the covariance template, recorded for the report.
    pub k_min_eigenvalue: f64,
    /// Test level; set once the threshold is attached.
    pub alpha: Option<f64>,
    /// Monte-Carlo (1-alpha) max quantile.
    pub c_alpha: Option<f64>,
    pub mc_draws: Option<u64>,
    pub seed: Option<u64>,
    /// Pinned RNG identity.
    pub generator: String,
}

impl CalibrationModel {
    /// True when the data cannot studentize the test (zero scale).
    pub fn is_degenerate(&self) -> bool {
        self.sigma_long == 0.0
    }

    pub fn is_complete(&self) -> bool {
        self.c_alpha.is_some()
    }

    /// Attach a Monte-Carlo threshold for the given level.
    pub fn with_threshold(
        mut self,
        template: &CovarianceTemplate,
        alpha: f64,
        n_draws: u64,
        seed: u64,
    ) -> Result<Self> {
        if template.n_obs() != self.n_obs {
            return Err(DakError::Config(format!(
                "template built for N = {}, model for N = {}",
                template.n_obs(),
                self.n_obs
            )));
        }
        let c = mc_threshold(template, alpha, n_draws, seed)?;
        self.alpha = Some(alpha);
        self.c_alpha = Some(c);
        self.mc_draws = Some(n_draws);
        self.seed = Some(seed);
        Ok(self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Plug-in estimate of the long-run variance factor from a scan profile:
/// per split, HAC on the cross-coordinate xi column divided by K_tt;
/// aggregated by the median; guarded scale sqrt(|median|).
pub fn sigma_long_plugin(profile: &ScanProfile, cfg: &HacConfig) -> Result<CalibrationModel> {
    let template = CovarianceTemplate::new(profile.n_obs())?;
    sigma_long_plugin_with_template(profile, cfg, &template)
}

/// Same as [`sigma_long_plugin`] with a caller-provided template.
pub fn sigma_long_plugin_with_template(
    profile: &ScanProfile,
    cfg: &HacConfig,
    template: &CovarianceTemplate,
) -> Result<CalibrationModel> {
    if template.n_obs() != profile.n_obs() {
        return Err(DakError::Config("template/profile sequence length mismatch".into()));
    }
    let d = profile.n_dims();
    let bandwidth = cfg.bandwidth(d)?;
    let xi = profile.xi();
    let m = xi.n_splits();

    let mut per_split = Vec::with_capacity(m);
    let mut column = Vec::with_capacity(d);
    for idx in 0..m {
        xi.copy_split_column(idx, &mut column);
        let lrv = hac_lrv(&column, profile.w_values()[idx], bandwidth)?;
        per_split.push(lrv / template.diagonal(idx));
    }

    let sigma2 = median(&per_split);
    Ok(CalibrationModel {
        n_obs: profile.n_obs(),
        n_dims: d,
        sigma2_long: sigma2,
        sigma_long: sigma2.abs().sqrt(),
        per_split_sigma2: per_split,
        bandwidth,
        estimator: ScaleEstimator::HacPlugin,
        k_min_eigenvalue: template.min_eigenvalue(),
        alpha: None,
        c_alpha: None,
        mc_draws: None,
        seed: None,
        generator: GENERATOR_ID.to_string(),
    })
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Draws per deterministic Monte-Carlo block; fixed so results do not
/// depend on thread count.
const MC_BLOCK: u64 = 8192;

/// Monte-Carlo (1-alpha) quantile of max_t Z_t for Z ~ N(0, K), sampled
/// through the template factor. The quantile is the order statistic of rank
/// ceil((1-alpha) * n_draws), so results are bit-reproducible for a seed.
pub fn mc_threshold(
    template: &CovarianceTemplate,
    alpha: f64,
    n_draws: u64,
    seed: u64,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DakError::Domain(format!("level must lie in (0, 1), got {alpha}")));
    }
    if n_draws < 1000 {
        return Err(DakError::Config(format!("need at least 1000 draws, got {n_draws}")));
    }
    let m = template.n_splits();
    let g = template.factor();

    let n_blocks = n_draws.div_ceil(MC_BLOCK);
    let mut maxima: Vec<f64> = (0..n_blocks)
        .into_par_iter()
        .flat_map_iter(|block| {
            let mut rng = substream(seed, &[CHANNEL_THRESHOLD, block]);
            let count = MC_BLOCK.min(n_draws - block * MC_BLOCK) as usize;
            let mut out = Vec::with_capacity(count);
            let mut z = vec![0.0f64; m];
            for _ in 0..count {
                for zi in z.iter_mut() {
                    *zi = rng.sample(StandardNormal);
                }
                let mut best = f64::NEG_INFINITY;
                for row in 0..m {
                    let mut acc = 0.0;
                    for (gc, zc) in g[row * m..(row + 1) * m].iter().zip(&z) {
                        acc += gc * zc;
                    }
                    best = best.max(acc);
                }
                out.push(best);
            }
            out
        })
        .collect();

    maxima.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((1.0 - alpha) * n_draws as f64).ceil() as usize;
    Ok(maxima[rank.clamp(1, maxima.len()) - 1])
}

/// Outcome of the studentized max test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestOutcome {
    /// Studentized scan maximum S_d.
    pub s_d: f64,
    pub reject: bool,
    pub threshold: f64,
    pub tau_hat: usize,
    pub max_w: f64,
}

/// Evaluate the level-alpha studentized max test against a complete
/// calibration model.
pub fn run_test(profile: &ScanProfile, model: &CalibrationModel) -> Result<TestOutcome> {
    let c_alpha = model
        .c_alpha
        .ok_or_else(|| DakError::Config("calibration model has no threshold".into()))?;
    if model.n_obs != profile.n_obs() {
        return Err(DakError::Config(format!(
            "model calibrated for N = {}, profile has N = {}",
            model.n_obs,
            profile.n_obs()
        )));
    }
    if model.is_degenerate() {
        return Err(DakError::DegenerateCalibration(
            "long-run scale is zero; the test cannot be studentized".into(),
        ));
    }
    let ChangePointEstimate { tau_hat, max_value } = locate(profile)?;
    let s_d = (profile.n_dims() as f64).sqrt() * max_value / model.sigma_long;
    Ok(TestOutcome { s_d, reject: s_d > c_alpha, threshold: c_alpha, tau_hat, max_w: max_value })
}

/// Scan a sample with its rows taken in the given order (0-based indices).
fn scan_row_order(block: &SampleMatrix, order: &[usize]) -> Result<ScanProfile> {
    let rows: Vec<Vec<f64>> = order.iter().map(|&i| block.row(i + 1).to_vec()).collect();
    scan(&SampleMatrix::from_rows(&rows)?)
}

/// Whitened scan entries sqrt(d) K^{-1/2} W for one row order.
fn whitened_entries(
    block: &SampleMatrix,
    inv_sqrt: &[f64],
    order: &[usize],
) -> Result<Vec<f64>> {
    let profile = scan_row_order(block, order)?;
    let m = profile.split_set().len();
    let sqrt_d = (block.n_dims() as f64).sqrt();
    let mut out = vec![0.0f64; m];
    for i in 0..m {
        let mut acc = 0.0;
        for j in 0..m {
            acc += inv_sqrt[i * m + j] * profile.w_values()[j];
        }
        out[i] = sqrt_d * acc;
    }
    Ok(out)
}

/// Permutation-whitened scale estimate: permute the calibration rows,
/// whiten each raw scan vector by sqrt(d) K^{-1/2}, pool all entries over
/// permutations, and return their sample standard deviation.
pub fn permutation_whitened_sigma(
    block: &SampleMatrix,
    template: &CovarianceTemplate,
    n_perm: usize,
    seed: u64,
) -> Result<f64> {
    if template.n_obs() != block.n_obs() {
        return Err(DakError::Config(format!(
            "template built for N = {}, calibration block has N = {}",
            template.n_obs(),
            block.n_obs()
        )));
    }
    if n_perm == 0 {
        return Err(DakError::Config("need at least one permutation".into()));
    }
    let inv_sqrt = template.inverse_sqrt()?;
    let n = block.n_obs();

    let mut rng = substream(seed, &[CHANNEL_PERMUTATION]);
    let mut pooled = Vec::with_capacity(n_perm * template.n_splits());
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..n_perm {
        // Fisher-Yates
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        pooled.extend(whitened_entries(block, &inv_sqrt, &order)?);
    }
    Ok(sample_std(&pooled))
}

/// Whitened spread of the unpermuted block; the n_perm = 1 identity case of
/// the permutation estimator.
pub fn identity_whitened_sigma(
    block: &SampleMatrix,
    template: &CovarianceTemplate,
) -> Result<f64> {
    let inv_sqrt = template.inverse_sqrt()?;
    let order: Vec<usize> = (0..block.n_obs()).collect();
    let entries = whitened_entries(block, &inv_sqrt, &order)?;
    Ok(sample_std(&entries))
}

fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
    var.sqrt()
}

/// Deterministic derived seed for threshold simulation, exposed so reports
/// can record the exact substream identity.
pub fn threshold_stream_id(seed: u64) -> u64 {
    derive_seed(seed, &[CHANNEL_THRESHOLD])
}
