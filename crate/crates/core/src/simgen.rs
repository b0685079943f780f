//! Seeded scenario generators for every distributional example in the
//! experiment suite, plus the localization and online experiment drivers.
//!
//! Replications are embarrassingly parallel: replication r draws from the
//! substream (seed, [channel, r]), and reports are reduced in replication
//! order, so results are identical for a fixed seed regardless of thread
//! count.

use crate::calibration::{
    mc_threshold, sigma_long_plugin_with_template, HacConfig, GENERATOR_ID,
};
use crate::error::{DakError, Result};
use crate::monitor::{step, MonitorConfig, MonitorMode, MonitorState};
use crate::rng::substream;
use crate::sample::SampleMatrix;
use crate::scan::{locate, scan};
use crate::theory::CovarianceTemplate;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

/// Substream channels.
const CHANNEL_DATA: u64 = 0x6461_7461;
const CHANNEL_CALIB: u64 = 0x6361_6c62;
const CHANNEL_STREAM: u64 = 0x7374_726d;
const CHANNEL_THRESH: u64 = 0x7165_7563;

/// Distributional change scenarios. Pre-change law F, post-change law G.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Scenario {
    /// Cauchy(0,1) -> Cauchy(shift,1) in every coordinate.
    CauchyLocation { shift: f64 },
    /// Cauchy(location,1) -> Cauchy(location,lambda) in every coordinate.
    CauchyScale { location: f64, lambda: f64 },
    /// Dirichlet(1_d) -> Dirichlet(post_concentration * 1_d).
    Dirichlet { post_concentration: f64 },
    /// N(0,1) -> N(1,1) in the first floor(fraction*d) coordinates.
    GaussianSparseMean { fraction: f64, shift: f64 },
    /// First ceil(2d/3) coordinates N(0,1)->N(shift,1), last floor(d/3)
    /// Cauchy(0,1)->Cauchy(shift,1).
    CauchyGaussianMix { shift: f64 },
    /// N(0,1) -> N(shift,1) in every coordinate.
    GaussianLocation { shift: f64 },
    /// N(0,1) -> N(0, post_sd^2) in every coordinate.
    GaussianScale { post_sd: f64 },
    /// N(0,I) -> N(0, I + b v v^T); v defaults to the unit constant vector.
    GaussianSpikedCov { b: f64, v: Option<Vec<f64>> },
    /// N(0,I) -> equicorrelated N(0,Sigma(rho)) with unchanged marginals.
    GaussianSameMarginals { rho: f64 },
    /// Laplace(0,1) -> Laplace(shift,1) in every coordinate.
    LaplaceLocation { shift: f64 },
    /// B_{p_pre} X -> B_{p_post} X with X standard normal.
    BernoulliGaussian { p_pre: f64, p_post: f64 },
    /// N(0,1) -> (1-eps) N(0,1) + eps N(contaminant,1) per coordinate.
    GaussianMixture { epsilon: f64, contaminant: f64 },
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::CauchyLocation { .. } => "cauchy_location",
            Scenario::CauchyScale { .. } => "cauchy_scale",
            Scenario::Dirichlet { .. } => "dirichlet",
            Scenario::GaussianSparseMean { .. } => "gaussian_sparse_mean",
            Scenario::CauchyGaussianMix { .. } => "cauchy_gaussian_mix",
            Scenario::GaussianLocation { .. } => "gaussian_location",
            Scenario::GaussianScale { .. } => "gaussian_scale",
            Scenario::GaussianSpikedCov { .. } => "gaussian_spiked_cov",
            Scenario::GaussianSameMarginals { .. } => "gaussian_same_marginals",
            Scenario::LaplaceLocation { .. } => "laplace_location",
            Scenario::BernoulliGaussian { .. } => "bernoulli_gaussian",
            Scenario::GaussianMixture { .. } => "gaussian_mixture",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = DakError;

    /// Parse a scenario by name with its standard parameters.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "cauchy_location" => Scenario::CauchyLocation { shift: 1.0 },
            "cauchy_scale" => Scenario::CauchyScale { location: 1.0, lambda: 2.0 },
            "dirichlet" => Scenario::Dirichlet { post_concentration: 0.1 },
            "gaussian_sparse_mean" => Scenario::GaussianSparseMean { fraction: 0.05, shift: 1.0 },
            "cauchy_gaussian_mix" => Scenario::CauchyGaussianMix { shift: 1.0 },
            "gaussian_location" => Scenario::GaussianLocation { shift: 1.0 },
            "gaussian_scale" => Scenario::GaussianScale { post_sd: 2.0 },
            "gaussian_spiked_cov" => Scenario::GaussianSpikedCov { b: 5.0, v: None },
            "gaussian_same_marginals" => Scenario::GaussianSameMarginals { rho: 0.3 },
            "laplace_location" => Scenario::LaplaceLocation { shift: 1.0 },
            "bernoulli_gaussian" => Scenario::BernoulliGaussian { p_pre: 0.1, p_post: 0.9 },
            "gaussian_mixture" => Scenario::GaussianMixture { epsilon: 0.1, contaminant: 10.0 },
            other => {
                return Err(DakError::Config(format!("unknown scenario '{other}'")));
            }
        })
    }
}

/// A scenario instantiated at a concrete size, with an optional change-point
/// (none = null data, all rows from F).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub n_dims: usize,
    pub n_obs: usize,
    pub tau: Option<usize>,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_obs < 4 {
            return Err(DakError::Config(format!("need N >= 4, got {}", self.n_obs)));
        }
        if self.n_dims == 0 {
            return Err(DakError::Config("need at least one coordinate".into()));
        }
        if let Some(tau) = self.tau {
            if tau < 2 || tau > self.n_obs - 2 {
                return Err(DakError::Domain(format!(
                    "change-point {tau} outside admissible range {{2,...,{}}}",
                    self.n_obs - 2
                )));
            }
        }
        match &self.scenario {
            Scenario::CauchyScale { lambda, .. } => {
                if !(*lambda > 0.0) {
                    return Err(DakError::Domain(format!("lambda must be > 0, got {lambda}")));
                }
            }
            Scenario::Dirichlet { post_concentration } => {
                if !(*post_concentration > 0.0) {
                    return Err(DakError::Domain("concentration must be > 0".into()));
                }
            }
            Scenario::GaussianSparseMean { fraction, .. } => {
                if !(0.0..=1.0).contains(fraction) {
                    return Err(DakError::Domain(format!(
                        "sparse fraction must lie in [0,1], got {fraction}"
                    )));
                }
            }
            Scenario::GaussianScale { post_sd } => {
                if !(*post_sd > 0.0) {
                    return Err(DakError::Domain("post-change sd must be > 0".into()));
                }
            }
            Scenario::GaussianSpikedCov { b, v } => {
                if !(*b >= 0.0) {
                    return Err(DakError::Domain("spike size must be >= 0".into()));
                }
                if let Some(v) = v {
                    if v.len() != self.n_dims {
                        return Err(DakError::Domain(format!(
                            "spike direction has {} entries, expected {}",
                            v.len(),
                            self.n_dims
                        )));
                    }
                    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if (norm - 1.0).abs() > 1e-8 {
                        return Err(DakError::Domain("spike direction must be a unit vector".into()));
                    }
                }
            }
            Scenario::GaussianSameMarginals { rho } => {
                if !(0.0..1.0).contains(rho) {
                    return Err(DakError::Domain("equicorrelation must lie in [0,1)".into()));
                }
            }
            Scenario::BernoulliGaussian { p_pre, p_post } => {
                for p in [p_pre, p_post] {
                    if !(0.0..=1.0).contains(p) {
                        return Err(DakError::Domain("mask probability must lie in [0,1]".into()));
                    }
                }
            }
            Scenario::GaussianMixture { epsilon, .. } => {
                if !(0.0..=1.0).contains(epsilon) {
                    return Err(DakError::Domain("mixture weight must lie in [0,1]".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Standard Cauchy variate by the pinned tan(pi (U - 1/2)) scheme.
fn cauchy_std(rng: &mut ChaCha12Rng) -> f64 {
    let u: f64 = rng.random();
    (PI * (u - 0.5)).tan()
}

/// Laplace(0,1) variate by inverse CDF.
fn laplace_std(rng: &mut ChaCha12Rng) -> f64 {
    let u: f64 = rng.random();
    let centered = u - 0.5;
    -centered.signum() * (1.0 - 2.0 * centered.abs()).ln()
}

/// Fill one observation row from the pre-change (post = false) or
/// post-change (post = true) law of the scenario.
fn fill_row(scenario: &Scenario, post: bool, row: &mut [f64], rng: &mut ChaCha12Rng) {
    let d = row.len();
    match scenario {
        Scenario::CauchyLocation { shift } => {
            let loc = if post { *shift } else { 0.0 };
            for v in row.iter_mut() {
                *v = loc + cauchy_std(rng);
            }
        }
        Scenario::CauchyScale { location, lambda } => {
            let scale = if post { *lambda } else { 1.0 };
            for v in row.iter_mut() {
                *v = location + scale * cauchy_std(rng);
            }
        }
        Scenario::Dirichlet { post_concentration } => {
            // normalized Gamma(alpha, 1) variates
            let alpha = if post { *post_concentration } else { 1.0 };
            let gamma = Gamma::new(alpha, 1.0).expect("validated concentration");
            let mut total = 0.0;
            for v in row.iter_mut() {
                let g: f64 = gamma.sample(rng);
                *v = g;
                total += g;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        Scenario::GaussianSparseMean { fraction, shift } => {
            let s_d = (fraction * d as f64).floor() as usize;
            for (k, v) in row.iter_mut().enumerate() {
                let mean = if post && k < s_d { *shift } else { 0.0 };
                *v = mean + rng.sample::<f64, _>(StandardNormal);
            }
        }
        Scenario::CauchyGaussianMix { shift } => {
            let d2 = d / 3;
            let d1 = d - d2; // ceil(2d/3)
            let loc = if post { *shift } else { 0.0 };
            for v in row.iter_mut().take(d1) {
                *v = loc + rng.sample::<f64, _>(StandardNormal);
            }
            for v in row.iter_mut().skip(d1) {
                *v = loc + cauchy_std(rng);
            }
        }
        Scenario::GaussianLocation { shift } => {
            let loc = if post { *shift } else { 0.0 };
            for v in row.iter_mut() {
                *v = loc + rng.sample::<f64, _>(StandardNormal);
            }
        }
        Scenario::GaussianScale { post_sd } => {
            let sd = if post { *post_sd } else { 1.0 };
            for v in row.iter_mut() {
                *v = sd * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Scenario::GaussianSpikedCov { b, v } => {
            for x in row.iter_mut() {
                *x = rng.sample::<f64, _>(StandardNormal);
            }
            if post {
                // rank-one update: add sqrt(b) * w * v with w independent
                // standard normal, giving covariance I + b v v^T
                let w: f64 = rng.sample(StandardNormal);
                let coef = b.sqrt() * w;
                match v {
                    Some(dir) => {
                        for (x, vk) in row.iter_mut().zip(dir) {
                            *x += coef * vk;
                        }
                    }
                    None => {
                        let unit = 1.0 / (d as f64).sqrt();
                        for x in row.iter_mut() {
                            *x += coef * unit;
                        }
                    }
                }
            }
        }
        Scenario::GaussianSameMarginals { rho } => {
            if post {
                let shared: f64 = rng.sample(StandardNormal);
                let a = (1.0 - rho).sqrt();
                let b = rho.sqrt();
                for v in row.iter_mut() {
                    *v = a * rng.sample::<f64, _>(StandardNormal) + b * shared;
                }
            } else {
                for v in row.iter_mut() {
                    *v = rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        Scenario::LaplaceLocation { shift } => {
            let loc = if post { *shift } else { 0.0 };
            for v in row.iter_mut() {
                *v = loc + laplace_std(rng);
            }
        }
        Scenario::BernoulliGaussian { p_pre, p_post } => {
            let p = if post { *p_post } else { *p_pre };
            for v in row.iter_mut() {
                let keep: f64 = rng.random();
                let x: f64 = rng.sample(StandardNormal);
                *v = if keep < p { x } else { 0.0 };
            }
        }
        Scenario::GaussianMixture { epsilon, contaminant } => {
            for v in row.iter_mut() {
                let x: f64 = rng.sample(StandardNormal);
                if post {
                    let pick: f64 = rng.random();
                    *v = if pick < *epsilon { contaminant + x } else { x };
                } else {
                    *v = x;
                }
            }
        }
    }
}

/// Generate one seeded sample: rows 1..tau from F, the rest from G (all
/// rows from F for null specs).
pub fn generate(spec: &ScenarioSpec, seed: u64) -> Result<SampleMatrix> {
    spec.validate()?;
    let mut rng = substream(seed, &[CHANNEL_DATA]);
    let mut values = vec![0.0f64; spec.n_obs * spec.n_dims];
    for i in 0..spec.n_obs {
        let post = spec.tau.is_some_and(|tau| i + 1 > tau);
        let row = &mut values[i * spec.n_dims..(i + 1) * spec.n_dims];
        fill_row(&spec.scenario, post, row, &mut rng);
    }
    SampleMatrix::new(spec.n_obs, spec.n_dims, values)
}

/// Localization error tallies over replications: |tau_hat - tau| of 0, 1, 2,
/// and at least 3. Invalid estimates are recorded with the sentinel N + 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: String,
    pub n_obs: usize,
    pub n_dims: usize,
    pub tau: usize,
    pub replications: usize,
    pub seed: u64,
    /// Counts of |tau_hat - tau| = 0, 1, 2, >= 3.
    pub hit_counts: [usize; 4],
    pub mean_abs_error: f64,
    pub generator: String,
}

impl ExperimentReport {
    /// Empirical proportion of exact localization.
    pub fn hit0(&self) -> f64 {
        self.hit_counts[0] as f64 / self.replications as f64
    }

    pub fn proportions(&self) -> [f64; 4] {
        self.hit_counts.map(|c| c as f64 / self.replications as f64)
    }
}

/// Tally one estimate against the truth, mapping invalid estimates to the
/// sentinel N + 1 so they land in the worst error bucket.
pub(crate) fn tally_estimate(
    tau: usize,
    estimate: Option<usize>,
    n_obs: usize,
    hits: &mut [usize; 4],
) -> usize {
    let est = match estimate {
        Some(t) if (2..=n_obs - 2).contains(&t) => t,
        _ => n_obs + 1,
    };
    let err = tau.abs_diff(est);
    hits[err.min(3)] += 1;
    err
}

/// Deterministic per-replication data seed, shared by the experiment
/// drivers and `--emit-data` so emitted files reproduce in-process runs.
pub fn replication_seed(seed: u64, rep: usize) -> u64 {
    crate::rng::derive_seed(seed, &[CHANNEL_DATA, rep as u64])
}

/// Run the offline localization experiment: generate, scan, locate, tally.
pub fn run_localization(spec: &ScenarioSpec, reps: usize, seed: u64) -> Result<ExperimentReport> {
    spec.validate()?;
    let tau = spec
        .tau
        .ok_or_else(|| DakError::Config("localization experiment needs a change-point".into()))?;
    if reps == 0 {
        return Err(DakError::Config("need at least one replication".into()));
    }

    let estimates: Vec<Result<usize>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let sample = generate(spec, replication_seed(seed, rep))?;
            let profile = scan(&sample)?;
            Ok(locate(&profile)?.tau_hat)
        })
        .collect();

    let mut hits = [0usize; 4];
    let mut total_err = 0usize;
    for est in estimates {
        let est = est?;
        total_err += tally_estimate(tau, Some(est), spec.n_obs, &mut hits);
    }
    Ok(ExperimentReport {
        scenario: spec.scenario.name().to_string(),
        n_obs: spec.n_obs,
        n_dims: spec.n_dims,
        tau,
        replications: reps,
        seed,
        hit_counts: hits,
        mean_abs_error: total_err as f64 / reps as f64,
        generator: GENERATOR_ID.to_string(),
    })
}

/// Online experiment summary per the empirical monitoring definitions:
/// ARL = mean stopping time under the null; FA = fraction of alarms at or
/// before the change; CEDD = mean delay among true detections; ND =
/// fraction with no alarm by the horizon.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OnlineReport {
    pub scenario: String,
    pub n_obs_window: usize,
    pub n_dims: usize,
    pub alpha: f64,
    pub nu: Option<usize>,
    pub horizon: usize,
    pub replications: usize,
    pub seed: u64,
    pub threshold: f64,
    /// Mean stopping time (horizon-capped) when the stream is null.
    pub arl: Option<f64>,
    pub arl_se: Option<f64>,
    /// Pooled one-step exceedance estimate under the null.
    pub q_hat: Option<f64>,
    pub false_alarm_rate: Option<f64>,
    pub cedd: Option<f64>,
    pub non_detection_rate: Option<f64>,
    pub generator: String,
}

struct RepOutcome {
    stop_time: Option<usize>,
    exceed_count: usize,
    window_count: usize,
}

/// Run the sequential monitoring experiment. With `nu = None` the stream is
/// a pure null and the report carries ARL and the pooled exceedance
/// estimate; with a change at `nu` it carries FA, CEDD, and ND.
#[allow(clippy::too_many_arguments)]
pub fn run_online(
    spec: &ScenarioSpec,
    window: usize,
    alpha: f64,
    nu: Option<usize>,
    horizon: usize,
    reps: usize,
    seed: u64,
    hac: &HacConfig,
) -> Result<OnlineReport> {
    spec.validate()?;
    if window < 4 {
        return Err(DakError::Config(format!("window must be >= 4, got {window}")));
    }
    if let Some(nu) = nu {
        if horizon <= nu + window {
            return Err(DakError::Config(format!(
                "horizon {horizon} must exceed nu + window = {}",
                nu + window
            )));
        }
    }
    if reps == 0 {
        return Err(DakError::Config("need at least one replication".into()));
    }

    let template = CovarianceTemplate::new(window)?;
    let threshold = mc_threshold(
        &template,
        alpha,
        crate::monitor::DEFAULT_MC_DRAWS,
        crate::rng::derive_seed(seed, &[CHANNEL_THRESH]),
    )?;

    let outcomes: Vec<Result<RepOutcome>> = (0..reps)
        .into_par_iter()
        .map(|rep| run_online_rep(spec, window, alpha, nu, horizon, reps_seed(seed, rep), threshold, &template, hac))
        .collect();

    let mut stop_times = Vec::with_capacity(reps);
    let mut exceed = 0usize;
    let mut windows = 0usize;
    for out in outcomes {
        let out = out?;
        stop_times.push(out.stop_time);
        exceed += out.exceed_count;
        windows += out.window_count;
    }

    let mut report = OnlineReport {
        scenario: spec.scenario.name().to_string(),
        n_obs_window: window,
        n_dims: spec.n_dims,
        alpha,
        nu,
        horizon,
        replications: reps,
        seed,
        threshold,
        arl: None,
        arl_se: None,
        q_hat: None,
        false_alarm_rate: None,
        cedd: None,
        non_detection_rate: None,
        generator: GENERATOR_ID.to_string(),
    };

    match nu {
        None => {
            let capped: Vec<f64> =
                stop_times.iter().map(|t| t.unwrap_or(horizon) as f64).collect();
            let mean = capped.iter().sum::<f64>() / reps as f64;
            let var = capped.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
                / (reps as f64 - 1.0).max(1.0);
            report.arl = Some(mean);
            report.arl_se = Some((var / reps as f64).sqrt());
            report.q_hat = Some(exceed as f64 / windows.max(1) as f64);
            report.non_detection_rate =
                Some(stop_times.iter().filter(|t| t.is_none()).count() as f64 / reps as f64);
        }
        Some(nu) => {
            let fa = stop_times.iter().filter(|t| t.is_some_and(|s| s <= nu)).count();
            let detected: Vec<usize> = stop_times
                .iter()
                .filter_map(|t| t.filter(|&s| s > nu))
                .collect();
            let nd = stop_times.iter().filter(|t| t.is_none()).count();
            report.false_alarm_rate = Some(fa as f64 / reps as f64);
            report.cedd = if detected.is_empty() {
                None
            } else {
                Some(detected.iter().map(|&s| (s - nu) as f64).sum::<f64>() / detected.len() as f64)
            };
            report.non_detection_rate = Some(nd as f64 / reps as f64);
        }
    }
    Ok(report)
}

fn reps_seed(seed: u64, rep: usize) -> u64 {
    crate::rng::derive_seed(seed, &[CHANNEL_STREAM, rep as u64])
}

#[allow(clippy::too_many_arguments)]
fn run_online_rep(
    spec: &ScenarioSpec,
    window: usize,
    alpha: f64,
    nu: Option<usize>,
    horizon: usize,
    rep_seed: u64,
    threshold: f64,
    template: &CovarianceTemplate,
    hac: &HacConfig,
) -> Result<RepOutcome> {
    // fresh pre-change calibration block, independent of the stream
    let calib_spec = ScenarioSpec { tau: None, n_obs: window, ..spec.clone() };
    let calib = generate(&calib_spec, crate::rng::derive_seed(rep_seed, &[CHANNEL_CALIB]))?;

    let profile = scan(&calib)?;
    let mut model = sigma_long_plugin_with_template(&profile, hac, template)?;
    if model.is_degenerate() {
        return Err(DakError::DegenerateCalibration(
            "calibration block yields a zero long-run scale".into(),
        ));
    }
    model.alpha = Some(alpha);
    model.c_alpha = Some(threshold);

    let config = MonitorConfig {
        window,
        alpha,
        calibration: model,
        template: template.clone(),
        mode: MonitorMode::Continuous,
    };
    let mut state = MonitorState::new(&config, spec.n_dims);

    let mut rng = substream(rep_seed, &[CHANNEL_DATA]);
    let mut row = vec![0.0f64; spec.n_dims];
    let mut stop_time = None;
    let mut exceed_count = 0usize;
    let mut window_count = 0usize;
    for s in 1..=horizon {
        let post = nu.is_some_and(|nu| s > nu);
        fill_row(&spec.scenario, post, &mut row, &mut rng);
        let out = step(&mut state, &config, &row)?;
        if let Some(stat) = out.statistic {
            window_count += 1;
            if stat > threshold {
                exceed_count += 1;
                if stop_time.is_none() {
                    stop_time = Some(s);
                    if nu.is_some() {
                        break; // first alarm settles FA/CEDD for this rep
                    }
                }
            }
        }
    }
    Ok(RepOutcome { stop_time, exceed_count, window_count })
}
