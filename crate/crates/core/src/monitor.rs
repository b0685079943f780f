//! Sliding fixed-window sequential detector: keeps the last N0 observations,
//! recomputes the calibrated window statistic at every step, raises alarms,
//! localizes the change, and reports suprathreshold excursion bands.

use crate::calibration::{
    permutation_whitened_sigma, sigma_long_plugin_with_template, CalibrationModel, HacConfig,
    ScaleEstimator,
};
use crate::error::{DakError, Result};
use crate::sample::SampleMatrix;
use crate::scan::{scan, scan_rows};
use crate::theory::CovarianceTemplate;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Alarm handling once the threshold is crossed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MonitorMode {
    /// Report the stopping time and halt; the theoretical stopping rule.
    #[default]
    FirstAlarm,
    /// Keep monitoring and accumulate alarms for excursion analysis.
    Continuous,
}

/// How the long-run scale is estimated from the calibration block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SigmaEstimator {
    HacPlugin,
    /// Permutation-whitened estimate with the given permutation count.
    PermutationWhitened { n_perm: usize },
}

/// Frozen monitoring configuration: window length, level, calibration from a
/// pre-change block, and the covariance template for that window length.
#[derive(Debug, Clone)]
pub struct MonitorConfig {
    pub window: usize,
    pub alpha: f64,
    pub calibration: CalibrationModel,
    pub template: CovarianceTemplate,
    pub mode: MonitorMode,
}

impl MonitorConfig {
    pub fn threshold(&self) -> f64 {
        self.calibration.c_alpha.expect("calibration is complete by construction")
    }

    pub fn sigma_long(&self) -> f64 {
        self.calibration.sigma_long
    }

    /// Admissible within-window splits {2, ..., N0-2}.
    pub fn split_set(&self) -> Vec<usize> {
        (2..=self.window - 2).collect()
    }
}

/// Default Monte-Carlo draw count for the threshold quantile.
pub const DEFAULT_MC_DRAWS: u64 = 200_000;

/// One-time calibration before monitoring begins: builds the covariance
/// template for the window length, estimates the long-run scale from the
/// pre-change block, and simulates the threshold quantile.
pub fn calibrate_monitor(
    calib_block: &SampleMatrix,
    alpha: f64,
    hac: &HacConfig,
    estimator: SigmaEstimator,
    mode: MonitorMode,
    mc_draws: u64,
    seed: u64,
) -> Result<MonitorConfig> {
    let window = calib_block.n_obs();
    let template = CovarianceTemplate::new(window)?;

    let profile = scan(calib_block)?;
    let mut model = sigma_long_plugin_with_template(&profile, hac, &template)?;
    if let SigmaEstimator::PermutationWhitened { n_perm } = estimator {
        let sigma = permutation_whitened_sigma(calib_block, &template, n_perm, seed)?;
        model.sigma2_long = sigma * sigma;
        model.sigma_long = sigma;
        model.estimator = ScaleEstimator::PermutationWhitened;
    }
    if model.is_degenerate() {
        return Err(DakError::DegenerateCalibration(
            "calibration block yields a zero long-run scale".into(),
        ));
    }
    let model = model.with_threshold(&template, alpha, mc_draws, seed)?;
    Ok(MonitorConfig { window, alpha, calibration: model, template, mode })
}

/// Alarm record emitted when the window statistic crosses the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlarmEvent {
    /// Stream index s at which the alarm fired.
    pub time: usize,
    /// Window statistic M_d(s).
    pub statistic: f64,
    pub threshold: f64,
    /// Smallest within-window maximizing split.
    pub argmax_split: usize,
    /// Localized change-point (s - N0) + argmax.
    pub tau_hat: usize,
}

/// Result of one monitoring step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Window statistic, present once the buffer is full.
    pub statistic: Option<f64>,
    /// Alarm raised at this step, if any.
    pub alarm: Option<AlarmEvent>,
}

/// Mutable monitoring state for one stream.
#[derive(Debug, Clone)]
pub struct MonitorState {
    n_dims: usize,
    window: usize,
    buffer: VecDeque<Vec<f64>>,
    time: usize,
    alarms: Vec<AlarmEvent>,
    last_stat: Option<f64>,
    stat_series: Vec<(usize, f64)>,
    stopped: bool,
}

impl MonitorState {
    pub fn new(config: &MonitorConfig, n_dims: usize) -> Self {
        Self {
            n_dims,
            window: config.window,
            buffer: VecDeque::with_capacity(config.window),
            time: 0,
            alarms: Vec::new(),
            last_stat: None,
            stat_series: Vec::new(),
            stopped: false,
        }
    }

    /// Current stream index (number of observations consumed).
    pub fn time(&self) -> usize {
        self.time
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn alarms(&self) -> &[AlarmEvent] {
        &self.alarms
    }

    pub fn last_stat(&self) -> Option<f64> {
        self.last_stat
    }

    /// All emitted (s, M_d(s)) pairs, for excursion analysis.
    pub fn stat_series(&self) -> &[(usize, f64)] {
        &self.stat_series
    }

    /// First alarm time, the stopping time of the procedure.
    pub fn stopping_time(&self) -> Option<usize> {
        self.alarms.first().map(|a| a.time)
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped
    }
}

/// Push one observation and, once the window is full, evaluate the
/// calibrated window statistic against the frozen threshold.
pub fn step(state: &mut MonitorState, config: &MonitorConfig, obs: &[f64]) -> Result<StepOutcome> {
    if state.stopped {
        return Err(DakError::State(
            "monitor already stopped on its first alarm; stepping has halted".into(),
        ));
    }
    if obs.len() != state.n_dims {
        return Err(DakError::InvalidInput(format!(
            "observation has {} coordinates, monitor expects {}",
            obs.len(),
            state.n_dims
        )));
    }
    if let Some(pos) = obs.iter().position(|v| !v.is_finite()) {
        return Err(DakError::InvalidInput(format!(
            "non-finite entry at coordinate {}",
            pos + 1
        )));
    }

    if state.buffer.len() == state.window {
        // recycle the evicted row's storage
        let mut recycled = state.buffer.pop_front().expect("buffer non-empty");
        recycled.copy_from_slice(obs);
        state.buffer.push_back(recycled);
    } else {
        state.buffer.push_back(obs.to_vec());
    }
    state.time += 1;

    if state.buffer.len() < state.window {
        return Ok(StepOutcome { statistic: None, alarm: None });
    }

    let (stat, argmax_split) = window_statistic(state, config)?;
    state.last_stat = Some(stat);
    state.stat_series.push((state.time, stat));

    let threshold = config.threshold();
    let alarm = if stat > threshold {
        let event = AlarmEvent {
            time: state.time,
            statistic: stat,
            threshold,
            argmax_split,
            tau_hat: state.time - state.window + argmax_split,
        };
        state.alarms.push(event);
        if config.mode == MonitorMode::FirstAlarm {
            state.stopped = true;
        }
        Some(event)
    } else {
        None
    };
    Ok(StepOutcome { statistic: Some(stat), alarm })
}

/// Studentized window maximum and its smallest maximizing split.
fn window_statistic(state: &MonitorState, config: &MonitorConfig) -> Result<(f64, usize)> {
    let rows: Vec<&[f64]> = state.buffer.iter().map(Vec::as_slice).collect();
    let profile = scan_rows(&rows)?;
    let sqrt_d = (state.n_dims as f64).sqrt();
    let sigma = config.sigma_long();

    let mut best = f64::NEG_INFINITY;
    let mut best_split = 0;
    for (&k, &w) in profile.split_set().iter().zip(profile.w_values()) {
        let value = sqrt_d * w / sigma;
        if value > best {
            best = value;
            best_split = k;
        }
    }
    Ok((best, best_split))
}

/// Localized change-point from the first alarm: (nu_hat - N0) plus the
/// smallest within-window maximizer at the alarm.
pub fn localize_alarm(state: &MonitorState, config: &MonitorConfig) -> Result<usize> {
    let first = state
        .alarms
        .first()
        .ok_or_else(|| DakError::State("no alarm has been raised".into()))?;
    Ok(first.time - config.window + first.argmax_split)
}

/// Maximal run of consecutive suprathreshold statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcursionBand {
    pub start: usize,
    pub end: usize,
    /// Index of the (first) maximal statistic inside the band.
    pub peak_s: usize,
    pub peak_value: f64,
}

/// Decompose an ordered statistic series into maximal suprathreshold runs.
pub fn excursion_bands(series: &[(usize, f64)], threshold: f64) -> Vec<ExcursionBand> {
    let mut bands = Vec::new();
    let mut current: Option<ExcursionBand> = None;
    let mut prev_s: Option<usize> = None;

    for &(s, v) in series {
        let contiguous = prev_s.is_some_and(|p| s == p + 1);
        prev_s = Some(s);
        if v > threshold {
            match current.as_mut() {
                Some(band) if contiguous => {
                    band.end = s;
                    if v > band.peak_value {
                        band.peak_value = v;
                        band.peak_s = s;
                    }
                }
                _ => {
                    if let Some(done) = current.take() {
                        bands.push(done);
                    }
                    current = Some(ExcursionBand { start: s, end: s, peak_s: s, peak_value: v });
                }
            }
        } else if let Some(done) = current.take() {
            bands.push(done);
        }
    }
    if let Some(done) = current {
        bands.push(done);
    }
    bands
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian_block(n: usize, d: usize, seed: u64) -> SampleMatrix {
        let mut rng = substream(seed, &[100]);
        let values: Vec<f64> = (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        SampleMatrix::new(n, d, values).unwrap()
    }

    fn config(n0: usize, d: usize, alpha: f64, seed: u64, mode: MonitorMode) -> MonitorConfig {
        let block = gaussian_block(n0, d, seed);
        calibrate_monitor(
            &block,
            alpha,
            &HacConfig::default(),
            SigmaEstimator::HacPlugin,
            mode,
            20_000,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn window_arithmetic_and_template_size() {
        let cfg = config(10, 64, 0.05, 1, MonitorMode::FirstAlarm);
        assert_eq!(cfg.split_set(), (2..=8).collect::<Vec<_>>());
        assert_eq!(cfg.template.n_splits(), 7);
    }

    #[test]
    fn calibration_is_deterministic() {
        let a = config(10, 64, 0.05, 9, MonitorMode::FirstAlarm);
        let b = config(10, 64, 0.05, 9, MonitorMode::FirstAlarm);
        assert_eq!(a.threshold().to_bits(), b.threshold().to_bits());
        assert_eq!(a.sigma_long().to_bits(), b.sigma_long().to_bits());
    }

    #[test]
    fn threshold_grows_as_alpha_shrinks() {
        let loose = config(10, 64, 0.05, 2, MonitorMode::FirstAlarm);
        let tight = config(10, 64, 0.002, 2, MonitorMode::FirstAlarm);
        assert!(tight.threshold() > loose.threshold());
    }

    #[test]
    fn no_statistic_before_window_fills() {
        let cfg = config(10, 16, 0.05, 3, MonitorMode::FirstAlarm);
        let mut state = MonitorState::new(&cfg, 16);
        let mut rng = substream(3, &[55]);
        for i in 0..9 {
            let obs: Vec<f64> = (0..16).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let out = step(&mut state, &cfg, &obs).unwrap();
            assert!(out.statistic.is_none(), "no statistic at step {i}");
        }
        let obs: Vec<f64> = (0..16).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let out = step(&mut state, &cfg, &obs).unwrap();
        assert!(out.statistic.is_some());
    }

    #[test]
    fn constant_stream_never_alarms() {
        let cfg = config(10, 16, 0.002, 4, MonitorMode::FirstAlarm);
        let mut state = MonitorState::new(&cfg, 16);
        let obs = vec![1.5; 16];
        for _ in 0..50 {
            let out = step(&mut state, &cfg, &obs).unwrap();
            assert!(out.alarm.is_none());
            if let Some(stat) = out.statistic {
                assert_eq!(stat, 0.0);
            }
        }
        assert!(state.alarms().is_empty());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let cfg = config(10, 16, 0.05, 5, MonitorMode::FirstAlarm);
        let mut state = MonitorState::new(&cfg, 16);
        let err = step(&mut state, &cfg, &[0.0; 5]).unwrap_err();
        assert!(matches!(err, DakError::InvalidInput(_)));
    }

    #[test]
    fn strong_shift_alarms_and_localizes() {
        let d = 300;
        let n0 = 10;
        let cfg = config(n0, d, 0.002, 6, MonitorMode::FirstAlarm);
        let mut state = MonitorState::new(&cfg, d);
        let mut rng = substream(6, &[77]);
        let nu = 20;
        let mut alarm_time = None;
        for s in 1..=60 {
            let shift = if s > nu { 6.0 } else { 0.0 };
            let obs: Vec<f64> =
                (0..d).map(|_| rng.sample::<f64, _>(StandardNormal) + shift).collect();
            match step(&mut state, &cfg, &obs) {
                Ok(out) => {
                    if let Some(a) = out.alarm {
                        alarm_time = Some(a.time);
                        break;
                    }
                }
                Err(DakError::State(_)) => break,
                Err(e) => panic!("unexpected error: {e}"),
            }
        }
        let nu_hat = alarm_time.expect("strong shift must alarm");
        assert!(nu_hat > nu && nu_hat <= nu + 6, "nu_hat = {nu_hat}");
        let tau = localize_alarm(&state, &cfg).unwrap();
        assert!((nu as i64 - tau as i64).abs() <= 2, "tau_on = {tau}");
        // stepping after a first-alarm stop is a state error
        let err = step(&mut state, &cfg, &vec![0.0; d]).unwrap_err();
        assert!(matches!(err, DakError::State(_)));
    }

    #[test]
    fn localize_requires_alarm() {
        let cfg = config(10, 16, 0.05, 7, MonitorMode::FirstAlarm);
        let state = MonitorState::new(&cfg, 16);
        assert!(matches!(localize_alarm(&state, &cfg), Err(DakError::State(_))));
    }

    #[test]
    fn statistics_depend_only_on_window_rows() {
        // perturbing rows that have left the window leaves M_d(s) unchanged
        let d = 32;
        let n0 = 8;
        let cfg = config(n0, d, 0.05, 8, MonitorMode::Continuous);
        let mut rng = substream(8, &[3]);
        let stream: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();

        let mut state_a = MonitorState::new(&cfg, d);
        for obs in &stream {
            step(&mut state_a, &cfg, obs).unwrap();
        }

        // perturb the first 12 rows; statistic at s = 20 uses rows 13..20 only
        let mut perturbed = stream.clone();
        for row in perturbed.iter_mut().take(12) {
            for v in row.iter_mut() {
                *v += 100.0;
            }
        }
        let mut state_b = MonitorState::new(&cfg, d);
        for obs in &perturbed {
            step(&mut state_b, &cfg, obs).unwrap();
        }
        let last_a = state_a.stat_series().last().unwrap();
        let last_b = state_b.stat_series().last().unwrap();
        assert_eq!(last_a.0, last_b.0);
        assert_eq!(last_a.1.to_bits(), last_b.1.to_bits());
    }

    #[test]
    fn deterministic_replay() {
        let d = 24;
        let cfg = config(8, d, 0.01, 10, MonitorMode::Continuous);
        let mut rng = substream(10, &[4]);
        let stream: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let run = |stream: &[Vec<f64>]| {
            let mut st = MonitorState::new(&cfg, d);
            for obs in stream {
                step(&mut st, &cfg, obs).unwrap();
            }
            (st.alarms().to_vec(), st.stat_series().to_vec())
        };
        let (a1, s1) = run(&stream);
        let (a2, s2) = run(&stream);
        assert_eq!(a1, a2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn excursion_band_examples() {
        assert!(excursion_bands(&[(1, 0.1), (2, 0.3)], 0.5).is_empty());

        let series = [(1, 0.1), (2, 0.9), (3, 0.8), (4, 0.1)];
        let bands = excursion_bands(&series, 0.5);
        assert_eq!(bands.len(), 1);
        assert_eq!((bands[0].start, bands[0].end, bands[0].peak_s), (2, 3, 2));

        let bursts = [
            (1, 0.9),
            (2, 0.1),
            (3, 0.7),
            (4, 0.8),
            (5, 0.1),
            (6, 0.6),
        ];
        let bands = excursion_bands(&bursts, 0.5);
        assert_eq!(bands.len(), 3);
        assert_eq!(bands[0].start, 1);
        assert_eq!((bands[1].start, bands[1].end, bands[1].peak_s), (3, 4, 4));
        assert_eq!(bands[2].start, 6);
    }

    #[test]
    fn excursion_peak_tie_takes_first() {
        let series = [(5, 0.9), (6, 0.9)];
        let bands = excursion_bands(&series, 0.5);
        assert_eq!(bands.len(), 1);
        assert_eq!(bands[0].peak_s, 5);
    }
}
