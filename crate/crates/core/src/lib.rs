//! Dimension-averaged angular-kernel (DAK) scan for offline change-point
//! detection in high-dimensional, fixed-sample-size data, with a
//! sliding-window sequential extension for streams.
//!
//! The scan compares the two sides of each candidate split by a pooled-anchor
//! sign kernel averaged across coordinates, so it is nonparametric, free of
//! tuning parameters, moment-agnostic, and invariant under coordinate-wise
//! monotone rescaling. Calibration rests on the exact null covariance
//! template of the scan vector together with a Bartlett-HAC estimate of the
//! single long-run scale factor.
//!
//! Module map:
//! - [`sample`]: observation blocks and column slices
//! - [`kernel`]: the angular-kernel engine and per-coordinate statistics
//! - [`scan`]: the offline scan profile and change-point estimate
//! - [`theory`]: exact shape function, covariance template, dilogarithm,
//!   and signal-factor oracles
//! - [`calibration`]: HAC plug-in scale, Monte-Carlo thresholds, the
//!   studentized max test, and the permutation-whitened scale
//! - [`monitor`]: the sliding fixed-window sequential detector
//! - [`simgen`]: seeded scenario generators and experiment drivers
//! - [`io`]: CSV and binary matrix formats

pub mod calibration;
pub mod error;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod monitor;
pub mod rng;
pub mod sample;
pub mod scan;
pub mod simgen;
pub mod theory;

pub use calibration::{
    autocovariance, hac_lrv, mc_threshold, permutation_whitened_sigma, run_test,
    sigma_long_plugin, CalibrationModel, HacConfig, TestOutcome,
};
pub use error::{DakError, Result};
pub use kernel::{
    angular_indicator, build_pair_kernel, pooled_pair_kernel, xi_matrix, xi_profile,
    PairKernelMatrix, XiMatrix,
};
pub use monitor::{
    calibrate_monitor, excursion_bands, localize_alarm, step, AlarmEvent, ExcursionBand,
    MonitorConfig, MonitorMode, MonitorState, SigmaEstimator,
};
pub use sample::{CoordinateSlice, SampleMatrix};
pub use scan::{locate, scan, scan_rows, ChangePointEstimate, ScanProfile};
pub use simgen::{
    generate, run_localization, run_online, ExperimentReport, OnlineReport, Scenario,
    ScenarioSpec,
};
pub use theory::{
    delta_cauchy_scale, delta_gaussian_shift, delta_numeric_cvm, dilog, shape,
    CovarianceTemplate, ShapeProfile, SignalFactor, SignalMethod,
};

/// Crate version, embedded in reports for provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
