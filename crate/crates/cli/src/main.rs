//! `dak`: offline scan, calibrated testing, threshold simulation, stream
//! monitoring, and the seeded experiment harness, over CSV or binary
//! matrices.
//!
//! Exit codes: 0 ok; 1 detection (only with `test --scriptable`); 2 input
//! error; 3 numeric or degenerate-calibration error.

use clap::{Args, Parser, Subcommand, ValueEnum};
use dak_core::calibration::GENERATOR_ID;
use dak_core::io::{read_matrix_bytes, write_matrix_binary, write_matrix_csv};
use dak_core::monitor::DEFAULT_MC_DRAWS;
use dak_core::simgen::replication_seed;
use dak_core::{
    calibrate_monitor, excursion_bands, generate, locate, mc_threshold, run_localization,
    run_online, run_test, scan, sigma_long_plugin, step, CalibrationModel, CovarianceTemplate,
    DakError, ExperimentReport, HacConfig, MonitorConfig, MonitorMode, MonitorState,
    OnlineReport, SampleMatrix, Scenario, ScenarioSpec, SigmaEstimator,
};
use serde::Serialize;
use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dak", version, about = "Dimension-averaged angular-kernel change-point scan")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Scan a matrix and locate the change-point
    Scan(ScanArgs),
    /// Full calibrated test: scan, plug-in variance, threshold, decision
    Test(TestArgs),
    /// Calibrate from a pre-change block and emit a reusable model
    Calibrate(CalibrateArgs),
    /// Monte-Carlo max quantile of the null scan limit
    Quantile(QuantileArgs),
    /// Monitor a stream of observations with a frozen calibration
    Monitor(MonitorArgs),
    /// Run seeded simulation experiments
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct ScanArgs {
    /// Input matrix path ('-' for stdin); CSV or DAK1 binary
    input: String,
    /// Write the report here instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also write a plot-ready CSV of (t, W_d(t)) pairs
    #[arg(long)]
    emit_profile: Option<PathBuf>,
}

#[derive(Args)]
struct TestArgs {
    input: String,
    /// Test level
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Seed for the threshold simulation
    #[arg(long)]
    seed: u64,
    /// HAC bandwidth override (default floor(d^(1/3)))
    #[arg(long)]
    bandwidth: Option<usize>,
    /// Monte-Carlo draws for the threshold
    #[arg(long, default_value_t = DEFAULT_MC_DRAWS)]
    draws: u64,
    /// Exit with code 1 when the test rejects
    #[arg(long)]
    scriptable: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Pre-change calibration block (N0 rows)
    input: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    bandwidth: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_MC_DRAWS)]
    draws: u64,
    /// Use the permutation-whitened scale estimate with this many permutations
    #[arg(long)]
    permutations: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct QuantileArgs {
    /// Sequence (or window) length N
    #[arg(long)]
    n_obs: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_MC_DRAWS)]
    draws: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct MonitorArgs {
    /// Stream of observations, one CSV row per line ('-' for stdin)
    input: String,
    /// Calibration model produced by `dak calibrate`
    #[arg(long)]
    calibration: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::FirstAlarm)]
    mode: ModeArg,
    /// Write the final report here instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    FirstAlarm,
    Continuous,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario name (e.g. cauchy_location, dirichlet, gaussian_sparse_mean)
    #[arg(long)]
    scenario: String,
    /// Comma-separated dimension list
    #[arg(long, value_delimiter = ',', default_value = "200")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 40)]
    n_obs: usize,
    /// Change-point (omit for a null scenario)
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long)]
    seed: u64,
    /// Run the sequential experiment instead of offline localization
    #[arg(long)]
    online: bool,
    /// Window length for online runs
    #[arg(long, default_value_t = 10)]
    window: usize,
    #[arg(long, default_value_t = 0.002)]
    alpha: f64,
    /// Change time for online runs (omit for a null stream)
    #[arg(long)]
    nu: Option<usize>,
    #[arg(long, default_value_t = 2000)]
    horizon: usize,
    #[arg(long)]
    bandwidth: Option<usize>,
    /// Write the first replication's data set per dimension to this directory
    #[arg(long)]
    emit_data: Option<PathBuf>,
    /// Emit data in the DAK1 binary format instead of CSV
    #[arg(long)]
    binary: bool,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Scan(args) => cmd_scan(args),
        Command::Test(args) => cmd_test(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Quantile(args) => cmd_quantile(args),
        Command::Monitor(args) => cmd_monitor(args),
        Command::Simulate(args) => cmd_simulate(args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn exit_code_for(err: &DakError) -> u8 {
    match err {
        DakError::Numerical(_) | DakError::DegenerateCalibration(_) => 3,
        _ => 2,
    }
}

fn read_input(input: &str) -> Result<SampleMatrix, DakError> {
    let mut bytes = Vec::new();
    if input == "-" {
        std::io::stdin().lock().read_to_end(&mut bytes)?;
    } else {
        bytes = std::fs::read(input)?;
    }
    read_matrix_bytes(&bytes)
}

fn emit<T: Serialize>(report: &T, output: Option<&Path>) -> Result<(), DakError> {
    let text = serde_json::to_string_pretty(report)?;
    match output {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct ScanReport<'a> {
    version: &'a str,
    n_obs: usize,
    n_dims: usize,
    split_set: &'a [usize],
    w_values: &'a [f64],
    tau_hat: usize,
    max_value: f64,
}

fn cmd_scan(args: ScanArgs) -> Result<ExitCode, DakError> {
    let sample = read_input(&args.input)?;
    let profile = scan(&sample)?;
    let estimate = locate(&profile)?;
    if let Some(path) = &args.emit_profile {
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "t,w")?;
        for (t, w) in profile.split_set().iter().zip(profile.w_values()) {
            writeln!(file, "{t},{w}")?;
        }
    }
    let report = ScanReport {
        version: dak_core::VERSION,
        n_obs: profile.n_obs(),
        n_dims: profile.n_dims(),
        split_set: profile.split_set(),
        w_values: profile.w_values(),
        tau_hat: estimate.tau_hat,
        max_value: estimate.max_value,
    };
    emit(&report, args.output.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct TestReport<'a> {
    version: &'a str,
    n_obs: usize,
    n_dims: usize,
    alpha: f64,
    seed: u64,
    bandwidth: usize,
    mc_draws: u64,
    s_d: f64,
    c_alpha: f64,
    reject: bool,
    tau_hat: usize,
    max_w: f64,
    sigma2_long: f64,
    sigma_long: f64,
    per_split_sigma2: &'a [f64],
    k_min_eigenvalue: f64,
    generator: &'a str,
}

fn cmd_test(args: TestArgs) -> Result<ExitCode, DakError> {
    let sample = read_input(&args.input)?;
    let profile = scan(&sample)?;
    let template = CovarianceTemplate::new(sample.n_obs())?;
    let hac = HacConfig { explicit_bandwidth: args.bandwidth };
    let model = sigma_long_plugin(&profile, &hac)?
        .with_threshold(&template, args.alpha, args.draws, args.seed)?;
    let outcome = run_test(&profile, &model)?;
    let report = TestReport {
        version: dak_core::VERSION,
        n_obs: sample.n_obs(),
        n_dims: sample.n_dims(),
        alpha: args.alpha,
        seed: args.seed,
        bandwidth: model.bandwidth,
        mc_draws: args.draws,
        s_d: outcome.s_d,
        c_alpha: outcome.threshold,
        reject: outcome.reject,
        tau_hat: outcome.tau_hat,
        max_w: outcome.max_w,
        sigma2_long: model.sigma2_long,
        sigma_long: model.sigma_long,
        per_split_sigma2: &model.per_split_sigma2,
        k_min_eigenvalue: model.k_min_eigenvalue,
        generator: GENERATOR_ID,
    };
    emit(&report, args.output.as_deref())?;
    if args.scriptable && outcome.reject {
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<ExitCode, DakError> {
    let block = read_input(&args.input)?;
    let hac = HacConfig { explicit_bandwidth: args.bandwidth };
    let estimator = match args.permutations {
        Some(n_perm) => SigmaEstimator::PermutationWhitened { n_perm },
        None => SigmaEstimator::HacPlugin,
    };
    let config = calibrate_monitor(
        &block,
        args.alpha,
        &hac,
        estimator,
        MonitorMode::FirstAlarm,
        args.draws,
        args.seed,
    )?;
    emit(&config.calibration, args.output.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct QuantileReport<'a> {
    version: &'a str,
    n_obs: usize,
    alpha: f64,
    draws: u64,
    seed: u64,
    c_alpha: f64,
    k_min_eigenvalue: f64,
    generator: &'a str,
}

fn cmd_quantile(args: QuantileArgs) -> Result<ExitCode, DakError> {
    let template = CovarianceTemplate::new(args.n_obs)?;
    let c_alpha = mc_threshold(&template, args.alpha, args.draws, args.seed)?;
    let report = QuantileReport {
        version: dak_core::VERSION,
        n_obs: args.n_obs,
        alpha: args.alpha,
        draws: args.draws,
        seed: args.seed,
        c_alpha,
        k_min_eigenvalue: template.min_eigenvalue(),
        generator: GENERATOR_ID,
    };
    emit(&report, args.output.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct MonitorReport<'a> {
    version: &'a str,
    window: usize,
    n_dims: usize,
    alpha: f64,
    threshold: f64,
    sigma_long: f64,
    observations: usize,
    nu_hat: Option<usize>,
    tau_on: Option<usize>,
    alarms: usize,
    bands: Vec<dak_core::ExcursionBand>,
    generator: &'a str,
}

fn parse_stream_row(line: &str, lineno: usize) -> Result<Vec<f64>, DakError> {
    line.trim()
        .split(',')
        .map(|cell| {
            cell.trim().parse::<f64>().map_err(|_| {
                DakError::InvalidInput(format!(
                    "non-numeric cell '{}' at stream line {lineno}",
                    cell.trim()
                ))
            })
        })
        .collect()
}

fn cmd_monitor(args: MonitorArgs) -> Result<ExitCode, DakError> {
    let text = std::fs::read_to_string(&args.calibration)?;
    let model = CalibrationModel::from_json(&text)?;
    if !model.is_complete() {
        return Err(DakError::Config("calibration model has no threshold".into()));
    }
    if model.is_degenerate() {
        return Err(DakError::DegenerateCalibration(
            "calibration model carries a zero long-run scale".into(),
        ));
    }
    let window = model.n_obs;
    let template = CovarianceTemplate::new(window)?;
    let mode = match args.mode {
        ModeArg::FirstAlarm => MonitorMode::FirstAlarm,
        ModeArg::Continuous => MonitorMode::Continuous,
    };
    let alpha = model.alpha.unwrap_or(0.05);
    let config = MonitorConfig { window, alpha, calibration: model, template, mode };

    let stdin = std::io::stdin();
    let reader: Box<dyn BufRead> = if args.input == "-" {
        Box::new(stdin.lock())
    } else {
        Box::new(std::io::BufReader::new(std::fs::File::open(&args.input)?))
    };

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let mut state: Option<MonitorState> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = parse_stream_row(&line, lineno + 1)?;
        let state = state.get_or_insert_with(|| MonitorState::new(&config, row.len()));
        let outcome = step(state, &config, &row)?;
        if let Some(alarm) = outcome.alarm {
            writeln!(out, "{}", serde_json::to_string(&alarm)?)?;
            if config.mode == MonitorMode::FirstAlarm {
                break;
            }
        }
    }

    let state = state
        .ok_or_else(|| DakError::InvalidInput("stream contained no observations".into()))?;
    let bands = match config.mode {
        MonitorMode::Continuous => excursion_bands(state.stat_series(), config.threshold()),
        MonitorMode::FirstAlarm => Vec::new(),
    };
    let report = MonitorReport {
        version: dak_core::VERSION,
        window,
        n_dims: state.n_dims(),
        alpha,
        threshold: config.threshold(),
        sigma_long: config.sigma_long(),
        observations: state.time(),
        nu_hat: state.stopping_time(),
        tau_on: state
            .alarms()
            .first()
            .map(|a| a.tau_hat),
        alarms: state.alarms().len(),
        bands,
        generator: GENERATOR_ID,
    };
    emit(&report, args.output.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct SimulateReport {
    version: String,
    seed: u64,
    offline: Vec<ExperimentReport>,
    online: Vec<OnlineReport>,
}

fn cmd_simulate(args: SimulateArgs) -> Result<ExitCode, DakError> {
    let scenario: Scenario = args.scenario.parse()?;
    let mut offline = Vec::new();
    let mut online = Vec::new();

    for &d in &args.dims {
        let spec = ScenarioSpec {
            scenario: scenario.clone(),
            n_dims: d,
            n_obs: if args.online { args.window } else { args.n_obs },
            tau: if args.online { None } else { args.tau },
        };
        if let Some(dir) = &args.emit_data {
            std::fs::create_dir_all(dir)?;
            let data_spec = ScenarioSpec {
                n_obs: args.n_obs,
                tau: args.tau,
                ..spec.clone()
            };
            let sample = generate(&data_spec, replication_seed(args.seed, 0))?;
            let name = format!(
                "{}_d{}.{}",
                scenario.name(),
                d,
                if args.binary { "dak1" } else { "csv" }
            );
            let file = std::fs::File::create(dir.join(name))?;
            let mut file = std::io::BufWriter::new(file);
            if args.binary {
                write_matrix_binary(&mut file, &sample)?;
            } else {
                write_matrix_csv(&mut file, &sample)?;
            }
        }
        if args.online {
            let hac = HacConfig { explicit_bandwidth: args.bandwidth };
            online.push(run_online(
                &spec,
                args.window,
                args.alpha,
                args.nu,
                args.horizon,
                args.reps,
                args.seed,
                &hac,
            )?);
        } else {
            offline.push(run_localization(&spec, args.reps, args.seed)?);
        }
    }

    match args.format {
        Format::Json => {
            let report = SimulateReport {
                version: dak_core::VERSION.to_string(),
                seed: args.seed,
                offline,
                online,
            };
            emit(&report, args.output.as_deref())?;
        }
        Format::Csv => {
            let mut text = String::new();
            if !offline.is_empty() {
                text.push_str("scenario,d,n_obs,tau,reps,seed,hit0,hit1,hit2,hit3plus,mean_abs_error\n");
                for r in &offline {
                    let p = r.proportions();
                    text.push_str(&format!(
                        "{},{},{},{},{},{},{},{},{},{},{}\n",
                        r.scenario, r.n_dims, r.n_obs, r.tau, r.replications, r.seed,
                        p[0], p[1], p[2], p[3], r.mean_abs_error
                    ));
                }
            }
            if !online.is_empty() {
                text.push_str(
                    "scenario,d,window,alpha,nu,horizon,reps,seed,threshold,arl,arl_se,q_hat,fa,cedd,nd\n",
                );
                for r in &online {
                    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
                    text.push_str(&format!(
                        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                        r.scenario,
                        r.n_dims,
                        r.n_obs_window,
                        r.alpha,
                        r.nu.map_or(String::new(), |x| x.to_string()),
                        r.horizon,
                        r.replications,
                        r.seed,
                        r.threshold,
                        opt(r.arl),
                        opt(r.arl_se),
                        opt(r.q_hat),
                        opt(r.false_alarm_rate),
                        opt(r.cedd),
                        opt(r.non_detection_rate),
                    ));
                }
            }
            match args.output.as_deref() {
                Some(path) => std::fs::write(path, text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
