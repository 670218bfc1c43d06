use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use lagscope::bootstrap::{bootstrap_many, TrialAnalysis};
use lagscope::estimators::Method;
use lagscope::harness::{
    self, load_pair_csv, run_bias_sweep, run_experiment, BiasConfig, ExperimentConfig, Format, NoiseKind,
};
use lagscope::{Error, Result};

#[derive(Parser)]
#[command(name = "lagscope", version, about = "Time-delay estimation between two noisy, mixed time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo SNR sweep with confidence filtering.
    Simulate(SimulateArgs),
    /// Estimate the delay of a recorded two-column CSV pair.
    Estimate(EstimateArgs),
    /// Sweep true delays and correlate them with the estimates.
    Bias(BiasArgs),
    /// Quick internal consistency checks.
    Selftest,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON file with experiment settings; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Noise source: gaussian, exponential or autocorr.
    #[arg(long)]
    noise: Option<NoiseKind>,
    /// Mix the noise across channels (theta = 0.7).
    #[arg(long, conflicts_with = "unmixed")]
    mixed: bool,
    /// Keep the channel noises independent (theta = 0).
    #[arg(long)]
    unmixed: bool,
    /// Mixing coefficient used when mixed.
    #[arg(long)]
    theta: Option<f64>,
    /// Segment length in samples.
    #[arg(long)]
    seg_len: Option<usize>,
    /// Segments per trial.
    #[arg(long)]
    n_segments: Option<usize>,
    /// Sampling rate in Hz.
    #[arg(long)]
    fs: Option<f64>,
    /// Comma-separated methods, e.g. crosscorr,phase_slope,asb_m1.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// Master seed (required).
    #[arg(long)]
    seed: u64,
    /// Worker threads; results do not depend on it.
    #[arg(long, env = "LAGSCOPE_THREADS")]
    threads: Option<usize>,
    /// Output file.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Output format: csv or json (default: from the file extension).
    #[arg(long)]
    format: Option<Format>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Start from the 500-trial, 500-resample, full SNR grid preset.
    #[arg(long)]
    paper_scale: bool,
    /// Comma-separated SNR levels alpha.
    #[arg(long, value_delimiter = ',')]
    snr_grid: Option<Vec<f64>>,
    /// Trials per SNR level.
    #[arg(long)]
    n_trial: Option<usize>,
    /// Inclusive bounds of the sampled nonzero delays, in samples.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    tau_range: Option<Vec<i64>>,
    /// Bootstrap resamples per trial.
    #[arg(long)]
    n_boot: Option<usize>,
    /// Confidence interval width in (0, 1).
    #[arg(long)]
    ci_width: Option<f64>,
}

#[derive(Args)]
struct BiasArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Signal-to-noise mixing weight alpha.
    #[arg(long, default_value_t = 0.2)]
    alpha: f64,
    /// Inclusive range of true delays swept, in samples.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    tau_range: Option<Vec<i64>>,
    /// Independent datasets per true delay.
    #[arg(long, default_value_t = 10)]
    trials_per_tau: usize,
    /// Correlation uses true delays with absolute value up to this bound.
    #[arg(long, default_value_t = 100)]
    pcc_limit: i64,
}

#[derive(Args)]
struct EstimateArgs {
    /// Two-column CSV (x, y), optional header.
    input: PathBuf,
    /// Sampling rate in Hz.
    #[arg(long, default_value_t = 100.0)]
    fs: f64,
    /// Segment length in samples.
    #[arg(long, default_value_t = 200)]
    seg_len: usize,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// Bootstrap resamples.
    #[arg(long, default_value_t = 500)]
    n_boot: usize,
    /// Confidence interval width in (0, 1).
    #[arg(long, default_value_t = 0.95)]
    width: f64,
    /// Bootstrap seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn load_config(path: Option<&Path>, base: ExperimentConfig) -> Result<ExperimentConfig> {
    let Some(path) = path else {
        return Ok(base);
    };
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| {
        Error::InvalidArgument(format!("{}: {e}", path.display()))
    })
}

fn apply_common(cfg: &mut ExperimentConfig, a: &CommonArgs) {
    if let Some(n) = a.noise {
        cfg.noise_kind = n;
    }
    if a.mixed {
        cfg.mixed = true;
    }
    if a.unmixed {
        cfg.mixed = false;
    }
    if let Some(t) = a.theta {
        cfg.theta = t;
    }
    if let Some(v) = a.seg_len {
        cfg.seg_len = v;
    }
    if let Some(v) = a.n_segments {
        cfg.n_segments = v;
    }
    if let Some(v) = a.fs {
        cfg.fs = v;
    }
    if let Some(v) = &a.methods {
        cfg.methods = v.clone();
    }
    cfg.master_seed = a.seed;
}

fn output_format(a: &CommonArgs) -> Format {
    a.format
        .or_else(|| a.output.as_deref().map(Format::from_path))
        .unwrap_or(Format::Csv)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let base = if a.paper_scale {
        ExperimentConfig::paper_scale()
    } else {
        ExperimentConfig::default()
    };
    let mut cfg = load_config(a.common.config.as_deref(), base)?;
    apply_common(&mut cfg, &a.common);
    if let Some(v) = &a.snr_grid {
        cfg.snr_grid = v.clone();
    }
    if let Some(v) = a.n_trial {
        cfg.n_trial = v;
    }
    if let Some(v) = &a.tau_range {
        cfg.tau_range = [v[0], v[1]];
    }
    if let Some(v) = a.n_boot {
        cfg.n_boot = v;
    }
    if let Some(v) = a.ci_width {
        cfg.ci_width = v;
    }
    cfg.validate()?;
    let result = run_experiment(&cfg, a.common.threads)?;
    if let Some(path) = &a.common.output {
        harness::write_results(&result, &cfg, output_format(&a.common), path)?;
    }
    print!("{}", harness::results_csv(&result));
    Ok(())
}

fn cmd_bias(a: &BiasArgs) -> Result<()> {
    let mut experiment = load_config(a.common.config.as_deref(), ExperimentConfig::default())?;
    apply_common(&mut experiment, &a.common);
    let mut cfg = BiasConfig {
        experiment,
        alpha: a.alpha,
        trials_per_tau: a.trials_per_tau,
        pcc_limit: a.pcc_limit,
        ..BiasConfig::default()
    };
    if let Some(v) = &a.tau_range {
        cfg.tau_sweep = [v[0], v[1]];
    }
    let result = run_bias_sweep(&cfg, a.common.threads)?;
    if let Some(path) = &a.common.output {
        harness::write_bias(&result, &cfg, output_format(&a.common), path)?;
    }
    let mut out = String::from("method,alpha,mixed,pcc,p_value,dof\n");
    for s in &result.summaries {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            s.method,
            s.alpha,
            s.mixed,
            opt(s.pcc),
            opt(s.p_value),
            s.dof
        );
    }
    print!("{out}");
    Ok(())
}

#[derive(Serialize)]
struct MethodReport {
    method: Method,
    lag_samples: Option<i64>,
    lag_ms: Option<f64>,
    median_ms: Option<f64>,
    iqr_ms: Option<f64>,
    ci_low_ms: Option<f64>,
    ci_high_ms: Option<f64>,
    accepted: bool,
    undefined_resamples: usize,
    note: Option<String>,
}

fn cmd_estimate(a: &EstimateArgs) -> Result<()> {
    let pair = load_pair_csv(&a.input, a.fs, a.seg_len)?;
    let methods = a.methods.clone().unwrap_or_else(|| Method::DEFAULT_SET.to_vec());
    let analysis = TrialAnalysis::new(&pair, a.seg_len, &methods)?;
    let verdicts = bootstrap_many(&analysis, &methods, a.n_boot, a.width, a.seed)?;
    let ms = 1000.0 / a.fs;
    let mut reports = Vec::with_capacity(methods.len());
    for (&method, verdict) in methods.iter().zip(verdicts) {
        let raw = match analysis.estimate(method, None) {
            Ok(e) => Some(e.lag_samples),
            Err(Error::UndefinedEstimate(_)) => None,
            Err(e) => return Err(e),
        };
        let mut r = MethodReport {
            method,
            lag_samples: raw,
            lag_ms: raw.map(|l| l as f64 * ms),
            median_ms: None,
            iqr_ms: None,
            ci_low_ms: None,
            ci_high_ms: None,
            accepted: false,
            undefined_resamples: 0,
            note: None,
        };
        match verdict {
            Ok(v) => {
                r.median_ms = Some(v.median * ms);
                r.iqr_ms = Some(v.iqr * ms);
                r.ci_low_ms = Some(v.ci_low * ms);
                r.ci_high_ms = Some(v.ci_high * ms);
                r.accepted = v.accepted;
                r.undefined_resamples = v.undefined;
            }
            Err(e @ Error::UndefinedVerdict { undefined, .. }) => {
                r.undefined_resamples = undefined;
                r.note = Some(e.to_string());
            }
            Err(e) => return Err(e),
        }
        reports.push(r);
    }
    println!("{}", serde_json::to_string_pretty(&reports)?);
    Ok(())
}

/// Returns whether every check passed.
fn cmd_selftest() -> Result<bool> {
    use lagscope::bootstrap::percentile;
    use lagscope::harness::trial_sources;

    let mut ok = true;
    let mut report = |name: &str, pass: bool| {
        println!("{} {name}", if pass { "PASS" } else { "FAIL" });
        ok &= pass;
    };
    let methods = Method::DEFAULT_SET;
    let mut exact = true;
    for tau in [-50, -1, 12, 99] {
        let s = trial_sources(NoiseKind::Exponential, 13000, 100, 100.0, Some(tau), &[], 7)?;
        let pair = s.assemble(1.0, 0.0, 13000)?;
        let a = TrialAnalysis::new(&pair, 200, &methods)?;
        for m in methods {
            exact &= a.estimate(m, None)?.lag_samples == tau;
        }
    }
    report("noiseless_exactness", exact);
    let v: Vec<f64> = (0..100).map(f64::from).collect();
    report("percentile", (percentile(&v, 0.025)? - 2.475).abs() < 1e-12);
    let r = harness::pearson(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0])?;
    report("pearson", r.r.is_some_and(|r| (r - 0.8).abs() < 1e-12));
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a).map(|()| true),
        Command::Estimate(a) => cmd_estimate(a).map(|()| true),
        Command::Bias(a) => cmd_bias(a).map(|()| true),
        Command::Selftest => cmd_selftest(),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
