//! Monte Carlo experiments: SNR sweeps with and without the confidence
//! filter, delay-bias sweeps, recording ingestion and result files.
//!
//! Trial `i` draws its delay and all three sources from a generator seeded
//! by `(master_seed, i)`, so every SNR level, and the mixed and unmixed
//! variants of a configuration, see the same realizations.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::bootstrap::{bootstrap_many, derive_seed, TrialAnalysis};
use crate::error::{invalid, Error, Result};
use crate::estimators::Method;
use crate::siggen::{assemble_trial, gen_autocorr_noise, gen_white, MixParams, SourceSeries, TrialPair, WhiteKind};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_THETA: f64 = 0.7;
/// Stream offset separating bootstrap draws from source draws.
const BOOT_STREAM: u64 = 0xB007_5EED;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
    Exponential,
    Autocorr,
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "exponential" => Ok(Self::Exponential),
            "autocorr" => Ok(Self::Autocorr),
            other => invalid(format!("unknown noise kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub noise_kind: NoiseKind,
    /// Mixed noise uses `theta1 = theta2 = theta`; unmixed uses zero.
    pub mixed: bool,
    pub theta: f64,
    pub snr_grid: Vec<f64>,
    pub n_trial: usize,
    /// Inclusive bounds of the nonzero delays drawn, in samples.
    pub tau_range: [i64; 2],
    pub seg_len: usize,
    pub n_segments: usize,
    pub fs: f64,
    pub n_boot: usize,
    pub ci_width: f64,
    pub methods: Vec<Method>,
    pub master_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            noise_kind: NoiseKind::Exponential,
            mixed: true,
            theta: DEFAULT_THETA,
            snr_grid: (0..=6).map(|i| f64::from(i) / 10.0).collect(),
            n_trial: 100,
            tau_range: [-99, 99],
            seg_len: 200,
            n_segments: 65,
            fs: 100.0,
            n_boot: 200,
            ci_width: 0.95,
            methods: Method::DEFAULT_SET.to_vec(),
            master_seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Full grid: 500 trials, 500 resamples, SNR 0 to 1 in steps of 0.1.
    pub fn paper_scale() -> Self {
        Self {
            snr_grid: (0..=10).map(|i| f64::from(i) / 10.0).collect(),
            n_trial: 500,
            n_boot: 500,
            ..Self::default()
        }
    }

    pub fn n_samples(&self) -> usize {
        self.seg_len * self.n_segments
    }

    fn theta_value(&self) -> f64 {
        if self.mixed {
            self.theta
        } else {
            0.0
        }
    }

    /// Candidate delays: every nonzero integer inside `tau_range`.
    pub fn tau_candidates(&self) -> Vec<i64> {
        (self.tau_range[0]..=self.tau_range[1]).filter(|t| *t != 0).collect()
    }

    fn validate_common(&self) -> Result<()> {
        if let Some(a) = self.snr_grid.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return invalid(format!("snr_grid: alpha {a} outside [0, 1]"));
        }
        if !self.theta.is_finite() {
            return invalid("theta: must be finite");
        }
        if self.seg_len < 4 {
            return invalid(format!("seg_len: {} too short", self.seg_len));
        }
        if self.n_segments < 2 {
            return invalid(format!("n_segments: {} below 2", self.n_segments));
        }
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return invalid(format!("fs: {} must be positive", self.fs));
        }
        if self.noise_kind == NoiseKind::Autocorr && self.fs < 100.0 {
            return invalid(format!("fs: {} below 100 Hz required by autocorr noise", self.fs));
        }
        if self.methods.is_empty() {
            return invalid("methods: empty list");
        }
        if self.tau_candidates().is_empty() {
            return invalid(format!(
                "tau_range: [{}, {}] holds no nonzero delay",
                self.tau_range[0], self.tau_range[1]
            ));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_common()?;
        let half = (self.seg_len / 2) as i64;
        if self.tau_range[0] < -half || self.tau_range[1] >= half {
            return invalid(format!(
                "tau_range: [{}, {}] must lie within [-{half}, {half})",
                self.tau_range[0], self.tau_range[1]
            ));
        }
        if self.n_boot == 0 {
            return invalid("n_boot: must be positive");
        }
        if !(self.ci_width > 0.0 && self.ci_width < 1.0) {
            return invalid(format!("ci_width: {} must lie in (0, 1)", self.ci_width));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        json_sha256(self)
    }
}

fn json_sha256<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serialises");
    Sha256::digest(&json).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Sources of one trial, long enough for delays up to `margin` samples.
#[derive(Debug, Clone)]
pub struct TrialSources {
    pub tau: i64,
    pub signal: SourceSeries,
    pub nx: SourceSeries,
    pub ny: SourceSeries,
}

fn gen_noise(kind: NoiseKind, n: usize, fs: f64, rng: &mut ChaCha8Rng) -> Result<SourceSeries> {
    match kind {
        NoiseKind::Gaussian => gen_white(WhiteKind::Gaussian, n, fs, rng),
        NoiseKind::Exponential => gen_white(WhiteKind::Exponential, n, fs, rng),
        NoiseKind::Autocorr => gen_autocorr_noise(n, fs, rng),
    }
}

/// Draw the sources of one trial. `tau = None` samples a delay uniformly
/// from `candidates`.
pub fn trial_sources(
    noise: NoiseKind,
    n_samples: usize,
    margin: usize,
    fs: f64,
    tau: Option<i64>,
    candidates: &[i64],
    seed: u64,
) -> Result<TrialSources> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = match tau {
        Some(t) => t,
        None => {
            if candidates.is_empty() {
                return invalid("no candidate delays");
            }
            candidates[rng.random_range(0..candidates.len())]
        }
    };
    let len = n_samples + 2 * margin;
    let signal = gen_white(WhiteKind::Exponential, len, fs, &mut rng)?;
    let nx = gen_noise(noise, len, fs, &mut rng)?;
    let ny = gen_noise(noise, len, fs, &mut rng)?;
    Ok(TrialSources { tau, signal, nx, ny })
}

impl TrialSources {
    pub fn assemble(&self, alpha: f64, theta: f64, n_samples: usize) -> Result<TrialPair> {
        let p = MixParams::homopolar(alpha, theta, self.tau)?;
        assemble_trial(&self.signal, &self.nx, &self.ny, &p, n_samples)
    }
}

/// Outcome of one method on one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    /// Point estimate from all segments; `None` when undefined.
    pub raw: Option<i64>,
    /// Bootstrap mean; `None` when the verdict is undefined or skipped.
    pub boot_mean: Option<f64>,
    pub accepted: bool,
}

impl MethodOutcome {
    /// Estimate entering the unfiltered error: bootstrap mean, else the
    /// point estimate, else zero delay.
    pub fn error_estimate(&self) -> f64 {
        self.boot_mean
            .or(self.raw.map(|r| r as f64))
            .unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub alpha: f64,
    pub tau_true: i64,
    pub methods: Vec<MethodOutcome>,
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return invalid("threads: must be positive");
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Internal(format!("thread pool: {e}")))
}

fn analyse_trial(
    cfg: &ExperimentConfig,
    pair: &TrialPair,
    trial_seed: u64,
    bootstrap: bool,
) -> Result<Vec<MethodOutcome>> {
    let analysis = TrialAnalysis::new(pair, cfg.seg_len, &cfg.methods)?;
    let verdicts = if bootstrap {
        Some(bootstrap_many(
            &analysis,
            &cfg.methods,
            cfg.n_boot,
            cfg.ci_width,
            derive_seed(trial_seed, BOOT_STREAM),
        )?)
    } else {
        None
    };
    let mut verdicts = verdicts.map(Vec::into_iter);
    let mut out = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let raw = match analysis.estimate(method, None) {
            Ok(e) => Some(e.lag_samples),
            Err(Error::UndefinedEstimate(_)) => None,
            Err(e) => return Err(e),
        };
        let (boot_mean, accepted) = match verdicts.as_mut().and_then(Iterator::next) {
            Some(Ok(v)) => (Some(v.mean), v.accepted),
            Some(Err(Error::UndefinedVerdict { .. })) | None => (None, false),
            Some(Err(e)) => return Err(e),
        };
        out.push(MethodOutcome {
            method,
            raw,
            boot_mean,
            accepted,
        });
    }
    Ok(out)
}

/// Every trial at one SNR level, in trial order.
pub fn simulate_cell(
    cfg: &ExperimentConfig,
    alpha: f64,
    bootstrap: bool,
    threads: Option<usize>,
) -> Result<Vec<TrialOutcome>> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&alpha) {
        return invalid(format!("alpha {alpha} outside [0, 1]"));
    }
    let n = cfg.n_samples();
    let candidates = cfg.tau_candidates();
    let margin = candidates.iter().map(|t| t.unsigned_abs()).max().unwrap_or(0) as usize;
    let run = |trial: usize| -> Result<TrialOutcome> {
        let seed = derive_seed(cfg.master_seed, trial as u64);
        let sources = trial_sources(cfg.noise_kind, n, margin, cfg.fs, None, &candidates, seed)?;
        let pair = sources.assemble(alpha, cfg.theta_value(), n)?;
        Ok(TrialOutcome {
            trial,
            alpha,
            tau_true: sources.tau,
            methods: analyse_trial(cfg, &pair, seed, bootstrap)?,
        })
    };
    pool(threads)?.install(|| {
        (0..cfg.n_trial)
            .into_par_iter()
            .map(|t| {
                run(t).map_err(|e| Error::Trial {
                    trial: t,
                    source: Box::new(e),
                })
            })
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub master_seed: u64,
}

/// One curve point keyed by `(method, alpha, mixed)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub alpha: f64,
    pub mixed: bool,
    pub mae_ms: f64,
    /// `None` when no trial was accepted.
    pub mae_ms_filtered: Option<f64>,
    pub rejection_rate: f64,
    pub n_accepted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub provenance: Provenance,
    pub rows: Vec<ResultRow>,
}

/// Aggregate one SNR level into per-method rows.
pub fn summarize_cell(cfg: &ExperimentConfig, alpha: f64, trials: &[TrialOutcome]) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::with_capacity(cfg.methods.len());
    for (k, &method) in cfg.methods.iter().enumerate() {
        if trials.is_empty() {
            continue;
        }
        let truths: Vec<f64> = trials.iter().map(|t| t.tau_true as f64).collect();
        let est: Vec<f64> = trials.iter().map(|t| t.methods[k].error_estimate()).collect();
        let (acc_truth, acc_est): (Vec<f64>, Vec<f64>) = trials
            .iter()
            .filter(|t| t.methods[k].accepted)
            .map(|t| (t.tau_true as f64, t.methods[k].error_estimate()))
            .unzip();
        let n_accepted = acc_truth.len();
        rows.push(ResultRow {
            method,
            alpha,
            mixed: cfg.mixed,
            mae_ms: mae(&truths, &est, cfg.fs)?,
            mae_ms_filtered: if n_accepted > 0 {
                Some(mae(&acc_truth, &acc_est, cfg.fs)?)
            } else {
                None
            },
            rejection_rate: 1.0 - n_accepted as f64 / trials.len() as f64,
            n_accepted,
        });
    }
    Ok(rows)
}

/// Full SNR sweep with bootstrap filtering. Rows are ordered by SNR level,
/// then by the configured method order.
pub fn run_experiment(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentResult> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &alpha in &cfg.snr_grid {
        let trials = simulate_cell(cfg, alpha, true, threads)?;
        rows.extend(summarize_cell(cfg, alpha, &trials)?);
    }
    Ok(ExperimentResult {
        provenance: Provenance {
            config_hash: cfg.hash(),
            master_seed: cfg.master_seed,
        },
        rows,
    })
}

/// Mean absolute error in milliseconds between true delays and estimates
/// (both in samples).
pub fn mae(truths: &[f64], estimates: &[f64], fs: f64) -> Result<f64> {
    if truths.len() != estimates.len() {
        return invalid(format!(
            "{} truths against {} estimates",
            truths.len(),
            estimates.len()
        ));
    }
    if truths.is_empty() {
        return invalid("mean absolute error of no trials");
    }
    let total: f64 = truths.iter().zip(estimates).map(|(t, e)| (t - e).abs()).sum();
    Ok(total / truths.len() as f64 * 1000.0 / fs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pearson {
    /// `None` when either variable has zero variance.
    pub r: Option<f64>,
    pub p_value: Option<f64>,
    pub dof: usize,
}

/// Sample correlation with a two-sided Student-t p-value on `n - 2` degrees
/// of freedom.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Pearson> {
    if x.len() != y.len() {
        return invalid(format!("pearson: lengths {} and {} differ", x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return invalid(format!("pearson: {n} points, at least 3 required"));
    }
    let dof = n - 2;
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(Pearson {
            r: None,
            p_value: None,
            dof,
        });
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        let t = r * (dof as f64 / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, dof as f64).map_err(|e| Error::Internal(e.to_string()))?;
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(Pearson {
        r: Some(r),
        p_value: Some(p),
        dof,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasConfig {
    pub experiment: ExperimentConfig,
    pub alpha: f64,
    /// Inclusive range of true delays swept, zero included.
    pub tau_sweep: [i64; 2],
    pub trials_per_tau: usize,
    /// Correlation uses rows with `|tau_true| <= pcc_limit`.
    pub pcc_limit: i64,
}

impl Default for BiasConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentConfig::default(),
            alpha: 0.2,
            tau_sweep: [-200, 200],
            trials_per_tau: 10,
            pcc_limit: 100,
        }
    }
}

impl BiasConfig {
    pub fn validate(&self) -> Result<()> {
        self.experiment.validate_common()?;
        if !(0.0..=1.0).contains(&self.alpha) {
            return invalid(format!("alpha: {} outside [0, 1]", self.alpha));
        }
        if self.tau_sweep[0] > self.tau_sweep[1] {
            return invalid(format!(
                "tau_sweep: [{}, {}] is empty",
                self.tau_sweep[0], self.tau_sweep[1]
            ));
        }
        if self.tau_sweep == [0, 0] {
            return invalid("tau_sweep: [0, 0] holds no nonzero delay");
        }
        if self.trials_per_tau == 0 {
            return invalid("trials_per_tau: must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub tau_true: i64,
    /// `None` when the estimator was undefined.
    pub tau_est: Option<i64>,
    pub method: Method,
    pub alpha: f64,
    pub mixed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSummary {
    pub method: Method,
    pub alpha: f64,
    pub mixed: bool,
    pub pcc: Option<f64>,
    pub p_value: Option<f64>,
    pub dof: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasResult {
    pub provenance: Provenance,
    pub rows: Vec<BiasRow>,
    pub summaries: Vec<BiasSummary>,
}

impl BiasResult {
    pub fn summary(&self, method: Method) -> Option<&BiasSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }
}

/// Point estimates over a grid of true delays, with a Pearson correlation
/// per method over the central part of the grid.
pub fn run_bias_sweep(cfg: &BiasConfig, threads: Option<usize>) -> Result<BiasResult> {
    cfg.validate()?;
    let e = &cfg.experiment;
    let n = e.n_samples();
    let taus: Vec<i64> = (cfg.tau_sweep[0]..=cfg.tau_sweep[1]).collect();
    let margin = taus.iter().map(|t| t.unsigned_abs()).max().unwrap_or(0) as usize;
    let jobs: Vec<(usize, i64)> = taus
        .iter()
        .flat_map(|&t| (0..cfg.trials_per_tau).map(move |r| (r, t)))
        .collect();
    let run = |idx: usize, tau: i64| -> Result<Vec<BiasRow>> {
        let seed = derive_seed(e.master_seed, idx as u64);
        let sources = trial_sources(e.noise_kind, n, margin, e.fs, Some(tau), &[], seed)?;
        let pair = sources.assemble(cfg.alpha, e.theta_value(), n)?;
        let analysis = TrialAnalysis::new(&pair, e.seg_len, &e.methods)?;
        e.methods
            .iter()
            .map(|&method| {
                let tau_est = match analysis.estimate(method, None) {
                    Ok(d) => Some(d.lag_samples),
                    Err(Error::UndefinedEstimate(_)) => None,
                    Err(err) => return Err(err),
                };
                Ok(BiasRow {
                    tau_true: tau,
                    tau_est,
                    method,
                    alpha: cfg.alpha,
                    mixed: e.mixed,
                })
            })
            .collect()
    };
    let per_job: Vec<Vec<BiasRow>> = pool(threads)?.install(|| {
        jobs.par_iter()
            .enumerate()
            .map(|(idx, &(_, tau))| {
                run(idx, tau).map_err(|err| Error::Trial {
                    trial: idx,
                    source: Box::new(err),
                })
            })
            .collect::<Result<_>>()
    })?;
    let rows: Vec<BiasRow> = per_job.into_iter().flatten().collect();

    let mut summaries = Vec::with_capacity(e.methods.len());
    for &method in &e.methods {
        let (x, y): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter(|r| r.method == method && r.tau_true.abs() <= cfg.pcc_limit)
            .filter_map(|r| r.tau_est.map(|est| (r.tau_true as f64, est as f64)))
            .unzip();
        let p = if x.len() >= 3 {
            pearson(&x, &y)?
        } else {
            Pearson {
                r: None,
                p_value: None,
                dof: x.len().saturating_sub(2),
            }
        };
        summaries.push(BiasSummary {
            method,
            alpha: cfg.alpha,
            mixed: e.mixed,
            pcc: p.r,
            p_value: p.p_value,
            dof: p.dof,
        });
    }
    Ok(BiasResult {
        provenance: Provenance {
            config_hash: json_sha256(cfg),
            master_seed: e.master_seed,
        },
        rows,
        summaries,
    })
}

/// Read a two-column numeric CSV (optional header line, LF or CRLF).
pub fn load_pair_csv(path: &Path, fs: f64, seg_len: usize) -> Result<TrialPair> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        message,
    };
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(i as u64 + 1, |p| p.line());
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != 2 {
            return Err(parse_err(line, format!("expected 2 columns, found {}", rec.len())));
        }
        let a = rec[0].parse::<f64>();
        let b = rec[1].parse::<f64>();
        match (a, b) {
            (Ok(a), Ok(b)) => {
                if !a.is_finite() || !b.is_finite() {
                    return Err(parse_err(line, "non-finite value".into()));
                }
                x.push(a);
                y.push(b);
            }
            _ if i == 0 => continue,
            _ => {
                return Err(parse_err(
                    line,
                    format!("cannot parse {:?},{:?} as numbers", &rec[0], &rec[1]),
                ))
            }
        }
    }
    if x.len() < 2 * seg_len {
        return invalid(format!(
            "{}: {} rows, at least {} (two segments of {seg_len}) required",
            path.display(),
            x.len(),
            2 * seg_len
        ));
    }
    TrialPair::new(x, y, fs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// `.json` means JSON, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Self::Json,
            _ => Self::Csv,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => invalid(format!("unknown format {other:?}")),
        }
    }
}

pub const RESULT_HEADER: &str = "method,alpha,mixed,mae_ms,mae_ms_filtered,rejection_rate,n_accepted";
pub const BIAS_HEADER: &str = "tau_true,tau_est,method,alpha,mixed";

/// JSON envelope shared by experiment and bias outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<C, R> {
    pub schema: u32,
    pub config: C,
    pub provenance: Provenance,
    pub results: Vec<R>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub summaries: Vec<BiasSummary>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

pub fn results_csv(result: &ExperimentResult) -> String {
    let mut s = String::from(RESULT_HEADER);
    s.push('\n');
    for r in &result.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.method,
            r.alpha,
            r.mixed,
            r.mae_ms,
            opt(r.mae_ms_filtered),
            r.rejection_rate,
            r.n_accepted
        );
    }
    s
}

pub fn bias_csv(result: &BiasResult) -> String {
    let mut s = String::from(BIAS_HEADER);
    s.push('\n');
    for r in &result.rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.tau_true, opt(r.tau_est), r.method, r.alpha, r.mixed);
    }
    s
}

fn write_file(path: &Path, body: &[u8]) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(body).map_err(io)?;
    w.flush().map_err(io)
}

/// Write experiment rows as CSV or as the versioned JSON envelope.
pub fn write_results(result: &ExperimentResult, cfg: &ExperimentConfig, format: Format, path: &Path) -> Result<()> {
    let body = match format {
        Format::Csv => results_csv(result).into_bytes(),
        Format::Json => {
            let env = Envelope {
                schema: SCHEMA_VERSION,
                config: cfg.clone(),
                provenance: result.provenance.clone(),
                results: result.rows.clone(),
                summaries: Vec::new(),
            };
            let mut v = serde_json::to_vec_pretty(&env)?;
            v.push(b'\n');
            v
        }
    };
    write_file(path, &body)
}

pub fn write_bias(result: &BiasResult, cfg: &BiasConfig, format: Format, path: &Path) -> Result<()> {
    let body = match format {
        Format::Csv => bias_csv(result).into_bytes(),
        Format::Json => {
            let env = Envelope {
                schema: SCHEMA_VERSION,
                config: cfg.clone(),
                provenance: result.provenance.clone(),
                results: result.rows.clone(),
                summaries: result.summaries.clone(),
            };
            let mut v = serde_json::to_vec_pretty(&env)?;
            v.push(b'\n');
            v
        }
    };
    write_file(path, &body)
}

/// Parse an experiment JSON file written by [`write_results`].
pub fn read_results_json(path: &Path) -> Result<(ExperimentConfig, ExperimentResult)> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let env: Envelope<ExperimentConfig, ResultRow> = serde_json::from_str(&text)?;
    if env.schema != SCHEMA_VERSION {
        return invalid(format!("unsupported schema version {}", env.schema));
    }
    Ok((
        env.config,
        ExperimentResult {
            provenance: env.provenance,
            rows: env.results,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[10.0, -10.0], &[10.0, -10.0], 100.0).unwrap(), 0.0);
        assert_eq!(mae(&[0.0], &[50.0], 100.0).unwrap(), 500.0);
        assert!(mae(&[1.0], &[1.0, 2.0], 100.0).is_err());
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let p = pearson(&x, &x).unwrap();
        assert_eq!((p.r, p.p_value, p.dof), (Some(1.0), Some(0.0), 3));
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(pearson(&x, &neg).unwrap().r, Some(-1.0));
        let p = pearson(&x, &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap();
        assert!((p.r.unwrap() - 0.8).abs() < 1e-12);
        assert!((p.p_value.unwrap() - 0.104).abs() < 1e-3);
        assert_eq!(pearson(&x, &[1.0; 5]).unwrap().r, None);
        assert!(pearson(&x[..2], &x[..2]).is_err());
    }

    #[test]
    fn config_validation_names_fields() {
        let mut c = ExperimentConfig {
            snr_grid: vec![0.2, 1.5],
            ..Default::default()
        };
        assert!(c.validate().unwrap_err().to_string().contains("snr_grid"));
        c.snr_grid = vec![0.2];
        c.tau_range = [0, 0];
        assert!(c.validate().unwrap_err().to_string().contains("tau_range"));
        c.tau_range = [-100, 100];
        assert!(c.validate().unwrap_err().to_string().contains("tau_range"));
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            master_seed: 1,
            ..Default::default()
        };
        assert_eq!(a.hash(), ExperimentConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn empty_experiment_has_no_rows() {
        let cfg = ExperimentConfig {
            n_trial: 0,
            ..Default::default()
        };
        let r = run_experiment(&cfg, Some(1)).unwrap();
        assert!(r.rows.is_empty());
        assert_eq!(results_csv(&r), format!("{RESULT_HEADER}\n"));
    }
}
