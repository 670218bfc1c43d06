//! Delay estimators: cross-correlation, phase slope, phase periodicity and
//! the bispectral hologram family (conventional and antisymmetrized).
//!
//! Every argmax over lags uses the same deterministic tie-break: the
//! smallest `|lag|` wins, and between `+l` and `-l` the negative lag wins.

pub(crate) mod bispectral;

use std::f64::consts::PI;
use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use bispectral::{hologram, hologram_from_column_sums, panel, tde_bispec, Hologram, Panel, PanelInputs};

use crate::error::{invalid, Error, Result};
use crate::siggen::TrialPair;
use crate::spectral::{segment, wrap_phase, PhaseSpectrum};

/// Minimum number of defined phase bins for the cross-spectral estimators.
pub const MIN_DEFINED_BINS: usize = 8;

/// One of the four hologram contrast panels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PanelMethod {
    M1,
    M2,
    M3,
    M4,
}

impl PanelMethod {
    pub const ALL: [PanelMethod; 4] = [PanelMethod::M1, PanelMethod::M2, PanelMethod::M3, PanelMethod::M4];

    /// M2 and M4 contrast against the Y auto-bispectrum as well.
    pub fn needs_yyy(self) -> bool {
        matches!(self, PanelMethod::M2 | PanelMethod::M4)
    }

    fn index(self) -> u8 {
        match self {
            PanelMethod::M1 => 1,
            PanelMethod::M2 => 2,
            PanelMethod::M3 => 3,
            PanelMethod::M4 => 4,
        }
    }
}

/// A delay-estimation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    CrossCorr,
    PhaseSlope,
    PhasePeriodicity,
    Bispec(PanelMethod),
    Asb(PanelMethod),
}

impl Method {
    /// The five protocols compared in the simulation experiments.
    pub const DEFAULT_SET: [Method; 5] = [
        Method::CrossCorr,
        Method::PhaseSlope,
        Method::PhasePeriodicity,
        Method::Bispec(PanelMethod::M1),
        Method::Asb(PanelMethod::M1),
    ];

    pub fn is_bispectral(self) -> bool {
        matches!(self, Method::Bispec(_) | Method::Asb(_))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::CrossCorr => f.write_str("crosscorr"),
            Method::PhaseSlope => f.write_str("phase_slope"),
            Method::PhasePeriodicity => f.write_str("phase_periodicity"),
            Method::Bispec(p) => write!(f, "bispec_m{}", p.index()),
            Method::Asb(p) => write!(f, "asb_m{}", p.index()),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let panel = |d: &str| match d {
            "1" => Some(PanelMethod::M1),
            "2" => Some(PanelMethod::M2),
            "3" => Some(PanelMethod::M3),
            "4" => Some(PanelMethod::M4),
            _ => None,
        };
        let m = match s {
            "crosscorr" => Some(Method::CrossCorr),
            "phase_slope" => Some(Method::PhaseSlope),
            "phase_periodicity" => Some(Method::PhasePeriodicity),
            _ => {
                if let Some(d) = s.strip_prefix("bispec_m") {
                    panel(d).map(Method::Bispec)
                } else if let Some(d) = s.strip_prefix("asb_m") {
                    panel(d).map(Method::Asb)
                } else {
                    None
                }
            }
        };
        m.ok_or_else(|| Error::InvalidArgument(format!("unknown method '{s}'")))
    }
}

impl Serialize for Method {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayEstimate {
    pub lag_samples: i64,
    pub lag_seconds: f64,
    pub method: Method,
    /// Height of the winning peak (cost for the phase-slope fit).
    pub peak_value: f64,
    /// Sign of the phase slope index, for the periodicity estimator only.
    pub psi_sign: Option<i8>,
}

impl DelayEstimate {
    pub(crate) fn new(lag: i64, fs: f64, method: Method, peak_value: f64) -> Self {
        Self {
            lag_samples: lag,
            lag_seconds: lag as f64 / fs,
            method,
            peak_value,
            psi_sign: None,
        }
    }
}

/// Signed lag of circular index `rho` on an axis of length `m`, in
/// `[-m/2, m/2)`.
pub fn circular_to_lag(rho: usize, m: usize) -> i64 {
    if rho < m.div_ceil(2) {
        rho as i64
    } else {
        rho as i64 - m as i64
    }
}

/// Fold any integer lag onto `[-m/2, m/2)`.
pub fn wrap_lag(lag: i64, m: usize) -> i64 {
    circular_to_lag(lag.rem_euclid(m as i64) as usize, m)
}

/// `true` when `(lag, value)` beats `(best_lag, best)` under the
/// max-value / small-|lag| / negative-lag ordering.
fn beats(lag: i64, value: f64, best_lag: i64, best: f64) -> bool {
    if value != best {
        return value > best;
    }
    let (a, b) = (lag.unsigned_abs(), best_lag.unsigned_abs());
    a < b || (a == b && lag < best_lag)
}

/// Deterministic argmax over `(lag, value)` pairs; NaN values never win.
pub fn argmax_lag(items: impl IntoIterator<Item = (i64, f64)>) -> Option<(i64, f64)> {
    let mut best: Option<(i64, f64)> = None;
    for (lag, v) in items {
        if v.is_nan() {
            continue;
        }
        best = match best {
            Some((bl, bv)) if !beats(lag, v, bl, bv) => Some((bl, bv)),
            _ => Some((lag, v)),
        };
    }
    best
}

/// Raw epoch-wise cross-correlogram of one segment pair,
/// `r(rho) = (1/L) sum_t x(t) y(t + rho)` over the overlapping samples.
pub fn segment_correlogram(x: &[f64], y: &[f64], max_lag: usize) -> Vec<f64> {
    let len = x.len();
    let l = max_lag as i64;
    (-l..=l)
        .map(|rho| {
            let lo = 0i64.max(-rho) as usize;
            let hi = (len as i64).min(len as i64 - rho).max(0) as usize;
            let mut acc = 0.0;
            for t in lo..hi {
                acc += x[t] * y[(t as i64 + rho) as usize];
            }
            acc / len as f64
        })
        .collect()
}

fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Peak of `|r(rho)|` for a segment-averaged correlogram laid out over
/// `[-max_lag, max_lag]`.
pub fn correlogram_peak(r: &[f64], max_lag: usize) -> Option<(i64, f64)> {
    argmax_lag(r.iter().enumerate().map(|(i, v)| (i as i64 - max_lag as i64, v.abs())))
}

/// Cross-correlation delay estimate over `[-max_lag, max_lag]`.
pub fn tde_crosscorr(pair: &TrialPair, seg_len: usize, max_lag: usize) -> Result<DelayEstimate> {
    if max_lag >= seg_len {
        return invalid(format!(
            "max lag {max_lag} must be below the segment length {seg_len}"
        ));
    }
    if variance(&pair.x) == 0.0 || variance(&pair.y) == 0.0 {
        return Err(Error::UndefinedEstimate(
            "constant channel has no cross-correlation structure".into(),
        ));
    }
    let xs = segment(&pair.x, seg_len)?;
    let ys = segment(&pair.y, seg_len)?;
    let mut r = vec![0.0; 2 * max_lag + 1];
    for (x, y) in xs.iter().zip(&ys) {
        for (acc, v) in r.iter_mut().zip(segment_correlogram(x, y, max_lag)) {
            *acc += v;
        }
    }
    let n = xs.len() as f64;
    r.iter_mut().for_each(|v| *v /= n);
    let (lag, peak) = correlogram_peak(&r, max_lag)
        .ok_or_else(|| Error::UndefinedEstimate("empty correlogram".into()))?;
    Ok(DelayEstimate::new(lag, pair.fs, Method::CrossCorr, peak))
}

fn require_defined(p: &PhaseSpectrum) -> Result<()> {
    let n = p.n_defined();
    if n == 0 {
        return Err(Error::UndefinedEstimate("every phase bin is undefined".into()));
    }
    if n < MIN_DEFINED_BINS {
        return Err(Error::UndefinedEstimate(format!(
            "only {n} defined phase bins; {MIN_DEFINED_BINS} required"
        )));
    }
    Ok(())
}

/// Wrapped-residual least squares over integer candidate delays
/// `d in [-M/2, M/2)`: minimises `sum_k wrap(P(k) - 2 pi k d / M)^2`.
pub fn tde_phase_slope(p: &PhaseSpectrum, fs: f64) -> Result<DelayEstimate> {
    require_defined(p)?;
    let m = p.len();
    let bins: Vec<(f64, f64)> = p
        .values
        .iter()
        .zip(&p.defined)
        .enumerate()
        .filter(|(_, (_, d))| **d)
        .map(|(k, (v, _))| (k as f64, *v))
        .collect();
    let lo = -(m as i64 / 2);
    let hi = lo + m as i64;
    let (lag, neg_cost) = argmax_lag((lo..hi).map(|d| {
        let slope = 2.0 * PI * d as f64 / m as f64;
        let cost: f64 = bins
            .iter()
            .map(|&(k, v)| wrap_phase(v - slope * k).powi(2))
            .sum();
        (d, -cost)
    }))
    .ok_or_else(|| Error::UndefinedEstimate("no candidate delays".into()))?;
    Ok(DelayEstimate::new(lag, fs, Method::PhaseSlope, -neg_cost))
}

/// `|DFT(P)(t)|` for every `t`, undefined bins entering as zero.
pub fn phase_periodogram(p: &PhaseSpectrum) -> Vec<f64> {
    let mut buf: Vec<Complex64> = p
        .values
        .iter()
        .zip(&p.defined)
        .map(|(v, d)| Complex64::new(if *d { *v } else { 0.0 }, 0.0))
        .collect();
    if !buf.is_empty() {
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    }
    buf.iter().map(|c| c.norm()).collect()
}

/// Phase-periodicity estimate searching `t in [1, M/2]`.
pub fn tde_phase_periodicity(p: &PhaseSpectrum, psi_value: f64, fs: f64) -> Result<DelayEstimate> {
    let m = p.len();
    tde_phase_periodicity_in(p, psi_value, fs, 1..=m / 2)
}

/// Phase-periodicity estimate with an explicit search range over the
/// periodogram index `t`. Ties resolve to the smallest `t`.
pub fn tde_phase_periodicity_in(
    p: &PhaseSpectrum,
    psi_value: f64,
    fs: f64,
    search: RangeInclusive<usize>,
) -> Result<DelayEstimate> {
    require_defined(p)?;
    let m = p.len();
    if search.is_empty() || *search.end() >= m {
        return invalid(format!("periodicity search range {search:?} invalid for {m} bins"));
    }
    let mags = phase_periodogram(p);
    let mut best_t = *search.start();
    let mut best = f64::NEG_INFINITY;
    for t in search {
        if mags[t] > best {
            best = mags[t];
            best_t = t;
        }
    }
    let sign: i8 = if psi_value > 0.0 {
        1
    } else if psi_value < 0.0 {
        -1
    } else {
        0
    };
    let lag = wrap_lag(i64::from(sign) * best_t as i64, m);
    let mut est = DelayEstimate::new(lag, fs, Method::PhasePeriodicity, best);
    est.psi_sign = Some(sign);
    Ok(est)
}

/// Minimum band (in bins) that covers two periods of the phase sawtooth of
/// delay `tau`. Values above `m` mean the delay cannot be resolved within
/// the spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandRequirement {
    pub bins: f64,
    pub resolvable: bool,
}

pub fn min_bandwidth_for_delay(tau: i64, m: usize) -> Result<BandRequirement> {
    if tau == 0 {
        return invalid("a zero delay has no phase periodicity");
    }
    let bins = 2.0 * m as f64 / tau.unsigned_abs() as f64;
    Ok(BandRequirement {
        bins,
        resolvable: bins <= m as f64,
    })
}
