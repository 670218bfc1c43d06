//! Source generation and two-channel trial assembly.
//!
//! Every generator draws from an explicit, caller-owned random number
//! generator, so results are reproducible per seed and the functions are
//! safe to call from many threads with distinct generators.

mod butterworth;

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

pub use butterworth::{Biquad, Butterworth, FilterKind, FilterSpec};

use crate::error::{invalid, Result};

/// Spectral exponent of the aperiodic part of auto-correlated noise.
pub const PINK_EXPONENT: f64 = 0.7;
/// Order used for every Butterworth stage of the alpha-band generator.
pub const DEFAULT_FILTER_ORDER: usize = 4;
/// Seconds of filter output discarded before the alpha component is used.
pub const FILTER_WARMUP_SECONDS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    GaussianWhite,
    ExponentialWhite,
    Pink,
    AlphaBand,
    Composite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WhiteKind {
    Gaussian,
    Exponential,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSeries {
    pub samples: Vec<f64>,
    pub fs: f64,
    pub kind: SourceKind,
}

impl SourceSeries {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean_square(&self) -> f64 {
        mean_square(&self.samples)
    }

    /// Rescale to unit mean square. An all-zero series is left untouched.
    pub fn power_normalized(mut self) -> Self {
        normalize_power(&mut self.samples);
        self
    }
}

fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

fn normalize_power(x: &mut [f64]) {
    let ms = mean_square(x);
    if ms > 0.0 {
        let scale = ms.sqrt().recip();
        x.iter_mut().for_each(|v| *v *= scale);
    }
}

/// Parameters of the instantaneous mixing model.
///
/// `x_obs = a*s(t) + (1-a)*(nX + theta1*nY)` and
/// `y_obs = a*beta*s(t-tau) + (1-a)*(nY + theta2*nX)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixParams {
    pub alpha: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub beta: i8,
    pub tau: i64,
}

impl MixParams {
    pub fn new(alpha: f64, theta1: f64, theta2: f64, beta: i8, tau: i64) -> Result<Self> {
        let p = Self {
            alpha,
            theta1,
            theta2,
            beta,
            tau,
        };
        p.validate()?;
        Ok(p)
    }

    /// Homopolar parameters with symmetric mixing `theta`.
    pub fn homopolar(alpha: f64, theta: f64, tau: i64) -> Result<Self> {
        Self::new(alpha, theta, theta, 1, tau)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return invalid(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if self.beta != 1 && self.beta != -1 {
            return invalid(format!("beta {} must be -1 or +1", self.beta));
        }
        if !(self.theta1.is_finite() && self.theta2.is_finite()) {
            return invalid("mixing coefficients must be finite");
        }
        Ok(())
    }
}

/// Two aligned observation channels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialPair {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub fs: f64,
    /// Generation parameters; absent for recorded data.
    pub truth: Option<MixParams>,
}

impl TrialPair {
    pub fn new(x: Vec<f64>, y: Vec<f64>, fs: f64) -> Result<Self> {
        if x.len() != y.len() {
            return invalid(format!(
                "channel lengths differ: {} vs {}",
                x.len(),
                y.len()
            ));
        }
        if !(fs > 0.0 && fs.is_finite()) {
            return invalid(format!("sampling rate {fs} must be positive"));
        }
        if let Some(i) = x.iter().chain(y.iter()).position(|v| !v.is_finite()) {
            return invalid(format!("non-finite sample at flat index {i}"));
        }
        Ok(Self {
            x,
            y,
            fs,
            truth: None,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// The same recording with the channel roles exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            x: self.y.clone(),
            y: self.x.clone(),
            fs: self.fs,
            truth: None,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            x: self.x.iter().map(|v| v * c).collect(),
            y: self.y.iter().map(|v| v * c).collect(),
            fs: self.fs,
            truth: self.truth,
        }
    }
}

/// White noise, centred on its analytic mean and scaled to unit power.
pub fn gen_white<R: Rng + ?Sized>(
    kind: WhiteKind,
    n: usize,
    fs: f64,
    rng: &mut R,
) -> Result<SourceSeries> {
    if n == 0 {
        return invalid("white noise length must be at least 1");
    }
    let samples: Vec<f64> = match kind {
        WhiteKind::Gaussian => (0..n).map(|_| StandardNormal.sample(rng)).collect(),
        // Exp(1) has mean 1.
        WhiteKind::Exponential => (0..n)
            .map(|_| <Exp1 as Distribution<f64>>::sample(&Exp1, rng) - 1.0)
            .collect(),
    };
    let kind = match kind {
        WhiteKind::Gaussian => SourceKind::GaussianWhite,
        WhiteKind::Exponential => SourceKind::ExponentialWhite,
    };
    Ok(SourceSeries { samples, fs, kind }.power_normalized())
}

/// Conjugate-symmetric spectrum with magnitudes `|k|^(-lambda/2)` and
/// uniform random phases; the DC bin is zero.
pub fn pink_spectrum<R: Rng + ?Sized>(n: usize, lambda: f64, rng: &mut R) -> Vec<Complex64> {
    let mut spec = vec![Complex64::new(0.0, 0.0); n];
    for k in 1..=n / 2 {
        let amp = (k as f64).powf(-lambda / 2.0);
        let phase = rng.random_range(-PI..=PI);
        if 2 * k == n {
            // The Nyquist bin of an even-length real series must be real.
            spec[k] = Complex64::new(amp * phase.cos(), 0.0);
        } else {
            spec[k] = Complex64::from_polar(amp, phase);
            spec[n - k] = spec[k].conj();
        }
    }
    spec
}

/// `1/f^lambda` noise synthesised in the frequency domain.
pub fn gen_pink<R: Rng + ?Sized>(
    n: usize,
    lambda: f64,
    fs: f64,
    rng: &mut R,
) -> Result<SourceSeries> {
    if n < 2 {
        return invalid("pink noise length must be at least 2");
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return invalid(format!("spectral exponent {lambda} must be non-negative"));
    }
    let mut spec = pink_spectrum(n, lambda, rng);
    FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
    let samples = spec.iter().map(|c| c.re / n as f64).collect();
    Ok(SourceSeries {
        samples,
        fs,
        kind: SourceKind::Pink,
    }
    .power_normalized())
}

/// Forward-only Butterworth filtering.
pub fn butterworth(series: &SourceSeries, spec: FilterSpec) -> Result<SourceSeries> {
    let filter = Butterworth::design(spec, series.fs)?;
    Ok(SourceSeries {
        samples: filter.apply(&series.samples),
        fs: series.fs,
        kind: series.kind,
    })
}

/// Gaussian white noise shaped by a 1 Hz high-pass, a 45 Hz low-pass and an
/// 8-13 Hz band-pass, with the filter start-up transient discarded.
pub fn gen_alpha_band<R: Rng + ?Sized>(n: usize, fs: f64, rng: &mut R) -> Result<SourceSeries> {
    if fs < 100.0 {
        return invalid(format!(
            "sampling rate {fs} Hz too low for the 45 Hz low-pass stage"
        ));
    }
    let warmup = (FILTER_WARMUP_SECONDS * fs).ceil() as usize;
    let mut series = gen_white(WhiteKind::Gaussian, n + warmup, fs, rng)?;
    for spec in [
        FilterSpec::highpass(1.0, DEFAULT_FILTER_ORDER),
        FilterSpec::lowpass(45.0, DEFAULT_FILTER_ORDER),
        FilterSpec::bandpass(8.0, 13.0, DEFAULT_FILTER_ORDER),
    ] {
        series = butterworth(&series, spec)?;
    }
    series.samples.drain(..warmup);
    series.kind = SourceKind::AlphaBand;
    Ok(series.power_normalized())
}

/// Auto-correlated noise: unit-power pink plus unit-power alpha-band
/// components, renormalized.
pub fn gen_autocorr_noise<R: Rng + ?Sized>(
    n: usize,
    fs: f64,
    rng: &mut R,
) -> Result<SourceSeries> {
    let pink = gen_pink(n.max(2), PINK_EXPONENT, fs, rng)?;
    let alpha = gen_alpha_band(n, fs, rng)?;
    let samples = pink
        .samples
        .iter()
        .zip(&alpha.samples)
        .map(|(a, b)| a + b)
        .collect();
    Ok(SourceSeries {
        samples,
        fs,
        kind: SourceKind::Composite,
    }
    .power_normalized())
}

/// Cut a length-`len` trial from longer source realizations.
///
/// The observation window starts `(source_len - len) / 2` samples into the
/// sources, and the delayed signal copy is read from the same realization,
/// so no wrap-around occurs as long as that margin covers `|tau|`.
pub fn assemble_trial(
    signal: &SourceSeries,
    nx: &SourceSeries,
    ny: &SourceSeries,
    p: &MixParams,
    len: usize,
) -> Result<TrialPair> {
    p.validate()?;
    let src_len = signal.len();
    if nx.len() != src_len || ny.len() != src_len {
        return invalid("source series must share one length");
    }
    if len == 0 || src_len < len {
        return invalid(format!("sources of length {src_len} cannot hold a trial of {len}"));
    }
    let margin = (src_len - len) / 2;
    if (margin as u64) < p.tau.unsigned_abs() {
        return invalid(format!(
            "source length {src_len} too short for trial length {len} at delay {} (need {})",
            p.tau,
            len as u64 + 2 * p.tau.unsigned_abs()
        ));
    }
    let a = p.alpha;
    let b = 1.0 - a;
    let beta = f64::from(p.beta);
    let x: Vec<f64> = (0..len)
        .map(|t| {
            let i = margin + t;
            a * signal.samples[i] + b * (nx.samples[i] + p.theta1 * ny.samples[i])
        })
        .collect();
    let y: Vec<f64> = (0..len)
        .map(|t| {
            let i = margin + t;
            let d = (i as i64 - p.tau) as usize;
            a * beta * signal.samples[d] + b * (ny.samples[i] + p.theta2 * nx.samples[i])
        })
        .collect();
    let mut pair = TrialPair::new(x, y, signal.fs)?;
    pair.truth = Some(*p);
    Ok(pair)
}

/// Decibel SNR for power-normalized sources.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrDb {
    pub db: f64,
    /// False when `alpha` is 0 or 1 and `db` is an infinite sentinel.
    pub finite: bool,
}

pub fn snr_db(alpha: f64) -> Result<SnrDb> {
    if !(0.0..=1.0).contains(&alpha) {
        return invalid(format!("alpha {alpha} outside [0, 1]"));
    }
    if alpha == 0.0 {
        return Ok(SnrDb {
            db: f64::NEG_INFINITY,
            finite: false,
        });
    }
    if alpha == 1.0 {
        return Ok(SnrDb {
            db: f64::INFINITY,
            finite: false,
        });
    }
    Ok(SnrDb {
        db: 10.0 * (alpha / (1.0 - alpha)).log10(),
        finite: true,
    })
}

impl From<SnrDb> for f64 {
    fn from(s: SnrDb) -> f64 {
        s.db
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn skewness(x: &[f64]) -> f64 {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        let m3 = x.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n;
        m3 / m2.powf(1.5)
    }

    #[test]
    fn gaussian_white_is_centred_and_symmetric() {
        let s = gen_white(WhiteKind::Gaussian, 13000, 100.0, &mut rng(7)).unwrap();
        let mean = s.samples.iter().sum::<f64>() / s.len() as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!(skewness(&s.samples).abs() < 0.1);
        assert!((s.mean_square() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn exponential_white_has_skewness_two() {
        let s = gen_white(WhiteKind::Exponential, 13000, 100.0, &mut rng(7)).unwrap();
        let mean = s.samples.iter().sum::<f64>() / s.len() as f64;
        assert!(mean.abs() < 3.0 / (13000f64).sqrt(), "mean {mean}");
        let g = skewness(&s.samples);
        assert!((g - 2.0).abs() < 0.3, "skewness {g}");
    }

    #[test]
    fn single_sample_white_is_finite() {
        let s = gen_white(WhiteKind::Gaussian, 1, 100.0, &mut rng(3)).unwrap();
        assert_eq!(s.len(), 1);
        assert!(s.samples[0].is_finite());
        assert!(gen_white(WhiteKind::Gaussian, 0, 100.0, &mut rng(3)).is_err());
    }

    #[test]
    fn pink_rejects_bad_arguments() {
        assert!(gen_pink(1, 0.7, 100.0, &mut rng(1)).is_err());
        assert!(gen_pink(16, -0.1, 100.0, &mut rng(1)).is_err());
    }

    #[test]
    fn assemble_rejects_short_sources() {
        let s = gen_white(WhiteKind::Exponential, 100, 100.0, &mut rng(1)).unwrap();
        let p = MixParams::homopolar(1.0, 0.0, 30).unwrap();
        assert!(matches!(
            assemble_trial(&s, &s, &s, &p, 60),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn mix_params_validation() {
        assert!(MixParams::new(1.5, 0.0, 0.0, 1, 0).is_err());
        assert!(MixParams::new(0.5, 0.0, 0.0, 0, 0).is_err());
        assert!(MixParams::new(0.5, -0.7, 0.7, -1, 3).is_ok());
    }

    #[test]
    fn snr_examples() {
        assert_eq!(snr_db(0.5).unwrap().db, 0.0);
        assert!((snr_db(0.9).unwrap().db - 9.542).abs() < 1e-3);
        assert!((snr_db(0.1).unwrap().db + 9.542).abs() < 1e-3);
        let zero = snr_db(0.0).unwrap();
        assert!(!zero.finite && zero.db == f64::NEG_INFINITY);
        assert!(snr_db(1.0).unwrap().db.is_infinite());
        assert!(snr_db(-0.1).is_err());
    }
}
