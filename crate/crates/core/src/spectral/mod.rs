//! Segmentation, DFT frames and second-order spectral quantities.
//!
//! All segment averages accept optional per-segment weights, which is how
//! the bootstrap resamples segments without re-running any transform: a
//! resample with replacement is a vector of integer multiplicities.

mod bispectrum;

use std::f64::consts::PI;
use std::ops::RangeInclusive;

use num_complex::Complex64;
use rustfft::FftPlanner;

pub use bispectrum::{
    antisymmetrize, bispectrum, bispectrum_indirect, third_order_cumulant, Bispectrum,
    BispectrumCache, CumulantGrid, Triple,
};

use crate::error::{invalid, Result};

/// Bins whose cross-spectral magnitude falls below this fraction of the
/// summed magnitude carry no usable phase.
pub const UNDEFINED_PHASE_TOL: f64 = 1e-12;

/// Sign applied to `Im(sum C(k) conj(C(k+1)))` so that a positive phase slope
/// index means Y lags X (positive delay).
pub const PSI_SIGN: f64 = -1.0;

/// Wrap an angle into `[-pi, pi)`.
pub fn wrap_phase(phi: f64) -> f64 {
    let w = (phi + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Split a series into `floor(len / seg_len)` contiguous, non-overlapping
/// segments; the remainder is dropped.
pub fn segment(series: &[f64], seg_len: usize) -> Result<Vec<&[f64]>> {
    if seg_len == 0 {
        return invalid("segment length must be positive");
    }
    let n = series.len() / seg_len;
    if n < 2 {
        return invalid(format!(
            "series of length {} holds {n} segment(s) of {seg_len}; at least 2 required",
            series.len()
        ));
    }
    Ok(series.chunks_exact(seg_len).take(n).collect())
}

/// Per-segment DFT coefficients of one channel, row-major `[segment][bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFrames {
    coeffs: Vec<Complex64>,
    n_segments: usize,
    segment_len: usize,
    pub fs: f64,
}

impl SpectralFrames {
    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    /// Number of Fourier coefficients per segment (equal to the segment length).
    pub fn n_bins(&self) -> usize {
        self.segment_len
    }

    pub fn segment(&self, s: usize) -> &[Complex64] {
        &self.coeffs[s * self.segment_len..(s + 1) * self.segment_len]
    }

    pub fn iter_segments(&self) -> impl Iterator<Item = &[Complex64]> {
        self.coeffs.chunks_exact(self.segment_len)
    }

    fn check_compatible(&self, other: &SpectralFrames) -> Result<()> {
        if self.n_segments != other.n_segments || self.segment_len != other.segment_len {
            return invalid(format!(
                "frame shapes differ: {}x{} vs {}x{}",
                self.n_segments, self.segment_len, other.n_segments, other.segment_len
            ));
        }
        Ok(())
    }
}

/// Forward DFT (`exp(-i 2 pi f t / T)`, no scaling) of each segment.
pub fn fft_frames(segments: &[&[f64]], fs: f64) -> Result<SpectralFrames> {
    let Some(first) = segments.first() else {
        return invalid("no segments to transform");
    };
    let len = first.len();
    if len == 0 {
        return invalid("segments must be non-empty");
    }
    if segments.iter().any(|s| s.len() != len) {
        return invalid("segments differ in length");
    }
    let fft = FftPlanner::new().plan_fft_forward(len);
    let mut coeffs: Vec<Complex64> = segments
        .iter()
        .flat_map(|s| s.iter().map(|&v| Complex64::new(v, 0.0)))
        .collect();
    fft.process(&mut coeffs);
    Ok(SpectralFrames {
        coeffs,
        n_segments: segments.len(),
        segment_len: len,
        fs,
    })
}

/// Segment a series and transform it in one step.
pub fn frames(series: &[f64], seg_len: usize, fs: f64) -> Result<SpectralFrames> {
    fft_frames(&segment(series, seg_len)?, fs)
}

/// Inverse DFT with the `1/T` factor.
pub fn ifft(coeffs: &[Complex64]) -> Vec<Complex64> {
    let n = coeffs.len();
    let mut buf = coeffs.to_vec();
    if n == 0 {
        return buf;
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|c| *c *= scale);
    buf
}

/// Normalised segment weights; `None` means the plain average.
pub(crate) fn normalized_weights(weights: Option<&[f64]>, n: usize) -> Result<Vec<f64>> {
    match weights {
        None => Ok(vec![1.0 / n as f64; n]),
        Some(w) => {
            if w.len() != n {
                return invalid(format!("{} weights for {n} segments", w.len()));
            }
            let total: f64 = w.iter().sum();
            if total.is_nan() || total <= 0.0 || w.iter().any(|v| *v < 0.0) {
                return invalid("segment weights must be non-negative with a positive sum");
            }
            Ok(w.iter().map(|v| v / total).collect())
        }
    }
}

/// Segment-averaged `F_X(k) conj(F_Y(k))`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSpectrum {
    pub values: Vec<Complex64>,
    pub n_segments: usize,
}

pub fn cross_spectrum(fx: &SpectralFrames, fy: &SpectralFrames) -> Result<CrossSpectrum> {
    CrossSpectralCache::new(fx, fy)?.cross_spectrum(None)
}

/// Argument of the cross-spectrum, with a flag per bin telling whether the
/// phase is defined.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpectrum {
    pub values: Vec<f64>,
    pub defined: Vec<bool>,
}

impl PhaseSpectrum {
    /// A fully defined spectrum from raw angles (wrapped into `[-pi, pi)`).
    pub fn from_angles(values: impl IntoIterator<Item = f64>) -> Self {
        let values: Vec<f64> = values.into_iter().map(wrap_phase).collect();
        let defined = vec![true; values.len()];
        Self { values, defined }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_defined(&self) -> usize {
        self.defined.iter().filter(|d| **d).count()
    }
}

pub fn phase_spectrum(s: &CrossSpectrum) -> PhaseSpectrum {
    let total: f64 = s.values.iter().map(|v| v.norm()).sum();
    let tol = UNDEFINED_PHASE_TOL * total;
    let mut values = Vec::with_capacity(s.values.len());
    let mut defined = Vec::with_capacity(s.values.len());
    for v in &s.values {
        let ok = total > 0.0 && v.norm() >= tol;
        values.push(if ok { v.im.atan2(v.re) } else { 0.0 });
        defined.push(ok);
    }
    PhaseSpectrum { values, defined }
}

/// Complex coherency `S_XY / sqrt(S_XX S_YY)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coherency {
    pub values: Vec<Complex64>,
    pub defined: Vec<bool>,
}

pub fn coherency(fx: &SpectralFrames, fy: &SpectralFrames) -> Result<Coherency> {
    CrossSpectralCache::new(fx, fy)?.coherency(None)
}

/// Phase slope index over the inclusive bin band, sign-adjusted by
/// [`PSI_SIGN`]. Undefined coherency bins contribute nothing.
pub fn psi(c: &Coherency, band: RangeInclusive<usize>) -> Result<f64> {
    let (lo, hi) = (*band.start(), *band.end());
    let m = c.values.len();
    if hi > m / 2 || hi >= m {
        return invalid(format!("band end {hi} beyond bin {}", m / 2));
    }
    if hi < lo + 1 {
        return invalid(format!("band [{lo}, {hi}] narrower than 2 bins"));
    }
    let value = |k: usize| {
        if c.defined[k] {
            c.values[k]
        } else {
            Complex64::new(0.0, 0.0)
        }
    };
    let sum: Complex64 = (lo..hi).map(|k| value(k) * value(k + 1).conj()).sum();
    Ok(PSI_SIGN * sum.im)
}

/// Full default band `[0, M/2]`.
pub fn psi_full_band(c: &Coherency) -> Result<f64> {
    psi(c, 0..=c.values.len() / 2)
}

/// Per-segment second-order products of a channel pair: the cache behind
/// cross-spectra, coherency and their bootstrap replicates.
#[derive(Debug, Clone)]
pub struct CrossSpectralCache {
    cross: Vec<Complex64>,
    power_x: Vec<f64>,
    power_y: Vec<f64>,
    n_segments: usize,
    n_bins: usize,
}

impl CrossSpectralCache {
    pub fn new(fx: &SpectralFrames, fy: &SpectralFrames) -> Result<Self> {
        fx.check_compatible(fy)?;
        let cross = fx
            .coeffs
            .iter()
            .zip(&fy.coeffs)
            .map(|(a, b)| a * b.conj())
            .collect();
        Ok(Self {
            cross,
            power_x: fx.coeffs.iter().map(|a| a.norm_sqr()).collect(),
            power_y: fy.coeffs.iter().map(|b| b.norm_sqr()).collect(),
            n_segments: fx.n_segments,
            n_bins: fx.segment_len,
        })
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    fn average<T>(&self, data: &[T], w: &[f64]) -> Vec<T>
    where
        T: Copy + Default + std::ops::AddAssign + std::ops::Mul<f64, Output = T>,
    {
        let mut out = vec![T::default(); self.n_bins];
        for (row, &ws) in data.chunks_exact(self.n_bins).zip(w) {
            if ws == 0.0 {
                continue;
            }
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v * ws;
            }
        }
        out
    }

    pub fn cross_spectrum(&self, weights: Option<&[f64]>) -> Result<CrossSpectrum> {
        let w = normalized_weights(weights, self.n_segments)?;
        Ok(CrossSpectrum {
            values: self.average(&self.cross, &w),
            n_segments: self.n_segments,
        })
    }

    pub fn coherency(&self, weights: Option<&[f64]>) -> Result<Coherency> {
        let w = normalized_weights(weights, self.n_segments)?;
        let sxy = self.average(&self.cross, &w);
        let sxx = self.average(&self.power_x, &w);
        let syy = self.average(&self.power_y, &w);
        let mut values = Vec::with_capacity(self.n_bins);
        let mut defined = Vec::with_capacity(self.n_bins);
        for k in 0..self.n_bins {
            let den = (sxx[k] * syy[k]).sqrt();
            if den > 0.0 {
                values.push(sxy[k] / den);
                defined.push(true);
            } else {
                values.push(Complex64::new(0.0, 0.0));
                defined.push(false);
            }
        }
        Ok(Coherency { values, defined })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_counts_and_remainder() {
        let x = vec![0.0; 13000];
        assert_eq!(segment(&x, 200).unwrap().len(), 65);
        assert_eq!(segment(&x[..400], 200).unwrap().len(), 2);
        let s = segment(&x[..450], 200).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.iter().all(|seg| seg.len() == 200));
        assert!(segment(&x[..399], 200).is_err());
    }

    #[test]
    fn dft_of_impulse_is_flat() {
        let mut seg = vec![0.0; 16];
        seg[0] = 1.0;
        let f = fft_frames(&[&seg], 1.0).unwrap();
        for c in f.segment(0) {
            assert!((c - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn dft_of_cosine_peaks_at_mirror_bins() {
        let t = 64;
        let seg: Vec<f64> = (0..t)
            .map(|i| (2.0 * PI * 5.0 * i as f64 / t as f64).cos())
            .collect();
        let f = fft_frames(&[&seg], 1.0).unwrap();
        let mags: Vec<f64> = f.segment(0).iter().map(|c| c.norm()).collect();
        for (k, m) in mags.iter().enumerate() {
            if k == 5 || k == t - 5 {
                assert!((m - t as f64 / 2.0).abs() < 1e-9);
            } else {
                assert!(*m < 1e-9);
            }
        }
    }

    #[test]
    fn phase_of_unit_values() {
        let s = CrossSpectrum {
            values: vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)],
            n_segments: 1,
        };
        let p = phase_spectrum(&s);
        assert_eq!(p.values[0], 0.0);
        assert!((p.values[1] - PI / 2.0).abs() < 1e-15);
        assert!(p.defined.iter().all(|d| *d));
    }

    #[test]
    fn zero_cross_spectrum_is_undefined() {
        let s = CrossSpectrum {
            values: vec![Complex64::new(0.0, 0.0); 8],
            n_segments: 1,
        };
        assert_eq!(phase_spectrum(&s).n_defined(), 0);
    }

    #[test]
    fn psi_band_validation() {
        let c = Coherency {
            values: vec![Complex64::new(1.0, 0.0); 16],
            defined: vec![true; 16],
        };
        assert!(psi(&c, 3..=3).is_err());
        assert!(psi(&c, 0..=9).is_err());
        assert_eq!(psi(&c, 0..=8).unwrap(), 0.0);
    }

    #[test]
    fn wrap_phase_range() {
        assert!((wrap_phase(3.0 * PI) + PI).abs() < 1e-12);
        assert!((wrap_phase(-PI) + PI).abs() < 1e-12);
        assert!((wrap_phase(0.5) - 0.5).abs() < 1e-15);
        assert!((wrap_phase(2.0 * PI + 0.25) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn mismatched_frames_rejected() {
        let x = vec![1.0; 400];
        let a = frames(&x, 200, 1.0).unwrap();
        let b = frames(&x, 100, 1.0).unwrap();
        assert!(cross_spectrum(&a, &b).is_err());
    }
}
