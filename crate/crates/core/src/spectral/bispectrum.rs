//! Third-order spectra.
//!
//! Bispectra are indexed `[f1][f2]` over the full `M x M` plane with
//! `f1 + f2` taken modulo `M`. For real inputs `B(M-f1, M-f2) =
//! conj(B(f1, f2))`, so the per-segment cache only stores the columns
//! `f2 in [0, M/2]`; that half-plane is all the hologram needs.

use num_complex::Complex64;
use rustfft::FftPlanner;

use super::{normalized_weights, SpectralFrames};
use crate::error::{invalid, Result};

/// Which channels fill the three slots of `<F_a(f1) F_b(f2) conj(F_c(f1+f2))>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Triple {
    Xyx,
    Xxx,
    Yyy,
    Yxx,
    /// `B_XYX - B_YXX`.
    Antisym,
}

/// Per-segment half-plane triple products in single precision, planar
/// real/imaginary storage, row-major `[segment][f1][f2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BispectrumCache {
    n_segments: usize,
    m: usize,
    cols: usize,
    re: Vec<f32>,
    im: Vec<f32>,
}

/// Column block converted to double precision per matrix product.
const GEMM_CHUNK: usize = 2048;

impl BispectrumCache {
    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    pub fn n_bins(&self) -> usize {
        self.m
    }

    /// Stored columns per row, `M/2 + 1`.
    pub fn n_cols(&self) -> usize {
        self.cols
    }

    /// Entries per segment.
    pub fn plane_len(&self) -> usize {
        self.m * self.cols
    }

    /// Weighted segment average over the stored half-plane, accumulated in
    /// double precision.
    pub fn weighted_mean(&self, weights: Option<&[f64]>) -> Result<Vec<Complex64>> {
        let w = normalized_weights(weights, self.n_segments)?;
        let len = self.plane_len();
        let mut re = vec![0.0; len];
        let mut im = vec![0.0; len];
        self.weighted_means_into(&w, 1, &mut re, &mut im);
        Ok(re
            .into_iter()
            .zip(im)
            .map(|(r, i)| Complex64::new(r, i))
            .collect())
    }

    /// Batched weighted averages: `weights` is `rows x n_segments` (already
    /// normalised), outputs are `rows x plane_len`.
    pub fn weighted_means_into(&self, weights: &[f64], rows: usize, out_re: &mut [f64], out_im: &mut [f64]) {
        let n = self.n_segments;
        let len = self.plane_len();
        assert_eq!(weights.len(), rows * n);
        assert_eq!(out_re.len(), rows * len);
        assert_eq!(out_im.len(), rows * len);
        let mut scratch = vec![0.0f64; n * GEMM_CHUNK.min(len)];
        for (src, out) in [(&self.re, &mut *out_re), (&self.im, &mut *out_im)] {
            let mut start = 0;
            while start < len {
                let width = GEMM_CHUNK.min(len - start);
                for s in 0..n {
                    let row = &src[s * len + start..s * len + start + width];
                    for (d, &v) in scratch[s * width..(s + 1) * width].iter_mut().zip(row) {
                        *d = f64::from(v);
                    }
                }
                // SAFETY: all pointers address live slices whose extents
                // match the (rows x n) * (n x width) -> (rows x width) shapes
                // and strides passed alongside them.
                unsafe {
                    matrixmultiply::dgemm(
                        rows,
                        n,
                        width,
                        1.0,
                        weights.as_ptr(),
                        n as isize,
                        1,
                        scratch.as_ptr(),
                        width as isize,
                        1,
                        0.0,
                        out.as_mut_ptr().add(start),
                        len as isize,
                        1,
                    );
                }
                start += width;
            }
        }
    }
}

/// A segment-averaged bispectrum over the full `M x M` plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Bispectrum {
    m: usize,
    pub values: Vec<Complex64>,
    pub per_segment: Option<BispectrumCache>,
    pub triple: Triple,
}

impl Bispectrum {
    pub fn n_bins(&self) -> usize {
        self.m
    }

    pub fn at(&self, f1: usize, f2: usize) -> Complex64 {
        self.values[f1 * self.m + f2]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    fn from_values(m: usize, values: Vec<Complex64>, triple: Triple) -> Self {
        Self {
            m,
            values,
            per_segment: None,
            triple,
        }
    }
}

/// Direct (FFT-based) bispectrum `<F_a(f1) F_b(f2) conj(F_c(f1+f2))>`.
pub fn bispectrum(
    fa: &SpectralFrames,
    fb: &SpectralFrames,
    fc: &SpectralFrames,
    triple: Triple,
    keep_cache: bool,
) -> Result<Bispectrum> {
    fa.check_compatible(fb)?;
    fa.check_compatible(fc)?;
    let n = fa.n_segments();
    let m = fa.n_bins();
    let cols = m / 2 + 1;
    let inv_n = 1.0 / n as f64;
    let mut values = vec![Complex64::new(0.0, 0.0); m * m];
    let mut cache = keep_cache.then(|| BispectrumCache {
        n_segments: n,
        m,
        cols,
        re: Vec::with_capacity(n * m * cols),
        im: Vec::with_capacity(n * m * cols),
    });

    // Only f2 <= M/2 is accumulated; the rest follows from
    // B(M - f1, M - f2) = conj(B(f1, f2)), which holds for real series.
    for s in 0..n {
        let (a, b, c) = (fa.segment(s), fb.segment(s), fc.segment(s));
        for f1 in 0..m {
            let row = &mut values[f1 * m..f1 * m + cols];
            let af = a[f1];
            for (f2, out) in row.iter_mut().enumerate() {
                let k = if f1 + f2 >= m { f1 + f2 - m } else { f1 + f2 };
                let t = af * b[f2] * c[k].conj();
                *out += t;
                if let Some(cache) = cache.as_mut() {
                    cache.re.push(t.re as f32);
                    cache.im.push(t.im as f32);
                }
            }
        }
    }
    for f1 in 0..m {
        for f2 in cols..m {
            values[f1 * m + f2] = values[((m - f1) % m) * m + (m - f2)].conj();
        }
    }
    values.iter_mut().for_each(|v| *v *= inv_n);
    Ok(Bispectrum {
        m,
        values,
        per_segment: cache,
        triple,
    })
}

/// `B_[X|YX] = B_XYX - B_YXX`, caches differenced likewise.
pub fn antisymmetrize(b_xyx: &Bispectrum, b_yxx: &Bispectrum) -> Result<Bispectrum> {
    if b_xyx.m != b_yxx.m {
        return invalid(format!(
            "bispectrum sizes differ: {} vs {}",
            b_xyx.m, b_yxx.m
        ));
    }
    let per_segment = match (&b_xyx.per_segment, &b_yxx.per_segment) {
        (None, None) => None,
        (Some(a), Some(b)) => {
            if a.n_segments != b.n_segments {
                return invalid("per-segment caches come from different segmentations");
            }
            Some(BispectrumCache {
                n_segments: a.n_segments,
                m: a.m,
                cols: a.cols,
                re: a.re.iter().zip(&b.re).map(|(x, y)| x - y).collect(),
                im: a.im.iter().zip(&b.im).map(|(x, y)| x - y).collect(),
            })
        }
        _ => return invalid("only one operand carries a per-segment cache"),
    };
    Ok(Bispectrum {
        m: b_xyx.m,
        values: b_xyx
            .values
            .iter()
            .zip(&b_yxx.values)
            .map(|(a, b)| a - b)
            .collect(),
        per_segment,
        triple: Triple::Antisym,
    })
}

/// Third-order moment `C(r1, r2) = E[x(t+r1) y(t+r2) z(t)]` of the
/// mean-removed series for `|r1|, |r2| <= max_lag`.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulantGrid {
    pub max_lag: usize,
    /// Row-major `[(r1 + L)][(r2 + L)]`.
    pub values: Vec<f64>,
}

impl CumulantGrid {
    pub fn at(&self, r1: i64, r2: i64) -> f64 {
        let w = 2 * self.max_lag + 1;
        let l = self.max_lag as i64;
        self.values[((r1 + l) as usize) * w + (r2 + l) as usize]
    }
}

fn centered(v: &[f64]) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - mean).collect()
}

pub fn third_order_cumulant(x: &[f64], y: &[f64], z: &[f64], max_lag: usize) -> Result<CumulantGrid> {
    let len = x.len();
    if y.len() != len || z.len() != len {
        return invalid("cumulant inputs differ in length");
    }
    if max_lag >= len {
        return invalid(format!("max lag {max_lag} must be below the series length {len}"));
    }
    let (x, y, z) = (centered(x), centered(y), centered(z));
    let l = max_lag as i64;
    let w = 2 * max_lag + 1;
    let mut values = vec![0.0; w * w];
    for r1 in -l..=l {
        for r2 in -l..=l {
            // Valid t: 0 <= t, t + r1, t + r2 < len.
            let lo = 0i64.max(-r1).max(-r2);
            let hi = (len as i64).min(len as i64 - r1).min(len as i64 - r2);
            if hi <= lo {
                continue;
            }
            let mut acc = 0.0;
            for t in lo..hi {
                acc += x[(t + r1) as usize] * y[(t + r2) as usize] * z[t as usize];
            }
            values[((r1 + l) as usize) * w + (r2 + l) as usize] = acc / (hi - lo) as f64;
        }
    }
    Ok(CumulantGrid { max_lag, values })
}

/// Indirect bispectrum: the `size x size` 2-D DFT of the third-order
/// moment sequence, lags placed circularly.
pub fn bispectrum_indirect(
    x: &[f64],
    y: &[f64],
    z: &[f64],
    max_lag: usize,
    size: usize,
) -> Result<Bispectrum> {
    if size < 2 * max_lag + 1 {
        return invalid(format!(
            "transform size {size} cannot hold lags up to {max_lag} without overlap"
        ));
    }
    let grid = third_order_cumulant(x, y, z, max_lag)?;
    let l = max_lag as i64;
    let mut plane = vec![Complex64::new(0.0, 0.0); size * size];
    for r1 in -l..=l {
        for r2 in -l..=l {
            let i = r1.rem_euclid(size as i64) as usize;
            let j = r2.rem_euclid(size as i64) as usize;
            plane[i * size + j] = Complex64::new(grid.at(r1, r2), 0.0);
        }
    }
    let fft = FftPlanner::new().plan_fft_forward(size);
    // Rows, then columns via a transpose.
    fft.process(&mut plane);
    let mut t = transpose(&plane, size);
    fft.process(&mut t);
    let values = transpose(&t, size);
    Ok(Bispectrum::from_values(size, values, Triple::Xyx))
}

fn transpose(a: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            out[j * n + i] = a[i * n + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{fft_frames, frames};

    #[test]
    fn single_segment_equals_triple_product() {
        let seg: Vec<f64> = (0..16).map(|i| ((i * 7 % 5) as f64) - 2.0).collect();
        let f = fft_frames(&[&seg], 1.0).unwrap();
        let b = bispectrum(&f, &f, &f, Triple::Xxx, false).unwrap();
        let c = f.segment(0);
        for f1 in 0..16 {
            for f2 in 0..16 {
                let want = c[f1] * c[f2] * c[(f1 + f2) % 16].conj();
                assert!((b.at(f1, f2) - want).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn cache_mean_matches_values() {
        let x: Vec<f64> = (0..120).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let f = frames(&x, 20, 1.0).unwrap();
        let b = bispectrum(&f, &f, &f, Triple::Xxx, true).unwrap();
        let cache = b.per_segment.as_ref().unwrap();
        let mean = cache.weighted_mean(None).unwrap();
        let scale = b.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for f1 in 0..20 {
            for f2 in 0..cache.n_cols() {
                let d = (mean[f1 * cache.n_cols() + f2] - b.at(f1, f2)).norm();
                assert!(d / scale < 1e-6);
            }
        }
    }

    #[test]
    fn antisymmetrize_requires_matching_caches() {
        let x: Vec<f64> = (0..40).map(|i| (i % 3) as f64).collect();
        let f = frames(&x, 10, 1.0).unwrap();
        let a = bispectrum(&f, &f, &f, Triple::Xyx, true).unwrap();
        let b = bispectrum(&f, &f, &f, Triple::Yxx, false).unwrap();
        assert!(antisymmetrize(&a, &b).is_err());
    }

    #[test]
    fn indirect_rejects_bad_sizes() {
        let x = vec![1.0; 50];
        assert!(third_order_cumulant(&x, &x, &x, 50).is_err());
        assert!(bispectrum_indirect(&x, &x, &x, 10, 20).is_err());
    }
}
