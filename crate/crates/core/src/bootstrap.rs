//! Segment bootstrap around the delay estimators.
//!
//! A resample with replacement is represented by integer multiplicities per
//! segment, so every replicate is a weighted average of cached per-segment
//! products followed by the estimator itself. Each iteration draws its
//! indices from a generator seeded by `(seed, iteration)`, which keeps the
//! result independent of batching and thread count.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimators::bispectral::{estimate_from_hologram, panel_values};
use crate::estimators::{
    correlogram_peak, hologram_from_column_sums, segment_correlogram, tde_phase_periodicity, tde_phase_slope,
    DelayEstimate, Method, PanelInputs, PanelMethod,
};
use crate::siggen::TrialPair;
use crate::spectral::{
    antisymmetrize, bispectrum, frames, phase_spectrum, psi_full_band, segment, BispectrumCache,
    CrossSpectralCache, Triple,
};

/// Replicates averaged per matrix product on the bispectral path.
const BATCH: usize = 50;

/// Mix a master seed with a counter (splitmix64 finaliser).
pub fn derive_seed(seed: u64, counter: u64) -> u64 {
    let mut z = seed ^ counter.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Linear-interpolation quantile of an ascending slice, `pos = q (n - 1)`.
pub fn percentile(sorted: &[f64], q: f64) -> Result<f64> {
    if sorted.is_empty() {
        return invalid("percentile of an empty array");
    }
    if !(0.0..=1.0).contains(&q) {
        return invalid(format!("quantile {q} outside [0, 1]"));
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapVerdict {
    pub method: Method,
    /// Defined replicate estimates in iteration order.
    pub estimates: Vec<i64>,
    /// Replicates on which the estimator was undefined.
    pub undefined: usize,
    pub mean: f64,
    pub median: f64,
    pub iqr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub width: f64,
    pub accepted: bool,
}

impl BootstrapVerdict {
    /// Summarise a replicate distribution; `undefined` counts dropped
    /// iterations.
    pub fn from_estimates(method: Method, estimates: Vec<i64>, undefined: usize, width: f64) -> Result<Self> {
        check_width(width)?;
        let total = estimates.len() + undefined;
        if total == 0 {
            return invalid("no bootstrap iterations");
        }
        if 2 * undefined > total || estimates.is_empty() {
            return Err(Error::UndefinedVerdict { undefined, total });
        }
        let mut sorted: Vec<f64> = estimates.iter().map(|&e| e as f64).collect();
        sorted.sort_by(f64::total_cmp);
        let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
        let tail = (1.0 - width) / 2.0;
        let ci_low = percentile(&sorted, tail)?;
        let ci_high = percentile(&sorted, 1.0 - tail)?;
        Ok(Self {
            method,
            mean,
            median: percentile(&sorted, 0.5)?,
            iqr: percentile(&sorted, 0.75)? - percentile(&sorted, 0.25)?,
            ci_low,
            ci_high,
            width,
            accepted: ci_low > 0.0 || ci_high < 0.0,
            estimates,
            undefined,
        })
    }

    /// Re-evaluate the same replicate distribution at another CI width.
    pub fn with_width(&self, width: f64) -> Result<Self> {
        Self::from_estimates(self.method, self.estimates.clone(), self.undefined, width)
    }
}

fn check_width(width: f64) -> Result<()> {
    if !(width > 0.0 && width < 1.0) {
        return invalid(format!("CI width {width} must lie in (0, 1)"));
    }
    Ok(())
}

/// Segment multiplicities of one resample, drawn from its own generator.
pub fn resample_counts(n_segments: usize, seed: u64, iteration: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, iteration));
    let mut counts = vec![0.0; n_segments];
    for _ in 0..n_segments {
        counts[rng.random_range(0..n_segments)] += 1.0;
    }
    counts
}

/// Per-segment cross-correlograms over `[-max_lag, max_lag]`.
#[derive(Debug, Clone)]
struct Correlograms {
    rows: Vec<f64>,
    width: usize,
    max_lag: usize,
    constant: bool,
}

/// Per-segment caches of one trial, built once for every requested method.
#[derive(Debug, Clone)]
pub struct TrialAnalysis {
    fs: f64,
    n_segments: usize,
    n_bins: usize,
    correlograms: Option<Correlograms>,
    cross: Option<CrossSpectralCache>,
    xyx: Option<BispectrumCache>,
    asb: Option<BispectrumCache>,
    xxx: Option<BispectrumCache>,
    yyy: Option<BispectrumCache>,
}

impl TrialAnalysis {
    /// Cross-correlation searches `[-max_lag, max_lag]` with
    /// `max_lag = seg_len / 2 - 1`.
    pub fn new(pair: &TrialPair, seg_len: usize, methods: &[Method]) -> Result<Self> {
        Self::with_max_lag(pair, seg_len, (seg_len / 2).saturating_sub(1), methods)
    }

    pub fn with_max_lag(pair: &TrialPair, seg_len: usize, max_lag: usize, methods: &[Method]) -> Result<Self> {
        let xs = segment(&pair.x, seg_len)?;
        let ys = segment(&pair.y, seg_len)?;
        let mut out = Self {
            fs: pair.fs,
            n_segments: xs.len(),
            n_bins: seg_len,
            correlograms: None,
            cross: None,
            xyx: None,
            asb: None,
            xxx: None,
            yyy: None,
        };
        let has = |f: &dyn Fn(&Method) -> bool| methods.iter().any(f);

        if has(&|m| *m == Method::CrossCorr) {
            if max_lag >= seg_len {
                return invalid(format!("max lag {max_lag} must be below the segment length {seg_len}"));
            }
            let width = 2 * max_lag + 1;
            let mut rows = Vec::with_capacity(xs.len() * width);
            for (x, y) in xs.iter().zip(&ys) {
                rows.extend(segment_correlogram(x, y, max_lag));
            }
            let constant = |v: &[f64]| v.iter().all(|s| *s == v[0]);
            out.correlograms = Some(Correlograms {
                rows,
                width,
                max_lag,
                constant: constant(&pair.x) || constant(&pair.y),
            });
        }

        let spectral = has(&|m| *m != Method::CrossCorr);
        if !spectral {
            return Ok(out);
        }
        let fx = frames(&pair.x, seg_len, pair.fs)?;
        let fy = frames(&pair.y, seg_len, pair.fs)?;
        if has(&|m| matches!(m, Method::PhaseSlope | Method::PhasePeriodicity)) {
            out.cross = Some(CrossSpectralCache::new(&fx, &fy)?);
        }
        if has(&|m| m.is_bispectral()) {
            let cached = |a, b, c, t| -> Result<BispectrumCache> {
                bispectrum(a, b, c, t, true)?
                    .per_segment
                    .ok_or_else(|| Error::Internal("bispectrum cache missing".into()))
            };
            out.xxx = Some(cached(&fx, &fx, &fx, Triple::Xxx)?);
            let needs_yyy = methods.iter().any(|m| match m {
                Method::Bispec(p) | Method::Asb(p) => p.needs_yyy(),
                _ => false,
            });
            if needs_yyy {
                out.yyy = Some(cached(&fy, &fy, &fy, Triple::Yyy)?);
            }
            let b_xyx = bispectrum(&fx, &fy, &fx, Triple::Xyx, true)?;
            if has(&|m| matches!(m, Method::Asb(_))) {
                let b_yxx = bispectrum(&fy, &fx, &fx, Triple::Yxx, true)?;
                out.asb = antisymmetrize(&b_xyx, &b_yxx)?.per_segment;
            }
            if has(&|m| matches!(m, Method::Bispec(_))) {
                out.xyx = b_xyx.per_segment;
            }
        }
        Ok(out)
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    fn missing(method: Method) -> Error {
        Error::InvalidArgument(format!("trial analysis was not prepared for {method}"))
    }

    /// Estimate from segment weights (`None` = plain average of all segments).
    pub fn estimate(&self, method: Method, weights: Option<&[f64]>) -> Result<DelayEstimate> {
        let w = crate::spectral::normalized_weights(weights, self.n_segments)?;
        match method {
            Method::CrossCorr => self.crosscorr(&w),
            Method::PhaseSlope | Method::PhasePeriodicity => {
                let cache = self.cross.as_ref().ok_or_else(|| Self::missing(method))?;
                let p = phase_spectrum(&cache.cross_spectrum(Some(&w))?);
                if method == Method::PhaseSlope {
                    tde_phase_slope(&p, self.fs)
                } else {
                    let c = cache.coherency(Some(&w))?;
                    tde_phase_periodicity(&p, psi_full_band(&c)?, self.fs)
                }
            }
            Method::Bispec(p) | Method::Asb(p) => {
                let means = self.batch_means(&[method], &w, 1)?;
                self.bispectral_estimates(&means, method, p)?.pop().expect("one row")
            }
        }
    }

    fn crosscorr(&self, w: &[f64]) -> Result<DelayEstimate> {
        let c = self
            .correlograms
            .as_ref()
            .ok_or_else(|| Self::missing(Method::CrossCorr))?;
        if c.constant {
            return Err(Error::UndefinedEstimate(
                "constant channel has no cross-correlation structure".into(),
            ));
        }
        let mut r = vec![0.0; c.width];
        for (row, &ws) in c.rows.chunks_exact(c.width).zip(w) {
            if ws != 0.0 {
                for (acc, v) in r.iter_mut().zip(row) {
                    *acc += ws * v;
                }
            }
        }
        let (lag, peak) = correlogram_peak(&r, c.max_lag)
            .ok_or_else(|| Error::UndefinedEstimate("empty correlogram".into()))?;
        Ok(DelayEstimate::new(lag, self.fs, Method::CrossCorr, peak))
    }

    /// Weighted half-plane averages of every cache `methods` need, for
    /// `rows` normalised weight vectors laid out row-major.
    fn batch_means(&self, methods: &[Method], weights: &[f64], rows: usize) -> Result<BatchMeans> {
        let mut need = [false; 4];
        for m in methods {
            match m {
                Method::Bispec(p) | Method::Asb(p) => {
                    need[if matches!(m, Method::Asb(_)) { 1 } else { 0 }] = true;
                    need[2] = true;
                    need[3] |= p.needs_yyy();
                }
                _ => {}
            }
        }
        let caches = [&self.xyx, &self.asb, &self.xxx, &self.yyy];
        let mut means: [Option<Vec<Complex64>>; 4] = Default::default();
        for k in 0..4 {
            if !need[k] {
                continue;
            }
            let c = caches[k]
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("trial analysis lacks a bispectral cache".into()))?;
            let len = c.plane_len();
            let mut re = vec![0.0; rows * len];
            let mut im = vec![0.0; rows * len];
            c.weighted_means_into(weights, rows, &mut re, &mut im);
            means[k] = Some(re.into_iter().zip(im).map(|(r, i)| Complex64::new(r, i)).collect());
        }
        let [xyx, asb, xxx, yyy] = means;
        Ok(BatchMeans {
            rows,
            xyx,
            asb,
            xxx,
            yyy,
        })
    }

    fn bispectral_estimates(&self, means: &BatchMeans, method: Method, panel_method: PanelMethod) -> Result<Vec<Result<DelayEstimate>>> {
        let numerator = match method {
            Method::Asb(_) => means.asb.as_ref(),
            _ => means.xyx.as_ref(),
        }
        .ok_or_else(|| Self::missing(method))?;
        let xxx = means.xxx.as_ref().ok_or_else(|| Self::missing(method))?;
        let yyy = if panel_method.needs_yyy() {
            Some(means.yyy.as_ref().ok_or_else(|| Self::missing(method))?)
        } else {
            None
        };
        let m = self.n_bins;
        let cols = m / 2 + 1;
        let len = m * cols;
        let mut plane = Vec::with_capacity(len);
        let mut out = Vec::with_capacity(means.rows);
        for r in 0..means.rows {
            let span = r * len..(r + 1) * len;
            let inputs = PanelInputs {
                numerator: &numerator[span.clone()],
                xxx: &xxx[span.clone()],
                yyy: yyy.map(|d| &d[span.clone()]),
            };
            if let Err(e) = panel_values(panel_method, inputs, &mut plane) {
                out.push(Err(e));
                continue;
            }
            let mut sums = vec![Complex64::new(0.0, 0.0); cols];
            for row in plane.chunks_exact(cols) {
                for (s, v) in sums.iter_mut().zip(row) {
                    *s += v;
                }
            }
            let h = hologram_from_column_sums(&sums, m, panel_method);
            out.push(estimate_from_hologram(&h, self.fs, method));
        }
        Ok(out)
    }
}

/// Batched bispectral averages, `rows x plane` each.
struct BatchMeans {
    rows: usize,
    xyx: Option<Vec<Complex64>>,
    asb: Option<Vec<Complex64>>,
    xxx: Option<Vec<Complex64>>,
    yyy: Option<Vec<Complex64>>,
}

/// Bootstrap several methods on shared resamples.
pub fn bootstrap_many(
    analysis: &TrialAnalysis,
    methods: &[Method],
    n_boot: usize,
    width: f64,
    seed: u64,
) -> Result<Vec<Result<BootstrapVerdict>>> {
    check_width(width)?;
    if n_boot == 0 {
        return invalid("n_boot must be positive");
    }
    let n = analysis.n_segments;
    let mut outcomes: Vec<Vec<Option<i64>>> = vec![Vec::with_capacity(n_boot); methods.len()];
    let mut start = 0;
    while start < n_boot {
        let rows = BATCH.min(n_boot - start);
        let mut weights = Vec::with_capacity(rows * n);
        for i in 0..rows {
            let counts = resample_counts(n, seed, (start + i) as u64);
            weights.extend(counts.iter().map(|c| c / n as f64));
        }
        let means = analysis.batch_means(methods, &weights, rows)?;
        for (k, &method) in methods.iter().enumerate() {
            match method {
                Method::Bispec(p) | Method::Asb(p) => {
                    for r in analysis.bispectral_estimates(&means, method, p)? {
                        outcomes[k].push(keep_defined(r)?);
                    }
                }
                _ => {
                    for w in weights.chunks_exact(n) {
                        outcomes[k].push(keep_defined(analysis.estimate(method, Some(w)))?);
                    }
                }
            }
        }
        start += rows;
    }
    Ok(methods
        .iter()
        .zip(outcomes)
        .map(|(&method, o)| {
            let undefined = o.iter().filter(|e| e.is_none()).count();
            let estimates = o.into_iter().flatten().collect();
            BootstrapVerdict::from_estimates(method, estimates, undefined, width)
        })
        .collect())
}

fn keep_defined(r: Result<DelayEstimate>) -> Result<Option<i64>> {
    match r {
        Ok(e) => Ok(Some(e.lag_samples)),
        Err(Error::UndefinedEstimate(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Bootstrap a single method.
pub fn bootstrap_tde(
    analysis: &TrialAnalysis,
    method: Method,
    n_boot: usize,
    width: f64,
    seed: u64,
) -> Result<BootstrapVerdict> {
    bootstrap_many(analysis, &[method], n_boot, width, seed)?
        .pop()
        .expect("one verdict per method")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap(), 2.5);
        assert_eq!(percentile(&[5.0], 0.975).unwrap(), 5.0);
        let v: Vec<f64> = (0..100).map(f64::from).collect();
        assert!((percentile(&v, 0.025).unwrap() - 2.475).abs() < 1e-12);
        assert!(percentile(&[], 0.5).is_err());
        assert!(percentile(&[1.0], 1.5).is_err());
    }

    #[test]
    fn identical_zero_estimates_are_rejected() {
        let v = BootstrapVerdict::from_estimates(Method::CrossCorr, vec![0; 50], 0, 0.95).unwrap();
        assert!(!v.accepted);
        assert_eq!((v.ci_low, v.ci_high, v.iqr), (0.0, 0.0, 0.0));
    }

    #[test]
    fn constant_positive_estimates_are_accepted() {
        let v = BootstrapVerdict::from_estimates(Method::PhaseSlope, vec![10; 20], 0, 0.95).unwrap();
        assert!(v.accepted);
        assert_eq!(v.mean, 10.0);
    }

    #[test]
    fn mostly_undefined_is_an_error() {
        let r = BootstrapVerdict::from_estimates(Method::PhaseSlope, vec![1; 4], 5, 0.95);
        assert!(matches!(r, Err(Error::UndefinedVerdict { undefined: 5, total: 9 })));
    }

    #[test]
    fn width_must_be_open_unit() {
        for w in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(BootstrapVerdict::from_estimates(Method::CrossCorr, vec![1], 0, w).is_err());
        }
    }

    #[test]
    fn resample_counts_sum_to_n() {
        let c = resample_counts(65, 3, 11);
        assert_eq!(c.iter().sum::<f64>(), 65.0);
        assert_eq!(c, resample_counts(65, 3, 11));
        assert_ne!(c, resample_counts(65, 3, 12));
    }

    #[test]
    fn derived_seeds_differ() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(42, i)).collect();
        assert_eq!(s.len(), 1000);
    }
}
