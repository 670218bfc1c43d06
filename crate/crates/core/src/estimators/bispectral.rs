//! Bispectral holograms.
//!
//! A contrast panel `I(f1, f2)` is summed over `f1` and inverse-transformed
//! along `f2`; the hologram peaks at the delay because, for a delayed pair,
//! the panel phase reduces to `-2 pi f2 tau / M` and is flat in `f1`.

use num_complex::Complex64;

use super::{argmax_lag, circular_to_lag, DelayEstimate, Method, PanelMethod};
use crate::error::{invalid, Error, Result};
use crate::siggen::TrialPair;
use crate::spectral::{antisymmetrize, bispectrum, frames, ifft, Bispectrum, Triple};

/// Relative floor below which M3/M4 denominators are treated as zero.
pub const DENOMINATOR_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    m: usize,
    pub values: Vec<Complex64>,
    pub method: PanelMethod,
    /// Entries zeroed by the denominator guard.
    pub guarded: usize,
}

impl Panel {
    pub fn n_bins(&self) -> usize {
        self.m
    }

    pub fn at(&self, f1: usize, f2: usize) -> Complex64 {
        self.values[f1 * self.m + f2]
    }
}

/// Flat bispectrum slices feeding one panel. `numerator` is `B_XYX`, or the
/// antisymmetrized bispectrum.
#[derive(Debug, Clone, Copy)]
pub struct PanelInputs<'a> {
    pub numerator: &'a [Complex64],
    pub xxx: &'a [Complex64],
    pub yyy: Option<&'a [Complex64]>,
}

fn unit(z: Complex64) -> Complex64 {
    let r = z.norm();
    if r > 0.0 {
        z / r
    } else {
        Complex64::new(0.0, 0.0)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Elementwise panel over matching slices; returns values and the number
/// of guarded entries.
pub(crate) fn panel_values(method: PanelMethod, inputs: PanelInputs<'_>, out: &mut Vec<Complex64>) -> Result<usize> {
    let len = inputs.numerator.len();
    if inputs.xxx.len() != len || inputs.yyy.is_some_and(|y| y.len() != len) {
        return invalid("panel inputs differ in size");
    }
    let yyy = match (method.needs_yyy(), inputs.yyy) {
        (true, None) => return invalid(format!("panel {method:?} requires B_YYY")),
        (_, y) => y,
    };
    out.clear();
    out.reserve(len);
    let zero = Complex64::new(0.0, 0.0);
    let m2 = |num: Complex64, xxx: Complex64, yyy: Complex64| {
        if num == zero || xxx == zero || yyy == zero {
            zero
        } else {
            let phase = num.arg() - 0.5 * (xxx.arg() + yyy.arg());
            Complex64::from_polar(1.0, phase)
        }
    };
    let mut guarded = 0;
    match method {
        PanelMethod::M1 => {
            out.extend(
                inputs
                    .numerator
                    .iter()
                    .zip(inputs.xxx)
                    .map(|(n, x)| unit(*n) * unit(*x).conj()),
            );
        }
        PanelMethod::M2 => {
            let yyy = yyy.expect("checked above");
            out.extend((0..len).map(|i| m2(inputs.numerator[i], inputs.xxx[i], yyy[i])));
        }
        PanelMethod::M3 | PanelMethod::M4 => {
            let den: Vec<f64> = match method {
                PanelMethod::M3 => inputs.xxx.iter().map(|x| x.norm()).collect(),
                _ => {
                    let yyy = yyy.expect("checked above");
                    inputs
                        .xxx
                        .iter()
                        .zip(yyy)
                        .map(|(x, y)| (x.norm() * y.norm()).sqrt())
                        .collect()
                }
            };
            let floor = DENOMINATOR_GUARD * median(den.clone());
            for i in 0..len {
                if den[i].is_nan() || den[i] <= floor {
                    guarded += 1;
                    out.push(zero);
                    continue;
                }
                let v = match method {
                    PanelMethod::M3 => inputs.numerator[i] / inputs.xxx[i],
                    _ => {
                        let yyy = yyy.expect("checked above");
                        m2(inputs.numerator[i], inputs.xxx[i], yyy[i]) * (inputs.numerator[i].norm() / den[i])
                    }
                };
                out.push(v);
            }
        }
    }
    Ok(guarded)
}

/// Build a contrast panel. With `antisym`, `B_XYX` is replaced by
/// `B_XYX - B_YXX` wherever it appears; the auto-bispectra are unchanged.
pub fn panel(
    method: PanelMethod,
    b_xyx: &Bispectrum,
    b_xxx: &Bispectrum,
    b_yyy: Option<&Bispectrum>,
    antisym: bool,
    b_yxx: Option<&Bispectrum>,
) -> Result<Panel> {
    let asb;
    let numerator = if antisym {
        let Some(b_yxx) = b_yxx else {
            return invalid("antisymmetrized panel requires B_YXX");
        };
        asb = antisymmetrize(b_xyx, b_yxx)?;
        &asb
    } else {
        b_xyx
    };
    let m = b_xyx.n_bins();
    if b_xxx.n_bins() != m || b_yyy.is_some_and(|b| b.n_bins() != m) {
        return invalid("bispectra differ in size");
    }
    let mut values = Vec::new();
    let guarded = panel_values(
        method,
        PanelInputs {
            numerator: &numerator.values,
            xxx: &b_xxx.values,
            yyy: b_yyy.map(|b| b.values.as_slice()),
        },
        &mut values,
    )?;
    Ok(Panel {
        m,
        values,
        method,
        guarded,
    })
}

/// Lag-domain hologram, indexed by circular lag.
#[derive(Debug, Clone, PartialEq)]
pub struct Hologram {
    pub values: Vec<f64>,
    pub method: PanelMethod,
}

impl Hologram {
    /// Value at signed lag `lag` (taken modulo the length).
    pub fn at_lag(&self, lag: i64) -> f64 {
        let m = self.values.len() as i64;
        self.values[lag.rem_euclid(m) as usize]
    }

    /// Highest point with the crate-wide tie-break.
    pub fn peak(&self) -> Option<(i64, f64)> {
        let m = self.values.len();
        argmax_lag(
            self.values
                .iter()
                .enumerate()
                .map(|(rho, v)| (circular_to_lag(rho, m), *v)),
        )
    }

    /// Signed lags of strict local maxima (circular neighbours), highest first.
    pub fn local_maxima(&self) -> Vec<(i64, f64)> {
        let m = self.values.len();
        let mut peaks: Vec<(i64, f64)> = (0..m)
            .filter(|&i| {
                let v = self.values[i];
                v > self.values[(i + m - 1) % m] && v > self.values[(i + 1) % m]
            })
            .map(|i| (circular_to_lag(i, m), self.values[i]))
            .collect();
        peaks.sort_by(|a, b| b.1.total_cmp(&a.1));
        peaks
    }
}

/// `h(rho) = Re IFFT_f2( sum_f1 I(f1, f2) )`.
pub fn hologram(p: &Panel) -> Hologram {
    let m = p.m;
    let mut sums = vec![Complex64::new(0.0, 0.0); m];
    for row in p.values.chunks_exact(m) {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    Hologram {
        values: ifft(&sums).iter().map(|c| c.re).collect(),
        method: p.method,
    }
}

/// Hologram from the column sums of the `f2 in [0, M/2]` half of a panel
/// with Hermitian symmetry `I(-f1, -f2) = conj(I(f1, f2))`.
pub fn hologram_from_column_sums(half: &[Complex64], m: usize, method: PanelMethod) -> Hologram {
    debug_assert_eq!(half.len(), m / 2 + 1);
    let mut sums = vec![Complex64::new(0.0, 0.0); m];
    sums[..half.len()].copy_from_slice(half);
    for f2 in 1..m.div_ceil(2) {
        sums[m - f2] = half[f2].conj();
    }
    Hologram {
        values: ifft(&sums).iter().map(|c| c.re).collect(),
        method,
    }
}

/// Turn a hologram into an estimate; an all-zero hologram carries no delay.
pub(crate) fn estimate_from_hologram(h: &Hologram, fs: f64, method: Method) -> Result<DelayEstimate> {
    if h.values.iter().all(|v| *v == 0.0) {
        return Err(Error::UndefinedEstimate("hologram is identically zero".into()));
    }
    let (lag, peak) = h
        .peak()
        .ok_or_else(|| Error::UndefinedEstimate("hologram has no finite values".into()))?;
    Ok(DelayEstimate::new(lag, fs, method, peak))
}

/// Full bispectral pipeline: frames, bispectra, panel, hologram, argmax.
pub fn tde_bispec(pair: &TrialPair, seg_len: usize, method: PanelMethod, antisym: bool) -> Result<DelayEstimate> {
    let fx = frames(&pair.x, seg_len, pair.fs)?;
    let fy = frames(&pair.y, seg_len, pair.fs)?;
    let b_xyx = bispectrum(&fx, &fy, &fx, Triple::Xyx, false)?;
    let b_xxx = bispectrum(&fx, &fx, &fx, Triple::Xxx, false)?;
    let b_yyy = method
        .needs_yyy()
        .then(|| bispectrum(&fy, &fy, &fy, Triple::Yyy, false))
        .transpose()?;
    let b_yxx = antisym
        .then(|| bispectrum(&fy, &fx, &fx, Triple::Yxx, false))
        .transpose()?;
    let p = panel(method, &b_xyx, &b_xxx, b_yyy.as_ref(), antisym, b_yxx.as_ref())?;
    let tag = if antisym {
        Method::Asb(method)
    } else {
        Method::Bispec(method)
    };
    estimate_from_hologram(&hologram(&p), pair.fs, tag)
}
