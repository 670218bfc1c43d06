//! Digital Butterworth filters from the analog prototype.
//!
//! The analog low-pass prototype is frequency-transformed in zero/pole/gain
//! form, mapped with the bilinear transform (edges pre-warped so they land
//! exactly on the requested digital frequencies) and then factored into
//! second-order sections, which are run in transposed direct form II.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Highpass,
    Lowpass,
    Bandpass,
}

/// Band edges (Hz) and order of a Butterworth design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    /// Cutoff for high/low-pass; `[low, high]` for band-pass. `edges[1]` is
    /// ignored by the single-edge kinds.
    pub edges: [f64; 2],
    pub order: usize,
}

impl FilterSpec {
    pub fn highpass(cutoff: f64, order: usize) -> Self {
        Self {
            kind: FilterKind::Highpass,
            edges: [cutoff, cutoff],
            order,
        }
    }

    pub fn lowpass(cutoff: f64, order: usize) -> Self {
        Self {
            kind: FilterKind::Lowpass,
            edges: [cutoff, cutoff],
            order,
        }
    }

    pub fn bandpass(low: f64, high: f64, order: usize) -> Self {
        Self {
            kind: FilterKind::Bandpass,
            edges: [low, high],
            order,
        }
    }

    pub fn validate(&self, fs: f64) -> Result<()> {
        if self.order == 0 {
            return invalid("filter order must be at least 1");
        }
        if !(fs > 0.0 && fs.is_finite()) {
            return invalid(format!("sampling rate {fs} must be positive"));
        }
        let nyquist = fs / 2.0;
        let edges: &[f64] = match self.kind {
            FilterKind::Bandpass => &self.edges,
            _ => &self.edges[..1],
        };
        for &e in edges {
            if !(e > 0.0 && e < nyquist) {
                return invalid(format!(
                    "filter edge {e} Hz must lie strictly inside (0, {nyquist}) Hz"
                ));
            }
        }
        if self.kind == FilterKind::Bandpass && self.edges[0] >= self.edges[1] {
            return invalid(format!(
                "band-pass edges [{}, {}] are not increasing",
                self.edges[0], self.edges[1]
            ));
        }
        Ok(())
    }
}

/// One biquad `b0 + b1 z^-1 + b2 z^-2 / (1 + a1 z^-1 + a2 z^-2)`.
/// First-order sections carry `b2 = a2 = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        let num = self.b[0] + z_inv * self.b[1] + z2 * self.b[2];
        let den = 1.0 + z_inv * self.a[0] + z2 * self.a[1];
        num / den
    }
}

/// A designed filter: a cascade of second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct Butterworth {
    pub spec: FilterSpec,
    pub fs: f64,
    pub sections: Vec<Biquad>,
    poles: Vec<Complex64>,
}

impl Butterworth {
    pub fn design(spec: FilterSpec, fs: f64) -> Result<Self> {
        spec.validate(fs)?;
        let n = spec.order;
        let k2 = 2.0 * fs;
        let warp = |f: f64| k2 * (PI * f / fs).tan();

        let proto: Vec<Complex64> = (0..n)
            .map(|k| {
                let angle = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
                Complex64::from_polar(1.0, angle)
            })
            .collect();

        // Analog zeros/poles/gain after the frequency transform.
        let (zeros, poles, gain): (Vec<Complex64>, Vec<Complex64>, f64) = match spec.kind {
            FilterKind::Lowpass => {
                let wc = warp(spec.edges[0]);
                (vec![], proto.iter().map(|p| p * wc).collect(), wc.powi(n as i32))
            }
            FilterKind::Highpass => {
                let wc = warp(spec.edges[0]);
                let poles = proto.iter().map(|p| wc / p).collect();
                let prod: Complex64 = proto.iter().map(|p| -p).product();
                (vec![Complex64::new(0.0, 0.0); n], poles, (1.0 / prod).re)
            }
            FilterKind::Bandpass => {
                let w1 = warp(spec.edges[0]);
                let w2 = warp(spec.edges[1]);
                let w0 = (w1 * w2).sqrt();
                let bw = w2 - w1;
                let mut poles = Vec::with_capacity(2 * n);
                for p in &proto {
                    let half = p * (bw / 2.0);
                    let root = (half * half - w0 * w0).sqrt();
                    poles.push(half + root);
                    poles.push(half - root);
                }
                (vec![Complex64::new(0.0, 0.0); n], poles, bw.powi(n as i32))
            }
        };

        // Bilinear map; zeros at analog infinity land on z = -1.
        let map = |s: &Complex64| (k2 + s) / (k2 - s);
        let num: Complex64 = zeros.iter().map(|z| k2 - z).product();
        let den: Complex64 = poles.iter().map(|p| k2 - p).product();
        let digital_gain = gain * (num / den).re;
        let mut dzeros: Vec<f64> = zeros.iter().map(|z| map(z).re).collect();
        dzeros.resize(poles.len(), -1.0);
        let dpoles: Vec<Complex64> = poles.iter().map(map).collect();

        if let Some(p) = dpoles.iter().find(|p| p.norm() >= 1.0) {
            return Err(Error::Internal(format!(
                "unstable Butterworth design: pole {p} outside the unit circle"
            )));
        }

        let sections = pair_sections(&dzeros, &dpoles, digital_gain);
        Ok(Self {
            spec,
            fs,
            sections,
            poles: dpoles,
        })
    }

    pub fn poles(&self) -> &[Complex64] {
        &self.poles
    }

    /// Complex frequency response at `freq` Hz.
    pub fn response(&self, freq: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq / self.fs);
        self.sections.iter().map(|s| s.response(z_inv)).product()
    }

    /// Causal (forward-only) filtering with zero initial state.
    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        let mut out = input.to_vec();
        for s in &self.sections {
            let (mut w1, mut w2) = (0.0, 0.0);
            for v in out.iter_mut() {
                let x = *v;
                let y = s.b[0] * x + w1;
                w1 = s.b[1] * x - s.a[0] * y + w2;
                w2 = s.b[2] * x - s.a[1] * y;
                *v = y;
            }
        }
        out
    }
}

fn pair_sections(zeros: &[f64], poles: &[Complex64], gain: f64) -> Vec<Biquad> {
    const IMAG_TOL: f64 = 1e-12;
    let mut complex: Vec<Complex64> = poles.iter().filter(|p| p.im > IMAG_TOL).copied().collect();
    let mut real: Vec<f64> = poles
        .iter()
        .filter(|p| p.im.abs() <= IMAG_TOL)
        .map(|p| p.re)
        .collect();
    complex.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    real.sort_by(f64::total_cmp);

    let mut zeros = zeros.to_vec();
    zeros.sort_by(f64::total_cmp);
    // Alternate zeros from both ends so band-pass sections get one zero at
    // +1 and one at -1.
    let mut zero_iter = {
        let mut order = Vec::with_capacity(zeros.len());
        let (mut lo, mut hi) = (0usize, zeros.len());
        while lo < hi {
            hi -= 1;
            order.push(zeros[hi]);
            if lo < hi {
                order.push(zeros[lo]);
                lo += 1;
            }
        }
        order.into_iter()
    };

    let mut sections = Vec::new();
    for p in complex {
        let z1 = zero_iter.next().unwrap_or(-1.0);
        let z2 = zero_iter.next().unwrap_or(-1.0);
        sections.push(Biquad {
            b: [1.0, -(z1 + z2), z1 * z2],
            a: [-2.0 * p.re, p.norm_sqr()],
        });
    }
    for chunk in real.chunks(2) {
        if let [p1, p2] = chunk {
            let z1 = zero_iter.next().unwrap_or(-1.0);
            let z2 = zero_iter.next().unwrap_or(-1.0);
            sections.push(Biquad {
                b: [1.0, -(z1 + z2), z1 * z2],
                a: [-(p1 + p2), p1 * p2],
            });
        } else {
            let z1 = zero_iter.next().unwrap_or(-1.0);
            sections.push(Biquad {
                b: [1.0, -z1, 0.0],
                a: [-chunk[0], 0.0],
            });
        }
    }
    if let Some(first) = sections.first_mut() {
        for b in first.b.iter_mut() {
            *b *= gain;
        }
    }
    sections
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowpass_unity_dc_and_half_power_at_cutoff() {
        let f = Butterworth::design(FilterSpec::lowpass(45.0, 4), 100.0).unwrap();
        assert!((f.response(0.0).norm() - 1.0).abs() < 1e-9);
        assert!((f.response(45.0).norm() - 0.5f64.sqrt()).abs() < 1e-9);
        assert_eq!(f.sections.len(), 2);
    }

    #[test]
    fn highpass_blocks_dc() {
        let f = Butterworth::design(FilterSpec::highpass(1.0, 3), 100.0).unwrap();
        assert!(f.response(0.0).norm() < 1e-9);
        assert!((f.response(1.0).norm() - 0.5f64.sqrt()).abs() < 1e-9);
        assert!((f.response(49.0).norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn bandpass_edges_are_half_power() {
        let f = Butterworth::design(FilterSpec::bandpass(8.0, 13.0, 4), 100.0).unwrap();
        assert_eq!(f.poles().len(), 8);
        for edge in [8.0, 13.0] {
            assert!((f.response(edge).norm() - 0.5f64.sqrt()).abs() < 1e-9);
        }
        assert!(f.response(0.0).norm() < 1e-12);
        assert!(f.response(50.0).norm() < 1e-9);
    }

    #[test]
    fn rejects_edges_at_or_beyond_nyquist() {
        assert!(matches!(
            Butterworth::design(FilterSpec::lowpass(50.0, 4), 100.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(Butterworth::design(FilterSpec::bandpass(13.0, 8.0, 4), 100.0).is_err());
        assert!(Butterworth::design(FilterSpec::lowpass(10.0, 0), 100.0).is_err());
    }
}
