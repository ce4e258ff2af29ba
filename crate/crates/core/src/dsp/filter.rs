//! Butterworth filter design and zero-phase application.
//!
//! Filters are designed as analog Butterworth prototypes, frequency-warped,
//! band-transformed in the zero-pole-gain domain, bilinear-transformed, and
//! emitted as cascaded second-order sections. Application is zero-phase:
//! forward-backward filtering with odd-reflection edge padding and
//! steady-state initial conditions, so constants pass through exactly and
//! in-band sinusoids keep their phase.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Lowpass,
    Highpass,
    Bandpass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub order: usize,
    /// One cutoff for low/highpass, [low, high] for bandpass.
    pub cutoff_hz: Vec<f64>,
    pub sample_rate: f64,
}

impl FilterSpec {
    pub fn lowpass(cutoff: f64, order: usize, fs: f64) -> Self {
        FilterSpec {
            kind: FilterKind::Lowpass,
            order,
            cutoff_hz: vec![cutoff],
            sample_rate: fs,
        }
    }

    pub fn highpass(cutoff: f64, order: usize, fs: f64) -> Self {
        FilterSpec {
            kind: FilterKind::Highpass,
            order,
            cutoff_hz: vec![cutoff],
            sample_rate: fs,
        }
    }

    pub fn bandpass(low: f64, high: f64, order: usize, fs: f64) -> Self {
        FilterSpec {
            kind: FilterKind::Bandpass,
            order,
            cutoff_hz: vec![low, high],
            sample_rate: fs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::dsp("filter order must be >= 1"));
        }
        let nyquist = self.sample_rate / 2.0;
        if !(self.sample_rate > 0.0) {
            return Err(Error::dsp("sample rate must be positive"));
        }
        let expected = match self.kind {
            FilterKind::Bandpass => 2,
            _ => 1,
        };
        if self.cutoff_hz.len() != expected {
            return Err(Error::dsp(format!(
                "{:?} needs {expected} cutoff(s), got {}",
                self.kind,
                self.cutoff_hz.len()
            )));
        }
        for &f in &self.cutoff_hz {
            if !(f > 0.0) || f >= nyquist {
                return Err(Error::dsp(format!(
                    "cutoff {f} Hz outside (0, {nyquist}) — Nyquist is {nyquist} Hz"
                )));
            }
        }
        if self.kind == FilterKind::Bandpass && self.cutoff_hz[0] >= self.cutoff_hz[1] {
            return Err(Error::dsp(format!(
                "bandpass low {} must be below high {}",
                self.cutoff_hz[0], self.cutoff_hz[1]
            )));
        }
        Ok(())
    }
}

/// One biquad: numerator [b0, b1, b2], denominator [1, a1, a2].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Section {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

/// Cascade of second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Section>,
}

impl Sos {
    /// Complex response at frequency `f` Hz for sampling rate `fs`.
    pub fn response(&self, f: f64, fs: f64) -> Complex64 {
        let w = 2.0 * PI * f / fs;
        let z1 = Complex64::new(0.0, -w).exp(); // z^-1
        let z2 = z1 * z1;
        let mut h = Complex64::new(1.0, 0.0);
        for s in &self.sections {
            let num = Complex64::new(s.b[0], 0.0) + z1 * s.b[1] + z2 * s.b[2];
            let den = Complex64::new(1.0, 0.0) + z1 * s.a[0] + z2 * s.a[1];
            h *= num / den;
        }
        h
    }

    pub fn gain_at(&self, f: f64, fs: f64) -> f64 {
        self.response(f, fs).norm()
    }

    /// Total order counted as poles across sections.
    pub fn order(&self) -> usize {
        self.sections
            .iter()
            .map(|s| if s.a[1] != 0.0 { 2 } else { 1 })
            .sum()
    }
}

struct Zpk {
    zeros: Vec<Complex64>,
    poles: Vec<Complex64>,
    gain: f64,
}

/// Left-half-plane poles of the analog Butterworth prototype, unit cutoff.
fn butterworth_prototype(order: usize) -> Vec<Complex64> {
    (0..order)
        .map(|k| {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            Complex64::new(theta.cos(), theta.sin())
        })
        .collect()
}

fn prewarp(f: f64, fs: f64) -> f64 {
    2.0 * fs * (PI * f / fs).tan()
}

fn lp_to_lp(poles: Vec<Complex64>, wo: f64) -> Zpk {
    let n = poles.len();
    Zpk {
        zeros: Vec::new(),
        poles: poles.into_iter().map(|p| p * wo).collect(),
        gain: wo.powi(n as i32),
    }
}

fn lp_to_hp(poles: Vec<Complex64>, wo: f64) -> Zpk {
    let n = poles.len();
    // H_hp(s) = H_lp(wo / s); the prototype has unit gain at DC, so the
    // transformed gain is 1 / prod(-p).
    let denom: Complex64 = poles.iter().map(|p| -p).product();
    let new_poles: Vec<Complex64> = poles.iter().map(|p| wo / p).collect();
    Zpk {
        zeros: vec![Complex64::new(0.0, 0.0); n],
        poles: new_poles,
        gain: (Complex64::new(1.0, 0.0) / denom).re,
    }
}

fn lp_to_bp(poles: Vec<Complex64>, wo: f64, bw: f64) -> Zpk {
    let n = poles.len();
    let mut new_poles = Vec::with_capacity(2 * n);
    for p in poles {
        let scaled = p * bw / 2.0;
        let disc = (scaled * scaled - Complex64::new(wo * wo, 0.0)).sqrt();
        new_poles.push(scaled + disc);
        new_poles.push(scaled - disc);
    }
    Zpk {
        zeros: vec![Complex64::new(0.0, 0.0); n],
        poles: new_poles,
        gain: bw.powi(n as i32),
    }
}

fn bilinear(zpk: Zpk, fs: f64) -> Zpk {
    let fs2 = Complex64::new(2.0 * fs, 0.0);
    let degree = zpk.poles.len() - zpk.zeros.len();
    let num: Complex64 = zpk.zeros.iter().map(|z| fs2 - z).product();
    let den: Complex64 = zpk.poles.iter().map(|p| fs2 - p).product();
    let mut zeros: Vec<Complex64> = zpk.zeros.iter().map(|z| (fs2 + z) / (fs2 - z)).collect();
    zeros.extend(std::iter::repeat(Complex64::new(-1.0, 0.0)).take(degree));
    let poles: Vec<Complex64> = zpk.poles.iter().map(|p| (fs2 + p) / (fs2 - p)).collect();
    Zpk {
        zeros,
        poles,
        gain: zpk.gain * (num / den).re,
    }
}

/// Group complex values into conjugate pairs plus real leftovers.
fn conjugate_pairs(values: &[Complex64]) -> (Vec<(Complex64, Complex64)>, Vec<f64>) {
    let mut pairs = Vec::new();
    let mut reals = Vec::new();
    let mut used = vec![false; values.len()];
    for i in 0..values.len() {
        if used[i] {
            continue;
        }
        if values[i].im.abs() < 1e-10 {
            reals.push(values[i].re);
            used[i] = true;
            continue;
        }
        let mut matched = false;
        for j in i + 1..values.len() {
            if !used[j] && (values[j] - values[i].conj()).norm() < 1e-8 {
                pairs.push((values[i], values[j]));
                used[i] = true;
                used[j] = true;
                matched = true;
                break;
            }
        }
        if !matched {
            // Orphan complex value: treat as a real of the same magnitude.
            reals.push(values[i].re);
            used[i] = true;
        }
    }
    (pairs, reals)
}

fn zpk_to_sos(zpk: Zpk) -> Sos {
    let (pole_pairs, real_poles) = conjugate_pairs(&zpk.poles);
    let (zero_pairs, mut real_zeros) = conjugate_pairs(&zpk.zeros);
    // All designs here produce real digital zeros (at +-1); complex zero
    // pairs would only arise from numerical noise.
    for (z, _) in zero_pairs {
        real_zeros.push(z.re);
        real_zeros.push(z.re);
    }
    // Alternate +1 / -1 picks so bandpass sections stay balanced.
    real_zeros.sort_by(|a, b| b.partial_cmp(a).unwrap());

    fn take_two_zeros(real_zeros: &mut Vec<f64>) -> (f64, f64) {
        let hi = if real_zeros.is_empty() {
            f64::NAN
        } else {
            real_zeros.remove(0)
        };
        let lo = if real_zeros.is_empty() {
            f64::NAN
        } else {
            real_zeros.pop().unwrap()
        };
        (hi, lo)
    }

    let mut sections = Vec::new();
    for (p, q) in pole_pairs {
        let a1 = -(p + q).re;
        let a2 = (p * q).re;
        let (z1, z2) = take_two_zeros(&mut real_zeros);
        let b = if z1.is_nan() {
            [1.0, 0.0, 0.0]
        } else if z2.is_nan() {
            [1.0, -z1, 0.0]
        } else {
            [1.0, -(z1 + z2), z1 * z2]
        };
        sections.push(Section { b, a: [a1, a2] });
    }
    let mut real_iter = real_poles.into_iter();
    while let Some(p) = real_iter.next() {
        match real_iter.next() {
            Some(q) => {
                let (z1, z2) = take_two_zeros(&mut real_zeros);
                let b = if z1.is_nan() {
                    [1.0, 0.0, 0.0]
                } else if z2.is_nan() {
                    [1.0, -z1, 0.0]
                } else {
                    [1.0, -(z1 + z2), z1 * z2]
                };
                sections.push(Section {
                    b,
                    a: [-(p + q), p * q],
                });
            }
            None => {
                let z1 = if real_zeros.is_empty() {
                    f64::NAN
                } else {
                    real_zeros.remove(0)
                };
                let b = if z1.is_nan() {
                    [1.0, 0.0, 0.0]
                } else {
                    [1.0, -z1, 0.0]
                };
                sections.push(Section { b, a: [-p, 0.0] });
            }
        }
    }

    // Fold the overall gain into the first section.
    if let Some(first) = sections.first_mut() {
        for b in first.b.iter_mut() {
            *b *= zpk.gain;
        }
    }
    Sos { sections }
}

fn design_zpk(spec: &FilterSpec) -> Result<Zpk> {
    spec.validate()?;
    let fs = spec.sample_rate;
    let prototype = butterworth_prototype(spec.order);
    let analog = match spec.kind {
        FilterKind::Lowpass => lp_to_lp(prototype, prewarp(spec.cutoff_hz[0], fs)),
        FilterKind::Highpass => lp_to_hp(prototype, prewarp(spec.cutoff_hz[0], fs)),
        FilterKind::Bandpass => {
            let w1 = prewarp(spec.cutoff_hz[0], fs);
            let w2 = prewarp(spec.cutoff_hz[1], fs);
            lp_to_bp(prototype, (w1 * w2).sqrt(), w2 - w1)
        }
    };
    Ok(bilinear(analog, fs))
}

/// Largest pole magnitude of the designed digital filter. Values at or
/// above 1 - 1e-9 flag a numerically fragile design.
pub fn max_pole_radius(spec: &FilterSpec) -> Result<f64> {
    let zpk = design_zpk(spec)?;
    Ok(zpk
        .poles
        .iter()
        .map(|p| p.norm())
        .fold(0.0f64, |a, b| a.max(b)))
}

/// Design the digital Butterworth cascade for a spec. Lowpass designs are
/// normalized to exact unit DC gain.
pub fn design_butterworth(spec: &FilterSpec) -> Result<Sos> {
    let zpk = design_zpk(spec)?;
    let mut sos = zpk_to_sos(zpk);
    if spec.kind == FilterKind::Lowpass {
        let dc = sos.gain_at(0.0, spec.sample_rate);
        if dc > 0.0 {
            if let Some(first) = sos.sections.first_mut() {
                for b in first.b.iter_mut() {
                    *b /= dc;
                }
            }
        }
    }
    Ok(sos)
}

// ---------------------------------------------------------------------------
// Zero-phase application
// ---------------------------------------------------------------------------

/// Per-section steady-state state for a unit-step input (transposed
/// direct-form II). Scaling by the first input sample removes the startup
/// transient for constant signals entirely.
fn section_step_state(s: &Section) -> ([f64; 2], f64) {
    let gain = (s.b[0] + s.b[1] + s.b[2]) / (1.0 + s.a[0] + s.a[1]);
    let s2 = s.b[2] - s.a[1] * gain;
    let s1 = s.b[1] - s.a[0] * gain + s2;
    ([s1, s2], gain)
}

/// Single forward pass through the cascade with steady-state initialization.
pub fn sosfilt(sos: &Sos, x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    let mut scale = if x.is_empty() { 0.0 } else { x[0] };
    for s in &sos.sections {
        let (zi, gain) = section_step_state(s);
        let mut s1 = zi[0] * scale;
        let mut s2 = zi[1] * scale;
        for v in y.iter_mut() {
            let xin = *v;
            let out = s.b[0] * xin + s1;
            s1 = s.b[1] * xin - s.a[0] * out + s2;
            s2 = s.b[2] * xin - s.a[1] * out;
            *v = out;
        }
        scale *= gain;
    }
    y
}

/// Zero-phase forward-backward filtering with odd-reflection padding.
/// Output length equals input length. Requires the input to be longer
/// than 3x the total filter order.
pub fn filtfilt(sos: &Sos, x: &[f64]) -> Result<Vec<f64>> {
    let order = sos.order();
    let min_len = 3 * order + 1;
    if x.len() <= min_len {
        return Err(Error::dsp(format!(
            "input of {} samples too short for zero-phase filtering (needs > {min_len})",
            x.len()
        )));
    }
    let padlen = (3 * (2 * sos.sections.len() + 1)).min(x.len() - 1);
    let n = x.len();
    let mut ext = Vec::with_capacity(n + 2 * padlen);
    for i in (1..=padlen).rev() {
        ext.push(2.0 * x[0] - x[i]);
    }
    ext.extend_from_slice(x);
    for i in 1..=padlen {
        ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
    }

    let mut y = sosfilt(sos, &ext);
    y.reverse();
    let mut y = sosfilt(sos, &y);
    y.reverse();
    Ok(y[padlen..padlen + n].to_vec())
}
