//! Polyphase rational resampling with a Kaiser-windowed sinc anti-alias
//! filter cut at 0.9x the narrower Nyquist band.

use crate::error::{Error, Result};
use std::f64::consts::PI;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Modified Bessel function of the first kind, order zero (series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half_sq = (x / 2.0) * (x / 2.0);
    for k in 1..64 {
        term *= half_sq / (k * k) as f64;
        sum += term;
        if term < sum * 1e-18 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Rational resampling of `x` from `fs_in` to `fs_out` Hz. The output has
/// round(len * fs_out / fs_in) samples; equal rates return the input
/// unchanged.
pub fn resample(x: &[f64], fs_in: u32, fs_out: u32) -> Result<Vec<f64>> {
    if fs_in == 0 || fs_out == 0 {
        return Err(Error::dsp("sample rates must be positive"));
    }
    if fs_in == fs_out {
        return Ok(x.to_vec());
    }
    if x.is_empty() {
        return Ok(Vec::new());
    }
    let g = gcd(fs_in as u64, fs_out as u64);
    let up = (fs_out as u64 / g) as usize;
    let down = (fs_in as u64 / g) as usize;

    // Anti-alias cutoff at the upsampled rate fs_in * up.
    let fs_up = fs_in as f64 * up as f64;
    let cutoff_hz = (fs_in.min(fs_out) as f64 / 2.0) * 0.9;
    let fc = cutoff_hz / fs_up; // cycles per high-rate sample

    let half = 10 * up.max(down);
    let taps = 2 * half + 1;
    let beta = 5.0;
    let denom = bessel_i0(beta);
    let mut h: Vec<f64> = (0..taps)
        .map(|i| {
            let n = i as f64 - half as f64;
            let window = {
                let r = n / half as f64;
                bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom
            };
            up as f64 * 2.0 * fc * sinc(2.0 * fc * n) * window
        })
        .collect();

    // Normalize every polyphase branch to exact unit DC gain so constants
    // pass through unchanged regardless of output phase.
    for phase in 0..up {
        let sum: f64 = h.iter().skip(phase).step_by(up).sum();
        if sum.abs() > 1e-12 {
            for v in h.iter_mut().skip(phase).step_by(up) {
                *v /= sum;
            }
        }
    }

    let n_out = ((x.len() as f64) * fs_out as f64 / fs_in as f64).round() as usize;
    let mut y = vec![0.0; n_out];
    let center = half as isize;
    for (t, out) in y.iter_mut().enumerate() {
        // High-rate position of this output sample; taps reach input
        // samples whose zero-stuffed index falls inside the kernel support.
        // Reads past the ends replicate the edge samples.
        let pos = (t * down) as isize + center;
        let i_min = ((pos - (taps as isize - 1)) + (up as isize - 1)).div_euclid(up as isize);
        let i_max = pos.div_euclid(up as isize);
        let mut acc = 0.0;
        let mut i = i_min;
        while i <= i_max {
            let offset = (pos - i * up as isize) as usize;
            let sample = x[i.clamp(0, x.len() as isize - 1) as usize];
            acc += h[offset] * sample;
            i += 1;
        }
        *out = acc;
    }
    Ok(y)
}
