//! Fixed-duration windowing with overlap, and per-window label assignment.
//!
//! Windows start at offsets 0, hop, 2*hop, ...; the trailing partial window
//! is discarded. A window takes the raw label covering the plurality of its
//! samples and is dropped on a tie or when no labeled samples fall inside.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Labeled half-open sample interval [start, end).
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LabelInterval {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

/// Window and hop sizes in samples for a given rate.
pub fn window_geometry(fs: u32, window_s: f64, overlap: f64) -> Result<(usize, usize)> {
    if !(window_s > 0.0) {
        return Err(Error::config("window length must be positive"));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::config("overlap must lie in [0, 1)"));
    }
    let win = (window_s * fs as f64).round() as usize;
    let hop = (window_s * (1.0 - overlap) * fs as f64).round() as usize;
    if win == 0 || hop == 0 {
        return Err(Error::config("window/hop rounded to zero samples"));
    }
    Ok((win, hop))
}

/// Start offsets of every full window in a signal of `len` samples.
/// A too-short signal yields no offsets rather than an error, so
/// per-subject pipelines degrade gracefully.
pub fn window_offsets(len: usize, win: usize, hop: usize) -> Vec<usize> {
    if len < win {
        return Vec::new();
    }
    let count = (len - win) / hop + 1;
    (0..count).map(|i| i * hop).collect()
}

/// Slice a signal into windows. Short signals produce an empty list.
pub fn window_segments(
    x: &[f64],
    fs: u32,
    window_s: f64,
    overlap: f64,
) -> Result<Vec<Vec<f64>>> {
    let (win, hop) = window_geometry(fs, window_s, overlap)?;
    Ok(window_offsets(x.len(), win, hop)
        .into_iter()
        .map(|off| x[off..off + win].to_vec())
        .collect())
}

/// Raw label covering the plurality of a window's samples; None on a tie
/// or when nothing inside the window is labeled.
pub fn window_label<'a>(
    intervals: &'a [LabelInterval],
    offset: usize,
    win: usize,
) -> Option<&'a str> {
    let lo = offset;
    let hi = offset + win;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for iv in intervals {
        let s = iv.start.max(lo);
        let e = iv.end.min(hi);
        if e > s {
            *counts.entry(iv.label.as_str()).or_insert(0) += e - s;
        }
    }
    let best = counts.iter().map(|(_, &c)| c).max()?;
    let mut winners = counts.iter().filter(|(_, &c)| c == best);
    let (label, _) = winners.next()?;
    if winners.next().is_some() {
        None // tie
    } else {
        Some(label)
    }
}

/// Validate label intervals: in-bounds and non-overlapping.
pub fn validate_intervals(intervals: &[LabelInterval], len: usize) -> Result<()> {
    let mut sorted: Vec<_> = intervals.iter().collect();
    sorted.sort_by_key(|iv| iv.start);
    let mut prev_end = 0usize;
    for (i, iv) in sorted.iter().enumerate() {
        if iv.start >= iv.end {
            return Err(Error::format(format!(
                "label interval '{}' is empty or inverted ({}..{})",
                iv.label, iv.start, iv.end
            )));
        }
        if iv.end > len {
            return Err(Error::format(format!(
                "label interval '{}' ends at {} beyond signal length {len}",
                iv.label, iv.end
            )));
        }
        if i > 0 && iv.start < prev_end {
            return Err(Error::format(format!(
                "label interval '{}' overlaps its predecessor",
                iv.label
            )));
        }
        prev_end = iv.end;
    }
    Ok(())
}

/// Rescale intervals from one sample rate to another (after resampling).
pub fn rescale_intervals(
    intervals: &[LabelInterval],
    fs_in: u32,
    fs_out: u32,
) -> Vec<LabelInterval> {
    let ratio = fs_out as f64 / fs_in as f64;
    intervals
        .iter()
        .map(|iv| LabelInterval {
            start: (iv.start as f64 * ratio).round() as usize,
            end: (iv.end as f64 * ratio).round() as usize,
            label: iv.label.clone(),
        })
        .collect()
}
