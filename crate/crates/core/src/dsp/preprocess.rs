//! Per-modality cleaning: the filter table, user-specific z-score
//! normalization, resampling to the training rate, and the tonic/phasic
//! split of skin-conductance signals.
//!
//! Order of operations: filter at the native rate (so cutoffs are exact),
//! resample to the target rate, then z-score so normalization holds exactly
//! at the rate the models consume. Skin conductance is additionally split
//! after normalization into a slow tonic level and a fast phasic response
//! via a 0.05 Hz highpass, emitted as two channels.

use serde::{Deserialize, Serialize};

use super::filter::{design_butterworth, filtfilt, max_pole_radius, FilterSpec};
use super::resample::resample;
use crate::error::{Error, Result};

/// Signal kinds the pipeline understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    Ecg,
    Eda,
    Bvp,
    Resp,
    St,
}

impl Modality {
    pub const ALL: [Modality; 5] = [
        Modality::Ecg,
        Modality::Eda,
        Modality::Bvp,
        Modality::Resp,
        Modality::St,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Modality::Ecg => "ECG",
            Modality::Eda => "EDA",
            Modality::Bvp => "BVP",
            Modality::Resp => "RESP",
            Modality::St => "ST",
        }
    }

    /// Channels this modality expands to after preprocessing.
    pub fn channel_count(&self) -> usize {
        match self {
            Modality::Eda => 2, // tonic + phasic
            _ => 1,
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.name())
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ECG" => Ok(Modality::Ecg),
            "EDA" => Ok(Modality::Eda),
            "BVP" => Ok(Modality::Bvp),
            "RESP" => Ok(Modality::Resp),
            "ST" => Ok(Modality::St),
            other => Err(Error::format(format!(
                "unknown modality '{other}' (expected one of ECG, EDA, BVP, RESP, ST)"
            ))),
        }
    }
}

/// Cutoff used to separate tonic and phasic skin conductance.
pub const EDA_SPLIT_CUTOFF_HZ: f64 = 0.05;

/// Filter order applied everywhere unless a filter needs special care.
pub const DEFAULT_FILTER_ORDER: usize = 4;

/// Order for the very low tonic/phasic split, kept small to limit the
/// transient length.
pub const EDA_SPLIT_ORDER: usize = 2;

/// The cleaning filters for a modality at a given native rate.
///
/// ECG: bandpass 5-15 Hz. EDA: lowpass 3 Hz. BVP: bandpass 0.5-8 Hz.
/// RESP: bandpass 0.1-0.35 Hz. ST: highpass 0.0001 Hz cascaded with a
/// 10 Hz lowpass; when the highpass poles are too close to the unit circle
/// the cascade falls back to the lowpass alone.
pub fn modality_filters(modality: Modality, fs: f64, order: usize) -> Result<Vec<FilterSpec>> {
    let specs = match modality {
        Modality::Ecg => vec![FilterSpec::bandpass(5.0, 15.0, order, fs)],
        Modality::Eda => vec![FilterSpec::lowpass(3.0, order, fs)],
        Modality::Bvp => vec![FilterSpec::bandpass(0.5, 8.0, order, fs)],
        Modality::Resp => vec![FilterSpec::bandpass(0.1, 0.35, order, fs)],
        Modality::St => {
            let hp = FilterSpec::highpass(0.0001, order, fs);
            let lp = FilterSpec::lowpass(10.0, order, fs);
            if max_pole_radius(&hp)? > 1.0 - 1e-9 {
                vec![lp]
            } else {
                vec![hp, lp]
            }
        }
    };
    for s in &specs {
        s.validate()?;
    }
    Ok(specs)
}

/// (x - mean) / population std; a degenerate signal (std below 1e-12)
/// becomes all zeros.
pub fn zscore(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - mean) / std).collect()
}

/// Parameters recorded into archive manifests for provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessParams {
    pub filter_order: usize,
    pub target_rate: u32,
    pub window_s: f64,
    pub overlap: f64,
    pub eda_split_cutoff_hz: f64,
    pub eda_split_order: usize,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        PreprocessParams {
            filter_order: DEFAULT_FILTER_ORDER,
            target_rate: 256,
            window_s: 10.0,
            overlap: 0.6,
            eda_split_cutoff_hz: EDA_SPLIT_CUTOFF_HZ,
            eda_split_order: EDA_SPLIT_ORDER,
        }
    }
}

/// Clean one recording: filter at the native rate, resample to
/// `target_rate`, z-score, and split skin conductance into tonic and
/// phasic channels. Returns one or more equally long channels.
pub fn preprocess_modality(
    samples: &[f64],
    modality: Modality,
    native_rate: u32,
    params: &PreprocessParams,
) -> Result<Vec<Vec<f64>>> {
    let mut cleaned = samples.to_vec();
    for spec in modality_filters(modality, native_rate as f64, params.filter_order)? {
        let sos = design_butterworth(&spec)?;
        cleaned = filtfilt(&sos, &cleaned)?;
    }
    let resampled = resample(&cleaned, native_rate, params.target_rate)?;
    let normalized = zscore(&resampled);

    if modality == Modality::Eda {
        let hp = FilterSpec::highpass(
            params.eda_split_cutoff_hz,
            params.eda_split_order,
            params.target_rate as f64,
        );
        let sos = design_butterworth(&hp)?;
        let phasic = filtfilt(&sos, &normalized)?;
        let tonic: Vec<f64> = normalized
            .iter()
            .zip(&phasic)
            .map(|(x, p)| x - p)
            .collect();
        Ok(vec![tonic, phasic])
    } else {
        Ok(vec![normalized])
    }
}
