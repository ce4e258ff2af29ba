//! Synthetic two-modality generator for dataset-free validation.
//!
//! Both couplings emit 10-second segments at 256 Hz for two streams: a
//! sinusoidal carrier whose frequency encodes information, and a square
//! envelope. Under `independent` coupling each stream alone carries the
//! class; under `gated` coupling the class is written only into the
//! carrier's frequency during the envelope's high blocks, while the low
//! blocks carry the opposite frequency — each stream is marginally
//! uninformative and only their interaction reveals the class. Per-subject
//! amplitude and offset draws create subject shift for cross-validation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{SegmentDataset, SegmentSample};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const SYNTH_RATE: u32 = 256;
pub const SYNTH_SEGMENT_LEN: usize = 2560;
const BLOCKS: usize = 8;
const BLOCK_LEN: usize = SYNTH_SEGMENT_LEN / BLOCKS;
const FREQ_CLASS0: f64 = 5.0;
const FREQ_CLASS1: f64 = 20.0;
const NOISE_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coupling {
    /// Both modalities carry the class signal on their own.
    Independent,
    /// Only the carrier-during-high-envelope interaction carries it.
    Gated,
}

impl std::str::FromStr for Coupling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "independent" => Ok(Coupling::Independent),
            "gated" => Ok(Coupling::Gated),
            other => Err(Error::config(format!(
                "unknown coupling '{other}' (expected independent or gated)"
            ))),
        }
    }
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller; u clamped away from zero.
    let u: f64 = rng.gen_range(f64::EPSILON..1.0);
    let v: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    (-2.0 * u.ln()).sqrt() * v.cos()
}

struct SubjectProfile {
    carrier_amp: f64,
    carrier_dc: f64,
    envelope_amp: f64,
    envelope_dc: f64,
}

impl SubjectProfile {
    fn draw(rng: &mut impl Rng) -> Self {
        SubjectProfile {
            carrier_amp: rng.gen_range(0.7..=1.3),
            carrier_dc: rng.gen_range(-0.3..=0.3),
            envelope_amp: rng.gen_range(0.7..=1.3),
            envelope_dc: rng.gen_range(-0.3..=0.3),
        }
    }
}

/// Frequency of each block given the class and the high-block mask.
fn block_frequencies(coupling: Coupling, label: usize, high: &[bool]) -> Vec<f64> {
    let f_class = if label == 0 { FREQ_CLASS0 } else { FREQ_CLASS1 };
    let f_other = if label == 0 { FREQ_CLASS1 } else { FREQ_CLASS0 };
    (0..BLOCKS)
        .map(|b| match coupling {
            Coupling::Independent => f_class,
            Coupling::Gated => {
                if high[b] {
                    f_class
                } else {
                    f_other
                }
            }
        })
        .collect()
}

/// Deterministically generate a balanced two-modality dataset.
pub fn synth_generate(
    seed: u64,
    n_subjects: usize,
    segs_per_subject: usize,
    coupling: Coupling,
) -> Result<SegmentDataset> {
    if n_subjects < 2 {
        return Err(Error::config(format!(
            "synthetic generation needs >= 2 subjects for cross-validation, got {n_subjects}"
        )));
    }
    if segs_per_subject == 0 {
        return Err(Error::config("segs_per_subject must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n_subjects * segs_per_subject);

    for subject_idx in 0..n_subjects {
        let profile = SubjectProfile::draw(&mut rng);
        let subject = format!("sub{:02}", subject_idx + 1);

        // Balanced labels, order shuffled per subject.
        let mut labels: Vec<usize> = (0..segs_per_subject).map(|i| i % 2).collect();
        for i in (1..labels.len()).rev() {
            let j = rng.gen_range(0..=i);
            labels.swap(i, j);
        }

        for label in labels {
            // Exactly half the blocks are high, positions random.
            let mut order: Vec<usize> = (0..BLOCKS).collect();
            for i in (1..order.len()).rev() {
                let j = rng.gen_range(0..=i);
                order.swap(i, j);
            }
            let mut high = [false; BLOCKS];
            for &b in order.iter().take(BLOCKS / 2) {
                high[b] = true;
            }

            let freqs = block_frequencies(coupling, label, &high);
            let phase0: f64 = rng.gen_range(0.0..std::f64::consts::TAU);

            // Carrier: continuous-phase sinusoid stepping through the
            // per-block frequencies.
            let mut carrier = Vec::with_capacity(SYNTH_SEGMENT_LEN);
            let mut phase = phase0;
            for i in 0..SYNTH_SEGMENT_LEN {
                let f = freqs[i / BLOCK_LEN];
                phase += std::f64::consts::TAU * f / SYNTH_RATE as f64;
                let v = profile.carrier_amp * phase.sin()
                    + profile.carrier_dc
                    + NOISE_STD * gaussian(&mut rng);
                carrier.push(v);
            }

            // Envelope: +-1 square wave; under independent coupling its
            // frequency encodes the class instead of the block mask.
            let mut envelope = Vec::with_capacity(SYNTH_SEGMENT_LEN);
            match coupling {
                Coupling::Independent => {
                    let f_env = if label == 0 { 2.0 } else { 4.0 };
                    for i in 0..SYNTH_SEGMENT_LEN {
                        let t = i as f64 / SYNTH_RATE as f64;
                        let level = if (t * f_env).fract() < 0.5 { 1.0 } else { -1.0 };
                        envelope.push(
                            profile.envelope_amp * level
                                + profile.envelope_dc
                                + NOISE_STD * gaussian(&mut rng),
                        );
                    }
                }
                Coupling::Gated => {
                    for i in 0..SYNTH_SEGMENT_LEN {
                        let level = if high[i / BLOCK_LEN] { 1.0 } else { -1.0 };
                        envelope.push(
                            profile.envelope_amp * level
                                + profile.envelope_dc
                                + NOISE_STD * gaussian(&mut rng),
                        );
                    }
                }
            }

            samples.push(SegmentSample {
                subject: subject.clone(),
                label,
                modalities: vec![
                    Tensor::new(vec![1, SYNTH_SEGMENT_LEN], carrier)?,
                    Tensor::new(vec![1, SYNTH_SEGMENT_LEN], envelope)?,
                ],
            });
        }
    }

    SegmentDataset::new(
        samples,
        vec!["carrier".into(), "envelope".into()],
        vec!["class_0".into(), "class_1".into()],
        SYNTH_SEGMENT_LEN,
        SYNTH_RATE,
    )
}

/// The generative rule inverted: read the envelope's high blocks, measure
/// the carrier's dominant frequency inside them, and vote. Used as the
/// reference ceiling for the gated construction.
pub fn gated_bayes_predict(sample: &SegmentSample) -> usize {
    let carrier = sample.modalities[0].data();
    let envelope = sample.modalities[1].data();
    let mut votes0 = 0usize;
    let mut votes1 = 0usize;
    let env_mean: f64 = envelope.iter().sum::<f64>() / envelope.len() as f64;
    for b in 0..BLOCKS {
        let range = b * BLOCK_LEN..(b + 1) * BLOCK_LEN;
        let block_env: f64 =
            envelope[range.clone()].iter().sum::<f64>() / BLOCK_LEN as f64;
        if block_env <= env_mean {
            continue; // low block: carrier frequency is the decoy there
        }
        let e0 = band_energy(&carrier[range.clone()], FREQ_CLASS0);
        let e1 = band_energy(&carrier[range], FREQ_CLASS1);
        if e0 >= e1 {
            votes0 += 1;
        } else {
            votes1 += 1;
        }
    }
    usize::from(votes1 > votes0)
}

/// Energy of a block at frequency `f` via correlation with a quadrature
/// pair.
pub fn band_energy(x: &[f64], f: f64) -> f64 {
    let (mut s, mut c) = (0.0, 0.0);
    for (i, &v) in x.iter().enumerate() {
        let t = i as f64 / SYNTH_RATE as f64;
        s += v * (std::f64::consts::TAU * f * t).sin();
        c += v * (std::f64::consts::TAU * f * t).cos();
    }
    s * s + c * c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = synth_generate(42, 2, 4, Coupling::Gated).unwrap();
        let b = synth_generate(42, 2, 4, Coupling::Gated).unwrap();
        for (x, y) in a.samples().iter().zip(b.samples()) {
            assert_eq!(x.label, y.label);
            for (tx, ty) in x.modalities.iter().zip(&y.modalities) {
                assert_eq!(tx.data(), ty.data());
            }
        }
        let c = synth_generate(43, 2, 4, Coupling::Gated).unwrap();
        assert_ne!(
            a.samples()[0].modalities[0].data(),
            c.samples()[0].modalities[0].data()
        );
    }

    #[test]
    fn classes_are_balanced() {
        for coupling in [Coupling::Independent, Coupling::Gated] {
            let ds = synth_generate(7, 4, 25, coupling).unwrap();
            let ones: usize = ds.samples().iter().map(|s| s.label).sum();
            let half = ds.len() / 2;
            assert!(
                ones.abs_diff(half) <= ds.subjects().len(),
                "{ones} of {}",
                ds.len()
            );
            // Per subject within one sample of balance.
            for subject in ds.subjects() {
                let idx = ds.indices_of_subject(&subject);
                let ones: usize = ds.labels_of(&idx).iter().sum();
                assert!(ones.abs_diff(idx.len() - ones) <= 1);
            }
        }
    }

    #[test]
    fn rejects_single_subject() {
        assert!(synth_generate(0, 1, 10, Coupling::Gated).is_err());
    }

    #[test]
    fn gated_bayes_rule_is_nearly_perfect() {
        let ds = synth_generate(11, 4, 30, Coupling::Gated).unwrap();
        let correct = ds
            .samples()
            .iter()
            .filter(|s| gated_bayes_predict(s) == s.label)
            .count();
        let acc = correct as f64 / ds.len() as f64;
        assert!(acc > 0.95, "reference rule accuracy {acc}");
    }

    #[test]
    fn shapes_and_rate() {
        let ds = synth_generate(3, 2, 2, Coupling::Independent).unwrap();
        assert_eq!(ds.segment_length, 2560);
        assert_eq!(ds.sample_rate, 256);
        assert_eq!(ds.in_channels(), vec![1, 1]);
        assert_eq!(ds.modality_names, vec!["carrier", "envelope"]);
    }
}
