//! The windowed, preprocessed multimodal dataset consumed by training.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// One classification unit: synchronized per-modality segments.
#[derive(Debug, Clone)]
pub struct SegmentSample {
    pub subject: String,
    pub label: usize,
    /// One [C, L] tensor per modality, in dataset modality order.
    pub modalities: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct SegmentDataset {
    samples: Vec<SegmentSample>,
    pub modality_names: Vec<String>,
    pub class_names: Vec<String>,
    pub segment_length: usize,
    pub sample_rate: u32,
    /// Provenance manifest carried over from the archive, if any.
    pub manifest: Option<super::archive::ArchiveManifest>,
}

impl SegmentDataset {
    pub fn new(
        samples: Vec<SegmentSample>,
        modality_names: Vec<String>,
        class_names: Vec<String>,
        segment_length: usize,
        sample_rate: u32,
    ) -> Result<Self> {
        let ds = SegmentDataset {
            samples,
            modality_names,
            class_names,
            segment_length,
            sample_rate,
            manifest: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::format("dataset has no samples"));
        }
        if self.class_names.len() < 2 {
            return Err(Error::format("dataset needs at least 2 classes"));
        }
        let num_classes = self.class_names.len();
        let n_mod = self.modality_names.len();
        let mut channel_counts: Option<Vec<usize>> = None;
        for (i, s) in self.samples.iter().enumerate() {
            if s.modalities.len() != n_mod {
                return Err(Error::format(format!(
                    "sample {i} has {} modalities, dataset declares {n_mod}",
                    s.modalities.len()
                )));
            }
            if s.label >= num_classes {
                return Err(Error::format(format!(
                    "sample {i} label {} out of range for {num_classes} classes",
                    s.label
                )));
            }
            let counts: Vec<usize> = s
                .modalities
                .iter()
                .map(|t| {
                    if t.ndim() != 2 || t.shape()[1] != self.segment_length {
                        Err(Error::format(format!(
                            "sample {i} segment shape {:?}, expected [C, {}]",
                            t.shape(),
                            self.segment_length
                        )))
                    } else {
                        Ok(t.shape()[0])
                    }
                })
                .collect::<Result<_>>()?;
            match &channel_counts {
                None => channel_counts = Some(counts),
                Some(expect) => {
                    if expect != &counts {
                        return Err(Error::format(format!(
                            "sample {i} channel counts {counts:?} differ from {expect:?}"
                        )));
                    }
                }
            }
        }
        if self.subjects().len() < 2 {
            return Err(Error::format(
                "dataset holds a single subject; leave-one-subject-out needs at least 2",
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[SegmentSample] {
        &self.samples
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Distinct subjects in first-appearance-stable sorted order.
    pub fn subjects(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.samples.iter().map(|s| s.subject.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    /// Per-modality channel counts (identical across samples).
    pub fn in_channels(&self) -> Vec<usize> {
        self.samples[0]
            .modalities
            .iter()
            .map(|t| t.shape()[0])
            .collect()
    }

    pub fn indices_of_subject(&self, subject: &str) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| self.samples[i].subject == subject)
            .collect()
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.samples[i].label).collect()
    }

    /// Assemble [B, C, L] tensors, one per modality, for the given sample
    /// indices.
    pub fn batch(&self, indices: &[usize]) -> Result<Vec<Tensor>> {
        if indices.is_empty() {
            return Err(Error::config("empty batch"));
        }
        let n_mod = self.modality_names.len();
        let channels = self.in_channels();
        let l = self.segment_length;
        let mut out = Vec::with_capacity(n_mod);
        for m in 0..n_mod {
            let c = channels[m];
            let mut data = vec![0.0; indices.len() * c * l];
            for (bi, &idx) in indices.iter().enumerate() {
                let sample = self
                    .samples
                    .get(idx)
                    .ok_or_else(|| Error::config(format!("sample index {idx} out of range")))?;
                data[bi * c * l..(bi + 1) * c * l].copy_from_slice(sample.modalities[m].data());
            }
            out.push(Tensor::new(vec![indices.len(), c, l], data)?);
        }
        Ok(out)
    }

    /// Restrict to a subset of modalities by name (builds views for
    /// uni-modal baselines).
    pub fn select_modalities(&self, names: &[String]) -> Result<SegmentDataset> {
        let indices: Vec<usize> = names
            .iter()
            .map(|n| {
                self.modality_names
                    .iter()
                    .position(|m| m == n)
                    .ok_or_else(|| {
                        Error::config(format!(
                            "modality '{n}' not in dataset {:?}",
                            self.modality_names
                        ))
                    })
            })
            .collect::<Result<_>>()?;
        let samples = self
            .samples
            .iter()
            .map(|s| SegmentSample {
                subject: s.subject.clone(),
                label: s.label,
                modalities: indices.iter().map(|&i| s.modalities[i].clone()).collect(),
            })
            .collect();
        Ok(SegmentDataset {
            samples,
            modality_names: names.to_vec(),
            class_names: self.class_names.clone(),
            segment_length: self.segment_length,
            sample_rate: self.sample_rate,
            manifest: self.manifest.clone(),
        })
    }

    pub(crate) fn with_manifest(mut self, manifest: super::archive::ArchiveManifest) -> Self {
        self.manifest = Some(manifest);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_sample(subject: &str, label: usize, value: f64) -> SegmentSample {
        SegmentSample {
            subject: subject.into(),
            label,
            modalities: vec![
                Tensor::full(&[1, 8], value),
                Tensor::full(&[2, 8], -value),
            ],
        }
    }

    fn tiny_dataset() -> SegmentDataset {
        SegmentDataset::new(
            vec![
                tiny_sample("s1", 0, 1.0),
                tiny_sample("s1", 1, 2.0),
                tiny_sample("s2", 0, 3.0),
                tiny_sample("s2", 1, 4.0),
            ],
            vec!["a".into(), "b".into()],
            vec!["c0".into(), "c1".into()],
            8,
            256,
        )
        .unwrap()
    }

    #[test]
    fn batch_shapes() {
        let ds = tiny_dataset();
        let batch = ds.batch(&[0, 2, 3]).unwrap();
        assert_eq!(batch[0].shape(), &[3, 1, 8]);
        assert_eq!(batch[1].shape(), &[3, 2, 8]);
        assert_eq!(batch[0].data()[0], 1.0);
        assert_eq!(batch[0].data()[8], 3.0);
    }

    #[test]
    fn single_subject_is_rejected() {
        let err = SegmentDataset::new(
            vec![tiny_sample("s1", 0, 1.0), tiny_sample("s1", 1, 2.0)],
            vec!["a".into(), "b".into()],
            vec!["c0".into(), "c1".into()],
            8,
            256,
        )
        .unwrap_err();
        assert!(err.to_string().contains("single subject"));
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let err = SegmentDataset::new(
            vec![tiny_sample("s1", 0, 1.0), tiny_sample("s2", 2, 2.0)],
            vec!["a".into(), "b".into()],
            vec!["c0".into(), "c1".into()],
            8,
            256,
        )
        .unwrap_err();
        assert!(err.to_string().contains("out of range"));
    }

    #[test]
    fn modality_selection_builds_unimodal_view() {
        let ds = tiny_dataset();
        let uni = ds.select_modalities(&["b".into()]).unwrap();
        assert_eq!(uni.modality_names, vec!["b".to_string()]);
        assert_eq!(uni.in_channels(), vec![2]);
        assert!(ds.select_modalities(&["z".into()]).is_err());
    }

    #[test]
    fn subjects_are_sorted_unique() {
        let ds = tiny_dataset();
        assert_eq!(ds.subjects(), vec!["s1".to_string(), "s2".to_string()]);
    }
}
