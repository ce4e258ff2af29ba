//! Segment archive: the binary container produced by preprocessing and
//! consumed by training, plus its provenance manifest.
//!
//! Layout: magic `ATXSEG01`, version, manifest JSON, then per-sample
//! records (subject, label, per-modality shapes and little-endian doubles).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{SegmentDataset, SegmentSample};
use crate::dsp::PreprocessParams;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const ARCHIVE_MAGIC: &[u8; 8] = b"ATXSEG01";
const ARCHIVE_VERSION: u32 = 1;

/// Everything needed to reproduce an archive, embedded in the file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub modality_names: Vec<String>,
    pub class_names: Vec<String>,
    pub label_scheme: String,
    pub sample_rate: u32,
    pub segment_length: usize,
    pub preprocess: Option<PreprocessParams>,
    /// Windows dropped per reason ("tie", "unlabeled", "excluded:<label>").
    #[serde(default)]
    pub exclusions: BTreeMap<String, usize>,
    /// Kept segments per subject.
    #[serde(default)]
    pub subject_segments: BTreeMap<String, usize>,
    /// Free-form generator/tool description.
    #[serde(default)]
    pub source: String,
}

impl ArchiveManifest {
    pub fn for_dataset(ds: &SegmentDataset, label_scheme: &str, source: &str) -> Self {
        let mut subject_segments = BTreeMap::new();
        for s in ds.samples() {
            *subject_segments.entry(s.subject.clone()).or_insert(0) += 1;
        }
        ArchiveManifest {
            modality_names: ds.modality_names.clone(),
            class_names: ds.class_names.clone(),
            label_scheme: label_scheme.to_string(),
            sample_rate: ds.sample_rate,
            segment_length: ds.segment_length,
            preprocess: None,
            exclusions: BTreeMap::new(),
            subject_segments,
            source: source.to_string(),
        }
    }
}

/// Write a dataset and its manifest as one archive file.
pub fn write_archive(path: &Path, ds: &SegmentDataset, manifest: &ArchiveManifest) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(ARCHIVE_MAGIC)?;
    w.write_all(&ARCHIVE_VERSION.to_le_bytes())?;
    let manifest_json = serde_json::to_vec_pretty(manifest)
        .map_err(|e| Error::format(format!("manifest: {e}")))?;
    w.write_all(&(manifest_json.len() as u64).to_le_bytes())?;
    w.write_all(&manifest_json)?;

    w.write_all(&(ds.len() as u64).to_le_bytes())?;
    for sample in ds.samples() {
        write_str(&mut w, &sample.subject)?;
        w.write_all(&(sample.label as u32).to_le_bytes())?;
        w.write_all(&(sample.modalities.len() as u32).to_le_bytes())?;
        for (name, tensor) in ds.modality_names.iter().zip(&sample.modalities) {
            write_str(&mut w, name)?;
            let shape = tensor.shape();
            w.write_all(&(shape[0] as u32).to_le_bytes())?;
            w.write_all(&(shape[1] as u64).to_le_bytes())?;
            for v in tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Load and validate a segment archive; the manifest rides along for
/// provenance.
pub fn load_segments(path: &Path) -> Result<SegmentDataset> {
    let origin = path.display().to_string();
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format(format!("{origin}: not a segment archive")))?;
    if &magic != ARCHIVE_MAGIC {
        return Err(Error::format(format!("{origin}: not a segment archive")));
    }
    let version = read_u32(&mut r, &origin)?;
    if version != ARCHIVE_VERSION {
        return Err(Error::format(format!(
            "{origin}: archive version {version}, expected {ARCHIVE_VERSION}"
        )));
    }
    let manifest_len = read_u64(&mut r, &origin)? as usize;
    if manifest_len > 1 << 26 {
        return Err(Error::format(format!("{origin}: unreasonable manifest size")));
    }
    let mut manifest_buf = vec![0u8; manifest_len];
    r.read_exact(&mut manifest_buf)
        .map_err(|_| Error::format(format!("{origin}: truncated manifest")))?;
    let manifest: ArchiveManifest = serde_json::from_slice(&manifest_buf)
        .map_err(|e| Error::format(format!("{origin}: bad manifest: {e}")))?;

    let n_samples = read_u64(&mut r, &origin)? as usize;
    let mut samples = Vec::with_capacity(n_samples.min(1 << 24));
    for i in 0..n_samples {
        let subject = read_str(&mut r, &origin)?;
        let label = read_u32(&mut r, &origin)? as usize;
        let n_mod = read_u32(&mut r, &origin)? as usize;
        if n_mod != manifest.modality_names.len() {
            return Err(Error::format(format!(
                "{origin}: sample {i} has {n_mod} modalities, manifest declares {}",
                manifest.modality_names.len()
            )));
        }
        let mut modalities = Vec::with_capacity(n_mod);
        for m in 0..n_mod {
            let name = read_str(&mut r, &origin)?;
            if name != manifest.modality_names[m] {
                return Err(Error::format(format!(
                    "{origin}: sample {i} modality '{name}' out of order (expected '{}')",
                    manifest.modality_names[m]
                )));
            }
            let c = read_u32(&mut r, &origin)? as usize;
            let l = read_u64(&mut r, &origin)? as usize;
            let mut data = vec![0.0; c * l];
            let mut buf = [0u8; 8];
            for v in data.iter_mut() {
                r.read_exact(&mut buf)
                    .map_err(|_| Error::format(format!("{origin}: truncated record")))?;
                *v = f64::from_le_bytes(buf);
            }
            modalities.push(
                Tensor::new(vec![c, l], data)
                    .map_err(|e| Error::format(format!("{origin}: sample {i}: {e}")))?,
            );
        }
        samples.push(SegmentSample {
            subject,
            label,
            modalities,
        });
    }

    let ds = SegmentDataset::new(
        samples,
        manifest.modality_names.clone(),
        manifest.class_names.clone(),
        manifest.segment_length,
        manifest.sample_rate,
    )?;
    Ok(ds.with_manifest(manifest))
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u64).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str(r: &mut impl Read, origin: &str) -> Result<String> {
    let len = read_u64(r, origin)? as usize;
    if len > 1 << 20 {
        return Err(Error::format(format!("{origin}: unreasonable string length")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format(format!("{origin}: truncated string")))?;
    String::from_utf8(buf).map_err(|_| Error::format(format!("{origin}: non-utf8 string")))
}

fn read_u32(r: &mut impl Read, origin: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::format(format!("{origin}: truncated record")))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, origin: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| Error::format(format!("{origin}: truncated record")))?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset() -> SegmentDataset {
        let mk = |subject: &str, label: usize, v: f64| SegmentSample {
            subject: subject.into(),
            label,
            modalities: vec![Tensor::full(&[1, 16], v), Tensor::full(&[2, 16], v * 2.0)],
        };
        SegmentDataset::new(
            vec![mk("s1", 0, 0.25), mk("s2", 1, -1.5)],
            vec!["a".into(), "b".into()],
            vec!["c0".into(), "c1".into()],
            16,
            256,
        )
        .unwrap()
    }

    #[test]
    fn archive_round_trip_is_bitwise() {
        let dir = std::env::temp_dir().join(format!("attx-archive-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("round_trip.seg");
        let ds = dataset();
        let manifest = ArchiveManifest::for_dataset(&ds, "binary", "test");
        write_archive(&path, &ds, &manifest).unwrap();
        let back = load_segments(&path).unwrap();
        assert_eq!(back.len(), ds.len());
        for (a, b) in back.samples().iter().zip(ds.samples()) {
            assert_eq!(a.subject, b.subject);
            assert_eq!(a.label, b.label);
            for (ta, tb) in a.modalities.iter().zip(&b.modalities) {
                assert_eq!(ta.data(), tb.data());
            }
        }
        assert_eq!(back.manifest.as_ref().unwrap().label_scheme, "binary");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn corrupted_magic_is_reported() {
        let dir = std::env::temp_dir().join(format!("attx-archive-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.seg");
        std::fs::write(&path, b"NOTANARC0123456789").unwrap();
        let err = load_segments(&path).unwrap_err();
        assert!(err.to_string().contains("not a segment archive"));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn truncated_archive_is_reported() {
        let dir = std::env::temp_dir().join(format!("attx-archive-trunc-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("trunc.seg");
        let ds = dataset();
        let manifest = ArchiveManifest::for_dataset(&ds, "binary", "test");
        write_archive(&path, &ds, &manifest).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 40]).unwrap();
        let err = load_segments(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"));
        std::fs::remove_dir_all(&dir).ok();
    }
}
