//! Raw recording model and on-disk formats.
//!
//! A recording is one subject's samples for one modality at a native rate,
//! with labeled sample intervals. Two interchangeable file formats exist:
//!
//! CSV: a header line `subject_id,modality,sample_rate`, one value line,
//! optional `label,<start>,<end>,<name>` lines, then one sample per line.
//!
//! Binary: magic `ATXREC01`, version, length-prefixed subject and modality
//! strings, rate, label intervals, then little-endian doubles.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use crate::dsp::{validate_intervals, LabelInterval, Modality};
use crate::error::{Error, Result};

const RECORDING_MAGIC: &[u8; 8] = b"ATXREC01";
const RECORDING_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct RawRecording {
    pub subject_id: String,
    pub modality: Modality,
    pub sample_rate: u32,
    pub samples: Vec<f64>,
    pub labels: Vec<LabelInterval>,
}

impl RawRecording {
    pub fn validate(&self) -> Result<()> {
        if self.subject_id.is_empty() {
            return Err(Error::format("empty subject id"));
        }
        if self.sample_rate == 0 {
            return Err(Error::format("sample rate must be positive"));
        }
        if self.samples.is_empty() {
            return Err(Error::format("no records"));
        }
        if let Some(bad) = self.samples.iter().find(|v| !v.is_finite()) {
            return Err(Error::format(format!("non-finite sample value {bad}")));
        }
        validate_intervals(&self.labels, self.samples.len())
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "subject_id,modality,sample_rate")?;
        writeln!(w, "{},{},{}", self.subject_id, self.modality, self.sample_rate)?;
        for iv in &self.labels {
            writeln!(w, "label,{},{},{}", iv.start, iv.end, iv.label)?;
        }
        for s in &self.samples {
            writeln!(w, "{s}")?;
        }
        Ok(())
    }

    pub fn read_csv(r: impl Read, origin: &str) -> Result<RawRecording> {
        let reader = std::io::BufReader::new(r);
        let mut lines = reader.lines().enumerate();

        let header = lines
            .next()
            .ok_or_else(|| Error::format(format!("{origin}: no records")))?
            .1?;
        if header.trim() != "subject_id,modality,sample_rate" {
            return Err(Error::format(format!(
                "{origin}: expected header 'subject_id,modality,sample_rate', got '{header}'"
            )));
        }
        let meta = lines
            .next()
            .ok_or_else(|| Error::format(format!("{origin}: missing metadata line")))?
            .1?;
        let fields: Vec<&str> = meta.trim().split(',').collect();
        if fields.len() != 3 {
            return Err(Error::format(format!(
                "{origin}: metadata line needs 3 fields, got '{meta}'"
            )));
        }
        let subject_id = fields[0].to_string();
        let modality: Modality = fields[1]
            .parse()
            .map_err(|e| Error::format(format!("{origin}: {e}")))?;
        let sample_rate: u32 = fields[2]
            .trim()
            .parse()
            .map_err(|_| Error::format(format!("{origin}: bad sample rate '{}'", fields[2])))?;

        let mut labels = Vec::new();
        let mut samples = Vec::new();
        for (lineno, line) in lines {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if let Some(rest) = t.strip_prefix("label,") {
                let parts: Vec<&str> = rest.splitn(3, ',').collect();
                if parts.len() != 3 {
                    return Err(Error::format(format!(
                        "{origin}:{}: label line needs start,end,name",
                        lineno + 1
                    )));
                }
                let start = parts[0].trim().parse().map_err(|_| {
                    Error::format(format!("{origin}:{}: bad label start", lineno + 1))
                })?;
                let end = parts[1].trim().parse().map_err(|_| {
                    Error::format(format!("{origin}:{}: bad label end", lineno + 1))
                })?;
                labels.push(LabelInterval {
                    start,
                    end,
                    label: parts[2].trim().to_string(),
                });
            } else {
                let v: f64 = t.parse().map_err(|_| {
                    Error::format(format!("{origin}:{}: bad sample value '{t}'", lineno + 1))
                })?;
                samples.push(v);
            }
        }
        let rec = RawRecording {
            subject_id,
            modality,
            sample_rate,
            samples,
            labels,
        };
        rec.validate()
            .map_err(|e| Error::format(format!("{origin}: {e}")))?;
        Ok(rec)
    }

    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        w.write_all(RECORDING_MAGIC)?;
        w.write_all(&RECORDING_VERSION.to_le_bytes())?;
        write_str(&mut w, &self.subject_id)?;
        write_str(&mut w, self.modality.name())?;
        w.write_all(&self.sample_rate.to_le_bytes())?;
        w.write_all(&(self.labels.len() as u64).to_le_bytes())?;
        for iv in &self.labels {
            w.write_all(&(iv.start as u64).to_le_bytes())?;
            w.write_all(&(iv.end as u64).to_le_bytes())?;
            write_str(&mut w, &iv.label)?;
        }
        w.write_all(&(self.samples.len() as u64).to_le_bytes())?;
        for v in &self.samples {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read, origin: &str) -> Result<RawRecording> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::format(format!("{origin}: truncated header")))?;
        if &magic != RECORDING_MAGIC {
            return Err(Error::format(format!("{origin}: not a recording file")));
        }
        let version = read_u32(&mut r, origin)?;
        if version != RECORDING_VERSION {
            return Err(Error::format(format!(
                "{origin}: recording version {version}, expected {RECORDING_VERSION}"
            )));
        }
        let subject_id = read_str(&mut r, origin)?;
        let modality: Modality = read_str(&mut r, origin)?
            .parse()
            .map_err(|e| Error::format(format!("{origin}: {e}")))?;
        let sample_rate = read_u32(&mut r, origin)?;
        let n_labels = read_u64(&mut r, origin)? as usize;
        let mut labels = Vec::with_capacity(n_labels.min(1 << 20));
        for _ in 0..n_labels {
            let start = read_u64(&mut r, origin)? as usize;
            let end = read_u64(&mut r, origin)? as usize;
            let label = read_str(&mut r, origin)?;
            labels.push(LabelInterval { start, end, label });
        }
        let n_samples = read_u64(&mut r, origin)? as usize;
        let mut samples = vec![0.0; n_samples];
        let mut buf = [0u8; 8];
        for v in samples.iter_mut() {
            r.read_exact(&mut buf)
                .map_err(|_| Error::format(format!("{origin}: truncated samples")))?;
            *v = f64::from_le_bytes(buf);
        }
        let rec = RawRecording {
            subject_id,
            modality,
            sample_rate,
            samples,
            labels,
        };
        rec.validate()
            .map_err(|e| Error::format(format!("{origin}: {e}")))?;
        Ok(rec)
    }
}

/// Load a recording, sniffing binary magic and falling back to CSV.
pub fn load_recording(path: &Path) -> Result<RawRecording> {
    let origin = path.display().to_string();
    let bytes = std::fs::read(path)?;
    if bytes.len() >= 8 && &bytes[..8] == RECORDING_MAGIC {
        RawRecording::read_binary(&bytes[..], &origin)
    } else {
        RawRecording::read_csv(&bytes[..], &origin)
    }
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

    fn sample_recording() -> RawRecording {
        RawRecording {
            subject_id: "S2".into(),
            modality: Modality::Ecg,
            sample_rate: 700,
            samples: (0..100).map(|i| i as f64 * 0.01).collect(),
            labels: vec![
                LabelInterval {
                    start: 0,
                    end: 50,
                    label: "neutral".into(),
                },
                LabelInterval {
                    start: 50,
                    end: 100,
                    label: "stress".into(),
                },
            ],
        }
    }

    #[test]
    fn csv_round_trip() {
        let rec = sample_recording();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let back = RawRecording::read_csv(&buf[..], "test").unwrap();
        assert_eq!(back.subject_id, rec.subject_id);
        assert_eq!(back.modality, rec.modality);
        assert_eq!(back.sample_rate, rec.sample_rate);
        assert_eq!(back.samples, rec.samples);
        assert_eq!(back.labels, rec.labels);
    }

    #[test]
    fn binary_round_trip_is_bitwise() {
        let rec = sample_recording();
        let mut buf = Vec::new();
        rec.write_binary(&mut buf).unwrap();
        let back = RawRecording::read_binary(&buf[..], "test").unwrap();
        assert_eq!(back.samples, rec.samples);
        assert_eq!(back.labels, rec.labels);
    }

    #[test]
    fn empty_file_reports_no_records() {
        let err = RawRecording::read_csv(&b""[..], "empty.csv").unwrap_err();
        assert!(err.to_string().contains("no records"));
    }

    #[test]
    fn unknown_modality_is_named() {
        let text = "subject_id,modality,sample_rate\nS1,EMG,700\n1.0\n";
        let err = RawRecording::read_csv(text.as_bytes(), "f.csv").unwrap_err();
        assert!(err.to_string().contains("EMG"));
    }

    #[test]
    fn truncated_binary_is_detected() {
        let rec = sample_recording();
        let mut buf = Vec::new();
        rec.write_binary(&mut buf).unwrap();
        buf.truncate(buf.len() - 13);
        let err = RawRecording::read_binary(&buf[..], "t").unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }
}
