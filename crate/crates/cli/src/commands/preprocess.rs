//! Turn raw recordings into a windowed, labeled segment archive.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use attx_core::data::{
    load_recording, write_archive, ArchiveManifest, LabelOutcome, LabelScheme, RawRecording,
    SegmentDataset, SegmentSample,
};
use attx_core::dsp::{
    preprocess_modality, rescale_intervals, window_geometry, window_label, window_offsets,
    LabelInterval, PreprocessParams,
};
use attx_core::numerics::Tensor;
use attx_core::{Error, Result};

pub struct PreprocessArgs {
    pub inputs: Vec<PathBuf>,
    pub output: PathBuf,
    pub scheme: String,
    pub params: PreprocessParams,
}

/// Expand directories into recording files, deterministically ordered.
fn collect_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(input)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            entries.sort();
            files.extend(entries);
        } else {
            files.push(input.clone());
        }
    }
    if files.is_empty() {
        return Err(Error::format("no records"));
    }
    Ok(files)
}

pub fn run(args: &PreprocessArgs) -> Result<()> {
    let scheme = LabelScheme::by_name(&args.scheme)?;
    let files = collect_files(&args.inputs)?;

    // Group recordings by subject; modality order is alphabetical and must
    // agree across subjects.
    let mut by_subject: BTreeMap<String, Vec<RawRecording>> = BTreeMap::new();
    for file in &files {
        let rec = load_recording(file)?;
        by_subject.entry(rec.subject_id.clone()).or_default().push(rec);
    }

    let mut modality_names: Option<Vec<String>> = None;
    let mut samples: Vec<SegmentSample> = Vec::new();
    let mut exclusions: BTreeMap<String, usize> = BTreeMap::new();
    let mut subject_counts: BTreeMap<String, usize> = BTreeMap::new();
    let target = args.params.target_rate;
    let (win, hop) = window_geometry(target, args.params.window_s, args.params.overlap)?;

    for (subject, mut recs) in by_subject {
        recs.sort_by_key(|r| r.modality.name().to_string());
        let names: Vec<String> = recs.iter().map(|r| r.modality.name().to_string()).collect();
        {
            let mut unique = names.clone();
            unique.dedup();
            if unique.len() != names.len() {
                return Err(Error::format(format!(
                    "subject {subject} has duplicate modality recordings"
                )));
            }
        }
        match &modality_names {
            None => modality_names = Some(names.clone()),
            Some(expect) => {
                if expect != &names {
                    return Err(Error::format(format!(
                        "subject {subject} has modalities {names:?}, expected {expect:?}"
                    )));
                }
            }
        }

        // Clean every modality, then truncate all channels to the shortest
        // so windows stay synchronized.
        let mut channels: Vec<Vec<Vec<f64>>> = Vec::new();
        for rec in &recs {
            channels.push(preprocess_modality(
                &rec.samples,
                rec.modality,
                rec.sample_rate,
                &args.params,
            )?);
        }
        let min_len = channels
            .iter()
            .flat_map(|chs| chs.iter().map(Vec::len))
            .min()
            .unwrap_or(0);

        // Session labels: first modality carrying any, rescaled to the
        // target rate.
        let intervals: Vec<LabelInterval> = recs
            .iter()
            .find(|r| !r.labels.is_empty())
            .map(|r| rescale_intervals(&r.labels, r.sample_rate, target))
            .unwrap_or_default();

        let offsets = window_offsets(min_len, win, hop);
        if offsets.is_empty() {
            eprintln!("warning: subject {subject} too short for a single window, skipped");
        }
        let mut kept = 0usize;
        for off in offsets {
            let raw_label = match window_label(&intervals, off, win) {
                Some(l) => l.to_string(),
                None => {
                    let reason = if intervals.iter().any(|iv| iv.start < off + win && iv.end > off)
                    {
                        "tie"
                    } else {
                        "unlabeled"
                    };
                    *exclusions.entry(reason.into()).or_insert(0) += 1;
                    continue;
                }
            };
            match scheme.apply(&raw_label)? {
                LabelOutcome::Exclude => {
                    *exclusions.entry(format!("excluded:{raw_label}")).or_insert(0) += 1;
                }
                LabelOutcome::Class(label) => {
                    let modalities: Vec<Tensor> = channels
                        .iter()
                        .map(|chs| {
                            let c = chs.len();
                            let mut data = Vec::with_capacity(c * win);
                            for ch in chs {
                                data.extend_from_slice(&ch[off..off + win]);
                            }
                            Tensor::new(vec![c, win], data)
                        })
                        .collect::<Result<_>>()?;
                    samples.push(SegmentSample {
                        subject: subject.clone(),
                        label,
                        modalities,
                    });
                    kept += 1;
                }
            }
        }
        subject_counts.insert(subject, kept);
    }

    let modality_names = modality_names.unwrap();
    let dataset = SegmentDataset::new(
        samples,
        modality_names,
        scheme.class_names.clone(),
        win,
        target,
    )?;

    let mut manifest = ArchiveManifest::for_dataset(&dataset, &scheme.name, "preprocess");
    manifest.preprocess = Some(args.params.clone());
    manifest.exclusions = exclusions.clone();
    write_archive(&args.output, &dataset, &manifest)?;

    println!("wrote {} ({} segments)", args.output.display(), dataset.len());
    for (subject, count) in &subject_counts {
        println!("  subject {subject}: {count} segments");
    }
    if exclusions.is_empty() {
        println!("  no windows excluded");
    } else {
        for (reason, count) in &exclusions {
            println!("  excluded [{reason}]: {count} windows");
        }
    }
    Ok(())
}

/// Shared manifest writer for command output directories.
pub fn write_run_manifest(dir: &Path, value: serde_json::Value) -> Result<()> {
    let path = dir.join("manifest.json");
    let json = serde_json::to_vec_pretty(&value)
        .map_err(|e| Error::config(format!("manifest: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}
