//! Leave-one-subject-out evaluation.
//!
//! Each fold holds out every sample of one subject, trains a freshly
//! initialized model on the remaining subjects (with the trainer's own
//! by-subject validation split), and tests on the held-out subject.
//! Fold metrics aggregate by unweighted mean. Folds are independent jobs
//! and may run on a bounded worker pool over the shared read-only dataset.

use serde::Serialize;

use super::metrics::{metrics, Metrics};
use super::trainer::{predict, train, TrainOptions};
use crate::data::SegmentDataset;
use crate::error::{Error, Result};
use crate::model::{Model, PipelineConfig};

#[derive(Debug, Clone, Serialize)]
pub struct FoldReport {
    pub fold: usize,
    pub subject: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub confusion: Vec<Vec<usize>>,
    pub test_samples: usize,
    pub selected_epoch: usize,
    pub skipped: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub folds: Vec<FoldReport>,
    pub mean_accuracy: f64,
    pub mean_macro_f1: f64,
    pub config_fingerprint: String,
    pub seconds: f64,
}

/// Per-fold seed: decorrelated from the base seed by the fold index.
pub fn fold_seed(base: u64, fold: usize) -> u64 {
    base.wrapping_add((fold as u64).wrapping_mul(0x9E3779B97F4A7C15))
}

fn run_fold(
    pipeline: &PipelineConfig,
    train_opts: &TrainOptions,
    dataset: &SegmentDataset,
    fold: usize,
    subject: &str,
) -> Result<FoldReport> {
    let test_idx = dataset.indices_of_subject(subject);
    let train_idx: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset.samples()[i].subject != subject)
        .collect();
    debug_assert!(test_idx.iter().all(|i| !train_idx.contains(i)));
    debug_assert_eq!(test_idx.len() + train_idx.len(), dataset.len());
    if test_idx.is_empty() {
        return Ok(FoldReport {
            fold,
            subject: subject.to_string(),
            accuracy: 0.0,
            macro_f1: 0.0,
            confusion: Vec::new(),
            test_samples: 0,
            selected_epoch: 0,
            skipped: true,
        });
    }

    let mut config = pipeline.clone();
    config.seed = fold_seed(pipeline.seed, fold);
    let mut fold_train = train_opts.clone();
    fold_train.seed = fold_seed(train_opts.seed, fold);

    let mut model = Model::build(config, dataset.segment_length, dataset.in_channels())?;
    let outcome = train(&mut model, dataset, &train_idx, &fold_train)?;
    let preds = predict(&mut model, dataset, &test_idx, fold_train.batch_size)?;
    let truth = dataset.labels_of(&test_idx);
    let m: Metrics = metrics(&preds, &truth, model.config.num_classes)?;

    Ok(FoldReport {
        fold,
        subject: subject.to_string(),
        accuracy: m.accuracy,
        macro_f1: m.macro_f1,
        confusion: m.confusion,
        test_samples: test_idx.len(),
        selected_epoch: outcome.selected_epoch,
        skipped: false,
    })
}

/// Run every fold, optionally on `workers` threads, and aggregate.
pub fn loso_evaluate(
    pipeline: &PipelineConfig,
    train_opts: &TrainOptions,
    dataset: &SegmentDataset,
    workers: usize,
) -> Result<EvalReport> {
    pipeline.validate()?;
    train_opts.validate()?;
    if pipeline.modalities != dataset.modality_names {
        return Err(Error::config(format!(
            "config modalities {:?} do not match dataset {:?}",
            pipeline.modalities, dataset.modality_names
        )));
    }
    let subjects = dataset.subjects();
    if subjects.len() < 2 {
        return Err(Error::config("leave-one-subject-out needs >= 2 subjects"));
    }

    let started = std::time::Instant::now();
    let workers = workers.max(1).min(subjects.len());
    let mut folds: Vec<Option<FoldReport>> = vec![None; subjects.len()];

    if workers == 1 {
        for (fold, subject) in subjects.iter().enumerate() {
            folds[fold] = Some(run_fold(pipeline, train_opts, dataset, fold, subject)?);
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let results: Vec<std::sync::Mutex<Option<Result<FoldReport>>>> =
            (0..subjects.len()).map(|_| std::sync::Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let fold = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if fold >= subjects.len() {
                        break;
                    }
                    let report = run_fold(pipeline, train_opts, dataset, fold, &subjects[fold]);
                    *results[fold].lock().unwrap() = Some(report);
                });
            }
        });
        for (fold, slot) in results.into_iter().enumerate() {
            folds[fold] = Some(slot.into_inner().unwrap().expect("fold ran")?);
        }
    }

    let folds: Vec<FoldReport> = folds.into_iter().map(|f| f.unwrap()).collect();
    let live: Vec<&FoldReport> = folds.iter().filter(|f| !f.skipped).collect();
    if live.is_empty() {
        return Err(Error::config("every fold was skipped"));
    }
    let mean_accuracy = live.iter().map(|f| f.accuracy).sum::<f64>() / live.len() as f64;
    let mean_macro_f1 = live.iter().map(|f| f.macro_f1).sum::<f64>() / live.len() as f64;

    Ok(EvalReport {
        folds,
        mean_accuracy,
        mean_macro_f1,
        config_fingerprint: pipeline.fingerprint(),
        seconds: started.elapsed().as_secs_f64(),
    })
}

impl EvalReport {
    /// Fixed CSV schema: one row per fold, then an aggregate row.
    pub fn write_csv(&self, mut w: impl std::io::Write) -> Result<()> {
        writeln!(w, "section,fold,subject,test_samples,accuracy,macro_f1")?;
        for f in &self.folds {
            if f.skipped {
                writeln!(w, "skipped,{},{},0,,", f.fold, f.subject)?;
            } else {
                writeln!(
                    w,
                    "fold,{},{},{},{:.6},{:.6}",
                    f.fold, f.subject, f.test_samples, f.accuracy, f.macro_f1
                )?;
            }
        }
        writeln!(
            w,
            "aggregate,,,,{:.6},{:.6}",
            self.mean_accuracy, self.mean_macro_f1
        )?;
        Ok(())
    }
}

/// Score-level fusion baseline: average the class probabilities of one
/// trained model per modality and take the argmax.
pub fn average_probabilities(per_model: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
    let first = per_model
        .first()
        .ok_or_else(|| Error::config("no probability tables to fuse"))?;
    let n = first.len();
    let k = first.first().map(Vec::len).unwrap_or(0);
    let mut out = vec![vec![0.0; k]; n];
    for table in per_model {
        if table.len() != n {
            return Err(Error::config("probability tables of different sizes"));
        }
        for (o, row) in out.iter_mut().zip(table) {
            for (a, b) in o.iter_mut().zip(row) {
                *a += b / per_model.len() as f64;
            }
        }
    }
    Ok(out)
}
