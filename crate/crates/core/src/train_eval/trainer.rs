//! The training loop: seeded mini-batch shuffling, a by-subject validation
//! split, best-validation model selection, and NaN abort diagnostics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{Optimizer, OptimizerKind};
use crate::data::SegmentDataset;
use crate::error::{Error, Result};
use crate::model::{loss_for, Model};
use crate::numerics::{Mode, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSelection {
    /// Keep the final-epoch parameters.
    Last,
    /// Keep the parameters of the epoch with the lowest validation loss.
    BestValidation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_selection")]
    pub selection: ModelSelection,
    /// Fraction of training subjects held out for validation; 0 disables
    /// the split (and forces last-epoch selection).
    #[serde(default = "default_val_fraction")]
    pub val_subject_fraction: f64,
    /// Stop once training accuracy reaches this level (checked per epoch).
    #[serde(default)]
    pub stop_at_train_accuracy: Option<f64>,
}

fn default_selection() -> ModelSelection {
    ModelSelection::BestValidation
}

fn default_val_fraction() -> f64 {
    0.2
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 100,
            batch_size: 256,
            seed: 0,
            optimizer: OptimizerKind::default(),
            selection: ModelSelection::BestValidation,
            val_subject_fraction: 0.2,
            stop_at_train_accuracy: None,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.val_subject_fraction) {
            return Err(Error::config("val_subject_fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub train_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub curve: Vec<EpochStats>,
    /// Epoch whose parameters the model carries after training (1-based;
    /// 0 when no epoch ran).
    pub selected_epoch: usize,
    pub val_subjects: Vec<String>,
}

/// Train a model in place on `indices` of `dataset`.
pub fn train(
    model: &mut Model,
    dataset: &SegmentDataset,
    indices: &[usize],
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    opts.validate()?;
    if indices.is_empty() {
        return Err(Error::config("training on an empty index set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    // Hold out whole subjects for validation so no subject leaks across
    // the split.
    let mut subjects: Vec<String> = {
        let mut s: Vec<String> = indices
            .iter()
            .map(|&i| dataset.samples()[i].subject.clone())
            .collect();
        s.sort();
        s.dedup();
        s
    };
    let n_val = if opts.val_subject_fraction > 0.0 && subjects.len() >= 2 {
        let raw = (subjects.len() as f64 * opts.val_subject_fraction).round() as usize;
        raw.clamp(1, subjects.len() - 1)
    } else {
        0
    };
    for i in (1..subjects.len()).rev() {
        let j = rng.gen_range(0..=i);
        subjects.swap(i, j);
    }
    let val_subjects: Vec<String> = subjects[..n_val].to_vec();
    let (train_idx, val_idx): (Vec<usize>, Vec<usize>) = {
        let is_val = |i: &usize| val_subjects.contains(&dataset.samples()[*i].subject);
        let val: Vec<usize> = indices.iter().copied().filter(is_val).collect();
        let train: Vec<usize> = indices.iter().copied().filter(|i| !is_val(i)).collect();
        (train, val)
    };
    if train_idx.is_empty() {
        return Err(Error::config("validation split consumed every subject"));
    }

    let mut optimizer = Optimizer::new(opts.optimizer, &model.params);
    let mut curve = Vec::with_capacity(opts.epochs);
    let mut order = train_idx.clone();
    let mut best: Option<(f64, usize, crate::model::ModelState)> = None;
    let num_classes = model.config.num_classes;

    let mut epochs_run = 0usize;
    for epoch in 1..=opts.epochs {
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut loss_sum = 0.0;
        for (batch_no, chunk) in order.chunks(opts.batch_size).enumerate() {
            let inputs = dataset.batch(chunk)?;
            let labels = dataset.labels_of(chunk);
            let mut tape = Tape::new();
            let pass = model.forward(&mut tape, &inputs, Mode::Train)?;
            let loss = loss_for(&mut tape, &model.config.loss, pass.logits, &labels, num_classes)?;
            let loss_value = tape.value(loss).item()?;
            if !loss_value.is_finite() {
                let culprit = model
                    .params
                    .first_non_finite()
                    .unwrap_or("<none>")
                    .to_string();
                return Err(Error::numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_no}; first non-finite parameter: {culprit}"
                )));
            }
            tape.backward(loss)?;
            model.params.absorb_grads(&tape, &pass.bindings)?;
            optimizer.step(&mut model.params)?;
            model.params.zero_grads();
            loss_sum += loss_value * chunk.len() as f64;
        }
        let train_loss = loss_sum / train_idx.len() as f64;

        let val_loss = if val_idx.is_empty() {
            None
        } else {
            Some(eval_loss(model, dataset, &val_idx, opts.batch_size)?)
        };
        let train_accuracy = match opts.stop_at_train_accuracy {
            Some(_) => {
                let preds = predict(model, dataset, &train_idx, opts.batch_size)?;
                let labels = dataset.labels_of(&train_idx);
                let correct = preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
                Some(correct as f64 / labels.len() as f64)
            }
            None => None,
        };

        if opts.selection == ModelSelection::BestValidation {
            if let Some(vl) = val_loss {
                let improved = best.as_ref().map(|(b, _, _)| vl < *b).unwrap_or(true);
                if improved {
                    best = Some((vl, epoch, model.snapshot()));
                }
            }
        }

        curve.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            train_accuracy,
        });
        epochs_run = epoch;

        if let (Some(target), Some(acc)) = (opts.stop_at_train_accuracy, train_accuracy) {
            if acc >= target {
                break;
            }
        }
    }

    let selected_epoch = match best {
        Some((_, epoch, state)) => {
            model.restore(&state);
            epoch
        }
        None => epochs_run,
    };

    Ok(TrainOutcome {
        curve,
        selected_epoch,
        val_subjects,
    })
}

/// Mean loss over `indices` in eval mode.
pub fn eval_loss(
    model: &mut Model,
    dataset: &SegmentDataset,
    indices: &[usize],
    batch_size: usize,
) -> Result<f64> {
    let mut sum = 0.0;
    for chunk in indices.chunks(batch_size.max(1)) {
        let inputs = dataset.batch(chunk)?;
        let labels = dataset.labels_of(chunk);
        let mut tape = Tape::new();
        let pass = model.forward(&mut tape, &inputs, Mode::Eval)?;
        let loss = loss_for(
            &mut tape,
            &model.config.loss,
            pass.logits,
            &labels,
            model.config.num_classes,
        )?;
        sum += tape.value(loss).item()? * chunk.len() as f64;
    }
    Ok(sum / indices.len() as f64)
}

/// Argmax predictions over `indices` in eval mode.
pub fn predict(
    model: &mut Model,
    dataset: &SegmentDataset,
    indices: &[usize],
    batch_size: usize,
) -> Result<Vec<usize>> {
    Ok(predict_probs(model, dataset, indices, batch_size)?
        .into_iter()
        .map(|row| argmax(&row))
        .collect())
}

/// Per-sample class probabilities (softmax of the logits) in eval mode.
pub fn predict_probs(
    model: &mut Model,
    dataset: &SegmentDataset,
    indices: &[usize],
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    let k = model.config.num_classes;
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let inputs = dataset.batch(chunk)?;
        let mut tape = Tape::new();
        let pass = model.forward(&mut tape, &inputs, Mode::Eval)?;
        let probs = tape.softmax(pass.logits, -1)?;
        let data = tape.value(probs).data();
        for row in data.chunks(k) {
            out.push(row.to_vec());
        }
    }
    Ok(out)
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
