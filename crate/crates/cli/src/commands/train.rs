//! Train one model on a full dataset and write checkpoint, loss curve,
//! and manifest.

use std::path::Path;

use attx_core::model::Model;
use attx_core::train_eval::train;
use attx_core::{Error, Result};

use crate::config::ExperimentConfig;

pub fn run(config: &ExperimentConfig) -> Result<()> {
    let pipeline = config.pipeline()?;
    let train_opts = config.train_options();
    train_opts.validate()?;

    let dataset = config.load_dataset()?;
    std::fs::create_dir_all(&config.output_dir)?;

    let mut model = Model::build(pipeline, dataset.segment_length, dataset.in_channels())?;
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let outcome = train(&mut model, &dataset, &indices, &train_opts)?;

    let ckpt_path = config.output_dir.join("model.ckpt");
    model.save(&ckpt_path)?;

    let curve_path = config.output_dir.join("loss_curve.csv");
    write_curve(&curve_path, &outcome.curve)?;

    super::preprocess::write_run_manifest(
        &config.output_dir,
        serde_json::json!({
            "command": "train",
            "config": config,
            "config_fingerprint": config.fingerprint()?,
            "selected_epoch": outcome.selected_epoch,
            "validation_subjects": outcome.val_subjects,
            "dataset_manifest": dataset.manifest,
        }),
    )?;

    println!(
        "trained {} epochs (selected epoch {}), checkpoint at {}",
        outcome.curve.len(),
        outcome.selected_epoch,
        ckpt_path.display()
    );
    Ok(())
}

fn write_curve(path: &Path, curve: &[attx_core::train_eval::EpochStats]) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "epoch,train_loss,val_loss,train_accuracy").map_err(Error::from)?;
    for e in curve {
        let val = e.val_loss.map(|v| format!("{v:.12e}")).unwrap_or_default();
        let acc = e
            .train_accuracy
            .map(|v| format!("{v:.6}"))
            .unwrap_or_default();
        writeln!(w, "{},{:.12e},{},{}", e.epoch, e.train_loss, val, acc).map_err(Error::from)?;
    }
    Ok(())
}
