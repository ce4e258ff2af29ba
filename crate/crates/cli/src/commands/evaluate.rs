//! Leave-one-subject-out evaluation to a report CSV.

use attx_core::train_eval::loso_evaluate;
use attx_core::Result;

use crate::config::ExperimentConfig;

pub fn run(config: &ExperimentConfig, workers: usize) -> Result<()> {
    let pipeline = config.pipeline()?;
    let train_opts = config.train_options();
    let dataset = config.load_dataset()?;
    std::fs::create_dir_all(&config.output_dir)?;

    let report = loso_evaluate(&pipeline, &train_opts, &dataset, workers)?;

    let path = config.output_dir.join("report.csv");
    let file = std::fs::File::create(&path)?;
    report.write_csv(std::io::BufWriter::new(file))?;

    super::preprocess::write_run_manifest(
        &config.output_dir,
        serde_json::json!({
            "command": "evaluate",
            "config": config,
            "config_fingerprint": config.fingerprint()?,
            "folds": report.folds.len(),
            "mean_accuracy": report.mean_accuracy,
            "mean_macro_f1": report.mean_macro_f1,
            "dataset_manifest": dataset.manifest,
        }),
    )?;

    println!(
        "{} folds: mean accuracy {:.4}, mean macro-F1 {:.4} -> {}",
        report.folds.len(),
        report.mean_accuracy,
        report.mean_macro_f1,
        path.display()
    );
    Ok(())
}
