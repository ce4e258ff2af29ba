//! Run the type x stage grid and emit the row table, aggregate views, and
//! the winning configuration as a reusable train config.

use attx_core::train_eval::{
    aggregate_rows, run_sweep, write_aggregate_csv, write_rows_csv, SweepOptions,
};
use attx_core::Result;

use crate::config::ExperimentConfig;

pub fn run(config: &ExperimentConfig, workers: usize, resume: bool) -> Result<()> {
    let pipeline = config.pipeline()?;
    let train_opts = config.train_options();
    let grid = config.sweep_grid()?;
    let dataset = config.load_dataset()?;
    std::fs::create_dir_all(&config.output_dir)?;

    let opts = SweepOptions {
        workers,
        max_seconds: config.max_seconds,
        record_timing: config.record_timing,
        resume,
    };
    let state_path = config.output_dir.join("sweep_state.json");
    let outcome = run_sweep(
        &pipeline,
        &train_opts,
        &grid,
        &dataset,
        &opts,
        Some(&state_path),
    )?;

    let rows_path = config.output_dir.join("sweep_report.csv");
    write_rows_csv(&outcome.rows, std::io::BufWriter::new(std::fs::File::create(&rows_path)?))?;

    let (by_type, by_stages) = aggregate_rows(&outcome.rows);
    write_aggregate_csv(
        &by_type,
        "type",
        std::io::BufWriter::new(std::fs::File::create(
            config.output_dir.join("aggregate_by_type.csv"),
        )?),
    )?;
    write_aggregate_csv(
        &by_stages,
        "stages",
        std::io::BufWriter::new(std::fs::File::create(
            config.output_dir.join("aggregate_by_stages.csv"),
        )?),
    )?;

    if let Some(best) = &outcome.best {
        let mut best_config = config.clone();
        best_config.encoder = best.encoder;
        best_config.connection_type = best.connection_type.clone();
        best_config.stages = best.attx_stages.clone();
        best_config.grid = None;
        best_config.output_dir = config.output_dir.join("best");
        best_config.save(&config.output_dir.join("best_config.json"))?;
    }

    super::preprocess::write_run_manifest(
        &config.output_dir,
        serde_json::json!({
            "command": "sweep",
            "config": config,
            "config_fingerprint": config.fingerprint()?,
            "cells": outcome.rows.len(),
            "complete": outcome.complete,
            "dataset_manifest": dataset.manifest,
        }),
    )?;

    if !outcome.complete {
        eprintln!("warning: budget exhausted, table is incomplete");
    }
    println!(
        "{} rows ({}) -> {}",
        outcome.rows.len(),
        if outcome.complete { "complete" } else { "incomplete" },
        rows_path.display()
    );
    Ok(())
}
