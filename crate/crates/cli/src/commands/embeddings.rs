//! Export merged per-branch embeddings for every dataset sample.

use std::path::{Path, PathBuf};

use attx_core::data::load_segments;
use attx_core::model::Model;
use attx_core::Result;

pub struct EmbeddingsArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub output: PathBuf,
    pub batch_size: usize,
}

pub fn run(args: &EmbeddingsArgs) -> Result<()> {
    let mut model = Model::load(&args.checkpoint)?;
    let dataset = load_segments(&args.data)?;
    let dataset = if dataset.modality_names == model.config.modalities {
        dataset
    } else {
        dataset.select_modalities(&model.config.modalities)?
    };
    let table = model.export_embeddings(&dataset, args.batch_size)?;
    write_table(&args.output, &table)?;
    println!(
        "wrote {} ({} rows, {} dims)",
        args.output.display(),
        table.rows.len(),
        table.dim
    );
    Ok(())
}

fn write_table(path: &Path, table: &attx_core::model::EmbeddingTable) -> Result<()> {
    let file = std::fs::File::create(path)?;
    table.write_csv(std::io::BufWriter::new(file))
}
