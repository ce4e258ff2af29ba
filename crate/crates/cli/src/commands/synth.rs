//! Generate a synthetic segment archive.

use std::path::PathBuf;

use attx_core::data::{synth_generate, write_archive, ArchiveManifest, Coupling};
use attx_core::Result;

pub struct SynthArgs {
    pub coupling: Coupling,
    pub subjects: usize,
    pub segments_per_subject: usize,
    pub seed: u64,
    pub output: PathBuf,
}

pub fn run(args: &SynthArgs) -> Result<()> {
    let dataset = synth_generate(
        args.seed,
        args.subjects,
        args.segments_per_subject,
        args.coupling,
    )?;
    let source = format!(
        "synth coupling={:?} seed={} subjects={} segments_per_subject={}",
        args.coupling, args.seed, args.subjects, args.segments_per_subject
    );
    let manifest = ArchiveManifest::for_dataset(&dataset, "binary", &source);
    write_archive(&args.output, &dataset, &manifest)?;
    println!(
        "wrote {} ({} segments, {} subjects)",
        args.output.display(),
        dataset.len(),
        dataset.subjects().len()
    );
    Ok(())
}
