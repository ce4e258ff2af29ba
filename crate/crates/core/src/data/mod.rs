//! Dataset modeling: raw recordings, label schemes, windowed segment
//! datasets, the archive container, and the synthetic generator.

mod archive;
mod dataset;
mod labels;
mod recording;
mod synth;

pub use archive::{load_segments, write_archive, ArchiveManifest};
pub use dataset::{SegmentDataset, SegmentSample};
pub use labels::{LabelOutcome, LabelScheme};
pub use recording::{load_recording, RawRecording};
pub use synth::{
    band_energy, gated_bayes_predict, synth_generate, Coupling, SYNTH_RATE, SYNTH_SEGMENT_LEN,
};
