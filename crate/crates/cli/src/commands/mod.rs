pub mod embeddings;
pub mod evaluate;
pub mod preprocess;
pub mod sweep;
pub mod synth;
pub mod train;
