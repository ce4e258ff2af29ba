//! Multimodal time-series classification with attentive cross-modal
//! connections.
//!
//! Per-modality 1D-CNN encoder streams (VGG- or ResNet-style blocks) are
//! bridged by attention blocks that learn to weight and share intermediate
//! representations between modalities. The crate covers the whole
//! experiment loop: signal preprocessing and segmentation, a synthetic
//! dataset generator, model assembly, training with Adam or AdaDelta, and
//! leave-one-subject-out evaluation with a connection-type-by-stage sweep
//! driver.

pub mod attx;
pub mod data;
pub mod dsp;
pub mod encoders;
pub mod error;
pub mod model;
pub mod numerics;
pub mod train_eval;

pub use error::{Error, Result};
