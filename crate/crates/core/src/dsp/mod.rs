//! Signal preprocessing: Butterworth filter design and zero-phase
//! application, rational resampling, normalization, EDA decomposition, and
//! overlapped windowing.

mod filter;
mod preprocess;
mod resample;
mod window;

pub use filter::{design_butterworth, filtfilt, max_pole_radius, FilterKind, FilterSpec, Section, Sos};
pub use preprocess::{
    modality_filters, preprocess_modality, zscore, Modality, PreprocessParams,
    DEFAULT_FILTER_ORDER, EDA_SPLIT_CUTOFF_HZ, EDA_SPLIT_ORDER,
};
pub use resample::resample;
pub use window::{
    rescale_intervals, validate_intervals, window_geometry, window_label, window_offsets,
    window_segments, LabelInterval,
};
