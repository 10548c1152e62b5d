//! Single-channel EEG signal processing.

pub mod bands;
pub mod filter;
pub mod pipeline;
pub mod welch;

pub use bands::{band_powers, default_bands, BandDefinition, BAND_NAMES, N_BANDS};
pub use filter::{bandpass, SosFilter};
pub use pipeline::{
    decimate2, preprocess_all, preprocess_recording, reject_artifacts, segment, FeatureWindow,
    PreprocessConfig, Preprocessor, Recording,
};
pub use welch::{welch_psd, Psd, Welch};
