//! Waveform ingestion, log-mel and pitch analysis, and mel inversion.

pub mod delta;
pub mod f0;
pub mod features;
pub mod griffin_lim;
pub mod mel;
pub mod wav;

pub use delta::delta_features;
pub use f0::{extract_f0, F0Contour};
pub use features::UtteranceFeatures;
pub use griffin_lim::griffin_lim_invert;
pub use mel::{mel_spectrogram, MelSpectrogram};
pub use wav::{load_wav, write_wav, Waveform, SAMPLE_RATE};
