//! Voice-side evaluation: pitch contours, dynamic time warping, silence
//! profiling, voiced phoneme counting, and the per-clip stats row.

mod dtw;
mod f0;
mod phonemes;
mod silence;
mod stats;

pub use dtw::{dtw_alignment, dtw_distance, DtwOutcome};
pub use f0::{
    estimate_f0, load_contour, save_contour, PitchContour, CLARITY_THRESHOLD,
    DEFAULT_FRAME_HOP_S, F0_MAX_HZ, F0_MIN_HZ, F0_WINDOW_S,
};
pub use phonemes::{
    is_voiced_phoneme, voiced_phoneme_count, FilePhonemizer, Phonemizer, RulePhonemizer,
};
pub use silence::{silence_profile, SilenceProfile, DEFAULT_FRAME_LENGTH, DEFAULT_SILENCE_THRESHOLD};
pub use stats::{voice_stats_report, VoiceStats};

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioMetricError {
    #[error("audio clip too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("no voiced frames to compare")]
    NoVoicedFrames,
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt contour file {path}: {detail}")]
    CorruptContour { path: PathBuf, detail: String },
}
