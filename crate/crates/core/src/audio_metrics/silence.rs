//! Frame-level silence analysis for synthesized speech.

use crate::media::AudioClip;

use super::AudioMetricError;

/// Samples per analysis frame.
pub const DEFAULT_FRAME_LENGTH: usize = 2048;
/// RMS below this counts the frame as silent.
pub const DEFAULT_SILENCE_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SilenceProfile {
    pub total_frames: usize,
    pub silent_frames: usize,
    /// silent_frames / total_frames.
    pub silent_fraction: f64,
    /// 1 - silent_fraction.
    pub active_fraction: f64,
}

/// Classify fixed-length non-overlapping frames by RMS energy. The trailing
/// partial frame is dropped; clips shorter than one frame error.
pub fn silence_profile(
    clip: &AudioClip,
    frame_length: usize,
    threshold: f64,
) -> Result<SilenceProfile, AudioMetricError> {
    if frame_length == 0 {
        return Err(AudioMetricError::InvalidParameter(
            "frame_length must be positive",
        ));
    }
    if !(threshold >= 0.0 && threshold.is_finite()) {
        return Err(AudioMetricError::InvalidParameter(
            "silence threshold must be finite and non-negative",
        ));
    }
    if clip.samples.len() < frame_length {
        return Err(AudioMetricError::TooShort {
            needed: frame_length,
            got: clip.samples.len(),
        });
    }

    let mut total = 0usize;
    let mut silent = 0usize;
    for frame in clip.samples.chunks_exact(frame_length) {
        let energy: f64 = frame.iter().map(|&s| (s as f64) * (s as f64)).sum();
        let rms = (energy / frame_length as f64).sqrt();
        total += 1;
        if rms < threshold {
            silent += 1;
        }
    }
    let silent_fraction = silent as f64 / total as f64;
    Ok(SilenceProfile {
        total_frames: total,
        silent_frames: silent,
        silent_fraction,
        active_fraction: 1.0 - silent_fraction,
    })
}
