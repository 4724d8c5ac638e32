//! Per-clip voice statistics: the row format used when profiling reference
//! recordings (word variety, voiced phonemes, pitch spread, pausing,
//! duration).

use serde::{Deserialize, Serialize};

use crate::media::AudioClip;
use crate::text_metrics::tokenize_words;

use super::{
    estimate_f0, silence_profile, voiced_phoneme_count, AudioMetricError, Phonemizer,
    DEFAULT_FRAME_HOP_S, DEFAULT_FRAME_LENGTH, DEFAULT_SILENCE_THRESHOLD,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoiceStats {
    pub unique_words: usize,
    pub voiced_phonemes: usize,
    /// Population standard deviation over voiced pitch frames; absent when
    /// the clip has no voiced frames.
    pub pitch_std_hz: Option<f64>,
    /// Fraction of frames with audible energy (1 - silent_fraction).
    pub pause_ratio: f64,
    pub silent_fraction: f64,
    pub duration_s: f64,
}

/// Profile one clip and its transcript. The pitch estimate is
/// method-dependent: values from other F0 tools will differ, so compare
/// numbers produced by the same estimator only.
pub fn voice_stats_report(
    clip: &AudioClip,
    transcript: &str,
    g2p: &dyn Phonemizer,
) -> Result<VoiceStats, AudioMetricError> {
    if transcript.trim().is_empty() {
        return Err(AudioMetricError::InvalidParameter(
            "transcript must be non-empty",
        ));
    }

    let unique_words = tokenize_words(transcript).unique_count();
    let voiced_phonemes = voiced_phoneme_count(transcript, g2p);

    let contour = estimate_f0(clip, DEFAULT_FRAME_HOP_S)?;
    let voiced = contour.voiced();
    let pitch_std_hz = if voiced.is_empty() {
        log::warn!("no voiced frames: pitch spread unavailable");
        None
    } else {
        let mean = voiced.iter().sum::<f64>() / voiced.len() as f64;
        let var = voiced.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / voiced.len() as f64;
        Some(var.sqrt())
    };

    let profile = silence_profile(clip, DEFAULT_FRAME_LENGTH, DEFAULT_SILENCE_THRESHOLD)?;

    Ok(VoiceStats {
        unique_words,
        voiced_phonemes,
        pitch_std_hz,
        pause_ratio: profile.active_fraction,
        silent_fraction: profile.silent_fraction,
        duration_s: clip.duration_s(),
    })
}
