//! Media plumbing: audio clips, WAV codec, video frame sequences, and
//! keyframe selection.

use std::borrow::Cow;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MediaError {
    #[error("video has no frames")]
    EmptyVideo,
    #[error("keyframe count k must be at least 1")]
    InvalidKeyframeCount,
    #[error("video duration must be finite and non-negative, got {0}")]
    InvalidDuration(f64),
    #[error("audio sample rate must be positive")]
    InvalidSampleRate,
    #[error("unsupported audio format in {path}: {detail}")]
    UnsupportedFormat { path: PathBuf, detail: String },
    #[error("corrupt media file {path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("frame extraction command failed: {0}")]
    ExtractFailed(String),
}

/// Mono audio, normalized samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
}

impl AudioClip {
    /// Build a clip, clamping samples into [-1, 1]. Non-finite samples
    /// become silence.
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self, MediaError> {
        if sample_rate_hz == 0 {
            return Err(MediaError::InvalidSampleRate);
        }
        let samples = samples
            .into_iter()
            .map(|s| if s.is_finite() { s.clamp(-1.0, 1.0) } else { 0.0 })
            .collect();
        Ok(AudioClip {
            samples,
            sample_rate_hz,
        })
    }

    /// Pure tone at `freq_hz`, starting at phase zero.
    pub fn sine(freq_hz: f64, duration_s: f64, sample_rate_hz: u32, amplitude: f64) -> Self {
        let n = (duration_s * sample_rate_hz as f64).round().max(0.0) as usize;
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / sample_rate_hz as f64;
                (amplitude * (2.0 * std::f64::consts::PI * freq_hz * t).sin()) as f32
            })
            .collect();
        AudioClip {
            samples,
            sample_rate_hz,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// Reference to one video frame: a file on disk or in-memory bytes (used for
/// placeholder conditioning when no video accompanies a scene).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImageRef {
    Path(PathBuf),
    Inline(Vec<u8>),
}

impl ImageRef {
    pub fn bytes(&self) -> Result<Cow<'_, [u8]>, MediaError> {
        match self {
            ImageRef::Path(p) => std::fs::read(p)
                .map(Cow::Owned)
                .map_err(|source| MediaError::Io {
                    path: p.clone(),
                    source,
                }),
            ImageRef::Inline(b) => Ok(Cow::Borrowed(b.as_slice())),
        }
    }

    pub fn label(&self) -> String {
        match self {
            ImageRef::Path(p) => p.display().to_string(),
            ImageRef::Inline(b) => format!("<inline {} bytes>", b.len()),
        }
    }
}

/// Ordered frames of one scene's video plus its total duration. Frame timing
/// is uniform: frame i covers the i-th of `frames.len()` equal bins.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<ImageRef>,
    pub duration_s: f64,
}

impl FrameSequence {
    pub fn new(frames: Vec<ImageRef>, duration_s: f64) -> Result<Self, MediaError> {
        if frames.is_empty() {
            return Err(MediaError::EmptyVideo);
        }
        if !duration_s.is_finite() || duration_s < 0.0 {
            return Err(MediaError::InvalidDuration(duration_s));
        }
        Ok(FrameSequence { frames, duration_s })
    }
}

/// Select k keyframes at the centers of k equal time bins. Bin center j sits
/// at (2j+1)/(2k) of the duration; with uniform frame timing that is frame
/// floor((2j+1) * n / (2k)). Indices are nondecreasing, and k = n returns
/// every frame exactly once.
pub fn sample_keyframes(video: &FrameSequence, k: usize) -> Result<Vec<ImageRef>, MediaError> {
    if k == 0 {
        return Err(MediaError::InvalidKeyframeCount);
    }
    let n = video.frames.len();
    if n == 0 {
        return Err(MediaError::EmptyVideo);
    }
    Ok((0..k)
        .map(|j| {
            let idx = ((2 * j + 1) * n / (2 * k)).min(n - 1);
            video.frames[idx].clone()
        })
        .collect())
}

/// Which of k sampled keyframes stands for the scene: the middle one,
/// index floor(k / 2).
pub fn representative_index(k: usize) -> Result<usize, MediaError> {
    if k == 0 {
        return Err(MediaError::InvalidKeyframeCount);
    }
    Ok(k / 2)
}

const WAV_SCALE: f64 = 32768.0;

fn map_hound_read_error(err: hound::Error, path: &Path) -> MediaError {
    match err {
        hound::Error::IoError(e) => MediaError::Corrupt {
            path: path.to_path_buf(),
            detail: format!("truncated or unreadable stream: {e}"),
        },
        hound::Error::FormatError(msg) => MediaError::Corrupt {
            path: path.to_path_buf(),
            detail: msg.to_string(),
        },
        other => MediaError::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    }
}

/// Decode a RIFF/WAVE file: 16-bit PCM or 32-bit float, any channel count.
/// Integer samples are scaled by 1/32768; multichannel audio is downmixed to
/// mono by the arithmetic mean over channels.
pub fn read_wav(path: &Path) -> Result<AudioClip, MediaError> {
    let bytes = std::fs::read(path).map_err(|source| MediaError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_wav(&bytes, path)
}

/// Decode WAV bytes already in memory (wire payloads).
pub fn read_wav_bytes(bytes: &[u8]) -> Result<AudioClip, MediaError> {
    decode_wav(bytes, Path::new("<memory>"))
}

fn decode_wav(bytes: &[u8], path: &Path) -> Result<AudioClip, MediaError> {
    let mut reader =
        hound::WavReader::new(Cursor::new(bytes)).map_err(|e| map_hound_read_error(e, path))?;
    let spec = reader.spec();
    if spec.channels == 0 {
        return Err(MediaError::Corrupt {
            path: path.to_path_buf(),
            detail: "zero channels".into(),
        });
    }
    let mono: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => {
            let samples: Result<Vec<i16>, _> = reader.samples::<i16>().collect();
            let samples = samples.map_err(|e| map_hound_read_error(e, path))?;
            downmix(&samples, spec.channels, |s| s as f64 / WAV_SCALE)
        }
        (hound::SampleFormat::Float, 32) => {
            let samples: Result<Vec<f32>, _> = reader.samples::<f32>().collect();
            let samples = samples.map_err(|e| map_hound_read_error(e, path))?;
            downmix(&samples, spec.channels, |s| s as f64)
        }
        (format, bits) => {
            return Err(MediaError::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: format!("{bits}-bit {format:?} (expected 16-bit PCM or 32-bit float)"),
            })
        }
    };
    AudioClip::new(mono, spec.sample_rate)
}

fn downmix<T: Copy>(interleaved: &[T], channels: u16, to_f64: impl Fn(T) -> f64) -> Vec<f32> {
    let ch = channels as usize;
    interleaved
        .chunks_exact(ch)
        .map(|frame| {
            let sum: f64 = frame.iter().map(|&s| to_f64(s)).sum();
            (sum / ch as f64) as f32
        })
        .collect()
}

/// Encode a clip as mono 16-bit PCM WAV bytes. Sample n is quantized as
/// round(s * 32768) clamped to the i16 range, so -1.0 maps exactly to -32768
/// and 1.0 clips to 32767.
pub fn write_wav_bytes(clip: &AudioClip) -> Result<Vec<u8>, MediaError> {
    if clip.sample_rate_hz == 0 {
        return Err(MediaError::InvalidSampleRate);
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut cursor, spec).map_err(|e| {
            MediaError::Corrupt {
                path: PathBuf::from("<memory>"),
                detail: e.to_string(),
            }
        })?;
        for &s in &clip.samples {
            let q = (s as f64 * WAV_SCALE).round().clamp(-32768.0, 32767.0) as i16;
            writer.write_sample(q).map_err(|e| MediaError::Corrupt {
                path: PathBuf::from("<memory>"),
                detail: e.to_string(),
            })?;
        }
        writer.finalize().map_err(|e| MediaError::Corrupt {
            path: PathBuf::from("<memory>"),
            detail: e.to_string(),
        })?;
    }
    Ok(cursor.into_inner())
}

pub fn write_wav(clip: &AudioClip, path: &Path) -> Result<(), MediaError> {
    let bytes = write_wav_bytes(clip)?;
    std::fs::write(path, bytes).map_err(|source| MediaError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Deserialize)]
struct FrameManifest {
    duration_s: f64,
    frames: Vec<String>,
}

/// Load a frame manifest: a JSON file listing ordered frame paths (relative
/// to the manifest's directory) and the total duration in seconds.
pub fn load_frame_manifest(path: &Path) -> Result<FrameSequence, MediaError> {
    let text = std::fs::read_to_string(path).map_err(|source| MediaError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let manifest: FrameManifest =
        serde_json::from_str(&text).map_err(|e| MediaError::Corrupt {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let frames = manifest
        .frames
        .iter()
        .map(|f| ImageRef::Path(base.join(f)))
        .collect();
    FrameSequence::new(frames, manifest.duration_s)
}

/// Run an external frame-extraction command template. `{input}` and
/// `{output}` placeholders are substituted per whitespace-split token; no
/// shell is involved. The template is expected to populate `output_dir` with
/// frames and a manifest.
pub fn run_extract_command(
    template: &str,
    input: &Path,
    output_dir: &Path,
) -> Result<(), MediaError> {
    let tokens: Vec<String> = template
        .split_whitespace()
        .map(|t| {
            t.replace("{input}", &input.display().to_string())
                .replace("{output}", &output_dir.display().to_string())
        })
        .collect();
    let Some((program, args)) = tokens.split_first() else {
        return Err(MediaError::ExtractFailed("empty command template".into()));
    };
    std::fs::create_dir_all(output_dir).map_err(|source| MediaError::Io {
        path: output_dir.to_path_buf(),
        source,
    })?;
    let output = std::process::Command::new(program)
        .args(args)
        .output()
        .map_err(|e| MediaError::ExtractFailed(format!("failed to spawn `{program}`: {e}")))?;
    if !output.status.success() {
        let stderr = String::from_utf8_lossy(&output.stderr);
        return Err(MediaError::ExtractFailed(format!(
            "`{program}` exited with {}: {}",
            output.status,
            stderr.chars().take(200).collect::<String>()
        )));
    }
    Ok(())
}
