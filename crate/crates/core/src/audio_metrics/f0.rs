//! Fundamental-frequency estimation by normalized autocorrelation.
//!
//! Each 40 ms window is mean-subtracted, correlated against itself over the
//! lag range for 50 to 600 Hz, and scored by the height of its best
//! correlation peak. Frames whose peak clarity falls below 0.3 are marked
//! unvoiced (0 in the contour). Among near-equal peaks the shortest lag
//! wins, which keeps pure tones from octave-doubling, and the winning lag is
//! refined by parabolic interpolation.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::AudioMetricError;
use crate::media::AudioClip;

pub const DEFAULT_FRAME_HOP_S: f64 = 0.01;
pub const F0_WINDOW_S: f64 = 0.04;
pub const F0_MIN_HZ: f64 = 50.0;
pub const F0_MAX_HZ: f64 = 600.0;
pub const CLARITY_THRESHOLD: f64 = 0.3;

/// Relative height a shorter-lag peak needs to beat the global maximum.
const PEAK_TOLERANCE: f64 = 0.9;

/// Frame-by-frame F0 in Hz; 0 marks an unvoiced frame. Voiced values always
/// lie inside [50, 600].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitchContour {
    pub f0_hz: Vec<f64>,
    pub frame_hop_s: f64,
}

impl PitchContour {
    pub fn voiced(&self) -> Vec<f64> {
        self.f0_hz.iter().copied().filter(|&f| f > 0.0).collect()
    }

    pub fn voiced_fraction(&self) -> f64 {
        if self.f0_hz.is_empty() {
            return 0.0;
        }
        self.voiced().len() as f64 / self.f0_hz.len() as f64
    }
}

/// Estimate the pitch contour of a clip at the given hop. Errors if the clip
/// is shorter than one analysis window.
pub fn estimate_f0(clip: &AudioClip, frame_hop_s: f64) -> Result<PitchContour, AudioMetricError> {
    if !(frame_hop_s.is_finite() && frame_hop_s > 0.0) {
        return Err(AudioMetricError::InvalidParameter(
            "frame_hop_s must be positive",
        ));
    }
    let sr = clip.sample_rate_hz as f64;
    let window = (F0_WINDOW_S * sr).round() as usize;
    if clip.samples.len() < window || window < 4 {
        return Err(AudioMetricError::TooShort {
            needed: window,
            got: clip.samples.len(),
        });
    }
    let hop = ((frame_hop_s * sr).round() as usize).max(1);
    let lag_min = (sr / F0_MAX_HZ).ceil() as usize;
    let lag_max = ((sr / F0_MIN_HZ).floor() as usize).min(window - 2);

    let starts: Vec<usize> = (0..)
        .map(|k| k * hop)
        .take_while(|s| s + window <= clip.samples.len())
        .collect();

    let frame_f0 = |&start: &usize| -> f64 {
        frame_pitch(&clip.samples[start..start + window], sr, lag_min, lag_max)
    };

    #[cfg(feature = "parallel")]
    let f0_hz: Vec<f64> = starts.par_iter().map(frame_f0).collect();
    #[cfg(not(feature = "parallel"))]
    let f0_hz: Vec<f64> = starts.iter().map(frame_f0).collect();

    Ok(PitchContour { f0_hz, frame_hop_s })
}

fn frame_pitch(frame: &[f32], sr: f64, lag_min: usize, lag_max: usize) -> f64 {
    if lag_min > lag_max || lag_min < 1 {
        return 0.0;
    }
    let w = frame.len();
    let mean = frame.iter().map(|&s| s as f64).sum::<f64>() / w as f64;
    let x: Vec<f64> = frame.iter().map(|&s| s as f64 - mean).collect();

    // Prefix energies make both normalization terms O(1) per lag.
    let mut prefix = vec![0.0f64; w + 1];
    for i in 0..w {
        prefix[i + 1] = prefix[i] + x[i] * x[i];
    }

    let r_at = |lag: usize| -> f64 {
        let overlap = w - lag;
        let num: f64 = (0..overlap).map(|i| x[i] * x[i + lag]).sum();
        let e_head = prefix[overlap];
        let e_tail = prefix[w] - prefix[lag];
        let denom = (e_head * e_tail).sqrt();
        if denom <= 1e-12 {
            0.0
        } else {
            num / denom
        }
    };

    let r: Vec<f64> = (lag_min..=lag_max).map(r_at).collect();
    let r_max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(r_max.is_finite() && r_max >= CLARITY_THRESHOLD) {
        return 0.0;
    }

    // Shortest lag whose local peak is close to the global maximum; a pure
    // tone has near-equal peaks at every multiple of its period.
    let floor = PEAK_TOLERANCE * r_max;
    let mut pick = None;
    for k in 0..r.len() {
        let left_ok = k == 0 || r[k] >= r[k - 1];
        let right_ok = k + 1 == r.len() || r[k] >= r[k + 1];
        if left_ok && right_ok && r[k] >= floor {
            pick = Some(k);
            break;
        }
    }
    let k = match pick {
        Some(k) => k,
        None => {
            r.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(k, _)| k)
                .unwrap_or(0)
        }
    };

    let lag = (lag_min + k) as f64 + parabolic_offset(&r, k);
    let f0 = sr / lag;
    f0.clamp(F0_MIN_HZ, F0_MAX_HZ)
}

fn parabolic_offset(r: &[f64], k: usize) -> f64 {
    if k == 0 || k + 1 >= r.len() {
        return 0.0;
    }
    let (a, b, c) = (r[k - 1], r[k], r[k + 1]);
    let denom = a - 2.0 * b + c;
    if denom.abs() < 1e-12 {
        return 0.0;
    }
    (0.5 * (a - c) / denom).clamp(-1.0, 1.0)
}

#[derive(Debug, Serialize, Deserialize)]
struct ContourRecord {
    frame_index: usize,
    f0_hz: f64,
}

/// Write a contour as line-delimited records of {frame_index, f0_hz}.
pub fn save_contour(contour: &PitchContour, path: &Path) -> Result<(), AudioMetricError> {
    let io_err = |source| AudioMetricError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = std::io::BufWriter::new(file);
    for (frame_index, &f0_hz) in contour.f0_hz.iter().enumerate() {
        let record = ContourRecord { frame_index, f0_hz };
        serde_json::to_writer(&mut w, &record).map_err(|e| AudioMetricError::CorruptContour {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        writeln!(w).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Read a contour saved by `save_contour`. The record format carries no hop,
/// so the caller supplies the hop the contour was computed at.
pub fn load_contour(path: &Path, frame_hop_s: f64) -> Result<PitchContour, AudioMetricError> {
    let file = std::fs::File::open(path).map_err(|source| AudioMetricError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    let mut f0_hz = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| AudioMetricError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ContourRecord =
            serde_json::from_str(&line).map_err(|e| AudioMetricError::CorruptContour {
                path: path.to_path_buf(),
                detail: format!("line {}: {e}", lineno + 1),
            })?;
        if record.frame_index != f0_hz.len() {
            log::warn!(
                "contour {}: frame_index {} at position {}",
                path.display(),
                record.frame_index,
                f0_hz.len()
            );
        }
        f0_hz.push(record.f0_hz);
    }
    Ok(PitchContour { f0_hz, frame_hop_s })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn population_std(values: &[f64]) -> f64 {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
    }

    #[test]
    fn pure_tones_land_within_five_hz() {
        for freq in [80.0, 150.0, 220.0, 300.0, 400.0] {
            let clip = AudioClip::sine(freq, 0.5, 22050, 0.5);
            let contour = estimate_f0(&clip, DEFAULT_FRAME_HOP_S).unwrap();
            let voiced = contour.voiced();
            assert!(
                voiced.len() >= contour.f0_hz.len() * 9 / 10,
                "{freq} Hz tone should be voiced nearly everywhere"
            );
            let mean = voiced.iter().sum::<f64>() / voiced.len() as f64;
            assert!(
                (mean - freq).abs() <= 5.0,
                "mean estimate {mean} for a {freq} Hz tone"
            );
            assert!(
                population_std(&voiced) < 5.0,
                "estimate spread too wide at {freq} Hz"
            );
        }
    }

    #[test]
    fn silence_is_unvoiced() {
        let clip = AudioClip::new(vec![0.0; 22050], 22050).unwrap();
        let contour = estimate_f0(&clip, DEFAULT_FRAME_HOP_S).unwrap();
        assert!(contour.f0_hz.iter().all(|&f| f == 0.0));
        assert_eq!(contour.voiced_fraction(), 0.0);
    }

    #[test]
    fn white_noise_is_mostly_unvoiced() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let samples: Vec<f32> = (0..22050).map(|_| rng.random_range(-0.9..0.9)).collect();
        let clip = AudioClip::new(samples, 22050).unwrap();
        let contour = estimate_f0(&clip, DEFAULT_FRAME_HOP_S).unwrap();
        let unvoiced = contour.f0_hz.iter().filter(|&&f| f == 0.0).count();
        assert!(
            unvoiced as f64 >= 0.8 * contour.f0_hz.len() as f64,
            "only {unvoiced}/{} frames unvoiced",
            contour.f0_hz.len()
        );
    }

    #[test]
    fn voiced_values_stay_in_band() {
        let clip = AudioClip::sine(620.0, 0.3, 22050, 0.5);
        let contour = estimate_f0(&clip, DEFAULT_FRAME_HOP_S).unwrap();
        for &f in &contour.f0_hz {
            assert!(f == 0.0 || (50.0..=600.0).contains(&f), "f0 {f} out of band");
        }
    }

    #[test]
    fn too_short_clip_errors() {
        let clip = AudioClip::new(vec![0.1; 100], 22050).unwrap();
        match estimate_f0(&clip, DEFAULT_FRAME_HOP_S) {
            Err(AudioMetricError::TooShort { needed: 882, got: 100 }) => {}
            other => panic!("expected TooShort, got {other:?}"),
        }
    }

    #[test]
    fn frame_count_follows_hop() {
        let clip = AudioClip::sine(220.0, 1.0, 22050, 0.5);
        let contour = estimate_f0(&clip, DEFAULT_FRAME_HOP_S).unwrap();
        // 22050 samples, 882-sample window, hop 220 (rounded 0.01 * 22050 is 221).
        let hop = (0.01f64 * 22050.0).round() as usize;
        let expected = (clip.samples.len() - 882) / hop + 1;
        assert_eq!(contour.f0_hz.len(), expected);
        assert!((contour.frame_hop_s - 0.01).abs() < 1e-12);
    }

    #[test]
    fn contour_round_trips_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("contour.jsonl");
        let contour = PitchContour {
            f0_hz: vec![0.0, 220.5, 221.0, 0.0],
            frame_hop_s: 0.01,
        };
        save_contour(&contour, &path).unwrap();
        let back = load_contour(&path, 0.01).unwrap();
        assert_eq!(back, contour);
    }

    #[test]
    fn corrupt_contour_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("contour.jsonl");
        std::fs::write(&path, "{\"frame_index\":0,\"f0_hz\":1.0}\nnot json\n").unwrap();
        match load_contour(&path, 0.01) {
            Err(AudioMetricError::CorruptContour { detail, .. }) => {
                assert!(detail.contains("line 2"), "detail: {detail}")
            }
            other => panic!("expected corrupt contour, got {other:?}"),
        }
    }
}
