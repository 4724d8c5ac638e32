//! Batch evaluation over a completed story run.
//!
//! Every scene is scored independently on four axes: BLEU and embedding F1
//! of the dialogue against reference texts, embedding alignment between the
//! dialogue and its keyframe, and normalized DTW between the scene audio's
//! pitch contour and the speaker's reference contour. Metrics that cannot be
//! computed are recorded as skipped with a reason, never as zero. Aggregates
//! are population mean and standard deviation over the scenes where a metric
//! is present.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::audio_metrics::{
    dtw_distance, estimate_f0, load_contour, AudioMetricError, PitchContour, DEFAULT_FRAME_HOP_S,
};
use crate::backend::{
    BackendConfig, BackendSet, EmbedClient, EmbedPayload, EmbeddingVector, SpeechClient,
    SpeechRequest,
};
use crate::media::{read_wav, AudioClip, MediaError};
use crate::pipeline::{RunConfig, StoryRunResult};
use crate::story::{SceneArtifact, StorySpec};
use crate::text_metrics::{bert_f1, bleu_score, clip_score, tokenize_words, ScorePair};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no scenes to evaluate")]
    NoScenes,
    #[error("all {0} scenes failed evaluation")]
    AllScenesFailed(usize),
    #[error("invalid references file {path}: {detail}")]
    BadReferences { path: PathBuf, detail: String },
    #[error(transparent)]
    Media(#[from] MediaError),
    #[error(transparent)]
    Audio(#[from] AudioMetricError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Reference audio for one speaker: either a clip to analyze here, or a
/// contour computed elsewhere.
#[derive(Debug, Clone)]
pub enum AudioReference {
    Clip(AudioClip),
    Contour(PitchContour),
}

/// Everything the harness compares against.
#[derive(Debug, Clone, Default)]
pub struct EvalReferences {
    /// scene_index -> reference texts. Scenes without an entry fall back to
    /// {scene prompt, caption} from the artifact itself.
    pub texts: HashMap<usize, Vec<String>>,
    /// speaker -> reference audio for voice comparison.
    pub audio: HashMap<String, AudioReference>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedMetric {
    pub metric: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub scene_index: usize,
    pub bleu: Option<f64>,
    pub bert: Option<ScorePair>,
    pub clip_score: Option<f64>,
    pub dtw: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<SkippedMetric>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SceneMetrics {
    fn empty(scene_index: usize) -> Self {
        SceneMetrics {
            scene_index,
            bleu: None,
            bert: None,
            clip_score: None,
            dtw: None,
            skipped: Vec::new(),
            error: None,
        }
    }

    fn skip(&mut self, metric: &str, reason: impl Into<String>) {
        self.skipped.push(SkippedMetric {
            metric: metric.to_string(),
            reason: reason.into(),
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation (the scene set is the whole population).
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<MeanStd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(MeanStd {
            mean,
            std: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub bleu: Option<MeanStd>,
    pub bert_f1: Option<MeanStd>,
    pub clip_score: Option<MeanStd>,
    pub dtw: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub title: String,
    pub generated_at: String,
    pub config: RunConfig,
    pub per_scene: Vec<SceneMetrics>,
    pub aggregate: AggregateMetrics,
}

/// Mean and population std per metric over the scenes where it is present.
pub fn aggregate(per_scene: &[SceneMetrics]) -> AggregateMetrics {
    let collect = |f: &dyn Fn(&SceneMetrics) -> Option<f64>| -> Vec<f64> {
        per_scene.iter().filter_map(f).collect()
    };
    AggregateMetrics {
        bleu: MeanStd::of(&collect(&|s| s.bleu)),
        bert_f1: MeanStd::of(&collect(&|s| s.bert.map(|b| b.f1))),
        clip_score: MeanStd::of(&collect(&|s| s.clip_score)),
        dtw: MeanStd::of(&collect(&|s| s.dtw)),
    }
}

fn embed_tokens(
    embed: &EmbedClient,
    tokens: &[String],
) -> Result<Vec<EmbeddingVector>, crate::backend::BackendError> {
    tokens
        .iter()
        .map(|t| embed.embed(&EmbedPayload::Text(t.clone())))
        .collect()
}

fn scene_metrics(
    artifact: &SceneArtifact,
    refs: &EvalReferences,
    embed: &EmbedClient,
) -> SceneMetrics {
    let mut m = SceneMetrics::empty(artifact.scene_index);

    let Some(audio) = &artifact.audio else {
        m.error = Some("scene artifact has no audio".to_string());
        return m;
    };

    let default_texts;
    let texts: &[String] = match refs.texts.get(&artifact.scene_index) {
        Some(t) if !t.is_empty() => t,
        _ => {
            default_texts = vec![artifact.full_prompt.clone(), artifact.caption.clone()];
            &default_texts
        }
    };

    let candidate = tokenize_words(&artifact.dialogue);
    let ref_seqs: Vec<_> = texts.iter().map(|t| tokenize_words(t)).collect();
    m.bleu = Some(bleu_score(&candidate, &ref_seqs));

    match embed_tokens(embed, &candidate.tokens) {
        Err(e) => m.skip("bert", format!("candidate embedding failed: {e}")),
        Ok(cand_vecs) if cand_vecs.is_empty() => {
            m.skip("bert", "dialogue has no embeddable tokens")
        }
        Ok(cand_vecs) => {
            // Multiple references: keep the best-F1 pairing.
            let mut best: Option<ScorePair> = None;
            for seq in &ref_seqs {
                let ref_vecs = match embed_tokens(embed, &seq.tokens) {
                    Ok(v) if !v.is_empty() => v,
                    Ok(_) => continue,
                    Err(e) => {
                        m.skip("bert", format!("reference embedding failed: {e}"));
                        continue;
                    }
                };
                match bert_f1(&cand_vecs, &ref_vecs) {
                    Ok(pair) if best.is_none_or(|b| pair.f1 > b.f1) => best = Some(pair),
                    Ok(_) => {}
                    Err(e) => m.skip("bert", e.to_string()),
                }
            }
            match best {
                Some(pair) => m.bert = Some(pair),
                None => m.skip("bert", "no usable reference tokens"),
            }
        }
    }

    match &artifact.keyframe {
        None => m.skip("clip_score", "no keyframe available for this scene"),
        Some(frame) => {
            let scored = embed
                .embed(&EmbedPayload::Text(artifact.dialogue.clone()))
                .and_then(|t| {
                    embed
                        .embed(&EmbedPayload::Image(frame.clone()))
                        .map(|i| (t, i))
                });
            match scored {
                Ok((text_vec, image_vec)) => match clip_score(&text_vec, &image_vec) {
                    Ok(v) => m.clip_score = Some(v),
                    Err(e) => m.skip("clip_score", e.to_string()),
                },
                Err(e) => m.skip("clip_score", format!("embedding failed: {e}")),
            }
        }
    }

    match refs.audio.get(&artifact.speaker) {
        None => m.skip(
            "dtw",
            format!("no reference audio for speaker {}", artifact.speaker),
        ),
        Some(reference) => {
            let ref_contour = match reference {
                AudioReference::Contour(c) => Ok(c.clone()),
                AudioReference::Clip(clip) => estimate_f0(clip, DEFAULT_FRAME_HOP_S),
            };
            let outcome = ref_contour.and_then(|rc| {
                let cand = estimate_f0(audio, rc.frame_hop_s)?;
                dtw_distance(&cand, &rc)
            });
            match outcome {
                Ok(d) => m.dtw = Some(d),
                Err(e) => m.skip("dtw", e.to_string()),
            }
        }
    }

    m
}

/// Score every scene of a run. Per-scene failures become error entries and
/// evaluation continues; only a run where every scene failed is an error.
pub fn evaluate_story(
    result: &StoryRunResult,
    refs: &EvalReferences,
    embed: &EmbedClient,
    title: &str,
    config: &RunConfig,
) -> Result<MetricsReport, EvalError> {
    if result.artifacts.is_empty() {
        return Err(EvalError::NoScenes);
    }

    #[cfg(feature = "parallel")]
    let per_scene: Vec<SceneMetrics> = result
        .artifacts
        .par_iter()
        .map(|a| scene_metrics(a, refs, embed))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let per_scene: Vec<SceneMetrics> = result
        .artifacts
        .iter()
        .map(|a| scene_metrics(a, refs, embed))
        .collect();

    if per_scene.iter().all(|s| s.error.is_some()) {
        return Err(EvalError::AllScenesFailed(per_scene.len()));
    }

    let aggregate = aggregate(&per_scene);
    Ok(MetricsReport {
        title: title.to_string(),
        generated_at: chrono::Utc::now().to_rfc3339(),
        config: config.clone(),
        per_scene,
        aggregate,
    })
}

/// References that score a mock run against itself: each scene's own
/// dialogue as its text reference, and a freshly synthesized mock tone per
/// speaker as the voice reference. Useful as an offline smoke path: text
/// metrics hit their identity values and voice distances stay near zero.
pub fn self_references(result: &StoryRunResult, spec: &StorySpec) -> EvalReferences {
    let mut texts = HashMap::new();
    for a in &result.artifacts {
        texts.insert(a.scene_index, vec![a.dialogue.clone()]);
    }

    let speech = SpeechClient::new(BackendConfig::default(), BackendSet::pitches_for(spec));
    let mut audio = HashMap::new();
    for character in &spec.characters {
        let request = SpeechRequest::new(
            character.voice_transcript.clone(),
            character.name.clone(),
            Vec::new(),
            Vec::new(),
            0,
        );
        match speech.render_speech(&request) {
            Ok(clip) => {
                audio.insert(character.name.clone(), AudioReference::Clip(clip));
            }
            Err(e) => log::warn!(
                "could not synthesize self-reference for {}: {e}",
                character.name
            ),
        }
    }

    EvalReferences { texts, audio }
}

/// On-disk shape of a references file.
#[derive(Debug, Deserialize)]
struct ReferencesFile {
    #[serde(default)]
    texts: HashMap<String, Vec<String>>,
    #[serde(default)]
    audio: HashMap<String, AudioReferenceSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AudioReferenceSpec {
    wav: Option<String>,
    contour: Option<String>,
}

/// Load references from a JSON file: `texts` maps scene indices (as JSON
/// object keys) to reference strings, `audio` maps speakers to either a
/// `wav` file or a `contour` file. Relative paths resolve against the
/// references file's directory; `frame_hop_s` applies to loaded contours.
pub fn load_references(path: &Path, frame_hop_s: f64) -> Result<EvalReferences, EvalError> {
    let bad = |detail: String| EvalError::BadReferences {
        path: path.to_path_buf(),
        detail,
    };
    let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: ReferencesFile = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));

    let mut texts = HashMap::new();
    for (key, value) in file.texts {
        let index: usize = key
            .parse()
            .map_err(|_| bad(format!("scene key {key:?} is not an index")))?;
        texts.insert(index, value);
    }

    let mut audio = HashMap::new();
    for (speaker, spec) in file.audio {
        let reference = match (&spec.wav, &spec.contour) {
            (Some(wav), None) => AudioReference::Clip(read_wav(&base.join(wav))?),
            (None, Some(contour)) => {
                AudioReference::Contour(load_contour(&base.join(contour), frame_hop_s)?)
            }
            _ => {
                return Err(bad(format!(
                    "speaker {speaker:?} needs exactly one of \"wav\" or \"contour\""
                )))
            }
        };
        audio.insert(speaker, reference);
    }

    Ok(EvalReferences { texts, audio })
}

/// Write a report as pretty JSON.
pub fn write_report(report: &MetricsReport, path: &Path) -> Result<(), EvalError> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(path, json + "\n").map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}
