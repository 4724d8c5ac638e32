//! Scene-by-scene story orchestration.
//!
//! Each scene runs a fixed chain: compose the scene prompt, pick a
//! representative keyframe, caption it, assemble the three-part generation
//! prompt from prompt + caption + dialogue memory, generate the line, commit
//! it to the bank, then synthesize speech with a short window of prior turns
//! as context. Scenes are strictly sequential because every scene's prompt
//! depends on the dialogue committed before it.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, BackendSet, ContextTurn, Mode, ReferenceClip, SpeechRequest};
use crate::bank::{
    assemble_narrative_prompt, collapse_newlines, compose_scene_prompt, history_window, BankError,
    Capacity, DialogueEntry, NarrativeBank,
};
use crate::media::{
    read_wav, representative_index, sample_keyframes, write_wav, FrameSequence, ImageRef,
    MediaError,
};
use crate::story::{resolve_speaker, SceneArtifact, SpecError, StorySpec};

/// Caption recorded when image conditioning is disabled.
pub const PLACEHOLDER_CAPTION: &str = "(no image context)";

pub const TRANSCRIPT_FILENAME: &str = "transcript.jsonl";
pub const BANK_DUMP_FILENAME: &str = "bank.jsonl";
pub const SPEC_ECHO_FILENAME: &str = "story_spec.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Media(#[from] MediaError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("invalid run config: {0}")]
    InvalidConfig(&'static str),
    #[error("no video frames for scene {scene_id} and the caption backend needs an image")]
    MissingVideo { scene_id: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt transcript {path} line {line}: {detail}")]
    CorruptTranscript {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error(
        "story aborted at scene {failed_scene} (last committed: {last_committed:?}): {cause}"
    )]
    StoryAborted {
        failed_scene: usize,
        last_committed: Option<usize>,
        #[source]
        cause: Box<PipelineError>,
    },
}

/// Knobs for one story run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Keyframes sampled per scene video.
    pub keyframe_count_k: usize,
    /// Dialogue-memory size: how many past utterances the bank keeps and the
    /// prompt shows.
    pub rnb_capacity: Capacity,
    /// Prior turns passed to the speech backend as conversational context.
    pub speech_context_turns: usize,
    pub output_dir: PathBuf,
    /// Reserved for mock perturbations and future sampling backends.
    pub random_seed: u64,
    /// When false, captioning is skipped and prompts carry a fixed
    /// placeholder instead of image context.
    pub image_conditioning: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            keyframe_count_k: 5,
            rnb_capacity: Capacity::Unbounded,
            speech_context_turns: 2,
            output_dir: PathBuf::from("out"),
            random_seed: 0,
            image_conditioning: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.keyframe_count_k == 0 {
            return Err(PipelineError::InvalidConfig(
                "keyframe_count_k must be at least 1",
            ));
        }
        Ok(())
    }
}

/// One line of the on-disk transcript. `audio_path` is relative to the
/// output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub scene_index: usize,
    pub scene_id: String,
    pub speaker: String,
    pub full_prompt: String,
    pub caption: String,
    pub assembled_prompt: String,
    pub dialogue: String,
    pub audio_path: String,
}

#[derive(Debug, Clone)]
pub struct StoryRunResult {
    pub artifacts: Vec<SceneArtifact>,
    pub output_dir: PathBuf,
    /// Relative to `output_dir`.
    pub transcript_path: PathBuf,
    /// Relative to `output_dir`.
    pub bank_dump_path: PathBuf,
}

/// Speaker name made safe for a filename: alphanumerics, hyphen, and
/// underscore survive; everything else becomes an underscore.
pub fn sanitize_filename(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn scene_wav_name(scene_index: usize, speaker: &str) -> String {
    format!("scene_{scene_index:03}_{}.wav", sanitize_filename(speaker))
}

fn load_reference_clips(
    spec: &StorySpec,
    speaker: &str,
) -> Result<Vec<ReferenceClip>, PipelineError> {
    let Some(profile) = spec.character(speaker) else {
        return Ok(Vec::new());
    };
    let Some(path) = &profile.voice_reference else {
        return Ok(Vec::new());
    };
    let audio = read_wav(path)?;
    Ok(vec![ReferenceClip {
        audio,
        transcript: profile.voice_transcript.clone(),
    }])
}

/// Run one scene against the bank state accumulated so far and return the
/// artifact plus the advanced bank. Nothing is written to disk here.
pub fn run_scene_step(
    spec: &StorySpec,
    scene_index: usize,
    mut bank: NarrativeBank,
    video: Option<&FrameSequence>,
    backends: &BackendSet,
    config: &RunConfig,
) -> Result<(SceneArtifact, NarrativeBank), PipelineError> {
    config.validate()?;
    let speaker = resolve_speaker(spec, scene_index)?.to_string();
    let scene = &spec.scenes[scene_index];

    let full_prompt = compose_scene_prompt(&scene.setting, &scene.action)?;

    let (keyframe, caption) = if config.image_conditioning {
        let keyframe = match video {
            Some(v) => {
                let frames = sample_keyframes(v, config.keyframe_count_k)?;
                let rep = representative_index(config.keyframe_count_k)?.min(frames.len() - 1);
                frames[rep].clone()
            }
            None if backends.caption.mode() == Mode::Mock => {
                ImageRef::Inline(format!("placeholder:{}", scene.scene_id).into_bytes())
            }
            None => {
                return Err(PipelineError::MissingVideo {
                    scene_id: scene.scene_id.clone(),
                })
            }
        };
        let raw = backends.caption.caption_scene(&keyframe)?;
        (Some(keyframe), collapse_newlines(&raw))
    } else {
        (None, PLACEHOLDER_CAPTION.to_string())
    };

    let history = history_window(&bank, config.rnb_capacity);
    let assembled = assemble_narrative_prompt(&full_prompt, &caption, history)?.render();

    let dialogue = backends.dialogue.generate_dialogue(&assembled, &speaker)?;

    // Context is the conversation before this scene; the new line itself is
    // the synthesis target, not context.
    let context_turns: Vec<ContextTurn> = bank
        .entries()
        .iter()
        .map(|e| ContextTurn {
            speaker: e.speaker.clone(),
            text: e.text.clone(),
            audio: None,
        })
        .collect();

    bank.append_entry(DialogueEntry {
        scene_index,
        speaker: speaker.clone(),
        text: dialogue.clone(),
        caption_at_generation: caption.clone(),
    })?;

    let references = load_reference_clips(spec, &speaker)?;
    let request = SpeechRequest::new(
        dialogue.clone(),
        speaker.clone(),
        references,
        context_turns,
        config.speech_context_turns,
    );
    let audio = backends.speech.render_speech(&request)?;

    let artifact = SceneArtifact {
        scene_index,
        scene_id: scene.scene_id.clone(),
        speaker,
        full_prompt,
        caption,
        assembled_prompt: assembled,
        dialogue,
        audio: Some(audio),
        keyframe,
    };
    Ok((artifact, bank))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Run every scene in order, persisting as it goes: one WAV and one
/// transcript record per scene, the spec echoed for provenance, and the
/// final bank dump on success. A mid-story failure aborts with the last
/// committed scene; completed artifacts stay on disk.
pub fn run_story(
    spec: &StorySpec,
    videos: &HashMap<String, FrameSequence>,
    backends: &BackendSet,
    config: &RunConfig,
) -> Result<StoryRunResult, PipelineError> {
    config.validate()?;
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(io_err(out))?;

    let spec_echo_path = out.join(SPEC_ECHO_FILENAME);
    let spec_json = serde_json::to_string_pretty(spec).expect("spec serializes");
    fs::write(&spec_echo_path, spec_json + "\n").map_err(io_err(&spec_echo_path))?;

    let transcript_abs = out.join(TRANSCRIPT_FILENAME);
    let mut transcript = fs::File::create(&transcript_abs).map_err(io_err(&transcript_abs))?;

    let mut bank = NarrativeBank::new(config.rnb_capacity);
    let mut artifacts: Vec<SceneArtifact> = Vec::new();
    let mut last_committed: Option<usize> = None;

    for scene_index in 0..spec.scenes.len() {
        let video = videos.get(&spec.scenes[scene_index].scene_id);
        let aborted = |cause: PipelineError| PipelineError::StoryAborted {
            failed_scene: scene_index,
            last_committed,
            cause: Box::new(cause),
        };

        let (artifact, new_bank) =
            match run_scene_step(spec, scene_index, bank, video, backends, config) {
                Ok(pair) => pair,
                Err(cause) => return Err(aborted(cause)),
            };
        bank = new_bank;

        let wav_name = scene_wav_name(scene_index, &artifact.speaker);
        let wav_abs = out.join(&wav_name);
        let clip = artifact.audio.as_ref().expect("step always attaches audio");
        if let Err(cause) = write_wav(clip, &wav_abs) {
            return Err(aborted(cause.into()));
        }

        let record = TranscriptRecord {
            scene_index: artifact.scene_index,
            scene_id: artifact.scene_id.clone(),
            speaker: artifact.speaker.clone(),
            full_prompt: artifact.full_prompt.clone(),
            caption: artifact.caption.clone(),
            assembled_prompt: artifact.assembled_prompt.clone(),
            dialogue: artifact.dialogue.clone(),
            audio_path: wav_name,
        };
        let line = serde_json::to_string(&record).expect("record serializes");
        if let Err(e) = transcript
            .write_all(line.as_bytes())
            .and_then(|()| transcript.write_all(b"\n"))
            .and_then(|()| transcript.flush())
        {
            return Err(aborted(io_err(&transcript_abs)(e)));
        }

        last_committed = Some(scene_index);
        artifacts.push(artifact);
    }

    let bank_abs = out.join(BANK_DUMP_FILENAME);
    let mut dump = String::new();
    for entry in bank.entries() {
        dump.push_str(&serde_json::to_string(entry).expect("entry serializes"));
        dump.push('\n');
    }
    fs::write(&bank_abs, dump).map_err(io_err(&bank_abs))?;

    Ok(StoryRunResult {
        artifacts,
        output_dir: out.clone(),
        transcript_path: PathBuf::from(TRANSCRIPT_FILENAME),
        bank_dump_path: PathBuf::from(BANK_DUMP_FILENAME),
    })
}

/// Rebuild a StoryRunResult from a completed output directory. Audio is
/// reloaded from the per-scene WAVs; keyframes are not persisted, so they
/// come back as None.
pub fn load_run(output_dir: &Path) -> Result<StoryRunResult, PipelineError> {
    let transcript_abs = output_dir.join(TRANSCRIPT_FILENAME);
    let file = fs::File::open(&transcript_abs).map_err(io_err(&transcript_abs))?;
    let reader = std::io::BufReader::new(file);

    let mut artifacts = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(&transcript_abs))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TranscriptRecord =
            serde_json::from_str(&line).map_err(|e| PipelineError::CorruptTranscript {
                path: transcript_abs.clone(),
                line: i + 1,
                detail: e.to_string(),
            })?;
        let audio = read_wav(&output_dir.join(&record.audio_path))?;
        artifacts.push(SceneArtifact {
            scene_index: record.scene_index,
            scene_id: record.scene_id,
            speaker: record.speaker,
            full_prompt: record.full_prompt,
            caption: record.caption,
            assembled_prompt: record.assembled_prompt,
            dialogue: record.dialogue,
            audio: Some(audio),
            keyframe: None,
        });
    }

    Ok(StoryRunResult {
        artifacts,
        output_dir: output_dir.to_path_buf(),
        transcript_path: PathBuf::from(TRANSCRIPT_FILENAME),
        bank_dump_path: PathBuf::from(BANK_DUMP_FILENAME),
    })
}
