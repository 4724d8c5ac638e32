//! Story specification: characters, ordered scene prompt pairs, and the
//! per-scene artifact record produced by a run.

use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::media::{AudioClip, ImageRef};

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("story spec parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("story spec schema error: {0}")]
    Schema(String),
    #[error("story spec validation error: {0}")]
    Validation(String),
    #[error("scene index {index} out of range for {scene_count} scenes")]
    SceneIndexOutOfRange { index: usize, scene_count: usize },
}

/// A cast member. `base_pitch_hz` only drives the mock speech backend;
/// live synthesis conditions on the reference clip instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterProfile {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voice_reference: Option<PathBuf>,
    #[serde(default)]
    pub voice_transcript: String,
    #[serde(default = "default_base_pitch")]
    pub base_pitch_hz: f64,
}

fn default_base_pitch() -> f64 {
    220.0
}

/// One scene's prompt pair: a setting line and an action line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePromptPair {
    pub scene_id: String,
    pub setting: String,
    pub action: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorySpec {
    pub title: String,
    pub characters: Vec<CharacterProfile>,
    pub scenes: Vec<ScenePromptPair>,
    /// Optional explicit speaker per scene; absent means round-robin casting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker_schedule: Option<Vec<String>>,
}

impl StorySpec {
    pub fn character(&self, name: &str) -> Option<&CharacterProfile> {
        self.characters.iter().find(|c| c.name == name)
    }
}

/// Everything produced for one scene. `audio` and `keyframe` stay in memory;
/// persistence writes them out separately.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneArtifact {
    pub scene_index: usize,
    pub scene_id: String,
    pub speaker: String,
    pub full_prompt: String,
    pub caption: String,
    pub assembled_prompt: String,
    pub dialogue: String,
    pub audio: Option<AudioClip>,
    pub keyframe: Option<ImageRef>,
}

/// Parse a story spec from its JSON text and validate it. Unknown fields are
/// ignored with a warning rather than rejected.
pub fn parse_story_spec(text: &str) -> Result<StorySpec, SpecError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| SpecError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    warn_unknown_fields(&value);
    let spec: StorySpec =
        serde_json::from_value(value).map_err(|e| SpecError::Schema(e.to_string()))?;
    validate(&spec)?;
    Ok(spec)
}

fn warn_unknown_fields(value: &serde_json::Value) {
    let warn = |ctx: &str, obj: &serde_json::Map<String, serde_json::Value>, known: &[&str]| {
        for key in obj.keys() {
            if !known.contains(&key.as_str()) {
                log::warn!("ignoring unknown field `{key}` in {ctx}");
            }
        }
    };
    let Some(root) = value.as_object() else {
        return;
    };
    warn(
        "story spec",
        root,
        &["title", "characters", "scenes", "speaker_schedule"],
    );
    if let Some(chars) = root.get("characters").and_then(|v| v.as_array()) {
        for c in chars.iter().filter_map(|v| v.as_object()) {
            warn(
                "character",
                c,
                &[
                    "name",
                    "voice_reference",
                    "voice_transcript",
                    "base_pitch_hz",
                ],
            );
        }
    }
    if let Some(scenes) = root.get("scenes").and_then(|v| v.as_array()) {
        for s in scenes.iter().filter_map(|v| v.as_object()) {
            warn("scene", s, &["scene_id", "setting", "action"]);
        }
    }
}

fn validate(spec: &StorySpec) -> Result<(), SpecError> {
    if spec.characters.is_empty() {
        return Err(SpecError::Validation(
            "story spec declares no characters".into(),
        ));
    }
    if spec.scenes.is_empty() {
        return Err(SpecError::Validation("story spec declares no scenes".into()));
    }
    let mut names = HashSet::new();
    for c in &spec.characters {
        if c.name.is_empty() {
            return Err(SpecError::Validation("character with empty name".into()));
        }
        if !names.insert(c.name.as_str()) {
            return Err(SpecError::Validation(format!(
                "duplicate character name `{}`",
                c.name
            )));
        }
        if !(c.base_pitch_hz.is_finite() && c.base_pitch_hz > 0.0) {
            return Err(SpecError::Validation(format!(
                "character `{}` has non-positive base_pitch_hz {}",
                c.name, c.base_pitch_hz
            )));
        }
        if c.voice_reference.is_some() && c.voice_transcript.is_empty() {
            return Err(SpecError::Validation(format!(
                "character `{}` has a voice reference but no voice transcript",
                c.name
            )));
        }
    }
    let mut scene_ids = HashSet::new();
    for s in &spec.scenes {
        if s.scene_id.is_empty() {
            return Err(SpecError::Validation("scene with empty scene_id".into()));
        }
        if !scene_ids.insert(s.scene_id.as_str()) {
            log::warn!("duplicate scene_id `{}` in story spec", s.scene_id);
        }
    }
    if let Some(schedule) = &spec.speaker_schedule {
        if schedule.len() != spec.scenes.len() {
            return Err(SpecError::Validation(format!(
                "speaker_schedule has {} entries for {} scenes",
                schedule.len(),
                spec.scenes.len()
            )));
        }
        for (i, name) in schedule.iter().enumerate() {
            if !names.contains(name.as_str()) {
                return Err(SpecError::Validation(format!(
                    "speaker_schedule entry {i} names undeclared character `{name}`"
                )));
            }
        }
    }
    let n = spec.scenes.len();
    if !(11..=13).contains(&n) {
        log::warn!("story has {n} scenes; typical stories run 11 to 13");
    }
    Ok(())
}

/// Who speaks in the given scene: the schedule entry when a schedule exists,
/// otherwise round-robin over the cast in declaration order.
pub fn resolve_speaker(spec: &StorySpec, scene_index: usize) -> Result<&str, SpecError> {
    if scene_index >= spec.scenes.len() {
        return Err(SpecError::SceneIndexOutOfRange {
            index: scene_index,
            scene_count: spec.scenes.len(),
        });
    }
    match &spec.speaker_schedule {
        Some(schedule) => Ok(schedule[scene_index].as_str()),
        None => Ok(spec.characters[scene_index % spec.characters.len()]
            .name
            .as_str()),
    }
}
