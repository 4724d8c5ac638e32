//! Model backends behind one switch: every client runs either against a
//! live HTTP endpoint or as a deterministic offline mock.
//!
//! The mocks are digest-driven so that identical inputs always produce
//! identical captions, dialogue, tones, and embeddings; a full story run in
//! mock mode is reproducible byte for byte.

mod wire;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::media::{AudioClip, ImageRef, MediaError};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unavailable after {attempts} attempts: {message}")]
    Unavailable { attempts: u32, message: String },
    #[error("backend returned status {status}: {body_excerpt}")]
    Wire { status: u16, body_excerpt: String },
    #[error("malformed prompt: {0}")]
    MalformedPrompt(String),
    #[error("backend returned an empty completion")]
    EmptyCompletion,
    #[error("live speech synthesis requires at least one reference clip")]
    MissingReference,
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid backend response: {0}")]
    InvalidResponse(String),
    #[error("backend configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Media(#[from] MediaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Live,
    #[default]
    Mock,
}

/// Connection settings for one backend role. The API key is never stored in
/// config files; `api_key_env_var` names the environment variable read at
/// call time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub endpoint_url: String,
    pub api_key_env_var: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub backoff_base_s: f64,
    pub mode: Mode,
    /// Expected embedding dimension; a mismatching live response is an error.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embed_dim: Option<usize>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint_url: String::new(),
            api_key_env_var: String::new(),
            timeout_s: 10.0,
            max_retries: 2,
            backoff_base_s: 0.25,
            mode: Mode::Mock,
            embed_dim: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.mode == Mode::Live && self.endpoint_url.is_empty() {
            return Err(BackendError::Config(
                "live mode requires a non-empty endpoint_url".into(),
            ));
        }
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return Err(BackendError::Config(format!(
                "timeout_s must be positive, got {}",
                self.timeout_s
            )));
        }
        if !(self.backoff_base_s.is_finite() && self.backoff_base_s >= 0.0) {
            return Err(BackendError::Config(format!(
                "backoff_base_s must be non-negative, got {}",
                self.backoff_base_s
            )));
        }
        Ok(())
    }
}

/// Per-role backend settings for a whole run, as read from the config file.
/// Every role defaults to mock.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendsConfig {
    pub caption: BackendConfig,
    pub dialogue: BackendConfig,
    pub speech: BackendConfig,
    pub embed: BackendConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame_extract_cmd: Option<String>,
}

impl BackendsConfig {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            BackendError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: BackendsConfig = serde_json::from_str(&text).map_err(|e| {
            BackendError::Config(format!("invalid config {}: {e}", path.display()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        self.caption.validate()?;
        self.dialogue.validate()?;
        self.speech.validate()?;
        self.embed.validate()
    }

    /// Force every role offline, keeping the rest of the settings.
    pub fn force_mock(mut self) -> Self {
        self.caption.mode = Mode::Mock;
        self.dialogue.mode = Mode::Mock;
        self.speech.mode = Mode::Mock;
        self.embed.mode = Mode::Mock;
        self
    }
}

/// A vector embedding plus whether it has unit norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl EmbeddingVector {
    pub fn raw(values: Vec<f64>) -> Self {
        EmbeddingVector {
            values,
            normalized: false,
        }
    }

    /// Scale to unit norm. A zero (or non-finite) vector cannot be
    /// normalized.
    pub fn into_normalized(mut self) -> Result<Self, BackendError> {
        let norm = self.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(BackendError::InvalidResponse(format!(
                "embedding with norm {norm} cannot be normalized"
            )));
        }
        for v in &mut self.values {
            *v /= norm;
        }
        self.normalized = true;
        Ok(self)
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// A reference recording with its aligned transcript, used to condition
/// live speech synthesis on a speaker's voice.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceClip {
    pub audio: AudioClip,
    pub transcript: String,
}

/// One prior conversation turn passed as synthesis context. Audio is
/// optional on the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextTurn {
    pub speaker: String,
    pub text: String,
    pub audio: Option<AudioClip>,
}

/// Everything a speech backend needs for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeechRequest {
    pub text: String,
    pub speaker: String,
    pub reference_clips: Vec<ReferenceClip>,
    pub context_turns: Vec<ContextTurn>,
    pub max_context_turns: usize,
}

impl SpeechRequest {
    /// Build a request, keeping only the most recent `max_context_turns`
    /// context turns.
    pub fn new(
        text: String,
        speaker: String,
        reference_clips: Vec<ReferenceClip>,
        mut context_turns: Vec<ContextTurn>,
        max_context_turns: usize,
    ) -> Self {
        if context_turns.len() > max_context_turns {
            context_turns.drain(..context_turns.len() - max_context_turns);
        }
        SpeechRequest {
            text,
            speaker,
            reference_clips,
            context_turns,
            max_context_turns,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbedPayload {
    Text(String),
    Image(ImageRef),
}

impl EmbedPayload {
    fn bytes(&self) -> Result<Vec<u8>, BackendError> {
        match self {
            EmbedPayload::Text(t) => Ok(t.as_bytes().to_vec()),
            EmbedPayload::Image(image) => Ok(image.bytes()?.into_owned()),
        }
    }
}

fn digest_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn digest_bytes(bytes: &[u8]) -> Vec<u8> {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().to_vec()
}

const MOCK_SPEECH_SAMPLE_RATE: u32 = 24_000;
const MOCK_SPEECH_AMPLITUDE: f64 = 0.5;
const MOCK_SPEECH_MIN_DURATION_S: f64 = 0.5;
const MOCK_SPEECH_S_PER_CHAR: f64 = 0.05;
pub const MOCK_EMBED_DIM: usize = 8;
const DEFAULT_MOCK_PITCH_HZ: f64 = 220.0;

fn mock_caption(image: &ImageRef) -> Result<String, BackendError> {
    let bytes = image.bytes()?;
    Ok(format!("mock-caption-{}", &digest_hex(&bytes)[..8]))
}

fn mock_dialogue(prompt: &str, speaker: &str) -> String {
    let h = &digest_hex(prompt.as_bytes())[..6];
    format!("{speaker}: says line {h}")
}

fn mock_speech(req: &SpeechRequest, pitch_hz: f64) -> AudioClip {
    let duration =
        MOCK_SPEECH_MIN_DURATION_S.max(MOCK_SPEECH_S_PER_CHAR * req.text.chars().count() as f64);
    AudioClip::sine(
        pitch_hz,
        duration,
        MOCK_SPEECH_SAMPLE_RATE,
        MOCK_SPEECH_AMPLITUDE,
    )
}

fn mock_embed(payload: &EmbedPayload) -> Result<EmbeddingVector, BackendError> {
    let digest = digest_bytes(&payload.bytes()?);
    let values: Vec<f64> = digest[..MOCK_EMBED_DIM]
        .iter()
        .map(|&b| b as f64 - 127.5)
        .collect();
    EmbeddingVector::raw(values).into_normalized()
}

/// Reject prompts that are missing any of the three narrative sections, or
/// have them out of order.
fn check_prompt_shape(prompt: &str) -> Result<(), BackendError> {
    let scene = prompt.find("[Scene] ");
    let image = prompt.find("[Image] ");
    let memory = prompt.find("[DialogueMemory]");
    match (scene, image, memory) {
        (Some(s), Some(i), Some(m)) if s < i && i < m => Ok(()),
        _ => Err(BackendError::MalformedPrompt(
            "prompt must contain [Scene], [Image], and [DialogueMemory] sections in order".into(),
        )),
    }
}

#[derive(Debug, Clone)]
pub struct CaptionClient {
    cfg: BackendConfig,
}

impl CaptionClient {
    pub fn new(cfg: BackendConfig) -> Self {
        CaptionClient { cfg }
    }

    pub fn mode(&self) -> Mode {
        self.cfg.mode
    }

    /// Describe one keyframe image.
    pub fn caption_scene(&self, image: &ImageRef) -> Result<String, BackendError> {
        match self.cfg.mode {
            Mode::Mock => mock_caption(image),
            Mode::Live => wire::live_caption(&self.cfg, image),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DialogueClient {
    cfg: BackendConfig,
}

impl DialogueClient {
    pub fn new(cfg: BackendConfig) -> Self {
        DialogueClient { cfg }
    }

    pub fn mode(&self) -> Mode {
        self.cfg.mode
    }

    /// One utterance for `speaker`, conditioned on the assembled three-part
    /// prompt. The prompt shape is checked before any dispatch.
    pub fn generate_dialogue(&self, prompt: &str, speaker: &str) -> Result<String, BackendError> {
        check_prompt_shape(prompt)?;
        match self.cfg.mode {
            Mode::Mock => Ok(mock_dialogue(prompt, speaker)),
            Mode::Live => wire::live_dialogue(&self.cfg, prompt, speaker),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpeechClient {
    cfg: BackendConfig,
    /// Mock tone frequency per speaker, from the cast's base pitches.
    pitches: HashMap<String, f64>,
}

impl SpeechClient {
    pub fn new(cfg: BackendConfig, pitches: HashMap<String, f64>) -> Self {
        SpeechClient { cfg, pitches }
    }

    pub fn mode(&self) -> Mode {
        self.cfg.mode
    }

    /// Synthesize one utterance. Mock mode renders a sine at the speaker's
    /// base pitch, 0.05 s per character with a 0.5 s floor.
    pub fn render_speech(&self, req: &SpeechRequest) -> Result<AudioClip, BackendError> {
        match self.cfg.mode {
            Mode::Mock => {
                let pitch = self
                    .pitches
                    .get(&req.speaker)
                    .copied()
                    .unwrap_or(DEFAULT_MOCK_PITCH_HZ);
                Ok(mock_speech(req, pitch))
            }
            Mode::Live => {
                if req.reference_clips.is_empty() {
                    return Err(BackendError::MissingReference);
                }
                wire::live_speech(&self.cfg, req)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmbedClient {
    cfg: BackendConfig,
}

impl EmbedClient {
    pub fn new(cfg: BackendConfig) -> Self {
        EmbedClient { cfg }
    }

    pub fn mode(&self) -> Mode {
        self.cfg.mode
    }

    /// Embed text or an image into a unit vector.
    pub fn embed(&self, payload: &EmbedPayload) -> Result<EmbeddingVector, BackendError> {
        match self.cfg.mode {
            Mode::Mock => mock_embed(payload),
            Mode::Live => {
                let v = wire::live_embed(&self.cfg, payload)?;
                if let Some(expected) = self.cfg.embed_dim {
                    if v.dim() != expected {
                        return Err(BackendError::Dimension {
                            expected,
                            got: v.dim(),
                        });
                    }
                }
                v.into_normalized()
            }
        }
    }
}

/// The four model roles a story run needs.
#[derive(Debug, Clone)]
pub struct BackendSet {
    pub caption: CaptionClient,
    pub dialogue: DialogueClient,
    pub speech: SpeechClient,
    pub embed: EmbedClient,
}

impl BackendSet {
    /// Fully offline set; `pitches` maps speaker names to mock tone
    /// frequencies.
    pub fn mock(pitches: HashMap<String, f64>) -> Self {
        let cfg = BackendConfig::default();
        BackendSet {
            caption: CaptionClient::new(cfg.clone()),
            dialogue: DialogueClient::new(cfg.clone()),
            speech: SpeechClient::new(cfg.clone(), pitches),
            embed: EmbedClient::new(cfg),
        }
    }

    pub fn from_config(
        cfg: &BackendsConfig,
        pitches: HashMap<String, f64>,
    ) -> Result<Self, BackendError> {
        cfg.validate()?;
        Ok(BackendSet {
            caption: CaptionClient::new(cfg.caption.clone()),
            dialogue: DialogueClient::new(cfg.dialogue.clone()),
            speech: SpeechClient::new(cfg.speech.clone(), pitches),
            embed: EmbedClient::new(cfg.embed.clone()),
        })
    }

    /// Mock tone map for a cast.
    pub fn pitches_for(spec: &crate::story::StorySpec) -> HashMap<String, f64> {
        spec.characters
            .iter()
            .map(|c| (c.name.clone(), c.base_pitch_hz))
            .collect()
    }
}
