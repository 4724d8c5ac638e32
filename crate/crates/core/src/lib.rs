//! Orchestration and evaluation for character-driven multimodal stories:
//! a speaker-tagged dialogue memory feeds scene-by-scene dialogue
//! generation and speech synthesis, and a metrics harness scores the
//! resulting runs on text fidelity and voice similarity.

pub mod audio_metrics;
pub mod backend;
pub mod bank;
pub mod harness;
pub mod media;
pub mod pipeline;
pub mod text_metrics;
pub mod story;

pub use bank::{Capacity, DialogueEntry, NarrativeBank};
pub use media::{AudioClip, FrameSequence, ImageRef};
pub use story::{CharacterProfile, SceneArtifact, ScenePromptPair, StorySpec};
