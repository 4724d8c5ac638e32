//! Dialogue memory for story runs.
//!
//! The bank keeps every utterance a run has committed, tagged with its
//! speaker and scene, in temporal order. When the bank is bounded, appending
//! past capacity evicts the single oldest entry, so the bank always holds the
//! most recent window of the conversation. The memory is rendered into each
//! scene's generation prompt as a three-part block: a scene line, an image
//! caption line, and one line per remembered utterance.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BankError {
    #[error("empty prompt component: {0}")]
    EmptyPrompt(&'static str),
    #[error("scene_index {new} does not advance past previous entry at {last}")]
    Ordering { last: usize, new: usize },
}

/// Bank capacity or history window size. `Bounded(0)` is the memory-off
/// ablation: entries are evicted as soon as they are appended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged, rename_all = "lowercase")]
pub enum Capacity {
    Bounded(usize),
    #[serde(with = "unbounded_tag")]
    Unbounded,
}

mod unbounded_tag {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("all")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let text = String::deserialize(d)?;
        if text == "all" {
            Ok(())
        } else {
            Err(D::Error::custom(format!(
                "expected \"all\" or an integer capacity, got \"{text}\""
            )))
        }
    }
}

impl fmt::Display for Capacity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Capacity::Bounded(n) => write!(f, "{n}"),
            Capacity::Unbounded => write!(f, "all"),
        }
    }
}

impl FromStr for Capacity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(Capacity::Unbounded);
        }
        s.parse::<usize>()
            .map(Capacity::Bounded)
            .map_err(|_| format!("capacity must be a non-negative integer or \"all\", got \"{s}\""))
    }
}

/// One remembered utterance. `caption_at_generation` preserves the image
/// caption that conditioned this line, for later inspection and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueEntry {
    pub scene_index: usize,
    pub speaker: String,
    pub text: String,
    pub caption_at_generation: String,
}

/// Speaker-tagged dialogue history in scene order.
///
/// Invariants: entry scene indices strictly increase, and the entry count
/// never exceeds a bounded capacity.
#[derive(Debug, Clone, PartialEq)]
pub struct NarrativeBank {
    entries: Vec<DialogueEntry>,
    capacity: Capacity,
}

impl NarrativeBank {
    pub fn new(capacity: Capacity) -> Self {
        NarrativeBank {
            entries: Vec::new(),
            capacity,
        }
    }

    pub fn capacity(&self) -> Capacity {
        self.capacity
    }

    pub fn entries(&self) -> &[DialogueEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Append one utterance. If the bank is bounded and now too large, the
    /// single oldest entry is evicted.
    pub fn append_entry(&mut self, entry: DialogueEntry) -> Result<(), BankError> {
        if entry.text.is_empty() {
            return Err(BankError::EmptyPrompt("utterance text"));
        }
        if let Some(last) = self.entries.last() {
            if entry.scene_index <= last.scene_index {
                return Err(BankError::Ordering {
                    last: last.scene_index,
                    new: entry.scene_index,
                });
            }
        }
        self.entries.push(entry);
        if let Capacity::Bounded(n) = self.capacity {
            while self.entries.len() > n {
                self.entries.remove(0);
            }
        }
        Ok(())
    }
}

/// The most recent `n` entries (all of them when `n` is unbounded or exceeds
/// the bank), oldest first.
pub fn history_window(bank: &NarrativeBank, n: Capacity) -> &[DialogueEntry] {
    let entries = bank.entries();
    match n {
        Capacity::Unbounded => entries,
        Capacity::Bounded(n) => {
            let start = entries.len().saturating_sub(n);
            &entries[start..]
        }
    }
}

/// All of one speaker's entries, in bank order.
pub fn speaker_view<'a>(bank: &'a NarrativeBank, speaker: &str) -> Vec<&'a DialogueEntry> {
    bank.entries()
        .iter()
        .filter(|e| e.speaker == speaker)
        .collect()
}

/// Join a scene's setting and action into the full scene prompt. The two
/// parts are concatenated literally with ". " between them; no punctuation
/// is deduplicated.
pub fn compose_scene_prompt(setting: &str, action: &str) -> Result<String, BankError> {
    if setting.is_empty() {
        return Err(BankError::EmptyPrompt("scene setting"));
    }
    if action.is_empty() {
        return Err(BankError::EmptyPrompt("scene action"));
    }
    Ok(format!("{setting}. {action}"))
}

/// A generation prompt in three tagged sections.
#[derive(Debug, Clone, PartialEq)]
pub struct NarrativePrompt {
    pub scene: String,
    pub image: String,
    pub memory_lines: Vec<String>,
}

impl NarrativePrompt {
    /// Exact prompt text: `[Scene] ...`, `[Image] ...`, `[DialogueMemory]`,
    /// then one memory line per entry. An empty history ends at the bare
    /// `[DialogueMemory]` line.
    pub fn render(&self) -> String {
        let mut out = format!(
            "[Scene] {}\n[Image] {}\n[DialogueMemory]",
            self.scene, self.image
        );
        for line in &self.memory_lines {
            out.push('\n');
            out.push_str(line);
        }
        out
    }
}

/// Replace newlines with single spaces so a value occupies exactly one line.
pub fn collapse_newlines(text: &str) -> String {
    if !text.contains(['\n', '\r']) {
        return text.to_string();
    }
    text.replace("\r\n", " ").replace(['\n', '\r'], " ")
}

fn memory_line(entry: &DialogueEntry) -> String {
    format!(
        "{} (scene {}): {}",
        collapse_newlines(&entry.speaker),
        entry.scene_index,
        collapse_newlines(&entry.text)
    )
}

/// Build the three-part generation prompt from a scene prompt, an image
/// caption, and a history window.
pub fn assemble_narrative_prompt(
    scene_prompt: &str,
    caption: &str,
    history: &[DialogueEntry],
) -> Result<NarrativePrompt, BankError> {
    if scene_prompt.is_empty() {
        return Err(BankError::EmptyPrompt("scene prompt"));
    }
    if caption.is_empty() {
        return Err(BankError::EmptyPrompt("image caption"));
    }
    Ok(NarrativePrompt {
        scene: scene_prompt.to_string(),
        image: caption.to_string(),
        memory_lines: history.iter().map(memory_line).collect(),
    })
}
