//! Grapheme-to-phoneme conversion and voiced-phoneme counting.
//!
//! Two converters are provided: a rule-based English approximation usable
//! without any external data, and a file-backed converter for transcripts
//! that were phonemized by an external tool (one file of whitespace-separated
//! IPA-like symbols per transcript).

use std::fs;
use std::path::Path;

use super::AudioMetricError;

/// Pluggable grapheme-to-phoneme converter.
pub trait Phonemizer {
    /// Phoneme symbols for the transcript, in spoken order.
    fn phonemize(&self, transcript: &str) -> Vec<String>;
}

/// Rule-based English letter-to-sound approximation. Digraphs are resolved
/// first, remaining letters map one-to-one, and anything non-alphabetic is
/// treated as a separator.
#[derive(Debug, Default, Clone, Copy)]
pub struct RulePhonemizer;

impl Phonemizer for RulePhonemizer {
    fn phonemize(&self, transcript: &str) -> Vec<String> {
        let chars: Vec<char> = transcript.to_lowercase().chars().collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if !c.is_ascii_alphabetic() {
                i += 1;
                continue;
            }
            if i + 1 < chars.len() {
                let pair = (c, chars[i + 1]);
                let digraph: Option<&[&str]> = match pair {
                    ('t', 'h') => Some(&["ð"]),
                    ('s', 'h') => Some(&["ʃ"]),
                    ('c', 'h') => Some(&["tʃ"]),
                    ('p', 'h') => Some(&["f"]),
                    ('w', 'h') => Some(&["w"]),
                    ('n', 'g') => Some(&["ŋ"]),
                    ('c', 'k') => Some(&["k"]),
                    ('q', 'u') => Some(&["k", "w"]),
                    _ => None,
                };
                if let Some(symbols) = digraph {
                    out.extend(symbols.iter().map(|s| s.to_string()));
                    i += 2;
                    continue;
                }
            }
            match c {
                'x' => {
                    out.push("k".to_string());
                    out.push("s".to_string());
                }
                'c' => out.push("k".to_string()),
                'j' => out.push("dʒ".to_string()),
                'y' => out.push("j".to_string()),
                other => out.push(other.to_string()),
            }
            i += 1;
        }
        out
    }
}

/// Phonemizer backed by an externally produced transcription file. The file
/// holds whitespace-separated symbols for one transcript; `phonemize` returns
/// them as-is regardless of the text passed in.
#[derive(Debug, Clone)]
pub struct FilePhonemizer {
    symbols: Vec<String>,
}

impl FilePhonemizer {
    pub fn load(path: &Path) -> Result<Self, AudioMetricError> {
        let text = fs::read_to_string(path).map_err(|source| AudioMetricError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self {
            symbols: text.split_whitespace().map(str::to_string).collect(),
        })
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }
}

impl Phonemizer for FilePhonemizer {
    fn phonemize(&self, _transcript: &str) -> Vec<String> {
        self.symbols.clone()
    }
}

const IPA_VOWELS: &str = "aeiouɑɐɒæɛɜɝəɚɘɵɤɪɨʏʊʉɔœøɞʌɯyɶ";
const VOICED_CONSONANTS: &str = "bdgɡvðzʒmnŋlɫɭrɹɾʁwj";
const UNVOICED_CONSONANTS: &str = "ptksfhʃθxʔcqç";

/// Classify one symbol: `Some(true)` voiced, `Some(false)` unvoiced, `None`
/// unrecognized. Stress and length marks are stripped first; multi-character
/// symbols (diphthongs, affricates) classify by their first sound.
pub fn is_voiced_phoneme(symbol: &str) -> Option<bool> {
    let stripped: String = symbol
        .chars()
        .filter(|c| !matches!(c, 'ˈ' | 'ˌ' | '\'' | ',' | 'ː' | ':') && !c.is_ascii_digit())
        .collect();
    let first = stripped.chars().next()?;
    if IPA_VOWELS.contains(first) || VOICED_CONSONANTS.contains(first) {
        Some(true)
    } else if UNVOICED_CONSONANTS.contains(first) {
        Some(false)
    } else {
        None
    }
}

/// Count voiced phonemes in a transcript under the given converter.
/// Unrecognized symbols are skipped with a warning rather than erroring.
pub fn voiced_phoneme_count(transcript: &str, g2p: &dyn Phonemizer) -> usize {
    let mut count = 0;
    for symbol in g2p.phonemize(transcript) {
        match is_voiced_phoneme(&symbol) {
            Some(true) => count += 1,
            Some(false) => {}
            None => log::warn!("unknown phoneme symbol {symbol:?} skipped"),
        }
    }
    count
}
