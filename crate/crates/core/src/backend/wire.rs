//! Live HTTP transport: JSON POST per role, bearer auth from the
//! environment, and exponential backoff on transport failures.
//!
//! Retry policy: transport-level failures (connect errors, timeouts,
//! truncated streams) are retried up to `max_retries` times, sleeping
//! backoff_base_s * 2^i between attempt i and i+1. A response with a
//! non-success status is returned immediately as a wire error; the request
//! reached a server, so repeating it is the caller's decision.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::Deserialize;
use serde_json::json;

use super::{BackendConfig, BackendError, EmbedPayload, EmbeddingVector, SpeechRequest};
use crate::media::{self, AudioClip, ImageRef};

fn bearer(cfg: &BackendConfig) -> Result<Option<String>, BackendError> {
    if cfg.api_key_env_var.is_empty() {
        return Ok(None);
    }
    match std::env::var(&cfg.api_key_env_var) {
        Ok(key) => Ok(Some(format!("Bearer {key}"))),
        Err(_) => Err(BackendError::Config(format!(
            "environment variable {} is not set",
            cfg.api_key_env_var
        ))),
    }
}

fn post_json(
    cfg: &BackendConfig,
    route: &str,
    body: &serde_json::Value,
) -> Result<serde_json::Value, BackendError> {
    let url = format!("{}/{}", cfg.endpoint_url.trim_end_matches('/'), route);
    let auth = bearer(cfg)?;
    let agent = ureq::AgentBuilder::new()
        .timeout(Duration::from_secs_f64(cfg.timeout_s))
        .build();
    let mut attempt: u32 = 0;
    loop {
        let mut req = agent.post(&url);
        if let Some(a) = &auth {
            req = req.set("Authorization", a);
        }
        match req.send_json(body) {
            Ok(resp) => {
                return resp.into_json::<serde_json::Value>().map_err(|e| {
                    BackendError::InvalidResponse(format!("response is not JSON: {e}"))
                });
            }
            Err(ureq::Error::Status(status, resp)) => {
                let body_excerpt: String = resp
                    .into_string()
                    .unwrap_or_default()
                    .chars()
                    .take(200)
                    .collect();
                return Err(BackendError::Wire {
                    status,
                    body_excerpt,
                });
            }
            Err(ureq::Error::Transport(t)) => {
                if attempt >= cfg.max_retries {
                    return Err(BackendError::Unavailable {
                        attempts: attempt + 1,
                        message: t.to_string(),
                    });
                }
                let delay = cfg.backoff_base_s * 2f64.powi(attempt as i32);
                log::warn!(
                    "transport failure on {url} (attempt {}): {t}; retrying in {delay:.3}s",
                    attempt + 1
                );
                std::thread::sleep(Duration::from_secs_f64(delay));
                attempt += 1;
            }
        }
    }
}

fn field_error(route: &str, err: impl std::fmt::Display) -> BackendError {
    BackendError::InvalidResponse(format!("{route} response: {err}"))
}

pub(super) fn live_caption(cfg: &BackendConfig, image: &ImageRef) -> Result<String, BackendError> {
    let bytes = image.bytes()?;
    let body = json!({ "image_b64": BASE64.encode(bytes.as_ref()) });
    #[derive(Deserialize)]
    struct CaptionResponse {
        caption: String,
    }
    let value = post_json(cfg, "caption", &body)?;
    let resp: CaptionResponse =
        serde_json::from_value(value).map_err(|e| field_error("caption", e))?;
    Ok(resp.caption)
}

pub(super) fn live_dialogue(
    cfg: &BackendConfig,
    prompt: &str,
    speaker: &str,
) -> Result<String, BackendError> {
    let system = format!(
        "You are the character {speaker} in an ongoing story. Reply with {speaker}'s next \
         spoken line only: one utterance, no stage directions, no other speakers."
    );
    let body = json!({ "system": system, "user": prompt });
    #[derive(Deserialize)]
    struct ChatResponse {
        text: String,
    }
    let value = post_json(cfg, "chat", &body)?;
    let resp: ChatResponse = serde_json::from_value(value).map_err(|e| field_error("chat", e))?;
    let text = resp.text.trim().to_string();
    if text.is_empty() {
        return Err(BackendError::EmptyCompletion);
    }
    Ok(text)
}

fn encode_clip(clip: &AudioClip) -> Result<String, BackendError> {
    Ok(BASE64.encode(media::write_wav_bytes(clip)?))
}

pub(super) fn live_speech(
    cfg: &BackendConfig,
    req: &SpeechRequest,
) -> Result<AudioClip, BackendError> {
    let references = req
        .reference_clips
        .iter()
        .map(|r| {
            Ok(json!({
                "audio_b64": encode_clip(&r.audio)?,
                "transcript": r.transcript,
            }))
        })
        .collect::<Result<Vec<_>, BackendError>>()?;
    let context = req
        .context_turns
        .iter()
        .map(|t| {
            let mut turn = json!({ "speaker": t.speaker, "text": t.text });
            if let Some(audio) = &t.audio {
                turn["audio_b64"] = json!(encode_clip(audio)?);
            }
            Ok(turn)
        })
        .collect::<Result<Vec<_>, BackendError>>()?;
    let body = json!({
        "text": req.text,
        "speaker": req.speaker,
        "references": references,
        "context": context,
    });
    #[derive(Deserialize)]
    struct SpeechResponse {
        audio_b64: String,
        sample_rate: u32,
    }
    let value = post_json(cfg, "speech", &body)?;
    let resp: SpeechResponse =
        serde_json::from_value(value).map_err(|e| field_error("speech", e))?;
    let wav = BASE64
        .decode(&resp.audio_b64)
        .map_err(|e| field_error("speech", format!("audio_b64: {e}")))?;
    let clip = media::read_wav_bytes(&wav)?;
    if clip.sample_rate_hz != resp.sample_rate {
        log::warn!(
            "speech response declares {} Hz but the payload carries {} Hz; using the payload",
            resp.sample_rate,
            clip.sample_rate_hz
        );
    }
    Ok(clip)
}

pub(super) fn live_embed(
    cfg: &BackendConfig,
    payload: &EmbedPayload,
) -> Result<EmbeddingVector, BackendError> {
    let body = match payload {
        EmbedPayload::Text(t) => json!({ "kind": "text", "payload": t }),
        EmbedPayload::Image(image) => {
            let bytes = image.bytes()?;
            json!({ "kind": "image", "payload": BASE64.encode(bytes.as_ref()) })
        }
    };
    #[derive(Deserialize)]
    struct EmbedResponse {
        vector: Vec<f64>,
    }
    let value = post_json(cfg, "embed", &body)?;
    let resp: EmbedResponse = serde_json::from_value(value).map_err(|e| field_error("embed", e))?;
    Ok(EmbeddingVector::raw(resp.vector))
}
