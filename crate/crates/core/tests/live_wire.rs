//! Live-transport conformance against a scripted localhost HTTP server:
//! request schemas, response decoding, retry policy, and how a mid-story
//! backend failure lands in persisted output.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc;
use std::thread::JoinHandle;
use std::time::Instant;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde_json::{json, Value};

use narravox::backend::{
    BackendConfig, BackendError, BackendSet, BackendsConfig, CaptionClient, ContextTurn,
    DialogueClient, EmbedClient, EmbedPayload, Mode, ReferenceClip, SpeechClient, SpeechRequest,
};
use narravox::media::{read_wav_bytes, write_wav_bytes};
use narravox::pipeline::{run_story, PipelineError, RunConfig};
use narravox::story::parse_story_spec;
use narravox::AudioClip;

/// What the stub does with one incoming request, in script order.
enum Reply {
    /// 200 with the given JSON body.
    Ok(Value),
    /// Non-success status with a raw body.
    Status(u16, &'static str),
    /// Read the request, then close without sending any bytes.
    Hangup,
}

struct Recorded {
    route: String,
    body: Value,
    authorization: Option<String>,
    at: Instant,
}

struct Stub {
    endpoint: String,
    requests: mpsc::Receiver<Recorded>,
    handle: JoinHandle<()>,
}

impl Stub {
    fn finish(self) -> Vec<Recorded> {
        self.handle.join().expect("stub thread panicked");
        self.requests.try_iter().collect()
    }
}

fn read_http_request(stream: &mut TcpStream) -> Option<(String, Vec<u8>, Option<String>)> {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    let header_end = loop {
        if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
            break pos + 4;
        }
        let n = stream.read(&mut chunk).ok()?;
        if n == 0 {
            return None;
        }
        buf.extend_from_slice(&chunk[..n]);
    };
    let head = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let mut lines = head.lines();
    let request_line = lines.next()?;
    let path = request_line.split_whitespace().nth(1)?.to_string();
    let mut content_length = 0usize;
    let mut authorization = None;
    for line in lines {
        let Some((name, value)) = line.split_once(':') else {
            continue;
        };
        match name.trim().to_ascii_lowercase().as_str() {
            "content-length" => content_length = value.trim().parse().ok()?,
            "authorization" => authorization = Some(value.trim().to_string()),
            _ => {}
        }
    }
    let mut body = buf[header_end..].to_vec();
    while body.len() < content_length {
        let n = stream.read(&mut chunk).ok()?;
        if n == 0 {
            break;
        }
        body.extend_from_slice(&chunk[..n]);
    }
    let route = path.trim_start_matches('/').to_string();
    Some((route, body, authorization))
}

fn write_http_response(stream: &mut TcpStream, status: u16, body: &str) {
    let reason = if status == 200 { "OK" } else { "Error" };
    let response = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\n\
         Content-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.write_all(response.as_bytes());
    let _ = stream.flush();
}

/// Serve the scripted replies, one connection each, recording every request.
fn serve(script: Vec<Reply>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub listener");
    let addr = listener.local_addr().expect("stub local addr");
    let (tx, rx) = mpsc::channel();
    let handle = std::thread::spawn(move || {
        for reply in script {
            let Ok((mut stream, _)) = listener.accept() else {
                return;
            };
            let at = Instant::now();
            let Some((route, body, authorization)) = read_http_request(&mut stream) else {
                continue;
            };
            let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            let _ = tx.send(Recorded {
                route,
                body,
                authorization,
                at,
            });
            match reply {
                Reply::Hangup => drop(stream),
                Reply::Ok(value) => write_http_response(&mut stream, 200, &value.to_string()),
                Reply::Status(code, body) => write_http_response(&mut stream, code, body),
            }
        }
    });
    Stub {
        endpoint: format!("http://{addr}"),
        requests: rx,
        handle,
    }
}

fn live_config(endpoint: &str) -> BackendConfig {
    BackendConfig {
        endpoint_url: endpoint.to_string(),
        api_key_env_var: String::new(),
        timeout_s: 5.0,
        max_retries: 0,
        backoff_base_s: 0.01,
        mode: Mode::Live,
        embed_dim: None,
    }
}

#[test]
fn caption_request_and_response_follow_the_wire_schema() {
    let stub = serve(vec![Reply::Ok(json!({ "caption": "two ogres at sunset" }))]);
    let client = CaptionClient::new(live_config(&stub.endpoint));
    let image = narravox::ImageRef::Inline(vec![1, 2, 3, 4]);
    let caption = client.caption_scene(&image).expect("live caption");
    assert_eq!(caption, "two ogres at sunset");

    let requests = stub.finish();
    assert_eq!(requests.len(), 1);
    assert_eq!(requests[0].route, "caption");
    assert_eq!(requests[0].authorization, None);
    assert_eq!(
        requests[0].body,
        json!({ "image_b64": BASE64.encode([1u8, 2, 3, 4]) })
    );
}

#[test]
fn chat_request_carries_persona_system_message_and_prompt() {
    let stub = serve(vec![Reply::Ok(
        json!({ "text": "  Nothing tops Fiona's beauty even the Golden Gate!  " }),
    )]);
    let client = DialogueClient::new(live_config(&stub.endpoint));
    let prompt = "[Scene] p\n[Image] c\n[DialogueMemory]";
    let text = client.generate_dialogue(prompt, "Shrek").expect("live chat");
    assert_eq!(text, "Nothing tops Fiona's beauty even the Golden Gate!");

    let requests = stub.finish();
    assert_eq!(requests.len(), 1);
    assert_eq!(requests[0].route, "chat");
    let expected_system = "You are the character Shrek in an ongoing story. Reply with Shrek's \
                           next spoken line only: one utterance, no stage directions, no other \
                           speakers.";
    assert_eq!(
        requests[0].body,
        json!({ "system": expected_system, "user": prompt })
    );
}

#[test]
fn speech_round_trip_encodes_references_and_context() {
    let returned = AudioClip::sine(220.0, 0.25, 22_050, 0.5);
    let returned_wav = write_wav_bytes(&returned).unwrap();
    let stub = serve(vec![Reply::Ok(json!({
        "audio_b64": BASE64.encode(&returned_wav),
        "sample_rate": 22_050,
    }))]);

    let reference = AudioClip::sine(150.0, 0.1, 16_000, 0.4);
    let request = SpeechRequest::new(
        "Over the ridge, then.".to_string(),
        "Brin".to_string(),
        vec![ReferenceClip {
            audio: reference.clone(),
            transcript: "a steady voice".to_string(),
        }],
        vec![ContextTurn {
            speaker: "Olla".to_string(),
            text: "Mind the lantern.".to_string(),
            audio: None,
        }],
        2,
    );
    let client = SpeechClient::new(live_config(&stub.endpoint), HashMap::new());
    let clip = client.render_speech(&request).expect("live speech");
    assert_eq!(clip, read_wav_bytes(&returned_wav).unwrap());

    let requests = stub.finish();
    assert_eq!(requests.len(), 1);
    assert_eq!(requests[0].route, "speech");
    let body = &requests[0].body;
    assert_eq!(body["text"], "Over the ridge, then.");
    assert_eq!(body["speaker"], "Brin");
    let refs = body["references"].as_array().unwrap();
    assert_eq!(refs.len(), 1);
    assert_eq!(refs[0]["transcript"], "a steady voice");
    let sent_ref = BASE64.decode(refs[0]["audio_b64"].as_str().unwrap()).unwrap();
    let decoded = read_wav_bytes(&sent_ref).unwrap();
    assert_eq!(decoded.sample_rate_hz, 16_000);
    assert_eq!(decoded.samples.len(), reference.samples.len());
    let context = body["context"].as_array().unwrap();
    assert_eq!(context.len(), 1);
    assert_eq!(context[0]["speaker"], "Olla");
    assert_eq!(context[0]["text"], "Mind the lantern.");
    assert!(
        context[0].get("audio_b64").is_none(),
        "context turns without audio must omit the audio field"
    );
}

#[test]
fn embed_round_trip_normalizes_and_tags_payload_kind() {
    let stub = serve(vec![
        Reply::Ok(json!({ "vector": [0.6, 0.8, 0.0, 0.0] })),
        Reply::Ok(json!({ "vector": [3.0, 4.0] })),
    ]);
    let mut cfg = live_config(&stub.endpoint);
    cfg.embed_dim = Some(4);
    let client = EmbedClient::new(cfg);

    let text_vec = client
        .embed(&EmbedPayload::Text("sunset over the bay".to_string()))
        .expect("text embedding");
    assert!(text_vec.normalized);
    assert!((text_vec.norm() - 1.0).abs() < 1e-12);
    for (got, want) in text_vec.values.iter().zip([0.6, 0.8, 0.0, 0.0]) {
        assert!((got - want).abs() < 1e-12);
    }

    let mut cfg2 = live_config(&stub.endpoint);
    cfg2.embed_dim = Some(2);
    let client2 = EmbedClient::new(cfg2);
    let image_vec = client2
        .embed(&EmbedPayload::Image(narravox::ImageRef::Inline(vec![9, 9])))
        .expect("image embedding");
    assert!((image_vec.values[0] - 0.6).abs() < 1e-12);
    assert!((image_vec.values[1] - 0.8).abs() < 1e-12);

    let requests = stub.finish();
    assert_eq!(requests.len(), 2);
    assert_eq!(requests[0].route, "embed");
    assert_eq!(
        requests[0].body,
        json!({ "kind": "text", "payload": "sunset over the bay" })
    );
    assert_eq!(
        requests[1].body,
        json!({ "kind": "image", "payload": BASE64.encode([9u8, 9]) })
    );
}

#[test]
fn embed_dimension_mismatch_is_reported() {
    let stub = serve(vec![Reply::Ok(json!({ "vector": [0.6, 0.8, 0.0] }))]);
    let mut cfg = live_config(&stub.endpoint);
    cfg.embed_dim = Some(4);
    let client = EmbedClient::new(cfg);
    let err = client
        .embed(&EmbedPayload::Text("x".to_string()))
        .unwrap_err();
    assert!(matches!(
        err,
        BackendError::Dimension {
            expected: 4,
            got: 3
        }
    ));
    stub.finish();
}

#[test]
fn transport_failures_retry_with_exponential_spacing() {
    let stub = serve(vec![
        Reply::Hangup,
        Reply::Hangup,
        Reply::Ok(json!({ "caption": "third time lucky" })),
    ]);
    let mut cfg = live_config(&stub.endpoint);
    cfg.max_retries = 2;
    cfg.backoff_base_s = 0.08;
    let client = CaptionClient::new(cfg);
    let caption = client
        .caption_scene(&narravox::ImageRef::Inline(vec![7]))
        .expect("third attempt succeeds");
    assert_eq!(caption, "third time lucky");

    let requests = stub.finish();
    assert_eq!(requests.len(), 3, "one request per attempt");
    let gap1 = requests[1].at.duration_since(requests[0].at).as_secs_f64();
    let gap2 = requests[2].at.duration_since(requests[1].at).as_secs_f64();
    assert!(gap1 >= 0.08, "first retry waited {gap1:.3}s, want >= 0.08s");
    assert!(gap2 >= 0.16, "second retry waited {gap2:.3}s, want >= 0.16s");
    assert!(gap1 < 2.0 && gap2 < 2.0, "backoff should stay near schedule");
}

#[test]
fn retries_stop_after_max_and_report_attempt_count() {
    let stub = serve(vec![Reply::Hangup, Reply::Hangup, Reply::Hangup]);
    let mut cfg = live_config(&stub.endpoint);
    cfg.max_retries = 2;
    cfg.backoff_base_s = 0.01;
    let client = CaptionClient::new(cfg);
    let err = client
        .caption_scene(&narravox::ImageRef::Inline(vec![7]))
        .unwrap_err();
    match err {
        BackendError::Unavailable { attempts, .. } => assert_eq!(attempts, 3),
        other => panic!("expected Unavailable, got {other:?}"),
    }
    assert_eq!(stub.finish().len(), 3);
}

#[test]
fn error_status_fails_immediately_without_retry() {
    let stub = serve(vec![Reply::Status(500, r#"{"error":"synth down"}"#)]);
    let mut cfg = live_config(&stub.endpoint);
    cfg.max_retries = 5;
    cfg.backoff_base_s = 0.01;
    let client = DialogueClient::new(cfg);
    let err = client
        .generate_dialogue("[Scene] p\n[Image] c\n[DialogueMemory]", "Brin")
        .unwrap_err();
    match err {
        BackendError::Wire {
            status,
            body_excerpt,
        } => {
            assert_eq!(status, 500);
            assert!(body_excerpt.contains("synth down"));
        }
        other => panic!("expected Wire, got {other:?}"),
    }
    assert_eq!(stub.finish().len(), 1, "status errors must not retry");
}

#[test]
fn bearer_token_is_read_from_the_named_environment_variable() {
    let stub = serve(vec![Reply::Ok(json!({ "caption": "authed" }))]);
    let var = "LIVE_WIRE_TEST_TOKEN_93d1";
    std::env::set_var(var, "sk-test-123");
    let mut cfg = live_config(&stub.endpoint);
    cfg.api_key_env_var = var.to_string();
    let client = CaptionClient::new(cfg);
    client
        .caption_scene(&narravox::ImageRef::Inline(vec![1]))
        .expect("authorized caption");
    let requests = stub.finish();
    assert_eq!(
        requests[0].authorization.as_deref(),
        Some("Bearer sk-test-123")
    );
}

#[test]
fn missing_key_variable_fails_before_any_connection() {
    let mut cfg = live_config("http://127.0.0.1:1");
    cfg.api_key_env_var = "LIVE_WIRE_TEST_TOKEN_NEVER_SET_51ac".to_string();
    let client = CaptionClient::new(cfg);
    let err = client
        .caption_scene(&narravox::ImageRef::Inline(vec![1]))
        .unwrap_err();
    assert!(matches!(err, BackendError::Config(_)));
}

fn spec_with_references(dir: &std::path::Path) -> narravox::StorySpec {
    for (name, pitch) in [("Brin", 180.0), ("Olla", 300.0)] {
        let clip = AudioClip::sine(pitch, 0.3, 16_000, 0.5);
        narravox::media::write_wav(&clip, &dir.join(format!("{name}.wav"))).unwrap();
    }
    let text = json!({
        "title": "Lantern Crossing",
        "characters": [
            {
                "name": "Brin",
                "voice_reference": dir.join("Brin.wav"),
                "voice_transcript": "I carry the lantern.",
                "base_pitch_hz": 180.0
            },
            {
                "name": "Olla",
                "voice_reference": dir.join("Olla.wav"),
                "voice_transcript": "And I read the stars.",
                "base_pitch_hz": 300.0
            }
        ],
        "scenes": [
            { "scene_id": "crossing_01", "setting": "A rope bridge at dusk", "action": "Brin tests the first plank" },
            { "scene_id": "crossing_02", "setting": "Mist rises from the gorge", "action": "Olla calls out a warning" }
        ]
    });
    parse_story_spec(&text.to_string()).unwrap()
}

#[test]
fn mid_story_speech_failure_aborts_and_keeps_committed_scenes() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = spec_with_references(tmp.path());

    let ok_clip = AudioClip::sine(200.0, 0.2, 22_050, 0.5);
    let ok_wav = write_wav_bytes(&ok_clip).unwrap();
    let stub = serve(vec![
        Reply::Ok(json!({
            "audio_b64": BASE64.encode(&ok_wav),
            "sample_rate": 22_050,
        })),
        Reply::Status(500, r#"{"error":"synth down"}"#),
    ]);

    let mut cfgs = BackendsConfig::default();
    cfgs.speech = live_config(&stub.endpoint);
    let backends = BackendSet::from_config(&cfgs, BackendSet::pitches_for(&spec)).unwrap();

    let out = tmp.path().join("run");
    let config = RunConfig {
        output_dir: out.clone(),
        ..RunConfig::default()
    };
    let err = run_story(&spec, &HashMap::new(), &backends, &config).unwrap_err();
    match err {
        PipelineError::StoryAborted {
            failed_scene,
            last_committed,
            cause,
        } => {
            assert_eq!(failed_scene, 1);
            assert_eq!(last_committed, Some(0));
            assert!(
                matches!(*cause, PipelineError::Backend(BackendError::Wire { status: 500, .. })),
                "unexpected cause: {cause:?}"
            );
        }
        other => panic!("expected StoryAborted, got {other:?}"),
    }
    stub.finish();

    let transcript = std::fs::read_to_string(out.join("transcript.jsonl")).unwrap();
    let lines: Vec<&str> = transcript.lines().filter(|l| !l.trim().is_empty()).collect();
    assert_eq!(lines.len(), 1, "exactly the committed scene is on disk");
    let record: Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(record["scene_index"], 0);
    assert_eq!(record["speaker"], "Brin");
    assert!(out.join("scene_000_Brin.wav").exists());
    assert!(!out.join("scene_001_Olla.wav").exists());
    assert!(
        !out.join("bank.jsonl").exists(),
        "bank dump is only written after a full run"
    );
}

#[test]
fn full_live_pipeline_round_trip_over_caption_chat_and_speech() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = spec_with_references(tmp.path());

    let wav_a = write_wav_bytes(&AudioClip::sine(180.0, 0.2, 22_050, 0.5)).unwrap();
    let wav_b = write_wav_bytes(&AudioClip::sine(300.0, 0.2, 22_050, 0.5)).unwrap();
    // Scene order: caption, chat, speech for scene 0, then again for scene 1.
    let stub = serve(vec![
        Reply::Ok(json!({ "caption": "a rope bridge in fading light" })),
        Reply::Ok(json!({ "text": "Steady now, one plank at a time." })),
        Reply::Ok(json!({ "audio_b64": BASE64.encode(&wav_a), "sample_rate": 22_050 })),
        Reply::Ok(json!({ "caption": "mist curling over the gorge" })),
        Reply::Ok(json!({ "text": "Watch the third rope, it frays!" })),
        Reply::Ok(json!({ "audio_b64": BASE64.encode(&wav_b), "sample_rate": 22_050 })),
    ]);

    let live = live_config(&stub.endpoint);
    let cfgs = BackendsConfig {
        caption: live.clone(),
        dialogue: live.clone(),
        speech: live.clone(),
        embed: BackendConfig::default(),
        frame_extract_cmd: None,
    };
    let backends = BackendSet::from_config(&cfgs, BackendSet::pitches_for(&spec)).unwrap();

    // Live captioning needs a frame source per scene.
    let mut videos = HashMap::new();
    for scene in &spec.scenes {
        let frames: Vec<narravox::ImageRef> = (0..10u8)
            .map(|i| narravox::ImageRef::Inline(vec![i; 4]))
            .collect();
        videos.insert(
            scene.scene_id.clone(),
            narravox::FrameSequence::new(frames, 2.0).unwrap(),
        );
    }

    let out = tmp.path().join("run");
    let config = RunConfig {
        output_dir: out.clone(),
        ..RunConfig::default()
    };
    let result = run_story(&spec, &videos, &backends, &config).unwrap();
    assert_eq!(result.artifacts.len(), 2);
    assert_eq!(result.artifacts[0].caption, "a rope bridge in fading light");
    assert_eq!(result.artifacts[0].dialogue, "Steady now, one plank at a time.");
    assert_eq!(result.artifacts[1].caption, "mist curling over the gorge");
    assert!(result.artifacts[1]
        .assembled_prompt
        .contains("Brin (scene 0): Steady now, one plank at a time."));

    let requests = stub.finish();
    let routes: Vec<&str> = requests.iter().map(|r| r.route.as_str()).collect();
    assert_eq!(routes, ["caption", "chat", "speech", "caption", "chat", "speech"]);
    // The second speech request carries the first scene as conversational context.
    let context = requests[5].body["context"].as_array().unwrap();
    assert_eq!(context.len(), 1);
    assert_eq!(context[0]["speaker"], "Brin");
    assert_eq!(context[0]["text"], "Steady now, one plank at a time.");
}
