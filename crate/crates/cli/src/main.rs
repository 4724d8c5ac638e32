//! `narravox`: generate character-driven multimodal stories scene by scene
//! and score the results.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure. Logs go to
//! stderr as JSON lines; tables and summaries go to stdout; artifacts go
//! only to the output directory.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use narravox::audio_metrics::{FilePhonemizer, Phonemizer, RulePhonemizer, VoiceStats};
use narravox::backend::{BackendConfig, BackendSet, BackendsConfig, EmbedClient};
use narravox::bank::Capacity;
use narravox::harness::{
    evaluate_story, load_references, self_references, write_report, AudioReference,
    EvalReferences, MetricsReport,
};
use narravox::media::{
    load_frame_manifest, read_wav, representative_index, sample_keyframes, FrameSequence,
};
use narravox::pipeline::{load_run, run_story, RunConfig, StoryRunResult, SPEC_ECHO_FILENAME};
use narravox::story::{parse_story_spec, StorySpec};

#[derive(Parser)]
#[command(
    name = "narravox",
    version,
    about = "Scene-by-scene story generation with dialogue memory, plus text and voice evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scene pipeline over a story spec
    Generate(GenerateArgs),
    /// Score a finished run directory and write report.json
    Evaluate(EvaluateArgs),
    /// Profile reference voice clips against their transcripts
    AnalyzeVoice(AnalyzeVoiceArgs),
    /// Offline end to end: mock generation, then self-referenced evaluation
    MockRun(MockRunArgs),
}

/// Pipeline knobs shared by generate and mock-run.
#[derive(Args)]
struct RunFlags {
    /// Keyframes sampled per scene video
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Dialogue-memory capacity: an integer or "all"
    #[arg(long, default_value = "all")]
    rnb_capacity: Capacity,
    /// Prior turns handed to the speech backend as context
    #[arg(long, default_value_t = 2)]
    speech_context: usize,
    /// Skip captioning; prompts carry a fixed placeholder instead
    #[arg(long)]
    no_image_conditioning: bool,
}

impl RunFlags {
    fn to_config(&self, out: &Path) -> RunConfig {
        RunConfig {
            keyframe_count_k: self.k,
            rnb_capacity: self.rnb_capacity,
            speech_context_turns: self.speech_context,
            output_dir: out.to_path_buf(),
            image_conditioning: !self.no_image_conditioning,
            ..RunConfig::default()
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// Story spec JSON
    #[arg(long)]
    spec: PathBuf,
    /// Output directory for artifacts
    #[arg(long)]
    out: PathBuf,
    /// Backends config JSON; omitted means all-mock
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of per-scene frame manifests named <scene_id>.json
    #[arg(long)]
    videos: Option<PathBuf>,
    /// Force mock backends regardless of config
    #[arg(long)]
    mock: bool,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Run directory produced by generate or mock-run
    #[arg(long)]
    out: PathBuf,
    /// References file (JSON with "texts" and "audio" sections)
    #[arg(long)]
    refs: Option<PathBuf>,
    /// Backends config JSON for the embedding role; omitted means mock
    #[arg(long)]
    config: Option<PathBuf>,
    /// Force mock backends regardless of config
    #[arg(long)]
    mock: bool,
    /// Directory of per-scene frame manifests, to re-derive keyframes
    #[arg(long)]
    videos: Option<PathBuf>,
    /// Keyframes per scene when re-deriving from --videos
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Frame hop in seconds assumed for contour reference files
    #[arg(long, default_value_t = 0.01)]
    hop: f64,
}

#[derive(Args)]
struct AnalyzeVoiceArgs {
    /// Voice clip (WAV); repeatable, paired with --transcript by position
    #[arg(long, required = true)]
    audio: Vec<PathBuf>,
    /// Transcript text file; repeatable, paired with --audio by position
    #[arg(long, required = true)]
    transcript: Vec<PathBuf>,
    /// External phoneme file (whitespace-separated symbols) instead of the
    /// builtin rules; applies to every pair
    #[arg(long)]
    phonemes: Option<PathBuf>,
}

#[derive(Args)]
struct MockRunArgs {
    /// Story spec JSON
    #[arg(long)]
    spec: PathBuf,
    /// Output directory for artifacts and report.json
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(Box<dyn std::error::Error>),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl<E: std::error::Error + 'static> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(Box::new(e))
    }
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    init_logging();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            1
        }
        Err(CliError::Runtime(e)) => {
            log::error!("{e}");
            let mut source = e.source();
            while let Some(s) = source {
                log::error!("caused by: {s}");
                source = s.source();
            }
            eprintln!("error: {e}");
            2
        }
    }
}

fn init_logging() {
    let env = env_logger::Env::default().default_filter_or("info");
    env_logger::Builder::from_env(env)
        .format(|buf, record| {
            let line = serde_json::json!({
                "ts": buf.timestamp().to_string(),
                "level": record.level().to_string(),
                "target": record.target(),
                "message": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        })
        .init();
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::AnalyzeVoice(args) => cmd_analyze_voice(args),
        Command::MockRun(args) => cmd_mock_run(args),
    }
}

fn load_spec(path: &Path) -> Result<StorySpec, CliError> {
    let text = fs::read_to_string(path).map_err(|e| {
        CliError::Runtime(format!("cannot read story spec {}: {e}", path.display()).into())
    })?;
    Ok(parse_story_spec(&text)?)
}

fn build_backends(
    config: Option<&Path>,
    force_mock: bool,
    spec: &StorySpec,
) -> Result<BackendSet, CliError> {
    let cfg = match config {
        Some(path) => {
            let loaded = BackendsConfig::load(path)?;
            if force_mock {
                loaded.force_mock()
            } else {
                loaded
            }
        }
        None => BackendsConfig::default(),
    };
    Ok(BackendSet::from_config(
        &cfg,
        BackendSet::pitches_for(spec),
    )?)
}

/// Map scene ids to frame sequences from a manifest directory. Scenes
/// without a manifest are simply absent; the pipeline decides whether that
/// is acceptable.
fn load_videos(
    dir: Option<&Path>,
    spec: &StorySpec,
) -> Result<HashMap<String, FrameSequence>, CliError> {
    let mut videos = HashMap::new();
    let Some(dir) = dir else {
        return Ok(videos);
    };
    for scene in &spec.scenes {
        let manifest = dir.join(format!("{}.json", scene.scene_id));
        if manifest.exists() {
            videos.insert(scene.scene_id.clone(), load_frame_manifest(&manifest)?);
        } else {
            log::debug!("no frame manifest for scene {}", scene.scene_id);
        }
    }
    Ok(videos)
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    let spec = load_spec(&args.spec)?;
    let backends = build_backends(args.config.as_deref(), args.mock, &spec)?;
    let videos = load_videos(args.videos.as_deref(), &spec)?;
    let config = args.run.to_config(&args.out);
    let result = run_story(&spec, &videos, &backends, &config)?;
    println!(
        "generated {} scenes into {}",
        result.artifacts.len(),
        args.out.display()
    );
    Ok(())
}

/// Fill in speaker audio references from the spec's voice_reference paths
/// for any speaker the refs file did not cover.
fn extend_refs_from_spec(refs: &mut EvalReferences, spec: &StorySpec) {
    for character in &spec.characters {
        if refs.audio.contains_key(&character.name) {
            continue;
        }
        let Some(path) = &character.voice_reference else {
            continue;
        };
        match read_wav(path) {
            Ok(clip) => {
                refs.audio
                    .insert(character.name.clone(), AudioReference::Clip(clip));
            }
            Err(e) => log::warn!(
                "voice reference for {} unavailable: {e}",
                character.name
            ),
        }
    }
}

fn reattach_keyframes(
    result: &mut StoryRunResult,
    videos_dir: &Path,
    k: usize,
) -> Result<(), CliError> {
    for artifact in &mut result.artifacts {
        let manifest = videos_dir.join(format!("{}.json", artifact.scene_id));
        if !manifest.exists() {
            continue;
        }
        let frames = load_frame_manifest(&manifest)?;
        let sampled = sample_keyframes(&frames, k)?;
        let rep = representative_index(k)?.min(sampled.len() - 1);
        artifact.keyframe = Some(sampled[rep].clone());
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let mut result = load_run(&args.out)?;
    let spec = load_spec(&args.out.join(SPEC_ECHO_FILENAME))?;

    if let Some(videos_dir) = args.videos.as_deref() {
        reattach_keyframes(&mut result, videos_dir, args.k)?;
    }

    let mut refs = match args.refs.as_deref() {
        Some(path) => load_references(path, args.hop)?,
        None => EvalReferences::default(),
    };
    extend_refs_from_spec(&mut refs, &spec);

    let embed = embed_client(args.config.as_deref(), args.mock)?;
    let config = RunConfig {
        keyframe_count_k: args.k,
        output_dir: args.out.clone(),
        ..RunConfig::default()
    };
    let report = evaluate_story(&result, &refs, &embed, &spec.title, &config)?;
    let report_path = args.out.join("report.json");
    write_report(&report, &report_path)?;
    println!("wrote {}", report_path.display());
    print_aggregates(&report);
    Ok(())
}

fn embed_client(config: Option<&Path>, force_mock: bool) -> Result<EmbedClient, CliError> {
    let cfg = match config {
        Some(path) => {
            let loaded = BackendsConfig::load(path)?;
            if force_mock {
                loaded.force_mock()
            } else {
                loaded
            }
        }
        None => BackendsConfig::default(),
    };
    Ok(EmbedClient::new(cfg.embed))
}

fn cmd_mock_run(args: MockRunArgs) -> Result<(), CliError> {
    let spec = load_spec(&args.spec)?;
    let backends = BackendSet::mock(BackendSet::pitches_for(&spec));
    let config = args.run.to_config(&args.out);
    let result = run_story(&spec, &HashMap::new(), &backends, &config)?;

    let refs = self_references(&result, &spec);
    let embed = EmbedClient::new(BackendConfig::default());
    let report = evaluate_story(&result, &refs, &embed, &spec.title, &config)?;
    let report_path = args.out.join("report.json");
    write_report(&report, &report_path)?;

    println!(
        "mock run: {} scenes into {}",
        result.artifacts.len(),
        args.out.display()
    );
    print_aggregates(&report);
    Ok(())
}

fn print_aggregates(report: &MetricsReport) {
    let line = |name: &str, m: Option<narravox::harness::MeanStd>| match m {
        Some(m) => println!("{name:<12} {:>12.4} ± {:.4}", m.mean, m.std),
        None => println!("{name:<12} {:>12}", "absent"),
    };
    line("BLEU", report.aggregate.bleu);
    line("BERT F1", report.aggregate.bert_f1);
    line("CLIPScore", report.aggregate.clip_score);
    line("DTW", report.aggregate.dtw);
}

fn cmd_analyze_voice(args: AnalyzeVoiceArgs) -> Result<(), CliError> {
    if args.audio.len() != args.transcript.len() {
        return Err(CliError::Usage(format!(
            "--audio and --transcript must pair up: got {} audio and {} transcript",
            args.audio.len(),
            args.transcript.len()
        )));
    }

    let file_g2p = match args.phonemes.as_deref() {
        Some(path) => Some(FilePhonemizer::load(path)?),
        None => None,
    };
    let g2p: &dyn Phonemizer = match &file_g2p {
        Some(f) => f,
        None => &RulePhonemizer,
    };

    let mut rows: Vec<(String, VoiceStats)> = Vec::new();
    for (audio_path, transcript_path) in args.audio.iter().zip(&args.transcript) {
        let clip = read_wav(audio_path)?;
        let transcript = fs::read_to_string(transcript_path).map_err(|e| {
            CliError::Runtime(
                format!("cannot read transcript {}: {e}", transcript_path.display()).into(),
            )
        })?;
        let stats = narravox::audio_metrics::voice_stats_report(&clip, &transcript, g2p)?;
        let label = audio_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| audio_path.display().to_string());
        rows.push((label, stats));
    }

    print_voice_table(&rows);
    Ok(())
}

fn print_voice_table(rows: &[(String, VoiceStats)]) {
    let label_width = rows
        .iter()
        .map(|(label, _)| label.len())
        .max()
        .unwrap_or(4)
        .max(4);
    println!(
        "{:<label_width$} | Unique Words | Voiced Phonemes | Pitch Std (Hz) | Pause Ratio | Duration (sec)",
        "Clip"
    );
    for (label, stats) in rows {
        let pitch = match stats.pitch_std_hz {
            Some(v) => format!("{v:.2}"),
            None => "n/a".to_string(),
        };
        println!(
            "{:<label_width$} | {:>12} | {:>15} | {:>14} | {:>11.2} | {:>14.2}",
            label,
            stats.unique_words,
            stats.voiced_phonemes,
            pitch,
            stats.pause_ratio,
            stats.duration_s
        );
    }
}
