use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use animforge::metrics::{Evaluator, MetricReport};
use animforge::pipeline::{
    self, Pipeline, PipelineError, Progress, RunConfig, StageId, StageStatus, Workspace,
};
use animforge::prompt::{Camera, GenerationParams};
use animforge::providers::{
    Capability, ChatRequest, ChatTask, FrameSequence, Image, ImageRequest, Message, ProviderBindings,
    ProviderSet, VideoRequest,
};
use animforge::script::Narrative;

#[derive(Parser)]
#[command(name = "animforge", version, about = "Turn a short narrative into an animated clip")]
struct Cli {
    /// Print every pipeline step, not just stage boundaries.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start a new run in an empty workspace.
    Run(RunArgs),
    /// Continue an interrupted run.
    Resume(WorkspaceArg),
    /// Show the stage status of a workspace.
    Inspect(InspectArgs),
    /// Score clips, or the selected clips of a finished run.
    Eval(EvalArgs),
    /// Make one small call per provider capability.
    ProvidersCheck(ProvidersCheckArgs),
}

#[derive(Args)]
struct WorkspaceArg {
    #[arg(long, env = "ANIMFORGE_WORKSPACE")]
    workspace: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Story text, or a path to a file holding it.
    #[arg(long)]
    narrative: String,
    #[arg(long, env = "ANIMFORGE_WORKSPACE")]
    workspace: PathBuf,
    /// JSON run configuration; flags given here override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// `mock`, or a provider bindings JSON file.
    #[arg(long)]
    providers: Option<String>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long, env = "ANIMFORGE_WORKSPACE")]
    workspace: PathBuf,
    /// Print the raw checkpoint as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "target")]
struct EvalTarget {
    /// A directory of frames with its meta.json. Repeatable.
    #[arg(long)]
    clip: Vec<PathBuf>,
    /// A finished run.
    #[arg(long)]
    workspace: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    target: EvalTarget,
    /// Text for the alignment score of `--clip` reports.
    #[arg(long, requires = "clip")]
    text: Option<String>,
    #[arg(long, default_value = "mock")]
    providers: String,
}

#[derive(Args)]
struct ProvidersCheckArgs {
    #[arg(long, default_value = "mock")]
    providers: String,
    #[arg(long)]
    json: bool,
}

/// Bad input detected after argument parsing; exits like a clap error.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn load_bindings(spec: &str) -> Result<ProviderBindings> {
    if spec == "mock" {
        return Ok(ProviderBindings::default());
    }
    let path = Path::new(spec);
    if !path.is_file() {
        return Err(usage(format!("--providers must be `mock` or a bindings file; {spec} is neither")));
    }
    Ok(ProviderBindings::load(path)?)
}

fn read_narrative(arg: &str) -> Result<Narrative> {
    let path = Path::new(arg);
    let text = if path.is_file() {
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?
    } else {
        arg.to_string()
    };
    Narrative::new(text).map_err(|e| usage(format!("--narrative: {e}")))
}

fn progress_printer(verbose: bool) -> impl Fn(&Progress) + Send + Sync + 'static {
    move |p| match p {
        Progress::StageStarted { stage } => {
            eprintln!("[{}/{}] {stage} ...", stage.number(), StageId::ALL.len())
        }
        Progress::Step { key, cached, .. } if verbose => {
            eprintln!("      {key}{}", if *cached { " (cached)" } else { "" })
        }
        Progress::Step { .. } => {}
        Progress::StageFinished(t) => eprintln!(
            "[{}/{}] {} done in {:.2}s, {} provider calls",
            t.stage.number(),
            StageId::ALL.len(),
            t.stage,
            t.seconds,
            t.calls.total()
        ),
    }
}

fn cmd_run(args: RunArgs, verbose: bool) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<RunConfig>(&text)
                .map_err(|e| usage(format!("--config {}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    config.narrative = read_narrative(&args.narrative)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(p) = &args.providers {
        config.providers = load_bindings(p)?;
    }
    config.workspace = args.workspace;
    if let Err(e) = config.validate() {
        return Err(usage(e.to_string()));
    }
    let summary = Pipeline::from_config(config)?.on_progress(progress_printer(verbose)).run()?;
    eprintln!(
        "{}: {} clips, {} frames, {} provider calls",
        summary.run_id,
        summary.manifest.clips.len(),
        summary.manifest.total_frames,
        summary.calls.total()
    );
    println!("{}", summary.manifest_path.display());
    Ok(())
}

fn cmd_resume(args: WorkspaceArg, verbose: bool) -> Result<()> {
    if Workspace::read_checkpoint(&args.workspace)?.is_none() {
        return Err(PipelineError::NotAWorkspace(args.workspace).into());
    }
    let config = Workspace::read_config(&args.workspace)?;
    let summary = Pipeline::from_config(config)?.on_progress(progress_printer(verbose)).resume()?;
    if summary.nothing_to_do {
        eprintln!("nothing to do: {} is complete", summary.run_id);
    } else {
        eprintln!("{}: completed with {} provider calls", summary.run_id, summary.calls.total());
    }
    println!("{}", summary.manifest_path.display());
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Result<()> {
    let checkpoint = Workspace::read_checkpoint(&args.workspace)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&checkpoint)?);
        return Ok(());
    }
    let status = |s: StageId| checkpoint.as_ref().map_or(StageStatus::Pending, |c| c.status(s));
    match &checkpoint {
        Some(c) => println!("run {}  ({} steps, {} artifacts)", c.run_id, c.steps.len(), c.artifacts.len()),
        None => println!("no run in {}", args.workspace.display()),
    }
    for stage in StageId::ALL {
        let label = match status(stage) {
            StageStatus::Pending => "pending",
            StageStatus::InProgress => "in progress",
            StageStatus::Done => "done",
        };
        println!("{}  {:<22} {label}", stage.number(), stage.name());
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let providers = load_bindings(&args.providers)?.build(RunConfig::default().image_size)?;
    let evaluator = Evaluator::new(providers.embedder, providers.segmenter);
    if let Some(root) = &args.target.workspace {
        let report = pipeline::evaluate_workspace(root, &evaluator)?;
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    let reports = args
        .target
        .clip
        .iter()
        .map(|dir| {
            let clip = FrameSequence::read_dir(dir).with_context(|| format!("reading clip {}", dir.display()))?;
            Ok(evaluator.evaluate_clip(&clip, args.text.as_deref())?)
        })
        .collect::<Result<Vec<MetricReport>>>()?;
    let out = match reports.as_slice() {
        [one] => serde_json::to_string_pretty(one)?,
        many => serde_json::to_string_pretty(many)?,
    };
    println!("{out}");
    Ok(())
}

fn probe(set: &ProviderSet, capability: Capability) -> Result<(), String> {
    let img = Image::filled(16, 16, [120, 140, 160]);
    let r = match capability {
        Capability::Chat => set
            .chat
            .chat(&ChatRequest::new(ChatTask::Ping, vec![Message::user("ping")], Default::default()))
            .map(drop),
        Capability::Image => set.images.generate_images(&ImageRequest::new("a grey square", vec![], 0), 1).map(drop),
        Capability::Video => set
            .video
            .generate_videos(
                &VideoRequest {
                    conditioning_image: img,
                    prompt: "a grey square".into(),
                    params: GenerationParams {
                        description: "a grey square".into(),
                        motion: 1,
                        guidance_scale: 7.5,
                        negative_prompt: String::new(),
                        camera: Camera::default(),
                    },
                    seed: 0,
                    frame_count: 2,
                    fps: 8.0,
                },
                1,
            )
            .map(drop),
        Capability::Segment => set.segmenter.segment(&img).map(drop),
        Capability::Embed => set.embedder.embed_text("ping").map(drop),
    };
    r.map_err(|e| e.to_string())
}

fn cmd_providers_check(args: ProvidersCheckArgs) -> Result<()> {
    let bindings = load_bindings(&args.providers)?;
    let set = bindings.build(64)?;
    let mut rows = Vec::new();
    for capability in Capability::ALL {
        let t0 = Instant::now();
        let result = probe(&set, capability);
        let ms = t0.elapsed().as_secs_f64() * 1e3;
        let kind = match bindings.get(capability) {
            animforge::providers::Binding::Mock => "mock",
            animforge::providers::Binding::Remote { .. } => "remote",
        };
        rows.push(serde_json::json!({
            "capability": capability.name(),
            "binding": kind,
            "ok": result.is_ok(),
            "latency_ms": ms,
            "error": result.err(),
        }));
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
    } else {
        for r in &rows {
            let status = if r["ok"] == true { "OK".to_string() } else { format!("FAIL {}", r["error"].as_str().unwrap_or("")) };
            println!(
                "{:<8} {:<7} {:>9.2} ms  {status}",
                r["capability"].as_str().unwrap_or(""),
                r["binding"].as_str().unwrap_or(""),
                r["latency_ms"].as_f64().unwrap_or(0.0)
            );
        }
    }
    let failed = rows.iter().filter(|r| r["ok"] != true).count();
    if failed > 0 {
        anyhow::bail!("{failed} of {} capabilities failed", rows.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a, cli.verbose),
        Command::Resume(a) => cmd_resume(a, cli.verbose),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Eval(a) => cmd_eval(a),
        Command::ProvidersCheck(a) => cmd_providers_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if let Some(PipelineError::StageFailed { .. }) = e.downcast_ref::<PipelineError>() {
                eprintln!("fix the cause, then continue with `animforge resume --workspace <dir>`");
            }
            ExitCode::from(1)
        }
    }
}
