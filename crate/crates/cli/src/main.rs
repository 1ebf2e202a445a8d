use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use lidar_pseudolabel::classify::RemoteParams;
use lidar_pseudolabel::config::{BackendConfig, PipelineConfig};
use lidar_pseudolabel::eval::split_eval;
use lidar_pseudolabel::pipeline::{self, Discovery, RunReport};
use lidar_pseudolabel::seqio::{load_sequence, read_ground_truth, read_pseudolabels, write_ground_truth, write_pseudolabels, write_sequence};
use lidar_pseudolabel::synth::{benchmark_scene, generate_scene, SceneSpec};

const GROUND_TRUTH_FILE: &str = "ground_truth.jsonl";

#[derive(Parser)]
#[command(name = "plabel", version, about = "Unsupervised class-aware pseudo-labels for LiDAR sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sequence with ground truth.
    Synth(SynthArgs),
    /// Ground removal through tracking; writes segments and tracks.
    Discover(StageArgs),
    /// Classify the tracks of a discovery directory.
    Classify(StageArgs),
    /// Refine classified tracks and export pseudo-labels.
    Refine(StageArgs),
    /// Run every stage on a sequence manifest.
    Pipeline(StageArgs),
    /// Score pseudo-labels against ground truth.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Mock,
    Remote,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (JSON); defaults apply to omitted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Base URL of the remote classifier.
    #[arg(long)]
    backend_url: Option<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,
    /// Base seed of the per-frame ground fits.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct StageArgs {
    /// Sequence manifest (discover, pipeline) or a previous stage's output directory.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene description (JSON); the built-in benchmark scene when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Point dropout probability for the benchmark scene.
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
}

#[derive(Args)]
struct EvalArgs {
    /// Pseudo-label file, or a directory containing one.
    #[arg(long)]
    input: PathBuf,
    /// Ground-truth file.
    #[arg(long)]
    gt: PathBuf,
    /// Where to write the JSON report; printed to stdout otherwise.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn load_config(c: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    match (c.backend, &c.backend_url) {
        (Some(BackendKind::Mock), Some(_)) => bail!("--backend-url requires the remote backend"),
        (Some(BackendKind::Mock), None) => cfg.classify.backend = BackendConfig::Mock,
        (Some(BackendKind::Remote), url) | (None, url @ Some(_)) => {
            let mut params = match &cfg.classify.backend {
                BackendConfig::Remote(r) => r.clone(),
                BackendConfig::Mock => RemoteParams::default(),
            };
            if let Some(u) = url {
                params.url = u.clone();
            }
            cfg.classify.backend = BackendConfig::Remote(params);
        }
        (None, None) => {}
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    if let Some(s) = c.seed {
        cfg.ground.rng_seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_discovery(dir: &Path) -> Result<Discovery> {
    Ok(Discovery {
        segments: pipeline::read_segments(dir.join(pipeline::SEGMENTS_FILE))?,
        tracks: pipeline::read_tracks(dir.join(pipeline::TRACKS_FILE))?,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn finish(report: &RunReport, out: &Path) -> Result<()> {
    pipeline::write_report(report, out.join(pipeline::REPORT_FILE))?;
    println!("{}", serde_json::to_string(report)?);
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut spec = match &args.input {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            serde_json::from_str::<SceneSpec>(&text).with_context(|| format!("invalid scene {}", p.display()))?
        }
        None => benchmark_scene(args.seed.unwrap_or(0), args.dropout),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    let scene = generate_scene(&spec)?;
    let manifest = write_sequence(&scene.sequence, &args.output)?;
    write_ground_truth(&scene.ground_truth, args.output.join(GROUND_TRUTH_FILE))?;
    println!("{}", manifest.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => synth(args),
        Command::Discover(a) => {
            let cfg = load_config(&a.common)?;
            let seq = load_sequence(&a.input)?;
            let mut report = RunReport::default();
            let d = pipeline::with_workers(cfg.workers, || pipeline::discover(&seq, &cfg, &mut report))??;
            pipeline::write_discovery(&d, &a.output)?;
            finish(&report, &a.output)
        }
        Command::Classify(a) => {
            let cfg = load_config(&a.common)?;
            let d = read_discovery(&a.input)?;
            let backend = pipeline::make_backend(&cfg.classify.backend)?;
            let mut report = RunReport::default();
            let tracks = pipeline::with_workers(cfg.workers, || {
                pipeline::classify_tracks(&d.tracks, &d.segments, &cfg, backend.as_ref(), &mut report)
            })??;
            create_dir(&a.output)?;
            pipeline::write_discovery(&Discovery { segments: d.segments, tracks }, &a.output)?;
            finish(&report, &a.output)
        }
        Command::Refine(a) => {
            let cfg = load_config(&a.common)?;
            let tracks = pipeline::read_tracks(a.input.join(pipeline::TRACKS_FILE))?;
            let mut report = RunReport::default();
            let refined = pipeline::with_workers(cfg.workers, || pipeline::refine(&tracks, &cfg, &mut report))??;
            let labels = pipeline::export_labels(&refined);
            report.labels = labels.len();
            create_dir(&a.output)?;
            pipeline::write_tracks(&refined, a.output.join(pipeline::TRACKS_FILE))?;
            write_pseudolabels(&labels, a.output.join(pipeline::LABELS_FILE))?;
            finish(&report, &a.output)
        }
        Command::Pipeline(a) => {
            let cfg = load_config(&a.common)?;
            let report = pipeline::run_pipeline(&cfg, &a.input, &a.output)?;
            println!("{}", serde_json::to_string(&report)?);
            Ok(())
        }
        Command::Eval(a) => {
            let cfg = match &a.config {
                Some(p) => PipelineConfig::load(p)?,
                None => PipelineConfig::default(),
            };
            let labels_path = if a.input.is_dir() { a.input.join(pipeline::LABELS_FILE) } else { a.input.clone() };
            let labels = read_pseudolabels(&labels_path)?;
            let gts = read_ground_truth(&a.gt)?;
            let report = split_eval(&labels, &gts, &cfg.eval);
            let text = serde_json::to_string_pretty(&report)?;
            match &a.output {
                Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("cannot write {}", p.display()))?,
                None => println!("{text}"),
            }
            Ok(())
        }
    }
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
