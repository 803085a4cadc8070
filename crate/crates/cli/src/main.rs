//! `retarget` — multi-operator image retargeting from the command line.
//!
//! Subcommands: `train` (self-play training), `retarget` (single-path
//! inference), `multiop` (dynamic-programming search), `bdw` (distance
//! between two images), and `bench` (sequential vs. search comparison).
//!
//! A `key = value` config file can pre-set options; explicit flags win.
//! `RETARGET_SEED` supplies a seed when neither does. Setting
//! `RETARGET_DETERMINISTIC=1` reports all wall times as 0 so repeated
//! runs produce byte-identical reports.

mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use retarget_core::agent::{self, TrainConfig};
use retarget_core::bdw::Scorer;
use retarget_core::image::{load_image, resize_bilinear, save_image, Image};
use retarget_core::multiop::multiop_search;
use retarget_core::neural::{load_checkpoint, save_checkpoint, NetConfig};
use retarget_core::ops::{steps_for_ratio, Action, StepSchedule};

use config::FileConfig;

#[derive(Parser)]
#[command(name = "retarget", version, about = "Multi-operator image retargeting")]
struct Cli {
    /// Config file with `key = value` lines; explicit flags take
    /// precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the self-play agent on a dataset directory or manifest.
    Train(TrainArgs),
    /// Retarget one image with a trained checkpoint.
    Retarget(RetargetArgs),
    /// Search operator sequences with the dynamic-programming baseline.
    Multiop(MultiopArgs),
    /// Print the bidirectional warping distance between two images.
    Bdw(BdwArgs),
    /// Run both engines and report generated-image and wall-time ratios.
    Bench(BenchArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Image directory or newline-separated manifest of image paths.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Replace the self-play reward with the per-step score change.
    #[arg(long)]
    no_self_play: bool,
    /// Fix every loss weight at 1.
    #[arg(long)]
    no_freq_weight: bool,
    /// Use the literal all-entries minimum in the weight rule.
    #[arg(long)]
    strict_eq4_min: bool,
    /// `bdw` or `external:<command>`.
    #[arg(long)]
    reward: Option<String>,
    /// Network size: `desk` or `paper`.
    #[arg(long)]
    net: Option<String>,
    /// Dataset images wider than this are shrunk on ingestion.
    #[arg(long)]
    work_width: Option<usize>,
    /// Metrics JSON-lines path (defaults to stdout).
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Evaluate against a uniform-random opponent every N batches.
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    eval_episodes: Option<usize>,
}

#[derive(Args)]
struct RetargetArgs {
    #[arg(long)]
    input: PathBuf,
    /// Target width as a fraction of the original, in [0.5, 0.975].
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Record the applied action sequence as JSON.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct MultiopArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    reward: Option<String>,
}

#[derive(Args)]
struct BdwArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    input: PathBuf,
    /// Comma-separated ratios, e.g. `0.75,0.5`.
    #[arg(long)]
    ratios: Option<String>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    report: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let file_config = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Train(args) => cmd_train(args, &file_config),
        Command::Retarget(args) => cmd_retarget(args, &file_config),
        Command::Multiop(args) => cmd_multiop(args, &file_config),
        Command::Bdw(args) => cmd_bdw(args),
        Command::Bench(args) => cmd_bench(args, &file_config),
    }
}

fn deterministic_timing() -> bool {
    std::env::var("RETARGET_DETERMINISTIC").map_or(false, |v| v == "1")
}

fn seed_fallback() -> Option<u64> {
    std::env::var("RETARGET_SEED").ok().and_then(|v| v.parse().ok())
}

fn resolve_seed(flag: Option<u64>, file: &FileConfig) -> Result<u64> {
    Ok(flag
        .or(file.get_u64("seed")?)
        .or_else(seed_fallback)
        .unwrap_or(0))
}

fn parse_scorer(flag: Option<String>, file: &FileConfig) -> Result<Scorer> {
    let spec = flag
        .or_else(|| file.get_str("reward"))
        .unwrap_or_else(|| "bdw".to_string());
    Ok(Scorer::parse(&spec)?)
}

fn load_dataset(path: &Path, work_width: usize) -> Result<Vec<Image>> {
    let mut paths: Vec<PathBuf> = if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .with_context(|| format!("reading dataset directory {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("png") | Some("ppm")
                )
            })
            .collect();
        entries.sort();
        entries
    } else {
        fs::read_to_string(path)
            .with_context(|| format!("reading dataset manifest {}", path.display()))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(PathBuf::from)
            .collect()
    };
    if paths.is_empty() {
        bail!("dataset {} contains no images", path.display());
    }
    paths.sort();
    let mut images = Vec::with_capacity(paths.len());
    for p in paths {
        let img = load_image(&p).with_context(|| format!("loading {}", p.display()))?;
        images.push(ingest(img, work_width)?);
    }
    Ok(images)
}

/// Shrinks an image to the working width when it is wider, preserving
/// aspect ratio.
fn ingest(img: Image, work_width: usize) -> Result<Image> {
    if img.width() <= work_width {
        return Ok(img);
    }
    let height = ((img.height() as f64 * work_width as f64 / img.width() as f64).round()
        as usize)
        .max(1);
    Ok(resize_bilinear(&img, work_width, height)?)
}

fn cmd_train(args: TrainArgs, file: &FileConfig) -> Result<()> {
    let defaults = TrainConfig::default();
    let net = match args
        .net
        .or_else(|| file.get_str("net"))
        .unwrap_or_else(|| "desk".into())
        .as_str()
    {
        "desk" => NetConfig::desk(),
        "paper" => NetConfig::paper(),
        other => bail!("unknown net '{other}': expected 'desk' or 'paper'"),
    };
    let config = TrainConfig {
        batch_size: args.batch.or(file.get_usize("batch")?).unwrap_or(defaults.batch_size),
        gamma: args.gamma.or(file.get_f64("gamma")?).unwrap_or(defaults.gamma),
        beta: args.beta.or(file.get_f64("beta")?).unwrap_or(defaults.beta),
        lr: args.lr.or(file.get_f64("lr")?).unwrap_or(defaults.lr),
        episodes: args
            .episodes
            .or(file.get_usize("episodes")?)
            .unwrap_or(defaults.episodes),
        self_play: !args.no_self_play,
        freq_weight: !args.no_freq_weight,
        strict_eq4_min: args.strict_eq4_min,
        seed: resolve_seed(args.seed, file)?,
        scorer: parse_scorer(args.reward, file)?,
        net,
        eval_every_batches: args
            .eval_every
            .or(file.get_usize("eval_every")?)
            .unwrap_or(0),
        eval_episodes: args
            .eval_episodes
            .or(file.get_usize("eval_episodes")?)
            .unwrap_or(defaults.eval_episodes),
        report_wall_time: !deterministic_timing(),
        ..defaults
    };
    let work_width = args
        .work_width
        .or(file.get_usize("work_width")?)
        .unwrap_or(240);
    let images = load_dataset(&args.dataset, work_width)?;

    let outcome = match &args.metrics {
        Some(path) => {
            let mut out = fs::File::create(path)
                .with_context(|| format!("creating {}", path.display()))?;
            agent::train(&config, &images, &mut out)?
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            let outcome = agent::train(&config, &images, &mut lock)?;
            lock.flush().ok();
            outcome
        }
    };
    save_checkpoint(&args.out, &outcome.net, Some(&outcome.optimizer))?;
    eprintln!(
        "trained {} episodes ({} batches); checkpoint written to {}",
        outcome.episodes_run,
        outcome.batches_run,
        args.out.display()
    );
    for eval in &outcome.evals {
        eprintln!(
            "eval at batch {}: win rate {:.3} vs uniform-random opponent",
            eval.batch, eval.win_rate
        );
    }
    Ok(())
}

fn ratio_arg(flag: Option<f64>, file: &FileConfig) -> Result<f64> {
    flag.or(file.get_f64("ratio")?)
        .context("--ratio is required")
}

fn cmd_retarget(args: RetargetArgs, file: &FileConfig) -> Result<()> {
    let ratio = ratio_arg(args.ratio, file)?;
    let (net, _) = load_checkpoint(&args.checkpoint)?;
    let input = load_image(&args.input)?;
    let (output, actions) = agent::infer(&net, &input, ratio)?;
    save_image(&output, &args.output)?;
    if let Some(trace_path) = &args.trace {
        let trace = json!({
            "input_width": input.width(),
            "input_height": input.height(),
            "ratio": ratio,
            "i_max": actions.len(),
            "actions": actions,
        });
        fs::write(trace_path, format!("{}\n", serde_json::to_string_pretty(&trace)?))
            .with_context(|| format!("writing {}", trace_path.display()))?;
    }
    eprintln!(
        "retargeted {} -> {} ({} steps: {})",
        input.width(),
        output.width(),
        actions.len(),
        summarize_actions(&actions)
    );
    Ok(())
}

/// Run-length rendering of an action sequence, e.g. `SCL x3, SC x2`.
fn summarize_actions(actions: &[Action]) -> String {
    let mut parts: Vec<String> = Vec::new();
    let mut iter = actions.iter().peekable();
    while let Some(action) = iter.next() {
        let mut count = 1;
        while iter.peek() == Some(&action) {
            iter.next();
            count += 1;
        }
        parts.push(format!("{action} x{count}"));
    }
    parts.join(", ")
}

fn cmd_multiop(args: MultiopArgs, file: &FileConfig) -> Result<()> {
    let ratio = ratio_arg(args.ratio, file)?;
    let steps = steps_for_ratio(ratio)?;
    let scorer = parse_scorer(args.reward, file)?;
    let input = load_image(&args.input)?;
    let schedule = StepSchedule::new(input.width())?;
    let mut report = multiop_search(&input, steps, &schedule, &scorer)?;
    if deterministic_timing() {
        report.wall_time_s = 0.0;
    }
    save_image(&report.best_image, &args.output)?;
    if let Some(report_path) = &args.report {
        fs::write(
            report_path,
            format!("{}\n", serde_json::to_string_pretty(&report)?),
        )
        .with_context(|| format!("writing {}", report_path.display()))?;
    }
    eprintln!(
        "searched {} images, best score {} via {}",
        report.images_generated,
        report.score,
        summarize_actions(&report.sequence)
    );
    Ok(())
}

fn cmd_bdw(args: BdwArgs) -> Result<()> {
    let a = load_image(&args.a)?;
    let b = load_image(&args.b)?;
    let score = retarget_core::bdw::bdw(&a, &b)?;
    println!("{score}");
    Ok(())
}

fn cmd_bench(args: BenchArgs, file: &FileConfig) -> Result<()> {
    let ratios: Vec<f64> = args
        .ratios
        .or_else(|| file.get_str("ratios"))
        .unwrap_or_else(|| "0.75,0.5".into())
        .split(',')
        .map(|s| s.trim().parse::<f64>().context("parsing ratio list"))
        .collect::<Result<_>>()?;
    let (net, _) = load_checkpoint(&args.checkpoint)?;
    let input = load_image(&args.input)?;
    let schedule = StepSchedule::new(input.width())?;
    let zero_time = deterministic_timing();

    let mut entries = Vec::new();
    for &ratio in &ratios {
        let steps = steps_for_ratio(ratio)?;

        let t0 = Instant::now();
        let (seq_image, actions) = agent::infer(&net, &input, ratio)?;
        let seq_time = if zero_time { 0.0 } else { t0.elapsed().as_secs_f64() };

        let mut search = multiop_search(&input, steps, &schedule, &Scorer::Bdw)?;
        if zero_time {
            search.wall_time_s = 0.0;
        }

        let images_ratio = search.images_generated as f64 / actions.len() as f64;
        let time_ratio = if seq_time > 0.0 {
            search.wall_time_s / seq_time
        } else {
            0.0
        };
        entries.push(json!({
            "ratio": ratio,
            "i_max": steps,
            "sequential": {
                "images_generated": actions.len(),
                "scorer_calls": 0,
                "wall_time_s": seq_time,
                "actions": actions,
                "output_width": seq_image.width(),
            },
            "multiop": search,
            "images_generated_ratio": images_ratio,
            "wall_time_ratio": time_ratio,
        }));
    }
    let report = json!({
        "input": args.input.to_string_lossy(),
        "width": input.width(),
        "height": input.height(),
        "ratios": entries,
    });
    fs::write(
        &args.report,
        format!("{}\n", serde_json::to_string_pretty(&report)?),
    )
    .with_context(|| format!("writing {}", args.report.display()))?;
    eprintln!("benchmark report written to {}", args.report.display());
    Ok(())
}
