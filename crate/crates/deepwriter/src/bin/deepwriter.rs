//! Command-line front end: corpus synthesis, splitting, training, finetuning,
//! evaluation, single-image identification, and model inspection.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};

use deepwriter::data::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use deepwriter::data::manifest::{
    load_manifest, split_per_writer, write_manifest_relative, Split,
};
use deepwriter::data::synth::{generate_synthetic_corpus, GlyphMode, SynthConfig};
use deepwriter::data::image_io::load_image;
use deepwriter::model::ArchitectureSpec;
use deepwriter::optim::TrainConfig;
use deepwriter::patching::PatchPlan;
use deepwriter::pipeline::{
    evaluate, identify, load_split, train, MetricsPoint, RunPhase, TrainOptions,
};
use deepwriter::{DwError, Result};

#[derive(Parser)]
#[command(name = "deepwriter", version, about = "Off-line writer identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic handwriting corpus with a manifest.
    Synth(SynthArgs),
    /// Build a 4:1:1 train/val/test manifest from a directory of images.
    Split(SplitArgs),
    /// Train a network from scratch.
    Train(TrainArgs),
    /// Finetune from a source checkpoint (fresh classifier at 10x lr).
    Finetune(FinetuneArgs),
    /// Evaluate a checkpoint on one split of a manifest.
    Eval(EvalArgs),
    /// Identify the writer of a single image.
    Identify(IdentifyArgs),
    /// Print a checkpoint's architecture and per-layer shape trace.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Rounded,
    Angular,
}

#[derive(Args)]
struct SynthArgs {
    /// Number of writers (distinct styles).
    #[arg(long)]
    writers: usize,
    /// Samples per writer.
    #[arg(long, default_value_t = 30)]
    samples: usize,
    /// Glyph generator mode; the two modes act as disjoint "languages".
    #[arg(long, value_enum, default_value_t = ModeArg::Rounded)]
    mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; also receives manifest.jsonl.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    /// Directory with one subdirectory per writer holding .pgm/.png images.
    #[arg(long)]
    images: PathBuf,
    /// Manifest file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ArchArg {
    /// Two-stream network over adjacent patch pairs.
    Deepwriter,
    /// Single-stream base network.
    Half,
}

#[derive(Args, Clone)]
struct NetArgs {
    /// Network form: two-stream `deepwriter` or single-stream `half`.
    #[arg(long, value_enum, default_value_t = ArchArg::Deepwriter)]
    arch: ArchArg,
    /// Channel/width scale on the full-size preset (1.0 = full size).
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Square input patch side in pixels.
    #[arg(long, default_value_t = 113)]
    input: usize,
}

#[derive(Args, Clone)]
struct OptArgs {
    #[arg(long, default_value_t = 256)]
    batch: usize,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 5e-4)]
    weight_decay: f64,
    /// Base learning rate (scratch default 1e-2, finetune default 1e-3).
    #[arg(long)]
    lr: Option<f64>,
    /// Iterations between tenfold learning-rate drops.
    #[arg(long)]
    lr_step: Option<u64>,
    #[arg(long, default_value_t = 0.1)]
    lr_drop: f64,
    /// Total iterations to run.
    #[arg(long)]
    stop_iter: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of scanned patches sampled at evaluation time.
    #[arg(long, default_value_t = 0.1)]
    ratio: f64,
    /// Worker threads; falls back to env DEEPWRITER_THREADS, then 1.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value_t = 50)]
    log_every: u64,
    /// Validate every N logged points (0 = never).
    #[arg(long, default_value_t = 0)]
    val_every: u64,
    /// Also append metrics as JSON lines to this file.
    #[arg(long)]
    metrics_out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    opt: OptArgs,
    /// Checkpoint file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Source checkpoint providing the pretrained shared-stream layers.
    #[arg(long)]
    from: PathBuf,
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    opt: OptArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    #[arg(long, default_value_t = 0.1)]
    ratio: f64,
}

#[derive(Args)]
struct IdentifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    ratio: f64,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Finetune(a) => cmd_finetune(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Identify(a) => cmd_identify(a),
        Command::Inspect(a) => cmd_inspect(a),
    }
}

fn log(line: &str) {
    let ts = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    eprintln!("[{ts}] {line}");
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut config = SynthConfig::new(a.writers, a.samples, a.seed);
    config.mode = match a.mode {
        ModeArg::Rounded => GlyphMode::Rounded,
        ModeArg::Angular => GlyphMode::Angular,
    };
    let entries = generate_synthetic_corpus(&config, &a.out)?;
    println!(
        "corpus={} writers={} samples={}",
        a.out.display(),
        a.writers,
        entries.len()
    );
    Ok(())
}

fn cmd_split(a: SplitArgs) -> Result<()> {
    let mut items: Vec<(String, PathBuf)> = Vec::new();
    let dir = fs::read_dir(&a.images).map_err(|e| DwError::Io {
        path: a.images.clone(),
        message: e.to_string(),
    })?;
    for writer_dir in dir {
        let writer_dir = writer_dir.map_err(|e| DwError::Io {
            path: a.images.clone(),
            message: e.to_string(),
        })?;
        let path = writer_dir.path();
        if !path.is_dir() {
            continue;
        }
        let writer = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let mut files: Vec<PathBuf> = fs::read_dir(&path)
            .map_err(|e| DwError::Io {
                path: path.clone(),
                message: e.to_string(),
            })?
            .filter_map(|f| f.ok().map(|f| f.path()))
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("pgm" | "png")
                )
            })
            .collect();
        files.sort();
        for f in files {
            items.push((writer.clone(), f));
        }
    }
    if items.is_empty() {
        return Err(DwError::Domain(format!(
            "no writer subdirectories with .pgm/.png images under {}",
            a.images.display()
        )));
    }
    let entries = split_per_writer(&items, a.seed)?;
    write_manifest_relative(&entries, &a.out)?;
    println!("manifest={} items={}", a.out.display(), entries.len());
    Ok(())
}

fn threads_arg(explicit: Option<usize>) -> usize {
    explicit
        .or_else(|| {
            std::env::var("DEEPWRITER_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(1)
}

fn build_config(opt: &OptArgs, finetune: bool) -> TrainConfig {
    let base = if finetune {
        TrainConfig::finetune_defaults()
    } else {
        TrainConfig::scratch_defaults()
    };
    TrainConfig {
        batch_size: opt.batch,
        momentum: opt.momentum,
        weight_decay: opt.weight_decay,
        base_lr: opt.lr.unwrap_or(base.base_lr),
        lr_drop_factor: opt.lr_drop,
        lr_step: opt.lr_step.unwrap_or(base.lr_step),
        stop_iter: opt.stop_iter.unwrap_or(base.stop_iter),
        seed: opt.seed,
    }
}

fn run_training(
    manifest: &Path,
    net_args: &NetArgs,
    opt: &OptArgs,
    phase: RunPhase,
    out: &Path,
) -> Result<()> {
    let entries = load_manifest(manifest)?;
    let (train_items, table) = load_split(&entries, Split::Train, net_args.input)?;
    let (val_items, _) = load_split(&entries, Split::Val, net_args.input)?;
    let spec = ArchitectureSpec::deepwriter(net_args.input, table.len(), net_args.scale);
    let streams = match net_args.arch {
        ArchArg::Deepwriter => 2,
        ArchArg::Half => 1,
    };
    let config = build_config(opt, matches!(phase, RunPhase::Finetune { .. }));
    let opts = TrainOptions {
        plan: PatchPlan {
            patch_side: net_args.input,
            scan_stride: net_args.input,
            sample_ratio: opt.ratio,
        },
        log_every: opt.log_every,
        val_every: opt.val_every,
        threads: threads_arg(opt.threads),
    };

    let mut metrics_file = match &opt.metrics_out {
        Some(p) => Some(fs::File::create(p).map_err(|e| DwError::Io {
            path: p.clone(),
            message: e.to_string(),
        })?),
        None => None,
    };
    let on_point = |p: &MetricsPoint| {
        log(&p.format_line());
        if let Some(f) = metrics_file.as_mut() {
            let mut line = serde_json::json!({
                "iteration": p.iteration,
                "lr": p.lr,
                "loss": p.loss,
            });
            if let Some(acc) = p.val_acc {
                line["val_acc"] = serde_json::json!(acc);
            }
            // metrics are advisory; an unwritable file should abort loudly
            writeln!(f, "{line}").expect("write metrics line");
        }
    };

    let outcome = train(
        &spec,
        streams,
        &config,
        &train_items,
        Some(&val_items),
        &phase,
        &opts,
        on_point,
    )?;

    let ckpt = Checkpoint::from_network(
        &outcome.network,
        table.labels().to_vec(),
        outcome.optim.iteration,
        Some(&outcome.optim),
    );
    save_checkpoint(&ckpt, out)?;
    let final_loss = outcome.trace.last().map(|p| p.loss).unwrap_or(f64::NAN);
    println!(
        "model={} iterations={} final_loss={:.6}",
        out.display(),
        outcome.optim.iteration,
        final_loss
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    run_training(&a.manifest, &a.net, &a.opt, RunPhase::Scratch, &a.out)
}

fn cmd_finetune(a: FinetuneArgs) -> Result<()> {
    let source = load_checkpoint(&a.from)?;
    run_training(
        &a.manifest,
        &a.net,
        &a.opt,
        RunPhase::Finetune { source },
        &a.out,
    )
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.model)?;
    let net = ckpt.to_network()?;
    let entries = load_manifest(&a.manifest)?;
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
        SplitArg::Test => Split::Test,
    };
    let (items, table) = load_split(&entries, split, net.spec.input_side)?;
    if !ckpt.labels.is_empty() && table.labels() != ckpt.labels.as_slice() {
        return Err(DwError::Domain(
            "manifest writers do not match the model's label table".into(),
        ));
    }
    let plan = PatchPlan {
        patch_side: net.spec.input_side,
        scan_stride: net.spec.input_side,
        sample_ratio: a.ratio,
    };
    let report = evaluate(&net, &items, &plan)?;
    println!(
        "accuracy={:.4} correct={} total={}",
        report.accuracy,
        report.correct,
        report.rows.len()
    );
    Ok(())
}

fn cmd_identify(a: IdentifyArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.model)?;
    let net = ckpt.to_network()?;
    let img = load_image(&a.image)?;
    let plan = PatchPlan {
        patch_side: net.spec.input_side,
        scan_stride: net.spec.input_side,
        sample_ratio: a.ratio,
    };
    let (writer, scores) = identify(&net, &img, &plan)?;
    let label = ckpt
        .labels
        .get(writer)
        .cloned()
        .unwrap_or_else(|| writer.to_string());
    println!("writer={} confidence={}", label, scores.as_slice()[writer]);
    Ok(())
}

fn cmd_inspect(a: InspectArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.model)?;
    let spec = ckpt.spec()?;
    let net = ckpt.to_network()?;
    println!("arch={}", ckpt.arch);
    println!("streams={}", ckpt.streams);
    println!("classes={}", spec.num_classes);
    println!("iteration={}", ckpt.iteration);
    println!("input_mean={}", ckpt.input_mean);
    println!("parameters={}", net.param_count());
    let shapes = spec.output_shapes()?;
    println!(
        "input: {:?}",
        [spec.input_channels, spec.input_side, spec.input_side]
    );
    for (entry, dims) in spec.entries.iter().zip(&shapes) {
        println!("{entry:?} -> {dims:?}");
    }
    Ok(())
}
