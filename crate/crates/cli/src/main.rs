use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use trg_core::augment::{apply_saep, AugmentConfig, Treatment};
use trg_core::nn::Mode;
use trg_core::pipeline::{self, Dataset, EvalConfig, RunConfig, SkeletonSequence, SynthConfig};
use trg_core::textgraph::{
    build_relational_graph_with, load_embedding_file, DistanceMetric, GraphConfig, GraphNormalization,
};

#[derive(Parser)]
#[command(name = "trg", version, about = "Skeleton action segmentation with text-derived graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Relational graphs from embedding files.
    #[command(subcommand)]
    Graph(GraphCommand),
    /// Generate a synthetic labelled dataset (train and test splits).
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes the checkpoint and log to the config's output_dir.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a checkpoint on a dataset directory.
    Eval(EvalArgs),
    /// Write an occluded/rotated copy of a dataset.
    Augment(AugmentArgs),
    /// Configuration helpers.
    #[command(subcommand)]
    Config(ConfigCommand),
}

#[derive(Subcommand)]
enum GraphCommand {
    /// Build a similarity graph over the rows of a TRGE file.
    Build {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Metric::L2)]
        metric: Metric,
        #[arg(long, value_enum, default_value_t = Norm::MinMax)]
        normalization: Norm,
    },
}

#[derive(Subcommand)]
enum ConfigCommand {
    /// Print a configuration as JSON: the defaults, or a loaded file.
    Dump {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Where predictions and metrics.json go (default: next to the checkpoint).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Take eval settings from this run config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Skip boundary-guided relabelling.
    #[arg(long)]
    no_relabel: bool,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1.0 / 3.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0 / 3.0)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Vertical coordinate index for rotation.
    #[arg(long, default_value_t = 1)]
    axis: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    L2,
    L1,
    Cosine,
}

#[derive(Clone, Copy, ValueEnum)]
enum Norm {
    MinMax,
    ZScore,
    Sigmoid,
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

fn graph_build(embeddings: &Path, out: &Path, metric: Metric, norm: Norm) -> CliResult {
    let e = load_embedding_file(embeddings)?;
    let cfg = GraphConfig {
        metric: match metric {
            Metric::L2 => DistanceMetric::L2,
            Metric::L1 => DistanceMetric::L1,
            Metric::Cosine => DistanceMetric::Cosine,
        },
        normalization: match norm {
            Norm::MinMax => GraphNormalization::MinMax,
            Norm::ZScore => GraphNormalization::ZScore,
            Norm::Sigmoid => GraphNormalization::Sigmoid,
        },
    };
    let g = build_relational_graph_with(&e, cfg)?;
    std::fs::write(out, g.to_json()? + "\n")?;
    println!("{}: {} x {} graph", out.display(), g.len(), g.len());
    Ok(())
}

fn synth(config: &Path, out: &Path) -> CliResult {
    let cfg = RunConfig::load(config)?;
    let train = pipeline::synth_generate(&cfg.synth)?;
    let test_cfg = SynthConfig {
        seed: cfg.synth.seed.wrapping_add(1),
        ..cfg.synth.clone()
    };
    let test = pipeline::synth_generate(&test_cfg)?;
    train.save(out.join("train"))?;
    test.save(out.join("test"))?;
    std::fs::write(out.join("topology.json"), pipeline::synth_topology().to_json()? + "\n")?;
    println!(
        "{}: {} train + {} test sequences, {} classes",
        out.display(),
        train.sequences.len(),
        test.sequences.len(),
        train.num_classes()
    );
    Ok(())
}

fn print_scores(label: &str, s: &trg_core::metrics::Scores) {
    println!(
        "{label}: acc {:.2}  edit {:.2}  F1@10 {:.2}  F1@25 {:.2}  F1@50 {:.2}",
        s.acc, s.edit, s.f1_10, s.f1_25, s.f1_50
    );
}

fn train(config: &Path) -> CliResult {
    let cfg = RunConfig::load(config)?;
    let (model, ckpt) = pipeline::train(&cfg)?;
    if let Some(last) = model.logs.last() {
        println!("epoch {}: loss {:.4}, train-pass acc {:.2}", last.epoch, last.loss, last.acc);
    }
    println!("checkpoint: {}", ckpt.display());
    if let Some(test_dir) = cfg.test_dir.as_ref().filter(|d| d.is_dir()) {
        let test = Dataset::load(test_dir)?;
        let report = pipeline::evaluate(
            &model,
            &test,
            &cfg.eval,
            pipeline::worker_threads(),
            Some(&cfg.output_dir.join("eval")),
        )?;
        print_scores("test", &report.overall);
    }
    Ok(())
}

fn eval(args: &EvalArgs) -> CliResult {
    let mut eval_cfg = match &args.config {
        Some(c) => RunConfig::load(c)?.eval,
        None => EvalConfig::default(),
    };
    if args.no_relabel {
        eval_cfg.relabel = false;
    }
    let model = pipeline::load_checkpoint(&args.checkpoint)?;
    let data = Dataset::load(&args.data)?;
    let out = args.out.clone().unwrap_or_else(|| {
        args.checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join("eval")
    });
    let report = pipeline::evaluate(&model, &data, &eval_cfg, pipeline::worker_threads(), Some(&out))?;
    print_scores("overall", &report.overall);
    println!("wrote {}", out.join("metrics.json").display());
    Ok(())
}

fn augment(args: &AugmentArgs) -> CliResult {
    let cfg = AugmentConfig {
        alpha: args.alpha,
        beta: args.beta,
        axis: args.axis,
        ..AugmentConfig::default()
    };
    cfg.validate()?;
    let data = Dataset::load(&args.input)?;
    let xs: Vec<_> = data.sequences.iter().map(|s| s.x.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (aug, plan) = apply_saep(&xs, &cfg, &mut rng, Mode::Train)?;
    let sequences = data
        .sequences
        .iter()
        .zip(aug)
        .map(|(s, x)| SkeletonSequence::new(s.id.clone(), x, s.labels.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    Dataset {
        actions: data.actions.clone(),
        sequences,
    }
    .save(&args.out)?;
    let count = |t| plan.iter().filter(|&&p| p == t).count();
    println!(
        "{}: {} occluded, {} rotated, {} untouched",
        args.out.display(),
        count(Treatment::Occluded),
        count(Treatment::Rotated),
        count(Treatment::Untouched)
    );
    Ok(())
}

fn config_dump(config: Option<&Path>) -> CliResult {
    let cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}", cfg.to_json()?) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Graph(GraphCommand::Build {
            embeddings,
            out,
            metric,
            normalization,
        }) => graph_build(embeddings, out, *metric, *normalization),
        Command::Synth { config, out } => synth(config, out),
        Command::Train { config } => train(config),
        Command::Eval(args) => eval(args),
        Command::Augment(args) => augment(args),
        Command::Config(ConfigCommand::Dump { config }) => config_dump(config.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
