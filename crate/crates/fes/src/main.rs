use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fes::config::RunConfig;
use fes::error::FesError;
use fes::eval::render_report;
use fes::pipeline::{self, SplitSelect};

#[derive(Parser)]
#[command(name = "fes", version, about = "Point-supervised facial expression spotting")]
struct Cli {
    /// Run configuration file (sectioned key=value; defaults used if omitted)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config value, e.g. --set train.learning_rate=0.01
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,

    /// Master RNG seed (overrides the config file)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for gen/infer (default from config, 1 = serial)
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a train/test manifest
    Gen {
        /// Output directory for video JSON files and manifest.json
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the manifest's train split; writes checkpoints and a loss log
    Train {
        /// Dataset directory produced by `gen`
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoints and train_log.csv
        #[arg(long)]
        out: PathBuf,
    },
    /// Score videos with a checkpoint and emit proposals + score tracks
    Infer {
        /// Checkpoint file (e.g. ckpt_final.bin)
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory with manifest.json
        #[arg(long)]
        data: PathBuf,
        /// Output directory for per-video proposals.json / tracks.csv
        #[arg(long)]
        out: PathBuf,
        /// Which manifest split to score
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: SplitSelect,
    },
    /// Match predicted proposals against ground truth and report F1 / NMAE
    Eval {
        /// Directory of *.proposals.json files from `infer`
        #[arg(long)]
        pred: PathBuf,
        /// Directory of ground-truth video JSON files
        #[arg(long)]
        truth: PathBuf,
        /// IoU threshold for a true positive
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// Optional path for the JSON report
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regenerate and dump the pseudo-labels a checkpoint induces
    Dump {
        /// Checkpoint file
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory with manifest.json
        #[arg(long)]
        data: PathBuf,
        /// Output directory for per-video labels.json
        #[arg(long)]
        out: PathBuf,
        /// Labeling stage to reproduce (1, 2 or 3)
        #[arg(long, default_value_t = 3)]
        stage: u8,
    },
}

fn parse_split(s: &str) -> Result<SplitSelect, String> {
    match s {
        "train" => Ok(SplitSelect::Train),
        "test" => Ok(SplitSelect::Test),
        "all" => Ok(SplitSelect::All),
        _ => Err(format!("unknown split '{s}' (expected train|test|all)")),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, FesError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for spec in &cli.overrides {
        cfg.set_override(spec)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.synth.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), FesError> {
    match &cli.command {
        Command::Gen { out } => {
            let cfg = load_config(cli)?;
            pipeline::run_gen(&cfg, out)?;
            println!("wrote {}: {}", out.display(), pipeline::describe_dataset(out)?);
        }
        Command::Train { data, out } => {
            let cfg = load_config(cli)?;
            let result = pipeline::run_train(&cfg, data, out)?;
            let last = result.log.last().expect("training produced no epochs");
            println!(
                "trained {} epochs; final total loss {:.6}; checkpoints in {}",
                result.log.len(),
                last.losses.total,
                out.display()
            );
        }
        Command::Infer { ckpt, data, out, split } => {
            let cfg = load_config(cli)?;
            let results = pipeline::run_infer(&cfg, ckpt, data, out, *split)?;
            let total: usize = results.iter().map(|r| r.proposals.len()).sum();
            println!("scored {} videos, {} proposals -> {}", results.len(), total, out.display());
        }
        Command::Eval { pred, truth, iou, out } => {
            let report = pipeline::run_eval(pred, truth, *iou, out.as_deref())?;
            print!("{}", render_report(&report));
        }
        Command::Dump { ckpt, data, out, stage } => {
            let cfg = load_config(cli)?;
            let dumps = pipeline::run_dump(&cfg, ckpt, data, out, *stage)?;
            println!("dumped labels for {} videos -> {}", dumps.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
