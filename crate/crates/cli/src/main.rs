use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use umt_core::eval::Arm;
use umt_core::UmtError;

mod commands;
mod config;

use config::{Overrides, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] UmtError),
}

impl From<umt_tensor::NnError> for CliError {
    fn from(e: umt_tensor::NnError) -> Self {
        CliError::Core(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "ConfigError",
            CliError::Core(e) => e.category(),
        }
    }

    /// 2 for configuration problems, 3 for unusable inputs, 4 otherwise.
    fn exit_code(&self) -> u8 {
        let CliError::Core(e) = self else {
            return 2;
        };
        match e {
            UmtError::Precondition(_)
            | UmtError::EmptyScores(_)
            | UmtError::Io(_)
            | UmtError::Nn(umt_tensor::NnError::Shape(_))
            | UmtError::Nn(umt_tensor::NnError::Precondition(_))
            | UmtError::Nn(umt_tensor::NnError::Io(_)) => 4,
            _ => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "umt", version, about = "Material-translation augmentation for patch-based spoof detection")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Target false detection rate.
    #[arg(long, global = true)]
    fdr: Option<f64>,
    /// Run a single arm: baseline, fewshot or augmented.
    #[arg(long, global = true, value_parser = parse_arm)]
    arm: Option<Arm>,
    /// Material held out of training (all materials when omitted).
    #[arg(long, global = true)]
    held_out: Option<String>,
}

fn parse_arm(s: &str) -> Result<Arm, String> {
    Arm::parse(s).ok_or_else(|| format!("unknown arm {s:?} (expected baseline, fewshot or augmented)"))
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the procedural toy corpus and its manifest.
    GenToy,
    /// Segment, sample, align and cache patches of a corpus.
    Preprocess(commands::PreprocessArgs),
    /// Train the autoencoder whose encoder the generator reuses.
    PretrainEncoder(commands::PatchesArgs),
    /// Train the generator decoder with one material held out.
    TrainUmt(commands::TrainUmtArgs),
    /// Render synthesized spoofs of the held-out material.
    Synthesize(commands::SynthesizeArgs),
    /// Train one arm's spoof classifier.
    TrainClassifier(commands::TrainClassifierArgs),
    /// Score the test splits with a trained classifier.
    Evaluate(commands::EvaluateArgs),
    /// Full leave-one-material-out protocol over every arm.
    Experiment(commands::ExperimentArgs),
}

fn init_logging(cfg: &RunConfig) {
    let default = cfg.verbosity.clone().unwrap_or_else(|| "info".into());
    let env = env_logger::Env::new().filter_or("UMT_LOG", default);
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = cli.global;
    let mut cfg = RunConfig::load(g.config.as_deref())?;
    cfg.apply(&Overrides {
        seed: g.seed,
        out: g.out,
        jobs: g.jobs,
        fdr: g.fdr,
        arm: g.arm,
        held_out: g.held_out,
    });
    cfg.validate()?;
    init_logging(&cfg);
    if cfg.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot size worker pool: {e}")))?;
    }
    match cli.command {
        Command::GenToy => commands::gen_toy(&cfg),
        Command::Preprocess(a) => commands::preprocess(&cfg, &a),
        Command::PretrainEncoder(a) => commands::pretrain(&cfg, &a),
        Command::TrainUmt(a) => commands::train_umt(&cfg, &a),
        Command::Synthesize(a) => commands::synthesize(&cfg, &a),
        Command::TrainClassifier(a) => commands::train_classifier(&cfg, &a),
        Command::Evaluate(a) => commands::evaluate(&cfg, &a),
        Command::Experiment(a) => commands::experiment(&cfg, &a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            let detail = rendered.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("error[UsageError]: {detail}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let detail = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {detail}", e.category());
            ExitCode::from(e.exit_code())
        }
    }
}
