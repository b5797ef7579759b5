use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use config::RunConfig;

/// An error that is a bug rather than bad input; exits with code 2.
#[derive(Debug)]
pub struct Internal(pub String);

impl std::fmt::Display for Internal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "internal error: {}", self.0)
    }
}

impl std::error::Error for Internal {}

#[derive(Parser)]
#[command(
    name = "mlmkit",
    version,
    about = "Masked language model pre-training, fine-tuning and evaluation"
)]
struct Cli {
    /// Config file; relative names are also looked up in $MLMKIT_CONFIG_DIR.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides paths.out).
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    /// More log output; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Errors only.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Train a subword vocabulary on paths.corpus.
    BuildVocab,
    /// Pack and mask the corpus into pre-training shards for both phases.
    Prepare,
    /// Run the two-phase pre-training schedule.
    Pretrain,
    /// Grid-search fine-tuning on the configured task.
    Finetune,
    /// Score a prediction dump.
    Evaluate,
    /// Write per-example predictions of the fine-tuned model.
    Predict,
}

fn is_internal(e: &anyhow::Error) -> bool {
    use mlmkit::encoder::EncoderError;
    use mlmkit::heads::HeadsError;
    use mlmkit::trainer::TrainerError;
    e.chain().any(|c| {
        c.is::<Internal>()
            || c.is::<tensorcore::TensorError>()
            || matches!(c.downcast_ref::<TrainerError>(), Some(TrainerError::Tensor(_)))
            || matches!(c.downcast_ref::<EncoderError>(), Some(EncoderError::Tensor(_)))
            || matches!(c.downcast_ref::<HeadsError>(), Some(HeadsError::Tensor(_)))
    })
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let path = config::locate(cli.config.as_deref())?;
    let cfg = RunConfig::load(&path, cli.out.as_deref())?;
    log::info!("config {} (hash {})", path.display(), cfg.hash());
    let dir = match cli.command {
        Command::BuildVocab => commands::build_vocab(&cfg)?,
        Command::Prepare => commands::prepare(&cfg)?,
        Command::Pretrain => commands::pretrain_cmd(&cfg)?,
        Command::Finetune => commands::finetune_cmd(&cfg)?,
        Command::Evaluate => commands::evaluate_cmd(&cfg)?,
        Command::Predict => commands::predict_cmd(&cfg)?,
    };
    println!("wrote {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "error",
        (false, 0) => "warn",
        (false, 1) => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match std::panic::catch_unwind(|| run(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_internal(&e) { 2 } else { 1 })
        }
        Err(_) => ExitCode::from(2),
    }
}
