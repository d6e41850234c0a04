//! Command-line driver: gen-world, pretrain, intervene, finetune, report.
//!
//! Every stage reads a TOML config plus flag overrides and works inside a run
//! directory. Usage problems (bad flags, missing config, conflicting
//! overrides) exit with status 2; runtime failures exit with status 1.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use taxprobe::pipeline::{
    run_finetune, run_gen_world, run_intervene, run_pretrain, run_report, LabConfig, RunDir,
};

#[derive(Parser)]
#[command(
    name = "taxprobe",
    version,
    about = "Desk-scale masked-LM lab: synthetic taxonomy corpora, checkpointed pre-training, premise-injection interventions, and reporting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML); missing sections take desk defaults
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override the configuration's top-level seed
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory for inputs and outputs
    #[arg(long, value_name = "DIR", default_value = "runs/lab")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic world: corpus, manifest, vocabulary, probe set
    GenWorld {
        #[command(flatten)]
        common: Common,
    },
    /// Pre-train the model on the generated corpus, saving checkpoints
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Override the number of optimizer steps
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Inject premises at each checkpoint and record prior/posterior metrics
    Intervene {
        #[command(flatten)]
        common: Common,
        /// Premises injected per minibatch (K)
        #[arg(long)]
        k: Option<usize>,
        /// Minibatches per example per checkpoint (R)
        #[arg(long)]
        reps: Option<usize>,
        /// Constant intervention learning rate
        #[arg(long)]
        lr: Option<f64>,
        /// Comma-separated checkpoint steps to evaluate (default: all found)
        #[arg(long, value_delimiter = ',')]
        checkpoints: Option<Vec<u64>>,
        /// Directory holding ckpt-<step>.bin files (default: <out>/ckpts)
        #[arg(long, value_name = "DIR")]
        checkpoint_dir: Option<PathBuf>,
        /// Accumulate updates within a checkpoint instead of fresh copies
        #[arg(long)]
        cumulative: bool,
    },
    /// Fine-tune reasoning classifiers from each checkpoint
    Finetune {
        #[command(flatten)]
        common: Common,
        /// Comma-separated checkpoint steps to evaluate (default: all found)
        #[arg(long, value_delimiter = ',')]
        checkpoints: Option<Vec<u64>>,
        /// Directory holding ckpt-<step>.bin files (default: <out>/ckpts)
        #[arg(long, value_name = "DIR")]
        checkpoint_dir: Option<PathBuf>,
    },
    /// Aggregate records with bootstrap intervals and emit figures
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<LabConfig, taxprobe::Error> {
    if !common.config.exists() {
        return Err(taxprobe::Error::Config(format!(
            "config file {} does not exist",
            common.config.display()
        )));
    }
    let mut config = LabConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn dispatch(command: Command) -> Result<(), taxprobe::Error> {
    match command {
        Command::GenWorld { common } => {
            let config = load_config(&common)?;
            let run = RunDir::new(&common.out);
            let summary = run_gen_world(&config, &run)?;
            println!(
                "world ready: vocab {} tokens, {} documents ({} sentences), probe set {} examples ({} withheld facts)",
                summary.vocab_size,
                summary.documents,
                summary.sentences,
                summary.probeset_size,
                summary.withheld_facts
            );
            println!("outputs under {}", run.corpus_dir().display());
        }
        Command::Pretrain { common, steps } => {
            let mut config = load_config(&common)?;
            if let Some(steps) = steps {
                config.pretrain.steps = steps;
                if config.schedule.total_steps < steps {
                    config.schedule.total_steps = steps;
                }
            }
            let run = RunDir::new(&common.out);
            let outcome = run_pretrain(&config, &run)?;
            let final_loss = outcome.loss_log.last().map(|r| r.mlm_loss);
            println!(
                "pre-training done: {} steps, {} checkpoints, final mlm loss {}",
                config.pretrain.steps,
                outcome.checkpoint_paths.len(),
                final_loss.map_or("n/a".to_string(), |l| format!("{l:.4}")),
            );
            if outcome.skipped_single_sentence_docs > 0 {
                println!(
                    "note: {} single-sentence documents contributed no sentence pairs",
                    outcome.skipped_single_sentence_docs
                );
            }
            println!("loss log: {}", run.loss_log_file().display());
        }
        Command::Intervene { common, k, reps, lr, checkpoints, checkpoint_dir, cumulative } => {
            let mut config = load_config(&common)?;
            if let Some(k) = k {
                config.intervene.premises_per_batch = k;
            }
            if let Some(reps) = reps {
                config.intervene.repetitions = reps;
            }
            if let Some(lr) = lr {
                config.intervene.lr = lr;
            }
            if cumulative {
                config.intervene.cumulative = true;
            }
            let run = RunDir::new(&common.out);
            let summary = run_intervene(
                &config,
                &run,
                checkpoint_dir.as_deref(),
                checkpoints.as_deref(),
            )?;
            println!(
                "campaign done: {} records over {} checkpoints ({} minibatches each, {} padded slots)",
                summary.records,
                summary.checkpoints,
                summary.minibatches_per_checkpoint,
                summary.padded_slots
            );
            println!("records: {}", run.records_file().display());
        }
        Command::Finetune { common, checkpoints, checkpoint_dir } => {
            let config = load_config(&common)?;
            let run = RunDir::new(&common.out);
            let curve = run_finetune(
                &config,
                &run,
                checkpoint_dir.as_deref(),
                checkpoints.as_deref(),
            )?;
            println!("fine-tune curve over {} checkpoints:", curve.len());
            println!("  step,implicit_acc,explicit_acc");
            for p in &curve {
                println!("  {},{:.3},{:.3}", p.step, p.implicit_accuracy, p.explicit_accuracy);
            }
            println!("curve: {}", run.curve_file().display());
        }
        Command::Report { common } => {
            let config = load_config(&common)?;
            let run = RunDir::new(&common.out);
            let summary = run_report(&config, &run)?;
            println!(
                "report done: {} aggregate rows, {} figures under {}",
                summary.aggregate_rows,
                summary.figures.len(),
                run.figures_dir().display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err @ taxprobe::Error::Config(_)) => {
            eprintln!("usage error: {err}");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}
