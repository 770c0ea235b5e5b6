//! Command-line driver for training, transfer, sweeps, evaluation and
//! latent walks.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sst::experiment::{self, ExperimentConfig, Overrides, SystemOutputs};

#[derive(Parser)]
#[command(name = "sst", version, about = "Delete-and-generate text style transfer")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// `source->target` by style name or index; every pair when omitted.
    #[arg(long, global = true)]
    direction: Option<String>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Learn the vocabulary and train the deletion and evaluation classifiers.
    TrainClassifier,
    /// Delete style markers from the training split and fit the generator.
    TrainGenerator,
    /// Train the in-domain and general language models.
    TrainLm,
    /// Transfer the test split at (--alpha, --beta).
    Transfer,
    /// Transfer and score over the configured (alpha, beta) grid; --alpha or
    /// --beta pin one axis.
    Sweep,
    /// Decode one content sentence with interpolated style embeddings.
    Walk {
        #[arg(long)]
        text: String,
    },
    /// Score system outputs (`name=path[,path]`, one path per direction or
    /// one concatenated file) together with the input copy.
    Evaluate {
        #[arg(long = "system")]
        systems: Vec<String>,
    },
}

fn run(cli: Cli) -> sst::Result<()> {
    let mut cfg = match &cli.global.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: cli.global.seed,
        alpha: cli.global.alpha,
        beta: cli.global.beta,
        out_dir: cli.global.out.clone(),
    });
    let styles = cfg.style_set()?;
    let directions = experiment::parse_directions(cli.global.direction.as_deref(), &styles)?;
    log::info!("config hash {} seed {}", cfg.hash()?, cfg.seed);

    match cli.command {
        Command::TrainClassifier => experiment::train_classifiers(&cfg),
        Command::TrainGenerator => experiment::train_generator(&cfg),
        Command::TrainLm => experiment::train_lms(&cfg),
        Command::Transfer => {
            for a in experiment::run_transfer(&cfg, &directions)? {
                println!("{}", a.output.display());
            }
            Ok(())
        }
        Command::Sweep => {
            let alphas = cli.global.alpha.map_or_else(|| cfg.sweep.alphas.clone(), |a| vec![a]);
            let betas = cli.global.beta.map_or_else(|| cfg.sweep.betas.clone(), |b| vec![b]);
            let rows = experiment::run_sweep(&cfg, &alphas, &betas, &directions)?;
            println!("alpha\tbeta\tG-BLEU\taccuracy\tdeleted");
            for r in rows {
                println!("{}\t{}\t{:.2}\t{:.3}\t{:.2}", r.alpha, r.beta, r.g_bleu, r.accuracy, r.mean_deleted);
            }
            Ok(())
        }
        Command::Walk { text } => {
            let [direction] = directions[..] else {
                return Err(sst::Error::Config("walk needs a single --direction".into()));
            };
            let content: Vec<String> = text.split_whitespace().map(str::to_owned).collect();
            for p in experiment::run_walk(&cfg, &content, direction)? {
                println!("{:.2}\t{}", p.w, p.output);
            }
            Ok(())
        }
        Command::Evaluate { systems } => {
            let systems = systems.iter().map(|s| SystemOutputs::parse(s)).collect::<sst::Result<Vec<_>>>()?;
            let outcome = experiment::run_eval(&cfg, &systems, &directions)?;
            print!("{}", sst::evaluator::render_table(&outcome.reports));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
