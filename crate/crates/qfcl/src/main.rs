use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use qfcl::config::{load_config, Overrides, RunConfig};
use qfcl::error::{Error, Result};
use qfcl::run::{self, TrainPaths};
use qfcl_core::nn::Strategy;
use qfcl_core::trainer::Mode;

#[derive(Parser)]
#[command(name = "qfcl", version, about = "Question-focus contrastive summarization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(name = "ce_only")]
    CeOnly,
    #[value(name = "qfcl")]
    Qfcl,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::CeOnly => Mode::CeOnly,
            ModeArg::Qfcl => Mode::Qfcl,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic JSON Lines corpus.
    GenCorpus {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write question focuses and hard negatives for every pair.
    GenNegatives {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long = "n-h")]
        n_h: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes logs and checkpoints into --out.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "n-h")]
        n_h: Option<usize>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print ROUGE and focus accuracy of a checkpoint as JSON.
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Beam width; greedy when absent.
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the similarity curve over a directory of epoch checkpoints as CSV.
    Analyze {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "n-h")]
        n_h: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn config(path: &Option<PathBuf>, overrides: Overrides) -> Result<RunConfig> {
    load_config(path.as_deref(), overrides)
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenCorpus { config: c, seed, out } => {
            let cfg = config(&c, Overrides { seed, ..Default::default() })?;
            run::gen_corpus(&cfg, &out)?;
        }
        Command::GenNegatives {
            config: c,
            corpus,
            n_h,
            seed,
            lexicon,
            out,
        } => {
            let cfg = config(&c, Overrides { seed, n_h, mode: None })?;
            run::gen_negatives(&cfg, &corpus, lexicon.as_deref(), &out)?;
        }
        Command::Train {
            config: c,
            mode,
            seed,
            n_h,
            corpus,
            dev,
            lexicon,
            out,
        } => {
            let cfg = config(
                &c,
                Overrides {
                    seed,
                    n_h,
                    mode: mode.map(Mode::from),
                },
            )?;
            let paths = TrainPaths {
                corpus: &corpus,
                dev: &dev,
                lexicon: lexicon.as_deref(),
                out: &out,
            };
            run::train(&cfg, &paths)?;
        }
        Command::Evaluate {
            config: c,
            checkpoint,
            corpus,
            lexicon,
            beam,
            out,
        } => {
            let cfg = config(&c, Overrides::default())?;
            let strategy = match beam {
                None => Strategy::Greedy,
                Some(0) => return Err(Error::Usage("--beam must be at least 1".into())),
                Some(k) => Strategy::Beam(k),
            };
            run::evaluate_checkpoint(&cfg, &checkpoint, &corpus, lexicon.as_deref(), strategy, out.as_deref())?;
        }
        Command::Analyze {
            config: c,
            checkpoints,
            dev,
            lexicon,
            seed,
            n_h,
            out,
        } => {
            let mut cfg = config(&c, Overrides::default())?;
            cfg.analysis_seed = seed.unwrap_or(cfg.analysis_seed);
            cfg.analysis_n_h = n_h.unwrap_or(cfg.analysis_n_h);
            run::analyze(&cfg, &checkpoints, &dev, lexicon.as_deref(), out.as_deref())?;
        }
    }
    Ok(())
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), one_line(&e.to_string()));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
