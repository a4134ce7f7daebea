use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tracelink::distill::ChannelMap;
use tracelink::pipeline::{exit_code, resolve_config, EvalSplit, RunConfig, Stage};

#[derive(Parser)]
#[command(name = "tracelink", version, about = "Issue-commit link recovery pipeline")]
struct Cli {
    /// Run configuration (TOML). Defaults to <out>/run.toml when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; re-derives every stage seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [default: config `out`, then $TRACELINK_OUT, then ./tracelink-out]
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic raw project and write run.toml.
    Synth {
        #[arg(long)]
        n_issues: Option<usize>,
        #[arg(long)]
        overlap: Option<f64>,
    },
    /// Tokenize raw records and build the vocabulary.
    Preprocess {
        /// Raw project directory [default: <out>/raw]
        #[arg(long)]
        raw: Option<PathBuf>,
    },
    /// Extract and split true links, build issue-code examples.
    Links,
    /// Distill the teacher into the student.
    Distill {
        /// Teacher:student layer pairs, e.g. "t1:s1,t5:s2".
        #[arg(long)]
        channels: Option<ChannelMap>,
    },
    /// Fine-tune the student on the link task.
    Train {
        #[command(flatten)]
        loss: LossArgs,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        queries: QueryArgs,
    },
    /// Rank held-out links with the trained model.
    Eval {
        #[arg(long)]
        threshold: Option<f64>,
        #[command(flatten)]
        queries: QueryArgs,
    },
    /// Rank held-out links with the TF-IDF baseline.
    Vsm {
        #[command(flatten)]
        queries: QueryArgs,
    },
}

#[derive(Args)]
struct LossArgs {
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lambda_cl: Option<f64>,
    #[arg(long)]
    lambda_aux: Option<f64>,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    max_issues: Option<usize>,
    /// Split to rank: valid or test.
    #[arg(long, value_parser = parse_split)]
    split: Option<EvalSplit>,
}

fn parse_split(s: &str) -> Result<EvalSplit, String> {
    match s {
        "valid" => Ok(EvalSplit::Valid),
        "test" => Ok(EvalSplit::Test),
        _ => Err(format!("unknown split {s:?}, expected valid or test")),
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn apply_queries(cfg: &mut RunConfig, q: QueryArgs) {
    set(&mut cfg.eval.max_issues, q.max_issues);
    set(&mut cfg.eval.split, q.split);
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match resolve_config(cli.config.as_deref(), cli.out.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e) as u8);
        }
    };
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    let stage = match cli.command {
        Command::Synth { n_issues, overlap } => {
            set(&mut cfg.synth.n_issues, n_issues);
            set(&mut cfg.synth.overlap, overlap);
            Stage::Synth
        }
        Command::Preprocess { raw } => {
            if raw.is_some() {
                cfg.project.raw = raw;
            }
            Stage::Preprocess
        }
        Command::Links => Stage::Links,
        Command::Distill { channels } => {
            set(&mut cfg.distill.channels, channels);
            Stage::Distill
        }
        Command::Train { loss, epochs, queries } => {
            set(&mut cfg.train.temperature, loss.tau);
            set(&mut cfg.train.lambda_cl, loss.lambda_cl);
            set(&mut cfg.train.lambda_aux, loss.lambda_aux);
            set(&mut cfg.train.epochs, epochs);
            apply_queries(&mut cfg, queries);
            Stage::Train
        }
        Command::Eval { threshold, queries } => {
            set(&mut cfg.eval.threshold, threshold);
            apply_queries(&mut cfg, queries);
            Stage::Eval
        }
        Command::Vsm { queries } => {
            apply_queries(&mut cfg, queries);
            Stage::Vsm
        }
    };
    match stage.run(&cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
