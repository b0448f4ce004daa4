mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Failure;
use crate::config::Settings;

/// Bag-of-n-grams training and analysis for a desk-scale
/// non-autoregressive model.
#[derive(Debug, Parser)]
#[command(name = "bon", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic parallel corpus.
    GenData {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train a model and write a checkpoint and training log.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Corpus BLEU, removed-token report and BLEU by length bucket.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated reference-length bucket edges.
        #[arg(long)]
        buckets: Option<String>,
        /// Factor applied to the default edges 10,20,30,40,50.
        #[arg(long)]
        bucket_scale: Option<f64>,
    },
    /// Pearson correlation between subset losses and subset BLEU.
    Correlate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        subsets: Option<usize>,
        #[arg(long)]
        subset_size: Option<usize>,
        /// Comma-separated losses, e.g. `ce,bon1,bon2`.
        #[arg(long)]
        losses: Option<String>,
        /// `token-weighted` or `mean`.
        #[arg(long)]
        pooling: Option<String>,
        /// Also correlate within the short and long halves by source length.
        #[arg(long)]
        split_length: bool,
    },
    /// Compare sliding-window expected counts against brute-force enumeration.
    OracleCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3)]
        vocab: usize,
        #[arg(long = "len", default_value_t = 5)]
        len: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Finite-difference check of loss and model gradients.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// `ce`, `ce-sum`, `bonN` or `jointN@ALPHA`; defaults to bonN for `--n`.
        #[arg(long)]
        loss: Option<String>,
        #[arg(long, default_value_t = 5)]
        vocab: usize,
        #[arg(long = "len", default_value_t = 3)]
        len: usize,
        #[arg(long, default_value_t = 4)]
        d_model: usize,
        #[arg(long, default_value_t = 8)]
        hidden: usize,
        #[arg(long, default_value_t = 200)]
        probes: usize,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Config file with `key = value` lines under [sections]; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for decoding; 0 uses all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// BoN order.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..=4))]
    n: Option<u64>,
    /// Cross-entropy weight of the joint objective.
    #[arg(long, value_parser = parse_unit)]
    alpha: Option<f64>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Directory with vocab.txt and <split>.src/<split>.tgt; when absent a
    /// synthetic corpus is generated from the task settings.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    split: Option<String>,
    /// copy, reverse or dict.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    min_len: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    /// Insertion/deletion rate applied to targets.
    #[arg(long, value_parser = parse_unit)]
    noise: Option<f64>,
    /// Corpus sampling seed; defaults to --seed.
    #[arg(long)]
    task_seed: Option<u64>,
    /// Seed of the dict-task substitution.
    #[arg(long)]
    mapping_seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Longest target the model can produce.
    #[arg(long)]
    model_max_len: Option<usize>,
    #[arg(long)]
    max_len_diff: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// ce, bon-ft, bon-joint or bon-joint-ft.
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    finetune_steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Checkpoint to fine-tune.
    #[arg(long)]
    init: Option<PathBuf>,
}

fn parse_unit(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is not in [0, 1]"))
    }
}

fn path_string(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

impl Common {
    fn settings(&self) -> bon_core::Result<Settings> {
        let mut s = Settings::load(self.config.as_deref())?;
        s.set_opt("run", "seed", &self.seed)?;
        s.set_opt("run", "out", &path_string(&self.out))?;
        s.set_opt("run", "threads", &self.threads)?;
        s.set_opt("train", "n", &self.n)?;
        s.set_opt("train", "alpha", &self.alpha)?;
        Ok(s)
    }
}

impl DataArgs {
    fn apply(&self, s: &mut Settings) -> bon_core::Result<()> {
        s.set_opt("data", "dir", &path_string(&self.data))?;
        s.set_opt("data", "split", &self.split)?;
        s.set_opt("task", "kind", &self.task)?;
        s.set_opt("task", "vocab_size", &self.vocab_size)?;
        s.set_opt("task", "min_len", &self.min_len)?;
        s.set_opt("task", "max_len", &self.max_len)?;
        s.set_opt("task", "samples", &self.samples)?;
        s.set_opt("task", "noise", &self.noise)?;
        s.set_opt("task", "seed", &self.task_seed)?;
        s.set_opt("task", "mapping_seed", &self.mapping_seed)
    }
}

impl ModelArgs {
    fn apply(&self, s: &mut Settings) -> bon_core::Result<()> {
        s.set_opt("model", "d_model", &self.d_model)?;
        s.set_opt("model", "hidden", &self.hidden)?;
        s.set_opt("model", "max_len", &self.model_max_len)?;
        s.set_opt("model", "max_len_diff", &self.max_len_diff)
    }
}

impl TrainArgs {
    fn apply(&self, s: &mut Settings) -> bon_core::Result<()> {
        s.set_opt("train", "schedule", &self.schedule)?;
        s.set_opt("train", "steps", &self.steps)?;
        s.set_opt("train", "finetune_steps", &self.finetune_steps)?;
        s.set_opt("train", "batch_size", &self.batch_size)?;
        s.set_opt("train", "lr", &self.lr)?;
        s.set_opt("train", "init", &path_string(&self.init))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenData { common, data } => {
            let mut s = common.settings()?;
            data.apply(&mut s)?;
            commands::gen_data(&s)
        }
        Command::Train {
            common,
            data,
            model,
            train,
        } => {
            let mut s = common.settings()?;
            data.apply(&mut s)?;
            model.apply(&mut s)?;
            train.apply(&mut s)?;
            commands::train(&s)
        }
        Command::Eval {
            common,
            data,
            checkpoint,
            buckets,
            bucket_scale,
        } => {
            let mut s = common.settings()?;
            data.apply(&mut s)?;
            s.set_opt("eval", "checkpoint", &path_string(&checkpoint))?;
            s.set_opt("eval", "buckets", &buckets)?;
            s.set_opt("eval", "bucket_scale", &bucket_scale)?;
            commands::eval(&s)
        }
        Command::Correlate {
            common,
            data,
            checkpoint,
            subsets,
            subset_size,
            losses,
            pooling,
            split_length,
        } => {
            let mut s = common.settings()?;
            data.apply(&mut s)?;
            s.set_opt("eval", "checkpoint", &path_string(&checkpoint))?;
            s.set_opt("eval", "subsets", &subsets)?;
            s.set_opt("eval", "subset_size", &subset_size)?;
            s.set_opt("eval", "losses", &losses)?;
            s.set_opt("eval", "pooling", &pooling)?;
            commands::correlate(&s, split_length)
        }
        Command::OracleCheck {
            common,
            vocab,
            len,
            trials,
        } => commands::oracle_check(&common.settings()?, vocab, len, trials),
        Command::Gradcheck {
            common,
            loss,
            vocab,
            len,
            d_model,
            hidden,
            probes,
        } => {
            let s = common.settings()?;
            let opts = commands::GradcheckOptions {
                loss,
                vocab,
                len,
                d_model,
                hidden,
                probes,
            };
            commands::gradcheck(&s, &opts)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
