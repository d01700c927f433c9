//! Thin argument-parsing shell over the pipeline commands. Exit codes:
//! 0 success, 1 runtime failure, 2 usage/config error (clap's own default).

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use dialect_nmt::corpus::TokenizeMode;
use dialect_nmt::pipeline::{
    cmd_eval, cmd_gen_synth, cmd_prep, cmd_stats, cmd_train, cmd_translate, Direction, EvalArgs,
    GenSynthArgs, PipelineError, PrepArgs, StatsArgs, TrainArgs, TranslateArgs,
};

#[derive(Parser)]
#[command(
    name = "dialect-nmt",
    version,
    about = "Unsupervised dialect-to-dialect translation toolkit",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_mode(s: &str) -> Result<TokenizeMode, String> {
    TokenizeMode::from_str(s)
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    Direction::from_str(s)
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dialect pair with known ground-truth rules
    GenSynth {
        /// TOML config; the [synth] section drives generation
        #[arg(long)]
        config: PathBuf,
        /// Output directory for corpora, rule tables, and the manifest
        #[arg(long)]
        out_dir: PathBuf,
        /// Override [synth].seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Tokenize, build the joint vocabulary, filter, and write stats
    Prep {
        #[arg(long)]
        train_a: PathBuf,
        #[arg(long)]
        train_b: PathBuf,
        /// Parallel dev files; filtered jointly so lines stay aligned
        #[arg(long, requires = "dev_b")]
        dev_a: Option<PathBuf>,
        #[arg(long, requires = "dev_a")]
        dev_b: Option<PathBuf>,
        #[arg(long, requires = "test_b")]
        test_a: Option<PathBuf>,
        #[arg(long, requires = "test_a")]
        test_b: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// char | whitespace
        #[arg(long, default_value = "char", value_parser = parse_mode)]
        mode: TokenizeMode,
        #[arg(long, default_value_t = 1)]
        min_freq: u64,
        #[arg(long, default_value_t = 4)]
        min_len: usize,
        #[arg(long, default_value_t = 32)]
        max_len: usize,
        /// Window for top-k overlap and top-k rank correlation
        #[arg(long, default_value_t = 250)]
        top_k: usize,
    },
    /// Side-by-side statistics of two corpora as given (no filtering)
    Stats {
        #[arg(long)]
        corpus_a: PathBuf,
        #[arg(long)]
        corpus_b: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// char | whitespace
        #[arg(long, default_value = "char", value_parser = parse_mode)]
        mode: TokenizeMode,
        #[arg(long, default_value_t = 250)]
        top_k: usize,
    },
    /// Train on a prepared data directory
    Train {
        /// TOML config; [model], [train], and [prep] sections apply
        #[arg(long)]
        config: PathBuf,
        /// Directory with train_a.txt/train_b.txt (+ optional dev pair, vocab.tsv)
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Ablation: no embedding columns shared between dialects (pivot_dim = 0)
        #[arg(long)]
        no_pivot_private: bool,
        /// Ablation: every decoder layer attends the final encoder state
        #[arg(long)]
        no_layer_coordination: bool,
        /// Continue from last.ckpt/optimizer.ckpt in out_dir
        #[arg(long)]
        resume: bool,
        /// Override [train].seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Translate a file line by line with a checkpoint or a rule table
    Translate {
        #[command(flatten)]
        common: TranslateCommon,
    },
    /// Translate and score against a reference with corpus BLEU
    Eval {
        #[command(flatten)]
        common: TranslateCommon,
        /// Reference file, parallel to the input
        #[arg(long)]
        reference: PathBuf,
    },
}

#[derive(Args)]
struct TranslateCommon {
    /// Model checkpoint (best.ckpt/last.ckpt); conflicts with --baseline
    #[arg(long, conflicts_with = "baseline")]
    checkpoint: Option<PathBuf>,
    /// Rule table TSV applied in --direction; empty file is the identity
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Vocabulary TSV; defaults to vocab.tsv next to the checkpoint
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// a2b | b2a
    #[arg(long, value_parser = parse_direction)]
    direction: Direction,
    /// Beam width; 1 is greedy
    #[arg(long, default_value_t = 1)]
    beam: usize,
    /// Length-penalty exponent for beam search
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    /// char | whitespace
    #[arg(long, default_value = "char", value_parser = parse_mode)]
    mode: TokenizeMode,
}

impl TranslateCommon {
    fn into_args(self) -> TranslateArgs {
        TranslateArgs {
            checkpoint: self.checkpoint,
            baseline: self.baseline,
            vocab: self.vocab,
            input: self.input,
            out_dir: self.out_dir,
            direction: self.direction,
            beam: self.beam,
            length_penalty_alpha: self.alpha,
            mode: self.mode,
        }
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::GenSynth {
            config,
            out_dir,
            seed,
        } => {
            let stats = cmd_gen_synth(&GenSynthArgs {
                config,
                out_dir,
                seed,
            })?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Prep {
            train_a,
            train_b,
            dev_a,
            dev_b,
            test_a,
            test_b,
            out_dir,
            mode,
            min_freq,
            min_len,
            max_len,
            top_k,
        } => {
            let outcome = cmd_prep(&PrepArgs {
                train_a,
                train_b,
                dev_a,
                dev_b,
                test_a,
                test_b,
                out_dir,
                mode,
                min_freq,
                min_len,
                max_len,
                top_k,
            })?;
            println!("{}", serde_json::to_string_pretty(&outcome)?);
        }
        Command::Stats {
            corpus_a,
            corpus_b,
            out_dir,
            mode,
            top_k,
        } => {
            let doc = cmd_stats(&StatsArgs {
                corpus_a,
                corpus_b,
                out_dir,
                mode,
                top_k,
            })?;
            println!("{}", serde_json::to_string_pretty(&doc)?);
        }
        Command::Train {
            config,
            data_dir,
            out_dir,
            no_pivot_private,
            no_layer_coordination,
            resume,
            seed,
        } => {
            let outcome = cmd_train(&TrainArgs {
                config,
                data_dir,
                out_dir,
                no_pivot_private,
                no_layer_coordination,
                resume,
                seed,
            })?;
            println!("{}", serde_json::to_string_pretty(&outcome)?);
        }
        Command::Translate { common } => {
            let n = cmd_translate(&common.into_args())?;
            eprintln!("translated {n} sentences");
        }
        Command::Eval { common, reference } => {
            let report = cmd_eval(&EvalArgs {
                translate: common.into_args(),
                reference,
            })?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
