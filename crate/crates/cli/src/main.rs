use std::path::PathBuf;
use std::process::ExitCode;

use bitext_cli::*;
use bitext_core::evalkit::SynthCorpusConfig;
use bitext_core::miner::{DocMatchConfig, DEFAULT_THRESHOLD};
use bitext_core::{Result, Side};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bitext", version, about = "Train bilingual sentence encoders and mine parallel text")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    Source,
    Target,
}

#[derive(Args)]
struct IndexOpts {
    /// Partitions of the search index; 0 searches exhaustively.
    #[arg(long, default_value_t = 0)]
    partitions: usize,
    #[arg(long, default_value_t = 1)]
    n_probe: usize,
    #[arg(long, default_value_t = 0)]
    index_seed: u64,
}

impl From<&IndexOpts> for IndexParams {
    fn from(o: &IndexOpts) -> Self {
        IndexParams {
            partitions: o.partitions,
            n_probe: o.n_probe,
            seed: o.index_seed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a `source<TAB>target` corpus.
    Train {
        /// `key = value` configuration; desk defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        /// Mine hard negatives after the warm-up and keep training with them.
        #[arg(long)]
        hard_negatives: bool,
    },
    /// Embed one sentence per line.
    Encode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        side: SideArg,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Pair each source line with its best target line when confident enough.
    MineSentences {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        #[command(flatten)]
        index: IndexOpts,
    },
    /// Find the translated counterpart of each source document.
    MatchDocs {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        source_docs: PathBuf,
        #[arg(long)]
        target_docs: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        #[arg(long, default_value_t = 5.0, allow_hyphen_values = true)]
        w1: f64,
        #[arg(long, default_value_t = -2.0, allow_hyphen_values = true)]
        w2: f64,
        /// Retrieved targets per source sentence.
        #[arg(long = "depth", default_value_t = 10)]
        retrieval_depth: usize,
        /// Compare sentence positions as fractions of document length.
        #[arg(long)]
        normalized_positions: bool,
        /// Count mutual best matches instead of scoring documents.
        #[arg(long)]
        baseline: bool,
        /// `source_doc<TAB>target_doc` answers; accuracy is reported.
        #[arg(long)]
        gold: Option<PathBuf>,
        #[command(flatten)]
        index: IndexOpts,
    },
    /// Report P@N of held-out pairs against a distractor pool.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        /// Distractors, one per line; the pairs' targets when omitted.
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        pool_size: usize,
        #[arg(long = "n", value_delimiter = ',', default_value = "1,3,10")]
        ns: Vec<usize>,
    },
    /// Write a synthetic cipher corpus with document structure.
    Synth {
        #[arg(long, short)]
        output_dir: PathBuf,
        #[arg(long, default_value_t = 1000)]
        num_pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 7)]
        cipher_seed: u64,
        #[arg(long, default_value_t = 200)]
        vocab_size: usize,
        #[arg(long, default_value_t = 1)]
        family_size: usize,
        #[arg(long, default_value_t = 0.5)]
        shared_fraction: f64,
        #[arg(long, default_value_t = 0.0)]
        noise_rate: f64,
        #[arg(long, default_value_t = 20)]
        sentences_per_doc: usize,
        #[arg(long, default_value_t = 0.0)]
        doc_noise_rate: f64,
        #[arg(long, default_value_t = 0.0)]
        doc_deletion_rate: f64,
    },
}

fn run(command: Command) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    let mut stderr = std::io::stderr().lock();
    match command {
        Command::Train {
            config,
            corpus,
            output,
            hard_negatives,
        } => {
            let args = TrainArgs {
                config,
                corpus,
                output,
                hard_negatives,
            };
            let ckpt = cmd_train(&args, &mut stderr)?;
            eprintln!("wrote {} after {} steps", args.output.display(), ckpt.state.step);
        }
        Command::Encode {
            checkpoint,
            input,
            side,
            output,
        } => {
            let side = match side {
                SideArg::Source => Side::Source,
                SideArg::Target => Side::Target,
            };
            let n = cmd_encode(&checkpoint, &input, side, &output)?;
            eprintln!("encoded {n} sentences");
        }
        Command::MineSentences {
            checkpoint,
            source,
            target,
            output,
            threshold,
            index,
        } => {
            let n = cmd_mine_sentences(&MineArgs {
                checkpoint,
                source,
                target,
                output,
                threshold,
                index: (&index).into(),
            })?;
            eprintln!("mined {n} pairs");
        }
        Command::MatchDocs {
            checkpoint,
            source_docs,
            target_docs,
            output,
            w1,
            w2,
            retrieval_depth,
            normalized_positions,
            baseline,
            gold,
            index,
        } => {
            let acc = cmd_match_docs(
                &MatchArgs {
                    checkpoint,
                    source_docs,
                    target_docs,
                    output,
                    doc_match: DocMatchConfig {
                        retrieval_depth,
                        w1,
                        w2,
                        normalized_positions,
                    },
                    baseline,
                    gold,
                    index: (&index).into(),
                },
                &mut stderr,
            )?;
            if let Some(acc) = acc {
                println!("accuracy\t{acc}");
            }
        }
        Command::Evaluate {
            checkpoint,
            pairs,
            pool,
            pool_size,
            ns,
        } => {
            cmd_evaluate(
                &EvalArgs {
                    checkpoint,
                    pairs,
                    pool,
                    pool_size,
                    ns,
                },
                &mut stdout,
                &mut stderr,
            )?;
        }
        Command::Synth {
            output_dir,
            num_pairs,
            seed,
            cipher_seed,
            vocab_size,
            family_size,
            shared_fraction,
            noise_rate,
            sentences_per_doc,
            doc_noise_rate,
            doc_deletion_rate,
        } => {
            let cfg = SynthCorpusConfig {
                seed,
                num_pairs,
                vocab_size,
                cipher_seed,
                noise_rate,
                family_size,
                shared_fraction,
                sentences_per_doc,
                doc_noise_rate,
                doc_deletion_rate,
                ..SynthCorpusConfig::default()
            };
            cmd_synth(&cfg, &output_dir)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
