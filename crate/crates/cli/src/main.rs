//! `hin` — batch pipeline for document-level relation extraction.
//!
//! Exit codes: 0 success, 2 input error, 3 training divergence,
//! 4 checkpoint mismatch, 5 gradient-check failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hin_core::exec::Execution;
use hin_core::tensor::Fault;
use hin_core::HinError;

use commands::{AblateArgs, EvalArgs, GradcheckArgs, TrainArgs};
use config::FileConfig;

#[derive(Parser)]
#[command(name = "hin", version, about = "Document-level relation extraction pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Run-spec file (TOML); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed for all randomness.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if absent).
    #[arg(long)]
    out: PathBuf,
    /// Disable the parallel fan-out; results are identical either way.
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn exec(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Auto
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a deterministic synthetic corpus.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        docs: Option<usize>,
        #[arg(long)]
        entities: Option<usize>,
        #[arg(long)]
        relations: Option<usize>,
        #[arg(long)]
        sentences: Option<usize>,
        #[arg(long)]
        vocab: Option<usize>,
    },
    /// Train on a corpus, tuning the threshold on the dev split.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training corpus (DocRED-schema JSON).
        #[arg(long)]
        train: PathBuf,
        /// Dev corpus for threshold tuning and model selection.
        #[arg(long)]
        dev: PathBuf,
        /// Pretrained word vectors (token + decimals per line).
        #[arg(long)]
        vectors: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Score a labeled corpus against a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Threshold override (defaults to the checkpoint's tuned value).
        #[arg(long)]
        delta: Option<f64>,
        /// Training corpus for the Ign F1 overlap set.
        #[arg(long)]
        train_facts: Option<PathBuf>,
    },
    /// Write thresholded predictions for an (optionally unlabeled) corpus.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Check every parameter's gradient against finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Elements probed per parameter tensor.
        #[arg(long, default_value_t = 64)]
        probe_cap: usize,
        /// Corrupt one backward rule (tanh|sigmoid|matmul); testing hook.
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Train a base and an ablated variant under an identical schedule.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        /// One of: no_translation, no_bilinear, single_space,
        /// no_sentence_inference, flat_document.
        #[arg(long)]
        flag: String,
    },
}

fn exit_code(e: &HinError) -> u8 {
    match e {
        HinError::Divergence { .. } => 3,
        HinError::CheckpointMismatch { .. } => 4,
        HinError::GradCheckFailed { .. } => 5,
        _ => 2,
    }
}

fn run(cli: Cli) -> hin_core::Result<()> {
    match cli.cmd {
        Cmd::Synth { common, docs, entities, relations, sentences, vocab } => {
            let mut file = FileConfig::load(common.config.as_deref())?;
            let seed = common.seed.or(file.seed).unwrap_or(7);
            if docs.is_some() {
                file.synth.documents = docs;
            }
            if entities.is_some() {
                file.synth.entities_per_doc = entities;
            }
            if relations.is_some() {
                file.synth.relation_count = relations;
            }
            if sentences.is_some() {
                file.synth.sentences_per_doc = sentences;
            }
            if vocab.is_some() {
                file.synth.vocab_size = vocab;
            }
            commands::cmd_synth(&file, seed, &common.out)
        }
        Cmd::Train { common, train, dev, vectors, epochs, batch_size, lr } => {
            let mut file = FileConfig::load(common.config.as_deref())?;
            let seed = common.seed.or(file.seed).unwrap_or(7);
            if epochs.is_some() {
                file.train.epochs = epochs;
            }
            if batch_size.is_some() {
                file.train.batch_size = batch_size;
            }
            if lr.is_some() {
                file.train.learning_rate = lr;
            }
            commands::cmd_train(
                &file,
                &TrainArgs {
                    train: &train,
                    dev: &dev,
                    vectors: vectors.as_deref(),
                    out: &common.out,
                    seed,
                    exec: common.exec(),
                },
            )
        }
        Cmd::Eval { common, corpus, checkpoint, delta, train_facts } => commands::cmd_eval(
            &EvalArgs {
                corpus: &corpus,
                checkpoint: &checkpoint,
                train_facts: train_facts.as_deref(),
                out: &common.out,
                delta,
                exec: common.exec(),
            },
        ),
        Cmd::Predict { common, corpus, checkpoint, delta } => commands::cmd_predict(
            &EvalArgs {
                corpus: &corpus,
                checkpoint: &checkpoint,
                train_facts: None,
                out: &common.out,
                delta,
                exec: common.exec(),
            },
        ),
        Cmd::Gradcheck { common, probe_cap, inject_fault } => {
            let file = FileConfig::load(common.config.as_deref())?;
            let seed = common.seed.or(file.seed).unwrap_or(7);
            let fault = match inject_fault {
                Some(name) => Some(Fault::parse(&name).ok_or_else(|| {
                    HinError::invalid("fault", format!("unknown backward rule `{name}`"))
                })?),
                None => None,
            };
            commands::cmd_gradcheck(
                &file,
                &GradcheckArgs { out: &common.out, seed, probe_cap, fault },
            )
        }
        Cmd::Ablate { common, train, dev, flag } => {
            let file = FileConfig::load(common.config.as_deref())?;
            let seed = common.seed.or(file.seed).unwrap_or(7);
            commands::cmd_ablate(
                &file,
                &AblateArgs {
                    train: &train,
                    dev: &dev,
                    flag: &flag,
                    out: &common.out,
                    seed,
                    exec: common.exec(),
                },
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_kinds_map_to_documented_exit_codes() {
        assert_eq!(exit_code(&HinError::Divergence { batch: 0, pairs: vec![] }), 3);
        assert_eq!(
            exit_code(&HinError::CheckpointMismatch { param: "x".into(), msg: "m".into() }),
            4
        );
        assert_eq!(
            exit_code(&HinError::GradCheckFailed { failures: vec![], max_err: 1.0 }),
            5
        );
        assert_eq!(exit_code(&HinError::invalid("x", "y")), 2);
        assert_eq!(exit_code(&HinError::DegenerateMask), 2);
    }
}
