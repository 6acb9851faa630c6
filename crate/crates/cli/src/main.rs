//! `plbk`: tokenizer training, sampling plans, pre-training, fine-tuning,
//! decoding, evaluation and the acceptance self-check.

mod commands;
mod data;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "plbk", version, about = "Denoising seq2seq pre-training for code and text")]
pub struct Cli {
    /// Report failures as one JSON object on stderr.
    #[arg(long, global = true)]
    pub json_errors: bool,

    /// Worker threads for batch-parallel work; results do not depend on it.
    #[arg(long, global = true, env = "PLBK_THREADS")]
    pub threads: Option<usize>,

    /// Where to write the run manifest (default: next to the outputs, or
    /// stderr for commands that only print).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Generation,
    ClassifySingle,
    ClassifyPair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricName {
    Bleu,
    SmoothedBleu4,
    Em,
    Codebleu,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a subword vocabulary and register one language id per corpus.
    TrainTokenizer {
        /// LANG=PATH, or PATH whose file stem is the language tag.
        #[arg(long, num_args = 1.., required = true)]
        corpus: Vec<String>,
        #[arg(long)]
        vocab_size: usize,
        #[arg(long, default_value_t = 1.0)]
        sample_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Further language ids to register, e.g. for unseen target languages.
        #[arg(long = "extra-lang")]
        extra_lang: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the smoothed sampling plan for corpus statistics.
    Plan {
        /// JSON `{"counts": {"lang": n, ...}}`.
        #[arg(long)]
        stats: PathBuf,
        #[arg(long, default_value_t = plbk::sampler::DEFAULT_ALPHA)]
        alpha: f64,
    },
    /// Print corrupted training triples for a few corpus instances.
    NoisePreview {
        #[arg(long)]
        corpus: String,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short = 'n', default_value_t = 5)]
        n: usize,
    },
    /// Denoising pre-training from a run configuration.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint directory written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Fine-tune a pre-trained checkpoint on a generation or classification task.
    Finetune {
        #[arg(long, value_enum)]
        task: Task,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode one output line per input line.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        target_lang: String,
        #[arg(long, default_value_t = 5)]
        beam: usize,
        #[arg(long, default_value_t = 128)]
        max_len: usize,
        #[arg(long)]
        input: PathBuf,
    },
    /// Score line-aligned hypothesis and reference files.
    Evaluate {
        #[arg(long, value_enum)]
        metric: MetricName,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value = "mini")]
        lang_profile: String,
        /// Print the full report as JSON instead of the bare value.
        #[arg(long)]
        json: bool,
    },
    /// Run the acceptance property suite.
    Selfcheck {
        /// Comma-separated criterion numbers; all by default.
        #[arg(long, value_delimiter = ',')]
        only: Vec<usize>,
    },
}

fn main() -> ExitCode {
    let json_errors = std::env::args().any(|a| a == "--json-errors");
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            if json_errors {
                let msg = e.render().to_string();
                report_json("usage", msg.lines().next().unwrap_or(""), &[]);
            } else {
                let _ = e.print();
            }
            return ExitCode::from(2);
        }
    };
    match commands::run(&cli) {
        Ok(code) => code,
        Err(err) => {
            if cli.json_errors {
                let kind = err
                    .chain()
                    .find_map(|c| {
                        c.downcast_ref::<plbk::Error>()
                            .map(plbk::Error::kind)
                            .or_else(|| c.downcast_ref::<std::io::Error>().map(|_| "io"))
                    })
                    .unwrap_or("error");
                let causes: Vec<String> = err.chain().skip(1).map(|c| c.to_string()).collect();
                report_json(kind, &err.to_string(), &causes);
            } else {
                eprintln!("error: {err:#}");
            }
            ExitCode::FAILURE
        }
    }
}

fn report_json(kind: &str, message: &str, causes: &[String]) {
    let value = serde_json::json!({
        "error": { "kind": kind, "message": message, "causes": causes }
    });
    eprintln!("{value}");
}
