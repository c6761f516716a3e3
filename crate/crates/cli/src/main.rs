use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use car_core::config::RunConfig;
use car_core::corpus::{generate_corpus, load_corpus, save_corpus, AnnotatedCorpus, Split};
use car_core::evalsuite::{evaluate, reports_csv, reports_markdown, Direction, EvalReport, Protocol};
use car_core::events::{decompose, LlmClientConfig, LlmDecomposer};
use car_core::model::{Checkpoint, Model};
use car_core::trainer::{resume, train};

#[derive(Parser, Debug)]
#[command(name = "car", version, about = "Chronology-aware motion-text retrieval toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic annotated corpus.
    GenCorpus {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the corpus seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Split descriptions into ordered events.
    Decompose {
        /// A single description to decompose.
        #[arg(long, conflicts_with = "corpus")]
        text: Option<String>,
        /// Decompose every description of a corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Use an LLM endpoint instead of the rule-based splitter.
        #[arg(long)]
        llm: bool,
        #[arg(long, default_value = "http://127.0.0.1:8000/v1/chat/completions")]
        endpoint: String,
        #[arg(long, default_value = "gpt-4o-mini")]
        model: String,
        #[arg(long, default_value = "LLM_API_TOKEN")]
        token_env: String,
        #[arg(long, default_value = "llm_cache.jsonl")]
        cache: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model and write its checkpoint and log.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Existing corpus directory; generated from the config otherwise.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Output directory (overrides `train.checkpoint_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint under one protocol.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum)]
        protocol: ProtocolArg,
        #[arg(long, value_enum, default_value = "m2t")]
        direction: DirectionArg,
        #[arg(long)]
        seed: Option<u64>,
        /// Run configuration whose `eval` section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Render report files into one comparison table.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "markdown")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the gradient check and metric oracles.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProtocolArg {
    All,
    Threshold,
    Dissimilar,
    Small,
    Car,
    Corrupted,
    Leakage,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::All => Protocol::All,
            ProtocolArg::Threshold => Protocol::Threshold,
            ProtocolArg::Dissimilar => Protocol::Dissimilar,
            ProtocolArg::Small => Protocol::Small,
            ProtocolArg::Car => Protocol::Car,
            ProtocolArg::Corrupted => Protocol::Corrupted,
            ProtocolArg::Leakage => Protocol::Leakage,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DirectionArg {
    T2m,
    M2t,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Markdown,
    Csv,
}

/// Failures caused by how the tool was invoked rather than by the data.
#[derive(Debug)]
struct Usage(anyhow::Error);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(e: impl Into<anyhow::Error>) -> anyhow::Error {
    anyhow::Error::new(Usage(e.into()))
}

fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path).with_context(|| format!("loading config {}", path.display())).map_err(usage)
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn read_corpus(dir: &Path) -> Result<AnnotatedCorpus> {
    load_corpus(dir).with_context(|| format!("loading corpus {}", dir.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenCorpus { config, out, seed } => {
            let mut cfg = match config {
                Some(p) => load_config(&p)?,
                None => RunConfig::default(),
            };
            if let Some(s) = seed {
                cfg.corpus.seed = s;
            }
            cfg.corpus.validate().map_err(usage)?;
            let corpus = generate_corpus(&cfg.corpus)?;
            save_corpus(&corpus, &out)?;
            eprintln!("wrote {} samples to {}", corpus.samples.len(), out.display());
        }
        Command::Decompose {
            text,
            corpus,
            llm,
            endpoint,
            model,
            token_env,
            cache,
            out,
        } => {
            let inputs: Vec<(Option<String>, String)> = match (text, corpus) {
                (Some(t), None) => vec![(None, t)],
                (None, Some(dir)) => read_corpus(&dir)?
                    .samples
                    .iter()
                    .flat_map(|s| s.descriptions.iter().map(|d| (Some(s.id.clone()), d.text.clone())))
                    .collect(),
                _ => return Err(usage(anyhow::anyhow!("pass exactly one of --text or --corpus"))),
            };
            let llm = if llm {
                Some(LlmDecomposer::http(LlmClientConfig {
                    endpoint,
                    model,
                    token_env,
                    cache_path: cache,
                    timeout_secs: 30,
                })?)
            } else {
                None
            };
            let mut lines = String::new();
            for (id, t) in inputs {
                let events = match &llm {
                    Some(d) => d.decompose(&t)?,
                    None => decompose(&t),
                };
                let rec = serde_json::json!({"id": id, "text": t, "events": events.events});
                lines.push_str(&serde_json::to_string(&rec)?);
                lines.push('\n');
            }
            write_output(out.as_deref(), &lines)?;
        }
        Command::Train {
            config,
            corpus,
            out,
            resume: from,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(o) = out {
                cfg.train.checkpoint_dir = Some(o);
            }
            let Some(dir) = cfg.train.checkpoint_dir.clone() else {
                return Err(usage(anyhow::anyhow!("no output directory: pass --out or set train.checkpoint_dir")));
            };
            let data = match corpus {
                Some(c) => read_corpus(&c)?,
                None => generate_corpus(&cfg.corpus)?,
            };
            let outcome = match from {
                Some(p) => {
                    let ck = Checkpoint::load(&p).with_context(|| format!("loading checkpoint {}", p.display()))?;
                    resume(&data, &ck, &cfg.train)?
                }
                None => train(&data, &cfg.model, &cfg.train)?,
            };
            let path = dir.join("model.carc");
            outcome.checkpoint.save(&path)?;
            if let Some(last) = outcome.log.last() {
                eprintln!("epoch {}: loss {:.5}, val R@1 {:.2}, val CAR {:.3}", last.epoch, last.mean_loss, last.val_r1_m2t, last.val_car);
            }
            eprintln!("wrote {}", path.display());
        }
        Command::Evaluate {
            checkpoint,
            corpus,
            protocol,
            direction,
            seed,
            config,
            split,
            out,
            csv,
        } => {
            let mut eval = match config {
                Some(p) => load_config(&p)?.eval,
                None => Default::default(),
            };
            if let Some(s) = seed {
                eval.seed = s;
            }
            let ck = Checkpoint::load(&checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
            let model = Model::from_checkpoint(&ck)?;
            let data = read_corpus(&corpus)?;
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Val => Split::Val,
                SplitArg::Test => Split::Test,
            };
            let direction = match direction {
                DirectionArg::T2m => Direction::T2m,
                DirectionArg::M2t => Direction::M2t,
            };
            let rep = evaluate(&model, &data, split, protocol.into(), direction, &eval)?;
            write_output(out.as_deref(), &(serde_json::to_string_pretty(&rep)? + "\n"))?;
            if let Some(c) = csv {
                let label = checkpoint.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                write_output(Some(&c), &reports_csv(&[(label, rep)]))?;
            }
        }
        Command::Report { reports, format, out } => {
            let mut rows = Vec::new();
            for p in &reports {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                let rep: EvalReport = serde_json::from_str(&text).with_context(|| format!("parsing report {}", p.display()))?;
                let label = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                rows.push((label, rep));
            }
            let table = match format {
                Format::Markdown => reports_markdown(&rows),
                Format::Csv => reports_csv(&rows),
            };
            write_output(out.as_deref(), &table)?;
        }
        Command::Selftest { seed } => {
            let st = car_core::diagnostics::run(seed)?;
            println!("max gradient relative error: {:.3e}", st.max_grad_rel_err);
            println!("rank oracle mismatches: {}", st.rank_mismatches);
            println!("contrastive spot value: {:.6}", st.spot_value);
            if !st.passed() {
                bail!("selftest failed");
            }
            println!("selftest passed");
        }
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.chain().any(|c| c.is::<Usage>()) {
        return 1;
    }
    match e.chain().find_map(|c| c.downcast_ref::<car_core::Error>()) {
        Some(car_core::Error::InvalidConfig { .. }) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
