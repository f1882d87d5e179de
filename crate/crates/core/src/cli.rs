//! The `editproc` command line.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{ArgAction, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::config::RunConfig;
use crate::corpus::jsonl;
use crate::corpus::split::{split_long, SegmentRule, SplitOptions};
use crate::corpus::stats::{stats, CorpusStats};
use crate::corpus::store::{precompute, Split, Store, StoredChain};
use crate::corpus::synth::{synthetic_chains, SynthConfig};
use crate::corpus::vcs::ingest_vcs;
use crate::corpus::TextChain;
use crate::edit_ops::{self, extract_spans};
use crate::error::{Error, Result};
use crate::metrics::Report;
use crate::model::checkpoint;
use crate::model::train::{evaluate, CheckpointSink, Trainer};
use crate::model::{EditModel, StepData};
use crate::sampler::{sample_process, SampleConfig};
use crate::tokenizer::{train_vocab, Vocabulary};

#[derive(Parser, Debug)]
#[command(
    name = "editproc",
    about = "Edit scripts, corpus tools and an n-th order neural editor",
    disable_version_flag = true
)]
struct Cli {
    /// Print version and configuration schema hash.
    #[arg(short = 'V', long = "version", action = ArgAction::SetTrue)]
    version: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output (repeatable).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Option<Cmd>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Generic,
    Vcs,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Read revision chains, tokenize, split and write a precomputed store.
    Ingest {
        #[arg(long, value_enum, default_value = "generic")]
        format: Format,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, default_value_t = 2000)]
        max_doc_tokens: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// File pattern for --format vcs.
        #[arg(long, default_value = "*")]
        glob: String,
        /// Segment rule for long documents: text, code, or a line regex.
        #[arg(long, default_value = "text")]
        segments: String,
        input: PathBuf,
        out: PathBuf,
    },
    /// Train a byte-level BPE vocabulary on revision text.
    Vocab {
        #[arg(long)]
        size: usize,
        #[arg(long, value_enum, default_value = "generic")]
        format: Format,
        #[arg(long, default_value = "*")]
        glob: String,
        input: PathBuf,
        out: PathBuf,
    },
    /// Operation distribution and lengths of a store.
    Stats {
        store: PathBuf,
        #[arg(long)]
        split: Option<Split>,
        #[arg(long)]
        json: bool,
    },
    /// Train a model on the train split of a store.
    Train {
        store: PathBuf,
        /// Directory for checkpoints and the resolved configuration.
        #[arg(long)]
        out: PathBuf,
        /// Flat key = value configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override one setting, e.g. --set model.d_model=64.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        order: Option<usize>,
        /// Condition on edit summaries.
        #[arg(long)]
        conditioned: bool,
    },
    /// Edit perplexities of a checkpoint on one split.
    Eval {
        checkpoint: PathBuf,
        store: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        json: bool,
    },
    /// Sample an edit process starting from a document.
    Sample {
        checkpoint: PathBuf,
        #[arg(long)]
        seed_doc: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, default_value_t = 1)]
        steps: usize,
        /// Added to the KEEP logit; negative values suppress KEEP.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        keep_bias: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0.95)]
        top_p: f64,
        #[arg(long, default_value_t = 64)]
        max_span_tokens: usize,
        /// Output JSONL path (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the edit script between two text files.
    Diff {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        /// Vocabulary file (default: byte level).
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Write a synthetic revision corpus as JSONL.
    Synth {
        out: PathBuf,
        #[arg(long, default_value_t = 5000)]
        chains: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the resolved run configuration.
    Config {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

pub fn version_line() -> String {
    format!(
        "editproc {} (config schema {})",
        env!("CARGO_PKG_VERSION"),
        RunConfig::schema_hash()
    )
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_env("EDITPROC_LOG")
        .format(|buf, record| writeln!(buf, "[{}] {}", record.level(), record.args()))
        .try_init();
}

/// Run the CLI on `args` (including the program name); returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    if cli.version {
        println!("{}", version_line());
        return 0;
    }
    init_logging(cli.verbose, cli.quiet);
    let Some(cmd) = cli.command else {
        let _ = Cli::command().print_help();
        return 2;
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    match dispatch(cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("[ERROR] {e}");
            1
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Ingest {
            format,
            vocab,
            max_doc_tokens,
            seed,
            glob,
            segments,
            input,
            out,
        } => cmd_ingest(format, &vocab, max_doc_tokens, seed, &glob, &segments, &input, &out),
        Cmd::Vocab {
            size,
            format,
            glob,
            input,
            out,
        } => {
            let chains = read_text_chains(format, &input, &glob)?;
            let texts = chains.iter().flat_map(|c| c.revisions.iter().map(String::as_str));
            let vocab = train_vocab(texts, size)?;
            vocab.save(&out)?;
            println!("vocabulary of {} pieces written to {}", vocab.size(), out.display());
            Ok(())
        }
        Cmd::Stats { store, split, json } => cmd_stats(&store, split, json),
        Cmd::Train {
            store,
            out,
            config,
            overrides,
            seed,
            steps,
            order,
            conditioned,
        } => {
            let mut rc = resolve_config(config.as_deref(), &overrides)?;
            if let Some(s) = seed {
                rc.seed = s;
            }
            if let Some(s) = steps {
                rc.train.steps = s;
            }
            if let Some(o) = order {
                rc.model.order_n = o;
            }
            rc.conditioned |= conditioned;
            cmd_train(&store, &out, rc)
        }
        Cmd::Eval {
            checkpoint,
            store,
            split,
            json,
        } => cmd_eval(&checkpoint, &store, split, json),
        Cmd::Sample {
            checkpoint,
            seed_doc,
            vocab,
            steps,
            keep_bias,
            seed,
            temperature,
            top_p,
            max_span_tokens,
            out,
        } => {
            let cfg = SampleConfig {
                steps,
                temperature,
                keep_bias,
                seed,
                max_span_tokens,
                top_p,
            };
            cmd_sample(&checkpoint, &seed_doc, &vocab, &cfg, out.as_deref())
        }
        Cmd::Diff { src, tgt, vocab } => cmd_diff(&src, &tgt, vocab.as_deref()),
        Cmd::Synth { out, chains, seed } => {
            let chains = synthetic_chains(&SynthConfig {
                chains,
                seed,
                ..Default::default()
            });
            let f = std::fs::File::create(&out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
            jsonl::write(std::io::BufWriter::new(f), &chains)?;
            println!("{} chains written to {}", chains.len(), out.display());
            Ok(())
        }
        Cmd::Config { config, overrides } => {
            let rc = resolve_config(config.as_deref(), &overrides)?;
            rc.validate()?;
            print!("{}", rc.to_text());
            Ok(())
        }
    }
}

fn resolve_config(file: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut rc = RunConfig::default();
    if let Some(f) = file {
        rc.apply_file(f)?;
    }
    rc.apply_overrides(overrides)?;
    Ok(rc)
}

fn read_text_chains(format: Format, input: &Path, glob: &str) -> Result<Vec<TextChain>> {
    match format {
        Format::Generic => {
            let got = jsonl::ingest_generic(input)?;
            if !got.errors.is_empty() {
                log::warn!("{} malformed records skipped", got.errors.len());
            }
            if got.dropped_noops > 0 {
                log::info!("{} no-op revisions dropped", got.dropped_noops);
            }
            Ok(got.chains)
        }
        Format::Vcs => ingest_vcs(input, glob),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_ingest(
    format: Format,
    vocab_path: &Path,
    max_doc_tokens: usize,
    seed: u64,
    glob: &str,
    segments: &str,
    input: &Path,
    out: &Path,
) -> Result<()> {
    let vocab = Vocabulary::load(vocab_path)?;
    let rule = match segments {
        "text" => SegmentRule::BlankLines,
        "code" => SegmentRule::code(),
        other => SegmentRule::pattern(other)?,
    };
    let opts = SplitOptions { max_doc_tokens, rule };
    let chains = read_text_chains(format, input, glob)?;
    let mut tokenized = Vec::new();
    for c in &chains {
        tokenized.extend(split_long(c, &vocab, &opts)?);
    }
    let manifest = precompute(&tokenized, &vocab, out, seed)?;
    for s in &manifest.shards {
        println!("{}\t{} chains\t{} steps", s.split, s.chains, s.steps);
    }
    Ok(())
}

fn cmd_stats(store: &Path, split: Option<Split>, as_json: bool) -> Result<()> {
    let st = Store::open(store)?;
    let chains = match split {
        Some(s) => st.read_split(s)?,
        None => st.read_all()?,
    };
    let name = store
        .file_name()
        .map_or_else(|| store.display().to_string(), |n| n.to_string_lossy().into_owned());
    let s = stats(&name, &chains);
    if as_json {
        let v = json!({
            "stats": s,
            "pct_keep": s.pct_keep(),
            "pct_insert": s.pct_insert(),
            "pct_replace": s.pct_replace(),
            "pct_delete": s.pct_delete(),
        });
        println!("{}", serde_json::to_string_pretty(&v)?);
    } else {
        println!("{}", CorpusStats::HEADER);
        println!("{}", s.row());
    }
    Ok(())
}

/// Steps of every chain that fits the model, dropping the rest with a warning.
pub fn chain_steps(chains: &[StoredChain], conditioned: bool, max_len: usize) -> Vec<Vec<StepData>> {
    let mut out = Vec::with_capacity(chains.len());
    let mut dropped = 0;
    for c in chains {
        let steps = c.steps(conditioned);
        let fits = steps.iter().all(|s| {
            s.encoder_input().len() <= max_len + 1
                && extract_spans(&s.script).iter().all(|sp| sp.content.len() <= max_len)
                && s.tgt.len() <= max_len
        });
        if fits {
            out.push(steps);
        } else {
            dropped += 1;
        }
    }
    if dropped > 0 {
        log::warn!("{dropped} chains exceed max_len {max_len} and were skipped");
    }
    out
}

fn cmd_train(store_path: &Path, out: &Path, mut rc: RunConfig) -> Result<()> {
    let store = Store::open(store_path)?;
    if rc.model.vocab_size != store.manifest.vocab_size {
        log::info!(
            "model.vocab_size set to {} from the store",
            store.manifest.vocab_size
        );
        rc.model.vocab_size = store.manifest.vocab_size;
    }
    rc.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    std::fs::write(out.join("run_config.txt"), rc.to_text()).map_err(|e| Error::io("writing run config", e))?;

    let train = chain_steps(&store.read_split(Split::Train)?, rc.conditioned, rc.model.max_len);
    let mut model = EditModel::new(rc.model.clone(), rc.seed)?;
    log::info!("{} parameters, {} training chains", model.params.count(), train.len());
    let sink = CheckpointSink {
        dir: out.to_path_buf(),
        vocab_hash: Some(store.manifest.vocab_hash.clone()),
        run_config: serde_json::to_value(&rc)?,
    };
    let report = Trainer::new(&mut model, rc.train.clone()).with_checkpoints(sink).run(&train)?;
    std::fs::write(out.join("train_report.json"), serde_json::to_string_pretty(&report)?)
        .map_err(|e| Error::io("writing train report", e))?;
    println!(
        "trained {} steps ({} epochs), final batch loss {:.5}",
        report.losses.len(),
        report.epochs,
        report.losses.last().copied().unwrap_or(f64::NAN)
    );
    let valid = chain_steps(&store.read_split(Split::Valid)?, rc.conditioned, rc.model.max_len);
    if !valid.is_empty() {
        let r = Report::from_scores(&evaluate(&model, &valid)?);
        print!("{}", r.table("valid"));
    }
    Ok(())
}

fn load_checked(checkpoint_path: &Path, vocab_hash: &str) -> Result<(EditModel, checkpoint::Manifest)> {
    let (model, manifest) = checkpoint::load(checkpoint_path)?;
    if let Some(h) = &manifest.vocab_hash {
        if h != vocab_hash {
            return Err(Error::Checkpoint(format!(
                "checkpoint vocabulary {h} does not match {vocab_hash}"
            )));
        }
    }
    Ok((model, manifest))
}

/// Evaluation report as printed by `eval --json`.
pub fn eval_json(checkpoint_path: &Path, store_path: &Path, split: Split) -> Result<serde_json::Value> {
    let store = Store::open(store_path)?;
    let (model, manifest) = load_checked(checkpoint_path, &store.manifest.vocab_hash)?;
    let conditioned = manifest
        .run_config
        .get("conditioned")
        .and_then(|v| v.as_bool())
        .unwrap_or(false);
    let chains = chain_steps(&store.read_split(split)?, conditioned, model.config.max_len);
    let report = Report::from_scores(&evaluate(&model, &chains)?);
    Ok(json!({
        "split": split,
        "checkpoint_step": manifest.step,
        "report": report,
        "run_config": manifest.run_config,
    }))
}

fn cmd_eval(checkpoint_path: &Path, store_path: &Path, split: Split, as_json: bool) -> Result<()> {
    let v = eval_json(checkpoint_path, store_path, split)?;
    if as_json {
        println!("{}", serde_json::to_string_pretty(&v)?);
    } else {
        let report: Report = serde_json::from_value(v["report"].clone())?;
        print!("{}", report.table(split.name()));
    }
    Ok(())
}

fn cmd_sample(
    checkpoint_path: &Path,
    seed_doc: &Path,
    vocab_path: &Path,
    cfg: &SampleConfig,
    out: Option<&Path>,
) -> Result<()> {
    let vocab = Vocabulary::load(vocab_path)?;
    let (model, _) = load_checked(checkpoint_path, &vocab.hash())?;
    let text = std::fs::read_to_string(seed_doc).map_err(|e| Error::io(format!("reading {}", seed_doc.display()), e))?;
    let traj = sample_process(&model, &vocab.encode(&text), cfg)?;
    let mut lines = Vec::with_capacity(traj.revisions.len());
    lines.push(json!({"step": 0, "text": text, "script": null}));
    for (i, (step, rev)) in traj.steps.iter().zip(&traj.revisions[1..]).enumerate() {
        lines.push(json!({
            "step": i + 1,
            "text": vocab.decode(rev)?,
            "tags": step.script.tag_string(),
            "script": edit_ops::to_text(&step.script),
            "truncated": step.truncated,
        }));
    }
    let mut body = String::new();
    for l in lines {
        body.push_str(&serde_json::to_string(&l)?);
        body.push('\n');
    }
    match out {
        Some(p) => std::fs::write(p, body).map_err(|e| Error::io(format!("writing {}", p.display()), e)),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn cmd_diff(src: &Path, tgt: &Path, vocab_path: Option<&Path>) -> Result<()> {
    let vocab = match vocab_path {
        Some(p) => Vocabulary::load(p)?,
        None => Vocabulary::byte_level(),
    };
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(format!("reading {}", p.display()), e));
    let (a, b) = (vocab.encode(&read(src)?), vocab.encode(&read(tgt)?));
    let script = edit_ops::diff(&a, &b);
    println!("tags\t{}", script.tag_string());
    for s in extract_spans(&script) {
        let content = if s.op.generates() {
            serde_json::to_string(&vocab.decode(&s.content)?)?
        } else {
            String::new()
        };
        println!("{}\t{}..{}\t{}", s.op.name(), s.start, s.end, content);
    }
    Ok(())
}
