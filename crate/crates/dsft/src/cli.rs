//! Subcommands of the `dsft` tool.

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dsft_core::corpus::{entropy_report, generate_corpus, ArithOp};
use dsft_core::eval::{compare_runs, exact_match_eval, reconstruction_eval};
use dsft_core::masking::{compose_mask_plan, StreamKey};
use dsft_core::sampler::generate;
use dsft_core::tokenizer::{TokenClass, TokenId, EOS_ID};
use dsft_core::trainer::Trainer;
use dsft_core::{Domain, EvalReport, GeneratorSettings, Mode, Seed, Vocabulary};
use log::info;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::exec::Threaded;
use crate::io;
use crate::manifest::{absolute, RunManifest, VOCAB_FILE};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const HELDOUT_FILE: &str = "heldout.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const FINAL_DIR: &str = "final";

#[derive(Debug, Parser)]
#[command(name = "dsft", version, about = "Masked-diffusion fine-tuning workbench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic arithmetic corpus.
    GenCorpus(GenCorpusArgs),
    /// Per-class unigram entropy of a corpus.
    Analyze(AnalyzeArgs),
    /// Print the mask plans a training step would use.
    MaskPreview(MaskPreviewArgs),
    /// Train a denoiser.
    Train(TrainArgs),
    /// Complete a prompt by iterative unmasking.
    Generate(GenerateArgs),
    /// Reconstruction accuracy (and optionally exact match) on a held-out set.
    Eval(EvalArgs),
    /// Per-metric deltas between two eval reports.
    Compare(CompareArgs),
}

/// Config file plus overrides, shared by the commands that read run settings.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Flat key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set model.dim=64`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Experiment seed (config key `seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// sft or dsft (config key `trainer.mode`).
    #[arg(long)]
    pub mode: Option<String>,
}

impl ConfigArgs {
    /// Layer file, `--set` overrides and dedicated flags over `base`.
    pub fn resolve(&self, mut base: RunConfig) -> Result<RunConfig> {
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
            base.apply_text(&text, path)?;
        }
        base.apply_overrides(&self.set)?;
        if let Some(seed) = self.seed {
            base.seed = seed;
        }
        if let Some(mode) = &self.mode {
            base.set("trainer.mode", mode).map_err(Error::Usage)?;
        }
        Ok(base)
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenCorpusArgs {
    #[arg(long, default_value_t = 5000)]
    pub count: usize,
    /// Extra records written to heldout.jsonl.
    #[arg(long, default_value_t = 0)]
    pub holdout: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 99)]
    pub max_operand: u32,
    #[arg(long, default_value_t = 3)]
    pub max_steps: usize,
    /// Operators to draw from, e.g. "+-".
    #[arg(long, default_value = "+-*/")]
    pub ops: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    /// Corpus JSONL.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for entropy.json, entropy.txt and a manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print JSON instead of the table.
    #[arg(long)]
    pub json: bool,
    #[arg(long, default_value_t = 2)]
    pub min_freq: usize,
}

#[derive(Debug, Clone, Args)]
pub struct MaskPreviewArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Vocabulary file; built from the data when absent.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub step: u64,
    /// Only the first N records.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Output JSONL path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Training corpus JSONL. Defaults to the manifest's corpus with --from-manifest.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long, default_value_t = NonZeroUsize::MIN)]
    pub workers: NonZeroUsize,
    /// Continue from a checkpoint directory.
    #[arg(long, conflicts_with = "from_manifest")]
    pub resume: Option<PathBuf>,
    /// Re-run the training recorded in a run directory's manifest.
    #[arg(long)]
    pub from_manifest: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Defaults to vocab.txt in the checkpoint's run directory.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub prompt: String,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub len: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the per-step commit trace as JSONL.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Held-out JSONL.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Directory for report.json and a manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also decode every prompt and score the extracted answer.
    #[arg(long)]
    pub exact_match: bool,
    /// Override keys of the checkpoint's config (eval.*, sampler.*).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Baseline: an eval output directory or a report.json.
    pub a: PathBuf,
    pub b: PathBuf,
    #[arg(long)]
    pub json: bool,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::GenCorpus(a) => cmd_gen_corpus(&a, out),
        Command::Analyze(a) => cmd_analyze(&a, out),
        Command::MaskPreview(a) => cmd_mask_preview(&a, out),
        Command::Train(a) => cmd_train(&a, out).map(|_| ()),
        Command::Generate(a) => cmd_generate(&a, out),
        Command::Eval(a) => cmd_eval(&a, out).map(|_| ()),
        Command::Compare(a) => cmd_compare(&a, out),
    }
}

fn emit(out: &mut dyn Write, s: &str) -> Result<()> {
    out.write_all(s.as_bytes()).map_err(Error::io("<stdout>"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub count: usize,
    pub holdout: usize,
    pub seed: u64,
    pub ops: String,
    pub max_operand: u32,
    pub max_steps: usize,
    pub vocab_size: usize,
    pub token_count: usize,
    pub mean_sequence_len: f64,
    pub max_sequence_len: usize,
    pub max_completion_len: usize,
    pub corpus_fingerprint: String,
}

pub fn cmd_gen_corpus(args: &GenCorpusArgs, out: &mut dyn Write) -> Result<()> {
    if args.count == 0 {
        return Err(Error::Usage("--count must be at least 1".into()));
    }
    let ops = args
        .ops
        .chars()
        .map(|c| ArithOp::from_symbol(&c.to_string()).ok_or_else(|| Error::Usage(format!("unknown operator {c:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let settings = GeneratorSettings {
        count: args.count + args.holdout,
        ops,
        max_operand: args.max_operand,
        max_steps: args.max_steps,
        ..GeneratorSettings::default()
    };
    settings.validate()?;
    let mut records = generate_corpus(&settings, Seed(args.seed))?;
    let heldout = records.split_off(args.count);
    std::fs::create_dir_all(&args.out).map_err(Error::io(&args.out))?;
    io::write_jsonl(&args.out.join(CORPUS_FILE), &records)?;
    if !heldout.is_empty() {
        io::write_jsonl(&args.out.join(HELDOUT_FILE), &heldout)?;
    }
    let vocab = io::build_vocab(&records, 2)?;
    let seqs = io::tokenize_records(&records, &vocab)?;
    let token_count: usize = seqs.iter().map(|s| s.len()).sum();
    let stats = CorpusStats {
        count: records.len(),
        holdout: heldout.len(),
        seed: args.seed,
        ops: args.ops.clone(),
        max_operand: args.max_operand,
        max_steps: args.max_steps,
        vocab_size: vocab.len(),
        token_count,
        mean_sequence_len: token_count as f64 / seqs.len() as f64,
        max_sequence_len: seqs.iter().map(|s| s.len()).max().unwrap_or(0),
        max_completion_len: seqs.iter().map(|s| s.completion_len()).max().unwrap_or(0),
        corpus_fingerprint: io::corpus_fingerprint(&records),
    };
    io::write_json(&args.out.join("stats.json"), &stats)?;
    let config = BTreeMap::from([
        ("count".to_string(), args.count.to_string()),
        ("holdout".to_string(), args.holdout.to_string()),
        ("ops".to_string(), args.ops.clone()),
        ("max_operand".to_string(), args.max_operand.to_string()),
        ("max_steps".to_string(), args.max_steps.to_string()),
    ]);
    let mut m = RunManifest::new("gen-corpus", args.seed, config);
    m.corpus_fingerprint = Some(stats.corpus_fingerprint.clone());
    m.seal(&args.out)?;
    emit(out, &format!("wrote {} records ({} held out) to {}\n", records.len(), heldout.len(), args.out.display()))
}

pub fn cmd_analyze(args: &AnalyzeArgs, out: &mut dyn Write) -> Result<()> {
    let records = io::read_jsonl(&args.data)?;
    if records.is_empty() {
        return Err(Error::Usage(format!("{} contains no records", args.data.display())));
    }
    let vocab = io::build_vocab(&records, args.min_freq)?;
    let seqs = io::tokenize_records(&records, &vocab)?;
    let content: Vec<Vec<TokenId>> = seqs
        .iter()
        .map(|s| s.ids().iter().copied().filter(|&id| vocab.class_of(id) != Some(TokenClass::Special)).collect())
        .collect();
    let report = entropy_report(content.iter().map(Vec::as_slice), &vocab)?;
    let table = report.render_table();
    if args.json {
        emit(out, &format!("{}\n", serde_json::to_string_pretty(&report)?))?;
    } else {
        emit(out, &table)?;
    }
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
        io::write_json(&dir.join("entropy.json"), &report)?;
        io::write_file(&dir.join("entropy.txt"), table.as_bytes())?;
        let mut m = RunManifest::new("analyze", 0, BTreeMap::from([("min_freq".into(), args.min_freq.to_string())]));
        m.corpus_fingerprint = Some(io::corpus_fingerprint(&records));
        m.vocab_hash = Some(io::vocab_hash(&vocab));
        m.inputs.insert("data".into(), absolute(&args.data));
        m.seal(dir)?;
    }
    if !report.numeric_exceeds_stopwords() {
        let n = report.class(TokenClass::Numeric).mean_surprisal_nats;
        return Err(Error::SelfCheck(format!(
            "numeric mean surprisal {n:?} does not exceed stopword mean surprisal {:?}",
            report.stopword_mean_surprisal_nats
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreviewLine {
    pub index: usize,
    pub step: u64,
    pub t: f64,
    pub ids: Vec<TokenId>,
    pub masked: Vec<usize>,
    pub provenance: Vec<String>,
    pub realized_ratio: f64,
}

fn vocab_for(records: &[dsft_core::CorpusRecord], path: Option<&Path>, min_freq: usize) -> Result<Vocabulary> {
    match path {
        Some(p) => io::read_vocab(p),
        None => io::build_vocab(records, min_freq),
    }
}

pub fn cmd_mask_preview(args: &MaskPreviewArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = args.cfg.resolve(RunConfig::default())?;
    let records = io::read_jsonl(&args.data)?;
    let vocab = vocab_for(&records, args.vocab.as_deref(), cfg.min_freq)?;
    let tcfg = cfg.train_config(vocab.len())?;
    let mask = tcfg.effective_mask();
    let seqs = io::tokenize_records(&records, &vocab)?;
    let n = args.limit.unwrap_or(seqs.len()).min(seqs.len());
    let mut text = String::new();
    let mut ratio_sum = 0.0;
    for (index, seq) in seqs.iter().take(n).enumerate() {
        let seq = seq.pad_completion(tcfg.pad_completion);
        let plan = compose_mask_plan(&seq, &mask, args.step, StreamKey::new(tcfg.seed, index as u64))
            .map_err(|e| Error::Record { index, message: e.to_string() })?;
        let line = PreviewLine {
            index,
            step: args.step,
            t: plan.noise().t(),
            ids: seq.ids().to_vec(),
            masked: plan.masked().collect(),
            provenance: plan.provenance().values().map(|s| s.name().to_string()).collect(),
            realized_ratio: plan.realized_ratio(&seq),
        };
        ratio_sum += line.realized_ratio;
        text.push_str(&serde_json::to_string(&line)?);
        text.push('\n');
    }
    info!("mean realized ratio {:.4} over {n} plans", ratio_sum / n.max(1) as f64);
    match &args.out {
        Some(p) => io::write_file(p, text.as_bytes()),
        None => emit(out, &text),
    }
}

/// What a finished `train` invocation produced.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub manifest: RunManifest,
    pub final_loss: Option<f64>,
    pub steps_run: u64,
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<TrainOutcome> {
    let (base, recorded, corpus_path) = match &args.from_manifest {
        Some(dir) => {
            let m = RunManifest::read_verified(dir)?;
            if m.command != "train" {
                return Err(Error::Usage(format!("{} records a {:?} run, not train", dir.display(), m.command)));
            }
            let cfg = RunConfig::from_map(&m.config).map_err(Error::Usage)?;
            let corpus = match (&args.corpus, m.inputs.get("corpus")) {
                (Some(c), _) => c.clone(),
                (None, Some(c)) => PathBuf::from(c),
                (None, None) => return Err(Error::Usage("manifest records no corpus; pass --corpus".into())),
            };
            (cfg, m.corpus_fingerprint.clone(), corpus)
        }
        None => {
            let corpus = args.corpus.clone().ok_or_else(|| Error::Usage("--corpus is required".into()))?;
            let base = match &args.resume {
                Some(ck) => {
                    let ckpt = crate::io::read_json::<crate::checkpoint::CheckpointManifest>(
                        &ck.join(crate::checkpoint::MANIFEST_FILE),
                    )?;
                    RunConfig::from_map(&ckpt.config).map_err(Error::Usage)?
                }
                None => RunConfig::default(),
            };
            (base, None, corpus)
        }
    };
    let mut cfg = args.cfg.resolve(base)?;
    if let Some(steps) = args.steps {
        cfg.train.steps = steps;
    }

    let records = io::read_jsonl(&corpus_path)?;
    if records.is_empty() {
        return Err(Error::Usage(format!("{} contains no records", corpus_path.display())));
    }
    let fingerprint = io::corpus_fingerprint(&records);
    if let Some(expected) = recorded.filter(|f| *f != fingerprint) {
        return Err(Error::Integrity(format!(
            "{} has fingerprint {fingerprint}, manifest recorded {expected}",
            corpus_path.display()
        )));
    }
    let vocab = io::build_vocab(&records, cfg.min_freq)?;
    let vhash = io::vocab_hash(&vocab);
    let seqs = io::tokenize_records(&records, &vocab)?;
    let tcfg = cfg.train_config(vocab.len())?;

    let mut trainer = match &args.resume {
        Some(dir) => {
            let ck = Checkpoint::load(dir)?;
            if ck.vocab_hash != vhash {
                return Err(Error::Integrity(format!(
                    "checkpoint {} was trained with a different vocabulary",
                    dir.display()
                )));
            }
            let adam = ck.adam.ok_or_else(|| Error::Usage(format!("{} has no optimizer state", dir.display())))?;
            Trainer::resume(tcfg.clone(), seqs, ck.params, adam, ck.step, ck.monitor)?
        }
        None => Trainer::<f32>::new(tcfg.clone(), seqs)?,
    };

    std::fs::create_dir_all(&args.out).map_err(Error::io(&args.out))?;
    io::write_vocab(&args.out.join(VOCAB_FILE), &vocab)?;
    io::write_file(&args.out.join("config.txt"), cfg.to_text().as_bytes())?;
    let log_path = args.out.join("train_log.jsonl");
    let mut log = BufWriter::new(std::fs::File::create(&log_path).map_err(Error::io(&log_path))?);
    let exec = Threaded::new(args.workers);
    let config_map = cfg.to_map();
    let first = trainer.step_index();
    let mut final_loss = None;
    info!(
        "training {:?} for {} steps, {} parameters, {} workers",
        tcfg.mode,
        tcfg.steps.saturating_sub(first),
        trainer.params().as_slice().len(),
        exec.workers()
    );
    while !trainer.is_done() {
        let report = trainer.train_step(&exec)?;
        writeln!(log, "{}", serde_json::to_string(&report)?).map_err(Error::io(&log_path))?;
        final_loss = Some(report.loss);
        let done = trainer.step_index();
        if done % 100 == 0 {
            info!("step {done} loss {:.4}", report.loss);
        }
        if tcfg.checkpoint_every > 0 && done % tcfg.checkpoint_every == 0 && !trainer.is_done() {
            let dir = args.out.join("checkpoints").join(format!("step-{done:06}"));
            Checkpoint::from_trainer(&trainer, config_map.clone(), &vhash).save(&dir)?;
        }
    }
    log.flush().map_err(Error::io(&log_path))?;
    drop(log);
    Checkpoint::from_trainer(&trainer, config_map.clone(), &vhash).save(&args.out.join(FINAL_DIR))?;

    let mut m = RunManifest::new("train", cfg.seed, config_map);
    m.vocab_hash = Some(vhash);
    m.corpus_fingerprint = Some(fingerprint);
    m.inputs.insert("corpus".into(), absolute(&corpus_path));
    if let Some(r) = &args.resume {
        m.inputs.insert("resume".into(), absolute(r));
    }
    let manifest = m.seal(&args.out)?;
    let steps_run = trainer.step_index() - first;
    emit(
        out,
        &format!(
            "trained {steps_run} steps ({}), final loss {}; checkpoint in {}\n",
            if tcfg.mode == Mode::Sft { "sft" } else { "dsft" },
            final_loss.map_or_else(|| "-".to_string(), |l| format!("{l:.4}")),
            args.out.join(FINAL_DIR).display()
        ),
    )?;
    Ok(TrainOutcome { manifest, final_loss, steps_run })
}

/// Load a checkpoint with its vocabulary, refusing a vocabulary it was not trained with.
fn load_model(checkpoint: &Path, vocab: Option<&Path>) -> Result<(Checkpoint, Vocabulary, RunConfig)> {
    let ck = Checkpoint::load(checkpoint)?;
    let vocab_path = match vocab {
        Some(p) => p.to_path_buf(),
        None => checkpoint
            .parent()
            .map(|d| d.join(VOCAB_FILE))
            .filter(|p| p.is_file())
            .ok_or_else(|| Error::Usage(format!("no {VOCAB_FILE} next to {}; pass --vocab", checkpoint.display())))?,
    };
    let vocab = io::read_vocab(&vocab_path)?;
    let h = io::vocab_hash(&vocab);
    if h != ck.vocab_hash {
        return Err(Error::Integrity(format!(
            "vocabulary {} (hash {h}) does not match the checkpoint's vocabulary hash {}",
            vocab_path.display(),
            ck.vocab_hash
        )));
    }
    let cfg = RunConfig::from_map(&ck.config).map_err(Error::Usage)?;
    Ok((ck, vocab, cfg))
}

pub fn cmd_generate(args: &GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let (ck, vocab, cfg) = load_model(&args.checkpoint, args.vocab.as_deref())?;
    let mut decode = cfg.decode.clone();
    if let Some(s) = args.steps {
        decode.steps = s;
    }
    if let Some(l) = args.len {
        decode.completion_len = l;
    }
    if let Some(t) = args.temperature {
        decode.temperature = t;
    }
    let seed = Seed(args.seed.unwrap_or(cfg.seed));
    let prompt = vocab.encode_prompt(&args.prompt)?;
    let g = generate(&ck.params, &prompt, &decode, &mut seed.stream(Domain::Decode, &[0]))?;
    if let Some(path) = &args.trace {
        let mut s = String::new();
        for step in &g.trace {
            s.push_str(&serde_json::to_string(step)?);
            s.push('\n');
        }
        io::write_file(path, s.as_bytes())?;
    }
    let completion = g.completion();
    let cut = completion.iter().position(|&t| t == EOS_ID).unwrap_or(completion.len());
    emit(out, &format!("{}\n", vocab.detokenize(&completion[..cut])?))
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<EvalReport> {
    let (ck, vocab, mut cfg) = load_model(&args.checkpoint, args.vocab.as_deref())?;
    cfg.apply_overrides(&args.set)?;
    let records = io::read_jsonl(&args.data)?;
    if records.is_empty() {
        return Err(Error::Usage(format!("{} contains no records", args.data.display())));
    }
    let fingerprint = io::corpus_fingerprint(&records);
    let seqs = io::tokenize_records(&records, &vocab)?;
    let mut report = reconstruction_eval(&ck.params, &seqs, &cfg.eval, &fingerprint)?;
    if args.exact_match {
        let items: Vec<(String, String)> = records.iter().map(|r| (r.prompt.clone(), r.answer.clone())).collect();
        let em = exact_match_eval(&ck.params, &vocab, &items, &cfg.decode, Seed(cfg.seed))?;
        report.exact_match = Some(em.rate);
    }
    let mut text = String::new();
    for (name, v) in report.metrics() {
        text.push_str(&format!("{name:<12} {}\n", v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))));
    }
    text.push_str(&format!("sequences    {}\nmasked       {}\n", report.n, report.tally.overall_total()));
    emit(out, &text)?;
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
        io::write_json(&dir.join(REPORT_FILE), &report)?;
        let mut m = RunManifest::new("eval", cfg.seed, cfg.to_map());
        m.vocab_hash = Some(ck.vocab_hash.clone());
        m.corpus_fingerprint = Some(fingerprint);
        m.inputs.insert("checkpoint".into(), absolute(&args.checkpoint));
        m.inputs.insert("data".into(), absolute(&args.data));
        m.seal(dir)?;
    }
    Ok(report)
}

fn load_report(path: &Path) -> Result<EvalReport> {
    if path.is_dir() {
        RunManifest::read_verified(path)?;
        io::read_json(&path.join(REPORT_FILE))
    } else {
        io::read_json(path)
    }
}

pub fn cmd_compare(args: &CompareArgs, out: &mut dyn Write) -> Result<()> {
    let a = load_report(&args.a)?;
    let b = load_report(&args.b)?;
    let table = compare_runs(&a, &b)?;
    if args.json {
        emit(out, &format!("{}\n", serde_json::to_string_pretty(&table)?))
    } else {
        emit(out, &table.render())
    }
}
