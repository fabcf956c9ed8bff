//! Command-line front end: `gen-data`, `train`, `eval`, `predict`,
//! `ensemble`, `compare` and `dump-attention`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::checkpoint::{read_text, write_file, SavedModel, CHECKPOINT_FILE};
use crate::config::{Config, Variant};
use crate::corpus::{
    generate_synthetic, parse_sentences, serialize_corpus, split, Corpus, GeneratorConfig, Sentence, SplitRatios,
};
use crate::decoder::{decode, ensemble_average, format_predictions, LabelProbabilities, ThresholdSet};
use crate::error::{Error, Result};
use crate::evaluation::{permutation_test, EvalReport, Stratum};
use crate::model::{AttentionMatrix, SentenceInput};
use crate::trainer::{self, corpus_probabilities, tune_thresholds};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const HISTORY_FILE: &str = "history.tsv";

#[derive(Parser, Debug)]
#[command(name = "pasia", version, about = "Multi-predicate argument structure analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus split into train/dev/test files.
    GenData(GenDataArgs),
    /// Train one model per seed.
    Train(TrainArgs),
    /// Score trained models on an annotated corpus.
    Eval(EvalArgs),
    /// Write predicted arguments for every predicate.
    Predict(PredictArgs),
    /// Average label distributions across models, then decode and score.
    Ensemble(EnsembleArgs),
    /// Pairwise one-sided permutation tests between per-seed score lists.
    Compare(CompareArgs),
    /// Export attention weights as JSON.
    DumpAttention(DumpAttentionArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Generator settings file (`key = value`); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub sentences: Option<usize>,
    #[arg(long)]
    pub share_prob: Option<f64>,
    #[arg(long)]
    pub zero_prob: Option<f64>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub min_predicates: Option<usize>,
    #[arg(long)]
    pub max_predicates: Option<usize>,
    /// Train/dev/test fractions.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub split: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Model variant, e.g. `base`, `mp-pool-selfatt`, `grid`.
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// A single seed; the model is written directly to `--out`.
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Several seeds as `A..B` (inclusive) or `a,b,c`; one `seed-N`
    /// subdirectory each.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Table,
    Json,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Model directory; a directory of `seed-N` models expands to all of them.
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "table")]
    pub format: ReportFormat,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write one line of scores per model, for `compare`.
    #[arg(long)]
    pub scores: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EnsembleArgs {
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Tune thresholds on the averaged distributions of this corpus instead
    /// of averaging the members' thresholds.
    #[arg(long)]
    pub tune_on: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: ReportFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the decoded predictions.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Overall,
    Dep,
    Zero,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Score files written by `eval --scores`; at least two.
    #[arg(long = "scores")]
    pub scores: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "overall")]
    pub metric: Metric,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DumpAttentionArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Only the first N sentences.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Provenance record written beside every artifact.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<String>,
    pub seeds: Vec<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// SHA-256 over the input corpus files, in order.
    pub corpus_sha256: String,
    pub wall_clock_seconds: f64,
    pub version: String,
}

impl RunManifest {
    fn new(command: &str, config: Option<&Path>, seeds: Vec<u64>, inputs: &[&Path]) -> Result<Self> {
        Ok(RunManifest {
            command: command.to_string(),
            config: config.map(|p| p.display().to_string()),
            seeds,
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            outputs: Vec::new(),
            corpus_sha256: checksum(inputs)?,
            wall_clock_seconds: 0.0,
            version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }

    fn finish(mut self, started: Instant, outputs: Vec<String>, path: &Path) -> Result<()> {
        self.outputs = outputs;
        self.wall_clock_seconds = started.elapsed().as_secs_f64();
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        write_file(path, text + "\n")
    }
}

/// SHA-256 over the concatenated contents of `files`.
pub fn checksum(files: &[&Path]) -> Result<String> {
    let mut hasher = Sha256::new();
    for p in files {
        hasher.update(fs::read(p).map_err(|e| Error::io(*p, e))?);
    }
    Ok(hex(&hasher.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Manifest path for a single-file artifact: `<file>.manifest.json`.
fn manifest_beside(file: &Path) -> PathBuf {
    let mut name = file.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    file.with_file_name(name)
}

/// Parses the arguments and runs the command. Help and version requests
/// print and return `Ok`.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            Ok(())
        }
        Err(e) => Err(Error::usage(e.render().to_string().trim_end().trim_start_matches("error: "))),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Ensemble(a) => ensemble(a),
        Command::Compare(a) => compare(a),
        Command::DumpAttention(a) => dump_attention(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_sentences(path: &Path) -> Result<Vec<Sentence>> {
    parse_sentences(&read_text(path)?)
}

fn parse_split(text: &str) -> Result<SplitRatios> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::usage(format!("--split expects three comma-separated fractions, got {text:?}")))?;
    match parts[..] {
        [train, dev, test] => Ok(SplitRatios { train, dev, test }),
        _ => Err(Error::usage(format!("--split expects three fractions, got {}", parts.len()))),
    }
}

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let started = Instant::now();
    let mut cfg = match &a.config {
        Some(p) => GeneratorConfig::parse(&read_text(p)?)?,
        None => GeneratorConfig::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { cfg.$f = v; })* };
    }
    set!(sentences, share_prob, zero_prob, vocab_size, min_len, max_len, min_predicates, max_predicates);
    let ratios = parse_split(&a.split)?;
    cfg.validate()?;
    let corpus = generate_synthetic(&cfg, a.seed)?;
    let (train, dev, test) = split(&corpus, ratios, a.seed)?;
    create_dir(&a.out)?;
    let mut outputs = Vec::new();
    for (name, part) in [("train.txt", &train), ("dev.txt", &dev), ("test.txt", &test)] {
        let path = a.out.join(name);
        write_file(&path, serialize_corpus(&part.sentences))?;
        outputs.push(path);
    }
    let generator = a.out.join("generator.cfg");
    write_file(&generator, cfg.to_text())?;
    let inputs: Vec<&Path> = a.config.iter().map(PathBuf::as_path).collect();
    let mut manifest = RunManifest::new("gen-data", a.config.as_deref(), vec![a.seed], &inputs)?;
    // The checksum covers the generated corpus itself.
    manifest.corpus_sha256 = checksum(&outputs.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    let mut names: Vec<String> = outputs.iter().map(|p| p.display().to_string()).collect();
    names.push(generator.display().to_string());
    manifest.finish(started, names, &a.out.join(MANIFEST_FILE))
}

/// `A..B` (inclusive), `A..=B` or a comma list.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::usage(format!("cannot parse seed list {text:?}"));
    let seeds: Vec<u64> = if let Some((lo, hi)) = text.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u64 = hi.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if lo > hi {
            return Err(bad());
        }
        (lo..=hi).collect()
    } else {
        text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?
    };
    let mut unique = seeds.clone();
    unique.sort_unstable();
    unique.dedup();
    if seeds.is_empty() || unique.len() != seeds.len() {
        return Err(bad());
    }
    Ok(seeds)
}

/// Reads a corpus file; an unreadable file is an I/O error naming the path.
fn load_corpus(path: &Path) -> Result<Vec<Sentence>> {
    read_sentences(path)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let started = Instant::now();
    let mut cfg = match &a.config {
        Some(p) => Config::parse(&read_text(p)?)?,
        None => Config::default(),
    };
    if let Some(v) = a.variant {
        cfg.hyper.set_variant(v);
    }
    let seeds = match (&a.seed, &a.seeds) {
        (Some(s), _) => vec![*s],
        (None, Some(list)) => parse_seeds(list)?,
        (None, None) => vec![cfg.train.seed],
    };
    let nested = a.seeds.is_some();
    let train_corpus = Corpus::new(load_corpus(&a.train)?);
    let dev_corpus = Corpus::with_vocab(load_corpus(&a.dev)?, train_corpus.vocab.clone());
    create_dir(&a.out)?;

    let mut outputs = Vec::new();
    for &seed in &seeds {
        let dir = if nested {
            a.out.join(format!("seed-{seed}"))
        } else {
            a.out.clone()
        };
        let mut run_cfg = cfg.clone();
        run_cfg.train.seed = seed;
        let quiet = a.quiet;
        let variant = run_cfg.hyper.variant();
        let outcome = trainer::train_with(
            &run_cfg.hyper,
            &run_cfg.train,
            &train_corpus,
            |m| trainer::dev_evaluation(m, &run_cfg.train, &train_corpus, &dev_corpus),
            |e| {
                if !quiet {
                    eprintln!(
                        "[{variant} seed {seed}] epoch {:>3} loss {:.4} dev F1 {:.4} lr {:e} {}",
                        e.epoch,
                        e.train_loss,
                        e.dev_f1,
                        e.lr,
                        e.event.as_str()
                    );
                }
            },
        )?;
        let saved = SavedModel {
            config: run_cfg,
            model: outcome.model,
            vocab: train_corpus.vocab.clone(),
            thresholds: outcome.thresholds,
        };
        saved.save(&dir)?;
        write_file(&dir.join(HISTORY_FILE), outcome.history.to_tsv())?;
        outputs.push(dir.display().to_string());
    }
    let manifest = RunManifest::new("train", a.config.as_deref(), seeds, &[&a.train, &a.dev])?;
    manifest.finish(started, outputs, &a.out.join(MANIFEST_FILE))
}

/// A model directory, or a directory of `seed-N` model directories.
pub fn expand_models(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.join(CHECKPOINT_FILE).is_file() {
            out.push(p.clone());
            continue;
        }
        let entries = fs::read_dir(p).map_err(|e| Error::io(p, e))?;
        let mut seeded: Vec<(u64, PathBuf)> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let n: u64 = name.strip_prefix("seed-")?.parse().ok()?;
                e.path().join(CHECKPOINT_FILE).is_file().then(|| (n, e.path()))
            })
            .collect();
        if seeded.is_empty() {
            return Err(Error::io(
                p.join(CHECKPOINT_FILE),
                std::io::Error::new(std::io::ErrorKind::NotFound, "no model checkpoint found"),
            ));
        }
        seeded.sort();
        out.extend(seeded.into_iter().map(|(_, p)| p));
    }
    Ok(out)
}

fn model_probabilities(m: &SavedModel, sentences: &[Sentence]) -> Result<Vec<LabelProbabilities>> {
    corpus_probabilities(&m.model, &m.vocab, sentences)
}

fn decode_all(probs: &[LabelProbabilities], theta: &ThresholdSet, sentences: &[Sentence]) -> Vec<crate::decoder::ArgumentAssignment> {
    probs.iter().zip(sentences).map(|(p, s)| decode(p, theta, s)).collect()
}

fn render(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Table => report.to_table(),
        ReportFormat::Json => report.to_json() + "\n",
    }
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let started = Instant::now();
    let dirs = expand_models(&a.models)?;
    let sentences = load_corpus(&a.data)?;
    let mut text = String::new();
    let mut scores = String::from("# model\toverall\tdep\tzero\n");
    let mut reports = Vec::new();
    for dir in &dirs {
        let m = SavedModel::load(dir)?;
        let probs = model_probabilities(&m, &sentences)?;
        let report = trainer::evaluate(&probs, &sentences, &m.thresholds)?;
        let _ = writeln!(
            scores,
            "{}\t{:.6}\t{:.6}\t{:.6}",
            dir.display(),
            report.overall.f1(),
            report.stratum(Stratum::Dep).f1(),
            report.stratum(Stratum::Zero).f1()
        );
        reports.push((dir, report));
    }
    match a.format {
        ReportFormat::Json if reports.len() > 1 => {
            let _ = writeln!(text, "[");
            for (k, (dir, r)) in reports.iter().enumerate() {
                let sep = if k + 1 < reports.len() { "," } else { "" };
                let _ = writeln!(
                    text,
                    "{{\"model\": {}, \"report\": {}}}{sep}",
                    serde_json::to_string(&dir.display().to_string()).expect("string"),
                    r.to_json()
                );
            }
            let _ = writeln!(text, "]");
        }
        format => {
            for (dir, r) in &reports {
                if reports.len() > 1 {
                    let _ = writeln!(text, "== {} ==", dir.display());
                }
                text.push_str(&render(r, format));
            }
            if reports.len() > 1 && format == ReportFormat::Table {
                let mean = |f: &dyn Fn(&EvalReport) -> f64| reports.iter().map(|(_, r)| f(r)).sum::<f64>() / reports.len() as f64;
                let _ = writeln!(
                    text,
                    "mean over {} models: F1 {:.2}  Dep {:.2}  Zero {:.2}",
                    reports.len(),
                    100.0 * mean(&|r| r.overall.f1()),
                    100.0 * mean(&|r| r.stratum(Stratum::Dep).f1()),
                    100.0 * mean(&|r| r.stratum(Stratum::Zero).f1())
                );
            }
        }
    }
    emit(a.out.as_deref(), &text)?;
    let mut outputs = Vec::new();
    if let Some(p) = &a.scores {
        write_file(p, &scores)?;
        outputs.push(p.display().to_string());
    }
    if let Some(p) = &a.out {
        outputs.push(p.display().to_string());
    }
    if let Some(first) = a.out.as_ref().or(a.scores.as_ref()) {
        let seeds = dirs.iter().map(|d| SavedModel::load(d).map(|m| m.config.train.seed)).collect::<Result<_>>()?;
        RunManifest::new("eval", None, seeds, &[&a.data])?.finish(started, outputs, &manifest_beside(first))?;
    }
    Ok(())
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let started = Instant::now();
    let m = SavedModel::load(&a.model)?;
    let sentences = load_corpus(&a.data)?;
    let probs = model_probabilities(&m, &sentences)?;
    let mut text = String::new();
    for (s, asg) in sentences.iter().zip(decode_all(&probs, &m.thresholds, &sentences)) {
        format_predictions(s, &asg, &mut text);
    }
    emit(a.out.as_deref(), &text)?;
    if let Some(p) = &a.out {
        RunManifest::new("predict", None, vec![m.config.train.seed], &[&a.data])?.finish(
            started,
            vec![p.display().to_string()],
            &manifest_beside(p),
        )?;
    }
    Ok(())
}

fn averaged(models: &[SavedModel], sentences: &[Sentence]) -> Result<Vec<LabelProbabilities>> {
    let per_model = models.iter().map(|m| model_probabilities(m, sentences)).collect::<Result<Vec<_>>>()?;
    (0..sentences.len())
        .map(|k| ensemble_average(&per_model.iter().map(|p| p[k].clone()).collect::<Vec<_>>()))
        .collect()
}

pub fn ensemble(a: EnsembleArgs) -> Result<()> {
    let started = Instant::now();
    let dirs = expand_models(&a.models)?;
    let models = dirs.iter().map(|d| SavedModel::load(d)).collect::<Result<Vec<_>>>()?;
    let sentences = load_corpus(&a.data)?;
    let theta = match &a.tune_on {
        Some(p) => {
            let tune = load_corpus(p)?;
            tune_thresholds(&averaged(&models, &tune)?, &tune)
        }
        None => ThresholdSet::mean(&models.iter().map(|m| m.thresholds).collect::<Vec<_>>()),
    };
    let probs = averaged(&models, &sentences)?;
    let report = trainer::evaluate(&probs, &sentences, &theta)?;
    emit(a.out.as_deref(), &render(&report, a.format))?;
    let mut outputs: Vec<String> = a.out.iter().map(|p| p.display().to_string()).collect();
    if let Some(p) = &a.predictions {
        let mut text = String::new();
        for (s, asg) in sentences.iter().zip(decode_all(&probs, &theta, &sentences)) {
            format_predictions(s, &asg, &mut text);
        }
        write_file(p, text)?;
        outputs.push(p.display().to_string());
    }
    if let Some(first) = a.out.as_ref().or(a.predictions.as_ref()) {
        let seeds = models.iter().map(|m| m.config.train.seed).collect();
        let mut inputs: Vec<&Path> = vec![&a.data];
        inputs.extend(a.tune_on.as_deref());
        RunManifest::new("ensemble", None, seeds, &inputs)?.finish(started, outputs, &manifest_beside(first))?;
    }
    Ok(())
}

/// Reads the per-model scores written by `eval --scores`.
pub fn read_scores(path: &Path, metric: Metric) -> Result<Vec<f64>> {
    let column = match metric {
        Metric::Overall => 1,
        Metric::Dep => 2,
        Metric::Zero => 3,
    };
    let mut out = Vec::new();
    for (i, line) in read_text(path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let v = fields.get(column).and_then(|f| f.parse::<f64>().ok()).ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("{}: expected model and three scores", path.display()),
        })?;
        out.push(v);
    }
    Ok(out)
}

/// Pairwise p-values, models ordered by ascending mean. Entry (row, col)
/// with col after row tests "col scores higher than row".
pub fn compare_table(names: &[String], lists: &[Vec<f64>]) -> Result<String> {
    if lists.len() < 2 {
        return Err(Error::usage("compare needs at least two score lists"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut order: Vec<usize> = (0..lists.len()).collect();
    order.sort_by(|&x, &y| mean(&lists[x]).total_cmp(&mean(&lists[y])).then(x.cmp(&y)));
    let width = names.iter().map(String::len).max().unwrap_or(0).max(10);
    let mut out = String::new();
    let _ = write!(out, "{:<width$} {:>8}", "", "mean");
    for &j in &order[1..] {
        let _ = write!(out, " {:>width$}", names[j]);
    }
    out.push('\n');
    for (r, &i) in order[..order.len() - 1].iter().enumerate() {
        let _ = write!(out, "{:<width$} {:>8.4}", names[i], mean(&lists[i]));
        for (c, &j) in order.iter().enumerate().skip(1) {
            if c <= r {
                let _ = write!(out, " {:>width$}", "");
            } else {
                let p = permutation_test(&lists[j], &lists[i])?.p_value;
                let _ = write!(out, " {:>width$}", format!("{p:.3e}"));
            }
        }
        out.push('\n');
    }
    let last = order[order.len() - 1];
    let _ = writeln!(out, "{:<width$} {:>8.4}", names[last], mean(&lists[last]));
    Ok(out)
}

pub fn compare(a: CompareArgs) -> Result<()> {
    if a.scores.len() < 2 {
        return Err(Error::usage("compare needs at least two --scores files"));
    }
    let lists = a.scores.iter().map(|p| read_scores(p, a.metric)).collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = a
        .scores
        .iter()
        .map(|p| p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned()))
        .collect();
    emit(a.out.as_deref(), &compare_table(&names, &lists)?)
}

#[derive(Serialize)]
struct SentenceAttention<'a> {
    sentence: &'a str,
    tokens: &'a [String],
    predicates: Vec<usize>,
    matrices: Vec<AttentionMatrix>,
}

pub fn dump_attention(a: DumpAttentionArgs) -> Result<()> {
    let started = Instant::now();
    let m = SavedModel::load(&a.model)?;
    if !m.model.hyper.interaction.has_attention() {
        return Err(Error::usage(format!(
            "variant {} has no attention layer",
            m.model.hyper.variant()
        )));
    }
    let sentences = load_corpus(&a.data)?;
    let take = a.limit.unwrap_or(sentences.len()).min(sentences.len());
    let mut dumps = Vec::new();
    for s in &sentences[..take] {
        let input = SentenceInput::new(&m.vocab, s);
        if input.q() == 0 {
            continue;
        }
        let (_, trace) = m.model.run(&input, true)?;
        dumps.push(SentenceAttention {
            sentence: &s.id,
            tokens: &s.tokens,
            predicates: input.predicates,
            matrices: trace.matrices.unwrap_or_default(),
        });
    }
    let text = serde_json::to_string_pretty(&dumps).expect("attention serializes") + "\n";
    emit(a.out.as_deref(), &text)?;
    if let Some(p) = &a.out {
        RunManifest::new("dump-attention", None, vec![m.config.train.seed], &[&a.data])?.finish(
            started,
            vec![p.display().to_string()],
            &manifest_beside(p),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1..10").unwrap(), (1..=10).collect::<Vec<_>>());
        assert_eq!(parse_seeds("3..=4").unwrap(), vec![3, 4]);
        assert_eq!(parse_seeds("5, 2").unwrap(), vec![5, 2]);
        for bad in ["", "4..2", "a", "1,1"] {
            assert!(matches!(parse_seeds(bad), Err(Error::Usage(_))), "{bad}");
        }
    }

    #[test]
    fn split_flag() {
        assert_eq!(parse_split("0.8,0.1,0.1").unwrap(), SplitRatios::default());
        assert!(parse_split("0.5,0.5").is_err());
        assert!(parse_split("x,1,1").is_err());
    }

    #[test]
    fn bad_flags_are_usage_errors() {
        let e = run_from(["pasia", "gen-data", "--share-prob", "1.5", "--out", "/nonexistent/x"]).unwrap_err();
        assert_eq!(e.exit_code(), 1);
        let e = run_from(["pasia", "train", "--bogus"]).unwrap_err();
        assert_eq!(e.exit_code(), 1);
        let e = run_from(["pasia", "train", "--variant", "nope", "--train", "a", "--dev", "b", "--out", "c"]).unwrap_err();
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn compare_layout() {
        let names = vec!["lo".to_string(), "hi".to_string()];
        let lists = vec![(0..10).map(f64::from).collect(), (10..20).map(f64::from).collect()];
        let t = compare_table(&names, &lists).unwrap();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("lo"));
        assert!(lines[1].contains("5.413e-6"), "{t}");
        assert!(lines[2].starts_with("hi"));
        assert!(compare_table(&names[..1], &lists[..1]).is_err());
    }
}
