//! Command-line front end: run configuration, subcommands and output files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::adcore::{peek_precision, Checkpoint, ParameterStore, RngStream};
use crate::augment::{build_neighbors, generate_pseudo_corpus, SwapPolicy};
use crate::corpus::{
    map_exophora_expressions, parse_annotated, parse_raw, preprocess, read_word_vectors, serialize_annotated,
    Case, Corpus, Filler, RawCorpus, WordVectors, CASES,
};
use crate::evaluation::{self, csv_rows, EvalSet, MetricsRecord, CSV_HEADER};
use crate::generator::{self, Prediction};
use crate::model::{check_dimensions, init_params, pretrained_extra_words, EncodedSentence, ModelConfig, Vocabularies};
use crate::scalar::{Precision, Scalar};
use crate::synth::{generate, SynthConfig};
use crate::training::{EpochRecord, LossSummary, ScheduleConfig, TrainData, TrainMode, Trainer};

pub const CONFIG_ECHO: &str = "config.toml";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSONL: &str = "metrics.jsonl";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const STATE_CHECKPOINT: &str = "state.ckpt";
pub const TEST_CSV: &str = "test_metrics.csv";
pub const TEST_JSON: &str = "test_metrics.json";
pub const EVAL_CSV: &str = "eval.csv";
pub const EVAL_JSON: &str = "eval.json";
pub const PREDICTIONS_FILE: &str = "predictions.txt";
pub const PSEUDO_FILE: &str = "pseudo.txt";

/// Section holding the selected parameters in a model checkpoint.
pub const MODEL_SECTION: &str = "model";

/// Corpus and embedding locations.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub raw: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Word-vector text file; its dimension must equal `model.word_dim`.
    pub embeddings: Option<PathBuf>,
}

/// Fully resolved configuration of one invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,
    pub mode: TrainMode,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub synth: SynthConfig,
    pub augment: SwapPolicy,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            precision: Precision::F32,
            mode: TrainMode::GenAdv,
            out_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            schedule: ScheduleConfig::default(),
            synth: SynthConfig::default(),
            augment: SwapPolicy::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| anyhow::anyhow!("{}", e.message()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    fn write_echo(&self) -> Result<()> {
        write(&self.out_dir.join(CONFIG_ECHO), self.to_toml()?)
    }
}

#[derive(Parser, Debug)]
#[command(name = "pasadv", version, about = "Predicate-argument structure analysis with adversarial training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write the best dev checkpoint and per-epoch metrics.
    Train(TrainArgs),
    /// Score a checkpoint (or a predictions file) against an annotated corpus.
    Evaluate(EvaluateArgs),
    /// Write one line of predicted fillers per predicate of a raw corpus.
    Predict(PredictArgs),
    /// Generate a synthetic corpus with planted selectional preferences.
    Synth(CommonArgs),
    /// Build a pseudo training corpus by embedding-neighbour word swaps.
    Augment(AugmentArgs),
}

/// Config file and the flags that override it.
#[derive(Args, Debug, Default)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub precision: Option<Precision>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl CommonArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(p) = self.precision {
            cfg.precision = p;
        }
        if let Some(d) = &self.out_dir {
            cfg.out_dir = d.clone();
        }
        Ok(cfg)
    }
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub mode: Option<TrainMode>,
}

#[derive(Args, Debug, Default)]
pub struct EvaluateArgs {
    #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
    pub checkpoint: Option<PathBuf>,
    /// Predictions file in the `predict` output format.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Annotated corpus to score against.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Config whose model section must match the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug, Default)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Raw-format input.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct AugmentArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Annotated training corpus; defaults to `data.train`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Word vectors; default to `data.embeddings`.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => {
            let mut cfg = a.common.resolve()?;
            if let Some(m) = a.mode {
                cfg.mode = m;
            }
            train(&cfg).map(|_| ())
        }
        Command::Evaluate(a) => evaluate_cmd(&a).map(|_| ()),
        Command::Predict(a) => predict_cmd(&a),
        Command::Synth(a) => {
            let mut cfg = a.resolve()?;
            if let Some(s) = a.seed {
                cfg.synth.seed = s;
            }
            synth(&cfg)
        }
        Command::Augment(a) => augment_cmd(&a),
    }
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref().with_context(|| format!("missing `data.{key}` in config"))
}

fn load_annotated(path: &Path) -> Result<Corpus> {
    let corpus = parse_annotated(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(map_exophora_expressions(preprocess(corpus).0))
}

fn load_raw(path: &Path) -> Result<RawCorpus> {
    parse_raw(path).with_context(|| format!("reading {}", path.display()))
}

fn load_vectors(path: &Path, dim: usize) -> Result<WordVectors> {
    read_word_vectors(path, dim).with_context(|| format!("reading {}", path.display()))
}

/// One line of `metrics.jsonl`.
#[derive(Serialize)]
struct JsonlRecord<'a> {
    epoch: usize,
    phase: &'static str,
    losses: &'a LossSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    dev: Option<&'a MetricsRecord>,
}

pub fn metrics_csv(history: &[EpochRecord]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in history {
        if let Some(m) = &r.dev {
            out.push_str(&csv_rows(r.epoch, m));
        }
    }
    out
}

pub fn metrics_jsonl(history: &[EpochRecord]) -> Result<String> {
    let mut out = String::new();
    for r in history {
        let rec = JsonlRecord {
            epoch: r.epoch,
            phase: r.phase.name(),
            losses: &r.losses,
            dev: r.dev.as_ref(),
        };
        writeln!(out, "{}", serde_json::to_string(&rec)?)?;
    }
    Ok(out)
}

/// Result of a `train` invocation.
#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_zero_f1: f64,
    pub test: Option<MetricsRecord>,
}

pub fn train(cfg: &RunConfig) -> Result<TrainSummary> {
    match cfg.precision {
        Precision::F32 => train_typed::<f32>(cfg),
        Precision::F64 => train_typed::<f64>(cfg),
    }
}

fn train_typed<T: Scalar>(cfg: &RunConfig) -> Result<TrainSummary> {
    let d = &cfg.data;
    let train_path = require(&d.train, "train")?;
    let dev_path = require(&d.dev, "dev")?;
    if cfg.mode.uses_raw() && d.raw.is_none() {
        bail!("mode {} needs a raw corpus (`data.raw`)", cfg.mode);
    }
    if cfg.mode == TrainMode::GenAug && d.embeddings.is_none() {
        bail!("mode {} needs word vectors (`data.embeddings`)", cfg.mode);
    }
    cfg.augment.validate()?;
    cfg.write_echo()?;

    let mut labeled = load_annotated(train_path)?;
    let dev = load_annotated(dev_path)?;
    let test = d.test.as_deref().map(load_annotated).transpose()?;
    let raw = match &d.raw {
        Some(p) if cfg.mode.uses_raw() => load_raw(p)?,
        _ => RawCorpus::default(),
    };
    let vectors = d
        .embeddings
        .as_deref()
        .map(|p| load_vectors(p, cfg.model.word_dim))
        .transpose()?;

    if cfg.mode == TrainMode::GenAug {
        let table = build_neighbors(vectors.as_ref().expect("checked above"), cfg.augment.neighbors)?;
        let (pseudo, report) = generate_pseudo_corpus(&labeled, &table, &cfg.augment, cfg.seed)?;
        log::info!(
            "pseudo corpus: {} sentences, {} swapped, {} unchanged",
            report.sentences,
            report.swapped,
            report.unchanged
        );
        write(&cfg.out_dir.join(PSEUDO_FILE), serialize_annotated(&pseudo))?;
        labeled.sentences.extend(pseudo.sentences);
    }

    let mut eval_corpora = vec![&dev];
    eval_corpora.extend(test.as_ref());
    let vocabs = match &vectors {
        Some(v) => Vocabularies::build(&labeled, pretrained_extra_words(v, &eval_corpora, &[&raw])),
        None => Vocabularies::build(&labeled, std::iter::empty()),
    };
    let (store, report) = init_params::<T>(&cfg.model, &vocabs, vectors.as_ref(), &mut RngStream::derive(cfg.seed, "init"));
    if let Some(r) = report {
        log::info!("pretrained vectors cover {:.1}% of the vocabulary", 100.0 * r.coverage);
    }

    let data = TrainData::new(&labeled.sentences, &raw.sentences, Some(&dev.sentences), &vocabs)?;
    let mut trainer = Trainer::new(cfg.model.clone(), cfg.schedule.clone(), cfg.mode, &data, store, cfg.seed)?;
    trainer.run()?;

    let history = trainer.state.history.clone();
    write(&cfg.out_dir.join(METRICS_CSV), metrics_csv(&history))?;
    write(&cfg.out_dir.join(METRICS_JSONL), metrics_jsonl(&history)?)?;

    let mut state = trainer.checkpoint()?;
    state.set_meta("vocabularies", &vocabs)?;
    state.write(&cfg.out_dir.join(STATE_CHECKPOINT))?;

    let best = trainer.state.best.as_ref().context("training ran no epochs")?;
    let ckpt = model_checkpoint(&best.store, &cfg.model, &vocabs, cfg, best.epoch)?;
    ckpt.write(&cfg.out_dir.join(BEST_CHECKPOINT))?;

    let test_metrics = match &test {
        Some(t) => {
            let m = evaluation::evaluate(&best.store, &cfg.model, &EvalSet::new(&t.sentences, &vocabs))?;
            write(&cfg.out_dir.join(TEST_CSV), format!("{CSV_HEADER}\n{}", csv_rows(best.epoch, &m)))?;
            write(&cfg.out_dir.join(TEST_JSON), serde_json::to_string_pretty(&m)?)?;
            Some(m)
        }
        None => None,
    };
    Ok(TrainSummary {
        history,
        best_epoch: best.epoch,
        best_dev_zero_f1: best.zero_f1,
        test: test_metrics,
    })
}

fn model_checkpoint<T: Scalar>(
    store: &ParameterStore<T>,
    model: &ModelConfig,
    vocabs: &Vocabularies,
    cfg: &RunConfig,
    epoch: usize,
) -> Result<Checkpoint<T>> {
    let mut c = Checkpoint::new();
    c.put_store(MODEL_SECTION, store)?;
    c.set_meta("model", model)?;
    c.set_meta("vocabularies", vocabs)?;
    c.set_meta("schedule", &cfg.schedule)?;
    c.set_meta("train_mode", &cfg.mode)?;
    c.set_meta("seed", &cfg.seed)?;
    c.set_meta("epoch", &epoch)?;
    Ok(c)
}

/// Parameters, network sizes and vocabularies of a saved model.
pub struct LoadedModel<T> {
    pub store: ParameterStore<T>,
    pub model: ModelConfig,
    pub vocabs: Vocabularies,
    pub epoch: usize,
}

pub fn load_model<T: Scalar>(path: &Path, expected: Option<&ModelConfig>) -> Result<LoadedModel<T>> {
    let c = Checkpoint::<T>::read(path).with_context(|| format!("reading {}", path.display()))?;
    let model: ModelConfig = c.get_meta("model")?.context("checkpoint has no model sizes")?;
    let mut vocabs: Vocabularies = c.get_meta("vocabularies")?.context("checkpoint has no vocabularies")?;
    vocabs.reindex();
    if let Some(e) = expected {
        ensure!(
            e == &model,
            "dimension mismatch between checkpoint and config: {}",
            model_diff(&model, e)?
        );
    }
    let store = c.take_store(MODEL_SECTION)?;
    check_dimensions(&store, &model, &vocabs).map_err(|e| anyhow::anyhow!("dimension mismatch: {e}"))?;
    Ok(LoadedModel {
        store,
        model,
        vocabs,
        epoch: c.get_meta("epoch")?.unwrap_or(0),
    })
}

fn model_diff(checkpoint: &ModelConfig, config: &ModelConfig) -> Result<String> {
    let a: BTreeMap<String, serde_json::Value> = serde_json::from_value(serde_json::to_value(checkpoint)?)?;
    let b: BTreeMap<String, serde_json::Value> = serde_json::from_value(serde_json::to_value(config)?)?;
    Ok(a.iter()
        .filter(|(k, v)| b.get(*k) != Some(v))
        .map(|(k, v)| format!("{k} checkpoint={v} config={}", b[k]))
        .collect::<Vec<_>>()
        .join(", "))
}

fn checkpoint_precision(path: &Path) -> Result<Precision> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    peek_precision(&bytes)?.with_context(|| format!("{} is not a checkpoint", path.display()))
}

fn expected_model(config: &Option<PathBuf>) -> Result<Option<ModelConfig>> {
    config.as_deref().map(|p| RunConfig::load(p).map(|c| c.model)).transpose()
}

pub fn evaluate_cmd(a: &EvaluateArgs) -> Result<MetricsRecord> {
    let gold = load_annotated(&a.corpus)?;
    let (metrics, epoch) = match (&a.checkpoint, &a.predictions) {
        (Some(ckpt), _) => {
            let expected = expected_model(&a.config)?;
            match checkpoint_precision(ckpt)? {
                Precision::F32 => evaluate_checkpoint::<f32>(ckpt, expected.as_ref(), &gold)?,
                Precision::F64 => evaluate_checkpoint::<f64>(ckpt, expected.as_ref(), &gold)?,
            }
        }
        (None, Some(p)) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let preds = parse_predictions(&text, gold.len())?;
            (evaluation::evaluate_predictions(&gold.sentences, &preds), 0)
        }
        (None, None) => bail!("either --checkpoint or --predictions is required"),
    };
    write(&a.out_dir.join(EVAL_CSV), format!("{CSV_HEADER}\n{}", csv_rows(epoch, &metrics)))?;
    write(&a.out_dir.join(EVAL_JSON), serde_json::to_string_pretty(&metrics)?)?;
    Ok(metrics)
}

fn evaluate_checkpoint<T: Scalar>(
    path: &Path,
    expected: Option<&ModelConfig>,
    gold: &Corpus,
) -> Result<(MetricsRecord, usize)> {
    let m = load_model::<T>(path, expected)?;
    let set = EvalSet::new(&gold.sentences, &m.vocabs);
    Ok((evaluation::evaluate(&m.store, &m.model, &set)?, m.epoch))
}

/// `sentence \t predicate \t NOM \t ACC \t DAT`, one line per predicate.
pub fn format_predictions(predictions: &[(usize, usize, [Filler; 3])]) -> String {
    let mut out = String::new();
    for (s, p, f) in predictions {
        let _ = writeln!(out, "{s}\t{p}\t{}\t{}\t{}", f[0].code(), f[1].code(), f[2].code());
    }
    out
}

/// Reads `predict` output into per-sentence predictions.
pub fn parse_predictions(text: &str, sentences: usize) -> Result<Vec<Prediction>> {
    let mut out = vec![Prediction::new(); sentences];
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split('\t').collect();
        ensure!(cols.len() == 5, "predictions line {}: expected 5 columns", i + 1);
        let idx = |c: &str| c.parse::<usize>().with_context(|| format!("predictions line {}: bad index `{c}`", i + 1));
        let (s, p) = (idx(cols[0])?, idx(cols[1])?);
        ensure!(s < sentences, "predictions line {}: sentence {s} out of range", i + 1);
        for (case, code) in CASES.iter().zip(&cols[2..]) {
            let f = Filler::from_code(code).with_context(|| format!("predictions line {}: bad filler `{code}`", i + 1))?;
            out[s].insert((p, *case), f);
        }
    }
    Ok(out)
}

pub fn predict_cmd(a: &PredictArgs) -> Result<()> {
    let raw = load_raw(&a.input)?;
    let expected = expected_model(&a.config)?;
    let lines = match checkpoint_precision(&a.checkpoint)? {
        Precision::F32 => predict_typed::<f32>(&a.checkpoint, expected.as_ref(), &raw)?,
        Precision::F64 => predict_typed::<f64>(&a.checkpoint, expected.as_ref(), &raw)?,
    };
    write(&a.output, format_predictions(&lines))
}

/// Predictions for every predicate of `raw`, as (sentence, predicate,
/// fillers) in input order.
pub fn predict_typed<T: Scalar>(
    checkpoint: &Path,
    expected: Option<&ModelConfig>,
    raw: &RawCorpus,
) -> Result<Vec<(usize, usize, [Filler; 3])>> {
    let m = load_model::<T>(checkpoint, expected)?;
    let mut out = Vec::new();
    for (i, s) in raw.sentences.iter().enumerate() {
        let enc = EncodedSentence::new(s, &m.vocabs);
        let pred = generator::predict(&m.store, &m.model, &enc)?;
        for p in enc.predicates() {
            let f = |c: Case| pred.get(&(p, c)).copied().unwrap_or(Filler::Null);
            out.push((i, p, [f(Case::Nom), f(Case::Acc), f(Case::Dat)]));
        }
    }
    Ok(out)
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let out = generate(&cfg.synth)?;
    out.write_to(&cfg.out_dir)?;
    cfg.write_echo()
}

pub fn augment_cmd(a: &AugmentArgs) -> Result<()> {
    let cfg = a.common.resolve()?;
    let input = a.input.clone().or_else(|| cfg.data.train.clone());
    let embeddings = a.embeddings.clone().or_else(|| cfg.data.embeddings.clone());
    let input = require(&input, "train")?;
    let embeddings = require(&embeddings, "embeddings")?;
    let corpus = load_annotated(input)?;
    let vectors = load_vectors(embeddings, cfg.model.word_dim)?;
    let table = build_neighbors(&vectors, cfg.augment.neighbors)?;
    let (pseudo, report) = generate_pseudo_corpus(&corpus, &table, &cfg.augment, cfg.seed)?;
    write(&cfg.out_dir.join(PSEUDO_FILE), serialize_annotated(&pseudo))?;
    log::info!(
        "pseudo corpus: {} sentences, {} swapped, {} unchanged",
        report.sentences,
        report.swapped,
        report.unchanged
    );
    cfg.write_echo()
}
