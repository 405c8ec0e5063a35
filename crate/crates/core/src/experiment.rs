//! Desk-scale comparison of training modes on a synthetic corpus.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adcore::RngStream;
use crate::augment::{build_neighbors, generate_pseudo_corpus, AugmentError, SwapPolicy};
use crate::corpus::{map_exophora_expressions, parse_word_vectors, preprocess, Corpus, CorpusError};
use crate::evaluation::{evaluate, EvalSet, MetricsRecord};
use crate::model::{init_params, pretrained_extra_words, ModelConfig, ModelError, Vocabularies};
use crate::synth::{generate, SynthConfig, SynthError};
use crate::training::{ScheduleConfig, TrainData, TrainError, TrainMode, Trainer};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error("run {mode} seed {seed} finished without a selected model")]
    NoModel { mode: TrainMode, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeskExperiment {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub augment: SwapPolicy,
    pub seeds: Vec<u64>,
    pub modes: Vec<TrainMode>,
}

impl Default for DeskExperiment {
    fn default() -> Self {
        let synth = SynthConfig::default();
        DeskExperiment {
            model: ModelConfig {
                word_dim: synth.embedding_dim,
                pos_dim: 4,
                dpos_dim: 4,
                infl_dim: 3,
                lstm_hidden: 32,
                encoder_layers: 1,
                path_hidden: 16,
                fnn_hidden: 64,
                validator_dim: synth.embedding_dim,
                validator_hidden: 64,
                ..Default::default()
            },
            schedule: ScheduleConfig {
                adversarial_epochs: 30,
                ..Default::default()
            },
            synth,
            augment: SwapPolicy::default(),
            seeds: (1..=5).collect(),
            modes: vec![TrainMode::Gen, TrainMode::GenAdv],
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub mode: TrainMode,
    pub seed: u64,
    pub best_epoch: usize,
    pub dev_zero_f1: f64,
    pub test: MetricsRecord,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct DeskReport {
    pub runs: Vec<RunResult>,
    pub seconds: f64,
}

impl DeskReport {
    pub fn zero_f1(&self, mode: TrainMode) -> Vec<f64> {
        self.runs.iter().filter(|r| r.mode == mode).map(|r| r.test.zero.overall.f1).collect()
    }

    pub fn median_zero_f1(&self, mode: TrainMode) -> Option<f64> {
        median(self.zero_f1(mode))
    }
}

pub fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 { xs[n / 2] } else { (xs[n / 2 - 1] + xs[n / 2]) / 2.0 })
}

struct Prepared {
    labeled: Corpus,
    pseudo: Option<Corpus>,
    raw: crate::corpus::RawCorpus,
    dev: Corpus,
    test: Corpus,
    vectors: crate::corpus::WordVectors,
}

impl DeskExperiment {
    /// Trains every (mode, seed) pair on one synthetic corpus, one thread
    /// per run, and scores each run's best dev model on the test split.
    pub fn run(&self) -> Result<DeskReport, ExperimentError> {
        let start = Instant::now();
        let out = generate(&self.synth)?;
        let clean = |c: Corpus| map_exophora_expressions(preprocess(c).0);
        let vectors = parse_word_vectors(&out.embeddings, self.synth.embedding_dim)?;
        let labeled = clean(out.labeled);
        let pseudo = if self.modes.contains(&TrainMode::GenAug) {
            let table = build_neighbors(&vectors, self.augment.neighbors)?;
            Some(generate_pseudo_corpus(&labeled, &table, &self.augment, self.synth.seed)?.0)
        } else {
            None
        };
        let p = Prepared {
            labeled,
            pseudo,
            raw: out.raw,
            dev: clean(out.dev),
            test: clean(out.test),
            vectors,
        };
        let runs = std::thread::scope(|scope| {
            let handles: Vec<_> = self
                .modes
                .iter()
                .flat_map(|&mode| self.seeds.iter().map(move |&seed| (mode, seed)))
                .map(|(mode, seed)| {
                    let p = &p;
                    scope.spawn(move || self.run_one(p, mode, seed))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("training thread panicked"))
                .collect::<Result<Vec<_>, _>>()
        })?;
        Ok(DeskReport {
            runs,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    fn run_one(&self, p: &Prepared, mode: TrainMode, seed: u64) -> Result<RunResult, ExperimentError> {
        let start = Instant::now();
        let mut labeled = p.labeled.clone();
        if mode == TrainMode::GenAug {
            labeled.sentences.extend(p.pseudo.iter().flat_map(|c| c.sentences.iter().cloned()));
        }
        let extra = pretrained_extra_words(&p.vectors, &[&p.dev, &p.test], &[&p.raw]);
        let vocabs = Vocabularies::build(&labeled, extra);
        let raw: &[crate::corpus::Sentence] = if mode.uses_raw() { &p.raw.sentences } else { &[] };
        let data = TrainData::new(&labeled.sentences, raw, Some(&p.dev.sentences), &vocabs)?;
        let (store, _) = init_params::<f32>(&self.model, &vocabs, Some(&p.vectors), &mut RngStream::derive(seed, "init"));
        let mut trainer = Trainer::new(self.model.clone(), self.schedule.clone(), mode, &data, store, seed)?;
        trainer.run()?;
        let best = trainer.state.best.as_ref().ok_or(ExperimentError::NoModel { mode, seed })?;
        let test = evaluate(&best.store, &self.model, &EvalSet::new(&p.test.sentences, &vocabs))?;
        log::info!(
            "{mode} seed {seed}: best epoch {}, test zero F1 {:.4}",
            best.epoch,
            test.zero.overall.f1
        );
        Ok(RunResult {
            mode,
            seed,
            best_epoch: best.epoch,
            dev_zero_f1: best.zero_f1,
            test,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}
