//! Losses, generator error labels and the pretrain / adversarial schedule.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adcore::{
    Adagrad, Adam, AdError, Axis, Checkpoint, CheckpointError, Gradients, Graph, Mode, NodeId, ParameterStore,
    RngPosition, RngStream, Tensor,
};
use crate::corpus::{AnnotatedSentence, Case, Vocab, CASES};
use crate::evaluation::{self, EvalSet, MetricsRecord};
use crate::generator::{self, argmax};
use crate::model::{EncodedSentence, ModelConfig, ModelError, Vocabularies};
use crate::scalar::Scalar;
use crate::validator;

pub const GENERATOR: &str = "gen";
pub const VALIDATOR: &str = "val";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub pretrain_generator_epochs: usize,
    pub pretrain_validator_epochs: usize,
    /// Epochs of the alternating phase, counted over the labeled corpus.
    pub adversarial_epochs: usize,
    /// Validator steps per cycle.
    pub k: usize,
    /// Supervised generator minibatches per cycle.
    pub l: usize,
    pub generator_batch: usize,
    pub validator_batch: usize,
    pub adam_lr: f64,
    pub adagrad_lr: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            pretrain_generator_epochs: 2,
            pretrain_validator_epochs: 1,
            adversarial_epochs: 20,
            k: 16,
            l: 4,
            generator_batch: 16,
            validator_batch: 1,
            adam_lr: 1e-3,
            adagrad_lr: 1e-2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainMode {
    /// Supervised generator only.
    #[serde(rename = "gen")]
    Gen,
    /// Supervised generator on the labeled corpus merged with pseudo data.
    #[serde(rename = "gen+aug")]
    GenAug,
    /// Pretraining followed by adversarial cycles over the raw corpus.
    #[serde(rename = "gen+adv")]
    GenAdv,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Gen => "gen",
            TrainMode::GenAug => "gen+aug",
            TrainMode::GenAdv => "gen+adv",
        }
    }

    pub fn uses_raw(self) -> bool {
        self == TrainMode::GenAdv
    }
}

impl FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gen" => Ok(TrainMode::Gen),
            "gen+aug" => Ok(TrainMode::GenAug),
            "gen+adv" => Ok(TrainMode::GenAdv),
            other => Err(format!("unknown mode `{other}` (expected gen, gen+aug or gen+adv)")),
        }
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("labeled corpus has {have} sentences, fewer than one minibatch of {need}")]
    TooFewLabeled { have: usize, need: usize },
    #[error("the adversarial phase needs a non-empty raw corpus")]
    EmptyRaw,
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("cannot resume: {0}")]
    Resume(String),
}

impl From<AdError> for TrainError {
    fn from(e: AdError) -> Self {
        TrainError::Model(e.into())
    }
}

/// An annotated sentence with gold candidate positions per predicate.
#[derive(Clone, Debug)]
pub struct LabeledExample {
    pub sentence: EncodedSentence,
    pub predicates: Vec<usize>,
    /// `gold[i][case]`: candidate position of the gold filler of
    /// `predicates[i]`.
    pub gold: Vec<[Option<usize>; 3]>,
}

impl LabeledExample {
    pub fn new(a: &AnnotatedSentence, vocabs: &Vocabularies) -> Result<Self, ModelError> {
        let sentence = EncodedSentence::new(&a.sentence, vocabs);
        let predicates = a.annotated_predicates();
        let mut gold = Vec::with_capacity(predicates.len());
        for &p in &predicates {
            let mut row = [None; 3];
            for case in CASES {
                if let Some(slot) = a.slot(p, case) {
                    let pos = sentence
                        .candidate_position(slot.filler)
                        .ok_or_else(|| ModelError::MissingCandidate {
                            predicate: p,
                            filler: slot.filler.code(),
                        })?;
                    row[case.index()] = Some(pos);
                }
            }
            gold.push(row);
        }
        Ok(LabeledExample {
            sentence,
            predicates,
            gold,
        })
    }

    pub fn slot_count(&self) -> usize {
        self.gold.iter().flatten().flatten().count()
    }
}

fn zero<T: Scalar>(g: &mut Graph<'_, T>) -> NodeId {
    g.constant(Tensor::scalar(T::zero()))
}

/// Mean of `-log p(gold)` over every slot of the batch.
pub fn loss_gen_supervised<T: Scalar>(
    g: &mut Graph<'_, T>,
    cfg: &ModelConfig,
    batch: &[&LabeledExample],
    mode: &mut Mode<'_>,
) -> Result<NodeId, ModelError> {
    let mut logs = Vec::new();
    for ex in batch {
        if ex.predicates.is_empty() {
            continue;
        }
        let outs = generator::forward(g, cfg, &ex.sentence, &ex.predicates, mode)?;
        for (out, gold) in outs.iter().zip(&ex.gold) {
            for case in CASES {
                if let Some(pos) = gold[case.index()] {
                    let p = g.slice_cols(out.probs[case.index()], pos, pos + 1)?;
                    logs.push(g.log(p)?);
                }
            }
        }
    }
    if logs.is_empty() {
        return Ok(zero(g));
    }
    let n = logs.len();
    let all = g.concat(&logs, Axis::Cols)?;
    let total = g.sum(all)?;
    Ok(g.scale(total, -1.0 / n as f64)?)
}

/// `q = 1` when the argmax candidate is the gold filler.
pub fn error_label<T: Scalar>(probs: &[T], gold: usize) -> u8 {
    u8::from(argmax(probs) == gold)
}

pub type ErrorLabels = BTreeMap<(usize, Case), u8>;

/// Error labels for every slot that has both a distribution and a gold
/// candidate position.
pub fn error_labels<T: Scalar>(
    distributions: &BTreeMap<(usize, Case), Vec<T>>,
    gold: &BTreeMap<(usize, Case), usize>,
) -> ErrorLabels {
    distributions
        .iter()
        .filter_map(|(key, probs)| gold.get(key).map(|&g| (*key, error_label(probs, g))))
        .collect()
}

/// Per-case binary cross-entropy of the validator against the generator's
/// error labels, summed over cases and averaged over predicates, then
/// averaged over the sentences of `batch`. The generator runs in eval mode
/// and must be frozen.
pub fn loss_validator<T: Scalar>(
    g: &mut Graph<'_, T>,
    cfg: &ModelConfig,
    vocab: &Vocab,
    batch: &[&LabeledExample],
    mode: &mut Mode<'_>,
) -> Result<NodeId, ModelError> {
    if !g.store().is_group_frozen(GENERATOR) {
        return Err(ModelError::NotFrozen(GENERATOR));
    }
    let mut per_sentence = Vec::new();
    for ex in batch {
        if ex.predicates.is_empty() {
            continue;
        }
        let outs = generator::forward(g, cfg, &ex.sentence, &ex.predicates, &mut Mode::Eval)?;
        let mut terms = Vec::with_capacity(outs.len());
        for (out, gold) in outs.iter().zip(&ex.gold) {
            let mut q = [T::zero(); 3];
            let mut not_q = [T::zero(); 3];
            for case in CASES {
                if let Some(pos) = gold[case.index()] {
                    let label = error_label(g.value(out.probs[case.index()]).data(), pos);
                    q[case.index()] = T::c(label as f64);
                    not_q[case.index()] = T::c(1.0 - label as f64);
                }
            }
            let s = validator::score_predicate(g, cfg, vocab, &ex.sentence, out, mode)?;
            let log_s = g.log(s)?;
            let one_minus = g.affine(s, -1.0, 1.0)?;
            let log_1s = g.log(one_minus)?;
            let qn = g.constant(Tensor::row(q.to_vec()));
            let nqn = g.constant(Tensor::row(not_q.to_vec()));
            let a = g.mul(qn, log_s)?;
            let b = g.mul(nqn, log_1s)?;
            terms.push(g.add(a, b)?);
        }
        let n = terms.len();
        let all = g.concat(&terms, Axis::Rows)?;
        let total = g.sum(all)?;
        per_sentence.push(g.scale(total, -1.0 / n as f64)?);
    }
    if per_sentence.is_empty() {
        return Ok(zero(g));
    }
    let n = per_sentence.len();
    let all = g.concat(&per_sentence, Axis::Cols)?;
    let total = g.sum(all)?;
    Ok(g.scale(total, 1.0 / n as f64)?)
}

/// Mean of `-log s'` over every predicate and case of the batch. The
/// validator runs in eval mode and must be frozen.
pub fn loss_gen_unsupervised<T: Scalar>(
    g: &mut Graph<'_, T>,
    cfg: &ModelConfig,
    vocab: &Vocab,
    batch: &[&EncodedSentence],
    mode: &mut Mode<'_>,
) -> Result<NodeId, ModelError> {
    if !g.store().is_group_frozen(VALIDATOR) {
        return Err(ModelError::NotFrozen(VALIDATOR));
    }
    let mut logs = Vec::new();
    for s in batch {
        let preds = s.predicates();
        if preds.is_empty() {
            continue;
        }
        for out in generator::forward(g, cfg, s, &preds, mode)? {
            let v = validator::score_predicate(g, cfg, vocab, s, &out, &mut Mode::Eval)?;
            logs.push(g.log(v)?);
        }
    }
    if logs.is_empty() {
        return Ok(zero(g));
    }
    let n = 3 * logs.len();
    let all = g.concat(&logs, Axis::Cols)?;
    let total = g.sum(all)?;
    Ok(g.scale(total, -1.0 / n as f64)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Phase A: supervised generator with Adam.
    PretrainGenerator,
    /// Phase B: validator with Adam, generator frozen.
    PretrainValidator,
    /// Phase C: unsupervised, validator and supervised steps with Adagrad.
    Adversarial,
    /// Supervised-only continuation with Adagrad (baselines).
    Supervised,
    Done,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::PretrainGenerator => "pretrain-generator",
            Phase::PretrainValidator => "pretrain-validator",
            Phase::Adversarial => "adversarial",
            Phase::Supervised => "supervised",
            Phase::Done => "done",
        }
    }
}

/// Sentences consumed so far, per phase and step kind.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub pretrain_generator: usize,
    pub pretrain_validator: usize,
    /// Raw sentences read by unsupervised generator steps.
    pub raw: usize,
    /// Labeled sentences read by validator steps after pretraining.
    pub validator: usize,
    /// Labeled sentences read by supervised steps after pretraining.
    pub supervised: usize,
    pub cycles: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    Supervised,
    Validator,
    Unsupervised,
}

/// Mean losses over the steps of one epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub generator_supervised: Option<f64>,
    pub validator: Option<f64>,
    pub generator_unsupervised: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub losses: LossSummary,
    /// Dev metrics; absent without a dev corpus.
    pub dev: Option<MetricsRecord>,
}

/// Index stream over a corpus, reshuffled whenever it wraps.
#[derive(Clone, Debug)]
struct Cursor {
    order: Vec<usize>,
    pos: usize,
    rng: RngStream,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CursorSnapshot {
    order: Vec<usize>,
    pos: usize,
    rng: RngPosition,
}

impl Cursor {
    fn new(n: usize, mut rng: RngStream) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        Cursor { order, pos: 0, rng }
    }

    fn take(&mut self, k: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos == self.order.len() {
                self.rng.shuffle(&mut self.order);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }

    fn snapshot(&self) -> CursorSnapshot {
        CursorSnapshot {
            order: self.order.clone(),
            pos: self.pos,
            rng: self.rng.position(),
        }
    }

    fn restore(s: CursorSnapshot) -> Self {
        Cursor {
            order: s.order,
            pos: s.pos,
            rng: RngStream::restore(s.rng),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
struct LossAccumulator {
    sums: [f64; 3],
    counts: [usize; 3],
}

impl LossAccumulator {
    fn add(&mut self, kind: StepKind, v: f64) {
        let i = kind as usize;
        self.sums[i] += v;
        self.counts[i] += 1;
    }

    fn summary(&self) -> LossSummary {
        let mean = |i: usize| (self.counts[i] > 0).then(|| self.sums[i] / self.counts[i] as f64);
        LossSummary {
            generator_supervised: mean(StepKind::Supervised as usize),
            validator: mean(StepKind::Validator as usize),
            generator_unsupervised: mean(StepKind::Unsupervised as usize),
        }
    }
}

/// Best dev checkpoint so far.
#[derive(Clone, Debug)]
pub struct BestModel<T> {
    pub epoch: usize,
    pub zero_f1: f64,
    pub store: ParameterStore<T>,
}

/// Everything needed to continue a run.
#[derive(Clone, Debug)]
pub struct TrainState<T> {
    pub store: ParameterStore<T>,
    pub phase: Phase,
    /// Completed epochs within the current phase.
    pub phase_epoch: usize,
    /// Completed steps within the current epoch.
    pub epoch_step: usize,
    /// Completed epochs over all phases.
    pub epoch: usize,
    pub counters: Counters,
    pub history: Vec<EpochRecord>,
    pub best: Option<BestModel<T>>,
    labeled: Cursor,
    validator: Cursor,
    raw: Cursor,
    dropout: RngStream,
    losses: LossAccumulator,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    phase: Phase,
    phase_epoch: usize,
    epoch_step: usize,
    epoch: usize,
    counters: Counters,
    history: Vec<EpochRecord>,
    best: Option<(usize, f64)>,
    labeled: CursorSnapshot,
    validator: CursorSnapshot,
    raw: CursorSnapshot,
    dropout: RngPosition,
    losses: LossAccumulator,
}

/// Corpora prepared for training.
pub struct TrainData<'c> {
    pub labeled: Vec<LabeledExample>,
    pub raw: Vec<EncodedSentence>,
    pub dev: Option<EvalSet<'c>>,
    pub vocab: Vocab,
}

impl<'c> TrainData<'c> {
    pub fn new(
        labeled: &[AnnotatedSentence],
        raw: &[crate::corpus::Sentence],
        dev: Option<&'c [AnnotatedSentence]>,
        vocabs: &Vocabularies,
    ) -> Result<Self, ModelError> {
        Ok(TrainData {
            labeled: labeled
                .iter()
                .map(|a| LabeledExample::new(a, vocabs))
                .collect::<Result<_, _>>()?,
            raw: raw.iter().map(|s| EncodedSentence::new(s, vocabs)).collect(),
            dev: dev.map(|d| EvalSet::new(d, vocabs)),
            vocab: vocabs.word.clone(),
        })
    }
}

pub type Observer<'o, T> = dyn FnMut(StepKind, &ParameterStore<T>, &ParameterStore<T>) + 'o;

/// Runs the training schedule one step at a time.
pub struct Trainer<'d, T> {
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub mode: TrainMode,
    data: &'d TrainData<'d>,
    pub state: TrainState<T>,
}

impl<'d, T: Scalar> Trainer<'d, T> {
    pub fn new(
        model: ModelConfig,
        schedule: ScheduleConfig,
        mode: TrainMode,
        data: &'d TrainData<'d>,
        store: ParameterStore<T>,
        seed: u64,
    ) -> Result<Self, TrainError> {
        Self::check(&schedule, mode, data)?;
        let state = TrainState {
            store,
            phase: Phase::PretrainGenerator,
            phase_epoch: 0,
            epoch_step: 0,
            epoch: 0,
            counters: Counters::default(),
            history: Vec::new(),
            best: None,
            labeled: Cursor::new(data.labeled.len(), RngStream::derive(seed, "shuffle.labeled")),
            validator: Cursor::new(data.labeled.len(), RngStream::derive(seed, "shuffle.validator")),
            raw: Cursor::new(data.raw.len(), RngStream::derive(seed, "shuffle.raw")),
            dropout: RngStream::derive(seed, "dropout"),
            losses: LossAccumulator::default(),
        };
        let mut t = Trainer {
            model,
            schedule,
            mode,
            data,
            state,
        };
        t.skip_empty_phases();
        Ok(t)
    }

    fn check(schedule: &ScheduleConfig, mode: TrainMode, data: &TrainData<'_>) -> Result<(), TrainError> {
        if schedule.generator_batch == 0 || schedule.validator_batch == 0 {
            return Err(TrainError::Schedule("minibatch sizes must be positive".into()));
        }
        if schedule.l == 0 {
            return Err(TrainError::Schedule("l must be positive".into()));
        }
        if data.labeled.len() < schedule.generator_batch {
            return Err(TrainError::TooFewLabeled {
                have: data.labeled.len(),
                need: schedule.generator_batch,
            });
        }
        if mode.uses_raw() && schedule.adversarial_epochs > 0 && data.raw.is_empty() {
            return Err(TrainError::EmptyRaw);
        }
        Ok(())
    }

    pub fn data(&self) -> &TrainData<'d> {
        self.data
    }

    fn phase_epochs(&self, phase: Phase) -> usize {
        match (phase, self.mode) {
            (Phase::PretrainGenerator, _) => self.schedule.pretrain_generator_epochs,
            (Phase::PretrainValidator, TrainMode::GenAdv) => self.schedule.pretrain_validator_epochs,
            (Phase::Adversarial, TrainMode::GenAdv) => self.schedule.adversarial_epochs,
            (Phase::Supervised, TrainMode::Gen | TrainMode::GenAug) => self.schedule.adversarial_epochs,
            _ => 0,
        }
    }

    fn next_phase(phase: Phase) -> Phase {
        match phase {
            Phase::PretrainGenerator => Phase::PretrainValidator,
            Phase::PretrainValidator => Phase::Adversarial,
            Phase::Adversarial => Phase::Supervised,
            Phase::Supervised | Phase::Done => Phase::Done,
        }
    }

    fn skip_empty_phases(&mut self) {
        while self.state.phase != Phase::Done && self.phase_epochs(self.state.phase) == 0 {
            self.state.phase = Self::next_phase(self.state.phase);
        }
    }

    /// Steps per epoch of `phase`: generator minibatches, validator
    /// minibatches or cycles.
    pub fn steps_per_epoch(&self, phase: Phase) -> usize {
        let n = self.data.labeled.len();
        let s = &self.schedule;
        match phase {
            Phase::PretrainGenerator => n.div_ceil(s.generator_batch),
            Phase::PretrainValidator => n.div_ceil(s.validator_batch),
            Phase::Adversarial | Phase::Supervised => n.div_ceil(s.l * s.generator_batch),
            Phase::Done => 0,
        }
    }

    pub fn is_done(&self) -> bool {
        self.state.phase == Phase::Done
    }

    pub fn run(&mut self) -> Result<(), TrainError> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(())
    }

    /// Runs until `stop` holds or the schedule ends.
    pub fn run_until(&mut self, mut stop: impl FnMut(&TrainState<T>) -> bool) -> Result<(), TrainError> {
        while !self.is_done() && !stop(&self.state) {
            self.step()?;
        }
        Ok(())
    }

    pub fn step(&mut self) -> Result<(), TrainError> {
        self.step_observed(None)
    }

    /// One step of the current phase. `observer` sees the store before and
    /// after every parameter update.
    pub fn step_observed(&mut self, mut observer: Option<&mut Observer<'_, T>>) -> Result<(), TrainError> {
        match self.state.phase {
            Phase::Done => return Ok(()),
            Phase::PretrainGenerator => {
                self.supervised_step(false, &mut observer)?;
                self.state.counters.pretrain_generator += self.schedule.generator_batch;
            }
            Phase::PretrainValidator => {
                self.validator_step(false, &mut observer)?;
                self.state.counters.pretrain_validator += self.schedule.validator_batch;
            }
            Phase::Adversarial => {
                self.unsupervised_step(&mut observer)?;
                self.state.counters.raw += self.schedule.generator_batch;
                for _ in 0..self.schedule.k {
                    self.validator_step(true, &mut observer)?;
                    self.state.counters.validator += self.schedule.validator_batch;
                }
                for _ in 0..self.schedule.l {
                    self.supervised_step(true, &mut observer)?;
                    self.state.counters.supervised += self.schedule.generator_batch;
                }
                self.state.counters.cycles += 1;
            }
            Phase::Supervised => {
                for _ in 0..self.schedule.l {
                    self.supervised_step(true, &mut observer)?;
                    self.state.counters.supervised += self.schedule.generator_batch;
                }
                self.state.counters.cycles += 1;
            }
        }
        self.state.epoch_step += 1;
        if self.state.epoch_step == self.steps_per_epoch(self.state.phase) {
            self.end_epoch()?;
        }
        Ok(())
    }

    fn train_group(&mut self, group: &str) {
        let other = if group == GENERATOR { VALIDATOR } else { GENERATOR };
        self.state.store.unfreeze(group);
        self.state.store.freeze(other);
    }

    fn apply(
        &mut self,
        kind: StepKind,
        adagrad: bool,
        grads: Gradients<T>,
        observer: &mut Option<&mut Observer<'_, T>>,
    ) -> Result<(), TrainError> {
        let before = observer.as_ref().map(|_| self.state.store.clone());
        if adagrad {
            Adagrad::new(self.schedule.adagrad_lr).step(&mut self.state.store, &grads)?;
        } else {
            Adam::new(self.schedule.adam_lr).step(&mut self.state.store, &grads)?;
        }
        if let (Some(obs), Some(before)) = (observer.as_mut(), before) {
            obs(kind, &before, &self.state.store);
        }
        Ok(())
    }

    fn supervised_step(&mut self, adagrad: bool, observer: &mut Option<&mut Observer<'_, T>>) -> Result<(), TrainError> {
        self.train_group(GENERATOR);
        let idx = self.state.labeled.take(self.schedule.generator_batch);
        let batch: Vec<&LabeledExample> = idx.iter().map(|&i| &self.data.labeled[i]).collect();
        let (loss, grads) = {
            let st = &mut self.state;
            let mut g = Graph::new(&st.store);
            let mut mode = Mode::Train(&mut st.dropout);
            let l = loss_gen_supervised(&mut g, &self.model, &batch, &mut mode)?;
            (g.value(l).data()[0].as_f64(), g.backward(l)?)
        };
        self.state.losses.add(StepKind::Supervised, loss);
        self.apply(StepKind::Supervised, adagrad, grads, observer)
    }

    fn validator_step(&mut self, adagrad: bool, observer: &mut Option<&mut Observer<'_, T>>) -> Result<(), TrainError> {
        self.train_group(VALIDATOR);
        let idx = self.state.validator.take(self.schedule.validator_batch);
        let batch: Vec<&LabeledExample> = idx.iter().map(|&i| &self.data.labeled[i]).collect();
        let (loss, grads) = {
            let st = &mut self.state;
            let mut g = Graph::new(&st.store);
            let mut mode = Mode::Train(&mut st.dropout);
            let l = loss_validator(&mut g, &self.model, &self.data.vocab, &batch, &mut mode)?;
            (g.value(l).data()[0].as_f64(), g.backward(l)?)
        };
        self.state.losses.add(StepKind::Validator, loss);
        self.apply(StepKind::Validator, adagrad, grads, observer)
    }

    fn unsupervised_step(&mut self, observer: &mut Option<&mut Observer<'_, T>>) -> Result<(), TrainError> {
        self.train_group(GENERATOR);
        self.state.store.freeze(VALIDATOR);
        let idx = self.state.raw.take(self.schedule.generator_batch);
        let batch: Vec<&EncodedSentence> = idx.iter().map(|&i| &self.data.raw[i]).collect();
        let (loss, grads) = {
            let st = &mut self.state;
            let mut g = Graph::new(&st.store);
            let mut mode = Mode::Train(&mut st.dropout);
            let l = loss_gen_unsupervised(&mut g, &self.model, &self.data.vocab, &batch, &mut mode)?;
            (g.value(l).data()[0].as_f64(), g.backward(l)?)
        };
        self.state.losses.add(StepKind::Unsupervised, loss);
        self.apply(StepKind::Unsupervised, true, grads, observer)
    }

    fn end_epoch(&mut self) -> Result<(), TrainError> {
        let st = &mut self.state;
        st.epoch += 1;
        st.phase_epoch += 1;
        st.epoch_step = 0;
        let dev = match &self.data.dev {
            Some(set) => {
                let mut m = evaluation::evaluate(&st.store, &self.model, set)?;
                if self.mode == TrainMode::GenAdv && st.counters.pretrain_validator > 0 {
                    m.val_scores = Some(evaluation::monitor_validator(
                        &st.store,
                        &self.model,
                        &self.data.vocab,
                        &set.encoded,
                    )?);
                }
                Some(m)
            }
            None => None,
        };
        let zero_f1 = dev.map(|m| m.zero.overall.f1).unwrap_or(0.0);
        let improved = match &st.best {
            None => true,
            Some(b) => dev.is_some() && zero_f1 > b.zero_f1,
        };
        if improved || dev.is_none() {
            st.best = Some(BestModel {
                epoch: st.epoch,
                zero_f1,
                store: st.store.clone(),
            });
        }
        st.history.push(EpochRecord {
            epoch: st.epoch,
            phase: st.phase,
            losses: st.losses.summary(),
            dev,
        });
        log::info!(
            "epoch {} ({}): zero F1 {:.4}",
            st.epoch,
            st.phase.name(),
            zero_f1
        );
        st.losses = LossAccumulator::default();
        if self.state.phase_epoch == self.phase_epochs(self.state.phase) {
            self.state.phase = Self::next_phase(self.state.phase);
            self.state.phase_epoch = 0;
            self.skip_empty_phases();
        }
        Ok(())
    }

    /// Serializes the full state, including optimizer moments, cursors and
    /// random stream positions.
    pub fn checkpoint(&self) -> Result<Checkpoint<T>, TrainError> {
        let st = &self.state;
        let mut c = Checkpoint::new();
        c.put_store("state", &st.store)?;
        if let Some(b) = &st.best {
            c.put_store("best", &b.store)?;
        }
        let meta = StateMeta {
            phase: st.phase,
            phase_epoch: st.phase_epoch,
            epoch_step: st.epoch_step,
            epoch: st.epoch,
            counters: st.counters.clone(),
            history: st.history.clone(),
            best: st.best.as_ref().map(|b| (b.epoch, b.zero_f1)),
            labeled: st.labeled.snapshot(),
            validator: st.validator.snapshot(),
            raw: st.raw.snapshot(),
            dropout: st.dropout.position(),
            losses: st.losses,
        };
        c.set_meta("train_state", &meta)?;
        c.set_meta("train_mode", &self.mode)?;
        c.set_meta("schedule", &self.schedule)?;
        c.set_meta("model", &self.model)?;
        Ok(c)
    }

    pub fn resume(data: &'d TrainData<'d>, c: &Checkpoint<T>) -> Result<Self, TrainError> {
        let need = |key: &str| TrainError::Resume(format!("checkpoint has no `{key}` entry"));
        let meta: StateMeta = c.get_meta("train_state")?.ok_or_else(|| need("train_state"))?;
        let mode: TrainMode = c.get_meta("train_mode")?.ok_or_else(|| need("train_mode"))?;
        let schedule: ScheduleConfig = c.get_meta("schedule")?.ok_or_else(|| need("schedule"))?;
        let model: ModelConfig = c.get_meta("model")?.ok_or_else(|| need("model"))?;
        Self::check(&schedule, mode, data)?;
        if meta.labeled.order.len() != data.labeled.len() || meta.raw.order.len() != data.raw.len() {
            return Err(TrainError::Resume("corpus sizes differ from the checkpointed run".into()));
        }
        let best = match meta.best {
            Some((epoch, zero_f1)) => Some(BestModel {
                epoch,
                zero_f1,
                store: c.take_store("best")?,
            }),
            None => None,
        };
        let state = TrainState {
            store: c.take_store("state")?,
            phase: meta.phase,
            phase_epoch: meta.phase_epoch,
            epoch_step: meta.epoch_step,
            epoch: meta.epoch,
            counters: meta.counters,
            history: meta.history,
            best,
            labeled: Cursor::restore(meta.labeled),
            validator: Cursor::restore(meta.validator),
            raw: Cursor::restore(meta.raw),
            dropout: RngStream::restore(meta.dropout),
            losses: meta.losses,
        };
        Ok(Trainer {
            model,
            schedule,
            mode,
            data,
            state,
        })
    }
}

/// Distributions of every annotated slot in eval mode, keyed by
/// (predicate, case).
pub fn slot_distributions<T: Scalar>(
    store: &ParameterStore<T>,
    cfg: &ModelConfig,
    ex: &LabeledExample,
) -> Result<BTreeMap<(usize, Case), Vec<T>>, ModelError> {
    let mut g = Graph::new(store);
    let mut out = BTreeMap::new();
    for po in generator::forward(&mut g, cfg, &ex.sentence, &ex.predicates, &mut Mode::Eval)? {
        for case in CASES {
            out.insert((po.predicate, case), g.value(po.probs[case.index()]).data().to_vec());
        }
    }
    Ok(out)
}

/// Gold candidate positions keyed by (predicate, case).
pub fn gold_positions(ex: &LabeledExample) -> BTreeMap<(usize, Case), usize> {
    let mut out = BTreeMap::new();
    for (&p, row) in ex.predicates.iter().zip(&ex.gold) {
        for case in CASES {
            if let Some(pos) = row[case.index()] {
                out.insert((p, case), pos);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_annotated_str, Corpus};
    use crate::model::init_params;
    use crate::synth::{generate, SynthConfig};

    const ONE_ARG: &str = "0\t本\t名詞\t*\t*\t1\t_\t_\t_\t_\t_\t_\t_\n\
1\t読んだ\t動詞\t*\t*\t-1\tY\tA\t0\tN\tEXO\tCASE\tNULL\n";

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            word_dim: 4,
            pos_dim: 2,
            dpos_dim: 2,
            infl_dim: 2,
            lstm_hidden: 3,
            encoder_layers: 1,
            path_hidden: 2,
            fnn_hidden: 4,
            validator_dim: 3,
            validator_hidden: 4,
            ..Default::default()
        }
    }

    fn one_arg() -> (ModelConfig, LabeledExample, ParameterStore<f64>) {
        let c = parse_annotated_str(ONE_ARG).unwrap();
        let v = Vocabularies::build(&c, []);
        let cfg = tiny_model();
        let (store, _) = init_params::<f64>(&cfg, &v, None, &mut RngStream::new(1));
        (cfg, LabeledExample::new(&c.sentences[0], &v).unwrap(), store)
    }

    fn zero_out(store: &mut ParameterStore<f64>, names: &[&str]) {
        for n in names {
            store.get_mut(n).unwrap().data_mut().fill(0.0);
        }
    }

    fn value(store: &ParameterStore<f64>, build: impl FnOnce(&mut Graph<'_, f64>) -> NodeId) -> f64 {
        let mut g = Graph::new(store);
        let l = build(&mut g);
        g.value(l).data()[0]
    }

    #[test]
    fn uniform_over_four_candidates_costs_ln4() {
        let (cfg, ex, mut store) = one_arg();
        assert_eq!(ex.sentence.candidate_count(), 4);
        for c in ["nom", "acc", "dat"] {
            zero_out(&mut store, &[&format!("gen.fnn.{c}.w2")]);
        }
        let l = value(&store, |g| loss_gen_supervised(g, &cfg, &[&ex], &mut Mode::Eval).unwrap());
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_prediction_costs_nothing() {
        let (cfg, mut ex, mut store) = one_arg();
        // only the NOM slot, gold = NULL candidate
        ex.gold = vec![[Some(3), None, None]];
        zero_out(
            &mut store,
            &["gen.path.fw.wx", "gen.path.fw.wh", "gen.path.fw.b", "gen.path.bw.wx", "gen.path.bw.wh", "gen.path.bw.b"],
        );
        zero_out(&mut store, &["gen.pathconst.author", "gen.pathconst.reader", "gen.fnn.nom.w1", "gen.fnn.nom.w2"]);
        store.get_mut("gen.pathconst.null").unwrap().data_mut().fill(0.0);
        store.get_mut("gen.pathconst.null").unwrap().data_mut()[0] = 1.0;
        let path_row = 2 * cfg.encoder_output_dim();
        let w1 = store.get_mut("gen.fnn.nom.w1").unwrap();
        let cols = w1.cols();
        w1.data_mut()[path_row * cols] = 1.0;
        store.get_mut("gen.fnn.nom.w2").unwrap().data_mut()[0] = 100.0;
        let l = value(&store, |g| loss_gen_supervised(g, &cfg, &[&ex], &mut Mode::Eval).unwrap());
        assert!((0.0..=1e-6).contains(&l), "{l}");
    }

    #[test]
    fn gold_outside_candidates_is_an_error() {
        let mut c = parse_annotated_str(ONE_ARG).unwrap();
        let v = Vocabularies::build(&c, []);
        c.sentences[0].slots.get_mut(&(1, Case::Nom)).unwrap().filler = crate::corpus::Filler::Token(1);
        assert!(matches!(
            LabeledExample::new(&c.sentences[0], &v),
            Err(ModelError::MissingCandidate { predicate: 1, .. })
        ));
    }

    #[test]
    fn neutral_validator_costs_ln2_per_case() {
        let (cfg, ex, mut store) = one_arg();
        zero_out(&mut store, &["val.fnn.w2", "val.fnn.b2"]);
        store.freeze(GENERATOR);
        let vocab = Vocab::words();
        let lv = value(&store, |g| loss_validator(g, &cfg, &vocab, &[&ex], &mut Mode::Eval).unwrap());
        assert!((lv - 3.0 * 2f64.ln()).abs() < 1e-12);
        store.unfreeze(GENERATOR);
        store.freeze(VALIDATOR);
        let lu = value(&store, |g| {
            loss_gen_unsupervised(g, &cfg, &vocab, &[&ex.sentence], &mut Mode::Eval).unwrap()
        });
        assert!((lu - 2f64.ln()).abs() < 1e-12);
        store.get_mut("val.fnn.b2").unwrap().data_mut().fill(40.0);
        let lu = value(&store, |g| {
            loss_gen_unsupervised(g, &cfg, &vocab, &[&ex.sentence], &mut Mode::Eval).unwrap()
        });
        assert_eq!(lu, 0.0);
    }

    #[test]
    fn losses_require_the_other_network_frozen() {
        let (cfg, ex, store) = one_arg();
        let vocab = Vocab::words();
        let mut g = Graph::new(&store);
        assert_eq!(
            loss_validator(&mut g, &cfg, &vocab, &[&ex], &mut Mode::Eval).unwrap_err(),
            ModelError::NotFrozen(GENERATOR)
        );
        assert_eq!(
            loss_gen_unsupervised(&mut g, &cfg, &vocab, &[&ex.sentence], &mut Mode::Eval).unwrap_err(),
            ModelError::NotFrozen(VALIDATOR)
        );
    }

    #[test]
    fn error_label_examples() {
        assert_eq!(error_label(&[0.1, 0.7, 0.2], 1), 1);
        assert_eq!(error_label(&[0.1, 0.7, 0.2], 2), 0);
        // gold NULL at the last position, argmax on NULL
        assert_eq!(error_label(&[0.1, 0.2, 0.1, 0.6], 3), 1);
        let mut d = BTreeMap::new();
        d.insert((2, Case::Nom), vec![0.5, 0.5]);
        d.insert((2, Case::Acc), vec![0.2, 0.8]);
        let mut gold = BTreeMap::new();
        gold.insert((2, Case::Nom), 1);
        gold.insert((2, Case::Acc), 1);
        let q = error_labels(&d, &gold);
        assert_eq!(q[&(2, Case::Nom)], 0);
        assert_eq!(q[&(2, Case::Acc)], 1);
    }

    #[test]
    fn unsupervised_step_descends() {
        let out = generate(&SynthConfig {
            labeled: 4,
            raw: 4,
            dev: 0,
            test: 0,
            ..Default::default()
        })
        .unwrap();
        let v = Vocabularies::build(&out.labeled, []);
        let cfg = ModelConfig {
            generator_dropout: false,
            ..tiny_model()
        };
        let (mut store, _) = init_params::<f64>(&cfg, &v, None, &mut RngStream::new(4));
        store.freeze(VALIDATOR);
        let batch: Vec<EncodedSentence> = out.raw.sentences.iter().map(|s| EncodedSentence::new(s, &v)).collect();
        let refs: Vec<&EncodedSentence> = batch.iter().collect();
        let eval = |s: &ParameterStore<f64>| {
            let mut g = Graph::new(s);
            let l = loss_gen_unsupervised(&mut g, &cfg, &v.word, &refs, &mut Mode::Eval).unwrap();
            (g.value(l).data()[0], g.backward(l).unwrap())
        };
        let (before, grads) = eval(&store);
        let descended = [1e-2, 1e-3, 1e-4, 1e-5].iter().any(|&lr| {
            let mut s = store.clone();
            Adagrad::new(lr).step(&mut s, &grads).unwrap();
            eval(&s).0 < before
        });
        assert!(descended);
    }

    struct Setup {
        vocabs: Vocabularies,
        labeled: Corpus,
        raw: Vec<crate::corpus::Sentence>,
        dev: Corpus,
    }

    fn setup() -> Setup {
        let out = generate(&SynthConfig {
            labeled: 40,
            raw: 40,
            dev: 8,
            test: 0,
            ..Default::default()
        })
        .unwrap();
        Setup {
            vocabs: Vocabularies::build(&out.labeled, []),
            labeled: out.labeled,
            raw: out.raw.sentences,
            dev: out.dev,
        }
    }

    fn schedule() -> ScheduleConfig {
        ScheduleConfig {
            pretrain_generator_epochs: 1,
            pretrain_validator_epochs: 1,
            adversarial_epochs: 1,
            ..Default::default()
        }
    }

    fn trainer<'d>(data: &'d TrainData<'d>, s: &Setup, mode: TrainMode, seed: u64) -> Trainer<'d, f64> {
        let (store, _) = init_params::<f64>(&tiny_model(), &s.vocabs, None, &mut RngStream::new(seed));
        Trainer::new(tiny_model(), schedule(), mode, data, store, seed).unwrap()
    }

    #[test]
    fn one_cycle_consumes_16_16_64() {
        let s = setup();
        let data = TrainData::new(&s.labeled.sentences, &s.raw, None, &s.vocabs).unwrap();
        let mut t = trainer(&data, &s, TrainMode::GenAdv, 1);
        t.run_until(|st| st.phase == Phase::Adversarial).unwrap();
        assert_eq!(t.state.counters.pretrain_generator, 48);
        assert_eq!(t.state.counters.pretrain_validator, 40);
        t.step().unwrap();
        let c = &t.state.counters;
        assert_eq!((c.raw, c.validator, c.supervised, c.cycles), (16, 16, 64, 1));
    }

    #[test]
    fn validator_pretraining_leaves_generator_untouched() {
        let s = setup();
        let data = TrainData::new(&s.labeled.sentences, &s.raw, None, &s.vocabs).unwrap();
        let mut t = trainer(&data, &s, TrainMode::GenAdv, 2);
        t.run_until(|st| st.phase == Phase::PretrainValidator).unwrap();
        let before = t.state.store.clone();
        t.run_until(|st| st.phase != Phase::PretrainValidator).unwrap();
        assert!(t.state.store.group_bit_eq(&before, GENERATOR));
        assert!(!t.state.store.group_bit_eq(&before, VALIDATOR));
    }

    #[test]
    fn supervised_mode_never_reads_raw() {
        let s = setup();
        let data = TrainData::new(&s.labeled.sentences, &s.raw, Some(&s.dev.sentences), &s.vocabs).unwrap();
        let mut t = trainer(&data, &s, TrainMode::Gen, 3);
        t.run().unwrap();
        assert_eq!(t.state.counters.raw, 0);
        assert_eq!(t.state.counters.pretrain_validator, 0);
        let phases: Vec<Phase> = t.state.history.iter().map(|r| r.phase).collect();
        assert_eq!(phases, vec![Phase::PretrainGenerator, Phase::Supervised]);
    }

    #[test]
    fn empty_raw_or_small_labeled_is_rejected() {
        let s = setup();
        let data = TrainData::new(&s.labeled.sentences, &[], None, &s.vocabs).unwrap();
        let (store, _) = init_params::<f64>(&tiny_model(), &s.vocabs, None, &mut RngStream::new(0));
        assert!(matches!(
            Trainer::new(tiny_model(), schedule(), TrainMode::GenAdv, &data, store.clone(), 0),
            Err(TrainError::EmptyRaw)
        ));
        let few = TrainData::new(&s.labeled.sentences[..5], &s.raw, None, &s.vocabs).unwrap();
        assert!(matches!(
            Trainer::new(tiny_model(), schedule(), TrainMode::Gen, &few, store, 0),
            Err(TrainError::TooFewLabeled { have: 5, need: 16 })
        ));
    }

    #[test]
    fn same_seed_same_history_and_resume_is_exact() {
        let s = setup();
        let data = TrainData::new(&s.labeled.sentences, &s.raw, Some(&s.dev.sentences), &s.vocabs).unwrap();
        let mut a = trainer(&data, &s, TrainMode::GenAdv, 7);
        a.run().unwrap();
        let mut b = trainer(&data, &s, TrainMode::GenAdv, 7);
        b.run_until(|st| st.phase == Phase::Adversarial && st.epoch_step == 1).unwrap();
        let bytes = b.checkpoint().unwrap().to_bytes().unwrap();
        let mut c = Trainer::<f64>::resume(&data, &Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        c.run().unwrap();
        b.run().unwrap();
        assert_eq!(a.state.history, b.state.history);
        assert_eq!(a.state.history, c.state.history);
        assert!(a.state.store.bit_eq(&c.state.store));
        assert_eq!(a.state.counters, c.state.counters);
        assert!(a.state.history.iter().any(|r| r.dev.unwrap().val_scores.is_some()));
    }
}
