//! Micro-averaged precision, recall and F1 for case analysis and zero
//! anaphora resolution, plus validator score monitoring.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::adcore::{Graph, Mode, ParameterStore};
use crate::corpus::{relation, AnnotatedSentence, Case, Category, Filler, Relation, Sentence, Vocab, CASES};
use crate::generator::{self, Prediction};
use crate::model::{EncodedSentence, ModelConfig, ModelError};
use crate::scalar::Scalar;
use crate::validator;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    /// Direct dependents with a hidden case marker.
    Case,
    /// Non-dependents and exophora.
    Zero,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Case => "case",
            Task::Zero => "zero",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlotJudgement {
    pub predicate: usize,
    pub case: Case,
    pub gold: Filler,
    pub aliases: Vec<Filler>,
    pub predicted: Filler,
    pub category: Category,
    /// `None` when neither gold nor prediction names a filler.
    pub task: Option<Task>,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

/// Task a false positive on a gold-NULL slot counts toward: direct
/// dependents go to case analysis, everything else to zero anaphora.
pub fn false_positive_task(sentence: &Sentence, predicate: usize, predicted: Filler) -> Task {
    match relation(sentence, predicate, predicted) {
        Relation::Dependent => Task::Case,
        _ => Task::Zero,
    }
}

fn gold_task(category: Category) -> Option<Task> {
    match category {
        Category::Case => Some(Task::Case),
        Category::Zero | Category::Exo => Some(Task::Zero),
        Category::Overt | Category::Null => None,
    }
}

/// Confusion counts for one non-OVERT slot.
pub fn judge(
    sentence: &Sentence,
    predicate: usize,
    slot: &crate::corpus::GoldSlot,
    predicted: Filler,
) -> SlotJudgement {
    let (task, tp, fp, fn_) = match (slot.filler.is_null(), predicted.is_null()) {
        (false, false) if slot.accepts(predicted) => (gold_task(slot.category), 1, 0, 0),
        (false, false) => (gold_task(slot.category), 0, 1, 1),
        (false, true) => (gold_task(slot.category), 0, 0, 1),
        (true, false) => (Some(false_positive_task(sentence, predicate, predicted)), 0, 1, 0),
        (true, true) => (None, 0, 0, 0),
    };
    SlotJudgement {
        predicate,
        case: slot.case,
        gold: slot.filler,
        aliases: slot.alias_set(),
        predicted,
        category: slot.category,
        task,
        tp,
        fp,
        fn_,
    }
}

/// Judgements for every non-OVERT gold slot of a sentence. Missing
/// predictions count as NULL.
pub fn judge_sentence(a: &AnnotatedSentence, prediction: &Prediction) -> Vec<SlotJudgement> {
    a.slots
        .iter()
        .filter(|(_, slot)| slot.category != Category::Overt)
        .map(|(&(p, case), slot)| {
            let predicted = prediction.get(&(p, case)).copied().unwrap_or(Filler::Null);
            judge(&a.sentence, p, slot, predicted)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Prf {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    /// Indexed by `Case::index`.
    pub per_case: [Prf; 3],
    pub overall: Prf,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub case: TaskMetrics,
    pub zero: TaskMetrics,
    /// Mean validator score per case on the monitored corpus.
    pub val_scores: Option<[f64; 3]>,
}

impl MetricsRecord {
    pub fn task(&self, task: Task) -> &TaskMetrics {
        match task {
            Task::Case => &self.case,
            Task::Zero => &self.zero,
        }
    }
}

/// Micro-averages counts per task, per case and over all cases.
pub fn micro_f1(judgements: &[SlotJudgement]) -> MetricsRecord {
    let mut counts = [[[0u64; 3]; 3]; 2];
    for j in judgements {
        let Some(task) = j.task else { continue };
        let c = &mut counts[task as usize][j.case.index()];
        c[0] += j.tp;
        c[1] += j.fp;
        c[2] += j.fn_;
    }
    let metrics = |t: usize| {
        let per_case = [0, 1, 2].map(|c| Prf::from_counts(counts[t][c][0], counts[t][c][1], counts[t][c][2]));
        let sum = |k: usize| (0..3).map(|c| counts[t][c][k]).sum::<u64>();
        TaskMetrics {
            per_case,
            overall: Prf::from_counts(sum(0), sum(1), sum(2)),
        }
    };
    MetricsRecord {
        case: metrics(Task::Case as usize),
        zero: metrics(Task::Zero as usize),
        val_scores: None,
    }
}

/// A gold corpus paired with its encoded sentences.
pub struct EvalSet<'c> {
    pub gold: &'c [AnnotatedSentence],
    pub encoded: Vec<EncodedSentence>,
}

impl<'c> EvalSet<'c> {
    pub fn new(gold: &'c [AnnotatedSentence], vocabs: &crate::model::Vocabularies) -> Self {
        EvalSet {
            gold,
            encoded: gold.iter().map(|a| EncodedSentence::new(&a.sentence, vocabs)).collect(),
        }
    }
}

pub fn predict_all<T: Scalar>(
    store: &ParameterStore<T>,
    cfg: &ModelConfig,
    set: &EvalSet<'_>,
) -> Result<Vec<Prediction>, ModelError> {
    set.encoded.iter().map(|e| generator::predict(store, cfg, e)).collect()
}

pub fn evaluate_predictions(gold: &[AnnotatedSentence], predictions: &[Prediction]) -> MetricsRecord {
    let judgements: Vec<SlotJudgement> = gold
        .iter()
        .zip(predictions)
        .flat_map(|(a, p)| judge_sentence(a, p))
        .collect();
    micro_f1(&judgements)
}

pub fn evaluate<T: Scalar>(
    store: &ParameterStore<T>,
    cfg: &ModelConfig,
    set: &EvalSet<'_>,
) -> Result<MetricsRecord, ModelError> {
    Ok(evaluate_predictions(set.gold, &predict_all(store, cfg, set)?))
}

/// Mean validator score per case over every predicate of `sentences`, with
/// both networks in eval mode.
pub fn monitor_validator<T: Scalar>(
    store: &ParameterStore<T>,
    cfg: &ModelConfig,
    vocab: &Vocab,
    sentences: &[EncodedSentence],
) -> Result<[f64; 3], ModelError> {
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for s in sentences {
        let preds = s.predicates();
        if preds.is_empty() {
            continue;
        }
        let mut g = Graph::new(store);
        for out in generator::forward(&mut g, cfg, s, &preds, &mut Mode::Eval)? {
            let v = validator::score_predicate(&mut g, cfg, vocab, s, &out, &mut Mode::Eval)?;
            for (acc, x) in sum.iter_mut().zip(g.value(v).data()) {
                *acc += x.as_f64();
            }
            n += 1;
        }
    }
    Ok(if n == 0 { [0.0; 3] } else { sum.map(|x| x / n as f64) })
}

pub const CSV_HEADER: &str = "epoch,task,case,P,R,F1,TP,FP,FN,val_score_mean";

/// CSV rows (no header): both tasks, each case and the overall row.
pub fn csv_rows(epoch: usize, m: &MetricsRecord) -> String {
    let mut out = String::new();
    for task in [Task::Case, Task::Zero] {
        let t = m.task(task);
        let rows = CASES
            .iter()
            .map(|c| (c.name(), t.per_case[c.index()], m.val_scores.map(|v| v[c.index()])))
            .chain(std::iter::once((
                "ALL",
                t.overall,
                m.val_scores.map(|v| v.iter().sum::<f64>() / 3.0),
            )));
        for (case, p, val) in rows {
            let val = val.map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{epoch},{},{case},{},{},{},{},{},{},{val}",
                task.name(),
                p.precision,
                p.recall,
                p.f1,
                p.tp,
                p.fp,
                p.fn_
            )
            .expect("writing to a String");
        }
    }
    out
}
