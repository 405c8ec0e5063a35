//! The validator: expected candidate embeddings under the generator's
//! distributions, scored per case by a sigmoid FNN.

use crate::adcore::{Axis, Graph, Mode, NodeId};
use crate::corpus::Vocab;
use crate::generator::PredicateOutput;
use crate::model::{EncodedSentence, ModelConfig, ModelError};
use crate::scalar::Scalar;

/// `sum_i p_i v'(candidate_i)` for a `1 x n` distribution `probs`, where
/// `rows` lists each candidate's row in the validator embedding table.
pub fn case_representation<T: Scalar>(
    g: &mut Graph<'_, T>,
    rows: &[usize],
    probs: NodeId,
) -> Result<NodeId, ModelError> {
    let table = g.param("val.emb.word")?;
    let v = g.gather(table, rows)?;
    Ok(g.matmul(probs, v)?)
}

/// Three per-case scores (`1 x 3`) from `[v'(pred); h'_NOM; h'_ACC; h'_DAT]`.
pub fn validate<T: Scalar>(
    g: &mut Graph<'_, T>,
    cfg: &ModelConfig,
    predicate_row: usize,
    reps: [NodeId; 3],
    mode: &mut Mode<'_>,
) -> Result<NodeId, ModelError> {
    let table = g.param("val.emb.word")?;
    let pred = g.gather(table, &[predicate_row])?;
    let x = g.concat(&[pred, reps[0], reps[1], reps[2]], Axis::Cols)?;
    let keep = cfg.keep_prob();
    let w1 = g.param("val.fnn.w1")?;
    let b1 = g.param("val.fnn.b1")?;
    let w2 = g.param("val.fnn.w2")?;
    let b2 = g.param("val.fnn.b2")?;
    let x = g.dropout(x, keep, mode)?;
    let a = g.matmul(x, w1)?;
    let a = g.add(a, b1)?;
    let hdn = g.tanh(a)?;
    let hdn = g.dropout(hdn, keep, mode)?;
    let o = g.matmul(hdn, w2)?;
    let o = g.add(o, b2)?;
    Ok(g.sigmoid(o)?)
}

/// Validator scores for one predicate's generator output.
pub fn score_predicate<T: Scalar>(
    g: &mut Graph<'_, T>,
    cfg: &ModelConfig,
    vocab: &Vocab,
    s: &EncodedSentence,
    out: &PredicateOutput,
    mode: &mut Mode<'_>,
) -> Result<NodeId, ModelError> {
    let rows = s.candidate_word_rows(vocab);
    let mut reps = out.probs;
    for (r, &p) in reps.iter_mut().zip(&out.probs) {
        *r = case_representation(g, &rows, p)?;
    }
    validate(g, cfg, s.word[out.predicate], reps, mode)
}
