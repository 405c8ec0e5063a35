//! The argument generator: bi-LSTM sentence encoder, dependency-path
//! embeddings, per-case candidate scoring and the softmax over candidates.

use std::collections::BTreeMap;

use crate::adcore::{Axis, Graph, Mode, NodeId, ParameterStore};
use crate::corpus::{Case, Filler, CASES};
use crate::model::{EncodedSentence, ModelConfig, ModelError};
use crate::scalar::Scalar;

const SPECIAL_NAMES: [&str; 3] = ["author", "reader", "null"];

struct Cell {
    h: NodeId,
    c: NodeId,
}

fn lstm_step<T: Scalar>(
    g: &mut Graph<'_, T>,
    wh: NodeId,
    hidden: usize,
    xw: NodeId,
    prev: Option<&Cell>,
) -> Result<Cell, ModelError> {
    let gates = match prev {
        Some(p) => {
            let r = g.matmul(p.h, wh)?;
            g.add(xw, r)?
        }
        None => xw,
    };
    let ifo_raw = g.slice_cols(gates, 0, 3 * hidden)?;
    let ifo = g.sigmoid(ifo_raw)?;
    let cand_raw = g.slice_cols(gates, 3 * hidden, 4 * hidden)?;
    let cand = g.tanh(cand_raw)?;
    let i = g.slice_cols(ifo, 0, hidden)?;
    let o = g.slice_cols(ifo, 2 * hidden, 3 * hidden)?;
    let mut c = g.mul(i, cand)?;
    if let Some(p) = prev {
        let f = g.slice_cols(ifo, hidden, 2 * hidden)?;
        let kept = g.mul(f, p.c)?;
        c = g.add(c, kept)?;
    }
    let tc = g.tanh(c)?;
    let h = g.mul(o, tc)?;
    Ok(Cell { h, c })
}

/// `x W + b` for every row of `x`.
fn input_projection<T: Scalar>(g: &mut Graph<'_, T>, prefix: &str, x: NodeId) -> Result<NodeId, ModelError> {
    let wx = g.param(&format!("{prefix}.wx"))?;
    let b = g.param(&format!("{prefix}.b"))?;
    let xw = g.matmul(x, wx)?;
    Ok(g.add(xw, b)?)
}

/// Runs one LSTM direction over the rows of a pre-projected input, visiting
/// them in `order`. Returns the hidden state after each visit.
fn run_lstm<T: Scalar>(
    g: &mut Graph<'_, T>,
    prefix: &str,
    hidden: usize,
    projected: NodeId,
    order: impl Iterator<Item = usize>,
) -> Result<Vec<NodeId>, ModelError> {
    let wh = g.param(&format!("{prefix}.wh"))?;
    let mut prev: Option<Cell> = None;
    let mut out = Vec::new();
    for t in order {
        let xw = g.gather(projected, &[t])?;
        let cell = lstm_step(g, wh, hidden, xw, prev.as_ref())?;
        out.push(cell.h);
        prev = Some(cell);
    }
    Ok(out)
}

/// Graph nodes shared by every predicate of one sentence.
pub struct SentenceNodes {
    /// `len x 2H` contextual token representations.
    pub h: NodeId,
    path_fw: NodeId,
    path_bw: NodeId,
}

fn token_inputs<T: Scalar>(g: &mut Graph<'_, T>, s: &EncodedSentence) -> Result<NodeId, ModelError> {
    let mut parts = Vec::with_capacity(4);
    for (table, ids) in [("word", &s.word), ("pos", &s.pos), ("dpos", &s.dpos), ("infl", &s.infl)] {
        let e = g.param(&format!("gen.emb.{table}"))?;
        parts.push(g.gather(e, ids)?);
    }
    Ok(g.concat(&parts, Axis::Cols)?)
}

/// Per-token representations from the stacked bi-LSTM: the final layer's
/// forward and backward states side by side (`len x 2H`).
pub fn encode<T: Scalar>(g: &mut Graph<'_, T>, cfg: &ModelConfig, s: &EncodedSentence) -> Result<NodeId, ModelError> {
    if s.is_empty() {
        return Err(ModelError::EmptySentence);
    }
    let n = s.len();
    let mut x = token_inputs(g, s)?;
    for layer in 0..cfg.encoder_layers {
        let fw_prefix = format!("gen.enc.l{layer}.fw");
        let bw_prefix = format!("gen.enc.l{layer}.bw");
        let pf = input_projection(g, &fw_prefix, x)?;
        let fw = run_lstm(g, &fw_prefix, cfg.lstm_hidden, pf, 0..n)?;
        let pb = input_projection(g, &bw_prefix, x)?;
        let mut bw = run_lstm(g, &bw_prefix, cfg.lstm_hidden, pb, (0..n).rev())?;
        bw.reverse();
        let fw_rows = g.concat(&fw, Axis::Rows)?;
        let bw_rows = g.concat(&bw, Axis::Rows)?;
        x = g.concat(&[fw_rows, bw_rows], Axis::Cols)?;
    }
    Ok(x)
}

pub fn encode_sentence<T: Scalar>(
    g: &mut Graph<'_, T>,
    cfg: &ModelConfig,
    s: &EncodedSentence,
) -> Result<SentenceNodes, ModelError> {
    let h = encode(g, cfg, s)?;
    let word = g.param("gen.emb.word")?;
    let pos = g.param("gen.emb.pos")?;
    let w = g.gather(word, &s.word)?;
    let p = g.gather(pos, &s.pos)?;
    let x = g.concat(&[w, p], Axis::Cols)?;
    let path_fw = input_projection(g, "gen.path.fw", x)?;
    let path_bw = input_projection(g, "gen.path.bw", x)?;
    Ok(SentenceNodes { h, path_fw, path_bw })
}

/// Path representation for the candidate at `position`: a bi-LSTM over the
/// word and POS embeddings along the dependency path, or a learned constant
/// for AUTHOR, READER and the NULL candidate.
pub fn path_embedding<T: Scalar>(
    g: &mut Graph<'_, T>,
    cfg: &ModelConfig,
    s: &EncodedSentence,
    nodes: &SentenceNodes,
    predicate: usize,
    position: usize,
) -> Result<NodeId, ModelError> {
    let m = s.candidate_tokens.len();
    if position >= m {
        return Ok(g.param(&format!("gen.pathconst.{}", SPECIAL_NAMES[(position - m).min(2)]))?);
    }
    let path = s
        .paths
        .get(predicate)
        .and_then(|p| p.get(position))
        .ok_or(ModelError::NotAPredicate(predicate))?;
    let fw = run_lstm(g, "gen.path.fw", cfg.path_hidden, nodes.path_fw, path.iter().copied())?;
    let bw = run_lstm(g, "gen.path.bw", cfg.path_hidden, nodes.path_bw, path.iter().rev().copied())?;
    let (Some(&f), Some(&b)) = (fw.last(), bw.last()) else {
        unreachable!("dependency paths contain at least two tokens")
    };
    Ok(g.concat(&[f, b], Axis::Cols)?)
}

/// `n x D` matrix whose row i is `[h_pred ; h_arg_i ; h_path_i]`.
pub fn candidate_features<T: Scalar>(
    g: &mut Graph<'_, T>,
    cfg: &ModelConfig,
    s: &EncodedSentence,
    nodes: &SentenceNodes,
    predicate: usize,
) -> Result<NodeId, ModelError> {
    if !s.is_predicate.get(predicate).copied().unwrap_or(false) {
        return Err(ModelError::NotAPredicate(predicate));
    }
    let n = s.candidate_count();
    let mut args = Vec::with_capacity(4);
    if !s.candidate_tokens.is_empty() {
        args.push(g.gather(nodes.h, &s.candidate_tokens)?);
    }
    for name in SPECIAL_NAMES {
        args.push(g.param(&format!("gen.cand.{name}"))?);
    }
    let h_arg = g.concat(&args, Axis::Rows)?;
    let paths = (0..n)
        .map(|i| path_embedding(g, cfg, s, nodes, predicate, i))
        .collect::<Result<Vec<_>, _>>()?;
    let h_path = g.concat(&paths, Axis::Rows)?;
    let h_pred = g.gather(nodes.h, &vec![predicate; n])?;
    Ok(g.concat(&[h_pred, h_arg, h_path], Axis::Cols)?)
}

/// Raw scores (`1 x n`) from the case's FNN applied to every feature row.
pub fn case_scores<T: Scalar>(
    g: &mut Graph<'_, T>,
    cfg: &ModelConfig,
    case: Case,
    features: NodeId,
    mode: &mut Mode<'_>,
) -> Result<NodeId, ModelError> {
    let prefix = format!("gen.fnn.{}", case.name().to_lowercase());
    let keep = if cfg.generator_dropout { cfg.keep_prob() } else { 1.0 };
    let w1 = g.param(&format!("{prefix}.w1"))?;
    let b1 = g.param(&format!("{prefix}.b1"))?;
    let w2 = g.param(&format!("{prefix}.w2"))?;
    let b2 = g.param(&format!("{prefix}.b2"))?;
    let x = g.dropout(features, keep, mode)?;
    let a = g.matmul(x, w1)?;
    let a = g.add(a, b1)?;
    let hdn = g.tanh(a)?;
    let hdn = g.dropout(hdn, keep, mode)?;
    let o = g.matmul(hdn, w2)?;
    let o = g.add(o, b2)?;
    let n = g.shape(o).0;
    Ok(g.reshape(o, 1, n)?)
}

/// Softmax over the candidate set.
pub fn case_distribution<T: Scalar>(g: &mut Graph<'_, T>, scores: NodeId) -> Result<NodeId, ModelError> {
    Ok(g.softmax(scores)?)
}

/// Scores and distributions of one predicate, indexed by `Case::index`.
#[derive(Clone, Copy, Debug)]
pub struct PredicateOutput {
    pub predicate: usize,
    pub scores: [NodeId; 3],
    pub probs: [NodeId; 3],
}

/// Runs the generator for `predicates` of one sentence.
pub fn forward<T: Scalar>(
    g: &mut Graph<'_, T>,
    cfg: &ModelConfig,
    s: &EncodedSentence,
    predicates: &[usize],
    mode: &mut Mode<'_>,
) -> Result<Vec<PredicateOutput>, ModelError> {
    let nodes = encode_sentence(g, cfg, s)?;
    let mut out = Vec::with_capacity(predicates.len());
    for &p in predicates {
        let features = candidate_features(g, cfg, s, &nodes, p)?;
        let mut scores = [features; 3];
        let mut probs = [features; 3];
        for case in CASES {
            scores[case.index()] = case_scores(g, cfg, case, features, mode)?;
            probs[case.index()] = case_distribution(g, scores[case.index()])?;
        }
        out.push(PredicateOutput {
            predicate: p,
            scores,
            probs,
        });
    }
    Ok(out)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub type Prediction = BTreeMap<(usize, Case), Filler>;

/// Argmax filler for every case of every predicate, in eval mode.
pub fn predict<T: Scalar>(
    store: &ParameterStore<T>,
    cfg: &ModelConfig,
    s: &EncodedSentence,
) -> Result<Prediction, ModelError> {
    let mut out = Prediction::new();
    let predicates = s.predicates();
    if predicates.is_empty() {
        return Ok(out);
    }
    let mut g = Graph::new(store);
    for po in forward(&mut g, cfg, s, &predicates, &mut Mode::Eval)? {
        for case in CASES {
            let best = argmax(g.value(po.probs[case.index()]).data());
            out.insert((po.predicate, case), s.filler_at(best));
        }
    }
    Ok(out)
}
