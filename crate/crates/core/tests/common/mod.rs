//! Fixtures and independent scalar oracles shared by the integration tests.
#![allow(dead_code)]

use pasadv::adcore::{Graph, Mode, ParameterStore, RngStream, Tensor};
use pasadv::corpus::{parse_annotated_str, Corpus, Vocab};
use pasadv::generator::{self, candidate_features, encode_sentence};
use pasadv::model::{init_params, EncodedSentence, ModelConfig, Vocabularies};
use pasadv::training::LabeledExample;

/// Two sentences over sixteen distinct words, so the word vocabulary has
/// 20 entries with the reserved ones.
pub const TOY: &str = "\
0\t太郎\tnoun\tga\t*\t3\t_\t_\t_\t_\t_\t_\t_
1\t本\tnoun\two\t*\t3\t_\t_\t_\t_\t_\t_\t_
2\t昨日\tnoun\tadv\t*\t3\t_\t_\t_\t_\t_\t_\t_
3\t買った\tverb\t-\tte\t6\tY\t0\t1\tN\tOVERT\tOVERT\tNULL
4\t花子\tnoun\tni\t*\t6\t_\t_\t_\t_\t_\t_\t_
5\t駅\tnoun\tde\t*\t6\t_\t_\t_\t_\t_\t_\t_
6\t渡した\tverb\t-\tpast\t-1\tY\t0\t1\t4\tZERO\tZERO\tOVERT
7\t。\tpunct\t-\t*\t6\t_\t_\t_\t_\t_\t_\t_

0\t先生\tnoun\twa\t*\t5\t_\t_\t_\t_\t_\t_\t_
1\t毎日\tnoun\tadv\t*\t4\t_\t_\t_\t_\t_\t_\t_
2\t友達\tnoun\tto\t*\t4\t_\t_\t_\t_\t_\t_\t_
3\t公園\tnoun\tde\t*\t4\t_\t_\t_\t_\t_\t_\t_
4\t歩き\tverb\t-\tte\t5\tY\t0\tN\tN\tZERO\tNULL\tNULL
5\t書いた\tverb\t-\tpast\t-1\tY\t0\t7\tA\tCASE\tOVERT\tEXO
6\t新しい\tadj\t-\t*\t7\t_\t_\t_\t_\t_\t_\t_
7\t手紙\tnoun\two\t*\t5\t_\t_\t_\t_\t_\t_\t_
8\t。\tpunct\t-\t*\t5\t_\t_\t_\t_\t_\t_\t_
";

pub fn toy_model() -> ModelConfig {
    ModelConfig {
        word_dim: 6,
        pos_dim: 3,
        dpos_dim: 3,
        infl_dim: 2,
        lstm_hidden: 8,
        encoder_layers: 1,
        path_hidden: 4,
        fnn_hidden: 16,
        validator_dim: 5,
        validator_hidden: 16,
        ..Default::default()
    }
}

pub struct Toy {
    pub corpus: Corpus,
    pub cfg: ModelConfig,
    pub vocabs: Vocabularies,
    pub examples: Vec<LabeledExample>,
    pub store: ParameterStore<f64>,
}

pub fn toy(seed: u64) -> Toy {
    let corpus = parse_annotated_str(TOY).expect("toy corpus parses");
    let vocabs = Vocabularies::build(&corpus, []);
    let cfg = toy_model();
    let (store, _) = init_params::<f64>(&cfg, &vocabs, None, &mut RngStream::new(seed));
    let examples = corpus
        .sentences
        .iter()
        .map(|a| LabeledExample::new(a, &vocabs).expect("toy example encodes"))
        .collect();
    Toy {
        corpus,
        cfg,
        vocabs,
        examples,
        store,
    }
}

pub type Matrix = Vec<Vec<f64>>;

pub fn matrix(t: &Tensor<f64>) -> Matrix {
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

pub fn param(store: &ParameterStore<f64>, name: &str) -> Matrix {
    matrix(store.get(name).unwrap_or_else(|| panic!("missing parameter {name}")))
}

/// Candidate feature rows of every predicate, from the encoder in eval mode.
pub fn features(store: &ParameterStore<f64>, cfg: &ModelConfig, s: &EncodedSentence) -> Vec<(usize, Matrix)> {
    let mut g = Graph::new(store);
    let nodes = encode_sentence(&mut g, cfg, s).unwrap();
    s.predicates()
        .into_iter()
        .map(|p| {
            let f = candidate_features(&mut g, cfg, s, &nodes, p).unwrap();
            (p, matrix(g.value(f)))
        })
        .collect()
}

/// `tanh(x W1 + b1) W2 + b2` for one input row.
pub fn fnn(x: &[f64], w1: &Matrix, b1: &[f64], w2: &Matrix, b2: &[f64]) -> Vec<f64> {
    let hidden: Vec<f64> = (0..b1.len())
        .map(|j| (b1[j] + x.iter().enumerate().map(|(k, xk)| xk * w1[k][j]).sum::<f64>()).tanh())
        .collect();
    (0..b2.len())
        .map(|o| b2[o] + hidden.iter().enumerate().map(|(j, h)| h * w2[j][o]).sum::<f64>())
        .collect()
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// First index of the maximum, by exhaustive comparison.
pub fn brute_argmax(v: &[f64]) -> usize {
    (0..v.len())
        .find(|&i| v.iter().all(|&x| x <= v[i]))
        .expect("non-empty, NaN-free input")
}

/// Candidate distribution per case for one predicate's feature rows.
pub fn distributions(store: &ParameterStore<f64>, features: &Matrix) -> [Vec<f64>; 3] {
    ["nom", "acc", "dat"].map(|c| {
        let w1 = param(store, &format!("gen.fnn.{c}.w1"));
        let b1 = param(store, &format!("gen.fnn.{c}.b1"));
        let w2 = param(store, &format!("gen.fnn.{c}.w2"));
        let b2 = param(store, &format!("gen.fnn.{c}.b2"));
        let scores: Vec<f64> = features.iter().map(|x| fnn(x, &w1, &b1[0], &w2, &b2[0])[0]).collect();
        softmax(&scores)
    })
}

/// Validator scores from the generator's distributions.
pub fn validator_scores(store: &ParameterStore<f64>, pred_row: usize, rows: &[usize], probs: &[Vec<f64>; 3]) -> Vec<f64> {
    let emb = param(store, "val.emb.word");
    let mut x = emb[pred_row].clone();
    for p in probs {
        let mut h = vec![0.0; emb[0].len()];
        for (k, &r) in rows.iter().enumerate() {
            for (hd, e) in h.iter_mut().zip(&emb[r]) {
                *hd += p[k] * e;
            }
        }
        x.extend(h);
    }
    let out = fnn(
        &x,
        &param(store, "val.fnn.w1"),
        &param(store, "val.fnn.b1")[0],
        &param(store, "val.fnn.w2"),
        &param(store, "val.fnn.b2")[0],
    );
    out.into_iter().map(sigmoid).collect()
}

/// Supervised generator loss: mean of `-ln p(gold)` over gold slots.
pub fn oracle_gen_supervised(store: &ParameterStore<f64>, cfg: &ModelConfig, batch: &[&LabeledExample]) -> f64 {
    let mut total = 0.0;
    let mut n = 0;
    for ex in batch {
        for ((_, f), gold) in features(store, cfg, &ex.sentence).iter().zip(&ex.gold) {
            let probs = distributions(store, f);
            for c in 0..3 {
                if let Some(g) = gold[c] {
                    total -= probs[c][g].ln();
                    n += 1;
                }
            }
        }
    }
    total / n as f64
}

/// Validator loss: per-case cross-entropy against argmax-correctness
/// labels, summed over cases, averaged over predicates then sentences.
pub fn oracle_validator(store: &ParameterStore<f64>, cfg: &ModelConfig, vocab: &Vocab, batch: &[&LabeledExample]) -> f64 {
    let mut total = 0.0;
    for ex in batch {
        let rows = ex.sentence.candidate_word_rows(vocab);
        let mut sentence = 0.0;
        let feats = features(store, cfg, &ex.sentence);
        for ((p, f), gold) in feats.iter().zip(&ex.gold) {
            let probs = distributions(store, f);
            let s = validator_scores(store, ex.sentence.word[*p], &rows, &probs);
            for c in 0..3 {
                if let Some(g) = gold[c] {
                    let q = if brute_argmax(&probs[c]) == g { 1.0 } else { 0.0 };
                    sentence -= q * s[c].ln() + (1.0 - q) * (1.0 - s[c]).ln();
                }
            }
        }
        total += sentence / feats.len() as f64;
    }
    total / batch.len() as f64
}

/// Unsupervised generator loss: mean of `-ln s'` over predicates and cases.
pub fn oracle_gen_unsupervised(
    store: &ParameterStore<f64>,
    cfg: &ModelConfig,
    vocab: &Vocab,
    batch: &[&EncodedSentence],
) -> f64 {
    let mut total = 0.0;
    let mut n = 0;
    for s in batch {
        let rows = s.candidate_word_rows(vocab);
        for (p, f) in features(store, cfg, s) {
            let probs = distributions(store, &f);
            for v in validator_scores(store, s.word[p], &rows, &probs) {
                total -= v.ln();
                n += 1;
            }
        }
    }
    total / n as f64
}

/// Distribution check helper: every case distribution sums to one.
pub fn generator_rows(store: &ParameterStore<f64>, cfg: &ModelConfig, s: &EncodedSentence) -> Vec<Vec<f64>> {
    let mut g = Graph::new(store);
    let outs = generator::forward(&mut g, cfg, s, &s.predicates(), &mut Mode::Eval).unwrap();
    outs.iter()
        .flat_map(|o| o.probs.map(|p| g.value(p).data().to_vec()))
        .collect()
}
