//! Pseudo training data by swapping an argument word for one of its
//! nearest neighbours in the pre-trained embedding space.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::adcore::RngStream;
use crate::corpus::{Corpus, WordVectors};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwapPolicy {
    /// Exponent applied to the dot product; must be even and positive.
    pub exponent: u32,
    pub neighbors: usize,
    /// Pseudo sentences per training sentence.
    pub size_multiplier: f64,
}

impl Default for SwapPolicy {
    fn default() -> Self {
        SwapPolicy {
            exponent: 10,
            neighbors: 20,
            size_multiplier: 1.0,
        }
    }
}

impl SwapPolicy {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.exponent == 0 || self.exponent % 2 != 0 {
            return Err(AugmentError::Policy(format!("exponent {} is not even and positive", self.exponent)));
        }
        if self.neighbors == 0 || !(self.size_multiplier >= 0.0) {
            return Err(AugmentError::Policy("neighbors must be positive and size_multiplier non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("need at least two embedded words to find neighbours, found {0}")]
    VocabularyTooSmall(usize),
    #[error("invalid swap policy: {0}")]
    Policy(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    /// Row in the table's word list.
    pub word: usize,
    pub cosine: f64,
    pub dot: f64,
}

/// Nearest words by cosine similarity, most similar first, self excluded.
#[derive(Clone, Debug)]
pub struct NeighborTable {
    words: Vec<String>,
    index: HashMap<String, usize>,
    neighbors: Vec<Vec<Neighbor>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Brute-force pairwise scan keeping the `k` most cosine-similar words per
/// word. Ties keep file order.
pub fn build_neighbors(vectors: &WordVectors, k: usize) -> Result<NeighborTable, AugmentError> {
    let n = vectors.entries.len();
    if n < 2 {
        return Err(AugmentError::VocabularyTooSmall(n));
    }
    let norms: Vec<f64> = vectors.entries.iter().map(|(_, v)| dot(v, v).sqrt()).collect();
    let mut neighbors = Vec::with_capacity(n);
    for (i, (_, vi)) in vectors.entries.iter().enumerate() {
        let mut row: Vec<Neighbor> = vectors
            .entries
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(j, (_, vj))| {
                let d = dot(vi, vj);
                let denom = norms[i] * norms[j];
                Neighbor {
                    word: j,
                    cosine: if denom > 0.0 { d / denom } else { 0.0 },
                    dot: d,
                }
            })
            .collect();
        row.sort_by(|a, b| b.cosine.total_cmp(&a.cosine).then(a.word.cmp(&b.word)));
        row.truncate(k);
        neighbors.push(row);
    }
    let words: Vec<String> = vectors.entries.iter().map(|(w, _)| w.clone()).collect();
    let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    Ok(NeighborTable {
        words,
        index,
        neighbors,
    })
}

impl NeighborTable {
    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn neighbors_of(&self, word: &str) -> &[Neighbor] {
        self.index.get(word).map(|&i| self.neighbors[i].as_slice()).unwrap_or(&[])
    }

    /// Swap distribution over the neighbours of `word`, aligned with
    /// [`neighbors_of`](Self::neighbors_of). Weights are
    /// `dot^exponent`, computed relative to the largest absolute dot product;
    /// if every weight is zero the distribution is uniform.
    pub fn swap_distribution(&self, word: &str, policy: &SwapPolicy) -> Vec<f64> {
        let nb = self.neighbors_of(word);
        let scale = nb.iter().map(|n| n.dot.abs()).fold(0.0, f64::max);
        if nb.is_empty() {
            return Vec::new();
        }
        if scale == 0.0 {
            return vec![1.0 / nb.len() as f64; nb.len()];
        }
        let w: Vec<f64> = nb.iter().map(|n| (n.dot / scale).powi(policy.exponent as i32)).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    }

    pub fn sample_swap(&self, word: &str, policy: &SwapPolicy, rng: &mut RngStream) -> Option<&str> {
        let p = self.swap_distribution(word, policy);
        let i = rng.weighted_index(&p)?;
        Some(self.word(self.neighbors_of(word)[i].word))
    }
}

/// Probability of replacing `w` by `w2`; zero when `w2` is not among the
/// neighbours of `w`.
pub fn swap_probability(w: &str, w2: &str, table: &NeighborTable, policy: &SwapPolicy) -> f64 {
    let p = table.swap_distribution(w, policy);
    table
        .neighbors_of(w)
        .iter()
        .zip(p)
        .find(|(n, _)| table.word(n.word) == w2)
        .map(|(_, p)| p)
        .unwrap_or(0.0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentReport {
    pub sentences: usize,
    pub swapped: usize,
    /// Sentences copied without a swap (no argument tokens, or the chosen
    /// word has no neighbours).
    pub unchanged: usize,
}

pub const PSEUDO_COMMENT: &str = "pseudo";

/// Pseudo corpus of `size_multiplier * |corpus|` sentences, cycling through
/// `corpus` in order. Each copy has one uniformly chosen argument token's
/// surface replaced by a sampled neighbour and carries a `# pseudo` line.
pub fn generate_pseudo_corpus(
    corpus: &Corpus,
    table: &NeighborTable,
    policy: &SwapPolicy,
    seed: u64,
) -> Result<(Corpus, AugmentReport), AugmentError> {
    policy.validate()?;
    let mut rng = RngStream::derive(seed, "augment");
    let target = (corpus.len() as f64 * policy.size_multiplier).round() as usize;
    let mut out = Corpus::default();
    let mut report = AugmentReport::default();
    for i in 0..target {
        let mut a = corpus.sentences[i % corpus.len()].clone();
        a.sentence.comments.retain(|c| c.trim() != PSEUDO_COMMENT);
        a.sentence.comments.push(PSEUDO_COMMENT.into());
        let args = a.argument_tokens();
        let swapped = if args.is_empty() {
            false
        } else {
            let t = args[rng.index(args.len())];
            match table.sample_swap(&a.sentence.tokens[t].surface, policy, &mut rng) {
                Some(w) => {
                    a.sentence.tokens[t].surface = w.to_string();
                    true
                }
                None => false,
            }
        };
        if swapped {
            report.swapped += 1;
        } else {
            report.unchanged += 1;
        }
        out.sentences.push(a);
    }
    report.sentences = out.len();
    Ok((out, report))
}
