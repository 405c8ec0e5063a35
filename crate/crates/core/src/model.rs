//! Network dimensions, vocabularies, sentence encoding and parameter
//! initialization shared by the generator and validator.

use serde::{Deserialize, Serialize};

use crate::adcore::{glorot_uniform, normal_init, ParameterStore, RngStream, Tensor, EMBEDDING_INIT_STD};
use crate::corpus::{
    build_embedding_table, dependency_path, Corpus, EmbeddingLoadReport, Filler, RawCorpus, Sentence, Vocab,
    WordVectors, AUTHOR, NULL_CANDIDATE, READER,
};
use crate::adcore::AdError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("cannot encode an empty sentence")]
    EmptySentence,
    #[error("token {0} is not a predicate")]
    NotAPredicate(usize),
    #[error("gold filler {filler} of predicate {predicate} is not an argument candidate")]
    MissingCandidate { predicate: usize, filler: String },
    #[error("the `{0}` parameters must be frozen for this loss")]
    NotFrozen(&'static str),
    #[error(transparent)]
    Ad(#[from] AdError),
}

/// Layer sizes. Defaults are the published network sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub pos_dim: usize,
    pub dpos_dim: usize,
    pub infl_dim: usize,
    /// Hidden size per direction of every encoder bi-LSTM layer.
    pub lstm_hidden: usize,
    pub encoder_layers: usize,
    /// Hidden size per direction of the path bi-LSTM.
    pub path_hidden: usize,
    pub fnn_hidden: usize,
    /// Width of the validator's own candidate embeddings.
    pub validator_dim: usize,
    pub validator_hidden: usize,
    /// Drop probability for validator input and hidden layers.
    pub dropout: f64,
    /// Apply the same dropout inside the generator's case FNNs.
    pub generator_dropout: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_dim: 100,
            pos_dim: 10,
            dpos_dim: 10,
            infl_dim: 9,
            lstm_hidden: 256,
            encoder_layers: 3,
            path_hidden: 256,
            fnn_hidden: 1000,
            validator_dim: 100,
            validator_hidden: 1000,
            dropout: 0.5,
            generator_dropout: true,
        }
    }
}

impl ModelConfig {
    pub fn token_input_dim(&self) -> usize {
        self.word_dim + self.pos_dim + self.dpos_dim + self.infl_dim
    }

    pub fn encoder_output_dim(&self) -> usize {
        2 * self.lstm_hidden
    }

    pub fn path_output_dim(&self) -> usize {
        2 * self.path_hidden
    }

    /// Input width of each case FNN: predicate, candidate and path vectors.
    pub fn case_fnn_input_dim(&self) -> usize {
        2 * self.encoder_output_dim() + self.path_output_dim()
    }

    pub fn validator_input_dim(&self) -> usize {
        4 * self.validator_dim
    }

    pub fn keep_prob(&self) -> f64 {
        1.0 - self.dropout
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub word: Vocab,
    pub pos: Vocab,
    pub dpos: Vocab,
    pub infl: Vocab,
}

impl Vocabularies {
    /// Words and tags of the training corpus (minimum frequency 1), plus
    /// any `extra_words` (words of other corpora that have pre-trained
    /// vectors).
    pub fn build<'a>(train: &Corpus, extra_words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Vocabularies {
            word: Vocab::words(),
            pos: Vocab::tags(),
            dpos: Vocab::tags(),
            infl: Vocab::tags(),
        };
        for a in &train.sentences {
            for t in &a.sentence.tokens {
                v.word.add(&t.surface);
                v.pos.add(&t.pos);
                v.dpos.add(&t.detailed_pos);
                v.infl.add(&t.inflection);
            }
        }
        for w in extra_words {
            v.word.add(w);
        }
        v
    }

    pub fn reindex(&mut self) {
        self.word.reindex();
        self.pos.reindex();
        self.dpos.reindex();
        self.infl.reindex();
    }
}

/// Words from other corpora that the pre-trained vectors cover.
pub fn pretrained_extra_words<'a>(
    vectors: &'a WordVectors,
    corpora: &[&Corpus],
    raw: &[&RawCorpus],
) -> Vec<&'a str> {
    let mut seen = std::collections::HashSet::new();
    for c in corpora {
        for a in &c.sentences {
            for t in &a.sentence.tokens {
                seen.insert(t.surface.as_str());
            }
        }
    }
    for r in raw {
        for s in &r.sentences {
            for t in &s.tokens {
                seen.insert(t.surface.as_str());
            }
        }
    }
    vectors
        .entries
        .iter()
        .map(|(w, _)| w.as_str())
        .filter(|w| seen.contains(w))
        .collect()
}

/// Integer view of a sentence plus its candidate set and dependency paths.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSentence {
    pub word: Vec<usize>,
    pub pos: Vec<usize>,
    pub dpos: Vec<usize>,
    pub infl: Vec<usize>,
    pub heads: Vec<Option<usize>>,
    pub is_predicate: Vec<bool>,
    /// Non-predicate tokens in sentence order; AUTHOR, READER and the NULL
    /// candidate follow at positions `len`, `len + 1`, `len + 2`.
    pub candidate_tokens: Vec<usize>,
    /// `paths[pred][k]`: dependency path from `candidate_tokens[k]` to `pred`
    /// (filled only for predicate tokens).
    pub paths: Vec<Vec<Vec<usize>>>,
}

pub const SPECIAL_CANDIDATES: usize = 3;

impl EncodedSentence {
    pub fn new(s: &Sentence, vocabs: &Vocabularies) -> Self {
        let candidate_tokens = s.candidate_tokens();
        let mut paths = vec![Vec::new(); s.len()];
        for p in s.predicate_indices() {
            paths[p] = candidate_tokens
                .iter()
                .map(|&c| dependency_path(s, p, c).expect("validated tree"))
                .collect();
        }
        EncodedSentence {
            word: s.tokens.iter().map(|t| vocabs.word.id(&t.surface)).collect(),
            pos: s.tokens.iter().map(|t| vocabs.pos.id(&t.pos)).collect(),
            dpos: s.tokens.iter().map(|t| vocabs.dpos.id(&t.detailed_pos)).collect(),
            infl: s.tokens.iter().map(|t| vocabs.infl.id(&t.inflection)).collect(),
            heads: s.heads.clone(),
            is_predicate: s.predicates.clone(),
            candidate_tokens,
            paths,
        }
    }

    pub fn len(&self) -> usize {
        self.word.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word.is_empty()
    }

    pub fn predicates(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_predicate[i]).collect()
    }

    pub fn candidate_count(&self) -> usize {
        self.candidate_tokens.len() + SPECIAL_CANDIDATES
    }

    /// Position of `filler` in the candidate set; `None` for predicate tokens.
    pub fn candidate_position(&self, filler: Filler) -> Option<usize> {
        let m = self.candidate_tokens.len();
        match filler {
            Filler::Token(t) => self.candidate_tokens.binary_search(&t).ok(),
            Filler::Author => Some(m),
            Filler::Reader => Some(m + 1),
            Filler::Null => Some(m + 2),
        }
    }

    pub fn filler_at(&self, position: usize) -> Filler {
        let m = self.candidate_tokens.len();
        match position {
            p if p < m => Filler::Token(self.candidate_tokens[p]),
            p if p == m => Filler::Author,
            p if p == m + 1 => Filler::Reader,
            _ => Filler::Null,
        }
    }

    /// Word-vocabulary rows for every candidate, special candidates mapped
    /// to their reserved rows.
    pub fn candidate_word_rows(&self, vocab: &Vocab) -> Vec<usize> {
        let mut rows: Vec<usize> = self.candidate_tokens.iter().map(|&t| self.word[t]).collect();
        rows.extend([vocab.id(AUTHOR), vocab.id(READER), vocab.id(NULL_CANDIDATE)]);
        rows
    }
}

fn lstm_params<T: Scalar>(
    store: &mut ParameterStore<T>,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut RngStream,
) {
    store.insert(format!("{prefix}.wx"), glorot_uniform(input, 4 * hidden, rng));
    store.insert(format!("{prefix}.wh"), glorot_uniform(hidden, 4 * hidden, rng));
    let mut b = vec![T::zero(); 4 * hidden];
    for v in &mut b[hidden..2 * hidden] {
        *v = T::one();
    }
    store.insert(format!("{prefix}.b"), Tensor::row(b));
}

fn fnn_params<T: Scalar>(
    store: &mut ParameterStore<T>,
    prefix: &str,
    input: usize,
    hidden: usize,
    output: usize,
    rng: &mut RngStream,
) {
    store.insert(format!("{prefix}.w1"), glorot_uniform(input, hidden, rng));
    store.insert(format!("{prefix}.b1"), Tensor::zeros(&[1, hidden]));
    store.insert(format!("{prefix}.w2"), glorot_uniform(hidden, output, rng));
    store.insert(format!("{prefix}.b2"), Tensor::zeros(&[1, output]));
}

fn embedding<T: Scalar>(
    rows: usize,
    dim: usize,
    vocab: &Vocab,
    pretrained: Option<&WordVectors>,
    rng: &mut RngStream,
) -> (Tensor<T>, Option<EmbeddingLoadReport>) {
    match pretrained {
        Some(v) if v.dim == dim => {
            let (table, report) =
                build_embedding_table::<T>(v, vocab.clone(), dim, rng).expect("dimension checked");
            (table.matrix, Some(report))
        }
        _ => (normal_init(rows, dim, EMBEDDING_INIT_STD, rng), None),
    }
}

/// Builds every generator (`gen.`) and validator (`val.`) parameter.
///
/// Word tables of both networks start from `pretrained` when its
/// dimension matches; other rows follow the random-initialization policy.
pub fn init_params<T: Scalar>(
    cfg: &ModelConfig,
    vocabs: &Vocabularies,
    pretrained: Option<&WordVectors>,
    rng: &mut RngStream,
) -> (ParameterStore<T>, Option<EmbeddingLoadReport>) {
    let mut s = ParameterStore::new();
    let (word, report) = embedding(vocabs.word.len(), cfg.word_dim, &vocabs.word, pretrained, rng);
    s.insert("gen.emb.word", word);
    s.insert("gen.emb.pos", normal_init(vocabs.pos.len(), cfg.pos_dim, EMBEDDING_INIT_STD, rng));
    s.insert("gen.emb.dpos", normal_init(vocabs.dpos.len(), cfg.dpos_dim, EMBEDDING_INIT_STD, rng));
    s.insert("gen.emb.infl", normal_init(vocabs.infl.len(), cfg.infl_dim, EMBEDDING_INIT_STD, rng));
    let mut input = cfg.token_input_dim();
    for layer in 0..cfg.encoder_layers {
        for dir in ["fw", "bw"] {
            lstm_params(&mut s, &format!("gen.enc.l{layer}.{dir}"), input, cfg.lstm_hidden, rng);
        }
        input = cfg.encoder_output_dim();
    }
    for dir in ["fw", "bw"] {
        lstm_params(&mut s, &format!("gen.path.{dir}"), cfg.word_dim + cfg.pos_dim, cfg.path_hidden, rng);
    }
    for name in ["author", "reader", "null"] {
        s.insert(
            format!("gen.cand.{name}"),
            normal_init(1, cfg.encoder_output_dim(), EMBEDDING_INIT_STD, rng),
        );
        s.insert(
            format!("gen.pathconst.{name}"),
            normal_init(1, cfg.path_output_dim(), EMBEDDING_INIT_STD, rng),
        );
    }
    for case in ["nom", "acc", "dat"] {
        fnn_params(&mut s, &format!("gen.fnn.{case}"), cfg.case_fnn_input_dim(), cfg.fnn_hidden, 1, rng);
    }
    let (vword, _) = embedding(vocabs.word.len(), cfg.validator_dim, &vocabs.word, pretrained, rng);
    s.insert("val.emb.word", vword);
    fnn_params(&mut s, "val.fnn", cfg.validator_input_dim(), cfg.validator_hidden, 3, rng);
    (s, report)
}

/// Checks that stored shapes match what `cfg` and `vocabs` imply.
pub fn check_dimensions<T: Scalar>(
    store: &ParameterStore<T>,
    cfg: &ModelConfig,
    vocabs: &Vocabularies,
) -> Result<(), String> {
    let mut expected = ParameterStore::<T>::new();
    // shapes only; the values are discarded
    let (probe, _) = init_params::<T>(cfg, vocabs, None, &mut RngStream::new(0));
    for p in probe.iter() {
        expected.insert(p.name.clone(), Tensor::zeros(p.value.shape()));
    }
    for p in expected.iter() {
        match store.get(&p.name) {
            None => return Err(format!("checkpoint lacks parameter `{}`", p.name)),
            Some(t) if t.shape() != p.value.shape() => {
                return Err(format!(
                    "parameter `{}` has shape {:?}, configuration implies {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                ))
            }
            _ => {}
        }
    }
    Ok(())
}
