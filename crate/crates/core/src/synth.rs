//! Seeded synthetic corpora with planted selectional preferences.
//!
//! Every predicate case prefers one noun class. Sentences have one or two
//! head-final clauses; case markers travel in the detailed-POS column, and
//! zero fillers are attached somewhere other than their predicate.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adcore::RngStream;
use crate::corpus::{
    serialize_annotated, serialize_raw, AnnotatedSentence, Case, Category, Corpus, Filler, GoldSlot, RawCorpus,
    Sentence, Token, CASES,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlotRates {
    pub overt: f64,
    pub case: f64,
    pub zero: f64,
    pub exo: f64,
    pub null: f64,
}

impl SlotRates {
    fn as_array(&self) -> [f64; 5] {
        [self.overt, self.case, self.zero, self.exo, self.null]
    }
}

impl Default for SlotRates {
    fn default() -> Self {
        SlotRates {
            overt: 0.3,
            case: 0.2,
            zero: 0.3,
            exo: 0.2,
            null: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub predicates: usize,
    pub nouns: usize,
    pub classes: usize,
    /// Probability that a filler comes from the preferred class; other
    /// fillers are drawn uniformly from all nouns.
    pub purity: f64,
    pub two_clause_rate: f64,
    /// Extra non-argument nouns per clause, drawn from `0..=max`.
    pub max_distractors: usize,
    pub nom: SlotRates,
    pub acc: SlotRates,
    pub dat: SlotRates,
    pub labeled: usize,
    pub raw: usize,
    pub dev: usize,
    pub test: usize,
    pub embedding_dim: usize,
    /// Standard deviation of noun vectors around their class centroid.
    pub embedding_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            predicates: 8,
            nouns: 80,
            classes: 4,
            purity: 0.9,
            two_clause_rate: 0.4,
            max_distractors: 2,
            nom: SlotRates::default(),
            acc: SlotRates {
                overt: 0.35,
                case: 0.15,
                zero: 0.2,
                exo: 0.0,
                null: 0.3,
            },
            dat: SlotRates {
                overt: 0.2,
                case: 0.05,
                zero: 0.1,
                exo: 0.0,
                null: 0.65,
            },
            labeled: 200,
            raw: 2000,
            dev: 200,
            test: 500,
            embedding_dim: 32,
            embedding_noise: 0.3,
        }
    }
}

impl SynthConfig {
    pub fn rates(&self, case: Case) -> &SlotRates {
        match case {
            Case::Nom => &self.nom,
            Case::Acc => &self.acc,
            Case::Dat => &self.dat,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Infeasible(m));
        for case in CASES {
            let r = self.rates(case).as_array();
            if r.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return bad(format!("{case} rates must lie in [0, 1]"));
            }
            let total: f64 = r.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return bad(format!("{case} rates sum to {total}, not 1"));
            }
        }
        if self.predicates == 0 || self.classes == 0 {
            return bad("predicates and classes must be positive".into());
        }
        if self.nouns < self.classes {
            return bad(format!("{} nouns cannot populate {} classes", self.nouns, self.classes));
        }
        if !(0.0..=1.0).contains(&self.purity) || !(0.0..=1.0).contains(&self.two_clause_rate) {
            return bad("purity and two_clause_rate must lie in [0, 1]".into());
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("infeasible synthetic configuration: {0}")]
    Infeasible(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// The planted lexicon shared by every split.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub noun_class: Vec<usize>,
    /// Preferred noun class per predicate and case.
    pub preference: Vec<[usize; 3]>,
    /// Exophora entity each predicate uses for EXO slots: AUTHOR when its
    /// NOM class is even, READER otherwise.
    pub exophora: Vec<Filler>,
}

impl World {
    fn new(cfg: &SynthConfig, rng: &mut RngStream) -> Self {
        let preference: Vec<[usize; 3]> = (0..cfg.predicates)
            .map(|_| [0; 3].map(|_| rng.index(cfg.classes)))
            .collect();
        World {
            noun_class: (0..cfg.nouns).map(|n| n % cfg.classes).collect(),
            exophora: preference
                .iter()
                .map(|p| if p[0] % 2 == 0 { Filler::Author } else { Filler::Reader })
                .collect(),
            preference,
        }
    }

    pub fn noun(n: usize) -> String {
        format!("n{n}")
    }

    pub fn predicate(p: usize) -> String {
        format!("v{p}")
    }

    /// Class of a noun surface, if it is one.
    pub fn class_of(&self, surface: &str) -> Option<usize> {
        let n: usize = surface.strip_prefix('n')?.parse().ok()?;
        self.noun_class.get(n).copied()
    }

    pub fn predicate_id(surface: &str) -> Option<usize> {
        surface.strip_prefix('v')?.parse().ok()
    }
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub world: World,
    pub labeled: Corpus,
    pub raw: RawCorpus,
    pub dev: Corpus,
    pub test: Corpus,
    /// Word-vector text: one line per noun and predicate.
    pub embeddings: String,
}

pub const TRAIN_FILE: &str = "train.txt";
pub const RAW_FILE: &str = "raw.txt";
pub const DEV_FILE: &str = "dev.txt";
pub const TEST_FILE: &str = "test.txt";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";

impl SynthOutput {
    pub fn write_to(&self, dir: &Path) -> Result<(), SynthError> {
        let io = |path: &Path, e: std::io::Error| SynthError::Io {
            path: path.display().to_string(),
            source: e,
        };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        for (name, text) in [
            (TRAIN_FILE, serialize_annotated(&self.labeled)),
            (RAW_FILE, serialize_raw(&self.raw)),
            (DEV_FILE, serialize_annotated(&self.dev)),
            (TEST_FILE, serialize_annotated(&self.test)),
            (EMBEDDINGS_FILE, self.embeddings.clone()),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| io(&path, e))?;
        }
        Ok(())
    }
}

enum NodeKind {
    Predicate { id: usize, inflection: &'static str },
    Noun { id: usize, marker: &'static str },
}

struct Node {
    kind: NodeKind,
    head: Option<usize>,
}

#[derive(Default)]
struct Draft {
    nodes: Vec<Node>,
    /// (predicate node, case) -> filler (node index for tokens).
    slots: Vec<(usize, Case, DraftFiller, Category)>,
}

enum DraftFiller {
    Node(usize),
    Exo(Filler),
    Null,
}

impl Draft {
    fn add(&mut self, kind: NodeKind, head: Option<usize>) -> usize {
        self.nodes.push(Node { kind, head });
        self.nodes.len() - 1
    }

    fn noun_children(&self, head: usize) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].head == Some(head) && matches!(self.nodes[i].kind, NodeKind::Noun { .. }))
            .collect()
    }

    /// Head-final linearization with shuffled sibling order.
    fn linearize(&self, root: usize, rng: &mut RngStream, out: &mut Vec<usize>) {
        let mut children: Vec<usize> = (0..self.nodes.len()).filter(|&i| self.nodes[i].head == Some(root)).collect();
        rng.shuffle(&mut children);
        for c in children {
            self.linearize(c, rng, out);
        }
        out.push(root);
    }
}

const MARKERS: [&str; 3] = ["ga", "wo", "ni"];
const ADJUNCT_MARKERS: [&str; 2] = ["de", "to"];

struct Generator<'a> {
    cfg: &'a SynthConfig,
    world: &'a World,
}

impl Generator<'_> {
    fn filler_noun(&self, predicate: usize, case: Case, rng: &mut RngStream) -> usize {
        if rng.bernoulli(self.cfg.purity) {
            let class = self.world.preference[predicate][case.index()];
            let members = self.cfg.nouns.div_ceil(self.cfg.classes);
            loop {
                let n = class + self.cfg.classes * rng.index(members);
                if n < self.cfg.nouns {
                    return n;
                }
            }
        }
        rng.index(self.cfg.nouns)
    }

    fn category(&self, case: Case, rng: &mut RngStream) -> Category {
        let r = self.cfg.rates(case).as_array();
        let cats = [Category::Overt, Category::Case, Category::Zero, Category::Exo, Category::Null];
        cats[rng.weighted_index(&r).unwrap_or(4)]
    }

    fn clause(&self, d: &mut Draft, pred_node: usize, pred: usize, other: Option<usize>, rng: &mut RngStream) {
        let cats = CASES.map(|c| self.category(c, rng));
        for case in CASES {
            let cat = cats[case.index()];
            let marker = match cat {
                Category::Overt => MARKERS[case.index()],
                Category::Case => "wa",
                _ => continue,
            };
            let n = self.filler_noun(pred, case, rng);
            let node = d.add(NodeKind::Noun { id: n, marker }, Some(pred_node));
            d.slots.push((pred_node, case, DraftFiller::Node(node), cat));
        }
        for _ in 0..rng.index(self.cfg.max_distractors + 1) {
            let n = rng.index(self.cfg.nouns);
            let marker = ADJUNCT_MARKERS[rng.index(2)];
            d.add(NodeKind::Noun { id: n, marker }, Some(pred_node));
        }
        for case in CASES {
            match cats[case.index()] {
                Category::Zero => {
                    let n = self.filler_noun(pred, case, rng);
                    let host = match other {
                        Some(o) if rng.bernoulli(0.5) => o,
                        _ => {
                            let nouns = d.noun_children(pred_node);
                            if nouns.is_empty() {
                                let extra = rng.index(self.cfg.nouns);
                                d.add(NodeKind::Noun { id: extra, marker: "de" }, Some(pred_node))
                            } else {
                                nouns[rng.index(nouns.len())]
                            }
                        }
                    };
                    let marker = if host == other.unwrap_or(usize::MAX) { ADJUNCT_MARKERS[rng.index(2)] } else { "no" };
                    let node = d.add(NodeKind::Noun { id: n, marker }, Some(host));
                    d.slots.push((pred_node, case, DraftFiller::Node(node), Category::Zero));
                }
                Category::Exo => d.slots.push((
                    pred_node,
                    case,
                    DraftFiller::Exo(self.world.exophora[pred]),
                    Category::Exo,
                )),
                Category::Null => d.slots.push((pred_node, case, DraftFiller::Null, Category::Null)),
                _ => {}
            }
        }
    }

    fn sentence(&self, rng: &mut RngStream) -> AnnotatedSentence {
        let mut d = Draft::default();
        let main_pred = rng.index(self.cfg.predicates);
        let main = d.add(
            NodeKind::Predicate {
                id: main_pred,
                inflection: "past",
            },
            None,
        );
        let embedded = rng.bernoulli(self.cfg.two_clause_rate).then(|| {
            let p = rng.index(self.cfg.predicates);
            (d.add(NodeKind::Predicate { id: p, inflection: "te" }, Some(main)), p)
        });
        match embedded {
            Some((e, ep)) => {
                self.clause(&mut d, e, ep, Some(main), rng);
                self.clause(&mut d, main, main_pred, Some(e), rng);
            }
            None => self.clause(&mut d, main, main_pred, None, rng),
        }
        let mut order = Vec::with_capacity(d.nodes.len() + 1);
        d.linearize(main, rng, &mut order);
        let mut position = vec![0; d.nodes.len()];
        for (i, &node) in order.iter().enumerate() {
            position[node] = i;
        }
        let mut s = Sentence::default();
        for &node in &order {
            let n = &d.nodes[node];
            let token = match n.kind {
                NodeKind::Predicate { id, inflection } => Token::new(&World::predicate(id), "verb", "-", inflection),
                NodeKind::Noun { id, marker } => Token::new(&World::noun(id), "noun", marker, "*"),
            };
            s.tokens.push(token);
            s.heads.push(n.head.map(|h| position[h]));
            s.predicates.push(matches!(n.kind, NodeKind::Predicate { .. }));
        }
        s.tokens.push(Token::new("。", "punct", "-", "*"));
        s.heads.push(Some(position[main]));
        s.predicates.push(false);
        let mut slots = BTreeMap::new();
        for (pred_node, case, filler, category) in d.slots {
            let filler = match filler {
                DraftFiller::Node(n) => Filler::Token(position[n]),
                DraftFiller::Exo(f) => f,
                DraftFiller::Null => Filler::Null,
            };
            slots.insert((position[pred_node], case), GoldSlot::new(case, filler, category));
        }
        AnnotatedSentence { sentence: s, slots }
    }

    fn corpus(&self, n: usize, rng: &mut RngStream) -> Corpus {
        Corpus {
            sentences: (0..n).map(|_| self.sentence(rng)).collect(),
        }
    }
}

fn embeddings(cfg: &SynthConfig, world: &World, rng: &mut RngStream) -> String {
    let d = cfg.embedding_dim;
    let mut centroids = || -> Vec<Vec<f64>> {
        (0..cfg.classes).map(|_| (0..d).map(|_| rng.normal(0.0, 1.0)).collect()).collect()
    };
    let noun_centroids = centroids();
    let predicate_centroids = centroids();
    let mut out = String::new();
    let mut line = |word: String, v: Vec<f64>| {
        out.push_str(&word);
        for x in v {
            write!(out, " {x:.6}").expect("writing to a String");
        }
        out.push('\n');
    };
    for n in 0..cfg.nouns {
        let c = &noun_centroids[world.noun_class[n]];
        line(
            World::noun(n),
            c.iter().map(|&x| x + rng.normal(0.0, cfg.embedding_noise)).collect(),
        );
    }
    for p in 0..cfg.predicates {
        let c = &predicate_centroids[world.preference[p][0]];
        line(
            World::predicate(p),
            c.iter().map(|&x| x + rng.normal(0.0, cfg.embedding_noise)).collect(),
        );
    }
    out
}

/// Generates the four splits and the word vectors. Splits use separate
/// streams derived from the seed; the lexicon is shared.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput, SynthError> {
    cfg.validate()?;
    let world = World::new(cfg, &mut RngStream::derive(cfg.seed, "synth.world"));
    let gen = Generator { cfg, world: &world };
    let labeled = gen.corpus(cfg.labeled, &mut RngStream::derive(cfg.seed, "synth.labeled"));
    let raw_gold = gen.corpus(cfg.raw, &mut RngStream::derive(cfg.seed, "synth.raw"));
    let dev = gen.corpus(cfg.dev, &mut RngStream::derive(cfg.seed, "synth.dev"));
    let test = gen.corpus(cfg.test, &mut RngStream::derive(cfg.seed, "synth.test"));
    let embeddings = embeddings(cfg, &world, &mut RngStream::derive(cfg.seed, "synth.embeddings"));
    let raw = RawCorpus {
        sentences: raw_gold.sentences.into_iter().map(|a| a.sentence).collect(),
        skipped_without_predicate: 0,
    };
    Ok(SynthOutput {
        world,
        labeled,
        raw,
        dev,
        test,
        embeddings,
    })
}
