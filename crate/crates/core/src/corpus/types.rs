use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Case {
    Nom,
    Acc,
    Dat,
}

pub const CASES: [Case; 3] = [Case::Nom, Case::Acc, Case::Dat];

impl Case {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Case::Nom => "NOM",
            Case::Acc => "ACC",
            Case::Dat => "DAT",
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What fills a case slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Filler {
    Token(usize),
    Author,
    Reader,
    Null,
}

impl Filler {
    pub fn is_null(self) -> bool {
        self == Filler::Null
    }

    pub fn is_exophora(self) -> bool {
        matches!(self, Filler::Author | Filler::Reader)
    }

    /// Column encoding: token index, `A`, `R` or `N`.
    pub fn code(self) -> String {
        match self {
            Filler::Token(i) => i.to_string(),
            Filler::Author => "A".into(),
            Filler::Reader => "R".into(),
            Filler::Null => "N".into(),
        }
    }

    /// Inverse of [`Filler::code`].
    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "A" => Some(Filler::Author),
            "R" => Some(Filler::Reader),
            "N" => Some(Filler::Null),
            s => s.parse().ok().map(Filler::Token),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    /// Direct dependent with its surface case marker present.
    Overt,
    /// Direct dependent whose case marker is hidden.
    Case,
    /// In-sentence filler without a direct dependency on the predicate.
    Zero,
    /// Author or reader, not realized in the sentence.
    Exo,
    Null,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Overt => "OVERT",
            Category::Case => "CASE",
            Category::Zero => "ZERO",
            Category::Exo => "EXO",
            Category::Null => "NULL",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "OVERT" => Category::Overt,
            "CASE" => Category::Case,
            "ZERO" => Category::Zero,
            "EXO" => Category::Exo,
            "NULL" => Category::Null,
            _ => return None,
        })
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub pos: String,
    pub detailed_pos: String,
    pub inflection: String,
}

impl Token {
    pub fn new(surface: &str, pos: &str, detailed_pos: &str, inflection: &str) -> Self {
        Token {
            surface: surface.into(),
            pos: pos.into(),
            detailed_pos: detailed_pos.into(),
            inflection: inflection.into(),
        }
    }
}

/// Tokens with a dependency tree and predicate marks.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    /// Head index per token; `None` for the root.
    pub heads: Vec<Option<usize>>,
    pub predicates: Vec<bool>,
    /// `#` lines preceding the sentence, without the leading `#`.
    pub comments: Vec<String>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn predicate_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.predicates
            .iter()
            .enumerate()
            .filter_map(|(i, &p)| p.then_some(i))
    }

    pub fn has_predicate(&self) -> bool {
        self.predicates.iter().any(|&p| p)
    }

    /// Candidate argument tokens: every non-predicate token, in order.
    pub fn candidate_tokens(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.predicates[i]).collect()
    }

    pub fn is_direct_dependent(&self, token: usize, predicate: usize) -> bool {
        self.heads.get(token).copied().flatten() == Some(predicate)
    }

    pub fn is_pseudo(&self) -> bool {
        self.comments.iter().any(|c| c.trim() == "pseudo")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoldSlot {
    pub case: Case,
    pub filler: Filler,
    pub category: Category,
    /// The antecedent lies in a preceding sentence (column value `X`).
    pub inter_sentential: bool,
    /// Fillers also accepted at evaluation time; empty means `{filler}`.
    pub aliases: Vec<Filler>,
}

impl GoldSlot {
    pub fn new(case: Case, filler: Filler, category: Category) -> Self {
        GoldSlot {
            case,
            filler,
            category,
            inter_sentential: false,
            aliases: Vec::new(),
        }
    }

    pub fn accepts(&self, predicted: Filler) -> bool {
        predicted == self.filler || self.aliases.contains(&predicted)
    }

    pub fn alias_set(&self) -> Vec<Filler> {
        if self.aliases.is_empty() {
            vec![self.filler]
        } else {
            self.aliases.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct AnnotatedSentence {
    pub sentence: Sentence,
    /// Exactly three slots for every annotated predicate; predicates removed
    /// by preprocessing have none.
    pub slots: BTreeMap<(usize, Case), GoldSlot>,
}

impl AnnotatedSentence {
    pub fn slot(&self, predicate: usize, case: Case) -> Option<&GoldSlot> {
        self.slots.get(&(predicate, case))
    }

    /// Predicates that carry slots.
    pub fn annotated_predicates(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.slots.keys().map(|&(p, _)| p).collect();
        v.dedup();
        v
    }

    /// Tokens filling at least one gold slot.
    pub fn argument_tokens(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .slots
            .values()
            .filter_map(|s| match s.filler {
                Filler::Token(i) => Some(i),
                _ => None,
            })
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Corpus {
    pub sentences: Vec<AnnotatedSentence>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn slot_count(&self) -> usize {
        self.sentences.iter().map(|s| s.slots.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct RawCorpus {
    pub sentences: Vec<Sentence>,
    /// Sentences dropped at parse time because they mark no predicate.
    pub skipped_without_predicate: usize,
}

impl RawCorpus {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Which evaluation relation a filler has to a predicate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Dependent,
    NonDependent,
    Exophora,
    Null,
}

pub fn relation(sentence: &Sentence, predicate: usize, filler: Filler) -> Relation {
    match filler {
        Filler::Token(i) if sentence.is_direct_dependent(i, predicate) => Relation::Dependent,
        Filler::Token(_) => Relation::NonDependent,
        Filler::Author | Filler::Reader => Relation::Exophora,
        Filler::Null => Relation::Null,
    }
}

/// Whether `category` is consistent with the tree relation of `filler`.
pub fn category_consistent(sentence: &Sentence, predicate: usize, filler: Filler, category: Category) -> bool {
    matches!(
        (relation(sentence, predicate, filler), category),
        (Relation::Dependent, Category::Overt | Category::Case)
            | (Relation::NonDependent, Category::Zero)
            | (Relation::Exophora, Category::Exo)
            | (Relation::Null, Category::Null)
    )
}
