use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::types::*;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessReport {
    /// Slots whose antecedent was in a preceding sentence, now NULL.
    pub inter_sentential_to_null: usize,
    /// Predicates dropped because one token filled two or more of their cases.
    pub predicates_excluded: usize,
}

/// Restricts annotation to intra-sentential arguments and drops predicates
/// with the same token in several cases. Tokens and parses are kept.
pub fn preprocess(mut corpus: Corpus) -> (Corpus, PreprocessReport) {
    let mut report = PreprocessReport::default();
    for a in &mut corpus.sentences {
        for slot in a.slots.values_mut() {
            if slot.inter_sentential {
                slot.inter_sentential = false;
                slot.filler = Filler::Null;
                slot.category = Category::Null;
                slot.aliases.clear();
                report.inter_sentential_to_null += 1;
            }
        }
        let mut excluded = Vec::new();
        for p in a.annotated_predicates() {
            let mut seen = BTreeSet::new();
            let duplicate = CASES.iter().any(|&c| match a.slot(p, c).map(|s| s.filler) {
                Some(Filler::Token(t)) => !seen.insert(t),
                _ => false,
            });
            if duplicate {
                excluded.push(p);
            }
        }
        for p in excluded {
            for c in CASES {
                a.slots.remove(&(p, c));
            }
            report.predicates_excluded += 1;
        }
    }
    (corpus, report)
}
