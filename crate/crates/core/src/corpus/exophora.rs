use super::types::*;

/// Surface forms also accepted as the author entity.
pub const AUTHOR_EXPRESSIONS: [&str; 4] = ["私", "僕", "我々", "弊社"];
/// Surface forms also accepted as the reader entity.
pub const READER_EXPRESSIONS: [&str; 4] = ["あなた", "君", "客", "皆様"];

fn exophora_of(surface: &str) -> Option<Filler> {
    if AUTHOR_EXPRESSIONS.contains(&surface) {
        Some(Filler::Author)
    } else if READER_EXPRESSIONS.contains(&surface) {
        Some(Filler::Reader)
    } else {
        None
    }
}

/// Records evaluation aliases between author/reader expressions and the
/// exophora entities. Gold fillers themselves are left unchanged.
pub fn map_exophora_expressions(mut corpus: Corpus) -> Corpus {
    for a in &mut corpus.sentences {
        let s = &a.sentence;
        for slot in a.slots.values_mut() {
            slot.aliases = aliases_for(s, slot.filler);
        }
    }
    corpus
}

pub fn aliases_for(sentence: &Sentence, filler: Filler) -> Vec<Filler> {
    let mut set = vec![filler];
    match filler {
        Filler::Token(t) => {
            if let Some(e) = exophora_of(&sentence.tokens[t].surface) {
                set.push(e);
            }
        }
        Filler::Author | Filler::Reader => {
            for i in sentence.candidate_tokens() {
                if exophora_of(&sentence.tokens[i].surface) == Some(filler) {
                    set.push(Filler::Token(i));
                }
            }
        }
        Filler::Null => {}
    }
    set
}
