use super::types::Sentence;
use super::CorpusError;

fn ancestors(s: &Sentence, mut t: usize) -> Vec<usize> {
    let mut chain = vec![t];
    while let Some(h) = s.heads[t] {
        if chain.len() > s.len() {
            break;
        }
        chain.push(h);
        t = h;
    }
    chain
}

/// Tree path from `candidate` to `predicate`, both inclusive, through their
/// lowest common ancestor.
pub fn dependency_path(s: &Sentence, predicate: usize, candidate: usize) -> Result<Vec<usize>, CorpusError> {
    let n = s.len();
    if predicate >= n || candidate >= n {
        return Err(CorpusError::Path(format!(
            "index out of range: predicate {predicate}, candidate {candidate}, length {n}"
        )));
    }
    let up_c = ancestors(s, candidate);
    let up_p = ancestors(s, predicate);
    let (ci, pi) = up_c
        .iter()
        .enumerate()
        .find_map(|(ci, a)| up_p.iter().position(|b| b == a).map(|pi| (ci, pi)))
        .ok_or_else(|| CorpusError::Path(format!("tokens {candidate} and {predicate} are disconnected")))?;
    let mut path: Vec<usize> = up_c[..=ci].to_vec();
    path.extend(up_p[..pi].iter().rev());
    Ok(path)
}
