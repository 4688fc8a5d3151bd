//! Filtered ranks over dense score vectors.
//!
//! Ties are pessimistic: a competitor with a score equal to the ranked entity
//! counts as ranked above it.

use crate::error::{Error, Result};
use crate::kg::EntityId;

/// 1-based rank of `e` by descending score, ignoring every other member of
/// `known` (which must be sorted).
pub fn filtered_rank(scores: &[f64], e: EntityId, known: &[EntityId]) -> Result<usize> {
    let target = *scores.get(e.index()).ok_or(Error::MissingEntity(e.0))?;
    let mut above = 0usize;
    let mut k = 0usize;
    for (i, &s) in scores.iter().enumerate() {
        if i == e.index() {
            continue;
        }
        while k < known.len() && known[k].index() < i {
            k += 1;
        }
        if k < known.len() && known[k].index() == i {
            continue;
        }
        if s >= target {
            above += 1;
        }
    }
    Ok(above + 1)
}

/// Rank of `e` against every other entity.
pub fn raw_rank(scores: &[f64], e: EntityId) -> Result<usize> {
    filtered_rank(scores, e, &[])
}

/// Filtered ranks for every entity in `known` at once, in the order of
/// `known`. Runs in O(|V| log |V|).
pub fn filtered_ranks(scores: &[f64], known: &[EntityId]) -> Result<Vec<usize>> {
    if let Some(e) = known.iter().find(|e| e.index() >= scores.len()) {
        return Err(Error::MissingEntity(e.0));
    }
    let mut is_known = vec![false; scores.len()];
    for e in known {
        is_known[e.index()] = true;
    }
    let mut others: Vec<f64> = scores
        .iter()
        .zip(&is_known)
        .filter(|(_, &k)| !k)
        .map(|(&s, _)| s)
        .collect();
    others.sort_unstable_by(|a, b| b.total_cmp(a));
    Ok(known
        .iter()
        .map(|e| {
            let s = scores[e.index()];
            // number of non-answers with score >= s
            others.partition_point(|&o| o >= s) + 1
        })
        .collect())
}
