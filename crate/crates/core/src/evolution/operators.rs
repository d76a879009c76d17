//! Variation operators on fixed-length, duplicate-free item lists.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::Rng;

use crate::domain::{CandidateSet, ItemId, Problem, SolutionList};

use super::Individual;

/// Keeps the first occurrence of every item and fills the vacated positions
/// with distinct candidates drawn uniformly from those not already present.
pub fn repair<R: Rng + ?Sized>(raw: &[ItemId], cand: &CandidateSet, rng: &mut R) -> SolutionList {
    let mut present = HashSet::with_capacity(raw.len());
    let slots: Vec<Option<ItemId>> = raw
        .iter()
        .map(|&item| present.insert(item).then_some(item))
        .collect();
    let vacancies = slots.iter().filter(|s| s.is_none()).count();
    if vacancies == 0 {
        return SolutionList(raw.to_vec());
    }

    let pool: Vec<ItemId> = cand.item_ids().filter(|i| !present.contains(i)).collect();
    assert!(
        pool.len() >= vacancies,
        "candidate pool too small to repair a list of length {}",
        raw.len()
    );
    let mut fills = sample(rng, pool.len(), vacancies)
        .into_iter()
        .map(|p| pool[p]);
    SolutionList(
        slots
            .into_iter()
            .map(|s| s.unwrap_or_else(|| fills.next().expect("one fill per vacancy")))
            .collect(),
    )
}

/// Exchanges positions `start..end` between the parents, then repairs both children.
pub fn crossover_at<R: Rng + ?Sized>(
    a: &SolutionList,
    b: &SolutionList,
    start: usize,
    end: usize,
    cand: &CandidateSet,
    rng: &mut R,
) -> (SolutionList, SolutionList) {
    debug_assert!(start < end && end <= a.len() && a.len() == b.len());
    let mut raw_a = a.0.clone();
    let mut raw_b = b.0.clone();
    raw_a[start..end].copy_from_slice(&b.0[start..end]);
    raw_b[start..end].copy_from_slice(&a.0[start..end]);
    let child_a = repair(&raw_a, cand, rng);
    let child_b = repair(&raw_b, cand, rng);
    (child_a, child_b)
}

/// Two-point subsequence exchange with cut points `0 <= start < end <= K`.
pub fn crossover<R: Rng + ?Sized>(
    a: &SolutionList,
    b: &SolutionList,
    cand: &CandidateSet,
    rng: &mut R,
) -> (SolutionList, SolutionList) {
    let k = a.len();
    let start = rng.random_range(0..k);
    let end = rng.random_range(start + 1..=k);
    crossover_at(a, b, start, end, cand, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationKind {
    Swap,
    Replace,
}

/// Applies one mutation move. The result is repaired, so it is always valid.
pub fn apply_mutation<R: Rng + ?Sized>(
    list: &SolutionList,
    kind: MutationKind,
    cand: &CandidateSet,
    rng: &mut R,
) -> SolutionList {
    let mut raw = list.0.clone();
    let k = raw.len();
    match kind {
        MutationKind::Swap => {
            if k >= 2 {
                let i = rng.random_range(0..k);
                let mut j = rng.random_range(0..k - 1);
                if j >= i {
                    j += 1;
                }
                raw.swap(i, j);
            }
        }
        MutationKind::Replace => {
            let outside: Vec<ItemId> = cand.item_ids().filter(|i| !list.contains(*i)).collect();
            if !outside.is_empty() {
                let pos = rng.random_range(0..k);
                raw[pos] = outside[rng.random_range(0..outside.len())];
            }
        }
    }
    repair(&raw, cand, rng)
}

/// With probability `p_m`, applies a swap or a replacement (equally likely)
/// and re-evaluates; otherwise returns the individual unchanged.
pub fn mutate<R: Rng + ?Sized>(
    ind: &Individual,
    problem: &Problem<'_>,
    p_m: f64,
    rng: &mut R,
) -> Individual {
    if p_m <= 0.0 || !rng.random_bool(p_m.min(1.0)) {
        return ind.clone();
    }
    let kind = if rng.random_bool(0.5) {
        MutationKind::Swap
    } else {
        MutationKind::Replace
    };
    Individual::new(apply_mutation(&ind.list, kind, problem.cand, rng), problem)
}
