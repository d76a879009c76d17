//! Non-evolutionary reference re-rankers.

use std::collections::BTreeSet;

use crate::domain::{CandidateSet, Catalog, CategoryId, ItemId, SolutionList};
use crate::error::{Error, Result};

/// The `k` candidates with the highest base score; ties keep candidate order.
pub fn topk(cand: &CandidateSet, k: usize) -> SolutionList {
    let mut order: Vec<usize> = (0..cand.len()).collect();
    order.sort_by(|&a, &b| {
        cand.items()[b]
            .1
            .total_cmp(&cand.items()[a].1)
            .then(a.cmp(&b))
    });
    SolutionList(
        order
            .into_iter()
            .take(k)
            .map(|p| cand.items()[p].0)
            .collect(),
    )
}

pub fn jaccard(a: &BTreeSet<CategoryId>, b: &BTreeSet<CategoryId>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Greedy maximal marginal relevance: repeatedly pick the candidate
/// maximizing `λ·score − (1−λ)·max_{j∈S} sim(i, j)`, with Jaccard similarity
/// over category sets. Ties go to the higher base score, then the earlier
/// candidate.
pub fn mmr(cand: &CandidateSet, catalog: &Catalog, k: usize, lambda: f64) -> Result<SolutionList> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("MMR lambda {lambda} outside [0, 1]")));
    }
    let cats: Vec<BTreeSet<CategoryId>> = cand
        .item_ids()
        .map(|i| Ok(catalog.get(i)?.categories.iter().copied().collect()))
        .collect::<Result<_>>()?;
    let items = cand.items();
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let mut max_sim = vec![0.0f64; items.len()];
    let mut used = vec![false; items.len()];

    while chosen.len() < k.min(items.len()) {
        let mut best: Option<(usize, f64)> = None;
        for p in (0..items.len()).filter(|&p| !used[p]) {
            let gain = lambda * items[p].1 - (1.0 - lambda) * max_sim[p];
            let better = match best {
                None => true,
                Some((q, g)) => gain > g || (gain == g && tie_break(items, p, q)),
            };
            if better {
                best = Some((p, gain));
            }
        }
        let (p, _) = best.expect("unselected candidate exists");
        used[p] = true;
        chosen.push(p);
        for q in 0..items.len() {
            max_sim[q] = max_sim[q].max(jaccard(&cats[q], &cats[p]));
        }
    }
    Ok(SolutionList(
        chosen.into_iter().map(|p| items[p].0).collect(),
    ))
}

/// Equal gains fall back to the top-k order: higher score, then earlier.
fn tie_break(items: &[(ItemId, f64)], p: usize, q: usize) -> bool {
    items[p].1 > items[q].1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ItemMeta, UserId};
    use proptest::prelude::*;

    fn fixture(scores: &[f64], cats: &[&[u32]]) -> (CandidateSet, Catalog) {
        let cand = CandidateSet::new(
            UserId(0),
            scores
                .iter()
                .enumerate()
                .map(|(i, &s)| (ItemId(i as u32), s))
                .collect(),
            ItemId(0),
        )
        .unwrap();
        let catalog = Catalog::new(
            cats.iter().enumerate().map(|(i, c)| ItemMeta {
                item: ItemId(i as u32),
                categories: c.iter().map(|&x| CategoryId(x)).collect(),
                pop_count: 1,
                feature: vec![],
            }),
            8,
        )
        .unwrap();
        (cand, catalog)
    }

    #[test]
    fn topk_order_and_ties() {
        let (cand, _) = fixture(&[0.2, 0.9, 0.5, 0.9], &[&[0], &[0], &[0], &[0]]);
        assert_eq!(topk(&cand, 3).0, vec![ItemId(1), ItemId(3), ItemId(2)]);
    }

    #[test]
    fn mmr_hand_trace() {
        // scores 0.9 0.8 0.7 0.6 0.5; categories {0,1} {0,1} {2} {0} {3}
        let (cand, catalog) = fixture(
            &[0.9, 0.8, 0.7, 0.6, 0.5],
            &[&[0, 1], &[0, 1], &[2], &[0], &[3]],
        );
        // step 1: gains 0.7·s, item 0 (0.63)
        // step 2: item1 0.56-0.3 = 0.26, item2 0.49, item3 0.42-0.15 = 0.27, item4 0.35 -> item 2
        // step 3: item1 0.26, item3 0.27, item4 0.35 -> item 4
        // step 4: item1 0.26, item3 0.27 -> item 3
        let list = mmr(&cand, &catalog, 5, 0.7).unwrap();
        assert_eq!(
            list.0,
            vec![ItemId(0), ItemId(2), ItemId(4), ItemId(3), ItemId(1)]
        );
        assert_eq!(
            mmr(&cand, &catalog, 2, 0.7).unwrap().0,
            vec![ItemId(0), ItemId(2)]
        );
        assert!(mmr(&cand, &catalog, 2, 1.5).is_err());
    }

    #[test]
    fn jaccard_values() {
        let a: BTreeSet<CategoryId> = [0, 1].map(CategoryId).into();
        let b: BTreeSet<CategoryId> = [1, 2].map(CategoryId).into();
        assert!((jaccard(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard(&a, &a), 1.0);
    }

    proptest! {
        #[test]
        fn mmr_lambda_one_is_topk(
            scores in proptest::collection::vec(0u8..10, 5..40),
            cats in proptest::collection::vec(proptest::collection::vec(0u32..8, 1..3), 40),
            k in 1usize..6,
        ) {
            let cat_refs: Vec<&[u32]> = cats[..scores.len()].iter().map(|c| c.as_slice()).collect();
            let s: Vec<f64> = scores.iter().map(|&x| x as f64 / 10.0).collect();
            let (cand, catalog) = fixture(&s, &cat_refs);
            prop_assert_eq!(mmr(&cand, &catalog, k, 1.0).unwrap(), topk(&cand, k));
            let first = mmr(&cand, &catalog, k, 0.3).unwrap().0[0];
            prop_assert_eq!(first, topk(&cand, 1).0[0]);
        }
    }
}
