//! Knowledge transfer: per-region lists synthesized by the trained scorer and
//! merged into a user's population.

use std::collections::HashSet;
use std::io::Write;

use crate::domain::{ItemId, ObjectiveVector, Problem, SolutionList, UserId};
use crate::error::Result;
use crate::evolution::{Individual, Population};
use crate::scorer::{predict_scores, ScorerParams};

#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub cluster: usize,
    pub list: SolutionList,
    pub fitness: ObjectiveVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub user: UserId,
    pub anchors: Vec<Anchor>,
}

/// The `k` best-scored items in descending score order, ties to the lower id.
pub fn top_k(scores: &[(ItemId, f64)], k: usize) -> SolutionList {
    let mut ranked = scores.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    SolutionList(ranked.into_iter().take(k).map(|(i, _)| i).collect())
}

pub fn synthesize_solution(
    params: &ScorerParams,
    problem: &Problem<'_>,
    cluster: usize,
    n_clusters: usize,
) -> Result<SolutionList> {
    let scores = predict_scores(
        params,
        problem.user(),
        cluster,
        n_clusters,
        problem.cand,
        problem.catalog,
    )?;
    Ok(top_k(&scores, problem.k))
}

/// One synthesized, evaluated list per preference region.
pub fn knowledge_transfer(
    params: &ScorerParams,
    problem: &Problem<'_>,
    n_clusters: usize,
) -> Result<AnchorSet> {
    let anchors = (0..n_clusters)
        .map(|cluster| {
            let list = synthesize_solution(params, problem, cluster, n_clusters)?;
            let fitness = problem.evaluate(&list);
            Ok(Anchor {
                cluster,
                list,
                fitness,
            })
        })
        .collect::<Result<_>>()?;
    Ok(AnchorSet {
        user: problem.user(),
        anchors,
    })
}

/// Union of the population and the anchor lists, skipping exact ordered-list
/// repeats. Nothing is truncated; the next selection restores capacity.
pub fn merge(pop: &Population, anchors: &AnchorSet) -> Population {
    let mut seen: HashSet<&SolutionList> = pop.members.iter().map(|m| &m.list).collect();
    let mut members = pop.members.clone();
    for anchor in &anchors.anchors {
        if seen.insert(&anchor.list) {
            members.push(Individual {
                list: anchor.list.clone(),
                objectives: anchor.fitness,
                rank: 0,
                crowding: 0.0,
            });
        }
    }
    Population::new(pop.user, members, pop.capacity)
}

/// Tab-separated rows: user, cluster, items (comma-joined), acc, div, nov.
pub fn write_anchors<W: Write>(out: &mut W, sets: &[AnchorSet]) -> std::io::Result<()> {
    writeln!(out, "user\tcluster\titems\tacc\tdiv\tnov")?;
    for set in sets {
        for a in &set.anchors {
            let items: Vec<String> = a.list.items().iter().map(|i| i.to_string()).collect();
            writeln!(
                out,
                "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}",
                set.user,
                a.cluster,
                items.join(","),
                a.fitness.acc,
                a.fitness.div,
                a.fitness.nov
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{CandidateSet, Catalog, CategoryId, ItemMeta, NoveltyMode};
    use crate::evolution::random_init;
    use crate::rng::{stream_rng, Stream};
    use proptest::prelude::*;

    fn setup(n: u32) -> (CandidateSet, Catalog) {
        let cand = CandidateSet::new(
            UserId(2),
            (0..n)
                .map(|i| (ItemId(i), (i % 10) as f64 / 10.0))
                .collect(),
            ItemId(0),
        )
        .unwrap();
        let catalog = Catalog::new(
            (0..n).map(|i| ItemMeta {
                item: ItemId(i),
                categories: vec![CategoryId(i % 4)],
                pop_count: u64::from(i) + 1,
                feature: vec![i as f64 / n as f64, (i % 4) as f64],
            }),
            4,
        )
        .unwrap();
        (cand, catalog)
    }

    #[test]
    fn top_k_tie_break_and_order() {
        let flat: Vec<(ItemId, f64)> = [5, 3, 9, 1].iter().map(|&i| (ItemId(i), 0.5)).collect();
        assert_eq!(top_k(&flat, 2).0, vec![ItemId(1), ItemId(3)]);

        let decreasing: Vec<(ItemId, f64)> = (0..8)
            .rev()
            .map(|i| (ItemId(i), 1.0 - i as f64 / 10.0))
            .collect();
        assert_eq!(
            top_k(&decreasing, 3).0,
            vec![ItemId(0), ItemId(1), ItemId(2)]
        );
    }

    proptest! {
        #[test]
        fn top_k_matches_full_sort_oracle(scores in proptest::collection::vec(0u8..20, 5..40), k in 1usize..5) {
            let pairs: Vec<(ItemId, f64)> =
                scores.iter().enumerate().map(|(i, &s)| (ItemId(i as u32), s as f64)).collect();
            // oracle: pick the max repeatedly, lowest id on ties
            let mut left = pairs.clone();
            let mut oracle = vec![];
            for _ in 0..k {
                let best = left
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.1 .0.cmp(&a.1 .0)))
                    .map(|(p, _)| p)
                    .unwrap();
                oracle.push(left.remove(best).0);
            }
            prop_assert_eq!(top_k(&pairs, k).0, oracle);
        }
    }

    #[test]
    fn anchors_are_valid_and_consistent() {
        let (cand, catalog) = setup(30);
        let problem = Problem::new(&cand, &catalog, NoveltyMode::Normalized, 5).unwrap();
        let mut rng = stream_rng(0, Stream::Scorer);
        let params = ScorerParams::init(vec![UserId(2)], 2 + 3, 4, [8, 4], &mut rng);
        let set = knowledge_transfer(&params, &problem, 3).unwrap();
        assert_eq!(set.anchors.len(), 3);
        for a in &set.anchors {
            a.list.validate(&cand, 5).unwrap();
            assert_eq!(a.fitness, problem.evaluate(&a.list));
        }
        assert_eq!(set, knowledge_transfer(&params, &problem, 3).unwrap());

        let single = knowledge_transfer(&params, &problem, 1);
        // one-hot width differs from the trained width
        assert!(single.is_err());
        let params1 = ScorerParams::init(vec![UserId(2)], 2 + 1, 4, [8, 4], &mut rng);
        assert_eq!(
            knowledge_transfer(&params1, &problem, 1)
                .unwrap()
                .anchors
                .len(),
            1
        );
    }

    fn anchor_set(lists: Vec<SolutionList>, problem: &Problem<'_>) -> AnchorSet {
        AnchorSet {
            user: problem.user(),
            anchors: lists
                .into_iter()
                .enumerate()
                .map(|(c, list)| Anchor {
                    cluster: c,
                    fitness: problem.evaluate(&list),
                    list,
                })
                .collect(),
        }
    }

    #[test]
    fn merge_counts() {
        let (cand, catalog) = setup(30);
        let problem = Problem::new(&cand, &catalog, NoveltyMode::Normalized, 4).unwrap();
        let mut rng = stream_rng(1, Stream::Evolution);
        let pop = random_init(&problem, 6, &mut rng).unwrap();

        let dupes = anchor_set(
            pop.members[..3].iter().map(|m| m.list.clone()).collect(),
            &problem,
        );
        assert_eq!(merge(&pop, &dupes).members.len(), 6);

        let fresh: Vec<SolutionList> = (0..3)
            .map(|c| SolutionList((0..4).map(|j| ItemId(c * 4 + j)).collect()))
            .filter(|l| !pop.members.iter().any(|m| &m.list == l))
            .collect();
        let n = fresh.len();
        assert_eq!(
            merge(&pop, &anchor_set(fresh, &problem)).members.len(),
            6 + n
        );
    }

    #[test]
    fn merge_never_drops_existing_members() {
        let (cand, catalog) = setup(12);
        let problem = Problem::new(&cand, &catalog, NoveltyMode::Normalized, 3).unwrap();
        let mut rng = stream_rng(2, Stream::Evolution);
        for _ in 0..200 {
            let n = rng.random_range(2..10);
            let pop = random_init(&problem, n, &mut rng).unwrap();
            let extra = random_init(&problem, rng.random_range(1..6), &mut rng).unwrap();
            let mut lists: Vec<SolutionList> =
                extra.members.iter().map(|m| m.list.clone()).collect();
            if rng.random_bool(0.5) {
                lists.push(pop.members[0].list.clone());
            }
            let merged = merge(&pop, &anchor_set(lists.clone(), &problem));
            let have: HashSet<&SolutionList> = merged.members.iter().map(|m| &m.list).collect();
            assert!(pop.members.iter().all(|m| have.contains(&m.list)));
            assert!(lists.iter().all(|l| have.contains(l)));
            assert_eq!(
                &merged.members[..pop.len()]
                    .iter()
                    .map(|m| &m.list)
                    .collect::<Vec<_>>(),
                &pop.members.iter().map(|m| &m.list).collect::<Vec<_>>()
            );
        }
    }
}
