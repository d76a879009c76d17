//! Population initialization: uniform random lists, and guided seeding from
//! pre-optimized representatives of user interest clusters.

use std::collections::{BTreeMap, HashSet};

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{CategoryId, ItemId, Problem, SolutionList};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, user_rng, Rng as StreamRng, Stream};

use super::{dedup_lists, run_generations, EvolutionConfig, Individual, Population};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidedInitConfig {
    pub n_user_clusters: usize,
    /// Generations of plain NSGA-II run on each cluster representative.
    pub init_generations: usize,
    pub kmeans_iterations: usize,
}

impl Default for GuidedInitConfig {
    fn default() -> Self {
        GuidedInitConfig {
            n_user_clusters: 10,
            init_generations: 10,
            kmeans_iterations: 50,
        }
    }
}

/// `n` uniformly random K-lists, each a random K-subset in random order.
pub fn random_lists<R: Rng + ?Sized>(
    problem: &Problem<'_>,
    n: usize,
    rng: &mut R,
) -> Vec<SolutionList> {
    let pool: Vec<ItemId> = problem.cand.item_ids().collect();
    (0..n)
        .map(|_| {
            let mut picked: Vec<ItemId> = sample(rng, pool.len(), problem.k)
                .into_iter()
                .map(|p| pool[p])
                .collect();
            picked.shuffle(rng);
            SolutionList(picked)
        })
        .collect()
}

pub fn random_init<R: Rng + ?Sized>(
    problem: &Problem<'_>,
    n: usize,
    rng: &mut R,
) -> Result<Population> {
    if problem.cand.len() < problem.k {
        return Err(Error::Config(format!(
            "user {}: {} candidates < K = {}",
            problem.user(),
            problem.cand.len(),
            problem.k
        )));
    }
    let members = random_lists(problem, n, rng)
        .into_iter()
        .map(|l| Individual::new(l, problem))
        .collect();
    Ok(Population::new(problem.user(), members, n))
}

/// Maps a list onto another user's pool: items outside the pool (or repeated)
/// are replaced, in position order, by the highest-scoring unused candidates.
/// Returns the projected list and the number of replacements.
pub fn project_onto(list: &SolutionList, problem: &Problem<'_>) -> (SolutionList, usize) {
    let mut used = HashSet::with_capacity(list.len());
    let slots: Vec<Option<ItemId>> = list
        .items()
        .iter()
        .map(|&i| (problem.cand.contains(i) && used.insert(i)).then_some(i))
        .collect();
    let vacancies = slots.iter().filter(|s| s.is_none()).count();
    if vacancies == 0 {
        return (list.clone(), 0);
    }

    let mut ranked: Vec<(usize, ItemId, f64)> = problem
        .cand
        .items()
        .iter()
        .enumerate()
        .filter(|(_, (i, _))| !used.contains(i))
        .map(|(pos, &(i, s))| (pos, i, s))
        .collect();
    ranked.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    let mut fills = ranked.into_iter().map(|(_, i, _)| i);
    let projected = slots
        .into_iter()
        .map(|s| s.unwrap_or_else(|| fills.next().expect("pool holds at least K items")))
        .collect();
    (SolutionList(projected), vacancies)
}

/// Normalized category histogram of each user's candidate pool.
fn category_profiles(problems: &[Problem<'_>]) -> Vec<Vec<f64>> {
    let mut index: BTreeMap<CategoryId, usize> = BTreeMap::new();
    for p in problems {
        for item in p.cand.item_ids() {
            for &c in &p.catalog.get(item).expect("validated").categories {
                let next = index.len();
                index.entry(c).or_insert(next);
            }
        }
    }
    // re-number in category order so profiles do not depend on user order
    for (dense, slot) in index.values_mut().enumerate() {
        *slot = dense;
    }
    problems
        .iter()
        .map(|p| {
            let mut hist = vec![0.0; index.len()];
            for item in p.cand.item_ids() {
                for c in &p.catalog.get(item).expect("validated").categories {
                    hist[index[c]] += 1.0;
                }
            }
            let total: f64 = hist.iter().sum();
            if total > 0.0 {
                hist.iter_mut().for_each(|h| *h /= total);
            }
            hist
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

/// Lloyd's k-means with k-means++ seeding. Returns (assignment, centroids).
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    iterations: usize,
    rng: &mut StreamRng,
) -> (Vec<usize>, Vec<Vec<f64>>) {
    let n = points.len();
    let k = k.clamp(1, n.max(1));
    let mut centroids: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].clone()];
    while centroids.len() < k {
        let weights: Vec<f64> = points
            .iter()
            .map(|p| sq_dist(p, &centroids[nearest(p, &centroids)]))
            .collect();
        let total: f64 = weights.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in weights.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        };
        centroids.push(points[next].clone());
    }

    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    for _ in 0..iterations {
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            sums[c].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        for c in 0..k {
            // an emptied cluster keeps its previous centroid
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    (assignment, centroids)
}

/// Guided initialization.
///
/// Users are clustered by the category distribution of their candidate pools;
/// the user nearest each centroid is pre-optimized with plain NSGA-II and its
/// final front, projected onto each member's own pool, seeds every user of the
/// cluster. Remaining slots are filled with random lists drawn from `rngs`.
pub fn guided_init(
    problems: &[Problem<'_>],
    evolution: &EvolutionConfig,
    init: &GuidedInitConfig,
    seed: u64,
    rngs: &mut [StreamRng],
) -> Result<Vec<Population>> {
    if problems.is_empty() {
        return Err(Error::Config(
            "guided initialization needs at least one user".into(),
        ));
    }
    assert_eq!(problems.len(), rngs.len());

    let profiles = category_profiles(problems);
    let mut cluster_rng = stream_rng(seed, Stream::Clustering);
    let (assignment, centroids) = kmeans(
        &profiles,
        init.n_user_clusters,
        init.kmeans_iterations,
        &mut cluster_rng,
    );

    let representatives: Vec<Option<usize>> = (0..centroids.len())
        .map(|c| {
            (0..problems.len())
                .filter(|&u| assignment[u] == c)
                .min_by(|&a, &b| {
                    sq_dist(&profiles[a], &centroids[c])
                        .total_cmp(&sq_dist(&profiles[b], &centroids[c]))
                        .then(a.cmp(&b))
                })
        })
        .collect();

    let seeds: Vec<Option<Vec<SolutionList>>> = representatives
        .par_iter()
        .map(|rep| -> Result<Option<Vec<SolutionList>>> {
            let Some(u) = *rep else { return Ok(None) };
            let problem = &problems[u];
            let mut rng = user_rng(seed, Stream::PreOptimize, problem.user());
            let start = random_init(problem, evolution.pop_size, &mut rng)?;
            let done = run_generations(start, problem, evolution, init.init_generations, &mut rng);
            Ok(Some(
                done.pareto_front().into_iter().map(|m| m.list).collect(),
            ))
        })
        .collect::<Result<_>>()?;

    problems
        .par_iter()
        .zip(rngs.par_iter_mut())
        .enumerate()
        .map(|(u, (problem, rng))| {
            let Some(front) = seeds[assignment[u]].as_ref() else {
                return random_init(problem, evolution.pop_size, rng);
            };
            let projected: Vec<Individual> = front
                .iter()
                .map(|l| Individual::new(project_onto(l, problem).0, problem))
                .collect();
            let mut members = dedup_lists(projected, 0);
            members.truncate(evolution.pop_size);
            let missing = evolution.pop_size - members.len();
            members.extend(
                random_lists(problem, missing, rng)
                    .into_iter()
                    .map(|l| Individual::new(l, problem)),
            );
            Ok(Population::new(problem.user(), members, evolution.pop_size))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{CandidateSet, Catalog, ItemMeta, NoveltyMode, UserId};

    fn catalog(n: u32, cats: u32) -> Catalog {
        Catalog::new(
            (0..n).map(|i| ItemMeta {
                item: ItemId(i),
                categories: vec![CategoryId(i % cats)],
                pop_count: u64::from(i % 7) + 1,
                feature: vec![],
            }),
            cats as usize,
        )
        .unwrap()
    }

    fn cand(user: u32, items: impl Iterator<Item = u32>) -> CandidateSet {
        let items: Vec<(ItemId, f64)> = items
            .enumerate()
            .map(|(p, i)| (ItemId(i), 1.0 / (p + 1) as f64))
            .collect();
        let pos = items[0].0;
        CandidateSet::new(UserId(user), items, pos).unwrap()
    }

    #[test]
    fn random_init_forced_membership() {
        let cat = catalog(4, 2);
        let c = cand(0, 0..4);
        let p = Problem::new(&c, &cat, NoveltyMode::Normalized, 4).unwrap();
        let mut rng = stream_rng(0, Stream::Evolution);
        let pop = random_init(&p, 1, &mut rng).unwrap();
        let mut items = pop.members[0].list.0.clone();
        items.sort();
        assert_eq!(items, (0..4).map(ItemId).collect::<Vec<_>>());
    }

    #[test]
    fn random_init_valid_and_deterministic() {
        let cat = catalog(100, 5);
        let c = cand(0, 0..100);
        let p = Problem::new(&c, &cat, NoveltyMode::Normalized, 10).unwrap();
        let a = random_init(&p, 50, &mut stream_rng(5, Stream::Evolution)).unwrap();
        let b = random_init(&p, 50, &mut stream_rng(5, Stream::Evolution)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 50);
        a.members
            .iter()
            .for_each(|m| m.list.validate(&c, 10).unwrap());
    }

    #[test]
    fn projection_identity_inside_pool() {
        let cat = catalog(20, 4);
        let c = cand(0, 0..20);
        let p = Problem::new(&c, &cat, NoveltyMode::Normalized, 4).unwrap();
        let l = SolutionList(vec![ItemId(5), ItemId(2), ItemId(9), ItemId(7)]);
        assert_eq!(project_onto(&l, &p), (l, 0));
    }

    #[test]
    fn projection_replaces_exactly_the_absent_items() {
        let cat = catalog(40, 4);
        // pool 10..30, scores decreasing with position: best unused = 10, 11, ...
        let c = cand(0, 10..30);
        let p = Problem::new(&c, &cat, NoveltyMode::Normalized, 6).unwrap();
        let l = SolutionList([12, 1, 14, 2, 3, 10].map(ItemId).to_vec());
        let (out, replaced) = project_onto(&l, &p);
        // oracle: count items outside the pool
        let absent = l.items().iter().filter(|i| !c.contains(**i)).count();
        assert_eq!(absent, 3);
        assert_eq!(replaced, absent);
        out.validate(&c, 6).unwrap();
        assert_eq!(out.0, [12, 11, 14, 13, 15, 10].map(ItemId).to_vec());
    }

    #[test]
    fn single_user_seeds_itself_from_its_own_front() {
        let cat = catalog(100, 6);
        let c = cand(3, 0..100);
        let p = Problem::new(&c, &cat, NoveltyMode::Normalized, 10).unwrap();
        let evo = EvolutionConfig::default();
        let init = GuidedInitConfig::default();
        let mut rngs = vec![user_rng(1, Stream::Evolution, UserId(3))];
        let pops = guided_init(&[p], &evo, &init, 1, &mut rngs).unwrap();
        assert_eq!(pops.len(), 1);
        assert_eq!(pops[0].len(), evo.pop_size);

        let mut rng = user_rng(1, Stream::PreOptimize, UserId(3));
        let start = random_init(&p, evo.pop_size, &mut rng).unwrap();
        let front =
            run_generations(start, &p, &evo, init.init_generations, &mut rng).pareto_front();
        let seeded: HashSet<_> = pops[0].members.iter().map(|m| m.list.clone()).collect();
        for m in front {
            assert!(seeded.contains(&m.list));
        }
    }

    #[test]
    fn guided_init_many_users_valid_and_deterministic() {
        let cat = catalog(300, 8);
        let cands: Vec<CandidateSet> = (0..30u32)
            .map(|u| cand(u, (0..100).map(move |j| (u * 7 + j) % 300)))
            .collect();
        let problems: Vec<Problem> = cands
            .iter()
            .map(|c| Problem::new(c, &cat, NoveltyMode::Normalized, 10).unwrap())
            .collect();
        let evo = EvolutionConfig {
            pop_size: 20,
            ..Default::default()
        };
        let init = GuidedInitConfig {
            n_user_clusters: 4,
            init_generations: 3,
            ..Default::default()
        };
        let run = || {
            let mut rngs: Vec<_> = cands
                .iter()
                .map(|c| user_rng(2, Stream::Evolution, c.user()))
                .collect();
            guided_init(&problems, &evo, &init, 2, &mut rngs).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        for (pop, c) in a.iter().zip(&cands) {
            assert_eq!(pop.user, c.user());
            assert_eq!(pop.len(), 20);
            pop.members
                .iter()
                .for_each(|m| m.list.validate(c, 10).unwrap());
        }
    }

    #[test]
    fn kmeans_separates_obvious_groups() {
        let mut pts = vec![];
        for i in 0..10 {
            pts.push(vec![0.0 + i as f64 * 0.01, 0.0]);
            pts.push(vec![5.0 + i as f64 * 0.01, 5.0]);
        }
        let (assign, _) = kmeans(&pts, 2, 50, &mut stream_rng(0, Stream::Clustering));
        for i in 0..10 {
            assert_eq!(assign[2 * i], assign[0]);
            assert_eq!(assign[2 * i + 1], assign[1]);
        }
        assert_ne!(assign[0], assign[1]);
    }
}
