#![allow(dead_code)]

use pareto_rerank::config::Config;
use pareto_rerank::data::SyntheticSpec;
use pareto_rerank::evolution::operators::{apply_mutation, crossover, repair, MutationKind};
use pareto_rerank::rng::{stream_rng, Stream};
use pareto_rerank::scorer::{backward, ScoreInput, ScorerParams};
use pareto_rerank::{CandidateSet, ItemId, ObjectiveVector, SolutionList, UserId};
use rand::seq::SliceRandom;
use rand::Rng;

/// Small config that runs the whole pipeline in well under a second.
pub fn tiny_config(seed: u64) -> Config {
    let mut c = Config {
        seed,
        ..Config::default()
    };
    c.data.synthetic = Some(SyntheticSpec {
        users: 15,
        items: 160,
        categories: 8,
        ..SyntheticSpec::default()
    });
    c.data.negatives = 40;
    c.evolution.pop_size = 12;
    c.evolution.generations = 4;
    c.init.n_user_clusters = 3;
    c.init.init_generations = 2;
    c.transfer.tau = Some(2);
    c.transfer.n_clusters = 3;
    c.scorer.epochs = 2;
    c.scorer.hidden = [8, 4];
    c.scorer.user_dim = 4;
    c
}

/// 200 users, 500 items, 20 categories, K = 10, N_pop = 50, G = 10, τ = 3, seed 7.
pub fn reference_config() -> Config {
    let mut c = Config {
        seed: 7,
        k: 10,
        ..Config::default()
    };
    c.data.synthetic = Some(SyntheticSpec {
        users: 200,
        items: 500,
        categories: 20,
        ..SyntheticSpec::default()
    });
    c.evolution.pop_size = 50;
    c.evolution.generations = 10;
    c.transfer.tau = Some(3);
    c
}

fn param_slices(p: &mut ScorerParams) -> Vec<&mut [f64]> {
    vec![
        p.user_embeddings.as_slice_mut().unwrap(),
        p.w1.as_slice_mut().unwrap(),
        p.b1.as_slice_mut().unwrap(),
        p.w2.as_slice_mut().unwrap(),
        p.b2.as_slice_mut().unwrap(),
        p.w3.as_slice_mut().unwrap(),
        p.b3.as_slice_mut().unwrap(),
    ]
}

fn flatten(p: &ScorerParams) -> Vec<f64> {
    let mut p = p.clone();
    param_slices(&mut p)
        .into_iter()
        .flat_map(|s| s.to_vec())
        .collect()
}

fn perturbed(p: &ScorerParams, index: usize, delta: f64) -> ScorerParams {
    let mut q = p.clone();
    let mut i = index;
    for s in param_slices(&mut q) {
        if i < s.len() {
            s[i] += delta;
            break;
        }
        i -= s.len();
    }
    q
}

/// Largest relative error between `backward` and central differences over
/// `trials` random nets with every width at most 8.
pub fn max_gradient_error(trials: usize, seed: u64, h: f64) -> f64 {
    let mut rng = stream_rng(seed, Stream::Scorer);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let n_users = rng.random_range(1..=3u32);
        let item_dim = rng.random_range(1..=5);
        let user_dim = rng.random_range(1..=4);
        let hidden = [rng.random_range(1..=8), rng.random_range(1..=8)];
        let users: Vec<UserId> = (0..n_users).map(UserId).collect();
        let mut params = ScorerParams::init(users, item_dim, user_dim, hidden, &mut rng);
        // non-zero biases so every parameter matters
        for b in [&mut params.b1, &mut params.b2] {
            b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        params.b3[0] = rng.random_range(-0.5..0.5);

        let batch = rng.random_range(1..=6);
        let features: Vec<Vec<f64>> = (0..batch)
            .map(|_| (0..item_dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let owners: Vec<UserId> = (0..batch)
            .map(|_| UserId(rng.random_range(0..n_users)))
            .collect();
        let targets: Vec<f64> = (0..batch).map(|_| rng.random_range(0.0..1.0)).collect();
        let inputs: Vec<ScoreInput> = features
            .iter()
            .zip(&owners)
            .map(|(f, &u)| ScoreInput {
                features: f,
                user: u,
            })
            .collect();

        let (_, grad) = backward(&params, &inputs, &targets).unwrap();
        let analytic = flatten(&grad);
        for (i, &a) in analytic.iter().enumerate() {
            let up = backward(&perturbed(&params, i, h), &inputs, &targets)
                .unwrap()
                .0;
            let down = backward(&perturbed(&params, i, -h), &inputs, &targets)
                .unwrap()
                .0;
            let numeric = (up - down) / (2.0 * h);
            let scale = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / scale);
        }
    }
    worst
}

/// Peels off the points no remaining point dominates, one layer at a time.
pub fn brute_force_fronts(objs: &[ObjectiveVector]) -> Vec<Vec<usize>> {
    let mut remaining: Vec<usize> = (0..objs.len()).collect();
    let mut fronts = Vec::new();
    while !remaining.is_empty() {
        let front: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&i| {
                !remaining.iter().any(|&j| {
                    let (a, b) = (objs[j].to_array(), objs[i].to_array());
                    (0..3).all(|d| a[d] >= b[d]) && (0..3).any(|d| a[d] > b[d])
                })
            })
            .collect();
        remaining.retain(|i| !front.contains(i));
        fronts.push(front);
    }
    fronts
}

/// Random population of up to 64 objective vectors; half the draws use a
/// coarse grid so ties and duplicates are common.
pub fn random_objectives<R: Rng>(rng: &mut R) -> Vec<ObjectiveVector> {
    let n = rng.random_range(1..=64);
    let coarse = rng.random_bool(0.5);
    (0..n)
        .map(|_| {
            let mut v = [0.0; 3];
            for x in &mut v {
                *x = if coarse {
                    f64::from(rng.random_range(0..5u8)) / 4.0
                } else {
                    rng.random_range(0.0..1.0)
                };
            }
            ObjectiveVector::from_array(v)
        })
        .collect()
}

pub fn random_candidates<R: Rng>(rng: &mut R, k: usize) -> CandidateSet {
    let n = rng.random_range(k..=k + 40);
    let mut ids: Vec<u32> = (0..1000).collect();
    ids.shuffle(rng);
    let items: Vec<(ItemId, f64)> = ids[..n]
        .iter()
        .map(|&i| (ItemId(i), rng.random_range(0.0..1.0)))
        .collect();
    let positive = items[0].0;
    CandidateSet::new(UserId(0), items, positive).unwrap()
}

fn random_list<R: Rng>(rng: &mut R, cand: &CandidateSet, k: usize) -> SolutionList {
    let mut ids: Vec<ItemId> = cand.item_ids().collect();
    ids.shuffle(rng);
    ids.truncate(k);
    SolutionList(ids)
}

/// Applies crossover, both mutation moves and a repair of a duplicate-laden
/// raw list `trials` times; returns the number of invalid outputs.
pub fn invalid_operator_outputs(trials: usize, seed: u64) -> usize {
    let mut rng = stream_rng(seed, Stream::Evolution);
    let mut invalid = 0;
    for _ in 0..trials {
        let k = rng.random_range(1..=12);
        let cand = random_candidates(&mut rng, k);
        let a = random_list(&mut rng, &cand, k);
        let b = random_list(&mut rng, &cand, k);
        let (c, d) = crossover(&a, &b, &cand, &mut rng);
        let kind = if rng.random_bool(0.5) {
            MutationKind::Swap
        } else {
            MutationKind::Replace
        };
        let e = apply_mutation(&c, kind, &cand, &mut rng);
        let raw: Vec<ItemId> = (0..k).map(|_| a.0[rng.random_range(0..k)]).collect();
        let f = repair(&raw, &cand, &mut rng);
        invalid += [c, d, e, f]
            .iter()
            .filter(|l| l.validate(&cand, k).is_err())
            .count();
    }
    invalid
}
