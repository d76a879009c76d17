//! Corpus-level ranking metrics and the 3-D hypervolume indicator.

use crate::domain::{eval_diversity, eval_novelty, Catalog, ItemId, NoveltyMode, SolutionList};
use crate::error::{Error, Result};

fn hit_rank(list: &[ItemId], positive: ItemId, k: usize) -> Option<usize> {
    list.iter()
        .take(k)
        .position(|&i| i == positive)
        .map(|p| p + 1)
}

/// Fraction of users whose positive item is within the first `k` entries.
pub fn hr_at_k(lists: &[&[ItemId]], positives: &[ItemId], k: usize) -> f64 {
    if lists.is_empty() {
        return 0.0;
    }
    let hits = lists
        .iter()
        .zip(positives)
        .filter(|(l, &p)| hit_rank(l, p, k).is_some())
        .count();
    hits as f64 / lists.len() as f64
}

pub fn ndcg_for_user(list: &[ItemId], positive: ItemId, k: usize) -> f64 {
    hit_rank(list, positive, k).map_or(0.0, |r| 1.0 / ((r + 1) as f64).log2())
}

pub fn ndcg_at_k(lists: &[&[ItemId]], positives: &[ItemId], k: usize) -> f64 {
    if lists.is_empty() {
        return 0.0;
    }
    let total: f64 = lists
        .iter()
        .zip(positives)
        .map(|(l, &p)| ndcg_for_user(l, p, k))
        .sum();
    total / lists.len() as f64
}

fn prefix(list: &[ItemId], k: usize) -> SolutionList {
    SolutionList(list[..k.min(list.len())].to_vec())
}

pub fn div_at_k(lists: &[&[ItemId]], catalog: &Catalog, k: usize) -> Result<f64> {
    if lists.is_empty() {
        return Err(Error::Data("no users to evaluate".into()));
    }
    let mut total = 0.0;
    for l in lists {
        total += eval_diversity(&prefix(l, k), catalog)?;
    }
    Ok(total / lists.len() as f64)
}

pub fn nov_at_k(
    lists: &[&[ItemId]],
    catalog: &Catalog,
    k: usize,
    mode: NoveltyMode,
) -> Result<f64> {
    if lists.is_empty() {
        return Err(Error::Data("no users to evaluate".into()));
    }
    let mut total = 0.0;
    for l in lists {
        total += eval_novelty(&prefix(l, k), catalog, mode)?;
    }
    Ok(total / lists.len() as f64)
}

/// Three-way trade-off score:
/// `(1 + 2β²)·hr·div·nov / (hr + β²·div + β²·nov)`, 0 when the denominator is 0.
pub fn f_beta(hr: f64, div: f64, nov: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = hr + b2 * div + b2 * nov;
    if denom == 0.0 {
        return 0.0;
    }
    (1.0 + 2.0 * b2) * hr * div * nov / denom
}

/// Dominated area of 2-D points (maximization) above `reference`.
fn hypervolume_2d(points: &mut [[f64; 2]], reference: [f64; 2]) -> f64 {
    points.sort_by(|a, b| b[0].total_cmp(&a[0]).then(b[1].total_cmp(&a[1])));
    let mut area = 0.0;
    let mut best_y = reference[1];
    for p in points.iter() {
        if p[1] > best_y {
            area += (p[0] - reference[0]) * (p[1] - best_y);
            best_y = p[1];
        }
    }
    area
}

/// Exact volume dominated by `points` relative to `reference`, all objectives
/// maximized. Slices along the third objective and sweeps each slab in 2-D.
pub fn hypervolume_3d(points: &[[f64; 3]], reference: [f64; 3]) -> Result<f64> {
    for p in points {
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("non-finite point {p:?}")));
        }
        if (0..3).any(|d| p[d] < reference[d]) {
            return Err(Error::Data(format!(
                "point {p:?} does not dominate reference {reference:?}"
            )));
        }
    }
    let mut levels: Vec<f64> = points.iter().map(|p| p[2]).collect();
    levels.sort_by(|a, b| b.total_cmp(a));
    levels.dedup();

    let mut volume = 0.0;
    for (i, &z) in levels.iter().enumerate() {
        let floor = levels.get(i + 1).copied().unwrap_or(reference[2]);
        if z <= floor {
            continue;
        }
        let mut slab: Vec<[f64; 2]> = points
            .iter()
            .filter(|p| p[2] >= z)
            .map(|p| [p[0], p[1]])
            .collect();
        volume += hypervolume_2d(&mut slab, [reference[0], reference[1]]) * (z - floor);
    }
    Ok(volume)
}
