//! Non-dominated sorting, crowding distance and elitist survivor selection.

use std::cmp::Ordering;

use crate::domain::{dominates, ObjectiveVector};

use super::Individual;

/// Partitions indices into successive dominance fronts (front 0 is non-dominated).
/// Indices within a front are ascending.
pub fn fast_nondominated_sort(objectives: &[ObjectiveVector]) -> Vec<Vec<usize>> {
    let n = objectives.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut counts = vec![0usize; n];
    for i in 0..n {
        for j in (i + 1)..n {
            if dominates(&objectives[i], &objectives[j]) {
                dominated_by[i].push(j);
                counts[j] += 1;
            } else if dominates(&objectives[j], &objectives[i]) {
                dominated_by[j].push(i);
                counts[i] += 1;
            }
        }
    }

    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| counts[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &p in &current {
            for &q in &dominated_by[p] {
                counts[q] -= 1;
                if counts[q] == 0 {
                    next.push(q);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of every member of `front` (aligned with it).
pub fn crowding_distance(objectives: &[ObjectiveVector], front: &[usize]) -> Vec<f64> {
    let m = front.len();
    let mut distance = vec![0.0; m];
    if m <= 2 {
        return vec![f64::INFINITY; m];
    }
    for obj in 0..3 {
        let value = |pos: usize| objectives[front[pos]].to_array()[obj];
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            value(a)
                .partial_cmp(&value(b))
                .unwrap_or(Ordering::Equal)
                .then(front[a].cmp(&front[b]))
        });
        let range = value(order[m - 1]) - value(order[0]);
        // a flat objective contributes nothing, boundaries included
        if range <= 0.0 {
            continue;
        }
        distance[order[0]] = f64::INFINITY;
        distance[order[m - 1]] = f64::INFINITY;
        for w in 1..m - 1 {
            let pos = order[w];
            if distance[pos].is_finite() {
                distance[pos] += (value(order[w + 1]) - value(order[w - 1])) / range;
            }
        }
    }
    distance
}

/// Sets `rank` and `crowding` on every member and returns the fronts.
pub fn assign_rank_and_crowding(members: &mut [Individual]) -> Vec<Vec<usize>> {
    let objectives: Vec<ObjectiveVector> = members.iter().map(|m| m.objectives).collect();
    let fronts = fast_nondominated_sort(&objectives);
    for (rank, front) in fronts.iter().enumerate() {
        let crowding = crowding_distance(&objectives, front);
        for (&idx, c) in front.iter().zip(crowding) {
            members[idx].rank = rank;
            members[idx].crowding = c;
        }
    }
    fronts
}

/// Orders by rank ascending, then crowding descending, then index ascending.
pub(crate) fn crowded_cmp(members: &[Individual], a: usize, b: usize) -> Ordering {
    members[a]
        .rank
        .cmp(&members[b].rank)
        .then_with(|| {
            members[b]
                .crowding
                .partial_cmp(&members[a].crowding)
                .unwrap_or(Ordering::Equal)
        })
        .then(a.cmp(&b))
}

/// Indices of the survivors: whole fronts in rank order, the last admitted
/// front truncated by descending crowding (ties to the lower index).
/// Ranks and crowding of `members` are (re)assigned.
pub fn select_indices(members: &mut [Individual], capacity: usize) -> Vec<usize> {
    let fronts = assign_rank_and_crowding(members);
    let mut chosen = Vec::with_capacity(capacity);
    for front in fronts {
        if chosen.len() + front.len() <= capacity {
            chosen.extend_from_slice(&front);
        } else {
            let mut last = front;
            last.sort_by(|&a, &b| crowded_cmp(members, a, b));
            chosen.extend_from_slice(&last[..capacity - chosen.len()]);
        }
        if chosen.len() == capacity {
            break;
        }
    }
    chosen
}

pub fn environmental_selection(mut combined: Vec<Individual>, capacity: usize) -> Vec<Individual> {
    if combined.len() <= capacity {
        assign_rank_and_crowding(&mut combined);
        return combined;
    }
    let mut keep = select_indices(&mut combined, capacity);
    keep.sort_unstable();
    let mut slots: Vec<Option<Individual>> = combined.into_iter().map(Some).collect();
    let mut survivors: Vec<Individual> = keep
        .into_iter()
        .map(|i| slots[i].take().expect("each index selected once"))
        .collect();
    // crowding is relative to the surviving fronts
    assign_rank_and_crowding(&mut survivors);
    survivors
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ItemId, SolutionList};
    use proptest::prelude::*;

    fn v(a: f64, b: f64, c: f64) -> ObjectiveVector {
        ObjectiveVector::new(a, b, c)
    }

    fn ind(o: ObjectiveVector, tag: u32) -> Individual {
        Individual {
            list: SolutionList(vec![ItemId(tag)]),
            objectives: o,
            rank: 0,
            crowding: 0.0,
        }
    }

    /// Brute-force fronts: peel off the pairwise non-dominated set repeatedly.
    fn oracle_fronts(objs: &[ObjectiveVector]) -> Vec<Vec<usize>> {
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

    #[test]
    fn identical_objectives_single_front() {
        let objs = vec![v(0.5, 0.5, 0.5); 5];
        assert_eq!(fast_nondominated_sort(&objs), vec![vec![0, 1, 2, 3, 4]]);
    }

    #[test]
    fn chain_gives_singleton_fronts() {
        let objs = vec![v(1.0, 1.0, 1.0), v(3.0, 3.0, 3.0), v(2.0, 2.0, 2.0)];
        assert_eq!(
            fast_nondominated_sort(&objs),
            vec![vec![1], vec![2], vec![0]]
        );
    }

    #[test]
    fn crowding_small_fronts_are_infinite() {
        let objs = vec![v(0.0, 1.0, 0.0), v(1.0, 0.0, 0.0)];
        assert!(crowding_distance(&objs, &[0, 1])
            .iter()
            .all(|d| d.is_infinite()));
        assert!(crowding_distance(&objs, &[1])
            .iter()
            .all(|d| d.is_infinite()));
    }

    #[test]
    fn crowding_hand_example() {
        let objs = vec![v(0.0, 1.0, 0.3), v(0.5, 0.5, 0.3), v(1.0, 0.0, 0.3)];
        let d = crowding_distance(&objs, &[0, 1, 2]);
        assert!(d[0].is_infinite() && d[2].is_infinite());
        assert!((d[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn crowding_interior_duplicates_get_zero() {
        let objs = vec![
            v(0.0, 1.0, 0.0),
            v(0.5, 0.5, 0.0),
            v(0.5, 0.5, 0.0),
            v(0.5, 0.5, 0.0),
            v(1.0, 0.0, 0.0),
        ];
        let d = crowding_distance(&objs, &[0, 1, 2, 3, 4]);
        assert_eq!(d[2], 0.0);
        assert!(d[0].is_infinite() && d[4].is_infinite());
    }

    #[test]
    fn selection_identity_at_capacity() {
        let members: Vec<Individual> = (0..4).map(|i| ind(v(i as f64, 0.0, 0.0), i)).collect();
        let out = environmental_selection(members.clone(), 4);
        let tags: Vec<_> = out.iter().map(|m| m.list.0[0]).collect();
        assert_eq!(
            tags,
            members.iter().map(|m| m.list.0[0]).collect::<Vec<_>>()
        );
    }

    #[test]
    fn selection_truncates_single_front_by_crowding() {
        // all on the plane a + b = 1: one front
        let members: Vec<Individual> = [0.0, 0.1, 0.2, 0.6, 1.0]
            .iter()
            .enumerate()
            .map(|(i, &a)| ind(v(a, 1.0 - a, 0.0), i as u32))
            .collect();
        let out = environmental_selection(members, 3);
        let mut tags: Vec<u32> = out.iter().map(|m| m.list.0[0].0).collect();
        tags.sort_unstable();
        // boundaries 0 and 4, then the widest neighbour gap: index 3 (0.2..1.0)
        assert_eq!(tags, vec![0, 3, 4]);
    }

    fn points() -> impl Strategy<Value = Vec<ObjectiveVector>> {
        proptest::collection::vec((0u8..5, 0u8..5, 0u8..5), 1..40).prop_map(|v| {
            v.into_iter()
                .map(|(a, b, c)| ObjectiveVector::new(a as f64, b as f64, c as f64))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn sort_matches_brute_force(objs in points()) {
            prop_assert_eq!(fast_nondominated_sort(&objs), oracle_fronts(&objs));
        }

        #[test]
        fn selection_respects_rank_then_crowding(objs in points(), cap in 1usize..40) {
            let cap = cap.min(objs.len());
            let mut members: Vec<Individual> =
                objs.iter().enumerate().map(|(i, &o)| ind(o, i as u32)).collect();
            let chosen = select_indices(&mut members, cap);
            prop_assert_eq!(chosen.len(), cap);
            for r in 0..members.len() {
                if chosen.contains(&r) { continue; }
                for &s in &chosen {
                    let (sel, rej) = (&members[s], &members[r]);
                    prop_assert!(
                        sel.rank < rej.rank || (sel.rank == rej.rank && sel.crowding >= rej.crowding)
                    );
                    // elitism: no discarded vector strictly dominates a rank-0 survivor
                    if sel.rank == 0 {
                        prop_assert!(!dominates(&rej.objectives, &sel.objectives));
                    }
                }
            }
        }
    }
}
