//! Final list selection from a user's Pareto front by angular closeness to
//! the anchor fitness vectors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{ObjectiveVector, SolutionList, UserId};
use crate::error::{Error, Result};
use crate::evolution::Individual;
use crate::metrics::f_beta;
use crate::transfer::AnchorSet;

/// Angle between two objective vectors in `[0, π]`. A zero-norm `a` is
/// maximally far (π); a zero-norm `b` is rejected.
pub fn angle(a: &ObjectiveVector, b: &ObjectiveVector) -> Result<f64> {
    let nb = b.norm();
    if nb == 0.0 {
        return Err(Error::Config("anchor fitness vector has zero norm".into()));
    }
    let na = a.norm();
    if na == 0.0 {
        return Ok(std::f64::consts::PI);
    }
    Ok((a.dot(*b) / (na * nb)).clamp(-1.0, 1.0).acos())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionPolicy {
    /// Report this region's selection instead of the best-F1 anchor's.
    pub pinned_cluster: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub cluster: usize,
    pub list: SolutionList,
    pub objectives: ObjectiveVector,
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinalSelection {
    pub user: UserId,
    pub per_cluster: BTreeMap<usize, Selection>,
    /// Region whose pick is the reported list; `None` when no anchors existed.
    pub default_cluster: Option<usize>,
    pub default_list: SolutionList,
    pub default_objectives: ObjectiveVector,
}

/// Index of the front member closest in angle to `target`; ties go to higher
/// accuracy, then lower index.
fn closest(front: &[Individual], target: &ObjectiveVector) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, m) in front.iter().enumerate() {
        let theta = angle(&m.objectives, target)?;
        best = match best {
            None => Some((i, theta)),
            Some((j, t)) => {
                let better =
                    theta < t || (theta == t && m.objectives.acc > front[j].objectives.acc);
                Some(if better { (i, theta) } else { (j, t) })
            }
        };
    }
    best.ok_or_else(|| Error::Data("empty Pareto front".into()))
}

fn f1_of(v: &ObjectiveVector) -> f64 {
    f_beta(v.acc, v.div, v.nov, 1.0)
}

/// Picks one front member per anchor region plus a default list. Without
/// anchors the default is the front member with the best F1 of its own
/// objectives.
pub fn select_final(
    user: UserId,
    front: &[Individual],
    anchors: Option<&AnchorSet>,
    policy: &SelectionPolicy,
) -> Result<FinalSelection> {
    if front.is_empty() {
        return Err(Error::Data(format!("user {user}: empty Pareto front")));
    }
    let anchors = anchors.filter(|a| !a.anchors.is_empty());
    let Some(anchors) = anchors else {
        let best = (0..front.len())
            .max_by(|&a, &b| {
                f1_of(&front[a].objectives)
                    .total_cmp(&f1_of(&front[b].objectives))
                    .then(b.cmp(&a))
            })
            .expect("non-empty front");
        return Ok(FinalSelection {
            user,
            per_cluster: BTreeMap::new(),
            default_cluster: None,
            default_list: front[best].list.clone(),
            default_objectives: front[best].objectives,
        });
    };

    let mut per_cluster = BTreeMap::new();
    for anchor in &anchors.anchors {
        let (i, theta) = closest(front, &anchor.fitness)?;
        per_cluster.insert(
            anchor.cluster,
            Selection {
                cluster: anchor.cluster,
                list: front[i].list.clone(),
                objectives: front[i].objectives,
                angle: theta,
            },
        );
    }

    let default_cluster = match policy.pinned_cluster {
        Some(c) if per_cluster.contains_key(&c) => c,
        Some(c) => {
            return Err(Error::Config(format!("pinned cluster {c} has no anchor")));
        }
        None => {
            anchors
                .anchors
                .iter()
                .rev()
                .max_by(|a, b| f1_of(&a.fitness).total_cmp(&f1_of(&b.fitness)))
                .expect("non-empty anchors")
                .cluster
        }
    };
    let chosen = &per_cluster[&default_cluster];
    Ok(FinalSelection {
        user,
        default_cluster: Some(default_cluster),
        default_list: chosen.list.clone(),
        default_objectives: chosen.objectives,
        per_cluster,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ItemId;
    use crate::transfer::Anchor;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

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

    fn anchors(fits: &[ObjectiveVector]) -> AnchorSet {
        AnchorSet {
            user: UserId(0),
            anchors: fits
                .iter()
                .enumerate()
                .map(|(c, &f)| Anchor {
                    cluster: c,
                    list: SolutionList(vec![ItemId(100 + c as u32)]),
                    fitness: f,
                })
                .collect(),
        }
    }

    #[test]
    fn angle_examples() {
        let a = v(0.3, 0.2, 0.9);
        assert!(angle(&a, &a).unwrap().abs() < 1e-7);
        assert!((angle(&v(1.0, 0.0, 0.0), &v(0.0, 1.0, 0.0)).unwrap() - FRAC_PI_2).abs() < 1e-15);
        assert!((angle(&v(1.0, 1.0, 0.0), &v(1.0, 0.0, 0.0)).unwrap() - FRAC_PI_4).abs() < 1e-12);
        assert_eq!(angle(&v(0.0, 0.0, 0.0), &v(1.0, 0.0, 0.0)).unwrap(), PI);
        assert!(angle(&v(1.0, 0.0, 0.0), &v(0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn single_member_front_wins_everywhere() {
        let front = [ind(v(0.5, 0.1, 0.2), 1)];
        let a = anchors(&[v(1.0, 0.0, 0.0), v(0.0, 0.0, 1.0)]);
        let sel = select_final(UserId(0), &front, Some(&a), &SelectionPolicy::default()).unwrap();
        assert!(sel.per_cluster.values().all(|s| s.list == front[0].list));
        assert_eq!(sel.default_list, front[0].list);
    }

    #[test]
    fn exact_match_is_selected() {
        let front = [
            ind(v(0.9, 0.1, 0.1), 0),
            ind(v(0.2, 0.6, 0.5), 1),
            ind(v(0.1, 0.1, 0.9), 2),
        ];
        let a = anchors(&[v(0.2, 0.6, 0.5)]);
        let sel = select_final(UserId(0), &front, Some(&a), &SelectionPolicy::default()).unwrap();
        assert_eq!(sel.per_cluster[&0].list, front[1].list);
        assert!(sel.per_cluster[&0].angle < 1e-7);
    }

    #[test]
    fn default_follows_best_f1_anchor_or_pin() {
        let front = [ind(v(0.9, 0.05, 0.05), 0), ind(v(0.5, 0.5, 0.5), 1)];
        let a = anchors(&[v(1.0, 0.01, 0.01), v(0.4, 0.4, 0.4)]);
        let sel = select_final(UserId(0), &front, Some(&a), &SelectionPolicy::default()).unwrap();
        assert_eq!(sel.default_cluster, Some(1));
        assert_eq!(sel.default_list, front[1].list);

        let pinned = SelectionPolicy {
            pinned_cluster: Some(0),
        };
        let sel = select_final(UserId(0), &front, Some(&a), &pinned).unwrap();
        assert_eq!(sel.default_list, front[0].list);

        let bad = SelectionPolicy {
            pinned_cluster: Some(7),
        };
        assert!(select_final(UserId(0), &front, Some(&a), &bad).is_err());
    }

    #[test]
    fn no_anchors_uses_own_f1_and_empty_front_errors() {
        let front = [ind(v(0.9, 0.05, 0.05), 0), ind(v(0.5, 0.5, 0.5), 1)];
        let sel = select_final(UserId(0), &front, None, &SelectionPolicy::default()).unwrap();
        assert_eq!(sel.default_cluster, None);
        assert_eq!(sel.default_list, front[1].list);
        assert!(select_final(UserId(0), &[], None, &SelectionPolicy::default()).is_err());
    }

    fn vec3() -> impl Strategy<Value = ObjectiveVector> {
        (0.01f64..1.0, 0.01f64..1.0, 0.01f64..1.0).prop_map(|(a, b, c)| v(a, b, c))
    }

    proptest! {
        #[test]
        fn angle_scale_invariant(a in vec3(), b in vec3(), s in 0.1f64..10.0, t in 0.1f64..10.0) {
            let base = angle(&a, &b).unwrap();
            let scaled = angle(&v(a.acc * s, a.div * s, a.nov * s), &v(b.acc * t, b.div * t, b.nov * t)).unwrap();
            prop_assert!((base - scaled).abs() < 1e-7);
            prop_assert!((0.0..=PI).contains(&base));
        }

        #[test]
        fn selection_matches_exhaustive_argmin(
            front in proptest::collection::vec(vec3(), 1..12),
            targets in proptest::collection::vec(vec3(), 1..5)
        ) {
            let members: Vec<Individual> = front.iter().enumerate().map(|(i, &o)| ind(o, i as u32)).collect();
            let a = anchors(&targets);
            let sel = select_final(UserId(0), &members, Some(&a), &SelectionPolicy::default()).unwrap();
            for (c, t) in targets.iter().enumerate() {
                let min = front.iter().map(|o| angle(o, t).unwrap()).fold(f64::INFINITY, f64::min);
                let got = &sel.per_cluster[&c];
                prop_assert_eq!(got.angle, min);
                prop_assert!(members.iter().any(|m| m.list == got.list));
            }
        }
    }
}
