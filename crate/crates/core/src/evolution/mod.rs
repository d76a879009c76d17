//! Per-user NSGA-II search over recommendation lists.

pub mod init;
pub mod operators;
pub mod sorting;

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{ObjectiveVector, Problem, SolutionList, UserId};
use crate::error::{Error, Result};

pub use init::{guided_init, project_onto, random_init, GuidedInitConfig};
pub use operators::{apply_mutation, crossover, crossover_at, mutate, repair, MutationKind};
pub use sorting::{
    assign_rank_and_crowding, crowding_distance, environmental_selection, fast_nondominated_sort,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub list: SolutionList,
    pub objectives: ObjectiveVector,
    /// Front index, 0 for non-dominated.
    pub rank: usize,
    pub crowding: f64,
}

impl Individual {
    pub fn new(list: SolutionList, problem: &Problem<'_>) -> Self {
        let objectives = problem.evaluate(&list);
        Individual {
            list,
            objectives,
            rank: 0,
            crowding: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub user: UserId,
    pub members: Vec<Individual>,
    pub capacity: usize,
}

impl Population {
    pub fn new(user: UserId, mut members: Vec<Individual>, capacity: usize) -> Self {
        assign_rank_and_crowding(&mut members);
        Population {
            user,
            members,
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn objectives(&self) -> Vec<ObjectiveVector> {
        self.members.iter().map(|m| m.objectives).collect()
    }

    /// Non-dominated members, freshly sorted, in population order.
    pub fn pareto_front(&self) -> Vec<Individual> {
        let objectives = self.objectives();
        fast_nondominated_sort(&objectives)
            .into_iter()
            .next()
            .unwrap_or_default()
            .into_iter()
            .map(|i| {
                let mut m = self.members[i].clone();
                m.rank = 0;
                m
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub pop_size: usize,
    pub generations: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            pop_size: 50,
            generations: 10,
            crossover_prob: 0.9,
            mutation_prob: 0.2,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pop_size < 2 {
            return Err(Error::Config("pop_size must be at least 2".into()));
        }
        for (name, p) in [
            ("crossover_prob", self.crossover_prob),
            ("mutation_prob", self.mutation_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

/// Binary tournament on (rank, crowding); ties go to the lower index.
pub fn binary_tournament<R: Rng + ?Sized>(members: &[Individual], rng: &mut R) -> usize {
    let a = rng.random_range(0..members.len());
    let b = rng.random_range(0..members.len());
    match sorting::crowded_cmp(members, a, b) {
        std::cmp::Ordering::Greater => b,
        _ => a,
    }
}

/// Drops exact ordered-list repeats (first occurrence wins), then re-admits
/// dropped copies in order if fewer than `min_len` distinct lists remain.
pub(crate) fn dedup_lists(members: Vec<Individual>, min_len: usize) -> Vec<Individual> {
    let mut seen = HashSet::with_capacity(members.len());
    let mut unique = Vec::with_capacity(members.len());
    let mut repeats = Vec::new();
    for m in members {
        if seen.insert(m.list.clone()) {
            unique.push(m);
        } else {
            repeats.push(m);
        }
    }
    let shortfall = min_len.saturating_sub(unique.len());
    unique.extend(repeats.into_iter().take(shortfall));
    unique
}

/// One generation: tournament selection, crossover, mutation, then elitist
/// selection over parents and offspring.
pub fn evolve_generation<R: Rng + ?Sized>(
    pop: &Population,
    problem: &Problem<'_>,
    config: &EvolutionConfig,
    rng: &mut R,
) -> Population {
    let mut parents = pop.members.clone();
    assign_rank_and_crowding(&mut parents);

    let n_offspring = config.pop_size;
    let mut offspring = Vec::with_capacity(n_offspring + 1);
    while offspring.len() < n_offspring {
        let a = &parents[binary_tournament(&parents, rng)];
        let b = &parents[binary_tournament(&parents, rng)];
        let (la, lb) = if rng.random_bool(config.crossover_prob) {
            crossover(&a.list, &b.list, problem.cand, rng)
        } else {
            (a.list.clone(), b.list.clone())
        };
        for list in [la, lb] {
            let child = Individual::new(list, problem);
            offspring.push(mutate(&child, problem, config.mutation_prob, rng));
        }
    }
    offspring.truncate(n_offspring);

    let mut combined = parents;
    combined.extend(offspring);
    let combined = dedup_lists(combined, config.pop_size);
    Population {
        user: pop.user,
        members: environmental_selection(combined, config.pop_size),
        capacity: config.pop_size,
    }
}

/// Plain NSGA-II for `generations` steps, no knowledge transfer.
pub fn run_generations<R: Rng + ?Sized>(
    mut pop: Population,
    problem: &Problem<'_>,
    config: &EvolutionConfig,
    generations: usize,
    rng: &mut R,
) -> Population {
    for _ in 0..generations {
        pop = evolve_generation(&pop, problem, config, rng);
    }
    pop
}
