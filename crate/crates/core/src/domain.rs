//! Identifiers, item metadata, candidate pools and the three list objectives.
//!
//! All objectives are maximized: accuracy is the mean base score of the list,
//! diversity is the fraction of the category universe the list covers, and
//! novelty rewards long-tail items.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! id_type {
    ($name:ident) => {
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(ItemId);
id_type!(UserId);
id_type!(CategoryId);

#[derive(Debug, Clone, PartialEq)]
pub struct ItemMeta {
    pub item: ItemId,
    /// Sorted, duplicate-free, non-empty.
    pub categories: Vec<CategoryId>,
    /// Training-set interaction count, at least 1.
    pub pop_count: u64,
    pub feature: Vec<f64>,
}

/// Run-wide item metadata plus the derived constants the objectives need.
#[derive(Debug, Clone)]
pub struct Catalog {
    items: BTreeMap<ItemId, ItemMeta>,
    total_categories: usize,
    max_pop: u64,
    feature_dim: usize,
}

impl Catalog {
    pub fn new(items: impl IntoIterator<Item = ItemMeta>, total_categories: usize) -> Result<Self> {
        if total_categories == 0 {
            return Err(Error::Config("total_categories must be at least 1".into()));
        }
        let mut map = BTreeMap::new();
        let mut feature_dim = None;
        let mut max_pop = 0;
        for mut meta in items {
            if meta.categories.is_empty() {
                return Err(Error::Data(format!("item {} has no categories", meta.item)));
            }
            if meta.pop_count == 0 {
                return Err(Error::Data(format!(
                    "item {} has zero popularity",
                    meta.item
                )));
            }
            match feature_dim {
                None => feature_dim = Some(meta.feature.len()),
                Some(d) if d != meta.feature.len() => {
                    return Err(Error::Dimension {
                        expected: d,
                        got: meta.feature.len(),
                    })
                }
                _ => {}
            }
            meta.categories.sort_unstable();
            meta.categories.dedup();
            max_pop = max_pop.max(meta.pop_count);
            if map.insert(meta.item, meta).is_some() {
                return Err(Error::Data("duplicate item in catalog".into()));
            }
        }
        Ok(Catalog {
            items: map,
            total_categories,
            max_pop: max_pop.max(1),
            feature_dim: feature_dim.unwrap_or(0),
        })
    }

    pub fn get(&self, item: ItemId) -> Result<&ItemMeta> {
        self.items.get(&item).ok_or(Error::MissingMetadata(item))
    }

    pub fn contains(&self, item: ItemId) -> bool {
        self.items.contains_key(&item)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ItemMeta> {
        self.items.values()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn total_categories(&self) -> usize {
        self.total_categories
    }

    pub fn max_pop(&self) -> u64 {
        self.max_pop
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }
}

/// A user's scored candidate pool.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    user: UserId,
    items: Vec<(ItemId, f64)>,
    positive: ItemId,
    index: HashMap<ItemId, usize>,
}

impl CandidateSet {
    pub fn new(user: UserId, items: Vec<(ItemId, f64)>, positive: ItemId) -> Result<Self> {
        let mut index = HashMap::with_capacity(items.len());
        for (pos, &(item, score)) in items.iter().enumerate() {
            if !score.is_finite() {
                return Err(Error::User {
                    user,
                    message: format!("non-finite base score for item {item}"),
                });
            }
            if index.insert(item, pos).is_some() {
                return Err(Error::User {
                    user,
                    message: format!("duplicate candidate item {item}"),
                });
            }
        }
        if !index.contains_key(&positive) {
            return Err(Error::User {
                user,
                message: format!("positive item {positive} missing from candidates"),
            });
        }
        Ok(CandidateSet {
            user,
            items,
            positive,
            index,
        })
    }

    pub fn user(&self) -> UserId {
        self.user
    }

    pub fn positive(&self) -> ItemId {
        self.positive
    }

    pub fn items(&self) -> &[(ItemId, f64)] {
        &self.items
    }

    pub fn item_ids(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.items.iter().map(|&(i, _)| i)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, item: ItemId) -> bool {
        self.index.contains_key(&item)
    }

    pub fn score(&self, item: ItemId) -> Option<f64> {
        self.index.get(&item).map(|&p| self.items[p].1)
    }

    /// Replaces every base score; `scores` must be aligned with `items()`.
    pub fn with_scores(mut self, scores: &[f64]) -> Result<Self> {
        if scores.len() != self.items.len() {
            return Err(Error::Dimension {
                expected: self.items.len(),
                got: scores.len(),
            });
        }
        for (slot, &s) in self.items.iter_mut().zip(scores) {
            slot.1 = s;
        }
        Ok(self)
    }
}

/// An ordered recommendation list. Validity is relative to a candidate set.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SolutionList(pub Vec<ItemId>);

impl SolutionList {
    pub fn items(&self) -> &[ItemId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, item: ItemId) -> bool {
        self.0.contains(&item)
    }

    /// Checks length `k`, distinctness and candidate membership.
    pub fn validate(&self, cand: &CandidateSet, k: usize) -> Result<()> {
        if self.0.len() != k {
            return Err(Error::InvalidSolution(format!(
                "list has {} items, expected {k}",
                self.0.len()
            )));
        }
        for (pos, item) in self.0.iter().enumerate() {
            if !cand.contains(*item) {
                return Err(Error::InvalidSolution(format!(
                    "item {item} is not a candidate of user {}",
                    cand.user()
                )));
            }
            if self.0[..pos].contains(item) {
                return Err(Error::InvalidSolution(format!("item {item} repeated")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectiveVector {
    pub acc: f64,
    pub div: f64,
    pub nov: f64,
}

impl ObjectiveVector {
    pub fn new(acc: f64, div: f64, nov: f64) -> Self {
        ObjectiveVector { acc, div, nov }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.acc, self.div, self.nov]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        ObjectiveVector::new(a[0], a[1], a[2])
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(self, other: Self) -> f64 {
        self.acc * other.acc + self.div * other.div + self.nov * other.nov
    }
}

/// True iff `a` is no worse on every objective and strictly better on one.
pub fn dominates(a: &ObjectiveVector, b: &ObjectiveVector) -> bool {
    dominates_slice(&a.to_array(), &b.to_array())
}

pub(crate) fn dominates_slice(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return false;
        }
        if x > y {
            strict = true;
        }
    }
    strict
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoveltyMode {
    /// Mean of `1 / pop_count`.
    Literal,
    /// Mean of `1 - pop_count / max_pop`, keeps novelty in [0, 1].
    #[default]
    Normalized,
}

pub fn eval_accuracy(list: &SolutionList, cand: &CandidateSet) -> Result<f64> {
    if list.is_empty() {
        return Err(Error::InvalidSolution("empty list".into()));
    }
    let mut sum = 0.0;
    for &item in list.items() {
        sum += cand.score(item).ok_or_else(|| {
            Error::InvalidSolution(format!(
                "item {item} is not a candidate of user {}",
                cand.user()
            ))
        })?;
    }
    Ok(sum / list.len() as f64)
}

pub fn eval_diversity(list: &SolutionList, catalog: &Catalog) -> Result<f64> {
    let mut covered: Vec<CategoryId> = Vec::with_capacity(list.len() * 2);
    for &item in list.items() {
        covered.extend_from_slice(&catalog.get(item)?.categories);
    }
    covered.sort_unstable();
    covered.dedup();
    Ok(covered.len() as f64 / catalog.total_categories() as f64)
}

pub fn eval_novelty(list: &SolutionList, catalog: &Catalog, mode: NoveltyMode) -> Result<f64> {
    if list.is_empty() {
        return Err(Error::InvalidSolution("empty list".into()));
    }
    let max_pop = catalog.max_pop() as f64;
    let mut sum = 0.0;
    for &item in list.items() {
        let pop = catalog.get(item)?.pop_count as f64;
        sum += match mode {
            NoveltyMode::Literal => 1.0 / pop,
            NoveltyMode::Normalized => 1.0 - pop / max_pop,
        };
    }
    Ok(sum / list.len() as f64)
}

pub fn evaluate(
    list: &SolutionList,
    cand: &CandidateSet,
    catalog: &Catalog,
    mode: NoveltyMode,
) -> Result<ObjectiveVector> {
    Ok(ObjectiveVector {
        acc: eval_accuracy(list, cand)?,
        div: eval_diversity(list, catalog)?,
        nov: eval_novelty(list, catalog, mode)?,
    })
}

/// A single user's optimization problem: candidate pool, metadata and list length.
///
/// Construction checks that every candidate has metadata, so evaluating a
/// list drawn from the pool cannot fail afterwards.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub cand: &'a CandidateSet,
    pub catalog: &'a Catalog,
    pub novelty: NoveltyMode,
    pub k: usize,
}

impl<'a> Problem<'a> {
    pub fn new(
        cand: &'a CandidateSet,
        catalog: &'a Catalog,
        novelty: NoveltyMode,
        k: usize,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("list length K must be at least 1".into()));
        }
        if cand.len() < k {
            return Err(Error::Config(format!(
                "user {} has {} candidates, fewer than K = {k}",
                cand.user(),
                cand.len()
            )));
        }
        for item in cand.item_ids() {
            catalog.get(item)?;
        }
        Ok(Problem {
            cand,
            catalog,
            novelty,
            k,
        })
    }

    pub fn user(&self) -> UserId {
        self.cand.user()
    }

    pub fn evaluate(&self, list: &SolutionList) -> ObjectiveVector {
        evaluate(list, self.cand, self.catalog, self.novelty)
            .expect("list drawn from a validated candidate pool")
    }
}
