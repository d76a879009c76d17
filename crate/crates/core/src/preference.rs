//! Turns a user's population into soft-labelled training examples.
//!
//! Members are sorted by accuracy and split into `n_clusters` contiguous
//! preference regions. Within a region, the number of lists containing an item
//! is softmax-normalized into its label, and the item's feature vector is
//! extended with a one-hot region code.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::domain::{Catalog, ItemId, UserId};
use crate::error::{Error, Result};
use crate::evolution::{Individual, Population};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuilderConfig {
    pub n_clusters: usize,
}

impl Default for BuilderConfig {
    fn default() -> Self {
        BuilderConfig { n_clusters: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceExample {
    pub user: UserId,
    pub cluster: usize,
    pub item: ItemId,
    /// `[item feature ‖ one-hot(cluster)]`; the user enters through the scorer's embedding.
    pub features: Vec<f64>,
    pub label: f64,
}

/// Sorts by descending accuracy (ties keep population order) and splits into
/// `n_clusters` contiguous groups; earlier groups absorb the remainder.
pub fn partition_population(pop: &Population, n_clusters: usize) -> Result<Vec<Vec<&Individual>>> {
    if n_clusters == 0 || pop.len() < n_clusters {
        return Err(Error::Config(format!(
            "cannot split {} solutions into {n_clusters} clusters",
            pop.len()
        )));
    }
    let mut order: Vec<usize> = (0..pop.len()).collect();
    order.sort_by(|&a, &b| {
        pop.members[b]
            .objectives
            .acc
            .total_cmp(&pop.members[a].objectives.acc)
            .then(a.cmp(&b))
    });

    let base = pop.len() / n_clusters;
    let extra = pop.len() % n_clusters;
    let mut clusters = Vec::with_capacity(n_clusters);
    let mut start = 0;
    for c in 0..n_clusters {
        let size = base + usize::from(c < extra);
        clusters.push(
            order[start..start + size]
                .iter()
                .map(|&i| &pop.members[i])
                .collect(),
        );
        start += size;
    }
    Ok(clusters)
}

/// Number of lists in the cluster containing each item.
pub fn item_frequencies(cluster: &[&Individual]) -> BTreeMap<ItemId, usize> {
    let mut counts = BTreeMap::new();
    for ind in cluster {
        for &item in ind.list.items() {
            *counts.entry(item).or_insert(0) += 1;
        }
    }
    counts
}

/// Max-shifted softmax over the frequencies.
pub fn soft_labels(freqs: &BTreeMap<ItemId, usize>) -> BTreeMap<ItemId, f64> {
    let max = freqs.values().copied().max().unwrap_or(0) as f64;
    let exps: Vec<(ItemId, f64)> = freqs
        .iter()
        .map(|(&i, &n)| (i, (n as f64 - max).exp()))
        .collect();
    let total: f64 = exps.iter().map(|(_, e)| e).sum();
    exps.into_iter().map(|(i, e)| (i, e / total)).collect()
}

pub fn one_hot(index: usize, width: usize) -> impl Iterator<Item = f64> {
    (0..width).map(move |j| if j == index { 1.0 } else { 0.0 })
}

/// Examples in cluster-major, item-id-minor order.
pub fn build_examples(
    pop: &Population,
    catalog: &Catalog,
    config: &BuilderConfig,
) -> Result<Vec<PreferenceExample>> {
    let clusters = partition_population(pop, config.n_clusters)?;
    let mut examples = Vec::new();
    for (lambda, cluster) in clusters.iter().enumerate() {
        for (item, label) in soft_labels(&item_frequencies(cluster)) {
            let meta = catalog.get(item)?;
            let features = meta
                .feature
                .iter()
                .copied()
                .chain(one_hot(lambda, config.n_clusters))
                .collect();
            examples.push(PreferenceExample {
                user: pop.user,
                cluster: lambda,
                item,
                features,
                label,
            });
        }
    }
    Ok(examples)
}

/// Largest deviation from 1 of any per-(user, cluster) label sum.
pub fn max_label_sum_error(examples: &[PreferenceExample]) -> f64 {
    let mut sums: BTreeMap<(UserId, usize), f64> = BTreeMap::new();
    for e in examples {
        *sums.entry((e.user, e.cluster)).or_insert(0.0) += e.label;
    }
    sums.values().map(|s| (s - 1.0).abs()).fold(0.0, f64::max)
}

/// Tab-separated dump: user, cluster, item, label, then the features.
pub fn write_examples<W: Write>(
    out: &mut W,
    examples: &[PreferenceExample],
) -> std::io::Result<()> {
    writeln!(out, "user\tcluster\titem\tlabel\tfeatures")?;
    for e in examples {
        let feats: Vec<String> = e.features.iter().map(|f| f.to_string()).collect();
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            e.user,
            e.cluster,
            e.item,
            e.label,
            feats.join(",")
        )?;
    }
    Ok(())
}
