//! Interaction ingestion, leave-one-out splitting, candidate sampling, base
//! scores, item features and a synthetic dataset generator.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use log::warn;
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{CandidateSet, Catalog, CategoryId, ItemId, ItemMeta, UserId};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng, Rng as StreamRng, Stream};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interaction {
    pub user: UserId,
    pub item: ItemId,
    pub timestamp: i64,
    /// Sorted, distinct, non-empty.
    pub categories: Vec<CategoryId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    #[default]
    Tab,
    Comma,
}

impl Delimiter {
    pub fn as_char(self) -> char {
        match self {
            Delimiter::Tab => '\t',
            Delimiter::Comma => ',',
        }
    }
}

fn parse_categories(field: &str) -> std::result::Result<Vec<CategoryId>, String> {
    let mut cats = field
        .split('|')
        .map(|c| {
            c.trim()
                .parse::<u32>()
                .map(CategoryId)
                .map_err(|_| format!("bad category id {c:?}"))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    cats.sort_unstable();
    cats.dedup();
    if cats.is_empty() {
        return Err("no categories".into());
    }
    Ok(cats)
}

fn parse_row(line: &str, delim: char) -> std::result::Result<Interaction, String> {
    let fields: Vec<&str> = line.split(delim).map(str::trim).collect();
    if fields.len() != 4 {
        return Err(format!("expected 4 fields, found {}", fields.len()));
    }
    let user = fields[0]
        .parse()
        .map_err(|_| format!("bad user id {:?}", fields[0]))?;
    let item = fields[1]
        .parse()
        .map_err(|_| format!("bad item id {:?}", fields[1]))?;
    let timestamp = fields[2]
        .parse()
        .map_err(|_| format!("bad timestamp {:?}", fields[2]))?;
    Ok(Interaction {
        user: UserId(user),
        item: ItemId(item),
        timestamp,
        categories: parse_categories(fields[3])?,
    })
}

/// Parses `user, item, timestamp, c1|c2|…` rows. A first line whose user
/// field is not numeric is taken as a header. Up to `max_malformed` bad rows
/// are skipped with a warning; one more is an error. Exact
/// (user, item, timestamp) repeats keep the first row.
pub fn parse_interactions(
    text: &str,
    delim: Delimiter,
    max_malformed: usize,
    origin: &Path,
) -> Result<Vec<Interaction>> {
    let delim = delim.as_char();
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut malformed = 0;
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if n == 0 {
            let head = line.split(delim).next().unwrap_or("").trim();
            if head.parse::<u32>().is_err() {
                continue;
            }
        }
        match parse_row(line, delim) {
            Ok(row) => {
                if seen.insert((row.user, row.item, row.timestamp)) {
                    out.push(row);
                }
            }
            Err(message) => {
                malformed += 1;
                if malformed > max_malformed {
                    return Err(Error::Parse {
                        path: origin.to_path_buf(),
                        line: line_no,
                        message,
                    });
                }
                warn!(
                    "{}:{line_no}: skipping malformed row: {message}",
                    origin.display()
                );
            }
        }
    }
    if out.is_empty() {
        warn!("{}: no interactions", origin.display());
    }
    Ok(out)
}

pub fn load_interactions(
    path: &Path,
    delim: Delimiter,
    max_malformed: usize,
) -> Result<Vec<Interaction>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(&text, delim, max_malformed, path)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Interaction>,
    pub validation: BTreeMap<UserId, ItemId>,
    pub test: BTreeMap<UserId, ItemId>,
    /// Every item each kept user interacted with.
    pub history: BTreeMap<UserId, BTreeSet<ItemId>>,
}

/// Per user: last interaction by timestamp is the test item, the one before
/// it validation, the rest training. Ties keep input order; users with fewer
/// than 3 interactions are dropped.
pub fn leave_one_out(interactions: &[Interaction]) -> DatasetSplit {
    let mut by_user: BTreeMap<UserId, Vec<&Interaction>> = BTreeMap::new();
    for row in interactions {
        by_user.entry(row.user).or_default().push(row);
    }
    let mut split = DatasetSplit::default();
    for (user, mut rows) in by_user {
        if rows.len() < 3 {
            continue;
        }
        rows.sort_by_key(|r| r.timestamp);
        let n = rows.len();
        split.test.insert(user, rows[n - 1].item);
        split.validation.insert(user, rows[n - 2].item);
        split
            .history
            .insert(user, rows.iter().map(|r| r.item).collect());
        split.train.extend(rows[..n - 2].iter().map(|&r| r.clone()));
    }
    split
}

/// Union of the categories each item was seen with.
pub fn item_categories(interactions: &[Interaction]) -> BTreeMap<ItemId, BTreeSet<CategoryId>> {
    let mut cats: BTreeMap<ItemId, BTreeSet<CategoryId>> = BTreeMap::new();
    for row in interactions {
        cats.entry(row.item)
            .or_default()
            .extend(row.categories.iter().copied());
    }
    cats
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Holdout {
    Validation,
    Test,
}

impl Holdout {
    fn key(self) -> u64 {
        match self {
            Holdout::Validation => 1 << 33,
            Holdout::Test => 1 << 34,
        }
    }
}

/// Positive plus `n_neg` uniform negatives from the catalog, excluding the
/// user's whole history, in shuffled order. Base scores start at 0.
pub fn build_candidates(
    split: &DatasetSplit,
    catalog: &Catalog,
    holdout: Holdout,
    seed: u64,
    n_neg: usize,
) -> Result<BTreeMap<UserId, CandidateSet>> {
    let positives = match holdout {
        Holdout::Validation => &split.validation,
        Holdout::Test => &split.test,
    };
    let all: Vec<ItemId> = catalog.iter().map(|m| m.item).collect();
    let mut out = BTreeMap::new();
    for (&user, &positive) in positives {
        let history = &split.history[&user];
        let pool: Vec<ItemId> = all
            .iter()
            .copied()
            .filter(|i| !history.contains(i))
            .collect();
        if pool.len() < n_neg {
            return Err(Error::User {
                user,
                message: format!("only {} unseen items for {n_neg} negatives", pool.len()),
            });
        }
        let mut rng = <StreamRng as rand::SeedableRng>::seed_from_u64(derive_seed(
            seed,
            Stream::Candidates,
            holdout.key() | u64::from(user.0),
        ));
        let mut items: Vec<ItemId> = sample(&mut rng, pool.len(), n_neg)
            .into_iter()
            .map(|p| pool[p])
            .collect();
        items.push(positive);
        items.shuffle(&mut rng);
        let scored = items.into_iter().map(|i| (i, 0.0)).collect();
        out.insert(user, CandidateSet::new(user, scored, positive)?);
    }
    Ok(out)
}

/// Parses `user, item, score` rows; a non-numeric first line is a header.
pub fn parse_scores(
    text: &str,
    delim: Delimiter,
    origin: &Path,
) -> Result<HashMap<(UserId, ItemId), f64>> {
    let delim = delim.as_char();
    let mut scores = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(delim).map(str::trim).collect();
        if n == 0 && fields[0].parse::<u32>().is_err() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: n + 1,
            message,
        };
        if fields.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", fields.len())));
        }
        let user = fields[0]
            .parse()
            .map_err(|_| bad(format!("bad user id {:?}", fields[0])))?;
        let item = fields[1]
            .parse()
            .map_err(|_| bad(format!("bad item id {:?}", fields[1])))?;
        let score: f64 = fields[2]
            .parse()
            .map_err(|_| bad(format!("bad score {:?}", fields[2])))?;
        if !score.is_finite() {
            return Err(bad(format!("non-finite score {score}")));
        }
        scores.insert((UserId(user), ItemId(item)), score);
    }
    Ok(scores)
}

const MAX_LISTED: usize = 20;

/// Sets every candidate's base score from `scores`. Missing pairs are an error
/// listing the first few offenders.
pub fn attach_scores(
    cands: BTreeMap<UserId, CandidateSet>,
    scores: &HashMap<(UserId, ItemId), f64>,
) -> Result<BTreeMap<UserId, CandidateSet>> {
    let mut missing = Vec::new();
    let mut total_missing = 0;
    for (&user, cand) in &cands {
        for item in cand.item_ids() {
            if !scores.contains_key(&(user, item)) {
                total_missing += 1;
                if missing.len() < MAX_LISTED {
                    missing.push(format!("({user}, {item})"));
                }
            }
        }
    }
    if total_missing > 0 {
        return Err(Error::Data(format!(
            "{total_missing} candidate pairs have no base score: {}{}",
            missing.join(", "),
            if total_missing > MAX_LISTED {
                ", ..."
            } else {
                ""
            }
        )));
    }
    cands
        .into_iter()
        .map(|(user, cand)| {
            let s: Vec<f64> = cand.item_ids().map(|i| scores[&(user, i)]).collect();
            Ok((user, cand.with_scores(&s)?))
        })
        .collect()
}

/// Smoke-test scores: the j-th candidate (0-based) gets `1/(j+1)`.
pub fn uniform_fallback(
    cands: BTreeMap<UserId, CandidateSet>,
) -> Result<BTreeMap<UserId, CandidateSet>> {
    cands
        .into_iter()
        .map(|(user, cand)| {
            let s: Vec<f64> = (0..cand.len()).map(|j| 1.0 / (j + 1) as f64).collect();
            Ok((user, cand.with_scores(&s)?))
        })
        .collect()
}

/// Rows of `item_id` followed by the embedding values.
pub fn parse_embeddings(
    text: &str,
    delim: Delimiter,
    origin: &Path,
) -> Result<BTreeMap<ItemId, Vec<f64>>> {
    let delim = delim.as_char();
    let mut out = BTreeMap::new();
    let mut dim = None;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: n + 1,
            message,
        };
        let mut fields = line.split(delim).map(str::trim);
        let head = fields.next().unwrap_or("");
        let Ok(item) = head.parse::<u32>() else {
            if n == 0 {
                continue;
            }
            return Err(bad(format!("bad item id {head:?}")));
        };
        let values = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| bad(format!("bad value {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(bad(format!(
                    "embedding has {} values, earlier rows have {d}",
                    values.len()
                )));
            }
            _ => {}
        }
        out.insert(ItemId(item), values);
    }
    Ok(out)
}

/// Item metadata with `x_i = [e_i ‖ p_i ‖ div_i]`.
///
/// `e_i` is the provided embedding or else the category multi-hot vector,
/// `p_i = pop_count / max_pop` and `div_i = |categories| / total_categories`.
/// Popularity is counted over training interactions, at least 1 per item.
pub fn assemble_features(
    cats: &BTreeMap<ItemId, BTreeSet<CategoryId>>,
    train: &[Interaction],
    total_categories: usize,
    embeddings: Option<&BTreeMap<ItemId, Vec<f64>>>,
) -> Result<Catalog> {
    let mut counts: BTreeMap<ItemId, u64> = BTreeMap::new();
    for row in train {
        *counts.entry(row.item).or_insert(0) += 1;
    }
    let pop = |i: &ItemId| counts.get(i).copied().unwrap_or(0).max(1);
    let max_pop = cats.keys().map(pop).max().unwrap_or(1) as f64;

    let items = cats
        .iter()
        .map(|(&item, set)| {
            let categories: Vec<CategoryId> = set.iter().copied().collect();
            if let Some(c) = categories.iter().find(|c| c.0 as usize >= total_categories) {
                return Err(Error::Data(format!(
                    "item {item} has category {c} outside 0..{total_categories}"
                )));
            }
            let mut feature = match embeddings {
                Some(e) => e.get(&item).cloned().ok_or(Error::MissingMetadata(item))?,
                None => {
                    let mut hot = vec![0.0; total_categories];
                    for c in &categories {
                        hot[c.0 as usize] = 1.0;
                    }
                    hot
                }
            };
            let p = pop(&item);
            feature.push(p as f64 / max_pop);
            feature.push(categories.len() as f64 / total_categories as f64);
            Ok(ItemMeta {
                item,
                categories,
                pop_count: p,
                feature,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Catalog::new(items, total_categories)
}

/// One more than the largest category id seen.
pub fn infer_total_categories(interactions: &[Interaction]) -> usize {
    interactions
        .iter()
        .flat_map(|r| r.categories.iter())
        .map(|c| c.0 as usize + 1)
        .max()
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub users: usize,
    pub items: usize,
    pub categories: usize,
    pub zipf_exponent: f64,
    pub min_interactions: usize,
    pub max_interactions: usize,
    pub score_noise: f64,
    /// Width of the generated item content embeddings; 0 leaves items with
    /// category multi-hot features only.
    pub embedding_dim: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            users: 200,
            items: 500,
            categories: 20,
            zipf_exponent: 1.1,
            min_interactions: 5,
            max_interactions: 30,
            score_noise: 0.1,
            embedding_dim: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub interactions: Vec<Interaction>,
    /// Categories of every generated item, including never-sampled ones.
    pub item_categories: BTreeMap<ItemId, BTreeSet<CategoryId>>,
    /// Base score of every (user, item) pair, clamped to `[0, 1]`.
    pub scores: Vec<(UserId, ItemId, f64)>,
    /// Mean of the item's category prototypes plus noise, then its quality.
    pub embeddings: Option<BTreeMap<ItemId, Vec<f64>>>,
}

/// Zipf popularity over a shuffled item order, one to three categories per
/// item, and a per-user affinity concentrated on a few categories. Users
/// sample distinct items with weight `popularity · (0.1 + affinity)`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData> {
    if spec.items < 120 || spec.categories < 2 || spec.users == 0 {
        return Err(Error::Config(format!(
            "synthetic spec needs items >= 120, categories >= 2 and users >= 1 (got {}, {}, {})",
            spec.items, spec.categories, spec.users
        )));
    }
    if spec.min_interactions < 3 || spec.max_interactions < spec.min_interactions {
        return Err(Error::Config(
            "synthetic interactions need 3 <= min <= max".into(),
        ));
    }
    if spec.max_interactions > spec.items - 100 {
        return Err(Error::Config(
            "too many interactions per user to leave 100 unseen items".into(),
        ));
    }
    let mut rng = stream_rng(seed, Stream::Synthetic);

    let mut rank: Vec<usize> = (0..spec.items).collect();
    rank.shuffle(&mut rng);
    let popularity: Vec<f64> = rank
        .iter()
        .map(|&r| 1.0 / ((r + 1) as f64).powf(spec.zipf_exponent))
        .collect();
    let top = popularity.iter().copied().fold(0.0, f64::max);

    let item_cats: Vec<Vec<CategoryId>> = (0..spec.items)
        .map(|_| {
            let n = rng.random_range(1..=3.min(spec.categories));
            let mut c: Vec<CategoryId> = sample(&mut rng, spec.categories, n)
                .into_iter()
                .map(|c| CategoryId(c as u32))
                .collect();
            c.sort_unstable();
            c
        })
        .collect();
    let quality: Vec<f64> = popularity
        .iter()
        .map(|p| 0.4 + 0.6 * (p / top).powf(0.25) * rng.random_range(0.5..1.0))
        .collect();

    let embeddings = (spec.embedding_dim > 0).then(|| {
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let jitter = Normal::new(0.0, 0.1).expect("jitter");
        let d = spec.embedding_dim - 1;
        let prototypes: Vec<Vec<f64>> = (0..spec.categories)
            .map(|_| (0..d).map(|_| unit.sample(&mut rng)).collect())
            .collect();
        item_cats
            .iter()
            .zip(&quality)
            .enumerate()
            .map(|(i, (cats, &q))| {
                let mut e: Vec<f64> = (0..d)
                    .map(|j| {
                        let mean = cats
                            .iter()
                            .map(|c| prototypes[c.0 as usize][j])
                            .sum::<f64>()
                            / cats.len() as f64;
                        mean + jitter.sample(&mut rng)
                    })
                    .collect();
                e.push(q);
                (ItemId(i as u32), e)
            })
            .collect()
    });

    let noise = Normal::new(0.0, spec.score_noise)
        .map_err(|e| Error::Config(format!("score noise: {e}")))?;
    let mut interactions = Vec::new();
    let mut scores = Vec::with_capacity(spec.users * spec.items);
    for u in 0..spec.users {
        let user = UserId(u as u32);
        let mut affinity = vec![0.0; spec.categories];
        let favourites = rng.random_range(2..=4.min(spec.categories));
        for c in sample(&mut rng, spec.categories, favourites) {
            affinity[c] = rng.random_range(0.3..1.0);
        }
        let total: f64 = affinity.iter().sum();
        affinity.iter_mut().for_each(|a| *a /= total);
        let item_affinity: Vec<f64> = item_cats
            .iter()
            .map(|cs| {
                cs.iter()
                    .map(|c| affinity[c.0 as usize])
                    .fold(0.0, f64::max)
            })
            .collect();

        let weights: Vec<f64> = popularity
            .iter()
            .zip(&item_affinity)
            .map(|(p, a)| p * (0.1 + a))
            .collect();
        let n = rng.random_range(spec.min_interactions..=spec.max_interactions);
        let picked = rand::seq::index::sample_weighted(&mut rng, spec.items, |i| weights[i], n)
            .map_err(|e| Error::Config(format!("interaction sampling: {e}")))?;
        for (t, i) in picked.into_iter().enumerate() {
            interactions.push(Interaction {
                user,
                item: ItemId(i as u32),
                timestamp: t as i64,
                categories: item_cats[i].clone(),
            });
        }

        let max_aff = item_affinity.iter().copied().fold(0.0, f64::max);
        for i in 0..spec.items {
            let s = (item_affinity[i] / max_aff) * quality[i] + noise.sample(&mut rng);
            scores.push((user, ItemId(i as u32), s.clamp(0.0, 1.0)));
        }
    }
    let item_categories = item_cats
        .into_iter()
        .enumerate()
        .map(|(i, c)| (ItemId(i as u32), c.into_iter().collect()))
        .collect();
    Ok(SyntheticData {
        interactions,
        item_categories,
        scores,
        embeddings,
    })
}

pub fn write_interactions<W: Write>(out: &mut W, rows: &[Interaction]) -> std::io::Result<()> {
    writeln!(out, "user\titem\ttimestamp\tcategories")?;
    for r in rows {
        let cats: Vec<String> = r.categories.iter().map(|c| c.to_string()).collect();
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            r.user,
            r.item,
            r.timestamp,
            cats.join("|")
        )?;
    }
    Ok(())
}

pub fn write_scores<W: Write>(out: &mut W, rows: &[(UserId, ItemId, f64)]) -> std::io::Result<()> {
    writeln!(out, "user\titem\tscore")?;
    for (u, i, s) in rows {
        writeln!(out, "{u}\t{i}\t{s}")?;
    }
    Ok(())
}
