//! End-to-end commands: data preparation, the evolutionary run with periodic
//! knowledge transfer, baselines, the transfer ablation and re-evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline::{mmr, topk};
use crate::config::Config;
use crate::data::{
    assemble_features, attach_scores, build_candidates, generate_synthetic, infer_total_categories,
    item_categories, leave_one_out, load_interactions, parse_embeddings, parse_scores,
    uniform_fallback, write_interactions, DatasetSplit, Delimiter, Holdout,
};
use crate::domain::{
    CandidateSet, Catalog, CategoryId, ItemId, ItemMeta, Problem, SolutionList, UserId,
};
use crate::error::{Error, Result};
use crate::evolution::{evolve_generation, guided_init, Individual, Population};
use crate::metrics::hypervolume_3d;
use crate::preference::{build_examples, max_label_sum_error, BuilderConfig, PreferenceExample};
use crate::report::{evaluate_lists, fmt, write_key_values, MetricsReport};
use crate::rng::{stream_rng, user_rng, Stream};
use crate::scorer::{train, ScorerParams};
use crate::selection::{select_final, FinalSelection};
use crate::transfer::{knowledge_transfer, merge, write_anchors, AnchorSet};

/// Label sums further than this from 1 abort the run.
pub const LABEL_SUM_TOLERANCE: f64 = 1e-9;

const ARTIFACTS: [&str; 4] = ["train.tsv", "heldout.tsv", "candidates.tsv", "items.tsv"];

/// Everything a run needs: the catalog, the split and scored candidate sets.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub catalog: Catalog,
    pub split: DatasetSplit,
    pub test: BTreeMap<UserId, CandidateSet>,
    pub validation: BTreeMap<UserId, CandidateSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub total_categories: usize,
    pub artifacts: Vec<ManifestEntry>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn join_items(items: &[ItemId]) -> String {
    items
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_items(field: &str, path: &Path, line: usize) -> Result<Vec<ItemId>> {
    field
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse().map(ItemId).map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("bad item id {s:?}"),
            })
        })
        .collect()
}

impl Prepared {
    /// Builds the data described by `config.data` in memory.
    pub fn build(config: &Config) -> Result<Prepared> {
        let data = &config.data;
        let (interactions, synthetic, total_categories) = match &data.synthetic {
            Some(spec) => {
                let s = generate_synthetic(spec, config.seed)?;
                (
                    s.interactions,
                    Some((s.item_categories, s.scores, s.embeddings)),
                    spec.categories,
                )
            }
            None => {
                let path = data
                    .interactions
                    .as_ref()
                    .ok_or_else(|| Error::Config("data.interactions is not set".into()))?;
                let rows = load_interactions(
                    &config.resolve(path),
                    data.delimiter,
                    data.max_malformed_rows,
                )?;
                let tc = data
                    .total_categories
                    .unwrap_or_else(|| infer_total_categories(&rows));
                (rows, None, tc)
            }
        };
        if interactions.is_empty() {
            return Err(Error::Data("no interactions".into()));
        }
        let split = leave_one_out(&interactions);
        if split.test.is_empty() {
            return Err(Error::Data("no user has at least 3 interactions".into()));
        }
        let embeddings = match (&data.embeddings, &synthetic) {
            (Some(p), _) => {
                let p = config.resolve(p);
                Some(parse_embeddings(&read(&p)?, data.delimiter, &p)?)
            }
            (None, Some((_, _, generated))) => generated.clone(),
            (None, None) => None,
        };
        let mut cats = item_categories(&interactions);
        if let Some((all, _, _)) = &synthetic {
            cats.extend(all.iter().map(|(i, c)| (*i, c.clone())));
        }
        let catalog =
            assemble_features(&cats, &split.train, total_categories, embeddings.as_ref())?;

        let mut test =
            build_candidates(&split, &catalog, Holdout::Test, config.seed, data.negatives)?;
        let mut validation = build_candidates(
            &split,
            &catalog,
            Holdout::Validation,
            config.seed,
            data.negatives,
        )?;
        if let Some((_, rows, _)) = synthetic {
            let scores = rows.into_iter().map(|(u, i, s)| ((u, i), s)).collect();
            test = attach_scores(test, &scores)?;
            validation = attach_scores(validation, &scores)?;
        } else if data.uniform_fallback {
            test = uniform_fallback(test)?;
            validation = uniform_fallback(validation)?;
        } else {
            let path = data.scores.as_ref().ok_or_else(|| {
                Error::Config("data.scores is not set and uniform_fallback is off".into())
            })?;
            let path = config.resolve(path);
            let scores = parse_scores(&read(&path)?, data.delimiter, &path)?;
            test = attach_scores(test, &scores)?;
            validation = attach_scores(validation, &scores)?;
        }
        Ok(Prepared {
            catalog,
            split,
            test,
            validation,
        })
    }

    /// Reads `config.data.prepared` when set, otherwise builds from scratch.
    pub fn obtain(config: &Config) -> Result<Prepared> {
        match &config.data.prepared {
            Some(dir) => Prepared::read(&config.resolve(dir)),
            None => Prepared::build(config),
        }
    }

    /// Writes the four artifacts and `manifest.json` with their hashes.
    pub fn write(&self, dir: &Path, config_hash: &str) -> Result<Manifest> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join(ARTIFACTS[0]), |w| {
            write_interactions(w, &self.split.train)
        })?;
        write_file(&dir.join(ARTIFACTS[1]), |w| {
            writeln!(w, "user\tvalidation\ttest")?;
            for (u, t) in &self.split.test {
                writeln!(w, "{u}\t{}\t{t}", self.split.validation[u])?;
            }
            Ok(())
        })?;
        write_file(&dir.join(ARTIFACTS[2]), |w| {
            writeln!(w, "holdout\tuser\titem\tscore")?;
            for (name, sets) in [("test", &self.test), ("validation", &self.validation)] {
                for (u, c) in sets.iter() {
                    for (i, s) in c.items() {
                        writeln!(w, "{name}\t{u}\t{i}\t{s}")?;
                    }
                }
            }
            Ok(())
        })?;
        write_file(&dir.join(ARTIFACTS[3]), |w| {
            writeln!(w, "item\tpop_count\tcategories\tfeature")?;
            for m in self.catalog.iter() {
                let cats: Vec<String> = m.categories.iter().map(|c| c.to_string()).collect();
                let feat: Vec<String> = m.feature.iter().map(|x| x.to_string()).collect();
                writeln!(
                    w,
                    "{}\t{}\t{}\t{}",
                    m.item,
                    m.pop_count,
                    cats.join("|"),
                    feat.join(",")
                )?;
            }
            Ok(())
        })?;
        let artifacts = ARTIFACTS
            .iter()
            .map(|f| {
                Ok(ManifestEntry {
                    file: f.to_string(),
                    sha256: sha256_file(&dir.join(f))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = Manifest {
            config_hash: config_hash.to_string(),
            total_categories: self.catalog.total_categories(),
            artifacts,
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }

    pub fn read(dir: &Path) -> Result<Prepared> {
        let manifest_path = dir.join("manifest.json");
        let manifest: Manifest = serde_json::from_str(&read(&manifest_path)?)
            .map_err(|e| Error::Data(format!("{}: {e}", manifest_path.display())))?;
        for entry in &manifest.artifacts {
            let path = dir.join(&entry.file);
            if sha256_file(&path)? != entry.sha256 {
                return Err(Error::Data(format!(
                    "{} does not match its manifest hash",
                    path.display()
                )));
            }
        }

        let items_path = dir.join(ARTIFACTS[3]);
        let mut items = Vec::new();
        for (n, line) in read(&items_path)?.lines().enumerate().skip(1) {
            let bad = |message: String| Error::Parse {
                path: items_path.clone(),
                line: n + 1,
                message,
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(bad(format!("expected 4 fields, found {}", f.len())));
            }
            let item = f[0].parse().map_err(|_| bad("bad item id".into()))?;
            let pop_count = f[1].parse().map_err(|_| bad("bad pop count".into()))?;
            let categories = f[2]
                .split('|')
                .map(|c| {
                    c.parse()
                        .map(CategoryId)
                        .map_err(|_| bad(format!("bad category {c:?}")))
                })
                .collect::<Result<_>>()?;
            let feature = f[3]
                .split(',')
                .filter(|s| !s.is_empty())
                .map(|x| x.parse().map_err(|_| bad(format!("bad feature {x:?}"))))
                .collect::<Result<_>>()?;
            items.push(ItemMeta {
                item: ItemId(item),
                categories,
                pop_count,
                feature,
            });
        }
        let catalog = Catalog::new(items, manifest.total_categories)?;

        let train_path = dir.join(ARTIFACTS[0]);
        let train =
            crate::data::parse_interactions(&read(&train_path)?, Delimiter::Tab, 0, &train_path)?;
        let mut split = DatasetSplit {
            train,
            ..DatasetSplit::default()
        };
        let heldout_path = dir.join(ARTIFACTS[1]);
        for (n, line) in read(&heldout_path)?.lines().enumerate().skip(1) {
            let f: Vec<u32> = line
                .split('\t')
                .map(|x| x.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Parse {
                    path: heldout_path.clone(),
                    line: n + 1,
                    message: "expected user, validation and test ids".into(),
                })?;
            if f.len() != 3 {
                return Err(Error::Parse {
                    path: heldout_path.clone(),
                    line: n + 1,
                    message: format!("expected 3 fields, found {}", f.len()),
                });
            }
            let user = UserId(f[0]);
            split.validation.insert(user, ItemId(f[1]));
            split.test.insert(user, ItemId(f[2]));
            split
                .history
                .insert(user, BTreeSet::from([ItemId(f[1]), ItemId(f[2])]));
        }
        for row in &split.train {
            split.history.entry(row.user).or_default().insert(row.item);
        }

        let cand_path = dir.join(ARTIFACTS[2]);
        let mut rows: BTreeMap<(bool, UserId), Vec<(ItemId, f64)>> = BTreeMap::new();
        for (n, line) in read(&cand_path)?.lines().enumerate().skip(1) {
            let bad = |message: &str| Error::Parse {
                path: cand_path.clone(),
                line: n + 1,
                message: message.to_string(),
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(bad("expected 4 fields"));
            }
            let is_test = match f[0] {
                "test" => true,
                "validation" => false,
                _ => return Err(bad("holdout must be test or validation")),
            };
            let user = UserId(f[1].parse().map_err(|_| bad("bad user id"))?);
            let item = ItemId(f[2].parse().map_err(|_| bad("bad item id"))?);
            let score = f[3].parse().map_err(|_| bad("bad score"))?;
            rows.entry((is_test, user)).or_default().push((item, score));
        }
        let mut test = BTreeMap::new();
        let mut validation = BTreeMap::new();
        for ((is_test, user), items) in rows {
            let (target, positives) = if is_test {
                (&mut test, &split.test)
            } else {
                (&mut validation, &split.validation)
            };
            let positive = *positives
                .get(&user)
                .ok_or_else(|| Error::Data(format!("candidates for unknown user {user}")))?;
            target.insert(user, CandidateSet::new(user, items, positive)?);
        }
        Ok(Prepared {
            catalog,
            split,
            test,
            validation,
        })
    }
}

/// Outcome of one evolutionary run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub fronts: Vec<(UserId, Vec<Individual>)>,
    /// Anchors from the last transfer round; empty without transfer.
    pub anchors: Vec<AnchorSet>,
    pub selections: Vec<FinalSelection>,
    /// Hypervolume of each user's final front.
    pub front_hv: Vec<f64>,
    /// Mean front hypervolume after initialization and after each generation.
    pub hv_trace: Vec<f64>,
    /// Generations at which transfer fired.
    pub transfer_generations: Vec<usize>,
    pub max_label_error: f64,
    pub epoch_losses: Vec<Vec<f64>>,
}

fn front_hypervolume(front: &[Individual]) -> Result<f64> {
    let points: Vec<[f64; 3]> = front.iter().map(|m| m.objectives.to_array()).collect();
    hypervolume_3d(&points, [0.0; 3])
}

fn mean_front_hv(pops: &[Population]) -> Result<f64> {
    let hv = pops
        .par_iter()
        .map(|p| front_hypervolume(&p.pareto_front()))
        .collect::<Result<Vec<_>>>()?;
    Ok(hv.iter().sum::<f64>() / hv.len() as f64)
}

/// Guided initialization, `G` generations with transfer at every multiple of
/// τ, then angle-based final selection. Only test users are optimized.
pub fn run_experiment(config: &Config, prepared: &Prepared) -> Result<RunOutput> {
    config.validate()?;
    let cands: Vec<&CandidateSet> = prepared.test.values().collect();
    let problems: Vec<Problem> = cands
        .iter()
        .map(|c| Problem::new(c, &prepared.catalog, config.evaluation.novelty, config.k))
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("problem setup"))?;
    let users: Vec<UserId> = problems.iter().map(|p| p.user()).collect();

    let mut rngs: Vec<_> = users
        .iter()
        .map(|&u| user_rng(config.seed, Stream::Evolution, u))
        .collect();
    let mut pops = guided_init(
        &problems,
        &config.evolution,
        &config.init,
        config.seed,
        &mut rngs,
    )
    .map_err(|e| e.in_stage("guided initialization"))?;

    let n_clusters = config.transfer.n_clusters;
    let builder = BuilderConfig { n_clusters };
    let mut scorer_rng = stream_rng(config.seed, Stream::Scorer);
    let mut params: Option<ScorerParams> = None;
    let mut retained: Vec<PreferenceExample> = Vec::new();
    let mut anchors: Vec<AnchorSet> = Vec::new();
    let mut transfer_generations = Vec::new();
    let mut epoch_losses = Vec::new();
    let mut max_label_error: f64 = 0.0;
    let mut hv_trace = vec![mean_front_hv(&pops).map_err(|e| e.in_stage("hypervolume"))?];

    for g in 1..=config.evolution.generations {
        pops = pops
            .par_iter()
            .zip(problems.par_iter())
            .zip(rngs.par_iter_mut())
            .map(|((pop, problem), rng)| evolve_generation(pop, problem, &config.evolution, rng))
            .collect();

        if config.transfer.tau.is_some_and(|tau| g % tau == 0) {
            let per_user = pops
                .par_iter()
                .map(|p| build_examples(p, &prepared.catalog, &builder))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.in_stage("preference examples"))?;
            let examples: Vec<PreferenceExample> = per_user.into_iter().flatten().collect();
            let err = max_label_sum_error(&examples);
            max_label_error = max_label_error.max(err);
            if err > LABEL_SUM_TOLERANCE {
                return Err(Error::Numerical(format!("soft labels sum to 1 ± {err}"))
                    .in_stage("preference examples"));
            }
            if config.scorer.retain_examples {
                retained.extend(examples);
            } else {
                retained = examples;
            }

            let mut fresh = || {
                ScorerParams::init(
                    users.clone(),
                    prepared.catalog.feature_dim() + n_clusters,
                    config.scorer.user_dim,
                    config.scorer.hidden,
                    &mut scorer_rng,
                )
            };
            let mut p = match params.take() {
                Some(p) if config.scorer.warm_start => p,
                _ => fresh(),
            };
            let losses = train(&mut p, &retained, &config.scorer, &mut scorer_rng)
                .map_err(|e| e.in_stage("scorer training"))?;
            info!("generation {g}: scorer loss {:?}", losses.last());
            epoch_losses.push(losses);

            anchors = problems
                .par_iter()
                .map(|problem| knowledge_transfer(&p, problem, n_clusters))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.in_stage("knowledge transfer"))?;
            pops = pops
                .iter()
                .zip(&anchors)
                .map(|(pop, a)| merge(pop, a))
                .collect();
            params = Some(p);
            transfer_generations.push(g);
        }
        hv_trace.push(mean_front_hv(&pops).map_err(|e| e.in_stage("hypervolume"))?);
    }

    let fronts: Vec<(UserId, Vec<Individual>)> =
        pops.iter().map(|p| (p.user, p.pareto_front())).collect();
    let front_hv = fronts
        .par_iter()
        .map(|(_, f)| front_hypervolume(f))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("hypervolume"))?;
    let selections = fronts
        .par_iter()
        .enumerate()
        .map(|(u, (user, front))| select_final(*user, front, anchors.get(u), &config.selection))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("final selection"))?;

    Ok(RunOutput {
        fronts,
        anchors,
        selections,
        front_hv,
        hv_trace,
        transfer_generations,
        max_label_error,
        epoch_losses,
    })
}

fn list_row<W: Write>(
    w: &mut W,
    user: UserId,
    lambda: &str,
    list: &SolutionList,
    o: [f64; 3],
) -> std::io::Result<()> {
    writeln!(
        w,
        "{user}\t{lambda}\t{}\t{}\t{}\t{}",
        join_items(list.items()),
        fmt(o[0]),
        fmt(o[1]),
        fmt(o[2])
    )
}

const LIST_HEADER: &str = "user\tlambda\titems\tacc\tdiv\tnov";

/// One row per region pick and one `default` row per user.
pub fn write_final_lists<W: Write>(
    w: &mut W,
    selections: &[FinalSelection],
) -> std::io::Result<()> {
    writeln!(w, "{LIST_HEADER}")?;
    for s in selections {
        for (lambda, pick) in &s.per_cluster {
            list_row(
                w,
                s.user,
                &lambda.to_string(),
                &pick.list,
                pick.objectives.to_array(),
            )?;
        }
        list_row(
            w,
            s.user,
            "default",
            &s.default_list,
            s.default_objectives.to_array(),
        )?;
    }
    Ok(())
}

/// Reads the `default` rows of a final-list file.
pub fn read_default_lists(path: &Path) -> Result<BTreeMap<UserId, Vec<ItemId>>> {
    let mut out = BTreeMap::new();
    for (n, line) in read(path)?.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() < 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: "expected user, lambda and items".into(),
            });
        }
        if f[1] != "default" {
            continue;
        }
        let user = f[0].parse().map(UserId).map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: format!("bad user id {:?}", f[0]),
        })?;
        out.insert(user, parse_items(f[2], path, n + 1)?);
    }
    Ok(out)
}

fn evaluate_defaults(
    config: &Config,
    prepared: &Prepared,
    lists: &BTreeMap<UserId, Vec<ItemId>>,
) -> Result<MetricsReport> {
    let mut refs = Vec::with_capacity(lists.len());
    let mut positives = Vec::with_capacity(lists.len());
    for (user, list) in lists {
        let cand = prepared
            .test
            .get(user)
            .ok_or_else(|| Error::Data(format!("user {user} has no test candidates")))?;
        refs.push(list.as_slice());
        positives.push(cand.positive());
    }
    evaluate_lists(&refs, &positives, &prepared.catalog, &config.evaluation)
}

fn run_metadata(config: &Config) -> Vec<(String, String)> {
    vec![
        ("seed".into(), config.seed.to_string()),
        ("config_hash".into(), config.hash()),
        ("k".into(), config.k.to_string()),
        (
            "novelty_mode".into(),
            format!("{:?}", config.evaluation.novelty).to_lowercase(),
        ),
        (
            "f_beta_mode".into(),
            if config.evaluation.per_user_f_beta {
                "per_user"
            } else {
                "aggregate"
            }
            .into(),
        ),
    ]
}

/// Writes fronts, anchors, final lists, the report, per-user rows and the
/// hypervolume trace into `out`. Returns the metrics of the default lists.
pub fn write_run(
    out: &Path,
    config: &Config,
    prepared: &Prepared,
    run: &RunOutput,
) -> Result<MetricsReport> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join("fronts.tsv"), |w| {
        writeln!(w, "user\tindex\titems\tacc\tdiv\tnov")?;
        for (user, front) in &run.fronts {
            for (i, m) in front.iter().enumerate() {
                list_row(w, *user, &i.to_string(), &m.list, m.objectives.to_array())?;
            }
        }
        Ok(())
    })?;
    write_file(&out.join("anchors.tsv"), |w| write_anchors(w, &run.anchors))?;
    write_file(&out.join("final_lists.tsv"), |w| {
        write_final_lists(w, &run.selections)
    })?;

    let lists: BTreeMap<UserId, Vec<ItemId>> = run
        .selections
        .iter()
        .map(|s| (s.user, s.default_list.0.clone()))
        .collect();
    let metrics = evaluate_defaults(config, prepared, &lists)?;

    let mut kv = run_metadata(config);
    kv.extend(metrics.key_values());
    let mean_hv = run.front_hv.iter().sum::<f64>() / run.front_hv.len() as f64;
    let mean_front =
        run.fronts.iter().map(|(_, f)| f.len()).sum::<usize>() as f64 / run.fronts.len() as f64;
    kv.push(("mean_front_hv".into(), fmt(mean_hv)));
    kv.push(("mean_front_size".into(), fmt(mean_front)));
    kv.push((
        "transfer_rounds".into(),
        run.transfer_generations.len().to_string(),
    ));
    kv.push((
        "max_label_sum_error".into(),
        format!("{:e}", run.max_label_error),
    ));
    if let Some(loss) = run.epoch_losses.last().and_then(|l| l.last()) {
        kv.push(("final_scorer_loss".into(), fmt(*loss)));
    }
    write_file(&out.join("report.txt"), |w| write_key_values(w, &kv))?;

    write_file(&out.join("per_user.csv"), |w| {
        writeln!(
            w,
            "user,positive,hit_rank,front_size,front_hv,lambda,acc,div,nov"
        )?;
        for ((s, (_, front)), hv) in run.selections.iter().zip(&run.fronts).zip(&run.front_hv) {
            let positive = prepared.test[&s.user].positive();
            let rank = s
                .default_list
                .items()
                .iter()
                .position(|&i| i == positive)
                .map_or(0, |p| p + 1);
            let lambda = s.default_cluster.map_or("-".to_string(), |c| c.to_string());
            let o = s.default_objectives;
            writeln!(
                w,
                "{},{positive},{rank},{},{},{lambda},{},{},{}",
                s.user,
                front.len(),
                fmt(*hv),
                fmt(o.acc),
                fmt(o.div),
                fmt(o.nov)
            )?;
        }
        Ok(())
    })?;
    write_file(&out.join("hv_trace.csv"), |w| {
        writeln!(w, "generation,mean_front_hv,transfer")?;
        for (g, hv) in run.hv_trace.iter().enumerate() {
            let t = u8::from(run.transfer_generations.contains(&g));
            writeln!(w, "{g},{},{t}", fmt(*hv))?;
        }
        Ok(())
    })?;
    Ok(metrics)
}

pub fn cmd_prepare(config: &Config, out: &Path) -> Result<Manifest> {
    let prepared = Prepared::build(config).map_err(|e| e.in_stage("prepare"))?;
    prepared.write(out, &config.hash())
}

pub fn cmd_run(config: &Config, out: &Path) -> Result<MetricsReport> {
    let prepared = Prepared::obtain(config).map_err(|e| e.in_stage("load data"))?;
    let run = run_experiment(config, &prepared)?;
    write_run(out, config, &prepared, &run)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMethod {
    TopK,
    Mmr,
}

impl BaselineMethod {
    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::TopK => "topk",
            BaselineMethod::Mmr => "mmr",
        }
    }
}

pub fn baseline_lists(
    config: &Config,
    prepared: &Prepared,
    method: BaselineMethod,
) -> Result<BTreeMap<UserId, SolutionList>> {
    prepared
        .test
        .iter()
        .map(|(&u, cand)| {
            let list = match method {
                BaselineMethod::TopK => topk(cand, config.k),
                BaselineMethod::Mmr => mmr(
                    cand,
                    &prepared.catalog,
                    config.k,
                    config.baseline.mmr_lambda,
                )?,
            };
            Ok((u, list))
        })
        .collect()
}

pub fn cmd_baseline(config: &Config, method: BaselineMethod, out: &Path) -> Result<MetricsReport> {
    let prepared = Prepared::obtain(config).map_err(|e| e.in_stage("load data"))?;
    let lists = baseline_lists(config, &prepared, method).map_err(|e| e.in_stage("baseline"))?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let name = method.name();
    write_file(&out.join(format!("baseline_{name}_lists.tsv")), |w| {
        writeln!(w, "{LIST_HEADER}")?;
        for (&u, list) in &lists {
            let problem = Problem {
                cand: &prepared.test[&u],
                catalog: &prepared.catalog,
                novelty: config.evaluation.novelty,
                k: config.k,
            };
            list_row(w, u, "default", list, problem.evaluate(list).to_array())?;
        }
        Ok(())
    })?;
    let plain: BTreeMap<UserId, Vec<ItemId>> = lists.into_iter().map(|(u, l)| (u, l.0)).collect();
    let metrics = evaluate_defaults(config, &prepared, &plain)?;
    let mut kv = run_metadata(config);
    kv.push(("method".into(), name.into()));
    if method == BaselineMethod::Mmr {
        kv.push(("mmr_lambda".into(), config.baseline.mmr_lambda.to_string()));
    }
    kv.extend(metrics.key_values());
    write_file(&out.join(format!("baseline_{name}_report.txt")), |w| {
        write_key_values(w, &kv)
    })?;
    Ok(metrics)
}

/// Paired per-user comparison of two runs over the same users.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationSummary {
    pub users: usize,
    pub mean_hv_a: f64,
    pub mean_hv_b: f64,
    /// Users where run A's front hypervolume is strictly larger.
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
}

impl AblationSummary {
    pub fn win_rate(&self) -> f64 {
        self.wins as f64 / self.users as f64
    }
}

pub fn compare_runs(a: &RunOutput, b: &RunOutput) -> AblationSummary {
    assert_eq!(a.front_hv.len(), b.front_hv.len());
    let n = a.front_hv.len();
    let mut s = AblationSummary {
        users: n,
        mean_hv_a: a.front_hv.iter().sum::<f64>() / n as f64,
        mean_hv_b: b.front_hv.iter().sum::<f64>() / n as f64,
        wins: 0,
        ties: 0,
        losses: 0,
    };
    for (x, y) in a.front_hv.iter().zip(&b.front_hv) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Greater => s.wins += 1,
            std::cmp::Ordering::Equal => s.ties += 1,
            std::cmp::Ordering::Less => s.losses += 1,
        }
    }
    s
}

/// The configuration pair compared by the ablation: transfer every τ
/// generations (3 when unset) against no transfer.
pub fn ablation_configs(config: &Config) -> (Config, Config) {
    let mut with = config.clone();
    with.transfer.tau = Some(config.transfer.tau.unwrap_or(3));
    let mut without = config.clone();
    without.transfer.tau = None;
    (with, without)
}

pub fn cmd_ablate(config: &Config, out: &Path) -> Result<AblationSummary> {
    let prepared = Prepared::obtain(config).map_err(|e| e.in_stage("load data"))?;
    let (with, without) = ablation_configs(config);
    let run_kt = run_experiment(&with, &prepared)?;
    let run_plain = run_experiment(&without, &prepared)?;
    let m_kt = write_run(&out.join("kt"), &with, &prepared, &run_kt)?;
    let m_plain = write_run(&out.join("no_kt"), &without, &prepared, &run_plain)?;
    let summary = compare_runs(&run_kt, &run_plain);

    let mut kv = vec![
        ("users".to_string(), summary.users.to_string()),
        ("config_hash_kt".into(), with.hash()),
        ("config_hash_no_kt".into(), without.hash()),
        (
            "tau".into(),
            with.transfer.tau.unwrap_or_default().to_string(),
        ),
        ("mean_hv_kt".into(), fmt(summary.mean_hv_a)),
        ("mean_hv_no_kt".into(), fmt(summary.mean_hv_b)),
        ("wins_kt".into(), summary.wins.to_string()),
        ("ties".into(), summary.ties.to_string()),
        ("losses_kt".into(), summary.losses.to_string()),
        ("win_rate_kt".into(), fmt(summary.win_rate())),
    ];
    for (tag, m) in [("kt", &m_kt), ("no_kt", &m_plain)] {
        for (k, v) in m.key_values().into_iter().skip(1) {
            if k.starts_with('f') {
                kv.push((format!("{k}_{tag}"), v));
            }
        }
    }
    write_file(&out.join("ablation.txt"), |w| write_key_values(w, &kv))?;
    write_file(&out.join("ablation_per_user.csv"), |w| {
        writeln!(w, "user,hv_kt,hv_no_kt,diff")?;
        for (((u, _), a), b) in run_kt
            .fronts
            .iter()
            .zip(&run_kt.front_hv)
            .zip(&run_plain.front_hv)
        {
            writeln!(w, "{u},{},{},{}", fmt(*a), fmt(*b), fmt(a - b))?;
        }
        Ok(())
    })?;
    Ok(summary)
}

/// Re-evaluates the `default` rows of a final-list file.
pub fn cmd_eval(config: &Config, lists: &Path, out: &Path) -> Result<MetricsReport> {
    let prepared = Prepared::obtain(config).map_err(|e| e.in_stage("load data"))?;
    let defaults = read_default_lists(lists)?;
    if defaults.is_empty() {
        return Err(Error::Data(format!(
            "{}: no default lists",
            lists.display()
        )));
    }
    let metrics = evaluate_defaults(config, &prepared, &defaults)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut kv = run_metadata(config);
    kv.push(("lists".into(), lists.display().to_string()));
    kv.extend(metrics.key_values());
    write_file(&out.join("eval_report.txt"), |w| write_key_values(w, &kv))?;
    Ok(metrics)
}

/// Runs `f` on a dedicated pool of `threads` workers, or the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| Error::Config(format!("thread pool: {e}"))),
    }
}
