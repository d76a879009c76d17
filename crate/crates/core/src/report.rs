//! Corpus-level metric reports.
//!
//! Reports are plain `key=value` lines. Metric keys are `hr@K`, `ndcg@K`,
//! `div@K`, `nov@K` and `fB@K` (β written without a trailing `.0`), preceded
//! by run metadata such as `users`, `seed` and `config_hash`.

use std::io::Write;

use crate::config::EvaluationConfig;
use crate::domain::{eval_diversity, eval_novelty, Catalog, ItemId, SolutionList};
use crate::error::Result;
use crate::metrics::{div_at_k, f_beta, hr_at_k, ndcg_at_k, nov_at_k};

#[derive(Debug, Clone, PartialEq)]
pub struct KMetrics {
    pub k: usize,
    pub hr: f64,
    pub ndcg: f64,
    pub div: f64,
    pub nov: f64,
    /// `(β, F_β)` pairs.
    pub f_beta: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub users: usize,
    pub per_k: Vec<KMetrics>,
}

pub fn beta_label(beta: f64) -> String {
    if beta.fract() == 0.0 {
        format!("f{}", beta as i64)
    } else {
        format!("f{beta}")
    }
}

/// Scores one list per user against that user's held-out positive.
pub fn evaluate_lists(
    lists: &[&[ItemId]],
    positives: &[ItemId],
    catalog: &Catalog,
    config: &EvaluationConfig,
) -> Result<MetricsReport> {
    let mut per_k = Vec::with_capacity(config.ks.len());
    for &k in &config.ks {
        let hr = hr_at_k(lists, positives, k);
        let div = div_at_k(lists, catalog, k)?;
        let nov = nov_at_k(lists, catalog, k, config.novelty)?;
        let f = if config.per_user_f_beta {
            let mut per_user = Vec::with_capacity(lists.len());
            for (l, &p) in lists.iter().zip(positives) {
                let prefix = SolutionList(l[..k.min(l.len())].to_vec());
                let hit = f64::from(u8::from(prefix.contains(p)));
                per_user.push((
                    hit,
                    eval_diversity(&prefix, catalog)?,
                    eval_novelty(&prefix, catalog, config.novelty)?,
                ));
            }
            config
                .betas
                .iter()
                .map(|&b| {
                    let total: f64 = per_user.iter().map(|&(h, d, n)| f_beta(h, d, n, b)).sum();
                    (b, total / per_user.len() as f64)
                })
                .collect()
        } else {
            config
                .betas
                .iter()
                .map(|&b| (b, f_beta(hr, div, nov, b)))
                .collect()
        };
        per_k.push(KMetrics {
            k,
            hr,
            ndcg: ndcg_at_k(lists, positives, k),
            div,
            nov,
            f_beta: f,
        });
    }
    Ok(MetricsReport {
        users: lists.len(),
        per_k,
    })
}

impl MetricsReport {
    pub fn key_values(&self) -> Vec<(String, String)> {
        let mut kv = vec![("users".to_string(), self.users.to_string())];
        for m in &self.per_k {
            let k = m.k;
            kv.push((format!("hr@{k}"), fmt(m.hr)));
            kv.push((format!("ndcg@{k}"), fmt(m.ndcg)));
            kv.push((format!("div@{k}"), fmt(m.div)));
            kv.push((format!("nov@{k}"), fmt(m.nov)));
            for &(b, f) in &m.f_beta {
                kv.push((format!("{}@{k}", beta_label(b)), fmt(f)));
            }
        }
        kv
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.key_values()
            .into_iter()
            .find(|(k, _)| k == key)
            .and_then(|(_, v)| v.parse().ok())
    }
}

pub fn fmt(x: f64) -> String {
    format!("{x:.6}")
}

pub fn write_key_values<W: Write>(out: &mut W, kv: &[(String, String)]) -> std::io::Result<()> {
    for (k, v) in kv {
        writeln!(out, "{k}={v}")?;
    }
    Ok(())
}
