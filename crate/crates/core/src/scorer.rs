//! Preference-conditioned item scorer.
//!
//! A three-layer perceptron over `[item feature ‖ one-hot region ‖ user embedding]`
//! with rectifier hidden layers and a sigmoid output, trained on soft targets
//! with binary cross-entropy and Adam. Gradients are derived by hand.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{CandidateSet, Catalog, ItemId, UserId};
use crate::error::{Error, Result};
use crate::preference::{one_hot, PreferenceExample};
use crate::rng::Rng as StreamRng;

const PROB_CLAMP: f64 = 1e-7;
/// Rows per parallel gradient shard; fixed so results do not depend on thread count.
const SHARD: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub hidden: [usize; 2],
    pub user_dim: usize,
    /// Continue from the previous round's parameters instead of re-initializing.
    pub warm_start: bool,
    /// Keep examples from earlier transfer rounds in the training set.
    pub retain_examples: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 256,
            epochs: 10,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            hidden: [128, 64],
            user_dim: 16,
            warm_start: true,
            retain_examples: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(
                "learning_rate must be finite and non-negative".into(),
            ));
        }
        if self.batch_size == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(
                "batch_size and hidden widths must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerParams {
    /// Sorted; row `r` of `user_embeddings` belongs to `users[r]`.
    pub users: Vec<UserId>,
    /// Width of `[item feature ‖ one-hot region]`.
    pub item_dim: usize,
    pub user_embeddings: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array1<f64>,
    pub b3: Array1<f64>,
}

fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..=limit))
}

impl ScorerParams {
    pub fn zeros(
        mut users: Vec<UserId>,
        item_dim: usize,
        user_dim: usize,
        hidden: [usize; 2],
    ) -> Self {
        users.sort_unstable();
        users.dedup();
        let input = item_dim + user_dim;
        ScorerParams {
            user_embeddings: Array2::zeros((users.len(), user_dim)),
            users,
            item_dim,
            w1: Array2::zeros((hidden[0], input)),
            b1: Array1::zeros(hidden[0]),
            w2: Array2::zeros((hidden[1], hidden[0])),
            b2: Array1::zeros(hidden[1]),
            w3: Array1::zeros(hidden[1]),
            b3: Array1::zeros(1),
        }
    }

    /// Uniform ±sqrt(6 / (fan_in + fan_out)) weights, zero biases.
    pub fn init<R: Rng + ?Sized>(
        users: Vec<UserId>,
        item_dim: usize,
        user_dim: usize,
        hidden: [usize; 2],
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(users, item_dim, user_dim, hidden);
        let input = item_dim + user_dim;
        p.user_embeddings = glorot(p.users.len(), user_dim, rng);
        p.w1 = glorot(hidden[0], input, rng);
        p.w2 = glorot(hidden[1], hidden[0], rng);
        p.w3 = glorot(1, hidden[1], rng).remove_axis(Axis(0));
        p
    }

    pub fn user_dim(&self) -> usize {
        self.user_embeddings.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn user_row(&self, user: UserId) -> Result<usize> {
        self.users
            .binary_search(&user)
            .map_err(|_| Error::Data(format!("user {user} has no embedding row")))
    }

    fn dense(&self) -> [&[f64]; 6] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
            self.w3.as_slice().expect("standard layout"),
            self.b3.as_slice().expect("standard layout"),
        ]
    }

    fn dense_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
            self.w3.as_slice_mut().expect("standard layout"),
            self.b3.as_slice_mut().expect("standard layout"),
        ]
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(
            self.users.clone(),
            self.item_dim,
            self.user_dim(),
            [self.w1.nrows(), self.w2.nrows()],
        )
    }

    fn add_assign(&mut self, other: &Self) {
        self.user_embeddings += &other.user_embeddings;
        for (a, b) in self.dense_mut().into_iter().zip(other.dense()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.user_embeddings.iter().all(|x| x.is_finite())
            && self.dense().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            item_dim: self.item_dim,
            user_dim: self.user_dim(),
            hidden: [self.w1.nrows(), self.w2.nrows()],
            n_users: self.users.len(),
            params: self.clone(),
        };
        let text = serde_json::to_string(&file)
            .map_err(|e| Error::Data(format!("serializing checkpoint: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.into(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "{}: unsupported checkpoint {} v{}",
                path.display(),
                file.format,
                file.version
            )));
        }
        let p = file.params;
        let dims_ok = p.item_dim == file.item_dim
            && p.user_dim() == file.user_dim
            && p.users.len() == file.n_users
            && p.user_embeddings.nrows() == file.n_users
            && p.w1.dim() == (file.hidden[0], file.item_dim + file.user_dim)
            && p.b1.len() == file.hidden[0]
            && p.w2.dim() == (file.hidden[1], file.hidden[0])
            && p.b2.len() == file.hidden[1]
            && p.w3.len() == file.hidden[1]
            && p.b3.len() == 1;
        if !dims_ok {
            return Err(Error::Data(format!(
                "{}: parameter shapes disagree with the header",
                path.display()
            )));
        }
        Ok(p)
    }
}

const CHECKPOINT_FORMAT: &str = "pareto-rerank-scorer";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    item_dim: usize,
    user_dim: usize,
    hidden: [usize; 2],
    n_users: usize,
    params: ScorerParams,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Soft-target binary cross-entropy with the prediction clamped away from 0 and 1.
pub fn bce_loss(pred: f64, target: f64) -> f64 {
    let p = pred.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// One scoring request: item-side features plus the user whose embedding to use.
#[derive(Debug, Clone, Copy)]
pub struct ScoreInput<'a> {
    pub features: &'a [f64],
    pub user: UserId,
}

struct Activations {
    x: Array2<f64>,
    z1: Array2<f64>,
    a1: Array2<f64>,
    z2: Array2<f64>,
    a2: Array2<f64>,
    out: Array1<f64>,
}

fn assemble_inputs(
    params: &ScorerParams,
    inputs: &[ScoreInput<'_>],
) -> Result<(Array2<f64>, Vec<usize>)> {
    let mut x = Array2::zeros((inputs.len(), params.input_dim()));
    let mut rows = Vec::with_capacity(inputs.len());
    for (r, input) in inputs.iter().enumerate() {
        if input.features.len() != params.item_dim {
            return Err(Error::Dimension {
                expected: params.item_dim,
                got: input.features.len(),
            });
        }
        let row = params.user_row(input.user)?;
        rows.push(row);
        x.slice_mut(s![r, ..params.item_dim])
            .assign(&ArrayView1::from(input.features));
        x.slice_mut(s![r, params.item_dim..])
            .assign(&params.user_embeddings.row(row));
    }
    Ok((x, rows))
}

fn forward_batch(params: &ScorerParams, x: Array2<f64>) -> Activations {
    let z1 = x.dot(&params.w1.t()) + &params.b1;
    let a1 = z1.mapv(|v| v.max(0.0));
    let z2 = a1.dot(&params.w2.t()) + &params.b2;
    let a2 = z2.mapv(|v| v.max(0.0));
    let out = (a2.dot(&params.w3) + params.b3[0]).mapv(sigmoid);
    Activations {
        x,
        z1,
        a1,
        z2,
        a2,
        out,
    }
}

/// Predicted inclusion probabilities, one per input.
pub fn forward_many(params: &ScorerParams, inputs: &[ScoreInput<'_>]) -> Result<Vec<f64>> {
    let (x, _) = assemble_inputs(params, inputs)?;
    Ok(forward_batch(params, x).out.to_vec())
}

pub fn forward(params: &ScorerParams, features: &[f64], user: UserId) -> Result<f64> {
    Ok(forward_many(params, &[ScoreInput { features, user }])?[0])
}

/// Sum over `inputs` of BCE / `denom`, and its exact gradient.
fn shard_gradient(
    params: &ScorerParams,
    inputs: &[ScoreInput<'_>],
    targets: &[f64],
    denom: f64,
) -> Result<(f64, ScorerParams)> {
    let (x, rows) = assemble_inputs(params, inputs)?;
    let act = forward_batch(params, x);
    let target = ArrayView1::from(targets);

    let loss: f64 = act
        .out
        .iter()
        .zip(targets)
        .map(|(&p, &y)| bce_loss(p, y))
        .sum::<f64>()
        / denom;

    // d(BCE)/dz through the sigmoid collapses to (p - y)
    let d3 = (&act.out - &target) / denom;
    let mut grad = params.zeros_like();
    grad.w3 = act.a2.t().dot(&d3);
    grad.b3[0] = d3.sum();

    let mut dz2 = d3
        .insert_axis(Axis(1))
        .dot(&params.w3.view().insert_axis(Axis(0)));
    dz2.zip_mut_with(&act.z2, |g, &z| {
        if z <= 0.0 {
            *g = 0.0
        }
    });
    grad.w2 = dz2.t().dot(&act.a1);
    grad.b2 = dz2.sum_axis(Axis(0));

    let mut dz1 = dz2.dot(&params.w2);
    dz1.zip_mut_with(&act.z1, |g, &z| {
        if z <= 0.0 {
            *g = 0.0
        }
    });
    grad.w1 = dz1.t().dot(&act.x);
    grad.b1 = dz1.sum_axis(Axis(0));

    let dx = dz1.dot(&params.w1);
    for (r, &row) in rows.iter().enumerate() {
        let mut g = grad.user_embeddings.row_mut(row);
        g += &dx.slice(s![r, params.item_dim..]);
    }
    Ok((loss, grad))
}

/// Mean BCE over the batch and its exact gradient with respect to every
/// parameter. Embedding rows of users absent from the batch stay zero.
pub fn backward(
    params: &ScorerParams,
    inputs: &[ScoreInput<'_>],
    targets: &[f64],
) -> Result<(f64, ScorerParams)> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::Data(
            "backward needs a non-empty, aligned batch".into(),
        ));
    }
    let denom = inputs.len() as f64;
    let shards: Vec<(f64, ScorerParams)> = inputs
        .par_chunks(SHARD)
        .zip(targets.par_chunks(SHARD))
        .map(|(i, t)| shard_gradient(params, i, t, denom))
        .collect::<Result<_>>()?;
    let mut iter = shards.into_iter();
    let (mut loss, mut grad) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss += l;
        grad.add_assign(&g);
    }
    Ok((loss, grad))
}

/// Adam with lazy (row-sparse) updates for the user embedding table.
#[derive(Debug, Clone)]
pub struct Adam {
    m: ScorerParams,
    v: ScorerParams,
    step: i32,
}

impl Adam {
    pub fn new(params: &ScorerParams) -> Self {
        Adam {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub fn update(
        &mut self,
        params: &mut ScorerParams,
        grad: &ScorerParams,
        touched_rows: &[usize],
        config: &TrainConfig,
    ) {
        self.step += 1;
        let (b1, b2, eps, lr) = (
            config.beta1,
            config.beta2,
            config.epsilon,
            config.learning_rate,
        );
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let step = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };

        for (((p, g), m), v) in params
            .dense_mut()
            .into_iter()
            .zip(grad.dense())
            .zip(self.m.dense_mut())
            .zip(self.v.dense_mut())
        {
            for i in 0..p.len() {
                step(&mut p[i], g[i], &mut m[i], &mut v[i]);
            }
        }
        for &row in touched_rows {
            let cols = params.user_dim();
            for c in 0..cols {
                step(
                    &mut params.user_embeddings[[row, c]],
                    grad.user_embeddings[[row, c]],
                    &mut self.m.user_embeddings[[row, c]],
                    &mut self.v.user_embeddings[[row, c]],
                );
            }
        }
    }
}

/// Shuffled mini-batch Adam training. Returns the mean loss of each epoch.
pub fn train(
    params: &mut ScorerParams,
    examples: &[PreferenceExample],
    config: &TrainConfig,
    rng: &mut StreamRng,
) -> Result<Vec<f64>> {
    if examples.is_empty() {
        return Err(Error::Data("no training examples".into()));
    }
    config.validate()?;
    let mut adam = Adam::new(params);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let inputs: Vec<ScoreInput> = batch
                .iter()
                .map(|&i| ScoreInput {
                    features: &examples[i].features,
                    user: examples[i].user,
                })
                .collect();
            let targets: Vec<f64> = batch.iter().map(|&i| examples[i].label).collect();
            let (loss, grad) = backward(params, &inputs, &targets)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite training loss in epoch {epoch}"
                )));
            }
            let mut rows: Vec<usize> = inputs
                .iter()
                .map(|x| params.user_row(x.user))
                .collect::<Result<_>>()?;
            rows.sort_unstable();
            rows.dedup();
            adam.update(params, &grad, &rows, config);
            total += loss * batch.len() as f64;
        }
        if !params.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite parameters after epoch {epoch}"
            )));
        }
        trace.push(total / examples.len() as f64);
    }
    Ok(trace)
}

/// Predicted inclusion probability of every candidate under region `cluster`,
/// in candidate order.
pub fn predict_scores(
    params: &ScorerParams,
    user: UserId,
    cluster: usize,
    n_clusters: usize,
    cand: &CandidateSet,
    catalog: &Catalog,
) -> Result<Vec<(ItemId, f64)>> {
    let features: Vec<Vec<f64>> = cand
        .item_ids()
        .map(|item| {
            let meta = catalog.get(item)?;
            Ok(meta
                .feature
                .iter()
                .copied()
                .chain(one_hot(cluster, n_clusters))
                .collect())
        })
        .collect::<Result<_>>()?;
    let inputs: Vec<ScoreInput> = features
        .iter()
        .map(|f| ScoreInput { features: f, user })
        .collect();
    let scores = forward_many(params, &inputs)?;
    Ok(cand.item_ids().zip(scores).collect())
}
