//! Embedding initialization, MF/NNMF prediction and the SGD trainers.
//!
//! Every trainer optimizes over the base matrices `P`, `Q`; the embeddings
//! used for prediction are `P* = S^U P` and `Q* = S^I Q`. A per-sample update
//! touches the base rows of every stored neighbor of the sampled user and
//! item(s), weighted by their similarity.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{to_hex, DatasetSplit, InteractionMatrix};
use crate::dense::{dot, DenseMatrix};
use crate::error::{Error, Result};
use crate::evaluation::{map_at_k, recommend_topn, EmbeddingScorer, Scorer};
use crate::similarity::{identity_similarity, SimilarityMatrix};
use crate::{seeded_rng, SeededRng};

/// Entries above this magnitude are treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// How many of the first sampled training examples a model keeps.
pub const SAMPLE_TRACE_LEN: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Funk,
    Bpr,
    Pmf,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Funk => "funk",
            Algorithm::Bpr => "bpr",
            Algorithm::Pmf => "pmf",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarlyStopping {
    /// Epochs between validation evaluations; 0 disables early stopping.
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    /// MAP cutoff of the validation metric.
    pub cutoff: usize,
}

impl Default for EarlyStopping {
    fn default() -> Self {
        Self {
            eval_every: 10,
            patience: 5,
            cutoff: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub algorithm: Algorithm,
    /// Neighborhood mode; `false` trains plain MF over identity similarities.
    pub nnmf: bool,
    pub f: usize,
    pub learning_rate: f64,
    pub reg_p: f64,
    pub reg_q: f64,
    pub epochs_max: usize,
    pub user_k: usize,
    pub item_k: usize,
    pub user_shrink: f64,
    pub item_shrink: f64,
    /// Unobserved pairs sampled (target 0) per positive; Funk and P-MF only.
    pub negative_ratio: usize,
    pub early_stop: EarlyStopping,
    pub init_seed: u64,
    pub sample_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Bpr,
            nnmf: false,
            f: 32,
            learning_rate: 0.05,
            reg_p: 0.01,
            reg_q: 0.01,
            epochs_max: 300,
            user_k: 10,
            item_k: 10,
            user_shrink: 10.0,
            item_shrink: 10.0,
            negative_ratio: 1,
            early_stop: EarlyStopping::default(),
            init_seed: 0,
            sample_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn new(algorithm: Algorithm, nnmf: bool) -> Self {
        Self {
            algorithm,
            nnmf,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.f == 0 {
            return fail("latent dimension f must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        for (name, v) in [
            ("reg_p", self.reg_p),
            ("reg_q", self.reg_q),
            ("user_shrink", self.user_shrink),
            ("item_shrink", self.item_shrink),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.nnmf && self.user_k < 2 && self.item_k < 2 {
            return fail(format!(
                "NNMF needs at least 2 neighbors for users or items (user_k={}, item_k={})",
                self.user_k, self.item_k
            ));
        }
        if self.early_stop.eval_every > 0 && self.early_stop.cutoff == 0 {
            return fail("early-stopping cutoff must be at least 1".into());
        }
        Ok(())
    }

    /// Model family label such as `bpr-mf` or `funk-nnmf`.
    pub fn kind(&self) -> String {
        format!(
            "{}-{}",
            self.algorithm.as_str(),
            if self.nnmf { "nnmf" } else { "mf" }
        )
    }

    /// SHA-256 of the canonical JSON form, as hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        to_hex(&Sha256::digest(json.as_bytes()))
    }
}

/// Base factor matrices `P` (users x f) and `Q` (items x f).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPair {
    pub p: DenseMatrix,
    pub q: DenseMatrix,
}

impl EmbeddingPair {
    pub fn f(&self) -> usize {
        self.p.cols()
    }

    pub fn all_finite(&self) -> bool {
        self.p.all_finite() && self.q.all_finite()
    }

    pub fn max_abs(&self) -> f64 {
        self.p.max_abs().max(self.q.max_abs())
    }

    pub fn scorer(&self) -> EmbeddingScorer<'_> {
        EmbeddingScorer {
            users: &self.p,
            items: &self.q,
        }
    }
}

/// I.i.d. `Normal(0, 0.1 / sqrt(f))` entries, `P` drawn before `Q`.
pub fn init_embeddings(n_users: usize, n_items: usize, f: usize, seed: u64) -> Result<EmbeddingPair> {
    if n_users == 0 || n_items == 0 || f == 0 {
        return Err(Error::invalid("embedding dimensions must be at least 1"));
    }
    let normal = Normal::new(0.0, 0.1 / (f as f64).sqrt()).expect("finite std");
    let mut rng = seeded_rng(seed);
    let mut draw = |rows: usize| {
        let data = (0..rows * f).map(|_| normal.sample(&mut rng)).collect();
        DenseMatrix::from_vec(rows, f, data)
    };
    let p = draw(n_users);
    let q = draw(n_items);
    Ok(EmbeddingPair { p, q })
}

pub fn predict_mf(p: &DenseMatrix, q: &DenseMatrix, u: usize, i: usize) -> f64 {
    dot(p.row(u), q.row(i))
}

/// `sum_y s_xy * base_y` over the stored neighbors of `x`.
///
/// The accumulator starts from the first term, so a self-only row
/// reproduces the base row bit for bit.
pub fn neighborhood_sum(base: &DenseMatrix, sim: &SimilarityMatrix, x: usize, out: &mut [f64]) {
    let mut terms = sim.row(x);
    let (y0, w0) = terms.next().expect("every row stores its self-entry");
    for (o, b) in out.iter_mut().zip(base.row(y0)) {
        *o = w0 * b;
    }
    for (y, w) in terms {
        for (o, b) in out.iter_mut().zip(base.row(y)) {
            *o += w * b;
        }
    }
}

pub fn predict_nnmf(
    p: &DenseMatrix,
    q: &DenseMatrix,
    s_user: &SimilarityMatrix,
    s_item: &SimilarityMatrix,
    u: usize,
    i: usize,
) -> f64 {
    let mut pu = vec![0.0; p.cols()];
    let mut qi = vec![0.0; q.cols()];
    neighborhood_sum(p, s_user, u, &mut pu);
    neighborhood_sum(q, s_item, i, &mut qi);
    dot(&pu, &qi)
}

fn expand(base: &DenseMatrix, sim: &SimilarityMatrix) -> DenseMatrix {
    let f = base.cols();
    let mut out = DenseMatrix::zeros(base.rows(), f);
    if f == 0 {
        return out;
    }
    out.as_mut_slice()
        .par_chunks_mut(f)
        .enumerate()
        .for_each(|(x, row)| neighborhood_sum(base, sim, x, row));
    out
}

/// `(S^U P, S^I Q)`.
pub fn materialize(
    base: &EmbeddingPair,
    s_user: &SimilarityMatrix,
    s_item: &SimilarityMatrix,
) -> Result<EmbeddingPair> {
    if s_user.n() != base.p.rows() || s_item.n() != base.q.rows() {
        return Err(Error::invalid(format!(
            "similarities are {}/{} but embeddings have {}/{} rows",
            s_user.n(),
            s_item.n(),
            base.p.rows(),
            base.q.rows()
        )));
    }
    Ok(EmbeddingPair {
        p: expand(&base.p, s_user),
        q: expand(&base.q, s_item),
    })
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Sample {
    /// Pointwise example for Funk and P-MF.
    Rating { user: usize, item: usize, target: f64 },
    /// BPR triple: `user` prefers `positive` over `negative`.
    Triple {
        user: usize,
        positive: usize,
        negative: usize,
    },
}

/// Training-example stream. Its randomness comes only from `sample_seed`,
/// so it is identical across initialization seeds.
pub struct Sampler<'a> {
    train: &'a InteractionMatrix,
    algorithm: Algorithm,
    negative_ratio: usize,
    positives: Vec<(usize, usize, f64)>,
    order: Vec<usize>,
    rng: SeededRng,
}

impl<'a> Sampler<'a> {
    pub fn new(
        train: &'a InteractionMatrix,
        algorithm: Algorithm,
        negative_ratio: usize,
        sample_seed: u64,
    ) -> Self {
        let n_items = train.n_items();
        let mut saturated = 0usize;
        let positives: Vec<(usize, usize, f64)> = train
            .iter()
            .filter(|it| {
                let full = train.row_len(it.user) == n_items;
                if full && algorithm == Algorithm::Bpr {
                    saturated += 1;
                }
                !(full && algorithm == Algorithm::Bpr)
            })
            .map(|it| (it.user, it.item, it.value))
            .collect();
        if saturated > 0 {
            log::warn!("skipping {saturated} positives of users who interacted with every item");
        }
        let order = (0..positives.len()).collect();
        Self {
            train,
            algorithm,
            negative_ratio,
            positives,
            order,
            rng: seeded_rng(sample_seed),
        }
    }

    fn draw_negative(&mut self, user: usize) -> Option<usize> {
        let n_items = self.train.n_items();
        if self.train.row_len(user) >= n_items {
            return None;
        }
        loop {
            let j = self.rng.random_range(0..n_items);
            if !self.train.contains(user, j) {
                return Some(j);
            }
        }
    }

    /// Appends one epoch of samples to `out`.
    pub fn next_epoch(&mut self, out: &mut Vec<Sample>) {
        self.order.shuffle(&mut self.rng);
        for k in 0..self.order.len() {
            let (user, item, value) = self.positives[self.order[k]];
            match self.algorithm {
                Algorithm::Bpr => {
                    if let Some(negative) = self.draw_negative(user) {
                        out.push(Sample::Triple {
                            user,
                            positive: item,
                            negative,
                        });
                    }
                }
                Algorithm::Funk | Algorithm::Pmf => {
                    out.push(Sample::Rating {
                        user,
                        item,
                        target: value,
                    });
                    for _ in 0..self.negative_ratio {
                        if let Some(j) = self.draw_negative(user) {
                            out.push(Sample::Rating {
                                user,
                                item: j,
                                target: 0.0,
                            });
                        }
                    }
                }
            }
        }
    }
}

/// Gradient of one sample's objective with respect to the touched base rows.
///
/// Objectives (with `x` the NNMF score and the regularizers summed over the
/// touched rows only):
/// - Funk: `(r - x)^2 / 2 + reg`
/// - P-MF: `(r - sigmoid(x))^2 / 2 + reg`
/// - BPR: `-ln sigmoid(x_ui - x_uj) + reg`
///
/// with `reg = reg_p/2 * sum |p_v|^2 + reg_q/2 * sum |q_k|^2`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleGradient {
    /// Full objective, regularization included.
    pub loss: f64,
    /// Data term only.
    pub data_loss: f64,
    pub users: Vec<usize>,
    pub user_grad: Vec<f64>,
    pub items: Vec<usize>,
    pub item_grad: Vec<f64>,
}

/// Reusable buffers for [`SampleGradient`] computation.
#[derive(Clone, Debug, Default)]
pub struct StepWorkspace {
    pub grad: SampleGradient,
    pu: Vec<f64>,
    qi: Vec<f64>,
    qj: Vec<f64>,
    merged: Vec<(usize, f64)>,
}

/// Hyperparameters of a single update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepParams {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    pub reg_p: f64,
    pub reg_q: f64,
}

impl From<&ModelConfig> for StepParams {
    fn from(c: &ModelConfig) -> Self {
        Self {
            algorithm: c.algorithm,
            learning_rate: c.learning_rate,
            reg_p: c.reg_p,
            reg_q: c.reg_q,
        }
    }
}

impl StepWorkspace {
    pub fn new(f: usize) -> Self {
        Self {
            pu: vec![0.0; f],
            qi: vec![0.0; f],
            qj: vec![0.0; f],
            ..Self::default()
        }
    }

    /// Fills `self.grad` for `sample` at the current embeddings.
    pub fn compute(
        &mut self,
        params: &StepParams,
        emb: &EmbeddingPair,
        s_user: &SimilarityMatrix,
        s_item: &SimilarityMatrix,
        sample: &Sample,
    ) {
        let f = emb.f();
        self.pu.resize(f, 0.0);
        self.qi.resize(f, 0.0);
        self.qj.resize(f, 0.0);
        let g = &mut self.grad;
        g.users.clear();
        g.user_grad.clear();
        g.items.clear();
        g.item_grad.clear();

        let user = match *sample {
            Sample::Rating { user, .. } | Sample::Triple { user, .. } => user,
        };
        neighborhood_sum(&emb.p, s_user, user, &mut self.pu);

        // coefficient of d(data loss)/d(score); `user_dir` is what the user
        // side is multiplied by (q*_i, or q*_i - q*_j for BPR)
        let coef;
        match *sample {
            Sample::Rating { item, target, .. } => {
                neighborhood_sum(&emb.q, s_item, item, &mut self.qi);
                let x = dot(&self.pu, &self.qi);
                match params.algorithm {
                    Algorithm::Funk => {
                        let e = target - x;
                        g.data_loss = 0.5 * e * e;
                        coef = -e;
                    }
                    Algorithm::Pmf => {
                        let s = sigmoid(x);
                        let e = target - s;
                        g.data_loss = 0.5 * e * e;
                        coef = -(e * s * (1.0 - s));
                    }
                    Algorithm::Bpr => panic!("BPR trains on triples, got a rating sample"),
                }
                self.merged.clear();
                self.merged.extend(s_item.row(item));
            }
            Sample::Triple {
                positive, negative, ..
            } => {
                assert_eq!(
                    params.algorithm,
                    Algorithm::Bpr,
                    "triple sample for a pointwise model"
                );
                neighborhood_sum(&emb.q, s_item, positive, &mut self.qi);
                neighborhood_sum(&emb.q, s_item, negative, &mut self.qj);
                for (a, b) in self.qi.iter_mut().zip(&self.qj) {
                    *a -= b;
                }
                let x = dot(&self.pu, &self.qi);
                g.data_loss = softplus(-x);
                coef = -sigmoid(-x);
                merge_difference(s_item.row(positive), s_item.row(negative), &mut self.merged);
            }
        }

        let mut loss = g.data_loss;
        for (v, w) in s_user.row(user) {
            let pv = emb.p.row(v);
            let c = coef * w;
            g.users.push(v);
            for (d, &b) in pv.iter().enumerate() {
                g.user_grad.push(c * self.qi[d] + params.reg_p * b);
            }
            loss += 0.5 * params.reg_p * dot(pv, pv);
        }
        for &(k, w) in &self.merged {
            let qk = emb.q.row(k);
            let c = coef * w;
            g.items.push(k);
            for (d, &b) in qk.iter().enumerate() {
                g.item_grad.push(c * self.pu[d] + params.reg_q * b);
            }
            loss += 0.5 * params.reg_q * dot(qk, qk);
        }
        g.loss = loss;
    }

    /// Descends along the last computed gradient.
    pub fn apply(&self, emb: &mut EmbeddingPair, learning_rate: f64) {
        let f = emb.f();
        let g = &self.grad;
        for (n, &v) in g.users.iter().enumerate() {
            let row = emb.p.row_mut(v);
            for (x, dg) in row.iter_mut().zip(&g.user_grad[n * f..(n + 1) * f]) {
                *x -= learning_rate * dg;
            }
        }
        for (n, &k) in g.items.iter().enumerate() {
            let row = emb.q.row_mut(k);
            for (x, dg) in row.iter_mut().zip(&g.item_grad[n * f..(n + 1) * f]) {
                *x -= learning_rate * dg;
            }
        }
    }
}

/// Union of two sorted neighbor rows with weight `s_ik - s_jk`.
fn merge_difference(
    a: impl Iterator<Item = (usize, f64)>,
    b: impl Iterator<Item = (usize, f64)>,
    out: &mut Vec<(usize, f64)>,
) {
    out.clear();
    let mut a = a.peekable();
    let mut b = b.peekable();
    loop {
        match (a.peek().copied(), b.peek().copied()) {
            (Some((ka, wa)), Some((kb, wb))) => {
                if ka < kb {
                    out.push((ka, wa - 0.0));
                    a.next();
                } else if kb < ka {
                    out.push((kb, 0.0 - wb));
                    b.next();
                } else {
                    out.push((ka, wa - wb));
                    a.next();
                    b.next();
                }
            }
            (Some((ka, wa)), None) => {
                out.push((ka, wa - 0.0));
                a.next();
            }
            (None, Some((kb, wb))) => {
                out.push((kb, 0.0 - wb));
                b.next();
            }
            (None, None) => break,
        }
    }
}

/// One SGD update; returns the sample's data loss before the update.
pub fn sgd_step(
    params: &StepParams,
    emb: &mut EmbeddingPair,
    s_user: &SimilarityMatrix,
    s_item: &SimilarityMatrix,
    sample: &Sample,
    ws: &mut StepWorkspace,
) -> f64 {
    ws.compute(params, emb, s_user, s_item, sample);
    ws.apply(emb, params.learning_rate);
    ws.grad.data_loss
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Sum of per-sample data losses over the epoch.
    pub loss: f64,
    /// Validation MAP at the early-stopping cutoff, when evaluated.
    pub val_metric: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    /// Generating-set matrices `P`, `Q` (best checkpoint when early stopping).
    pub base: EmbeddingPair,
    pub s_user: Arc<SimilarityMatrix>,
    pub s_item: Arc<SimilarityMatrix>,
    /// `(S^U P, S^I Q)`.
    pub materialized: EmbeddingPair,
    pub history: Vec<EpochRecord>,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    /// First [`SAMPLE_TRACE_LEN`] samples of the training stream.
    pub sample_trace: Vec<Sample>,
}

impl TrainedModel {
    pub fn predict(&self, u: usize, i: usize) -> f64 {
        dot(self.materialized.p.row(u), self.materialized.q.row(i))
    }

    /// Recomputes `S^U P`, `S^I Q` and compares with the stored embeddings.
    pub fn check_materialized(&self) -> bool {
        materialize(&self.base, &self.s_user, &self.s_item)
            .map(|m| m == self.materialized)
            .unwrap_or(false)
    }

    pub fn best_val_metric(&self) -> Option<f64> {
        self.history
            .iter()
            .filter_map(|r| r.val_metric)
            .fold(None, |best, v| Some(best.map_or(v, |b: f64| b.max(v))))
    }
}

impl Scorer for TrainedModel {
    fn n_users(&self) -> usize {
        self.materialized.p.rows()
    }

    fn n_items(&self) -> usize {
        self.materialized.q.rows()
    }

    fn score_user(&self, user: usize, out: &mut [f64]) {
        self.materialized.scorer().score_user(user, out)
    }
}

/// Base and materialized embeddings, history, epochs run, best epoch and
/// the sample trace.
type TrainingOutcome = (
    EmbeddingPair,
    EmbeddingPair,
    Vec<EpochRecord>,
    usize,
    Option<usize>,
    Vec<Sample>,
);

/// Shared epoch loop: sampling, per-sample steps, divergence checks and
/// validation-MAP early stopping with best-checkpoint restore.
fn run_training<F, M>(
    split: &DatasetSplit,
    config: &ModelConfig,
    mut step: F,
    materialize_fn: M,
) -> Result<TrainingOutcome>
where
    F: FnMut(&mut EmbeddingPair, &Sample) -> f64,
    M: Fn(&EmbeddingPair) -> EmbeddingPair,
{
    config.validate()?;
    let train = &split.train;
    if train.nnz() == 0 {
        return Err(Error::EmptyDataset("train matrix has no interactions".into()));
    }
    let mut emb = init_embeddings(train.n_users(), train.n_items(), config.f, config.init_seed)?;
    let mut sampler = Sampler::new(train, config.algorithm, config.negative_ratio, config.sample_seed);
    let es = &config.early_stop;
    let evaluate = es.eval_every > 0 && split.validation.nnz() > 0;

    let mut history = Vec::new();
    let mut trace = Vec::new();
    let mut samples = Vec::new();
    let mut best: Option<(f64, usize, EmbeddingPair)> = None;
    let mut stale = 0usize;
    let mut epochs_run = 0;

    for epoch in 1..=config.epochs_max {
        samples.clear();
        sampler.next_epoch(&mut samples);
        if trace.len() < SAMPLE_TRACE_LEN {
            let take = (SAMPLE_TRACE_LEN - trace.len()).min(samples.len());
            trace.extend_from_slice(&samples[..take]);
        }
        let mut loss = 0.0;
        for s in &samples {
            loss += step(&mut emb, s);
        }
        epochs_run = epoch;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: format!("non-finite loss {loss}"),
            });
        }
        let peak = emb.max_abs();
        if !emb.all_finite() || peak > DIVERGENCE_LIMIT {
            return Err(Error::Diverged {
                epoch,
                reason: format!("embedding magnitude {peak} exceeds {DIVERGENCE_LIMIT}"),
            });
        }

        let mut record = EpochRecord {
            epoch,
            loss,
            val_metric: None,
        };
        if evaluate && epoch % es.eval_every == 0 {
            let m = materialize_fn(&emb);
            let recs = recommend_topn(&m.scorer(), train, es.cutoff)?;
            let metric = map_at_k(&recs, &split.validation, es.cutoff)?;
            record.val_metric = Some(metric);
            match &best {
                Some((b, _, _)) if metric <= *b => stale += 1,
                _ => {
                    best = Some((metric, epoch, emb.clone()));
                    stale = 0;
                }
            }
        }
        history.push(record);
        if evaluate && stale >= es.patience.max(1) {
            break;
        }
    }

    let (base, best_epoch) = match best {
        Some((_, epoch, e)) => (e, Some(epoch)),
        None => (emb, None),
    };
    let materialized = materialize_fn(&base);
    Ok((base, materialized, history, epochs_run, best_epoch, trace))
}

fn check_similarities(
    split: &DatasetSplit,
    config: &ModelConfig,
    s_user: &SimilarityMatrix,
    s_item: &SimilarityMatrix,
) -> Result<()> {
    if s_user.n() != split.n_users() || s_item.n() != split.n_items() {
        return Err(Error::invalid(format!(
            "similarities are {}x{} for a {}x{} dataset",
            s_user.n(),
            s_item.n(),
            split.n_users(),
            split.n_items()
        )));
    }
    if !config.nnmf && !(s_user.is_identity() && s_item.is_identity()) {
        return Err(Error::Config(
            "plain MF configs must be trained with identity similarities".into(),
        ));
    }
    Ok(())
}

/// Trains any of the three NNMF variants, dispatching on `config.algorithm`.
pub fn train(
    split: &DatasetSplit,
    config: &ModelConfig,
    s_user: Arc<SimilarityMatrix>,
    s_item: Arc<SimilarityMatrix>,
) -> Result<TrainedModel> {
    check_similarities(split, config, &s_user, &s_item)?;
    let params = StepParams::from(config);
    let mut ws = StepWorkspace::new(config.f);
    let (su, si) = (&*s_user, &*s_item);
    let (base, materialized, history, epochs_run, best_epoch, sample_trace) = run_training(
        split,
        config,
        |emb, s| sgd_step(&params, emb, su, si, s, &mut ws),
        |emb| materialize(emb, su, si).expect("dimensions checked"),
    )?;
    Ok(TrainedModel {
        config: config.clone(),
        base,
        s_user,
        s_item,
        materialized,
        history,
        epochs_run,
        best_epoch,
        sample_trace,
    })
}

fn train_expecting(
    expected: Algorithm,
    split: &DatasetSplit,
    config: &ModelConfig,
    s_user: Arc<SimilarityMatrix>,
    s_item: Arc<SimilarityMatrix>,
) -> Result<TrainedModel> {
    if config.algorithm != expected {
        return Err(Error::Config(format!(
            "expected a {} config, got {}",
            expected.as_str(),
            config.algorithm.as_str()
        )));
    }
    train(split, config, s_user, s_item)
}

/// Funk-NNMF: regularized squared error on positives and sampled zeros.
pub fn train_funk(
    split: &DatasetSplit,
    config: &ModelConfig,
    s_user: Arc<SimilarityMatrix>,
    s_item: Arc<SimilarityMatrix>,
) -> Result<TrainedModel> {
    train_expecting(Algorithm::Funk, split, config, s_user, s_item)
}

/// BPR-NNMF: pairwise log-sigmoid ranking objective over sampled triples.
pub fn train_bpr(
    split: &DatasetSplit,
    config: &ModelConfig,
    s_user: Arc<SimilarityMatrix>,
    s_item: Arc<SimilarityMatrix>,
) -> Result<TrainedModel> {
    train_expecting(Algorithm::Bpr, split, config, s_user, s_item)
}

/// P-NNMF: squared error of the sigmoid of the NNMF score.
pub fn train_pmf(
    split: &DatasetSplit,
    config: &ModelConfig,
    s_user: Arc<SimilarityMatrix>,
    s_item: Arc<SimilarityMatrix>,
) -> Result<TrainedModel> {
    train_expecting(Algorithm::Pmf, split, config, s_user, s_item)
}

/// Classic MF update rules written directly over `p_u`, `q_i` (and `q_j`),
/// with no similarity machinery. Shares only the sampler, initialization
/// and epoch loop with the NNMF trainers.
pub mod plain {
    use super::*;

    /// One literal MF update; returns the data loss before the update.
    pub fn step(params: &StepParams, emb: &mut EmbeddingPair, sample: &Sample) -> f64 {
        let (lr, rp, rq) = (params.learning_rate, params.reg_p, params.reg_q);
        match *sample {
            Sample::Rating { user, item, target } => {
                let pu = emb.p.row(user).to_vec();
                let qi = emb.q.row(item).to_vec();
                let x = dot(&pu, &qi);
                let (loss, coef) = match params.algorithm {
                    Algorithm::Funk => {
                        let e = target - x;
                        (0.5 * e * e, -e)
                    }
                    Algorithm::Pmf => {
                        let s = sigmoid(x);
                        let e = target - s;
                        (0.5 * e * e, -(e * s * (1.0 - s)))
                    }
                    Algorithm::Bpr => panic!("BPR trains on triples"),
                };
                let p_row = emb.p.row_mut(user);
                for d in 0..pu.len() {
                    p_row[d] -= lr * (coef * qi[d] + rp * pu[d]);
                }
                let q_row = emb.q.row_mut(item);
                for d in 0..qi.len() {
                    q_row[d] -= lr * (coef * pu[d] + rq * qi[d]);
                }
                loss
            }
            Sample::Triple {
                user,
                positive,
                negative,
            } => {
                let pu = emb.p.row(user).to_vec();
                let qi = emb.q.row(positive).to_vec();
                let qj = emb.q.row(negative).to_vec();
                let diff: Vec<f64> = qi.iter().zip(&qj).map(|(a, b)| a - b).collect();
                let x = dot(&pu, &diff);
                let coef = -sigmoid(-x);
                let p_row = emb.p.row_mut(user);
                for d in 0..pu.len() {
                    p_row[d] -= lr * (coef * diff[d] + rp * pu[d]);
                }
                let qi_row = emb.q.row_mut(positive);
                for d in 0..qi.len() {
                    qi_row[d] -= lr * (coef * pu[d] + rq * qi[d]);
                }
                let qj_row = emb.q.row_mut(negative);
                for d in 0..qj.len() {
                    qj_row[d] -= lr * (-coef * pu[d] + rq * qj[d]);
                }
                softplus(-x)
            }
        }
    }

    /// Trains plain MF with the literal update rules. The returned model
    /// carries identity similarities.
    pub fn train(split: &DatasetSplit, config: &ModelConfig) -> Result<TrainedModel> {
        if config.nnmf {
            return Err(Error::Config("plain MF path needs nnmf = false".into()));
        }
        let params = StepParams::from(config);
        let (base, materialized, history, epochs_run, best_epoch, sample_trace) =
            run_training(split, config, |emb, s| step(&params, emb, s), |emb| emb.clone())?;
        Ok(TrainedModel {
            config: config.clone(),
            base,
            s_user: Arc::new(identity_similarity(split.n_users())?),
            s_item: Arc::new(identity_similarity(split.n_items())?),
            materialized,
            history,
            epochs_run,
            best_epoch,
            sample_trace,
        })
    }
}

/// Identity similarities for plain MF, or shrunk-cosine neighborhoods for
/// NNMF, according to `config`.
pub fn similarities_for(
    train: &InteractionMatrix,
    config: &ModelConfig,
) -> Result<(Arc<SimilarityMatrix>, Arc<SimilarityMatrix>)> {
    use crate::similarity::{cosine_topk, Axis};
    if !config.nnmf {
        return Ok((
            Arc::new(identity_similarity(train.n_users())?),
            Arc::new(identity_similarity(train.n_items())?),
        ));
    }
    let su = if config.user_k == 0 {
        identity_similarity(train.n_users())?
    } else {
        cosine_topk(train, Axis::User, config.user_k, config.user_shrink)?
    };
    let si = if config.item_k == 0 {
        identity_similarity(train.n_items())?
    } else {
        cosine_topk(train, Axis::Item, config.item_k, config.item_shrink)?
    };
    Ok((Arc::new(su), Arc::new(si)))
}
