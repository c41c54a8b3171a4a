//! Accuracy baselines: item/user KNN, SLIM trained with BPR, and PureSVD.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::InteractionMatrix;
use crate::dense::{dot, DenseMatrix};
use crate::error::{Error, Result};
use crate::evaluation::Scorer;
use crate::factorization::{sigmoid, softplus, DIVERGENCE_LIMIT};
use crate::seeded_rng;
use crate::similarity::{cosine_topk, Axis, SimilarityMatrix};

/// Oversampling columns of the randomized range finder.
pub const SVD_OVERSAMPLING: usize = 10;
/// Power iterations of the randomized range finder.
pub const SVD_POWER_ITERATIONS: usize = 7;

#[derive(Clone, Debug, PartialEq)]
pub enum ScoreModel {
    /// `score_u(b) = sum_a r_ua * S[b, a]`, self-entries ignored.
    ItemKnn {
        train: InteractionMatrix,
        sim: SimilarityMatrix,
        /// For each item `a`, the items `b != a` with `S[b, a] > 0`.
        incoming: Vec<Vec<(usize, f64)>>,
    },
    /// `score_u = sum_{v != u} s_uv * r_v`.
    UserKnn {
        train: InteractionMatrix,
        sim: SimilarityMatrix,
    },
    /// `score_u(i) = sum_{l in r_u} w_li`; `weights` row `i` holds column
    /// `w_{., i}` of the item-item matrix.
    Slim {
        train: InteractionMatrix,
        weights: DenseMatrix,
    },
    /// `score_u = r_u V V^T` with `V` the top right-singular vectors.
    PureSvd {
        train: InteractionMatrix,
        v: DenseMatrix,
        singular_values: Vec<f64>,
    },
}

impl ScoreModel {
    pub fn kind(&self) -> &'static str {
        match self {
            ScoreModel::ItemKnn { .. } => "item_knn",
            ScoreModel::UserKnn { .. } => "user_knn",
            ScoreModel::Slim { .. } => "slim",
            ScoreModel::PureSvd { .. } => "pure_svd",
        }
    }

    fn train(&self) -> &InteractionMatrix {
        match self {
            ScoreModel::ItemKnn { train, .. }
            | ScoreModel::UserKnn { train, .. }
            | ScoreModel::Slim { train, .. }
            | ScoreModel::PureSvd { train, .. } => train,
        }
    }

    pub fn score(&self, user: usize, item: usize) -> f64 {
        let mut out = vec![0.0; self.n_items()];
        self.score_user(user, &mut out);
        out[item]
    }
}

impl Scorer for ScoreModel {
    fn n_users(&self) -> usize {
        self.train().n_users()
    }

    fn n_items(&self) -> usize {
        self.train().n_items()
    }

    fn score_user(&self, user: usize, out: &mut [f64]) {
        out.fill(0.0);
        match self {
            ScoreModel::ItemKnn { train, incoming, .. } => {
                for (&a, &r) in train.row_items(user).iter().zip(train.row_values(user)) {
                    for &(b, w) in &incoming[a] {
                        out[b] += r * w;
                    }
                }
            }
            ScoreModel::UserKnn { train, sim } => {
                for (v, w) in sim.row(user) {
                    if v == user {
                        continue;
                    }
                    for (&i, &r) in train.row_items(v).iter().zip(train.row_values(v)) {
                        out[i] += w * r;
                    }
                }
            }
            ScoreModel::Slim { train, weights } => {
                let profile = train.row_items(user);
                for (i, o) in out.iter_mut().enumerate() {
                    let col = weights.row(i);
                    *o = profile.iter().map(|&l| col[l]).sum();
                }
            }
            ScoreModel::PureSvd { train, v, .. } => {
                let mut t = vec![0.0; v.cols()];
                for (&i, &r) in train.row_items(user).iter().zip(train.row_values(user)) {
                    for (td, vd) in t.iter_mut().zip(v.row(i)) {
                        *td += r * vd;
                    }
                }
                for (i, o) in out.iter_mut().enumerate() {
                    *o = dot(&t, v.row(i));
                }
            }
        }
    }
}

pub fn fit_knn(train: &InteractionMatrix, axis: Axis, k: usize, shrink: f64) -> Result<ScoreModel> {
    let sim = cosine_topk(train, axis, k, shrink)?;
    Ok(knn_from_similarity(train, axis, sim))
}

/// KNN scorer over a precomputed similarity.
pub fn knn_from_similarity(train: &InteractionMatrix, axis: Axis, sim: SimilarityMatrix) -> ScoreModel {
    match axis {
        Axis::Item => {
            let mut incoming = vec![Vec::new(); sim.n()];
            for b in 0..sim.n() {
                for (a, w) in sim.row(b) {
                    if a != b {
                        incoming[a].push((b, w));
                    }
                }
            }
            ScoreModel::ItemKnn {
                train: train.clone(),
                sim,
                incoming,
            }
        }
        Axis::User => ScoreModel::UserKnn {
            train: train.clone(),
            sim,
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlimConfig {
    /// Weights kept per column after training.
    pub k: usize,
    pub learning_rate: f64,
    pub reg: f64,
    pub epochs: usize,
    pub sample_seed: u64,
}

impl Default for SlimConfig {
    fn default() -> Self {
        Self {
            k: 100,
            learning_rate: 0.01,
            reg: 0.001,
            epochs: 30,
            sample_seed: 0,
        }
    }
}

/// Loss and gradient of one SLIM-BPR triple.
///
/// `x = sum_{l in r_u} (w_li - w_lj)` and the objective is
/// `softplus(-x) + reg/2 * sum_{l in r_u} (w_li^2 + w_lj^2)`, with diagonal
/// entries held at zero and excluded from both sums.
#[derive(Clone, Debug, PartialEq)]
pub struct SlimGradient {
    pub loss: f64,
    /// `(l, d/dw_li)` for `l in r_u`, `l != i`.
    pub positive: Vec<(usize, f64)>,
    /// `(l, d/dw_lj)` for `l in r_u`, `l != j`.
    pub negative: Vec<(usize, f64)>,
}

pub fn slim_gradient(weights: &DenseMatrix, profile: &[usize], i: usize, j: usize, reg: f64) -> SlimGradient {
    let wi = weights.row(i);
    let wj = weights.row(j);
    let x: f64 = profile.iter().filter(|&&l| l != i).map(|&l| wi[l]).sum::<f64>()
        - profile.iter().filter(|&&l| l != j).map(|&l| wj[l]).sum::<f64>();
    let z = sigmoid(-x);
    let mut loss = softplus(-x);
    let mut positive = Vec::with_capacity(profile.len());
    let mut negative = Vec::with_capacity(profile.len());
    for &l in profile {
        if l != i {
            positive.push((l, -z + reg * wi[l]));
            loss += 0.5 * reg * wi[l] * wi[l];
        }
        if l != j {
            negative.push((l, z + reg * wj[l]));
            loss += 0.5 * reg * wj[l] * wj[l];
        }
    }
    SlimGradient {
        loss,
        positive,
        negative,
    }
}

/// Keeps the `k` largest entries of every column (ties toward smaller `l`).
fn prune_columns(weights: &mut DenseMatrix, k: usize) {
    let n = weights.cols();
    if k >= n {
        return;
    }
    let mut idx: Vec<usize> = Vec::with_capacity(n);
    for i in 0..weights.rows() {
        let col = weights.row_mut(i);
        idx.clear();
        idx.extend(0..n);
        idx.sort_by(|&a, &b| col[b].total_cmp(&col[a]).then(a.cmp(&b)));
        for &l in &idx[k..] {
            col[l] = 0.0;
        }
    }
}

pub fn fit_slim_bpr(train: &InteractionMatrix, config: &SlimConfig) -> Result<ScoreModel> {
    fit_slim_bpr_with(train, config, |_, _| {})
}

/// As [`fit_slim_bpr`], calling `on_epoch(epoch, weights)` after each epoch.
pub fn fit_slim_bpr_with(
    train: &InteractionMatrix,
    config: &SlimConfig,
    mut on_epoch: impl FnMut(usize, &DenseMatrix),
) -> Result<ScoreModel> {
    if train.nnz() == 0 {
        return Err(Error::EmptyDataset("SLIM needs a non-empty train matrix".into()));
    }
    if config.learning_rate.is_nan() || config.learning_rate <= 0.0 || config.reg.is_nan() || config.reg < 0.0
    {
        return Err(Error::Config("SLIM needs learning_rate > 0 and reg >= 0".into()));
    }
    let n_items = train.n_items();
    let mut weights = DenseMatrix::zeros(n_items, n_items);
    let mut positives: Vec<(usize, usize)> = train
        .iter()
        .filter(|it| train.row_len(it.user) < n_items)
        .map(|it| (it.user, it.item))
        .collect();
    let mut rng = seeded_rng(config.sample_seed);
    let lr = config.learning_rate;
    for epoch in 1..=config.epochs {
        positives.shuffle(&mut rng);
        for &(u, i) in &positives {
            let j = loop {
                let j = rng.random_range(0..n_items);
                if !train.contains(u, j) {
                    break j;
                }
            };
            let g = slim_gradient(&weights, train.row_items(u), i, j, config.reg);
            let wi = weights.row_mut(i);
            for &(l, d) in &g.positive {
                wi[l] -= lr * d;
            }
            let wj = weights.row_mut(j);
            for &(l, d) in &g.negative {
                wj[l] -= lr * d;
            }
        }
        let peak = weights.max_abs();
        if !weights.all_finite() || peak > DIVERGENCE_LIMIT {
            return Err(Error::Diverged {
                epoch,
                reason: format!("SLIM weight magnitude {peak}"),
            });
        }
        on_epoch(epoch, &weights);
    }
    prune_columns(&mut weights, config.k);
    Ok(ScoreModel::Slim {
        train: train.clone(),
        weights,
    })
}

/// `A * X` for sparse `A`.
fn sparse_mul(a: &InteractionMatrix, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.n_users(), x.ncols());
    for u in 0..a.n_users() {
        for (&i, &r) in a.row_items(u).iter().zip(a.row_values(u)) {
            for c in 0..x.ncols() {
                out[(u, c)] += r * x[(i, c)];
            }
        }
    }
    out
}

fn orthonormalize(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

/// Rank-`f` truncated SVD of the binary train matrix by seeded randomized
/// subspace iteration. Returns `(singular values, V)` with `V` items x f.
pub fn randomized_svd(train: &InteractionMatrix, f: usize, seed: u64) -> Result<(Vec<f64>, DenseMatrix)> {
    let (nu, ni) = (train.n_users(), train.n_items());
    if f == 0 || f > nu.min(ni) {
        return Err(Error::invalid(format!(
            "PureSVD rank {f} must be in 1..={}",
            nu.min(ni)
        )));
    }
    let at = train.transpose();
    let l = (f + SVD_OVERSAMPLING).min(nu.min(ni));
    let mut rng = seeded_rng(seed);
    let omega = DMatrix::from_fn(ni, l, |_, _| StandardNormal.sample(&mut rng));
    let mut q = orthonormalize(sparse_mul(train, &omega));
    for _ in 0..SVD_POWER_ITERATIONS {
        let z = orthonormalize(sparse_mul(&at, &q));
        q = orthonormalize(sparse_mul(train, &z));
    }
    // B^T = A^T Q, so B = U_b S V^T gives B^T = V S U_b^T
    let bt = sparse_mul(&at, &q);
    let svd = bt.svd(true, false);
    let u = svd.u.expect("left vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut v = DenseMatrix::zeros(ni, f);
    let mut values = Vec::with_capacity(f);
    for (c, &src) in order.iter().take(f).enumerate() {
        values.push(svd.singular_values[src]);
        let col = u.column(src);
        let pivot = (0..ni)
            .max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()).then(b.cmp(&a)))
            .expect("non-empty column");
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..ni {
            v.set(i, c, sign * col[i]);
        }
    }
    Ok((values, v))
}

pub fn fit_pure_svd(train: &InteractionMatrix, f: usize, seed: u64) -> Result<ScoreModel> {
    let (singular_values, v) = randomized_svd(train, f, seed)?;
    Ok(ScoreModel::PureSvd {
        train: train.clone(),
        v,
        singular_values,
    })
}

/// Largest deviation of `V^T V` from the identity.
pub fn orthonormality_error(v: &DenseMatrix) -> f64 {
    let f = v.cols();
    (0..f * f)
        .into_par_iter()
        .map(|idx| {
            let (a, b) = (idx / f, idx % f);
            let s: f64 = (0..v.rows()).map(|i| v.get(i, a) * v.get(i, b)).sum();
            (s - if a == b { 1.0 } else { 0.0 }).abs()
        })
        .reduce(|| 0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Interaction;

    fn matrix(nu: usize, ni: usize, pairs: &[(usize, usize)]) -> InteractionMatrix {
        let its: Vec<_> = pairs.iter().map(|&(u, i)| Interaction::new(u, i, 1.0)).collect();
        InteractionMatrix::from_interactions(nu, ni, &its).unwrap()
    }

    #[test]
    fn item_knn_single_term() {
        let train = matrix(1, 2, &[(0, 0)]);
        // item 1's neighborhood holds item 0 with weight 0.9
        let sim =
            SimilarityMatrix::from_rows(1, vec![vec![(0, 1.0), (1, 0.9)], vec![(0, 0.9), (1, 1.0)]]).unwrap();
        let m = knn_from_similarity(&train, Axis::Item, sim);
        let mut out = vec![0.0; 2];
        m.score_user(0, &mut out);
        assert_eq!(out, vec![0.0, 0.9]);
    }

    #[test]
    fn empty_profile_scores_zero() {
        let train = matrix(3, 3, &[(0, 0), (0, 1), (1, 1), (1, 2)]);
        for axis in [Axis::Item, Axis::User] {
            let m = fit_knn(&train, axis, 2, 0.0).unwrap();
            let mut out = vec![1.0; 3];
            m.score_user(2, &mut out);
            assert_eq!(out, vec![0.0; 3]);
        }
    }

    #[test]
    fn slim_diagonal_stays_zero() {
        let train = matrix(
            4,
            4,
            &[(0, 0), (0, 1), (1, 0), (1, 1), (2, 2), (2, 3), (3, 1), (3, 2)],
        );
        let cfg = SlimConfig {
            k: 4,
            learning_rate: 0.05,
            reg: 0.01,
            epochs: 20,
            sample_seed: 1,
        };
        let mut checked = 0;
        fit_slim_bpr_with(&train, &cfg, |_, w| {
            for i in 0..4 {
                assert_eq!(w.get(i, i), 0.0);
            }
            checked += 1;
        })
        .unwrap();
        assert_eq!(checked, 20);
    }

    #[test]
    fn slim_learns_cooccurrence() {
        // items 0 and 1 always appear together; items 2, 3 never with them
        let mut pairs = Vec::new();
        for u in 0..6 {
            pairs.push((u, 0));
            pairs.push((u, 1));
        }
        for u in 6..12 {
            pairs.push((u, 2 + u % 2));
        }
        let train = matrix(12, 4, &pairs);
        let cfg = SlimConfig {
            k: 3,
            learning_rate: 0.05,
            reg: 0.001,
            epochs: 50,
            sample_seed: 2,
        };
        match fit_slim_bpr(&train, &cfg).unwrap() {
            ScoreModel::Slim { weights, .. } => {
                // w_01 is stored in column 1
                assert!(weights.get(1, 0) > 0.0);
                assert!(weights.get(0, 1) > 0.0);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn slim_is_deterministic() {
        let train = matrix(
            5,
            5,
            &[(0, 0), (0, 1), (1, 1), (1, 2), (2, 3), (3, 4), (4, 0), (4, 4)],
        );
        let cfg = SlimConfig {
            k: 2,
            epochs: 5,
            ..SlimConfig::default()
        };
        assert_eq!(
            fit_slim_bpr(&train, &cfg).unwrap(),
            fit_slim_bpr(&train, &cfg).unwrap()
        );
    }

    #[test]
    fn rank_one_reconstruction() {
        let mut pairs = Vec::new();
        for u in 0..6 {
            for i in [0, 2, 3] {
                pairs.push((u, i));
            }
        }
        let train = matrix(6, 5, &pairs);
        let model = fit_pure_svd(&train, 1, 5).unwrap();
        for u in 0..6 {
            let mut out = vec![0.0; 5];
            model.score_user(u, &mut out);
            for (i, &s) in out.iter().enumerate() {
                let r = if train.contains(u, i) { 1.0 } else { 0.0 };
                assert!((s - r).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn svd_rank_checked() {
        let train = matrix(2, 3, &[(0, 0), (1, 1)]);
        assert!(fit_pure_svd(&train, 3, 0).is_err());
        assert!(fit_pure_svd(&train, 0, 0).is_err());
    }

    #[test]
    fn svd_deterministic_and_orthonormal() {
        let mut rng = seeded_rng(11);
        let mut pairs = Vec::new();
        for u in 0..20 {
            for i in 0..15 {
                if rng.random::<f64>() < 0.3 {
                    pairs.push((u, i));
                }
            }
        }
        let train = matrix(20, 15, &pairs);
        let a = fit_pure_svd(&train, 4, 9).unwrap();
        assert_eq!(a, fit_pure_svd(&train, 4, 9).unwrap());
        if let ScoreModel::PureSvd { v, .. } = &a {
            assert!(orthonormality_error(v) < 1e-8);
        }
    }
}
