//! Seed-stability of recommendations and of learned representations.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetSplit, InteractionMatrix};
use crate::dense::{dot, norm, DenseMatrix};
use crate::error::{Error, Result};
use crate::evaluation::{recommend_topn, PopularityBins, Scorer};
use crate::factorization::{train, ModelConfig, TrainedModel};
use crate::similarity::{Axis, SimilarityMatrix};

static EMPTY_PAIRS: AtomicUsize = AtomicUsize::new(0);
static SKIPPED_ENTITIES: AtomicUsize = AtomicUsize::new(0);

/// Number of Jaccard comparisons between two empty sets so far.
pub fn empty_pair_count() -> usize {
    EMPTY_PAIRS.load(Ordering::Relaxed)
}

/// Number of zero-norm embedding rows skipped so far.
pub fn skipped_entity_count() -> usize {
    SKIPPED_ENTITIES.load(Ordering::Relaxed)
}

/// `|a & b| / |a | b|` over the distinct elements of `a` and `b`; two
/// empty sets count as identical.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    a.dedup();
    b.sort_unstable();
    b.dedup();
    if a.is_empty() && b.is_empty() {
        EMPTY_PAIRS.fetch_add(1, Ordering::Relaxed);
        return 1.0;
    }
    let inter = a.iter().filter(|x| b.binary_search(x).is_ok()).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityKind {
    Recommendations,
    RepresentationsItem,
    RepresentationsUser,
}

impl StabilityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StabilityKind::Recommendations => "recommendations",
            StabilityKind::RepresentationsItem => "representations_item",
            StabilityKind::RepresentationsUser => "representations_user",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub kind: StabilityKind,
    pub cutoff: usize,
    /// Mean Jaccard of each evaluated entity against model 1, by entity id.
    pub per_entity: Vec<(usize, f64)>,
    pub overall: f64,
    /// Mean per-entity value within each non-empty popularity bin.
    pub per_bin: BTreeMap<usize, f64>,
    /// Item popularity bin of each entity, once [`per_bin_stability`] ran.
    #[serde(default)]
    pub entity_bins: Vec<Option<usize>>,
}

impl StabilityReport {
    fn from_values(kind: StabilityKind, cutoff: usize, per_entity: Vec<(usize, f64)>) -> Self {
        let overall = if per_entity.is_empty() {
            f64::NAN
        } else {
            per_entity.iter().map(|&(_, v)| v).sum::<f64>() / per_entity.len() as f64
        };
        Self {
            kind,
            cutoff,
            per_entity,
            overall,
            per_bin: BTreeMap::new(),
            entity_bins: Vec::new(),
        }
    }

    /// `entity_id,bin,mean_jaccard` rows; `bin` is empty when unknown.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "entity_id,bin,mean_jaccard")?;
        for &(e, v) in &self.per_entity {
            let bin = self
                .entity_bins
                .get(e)
                .copied()
                .flatten()
                .map(|b| b.to_string())
                .unwrap_or_default();
            writeln!(out, "{e},{bin},{v}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        let per_bin: serde_json::Map<String, serde_json::Value> = self
            .per_bin
            .iter()
            .map(|(b, v)| (b.to_string(), serde_json::json!(v)))
            .collect();
        serde_json::json!({
            "kind": self.kind.as_str(),
            "cutoff": self.cutoff,
            "entities": self.per_entity.len(),
            "overall": self.overall,
            "per_bin": per_bin,
        })
    }
}

/// Trains one model per init seed with everything else, including the
/// sample seed, held fixed. Output order follows `seeds`.
pub fn run_seeds(
    split: &DatasetSplit,
    config: &ModelConfig,
    s_user: Arc<SimilarityMatrix>,
    s_item: Arc<SimilarityMatrix>,
    seeds: &[u64],
) -> Result<Vec<TrainedModel>> {
    let results = run_seeds_partial(split, config, s_user, s_item, seeds);
    results.into_iter().collect()
}

/// As [`run_seeds`], keeping each seed's outcome; failures name their seed.
pub fn run_seeds_partial(
    split: &DatasetSplit,
    config: &ModelConfig,
    s_user: Arc<SimilarityMatrix>,
    s_item: Arc<SimilarityMatrix>,
    seeds: &[u64],
) -> Vec<Result<TrainedModel>> {
    if seeds.len() < 2 {
        return vec![Err(Error::invalid("stability needs at least 2 seeds"))];
    }
    seeds
        .par_iter()
        .map(|&seed| {
            let mut c = config.clone();
            c.init_seed = seed;
            train(split, &c, s_user.clone(), s_item.clone()).map_err(|e| e.context(format!("seed {seed}")))
        })
        .collect()
}

fn model_one_vs_rest(sets: &[Vec<Vec<usize>>], entities: &[usize]) -> Vec<(usize, f64)> {
    entities
        .iter()
        .map(|&e| {
            let base = &sets[0][e];
            let sum: f64 = sets[1..].iter().map(|s| jaccard(base, &s[e])).sum();
            (e, sum / (sets.len() - 1) as f64)
        })
        .collect()
}

/// Jaccard of model 1's top-`n` set against every other model's, averaged
/// per user and then over users.
pub fn recommendation_stability<S: Scorer>(
    models: &[S],
    train: &InteractionMatrix,
    n: usize,
) -> Result<StabilityReport> {
    if models.len() < 2 {
        return Err(Error::invalid("stability needs at least 2 models"));
    }
    let lists: Vec<Vec<Vec<usize>>> = models
        .iter()
        .map(|m| recommend_topn(m, train, n).map(|r| r.lists))
        .collect::<Result<_>>()?;
    let users: Vec<usize> = (0..train.n_users()).collect();
    Ok(StabilityReport::from_values(
        StabilityKind::Recommendations,
        n,
        model_one_vs_rest(&lists, &users),
    ))
}

/// `k` nearest rows of `emb` to each row by cosine, self excluded, ties by
/// ascending id. Zero-norm rows get `None` and are never neighbors.
pub fn cosine_neighbors(emb: &DenseMatrix, k: usize) -> Vec<Option<Vec<usize>>> {
    let n = emb.rows();
    let norms: Vec<f64> = (0..n).map(|x| norm(emb.row(x))).collect();
    (0..n)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(n),
            |cands: &mut Vec<(usize, f64)>, x| {
                if norms[x] == 0.0 {
                    return None;
                }
                cands.clear();
                let ex = emb.row(x);
                for y in 0..n {
                    if y != x && norms[y] > 0.0 {
                        cands.push((y, dot(ex, emb.row(y)) / (norms[x] * norms[y])));
                    }
                }
                let by_rank = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
                if cands.len() > k && k > 0 {
                    cands.select_nth_unstable_by(k - 1, by_rank);
                }
                cands.truncate(k);
                cands.sort_unstable_by(by_rank);
                Some(cands.iter().map(|&(y, _)| y).collect())
            },
        )
        .collect()
}

/// Which factor matrices representation neighborhoods are computed from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factors {
    #[default]
    Materialized,
    Base,
}

/// Jaccard of model 1's `k`-nearest-neighbor set against every other
/// model's, per entity. Entities with a zero-norm row in any model are
/// skipped.
pub fn representation_stability(
    embeddings: &[&DenseMatrix],
    axis: Axis,
    k: usize,
) -> Result<StabilityReport> {
    if embeddings.len() < 2 {
        return Err(Error::invalid("stability needs at least 2 models"));
    }
    let n = embeddings[0].rows();
    if embeddings.iter().any(|e| e.rows() != n) {
        return Err(Error::invalid("embedding tables disagree on entity count"));
    }
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("neighbor count {k} must be in 1..{n}")));
    }
    let neighbors: Vec<Vec<Option<Vec<usize>>>> = embeddings.iter().map(|e| cosine_neighbors(e, k)).collect();
    let mut entities = Vec::with_capacity(n);
    for e in 0..n {
        if neighbors.iter().all(|nb| nb[e].is_some()) {
            entities.push(e);
        } else {
            SKIPPED_ENTITIES.fetch_add(1, Ordering::Relaxed);
        }
    }
    if entities.len() < n {
        log::warn!("skipped {} zero-norm {} rows", n - entities.len(), axis.as_str());
    }
    let sets: Vec<Vec<Vec<usize>>> = neighbors
        .into_iter()
        .map(|nb| nb.into_iter().map(Option::unwrap_or_default).collect())
        .collect();
    let kind = match axis {
        Axis::Item => StabilityKind::RepresentationsItem,
        Axis::User => StabilityKind::RepresentationsUser,
    };
    Ok(StabilityReport::from_values(
        kind,
        k,
        model_one_vs_rest(&sets, &entities),
    ))
}

/// Representation stability over trained models' user or item factors.
pub fn model_representation_stability(
    models: &[TrainedModel],
    axis: Axis,
    k: usize,
    factors: Factors,
) -> Result<StabilityReport> {
    let tables: Vec<&DenseMatrix> = models
        .iter()
        .map(|m| {
            let pair = match factors {
                Factors::Materialized => &m.materialized,
                Factors::Base => &m.base,
            };
            match axis {
                Axis::User => &pair.p,
                Axis::Item => &pair.q,
            }
        })
        .collect();
    representation_stability(&tables, axis, k)
}

/// Fills `per_bin` with the mean per-entity value inside each popularity
/// bin; bins without evaluated items are left out.
pub fn per_bin_stability(report: &StabilityReport, bins: &PopularityBins) -> Result<StabilityReport> {
    if report.kind != StabilityKind::RepresentationsItem {
        return Err(Error::invalid(
            "per-bin stability is defined for item representations",
        ));
    }
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for &(e, v) in &report.per_entity {
        if let Some(b) = bins.assignment.get(e).copied().flatten() {
            let s = sums.entry(b).or_insert((0.0, 0));
            s.0 += v;
            s.1 += 1;
        }
    }
    let mut out = report.clone();
    out.per_bin = sums.into_iter().map(|(b, (s, c))| (b, s / c as f64)).collect();
    out.entity_bins = bins.assignment.clone();
    Ok(out)
}
