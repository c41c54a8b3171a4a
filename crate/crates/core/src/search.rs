//! Seeded random hyperparameter search ranked by validation MAP.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SearchSpace;
use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::evaluation::{map_at_k, recommend_topn};
use crate::factorization::{similarities_for, train, ModelConfig, TrainedModel};
use crate::seeded_rng;
use crate::similarity::SimilarityMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialParams {
    pub learning_rate: f64,
    pub reg: f64,
    pub f: usize,
    pub k: usize,
    pub shrink: usize,
}

impl TrialParams {
    /// `base` with these parameters; neighbor settings only touch NNMF
    /// configs.
    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        c.learning_rate = self.learning_rate;
        c.reg_p = self.reg;
        c.reg_q = self.reg;
        c.f = self.f;
        if c.nnmf {
            c.user_k = self.k;
            c.item_k = self.k;
            c.user_shrink = self.shrink as f64;
            c.item_shrink = self.shrink as f64;
        }
        c
    }
}

fn log_uniform(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        return lo;
    }
    rng.random_range(lo.ln()..=hi.ln()).exp()
}

/// The `budget` parameter draws of a search, in trial order.
pub fn sample_trials(space: &SearchSpace) -> Result<Vec<TrialParams>> {
    space.validate()?;
    let mut rng = seeded_rng(space.seed);
    Ok((0..space.budget)
        .map(|_| TrialParams {
            learning_rate: log_uniform(&mut rng, space.learning_rate),
            reg: log_uniform(&mut rng, space.reg),
            f: rng.random_range(space.f[0]..=space.f[1]),
            k: rng.random_range(space.k[0]..=space.k[1]),
            shrink: rng.random_range(space.shrink[0]..=space.shrink[1]),
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub index: usize,
    pub params: TrialParams,
    /// Validation MAP of each searched model, or the error that stopped it.
    pub outcomes: Vec<std::result::Result<f64, String>>,
    /// Mean validation MAP over the models; `None` if any model failed.
    pub score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub trials: Vec<TrialResult>,
    /// Index of the best trial.
    pub best: usize,
    /// Searched configs with the best trial's parameters applied.
    pub best_configs: Vec<ModelConfig>,
}

impl SearchOutcome {
    pub fn best_trial(&self) -> &TrialResult {
        &self.trials[self.best]
    }
}

/// Validation MAP used to rank trials: the best early-stopping value, or a
/// fresh evaluation when early stopping never evaluated.
pub fn validation_score(model: &TrainedModel, split: &DatasetSplit) -> Result<f64> {
    if let Some(v) = model.best_val_metric() {
        return Ok(v);
    }
    let cutoff = model.config.early_stop.cutoff.max(1);
    let recs = recommend_topn(model, &split.train, cutoff)?;
    map_at_k(&recs, &split.validation, cutoff)
}

type SimPair = (Arc<SimilarityMatrix>, Arc<SimilarityMatrix>);

/// Random search applying each trial's parameters to every config in
/// `bases` and ranking trials by their mean validation MAP. With several
/// bases (e.g. an MF config and its NNMF counterpart) the winner is a
/// single matched parameter set.
pub fn random_search(
    split: &DatasetSplit,
    bases: &[ModelConfig],
    space: &SearchSpace,
) -> Result<SearchOutcome> {
    if bases.is_empty() {
        return Err(Error::Config("search needs at least one model config".into()));
    }
    let trials = sample_trials(space)?;

    let mut needed: BTreeMap<(bool, usize, usize), ModelConfig> = BTreeMap::new();
    for p in &trials {
        for b in bases {
            let c = p.apply(b);
            let key = if c.nnmf {
                (true, p.k, p.shrink)
            } else {
                (false, 0, 0)
            };
            needed.entry(key).or_insert(c);
        }
    }
    let sims: BTreeMap<(bool, usize, usize), std::result::Result<SimPair, String>> = needed
        .into_par_iter()
        .map(|(key, c)| (key, similarities_for(&split.train, &c).map_err(|e| e.to_string())))
        .collect();

    let results: Vec<TrialResult> = trials
        .par_iter()
        .enumerate()
        .map(|(index, p)| {
            let outcomes: Vec<std::result::Result<f64, String>> = bases
                .iter()
                .map(|b| {
                    let c = p.apply(b);
                    let key = if c.nnmf {
                        (true, p.k, p.shrink)
                    } else {
                        (false, 0, 0)
                    };
                    let (su, si) = sims[&key].clone()?;
                    train(split, &c, su, si)
                        .and_then(|m| validation_score(&m, split))
                        .map_err(|e| e.to_string())
                })
                .collect();
            let score = outcomes
                .iter()
                .map(|o| o.as_ref().ok().copied())
                .collect::<Option<Vec<f64>>>()
                .map(|v| v.iter().sum::<f64>() / v.len() as f64);
            TrialResult {
                index,
                params: *p,
                outcomes,
                score,
            }
        })
        .collect();

    let best = results.iter().filter_map(|t| t.score.map(|s| (t.index, s))).fold(
        None,
        |acc: Option<(usize, f64)>, (i, s)| match acc {
            Some((_, b)) if s <= b => acc,
            _ => Some((i, s)),
        },
    );
    let Some((best, _)) = best else {
        let first = results[0]
            .outcomes
            .iter()
            .find_map(|o| o.clone().err())
            .unwrap_or_default();
        return Err(Error::Diverged {
            epoch: 0,
            reason: format!("all {} search trials failed (first: {first})", results.len()),
        });
    };
    let best_configs = bases.iter().map(|b| results[best].params.apply(b)).collect();
    Ok(SearchOutcome {
        trials: results,
        best,
        best_configs,
    })
}
