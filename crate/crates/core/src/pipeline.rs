//! Experiment stages. Each stage reads and writes only files under the
//! output directory:
//!
//! | stage        | reads                  | writes                                   |
//! |--------------|------------------------|------------------------------------------|
//! | `preprocess` | dataset                | `split/`                                 |
//! | `train`      | `split/`               | `similarity/`, `models/`                 |
//! | `evaluate`   | `split/`, `models/`    | `eval/`                                  |
//! | `stability`  | `split/`               | `similarity/`, `stability/`              |
//! | `search`     | `split/`               | `search/`                                |
//! | `report`     | `eval/`, `stability/`  | `report/`                                |

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::baselines::{fit_pure_svd, fit_slim_bpr, knn_from_similarity, ScoreModel};
use crate::config::{BaselineConfig, ExperimentConfig};
use crate::data::{
    binarize, core_filter, holdout_split, load_interactions, synthesize_powerlaw, DatasetSplit,
    InteractionMatrix, LoadOptions,
};
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::evaluation::{
    evaluate, longtail_items, popularity_bins, recommend_topn, EmbeddingScorer, Metric, Scorer,
};
use crate::factorization::{ModelConfig, TrainedModel};
use crate::io::{
    read_split, stored_from_trained, write_csv, write_history, write_json, write_split, DatasetStats,
    MatrixShape, ModelHeader, SplitMeta, StoredModel,
};
use crate::search::random_search;
use crate::similarity::{cache_key, cosine_topk, identity_similarity, Axis, SimilarityMatrix};
use crate::stability::{
    model_representation_stability, per_bin_stability, recommendation_stability, run_seeds_partial,
    StabilityKind, StabilityReport,
};

/// Output directory when neither the command line nor the config sets one.
pub const DEFAULT_OUT_DIR: &str = "out";

#[derive(Clone, Debug)]
pub struct Pipeline {
    pub config: ExperimentConfig,
    pub out: PathBuf,
}

impl Pipeline {
    /// `out` overrides the config's `output_dir`.
    pub fn new(config: ExperimentConfig, out: Option<PathBuf>) -> Self {
        let out = out
            .or_else(|| config.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        Self { config, out }
    }

    pub fn dir(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn ensure_dir(&self, name: &str) -> Result<PathBuf> {
        let d = self.dir(name);
        fs::create_dir_all(&d)?;
        Ok(d)
    }

    fn load_split(&self) -> Result<(DatasetSplit, SplitMeta)> {
        read_split(&self.dir("split"))
    }

    /// Cached shrunk-cosine similarity of the train matrix, or the identity
    /// when `k == 0`.
    fn similarity(
        &self,
        train: &InteractionMatrix,
        axis: Axis,
        k: usize,
        shrink: f64,
    ) -> Result<(Arc<SimilarityMatrix>, String)> {
        let n = match axis {
            Axis::User => train.n_users(),
            Axis::Item => train.n_items(),
        };
        if k == 0 {
            return Ok((
                Arc::new(identity_similarity(n)?),
                format!("identity-{}-{n}", axis.as_str()),
            ));
        }
        let key = cache_key(axis, k, shrink, &train.content_hash());
        let path = self.ensure_dir("similarity")?.join(format!("{key}.csv"));
        let sim = if path.exists() {
            SimilarityMatrix::read_triples(&path)?
        } else {
            let s = cosine_topk(train, axis, k, shrink)?;
            s.write_triples(&path)?;
            s
        };
        Ok((Arc::new(sim), key))
    }

    fn model_similarities(
        &self,
        train: &InteractionMatrix,
        config: &ModelConfig,
    ) -> Result<(Arc<SimilarityMatrix>, Arc<SimilarityMatrix>, Vec<String>)> {
        let (uk, ik) = if config.nnmf {
            (config.user_k, config.item_k)
        } else {
            (0, 0)
        };
        let (su, ku) = self.similarity(train, Axis::User, uk, config.user_shrink)?;
        let (si, ki) = self.similarity(train, Axis::Item, ik, config.item_shrink)?;
        Ok((su, si, vec![ku, ki]))
    }

    fn model_names(&self) -> Vec<String> {
        self.config
            .models
            .keys()
            .chain(self.config.baselines.keys())
            .cloned()
            .collect()
    }

    fn model_path(&self, name: &str) -> PathBuf {
        self.dir("models").join(format!("{name}.bin"))
    }
}

/// load -> binarize -> core filter -> holdout split, or a synthetic
/// dataset split directly. Writes `split/` and returns the dataset stats.
pub fn cmd_preprocess(p: &Pipeline) -> Result<DatasetStats> {
    let c = &p.config;
    let (matrix, tokens, stats) = if let Some(spec) = &c.dataset.synthetic {
        let m = synthesize_powerlaw(
            spec.n_users,
            spec.n_items,
            spec.n_interactions,
            spec.exponent,
            spec.seed,
        )?;
        let stats = DatasetStats {
            users: spec.n_users,
            items: spec.n_items,
            interactions: spec.n_interactions,
            density_percent: 100.0 * spec.n_interactions as f64 / (spec.n_users * spec.n_items) as f64,
        };
        (m, None, stats)
    } else {
        let path = c.dataset.path.as_ref().expect("validated config has a dataset");
        if !path.exists() {
            return Err(Error::MissingInputs(vec![path.clone()]));
        }
        let opts = LoadOptions {
            delimiter: c.dataset.delimiter.clone().unwrap_or_else(|| "\t".into()),
            header: c.dataset.header,
        };
        let loaded = load_interactions(path, &opts)?;
        let positives = binarize(&loaded.interactions, c.preprocess.threshold);
        let m = InteractionMatrix::from_interactions(loaded.n_users(), loaded.n_items(), &positives)?;
        let (filtered, remap) =
            core_filter(&m, c.preprocess.min_interactions.max(1), c.preprocess.filter_mode)?;
        let users: Vec<String> = remap
            .users
            .iter()
            .map(|&u| loaded.user_tokens[u].clone())
            .collect();
        let items: Vec<String> = remap
            .items
            .iter()
            .map(|&i| loaded.item_tokens[i].clone())
            .collect();
        let stats = DatasetStats::of(&filtered);
        (filtered, Some((users, items)), stats)
    };
    let [a, b, cr] = c.split.ratios;
    let split = holdout_split(&matrix, (a, b, cr), c.split.seed)?;
    let meta = SplitMeta {
        n_users: matrix.n_users(),
        n_items: matrix.n_items(),
        dataset_hash: matrix.content_hash(),
        stats: stats.clone(),
    };
    let dir = p.ensure_dir("split")?;
    write_split(
        &dir,
        &split,
        &meta,
        tokens.as_ref().map(|(u, i)| (u.as_slice(), i.as_slice())),
    )?;
    write_csv(
        &dir.join("stats.csv"),
        &["users", "items", "interactions", "density_percent"],
        &[vec![
            stats.users.to_string(),
            stats.items.to_string(),
            stats.interactions.to_string(),
            format!("{:.4}", stats.density_percent),
        ]],
    )?;
    log::info!(
        "dataset: {} users, {} items, {} interactions",
        stats.users,
        stats.items,
        stats.interactions
    );
    Ok(stats)
}

fn baseline_stored(
    name: &str,
    model: &ScoreModel,
    config: &BaselineConfig,
    similarity: Vec<String>,
    hash: String,
) -> StoredModel {
    let train_dims = (model.n_users(), model.n_items());
    let (f, matrices): (usize, Vec<(&str, DenseMatrix)>) = match model {
        ScoreModel::ItemKnn { .. } | ScoreModel::UserKnn { .. } => (0, vec![]),
        ScoreModel::Slim { weights, .. } => (0, vec![("W", weights.clone())]),
        ScoreModel::PureSvd {
            v, singular_values, ..
        } => (
            v.cols(),
            vec![
                ("V", v.clone()),
                (
                    "sigma",
                    DenseMatrix::from_vec(1, singular_values.len(), singular_values.clone()),
                ),
            ],
        ),
    };
    log::debug!("storing baseline {name}");
    StoredModel {
        header: ModelHeader {
            kind: model.kind().to_string(),
            n_users: train_dims.0,
            n_items: train_dims.1,
            f,
            config_hash: hash,
            config: serde_json::to_value(config).expect("baseline config serializes"),
            similarity,
            matrices: matrices
                .iter()
                .map(|(n, m)| MatrixShape {
                    name: n.to_string(),
                    rows: m.rows(),
                    cols: m.cols(),
                })
                .collect(),
        },
        matrices: matrices.into_iter().map(|(_, m)| m).collect(),
    }
}

fn json_hash(value: &impl serde::Serialize) -> String {
    use sha2::{Digest, Sha256};
    let json = serde_json::to_string(value).expect("serializable");
    crate::data::to_hex(&Sha256::digest(json.as_bytes()))
}

/// Trains every configured model and baseline; writes `models/<name>.bin`
/// and, for factor models, `models/<name>.history.csv`.
pub fn cmd_train(p: &Pipeline) -> Result<Vec<PathBuf>> {
    let (split, _) = p.load_split()?;
    let dir = p.ensure_dir("models")?;
    let mut written = Vec::new();
    for (name, config) in &p.config.models {
        let ctx = |e: Error| e.context(format!("model {name}"));
        let (su, si, keys) = p.model_similarities(&split.train, config).map_err(ctx)?;
        let model = crate::factorization::train(&split, config, su, si).map_err(ctx)?;
        log::info!(
            "{name}: {} epochs, best epoch {:?}",
            model.epochs_run,
            model.best_epoch
        );
        let path = dir.join(format!("{name}.bin"));
        stored_from_trained(&model, keys).write(&path)?;
        write_history(&dir.join(format!("{name}.history.csv")), &model.history)?;
        written.push(path);
    }
    for (name, config) in &p.config.baselines {
        let ctx = |e: Error| e.context(format!("baseline {name}"));
        let train = &split.train;
        let (model, keys) = match config {
            BaselineConfig::ItemKnn { k, shrink } => {
                let (s, key) = p.similarity(train, Axis::Item, *k, *shrink).map_err(ctx)?;
                (knn_from_similarity(train, Axis::Item, (*s).clone()), vec![key])
            }
            BaselineConfig::UserKnn { k, shrink } => {
                let (s, key) = p.similarity(train, Axis::User, *k, *shrink).map_err(ctx)?;
                (knn_from_similarity(train, Axis::User, (*s).clone()), vec![key])
            }
            BaselineConfig::Slim { .. } => (
                fit_slim_bpr(train, &config.slim().expect("slim config")).map_err(ctx)?,
                vec![],
            ),
            BaselineConfig::PureSvd { f, seed } => (fit_pure_svd(train, *f, *seed).map_err(ctx)?, vec![]),
        };
        let path = dir.join(format!("{name}.bin"));
        baseline_stored(name, &model, config, keys, json_hash(config)).write(&path)?;
        written.push(path);
    }
    Ok(written)
}

/// A persisted model rebuilt for scoring.
enum LoadedModel {
    Factors { p: DenseMatrix, q: DenseMatrix },
    Baseline(ScoreModel),
}

impl Scorer for LoadedModel {
    fn n_users(&self) -> usize {
        match self {
            LoadedModel::Factors { p, .. } => p.rows(),
            LoadedModel::Baseline(m) => m.n_users(),
        }
    }

    fn n_items(&self) -> usize {
        match self {
            LoadedModel::Factors { q, .. } => q.rows(),
            LoadedModel::Baseline(m) => m.n_items(),
        }
    }

    fn score_user(&self, user: usize, out: &mut [f64]) {
        match self {
            LoadedModel::Factors { p, q } => EmbeddingScorer { users: p, items: q }.score_user(user, out),
            LoadedModel::Baseline(m) => m.score_user(user, out),
        }
    }
}

fn load_model(p: &Pipeline, path: &Path, train: &InteractionMatrix) -> Result<LoadedModel> {
    let stored = StoredModel::read(path)?;
    let bad = |m: &str| Error::Format {
        path: path.to_path_buf(),
        message: m.to_string(),
    };
    let h = &stored.header;
    if h.n_users != train.n_users() || h.n_items != train.n_items() {
        return Err(bad("model dimensions do not match the split"));
    }
    let matrix = |name: &str| {
        stored
            .matrix(name)
            .cloned()
            .ok_or_else(|| bad(&format!("missing matrix {name}")))
    };
    let sim = |axis: Axis| -> Result<SimilarityMatrix> {
        let key = h
            .similarity
            .first()
            .ok_or_else(|| bad("missing similarity key"))?;
        let sim_path = p.dir("similarity").join(format!("{key}.csv"));
        if !sim_path.exists() {
            return Err(Error::MissingInputs(vec![sim_path]));
        }
        let s = SimilarityMatrix::read_triples(&sim_path)?;
        let n = match axis {
            Axis::User => train.n_users(),
            Axis::Item => train.n_items(),
        };
        if s.n() != n {
            return Err(bad("similarity dimensions do not match the split"));
        }
        Ok(s)
    };
    Ok(match h.kind.as_str() {
        "item_knn" => LoadedModel::Baseline(knn_from_similarity(train, Axis::Item, sim(Axis::Item)?)),
        "user_knn" => LoadedModel::Baseline(knn_from_similarity(train, Axis::User, sim(Axis::User)?)),
        "slim" => LoadedModel::Baseline(ScoreModel::Slim {
            train: train.clone(),
            weights: matrix("W")?,
        }),
        "pure_svd" => LoadedModel::Baseline(ScoreModel::PureSvd {
            train: train.clone(),
            v: matrix("V")?,
            singular_values: matrix("sigma")?.as_slice().to_vec(),
        }),
        _ => LoadedModel::Factors {
            p: matrix("P*")?,
            q: matrix("Q*")?,
        },
    })
}

/// One row of the long-tail accuracy table.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct AccuracyRow {
    pub model: String,
    pub kind: String,
    pub values: BTreeMap<String, f64>,
}

fn metric_label(metric: Metric, k: usize) -> String {
    format!("{}@{k}", metric.as_str())
}

/// MAP and Recall at the configured cutoffs on long-tail test ground truth
/// for every trained model and baseline.
pub fn cmd_evaluate(p: &Pipeline) -> Result<Vec<AccuracyRow>> {
    let (split, _) = p.load_split()?;
    let names = p.model_names();
    let missing: Vec<PathBuf> = names
        .iter()
        .map(|n| p.model_path(n))
        .filter(|q| !q.exists())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingInputs(missing));
    }
    let ec = &p.config.evaluation;
    let cutoffs = ec.cutoffs.clone();
    let max_cut = cutoffs.iter().copied().max().unwrap_or(10);
    let tail = longtail_items(&split.train, ec.tail_fraction)?;
    let gt = tail.filter(&split.test);
    let dir = p.ensure_dir("eval")?;
    let mut rows = Vec::new();
    let mut per_user_rows = Vec::new();
    for name in &names {
        let path = p.model_path(name);
        let model = load_model(p, &path, &split.train).map_err(|e| e.context(format!("model {name}")))?;
        let kind = StoredModel::read(&path)?.header.kind;
        let recs = recommend_topn(&model, &split.train, max_cut)?;
        let report = evaluate(&recs, &gt, &cutoffs)?;
        let mut values = BTreeMap::new();
        for &k in &cutoffs {
            for metric in [Metric::Map, Metric::Recall] {
                values.insert(metric_label(metric, k), report.get(metric, k).expect("evaluated"));
                for &(u, v) in &report.per_user[&(metric, k)] {
                    per_user_rows.push(vec![
                        name.clone(),
                        u.to_string(),
                        metric_label(metric, k),
                        v.to_string(),
                    ]);
                }
            }
        }
        rows.push(AccuracyRow {
            model: name.clone(),
            kind,
            values,
        });
    }
    let mut header = vec!["model".to_string(), "kind".to_string()];
    let labels: Vec<String> = [Metric::Map, Metric::Recall]
        .iter()
        .flat_map(|&m| cutoffs.iter().map(move |&k| metric_label(m, k)))
        .collect();
    header.extend(labels.iter().cloned());
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut v = vec![r.model.clone(), r.kind.clone()];
            v.extend(labels.iter().map(|l| r.values[l].to_string()));
            v
        })
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&dir.join("longtail.csv"), &header_refs, &table)?;
    write_csv(
        &dir.join("per_user.csv"),
        &["model", "user", "metric", "value"],
        &per_user_rows,
    )?;
    write_json(
        &dir.join("longtail.json"),
        &serde_json::json!({
            "tail_fraction": ec.tail_fraction,
            "tail_items": tail.tail.len(),
            "users_with_ground_truth": (0..gt.n_users()).filter(|&u| gt.row_len(u) > 0).count(),
            "models": rows,
        }),
    )?;
    Ok(rows)
}

/// Overall stability of one (model, kind, cutoff) combination.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct StabilityRow {
    pub model: String,
    pub kind: StabilityKind,
    pub cutoff: usize,
    pub overall: f64,
    pub entities: usize,
    pub per_bin: BTreeMap<usize, f64>,
}

/// Failure of a single seed run.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct SeedFailure {
    pub model: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize)]
pub struct StabilityOutcome {
    pub rows: Vec<StabilityRow>,
    pub failures: Vec<SeedFailure>,
}

/// Retrains every factor model once per seed and measures recommendation
/// and representation stability at each configured cutoff.
pub fn cmd_stability(p: &Pipeline, seeds: Option<&[u64]>) -> Result<StabilityOutcome> {
    let (split, _) = p.load_split()?;
    let sc = &p.config.stability;
    let seeds: Vec<u64> = seeds.map(<[u64]>::to_vec).unwrap_or_else(|| sc.seeds.clone());
    if seeds.len() < 2 {
        return Err(Error::Config("stability needs at least 2 seeds".into()));
    }
    let bins = popularity_bins(&split.train, &p.config.evaluation.bin_thresholds)?;
    let dir = p.ensure_dir("stability")?;
    let mut outcome = StabilityOutcome::default();
    for (name, config) in &p.config.models {
        let (su, si, _) = p.model_similarities(&split.train, config)?;
        let runs = run_seeds_partial(&split, config, su, si, &seeds);
        let mut models: Vec<TrainedModel> = Vec::new();
        for (seed, run) in seeds.iter().zip(runs) {
            match run {
                Ok(m) => models.push(m),
                Err(e) => {
                    log::warn!("{name}: seed {seed} failed: {e}");
                    outcome.failures.push(SeedFailure {
                        model: name.clone(),
                        seed: *seed,
                        error: e.to_string(),
                    });
                }
            }
        }
        if models.len() < 2 {
            log::warn!("{name}: fewer than 2 successful seeds, no stability computed");
            continue;
        }
        let model_dir = dir.join(name);
        fs::create_dir_all(&model_dir)?;
        for &k in &sc.cutoffs {
            let mut reports: Vec<StabilityReport> = Vec::new();
            reports.push(recommendation_stability(&models, &split.train, k)?);
            for axis in [Axis::Item, Axis::User] {
                match model_representation_stability(&models, axis, k, sc.factors) {
                    Ok(r) => reports.push(r),
                    Err(e) => log::warn!("{name}: {} representations @{k} skipped: {e}", axis.as_str()),
                }
            }
            for report in reports {
                let report = if report.kind == StabilityKind::RepresentationsItem {
                    per_bin_stability(&report, &bins)?
                } else {
                    report
                };
                report.write_csv(&model_dir.join(format!("{}_at{k}.csv", report.kind.as_str())))?;
                outcome.rows.push(StabilityRow {
                    model: name.clone(),
                    kind: report.kind,
                    cutoff: k,
                    overall: report.overall,
                    entities: report.per_entity.len(),
                    per_bin: report.per_bin.clone(),
                });
            }
        }
    }
    let summary: Vec<Vec<String>> = outcome
        .rows
        .iter()
        .map(|r| {
            vec![
                r.model.clone(),
                r.kind.as_str().to_string(),
                r.cutoff.to_string(),
                r.overall.to_string(),
                r.entities.to_string(),
            ]
        })
        .collect();
    write_csv(
        &dir.join("summary.csv"),
        &["model", "kind", "cutoff", "overall", "entities"],
        &summary,
    )?;
    let per_bin: Vec<Vec<String>> = outcome
        .rows
        .iter()
        .flat_map(|r| {
            r.per_bin.iter().map(move |(b, v)| {
                vec![
                    r.model.clone(),
                    r.cutoff.to_string(),
                    b.to_string(),
                    v.to_string(),
                ]
            })
        })
        .collect();
    write_csv(
        &dir.join("per_bin.csv"),
        &["model", "cutoff", "bin", "mean_jaccard"],
        &per_bin,
    )?;
    let failures: Vec<Vec<String>> = outcome
        .failures
        .iter()
        .map(|f| {
            vec![
                f.model.clone(),
                f.seed.to_string(),
                crate::data::csv_field(&f.error),
            ]
        })
        .collect();
    write_csv(&dir.join("failures.csv"), &["model", "seed", "error"], &failures)?;
    write_json(&dir.join("summary.json"), &outcome)?;
    Ok(outcome)
}

/// Random search over the configured space. With `matched`, every trial's
/// parameters are applied to all `models` and ranked by their mean
/// validation MAP; otherwise each model is searched on its own.
pub fn cmd_search(p: &Pipeline, models: &[String], matched: bool) -> Result<BTreeMap<String, ModelConfig>> {
    let (split, _) = p.load_split()?;
    let names: Vec<String> = if models.is_empty() {
        p.config.models.keys().cloned().collect()
    } else {
        models.to_vec()
    };
    if names.is_empty() {
        return Err(Error::Config("no model configs to search".into()));
    }
    let mut bases = Vec::new();
    for n in &names {
        bases.push(
            p.config
                .models
                .get(n)
                .cloned()
                .ok_or_else(|| Error::Config(format!("unknown model {n}")))?,
        );
    }
    let groups: Vec<Vec<usize>> = if matched {
        vec![(0..names.len()).collect()]
    } else {
        (0..names.len()).map(|i| vec![i]).collect()
    };
    let dir = p.ensure_dir("search")?;
    let space = &p.config.search;
    let mut best = BTreeMap::new();
    let mut rows = Vec::new();
    for group in groups {
        let group_bases: Vec<ModelConfig> = group.iter().map(|&i| bases[i].clone()).collect();
        let label = group
            .iter()
            .map(|&i| names[i].as_str())
            .collect::<Vec<_>>()
            .join("+");
        let outcome =
            random_search(&split, &group_bases, space).map_err(|e| e.context(format!("search {label}")))?;
        for t in &outcome.trials {
            let status = t
                .outcomes
                .iter()
                .filter_map(|o| o.as_ref().err())
                .map(|e| crate::data::csv_field(e))
                .collect::<Vec<_>>()
                .join(";");
            rows.push(vec![
                label.clone(),
                t.index.to_string(),
                t.params.learning_rate.to_string(),
                t.params.reg.to_string(),
                t.params.f.to_string(),
                t.params.k.to_string(),
                t.params.shrink.to_string(),
                t.score.map(|s| s.to_string()).unwrap_or_default(),
                (t.index == outcome.best).to_string(),
                if status.is_empty() { "ok".into() } else { status },
            ]);
        }
        for (&i, c) in group.iter().zip(outcome.best_configs) {
            best.insert(names[i].clone(), c);
        }
    }
    let trials_path = dir.join("trials.csv");
    write_csv(
        &trials_path,
        &[
            "search",
            "trial",
            "learning_rate",
            "reg",
            "f",
            "k",
            "shrink",
            "val_map",
            "best",
            "status",
        ],
        &rows,
    )?;
    let body = fs::read_to_string(&trials_path)?;
    fs::write(
        &trials_path,
        format!(
            "# random search (uniform sampling, no Bayesian optimization), seed {}, budget {}\n{body}",
            space.seed, space.budget
        ),
    )?;
    #[derive(serde::Serialize)]
    struct Best<'a> {
        models: &'a BTreeMap<String, ModelConfig>,
    }
    fs::write(
        dir.join("best.toml"),
        toml::to_string(&Best { models: &best }).expect("configs serialize"),
    )?;
    Ok(best)
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines
        .next()
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            message: "empty table".into(),
        })?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    Ok((header, rows))
}

fn markdown_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut s = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
    for r in rows {
        s.push_str(&format!("| {} |\n", r.join(" | ")));
    }
    s
}

/// Collects the accuracy and stability tables into `report/report.md`.
pub fn cmd_report(p: &Pipeline) -> Result<PathBuf> {
    let sources = [
        ("Dataset", p.dir("split").join("stats.csv")),
        ("Long-tail accuracy", p.dir("eval").join("longtail.csv")),
        ("Stability", p.dir("stability").join("summary.csv")),
        (
            "Item representation stability by popularity bin",
            p.dir("stability").join("per_bin.csv"),
        ),
    ];
    if !sources.iter().any(|(_, path)| path.exists()) {
        return Err(Error::MissingInputs(
            sources.iter().map(|(_, path)| path.clone()).collect(),
        ));
    }
    let mut md = String::from("# Experiment report\n");
    let mut json = serde_json::Map::new();
    for (title, path) in &sources {
        if !path.exists() {
            continue;
        }
        let (header, rows) = read_table(path)?;
        md.push_str(&format!("\n## {title}\n\n{}", markdown_table(&header, &rows)));
        let records: Vec<serde_json::Value> = rows
            .iter()
            .map(|r| {
                serde_json::Value::Object(
                    header
                        .iter()
                        .zip(r)
                        .map(|(h, v)| (h.clone(), serde_json::Value::String(v.clone())))
                        .collect(),
                )
            })
            .collect();
        json.insert(title.to_string(), serde_json::Value::Array(records));
    }
    let dir = p.ensure_dir("report")?;
    let path = dir.join("report.md");
    fs::write(&path, md)?;
    write_json(&dir.join("report.json"), &json)?;
    Ok(path)
}
