//! Python bindings for `nnmf`.
//!
//! Matrices cross the boundary as nested lists and interaction data as
//! `(user, item, value)` triples.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use nnmf::baselines::{fit_knn, fit_pure_svd, fit_slim_bpr, ScoreModel, SlimConfig};
use nnmf::data::{self, DatasetSplit, FilterMode, Interaction, LoadOptions};
use nnmf::dense::DenseMatrix;
use nnmf::evaluation::{self, Scorer};
use nnmf::factorization::{self, Algorithm, TrainedModel};
use nnmf::similarity::{self, Axis};
use nnmf::stability::{self, Factors};

fn to_py(e: nnmf::Error) -> PyErr {
    match e {
        nnmf::Error::Io(_) | nnmf::Error::MissingInputs(_) => PyIOError::new_err(e.to_string()),
        nnmf::Error::Diverged { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn axis(name: &str) -> PyResult<Axis> {
    match name {
        "user" => Ok(Axis::User),
        "item" => Ok(Axis::Item),
        other => Err(PyValueError::new_err(format!(
            "axis must be 'user' or 'item', got {other:?}"
        ))),
    }
}

fn rows(m: &DenseMatrix) -> Vec<Vec<f64>> {
    m.to_rows()
}

/// Sparse user x item interaction matrix.
#[pyclass(module = "nnmf_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct InteractionMatrix {
    inner: data::InteractionMatrix,
}

#[pymethods]
impl InteractionMatrix {
    #[new]
    fn new(n_users: usize, n_items: usize, triples: Vec<(usize, usize, f64)>) -> PyResult<Self> {
        let its: Vec<Interaction> = triples
            .into_iter()
            .map(|(u, i, v)| Interaction::new(u, i, v))
            .collect();
        let inner = data::InteractionMatrix::from_interactions(n_users, n_items, &its).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Power-law synthetic dataset.
    #[staticmethod]
    #[pyo3(signature = (n_users, n_items, n_interactions, exponent = 1.0, seed = 0))]
    fn synthetic(
        n_users: usize,
        n_items: usize,
        n_interactions: usize,
        exponent: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let inner =
            data::synthesize_powerlaw(n_users, n_items, n_interactions, exponent, seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Load a delimited `user item value` file, binarize and core-filter it.
    #[staticmethod]
    #[pyo3(signature = (path, delimiter = "\t", header = false, threshold = None, min_interactions = None))]
    fn load(
        path: PathBuf,
        delimiter: &str,
        header: bool,
        threshold: Option<f64>,
        min_interactions: Option<usize>,
    ) -> PyResult<Self> {
        let opts = LoadOptions {
            delimiter: delimiter.to_string(),
            header,
        };
        let loaded = data::load_interactions(&path, &opts).map_err(to_py)?;
        let mut its = loaded.interactions.clone();
        if let Some(t) = threshold {
            its = data::binarize(&its, t);
        }
        let mut inner = data::InteractionMatrix::from_interactions(loaded.n_users(), loaded.n_items(), &its)
            .map_err(to_py)?;
        if let Some(min) = min_interactions {
            inner = data::core_filter(&inner, min, FilterMode::Fixpoint)
                .map_err(to_py)?
                .0;
        }
        Ok(Self { inner })
    }

    #[getter]
    fn n_users(&self) -> usize {
        self.inner.n_users()
    }

    #[getter]
    fn n_items(&self) -> usize {
        self.inner.n_items()
    }

    #[getter]
    fn nnz(&self) -> usize {
        self.inner.nnz()
    }

    #[getter]
    fn density(&self) -> f64 {
        self.inner.density()
    }

    fn items_of(&self, user: usize) -> PyResult<Vec<usize>> {
        if user >= self.inner.n_users() {
            return Err(PyValueError::new_err(format!("user {user} out of range")));
        }
        Ok(self.inner.row_items(user).to_vec())
    }

    fn triples(&self) -> Vec<(usize, usize, f64)> {
        self.inner.iter().map(|it| (it.user, it.item, it.value)).collect()
    }

    fn item_counts(&self) -> Vec<usize> {
        self.inner.item_counts()
    }

    /// Seeded holdout split into train, validation and test.
    #[pyo3(signature = (ratios = (0.6, 0.2, 0.2), seed = 0))]
    fn split(&self, ratios: (f64, f64, f64), seed: u64) -> PyResult<Split> {
        let inner = data::holdout_split(&self.inner, ratios, seed).map_err(to_py)?;
        Ok(Split { inner })
    }

    fn __repr__(&self) -> String {
        format!(
            "InteractionMatrix(n_users={}, n_items={}, nnz={})",
            self.inner.n_users(),
            self.inner.n_items(),
            self.inner.nnz()
        )
    }
}

#[pyclass(module = "nnmf_py", frozen)]
struct Split {
    inner: DatasetSplit,
}

#[pymethods]
impl Split {
    #[getter]
    fn train(&self) -> InteractionMatrix {
        InteractionMatrix {
            inner: self.inner.train.clone(),
        }
    }

    #[getter]
    fn validation(&self) -> InteractionMatrix {
        InteractionMatrix {
            inner: self.inner.validation.clone(),
        }
    }

    #[getter]
    fn test(&self) -> InteractionMatrix {
        InteractionMatrix {
            inner: self.inner.test.clone(),
        }
    }
}

/// Top-k shrunk-cosine similarity with unit diagonal.
#[pyclass(module = "nnmf_py", frozen)]
struct SimilarityMatrix {
    inner: Arc<similarity::SimilarityMatrix>,
}

#[pymethods]
impl SimilarityMatrix {
    #[staticmethod]
    #[pyo3(signature = (matrix, axis, k, shrink = 0.0))]
    fn cosine(matrix: &InteractionMatrix, axis: &str, k: usize, shrink: f64) -> PyResult<Self> {
        let inner = similarity::cosine_topk(&matrix.inner, self::axis(axis)?, k, shrink).map_err(to_py)?;
        Ok(Self {
            inner: Arc::new(inner),
        })
    }

    #[staticmethod]
    fn identity(n: usize) -> PyResult<Self> {
        let inner = similarity::identity_similarity(n).map_err(to_py)?;
        Ok(Self {
            inner: Arc::new(inner),
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn nnz(&self) -> usize {
        self.inner.nnz()
    }

    fn row(&self, x: usize) -> PyResult<Vec<(usize, f64)>> {
        if x >= self.inner.n() {
            return Err(PyValueError::new_err(format!("row {x} out of range")));
        }
        Ok(self.inner.row(x).collect())
    }

    fn get(&self, x: usize, y: usize) -> f64 {
        self.inner.get(x, y)
    }
}

/// Training configuration; unspecified fields keep the library defaults.
#[pyclass(module = "nnmf_py", skip_from_py_object)]
#[derive(Clone)]
struct ModelConfig {
    inner: factorization::ModelConfig,
}

#[pymethods]
impl ModelConfig {
    #[new]
    #[pyo3(signature = (
        algorithm = "bpr", nnmf = false, *, f = None, learning_rate = None, reg_p = None, reg_q = None,
        epochs_max = None, user_k = None, item_k = None, user_shrink = None, item_shrink = None,
        negative_ratio = None, eval_every = None, patience = None, cutoff = None,
        init_seed = None, sample_seed = None
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        algorithm: &str,
        nnmf: bool,
        f: Option<usize>,
        learning_rate: Option<f64>,
        reg_p: Option<f64>,
        reg_q: Option<f64>,
        epochs_max: Option<usize>,
        user_k: Option<usize>,
        item_k: Option<usize>,
        user_shrink: Option<f64>,
        item_shrink: Option<f64>,
        negative_ratio: Option<usize>,
        eval_every: Option<usize>,
        patience: Option<usize>,
        cutoff: Option<usize>,
        init_seed: Option<u64>,
        sample_seed: Option<u64>,
    ) -> PyResult<Self> {
        let algorithm = match algorithm {
            "funk" => Algorithm::Funk,
            "bpr" => Algorithm::Bpr,
            "pmf" => Algorithm::Pmf,
            other => {
                return Err(PyValueError::new_err(format!(
                    "algorithm must be 'funk', 'bpr' or 'pmf', got {other:?}"
                )))
            }
        };
        let mut c = factorization::ModelConfig::new(algorithm, nnmf);
        macro_rules! set {
            ($($field:ident).+ = $value:expr) => {
                if let Some(v) = $value {
                    c.$($field).+ = v;
                }
            };
        }
        set!(f = f);
        set!(learning_rate = learning_rate);
        set!(reg_p = reg_p);
        set!(reg_q = reg_q);
        set!(epochs_max = epochs_max);
        set!(user_k = user_k);
        set!(item_k = item_k);
        set!(user_shrink = user_shrink);
        set!(item_shrink = item_shrink);
        set!(negative_ratio = negative_ratio);
        set!(early_stop.eval_every = eval_every);
        set!(early_stop.patience = patience);
        set!(early_stop.cutoff = cutoff);
        set!(init_seed = init_seed);
        set!(sample_seed = sample_seed);
        c.validate().map_err(to_py)?;
        Ok(Self { inner: c })
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind()
    }

    #[getter]
    fn init_seed(&self) -> u64 {
        self.inner.init_seed
    }

    #[setter]
    fn set_init_seed(&mut self, seed: u64) {
        self.inner.init_seed = seed;
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// A trained MF or NNMF model.
#[pyclass(module = "nnmf_py", frozen)]
struct Model {
    inner: Arc<TrainedModel>,
}

#[pymethods]
impl Model {
    fn predict(&self, user: usize, item: usize) -> PyResult<f64> {
        if user >= self.inner.n_users() || item >= self.inner.n_items() {
            return Err(PyValueError::new_err("user or item out of range"));
        }
        Ok(self.inner.predict(user, item))
    }

    /// Top-`n` unseen items for every user.
    #[pyo3(signature = (train, n = 10))]
    fn recommend(&self, py: Python<'_>, train: &InteractionMatrix, n: usize) -> PyResult<Vec<Vec<usize>>> {
        let model = self.inner.clone();
        let train = train.inner.clone();
        py.detach(move || evaluation::recommend_topn(model.as_ref(), &train, n))
            .map(|r| r.lists)
            .map_err(to_py)
    }

    /// Materialized user embeddings `P*`.
    fn user_factors(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.materialized.p)
    }

    /// Materialized item embeddings `Q*`.
    fn item_factors(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.materialized.q)
    }

    /// `(epoch, loss, validation MAP or None)` per epoch.
    #[getter]
    fn history(&self) -> Vec<(usize, f64, Option<f64>)> {
        self.inner
            .history
            .iter()
            .map(|r| (r.epoch, r.loss, r.val_metric))
            .collect()
    }

    #[getter]
    fn epochs_run(&self) -> usize {
        self.inner.epochs_run
    }

    #[getter]
    fn best_epoch(&self) -> Option<usize> {
        self.inner.best_epoch
    }

    #[getter]
    fn config(&self) -> ModelConfig {
        ModelConfig {
            inner: self.inner.config.clone(),
        }
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        nnmf::io::stored_from_trained(&self.inner, Vec::new())
            .write(&path)
            .map_err(to_py)
    }
}

/// Train one model; NNMF configs build their similarities from `split.train`.
#[pyfunction]
fn train(py: Python<'_>, split: &Split, config: &ModelConfig) -> PyResult<Model> {
    let split = split.inner.clone();
    let config = config.inner.clone();
    let model = py
        .detach(move || {
            let (su, si) = factorization::similarities_for(&split.train, &config)?;
            factorization::train(&split, &config, su, si)
        })
        .map_err(to_py)?;
    Ok(Model {
        inner: Arc::new(model),
    })
}

/// Train with explicit similarity matrices.
#[pyfunction]
fn train_with(
    py: Python<'_>,
    split: &Split,
    config: &ModelConfig,
    user_similarity: &SimilarityMatrix,
    item_similarity: &SimilarityMatrix,
) -> PyResult<Model> {
    let split = split.inner.clone();
    let config = config.inner.clone();
    let (su, si) = (user_similarity.inner.clone(), item_similarity.inner.clone());
    let model = py
        .detach(move || factorization::train(&split, &config, su, si))
        .map_err(to_py)?;
    Ok(Model {
        inner: Arc::new(model),
    })
}

/// Train the same config once per initialization seed.
#[pyfunction]
fn run_seeds(py: Python<'_>, split: &Split, config: &ModelConfig, seeds: Vec<u64>) -> PyResult<Vec<Model>> {
    let split = split.inner.clone();
    let config = config.inner.clone();
    let models = py
        .detach(move || {
            let (su, si) = factorization::similarities_for(&split.train, &config)?;
            stability::run_seeds(&split, &config, su, si, &seeds)
        })
        .map_err(to_py)?;
    Ok(models.into_iter().map(|m| Model { inner: Arc::new(m) }).collect())
}

/// Non-factorization baseline recommender.
#[pyclass(module = "nnmf_py", frozen)]
struct Baseline {
    inner: Arc<ScoreModel>,
}

#[pymethods]
impl Baseline {
    #[staticmethod]
    #[pyo3(signature = (train, k, shrink = 0.0))]
    fn item_knn(train: &InteractionMatrix, k: usize, shrink: f64) -> PyResult<Self> {
        Self::wrap(fit_knn(&train.inner, Axis::Item, k, shrink))
    }

    #[staticmethod]
    #[pyo3(signature = (train, k, shrink = 0.0))]
    fn user_knn(train: &InteractionMatrix, k: usize, shrink: f64) -> PyResult<Self> {
        Self::wrap(fit_knn(&train.inner, Axis::User, k, shrink))
    }

    #[staticmethod]
    #[pyo3(signature = (train, k = 100, learning_rate = 0.01, reg = 0.001, epochs = 30, sample_seed = 0))]
    fn slim(
        train: &InteractionMatrix,
        k: usize,
        learning_rate: f64,
        reg: f64,
        epochs: usize,
        sample_seed: u64,
    ) -> PyResult<Self> {
        let cfg = SlimConfig {
            k,
            learning_rate,
            reg,
            epochs,
            sample_seed,
        };
        Self::wrap(fit_slim_bpr(&train.inner, &cfg))
    }

    #[staticmethod]
    #[pyo3(signature = (train, f, seed = 0))]
    fn pure_svd(train: &InteractionMatrix, f: usize, seed: u64) -> PyResult<Self> {
        Self::wrap(fit_pure_svd(&train.inner, f, seed))
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind()
    }

    fn score(&self, user: usize, item: usize) -> PyResult<f64> {
        if user >= self.inner.n_users() || item >= self.inner.n_items() {
            return Err(PyValueError::new_err("user or item out of range"));
        }
        Ok(self.inner.score(user, item))
    }

    #[pyo3(signature = (train, n = 10))]
    fn recommend(&self, py: Python<'_>, train: &InteractionMatrix, n: usize) -> PyResult<Vec<Vec<usize>>> {
        let model = self.inner.clone();
        let train = train.inner.clone();
        py.detach(move || evaluation::recommend_topn(model.as_ref(), &train, n))
            .map(|r| r.lists)
            .map_err(to_py)
    }
}

impl Baseline {
    fn wrap(model: nnmf::Result<ScoreModel>) -> PyResult<Self> {
        Ok(Self {
            inner: Arc::new(model.map_err(to_py)?),
        })
    }
}

fn ranked(lists: Vec<Vec<usize>>) -> evaluation::RankedList {
    let cutoff = lists.iter().map(Vec::len).max().unwrap_or(0);
    evaluation::RankedList { cutoff, lists }
}

/// MAP@k over users with non-empty ground truth.
#[pyfunction]
fn map_at_k(recommendations: Vec<Vec<usize>>, ground_truth: &InteractionMatrix, k: usize) -> PyResult<f64> {
    evaluation::map_at_k(&ranked(recommendations), &ground_truth.inner, k).map_err(to_py)
}

/// Recall@k over users with non-empty ground truth.
#[pyfunction]
fn recall_at_k(
    recommendations: Vec<Vec<usize>>,
    ground_truth: &InteractionMatrix,
    k: usize,
) -> PyResult<f64> {
    evaluation::recall_at_k(&ranked(recommendations), &ground_truth.inner, k).map_err(to_py)
}

/// Ground truth restricted to long-tail items.
#[pyfunction]
#[pyo3(signature = (train, ground_truth, tail_fraction = 0.66))]
fn longtail(
    train: &InteractionMatrix,
    ground_truth: &InteractionMatrix,
    tail_fraction: f64,
) -> PyResult<InteractionMatrix> {
    let lt = evaluation::longtail_items(&train.inner, tail_fraction).map_err(to_py)?;
    Ok(InteractionMatrix {
        inner: lt.filter(&ground_truth.inner),
    })
}

/// Popularity bin (1-based) of every item, `None` for items never seen.
#[pyfunction]
fn popularity_bins(train: &InteractionMatrix) -> PyResult<Vec<Option<usize>>> {
    let bins =
        evaluation::popularity_bins(&train.inner, &evaluation::DEFAULT_BIN_THRESHOLDS).map_err(to_py)?;
    Ok((0..train.inner.n_items()).map(|i| bins.bin(i)).collect())
}

#[pyfunction]
fn jaccard(a: Vec<usize>, b: Vec<usize>) -> f64 {
    stability::jaccard(&a, &b)
}

/// Top-`n` recommendation Jaccard of model 1 against the others:
/// `(overall, [(user, value), ...])`.
#[pyfunction]
#[pyo3(signature = (models, train, n = 10))]
fn recommendation_stability(
    py: Python<'_>,
    models: Vec<PyRef<'_, Model>>,
    train: &InteractionMatrix,
    n: usize,
) -> PyResult<(f64, Vec<(usize, f64)>)> {
    let models: Vec<TrainedModel> = models.iter().map(|m| m.inner.as_ref().clone()).collect();
    let train = train.inner.clone();
    let report = py
        .detach(move || stability::recommendation_stability(&models, &train, n))
        .map_err(to_py)?;
    Ok((report.overall, report.per_entity))
}

/// `k`-nearest-neighbor Jaccard of model 1's embeddings against the
/// others: `(overall, [(entity, value), ...])`.
#[pyfunction]
#[pyo3(signature = (models, axis = "item", k = 10, base = false))]
fn representation_stability(
    py: Python<'_>,
    models: Vec<PyRef<'_, Model>>,
    axis: &str,
    k: usize,
    base: bool,
) -> PyResult<(f64, Vec<(usize, f64)>)> {
    let axis = self::axis(axis)?;
    let factors = if base {
        Factors::Base
    } else {
        Factors::Materialized
    };
    let models: Vec<TrainedModel> = models.iter().map(|m| m.inner.as_ref().clone()).collect();
    let report = py
        .detach(move || stability::model_representation_stability(&models, axis, k, factors))
        .map_err(to_py)?;
    Ok((report.overall, report.per_entity))
}

#[pymodule]
fn nnmf_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<InteractionMatrix>()?;
    m.add_class::<Split>()?;
    m.add_class::<SimilarityMatrix>()?;
    m.add_class::<ModelConfig>()?;
    m.add_class::<Model>()?;
    m.add_class::<Baseline>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(train_with, m)?)?;
    m.add_function(wrap_pyfunction!(run_seeds, m)?)?;
    m.add_function(wrap_pyfunction!(map_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(recall_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(longtail, m)?)?;
    m.add_function(wrap_pyfunction!(popularity_bins, m)?)?;
    m.add_function(wrap_pyfunction!(jaccard, m)?)?;
    m.add_function(wrap_pyfunction!(recommendation_stability, m)?)?;
    m.add_function(wrap_pyfunction!(representation_stability, m)?)?;
    Ok(())
}
