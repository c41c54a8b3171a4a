//! TOML experiment configuration.
//!
//! ```toml
//! output_dir = "out"
//!
//! [dataset]
//! path = "ratings.dat"          # or a [dataset.synthetic] table
//! delimiter = "::"
//!
//! [preprocess]
//! threshold = 3.0
//! min_interactions = 5
//!
//! [models.bpr-nnmf]
//! algorithm = "bpr"
//! nnmf = true
//! user_k = 10
//! item_k = 10
//!
//! [baselines.itemknn]
//! kind = "item_knn"
//! k = 50
//! shrink = 10.0
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::SlimConfig;
use crate::data::FilterMode;
use crate::error::{Error, Result};
use crate::evaluation::DEFAULT_BIN_THRESHOLDS;
use crate::factorization::ModelConfig;
use crate::stability::Factors;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub n_interactions: usize,
    #[serde(default = "default_exponent")]
    pub exponent: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_exponent() -> f64 {
    1.0
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
    pub delimiter: Option<String>,
    pub header: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Ratings at or above this become positives.
    pub threshold: f64,
    pub min_interactions: usize,
    pub filter_mode: FilterMode,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            threshold: 3.0,
            min_interactions: 5,
            filter_mode: FilterMode::Fixpoint,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratios: [0.6, 0.2, 0.2],
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub cutoffs: Vec<usize>,
    pub tail_fraction: f64,
    pub bin_thresholds: Vec<f64>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            cutoffs: vec![5, 10],
            tail_fraction: 0.66,
            bin_thresholds: DEFAULT_BIN_THRESHOLDS.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    /// Initialization seeds; the first model is the reference.
    pub seeds: Vec<u64>,
    /// Cutoffs used for every stability kind.
    pub cutoffs: Vec<usize>,
    pub factors: Factors,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            seeds: (1..=10).collect(),
            cutoffs: vec![10, 100],
            factors: Factors::Materialized,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaselineConfig {
    ItemKnn {
        k: usize,
        #[serde(default)]
        shrink: f64,
    },
    UserKnn {
        k: usize,
        #[serde(default)]
        shrink: f64,
    },
    Slim {
        k: usize,
        learning_rate: f64,
        reg: f64,
        epochs: usize,
        #[serde(default)]
        sample_seed: u64,
    },
    PureSvd {
        f: usize,
        #[serde(default)]
        seed: u64,
    },
}

impl BaselineConfig {
    pub fn slim(&self) -> Option<SlimConfig> {
        match *self {
            BaselineConfig::Slim {
                k,
                learning_rate,
                reg,
                epochs,
                sample_seed,
            } => Some(SlimConfig {
                k,
                learning_rate,
                reg,
                epochs,
                sample_seed,
            }),
            _ => None,
        }
    }
}

/// Inclusive range of a searched hyperparameter.
pub type Range<T> = [T; 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    /// Log-uniform.
    pub learning_rate: Range<f64>,
    /// Log-uniform; applied to both `reg_p` and `reg_q`.
    pub reg: Range<f64>,
    /// Integer-uniform.
    pub f: Range<usize>,
    /// Integer-uniform; applied to both `user_k` and `item_k` of NNMF models.
    pub k: Range<usize>,
    /// Integer-uniform; applied to both shrink terms of NNMF models.
    pub shrink: Range<usize>,
    pub budget: usize,
    pub seed: u64,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            learning_rate: [0.005, 0.2],
            reg: [1e-4, 0.1],
            f: [8, 64],
            k: [2, 50],
            shrink: [0, 50],
            budget: 20,
            seed: 0,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("search space: {m}")));
        if self.budget == 0 {
            return fail("budget must be at least 1");
        }
        for (name, [lo, hi]) in [("learning_rate", self.learning_rate), ("reg", self.reg)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return fail(&format!("{name} range must satisfy 0 < lo <= hi"));
            }
        }
        for (name, [lo, hi]) in [("f", self.f), ("k", self.k), ("shrink", self.shrink)] {
            if lo > hi {
                return fail(&format!("{name} range is empty"));
            }
        }
        if self.f[0] == 0 {
            return fail("f must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub preprocess: PreprocessConfig,
    pub split: SplitConfig,
    pub models: BTreeMap<String, ModelConfig>,
    pub baselines: BTreeMap<String, BaselineConfig>,
    pub evaluation: EvaluationConfig,
    pub stability: StabilityConfig,
    pub search: SearchSpace,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        match (&self.dataset.path, &self.dataset.synthetic) {
            (Some(_), Some(_)) => return fail("dataset: give either path or synthetic, not both".into()),
            (None, None) => return fail("dataset: path or synthetic is required".into()),
            _ => {}
        }
        let [a, b, c] = self.split.ratios;
        if [a, b, c].iter().any(|r| r.is_nan() || *r < 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return fail(format!(
                "split ratios must be non-negative and sum to 1, got {:?}",
                self.split.ratios
            ));
        }
        for (name, m) in &self.models {
            m.validate()
                .map_err(|e| Error::Config(format!("model {name}: {e}")))?;
        }
        let mut seeds = self.stability.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.stability.seeds.len() {
            return fail("stability seeds must be distinct".into());
        }
        if self.evaluation.cutoffs.contains(&0) || self.stability.cutoffs.contains(&0) {
            return fail("cutoffs must be at least 1".into());
        }
        self.search.validate()
    }
}
