//! On-disk formats: persisted splits, model files and training histories.
//!
//! A model file is the 8-byte magic `NNMFMODL`, a little-endian `u32`
//! header length, a JSON [`ModelHeader`], and then every matrix listed in the
//! header as row-major little-endian `f64`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DatasetSplit, Interaction, InteractionMatrix};
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::factorization::{EpochRecord, ModelConfig, TrainedModel};

pub const MODEL_MAGIC: &[u8; 8] = b"NNMFMODL";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    /// `funk-mf`, `bpr-nnmf`, `item_knn`, `pure_svd`, ...
    pub kind: String,
    pub n_users: usize,
    pub n_items: usize,
    /// Latent dimension; 0 for models without one.
    pub f: usize,
    pub config_hash: String,
    /// Full configuration of the model, kind-specific.
    pub config: serde_json::Value,
    /// Cache keys of the user and item similarities the model depends on.
    pub similarity: Vec<String>,
    pub matrices: Vec<MatrixShape>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoredModel {
    pub header: ModelHeader,
    pub matrices: Vec<DenseMatrix>,
}

impl StoredModel {
    pub fn matrix(&self, name: &str) -> Option<&DenseMatrix> {
        self.header
            .matrices
            .iter()
            .position(|m| m.name == name)
            .map(|k| &self.matrices[k])
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(MODEL_MAGIC)?;
        out.write_all(&(header.len() as u32).to_le_bytes())?;
        out.write_all(&header)?;
        for m in &self.matrices {
            for v in m.as_slice() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bad = |message: &str| Error::Format {
            path: path.to_path_buf(),
            message: message.to_string(),
        };
        let mut input = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
        if &magic != MODEL_MAGIC {
            return Err(bad("not a model file"));
        }
        let mut len = [0u8; 4];
        input
            .read_exact(&mut len)
            .map_err(|_| bad("truncated header length"))?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        input
            .read_exact(&mut header)
            .map_err(|_| bad("truncated header"))?;
        let header: ModelHeader =
            serde_json::from_slice(&header).map_err(|e| bad(&format!("header: {e}")))?;
        let mut matrices = Vec::with_capacity(header.matrices.len());
        let mut buf = [0u8; 8];
        for shape in &header.matrices {
            let mut data = Vec::with_capacity(shape.rows * shape.cols);
            for _ in 0..shape.rows * shape.cols {
                input
                    .read_exact(&mut buf)
                    .map_err(|_| bad(&format!("truncated matrix {}", shape.name)))?;
                data.push(f64::from_le_bytes(buf));
            }
            matrices.push(DenseMatrix::from_vec(shape.rows, shape.cols, data));
        }
        if input.read(&mut buf)? != 0 {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { header, matrices })
    }
}

/// Stores `P`, `Q`, `P*` and `Q*` of a trained factor model.
pub fn stored_from_trained(model: &TrainedModel, similarity: Vec<String>) -> StoredModel {
    let named = [
        ("P", &model.base.p),
        ("Q", &model.base.q),
        ("P*", &model.materialized.p),
        ("Q*", &model.materialized.q),
    ];
    StoredModel {
        header: ModelHeader {
            kind: model.config.kind(),
            n_users: model.base.p.rows(),
            n_items: model.base.q.rows(),
            f: model.config.f,
            config_hash: model.config.hash(),
            config: serde_json::to_value(&model.config).expect("config serializes"),
            similarity,
            matrices: named
                .iter()
                .map(|(name, m)| MatrixShape {
                    name: name.to_string(),
                    rows: m.rows(),
                    cols: m.cols(),
                })
                .collect(),
        },
        matrices: named.iter().map(|(_, m)| (*m).clone()).collect(),
    }
}

impl StoredModel {
    pub fn model_config(&self) -> Option<ModelConfig> {
        serde_json::from_value(self.header.config.clone()).ok()
    }
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "epoch,loss,val_metric")?;
    for r in history {
        let val = r.val_metric.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{val}", r.epoch, r.loss)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let bad = |line: usize, message: &str| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    };
    let mut out = Vec::new();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate().skip(1) {
        let line = line?;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(bad(n + 1, "expected 3 fields"));
        }
        out.push(EpochRecord {
            epoch: f[0].parse().map_err(|_| bad(n + 1, "bad epoch"))?,
            loss: f[1].parse().map_err(|_| bad(n + 1, "bad loss"))?,
            val_metric: if f[2].is_empty() {
                None
            } else {
                Some(f[2].parse().map_err(|_| bad(n + 1, "bad metric"))?)
            },
        });
    }
    Ok(out)
}

/// Dataset statistics in the shape of a dataset summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    /// Percentage of filled cells.
    pub density_percent: f64,
}

impl DatasetStats {
    pub fn of(m: &InteractionMatrix) -> Self {
        Self {
            users: m.n_users(),
            items: m.n_items(),
            interactions: m.nnz(),
            density_percent: 100.0 * m.density(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMeta {
    pub n_users: usize,
    pub n_items: usize,
    pub dataset_hash: String,
    pub stats: DatasetStats,
}

pub const SPLIT_PARTS: [&str; 3] = ["train", "validation", "test"];

pub fn split_paths(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = SPLIT_PARTS.iter().map(|p| dir.join(format!("{p}.tsv"))).collect();
    v.push(dir.join("meta.json"));
    v
}

/// Writes the three parts as `user\titem\tvalue` over dense indices, plus
/// `meta.json` and optional token maps.
pub fn write_split(
    dir: &Path,
    split: &DatasetSplit,
    meta: &SplitMeta,
    tokens: Option<(&[String], &[String])>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, m) in SPLIT_PARTS
        .iter()
        .zip([&split.train, &split.validation, &split.test])
    {
        crate::data::write_interactions(&dir.join(format!("{name}.tsv")), &m.to_interactions(), None, "\t")?;
    }
    if let Some((users, items)) = tokens {
        crate::data::write_index_map(&dir.join("users.csv"), users)?;
        crate::data::write_index_map(&dir.join("items.csv"), items)?;
    }
    write_json(&dir.join("meta.json"), meta)
}

fn read_indexed(path: &Path, n_users: usize, n_items: usize) -> Result<InteractionMatrix> {
    let mut its = Vec::new();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        let f: Vec<&str> = line.split('\t').collect();
        let parsed =
            (f.len() == 3).then(|| (f[0].parse::<usize>(), f[1].parse::<usize>(), f[2].parse::<f64>()));
        match parsed {
            Some((Ok(u), Ok(i), Ok(v))) => its.push(Interaction::new(u, i, v)),
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: n + 1,
                    message: "expected user<TAB>item<TAB>value".into(),
                })
            }
        }
    }
    InteractionMatrix::from_interactions(n_users, n_items, &its)
        .map_err(|e| e.context(path.display().to_string()))
}

pub fn read_split(dir: &Path) -> Result<(DatasetSplit, SplitMeta)> {
    let missing: Vec<PathBuf> = split_paths(dir).into_iter().filter(|p| !p.exists()).collect();
    if !missing.is_empty() {
        return Err(Error::MissingInputs(missing));
    }
    let meta: SplitMeta = read_json(&dir.join("meta.json"))?;
    let part = |name: &str| read_indexed(&dir.join(format!("{name}.tsv")), meta.n_users, meta.n_items);
    let split = DatasetSplit {
        train: part("train")?,
        validation: part("validation")?,
        test: part("test")?,
    };
    Ok((split, meta))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes CSV rows; fields are written verbatim.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", header.join(","))?;
    for r in rows {
        writeln!(out, "{}", r.join(","))?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{holdout_split, synthesize_powerlaw};
    use crate::factorization::{similarities_for, train, Algorithm};

    #[test]
    fn model_round_trip() {
        let m = synthesize_powerlaw(20, 15, 120, 1.0, 1).unwrap();
        let split = holdout_split(&m, (0.6, 0.2, 0.2), 2).unwrap();
        let mut c = ModelConfig::new(Algorithm::Funk, false);
        c.f = 3;
        c.epochs_max = 2;
        let (su, si) = similarities_for(&split.train, &c).unwrap();
        let model = train(&split, &c, su, si).unwrap();
        let stored = stored_from_trained(&model, vec![]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        stored.write(&path).unwrap();
        let back = StoredModel::read(&path).unwrap();
        assert_eq!(back, stored);
        assert_eq!(back.header.kind, "funk-mf");
        assert_eq!(back.matrix("Q*").unwrap(), &model.materialized.q);
        assert_eq!(back.model_config().unwrap(), c);
    }

    #[test]
    fn corrupt_model_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        fs::write(&path, b"NOTAMODEL").unwrap();
        assert!(matches!(StoredModel::read(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn split_round_trip() {
        let m = synthesize_powerlaw(30, 10, 100, 1.0, 3).unwrap();
        let split = holdout_split(&m, (0.6, 0.2, 0.2), 4).unwrap();
        let meta = SplitMeta {
            n_users: 30,
            n_items: 10,
            dataset_hash: m.content_hash(),
            stats: DatasetStats::of(&m),
        };
        let dir = tempfile::tempdir().unwrap();
        write_split(dir.path(), &split, &meta, None).unwrap();
        let (back, back_meta) = read_split(dir.path()).unwrap();
        assert_eq!(back, split);
        assert_eq!(back_meta, meta);
    }

    #[test]
    fn missing_split_lists_paths() {
        let dir = tempfile::tempdir().unwrap();
        match read_split(dir.path()) {
            Err(Error::MissingInputs(p)) => assert_eq!(p.len(), 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn history_round_trip() {
        let h = vec![
            EpochRecord {
                epoch: 1,
                loss: 3.5,
                val_metric: None,
            },
            EpochRecord {
                epoch: 2,
                loss: 0.1 + 0.2,
                val_metric: Some(0.125),
            },
        ];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_history(f.path(), &h).unwrap();
        assert_eq!(read_history(f.path()).unwrap(), h);
    }
}
