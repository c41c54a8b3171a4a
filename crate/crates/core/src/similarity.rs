//! Shrunk-cosine top-k neighborhoods and the identity similarity.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::InteractionMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    User,
    Item,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::User => "user",
            Axis::Item => "item",
        }
    }
}

/// Sparse square similarity with a unit self-weight on every row.
///
/// Row `x` stores `x` itself plus at most `k` neighbors with strictly positive
/// weights, sorted by neighbor id.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    k: usize,
    indptr: Vec<usize>,
    neighbors: Vec<usize>,
    weights: Vec<f64>,
}

impl SimilarityMatrix {
    /// Builds from per-row `(neighbor, weight)` lists, sorting them and
    /// checking the unit diagonal and the `k` bound.
    pub fn from_rows(k: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n = rows.len();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        let mut weights = Vec::new();
        indptr.push(0);
        for (x, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(y, _)| y);
            if row.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::invalid(format!("row {x} has duplicate neighbors")));
            }
            if row.iter().find(|&&(y, _)| y == x).map(|p| p.1) != Some(1.0) {
                return Err(Error::invalid(format!("row {x} lacks a unit self-weight")));
            }
            if row.len() - 1 > k {
                return Err(Error::invalid(format!("row {x} holds more than {k} neighbors")));
            }
            for &(y, w) in &row {
                if y >= n || !w.is_finite() || w < 0.0 {
                    return Err(Error::invalid(format!("row {x} has invalid entry ({y}, {w})")));
                }
                neighbors.push(y);
                weights.push(w);
            }
            indptr.push(neighbors.len());
        }
        Ok(Self {
            n,
            k,
            indptr,
            neighbors,
            weights,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn row_neighbors(&self, x: usize) -> &[usize] {
        &self.neighbors[self.indptr[x]..self.indptr[x + 1]]
    }

    #[inline]
    pub fn row_weights(&self, x: usize) -> &[f64] {
        &self.weights[self.indptr[x]..self.indptr[x + 1]]
    }

    /// `(neighbor, weight)` pairs of row `x`, self included.
    pub fn row(&self, x: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.row_neighbors(x)
            .iter()
            .copied()
            .zip(self.row_weights(x).iter().copied())
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        match self.row_neighbors(x).binary_search(&y) {
            Ok(pos) => self.row_weights(x)[pos],
            Err(_) => 0.0,
        }
    }

    pub fn nnz(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_identity(&self) -> bool {
        self.nnz() == self.n
    }

    /// Writes `row,col,weight` triples in row-major order.
    pub fn write_triples(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "# n={} k={}", self.n, self.k)?;
        writeln!(out, "row,col,weight")?;
        for x in 0..self.n {
            for (y, w) in self.row(x) {
                writeln!(out, "{x},{y},{w}")?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_triples(path: &Path) -> Result<Self> {
        let bad = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let meta = lines.next().ok_or_else(|| bad("empty file".into()))??;
        let mut n = None;
        let mut k = None;
        for tok in meta.trim_start_matches('#').split_whitespace() {
            if let Some(v) = tok.strip_prefix("n=") {
                n = v.parse::<usize>().ok();
            } else if let Some(v) = tok.strip_prefix("k=") {
                k = v.parse::<usize>().ok();
            }
        }
        let (n, k) = n.zip(k).ok_or_else(|| bad("missing n/k header".into()))?;
        let mut rows = vec![Vec::new(); n];
        for (lineno, line) in lines.enumerate().skip(1) {
            let line = line?;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(bad(format!("line {}: expected 3 fields", lineno + 2)));
            }
            let parsed = (f[0].parse::<usize>(), f[1].parse::<usize>(), f[2].parse::<f64>());
            match parsed {
                (Ok(x), Ok(y), Ok(w)) if x < n => rows[x].push((y, w)),
                _ => return Err(bad(format!("line {}: malformed triple", lineno + 2))),
            }
        }
        Self::from_rows(k, rows).map_err(|e| bad(e.to_string()))
    }
}

/// File name under which a similarity is cached for a given dataset.
pub fn cache_key(axis: Axis, k: usize, shrink: f64, dataset_hash: &str) -> String {
    let short = &dataset_hash[..dataset_hash.len().min(16)];
    format!("sim-{}-k{k}-h{shrink}-{short}", axis.as_str())
}

/// Diagonal-only similarity; NNMF over it is plain MF.
pub fn identity_similarity(n: usize) -> Result<SimilarityMatrix> {
    if n == 0 {
        return Err(Error::invalid("identity similarity needs n >= 1"));
    }
    Ok(SimilarityMatrix {
        n,
        k: 0,
        indptr: (0..=n).collect(),
        neighbors: (0..n).collect(),
        weights: vec![1.0; n],
    })
}

/// Shrunk cosine `r_x . r_y / (|r_x| |r_y| + shrink)` between the profiles of
/// `axis` entities, keeping each row's `k` largest positive values.
///
/// Ties at the cut break toward the smaller neighbor id. Entities with an
/// empty profile only get their self-entry.
pub fn cosine_topk(
    matrix: &InteractionMatrix,
    axis: Axis,
    k: usize,
    shrink: f64,
) -> Result<SimilarityMatrix> {
    if !(shrink >= 0.0 && shrink.is_finite()) {
        return Err(Error::invalid(format!(
            "shrink must be non-negative, got {shrink}"
        )));
    }
    let (profiles, transposed) = match axis {
        Axis::User => (matrix.clone(), matrix.transpose()),
        Axis::Item => (matrix.transpose(), matrix.clone()),
    };
    let n = profiles.n_users();
    if n == 0 || matrix.nnz() == 0 {
        return Err(Error::EmptyDataset("similarity over an empty matrix".into()));
    }
    if k >= n {
        return Err(Error::invalid(format!(
            "cannot keep {k} non-self neighbors among {n} entities"
        )));
    }

    let sq_norms: Vec<f64> = (0..n)
        .map(|x| profiles.row_values(x).iter().map(|v| v * v).sum::<f64>())
        .collect();

    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![0.0f64; n], vec![false; n], Vec::<usize>::new()),
            |(acc, marked, touched), x| {
                let mut row = Vec::with_capacity(k + 1);
                row.push((x, 1.0));
                if k == 0 || sq_norms[x] == 0.0 {
                    return row;
                }
                for (&c, &rv) in profiles.row_items(x).iter().zip(profiles.row_values(x)) {
                    for (&y, &cv) in transposed.row_items(c).iter().zip(transposed.row_values(c)) {
                        if y == x {
                            continue;
                        }
                        if !marked[y] {
                            marked[y] = true;
                            touched.push(y);
                        }
                        acc[y] += rv * cv;
                    }
                }
                let mut cands: Vec<(usize, f64)> = Vec::with_capacity(touched.len());
                for &y in touched.iter() {
                    let d = acc[y];
                    acc[y] = 0.0;
                    marked[y] = false;
                    if sq_norms[y] == 0.0 {
                        continue;
                    }
                    let s = d / ((sq_norms[x] * sq_norms[y]).sqrt() + shrink);
                    if s > 0.0 {
                        cands.push((y, s));
                    }
                }
                touched.clear();
                let by_rank = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
                if cands.len() > k {
                    cands.select_nth_unstable_by(k - 1, by_rank);
                    cands.truncate(k);
                }
                row.extend(cands);
                row.sort_by_key(|&(y, _)| y);
                row
            },
        )
        .collect();

    SimilarityMatrix::from_rows(k, rows)
}
