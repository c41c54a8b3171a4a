//! Independent brute-force oracles shared by the integration tests. Nothing
//! here calls into the code paths it is used to check.

#![allow(dead_code, clippy::needless_range_loop, clippy::too_many_arguments)]

use std::collections::HashSet;

use nnmf::data::{Interaction, InteractionMatrix};
use nnmf::dense::DenseMatrix;
use nnmf::factorization::{Algorithm, Sample};
use nnmf::similarity::SimilarityMatrix;
use nnmf::SeededRng;
use rand::Rng;

pub type Dense = Vec<Vec<f64>>;

pub fn random_binary(rng: &mut SeededRng, nu: usize, ni: usize, p: f64) -> InteractionMatrix {
    let mut its = Vec::new();
    for u in 0..nu {
        for i in 0..ni {
            if rng.random::<f64>() < p {
                its.push(Interaction::new(u, i, 1.0));
            }
        }
    }
    if its.is_empty() {
        its.push(Interaction::new(0, 0, 1.0));
    }
    InteractionMatrix::from_interactions(nu, ni, &its).unwrap()
}

pub fn to_dense(m: &InteractionMatrix) -> Dense {
    let mut d = vec![vec![0.0; m.n_items()]; m.n_users()];
    for it in m.iter() {
        d[it.user][it.item] = it.value;
    }
    d
}

/// Random similarity with a unit diagonal and up to `k` extra neighbors
/// per row, weights in `[0.05, 1)`.
pub fn random_similarity(rng: &mut SeededRng, n: usize, k: usize) -> SimilarityMatrix {
    let rows = (0..n)
        .map(|x| {
            let mut row = vec![(x, 1.0)];
            let mut used: HashSet<usize> = [x].into_iter().collect();
            for _ in 0..k.min(n - 1) {
                let y = rng.random_range(0..n);
                if used.insert(y) {
                    row.push((y, rng.random_range(0.05..1.0)));
                }
            }
            row
        })
        .collect();
    SimilarityMatrix::from_rows(k, rows).unwrap()
}

pub fn random_dense(rng: &mut SeededRng, rows: usize, cols: usize, scale: f64) -> DenseMatrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    DenseMatrix::from_vec(rows, cols, data)
}

pub fn sim_dense(s: &SimilarityMatrix) -> Dense {
    let n = s.n();
    let mut d = vec![vec![0.0; n]; n];
    for (x, row) in d.iter_mut().enumerate() {
        for (y, w) in s.row(x) {
            row[y] = w;
        }
    }
    d
}

pub fn mat_dense(m: &DenseMatrix) -> Dense {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let (n, m, p) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; p]; n];
    for i in 0..n {
        for k in 0..m {
            for j in 0..p {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

pub fn transpose(a: &Dense) -> Dense {
    if a.is_empty() {
        return vec![];
    }
    (0..a[0].len())
        .map(|j| a.iter().map(|r| r[j]).collect())
        .collect()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-sample objective evaluated densely from `S P` and `S Q`, with the
/// penalty over the rows that have a non-zero similarity to the sampled
/// entities.
pub fn oracle_loss(
    alg: Algorithm,
    reg_p: f64,
    reg_q: f64,
    p: &Dense,
    q: &Dense,
    su: &Dense,
    si: &Dense,
    sample: &Sample,
) -> f64 {
    let ps = matmul(su, p);
    let qs = matmul(si, q);
    let dotv = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let sq = |a: &[f64]| dotv(a, a);
    let (user, data, items): (usize, f64, Vec<usize>) = match *sample {
        Sample::Rating { user, item, target } => {
            let x = dotv(&ps[user], &qs[item]);
            let d = match alg {
                Algorithm::Funk => 0.5 * (target - x).powi(2),
                Algorithm::Pmf => 0.5 * (target - sig(x)).powi(2),
                Algorithm::Bpr => unreachable!(),
            };
            (user, d, (0..q.len()).filter(|&k| si[item][k] != 0.0).collect())
        }
        Sample::Triple {
            user,
            positive,
            negative,
        } => {
            let x = dotv(&ps[user], &qs[positive]) - dotv(&ps[user], &qs[negative]);
            let d = -(sig(x)).ln();
            let items = (0..q.len())
                .filter(|&k| si[positive][k] != 0.0 || si[negative][k] != 0.0)
                .collect();
            (user, d, items)
        }
    };
    let users: Vec<usize> = (0..p.len()).filter(|&v| su[user][v] != 0.0).collect();
    data + 0.5 * reg_p * users.iter().map(|&v| sq(&p[v])).sum::<f64>()
        + 0.5 * reg_q * items.iter().map(|&k| sq(&q[k])).sum::<f64>()
}

pub fn oracle_ap(recs: &[usize], gt: &HashSet<usize>, k: usize) -> f64 {
    let mut hits = 0.0;
    let mut total = 0.0;
    for (n, i) in recs.iter().take(k).enumerate() {
        if gt.contains(i) {
            hits += 1.0;
            total += hits / (n as f64 + 1.0);
        }
    }
    total / (k.min(gt.len()) as f64)
}

pub fn oracle_recall(recs: &[usize], gt: &HashSet<usize>, k: usize) -> f64 {
    recs.iter().take(k).filter(|i| gt.contains(i)).count() as f64 / gt.len() as f64
}

pub fn oracle_jaccard(a: &[usize], b: &[usize]) -> f64 {
    let a: HashSet<_> = a.iter().collect();
    let b: HashSet<_> = b.iter().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / a.union(&b).count() as f64
}

/// All pairwise shrunk cosines between rows of `d`.
pub fn oracle_cosine(d: &Dense, shrink: f64) -> Dense {
    let n = d.len();
    let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut out = vec![vec![0.0; n]; n];
    for x in 0..n {
        for y in 0..n {
            let num: f64 = d[x].iter().zip(&d[y]).map(|(a, b)| a * b).sum();
            let den = norm(&d[x]) * norm(&d[y]) + shrink;
            out[x][y] = if den > 0.0 { num / den } else { 0.0 };
        }
    }
    out
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
pub fn jacobi_eigenvalues(mut a: Dense) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Brute-force top-`k` ids of `scores` over `candidates` (descending, ties
/// by ascending id).
pub fn oracle_topk(scores: &[f64], candidates: &[usize], k: usize) -> Vec<usize> {
    let mut c: Vec<usize> = candidates.to_vec();
    c.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    c.truncate(k);
    c
}
