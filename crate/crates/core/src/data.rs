//! Interaction datasets: loading, binarization, k-core filtering, holdout
//! splitting and a power-law synthetic generator.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seeded_rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub value: f64,
}

impl Interaction {
    pub fn new(user: usize, item: usize, value: f64) -> Self {
        Self { user, item, value }
    }
}

/// Sparse user x item preference matrix in compressed-row form.
///
/// Column indices are strictly increasing within each row.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionMatrix {
    n_users: usize,
    n_items: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl InteractionMatrix {
    /// Builds a matrix from interactions. Duplicate `(user, item)` pairs keep
    /// the last occurrence.
    pub fn from_interactions(n_users: usize, n_items: usize, interactions: &[Interaction]) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_users];
        for (pos, it) in interactions.iter().enumerate() {
            if it.user >= n_users || it.item >= n_items {
                return Err(Error::invalid(format!(
                    "interaction {pos} ({}, {}) outside {n_users}x{n_items}",
                    it.user, it.item
                )));
            }
            if !it.value.is_finite() {
                return Err(Error::invalid(format!("interaction {pos} has non-finite value")));
            }
            rows[it.user].push((it.item, it.value));
        }
        let mut indptr = Vec::with_capacity(n_users + 1);
        let mut indices = Vec::with_capacity(interactions.len());
        let mut values = Vec::with_capacity(interactions.len());
        indptr.push(0);
        for mut row in rows {
            // stable sort keeps insertion order among duplicates, so the
            // last entry of each run is the last occurrence
            row.sort_by_key(|&(i, _)| i);
            let mut k = 0;
            while k < row.len() {
                let mut last = k;
                while last + 1 < row.len() && row[last + 1].0 == row[k].0 {
                    last += 1;
                }
                indices.push(row[last].0);
                values.push(row[last].1);
                k = last + 1;
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            n_users,
            n_items,
            indptr,
            indices,
            values,
        })
    }

    pub fn empty(n_users: usize, n_items: usize) -> Self {
        Self {
            n_users,
            n_items,
            indptr: vec![0; n_users + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    #[inline]
    pub fn n_users(&self) -> usize {
        self.n_users
    }

    #[inline]
    pub fn n_items(&self) -> usize {
        self.n_items
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn density(&self) -> f64 {
        if self.n_users == 0 || self.n_items == 0 {
            return 0.0;
        }
        self.nnz() as f64 / (self.n_users as f64 * self.n_items as f64)
    }

    #[inline]
    pub fn row_items(&self, user: usize) -> &[usize] {
        &self.indices[self.indptr[user]..self.indptr[user + 1]]
    }

    #[inline]
    pub fn row_values(&self, user: usize) -> &[f64] {
        &self.values[self.indptr[user]..self.indptr[user + 1]]
    }

    #[inline]
    pub fn row_len(&self, user: usize) -> usize {
        self.indptr[user + 1] - self.indptr[user]
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.row_items(user).binary_search(&item).is_ok()
    }

    pub fn get(&self, user: usize, item: usize) -> Option<f64> {
        self.row_items(user)
            .binary_search(&item)
            .ok()
            .map(|k| self.row_values(user)[k])
    }

    /// Iterates stored entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = Interaction> + '_ {
        (0..self.n_users).flat_map(move |u| {
            self.row_items(u)
                .iter()
                .zip(self.row_values(u))
                .map(move |(&i, &v)| Interaction::new(u, i, v))
        })
    }

    pub fn to_interactions(&self) -> Vec<Interaction> {
        self.iter().collect()
    }

    /// Item x user matrix.
    pub fn transpose(&self) -> InteractionMatrix {
        let mut counts = vec![0usize; self.n_items + 1];
        for &i in &self.indices {
            counts[i + 1] += 1;
        }
        for k in 0..self.n_items {
            counts[k + 1] += counts[k];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for u in 0..self.n_users {
            for (&i, &v) in self.row_items(u).iter().zip(self.row_values(u)) {
                let slot = next[i];
                indices[slot] = u;
                values[slot] = v;
                next[i] += 1;
            }
        }
        InteractionMatrix {
            n_users: self.n_items,
            n_items: self.n_users,
            indptr,
            indices,
            values,
        }
    }

    pub fn user_counts(&self) -> Vec<usize> {
        (0..self.n_users).map(|u| self.row_len(u)).collect()
    }

    pub fn item_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_items];
        for &i in &self.indices {
            counts[i] += 1;
        }
        counts
    }

    /// SHA-256 over dimensions and stored entries, as lowercase hex.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.n_users as u64).to_le_bytes());
        hasher.update((self.n_items as u64).to_le_bytes());
        for it in self.iter() {
            hasher.update((it.user as u64).to_le_bytes());
            hasher.update((it.item as u64).to_le_bytes());
            hasher.update(it.value.to_le_bytes());
        }
        to_hex(&hasher.finalize())
    }
}

pub(crate) fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parsing options for delimited interaction files.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Field separator; may be more than one character (e.g. `::`).
    pub delimiter: String,
    pub header: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            delimiter: "\t".to_string(),
            header: false,
        }
    }
}

/// Result of [`load_interactions`]: interactions over dense indices plus the
/// token of each index, in first-seen order.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedInteractions {
    pub interactions: Vec<Interaction>,
    pub user_tokens: Vec<String>,
    pub item_tokens: Vec<String>,
}

impl LoadedInteractions {
    pub fn n_users(&self) -> usize {
        self.user_tokens.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_tokens.len()
    }

    pub fn to_matrix(&self) -> Result<InteractionMatrix> {
        InteractionMatrix::from_interactions(self.n_users(), self.n_items(), &self.interactions)
    }
}

pub fn load_interactions(path: &Path, opts: &LoadOptions) -> Result<LoadedInteractions> {
    let file = File::open(path).map_err(|e| Error::Io(e).context(format!("opening {}", path.display())))?;
    let reader = BufReader::new(file);
    if opts.delimiter.is_empty() {
        return Err(Error::Config("delimiter must not be empty".into()));
    }

    let mut user_index: HashMap<String, usize> = HashMap::new();
    let mut item_index: HashMap<String, usize> = HashMap::new();
    let mut user_tokens = Vec::new();
    let mut item_tokens = Vec::new();
    let mut position: HashMap<(usize, usize), usize> = HashMap::new();
    let mut interactions: Vec<Interaction> = Vec::new();

    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if lineno == 1 && opts.header {
            continue;
        }
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(opts.delimiter.as_str()).collect();
        if fields.len() < 3 {
            return Err(parse_err(
                lineno,
                format!(
                    "expected user, item, value columns, found {} field(s)",
                    fields.len()
                ),
            ));
        }
        let (user_tok, item_tok, value_tok) = (fields[0].trim(), fields[1].trim(), fields[2].trim());
        if user_tok.is_empty() || item_tok.is_empty() {
            return Err(parse_err(lineno, "empty user or item token".into()));
        }
        let value: f64 = value_tok
            .parse()
            .map_err(|_| parse_err(lineno, format!("invalid value {value_tok:?}")))?;
        if !value.is_finite() {
            return Err(parse_err(lineno, format!("non-finite value {value_tok:?}")));
        }
        let user = *user_index.entry(user_tok.to_string()).or_insert_with(|| {
            user_tokens.push(user_tok.to_string());
            user_tokens.len() - 1
        });
        let item = *item_index.entry(item_tok.to_string()).or_insert_with(|| {
            item_tokens.push(item_tok.to_string());
            item_tokens.len() - 1
        });
        match position.get(&(user, item)) {
            Some(&k) => interactions[k].value = value,
            None => {
                position.insert((user, item), interactions.len());
                interactions.push(Interaction::new(user, item, value));
            }
        }
    }

    if interactions.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} has no interactions",
            path.display()
        )));
    }
    Ok(LoadedInteractions {
        interactions,
        user_tokens,
        item_tokens,
    })
}

/// Writes interactions using the given tokens for users and items, or the
/// numeric index when `tokens` is `None`.
pub fn write_interactions(
    path: &Path,
    interactions: &[Interaction],
    tokens: Option<(&[String], &[String])>,
    delimiter: &str,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for it in interactions {
        match tokens {
            Some((users, items)) => writeln!(
                out,
                "{}{delimiter}{}{delimiter}{}",
                users[it.user], items[it.item], it.value
            )?,
            None => writeln!(out, "{}{delimiter}{}{delimiter}{}", it.user, it.item, it.value)?,
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes a `token,index` CSV.
pub fn write_index_map(path: &Path, tokens: &[String]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "token,index")?;
    for (idx, tok) in tokens.iter().enumerate() {
        writeln!(out, "{},{idx}", csv_field(tok))?;
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Keeps interactions with `value >= threshold`, setting their value to 1.
pub fn binarize(interactions: &[Interaction], threshold: f64) -> Vec<Interaction> {
    interactions
        .iter()
        .filter(|it| it.value >= threshold)
        .map(|it| Interaction::new(it.user, it.item, 1.0))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    /// Repeat until every surviving user and item meets the minimum.
    #[default]
    Fixpoint,
    /// One round of removal computed on the input counts.
    SinglePass,
}

/// Old indices of the surviving users and items, by new index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Remap {
    pub users: Vec<usize>,
    pub items: Vec<usize>,
}

/// Drops users and items with fewer than `min_interactions` entries and
/// re-indexes the survivors densely, preserving relative order.
pub fn core_filter(
    matrix: &InteractionMatrix,
    min_interactions: usize,
    mode: FilterMode,
) -> Result<(InteractionMatrix, Remap)> {
    if min_interactions == 0 {
        return Err(Error::invalid("min_interactions must be at least 1"));
    }
    let mut user_alive = vec![true; matrix.n_users()];
    let mut item_alive = vec![true; matrix.n_items()];
    loop {
        let mut ucount = vec![0usize; matrix.n_users()];
        let mut icount = vec![0usize; matrix.n_items()];
        for it in matrix.iter() {
            if user_alive[it.user] && item_alive[it.item] {
                ucount[it.user] += 1;
                icount[it.item] += 1;
            }
        }
        let mut changed = false;
        for (u, alive) in user_alive.iter_mut().enumerate() {
            if *alive && ucount[u] < min_interactions {
                *alive = false;
                changed = true;
            }
        }
        for (i, alive) in item_alive.iter_mut().enumerate() {
            if *alive && icount[i] < min_interactions {
                *alive = false;
                changed = true;
            }
        }
        if !changed || mode == FilterMode::SinglePass {
            break;
        }
    }

    let users: Vec<usize> = (0..matrix.n_users()).filter(|&u| user_alive[u]).collect();
    let items: Vec<usize> = (0..matrix.n_items()).filter(|&i| item_alive[i]).collect();
    let mut new_user = vec![usize::MAX; matrix.n_users()];
    let mut new_item = vec![usize::MAX; matrix.n_items()];
    for (n, &o) in users.iter().enumerate() {
        new_user[o] = n;
    }
    for (n, &o) in items.iter().enumerate() {
        new_item[o] = n;
    }
    let kept: Vec<Interaction> = matrix
        .iter()
        .filter(|it| user_alive[it.user] && item_alive[it.item])
        .map(|it| Interaction::new(new_user[it.user], new_item[it.item], it.value))
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no users or items with at least {min_interactions} interactions"
        )));
    }
    let filtered = InteractionMatrix::from_interactions(users.len(), items.len(), &kept)?;
    Ok((filtered, Remap { users, items }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: InteractionMatrix,
    pub validation: InteractionMatrix,
    pub test: InteractionMatrix,
}

impl DatasetSplit {
    pub fn n_users(&self) -> usize {
        self.train.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.train.n_items()
    }
}

/// Partition sizes for `n` interactions: validation and test are floored,
/// train takes the remainder.
pub fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> (usize, usize, usize) {
    let valid = (n as f64 * ratios.1).floor() as usize;
    let test = (n as f64 * ratios.2).floor() as usize;
    (n - valid - test, valid, test)
}

/// Seeded random holdout over the global interaction list.
pub fn holdout_split(matrix: &InteractionMatrix, ratios: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    let (a, b, c) = ratios;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split ratios must be positive and sum to 1, got ({a}, {b}, {c})"
        )));
    }
    let all = matrix.to_interactions();
    if all.len() < 3 {
        return Err(Error::EmptyDataset(format!(
            "holdout split needs at least 3 interactions, got {}",
            all.len()
        )));
    }
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.shuffle(&mut seeded_rng(seed));
    let (n_train, n_valid, _) = split_sizes(all.len(), ratios);
    let pick = |range: &[usize]| -> Vec<Interaction> { range.iter().map(|&k| all[k]).collect() };
    let (nu, ni) = (matrix.n_users(), matrix.n_items());
    Ok(DatasetSplit {
        train: InteractionMatrix::from_interactions(nu, ni, &pick(&order[..n_train]))?,
        validation: InteractionMatrix::from_interactions(nu, ni, &pick(&order[n_train..n_train + n_valid]))?,
        test: InteractionMatrix::from_interactions(nu, ni, &pick(&order[n_train + n_valid..]))?,
    })
}

/// Binary matrix whose item popularity follows `rank^-exponent` (item 0 is
/// the most likely), with users drawn uniformly and duplicates rejected.
pub fn synthesize_powerlaw(
    n_users: usize,
    n_items: usize,
    n_interactions: usize,
    exponent: f64,
    seed: u64,
) -> Result<InteractionMatrix> {
    if n_users == 0 || n_items == 0 {
        return Err(Error::invalid(
            "synthetic dataset needs at least one user and one item",
        ));
    }
    if !(exponent > 0.0 && exponent.is_finite()) {
        return Err(Error::invalid(format!(
            "exponent must be positive, got {exponent}"
        )));
    }
    if n_interactions as u128 > n_users as u128 * n_items as u128 {
        return Err(Error::invalid(format!(
            "{n_interactions} interactions exceed {n_users}x{n_items} cells"
        )));
    }
    let mut cumulative = Vec::with_capacity(n_items);
    let mut total = 0.0;
    for rank in 1..=n_items {
        total += (rank as f64).powf(-exponent);
        cumulative.push(total);
    }

    let mut rng = seeded_rng(seed);
    let mut seen: HashSet<(usize, usize)> = HashSet::with_capacity(n_interactions);
    let mut out = Vec::with_capacity(n_interactions);
    while out.len() < n_interactions {
        let user = rng.random_range(0..n_users);
        let x = rng.random::<f64>() * total;
        let item = cumulative.partition_point(|&c| c <= x).min(n_items - 1);
        if seen.insert((user, item)) {
            out.push(Interaction::new(user, item, 1.0));
        }
    }
    InteractionMatrix::from_interactions(n_users, n_items, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn csv() -> LoadOptions {
        LoadOptions {
            delimiter: ",".into(),
            header: false,
        }
    }

    #[test]
    fn load_two_lines() {
        let f = write_tmp("u1,i1,5\nu2,i1,3\n");
        let loaded = load_interactions(f.path(), &csv()).unwrap();
        assert_eq!(loaded.interactions.len(), 2);
        assert_eq!(loaded.n_users(), 2);
        assert_eq!(loaded.n_items(), 1);
    }

    #[test]
    fn load_duplicate_last_wins() {
        let f = write_tmp("u1,i1,5\nu1,i1,2\n");
        let loaded = load_interactions(f.path(), &csv()).unwrap();
        assert_eq!(loaded.interactions, vec![Interaction::new(0, 0, 2.0)]);
    }

    #[test]
    fn load_bad_value_names_line() {
        let f = write_tmp("u1,i1,abc\n");
        match load_interactions(f.path(), &csv()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_empty_file_errors() {
        let f = write_tmp("");
        assert!(matches!(
            load_interactions(f.path(), &csv()),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn load_header_and_multichar_delimiter() {
        let f = write_tmp("user::item::rating::ts\n1::10::4::0\n2::10::1::0\n");
        let opts = LoadOptions {
            delimiter: "::".into(),
            header: true,
        };
        let loaded = load_interactions(f.path(), &opts).unwrap();
        assert_eq!(loaded.user_tokens, vec!["1", "2"]);
        assert_eq!(loaded.interactions[1].value, 1.0);
    }

    #[test]
    fn write_then_load_round_trip() {
        let f = write_tmp("a\tx\t1.5\nb\ty\t2\na\ty\t-3\n");
        let loaded = load_interactions(f.path(), &LoadOptions::default()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_interactions(
            out.path(),
            &loaded.interactions,
            Some((&loaded.user_tokens, &loaded.item_tokens)),
            "\t",
        )
        .unwrap();
        let again = load_interactions(out.path(), &LoadOptions::default()).unwrap();
        assert_eq!(loaded, again);
    }

    #[test]
    fn binarize_ten_point_scale() {
        let its: Vec<_> = [7.0, 5.0, 6.0]
            .iter()
            .enumerate()
            .map(|(k, &v)| Interaction::new(0, k, v))
            .collect();
        let out = binarize(&its, 6.0);
        assert_eq!(out.iter().map(|i| i.item).collect::<Vec<_>>(), vec![0, 2]);
        assert!(out.iter().all(|i| i.value == 1.0));
    }

    #[test]
    fn binarize_counts_and_drops() {
        let counts = vec![Interaction::new(0, 0, 1.0), Interaction::new(0, 1, 3.0)];
        assert_eq!(binarize(&counts, 1.0).len(), 2);
        let low = vec![Interaction::new(0, 0, 2.0), Interaction::new(0, 1, 2.0)];
        assert!(binarize(&low, 3.0).is_empty());
    }

    #[test]
    fn binarize_idempotent_on_binary() {
        let its = vec![Interaction::new(0, 0, 1.0), Interaction::new(1, 2, 1.0)];
        assert_eq!(binarize(&binarize(&its, 0.5), 1.0), binarize(&its, 0.5));
    }

    fn matrix(n_users: usize, n_items: usize, pairs: &[(usize, usize)]) -> InteractionMatrix {
        let its: Vec<_> = pairs.iter().map(|&(u, i)| Interaction::new(u, i, 1.0)).collect();
        InteractionMatrix::from_interactions(n_users, n_items, &its).unwrap()
    }

    #[test]
    fn core_filter_keeps_satisfying_matrix() {
        // every user has 5 items and every item has 5 users
        let pairs: Vec<_> = (0..5).flat_map(|u| (0..5).map(move |i| (u, i))).collect();
        let m = matrix(5, 5, &pairs);
        let (out, remap) = core_filter(&m, 5, FilterMode::Fixpoint).unwrap();
        assert_eq!(out, m);
        assert_eq!(remap.users, vec![0, 1, 2, 3, 4]);
        assert_eq!(remap.items, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn core_filter_forced_removal() {
        // user 2 and item 2 only touch each other
        let m = matrix(3, 3, &[(0, 0), (0, 1), (1, 0), (1, 1), (2, 2)]);
        let (out, remap) = core_filter(&m, 2, FilterMode::Fixpoint).unwrap();
        assert_eq!(remap.users, vec![0, 1]);
        assert_eq!(remap.items, vec![0, 1]);
        assert_eq!(out.nnz(), 4);
    }

    #[test]
    fn core_filter_empty_result_errors() {
        let m = matrix(2, 2, &[(0, 0), (1, 1)]);
        assert!(matches!(
            core_filter(&m, 2, FilterMode::Fixpoint),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn core_filter_single_pass_can_leave_violations() {
        // item 1 is dropped (count 1), which leaves user 0 with one item
        let m = matrix(2, 2, &[(0, 0), (0, 1), (1, 0)]);
        let (single, _) = core_filter(&m, 1, FilterMode::SinglePass).unwrap();
        assert_eq!(single.nnz(), 3);
        let m = matrix(3, 3, &[(0, 0), (0, 1), (1, 0), (1, 2), (2, 2), (2, 0)]);
        let (single, _) = core_filter(&m, 2, FilterMode::SinglePass).unwrap();
        let (fix, _) = core_filter(&m, 2, FilterMode::Fixpoint).unwrap();
        assert!(fix.nnz() <= single.nnz());
    }

    /// Brute-force oracle: repeatedly delete the lowest-index violating user or
    /// item from a pair set until nothing changes.
    fn brute_force_kcore(pairs: &HashSet<(usize, usize)>, min: usize) -> HashSet<(usize, usize)> {
        let mut cur = pairs.clone();
        loop {
            let mut uc: HashMap<usize, usize> = HashMap::new();
            let mut ic: HashMap<usize, usize> = HashMap::new();
            for &(u, i) in &cur {
                *uc.entry(u).or_default() += 1;
                *ic.entry(i).or_default() += 1;
            }
            let bad_user = uc.iter().filter(|(_, &c)| c < min).map(|(&u, _)| u).min();
            let bad_item = ic.iter().filter(|(_, &c)| c < min).map(|(&i, _)| i).min();
            match (bad_user, bad_item) {
                (Some(u), _) => cur.retain(|&(x, _)| x != u),
                (None, Some(i)) => cur.retain(|&(_, y)| y != i),
                (None, None) => return cur,
            }
        }
    }

    #[test]
    fn core_filter_matches_brute_force_fixpoint() {
        let mut rng = seeded_rng(99);
        for trial in 0..200 {
            let density = 0.1 + 0.3 * (trial % 7) as f64 / 7.0;
            let mut pairs = HashSet::new();
            for u in 0..20 {
                for i in 0..20 {
                    if rng.random::<f64>() < density {
                        pairs.insert((u, i));
                    }
                }
            }
            let m = matrix(20, 20, &pairs.iter().copied().collect::<Vec<_>>());
            let min = 2 + trial % 4;
            let expected = brute_force_kcore(&pairs, min);
            match core_filter(&m, min, FilterMode::Fixpoint) {
                Ok((out, remap)) => {
                    let got: HashSet<_> = out
                        .iter()
                        .map(|it| (remap.users[it.user], remap.items[it.item]))
                        .collect();
                    assert_eq!(got, expected, "trial {trial}");
                    let (again, _) = core_filter(&out, min, FilterMode::Fixpoint).unwrap();
                    assert_eq!(again, out, "re-filtering must be the identity");
                }
                Err(Error::EmptyDataset(_)) => assert!(expected.is_empty(), "trial {trial}"),
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn split_sizes_rounding() {
        assert_eq!(split_sizes(10, (0.6, 0.2, 0.2)), (6, 2, 2));
        assert_eq!(split_sizes(11, (0.6, 0.2, 0.2)), (7, 2, 2));
    }

    #[test]
    fn split_exact_and_deterministic() {
        let pairs: Vec<_> = (0..10).map(|k| (k % 3, k)).collect();
        let m = matrix(3, 10, &pairs);
        let a = holdout_split(&m, (0.6, 0.2, 0.2), 7).unwrap();
        assert_eq!((a.train.nnz(), a.validation.nnz(), a.test.nnz()), (6, 2, 2));
        let b = holdout_split(&m, (0.6, 0.2, 0.2), 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_errors() {
        let m = matrix(1, 2, &[(0, 0), (0, 1)]);
        assert!(holdout_split(&m, (0.6, 0.2, 0.2), 1).is_err());
        let m = matrix(1, 3, &[(0, 0), (0, 1), (0, 2)]);
        assert!(holdout_split(&m, (0.6, 0.3, 0.2), 1).is_err());
        assert!(holdout_split(&m, (0.8, 0.2, 0.0), 1).is_err());
    }

    proptest! {
        #[test]
        fn split_partitions_disjoint_and_exhaustive(
            cells in proptest::collection::hash_set((0usize..15, 0usize..12), 3..120),
            seed in any::<u64>(),
        ) {
            let m = matrix(15, 12, &cells.iter().copied().collect::<Vec<_>>());
            let s = holdout_split(&m, (0.6, 0.2, 0.2), seed).unwrap();
            let mut seen = HashSet::new();
            for part in [&s.train, &s.validation, &s.test] {
                prop_assert_eq!(part.n_users(), 15);
                prop_assert_eq!(part.n_items(), 12);
                for it in part.iter() {
                    prop_assert!(seen.insert((it.user, it.item)));
                }
            }
            prop_assert_eq!(seen, cells);
        }
    }

    fn gini(counts: &[usize]) -> f64 {
        let mut c: Vec<f64> = counts.iter().map(|&x| x as f64).collect();
        c.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = c.len() as f64;
        let total: f64 = c.iter().sum();
        let weighted: f64 = c.iter().enumerate().map(|(k, x)| (k as f64 + 1.0) * x).sum();
        (2.0 * weighted) / (n * total) - (n + 1.0) / n
    }

    #[test]
    fn synthetic_cardinality_and_values() {
        let m = synthesize_powerlaw(100, 50, 1000, 1.0, 1).unwrap();
        assert_eq!(m.nnz(), 1000);
        assert!(m.iter().all(|it| it.value == 1.0));
        let mut pop = m.item_counts();
        pop.sort_unstable_by(|a, b| b.cmp(a));
        assert!(pop.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(m, synthesize_powerlaw(100, 50, 1000, 1.0, 1).unwrap());
    }

    #[test]
    fn synthetic_exponent_controls_skew() {
        let steep = synthesize_powerlaw(100, 50, 1000, 1.5, 3).unwrap();
        let flat = synthesize_powerlaw(100, 50, 1000, 0.5, 3).unwrap();
        assert!(gini(&steep.item_counts()) > gini(&flat.item_counts()));
    }

    #[test]
    fn synthetic_rejects_overfull() {
        assert!(synthesize_powerlaw(2, 2, 5, 1.0, 0).is_err());
        assert_eq!(synthesize_powerlaw(2, 2, 4, 1.0, 0).unwrap().nnz(), 4);
    }

    #[test]
    fn transpose_round_trip() {
        let m = synthesize_powerlaw(20, 10, 60, 1.0, 5).unwrap();
        assert_eq!(m.transpose().transpose(), m);
        assert_eq!(m.transpose().user_counts(), m.item_counts());
    }
}
