//! Top-N list generation, MAP/Recall, long-tail ground truth and item
//! popularity bins.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Interaction, InteractionMatrix};
use crate::dense::{dot, DenseMatrix};
use crate::error::{Error, Result};

/// Cumulative-share comparisons are made with this slack so that shares that
/// are mathematically on a bin edge are not pushed across it by rounding.
const SHARE_EPS: f64 = 1e-12;

/// Anything that can score every item for a user.
pub trait Scorer: Sync {
    fn n_users(&self) -> usize;
    fn n_items(&self) -> usize;
    /// Writes the score of every item into `out` (length `n_items`).
    fn score_user(&self, user: usize, out: &mut [f64]);
}

/// Dot-product scorer over user and item embedding tables.
#[derive(Clone, Copy, Debug)]
pub struct EmbeddingScorer<'a> {
    pub users: &'a DenseMatrix,
    pub items: &'a DenseMatrix,
}

impl Scorer for EmbeddingScorer<'_> {
    fn n_users(&self) -> usize {
        self.users.rows()
    }

    fn n_items(&self) -> usize {
        self.items.rows()
    }

    fn score_user(&self, user: usize, out: &mut [f64]) {
        let pu = self.users.row(user);
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(pu, self.items.row(i));
        }
    }
}

/// Precomputed users x items score table.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable(pub DenseMatrix);

impl Scorer for ScoreTable {
    fn n_users(&self) -> usize {
        self.0.rows()
    }

    fn n_items(&self) -> usize {
        self.0.cols()
    }

    fn score_user(&self, user: usize, out: &mut [f64]) {
        out.copy_from_slice(self.0.row(user));
    }
}

/// Per-user top-N item lists.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedList {
    pub cutoff: usize,
    pub lists: Vec<Vec<usize>>,
}

impl RankedList {
    pub fn n_users(&self) -> usize {
        self.lists.len()
    }

    pub fn user(&self, u: usize) -> &[usize] {
        &self.lists[u]
    }
}

/// Indices of the `n` best-scored candidates, by descending score then
/// ascending id.
pub fn top_n_indices(scores: &[f64], candidates: &mut Vec<usize>, n: usize) -> Vec<usize> {
    let by_rank = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if candidates.len() > n && n > 0 {
        candidates.select_nth_unstable_by(n - 1, by_rank);
        candidates.truncate(n);
    }
    candidates.sort_unstable_by(by_rank);
    candidates.truncate(n);
    std::mem::take(candidates)
}

/// Top-`n` recommendations for every user, excluding the user's train items.
pub fn recommend_topn<S: Scorer + ?Sized>(
    model: &S,
    train: &InteractionMatrix,
    n: usize,
) -> Result<RankedList> {
    if n == 0 {
        return Err(Error::invalid("recommendation cutoff must be at least 1"));
    }
    if model.n_users() != train.n_users() || model.n_items() != train.n_items() {
        return Err(Error::invalid(format!(
            "model is {}x{} but train matrix is {}x{}",
            model.n_users(),
            model.n_items(),
            train.n_users(),
            train.n_items()
        )));
    }
    let n_items = model.n_items();
    let lists = (0..model.n_users())
        .into_par_iter()
        .map_init(
            || (vec![0.0; n_items], Vec::with_capacity(n_items)),
            |(scores, cands), u| {
                model.score_user(u, scores);
                let seen = train.row_items(u);
                cands.clear();
                let mut next_seen = 0;
                for i in 0..n_items {
                    if next_seen < seen.len() && seen[next_seen] == i {
                        next_seen += 1;
                        continue;
                    }
                    cands.push(i);
                }
                top_n_indices(scores, cands, n)
            },
        )
        .collect();
    Ok(RankedList { cutoff: n, lists })
}

/// AP@k with denominator `min(k, |gt|)`; `gt` must be sorted.
pub fn average_precision(recs: &[usize], gt: &[usize], k: usize) -> f64 {
    if gt.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, item) in recs.iter().take(k).enumerate() {
        if gt.binary_search(item).is_ok() {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    sum / k.min(gt.len()) as f64
}

pub fn recall(recs: &[usize], gt: &[usize], k: usize) -> f64 {
    if gt.is_empty() {
        return 0.0;
    }
    let hits = recs
        .iter()
        .take(k)
        .filter(|i| gt.binary_search(i).is_ok())
        .count();
    hits as f64 / gt.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "MAP")]
    Map,
    #[serde(rename = "Recall")]
    Recall,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Map => "MAP",
            Metric::Recall => "Recall",
        }
    }
}

/// Metric value for every user with non-empty ground truth.
pub fn per_user_metric(
    recs: &RankedList,
    ground_truth: &InteractionMatrix,
    metric: Metric,
    k: usize,
) -> Result<Vec<(usize, f64)>> {
    if k == 0 || k > recs.cutoff {
        return Err(Error::invalid(format!(
            "metric cutoff {k} must be in 1..={}",
            recs.cutoff
        )));
    }
    if recs.n_users() != ground_truth.n_users() {
        return Err(Error::invalid(
            "recommendations and ground truth disagree on user count",
        ));
    }
    let values: Vec<(usize, f64)> = (0..recs.n_users())
        .filter(|&u| ground_truth.row_len(u) > 0)
        .map(|u| {
            let gt = ground_truth.row_items(u);
            let v = match metric {
                Metric::Map => average_precision(recs.user(u), gt, k),
                Metric::Recall => recall(recs.user(u), gt, k),
            };
            (u, v)
        })
        .collect();
    if values.is_empty() {
        return Err(Error::UndefinedMetric("no user has ground-truth items".into()));
    }
    Ok(values)
}

fn mean_of(values: &[(usize, f64)]) -> f64 {
    values.iter().map(|&(_, v)| v).sum::<f64>() / values.len() as f64
}

pub fn map_at_k(recs: &RankedList, ground_truth: &InteractionMatrix, k: usize) -> Result<f64> {
    Ok(mean_of(&per_user_metric(recs, ground_truth, Metric::Map, k)?))
}

pub fn recall_at_k(recs: &RankedList, ground_truth: &InteractionMatrix, k: usize) -> Result<f64> {
    Ok(mean_of(&per_user_metric(recs, ground_truth, Metric::Recall, k)?))
}

/// Mean metrics keyed by `(metric, cutoff)`, with the per-user values kept
/// for significance testing.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub values: BTreeMap<(Metric, usize), f64>,
    pub per_user: BTreeMap<(Metric, usize), Vec<(usize, f64)>>,
}

impl EvalReport {
    pub fn get(&self, metric: Metric, cutoff: usize) -> Option<f64> {
        self.values.get(&(metric, cutoff)).copied()
    }
}

pub fn evaluate(
    recs: &RankedList,
    ground_truth: &InteractionMatrix,
    cutoffs: &[usize],
) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for &k in cutoffs {
        for metric in [Metric::Map, Metric::Recall] {
            let per_user = per_user_metric(recs, ground_truth, metric, k)?;
            report.values.insert((metric, k), mean_of(&per_user));
            report.per_user.insert((metric, k), per_user);
        }
    }
    Ok(report)
}

/// Items with at least one train interaction, most popular first (ties by
/// ascending id), with their counts.
pub fn popularity_order(train: &InteractionMatrix) -> Vec<(usize, usize)> {
    let mut order: Vec<(usize, usize)> = train
        .item_counts()
        .into_iter()
        .enumerate()
        .filter(|&(_, c)| c > 0)
        .collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    order
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LongTail {
    /// Most popular items, minimal prefix covering `1 - tail_fraction` of
    /// the train interactions.
    pub head: Vec<usize>,
    /// Remaining items with train interactions, sorted by id.
    pub tail: Vec<usize>,
}

impl LongTail {
    /// Restricts a ground-truth matrix to long-tail items.
    pub fn filter(&self, ground_truth: &InteractionMatrix) -> InteractionMatrix {
        let mut keep = vec![false; ground_truth.n_items()];
        for &i in &self.tail {
            keep[i] = true;
        }
        let kept: Vec<Interaction> = ground_truth.iter().filter(|it| keep[it.item]).collect();
        InteractionMatrix::from_interactions(ground_truth.n_users(), ground_truth.n_items(), &kept)
            .expect("filtered entries stay in range")
    }
}

pub fn longtail_items(train: &InteractionMatrix, tail_fraction: f64) -> Result<LongTail> {
    if !(tail_fraction > 0.0 && tail_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "tail fraction must be in (0, 1), got {tail_fraction}"
        )));
    }
    let order = popularity_order(train);
    let total: usize = order.iter().map(|&(_, c)| c).sum();
    let head_share = 1.0 - tail_fraction;
    let mut head = Vec::new();
    let mut tail = Vec::new();
    let mut cum = 0usize;
    for &(item, count) in &order {
        if (cum as f64 / total as f64) < head_share - SHARE_EPS {
            head.push(item);
        } else {
            tail.push(item);
        }
        cum += count;
    }
    head.sort_unstable();
    tail.sort_unstable();
    Ok(LongTail { head, tail })
}

pub const DEFAULT_BIN_THRESHOLDS: [f64; 7] = [1.0, 0.66, 0.4, 0.3, 0.2, 0.1, 0.0];

/// Items grouped by cumulative popularity share; bin 1 is the short head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopularityBins {
    pub thresholds: Vec<f64>,
    /// 1-based bin of every item; `None` for items absent from train.
    pub assignment: Vec<Option<usize>>,
}

impl PopularityBins {
    pub fn n_bins(&self) -> usize {
        self.thresholds.len() - 1
    }

    pub fn bin(&self, item: usize) -> Option<usize> {
        self.assignment[item]
    }

    pub fn items_in(&self, bin: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == Some(bin))
            .collect()
    }
}

/// Bin `b` holds the items that follow bin `b - 1` in popularity order, up to
/// the minimal prefix whose cumulative share reaches `1 - thresholds[b]`.
pub fn popularity_bins(train: &InteractionMatrix, thresholds: &[f64]) -> Result<PopularityBins> {
    let well_formed = thresholds.len() >= 2
        && thresholds[0] == 1.0
        && *thresholds.last().unwrap() == 0.0
        && thresholds.windows(2).all(|w| w[0] > w[1]);
    if !well_formed {
        return Err(Error::invalid(format!(
            "bin thresholds must descend strictly from 1 to 0, got {thresholds:?}"
        )));
    }
    let order = popularity_order(train);
    let total: usize = order.iter().map(|&(_, c)| c).sum();
    let mut assignment = vec![None; train.n_items()];
    let mut cum = 0usize;
    let mut bin = 1;
    for &(item, count) in &order {
        let share_before = cum as f64 / total as f64;
        while bin < thresholds.len() - 1 && share_before >= (1.0 - thresholds[bin]) - SHARE_EPS {
            bin += 1;
        }
        assignment[item] = Some(bin);
        cum += count;
    }
    Ok(PopularityBins {
        thresholds: thresholds.to_vec(),
        assignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(rows: &[Vec<f64>]) -> ScoreTable {
        ScoreTable(DenseMatrix::from_rows(rows))
    }

    fn gt(n_users: usize, n_items: usize, pairs: &[(usize, usize)]) -> InteractionMatrix {
        let its: Vec<_> = pairs.iter().map(|&(u, i)| Interaction::new(u, i, 1.0)).collect();
        InteractionMatrix::from_interactions(n_users, n_items, &its).unwrap()
    }

    fn with_counts(counts: &[usize]) -> InteractionMatrix {
        let users = *counts.iter().max().unwrap();
        let mut pairs = Vec::new();
        for (i, &c) in counts.iter().enumerate() {
            for u in 0..c {
                pairs.push((u, i));
            }
        }
        gt(users, counts.len(), &pairs)
    }

    #[test]
    fn topn_sorting_masking_and_ties() {
        let model = table(&[vec![0.9, 0.1, 0.5]]);
        let empty = InteractionMatrix::empty(1, 3);
        assert_eq!(recommend_topn(&model, &empty, 2).unwrap().lists[0], vec![0, 2]);
        let train = gt(1, 3, &[(0, 0)]);
        assert_eq!(recommend_topn(&model, &train, 2).unwrap().lists[0], vec![2, 1]);
        let flat = table(&[vec![0.3; 5]]);
        assert_eq!(
            recommend_topn(&flat, &empty_of(5), 5).unwrap().lists[0],
            vec![0, 1, 2, 3, 4]
        );
    }

    fn empty_of(n_items: usize) -> InteractionMatrix {
        InteractionMatrix::empty(1, n_items)
    }

    #[test]
    fn map_examples() {
        let recs = RankedList {
            cutoff: 3,
            lists: vec![vec![0, 1, 2]],
        };
        assert_eq!(
            map_at_k(&recs, &gt(1, 4, &[(0, 0), (0, 1), (0, 2)]), 3).unwrap(),
            1.0
        );
        assert_eq!(map_at_k(&recs, &gt(1, 4, &[(0, 3)]), 3).unwrap(), 0.0);
        let v = map_at_k(&recs, &gt(1, 4, &[(0, 0), (0, 2)]), 3).unwrap();
        assert!((v - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn recall_examples() {
        let recs = RankedList {
            cutoff: 3,
            lists: vec![vec![0, 1, 2]],
        };
        assert_eq!(recall_at_k(&recs, &gt(1, 4, &[(0, 0), (0, 3)]), 3).unwrap(), 0.5);
        assert_eq!(recall_at_k(&recs, &gt(1, 4, &[(0, 1), (0, 2)]), 3).unwrap(), 1.0);
    }

    #[test]
    fn metric_errors_and_exclusions() {
        let recs = RankedList {
            cutoff: 3,
            lists: vec![vec![0, 1, 2], vec![2, 1, 0]],
        };
        assert!(matches!(
            map_at_k(&recs, &InteractionMatrix::empty(2, 4), 3),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(map_at_k(&recs, &gt(2, 4, &[(0, 0)]), 4).is_err());
        // user 1 has no ground truth and is excluded rather than counted as 0
        assert_eq!(map_at_k(&recs, &gt(2, 4, &[(0, 0)]), 3).unwrap(), 1.0);
    }

    #[test]
    fn map_is_one_only_when_gt_on_top() {
        let good = RankedList {
            cutoff: 4,
            lists: vec![vec![3, 1, 0, 2]],
        };
        let truth = gt(1, 4, &[(0, 1), (0, 3)]);
        assert_eq!(map_at_k(&good, &truth, 4).unwrap(), 1.0);
        let bad = RankedList {
            cutoff: 4,
            lists: vec![vec![3, 0, 1, 2]],
        };
        assert!(map_at_k(&bad, &truth, 4).unwrap() < 1.0);
    }

    #[test]
    fn longtail_prefix_rule() {
        let lt = longtail_items(&with_counts(&[10, 5, 3, 2]), 0.66).unwrap();
        assert_eq!(lt.head, vec![0]);
        assert_eq!(lt.tail, vec![1, 2, 3]);
        let single = longtail_items(&with_counts(&[4]), 0.66).unwrap();
        assert_eq!(single.head, vec![0]);
        assert!(single.tail.is_empty());
        let uniform = longtail_items(&with_counts(&[3; 100]), 0.66).unwrap();
        assert_eq!(uniform.tail.len(), 66);
        assert!(longtail_items(&with_counts(&[1]), 1.0).is_err());
    }

    #[test]
    fn longtail_filter_keeps_tail_only() {
        let train = with_counts(&[10, 5, 3, 2]);
        let lt = longtail_items(&train, 0.66).unwrap();
        let test = gt(10, 4, &[(0, 0), (0, 1), (1, 3)]);
        let f = lt.filter(&test);
        assert_eq!(
            f.to_interactions().iter().map(|i| i.item).collect::<Vec<_>>(),
            vec![1, 3]
        );
    }

    #[test]
    fn bins_one_item_each() {
        let bins = popularity_bins(&with_counts(&[34, 26, 10, 10, 10, 10]), &DEFAULT_BIN_THRESHOLDS).unwrap();
        for item in 0..6 {
            assert_eq!(bins.bin(item), Some(item + 1));
        }
    }

    #[test]
    fn bins_single_dominant_item() {
        let bins = popularity_bins(&with_counts(&[5, 0, 0]), &DEFAULT_BIN_THRESHOLDS).unwrap();
        assert_eq!(bins.assignment, vec![Some(1), None, None]);
    }

    #[test]
    fn bins_bad_thresholds() {
        let m = with_counts(&[1, 2]);
        assert!(popularity_bins(&m, &[1.0, 0.5, 0.6, 0.0]).is_err());
        assert!(popularity_bins(&m, &[0.9, 0.0]).is_err());
        assert!(popularity_bins(&m, &[1.0]).is_err());
    }

    #[test]
    fn bin_one_matches_short_head() {
        let m = with_counts(&[10, 5, 3, 2]);
        let bins = popularity_bins(&m, &DEFAULT_BIN_THRESHOLDS).unwrap();
        let lt = longtail_items(&m, 0.66).unwrap();
        assert_eq!(bins.items_in(1), lt.head);
    }

    proptest! {
        #[test]
        fn bins_partition_items(counts in proptest::collection::vec(0usize..40, 1..60)) {
            prop_assume!(counts.iter().any(|&c| c > 0));
            let m = with_counts(&counts);
            let bins = popularity_bins(&m, &DEFAULT_BIN_THRESHOLDS).unwrap();
            let order = popularity_order(&m);
            let mut last = 1;
            for &(item, _) in &order {
                let b = bins.bin(item).expect("popular item has a bin");
                prop_assert!((1..=6).contains(&b));
                prop_assert!(b >= last, "bins follow popularity order");
                last = b;
            }
            for (i, &c) in counts.iter().enumerate() {
                prop_assert_eq!(bins.bin(i).is_some(), c > 0);
            }
            let total: usize = counts.iter().sum();
            let head: usize = bins.items_in(1).iter().map(|&i| counts[i]).sum();
            prop_assert!(head as f64 / total as f64 >= 0.34 - 1e-9);
            let lt = longtail_items(&m, 0.66).unwrap();
            prop_assert_eq!(bins.items_in(1), lt.head.clone());
            let mut all: Vec<usize> = lt.head.iter().chain(&lt.tail).copied().collect();
            all.sort_unstable();
            let expected: Vec<usize> = (0..counts.len()).filter(|&i| counts[i] > 0).collect();
            prop_assert_eq!(all, expected);
        }

        #[test]
        fn topn_never_recommends_train_items(
            scores in proptest::collection::vec(-5.0f64..5.0, 24),
            mask in proptest::collection::vec(any::<bool>(), 24),
            n in 1usize..8,
        ) {
            let model = ScoreTable(DenseMatrix::from_vec(2, 12, scores));
            let pairs: Vec<_> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(k, _)| (k / 12, k % 12)).collect();
            let train = gt(2, 12, &pairs);
            let recs = recommend_topn(&model, &train, n).unwrap();
            for u in 0..2 {
                let list = recs.user(u);
                prop_assert!(list.len() <= n);
                for &i in list {
                    prop_assert!(!train.contains(u, i));
                }
                let mut dedup = list.to_vec();
                dedup.sort_unstable();
                dedup.dedup();
                prop_assert_eq!(dedup.len(), list.len());
            }
        }
    }
}
