//! Evaluation metrics: Pearson, Spearman, AUROC, NDCG@M and MRR.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Labels at or above this count as positive after the coarse evaluation
/// mapping (relevant classes map to exactly 1).
pub const EVAL_POSITIVE_THRESHOLD: f64 = 1.0 - 1e-9;

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Domain(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Domain(
            "correlation needs at least two points".into(),
        ));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite input".into()));
    }
    Ok(())
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Domain("correlation of a constant input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based fractional ranks; tied values share the mean of their ranks.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation of the fractional ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Area under the ROC curve: the Mann-Whitney statistic divided by
/// `n_pos * n_neg`, with tied pos/neg pairs counted as one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Domain(format!(
            "length mismatch: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Domain("non-finite score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Domain(format!(
            "AUROC needs both classes (got {n_pos} positive, {n_neg} negative)"
        )));
    }
    let ranks = average_ranks(scores);
    let pos_rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub product_id: String,
    pub score: f64,
    pub label: f64,
}

/// The products scored for one query, ordered by (score desc, id asc).
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    items: Vec<RankedItem>,
}

fn rank_order(a: &RankedItem, b: &RankedItem) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or_else(|| b.score.total_cmp(&a.score))
        .then_with(|| a.product_id.cmp(&b.product_id))
}

impl RankedList {
    pub fn new(query_id: impl Into<String>, mut items: Vec<RankedItem>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Domain("ranked list must not be empty".into()));
        }
        items.sort_by(rank_order);
        Ok(Self {
            query_id: query_id.into(),
            items,
        })
    }

    pub fn items(&self) -> &[RankedItem] {
        &self.items
    }
}

fn dcg(gains: impl Iterator<Item = f64>) -> f64 {
    gains
        .enumerate()
        .map(|(i, g)| g / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG@m with linear gains (the label itself) and `1/log2(rank + 1)`
/// discount. Lists with zero ideal DCG score 0.
pub fn ndcg_at(list: &RankedList, m: usize) -> f64 {
    let m = m.max(1);
    let actual = dcg(list.items.iter().take(m).map(|it| it.label));
    let mut ideal: Vec<f64> = list.items.iter().map(|it| it.label).collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let best = dcg(ideal.into_iter().take(m));
    if best > 0.0 {
        actual / best
    } else {
        0.0
    }
}

/// Mean over lists of the reciprocal rank of the first item whose label is
/// at least `positive_threshold` (0 for lists without one).
pub fn mrr(lists: &[RankedList], positive_threshold: f64) -> Result<f64> {
    if lists.is_empty() {
        return Err(Error::Domain("MRR of no queries".into()));
    }
    let total: f64 = lists
        .iter()
        .map(|l| {
            l.items
                .iter()
                .position(|it| it.label >= positive_threshold)
                .map_or(0.0, |i| 1.0 / (i + 1) as f64)
        })
        .sum();
    Ok(total / lists.len() as f64)
}

/// How continuous labels become the binary classes AUROC needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binarization {
    /// Positive iff label >= threshold.
    Threshold(f64),
    /// Positive iff label > median label.
    Median,
}

impl Binarization {
    pub fn apply(&self, labels: &[f64]) -> Vec<bool> {
        let cut = match *self {
            Binarization::Threshold(t) => return labels.iter().map(|&l| l >= t).collect(),
            Binarization::Median => median(labels),
        };
        labels.iter().map(|&l| l > cut).collect()
    }
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub cutoffs: Vec<usize>,
    pub auroc_binarization: Binarization,
    pub mrr_threshold: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            cutoffs: vec![5, 10, 20],
            auroc_binarization: Binarization::Threshold(EVAL_POSITIVE_THRESHOLD),
            mrr_threshold: EVAL_POSITIVE_THRESHOLD,
        }
    }
}

/// A scored evaluation pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub query_id: String,
    pub product_id: String,
    pub score: f64,
    pub label: f64,
}

/// Metric values; a metric whose inputs are degenerate is `None` and its
/// reason is listed in `errors`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auroc: Option<f64>,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub mrr: Option<f64>,
    pub ndcg: BTreeMap<String, f64>,
    pub n_queries: usize,
    pub n_pairs: usize,
    pub errors: BTreeMap<String, String>,
}

/// Groups pairs by query (first-appearance order) into ranked lists.
pub fn group_by_query(pairs: &[ScoredPair]) -> Result<Vec<RankedList>> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<RankedItem>> = BTreeMap::new();
    for p in pairs {
        let entry = groups.entry(&p.query_id).or_insert_with(|| {
            order.push(&p.query_id);
            Vec::new()
        });
        entry.push(RankedItem {
            product_id: p.product_id.clone(),
            score: p.score,
            label: p.label,
        });
    }
    order
        .into_iter()
        .map(|q| RankedList::new(q, groups.remove(q).unwrap_or_default()))
        .collect()
}

/// Computes every metric family over `pairs`. NDCG@M is the mean over queries.
pub fn evaluate(pairs: &[ScoredPair], cfg: &MetricsConfig) -> MetricsReport {
    let scores: Vec<f64> = pairs.iter().map(|p| p.score).collect();
    let labels: Vec<f64> = pairs.iter().map(|p| p.label).collect();
    let mut errors = BTreeMap::new();
    let mut keep = |name: &str, r: Result<f64>| match r {
        Ok(v) => Some(v),
        Err(e) => {
            errors.insert(name.to_string(), e.to_string());
            None
        }
    };
    let auroc_v = keep(
        "auroc",
        auroc(&scores, &cfg.auroc_binarization.apply(&labels)),
    );
    let pearson_v = keep("pearson", pearson(&scores, &labels));
    let spearman_v = keep("spearman", spearman(&scores, &labels));
    let lists = group_by_query(pairs).unwrap_or_default();
    let mrr_v = keep("mrr", mrr(&lists, cfg.mrr_threshold));
    let ndcg = cfg
        .cutoffs
        .iter()
        .map(|&m| {
            let mean = if lists.is_empty() {
                0.0
            } else {
                lists.iter().map(|l| ndcg_at(l, m)).sum::<f64>() / lists.len() as f64
            };
            (m.to_string(), mean)
        })
        .collect();
    MetricsReport {
        auroc: auroc_v,
        pearson: pearson_v,
        spearman: spearman_v,
        mrr: mrr_v,
        ndcg,
        n_queries: lists.len(),
        n_pairs: pairs.len(),
        errors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    fn list(labels: &[f64]) -> RankedList {
        // descending scores in presentation order
        let items = labels
            .iter()
            .enumerate()
            .map(|(i, &label)| RankedItem {
                product_id: format!("p{i}"),
                score: (labels.len() - i) as f64,
                label,
            })
            .collect();
        RankedList::new("q", items).unwrap()
    }

    #[test]
    fn pearson_cases() {
        assert!(close(
            pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(),
            1.0
        ));
        assert!(close(
            pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(),
            -1.0
        ));
        assert!(close(
            pearson(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap(),
            0.6
        ));
        assert!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn spearman_cases() {
        let x = [0.1, 0.5, 2.0, 3.5];
        let y: Vec<f64> = x.iter().map(|v: &f64| v.exp()).collect();
        assert!(close(spearman(&x, &y).unwrap(), 1.0));
        assert!(close(
            spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(),
            -1.0
        ));
        assert!(close(
            spearman(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap(),
            0.5
        ));
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(
            average_ranks(&[10.0, 20.0, 10.0, 30.0]),
            [1.5, 3.0, 1.5, 4.0]
        );
    }

    #[test]
    fn auroc_cases() {
        assert_eq!(
            auroc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap(),
            1.0
        );
        assert_eq!(auroc(&[0.5; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert!(close(
            auroc(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap(),
            0.75
        ));
        assert!(auroc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn ndcg_cases() {
        assert!(close(ndcg_at(&list(&[1.0, 0.5, 0.2, 0.0]), 3), 1.0));
        assert_eq!(ndcg_at(&list(&[0.0, 0.0]), 2), 0.0);
        assert!(close(ndcg_at(&list(&[0.0, 1.0]), 2), 0.6309297535714574));
        // m beyond list length behaves as the full list
        assert!(close(ndcg_at(&list(&[0.0, 1.0]), 20), 0.6309297535714574));
    }

    #[test]
    fn ranked_list_tie_break() {
        let items = vec![
            RankedItem {
                product_id: "b".into(),
                score: 1.0,
                label: 0.0,
            },
            RankedItem {
                product_id: "a".into(),
                score: 1.0,
                label: 1.0,
            },
        ];
        let l = RankedList::new("q", items).unwrap();
        assert_eq!(l.items()[0].product_id, "a");
        assert!(RankedList::new("q", vec![]).is_err());
    }

    #[test]
    fn mrr_cases() {
        assert_eq!(mrr(&[list(&[1.0, 0.0]), list(&[1.0])], 1.0).unwrap(), 1.0);
        assert_eq!(mrr(&[list(&[0.0, 0.1, 0.5, 1.0])], 1.0).unwrap(), 0.25);
        assert_eq!(
            mrr(&[list(&[1.0, 0.0]), list(&[0.0, 1.0])], 1.0).unwrap(),
            0.75
        );
        assert_eq!(mrr(&[list(&[0.0, 0.0])], 1.0).unwrap(), 0.0);
    }

    #[test]
    fn binarization() {
        let labels = [0.1, 1.0, 0.5, 1.0];
        assert_eq!(
            Binarization::Threshold(EVAL_POSITIVE_THRESHOLD).apply(&labels),
            [false, true, false, true]
        );
        assert_eq!(
            Binarization::Median.apply(&[0.0, 0.2, 0.6, 0.9]),
            [false, false, true, true]
        );
    }

    #[test]
    fn evaluate_reports_partial_failure() {
        let pairs: Vec<ScoredPair> = (0..4)
            .map(|i| ScoredPair {
                query_id: format!("q{}", i % 2),
                product_id: format!("p{i}"),
                score: i as f64 / 4.0,
                label: 0.1,
            })
            .collect();
        let rep = evaluate(&pairs, &MetricsConfig::default());
        assert!(rep.auroc.is_none());
        assert!(rep.errors["auroc"].contains("both classes"));
        assert_eq!(rep.ndcg.len(), 3);
        assert_eq!(rep.n_queries, 2);
        assert_eq!(rep.n_pairs, 4);
        assert_eq!(rep.mrr, Some(0.0));
    }
}
