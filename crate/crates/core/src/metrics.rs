//! Top-n relevance and negativity metrics.
//!
//! Recommended items that are absent from the holdout are ignored: they are
//! neither hits nor false positives. Ratings above the threshold are
//! positive; the rest are negative.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One user's withheld ratings.
#[derive(Debug, Clone, PartialEq)]
pub struct Holdout {
    items: HashMap<usize, f64>,
    threshold: f64,
}

impl Holdout {
    pub fn new(items: impl IntoIterator<Item = (usize, f64)>, threshold: f64) -> Result<Self> {
        let mut map = HashMap::new();
        for (item, value) in items {
            if map.insert(item, value).is_some() {
                return Err(Error::InvalidInput(format!("item {item} appears twice in holdout")));
            }
        }
        Ok(Self {
            items: map,
            threshold,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn rating(&self, item: usize) -> Option<f64> {
        self.items.get(&item).copied()
    }

    pub fn is_positive(&self, value: f64) -> bool {
        value > self.threshold
    }

    fn positives_desc(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.items.values().copied().filter(|&r| self.is_positive(r)).collect();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }

    fn negatives_asc(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.items.values().copied().filter(|&r| !self.is_positive(r)).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    fn n_positive(&self) -> usize {
        self.items.values().filter(|&&r| self.is_positive(r)).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn fpr(&self) -> Option<f64> {
        ratio(self.fp, self.fp + self.tn)
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Confusion counts of a (deduplicated) recommendation list.
pub fn confusion(rec: &[usize], holdout: &Holdout) -> Confusion {
    let mut c = Confusion::default();
    for &item in rec {
        match holdout.rating(item) {
            Some(r) if holdout.is_positive(r) => c.tp += 1,
            Some(_) => c.fp += 1,
            None => {}
        }
    }
    let positives = holdout.n_positive();
    c.fn_ = positives - c.tp;
    c.tn = holdout.len() - positives - c.fp;
    c
}

/// `fp / (fp + tn)`, 0 when there are no negatives.
pub fn fpr(c: &Confusion) -> f64 {
    c.fpr().unwrap_or(0.0)
}

pub fn precision(c: &Confusion) -> f64 {
    c.precision().unwrap_or(0.0)
}

pub fn recall(c: &Confusion) -> f64 {
    c.recall().unwrap_or(0.0)
}

fn gain(r: f64, rank: usize) -> f64 {
    (r.exp2() - 1.0) / ((rank + 1) as f64).log2()
}

fn loss(r: f64, rank: usize) -> f64 {
    (1.0 - (-r).exp2()) / ((rank + 1) as f64).log2()
}

/// Discounted gain of matched positives; ranks are 1-based.
pub fn dcg(rec: &[usize], holdout: &Holdout) -> f64 {
    rec.iter()
        .enumerate()
        .filter_map(|(p, &item)| holdout.rating(item).filter(|&r| holdout.is_positive(r)).map(|r| gain(r, p + 1)))
        .sum()
}

/// Discounted loss of matched negatives; ranks are 1-based.
pub fn dcl(rec: &[usize], holdout: &Holdout) -> f64 {
    rec.iter()
        .enumerate()
        .filter_map(|(p, &item)| holdout.rating(item).filter(|&r| !holdout.is_positive(r)).map(|r| loss(r, p + 1)))
        .sum()
}

/// Gain of all holdout positives placed best-first at ranks 1, 2, ….
pub fn ideal_dcg(holdout: &Holdout) -> f64 {
    holdout
        .positives_desc()
        .iter()
        .enumerate()
        .map(|(i, &r)| gain(r, i + 1))
        .sum()
}

/// Loss of the holdout negatives pushed to the bottom of an `n`-long
/// window, the lowest rating at rank `n`. Negatives that do not fit are
/// left out.
pub fn ideal_dcl(holdout: &Holdout, n: usize) -> f64 {
    let negatives = holdout.negatives_asc();
    let fit = negatives.len().min(n);
    // rank n - fit + 1 + s holds the (fit - 1 - s)-th lowest rating
    (0..fit).map(|s| loss(negatives[fit - 1 - s], n - fit + 1 + s)).sum()
}

/// nDCG over the first `n` positions of `rec`; 0 without positives.
pub fn ndcg(rec: &[usize], holdout: &Holdout, n: usize) -> f64 {
    ndcg_checked(rec, holdout, n).unwrap_or(0.0)
}

/// nDCL over the first `n` positions of `rec`; 0 without negatives.
pub fn ndcl(rec: &[usize], holdout: &Holdout, n: usize) -> f64 {
    ndcl_checked(rec, holdout, n).unwrap_or(0.0)
}

fn ndcg_checked(rec: &[usize], holdout: &Holdout, n: usize) -> Option<f64> {
    let ideal = ideal_dcg(holdout);
    (ideal > 0.0).then(|| dcg(window(rec, n), holdout) / ideal)
}

fn ndcl_checked(rec: &[usize], holdout: &Holdout, n: usize) -> Option<f64> {
    let ideal = ideal_dcl(holdout, n);
    (ideal > 0.0).then(|| dcl(window(rec, n), holdout) / ideal)
}

fn window(rec: &[usize], n: usize) -> &[usize] {
    &rec[..n.min(rec.len())]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Precision,
    Recall,
    Fpr,
    Ndcg,
    Ndcl,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Precision,
        Metric::Recall,
        Metric::Fpr,
        Metric::Ndcg,
        Metric::Ndcl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Precision => "precision",
            Self::Recall => "recall",
            Self::Fpr => "fpr",
            Self::Ndcg => "ndcg",
            Self::Ndcl => "ndcl",
        }
    }
}

/// Metric values of one user at one cutoff; `None` where the denominator
/// is zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricValues(pub [Option<f64>; 5]);

impl MetricValues {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        self.0[metric as usize]
    }

    /// Value as reported for a single user (undefined → 0).
    pub fn reported(&self, metric: Metric) -> f64 {
        self.get(metric).unwrap_or(0.0)
    }
}

/// All metrics at one cutoff `n`, using the first `n` items of `rec`.
pub fn evaluate_at(rec: &[usize], holdout: &Holdout, n: usize) -> MetricValues {
    let c = confusion(window(rec, n), holdout);
    MetricValues([
        c.precision(),
        c.recall(),
        c.fpr(),
        ndcg_checked(rec, holdout, n),
        ndcl_checked(rec, holdout, n),
    ])
}

/// Metrics at every cutoff `1..=max_n` from a single ranked list.
pub fn evaluate_user(rec: &[usize], holdout: &Holdout, max_n: usize) -> Vec<MetricValues> {
    let n_pos = holdout.n_positive();
    let n_neg = holdout.len() - n_pos;
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut gained, mut lost) = (0.0, 0.0);
    let ideal_gain = ideal_dcg(holdout);
    let mut out = Vec::with_capacity(max_n);
    for n in 1..=max_n {
        if let Some(&item) = rec.get(n - 1) {
            if let Some(r) = holdout.rating(item) {
                if holdout.is_positive(r) {
                    tp += 1;
                    gained += gain(r, n);
                } else {
                    fp += 1;
                    lost += loss(r, n);
                }
            }
        }
        let ideal_loss = ideal_dcl(holdout, n);
        let c = Confusion {
            tp,
            fp,
            tn: n_neg - fp,
            fn_: n_pos - tp,
        };
        out.push(MetricValues([
            c.precision(),
            c.recall(),
            c.fpr(),
            (ideal_gain > 0.0).then(|| gained / ideal_gain),
            (ideal_loss > 0.0).then(|| lost / ideal_loss),
        ]));
    }
    out
}

/// Mean and spread of each metric at each cutoff across folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCurves {
    pub max_n: usize,
    /// `fold_means[fold][metric][n-1]`
    pub fold_means: Vec<[Vec<f64>; 5]>,
    /// `mean[metric][n-1]`
    pub mean: [Vec<f64>; 5],
    /// population standard deviation across folds
    pub std: [Vec<f64>; 5],
    /// users that contributed at least one defined value, per fold
    pub users: Vec<usize>,
}

impl MetricCurves {
    pub fn mean_at(&self, metric: Metric, n: usize) -> f64 {
        self.mean[metric as usize][n - 1]
    }

    pub fn std_at(&self, metric: Metric, n: usize) -> f64 {
        self.std[metric as usize][n - 1]
    }
}

/// Average per-user values within each fold (users where a metric is
/// undefined are left out of that metric), then mean and population
/// standard deviation across folds. A fold where nobody defines a metric
/// is left out of that metric's fold statistics.
///
/// `folds[fold][user]` holds one `MetricValues` per cutoff.
pub fn aggregate_curves(folds: &[Vec<Vec<MetricValues>>]) -> Result<MetricCurves> {
    if folds.is_empty() || folds.iter().all(|f| f.is_empty()) {
        return Err(Error::InvalidInput("no users to aggregate".into()));
    }
    let max_n = folds
        .iter()
        .flatten()
        .map(Vec::len)
        .next()
        .unwrap_or(0);
    if folds.iter().flatten().any(|u| u.len() != max_n) {
        return Err(Error::DimensionMismatch("users evaluated at different cutoffs".into()));
    }
    let mut fold_means = Vec::with_capacity(folds.len());
    let mut defined: Vec<[Vec<bool>; 5]> = Vec::with_capacity(folds.len());
    for users in folds {
        let mut means: [Vec<f64>; 5] = Default::default();
        let mut present: [Vec<bool>; 5] = Default::default();
        for m in Metric::ALL {
            for n in 0..max_n {
                let (sum, count) = users
                    .iter()
                    .filter_map(|u| u[n].get(m))
                    .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
                means[m as usize].push(if count > 0 { sum / count as f64 } else { 0.0 });
                present[m as usize].push(count > 0);
            }
        }
        fold_means.push(means);
        defined.push(present);
    }
    let mut mean: [Vec<f64>; 5] = Default::default();
    let mut std: [Vec<f64>; 5] = Default::default();
    for m in Metric::ALL {
        let k = m as usize;
        for n in 0..max_n {
            let values: Vec<f64> = fold_means
                .iter()
                .zip(&defined)
                .filter(|(_, d)| d[k][n])
                .map(|(f, _)| f[k][n])
                .collect();
            let (mu, sigma) = mean_std(&values);
            mean[k].push(mu);
            std[k].push(sigma);
        }
    }
    let users = folds
        .iter()
        .map(|f| f.iter().filter(|u| u.iter().any(|v| v.0.iter().any(Option::is_some))).count())
        .collect();
    Ok(MetricCurves {
        max_n,
        fold_means,
        mean,
        std,
        users,
    })
}

/// Mean and population standard deviation; zeros for an empty slice.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn rmse(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} ratings",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::InvalidInput("rmse of an empty set".into()));
    }
    let sq: f64 = predicted.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum();
    Ok((sq / predicted.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: usize = 0;
    const B: usize = 1;
    const C: usize = 2;
    const X: usize = 9;

    fn holdout(items: &[(usize, f64)]) -> Holdout {
        Holdout::new(items.iter().copied(), 3.0).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn confusion_ignores_unrated() {
        let h = holdout(&[(A, 5.0), (B, 2.0), (C, 4.0)]);
        let c = confusion(&[A, X, B], &h);
        assert_eq!(c, Confusion { tp: 1, fp: 1, tn: 0, fn_: 1 });
        assert_eq!(precision(&c), 0.5);
        assert_eq!(recall(&c), 0.5);

        let c = confusion(&[X, 7, 8], &h);
        assert_eq!((c.tp, c.fp), (0, 0));
        assert_eq!(c.precision(), None);
        assert_eq!(precision(&c), 0.0);
        assert_eq!(recall(&c), 0.0);

        assert_eq!(recall(&confusion(&[C, X, A, 5, 6], &h)), 1.0);
    }

    #[test]
    fn fpr_values() {
        assert_eq!(fpr(&Confusion { tp: 0, fp: 1, tn: 4, fn_: 0 }), 0.2);
        assert_eq!(fpr(&Confusion { tp: 3, fp: 0, tn: 4, fn_: 0 }), 0.0);
        assert_eq!(fpr(&Confusion { tp: 0, fp: 3, tn: 0, fn_: 1 }), 1.0);
    }

    #[test]
    fn dcg_values() {
        assert!(close(dcg(&[A], &holdout(&[(A, 4.0)])), 15.0));
        assert_eq!(dcg(&[B], &holdout(&[(B, 2.0)])), 0.0);
        let h = holdout(&[(A, 5.0)]);
        assert!(close(dcg(&[A], &h), 31.0));
        assert!(close(dcg(&[X, A], &h), 31.0 / 3f64.log2()));
        assert!((dcg(&[X, A], &h) - 19.56).abs() < 0.01);
    }

    #[test]
    fn ndcg_values() {
        let h = holdout(&[(A, 5.0), (C, 4.0), (B, 1.0)]);
        assert!(close(ndcg(&[A, C], &h, 2), 1.0));
        assert_eq!(ndcg(&[B], &holdout(&[(B, 2.0)]), 1), 0.0);
        // one of two positives (5, 4) matched, the 5 at rank 1
        let v = ndcg(&[A, X], &h, 2);
        assert!(close(v, 31.0 / (31.0 + 15.0 / 3f64.log2())));
        assert!((v - 0.766).abs() < 5e-4);
    }

    #[test]
    fn dcl_values() {
        let h = holdout(&[(B, 2.0)]);
        assert!(close(dcl(&[B], &h), 0.75));
        assert!(close(dcl(&[X, 7, B], &h), 0.375));
        assert_eq!(dcl(&[A], &holdout(&[(A, 5.0)])), 0.0);
    }

    #[test]
    fn ndcl_values() {
        let h = holdout(&[(B, 2.0), (C, 1.0), (A, 5.0)]);
        // C (the lowest) at rank 4, B at rank 3
        assert!(close(ndcl(&[A, X, B, C], &h, 4), 1.0));
        let single = holdout(&[(B, 2.0)]);
        let v = ndcl(&[B], &single, 10);
        assert!(close(v, 11f64.log2()));
        assert!((v - 3.459).abs() < 5e-4);
        assert_eq!(ndcl(&[A, X], &h, 2), 0.0);
        assert_eq!(ndcl(&[A], &holdout(&[(A, 5.0)]), 10), 0.0);
    }

    #[test]
    fn incremental_matches_direct() {
        let h = holdout(&[(A, 5.0), (B, 2.0), (C, 4.0), (3, 1.0), (4, 3.0)]);
        let rec = [X, B, A, 3, 8, C, 4];
        let curve = evaluate_user(&rec, &h, 10);
        for n in 1..=10 {
            let direct = evaluate_at(&rec, &h, n);
            for m in Metric::ALL {
                match (curve[n - 1].get(m), direct.get(m)) {
                    (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12, "{m:?}@{n}"),
                    (a, b) => assert_eq!(a, b, "{m:?}@{n}"),
                }
            }
        }
    }

    fn user(values: &[f64]) -> Vec<MetricValues> {
        values.iter().map(|&v| MetricValues([Some(v); 5])).collect()
    }

    #[test]
    fn aggregation() {
        let one = aggregate_curves(&[vec![user(&[0.3, 0.7])]]).unwrap();
        assert_eq!(one.mean[0], vec![0.3, 0.7]);
        assert_eq!(one.std[0], vec![0.0, 0.0]);

        let two = aggregate_curves(&[vec![user(&[0.2])], vec![user(&[0.4])]]).unwrap();
        assert!(close(two.mean_at(Metric::Ndcg, 1), 0.3));
        assert!(close(two.std_at(Metric::Ndcg, 1), 0.1));

        assert!(aggregate_curves(&[]).is_err());
        assert!(aggregate_curves(&[vec![], vec![]]).is_err());
    }

    #[test]
    fn undefined_values_are_excluded() {
        let mut skip = user(&[0.0]);
        skip[0].0[Metric::Ndcl as usize] = None;
        let curves = aggregate_curves(&[vec![user(&[0.5]), skip]]).unwrap();
        assert!(close(curves.mean_at(Metric::Ndcl, 1), 0.5));
        assert!(close(curves.mean_at(Metric::Ndcg, 1), 0.25));
    }

    #[test]
    fn rmse_values() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[4.0, 4.0], &[5.0, 3.0]).unwrap(), 1.0);
        assert!(close(rmse(&[3.0, 3.0], &[5.0, 3.0]).unwrap(), 2f64.sqrt()));
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[]).is_err());
    }
}
