use std::collections::BTreeSet;
use std::str::FromStr;

use crate::autodiff::validate_mask;
use crate::error::{Error, Result};

/// Thresholds scored by [`threshold_sweep`] when no grid is given.
pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.3, 0.5, 0.7];
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Counts over scored (`mask != 0`) entries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl Confusion {
    pub fn n_scored(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    fn add(&mut self, other: &Confusion) {
        self.true_pos += other.true_pos;
        self.false_pos += other.false_pos;
        self.false_neg += other.false_neg;
        self.true_neg += other.true_neg;
    }

    fn record(&mut self, predicted: bool, favourable: bool) {
        match (predicted, favourable) {
            (true, true) => self.true_pos += 1,
            (true, false) => self.false_pos += 1,
            (false, true) => self.false_neg += 1,
            (false, false) => self.true_neg += 1,
        }
    }
}

/// How per-entry outcomes become a single score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Averaging {
    /// Pool counts over every scored (user, key) entry.
    #[default]
    Micro,
    /// Score each key with at least one scored entry, then take the mean.
    Macro,
}

impl FromStr for Averaging {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "micro" => Ok(Averaging::Micro),
            "macro" => Ok(Averaging::Macro),
            _ => Err(Error::Config(format!("averaging must be micro or macro, got `{s}`"))),
        }
    }
}

/// Precision, recall and F1 with the counts behind them.
///
/// Zero denominators yield 0. Counts are always micro totals; under
/// [`Averaging::Macro`] the three scores are per-key means.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Confusion,
    pub threshold: f64,
}

impl MetricsReport {
    pub fn n_scored(&self) -> u64 {
        self.counts.n_scored()
    }
}

/// `(precision, recall, f1)` from raw counts.
pub fn precision_recall_f1(tp: u64, fp: u64, fn_: u64) -> (f64, f64, f64) {
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f1)
}

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("threshold must lie in (0, 1), got {t}")))
    }
}

/// Confusion counts of `y_hat >= threshold` against the mask's labels,
/// skipping entries with `mask == 0`.
pub fn masked_confusion(y_hat: &[f64], mask: &[i8], threshold: f64) -> Result<Confusion> {
    check_threshold(threshold)?;
    if y_hat.len() != mask.len() {
        return Err(Error::shape("masked_confusion", &[y_hat.len()], &[mask.len()]));
    }
    validate_mask(mask)?;
    let mut c = Confusion::default();
    for (&y, &m) in y_hat.iter().zip(mask) {
        if m != 0 {
            c.record(y >= threshold, m == 1);
        }
    }
    Ok(c)
}

/// Row-major `(N, n_keys)` predictions paired with their mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub n_keys: usize,
    pub y_hat: Vec<f64>,
    pub mask: Vec<i8>,
}

impl Predictions {
    pub fn new(n_keys: usize, y_hat: Vec<f64>, mask: Vec<i8>) -> Result<Self> {
        if n_keys == 0 || y_hat.len() != mask.len() || !y_hat.len().is_multiple_of(n_keys) {
            return Err(Error::shape("predictions", &[y_hat.len(), n_keys], &[mask.len()]));
        }
        validate_mask(&mask)?;
        Ok(Self { n_keys, y_hat, mask })
    }

    pub fn n_users(&self) -> usize {
        self.y_hat.len() / self.n_keys
    }

    /// Per-key confusion counts for the keys in `keys` (all keys if `None`).
    fn per_key(&self, threshold: f64, keys: Option<&BTreeSet<usize>>) -> Vec<(usize, Confusion)> {
        let mut counts = vec![Confusion::default(); self.n_keys];
        for (i, (&y, &m)) in self.y_hat.iter().zip(&self.mask).enumerate() {
            if m != 0 {
                counts[i % self.n_keys].record(y >= threshold, m == 1);
            }
        }
        counts
            .into_iter()
            .enumerate()
            .filter(|(k, _)| keys.is_none_or(|set| set.contains(k)))
            .collect()
    }

    fn report_on(&self, threshold: f64, averaging: Averaging, keys: Option<&BTreeSet<usize>>) -> Result<MetricsReport> {
        check_threshold(threshold)?;
        if let Some(&k) = keys.and_then(|s| s.iter().next_back()) {
            if k >= self.n_keys {
                return Err(Error::InvalidArgument(format!(
                    "key {k} out of range for {} keys",
                    self.n_keys
                )));
            }
        }
        let per_key = self.per_key(threshold, keys);
        let mut counts = Confusion::default();
        per_key.iter().for_each(|(_, c)| counts.add(c));
        let (precision, recall, f1) = match averaging {
            Averaging::Micro => precision_recall_f1(counts.true_pos, counts.false_pos, counts.false_neg),
            Averaging::Macro => {
                let scored: Vec<(f64, f64, f64)> = per_key
                    .iter()
                    .filter(|(_, c)| c.n_scored() > 0)
                    .map(|(_, c)| precision_recall_f1(c.true_pos, c.false_pos, c.false_neg))
                    .collect();
                if scored.is_empty() {
                    (0.0, 0.0, 0.0)
                } else {
                    let n = scored.len() as f64;
                    let sum = scored
                        .iter()
                        .fold((0.0, 0.0, 0.0), |a, s| (a.0 + s.0, a.1 + s.1, a.2 + s.2));
                    (sum.0 / n, sum.1 / n, sum.2 / n)
                }
            }
        };
        Ok(MetricsReport {
            precision,
            recall,
            f1,
            counts,
            threshold,
        })
    }

    pub fn report(&self, threshold: f64, averaging: Averaging) -> Result<MetricsReport> {
        self.report_on(threshold, averaging, None)
    }

    /// Metrics restricted to the columns in `keys`.
    pub fn report_keys(&self, keys: &BTreeSet<usize>, threshold: f64, averaging: Averaging) -> Result<MetricsReport> {
        self.report_on(threshold, averaging, Some(keys))
    }
}

/// One report per threshold, thresholds strictly increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdSweep {
    pub rows: Vec<MetricsReport>,
}

impl ThresholdSweep {
    pub fn thresholds(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.threshold).collect()
    }

    /// `threshold,precision,recall,f1`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,precision,recall,f1\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.threshold, r.precision, r.recall, r.f1));
        }
        s
    }
}

/// Scores `preds` at each threshold. Recall can only fall as the threshold
/// rises; a violation is reported as an invariant error.
pub fn threshold_sweep(preds: &Predictions, thresholds: &[f64], averaging: Averaging) -> Result<ThresholdSweep> {
    if thresholds.is_empty() {
        return Err(Error::InvalidArgument("threshold grid is empty".into()));
    }
    if let Some(w) = thresholds.windows(2).find(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(format!(
            "thresholds must be strictly increasing, got {} then {}",
            w[0], w[1]
        )));
    }
    let rows = thresholds
        .iter()
        .map(|&t| preds.report(t, averaging))
        .collect::<Result<Vec<_>>>()?;
    if let Some(w) = rows.windows(2).find(|w| w[1].recall > w[0].recall) {
        return Err(Error::Invariant {
            invariant: "recall_monotone",
            detail: format!(
                "recall rose from {} at {} to {} at {}",
                w[0].recall, w[0].threshold, w[1].recall, w[1].threshold
            ),
        });
    }
    Ok(ThresholdSweep { rows })
}

/// Metrics on the rare and frequent key buckets.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentReport {
    pub rare: MetricsReport,
    pub frequent: MetricsReport,
    pub rare_keys: BTreeSet<usize>,
    pub frequent_keys: BTreeSet<usize>,
}

impl SegmentReport {
    /// `bucket,precision,recall,f1`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bucket,precision,recall,f1\n");
        for (name, r) in [("rare", &self.rare), ("frequent", &self.frequent)] {
            s.push_str(&format!("{name},{},{},{}\n", r.precision, r.recall, r.f1));
        }
        s
    }
}

pub fn segment_eval(
    preds: &Predictions,
    rare_keys: &BTreeSet<usize>,
    frequent_keys: &BTreeSet<usize>,
    threshold: f64,
    averaging: Averaging,
) -> Result<SegmentReport> {
    if let Some(k) = rare_keys.intersection(frequent_keys).next() {
        return Err(Error::InvalidArgument(format!("key {k} is in both buckets")));
    }
    Ok(SegmentReport {
        rare: preds.report_keys(rare_keys, threshold, averaging)?,
        frequent: preds.report_keys(frequent_keys, threshold, averaging)?,
        rare_keys: rare_keys.clone(),
        frequent_keys: frequent_keys.clone(),
    })
}
