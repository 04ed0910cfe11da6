//! Classification metrics, fold averaging and relative improvement.

mod report;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Float;

pub use report::{format_params, improvement_rows, render_report, ImprovementRow, RenderedReport, ReportInput, ReportMode};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("k = {k} is outside 1..={classes}")]
    InvalidK { k: usize, classes: usize },
    #[error("no samples to score")]
    EmptyInput,
    #[error("invalid prediction set: {0}")]
    InvalidPrediction(String),
    #[error("relative improvement is undefined for a zero baseline")]
    ZeroBaseline,
    #[error("unpaired reports: {0}")]
    UnpairedReports(String),
    #[error("invalid report: {0}")]
    InvalidReport(String),
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// True labels plus, per sample, every class ranked by descending score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionSet {
    true_labels: Vec<usize>,
    ranked: Vec<Vec<usize>>,
    num_classes: usize,
}

impl PredictionSet {
    pub fn new(true_labels: Vec<usize>, ranked: Vec<Vec<usize>>) -> Result<Self, MetricsError> {
        if true_labels.len() != ranked.len() {
            return Err(MetricsError::InvalidPrediction(format!(
                "{} labels for {} rankings",
                true_labels.len(),
                ranked.len()
            )));
        }
        let k = ranked.first().map_or(0, Vec::len);
        let mut seen = vec![false; k];
        for (i, (r, &y)) in ranked.iter().zip(&true_labels).enumerate() {
            if r.len() != k {
                return Err(MetricsError::InvalidPrediction(format!("ranking {i} has {} classes, expected {k}", r.len())));
            }
            seen.fill(false);
            for &c in r {
                if c >= k || std::mem::replace(&mut seen[c], true) {
                    return Err(MetricsError::InvalidPrediction(format!("ranking {i} is not a permutation of 0..{k}")));
                }
            }
            if y >= k {
                return Err(MetricsError::InvalidPrediction(format!("label {y} of sample {i} exceeds {k} classes")));
            }
        }
        Ok(Self { true_labels, ranked, num_classes: k })
    }

    /// Ranks classes by descending score; ties keep the lower class first.
    pub fn from_scores(true_labels: Vec<usize>, scores: &[Vec<Float>]) -> Result<Self, MetricsError> {
        let ranked = scores
            .iter()
            .map(|row| {
                let mut idx: Vec<usize> = (0..row.len()).collect();
                idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
                idx
            })
            .collect();
        Self::new(true_labels, ranked)
    }

    pub fn len(&self) -> usize {
        self.true_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.true_labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn true_labels(&self) -> &[usize] {
        &self.true_labels
    }

    pub fn ranked(&self) -> &[Vec<usize>] {
        &self.ranked
    }

    pub fn top1(&self) -> impl Iterator<Item = usize> + '_ {
        self.ranked.iter().map(|r| r[0])
    }
}

/// Fraction of samples whose label is among the first `k` ranked classes.
pub fn top_k_accuracy(p: &PredictionSet, k: usize) -> Result<f64, MetricsError> {
    if k == 0 || k > p.num_classes {
        return Err(MetricsError::InvalidK { k, classes: p.num_classes });
    }
    if p.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let hits = p.ranked.iter().zip(&p.true_labels).filter(|(r, y)| r[..k].contains(y)).count();
    Ok(hits as f64 / p.len() as f64)
}

/// Support-weighted precision, recall and F1 of the rank-1 predictions.
/// Classes never predicted score precision 0; a class with `p + r = 0`
/// scores F1 0.
pub fn weighted_prf(p: &PredictionSet) -> Result<(f64, f64, f64), MetricsError> {
    if p.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let k = p.num_classes;
    let mut tp = vec![0usize; k];
    let mut support = vec![0usize; k];
    let mut predicted = vec![0usize; k];
    for (y, yhat) in p.true_labels.iter().zip(p.top1()) {
        support[*y] += 1;
        predicted[yhat] += 1;
        if *y == yhat {
            tp[yhat] += 1;
        }
    }
    let n = p.len() as f64;
    let (mut prec, mut f1) = (0.0, 0.0);
    for c in 0..k {
        if support[c] == 0 {
            continue;
        }
        let w = support[c] as f64;
        let pc = if predicted[c] == 0 { 0.0 } else { tp[c] as f64 / predicted[c] as f64 };
        let rc = tp[c] as f64 / support[c] as f64;
        let fc = if pc + rc == 0.0 { 0.0 } else { 2.0 * pc * rc / (pc + rc) };
        prec += w * pc;
        f1 += w * fc;
    }
    // support weighting cancels: Σ s_c (tp_c/s_c) / N = Σ tp_c / N
    let recall = tp.iter().sum::<usize>() as f64 / n;
    Ok((prec / n, recall, f1 / n))
}

/// The five scores of one fold (or their fold means).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FoldScores {
    pub top1: f64,
    pub top5: f64,
    pub precision_w: f64,
    pub recall_w: f64,
    pub f1_w: f64,
}

impl FoldScores {
    pub const NAMES: [&'static str; 5] = ["top1", "top5", "precision_w", "recall_w", "f1_w"];

    /// Scores a prediction set; top-5 falls back to top-K when K < 5.
    pub fn from_predictions(p: &PredictionSet) -> Result<Self, MetricsError> {
        let (precision_w, recall_w, f1_w) = weighted_prf(p)?;
        Ok(Self {
            top1: top_k_accuracy(p, 1)?,
            top5: top_k_accuracy(p, 5.min(p.num_classes()))?,
            precision_w,
            recall_w,
            f1_w,
        })
    }

    pub fn values(&self) -> [f64; 5] {
        [self.top1, self.top5, self.precision_w, self.recall_w, self.f1_w]
    }

    pub fn from_values(v: [f64; 5]) -> Self {
        Self { top1: v[0], top5: v[1], precision_w: v[2], recall_w: v[3], f1_w: v[4] }
    }

    pub fn mean(folds: &[FoldScores]) -> Self {
        let mut acc = [0.0; 5];
        for f in folds {
            acc.iter_mut().zip(f.values()).for_each(|(a, v)| *a += v);
        }
        let n = folds.len().max(1) as f64;
        Self::from_values(acc.map(|a| a / n))
    }
}

/// Per-fold scores of one cross-validated run, with their means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub params: usize,
    pub total_samples: usize,
    pub folds: usize,
    pub epochs: usize,
    pub per_fold: Vec<FoldScores>,
    pub averages: FoldScores,
}

impl MetricReport {
    pub fn new(
        method: impl Into<String>,
        params: usize,
        total_samples: usize,
        epochs: usize,
        per_fold: Vec<FoldScores>,
    ) -> Self {
        let averages = FoldScores::mean(&per_fold);
        Self { method: method.into(), params, total_samples, folds: per_fold.len(), epochs, per_fold, averages }
    }

    /// A report that carries only averages (e.g. a published table row).
    pub fn from_averages(
        method: impl Into<String>,
        params: usize,
        total_samples: usize,
        folds: usize,
        epochs: usize,
        averages: FoldScores,
    ) -> Self {
        Self { method: method.into(), params, total_samples, folds, epochs, per_fold: Vec::new(), averages }
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        let all = self.per_fold.iter().chain(std::iter::once(&self.averages));
        for s in all {
            if s.values().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(MetricsError::InvalidReport(format!("{}: score outside [0, 1]", self.method)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, MetricsError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, MetricsError> {
        let r: Self = serde_json::from_str(s)?;
        r.validate()?;
        Ok(r)
    }

    /// Wide per-fold CSV: one row per fold, then a `mean` row.
    pub fn per_fold_csv(&self) -> Result<String, MetricsError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["fold"];
        header.extend(FoldScores::NAMES);
        w.write_record(&header)?;
        let rows = self.per_fold.iter().enumerate().map(|(i, s)| (i.to_string(), s));
        for (label, s) in rows.chain(std::iter::once(("mean".to_string(), &self.averages))) {
            let mut rec = vec![label];
            rec.extend(s.values().iter().map(|v| format!("{v:.4}")));
            w.write_record(&rec)?;
        }
        csv_string(w)
    }

    /// Long-format per-fold CSV: `method,fold,metric,value`.
    pub fn long_csv(&self) -> Result<String, MetricsError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "fold", "metric", "value"])?;
        for (i, s) in self.per_fold.iter().enumerate() {
            for (name, v) in FoldScores::NAMES.iter().zip(s.values()) {
                w.write_record([self.method.as_str(), &i.to_string(), name, &format!("{v:.6}")])?;
            }
        }
        csv_string(w)
    }
}

pub(crate) fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String, MetricsError> {
    let bytes = w.into_inner().map_err(|e| MetricsError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// `(score_aug - score_orig) / score_orig × 100`.
pub fn relative_improvement(score_orig: f64, score_aug: f64) -> Result<f64, MetricsError> {
    if score_orig == 0.0 || !score_orig.is_finite() {
        return Err(MetricsError::ZeroBaseline);
    }
    Ok((score_aug - score_orig) / score_orig * 100.0)
}

/// Truncates toward zero at one decimal. Values within 1e-9 of a tenth are
/// snapped first so that e.g. 57.2 stored as 57.19999… still reads 57.2.
pub fn truncate_1dp(v: f64) -> f64 {
    let scaled = v * 10.0;
    let snapped = scaled.round();
    let t = if (scaled - snapped).abs() < 1e-9 { snapped } else { scaled.trunc() };
    t / 10.0 + 0.0
}
