use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{csv_string, relative_improvement, truncate_1dp, FoldScores, MetricReport, MetricsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportMode {
    Results,
    Improvement,
}

#[derive(Debug, Clone)]
pub enum ReportInput {
    Results(Vec<MetricReport>),
    /// Runs on the original and on the augmented dataset, paired by method.
    Improvement { original: Vec<MetricReport>, augmented: Vec<MetricReport> },
}

impl ReportInput {
    pub fn mode(&self) -> ReportMode {
        match self {
            ReportInput::Results(_) => ReportMode::Results,
            ReportInput::Improvement { .. } => ReportMode::Improvement,
        }
    }
}

/// One improvement row: truncated one-decimal percentages per metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementRow {
    pub method: String,
    pub params: usize,
    pub percent: FoldScores,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedReport {
    pub text: String,
    pub csv: String,
    pub improvements: Vec<ImprovementRow>,
}

/// Millions truncated to three decimals: 374,592 reads "0.374 M".
pub fn format_params(n: usize) -> String {
    format!("{}.{:03} M", n / 1_000_000, n % 1_000_000 / 1_000)
}

const HEADERS: [&str; 5] = ["Top-1", "Top-5", "Precision", "Recall", "F1"];

/// Pairs reports by method and computes truncated relative improvements,
/// sorted by the original run's parameter count.
pub fn improvement_rows(
    original: &[MetricReport],
    augmented: &[MetricReport],
) -> Result<Vec<ImprovementRow>, MetricsError> {
    let mut aug: BTreeMap<&str, &MetricReport> = BTreeMap::new();
    for r in augmented {
        if aug.insert(r.method.as_str(), r).is_some() {
            return Err(MetricsError::UnpairedReports(format!("{} appears twice among augmented runs", r.method)));
        }
    }
    let mut rows = Vec::with_capacity(original.len());
    let mut seen = BTreeMap::new();
    for o in original {
        if seen.insert(o.method.as_str(), ()).is_some() {
            return Err(MetricsError::UnpairedReports(format!("{} appears twice among original runs", o.method)));
        }
        let a = aug
            .remove(o.method.as_str())
            .ok_or_else(|| MetricsError::UnpairedReports(format!("{} has no augmented run", o.method)))?;
        let mut pct = [0.0; 5];
        for ((p, so), sa) in pct.iter_mut().zip(o.averages.values()).zip(a.averages.values()) {
            *p = truncate_1dp(relative_improvement(so, sa)?);
        }
        rows.push(ImprovementRow { method: o.method.clone(), params: o.params, percent: FoldScores::from_values(pct) });
    }
    if let Some(extra) = aug.keys().next() {
        return Err(MetricsError::UnpairedReports(format!("{extra} has no original run")));
    }
    rows.sort_by(|a, b| a.params.cmp(&b.params).then_with(|| a.method.cmp(&b.method)));
    Ok(rows)
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = cells
            .zip(&width)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &mut header.iter().copied());
    let _ = writeln!(out, "{}", "-".repeat(width.iter().sum::<usize>() + 2 * (width.len() - 1)));
    for r in rows {
        line(&mut out, &mut r.iter().map(String::as_str));
    }
    out
}

/// Renders a results table (four-decimal fold means) or an improvement table
/// (one-decimal truncated percentages), each as aligned text and CSV.
pub fn render_report(input: &ReportInput) -> Result<RenderedReport, MetricsError> {
    match input {
        ReportInput::Results(reports) => {
            let mut sorted: Vec<&MetricReport> = reports.iter().collect();
            sorted.sort_by(|a, b| a.params.cmp(&b.params).then_with(|| a.method.cmp(&b.method)));
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([
                "method",
                "params",
                "total_samples",
                "folds",
                "epochs",
                "top1",
                "top5",
                "precision_w",
                "recall_w",
                "f1_w",
            ])?;
            let mut rows = Vec::new();
            for r in &sorted {
                r.validate()?;
                let scores: Vec<String> = r.averages.values().iter().map(|v| format!("{v:.4}")).collect();
                let mut rec = vec![
                    r.method.clone(),
                    r.params.to_string(),
                    r.total_samples.to_string(),
                    r.folds.to_string(),
                    r.epochs.to_string(),
                ];
                rec.extend(scores.iter().cloned());
                w.write_record(&rec)?;
                let mut row = vec![
                    r.method.clone(),
                    format_params(r.params),
                    r.total_samples.to_string(),
                    r.folds.to_string(),
                    r.epochs.to_string(),
                ];
                row.extend(scores);
                rows.push(row);
            }
            let mut header = vec!["Method", "# Parameters", "Total samples", "# Folds", "# Epochs"];
            header.extend(HEADERS);
            Ok(RenderedReport { text: table(&header, &rows), csv: csv_string(w)?, improvements: Vec::new() })
        }
        ReportInput::Improvement { original, augmented } => {
            let imp = improvement_rows(original, augmented)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["method", "params", "top1", "top5", "precision_w", "recall_w", "f1_w"])?;
            let mut rows = Vec::new();
            for r in &imp {
                let pct: Vec<String> = r.percent.values().iter().map(|v| format!("{v:.1}")).collect();
                let mut rec = vec![r.method.clone(), r.params.to_string()];
                rec.extend(pct.iter().cloned());
                w.write_record(&rec)?;
                let mut row = vec![r.method.clone()];
                row.extend(pct);
                rows.push(row);
            }
            let header: Vec<String> =
                std::iter::once("Method".to_string()).chain(HEADERS.iter().map(|h| format!("{h} (%)"))).collect();
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            Ok(RenderedReport { text: table(&header, &rows), csv: csv_string(w)?, improvements: imp })
        }
    }
}
