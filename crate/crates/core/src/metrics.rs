//! Point-count and accuracy summaries of a reconstruction.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::synth::{eval_ground_truth, GroundTruth};

/// Errors above this many millimeters count as gross.
pub const LIMIT_MM: f64 = 5.5;
pub const DEFAULT_BIN_WIDTH_MM: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageCounts {
    pub initial_count: usize,
    pub dense_count: usize,
    pub ratio: f64,
}

pub fn stage_counts(initial: &PointCloud, dense: &PointCloud) -> Result<StageCounts> {
    counts(initial.len(), dense.len())
}

pub fn counts(initial_count: usize, dense_count: usize) -> Result<StageCounts> {
    if initial_count == 0 {
        return Err(Error::Usage(
            "stage counts need a non-empty initial cloud".into(),
        ));
    }
    Ok(StageCounts {
        initial_count,
        dense_count,
        ratio: dense_count as f64 / initial_count as f64,
    })
}

/// Histogram bin starting at `edge_mm`; the last bin has no upper edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub edge_mm: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub mean_abs_mm: f64,
    /// Population standard deviation.
    pub std_mm: f64,
    pub max_abs_mm: f64,
    pub n_evaluated: usize,
    /// Points whose (x, y) falls outside the ground-truth support.
    pub n_excluded: usize,
    pub limit_mm: f64,
    pub over_limit_fraction: f64,
    pub bin_width_mm: f64,
    pub histogram: Vec<HistogramBin>,
}

/// Absolute z errors in millimeters of every point inside the ground-truth
/// support, and the number of points outside it.
pub fn point_errors(dense: &PointCloud, gt: &GroundTruth) -> (Vec<f64>, usize) {
    let mut errors = Vec::with_capacity(dense.len());
    let mut excluded = 0;
    for p in &dense.points {
        match eval_ground_truth(gt, p[0], p[1]) {
            Some(z) => errors.push((p[2] - z).abs() * 1000.0),
            None => excluded += 1,
        }
    }
    (errors, excluded)
}

pub fn error_report(
    dense: &PointCloud,
    gt: &GroundTruth,
    bin_width_mm: f64,
) -> Result<ErrorReport> {
    let (errors, excluded) = point_errors(dense, gt);
    report_from_errors(&errors, excluded, bin_width_mm)
}

/// Summarizes absolute errors in millimeters. The result does not depend on
/// the order of `errors`.
pub fn report_from_errors(
    errors: &[f64],
    n_excluded: usize,
    bin_width_mm: f64,
) -> Result<ErrorReport> {
    if !(bin_width_mm > 0.0 && bin_width_mm.is_finite()) {
        return Err(Error::Usage(format!(
            "bin width must be positive, got {bin_width_mm}"
        )));
    }
    if errors.is_empty() {
        return Err(Error::Usage(
            "no point falls inside the ground-truth support".into(),
        ));
    }
    if let Some(e) = errors.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
        return Err(Error::Usage(format!("invalid absolute error {e}")));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    let max = *sorted.last().expect("non-empty");
    let over = sorted.iter().filter(|&&e| e > LIMIT_MM).count();

    let nbins = ((max.ceil() / bin_width_mm).ceil() as usize).max(1);
    let mut counts = vec![0usize; nbins];
    for &e in &sorted {
        counts[((e / bin_width_mm).floor() as usize).min(nbins - 1)] += 1;
    }
    let histogram = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| HistogramBin {
            edge_mm: i as f64 * bin_width_mm,
            fraction: c as f64 / n,
        })
        .collect();
    Ok(ErrorReport {
        mean_abs_mm: mean,
        std_mm: var.sqrt(),
        max_abs_mm: max,
        n_evaluated: sorted.len(),
        n_excluded,
        limit_mm: LIMIT_MM,
        over_limit_fraction: over as f64 / n,
        bin_width_mm,
        histogram,
    })
}

/// Aligned two-column summary followed by the histogram.
pub fn format_table(counts: &StageCounts, report: Option<&ErrorReport>) -> String {
    let mut rows: Vec<(String, String)> = vec![
        ("initial points".into(), counts.initial_count.to_string()),
        ("dense points".into(), counts.dense_count.to_string()),
        ("ratio".into(), format!("{:.3}", counts.ratio)),
    ];
    if let Some(r) = report {
        rows.extend([
            ("evaluated points".into(), r.n_evaluated.to_string()),
            ("excluded points".into(), r.n_excluded.to_string()),
            ("mean |error| mm".into(), format!("{:.3}", r.mean_abs_mm)),
            ("std error mm".into(), format!("{:.3}", r.std_mm)),
            ("max |error| mm".into(), format!("{:.3}", r.max_abs_mm)),
            (
                format!("fraction > {} mm", r.limit_mm),
                format!("{:.5}", r.over_limit_fraction),
            ),
        ]);
    }
    let key_width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let value_width = rows.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (k, v) in &rows {
        writeln!(out, "{k:<key_width$}  {v:>value_width$}").unwrap();
    }
    if let Some(r) = report {
        out.push('\n');
        let labels: Vec<String> = r
            .histogram
            .iter()
            .enumerate()
            .map(|(i, b)| {
                if i + 1 == r.histogram.len() {
                    format!(">= {:.1}", b.edge_mm)
                } else {
                    format!("{:.1} - {:.1}", b.edge_mm, b.edge_mm + r.bin_width_mm)
                }
            })
            .collect();
        let width = labels
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(0)
            .max("error mm".len());
        writeln!(out, "{:<width$}  fraction", "error mm").unwrap();
        for (label, b) in labels.iter().zip(&r.histogram) {
            writeln!(out, "{label:<width$}  {:.5}", b.fraction).unwrap();
        }
    }
    out
}
