//! Subject-level vote aggregation, confusion matrices and the per-class
//! accuracy / F1 table.
//!
//! Matrix orientation is fixed: rows are the predicted class, columns the
//! true class, with COVID first. "Row accuracy" is row-correct over
//! row-total, i.e. per-predicted-class precision; per-class F1 is the
//! harmonic mean of that precision and the class recall.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Binary class, COVID at index 0 as in the evaluation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum ClassLabel {
    Covid,
    NonCovid,
}

impl ClassLabel {
    pub fn index(self) -> usize {
        match self {
            ClassLabel::Covid => 0,
            ClassLabel::NonCovid => 1,
        }
    }

    pub fn from_index(i: usize) -> ClassLabel {
        if i == 0 {
            ClassLabel::Covid
        } else {
            ClassLabel::NonCovid
        }
    }

    pub fn other(self) -> ClassLabel {
        match self {
            ClassLabel::Covid => ClassLabel::NonCovid,
            ClassLabel::NonCovid => ClassLabel::Covid,
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassLabel::Covid => f.write_str("COVID"),
            ClassLabel::NonCovid => f.write_str("NonCOVID"),
        }
    }
}

/// Slice-level decision rule: COVID strictly above 0.5, ties are non-COVID.
pub fn slice_is_covid(score: f64) -> bool {
    score > 0.5
}

/// How slice scores become a subject decision. `MeanScore` is experimental
/// and untested against any reference values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Vote,
    MeanScore,
}

/// Subject-level vote outcome.
#[derive(Debug, Clone, Serialize)]
pub struct SubjectPrediction {
    pub subject_id: String,
    pub n_slices: usize,
    pub n_covid_slices: usize,
    pub covid_fraction: f64,
    pub threshold: f64,
    pub decision: ClassLabel,
}

/// Vote rule: a subject is COVID iff the fraction of COVID-predicted slices
/// strictly exceeds the threshold.
pub fn aggregate_subject(
    subject_id: &str,
    scores: &[f64],
    threshold: f64,
) -> Result<SubjectPrediction> {
    aggregate_subject_with(subject_id, scores, threshold, Aggregation::Vote)
}

pub fn aggregate_subject_with(
    subject_id: &str,
    scores: &[f64],
    threshold: f64,
    aggregation: Aggregation,
) -> Result<SubjectPrediction> {
    if scores.is_empty() {
        return Err(Error::InvalidInput(format!(
            "subject `{subject_id}` has no scored slices"
        )));
    }
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::InvalidInput(format!(
            "vote threshold must be in [0, 1), got {threshold}"
        )));
    }
    let n_slices = scores.len();
    let n_covid_slices = scores.iter().filter(|&&s| slice_is_covid(s)).count();
    let covid_fraction = n_covid_slices as f64 / n_slices as f64;
    let covid = match aggregation {
        Aggregation::Vote => covid_fraction > threshold,
        Aggregation::MeanScore => scores.iter().sum::<f64>() / n_slices as f64 > threshold,
    };
    Ok(SubjectPrediction {
        subject_id: subject_id.to_string(),
        n_slices,
        n_covid_slices,
        covid_fraction,
        threshold,
        decision: if covid {
            ClassLabel::Covid
        } else {
            ClassLabel::NonCovid
        },
    })
}

/// 2x2 counts, rows = predicted (COVID, NonCOVID), columns = true.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix2x2 {
    counts: [[u64; 2]; 2],
}

impl ConfusionMatrix2x2 {
    pub fn new() -> Self {
        ConfusionMatrix2x2 {
            counts: [[0; 2]; 2],
        }
    }

    pub fn from_counts(counts: [[u64; 2]; 2]) -> Self {
        ConfusionMatrix2x2 { counts }
    }

    pub fn add(&mut self, predicted: ClassLabel, truth: ClassLabel) {
        self.counts[predicted.index()][truth.index()] += 1;
    }

    pub fn get(&self, predicted: ClassLabel, truth: ClassLabel) -> u64 {
        self.counts[predicted.index()][truth.index()]
    }

    pub fn row_total(&self, predicted: ClassLabel) -> u64 {
        self.counts[predicted.index()].iter().sum()
    }

    pub fn col_total(&self, truth: ClassLabel) -> u64 {
        self.counts[0][truth.index()] + self.counts[1][truth.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Swaps both class roles: rows and columns exchanged together.
    pub fn swapped_classes(&self) -> ConfusionMatrix2x2 {
        ConfusionMatrix2x2 {
            counts: [
                [self.counts[1][1], self.counts[1][0]],
                [self.counts[0][1], self.counts[0][0]],
            ],
        }
    }
}

impl Default for ConfusionMatrix2x2 {
    fn default() -> Self {
        Self::new()
    }
}

/// Tallies subject predictions against true labels. Every prediction must
/// have a label; a missing one means an UNKNOWN-labeled subject slipped in.
pub fn confusion(
    predictions: &[SubjectPrediction],
    labels: &BTreeMap<String, ClassLabel>,
) -> Result<ConfusionMatrix2x2> {
    let mut matrix = ConfusionMatrix2x2::new();
    for p in predictions {
        let truth = labels.get(&p.subject_id).ok_or_else(|| {
            Error::Dataset(format!(
                "subject `{}` has no label (UNKNOWN labels cannot be evaluated)",
                p.subject_id
            ))
        })?;
        matrix.add(p.decision, *truth);
    }
    Ok(matrix)
}

/// Per-class metrics; `None` marks values whose denominator is empty,
/// reported as absent rather than zero.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ClassMetrics {
    pub row_accuracy: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

/// The evaluation table for one system.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MetricsReport {
    pub covid: ClassMetrics,
    pub noncovid: ClassMetrics,
    pub macro_accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
}

fn class_metrics(matrix: &ConfusionMatrix2x2, class: ClassLabel) -> ClassMetrics {
    let correct = matrix.get(class, class) as f64;
    let row = matrix.row_total(class);
    let col = matrix.col_total(class);
    let row_accuracy = (row > 0).then(|| correct / row as f64);
    let recall = (col > 0).then(|| correct / col as f64);
    let f1 = match (row_accuracy, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    ClassMetrics {
        row_accuracy,
        recall,
        f1,
    }
}

fn mean_opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some((x + y) / 2.0),
        _ => None,
    }
}

/// Row accuracies, recalls, per-class F1 and their macro averages.
pub fn metrics(matrix: &ConfusionMatrix2x2) -> MetricsReport {
    let covid = class_metrics(matrix, ClassLabel::Covid);
    let noncovid = class_metrics(matrix, ClassLabel::NonCovid);
    MetricsReport {
        covid,
        noncovid,
        macro_accuracy: mean_opt(covid.row_accuracy, noncovid.row_accuracy),
        macro_f1: mean_opt(covid.f1, noncovid.f1),
    }
}

/// Rounds a value in `[0, 1]` to a percentage with one decimal, the table's
/// accuracy precision.
pub fn round_percent(v: f64) -> f64 {
    (v * 1000.0).round() / 10.0
}

/// Rounds to two decimals, the table's F1 precision.
pub fn round_f1(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// One full report per threshold over per-subject slice scores.
pub fn threshold_sweep(
    scores_by_subject: &BTreeMap<String, Vec<(usize, f64)>>,
    labels: &BTreeMap<String, ClassLabel>,
    thresholds: &[f64],
) -> Result<Vec<(f64, ConfusionMatrix2x2, MetricsReport)>> {
    let mut out = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let mut predictions = Vec::with_capacity(scores_by_subject.len());
        for (subject_id, slices) in scores_by_subject {
            let scores: Vec<f64> = slices.iter().map(|&(_, s)| s).collect();
            predictions.push(aggregate_subject(subject_id, &scores, t)?);
        }
        let matrix = confusion(&predictions, labels)?;
        out.push((t, matrix, metrics(&matrix)));
    }
    Ok(out)
}

/// One scored slice (or sub-volume) of a subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceScore {
    pub subject_id: String,
    pub slice_index: usize,
    pub score: f64,
}

pub const SCORES_HEADER: &str = "subject_id,slice_index,covid_score";

pub fn write_scores(path: &Path, scores: &[SliceScore]) -> Result<()> {
    let mut out = String::from(SCORES_HEADER);
    out.push('\n');
    for s in scores {
        out.push_str(&format!("{},{},{}\n", s.subject_id, s.slice_index, s.score));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: &Path) -> Result<Vec<SliceScore>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header.trim() == SCORES_HEADER => {}
        _ => {
            return Err(Error::format(
                path,
                format!("scores file must start with `{SCORES_HEADER}`"),
            ))
        }
    }
    let mut scores = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::format(path, format!("line {}: expected 3 fields", lineno + 2)));
        }
        let slice_index = parts[1]
            .trim()
            .parse()
            .map_err(|e| Error::format(path, format!("line {}: bad slice index: {e}", lineno + 2)))?;
        let score: f64 = parts[2]
            .trim()
            .parse()
            .map_err(|e| Error::format(path, format!("line {}: bad score: {e}", lineno + 2)))?;
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::format(
                path,
                format!("line {}: score {score} outside [0, 1]", lineno + 2),
            ));
        }
        scores.push(SliceScore {
            subject_id: parts[0].trim().to_string(),
            slice_index,
            score,
        });
    }
    Ok(scores)
}

/// Groups scores by subject, slices sorted by index.
pub fn group_scores(scores: &[SliceScore]) -> BTreeMap<String, Vec<(usize, f64)>> {
    let mut grouped: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
    for s in scores {
        grouped
            .entry(s.subject_id.clone())
            .or_default()
            .push((s.slice_index, s.score));
    }
    for slices in grouped.values_mut() {
        slices.sort_by_key(|&(i, _)| i);
    }
    grouped
}

fn fmt_acc(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{:.1}", round_percent(v)),
        None => "-".to_string(),
    }
}

fn fmt_f1(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{:.2}", round_f1(v)),
        None => "-".to_string(),
    }
}

/// Plain-text table: predicted-class rows, true-class columns.
pub fn format_report(matrix: &ConfusionMatrix2x2, report: &MetricsReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<20} {:>7} {:>9} {:>7} {:>6}\n",
        "", "COVID", "NonCOVID", "Acc(%)", "F1"
    ));
    out.push_str(&format!(
        "{:<20} {:>7} {:>9} {:>7} {:>6}\n",
        "COVID (predict)",
        matrix.get(ClassLabel::Covid, ClassLabel::Covid),
        matrix.get(ClassLabel::Covid, ClassLabel::NonCovid),
        fmt_acc(report.covid.row_accuracy),
        fmt_f1(report.covid.f1),
    ));
    out.push_str(&format!(
        "{:<20} {:>7} {:>9} {:>7} {:>6}\n",
        "NonCOVID (predict)",
        matrix.get(ClassLabel::NonCovid, ClassLabel::Covid),
        matrix.get(ClassLabel::NonCovid, ClassLabel::NonCovid),
        fmt_acc(report.noncovid.row_accuracy),
        fmt_f1(report.noncovid.f1),
    ));
    out.push_str(&format!(
        "{:<20} {:>7} {:>9} {:>7} {:>6}\n",
        "Average",
        "",
        "",
        fmt_acc(report.macro_accuracy),
        fmt_f1(report.macro_f1),
    ));
    out
}
