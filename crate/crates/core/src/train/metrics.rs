use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{preds} predictions but {labels} labels")]
    Length { preds: usize, labels: usize },
    #[error("class index {index} out of range for {classes} classes")]
    OutOfRange { index: usize, classes: usize },
    #[error("nothing to evaluate")]
    Empty,
}

/// `k×k` counts; entry `[i][j]` is the number of class-`i` samples predicted
/// as `j`.
pub fn confusion_matrix(
    preds: &[usize],
    labels: &[usize],
    k: usize,
) -> Result<Vec<Vec<usize>>, MetricsError> {
    if preds.len() != labels.len() {
        return Err(MetricsError::Length {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    let mut m = vec![vec![0; k]; k];
    for (&p, &l) in preds.iter().zip(labels) {
        if let Some(&index) = [l, p].iter().find(|&&i| i >= k) {
            return Err(MetricsError::OutOfRange { index, classes: k });
        }
        m[l][p] += 1;
    }
    Ok(m)
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Whether a reported F1 agrees with the reported precision and recall to
/// within `tolerance`.
pub fn f1_consistent(precision: f64, recall: f64, reported_f1: f64, tolerance: f64) -> bool {
    (f1_score(precision, recall) - reported_f1).abs() <= tolerance
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    /// Unweighted means over classes.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
}

impl MetricsReport {
    /// Builds a report over `class_names.len()` classes. Precision of a
    /// class that is never predicted is 0, as is recall of a class with no
    /// samples.
    pub fn from_predictions(
        preds: &[usize],
        labels: &[usize],
        class_names: &[String],
    ) -> Result<Self, MetricsError> {
        if labels.is_empty() {
            return Err(MetricsError::Empty);
        }
        let k = class_names.len();
        let confusion = confusion_matrix(preds, labels, k)?;
        let mut per_class = Vec::with_capacity(k);
        for (c, name) in class_names.iter().enumerate() {
            let tp = confusion[c][c] as f64;
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
            let recall = if support > 0 { tp / support as f64 } else { 0.0 };
            per_class.push(ClassMetrics {
                name: name.clone(),
                precision,
                recall,
                f1: f1_score(precision, recall),
                support,
            });
        }
        let mean = |f: fn(&ClassMetrics) -> f64| {
            if k == 0 {
                0.0
            } else {
                per_class.iter().map(f).sum::<f64>() / k as f64
            }
        };
        let precision = mean(|c| c.precision);
        let recall = mean(|c| c.recall);
        let trace: usize = (0..k).map(|i| confusion[i][i]).sum();
        Ok(MetricsReport {
            precision,
            recall,
            f1: f1_score(precision, recall),
            support: labels.len(),
            accuracy: trace as f64 / labels.len() as f64,
            per_class,
            confusion,
        })
    }

    /// Aggregate rows followed by the per-class breakdown.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let rows = [
            ("Precision", format!("{:.4}", self.precision)),
            ("Recall", format!("{:.4}", self.recall)),
            ("F1 Score", format!("{:.4}", self.f1)),
            ("Support", self.support.to_string()),
            ("Test Accuracy", format!("{:.2}%", 100.0 * self.accuracy)),
        ];
        for (label, value) in rows {
            let _ = writeln!(out, "{label:<14} {value:>10}");
        }
        let width = self
            .per_class
            .iter()
            .map(|c| c.name.len())
            .max()
            .unwrap_or(0)
            .max(5);
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<width$} {:>9} {:>9} {:>9} {:>8}",
            "class", "precision", "recall", "f1", "support"
        );
        for c in &self.per_class {
            let _ = writeln!(
                out,
                "{:<width$} {:>9.4} {:>9.4} {:>9.4} {:>8}",
                c.name, c.precision, c.recall, c.f1, c.support
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }
}
