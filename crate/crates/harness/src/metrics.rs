//! Classification metrics with untraceable variables counted as misses.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use bytetr_core::types::label_of_class;
use serde::{Deserialize, Serialize};

pub const UNTRACEABLE: &str = "untraceable";

pub const AVERAGING_NOTE: &str = "macro averages weight every class listed equally; \
micro averages pool all variables, so micro precision = micro recall = accuracy. \
Untraceable variables count as wrong predictions.";

/// One outcome: the true class and the predicted class, `None` when the
/// variable could not be traced.
pub type Outcome = (usize, Option<usize>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub label: String,
    pub support: usize,
    pub predicted: usize,
    pub true_positives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    /// Row labels (true classes); columns are the same classes followed
    /// by `untraceable`.
    pub labels: Vec<String>,
    pub matrix: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub untraceable: usize,
    pub micro: Averages,
    pub macro_avg: Averages,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Confusion,
    pub note: String,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn label_name(c: usize) -> String {
    label_of_class(c)
        .map(|l| l.to_string())
        .unwrap_or_else(|_| format!("class{c}"))
}

/// Builds the report. Classes are those that occur as a true label or as a
/// prediction, in class-index order.
pub fn evaluate(split: &str, outcomes: &[Outcome]) -> EvalReport {
    let classes: Vec<usize> = outcomes
        .iter()
        .flat_map(|&(t, p)| std::iter::once(t).chain(p))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let pos = |c: usize| classes.binary_search(&c).expect("class collected");
    let k = classes.len();
    let mut matrix = vec![vec![0usize; k + 1]; k];
    for &(t, p) in outcomes {
        let col = p.map(pos).unwrap_or(k);
        matrix[pos(t)][col] += 1;
    }
    let per_class: Vec<ClassMetrics> = classes
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let support: usize = matrix[i].iter().sum();
            let predicted: usize = matrix.iter().map(|row| row[i]).sum();
            let tp = matrix[i][i];
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            ClassMetrics {
                class: c,
                label: label_name(c),
                support,
                predicted,
                true_positives: tp,
                precision,
                recall,
                f1: f1(precision, recall),
            }
        })
        .collect();
    let total = outcomes.len();
    let correct = outcomes.iter().filter(|(t, p)| Some(*t) == *p).count();
    let untraceable = outcomes.iter().filter(|(_, p)| p.is_none()).count();
    let accuracy = ratio(correct, total);
    let mean = |f: &dyn Fn(&ClassMetrics) -> f64| {
        if per_class.is_empty() {
            0.0
        } else {
            per_class.iter().map(f).sum::<f64>() / per_class.len() as f64
        }
    };
    let macro_avg = Averages {
        precision: mean(&|m| m.precision),
        recall: mean(&|m| m.recall),
        f1: mean(&|m| m.f1),
    };
    EvalReport {
        split: split.to_string(),
        total,
        correct,
        accuracy,
        untraceable,
        micro: Averages {
            precision: accuracy,
            recall: accuracy,
            f1: accuracy,
        },
        macro_avg,
        per_class,
        confusion: Confusion {
            labels: classes.iter().map(|&c| label_name(c)).collect(),
            matrix,
        },
        note: AVERAGING_NOTE.to_string(),
    }
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "split: {}", self.split);
        let _ = writeln!(
            s,
            "variables: {}  correct: {}  untraceable: {}",
            self.total, self.correct, self.untraceable
        );
        let _ = writeln!(s, "accuracy: {:.4}", self.accuracy);
        let _ = writeln!(
            s,
            "macro  P {:.4}  R {:.4}  F1 {:.4}",
            self.macro_avg.precision, self.macro_avg.recall, self.macro_avg.f1
        );
        let _ = writeln!(
            s,
            "micro  P {:.4}  R {:.4}  F1 {:.4}",
            self.micro.precision, self.micro.recall, self.micro.f1
        );
        let _ = writeln!(
            s,
            "\n{:<16} {:>8} {:>8} {:>8} {:>8}",
            "class", "support", "P", "R", "F1"
        );
        for m in &self.per_class {
            let _ = writeln!(
                s,
                "{:<16} {:>8} {:>8.4} {:>8.4} {:>8.4}",
                m.label, m.support, m.precision, m.recall, m.f1
            );
        }
        let _ = writeln!(
            s,
            "\nconfusion (rows: truth, columns: prediction, last column: {UNTRACEABLE})"
        );
        for (label, row) in self.confusion.labels.iter().zip(&self.confusion.matrix) {
            let cells: Vec<String> = row.iter().map(|c| format!("{c:>6}")).collect();
            let _ = writeln!(s, "{label:<16} {}", cells.join(""));
        }
        let _ = writeln!(s, "\n{}", self.note);
        s
    }
}
