//! Strict accuracy, mention-averaged (macro) and pooled (micro) F1, their
//! geometric mean, and per-label scores.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::typesys::{LabelSet, Taxonomy};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{pred} predictions for {gold} gold sets")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("nothing to score")]
    Empty,
    #[error("mention {index}: label set sized {found}, taxonomy has {expected}")]
    SetSize { index: usize, expected: usize, found: usize },
    #[error("mention {index} has an empty gold set")]
    EmptyGold { index: usize },
    #[error("value {0} outside [0, 1]")]
    OutOfRange(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub label: String,
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strict: f64,
    pub macro_p: f64,
    pub macro_r: f64,
    pub macro_f1: f64,
    pub micro_p: f64,
    pub micro_r: f64,
    pub micro_f1: f64,
    pub gmean: f64,
    pub per_label: Vec<LabelScore>,
}

pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Cube root of the product; 0 when any input is 0.
pub fn gmean(strict: f64, macro_f1: f64, micro_f1: f64) -> Result<f64, MetricsError> {
    for v in [strict, macro_f1, micro_f1] {
        if !(0.0..=1.0).contains(&v) {
            return Err(MetricsError::OutOfRange(v));
        }
    }
    if strict == 0.0 || macro_f1 == 0.0 || micro_f1 == 0.0 {
        return Ok(0.0);
    }
    Ok((strict * macro_f1 * micro_f1).cbrt())
}

fn check(pred: &[LabelSet], gold: &[LabelSet], k: usize) -> Result<(), MetricsError> {
    if pred.len() != gold.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty);
    }
    for (index, (p, g)) in pred.iter().zip(gold).enumerate() {
        for s in [p, g] {
            if s.len() != k {
                return Err(MetricsError::SetSize {
                    index,
                    expected: k,
                    found: s.len(),
                });
            }
        }
        if g.is_empty() {
            return Err(MetricsError::EmptyGold { index });
        }
    }
    Ok(())
}

/// Per-label precision, recall, F1 and gold support, in taxonomy order.
pub fn per_label_f1(pred: &[LabelSet], gold: &[LabelSet], tax: &Taxonomy) -> Result<Vec<LabelScore>, MetricsError> {
    check(pred, gold, tax.len())?;
    let k = tax.len();
    let (mut tp, mut predicted, mut support) = (vec![0; k], vec![0; k], vec![0; k]);
    for (p, g) in pred.iter().zip(gold) {
        for i in p.iter() {
            predicted[i] += 1;
            if g.contains(i) {
                tp[i] += 1;
            }
        }
        for i in g.iter() {
            support[i] += 1;
        }
    }
    Ok((0..k)
        .map(|i| {
            let p = ratio(tp[i], predicted[i]);
            let r = ratio(tp[i], support[i]);
            LabelScore {
                label: tax.label(i).to_owned(),
                p,
                r,
                f1: f1(p, r),
                support: support[i],
            }
        })
        .collect())
}

/// Scores ancestor-closed predictions against gold sets. An empty
/// prediction has precision 0.
pub fn score(pred: &[LabelSet], gold: &[LabelSet], tax: &Taxonomy) -> Result<EvalReport, MetricsError> {
    let per_label = per_label_f1(pred, gold, tax)?;
    let n = pred.len() as f64;
    let (mut exact, mut sum_p, mut sum_r) = (0usize, 0.0, 0.0);
    let (mut inter, mut n_pred, mut n_gold) = (0usize, 0usize, 0usize);
    for (p, g) in pred.iter().zip(gold) {
        let both = p.intersection_count(g);
        if p == g {
            exact += 1;
        }
        sum_p += ratio(both, p.count());
        sum_r += ratio(both, g.count());
        inter += both;
        n_pred += p.count();
        n_gold += g.count();
    }
    let strict = exact as f64 / n;
    let (macro_p, macro_r) = (sum_p / n, sum_r / n);
    let (micro_p, micro_r) = (ratio(inter, n_pred), ratio(inter, n_gold));
    let macro_f1 = f1(macro_p, macro_r);
    let micro_f1 = f1(micro_p, micro_r);
    Ok(EvalReport {
        strict,
        macro_p,
        macro_r,
        macro_f1,
        micro_p,
        micro_r,
        micro_f1,
        gmean: gmean(strict, macro_f1, micro_f1)?,
        per_label,
    })
}

const NAME_WIDTH: usize = 24;

/// Fixed-width table: model name, Accuracy, Macro F1, Micro F1, GMean.
pub fn format_table(rows: &[(&str, &EvalReport)]) -> String {
    let mut out = format!(
        "{:<NAME_WIDTH$} {:>9} {:>9} {:>9} {:>9}\n",
        "Model", "Accuracy", "Macro F1", "Micro F1", "GMean"
    );
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:<NAME_WIDTH$} {:>9.3} {:>9.3} {:>9.3} {:>9.3}",
            name, r.strict, r.macro_f1, r.micro_f1, r.gmean
        );
    }
    out
}

/// Per-label table for labels with gold support.
pub fn format_per_label(r: &EvalReport) -> String {
    let mut out = format!("{:<40} {:>7} {:>7} {:>7} {:>8}\n", "Label", "P", "R", "F1", "Support");
    for l in r.per_label.iter().filter(|l| l.support > 0) {
        let _ = writeln!(out, "{:<40} {:>7.3} {:>7.3} {:>7.3} {:>8}", l.label, l.p, l.r, l.f1, l.support);
    }
    out
}
