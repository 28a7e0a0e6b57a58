use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub count: usize,
}

/// Accuracy, macro-F1 and micro-F1 of single-label predictions.
///
/// Macro-F1 averages per-class F1 over classes that occur in the gold labels
/// or the predictions; a class seen on one side only scores 0.
pub fn classification_metrics(gold: &[usize], pred: &[usize]) -> Result<ClassificationMetrics> {
    if gold.len() != pred.len() {
        return Err(Error::Evaluation(format!(
            "{} gold labels but {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::Evaluation("no examples to evaluate".into()));
    }
    // per class: (tp, fp, fn)
    let mut counts: BTreeMap<usize, (usize, usize, usize)> = BTreeMap::new();
    let mut correct = 0;
    for (&g, &p) in gold.iter().zip(pred) {
        if g == p {
            correct += 1;
            counts.entry(g).or_default().0 += 1;
        } else {
            counts.entry(p).or_default().1 += 1;
            counts.entry(g).or_default().2 += 1;
        }
    }
    let f1 = |&(tp, fp, fn_): &(usize, usize, usize)| {
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    };
    let macro_f1 = counts.values().map(f1).sum::<f64>() / counts.len() as f64;
    let accuracy = correct as f64 / gold.len() as f64;
    // single-label: global precision = recall = accuracy
    Ok(ClassificationMetrics {
        accuracy,
        macro_f1,
        micro_f1: accuracy,
        count: gold.len(),
    })
}

/// `2ab / (a + b)`, and 0 when both are 0.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Davies-Bouldin index of the rows of `points` grouped by `grouping`
/// (row index → group key). Lower is tighter. Returns `f64::INFINITY` when
/// two distinct groups share a centroid.
pub fn dbi<G: Ord + Clone>(points: &Array2<f64>, grouping: &BTreeMap<usize, G>) -> Result<f64> {
    let mut members: BTreeMap<G, Vec<usize>> = BTreeMap::new();
    for (&row, g) in grouping {
        if row >= points.nrows() {
            return Err(Error::Argument(format!(
                "grouping refers to row {row} of {}",
                points.nrows()
            )));
        }
        members.entry(g.clone()).or_default().push(row);
    }
    if members.len() < 2 {
        return Err(Error::Argument(format!(
            "Davies-Bouldin index needs at least 2 groups, got {}",
            members.len()
        )));
    }
    let d = points.ncols();
    let (centroids, scatter): (Vec<Array1<f64>>, Vec<f64>) = members
        .values()
        .map(|rows| {
            let mut c = Array1::zeros(d);
            for &r in rows {
                c += &points.row(r);
            }
            c /= rows.len() as f64;
            let s = rows.iter().map(|&r| euclid(&points.row(r).to_owned(), &c)).sum::<f64>() / rows.len() as f64;
            (c, s)
        })
        .unzip();
    let k = centroids.len();
    let mut total = 0.0;
    for i in 0..k {
        let mut worst = 0.0f64;
        for j in (0..k).filter(|&j| j != i) {
            let dist = euclid(&centroids[i], &centroids[j]);
            if dist == 0.0 {
                return Ok(f64::INFINITY);
            }
            worst = worst.max((scatter[i] + scatter[j]) / dist);
        }
        total += worst;
    }
    Ok(total / k as f64)
}

fn euclid(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
