use serde::{Deserialize, Serialize};

use super::graph::Adjacency;
use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    pub grid: Vec<f64>,
    /// (FPR, TPR) per grid value, in grid order.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// (FPR, TPR) of `fit` against `truth` over the strict upper triangle.
pub fn roc_point(fit: &Adjacency, truth: &Adjacency) -> Result<(f64, f64)> {
    let p = truth.p();
    if fit.p() != p {
        return invalid("fit and truth differ in size");
    }
    let (mut tp, mut fp, mut pos, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for i in 0..p {
        for j in i + 1..p {
            if truth.has(i, j) {
                pos += 1;
                tp += usize::from(fit.has(i, j));
            } else {
                neg += 1;
                fp += usize::from(fit.has(i, j));
            }
        }
    }
    if pos == 0 {
        return invalid("truth has no edges; TPR undefined");
    }
    if neg == 0 {
        return invalid("truth is complete; FPR undefined");
    }
    Ok((fp as f64 / neg as f64, tp as f64 / pos as f64))
}

/// Trapezoid area under the points after adding (0,0) and (1,1).
pub fn auc(points: &[(f64, f64)]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) * 0.5).sum()
}

/// One point per (λ, fitted adjacency) pair.
pub fn roc_curve(fits: &[(f64, Adjacency)], truth: &Adjacency) -> Result<RocResult> {
    if fits.len() < 2 {
        return invalid("an ROC curve needs at least two grid points");
    }
    let points = fits
        .iter()
        .map(|(_, a)| roc_point(a, truth))
        .collect::<Result<Vec<_>>>()?;
    Ok(RocResult {
        grid: fits.iter().map(|f| f.0).collect(),
        auc: auc(&points),
        points,
    })
}
