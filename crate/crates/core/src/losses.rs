//! Hinge triplet objectives over similarity scores.
//!
//! Both losses are plain sums (no batch-size normalization). The hinge
//! `max(x, 0)` has derivative 0 at `x == 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub margin: f64,
}

impl LossConfig {
    pub fn new(margin: f64) -> Result<Self> {
        if !(margin.is_finite() && margin >= 0.0) {
            return Err(Error::usage(format!("margin must be finite and >= 0, got {margin}")));
        }
        Ok(Self { margin })
    }
}

#[inline]
fn hinge(x: f64) -> f64 {
    x.max(0.0)
}

#[inline]
fn active(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Bidirectional in-batch loss on a `B x B` score matrix `S[i][j] = S(v_i, t_j)`:
///
/// `sum_{i != j} [a + S[i][j] - S[i][i]]+ + [a + S[j][i] - S[i][i]]+`
pub fn coarse_triplet_loss(scores: &Matrix, margin: f64) -> Result<f64> {
    if scores.rows() != scores.cols() {
        return Err(Error::usage("coarse triplet loss needs a square score matrix"));
    }
    let flat: Vec<f64> = scores.as_slice().iter().map(|&s| s as f64).collect();
    Ok(coarse_triplet_loss_grad(&flat, scores.rows(), margin)?.0)
}

/// Loss and `d loss / d S` for a row-major `b x b` score buffer.
pub fn coarse_triplet_loss_grad(scores: &[f64], b: usize, margin: f64) -> Result<(f64, Vec<f64>)> {
    LossConfig::new(margin)?;
    if b < 2 {
        return Err(Error::usage(format!("coarse triplet loss needs a batch of at least 2, got {b}")));
    }
    Error::check_dim(b * b, scores.len())?;
    let diag: Vec<f64> = (0..b).map(|i| scores[i * b + i]).collect();
    let mut grad = vec![0.0; b * b];
    let mut loss = 0.0;
    for (i, &pos) in diag.iter().enumerate() {
        for j in (0..b).filter(|&j| j != i) {
            // image i against caption j, then caption i against image j
            let row = margin + scores[i * b + j] - pos;
            let col = margin + scores[j * b + i] - pos;
            loss += hinge(row) + hinge(col);
            let (ar, ac) = (active(row), active(col));
            grad[i * b + j] += ar;
            grad[j * b + i] += ac;
            grad[i * b + i] -= ar + ac;
        }
    }
    Ok((loss, grad))
}

/// Vocabulary loss: `sum_i sum_j [a + S(v_i, neg_ij) - S(v_i, pos_i)]+`.
pub fn finegrained_triplet_loss(positives: &[f64], negatives: &[Vec<f64>], margin: f64) -> Result<f64> {
    Ok(finegrained_triplet_loss_grad(positives, negatives, margin)?.0)
}

/// Loss with gradients for the positive scores and each negative score.
pub fn finegrained_triplet_loss_grad(
    positives: &[f64],
    negatives: &[Vec<f64>],
    margin: f64,
) -> Result<(f64, Vec<f64>, Vec<Vec<f64>>)> {
    LossConfig::new(margin)?;
    Error::check_dim(positives.len(), negatives.len())?;
    let mut loss = 0.0;
    let mut grad_pos = vec![0.0; positives.len()];
    let mut grad_neg = Vec::with_capacity(negatives.len());
    for (i, (&pos, negs)) in positives.iter().zip(negatives).enumerate() {
        if negs.is_empty() {
            return Err(Error::usage(format!("item {i} has no negatives")));
        }
        let terms: Vec<f64> = negs.iter().map(|&n| margin + n - pos).collect();
        loss += terms.iter().copied().map(hinge).sum::<f64>();
        let g: Vec<f64> = terms.iter().copied().map(active).collect();
        grad_pos[i] = -g.iter().sum::<f64>();
        grad_neg.push(g);
    }
    Ok((loss, grad_pos, grad_neg))
}
