//! Reconstruction error and rating-monotonicity metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::surface::{MaskedSurface, Matrix, YieldSurface};

const BPS: f64 = 1e4;
/// Adjacent-rating differences below `-MONOTONICITY_TOL` count as violations.
pub const MONOTONICITY_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("truth has {truth} surfaces, reconstruction has {recon}")]
    LengthMismatch { truth: usize, recon: usize },
    #[error("surface {index}: shapes {truth:?} vs {recon:?}")]
    ShapeMismatch {
        index: usize,
        truth: (usize, usize),
        recon: (usize, usize),
    },
    #[error("need at least two ratings to measure monotonicity")]
    TooFewRatings,
    #[error("no cells to score")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae_bps: f64,
    pub rmse_bps: f64,
    /// `None` when some truth cell is zero.
    pub mae_pct: Option<f64>,
    pub rmse_pct: Option<f64>,
    pub mono_violation_pct: f64,
    pub n_surfaces: usize,
    pub n_cells: usize,
}

impl MetricsReport {
    pub fn pct_defined(&self) -> bool {
        self.mae_pct.is_some()
    }
}

fn check_shapes(truth: &[&Matrix], recon: &[&Matrix]) -> Result<(), MetricsError> {
    if truth.len() != recon.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            recon: recon.len(),
        });
    }
    for (k, (t, r)) in truth.iter().zip(recon).enumerate() {
        if t.shape() != r.shape() {
            return Err(MetricsError::ShapeMismatch {
                index: k,
                truth: t.shape(),
                recon: r.shape(),
            });
        }
    }
    Ok(())
}

fn score(
    truth: &[&Matrix],
    recon: &[&Matrix],
    include: impl Fn(usize, usize) -> bool,
) -> Result<MetricsReport, MetricsError> {
    check_shapes(truth, recon)?;
    let (mut abs, mut sq, mut rel, mut rel_sq) = (0.0, 0.0, 0.0, 0.0);
    let mut n = 0usize;
    let mut pct_defined = true;
    for (k, (t, r)) in truth.iter().zip(recon).enumerate() {
        for (c, (&y, &f)) in t.as_slice().iter().zip(r.as_slice()).enumerate() {
            if !include(k, c) {
                continue;
            }
            let e = f - y;
            abs += e.abs();
            sq += e * e;
            if y > 0.0 {
                rel += (e / y).abs();
                rel_sq += (e / y) * (e / y);
            } else {
                pct_defined = false;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    let nf = n as f64;
    Ok(MetricsReport {
        mae_bps: abs / nf * BPS,
        rmse_bps: (sq / nf).sqrt() * BPS,
        mae_pct: pct_defined.then(|| rel / nf * 100.0),
        rmse_pct: pct_defined.then(|| (rel_sq / nf).sqrt() * 100.0),
        mono_violation_pct: monotonicity_violations_matrices(recon)?,
        n_surfaces: truth.len(),
        n_cells: n,
    })
}

/// MAE/RMSE over every cell of every surface, plus the monotonicity
/// violation rate of the reconstructions.
pub fn error_metrics(
    truth: &[YieldSurface],
    recon: &[YieldSurface],
) -> Result<MetricsReport, MetricsError> {
    let t: Vec<&Matrix> = truth.iter().map(|s| s.values()).collect();
    let r: Vec<&Matrix> = recon.iter().map(|s| s.values()).collect();
    error_metrics_matrices(&t, &r)
}

pub fn error_metrics_matrices(
    truth: &[&Matrix],
    recon: &[&Matrix],
) -> Result<MetricsReport, MetricsError> {
    score(truth, recon, |_, _| true)
}

/// Error metrics restricted to the cells each mask leaves unobserved.
pub fn error_metrics_masked_only(
    truth: &[&Matrix],
    recon: &[&Matrix],
    masks: &[&MaskedSurface],
) -> Result<MetricsReport, MetricsError> {
    if masks.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            recon: masks.len(),
        });
    }
    score(truth, recon, |k, c| !masks[k].mask()[c])
}

/// Percentage of adjacent rating pairs, over all tenors and surfaces, where
/// the worse rating yields less than the better one.
pub fn monotonicity_violations(surfaces: &[YieldSurface]) -> Result<f64, MetricsError> {
    let m: Vec<&Matrix> = surfaces.iter().map(|s| s.values()).collect();
    monotonicity_violations_matrices(&m)
}

pub fn monotonicity_violations_matrices(surfaces: &[&Matrix]) -> Result<f64, MetricsError> {
    let mut pairs = 0usize;
    let mut violations = 0usize;
    for m in surfaces {
        if m.rows() < 2 {
            return Err(MetricsError::TooFewRatings);
        }
        for i in 1..m.rows() {
            for j in 0..m.cols() {
                pairs += 1;
                if m.get(i, j) - m.get(i - 1, j) < -MONOTONICITY_TOL {
                    violations += 1;
                }
            }
        }
    }
    if pairs == 0 {
        return Ok(0.0);
    }
    Ok(100.0 * violations as f64 / pairs as f64)
}
