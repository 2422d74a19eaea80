//! Thin plate spline smoothing on the rating/tenor plane.
//!
//! The fitted surface is
//!
//! ```text
//! f(x) = Σ a_i u(|x − X_i|) + b0 + b1·x1 + b2·x2,   u(r) = r² ln r
//! ```
//!
//! with `Nᵀa = 0`. The coefficients come from the two-step elimination
//! `b = (Nᵀ K⁻¹ N)⁻¹ Nᵀ K⁻¹ Y`, `a = K⁻¹ (Y − N b)` where `K = M + λI`;
//! `λ = 0` gives exact interpolation. Any kernel scaling constant is
//! absorbed into `a`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::surface::{MaskedSurface, Matrix};

/// Relative singular-value threshold for treating knots as collinear.
const RANK_TOL: f64 = 1e-10;
const DUPLICATE_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum TpsError {
    #[error("need at least 3 knots, got {0}")]
    TooFewPoints(usize),
    #[error("knots are collinear; the affine part is not identifiable")]
    Collinear,
    #[error("knots {0} and {1} coincide")]
    DuplicateKnot(usize, usize),
    #[error("negative or non-finite lambda {0}")]
    BadLambda(f64),
    #[error("non-finite input at knot {0}")]
    NonFinite(usize),
    #[error("linear solve failed (condition estimate {condition:e})")]
    Singular { condition: f64 },
    #[error("cross-validation infeasible: {0}")]
    InfeasibleFolds(String),
    #[error("empty lambda grid")]
    EmptyGrid,
}

/// `r² ln r`, with the limit value 0 at `r = 0`.
pub fn tps_kernel(r: f64) -> f64 {
    if r <= 0.0 {
        0.0
    } else {
        r * r * r.ln()
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpsModel {
    pub knots: Vec<[f64; 2]>,
    /// Kernel coefficients, one per knot.
    pub a: Vec<f64>,
    /// Affine coefficients `(b0, b1, b2)`.
    pub b: [f64; 3],
    pub lambda: f64,
}

impl TpsModel {
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        let kernel: f64 = self
            .knots
            .iter()
            .zip(&self.a)
            .map(|(k, a)| a * tps_kernel(dist(x, *k)))
            .sum();
        kernel + self.b[0] + self.b[1] * x[0] + self.b[2] * x[1]
    }

    /// `max |Nᵀa|`, zero for a valid model.
    pub fn orthogonality_residual(&self) -> f64 {
        let mut s = [0.0; 3];
        for (k, a) in self.knots.iter().zip(&self.a) {
            s[0] += a;
            s[1] += a * k[0];
            s[2] += a * k[1];
        }
        s.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

pub fn tps_eval(model: &TpsModel, x: [f64; 2]) -> f64 {
    model.eval(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpsFitReport {
    /// `‖f(X) − Y‖₂` over the knots.
    pub residual_norm: f64,
    /// 2-norm condition number of `M + λI`.
    pub condition_estimate: f64,
    pub lambda: f64,
}

/// Kernel matrix `M_ij = u(|X_i − X_j|)`.
fn kernel_matrix(knots: &[[f64; 2]]) -> DMatrix<f64> {
    let m = knots.len();
    DMatrix::from_fn(m, m, |i, j| tps_kernel(dist(knots[i], knots[j])))
}

/// Rows `[1, x1, x2]`.
fn affine_matrix(knots: &[[f64; 2]]) -> DMatrix<f64> {
    DMatrix::from_fn(knots.len(), 3, |i, j| match j {
        0 => 1.0,
        1 => knots[i][0],
        _ => knots[i][1],
    })
}

fn validate(points: &[([f64; 2], f64)], lambda: f64) -> Result<(), TpsError> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(TpsError::BadLambda(lambda));
    }
    if points.len() < 3 {
        return Err(TpsError::TooFewPoints(points.len()));
    }
    for (i, (x, y)) in points.iter().enumerate() {
        if !(x[0].is_finite() && x[1].is_finite() && y.is_finite()) {
            return Err(TpsError::NonFinite(i));
        }
    }
    for i in 0..points.len() {
        for j in 0..i {
            if dist(points[i].0, points[j].0) <= DUPLICATE_TOL {
                return Err(TpsError::DuplicateKnot(j, i));
            }
        }
    }
    let knots: Vec<[f64; 2]> = points.iter().map(|p| p.0).collect();
    if !affine_full_rank(&knots) {
        return Err(TpsError::Collinear);
    }
    Ok(())
}

/// Whether `[1, X]` has full column rank.
pub fn affine_full_rank(knots: &[[f64; 2]]) -> bool {
    if knots.len() < 3 {
        return false;
    }
    // Centre the knots so the test is translation invariant.
    let n = knots.len() as f64;
    let cx = knots.iter().map(|k| k[0]).sum::<f64>() / n;
    let cy = knots.iter().map(|k| k[1]).sum::<f64>() / n;
    let centred = DMatrix::from_fn(knots.len(), 2, |i, j| {
        knots[i][j] - if j == 0 { cx } else { cy }
    });
    let sv = centred.singular_values();
    let max = sv.max();
    max > 0.0 && sv.min() > RANK_TOL * max
}

fn condition_number(k: &DMatrix<f64>) -> f64 {
    let sv = k.singular_values();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        sv.max() / min
    }
}

/// Fits a smoothing thin plate spline to `(knot, value)` pairs.
pub fn tps_fit(
    points: &[([f64; 2], f64)],
    lambda: f64,
) -> Result<(TpsModel, TpsFitReport), TpsError> {
    validate(points, lambda)?;
    let knots: Vec<[f64; 2]> = points.iter().map(|p| p.0).collect();
    let m = knots.len();
    let y = DVector::from_iterator(m, points.iter().map(|p| p.1));
    let mut k = kernel_matrix(&knots);
    for i in 0..m {
        k[(i, i)] += lambda;
    }
    let n = affine_matrix(&knots);
    let condition = condition_number(&k);
    let singular = || TpsError::Singular { condition };

    let lu = k.clone().lu();
    let k_inv_n = lu.solve(&n).ok_or_else(singular)?;
    let k_inv_y = lu.solve(&y).ok_or_else(singular)?;
    let ntk_n: Matrix3<f64> = (n.transpose() * &k_inv_n)
        .fixed_view::<3, 3>(0, 0)
        .into_owned();
    let ntk_y: Vector3<f64> = (n.transpose() * &k_inv_y)
        .fixed_view::<3, 1>(0, 0)
        .into_owned();
    let b = ntk_n.lu().solve(&ntk_y).ok_or_else(singular)?;
    let a = &k_inv_y - &k_inv_n * DVector::from_column_slice(b.as_slice());
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(singular());
    }

    let model = TpsModel {
        knots,
        a: a.iter().copied().collect(),
        b: [b[0], b[1], b[2]],
        lambda,
    };
    let residual_norm = points
        .iter()
        .map(|(x, v)| (model.eval(*x) - v).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok((
        model,
        TpsFitReport {
            residual_norm,
            condition_estimate: condition,
            lambda,
        },
    ))
}

/// Normalised coordinates of grid cell `(i, j)`: each index over `n − 1`.
pub fn grid_coords(i: usize, j: usize, rows: usize, cols: usize) -> [f64; 2] {
    let norm = |k: usize, n: usize| {
        if n > 1 {
            k as f64 / (n - 1) as f64
        } else {
            0.0
        }
    };
    [norm(i, rows), norm(j, cols)]
}

fn observed_points(masked: &MaskedSurface) -> Vec<([f64; 2], f64)> {
    let (rows, cols) = (masked.rows(), masked.cols());
    masked
        .observed_cells()
        .map(|(i, j, v)| (grid_coords(i, j, rows, cols), v))
        .collect()
}

/// Fits the observed cells and evaluates the spline on the whole grid.
pub fn tps_inpaint(masked: &MaskedSurface, lambda: f64) -> Result<Matrix, TpsError> {
    let (model, _) = tps_fit(&observed_points(masked), lambda)?;
    let (rows, cols) = (masked.rows(), masked.cols());
    Ok(Matrix::from_fn(rows, cols, |i, j| {
        model.eval(grid_coords(i, j, rows, cols))
    }))
}

/// Fold of the `p`-th observed cell (row-major order).
pub fn fold_of(p: usize, folds: usize) -> usize {
    p % folds
}

/// Held-out squared-error per grid value, pooled over all folds.
pub fn tps_cv_errors(
    masked: &MaskedSurface,
    lambda_grid: &[f64],
    folds: usize,
) -> Result<Vec<f64>, TpsError> {
    if lambda_grid.is_empty() {
        return Err(TpsError::EmptyGrid);
    }
    let points = observed_points(masked);
    if folds < 2 || points.len() < folds {
        return Err(TpsError::InfeasibleFolds(format!(
            "{} observed points cannot be split into {folds} folds",
            points.len()
        )));
    }
    let splits: Vec<(Vec<([f64; 2], f64)>, Vec<([f64; 2], f64)>)> = (0..folds)
        .map(|f| {
            let (test, train): (Vec<_>, Vec<_>) = points
                .iter()
                .enumerate()
                .partition(|(p, _)| fold_of(*p, folds) == f);
            (
                train.into_iter().map(|(_, x)| *x).collect(),
                test.into_iter().map(|(_, x)| *x).collect(),
            )
        })
        .collect();
    for (f, (train, _)) in splits.iter().enumerate() {
        let knots: Vec<[f64; 2]> = train.iter().map(|p| p.0).collect();
        if !affine_full_rank(&knots) {
            return Err(TpsError::InfeasibleFolds(format!(
                "training split of fold {f} is collinear or too small"
            )));
        }
    }
    lambda_grid
        .iter()
        .map(|&lambda| {
            if !(lambda.is_finite() && lambda >= 0.0) {
                return Err(TpsError::BadLambda(lambda));
            }
            let mut sse = 0.0;
            for (train, test) in &splits {
                match tps_fit(train, lambda) {
                    Ok((model, _)) => {
                        sse += test
                            .iter()
                            .map(|(x, y)| (model.eval(*x) - y).powi(2))
                            .sum::<f64>()
                    }
                    Err(TpsError::Singular { .. }) => return Ok(f64::INFINITY),
                    Err(e) => return Err(e),
                }
            }
            Ok(sse / points.len() as f64)
        })
        .collect()
}

/// Index of the smallest score; near-ties go to the larger lambda.
pub fn select_lambda(lambda_grid: &[f64], scores: &[f64]) -> Option<usize> {
    let mut order: Vec<usize> = (0..lambda_grid.len()).collect();
    order.sort_by(|&x, &y| lambda_grid[y].total_cmp(&lambda_grid[x]));
    let mut best: Option<usize> = None;
    for idx in order {
        let s = scores[idx];
        if !s.is_finite() {
            continue;
        }
        match best {
            None => best = Some(idx),
            Some(b) => {
                let tol = 1e-9 * scores[b].abs() + 1e-15;
                if s < scores[b] - tol {
                    best = Some(idx);
                }
            }
        }
    }
    best
}

/// K-fold cross-validated choice of λ from `lambda_grid`.
pub fn tps_cross_validate(
    masked: &MaskedSurface,
    lambda_grid: &[f64],
    folds: usize,
) -> Result<f64, TpsError> {
    let scores = tps_cv_errors(masked, lambda_grid, folds)?;
    select_lambda(lambda_grid, &scores)
        .map(|i| lambda_grid[i])
        .ok_or(TpsError::Singular {
            condition: f64::INFINITY,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_values() {
        assert_eq!(tps_kernel(0.0), 0.0);
        assert_eq!(tps_kernel(1.0), 0.0);
        let e = std::f64::consts::E;
        assert!((tps_kernel(e) - e * e).abs() < 1e-12);
    }

    #[test]
    fn plane_is_reproduced_for_any_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<_> = (0..12)
            .map(|_| {
                let x = [rng.gen::<f64>(), rng.gen::<f64>()];
                (x, 1.0 + 2.0 * x[0] + 3.0 * x[1])
            })
            .collect();
        for lambda in [0.0, 0.01, 1.0, 100.0] {
            let (m, _) = tps_fit(&pts, lambda).unwrap();
            assert!(
                m.a.iter().all(|a| a.abs() <= 1e-8),
                "lambda {lambda}: {:?}",
                m.a
            );
            assert!((m.b[0] - 1.0).abs() <= 1e-8);
            assert!((m.b[1] - 2.0).abs() <= 1e-8);
            assert!((m.b[2] - 3.0).abs() <= 1e-8);
        }
    }

    #[test]
    fn unit_square_corners_interpolated() {
        let pts = [
            ([0.0, 0.0], 0.0),
            ([1.0, 0.0], 0.0),
            ([0.0, 1.0], 0.0),
            ([1.0, 1.0], 1.0),
        ];
        let (m, rep) = tps_fit(&pts, 0.0).unwrap();
        for (x, y) in pts {
            assert!((m.eval(x) - y).abs() <= 1e-6);
        }
        assert!(rep.residual_norm <= 1e-6);
        assert!(m.orthogonality_residual() <= 1e-8);
    }

    #[test]
    fn affine_only_model_is_constant() {
        let m = TpsModel {
            knots: vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            a: vec![0.0; 3],
            b: [0.7, 0.0, 0.0],
            lambda: 0.0,
        };
        assert_eq!(tps_eval(&m, [0.3, 5.0]), 0.7);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let line = [
            ([0.0, 0.0], 1.0),
            ([0.5, 0.5], 1.0),
            ([1.0, 1.0], 1.0),
            ([2.0, 2.0], 1.0),
        ];
        assert_eq!(tps_fit(&line, 0.0).unwrap_err(), TpsError::Collinear);
        let dup = [
            ([0.0, 0.0], 1.0),
            ([0.0, 0.0], 2.0),
            ([1.0, 0.0], 1.0),
            ([0.0, 1.0], 1.0),
        ];
        assert!(matches!(
            tps_fit(&dup, 0.0),
            Err(TpsError::DuplicateKnot(0, 1))
        ));
        assert_eq!(
            tps_fit(&dup[..2], 0.0).unwrap_err(),
            TpsError::TooFewPoints(2)
        );
        assert!(matches!(tps_fit(&line, -1.0), Err(TpsError::BadLambda(_))));
    }

    #[test]
    fn inpaint_fully_observed_and_constant() {
        let truth = Matrix::from_fn(13, 15, |i, j| {
            0.02 + 0.002 * i as f64 + 0.01 * (1.0 - (-(j as f64) / 4.0).exp())
        });
        let full = MaskedSurface::fully_observed(&truth);
        let rec = tps_inpaint(&full, 0.0).unwrap();
        assert!(rec.max_abs_diff(&truth) <= 1e-6);

        let c = Matrix::filled(13, 15, 0.035);
        let mask: Vec<bool> = (0..195).map(|k| k % 4 == 1 || k == 0).collect();
        let masked = MaskedSurface::new(&c, mask).unwrap();
        for lambda in [0.0, 0.1] {
            assert!(tps_inpaint(&masked, lambda).unwrap().max_abs_diff(&c) <= 1e-6);
        }
    }

    #[test]
    fn inpaint_needs_three_points() {
        let c = Matrix::filled(3, 3, 0.03);
        let mut mask = vec![false; 9];
        mask[0] = true;
        mask[4] = true;
        let masked = MaskedSurface::new(&c, mask).unwrap();
        assert!(matches!(
            tps_inpaint(&masked, 0.0),
            Err(TpsError::TooFewPoints(2))
        ));
    }

    #[test]
    fn cross_validation_plane_prefers_largest() {
        let plane = Matrix::from_fn(13, 15, |i, j| 0.01 + 0.003 * i as f64 + 0.001 * j as f64);
        let masked = MaskedSurface::fully_observed(&plane);
        let grid = [0.0, 0.01, 1.0, 10.0];
        assert_eq!(tps_cross_validate(&masked, &grid, 5).unwrap(), 10.0);
        assert_eq!(tps_cross_validate(&masked, &[0.3], 5).unwrap(), 0.3);
        assert!(matches!(
            tps_cross_validate(&masked, &grid, 1),
            Err(TpsError::InfeasibleFolds(_))
        ));
        assert_eq!(
            tps_cross_validate(&masked, &[], 5).unwrap_err(),
            TpsError::EmptyGrid
        );
    }

    #[test]
    fn select_lambda_breaks_ties_upward() {
        assert_eq!(select_lambda(&[0.0, 1.0, 2.0], &[1.0, 1.0, 1.0]), Some(2));
        assert_eq!(select_lambda(&[0.0, 1.0, 2.0], &[0.5, 1.0, 1.0]), Some(0));
        assert_eq!(
            select_lambda(&[0.0, 1.0], &[f64::INFINITY, f64::INFINITY]),
            None
        );
    }
}
