//! Corruption processes: uniform ν-masking and top-left block masking.
//!
//! Masked cells are drawn without replacement, so the number of zeroed
//! cells is exact rather than binomial.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::surface::{MaskedSurface, Matrix, SurfaceDataset, SurfaceError, YieldSurface};

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("masking fraction {0} outside [0, 1]")]
    BadFraction(f64),
    #[error("kept block {rows}x{cols} is empty or exceeds the {grid_rows}x{grid_cols} grid")]
    BadBlock {
        rows: usize,
        cols: usize,
        grid_rows: usize,
        grid_cols: usize,
    },
    #[error("replication count must be at least 1")]
    NoReplicas,
    #[error(transparent)]
    Surface(#[from] SurfaceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorruptionKind {
    /// Zero a fraction `nu` of all cells.
    Uniform { nu: f64 },
    /// Keep only the top-left `keep_rows × keep_cols` block, itself masked
    /// uniformly at `nu_inside`.
    Block {
        keep_rows: usize,
        keep_cols: usize,
        nu_inside: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    #[serde(flatten)]
    pub kind: CorruptionKind,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn uniform(nu: f64, seed: u64) -> Self {
        Self {
            kind: CorruptionKind::Uniform { nu },
            seed,
        }
    }

    pub fn block(keep_rows: usize, keep_cols: usize, nu_inside: f64, seed: u64) -> Self {
        Self {
            kind: CorruptionKind::Block {
                keep_rows,
                keep_cols,
                nu_inside,
            },
            seed,
        }
    }

    /// Block spec keeping the `ceil(R/2) × ceil(T/2)` top-left quadrant.
    pub fn quadrant(rows: usize, cols: usize, nu_inside: f64, seed: u64) -> Self {
        Self::block(rows.div_ceil(2), cols.div_ceil(2), nu_inside, seed)
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self, rows: usize, cols: usize) -> Result<(), MaskError> {
        match self.kind {
            CorruptionKind::Uniform { nu } => check_fraction(nu),
            CorruptionKind::Block {
                keep_rows,
                keep_cols,
                nu_inside,
            } => {
                if keep_rows == 0 || keep_cols == 0 || keep_rows > rows || keep_cols > cols {
                    return Err(MaskError::BadBlock {
                        rows: keep_rows,
                        cols: keep_cols,
                        grid_rows: rows,
                        grid_cols: cols,
                    });
                }
                check_fraction(nu_inside)
            }
        }
    }

    /// Applies the corruption using `rng` instead of the spec's own seed.
    pub fn apply_with(
        &self,
        values: &Matrix,
        rng: &mut impl Rng,
    ) -> Result<MaskedSurface, MaskError> {
        let (rows, cols) = values.shape();
        self.validate(rows, cols)?;
        let observed = match self.kind {
            CorruptionKind::Uniform { nu } => {
                let cells: Vec<usize> = (0..rows * cols).collect();
                uniform_mask(&cells, rows * cols, nu, rng)
            }
            CorruptionKind::Block {
                keep_rows,
                keep_cols,
                nu_inside,
            } => {
                let cells: Vec<usize> = (0..keep_rows)
                    .flat_map(|i| (0..keep_cols).map(move |j| i * cols + j))
                    .collect();
                uniform_mask(&cells, rows * cols, nu_inside, rng)
            }
        };
        Ok(MaskedSurface::new(values, observed)?)
    }

    pub fn apply(&self, values: &Matrix) -> Result<MaskedSurface, MaskError> {
        self.apply_with(values, &mut ChaCha8Rng::seed_from_u64(self.seed))
    }
}

fn check_fraction(nu: f64) -> Result<(), MaskError> {
    if (0.0..=1.0).contains(&nu) {
        Ok(())
    } else {
        Err(MaskError::BadFraction(nu))
    }
}

/// Number of cells zeroed when masking a fraction `nu` of `n` cells.
pub fn masked_count(nu: f64, n: usize) -> usize {
    ((nu * n as f64).round() as usize).min(n)
}

/// Observation mask of length `total` where only `candidates` may be
/// observed, and `round(nu · |candidates|)` of those are dropped.
fn uniform_mask(candidates: &[usize], total: usize, nu: f64, rng: &mut impl Rng) -> Vec<bool> {
    let mut observed = vec![false; total];
    for &c in candidates {
        observed[c] = true;
    }
    let drop = masked_count(nu, candidates.len());
    for k in index::sample(rng, candidates.len(), drop) {
        observed[candidates[k]] = false;
    }
    observed
}

pub fn mask_uniform(
    surface: &YieldSurface,
    nu: f64,
    seed: u64,
) -> Result<MaskedSurface, MaskError> {
    CorruptionSpec::uniform(nu, seed).apply(surface.values())
}

pub fn mask_block(
    surface: &YieldSurface,
    spec: &CorruptionSpec,
) -> Result<MaskedSurface, MaskError> {
    if !matches!(spec.kind, CorruptionKind::Block { .. }) {
        return Err(MaskError::BadBlock {
            rows: 0,
            cols: 0,
            grid_rows: surface.rows(),
            grid_cols: surface.cols(),
        });
    }
    spec.apply(surface.values())
}

/// A corrupted surface together with its clean target.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedPair {
    pub surface_index: usize,
    pub replica: usize,
    pub masked: MaskedSurface,
    pub target: YieldSurface,
}

/// `k` independently masked copies of every surface, surface-major order.
pub fn replicate_and_corrupt(
    dataset: &SurfaceDataset,
    spec: &CorruptionSpec,
    k: usize,
) -> Result<Vec<CorruptedPair>, MaskError> {
    replicate_indices(dataset, &(0..dataset.len()).collect::<Vec<_>>(), spec, k)
}

/// Like [`replicate_and_corrupt`] restricted to the surfaces at `indices`.
pub fn replicate_indices(
    dataset: &SurfaceDataset,
    indices: &[usize],
    spec: &CorruptionSpec,
    k: usize,
) -> Result<Vec<CorruptedPair>, MaskError> {
    if k == 0 {
        return Err(MaskError::NoReplicas);
    }
    let (rows, cols) = dataset.dims();
    spec.validate(rows, cols)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut pairs = Vec::with_capacity(indices.len() * k);
    for &idx in indices {
        let surface = &dataset.surfaces()[idx];
        for replica in 0..k {
            pairs.push(CorruptedPair {
                surface_index: idx,
                replica,
                masked: spec.apply_with(surface.values(), &mut rng)?,
                target: surface.clone(),
            });
        }
    }
    Ok(pairs)
}
