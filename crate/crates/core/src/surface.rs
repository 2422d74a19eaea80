//! Rating/tenor grids, yield surfaces, masks and datasets.
//!
//! Yields are stored in decimal units throughout (0.05 = 5% = 500 bps).
//! Basis-point conversion happens only when metrics are reported.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rating labels of the default grid, best first.
pub const DEFAULT_RATINGS: [&str; 13] = [
    "AAA", "AA", "A+", "A", "A-", "BBB+", "BBB", "BBB-", "BB+", "BB", "BB-", "B+", "B",
];

/// Tenors of the default grid, in years.
pub const DEFAULT_TENORS: [f64; 15] = [
    0.25, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 7.0, 8.0, 9.0, 10.0, 15.0, 20.0, 25.0, 30.0,
];

const TENOR_MATCH_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SurfaceError {
    #[error("rating labels must be unique and non-empty (offending label {0:?})")]
    BadRatingGrid(String),
    #[error("tenors must be positive and strictly increasing")]
    BadTenorGrid,
    #[error("surface is {got_rows}x{got_cols}, grid is {rows}x{cols}")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error("yield at ({row}, {col}) is {value}, expected finite and non-negative")]
    BadYield { row: usize, col: usize, value: f64 },
    #[error("masked surface has no observed cells")]
    NothingObserved,
    #[error("dataset contains no positive yield; cannot scale")]
    AllZero,
    #[error("dataset is empty")]
    Empty,
    #[error("cannot pad {rows}x{cols} to {target_rows}x{target_cols}")]
    PadTooSmall {
        rows: usize,
        cols: usize,
        target_rows: usize,
        target_cols: usize,
    },
    #[error("missing cell for date {date}, rating {rating}, tenor {tenor}")]
    MissingCell {
        date: NaiveDate,
        rating: String,
        tenor: f64,
    },
    #[error("duplicate cell for date {date}, rating {rating}, tenor {tenor}")]
    DuplicateCell {
        date: NaiveDate,
        rating: String,
        tenor: f64,
    },
    #[error("unknown rating label {0:?}")]
    UnknownRating(String),
    #[error("unknown tenor {0}")]
    UnknownTenor(f64),
    #[error("non-finite yield for date {date}, rating {rating}, tenor {tenor}")]
    NonFiniteYield {
        date: NaiveDate,
        rating: String,
        tenor: f64,
    },
    #[error("invalid synthetic config: {0}")]
    BadSyntheticConfig(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Dense row-major matrix of reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Ordered rating labels, best rating first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingGrid {
    labels: Vec<String>,
}

impl RatingGrid {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self, SurfaceError> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(SurfaceError::BadRatingGrid(String::new()));
        }
        let mut seen = HashSet::new();
        for label in &labels {
            if label.is_empty() || !seen.insert(label.as_str()) {
                return Err(SurfaceError::BadRatingGrid(label.clone()));
            }
        }
        Ok(Self { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

impl Default for RatingGrid {
    fn default() -> Self {
        Self {
            labels: DEFAULT_RATINGS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Strictly increasing tenors in years.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TenorGrid {
    tenors: Vec<f64>,
}

impl TenorGrid {
    pub fn new(tenors: Vec<f64>) -> Result<Self, SurfaceError> {
        if tenors.is_empty()
            || tenors.iter().any(|t| !(t.is_finite() && *t > 0.0))
            || tenors.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(SurfaceError::BadTenorGrid);
        }
        Ok(Self { tenors })
    }

    pub fn len(&self) -> usize {
        self.tenors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tenors.is_empty()
    }

    pub fn tenors(&self) -> &[f64] {
        &self.tenors
    }

    pub fn index_of(&self, tenor: f64) -> Option<usize> {
        self.tenors
            .iter()
            .position(|t| (t - tenor).abs() <= TENOR_MATCH_TOL * t.max(1.0))
    }
}

impl Default for TenorGrid {
    fn default() -> Self {
        Self {
            tenors: DEFAULT_TENORS.to_vec(),
        }
    }
}

/// A dated rating × tenor matrix of yields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YieldSurface {
    date: NaiveDate,
    values: Matrix,
}

impl YieldSurface {
    pub fn new(date: NaiveDate, values: Matrix) -> Result<Self, SurfaceError> {
        for i in 0..values.rows() {
            for j in 0..values.cols() {
                let v = values.get(i, j);
                if !(v.is_finite() && v >= 0.0) {
                    return Err(SurfaceError::BadYield {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
        }
        Ok(Self { date, values })
    }

    pub fn date(&self) -> NaiveDate {
        self.date
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }
}

/// A surface with an observation mask. Unobserved cells hold 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedSurface {
    values: Matrix,
    observed: Vec<bool>,
}

impl MaskedSurface {
    /// Builds a masked surface, zeroing every unobserved cell of `values`.
    pub fn new(values: &Matrix, observed: Vec<bool>) -> Result<Self, SurfaceError> {
        assert_eq!(observed.len(), values.len(), "mask length");
        if !observed.iter().any(|&o| o) {
            return Err(SurfaceError::NothingObserved);
        }
        let data = values
            .as_slice()
            .iter()
            .zip(&observed)
            .map(|(&v, &o)| if o { v } else { 0.0 })
            .collect();
        Ok(Self {
            values: Matrix::from_vec(values.rows(), values.cols(), data),
            observed,
        })
    }

    pub fn fully_observed(values: &Matrix) -> Self {
        Self {
            values: values.clone(),
            observed: vec![true; values.len()],
        }
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.observed
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[i * self.values.cols() + j]
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    /// `(row, col, value)` for every observed cell in row-major order.
    pub fn observed_cells(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let cols = self.values.cols();
        self.observed
            .iter()
            .enumerate()
            .filter(|(_, &o)| o)
            .map(move |(k, _)| (k / cols, k % cols, self.values.as_slice()[k]))
    }

    /// Same mask applied to values multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.map(|v| v * factor),
            observed: self.observed.clone(),
        }
    }
}

/// Surfaces sharing one grid pair, optionally scaled to unit maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceDataset {
    ratings: RatingGrid,
    tenors: TenorGrid,
    surfaces: Vec<YieldSurface>,
    scale_factor: f64,
}

impl SurfaceDataset {
    pub fn new(
        ratings: RatingGrid,
        tenors: TenorGrid,
        surfaces: Vec<YieldSurface>,
    ) -> Result<Self, SurfaceError> {
        for s in &surfaces {
            if s.rows() != ratings.len() || s.cols() != tenors.len() {
                return Err(SurfaceError::ShapeMismatch {
                    rows: ratings.len(),
                    cols: tenors.len(),
                    got_rows: s.rows(),
                    got_cols: s.cols(),
                });
            }
        }
        Ok(Self {
            ratings,
            tenors,
            surfaces,
            scale_factor: 1.0,
        })
    }

    pub fn ratings(&self) -> &RatingGrid {
        &self.ratings
    }

    pub fn tenors(&self) -> &TenorGrid {
        &self.tenors
    }

    pub fn surfaces(&self) -> &[YieldSurface] {
        &self.surfaces
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    /// Factor the stored yields were multiplied by; 1 if unscaled.
    pub fn scale_factor(&self) -> f64 {
        self.scale_factor
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.ratings.len(), self.tenors.len())
    }

    /// Keeps the surfaces at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            ratings: self.ratings.clone(),
            tenors: self.tenors.clone(),
            surfaces: indices.iter().map(|&i| self.surfaces[i].clone()).collect(),
            scale_factor: self.scale_factor,
        }
    }

    fn max_yield(&self) -> f64 {
        self.surfaces
            .iter()
            .map(|s| s.values.max())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn rescaled(&self, factor: f64, new_scale: f64) -> Self {
        Self {
            ratings: self.ratings.clone(),
            tenors: self.tenors.clone(),
            surfaces: self
                .surfaces
                .iter()
                .map(|s| YieldSurface {
                    date: s.date,
                    values: s.values.map(|v| v * factor),
                })
                .collect(),
            scale_factor: new_scale,
        }
    }

    /// Divides every yield by the dataset-wide maximum.
    pub fn scale_to_unit(&self) -> Result<Self, SurfaceError> {
        if self.surfaces.is_empty() {
            return Err(SurfaceError::Empty);
        }
        let max = self.max_yield();
        if !(max > 0.0) {
            return Err(SurfaceError::AllZero);
        }
        if max == 1.0 {
            return Ok(self.clone());
        }
        let factor = 1.0 / max;
        Ok(self.rescaled(factor, self.scale_factor * factor))
    }

    /// Undoes every scaling applied so far.
    pub fn descale(&self) -> Self {
        if self.scale_factor == 1.0 {
            return self.clone();
        }
        self.rescaled(1.0 / self.scale_factor, 1.0)
    }
}

/// Pads `values` to `rows × cols`, replicating the nearest edge value.
pub fn pad_surface(values: &Matrix, rows: usize, cols: usize) -> Result<Matrix, SurfaceError> {
    if rows < values.rows() || cols < values.cols() || values.is_empty() {
        return Err(SurfaceError::PadTooSmall {
            rows: values.rows(),
            cols: values.cols(),
            target_rows: rows,
            target_cols: cols,
        });
    }
    let (r, c) = values.shape();
    Ok(Matrix::from_fn(rows, cols, |i, j| {
        values.get(i.min(r - 1), j.min(c - 1))
    }))
}

/// Inverse of [`pad_surface`]: keeps the top-left `rows × cols` block.
pub fn crop_surface(values: &Matrix, rows: usize, cols: usize) -> Result<Matrix, SurfaceError> {
    if rows > values.rows() || cols > values.cols() {
        return Err(SurfaceError::PadTooSmall {
            rows,
            cols,
            target_rows: values.rows(),
            target_cols: values.cols(),
        });
    }
    Ok(Matrix::from_fn(rows, cols, |i, j| values.get(i, j)))
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    date: NaiveDate,
    rating: String,
    tenor_years: f64,
    #[serde(rename = "yield")]
    value: f64,
}

/// Loads a surface CSV on the default 13 × 15 grid.
pub fn load_csv(path: impl AsRef<Path>) -> Result<SurfaceDataset, SurfaceError> {
    load_csv_with_grids(path, RatingGrid::default(), TenorGrid::default())
}

pub fn load_csv_with_grids(
    path: impl AsRef<Path>,
    ratings: RatingGrid,
    tenors: TenorGrid,
) -> Result<SurfaceDataset, SurfaceError> {
    let file = std::fs::File::open(path)?;
    read_csv(file, ratings, tenors)
}

/// Reads `date,rating,tenor_years,yield` rows; one surface per distinct date.
pub fn read_csv(
    reader: impl Read,
    ratings: RatingGrid,
    tenors: TenorGrid,
) -> Result<SurfaceDataset, SurfaceError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let (r, t) = (ratings.len(), tenors.len());
    let mut by_date: BTreeMap<NaiveDate, (Vec<f64>, Vec<bool>)> = BTreeMap::new();
    for row in rdr.deserialize() {
        let row: CsvRow = row?;
        let i = ratings
            .index_of(&row.rating)
            .ok_or_else(|| SurfaceError::UnknownRating(row.rating.clone()))?;
        let j = tenors
            .index_of(row.tenor_years)
            .ok_or(SurfaceError::UnknownTenor(row.tenor_years))?;
        if !row.value.is_finite() {
            return Err(SurfaceError::NonFiniteYield {
                date: row.date,
                rating: row.rating,
                tenor: row.tenor_years,
            });
        }
        let entry = by_date
            .entry(row.date)
            .or_insert_with(|| (vec![0.0; r * t], vec![false; r * t]));
        if entry.1[i * t + j] {
            return Err(SurfaceError::DuplicateCell {
                date: row.date,
                rating: row.rating,
                tenor: row.tenor_years,
            });
        }
        entry.0[i * t + j] = row.value;
        entry.1[i * t + j] = true;
    }
    let mut surfaces = Vec::with_capacity(by_date.len());
    for (date, (values, seen)) in by_date {
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(SurfaceError::MissingCell {
                date,
                rating: ratings.labels()[k / t].clone(),
                tenor: tenors.tenors()[k % t],
            });
        }
        surfaces.push(YieldSurface::new(date, Matrix::from_vec(r, t, values))?);
    }
    SurfaceDataset::new(ratings, tenors, surfaces)
}

/// Writes the dataset's yields (descaled) with nine decimals.
pub fn write_csv(dataset: &SurfaceDataset, writer: impl Write) -> Result<(), SurfaceError> {
    let dataset = dataset.descale();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "rating", "tenor_years", "yield"])?;
    for s in dataset.surfaces() {
        let date = s.date().format("%Y-%m-%d").to_string();
        for (i, label) in dataset.ratings().labels().iter().enumerate() {
            for (j, tenor) in dataset.tenors().tenors().iter().enumerate() {
                w.write_record([
                    date.as_str(),
                    label.as_str(),
                    &format!("{tenor}"),
                    &format!("{:.9}", s.values().get(i, j)),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(dataset: &SurfaceDataset, path: impl AsRef<Path>) -> Result<(), SurfaceError> {
    let file = std::fs::File::create(path)?;
    write_csv(dataset, std::io::BufWriter::new(file))
}
