//! Synthetic corporate yield surfaces.
//!
//! Each surface is a Nelson–Siegel base curve plus a per-rating credit
//! spread with its own mild term structure. Spreads are weakly increasing in
//! rating ordinal, and a running maximum along the rating axis is applied
//! after the cell noise, so every generated surface is weakly monotone in
//! rating.

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::surface::{Matrix, RatingGrid, SurfaceDataset, SurfaceError, TenorGrid, YieldSurface};

const MIN_YIELD: f64 = 1e-4;
const MAX_YIELD: f64 = 0.2499;

/// Closed interval `[min, max]` a parameter is drawn from uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub min: f64,
    pub max: f64,
}

impl ParamRange {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.gen_range(self.min..=self.max)
        }
    }

    fn validate(&self, name: &str) -> Result<(), SurfaceError> {
        if !(self.min.is_finite() && self.max.is_finite()) || self.min > self.max {
            return Err(SurfaceError::BadSyntheticConfig(format!(
                "{name} range [{}, {}] is degenerate",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    /// Long-run level of the base curve.
    pub level: ParamRange,
    /// Short-end minus long-end; negative values give upward sloping curves.
    pub slope: ParamRange,
    pub curvature: ParamRange,
    /// Nelson–Siegel decay time in years.
    pub decay_years: ParamRange,
    /// Credit spread per rating, decimal, best rating first.
    pub spreads: Vec<f64>,
    /// Common multiplier applied to the whole spread schedule of a surface.
    pub spread_multiplier: ParamRange,
    /// Relative increase of spreads from the short to the long end.
    pub spread_term_slope: f64,
    pub spread_term_decay_years: f64,
    /// Half-width of the uniform per-cell noise.
    pub noise: f64,
    /// Rebuild the > 15y tenors of ratings from this ordinal down using
    /// the 15y yield plus the long-end spread of a generic index (the mean
    /// of the rows sharing the rating letter class).
    pub backfill_long_end_from: Option<usize>,
    pub start_date: NaiveDate,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            level: ParamRange::new(0.030, 0.045),
            slope: ParamRange::new(-0.025, -0.005),
            curvature: ParamRange::new(-0.015, 0.015),
            decay_years: ParamRange::new(1.0, 4.0),
            spreads: vec![
                0.0040, 0.0055, 0.0075, 0.0085, 0.0100, 0.0125, 0.0145, 0.0175, 0.0240, 0.0280,
                0.0330, 0.0390, 0.0440,
            ],
            spread_multiplier: ParamRange::new(0.7, 1.3),
            spread_term_slope: 0.5,
            spread_term_decay_years: 5.0,
            noise: 0.0002,
            backfill_long_end_from: None,
            start_date: NaiveDate::from_ymd_opt(2018, 1, 29).expect("valid date"),
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self, ratings: usize) -> Result<(), SurfaceError> {
        self.level.validate("level")?;
        self.slope.validate("slope")?;
        self.curvature.validate("curvature")?;
        self.decay_years.validate("decay_years")?;
        self.spread_multiplier.validate("spread_multiplier")?;
        let bad = |msg: &str| Err(SurfaceError::BadSyntheticConfig(msg.to_string()));
        if self.decay_years.min <= 0.0 {
            return bad("decay_years must be positive");
        }
        if self.spread_multiplier.min < 0.0 {
            return bad("spread_multiplier must be non-negative");
        }
        if self.spreads.len() != ratings {
            return bad("spreads must have one entry per rating");
        }
        if self.spreads.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("spreads must be finite and non-negative");
        }
        if self.spreads.windows(2).any(|w| w[1] < w[0]) {
            return bad("spreads must be weakly increasing in rating ordinal");
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad("noise must be non-negative");
        }
        if !(self.spread_term_slope.is_finite() && self.spread_term_slope > -1.0) {
            return bad("spread_term_slope must exceed -1");
        }
        if !(self.spread_term_decay_years > 0.0) {
            return bad("spread_term_decay_years must be positive");
        }
        Ok(())
    }
}

fn nelson_siegel(t: f64, level: f64, slope: f64, curvature: f64, decay: f64) -> f64 {
    let x = t / decay;
    let f1 = -(-x).exp_m1() / x;
    let f2 = f1 - (-x).exp();
    level + slope * f1 + curvature * f2
}

/// Nine decimals, the precision of the CSV format.
fn quantize(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}

fn letter_class(label: &str) -> &str {
    label.trim_end_matches(['+', '-'])
}

fn weekdays_from(start: NaiveDate) -> impl Iterator<Item = NaiveDate> {
    std::iter::successors(Some(start), |d| Some(*d + Duration::days(1)))
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
}

/// `n` surfaces on the default grid.
pub fn generate_synthetic(
    config: &SyntheticConfig,
    n: usize,
) -> Result<SurfaceDataset, SurfaceError> {
    generate_synthetic_on(config, n, RatingGrid::default(), TenorGrid::default())
}

pub fn generate_synthetic_on(
    config: &SyntheticConfig,
    n: usize,
    ratings: RatingGrid,
    tenors: TenorGrid,
) -> Result<SurfaceDataset, SurfaceError> {
    if n == 0 {
        return Err(SurfaceError::BadSyntheticConfig(
            "n must be at least 1".into(),
        ));
    }
    config.validate(ratings.len())?;
    let (r, t) = (ratings.len(), tenors.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut surfaces = Vec::with_capacity(n);
    for date in weekdays_from(config.start_date).take(n) {
        let level = config.level.sample(&mut rng);
        let slope = config.slope.sample(&mut rng);
        let curvature = config.curvature.sample(&mut rng);
        let decay = config.decay_years.sample(&mut rng);
        let mult = config.spread_multiplier.sample(&mut rng);
        let mut values = Matrix::zeros(r, t);
        for (j, &tenor) in tenors.tenors().iter().enumerate() {
            let base = nelson_siegel(tenor, level, slope, curvature, decay);
            let term = 1.0
                + config.spread_term_slope
                    * (1.0 - (-tenor / config.spread_term_decay_years).exp());
            for i in 0..r {
                let noise = if config.noise > 0.0 {
                    rng.gen_range(-config.noise..=config.noise)
                } else {
                    0.0
                };
                values.set(i, j, base + mult * config.spreads[i] * term + noise);
            }
        }
        if let Some(from) = config.backfill_long_end_from {
            backfill_long_end(&mut values, &ratings, tenors.tenors(), from);
        }
        for j in 0..t {
            let mut running = f64::NEG_INFINITY;
            for i in 0..r {
                running = running.max(values.get(i, j));
                values.set(i, j, quantize(running.clamp(MIN_YIELD, MAX_YIELD)));
            }
        }
        surfaces.push(YieldSurface::new(date, values)?);
    }
    SurfaceDataset::new(ratings, tenors, surfaces)
}

/// Replaces tenors beyond 15y for ratings `from..` with the 15y yield plus
/// the generic (letter-class mean) spread between that tenor and 15y.
fn backfill_long_end(values: &mut Matrix, ratings: &RatingGrid, tenors: &[f64], from: usize) {
    let Some(anchor) = tenors.iter().position(|&t| (t - 15.0).abs() < 1e-9) else {
        return;
    };
    let labels = ratings.labels();
    let original = values.clone();
    for i in from..labels.len() {
        let class = letter_class(&labels[i]);
        let members: Vec<usize> = (0..labels.len())
            .filter(|&k| letter_class(&labels[k]) == class)
            .collect();
        let generic = |j: usize| {
            members.iter().map(|&k| original.get(k, j)).sum::<f64>() / members.len() as f64
        };
        let g_anchor = generic(anchor);
        for j in anchor + 1..tenors.len() {
            values.set(i, j, original.get(i, anchor) + generic(j) - g_anchor);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::monotonicity_violations;

    #[test]
    fn zero_spread_zero_noise_rows_identical() {
        let cfg = SyntheticConfig {
            spreads: vec![0.0; 13],
            noise: 0.0,
            ..Default::default()
        };
        let ds = generate_synthetic(&cfg, 5).unwrap();
        for s in ds.surfaces() {
            for i in 1..13 {
                assert_eq!(s.values().row(i), s.values().row(0));
            }
        }
        assert_eq!(monotonicity_violations(ds.surfaces()).unwrap(), 0.0);
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SyntheticConfig::default();
        let a = generate_synthetic(&cfg, 20).unwrap();
        let b = generate_synthetic(&cfg, 20).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticConfig { seed: 8, ..cfg }, 20).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn default_500_has_no_violations_and_bounded_yields() {
        let ds = generate_synthetic(&SyntheticConfig::default(), 500).unwrap();
        assert_eq!(ds.len(), 500);
        assert_eq!(monotonicity_violations(ds.surfaces()).unwrap(), 0.0);
        for s in ds.surfaces() {
            assert!(s.values().as_slice().iter().all(|&v| v > 0.0 && v < 0.25));
        }
    }

    #[test]
    fn degenerate_range_rejected() {
        let cfg = SyntheticConfig {
            level: ParamRange::new(0.05, 0.04),
            ..Default::default()
        };
        assert!(matches!(
            generate_synthetic(&cfg, 3),
            Err(SurfaceError::BadSyntheticConfig(_))
        ));
        assert!(generate_synthetic(&SyntheticConfig::default(), 0).is_err());
    }

    #[test]
    fn decreasing_spreads_rejected() {
        let mut spreads = SyntheticConfig::default().spreads;
        spreads.swap(0, 12);
        let cfg = SyntheticConfig {
            spreads,
            ..Default::default()
        };
        assert!(generate_synthetic(&cfg, 1).is_err());
    }

    #[test]
    fn dates_skip_weekends() {
        let ds = generate_synthetic(&SyntheticConfig::default(), 6).unwrap();
        let dates: Vec<_> = ds.surfaces().iter().map(|s| s.date()).collect();
        assert!(dates
            .iter()
            .all(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun)));
        assert_eq!(dates[5], NaiveDate::from_ymd_opt(2018, 2, 5).unwrap());
    }

    #[test]
    fn backfill_keeps_monotonicity_and_moves_long_end() {
        let base = SyntheticConfig::default();
        let plain = generate_synthetic(&base, 3).unwrap();
        let filled = generate_synthetic(
            &SyntheticConfig {
                backfill_long_end_from: Some(8),
                ..base
            },
            3,
        )
        .unwrap();
        assert_eq!(monotonicity_violations(filled.surfaces()).unwrap(), 0.0);
        let (p, f) = (plain.surfaces()[0].values(), filled.surfaces()[0].values());
        // Investment grade rows untouched.
        assert_eq!(p.row(0), f.row(0));
        assert_eq!(p.get(12, 11), f.get(12, 11));
        assert_ne!(p.get(12, 14), f.get(12, 14));
    }
}
