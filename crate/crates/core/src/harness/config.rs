//! Experiment configuration, read from TOML (or JSON).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::dae::{CnnSpec, DaeArchitecture, SearchSpace, TrainConfig};
use crate::masking::CorruptionSpec;
use crate::synthetic::SyntheticConfig;
use crate::tv::TvConfig;

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "YIELDPAINT_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Tv,
    Tps,
    Fcnn,
    Cnn,
    CnnPe,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Tv,
        Method::Tps,
        Method::Fcnn,
        Method::Cnn,
        Method::CnnPe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Tv => "tv",
            Method::Tps => "tps",
            Method::Fcnn => "fcnn",
            Method::Cnn => "cnn",
            Method::CnnPe => "cnn_pe",
        }
    }

    pub fn is_dae(self) -> bool {
        matches!(self, Method::Fcnn | Method::Cnn | Method::CnnPe)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskingKind {
    Uniform,
    Block,
}

impl MaskingKind {
    pub fn name(self) -> &'static str {
        match self {
            MaskingKind::Uniform => "uniform",
            MaskingKind::Block => "block",
        }
    }
}

impl fmt::Display for MaskingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataConfig {
    Synthetic { n_surfaces: usize },
    Csv { path: PathBuf },
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic { n_surfaces: 500 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformMasking {
    pub nu: f64,
}

/// Kept top-left block. Missing dimensions default to the upper-left
/// quadrant (`ceil(R/2) × ceil(T/2)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockMasking {
    pub keep_rows: Option<usize>,
    pub keep_cols: Option<usize>,
    pub nu_inside: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskingConfig {
    /// Within a `[masking]` table a kind runs only when its sub-table is
    /// present; omitting the whole table enables both.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniform: Option<UniformMasking>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<BlockMasking>,
    /// Corrupted replicas per surface.
    pub replicas: usize,
    /// Fraction of surfaces held out for testing.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self {
            uniform: Some(UniformMasking { nu: 0.75 }),
            block: Some(BlockMasking {
                keep_rows: None,
                keep_cols: None,
                nu_inside: 0.75,
            }),
            replicas: 10,
            holdout: 0.10,
            seed: 1,
        }
    }
}

impl MaskingConfig {
    /// Configured masking kinds in report order.
    pub fn kinds(&self) -> Vec<MaskingKind> {
        let mut out = Vec::new();
        if self.uniform.is_some() {
            out.push(MaskingKind::Uniform);
        }
        if self.block.is_some() {
            out.push(MaskingKind::Block);
        }
        out
    }

    pub fn spec(&self, kind: MaskingKind, rows: usize, cols: usize) -> Option<CorruptionSpec> {
        match kind {
            MaskingKind::Uniform => self
                .uniform
                .map(|u| CorruptionSpec::uniform(u.nu, self.seed)),
            MaskingKind::Block => self.block.map(|b| {
                CorruptionSpec::block(
                    b.keep_rows.unwrap_or(rows.div_ceil(2)),
                    b.keep_cols.unwrap_or(cols.div_ceil(2)),
                    b.nu_inside,
                    self.seed,
                )
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TpsSection {
    pub lambdas: Vec<f64>,
    /// Training pairs used to pick λ.
    pub validation_pairs: usize,
}

impl Default for TpsSection {
    fn default() -> Self {
        Self {
            lambdas: vec![0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
            validation_pairs: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TvSection {
    pub lambdas: Vec<f64>,
    pub validation_pairs: usize,
    /// Solver settings; `lambda` is replaced by the selected value.
    pub solver: TvConfig,
}

impl Default for TvSection {
    fn default() -> Self {
        Self {
            lambdas: vec![1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1],
            validation_pairs: 40,
            solver: TvConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DaeSection {
    pub fcnn_hidden: usize,
    pub cnn: CnnSpec,
    pub cnn_pe: CnnSpec,
    /// Optimiser and schedule. Corruption, replicas, holdout and seed come
    /// from `[masking]` and the global seed.
    pub train: TrainConfig,
    /// Random-search trials per architecture and masking; 0 disables search.
    pub search_budget: usize,
    pub search: SearchSpace,
}

impl Default for DaeSection {
    fn default() -> Self {
        Self {
            fcnn_hidden: 256,
            cnn: CnnSpec::default(),
            cnn_pe: CnnSpec::default(),
            // Capped so the default six-model run fits a single-core budget.
            train: TrainConfig {
                lr: 3e-3,
                epochs: 30,
                patience: 8,
                ..TrainConfig::default()
            },
            search_budget: 0,
            search: SearchSpace::default(),
        }
    }
}

impl DaeSection {
    pub fn architecture(&self, method: Method) -> Option<DaeArchitecture> {
        match method {
            Method::Fcnn => Some(DaeArchitecture::Fcnn {
                hidden: self.fcnn_hidden,
            }),
            Method::Cnn => Some(DaeArchitecture::Cnn(self.cnn.clone())),
            Method::CnnPe => Some(DaeArchitecture::CnnPe(self.cnn_pe.clone())),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportSection {
    /// Test pairs plotted per method and masking.
    pub plots: usize,
    pub write_markdown: bool,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            plots: 2,
            write_markdown: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub methods: Vec<Method>,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub synthetic: SyntheticConfig,
    pub masking: MaskingConfig,
    pub tps: TpsSection,
    pub tv: TvSection,
    pub dae: DaeSection,
    pub report: ReportSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            methods: Method::ALL.to_vec(),
            out_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            synthetic: SyntheticConfig::default(),
            masking: MaskingConfig::default(),
            tps: TpsSection::default(),
            tv: TvSection::default(),
            dae: DaeSection::default(),
            report: ReportSection::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        // Relative CSV paths are taken relative to the config file.
        if let DataConfig::Csv { path: csv } = &mut cfg.data {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    /// Applies `YIELDPAINT_SEED` if set.
    pub fn apply_env(&mut self) -> Result<(), HarnessError> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v.trim().parse().map_err(|_| {
                HarnessError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))
            })?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        if self.masking.kinds().is_empty() {
            return bad("at least one masking spec is required".into());
        }
        if self.masking.replicas == 0 {
            return bad("masking.replicas must be at least 1".into());
        }
        if !(self.masking.holdout > 0.0 && self.masking.holdout < 1.0) {
            return bad(format!(
                "masking.holdout {} outside (0, 1)",
                self.masking.holdout
            ));
        }
        if self.methods.contains(&Method::Tps) && self.tps.lambdas.is_empty() {
            return bad("tps.lambdas is empty".into());
        }
        if self.methods.contains(&Method::Tv) && self.tv.lambdas.is_empty() {
            return bad("tv.lambdas is empty".into());
        }
        if let DataConfig::Synthetic { n_surfaces: 0 } = self.data {
            return bad("data.n_surfaces must be positive".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(json))
    }

    /// Training settings for one DAE run under `spec`.
    pub fn train_config(&self, spec: CorruptionSpec) -> TrainConfig {
        TrainConfig {
            corruption: spec,
            replicas: self.masking.replicas,
            holdout: self.masking.holdout,
            seed: self.seed,
            ..self.dae.train.clone()
        }
    }

    /// Methods in report order, deduplicated.
    pub fn sorted_methods(&self) -> Vec<Method> {
        let mut m = self.methods.clone();
        m.sort();
        m.dedup();
        m
    }
}
