//! Denoising autoencoders for yield surfaces.
//!
//! Three variants share one training loop: a dense network with a single
//! overcomplete hidden layer, a small convolutional encoder/decoder, and the
//! same convolutional stack fed two extra coordinate channels. Convolutional
//! inputs are edge-padded to a square power-of-two grid; the loss only
//! looks at the unpadded `R × T` block.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derive_seed;
use crate::masking::{replicate_indices, CorruptedPair, CorruptionSpec, MaskError};
use crate::neural::{
    load_checkpoint, save_checkpoint, AdamConfig, AdamState, BatchNorm, Conv2d, Dense, Layer, Mode,
    Network, NeuralError, Tensor,
};
use crate::surface::{pad_surface, MaskedSurface, Matrix, SurfaceDataset, SurfaceError};

#[derive(Debug, Error)]
pub enum DaeError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("{surfaces} surfaces with holdout {holdout} leave an empty train or test side")]
    TooSmall { surfaces: usize, holdout: f64 },
    #[error("input is {got_rows}x{got_cols}, model expects {rows}x{cols}")]
    DimMismatch {
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("empty search space: {0}")]
    EmptySearchSpace(String),
    #[error("checkpoint metadata: {0}")]
    Metadata(String),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Max,
    Average,
}

/// Convolutional stack: each encoder stage is conv → ReLU → BN → pool, then a
/// bottleneck conv, then one upsample + conv stage per entry of `decoder`
/// and a final upsample + single-filter sigmoid conv.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnSpec {
    pub encoder: Vec<usize>,
    pub bottleneck: usize,
    /// One fewer entry than `encoder`.
    pub decoder: Vec<usize>,
    pub pooling: Pooling,
}

impl Default for CnnSpec {
    fn default() -> Self {
        Self {
            encoder: vec![16, 8],
            bottleneck: 8,
            decoder: vec![16],
            pooling: Pooling::Max,
        }
    }
}

impl CnnSpec {
    /// Symmetric stack of `depth` pooling stages, `filters` wide at the
    /// outermost stage and halving inward (never below 4).
    pub fn with_depth(depth: usize, filters: usize) -> Self {
        let encoder: Vec<usize> = (0..depth).map(|k| (filters >> k).max(4)).collect();
        let bottleneck = *encoder.last().unwrap_or(&filters);
        let decoder = encoder[..depth.saturating_sub(1)]
            .iter()
            .rev()
            .copied()
            .collect();
        Self {
            encoder,
            bottleneck,
            decoder,
            pooling: Pooling::Max,
        }
    }

    fn validate(&self) -> Result<(), DaeError> {
        if self.encoder.is_empty() {
            return Err(DaeError::BadConfig(
                "cnn needs at least one encoder stage".into(),
            ));
        }
        if self.decoder.len() + 1 != self.encoder.len() {
            return Err(DaeError::BadConfig(format!(
                "cnn decoder has {} stages, expected {}",
                self.decoder.len(),
                self.encoder.len() - 1
            )));
        }
        if self.encoder.iter().chain(&self.decoder).any(|&f| f == 0) || self.bottleneck == 0 {
            return Err(DaeError::BadConfig(
                "cnn filter counts must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DaeArchitecture {
    Fcnn {
        hidden: usize,
    },
    Cnn(CnnSpec),
    /// Channels are (surface, rating ramp, tenor ramp).
    CnnPe(CnnSpec),
}

impl Default for DaeArchitecture {
    fn default() -> Self {
        DaeArchitecture::Fcnn { hidden: 256 }
    }
}

/// Side of the square grid convolutional inputs are padded to.
pub fn padded_side(rows: usize, cols: usize) -> usize {
    rows.max(cols).max(1).next_power_of_two()
}

fn he_limit(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl DaeArchitecture {
    pub fn name(&self) -> &'static str {
        match self {
            DaeArchitecture::Fcnn { .. } => "fcnn",
            DaeArchitecture::Cnn(_) => "cnn",
            DaeArchitecture::CnnPe(_) => "cnn_pe",
        }
    }

    pub fn default_cnn() -> Self {
        DaeArchitecture::Cnn(CnnSpec::default())
    }

    pub fn default_cnn_pe() -> Self {
        DaeArchitecture::CnnPe(CnnSpec::default())
    }

    pub fn cnn_spec(&self) -> Option<&CnnSpec> {
        match self {
            DaeArchitecture::Cnn(s) | DaeArchitecture::CnnPe(s) => Some(s),
            DaeArchitecture::Fcnn { .. } => None,
        }
    }

    /// Per-sample network input shape for an `rows × cols` grid.
    pub fn input_shape(&self, rows: usize, cols: usize) -> Vec<usize> {
        let side = padded_side(rows, cols);
        match self {
            DaeArchitecture::Fcnn { .. } => vec![rows * cols],
            DaeArchitecture::Cnn(_) => vec![1, side, side],
            DaeArchitecture::CnnPe(_) => vec![3, side, side],
        }
    }

    pub fn validate(&self, rows: usize, cols: usize) -> Result<(), DaeError> {
        match self {
            DaeArchitecture::Fcnn { hidden } => {
                if *hidden <= rows * cols {
                    return Err(DaeError::BadConfig(format!(
                        "fcnn hidden width {hidden} must exceed the input size {}",
                        rows * cols
                    )));
                }
            }
            DaeArchitecture::Cnn(spec) | DaeArchitecture::CnnPe(spec) => {
                spec.validate()?;
                let side = padded_side(rows, cols);
                if !side.is_multiple_of(1 << spec.encoder.len()) {
                    return Err(DaeError::BadConfig(format!(
                        "padded side {side} is not divisible by 2^{}",
                        spec.encoder.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Fresh network: He-uniform weights ahead of ReLU, Glorot-uniform for
    /// the sigmoid output layer, zero biases.
    pub fn build(&self, rows: usize, cols: usize, rng: &mut impl Rng) -> Result<Network, DaeError> {
        self.validate(rows, cols)?;
        let mut layers = Vec::new();
        match self {
            DaeArchitecture::Fcnn { hidden } => {
                let d = rows * cols;
                layers.push(Layer::Dense(Dense::uniform(d, *hidden, he_limit(d), rng)));
                layers.push(Layer::relu());
                layers.push(Layer::BatchNorm(BatchNorm::new(*hidden)));
                layers.push(Layer::Dense(Dense::uniform(
                    *hidden,
                    d,
                    glorot_limit(*hidden, d),
                    rng,
                )));
                layers.push(Layer::sigmoid());
            }
            DaeArchitecture::Cnn(spec) | DaeArchitecture::CnnPe(spec) => {
                let pool = match spec.pooling {
                    Pooling::Max => Layer::MaxPool2x2,
                    Pooling::Average => Layer::AvgPool2x2,
                };
                let mut ch = self.input_shape(rows, cols)[0];
                let hidden = |layers: &mut Vec<Layer>, ch: &mut usize, out: usize, rng: &mut _| {
                    layers.push(Layer::Conv2d(Conv2d::uniform(
                        *ch,
                        out,
                        he_limit(*ch * 9),
                        rng,
                    )));
                    layers.push(Layer::relu());
                    layers.push(Layer::BatchNorm(BatchNorm::new(out)));
                    *ch = out;
                };
                for &f in &spec.encoder {
                    hidden(&mut layers, &mut ch, f, rng);
                    layers.push(pool.clone());
                }
                hidden(&mut layers, &mut ch, spec.bottleneck, rng);
                for &f in &spec.decoder {
                    layers.push(Layer::Upsample2x2);
                    hidden(&mut layers, &mut ch, f, rng);
                }
                layers.push(Layer::Upsample2x2);
                layers.push(Layer::Conv2d(Conv2d::uniform(
                    ch,
                    1,
                    glorot_limit(ch * 9, 9),
                    rng,
                )));
                layers.push(Layer::sigmoid());
            }
        }
        Ok(Network::new(self.input_shape(rows, cols), layers)?)
    }

    /// Network input for one masked surface (values in scaled units).
    pub fn format_input(&self, masked: &Matrix) -> Result<Vec<f64>, DaeError> {
        let (rows, cols) = masked.shape();
        match self {
            DaeArchitecture::Fcnn { .. } => Ok(masked.as_slice().to_vec()),
            DaeArchitecture::Cnn(_) => {
                let side = padded_side(rows, cols);
                Ok(pad_surface(masked, side, side)?.into_vec())
            }
            DaeArchitecture::CnnPe(_) => {
                let side = padded_side(rows, cols);
                let mut out = pad_surface(masked, side, side)?.into_vec();
                let (rating, tenor) = position_embedding(rows, cols, side, side);
                out.extend_from_slice(rating.as_slice());
                out.extend_from_slice(tenor.as_slice());
                Ok(out)
            }
        }
    }
}

/// Rating ramp `i/(R−1)` (constant along tenor) and tenor ramp `j/(T−1)`
/// (constant along rating) on an `h × w` grid. Padding repeats the ramp value
/// of the nearest valid index.
pub fn position_embedding(rows: usize, cols: usize, h: usize, w: usize) -> (Matrix, Matrix) {
    let ramp = |k: usize, n: usize| {
        if n <= 1 {
            0.0
        } else {
            k.min(n - 1) as f64 / (n - 1) as f64
        }
    };
    (
        Matrix::from_fn(h, w, |i, _| ramp(i, rows)),
        Matrix::from_fn(h, w, |_, j| ramp(j, cols)),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Per-epoch multiplicative learning-rate decay.
    pub decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Early-stopping patience in epochs on validation MSE.
    pub patience: usize,
    pub corruption: CorruptionSpec,
    pub replicas: usize,
    pub holdout: f64,
    /// Fraction of training surfaces set aside for validation.
    pub validation: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            decay: 0.0,
            batch_size: 32,
            epochs: 200,
            patience: 20,
            corruption: CorruptionSpec::uniform(0.75, 1),
            replicas: 10,
            holdout: 0.10,
            validation: 0.10,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DaeError> {
        let bad = |m: &str| Err(DaeError::BadConfig(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.decay) {
            return bad("decay must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.replicas == 0 {
            return bad("replicas must be at least 1");
        }
        if !(self.holdout > 0.0 && self.holdout < 1.0) {
            return bad("holdout must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.validation) {
            return bad("validation must lie in [0, 1)");
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            decay: self.decay,
            ..AdamConfig::default()
        }
    }
}

/// Random partition of `0..n` into (train, test) with `round(n·fraction)`
/// test indices, both sides sorted.
pub fn holdout_split(
    n: usize,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DaeError> {
    let n_test = (n as f64 * fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(DaeError::TooSmall {
            surfaces: n,
            holdout: fraction,
        });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// Corrupted pairs on both sides of a surface-level holdout split.
#[derive(Debug, Clone)]
pub struct PairSplit {
    pub rows: usize,
    pub cols: usize,
    pub scale_factor: f64,
    pub train_surfaces: Vec<usize>,
    pub test_surfaces: Vec<usize>,
    pub train: Vec<CorruptedPair>,
    pub test: Vec<CorruptedPair>,
}

/// Seeds of the train-side and test-side corruption streams.
pub fn corruption_streams(spec: &CorruptionSpec) -> (CorruptionSpec, CorruptionSpec) {
    (
        spec.with_seed(derive_seed(spec.seed, 1)),
        spec.with_seed(derive_seed(spec.seed, 2)),
    )
}

/// Splits `dataset` by surface and replicates each side `cfg.replicas` times
/// with independent corruption. The dataset must already be unit-scaled.
pub fn build_pairs(dataset: &SurfaceDataset, cfg: &TrainConfig) -> Result<PairSplit, DaeError> {
    cfg.validate()?;
    let (train_surfaces, test_surfaces) = holdout_split(dataset.len(), cfg.holdout, cfg.seed)?;
    let (train_spec, test_spec) = corruption_streams(&cfg.corruption);
    let (rows, cols) = dataset.dims();
    Ok(PairSplit {
        rows,
        cols,
        scale_factor: dataset.scale_factor(),
        train: replicate_indices(dataset, &train_surfaces, &train_spec, cfg.replicas)?,
        test: replicate_indices(dataset, &test_surfaces, &test_spec, cfg.replicas)?,
        train_surfaces,
        test_surfaces,
    })
}

/// One formatted training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub surface_index: usize,
    pub input: Vec<f64>,
    /// Clean target, row-major `R × T`, scaled units.
    pub target: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DaeDataset {
    pub architecture: DaeArchitecture,
    pub pairs: PairSplit,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

fn format_pairs(arch: &DaeArchitecture, pairs: &[CorruptedPair]) -> Result<Vec<Example>, DaeError> {
    pairs
        .iter()
        .map(|p| {
            Ok(Example {
                surface_index: p.surface_index,
                input: arch.format_input(p.masked.values())?,
                target: p.target.values().as_slice().to_vec(),
            })
        })
        .collect()
}

/// [`build_pairs`] plus per-architecture input formatting.
pub fn build_dataset(
    dataset: &SurfaceDataset,
    cfg: &TrainConfig,
    arch: &DaeArchitecture,
) -> Result<DaeDataset, DaeError> {
    let (rows, cols) = dataset.dims();
    arch.validate(rows, cols)?;
    let pairs = build_pairs(dataset, cfg)?;
    from_pairs(pairs, arch)
}

/// Formats an existing split for `arch`.
pub fn from_pairs(pairs: PairSplit, arch: &DaeArchitecture) -> Result<DaeDataset, DaeError> {
    arch.validate(pairs.rows, pairs.cols)?;
    Ok(DaeDataset {
        architecture: arch.clone(),
        train: format_pairs(arch, &pairs.train)?,
        test: format_pairs(arch, &pairs.test)?,
        pairs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    /// `None` when no validation surfaces were carved out.
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaeModel {
    pub architecture: DaeArchitecture,
    pub network: Network,
    pub scale_factor: f64,
    pub rows: usize,
    pub cols: usize,
    pub config: TrainConfig,
    pub history: Vec<EpochRecord>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
}

/// Cropped MSE of a batch prediction against flat `R × T` targets, and the
/// gradient with respect to the full (padded) prediction.
fn cropped_loss(pred: &Tensor, targets: &[&[f64]], rows: usize, cols: usize) -> (f64, Tensor) {
    let per = pred.len() / pred.batch().max(1);
    let n = (targets.len() * rows * cols) as f64;
    let mut grad = vec![0.0; pred.len()];
    let mut loss = 0.0;
    let width = if per == rows * cols {
        cols
    } else {
        (per as f64).sqrt() as usize
    };
    for (s, t) in targets.iter().enumerate() {
        let p = pred.sample(s);
        for i in 0..rows {
            for j in 0..cols {
                let k = i * width + j;
                let d = p[k] - t[i * cols + j];
                loss += d * d;
                grad[s * per + k] = 2.0 * d / n;
            }
        }
    }
    (
        loss / n,
        Tensor::new(pred.shape().to_vec(), grad).expect("same shape"),
    )
}

fn crop_prediction(pred: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    if pred.len() == rows * cols {
        return pred.to_vec();
    }
    let width = (pred.len() as f64).sqrt() as usize;
    (0..rows)
        .flat_map(|i| pred[i * width..i * width + cols].to_vec())
        .collect()
}

fn batch_tensor(net: &Network, examples: &[&Example]) -> Result<Tensor, DaeError> {
    let inputs: Vec<&[f64]> = examples.iter().map(|e| e.input.as_slice()).collect();
    Ok(Tensor::stack(net.input_shape(), &inputs)?)
}

const EVAL_BATCH: usize = 256;

/// Inference-mode MSE over `examples` on the unpadded block.
fn evaluate_mse(
    net: &Network,
    examples: &[&Example],
    rows: usize,
    cols: usize,
) -> Result<f64, DaeError> {
    let mut sse = 0.0;
    for chunk in examples.chunks(EVAL_BATCH) {
        let y = net.predict(&batch_tensor(net, chunk)?)?;
        let targets: Vec<&[f64]> = chunk.iter().map(|e| e.target.as_slice()).collect();
        let (l, _) = cropped_loss(&y, &targets, rows, cols);
        sse += l * (chunk.len() * rows * cols) as f64;
    }
    Ok(sse / (examples.len() * rows * cols).max(1) as f64)
}

/// Mini-batches of a permutation; a trailing batch of one joins the previous
/// batch so batch-norm statistics are always defined.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

/// Splits training examples into (fit, validation) by surface.
fn validation_split<'a>(
    data: &'a DaeDataset,
    cfg: &TrainConfig,
) -> (Vec<&'a Example>, Vec<&'a Example>) {
    let surfaces = &data.pairs.train_surfaces;
    let n_val = (surfaces.len() as f64 * cfg.validation).round() as usize;
    if n_val == 0 || n_val >= surfaces.len() {
        return (data.train.iter().collect(), Vec::new());
    }
    let mut shuffled = surfaces.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 3)));
    let val: std::collections::BTreeSet<usize> = shuffled[..n_val].iter().copied().collect();
    data.train
        .iter()
        .partition(|e| !val.contains(&e.surface_index))
}

/// Trains `data.architecture` with Adam on the clean targets, keeping the
/// weights of the epoch with the lowest validation MSE.
pub fn train(data: &DaeDataset, cfg: &TrainConfig) -> Result<DaeModel, DaeError> {
    cfg.validate()?;
    let (rows, cols) = (data.pairs.rows, data.pairs.cols);
    let arch = &data.architecture;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = arch.build(rows, cols, &mut rng)?;
    let (fit, val) = validation_split(data, cfg);
    if fit.is_empty() {
        return Err(DaeError::BadConfig("no training examples".into()));
    }
    let mut adam = AdamState::new(cfg.adam(), &net.parameters());
    let mut order: Vec<usize> = (0..fit.len()).collect();
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, 0, net.clone());

    for epoch in 0..cfg.epochs {
        adam.set_epoch(epoch);
        order.shuffle(&mut rng);
        let mut sse = 0.0;
        for batch in batches(&order, cfg.batch_size) {
            let members: Vec<&Example> = batch.iter().map(|&k| fit[k]).collect();
            let x = batch_tensor(&net, &members)?;
            let (y, cache) = net.forward(&x, Mode::Train).map_err(|e| match e {
                NeuralError::NonFinite { .. } => DaeError::Diverged {
                    epoch,
                    loss: f64::NAN,
                },
                other => other.into(),
            })?;
            let targets: Vec<&[f64]> = members.iter().map(|e| e.target.as_slice()).collect();
            let (loss, grad) = cropped_loss(&y, &targets, rows, cols);
            if !loss.is_finite() {
                return Err(DaeError::Diverged { epoch, loss });
            }
            sse += loss * members.len() as f64;
            let grads = net.backward(&cache, &grad)?;
            net.update_running_stats(&cache)?;
            adam.step(net.parameters_mut(), &grads.params)?;
        }
        let train_mse = sse / fit.len() as f64;
        let val_mse = if val.is_empty() {
            None
        } else {
            Some(evaluate_mse(&net, &val, rows, cols)?)
        };
        history.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
        });
        let score = val_mse.unwrap_or(train_mse);
        if score < best.0 {
            best = (score, epoch, net.clone());
        } else if epoch - best.1 >= cfg.patience {
            break;
        }
    }
    Ok(DaeModel {
        architecture: arch.clone(),
        network: best.2,
        scale_factor: data.pairs.scale_factor,
        rows,
        cols,
        config: cfg.clone(),
        history,
        best_epoch: best.1,
    })
}

impl DaeModel {
    pub fn parameter_count(&self) -> usize {
        self.network.parameter_count()
    }

    /// Validation (or, without validation data, training) MSE of the kept
    /// epoch.
    pub fn best_score(&self) -> f64 {
        let r = &self.history[self.best_epoch];
        r.val_mse.unwrap_or(r.train_mse)
    }

    fn check_dims(&self, m: &Matrix) -> Result<(), DaeError> {
        if m.shape() != (self.rows, self.cols) {
            return Err(DaeError::DimMismatch {
                rows: self.rows,
                cols: self.cols,
                got_rows: m.rows(),
                got_cols: m.cols(),
            });
        }
        Ok(())
    }

    /// Inference-mode MSE against each example's `target`, in scaled units.
    pub fn mse(&self, examples: &[Example]) -> Result<f64, DaeError> {
        let refs: Vec<&Example> = examples.iter().collect();
        evaluate_mse(&self.network, &refs, self.rows, self.cols)
    }

    /// Reconstructions in scaled units (sigmoid range).
    pub fn reconstruct_scaled(&self, masked: &[&MaskedSurface]) -> Result<Vec<Matrix>, DaeError> {
        let mut out = Vec::with_capacity(masked.len());
        for chunk in masked.chunks(EVAL_BATCH) {
            let mut inputs = Vec::with_capacity(chunk.len());
            for m in chunk {
                self.check_dims(m.values())?;
                inputs.push(self.architecture.format_input(m.values())?);
            }
            let refs: Vec<&[f64]> = inputs.iter().map(|v| v.as_slice()).collect();
            let y = self
                .network
                .predict(&Tensor::stack(self.network.input_shape(), &refs)?)?;
            for s in 0..chunk.len() {
                out.push(Matrix::from_vec(
                    self.rows,
                    self.cols,
                    crop_prediction(y.sample(s), self.rows, self.cols),
                ));
            }
        }
        Ok(out)
    }

    /// Reconstructs a masked surface given in the model's scaled units and
    /// returns yields in original units.
    pub fn reconstruct(&self, masked: &MaskedSurface) -> Result<Matrix, DaeError> {
        let scaled = self
            .reconstruct_scaled(&[masked])?
            .pop()
            .expect("one output");
        Ok(scaled.map(|v| v / self.scale_factor))
    }

    /// Writes the network checkpoint plus architecture, scale and training
    /// metadata.
    pub fn save(&self, json_path: impl AsRef<Path>) -> Result<(), DaeError> {
        let metadata = serde_json::json!({
            "architecture": self.architecture,
            "scale_factor": self.scale_factor,
            "rows": self.rows,
            "cols": self.cols,
            "train_config": self.config,
            "best_epoch": self.best_epoch,
            "history": self.history,
        });
        save_checkpoint(&self.network, metadata, json_path)?;
        Ok(())
    }

    pub fn load(json_path: impl AsRef<Path>) -> Result<Self, DaeError> {
        let (network, manifest) = load_checkpoint(json_path)?;
        let meta = &manifest.metadata;
        fn parse<T: serde::de::DeserializeOwned>(
            meta: &serde_json::Value,
            name: &str,
        ) -> Result<T, DaeError> {
            let v = meta
                .get(name)
                .cloned()
                .ok_or_else(|| DaeError::Metadata(format!("missing {name}")))?;
            serde_json::from_value(v).map_err(|e| DaeError::Metadata(format!("{name}: {e}")))
        }
        Ok(Self {
            architecture: parse(meta, "architecture")?,
            scale_factor: parse(meta, "scale_factor")?,
            rows: parse(meta, "rows")?,
            cols: parse(meta, "cols")?,
            config: parse(meta, "train_config")?,
            best_epoch: parse(meta, "best_epoch")?,
            history: parse(meta, "history")?,
            network,
        })
    }

    /// Training log as CSV: `epoch,train_mse,val_mse`.
    pub fn write_history(&self, writer: impl Write) -> Result<(), DaeError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["epoch", "train_mse", "val_mse"])?;
        for r in &self.history {
            w.write_record([
                r.epoch.to_string(),
                format!("{:e}", r.train_mse),
                r.val_mse.map(|v| format!("{v:e}")).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Ranges for random search. Learning rates are drawn log-uniformly; the
/// rest uniformly from the listed choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub lr: (f64, f64),
    pub decay: Vec<f64>,
    pub batch_size: Vec<usize>,
    /// FCNN hidden widths.
    pub hidden: Vec<usize>,
    /// CNN pooling stages.
    pub cnn_depth: Vec<usize>,
    /// CNN filters at the outermost stage.
    pub cnn_filters: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            lr: (3e-4, 1e-2),
            decay: vec![0.0, 0.001, 0.01],
            batch_size: vec![16, 32, 64],
            hidden: vec![256, 384, 512],
            cnn_depth: vec![1, 2],
            cnn_filters: vec![8, 16, 32],
        }
    }
}

impl SearchSpace {
    fn validate(&self, arch: &DaeArchitecture) -> Result<(), DaeError> {
        let empty = |m: &str| Err(DaeError::EmptySearchSpace(m.to_string()));
        if !(self.lr.0 > 0.0 && self.lr.0 <= self.lr.1) {
            return empty("lr range");
        }
        if self.decay.is_empty() {
            return empty("decay");
        }
        if self.batch_size.is_empty() {
            return empty("batch_size");
        }
        match arch {
            DaeArchitecture::Fcnn { .. } if self.hidden.is_empty() => empty("hidden"),
            DaeArchitecture::Cnn(_) | DaeArchitecture::CnnPe(_)
                if self.cnn_depth.is_empty() || self.cnn_filters.is_empty() =>
            {
                empty("cnn_depth/cnn_filters")
            }
            _ => Ok(()),
        }
    }

    fn sample(
        &self,
        arch: &DaeArchitecture,
        base: &TrainConfig,
        rng: &mut impl Rng,
    ) -> (DaeArchitecture, TrainConfig) {
        let lr = if self.lr.0 == self.lr.1 {
            self.lr.0
        } else {
            (rng.gen_range(self.lr.0.ln()..=self.lr.1.ln())).exp()
        };
        let cfg = TrainConfig {
            lr,
            decay: *self.decay.choose(rng).expect("validated"),
            batch_size: *self.batch_size.choose(rng).expect("validated"),
            ..base.clone()
        };
        let arch = match arch {
            DaeArchitecture::Fcnn { .. } => DaeArchitecture::Fcnn {
                hidden: *self.hidden.choose(rng).expect("validated"),
            },
            DaeArchitecture::Cnn(spec) | DaeArchitecture::CnnPe(spec) => {
                let depth = *self.cnn_depth.choose(rng).expect("validated");
                let filters = *self.cnn_filters.choose(rng).expect("validated");
                let s = CnnSpec {
                    pooling: spec.pooling,
                    ..CnnSpec::with_depth(depth, filters)
                };
                if matches!(arch, DaeArchitecture::Cnn(_)) {
                    DaeArchitecture::Cnn(s)
                } else {
                    DaeArchitecture::CnnPe(s)
                }
            }
        };
        (arch, cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub architecture: DaeArchitecture,
    pub config: TrainConfig,
    pub val_mse: f64,
    pub epochs_run: usize,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub architecture: DaeArchitecture,
    pub config: TrainConfig,
    pub trials: Vec<Trial>,
    pub best: usize,
}

/// Seeded random search; each trial trains on the training pairs of `pairs`
/// and is scored on the validation surfaces carved from them.
pub fn hyperparameter_search(
    pairs: &PairSplit,
    arch: &DaeArchitecture,
    base: &TrainConfig,
    space: &SearchSpace,
    budget: usize,
) -> Result<SearchOutcome, DaeError> {
    if budget == 0 {
        return Err(DaeError::BadConfig(
            "search budget must be at least 1".into(),
        ));
    }
    space.validate(arch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base.seed, 4));
    let mut trials = Vec::with_capacity(budget);
    for index in 0..budget {
        let (a, cfg) = space.sample(arch, base, &mut rng);
        let model = train(&from_pairs(pairs.clone(), &a)?, &cfg)?;
        trials.push(Trial {
            index,
            architecture: a,
            config: cfg,
            val_mse: model.best_score(),
            epochs_run: model.history.len(),
        });
    }
    // First minimum wins, so ties resolve to the earlier trial.
    let best = trials.iter().enumerate().fold(
        0,
        |b, (k, t)| if t.val_mse < trials[b].val_mse { k } else { b },
    );
    Ok(SearchOutcome {
        architecture: trials[best].architecture.clone(),
        config: trials[best].config.clone(),
        best,
        trials,
    })
}

/// Trial log as CSV, one row per trial.
pub fn write_trial_log(trials: &[Trial], writer: impl Write) -> Result<(), DaeError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "trial",
        "architecture",
        "lr",
        "decay",
        "batch_size",
        "shape",
        "val_mse",
        "epochs_run",
    ])?;
    for t in trials {
        let shape = match &t.architecture {
            DaeArchitecture::Fcnn { hidden } => format!("hidden={hidden}"),
            DaeArchitecture::Cnn(s) | DaeArchitecture::CnnPe(s) => {
                format!(
                    "encoder={:?} bottleneck={} decoder={:?}",
                    s.encoder, s.bottleneck, s.decoder
                )
            }
        };
        w.write_record([
            t.index.to_string(),
            t.architecture.name().to_string(),
            format!("{:e}", t.config.lr),
            t.config.decay.to_string(),
            t.config.batch_size.to_string(),
            shape,
            format!("{:e}", t.val_mse),
            t.epochs_run.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
