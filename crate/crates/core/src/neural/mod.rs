//! A small double-precision network engine: dense and 3×3 convolutional
//! layers, 2×2 max or average pooling, nearest-neighbour upsampling, batch
//! normalisation, ReLU/sigmoid, MSE loss and Adam.
//!
//! Batches are tensors whose first dimension is the batch size; the rest is
//! the per-sample shape (`[d]` for dense stacks, `[channels, h, w]` for
//! convolutional ones). Forward and backward passes are pure functions of
//! the network and the input; parameter updates go through
//! [`Network::parameters_mut`], which invalidates outstanding caches.

mod adam;
mod checkpoint;
mod layers;
mod network;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, LayerSpec};
pub use layers::{Activation, BatchNorm, Conv2d, Dense, Layer};
pub use network::{ForwardCache, Gradients, Mode, Network};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("layer {layer} ({kind}): expected input shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        layer: usize,
        kind: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("tensor of shape {shape:?} needs {expected} values, got {got}")]
    BadTensor {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value produced by layer {layer} ({kind})")]
    NonFinite { layer: usize, kind: &'static str },
    #[error("forward cache does not belong to the current network parameters")]
    StaleCache,
    #[error("loss shapes differ: prediction {pred:?}, target {target:?}")]
    LossShape {
        pred: Vec<usize>,
        target: Vec<usize>,
    },
    #[error("gradient list does not match parameters ({0})")]
    GradientMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Mean squared error over all elements and its gradient `2(pred − target)/N`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor), NeuralError> {
    if pred.shape() != target.shape() {
        return Err(NeuralError::LossShape {
            pred: pred.shape().to_vec(),
            target: target.shape().to_vec(),
        });
    }
    let n = pred.len().max(1) as f64;
    let mut loss = 0.0;
    let grad: Vec<f64> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, Tensor::new(pred.shape().to_vec(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_basic_cases() {
        let p = Tensor::new(vec![2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let (l, g) = mse_loss(&p, &p).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));

        let t = Tensor::new(vec![2, 3], p.data().iter().map(|v| v - 1.0).collect()).unwrap();
        let (l, _) = mse_loss(&p, &t).unwrap();
        assert!((l - 1.0).abs() < 1e-12);

        let other = Tensor::zeros(vec![3, 2]);
        assert!(mse_loss(&p, &other).is_err());
    }

    #[test]
    fn mse_gradient_matches_central_differences() {
        let p = Tensor::new(vec![1, 5], vec![0.3, -0.2, 0.9, 0.05, -1.1]).unwrap();
        let t = Tensor::new(vec![1, 5], vec![0.1, 0.4, 0.2, -0.3, 0.7]).unwrap();
        let (_, g) = mse_loss(&p, &t).unwrap();
        let h = 1e-6;
        for k in 0..5 {
            let mut plus = p.clone();
            plus.data_mut()[k] += h;
            let mut minus = p.clone();
            minus.data_mut()[k] -= h;
            let fd = (mse_loss(&plus, &t).unwrap().0 - mse_loss(&minus, &t).unwrap().0) / (2.0 * h);
            let rel = (fd - g.data()[k]).abs() / g.data()[k].abs().max(1e-12);
            assert!(rel < 1e-7, "k={k} rel={rel}");
        }
    }
}
