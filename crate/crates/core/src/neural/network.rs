use serde::{Deserialize, Serialize};

use super::layers::{sample_shape_with_batch, Layer, LayerCache};
use super::tensor::Tensor;
use super::NeuralError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm.
    Train,
    /// Running statistics in batch norm.
    Infer,
}

/// Ordered stack of layers with a fixed per-sample input shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    #[serde(skip)]
    generation: u64,
}

// The generation counter only guards caches, so it does not take part in equality.
impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.input_shape == other.input_shape && self.layers == other.layers
    }
}

/// Everything `backward` needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    mode: Mode,
    layers: Vec<LayerCache>,
}

impl ForwardCache {
    pub fn mode(&self) -> Mode {
        self.mode
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// One entry per trainable tensor, in [`Network::parameters`] order.
    pub params: Vec<Vec<f64>>,
    pub input: Tensor,
}

impl Network {
    /// Checks that the layer shapes compose starting from `input_shape`.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self, NeuralError> {
        let mut shape = input_shape.clone();
        for (k, layer) in layers.iter().enumerate() {
            shape = layer
                .output_shape(&shape)
                .ok_or_else(|| NeuralError::ShapeMismatch {
                    layer: k,
                    kind: layer.kind(),
                    expected: layer.expected_input(&shape),
                    got: shape.clone(),
                })?;
        }
        Ok(Self {
            input_shape,
            layers,
            generation: 0,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.layers.iter().fold(self.input_shape.clone(), |s, l| {
            l.output_shape(&s).expect("validated at construction")
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    pub fn parameters(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    /// Mutable trainable tensors. Invalidates every existing forward cache.
    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.generation += 1;
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, ForwardCache), NeuralError> {
        if x.sample_shape() != self.input_shape.as_slice() {
            return Err(NeuralError::ShapeMismatch {
                layer: 0,
                kind: self.layers.first().map_or("input", |l| l.kind()),
                expected: sample_shape_with_batch(x.batch(), &self.input_shape),
                got: x.shape().to_vec(),
            });
        }
        let train = mode == Mode::Train;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let (out, cache) = layer.forward(cur, train);
            if !out.is_finite() {
                return Err(NeuralError::NonFinite {
                    layer: k,
                    kind: layer.kind(),
                });
            }
            caches.push(cache);
            cur = out;
        }
        Ok((
            cur,
            ForwardCache {
                generation: self.generation,
                mode,
                layers: caches,
            },
        ))
    }

    /// Inference-mode forward pass without keeping a cache.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor, NeuralError> {
        self.forward(x, Mode::Infer).map(|(y, _)| y)
    }

    /// Gradients of a scalar loss with respect to every trainable tensor and
    /// the input, given `grad_out = ∂loss/∂output`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_out: &Tensor,
    ) -> Result<Gradients, NeuralError> {
        if cache.generation != self.generation || cache.layers.len() != self.layers.len() {
            return Err(NeuralError::StaleCache);
        }
        let mut per_layer: Vec<Vec<Vec<f64>>> = vec![Vec::new(); self.layers.len()];
        let mut grad = grad_out.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let (dx, dp) = layer.backward(&cache.layers[k], &grad);
            per_layer[k] = dp;
            grad = dx;
        }
        Ok(Gradients {
            params: per_layer.into_iter().flatten().collect(),
            input: grad,
        })
    }

    /// Folds the batch statistics of a train-mode cache into the running
    /// batch-norm statistics.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) -> Result<(), NeuralError> {
        if cache.generation != self.generation || cache.layers.len() != self.layers.len() {
            return Err(NeuralError::StaleCache);
        }
        for (layer, c) in self.layers.iter_mut().zip(&cache.layers) {
            if let (
                Layer::BatchNorm(b),
                LayerCache::Norm {
                    batch_mean,
                    batch_var,
                    train: true,
                    count,
                    ..
                },
            ) = (layer, c)
            {
                let unbias = if *count > 1 {
                    *count as f64 / (*count - 1) as f64
                } else {
                    1.0
                };
                for c in 0..b.features {
                    b.running_mean[c] =
                        b.momentum * b.running_mean[c] + (1.0 - b.momentum) * batch_mean[c];
                    b.running_var[c] =
                        b.momentum * b.running_var[c] + (1.0 - b.momentum) * batch_var[c] * unbias;
                }
            }
        }
        Ok(())
    }
}
