//! Miniature fully-convolutional segmentation network.
//!
//! The architecture is a fixed encoder/decoder: one stride-2 convolution per
//! entry of `hidden_channels`, mirrored by transposed convolutions that
//! restore the input resolution, with ReLU between layers and raw logits at
//! the end. Parameters live in a [`ParamSet`] keyed by layer name so that
//! federates agree on ordering byte-for-byte.

pub mod conv;
pub mod loss;

pub use conv::{
    conv2d, conv2d_backward, conv_out_dim, conv_transpose2d, conv_transpose2d_backward, relu,
    relu_backward,
};
pub use loss::{bce_with_logits, sigmoid, sum_losses};

use serde::{Deserialize, Serialize};

use crate::error::NnError;
use crate::params::{Gradients, ParamSet};
use crate::rng::SplitMix64;
use crate::tensor::{Element, Tensor};

/// Model hyperparameters. `seed` drives parameter initialization only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FcnConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub hidden_channels: Vec<usize>,
    pub kernel_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Deconv,
}

/// One layer of the unrolled network, in execution order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerDef {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub relu_after: bool,
}

const STRIDE: usize = 2;

impl FcnConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.kernel_size.is_multiple_of(2) {
            return Err(NnError::InvalidConfig(format!(
                "kernel_size must be odd and >= 1, got {}",
                self.kernel_size
            )));
        }
        if self.num_classes < 2 {
            return Err(NnError::InvalidConfig(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if self.hidden_channels.is_empty() {
            return Err(NnError::InvalidConfig("hidden_channels must be non-empty".into()));
        }
        if self.in_channels == 0 || self.hidden_channels.contains(&0) {
            return Err(NnError::InvalidConfig("channel counts must be positive".into()));
        }
        Ok(())
    }

    /// Same-size padding for the odd kernel.
    pub fn padding(&self) -> usize {
        (self.kernel_size - 1) / 2
    }

    /// Product of the encoder strides; input H and W must divide by this.
    pub fn total_stride(&self) -> usize {
        1 << self.hidden_channels.len()
    }

    /// Layers in execution order: enc0..encN-1 downsample, dec0..decN-1
    /// mirror them back up, the last one mapping to class logits.
    pub fn layers(&self) -> Vec<LayerDef> {
        let h = &self.hidden_channels;
        let n = h.len();
        let mut defs = Vec::with_capacity(2 * n);
        for i in 0..n {
            let in_ch = if i == 0 { self.in_channels } else { h[i - 1] };
            defs.push(LayerDef {
                name: format!("enc{i}"),
                kind: LayerKind::Conv,
                in_channels: in_ch,
                out_channels: h[i],
                relu_after: true,
            });
        }
        for j in 0..n {
            let i = n - 1 - j; // encoder stage being mirrored
            let out_ch = if i == 0 { self.num_classes } else { h[i - 1] };
            defs.push(LayerDef {
                name: format!("dec{j}"),
                kind: LayerKind::Deconv,
                in_channels: h[i],
                out_channels: out_ch,
                relu_after: i != 0,
            });
        }
        defs
    }

    /// `(name, shape)` for every parameter tensor, in ParamSet order.
    /// Conv weights are `[out, in, k, k]`, deconv weights `[in, out, k, k]`,
    /// biases `[out]`.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let k = self.kernel_size;
        let mut shapes = Vec::new();
        for def in self.layers() {
            let w = match def.kind {
                LayerKind::Conv => vec![def.out_channels, def.in_channels, k, k],
                LayerKind::Deconv => vec![def.in_channels, def.out_channels, k, k],
            };
            shapes.push((format!("{}.weight", def.name), w));
            shapes.push((format!("{}.bias", def.name), vec![def.out_channels]));
        }
        shapes
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// Deterministic initialization: weights uniform in `[-b, b]` with
/// `b = sqrt(1 / fan_in)`, biases zero. fan_in is the second weight
/// dimension times k*k (input connectivity for conv; the usual framework
/// convention for transposed conv). A single PRNG seeded from `config.seed`
/// is consumed in parameter order, so the result is a pure function of the
/// config.
pub fn init_params<E: Element>(config: &FcnConfig) -> Result<ParamSet<E>, NnError> {
    config.validate()?;
    let mut rng = SplitMix64::new(config.seed);
    let k2 = config.kernel_size * config.kernel_size;
    let mut entries = Vec::new();
    for (name, shape) in config.param_shapes() {
        let tensor = if shape.len() == 4 {
            let fan_in = shape[1] * k2;
            let bound = (1.0 / fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| E::from_f64(rng.next_symmetric(bound)))
                .collect();
            Tensor::new(shape, data)?
        } else {
            Tensor::zeros(shape)
        };
        entries.push((name, tensor));
    }
    ParamSet::new(entries)
}

fn check_params<E: Element>(params: &ParamSet<E>, config: &FcnConfig) -> Result<(), NnError> {
    let expected = config.param_shapes();
    if params.len() != expected.len() {
        return Err(NnError::IncompatibleParams(format!(
            "expected {} parameter tensors, got {}",
            expected.len(),
            params.len()
        )));
    }
    for ((name, shape), (pname, tensor)) in expected.iter().zip(params.iter()) {
        if name != pname || shape.as_slice() != tensor.shape() {
            return Err(NnError::IncompatibleParams(format!(
                "parameter {pname} {:?} does not match model {name} {shape:?}",
                tensor.shape()
            )));
        }
    }
    Ok(())
}

fn check_batch<E: Element>(config: &FcnConfig, batch: &Tensor<E>) -> Result<(), NnError> {
    let (n, c, h, w) = batch.dims4("forward batch")?;
    let stride = config.total_stride();
    if n == 0 || c != config.in_channels || h % stride != 0 || w % stride != 0 || h == 0 || w == 0 {
        return Err(NnError::ShapeMismatch {
            context: "forward batch",
            expected: format!(
                "[N>0, {}, H, W] with H, W positive multiples of {stride}",
                config.in_channels
            ),
            actual: format!("{:?}", batch.shape()),
        });
    }
    Ok(())
}

struct LayerTrace<E: Element> {
    input: Tensor<E>,
    /// Layer output before ReLU; present only when the layer has one.
    pre_activation: Option<Tensor<E>>,
}

fn forward_traced<E: Element>(
    params: &ParamSet<E>,
    config: &FcnConfig,
    batch: &Tensor<E>,
    keep_traces: bool,
) -> Result<(Tensor<E>, Vec<LayerTrace<E>>), NnError> {
    config.validate()?;
    check_params(params, config)?;
    check_batch(config, batch)?;
    let pad = config.padding();
    let mut traces = Vec::new();
    let mut cur = batch.clone();
    for (i, def) in config.layers().iter().enumerate() {
        let (_, weight) = params.get_index(2 * i);
        let (_, bias) = params.get_index(2 * i + 1);
        let z = match def.kind {
            LayerKind::Conv => conv2d(&cur, weight, bias, STRIDE, pad)?,
            LayerKind::Deconv => conv_transpose2d(&cur, weight, bias, STRIDE, pad, STRIDE - 1)?,
        };
        if !z.all_finite() {
            return Err(NnError::NonFinite("forward activations"));
        }
        let (next, pre) = if def.relu_after {
            (relu(&z), Some(z))
        } else {
            (z, None)
        };
        let input = std::mem::replace(&mut cur, next);
        if keep_traces {
            traces.push(LayerTrace {
                input,
                pre_activation: pre,
            });
        }
    }
    Ok((cur, traces))
}

/// Run the network on `batch [N, in_channels, H, W]`, returning logits
/// `[N, num_classes, H, W]`. H and W must be multiples of the total stride.
pub fn forward<E: Element>(
    params: &ParamSet<E>,
    config: &FcnConfig,
    batch: &Tensor<E>,
) -> Result<Tensor<E>, NnError> {
    forward_traced(params, config, batch, false).map(|(logits, _)| logits)
}

/// Mean BCE-with-logits loss of the batch against per-class target
/// probability planes (same shape as the logits), and its gradient with
/// respect to every parameter.
pub fn compute_gradients<E: Element>(
    params: &ParamSet<E>,
    config: &FcnConfig,
    images: &Tensor<E>,
    targets: &Tensor<E>,
) -> Result<(f64, Gradients<E>), NnError> {
    let (logits, traces) = forward_traced(params, config, images, true)?;
    let (loss, grad_logits) = bce_with_logits(&logits, targets)?;
    let pad = config.padding();
    let defs = config.layers();

    let mut grad = grad_logits;
    let mut rev_entries: Vec<(String, Tensor<E>)> = Vec::with_capacity(2 * defs.len());
    for (i, (def, trace)) in defs.iter().zip(&traces).enumerate().rev() {
        if let Some(pre) = &trace.pre_activation {
            grad = relu_backward(&grad, pre);
        }
        let (_, weight) = params.get_index(2 * i);
        let (gx, gw, gb) = match def.kind {
            LayerKind::Conv => conv2d_backward(&trace.input, weight, &grad, STRIDE, pad)?,
            LayerKind::Deconv => {
                conv_transpose2d_backward(&trace.input, weight, &grad, STRIDE, pad)?
            }
        };
        rev_entries.push((format!("{}.bias", def.name), gb));
        rev_entries.push((format!("{}.weight", def.name), gw));
        grad = gx;
    }
    rev_entries.reverse();
    let grads = ParamSet::new(rev_entries)?;
    if !grads.all_finite() {
        return Err(NnError::NonFinite("gradients"));
    }
    Ok((loss, grads))
}

/// One SGD step: `theta - lr * g` elementwise. Pure; returns the new set.
pub fn sgd_step<E: Element>(
    params: &ParamSet<E>,
    grads: &Gradients<E>,
    lr: f64,
) -> Result<ParamSet<E>, NnError> {
    params.ensure_compatible(grads, "sgd_step")?;
    let a = E::from_f64(lr);
    let entries = params
        .iter()
        .zip(grads.iter())
        .map(|((name, t), (_, g))| {
            let data = t
                .data()
                .iter()
                .zip(g.data())
                .map(|(&v, &gv)| v - a * gv)
                .collect();
            Ok((name.to_string(), Tensor::new(t.shape().to_vec(), data)?))
        })
        .collect::<Result<Vec<_>, NnError>>()?;
    ParamSet::new(entries)
}

/// Central-difference gradient oracle, `(L(p+eps) - L(p-eps)) / (2 eps)`
/// per coordinate. 64-bit only; intended for tests on tiny models.
pub fn finite_diff_gradient(
    params: &ParamSet<f64>,
    config: &FcnConfig,
    images: &Tensor<f64>,
    targets: &Tensor<f64>,
    epsilon: f64,
) -> Result<Gradients<f64>, NnError> {
    if epsilon <= 0.0 {
        return Err(NnError::InvalidConfig("epsilon must be positive".into()));
    }
    let loss_of = |p: &ParamSet<f64>| -> Result<f64, NnError> {
        let logits = forward(p, config, images)?;
        Ok(bce_with_logits(&logits, targets)?.0)
    };
    let mut work = params.clone();
    let mut entries = Vec::with_capacity(params.len());
    for ei in 0..params.len() {
        let (name, tensor) = params.get_index(ei);
        let shape = tensor.shape().to_vec();
        let mut grad = vec![0.0f64; tensor.len()];
        for (ci, slot) in grad.iter_mut().enumerate() {
            let orig = work.get_index(ei).1.data()[ci];
            work.get_index_mut(ei).1.data_mut()[ci] = orig + epsilon;
            let up = loss_of(&work)?;
            work.get_index_mut(ei).1.data_mut()[ci] = orig - epsilon;
            let down = loss_of(&work)?;
            work.get_index_mut(ei).1.data_mut()[ci] = orig;
            *slot = (up - down) / (2.0 * epsilon);
        }
        entries.push((name.to_string(), Tensor::new(shape, grad)?));
    }
    ParamSet::new(entries)
}
