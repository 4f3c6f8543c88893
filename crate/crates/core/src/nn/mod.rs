//! Dense feed-forward networks with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat `Vec<f64>`; each layer stores its weight
//! matrix as `(fan_in x fan_out)` row-major followed by its bias, so a batch
//! forward pass is `X · W + b`.

mod adam;
mod checkpoint;
mod gradcheck;

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, contract_err, Result};
use crate::rng::{stream_rng, Stream};

pub use adam::{adam_step, AdamState};
pub use checkpoint::{
    deserialize_params, load_params, serialize_params, Checkpoint, CHECKPOINT_VERSION,
};
pub use gradcheck::{check_gradients, relative_error, GradCheck};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// `x * sigmoid(x)`, the smooth gated unit.
    Silu,
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x * sigmoid(x),
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Layer sizes and per-hidden-layer activations; the output layer is linear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub layer_sizes: Vec<usize>,
    pub hidden_activations: Vec<Activation>,
}

impl NetSpec {
    /// Same activation on every hidden layer.
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        let n_hidden = layer_sizes.len().saturating_sub(2);
        Self::with_activations(layer_sizes, vec![activation; n_hidden])
    }

    pub fn with_activations(
        layer_sizes: Vec<usize>,
        hidden_activations: Vec<Activation>,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(config_err(
                "a network needs at least an input and an output layer",
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(config_err("layer sizes must be positive"));
        }
        if hidden_activations.len() != layer_sizes.len() - 2 {
            return Err(config_err("one activation per hidden layer"));
        }
        Ok(Self {
            layer_sizes,
            hidden_activations,
        })
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Activation applied after layer `l` (identity for the output layer).
    pub fn activation(&self, l: usize) -> Activation {
        self.hidden_activations
            .get(l)
            .copied()
            .unwrap_or(Activation::Identity)
    }

    /// Tensor shapes in storage order: `[fan_in, fan_out]` then `[fan_out]` per layer.
    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.layer_sizes
            .windows(2)
            .flat_map(|w| [vec![w[0], w[1]], vec![w[1]]])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    fn offsets(&self) -> Vec<(usize, usize, usize)> {
        let mut off = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let o = off;
                off += w[0] * w[1] + w[1];
                (o, w[0], w[1])
            })
            .collect()
    }
}

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// Flat trainable parameter store with its tensor-shape manifest.
///
/// Every mutation assigns a new version so that forward caches computed on
/// older values are rejected by [`backward`].
#[derive(Debug, Clone)]
pub struct NetParams {
    values: Vec<f64>,
    shapes: Vec<Vec<usize>>,
    seed: u64,
    version: u64,
}

impl PartialEq for NetParams {
    fn eq(&self, other: &Self) -> bool {
        self.shapes == other.shapes
            && self.seed == other.seed
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl NetParams {
    pub fn from_values(shapes: Vec<Vec<usize>>, values: Vec<f64>, seed: u64) -> Result<Self> {
        let expected: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        if expected != values.len() {
            return Err(contract_err(format!(
                "{} values for a manifest of {expected}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(contract_err("parameters must be finite"));
        }
        Ok(Self {
            values,
            shapes,
            seed,
            version: fresh_version(),
        })
    }

    /// Zero-mean Gaussian weights scaled by `1/sqrt(fan_in)`, zero biases.
    pub fn init(spec: &NetSpec, seed: u64) -> Self {
        let mut rng = stream_rng(seed, Stream::Init, 0);
        let mut values = Vec::with_capacity(spec.param_count());
        for w in spec.layer_sizes.windows(2) {
            let scale = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] {
                let z: f64 = StandardNormal.sample(&mut rng);
                values.push(z * scale);
            }
            values.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Self {
            values,
            shapes: spec.shapes(),
            seed,
            version: fresh_version(),
        }
    }

    /// Zeroes the final layer so the network initially outputs zero.
    pub fn zero_output_layer(&mut self) {
        let n = self.shapes.len();
        let tail: usize = self.shapes[n - 2..]
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum();
        let len = self.values.len();
        self.values_mut()[len - tail..]
            .iter_mut()
            .for_each(|v| *v = 0.0);
    }

    pub fn zeros_like(spec: &NetSpec) -> Self {
        Self {
            values: vec![0.0; spec.param_count()],
            shapes: spec.shapes(),
            seed: 0,
            version: fresh_version(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access; invalidates outstanding forward caches.
    pub fn values_mut(&mut self) -> &mut [f64] {
        self.version = fresh_version();
        &mut self.values
    }

    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// `self <- (1 - tau) * self + tau * other`.
    pub fn soft_update_from(&mut self, other: &NetParams, tau: f64) {
        for (a, b) in self.values_mut().iter_mut().zip(&other.values) {
            *a = (1.0 - tau) * *a + tau * b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Intermediate values recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Array2<f64>>,
    version: u64,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].nrows()
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    /// Congruent with the flat parameter vector.
    pub params: Vec<f64>,
    /// Gradient with respect to the network input, `(batch x input_size)`.
    pub input: Array2<f64>,
}

fn check_params(spec: &NetSpec, params: &NetParams) -> Result<()> {
    if params.len() != spec.param_count() || params.shapes() != spec.shapes().as_slice() {
        return Err(contract_err(
            "parameter manifest does not match the network spec",
        ));
    }
    Ok(())
}

fn layer_views<'a>(
    values: &'a [f64],
    off: (usize, usize, usize),
) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
    let (o, fan_in, fan_out) = off;
    let w = ArrayView2::from_shape((fan_in, fan_out), &values[o..o + fan_in * fan_out]).unwrap();
    let b = ArrayView1::from(&values[o + fan_in * fan_out..o + fan_in * fan_out + fan_out]);
    (w, b)
}

fn run_layers(
    spec: &NetSpec,
    params: &NetParams,
    input: ArrayView2<f64>,
    mut cache: Option<&mut ForwardCache>,
) -> Result<Array2<f64>> {
    check_params(spec, params)?;
    if input.ncols() != spec.input_size() {
        return Err(contract_err(format!(
            "input width {} but network expects {}",
            input.ncols(),
            spec.input_size()
        )));
    }
    let mut act = input.to_owned();
    for (l, off) in spec.offsets().into_iter().enumerate() {
        let (w, b) = layer_views(&params.values, off);
        let mut z = act.dot(&w);
        z += &b;
        let f = spec.activation(l);
        let out = if f == Activation::Identity {
            z.clone()
        } else {
            z.mapv(|v| f.apply(v))
        };
        if let Some(c) = cache.as_deref_mut() {
            c.inputs.push(std::mem::replace(&mut act, out));
            c.pre.push(z);
        } else {
            act = out;
        }
    }
    Ok(act)
}

/// Batched forward pass; `input` is `(batch x input_size)`.
pub fn forward_batch(
    spec: &NetSpec,
    params: &NetParams,
    input: ArrayView2<f64>,
) -> Result<(Array2<f64>, ForwardCache)> {
    let mut cache = ForwardCache {
        inputs: Vec::with_capacity(spec.n_layers()),
        pre: Vec::with_capacity(spec.n_layers()),
        version: params.version,
    };
    let out = run_layers(spec, params, input, Some(&mut cache))?;
    Ok((out, cache))
}

/// Forward pass for a single input vector.
pub fn forward(
    spec: &NetSpec,
    params: &NetParams,
    input: &[f64],
) -> Result<(Vec<f64>, ForwardCache)> {
    let x = ArrayView2::from_shape((1, input.len()), input).unwrap();
    let (out, cache) = forward_batch(spec, params, x)?;
    Ok((out.into_raw_vec_and_offset().0, cache))
}

/// Forward pass without recording a cache.
pub fn infer(spec: &NetSpec, params: &NetParams, input: ArrayView2<f64>) -> Result<Array2<f64>> {
    run_layers(spec, params, input, None)
}

/// Reverse-mode gradients of `sum(output ⊙ output_grad)` with respect to
/// every parameter and the input.
pub fn backward(
    spec: &NetSpec,
    params: &NetParams,
    cache: &ForwardCache,
    output_grad: ArrayView2<f64>,
) -> Result<Gradients> {
    backward_impl(spec, params, cache, output_grad, true)
}

/// Like [`backward`] but skips the gradient with respect to the network input.
pub fn param_gradients(
    spec: &NetSpec,
    params: &NetParams,
    cache: &ForwardCache,
    output_grad: ArrayView2<f64>,
) -> Result<Vec<f64>> {
    Ok(backward_impl(spec, params, cache, output_grad, false)?.params)
}

fn backward_impl(
    spec: &NetSpec,
    params: &NetParams,
    cache: &ForwardCache,
    output_grad: ArrayView2<f64>,
    want_input: bool,
) -> Result<Gradients> {
    check_params(spec, params)?;
    if cache.version != params.version {
        return Err(contract_err(
            "forward cache is stale: parameters changed since the forward pass",
        ));
    }
    if cache.inputs.len() != spec.n_layers() {
        return Err(contract_err(
            "forward cache does not match the network depth",
        ));
    }
    let batch = cache.batch_size();
    if output_grad.dim() != (batch, spec.output_size()) {
        return Err(contract_err(format!(
            "output gradient shape {:?}, expected ({batch}, {})",
            output_grad.dim(),
            spec.output_size()
        )));
    }

    let offsets = spec.offsets();
    let mut grads = vec![0.0; spec.param_count()];
    let mut delta = output_grad.to_owned();
    for l in (0..spec.n_layers()).rev() {
        let f = spec.activation(l);
        if f != Activation::Identity {
            delta.zip_mut_with(&cache.pre[l], |d, &z| *d *= f.derivative(z));
        }
        let (o, fan_in, fan_out) = offsets[l];
        let (gw, gb) = grads[o..o + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
        let gw = ArrayViewMut2::from_shape((fan_in, fan_out), gw).unwrap();
        general_mat_mul(1.0, &cache.inputs[l].t(), &delta, 0.0, &mut { gw });
        for (g, s) in gb.iter_mut().zip(delta.sum_axis(Axis(0))) {
            *g = s;
        }
        if l == 0 && !want_input {
            delta = Array2::zeros((batch, 0));
            break;
        }
        let (w, _) = layer_views(&params.values, offsets[l]);
        delta = delta.dot(&w.t());
    }
    Ok(Gradients {
        params: grads,
        input: delta,
    })
}
