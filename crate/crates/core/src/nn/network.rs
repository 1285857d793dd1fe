use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{self, Activation};
use super::{NnError, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        kernel_h: usize,
        kernel_w: usize,
        filters: usize,
    },
    MaxPool2d {
        size: usize,
    },
    Relu,
    Flatten,
    Dense {
        units: usize,
    },
    Sigmoid,
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. })
    }
}

/// Output shape after each layer, starting with the input shape. Fails before
/// any arithmetic if the chain is inconsistent.
pub fn infer_shapes(input: [usize; 3], layers: &[LayerSpec]) -> Result<Vec<Vec<usize>>, NnError> {
    let mut shapes = vec![input.to_vec()];
    if input.contains(&0) {
        return Err(NnError::InputTooSmall(format!("input shape {input:?}")));
    }
    for (i, layer) in layers.iter().enumerate() {
        let cur = shapes.last().expect("non-empty");
        let next = match (*layer, cur.as_slice()) {
            (
                LayerSpec::Conv2d {
                    kernel_h,
                    kernel_w,
                    filters,
                },
                &[h, w, _],
            ) => {
                if kernel_h == 0 || kernel_w == 0 || filters == 0 {
                    return Err(NnError::ShapeMismatch(format!("layer {i}: zero-sized conv")));
                }
                if h < kernel_h || w < kernel_w {
                    return Err(NnError::InputTooSmall(format!(
                        "layer {i}: {h}x{w} feature map smaller than {kernel_h}x{kernel_w} kernel"
                    )));
                }
                vec![h - kernel_h + 1, w - kernel_w + 1, filters]
            }
            (LayerSpec::MaxPool2d { size }, &[h, w, c]) => {
                if size == 0 {
                    return Err(NnError::ShapeMismatch(format!("layer {i}: zero pool size")));
                }
                if h < size || w < size {
                    return Err(NnError::InputTooSmall(format!(
                        "layer {i}: {h}x{w} feature map cannot be pooled by {size}"
                    )));
                }
                vec![h / size, w / size, c]
            }
            (LayerSpec::Relu | LayerSpec::Sigmoid, s) => s.to_vec(),
            (LayerSpec::Flatten, s) => vec![checked_len(s)
                .ok_or_else(|| NnError::ShapeMismatch(format!("layer {i}: flatten overflows")))?],
            (LayerSpec::Dense { units }, &[_]) => {
                if units == 0 {
                    return Err(NnError::ShapeMismatch(format!("layer {i}: zero-unit dense")));
                }
                vec![units]
            }
            (layer, s) => {
                return Err(NnError::ShapeMismatch(format!(
                    "layer {i}: {layer:?} cannot follow shape {s:?}"
                )))
            }
        };
        shapes.push(next);
    }
    Ok(shapes)
}

fn checked_len(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

/// Parameter tensor shapes of a layer chain, in storage order: for each
/// parameterized layer its kernel (`[kh, kw, cin, filters]`) or weight
/// matrix (`[inputs, units]`), then its bias. Fails without allocating if
/// the chain is inconsistent, does not end in a scalar, or a tensor size
/// overflows.
pub fn param_shapes(input_shape: [usize; 3], layers: &[LayerSpec]) -> Result<Vec<Vec<usize>>, NnError> {
    let shapes = infer_shapes(input_shape, layers)?;
    if shapes.last().map(Vec::as_slice) != Some(&[1]) {
        return Err(NnError::ShapeMismatch(format!(
            "network must end in a scalar, got {:?}",
            shapes.last()
        )));
    }
    let mut out = Vec::new();
    for (layer, shape_in) in layers.iter().zip(&shapes) {
        match *layer {
            LayerSpec::Conv2d {
                kernel_h,
                kernel_w,
                filters,
            } => {
                out.push(vec![kernel_h, kernel_w, shape_in[2], filters]);
                out.push(vec![filters]);
            }
            LayerSpec::Dense { units } => {
                out.push(vec![shape_in[0], units]);
                out.push(vec![units]);
            }
            _ => {}
        }
    }
    let mut total = 0usize;
    for s in &out {
        total = checked_len(s)
            .and_then(|n| total.checked_add(n))
            .ok_or_else(|| NnError::ShapeMismatch(format!("parameter tensor {s:?} overflows")))?;
    }
    Ok(out)
}

/// Layer list plus parameters. Each parameterized layer owns two consecutive
/// tensors in `params`: its kernel/weight tensor followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    input_shape: [usize; 3],
    layers: Vec<LayerSpec>,
    params: Vec<Tensor<T>>,
}

/// Activations recorded during a forward pass, consumed by [`Network::backward`].
#[derive(Debug, Clone, Default)]
pub struct Trace<T> {
    activations: Vec<Tensor<T>>,
    pool_argmax: Vec<Option<Vec<usize>>>,
}

impl<T: Real> Trace<T> {
    pub fn output(&self) -> Option<T> {
        self.activations.last().map(|t| t.data()[0])
    }

    /// The input followed by every layer's output.
    pub fn activations(&self) -> &[Tensor<T>] {
        &self.activations
    }

    /// Winning input index per pooled element, `None` for non-pooling layers.
    pub fn pool_argmax(&self) -> &[Option<Vec<usize>>] {
        &self.pool_argmax
    }
}

impl<T: Real> Network<T> {
    /// Shape-checks the chain and allocates zeroed parameters.
    pub fn new(input_shape: [usize; 3], layers: Vec<LayerSpec>) -> Result<Self, NnError> {
        let params = param_shapes(input_shape, &layers)?
            .iter()
            .map(|s| Tensor::zeros(s))
            .collect();
        Ok(Self {
            input_shape,
            layers,
            params,
        })
    }

    /// Replaces parameters after checking each shape against the layer list.
    pub fn with_params(mut self, params: Vec<Tensor<T>>) -> Result<Self, NnError> {
        if params.len() != self.params.len() {
            return Err(NnError::ShapeMismatch(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for (i, (have, want)) in params.iter().zip(&self.params).enumerate() {
            if have.shape() != want.shape() {
                return Err(NnError::ShapeMismatch(format!(
                    "parameter {i}: shape {:?}, expected {:?}",
                    have.shape(),
                    want.shape()
                )));
            }
        }
        self.params = params;
        Ok(self)
    }

    /// He-uniform weights for convolutions and hidden dense layers,
    /// Glorot-uniform for the final dense layer, zero biases. Draws are taken
    /// in layer order, row-major within each tensor.
    pub fn init_weights(mut self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last_dense = self
            .layers
            .iter()
            .rposition(|l| matches!(l, LayerSpec::Dense { .. }));
        let mut p = 0;
        for (li, layer) in self.layers.iter().enumerate() {
            if !layer.has_params() {
                continue;
            }
            let limit = self.init_limit(li, p, Some(li) == last_dense);
            for v in self.params[p].data_mut() {
                *v = T::lit(rng.gen_range(-limit..=limit));
            }
            self.params[p + 1].data_mut().fill(T::zero());
            p += 2;
        }
        self
    }

    /// Uniform bound used by [`Network::init_weights`] for parameter tensor `p`.
    fn init_limit(&self, layer: usize, p: usize, glorot: bool) -> f64 {
        let shape = self.params[p].shape();
        let (fan_in, fan_out) = match self.layers[layer] {
            LayerSpec::Conv2d { .. } => (shape[0] * shape[1] * shape[2], shape[3]),
            _ => (shape[0], shape[1]),
        };
        if glorot {
            (6.0 / (fan_in + fan_out) as f64).sqrt()
        } else {
            (6.0 / fan_in as f64).sqrt()
        }
    }

    /// Per parameterized layer, the initialization bound of its weight tensor.
    pub fn init_limits(&self) -> Vec<f64> {
        let last_dense = self
            .layers
            .iter()
            .rposition(|l| matches!(l, LayerSpec::Dense { .. }));
        let mut p = 0;
        let mut out = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            if layer.has_params() {
                out.push(self.init_limit(li, p, Some(li) == last_dense));
                p += 2;
            }
        }
        out
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            input_shape: self.input_shape,
            layers: self.layers.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<(), NnError> {
        if input.shape() != self.input_shape {
            return Err(NnError::ShapeMismatch(format!(
                "input shape {:?}, network expects {:?}",
                input.shape(),
                self.input_shape
            )));
        }
        Ok(())
    }

    /// Runs one layer; returns its output and, for pooling, the argmax map.
    fn step(
        &self,
        layer: &LayerSpec,
        p: usize,
        x: &Tensor<T>,
    ) -> Result<(Tensor<T>, Option<Vec<usize>>), NnError> {
        Ok(match *layer {
            LayerSpec::Conv2d { .. } => (
                ops::conv2d_forward(x, &self.params[p], &self.params[p + 1])?,
                None,
            ),
            LayerSpec::MaxPool2d { size } => {
                let (y, arg) = ops::maxpool2d_forward(x, size)?;
                (y, Some(arg))
            }
            LayerSpec::Relu => (ops::activate(x, Activation::Relu), None),
            LayerSpec::Sigmoid => (ops::activate(x, Activation::Sigmoid), None),
            LayerSpec::Flatten => {
                let n = x.len();
                (x.clone().reshaped(&[n])?, None)
            }
            LayerSpec::Dense { .. } => (
                ops::dense_forward(x, &self.params[p], &self.params[p + 1])?,
                None,
            ),
        })
    }

    /// Forward pass without caching; returns the scalar output.
    pub fn forward(&self, input: &Tensor<T>) -> Result<T, NnError> {
        self.check_input(input)?;
        let mut x = input.clone();
        let mut p = 0;
        for layer in &self.layers {
            x = self.step(layer, p, &x)?.0;
            if layer.has_params() {
                p += 2;
            }
        }
        Ok(x.data()[0])
    }

    /// Forward pass that records every intermediate activation.
    pub fn forward_trace(&self, input: &Tensor<T>) -> Result<Trace<T>, NnError> {
        self.check_input(input)?;
        let mut trace = Trace {
            activations: vec![input.clone()],
            pool_argmax: Vec::with_capacity(self.layers.len()),
        };
        let mut p = 0;
        for layer in &self.layers {
            let (y, arg) = self.step(layer, p, trace.activations.last().expect("input"))?;
            trace.activations.push(y);
            trace.pool_argmax.push(arg);
            if layer.has_params() {
                p += 2;
            }
        }
        Ok(trace)
    }

    /// Reverse-mode gradients of every parameter given `d_loss`, the derivative
    /// of the loss with respect to the network output.
    pub fn backward(&self, trace: &Trace<T>, d_loss: T) -> Result<Vec<Tensor<T>>, NnError> {
        if trace.activations.len() != self.layers.len() + 1
            || trace.pool_argmax.len() != self.layers.len()
        {
            return Err(NnError::MissingCache);
        }
        let mut grads: Vec<Tensor<T>> = self
            .params
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        let mut p = self.params.len();
        let mut g = Tensor::scalar(d_loss);
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.activations[i];
            let y = &trace.activations[i + 1];
            if g.shape() != y.shape() {
                return Err(NnError::MissingCache);
            }
            g = match *layer {
                LayerSpec::Conv2d { .. } => {
                    p -= 2;
                    // Nothing upstream of the first layer needs a gradient.
                    let (dx, dk, db) = ops::conv2d_backward(x, &self.params[p], &g, i > 0)?;
                    grads[p] = dk;
                    grads[p + 1] = db;
                    match dx {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                LayerSpec::Dense { .. } => {
                    p -= 2;
                    let (dx, dw, db) = ops::dense_backward(x, &self.params[p], &g)?;
                    grads[p] = dw;
                    grads[p + 1] = db;
                    dx
                }
                LayerSpec::MaxPool2d { .. } => {
                    let arg = trace.pool_argmax[i].as_ref().ok_or(NnError::MissingCache)?;
                    ops::maxpool2d_backward(x.shape(), arg, &g)?
                }
                LayerSpec::Relu => ops::activate_backward(Activation::Relu, x, y, &g),
                LayerSpec::Sigmoid => ops::activate_backward(Activation::Sigmoid, x, y, &g),
                LayerSpec::Flatten => g.reshaped(x.shape())?,
            };
        }
        Ok(grads)
    }
}
