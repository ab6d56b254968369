//! Minimal feed-forward network engine: forward pass, softmax
//! cross-entropy and reverse-mode gradients in double precision.

mod layers;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Tensor};
use layers::{ConvGeom, PoolGeom};

/// One layer of a feed-forward chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    Flatten,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Flatten => "flatten",
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                if inputs == 0 || outputs == 0 {
                    return Err(Error::Shape("dense widths must be positive".into()));
                }
                if input != [inputs] {
                    return Err(Error::Shape(format!(
                        "dense({inputs}->{outputs}) expects input [{inputs}], got {input:?}"
                    )));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if kernel == 0 || stride == 0 || in_channels == 0 || out_channels == 0 {
                    return Err(Error::Shape(
                        "conv2d channels, kernel and stride must be positive".into(),
                    ));
                }
                let [c, h, w] = spatial(input, "conv2d")?;
                if c != in_channels {
                    return Err(Error::Shape(format!(
                        "conv2d expects {in_channels} input channels, got {c}"
                    )));
                }
                if h + 2 * padding < kernel || w + 2 * padding < kernel {
                    return Err(Error::Shape(format!(
                        "conv2d kernel {kernel} larger than padded input {h}x{w} (padding {padding})"
                    )));
                }
                Ok(vec![
                    out_channels,
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                ])
            }
            LayerSpec::MaxPool2d { window, stride } => {
                if window == 0 || stride == 0 {
                    return Err(Error::Shape("maxpool2d window and stride must be positive".into()));
                }
                let [c, h, w] = spatial(input, "maxpool2d")?;
                if h < window || w < window {
                    return Err(Error::Shape(format!(
                        "maxpool2d window {window} larger than input {h}x{w}"
                    )));
                }
                Ok(vec![c, (h - window) / stride + 1, (w - window) / stride + 1])
            }
        }
    }

    /// Shapes of (weights, bias) for parametric layers, empty otherwise.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => vec![vec![outputs, inputs], vec![outputs]],
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            ],
            _ => Vec::new(),
        }
    }

    fn fans(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Dense { inputs, outputs } => (inputs, outputs),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (in_channels * kernel * kernel, out_channels * kernel * kernel),
            _ => (0, 0),
        }
    }
}

fn spatial(input: &[usize], kind: &str) -> Result<[usize; 3]> {
    match input {
        &[c, h, w] => Ok([c, h, w]),
        _ => Err(Error::Shape(format!(
            "{kind} expects a [channels, height, width] input, got {input:?}"
        ))),
    }
}

/// Gradient tensors, one per parameter tensor of the model that produced
/// them and in the same order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    pub fn tensors(&self) -> &[Tensor] {
        &self.0
    }
}

/// Layer chain plus parameters. Parameter tensors are stored in declaration
/// order: `(weights, bias)` for every dense and conv2d layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    params: Vec<Tensor>,
    num_classes: usize,
    /// `shapes[i]` is the per-sample input shape of layer `i`; the last entry
    /// is the logit shape.
    shapes: Vec<Vec<usize>>,
    /// Index of the first parameter tensor of each layer.
    param_slots: Vec<Option<usize>>,
}

impl ModelState {
    pub fn new(
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        params: Vec<Tensor>,
        num_classes: usize,
    ) -> Result<Self> {
        let (shapes, param_slots, expected) = plan(&input_shape, &layers, num_classes)?;
        if params.len() != expected.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for (i, (p, e)) in params.iter().zip(&expected).enumerate() {
            if p.shape() != e.as_slice() {
                return Err(Error::Shape(format!(
                    "parameter tensor {i} has shape {:?}, layer declares {e:?}",
                    p.shape()
                )));
            }
        }
        Ok(Self {
            input_shape,
            layers,
            params,
            num_classes,
            shapes,
            param_slots,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    /// Mutable parameter access. Shapes must be preserved by callers.
    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Per-sample output shape of layer `index`.
    pub fn output_shape(&self, index: usize) -> &[usize] {
        &self.shapes[index + 1]
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Index of the layer whose output represents the final convolutional
    /// block: the ReLU right after the last conv2d, or the conv itself.
    pub fn final_conv_block(&self) -> Option<usize> {
        let conv = self
            .layers
            .iter()
            .rposition(|l| matches!(l, LayerSpec::Conv2d { .. }))?;
        match self.layers.get(conv + 1) {
            Some(LayerSpec::Relu) => Some(conv + 1),
            _ => Some(conv),
        }
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        if batch.shape().len() < 2 || batch.row_shape() != self.input_shape.as_slice() {
            return Err(Error::Shape(format!(
                "batch shape {:?} does not match model input [batch, {}]",
                batch.shape(),
                self.input_shape
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(", ")
            )));
        }
        Ok(batch.rows())
    }

    fn layer_forward(&self, index: usize, x: &[f64], batch: usize) -> Vec<f64> {
        let input = &self.shapes[index];
        let output = &self.shapes[index + 1];
        match self.layers[index] {
            LayerSpec::Dense { inputs, outputs } => {
                let slot = self.param_slots[index].expect("dense layer has parameters");
                layers::dense_forward(
                    x,
                    batch,
                    inputs,
                    outputs,
                    self.params[slot].data(),
                    self.params[slot + 1].data(),
                )
            }
            LayerSpec::Relu => layers::relu_forward(x),
            LayerSpec::Flatten => x.to_vec(),
            LayerSpec::Conv2d { .. } => {
                let slot = self.param_slots[index].expect("conv layer has parameters");
                layers::conv2d_forward(
                    x,
                    batch,
                    self.conv_geom(index, input, output),
                    self.params[slot].data(),
                    self.params[slot + 1].data(),
                )
            }
            LayerSpec::MaxPool2d { .. } => {
                layers::maxpool_forward(x, batch, self.pool_geom(index, input, output))
            }
        }
    }

    fn conv_geom(&self, index: usize, input: &[usize], output: &[usize]) -> ConvGeom {
        let LayerSpec::Conv2d {
            out_channels,
            kernel,
            stride,
            padding,
            ..
        } = self.layers[index]
        else {
            unreachable!("conv_geom on non-conv layer")
        };
        ConvGeom {
            channels: input[0],
            height: input[1],
            width: input[2],
            out_channels,
            kernel,
            stride,
            padding,
            out_height: output[1],
            out_width: output[2],
        }
    }

    fn pool_geom(&self, index: usize, input: &[usize], output: &[usize]) -> PoolGeom {
        let LayerSpec::MaxPool2d { window, stride } = self.layers[index] else {
            unreachable!("pool_geom on non-pool layer")
        };
        PoolGeom {
            channels: input[0],
            height: input[1],
            width: input[2],
            window,
            stride,
            out_height: output[1],
            out_width: output[2],
        }
    }

    /// Runs the chain and returns every intermediate activation, starting
    /// with the input and ending with the output of layer `last`.
    fn trace(&self, batch: &Tensor, last: usize) -> Result<Vec<Vec<f64>>> {
        let n = self.check_batch(batch)?;
        let mut acts = Vec::with_capacity(last + 2);
        acts.push(batch.data().to_vec());
        for index in 0..=last {
            let out = self.layer_forward(index, &acts[index], n);
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    index,
                    kind: self.layers[index].kind(),
                });
            }
            acts.push(out);
        }
        Ok(acts)
    }

    /// Logits of shape `[batch, num_classes]`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        self.forward_to(batch, self.layers.len() - 1)
    }

    /// Output of layer `layer` (inclusive) for every sample in the batch.
    pub fn forward_to(&self, batch: &Tensor, layer: usize) -> Result<Tensor> {
        if layer >= self.layers.len() {
            return Err(Error::invalid(format!(
                "layer index {layer} out of range for {} layers",
                self.layers.len()
            )));
        }
        let n = self.check_batch(batch)?;
        let mut acts = self.trace(batch, layer)?;
        let mut shape = vec![n];
        shape.extend_from_slice(&self.shapes[layer + 1]);
        Tensor::new(shape, acts.pop().expect("trace is nonempty"))
    }

    /// Argmax class per sample; ties go to the lowest class index.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.forward(batch)?))
    }

    /// Mean softmax cross-entropy over the batch and its parameter gradients.
    pub fn loss_and_grad(&self, batch: &Tensor, labels: &[usize]) -> Result<(f64, Gradients)> {
        let n = self.check_batch(batch)?;
        if labels.len() != n {
            return Err(Error::Shape(format!(
                "{} labels for a batch of {n}",
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: self.num_classes,
            });
        }
        let acts = self.trace(batch, self.layers.len() - 1)?;
        let logits = Tensor::new(vec![n, self.num_classes], acts[self.layers.len()].clone())?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, labels)?;

        let mut grads: Vec<Tensor> = self
            .params
            .iter()
            .map(|p| Tensor::zeros(p.shape().to_vec()))
            .collect();
        let mut upstream = dlogits.into_data();
        for index in (0..self.layers.len()).rev() {
            upstream = self.layer_backward(index, &acts[index], &upstream, n, &mut grads);
        }
        Ok((loss, Gradients(grads)))
    }

    fn layer_backward(
        &self,
        index: usize,
        x: &[f64],
        dy: &[f64],
        batch: usize,
        grads: &mut [Tensor],
    ) -> Vec<f64> {
        let need_dx = index > 0;
        let input = &self.shapes[index];
        let output = &self.shapes[index + 1];
        match self.layers[index] {
            LayerSpec::Dense { inputs, outputs } => {
                let slot = self.param_slots[index].expect("dense layer has parameters");
                let (dw, db) = grads[slot..slot + 2].split_at_mut(1);
                layers::dense_backward(
                    x,
                    dy,
                    batch,
                    inputs,
                    outputs,
                    self.params[slot].data(),
                    dw[0].data_mut(),
                    db[0].data_mut(),
                    need_dx,
                )
            }
            LayerSpec::Relu => layers::relu_backward(x, dy),
            LayerSpec::Flatten => dy.to_vec(),
            LayerSpec::Conv2d { .. } => {
                let slot = self.param_slots[index].expect("conv layer has parameters");
                let (dw, db) = grads[slot..slot + 2].split_at_mut(1);
                layers::conv2d_backward(
                    x,
                    dy,
                    batch,
                    self.conv_geom(index, input, output),
                    self.params[slot].data(),
                    dw[0].data_mut(),
                    db[0].data_mut(),
                    need_dx,
                )
            }
            LayerSpec::MaxPool2d { .. } => {
                layers::maxpool_backward(x, dy, batch, self.pool_geom(index, input, output))
            }
        }
    }
}

type Plan = (Vec<Vec<usize>>, Vec<Option<usize>>, Vec<Vec<usize>>);

/// Validates a layer chain, returning per-layer shapes, parameter slots and
/// the expected parameter tensor shapes.
fn plan(input_shape: &[usize], layers: &[LayerSpec], num_classes: usize) -> Result<Plan> {
    if layers.is_empty() {
        return Err(Error::Shape("model has no layers".into()));
    }
    if num_classes == 0 {
        return Err(Error::Shape("num_classes must be positive".into()));
    }
    if input_shape.is_empty() || input_shape.contains(&0) {
        return Err(Error::Shape(format!("invalid input shape {input_shape:?}")));
    }
    let mut shapes = vec![input_shape.to_vec()];
    let mut slots = Vec::with_capacity(layers.len());
    let mut expected = Vec::new();
    for (i, layer) in layers.iter().enumerate() {
        let out = layer
            .output_shape(shapes.last().expect("shapes nonempty"))
            .map_err(|e| Error::Shape(format!("layer {i} ({}): {e}", layer.kind())))?;
        let ps = layer.param_shapes();
        slots.push(if ps.is_empty() { None } else { Some(expected.len()) });
        expected.extend(ps);
        shapes.push(out);
    }
    let last = shapes.last().expect("shapes nonempty");
    if last.as_slice() != [num_classes] {
        return Err(Error::Shape(format!(
            "network output {last:?} does not match {num_classes} classes"
        )));
    }
    Ok((shapes, slots, expected))
}

/// Draws a fresh model: weights uniform in `(-s, s)` with
/// `s = sqrt(6 / (fan_in + fan_out))`, biases zero.
pub fn init_params<R: Rng + ?Sized>(
    input_shape: &[usize],
    layers: &[LayerSpec],
    num_classes: usize,
    rng: &mut R,
) -> Result<ModelState> {
    let (_, _, expected) = plan(input_shape, layers, num_classes)?;
    let mut params = Vec::with_capacity(expected.len());
    for layer in layers {
        let shapes = layer.param_shapes();
        if shapes.is_empty() {
            continue;
        }
        let (fan_in, fan_out) = layer.fans();
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        params.push(Tensor::from_fn(shapes[0].clone(), |_| rng.gen_range(-bound..bound)));
        params.push(Tensor::zeros(shapes[1].clone()));
    }
    ModelState::new(input_shape.to_vec(), layers.to_vec(), params, num_classes)
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let [n, classes] = logits.shape() else {
        return Err(Error::Shape(format!(
            "logits must be [batch, classes], got {:?}",
            logits.shape()
        )));
    };
    let (n, classes) = (*n, *classes);
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
    }
    let mut grad = vec![0.0; n * classes];
    let mut total = 0.0;
    let scale = 1.0 / n as f64;
    for (b, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: classes,
            });
        }
        let z = logits.row(b);
        let top = argmax(z);
        let m = z[top];
        let rest: f64 = z
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != top)
            .map(|(_, &v)| (v - m).exp())
            .sum();
        total += (m - z[label]) + rest.ln_1p();
        let g = &mut grad[b * classes..(b + 1) * classes];
        let denom = 1.0 + rest;
        for (j, (gj, &zj)) in g.iter_mut().zip(z).enumerate() {
            let p = if j == top { 1.0 } else { (zj - m).exp() } / denom;
            *gj = (p - if j == label { 1.0 } else { 0.0 }) * scale;
        }
    }
    Ok((total * scale, Tensor::new(vec![n, classes], grad)?))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Row-wise argmax of a `[batch, classes]` tensor, lowest index on ties.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows()).map(|b| argmax(logits.row(b))).collect()
}

/// Reference architectures sized for desk-scale experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// flatten -> dense -> relu -> dense
    MlpSmall { hidden: usize },
    /// (conv3x3 -> relu -> maxpool2) x 2 -> flatten -> dense
    ConvSmall { channels: usize },
}

impl Architecture {
    pub fn layers(&self, input_shape: &[usize], num_classes: usize) -> Result<Vec<LayerSpec>> {
        match *self {
            Architecture::MlpSmall { hidden } => Ok(vec![
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    inputs: input_shape.iter().product(),
                    outputs: hidden,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    inputs: hidden,
                    outputs: num_classes,
                },
            ]),
            Architecture::ConvSmall { channels } => {
                let [c, h, w] = spatial(input_shape, "conv-small")?;
                if h < 4 || w < 4 {
                    return Err(Error::Shape(format!(
                        "conv-small needs images of at least 4x4, got {h}x{w}"
                    )));
                }
                let conv = |i, o| LayerSpec::Conv2d {
                    in_channels: i,
                    out_channels: o,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                };
                let pool = LayerSpec::MaxPool2d { window: 2, stride: 2 };
                let flat = 2 * channels * (h / 2 / 2) * (w / 2 / 2);
                Ok(vec![
                    conv(c, channels),
                    LayerSpec::Relu,
                    pool,
                    conv(channels, 2 * channels),
                    LayerSpec::Relu,
                    pool,
                    LayerSpec::Flatten,
                    LayerSpec::Dense {
                        inputs: flat,
                        outputs: num_classes,
                    },
                ])
            }
        }
    }

    pub fn init<R: Rng + ?Sized>(
        &self,
        input_shape: &[usize],
        num_classes: usize,
        rng: &mut R,
    ) -> Result<ModelState> {
        let layers = self.layers(input_shape, num_classes)?;
        init_params(input_shape, &layers, num_classes, rng)
    }
}
