use std::io::{Read, Write};

use crate::dataset::{Example, CANVAS};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::models::{Architecture, InputMode, LayerSpec};
use crate::ops::BatchNormState;
use crate::real::Real;
use crate::rng::{Rng, Stream};
use crate::serialize::{read_tensors, write_tensors};
use crate::tensor::{Fill, Tensor};

/// An architecture together with its parameters and batch-norm statistics.
#[derive(Clone)]
pub struct Model<T> {
    arch: Architecture,
    params: Vec<Tensor<T>>,
    bn: Vec<BatchNormState<T>>,
}

impl<T: Real> std::fmt::Debug for Model<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Model({}, {} params)", self.arch.to_text(), self.param_count())
    }
}

/// `(fan_in, fan_out)` of a weight tensor, or `None` for biases and
/// batch-norm parameters.
fn fans(layer: &LayerSpec, slot: usize) -> Option<(usize, usize)> {
    if slot != 0 {
        return None;
    }
    match layer {
        LayerSpec::Conv(s) | LayerSpec::CoordConv { conv: s, .. } | LayerSpec::Deconv(s) => {
            Some((s.k * s.k * s.c_in, s.k * s.k * s.c_out))
        }
        LayerSpec::Dense { inputs, units } => Some((*inputs, *units)),
        _ => None,
    }
}

impl<T: Real> Model<T> {
    /// Weights are drawn uniformly from `±sqrt(6 / (fan_in + fan_out))`;
    /// biases and shifts start at zero and batch-norm scales at one.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let mut params = Vec::new();
        let mut bn = Vec::new();
        for layer in &arch.layers {
            let is_bn = matches!(layer, LayerSpec::BatchNorm { .. });
            for (slot, shape) in layer.param_shapes().into_iter().enumerate() {
                let tensor = match fans(layer, slot) {
                    Some((fan_in, fan_out)) => {
                        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                        let mut rng = Rng::with_stream(seed, Stream::Init, params.len() as u32);
                        Tensor::new(&shape, Fill::Uniform { lo: -limit, hi: limit }, &mut rng)?
                    }
                    None if is_bn && slot == 0 => Tensor::full(&shape, T::one()),
                    None => Tensor::zeros(&shape),
                };
                params.push(tensor);
            }
            if let LayerSpec::BatchNorm { channels } = layer {
                bn.push(BatchNormState::new(*channels));
            }
        }
        Ok(Model { arch, params, bn })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn batch_norm_states(&self) -> &[BatchNormState<T>] {
        &self.bn
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Registers the parameters on `graph`, as gradient-tracked leaves when
    /// `trainable`.
    pub fn bind(&self, graph: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.params.iter().map(|p| graph.leaf(p.clone(), trainable)).collect()
    }

    /// Runs the network on `input` (`[n, ..input shape]`). Batch norm uses
    /// batch statistics and updates its running averages when `training`.
    pub fn forward(&mut self, graph: &mut Graph<T>, input: Var, params: &[Var], training: bool) -> Result<Var> {
        if params.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "forward got {} parameter handles, model has {}",
                params.len(),
                self.params.len()
            )));
        }
        let Model { arch, bn, .. } = self;
        let mut next = params.iter().copied();
        let mut bn_states = bn.iter_mut();
        let mut x = input;
        for layer in &arch.layers {
            let mut take = || next.next().expect("parameter count checked above");
            x = match layer {
                LayerSpec::Conv(s) => {
                    let w = take();
                    let b = s.bias.then(&mut take);
                    graph.conv2d(x, w, b, s)?
                }
                LayerSpec::CoordConv { conv, coords } => {
                    let w = take();
                    let b = conv.bias.then(&mut take);
                    graph.coord_conv(x, w, b, conv, *coords)?
                }
                LayerSpec::Deconv(s) => {
                    let w = take();
                    let b = s.bias.then(&mut take);
                    graph.conv2d_transpose(x, w, b, s)?
                }
                LayerSpec::Dense { .. } => {
                    let w = take();
                    let b = take();
                    graph.dense(x, w, Some(b))?
                }
                LayerSpec::BatchNorm { .. } => {
                    let gamma = take();
                    let beta = take();
                    let state = bn_states.next().expect("one state per batch-norm layer");
                    graph.batch_norm(x, gamma, beta, state, training)?
                }
                LayerSpec::MaxPool => graph.max_pool2(x)?,
                LayerSpec::GlobalPool => graph.global_avg_pool(x)?,
                LayerSpec::Relu => graph.relu(x)?,
                LayerSpec::Flatten => graph.flatten(x)?,
            };
        }
        Ok(x)
    }

    /// Inference-mode outputs `[n, head width]` without recording gradients.
    pub fn predict(&mut self, input: Tensor<T>) -> Result<Tensor<T>> {
        let mut graph = Graph::new();
        let params = self.bind(&mut graph, false);
        let x = graph.constant(input);
        let y = self.forward(&mut graph, x, &params, false)?;
        Ok(graph.value(y).clone())
    }

    /// Checkpoint: every parameter tensor, then the running mean and
    /// variance of each batch-norm layer.
    pub fn save<W: Write>(&self, out: &mut W) -> Result<()> {
        let mut tensors = self.params.clone();
        for state in &self.bn {
            let c = state.channels();
            tensors.push(Tensor::from_vec(&[c], state.running_mean.clone())?);
            tensors.push(Tensor::from_vec(&[c], state.running_var.clone())?);
        }
        write_tensors(out, &tensors)
    }

    pub fn load<R: Read>(arch: Architecture, input: &mut R) -> Result<Self> {
        let mut model = Model::new(arch, 0)?;
        let tensors = read_tensors::<T, _>(input)?;
        let expected = model.params.len() + 2 * model.bn.len();
        if tensors.len() != expected {
            return Err(Error::format(
                "checkpoint",
                format!("{} tensors, architecture needs {expected}", tensors.len()),
            ));
        }
        let mut it = tensors.into_iter();
        for p in model.params.iter_mut() {
            let t = it.next().unwrap();
            if t.shape() != p.shape() {
                return Err(Error::format(
                    "checkpoint",
                    format!("tensor {:?} where {:?} expected", t.shape(), p.shape()),
                ));
            }
            *p = t;
        }
        for state in model.bn.iter_mut() {
            for slot in [&mut state.running_mean, &mut state.running_var] {
                let t = it.next().unwrap();
                if t.shape() != [slot.len()] {
                    return Err(Error::format("checkpoint", format!("batch-norm statistics {:?}", t.shape())));
                }
                *slot = t.into_data();
            }
        }
        Ok(model)
    }
}

/// Network input for a batch of examples.
pub fn input_batch<T: Real>(mode: InputMode, examples: &[&Example]) -> Tensor<T> {
    let [h, w, c] = mode.shape();
    let mut data = Vec::with_capacity(examples.len() * h * w * c);
    for ex in examples {
        match mode {
            InputMode::CoordsTiled | InputMode::Coords1x1 => {
                let [x, y] = ex.normalized_center().map(T::from_f64);
                for _ in 0..h * w {
                    data.push(x);
                    data.push(y);
                }
            }
            InputMode::Image => data.extend(ex.onehot.to_values::<T>()),
        }
    }
    debug_assert!(mode != InputMode::Image || (h, w) == (CANVAS, CANVAS));
    Tensor::from_vec(&[examples.len(), h, w, c], data).unwrap()
}
