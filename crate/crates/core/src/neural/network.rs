//! Parameter storage and the forward executor that lowers a `ModelSpec`
//! onto a `Tape`.

use std::sync::Mutex;
use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::spec::{Act, InputRef, LayerKind, ModelSpec, Norm};
use super::tape::Tape;
use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Param<E: Element> {
    pub name: String,
    pub value: Tensor<E>,
}

pub struct Network<E: Element> {
    pub spec: ModelSpec,
    pub params: Vec<Param<E>>,
    /// param indices per layer, in binding order
    layer_params: Vec<Vec<usize>>,
    input_shapes: Vec<Vec<usize>>,
    /// batch-norm running (mean, var) per layer index, updated on train
    /// forwards, consumed on eval forwards
    norm_stats: Mutex<HashMap<usize, (Vec<f64>, Vec<f64>)>>,
    /// while calibrating, (count per layer) for cumulative averaging instead
    /// of the exponential update
    calib_counts: Mutex<Option<HashMap<usize, usize>>>,
}

/// Node bookkeeping for one forward pass on a tape.
pub struct ForwardPass {
    /// tape node per parameter, aligned with `Network::params`
    pub param_nodes: Vec<usize>,
    /// tape node per layer output
    pub layer_nodes: Vec<usize>,
    /// named output nodes
    pub outputs: Vec<(String, usize)>,
}

impl ForwardPass {
    pub fn output(&self, name: &str) -> usize {
        self.outputs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, i)| *i)
            .unwrap_or_else(|| panic!("no output named {name}"))
    }
}

impl<E: Element> Network<E> {
    /// Initialize parameters for `spec` given the per-input shapes (batch
    /// dimension is a placeholder). Weights are N(0, 0.02); biases and norm
    /// shifts start at zero, norm scales at one.
    pub fn new(spec: ModelSpec, input_shapes: &[Vec<usize>], seed: u64) -> Result<Self> {
        let shapes = spec.infer_shapes(input_shapes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f64, 0.02).unwrap();
        let mut params: Vec<Param<E>> = Vec::new();
        let mut layer_params: Vec<Vec<usize>> = Vec::new();
        let gauss = |shape: &[usize], rng: &mut ChaCha8Rng| -> Tensor<E> {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| E::from_f64(normal.sample(rng))).collect();
            Tensor { shape: shape.to_vec(), data }
        };
        for (li, layer) in spec.layers.iter().enumerate() {
            let in_shape = resolve_input_shape(&layer.input, input_shapes, &shapes);
            let mut mine = Vec::new();
            let mut push = |params: &mut Vec<Param<E>>, name: String, value: Tensor<E>| {
                params.push(Param { name, value });
                mine.push(params.len() - 1);
            };
            match &layer.kind {
                LayerKind::Conv { out_ch, k, norm, .. } => {
                    let c = in_shape[1];
                    push(&mut params, format!("l{li}.w"), gauss(&[*out_ch, c, *k, *k], &mut rng));
                    push(&mut params, format!("l{li}.b"), Tensor::zeros(&[*out_ch]));
                    if *norm != Norm::None {
                        push(&mut params, format!("l{li}.gamma"), Tensor::filled(&[*out_ch], E::one()));
                        push(&mut params, format!("l{li}.beta"), Tensor::zeros(&[*out_ch]));
                    }
                }
                LayerKind::TConv { out_ch, k, norm, .. } => {
                    let c = in_shape[1];
                    push(&mut params, format!("l{li}.w"), gauss(&[c, *out_ch, *k, *k], &mut rng));
                    push(&mut params, format!("l{li}.b"), Tensor::zeros(&[*out_ch]));
                    if *norm != Norm::None {
                        push(&mut params, format!("l{li}.gamma"), Tensor::filled(&[*out_ch], E::one()));
                        push(&mut params, format!("l{li}.beta"), Tensor::zeros(&[*out_ch]));
                    }
                }
                LayerKind::Linear { out, .. } => {
                    let f = in_shape[1..].iter().product::<usize>();
                    push(&mut params, format!("l{li}.w"), gauss(&[*out, f], &mut rng));
                    push(&mut params, format!("l{li}.b"), Tensor::zeros(&[*out]));
                }
                _ => {}
            }
            layer_params.push(mine);
        }
        Ok(Network {
            spec,
            params,
            layer_params,
            input_shapes: input_shapes.to_vec(),
            norm_stats: Mutex::new(HashMap::new()),
            calib_counts: Mutex::new(None),
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Start a batch-norm statistics calibration pass: clears the running
    /// statistics so that subsequent train-mode forwards accumulate a plain
    /// cumulative average over the batches seen until `end_norm_calibration`.
    /// Run this over the training set once after optimisation; the resulting
    /// statistics are far less noisy than the exponential running update.
    pub fn begin_norm_calibration(&self) {
        self.norm_stats.lock().unwrap().clear();
        *self.calib_counts.lock().unwrap() = Some(HashMap::new());
    }

    pub fn end_norm_calibration(&self) {
        *self.calib_counts.lock().unwrap() = None;
    }

    /// Run the graph on `tape`. `inputs` are pre-existing tape nodes.
    /// `train` controls dropout; `seed` makes dropout masks reproducible.
    pub fn forward(
        &self,
        tape: &mut Tape<E>,
        inputs: &[usize],
        train: bool,
        seed: u64,
    ) -> Result<ForwardPass> {
        if inputs.len() != self.input_shapes.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} graph inputs, got {}",
                self.input_shapes.len(),
                inputs.len()
            )));
        }
        let param_nodes: Vec<usize> =
            self.params.iter().map(|p| tape.leaf(p.value.clone())).collect();
        let mut layer_nodes: Vec<usize> = Vec::with_capacity(self.spec.layers.len());
        for (li, layer) in self.spec.layers.iter().enumerate() {
            let x = resolve_node(tape, &layer.input, inputs, &layer_nodes)?;
            let pids = &self.layer_params[li];
            let node = match &layer.kind {
                LayerKind::Conv { stride, pad, norm, act, .. } => {
                    let mut y =
                        tape.conv2d(x, param_nodes[pids[0]], param_nodes[pids[1]], *stride, *pad)?;
                    y = self.apply_norm(tape, y, *norm, pids, &param_nodes, li, train)?;
                    apply_act(tape, y, *act)
                }
                LayerKind::TConv { stride, pad, norm, act, .. } => {
                    let mut y =
                        tape.tconv2d(x, param_nodes[pids[0]], param_nodes[pids[1]], *stride, *pad)?;
                    y = self.apply_norm(tape, y, *norm, pids, &param_nodes, li, train)?;
                    apply_act(tape, y, *act)
                }
                LayerKind::Linear { act, .. } => {
                    let flat = if tape.val(x).shape.len() > 2 { tape.flatten(x) } else { x };
                    let y = tape.linear(flat, param_nodes[pids[0]], param_nodes[pids[1]])?;
                    apply_act(tape, y, *act)
                }
                LayerKind::MaxPool2 => tape.max_pool2(x)?,
                LayerKind::AvgPool2 => tape.avg_pool2(x)?,
                LayerKind::GlobalAvgPool => tape.global_avg_pool(x)?,
                LayerKind::Flatten => tape.flatten(x),
                LayerKind::Dropout { p } => {
                    tape.dropout(x, *p, seed.wrapping_add(li as u64 * 0x9e37), train)
                }
            };
            layer_nodes.push(node);
        }
        let outputs = self
            .spec
            .outputs
            .iter()
            .map(|(n, i)| (n.clone(), layer_nodes[*i]))
            .collect();
        Ok(ForwardPass { param_nodes, layer_nodes, outputs })
    }

    /// Batch norm uses batch statistics while training (and refreshes the
    /// running estimates); at eval it applies the stored running stats so
    /// predictions are independent of eval batch composition.
    #[allow(clippy::too_many_arguments)]
    fn apply_norm(
        &self,
        tape: &mut Tape<E>,
        x: usize,
        norm: Norm,
        pids: &[usize],
        param_nodes: &[usize],
        li: usize,
        train: bool,
    ) -> Result<usize> {
        match norm {
            Norm::None => Ok(x),
            Norm::Instance => {
                tape.instance_norm(x, param_nodes[pids[2]], param_nodes[pids[3]], NORM_EPS)
            }
            Norm::Batch => {
                if train {
                    let (mean, var) = tape.channel_stats(x)?;
                    let mut stats = self.norm_stats.lock().unwrap();
                    let mut calib = self.calib_counts.lock().unwrap();
                    match (stats.get_mut(&li), calib.as_mut()) {
                        (Some((rm, rv)), Some(counts)) => {
                            // calibration pass: plain cumulative average
                            let k = counts.entry(li).or_insert(0);
                            *k += 1;
                            let w = 1.0 / *k as f64;
                            for (r, b) in rm.iter_mut().zip(&mean) {
                                *r = (1.0 - w) * *r + w * b;
                            }
                            for (r, b) in rv.iter_mut().zip(&var) {
                                *r = (1.0 - w) * *r + w * b;
                            }
                        }
                        (Some((rm, rv)), None) => {
                            for (r, b) in rm.iter_mut().zip(&mean) {
                                *r = 0.9 * *r + 0.1 * b;
                            }
                            for (r, b) in rv.iter_mut().zip(&var) {
                                *r = 0.9 * *r + 0.1 * b;
                            }
                        }
                        (None, calib) => {
                            if let Some(counts) = calib {
                                counts.insert(li, 1);
                            }
                            stats.insert(li, (mean, var));
                        }
                    }
                    tape.batch_norm(x, param_nodes[pids[2]], param_nodes[pids[3]], NORM_EPS)
                } else {
                    let stats = self.norm_stats.lock().unwrap();
                    match stats.get(&li) {
                        Some((mean, var)) => tape.batch_norm_eval(
                            x,
                            param_nodes[pids[2]],
                            param_nodes[pids[3]],
                            mean,
                            var,
                            NORM_EPS,
                        ),
                        // never trained: fall back to batch statistics
                        None => tape.batch_norm(
                            x,
                            param_nodes[pids[2]],
                            param_nodes[pids[3]],
                            NORM_EPS,
                        ),
                    }
                }
            }
        }
    }
}

fn apply_act<E: Element>(tape: &mut Tape<E>, x: usize, act: Act) -> usize {
    match act {
        Act::None => x,
        Act::Relu => tape.relu(x),
        Act::LeakyRelu(s) => tape.leaky_relu(x, s),
        Act::Tanh => tape.tanh_act(x),
        Act::Sigmoid => tape.sigmoid_act(x),
    }
}

fn resolve_node<E: Element>(
    tape: &mut Tape<E>,
    input: &InputRef,
    inputs: &[usize],
    layer_nodes: &[usize],
) -> Result<usize> {
    match input {
        InputRef::Input(i) => Ok(inputs[*i]),
        InputRef::Layer(l) => Ok(layer_nodes[*l]),
        InputRef::Concat(a, b) => {
            let na = resolve_node(tape, a, inputs, layer_nodes)?;
            let nb = resolve_node(tape, b, inputs, layer_nodes)?;
            tape.concat(na, nb)
        }
    }
}

fn resolve_input_shape(
    input: &InputRef,
    input_shapes: &[Vec<usize>],
    layer_shapes: &[Vec<usize>],
) -> Vec<usize> {
    match input {
        InputRef::Input(i) => input_shapes[*i].clone(),
        InputRef::Layer(l) => layer_shapes[*l].clone(),
        InputRef::Concat(a, b) => {
            let sa = resolve_input_shape(a, input_shapes, layer_shapes);
            let sb = resolve_input_shape(b, input_shapes, layer_shapes);
            let mut out = sa.clone();
            out[1] = sa[1] + sb[1];
            out
        }
    }
}
