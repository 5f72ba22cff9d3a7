//! Layer stacks built from architecture specs and run over `T` time steps.
//!
//! Activations are laid out `T×B×features`. Stateless layers see the
//! `T·B` rows as one batch, LIF layers integrate over the leading axis and
//! TCJA blocks read the whole `T` stack at once, so the layer-by-layer
//! schedule materialises every time step before each attention block.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{ArchSpec, LayerSpec};
use crate::attention::{
    default_kernel, tcja_forward, AttentionMaps, AttentionVars, Fusion, TcjaVars,
};
use crate::autodiff::{Conv2dOptions, PoolKind, Tape, Var};
use crate::error::{Error, Result};
use crate::neuron::{lif_sequence, LifConfig};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub time_steps: usize,
    pub num_classes: usize,
    pub lif: LifConfig,
    /// TCJA temporal kernel when the arch token does not set one.
    pub k_t: Option<usize>,
    /// TCJA channel kernel when the arch token does not set one.
    pub k_c: Option<usize>,
    pub fusion: Fusion,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            channels: 2,
            height: 16,
            width: 16,
            time_steps: 8,
            num_classes: 4,
            lif: LifConfig::default(),
            k_t: None,
            k_c: None,
            fusion: Fusion::Multiply,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub value: Tensor<F>,
}

/// Built layer; parameter fields index into [`Network::params`].
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv { weight: usize, padding: usize },
    Lif,
    Pool { kind: PoolKind, k: usize },
    Dropout { p: f64 },
    Fc { weight: usize, bias: usize },
    Voting { window: usize },
    Tcja { w: usize, e: usize, fusion: Fusion },
}

pub enum Mode<'a> {
    /// Dropout active, masks drawn from the given generator.
    Train(&'a mut ChaCha8Rng),
    Eval,
}

/// Handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `T×B×classes`.
    pub output: Var,
    /// Same order as [`Network::params`].
    pub params: Vec<Var>,
    pub attention: Vec<AttentionVars>,
    /// Spike outputs of every LIF layer.
    pub spikes: Vec<Var>,
    /// Output of every layer, in stack order.
    pub layers: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct Network<F> {
    arch: ArchSpec,
    config: NetworkConfig,
    layers: Vec<Layer>,
    params: Vec<Param<F>>,
    /// Per-sample feature shape after each layer.
    shapes: Vec<Vec<usize>>,
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Uniform `±1/√fan_in` from a stream keyed by the parameter name, so a
/// layer gets the same weights whatever else the stack contains.
fn init_param<F: Scalar>(seed: u64, name: &str, shape: &[usize], fan_in: usize) -> Tensor<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name));
    crate::attention::uniform_fan_in(shape, fan_in, &mut rng)
}

fn layer_error(index: usize, spec: &LayerSpec, message: impl Into<String>) -> Error {
    Error::Layer {
        index,
        layer: spec.to_string(),
        message: message.into(),
    }
}

impl<F: Scalar> Network<F> {
    /// Builds the stack, inferring every layer's shape. Layer indices in
    /// errors are 1-based, matching token positions in the architecture string.
    pub fn build(arch: &ArchSpec, config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.lif.validate()?;
        let NetworkConfig {
            channels,
            height,
            width,
            time_steps,
            num_classes,
            ..
        } = *config;
        if channels == 0 || height == 0 || width == 0 || time_steps == 0 || num_classes == 0 {
            return Err(Error::invalid(
                "network input dimensions, time steps and class count must be positive",
            ));
        }
        let mut net = Network {
            arch: arch.clone(),
            config: config.clone(),
            layers: Vec::with_capacity(arch.layers.len()),
            params: Vec::new(),
            shapes: Vec::with_capacity(arch.layers.len()),
        };
        let mut feat = vec![channels, height, width];
        let (mut n_conv, mut n_fc, mut n_tcja) = (0, 0, 0);
        for (i, spec) in arch.layers.iter().enumerate() {
            let index = i + 1;
            let err = |m: String| layer_error(index, spec, m);
            let layer = match *spec {
                LayerSpec::Conv { out, k } => {
                    let &[cin, h, w] = feat.as_slice() else {
                        return Err(err(format!("convolution needs C×H×W input, got {feat:?}")));
                    };
                    let padding = (k - 1) / 2;
                    if h + 2 * padding < k || w + 2 * padding < k {
                        return Err(err(format!("kernel {k} larger than padded input {h}×{w}")));
                    }
                    let name = format!("conv{n_conv}.weight");
                    n_conv += 1;
                    let weight = net.push_param(seed, name, &[out, cin, k, k], cin * k * k);
                    feat = vec![out, h + 2 * padding - k + 1, w + 2 * padding - k + 1];
                    Layer::Conv { weight, padding }
                }
                LayerSpec::Lif => Layer::Lif,
                LayerSpec::MaxPool(k) | LayerSpec::AvgPool(k) => {
                    let &[c, h, w] = feat.as_slice() else {
                        return Err(err(format!("pooling needs C×H×W input, got {feat:?}")));
                    };
                    if h % k != 0 || w % k != 0 {
                        return Err(err(format!("{h}×{w} not divisible by pool size {k}")));
                    }
                    feat = vec![c, h / k, w / k];
                    let kind = if matches!(spec, LayerSpec::MaxPool(_)) {
                        PoolKind::Max
                    } else {
                        PoolKind::Avg
                    };
                    Layer::Pool { kind, k }
                }
                LayerSpec::Dropout(p) => {
                    if !(0.0..1.0).contains(&p) {
                        return Err(err(format!("dropout ratio {p} outside [0, 1)")));
                    }
                    Layer::Dropout { p }
                }
                LayerSpec::Fc(out) => {
                    let fin = numel(&feat);
                    let weight = net.push_param(seed, format!("fc{n_fc}.weight"), &[fin, out], fin);
                    let bias = net.push_param(seed, format!("fc{n_fc}.bias"), &[out], fin);
                    n_fc += 1;
                    feat = vec![out];
                    Layer::Fc { weight, bias }
                }
                LayerSpec::Voting => {
                    let &[l] = feat.as_slice() else {
                        return Err(err(format!("voting needs a flat input, got {feat:?}")));
                    };
                    if l % num_classes != 0 {
                        return Err(err(format!(
                            "{l} neurons not divisible by {num_classes} classes"
                        )));
                    }
                    feat = vec![num_classes];
                    Layer::Voting {
                        window: l / num_classes,
                    }
                }
                LayerSpec::Tcja { kernels, fusion } => {
                    let &[c, _, _] = feat.as_slice() else {
                        return Err(err(format!("TCJA needs C×H×W input, got {feat:?}")));
                    };
                    let t = time_steps;
                    let (k_t, k_c) = kernels.unwrap_or((
                        config.k_t.unwrap_or_else(|| default_kernel(t)),
                        config.k_c.unwrap_or_else(|| default_kernel(c)),
                    ));
                    if k_t == 0 || k_t >= t || k_c == 0 || k_c >= c {
                        return Err(err(format!(
                            "kernel sizes K_T={k_t}, K_C={k_c} need 1 <= K_T < T={t} and 1 <= K_C < C={c}"
                        )));
                    }
                    let w = net.push_param(seed, format!("tcja{n_tcja}.w"), &[c, c, k_t], c * k_t);
                    let e = net.push_param(seed, format!("tcja{n_tcja}.e"), &[t, t, k_c], t * k_c);
                    n_tcja += 1;
                    Layer::Tcja {
                        w,
                        e,
                        fusion: fusion.unwrap_or(config.fusion),
                    }
                }
            };
            net.layers.push(layer);
            net.shapes.push(feat.clone());
        }
        if feat != [num_classes] {
            return Err(Error::Arch(format!(
                "network output shape {feat:?} does not match {num_classes} classes"
            )));
        }
        Ok(net)
    }

    fn push_param(&mut self, seed: u64, name: String, shape: &[usize], fan_in: usize) -> usize {
        let value = init_param(seed, &name, shape, fan_in);
        self.params.push(Param { name, value });
        self.params.len() - 1
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Per-sample feature shape after each layer.
    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn params(&self) -> &[Param<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<F>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<F>> {
        self.params
            .iter()
            .find(|p| p.name == name)
            .map(|p| &p.value)
    }

    /// Replaces a parameter, keeping its shape.
    pub fn set_param(&mut self, name: &str, value: Tensor<F>) -> Result<()> {
        let p = self
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::invalid(format!("no parameter named {name}")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_param",
                lhs: p.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn tcja_param_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with("tcja"))
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn tcja_blocks(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, Layer::Tcja { .. }))
            .count()
    }

    /// Runs `input` (`T×B×C×H×W`) through the stack.
    pub fn forward(
        &self,
        tape: &mut Tape<F>,
        input: &Tensor<F>,
        mode: Mode<'_>,
        trainable: bool,
    ) -> Result<ForwardPass> {
        let c = &self.config;
        let expect = [c.time_steps, c.channels, c.height, c.width];
        let s = input.shape();
        if s.len() != 5 || [s[0], s[2], s[3], s[4]] != expect {
            return Err(Error::invalid(format!(
                "input shape {s:?} does not match T×B×C×H×W with T={}, C={}, H={}, W={}",
                c.time_steps, c.channels, c.height, c.width
            )));
        }
        let (t, b) = (s[0], s[1]);
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), trainable))
            .collect();
        let mut mode = mode;
        let mut x = tape.constant(input.clone());
        let mut attention = Vec::new();
        let mut spikes = Vec::new();
        let mut outputs = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let wrap = |e: Error| layer_error(i + 1, &self.arch.layers[i], e.to_string());
            let feat = &self.shapes[i];
            let mut tb_shape = vec![t, b];
            tb_shape.extend_from_slice(feat);
            x = match *layer {
                Layer::Conv { weight, padding } => {
                    let flat = flatten_rows(tape, x, t * b, 3).map_err(wrap)?;
                    let opts = Conv2dOptions { stride: 1, padding };
                    let y = tape.conv2d(flat, params[weight], opts).map_err(wrap)?;
                    tape.reshape(y, &tb_shape).map_err(wrap)?
                }
                Layer::Lif => {
                    let y = lif_sequence(tape, x, &c.lif).map_err(wrap)?;
                    spikes.push(y);
                    y
                }
                Layer::Pool { kind, k } => {
                    let flat = flatten_rows(tape, x, t * b, 3).map_err(wrap)?;
                    let y = tape.pool2d(flat, kind, k).map_err(wrap)?;
                    tape.reshape(y, &tb_shape).map_err(wrap)?
                }
                Layer::Dropout { p } => match &mut mode {
                    Mode::Train(rng) if p > 0.0 => {
                        let mut mask_shape = tape.shape(x).to_vec();
                        mask_shape[0] = 1;
                        let mask = dropout_mask(&mask_shape, p, rng);
                        let m = tape.constant(mask);
                        tape.mul(x, m).map_err(wrap)?
                    }
                    _ => x,
                },
                Layer::Fc { weight, bias } => {
                    let flat = tape
                        .reshape(x, &[t * b, numel(&tape.shape(x)[2..])])
                        .map_err(wrap)?;
                    let y = tape
                        .fully_connected(flat, params[weight], params[bias])
                        .map_err(wrap)?;
                    tape.reshape(y, &tb_shape).map_err(wrap)?
                }
                Layer::Voting { window } => tape.window_mean_last(x, window).map_err(wrap)?,
                Layer::Tcja { w, e, fusion } => {
                    let vars = TcjaVars {
                        w: params[w],
                        e: params[e],
                        fusion,
                    };
                    let (y, maps) = tcja_forward(tape, x, &vars).map_err(wrap)?;
                    attention.push(maps);
                    y
                }
            };
            outputs.push(x);
        }
        Ok(ForwardPass {
            output: x,
            params,
            attention,
            spikes,
            layers: outputs,
        })
    }

    /// Mean output over time, `B×classes`, in eval mode.
    pub fn rates(&self, input: &Tensor<F>) -> Result<Tensor<F>> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, input, Mode::Eval, false)?;
        Ok(time_mean(tape.value(pass.output)))
    }

    /// `𝒯`, `𝒞`, `ℱ` of every TCJA block for one `T×C×H×W` sample.
    pub fn attention_maps(&self, sample: &Tensor<F>) -> Result<Vec<AttentionMaps<F>>> {
        let mut shape = sample.shape().to_vec();
        if shape.len() != 4 {
            return Err(Error::invalid(format!(
                "expected a T×C×H×W sample, got {shape:?}"
            )));
        }
        shape.insert(1, 1);
        let input = sample.clone().reshape(&shape)?;
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, &input, Mode::Eval, false)?;
        let squeeze = |v: Var| {
            let s = tape.shape(v);
            tape.value(v).clone().reshape(&s[1..])
        };
        pass.attention
            .iter()
            .map(|a| {
                Ok(AttentionMaps {
                    t_map: squeeze(a.t_map)?,
                    c_map: squeeze(a.c_map)?,
                    f_map: squeeze(a.f_map)?,
                })
            })
            .collect()
    }
}

/// Collapses the two leading axes into one and checks the trailing rank.
fn flatten_rows<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    rows: usize,
    trailing: usize,
) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != trailing + 2 {
        return Err(Error::invalid(format!(
            "expected T×B plus {trailing} feature axes, got {s:?}"
        )));
    }
    let mut shape = vec![rows];
    shape.extend_from_slice(&s[2..]);
    tape.reshape(x, &shape)
}

/// Bernoulli(1−p) keep mask scaled by `1/(1−p)`.
pub fn dropout_mask<F: Scalar>(shape: &[usize], p: f64, rng: &mut impl Rng) -> Tensor<F> {
    let keep = F::lit(1.0 / (1.0 - p));
    Tensor::from_fn(shape, |_| {
        if rng.gen::<f64>() < p {
            F::zero()
        } else {
            keep
        }
    })
}

/// Mean over the leading axis of a `T×B×K` tensor.
pub fn time_mean<F: Scalar>(out: &Tensor<F>) -> Tensor<F> {
    let t = out.shape()[0];
    let rest = &out.shape()[1..];
    let n = numel(rest);
    let inv = F::one() / F::lit(t as f64);
    let mut acc = vec![F::zero(); n];
    for frame in out.data().chunks(n.max(1)) {
        for (a, &v) in acc.iter_mut().zip(frame) {
            *a += v;
        }
    }
    Tensor::new(rest.to_vec(), acc.into_iter().map(|v| v * inv).collect()).expect("time mean shape")
}
