//! From-scratch feed-forward classifiers.
//!
//! Two architectures are supported: a dense net with two hidden layers and a
//! softmax output, and a 1-D conv net with two convolutions along the window
//! axis followed by the same three dense layers. A `linear` kind (softmax
//! regression) exists for diagnostics.
//!
//! All weights and biases live in one flat vector. Layers appear in order;
//! within a layer the weights come first and the biases after them. Dense
//! weights are `[output][input]`, conv weights `[out_ch][in_ch][kernel]`.

mod checkpoint;
mod ensemble;
pub mod network;
mod training;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use ensemble::{argmax, Ensemble, DEFAULT_ENSEMBLE_SIZE};
pub use training::{
    fisher_diagonal, loss_and_gradient, train, EWCPenalty, Optimizer, TrainConfig, Trained,
};

use crate::data::WindowedSample;
use crate::error::{Error, Result};
use crate::seed::rng;
use network::{softmax, Layer, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetKind {
    Dense,
    Conv,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Network shape without the task-dependent parts (input shape, class count,
/// seed).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub kind: NetKind,
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub conv: Vec<ConvLayerSpec>,
}

impl Architecture {
    pub fn dense(h1: usize, h2: usize) -> Self {
        Self {
            kind: NetKind::Dense,
            hidden: vec![h1, h2],
            conv: Vec::new(),
        }
    }

    pub fn conv(conv: [ConvLayerSpec; 2], h1: usize, h2: usize) -> Self {
        Self {
            kind: NetKind::Conv,
            hidden: vec![h1, h2],
            conv: conv.to_vec(),
        }
    }

    pub fn linear() -> Self {
        Self {
            kind: NetKind::Linear,
            hidden: Vec::new(),
            conv: Vec::new(),
        }
    }

    /// Dense (64, 32).
    pub fn default_dense() -> Self {
        Self::dense(64, 32)
    }

    /// Conv (8 ch, kernel 5, stride 1) then (16 ch, kernel 5, stride 1),
    /// dense (64, 32).
    pub fn default_conv() -> Self {
        Self::conv(
            [
                ConvLayerSpec { out_channels: 8, kernel: 5, stride: 1 },
                ConvLayerSpec { out_channels: 16, kernel: 5, stride: 1 },
            ],
            64,
            32,
        )
    }

    pub fn spec(&self, input_shape: (usize, usize), n_classes: usize, seed: u64) -> NetSpec {
        NetSpec {
            kind: self.kind,
            input_shape,
            n_classes,
            hidden: self.hidden.clone(),
            conv: self.conv.clone(),
            activation: Activation::Relu,
            seed,
        }
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            NetKind::Dense => "mlp",
            NetKind::Conv => "cnn",
            NetKind::Linear => "linear",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub kind: NetKind,
    /// (window, channels)
    pub input_shape: (usize, usize),
    pub n_classes: usize,
    pub hidden: Vec<usize>,
    pub conv: Vec<ConvLayerSpec>,
    #[serde(default)]
    pub activation: Activation,
    pub seed: u64,
}

/// Output length of a valid (unpadded) 1-D convolution.
pub fn conv_output_len(in_len: usize, kernel: usize, stride: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || kernel > in_len {
        return None;
    }
    Some((in_len - kernel) / stride + 1)
}

impl NetSpec {
    pub fn input_dim(&self) -> usize {
        self.input_shape.0 * self.input_shape.1
    }

    pub fn topology(&self) -> Result<Topology> {
        let (w, c) = self.input_shape;
        if w == 0 || c == 0 {
            return Err(Error::Config(format!("input shape {w}x{c} must be nonzero")));
        }
        if self.n_classes < 2 {
            return Err(Error::Config(format!(
                "n_classes = {} must be at least 2",
                self.n_classes
            )));
        }
        let (want_hidden, want_conv) = match self.kind {
            NetKind::Dense => (2, 0),
            NetKind::Conv => (2, 2),
            NetKind::Linear => (0, 0),
        };
        if self.hidden.len() != want_hidden || self.conv.len() != want_conv {
            return Err(Error::Config(format!(
                "{:?} net needs {want_hidden} hidden sizes and {want_conv} conv layers, got {} and {}",
                self.kind,
                self.hidden.len(),
                self.conv.len()
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden sizes must be positive".into()));
        }

        let mut layers = Vec::new();
        let mut offset = 0;
        fn push(layer: Layer, layers: &mut Vec<Layer>, offset: &mut usize) {
            *offset += layer.param_count();
            layers.push(layer);
        }
        let (mut len, mut ch) = (w, c);
        for (i, cl) in self.conv.iter().enumerate() {
            let out_len = conv_output_len(len, cl.kernel, cl.stride).ok_or_else(|| {
                Error::Config(format!(
                    "conv layer {}: kernel {} / stride {} invalid for length {len}",
                    i + 1,
                    cl.kernel,
                    cl.stride
                ))
            })?;
            if cl.out_channels == 0 {
                return Err(Error::Config(format!("conv layer {}: zero channels", i + 1)));
            }
            let layer = Layer::Conv {
                in_len: len,
                in_ch: ch,
                out_ch: cl.out_channels,
                kernel: cl.kernel,
                stride: cl.stride,
                out_len,
                offset,
            };
            push(layer, &mut layers, &mut offset);
            len = out_len;
            ch = cl.out_channels;
        }
        let mut input = len * ch;
        for &h in &self.hidden {
            push(Layer::Dense { input, output: h, offset }, &mut layers, &mut offset);
            input = h;
        }
        push(
            Layer::Dense {
                input,
                output: self.n_classes,
                offset,
            },
            &mut layers,
            &mut offset,
        );
        Topology::from_layers(layers)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.topology()?.n_params)
    }
}

/// A network spec plus its flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NetModel {
    spec: NetSpec,
    topology: Topology,
    pub params: Vec<f64>,
}

fn he_uniform(layer: &Layer, params: &mut [f64], r: &mut impl Rng) {
    let bound = (6.0 / layer.fan_in() as f64).sqrt();
    let off = layer.offset();
    for p in &mut params[off..off + layer.weight_count()] {
        *p = r.random_range(-bound..bound);
    }
}

/// Seeded He-uniform weights, zero biases.
pub fn init_model(spec: &NetSpec) -> Result<NetModel> {
    let topology = spec.topology()?;
    let mut params = vec![0.0; topology.n_params];
    let mut r = rng(spec.seed);
    for layer in &topology.layers {
        he_uniform(layer, &mut params, &mut r);
    }
    Ok(NetModel {
        spec: spec.clone(),
        topology,
        params,
    })
}

impl NetModel {
    pub fn from_parts(spec: NetSpec, params: Vec<f64>) -> Result<Self> {
        let topology = spec.topology()?;
        if params.len() != topology.n_params {
            return Err(Error::Shape {
                expected: topology.n_params,
                got: params.len(),
            });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(Self {
            spec,
            topology,
            params,
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn n_classes(&self) -> usize {
        self.spec.n_classes
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub(crate) fn check_input(&self, len: usize) -> Result<()> {
        if len != self.spec.input_dim() {
            return Err(Error::Shape {
                expected: self.spec.input_dim(),
                got: len,
            });
        }
        Ok(())
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x.len())?;
        Ok(self.topology.logits(&self.params, x))
    }

    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    /// `B x n_classes` softmax outputs.
    pub fn forward(&self, batch: &[WindowedSample]) -> Result<Vec<Vec<f64>>> {
        batch.iter().map(|s| self.probabilities(&s.features)).collect()
    }

    /// Widen the output layer to `n_classes`, appending freshly initialized
    /// rows (He-uniform weights from `seed`, zero bias). Existing parameters
    /// are copied untouched. Returns the new model and, for every old
    /// parameter index, its index in the new vector.
    pub fn extend_head(&self, n_classes: usize, seed: u64) -> Result<(NetModel, Vec<usize>)> {
        let old = self.spec.n_classes;
        if n_classes < old {
            return Err(Error::Config(format!(
                "cannot shrink output head from {old} to {n_classes} classes"
            )));
        }
        let spec = NetSpec {
            n_classes,
            ..self.spec.clone()
        };
        let topology = spec.topology()?;
        let Some(&Layer::Dense { input, offset, .. }) = topology.layers.last() else {
            unreachable!("output layer is dense")
        };
        let old_w_end = offset + input * old;
        let new_w_end = offset + input * n_classes;

        let mut map: Vec<usize> = (0..old_w_end).collect();
        map.extend((0..old).map(|o| new_w_end + o));

        let mut params = vec![0.0; topology.n_params];
        for (i, &j) in map.iter().enumerate() {
            params[j] = self.params[i];
        }
        let bound = (6.0 / input as f64).sqrt();
        let mut r = rng(seed);
        for p in &mut params[old_w_end..new_w_end] {
            *p = r.random_range(-bound..bound);
        }
        Ok((
            NetModel {
                spec,
                topology,
                params,
            },
            map,
        ))
    }
}
