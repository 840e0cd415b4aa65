//! Layer topology and the per-sample forward/backward passes over a flat
//! parameter vector.

use crate::error::{Error, Result};

/// One weight layer. Every layer except the last is followed by a relu.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    /// `weights[o * input + i]`, then `bias[o]`.
    Dense {
        input: usize,
        output: usize,
        offset: usize,
    },
    /// 1-D convolution along the window axis. Activations are laid out
    /// `[position * channels + channel]`. Weights are
    /// `weights[(o * in_ch + c) * kernel + j]`, then `bias[o]`.
    Conv {
        in_len: usize,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        out_len: usize,
        offset: usize,
    },
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        match *self {
            Layer::Dense { input, .. } => input,
            Layer::Conv { in_len, in_ch, .. } => in_len * in_ch,
        }
    }

    pub fn output_dim(&self) -> usize {
        match *self {
            Layer::Dense { output, .. } => output,
            Layer::Conv { out_len, out_ch, .. } => out_len * out_ch,
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            Layer::Dense { input, .. } => input,
            Layer::Conv { in_ch, kernel, .. } => in_ch * kernel,
        }
    }

    pub fn weight_count(&self) -> usize {
        match *self {
            Layer::Dense { input, output, .. } => input * output,
            Layer::Conv {
                in_ch,
                out_ch,
                kernel,
                ..
            } => in_ch * out_ch * kernel,
        }
    }

    pub fn bias_count(&self) -> usize {
        match *self {
            Layer::Dense { output, .. } => output,
            Layer::Conv { out_ch, .. } => out_ch,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.bias_count()
    }

    pub fn offset(&self) -> usize {
        match *self {
            Layer::Dense { offset, .. } | Layer::Conv { offset, .. } => offset,
        }
    }

    fn forward(&self, params: &[f64], a: &[f64], z: &mut [f64]) {
        match *self {
            Layer::Dense {
                input,
                output,
                offset,
            } => {
                let w = &params[offset..offset + input * output];
                let b = &params[offset + input * output..offset + input * output + output];
                for o in 0..output {
                    let row = &w[o * input..(o + 1) * input];
                    z[o] = b[o] + dot(row, a);
                }
            }
            Layer::Conv {
                in_ch,
                out_ch,
                kernel,
                stride,
                out_len,
                offset,
                ..
            } => {
                let nw = in_ch * out_ch * kernel;
                let w = &params[offset..offset + nw];
                let b = &params[offset + nw..offset + nw + out_ch];
                for p in 0..out_len {
                    let base = p * stride;
                    for o in 0..out_ch {
                        let mut s = b[o];
                        for c in 0..in_ch {
                            let wr = &w[(o * in_ch + c) * kernel..(o * in_ch + c + 1) * kernel];
                            for (j, wj) in wr.iter().enumerate() {
                                s += wj * a[(base + j) * in_ch + c];
                            }
                        }
                        z[p * out_ch + o] = s;
                    }
                }
            }
        }
    }

    /// Accumulate parameter gradients for output delta `dz` given the layer
    /// input `a`; if `da` is given, write the input gradient into it.
    fn backward(
        &self,
        params: &[f64],
        a: &[f64],
        dz: &[f64],
        grad: &mut [f64],
        da: Option<&mut [f64]>,
    ) {
        match *self {
            Layer::Dense {
                input,
                output,
                offset,
            } => {
                let (gw, gb) = grad[offset..offset + input * output + output].split_at_mut(input * output);
                for o in 0..output {
                    let d = dz[o];
                    gb[o] += d;
                    if d != 0.0 {
                        for (g, x) in gw[o * input..(o + 1) * input].iter_mut().zip(a) {
                            *g += d * x;
                        }
                    }
                }
                if let Some(da) = da {
                    da.iter_mut().for_each(|v| *v = 0.0);
                    let w = &params[offset..offset + input * output];
                    for o in 0..output {
                        let d = dz[o];
                        if d != 0.0 {
                            for (v, wi) in da.iter_mut().zip(&w[o * input..(o + 1) * input]) {
                                *v += d * wi;
                            }
                        }
                    }
                }
            }
            Layer::Conv {
                in_ch,
                out_ch,
                kernel,
                stride,
                out_len,
                offset,
                ..
            } => {
                let nw = in_ch * out_ch * kernel;
                let w = &params[offset..offset + nw];
                let (gw, gb) = grad[offset..offset + nw + out_ch].split_at_mut(nw);
                let mut da = da;
                if let Some(da) = da.as_deref_mut() {
                    da.iter_mut().for_each(|v| *v = 0.0);
                }
                for p in 0..out_len {
                    let base = p * stride;
                    for o in 0..out_ch {
                        let d = dz[p * out_ch + o];
                        if d == 0.0 {
                            continue;
                        }
                        gb[o] += d;
                        for c in 0..in_ch {
                            let wi = (o * in_ch + c) * kernel;
                            for j in 0..kernel {
                                let ai = (base + j) * in_ch + c;
                                gw[wi + j] += d * a[ai];
                                if let Some(da) = da.as_deref_mut() {
                                    da[ai] += d * w[wi + j];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub layers: Vec<Layer>,
    pub n_params: usize,
}

/// Activations recorded by a forward pass: `acts[0]` is the input,
/// `acts[l + 1]` the (relu'd) output of layer `l`, the last entry the
/// logits.
pub struct Trace {
    pub acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn logits(&self) -> &[f64] {
        self.acts.last().expect("trace has at least the input")
    }
}

impl Topology {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        let mut offset = 0;
        for (i, l) in layers.iter().enumerate() {
            if l.offset() != offset {
                return Err(Error::Config(format!("layer {i} offset {} != {offset}", l.offset())));
            }
            if i > 0 && layers[i - 1].output_dim() != l.input_dim() {
                return Err(Error::Shape {
                    expected: layers[i - 1].output_dim(),
                    got: l.input_dim(),
                });
            }
            offset += l.param_count();
        }
        Ok(Self {
            layers,
            n_params: offset,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Layer::output_dim).unwrap_or(0)
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Trace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; layer.output_dim()];
            layer.forward(params, &acts[l], &mut z);
            if l != last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        Trace { acts }
    }

    pub fn logits(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        self.forward(params, x).acts.pop().unwrap_or_default()
    }

    /// Backpropagate `dlogits` through a recorded trace, adding parameter
    /// gradients into `grad`.
    pub fn backward(&self, params: &[f64], trace: &Trace, dlogits: &[f64], grad: &mut [f64]) {
        let mut delta = dlogits.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &trace.acts[l];
            if l == 0 {
                layer.backward(params, input, &delta, grad, None);
            } else {
                let mut da = vec![0.0; layer.input_dim()];
                layer.backward(params, input, &delta, grad, Some(&mut da));
                // relu mask: the stored activation is zero where the unit was off
                for (d, a) in da.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
                delta = da;
            }
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `log softmax(logits)[label]`.
pub fn log_prob(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits[label] - lse
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_normalize() {
        let p = softmax(&[1.0, 2.0, 3.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let u = softmax(&[0.0; 4]);
        assert!(u.iter().all(|v| (*v - 0.25).abs() < 1e-15));
        let big = softmax(&[1000.0, 0.0]);
        assert!(big[0].is_finite() && big[1] >= 0.0);
    }

    #[test]
    fn log_prob_matches_log_softmax() {
        let z = [0.3, -1.2, 2.0];
        let p = softmax(&z);
        for (y, py) in p.iter().enumerate() {
            assert!((log_prob(&z, y) - py.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_by_hand() {
        // in_len 4, 1 channel, 1 filter of width 2, stride 2
        let layer = Layer::Conv {
            in_len: 4,
            in_ch: 1,
            out_ch: 1,
            kernel: 2,
            stride: 2,
            out_len: 2,
            offset: 0,
        };
        let params = [1.0, -1.0, 0.5];
        let mut z = [0.0; 2];
        layer.forward(&params, &[3.0, 1.0, 2.0, 5.0], &mut z);
        assert_eq!(z, [2.5, -2.5]);
    }

    #[test]
    fn offsets_are_checked() {
        let bad = vec![
            Layer::Dense { input: 2, output: 2, offset: 0 },
            Layer::Dense { input: 2, output: 1, offset: 5 },
        ];
        assert!(Topology::from_layers(bad).is_err());
    }
}
