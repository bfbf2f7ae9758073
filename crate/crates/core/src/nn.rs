//! One-hidden-layer perceptron with hand-derived first and second order
//! derivatives of the mean-squared error.
//!
//! The network is `W2 · φ(W1 · x + b1) + b2`. Parameters live in one flat
//! buffer laid out as `[W1 | b1 | W2 | b2]`, with both weight matrices stored
//! row-major. Gradients and Hessian-vector products share the layout, so the
//! parameter-space algebra (axpy, dot) is plain slice arithmetic.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => a.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-a).exp()),
        }
    }

    /// First and second derivative expressed through the activation value.
    #[inline]
    fn derivs(self, h: f64) -> (f64, f64) {
        match self {
            Activation::Tanh => {
                let d1 = 1.0 - h * h;
                (d1, -2.0 * h * d1)
            }
            Activation::Sigmoid => {
                let d1 = h * (1.0 - h);
                (d1, d1 * (1.0 - 2.0 * h))
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Parse(format!("unknown activation `{other}`"))),
        }
    }
}

/// Weights and biases of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    in_dim: usize,
    hidden: usize,
    out_dim: usize,
    activation: Activation,
    values: Vec<f64>,
}

/// A gradient or direction in parameter space; shares the parameter layout.
pub type ParamGradient = MlpParams;

/// One input/target pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Example {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        Example { x, y }
    }
}

impl MlpParams {
    pub fn zeros(in_dim: usize, hidden: usize, out_dim: usize) -> Result<Self> {
        if in_dim == 0 || hidden == 0 || out_dim == 0 {
            return Err(Error::invalid(format!(
                "layer sizes must be positive, got {in_dim}x{hidden}x{out_dim}"
            )));
        }
        let n = hidden * in_dim + hidden + out_dim * hidden + out_dim;
        Ok(MlpParams {
            in_dim,
            hidden,
            out_dim,
            activation: Activation::default(),
            values: vec![0.0; n],
        })
    }

    /// Builds parameters from explicit row-major blocks.
    pub fn from_parts(
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
        in_dim: usize,
    ) -> Result<Self> {
        let hidden = b1.len();
        let out_dim = b2.len();
        let mut p = Self::zeros(in_dim, hidden, out_dim)?;
        if w1.len() != hidden * in_dim {
            return Err(Error::DimensionMismatch {
                context: "W1",
                expected: hidden * in_dim,
                actual: w1.len(),
            });
        }
        if w2.len() != out_dim * hidden {
            return Err(Error::DimensionMismatch {
                context: "W2",
                expected: out_dim * hidden,
                actual: w2.len(),
            });
        }
        p.values.clear();
        p.values.extend(w1);
        p.values.extend(b1);
        p.values.extend(w2);
        p.values.extend(b2);
        Ok(p)
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }
    pub fn hidden(&self) -> usize {
        self.hidden
    }
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }
    pub fn activation(&self) -> Activation {
        self.activation
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn offsets(&self) -> [usize; 4] {
        let w1 = 0;
        let b1 = w1 + self.hidden * self.in_dim;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.out_dim * self.hidden;
        [w1, b1, w2, b2]
    }

    pub fn w1(&self) -> &[f64] {
        let o = self.offsets();
        &self.values[o[0]..o[1]]
    }
    pub fn b1(&self) -> &[f64] {
        let o = self.offsets();
        &self.values[o[1]..o[2]]
    }
    pub fn w2(&self) -> &[f64] {
        let o = self.offsets();
        &self.values[o[2]..o[3]]
    }
    pub fn b2(&self) -> &[f64] {
        let o = self.offsets();
        &self.values[o[3]..]
    }

    fn split(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let o = self.offsets();
        let (w1, rest) = self.values.split_at(o[1]);
        let (b1, rest) = rest.split_at(o[2] - o[1]);
        let (w2, b2) = rest.split_at(o[3] - o[2]);
        (w1, b1, w2, b2)
    }

    fn split_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64], &mut [f64]) {
        let o = self.offsets();
        let (w1, rest) = self.values.split_at_mut(o[1]);
        let (b1, rest) = rest.split_at_mut(o[2] - o[1]);
        let (w2, b2) = rest.split_at_mut(o[3] - o[2]);
        (w1, b1, w2, b2)
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.in_dim == other.in_dim && self.hidden == other.hidden && self.out_dim == other.out_dim
    }

    fn check_shape(&self, other: &MlpParams, context: &'static str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                context,
                expected: self.len(),
                actual: other.len(),
            })
        }
    }

    pub fn zeros_like(&self) -> MlpParams {
        MlpParams {
            values: vec![0.0; self.values.len()],
            ..self.clone()
        }
    }

    pub fn dot(&self, other: &MlpParams) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// In-place `self += scale * other`.
    pub fn add_scaled(&mut self, other: &MlpParams, scale: f64) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn scaled(&self, scale: f64) -> MlpParams {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= scale);
        out
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(in_dim: usize, hidden: usize, out_dim: usize, seed: u64) -> Result<MlpParams> {
    let mut p = MlpParams::zeros(in_dim, hidden, out_dim)?;
    let mut rng = seed::rng_for(seed, &[seed::stream::INIT]);
    let bound1 = (6.0 / (in_dim + hidden) as f64).sqrt();
    let bound2 = (6.0 / (hidden + out_dim) as f64).sqrt();
    let (w1, _, w2, _) = p.split_mut();
    w1.iter_mut().for_each(|w| *w = rng.gen_range(-bound1..=bound1));
    w2.iter_mut().for_each(|w| *w = rng.gen_range(-bound2..=bound2));
    Ok(p)
}

fn check_example(params: &MlpParams, ex: &Example) -> Result<()> {
    if ex.x.len() != params.in_dim {
        return Err(Error::DimensionMismatch {
            context: "network input",
            expected: params.in_dim,
            actual: ex.x.len(),
        });
    }
    if ex.y.len() != params.out_dim {
        return Err(Error::DimensionMismatch {
            context: "network target",
            expected: params.out_dim,
            actual: ex.y.len(),
        });
    }
    Ok(())
}

fn check_batch(params: &MlpParams, batch: &[Example]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    batch.iter().try_for_each(|ex| check_example(params, ex))
}

/// Hidden activations and outputs for one input, written into scratch buffers.
#[inline]
fn forward_into(params: &MlpParams, x: &[f64], h: &mut [f64], out: &mut [f64]) {
    let (w1, b1, w2, b2) = params.split();
    let n_in = params.in_dim;
    for j in 0..params.hidden {
        let row = &w1[j * n_in..(j + 1) * n_in];
        let a = b1[j] + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
        h[j] = params.activation.apply(a);
    }
    let nh = params.hidden;
    for k in 0..params.out_dim {
        let row = &w2[k * nh..(k + 1) * nh];
        out[k] = b2[k] + row.iter().zip(h.iter()).map(|(w, hj)| w * hj).sum::<f64>();
    }
}

pub fn forward(params: &MlpParams, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != params.in_dim {
        return Err(Error::DimensionMismatch {
            context: "network input",
            expected: params.in_dim,
            actual: x.len(),
        });
    }
    let mut h = vec![0.0; params.hidden];
    let mut out = vec![0.0; params.out_dim];
    forward_into(params, x, &mut h, &mut out);
    Ok(out)
}

/// Mean over the batch of the squared Euclidean prediction error.
pub fn mse_loss(params: &MlpParams, batch: &[Example]) -> Result<f64> {
    check_batch(params, batch)?;
    let mut h = vec![0.0; params.hidden];
    let mut out = vec![0.0; params.out_dim];
    let mut total = 0.0;
    for ex in batch {
        forward_into(params, &ex.x, &mut h, &mut out);
        total += out.iter().zip(&ex.y).map(|(o, y)| (o - y).powi(2)).sum::<f64>();
    }
    Ok(total / batch.len() as f64)
}

/// Loss and its exact gradient in one pass.
pub fn loss_and_grad(params: &MlpParams, batch: &[Example]) -> Result<(f64, ParamGradient)> {
    check_batch(params, batch)?;
    let (nh, n_in, n_out) = (params.hidden, params.in_dim, params.out_dim);
    let scale = 2.0 / batch.len() as f64;
    let mut g = params.zeros_like();
    let mut h = vec![0.0; nh];
    let mut out = vec![0.0; n_out];
    let mut d_out = vec![0.0; n_out];
    let mut loss = 0.0;
    let w2 = params.w2().to_vec();
    {
        let (gw1, gb1, gw2, gb2) = g.split_mut();
        for ex in batch {
            forward_into(params, &ex.x, &mut h, &mut out);
            for k in 0..n_out {
                let r = out[k] - ex.y[k];
                loss += r * r;
                d_out[k] = scale * r;
                gb2[k] += d_out[k];
                for j in 0..nh {
                    gw2[k * nh + j] += d_out[k] * h[j];
                }
            }
            for j in 0..nh {
                let dh: f64 = (0..n_out).map(|k| w2[k * nh + j] * d_out[k]).sum();
                let da = dh * params.activation.derivs(h[j]).0;
                gb1[j] += da;
                for i in 0..n_in {
                    gw1[j * n_in + i] += da * ex.x[i];
                }
            }
        }
    }
    Ok((loss / batch.len() as f64, g))
}

pub fn grad(params: &MlpParams, batch: &[Example]) -> Result<ParamGradient> {
    loss_and_grad(params, batch).map(|(_, g)| g)
}

/// Exact Hessian-vector product of the batch loss, by forward-mode
/// differentiation of the analytic gradient along `v`.
pub fn hessian_vector_product(
    params: &MlpParams,
    batch: &[Example],
    v: &ParamGradient,
) -> Result<ParamGradient> {
    check_batch(params, batch)?;
    params.check_shape(v, "hessian-vector direction")?;
    let (nh, n_in, n_out) = (params.hidden, params.in_dim, params.out_dim);
    let scale = 2.0 / batch.len() as f64;
    let (_, _, w2, _) = params.split();
    let (v1, vb1, v2, vb2) = v.split();
    let mut hv = params.zeros_like();
    let mut h = vec![0.0; nh];
    let mut a_dot = vec![0.0; nh];
    let mut dh_dot = vec![0.0; nh];
    let mut out = vec![0.0; n_out];
    let mut d_out = vec![0.0; n_out];
    let mut d_out_dot = vec![0.0; n_out];
    let (hw1, hb1, hw2, hb2) = hv.split_mut();
    for ex in batch {
        forward_into(params, &ex.x, &mut h, &mut out);
        // tangent of the hidden activations
        for j in 0..nh {
            a_dot[j] = vb1[j] + (0..n_in).map(|i| v1[j * n_in + i] * ex.x[i]).sum::<f64>();
            dh_dot[j] = params.activation.derivs(h[j]).0 * a_dot[j];
        }
        for k in 0..n_out {
            let o_dot = vb2[k]
                + (0..nh)
                    .map(|j| v2[k * nh + j] * h[j] + w2[k * nh + j] * dh_dot[j])
                    .sum::<f64>();
            d_out[k] = scale * (out[k] - ex.y[k]);
            d_out_dot[k] = scale * o_dot;
            hb2[k] += d_out_dot[k];
            for j in 0..nh {
                hw2[k * nh + j] += d_out_dot[k] * h[j] + d_out[k] * dh_dot[j];
            }
        }
        for j in 0..nh {
            let (d1, d2) = params.activation.derivs(h[j]);
            let mut back = 0.0;
            let mut back_dot = 0.0;
            for k in 0..n_out {
                back += w2[k * nh + j] * d_out[k];
                back_dot += v2[k * nh + j] * d_out[k] + w2[k * nh + j] * d_out_dot[k];
            }
            let da_dot = back_dot * d1 + back * d2 * a_dot[j];
            hb1[j] += da_dot;
            for i in 0..n_in {
                hw1[j * n_in + i] += da_dot * ex.x[i];
            }
        }
    }
    Ok(hv)
}

/// Returns `params - lr * grad`.
pub fn axpy_update(params: &MlpParams, grad: &ParamGradient, lr: f64) -> Result<MlpParams> {
    params.check_shape(grad, "parameter update")?;
    let mut out = params.clone();
    out.add_scaled(grad, -lr);
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    name: String,
    shape: Vec<usize>,
    /// IEEE-754 bit patterns as 16 hex digits, row-major.
    values: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ParamsDoc {
    format: String,
    activation: Activation,
    in_dim: usize,
    hidden: usize,
    out_dim: usize,
    layers: Vec<LayerDoc>,
}

const PARAMS_FORMAT: &str = "popmaml-mlp/1";

fn hex_encode(values: &[f64]) -> Vec<String> {
    values.iter().map(|v| format!("{:016x}", v.to_bits())).collect()
}

fn hex_decode(values: &[String]) -> Result<Vec<f64>> {
    values
        .iter()
        .map(|s| {
            u64::from_str_radix(s, 16)
                .map(f64::from_bits)
                .map_err(|e| Error::Parse(format!("bad hex float `{s}`: {e}")))
        })
        .collect()
}

impl Serialize for MlpParams {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let (w1, b1, w2, b2) = self.split();
        let layer = |name: &str, shape: Vec<usize>, v: &[f64]| LayerDoc {
            name: name.to_string(),
            shape,
            values: hex_encode(v),
        };
        ParamsDoc {
            format: PARAMS_FORMAT.to_string(),
            activation: self.activation,
            in_dim: self.in_dim,
            hidden: self.hidden,
            out_dim: self.out_dim,
            layers: vec![
                layer("w1", vec![self.hidden, self.in_dim], w1),
                layer("b1", vec![self.hidden], b1),
                layer("w2", vec![self.out_dim, self.hidden], w2),
                layer("b2", vec![self.out_dim], b2),
            ],
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for MlpParams {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let doc = ParamsDoc::deserialize(deserializer)?;
        if doc.format != PARAMS_FORMAT {
            return Err(D::Error::custom(format!("unsupported format `{}`", doc.format)));
        }
        let find = |name: &str, shape: Vec<usize>| -> std::result::Result<Vec<f64>, D::Error> {
            let layer = doc
                .layers
                .iter()
                .find(|l| l.name == name)
                .ok_or_else(|| D::Error::custom(format!("missing layer `{name}`")))?;
            if layer.shape != shape {
                return Err(D::Error::custom(format!(
                    "layer `{name}` has shape {:?}, expected {shape:?}",
                    layer.shape
                )));
            }
            let v = hex_decode(&layer.values).map_err(D::Error::custom)?;
            if v.len() != shape.iter().product::<usize>() {
                return Err(D::Error::custom(format!("layer `{name}` has wrong value count")));
            }
            Ok(v)
        };
        let w1 = find("w1", vec![doc.hidden, doc.in_dim])?;
        let b1 = find("b1", vec![doc.hidden])?;
        let w2 = find("w2", vec![doc.out_dim, doc.hidden])?;
        let b2 = find("b2", vec![doc.out_dim])?;
        MlpParams::from_parts(w1, b1, w2, b2, doc.in_dim)
            .map(|p| p.with_activation(doc.activation))
            .map_err(D::Error::custom)
    }
}
