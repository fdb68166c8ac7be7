//! Per-pixel multilayer perceptron with hand-written backpropagation.
//!
//! Weights are shared across the grid, so a scene is a batch of
//! `width * height` rows. Hidden layers use a leaky rectifier; the output
//! layer is linear.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{FlowField, Hypothesis, HypothesisSet, UncertaintyField};

pub const LEAKY_SLOPE: f64 = 0.1;
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"FUQM";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HeadKind {
    /// `(u, v)`.
    Flow,
    /// `(a_u, a_v, s_u, s_v)` with `s = ln b`.
    Laplace,
    /// `m` blocks of `(a_u, a_v)` or, with scales, `(a_u, a_v, s_u, s_v)`.
    Hypotheses { m: usize, with_scale: bool },
}

impl HeadKind {
    pub fn output_dim(&self) -> usize {
        match *self {
            HeadKind::Flow => 2,
            HeadKind::Laplace => 4,
            HeadKind::Hypotheses { m, with_scale } => m * if with_scale { 4 } else { 2 },
        }
    }

    pub fn members(&self) -> usize {
        match *self {
            HeadKind::Hypotheses { m, .. } => m,
            _ => 1,
        }
    }

    pub fn has_scale(&self) -> bool {
        match *self {
            HeadKind::Flow => false,
            HeadKind::Laplace => true,
            HeadKind::Hypotheses { with_scale, .. } => with_scale,
        }
    }

    /// Columns per member block.
    pub fn block(&self) -> usize {
        if self.has_scale() {
            4
        } else {
            2
        }
    }

    fn code(&self) -> (u32, u32, u32) {
        match *self {
            HeadKind::Flow => (0, 1, 0),
            HeadKind::Laplace => (1, 1, 1),
            HeadKind::Hypotheses { m, with_scale } => (2, m as u32, with_scale as u32),
        }
    }

    fn from_code(kind: u32, m: u32, scale: u32) -> Result<Self> {
        match kind {
            0 => Ok(HeadKind::Flow),
            1 => Ok(HeadKind::Laplace),
            2 if m > 0 => Ok(HeadKind::Hypotheses {
                m: m as usize,
                with_scale: scale != 0,
            }),
            _ => Err(Error::format(
                "checkpoint",
                format!("unknown head kind {kind} (m = {m})"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `inputs x outputs`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub layers: Vec<Dense>,
    pub head: HeadKind,
}

/// Gradient with the same layout as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad {
    pub layers: Vec<Dense>,
}

impl ModelGrad {
    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.w.iter().chain(l.b.iter()).map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.w *= s;
            l.b *= s;
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }
}

fn flatten_layers(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend(l.w.iter());
        out.extend(l.b.iter());
    }
    out
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
}

/// Per-scene network output split by head.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Flow(FlowField),
    Laplace {
        flow: FlowField,
        uncertainty: UncertaintyField,
    },
    Hypotheses(HypothesisSet),
}

impl Prediction {
    /// The single-flow estimate; for hypotheses, the first member.
    pub fn flow(&self) -> &FlowField {
        match self {
            Prediction::Flow(f) => f,
            Prediction::Laplace { flow, .. } => flow,
            Prediction::Hypotheses(h) => &h.members()[0].flow,
        }
    }
}

fn leaky(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        LEAKY_SLOPE * z
    }
}

fn leaky_prime(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

impl ToyModel {
    /// He-style initialization for the hidden layers; the output layer
    /// starts small so initial scales are close to `b = 1`.
    pub fn new(input_dim: usize, hidden: &[usize], head: HeadKind, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden.contains(&0) {
            return Err(Error::InvalidArgument("layer sizes must be >= 1".into()));
        }
        if head.members() == 0 {
            return Err(Error::InvalidArgument("hypothesis head needs m >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(head.output_dim());
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, io)| {
                let std = if k == last {
                    0.1 / (io[0] as f64).sqrt()
                } else {
                    (2.0 / io[0] as f64).sqrt()
                };
                let normal = Normal::new(0.0, std).expect("std is positive");
                Dense {
                    w: Array2::from_shape_simple_fn((io[0], io[1]), || normal.sample(&mut rng)),
                    b: Array1::zeros(io[1]),
                }
            })
            .collect();
        Ok(Self { layers, head })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.head.output_dim()
    }

    /// Layer widths from input to output.
    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![self.input_dim()];
        out.extend(self.layers.iter().map(|l| l.w.ncols()));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn parameters(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.w.iter_mut()
                .chain(l.b.iter_mut())
                .for_each(|p| *p = it.next().unwrap());
        }
        Ok(())
    }

    pub fn zero_grad(&self) -> ModelGrad {
        ModelGrad {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    w: Array2::zeros(l.w.raw_dim()),
                    b: Array1::zeros(l.b.raw_dim()),
                })
                .collect(),
        }
    }

    /// Raw output matrix (`rows x output_dim`). With `dropout = (rate, rng)`
    /// every hidden unit is kept with probability `1 - rate` and rescaled by
    /// `1 / (1 - rate)`.
    pub fn forward_matrix<R: Rng>(
        &self,
        x: &Array2<f64>,
        mut dropout: Option<(f64, &mut R)>,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::InvalidArgument(format!(
                "expected {} input columns, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let keep = match &dropout {
            Some((rate, _)) if !(0.0..1.0).contains(rate) => {
                return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")))
            }
            Some((rate, _)) if *rate > 0.0 => Some(Bernoulli::new(1.0 - rate).expect("valid probability")),
            _ => None,
        };
        let n = self.layers.len();
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            masks: Vec::with_capacity(n),
        };
        let mut a = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.w) + &layer.b;
            cache.inputs.push(a);
            if k + 1 == n {
                cache.pre.push(Array2::zeros((0, 0)));
                cache.masks.push(None);
                return Ok((z, cache));
            }
            let mut h = z.mapv(leaky);
            let mask = match (&keep, dropout.as_mut()) {
                (Some(bern), Some((rate, rng))) => {
                    let scale = 1.0 / (1.0 - *rate);
                    let m = Array2::from_shape_simple_fn(h.raw_dim(), || if bern.sample(*rng) { scale } else { 0.0 });
                    h *= &m;
                    Some(m)
                }
                _ => None,
            };
            cache.pre.push(z);
            cache.masks.push(mask);
            a = h;
        }
        unreachable!("model has at least one layer")
    }

    /// Gradient of a scalar loss given its gradient with respect to the
    /// output matrix.
    pub fn backward(&self, cache: &ForwardCache, d_out: &Array2<f64>) -> ModelGrad {
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut d = d_out.to_owned();
        for k in (0..self.layers.len()).rev() {
            if k + 1 < self.layers.len() {
                if let Some(m) = &cache.masks[k] {
                    d *= m;
                }
                d.zip_mut_with(&cache.pre[k], |g, &z| *g *= leaky_prime(z));
            }
            let gw = cache.inputs[k].t().dot(&d);
            let gb = d.sum_axis(Axis(0));
            if k > 0 {
                d = d.dot(&self.layers[k].w.t());
            }
            grads.push(Dense { w: gw, b: gb });
        }
        grads.reverse();
        ModelGrad { layers: grads }
    }

    /// Splits an output matrix for a `width x height` scene into the head's
    /// prediction type.
    pub fn decode(&self, out: &Array2<f64>, width: usize, height: usize) -> Result<Prediction> {
        let block = self.head.block();
        let member = |k: usize| -> Result<Hypothesis> {
            let c = k * block;
            let col = |j: usize| out.column(c + j).to_vec();
            let flow = FlowField::new(width, height, col(0), col(1))?;
            let uncertainty = if block == 4 {
                Some(UncertaintyField::from_log_scales(width, height, &col(2), &col(3))?)
            } else {
                None
            };
            Ok(Hypothesis { flow, uncertainty })
        };
        match self.head {
            HeadKind::Flow => Ok(Prediction::Flow(member(0)?.flow)),
            HeadKind::Laplace => {
                let h = member(0)?;
                Ok(Prediction::Laplace {
                    flow: h.flow,
                    uncertainty: h.uncertainty.expect("laplace head has scales"),
                })
            }
            HeadKind::Hypotheses { m, .. } => Ok(Prediction::Hypotheses(HypothesisSet::new(
                (0..m).map(member).collect::<Result<_>>()?,
            )?)),
        }
    }

    /// Runs a grid of inputs (`width * height` rows) through the network.
    pub fn predict<R: Rng>(
        &self,
        x: &Array2<f64>,
        width: usize,
        height: usize,
        dropout: Option<(f64, &mut R)>,
    ) -> Result<Prediction> {
        if x.nrows() != width * height {
            return Err(Error::InvalidArgument(format!(
                "expected {} rows, got {}",
                width * height,
                x.nrows()
            )));
        }
        let (out, _) = self.forward_matrix(x, dropout)?;
        self.decode(&out, width, height)
    }

    /// Little-endian checkpoint: magic `FUQM`, u32 version, u32 head kind,
    /// u32 m, u32 with-scale flag, u32 layer count, the layer widths as u32,
    /// then for each layer its weights (row-major, inputs x outputs) and
    /// biases as f32.
    pub fn to_checkpoint(&self) -> Vec<u8> {
        let mut out = CHECKPOINT_MAGIC.to_vec();
        let (kind, m, scale) = self.head.code();
        let sizes = self.sizes();
        for x in [CHECKPOINT_VERSION, kind, m, scale, self.layers.len() as u32] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for s in sizes {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        for p in self.parameters() {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
        out
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let bad = |r: &str| Error::format("checkpoint", r.to_string());
        if bytes.len() < 24 || bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("missing magic"));
        }
        let word = |i: usize| -> Result<u32> {
            bytes
                .get(4 + 4 * i..8 + 4 * i)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or_else(|| bad("truncated header"))
        };
        if word(0)? != CHECKPOINT_VERSION {
            return Err(bad("unsupported version"));
        }
        let head = HeadKind::from_code(word(1)?, word(2)?, word(3)?)?;
        let n_layers = word(4)? as usize;
        if n_layers == 0 || n_layers > 64 {
            return Err(bad("implausible layer count"));
        }
        let sizes = (0..=n_layers)
            .map(|i| word(5 + i).map(|w| w as usize))
            .collect::<Result<Vec<_>>>()?;
        if sizes.contains(&0) || sizes[n_layers] != head.output_dim() {
            return Err(bad("layer widths do not match head"));
        }
        let count: usize = sizes.windows(2).map(|io| io[0] * io[1] + io[1]).sum();
        let start = 4 + 4 * (6 + n_layers);
        if bytes.len() != start + 4 * count {
            return Err(bad("payload length does not match layer widths"));
        }
        let params: Vec<f64> = bytes[start..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let mut model = ToyModel {
            layers: sizes
                .windows(2)
                .map(|io| Dense {
                    w: Array2::zeros((io[0], io[1])),
                    b: Array1::zeros(io[1]),
                })
                .collect(),
            head,
        };
        model.set_parameters(&params)?;
        Ok(model)
    }
}
