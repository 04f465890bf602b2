//! Tiny convolutional encoder: three stride-2 conv layers, a 1×1 conv
//! projection that keeps the spatial grid, a parallel pooled vector head, and
//! a 1×1 predictor used only on the query side. The three heads carry no bias,
//! so a constant offset cannot satisfy the cosine losses for every input.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tape::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Output channels of the projection, vector head and predictor.
pub const EMBED_DIM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// One parameter tensor of the fixed topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub kind: ParamKind,
    pub out_channels: usize,
    pub kernel: usize,
    pub in_channels: usize,
}

impl ParamSpec {
    const fn weight(name: &'static str, out_channels: usize, kernel: usize, in_channels: usize) -> Self {
        Self { name, kind: ParamKind::Weight, out_channels, kernel, in_channels }
    }

    const fn bias(name: &'static str, out_channels: usize) -> Self {
        Self { name, kind: ParamKind::Bias, out_channels, kernel: 1, in_channels: 1 }
    }

    pub fn len(&self) -> usize {
        self.out_channels * self.kernel * self.kernel * self.in_channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fan_in(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }
}

/// Parameter tensors in checkpoint order.
pub const TOPOLOGY: [ParamSpec; 9] = [
    ParamSpec::weight("conv1.weight", 8, 3, 3),
    ParamSpec::bias("conv1.bias", 8),
    ParamSpec::weight("conv2.weight", 16, 3, 8),
    ParamSpec::bias("conv2.bias", 16),
    ParamSpec::weight("conv3.weight", 32, 3, 16),
    ParamSpec::bias("conv3.bias", 32),
    ParamSpec::weight("proj.weight", EMBED_DIM, 1, 32),
    ParamSpec::weight("vector.weight", EMBED_DIM, 1, 32),
    ParamSpec::weight("pred.weight", EMBED_DIM, 1, EMBED_DIM),
];

const CONV1: usize = 0;
const CONV2: usize = 2;
const CONV3: usize = 4;
const PROJ: usize = 6;
const VECTOR: usize = 7;
const PRED: usize = 8;

/// Flat parameter storage matching [`TOPOLOGY`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    tensors: Vec<Vec<f64>>,
}

impl EncoderParams {
    pub fn zeros() -> Self {
        Self { tensors: TOPOLOGY.iter().map(|s| vec![0.0; s.len()]).collect() }
    }

    /// He-normal weights, zero biases.
    pub fn init<R: Rng>(rng: &mut R) -> Self {
        let tensors = TOPOLOGY
            .iter()
            .map(|spec| match spec.kind {
                ParamKind::Bias => vec![0.0; spec.len()],
                ParamKind::Weight => {
                    let std = (2.0 / spec.fan_in() as f64).sqrt();
                    let normal = Normal::new(0.0, std).expect("valid std");
                    (0..spec.len()).map(|_| normal.sample(rng)).collect()
                }
            })
            .collect();
        Self { tensors }
    }

    pub fn from_tensors(tensors: Vec<Vec<f64>>) -> Result<Self> {
        if tensors.len() != TOPOLOGY.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                TOPOLOGY.len(),
                tensors.len()
            )));
        }
        for (t, spec) in tensors.iter().zip(TOPOLOGY.iter()) {
            if t.len() != spec.len() {
                return Err(Error::Shape(format!(
                    "{} expects {} values, got {}",
                    spec.name,
                    spec.len(),
                    t.len()
                )));
            }
            if let Some(i) = t.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(i));
            }
        }
        Ok(Self { tensors })
    }

    /// Rebuilds from a flat vector in topology order.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        let total = Self::param_count();
        if flat.len() != total {
            return Err(Error::Shape(format!("expected {total} parameters, got {}", flat.len())));
        }
        let mut offset = 0;
        let tensors = TOPOLOGY
            .iter()
            .map(|spec| {
                let t = flat[offset..offset + spec.len()].to_vec();
                offset += spec.len();
                t
            })
            .collect();
        Self::from_tensors(tensors)
    }

    pub fn param_count() -> usize {
        TOPOLOGY.iter().map(ParamSpec::len).sum()
    }

    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.tensors
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors.concat()
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.tensors.iter().flatten()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    /// Elementwise `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &EncoderParams, alpha: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += alpha * y);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.tensors.iter_mut().flatten().for_each(|x| *x *= alpha);
    }
}

/// Parameter tensors registered on a tape.
#[derive(Debug, Clone)]
pub struct ParamVars(Vec<Var>);

impl ParamVars {
    pub fn register(tape: &mut Tape, params: &EncoderParams, trainable: bool) -> Self {
        let vars = params
            .tensors
            .iter()
            .zip(TOPOLOGY.iter())
            .map(|(t, spec)| tape.leaf(Tensor::new(1, 1, spec.len(), t.clone()), trainable))
            .collect();
        Self(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }

    /// Collects gradients back into parameter layout (zero where absent).
    pub fn gradients(&self, grads: &super::tape::Gradients) -> EncoderParams {
        let tensors = self
            .0
            .iter()
            .zip(TOPOLOGY.iter())
            .map(|(&v, spec)| grads.get_or_zero(v, spec.len()))
            .collect();
        EncoderParams { tensors }
    }
}

/// Which head outputs to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Projection followed by the predictor.
    Query,
    /// Projection only.
    Key,
}

/// Spatial and vector outputs of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    /// `grid×grid×EMBED_DIM` map.
    pub map: Var,
    /// `1×1×EMBED_DIM` vector.
    pub vector: Var,
}

/// Builds the forward graph for an `H×W×3` image; the projected map is
/// adaptive-pooled to `grid×grid` when the native grid differs.
pub fn forward(tape: &mut Tape, params: &ParamVars, image: Var, grid: usize, branch: Branch) -> EncoderOutput {
    let p = params.vars();
    let mut h = image;
    for layer in [CONV1, CONV2, CONV3] {
        h = tape.conv2d(h, p[layer], Some(p[layer + 1]), 3, 2, 1);
        h = tape.relu(h);
    }
    let mut map = tape.conv2d(h, p[PROJ], None, 1, 1, 0);
    let native = tape.value(map);
    if native.height != grid || native.width != grid {
        map = tape.adaptive_pool(map, grid, grid);
    }
    let pooled = tape.global_avg(h);
    let mut vector = tape.conv2d(pooled, p[VECTOR], None, 1, 1, 0);
    if branch == Branch::Query {
        map = tape.conv2d(map, p[PRED], None, 1, 1, 0);
        vector = tape.conv2d(vector, p[PRED], None, 1, 1, 0);
    }
    EncoderOutput { map, vector }
}

/// Native spatial size after the three stride-2 convolutions.
pub fn native_grid(size: usize) -> usize {
    (0..3).fold(size, |s, _| (s + 2 - 3) / 2 + 1)
}

/// Elementwise `xi <- m*xi + (1-m)*theta`.
pub fn ema_update(key: &EncoderParams, query: &EncoderParams, momentum: f64) -> Result<EncoderParams> {
    if !(0.0..=1.0).contains(&momentum) {
        return Err(Error::Config(format!("momentum must lie in [0, 1], got {momentum}")));
    }
    if key.tensors.len() != query.tensors.len()
        || key.tensors.iter().zip(&query.tensors).any(|(a, b)| a.len() != b.len())
    {
        return Err(Error::Shape("EMA update between mismatched topologies".into()));
    }
    let tensors = key
        .tensors
        .iter()
        .zip(&query.tensors)
        .map(|(k, q)| k.iter().zip(q).map(|(&x, &t)| momentum * x + (1.0 - momentum) * t).collect())
        .collect();
    Ok(EncoderParams { tensors })
}
