use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ProjectionError;
use crate::geometry::normalize;
use crate::math;

/// `x * sigmoid(x)`, applied between layers only.
#[inline]
pub fn silu(x: f64) -> f64 {
    x / (1.0 + math::exp(-x))
}

#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + math::exp(-x));
    s * (1.0 + x * (1.0 - s))
}

/// Dense layer, weights row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: alloc::vec![0.0; inputs * outputs], bias: alloc::vec![0.0; outputs] }
    }

    fn uniform(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / math::sqrt(inputs as f64);
        let weights = (0..inputs * outputs).map(|_| rng.random_range(-bound..bound)).collect();
        let bias = (0..outputs).map(|_| rng.random_range(-bound..bound)).collect();
        Self { inputs, outputs, weights, bias }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights.chunks_exact(self.inputs).zip(&self.bias).map(|(row, b)| b + math::dot(row, x)).collect()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Shape of the fusion network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Architecture {
    pub expert_count: usize,
    pub dim: usize,
    pub layer_count: usize,
    /// Width of hidden layers; `expert_count * dim` unless overridden.
    pub hidden: usize,
}

impl Architecture {
    pub fn new(expert_count: usize, dim: usize, layer_count: usize) -> Self {
        Self { expert_count, dim, layer_count, hidden: expert_count * dim }
    }

    pub fn input_dim(&self) -> usize {
        self.expert_count * self.dim
    }

    pub fn validate(&self) -> Result<(), ProjectionError> {
        if !(1..=3).contains(&self.layer_count) {
            return Err(ProjectionError::InvalidConfig(alloc::format!(
                "layer_count must be 1, 2 or 3, got {}",
                self.layer_count
            )));
        }
        if self.expert_count == 0 || self.dim < 2 || self.hidden == 0 {
            return Err(ProjectionError::InvalidConfig(
                "expert_count, dim and hidden must be positive (dim >= 2)".into(),
            ));
        }
        Ok(())
    }
}

/// The fusion network: concatenated expert embeddings in, one unit vector out.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProjectionModel {
    pub arch: Architecture,
    pub seed: u64,
    pub layers: Vec<Layer>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input of each layer (the first is the model input).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Vec<f64>>,
    out_norm: f64,
    pub fused: Vec<f64>,
}

impl ProjectionModel {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self, ProjectionError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(arch.layer_count);
        let mut width = arch.input_dim();
        for l in 0..arch.layer_count {
            let out = if l + 1 == arch.layer_count { arch.dim } else { arch.hidden };
            layers.push(Layer::uniform(width, out, &mut rng));
            width = out;
        }
        Ok(Self { arch, seed, layers })
    }

    /// Checks that stored layers agree with the architecture.
    pub fn validate(&self) -> Result<(), ProjectionError> {
        self.arch.validate()?;
        if self.layers.len() != self.arch.layer_count {
            return Err(ProjectionError::InvalidConfig("layer count does not match architecture".into()));
        }
        let mut width = self.arch.input_dim();
        for (l, layer) in self.layers.iter().enumerate() {
            let out = if l + 1 == self.layers.len() { self.arch.dim } else { self.arch.hidden };
            if layer.inputs != width
                || layer.outputs != out
                || layer.weights.len() != width * out
                || layer.bias.len() != out
            {
                return Err(ProjectionError::InvalidConfig(alloc::format!("layer {l} has wrong shape")));
            }
            width = out;
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.arch.dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Forward pass; the output is unit-norm.
    pub fn project(&self, input: &[f64]) -> Result<Vec<f64>, ProjectionError> {
        Ok(self.trace(input)?.fused)
    }

    pub fn trace(&self, input: &[f64]) -> Result<Trace, ProjectionError> {
        if input.len() != self.input_dim() {
            return Err(ProjectionError::DimMismatch { expected: self.input_dim(), got: input.len() });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let mut a = input.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&a);
            inputs.push(a);
            if l == last {
                let out_norm = math::norm(&z);
                let fused = normalize(&z)?;
                return Ok(Trace { inputs, pre, out_norm, fused });
            }
            a = z.iter().map(|v| silu(*v)).collect();
            pre.push(z);
        }
        unreachable!("architecture has at least one layer")
    }

    /// Accumulates `dL/dθ` into `grads` given `dL/dfused` for one trace.
    pub fn backward(&self, trace: &Trace, grad_fused: &[f64], grads: &mut Gradients) {
        let f = &trace.fused;
        let proj = math::dot(f, grad_fused);
        let mut dz: Vec<f64> = grad_fused.iter().zip(f).map(|(g, fi)| (g - fi * proj) / trace.out_norm).collect();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &trace.inputs[l];
            let g = &mut grads.layers[l];
            for (o, dzo) in dz.iter().enumerate() {
                g.bias[o] += dzo;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, x) in row.iter_mut().zip(input) {
                    *w += dzo * x;
                }
            }
            if l == 0 {
                break;
            }
            let mut da = alloc::vec![0.0; layer.inputs];
            for (o, dzo) in dz.iter().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (d, w) in da.iter_mut().zip(row) {
                    *d += dzo * w;
                }
            }
            dz = da.iter().zip(&trace.pre[l - 1]).map(|(d, z)| d * silu_grad(*z)).collect();
        }
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients { layers: self.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect() }
    }

    /// Flat view index → parameter, weights before biases, layer by layer.
    pub fn param(&self, index: usize) -> f64 {
        *param_ref(&self.layers, index)
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        *param_mut(&mut self.layers, index) = value;
    }
}

fn locate(layers: &[Layer], mut index: usize) -> (usize, bool, usize) {
    for (l, layer) in layers.iter().enumerate() {
        if index < layer.weights.len() {
            return (l, true, index);
        }
        index -= layer.weights.len();
        if index < layer.bias.len() {
            return (l, false, index);
        }
        index -= layer.bias.len();
    }
    panic!("parameter index out of range")
}

fn param_ref(layers: &[Layer], index: usize) -> &f64 {
    let (l, w, i) = locate(layers, index);
    if w {
        &layers[l].weights[i]
    } else {
        &layers[l].bias[i]
    }
}

fn param_mut(layers: &mut [Layer], index: usize) -> &mut f64 {
    let (l, w, i) = locate(layers, index);
    if w {
        &mut layers[l].weights[i]
    } else {
        &mut layers[l].bias[i]
    }
}

/// Gradient buffers shaped like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn param(&self, index: usize) -> f64 {
        *param_ref(&self.layers, index)
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied())
    }

    pub fn norm(&self) -> f64 {
        math::sqrt(self.iter().map(|g| g * g).sum())
    }
}
