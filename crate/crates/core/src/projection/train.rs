use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{total_with_grad, Batch, LossBreakdown, LossWeights, TaskOptions};
use super::model::{Gradients, ProjectionModel};
use super::ProjectionError;
use crate::geometry::Modality;
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Optimizer {
    Sgd,
    Momentum { beta: f64 },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            steps: 3000,
            learning_rate: 1e-3,
            optimizer: Optimizer::default(),
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ProjectionError> {
        if self.batch_size < 2 {
            return Err(ProjectionError::BatchTooSmall(self.batch_size));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(ProjectionError::InvalidConfig("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Loss weights plus the InfoNCE variant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Objective {
    pub weights: LossWeights,
    pub task: TaskOptions,
}

/// One training example: concatenated expert embeddings of the raw side, the
/// anchor (the annotation's text-expert embedding) and the raw modality.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub input: Vec<f64>,
    pub anchor: Vec<f64>,
    pub modality: Modality,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepLog {
    pub step: usize,
    #[cfg_attr(feature = "serde", serde(rename = "L_task"))]
    pub task: f64,
    #[cfg_attr(feature = "serde", serde(rename = "L_cluster"))]
    pub cluster: f64,
    #[cfg_attr(feature = "serde", serde(rename = "L_scale"))]
    pub scale: f64,
    #[cfg_attr(feature = "serde", serde(rename = "L_total"))]
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ProjectionModel,
    pub log: Vec<StepLog>,
}

/// Loss and parameter gradient for one batch.
pub fn batch_gradient(
    model: &ProjectionModel,
    samples: &[&TrainSample],
    objective: &Objective,
) -> Result<(LossBreakdown, Gradients), ProjectionError> {
    let traces = samples.iter().map(|s| model.trace(&s.input)).collect::<Result<Vec<_>, _>>()?;
    let fused: Vec<&[f64]> = traces.iter().map(|t| t.fused.as_slice()).collect();
    let anchors: Vec<&[f64]> = samples.iter().map(|s| s.anchor.as_slice()).collect();
    let modalities: Vec<Modality> = samples.iter().map(|s| s.modality).collect();
    let batch = Batch { fused: &fused, anchors: &anchors, modalities: &modalities };
    let (loss, grad_fused) = total_with_grad(&batch, &objective.weights, objective.task, true)?;
    let mut grads = model.zero_grads();
    for (trace, g) in traces.iter().zip(&grad_fused) {
        model.backward(trace, g, &mut grads);
    }
    Ok((loss, grads))
}

/// Loss only, for evaluation and finite-difference checks.
pub fn batch_loss(
    model: &ProjectionModel,
    samples: &[&TrainSample],
    objective: &Objective,
) -> Result<LossBreakdown, ProjectionError> {
    let fused = samples.iter().map(|s| model.project(&s.input)).collect::<Result<Vec<_>, _>>()?;
    let anchors: Vec<&[f64]> = samples.iter().map(|s| s.anchor.as_slice()).collect();
    let fused: Vec<&[f64]> = fused.iter().map(Vec::as_slice).collect();
    let modalities: Vec<Modality> = samples.iter().map(|s| s.modality).collect();
    let batch = Batch { fused: &fused, anchors: &anchors, modalities: &modalities };
    Ok(total_with_grad(&batch, &objective.weights, objective.task, false)?.0)
}

struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimizerState {
    fn new(kind: Optimizer, lr: f64, params: usize) -> Self {
        Self { kind, lr, t: 0, m: alloc::vec![0.0; params], v: alloc::vec![0.0; params] }
    }

    fn step(&mut self, model: &mut ProjectionModel, grads: &Gradients) {
        self.t += 1;
        let lr = self.lr;
        let (m, v) = (&mut self.m, &mut self.v);
        let params = model.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()));
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.zip(grads.iter()) {
                    *p -= lr * g;
                }
            }
            Optimizer::Momentum { beta } => {
                for ((p, g), m) in params.zip(grads.iter()).zip(m.iter_mut()) {
                    *m = beta * *m + g;
                    *p -= lr * *m;
                }
            }
            Optimizer::Adam { beta1, beta2, epsilon } => {
                let c1 = 1.0 - libm::pow(beta1, f64::from(self.t));
                let c2 = 1.0 - libm::pow(beta2, f64::from(self.t));
                for (((p, g), m), v) in params.zip(grads.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / (math::sqrt(*v / c2) + epsilon);
                }
            }
        }
    }
}

/// Yields batches: one shuffled pass over the data per epoch, dropping the
/// ragged tail so no sample appears twice in a batch.
struct BatchStream {
    order: Vec<usize>,
    cursor: usize,
    batch: usize,
    shuffle: bool,
    rng: ChaCha8Rng,
}

impl BatchStream {
    fn new(len: usize, batch: usize, shuffle: bool, seed: u64) -> Self {
        let mut s = Self {
            order: (0..len).collect(),
            cursor: len,
            batch: batch.min(len),
            shuffle,
            rng: ChaCha8Rng::seed_from_u64(math::mix64(seed ^ 0x5348_5546)),
        };
        s.refill();
        s
    }

    fn refill(&mut self) {
        if self.shuffle {
            self.order.shuffle(&mut self.rng);
        }
        self.cursor = 0;
    }

    fn next(&mut self) -> &[usize] {
        if self.cursor + self.batch > self.order.len() {
            self.refill();
        }
        let out = &self.order[self.cursor..self.cursor + self.batch];
        self.cursor += self.batch;
        out
    }
}

/// Fits the projection. Deterministic given the initial model, data order and
/// `config.seed`; anchors are read, never written.
pub fn train(
    data: &[TrainSample],
    init: ProjectionModel,
    config: &TrainConfig,
    objective: &Objective,
) -> Result<TrainOutcome, ProjectionError> {
    config.validate()?;
    objective.weights.validate()?;
    init.validate()?;
    if data.len() < 2 {
        return Err(ProjectionError::BatchTooSmall(data.len()));
    }
    for s in data {
        if s.input.len() != init.input_dim() {
            return Err(ProjectionError::DimMismatch { expected: init.input_dim(), got: s.input.len() });
        }
        if s.anchor.len() != init.output_dim() {
            return Err(ProjectionError::DimMismatch { expected: init.output_dim(), got: s.anchor.len() });
        }
    }
    let mut model = init;
    let mut opt = OptimizerState::new(config.optimizer, config.learning_rate, model.param_count());
    let mut stream = BatchStream::new(data.len(), config.batch_size, config.shuffle, config.seed);
    let mut log = Vec::with_capacity(config.steps);
    let mut batch: Vec<&TrainSample> = Vec::with_capacity(config.batch_size);
    for step in 0..config.steps {
        batch.clear();
        batch.extend(stream.next().iter().map(|&i| &data[i]));
        let (loss, grads) = batch_gradient(&model, &batch, objective)?;
        if !loss.total.is_finite() {
            return Err(ProjectionError::Diverged(step));
        }
        log.push(StepLog { step, task: loss.task, cluster: loss.cluster, scale: loss.scale, total: loss.total });
        opt.step(&mut model, &grads);
    }
    Ok(TrainOutcome { model, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::model::Architecture;

    fn toy(n: usize) -> Vec<TrainSample> {
        (0..n)
            .map(|i| {
                let a = (i as f64) * 0.7;
                let anchor = alloc::vec![libm::cos(a), libm::sin(a)];
                let input = alloc::vec![libm::cos(a) + 0.1, libm::sin(a), -libm::sin(a), libm::cos(a)];
                TrainSample { input, anchor, modality: if i % 2 == 0 { Modality::Image } else { Modality::Text } }
            })
            .collect()
    }

    #[test]
    fn same_seed_gives_identical_weights() {
        let data = toy(12);
        let init = ProjectionModel::new(Architecture::new(2, 2, 2), 3).unwrap();
        let cfg = TrainConfig { batch_size: 4, steps: 30, learning_rate: 1e-2, seed: 9, ..TrainConfig::default() };
        let obj = Objective { weights: LossWeights::GAP_COLLAPSE, ..Objective::default() };
        let a = train(&data, init.clone(), &cfg, &obj).unwrap();
        let b = train(&data, init, &cfg, &obj).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.len(), 30);
    }

    #[test]
    fn loss_decreases_on_toy_problem() {
        let data = toy(16);
        let init = ProjectionModel::new(Architecture::new(2, 2, 1), 1).unwrap();
        for optimizer in [Optimizer::Sgd, Optimizer::Momentum { beta: 0.9 }, Optimizer::default()] {
            let lr = if optimizer == Optimizer::Sgd { 0.5 } else { 0.02 };
            let cfg = TrainConfig { batch_size: 16, steps: 200, learning_rate: lr, optimizer, seed: 1, shuffle: false };
            let obj = Objective {
                weights: LossWeights { temperature: 0.2, ..LossWeights::new(1.0, 0.0, 0.0) },
                ..Objective::default()
            };
            let out = train(&data, init.clone(), &cfg, &obj).unwrap();
            let first = out.log.first().unwrap().total;
            let last = out.log.last().unwrap().total;
            assert!(last < first, "{optimizer:?}: {first} -> {last}");
        }
    }

    #[test]
    fn config_errors() {
        let data = toy(4);
        let init = ProjectionModel::new(Architecture::new(2, 2, 1), 1).unwrap();
        let obj = Objective::default();
        let small = TrainConfig { batch_size: 1, ..TrainConfig::default() };
        assert_eq!(train(&data, init.clone(), &small, &obj).unwrap_err(), ProjectionError::BatchTooSmall(1));
        let wrong = ProjectionModel::new(Architecture::new(3, 2, 1), 1).unwrap();
        assert!(matches!(train(&data, wrong, &TrainConfig::default(), &obj), Err(ProjectionError::DimMismatch { .. })));
    }

    #[test]
    fn stream_never_repeats_within_a_batch() {
        let mut s = BatchStream::new(10, 4, true, 3);
        for _ in 0..20 {
            let mut b = s.next().to_vec();
            b.sort_unstable();
            b.dedup();
            assert_eq!(b.len(), 4);
        }
    }
}
