//! Model-agnostic meta-learning over a fixed, finite set of training tasks.
//!
//! Each epoch takes one plain gradient step per training task on an inner
//! batch, evaluates the adapted parameters on a disjoint meta batch of the
//! same task, and moves the shared initialization along the gradient of the
//! summed post-adaptation losses. With `second_order` set the gradient flows
//! through the inner step, `(I - αH_tr) ∇L_meta(θ')`, using exact
//! Hessian-vector products; otherwise the first-order approximation
//! `∇L_meta(θ')` is used.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Activation, Example, MlpParams, ParamGradient};
use crate::population::{Sample, TaskDataset, TemperatureRange};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MamlConfig {
    /// Inner (task-specific) learning rate, also used at adaptation time.
    pub alpha: f64,
    /// Meta learning rate.
    pub beta: f64,
    pub epochs: usize,
    pub inner_batch: usize,
    pub meta_batch: usize,
    /// Gradient steps taken when adapting to a new task.
    pub adapt_steps: usize,
    pub second_order: bool,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for MamlConfig {
    fn default() -> Self {
        MamlConfig {
            alpha: 0.05,
            beta: 0.02,
            epochs: 5000,
            inner_batch: 10,
            meta_batch: 10,
            adapt_steps: 100,
            second_order: true,
            activation: Activation::Tanh,
            seed: 0,
        }
    }
}

impl MamlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be non-negative, got {}", self.beta)));
        }
        if self.epochs == 0 || self.inner_batch == 0 || self.meta_batch == 0 || self.adapt_steps == 0 {
            return Err(Error::invalid(
                "epochs, inner_batch, meta_batch and adapt_steps must all be at least 1",
            ));
        }
        Ok(())
    }
}

/// Affine maps between raw (temperature, response) units and the units the
/// network is trained in: inputs onto [-1, 1], targets standardized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub input_range: TemperatureRange,
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
}

impl Normalizer {
    /// Statistics (1/N convention) pooled over every sample of `tasks`.
    pub fn fit(tasks: &[TaskDataset], input_range: TemperatureRange) -> Result<Self> {
        let first = tasks.iter().find(|t| !t.is_empty()).ok_or(Error::Empty("training tasks"))?;
        let dim = first.target_dim();
        let mut n = 0usize;
        let mut mean = vec![0.0; dim];
        for s in tasks.iter().flat_map(|t| &t.samples) {
            if s.target.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "normalizer targets",
                    expected: dim,
                    actual: s.target.len(),
                });
            }
            n += 1;
            mean.iter_mut().zip(&s.target).for_each(|(m, y)| *m += y);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; dim];
        for s in tasks.iter().flat_map(|t| &t.samples) {
            for ((v, y), m) in var.iter_mut().zip(&s.target).zip(&mean) {
                *v += (y - m).powi(2);
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / n as f64).sqrt()).collect();
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::ZeroVariance("training targets"));
        }
        Ok(Normalizer {
            input_range,
            target_mean: mean,
            target_std: std,
        })
    }

    pub fn input(&self, t: f64) -> f64 {
        let r = &self.input_range;
        2.0 * (t - r.lo) / (r.hi - r.lo) - 1.0
    }

    pub fn target(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(&self.target_mean)
            .zip(&self.target_std)
            .map(|((y, m), s)| (y - m) / s)
            .collect()
    }

    pub fn denormalize_target(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.target_mean)
            .zip(&self.target_std)
            .map(|((z, m), s)| z * s + m)
            .collect()
    }

    pub fn example(&self, s: &Sample) -> Example {
        Example::new(vec![self.input(s.input)], self.target(&s.target))
    }

    pub fn examples(&self, samples: &[Sample]) -> Vec<Example> {
        samples.iter().map(|s| self.example(s)).collect()
    }
}

/// The meta-learned initialization together with what is needed to use it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaModel {
    pub params: MlpParams,
    pub config: MamlConfig,
    pub normalizer: Normalizer,
    /// Summed post-inner-update meta loss, one entry per completed epoch.
    pub training_history: Vec<f64>,
    /// Post-adaptation validation loss, one entry per completed epoch.
    pub validation_history: Vec<f64>,
    /// Epoch (0-based) whose parameters were kept.
    pub best_epoch: usize,
}

impl MetaModel {
    pub fn hidden(&self) -> usize {
        self.params.hidden()
    }

    pub fn best_validation_loss(&self) -> f64 {
        self.validation_history[self.best_epoch]
    }

    /// Prediction in raw target units.
    pub fn predict(&self, params: &MlpParams, temperature: f64) -> Result<Vec<f64>> {
        let z = nn::forward(params, &[self.normalizer.input(temperature)])?;
        Ok(self.normalizer.denormalize_target(&z))
    }
}

/// One plain gradient step on `batch`; the input parameters are untouched.
pub fn inner_update(params: &MlpParams, batch: &[Example], alpha: f64) -> Result<MlpParams> {
    let g = nn::grad(params, batch)?;
    nn::axpy_update(params, &g, alpha)
}

/// Inner and meta batches of one task for one epoch.
#[derive(Debug, Clone)]
pub struct TaskBatches {
    pub inner: Vec<Example>,
    pub meta: Vec<Example>,
}

/// Gradient of `Σ_i L(θ - α∇L(θ; inner_i); meta_i)` with respect to θ,
/// together with the objective value.
pub fn meta_gradient_on_batches(
    params: &MlpParams,
    batches: &[TaskBatches],
    alpha: f64,
    second_order: bool,
) -> Result<(f64, ParamGradient)> {
    if batches.is_empty() {
        return Err(Error::Empty("meta-gradient tasks"));
    }
    let mut total = params.zeros_like();
    let mut objective = 0.0;
    for b in batches {
        let adapted = inner_update(params, &b.inner, alpha)?;
        let (loss, g_meta) = nn::loss_and_grad(&adapted, &b.meta)?;
        objective += loss;
        total.add_scaled(&g_meta, 1.0);
        if second_order && alpha != 0.0 {
            let hv = nn::hessian_vector_product(params, &b.inner, &g_meta)?;
            total.add_scaled(&hv, -alpha);
        }
    }
    Ok((objective, total))
}

/// Draws disjoint inner and meta batches from each task. The draw depends
/// only on `(seed, epoch, task index)`.
pub fn sample_task_batches(
    tasks: &[Vec<Example>],
    config: &MamlConfig,
    epoch: usize,
) -> Result<Vec<TaskBatches>> {
    let need = config.inner_batch + config.meta_batch;
    tasks
        .iter()
        .enumerate()
        .map(|(i, task)| {
            if task.len() < need {
                return Err(Error::invalid(format!(
                    "task {i} has {} samples but inner_batch + meta_batch = {need}",
                    task.len()
                )));
            }
            let mut rng =
                seed::rng_for(config.seed, &[seed::stream::META_BATCH, epoch as u64, i as u64]);
            let picks = index::sample(&mut rng, task.len(), need).into_vec();
            let (inner, meta) = picks.split_at(config.inner_batch);
            Ok(TaskBatches {
                inner: inner.iter().map(|&j| task[j].clone()).collect(),
                meta: meta.iter().map(|&j| task[j].clone()).collect(),
            })
        })
        .collect()
}

/// Meta-gradient for one epoch on prepared (normalized) task examples.
pub fn meta_gradient(
    params: &MlpParams,
    tasks: &[Vec<Example>],
    config: &MamlConfig,
    epoch: usize,
) -> Result<ParamGradient> {
    if tasks.is_empty() {
        return Err(Error::Empty("meta-gradient tasks"));
    }
    let batches = sample_task_batches(tasks, config, epoch)?;
    meta_gradient_on_batches(params, &batches, config.alpha, config.second_order).map(|(_, g)| g)
}

/// `steps` plain gradient steps from `start` on `shots`.
pub fn adapt_params(
    start: &MlpParams,
    shots: &[Example],
    steps: usize,
    alpha: f64,
) -> Result<MlpParams> {
    if shots.is_empty() {
        return Err(Error::Empty("adaptation shots"));
    }
    if steps == 0 {
        return Err(Error::invalid("adaptation needs at least one step"));
    }
    let mut p = start.clone();
    for _ in 0..steps {
        let g = nn::grad(&p, shots)?;
        p.add_scaled(&g, -alpha);
    }
    Ok(p)
}

/// Adapts the meta-initialization to raw-unit shots of a new task.
pub fn adapt(model: &MetaModel, shots: &[Sample], steps: usize, alpha: f64) -> Result<MlpParams> {
    adapt_params(&model.params, &model.normalizer.examples(shots), steps, alpha)
}

/// Support/query split used to score the validation task. The support size
/// matches the inner batch, capped so at least one query sample remains.
fn validation_split(examples: &[Example], config: &MamlConfig) -> Result<(Vec<Example>, Vec<Example>)> {
    if examples.len() < 2 {
        return Err(Error::invalid("validation task needs at least two samples"));
    }
    let k = config.inner_batch.min(examples.len() - 1);
    Ok((examples[..k].to_vec(), examples[k..].to_vec()))
}

/// Post-adaptation loss on the validation task, in normalized units.
pub fn validation_loss(
    params: &MlpParams,
    support: &[Example],
    query: &[Example],
    config: &MamlConfig,
) -> Result<f64> {
    let adapted = adapt_params(params, support, config.adapt_steps, config.alpha)?;
    nn::mse_loss(&adapted, query)
}

/// Runs meta-training for `config.epochs` epochs and keeps the parameters
/// with the lowest post-adaptation validation loss.
pub fn meta_train(
    train_tasks: &[TaskDataset],
    validation_task: &TaskDataset,
    hidden: usize,
    config: &MamlConfig,
) -> Result<MetaModel> {
    config.validate()?;
    if train_tasks.is_empty() {
        return Err(Error::Empty("training tasks"));
    }
    let range = train_tasks[0].temperature_range;
    let normalizer = Normalizer::fit(train_tasks, range)?;
    let tasks: Vec<Vec<Example>> = train_tasks.iter().map(|t| normalizer.examples(&t.samples)).collect();
    let need = config.inner_batch + config.meta_batch;
    if let Some((i, t)) = tasks.iter().enumerate().find(|(_, t)| t.len() < need) {
        return Err(Error::invalid(format!(
            "training task {i} has {} samples, needs {need}",
            t.len()
        )));
    }
    let out_dim = normalizer.target_mean.len();
    let (support, query) = validation_split(&normalizer.examples(&validation_task.samples), config)?;

    let init_seed = seed::derive_seed(config.seed, &[seed::stream::INIT, hidden as u64]);
    let mut params = nn::init_params(1, hidden, out_dim, init_seed)?.with_activation(config.activation);
    let mut best = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut training_history = Vec::with_capacity(config.epochs);
    let mut validation_history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let batches = sample_task_batches(&tasks, config, epoch)?;
        let (meta_loss, g) =
            meta_gradient_on_batches(&params, &batches, config.alpha, config.second_order)?;
        params.add_scaled(&g, -config.beta);
        if !params.is_finite() {
            return Err(Error::Numerical(format!(
                "meta-parameters diverged at epoch {epoch} (hidden = {hidden})"
            )));
        }
        let v = validation_loss(&params, &support, &query, config)?;
        training_history.push(meta_loss);
        validation_history.push(v);
        // NaN never compares less, so a non-finite validation loss is skipped.
        if v < best_loss {
            best_loss = v;
            best_epoch = epoch;
            best.clone_from(&params);
        }
    }
    if !best_loss.is_finite() {
        return Err(Error::Numerical("validation loss never finite".into()));
    }
    Ok(MetaModel {
        params: best,
        config: config.clone(),
        normalizer,
        training_history,
        validation_history,
        best_epoch,
    })
}
