//! Huber objective, Adam with stepwise learning-rate halving, and the
//! training loop shared by the County, Mixup and State models.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{mixup_batch, random_permutation, MixupConfig};
use crate::data::StandardizedSample;
use crate::error::{CourageError, Result};
use crate::model::{forward_on_graph, init_params, ModelConfig, ModelParams};
use crate::numerics::{Graph, Matrix};

// Distinct RNG streams so toggling mixup cannot perturb the shuffle order.
const SHUFFLE_STREAM: u64 = 0x5348_5546;
const MIXUP_STREAM: u64 = 0x4d49_5855;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub initial_lr: f64,
    /// The learning rate is halved every this many epochs.
    pub lr_halving_period: usize,
    pub huber_delta: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            initial_lr: 1e-3,
            lr_halving_period: 100,
            huber_delta: 1.0,
            batch_size: 128,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            grad_clip: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.lr_halving_period == 0 {
            return Err(CourageError::config(
                "epochs, batch_size and lr_halving_period must be >= 1",
            ));
        }
        if self.huber_delta <= 0.0 {
            return Err(CourageError::config("huber delta must be > 0"));
        }
        if self.initial_lr <= 0.0 {
            return Err(CourageError::config("learning rate must be > 0"));
        }
        Ok(())
    }
}

/// Huber loss of one residual: quadratic inside `delta`, linear outside.
pub fn huber(pred: f64, target: f64, delta: f64) -> f64 {
    let r = (pred - target).abs();
    if r <= delta {
        0.5 * r * r
    } else {
        delta * (r - 0.5 * delta)
    }
}

/// Derivative of [`huber`] with respect to the prediction.
pub fn huber_grad(pred: f64, target: f64, delta: f64) -> f64 {
    (pred - target).clamp(-delta, delta)
}

/// Stepwise schedule: `initial_lr * 0.5^floor(epoch / period)`.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    config.initial_lr * 0.5f64.powi((epoch / config.lr_halving_period) as i32)
}

/// First/second Adam moments per tensor, in `for_each_tensor` order.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let mut m = Vec::new();
        params.for_each_tensor(|_, t| m.push(Matrix::zeros(t.rows(), t.cols())));
        AdamState {
            v: m.clone(),
            m,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update over every tensor.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &[Matrix],
    state: &mut AdamState,
    lr: f64,
    config: &TrainConfig,
) -> Result<()> {
    if grads.len() != state.m.len() {
        return Err(CourageError::contract(format!(
            "{} gradients for {} tensors",
            grads.len(),
            state.m.len()
        )));
    }
    let mut bad: Option<String> = None;
    let mut i = 0;
    params.for_each_tensor(|name, _| {
        if bad.is_none() && !grads[i].is_finite() {
            bad = Some(name.to_string());
        }
        i += 1;
    });
    if let Some(name) = bad {
        return Err(CourageError::numeric(format!(
            "non-finite gradient for tensor {name}"
        )));
    }

    state.step += 1;
    let t = state.step as i32;
    let m_corr = 1.0 - config.beta1.powi(t);
    let v_corr = 1.0 - config.beta2.powi(t);

    let mut i = 0;
    params.for_each_tensor_mut(|_, tensor| {
        let g = &grads[i];
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for idx in 0..tensor.len() {
            let gd = g.data()[idx];
            let md = config.beta1 * m.data()[idx] + (1.0 - config.beta1) * gd;
            let vd = config.beta2 * v.data()[idx] + (1.0 - config.beta2) * gd * gd;
            m.data_mut()[idx] = md;
            v.data_mut()[idx] = vd;
            let update = lr * (md / m_corr) / ((vd / v_corr).sqrt() + config.adam_eps);
            tensor.data_mut()[idx] -= update;
        }
        i += 1;
    });
    Ok(())
}

/// Scales all gradients so their joint Frobenius norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut [Matrix], max_norm: f64) {
    let norm: f64 = grads
        .iter()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let factor = max_norm / norm;
        for g in grads {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }
}

/// Builds the batch loss graph: per-sample forwards stacked into an N x 2
/// prediction block against the N x 2 target block, reduced by mean Huber.
fn batch_loss_graph(
    params: &ModelParams,
    model_config: &ModelConfig,
    batch: &[StandardizedSample],
    delta: f64,
) -> Result<(Graph, crate::numerics::NodeId, Vec<crate::numerics::NodeId>)> {
    let mut g = Graph::new();
    let gp = params.insert_into(&mut g);
    let mut preds = Vec::with_capacity(batch.len());
    let mut targets = Matrix::zeros(batch.len(), 2);
    for (i, sample) in batch.iter().enumerate() {
        preds.push(forward_on_graph(&mut g, &gp, model_config, &sample.features)?);
        targets.set(i, 0, sample.target_week1);
        targets.set(i, 1, sample.target_week2);
    }
    let stacked = g.concat_rows(&preds)?;
    let loss = g.huber_loss(stacked, &targets, delta)?;
    Ok((g, loss, gp.node_list()))
}

/// Mean Huber loss of `params` over a sample set, without training.
pub fn evaluate_loss(
    params: &ModelParams,
    model_config: &ModelConfig,
    samples: &[StandardizedSample],
    delta: f64,
) -> Result<f64> {
    let (g, loss, _) = batch_loss_graph(params, model_config, samples, delta)?;
    Ok(g.value(loss).get(0, 0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStat {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub curve: Vec<EpochStat>,
    /// Set when training stopped early on a non-finite loss or gradient;
    /// `params` then hold the last good epoch snapshot.
    pub abort: Option<String>,
}

/// Trains from scratch over the standardized sample set. The County model
/// is this with mixup disabled; the Mixup model enables it; the State model
/// feeds state-level samples.
pub fn train(
    samples: &[StandardizedSample],
    model_config: &ModelConfig,
    config: &TrainConfig,
    mixup: &MixupConfig,
) -> Result<TrainOutput> {
    config.validate()?;
    mixup.validate()?;
    model_config.validate()?;
    if samples.is_empty() {
        return Err(CourageError::contract("training set is empty"));
    }

    let mut params = init_params(model_config, config.seed);
    let mut adam = AdamState::new(&params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);
    let mut mixup_rng = ChaCha8Rng::seed_from_u64(config.seed ^ MIXUP_STREAM);
    let mut curve = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = lr_at(epoch, config);
        let snapshot = params.clone();
        let order = random_permutation(samples.len(), &mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<StandardizedSample> =
                chunk.iter().map(|&i| samples[i].clone()).collect();
            let batch = if mixup.enabled {
                mixup_batch(&batch, mixup, &mut mixup_rng)?
            } else {
                batch
            };

            let (mut g, loss_node, param_nodes) =
                batch_loss_graph(&params, model_config, &batch, config.huber_delta)?;
            let loss = g.value(loss_node).get(0, 0);
            if !loss.is_finite() {
                log::error!("epoch {epoch}: non-finite loss; aborting with last good params");
                return Ok(TrainOutput {
                    params: snapshot,
                    curve,
                    abort: Some(format!("non-finite loss at epoch {epoch}")),
                });
            }
            g.backward(loss_node)?;
            let mut grads: Vec<Matrix> =
                param_nodes.iter().map(|&id| g.grad(id).clone()).collect();
            if let Some(max_norm) = config.grad_clip {
                clip_global_norm(&mut grads, max_norm);
            }
            if let Err(e) = adam_step(&mut params, &grads, &mut adam, lr, config) {
                log::error!("epoch {epoch}: {e}; aborting with last good params");
                return Ok(TrainOutput {
                    params: snapshot,
                    curve,
                    abort: Some(format!("epoch {epoch}: {e}")),
                });
            }

            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
        }

        curve.push(EpochStat {
            epoch,
            lr,
            train_loss: loss_sum / seen as f64,
        });
    }

    Ok(TrainOutput {
        params,
        curve,
        abort: None,
    })
}
