//! Minibatch training with the winner-takes-all masked ADE loss.

use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::window_loss;
use crate::network::{backward, ModelParams};
use crate::predictor::{labels, run_two_pass, GridSet, PredictConfig};
use crate::scene::{materialize_mode, Mode, Window};

/// Module switches for the ablation study.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    /// Skip the obstacle search and the second pass.
    pub no_obs: bool,
    /// Replace every observation code by `[1, 1, 1, 1]`.
    pub no_code: bool,
    /// Keep nodes in input order instead of clustering them.
    pub no_clu: bool,
}

impl Ablations {
    pub fn apply(&self, mut config: PredictConfig) -> PredictConfig {
        config.obstacles &= !self.no_obs;
        config.graph.observation_codes &= !self.no_code;
        config.graph.clustering &= !self.no_clu;
        config
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.no_obs {
            parts.push("no_obs");
        }
        if self.no_code {
            parts.push("no_code");
        }
        if self.no_clu {
            parts.push("no_clu");
        }
        if parts.is_empty() {
            "full".into()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub mode: Mode,
    pub ablations: Ablations,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 16,
            epochs: 200,
            mode: Mode::Pad,
            ablations: Ablations::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument(format!(
                "learning rate, batch size and epochs must be positive (got {}, {}, {})",
                self.learning_rate, self.batch_size, self.epochs
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean window loss seen during the epoch.
    pub loss: f64,
}

/// Adam with the usual moment decay rates.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: ModelParams,
    v: ModelParams,
}

impl Adam {
    pub fn new(params: &ModelParams, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grad: &ModelParams) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2) = (self.beta1, self.beta2);
        let blocks = params
            .blocks_mut()
            .into_iter()
            .zip(grad.blocks())
            .zip(self.m.blocks_mut())
            .zip(self.v.blocks_mut());
        for ((((_, mut p), (_, g)), (_, mut m)), (_, mut v)) in blocks {
            ndarray::Zip::from(&mut p).and(&g).and(&mut m).and(&mut v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            });
        }
    }
}

/// Loss and parameter gradient of one window under the two-pass pipeline.
/// The first pass only selects obstacles; gradients flow through the final
/// pass.
pub fn window_gradient(
    window: &Window,
    grids: &GridSet,
    params: &ModelParams,
    config: &PredictConfig,
) -> Result<(f64, ModelParams)> {
    let run = run_two_pass(window, grids.for_window(window), params, config)?;
    let (gt, mask) = labels(window);
    let cands = run.pedestrian_candidates();
    let (loss, d, _) = window_loss(cands.view(), gt.view(), mask.view())?;
    let grads = backward(params, &run.cache, &run.scatter_gradient(&d));
    Ok((loss, grads))
}

/// Windows that can contribute to the loss under `mode`: materialized,
/// non-empty, with at least one valid label frame.
pub fn training_windows(windows: &[Window], mode: Mode) -> Vec<Window> {
    windows
        .iter()
        .map(|w| materialize_mode(w, mode))
        .filter(|w| !w.is_empty() && w.future.iter().flatten().any(|p| p.is_observed()))
        .collect()
}

/// Trains `params` in place. `on_epoch` runs after every epoch and may stop
/// training early. Returns the loss history.
pub fn train(
    windows: &[Window],
    grids: &GridSet,
    params: &mut ModelParams,
    predict: &PredictConfig,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &ModelParams) -> ControlFlow<()>,
) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    let data = training_windows(windows, config.mode);
    if data.is_empty() {
        return Err(Error::InvalidArgument("no usable training windows".into()));
    }
    let predict = config.ablations.apply(*predict);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(params, config.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let results: Vec<Result<(f64, ModelParams)>> = idx
                .par_iter()
                .map(|&i| window_gradient(&data[i], grids, params, &predict))
                .collect();
            // fixed reduction order keeps runs reproducible
            let mut total = params.zeros_like();
            let mut loss = 0.0;
            for r in results {
                let (l, g) = r?;
                loss += l;
                total.add_scaled(&g, 1.0);
            }
            let mean = loss / idx.len() as f64;
            if !mean.is_finite() {
                return Err(Error::Diverged { epoch, batch, loss: mean });
            }
            total.scale(1.0 / idx.len() as f64);
            adam.step(params, &total);
            if !params.all_finite() {
                return Err(Error::Diverged { epoch, batch, loss: mean });
            }
            epoch_loss += loss;
        }
        let record = EpochRecord {
            epoch,
            loss: epoch_loss / data.len() as f64,
        };
        history.push(record);
        if on_epoch(&record, params).is_break() {
            break;
        }
    }
    Ok(history)
}
