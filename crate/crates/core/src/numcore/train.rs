//! Minibatch Adam loop shared by every trainable model.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{adam_step, AdamConfig, AdamState, Bound, Graph, Mode, ParamStore, Var};
use crate::error::{Error, Result};

/// Optimization budget for one training run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Invalid("epochs must be at least 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::Invalid("batch size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Invalid(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

/// Trains `params` on `n` examples and returns the mean loss of each epoch.
///
/// Every epoch reshuffles the example order; every batch gets a fresh
/// train-mode graph whose dropout seed is drawn from the same generator, so
/// the whole run is a function of `config.seed`. `loss` receives the graph,
/// the bound parameters, and the batch's example indices.
pub fn fit<F>(params: &mut ParamStore, n: usize, config: &TrainConfig, mut loss: F) -> Result<Vec<f64>>
where
    F: FnMut(&mut Graph, &Bound, &[usize]) -> Result<Var>,
{
    config.validate()?;
    if n == 0 {
        return Err(Error::EmptyDataset { dropped: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = AdamState::new(AdamConfig::with_lr(config.lr), params.tensors())?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut curve = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch) {
            let mut g = Graph::new(Mode::Train, rng.random());
            let bound = params.bind(&mut g)?;
            let l = loss(&mut g, &bound, batch)?;
            let value = g.value(l).item()?;
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("loss in epoch {}", epoch + 1)));
            }
            let grads = g.backward(l)?.take(bound.vars())?;
            adam_step(params.tensors_mut(), &grads, &mut state)?;
            total += value * batch.len() as f64;
        }
        curve.push(total / n as f64);
    }
    Ok(curve)
}
