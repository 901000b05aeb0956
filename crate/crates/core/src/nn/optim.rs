//! Adam and a seeded mini-batch training loop with loss-plateau stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(learning_rate: f64, len: usize) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.learning_rate * mhat / (vhat.sqrt() + self.epsilon);
        }
    }
}

/// Optimization settings shared by every trainable model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Epochs without training-loss improvement before stopping.
    pub patience: usize,
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config("batch_size and patience must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitLog {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epochs_run: usize,
    pub epoch_losses: Vec<f64>,
}

/// Runs mini-batch Adam over `n` samples. `batch_grad` returns the mean loss
/// and gradient over the given sample indices; `full_loss` evaluates the mean
/// loss over all samples.
pub fn fit<G, L>(params: &mut [f64], n: usize, schedule: &Schedule, mut batch_grad: G, mut full_loss: L) -> Result<FitLog>
where
    G: FnMut(&[f64], &[usize]) -> Result<(f64, Vec<f64>)>,
    L: FnMut(&[f64]) -> Result<f64>,
{
    schedule.validate()?;
    if n == 0 {
        return Err(Error::Training("no training samples".into()));
    }
    let initial_loss = full_loss(params)?;
    let mut adam = Adam::new(schedule.learning_rate, params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::new();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for epoch in 0..schedule.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(schedule.batch_size) {
            let (loss, grad) = batch_grad(params, batch)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training(format!("non-finite loss or gradient in epoch {epoch}")));
            }
            total += loss * batch.len() as f64;
            adam.step(params, &grad);
        }
        let epoch_loss = total / n as f64;
        epoch_losses.push(epoch_loss);
        if epoch_loss < best {
            best = epoch_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= schedule.patience {
                break;
            }
        }
    }
    let final_loss = if epoch_losses.is_empty() { initial_loss } else { full_loss(params)? };
    Ok(FitLog {
        initial_loss,
        final_loss,
        epochs_run: epoch_losses.len(),
        epoch_losses,
    })
}
