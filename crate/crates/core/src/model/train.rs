use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kernel::{c, Scalar};
use super::{Example, Model, ModelError};

/// Adaptive moment estimation with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(len: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            step: 0,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }

    pub fn update(&mut self, params: &mut [T], grad: &[T]) {
        self.step += 1;
        let (b1, b2) = (c::<T>(self.beta1), c::<T>(self.beta2));
        let one = T::one();
        let step_size = c::<T>(self.lr / (1.0 - self.beta1.powi(self.step)));
        let v_corr = c::<T>(1.0 / (1.0 - self.beta2.powi(self.step)));
        let eps = c::<T>(self.eps);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            *p -= step_size * *m / ((*v * v_corr).sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: usize,
}

/// Seeded minibatch training loop with global-norm gradient clipping.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    model: Model<T>,
    adam: Adam<T>,
    rng: ChaCha8Rng,
    seed: u64,
    steps: u64,
    epochs: usize,
    pub clip_norm: f64,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Model<T>, seed: u64) -> Self {
        let adam = Adam::new(model.params().len(), model.config().learning_rate);
        Trainer {
            model,
            adam,
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            steps: 0,
            epochs: 0,
            clip_norm: 1.0,
        }
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    pub fn into_model(self) -> Model<T> {
        self.model
    }

    /// One optimizer step on `batch`; returns the pre-update loss.
    pub fn step(&mut self, batch: &[&Example<T>]) -> Result<f64, ModelError> {
        let dropout_seed = (self.model.config().dropout > 0.0)
            .then(|| self.seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ self.steps);
        let (loss, mut grad) = self.model.loss_and_grad(batch, dropout_seed)?;
        let norm = grad
            .iter()
            .map(|g| {
                let g = g.to_f64().unwrap_or(f64::NAN);
                g * g
            })
            .sum::<f64>()
            .sqrt();
        if !norm.is_finite() {
            return Err(ModelError::NonFinite("gradient".into()));
        }
        if norm > self.clip_norm {
            let s = c::<T>(self.clip_norm / norm);
            grad.iter_mut().for_each(|g| *g *= s);
        }
        self.adam.update(self.model.params_mut(), &grad);
        self.steps += 1;
        Ok(loss.to_f64().unwrap_or(f64::NAN))
    }

    /// Shuffles `data` and runs one pass in batches of the configured size.
    pub fn epoch(&mut self, data: &[Example<T>]) -> Result<EpochStats, ModelError> {
        if data.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(self.model.config().batch_size) {
            let batch: Vec<&Example<T>> = chunk.iter().map(|&i| &data[i]).collect();
            total += self.step(&batch)?;
            steps += 1;
        }
        self.epochs += 1;
        Ok(EpochStats {
            epoch: self.epochs,
            mean_loss: total / steps as f64,
            steps,
        })
    }
}
