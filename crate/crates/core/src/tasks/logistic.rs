use rand::seq::index::sample;

use super::data::{Dataset, Shard};
use super::{dot, TaskError};
use crate::rng::StreamRng;
use crate::ClientId;

/// `ln(1 + e^{-m})` without overflow.
pub(crate) fn softplus_neg(m: f64) -> f64 {
    (-m).max(0.0) + (-m.abs()).exp().ln_1p()
}

/// `1 / (1 + e^{m})`, the derivative of `softplus_neg` up to sign.
pub(crate) fn sigmoid_neg(m: f64) -> f64 {
    if m >= 0.0 {
        let e = (-m).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + m.exp())
    }
}

/// Binary logistic regression with an L2 term:
/// `f_i(w) = mean_k ln(1 + exp(-y_k w.x_k)) + lambda/2 ||w||^2`.
#[derive(Debug, Clone)]
pub struct LogisticTask {
    data: Dataset,
    lambda: f64,
    batch: usize,
}

impl LogisticTask {
    pub fn new(data: Dataset, lambda: f64, batch: usize) -> Result<Self, TaskError> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(TaskError::InvalidParameter(format!("regularizer {lambda}")));
        }
        Ok(Self {
            data,
            lambda,
            batch,
        })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Mini-batch size; `0` means full batch.
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn is_full_batch(&self) -> bool {
        self.data
            .shards()
            .iter()
            .all(|s| self.batch == 0 || self.batch >= s.len())
    }

    /// `max ||x||^2 / 4 + lambda`.
    pub fn beta(&self) -> f64 {
        0.25 * self.data.max_row_norm_sq() + self.lambda
    }

    fn shard(&self, client: ClientId) -> &Shard {
        self.data.shard(client)
    }

    pub fn client_loss(&self, client: ClientId, w: &[f64]) -> f64 {
        let s = self.shard(client);
        let d = self.dim();
        let data: f64 = (0..s.len())
            .map(|k| softplus_neg(s.labels[k] * dot(s.row(k, d), w)))
            .sum::<f64>()
            / s.len() as f64;
        data + 0.5 * self.lambda * dot(w, w)
    }

    fn grad_over(
        &self,
        s: &Shard,
        rows: impl Iterator<Item = usize>,
        count: usize,
        w: &[f64],
    ) -> Vec<f64> {
        let d = self.dim();
        let mut g: Vec<f64> = w.iter().map(|v| self.lambda * v).collect();
        let scale = 1.0 / count as f64;
        for k in rows {
            let x = s.row(k, d);
            let y = s.labels[k];
            let c = -y * sigmoid_neg(y * dot(x, w)) * scale;
            g.iter_mut().zip(x).for_each(|(gi, xi)| *gi += c * xi);
        }
        g
    }

    pub fn client_grad(&self, client: ClientId, w: &[f64]) -> Vec<f64> {
        let s = self.shard(client);
        self.grad_over(s, 0..s.len(), s.len(), w)
    }

    /// Mini-batch drawn without replacement.
    pub fn stochastic_grad(&self, client: ClientId, w: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        let s = self.shard(client);
        if self.batch == 0 || self.batch >= s.len() {
            return self.client_grad(client, w);
        }
        let idx = sample(rng, s.len(), self.batch);
        self.grad_over(s, idx.into_iter(), self.batch, w)
    }
}

/// Synthetic logistic task; see [`Dataset::synthetic`] for the data model.
/// Uses class separation 1, `lambda = 1e-3` and full-batch gradients;
/// adjust with [`LogisticTask::new`] on the returned data if needed.
pub fn make_logistic(
    clients: usize,
    dim: usize,
    samples_per_client: usize,
    skew: f64,
    seed: u64,
) -> Result<LogisticTask, TaskError> {
    let data = Dataset::synthetic(clients, dim, samples_per_client, skew, 1.0, seed)?;
    LogisticTask::new(data, 1e-3, 0)
}
