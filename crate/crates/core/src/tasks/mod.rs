//! Objectives, per-client data and stochastic gradient oracles.
//!
//! All arithmetic is done in `f64`; the protocol converts to and from
//! [`DenseVector`](crate::DenseVector) at its boundaries.

mod constants;
mod counterexample;
mod data;
mod logistic;
mod mlp;
mod quadratic;

use thiserror::Error;

pub use constants::{
    estimate_constants, random_probes, tuned_eta, ConvergenceConstants, EstimateOptions,
};
pub use counterexample::{counterexample_grad, counterexample_loss};
pub use data::{Dataset, Shard};
pub use logistic::{make_logistic, LogisticTask};
pub use mlp::{make_mlp, Activation, MlpTask};
pub use quadratic::{make_quadratic, QuadraticTask};

use crate::rng::StreamRng;
use crate::ClientId;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("invalid task parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("dataset error: {0}")]
    Data(String),
    #[error("dataset I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset CSV: {0}")]
    Csv(#[from] csv::Error),
}

/// A federated objective `f(w) = (1/N) sum_i f_i(w)` with gradient oracles.
#[derive(Debug, Clone)]
pub enum Task {
    /// `f(w) = (w-1)^2/2 + [w-1]_+^2/2`, identical on every client.
    Counterexample {
        clients: usize,
    },
    Quadratic(QuadraticTask),
    Logistic(LogisticTask),
    Mlp(MlpTask),
}

impl Task {
    pub fn counterexample(clients: usize) -> Result<Self, TaskError> {
        if clients == 0 {
            return Err(TaskError::InvalidParameter("no clients".into()));
        }
        Ok(Task::Counterexample { clients })
    }

    pub fn num_clients(&self) -> usize {
        match self {
            Task::Counterexample { clients } => *clients,
            Task::Quadratic(q) => q.num_clients(),
            Task::Logistic(l) => l.data().num_clients(),
            Task::Mlp(m) => m.data().num_clients(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Task::Counterexample { .. } => 1,
            Task::Quadratic(q) => q.dim(),
            Task::Logistic(l) => l.dim(),
            Task::Mlp(m) => m.dim(),
        }
    }

    fn check(&self, w: &[f64]) -> Result<(), TaskError> {
        if w.len() != self.dim() {
            return Err(TaskError::DimensionMismatch {
                expected: self.dim(),
                actual: w.len(),
            });
        }
        Ok(())
    }

    fn check_client(&self, client: ClientId) -> Result<(), TaskError> {
        if client >= self.num_clients() {
            return Err(TaskError::InvalidParameter(format!(
                "client {client} outside 0..{}",
                self.num_clients()
            )));
        }
        Ok(())
    }

    pub fn client_loss(&self, client: ClientId, w: &[f64]) -> Result<f64, TaskError> {
        self.check(w)?;
        self.check_client(client)?;
        Ok(match self {
            Task::Counterexample { .. } => counterexample_loss(w[0]),
            Task::Quadratic(q) => q.client_loss(client, w),
            Task::Logistic(l) => l.client_loss(client, w),
            Task::Mlp(m) => m.client_loss(client, w),
        })
    }

    /// Full-batch local gradient.
    pub fn client_grad(&self, client: ClientId, w: &[f64]) -> Result<Vec<f64>, TaskError> {
        self.check(w)?;
        self.check_client(client)?;
        Ok(match self {
            Task::Counterexample { .. } => vec![counterexample_grad(w[0])],
            Task::Quadratic(q) => q.client_grad(client, w),
            Task::Logistic(l) => l.client_grad(client, w),
            Task::Mlp(m) => m.client_grad(client, w),
        })
    }

    /// Unbiased stochastic estimate of the local gradient.
    pub fn stochastic_grad(
        &self,
        client: ClientId,
        w: &[f64],
        rng: &mut StreamRng,
    ) -> Result<Vec<f64>, TaskError> {
        self.check(w)?;
        self.check_client(client)?;
        Ok(match self {
            Task::Counterexample { .. } => vec![counterexample_grad(w[0])],
            Task::Quadratic(q) => q.stochastic_grad(client, w, rng),
            Task::Logistic(l) => l.stochastic_grad(client, w, rng),
            Task::Mlp(m) => m.stochastic_grad(client, w, rng),
        })
    }

    /// True when the oracle always returns the full-batch gradient.
    pub fn is_deterministic(&self) -> bool {
        match self {
            Task::Counterexample { .. } => true,
            Task::Quadratic(q) => q.noise_std() == 0.0,
            Task::Logistic(l) => l.is_full_batch(),
            Task::Mlp(m) => m.is_full_batch(),
        }
    }

    /// Global objective `(1/N) sum_i f_i(w)`.
    pub fn loss(&self, w: &[f64]) -> Result<f64, TaskError> {
        let n = self.num_clients();
        let mut total = 0.0;
        for i in 0..n {
            total += self.client_loss(i, w)?;
        }
        Ok(total / n as f64)
    }

    pub fn grad(&self, w: &[f64]) -> Result<Vec<f64>, TaskError> {
        let n = self.num_clients();
        let mut total = vec![0.0; self.dim()];
        for i in 0..n {
            for (t, g) in total.iter_mut().zip(self.client_grad(i, w)?) {
                *t += g;
            }
        }
        total.iter_mut().for_each(|t| *t /= n as f64);
        Ok(total)
    }

    /// Analytic smoothness constant where one is available.
    pub fn smoothness(&self) -> Option<f64> {
        match self {
            Task::Counterexample { .. } => Some(2.0),
            Task::Quadratic(q) => Some(q.beta()),
            Task::Logistic(l) => Some(l.beta()),
            Task::Mlp(_) => None,
        }
    }

    /// Known minimizer, if any.
    pub fn optimum(&self) -> Option<Vec<f64>> {
        match self {
            Task::Counterexample { .. } => Some(vec![1.0]),
            Task::Quadratic(q) => Some(q.optimum()),
            _ => None,
        }
    }

    /// Starting point: zeros, except the network which draws its
    /// initialization from `seed`.
    pub fn initial_weights(&self, seed: u64) -> Vec<f64> {
        match self {
            Task::Mlp(m) => m.initial_weights(seed),
            _ => vec![0.0; self.dim()],
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}
