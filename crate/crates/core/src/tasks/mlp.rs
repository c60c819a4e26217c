use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand_distr::{Distribution, Normal};

use super::data::{Dataset, Shard};
use super::logistic::{sigmoid_neg, softplus_neg};
use super::{dot, TaskError};
use crate::rng::{derive_seed, rng_from, Stream, StreamRng};
use crate::ClientId;

const MAX_PARAMETERS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - x.tanh().powi(2),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        })
    }
}

impl FromStr for Activation {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(TaskError::InvalidParameter(format!("activation `{other}`"))),
        }
    }
}

/// One-hidden-layer binary classifier with logistic loss and an L2 term.
///
/// Parameters are laid out as `W1` (hidden x input, row-major), `b1`, `w2`, `b2`.
#[derive(Debug, Clone)]
pub struct MlpTask {
    data: Dataset,
    hidden: usize,
    activation: Activation,
    lambda: f64,
    batch: usize,
}

impl MlpTask {
    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn dim(&self) -> usize {
        parameter_count(self.data.dim(), self.hidden)
    }

    pub fn is_full_batch(&self) -> bool {
        self.data
            .shards()
            .iter()
            .all(|s| self.batch == 0 || self.batch >= s.len())
    }

    pub fn with_batch(mut self, batch: usize) -> Self {
        self.batch = batch;
        self
    }

    pub fn with_regularization(mut self, lambda: f64) -> Result<Self, TaskError> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(TaskError::InvalidParameter(format!("regularizer {lambda}")));
        }
        self.lambda = lambda;
        Ok(self)
    }

    pub fn initial_weights(&self, seed: u64) -> Vec<f64> {
        let input = self.data.dim();
        let mut rng = rng_from(derive_seed(seed, &[Stream::Init as u64]));
        let first = Normal::new(0.0, (1.0 / input as f64).sqrt()).expect("valid std");
        let second = Normal::new(0.0, (1.0 / self.hidden as f64).sqrt()).expect("valid std");
        let mut w = Vec::with_capacity(self.dim());
        w.extend((0..self.hidden * input).map(|_| first.sample(&mut rng)));
        w.extend(std::iter::repeat_n(0.0, self.hidden));
        w.extend((0..self.hidden).map(|_| second.sample(&mut rng)));
        w.push(0.0);
        w
    }

    /// Loss of one sample and, if `grad` is given, its gradient added with
    /// weight `scale`.
    fn sample_loss(&self, x: &[f64], y: f64, w: &[f64], grad: Option<(&mut [f64], f64)>) -> f64 {
        let (input, h) = (self.data.dim(), self.hidden);
        let (w1, rest) = w.split_at(h * input);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(h);
        let pre: Vec<f64> = (0..h)
            .map(|j| dot(&w1[j * input..(j + 1) * input], x) + b1[j])
            .collect();
        let act: Vec<f64> = pre.iter().map(|&p| self.activation.apply(p)).collect();
        let z = dot(w2, &act) + b2[0];
        if let Some((g, scale)) = grad {
            let dz = -y * sigmoid_neg(y * z) * scale;
            let (g1, rest) = g.split_at_mut(h * input);
            let (gb1, rest) = rest.split_at_mut(h);
            let (g2, gb2) = rest.split_at_mut(h);
            gb2[0] += dz;
            for j in 0..h {
                g2[j] += dz * act[j];
                let dpre = dz * w2[j] * self.activation.derivative(pre[j]);
                gb1[j] += dpre;
                g1[j * input..(j + 1) * input]
                    .iter_mut()
                    .zip(x)
                    .for_each(|(gi, xi)| *gi += dpre * xi);
            }
        }
        softplus_neg(y * z)
    }

    pub fn client_loss(&self, client: ClientId, w: &[f64]) -> f64 {
        let s = self.data.shard(client);
        let d = self.data.dim();
        let total: f64 = (0..s.len())
            .map(|k| self.sample_loss(s.row(k, d), s.labels[k], w, None))
            .sum();
        total / s.len() as f64 + 0.5 * self.lambda * dot(w, w)
    }

    fn grad_over(
        &self,
        s: &Shard,
        rows: impl Iterator<Item = usize>,
        count: usize,
        w: &[f64],
    ) -> Vec<f64> {
        let d = self.data.dim();
        let mut g: Vec<f64> = w.iter().map(|v| self.lambda * v).collect();
        let scale = 1.0 / count as f64;
        for k in rows {
            self.sample_loss(s.row(k, d), s.labels[k], w, Some((&mut g, scale)));
        }
        g
    }

    pub fn client_grad(&self, client: ClientId, w: &[f64]) -> Vec<f64> {
        let s = self.data.shard(client);
        self.grad_over(s, 0..s.len(), s.len(), w)
    }

    pub fn stochastic_grad(&self, client: ClientId, w: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        let s = self.data.shard(client);
        if self.batch == 0 || self.batch >= s.len() {
            return self.client_grad(client, w);
        }
        let idx = sample(rng, s.len(), self.batch);
        self.grad_over(s, idx.into_iter(), self.batch, w)
    }
}

fn parameter_count(input: usize, hidden: usize) -> usize {
    hidden * input + 2 * hidden + 1
}

/// Network with `hidden` units over `data`'s features; full-batch, no
/// regularization by default. Initial parameters come from
/// [`MlpTask::initial_weights`].
pub fn make_mlp(
    hidden: usize,
    activation: Activation,
    data: Dataset,
) -> Result<MlpTask, TaskError> {
    if hidden == 0 {
        return Err(TaskError::InvalidParameter(
            "hidden width must be positive".into(),
        ));
    }
    let count = parameter_count(data.dim(), hidden);
    if count > MAX_PARAMETERS {
        return Err(TaskError::InvalidParameter(format!(
            "{count} parameters exceed the {MAX_PARAMETERS} limit"
        )));
    }
    Ok(MlpTask {
        data,
        hidden,
        activation,
        lambda: 0.0,
        batch: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::testutil::{assert_close, finite_difference};
    use rand::Rng;

    fn data() -> Dataset {
        Dataset::synthetic(2, 4, 12, 0.2, 1.0, 6).unwrap()
    }

    #[test]
    fn rejects_zero_width() {
        assert!(make_mlp(0, Activation::Tanh, data()).is_err());
        assert!(make_mlp(30_000, Activation::Tanh, data()).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for act in [Activation::Tanh, Activation::Relu] {
            let m = make_mlp(5, act, data())
                .unwrap()
                .with_regularization(0.01)
                .unwrap();
            let mut rng = rng_from(99);
            for _ in 0..10 {
                let w: Vec<f64> = (0..m.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let fd = finite_difference(|x| m.client_loss(1, x), &w);
                assert_close(&m.client_grad(1, &w), &fd, 1e-4);
            }
        }
    }

    #[test]
    fn initialization_is_seeded() {
        let m = make_mlp(3, Activation::Relu, data()).unwrap();
        assert_eq!(m.initial_weights(4), m.initial_weights(4));
        assert_ne!(m.initial_weights(4), m.initial_weights(5));
        assert_eq!(m.initial_weights(4).len(), 3 * 4 + 7);
    }

    #[test]
    fn activation_text() {
        assert_eq!("relu".parse::<Activation>().unwrap(), Activation::Relu);
        assert!("gelu".parse::<Activation>().is_err());
        assert_eq!(Activation::Tanh.to_string(), "tanh");
    }
}
