use rand_distr::{Distribution, Normal, StandardNormal};

use super::{dot, TaskError};
use crate::rng::{derive_seed, rng_from, Stream, StreamRng};
use crate::ClientId;

/// `f_i(w) = (w - c_i)^T A (w - c_i) / 2` with a shared symmetric PSD `A`.
///
/// The oracle adds isotropic Gaussian noise of standard deviation
/// `noise_std` per coordinate to the exact gradient.
#[derive(Debug, Clone)]
pub struct QuadraticTask {
    dim: usize,
    a: Vec<f64>,
    beta: f64,
    centers: Vec<Vec<f64>>,
    noise_std: f64,
}

impl QuadraticTask {
    /// `a` is row-major `d x d`; `beta` must be its largest eigenvalue.
    pub fn new(a: Vec<f64>, beta: f64, centers: Vec<Vec<f64>>) -> Result<Self, TaskError> {
        let dim = centers
            .first()
            .map(Vec::len)
            .ok_or_else(|| TaskError::InvalidParameter("no clients".into()))?;
        if dim == 0 || a.len() != dim * dim {
            return Err(TaskError::InvalidParameter(format!(
                "matrix of {} entries for dimension {dim}",
                a.len()
            )));
        }
        if centers.iter().any(|c| c.len() != dim) {
            return Err(TaskError::InvalidParameter("ragged centers".into()));
        }
        for i in 0..dim {
            for j in 0..i {
                if (a[i * dim + j] - a[j * dim + i]).abs() > 1e-12 * beta.max(1.0) {
                    return Err(TaskError::InvalidParameter("matrix not symmetric".into()));
                }
            }
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(TaskError::InvalidParameter(format!("beta {beta}")));
        }
        Ok(Self {
            dim,
            a,
            beta,
            centers,
            noise_std: 0.0,
        })
    }

    pub fn with_noise(mut self, noise_std: f64) -> Result<Self, TaskError> {
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(TaskError::InvalidParameter(format!("noise {noise_std}")));
        }
        self.noise_std = noise_std;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_clients(&self) -> usize {
        self.centers.len()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn matrix(&self) -> &[f64] {
        &self.a
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    /// Mean of the centers, the minimizer of the average.
    pub fn optimum(&self) -> Vec<f64> {
        let n = self.centers.len() as f64;
        let mut mean = vec![0.0; self.dim];
        for c in &self.centers {
            for (m, v) in mean.iter_mut().zip(c) {
                *m += v / n;
            }
        }
        mean
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.a.chunks(self.dim).map(|row| dot(row, v)).collect()
    }

    fn residual(&self, client: ClientId, w: &[f64]) -> Vec<f64> {
        w.iter()
            .zip(&self.centers[client])
            .map(|(x, c)| x - c)
            .collect()
    }

    pub fn client_loss(&self, client: ClientId, w: &[f64]) -> f64 {
        let r = self.residual(client, w);
        0.5 * dot(&r, &self.apply(&r))
    }

    pub fn client_grad(&self, client: ClientId, w: &[f64]) -> Vec<f64> {
        self.apply(&self.residual(client, w))
    }

    pub fn stochastic_grad(&self, client: ClientId, w: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        let mut g = self.client_grad(client, w);
        if self.noise_std > 0.0 {
            let noise = Normal::new(0.0, self.noise_std).expect("valid std");
            g.iter_mut().for_each(|v| *v += noise.sample(rng));
        }
        g
    }

    /// `G^2` of the dissimilarity bound, exactly: `(1/N) sum ||A (c_i - c_bar)||^2`
    /// (with `B^2 = 1`).
    pub fn analytic_dissimilarity(&self) -> f64 {
        let c_bar = self.optimum();
        self.centers
            .iter()
            .map(|c| {
                let diff: Vec<f64> = c.iter().zip(&c_bar).map(|(x, m)| x - m).collect();
                let ad = self.apply(&diff);
                dot(&ad, &ad)
            })
            .sum::<f64>()
            / self.centers.len() as f64
    }
}

/// `N` quadratics sharing `A = Q diag(1..=condition) Q^T` for a random
/// orthogonal `Q`; centers are Gaussian with standard deviation `spread`.
pub fn make_quadratic(
    clients: usize,
    dim: usize,
    condition: f64,
    spread: f64,
    seed: u64,
) -> Result<QuadraticTask, TaskError> {
    if clients == 0 || dim == 0 {
        return Err(TaskError::InvalidParameter(
            "need at least one client and coordinate".into(),
        ));
    }
    if !(condition >= 1.0 && condition.is_finite()) {
        return Err(TaskError::InvalidParameter(format!(
            "condition {condition} < 1"
        )));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(TaskError::InvalidParameter(format!("spread {spread}")));
    }
    let mut rng = rng_from(derive_seed(seed, &[Stream::Data as u64, 0]));
    let q = random_orthogonal(dim, &mut rng);
    let eig: Vec<f64> = (0..dim)
        .map(|k| {
            if dim == 1 {
                condition
            } else {
                1.0 + (condition - 1.0) * k as f64 / (dim - 1) as f64
            }
        })
        .collect();
    let mut a = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let v: f64 = (0..dim)
                .map(|k| q[i * dim + k] * eig[k] * q[j * dim + k])
                .sum();
            a[i * dim + j] = v;
            a[j * dim + i] = v;
        }
    }
    let centers = (0..clients)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    spread * z
                })
                .collect()
        })
        .collect();
    QuadraticTask::new(a, condition, centers)
}

/// Gram-Schmidt on a Gaussian matrix; columns of the row-major result are
/// orthonormal.
fn random_orthogonal(dim: usize, rng: &mut StreamRng) -> Vec<f64> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while cols.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for c in &cols {
            let p = dot(&v, c);
            v.iter_mut().zip(c).for_each(|(x, y)| *x -= p * y);
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            cols.push(v);
        }
    }
    let mut q = vec![0.0; dim * dim];
    for (k, c) in cols.iter().enumerate() {
        for i in 0..dim {
            q[i * dim + k] = c[i];
        }
    }
    q
}
