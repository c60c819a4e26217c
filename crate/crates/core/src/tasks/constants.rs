use rand_distr::{Distribution, StandardNormal};

use super::{norm_sq, Task, TaskError};
use crate::rng::{derive_seed, rng_from, stream_seed, Stream};

/// Problem constants entering the step-size rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceConstants {
    /// `f(w0) - f*`.
    pub m: f64,
    pub beta: f64,
    /// Oracle variance bound.
    pub sigma_sq: f64,
    /// Dissimilarity bound `(1/N) sum ||grad f_i||^2 <= G^2 + B^2 ||grad f||^2`.
    pub g_sq: f64,
    pub b_sq: f64,
    pub clients: usize,
}

impl ConvergenceConstants {
    fn unsampled(&self, participants: usize) -> f64 {
        1.0 - participants as f64 / self.clients as f64
    }

    /// `sigma^2 + 4 (1 - S/N) G^2`.
    pub fn sigma_tilde_sq(&self, participants: usize) -> f64 {
        self.sigma_sq + 4.0 * self.unsampled(participants) * self.g_sq
    }

    /// `1 + (1 - S/N) B^2 / S`.
    pub fn gamma(&self, participants: usize) -> f64 {
        1.0 + self.unsampled(participants) * self.b_sq / participants as f64
    }

    /// `omega K V + 1`.
    pub fn theta(omega: f64, anchor_rate: u64, queue: usize) -> f64 {
        omega * (anchor_rate as f64 * queue as f64) + 1.0
    }
}

/// Step size `min{1/(30 gamma beta theta), sqrt(2MS/(beta s^2 T)),
/// (MS/(12 beta^2 omega^2 KV s^2 T))^(1/3)}` with `s^2` the sampling-adjusted
/// variance. A term whose denominator vanishes is treated as infinite.
pub fn tuned_eta(
    c: &ConvergenceConstants,
    rounds: u64,
    participants: usize,
    omega: f64,
    anchor_rate: u64,
    queue: usize,
) -> Result<f64, TaskError> {
    let bad = |what: &str| Err(TaskError::InvalidParameter(what.to_string()));
    if !(c.m > 0.0 && c.m.is_finite()) {
        return bad("M must be positive");
    }
    if !(c.beta > 0.0 && c.beta.is_finite()) {
        return bad("beta must be positive");
    }
    if !(c.sigma_sq >= 0.0 && c.g_sq >= 0.0 && c.b_sq >= 0.0) {
        return bad("variance and dissimilarity constants must be nonnegative");
    }
    if rounds == 0 || anchor_rate == 0 || queue == 0 {
        return bad("T, K and V must be positive");
    }
    if participants == 0 || participants > c.clients {
        return bad("S must be in 1..=N");
    }
    if !(omega >= 0.0 && omega.is_finite()) {
        return bad("omega must be nonnegative");
    }
    let s = participants as f64;
    let t = rounds as f64;
    let horizon = anchor_rate as f64 * queue as f64;
    let var = c.sigma_tilde_sq(participants);
    let theta = ConvergenceConstants::theta(omega, anchor_rate, queue);
    let first = 1.0 / (30.0 * c.gamma(participants) * c.beta * theta);
    let second = if var > 0.0 {
        (2.0 * c.m * s / (c.beta * var * t)).sqrt()
    } else {
        f64::INFINITY
    };
    let third = if var > 0.0 && omega > 0.0 {
        (c.m * s / (12.0 * c.beta.powi(2) * omega.powi(2) * horizon * var * t)).cbrt()
    } else {
        f64::INFINITY
    };
    Ok(first.min(second).min(third))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOptions {
    /// Oracle draws per (probe, client) for the variance estimate.
    pub oracle_draws: usize,
    /// Known optimal value; otherwise estimated by full-batch descent.
    pub f_star: Option<f64>,
    pub descent_steps: usize,
    pub seed: u64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            oracle_draws: 20,
            f_star: None,
            descent_steps: 500,
            seed: 0,
        }
    }
}

/// `count` Gaussian points around `center` with per-coordinate scale `radius`.
pub fn random_probes(center: &[f64], radius: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_from(derive_seed(seed, &[Stream::Init as u64, 1]));
    (0..count)
        .map(|_| {
            center
                .iter()
                .map(|c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    c + radius * z
                })
                .collect()
        })
        .collect()
}

/// Empirical constants at `probes` (at least ten), relative to `w0`.
///
/// `sigma^2` is the largest client-averaged oracle variance over probes.
/// `(G^2, B^2)` come from a least-squares fit of the dissimilarity
/// inequality, with `G^2` then raised until every probe satisfies it.
/// `beta` is analytic when the task has one, otherwise the largest gradient
/// difference quotient between probes.
pub fn estimate_constants(
    task: &Task,
    w0: &[f64],
    probes: &[Vec<f64>],
    opts: &EstimateOptions,
) -> Result<ConvergenceConstants, TaskError> {
    if probes.len() < 10 {
        return Err(TaskError::InvalidParameter(format!(
            "need at least 10 probe points, got {}",
            probes.len()
        )));
    }
    let n = task.num_clients();
    let mut sigma_sq: f64 = 0.0;
    let mut xs = Vec::with_capacity(probes.len());
    let mut ys = Vec::with_capacity(probes.len());
    let mut grads = Vec::with_capacity(probes.len());
    for (p, w) in probes.iter().enumerate() {
        let local: Vec<Vec<f64>> = (0..n)
            .map(|i| task.client_grad(i, w))
            .collect::<Result<_, _>>()?;
        let mut global = vec![0.0; task.dim()];
        for g in &local {
            global
                .iter_mut()
                .zip(g)
                .for_each(|(a, b)| *a += b / n as f64);
        }
        xs.push(norm_sq(&global));
        ys.push(local.iter().map(|g| norm_sq(g)).sum::<f64>() / n as f64);
        if !task.is_deterministic() && opts.oracle_draws > 0 {
            let mut var = 0.0;
            for (i, exact) in local.iter().enumerate() {
                let mut rng =
                    rng_from(stream_seed(opts.seed, Stream::Gradient, i as u64, p as u64));
                for _ in 0..opts.oracle_draws {
                    let g = task.stochastic_grad(i, w, &mut rng)?;
                    var += g
                        .iter()
                        .zip(exact)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>();
                }
            }
            sigma_sq = sigma_sq.max(var / (n * opts.oracle_draws) as f64);
        }
        grads.push(global);
    }
    let (g_sq, b_sq) = envelope_fit(&xs, &ys);

    let beta = match task.smoothness() {
        Some(b) => b,
        None => {
            let mut best: f64 = 0.0;
            for a in 0..probes.len() {
                for b in a + 1..probes.len() {
                    let dw: f64 = probes[a]
                        .iter()
                        .zip(&probes[b])
                        .map(|(x, y)| (x - y).powi(2))
                        .sum();
                    let dg: f64 = grads[a]
                        .iter()
                        .zip(&grads[b])
                        .map(|(x, y)| (x - y).powi(2))
                        .sum();
                    if dw > 0.0 {
                        best = best.max((dg / dw).sqrt());
                    }
                }
            }
            best
        }
    };

    let f0 = task.loss(w0)?;
    let f_star = match (opts.f_star, task.optimum()) {
        (Some(v), _) => v,
        (None, Some(opt)) => task.loss(&opt)?,
        (None, None) => {
            let mut best = f0;
            let mut w = w0.to_vec();
            let step = if beta > 0.0 { 1.0 / beta } else { 0.0 };
            for _ in 0..opts.descent_steps {
                let g = task.grad(&w)?;
                w.iter_mut().zip(&g).for_each(|(x, g)| *x -= step * g);
                best = best.min(task.loss(&w)?);
            }
            for p in probes {
                best = best.min(task.loss(p)?);
            }
            best
        }
    };
    Ok(ConvergenceConstants {
        m: (f0 - f_star).max(0.0),
        beta,
        sigma_sq,
        g_sq,
        b_sq,
        clients: n,
    })
}

/// Least-squares line `y = a + b x` with `a, b >= 0`, then `a` raised to the
/// largest residual so the line bounds every point from above.
fn envelope_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let mut b = if sxx > 0.0 { (sxy / sxx).max(0.0) } else { 0.0 };
    let mut a = (my - b * mx).max(0.0);
    if sxx == 0.0 {
        b = 0.0;
        a = my;
    }
    let worst = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| y - (a + b * x))
        .fold(0.0, f64::max);
    (a + worst, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{make_logistic, make_quadratic, QuadraticTask};

    fn constants() -> ConvergenceConstants {
        ConvergenceConstants {
            m: 2.0,
            beta: 3.0,
            sigma_sq: 0.5,
            g_sq: 0.25,
            b_sq: 2.0,
            clients: 100,
        }
    }

    #[test]
    fn derived_quantities() {
        let c = constants();
        assert!((c.sigma_tilde_sq(10) - (0.5 + 4.0 * 0.9 * 0.25)).abs() < 1e-15);
        assert!((c.gamma(10) - (1.0 + 0.9 * 2.0 / 10.0)).abs() < 1e-15);
        assert_eq!(ConvergenceConstants::theta(0.5, 10, 3), 16.0);
    }

    #[test]
    fn tuned_eta_terms() {
        let c = constants();
        // Hand evaluation: var = 1.4, gamma = 1.18, theta = 16, KV = 30.
        let first: f64 = 1.0 / (30.0 * 1.18 * 3.0 * 16.0);
        let second = (2.0f64 * 2.0 * 10.0 / (3.0 * 1.4 * 1000.0)).sqrt();
        let third = (2.0f64 * 10.0 / (12.0 * 9.0 * 0.25 * 30.0 * 1.4 * 1000.0)).cbrt();
        let want = first.min(second).min(third);
        let got = tuned_eta(&c, 1000, 10, 0.5, 10, 3).unwrap();
        assert!((got - want).abs() <= 1e-15 * want, "{got} vs {want}");
    }

    #[test]
    fn omega_zero_drops_third_term() {
        let c = constants();
        let var = c.sigma_tilde_sq(10);
        let first = 1.0 / (30.0 * c.gamma(10) * 3.0);
        let second = (2.0 * 2.0 * 10.0 / (3.0 * var * 1e6)).sqrt();
        assert_eq!(
            tuned_eta(&c, 1_000_000, 10, 0.0, 10, 3).unwrap(),
            first.min(second)
        );
    }

    #[test]
    fn eta_vanishes_with_horizon() {
        let c = constants();
        let a = tuned_eta(&c, 1_000, 10, 0.5, 10, 3).unwrap();
        let b = tuned_eta(&c, 1_000_000_000, 10, 0.5, 10, 3).unwrap();
        assert!(b < a && b < 1e-3);
    }

    #[test]
    fn invalid_constants() {
        let mut c = constants();
        c.m = 0.0;
        assert!(tuned_eta(&c, 10, 1, 0.1, 1, 1).is_err());
        assert!(tuned_eta(&constants(), 0, 1, 0.1, 1, 1).is_err());
        assert!(tuned_eta(&constants(), 10, 1, -0.1, 1, 1).is_err());
    }

    #[test]
    fn deterministic_oracle_has_zero_variance() {
        let task = Task::Logistic(make_logistic(3, 4, 10, 0.0, 1).unwrap());
        let probes = random_probes(&[0.0; 4], 1.0, 10, 2);
        let c = estimate_constants(&task, &[0.0; 4], &probes, &EstimateOptions::default()).unwrap();
        assert_eq!(c.sigma_sq, 0.0);
        assert!(c.m > 0.0);
    }

    #[test]
    fn identical_clients() {
        let a = vec![2.0, 0.0, 0.0, 1.0];
        let task = Task::Quadratic(QuadraticTask::new(a, 2.0, vec![vec![1.0, -1.0]; 5]).unwrap());
        let probes = random_probes(&[0.0, 0.0], 2.0, 12, 3);
        let c =
            estimate_constants(&task, &[0.0, 0.0], &probes, &EstimateOptions::default()).unwrap();
        assert!(c.g_sq < 1e-12, "{}", c.g_sq);
        assert!((c.b_sq - 1.0).abs() < 1e-9, "{}", c.b_sq);
    }

    #[test]
    fn quadratic_dissimilarity_matches_closed_form() {
        let q = make_quadratic(8, 4, 5.0, 1.0, 7).unwrap();
        let g_exact = q.analytic_dissimilarity();
        let task = Task::Quadratic(q);
        let probes = random_probes(&[0.0; 4], 3.0, 30, 1);
        let c = estimate_constants(&task, &[0.0; 4], &probes, &EstimateOptions::default()).unwrap();
        assert!((c.b_sq.sqrt() - 1.0).abs() <= 0.2, "B^2 = {}", c.b_sq);
        assert!(
            (c.g_sq - g_exact).abs() <= 1e-6 * g_exact.max(1.0),
            "{} vs {g_exact}",
            c.g_sq
        );
        assert_eq!(c.beta, 5.0);
    }

    #[test]
    fn too_few_probes() {
        let task = Task::counterexample(1).unwrap();
        let probes = random_probes(&[0.0], 1.0, 5, 0);
        assert!(estimate_constants(&task, &[0.0], &probes, &EstimateOptions::default()).is_err());
    }
}
