use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::TaskError;
use crate::rng::{derive_seed, rng_from, Stream};

/// One client's samples: row-major features and `+1/-1` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub features: Vec<f64>,
    pub labels: Vec<f64>,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize, dim: usize) -> &[f64] {
        &self.features[i * dim..(i + 1) * dim]
    }

    /// All samples share one label.
    pub fn is_single_class(&self) -> bool {
        self.labels.windows(2).all(|w| w[0] == w[1])
    }
}

/// Binary classification data partitioned across clients. The last feature
/// of every row is a constant `1` so the model carries a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    shards: Vec<Shard>,
}

impl Dataset {
    pub fn new(dim: usize, shards: Vec<Shard>) -> Result<Self, TaskError> {
        if dim == 0 || shards.is_empty() {
            return Err(TaskError::Data("empty dataset".into()));
        }
        for (i, s) in shards.iter().enumerate() {
            if s.is_empty() {
                return Err(TaskError::Data(format!("client {i} has no samples")));
            }
            if s.features.len() != s.labels.len() * dim {
                return Err(TaskError::Data(format!("client {i} has ragged features")));
            }
            if s.labels.iter().any(|&y| y != 1.0 && y != -1.0) {
                return Err(TaskError::Data(format!(
                    "client {i} has a label outside +-1"
                )));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(TaskError::Data(format!(
                    "client {i} has a non-finite feature"
                )));
            }
        }
        Ok(Self { dim, shards })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_clients(&self) -> usize {
        self.shards.len()
    }

    pub fn shard(&self, client: usize) -> &Shard {
        &self.shards[client]
    }

    pub fn shards(&self) -> &[Shard] {
        &self.shards
    }

    pub fn max_row_norm_sq(&self) -> f64 {
        self.shards
            .iter()
            .flat_map(|s| s.features.chunks(self.dim))
            .map(|r| r.iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Clients whose shard holds a single class.
    pub fn degenerate_shards(&self) -> Vec<usize> {
        (0..self.shards.len())
            .filter(|&i| self.shards[i].is_single_class())
            .collect()
    }

    /// Two Gaussian classes with means `+mu` and `-mu`, `||mu|| = separation`,
    /// and isotropic noise of total variance one. Each client draws a
    /// `1 - skew` share of its samples from the balanced pool and the rest
    /// from its own class (client `i` favours class `i mod 2`).
    pub fn synthetic(
        clients: usize,
        dim: usize,
        samples_per_client: usize,
        skew: f64,
        separation: f64,
        seed: u64,
    ) -> Result<Self, TaskError> {
        if clients == 0 || samples_per_client == 0 {
            return Err(TaskError::InvalidParameter(
                "need clients and samples".into(),
            ));
        }
        if dim < 2 {
            return Err(TaskError::InvalidParameter(
                "dimension must be at least 2 (one feature plus bias)".into(),
            ));
        }
        if !(0.0..=1.0).contains(&skew) {
            return Err(TaskError::InvalidParameter(format!(
                "skew {skew} outside [0, 1]"
            )));
        }
        let feats = dim - 1;
        let mut rng = rng_from(derive_seed(seed, &[Stream::Data as u64, 1]));
        let mut mu: Vec<f64> = (0..feats)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let norm = mu.iter().map(|v| v * v).sum::<f64>().sqrt();
        mu.iter_mut().for_each(|v| *v *= separation / norm);
        let noise = 1.0 / (feats as f64).sqrt();
        let shards = (0..clients)
            .map(|i| {
                let mut rng = rng_from(derive_seed(seed, &[Stream::Data as u64, 2, i as u64]));
                let biased = (skew * samples_per_client as f64).round() as usize;
                let favoured = if i % 2 == 0 { 1.0 } else { -1.0 };
                let mut features = Vec::with_capacity(samples_per_client * dim);
                let mut labels = Vec::with_capacity(samples_per_client);
                for k in 0..samples_per_client {
                    let y = if k < biased {
                        favoured
                    } else if rng.random::<bool>() {
                        1.0
                    } else {
                        -1.0
                    };
                    for m in &mu {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        features.push(y * m + noise * z);
                    }
                    features.push(1.0);
                    labels.push(y);
                }
                Shard { features, labels }
            })
            .collect();
        Self::new(dim, shards)
    }

    /// Reads a CSV with a header row, one sample per line and the label in
    /// the last column (`0/1` or `-1/1`). Rows are shuffled with `seed` and
    /// dealt round-robin to `clients`; a bias feature is appended.
    pub fn from_csv(path: &Path, clients: usize, seed: u64) -> Result<Self, TaskError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)?;
        let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
        let mut width = None;
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let values = record
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| TaskError::Data(format!("line {}: {e}", line + 2)))?;
            if values.len() < 2 {
                return Err(TaskError::Data(format!(
                    "line {}: need a feature and a label",
                    line + 2
                )));
            }
            if *width.get_or_insert(values.len()) != values.len() {
                return Err(TaskError::Data(format!("line {}: ragged row", line + 2)));
            }
            let (label, feats) = values.split_last().expect("non-empty row");
            let y = match *label {
                l if l == 1.0 => 1.0,
                l if l == 0.0 || l == -1.0 => -1.0,
                l => return Err(TaskError::Data(format!("line {}: label {l}", line + 2))),
            };
            rows.push((feats.to_vec(), y));
        }
        if clients == 0 || rows.len() < clients {
            return Err(TaskError::Data(format!(
                "{} rows cannot fill {clients} clients",
                rows.len()
            )));
        }
        rows.shuffle(&mut rng_from(derive_seed(seed, &[Stream::Data as u64, 3])));
        let dim = width.expect("rows present");
        let mut shards = vec![
            Shard {
                features: Vec::new(),
                labels: Vec::new(),
            };
            clients
        ];
        for (k, (feats, y)) in rows.into_iter().enumerate() {
            let s = &mut shards[k % clients];
            s.features.extend(feats);
            s.features.push(1.0);
            s.labels.push(y);
        }
        Self::new(dim, shards)
    }
}
