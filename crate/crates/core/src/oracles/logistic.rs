//! Nonconvex-regularized logistic regression on per-node data shards.
//!
//! `f_i(x) = (1/N_i) Σ_j log(1 + exp(−b_ij a_ijᵀx)) + r Σ_k x_k²/(1 + x_k²)`.
//! A stochastic gradient uses one uniformly drawn local sample plus Gaussian
//! noise of total variance `σ_i²`.

use rand::Rng;

use super::{fill_noise, NodeRng, OracleError, OracleSuite, Problem};
use crate::data::{PartitionPlan, SparseDataset, SparseRow};

pub const DEFAULT_REGULARIZATION: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticSpec {
    pub dim: usize,
    /// Per node, the `(a_ij, b_ij)` pairs.
    pub shards: Vec<Vec<(SparseRow, f64)>>,
    pub reg: f64,
    pub sigmas: Vec<f64>,
}

impl LogisticSpec {
    pub fn from_partition(
        ds: &SparseDataset,
        plan: &PartitionPlan,
        reg: f64,
        sigmas: Vec<f64>,
    ) -> Self {
        let shards = plan
            .assignment
            .iter()
            .map(|rows| {
                rows.iter()
                    .map(|&r| (ds.rows[r].clone(), ds.labels[r]))
                    .collect()
            })
            .collect();
        LogisticSpec {
            dim: ds.dim,
            shards,
            reg,
            sigmas,
        }
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// `1 / (1 + e^{−z})` without overflow.
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug)]
pub struct Logistic {
    spec: LogisticSpec,
}

/// Sample index plus injected noise.
#[derive(Clone, Debug, Default)]
pub struct LogisticDraw {
    pub index: usize,
    pub noise: Vec<f64>,
}

impl Logistic {
    pub fn new(spec: LogisticSpec) -> Result<Self, OracleError> {
        if spec.shards.len() != spec.sigmas.len() {
            return Err(OracleError::Dimension(format!(
                "{} shards but {} sigmas",
                spec.shards.len(),
                spec.sigmas.len()
            )));
        }
        if spec.shards.is_empty() {
            return Err(OracleError::Dimension("no nodes".into()));
        }
        for (i, shard) in spec.shards.iter().enumerate() {
            if shard.is_empty() {
                return Err(OracleError::EmptyShard { node: i });
            }
            for (row, label) in shard {
                if row.indices.iter().any(|&k| k as usize >= spec.dim) {
                    return Err(OracleError::Dimension(format!(
                        "node {i} has a feature index beyond dim {}",
                        spec.dim
                    )));
                }
                if label.abs() != 1.0 {
                    return Err(OracleError::InvalidParameter(format!(
                        "label {label} at node {i}"
                    )));
                }
            }
        }
        if !(spec.reg >= 0.0) || spec.sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(OracleError::InvalidParameter(
                "regularization and sigmas must be non-negative".into(),
            ));
        }
        Ok(Logistic { spec })
    }

    pub fn spec(&self) -> &LogisticSpec {
        &self.spec
    }

    /// Upper bound on the smoothness of `f_i`: `¼ λ_max((1/N_i) Σ a aᵀ) + 2r`.
    pub fn local_smoothness(&self, node: usize) -> f64 {
        0.25 * gram_lambda_max(self.spec.dim, &self.spec.shards[node]) + 2.0 * self.spec.reg
    }

    /// Largest local smoothness bound; valid for `f` and every `f_i`.
    pub fn smoothness(&self) -> f64 {
        (0..self.spec.shards.len())
            .map(|i| self.local_smoothness(i))
            .fold(0.0, f64::max)
    }

    /// Bound on the mean-squared smoothness of the sampled gradients:
    /// `max_i √(mean_j (¼‖a_ij‖² + 2r)²)`. The additive noise cancels in
    /// gradient differences.
    pub fn mean_squared_smoothness(&self) -> f64 {
        let r2 = 2.0 * self.spec.reg;
        self.spec
            .shards
            .iter()
            .map(|shard| {
                let ms = shard
                    .iter()
                    .map(|(row, _)| {
                        let l = 0.25 * row.norm_sq() + r2;
                        l * l
                    })
                    .sum::<f64>()
                    / shard.len() as f64;
                ms.sqrt()
            })
            .fold(0.0, f64::max)
    }

    fn add_reg_grad(&self, x: &[f64], out: &mut [f64]) {
        let r = self.spec.reg;
        if r == 0.0 {
            return;
        }
        for (o, &v) in out.iter_mut().zip(x) {
            let s = 1.0 + v * v;
            *o += 2.0 * r * v / (s * s);
        }
    }

    fn add_loss_grad(row: &SparseRow, label: f64, x: &[f64], weight: f64, out: &mut [f64]) {
        let coef = -label * sigmoid(-label * row.dot(x)) * weight;
        for (&k, v) in row.indices.iter().zip(&row.values) {
            out[k as usize] += coef * v;
        }
    }
}

/// Power iteration for the top eigenvalue of `(1/N) Σ a aᵀ`.
fn gram_lambda_max(dim: usize, shard: &[(SparseRow, f64)]) -> f64 {
    if dim == 0 {
        return 0.0;
    }
    let n = shard.len() as f64;
    let mut v: Vec<f64> = (0..dim).map(|k| 1.0 + (k % 7) as f64 * 0.01).collect();
    let mut lambda = 0.0;
    for _ in 0..500 {
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|a| *a /= norm);
        let mut w = vec![0.0; dim];
        for (row, _) in shard {
            let c = row.dot(&v) / n;
            for (&k, a) in row.indices.iter().zip(&row.values) {
                w[k as usize] += c * a;
            }
        }
        let next: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        v = w;
        if (next - lambda).abs() <= 1e-10 * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    // Rayleigh quotients approach λ_max from below; pad the bound slightly
    lambda * (1.0 + 1e-6)
}

impl Problem for Logistic {
    type Draw = LogisticDraw;

    fn nodes(&self) -> usize {
        self.spec.shards.len()
    }

    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn local_value(&self, node: usize, x: &[f64]) -> f64 {
        let shard = &self.spec.shards[node];
        let loss: f64 = shard
            .iter()
            .map(|(row, b)| softplus(-b * row.dot(x)))
            .sum::<f64>()
            / shard.len() as f64;
        let reg: f64 = x.iter().map(|v| v * v / (1.0 + v * v)).sum();
        loss + self.spec.reg * reg
    }

    fn local_grad(&self, node: usize, x: &[f64], out: &mut [f64]) {
        let shard = &self.spec.shards[node];
        out.iter_mut().for_each(|v| *v = 0.0);
        let w = 1.0 / shard.len() as f64;
        for (row, b) in shard {
            Self::add_loss_grad(row, *b, x, w, out);
        }
        self.add_reg_grad(x, out);
    }

    fn draw(&self, node: usize, rng: &mut NodeRng, draw: &mut LogisticDraw) {
        draw.index = rng.random_range(0..self.spec.shards[node].len());
        fill_noise(rng, self.spec.sigmas[node], &mut draw.noise, self.spec.dim);
    }

    fn stochastic_grad(&self, node: usize, x: &[f64], draw: &LogisticDraw, out: &mut [f64]) {
        let (row, b) = &self.spec.shards[node][draw.index];
        out.copy_from_slice(&draw.noise);
        Self::add_loss_grad(row, *b, x, 1.0, out);
        self.add_reg_grad(x, out);
    }
}

pub fn logistic_suite(spec: LogisticSpec) -> Result<OracleSuite<Logistic>, OracleError> {
    Ok(OracleSuite::new(Logistic::new(spec)?))
}
