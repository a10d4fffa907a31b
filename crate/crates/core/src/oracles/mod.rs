//! Problems and per-node stochastic first-order oracles.
//!
//! A [`Problem`] describes the local objectives `f_i` and how one stochastic
//! gradient `g_i(x; ξ)` is drawn. [`OracleSuite`] wraps a problem with
//! per-node sample counters; every stochastic gradient evaluation goes
//! through it, so the counters are the sample-complexity ledger.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

mod hard;
mod logistic;
mod quadratic;

pub use hard::{
    chain_grad, chain_stochastic_grad, chain_value, distributed_hard_instance, phi, phi_prime,
    prog0, psi, psi_prime, Block, HardInstance, HardInstanceParams, CHAIN_DELTA0,
    CHAIN_GRAD_LIPSCHITZ, CHAIN_VARIANCE_A,
};
pub use logistic::{logistic_suite, Logistic, LogisticDraw, LogisticSpec, DEFAULT_REGULARIZATION};
pub use quadratic::{quadratic_suite, Quadratic, QuadraticParams, QuadraticSpec};

/// RNG used for every stochastic draw.
pub type NodeRng = ChaCha8Rng;

/// ChaCha stream reserved for the network-wide coin.
const GLOBAL_STREAM: u64 = 0;
/// ChaCha stream reserved for choosing the reported output iterate.
const OUTPUT_STREAM: u64 = u64::MAX;

/// Independent per-node streams: node `i` uses stream `i + 1` of `seed`.
pub fn node_rngs(seed: u64, nodes: usize) -> Vec<NodeRng> {
    (0..nodes)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            rng
        })
        .collect()
}

/// Network-wide stream for draws made outside the node loop.
pub fn global_rng(seed: u64) -> NodeRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(GLOBAL_STREAM);
    rng
}

pub(crate) fn output_rng(seed: u64) -> NodeRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(OUTPUT_STREAM);
    rng
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("matrix of node {node} is not symmetric")]
    Asymmetric { node: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("node {node} has an empty data shard")]
    EmptyShard { node: usize },
    #[error("chain length at node {node} is {length}; decrease eps so every D_i >= 1")]
    ChainTooShort { node: usize, length: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Local objectives and their stochastic gradients.
pub trait Problem: Send + Sync {
    /// Randomness `ξ` behind one stochastic gradient. Reused across draws.
    type Draw: Default + Send;

    fn nodes(&self) -> usize;
    fn dim(&self) -> usize;
    fn local_value(&self, node: usize, x: &[f64]) -> f64;
    fn local_grad(&self, node: usize, x: &[f64], out: &mut [f64]);
    /// Draws `ξ` for `node`.
    fn draw(&self, node: usize, rng: &mut NodeRng, draw: &mut Self::Draw);
    /// `g_node(x; ξ)` for an already drawn `ξ`.
    fn stochastic_grad(&self, node: usize, x: &[f64], draw: &Self::Draw, out: &mut [f64]);
}

/// A problem plus monotone per-node sample counters.
#[derive(Debug)]
pub struct OracleSuite<P> {
    problem: P,
    counters: Vec<AtomicU64>,
}

impl<P: Problem> OracleSuite<P> {
    pub fn new(problem: P) -> Self {
        let counters = (0..problem.nodes()).map(|_| AtomicU64::new(0)).collect();
        OracleSuite { problem, counters }
    }

    pub fn problem(&self) -> &P {
        &self.problem
    }

    pub fn nodes(&self) -> usize {
        self.problem.nodes()
    }

    pub fn dim(&self) -> usize {
        self.problem.dim()
    }

    pub fn local_value(&self, node: usize, x: &[f64]) -> f64 {
        self.problem.local_value(node, x)
    }

    pub fn local_grad(&self, node: usize, x: &[f64], out: &mut [f64]) {
        self.problem.local_grad(node, x, out)
    }

    /// `f(x) = (1/m) Σ f_i(x)`.
    pub fn global_value(&self, x: &[f64]) -> f64 {
        let m = self.nodes();
        (0..m).map(|i| self.problem.local_value(i, x)).sum::<f64>() / m as f64
    }

    /// `∇f(x) = (1/m) Σ ∇f_i(x)`.
    pub fn global_grad(&self, x: &[f64], out: &mut [f64]) {
        let m = self.nodes();
        let mut buf = vec![0.0; self.dim()];
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..m {
            self.problem.local_grad(i, x, &mut buf);
            for (o, b) in out.iter_mut().zip(&buf) {
                *o += b;
            }
        }
        let inv = 1.0 / m as f64;
        out.iter_mut().for_each(|v| *v *= inv);
    }

    /// One stochastic gradient at `node`.
    pub fn sample(&self, node: usize, x: &[f64], rng: &mut NodeRng, out: &mut [f64]) {
        let mut draw = P::Draw::default();
        self.problem.draw(node, rng, &mut draw);
        self.problem.stochastic_grad(node, x, &draw, out);
        self.counters[node].fetch_add(1, Ordering::Relaxed);
    }

    /// Mean of `batch` i.i.d. stochastic gradients at `node`.
    pub fn sample_mean(
        &self,
        node: usize,
        x: &[f64],
        batch: u64,
        rng: &mut NodeRng,
        out: &mut [f64],
    ) {
        assert!(batch >= 1, "batch must be positive");
        let mut draw = P::Draw::default();
        let mut g = vec![0.0; out.len()];
        out.iter_mut().for_each(|v| *v = 0.0);
        for _ in 0..batch {
            self.problem.draw(node, rng, &mut draw);
            self.problem.stochastic_grad(node, x, &draw, &mut g);
            for (o, v) in out.iter_mut().zip(&g) {
                *o += v;
            }
        }
        let inv = 1.0 / batch as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        self.counters[node].fetch_add(batch, Ordering::Relaxed);
    }

    /// `Σ_j (g(x_new; ξ_j) − g(x_old; ξ_j))` over `batch` shared draws.
    /// Charges `2 · batch` evaluations.
    pub fn sample_difference(
        &self,
        node: usize,
        x_new: &[f64],
        x_old: &[f64],
        batch: u64,
        rng: &mut NodeRng,
        out: &mut [f64],
    ) {
        let mut draw = P::Draw::default();
        let mut g_new = vec![0.0; out.len()];
        let mut g_old = vec![0.0; out.len()];
        out.iter_mut().for_each(|v| *v = 0.0);
        for _ in 0..batch {
            self.problem.draw(node, rng, &mut draw);
            self.problem.stochastic_grad(node, x_new, &draw, &mut g_new);
            self.problem.stochastic_grad(node, x_old, &draw, &mut g_old);
            for ((o, a), b) in out.iter_mut().zip(&g_new).zip(&g_old) {
                *o += a - b;
            }
        }
        self.counters[node].fetch_add(2 * batch, Ordering::Relaxed);
    }

    pub fn samples(&self, node: usize) -> u64 {
        self.counters[node].load(Ordering::Relaxed)
    }

    pub fn sample_counts(&self) -> Vec<u64> {
        self.counters
            .iter()
            .map(|c| c.load(Ordering::Relaxed))
            .collect()
    }

    pub fn total_samples(&self) -> u64 {
        self.counters
            .iter()
            .map(|c| c.load(Ordering::Relaxed))
            .sum()
    }
}

/// Gaussian noise vector with i.i.d. coordinates of variance `σ²/d`, so that
/// `E‖noise‖² = σ²`.
pub(crate) fn fill_noise(rng: &mut NodeRng, sigma: f64, out: &mut Vec<f64>, dim: usize) {
    use rand_distr::{Distribution, StandardNormal};
    out.resize(dim, 0.0);
    if sigma == 0.0 {
        out.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let scale = sigma / (dim as f64).sqrt();
    for v in out.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = scale * z;
    }
}
