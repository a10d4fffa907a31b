//! Probability-`p` zero-chain `F_D` and its distributed block embedding.
//!
//! ```text
//! F_D(x) = −ψ(1)φ(x_1) + Σ_{i=2}^{D} [ψ(−x_{i−1})φ(−x_i) − ψ(x_{i−1})φ(x_i)]
//! ψ(t) = 0 for t ≤ ½, exp(1 − 1/(2t − 1)²) otherwise
//! φ(t) = ∫_{−∞}^t exp(−τ²/2) dτ
//! ```
//!
//! The stochastic gradient multiplies every coordinate beyond `prog0(x)` by
//! `ξ/p` with `ξ ~ Bernoulli(p)`, so a draw with `ξ = 0` reveals nothing new.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::{NodeRng, OracleError, OracleSuite, Problem};
use crate::allocation::NoiseProfile;

/// Gradient bound `a` of `F_D`: `‖∇F_D‖_∞ ≤ a`.
pub const CHAIN_VARIANCE_A: f64 = 23.0;
/// `F_D(0) − inf F_D ≤ Δ0 · D`.
pub const CHAIN_DELTA0: f64 = 12.0;
/// Lipschitz constant `ℓ1` of `∇F_D`.
pub const CHAIN_GRAD_LIPSCHITZ: f64 = 152.0;

/// Largest total dimension a distributed instance may allocate.
const MAX_DIM: usize = 1 << 28;

pub fn psi(t: f64) -> f64 {
    if t <= 0.5 {
        0.0
    } else {
        let u = 2.0 * t - 1.0;
        (1.0 - 1.0 / (u * u)).exp()
    }
}

pub fn psi_prime(t: f64) -> f64 {
    if t <= 0.5 {
        0.0
    } else {
        let u = 2.0 * t - 1.0;
        psi(t) * 4.0 / (u * u * u)
    }
}

/// `φ(t) = √(π/2) (1 + erf(t/√2))`.
pub fn phi(t: f64) -> f64 {
    (std::f64::consts::PI / 2.0).sqrt() * (1.0 + libm::erf(t / std::f64::consts::SQRT_2))
}

pub fn phi_prime(t: f64) -> f64 {
    (-0.5 * t * t).exp()
}

/// Largest 1-based index with a nonzero coordinate; 0 for the zero vector.
pub fn prog0(x: &[f64]) -> usize {
    x.iter().rposition(|v| *v != 0.0).map_or(0, |k| k + 1)
}

/// `F_D(x)` with `D = x.len()`.
pub fn chain_value(x: &[f64]) -> f64 {
    let Some(&first) = x.first() else {
        return 0.0;
    };
    let mut v = -psi(1.0) * phi(first);
    for w in x.windows(2) {
        v += psi(-w[0]) * phi(-w[1]) - psi(w[0]) * phi(w[1]);
    }
    v
}

/// `∇F_D(x)`.
pub fn chain_grad(x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for j in 0..d {
        let mut g = if j == 0 {
            -psi(1.0) * phi_prime(x[0])
        } else {
            -psi(-x[j - 1]) * phi_prime(-x[j]) - psi(x[j - 1]) * phi_prime(x[j])
        };
        if j + 1 < d {
            g += -psi_prime(-x[j]) * phi(-x[j + 1]) - psi_prime(x[j]) * phi(x[j + 1]);
        }
        out[j] = g;
    }
}

/// `G_D(x, ξ; p)` for a drawn `ξ`.
pub fn chain_stochastic_grad(x: &[f64], xi: bool, p: f64, out: &mut [f64]) {
    chain_grad(x, out);
    let k = prog0(x);
    let factor = if xi { 1.0 / p } else { 0.0 };
    let start = k.min(out.len());
    for v in out[start..].iter_mut() {
        *v *= factor;
    }
}

/// Node `i` owns coordinates `offset .. offset + len` and evaluates
/// `value_scale · F_len(x_block / lambda)` with success probability `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub offset: usize,
    pub len: usize,
    pub lambda: f64,
    pub p: f64,
    /// Multiplier of `F`; the gradient multiplier is `value_scale / lambda`.
    pub value_scale: f64,
}

#[derive(Clone, Debug)]
pub struct HardInstanceParams {
    pub smoothness: f64,
    pub eps: f64,
    /// Initial gap budget `Δ`.
    pub delta: f64,
    pub sigmas: Vec<f64>,
    /// Per-node shares `c_i` of the sample budget.
    pub shares: Vec<f64>,
}

#[derive(Debug)]
pub struct HardInstance {
    dim: usize,
    blocks: Vec<Block>,
    successes: Vec<AtomicU64>,
}

impl HardInstance {
    fn from_blocks(blocks: Vec<Block>) -> Self {
        let dim = blocks.last().map_or(0, |b| b.offset + b.len);
        let successes = blocks.iter().map(|_| AtomicU64::new(0)).collect();
        HardInstance {
            dim,
            blocks,
            successes,
        }
    }

    /// Single node with `f = F_D` and success probability `p`.
    pub fn chain(d: usize, p: f64) -> Result<Self, OracleError> {
        if d == 0 || !(p > 0.0 && p <= 1.0) {
            return Err(OracleError::InvalidParameter(format!(
                "need D >= 1 and p in (0, 1], got D={d}, p={p}"
            )));
        }
        Ok(Self::from_blocks(vec![Block {
            offset: 0,
            len: d,
            lambda: 1.0,
            p,
            value_scale: 1.0,
        }]))
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Number of draws at `node` that returned `ξ = 1`.
    pub fn successes(&self, node: usize) -> u64 {
        self.successes[node].load(Ordering::Relaxed)
    }

    /// `prog0` of the block owned by `node`.
    pub fn block_progress(&self, node: usize, x: &[f64]) -> usize {
        let b = &self.blocks[node];
        prog0(&x[b.offset..b.offset + b.len])
    }

    /// Variance bound `(value_scale/λ)² a² (1 − p)/p` of the node's oracle.
    pub fn variance_bound(&self, node: usize) -> f64 {
        let b = &self.blocks[node];
        let s = b.value_scale / b.lambda;
        s * s * CHAIN_VARIANCE_A * CHAIN_VARIANCE_A * (1.0 - b.p) / b.p
    }

    fn scaled_block(&self, node: usize, x: &[f64]) -> Vec<f64> {
        let b = &self.blocks[node];
        x[b.offset..b.offset + b.len]
            .iter()
            .map(|v| v / b.lambda)
            .collect()
    }

    fn write_block(&self, node: usize, grad: &[f64], out: &mut [f64]) {
        let b = &self.blocks[node];
        let s = b.value_scale / b.lambda;
        out.iter_mut().for_each(|v| *v = 0.0);
        for (o, g) in out[b.offset..b.offset + b.len].iter_mut().zip(grad) {
            *o = s * g;
        }
    }
}

impl Problem for HardInstance {
    type Draw = bool;

    fn nodes(&self) -> usize {
        self.blocks.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn local_value(&self, node: usize, x: &[f64]) -> f64 {
        self.blocks[node].value_scale * chain_value(&self.scaled_block(node, x))
    }

    fn local_grad(&self, node: usize, x: &[f64], out: &mut [f64]) {
        let z = self.scaled_block(node, x);
        let mut g = vec![0.0; z.len()];
        chain_grad(&z, &mut g);
        self.write_block(node, &g, out);
    }

    fn draw(&self, node: usize, rng: &mut NodeRng, draw: &mut bool) {
        let p = self.blocks[node].p;
        *draw = p >= 1.0 || rng.random_bool(p);
        if *draw {
            self.successes[node].fetch_add(1, Ordering::Relaxed);
        }
    }

    fn stochastic_grad(&self, node: usize, x: &[f64], draw: &bool, out: &mut [f64]) {
        let z = self.scaled_block(node, x);
        let mut g = vec![0.0; z.len()];
        chain_stochastic_grad(&z, *draw, self.blocks[node].p, &mut g);
        self.write_block(node, &g, out);
    }
}

/// Distributed instance `f_i(x) = (mLλ_i²/ℓ) F_{D_i}(U_i x / λ_i)` with
/// disjoint coordinate blocks as `U_i`.
///
/// `λ_i = (ℓ/(√m L)) √(σ_i/σ̄) 2ε`, `1/p_i = σ_i σ̄/(4 m a² ε²) + 1`,
/// `D_i = ⌊ΔL/(4Δ0 ℓ ε²) (σ̄/σ_i) m c_i⌋` where `σ̄` is the arithmetic mean.
pub fn distributed_hard_instance(
    params: &HardInstanceParams,
) -> Result<OracleSuite<HardInstance>, OracleError> {
    let HardInstanceParams {
        smoothness: l,
        eps,
        delta,
        sigmas,
        shares,
    } = params;
    let (l, eps, delta) = (*l, *eps, *delta);
    let m = sigmas.len();
    if m == 0 || shares.len() != m {
        return Err(OracleError::Dimension(format!(
            "{m} sigmas but {} shares",
            shares.len()
        )));
    }
    for (name, v) in [("smoothness", l), ("eps", eps), ("delta", delta)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(OracleError::InvalidParameter(format!(
                "{name} must be positive, got {v}"
            )));
        }
    }
    if shares.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
        return Err(OracleError::InvalidParameter(
            "shares must be positive".into(),
        ));
    }
    let profile = NoiseProfile::new(sigmas.clone())
        .map_err(|e| OracleError::InvalidParameter(e.to_string()))?;
    if sigmas.iter().any(|s| *s <= 0.0) {
        return Err(OracleError::InvalidParameter(
            "sigmas must be positive".into(),
        ));
    }
    let mf = m as f64;
    let am = profile.stats().am;
    let ell = CHAIN_GRAD_LIPSCHITZ;
    let a = CHAIN_VARIANCE_A;
    let mut blocks = Vec::with_capacity(m);
    let mut offset = 0usize;
    for (i, (&s, &c)) in sigmas.iter().zip(shares).enumerate() {
        let lambda = ell / (mf.sqrt() * l) * (s / am).sqrt() * 2.0 * eps;
        let p = 1.0 / (s * am / (4.0 * mf * a * a * eps * eps) + 1.0);
        let length =
            (delta * l / (4.0 * CHAIN_DELTA0 * ell * eps * eps) * (am / s) * mf * c).floor();
        if !(length >= 1.0) {
            return Err(OracleError::ChainTooShort { node: i, length });
        }
        if length > MAX_DIM as f64 || offset + length as usize > MAX_DIM {
            return Err(OracleError::InvalidParameter(format!(
                "total dimension exceeds {MAX_DIM}; increase eps"
            )));
        }
        let len = length as usize;
        blocks.push(Block {
            offset,
            len,
            lambda,
            p,
            value_scale: mf * l * lambda * lambda / ell,
        });
        offset += len;
    }
    Ok(OracleSuite::new(HardInstance::from_blocks(blocks)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::node_rngs;

    #[test]
    fn scalar_values() {
        assert_eq!(psi(1.0), 1.0);
        assert_eq!(psi(0.5), 0.0);
        assert_eq!(psi(-3.0), 0.0);
        assert!((phi(0.0) - 1.2533141373155003).abs() < 1e-15);
        assert_eq!(phi_prime(0.0), 1.0);
    }

    #[test]
    fn chain_at_origin() {
        for d in 1..5 {
            let x = vec![0.0; d];
            assert!((chain_value(&x) + phi(0.0)).abs() < 1e-15);
            let mut g = vec![9.0; d];
            chain_grad(&x, &mut g);
            assert_eq!(g[0], -1.0);
            assert!(g[1..].iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn prog0_examples() {
        assert_eq!(prog0(&[0.0; 3]), 0);
        assert_eq!(prog0(&[0.0, 1.5, 0.0]), 2);
        assert_eq!(prog0(&[]), 0);
    }

    #[test]
    fn unit_probability_is_exact() {
        let x = [0.9, -0.7, 0.0, 0.0];
        let (mut g, mut s) = ([0.0; 4], [0.0; 4]);
        chain_grad(&x, &mut g);
        chain_stochastic_grad(&x, true, 1.0, &mut s);
        assert_eq!(g, s);
        chain_stochastic_grad(&x, false, 0.5, &mut s);
        assert_eq!(&s[..2], &g[..2]);
        assert_eq!(s[2], 0.0);
    }

    #[test]
    fn single_node_gradient_at_origin() {
        let suite = distributed_hard_instance(&HardInstanceParams {
            smoothness: 2.0,
            eps: 0.1,
            delta: 1000.0,
            sigmas: vec![1.0],
            shares: vec![1.0],
        })
        .unwrap();
        let b = suite.problem().blocks()[0].clone();
        let mut g = vec![0.0; suite.dim()];
        suite.local_grad(0, &vec![0.0; suite.dim()], &mut g);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 2.0 * b.lambda / CHAIN_GRAD_LIPSCHITZ).abs() < 1e-15);
        assert_eq!(g[0], -norm);
    }

    #[test]
    fn short_chain_names_node() {
        let err = distributed_hard_instance(&HardInstanceParams {
            smoothness: 1.0,
            eps: 1.0,
            delta: 1.0,
            sigmas: vec![1.0, 5.0],
            shares: vec![0.5, 0.5],
        })
        .unwrap_err();
        assert!(
            matches!(err, OracleError::ChainTooShort { node: 0, .. }),
            "{err}"
        );
    }

    #[test]
    fn successes_are_counted() {
        let suite = OracleSuite::new(HardInstance::chain(3, 0.5).unwrap());
        let mut rng = node_rngs(2, 1).remove(0);
        let mut g = [0.0; 3];
        for _ in 0..200 {
            suite.sample(0, &[0.0; 3], &mut rng, &mut g);
        }
        let s = suite.problem().successes(0);
        assert!(s > 60 && s < 140, "{s}");
        assert_eq!(suite.samples(0), 200);
    }
}
