//! Chebyshev-accelerated gossip (FastMix) and its contraction bound.
//!
//! One FastMix call with `R` rounds runs the three-term recursion
//!
//! ```text
//! z_i^{r+1} = (1 + η) Σ_j W_ij z_j^r − η z_i^{r−1},   z^0 = z^{−1} = φ
//! η = (1 − √(1 − λ2²)) / (1 + √(1 − λ2²))
//! ```
//!
//! which preserves the row mean exactly and contracts the deviation from it
//! by at most `√14 · (1 − (1 − 1/√2)√χ)^R`.

use thiserror::Error;

use crate::matrix::NodeMatrix;
use crate::par::{self, Execution};
use crate::topology::MixingMatrix;

#[derive(Debug, Error)]
pub enum ConsensusError {
    #[error("node matrix has {rows} rows but the mixing matrix has {nodes} nodes")]
    DimensionMismatch { rows: usize, nodes: usize },
    #[error("spectral gap must lie in (0, 1], got {0}")]
    InvalidChi(f64),
    #[error("target contraction must be positive, got {0}")]
    InvalidTarget(f64),
}

/// Constants of the FastMix contraction bound `ρ(R, χ) = c1 (1 − c2 √χ)^R`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContractionParams {
    pub c1: f64,
    pub c2: f64,
}

impl Default for ContractionParams {
    fn default() -> Self {
        ContractionParams {
            c1: 14f64.sqrt(),
            c2: 1.0 - std::f64::consts::FRAC_1_SQRT_2,
        }
    }
}

impl ContractionParams {
    pub fn rho(&self, rounds: usize, chi: f64) -> f64 {
        self.c1 * (1.0 - self.c2 * chi.max(0.0).sqrt()).powi(rounds as i32)
    }
}

/// `ρ(R, χ)` with the default constants.
pub fn rho(rounds: usize, chi: f64) -> f64 {
    ContractionParams::default().rho(rounds, chi)
}

/// Momentum weight of the recursion. Negative `λ2` (round-off on complete
/// graphs) is clamped to zero.
pub fn momentum(lambda2: f64) -> f64 {
    let l = lambda2.clamp(0.0, 1.0);
    let root = (1.0 - l * l).sqrt();
    (1.0 - root) / (1.0 + root)
}

/// Smallest `R ≥ 0` with `ρ(R, χ) ≤ target_rho`.
pub fn rounds_for_target(chi: f64, target_rho: f64) -> Result<usize, ConsensusError> {
    if !(chi > 0.0 && chi <= 1.0) {
        return Err(ConsensusError::InvalidChi(chi));
    }
    if !(target_rho > 0.0) {
        return Err(ConsensusError::InvalidTarget(target_rho));
    }
    let params = ContractionParams::default();
    if target_rho >= params.c1 {
        return Ok(0);
    }
    let base = 1.0 - params.c2 * chi.sqrt();
    let mut r = ((target_rho / params.c1).ln() / base.ln()).ceil().max(0.0) as usize;
    // guard the ceiling against round-off on either side
    while r > 0 && params.rho(r - 1, chi) <= target_rho {
        r -= 1;
    }
    while params.rho(r, chi) > target_rho {
        r += 1;
    }
    Ok(r)
}

/// `‖Z − 1 z̄‖_F`.
pub fn consensus_error(z: &NodeMatrix) -> f64 {
    z.consensus_error()
}

/// Reusable FastMix operator with a communication-round counter.
///
/// Holds one scratch buffer the size of the mixed matrix; the caller's
/// matrix serves as the second buffer, so rounds do not allocate.
#[derive(Debug)]
pub struct FastMix<'w> {
    mixing: &'w MixingMatrix,
    eta: f64,
    prev: NodeMatrix,
    rounds_used: u64,
    exec: Execution,
}

impl<'w> FastMix<'w> {
    pub fn new(mixing: &'w MixingMatrix, exec: Execution) -> Self {
        FastMix {
            mixing,
            eta: momentum(mixing.lambda2()),
            prev: NodeMatrix::zeros(0, 0),
            rounds_used: 0,
            exec,
        }
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Total rounds performed so far; each `mix(_, R)` adds exactly `R`.
    pub fn rounds_used(&self) -> u64 {
        self.rounds_used
    }

    /// Replaces `z` with `FastMix(z, W, rounds)`.
    pub fn mix(&mut self, z: &mut NodeMatrix, rounds: usize) -> Result<(), ConsensusError> {
        let m = self.mixing.nodes();
        if z.rows() != m {
            return Err(ConsensusError::DimensionMismatch {
                rows: z.rows(),
                nodes: m,
            });
        }
        self.rounds_used += rounds as u64;
        if rounds == 0 {
            return Ok(());
        }
        if self.prev.rows() != z.rows() || self.prev.cols() != z.cols() {
            self.prev = z.clone();
        } else {
            self.prev.copy_from(z);
        }
        let d = z.cols();
        let eta = self.eta;
        let mixing = self.mixing;
        for _ in 0..rounds {
            // prev holds z^{r−1}; overwrite it row by row with z^{r+1}
            let cur = &*z;
            par::for_each_row(self.exec, self.prev.as_mut_slice(), d, |i, out| {
                for v in out.iter_mut() {
                    *v *= -eta;
                }
                for &(j, w) in mixing.sparse_row(i) {
                    let coef = (1.0 + eta) * w;
                    for (o, c) in out.iter_mut().zip(cur.row(j)) {
                        *o += coef * c;
                    }
                }
            });
            std::mem::swap(z, &mut self.prev);
        }
        Ok(())
    }
}

/// `FastMix(z0, W, rounds)` as a pure function.
pub fn fastmix(
    z0: &NodeMatrix,
    mixing: &MixingMatrix,
    rounds: usize,
) -> Result<NodeMatrix, ConsensusError> {
    let mut z = z0.clone();
    FastMix::new(mixing, Execution::Sequential).mix(&mut z, rounds)?;
    Ok(z)
}
