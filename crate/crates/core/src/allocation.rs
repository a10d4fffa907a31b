//! Per-node batch sizes from heterogeneous gradient-noise levels.
//!
//! With `B_i` samples at node `i`, the averaged gradient estimator has mean
//! squared error at most `(1/m²) Σ σ_i² / B_i`. Minimizing `Σ B_i` subject to
//! that bound being `≤ ε²` gives `B_i⋆ = σ_i Σ_j σ_j / (m² ε²)` with total
//! `σ̄_AM² / ε²`; the baselines here spend `σ̄_QM² / ε²` or `σ_max² / ε²`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::norm_sq;
use crate::oracles::{node_rngs, OracleSuite, Problem};
use crate::par::{self, Execution};

#[derive(Debug, Error)]
pub enum AllocationError {
    #[error("sigma at node {node} must be positive for the optimal plan, got {sigma}")]
    NonPositiveSigma { node: usize, sigma: f64 },
    #[error("sigma at node {node} is negative or not finite: {sigma}")]
    InvalidSigma { node: usize, sigma: f64 },
    #[error("target accuracy must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("batch size at node {node} must be positive, got {batch}")]
    NonPositiveBatch { node: usize, batch: f64 },
    #[error("{sigmas} sigmas but {batches} batch sizes")]
    LengthMismatch { sigmas: usize, batches: usize },
    #[error("pilot batch must contain at least 2 samples, got {0}")]
    PilotTooSmall(usize),
    #[error("noise profile is empty")]
    Empty,
}

/// Per-node noise standard deviations `σ_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile(Vec<f64>);

impl NoiseProfile {
    /// Accepts any nonnegative finite values.
    pub fn new(sigmas: Vec<f64>) -> Result<Self, AllocationError> {
        if sigmas.is_empty() {
            return Err(AllocationError::Empty);
        }
        if let Some((node, &sigma)) = sigmas
            .iter()
            .enumerate()
            .find(|(_, s)| !(s.is_finite() && **s >= 0.0))
        {
            return Err(AllocationError::InvalidSigma { node, sigma });
        }
        Ok(NoiseProfile(sigmas))
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.0
    }

    pub fn nodes(&self) -> usize {
        self.0.len()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }

    pub fn stats(&self) -> MeanStats {
        mean_stats(self)
    }
}

/// Real-valued plan, as produced by the closed-form optimum.
#[derive(Clone, Debug, PartialEq)]
pub struct AllocationPlan {
    pub batches: Vec<f64>,
    pub total: f64,
    pub mse_bound: f64,
}

/// Integer plan with every `B_i ≥ 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub batches: Vec<u64>,
}

impl BatchPlan {
    pub fn total(&self) -> u64 {
        self.batches.iter().sum()
    }

    pub fn mse_bound(&self, profile: &NoiseProfile) -> f64 {
        let b: Vec<f64> = self.batches.iter().map(|&b| b as f64).collect();
        mse_bound(profile, &b).expect("integer plans are positive and sized to the profile")
    }
}

/// Arithmetic, quadratic and 2/3-power means of the `σ_i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanStats {
    pub am: f64,
    pub qm: f64,
    pub p23: f64,
}

pub fn mean_stats(profile: &NoiseProfile) -> MeanStats {
    let s = profile.sigmas();
    let m = s.len() as f64;
    MeanStats {
        am: s.iter().sum::<f64>() / m,
        qm: (s.iter().map(|v| v * v).sum::<f64>() / m).sqrt(),
        p23: (s.iter().map(|v| v.powf(2.0 / 3.0)).sum::<f64>() / m).powf(1.5),
    }
}

fn check_eps(eps: f64) -> Result<(), AllocationError> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(AllocationError::InvalidEpsilon(eps))
    }
}

/// `(1/m²) Σ σ_i² / B_i`.
pub fn mse_bound(profile: &NoiseProfile, batches: &[f64]) -> Result<f64, AllocationError> {
    if profile.nodes() != batches.len() {
        return Err(AllocationError::LengthMismatch {
            sigmas: profile.nodes(),
            batches: batches.len(),
        });
    }
    let m = batches.len() as f64;
    let mut acc = 0.0;
    for (node, (&s, &b)) in profile.sigmas().iter().zip(batches).enumerate() {
        if !(b > 0.0) {
            return Err(AllocationError::NonPositiveBatch { node, batch: b });
        }
        acc += s * s / b;
    }
    Ok(acc / (m * m))
}

/// Closed-form minimizer `B_i = σ_i Σ_j σ_j / (m² ε²)`.
pub fn optimal_batches(
    profile: &NoiseProfile,
    eps: f64,
) -> Result<AllocationPlan, AllocationError> {
    check_eps(eps)?;
    if let Some((node, &sigma)) = profile
        .sigmas()
        .iter()
        .enumerate()
        .find(|(_, s)| **s <= 0.0)
    {
        return Err(AllocationError::NonPositiveSigma { node, sigma });
    }
    let m = profile.nodes() as f64;
    let sum = profile.sum();
    let denom = m * m * eps * eps;
    let batches: Vec<f64> = profile.sigmas().iter().map(|s| s * sum / denom).collect();
    let mse = mse_bound(profile, &batches)?;
    Ok(AllocationPlan {
        total: batches.iter().sum(),
        batches,
        mse_bound: mse,
    })
}

fn ceil_at_least_one(v: f64) -> u64 {
    (v.ceil() as u64).max(1)
}

/// Optimal allocation scaled by `scale` and rounded up:
/// `B_i = max{⌈scale · σ_i Σ_j σ_j / (m² ε²)⌉, 1}`. Zero `σ_i` are allowed.
pub fn scaled_optimal_batches(
    profile: &NoiseProfile,
    eps: f64,
    scale: f64,
) -> Result<BatchPlan, AllocationError> {
    check_eps(eps)?;
    let m = profile.nodes() as f64;
    let sum = profile.sum();
    let denom = m * m * eps * eps;
    Ok(BatchPlan {
        batches: profile
            .sigmas()
            .iter()
            .map(|s| ceil_at_least_one(scale * s * sum / denom))
            .collect(),
    })
}

/// `B_i = ⌈16 σ_i Σ_j σ_j / (m² ε²)⌉`, clamped to at least one.
pub fn theorem1_batches(profile: &NoiseProfile, eps: f64) -> Result<BatchPlan, AllocationError> {
    scaled_optimal_batches(profile, eps, 16.0)
}

/// Batch and probability parameters of the variance-reduced method.
#[derive(Clone, Debug, PartialEq)]
pub struct VrSchedule {
    pub batches: BatchPlan,
    pub minibatch: u64,
    pub q: f64,
    pub p: f64,
}

/// Default large-batch constant of the variance-reduced schedule.
pub const VR_BATCH_CONSTANT: f64 = 32.0;

/// `B_i = max{⌈c σ_i Σσ_j/(m²ε²)⌉, 1}`, `b = ⌈√ΣB_i / m⌉`, `q = √ΣB_i/(b m)`,
/// `p = b q / (b q + ΣB_i / m)`, with `c` = [`VR_BATCH_CONSTANT`] unless
/// overridden.
pub fn theorem3_schedule(
    profile: &NoiseProfile,
    eps: f64,
    batch_constant: Option<f64>,
) -> Result<VrSchedule, AllocationError> {
    let batches =
        scaled_optimal_batches(profile, eps, batch_constant.unwrap_or(VR_BATCH_CONSTANT))?;
    let m = profile.nodes() as f64;
    let total = batches.total() as f64;
    let root = total.sqrt();
    let minibatch = ((root / m).ceil() as u64).max(1);
    let q = root / (minibatch as f64 * m);
    let bq = minibatch as f64 * q;
    let p = bq / (bq + total / m);
    Ok(VrSchedule {
        batches,
        minibatch,
        q,
        p,
    })
}

/// Worst-case allocator: `B_i = ⌈σ_max² / (m ε²)⌉` at every node.
pub fn uniform_batches(profile: &NoiseProfile, eps: f64) -> Result<BatchPlan, AllocationError> {
    check_eps(eps)?;
    let m = profile.nodes();
    let s = profile.max();
    let b = ceil_at_least_one(s * s / (m as f64 * eps * eps));
    Ok(BatchPlan {
        batches: vec![b; m],
    })
}

/// Quadratic-mean allocator: `B_i = ⌈σ̄_QM² / (m ε²)⌉` at every node.
pub fn qm_batches(profile: &NoiseProfile, eps: f64) -> Result<BatchPlan, AllocationError> {
    check_eps(eps)?;
    let m = profile.nodes();
    // σ̄_QM² directly; squaring the root would perturb the ceiling
    let qm_sq = profile.sigmas().iter().map(|s| s * s).sum::<f64>() / m as f64;
    let b = ceil_at_least_one(qm_sq / (m as f64 * eps * eps));
    Ok(BatchPlan {
        batches: vec![b; m],
    })
}

/// Which allocator a gradient-tracking run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationRule {
    /// Node-specific `B_i ∝ σ_i`.
    Optimal,
    /// Equal batches sized by the quadratic mean.
    QuadraticMean,
    /// Equal batches sized by the largest `σ_i`.
    WorstCase,
}

impl AllocationRule {
    /// Integer plan meeting MSE `ε²`, rounded up.
    pub fn plan(self, profile: &NoiseProfile, eps: f64) -> Result<BatchPlan, AllocationError> {
        match self {
            AllocationRule::Optimal => scaled_optimal_batches(profile, eps, 1.0),
            AllocationRule::QuadraticMean => qm_batches(profile, eps),
            AllocationRule::WorstCase => uniform_batches(profile, eps),
        }
    }
}

/// Estimates each node's `σ_i` from `n_pilot` stochastic gradients at `x0`:
/// `σ̂_i² = (1/(n−1)) Σ_j ‖g_j − ḡ‖²`. Charges `n_pilot` samples per node.
pub fn estimate_sigmas<P: Problem>(
    suite: &OracleSuite<P>,
    x0: &[f64],
    n_pilot: usize,
    seed: u64,
    exec: Execution,
) -> Result<NoiseProfile, AllocationError> {
    if n_pilot < 2 {
        return Err(AllocationError::PilotTooSmall(n_pilot));
    }
    let d = suite.dim();
    let mut rngs = node_rngs(seed, suite.nodes());
    let mut out = vec![0.0; suite.nodes()];
    par::for_each_node(exec, &mut out, 1, &mut rngs, |node, slot, rng| {
        let mut samples = vec![0.0; n_pilot * d];
        for chunk in samples.chunks_mut(d.max(1)).take(n_pilot) {
            suite.sample(node, x0, rng, &mut chunk[..d]);
        }
        let mut mean = vec![0.0; d];
        for chunk in samples.chunks(d.max(1)).take(n_pilot) {
            for (m, v) in mean.iter_mut().zip(&chunk[..d]) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n_pilot as f64);
        let mut diff = vec![0.0; d];
        let ss: f64 = samples
            .chunks(d.max(1))
            .take(n_pilot)
            .map(|chunk| {
                for ((o, v), m) in diff.iter_mut().zip(&chunk[..d]).zip(&mean) {
                    *o = v - m;
                }
                norm_sq(&diff)
            })
            .sum();
        slot[0] = (ss / (n_pilot - 1) as f64).sqrt();
    });
    NoiseProfile::new(out)
}
