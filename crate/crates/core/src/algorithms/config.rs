//! Run configurations and the theorem-prescribed schedules.

use serde::{Deserialize, Serialize};

use super::AlgorithmError;
use crate::allocation::{theorem1_batches, theorem3_schedule, AllocationRule, NoiseProfile};

/// Communication rounds of the first FastMix pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialRounds {
    Fixed(usize),
    /// `R0 = ⌈factor · ln(1 + coef · Σ_i ‖y_i^0‖²)⌉`, resolved once `y^0` is
    /// sampled.
    Adaptive {
        factor: f64,
        coef: f64,
    },
}

impl InitialRounds {
    pub fn resolve(&self, y0_sq_norm: f64) -> usize {
        match *self {
            InitialRounds::Fixed(r) => r,
            InitialRounds::Adaptive { factor, coef } => log_rounds(factor, 1.0 + coef * y0_sq_norm),
        }
    }
}

/// Parameters of gradient tracking with fixed per-node batches.
#[derive(Clone, Debug, PartialEq)]
pub struct DnssConfig {
    pub eta: f64,
    pub batches: Vec<u64>,
    pub iterations: usize,
    pub initial_rounds: InitialRounds,
    pub rounds: usize,
}

/// Parameters of the probabilistic variance-reduced method.
#[derive(Clone, Debug, PartialEq)]
pub struct DnssVrConfig {
    pub eta: f64,
    pub batches: Vec<u64>,
    pub minibatch: u64,
    /// Probability of a large-batch iteration.
    pub p: f64,
    /// Per-node probability of a recursive update in the small-batch branch.
    pub q: f64,
    pub iterations: usize,
    pub initial_rounds: InitialRounds,
    pub rounds: usize,
}

fn check_common(
    eta: f64,
    batches: &[u64],
    iterations: usize,
    m: usize,
) -> Result<(), AlgorithmError> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(AlgorithmError::InvalidConfig(format!(
            "eta must be positive, got {eta}"
        )));
    }
    if batches.len() != m {
        return Err(AlgorithmError::InvalidConfig(format!(
            "{} batch sizes for {m} nodes",
            batches.len()
        )));
    }
    if let Some(i) = batches.iter().position(|b| *b == 0) {
        return Err(AlgorithmError::InvalidConfig(format!(
            "batch at node {i} is zero"
        )));
    }
    if iterations == 0 {
        return Err(AlgorithmError::InvalidConfig(
            "iterations must be >= 1".into(),
        ));
    }
    Ok(())
}

fn check_initial(r: &InitialRounds) -> Result<(), AlgorithmError> {
    if let InitialRounds::Adaptive { factor, coef } = *r {
        if !(factor >= 0.0 && factor.is_finite() && coef >= 0.0 && coef.is_finite()) {
            return Err(AlgorithmError::InvalidConfig(format!(
                "adaptive initial rounds need finite factor, coef >= 0, got {factor}, {coef}"
            )));
        }
    }
    Ok(())
}

impl DnssConfig {
    pub fn validate(&self, m: usize) -> Result<(), AlgorithmError> {
        check_common(self.eta, &self.batches, self.iterations, m)?;
        check_initial(&self.initial_rounds)
    }
}

impl DnssVrConfig {
    pub fn validate(&self, m: usize) -> Result<(), AlgorithmError> {
        check_common(self.eta, &self.batches, self.iterations, m)?;
        check_initial(&self.initial_rounds)?;
        for (name, v) in [("p", self.p), ("q", self.q)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(AlgorithmError::InvalidConfig(format!(
                    "{name} must lie in (0, 1], got {v}"
                )));
            }
        }
        if self.minibatch == 0 {
            return Err(AlgorithmError::InvalidConfig(
                "minibatch must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// The same skeleton with `p = 1`, i.e. plain large-batch tracking.
    pub fn as_dnss(&self) -> DnssConfig {
        DnssConfig {
            eta: self.eta,
            batches: self.batches.clone(),
            iterations: self.iterations,
            initial_rounds: self.initial_rounds,
            rounds: self.rounds,
        }
    }
}

/// Problem constants feeding a theorem schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoremInputs {
    /// Initial gap `f(x0) − f*` (or an upper bound).
    pub delta: f64,
    /// `L` for the plain method, `L̄` (mean-squared smoothness) for the
    /// variance-reduced one.
    pub smoothness: f64,
    pub eps: f64,
    pub chi: f64,
    /// Multiplies every round count before rounding up; 1 is exact.
    pub rounds_scale: f64,
}

impl TheoremInputs {
    fn validate(&self) -> Result<(), AlgorithmError> {
        for (name, v) in [
            ("delta", self.delta),
            ("smoothness", self.smoothness),
            ("eps", self.eps),
            ("chi", self.chi),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(AlgorithmError::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.chi > 1.0 {
            return Err(AlgorithmError::InvalidConfig(format!(
                "chi must be <= 1, got {}",
                self.chi
            )));
        }
        if !(self.rounds_scale >= 0.0 && self.rounds_scale.is_finite()) {
            return Err(AlgorithmError::InvalidConfig(
                "rounds_scale must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// `(2 + √2) / (2√χ)` times the rounds scale.
    fn round_factor(&self) -> f64 {
        self.rounds_scale * (2.0 + std::f64::consts::SQRT_2) / (2.0 * self.chi.sqrt())
    }
}

/// Largest admissible iteration count of a theorem schedule.
pub const MAX_ITERATIONS: f64 = 1e8;

fn log_rounds(factor: f64, arg: f64) -> usize {
    (factor * arg.ln()).ceil().max(0.0) as usize
}

fn iteration_count(t: f64) -> Result<usize, AlgorithmError> {
    if !(t <= MAX_ITERATIONS) {
        return Err(AlgorithmError::InvalidConfig(format!(
            "schedule asks for {t:.3e} iterations, above the cap of {MAX_ITERATIONS:.0e}"
        )));
    }
    Ok((t as usize).max(1))
}

/// `R_t` of the plain method: `⌈(2+√2)/(2√χ) · ln(14 max{9m⁴, 70m², 6m³})⌉`.
pub fn theorem1_rounds(m: usize, chi: f64, rounds_scale: f64) -> usize {
    let mf = m as f64;
    let worst = (9.0 * mf.powi(4)).max(70.0 * mf * mf).max(6.0 * mf.powi(3));
    log_rounds(
        rounds_scale * (2.0 + std::f64::consts::SQRT_2) / (2.0 * chi.sqrt()),
        14.0 * worst,
    )
}

/// `R_t` of the variance-reduced method: `⌈(2+√2)/(2√χ) · ln(1344 c m²)⌉`,
/// `c = max{1/(bq), 1}`.
pub fn theorem3_rounds(m: usize, chi: f64, bq: f64, rounds_scale: f64) -> usize {
    let c = (1.0 / bq).max(1.0);
    log_rounds(
        rounds_scale * (2.0 + std::f64::consts::SQRT_2) / (2.0 * chi.sqrt()),
        1344.0 * c * (m * m) as f64,
    )
}

fn initial(factor: f64, coef: f64, y0_sq_norm: Option<f64>) -> InitialRounds {
    let r = InitialRounds::Adaptive { factor, coef };
    match y0_sq_norm {
        Some(v) => InitialRounds::Fixed(r.resolve(v)),
        None => r,
    }
}

/// `η = 1/(2L)`, `T = ⌈32ΔL/ε²⌉`, `B_i = ⌈16σ_iΣσ_j/(m²ε²)⌉`, and the
/// explicit round counts. `R0` depends on `Σ‖y_i^0‖²`; when it is not given
/// the run resolves it after the first sampling step.
pub fn theorem1_config(
    inputs: &TheoremInputs,
    profile: &NoiseProfile,
    y0_sq_norm: Option<f64>,
) -> Result<DnssConfig, AlgorithmError> {
    skeleton_config(
        inputs,
        theorem1_batches(profile, inputs.eps)?.batches,
        y0_sq_norm,
    )
}

/// Step size, horizon and rounds of [`theorem1_config`] with another allocator; the
/// allocator is evaluated at `ε/4`, matching the 16× factor of [`theorem1_batches`].
pub fn baseline_config(
    rule: AllocationRule,
    inputs: &TheoremInputs,
    profile: &NoiseProfile,
    y0_sq_norm: Option<f64>,
) -> Result<DnssConfig, AlgorithmError> {
    skeleton_config(
        inputs,
        rule.plan(profile, inputs.eps / 4.0)?.batches,
        y0_sq_norm,
    )
}

fn skeleton_config(
    inputs: &TheoremInputs,
    batches: Vec<u64>,
    y0_sq_norm: Option<f64>,
) -> Result<DnssConfig, AlgorithmError> {
    inputs.validate()?;
    let m = batches.len();
    let l = inputs.smoothness;
    let eps2 = inputs.eps * inputs.eps;
    let eta = 1.0 / (2.0 * l);
    let iterations = iteration_count((32.0 * inputs.delta * l / eps2).ceil())?;
    let coef = 448.0 * m as f64 * l * l * eta * eta / (iterations as f64 * eps2);
    Ok(DnssConfig {
        eta,
        batches,
        iterations,
        initial_rounds: initial(inputs.round_factor(), coef, y0_sq_norm),
        rounds: theorem1_rounds(m, inputs.chi, inputs.rounds_scale),
    })
}

/// `η = 1/(48L̄)`, `T = ⌈384ΔL̄/ε² + 2/p⌉` and the schedule of
/// [`theorem3_schedule`]; `batch_constant` overrides its large-batch factor.
pub fn theorem3_config(
    inputs: &TheoremInputs,
    profile: &NoiseProfile,
    y0_sq_norm: Option<f64>,
    batch_constant: Option<f64>,
) -> Result<DnssVrConfig, AlgorithmError> {
    inputs.validate()?;
    let sched = theorem3_schedule(profile, inputs.eps, batch_constant)?;
    let m = profile.nodes();
    let lbar = inputs.smoothness;
    let eps2 = inputs.eps * inputs.eps;
    let iterations = iteration_count((384.0 * inputs.delta * lbar / eps2 + 2.0 / sched.p).ceil())?;
    let coef = 16.0 * m as f64 / (iterations as f64 * eps2);
    let bq = sched.minibatch as f64 * sched.q;
    Ok(DnssVrConfig {
        eta: 1.0 / (48.0 * lbar),
        batches: sched.batches.batches,
        minibatch: sched.minibatch,
        p: sched.p,
        q: sched.q,
        iterations,
        initial_rounds: initial(inputs.round_factor(), coef, y0_sq_norm),
        rounds: theorem3_rounds(m, inputs.chi, bq, inputs.rounds_scale),
    })
}

/// Gradient-tracking SGD with one gossip round per mix and equal batches.
pub fn dsgt_config(eta: f64, batch: u64, m: usize, iterations: usize) -> DnssConfig {
    DnssConfig {
        eta,
        batches: vec![batch; m],
        iterations,
        initial_rounds: InitialRounds::Fixed(1),
        rounds: 1,
    }
}
