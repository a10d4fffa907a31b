//! Gradient-tracking methods with node-specific batches.
//!
//! Every method shares one skeleton. At iteration `t` each node forms a
//! gradient estimate `y_i^t`, then
//!
//! ```text
//! S^t     = FastMix(S^{t−1} + Y^t − Y^{t−1}, R_t)
//! X^{t+1} = FastMix(X^t − η S^t, R_t)
//! ```
//!
//! with `S^{−1} = Y^{−1} = 0` and `R_0` in place of `R_t` at `t = 0`. The
//! methods differ only in how `y_i^t` is formed:
//!
//! - [`dnss_run`]: the mean of `B_i` fresh samples.
//! - [`dnss_vr_run`]: a large batch with probability `p`, otherwise a
//!   recursive correction on a shared minibatch at each node with
//!   probability `q`.
//! - [`gt_sa_run`], [`dsgt_run`]: the [`dnss_run`] skeleton under baseline
//!   allocations and single-round gossip.

use rand::Rng;
use thiserror::Error;

use crate::allocation::AllocationError;
use crate::consensus::{ConsensusError, FastMix};
use crate::matrix::{norm_sq, NodeMatrix};
use crate::oracles::{global_rng, node_rngs, output_rng, OracleSuite, Problem};
use crate::par::{self, Execution};
use crate::topology::MixingMatrix;

mod config;

pub use config::{
    baseline_config, dsgt_config, theorem1_config, theorem1_rounds, theorem3_config,
    theorem3_rounds, DnssConfig, DnssVrConfig, InitialRounds, TheoremInputs, MAX_ITERATIONS,
};

#[derive(Debug, Error)]
pub enum AlgorithmError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
}

/// Run-level options shared by all methods.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Common starting point; zero when absent.
    pub x0: Option<Vec<f64>>,
    /// Stop before an iteration that could push the total past this count.
    pub max_samples: Option<u64>,
    /// Log a row every this many iterations (0 and 1 both mean every one).
    /// The last iteration is always logged.
    pub log_every: usize,
    pub exec: Execution,
}

/// One logged row, evaluated at the network average `x̄^t`.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordRow {
    pub iter: usize,
    /// Oracle-counter total when the row was logged.
    pub samples: u64,
    pub comm_rounds: u64,
    pub grad_norm_sq: f64,
    pub consensus_err: f64,
    pub f_value: f64,
}

/// Trajectory and output of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub rows: Vec<RecordRow>,
    /// Iterations completed; `x^0 … x^{iterations}` exist.
    pub iterations: usize,
    /// Stopped early because of the sample budget.
    pub truncated: bool,
    /// Stopped early because an iterate became non-finite.
    pub diverged: bool,
    /// Communication rounds used by the first FastMix pair.
    pub initial_rounds: usize,
    /// Index `τ` of the uniformly sampled output iterate.
    pub output_iter: usize,
    /// `‖∇f(x̄^τ)‖²`.
    pub output_grad_norm_sq: f64,
    /// `max_i ‖∇f(x_i^τ)‖²`.
    pub output_node_grad_norm_sq: f64,
    /// Network average of the final iterate.
    pub final_mean: Vec<f64>,
    pub samples_per_node: Vec<u64>,
}

impl RunRecord {
    pub fn total_samples(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.samples)
    }
}

/// State after iteration `t`, handed to observers.
#[derive(Debug)]
pub struct IterationView<'a> {
    pub t: usize,
    /// `X^t`, where `Y^t` was formed.
    pub x_prev: &'a NodeMatrix,
    /// `X^{t+1}`.
    pub x: &'a NodeMatrix,
    pub y: &'a NodeMatrix,
    pub s: &'a NodeMatrix,
    /// Whether iteration `t` used large batches everywhere.
    pub large_batch: bool,
    pub samples: u64,
    pub comm_rounds: u64,
}

/// Per-iteration observer.
pub type Observer<'o> = &'o mut dyn FnMut(&IterationView<'_>);

/// `y_prev + (1/(b q)) Σ_j (g(x_new; ξ_j) − g(x_old; ξ_j))` over `b` shared
/// draws, the recursive branch with `ω = 1`. Charges `2b` samples.
#[allow(clippy::too_many_arguments)]
pub fn recursive_estimate<P: Problem>(
    suite: &OracleSuite<P>,
    node: usize,
    x_new: &[f64],
    x_old: &[f64],
    y_prev: &[f64],
    minibatch: u64,
    q: f64,
    rng: &mut crate::oracles::NodeRng,
    out: &mut [f64],
) {
    suite.sample_difference(node, x_new, x_old, minibatch, rng, out);
    let scale = 1.0 / (minibatch as f64 * q);
    for (o, y) in out.iter_mut().zip(y_prev) {
        *o = y + scale * *o;
    }
}

/// How `Y^t` is formed.
enum Estimator<'c> {
    Batch {
        batches: &'c [u64],
    },
    Recursive {
        batches: &'c [u64],
        minibatch: u64,
        p: f64,
        q: f64,
    },
}

impl Estimator<'_> {
    fn batches(&self) -> &[u64] {
        match self {
            Estimator::Batch { batches } | Estimator::Recursive { batches, .. } => batches,
        }
    }

    /// Most samples one iteration can charge.
    fn max_cost(&self) -> u64 {
        match self {
            Estimator::Batch { batches } => batches.iter().sum(),
            Estimator::Recursive {
                batches, minibatch, ..
            } => batches
                .iter()
                .sum::<u64>()
                .max(2 * minibatch * batches.len() as u64),
        }
    }
}

struct Skeleton<'c> {
    eta: f64,
    iterations: usize,
    initial_rounds: InitialRounds,
    rounds: usize,
    estimator: Estimator<'c>,
}

/// Gradient tracking with per-node batches `B_i` (Algorithm "D-NSS").
pub fn dnss_run<P: Problem>(
    suite: &OracleSuite<P>,
    mixing: &MixingMatrix,
    cfg: &DnssConfig,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunRecord, AlgorithmError> {
    dnss_run_observed(suite, mixing, cfg, seed, opts, &mut |_| {})
}

pub fn dnss_run_observed<P: Problem>(
    suite: &OracleSuite<P>,
    mixing: &MixingMatrix,
    cfg: &DnssConfig,
    seed: u64,
    opts: &RunOptions,
    observer: Observer<'_>,
) -> Result<RunRecord, AlgorithmError> {
    cfg.validate(suite.nodes())?;
    let skeleton = Skeleton {
        eta: cfg.eta,
        iterations: cfg.iterations,
        initial_rounds: cfg.initial_rounds,
        rounds: cfg.rounds,
        estimator: Estimator::Batch {
            batches: &cfg.batches,
        },
    };
    run(suite, mixing, &skeleton, seed, opts, observer)
}

/// Probabilistic variance-reduced gradient tracking (Algorithm "D-NSS-VR").
pub fn dnss_vr_run<P: Problem>(
    suite: &OracleSuite<P>,
    mixing: &MixingMatrix,
    cfg: &DnssVrConfig,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunRecord, AlgorithmError> {
    dnss_vr_run_observed(suite, mixing, cfg, seed, opts, &mut |_| {})
}

pub fn dnss_vr_run_observed<P: Problem>(
    suite: &OracleSuite<P>,
    mixing: &MixingMatrix,
    cfg: &DnssVrConfig,
    seed: u64,
    opts: &RunOptions,
    observer: Observer<'_>,
) -> Result<RunRecord, AlgorithmError> {
    cfg.validate(suite.nodes())?;
    let skeleton = Skeleton {
        eta: cfg.eta,
        iterations: cfg.iterations,
        initial_rounds: cfg.initial_rounds,
        rounds: cfg.rounds,
        estimator: Estimator::Recursive {
            batches: &cfg.batches,
            minibatch: cfg.minibatch,
            p: cfg.p,
            q: cfg.q,
        },
    };
    run(suite, mixing, &skeleton, seed, opts, observer)
}

/// Gradient tracking with equal quadratic-mean batches. `cfg` is typically
/// built by [`baseline_config`] with the quadratic-mean rule; this wrapper
/// only checks that its batches are equal.
pub fn gt_sa_run<P: Problem>(
    suite: &OracleSuite<P>,
    mixing: &MixingMatrix,
    cfg: &DnssConfig,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunRecord, AlgorithmError> {
    if cfg.batches.windows(2).any(|w| w[0] != w[1]) {
        return Err(AlgorithmError::InvalidConfig(
            "the quadratic-mean baseline uses one batch size at every node".into(),
        ));
    }
    dnss_run(suite, mixing, cfg, seed, opts)
}

/// Gradient-tracking SGD: equal batch `batch`, one gossip round per mix.
pub fn dsgt_run<P: Problem>(
    suite: &OracleSuite<P>,
    mixing: &MixingMatrix,
    eta: f64,
    batch: u64,
    iterations: usize,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunRecord, AlgorithmError> {
    let cfg = dsgt_config(eta, batch, suite.nodes(), iterations);
    dnss_run(suite, mixing, &cfg, seed, opts)
}

/// Uniform reservoir over the iterates `x^0, x^1, …`.
struct OutputReservoir {
    rng: crate::oracles::NodeRng,
    seen: usize,
    chosen: usize,
    x: NodeMatrix,
}

impl OutputReservoir {
    fn new(seed: u64, x0: &NodeMatrix) -> Self {
        OutputReservoir {
            rng: output_rng(seed),
            seen: 1,
            chosen: 0,
            x: x0.clone(),
        }
    }

    fn offer(&mut self, iter: usize, x: &NodeMatrix) {
        self.seen += 1;
        if self.rng.random_range(0..self.seen) == 0 {
            self.chosen = iter;
            self.x.copy_from(x);
        }
    }
}

fn metrics_row<P: Problem>(
    suite: &OracleSuite<P>,
    x: &NodeMatrix,
    iter: usize,
    comm_rounds: u64,
    grad: &mut [f64],
) -> RecordRow {
    let mean = x.mean_row();
    suite.global_grad(&mean, grad);
    RecordRow {
        iter,
        samples: suite.total_samples(),
        comm_rounds,
        grad_norm_sq: norm_sq(grad),
        consensus_err: x.consensus_error(),
        f_value: suite.global_value(&mean),
    }
}

fn run<P: Problem>(
    suite: &OracleSuite<P>,
    mixing: &MixingMatrix,
    sk: &Skeleton<'_>,
    seed: u64,
    opts: &RunOptions,
    observer: Observer<'_>,
) -> Result<RunRecord, AlgorithmError> {
    let m = suite.nodes();
    let d = suite.dim();
    if mixing.nodes() != m {
        return Err(AlgorithmError::Dimension(format!(
            "mixing matrix has {} nodes but the problem has {m}",
            mixing.nodes()
        )));
    }
    let x0 = match &opts.x0 {
        Some(x0) if x0.len() != d => {
            return Err(AlgorithmError::Dimension(format!(
                "x0 has length {} but the problem has dimension {d}",
                x0.len()
            )))
        }
        Some(x0) => x0.clone(),
        None => vec![0.0; d],
    };
    let exec = opts.exec;
    let log_every = opts.log_every.max(1);
    let batches = sk.estimator.batches();
    let max_cost = sk.estimator.max_cost();
    let base_samples = suite.total_samples();

    let mut x = NodeMatrix::broadcast(m, &x0);
    let mut x_prev = x.clone();
    let mut y = NodeMatrix::zeros(m, d);
    let mut y_prev = NodeMatrix::zeros(m, d);
    let mut s = NodeMatrix::zeros(m, d);
    let mut rngs = node_rngs(seed, m);
    let mut coin = global_rng(seed);
    let mut reservoir = OutputReservoir::new(seed, &x);
    let mut mixer = FastMix::new(mixing, exec);
    let mut grad = vec![0.0; d];

    let mut rows = vec![metrics_row(suite, &x, 0, 0, &mut grad)];
    let mut truncated = false;
    let mut diverged = false;
    let mut initial_rounds = 0;
    let mut done = 0;

    for t in 0..sk.iterations {
        if let Some(budget) = opts.max_samples {
            if suite.total_samples() - base_samples + max_cost > budget {
                truncated = true;
                break;
            }
        }
        let large = match &sk.estimator {
            Estimator::Batch { .. } => true,
            Estimator::Recursive { p, .. } => t == 0 || coin.random_bool(*p),
        };
        std::mem::swap(&mut y, &mut y_prev);
        {
            let (xc, xp, yp) = (&x, &x_prev, &y_prev);
            let est = &sk.estimator;
            par::for_each_node(exec, y.as_mut_slice(), d, &mut rngs, |i, row, rng| {
                if large {
                    suite.sample_mean(i, xc.row(i), batches[i], rng, row);
                    return;
                }
                let Estimator::Recursive { minibatch, q, .. } = est else {
                    unreachable!("small-batch branch only exists for the recursive estimator")
                };
                if rng.random_bool(*q) {
                    recursive_estimate(
                        suite,
                        i,
                        xc.row(i),
                        xp.row(i),
                        yp.row(i),
                        *minibatch,
                        *q,
                        rng,
                        row,
                    );
                } else {
                    row.copy_from_slice(yp.row(i));
                }
            });
        }
        let rounds = if t == 0 {
            let sq: f64 = y.iter_rows().map(norm_sq).sum();
            initial_rounds = sk.initial_rounds.resolve(sq);
            initial_rounds
        } else {
            sk.rounds
        };
        // S ← FastMix(S + Y − Y_prev)
        s.axpy(1.0, &y);
        s.axpy(-1.0, &y_prev);
        mixer.mix(&mut s, rounds)?;
        // X ← FastMix(X − η S), keeping X^t for the recursion
        x_prev.copy_from(&x);
        x.axpy(-sk.eta, &s);
        mixer.mix(&mut x, rounds)?;
        done = t + 1;

        observer(&IterationView {
            t,
            x_prev: &x_prev,
            x: &x,
            y: &y,
            s: &s,
            large_batch: large,
            samples: suite.total_samples(),
            comm_rounds: mixer.rounds_used(),
        });
        if !x.is_finite() || !s.is_finite() {
            diverged = true;
            rows.push(metrics_row(suite, &x, done, mixer.rounds_used(), &mut grad));
            break;
        }
        reservoir.offer(done, &x);
        if done % log_every == 0 || done == sk.iterations {
            rows.push(metrics_row(suite, &x, done, mixer.rounds_used(), &mut grad));
        }
    }
    if truncated && rows.last().is_some_and(|r| r.iter != done) {
        rows.push(metrics_row(suite, &x, done, mixer.rounds_used(), &mut grad));
    }

    let out_mean = reservoir.x.mean_row();
    suite.global_grad(&out_mean, &mut grad);
    let output_grad_norm_sq = norm_sq(&grad);
    let output_node_grad_norm_sq = reservoir
        .x
        .iter_rows()
        .map(|xi| {
            suite.global_grad(xi, &mut grad);
            norm_sq(&grad)
        })
        .fold(0.0, f64::max);

    Ok(RunRecord {
        seed,
        rows,
        iterations: done,
        truncated,
        diverged,
        initial_rounds,
        output_iter: reservoir.chosen,
        output_grad_norm_sq,
        output_node_grad_norm_sq,
        final_mean: x.mean_row(),
        samples_per_node: suite.sample_counts(),
    })
}
