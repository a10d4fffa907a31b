//! Zero-chain progress under a sample budget below `(D − 1)/(2p)`.

use std::fmt::Write as _;

use crate::algorithms::{dnss_run, DnssConfig, InitialRounds, RunOptions};
use crate::oracles::{
    distributed_hard_instance, HardInstanceParams, CHAIN_DELTA0, CHAIN_GRAD_LIPSCHITZ,
};
use crate::par::{self, Execution};
use crate::topology::MixingMatrix;

use super::{ExperimentError, Stage, StageExt};

#[derive(Clone, Debug, PartialEq)]
pub struct DemoParams {
    pub eps: f64,
    pub sigmas: Vec<f64>,
    pub smoothness: f64,
    /// Initial gap; when absent it is chosen so the shortest chain has
    /// `min_chain` links.
    pub delta: Option<f64>,
    pub min_chain: usize,
    pub trials: usize,
    pub seed: u64,
}

impl DemoParams {
    pub fn new(eps: f64, sigmas: Vec<f64>) -> Self {
        DemoParams {
            eps,
            sigmas,
            smoothness: 1.0,
            delta: None,
            min_chain: 32,
            trials: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoNode {
    pub chain: usize,
    pub p: f64,
    /// `(D − 1)/(2p)`.
    pub threshold: f64,
    pub draws: u64,
    pub mean_successes: f64,
    pub mean_progress: f64,
    pub max_progress: usize,
    /// Trials whose final progress stayed below the chain length.
    pub below_chain: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoSummary {
    pub delta: f64,
    pub iterations: usize,
    pub trials: usize,
    pub nodes: Vec<DemoNode>,
    /// Trials in which every node stayed below its chain length.
    pub all_below_chain: usize,
}

impl DemoSummary {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# delta={} iterations={} trials={} all_below_chain={}\n",
            self.delta, self.iterations, self.trials, self.all_below_chain
        );
        out.push_str(
            "node,chain,p,threshold,draws,mean_successes,mean_progress,max_progress,below_chain\n",
        );
        for (i, n) in self.nodes.iter().enumerate() {
            let _ = writeln!(
                out,
                "{i},{},{},{},{},{},{},{},{}",
                n.chain,
                n.p,
                n.threshold,
                n.draws,
                n.mean_successes,
                n.mean_progress,
                n.max_progress,
                n.below_chain
            );
        }
        out
    }
}

/// Runs single-sample gradient tracking on the distributed hard instance for
/// the largest iteration count whose per-node draws stay below every
/// `(D_i − 1)/(2p_i)`, and reports how far each chain progressed.
pub fn lowerbound_demo(
    params: &DemoParams,
    exec: Execution,
) -> Result<DemoSummary, ExperimentError> {
    let m = params.sigmas.len();
    if m == 0 || params.trials == 0 {
        return Err(ExperimentError::config(
            "demo needs at least one node and one trial",
        ));
    }
    let total: f64 = params.sigmas.iter().sum();
    let shares: Vec<f64> = params.sigmas.iter().map(|s| s / total).collect();
    let delta = match params.delta {
        Some(d) => d,
        None => {
            // D_i = ΔL/(4Δ0ℓε²) · (σ̄/σ_i) · m c_i with c_i = σ_i/Σσ, so every
            // D_i equals ΔL/(4Δ0ℓε²); pad slightly against the floor
            let eps2 = params.eps * params.eps;
            (params.min_chain as f64 + 0.5) * 4.0 * CHAIN_DELTA0 * CHAIN_GRAD_LIPSCHITZ * eps2
                / params.smoothness
        }
    };
    let hard = HardInstanceParams {
        smoothness: params.smoothness,
        eps: params.eps,
        delta,
        sigmas: params.sigmas.clone(),
        shares,
    };
    let probe = distributed_hard_instance(&hard).stage(Stage::Oracles)?;
    let blocks = probe.problem().blocks().to_vec();
    let thresholds: Vec<f64> = blocks
        .iter()
        .map(|b| (b.len as f64 - 1.0) / (2.0 * b.p))
        .collect();
    let min_thr = thresholds.iter().copied().fold(f64::INFINITY, f64::min);
    let iterations = if min_thr > 0.0 {
        min_thr.ceil() as usize - 1
    } else {
        0
    };
    let mixing = MixingMatrix::averaging(m);

    let trials = par::map_indices(exec, params.trials, |k| {
        let suite = distributed_hard_instance(&hard).expect("validated above");
        let seed = params.seed.wrapping_add(k as u64);
        let progress = if iterations == 0 {
            vec![0; m]
        } else {
            let cfg = DnssConfig {
                eta: 1.0 / (2.0 * params.smoothness),
                batches: vec![1; m],
                iterations,
                initial_rounds: InitialRounds::Fixed(1),
                rounds: 1,
            };
            let opts = RunOptions {
                log_every: iterations,
                exec: Execution::Sequential,
                ..Default::default()
            };
            let rec = dnss_run(&suite, &mixing, &cfg, seed, &opts).expect("valid demo config");
            (0..m)
                .map(|i| suite.problem().block_progress(i, &rec.final_mean))
                .collect()
        };
        let successes: Vec<u64> = (0..m).map(|i| suite.problem().successes(i)).collect();
        (progress, successes)
    });

    let mut nodes = Vec::with_capacity(m);
    for (i, b) in blocks.iter().enumerate() {
        let progs: Vec<usize> = trials.iter().map(|t| t.0[i]).collect();
        let succ: f64 = trials.iter().map(|t| t.1[i] as f64).sum();
        nodes.push(DemoNode {
            chain: b.len,
            p: b.p,
            threshold: thresholds[i],
            draws: iterations as u64,
            mean_successes: succ / params.trials as f64,
            mean_progress: progs.iter().sum::<usize>() as f64 / params.trials as f64,
            max_progress: progs.iter().copied().max().unwrap_or(0),
            below_chain: progs.iter().filter(|&&p| p < b.len).count(),
        });
    }
    let all_below_chain = trials
        .iter()
        .filter(|t| t.0.iter().zip(&blocks).all(|(p, b)| *p < b.len))
        .count();
    Ok(DemoSummary {
        delta,
        iterations,
        trials: params.trials,
        nodes,
        all_below_chain,
    })
}
