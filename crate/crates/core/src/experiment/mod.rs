//! Seeded experiment orchestration.
//!
//! A run goes through fixed stages: topology, data, oracles, sigma
//! estimation, allocation, algorithm, output. Failures name their stage.

use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::algorithms::{
    self, baseline_config, theorem1_config, theorem3_config, DnssConfig, DnssVrConfig,
    InitialRounds, RunOptions, TheoremInputs,
};
use crate::allocation::{
    estimate_sigmas, optimal_batches, qm_batches, theorem1_batches, theorem3_schedule,
    uniform_batches, AllocationRule, NoiseProfile,
};
use crate::data::{partition, read_libsvm};
use crate::oracles::{
    distributed_hard_instance, HardInstanceParams, Logistic, LogisticSpec, OracleSuite, Problem,
    Quadratic, QuadraticParams, QuadraticSpec,
};
use crate::par::{self, Execution};
use crate::topology::{build_graph, metropolis_weights, MixingMatrix};

pub mod aggregate;
mod config;
pub mod csv;
mod demo;

pub use aggregate::{aggregate, Aggregate, GridPoint, GRID_POINTS};
pub use config::{
    AlgorithmConfig, AlgorithmKind, ExperimentConfig, NoiseConfig, ProblemConfig, SigmaSchedule,
};
pub use csv::{read_record, write_aggregate, write_record, TaggedRecord};
pub use demo::{lowerbound_demo, DemoNode, DemoParams, DemoSummary};

/// Pipeline stage a failure originated in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Topology,
    Data,
    Oracles,
    SigmaEstimation,
    Allocation,
    Algorithm,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Topology => "topology",
            Stage::Data => "data",
            Stage::Oracles => "oracles",
            Stage::SigmaEstimation => "sigma estimation",
            Stage::Allocation => "allocation",
            Stage::Algorithm => "algorithm",
            Stage::Output => "output",
        })
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("{stage}: {message}")]
    Stage { stage: Stage, message: String },
    #[error("aggregate: {0}")]
    Aggregate(String),
}

impl ExperimentError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        ExperimentError::Config(msg.into())
    }

    fn at(stage: Stage) -> impl FnOnce(&dyn fmt::Display) -> Self {
        move |e| ExperimentError::Stage {
            stage,
            message: e.to_string(),
        }
    }
}

trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T, ExperimentError>;
}

impl<T, E: fmt::Display> StageExt<T> for Result<T, E> {
    fn stage(self, stage: Stage) -> Result<T, ExperimentError> {
        self.map_err(|e| ExperimentError::at(stage)(&e))
    }
}

/// Seed offset separating pilot draws from the run's own streams.
const PILOT_SEED_SALT: u64 = 0x5eed_0f91_1075;

/// Problem data shared by all seeds; each seed builds fresh counters.
#[derive(Clone, Debug)]
enum Template {
    Quadratic(QuadraticSpec),
    Logistic(LogisticSpec),
    Hard(HardInstanceParams),
}

/// Gap and smoothness constants the schedules need.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProblemConstants {
    pub delta: f64,
    pub smoothness: f64,
    pub mean_sq_smoothness: f64,
}

/// Everything built once per configuration.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub cfg: ExperimentConfig,
    pub fingerprint: String,
    pub mixing: MixingMatrix,
    pub sigmas: Vec<f64>,
    template: Template,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, ExperimentError> {
    cfg.validate()?;
    let m = cfg.nodes();
    let graph = build_graph(&cfg.topology).stage(Stage::Topology)?;
    let mixing = metropolis_weights(&graph).stage(Stage::Topology)?;
    let sigmas = cfg.noise.schedule.values(m)?;
    let template = match &cfg.problem {
        ProblemConfig::Quadratic {
            dim,
            smoothness,
            mu,
            delta,
            heterogeneity,
            seed,
        } => {
            let params = QuadraticParams {
                nodes: m,
                dim: *dim,
                smoothness: *smoothness,
                mu: *mu,
                delta: *delta,
                heterogeneity: *heterogeneity,
                seed: *seed,
            };
            Template::Quadratic(
                QuadraticSpec::random(&params, sigmas.clone()).stage(Stage::Oracles)?,
            )
        }
        ProblemConfig::Logistic {
            path,
            dim,
            max_rows,
            partition: scheme,
            partition_seed,
            reg,
        } => {
            let mut ds = read_libsvm(path, *dim).stage(Stage::Data)?;
            if let Some(n) = max_rows {
                ds.rows.truncate(*n);
                ds.labels.truncate(*n);
            }
            let plan = partition(&ds, m, *scheme, *partition_seed).stage(Stage::Data)?;
            let spec = LogisticSpec::from_partition(&ds, &plan, *reg, sigmas.clone());
            Logistic::new(spec.clone()).stage(Stage::Oracles)?;
            Template::Logistic(spec)
        }
        ProblemConfig::HardInstance {
            smoothness,
            delta,
            shares,
        } => {
            let total: f64 = sigmas.iter().sum();
            let shares = shares
                .clone()
                .unwrap_or_else(|| sigmas.iter().map(|s| s / total).collect());
            let params = HardInstanceParams {
                smoothness: *smoothness,
                eps: cfg.eps,
                delta: *delta,
                sigmas: sigmas.clone(),
                shares,
            };
            distributed_hard_instance(&params).stage(Stage::Oracles)?;
            Template::Hard(params)
        }
    };
    Ok(Prepared {
        cfg: cfg.clone(),
        fingerprint: cfg.fingerprint(),
        mixing,
        sigmas,
        template,
    })
}

impl Prepared {
    /// Runs one seed.
    pub fn run_seed(&self, seed: u64, exec: Execution) -> Result<TaggedRecord, ExperimentError> {
        let record = match &self.template {
            Template::Quadratic(spec) => {
                let q = Quadratic::new(spec.clone()).stage(Stage::Oracles)?;
                let x0 = vec![0.0; spec.dim];
                let consts = ProblemConstants {
                    delta: q.initial_gap(&x0).unwrap_or(0.0),
                    smoothness: q.max_local_smoothness(),
                    mean_sq_smoothness: q.max_local_smoothness(),
                };
                self.run_on(&OracleSuite::new(q), consts, seed, exec)?
            }
            Template::Logistic(spec) => {
                let l = Logistic::new(spec.clone()).stage(Stage::Oracles)?;
                let suite = OracleSuite::new(l);
                let x0 = vec![0.0; suite.dim()];
                // both terms are nonnegative, so f(x0) bounds the gap
                let consts = ProblemConstants {
                    delta: suite.global_value(&x0),
                    smoothness: suite.problem().smoothness(),
                    mean_sq_smoothness: suite.problem().mean_squared_smoothness(),
                };
                self.run_on(&suite, consts, seed, exec)?
            }
            Template::Hard(params) => {
                let suite = distributed_hard_instance(params).stage(Stage::Oracles)?;
                let consts = ProblemConstants {
                    delta: params.delta,
                    smoothness: params.smoothness,
                    mean_sq_smoothness: params.smoothness,
                };
                self.run_on(&suite, consts, seed, exec)?
            }
        };
        Ok(TaggedRecord {
            fingerprint: self.fingerprint.clone(),
            algorithm: self.cfg.algorithm.name.to_string(),
            record,
        })
    }

    /// Runs every configured seed, concurrently when `exec` allows.
    pub fn run_all(&self, exec: Execution) -> Result<Vec<TaggedRecord>, ExperimentError> {
        let seeds = &self.cfg.seeds;
        par::map_indices(exec, seeds.len(), |k| self.run_seed(seeds[k], exec))
            .into_iter()
            .collect()
    }

    /// Noise profile the allocator sees for this suite and seed.
    fn profile<P: Problem>(
        &self,
        suite: &OracleSuite<P>,
        seed: u64,
        exec: Execution,
    ) -> Result<NoiseProfile, ExperimentError> {
        match self.cfg.noise.pilot {
            Some(n) => estimate_sigmas(
                suite,
                &vec![0.0; suite.dim()],
                n,
                seed ^ PILOT_SEED_SALT,
                exec,
            )
            .stage(Stage::SigmaEstimation),
            None => NoiseProfile::new(self.sigmas.clone()).stage(Stage::Allocation),
        }
    }

    fn run_on<P: Problem>(
        &self,
        suite: &OracleSuite<P>,
        consts: ProblemConstants,
        seed: u64,
        exec: Execution,
    ) -> Result<algorithms::RunRecord, ExperimentError> {
        let cfg = &self.cfg;
        let alg = &cfg.algorithm;
        let profile = self.profile(suite, seed, exec)?;
        let vr = alg.name == AlgorithmKind::DnssVr;
        let inputs = TheoremInputs {
            delta: alg.delta.unwrap_or(consts.delta),
            smoothness: alg.smoothness.unwrap_or(if vr {
                consts.mean_sq_smoothness
            } else {
                consts.smoothness
            }),
            eps: cfg.eps,
            chi: self.mixing.chi(),
            rounds_scale: alg.rounds_scale,
        };
        let opts = RunOptions {
            x0: None,
            max_samples: cfg.max_samples,
            log_every: cfg.log_every,
            exec,
        };
        let record = if vr {
            let mut c = theorem3_config(&inputs, &profile, None, alg.batch_constant)
                .stage(Stage::Allocation)?;
            apply_vr_overrides(&mut c, alg);
            algorithms::dnss_vr_run(suite, &self.mixing, &c, seed, &opts)
        } else {
            let mut c = match alg.name {
                AlgorithmKind::Dnss => theorem1_config(&inputs, &profile, None),
                AlgorithmKind::GtSa => {
                    baseline_config(AllocationRule::QuadraticMean, &inputs, &profile, None)
                }
                AlgorithmKind::Uniform | AlgorithmKind::Dsgt => {
                    baseline_config(AllocationRule::WorstCase, &inputs, &profile, None)
                }
                AlgorithmKind::DnssVr => unreachable!("handled above"),
            }
            .stage(Stage::Allocation)?;
            if alg.name == AlgorithmKind::Dsgt {
                c.rounds = 1;
                c.initial_rounds = InitialRounds::Fixed(1);
            }
            apply_overrides(&mut c, alg);
            algorithms::dnss_run(suite, &self.mixing, &c, seed, &opts)
        };
        record.stage(Stage::Algorithm)
    }
}

fn apply_overrides(c: &mut DnssConfig, alg: &AlgorithmConfig) {
    if let Some(v) = alg.eta {
        c.eta = v;
    }
    if let Some(v) = alg.iterations {
        c.iterations = v;
    }
    if let Some(v) = alg.rounds {
        c.rounds = v;
    }
    if let Some(v) = alg.initial_rounds {
        c.initial_rounds = InitialRounds::Fixed(v);
    }
    if let Some(v) = &alg.batches {
        c.batches = v.clone();
    }
}

fn apply_vr_overrides(c: &mut DnssVrConfig, alg: &AlgorithmConfig) {
    let mut base = c.as_dnss();
    apply_overrides(&mut base, alg);
    c.eta = base.eta;
    c.iterations = base.iterations;
    c.rounds = base.rounds;
    c.initial_rounds = base.initial_rounds;
    c.batches = base.batches;
    if let Some(v) = alg.minibatch {
        c.minibatch = v;
    }
    if let Some(v) = alg.p {
        c.p = v;
    }
    if let Some(v) = alg.q {
        c.q = v;
    }
}

/// Runs one seed of `cfg` from scratch.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<TaggedRecord, ExperimentError> {
    prepare(cfg)?.run_seed(seed, Execution::default())
}

/// Writes `<algo>-seed<k>.csv` per record and the aggregate file; returns
/// the aggregate.
pub fn write_outputs(
    dir: &Path,
    records: &[TaggedRecord],
    aggregate_name: &str,
) -> Result<Aggregate, ExperimentError> {
    std::fs::create_dir_all(dir).stage(Stage::Output)?;
    for r in records {
        let path = dir.join(format!("{}-seed{}.csv", r.algorithm, r.record.seed));
        std::fs::write(&path, write_record(r)).stage(Stage::Output)?;
    }
    let runs: Vec<_> = records
        .iter()
        .map(|r| (r.fingerprint.clone(), r.record.rows.clone()))
        .collect();
    let agg = aggregate(&runs)?;
    std::fs::write(dir.join(aggregate_name), write_aggregate(&agg)).stage(Stage::Output)?;
    Ok(agg)
}

/// `run`: every seed of the configured algorithm. Returns the output files.
pub fn run_command(
    cfg: &ExperimentConfig,
    exec: Execution,
) -> Result<Vec<PathBuf>, ExperimentError> {
    let prepared = prepare(cfg)?;
    let records = prepared.run_all(exec)?;
    write_outputs(&cfg.output, &records, "aggregate.csv")?;
    let mut files: Vec<PathBuf> = records
        .iter()
        .map(|r| {
            cfg.output
                .join(format!("{}-seed{}.csv", r.algorithm, r.record.seed))
        })
        .collect();
    files.push(cfg.output.join("aggregate.csv"));
    Ok(files)
}

/// `sweep`: each algorithm under its own theorem schedule on the shared
/// problem, one aggregate per algorithm.
pub fn sweep_command(
    cfg: &ExperimentConfig,
    algos: &[AlgorithmKind],
    exec: Execution,
) -> Result<Vec<(AlgorithmKind, Aggregate)>, ExperimentError> {
    let mut out = Vec::with_capacity(algos.len());
    for &a in algos {
        let c = cfg.with_algorithm(a);
        let records = prepare(&c)?.run_all(exec)?;
        let agg = write_outputs(&c.output, &records, &format!("aggregate-{a}.csv"))?;
        out.push((a, agg));
    }
    Ok(out)
}

/// `allocate`: per-node batch plans as CSV, followed by a totals row.
/// Up to twelve decimals with trailing zeros dropped.
fn short(v: f64) -> String {
    let s = format!("{v:.12}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

pub fn allocation_table(cfg: &ExperimentConfig) -> Result<String, ExperimentError> {
    use std::fmt::Write as _;
    let sigmas = cfg.noise.schedule.values(cfg.nodes())?;
    let profile = NoiseProfile::new(sigmas).stage(Stage::Allocation)?;
    let opt = optimal_batches(&profile, cfg.eps).stage(Stage::Allocation)?;
    let t1 = theorem1_batches(&profile, cfg.eps).stage(Stage::Allocation)?;
    let uni = uniform_batches(&profile, cfg.eps).stage(Stage::Allocation)?;
    let qm = qm_batches(&profile, cfg.eps).stage(Stage::Allocation)?;
    let mut out = String::from("node,sigma,B_optimal,B_theorem1,B_uniform,B_qm\n");
    for (i, s) in profile.sigmas().iter().enumerate() {
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{}",
            short(*s),
            short(opt.batches[i]),
            t1.batches[i],
            uni.batches[i],
            qm.batches[i]
        );
    }
    let _ = writeln!(
        out,
        "total,,{},{},{},{}",
        short(opt.total),
        t1.total(),
        uni.total(),
        qm.total()
    );
    Ok(out)
}

/// `mixinfo`: spectral data of the topology and the theorem round counts.
pub fn mix_info(cfg: &ExperimentConfig) -> Result<String, ExperimentError> {
    let graph = build_graph(&cfg.topology).stage(Stage::Topology)?;
    let w = metropolis_weights(&graph).stage(Stage::Topology)?;
    let m = cfg.nodes();
    let profile = NoiseProfile::new(cfg.noise.schedule.values(m)?).stage(Stage::Allocation)?;
    let sched = theorem3_schedule(&profile, cfg.eps, cfg.algorithm.batch_constant)
        .stage(Stage::Allocation)?;
    let scale = cfg.algorithm.rounds_scale;
    let violations = w.violations();
    let mut out = format!(
        "m={m}\nedges={}\nlambda2={}\nchi={}\nrounds_theorem1={}\nrounds_theorem3={}\n",
        graph.edge_count(),
        w.lambda2(),
        w.chi(),
        algorithms::theorem1_rounds(m, w.chi(), scale),
        algorithms::theorem3_rounds(m, w.chi(), sched.minibatch as f64 * sched.q, scale),
    );
    for v in violations {
        out.push_str(&format!("warning={v}\n"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
