//! Strict TOML experiment configuration.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::PartitionScheme;
use crate::oracles::DEFAULT_REGULARIZATION;
use crate::topology::TopologySpec;

use super::ExperimentError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Target accuracy `ε`.
    pub eps: f64,
    pub seeds: Vec<u64>,
    /// Per-run cap on stochastic gradient evaluations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_samples: Option<u64>,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub problem: ProblemConfig,
    pub topology: TopologySpec,
    pub noise: NoiseConfig,
    pub algorithm: AlgorithmConfig,
}

fn default_log_every() -> usize {
    1
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

fn default_reg() -> f64 {
    DEFAULT_REGULARIZATION
}

fn default_scheme() -> PartitionScheme {
    PartitionScheme::LabelSorted
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    /// Random diagonal quadratics with known `L`, `μ` and `Δ`.
    Quadratic {
        dim: usize,
        smoothness: f64,
        mu: f64,
        delta: f64,
        #[serde(default)]
        heterogeneity: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Regularized logistic regression on a LIBSVM file.
    Logistic {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dim: Option<usize>,
        /// Keep only the first `max_rows` rows of the file.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_rows: Option<usize>,
        #[serde(default = "default_scheme")]
        partition: PartitionScheme,
        #[serde(default)]
        partition_seed: u64,
        #[serde(default = "default_reg")]
        reg: f64,
    },
    /// Distributed zero-chain instance; the noise profile gives `σ_i`.
    HardInstance {
        smoothness: f64,
        delta: f64,
        /// Per-node sample shares `c_i`; `σ_i / Σσ_j` when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        shares: Option<Vec<f64>>,
    },
}

/// Injected per-node noise levels and how the allocator learns them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub schedule: SigmaSchedule,
    /// Estimate `σ_i` from this many pilot samples per node at `x0` instead
    /// of using the injected values. Pilot samples count toward the totals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pilot: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaSchedule {
    Explicit {
        values: Vec<f64>,
    },
    /// `σ_i = base · ratio^i`.
    Geometric {
        base: f64,
        ratio: f64,
    },
    /// Evenly spaced from `start` to `end`.
    Linear {
        start: f64,
        end: f64,
    },
}

impl SigmaSchedule {
    pub fn values(&self, m: usize) -> Result<Vec<f64>, ExperimentError> {
        let v = match self {
            SigmaSchedule::Explicit { values } => {
                if values.len() != m {
                    return Err(ExperimentError::config(format!(
                        "noise schedule lists {} values for {m} nodes",
                        values.len()
                    )));
                }
                values.clone()
            }
            SigmaSchedule::Geometric { base, ratio } => {
                (0..m).map(|i| base * ratio.powi(i as i32)).collect()
            }
            SigmaSchedule::Linear { start, end } => {
                if m == 1 {
                    vec![*start]
                } else {
                    (0..m)
                        .map(|i| start + (end - start) * i as f64 / (m - 1) as f64)
                        .collect()
                }
            }
        };
        if let Some(bad) = v.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(ExperimentError::config(format!(
                "noise level {bad} is invalid"
            )));
        }
        Ok(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    /// Node-specific batches `B_i ∝ σ_i`.
    Dnss,
    /// Probabilistic variance-reduced variant.
    DnssVr,
    /// Equal batches sized by the quadratic mean of `σ_i`.
    GtSa,
    /// Equal batches sized by the largest `σ_i`.
    Uniform,
    /// Equal batches, one gossip round per mix.
    Dsgt,
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 5] = [
        AlgorithmKind::Dnss,
        AlgorithmKind::DnssVr,
        AlgorithmKind::GtSa,
        AlgorithmKind::Uniform,
        AlgorithmKind::Dsgt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlgorithmKind::Dnss => "dnss",
            AlgorithmKind::DnssVr => "dnss_vr",
            AlgorithmKind::GtSa => "gt_sa",
            AlgorithmKind::Uniform => "uniform",
            AlgorithmKind::Dsgt => "dsgt",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl std::fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Algorithm choice. Every field after `rounds_scale` overrides the value
/// the theorem schedule would pick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub name: AlgorithmKind,
    #[serde(default = "default_rounds_scale")]
    pub rounds_scale: f64,
    /// Large-batch constant of the variance-reduced schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_constant: Option<f64>,
    /// Initial gap `Δ` used by the schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Smoothness (`L`, or `L̄` for the variance-reduced method).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_rounds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batches: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minibatch: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
}

fn default_rounds_scale() -> f64 {
    1.0
}

impl AlgorithmConfig {
    pub fn theorem(name: AlgorithmKind) -> Self {
        AlgorithmConfig {
            name,
            rounds_scale: 1.0,
            batch_constant: None,
            delta: None,
            smoothness: None,
            eta: None,
            iterations: None,
            rounds: None,
            initial_rounds: None,
            batches: None,
            minibatch: None,
            p: None,
            q: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| ExperimentError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn nodes(&self) -> usize {
        self.topology.nodes()
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(ExperimentError::config(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if self.seeds.is_empty() {
            return Err(ExperimentError::config("seeds must not be empty"));
        }
        let m = self.nodes();
        if m == 0 {
            return Err(ExperimentError::config("topology has no nodes"));
        }
        self.noise.schedule.values(m)?;
        if let Some(n) = self.noise.pilot {
            if n < 2 {
                return Err(ExperimentError::config("pilot needs at least 2 samples"));
            }
        }
        if let ProblemConfig::HardInstance {
            shares: Some(shares),
            ..
        } = &self.problem
        {
            if shares.len() != m {
                return Err(ExperimentError::config(format!(
                    "{} shares for {m} nodes",
                    shares.len()
                )));
            }
        }
        if let Some(b) = &self.algorithm.batches {
            if b.len() != m {
                return Err(ExperimentError::config(format!(
                    "{} batch overrides for {m} nodes",
                    b.len()
                )));
            }
        }
        Ok(())
    }

    /// Stable SHA-256 of the canonical JSON form of the configuration.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// The same experiment under another algorithm's theorem schedule, with
    /// the shared problem overrides (`delta`, `smoothness`, `rounds_scale`)
    /// carried over.
    pub fn with_algorithm(&self, name: AlgorithmKind) -> Self {
        let mut out = self.clone();
        let base = &self.algorithm;
        out.algorithm = AlgorithmConfig {
            rounds_scale: base.rounds_scale,
            delta: base.delta,
            smoothness: base.smoothness,
            batch_constant: base.batch_constant,
            ..AlgorithmConfig::theorem(name)
        };
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
eps = 0.5
seeds = [1, 2]

[problem]
kind = "quadratic"
dim = 3
smoothness = 1.0
mu = 0.5
delta = 1.0

[topology]
kind = "ring"
m = 4

[noise.schedule]
kind = "explicit"
values = [1.0, 2.0, 3.0, 4.0]

[algorithm]
name = "dnss"
"#;

    #[test]
    fn parses_and_defaults() {
        let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
        assert_eq!(cfg.nodes(), 4);
        assert_eq!(cfg.algorithm.rounds_scale, 1.0);
        assert_eq!(cfg.log_every, 1);
        assert_eq!(
            cfg.fingerprint(),
            ExperimentConfig::from_toml(SMALL).unwrap().fingerprint()
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = SMALL.replace("mu = 0.5", "mu = 0.5\nmuu = 1");
        let err = ExperimentConfig::from_toml(&bad).unwrap_err().to_string();
        assert!(err.contains("muu"), "{err}");
        let bad = SMALL.replace("seeds = [1, 2]", "seeds = [1, 2]\nsede = 3");
        assert!(ExperimentConfig::from_toml(&bad)
            .unwrap_err()
            .to_string()
            .contains("sede"));
    }

    #[test]
    fn inconsistent_node_counts_are_rejected() {
        let bad = SMALL.replace("values = [1.0, 2.0, 3.0, 4.0]", "values = [1.0, 2.0]");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
        let bad = SMALL.replace("seeds = [1, 2]", "seeds = []");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn schedules() {
        let g = SigmaSchedule::Geometric {
            base: 1.0,
            ratio: 2.0,
        }
        .values(3)
        .unwrap();
        assert_eq!(g, vec![1.0, 2.0, 4.0]);
        let l = SigmaSchedule::Linear {
            start: 1.0,
            end: 3.0,
        }
        .values(3)
        .unwrap();
        assert_eq!(l, vec![1.0, 2.0, 3.0]);
        assert!(SigmaSchedule::Explicit { values: vec![-1.0] }
            .values(1)
            .is_err());
    }

    #[test]
    fn fingerprint_tracks_algorithm() {
        let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
        assert_ne!(
            cfg.fingerprint(),
            cfg.with_algorithm(AlgorithmKind::GtSa).fingerprint()
        );
        assert_eq!(
            cfg.fingerprint(),
            cfg.with_algorithm(AlgorithmKind::Dnss).fingerprint()
        );
    }
}
