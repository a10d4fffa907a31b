//! Communication graphs, Metropolis-Hastings mixing matrices and spectra.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Erdős–Rényi resamples before giving up on connectivity.
pub const ER_RETRY_BUDGET: u64 = 1000;

const ROW_SUM_TOL: f64 = 1e-12;
const EIGEN_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("invalid topology spec: {0}")]
    InvalidSpec(String),
    #[error("{spec} stayed disconnected after {attempts} resamples")]
    Disconnected { spec: String, attempts: u64 },
    #[error("matrix is not square: {len} entries for m = {m}")]
    NotSquare { m: usize, len: usize },
    #[error("matrix is not symmetric at ({i}, {j}): {a} vs {b}")]
    NotSymmetric { i: usize, j: usize, a: f64, b: f64 },
    #[error("graph is not connected")]
    NotConnected,
    #[error(
        "could not calibrate chi to {target} ± {tol}; closest chi = {closest} (edge probability {edge_prob})"
    )]
    CalibrationFailed {
        target: f64,
        tol: f64,
        closest: f64,
        edge_prob: f64,
    },
}

/// Undirected simple graph on nodes `0..m`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    m: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    /// Builds a graph, normalizing each pair to `(min, max)`. Rejects
    /// self-loops, duplicates and out-of-range indices.
    pub fn new(m: usize, edges: &[(usize, usize)]) -> Result<Self, TopologyError> {
        if m == 0 {
            return Err(TopologyError::InvalidSpec("m must be at least 1".into()));
        }
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a == b {
                return Err(TopologyError::InvalidSpec(format!("self-loop at {a}")));
            }
            if a >= m || b >= m {
                return Err(TopologyError::InvalidSpec(format!(
                    "edge ({a}, {b}) out of range for m = {m}"
                )));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return Err(TopologyError::InvalidSpec(format!(
                    "duplicate edge ({a}, {b})"
                )));
            }
        }
        Ok(Graph { m, edges: set })
    }

    pub fn nodes(&self) -> usize {
        self.m
    }

    /// Edges as `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.m];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.m];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        let adj = self.adjacency();
        let mut seen = vec![false; self.m];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.m
    }
}

/// Graph family and size. Also the `[topology]` section of experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    Ring {
        m: usize,
    },
    Path {
        m: usize,
    },
    Complete {
        m: usize,
    },
    ErdosRenyi {
        m: usize,
        edge_prob: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Erdős–Rényi graph whose edge probability is tuned to hit `target_chi`.
    Calibrated {
        m: usize,
        target_chi: f64,
        #[serde(default = "default_calibration_tol")]
        tol: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_calibration_tol() -> f64 {
    0.02
}

impl TopologySpec {
    pub fn nodes(&self) -> usize {
        match *self {
            TopologySpec::Ring { m }
            | TopologySpec::Path { m }
            | TopologySpec::Complete { m }
            | TopologySpec::ErdosRenyi { m, .. }
            | TopologySpec::Calibrated { m, .. } => m,
        }
    }
}

impl fmt::Display for TopologySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologySpec::Ring { m } => write!(f, "ring(m={m})"),
            TopologySpec::Path { m } => write!(f, "path(m={m})"),
            TopologySpec::Complete { m } => write!(f, "complete(m={m})"),
            TopologySpec::ErdosRenyi { m, edge_prob, seed } => {
                write!(f, "erdos_renyi(m={m}, p={edge_prob}, seed={seed})")
            }
            TopologySpec::Calibrated {
                m,
                target_chi,
                tol,
                seed,
            } => write!(f, "calibrated(m={m}, chi={target_chi}±{tol}, seed={seed})"),
        }
    }
}

/// Builds the graph described by `spec`.
pub fn build_graph(spec: &TopologySpec) -> Result<Graph, TopologyError> {
    let m = spec.nodes();
    if m == 0 {
        return Err(TopologyError::InvalidSpec("m must be at least 1".into()));
    }
    match *spec {
        TopologySpec::Ring { m } => {
            // a ring on two nodes would duplicate its single edge
            let edges: Vec<_> = match m {
                1 => vec![],
                2 => vec![(0, 1)],
                _ => (0..m).map(|i| (i, (i + 1) % m)).collect(),
            };
            Graph::new(m, &edges)
        }
        TopologySpec::Path { m } => {
            let edges: Vec<_> = (1..m).map(|i| (i - 1, i)).collect();
            Graph::new(m, &edges)
        }
        TopologySpec::Complete { m } => {
            let edges: Vec<_> = (0..m)
                .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
                .collect();
            Graph::new(m, &edges)
        }
        TopologySpec::ErdosRenyi { m, edge_prob, seed } => {
            if !(edge_prob > 0.0 && edge_prob <= 1.0) {
                return Err(TopologyError::InvalidSpec(format!(
                    "edge_prob must lie in (0, 1], got {edge_prob}"
                )));
            }
            erdos_renyi_connected(m, edge_prob, seed).ok_or_else(|| TopologyError::Disconnected {
                spec: spec.to_string(),
                attempts: ER_RETRY_BUDGET,
            })
        }
        TopologySpec::Calibrated {
            m,
            target_chi,
            tol,
            seed,
        } => calibrate_random_graph(m, target_chi, tol, seed),
    }
}

/// Attempt `k` draws every pair from ChaCha stream `k`, so for a fixed
/// attempt the edge sets are nested in `edge_prob`.
fn erdos_renyi_connected(m: usize, edge_prob: f64, seed: u64) -> Option<Graph> {
    for attempt in 0..ER_RETRY_BUDGET {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt);
        let mut edges = Vec::new();
        for i in 0..m {
            for j in i + 1..m {
                if rng.random::<f64>() < edge_prob {
                    edges.push((i, j));
                }
            }
        }
        let g = Graph::new(m, &edges).expect("generated edges are valid");
        if g.is_connected() {
            return Some(g);
        }
    }
    None
}

/// Symmetric doubly stochastic gossip matrix with cached spectral data.
#[derive(Clone, Debug)]
pub struct MixingMatrix {
    m: usize,
    dense: Vec<f64>,
    /// Nonzero `(j, W_ij)` entries of each row, diagonal included.
    sparse_rows: Vec<Vec<(usize, f64)>>,
    lambda2: f64,
    chi: f64,
}

impl MixingMatrix {
    /// Wraps a dense row-major matrix, computing `λ2` and `χ`. Only symmetry
    /// is enforced here; use [`validate_mixing`] for the full assumption set.
    pub fn from_dense(m: usize, dense: Vec<f64>) -> Result<Self, TopologyError> {
        let (lambda2, chi) = spectral_gap(m, &dense)?;
        let sparse_rows = (0..m)
            .map(|i| {
                (0..m)
                    .filter_map(|j| {
                        let w = dense[i * m + j];
                        (w != 0.0).then_some((j, w))
                    })
                    .collect()
            })
            .collect();
        Ok(MixingMatrix {
            m,
            dense,
            sparse_rows,
            lambda2,
            chi,
        })
    }

    /// `(1/m) 11ᵀ`, the exact-averaging matrix.
    pub fn averaging(m: usize) -> Self {
        let w = 1.0 / m as f64;
        MixingMatrix::from_dense(m, vec![w; m * m]).expect("averaging matrix is symmetric")
    }

    pub fn nodes(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.dense[i * self.m + j]
    }

    pub fn dense(&self) -> &[f64] {
        &self.dense
    }

    pub(crate) fn sparse_row(&self, i: usize) -> &[(usize, f64)] {
        &self.sparse_rows[i]
    }

    /// Second-largest eigenvalue.
    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    /// Spectral gap `1 − λ2`.
    pub fn chi(&self) -> f64 {
        self.chi
    }

    /// Checks the matrix against the gossip-matrix assumptions.
    pub fn violations(&self) -> Vec<MixingViolation> {
        validate_mixing(self.m, &self.dense)
    }
}

/// Metropolis-Hastings weights: `W_ij = 1 / (1 + max(deg_i, deg_j))` on
/// edges, diagonal completes each row to one.
pub fn metropolis_weights(g: &Graph) -> Result<MixingMatrix, TopologyError> {
    if !g.is_connected() {
        return Err(TopologyError::NotConnected);
    }
    let m = g.nodes();
    let deg = g.degrees();
    let mut w = vec![0.0; m * m];
    for (i, j) in g.edges() {
        let v = 1.0 / (1 + deg[i].max(deg[j])) as f64;
        w[i * m + j] = v;
        w[j * m + i] = v;
    }
    for i in 0..m {
        let off: f64 = (0..m).filter(|&j| j != i).map(|j| w[i * m + j]).sum();
        w[i * m + i] = 1.0 - off;
    }
    MixingMatrix::from_dense(m, w)
}

fn check_square(m: usize, w: &[f64]) -> Result<(), TopologyError> {
    if w.len() != m * m {
        return Err(TopologyError::NotSquare { m, len: w.len() });
    }
    Ok(())
}

fn check_symmetric(m: usize, w: &[f64]) -> Result<(), TopologyError> {
    check_square(m, w)?;
    let scale = w.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for i in 0..m {
        for j in i + 1..m {
            let (a, b) = (w[i * m + j], w[j * m + i]);
            if (a - b).abs() > 1e-12 * scale {
                return Err(TopologyError::NotSymmetric { i, j, a, b });
            }
        }
    }
    Ok(())
}

/// Returns `(λ2, χ = 1 − λ2)` of a symmetric matrix. A single node has no
/// second eigenvalue; it is reported as `λ2 = 0`.
pub fn spectral_gap(m: usize, w: &[f64]) -> Result<(f64, f64), TopologyError> {
    check_symmetric(m, w)?;
    if m < 2 {
        return Ok((0.0, 1.0));
    }
    let eig = symmetric_eigenvalues(m, w);
    let lambda2 = eig[1];
    Ok((lambda2, 1.0 - lambda2))
}

/// Eigenvalues of a symmetric matrix in descending order, by cyclic Jacobi
/// rotations. Stops when the off-diagonal norm drops below `1e−12` of the
/// Frobenius norm or after `100·m` sweeps.
pub fn symmetric_eigenvalues(m: usize, w: &[f64]) -> Vec<f64> {
    let mut a = w.to_vec();
    let frob = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let idx = |r: usize, c: usize| r * m + c;
    for _sweep in 0..100 * m.max(1) {
        let off: f64 = (0..m)
            .flat_map(|p| (p + 1..m).map(move |q| (p, q)))
            .map(|(p, q)| a[idx(p, q)] * a[idx(p, q)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-12 * frob || off == 0.0 {
            break;
        }
        for p in 0..m {
            for q in p + 1..m {
                let apq = a[idx(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[idx(q, q)] - a[idx(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..m {
                    let (akp, akq) = (a[idx(k, p)], a[idx(k, q)]);
                    a[idx(k, p)] = c * akp - s * akq;
                    a[idx(k, q)] = s * akp + c * akq;
                }
                for k in 0..m {
                    let (apk, aqk) = (a[idx(p, k)], a[idx(q, k)]);
                    a[idx(p, k)] = c * apk - s * aqk;
                    a[idx(q, k)] = s * apk + c * aqk;
                }
                a[idx(p, q)] = 0.0;
                a[idx(q, p)] = 0.0;
            }
        }
    }
    let mut eig: Vec<f64> = (0..m).map(|i| a[idx(i, i)]).collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    eig
}

/// One violated clause of the gossip-matrix assumptions.
#[derive(Clone, Debug, PartialEq)]
pub enum MixingViolation {
    NotSquare {
        m: usize,
        len: usize,
    },
    NotSymmetric {
        i: usize,
        j: usize,
    },
    NegativeEntry {
        i: usize,
        j: usize,
        value: f64,
    },
    RowSum {
        row: usize,
        sum: f64,
    },
    ColumnSum {
        col: usize,
        sum: f64,
    },
    /// Smallest eigenvalue below zero (`0 ⪯ W` fails).
    NotPositiveSemidefinite {
        min_eigenvalue: f64,
    },
    /// Largest eigenvalue above one (`W ⪯ I` fails).
    ExceedsIdentity {
        max_eigenvalue: f64,
    },
    /// Eigenvalue one is not simple, so the null space of `I − W` is larger than `span(1)`.
    UnitEigenvalueNotSimple {
        lambda2: f64,
    },
}

impl fmt::Display for MixingViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MixingViolation::NotSquare { m, len } => {
                write!(f, "not square ({len} entries, m = {m})")
            }
            MixingViolation::NotSymmetric { i, j } => write!(f, "not symmetric at ({i}, {j})"),
            MixingViolation::NegativeEntry { i, j, value } => {
                write!(f, "negative entry W[{i}][{j}] = {value}")
            }
            MixingViolation::RowSum { row, sum } => write!(f, "row {row} sums to {sum}"),
            MixingViolation::ColumnSum { col, sum } => write!(f, "column {col} sums to {sum}"),
            MixingViolation::NotPositiveSemidefinite { min_eigenvalue } => {
                write!(f, "0 ⪯ W fails: smallest eigenvalue {min_eigenvalue}")
            }
            MixingViolation::ExceedsIdentity { max_eigenvalue } => {
                write!(f, "W ⪯ I fails: largest eigenvalue {max_eigenvalue}")
            }
            MixingViolation::UnitEigenvalueNotSimple { lambda2 } => {
                write!(f, "eigenvalue 1 is not simple (λ2 = {lambda2})")
            }
        }
    }
}

/// Lists every violated clause; an empty list means `w` is a valid gossip
/// matrix (symmetric, nonnegative, doubly stochastic, `0 ⪯ W ⪯ I`, simple
/// unit eigenvalue).
pub fn validate_mixing(m: usize, w: &[f64]) -> Vec<MixingViolation> {
    let mut out = Vec::new();
    if w.len() != m * m {
        out.push(MixingViolation::NotSquare { m, len: w.len() });
        return out;
    }
    let mut symmetric = true;
    for i in 0..m {
        for j in i + 1..m {
            if (w[i * m + j] - w[j * m + i]).abs() > ROW_SUM_TOL {
                out.push(MixingViolation::NotSymmetric { i, j });
                symmetric = false;
            }
        }
    }
    for i in 0..m {
        for j in 0..m {
            let v = w[i * m + j];
            if v < 0.0 {
                out.push(MixingViolation::NegativeEntry { i, j, value: v });
            }
        }
    }
    for i in 0..m {
        let sum: f64 = w[i * m..(i + 1) * m].iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            out.push(MixingViolation::RowSum { row: i, sum });
        }
    }
    for j in 0..m {
        let sum: f64 = (0..m).map(|i| w[i * m + j]).sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            out.push(MixingViolation::ColumnSum { col: j, sum });
        }
    }
    if symmetric && m > 0 {
        let eig = symmetric_eigenvalues(m, w);
        let (max, min) = (eig[0], eig[m - 1]);
        if min < -EIGEN_TOL {
            out.push(MixingViolation::NotPositiveSemidefinite {
                min_eigenvalue: min,
            });
        }
        if max > 1.0 + EIGEN_TOL {
            out.push(MixingViolation::ExceedsIdentity {
                max_eigenvalue: max,
            });
        }
        if m > 1 && eig[1] >= 1.0 - EIGEN_TOL {
            out.push(MixingViolation::UnitEigenvalueNotSimple { lambda2: eig[1] });
        }
    }
    out
}

/// Finds an Erdős–Rényi graph whose MH matrix has `|χ − target_chi| ≤ tol`.
///
/// Bisects the edge probability (χ grows with density) for up to 60 steps
/// per base seed and tries up to 16 base seeds derived from `seed`.
pub fn calibrate_random_graph(
    m: usize,
    target_chi: f64,
    tol: f64,
    seed: u64,
) -> Result<Graph, TopologyError> {
    if m == 0 {
        return Err(TopologyError::InvalidSpec("m must be at least 1".into()));
    }
    if !(target_chi > 0.0 && target_chi <= 1.0) || !(tol >= 0.0) {
        return Err(TopologyError::InvalidSpec(format!(
            "target_chi must lie in (0, 1] and tol must be nonnegative (got {target_chi}, {tol})"
        )));
    }
    let mut best: Option<(f64, f64)> = None; // (|chi - target|, chi)
    let mut best_p = 1.0;
    let mut consider = |p: f64, chi: f64| {
        let gap = (chi - target_chi).abs();
        if best.is_none_or(|(b, _)| gap < b) {
            best = Some((gap, chi));
            best_p = p;
        }
        gap <= tol
    };
    let chi_of = |p: f64, s: u64| -> Option<(Graph, f64)> {
        let g = erdos_renyi_connected(m, p, s)?;
        let chi = metropolis_weights(&g).ok()?.chi();
        Some((g, chi))
    };
    // the complete graph is the densest option; if it falls short, stop
    let (g, chi) = chi_of(1.0, seed).expect("complete graph is connected");
    if consider(1.0, chi) {
        return Ok(g);
    }
    if chi > target_chi {
        for round in 0..16u64 {
            let s = seed.wrapping_add(round.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            for _ in 0..60 {
                let p = 0.5 * (lo + hi);
                let Some((g, chi)) = chi_of(p, s) else {
                    // too sparse to connect
                    lo = p;
                    continue;
                };
                if consider(p, chi) {
                    return Ok(g);
                }
                if chi < target_chi {
                    lo = p;
                } else {
                    hi = p;
                }
            }
        }
    }
    let (_, closest) = best.unwrap_or((f64::INFINITY, f64::NAN));
    Err(TopologyError::CalibrationFailed {
        target: target_chi,
        tol,
        closest,
        edge_prob: best_p,
    })
}
