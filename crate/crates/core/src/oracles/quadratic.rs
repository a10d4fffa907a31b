//! Quadratic local objectives `f_i(x) = ½ xᵀA_i x − b_iᵀx` with Gaussian
//! gradient noise.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fill_noise, NodeRng, OracleError, OracleSuite, Problem};
use crate::matrix::dot;
use crate::topology::symmetric_eigenvalues;

/// Per-node dense `A_i` (row-major `d × d`), `b_i`, and noise level `σ_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSpec {
    pub dim: usize,
    pub matrices: Vec<Vec<f64>>,
    pub offsets: Vec<Vec<f64>>,
    pub sigmas: Vec<f64>,
}

/// Parameters of a random diagonal quadratic family.
///
/// Every `A_i` is diagonal with entries in `[mu, smoothness]`. The offsets
/// are `A_i c_i`; the centres `c_i` spread around a shared point with
/// relative spread `heterogeneity`, and the shared point is scaled so that
/// `f(0) − f* = delta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticParams {
    pub nodes: usize,
    pub dim: usize,
    pub smoothness: f64,
    pub mu: f64,
    pub delta: f64,
    #[serde(default)]
    pub heterogeneity: f64,
    #[serde(default)]
    pub seed: u64,
}

impl QuadraticSpec {
    /// `A_i = I`, `b_i = 0` at every node.
    pub fn isotropic(nodes: usize, dim: usize, sigmas: Vec<f64>) -> Self {
        let mut eye = vec![0.0; dim * dim];
        for k in 0..dim {
            eye[k * dim + k] = 1.0;
        }
        QuadraticSpec {
            dim,
            matrices: vec![eye; nodes],
            offsets: vec![vec![0.0; dim]; nodes],
            sigmas,
        }
    }

    pub fn random(params: &QuadraticParams, sigmas: Vec<f64>) -> Result<Self, OracleError> {
        let QuadraticParams {
            nodes,
            dim,
            smoothness,
            mu,
            delta,
            heterogeneity,
            seed,
        } = *params;
        if nodes == 0 || dim == 0 {
            return Err(OracleError::InvalidParameter(
                "nodes and dim must be positive".into(),
            ));
        }
        if !(mu > 0.0 && mu <= smoothness && smoothness.is_finite()) {
            return Err(OracleError::InvalidParameter(format!(
                "need 0 < mu <= smoothness, got mu={mu}, smoothness={smoothness}"
            )));
        }
        if !(delta > 0.0) || !(heterogeneity >= 0.0) {
            return Err(OracleError::InvalidParameter(
                "delta must be positive and heterogeneity non-negative".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let diag: Vec<Vec<f64>> = (0..nodes)
            .map(|i| {
                (0..dim)
                    .map(|k| {
                        // pin the extremes so the averaged spectrum spans [mu, smoothness]
                        if i == 0 && k == 0 {
                            smoothness
                        } else if i == 0 && k == dim - 1 && dim > 1 {
                            mu
                        } else {
                            rng.random_range(mu..=smoothness)
                        }
                    })
                    .collect()
            })
            .collect();
        let direction: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let centres: Vec<Vec<f64>> = (0..nodes)
            .map(|_| {
                direction
                    .iter()
                    .map(|c| c * (1.0 + heterogeneity * rng.random_range(-1.0..1.0)))
                    .collect()
            })
            .collect();
        let mut spec = QuadraticSpec {
            dim,
            matrices: diag
                .iter()
                .map(|a| {
                    let mut full = vec![0.0; dim * dim];
                    for (k, v) in a.iter().enumerate() {
                        full[k * dim + k] = *v;
                    }
                    full
                })
                .collect(),
            offsets: diag
                .iter()
                .zip(&centres)
                .map(|(a, c)| a.iter().zip(c).map(|(x, y)| x * y).collect())
                .collect(),
            sigmas,
        };
        // f(0) − f* is quadratic in a uniform scale of the offsets
        let gap = Quadratic::new(spec.clone())?
            .initial_gap(&vec![0.0; dim])
            .unwrap_or(0.0);
        if gap > 0.0 {
            let s = (delta / gap).sqrt();
            for b in spec.offsets.iter_mut() {
                b.iter_mut().for_each(|v| *v *= s);
            }
        }
        Ok(spec)
    }
}

/// Validated quadratic problem with precomputed global quantities.
#[derive(Clone, Debug)]
pub struct Quadratic {
    spec: QuadraticSpec,
    smoothness: f64,
    minimizer: Option<Vec<f64>>,
}

impl Quadratic {
    pub fn new(spec: QuadraticSpec) -> Result<Self, OracleError> {
        let m = spec.matrices.len();
        let d = spec.dim;
        if m == 0 {
            return Err(OracleError::Dimension("no nodes".into()));
        }
        if spec.offsets.len() != m || spec.sigmas.len() != m {
            return Err(OracleError::Dimension(format!(
                "{m} matrices, {} offsets, {} sigmas",
                spec.offsets.len(),
                spec.sigmas.len()
            )));
        }
        for (i, (a, b)) in spec.matrices.iter().zip(&spec.offsets).enumerate() {
            if a.len() != d * d || b.len() != d {
                return Err(OracleError::Dimension(format!(
                    "node {i} does not match dim {d}"
                )));
            }
            for r in 0..d {
                for c in (r + 1)..d {
                    let (x, y) = (a[r * d + c], a[c * d + r]);
                    if (x - y).abs() > 1e-12 * (1.0 + x.abs().max(y.abs())) {
                        return Err(OracleError::Asymmetric { node: i });
                    }
                }
            }
        }
        if spec.sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(OracleError::InvalidParameter(
                "sigmas must be finite and >= 0".into(),
            ));
        }
        let mean_a = mean_of(&spec.matrices);
        let mean_b = mean_of(&spec.offsets);
        let eig = symmetric_eigenvalues(d, &mean_a);
        let smoothness = eig.first().copied().unwrap_or(0.0).max(0.0);
        let lambda_min = eig.last().copied().unwrap_or(0.0);
        let minimizer = if lambda_min > 1e-12 * smoothness.max(1e-300) {
            solve(d, mean_a, mean_b)
        } else {
            None
        };
        Ok(Quadratic {
            spec,
            smoothness,
            minimizer,
        })
    }

    pub fn spec(&self) -> &QuadraticSpec {
        &self.spec
    }

    /// `λ_max((1/m) Σ A_i)`.
    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    /// Largest `λ_max(A_i)` over nodes.
    pub fn max_local_smoothness(&self) -> f64 {
        let d = self.spec.dim;
        self.spec
            .matrices
            .iter()
            .map(|a| symmetric_eigenvalues(d, a).first().copied().unwrap_or(0.0))
            .fold(0.0, f64::max)
    }

    /// Minimizer of the average when `(1/m) Σ A_i ≻ 0`.
    pub fn minimizer(&self) -> Option<&[f64]> {
        self.minimizer.as_deref()
    }

    /// `f(x0) − f*`, when the minimizer exists.
    pub fn initial_gap(&self, x0: &[f64]) -> Option<f64> {
        let xs = self.minimizer.as_ref()?;
        Some(self.global(x0) - self.global(xs))
    }

    fn global(&self, x: &[f64]) -> f64 {
        let m = self.nodes();
        (0..m).map(|i| self.local_value(i, x)).sum::<f64>() / m as f64
    }
}

fn mean_of(vs: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; vs[0].len()];
    for v in vs {
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    let inv = 1.0 / vs.len() as f64;
    out.iter_mut().for_each(|o| *o *= inv);
    out
}

/// Gaussian elimination with partial pivoting on a row-major system.
fn solve(d: usize, mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    for col in 0..d {
        let piv =
            (col..d).max_by(|&r, &s| a[r * d + col].abs().total_cmp(&a[s * d + col].abs()))?;
        if a[piv * d + col] == 0.0 {
            return None;
        }
        if piv != col {
            for k in 0..d {
                a.swap(piv * d + k, col * d + k);
            }
            b.swap(piv, col);
        }
        for r in (col + 1)..d {
            let f = a[r * d + col] / a[col * d + col];
            if f != 0.0 {
                for k in col..d {
                    a[r * d + k] -= f * a[col * d + k];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; d];
    for r in (0..d).rev() {
        let s: f64 = ((r + 1)..d).map(|k| a[r * d + k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r * d + r];
    }
    Some(x)
}

impl Problem for Quadratic {
    type Draw = Vec<f64>;

    fn nodes(&self) -> usize {
        self.spec.matrices.len()
    }

    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn local_value(&self, node: usize, x: &[f64]) -> f64 {
        let d = self.spec.dim;
        let a = &self.spec.matrices[node];
        let quad: f64 = (0..d).map(|r| x[r] * dot(&a[r * d..(r + 1) * d], x)).sum();
        0.5 * quad - dot(&self.spec.offsets[node], x)
    }

    fn local_grad(&self, node: usize, x: &[f64], out: &mut [f64]) {
        let d = self.spec.dim;
        let a = &self.spec.matrices[node];
        let b = &self.spec.offsets[node];
        for r in 0..d {
            out[r] = dot(&a[r * d..(r + 1) * d], x) - b[r];
        }
    }

    fn draw(&self, node: usize, rng: &mut NodeRng, draw: &mut Vec<f64>) {
        fill_noise(rng, self.spec.sigmas[node], draw, self.spec.dim);
    }

    fn stochastic_grad(&self, node: usize, x: &[f64], draw: &Vec<f64>, out: &mut [f64]) {
        self.local_grad(node, x, out);
        for (o, n) in out.iter_mut().zip(draw) {
            *o += n;
        }
    }
}

pub fn quadratic_suite(spec: QuadraticSpec) -> Result<OracleSuite<Quadratic>, OracleError> {
    Ok(OracleSuite::new(Quadratic::new(spec)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::node_rngs;

    #[test]
    fn isotropic_gradient_at_origin_is_zero() {
        let suite = quadratic_suite(QuadraticSpec::isotropic(2, 3, vec![0.0, 1.0])).unwrap();
        let mut g = vec![1.0; 3];
        suite.local_grad(0, &[0.0; 3], &mut g);
        assert_eq!(g, vec![0.0; 3]);
        assert_eq!(suite.problem().smoothness(), 1.0);
        assert_eq!(suite.problem().minimizer().unwrap(), &[0.0; 3]);
    }

    #[test]
    fn zero_noise_sample_is_exact() {
        let mut spec = QuadraticSpec::isotropic(1, 2, vec![0.0]);
        spec.offsets[0] = vec![1.0, -2.0];
        let suite = quadratic_suite(spec).unwrap();
        let mut rngs = node_rngs(1, 1);
        let x = [0.3, 0.7];
        let (mut g, mut s) = (vec![0.0; 2], vec![0.0; 2]);
        suite.local_grad(0, &x, &mut g);
        suite.sample(0, &x, &mut rngs[0], &mut s);
        assert_eq!(g, s);
        assert_eq!(suite.samples(0), 1);
    }

    #[test]
    fn asymmetric_matrix_rejected() {
        let mut spec = QuadraticSpec::isotropic(1, 2, vec![0.0]);
        spec.matrices[0][1] = 0.5;
        assert!(matches!(
            quadratic_suite(spec),
            Err(OracleError::Asymmetric { node: 0 })
        ));
    }

    #[test]
    fn random_family_hits_targets() {
        let params = QuadraticParams {
            nodes: 4,
            dim: 5,
            smoothness: 2.0,
            mu: 0.5,
            delta: 3.0,
            heterogeneity: 0.5,
            seed: 9,
        };
        let q = Quadratic::new(QuadraticSpec::random(&params, vec![1.0; 4]).unwrap()).unwrap();
        assert!(q.smoothness() <= 2.0 + 1e-12 && q.smoothness() >= 0.5);
        assert!(q.max_local_smoothness() <= 2.0 + 1e-12);
        let gap = q.initial_gap(&[0.0; 5]).unwrap();
        assert!((gap - 3.0).abs() < 1e-9, "{gap}");
        let xs = q.minimizer().unwrap().to_vec();
        let suite = OracleSuite::new(q);
        let mut g = vec![0.0; 5];
        suite.global_grad(&xs, &mut g);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn solver_matches_known_system() {
        let x = solve(2, vec![2.0, 1.0, 1.0, 3.0], vec![3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-14 && (x[1] - 1.4).abs() < 1e-14);
    }
}
