//! Mean and spread across seeds on a shared sample-count grid.

use crate::algorithms::RecordRow;

use super::ExperimentError;

/// Number of log-spaced grid points.
pub const GRID_POINTS: usize = 200;

/// `(mean, population std)` of one metric at one grid point.
pub type Stat = (f64, f64);

#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    pub samples: f64,
    pub grad_norm_sq: Stat,
    pub consensus_err: Stat,
    pub f_value: Stat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub fingerprint: String,
    pub runs: usize,
    pub points: Vec<GridPoint>,
}

/// Log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 || lo == hi {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| {
            if k == 0 {
                lo
            } else if k == n - 1 {
                hi
            } else {
                (a + (b - a) * k as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Piecewise-linear value of `metric` at sample count `g`. Among rows that
/// share a sample count, the latest wins.
pub fn interpolate(rows: &[RecordRow], g: f64, metric: fn(&RecordRow) -> f64) -> f64 {
    let k = rows.partition_point(|r| r.samples as f64 <= g);
    if k == 0 {
        return metric(&rows[0]);
    }
    let left = &rows[k - 1];
    if left.samples as f64 == g || k == rows.len() {
        return metric(left);
    }
    let right = &rows[k];
    let (x0, x1) = (left.samples as f64, right.samples as f64);
    let w = (g - x0) / (x1 - x0);
    metric(left) + w * (metric(right) - metric(left))
}

fn mean_std(v: &[f64]) -> Stat {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Resamples every run onto [`GRID_POINTS`] log-spaced sample counts between
/// the largest first-positive count and the smallest final count, then
/// reports mean and population standard deviation per point.
pub fn aggregate(runs: &[(String, Vec<RecordRow>)]) -> Result<Aggregate, ExperimentError> {
    let Some((fingerprint, _)) = runs.first() else {
        return Err(ExperimentError::Aggregate("no records to aggregate".into()));
    };
    if let Some((other, _)) = runs.iter().find(|(f, _)| f != fingerprint) {
        return Err(ExperimentError::Aggregate(format!(
            "records come from different configurations ({fingerprint} vs {other})"
        )));
    }
    let mut lo: f64 = 0.0;
    let mut hi = f64::INFINITY;
    for (_, rows) in runs {
        let Some(last) = rows.last() else {
            return Err(ExperimentError::Aggregate("record has no rows".into()));
        };
        if rows.windows(2).any(|w| w[1].samples < w[0].samples) {
            return Err(ExperimentError::Aggregate("sample counts decrease".into()));
        }
        let first = rows.iter().find(|r| r.samples > 0).map_or(0, |r| r.samples);
        lo = lo.max(first as f64);
        hi = hi.min(last.samples as f64);
    }
    let grid = if hi <= 0.0 {
        vec![0.0]
    } else if lo > hi {
        return Err(ExperimentError::Aggregate(format!(
            "runs do not overlap in sample count ({lo} > {hi})"
        )));
    } else {
        log_grid(lo.max(1.0).min(hi), hi, GRID_POINTS)
    };
    let stat = |g: f64, metric: fn(&RecordRow) -> f64| {
        let vals: Vec<f64> = runs
            .iter()
            .map(|(_, rows)| interpolate(rows, g, metric))
            .collect();
        mean_std(&vals)
    };
    let points = grid
        .into_iter()
        .map(|g| GridPoint {
            samples: g,
            grad_norm_sq: stat(g, |r| r.grad_norm_sq),
            consensus_err: stat(g, |r| r.consensus_err),
            f_value: stat(g, |r| r.f_value),
        })
        .collect();
    Ok(Aggregate {
        fingerprint: fingerprint.clone(),
        runs: runs.len(),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(points: &[(u64, f64)]) -> Vec<RecordRow> {
        points
            .iter()
            .enumerate()
            .map(|(k, &(s, v))| RecordRow {
                iter: k,
                samples: s,
                comm_rounds: 0,
                grad_norm_sq: v,
                consensus_err: v,
                f_value: v,
            })
            .collect()
    }

    #[test]
    fn single_and_identical_records_have_zero_std() {
        let c = curve(&[(0, 5.0), (10, 3.0), (100, 1.0)]);
        let a = aggregate(&[("f".into(), c.clone())]).unwrap();
        assert_eq!(a.points.len(), GRID_POINTS);
        assert!(a.points.iter().all(|p| p.grad_norm_sq.1 == 0.0));
        let b = aggregate(&[("f".into(), c.clone()), ("f".into(), c)]).unwrap();
        assert!(b.points.iter().all(|p| p.f_value.1 == 0.0));
        assert_eq!(b.points[0].samples, 10.0);
        assert_eq!(b.points.last().unwrap().samples, 100.0);
    }

    #[test]
    fn constant_curves_give_population_std() {
        let a = aggregate(&[
            ("f".into(), curve(&[(1, 1.0), (50, 1.0)])),
            ("f".into(), curve(&[(1, 3.0), (60, 3.0)])),
        ])
        .unwrap();
        for p in &a.points {
            assert_eq!(p.grad_norm_sq, (2.0, 1.0));
        }
    }

    #[test]
    fn refuses_mixed_fingerprints_and_empty_input() {
        assert!(aggregate(&[]).is_err());
        let c = curve(&[(1, 1.0)]);
        assert!(aggregate(&[("a".into(), c.clone()), ("b".into(), c)]).is_err());
    }

    #[test]
    fn interpolation_is_piecewise_linear() {
        let c = curve(&[(0, 0.0), (10, 10.0), (10, 4.0), (20, 24.0)]);
        assert_eq!(interpolate(&c, 5.0, |r| r.f_value), 5.0);
        assert_eq!(interpolate(&c, 10.0, |r| r.f_value), 4.0);
        assert_eq!(interpolate(&c, 15.0, |r| r.f_value), 14.0);
        assert_eq!(interpolate(&c, 99.0, |r| r.f_value), 24.0);
    }

    #[test]
    fn grid_is_log_spaced() {
        let g = log_grid(1.0, 100.0, 3);
        assert!((g[1] - 10.0).abs() < 1e-12);
        assert_eq!(g[2], 100.0);
    }
}
