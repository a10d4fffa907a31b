use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dopt_core::algorithms::RecordRow;
use dopt_core::algorithms::{
    dnss_run_observed, dnss_vr_run_observed, DnssConfig, DnssVrConfig, InitialRounds, RunOptions,
};
use dopt_core::allocation::{
    mean_stats, mse_bound, optimal_batches, qm_batches, theorem1_batches, uniform_batches,
    NoiseProfile,
};
use dopt_core::consensus::{rho, FastMix};
use dopt_core::data::{
    parse_libsvm, partition, write_libsvm, PartitionScheme, SparseDataset, SparseRow,
};
use dopt_core::experiment::aggregate;
use dopt_core::oracles::{
    distributed_hard_instance, quadratic_suite, HardInstanceParams, QuadraticParams, QuadraticSpec,
};
use dopt_core::topology::{build_graph, metropolis_weights, spectral_gap, Graph, TopologySpec};
use dopt_core::{Execution, NodeMatrix};

fn topology() -> impl Strategy<Value = TopologySpec> {
    prop_oneof![
        (2usize..=16).prop_map(|m| TopologySpec::Ring { m }),
        (2usize..=16).prop_map(|m| TopologySpec::Path { m }),
        (1usize..=16).prop_map(|m| TopologySpec::Complete { m }),
        (2usize..=16, 0.2f64..0.9, any::<u64>())
            .prop_map(|(m, edge_prob, seed)| TopologySpec::ErdosRenyi { m, edge_prob, seed }),
    ]
}

fn sigmas(max_m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.1f64..10.0, 1..=max_m)
}

fn matrix(m: usize, d: usize, seed: u64) -> NodeMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    NodeMatrix::from_vec(
        m,
        d,
        (0..m * d).map(|_| rng.random_range(-5.0..5.0)).collect(),
    )
}

fn graph_from_mask(m: usize, mask: &[bool]) -> Option<Graph> {
    let mut edges = Vec::new();
    let mut k = 0;
    for i in 0..m {
        for j in (i + 1)..m {
            if mask[k] {
                edges.push((i, j));
            }
            k += 1;
        }
    }
    Graph::new(m, &edges).ok().filter(|g| g.is_connected())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metropolis_weights_are_doubly_stochastic(spec in topology()) {
        let g = build_graph(&spec).unwrap();
        let w = metropolis_weights(&g).unwrap();
        let m = w.nodes();
        for i in 0..m {
            let row: f64 = (0..m).map(|j| w.get(i, j)).sum();
            let col: f64 = (0..m).map(|j| w.get(j, i)).sum();
            prop_assert!((row - 1.0).abs() <= 1e-12);
            prop_assert!((col - 1.0).abs() <= 1e-12);
            for j in 0..m {
                prop_assert_eq!(w.get(i, j), w.get(j, i));
                prop_assert!(w.get(i, j) >= 0.0);
                let linked = i == j || g.has_edge(i, j);
                prop_assert_eq!(w.get(i, j) != 0.0, linked, "pattern at ({}, {})", i, j);
            }
        }
        if m > 1 {
            prop_assert!(w.chi() > 0.0 && w.lambda2() < 1.0);
        }
    }

    #[test]
    fn spectral_gap_matches_dense_eigensolver(
        m in 2usize..=12,
        mask in prop::collection::vec(any::<bool>(), 66),
    ) {
        let Some(g) = graph_from_mask(m, &mask) else { return Ok(()) };
        let w = metropolis_weights(&g).unwrap();
        let dense = nalgebra::DMatrix::from_row_slice(m, m, w.dense());
        let mut eig: Vec<f64> = dense.symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        prop_assert!((eig[0] - 1.0).abs() <= 1e-10);
        let (lambda2, chi) = spectral_gap(m, w.dense()).unwrap();
        prop_assert!((lambda2 - eig[1]).abs() <= 1e-8, "{} vs {}", lambda2, eig[1]);
        prop_assert!((chi - (1.0 - eig[1])).abs() <= 1e-8);
    }

    #[test]
    fn fastmix_preserves_mean_and_contracts(
        spec in topology(),
        d in 1usize..=8,
        rounds in 0usize..=40,
        seed in any::<u64>(),
    ) {
        let w = metropolis_weights(&build_graph(&spec).unwrap()).unwrap();
        let z0 = matrix(w.nodes(), d, seed);
        let mut z = z0.clone();
        let mut mixer = FastMix::new(&w, Execution::Sequential);
        mixer.mix(&mut z, rounds).unwrap();
        prop_assert_eq!(mixer.rounds_used(), rounds as u64);
        for (a, b) in z.mean_row().iter().zip(z0.mean_row()) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
        let bound = rho(rounds, w.chi()) * z0.consensus_error();
        prop_assert!(z.consensus_error() <= bound + 1e-12 * z0.frobenius_norm());
    }

    #[test]
    fn rho_is_decreasing_in_rounds(chi in 1e-4f64..=1.0, r in 0usize..200) {
        prop_assert!(rho(r + 1, chi) < rho(r, chi));
        prop_assert_eq!(rho(0, chi), 14f64.sqrt());
    }

    #[test]
    fn optimal_plan_satisfies_kkt(sig in sigmas(8), eps in 0.05f64..2.0) {
        let profile = NoiseProfile::new(sig.clone()).unwrap();
        let plan = optimal_batches(&profile, eps).unwrap();
        let am = sig.iter().sum::<f64>() / sig.len() as f64;
        prop_assert!((plan.total - am * am / (eps * eps)).abs() <= 1e-10 * plan.total);
        let mse = mse_bound(&profile, &plan.batches).unwrap();
        prop_assert!((mse - eps * eps).abs() <= 1e-10 * eps * eps);
        // stationarity: σ_i² / B_i² is the same multiplier at every node
        let mult: Vec<f64> = sig.iter().zip(&plan.batches).map(|(s, b)| s * s / (b * b)).collect();
        for v in &mult {
            prop_assert!((v - mult[0]).abs() <= 1e-10 * mult[0]);
        }
    }

    #[test]
    fn allocation_dominance(sig in sigmas(8), eps in 0.05f64..2.0) {
        let profile = NoiseProfile::new(sig.clone()).unwrap();
        let m = sig.len() as f64;
        let opt = optimal_batches(&profile, eps).unwrap().total;
        let stats = mean_stats(&profile);
        prop_assert!(stats.am <= stats.qm * (1.0 + 1e-12));
        prop_assert!(stats.p23 <= stats.am * (1.0 + 1e-12));
        // real-valued totals: AM²/ε² ≤ QM²/ε² ≤ max²/ε²
        let qm_real = stats.qm * stats.qm / (eps * eps);
        let max = sig.iter().cloned().fold(0.0, f64::max);
        prop_assert!(opt <= qm_real * (1.0 + 1e-12));
        prop_assert!(qm_real <= max * max / (eps * eps) * (1.0 + 1e-12));
        let qm = qm_batches(&profile, eps).unwrap().total() as f64;
        let uni = uniform_batches(&profile, eps).unwrap().total() as f64;
        prop_assert!(opt <= qm + m);
        prop_assert!(qm <= uni + m);
        for plan in [qm_batches(&profile, eps).unwrap(), uniform_batches(&profile, eps).unwrap()] {
            let b: Vec<f64> = plan.batches.iter().map(|&b| b as f64).collect();
            prop_assert!(plan.batches.iter().all(|&b| b >= 1));
            prop_assert!(mse_bound(&profile, &b).unwrap() <= eps * eps * (1.0 + 1e-12));
        }
        let t1 = theorem1_batches(&profile, eps).unwrap();
        prop_assert!(t1.batches.iter().all(|&b| b >= 1));
        prop_assert!(t1.mse_bound(&profile) <= eps * eps / 16.0 * (1.0 + 1e-12));
    }

    #[test]
    fn global_gradient_is_mean_of_local(
        m in 1usize..=6,
        d in 1usize..=6,
        seed in any::<u64>(),
    ) {
        let params = QuadraticParams {
            nodes: m, dim: d, smoothness: 2.0, mu: 0.1, delta: 1.0, heterogeneity: 1.0, seed,
        };
        let suite = quadratic_suite(QuadraticSpec::random(&params, vec![1.0; m]).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut g = vec![0.0; d];
        suite.global_grad(&x, &mut g);
        let mut acc = vec![0.0; d];
        let mut gi = vec![0.0; d];
        for i in 0..m {
            suite.local_grad(i, &x, &mut gi);
            for k in 0..d {
                acc[k] += gi[k] / m as f64;
            }
        }
        for k in 0..d {
            prop_assert!((acc[k] - g[k]).abs() <= 1e-12 * (1.0 + g[k].abs()));
        }
    }

    #[test]
    fn quadratic_gradient_is_lipschitz(
        m in 1usize..=5,
        d in 1usize..=8,
        smoothness in 0.5f64..5.0,
        seed in any::<u64>(),
    ) {
        let params = QuadraticParams {
            nodes: m, dim: d, smoothness, mu: 0.05, delta: 1.0, heterogeneity: 2.0, seed,
        };
        let suite = quadratic_suite(QuadraticSpec::random(&params, vec![0.5; m]).unwrap()).unwrap();
        let l = suite.problem().smoothness();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        for _ in 0..5 {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (mut gx, mut gy) = (vec![0.0; d], vec![0.0; d]);
            suite.global_grad(&x, &mut gx);
            suite.global_grad(&y, &mut gy);
            let dg: f64 = gx.iter().zip(&gy).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let dx: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            prop_assert!(dg <= l * dx * (1.0 + 1e-10) + 1e-12);
        }
    }

    #[test]
    fn libsvm_round_trip(
        rows in prop::collection::vec(
            (any::<bool>(), prop::collection::btree_map(0u32..40, -1e6f64..1e6, 0..8)),
            0..20,
        ),
    ) {
        let mut ds = SparseDataset { dim: 40, ..Default::default() };
        for (label, entries) in rows {
            ds.labels.push(if label { 1.0 } else { -1.0 });
            ds.rows.push(SparseRow {
                indices: entries.keys().copied().collect(),
                values: entries.values().copied().collect(),
            });
        }
        let back = parse_libsvm(write_libsvm(&ds).as_bytes(), Some(40)).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn tracking_identity_and_counters(
        spec in (2usize..=8).prop_flat_map(|m| prop_oneof![
            Just(TopologySpec::Ring { m }),
            Just(TopologySpec::Path { m }),
            Just(TopologySpec::Complete { m }),
        ]),
        d in 1usize..=4,
        rounds in 0usize..4,
        p in 0.05f64..=1.0,
        q in 0.05f64..=1.0,
        seed in any::<u64>(),
    ) {
        let w = metropolis_weights(&build_graph(&spec).unwrap()).unwrap();
        let m = w.nodes();
        let params = QuadraticParams {
            nodes: m, dim: d, smoothness: 1.0, mu: 0.2, delta: 1.0, heterogeneity: 1.0, seed,
        };
        let spec = QuadraticSpec::random(&params, (1..=m).map(|i| i as f64).collect()).unwrap();
        let cfg = DnssVrConfig {
            eta: 0.3,
            batches: (1..=m as u64).collect(),
            minibatch: 2,
            p,
            q,
            iterations: 30,
            initial_rounds: InitialRounds::Fixed(1),
            rounds,
        };
        let suite = quadratic_suite(spec.clone()).unwrap();
        let mut worst: f64 = 0.0;
        let mut last = (0u64, 0u64);
        let mut monotone = true;
        let mut expected = 0u64;
        let rec = dnss_vr_run_observed(&suite, &w, &cfg, seed, &RunOptions::default(), &mut |v| {
            let (s, y) = (v.s.mean_row(), v.y.mean_row());
            let diff: f64 = s.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let scale: f64 = y.iter().map(|a| a * a).sum::<f64>().sqrt();
            worst = worst.max(diff / scale.max(1e-300));
            monotone &= v.samples >= last.0 && v.comm_rounds >= last.1;
            last = (v.samples, v.comm_rounds);
            expected = v.samples;
        }).unwrap();
        prop_assert!(worst <= 1e-9, "tracking gap {}", worst);
        prop_assert!(monotone);
        prop_assert_eq!(rec.total_samples(), suite.total_samples());
        prop_assert_eq!(rec.total_samples(), expected);
        prop_assert_eq!(rec.samples_per_node.clone(), suite.sample_counts());
        for pair in rec.rows.windows(2) {
            prop_assert!(pair[1].samples >= pair[0].samples);
            prop_assert!(pair[1].comm_rounds >= pair[0].comm_rounds);
        }

        let dn = DnssConfig {
            eta: 0.3,
            batches: cfg.batches.clone(),
            iterations: 30,
            initial_rounds: InitialRounds::Fixed(1),
            rounds,
        };
        let suite = quadratic_suite(spec).unwrap();
        let rec = dnss_run_observed(&suite, &w, &dn, seed, &RunOptions::default(), &mut |_| {}).unwrap();
        prop_assert_eq!(rec.total_samples(), 30 * dn.batches.iter().sum::<u64>());
        prop_assert_eq!(rec.rows.last().unwrap().comm_rounds, 2 * (1 + 29 * rounds as u64));
    }

    #[test]
    fn aggregate_of_identical_runs_has_zero_spread(
        steps in prop::collection::vec((1u64..50, 0.0f64..10.0), 2..20),
        copies in 1usize..5,
    ) {
        let mut samples = 0;
        let rows: Vec<RecordRow> = steps
            .iter()
            .enumerate()
            .map(|(i, &(ds, g))| {
                samples += ds;
                RecordRow {
                    iter: i,
                    samples,
                    comm_rounds: 2 * i as u64,
                    grad_norm_sq: g,
                    consensus_err: g / 2.0,
                    f_value: -g,
                }
            })
            .collect();
        let runs = vec![("fp".to_string(), rows.clone()); copies];
        let agg = aggregate(&runs).unwrap();
        prop_assert_eq!(agg.points.len(), 200);
        let lo = rows[0].samples as f64;
        let hi = rows.last().unwrap().samples as f64;
        let (min, max) = rows.iter().fold((f64::MAX, f64::MIN), |(a, b), r| {
            (a.min(r.grad_norm_sq), b.max(r.grad_norm_sq))
        });
        for pair in agg.points.windows(2) {
            prop_assert!(pair[1].samples > pair[0].samples);
        }
        for p in &agg.points {
            prop_assert!(p.samples >= lo * (1.0 - 1e-12) && p.samples <= hi * (1.0 + 1e-12));
            prop_assert!(p.grad_norm_sq.1 <= 1e-12 * (1.0 + p.grad_norm_sq.0.abs()));
            prop_assert!(p.grad_norm_sq.0 >= min - 1e-12 && p.grad_norm_sq.0 <= max + 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn zero_chain_progress_is_bounded_by_successes(
        sig in prop::collection::vec(0.5f64..4.0, 1..=3),
        seed in any::<u64>(),
        rounds in 1usize..3,
    ) {
        let m = sig.len();
        let total: f64 = sig.iter().sum();
        let suite = distributed_hard_instance(&HardInstanceParams {
            smoothness: 1.0,
            eps: 0.05,
            delta: 400.0,
            shares: sig.iter().map(|s| s / total).collect(),
            sigmas: sig,
        })
        .unwrap();
        let w = if m == 1 {
            dopt_core::topology::MixingMatrix::averaging(1)
        } else {
            metropolis_weights(&build_graph(&TopologySpec::Path { m }).unwrap()).unwrap()
        };
        let cfg = DnssConfig {
            eta: 0.5,
            batches: vec![1; m],
            iterations: 40,
            initial_rounds: InitialRounds::Fixed(rounds),
            rounds,
        };
        let hard = suite.problem();
        let mut ok = true;
        let mut moved = 0;
        dnss_run_observed(&suite, &w, &cfg, seed, &RunOptions::default(), &mut |v| {
            for i in 0..m {
                let successes = hard.successes(i) as usize;
                for j in 0..m {
                    let prog = hard.block_progress(i, v.x.row(j));
                    moved = moved.max(prog);
                    ok &= prog <= successes;
                }
            }
        })
        .unwrap();
        prop_assert!(ok);
        prop_assert!(moved > 0, "trajectory never left the origin");
    }
}

#[test]
fn partitions_cover_all_rows_exhaustively() {
    for n in 0..=12usize {
        for nodes in 1..=4usize {
            let ds = SparseDataset {
                dim: 1,
                rows: vec![SparseRow::default(); n],
                labels: (0..n)
                    .map(|i| if i % 3 == 0 { 1.0 } else { -1.0 })
                    .collect(),
            };
            for scheme in [
                PartitionScheme::UniformShuffle,
                PartitionScheme::LabelSorted,
            ] {
                match partition(&ds, nodes, scheme, 7) {
                    Ok(plan) => {
                        let mut seen = vec![false; n];
                        for part in &plan.assignment {
                            assert!(!part.is_empty());
                            for &r in part {
                                assert!(!seen[r], "row {r} assigned twice");
                                seen[r] = true;
                            }
                        }
                        assert!(seen.iter().all(|&s| s));
                        assert_eq!(plan.assignment.len(), nodes);
                    }
                    Err(_) => assert!(nodes > n, "n = {n}, nodes = {nodes} should split"),
                }
            }
        }
    }
}
