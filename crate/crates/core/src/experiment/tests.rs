use super::*;

fn quad_config(dir: &Path) -> ExperimentConfig {
    let text = format!(
        r#"
eps = 0.5
seeds = [1, 2, 3]
output = "{}"

[problem]
kind = "quadratic"
dim = 10
smoothness = 1.0
mu = 0.5
delta = 1.0
heterogeneity = 0.5

[topology]
kind = "ring"
m = 4

[noise.schedule]
kind = "explicit"
values = [1.0, 2.0, 3.0, 4.0]

[algorithm]
name = "dnss"
"#,
        dir.display()
    );
    ExperimentConfig::from_toml(&text).unwrap()
}

#[test]
fn same_seed_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quad_config(dir.path());
    let a = write_record(&run_experiment(&cfg, 7).unwrap());
    let b = write_record(&run_experiment(&cfg, 7).unwrap());
    assert_eq!(a, b);
    assert!(a.starts_with("# fingerprint="));
    assert!(!a.contains('\r'));
    let header = a.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, csv::RECORD_HEADER);
    let seq = prepare(&cfg)
        .unwrap()
        .run_seed(7, Execution::Sequential)
        .unwrap();
    assert_eq!(write_record(&seq), a);
}

#[test]
fn record_round_trips_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let tagged = run_experiment(&quad_config(dir.path()), 1).unwrap();
    let (fp, rows) = read_record(&write_record(&tagged)).unwrap();
    assert_eq!(fp, tagged.fingerprint);
    assert_eq!(rows.len(), tagged.record.rows.len());
    for (a, b) in rows.iter().zip(&tagged.record.rows) {
        assert_eq!(a.samples, b.samples);
        assert!((a.grad_norm_sq - b.grad_norm_sq).abs() <= 1e-14 * b.grad_norm_sq.abs());
    }
}

#[test]
fn tiny_budget_keeps_only_the_initial_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quad_config(dir.path());
    cfg.max_samples = Some(10);
    let r = run_experiment(&cfg, 1).unwrap().record;
    assert!(r.truncated);
    assert_eq!(r.rows.len(), 1);
    assert_eq!(r.rows[0].iter, 0);
}

#[test]
fn run_command_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quad_config(dir.path());
    cfg.algorithm.iterations = Some(20);
    let files = run_command(&cfg, Execution::default()).unwrap();
    assert_eq!(files.len(), 4);
    for f in &files {
        assert!(f.exists(), "{}", f.display());
    }
    let agg = std::fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
    assert!(agg.lines().nth(1).unwrap().starts_with("samples,runs"));
}

#[test]
fn sweep_uses_per_algorithm_schedules() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quad_config(dir.path());
    cfg.seeds = vec![1];
    cfg.algorithm.rounds_scale = 0.2;
    cfg.max_samples = Some(200_000);
    let out = sweep_command(
        &cfg,
        &[
            AlgorithmKind::Dnss,
            AlgorithmKind::GtSa,
            AlgorithmKind::Dsgt,
        ],
        Execution::default(),
    )
    .unwrap();
    assert_eq!(out.len(), 3);
    assert!(dir.path().join("aggregate-gt_sa.csv").exists());
    assert!(dir.path().join("dsgt-seed1.csv").exists());
}

#[test]
fn allocate_and_mixinfo_examples() {
    let text = r#"
eps = 1.0
seeds = [0]
[problem]
kind = "quadratic"
dim = 2
smoothness = 1.0
mu = 1.0
delta = 1.0
[topology]
kind = "path"
m = 2
[noise.schedule]
kind = "explicit"
values = [1.0, 3.0]
[algorithm]
name = "dnss"
"#;
    let cfg = ExperimentConfig::from_toml(text).unwrap();
    let table = allocation_table(&cfg).unwrap();
    let total = table.lines().last().unwrap();
    assert_eq!(total, "total,,4,64,10,6");
    let info = mix_info(&ExperimentConfig {
        topology: crate::topology::TopologySpec::Path { m: 3 },
        noise: NoiseConfig {
            schedule: SigmaSchedule::Explicit {
                values: vec![1.0; 3],
            },
            pilot: None,
        },
        ..cfg
    })
    .unwrap();
    assert!(info.contains("chi=0.333333333333333"), "{info}");
}

#[test]
fn stage_names_appear_in_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quad_config(dir.path());
    cfg.problem = ProblemConfig::Logistic {
        path: dir.path().join("missing.txt"),
        dim: None,
        max_rows: None,
        partition: crate::data::PartitionScheme::UniformShuffle,
        partition_seed: 0,
        reg: 1e-4,
    };
    let err = prepare(&cfg).unwrap_err().to_string();
    assert!(err.starts_with("data:"), "{err}");
    cfg = quad_config(dir.path());
    cfg.topology = crate::topology::TopologySpec::ErdosRenyi {
        m: 4,
        edge_prob: 2.0,
        seed: 0,
    };
    assert!(prepare(&cfg)
        .unwrap_err()
        .to_string()
        .starts_with("topology:"));
}

#[test]
fn logistic_pipeline_with_pilot() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy.txt");
    let mut text = String::new();
    for k in 0..40 {
        let label = if k % 3 == 0 { "-1" } else { "+1" };
        text.push_str(&format!(
            "{label} 1:{} 3:{}\n",
            (k % 5) as f64 / 5.0,
            (k % 7) as f64 / 7.0
        ));
    }
    std::fs::write(&data, text).unwrap();
    let mut cfg = quad_config(dir.path());
    cfg.problem = ProblemConfig::Logistic {
        path: data,
        dim: Some(4),
        max_rows: None,
        partition: crate::data::PartitionScheme::LabelSorted,
        partition_seed: 0,
        reg: 1e-4,
    };
    cfg.noise.pilot = Some(20);
    cfg.algorithm.iterations = Some(5);
    let r = run_experiment(&cfg, 3).unwrap().record;
    assert_eq!(r.rows[0].samples, 80);
    assert_eq!(r.iterations, 5);
}

#[test]
fn hard_instance_pipeline_and_demo() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quad_config(dir.path());
    cfg.eps = 0.05;
    cfg.problem = ProblemConfig::HardInstance {
        smoothness: 1.0,
        delta: 20.0,
        shares: None,
    };
    cfg.algorithm.iterations = Some(5);
    cfg.algorithm.rounds_scale = 0.1;
    let r = run_experiment(&cfg, 3).unwrap().record;
    assert_eq!(r.iterations, 5);

    let mut params = DemoParams::new(0.1, vec![1.0, 2.0]);
    params.trials = 20;
    let s = lowerbound_demo(&params, Execution::default()).unwrap();
    assert!(s.iterations > 0);
    for n in &s.nodes {
        assert!((n.draws as f64) < n.threshold);
        assert_eq!(n.chain, 32);
    }
    assert!(s.to_csv().contains("node,chain"));
}
