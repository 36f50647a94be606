use camp_core::centrality::CentralityMeasure;
use camp_core::experiment::{
    aggregate, aggregate_rows, read_trials_csv, run_experiment, run_trial, sweep, write_run,
    ConfigError, ExperimentConfig, ExperimentError, Prepared, RunMode, SweepGrid,
};
use camp_core::graph::{Dataset, Graph};
use camp_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Ten small graphs, each with its own one-hot feature so labels can be
/// memorized.
fn toy_dataset() -> Dataset {
    let n_graphs = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let graphs = (0..n_graphs)
        .map(|i| {
            let n = rng.gen_range(3..7);
            let edges: Vec<_> = (1..n).map(|v| (rng.gen_range(0..v), v)).collect();
            let mut x = Tensor::zeros(n, n_graphs);
            for v in 0..n {
                x.set(v, i, 1.0);
            }
            Graph::from_edges(n, &edges, Some(x), i % 2, i).unwrap()
        })
        .collect();
    Dataset {
        name: "toy".into(),
        graphs,
        num_classes: 2,
        feature_dim: n_graphs,
    }
}

/// Forty random graphs whose label is whether they have more than six nodes.
fn sized_dataset() -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let graphs = (0..40)
        .map(|i| {
            let n = rng.gen_range(3..11);
            let edges: Vec<_> = (1..n).map(|v| (rng.gen_range(0..v), v)).collect();
            Graph::from_edges(
                n,
                &edges,
                Some(Tensor::filled(n, 1, 1.0)),
                usize::from(n > 6),
                i,
            )
            .unwrap()
        })
        .collect();
    Dataset {
        name: "sized".into(),
        graphs,
        num_classes: 2,
        feature_dim: 1,
    }
}

fn small_cfg() -> ExperimentConfig {
    ExperimentConfig {
        layers: 2,
        hidden_dim: 8,
        epochs: 5,
        trials: 3,
        batch_size: 8,
        threads: 1,
        ..ExperimentConfig::default()
    }
}

#[test]
fn sync_single_layer_memorizes_toy_set() {
    let cfg = ExperimentConfig {
        layers: 1,
        hidden_dim: 16,
        epochs: 200,
        trials: 1,
        threads: 1,
        ..ExperimentConfig::default()
    };
    let prepared = Prepared::new(toy_dataset(), None).unwrap();
    let r = run_trial(&cfg, &prepared, 0).unwrap();
    assert!(r.succeeded());
    assert_eq!(r.curves.last().unwrap().train_acc, 1.0);
}

#[test]
fn trials_are_deterministic() {
    let mut cfg = small_cfg();
    cfg.mode = RunMode::Camp;
    cfg.measure = Some(CentralityMeasure::Degree);
    cfg.p = 0.5;
    let prepared = Prepared::new(sized_dataset(), cfg.measure).unwrap();
    let a = run_trial(&cfg, &prepared, 1).unwrap();
    let b = run_trial(&cfg, &prepared, 1).unwrap();
    assert_eq!(a, b);
    let c = run_trial(&cfg, &prepared, 2).unwrap();
    assert_ne!(a.curves, c.curves);
}

#[test]
fn camp_without_measure_is_a_config_error() {
    let mut cfg = small_cfg();
    cfg.mode = RunMode::Camp;
    let prepared = Prepared::new(sized_dataset(), None).unwrap();
    assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
    assert!(matches!(
        run_experiment(&cfg, &prepared),
        Err(ExperimentError::Config(_))
    ));
}

#[test]
fn aggregate_recomputed_from_csv_matches_summary() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_cfg();
    cfg.save_checkpoint = true;
    let ds = sized_dataset();
    let prepared = Prepared::new(ds.clone(), None).unwrap();
    let outcome = run_experiment(&cfg, &prepared).unwrap();
    let out = write_run(dir.path(), &cfg, &ds, &outcome).unwrap();

    let rows = read_trials_csv(&out.join("trials.csv")).unwrap();
    assert_eq!(rows.len(), cfg.trials);
    let recomputed = aggregate_rows(&rows).unwrap();
    assert_eq!(Some(&recomputed), outcome.aggregate.as_ref());

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["aggregate"]["mean"].as_f64(), Some(recomputed.mean));
    assert_eq!(
        summary["aggregate"]["scaled_std"].as_f64(),
        Some(recomputed.scaled_std)
    );

    let cfg_text = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert_eq!(ExperimentConfig::parse(&cfg_text).unwrap(), cfg);
    assert!(out.join("figure_data/curves.csv").is_file());
    for t in 0..cfg.trials {
        assert!(out.join(format!("checkpoints/trial{t}.bin")).is_file());
    }
}

#[test]
fn single_point_sweep_equals_run_and_aggregate() {
    let mut cfg = small_cfg();
    cfg.mode = RunMode::Camp;
    cfg.measure = Some(CentralityMeasure::Closeness);
    let ds = sized_dataset();
    let rows = sweep(&cfg, &SweepGrid::default(), &ds).unwrap();
    assert_eq!(rows.len(), 1);

    let prepared = Prepared::new(ds, cfg.measure).unwrap();
    let outcome = run_experiment(&cfg, &prepared).unwrap();
    assert_eq!(
        rows[0].aggregate,
        Some(aggregate(&outcome.results).unwrap())
    );
}

#[test]
fn sweep_grid_expands_every_combination() {
    let mut grid = SweepGrid::default();
    grid.add_axis("p=0.25,0.5,0.75,1.0").unwrap();
    grid.add_axis("L=4,10").unwrap();
    let mut cfg = small_cfg();
    cfg.mode = RunMode::Camp;
    cfg.measure = Some(CentralityMeasure::Degree);
    let points = grid.points(&cfg);
    assert_eq!(points.len(), 8);
    assert!(points.iter().any(|c| c.p == 0.25 && c.layers == 10));
    assert!(grid.add_axis("width=3").is_err());
}
