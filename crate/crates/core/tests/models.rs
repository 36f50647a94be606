use camp_core::autodiff::gradcheck::check_gradients;
use camp_core::autodiff::{uniform, Tape};
use camp_core::graph::Graph;
use camp_core::models::{
    bind_params, bound_from_vars, camp_layer_forward, minibatch_logits, minibatch_loss,
    model_forward, AggregationScope, Arch, LayerParams, Minibatch, ModelConfig, ModelParams,
    NodeState,
};
use camp_core::scheduler::{layer_mask, LayerSchedule};
use camp_core::tensor::Tensor;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_graph(n: usize, p: f64, feat: usize, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let x = uniform(n, feat, 0.0, 1.0, &mut rng);
    Graph::from_edges(n, &edges, Some(x), (seed % 2) as usize, seed as usize).unwrap()
}

fn random_batches(n: usize, layers: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes: Vec<usize> = (0..n).collect();
    nodes.shuffle(&mut rng);
    let mut batches = vec![Vec::new(); layers];
    for (i, v) in nodes.into_iter().enumerate() {
        batches[i % layers].push(v);
    }
    batches
}

#[test]
fn all_nodes_every_layer_matches_sync() {
    for arch in [Arch::Gcn, Arch::Gin] {
        for scope in [
            AggregationScope::AllNeighbors,
            AggregationScope::BatchNeighbors,
        ] {
            let mut cfg = ModelConfig::new(arch, 3, 8);
            cfg.scope = scope;
            let params = ModelParams::init(&cfg, 4, 3, &mut ChaCha8Rng::seed_from_u64(1));
            let g = random_graph(9, 0.3, 4, 5);
            let camp = model_forward(&g, &LayerSchedule::full(9, 3), &params, &cfg).unwrap();
            cfg.sync = true;
            let sync = model_forward(&g, &LayerSchedule::full(9, 3), &params, &cfg).unwrap();
            for (a, b) in camp.data().iter().zip(sync.data()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn path_asymmetry_follows_schedule_direction() {
    // updates flow from node 4 to node 0 only when 4 is scheduled first
    let g = Graph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4)], None, 0, 0).unwrap();
    let mut cfg = ModelConfig::new(Arch::Gcn, 4, 1);
    cfg.dropout = 0.0;
    let layer = LayerParams::Gcn {
        weight: Tensor::identity(1),
        bias: Tensor::zeros(1, 1),
    };
    let output_at_head = |batches: &[Vec<usize>], tail: f64| {
        let sched = LayerSchedule::from_batches(5, batches.to_vec()).unwrap();
        let mut x = Tensor::filled(5, 1, 1.0);
        x.set(4, 0, tail);
        let mut h = NodeState::new(x);
        for l in 1..=4 {
            let mask = layer_mask(&sched, &g, l).unwrap();
            h = camp_layer_forward(&h, &g, &mask, &layer, &cfg, l).unwrap();
        }
        h.features.get(0, 0)
    };
    let bumped =
        |batches: Vec<Vec<usize>>| output_at_head(&batches, 1.5) - output_at_head(&batches, 1.0);
    assert!(bumped(vec![vec![4, 3], vec![2], vec![1], vec![0]]) > 0.0);
    assert_eq!(bumped(vec![vec![0, 1], vec![2], vec![3], vec![4]]), 0.0);
}

#[test]
fn full_model_gradients_match_finite_differences() {
    for arch in [Arch::Gcn, Arch::Gin] {
        let mut cfg = ModelConfig::new(arch, 4, 16);
        cfg.dropout = 0.0;
        let params = ModelParams::init(&cfg, 3, 2, &mut ChaCha8Rng::seed_from_u64(2));
        let graphs: Vec<Graph> = (0..2).map(|s| random_graph(10, 0.35, 3, 10 + s)).collect();
        let scheds: Vec<LayerSchedule> = (0..2)
            .map(|s| LayerSchedule::from_batches(10, random_batches(10, 4, s)).unwrap())
            .collect();
        let items: Vec<_> = graphs.iter().zip(&scheds).collect();
        let mb = Minibatch::new(&items, &params, &cfg).unwrap();
        let inputs: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
        let report = check_gradients(&inputs, &Tensor::scalar(1.0), 1e-5, 400, |tape, vars| {
            let bound = bound_from_vars(&params, vars);
            minibatch_loss(tape, &bound, &mb, None).unwrap()
        });
        assert!(report.entries_checked >= 100, "{}", report.entries_checked);
        assert!(
            report.max_rel_error < 1e-4,
            "{arch}: {}",
            report.max_rel_error
        );
    }
}

#[test]
fn minibatch_logits_match_single_graph_forward() {
    let cfg = ModelConfig::new(Arch::Gin, 3, 6);
    let params = ModelParams::init(&cfg, 2, 3, &mut ChaCha8Rng::seed_from_u64(3));
    let graphs: Vec<Graph> = (0..3)
        .map(|s| random_graph(5 + s as usize, 0.5, 2, s))
        .collect();
    let scheds: Vec<LayerSchedule> = graphs
        .iter()
        .enumerate()
        .map(|(i, g)| {
            LayerSchedule::from_batches(g.n(), random_batches(g.n(), 3, i as u64)).unwrap()
        })
        .collect();
    let items: Vec<_> = graphs.iter().zip(&scheds).collect();
    let mb = Minibatch::new(&items, &params, &cfg).unwrap();
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, &params);
    let logits = minibatch_logits(&mut tape, &bound, &mb, None).unwrap();
    let logits = tape.value(logits);
    for (i, (g, s)) in items.iter().enumerate() {
        let single = model_forward(g, s, &params, &cfg).unwrap();
        for (a, b) in single.data().iter().zip(logits.row(i)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn relabeling_nodes_leaves_logits_unchanged(seed in 0u64..1000, n in 2usize..9, gin in any::<bool>()) {
        let arch = if gin { Arch::Gin } else { Arch::Gcn };
        let cfg = ModelConfig::new(arch, 3, 5);
        let params = ModelParams::init(&cfg, 2, 2, &mut ChaCha8Rng::seed_from_u64(seed));
        let g = random_graph(n, 0.4, 2, seed);
        let batches = random_batches(n, 3, seed + 1);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed + 2));
        let g2 = g.relabeled(&perm);
        let batches2: Vec<Vec<usize>> = batches.iter().map(|b| b.iter().map(|&v| perm[v]).collect()).collect();
        let a = model_forward(&g, &LayerSchedule::from_batches(n, batches).unwrap(), &params, &cfg).unwrap();
        let b = model_forward(&g2, &LayerSchedule::from_batches(n, batches2).unwrap(), &params, &cfg).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }
}
