use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::graph::Graph;
use crate::models::forward::bind_layer;
use crate::models::{
    forward_layers, layer_plans, BoundLayer, LayerParams, ModelConfig, ModelError,
};
use crate::scheduler::LayerSchedule;
use crate::tensor::Tensor;

use super::{normalized_total_resistance, DiagnosticsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalPropEntry {
    pub graph_id: usize,
    pub r_total_normalized: f64,
    pub signal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalPropReport {
    pub layers: usize,
    pub num_sources: usize,
    pub entries: Vec<SignalPropEntry>,
}

/// Distance-weighted spread of `h` away from `source`: each feature column
/// is normalized to unit L2 norm, then values at nodes `u ≠ source` are
/// weighted by `d(u, source)` and summed, scaled by `1/(p · ecc(source))`.
/// Nodes outside the source's component do not contribute.
pub fn propagated_signal(h: &Tensor, g: &Graph, source: usize) -> f64 {
    let dist = g.bfs_distances(source);
    let ecc = dist.iter().flatten().copied().max().unwrap_or(0);
    if ecc == 0 {
        return 0.0;
    }
    let p = h.cols();
    let mut total = 0.0;
    for j in 0..p {
        let norm = (0..h.rows())
            .map(|u| h.get(u, j).powi(2))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 {
            continue;
        }
        for (u, d) in dist.iter().enumerate() {
            if let Some(d) = d {
                if u != source {
                    total += h.get(u, j) / norm * *d as f64;
                }
            }
        }
    }
    total / (p as f64 * ecc as f64)
}

/// Runs a freshly initialized layer stack (biases zero) from a single
/// random source and averages [`propagated_signal`] over `num_sources`
/// sources drawn from nodes in components with at least two nodes.
pub fn signal_propagation(
    g: &Graph,
    sched: &LayerSchedule,
    cfg: &ModelConfig,
    num_sources: usize,
    seed: u64,
) -> Result<SignalPropEntry, DiagnosticsError> {
    if sched.num_layers() != cfg.layers {
        return Err(ModelError::LayerCount {
            schedule: sched.num_layers(),
            config: cfg.layers,
            params: cfg.layers,
        }
        .into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = cfg.hidden_dim;
    let layers: Vec<LayerParams> = (0..cfg.layers)
        .map(|_| LayerParams::init(cfg.arch, p, &mut rng))
        .collect();
    let plans = layer_plans(g, sched, cfg)?;
    let eligible: Vec<usize> = (0..g.n()).filter(|&v| g.degree(v) > 0).collect();
    let mut signal = 0.0;
    if !eligible.is_empty() {
        for _ in 0..num_sources {
            let source = eligible[rng.gen_range(0..eligible.len())];
            let mut x = Tensor::zeros(g.n(), p);
            for k in 0..p {
                x.set(source, k, rng.gen_range(0.0..1.0));
            }
            let mut tape = Tape::new();
            let bound: Vec<BoundLayer> = layers.iter().map(|l| bind_layer(&mut tape, l)).collect();
            let h0 = tape.leaf(x);
            let states = forward_layers(&mut tape, h0, &plans, &bound, None)?;
            signal += propagated_signal(tape.value(*states.last().unwrap()), g, source);
        }
        signal /= num_sources as f64;
    }
    Ok(SignalPropEntry {
        graph_id: g.graph_id(),
        r_total_normalized: normalized_total_resistance(g),
        signal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::*;
    use crate::models::Arch;

    #[test]
    fn no_layers_means_no_spread() {
        let g = path(4);
        let mut h = Tensor::zeros(4, 3);
        h.row_mut(1).copy_from_slice(&[0.2, 0.5, 0.9]);
        assert_eq!(propagated_signal(&h, &g, 1), 0.0);
    }

    #[test]
    fn spread_by_hand() {
        // column normalized to (0, 0.6, 0.8); distances 0, 1, 2; ecc 2
        let h = Tensor::from_rows(&[[0.0], [3.0], [4.0]]);
        let s = propagated_signal(&h, &path(3), 0);
        assert!((s - (0.6 + 1.6) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_edge_reaches_neighbour() {
        let cfg = ModelConfig::new(Arch::Gcn, 1, 8);
        let e = signal_propagation(&path(2), &LayerSchedule::full(2, 1), &cfg, 10, 3).unwrap();
        assert!(e.signal > 0.0);
        assert!((e.r_total_normalized - 1.0).abs() < 1e-12);
    }

    #[test]
    fn isolated_nodes_give_zero() {
        let cfg = ModelConfig::new(Arch::Gin, 1, 4);
        let e =
            signal_propagation(&graph(3, &[]), &LayerSchedule::full(3, 1), &cfg, 10, 3).unwrap();
        assert_eq!(e.signal, 0.0);
    }
}
