use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::graph::Graph;
use crate::models::{bind_params, encode, forward_layers, layer_plans, ModelConfig, ModelParams};
use crate::scheduler::LayerSchedule;
use crate::tensor::Tensor;

use super::{product_vs_power, DiagnosticsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPair {
    pub u: usize,
    pub v: usize,
    pub distance: usize,
    /// Entrywise L1 norm of `∂h_v^(l) / ∂h_u^(0)`.
    pub jacobian_l1: f64,
    /// `(c·w·p)^l`.
    pub model_factor: f64,
    /// `(Π_j S̃^(j))_uv`.
    pub product_entry: f64,
}

impl SensitivityPair {
    pub fn bound(&self) -> f64 {
        self.model_factor * self.product_entry
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub graph_id: usize,
    pub layer: usize,
    pub c: f64,
    pub w: f64,
    pub width: usize,
    pub pairs: Vec<SensitivityPair>,
}

fn check_layer(l: usize, cfg: &ModelConfig) -> Result<(), DiagnosticsError> {
    if l > cfg.layers {
        return Err(DiagnosticsError::Layer {
            layer: l,
            layers: cfg.layers,
        });
    }
    Ok(())
}

/// `‖∂h_v^(l) / ∂h_u^(0)‖₁` for every `u`, where `h^(0)` is the encoder
/// output. One backward pass per output coordinate of `v`.
pub fn jacobian_norms_to(
    g: &Graph,
    sched: &LayerSchedule,
    params: &ModelParams,
    cfg: &ModelConfig,
    v: usize,
    l: usize,
) -> Result<Vec<f64>, DiagnosticsError> {
    check_layer(l, cfg)?;
    if v >= g.n() {
        return Err(DiagnosticsError::Node { node: v, n: g.n() });
    }
    let plans = layer_plans(g, sched, cfg)?;
    let x = g
        .features()
        .ok_or(crate::models::ModelError::MissingFeatures(g.graph_id()))?;
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, params);
    let xv = tape.leaf(x.clone());
    let h0_value = {
        let enc = encode(&mut tape, xv, &bound)?;
        tape.value(enc).clone()
    };
    let h0 = tape.leaf(h0_value);
    let states = forward_layers(&mut tape, h0, &plans[..l], &bound.layers[..l], None)?;
    let out = states[l];
    let width = tape.value(out).cols();
    let mut norms = vec![0.0; g.n()];
    for j in 0..width {
        let mut seed = Tensor::zeros(g.n(), width);
        seed.set(v, j, 1.0);
        let grads = tape.backward_from(out, seed)?;
        if let Some(gh) = grads.get(h0) {
            for (u, norm) in norms.iter_mut().enumerate() {
                *norm += gh.row(u).iter().map(|x| x.abs()).sum::<f64>();
            }
        }
    }
    Ok(norms)
}

pub fn sensitivity_jacobian(
    g: &Graph,
    sched: &LayerSchedule,
    params: &ModelParams,
    cfg: &ModelConfig,
    u: usize,
    v: usize,
    l: usize,
) -> Result<f64, DiagnosticsError> {
    if u >= g.n() {
        return Err(DiagnosticsError::Node { node: u, n: g.n() });
    }
    let norm = jacobian_norms_to(g, sched, params, cfg, v, l)?[u];
    if g.bfs_distances(u)[v].map_or(true, |d| d > l) {
        assert_eq!(norm, 0.0, "influence beyond the receptive field");
    }
    Ok(norm)
}

/// Jacobian norms after `l` layers for every pair `(u, v)` with
/// `d(u, v) ≤ l`, alongside the bound ingredients (`c = 1`).
pub fn sensitivity_report(
    g: &Graph,
    sched: &LayerSchedule,
    params: &ModelParams,
    cfg: &ModelConfig,
    l: usize,
) -> Result<SensitivityReport, DiagnosticsError> {
    check_layer(l, cfg)?;
    let c = 1.0;
    let w = params.max_layer_weight();
    let width = params.hidden_dim();
    let model_factor = (c * w * width as f64).powi(l as i32);
    let (product, _) = if cfg.sync {
        product_vs_power(g, &LayerSchedule::full(g.n(), sched.num_layers()), l, false)?
    } else {
        product_vs_power(g, sched, l, false)?
    };
    let dist: Vec<Vec<Option<usize>>> = (0..g.n()).map(|u| g.bfs_distances(u)).collect();
    let mut pairs = Vec::new();
    for v in 0..g.n() {
        let norms = jacobian_norms_to(g, sched, params, cfg, v, l)?;
        for (u, &jacobian_l1) in norms.iter().enumerate() {
            match dist[u][v] {
                Some(d) if d <= l => pairs.push(SensitivityPair {
                    u,
                    v,
                    distance: d,
                    jacobian_l1,
                    model_factor,
                    product_entry: product.get(u, v),
                }),
                _ => assert_eq!(jacobian_l1, 0.0, "influence beyond the receptive field"),
            }
        }
    }
    pairs.sort_by_key(|p| (p.u, p.v));
    Ok(SensitivityReport {
        graph_id: g.graph_id(),
        layer: l,
        c,
        w,
        width,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::uniform;
    use crate::graph::fixtures::*;
    use crate::models::Arch;

    fn setup(g: Graph, layers: usize, sync: bool) -> (Graph, ModelParams, ModelConfig) {
        let mut cfg = ModelConfig::new(Arch::Gcn, layers, 4);
        cfg.sync = sync;
        let params = ModelParams::init(&cfg, 2, 2, &mut ChaCha8Rng::seed_from_u64(5));
        let n = g.n();
        let g = g
            .with_features(uniform(n, 2, 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(6)))
            .unwrap();
        (g, params, cfg)
    }

    #[test]
    fn zero_layers_is_identity() {
        let (g, params, cfg) = setup(path(4), 2, true);
        let sched = LayerSchedule::full(4, 2);
        let norms = jacobian_norms_to(&g, &sched, &params, &cfg, 2, 0).unwrap();
        assert_eq!(norms, vec![0.0, 0.0, 4.0, 0.0]);
    }

    #[test]
    fn beyond_receptive_field_is_zero() {
        let (g, params, cfg) = setup(path(5), 2, true);
        let sched = LayerSchedule::full(5, 2);
        assert_eq!(
            sensitivity_jacobian(&g, &sched, &params, &cfg, 0, 4, 2).unwrap(),
            0.0
        );
        assert!(sensitivity_jacobian(&g, &sched, &params, &cfg, 0, 2, 2).unwrap() > 0.0);
    }

    #[test]
    fn report_lists_pairs_within_range() {
        let (g, params, cfg) = setup(path(4), 2, false);
        let sched = LayerSchedule::from_batches(4, vec![vec![0, 1], vec![2, 3]]).unwrap();
        let r = sensitivity_report(&g, &sched, &params, &cfg, 2).unwrap();
        // pairs with |u - v| <= 2 on P4
        assert_eq!(r.pairs.len(), 4 + 2 * 3 + 2 * 2);
        assert!(r.pairs.iter().all(|p| p.jacobian_l1 >= 0.0));
        let f = (r.w * 4.0).powi(2);
        assert!(r.pairs.iter().all(|p| (p.model_factor - f).abs() < 1e-12));
    }

    #[test]
    fn layer_out_of_range() {
        let (g, params, cfg) = setup(path(3), 2, true);
        let sched = LayerSchedule::full(3, 2);
        assert!(jacobian_norms_to(&g, &sched, &params, &cfg, 0, 3).is_err());
    }
}
