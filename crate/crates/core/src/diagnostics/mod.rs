//! Oversmoothing and oversquashing instruments: Dirichlet energy, feature
//! sensitivity, products of layer adjacencies, effective resistance and
//! signal propagation.

mod sensitivity;
mod signal;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Graph;
use crate::models::{forward_states, ModelConfig, ModelError, ModelParams};
use crate::scheduler::{layer_mask, LayerSchedule, ScheduleError};
use crate::tensor::{ShapeError, Tensor};

pub use sensitivity::{
    jacobian_norms_to, sensitivity_jacobian, sensitivity_report, SensitivityPair, SensitivityReport,
};
pub use signal::{propagated_signal, signal_propagation, SignalPropEntry, SignalPropReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("features have {rows} rows, graph has {n} nodes")]
    FeatureRows { rows: usize, n: usize },
    #[error("layer {layer} requested, model has {layers}")]
    Layer { layer: usize, layers: usize },
    #[error("node {node} out of range for {n} nodes")]
    Node { node: usize, n: usize },
}

/// `½ Σ_(i,j) (x_i/√d_i − x_j/√d_j)²` over ordered adjacent pairs, summed
/// over feature columns.
pub fn dirichlet_energy(x: &Tensor, g: &Graph) -> Result<f64, DiagnosticsError> {
    if x.rows() != g.n() {
        return Err(DiagnosticsError::FeatureRows {
            rows: x.rows(),
            n: g.n(),
        });
    }
    let mut total = 0.0;
    for i in 0..g.n() {
        let si = (g.degree(i) as f64).sqrt();
        for &j in g.neighbors(i) {
            let sj = (g.degree(j) as f64).sqrt();
            total += x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a / si - b / sj).powi(2))
                .sum::<f64>();
        }
    }
    Ok(0.5 * total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletReport {
    pub graph_id: usize,
    /// Entry `l` is the energy of the stored features after layer `l`
    /// (entry 0 is the encoder output).
    pub energies: Vec<f64>,
}

pub fn dirichlet_report(
    g: &Graph,
    sched: &LayerSchedule,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<DirichletReport, DiagnosticsError> {
    let energies = forward_states(g, sched, params, cfg)?
        .iter()
        .map(|s| dirichlet_energy(&s.features, g))
        .collect::<Result<_, _>>()?;
    Ok(DirichletReport {
        graph_id: g.graph_id(),
        energies,
    })
}

fn norm_weight(g: &Graph, u: usize, v: usize) -> f64 {
    1.0 / (((g.degree(u) + 1) * (g.degree(v) + 1)) as f64).sqrt()
}

/// `S̃_uv = 1/√((d_u+1)(d_v+1))` on edges, zero elsewhere.
pub fn normalized_adjacency(g: &Graph) -> Tensor {
    let mut s = Tensor::zeros(g.n(), g.n());
    for (u, v) in g.edges() {
        let w = norm_weight(g, u, v);
        s.set(u, v, w);
        s.set(v, u, w);
    }
    s
}

/// `S̃` restricted to the edges active at layer `l` (at least one endpoint
/// in the batch). Degrees stay those of the full graph.
pub fn masked_normalized_adjacency(
    g: &Graph,
    sched: &LayerSchedule,
    l: usize,
) -> Result<Tensor, DiagnosticsError> {
    let mask = layer_mask(sched, g, l)?;
    let mut s = Tensor::zeros(g.n(), g.n());
    for &(u, v) in &mask.active_edges {
        let w = norm_weight(g, u, v);
        s.set(u, v, w);
        s.set(v, u, w);
    }
    Ok(s)
}

fn add_identity(mut t: Tensor) -> Tensor {
    for i in 0..t.rows() {
        t.set(i, i, t.get(i, i) + 1.0);
    }
    t
}

/// `(Π_{j≤l} S̃^(j), S̃^l)`. With `with_identity` every factor becomes
/// `I + S̃^(j)` (resp. `I + S̃`), which bounds the support of a model whose
/// nodes carry their own state forward.
pub fn product_vs_power(
    g: &Graph,
    sched: &LayerSchedule,
    l: usize,
    with_identity: bool,
) -> Result<(Tensor, Tensor), DiagnosticsError> {
    if l > sched.num_layers() {
        return Err(DiagnosticsError::Layer {
            layer: l,
            layers: sched.num_layers(),
        });
    }
    let full = normalized_adjacency(g);
    let full = if with_identity {
        add_identity(full)
    } else {
        full
    };
    let mut product = Tensor::identity(g.n());
    let mut power = Tensor::identity(g.n());
    for j in 1..=l {
        let s = masked_normalized_adjacency(g, sched, j)?;
        let s = if with_identity { add_identity(s) } else { s };
        product = product.matmul(&s)?;
        power = power.matmul(&full)?;
    }
    Ok((product, power))
}

/// Combinatorial Laplacian `D − A`.
pub fn laplacian(g: &Graph) -> DMatrix<f64> {
    let n = g.n();
    let mut l = DMatrix::zeros(n, n);
    for v in 0..n {
        l[(v, v)] = g.degree(v) as f64;
        for &u in g.neighbors(v) {
            l[(v, u)] = -1.0;
        }
    }
    l
}

/// Moore–Penrose pseudoinverse of the Laplacian from a full
/// eigendecomposition; eigenvalues below `1e-9` count as zero.
pub fn laplacian_pinv(g: &Graph) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(laplacian(g));
    let n = g.n();
    let mut pinv = DMatrix::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > 1e-9 {
            let col = eig.eigenvectors.column(k);
            pinv += col * col.transpose() / lambda;
        }
    }
    pinv
}

/// `Σ_{u<v} R_uv` over pairs in the same connected component.
///
/// Each component is grounded at its first node and the reduced Laplacian
/// is inverted by Cholesky, so `R_ur = G_uu` and `R_uv = G_uu + G_vv − 2G_uv`
/// for the grounded inverse `G`.
pub fn total_effective_resistance(g: &Graph) -> f64 {
    let (count, comp) = g.connected_components();
    let mut total = 0.0;
    for c in 0..count {
        let nodes: Vec<usize> = (0..g.n()).filter(|&v| comp[v] == c).collect();
        let k = nodes.len() - 1;
        if k == 0 {
            continue;
        }
        let local = |v: usize| nodes.binary_search(&v).unwrap();
        let mut reduced = DMatrix::<f64>::zeros(k, k);
        for &v in &nodes[1..] {
            let i = local(v) - 1;
            reduced[(i, i)] = g.degree(v) as f64;
            for &u in g.neighbors(v) {
                let j = local(u);
                if j > 0 {
                    reduced[(i, j - 1)] -= 1.0;
                }
            }
        }
        let inv = reduced
            .cholesky()
            .expect("grounded Laplacian of a connected component is positive definite")
            .inverse();
        for i in 0..k {
            total += inv[(i, i)];
            for j in i + 1..k {
                total += inv[(i, i)] + inv[(j, j)] - 2.0 * inv[(i, j)];
            }
        }
    }
    total
}

/// Total resistance divided by the number of node pairs `n(n−1)/2`.
pub fn normalized_total_resistance(g: &Graph) -> f64 {
    let n = g.n() as f64;
    if g.n() < 2 {
        return 0.0;
    }
    total_effective_resistance(g) / (n * (n - 1.0) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::*;

    #[test]
    fn constant_features_on_regular_graph_have_zero_energy() {
        let x = Tensor::filled(4, 3, 2.5);
        assert!(dirichlet_energy(&x, &complete(4)).unwrap().abs() < 1e-14);
    }

    #[test]
    fn path_energy_by_hand() {
        // pairs (0,1) and (1,0) each contribute (1 - 0)^2
        let x = Tensor::from_rows(&[[1.0], [0.0], [0.0]]);
        assert!((dirichlet_energy(&x, &path(3)).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn energy_dimension_mismatch() {
        assert!(dirichlet_energy(&Tensor::zeros(2, 1), &path(3)).is_err());
    }

    #[test]
    fn resistance_of_small_graphs() {
        assert!((total_effective_resistance(&path(2)) - 1.0).abs() < 1e-12);
        assert_eq!(total_effective_resistance(&path(3)), 4.0);
        assert_eq!(total_effective_resistance(&graph(1, &[])), 0.0);
        // two disjoint edges: components summed, cross pairs ignored
        assert!((total_effective_resistance(&graph(4, &[(0, 1), (2, 3)])) - 2.0).abs() < 1e-12);
        assert!((normalized_total_resistance(&path(3)) - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn full_batches_make_product_equal_power() {
        let g = cycle(5);
        let (prod, pow) = product_vs_power(&g, &LayerSchedule::full(5, 3), 3, false).unwrap();
        assert_eq!(prod, pow);
    }

    #[test]
    fn product_on_p3_by_hand() {
        let g = path(3);
        let sched = LayerSchedule::from_batches(3, vec![vec![1], vec![0, 2]]).unwrap();
        let (prod, pow) = product_vs_power(&g, &sched, 2, false).unwrap();
        // both layers activate both edges; weight 1/sqrt(2*3) on each
        let w2 = 1.0 / 6.0;
        let expected = Tensor::from_rows(&[[w2, 0.0, w2], [0.0, 2.0 * w2, 0.0], [w2, 0.0, w2]]);
        for (a, b) in prod.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(prod, pow);
    }

    #[test]
    fn empty_batch_kills_product() {
        let g = path(4);
        let sched = LayerSchedule::from_batches(4, vec![vec![0, 1, 2, 3], vec![]]).unwrap();
        let (prod, _) = product_vs_power(&g, &sched, 2, false).unwrap();
        assert!(prod.data().iter().all(|&x| x == 0.0));
        assert!(product_vs_power(&g, &sched, 3, false).is_err());
    }
}
