//! Per-layer node batches.
//!
//! CAMP sorts nodes by centrality and cuts the order into `L` consecutive
//! segments, one per layer. RAMP cuts a seeded random permutation instead.
//! With `p < 1` each segment is thinned to `ceil(|segment| * p)` nodes.

use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::centrality::{CentralityMeasure, CentralityScores};
use crate::graph::Graph;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("number of layers must be at least 1")]
    NoLayers,
    #[error("sampling rate p must lie in (0, 1], got {0}")]
    SamplingRate(f64),
    #[error("layer {layer} out of range 1..={layers}")]
    LayerIndex { layer: usize, layers: usize },
    #[error("batch node {node} out of range for {n} nodes")]
    NodeIndex { node: usize, n: usize },
    #[error("unknown {what} {value:?}")]
    Parse { what: &'static str, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    #[default]
    Descending,
    Ascending,
}

impl Order {
    pub fn as_str(self) -> &'static str {
        match self {
            Order::Descending => "descending",
            Order::Ascending => "ascending",
        }
    }
}

impl fmt::Display for Order {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Order {
    type Err = ScheduleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "descending" | "desc" => Ok(Order::Descending),
            "ascending" | "asc" => Ok(Order::Ascending),
            _ => Err(ScheduleError::Parse {
                what: "order",
                value: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum BatchMode {
    /// Centrality-ordered batches.
    #[default]
    Camp,
    /// Batches from a seeded random permutation.
    Ramp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleWarning {
    /// More layers than nodes; trailing layers have empty batches.
    MoreLayersThanNodes { layers: usize, nodes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleParams {
    pub layers: usize,
    pub order: Order,
    pub p: f64,
    pub seed: u64,
    pub mode: BatchMode,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            layers: 4,
            order: Order::Descending,
            p: 1.0,
            seed: 0,
            mode: BatchMode::Camp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSchedule {
    pub num_nodes: usize,
    pub batches: Vec<Vec<usize>>,
    pub order: Order,
    pub sampling_p: f64,
    pub mode: BatchMode,
    pub measure: Option<CentralityMeasure>,
    pub warning: Option<ScheduleWarning>,
}

impl LayerSchedule {
    pub fn num_layers(&self) -> usize {
        self.batches.len()
    }

    /// Batch of 1-based layer `l`.
    pub fn batch(&self, l: usize) -> Result<&[usize], ScheduleError> {
        if l == 0 || l > self.batches.len() {
            return Err(ScheduleError::LayerIndex {
                layer: l,
                layers: self.batches.len(),
            });
        }
        Ok(&self.batches[l - 1])
    }

    /// Every layer updates every node: synchronous message passing.
    pub fn full(num_nodes: usize, layers: usize) -> Self {
        Self::from_batches(num_nodes, vec![(0..num_nodes).collect(); layers])
            .expect("full batches are in range")
    }

    /// A hand-written schedule; batches are stored as given.
    pub fn from_batches(num_nodes: usize, batches: Vec<Vec<usize>>) -> Result<Self, ScheduleError> {
        if batches.is_empty() {
            return Err(ScheduleError::NoLayers);
        }
        if let Some(&node) = batches.iter().flatten().find(|&&v| v >= num_nodes) {
            return Err(ScheduleError::NodeIndex { node, n: num_nodes });
        }
        Ok(Self {
            num_nodes,
            batches,
            order: Order::Descending,
            sampling_p: 1.0,
            mode: BatchMode::Camp,
            measure: None,
            warning: None,
        })
    }

    /// Inspection record for one graph.
    pub fn record(&self, graph_id: usize) -> ScheduleRecord {
        ScheduleRecord {
            graph_id,
            measure: self.measure.map(|m| m.to_string()),
            layers: self.num_layers(),
            order: self.order.to_string(),
            p: self.sampling_p,
            batches: self.batches.clone(),
        }
    }
}

/// JSON layout emitted by `schedule-dump`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRecord {
    pub graph_id: usize,
    pub measure: Option<String>,
    #[serde(rename = "L")]
    pub layers: usize,
    pub order: String,
    pub p: f64,
    pub batches: Vec<Vec<usize>>,
}

/// Sorts by score in the requested direction; equal scores keep ascending
/// node id in both directions.
pub fn centrality_order(scores: &[f64], order: Order) -> Vec<usize> {
    let mut nodes: Vec<usize> = (0..scores.len()).collect();
    nodes.sort_by(|&a, &b| {
        let by_score = match order {
            Order::Descending => scores[b].total_cmp(&scores[a]),
            Order::Ascending => scores[a].total_cmp(&scores[b]),
        };
        by_score.then(a.cmp(&b))
    });
    nodes
}

/// Cuts `nodes` into `layers` consecutive segments; the first
/// `len % layers` segments take one extra node.
pub fn partition(nodes: &[usize], layers: usize) -> Vec<Vec<usize>> {
    let base = nodes.len() / layers;
    let extra = nodes.len() % layers;
    let mut out = Vec::with_capacity(layers);
    let mut start = 0;
    for l in 0..layers {
        let size = base + usize::from(l < extra);
        out.push(nodes[start..start + size].to_vec());
        start += size;
    }
    out
}

pub fn build_schedule(
    scores: &CentralityScores,
    params: &ScheduleParams,
) -> Result<LayerSchedule, ScheduleError> {
    if params.layers == 0 {
        return Err(ScheduleError::NoLayers);
    }
    if !(params.p > 0.0 && params.p <= 1.0) {
        return Err(ScheduleError::SamplingRate(params.p));
    }
    let n = scores.len();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (sequence, measure) = match params.mode {
        BatchMode::Camp => (
            centrality_order(&scores.scores, params.order),
            Some(scores.measure),
        ),
        BatchMode::Ramp => {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            (perm, None)
        }
    };
    let mut batches = partition(&sequence, params.layers);
    if params.p < 1.0 {
        for batch in &mut batches {
            if batch.is_empty() {
                continue;
            }
            let keep = (batch.len() as f64 * params.p).ceil() as usize;
            let mut picked = index::sample(&mut rng, batch.len(), keep).into_vec();
            picked.sort_unstable();
            *batch = picked.into_iter().map(|i| batch[i]).collect();
        }
    }
    let warning = (params.layers > n).then_some(ScheduleWarning::MoreLayersThanNodes {
        layers: params.layers,
        nodes: n,
    });
    Ok(LayerSchedule {
        num_nodes: n,
        batches,
        order: params.order,
        sampling_p: params.p,
        mode: params.mode,
        measure,
        warning,
    })
}

/// Nodes updated at one layer and the edges that carry messages there.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMask {
    pub layer: usize,
    pub active_nodes: Vec<bool>,
    /// Undirected edges `(u, v)`, `u < v`, with at least one active endpoint.
    pub active_edges: Vec<(usize, usize)>,
}

impl LayerMask {
    pub fn is_active(&self, v: usize) -> bool {
        self.active_nodes[v]
    }

    pub fn num_active(&self) -> usize {
        self.active_nodes.iter().filter(|&&a| a).count()
    }
}

pub fn layer_mask(sched: &LayerSchedule, g: &Graph, l: usize) -> Result<LayerMask, ScheduleError> {
    let batch = sched.batch(l)?;
    let mut active_nodes = vec![false; g.n()];
    for &v in batch {
        if v >= g.n() {
            return Err(ScheduleError::NodeIndex { node: v, n: g.n() });
        }
        active_nodes[v] = true;
    }
    let active_edges = g
        .edges()
        .filter(|&(u, v)| active_nodes[u] || active_nodes[v])
        .collect();
    Ok(LayerMask {
        layer: l,
        active_nodes,
        active_edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::*;
    use proptest::prelude::*;

    fn scores(v: Vec<f64>) -> CentralityScores {
        CentralityScores {
            measure: CentralityMeasure::Degree,
            scores: v,
            graph_id: 0,
        }
    }

    fn params(layers: usize, p: f64) -> ScheduleParams {
        ScheduleParams {
            layers,
            p,
            ..Default::default()
        }
    }

    #[test]
    fn exact_division() {
        let s =
            build_schedule(&scores(vec![5.0, 4.0, 3.0, 2.0, 1.0, 0.0]), &params(3, 1.0)).unwrap();
        assert_eq!(s.batches, vec![vec![0, 1], vec![2, 3], vec![4, 5]]);
        assert!(s.warning.is_none());
    }

    #[test]
    fn remainder_goes_to_early_batches() {
        let s = build_schedule(&scores(vec![0.0; 7]), &params(3, 1.0)).unwrap();
        let sizes: Vec<_> = s.batches.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 2, 2]);
        // ties fall back to node id
        assert_eq!(s.batches[0], vec![0, 1, 2]);
    }

    #[test]
    fn subsampled_batches_are_subsets() {
        let sc = scores(vec![5.0, 4.0, 3.0, 2.0, 1.0, 0.0]);
        let full = build_schedule(&sc, &params(3, 1.0)).unwrap();
        for seed in 0..50 {
            let s = build_schedule(
                &sc,
                &ScheduleParams {
                    seed,
                    ..params(3, 0.5)
                },
            )
            .unwrap();
            for (b, f) in s.batches.iter().zip(&full.batches) {
                assert_eq!(b.len(), 1);
                assert!(f.contains(&b[0]));
            }
        }
    }

    #[test]
    fn parameter_errors() {
        let sc = scores(vec![1.0; 4]);
        assert_eq!(
            build_schedule(&sc, &params(0, 1.0)),
            Err(ScheduleError::NoLayers)
        );
        assert!(matches!(
            build_schedule(&sc, &params(2, 0.0)),
            Err(ScheduleError::SamplingRate(_))
        ));
        assert!(matches!(
            build_schedule(&sc, &params(2, 1.5)),
            Err(ScheduleError::SamplingRate(_))
        ));
    }

    #[test]
    fn more_layers_than_nodes_warns_and_leaves_empty_batches() {
        let s = build_schedule(&scores(vec![1.0, 2.0]), &params(4, 1.0)).unwrap();
        assert_eq!(s.batches, vec![vec![1], vec![0], vec![], vec![]]);
        assert_eq!(
            s.warning,
            Some(ScheduleWarning::MoreLayersThanNodes {
                layers: 4,
                nodes: 2
            })
        );
    }

    #[test]
    fn ramp_ignores_scores_but_covers_nodes() {
        let p = ScheduleParams {
            mode: BatchMode::Ramp,
            seed: 9,
            ..params(3, 1.0)
        };
        let a = build_schedule(&scores(vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), &p).unwrap();
        let b = build_schedule(&scores(vec![6.0, 5.0, 4.0, 3.0, 2.0, 1.0, 0.0]), &p).unwrap();
        assert_eq!(a.batches, b.batches);
        assert_eq!(a.measure, None);
        let mut all: Vec<_> = a.batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn mask_examples() {
        let g = path(3);
        let s = LayerSchedule::from_batches(3, vec![vec![1], vec![0], vec![2]]).unwrap();
        let m1 = layer_mask(&s, &g, 1).unwrap();
        assert_eq!(m1.active_edges, vec![(0, 1), (1, 2)]);
        let m2 = layer_mask(&s, &g, 2).unwrap();
        assert_eq!(m2.active_edges, vec![(0, 1)]);
        assert!(m2.is_active(0) && !m2.is_active(1));
        assert!(matches!(
            layer_mask(&s, &g, 0),
            Err(ScheduleError::LayerIndex { .. })
        ));
        assert!(matches!(
            layer_mask(&s, &g, 4),
            Err(ScheduleError::LayerIndex { .. })
        ));
    }

    #[test]
    fn record_uses_capital_l() {
        let s = build_schedule(&scores(vec![1.0, 0.0]), &params(2, 1.0)).unwrap();
        let json = serde_json::to_value(s.record(3)).unwrap();
        assert_eq!(json["L"], 2);
        assert_eq!(json["measure"], "degree");
        assert_eq!(json["batches"], serde_json::json!([[0], [1]]));
    }

    proptest! {
        #[test]
        fn ascending_is_reversed_descending_for_distinct_scores(
            raw in proptest::collection::vec(0u32..1_000_000, 1..60),
            layers in 1usize..8,
        ) {
            let mut seen = std::collections::HashSet::new();
            let distinct: Vec<f64> = raw.into_iter().filter(|x| seen.insert(*x)).map(f64::from).collect();
            let n = distinct.len();
            prop_assume!(n % layers == 0);
            let sc = scores(distinct);
            let desc = build_schedule(&sc, &params(layers, 1.0)).unwrap();
            let asc = build_schedule(&sc, &ScheduleParams { order: Order::Ascending, ..params(layers, 1.0) }).unwrap();
            let mut rev: Vec<Vec<usize>> = desc.batches.iter().rev().map(|b| b.iter().rev().copied().collect()).collect();
            rev.iter_mut().for_each(|b| b.sort_unstable());
            let mut asc_sorted = asc.batches.clone();
            asc_sorted.iter_mut().for_each(|b| b.sort_unstable());
            prop_assert_eq!(rev, asc_sorted);
        }
    }
}
