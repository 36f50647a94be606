//! Immutable undirected graphs in CSR form, datasets of labelled graphs,
//! and train/valid/test splitting.

mod split;
mod tudataset;

use std::collections::VecDeque;

use thiserror::Error;

use crate::tensor::Tensor;

pub use split::{make_split, SplitError, SplitSpec};
pub use tudataset::{fill_featureless, load_tudataset, DataError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph has no nodes")]
    Empty,
    #[error("edge ({u}, {v}) references a node outside [0, {n})")]
    NodeOutOfRange { u: usize, v: usize, n: usize },
    #[error("feature matrix has {rows} rows for a graph with {n} nodes")]
    FeatureRows { rows: usize, n: usize },
}

/// An undirected simple graph. Adjacency is stored symmetrically in CSR
/// form: every undirected edge appears once in each endpoint's row, rows are
/// sorted and free of self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    features: Option<Tensor>,
    label: usize,
    graph_id: usize,
}

impl Graph {
    /// Builds a graph from an arbitrary edge list. Duplicates collapse,
    /// self-loops are dropped, and each edge is stored in both directions.
    pub fn from_edges(
        n: usize,
        edges: &[(usize, usize)],
        features: Option<Tensor>,
        label: usize,
        graph_id: usize,
    ) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        if let Some(f) = &features {
            if f.rows() != n {
                return Err(GraphError::FeatureRows { rows: f.rows(), n });
            }
        }
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(GraphError::NodeOutOfRange { u, v, n });
            }
            if u == v {
                continue;
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::new();
        row_offsets.push(0);
        for row in &mut adj {
            row.sort_unstable();
            row.dedup();
            col_indices.extend_from_slice(row);
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            row_offsets,
            col_indices,
            features,
            label,
            graph_id,
        })
    }

    pub fn n(&self) -> usize {
        self.row_offsets.len() - 1
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.col_indices.len() / 2
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[v]..self.row_offsets[v + 1]]
    }

    #[inline]
    pub fn degree(&self, v: usize) -> usize {
        self.row_offsets[v + 1] - self.row_offsets[v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Undirected edges as `(u, v)` with `u < v`, in CSR order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| u < v)
                .map(move |v| (u, v))
        })
    }

    pub fn features(&self) -> Option<&Tensor> {
        self.features.as_ref()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.as_ref().map_or(0, Tensor::cols)
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn graph_id(&self) -> usize {
        self.graph_id
    }

    pub fn with_features(mut self, features: Tensor) -> Result<Self, GraphError> {
        if features.rows() != self.n() {
            return Err(GraphError::FeatureRows {
                rows: features.rows(),
                n: self.n(),
            });
        }
        self.features = Some(features);
        Ok(self)
    }

    /// Relabels nodes so that old node `v` becomes `perm[v]`.
    pub fn relabeled(&self, perm: &[usize]) -> Graph {
        let n = self.n();
        assert_eq!(perm.len(), n);
        let edges: Vec<_> = self.edges().map(|(u, v)| (perm[u], perm[v])).collect();
        let features = self.features.as_ref().map(|f| {
            let mut out = Tensor::zeros(n, f.cols());
            for v in 0..n {
                out.row_mut(perm[v]).copy_from_slice(f.row(v));
            }
            out
        });
        Graph::from_edges(n, &edges, features, self.label, self.graph_id)
            .expect("relabeling preserves validity")
    }

    /// Hop distances from `source`; `None` for unreachable nodes.
    pub fn bfs_distances(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n()];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for &w in self.neighbors(u) {
                if dist[w].is_none() {
                    dist[w] = Some(du + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// Component id for every node, numbered in order of first appearance.
    pub fn connected_components(&self) -> (usize, Vec<usize>) {
        let n = self.n();
        let mut comp = vec![usize::MAX; n];
        let mut count = 0;
        let mut stack = Vec::new();
        for s in 0..n {
            if comp[s] != usize::MAX {
                continue;
            }
            comp[s] = count;
            stack.push(s);
            while let Some(u) = stack.pop() {
                for &w in self.neighbors(u) {
                    if comp[w] == usize::MAX {
                        comp[w] = count;
                        stack.push(w);
                    }
                }
            }
            count += 1;
        }
        (count, comp)
    }

    pub fn is_connected(&self) -> bool {
        self.connected_components().0 == 1
    }

    /// Checks the CSR invariants: symmetry, strictly increasing rows,
    /// no self-loops, indices in range.
    pub fn check_invariants(&self) -> bool {
        let n = self.n();
        (0..n).all(|u| {
            let row = self.neighbors(u);
            row.windows(2).all(|w| w[0] < w[1])
                && row.iter().all(|&v| v < n && v != u && self.has_edge(v, u))
        })
    }
}

/// A collection of labelled graphs sharing one feature width.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub num_classes: usize,
    /// 0 when the source files carry no node information.
    pub feature_dim: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn avg_nodes(&self) -> f64 {
        self.graphs.iter().map(Graph::n).sum::<usize>() as f64 / self.len().max(1) as f64
    }

    /// Average number of stored (directed) adjacency entries per graph,
    /// the convention TUDataset statistics use for edge counts.
    pub fn avg_directed_edges(&self) -> f64 {
        self.graphs
            .iter()
            .map(|g| g.col_indices().len())
            .sum::<usize>() as f64
            / self.len().max(1) as f64
    }

    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(Graph::label).collect()
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn from_edges_symmetrizes_and_dedups() {
        let g =
            Graph::from_edges(3, &[(0, 1), (1, 0), (0, 1), (2, 2), (1, 2)], None, 0, 0).unwrap();
        assert_eq!(g.num_edges(), 2);
        assert_eq!(g.neighbors(1), &[0, 2]);
        assert_eq!(g.neighbors(2), &[1]);
        assert!(g.check_invariants());
    }

    #[test]
    fn rejects_empty_and_out_of_range() {
        assert_eq!(
            Graph::from_edges(0, &[], None, 0, 0),
            Err(GraphError::Empty)
        );
        assert!(matches!(
            Graph::from_edges(2, &[(0, 2)], None, 0, 0),
            Err(GraphError::NodeOutOfRange { .. })
        ));
    }

    #[test]
    fn bfs_and_components() {
        let g = graph(5, &[(0, 1), (1, 2), (3, 4)]);
        assert_eq!(
            g.bfs_distances(0),
            vec![Some(0), Some(1), Some(2), None, None]
        );
        let (count, comp) = g.connected_components();
        assert_eq!(count, 2);
        assert_eq!(comp, vec![0, 0, 0, 1, 1]);
        assert!(path(4).is_connected());
    }

    #[test]
    fn relabel_preserves_structure() {
        let g = cycle(5);
        let h = g.relabeled(&[4, 2, 0, 1, 3]);
        assert_eq!(h.num_edges(), 5);
        assert!(h.has_edge(4, 2));
        assert!(h.has_edge(3, 4));
        assert!(h.check_invariants());
        let _ = star(4);
        let _ = complete(4);
    }
}
