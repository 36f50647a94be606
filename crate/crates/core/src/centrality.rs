//! Node centrality measures used to order nodes into layer batches.
//!
//! All measures work on unweighted, undirected graphs. Betweenness and load
//! only count pairs that lie in the same connected component; closeness uses
//! the Wasserman–Faust component scaling so disconnected graphs stay
//! comparable.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Graph;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CentralityError {
    #[error("{measure} centrality needs at least {min} nodes, graph has {n}")]
    TooFewNodes {
        measure: CentralityMeasure,
        min: usize,
        n: usize,
    },
    #[error("pagerank did not converge in {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("unknown centrality measure {0:?}")]
    UnknownMeasure(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CentralityMeasure {
    Degree,
    Betweenness,
    Closeness,
    Load,
    PageRank,
}

impl CentralityMeasure {
    pub const ALL: [CentralityMeasure; 5] = [
        CentralityMeasure::Degree,
        CentralityMeasure::Betweenness,
        CentralityMeasure::Closeness,
        CentralityMeasure::Load,
        CentralityMeasure::PageRank,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CentralityMeasure::Degree => "degree",
            CentralityMeasure::Betweenness => "betweenness",
            CentralityMeasure::Closeness => "closeness",
            CentralityMeasure::Load => "load",
            CentralityMeasure::PageRank => "pagerank",
        }
    }

    /// Smallest graph on which the measure is defined.
    pub fn min_nodes(self) -> usize {
        match self {
            CentralityMeasure::PageRank => 1,
            CentralityMeasure::Degree | CentralityMeasure::Closeness => 2,
            CentralityMeasure::Betweenness | CentralityMeasure::Load => 3,
        }
    }
}

impl fmt::Display for CentralityMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CentralityMeasure {
    type Err = CentralityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "degree" => Ok(Self::Degree),
            "betweenness" => Ok(Self::Betweenness),
            "closeness" => Ok(Self::Closeness),
            "load" => Ok(Self::Load),
            "pagerank" | "page_rank" => Ok(Self::PageRank),
            _ => Err(CentralityError::UnknownMeasure(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralityScores {
    pub measure: CentralityMeasure,
    pub scores: Vec<f64>,
    pub graph_id: usize,
}

impl CentralityScores {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PageRankParams {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PageRankParams {
    fn default() -> Self {
        Self {
            damping: 0.85,
            tol: 1e-8,
            max_iter: 200,
        }
    }
}

fn require(g: &Graph, measure: CentralityMeasure) -> Result<(), CentralityError> {
    let min = measure.min_nodes();
    if g.n() < min {
        return Err(CentralityError::TooFewNodes {
            measure,
            min,
            n: g.n(),
        });
    }
    Ok(())
}

fn scores(measure: CentralityMeasure, g: &Graph, scores: Vec<f64>) -> CentralityScores {
    CentralityScores {
        measure,
        scores,
        graph_id: g.graph_id(),
    }
}

pub fn compute(measure: CentralityMeasure, g: &Graph) -> Result<CentralityScores, CentralityError> {
    match measure {
        CentralityMeasure::Degree => degree_centrality(g),
        CentralityMeasure::Betweenness => betweenness_centrality(g),
        CentralityMeasure::Closeness => closeness_centrality(g),
        CentralityMeasure::Load => load_centrality(g),
        CentralityMeasure::PageRank => pagerank_centrality(g, PageRankParams::default()),
    }
}

/// Like [`compute`], but graphs too small for the measure get all-zero
/// scores. Every measure is identically zero (or undefined) there, so the
/// resulting order falls back to node ids.
pub fn compute_for_ordering(
    measure: CentralityMeasure,
    g: &Graph,
) -> Result<CentralityScores, CentralityError> {
    if g.n() < measure.min_nodes() {
        return Ok(scores(measure, g, vec![0.0; g.n()]));
    }
    compute(measure, g)
}

pub fn degree_centrality(g: &Graph) -> Result<CentralityScores, CentralityError> {
    require(g, CentralityMeasure::Degree)?;
    let denom = (g.n() - 1) as f64;
    let s = (0..g.n()).map(|v| g.degree(v) as f64 / denom).collect();
    Ok(scores(CentralityMeasure::Degree, g, s))
}

/// Per-source BFS state shared by betweenness and load.
struct ShortestPathDag {
    /// Nodes in non-decreasing distance order (source first).
    order: Vec<usize>,
    preds: Vec<Vec<usize>>,
    sigma: Vec<f64>,
    dist: Vec<i64>,
}

impl ShortestPathDag {
    fn new(n: usize) -> Self {
        Self {
            order: Vec::with_capacity(n),
            preds: vec![Vec::new(); n],
            sigma: vec![0.0; n],
            dist: vec![-1; n],
        }
    }

    fn run(&mut self, g: &Graph, source: usize) {
        self.order.clear();
        for p in &mut self.preds {
            p.clear();
        }
        self.sigma.fill(0.0);
        self.dist.fill(-1);
        self.sigma[source] = 1.0;
        self.dist[source] = 0;
        let mut queue = VecDeque::from([source]);
        while let Some(v) = queue.pop_front() {
            self.order.push(v);
            for &w in g.neighbors(v) {
                if self.dist[w] < 0 {
                    self.dist[w] = self.dist[v] + 1;
                    queue.push_back(w);
                }
                if self.dist[w] == self.dist[v] + 1 {
                    self.sigma[w] += self.sigma[v];
                    self.preds[w].push(v);
                }
            }
        }
    }
}

/// Brandes' accumulation over unweighted BFS, normalized by
/// `(n-1)(n-2)/2` unordered pairs.
pub fn betweenness_centrality(g: &Graph) -> Result<CentralityScores, CentralityError> {
    require(g, CentralityMeasure::Betweenness)?;
    let n = g.n();
    let mut bc = vec![0.0; n];
    let mut dag = ShortestPathDag::new(n);
    let mut delta = vec![0.0; n];
    for s in 0..n {
        dag.run(g, s);
        delta.fill(0.0);
        for &w in dag.order.iter().rev() {
            for &v in &dag.preds[w] {
                delta[v] += dag.sigma[v] / dag.sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                bc[w] += delta[w];
            }
        }
    }
    // each unordered pair was visited from both ends
    let scale = 1.0 / ((n - 1) * (n - 2)) as f64;
    Ok(scores(
        CentralityMeasure::Betweenness,
        g,
        bc.into_iter().map(|x| x * scale).collect(),
    ))
}

/// Goh's load: each ordered pair sends one unit from source to target,
/// split equally among the next-hop neighbours on shortest paths.
pub fn load_centrality(g: &Graph) -> Result<CentralityScores, CentralityError> {
    require(g, CentralityMeasure::Load)?;
    let n = g.n();
    let mut load = vec![0.0; n];
    let mut dag = ShortestPathDag::new(n);
    let mut flow = vec![0.0; n];
    // Rooting the DAG at the target and walking from the farthest nodes
    // inward delivers every packet addressed to that target.
    for target in 0..n {
        dag.run(g, target);
        for &v in &dag.order {
            flow[v] = 1.0;
        }
        for &v in dag.order.iter().rev() {
            if v == target {
                continue;
            }
            let share = flow[v] / dag.preds[v].len() as f64;
            for &x in &dag.preds[v] {
                if x != target {
                    flow[x] += share;
                }
            }
        }
        for &v in &dag.order {
            if v != target {
                load[v] += flow[v] - 1.0;
            }
        }
    }
    let scale = 1.0 / ((n - 1) * (n - 2)) as f64;
    Ok(scores(
        CentralityMeasure::Load,
        g,
        load.into_iter().map(|x| x * scale).collect(),
    ))
}

/// `(r-1)/Σd · (r-1)/(n-1)` where `r` is the size of the node's component.
pub fn closeness_centrality(g: &Graph) -> Result<CentralityScores, CentralityError> {
    require(g, CentralityMeasure::Closeness)?;
    let n = g.n();
    let s = (0..n)
        .map(|v| {
            let dist = g.bfs_distances(v);
            let (reach, total) = dist
                .iter()
                .flatten()
                .fold((0usize, 0usize), |(r, t), &d| (r + 1, t + d));
            if total == 0 {
                return 0.0;
            }
            let r = (reach - 1) as f64;
            (r / total as f64) * (r / (n - 1) as f64)
        })
        .collect();
    Ok(scores(CentralityMeasure::Closeness, g, s))
}

/// Power iteration with uniform teleport; mass on isolated nodes is spread
/// uniformly.
pub fn pagerank_centrality(
    g: &Graph,
    params: PageRankParams,
) -> Result<CentralityScores, CentralityError> {
    require(g, CentralityMeasure::PageRank)?;
    let n = g.n();
    let nf = n as f64;
    let d = params.damping;
    let mut x = vec![1.0 / nf; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..params.max_iter {
        let dangling: f64 = (0..n).filter(|&v| g.degree(v) == 0).map(|v| x[v]).sum();
        let base = (1.0 - d) / nf + d * dangling / nf;
        next.fill(base);
        for v in 0..n {
            let deg = g.degree(v);
            if deg == 0 {
                continue;
            }
            let share = d * x[v] / deg as f64;
            for &u in g.neighbors(v) {
                next[u] += share;
            }
        }
        residual = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut x, &mut next);
        if residual < params.tol {
            return Ok(scores(CentralityMeasure::PageRank, g, x));
        }
    }
    Err(CentralityError::NoConvergence {
        iterations: params.max_iter,
        residual,
    })
}
