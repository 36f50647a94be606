//! Brute-force oracles and random graph helpers shared by integration tests.
#![allow(dead_code)]

use camp_core::graph::Graph;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn random_graph(n: usize, p: f64, rng: &mut impl Rng) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edges(n, &edges, None, 0, 0).unwrap()
}

pub fn random_connected(n: usize, p: f64, rng: &mut impl Rng) -> Graph {
    loop {
        let g = random_graph(n, p, rng);
        if g.is_connected() {
            return g;
        }
    }
}

pub fn adjacency(g: &Graph) -> Vec<Vec<bool>> {
    let mut a = vec![vec![false; g.n()]; g.n()];
    for (u, v) in g.edges() {
        a[u][v] = true;
        a[v][u] = true;
    }
    a
}

/// Floyd–Warshall hop distances; `None` when unreachable.
pub fn all_pairs_distances(g: &Graph) -> Vec<Vec<Option<usize>>> {
    let n = g.n();
    let a = adjacency(g);
    let mut d: Vec<Vec<Option<usize>>> = (0..n)
        .map(|u| {
            (0..n)
                .map(|v| {
                    if u == v {
                        Some(0)
                    } else if a[u][v] {
                        Some(1)
                    } else {
                        None
                    }
                })
                .collect()
        })
        .collect();
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if let (Some(x), Some(y)) = (d[i][k], d[k][j]) {
                    if d[i][j].map_or(true, |c| x + y < c) {
                        d[i][j] = Some(x + y);
                    }
                }
            }
        }
    }
    d
}

pub fn degree_oracle(g: &Graph) -> Vec<f64> {
    let n = g.n();
    adjacency(g)
        .iter()
        .map(|row| row.iter().filter(|&&x| x).count() as f64 / (n - 1) as f64)
        .collect()
}

/// Every shortest `s → t` path, listed explicitly.
fn shortest_paths(
    a: &[Vec<bool>],
    d: &[Vec<Option<usize>>],
    s: usize,
    t: usize,
) -> Vec<Vec<usize>> {
    fn extend(
        a: &[Vec<bool>],
        d: &[Vec<Option<usize>>],
        path: &mut Vec<usize>,
        t: usize,
        out: &mut Vec<Vec<usize>>,
    ) {
        let cur = *path.last().unwrap();
        if cur == t {
            out.push(path.clone());
            return;
        }
        for w in 0..a.len() {
            if a[cur][w] && d[w][t].is_some() && d[w][t].unwrap() + 1 == d[cur][t].unwrap() {
                path.push(w);
                extend(a, d, path, t, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    if d[s][t].is_some() {
        extend(a, d, &mut vec![s], t, &mut out);
    }
    out
}

/// Fraction of shortest paths through each node, summed over ordered pairs
/// and divided by `(n−1)(n−2)`.
pub fn betweenness_oracle(g: &Graph) -> Vec<f64> {
    let n = g.n();
    let (a, d) = (adjacency(g), all_pairs_distances(g));
    let mut bc = vec![0.0; n];
    for s in 0..n {
        for t in 0..n {
            if s == t {
                continue;
            }
            let paths = shortest_paths(&a, &d, s, t);
            if paths.is_empty() {
                continue;
            }
            for v in (0..n).filter(|&v| v != s && v != t) {
                let through = paths.iter().filter(|p| p.contains(&v)).count();
                bc[v] += through as f64 / paths.len() as f64;
            }
        }
    }
    bc.iter().map(|x| x / ((n - 1) * (n - 2)) as f64).collect()
}

/// Goh's load: a unit packet per ordered pair, split equally at every node
/// among neighbours one hop closer to the target.
pub fn load_oracle(g: &Graph) -> Vec<f64> {
    fn push(
        a: &[Vec<bool>],
        d: &[Vec<Option<usize>>],
        node: usize,
        t: usize,
        amount: f64,
        load: &mut [f64],
    ) {
        if node == t {
            return;
        }
        let next: Vec<usize> = (0..a.len())
            .filter(|&w| a[node][w] && d[w][t].map_or(false, |x| x + 1 == d[node][t].unwrap()))
            .collect();
        let share = amount / next.len() as f64;
        for w in next {
            if w != t {
                load[w] += share;
            }
            push(a, d, w, t, share, load);
        }
    }
    let n = g.n();
    let (a, d) = (adjacency(g), all_pairs_distances(g));
    let mut load = vec![0.0; n];
    for s in 0..n {
        for t in 0..n {
            if s != t && d[s][t].is_some() {
                push(&a, &d, s, t, 1.0, &mut load);
            }
        }
    }
    load.iter()
        .map(|x| x / ((n - 1) * (n - 2)) as f64)
        .collect()
}

/// Component-scaled closeness from Floyd–Warshall distances.
pub fn closeness_oracle(g: &Graph) -> Vec<f64> {
    let n = g.n();
    let d = all_pairs_distances(g);
    (0..n)
        .map(|v| {
            let reach: Vec<usize> = d[v].iter().flatten().copied().collect();
            let total: usize = reach.iter().sum();
            if total == 0 {
                return 0.0;
            }
            let r = (reach.len() - 1) as f64;
            r / total as f64 * r / (n - 1) as f64
        })
        .collect()
}

/// Stationary vector from a dense linear solve of
/// `(I − α·M) x = (1 − α)/n · 1`, where `M` is column stochastic and
/// isolated nodes jump uniformly.
pub fn pagerank_oracle(g: &Graph, damping: f64) -> Vec<f64> {
    let n = g.n();
    let a = adjacency(g);
    let mut m = DMatrix::zeros(n, n);
    for v in 0..n {
        let deg = a[v].iter().filter(|&&x| x).count();
        for u in 0..n {
            m[(u, v)] = if deg == 0 {
                1.0 / n as f64
            } else if a[v][u] {
                1.0 / deg as f64
            } else {
                0.0
            };
        }
    }
    let lhs = DMatrix::identity(n, n) - m * damping;
    let rhs = DVector::from_element(n, (1.0 - damping) / n as f64);
    lhs.lu().solve(&rhs).unwrap().iter().copied().collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
