//! Reader for the plain-text TUDataset layout (`{name}_A.txt`,
//! `{name}_graph_indicator.txt`, `{name}_graph_labels.txt`, and optional
//! `{name}_node_labels.txt` / `{name}_node_attributes.txt`).

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use super::{Dataset, Graph, GraphError};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing dataset file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("reading {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{file}:{line}: {msg}")]
    Format {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("graph {0} has no nodes")]
    EmptyGraph(usize),
    #[error("graph {graph_id}: {source}")]
    Graph { graph_id: usize, source: GraphError },
}

struct TextFile {
    name: String,
    body: String,
}

impl TextFile {
    fn open(path: &Path) -> Result<Self, DataError> {
        if !path.exists() {
            return Err(DataError::MissingFile(path.to_path_buf()));
        }
        let body = fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let name = path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(Self { name, body })
    }

    fn open_optional(path: &Path) -> Result<Option<Self>, DataError> {
        if path.exists() {
            Self::open(path).map(Some)
        } else {
            Ok(None)
        }
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> DataError {
        DataError::Format {
            file: self.name.clone(),
            line,
            msg: msg.into(),
        }
    }

    /// Non-blank lines with their 1-based line numbers, each split on commas.
    fn records(&self) -> impl Iterator<Item = (usize, Vec<&str>)> {
        self.body
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| (i + 1, l.split(',').map(str::trim).collect()))
    }

    fn parse_field<T: FromStr>(&self, line: usize, field: &str) -> Result<T, DataError> {
        field
            .parse()
            .map_err(|_| self.err(line, format!("cannot parse {field:?}")))
    }

    fn column<T: FromStr>(&self) -> Result<Vec<T>, DataError> {
        self.records()
            .map(|(line, fields)| {
                if fields.len() != 1 {
                    return Err(self.err(line, "expected a single value"));
                }
                self.parse_field(line, fields[0])
            })
            .collect()
    }
}

/// Loads `dir/{name}_*.txt`. Node labels become one-hot columns; continuous
/// attributes follow them. Graph labels are remapped to `0..num_classes` in
/// ascending order of the raw values.
pub fn load_tudataset(dir: impl AsRef<Path>, name: &str) -> Result<Dataset, DataError> {
    let dir = dir.as_ref();
    let file = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));

    let adjacency = TextFile::open(&file("A"))?;
    let indicator_file = TextFile::open(&file("graph_indicator"))?;
    let labels_file = TextFile::open(&file("graph_labels"))?;
    let node_labels_file = TextFile::open_optional(&file("node_labels"))?;
    let attributes_file = TextFile::open_optional(&file("node_attributes"))?;

    let raw_labels: Vec<i64> = labels_file.column()?;
    let num_graphs = raw_labels.len();

    // node (0-based global) -> graph (0-based)
    let mut node_graph = Vec::new();
    for (line, fields) in indicator_file.records() {
        if fields.len() != 1 {
            return Err(indicator_file.err(line, "expected a single value"));
        }
        let g: usize = indicator_file.parse_field(line, fields[0])?;
        if g == 0 || g > num_graphs {
            return Err(indicator_file.err(line, format!("graph id {g} outside 1..={num_graphs}")));
        }
        node_graph.push(g - 1);
    }
    let num_nodes = node_graph.len();

    let mut graph_sizes = vec![0usize; num_graphs];
    let mut local_index = vec![0usize; num_nodes];
    for (v, &g) in node_graph.iter().enumerate() {
        local_index[v] = graph_sizes[g];
        graph_sizes[g] += 1;
    }
    if let Some(g) = graph_sizes.iter().position(|&s| s == 0) {
        return Err(DataError::EmptyGraph(g));
    }

    let mut graph_edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_graphs];
    for (line, fields) in adjacency.records() {
        if fields.len() != 2 {
            return Err(adjacency.err(line, "expected `u, v`"));
        }
        let u: usize = adjacency.parse_field(line, fields[0])?;
        let v: usize = adjacency.parse_field(line, fields[1])?;
        if u == 0 || v == 0 || u > num_nodes || v > num_nodes {
            return Err(adjacency.err(line, format!("node id outside 1..={num_nodes}")));
        }
        let (u, v) = (u - 1, v - 1);
        let g = node_graph[u];
        if node_graph[v] != g {
            return Err(adjacency.err(
                line,
                format!(
                    "edge ({}, {}) crosses graphs {} and {}",
                    u + 1,
                    v + 1,
                    g + 1,
                    node_graph[v] + 1
                ),
            ));
        }
        graph_edges[g].push((local_index[u], local_index[v]));
    }

    let node_labels: Option<Vec<i64>> = match &node_labels_file {
        Some(f) => {
            let col: Vec<i64> = f.column()?;
            if col.len() != num_nodes {
                return Err(f.err(col.len(), format!("expected {num_nodes} node labels")));
            }
            Some(col)
        }
        None => None,
    };
    let attributes: Option<Vec<Vec<f64>>> = match &attributes_file {
        Some(f) => {
            let mut rows = Vec::with_capacity(num_nodes);
            let mut width = None;
            for (line, fields) in f.records() {
                let row = fields
                    .iter()
                    .map(|x| f.parse_field::<f64>(line, x))
                    .collect::<Result<Vec<_>, _>>()?;
                match width {
                    None => width = Some(row.len()),
                    Some(w) if w != row.len() => {
                        return Err(f.err(line, format!("expected {w} attributes")))
                    }
                    _ => {}
                }
                rows.push(row);
            }
            if rows.len() != num_nodes {
                return Err(f.err(rows.len(), format!("expected {num_nodes} attribute rows")));
            }
            Some(rows)
        }
        None => None,
    };

    let label_values: Vec<i64> = node_labels
        .as_ref()
        .map(|l| {
            l.iter()
                .copied()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        })
        .unwrap_or_default();
    let attr_width = attributes
        .as_ref()
        .map_or(0, |a| a.first().map_or(0, Vec::len));
    let feature_dim = label_values.len() + attr_width;

    let mut features: Vec<Option<Tensor>> = (0..num_graphs)
        .map(|g| (feature_dim > 0).then(|| Tensor::zeros(graph_sizes[g], feature_dim)))
        .collect();
    if feature_dim > 0 {
        for v in 0..num_nodes {
            let f = features[node_graph[v]].as_mut().unwrap();
            let row = f.row_mut(local_index[v]);
            if let Some(labels) = &node_labels {
                let slot = label_values.binary_search(&labels[v]).unwrap();
                row[slot] = 1.0;
            }
            if let Some(attrs) = &attributes {
                row[label_values.len()..].copy_from_slice(&attrs[v]);
            }
        }
    }

    let classes: Vec<i64> = raw_labels
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let graphs = (0..num_graphs)
        .map(|g| {
            let label = classes.binary_search(&raw_labels[g]).unwrap();
            Graph::from_edges(
                graph_sizes[g],
                &graph_edges[g],
                features[g].take(),
                label,
                g,
            )
            .map_err(|source| DataError::Graph {
                graph_id: g,
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(Dataset {
        name: name.to_string(),
        graphs,
        num_classes: classes.len(),
        feature_dim,
    })
}

/// Gives every node the single feature `1.0` when the dataset has no node
/// information; featured datasets are returned unchanged.
pub fn fill_featureless(mut ds: Dataset) -> Dataset {
    if ds.feature_dim > 0 {
        return ds;
    }
    ds.graphs = ds
        .graphs
        .into_iter()
        .map(|g| {
            let n = g.n();
            g.with_features(Tensor::filled(n, 1, 1.0))
                .expect("row count matches")
        })
        .collect();
    ds.feature_dim = 1;
    ds
}
