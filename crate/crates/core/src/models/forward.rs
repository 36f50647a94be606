use std::rc::Rc;

use crate::autodiff::{Aggregation, Tape, Var};
use crate::graph::Graph;
use crate::scheduler::{layer_mask, LayerMask, LayerSchedule};
use crate::seeds;
use crate::tensor::Tensor;

use super::{
    AggregationScope, Arch, LayerParams, ModelConfig, ModelError, ModelParams, NodeState,
    Normalization,
};

/// Which rows one layer updates and what each of them aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerPlan {
    /// Updated rows, ascending.
    pub rows: Rc<[usize]>,
    /// One aggregation row per entry of `rows`.
    pub agg: Rc<Aggregation>,
    /// Every node updates (synchronous layer); `rows` is `0..n`.
    pub full: bool,
}

fn edge_weight(g: &Graph, v: usize, u: usize, norm: Normalization) -> f64 {
    match norm {
        Normalization::SymmetricDegree => {
            1.0 / (((g.degree(v) + 1) * (g.degree(u) + 1)) as f64).sqrt()
        }
        Normalization::None => 1.0,
    }
}

impl LayerPlan {
    pub fn from_active(g: &Graph, active: &[bool], cfg: &ModelConfig) -> Self {
        let rows: Vec<usize> = (0..g.n()).filter(|&v| active[v]).collect();
        let mut agg = Aggregation::new();
        for &v in &rows {
            agg.push_row(
                g.neighbors(v)
                    .iter()
                    .filter(|&&u| cfg.scope == AggregationScope::AllNeighbors || active[u])
                    .map(|&u| (u, edge_weight(g, v, u, cfg.normalization))),
            );
        }
        Self {
            rows: rows.into(),
            agg: Rc::new(agg),
            full: false,
        }
    }

    pub fn from_mask(g: &Graph, mask: &LayerMask, cfg: &ModelConfig) -> Self {
        Self::from_active(g, &mask.active_nodes, cfg)
    }

    /// Synchronous layer: all nodes, whole neighbourhoods.
    pub fn full(g: &Graph, cfg: &ModelConfig) -> Self {
        let mut agg = Aggregation::new();
        for v in 0..g.n() {
            agg.push_row(
                g.neighbors(v)
                    .iter()
                    .map(|&u| (u, edge_weight(g, v, u, cfg.normalization))),
            );
        }
        Self {
            rows: (0..g.n()).collect::<Vec<_>>().into(),
            agg: Rc::new(agg),
            full: true,
        }
    }

    /// Block-diagonal composition: part `i` is shifted by `offsets[i]`.
    pub fn concat(parts: &[&LayerPlan], offsets: &[usize]) -> Self {
        let mut rows = Vec::new();
        let mut agg = Aggregation::new();
        let mut full = true;
        for (p, &off) in parts.iter().zip(offsets) {
            full &= p.full;
            rows.extend(p.rows.iter().map(|r| r + off));
            for i in 0..p.agg.num_rows() {
                agg.push_row(p.agg.row(i).map(|(s, w)| (s + off, w)));
            }
        }
        Self {
            rows: rows.into(),
            agg: Rc::new(agg),
            full,
        }
    }
}

fn check_layers(
    sched: &LayerSchedule,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<(), ModelError> {
    if sched.num_layers() != cfg.layers || params.layers.len() != cfg.layers {
        return Err(ModelError::LayerCount {
            schedule: sched.num_layers(),
            config: cfg.layers,
            params: params.layers.len(),
        });
    }
    Ok(())
}

/// Per-layer plans for one graph. With `cfg.sync` every layer is a full
/// synchronous layer and the schedule only fixes the depth.
pub fn layer_plans(
    g: &Graph,
    sched: &LayerSchedule,
    cfg: &ModelConfig,
) -> Result<Vec<LayerPlan>, ModelError> {
    if cfg.sync {
        let full = LayerPlan::full(g, cfg);
        return Ok(vec![full; sched.num_layers()]);
    }
    (1..=sched.num_layers())
        .map(|l| Ok(LayerPlan::from_mask(g, &layer_mask(sched, g, l)?, cfg)))
        .collect()
}

#[derive(Debug, Clone)]
pub enum BoundLayer {
    Gcn {
        weight: Var,
        bias: Var,
    },
    Gin {
        weight: Var,
        eps: Var,
        mlp_w1: Var,
        mlp_b1: Var,
        mlp_w2: Var,
        mlp_b2: Var,
    },
}

/// Parameters recorded as tape leaves.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub encoder_w: Var,
    pub encoder_b: Var,
    pub layers: Vec<BoundLayer>,
    pub head_w: Var,
    pub head_b: Var,
    /// Same order as [`ModelParams::tensors`].
    pub all: Vec<Var>,
}

pub fn bind_params(tape: &mut Tape, params: &ModelParams) -> BoundParams {
    let vars: Vec<Var> = params
        .tensors()
        .into_iter()
        .map(|t| tape.leaf(t.clone()))
        .collect();
    bound_from_vars(params, &vars)
}

/// Arranges already-recorded vars (in [`ModelParams::tensors`] order) to
/// match the structure of `params`.
pub fn bound_from_vars(params: &ModelParams, vars: &[Var]) -> BoundParams {
    assert_eq!(
        vars.len(),
        params.tensors().len(),
        "one var per parameter tensor"
    );
    let mut it = vars.iter().copied();
    let mut next = || it.next().expect("counted above");
    let encoder_w = next();
    let encoder_b = next();
    let layers = params
        .layers
        .iter()
        .map(|l| match l.arch() {
            Arch::Gcn => BoundLayer::Gcn {
                weight: next(),
                bias: next(),
            },
            Arch::Gin => BoundLayer::Gin {
                weight: next(),
                eps: next(),
                mlp_w1: next(),
                mlp_b1: next(),
                mlp_w2: next(),
                mlp_b2: next(),
            },
        })
        .collect();
    let head_w = next();
    let head_b = next();
    BoundParams {
        encoder_w,
        encoder_b,
        layers,
        head_w,
        head_b,
        all: vars.to_vec(),
    }
}

/// Dropout applied to each layer's activation during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutPlan {
    pub rate: f64,
    pub seed: u64,
}

/// New features for the rows of `plan`, computed from the stored features
/// `h` of all nodes.
fn updated_rows(
    tape: &mut Tape,
    h: Var,
    plan: &LayerPlan,
    layer: &BoundLayer,
    dropout: Option<DropoutPlan>,
) -> Result<Var, ModelError> {
    let agg = tape.aggregate(h, plan.agg.clone())?;
    let own = if plan.full {
        h
    } else {
        tape.row_mask_select(h, plan.rows.clone())?
    };
    let activated = match *layer {
        BoundLayer::Gcn { weight, bias } => {
            let z = tape.matmul(agg, weight)?;
            let z = tape.add(z, bias)?;
            tape.relu(z)
        }
        BoundLayer::Gin {
            weight,
            eps,
            mlp_w1,
            mlp_b1,
            mlp_w2,
            mlp_b2,
        } => {
            let messages = tape.matmul(agg, weight)?;
            let one_plus_eps = tape.add_const(eps, 1.0);
            let self_term = tape.scale_by(own, one_plus_eps)?;
            let pre = tape.add(self_term, messages)?;
            let z = tape.matmul(pre, mlp_w1)?;
            let z = tape.add(z, mlp_b1)?;
            let z = tape.relu(z);
            let z = tape.matmul(z, mlp_w2)?;
            let z = tape.add(z, mlp_b2)?;
            tape.relu(z)
        }
    };
    let activated = match dropout {
        Some(d) => tape.dropout(activated, d.rate, d.seed),
        None => activated,
    };
    Ok(match layer {
        // residual self-term
        BoundLayer::Gcn { .. } => tape.add(own, activated)?,
        BoundLayer::Gin { .. } => activated,
    })
}

fn layer_step(
    tape: &mut Tape,
    h: Var,
    plan: &LayerPlan,
    layer: &BoundLayer,
    dropout: Option<DropoutPlan>,
) -> Result<Var, ModelError> {
    if plan.rows.is_empty() {
        return Ok(h);
    }
    let new_rows = updated_rows(tape, h, plan, layer, dropout)?;
    if plan.full {
        Ok(new_rows)
    } else {
        Ok(tape.masked_row_scatter(h, plan.rows.clone(), new_rows)?)
    }
}

/// Runs the message-passing stack from `h0`. Returns the stored features
/// after every layer, starting with `h0` itself.
pub fn forward_layers(
    tape: &mut Tape,
    h0: Var,
    plans: &[LayerPlan],
    layers: &[BoundLayer],
    dropout: Option<DropoutPlan>,
) -> Result<Vec<Var>, ModelError> {
    let mut states = Vec::with_capacity(plans.len() + 1);
    states.push(h0);
    let mut h = h0;
    for (l, (plan, layer)) in plans.iter().zip(layers).enumerate() {
        let d = dropout.map(|d| DropoutPlan {
            rate: d.rate,
            seed: seeds::derive(d.seed, l as u64),
        });
        h = layer_step(tape, h, plan, layer, d)?;
        states.push(h);
    }
    Ok(states)
}

/// Several graphs stacked block-diagonally for one step.
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub features: Tensor,
    pub plans: Vec<LayerPlan>,
    /// Row offsets of each graph, length `graphs + 1`.
    pub offsets: Rc<[usize]>,
    pub labels: Vec<usize>,
}

impl Minibatch {
    pub fn new(
        items: &[(&Graph, &LayerSchedule)],
        params: &ModelParams,
        cfg: &ModelConfig,
    ) -> Result<Self, ModelError> {
        let mut plans = Vec::with_capacity(items.len());
        for (g, sched) in items {
            check_layers(sched, params, cfg)?;
            plans.push(layer_plans(g, sched, cfg)?);
        }
        let graphs: Vec<&Graph> = items.iter().map(|(g, _)| *g).collect();
        let plans: Vec<&[LayerPlan]> = plans.iter().map(Vec::as_slice).collect();
        Self::from_plans(&graphs, &plans, params)
    }

    /// Stacks graphs whose per-layer plans are already built.
    pub fn from_plans(
        graphs: &[&Graph],
        plans: &[&[LayerPlan]],
        params: &ModelParams,
    ) -> Result<Self, ModelError> {
        let layers = params.layers.len();
        let mut offsets = vec![0];
        let mut data = Vec::new();
        for (g, p) in graphs.iter().zip(plans) {
            if p.len() != layers {
                return Err(ModelError::LayerCount {
                    schedule: p.len(),
                    config: layers,
                    params: layers,
                });
            }
            data.extend_from_slice(graph_features(g, params)?.data());
            offsets.push(offsets.last().unwrap() + g.n());
        }
        let plans = (0..layers)
            .map(|l| {
                let parts: Vec<&LayerPlan> = plans.iter().map(|p| &p[l]).collect();
                LayerPlan::concat(&parts, &offsets)
            })
            .collect();
        let rows = *offsets.last().unwrap();
        Ok(Self {
            features: Tensor::from_vec(rows, params.input_dim(), data)?,
            plans,
            offsets: offsets.into(),
            labels: graphs.iter().map(|g| g.label()).collect(),
        })
    }

    pub fn num_graphs(&self) -> usize {
        self.labels.len()
    }
}

/// `G×C` logits for a minibatch.
pub fn minibatch_logits(
    tape: &mut Tape,
    bound: &BoundParams,
    mb: &Minibatch,
    dropout: Option<DropoutPlan>,
) -> Result<Var, ModelError> {
    let x = tape.leaf(mb.features.clone());
    let h0 = encode(tape, x, bound)?;
    let states = forward_layers(tape, h0, &mb.plans, &bound.layers, dropout)?;
    readout(tape, *states.last().unwrap(), mb.offsets.clone(), bound)
}

/// Mean cross-entropy over the minibatch.
pub fn minibatch_loss(
    tape: &mut Tape,
    bound: &BoundParams,
    mb: &Minibatch,
    dropout: Option<DropoutPlan>,
) -> Result<Var, ModelError> {
    let logits = minibatch_logits(tape, bound, mb, dropout)?;
    let lp = tape.log_softmax(logits);
    Ok(tape.nll_loss(lp, &mb.labels)?)
}

pub fn encode(tape: &mut Tape, x: Var, bound: &BoundParams) -> Result<Var, ModelError> {
    let h = tape.matmul(x, bound.encoder_w)?;
    Ok(tape.add(h, bound.encoder_b)?)
}

/// Mean over each graph's rows, then the linear head.
pub fn readout(
    tape: &mut Tape,
    h: Var,
    graph_offsets: Rc<[usize]>,
    bound: &BoundParams,
) -> Result<Var, ModelError> {
    let pooled = tape.segment_mean_rows(h, graph_offsets)?;
    let logits = tape.matmul(pooled, bound.head_w)?;
    Ok(tape.add(logits, bound.head_b)?)
}

fn graph_features<'a>(g: &'a Graph, params: &ModelParams) -> Result<&'a Tensor, ModelError> {
    let x = g
        .features()
        .ok_or(ModelError::MissingFeatures(g.graph_id()))?;
    if x.cols() != params.input_dim() {
        return Err(ModelError::InputDim {
            got: x.cols(),
            expected: params.input_dim(),
        });
    }
    Ok(x)
}

pub(crate) fn bind_layer(tape: &mut Tape, params: &LayerParams) -> BoundLayer {
    let leaves: Vec<Var> = params
        .tensors()
        .into_iter()
        .map(|t| tape.leaf(t.clone()))
        .collect();
    match params.arch() {
        Arch::Gcn => BoundLayer::Gcn {
            weight: leaves[0],
            bias: leaves[1],
        },
        Arch::Gin => BoundLayer::Gin {
            weight: leaves[0],
            eps: leaves[1],
            mlp_w1: leaves[2],
            mlp_b1: leaves[3],
            mlp_w2: leaves[4],
            mlp_b2: leaves[5],
        },
    }
}

/// One asynchronous layer on concrete values. Nodes outside the mask keep
/// their row and timestamp.
pub fn camp_layer_forward(
    state: &NodeState,
    g: &Graph,
    mask: &LayerMask,
    params: &LayerParams,
    cfg: &ModelConfig,
    l: usize,
) -> Result<NodeState, ModelError> {
    let dim = params.tensors()[0].rows();
    if state.features.cols() != dim || state.features.rows() != g.n() {
        return Err(ModelError::InputDim {
            got: state.features.cols(),
            expected: dim,
        });
    }
    let plan = LayerPlan::from_mask(g, mask, cfg);
    let mut tape = Tape::new();
    let h = tape.leaf(state.features.clone());
    let layer = bind_layer(&mut tape, params);
    let out = layer_step(&mut tape, h, &plan, &layer, None)?;
    let mut last_updated = state.last_updated.clone();
    for &v in plan.rows.iter() {
        last_updated[v] = l;
    }
    Ok(NodeState {
        features: tape.value(out).clone(),
        last_updated,
    })
}

/// The synchronous baseline layer: every node updates from its whole
/// neighbourhood.
pub fn sync_layer_forward(
    h: &Tensor,
    g: &Graph,
    params: &LayerParams,
    cfg: &ModelConfig,
) -> Result<Tensor, ModelError> {
    let plan = LayerPlan::full(g, cfg);
    let mut tape = Tape::new();
    let hv = tape.leaf(h.clone());
    let layer = bind_layer(&mut tape, params);
    let out = layer_step(&mut tape, hv, &plan, &layer, None)?;
    Ok(tape.value(out).clone())
}

/// Stored node features after the encoder and after each layer, with
/// timestamps. Evaluation mode (no dropout).
pub fn forward_states(
    g: &Graph,
    sched: &LayerSchedule,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<Vec<NodeState>, ModelError> {
    check_layers(sched, params, cfg)?;
    let plans = layer_plans(g, sched, cfg)?;
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, params);
    let x = tape.leaf(graph_features(g, params)?.clone());
    let h0 = encode(&mut tape, x, &bound)?;
    let states = forward_layers(&mut tape, h0, &plans, &bound.layers, None)?;
    let mut last_updated = vec![0; g.n()];
    Ok(states
        .iter()
        .enumerate()
        .map(|(l, &s)| {
            if l > 0 {
                for &v in plans[l - 1].rows.iter() {
                    last_updated[v] = l;
                }
            }
            NodeState {
                features: tape.value(s).clone(),
                last_updated: last_updated.clone(),
            }
        })
        .collect())
}

/// Class logits (`1×C`) for one graph, evaluation mode.
pub fn model_forward(
    g: &Graph,
    sched: &LayerSchedule,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<Tensor, ModelError> {
    check_layers(sched, params, cfg)?;
    let plans = layer_plans(g, sched, cfg)?;
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, params);
    let x = tape.leaf(graph_features(g, params)?.clone());
    let h0 = encode(&mut tape, x, &bound)?;
    let states = forward_layers(&mut tape, h0, &plans, &bound.layers, None)?;
    let logits = readout(
        &mut tape,
        *states.last().unwrap(),
        Rc::from(vec![0, g.n()]),
        &bound,
    )?;
    Ok(tape.value(logits).clone())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::uniform;
    use crate::graph::fixtures::*;
    use crate::scheduler::LayerSchedule;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn single_edge_hand_evaluation() {
        let g = graph(2, &[(0, 1)]);
        let cfg = ModelConfig::new(Arch::Gcn, 1, 2);
        let params = LayerParams::Gcn {
            weight: Tensor::identity(2),
            bias: Tensor::zeros(1, 2),
        };
        let state = NodeState::new(Tensor::identity(2));
        let sched = LayerSchedule::from_batches(2, vec![vec![0]]).unwrap();
        let mask = layer_mask(&sched, &g, 1).unwrap();
        let out = camp_layer_forward(&state, &g, &mask, &params, &cfg, 1).unwrap();
        let norm = 1.0 / (2.0f64 * 2.0).sqrt();
        assert_eq!(out.features.row(0), &[1.0, norm]);
        assert_eq!(out.features.row(1), &[0.0, 1.0]);
        assert_eq!(out.last_updated, vec![1, 0]);
    }

    #[test]
    fn unbatched_rows_are_bit_identical() {
        let g = cycle(6);
        for arch in [Arch::Gcn, Arch::Gin] {
            let cfg = ModelConfig::new(arch, 1, 4);
            let params = LayerParams::init(arch, 4, &mut rng(1));
            let state = NodeState::new(uniform(6, 4, -1.0, 1.0, &mut rng(2)));
            let sched = LayerSchedule::from_batches(6, vec![vec![1, 4]]).unwrap();
            let mask = layer_mask(&sched, &g, 1).unwrap();
            let out = camp_layer_forward(&state, &g, &mask, &params, &cfg, 1).unwrap();
            for v in [0, 2, 3, 5] {
                assert_eq!(out.features.row(v), state.features.row(v));
                assert_eq!(out.last_updated[v], 0);
            }
            assert_eq!(out.last_updated[1], 1);
        }
    }

    #[test]
    fn empty_batch_is_identity() {
        let g = path(3);
        let cfg = ModelConfig::new(Arch::Gcn, 1, 3);
        let params = LayerParams::init(Arch::Gcn, 3, &mut rng(1));
        let state = NodeState::new(uniform(3, 3, -1.0, 1.0, &mut rng(2)));
        let sched = LayerSchedule::from_batches(3, vec![vec![]]).unwrap();
        let mask = layer_mask(&sched, &g, 1).unwrap();
        let out = camp_layer_forward(&state, &g, &mask, &params, &cfg, 1).unwrap();
        assert_eq!(out, state);
    }

    #[test]
    fn batch_scope_restricts_neighbours() {
        let g = path(3);
        let mut cfg = ModelConfig::new(Arch::Gcn, 1, 1);
        cfg.normalization = Normalization::None;
        cfg.scope = AggregationScope::BatchNeighbors;
        let params = LayerParams::Gcn {
            weight: Tensor::identity(1),
            bias: Tensor::zeros(1, 1),
        };
        let state = NodeState::new(Tensor::from_rows(&[[1.0], [10.0], [100.0]]));
        let sched = LayerSchedule::from_batches(3, vec![vec![0, 1]]).unwrap();
        let mask = layer_mask(&sched, &g, 1).unwrap();
        let out = camp_layer_forward(&state, &g, &mask, &params, &cfg, 1).unwrap();
        // node 1 sees only node 0, not node 2
        assert_eq!(out.features.data(), &[11.0, 11.0, 100.0]);
        cfg.scope = AggregationScope::AllNeighbors;
        let out = camp_layer_forward(&state, &g, &mask, &params, &cfg, 1).unwrap();
        assert_eq!(out.features.data(), &[11.0, 111.0, 100.0]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let g = path(3);
        let cfg = ModelConfig::new(Arch::Gcn, 1, 4);
        let params = LayerParams::init(Arch::Gcn, 4, &mut rng(1));
        let state = NodeState::new(Tensor::zeros(3, 5));
        let mask = layer_mask(&LayerSchedule::full(3, 1), &g, 1).unwrap();
        assert!(camp_layer_forward(&state, &g, &mask, &params, &cfg, 1).is_err());
    }

    #[test]
    fn zero_weights_give_head_bias() {
        let cfg = ModelConfig::new(Arch::Gcn, 2, 4);
        let mut params = ModelParams::init(&cfg, 3, 2, &mut rng(0));
        for t in params.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        params.head_b = Tensor::from_rows(&[[0.25, -1.5]]);
        for g in [path(4), cycle(5)] {
            let n = g.n();
            let g = g
                .with_features(uniform(n, 3, -1.0, 1.0, &mut rng(3)))
                .unwrap();
            let sched = LayerSchedule::from_batches(n, vec![vec![0], vec![1, 2]]).unwrap();
            let logits = model_forward(&g, &sched, &params, &cfg).unwrap();
            assert_eq!(logits, params.head_b);
        }
    }

    #[test]
    fn layer_count_must_agree() {
        let cfg = ModelConfig::new(Arch::Gcn, 2, 4);
        let params = ModelParams::init(&cfg, 1, 2, &mut rng(0));
        let g = path(3).with_features(Tensor::filled(3, 1, 1.0)).unwrap();
        let sched = LayerSchedule::full(3, 3);
        assert!(matches!(
            model_forward(&g, &sched, &params, &cfg),
            Err(ModelError::LayerCount { .. })
        ));
    }

    #[test]
    fn timestamps_record_the_updating_layer() {
        let cfg = ModelConfig::new(Arch::Gin, 3, 4);
        let params = ModelParams::init(&cfg, 2, 2, &mut rng(0));
        let g = path(5)
            .with_features(uniform(5, 2, 0.0, 1.0, &mut rng(1)))
            .unwrap();
        let sched = LayerSchedule::from_batches(5, vec![vec![2], vec![0, 4], vec![1, 3]]).unwrap();
        let states = forward_states(&g, &sched, &params, &cfg).unwrap();
        assert_eq!(states.len(), 4);
        assert_eq!(states[1].last_updated, vec![0, 0, 1, 0, 0]);
        assert_eq!(states[3].last_updated, vec![2, 3, 1, 3, 2]);
    }
}
