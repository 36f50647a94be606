//! Asynchronous GCN and GIN models.
//!
//! Node features pass through a linear encoder, then `L` message-passing
//! layers. At layer `l` only the nodes in that layer's batch recompute their
//! features; every other node carries its stored row forward unchanged. A
//! mean readout and a linear head produce class logits.

mod checkpoint;
pub(crate) mod forward;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::glorot_uniform;
use crate::scheduler::ScheduleError;
use crate::tensor::{ShapeError, Tensor};

pub use checkpoint::{
    load_checkpoint, save_checkpoint, CheckpointError, CheckpointMeta, ScheduleMeta, TensorMeta,
};
pub use forward::{
    bind_params, bound_from_vars, camp_layer_forward, encode, forward_layers, forward_states,
    layer_plans, minibatch_logits, minibatch_loss, model_forward, readout, sync_layer_forward,
    BoundLayer, BoundParams, DropoutPlan, LayerPlan, Minibatch,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("schedule has {schedule} layers, config {config}, parameters {params}")]
    LayerCount {
        schedule: usize,
        config: usize,
        params: usize,
    },
    #[error("input has {got} feature columns, model expects {expected}")]
    InputDim { got: usize, expected: usize },
    #[error("graph {0} has no node features")]
    MissingFeatures(usize),
    #[error("unknown {what} {value:?}")]
    Parse { what: &'static str, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Gcn,
    Gin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AggregationScope {
    /// Batch nodes aggregate from their whole neighbourhood.
    AllNeighbors,
    /// Batch nodes aggregate only from neighbours in the same batch.
    BatchNeighbors,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Normalization {
    /// `1/sqrt((d_u + 1)(d_v + 1))` with degrees of the full graph.
    SymmetricDegree,
    None,
}

macro_rules! text_enum {
    ($ty:ty, $what:literal, { $($name:literal => $variant:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = ModelError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.to_ascii_lowercase().as_str() {
                    $($name => Ok($variant),)+
                    _ => Err(ModelError::Parse { what: $what, value: s.to_string() }),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $variant { return f.write_str($name); })+
                unreachable!()
            }
        }
    };
}

text_enum!(Arch, "architecture", { "gcn" => Arch::Gcn, "gin" => Arch::Gin });
text_enum!(AggregationScope, "aggregation scope", {
    "all" => AggregationScope::AllNeighbors,
    "batch" => AggregationScope::BatchNeighbors,
});
text_enum!(Normalization, "normalization", {
    "symmetric" => Normalization::SymmetricDegree,
    "none" => Normalization::None,
});

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub layers: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub scope: AggregationScope,
    pub normalization: Normalization,
    /// Update every node at every layer (the synchronous baseline).
    pub sync: bool,
}

impl ModelConfig {
    /// Defaults for an architecture: GCN normalizes symmetrically, GIN sums.
    pub fn new(arch: Arch, layers: usize, hidden_dim: usize) -> Self {
        Self {
            arch,
            layers,
            hidden_dim,
            dropout: 0.5,
            scope: AggregationScope::AllNeighbors,
            normalization: match arch {
                Arch::Gcn => Normalization::SymmetricDegree,
                Arch::Gin => Normalization::None,
            },
            sync: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Gcn {
        weight: Tensor,
        bias: Tensor,
    },
    Gin {
        weight: Tensor,
        /// `1×1`, initialized to zero.
        eps: Tensor,
        mlp_w1: Tensor,
        mlp_b1: Tensor,
        mlp_w2: Tensor,
        mlp_b2: Tensor,
    },
}

impl LayerParams {
    pub fn init(arch: Arch, dim: usize, rng: &mut impl Rng) -> Self {
        match arch {
            Arch::Gcn => LayerParams::Gcn {
                weight: glorot_uniform(dim, dim, rng),
                bias: Tensor::zeros(1, dim),
            },
            Arch::Gin => LayerParams::Gin {
                weight: glorot_uniform(dim, dim, rng),
                eps: Tensor::zeros(1, 1),
                mlp_w1: glorot_uniform(dim, dim, rng),
                mlp_b1: Tensor::zeros(1, dim),
                mlp_w2: glorot_uniform(dim, dim, rng),
                mlp_b2: Tensor::zeros(1, dim),
            },
        }
    }

    pub fn arch(&self) -> Arch {
        match self {
            LayerParams::Gcn { .. } => Arch::Gcn,
            LayerParams::Gin { .. } => Arch::Gin,
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        match self {
            LayerParams::Gcn { weight, bias } => vec![weight, bias],
            LayerParams::Gin {
                weight,
                eps,
                mlp_w1,
                mlp_b1,
                mlp_w2,
                mlp_b2,
            } => vec![weight, eps, mlp_w1, mlp_b1, mlp_w2, mlp_b2],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            LayerParams::Gcn { weight, bias } => vec![weight, bias],
            LayerParams::Gin {
                weight,
                eps,
                mlp_w1,
                mlp_b1,
                mlp_w2,
                mlp_b2,
            } => vec![weight, eps, mlp_w1, mlp_b1, mlp_w2, mlp_b2],
        }
    }

    fn tensor_names(&self) -> &'static [&'static str] {
        match self {
            LayerParams::Gcn { .. } => &["weight", "bias"],
            LayerParams::Gin { .. } => &["weight", "eps", "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2"],
        }
    }

    /// Matrix weights (biases and `eps` excluded).
    pub fn weight_matrices(&self) -> Vec<&Tensor> {
        match self {
            LayerParams::Gcn { weight, .. } => vec![weight],
            LayerParams::Gin {
                weight,
                mlp_w1,
                mlp_w2,
                ..
            } => vec![weight, mlp_w1, mlp_w2],
        }
    }
}

/// All trainable tensors of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder_w: Tensor,
    pub encoder_b: Tensor,
    pub layers: Vec<LayerParams>,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl ModelParams {
    pub fn init(
        cfg: &ModelConfig,
        input_dim: usize,
        num_classes: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let h = cfg.hidden_dim;
        let encoder_w = glorot_uniform(input_dim, h, rng);
        let layers = (0..cfg.layers)
            .map(|_| LayerParams::init(cfg.arch, h, rng))
            .collect();
        let head_w = glorot_uniform(h, num_classes, rng);
        Self {
            encoder_w,
            encoder_b: Tensor::zeros(1, h),
            layers,
            head_w,
            head_b: Tensor::zeros(1, num_classes),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder_w.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.encoder_w.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.head_w.cols()
    }

    /// Flat list in a fixed order: encoder, layers, head.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.encoder_w, &self.encoder_b];
        for l in &self.layers {
            out.extend(l.tensors());
        }
        out.push(&self.head_w);
        out.push(&self.head_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.encoder_w, &mut self.encoder_b];
        for l in &mut self.layers {
            out.extend(l.tensors_mut());
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = vec!["encoder_w".to_string(), "encoder_b".to_string()];
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(
                l.tensor_names()
                    .iter()
                    .map(|n| format!("layer{}.{n}", i + 1)),
            );
        }
        out.push("head_w".into());
        out.push("head_b".into());
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Largest absolute entry over the message-passing weight matrices.
    pub fn max_layer_weight(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(LayerParams::weight_matrices)
            .map(Tensor::max_abs)
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

/// Features of every node plus the layer at which each node was last
/// updated (0 = never, i.e. still the encoder output).
#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub features: Tensor,
    pub last_updated: Vec<usize>,
}

impl NodeState {
    pub fn new(features: Tensor) -> Self {
        let n = features.rows();
        Self {
            features,
            last_updated: vec![0; n],
        }
    }
}
