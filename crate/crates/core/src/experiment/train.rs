use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, OptimError, Tape};
use crate::centrality::{compute_for_ordering, CentralityMeasure, CentralityScores};
use crate::graph::{Dataset, Graph, SplitSpec};
use crate::models::{
    bind_params, layer_plans, minibatch_logits, DropoutPlan, LayerPlan, Minibatch, ModelConfig,
    ModelParams,
};
use crate::scheduler::{build_schedule, BatchMode, LayerSchedule, ScheduleParams};
use crate::seeds;

use super::{ExperimentConfig, ExperimentError, RunMode};

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_SCHEDULE: u64 = 3;
const STREAM_DROPOUT: u64 = 4;
/// Graphs per forward pass during evaluation.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub valid_loss: f64,
    pub valid_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum TrialStatus {
    Ok,
    /// Training hit a non-finite loss or gradient at `epoch`.
    Failed {
        epoch: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub status: TrialStatus,
    /// Epoch with the best validation accuracy (ties: lower validation loss).
    pub best_epoch: Option<usize>,
    pub valid_acc: Option<f64>,
    /// Test accuracy at `best_epoch`.
    pub test_acc: Option<f64>,
    pub curves: Vec<EpochRecord>,
    #[serde(skip)]
    pub best_params: Option<ModelParams>,
}

impl TrialResult {
    pub fn succeeded(&self) -> bool {
        self.status == TrialStatus::Ok && self.test_acc.is_some()
    }
}

/// Dataset plus per-graph centrality scores, shared by every trial.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: Dataset,
    pub scores: Option<Vec<CentralityScores>>,
}

impl Prepared {
    pub fn new(
        dataset: Dataset,
        measure: Option<CentralityMeasure>,
    ) -> Result<Self, ExperimentError> {
        let scores = measure
            .map(|m| {
                dataset
                    .graphs
                    .iter()
                    .map(|g| compute_for_ordering(m, g))
                    .collect::<Result<Vec<_>, _>>()
            })
            .transpose()?;
        Ok(Self { dataset, scores })
    }
}

/// Seed of the schedules used in `epoch` (epoch 0 unless schedules are
/// redrawn every epoch) of the trial seeded with `trial_seed`.
pub fn schedule_seed(trial_seed: u64, epoch: usize) -> u64 {
    seeds::derive(seeds::derive(trial_seed, STREAM_SCHEDULE), epoch as u64)
}

/// One layer schedule per graph for the configured mode.
pub fn schedules_for(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    seed: u64,
) -> Result<Vec<LayerSchedule>, ExperimentError> {
    let graphs = &prepared.dataset.graphs;
    let params = |i: usize, mode| ScheduleParams {
        layers: cfg.layers,
        order: cfg.order,
        p: cfg.p,
        seed: seeds::derive(seed, i as u64),
        mode,
    };
    graphs
        .iter()
        .enumerate()
        .map(|(i, g)| {
            Ok(match cfg.mode {
                RunMode::Sync => LayerSchedule::full(g.n(), cfg.layers),
                RunMode::Camp => {
                    let scores = prepared.scores.as_ref().ok_or_else(|| {
                        ExperimentError::Config(super::ConfigError::Invalid(
                            "centrality scores missing".into(),
                        ))
                    })?;
                    build_schedule(&scores[i], &params(i, BatchMode::Camp))?
                }
                RunMode::Ramp => {
                    let blank = CentralityScores {
                        measure: CentralityMeasure::Degree,
                        scores: vec![0.0; g.n()],
                        graph_id: g.graph_id(),
                    };
                    build_schedule(&blank, &params(i, BatchMode::Ramp))?
                }
            })
        })
        .collect()
}

fn all_plans(
    graphs: &[Graph],
    scheds: &[LayerSchedule],
    mcfg: &ModelConfig,
) -> Result<Vec<Vec<LayerPlan>>, ExperimentError> {
    graphs
        .iter()
        .zip(scheds)
        .map(|(g, s)| Ok(layer_plans(g, s, mcfg)?))
        .collect()
}

fn build_batch(
    idx: &[usize],
    graphs: &[Graph],
    plans: &[Vec<LayerPlan>],
    params: &ModelParams,
) -> Result<Minibatch, ExperimentError> {
    let gs: Vec<&Graph> = idx.iter().map(|&i| &graphs[i]).collect();
    let ps: Vec<&[LayerPlan]> = idx.iter().map(|&i| plans[i].as_slice()).collect();
    Ok(Minibatch::from_plans(&gs, &ps, params)?)
}

/// Mean loss and accuracy over pre-built batches, without dropout.
fn evaluate(batches: &[Minibatch], params: &ModelParams) -> Result<(f64, f64), ExperimentError> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut total = 0usize;
    for mb in batches {
        let mut tape = Tape::new();
        let bound = bind_params(&mut tape, params);
        let logits = minibatch_logits(&mut tape, &bound, mb, None)?;
        let lp = tape.log_softmax(logits);
        let l = tape.nll_loss(lp, &mb.labels)?;
        loss += tape.value(l).get(0, 0) * mb.num_graphs() as f64;
        let lp = tape.value(lp);
        for (r, &y) in mb.labels.iter().enumerate() {
            let row = lp.row(r);
            let pred = (0..row.len())
                .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
                .unwrap_or(0);
            correct += usize::from(pred == y);
        }
        total += mb.num_graphs();
    }
    if total == 0 {
        return Ok((0.0, 0.0));
    }
    Ok((loss / total as f64, correct as f64 / total as f64))
}

fn eval_batches(
    idx: &[usize],
    graphs: &[Graph],
    plans: &[Vec<LayerPlan>],
    params: &ModelParams,
) -> Result<Vec<Minibatch>, ExperimentError> {
    idx.chunks(EVAL_CHUNK)
        .map(|c| build_batch(c, graphs, plans, params))
        .collect()
}

/// Trains one model on the split seeded with `base_seed + trial` and
/// reports the test accuracy at the best validation epoch. Non-finite
/// losses or gradients end the trial with a `Failed` status.
pub fn run_trial(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    trial: usize,
) -> Result<TrialResult, ExperimentError> {
    cfg.validate()?;
    let ds = &prepared.dataset;
    let seed = cfg.base_seed.wrapping_add(trial as u64);
    let split = SplitSpec::new(ds.len(), seed)?;
    let mcfg = cfg.model_config();
    let mut params = ModelParams::init(
        &mcfg,
        ds.feature_dim,
        ds.num_classes,
        &mut ChaCha8Rng::seed_from_u64(seeds::derive(seed, STREAM_INIT)),
    );
    let resample = cfg.resample_per_epoch && (cfg.mode == RunMode::Ramp || cfg.p < 1.0);
    let epoch_seed = |epoch: usize| schedule_seed(seed, epoch);
    let mut plans = all_plans(
        &ds.graphs,
        &schedules_for(cfg, prepared, epoch_seed(0))?,
        &mcfg,
    )?;

    let mut adam = AdamState::new(
        AdamConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        },
        params.tensors(),
    );
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, STREAM_SHUFFLE));
    let dropout_base = seeds::derive(seed, STREAM_DROPOUT);
    let mut train_order = split.train_idx.clone();
    let mut curves = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, usize, f64)> = None;
    let mut best_params = None;

    let evals = |plans: &[Vec<LayerPlan>],
                 params: &ModelParams|
     -> Result<[Vec<Minibatch>; 3], ExperimentError> {
        Ok([
            eval_batches(&split.train_idx, &ds.graphs, plans, params)?,
            eval_batches(&split.valid_idx, &ds.graphs, plans, params)?,
            eval_batches(&split.test_idx, &ds.graphs, plans, params)?,
        ])
    };
    let mut eval_sets = evals(&plans, &params)?;

    for epoch in 1..=cfg.epochs {
        if resample && epoch > 1 {
            plans = all_plans(
                &ds.graphs,
                &schedules_for(cfg, prepared, epoch_seed(epoch))?,
                &mcfg,
            )?;
            eval_sets = evals(&plans, &params)?;
        }
        train_order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in train_order.chunks(cfg.batch_size).enumerate() {
            let mb = build_batch(chunk, &ds.graphs, &plans, &params)?;
            let mut tape = Tape::new();
            let bound = bind_params(&mut tape, &params);
            let dropout = (cfg.dropout > 0.0).then(|| DropoutPlan {
                rate: cfg.dropout,
                seed: seeds::derive(dropout_base, ((epoch as u64) << 24) | b as u64),
            });
            let logits = minibatch_logits(&mut tape, &bound, &mb, dropout)?;
            let lp = tape.log_softmax(logits);
            let loss = tape.nll_loss(lp, &mb.labels)?;
            let loss_value = tape.value(loss).get(0, 0);
            if !loss_value.is_finite() {
                return Ok(failed(trial, seed, epoch, "non-finite loss".into(), curves));
            }
            epoch_loss += loss_value * mb.num_graphs() as f64;
            let grads = tape.backward(loss)?;
            let grads: Vec<_> = bound
                .all
                .iter()
                .zip(params.tensors())
                .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
                .collect();
            match adam.step(&mut params.tensors_mut(), &grads) {
                Ok(()) => {}
                Err(OptimError::NonFiniteGradient { param }) => {
                    let reason = format!("non-finite gradient in {}", params.tensor_names()[param]);
                    return Ok(failed(trial, seed, epoch, reason, curves));
                }
                Err(e) => return Err(e.into()),
            }
        }
        if !params.is_finite() {
            return Ok(failed(
                trial,
                seed,
                epoch,
                "non-finite parameters".into(),
                curves,
            ));
        }
        let (_, train_acc) = evaluate(&eval_sets[0], &params)?;
        let (valid_loss, valid_acc) = evaluate(&eval_sets[1], &params)?;
        let (_, test_acc) = evaluate(&eval_sets[2], &params)?;
        curves.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / split.train_idx.len() as f64,
            train_acc,
            valid_loss,
            valid_acc,
            test_acc,
        });
        let better = match best {
            None => true,
            Some((acc, loss, _, _)) => valid_acc > acc || (valid_acc == acc && valid_loss < loss),
        };
        if better {
            best = Some((valid_acc, valid_loss, epoch, test_acc));
            if cfg.save_checkpoint {
                best_params = Some(params.clone());
            }
        }
    }
    let (valid_acc, _, best_epoch, test_acc) = best.expect("at least one epoch");
    Ok(TrialResult {
        trial,
        seed,
        status: TrialStatus::Ok,
        best_epoch: Some(best_epoch),
        valid_acc: Some(valid_acc),
        test_acc: Some(test_acc),
        curves,
        best_params,
    })
}

fn failed(
    trial: usize,
    seed: u64,
    epoch: usize,
    reason: String,
    curves: Vec<EpochRecord>,
) -> TrialResult {
    TrialResult {
        trial,
        seed,
        status: TrialStatus::Failed { epoch, reason },
        best_epoch: None,
        valid_acc: None,
        test_acc: None,
        curves,
        best_params: None,
    }
}
