use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::graph::Dataset;
use crate::models::{save_checkpoint, CheckpointMeta, ScheduleMeta};
use crate::scheduler::BatchMode;

use super::train::schedule_seed;
use super::{
    aggregate_values, reference_accuracy, AggregateResult, ExperimentConfig, ExperimentError,
    RunMode, RunOutcome, SweepRow, TrialStatus,
};

/// One line of `trials.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub seed: u64,
    pub status: String,
    pub failed_epoch: Option<usize>,
    pub best_epoch: Option<usize>,
    pub valid_acc: Option<f64>,
    pub test_acc: Option<f64>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn write_csv<T: Serialize>(
    path: &Path,
    rows: impl IntoIterator<Item = T>,
) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io(path))
}

pub fn read_trials_csv(path: &Path) -> Result<Vec<TrialRow>, ExperimentError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize()
        .collect::<Result<_, _>>()
        .map_err(csv_err(path))
}

/// Aggregate recomputed from the rows of `trials.csv`.
pub fn aggregate_rows(rows: &[TrialRow]) -> Option<AggregateResult> {
    let ok = |r: &&TrialRow| r.status == "ok";
    let per_trial = rows.iter().filter(ok).filter_map(|r| r.test_acc).collect();
    let failed = rows
        .iter()
        .filter(|r| r.status != "ok")
        .map(|r| r.trial)
        .collect();
    aggregate_values(per_trial, failed)
}

#[derive(Serialize)]
struct CurveRow {
    trial: usize,
    epoch: usize,
    train_loss: f64,
    train_acc: f64,
    valid_loss: f64,
    valid_acc: f64,
    test_acc: f64,
}

/// Schedule settings of the model saved for a trial; `epoch` matters only
/// when schedules are redrawn every epoch.
pub(crate) fn schedule_meta(
    cfg: &ExperimentConfig,
    trial_seed: u64,
    epoch: usize,
) -> Option<ScheduleMeta> {
    let mode = match cfg.mode {
        RunMode::Sync => return None,
        RunMode::Camp => BatchMode::Camp,
        RunMode::Ramp => BatchMode::Ramp,
    };
    Some(ScheduleMeta {
        measure: cfg.measure,
        order: cfg.order,
        p: cfg.p,
        mode,
        seed: schedule_seed(
            trial_seed,
            if cfg.resample_per_epoch && epoch > 1 {
                epoch
            } else {
                0
            },
        ),
    })
}

/// Writes `config.txt`, `trials.csv`, `summary.json`,
/// `figure_data/curves.csv` and, when requested, per-trial checkpoints
/// under `dir`. Returns `dir`.
pub fn write_run(
    dir: &Path,
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    outcome: &RunOutcome,
) -> Result<PathBuf, ExperimentError> {
    let figures = dir.join("figure_data");
    fs::create_dir_all(&figures).map_err(io(&figures))?;
    let cfg_path = dir.join("config.txt");
    fs::write(&cfg_path, cfg.emit()).map_err(io(&cfg_path))?;

    let rows = outcome.results.iter().map(|r| {
        let (status, failed_epoch) = match &r.status {
            TrialStatus::Ok => ("ok".to_string(), None),
            TrialStatus::Failed { epoch, .. } => ("failed".to_string(), Some(*epoch)),
        };
        TrialRow {
            trial: r.trial,
            seed: r.seed,
            status,
            failed_epoch,
            best_epoch: r.best_epoch,
            valid_acc: r.valid_acc,
            test_acc: r.test_acc,
        }
    });
    write_csv(&dir.join("trials.csv"), rows)?;

    let curves = outcome.results.iter().flat_map(|r| {
        r.curves.iter().map(move |e| CurveRow {
            trial: r.trial,
            epoch: e.epoch,
            train_loss: e.train_loss,
            train_acc: e.train_acc,
            valid_loss: e.valid_loss,
            valid_acc: e.valid_acc,
            test_acc: e.test_acc,
        })
    });
    write_csv(&figures.join("curves.csv"), curves)?;

    let failures: Vec<_> = outcome
        .results
        .iter()
        .filter_map(|r| match &r.status {
            TrialStatus::Failed { epoch, reason } => {
                Some(json!({"trial": r.trial, "epoch": epoch, "reason": reason}))
            }
            TrialStatus::Ok => None,
        })
        .collect();
    let reference = |camp| {
        reference_accuracy(&cfg.dataset, cfg.arch, camp)
            .map(|(m, s)| json!({"mean": m, "scaled_std": s}))
    };
    let config: serde_json::Map<String, serde_json::Value> = cfg
        .entries()
        .into_iter()
        .map(|(k, v)| (k.to_string(), serde_json::Value::String(v)))
        .collect();
    let summary = json!({
        "run_id": cfg.resolved_run_id(),
        "config": config,
        "dataset": {
            "name": dataset.name,
            "graphs": dataset.len(),
            "classes": dataset.num_classes,
            "feature_dim": dataset.feature_dim,
            "avg_nodes": dataset.avg_nodes(),
            "avg_directed_edges": dataset.avg_directed_edges(),
        },
        "aggregate": outcome.aggregate,
        "test_accuracy_percent": outcome.aggregate.as_ref().map(|a| json!({
            "mean": 100.0 * a.mean,
            "scaled_std": 100.0 * a.scaled_std,
        })),
        "failed_trials": failures,
        "reference_targets_percent": {
            "baseline": reference(false),
            "camp": reference(true),
        },
    });
    let summary_path = dir.join("summary.json");
    fs::write(
        &summary_path,
        serde_json::to_string_pretty(&summary).expect("json"),
    )
    .map_err(io(&summary_path))?;

    if cfg.save_checkpoint {
        let ckpt_dir = dir.join("checkpoints");
        fs::create_dir_all(&ckpt_dir).map_err(io(&ckpt_dir))?;
        for r in &outcome.results {
            if let Some(params) = &r.best_params {
                let meta = CheckpointMeta {
                    config: cfg.model_config(),
                    input_dim: params.input_dim(),
                    num_classes: params.num_classes(),
                    dataset: cfg.dataset.clone(),
                    schedule: schedule_meta(cfg, r.seed, r.best_epoch.unwrap_or(0)),
                    tensors: vec![],
                };
                save_checkpoint(
                    &ckpt_dir.join(format!("trial{}.bin", r.trial)),
                    params,
                    &meta,
                )?;
            }
        }
    }
    Ok(dir.to_path_buf())
}

#[derive(Serialize)]
struct SweepCsvRow {
    measure: String,
    order: String,
    p: f64,
    layers: usize,
    mean: Option<f64>,
    scaled_std: Option<f64>,
    trials: usize,
    failed: usize,
}

/// `figure_data/sweep.csv` plus `sweep.json` under `dir`.
pub fn write_sweep(dir: &Path, rows: &[SweepRow]) -> Result<(), ExperimentError> {
    let figures = dir.join("figure_data");
    fs::create_dir_all(&figures).map_err(io(&figures))?;
    write_csv(
        &figures.join("sweep.csv"),
        rows.iter().map(|r| SweepCsvRow {
            measure: r.measure.map_or("none".into(), |m| m.to_string()),
            order: r.order.to_string(),
            p: r.p,
            layers: r.layers,
            mean: r.aggregate.as_ref().map(|a| a.mean),
            scaled_std: r.aggregate.as_ref().map(|a| a.scaled_std),
            trials: r.aggregate.as_ref().map_or(0, |a| a.trials),
            failed: r.num_failed,
        }),
    )?;
    let path = dir.join("sweep.json");
    fs::write(&path, serde_json::to_string_pretty(rows).expect("json")).map_err(io(&path))
}
