//! Parameter checkpoints: a flat little-endian `f64` file plus a JSON
//! sidecar describing the tensors and the model configuration.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::centrality::CentralityMeasure;
use crate::scheduler::{BatchMode, Order};
use crate::tensor::Tensor;

use super::{LayerParams, ModelConfig, ModelParams};

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("checkpoint metadata: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint holds {got} values, metadata describes {expected}")]
    Length { got: usize, expected: usize },
    #[error("checkpoint tensor layout does not match the configuration: {0}")]
    Layout(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleMeta {
    pub measure: Option<CentralityMeasure>,
    pub order: Order,
    pub p: f64,
    pub mode: BatchMode,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub shape: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub input_dim: usize,
    pub num_classes: usize,
    pub dataset: String,
    pub schedule: Option<ScheduleMeta>,
    pub tensors: Vec<TensorMeta>,
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `path` (raw values) and `path.json` (metadata). The `tensors`
/// field of `meta` is filled in from `params`.
pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    meta: &CheckpointMeta,
) -> Result<(), CheckpointError> {
    let mut meta = meta.clone();
    meta.tensors = params
        .tensor_names()
        .into_iter()
        .zip(params.tensors())
        .map(|(name, t)| TensorMeta {
            name,
            shape: t.shape(),
        })
        .collect();
    let mut bytes = Vec::with_capacity(params.num_scalars() * 8);
    for t in params.tensors() {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(io_err(path))?;
    let side = sidecar(path);
    fs::write(&side, serde_json::to_vec_pretty(&meta)?).map_err(io_err(&side))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, CheckpointMeta), CheckpointError> {
    let side = sidecar(path);
    let meta: CheckpointMeta = serde_json::from_slice(&fs::read(&side).map_err(io_err(&side))?)?;
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() % 8 != 0 {
        return Err(CheckpointError::Length {
            got: bytes.len() / 8,
            expected: meta.tensors.iter().map(|t| t.shape.0 * t.shape.1).sum(),
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();

    let mut params = skeleton(&meta.config, meta.input_dim, meta.num_classes);
    let expected: usize = meta.tensors.iter().map(|t| t.shape.0 * t.shape.1).sum();
    if values.len() != expected {
        return Err(CheckpointError::Length {
            got: values.len(),
            expected,
        });
    }
    let names = params.tensor_names();
    let mut offset = 0;
    for ((t, name), tm) in params
        .tensors_mut()
        .into_iter()
        .zip(&names)
        .zip(&meta.tensors)
    {
        if *name != tm.name || t.shape() != tm.shape {
            return Err(CheckpointError::Layout(format!(
                "{} {:?} vs {} {:?}",
                tm.name,
                tm.shape,
                name,
                t.shape()
            )));
        }
        let len = t.len();
        t.data_mut().copy_from_slice(&values[offset..offset + len]);
        offset += len;
    }
    if names.len() != meta.tensors.len() {
        return Err(CheckpointError::Layout(format!(
            "{} tensors stored, {} expected",
            meta.tensors.len(),
            names.len()
        )));
    }
    Ok((params, meta))
}

fn skeleton(cfg: &ModelConfig, input_dim: usize, num_classes: usize) -> ModelParams {
    let h = cfg.hidden_dim;
    let layer = match cfg.arch {
        super::Arch::Gcn => LayerParams::Gcn {
            weight: Tensor::zeros(h, h),
            bias: Tensor::zeros(1, h),
        },
        super::Arch::Gin => LayerParams::Gin {
            weight: Tensor::zeros(h, h),
            eps: Tensor::zeros(1, 1),
            mlp_w1: Tensor::zeros(h, h),
            mlp_b1: Tensor::zeros(1, h),
            mlp_w2: Tensor::zeros(h, h),
            mlp_b2: Tensor::zeros(1, h),
        },
    };
    ModelParams {
        encoder_w: Tensor::zeros(input_dim, h),
        encoder_b: Tensor::zeros(1, h),
        layers: vec![layer; cfg.layers],
        head_w: Tensor::zeros(h, num_classes),
        head_b: Tensor::zeros(1, num_classes),
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::models::Arch;

    fn meta(cfg: ModelConfig) -> CheckpointMeta {
        CheckpointMeta {
            config: cfg,
            input_dim: 3,
            num_classes: 2,
            dataset: "toy".into(),
            schedule: Some(ScheduleMeta {
                measure: Some(CentralityMeasure::Degree),
                order: Order::Descending,
                p: 1.0,
                mode: BatchMode::Camp,
                seed: 4,
            }),
            tensors: vec![],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        for arch in [Arch::Gcn, Arch::Gin] {
            let cfg = ModelConfig::new(arch, 3, 5);
            let params = ModelParams::init(&cfg, 3, 2, &mut ChaCha8Rng::seed_from_u64(9));
            let path = dir.path().join(format!("{arch}.bin"));
            save_checkpoint(&path, &params, &meta(cfg)).unwrap();
            let (loaded, m) = load_checkpoint(&path).unwrap();
            assert_eq!(loaded, params);
            assert_eq!(m.schedule, meta(cfg).schedule);
            assert_eq!(m.tensors.len(), params.tensors().len());
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig::new(Arch::Gcn, 2, 4);
        let params = ModelParams::init(&cfg, 3, 2, &mut ChaCha8Rng::seed_from_u64(1));
        let path = dir.path().join("m.bin");
        save_checkpoint(&path, &params, &meta(cfg)).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::Length { .. })
        ));
    }

    #[test]
    fn missing_sidecar_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_checkpoint(&dir.path().join("none.bin")),
            Err(CheckpointError::Io { .. })
        ));
    }
}
