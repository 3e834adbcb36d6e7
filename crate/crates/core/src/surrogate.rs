//! Surrogate models: a trained network plus what it needs to map physical
//! case fields to physical irradiation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use radsurr_nn::train::{Control, EpochRecord, TrainOutcome};
use radsurr_nn::{build, NetworkSpec, TrainConfig, TrainedModel, TrainingMetadata};

use crate::dataset::{Dataset, Encoding, Scalers, Target};
use crate::error::{CoreError, Result};
use crate::mesh::FurnaceMesh;
use crate::sampling::CaseFields;

/// Stored in the model file next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateMeta {
    pub target: Target,
    pub encoding: Encoding,
    pub mesh: FurnaceMesh,
    pub scalers: Scalers,
    pub dataset_checksum: String,
    pub config_hash: Option<String>,
    pub train_config: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct Surrogate {
    pub model: TrainedModel,
    pub meta: SurrogateMeta,
}

pub fn encoding_for(spec: &NetworkSpec) -> Encoding {
    if spec.is_cnn() {
        Encoding::Cnn
    } else {
        Encoding::Mlp
    }
}

/// Options that do not change the learned weights.
#[derive(Debug, Clone, Default)]
pub struct TrainRun<'a> {
    pub val_rows: Option<&'a [usize]>,
    pub config_hash: Option<String>,
    /// Leave wall-clock fields out of the persisted metadata.
    pub deterministic: bool,
}

/// Trains `spec` on `rows` of `dataset` for `target`.
pub fn train_surrogate(
    dataset: &Dataset,
    spec: &NetworkSpec,
    target: Target,
    config: &TrainConfig,
    rows: &[usize],
    run: &TrainRun<'_>,
    observer: impl FnMut(&EpochRecord) -> Control,
) -> Result<(Surrogate, TrainOutcome)> {
    if rows.is_empty() {
        return Err(CoreError::Dataset("no training rows".into()));
    }
    let encoding = encoding_for(spec);
    let train = dataset.prepare(rows, encoding, target)?;
    let val = run.val_rows.map(|r| dataset.prepare(r, encoding, target)).transpose()?;
    let mut net = build::<f32>(spec, train.input_shape, train.output_dim)?;
    let outcome = radsurr_nn::train(&mut net, train.samples(), val.as_ref().map(|v| v.samples()), config, observer)?;
    let meta = SurrogateMeta {
        target,
        encoding,
        mesh: dataset.mesh(),
        scalers: dataset.manifest.scalers,
        dataset_checksum: dataset.checksum(),
        config_hash: run.config_hash.clone(),
        train_config: config.clone(),
    };
    let last = outcome.history.last();
    let metadata = TrainingMetadata {
        epochs_run: outcome.history.len(),
        final_train_mae: last.map(|r| r.train_mae),
        final_val_mae: outcome.history.iter().rev().find_map(|r| r.val_mae),
        wall_clock_s: (!run.deterministic).then_some(outcome.wall_clock_s),
        extra: serde_json::to_value(&meta)?,
    };
    Ok((Surrogate { model: TrainedModel { network: net, metadata }, meta }, outcome))
}

impl Surrogate {
    pub fn from_model(model: TrainedModel) -> Result<Self> {
        let meta: SurrogateMeta = serde_json::from_value(model.metadata.extra.clone())
            .map_err(|e| CoreError::Dataset(format!("model file lacks surrogate metadata: {e}")))?;
        Ok(Self { model, meta })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_model(TrainedModel::load(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        Ok(self.model.save(path)?)
    }

    pub fn output_dim(&self) -> usize {
        self.model.network.output_dim
    }

    /// Normalized network input for one case.
    pub fn encode(&self, fields: &CaseFields) -> Result<Vec<f32>> {
        let normalized = self.meta.scalers.normalize(fields);
        Ok(self
            .meta
            .encoding
            .encode(&normalized, &self.meta.mesh)?
            .into_iter()
            .map(|v| v as f32)
            .collect())
    }

    /// Irradiation in W·m⁻² for the target points of each case.
    pub fn predict(&self, cases: &[CaseFields]) -> Result<Vec<Vec<f64>>> {
        let mut x = Vec::new();
        for f in cases {
            x.extend(self.encode(f)?);
        }
        let y = self.model.network.predict(&x, cases.len())?;
        Ok(y.chunks(self.output_dim().max(1))
            .map(|row| row.iter().map(|&v| self.meta.scalers.h.invert(v as f64)).collect())
            .collect())
    }
}

/// Loss history as CSV: `epoch,train_mae,penalty,val_mae`.
pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["epoch", "train_mae", "penalty", "val_mae"]).map_err(csv_err)?;
    for r in history {
        let val = r.val_mae.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([r.epoch.to_string(), r.train_mae.to_string(), r.penalty.to_string(), val])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> CoreError {
    CoreError::Io(std::io::Error::other(e))
}
