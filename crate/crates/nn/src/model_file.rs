//! Trained-model persistence.
//!
//! ```text
//! "RSMD" | version: u32 | header_len: u64 | header (UTF-8 JSON) | tensor sections
//! ```
//!
//! Each tensor section is a complete RTEN blob; the header lists every
//! section's byte offset (relative to the first section), length and SHA-256.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::network::{build, InputShape, Network, NetworkSpec};
use crate::tensor_file::{sha256_hex, Tensor};

const MAGIC: &[u8; 4] = b"RSMD";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingMetadata {
    pub epochs_run: usize,
    pub final_train_mae: Option<f64>,
    pub final_val_mae: Option<f64>,
    /// Absent when the run was asked to keep artifacts free of timings.
    pub wall_clock_s: Option<f64>,
    /// Caller-defined provenance (targets, scalers, config hashes).
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub network: Network<f32>,
    pub metadata: TrainingMetadata,
}

#[derive(Debug, Serialize, Deserialize)]
struct Section {
    name: String,
    dims: Vec<usize>,
    offset: usize,
    length: usize,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    input: InputShape,
    output_dim: usize,
    parameter_count: usize,
    sections: Vec<Section>,
    metadata: TrainingMetadata,
}

impl TrainedModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut sections = Vec::new();
        let mut payload = Vec::new();
        for (i, (k, b)) in self.network.params().into_iter().enumerate() {
            for (suffix, data) in [("kernel", k), ("bias", b)] {
                let blob = Tensor::new(vec![data.len()], data.to_vec())?.to_bytes();
                sections.push(Section {
                    name: format!("layer{i}.{suffix}"),
                    dims: vec![data.len()],
                    offset: payload.len(),
                    length: blob.len(),
                    sha256: sha256_hex(&blob),
                });
                payload.extend_from_slice(&blob);
            }
        }
        let header = Header {
            spec: self.network.spec.clone(),
            input: self.network.input,
            output_dim: self.network.output_dim,
            parameter_count: self.network.parameter_count(),
            sections,
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec_pretty(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(NnError::Format("not a model file".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(NnError::Format(format!("unsupported model version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes
            .get(16..16usize.saturating_add(hlen))
            .ok_or_else(|| NnError::Format("truncated model header".into()))?;
        let header: Header = serde_json::from_slice(body)?;
        let payload = &bytes[16 + hlen..];

        let mut network: Network<f32> = build(&header.spec, header.input, header.output_dim)?;
        let mut sections = header.sections.iter();
        for (k, b) in network.params_mut() {
            for dst in [k, b] {
                let s = sections
                    .next()
                    .ok_or_else(|| NnError::Format("missing tensor section".into()))?;
                let blob = payload
                    .get(s.offset..s.offset + s.length)
                    .ok_or_else(|| NnError::Format(format!("section {} out of range", s.name)))?;
                if sha256_hex(blob) != s.sha256 {
                    return Err(NnError::Checksum(s.name.clone()));
                }
                let t = Tensor::from_bytes(blob)?;
                if t.data.len() != dst.len() {
                    return Err(NnError::Shape(format!(
                        "section {} holds {} values, layer needs {}",
                        s.name,
                        t.data.len(),
                        dst.len()
                    )));
                }
                dst.copy_from_slice(&t.data);
            }
        }
        if sections.next().is_some() {
            return Err(NnError::Format("extra tensor sections".into()));
        }
        Ok(Self { network, metadata: header.metadata })
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes()?;
        fs::write(path, &bytes)?;
        Ok(sha256_hex(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::ImageShape;
    use crate::network::build_cnn;

    fn model() -> TrainedModel {
        let spec = NetworkSpec::cnn(2, 3, [2, 3], [2, 1], 1, 5, 8);
        let image = ImageShape { channels: 3, height: 6, width: 9 };
        TrainedModel {
            network: build_cnn(&spec, image, 4).unwrap(),
            metadata: TrainingMetadata {
                epochs_run: 3,
                final_train_mae: Some(0.25),
                extra: serde_json::json!({"target": "east"}),
                ..Default::default()
            },
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rsmd");
        let m = model();
        m.save(&path).unwrap();
        assert_eq!(TrainedModel::load(&path).unwrap(), m);
    }

    #[test]
    fn corrupted_payload_is_detected() {
        let m = model();
        let mut bytes = m.to_bytes().unwrap();
        let n = bytes.len();
        bytes[n - 2] ^= 0x55;
        assert!(matches!(TrainedModel::from_bytes(&bytes), Err(NnError::Checksum(_))));
        assert!(TrainedModel::from_bytes(b"nope").is_err());
    }
}
