//! On-disk datasets, normalization and the network input views.
//!
//! A dataset directory holds `manifest.json`, `inputs.rten` and
//! `outputs.rten`. Both tensors store physical units (f32), train rows
//! first, then test rows. Input rows use the flat layout of [`mlp_view`].
//!
//! The image view is channel-major with height `ny + 2` and width `nx + 2`.
//! Row 0 is the south frame and row `ny + 1` the north frame; column 0 is the
//! west frame and column `nx + 1` the east frame. Corner pixels are zero.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use radsurr_nn::{ImageShape, InputShape, Tensor};

use crate::error::{CoreError, Result};
use crate::mesh::{FurnaceMesh, Wall};
use crate::sampling::{CaseFields, Provenance, RawDataset, RawSplit};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const INPUTS_FILE: &str = "inputs.rten";
pub const OUTPUTS_FILE: &str = "outputs.rten";
const FORMAT_VERSION: u32 = 1;

fn check_fields(f: &CaseFields, mesh: &FurnaceMesh) -> Result<()> {
    let (p, c) = (mesh.boundary_count(), mesh.cell_count());
    if f.eps.len() != p || f.t0.len() != p || f.t_gas.len() != c {
        return Err(CoreError::Dimension(format!(
            "fields have {}/{}/{} entries, mesh needs {p}/{p}/{c}",
            f.eps.len(),
            f.t0.len(),
            f.t_gas.len()
        )));
    }
    Ok(())
}

pub fn mlp_len(mesh: &FurnaceMesh) -> usize {
    2 * mesh.boundary_count() + mesh.cell_count()
}

/// `[ε per point, T0 per point, T per cell row-major]`.
pub fn mlp_view(fields: &CaseFields, mesh: &FurnaceMesh) -> Result<Vec<f64>> {
    check_fields(fields, mesh)?;
    let mut v = Vec::with_capacity(mlp_len(mesh));
    v.extend_from_slice(&fields.eps);
    v.extend_from_slice(&fields.t0);
    v.extend_from_slice(&fields.t_gas);
    Ok(v)
}

pub fn decode_mlp(v: &[f64], mesh: &FurnaceMesh) -> Result<CaseFields> {
    if v.len() != mlp_len(mesh) {
        return Err(CoreError::Dimension(format!("flat view has {} values, mesh needs {}", v.len(), mlp_len(mesh))));
    }
    let p = mesh.boundary_count();
    Ok(CaseFields { eps: v[..p].to_vec(), t0: v[p..2 * p].to_vec(), t_gas: v[2 * p..].to_vec() })
}

pub fn image_shape(mesh: &FurnaceMesh) -> ImageShape {
    ImageShape { channels: 3, height: mesh.ny + 2, width: mesh.nx + 2 }
}

/// Frame pixel `(row, col)` of boundary point `index`.
pub fn frame_pixel(mesh: &FurnaceMesh, index: usize) -> (usize, usize) {
    let wall = mesh.wall_of(index);
    let k = index - mesh.wall_range(wall).start;
    let (nx, ny) = (mesh.nx, mesh.ny);
    match wall {
        Wall::South => (0, k + 1),
        Wall::East => (k + 1, nx + 1),
        Wall::North => (ny + 1, nx - k),
        Wall::West => (ny - k, 0),
    }
}

/// Three-channel image: ε and T0 on the frame, T in the interior, zero
/// elsewhere.
pub fn cnn_view(fields: &CaseFields, mesh: &FurnaceMesh) -> Result<Vec<f64>> {
    check_fields(fields, mesh)?;
    let (h, w) = (mesh.ny + 2, mesh.nx + 2);
    let plane = h * w;
    let mut img = vec![0.0; 3 * plane];
    for p in 0..mesh.boundary_count() {
        let (r, c) = frame_pixel(mesh, p);
        img[r * w + c] = fields.eps[p];
        img[plane + r * w + c] = fields.t0[p];
    }
    for iy in 0..mesh.ny {
        for ix in 0..mesh.nx {
            img[2 * plane + (iy + 1) * w + ix + 1] = fields.t_gas[mesh.cell_index(ix, iy)];
        }
    }
    Ok(img)
}

pub fn decode_cnn(img: &[f64], mesh: &FurnaceMesh) -> Result<CaseFields> {
    let (h, w) = (mesh.ny + 2, mesh.nx + 2);
    let plane = h * w;
    if img.len() != 3 * plane {
        return Err(CoreError::Dimension(format!("image has {} values, mesh needs {}", img.len(), 3 * plane)));
    }
    let p = mesh.boundary_count();
    let mut eps = Vec::with_capacity(p);
    let mut t0 = Vec::with_capacity(p);
    for i in 0..p {
        let (r, c) = frame_pixel(mesh, i);
        eps.push(img[r * w + c]);
        t0.push(img[plane + r * w + c]);
    }
    let mut t_gas = Vec::with_capacity(mesh.cell_count());
    for iy in 0..mesh.ny {
        for ix in 0..mesh.nx {
            t_gas.push(img[2 * plane + (iy + 1) * w + ix + 1]);
        }
    }
    Ok(CaseFields { eps, t0, t_gas })
}

/// Affine map `(x − min) / (max − min)`; a constant block only shifts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: f64,
    pub max: f64,
}

impl Scaler {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(CoreError::Dataset("cannot fit a scaler to an empty block".into()));
        }
        let (min, max) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        Ok(Self { min, max })
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.max > self.min)
    }

    fn span(&self) -> f64 {
        if self.is_degenerate() {
            1.0
        } else {
            self.max - self.min
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.min) / self.span()
    }

    pub fn invert(&self, y: f64) -> f64 {
        y * self.span() + self.min
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scalers {
    pub eps: Scaler,
    pub t0: Scaler,
    pub t_gas: Scaler,
    pub h: Scaler,
}

impl Scalers {
    /// Fits every block on the training split; returns warnings for
    /// constant blocks.
    pub fn fit(train: &RawSplit) -> Result<(Self, Vec<String>)> {
        let s = Self {
            eps: Scaler::fit(&train.eps)?,
            t0: Scaler::fit(&train.t0)?,
            t_gas: Scaler::fit(&train.t_gas)?,
            h: Scaler::fit(&train.h)?,
        };
        let warnings = [("eps", s.eps), ("t0", s.t0), ("t_gas", s.t_gas), ("h", s.h)]
            .into_iter()
            .filter(|(_, sc)| sc.is_degenerate())
            .map(|(name, sc)| format!("block `{name}` is constant ({}) on the training split; scaler only shifts", sc.min))
            .collect();
        Ok((s, warnings))
    }

    pub fn normalize(&self, f: &CaseFields) -> CaseFields {
        CaseFields {
            eps: f.eps.iter().map(|&v| self.eps.apply(v)).collect(),
            t0: f.t0.iter().map(|&v| self.t0.apply(v)).collect(),
            t_gas: f.t_gas.iter().map(|&v| self.t_gas.apply(v)).collect(),
        }
    }

    pub fn denormalize(&self, f: &CaseFields) -> CaseFields {
        CaseFields {
            eps: f.eps.iter().map(|&v| self.eps.invert(v)).collect(),
            t0: f.t0.iter().map(|&v| self.t0.invert(v)).collect(),
            t_gas: f.t_gas.iter().map(|&v| self.t_gas.invert(v)).collect(),
        }
    }
}

/// Which boundary points a model predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    #[default]
    All,
    South,
    East,
    North,
    West,
}

impl Target {
    pub fn wall(self) -> Option<Wall> {
        match self {
            Target::All => None,
            Target::South => Some(Wall::South),
            Target::East => Some(Wall::East),
            Target::North => Some(Wall::North),
            Target::West => Some(Wall::West),
        }
    }

    pub fn range(self, mesh: &FurnaceMesh) -> std::ops::Range<usize> {
        match self.wall() {
            None => 0..mesh.boundary_count(),
            Some(w) => mesh.wall_range(w),
        }
    }

    pub fn name(self) -> &'static str {
        self.wall().map_or("all", Wall::name)
    }
}

impl FromStr for Target {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(Target::All);
        }
        let wall: Wall = s.parse().map_err(|_| CoreError::config("target", format!("unknown target `{s}` (all|south|east|north|west)")))?;
        Ok(match wall {
            Wall::South => Target::South,
            Wall::East => Target::East,
            Wall::North => Target::North,
            Wall::West => Target::West,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Mlp,
    Cnn,
}

impl Encoding {
    pub fn input_shape(self, mesh: &FurnaceMesh) -> InputShape {
        match self {
            Encoding::Mlp => InputShape::Flat { len: mlp_len(mesh) },
            Encoding::Cnn => InputShape::Image(image_shape(mesh)),
        }
    }

    pub fn encode(self, fields: &CaseFields, mesh: &FurnaceMesh) -> Result<Vec<f64>> {
        match self {
            Encoding::Mlp => mlp_view(fields, mesh),
            Encoding::Cnn => cnn_view(fields, mesh),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRef {
    pub path: String,
    pub dims: Vec<usize>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub provenance: Provenance,
    /// Hash of the resolved run configuration, when produced by the CLI.
    pub config_hash: Option<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub normalization: String,
    pub scalers: Scalers,
    pub inputs: TensorRef,
    pub outputs: TensorRef,
    pub warnings: Vec<String>,
}

/// A dataset in physical units plus its manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub inputs: Tensor,
    pub outputs: Tensor,
}

/// Network-ready samples (normalized, f32).
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub inputs: Vec<f32>,
    pub targets: Vec<f32>,
    pub count: usize,
    pub input_shape: InputShape,
    pub output_dim: usize,
}

impl Prepared {
    pub fn samples(&self) -> radsurr_nn::train::Samples<'_, f32> {
        radsurr_nn::train::Samples { inputs: &self.inputs, targets: &self.targets, count: self.count }
    }
}

impl Dataset {
    pub fn from_raw(raw: &RawDataset, config_hash: Option<String>) -> Result<Self> {
        let mesh = raw.provenance.mesh;
        let (scalers, warnings) = Scalers::fit(&raw.train)?;
        let n = raw.train.count + raw.test.count;
        let (width, p) = (mlp_len(&mesh), mesh.boundary_count());
        let mut inputs = Vec::with_capacity(n * width);
        let mut outputs = Vec::with_capacity(n * p);
        for split in [&raw.train, &raw.test] {
            for i in 0..split.count {
                inputs.extend(mlp_view(&split.fields(i, &mesh), &mesh)?);
                outputs.extend_from_slice(split.h(i, &mesh));
            }
        }
        let inputs = Tensor::from_f64(vec![n, width], &inputs)?;
        let outputs = Tensor::from_f64(vec![n, p], &outputs)?;
        let manifest = DatasetManifest {
            format_version: FORMAT_VERSION,
            provenance: raw.provenance.clone(),
            config_hash,
            n_train: raw.train.count,
            n_test: raw.test.count,
            normalization: "min-max per block (eps, t0, t_gas, h), fitted on the training split".into(),
            scalers,
            inputs: TensorRef { path: INPUTS_FILE.into(), dims: inputs.dims.clone(), sha256: String::new() },
            outputs: TensorRef { path: OUTPUTS_FILE.into(), dims: outputs.dims.clone(), sha256: String::new() },
            warnings,
        };
        Ok(Self { manifest, inputs, outputs })
    }

    pub fn mesh(&self) -> FurnaceMesh {
        self.manifest.provenance.mesh
    }

    pub fn len(&self) -> usize {
        self.manifest.n_train + self.manifest.n_test
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn train_indices(&self) -> std::ops::Range<usize> {
        0..self.manifest.n_train
    }

    pub fn test_indices(&self) -> std::ops::Range<usize> {
        self.manifest.n_train..self.len()
    }

    /// Input fields of row `i` in physical units.
    pub fn fields(&self, i: usize) -> CaseFields {
        let row: Vec<f64> = self.inputs.row(i).iter().map(|&v| v as f64).collect();
        decode_mlp(&row, &self.mesh()).expect("row width checked at load")
    }

    /// Irradiation of row `i` in physical units.
    pub fn h(&self, i: usize) -> Vec<f64> {
        self.outputs.row(i).iter().map(|&v| v as f64).collect()
    }

    /// Normalized inputs and targets for the given rows.
    pub fn prepare(&self, rows: &[usize], encoding: Encoding, target: Target) -> Result<Prepared> {
        let mesh = self.mesh();
        let s = &self.manifest.scalers;
        let range = target.range(&mesh);
        let input_shape = encoding.input_shape(&mesh);
        let mut inputs = Vec::with_capacity(rows.len() * input_shape.len());
        let mut targets = Vec::with_capacity(rows.len() * range.len());
        for &i in rows {
            if i >= self.len() {
                return Err(CoreError::Dataset(format!("row {i} out of range ({} rows)", self.len())));
            }
            let enc = encoding.encode(&s.normalize(&self.fields(i)), &mesh)?;
            inputs.extend(enc.into_iter().map(|v| v as f32));
            let h = &self.outputs.row(i)[range.clone()];
            targets.extend(h.iter().map(|&v| s.h.apply(v as f64) as f32));
        }
        Ok(Prepared { inputs, targets, count: rows.len(), input_shape, output_dim: range.len() })
    }

    /// Writes the three files into `dir`, returning the manifest with
    /// checksums filled in.
    pub fn save(&mut self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.manifest.inputs.sha256 = self.inputs.write(&dir.join(&self.manifest.inputs.path))?;
        self.manifest.outputs.sha256 = self.outputs.write(&dir.join(&self.manifest.outputs.path))?;
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))
            .map_err(|e| CoreError::Dataset(format!("cannot read {}: {e}", dir.join(MANIFEST_FILE).display())))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(CoreError::Dataset(format!("unsupported dataset version {}", manifest.format_version)));
        }
        let read = |r: &TensorRef| -> Result<Tensor> {
            let t = Tensor::read(&dir.join(&r.path), Some(&r.sha256))?;
            if t.dims != r.dims {
                return Err(CoreError::Dataset(format!("{} has dims {:?}, manifest says {:?}", r.path, t.dims, r.dims)));
            }
            Ok(t)
        };
        let inputs = read(&manifest.inputs)?;
        let outputs = read(&manifest.outputs)?;
        let mesh = manifest.provenance.mesh;
        let n = manifest.n_train + manifest.n_test;
        if inputs.dims != [n, mlp_len(&mesh)] || outputs.dims != [n, mesh.boundary_count()] {
            return Err(CoreError::Dataset("tensor shapes do not match mesh and counts".into()));
        }
        Ok(Self { manifest, inputs, outputs })
    }

    /// Checksum identifying the dataset contents.
    pub fn checksum(&self) -> String {
        let mut bytes = self.inputs.to_bytes();
        bytes.extend(self.outputs.to_bytes());
        radsurr_nn::tensor_file::sha256_hex(&bytes)
    }
}
