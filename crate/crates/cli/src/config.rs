//! Run configuration: one JSON document plus `--set key=value` overrides.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use radsurr_core::dataset::Target;
use radsurr_core::dtrm::SolveOptions;
use radsurr_core::eval::PhysicsSuite;
use radsurr_core::mesh::FurnaceMesh;
use radsurr_core::sampling::{CaseDistribution, SolverSetup};
use radsurr_core::spectral::{AbsorptionTable, BandGrid, GasMixture};
use radsurr_core::tuner::{read_ledger, select_best, SearchSpace, StudyConfig};
use radsurr_core::{CoreError, Result};
use radsurr_nn::tensor_file::sha256_hex;
use radsurr_nn::{NetworkSpec, TrainConfig};

pub const DESK_CONFIG: &str = include_str!("../configs/desk.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let o = SolveOptions::default();
        Self { tolerance: o.tolerance, max_iters: o.max_iters }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { n_train: 1000, n_test: 300, seed: 0 }
    }
}

/// Where the trained architecture comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSource {
    /// A named architecture from [`preset`].
    Preset(String),
    Spec(NetworkSpec),
    /// Best complete trial of a tuning ledger.
    Ledger(PathBuf),
}

/// Named architectures. `full-*` are the tuned full-scale furnace networks;
/// `desk-*` shrink the widest layer by the input-size ratio of the desk mesh.
pub fn preset(name: &str, seed: u64) -> Option<NetworkSpec> {
    let cnn = |nodes| NetworkSpec::cnn(1, 9, [2, 3], [1, 1], 1, nodes, seed);
    Some(match name {
        "full-cnn" => cnn(724),
        "full-mlp" => NetworkSpec::mlp(1, 7405, seed),
        "full-south-cnn" => cnn(217),
        "full-south-mlp" => NetworkSpec::mlp(1, 9302, seed),
        "full-east-cnn" => cnn(168),
        "full-east-mlp" => NetworkSpec::mlp(1, 4426, seed),
        "desk-cnn" => cnn(104),
        "desk-mlp" => NetworkSpec::mlp(1, 1151, seed),
        "desk-south-cnn" => cnn(31),
        "desk-south-mlp" => NetworkSpec::mlp(1, 1446, seed),
        "desk-east-cnn" => cnn(24),
        "desk-east-mlp" => NetworkSpec::mlp(1, 688, seed),
        _ => return None,
    })
}

pub const PRESETS: [&str; 12] = [
    "full-cnn", "full-mlp", "full-south-cnn", "full-south-mlp", "full-east-cnn", "full-east-mlp",
    "desk-cnn", "desk-mlp", "desk-south-cnn", "desk-south-mlp", "desk-east-cnn", "desk-east-mlp",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Cases solved for the solver-side median.
    pub solver_cases: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { solver_cases: 20 }
    }
}

/// Everything a run depends on. Unset fields take the full-scale furnace
/// defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: FurnaceMesh,
    pub n_rays: usize,
    pub grid: BandGrid,
    pub gas: GasMixture,
    /// JSON absorption table; the synthetic table for `grid` when absent.
    pub absorption_table: Option<PathBuf>,
    pub solver: SolverConfig,
    /// Its `gas` is replaced by the top-level `gas`.
    pub distribution: CaseDistribution,
    pub dataset: DatasetConfig,
    pub network: NetworkSource,
    /// Seeds weight initialization.
    pub network_seed: u64,
    pub train: TrainConfig,
    pub target: Target,
    pub tune: StudyConfig,
    pub search_space: SearchSpace,
    pub bench: BenchConfig,
    pub physics: PhysicsSuite,
}

impl Default for RunConfig {
    fn default() -> Self {
        let gas = GasMixture::default();
        Self {
            mesh: FurnaceMesh::furnace_default(),
            n_rays: 32,
            grid: BandGrid::furnace_default(),
            gas,
            absorption_table: None,
            solver: SolverConfig::default(),
            distribution: CaseDistribution { gas, ..Default::default() },
            dataset: DatasetConfig::default(),
            network: NetworkSource::Preset("full-cnn".into()),
            network_seed: 0,
            train: TrainConfig::default(),
            target: Target::All,
            tune: StudyConfig::default(),
            search_space: SearchSpace::default(),
            bench: BenchConfig::default(),
            physics: PhysicsSuite::default(),
        }
    }
}

fn at(field: &str, e: CoreError) -> CoreError {
    match e {
        CoreError::Config { field: inner, message } if !inner.starts_with(field) => {
            CoreError::Config { field: format!("{field}.{inner}"), message }
        }
        CoreError::Config { .. } => e,
        other => CoreError::config(field, other.to_string()),
    }
}

/// Sets `path` (dotted) inside `doc` to `raw`, parsed as JSON when it parses
/// and as a string otherwise. Only existing keys can be set.
pub fn apply_override(doc: &mut Value, path: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let here = parts[..=i].join(".");
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CoreError::config(&here, "parent is not an object"))?;
        if !obj.contains_key(*part) {
            return Err(CoreError::config(&here, "unknown key"));
        }
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.get_mut(*part).expect("checked above");
    }
    Err(CoreError::config(path, "empty key"))
}

impl RunConfig {
    /// Parses a document, fills defaults, then validates.
    pub fn from_value(doc: Value) -> Result<Self> {
        let config: RunConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
            let path = e.path().to_string();
            CoreError::config(if path == "." { String::new() } else { path }, e.into_inner().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    /// `source` is a file path, `builtin:desk`, or `None` for the defaults.
    /// Overrides are `key=value` pairs applied in order.
    pub fn load(source: Option<&str>, overrides: &[String]) -> Result<Self> {
        let text = match source {
            None => "{}".to_string(),
            Some("builtin:desk") => DESK_CONFIG.to_string(),
            Some(p) => std::fs::read_to_string(p).map_err(|e| CoreError::config("--config", format!("{p}: {e}")))?,
        };
        let parsed: Value = serde_json::from_str(&text).map_err(|e| CoreError::config("--config", e.to_string()))?;
        // Overrides address the fully defaulted document, so any field can be set.
        let partial: RunConfig = serde_path_to_error::deserialize(parsed).map_err(|e| {
            CoreError::config(e.path().to_string(), e.into_inner().to_string())
        })?;
        let mut doc = serde_json::to_value(&partial)?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CoreError::config("--set", format!("expected KEY=VALUE, got `{o}`")))?;
            apply_override(&mut doc, k.trim(), v.trim())?;
        }
        Self::from_value(doc)
    }

    pub fn validate(&self) -> Result<()> {
        self.mesh.validate().map_err(|e| at("mesh", e))?;
        self.grid.validate().map_err(|e| at("grid", e))?;
        self.gas.validate().map_err(|e| at("gas", e))?;
        self.distribution.validate().map_err(|e| at("distribution", e))?;
        self.train.validate().map_err(|e| at("train", CoreError::from(e)))?;
        self.tune.validate()?;
        self.search_space.validate()?;
        self.physics.mesh.validate().map_err(|e| at("physics.mesh", e))?;
        self.physics.grid.validate().map_err(|e| at("physics.grid", e))?;
        if self.n_rays < 1 {
            return Err(CoreError::config("n_rays", "must be >= 1"));
        }
        if !(self.solver.tolerance > 0.0) || self.solver.max_iters < 1 {
            return Err(CoreError::config("solver", "tolerance must be > 0 and max_iters >= 1"));
        }
        if self.dataset.n_train < 1 || self.dataset.n_test < 1 {
            return Err(CoreError::config("dataset", "n_train and n_test must be >= 1"));
        }
        if self.bench.solver_cases < 1 {
            return Err(CoreError::config("bench.solver_cases", "must be >= 1"));
        }
        if let NetworkSource::Preset(name) = &self.network {
            if preset(name, 0).is_none() {
                return Err(CoreError::config("network.preset", format!("unknown preset `{name}`; known: {}", PRESETS.join(", "))));
            }
        }
        Ok(())
    }

    /// Puts one seed everywhere a seed is used.
    pub fn set_seed(&mut self, seed: u64) {
        self.dataset.seed = seed;
        self.train.seed = seed;
        self.network_seed = seed;
        self.tune.seed = seed;
        self.physics.seed = seed;
        if let NetworkSource::Spec(s) = &mut self.network {
            s.seed = seed;
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn distribution(&self) -> CaseDistribution {
        CaseDistribution { gas: self.gas, ..self.distribution.clone() }
    }

    pub fn absorption_table(&self) -> Result<AbsorptionTable> {
        let table = match &self.absorption_table {
            Some(p) => AbsorptionTable::load(p).map_err(|e| at("absorption_table", e))?,
            None if self.grid == BandGrid::furnace_default() => AbsorptionTable::bundled(),
            None => AbsorptionTable::synthetic(&self.grid),
        };
        table.check_grid(&self.grid).map_err(|e| at("absorption_table", e))?;
        Ok(table)
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions { tolerance: self.solver.tolerance, max_iters: self.solver.max_iters, ..Default::default() }
    }

    pub fn solver_setup(&self) -> Result<SolverSetup> {
        Ok(SolverSetup {
            mesh: self.mesh,
            n_rays: self.n_rays,
            grid: self.grid,
            table: Arc::new(self.absorption_table()?),
            options: self.solve_options(),
        })
    }

    /// Relative ledger paths resolve against `base`.
    pub fn network_spec(&self, base: &Path) -> Result<NetworkSpec> {
        match &self.network {
            NetworkSource::Preset(name) => {
                preset(name, self.network_seed).ok_or_else(|| CoreError::config("network.preset", format!("unknown preset `{name}`")))
            }
            NetworkSource::Spec(s) => Ok(s.clone()),
            NetworkSource::Ledger(p) => {
                let path = base.join(p);
                let ledger = read_ledger(&path)?;
                select_best(&ledger)
                    .map(|r| r.spec.clone())
                    .ok_or_else(|| CoreError::config("network.ledger", format!("{} has no complete trial", path.display())))
            }
        }
    }

    pub fn study(&self) -> StudyConfig {
        StudyConfig { target: self.target, ..self.tune.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_full_scale_furnace() {
        let c = RunConfig::load(None, &[]).unwrap();
        assert_eq!((c.mesh.nx, c.mesh.ny, c.mesh.lx, c.mesh.ly), (120, 20, 12.0, 2.0));
        assert_eq!(c.n_rays, 32);
        assert_eq!(c.grid, BandGrid { nu_min: 150.0, nu_max: 9300.0, delta_nu: 25.0 });
        assert_eq!((c.gas.pressure_atm, c.gas.x_co2, c.gas.x_h2o), (1.0, 0.1, 0.2));
        assert_eq!((c.dataset.n_train, c.dataset.n_test), (1000, 300));
        assert_eq!(c.train.epochs, 20_000);
        assert_eq!(c.network_spec(Path::new(".")).unwrap(), NetworkSpec::cnn(1, 9, [2, 3], [1, 1], 1, 724, 0));
    }

    #[test]
    fn desk_config_loads() {
        let c = RunConfig::load(Some("builtin:desk"), &[]).unwrap();
        assert_eq!((c.mesh.nx, c.mesh.ny), (30, 10));
        assert_eq!((c.n_rays, c.grid.band_count()), (16, 40));
        assert_eq!((c.dataset.n_train, c.dataset.n_test), (600, 200));
    }

    #[test]
    fn overrides_and_errors_carry_paths() {
        let c = RunConfig::load(None, &["mesh.nx=30".into(), "target=east".into(), "train.epochs=5".into()]).unwrap();
        assert_eq!((c.mesh.nx, c.target, c.train.epochs), (30, Target::East, 5));

        let unknown = RunConfig::load(None, &["mesh.nz=3".into()]).unwrap_err();
        assert!(matches!(&unknown, CoreError::Config { field, .. } if field == "mesh.nz"), "{unknown}");
        let bad = RunConfig::load(None, &["mesh.nx=0".into()]).unwrap_err();
        assert!(matches!(&bad, CoreError::Config { field, .. } if field.starts_with("mesh")), "{bad}");
        let typed = RunConfig::load(None, &["n_rays=many".into()]).unwrap_err();
        assert!(matches!(&typed, CoreError::Config { field, .. } if field == "n_rays"), "{typed}");
        let preset_err = RunConfig::load(None, &[r#"network={"preset":"nope"}"#.into()]).unwrap_err();
        assert!(preset_err.to_string().contains("desk-cnn"));
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.set_seed(9);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(b.train.seed, 9);
    }

    #[test]
    fn every_preset_resolves() {
        for p in PRESETS {
            assert!(preset(p, 1).is_some(), "{p}");
        }
    }
}
