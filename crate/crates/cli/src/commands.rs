//! Subcommand implementations. Each returns a JSON summary for stdout and
//! writes its artifacts under the output directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};

use radsurr_core::dataset::Dataset;
use radsurr_core::dtrm::{make_quadrature, CaseFile, FurnaceCase, Solver};
use radsurr_core::eval::{emit_plot_data, relative_error, speedup_benchmark, validate_physics};
use radsurr_core::sampling::{generate_dataset, SolverSetup};
use radsurr_core::surrogate::{train_surrogate, write_history_csv, Surrogate, TrainRun};
use radsurr_core::tuner::run_study;
use radsurr_core::{CoreError, Result};
use radsurr_nn::tensor_file::sha256_hex;
use radsurr_nn::Control;

use crate::config::RunConfig;

pub const IRRADIATION_FILE: &str = "irradiation.json";
pub const MODEL_FILE: &str = "model.rsmd";
pub const HISTORY_FILE: &str = "history.csv";
pub const TRAIN_SUMMARY_FILE: &str = "train_summary.json";
pub const LEDGER_FILE: &str = "ledger.jsonl";
pub const BEST_SPEC_FILE: &str = "best_spec.json";
pub const ERROR_REPORT_FILE: &str = "error_report.json";
pub const TIMING_REPORT_FILE: &str = "timing_report.json";
pub const PHYSICS_REPORT_FILE: &str = "physics_report.json";

/// Shared state of one invocation.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub config_hash: String,
    pub out: PathBuf,
    /// Leave wall-clock fields out of artifacts.
    pub deterministic: bool,
    /// Progress lines on stderr.
    pub verbose: bool,
}

impl Context {
    pub fn new(config: RunConfig, out: PathBuf, deterministic: bool) -> Self {
        let config_hash = config.hash();
        Self { config, config_hash, out, deterministic, verbose: false }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_json(&self, name: &str, value: &impl Serialize) -> Result<PathBuf> {
        fs::create_dir_all(&self.out)?;
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}

fn missing(path: &Path, what: &str) -> CoreError {
    CoreError::Io(std::io::Error::new(std::io::ErrorKind::NotFound, format!("{what} not found: {}", path.display())))
}

pub fn solve(ctx: &Context, case_path: &Path) -> Result<Value> {
    let cfg = &ctx.config;
    let text = fs::read_to_string(case_path).map_err(|_| missing(case_path, "case file"))?;
    let file: CaseFile = serde_json::from_str(&text).map_err(|e| CoreError::config("--case", e.to_string()))?;
    let case = FurnaceCase::from_file(file, cfg.gas, cfg.grid, Arc::new(cfg.absorption_table()?))?;
    let solver = Solver::new(&case.mesh, &make_quadrature(cfg.n_rays)?)?;
    let sol = solver.solve(&case, &cfg.solve_options())?;
    let artifact = json!({
        "config_hash": ctx.config_hash,
        "mesh": case.mesh,
        "n_rays": cfg.n_rays,
        "h": sol.irradiation.h,
        "iterations": sol.iterations,
    });
    let path = ctx.write_json(IRRADIATION_FILE, &artifact)?;
    Ok(json!({ "irradiation": path, "points": case.mesh.boundary_count() }))
}

pub fn gen_dataset(ctx: &Context) -> Result<Value> {
    let cfg = &ctx.config;
    let setup = cfg.solver_setup()?;
    let d = &cfg.dataset;
    let raw = generate_dataset(&cfg.distribution(), d.n_train, d.n_test, d.seed, &setup)?;
    let mut ds = Dataset::from_raw(&raw, Some(ctx.config_hash.clone()))?;
    ds.save(&ctx.out)?;
    for w in &ds.manifest.warnings {
        eprintln!("warning: {w}");
    }
    Ok(json!({
        "dataset": ctx.out,
        "n_train": d.n_train,
        "n_test": d.n_test,
        "checksum": ds.checksum(),
    }))
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.exists() {
        return Err(missing(dir, "dataset directory"));
    }
    Dataset::load(dir)
}

fn load_model(path: &Path) -> Result<Surrogate> {
    if !path.exists() {
        return Err(missing(path, "model file"));
    }
    Surrogate::load(path)
}

pub fn train(ctx: &Context, dataset_dir: &Path) -> Result<Value> {
    let cfg = &ctx.config;
    let ds = load_dataset(dataset_dir)?;
    let spec = cfg.network_spec(Path::new("."))?;
    let rows: Vec<usize> = ds.train_indices().collect();
    let run = TrainRun { val_rows: None, config_hash: Some(ctx.config_hash.clone()), deterministic: ctx.deterministic };
    let every = (cfg.train.epochs / 20).max(1);
    let verbose = ctx.verbose;
    let (model, outcome) = train_surrogate(&ds, &spec, cfg.target, &cfg.train, &rows, &run, |r| {
        if verbose && (r.epoch + 1) % every == 0 {
            eprintln!("epoch {:>6}  train_mae {:.6}  penalty {:.6}", r.epoch + 1, r.train_mae, r.penalty);
        }
        Control::Continue
    })?;
    fs::create_dir_all(&ctx.out)?;
    let sha = model.save(&ctx.path(MODEL_FILE))?;
    write_history_csv(&ctx.path(HISTORY_FILE), &outcome.history)?;
    let summary = json!({
        "config_hash": ctx.config_hash,
        "model_sha256": sha,
        "spec": spec,
        "target": cfg.target,
        "epochs_run": outcome.history.len(),
        "final_train_mae": outcome.history.last().map(|r| r.train_mae),
        "wall_clock_s": (!ctx.deterministic).then_some(outcome.wall_clock_s),
    });
    ctx.write_json(TRAIN_SUMMARY_FILE, &summary)?;
    Ok(json!({ "model": ctx.path(MODEL_FILE), "history": ctx.path(HISTORY_FILE), "model_sha256": sha }))
}

pub fn tune(ctx: &Context, dataset_dir: &Path, ledger: Option<&Path>) -> Result<Value> {
    let cfg = &ctx.config;
    let ds = load_dataset(dataset_dir)?;
    fs::create_dir_all(&ctx.out)?;
    let ledger_path = ledger.map(Path::to_path_buf).unwrap_or_else(|| ctx.path(LEDGER_FILE));
    let result = run_study(&cfg.search_space, &ds, &cfg.study(), &cfg.train, Some(&ledger_path), ctx.deterministic)?;
    let best = json!({
        "config_hash": ctx.config_hash,
        "trial_id": result.best.trial_id,
        "objective": result.best.objective,
        "spec": result.best.spec,
    });
    ctx.write_json(BEST_SPEC_FILE, &best)?;
    Ok(json!({ "ledger": ledger_path, "best_spec": ctx.path(BEST_SPEC_FILE), "best_trial": result.best.trial_id }))
}

pub fn eval(ctx: &Context, dataset_dir: &Path, model_path: &Path) -> Result<Value> {
    let ds = load_dataset(dataset_dir)?;
    let model = load_model(model_path)?;
    let mesh = ds.mesh();
    if model.meta.mesh != mesh {
        return Err(CoreError::Dataset("model and dataset meshes differ".into()));
    }
    let target = model.meta.target;
    let range = target.range(&mesh);
    let rows: Vec<usize> = ds.test_indices().collect();
    let fields: Vec<_> = rows.iter().map(|&i| ds.fields(i)).collect();
    let pred = model.predict(&fields)?;
    let reference: Vec<Vec<f64>> = rows.iter().map(|&i| ds.h(i)[range.clone()].to_vec()).collect();
    let mut report = relative_error(&pred, &reference, &mesh, target)?;
    report.model_id = Some(sha256_hex(&fs::read(model_path)?));
    report.dataset_id = Some(ds.checksum());
    let path = ctx.write_json(ERROR_REPORT_FILE, &json!({ "config_hash": ctx.config_hash, "report": report }))?;
    let [points, markers] = emit_plot_data(&report, &mesh, &ctx.out)?;
    Ok(json!({
        "error_report": path,
        "point_errors": points,
        "wall_markers": markers,
        "mean_pct": report.mean_pct,
        "std_pct": report.std_pct,
    }))
}

pub fn bench(ctx: &Context, dataset_dir: &Path, model_path: &Path) -> Result<Value> {
    let cfg = &ctx.config;
    let ds = load_dataset(dataset_dir)?;
    let model = load_model(model_path)?;
    let prov = &ds.manifest.provenance;
    let setup = SolverSetup {
        mesh: prov.mesh,
        n_rays: prov.n_rays,
        grid: prov.grid,
        table: Arc::new(RunConfig { grid: prov.grid, ..cfg.clone() }.absorption_table()?),
        options: cfg.solve_options(),
    };
    let solver_matches = setup.config_hash()? == prov.solver_config_hash;
    if !solver_matches {
        eprintln!("warning: solver settings differ from those that generated the dataset");
    }
    let cases: Vec<_> = ds.test_indices().map(|i| ds.fields(i)).collect();
    let report = speedup_benchmark(&model, &setup, prov.distribution.gas, &cases, cfg.bench.solver_cases)?;
    let path = ctx.write_json(
        TIMING_REPORT_FILE,
        &json!({ "config_hash": ctx.config_hash, "solver_matches_dataset": solver_matches, "report": report }),
    )?;
    Ok(json!({ "timing_report": path, "speedup": report.speedup }))
}

/// The boolean is false when any check failed.
pub fn validate(ctx: &Context) -> Result<(Value, bool)> {
    let report = validate_physics(&ctx.config.physics)?;
    let path = ctx.write_json(PHYSICS_REPORT_FILE, &json!({ "config_hash": ctx.config_hash, "report": report }))?;
    let checks: Vec<Value> = report
        .checks
        .iter()
        .map(|c| json!({ "name": c.name, "residual": c.residual, "tolerance": c.tolerance, "passed": c.passed }))
        .collect();
    Ok((json!({ "physics_report": path, "passed": report.passed, "checks": checks }), report.passed))
}
