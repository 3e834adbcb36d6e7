//! Error metrics, solver-vs-surrogate timing, the analytic physics suite and
//! plot-data emission.

use std::f64::consts::PI;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Target;
use crate::dtrm::{make_quadrature, median, FurnaceCase, SolveOptions, Solver};
use crate::error::{CoreError, Result};
use crate::mesh::{traverse_ray, FurnaceMesh, Wall};
use crate::sampling::{CaseFields, SolverSetup};
use crate::spectral::{
    band_blackbody, band_integral, path_transmissivity, stefan_boltzmann, AbsorptionTable, BandGrid, GasMixture,
    SpeciesTable,
};
use crate::surrogate::{csv_err, Surrogate};

/// Index ranges of the four walls, in boundary order.
pub fn wall_segments(mesh: &FurnaceMesh) -> [(Wall, Range<usize>); 4] {
    Wall::ALL.map(|w| (w, mesh.wall_range(w)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointError {
    /// Global boundary index.
    pub index: usize,
    pub wall: Wall,
    /// Mean over test samples, percent.
    pub mean_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallError {
    pub wall: Wall,
    pub points: usize,
    pub mean_pct: f64,
    pub std_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub model_id: Option<String>,
    pub dataset_id: Option<String>,
    pub target: Target,
    pub samples: usize,
    pub mean_pct: f64,
    pub std_pct: f64,
    /// Walls with at least one point in the report.
    pub walls: Vec<WallError>,
    pub points: Vec<PointError>,
    /// How `std_pct` is taken.
    pub std_definition: String,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-point mean relative error over samples, then mean and population std
/// across points. `pred[s]` and `reference[s]` hold the `target` points of
/// sample `s`.
pub fn relative_error(pred: &[Vec<f64>], reference: &[Vec<f64>], mesh: &FurnaceMesh, target: Target) -> Result<ErrorReport> {
    let range = target.range(mesh);
    let p = range.len();
    if pred.is_empty() || pred.len() != reference.len() {
        return Err(CoreError::Dimension(format!("{} predictions vs {} references", pred.len(), reference.len())));
    }
    let mut sums = vec![0.0; p];
    for (s, (a, b)) in pred.iter().zip(reference).enumerate() {
        if a.len() != p || b.len() != p {
            return Err(CoreError::Dimension(format!("sample {s}: expected {p} points")));
        }
        for j in 0..p {
            if !(b[j] > 0.0) {
                return Err(CoreError::InvalidReference(format!("sample {s}, point {}: H = {}", range.start + j, b[j])));
            }
            sums[j] += (a[j] - b[j]).abs() / b[j];
        }
    }
    let n = pred.len() as f64;
    let points: Vec<PointError> = range
        .clone()
        .zip(&sums)
        .map(|(index, s)| PointError { index, wall: mesh.wall_of(index), mean_pct: 100.0 * s / n })
        .collect();
    let all: Vec<f64> = points.iter().map(|e| e.mean_pct).collect();
    let (mean_pct, std_pct) = mean_std(&all);
    let walls = Wall::ALL
        .iter()
        .filter_map(|&w| {
            let v: Vec<f64> = points.iter().filter(|e| e.wall == w).map(|e| e.mean_pct).collect();
            (!v.is_empty()).then(|| {
                let (mean_pct, std_pct) = mean_std(&v);
                WallError { wall: w, points: v.len(), mean_pct, std_pct }
            })
        })
        .collect();
    Ok(ErrorReport {
        model_id: None,
        dataset_id: None,
        target,
        samples: pred.len(),
        mean_pct,
        std_pct,
        walls,
        points,
        std_definition: "population standard deviation across points of the per-point mean over samples".into(),
    })
}

impl ErrorReport {
    pub fn wall(&self, wall: Wall) -> Option<&WallError> {
        self.walls.iter().find(|w| w.wall == wall)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    /// Absent for models trained in deterministic mode.
    pub training_s: Option<f64>,
    pub inference_mean_s: f64,
    pub inference_std_s: f64,
    pub solver_s: f64,
    pub speedup: f64,
    pub inference_samples: usize,
    pub solver_samples: usize,
    pub cpu_model: String,
    pub threads: usize,
}

fn cpu_model() -> String {
    std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| s.lines().find(|l| l.starts_with("model name")).and_then(|l| l.split(':').nth(1)).map(|m| m.trim().to_string()))
        .unwrap_or_else(|| std::env::consts::ARCH.to_string())
}

/// Solver time is the median over the first `solver_cases` cases, each
/// solved from scratch (ray setup included). Inference is timed one case at
/// a time over every case, from physical fields to physical irradiation.
/// One warm-up call on each side is excluded.
pub fn speedup_benchmark(
    surrogate: &Surrogate,
    setup: &SolverSetup,
    gas: GasMixture,
    cases: &[CaseFields],
    solver_cases: usize,
) -> Result<TimingReport> {
    if cases.is_empty() || solver_cases == 0 {
        return Err(CoreError::config("bench", "need at least one case"));
    }
    let quad = make_quadrature(setup.n_rays)?;
    let solver_cases = solver_cases.min(cases.len());
    let solve_one = |f: &CaseFields| -> Result<f64> {
        let case = setup.case(f.clone(), gas);
        let start = Instant::now();
        let sol = Solver::new(&case.mesh, &quad)?.solve(&case, &setup.options)?;
        std::hint::black_box(&sol);
        Ok(start.elapsed().as_secs_f64())
    };
    solve_one(&cases[0])?;
    let mut solver_times = cases[..solver_cases].iter().map(solve_one).collect::<Result<Vec<_>>>()?;
    let solver_s = median(&mut solver_times);

    surrogate.predict(std::slice::from_ref(&cases[0]))?;
    let mut times = Vec::with_capacity(cases.len());
    for f in cases {
        let start = Instant::now();
        let out = surrogate.predict(std::slice::from_ref(f))?;
        std::hint::black_box(&out);
        times.push(start.elapsed().as_secs_f64());
    }
    let (inference_mean_s, inference_std_s) = mean_std(&times);
    Ok(TimingReport {
        training_s: surrogate.model.metadata.wall_clock_s,
        inference_mean_s,
        inference_std_s,
        solver_s,
        speedup: solver_s / inference_mean_s,
        inference_samples: cases.len(),
        solver_samples: solver_cases,
        cpu_model: cpu_model(),
        threads: rayon::current_num_threads(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsCheck {
    pub name: String,
    /// Largest relative deviation from the oracle.
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsReport {
    pub checks: Vec<PhysicsCheck>,
    pub passed: bool,
}

/// Settings of the physics suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicsSuite {
    pub mesh: FurnaceMesh,
    pub grid: BandGrid,
    /// Rays per point for the isothermal and gray-gas checks.
    pub n_rays: usize,
    /// Rays per point for the view-factor check; the angular discretization
    /// error must sit well under its tolerance.
    pub view_factor_rays: usize,
    pub monte_carlo_rays: usize,
    pub seed: u64,
}

impl Default for PhysicsSuite {
    fn default() -> Self {
        Self {
            mesh: FurnaceMesh { nx: 30, ny: 10, lx: 3.0, ly: 1.0 },
            grid: BandGrid { nu_min: 150.0, nu_max: 9300.0, delta_nu: 228.75 },
            n_rays: 16,
            view_factor_rays: 2048,
            monte_carlo_rays: 10_000_000,
            seed: 0,
        }
    }
}

fn check(name: &str, residual: f64, tolerance: f64) -> PhysicsCheck {
    PhysicsCheck { name: name.into(), residual, tolerance, passed: residual < tolerance }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Direction `normal` rotated counter-clockwise by `theta`.
fn rotate(n: [f64; 2], theta: f64) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [n[0] * c - n[1] * s, n[0] * s + n[1] * c]
}

/// Distance to the rectangle boundary and the wall struck, from the closed
/// form rather than cell traversal.
fn wall_hit(mesh: &FurnaceMesh, o: [f64; 2], d: [f64; 2]) -> (f64, Wall) {
    let tx = if d[0] > 0.0 { ((mesh.lx - o[0]) / d[0], Wall::East) } else if d[0] < 0.0 { (-o[0] / d[0], Wall::West) } else { (f64::INFINITY, Wall::East) };
    let ty = if d[1] > 0.0 { ((mesh.ly - o[1]) / d[1], Wall::North) } else if d[1] < 0.0 { (-o[1] / d[1], Wall::South) } else { (f64::INFINITY, Wall::North) };
    if tx.0 < ty.0 { tx } else { ty }
}

/// Cosine-weighted fraction of the hemisphere at boundary point `p` that
/// sees `wall`, by Monte Carlo.
pub fn monte_carlo_view_factor(mesh: &FurnaceMesh, p: usize, wall: Wall, rays: usize, seed: u64) -> f64 {
    let bp = mesh.boundary_point(p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(p as u64);
    let hits = (0..rays)
        .filter(|_| {
            // sin θ uniform on (-1, 1) gives density ∝ cos θ
            let theta = rng.gen_range(-1.0f64..1.0).asin();
            wall_hit(mesh, bp.position, rotate(bp.normal, theta)).1 == wall
        })
        .count();
    hits as f64 / rays as f64
}

fn uniform_case(suite: &PhysicsSuite, table: Arc<AbsorptionTable>, grid: BandGrid, gas: GasMixture) -> FurnaceCase {
    let m = suite.mesh;
    FurnaceCase {
        mesh: m,
        eps: vec![1.0; m.boundary_count()],
        t0: vec![1e-3; m.boundary_count()],
        t_gas: vec![1e-3; m.cell_count()],
        gas,
        grid,
        table,
    }
}

fn isothermal_check(suite: &PhysicsSuite) -> Result<PhysicsCheck> {
    let m = suite.mesh;
    let t = 1200.0;
    let mut case = uniform_case(suite, Arc::new(AbsorptionTable::synthetic(&suite.grid)), suite.grid, GasMixture::default());
    let mut rng = ChaCha8Rng::seed_from_u64(suite.seed);
    case.eps = (0..m.boundary_count()).map(|_| rng.gen_range(0.05..=1.0)).collect();
    case.t0.fill(t);
    case.t_gas.fill(t);
    let sol = Solver::new(&m, &make_quadrature(suite.n_rays)?)?.solve(&case, &SolveOptions { tolerance: 1e-9, ..Default::default() })?;
    let target = stefan_boltzmann() * t.powi(4);
    let residual = sol.irradiation.h.iter().map(|&h| rel(h, target)).fold(0.0, f64::max);
    Ok(check("isothermal_enclosure", residual, 1e-3))
}

/// Transparent gas, black walls, only the south wall hot.
fn view_factor_check(suite: &PhysicsSuite) -> Result<PhysicsCheck> {
    let m = suite.mesh;
    let t_hot = 1000.0;
    let mut case = uniform_case(suite, Arc::new(AbsorptionTable::synthetic(&suite.grid)), suite.grid, GasMixture::transparent());
    case.t0[m.wall_range(Wall::South)].fill(t_hot);
    let sol = Solver::new(&m, &make_quadrature(suite.view_factor_rays)?)?.solve(&case, &SolveOptions::default())?;
    let cold = stefan_boltzmann() * 1e-12;
    let east = m.wall_range(Wall::East);
    let north = m.wall_range(Wall::North);
    let west = m.wall_range(Wall::West);
    let probes = [
        east.start + east.len() / 2,
        north.start + north.len() / 10,
        north.start + north.len() / 2,
        north.end - north.len() / 4,
        west.start + west.len() / 2,
    ];
    let mut residual = 0.0f64;
    for (k, &p) in probes.iter().enumerate() {
        let f = monte_carlo_view_factor(&m, p, Wall::South, suite.monte_carlo_rays, suite.seed.wrapping_add(k as u64));
        let oracle = stefan_boltzmann() * t_hot.powi(4) * f + cold * (1.0 - f);
        residual = residual.max(rel(sol.irradiation.h[p], oracle));
    }
    Ok(check("view_factor_monte_carlo", residual, 1e-2))
}

/// Uniform κ along traversed rays against exp(-κ·chord).
fn beer_lambert_check(suite: &PhysicsSuite) -> Result<PhysicsCheck> {
    let m = suite.mesh;
    let kappa = 0.37;
    let quad = make_quadrature(suite.n_rays)?;
    let mut residual = 0.0f64;
    for p in (0..m.boundary_count()).step_by(7) {
        let bp = m.boundary_point(p);
        for &theta in &quad.theta {
            let d = rotate(bp.normal, theta);
            let path = traverse_ray(&m, bp.position, d)?;
            let segs: Vec<(f64, f64)> = path.segments.iter().map(|&(_, ds)| (kappa, ds)).collect();
            let exact = (-kappa * wall_hit(&m, bp.position, d).0).exp();
            residual = residual.max(rel(path_transmissivity(&segs)?, exact));
        }
    }
    Ok(check("beer_lambert", residual, 1e-12))
}

/// Cold black walls around a gray gas: H is a closed-form sum over rays.
fn gray_gas_check(suite: &PhysicsSuite) -> Result<PhysicsCheck> {
    let m = suite.mesh;
    let (kappa, t_gas) = (0.8, 1600.0);
    let grid = BandGrid::new(suite.grid.nu_min, suite.grid.nu_max, suite.grid.nu_max - suite.grid.nu_min)?;
    // κ = k·p·x with p = 1 atm, x_CO2 = 0.1
    let table = AbsorptionTable {
        species: vec![SpeciesTable {
            name: "CO2".into(),
            band_centers_cm1: grid.centers(),
            ref_temperatures_k: vec![300.0, 3000.0],
            k_m1_atm1: vec![vec![10.0 * kappa, 10.0 * kappa]],
        }],
    };
    let gas = GasMixture { pressure_atm: 1.0, x_co2: 0.1, x_h2o: 0.0, x_co: 0.0 };
    let mut case = uniform_case(suite, Arc::new(table), grid, gas);
    case.t_gas.fill(t_gas);
    let quad = make_quadrature(suite.n_rays)?;
    let sol = Solver::new(&m, &quad)?.solve(&case, &SolveOptions::default())?;
    let ib = band_integral(t_gas, grid.nu_min, grid.nu_max);
    let wall_out = band_blackbody(1e-3, &grid)?.out_of_band;
    let mut residual = 0.0f64;
    for p in 0..m.boundary_count() {
        let bp = m.boundary_point(p);
        let mut h = PI * wall_out;
        for (&theta, &w) in quad.theta.iter().zip(&quad.weights) {
            let chord = wall_hit(&m, bp.position, rotate(bp.normal, theta)).0;
            h += w * ib * (1.0 - (-kappa * chord).exp());
        }
        residual = residual.max(rel(sol.irradiation.h[p], h));
    }
    Ok(check("gray_gas_direct_formula", residual, 1e-9))
}

/// Runs every check; failures are report entries, errors are solver errors.
pub fn validate_physics(suite: &PhysicsSuite) -> Result<PhysicsReport> {
    suite.mesh.validate()?;
    suite.grid.validate()?;
    let checks = vec![isothermal_check(suite)?, view_factor_check(suite)?, beer_lambert_check(suite)?, gray_gas_check(suite)?];
    let passed = checks.iter().all(|c| c.passed);
    Ok(PhysicsReport { checks, passed })
}

pub const POINT_ERRORS_FILE: &str = "point_errors.csv";
pub const WALL_MARKERS_FILE: &str = "wall_markers.csv";

/// Writes `point_errors.csv` (index, wall, error_pct) and `wall_markers.csv`
/// (the first index of each wall after the first).
pub fn emit_plot_data(report: &ErrorReport, mesh: &FurnaceMesh, dir: &Path) -> Result<[PathBuf; 2]> {
    if report.points.is_empty() {
        return Err(CoreError::Dataset("error report has no points".into()));
    }
    std::fs::create_dir_all(dir)?;
    let points = dir.join(POINT_ERRORS_FILE);
    let mut w = csv::Writer::from_path(&points).map_err(csv_err)?;
    w.write_record(["index", "wall", "error_pct"]).map_err(csv_err)?;
    for e in &report.points {
        w.write_record([e.index.to_string(), e.wall.name().to_string(), e.mean_pct.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;

    let markers = dir.join(WALL_MARKERS_FILE);
    let mut w = csv::Writer::from_path(&markers).map_err(csv_err)?;
    w.write_record(["index", "wall"]).map_err(csv_err)?;
    for (wall, range) in wall_segments(mesh).into_iter().skip(1) {
        w.write_record([range.start.to_string(), wall.name().to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok([points, markers])
}
