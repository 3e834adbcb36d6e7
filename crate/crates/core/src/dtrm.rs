//! Spectral discrete-transfer solver with diffuse-wall radiosity iteration.
//!
//! Rays are traced from each receiving boundary point into the enclosure
//! once per (mesh, quadrature). Per band, the transmissivity of every ray and
//! the gas emission it carries to the receiver are computed once, after which
//! each radiosity sweep is a dot product over rays.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::mesh::{traverse_ray, FurnaceMesh, RayPath};
use crate::spectral::{band_blackbody, band_integral, AbsorptionTable, BandBlackbody, BandGrid, GasMixture};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularQuadrature {
    /// Polar angles from the inward normal, counter-clockwise positive.
    pub theta: Vec<f64>,
    pub weights: Vec<f64>,
}

impl AngularQuadrature {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Direction of ray `i` for a point with inward normal `n`.
    pub fn direction(&self, i: usize, n: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta[i].sin_cos();
        [n[0] * c - n[1] * s, n[0] * s + n[1] * c]
    }
}

/// Equal-angle bins over (−π/2, π/2) with cosine-integrated weights.
pub fn make_quadrature(n_rays: usize) -> Result<AngularQuadrature> {
    if n_rays < 1 {
        return Err(CoreError::config("n_rays", "need at least one ray"));
    }
    let half_pi = std::f64::consts::FRAC_PI_2;
    let edge = |j: usize| -half_pi + j as f64 * std::f64::consts::PI / n_rays as f64;
    let theta = (0..n_rays).map(|i| 0.5 * (edge(i) + edge(i + 1))).collect();
    let weights = (0..n_rays)
        .map(|i| half_pi * (edge(i + 1).sin() - edge(i).sin()))
        .collect();
    Ok(AngularQuadrature { theta, weights })
}

/// One solver input.
#[derive(Debug, Clone)]
pub struct FurnaceCase {
    pub mesh: FurnaceMesh,
    /// Emissivity per boundary point.
    pub eps: Vec<f64>,
    /// Wall temperature per boundary point (K).
    pub t0: Vec<f64>,
    /// Gas temperature per cell (K), row-major.
    pub t_gas: Vec<f64>,
    pub gas: GasMixture,
    pub grid: BandGrid,
    pub table: Arc<AbsorptionTable>,
}

/// Serializable part of a case; grid and table come from the run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseFile {
    pub mesh: FurnaceMesh,
    pub eps: Vec<f64>,
    pub t0: Vec<f64>,
    pub t_gas: Vec<f64>,
    #[serde(default)]
    pub gas: Option<GasMixture>,
}

impl FurnaceCase {
    pub fn validate(&self) -> Result<()> {
        self.mesh.validate()?;
        self.grid.validate()?;
        self.gas.validate()?;
        let p = self.mesh.boundary_count();
        let c = self.mesh.cell_count();
        if self.eps.len() != p || self.t0.len() != p {
            return Err(CoreError::Dimension(format!(
                "eps/t0 have {}/{} entries, mesh has {p} boundary points",
                self.eps.len(),
                self.t0.len()
            )));
        }
        if self.t_gas.len() != c {
            return Err(CoreError::Dimension(format!(
                "t_gas has {} entries, mesh has {c} cells",
                self.t_gas.len()
            )));
        }
        if let Some(i) = self.eps.iter().position(|e| !(0.0..=1.0).contains(e)) {
            return Err(CoreError::Domain(format!("eps[{i}] = {} outside [0, 1]", self.eps[i])));
        }
        for (name, v) in [("t0", &self.t0), ("t_gas", &self.t_gas)] {
            if let Some(i) = v.iter().position(|t| !(*t > 0.0) || !t.is_finite()) {
                return Err(CoreError::Domain(format!("{name}[{i}] = {} must be > 0", v[i])));
            }
        }
        self.table.check_grid(&self.grid)?;
        self.table.absorber(&self.gas)?;
        Ok(())
    }

    pub fn from_file(file: CaseFile, default_gas: GasMixture, grid: BandGrid, table: Arc<AbsorptionTable>) -> Result<Self> {
        let case = Self {
            mesh: file.mesh,
            eps: file.eps,
            t0: file.t0,
            t_gas: file.t_gas,
            gas: file.gas.unwrap_or(default_gas),
            grid,
            table,
        };
        case.validate()?;
        Ok(case)
    }

    pub fn to_file(&self) -> CaseFile {
        CaseFile {
            mesh: self.mesh,
            eps: self.eps.clone(),
            t0: self.t0.clone(),
            t_gas: self.t_gas.clone(),
            gas: Some(self.gas),
        }
    }
}

/// Hemispherical irradiation per boundary point (W·m⁻²).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallIrradiation {
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tolerance: f64,
    pub max_iters: usize,
    /// Keep per-band H (the out-of-band remainder is the last row).
    pub per_band: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tolerance: 1e-6, max_iters: 100, per_band: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub irradiation: WallIrradiation,
    pub per_band: Option<Vec<Vec<f64>>>,
    /// Radiosity sweeps per band, out-of-band last.
    pub iterations: Vec<usize>,
}

/// Flattened ray paths for every (boundary point, quadrature direction).
/// Ray `p * n_rays + i` starts at point `p`; its segments run from the
/// receiver to the source wall.
#[derive(Debug, Clone)]
pub struct RayGeometry {
    pub mesh: FurnaceMesh,
    pub quadrature: AngularQuadrature,
    terminal: Vec<u32>,
    start: Vec<u32>,
    cells: Vec<u32>,
    lengths: Vec<f64>,
}

impl RayGeometry {
    pub fn new(mesh: &FurnaceMesh, quadrature: &AngularQuadrature) -> Result<Self> {
        mesh.validate()?;
        let n = quadrature.len();
        let paths: Vec<RayPath> = (0..mesh.boundary_count())
            .into_par_iter()
            .flat_map_iter(|p| {
                let bp = mesh.boundary_point(p);
                (0..n).map(move |i| traverse_ray(mesh, bp.position, quadrature.direction(i, bp.normal)))
            })
            .collect::<Result<_>>()?;
        let mut g = Self {
            mesh: *mesh,
            quadrature: quadrature.clone(),
            terminal: Vec::with_capacity(paths.len()),
            start: Vec::with_capacity(paths.len() + 1),
            cells: Vec::new(),
            lengths: Vec::new(),
        };
        g.start.push(0);
        for path in &paths {
            g.terminal.push(path.terminal as u32);
            for &(c, l) in &path.segments {
                g.cells.push(c as u32);
                g.lengths.push(l);
            }
            g.start.push(g.cells.len() as u32);
        }
        Ok(g)
    }

    pub fn ray_count(&self) -> usize {
        self.terminal.len()
    }

    pub fn segment_count(&self) -> usize {
        self.cells.len()
    }

    /// The stored path of ray `i` at point `p`.
    pub fn path(&self, p: usize, i: usize) -> RayPath {
        let r = p * self.quadrature.len() + i;
        let span = self.start[r] as usize..self.start[r + 1] as usize;
        let bp = self.mesh.boundary_point(p);
        RayPath {
            origin: p,
            direction: self.quadrature.direction(i, bp.normal),
            segments: span.map(|s| (self.cells[s] as usize, self.lengths[s])).collect(),
            exit: self.mesh.boundary_point(self.terminal[r] as usize).position,
            terminal: self.terminal[r] as usize,
        }
    }
}

/// Intensity reaching the receiver along `path` in `band`, marching from the
/// source wall with leaving intensity `wall_radiosity[path.terminal]`.
/// `band == grid.band_count()` selects the transparent out-of-band remainder.
pub fn ray_arriving_intensity(path: &RayPath, band: usize, case: &FurnaceCase, wall_radiosity: &[f64]) -> Result<f64> {
    let source = *wall_radiosity.get(path.terminal).ok_or_else(|| {
        CoreError::Dimension(format!("radiosity has no entry for point {}", path.terminal))
    })?;
    if band == case.grid.band_count() {
        return Ok(source);
    }
    if band > case.grid.band_count() {
        return Err(CoreError::Domain(format!("band {band} outside grid")));
    }
    let absorber = case.table.absorber(&case.gas)?;
    let (lo, hi) = case.grid.band_edges(band);
    let mut i = source;
    for &(cell, ds) in path.segments.iter().rev() {
        let t = case.t_gas[cell];
        let kappa = absorber.kappa(band, t);
        let tau = (-kappa * ds).exp();
        i = i * tau + band_integral(t, lo, hi) * -(-kappa * ds).exp_m1();
    }
    Ok(i)
}

/// Reusable solver for one (mesh, quadrature).
#[derive(Debug, Clone)]
pub struct Solver {
    geometry: Arc<RayGeometry>,
}

struct BandInput<'a> {
    band: usize,
    eps: &'a [f64],
    /// Wall emission ε·I_b(T0) per point.
    emission: Vec<f64>,
    /// `None` for a transparent band.
    kappa: Option<Vec<f64>>,
    ib_cell: Vec<f64>,
}

impl Solver {
    pub fn new(mesh: &FurnaceMesh, quadrature: &AngularQuadrature) -> Result<Self> {
        Ok(Self { geometry: Arc::new(RayGeometry::new(mesh, quadrature)?) })
    }

    pub fn geometry(&self) -> &RayGeometry {
        &self.geometry
    }

    pub fn solve(&self, case: &FurnaceCase, opts: &SolveOptions) -> Result<Solution> {
        case.validate()?;
        if case.mesh != self.geometry.mesh {
            return Err(CoreError::Dimension("case mesh differs from the solver mesh".into()));
        }
        if !(opts.tolerance > 0.0) || opts.max_iters < 1 {
            return Err(CoreError::config("solver", "tolerance must be > 0 and max_iters >= 1"));
        }
        let absorber = case.table.absorber(&case.gas)?;
        let n_bands = case.grid.band_count();
        let bb = |t: &f64| band_blackbody(*t, &case.grid);
        let wall_bb: Vec<BandBlackbody> = case.t0.par_iter().map(bb).collect::<Result<_>>()?;
        let cell_bb: Vec<BandBlackbody> = if absorber.is_transparent() {
            Vec::new()
        } else {
            case.t_gas.par_iter().map(bb).collect::<Result<_>>()?
        };
        let pick = |set: &[BandBlackbody], b: usize| -> Vec<f64> {
            set.iter().map(|x| if b < n_bands { x.in_band[b] } else { x.out_of_band }).collect()
        };

        let results: Vec<(Vec<f64>, usize)> = (0..=n_bands)
            .into_par_iter()
            .map(|b| {
                let ib_wall = pick(&wall_bb, b);
                let emission = case.eps.iter().zip(&ib_wall).map(|(e, i)| e * i).collect();
                let kappa = (b < n_bands && !absorber.is_transparent())
                    .then(|| case.t_gas.iter().map(|&t| absorber.kappa(b, t)).collect::<Vec<_>>())
                    .filter(|k| k.iter().any(|&v| v > 0.0));
                let ib_cell = if kappa.is_some() { pick(&cell_bb, b) } else { Vec::new() };
                self.solve_band(
                    &BandInput { band: b, eps: &case.eps, emission, kappa, ib_cell },
                    opts,
                )
            })
            .collect::<Result<_>>()?;

        let p = case.mesh.boundary_count();
        let mut h = vec![0.0; p];
        for (hb, _) in &results {
            for (acc, v) in h.iter_mut().zip(hb) {
                *acc += v;
            }
        }
        let iterations = results.iter().map(|r| r.1).collect();
        let per_band = opts.per_band.then(|| results.into_iter().map(|r| r.0).collect());
        Ok(Solution { irradiation: WallIrradiation { h }, per_band, iterations })
    }

    fn solve_band(&self, input: &BandInput, opts: &SolveOptions) -> Result<(Vec<f64>, usize)> {
        let g = &*self.geometry;
        let n_rays = g.quadrature.len();
        let weights = &g.quadrature.weights;
        let rays = g.ray_count();

        // Per ray: arriving = trans * J[terminal] + gain.
        let (trans, gain): (Vec<f64>, Vec<f64>) = match &input.kappa {
            None => (vec![1.0; rays], vec![0.0; rays]),
            Some(kappa) => (0..rays)
                .map(|r| {
                    let (mut tr, mut em) = (1.0, 0.0);
                    for s in (g.start[r] as usize..g.start[r + 1] as usize).rev() {
                        let c = g.cells[s] as usize;
                        let depth = kappa[c] * g.lengths[s];
                        let tau = (-depth).exp();
                        em = em * tau + input.ib_cell[c] * -(-depth).exp_m1();
                        tr *= tau;
                    }
                    (tr, em)
                })
                .unzip(),
        };

        let sweep = |j: &[f64]| -> Vec<f64> {
            (0..g.mesh.boundary_count())
                .map(|p| {
                    let mut acc = 0.0;
                    for i in 0..n_rays {
                        let r = p * n_rays + i;
                        acc += weights[i] * (trans[r] * j[g.terminal[r] as usize] + gain[r]);
                    }
                    acc
                })
                .collect()
        };

        let all_black = input.eps.iter().all(|&e| e == 1.0);
        let mut j = input.emission.clone();
        let mut previous: Option<Vec<f64>> = None;
        let mut residual = f64::INFINITY;
        for it in 1..=opts.max_iters {
            let h = sweep(&j);
            if all_black {
                return Ok((h, 1));
            }
            if let Some(prev) = &previous {
                let scale = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let change = h.iter().zip(prev).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                residual = if scale > 0.0 { change / scale } else { 0.0 };
                if residual < opts.tolerance {
                    return Ok((h, it));
                }
            }
            for (w, jw) in j.iter_mut().enumerate() {
                *jw = input.emission[w] + (1.0 - input.eps[w]) * h[w] / std::f64::consts::PI;
            }
            previous = Some(h);
        }
        Err(CoreError::NonConvergence { band: input.band, iterations: opts.max_iters, residual })
    }
}

/// Builds a solver for the case's mesh and solves it.
pub fn solve(case: &FurnaceCase, quadrature: &AngularQuadrature, opts: &SolveOptions) -> Result<Solution> {
    Solver::new(&case.mesh, quadrature)?.solve(case, opts)
}

/// Median wall-clock seconds of `repetitions` solves, including ray setup.
pub fn solver_timing(case: &FurnaceCase, quadrature: &AngularQuadrature, opts: &SolveOptions, repetitions: usize) -> Result<f64> {
    if repetitions < 1 {
        return Err(CoreError::config("repetitions", "must be >= 1"));
    }
    let mut times = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        solve(case, quadrature, opts)?;
        times.push(start.elapsed().as_secs_f64());
    }
    Ok(median(&mut times))
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{stefan_boltzmann, SpeciesTable};
    use proptest::prelude::*;

    fn desk_mesh() -> FurnaceMesh {
        FurnaceMesh::new(30, 10, 3.0, 1.0).unwrap()
    }

    fn desk_grid() -> BandGrid {
        BandGrid::new(150.0, 9300.0, 228.75).unwrap()
    }

    fn uniform_case(mesh: FurnaceMesh, eps: f64, t0: f64, t: f64, gas: GasMixture) -> FurnaceCase {
        let grid = desk_grid();
        FurnaceCase {
            mesh,
            eps: vec![eps; mesh.boundary_count()],
            t0: vec![t0; mesh.boundary_count()],
            t_gas: vec![t; mesh.cell_count()],
            gas,
            grid,
            table: Arc::new(AbsorptionTable::synthetic(&grid)),
        }
    }

    #[test]
    fn quadrature_examples() {
        let q = make_quadrature(2).unwrap();
        let q4 = std::f64::consts::FRAC_PI_4;
        assert!((q.theta[0] + q4).abs() < 1e-15 && (q.theta[1] - q4).abs() < 1e-15);
        assert!((q.weights[0] - q.weights[1]).abs() < 1e-15);
        assert!((q.weights[0] - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        for n in [1, 3, 16, 32, 1000] {
            let q = make_quadrature(n).unwrap();
            assert!((q.weights.iter().sum::<f64>() - std::f64::consts::PI).abs() < 1e-12);
            assert!(q.weights.iter().all(|&w| w > 0.0));
            assert!(q.theta.iter().all(|t| t.abs() < std::f64::consts::FRAC_PI_2));
        }
        assert!(make_quadrature(0).is_err());
    }

    #[test]
    fn isothermal_enclosure_gives_sigma_t4() {
        let sigma_t4 = stefan_boltzmann() * 1200f64.powi(4);
        assert!((sigma_t4 - 117_573.56).abs() / sigma_t4 < 1e-3);
        let q = make_quadrature(16).unwrap();
        let solver = Solver::new(&desk_mesh(), &q).unwrap();
        for eps in [1.0, 0.6, 0.3] {
            let case = uniform_case(desk_mesh(), eps, 1200.0, 1200.0, GasMixture::default());
            let sol = solver.solve(&case, &SolveOptions::default()).unwrap();
            for h in &sol.irradiation.h {
                assert!((h - sigma_t4).abs() / sigma_t4 < 1e-3, "eps {eps}: {h}");
            }
        }
    }

    #[test]
    fn black_walls_converge_in_one_iteration() {
        let mut case = uniform_case(desk_mesh(), 1.0, 900.0, 1500.0, GasMixture::default());
        case.t0[3] = 1300.0;
        let q = make_quadrature(8).unwrap();
        let sol = solve(&case, &q, &SolveOptions::default()).unwrap();
        assert!(sol.iterations.iter().all(|&n| n == 1));
        // A second sweep from the same radiosity changes nothing.
        let again = solve(&case, &q, &SolveOptions { tolerance: 1e-300, max_iters: 2, ..Default::default() }).unwrap();
        assert_eq!(again.irradiation, sol.irradiation);
    }

    #[test]
    fn iteration_count_bounded_by_contraction() {
        let mut case = uniform_case(desk_mesh(), 0.5, 1000.0, 1400.0, GasMixture::default());
        for (i, e) in case.eps.iter_mut().enumerate() {
            *e = 0.5 + 0.5 * ((i * 37 % 11) as f64 / 10.0);
        }
        let sol = solve(&case, &make_quadrature(8).unwrap(), &SolveOptions::default()).unwrap();
        let bound = (1e-6f64.ln() / 0.5f64.ln()).ceil() as usize + 1;
        assert!(sol.iterations.iter().all(|&n| n <= bound), "{:?} > {bound}", sol.iterations);
    }

    #[test]
    fn non_convergence_is_reported() {
        let case = uniform_case(desk_mesh(), 0.05, 1000.0, 1400.0, GasMixture::transparent());
        let err = solve(&case, &make_quadrature(4).unwrap(), &SolveOptions { max_iters: 3, ..Default::default() }).unwrap_err();
        match err {
            CoreError::NonConvergence { iterations, residual, .. } => {
                assert_eq!(iterations, 3);
                assert!(residual > 1e-6);
            }
            other => panic!("{other}"),
        }
    }

    /// One gray band covering the grid with κ = 10·k·p·x = `kappa`,
    /// cold black walls.
    fn gray_case(mesh: FurnaceMesh, kappa: f64, t_gas: f64) -> FurnaceCase {
        let grid = BandGrid::new(150.0, 9300.0, 9150.0).unwrap();
        let table = AbsorptionTable {
            species: vec![SpeciesTable {
                name: "CO2".into(),
                band_centers_cm1: grid.centers(),
                ref_temperatures_k: vec![300.0, 3000.0],
                k_m1_atm1: vec![vec![10.0 * kappa, 10.0 * kappa]],
            }],
        };
        FurnaceCase {
            mesh,
            eps: vec![1.0; mesh.boundary_count()],
            t0: vec![1e-3; mesh.boundary_count()],
            t_gas: vec![t_gas; mesh.cell_count()],
            gas: GasMixture { pressure_atm: 1.0, x_co2: 0.1, x_h2o: 0.0, x_co: 0.0 },
            grid,
            table: Arc::new(table),
        }
    }

    /// Distance from `o` along `d` to the rectangle boundary.
    fn chord(mesh: &FurnaceMesh, o: [f64; 2], d: [f64; 2]) -> f64 {
        let along = |p: f64, di: f64, l: f64| {
            if di > 0.0 {
                (l - p) / di
            } else if di < 0.0 {
                -p / di
            } else {
                f64::INFINITY
            }
        };
        along(o[0], d[0], mesh.lx).min(along(o[1], d[1], mesh.ly))
    }

    #[test]
    fn gray_gas_matches_direct_formula() {
        let mesh = desk_mesh();
        let (kappa, tg) = (0.8, 1600.0);
        let case = gray_case(mesh, kappa, tg);
        let q = make_quadrature(16).unwrap();
        let sol = solve(&case, &q, &SolveOptions::default()).unwrap();
        let ib = band_integral(tg, 150.0, 9300.0);
        let wall_oob = band_blackbody(1e-3, &case.grid).unwrap().out_of_band;
        for p in 0..mesh.boundary_count() {
            let bp = mesh.boundary_point(p);
            let mut h = 0.0;
            for i in 0..q.len() {
                let th = q.theta[i];
                let n = bp.normal;
                let d = [n[0] * th.cos() - n[1] * th.sin(), n[0] * th.sin() + n[1] * th.cos()];
                h += ib * (1.0 - (-kappa * chord(&mesh, bp.position, d)).exp()) * q.weights[i];
            }
            h += std::f64::consts::PI * wall_oob;
            let got = sol.irradiation.h[p];
            assert!((got - h).abs() / h < 1e-9, "point {p}: {got} vs {h}");
        }
    }

    #[test]
    fn arriving_intensity_limits() {
        let mesh = desk_mesh();
        let g = RayGeometry::new(&mesh, &make_quadrature(16).unwrap()).unwrap();
        let path = g.path(5, 7);
        let radiosity: Vec<f64> = (0..mesh.boundary_count()).map(|i| 100.0 + i as f64).collect();

        let clear = gray_case(mesh, 0.0, 1500.0);
        let i = ray_arriving_intensity(&path, 0, &clear, &radiosity).unwrap();
        assert_eq!(i, radiosity[path.terminal]);

        // κΔs = 50 in the first cell alone saturates to the gas intensity
        let ds = path.segments[0].1;
        let thick = gray_case(mesh, 50.0 / ds, 1500.0);
        let ib = band_integral(1500.0, 150.0, 9300.0);
        let one = RayPath { segments: vec![path.segments[0]], ..path.clone() };
        let i = ray_arriving_intensity(&one, 0, &thick, &radiosity).unwrap();
        assert!((i - ib).abs() / ib < 1e-16 + f64::EPSILON, "{i} vs {ib}");

        assert_eq!(ray_arriving_intensity(&path, 1, &clear, &radiosity).unwrap(), radiosity[path.terminal]);
        assert!(ray_arriving_intensity(&path, 2, &clear, &radiosity).is_err());
    }

    #[test]
    fn two_cell_recursion_oracle() {
        let mesh = FurnaceMesh::new(2, 1, 2.0, 1.0).unwrap();
        let mut case = gray_case(mesh, 0.7, 1000.0);
        case.t_gas = vec![1200.0, 1900.0];
        let path = RayPath {
            origin: 3,
            direction: [1.0, 0.0],
            segments: vec![(0, 1.0), (1, 0.4)],
            exit: [2.0, 0.5],
            terminal: 2,
        };
        let radiosity = vec![0.0, 0.0, 4321.0, 0.0, 0.0, 0.0];
        let got = ray_arriving_intensity(&path, 0, &case, &radiosity).unwrap();
        let (k, i1, i2) = (0.7, band_integral(1200.0, 150.0, 9300.0), band_integral(1900.0, 150.0, 9300.0));
        // source wall → cell 1 (0.4 m) → cell 0 (1.0 m) → receiver
        let after_1 = 4321.0 * (-k * 0.4f64).exp() + i2 * (1.0 - (-k * 0.4f64).exp());
        let after_0 = after_1 * (-k * 1.0f64).exp() + i1 * (1.0 - (-k * 1.0f64).exp());
        assert!((got - after_0).abs() / after_0 < 1e-12);
    }

    #[test]
    fn solver_agrees_with_literal_ray_marching() {
        let mesh = FurnaceMesh::new(6, 3, 1.2, 0.6).unwrap();
        let mut case = uniform_case(mesh, 1.0, 800.0, 1500.0, GasMixture::default());
        for (c, t) in case.t_gas.iter_mut().enumerate() {
            *t = 1000.0 + 40.0 * c as f64;
        }
        for (p, t) in case.t0.iter_mut().enumerate() {
            *t = 700.0 + 25.0 * p as f64;
        }
        let q = make_quadrature(6).unwrap();
        let solver = Solver::new(&mesh, &q).unwrap();
        let sol = solver.solve(&case, &SolveOptions { per_band: true, ..Default::default() }).unwrap();
        let per_band = sol.per_band.unwrap();
        assert_eq!(per_band.len(), case.grid.band_count() + 1);
        for b in [0, 2, 9, 17, 39, 40] {
            let j: Vec<f64> = case
                .t0
                .iter()
                .map(|&t| {
                    let bb = band_blackbody(t, &case.grid).unwrap();
                    if b < 40 { bb.in_band[b] } else { bb.out_of_band }
                })
                .collect();
            for p in 0..mesh.boundary_count() {
                let h: f64 = (0..q.len())
                    .map(|i| q.weights[i] * ray_arriving_intensity(&solver.geometry().path(p, i), b, &case, &j).unwrap())
                    .sum();
                let got = per_band[b][p];
                assert!((got - h).abs() <= 1e-12 * h.abs().max(1e-300), "band {b} point {p}: {got} vs {h}");
            }
        }
    }

    #[test]
    fn hotter_gas_raises_every_point() {
        let q = make_quadrature(8).unwrap();
        let solver = Solver::new(&desk_mesh(), &q).unwrap();
        let h = |t| solver.solve(&uniform_case(desk_mesh(), 1.0, 300.0, t, GasMixture::default()), &SolveOptions::default()).unwrap();
        let (cool, hot) = (h(1000.0), h(1100.0));
        for (a, b) in cool.irradiation.h.iter().zip(&hot.irradiation.h) {
            assert!(b > a);
        }
    }

    #[test]
    fn results_independent_of_thread_count() {
        let mut case = uniform_case(desk_mesh(), 0.7, 1000.0, 1400.0, GasMixture::default());
        for (c, t) in case.t_gas.iter_mut().enumerate() {
            *t += (c % 7) as f64 * 30.0;
        }
        let q = make_quadrature(8).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| solve(&case, &q, &SolveOptions::default()).unwrap())
        };
        let a = run(1);
        assert_eq!(a, run(3));
        assert_eq!(a, run(1));
    }

    #[test]
    fn case_validation() {
        let good = uniform_case(desk_mesh(), 0.5, 1000.0, 1000.0, GasMixture::default());
        assert!(good.validate().is_ok());
        let mut bad = good.clone();
        bad.eps[0] = 1.5;
        assert!(matches!(bad.validate(), Err(CoreError::Domain(_))));
        let mut bad = good.clone();
        bad.t_gas.pop();
        assert!(matches!(bad.validate(), Err(CoreError::Dimension(_))));
        let mut bad = good.clone();
        bad.t0[2] = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = good;
        bad.grid = BandGrid::furnace_default();
        assert!(matches!(bad.validate(), Err(CoreError::Config { .. })));
    }

    #[test]
    fn timing_is_positive() {
        let case = uniform_case(FurnaceMesh::new(6, 2, 1.0, 0.5).unwrap(), 0.8, 1000.0, 1200.0, GasMixture::default());
        let t = solver_timing(&case, &make_quadrature(4).unwrap(), &SolveOptions::default(), 3).unwrap();
        assert!(t > 0.0 && t.is_finite());
        assert!(solver_timing(&case, &make_quadrature(4).unwrap(), &SolveOptions::default(), 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn isothermal_identity_for_any_emissivity(
            seed in 0u64..1000,
            t in 600.0f64..2000.0,
        ) {
            let mesh = FurnaceMesh::new(8, 4, 2.0, 1.0).unwrap();
            let mut case = uniform_case(mesh, 1.0, t, t, GasMixture::default());
            for (i, e) in case.eps.iter_mut().enumerate() {
                *e = 0.2 + 0.8 * (((seed as usize + 1) * (i + 3) * 2654435761usize % 1000) as f64 / 1000.0);
            }
            let sol = solve(&case, &make_quadrature(6).unwrap(), &SolveOptions::default()).unwrap();
            let expect = stefan_boltzmann() * t.powi(4);
            for h in sol.irradiation.h {
                prop_assert!((h - expect).abs() / expect < 1e-3);
            }
        }
    }
}
