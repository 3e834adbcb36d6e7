//! Latin hypercube designs and their mapping to smooth furnace states.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use radsurr_nn::tensor_file::sha256_hex;

use crate::dtrm::{make_quadrature, FurnaceCase, SolveOptions, Solver};
use crate::error::{CoreError, Result};
use crate::mesh::{FurnaceMesh, Wall};
use crate::spectral::{AbsorptionTable, BandGrid, GasMixture};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaseDistribution {
    pub eps_range: [f64; 2],
    pub t0_range: [f64; 2],
    pub t_range: [f64; 2],
    /// Control points per wall, shared by the ε and T0 profiles.
    pub wall_controls: usize,
    /// Domain temperature control grid `[c_x, c_y]`.
    pub domain_controls: [usize; 2],
    pub gas: GasMixture,
}

impl Default for CaseDistribution {
    fn default() -> Self {
        Self {
            eps_range: [0.3, 1.0],
            t0_range: [800.0, 1800.0],
            t_range: [900.0, 2000.0],
            wall_controls: 4,
            domain_controls: [6, 3],
            gas: GasMixture::default(),
        }
    }
}

impl CaseDistribution {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: String| Err(CoreError::config(format!("distribution.{f}"), m));
        let [e0, e1] = self.eps_range;
        if !(0.0 <= e0 && e0 < e1 && e1 <= 1.0) {
            return bad("eps_range", format!("need 0 <= lo < hi <= 1, got [{e0}, {e1}]"));
        }
        for (f, [lo, hi]) in [("t0_range", self.t0_range), ("t_range", self.t_range)] {
            if !(0.0 < lo && lo < hi && hi.is_finite()) {
                return bad(f, format!("need 0 < lo < hi, got [{lo}, {hi}]"));
            }
        }
        if self.wall_controls < 2 {
            return bad("wall_controls", format!("need >= 2, got {}", self.wall_controls));
        }
        if self.domain_controls.iter().any(|&c| c < 2) {
            return bad("domain_controls", format!("need both >= 2, got {:?}", self.domain_controls));
        }
        self.gas.validate()
    }

    /// LHS dimensions: ε and T0 control values per wall, then the domain grid.
    pub fn dims(&self) -> usize {
        8 * self.wall_controls + self.domain_controls[0] * self.domain_controls[1]
    }
}

/// `n × d` design, row-major, values in [0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    pub n: usize,
    pub d: usize,
    pub values: Vec<f64>,
}

impl SampleMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.d + j]
    }

    /// True when every column has exactly one value per stratum
    /// `[i/n, (i+1)/n)`.
    pub fn is_stratified(&self) -> bool {
        (0..self.d).all(|j| {
            let mut hit = vec![false; self.n];
            (0..self.n).all(|i| match stratum(self.get(i, j), self.n) {
                Some(s) if !hit[s] => {
                    hit[s] = true;
                    true
                }
                _ => false,
            })
        })
    }
}

fn stratum(v: f64, n: usize) -> Option<usize> {
    let s = (v * n as f64).floor();
    if !(0.0..n as f64).contains(&s) {
        return None;
    }
    let s = s as usize;
    // floor(v·n) can be off by one at stratum edges; settle on the bounds.
    [s.saturating_sub(1), s, (s + 1).min(n - 1)]
        .into_iter()
        .find(|&k| lower(k, n) <= v && v < lower(k + 1, n))
}

#[inline]
fn lower(k: usize, n: usize) -> f64 {
    k as f64 / n as f64
}

/// Latin hypercube design: one shuffled permutation of strata per column
/// and one uniform draw inside each stratum.
pub fn lhs(n_samples: usize, n_dims: usize, seed: u64) -> Result<SampleMatrix> {
    if n_samples < 1 || n_dims < 1 {
        return Err(CoreError::config("lhs", format!("need n >= 1 and d >= 1, got {n_samples}x{n_dims}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; n_samples * n_dims];
    let mut perm: Vec<usize> = (0..n_samples).collect();
    for j in 0..n_dims {
        perm.shuffle(&mut rng);
        for (i, &k) in perm.iter().enumerate() {
            let (lo, hi) = (lower(k, n_samples), lower(k + 1, n_samples));
            let u: f64 = rng.gen();
            let v = lo + u * (hi - lo);
            values[i * n_dims + j] = if v < hi { v.max(lo) } else { hi.next_down() };
        }
    }
    Ok(SampleMatrix { n: n_samples, d: n_dims, values })
}

/// Input fields of one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseFields {
    pub eps: Vec<f64>,
    pub t0: Vec<f64>,
    pub t_gas: Vec<f64>,
}

/// Piecewise-linear profile through equally spaced control values, sampled
/// at `n` equally spaced points spanning the same interval.
fn profile(controls: &[f64], n: usize) -> impl Iterator<Item = f64> + '_ {
    let c = controls.len();
    (0..n).map(move |k| {
        let s = if n > 1 { k as f64 / (n - 1) as f64 } else { 0.5 };
        lerp_controls(controls, s * (c - 1) as f64)
    })
}

fn lerp_controls(controls: &[f64], u: f64) -> f64 {
    let last = controls.len() - 1;
    let i = (u.floor() as usize).min(last - 1);
    let f = u - i as f64;
    controls[i] + f * (controls[i + 1] - controls[i])
}

fn scale([lo, hi]: [f64; 2], u: f64) -> f64 {
    lo + u * (hi - lo)
}

/// Maps one design row to case fields. Wall profiles run in boundary-index
/// order along each wall; the domain grid is indexed `gy * c_x + gx` with
/// control nodes at the outermost cell centers.
pub fn realize_fields(row: &[f64], dist: &CaseDistribution, mesh: &FurnaceMesh) -> Result<CaseFields> {
    if row.len() != dist.dims() {
        return Err(CoreError::Dimension(format!(
            "sample row has {} values, distribution needs {}",
            row.len(),
            dist.dims()
        )));
    }
    let cb = dist.wall_controls;
    let wall_block = |offset: usize, range: [f64; 2]| -> Vec<f64> {
        let mut out = Vec::with_capacity(mesh.boundary_count());
        for (w, wall) in Wall::ALL.into_iter().enumerate() {
            let controls: Vec<f64> = row[offset + w * cb..offset + (w + 1) * cb]
                .iter()
                .map(|&u| scale(range, u))
                .collect();
            out.extend(profile(&controls, mesh.wall_range(wall).len()));
        }
        out
    };
    let eps = wall_block(0, dist.eps_range);
    let t0 = wall_block(4 * cb, dist.t0_range);

    let [cx, cy] = dist.domain_controls;
    let grid: Vec<f64> = row[8 * cb..].iter().map(|&u| scale(dist.t_range, u)).collect();
    let coord = |i: usize, n: usize, c: usize| if n > 1 { i as f64 / (n - 1) as f64 * (c - 1) as f64 } else { 0.5 * (c - 1) as f64 };
    let mut t_gas = Vec::with_capacity(mesh.cell_count());
    for iy in 0..mesh.ny {
        let v = coord(iy, mesh.ny, cy);
        let gy = (v.floor() as usize).min(cy - 2);
        let fy = v - gy as f64;
        for ix in 0..mesh.nx {
            let u = coord(ix, mesh.nx, cx);
            let gx = (u.floor() as usize).min(cx - 2);
            let fx = u - gx as f64;
            let at = |a: usize, b: usize| grid[b * cx + a];
            let south = at(gx, gy) + fx * (at(gx + 1, gy) - at(gx, gy));
            let north = at(gx, gy + 1) + fx * (at(gx + 1, gy + 1) - at(gx, gy + 1));
            t_gas.push(south + fy * (north - south));
        }
    }
    Ok(CaseFields { eps, t0, t_gas })
}

/// Solver-side settings shared by every case of a dataset.
#[derive(Debug, Clone)]
pub struct SolverSetup {
    pub mesh: FurnaceMesh,
    pub n_rays: usize,
    pub grid: BandGrid,
    pub table: Arc<AbsorptionTable>,
    pub options: SolveOptions,
}

impl SolverSetup {
    /// Hash over everything that changes solver output.
    pub fn config_hash(&self) -> Result<String> {
        let table = sha256_hex(self.table.to_json()?.as_bytes());
        let desc = serde_json::json!({
            "mesh": self.mesh,
            "n_rays": self.n_rays,
            "grid": self.grid,
            "options": { "tolerance": self.options.tolerance, "max_iters": self.options.max_iters },
            "table_sha256": table,
        });
        Ok(sha256_hex(desc.to_string().as_bytes()))
    }

    pub fn case(&self, fields: CaseFields, gas: GasMixture) -> FurnaceCase {
        FurnaceCase {
            mesh: self.mesh,
            eps: fields.eps,
            t0: fields.t0,
            t_gas: fields.t_gas,
            gas,
            grid: self.grid,
            table: self.table.clone(),
        }
    }
}

pub fn realize_case(row: &[f64], dist: &CaseDistribution, setup: &SolverSetup) -> Result<FurnaceCase> {
    Ok(setup.case(realize_fields(row, dist, &setup.mesh)?, dist.gas))
}

/// Solved cases of one split, flattened row-major by sample.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawSplit {
    pub count: usize,
    pub eps: Vec<f64>,
    pub t0: Vec<f64>,
    pub t_gas: Vec<f64>,
    pub h: Vec<f64>,
}

impl RawSplit {
    pub fn fields(&self, i: usize, mesh: &FurnaceMesh) -> CaseFields {
        let (p, c) = (mesh.boundary_count(), mesh.cell_count());
        CaseFields {
            eps: self.eps[i * p..(i + 1) * p].to_vec(),
            t0: self.t0[i * p..(i + 1) * p].to_vec(),
            t_gas: self.t_gas[i * c..(i + 1) * c].to_vec(),
        }
    }

    pub fn h(&self, i: usize, mesh: &FurnaceMesh) -> &[f64] {
        let p = mesh.boundary_count();
        &self.h[i * p..(i + 1) * p]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub distribution: CaseDistribution,
    pub mesh: FurnaceMesh,
    pub n_rays: usize,
    pub grid: BandGrid,
    pub solver_config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub provenance: Provenance,
    pub train: RawSplit,
    pub test: RawSplit,
}

/// Solves every row of a design; output order follows the design.
pub fn solve_design(design: &SampleMatrix, dist: &CaseDistribution, setup: &SolverSetup, solver: &Solver, index_offset: usize) -> Result<RawSplit> {
    let solved: Vec<(CaseFields, Vec<f64>)> = (0..design.n)
        .into_par_iter()
        .map(|i| {
            let wrap = |e: CoreError| CoreError::Sample { index: index_offset + i, source: Box::new(e) };
            let case = realize_case(design.row(i), dist, setup).map_err(wrap)?;
            let sol = solver.solve(&case, &setup.options).map_err(wrap)?;
            Ok((CaseFields { eps: case.eps, t0: case.t0, t_gas: case.t_gas }, sol.irradiation.h))
        })
        .collect::<Result<_>>()?;
    let mut split = RawSplit { count: design.n, ..Default::default() };
    for (f, h) in solved {
        split.eps.extend(f.eps);
        split.t0.extend(f.t0);
        split.t_gas.extend(f.t_gas);
        split.h.extend(h);
    }
    Ok(split)
}

/// Train and test sets from two independent designs seeded `seed` and
/// `seed + 1`. Sample indices in errors count train first, then test.
pub fn generate_dataset(dist: &CaseDistribution, n_train: usize, n_test: usize, seed: u64, setup: &SolverSetup) -> Result<RawDataset> {
    dist.validate()?;
    if n_train < 1 || n_test < 1 {
        return Err(CoreError::config("dataset", "n_train and n_test must be >= 1"));
    }
    let solver = Solver::new(&setup.mesh, &make_quadrature(setup.n_rays)?)?;
    let train_design = lhs(n_train, dist.dims(), seed)?;
    let test_design = lhs(n_test, dist.dims(), seed.wrapping_add(1))?;
    debug_assert!(train_design.is_stratified() && test_design.is_stratified());
    let train = solve_design(&train_design, dist, setup, &solver, 0)?;
    let test = solve_design(&test_design, dist, setup, &solver, n_train)?;
    Ok(RawDataset {
        provenance: Provenance {
            seed,
            distribution: dist.clone(),
            mesh: setup.mesh,
            n_rays: setup.n_rays,
            grid: setup.grid,
            solver_config_hash: setup.config_hash()?,
        },
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lhs_small_examples() {
        let m = lhs(4, 2, 7).unwrap();
        for j in 0..2 {
            let mut strata: Vec<usize> = (0..4).map(|i| (m.get(i, j) * 4.0).floor() as usize).collect();
            strata.sort();
            assert_eq!(strata, vec![0, 1, 2, 3]);
        }
        let one = lhs(1, 5, 3).unwrap();
        assert_eq!(one.values.len(), 5);
        assert!(one.values.iter().all(|v| (0.0..1.0).contains(v)));
        assert!(lhs(0, 3, 1).is_err());
        assert!(lhs(3, 0, 1).is_err());
    }

    #[test]
    fn lhs_seeds() {
        assert_eq!(lhs(10, 3, 42).unwrap(), lhs(10, 3, 42).unwrap());
        let strata = |seed| {
            let m = lhs(10, 3, seed).unwrap();
            (0..3)
                .map(|j| (0..10).map(|i| (m.get(i, j) * 10.0) as usize).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        };
        let designs: std::collections::HashSet<_> = (0..100).map(strata).collect();
        assert_eq!(designs.len(), 100);
    }

    #[test]
    fn stratum_edges() {
        assert!(SampleMatrix { n: 3, d: 1, values: vec![0.0, 1.0 / 3.0, 2.0 / 3.0] }.is_stratified());
        assert!(!SampleMatrix { n: 2, d: 1, values: vec![0.1, 0.2] }.is_stratified());
        assert!(!SampleMatrix { n: 1, d: 1, values: vec![1.0] }.is_stratified());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn lhs_is_stratified(n in 1usize..200, d in 1usize..12, seed in any::<u64>()) {
            let m = lhs(n, d, seed).unwrap();
            prop_assert!(m.is_stratified());
            prop_assert!(m.values.iter().all(|v| (0.0..1.0).contains(v)));
        }

        #[test]
        fn realized_fields_in_range(seed in any::<u64>()) {
            let dist = CaseDistribution::default();
            let mesh = FurnaceMesh::new(30, 10, 3.0, 1.0).unwrap();
            let m = lhs(3, dist.dims(), seed).unwrap();
            for i in 0..3 {
                let f = realize_fields(m.row(i), &dist, &mesh).unwrap();
                let within = |v: &[f64], [lo, hi]: [f64; 2]| v.iter().all(|x| *x >= lo - 1e-12 && *x <= hi + 1e-12);
                prop_assert!(within(&f.eps, dist.eps_range));
                prop_assert!(within(&f.t0, dist.t0_range));
                prop_assert!(within(&f.t_gas, dist.t_range));
            }
        }
    }

    #[test]
    fn endpoint_and_midpoint_rows() {
        let dist = CaseDistribution::default();
        assert_eq!(dist.dims(), 50);
        let mesh = FurnaceMesh::new(30, 10, 3.0, 1.0).unwrap();
        let f = realize_fields(&vec![0.0; 50], &dist, &mesh).unwrap();
        assert!(f.eps.iter().all(|&e| e == 0.3));
        assert!(f.t0.iter().all(|&t| t == 800.0));
        assert!(f.t_gas.iter().all(|&t| t == 900.0));
        let f = realize_fields(&vec![0.5; 50], &dist, &mesh).unwrap();
        assert!(f.eps.iter().all(|&e| (e - 0.65).abs() < 1e-15));
        assert!(f.t0.iter().all(|&t| t == 1300.0));
        assert!(f.t_gas.iter().all(|&t| t == 1450.0));
        assert!(matches!(realize_fields(&[0.5; 49], &dist, &mesh), Err(CoreError::Dimension(_))));
    }

    #[test]
    fn bilinear_domain_by_hand() {
        let dist = CaseDistribution { domain_controls: [2, 2], t_range: [1.0, 2.0], ..Default::default() };
        let mesh = FurnaceMesh::new(5, 3, 5.0, 3.0).unwrap();
        // grid (gx, gy): (0,0)=0, (1,0)=0, (0,1)=1, (1,1)=1 in unit-cube terms
        let mut row = vec![0.5; 8 * dist.wall_controls];
        row.extend([0.0, 0.0, 1.0, 1.0]);
        let f = realize_fields(&row, &dist, &mesh).unwrap();
        // T = 1 + v where v = iy / (ny - 1)
        let t = |ix: usize, iy: usize| f.t_gas[iy * 5 + ix];
        assert!((t(0, 0) - 1.0).abs() < 1e-15);
        assert!((t(2, 1) - 1.5).abs() < 1e-15);
        assert!((t(4, 2) - 2.0).abs() < 1e-15);

        let mut row = vec![0.5; 8 * dist.wall_controls];
        row.extend([0.0, 1.0, 0.0, 1.0]);
        let f = realize_fields(&row, &dist, &mesh).unwrap();
        assert!((f.t_gas[1] - 1.25).abs() < 1e-15);

        let mut row = vec![0.5; 8 * dist.wall_controls];
        row.extend([0.2, 0.6, 0.4, 1.0]);
        let f = realize_fields(&row, &dist, &mesh).unwrap();
        let (u, v) = (3.0 / 4.0, 1.0 / 2.0);
        let hand = 1.0 + (1.0 - u) * (1.0 - v) * 0.2 + u * (1.0 - v) * 0.6 + (1.0 - u) * v * 0.4 + u * v * 1.0;
        assert!((f.t_gas[5 + 3] - hand).abs() < 1e-14);
    }

    #[test]
    fn wall_profile_interpolates_controls() {
        let dist = CaseDistribution { wall_controls: 3, ..Default::default() };
        let mesh = FurnaceMesh::new(5, 2, 5.0, 2.0).unwrap();
        let mut row = vec![0.0; dist.dims()];
        row[0..3].copy_from_slice(&[0.0, 1.0, 0.0]);
        let f = realize_fields(&row, &dist, &mesh).unwrap();
        let want = [0.3, 0.65, 1.0, 0.65, 0.3];
        for (a, b) in f.eps[..5].iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    fn tiny_setup() -> SolverSetup {
        let grid = BandGrid::new(150.0, 9300.0, 228.75).unwrap();
        SolverSetup {
            mesh: FurnaceMesh::new(30, 10, 3.0, 1.0).unwrap(),
            n_rays: 4,
            grid,
            table: Arc::new(AbsorptionTable::synthetic(&grid)),
            options: SolveOptions::default(),
        }
    }

    #[test]
    fn small_dataset_shapes_and_determinism() {
        let setup = tiny_setup();
        let dist = CaseDistribution::default();
        let a = generate_dataset(&dist, 2, 1, 9, &setup).unwrap();
        assert_eq!((a.train.count, a.test.count), (2, 1));
        assert_eq!(a.train.eps.len() + a.train.t0.len() + a.train.t_gas.len(), 2 * 460);
        assert_eq!(a.train.h.len(), 2 * 80);
        assert_eq!(a.test.h.len(), 80);
        assert!(a.train.h.iter().chain(&a.test.h).all(|&h| h > 0.0));
        let b = generate_dataset(&dist, 2, 1, 9, &setup).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&dist, 2, 3, 9, &setup).unwrap();
        assert_eq!(a.train, c.train);
    }

    #[test]
    fn failing_sample_is_identified() {
        let mut setup = tiny_setup();
        setup.options.max_iters = 1;
        let err = generate_dataset(&CaseDistribution::default(), 2, 1, 0, &setup).unwrap_err();
        match err {
            CoreError::Sample { index, source } => {
                assert!(index < 3);
                assert!(matches!(*source, CoreError::NonConvergence { .. }));
            }
            other => panic!("{other}"),
        }
    }
}
