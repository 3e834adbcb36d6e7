//! Rectangular enclosure geometry and grid ray traversal.
//!
//! Cells are indexed row-major from the south-west corner,
//! `cell = iy * nx + ix`. Boundary points sit at the centers of wall faces
//! and are numbered counter-clockwise starting at the west end of the south
//! wall.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Distance from the boundary tolerated for points that should lie on it.
pub const ON_BOUNDARY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FurnaceMesh {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wall {
    South,
    East,
    North,
    West,
}

impl Wall {
    pub const ALL: [Wall; 4] = [Wall::South, Wall::East, Wall::North, Wall::West];

    pub fn inward_normal(self) -> [f64; 2] {
        match self {
            Wall::South => [0.0, 1.0],
            Wall::East => [-1.0, 0.0],
            Wall::North => [0.0, -1.0],
            Wall::West => [1.0, 0.0],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Wall::South => "south",
            Wall::East => "east",
            Wall::North => "north",
            Wall::West => "west",
        }
    }
}

impl std::str::FromStr for Wall {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Wall::ALL
            .into_iter()
            .find(|w| w.name() == s)
            .ok_or_else(|| CoreError::config("wall", format!("unknown wall `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub index: usize,
    pub wall: Wall,
    pub position: [f64; 2],
    pub normal: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RayPath {
    pub origin: usize,
    pub direction: [f64; 2],
    /// `(cell, length)` in traversal order, lengths > 0.
    pub segments: Vec<(usize, f64)>,
    pub exit: [f64; 2],
    pub terminal: usize,
}

impl RayPath {
    pub fn length(&self) -> f64 {
        self.segments.iter().map(|s| s.1).sum()
    }
}

impl FurnaceMesh {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        let m = Self { nx, ny, lx, ly };
        m.validate()?;
        Ok(m)
    }

    /// 120 × 20 cells over 12 m × 2 m.
    pub fn furnace_default() -> Self {
        Self { nx: 120, ny: 20, lx: 12.0, ly: 2.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 1 || self.ny < 1 {
            return Err(CoreError::config("mesh", format!("nx, ny must be >= 1, got {}x{}", self.nx, self.ny)));
        }
        if !(self.lx > 0.0 && self.ly > 0.0 && self.lx.is_finite() && self.ly.is_finite()) {
            return Err(CoreError::config("mesh", format!("lx, ly must be > 0, got {}x{}", self.lx, self.ly)));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    pub fn cell_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn boundary_count(&self) -> usize {
        2 * (self.nx + self.ny)
    }

    /// First global index and point count of a wall.
    pub fn wall_range(&self, wall: Wall) -> std::ops::Range<usize> {
        let (nx, ny) = (self.nx, self.ny);
        match wall {
            Wall::South => 0..nx,
            Wall::East => nx..nx + ny,
            Wall::North => nx + ny..2 * nx + ny,
            Wall::West => 2 * nx + ny..2 * (nx + ny),
        }
    }

    pub fn wall_of(&self, index: usize) -> Wall {
        Wall::ALL
            .into_iter()
            .find(|&w| self.wall_range(w).contains(&index))
            .expect("boundary index in range")
    }

    /// Boundary point `index`; panics when out of range.
    pub fn boundary_point(&self, index: usize) -> BoundaryPoint {
        let wall = self.wall_of(index);
        let k = (index - self.wall_range(wall).start) as f64 + 0.5;
        let (dx, dy) = (self.dx(), self.dy());
        let position = match wall {
            Wall::South => [k * dx, 0.0],
            Wall::East => [self.lx, k * dy],
            Wall::North => [self.lx - k * dx, self.ly],
            Wall::West => [0.0, self.ly - k * dy],
        };
        BoundaryPoint { index, wall, position, normal: wall.inward_normal() }
    }

    /// Cell row-major index containing the point `(ix, iy)`.
    pub fn cell_index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }
}

pub fn boundary_points(mesh: &FurnaceMesh) -> Vec<BoundaryPoint> {
    (0..mesh.boundary_count()).map(|i| mesh.boundary_point(i)).collect()
}

/// Faces of one wall whose closed interval contains coordinate `s`, where
/// `s` runs along the wall in counter-clockwise order.
fn faces_containing(s: f64, h: f64, n: usize) -> impl Iterator<Item = usize> {
    let t = s / h;
    let r = t.round();
    let on_edge = (t - r).abs() * h <= ON_BOUNDARY_TOL;
    let (a, b) = if on_edge {
        (r as i64 - 1, r as i64)
    } else {
        let f = t.floor() as i64;
        (f, f)
    };
    let n = n as i64;
    [a, b].into_iter().filter(move |&f| (0..n).contains(&f)).map(|f| f as usize)
}

/// Boundary point whose face contains `location`; face-edge ties go to the
/// lower index.
pub fn exit_point_rounding(mesh: &FurnaceMesh, location: [f64; 2]) -> Result<usize> {
    let [x, y] = location;
    let (lx, ly) = (mesh.lx, mesh.ly);
    let tol = ON_BOUNDARY_TOL;
    let inside = x >= -tol && x <= lx + tol && y >= -tol && y <= ly + tol;
    if !inside {
        return Err(CoreError::Geometry(format!("point ({x}, {y}) is outside the enclosure")));
    }
    let (dx, dy) = (mesh.dx(), mesh.dy());
    let mut best: Option<usize> = None;
    let mut take = |wall: Wall, s: f64, h: f64, n: usize| {
        let start = mesh.wall_range(wall).start;
        for f in faces_containing(s, h, n) {
            best = Some(best.map_or(start + f, |b| b.min(start + f)));
        }
    };
    if y.abs() <= tol {
        take(Wall::South, x, dx, mesh.nx);
    }
    if (x - lx).abs() <= tol {
        take(Wall::East, y, dy, mesh.ny);
    }
    if (y - ly).abs() <= tol {
        take(Wall::North, lx - x, dx, mesh.nx);
    }
    if x.abs() <= tol {
        take(Wall::West, ly - y, dy, mesh.ny);
    }
    best.ok_or_else(|| {
        CoreError::Geometry(format!("point ({x}, {y}) is more than {tol} m from the boundary"))
    })
}

/// Walls on which `location` lies (two at a corner).
fn walls_at(mesh: &FurnaceMesh, [x, y]: [f64; 2]) -> Vec<Wall> {
    let tol = ON_BOUNDARY_TOL;
    let mut walls = Vec::with_capacity(2);
    if y.abs() <= tol {
        walls.push(Wall::South);
    }
    if (x - mesh.lx).abs() <= tol {
        walls.push(Wall::East);
    }
    if (y - mesh.ly).abs() <= tol {
        walls.push(Wall::North);
    }
    if x.abs() <= tol {
        walls.push(Wall::West);
    }
    walls
}

/// First cell index along one axis for a ray starting at coordinate `p`.
fn start_cell(p: f64, h: f64, n: usize, d: f64) -> usize {
    let t = p / h;
    let mut i = t.floor();
    if d < 0.0 && (t - t.round()).abs() * h <= ON_BOUNDARY_TOL {
        i = t.round() - 1.0;
    }
    i.clamp(0.0, (n - 1) as f64) as usize
}

/// Distance along `d` from `p` to the boundary of `[0, l]`.
fn axis_exit(p: f64, d: f64, l: f64) -> f64 {
    if d > 0.0 {
        (l - p) / d
    } else if d < 0.0 {
        -p / d
    } else {
        f64::INFINITY
    }
}

/// Marches a ray from a wall point through the grid (DDA) to the wall it
/// hits. Segments shorter than 1e-12 of a cell size, which occur only when
/// the ray passes through a cell corner, are folded into the next segment.
pub fn traverse_ray(mesh: &FurnaceMesh, origin: [f64; 2], direction: [f64; 2]) -> Result<RayPath> {
    let origin_index = exit_point_rounding(mesh, origin)?;
    let norm = direction[0].hypot(direction[1]);
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(CoreError::Geometry(format!("invalid ray direction {direction:?}")));
    }
    let d = [direction[0] / norm, direction[1] / norm];
    let cosines: Vec<f64> = walls_at(mesh, origin)
        .into_iter()
        .map(|w| {
            let n = w.inward_normal();
            d[0] * n[0] + d[1] * n[1]
        })
        .collect();
    if cosines.iter().any(|&c| c <= -1e-12) {
        return Err(CoreError::Geometry(format!("ray direction {d:?} points out of the enclosure")));
    }
    if cosines.iter().all(|&c| c < 1e-12) {
        return Err(CoreError::Geometry(format!("ray direction {d:?} is tangent to the wall")));
    }
    let [x0, y0] = origin;
    let chord = axis_exit(x0, d[0], mesh.lx).min(axis_exit(y0, d[1], mesh.ly)).max(0.0);

    let (dx, dy) = (mesh.dx(), mesh.dy());
    let mut ix = start_cell(x0, dx, mesh.nx, d[0]) as i64;
    let mut iy = start_cell(y0, dy, mesh.ny, d[1]) as i64;
    let step_x: i64 = if d[0] > 0.0 { 1 } else { -1 };
    let step_y: i64 = if d[1] > 0.0 { 1 } else { -1 };
    let next_edge = |i: i64, h: f64, p: f64, di: f64| -> f64 {
        if di > 0.0 {
            ((i + 1) as f64 * h - p) / di
        } else if di < 0.0 {
            (i as f64 * h - p) / di
        } else {
            f64::INFINITY
        }
    };
    let mut t_x = next_edge(ix, dx, x0, d[0]);
    let mut t_y = next_edge(iy, dy, y0, d[1]);
    let dt_x = if d[0] != 0.0 { dx / d[0].abs() } else { f64::INFINITY };
    let dt_y = if d[1] != 0.0 { dy / d[1].abs() } else { f64::INFINITY };
    let min_seg = 1e-12 * dx.min(dy);

    let mut segments = Vec::with_capacity(mesh.nx + mesh.ny);
    let mut t = 0.0;
    let mut carry = 0.0;
    loop {
        let t_next = t_x.min(t_y).min(chord);
        let len = t_next - t + carry;
        if len >= min_seg {
            debug_assert!((0..mesh.nx as i64).contains(&ix) && (0..mesh.ny as i64).contains(&iy));
            segments.push((mesh.cell_index(ix as usize, iy as usize), len));
            carry = 0.0;
        } else {
            carry = len.max(0.0);
        }
        t = t_next;
        if t_next >= chord {
            break;
        }
        if t_x <= t_y {
            ix += step_x;
            t_x += dt_x;
        } else {
            iy += step_y;
            t_y += dt_y;
        }
        if !(0..mesh.nx as i64).contains(&ix) || !(0..mesh.ny as i64).contains(&iy) {
            break;
        }
    }
    if carry > 0.0 {
        if let Some(last) = segments.last_mut() {
            last.1 += carry;
        }
    }
    let exit = [
        (x0 + chord * d[0]).clamp(0.0, mesh.lx),
        (y0 + chord * d[1]).clamp(0.0, mesh.ly),
    ];
    let terminal = exit_point_rounding(mesh, exit)?;
    Ok(RayPath { origin: origin_index, direction: d, segments, exit, terminal })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table1() -> FurnaceMesh {
        FurnaceMesh::furnace_default()
    }

    #[test]
    fn table1_boundary_layout() {
        let m = table1();
        let pts = boundary_points(&m);
        assert_eq!(pts.len(), 280);
        assert!((pts[0].position[0] - 0.05).abs() < 1e-12 && pts[0].position[1] == 0.0);
        assert_eq!(pts[119].wall, Wall::South);
        assert_eq!(pts[120].wall, Wall::East);
        assert_eq!(pts[140].wall, Wall::North);
        assert_eq!(pts[260].wall, Wall::West);
        assert_eq!(pts[0].normal, [0.0, 1.0]);
        for p in &pts {
            assert_eq!(p.normal, p.wall.inward_normal());
            assert_eq!(exit_point_rounding(&m, p.position).unwrap(), p.index);
        }
    }

    #[test]
    fn single_cell_has_one_point_per_wall() {
        let m = FurnaceMesh::new(1, 1, 1.0, 1.0).unwrap();
        let walls: Vec<_> = boundary_points(&m).iter().map(|p| p.wall).collect();
        assert_eq!(walls, Wall::ALL);
    }

    #[test]
    fn invalid_meshes() {
        assert!(FurnaceMesh::new(0, 3, 1.0, 1.0).is_err());
        assert!(FurnaceMesh::new(3, 3, -1.0, 1.0).is_err());
        assert!(FurnaceMesh::new(3, 3, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn ordering_is_counter_clockwise() {
        for (nx, ny) in [(1, 1), (3, 2), (120, 20)] {
            let m = FurnaceMesh::new(nx, ny, nx as f64, 0.7 * ny as f64).unwrap();
            let p = boundary_points(&m);
            let area2: f64 = (0..p.len())
                .map(|i| {
                    let (a, b) = (p[i].position, p[(i + 1) % p.len()].position);
                    a[0] * b[1] - b[0] * a[1]
                })
                .sum();
            assert!(area2 > 0.0);
        }
    }

    #[test]
    fn rounding_examples() {
        let m = table1();
        assert_eq!(exit_point_rounding(&m, [0.05, 0.0]).unwrap(), 0);
        assert_eq!(exit_point_rounding(&m, [0.1, 0.0]).unwrap(), 0);
        assert_eq!(exit_point_rounding(&m, [0.0, 1.95]).unwrap(), 260);
        assert_eq!(exit_point_rounding(&m, [0.0, 0.05]).unwrap(), 279);
        assert_eq!(exit_point_rounding(&m, [0.0, 0.0]).unwrap(), 0);
        assert_eq!(exit_point_rounding(&m, [12.0, 0.0]).unwrap(), 119);
        assert_eq!(exit_point_rounding(&m, [12.0, 2.0]).unwrap(), 139);
        assert_eq!(exit_point_rounding(&m, [11.9, 2.0]).unwrap(), 140);
        assert_eq!(exit_point_rounding(&m, [0.0, 2.0]).unwrap(), 259);
        assert!(exit_point_rounding(&m, [5.0, 1.0]).is_err());
        assert!(exit_point_rounding(&m, [5.0, -1e-6]).is_err());
        assert!(exit_point_rounding(&m, [5.0, 2.0 + 5e-10]).is_ok());
    }

    #[test]
    fn straight_up_from_south() {
        let m = table1();
        let p = m.boundary_point(7);
        let r = traverse_ray(&m, p.position, [0.0, 1.0]).unwrap();
        assert_eq!(r.segments.len(), 20);
        for (k, &(cell, len)) in r.segments.iter().enumerate() {
            assert_eq!(cell, k * 120 + 7);
            assert!((len - 0.1).abs() < 1e-12);
        }
        assert!((r.length() - 2.0).abs() < 1e-12);
        assert_eq!(m.wall_of(r.terminal), Wall::North);
        assert_eq!(r.terminal, 140 + 119 - 7);
    }

    #[test]
    fn single_cell_diagonal() {
        let m = FurnaceMesh::new(1, 1, 1.0, 1.0).unwrap();
        let r = traverse_ray(&m, [0.5, 0.0], [1.0, 2.0]).unwrap();
        assert_eq!(r.segments.len(), 1);
        assert!((r.length() - 0.5f64.hypot(1.0)).abs() < 1e-12);
        // exits through the north-east corner; the tie goes to the east point
        assert_eq!(r.terminal, 1);
    }

    #[test]
    fn degenerate_directions() {
        let m = table1();
        assert!(traverse_ray(&m, [0.05, 0.0], [1.0, 0.0]).is_err());
        assert!(traverse_ray(&m, [0.05, 0.0], [0.0, -1.0]).is_err());
        assert!(traverse_ray(&m, [0.05, 0.0], [0.0, 0.0]).is_err());
        assert!(traverse_ray(&m, [5.0, 1.0], [0.0, 1.0]).is_err());
    }

    #[test]
    fn corner_crossing_has_no_zero_segments() {
        let m = FurnaceMesh::new(4, 4, 4.0, 4.0).unwrap();
        let r = traverse_ray(&m, [0.0, 0.0], [1.0, 1.0]).unwrap();
        let cells: Vec<_> = r.segments.iter().map(|s| s.0).collect();
        assert_eq!(cells, vec![0, 5, 10, 15]);
        assert!((r.length() - 32f64.sqrt()).abs() < 1e-9);
    }

    /// Chord from the two wall intersections of the line, computed by
    /// clipping against all four sides.
    fn chord_oracle(m: &FurnaceMesh, o: [f64; 2], d: [f64; 2]) -> f64 {
        let mut hits = Vec::new();
        for (axis, value) in [(0, 0.0), (0, m.lx), (1, 0.0), (1, m.ly)] {
            if d[axis] == 0.0 {
                continue;
            }
            let t = (value - o[axis]) / d[axis];
            let other = o[1 - axis] + t * d[1 - axis];
            let l = if axis == 0 { m.ly } else { m.lx };
            if t > 1e-12 && other >= -1e-12 && other <= l + 1e-12 {
                hits.push(t);
            }
        }
        hits.into_iter().fold(f64::INFINITY, f64::min)
    }

    fn inward_direction(normal: [f64; 2], theta: f64) -> [f64; 2] {
        let (s, c) = theta.sin_cos();
        [normal[0] * c - normal[1] * s, normal[0] * s + normal[1] * c]
    }

    proptest! {
        #[test]
        fn chord_and_coverage(index in 0usize..280, theta in -1.55f64..1.55) {
            let m = table1();
            let p = m.boundary_point(index);
            let d = inward_direction(p.normal, theta);
            let r = traverse_ray(&m, p.position, d).unwrap();
            let chord = chord_oracle(&m, p.position, r.direction);
            prop_assert!((r.length() - chord).abs() < 1e-9, "{} vs {}", r.length(), chord);
            let mut seen = std::collections::HashSet::new();
            for &(cell, len) in &r.segments {
                prop_assert!(cell < m.cell_count());
                prop_assert!(len > 0.0);
                prop_assert!(seen.insert(cell));
            }
            let exit = r.exit;
            prop_assert!(exit[0].abs() < 1e-9 || (exit[0] - m.lx).abs() < 1e-9
                || exit[1].abs() < 1e-9 || (exit[1] - m.ly).abs() < 1e-9);
        }

        #[test]
        fn reversal_gives_same_cells(index in 0usize..280, theta in -1.5f64..1.5) {
            let m = table1();
            let p = m.boundary_point(index);
            let fwd = traverse_ray(&m, p.position, inward_direction(p.normal, theta)).unwrap();
            let back = traverse_ray(&m, fwd.exit, [-fwd.direction[0], -fwd.direction[1]]).unwrap();
            prop_assert_eq!(fwd.segments.len(), back.segments.len());
            for (a, b) in fwd.segments.iter().zip(back.segments.iter().rev()) {
                prop_assert_eq!(a.0, b.0);
                prop_assert!((a.1 - b.1).abs() < 1e-9);
            }
        }
    }
}
