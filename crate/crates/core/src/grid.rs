//! Uniform cell-centered grid, scalar and vector fields, and the domain mask.
//!
//! All fields are stored row-major with `j` (the y index) as the slow axis:
//! the value of cell `(i, j)` lives at `j * nx + i`.

use crate::error::{Error, Result};

/// Uniform Cartesian grid described by its cell counts, cell sizes and the
/// coordinates of the lower-left cell center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid2D {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub x0: f64,
    pub y0: f64,
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64, x0: f64, y0: f64) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::Config(format!("grid must be at least 3x3, got {nx}x{ny}")));
        }
        if !(dx > 0.0 && dy > 0.0 && dx.is_finite() && dy.is_finite()) {
            return Err(Error::Config(format!("cell sizes must be positive, got dx={dx} dy={dy}")));
        }
        if !(x0.is_finite() && y0.is_finite()) {
            return Err(Error::Config("grid origin must be finite".into()));
        }
        Ok(Self { nx, ny, dx, dy, x0, y0 })
    }

    /// Grid covering `[xmin, xmax] x [ymin, ymax]` with square cells of side `h`.
    /// The extents are rounded to a whole number of cells.
    pub fn covering(xmin: f64, xmax: f64, ymin: f64, ymax: f64, h: f64) -> Result<Self> {
        let nx = ((xmax - xmin) / h).round() as usize;
        let ny = ((ymax - ymin) / h).round() as usize;
        Self::new(nx, ny, h, h, xmin + 0.5 * h, ymin + 0.5 * h)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn ij(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    #[inline]
    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (self.x0 + i as f64 * self.dx, self.y0 + j as f64 * self.dy)
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    /// Index of the cell containing the point, or `None` outside the grid.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fi = ((x - self.x0) / self.dx + 0.5).floor();
        let fj = ((y - self.y0) / self.dy + 0.5).floor();
        if fi < 0.0 || fj < 0.0 || fi >= self.nx as f64 || fj >= self.ny as f64 {
            return None;
        }
        Some((fi as usize, fj as usize))
    }

    /// 4-neighbours of a cell that lie inside the grid.
    pub fn neighbours4(&self, i: usize, j: usize) -> impl Iterator<Item = (usize, usize)> {
        let (nx, ny) = (self.nx as isize, self.ny as isize);
        let (i, j) = (i as isize, j as isize);
        [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)]
            .into_iter()
            .filter(move |&(a, b)| a >= 0 && b >= 0 && a < nx && b < ny)
            .map(|(a, b)| (a as usize, b as usize))
    }

    pub(crate) fn check_same(&self, other: &Grid2D, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::Structural(format!("{what}: grids differ ({self:?} vs {other:?})")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub grid: Grid2D,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid2D) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid2D, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()] }
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (x, y) = grid.cell_center(i, j);
                values.push(f(x, y));
            }
        }
        Self { grid, values }
    }

    pub fn from_values(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Structural(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.grid.idx(i, j);
        self.values[k] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Sets every non-Interior cell to zero.
    pub fn zero_outside(&mut self, mask: &DomainMask) {
        for (v, k) in self.values.iter_mut().zip(&mask.kind) {
            if *k != CellKind::Interior {
                *v = 0.0;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub grid: Grid2D,
    pub ux: Vec<f64>,
    pub uy: Vec<f64>,
}

impl VectorField {
    pub fn zeros(grid: Grid2D) -> Self {
        Self::constant(grid, 0.0, 0.0)
    }

    pub fn constant(grid: Grid2D, ux: f64, uy: f64) -> Self {
        Self { grid, ux: vec![ux; grid.len()], uy: vec![uy; grid.len()] }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> (f64, f64) {
        let k = self.grid.idx(i, j);
        (self.ux[k], self.uy[k])
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: (f64, f64)) {
        let k = self.grid.idx(i, j);
        self.ux[k] = v.0;
        self.uy[k] = v.1;
    }

    pub fn norm_at(&self, k: usize) -> f64 {
        self.ux[k].hypot(self.uy[k])
    }

    pub fn is_finite(&self) -> bool {
        self.ux.iter().chain(&self.uy).all(|v| v.is_finite())
    }

    /// Componentwise sum of two fields on the same grid.
    pub fn add(&self, other: &VectorField) -> Result<VectorField> {
        self.grid.check_same(&other.grid, "vector sum")?;
        Ok(VectorField {
            grid: self.grid,
            ux: self.ux.iter().zip(&other.ux).map(|(a, b)| a + b).collect(),
            uy: self.uy.iter().zip(&other.uy).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn scaled(&self, s: f64) -> VectorField {
        VectorField {
            grid: self.grid,
            ux: self.ux.iter().map(|v| v * s).collect(),
            uy: self.uy.iter().map(|v| v * s).collect(),
        }
    }

    /// Largest Euclidean norm over the Interior cells.
    pub fn max_norm(&self, mask: &DomainMask) -> f64 {
        mask.interior_indices().map(|k| self.norm_at(k)).fold(0.0, f64::max)
    }

    /// Largest absolute component over the Interior cells.
    pub fn max_component(&self, mask: &DomainMask) -> f64 {
        mask.interior_indices()
            .map(|k| self.ux[k].abs().max(self.uy[k].abs()))
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CellKind {
    Interior,
    Wall,
    Exit,
}

impl CellKind {
    pub fn to_char(self) -> char {
        match self {
            CellKind::Interior => '.',
            CellKind::Wall => '#',
            CellKind::Exit => 'E',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            '.' => Some(CellKind::Interior),
            '#' => Some(CellKind::Wall),
            'E' => Some(CellKind::Exit),
            _ => None,
        }
    }
}

/// Cell classification defining the walkable region, its walls and its exits.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainMask {
    pub grid: Grid2D,
    pub kind: Vec<CellKind>,
}

impl DomainMask {
    /// All cells Interior.
    pub fn open(grid: Grid2D) -> Self {
        Self { grid, kind: vec![CellKind::Interior; grid.len()] }
    }

    /// Interior surrounded by a one-cell ring of Wall.
    pub fn walled_box(grid: Grid2D) -> Self {
        let mut m = Self::open(grid);
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                if i == 0 || j == 0 || i == grid.nx - 1 || j == grid.ny - 1 {
                    m.set(i, j, CellKind::Wall);
                }
            }
        }
        m
    }

    pub fn from_kinds(grid: Grid2D, kind: Vec<CellKind>) -> Result<Self> {
        if kind.len() != grid.len() {
            return Err(Error::Structural(format!(
                "expected {} mask cells, got {}",
                grid.len(),
                kind.len()
            )));
        }
        let m = Self { grid, kind };
        m.validate()?;
        Ok(m)
    }

    /// Checks the mask invariants: some Interior cell exists and every Exit
    /// touches the Interior.
    pub fn validate(&self) -> Result<()> {
        if !self.kind.contains(&CellKind::Interior) {
            return Err(Error::Config("mask has no Interior cell".into()));
        }
        for k in 0..self.kind.len() {
            if self.kind[k] == CellKind::Exit {
                let (i, j) = self.grid.ij(k);
                if !self.grid.neighbours4(i, j).any(|(a, b)| self.get(a, b) == CellKind::Interior) {
                    return Err(Error::Config(format!("exit cell ({i},{j}) is not adjacent to the interior")));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> CellKind {
        self.kind[self.grid.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, c: CellKind) {
        let k = self.grid.idx(i, j);
        self.kind[k] = c;
    }

    #[inline]
    pub fn is_interior(&self, i: usize, j: usize) -> bool {
        self.get(i, j) == CellKind::Interior
    }

    pub fn interior_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.kind.iter().enumerate().filter(|(_, c)| **c == CellKind::Interior).map(|(k, _)| k)
    }

    pub fn count(&self, c: CellKind) -> usize {
        self.kind.iter().filter(|k| **k == c).count()
    }

    /// Interior cells with at least one 4-neighbour that is a Wall.
    pub fn is_wall_adjacent(&self, i: usize, j: usize) -> bool {
        self.is_interior(i, j) && self.grid.neighbours4(i, j).any(|(a, b)| self.get(a, b) == CellKind::Wall)
    }

    pub fn wall_adjacent_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for j in 0..self.grid.ny {
            for i in 0..self.grid.nx {
                if self.is_wall_adjacent(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Marks as Wall every cell whose center lies in the closed rectangle.
    pub fn fill_rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, c: CellKind) {
        for j in 0..self.grid.ny {
            for i in 0..self.grid.nx {
                let (x, y) = self.grid.cell_center(i, j);
                if x >= x0 && x <= x1 && y >= y0 && y <= y1 {
                    self.set(i, j, c);
                }
            }
        }
    }
}

/// `dx*dy` times the sum of the density over Interior cells.
pub fn total_mass(rho: &ScalarField, mask: &DomainMask) -> Result<f64> {
    rho.grid.check_same(&mask.grid, "total_mass")?;
    let s: f64 = mask.interior_indices().map(|k| rho.values[k]).sum();
    Ok(s * rho.grid.cell_area())
}

/// `(min, max)` of the density over Interior cells.
pub fn linf_range(rho: &ScalarField, mask: &DomainMask) -> Result<(f64, f64)> {
    rho.grid.check_same(&mask.grid, "linf_range")?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for k in mask.interior_indices() {
        lo = lo.min(rho.values[k]);
        hi = hi.max(rho.values[k]);
    }
    Ok((lo, hi))
}

/// Discrete total variation: jumps across faces shared by two Interior cells,
/// weighted by the face length.
pub fn discrete_tv(rho: &ScalarField, mask: &DomainMask) -> Result<f64> {
    rho.grid.check_same(&mask.grid, "discrete_tv")?;
    let g = rho.grid;
    let (mut sx, mut sy) = (0.0, 0.0);
    for j in 0..g.ny {
        for i in 0..g.nx {
            if !mask.is_interior(i, j) {
                continue;
            }
            if i + 1 < g.nx && mask.is_interior(i + 1, j) {
                sx += (rho.get(i + 1, j) - rho.get(i, j)).abs();
            }
            if j + 1 < g.ny && mask.is_interior(i, j + 1) {
                sy += (rho.get(i, j + 1) - rho.get(i, j)).abs();
            }
        }
    }
    Ok(g.dy * sx + g.dx * sy)
}
