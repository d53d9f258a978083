//! Quantities derived from the domain shape: travel-distance potential and
//! geodesic directions, wall distance and inward normals, wall discomfort,
//! and line-of-sight visibility.

use crate::error::{Error, Result};
use crate::grid::{CellKind, DomainMask, Grid2D, ScalarField, VectorField};
use crate::kernels::Kernel;

/// Distance-to-exit potential and its unit descent direction.
#[derive(Clone, Debug, PartialEq)]
pub struct EikonalResult {
    pub potential: ScalarField,
    pub geodesic: VectorField,
    /// Interior cells from which no exit can be reached.
    pub unreachable: Vec<(usize, usize)>,
}

/// Solves `|grad u| = 1` with `u = 0` on `seeds`, `u = +inf` on `blocked`,
/// by first-order upwind fast sweeping (four orderings, repeated until the
/// largest update falls below `1e-12` times the grid extent).
pub fn fast_sweep(grid: &Grid2D, seeds: &[bool], blocked: &[bool]) -> Vec<f64> {
    let (nx, ny) = (grid.nx, grid.ny);
    let (dx, dy) = (grid.dx, grid.dy);
    let mut u: Vec<f64> = seeds.iter().map(|s| if *s { 0.0 } else { f64::INFINITY }).collect();
    let tol = 1e-12 * (nx as f64 * dx).max(ny as f64 * dy);
    let orders: [(bool, bool); 4] = [(false, false), (true, false), (true, true), (false, true)];
    loop {
        let mut change = 0.0f64;
        for &(rev_i, rev_j) in &orders {
            for jj in 0..ny {
                let j = if rev_j { ny - 1 - jj } else { jj };
                for ii in 0..nx {
                    let i = if rev_i { nx - 1 - ii } else { ii };
                    let k = j * nx + i;
                    if seeds[k] || blocked[k] {
                        continue;
                    }
                    let a = {
                        let l = if i > 0 { u[k - 1] } else { f64::INFINITY };
                        let r = if i + 1 < nx { u[k + 1] } else { f64::INFINITY };
                        l.min(r)
                    };
                    let b = {
                        let d = if j > 0 { u[k - nx] } else { f64::INFINITY };
                        let t = if j + 1 < ny { u[k + nx] } else { f64::INFINITY };
                        d.min(t)
                    };
                    let cand = local_update(a, b, dx, dy);
                    if cand < u[k] {
                        let delta = if u[k].is_finite() { u[k] - cand } else { f64::INFINITY };
                        change = change.max(delta);
                        u[k] = cand;
                    }
                }
            }
        }
        if change <= tol {
            break;
        }
    }
    u
}

/// Upwind solution of `((t-a)/dx)^2 + ((t-b)/dy)^2 = 1` (or its one-sided reduction).
fn local_update(a: f64, b: f64, dx: f64, dy: f64) -> f64 {
    if !a.is_finite() && !b.is_finite() {
        return f64::INFINITY;
    }
    let one_sided = (a + dx).min(b + dy);
    if !a.is_finite() || !b.is_finite() || one_sided <= a.max(b) {
        return one_sided;
    }
    let (ia, ib) = (1.0 / (dx * dx), 1.0 / (dy * dy));
    let qa = ia + ib;
    let qb = -2.0 * (a * ia + b * ib);
    let qc = a * a * ia + b * b * ib - 1.0;
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return one_sided;
    }
    (-qb + disc.sqrt()) / (2.0 * qa)
}

/// Gradient by central differences over the cells accepted by `usable`,
/// falling back to one-sided differences when a neighbour is not usable.
fn gradient_at(
    grid: &Grid2D,
    u: &[f64],
    i: usize,
    j: usize,
    usable: &dyn Fn(usize, usize) -> bool,
) -> (f64, f64) {
    let c = u[grid.idx(i, j)];
    let diff = |lo: Option<(usize, usize)>, hi: Option<(usize, usize)>, h: f64| -> f64 {
        let lo = lo.filter(|&(a, b)| usable(a, b)).map(|(a, b)| u[grid.idx(a, b)]);
        let hi = hi.filter(|&(a, b)| usable(a, b)).map(|(a, b)| u[grid.idx(a, b)]);
        match (lo, hi) {
            (Some(l), Some(r)) => (r - l) / (2.0 * h),
            (Some(l), None) => (c - l) / h,
            (None, Some(r)) => (r - c) / h,
            (None, None) => 0.0,
        }
    };
    let gx = diff(
        i.checked_sub(1).map(|a| (a, j)),
        (i + 1 < grid.nx).then_some((i + 1, j)),
        grid.dx,
    );
    let gy = diff(
        j.checked_sub(1).map(|b| (i, b)),
        (j + 1 < grid.ny).then_some((i, j + 1)),
        grid.dy,
    );
    (gx, gy)
}

/// Travel-distance potential to the Exit cells and the geodesic field
/// `-grad(phi) / |grad(phi)|`.
pub fn solve_eikonal(mask: &DomainMask) -> Result<EikonalResult> {
    let g = mask.grid;
    if mask.count(CellKind::Exit) == 0 {
        return Err(Error::Config("eikonal solve needs at least one Exit cell".into()));
    }
    let seeds: Vec<bool> = mask.kind.iter().map(|k| *k == CellKind::Exit).collect();
    let blocked: Vec<bool> = mask.kind.iter().map(|k| *k == CellKind::Wall).collect();
    let phi = fast_sweep(&g, &seeds, &blocked);

    let usable = |a: usize, b: usize| mask.get(a, b) != CellKind::Wall && phi[g.idx(a, b)].is_finite();
    let mut geodesic = VectorField::zeros(g);
    let mut unreachable = Vec::new();
    for j in 0..g.ny {
        for i in 0..g.nx {
            let k = g.idx(i, j);
            match mask.kind[k] {
                CellKind::Wall => continue,
                CellKind::Interior if !phi[k].is_finite() => {
                    unreachable.push((i, j));
                    continue;
                }
                _ => {}
            }
            let (gx, gy) = gradient_at(&g, &phi, i, j, &usable);
            let n = gx.hypot(gy);
            let dir = if n > 1e-12 {
                (-gx / n, -gy / n)
            } else {
                steepest_neighbour(&g, &phi, i, j, &usable).unwrap_or((1.0, 0.0))
            };
            geodesic.set(i, j, dir);
        }
    }
    Ok(EikonalResult {
        potential: ScalarField { grid: g, values: phi },
        geodesic,
        unreachable,
    })
}

/// Unit direction towards the 8-neighbour with the steepest descent, if any.
fn steepest_neighbour(
    g: &Grid2D,
    u: &[f64],
    i: usize,
    j: usize,
    usable: &dyn Fn(usize, usize) -> bool,
) -> Option<(f64, f64)> {
    let c = u[g.idx(i, j)];
    let mut best: Option<(f64, (f64, f64))> = None;
    for dj in -1isize..=1 {
        for di in -1isize..=1 {
            if di == 0 && dj == 0 {
                continue;
            }
            let (a, b) = (i as isize + di, j as isize + dj);
            if a < 0 || b < 0 || a >= g.nx as isize || b >= g.ny as isize {
                continue;
            }
            let (a, b) = (a as usize, b as usize);
            if !usable(a, b) {
                continue;
            }
            let (vx, vy) = (di as f64 * g.dx, dj as f64 * g.dy);
            let len = vx.hypot(vy);
            let slope = (u[g.idx(a, b)] - c) / len;
            if slope < 0.0 && best.is_none_or(|(s, _)| slope < s) {
                best = Some((slope, (vx / len, vy / len)));
            }
        }
    }
    best.map(|(_, d)| d)
}

/// Ramp shape for the discomfort weight as a function of wall distance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RampShape {
    /// `max(0, 1 - d / w)`
    #[default]
    Linear,
    /// `1 - 3 s^2 + 2 s^3`, `s = clamp(d / w, 0, 1)`
    Smooth,
}

/// Wall distance, inward normals and discomfort parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct WallGeometry {
    pub dist: ScalarField,
    pub normal: VectorField,
    pub ramp_width: f64,
    pub lambda: f64,
    pub shape: RampShape,
}

impl WallGeometry {
    /// Discomfort weight at wall distance `d`.
    pub fn alpha(&self, d: f64) -> f64 {
        alpha(self.shape, d, self.ramp_width)
    }
}

pub fn alpha(shape: RampShape, d: f64, width: f64) -> f64 {
    if !d.is_finite() {
        return 0.0;
    }
    let s = (d / width).clamp(0.0, 1.0);
    match shape {
        RampShape::Linear => 1.0 - s,
        RampShape::Smooth => 1.0 - 3.0 * s * s + 2.0 * s * s * s,
    }
}

/// Distance to the walls (zero on wall-adjacent cells) and unit inward
/// normals inside the band `dist < ramp_width`.
pub fn wall_geometry(mask: &DomainMask, ramp_width: f64, lambda: f64) -> Result<WallGeometry> {
    wall_geometry_with(mask, ramp_width, lambda, RampShape::Linear)
}

pub fn wall_geometry_with(mask: &DomainMask, ramp_width: f64, lambda: f64, shape: RampShape) -> Result<WallGeometry> {
    let g = mask.grid;
    let h = g.dx.min(g.dy);
    if !(ramp_width >= h) {
        return Err(Error::Config(format!("ramp width {ramp_width} must be at least one cell ({h})")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("discomfort intensity must be nonnegative, got {lambda}")));
    }
    let mut dist = ScalarField::constant(g, f64::INFINITY);
    let mut normal = VectorField::zeros(g);
    if mask.count(CellKind::Wall) == 0 {
        return Ok(WallGeometry { dist, normal, ramp_width, lambda, shape });
    }
    let seeds: Vec<bool> = mask.kind.iter().map(|k| *k == CellKind::Wall).collect();
    let phi = fast_sweep(&g, &seeds, &vec![false; g.len()]);
    let all = |_: usize, _: usize| true;
    for j in 0..g.ny {
        for i in 0..g.nx {
            let k = g.idx(i, j);
            match mask.kind[k] {
                CellKind::Wall => {
                    dist.values[k] = 0.0;
                    continue;
                }
                CellKind::Exit => {
                    dist.values[k] = (phi[k] - h).max(0.0);
                    continue;
                }
                CellKind::Interior => {}
            }
            let d = if mask.is_wall_adjacent(i, j) { 0.0 } else { (phi[k] - h).max(0.0) };
            dist.values[k] = d;
            if d < ramp_width {
                let (gx, gy) = gradient_at(&g, &phi, i, j, &all);
                let n = gx.hypot(gy);
                if n >= 1e-9 {
                    normal.set(i, j, (gx / n, gy / n));
                }
            }
        }
    }
    Ok(WallGeometry { dist, normal, ramp_width, lambda, shape })
}

/// `delta = lambda * alpha(dist) * n` on Interior cells.
pub fn discomfort_field(wg: &WallGeometry) -> VectorField {
    let g = wg.dist.grid;
    let mut out = VectorField::zeros(g);
    for k in 0..g.len() {
        let s = wg.lambda * wg.alpha(wg.dist.values[k]);
        if s != 0.0 {
            out.ux[k] = s * wg.normal.ux[k];
            out.uy[k] = s * wg.normal.uy[k];
        }
    }
    out
}

/// Removes the part of `dir` that points into a wall on wall-adjacent cells
/// and renormalises, so that `dir · n >= 0` along the walls.
pub fn project_off_walls(dir: &VectorField, wg: &WallGeometry, mask: &DomainMask) -> Result<VectorField> {
    dir.grid.check_same(&mask.grid, "project_off_walls")?;
    let mut out = dir.clone();
    for (i, j) in mask.wall_adjacent_cells() {
        let (nx, ny) = wg.normal.get(i, j);
        if nx == 0.0 && ny == 0.0 {
            continue;
        }
        let (gx, gy) = dir.get(i, j);
        let d = gx * nx + gy * ny;
        if d >= 0.0 {
            continue;
        }
        let (px, py) = (gx - d * nx, gy - d * ny);
        let n = px.hypot(py);
        out.set(i, j, if n > 1e-12 { (px / n, py / n) } else { (nx, ny) });
    }
    Ok(out)
}

/// `nu = g + delta`, no renormalisation.
pub fn compose_nu(direction: &VectorField, delta: &VectorField) -> Result<VectorField> {
    direction.add(delta)
}

/// Line-of-sight test by ray marching between cell centers.
#[derive(Clone, Debug)]
pub struct VisibilityOracle<'a> {
    pub mask: &'a DomainMask,
    /// Sample spacing as a fraction of the smaller cell size.
    pub step_fraction: f64,
}

impl<'a> VisibilityOracle<'a> {
    pub fn new(mask: &'a DomainMask) -> Self {
        Self { mask, step_fraction: 0.25 }
    }

    /// True when no sample of the segment between the two cell centers falls
    /// in a Wall cell or outside the grid.
    pub fn visible(&self, a: (usize, usize), b: (usize, usize)) -> bool {
        // march from the smaller index so that the test is exactly symmetric
        let (a, b) = if (a.1, a.0) <= (b.1, b.0) { (a, b) } else { (b, a) };
        let g = &self.mask.grid;
        let (ax, ay) = g.cell_center(a.0, a.1);
        let (bx, by) = g.cell_center(b.0, b.1);
        let len = (bx - ax).hypot(by - ay);
        let step = self.step_fraction * g.dx.min(g.dy);
        let n = (len / step).ceil().max(1.0) as usize;
        for s in 0..=n {
            let sigma = s as f64 / n as f64;
            match g.locate(ax + sigma * (bx - ax), ay + sigma * (by - ay)) {
                Some((i, j)) if self.mask.get(i, j) != CellKind::Wall => {}
                _ => return false,
            }
        }
        true
    }
}

/// Interior cells visible from the Interior cell `x`.
pub fn visible_set(vis: &VisibilityOracle<'_>, x: (usize, usize)) -> Result<Vec<(usize, usize)>> {
    let m = vis.mask;
    if !m.is_interior(x.0, x.1) {
        return Err(Error::Config(format!("visibility origin {x:?} is not an Interior cell")));
    }
    let mut out = Vec::new();
    for j in 0..m.grid.ny {
        for i in 0..m.grid.nx {
            if m.is_interior(i, j) && vis.visible(x, (i, j)) {
                out.push((i, j));
            }
        }
    }
    Ok(out)
}

/// Visibility-aware discomfort: for cells within one kernel radius of a wall,
/// `eps * R * alpha(x) * ∫ grad eta(x - y) dy` over the visible part of the
/// support where `grad eta(x - y)·n(x) >= 0`. With `radial_shortcut` the
/// half-space restriction is skipped, which is only valid for radially
/// decreasing kernels.
pub fn appendix_discomfort(
    mask: &DomainMask,
    kernel: &Kernel,
    eps: f64,
    r_max: f64,
    vis: &VisibilityOracle<'_>,
    radial_shortcut: bool,
) -> Result<VectorField> {
    let g = mask.grid;
    kernel.check_grid(&g)?;
    if radial_shortcut && !kernel.is_radial() {
        return Err(Error::Config(
            "visible-set shortcut requires a radially decreasing kernel".into(),
        ));
    }
    let mut out = VectorField::zeros(g);
    if eps == 0.0 {
        return Ok(out);
    }
    let wg = wall_geometry(mask, kernel.r.max(g.dx.min(g.dy)), 1.0)?;
    let (hx, hy) = (kernel.half_x as isize, kernel.half_y as isize);
    for j in 0..g.ny {
        for i in 0..g.nx {
            let k = g.idx(i, j);
            if !mask.is_interior(i, j) {
                continue;
            }
            let a = wg.alpha(wg.dist.values[k]);
            let n = (wg.normal.ux[k], wg.normal.uy[k]);
            if a == 0.0 || (n.0 == 0.0 && n.1 == 0.0) {
                continue;
            }
            let (mut sx, mut sy) = (0.0, 0.0);
            for nn in -hy..=hy {
                let jj = j as isize - nn;
                if jj < 0 || jj >= g.ny as isize {
                    continue;
                }
                for m in -hx..=hx {
                    let ii = i as isize - m;
                    if ii < 0 || ii >= g.nx as isize {
                        continue;
                    }
                    let y = (ii as usize, jj as usize);
                    if !mask.is_interior(y.0, y.1) {
                        continue;
                    }
                    let kx = kernel.kx[(m + hx) as usize];
                    let ky = kernel.ky[(nn + hy) as usize];
                    let gx = kernel.gx[(m + hx) as usize] * ky;
                    let gy = kx * kernel.gy[(nn + hy) as usize];
                    if gx == 0.0 && gy == 0.0 {
                        continue;
                    }
                    if !radial_shortcut && gx * n.0 + gy * n.1 < 0.0 {
                        continue;
                    }
                    if !vis.visible((i, j), y) {
                        continue;
                    }
                    sx += gx;
                    sy += gy;
                }
            }
            let s = eps * r_max * a * g.cell_area();
            out.set(i, j, (s * sx, s * sy));
        }
    }
    Ok(out)
}
