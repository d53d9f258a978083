//! Per-step diagnostics, lane detection, leakage, steepening and stability probes.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{config, Result};
use crate::grid::{total_mass, CellKind, DomainMask, ScalarField};
use crate::nonlocal::{tv_envelope, BoundConstants};
use crate::solver::{run, RunConfig};

pub const CSV_HEADER: &str = "t,mass,min,max,tv,leak,lanes,dt";

/// Minimum peak prominence of the lane counter, relative to the profile maximum.
pub const LANE_PROMINENCE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub t: f64,
    pub mass: f64,
    pub min: f64,
    pub max: f64,
    pub tv: f64,
    pub leak: f64,
    pub lanes: Option<usize>,
    pub dt: f64,
    pub clamp_count: usize,
    pub nagumo_min: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSummary {
    pub steps: usize,
    pub t_final: f64,
    pub final_mass: f64,
    pub evacuation_time: Option<f64>,
    pub max_grad_norm: f64,
    pub total_clamps: usize,
    pub retries: usize,
    pub aborted: bool,
    pub nagumo_checks: usize,
    pub nagumo_violations: usize,
    pub nagumo_min: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunDiagnostics {
    pub rows: Vec<RunRow>,
    pub summary: RunSummary,
}

impl RunDiagnostics {
    pub fn push(&mut self, row: RunRow) {
        self.rows.push(row);
    }

    pub fn max_leak(&self) -> f64 {
        self.rows.iter().map(|r| r.leak.abs()).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let lanes = r.lanes.map(|l| l.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{:.10e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.10e}",
                r.t, r.mass, r.min, r.max, r.tv, r.leak, lanes, r.dt
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Summary as `key=value` lines.
    pub fn summary_text(&self) -> String {
        let s = &self.summary;
        let mut out = String::new();
        let _ = writeln!(out, "steps={}", s.steps);
        let _ = writeln!(out, "t_final={:?}", s.t_final);
        let _ = writeln!(out, "final_mass={:?}", s.final_mass);
        let _ = writeln!(out, "evacuation_time={}", s.evacuation_time.map(|t| format!("{t:?}")).unwrap_or_else(|| "none".into()));
        let _ = writeln!(out, "max_grad_norm={:?}", s.max_grad_norm);
        let _ = writeln!(out, "clamp_count={}", s.total_clamps);
        let _ = writeln!(out, "retries={}", s.retries);
        let _ = writeln!(out, "max_leak={:?}", self.max_leak());
        if let Some(m) = s.nagumo_min {
            let _ = writeln!(out, "nagumo_min={m:?}");
            let _ = writeln!(out, "nagumo_violations={}", s.nagumo_violations);
        }
        out
    }
}

/// Transverse profile: mean density over the Interior cells of each row whose
/// centres lie in `[x0, x1]`. Rows without such cells are skipped.
pub fn transverse_profile(rho: &ScalarField, mask: &DomainMask, window: (f64, f64)) -> Result<Vec<f64>> {
    rho.grid.check_same(&mask.grid, "lane_count")?;
    let g = rho.grid;
    let cols: Vec<usize> = (0..g.nx)
        .filter(|&i| {
            let x = g.cell_center(i, 0).0;
            x >= window.0 && x <= window.1
        })
        .collect();
    let mut p = Vec::new();
    for j in 0..g.ny {
        let (mut s, mut n) = (0.0, 0usize);
        for &i in &cols {
            if mask.is_interior(i, j) {
                s += rho.get(i, j);
                n += 1;
            }
        }
        if n > 0 {
            p.push(s / n as f64);
        }
    }
    if p.is_empty() {
        return config(format!("lane window [{}, {}] holds no Interior cells", window.0, window.1));
    }
    Ok(p)
}

/// 3-cell moving average; the end cells average their two available values.
pub fn smooth3(p: &[f64]) -> Vec<f64> {
    let n = p.len();
    (0..n)
        .map(|k| {
            let lo = k.saturating_sub(1);
            let hi = (k + 1).min(n - 1);
            p[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Counts local maxima with prominence at least `LANE_PROMINENCE * max(p)`.
/// A plateau counts once; a maximum on an end of the profile is allowed.
pub fn count_peaks(p: &[f64]) -> usize {
    let n = p.len();
    let top = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if n == 0 || !(top > 0.0) {
        return 0;
    }
    let thresh = LANE_PROMINENCE * top;
    let mut count = 0;
    let mut a = 0;
    while a < n {
        let mut b = a;
        while b + 1 < n && p[b + 1] == p[a] {
            b += 1;
        }
        let left_lower = a > 0 && p[a - 1] < p[a];
        let right_lower = b + 1 < n && p[b + 1] < p[a];
        let is_peak = (left_lower || a == 0) && (right_lower || b + 1 == n) && (left_lower || right_lower);
        if is_peak {
            let h = p[a];
            let side_min = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
                let mut m: Option<f64> = None;
                for k in range {
                    if p[k] > h {
                        break;
                    }
                    m = Some(m.map_or(p[k], |x: f64| x.min(p[k])));
                }
                m
            };
            let lm = side_min(&mut (0..a).rev());
            let rm = side_min(&mut (b + 1..n));
            let base = match (lm, rm) {
                (Some(l), Some(r)) => l.max(r),
                (Some(l), None) => l,
                (None, Some(r)) => r,
                (None, None) => h,
            };
            if h - base >= thresh {
                count += 1;
            }
        }
        a = b + 1;
    }
    count
}

pub fn lane_count(rho: &ScalarField, mask: &DomainMask, window: (f64, f64)) -> Result<usize> {
    let p = transverse_profile(rho, mask, window)?;
    Ok(count_peaks(&smooth3(&p)))
}

/// The x-interval of the columns holding mass, padded by one cell.
pub fn occupied_window(rho: &ScalarField, mask: &DomainMask, threshold: f64) -> Option<(f64, f64)> {
    let g = rho.grid;
    let cols: Vec<usize> = (0..g.nx)
        .filter(|&i| (0..g.ny).any(|j| mask.is_interior(i, j) && rho.get(i, j) > threshold))
        .collect();
    let (a, b) = (*cols.first()?, *cols.last()?);
    Some((g.cell_center(a, 0).0 - g.dx, g.cell_center(b, 0).0 + g.dx))
}

/// Where the lane counter looks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LaneWindow {
    Fixed(f64, f64),
    /// The columns holding density above `threshold`, see [`occupied_window`].
    Occupied { threshold: f64 },
}

impl LaneWindow {
    pub fn resolve(&self, rho: &ScalarField, mask: &DomainMask) -> Option<(f64, f64)> {
        match *self {
            LaneWindow::Fixed(a, b) => Some((a, b)),
            LaneWindow::Occupied { threshold } => occupied_window(rho, mask, threshold),
        }
    }

    /// Lane count at `rho`; zero when nothing is occupied.
    pub fn count(&self, rho: &ScalarField, mask: &DomainMask) -> Result<usize> {
        match self.resolve(rho, mask) {
            Some(w) => lane_count(rho, mask, w),
            None => Ok(0),
        }
    }
}

/// `dx*dy` times the density on Wall cells.
pub fn wall_leakage(rho: &ScalarField, mask: &DomainMask) -> Result<f64> {
    rho.grid.check_same(&mask.grid, "wall_leakage")?;
    let s: f64 = (0..rho.grid.len()).filter(|&k| mask.kind[k] == CellKind::Wall).map(|k| rho.values[k]).sum();
    Ok(s * rho.grid.cell_area())
}

/// Largest forward-difference gradient norm over Interior cells.
pub fn max_gradient_norm(rho: &ScalarField, mask: &DomainMask) -> Result<f64> {
    rho.grid.check_same(&mask.grid, "max_gradient_norm")?;
    let g = rho.grid;
    let mut m = 0.0f64;
    for j in 0..g.ny {
        for i in 0..g.nx {
            if !mask.is_interior(i, j) {
                continue;
            }
            let gx = if i + 1 < g.nx && mask.is_interior(i + 1, j) { (rho.get(i + 1, j) - rho.get(i, j)) / g.dx } else { 0.0 };
            let gy = if j + 1 < g.ny && mask.is_interior(i, j + 1) { (rho.get(i, j + 1) - rho.get(i, j)) / g.dy } else { 0.0 };
            m = m.max(gx.hypot(gy));
        }
    }
    Ok(m)
}

/// Growth of the sharpest front between the first and the last snapshot.
/// Returns 1 when the first snapshot is flat.
pub fn steepening_probe(snapshots: &[ScalarField], mask: &DomainMask) -> Result<f64> {
    if snapshots.len() < 2 {
        return config("steepening probe needs at least two snapshots");
    }
    let first = max_gradient_norm(&snapshots[0], mask)?;
    let last = max_gradient_norm(snapshots.last().unwrap(), mask)?;
    if first == 0.0 {
        return Ok(1.0);
    }
    Ok(last / first)
}

/// Bump of unit height and radius `s` centred at `(cx, cy)`.
fn bump(x: f64, y: f64, cx: f64, cy: f64, s: f64) -> f64 {
    let d2 = ((x - cx).powi(2) + (y - cy).powi(2)) / (s * s);
    if d2 < 1.0 {
        (1.0 - d2).powi(3)
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityReport {
    /// `sup_t ||rho1 - rho2||_1 / ||rho1(0) - rho2(0)||_1`.
    pub ratio: f64,
    /// `(t, ||rho1 - rho2||_1)` at each common snapshot time.
    pub per_time: Vec<(f64, f64)>,
    /// L1 size of the perturbation after clamping to `[0, R]`.
    pub initial_distance: f64,
}

/// Runs `cfg` twice, the second time with a smooth bump of L1 size
/// `perturbation` added to the initial datum at its centre of mass.
pub fn stability_probe(cfg: &RunConfig, perturbation: f64) -> Result<StabilityReport> {
    if !(perturbation > 0.0 && perturbation.is_finite()) {
        return config(format!("perturbation size must be positive, got {perturbation}"));
    }
    let g = cfg.grid();
    let m = &cfg.mask;
    let r = cfg.speed.r_max();
    let mass = total_mass(&cfg.rho0, m)?;
    let (mut cx, mut cy) = (0.0, 0.0);
    if mass > 0.0 {
        for k in m.interior_indices() {
            let (i, j) = g.ij(k);
            let (x, y) = g.cell_center(i, j);
            cx += x * cfg.rho0.values[k] * g.cell_area();
            cy += y * cfg.rho0.values[k] * g.cell_area();
        }
        cx /= mass;
        cy /= mass;
    } else {
        let k = m.interior_indices().next().unwrap_or(0);
        (cx, cy) = g.cell_center(g.ij(k).0, g.ij(k).1);
    }
    let s = 5.0 * g.dx.max(g.dy);
    let b = ScalarField::from_fn(g, |x, y| bump(x, y, cx, cy, s));
    let b_l1: f64 = m.interior_indices().map(|k| b.values[k]).sum::<f64>() * g.cell_area();
    if b_l1 == 0.0 {
        return config("perturbation bump misses the domain");
    }
    let amp = perturbation / b_l1;
    let fits_up = m.interior_indices().all(|k| cfg.rho0.values[k] + amp * b.values[k] <= r);
    let sign = if fits_up { 1.0 } else { -1.0 };
    let mut rho1 = cfg.rho0.clone();
    for k in m.interior_indices() {
        rho1.values[k] = (cfg.rho0.values[k] + sign * amp * b.values[k]).clamp(0.0, r);
    }
    let l1 = |a: &ScalarField, b: &ScalarField| -> f64 {
        m.interior_indices().map(|k| (a.values[k] - b.values[k]).abs()).sum::<f64>() * g.cell_area()
    };
    let d0 = l1(&rho1, &cfg.rho0);
    if d0 == 0.0 {
        return config("perturbation vanished after clamping to [0, R]");
    }
    let base = run(cfg.clone())?;
    let mut pcfg = cfg.clone();
    pcfg.rho0 = rho1;
    let pert = run(pcfg)?;
    let mut per_time = Vec::new();
    let mut ratio = 0.0f64;
    for a in &base.snapshots {
        if let Some(b) = pert.snapshots.iter().find(|b| b.requested == a.requested) {
            let d = l1(&a.rho, &b.rho);
            per_time.push((a.requested, d));
            ratio = ratio.max(d / d0);
        }
    }
    Ok(StabilityReport { ratio, per_time, initial_distance: d0 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvelopeReport {
    /// `max_t TV(t) / envelope(t)`.
    pub max_ratio: f64,
    pub t_at_max: f64,
    /// Exceeded the envelope at least once.
    pub warn: bool,
    /// Exceeded the envelope by more than a factor 10.
    pub fail: bool,
}

pub fn tv_envelope_check(diag: &RunDiagnostics, bc: &BoundConstants) -> EnvelopeReport {
    let tv0 = diag.rows.first().map_or(0.0, |r| r.tv);
    let mut max_ratio = 0.0f64;
    let mut t_at_max = 0.0;
    for r in &diag.rows {
        let env = tv_envelope(tv0, r.t, bc);
        let q = if env > 0.0 { r.tv / env } else if r.tv > 0.0 { f64::INFINITY } else { 0.0 };
        if q > max_ratio {
            max_ratio = q;
            t_at_max = r.t;
        }
    }
    EnvelopeReport { max_ratio, t_at_max, warn: max_ratio > 1.0, fail: max_ratio > 10.0 }
}
