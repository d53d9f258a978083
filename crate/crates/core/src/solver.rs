//! Lax-Friedrichs finite volumes with dimensional splitting for
//! `rho_t + div(q(rho) w) = 0`, `w = nu + I(rho)`.

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::diagnostics::{self, LaneWindow, RunDiagnostics, RunRow};
use crate::error::{config, Error, Result};
use crate::geometry::WallGeometry;
use crate::grid::{linf_range, total_mass, CellKind, DomainMask, Grid2D, ScalarField, VectorField};
use crate::nonlocal::{advection_field, nagumo_check, OperatorSpec};

/// Tolerance of the range check `[-RANGE_TOL, R + RANGE_TOL]`.
pub const RANGE_TOL: f64 = 1e-9;

/// Evacuation is complete once the Interior mass drops below this fraction
/// of the initial mass.
pub const EVACUATED_FRACTION: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub enum SpeedLaw {
    /// `v(rho) = V (1 - rho / R)`
    LinearDecreasing { v_max: f64, r_max: f64 },
    /// Piecewise linear through `(rho[k], v[k])`, `rho[0] = 0`, last node `R`.
    Tabulated { rho: Vec<f64>, v: Vec<f64> },
}

impl SpeedLaw {
    pub fn linear(v_max: f64, r_max: f64) -> Result<Self> {
        if !(v_max > 0.0 && v_max.is_finite()) || !(r_max > 0.0 && r_max.is_finite()) {
            return config(format!("speed law needs V > 0 and R > 0, got V = {v_max}, R = {r_max}"));
        }
        Ok(SpeedLaw::LinearDecreasing { v_max, r_max })
    }

    pub fn tabulated(rho: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if rho.len() < 2 || rho.len() != v.len() {
            return config("tabulated speed law needs at least two (rho, v) nodes of equal length");
        }
        if rho[0] != 0.0 || rho.windows(2).any(|p| !(p[1] > p[0])) {
            return config("tabulated densities must start at 0 and increase strictly");
        }
        if v.iter().any(|x| !x.is_finite()) || !(v[0] > 0.0) || *v.last().unwrap() != 0.0 {
            return config("tabulated speed must satisfy v(0) > 0 and v(R) = 0");
        }
        if v.windows(2).any(|p| p[1] > p[0]) {
            return config("tabulated speed must be nonincreasing");
        }
        Ok(SpeedLaw::Tabulated { rho, v })
    }

    pub fn r_max(&self) -> f64 {
        match self {
            SpeedLaw::LinearDecreasing { r_max, .. } => *r_max,
            SpeedLaw::Tabulated { rho, .. } => *rho.last().unwrap(),
        }
    }

    pub fn v_max(&self) -> f64 {
        match self {
            SpeedLaw::LinearDecreasing { v_max, .. } => *v_max,
            SpeedLaw::Tabulated { v, .. } => v[0],
        }
    }

    /// Speed at a density already inside `[0, R]`.
    pub fn v(&self, rho: f64) -> f64 {
        match self {
            SpeedLaw::LinearDecreasing { v_max, r_max } => v_max * (1.0 - rho / r_max),
            SpeedLaw::Tabulated { rho: xs, v } => {
                let k = xs.partition_point(|&x| x <= rho).clamp(1, xs.len() - 1);
                let s = (rho - xs[k - 1]) / (xs[k] - xs[k - 1]);
                v[k - 1] + s * (v[k] - v[k - 1])
            }
        }
    }

    /// `q(rho) = rho v(rho)` after clamping to `[0, R]`; the flag reports a clamp.
    pub fn q_clamped(&self, rho: f64) -> (f64, bool) {
        let r = self.r_max();
        let c = rho.clamp(0.0, r);
        (c * self.v(c), c != rho)
    }

    /// `sup_{[0,R]} |q'|`.
    pub fn max_abs_q_prime(&self) -> f64 {
        match self {
            SpeedLaw::LinearDecreasing { v_max, .. } => *v_max,
            SpeedLaw::Tabulated { rho, v } => {
                // q' = v + rho v' is affine on each segment
                let mut m = 0.0f64;
                for k in 1..rho.len() {
                    let slope = (v[k] - v[k - 1]) / (rho[k] - rho[k - 1]);
                    m = m.max((v[k - 1] + rho[k - 1] * slope).abs());
                    m = m.max((v[k] + rho[k] * slope).abs());
                }
                m
            }
        }
    }

    /// `sup_{[0,R]} q`.
    pub fn max_q(&self) -> f64 {
        match self {
            SpeedLaw::LinearDecreasing { v_max, r_max } => v_max * r_max / 4.0,
            SpeedLaw::Tabulated { .. } => {
                let r = self.r_max();
                let n = 10_000;
                (0..=n).map(|k| self.q_clamped(r * k as f64 / n as f64).0).fold(0.0, f64::max)
            }
        }
    }
}

pub fn q_flux(rho: f64, speed: &SpeedLaw) -> f64 {
    speed.q_clamped(rho).0
}

/// `cfl * min(dx, dy) / (w_max max|q'| + 1e-30)`, capped at `cap`.
pub fn cfl_dt(w_max: f64, speed: &SpeedLaw, grid: &Grid2D, cfl: f64, cap: f64) -> f64 {
    let a = w_max * speed.max_abs_q_prime();
    (cfl * grid.dx.min(grid.dy) / (a + 1e-30)).min(cap)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitOrder {
    XY,
    YX,
}

impl SplitOrder {
    pub fn flipped(self) -> Self {
        match self {
            SplitOrder::XY => SplitOrder::YX,
            SplitOrder::YX => SplitOrder::XY,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Axis {
    X,
    Y,
}

/// Flux through the face from cell `a` to cell `b` (in the positive direction).
#[inline]
#[allow(clippy::too_many_arguments)]
fn face_flux(ka: CellKind, kb: CellKind, ra: f64, rb: f64, qa: f64, qb: f64, wa: f64, wb: f64, visc: f64) -> f64 {
    use CellKind::*;
    match (ka, kb) {
        (Interior, Interior) => 0.5 * (qa * wa + qb * wb) - visc * (rb - ra),
        (Interior, Exit) => qa * wa.max(0.0),
        (Exit, Interior) => qb * wb.min(0.0),
        _ => 0.0,
    }
}

/// One directional sweep; returns the new field and the number of clamped cells.
fn sweep(rho: &ScalarField, w: &VectorField, mask: &DomainMask, speed: &SpeedLaw, dt: f64, axis: Axis) -> (ScalarField, usize) {
    let g = rho.grid;
    let (h, wd) = match axis {
        Axis::X => (g.dx, &w.ux),
        Axis::Y => (g.dy, &w.uy),
    };
    let lam = dt / h;
    let visc = h / (2.0 * dt);
    let r = &rho.values;
    let kind = &mask.kind;
    let mut q = vec![0.0; g.len()];
    let mut clamps = 0usize;
    for k in 0..g.len() {
        if kind[k] == CellKind::Interior {
            let (v, c) = speed.q_clamped(r[k]);
            q[k] = v;
            clamps += c as usize;
        }
    }
    let mut out = rho.values.clone();
    out.par_chunks_mut(g.nx).enumerate().for_each(|(j, row)| {
        for (i, cell) in row.iter_mut().enumerate() {
            let k = g.idx(i, j);
            if kind[k] != CellKind::Interior {
                continue;
            }
            let (lo, hi) = match axis {
                Axis::X => ((i > 0).then(|| k - 1), (i + 1 < g.nx).then(|| k + 1)),
                Axis::Y => ((j > 0).then(|| k - g.nx), (j + 1 < g.ny).then(|| k + g.nx)),
            };
            let flux = |a: usize, b: usize| face_flux(kind[a], kind[b], r[a], r[b], q[a], q[b], wd[a], wd[b], visc);
            let fp = hi.map_or(0.0, |b| flux(k, b));
            let fm = lo.map_or(0.0, |a| flux(a, k));
            *cell = r[k] - lam * (fp - fm);
        }
    });
    (ScalarField { grid: g, values: out }, clamps)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub rho: ScalarField,
    /// Time step actually taken (halved after a rejection).
    pub dt: f64,
    pub clamp_count: usize,
    pub retried: bool,
}

fn split_once(
    rho: &ScalarField,
    w: &VectorField,
    mask: &DomainMask,
    speed: &SpeedLaw,
    dt: f64,
    order: SplitOrder,
) -> (ScalarField, usize, Option<(f64, f64)>) {
    let (a, b) = match order {
        SplitOrder::XY => (Axis::X, Axis::Y),
        SplitOrder::YX => (Axis::Y, Axis::X),
    };
    let (mid, c1) = sweep(rho, w, mask, speed, dt, a);
    let (out, c2) = sweep(&mid, w, mask, speed, dt, b);
    let r = speed.r_max();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for k in mask.interior_indices() {
        lo = lo.min(out.values[k]);
        hi = hi.max(out.values[k]);
    }
    let bad = !(lo >= -RANGE_TOL && hi <= r + RANGE_TOL);
    (out, c1 + c2, bad.then_some((lo, hi)))
}

/// One split step. A result outside `[-1e-9, R + 1e-9]` is rejected and the
/// step retried once with `dt / 2`; a second rejection is an `Aborted` error
/// whose diagnostics are left for the caller to fill.
pub fn lxf_split_step(
    rho: &ScalarField,
    w: &VectorField,
    mask: &DomainMask,
    speed: &SpeedLaw,
    dt: f64,
    order: SplitOrder,
) -> Result<StepOutcome> {
    rho.grid.check_same(&mask.grid, "lxf_split_step")?;
    w.grid.check_same(&mask.grid, "lxf_split_step")?;
    if !(dt > 0.0 && dt.is_finite()) {
        return config(format!("time step must be positive and finite, got {dt}"));
    }
    let (out, clamps, bad) = split_once(rho, w, mask, speed, dt, order);
    let Some(_) = bad else {
        return Ok(StepOutcome { rho: out, dt, clamp_count: clamps, retried: false });
    };
    let half = 0.5 * dt;
    let (out, clamps, bad) = split_once(rho, w, mask, speed, half, order);
    match bad {
        None => Ok(StepOutcome { rho: out, dt: half, clamp_count: clamps, retried: true }),
        Some((lo, hi)) => Err(Error::Aborted {
            t: f64::NAN,
            reason: format!("range check failed twice (dt = {half:e}): min {lo:e}, max {hi:e}"),
            diagnostics: Box::default(),
        }),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mask: DomainMask,
    pub spec: OperatorSpec,
    pub speed: SpeedLaw,
    pub nu: VectorField,
    pub rho0: ScalarField,
    pub cfl: f64,
    pub t_end: f64,
    /// Regular snapshot spacing, also an upper bound on `dt`.
    pub snapshot_every: Option<f64>,
    /// Additional snapshot times.
    pub snapshot_times: Vec<f64>,
    /// Wall geometry for the per-step invariance check.
    pub wall: Option<WallGeometry>,
    pub lane_window: Option<LaneWindow>,
    pub check_invariance: bool,
}

impl RunConfig {
    pub fn grid(&self) -> Grid2D {
        self.mask.grid
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.grid();
        self.mask.validate()?;
        self.nu.grid.check_same(&g, "nu")?;
        self.rho0.grid.check_same(&g, "rho0")?;
        self.spec.kernel.check_grid(&g)?;
        self.spec.validate()?;
        if let Some(dir) = &self.spec.g_field {
            dir.grid.check_same(&g, "operator direction field")?;
        }
        if let Some(wg) = &self.wall {
            wg.dist.grid.check_same(&g, "wall geometry")?;
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return config(format!("cfl must lie in (0, 1], got {}", self.cfl));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return config(format!("t_end must be positive and finite, got {}", self.t_end));
        }
        if let Some(s) = self.snapshot_every {
            if !(s > 0.0 && s.is_finite()) {
                return config(format!("snapshot spacing must be positive, got {s}"));
            }
        }
        if let Some(t) = self.snapshot_times.iter().find(|t| !(**t >= 0.0 && **t <= self.t_end)) {
            return config(format!("snapshot time {t} outside [0, {}]", self.t_end));
        }
        if self.spec.eps < 0.0 && self.check_invariance {
            return config("negative eps requires the invariance check to be disabled");
        }
        if !self.nu.is_finite() {
            return config("nu must be finite");
        }
        let r = self.speed.r_max();
        for k in self.mask.interior_indices() {
            let v = self.rho0.values[k];
            if !(v >= 0.0 && v <= r) {
                let (i, j) = g.ij(k);
                return config(format!("initial density {v} at cell ({i}, {j}) outside [0, {r}]"));
            }
        }
        if let Some(LaneWindow::Fixed(a, b)) = self.lane_window {
            let cols = (0..g.nx).filter(|&i| {
                let x = g.cell_center(i, 0).0;
                x >= a && x <= b
            });
            if cols.count() == 0 {
                return config(format!("lane window [{a}, {b}] contains no cells"));
            }
        }
        Ok(())
    }

    /// All snapshot times, sorted and deduplicated.
    pub fn all_snapshot_times(&self) -> Vec<f64> {
        let mut ts = self.snapshot_times.clone();
        if let Some(s) = self.snapshot_every {
            let n = (self.t_end / s + 1e-9).floor() as usize;
            ts.extend((0..=n).map(|k| (k as f64 * s).min(self.t_end)));
        }
        ts.sort_by(f64::total_cmp);
        ts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
        ts
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub requested: f64,
    pub t: f64,
    pub rho: ScalarField,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub diagnostics: RunDiagnostics,
    pub snapshots: Vec<Snapshot>,
}

fn close_to(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * b.abs().max(1.0)
}

/// Step-by-step driver of a run.
pub struct Simulation {
    cfg: RunConfig,
    rho: ScalarField,
    t: f64,
    order: SplitOrder,
    pending: VecDeque<f64>,
    initial_mass: f64,
    diag: RunDiagnostics,
    snapshots: Vec<Snapshot>,
    done: bool,
}

impl Simulation {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rho = cfg.rho0.clone();
        rho.zero_outside(&cfg.mask);
        let initial_mass = total_mass(&rho, &cfg.mask)?;
        let pending: VecDeque<f64> = cfg.all_snapshot_times().into();
        let mut sim = Simulation {
            rho,
            t: 0.0,
            order: SplitOrder::XY,
            pending,
            initial_mass,
            diag: RunDiagnostics::default(),
            snapshots: Vec::new(),
            done: false,
            cfg,
        };
        let row = sim.row(0.0, 0, None)?;
        sim.diag.push(row);
        sim.emit();
        if initial_mass == 0.0 {
            sim.finish(true);
        }
        Ok(sim)
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn rho(&self) -> &ScalarField {
        &self.rho
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn diagnostics(&self) -> &RunDiagnostics {
        &self.diag
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    fn row(&self, dt: f64, clamps: usize, nagumo: Option<f64>) -> Result<RunRow> {
        let m = &self.cfg.mask;
        let (lo, hi) = linf_range(&self.rho, m)?;
        let lanes = match &self.cfg.lane_window {
            Some(win) => Some(win.count(&self.rho, m)?),
            None => None,
        };
        Ok(RunRow {
            t: self.t,
            mass: total_mass(&self.rho, m)?,
            min: lo,
            max: hi,
            tv: crate::grid::discrete_tv(&self.rho, m)?,
            leak: diagnostics::wall_leakage(&self.rho, m)?,
            lanes,
            dt,
            clamp_count: clamps,
            nagumo_min: nagumo,
        })
    }

    fn emit(&mut self) {
        while let Some(&ts) = self.pending.front() {
            if self.t < ts && !close_to(self.t, ts) {
                break;
            }
            self.pending.pop_front();
            self.snapshots.push(Snapshot { requested: ts, t: self.t, rho: self.rho.clone() });
        }
    }

    fn finish(&mut self, evacuated: bool) {
        self.done = true;
        let s = &mut self.diag.summary;
        s.final_mass = self.diag.rows.last().map_or(0.0, |r| r.mass);
        s.t_final = self.t;
        if evacuated {
            s.evacuation_time = Some(self.t);
        }
    }

    /// Advances one time step; a no-op once the run has finished.
    pub fn step(&mut self) -> Result<()> {
        if self.done {
            return Ok(());
        }
        let cfg = &self.cfg;
        let g = cfg.grid();
        let i_field = cfg.spec.apply(&self.rho, &cfg.mask)?;
        let adv = advection_field(&cfg.nu, &i_field, &cfg.mask)?;
        let nagumo = match (&cfg.wall, cfg.check_invariance) {
            (Some(wg), true) => Some(nagumo_check(&adv.w, wg, &cfg.mask)?),
            _ => None,
        };
        let mut cap = cfg.t_end - self.t;
        if let Some(&ts) = self.pending.front() {
            cap = cap.min(ts - self.t);
        }
        if let Some(s) = cfg.snapshot_every {
            cap = cap.min(s);
        }
        let dt = cfl_dt(adv.max_component, &cfg.speed, &g, cfg.cfl, cap);
        let out = match lxf_split_step(&self.rho, &adv.w, &cfg.mask, &cfg.speed, dt, self.order) {
            Ok(o) => o,
            Err(Error::Aborted { reason, .. }) => {
                self.diag.summary.aborted = true;
                self.finish(false);
                return Err(Error::Aborted { t: self.t, reason, diagnostics: Box::new(self.diag.clone()) });
            }
            Err(e) => return Err(e),
        };
        let mut t = self.t + out.dt;
        let targets = self.pending.front().copied().into_iter().chain([cfg.t_end]);
        for target in targets {
            if close_to(t, target) {
                t = target;
            }
        }
        self.rho = out.rho;
        self.t = t;
        self.order = self.order.flipped();

        let s = &mut self.diag.summary;
        s.steps += 1;
        s.total_clamps += out.clamp_count;
        s.retries += out.retried as usize;
        s.max_grad_norm = s.max_grad_norm.max(diagnostics::max_gradient_norm(&self.rho, &self.cfg.mask)?);
        if let Some(rep) = &nagumo {
            s.nagumo_checks += 1;
            s.nagumo_violations += rep.violations.len();
            s.nagumo_min = Some(s.nagumo_min.map_or(rep.min_wn, |m: f64| m.min(rep.min_wn)));
        }
        let row = self.row(out.dt, out.clamp_count, nagumo.map(|r| r.min_wn))?;
        let mass = row.mass;
        self.diag.push(row);
        self.emit();
        if mass < EVACUATED_FRACTION * self.initial_mass {
            self.finish(true);
        } else if self.t >= self.cfg.t_end {
            self.finish(false);
        }
        Ok(())
    }

    /// Runs to completion.
    pub fn run(mut self) -> Result<RunOutput> {
        while !self.done {
            self.step()?;
        }
        Ok(RunOutput { diagnostics: self.diag, snapshots: self.snapshots })
    }
}

pub fn run(cfg: RunConfig) -> Result<RunOutput> {
    Simulation::new(cfg)?.run()
}
