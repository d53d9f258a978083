//! Scenario presets and the flat `key = value` configuration format.
//!
//! ```text
//! # comment
//! scenario = lanes
//! kernel.r = 0.6
//! geometry.columns = 6,-2,6.5,-1; 6,1,6.5,2
//! ```
//!
//! One assignment per line, dotted keys, `#` starts a comment, values may be
//! wrapped in double quotes. `scenario` selects the preset whose defaults the
//! other keys override; it may appear anywhere in the file. Repeated keys and
//! unknown keys are errors. Lists are comma separated; rectangle lists are
//! `x0,y0,x1,y1` groups separated by `;`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::diagnostics::LaneWindow;
use crate::error::{Error, Result};
use crate::geometry::{compose_nu, discomfort_field, project_off_walls, solve_eikonal, wall_geometry, WallGeometry};
use crate::grid::{CellKind, DomainMask, Grid2D, ScalarField, VectorField};
use crate::io::read_mask;
use crate::kernels::build_polynomial_kernel;
use crate::nonlocal::{OperatorKind, OperatorSpec, VisionWeight};
use crate::solver::{RunConfig, SpeedLaw};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScenarioName {
    Lanes,
    Evacuation,
    Singularity,
    Custom,
}

impl std::str::FromStr for ScenarioName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lanes" => Ok(ScenarioName::Lanes),
            "evacuation" => Ok(ScenarioName::Evacuation),
            "singularity" => Ok(ScenarioName::Singularity),
            "custom" => Ok(ScenarioName::Custom),
            _ => Err(Error::Config(format!("scenario: unknown name `{s}` (lanes | evacuation | singularity | custom)"))),
        }
    }
}

impl std::fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScenarioName::Lanes => "lanes",
            ScenarioName::Evacuation => "evacuation",
            ScenarioName::Singularity => "singularity",
            ScenarioName::Custom => "custom",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeometryKind {
    /// Straight corridor along x, wall on the left, exit on the right.
    Corridor,
    /// Rectangular room `[0, W] x [-H/2, H/2]` with a door in the right wall.
    Room,
    /// Closed square `[-a, a]^2`.
    Box,
    /// Mask read from `geometry.mask_file`.
    File,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NuKind {
    /// `(nu.x, nu.y)` everywhere.
    Uniform,
    /// Unit tangent of the shortest path to the exits.
    Geodesic,
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitShape {
    /// `init.value` on the rectangle `init.rect`.
    Box,
    /// `(1 - 4x^2/9)^2 (1 - 4y^2/9)^2` on `[-3/2, 3/2]^2`.
    Singo,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x > self.x0 && x < self.x1 && y > self.y0 && y < self.y1
    }
}

/// Every tunable of a scenario. Field names follow the config keys.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub scenario: ScenarioName,
    pub grid_dx: f64,
    pub geometry_kind: GeometryKind,
    pub geometry_x_min: f64,
    pub geometry_length: f64,
    pub geometry_half_width: f64,
    pub geometry_room_width: f64,
    pub geometry_room_height: f64,
    pub geometry_door_width: f64,
    pub geometry_half_size: f64,
    pub geometry_columns: Vec<Rect>,
    pub geometry_mask_file: Option<PathBuf>,
    pub kernel_r: f64,
    pub kernel_normalized: bool,
    pub model_operator: OperatorKind,
    pub model_eps: f64,
    /// Vision ramp length; `0` means `phi ≡ 1`.
    pub model_vision_theta: f64,
    pub model_nu: NuKind,
    pub model_nu_x: f64,
    pub model_nu_y: f64,
    pub speed_v: f64,
    pub speed_r_max: f64,
    pub wall_lambda: f64,
    pub wall_ramp: f64,
    pub init_shape: InitShape,
    pub init_rect: Rect,
    pub init_value: f64,
    pub run_t_end: f64,
    pub run_cfl: f64,
    pub run_snapshots: Vec<f64>,
    /// `0` disables regular snapshots.
    pub run_snapshot_every: f64,
    pub run_check_invariance: bool,
    pub run_lane_window: Option<LaneWindow>,
}

/// Snapshot times of the lanes preset.
pub const LANES_TIMES: [f64; 6] = [0.0, 2.529, 5.043, 7.557, 10.071, 15.014];

/// Snapshot times of the evacuation preset.
pub const EVACUATION_TIMES: [f64; 4] = [0.0, 2.521, 5.043, 7.563];

/// Every config key, in serialisation order.
pub const KEYS: &[&str] = &[
    "grid.dx",
    "geometry.kind",
    "geometry.x_min",
    "geometry.length",
    "geometry.half_width",
    "geometry.room_width",
    "geometry.room_height",
    "geometry.door_width",
    "geometry.half_size",
    "geometry.columns",
    "geometry.mask_file",
    "kernel.r",
    "kernel.normalized",
    "model.operator",
    "model.eps",
    "model.vision_theta",
    "model.nu",
    "model.nu_x",
    "model.nu_y",
    "speed.v",
    "speed.r_max",
    "wall.lambda",
    "wall.ramp",
    "init.shape",
    "init.rect",
    "init.value",
    "run.t_end",
    "run.cfl",
    "run.snapshots",
    "run.snapshot_every",
    "run.check_invariance",
    "run.lane_window",
];

/// Short names accepted for frequently swept keys.
pub const ALIASES: &[(&str, &str)] = &[
    ("r", "kernel.r"),
    ("eps", "model.eps"),
    ("lambda", "wall.lambda"),
    ("ramp", "wall.ramp"),
    ("columns", "geometry.columns"),
    ("dx", "grid.dx"),
    ("t_end", "run.t_end"),
    ("cfl", "run.cfl"),
    ("theta", "model.vision_theta"),
    ("operator", "model.operator"),
];

pub fn canonical_key(key: &str) -> Result<&'static str> {
    let key = key.trim();
    if let Some(k) = KEYS.iter().find(|k| **k == key) {
        return Ok(k);
    }
    if let Some((_, k)) = ALIASES.iter().find(|(a, _)| *a == key) {
        return Ok(k);
    }
    Err(Error::Config(format!("{key}: unknown key")))
}

fn num(key: &str, v: &str) -> Result<f64> {
    let x: f64 = v.trim().parse().map_err(|_| Error::Config(format!("{key}: `{v}` is not a number")))?;
    if !x.is_finite() {
        return Err(Error::Config(format!("{key}: value must be finite")));
    }
    Ok(x)
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got `{v}`"))),
    }
}

fn num_list(key: &str, v: &str) -> Result<Vec<f64>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| num(key, s)).collect()
}

fn rect(key: &str, v: &str) -> Result<Rect> {
    let xs = num_list(key, v)?;
    if xs.len() != 4 {
        return Err(Error::Config(format!("{key}: rectangle needs `x0,y0,x1,y1`, got `{v}`")));
    }
    let r = Rect { x0: xs[0], y0: xs[1], x1: xs[2], y1: xs[3] };
    if !(r.x1 > r.x0 && r.y1 > r.y0) {
        return Err(Error::Config(format!("{key}: empty rectangle `{v}`")));
    }
    Ok(r)
}

fn rect_list(key: &str, v: &str) -> Result<Vec<Rect>> {
    v.split(';').filter(|s| !s.trim().is_empty()).enumerate().map(|(k, s)| rect(&format!("{key}[{k}]"), s)).collect()
}

fn fmt_rect(r: &Rect) -> String {
    format!("{:?},{:?},{:?},{:?}", r.x0, r.y0, r.x1, r.y1)
}

impl Params {
    pub fn preset(name: ScenarioName) -> Self {
        let base = Params {
            scenario: name,
            grid_dx: 0.05,
            geometry_kind: GeometryKind::Corridor,
            geometry_x_min: -1.0,
            geometry_length: 14.0,
            geometry_half_width: 1.6,
            geometry_room_width: 10.0,
            geometry_room_height: 6.0,
            geometry_door_width: 1.0,
            geometry_half_size: 2.0,
            geometry_columns: Vec::new(),
            geometry_mask_file: None,
            kernel_r: 0.8,
            kernel_normalized: false,
            model_operator: OperatorKind::Good,
            model_eps: 0.4,
            model_vision_theta: 0.0,
            model_nu: NuKind::Uniform,
            model_nu_x: 1.0,
            model_nu_y: 0.0,
            speed_v: 0.5,
            speed_r_max: 1.0,
            wall_lambda: 1.5,
            wall_ramp: 0.3,
            init_shape: InitShape::Box,
            init_rect: Rect { x0: 0.6, y0: -0.6, x1: 4.0, y1: 0.6 },
            init_value: 1.0,
            run_t_end: 15.014,
            run_cfl: 0.9,
            run_snapshots: LANES_TIMES.to_vec(),
            run_snapshot_every: 0.0,
            run_check_invariance: true,
            run_lane_window: Some(LaneWindow::Occupied { threshold: 0.05 }),
        };
        match name {
            ScenarioName::Lanes => base,
            ScenarioName::Evacuation => Params {
                grid_dx: 0.1,
                geometry_kind: GeometryKind::Room,
                kernel_r: 0.6,
                model_nu: NuKind::Geodesic,
                speed_v: 6.0,
                wall_lambda: 1.0,
                wall_ramp: 0.5,
                init_rect: Rect { x0: 2.0, y0: -2.0, x1: 7.0, y1: 2.0 },
                init_value: 0.75,
                run_t_end: 40.0,
                run_snapshots: EVACUATION_TIMES.to_vec(),
                run_lane_window: None,
                ..base
            },
            ScenarioName::Singularity => Params {
                geometry_kind: GeometryKind::Box,
                kernel_r: 0.25,
                kernel_normalized: true,
                model_eps: -1.0,
                model_nu: NuKind::Zero,
                speed_v: 1.0,
                wall_lambda: 0.0,
                init_shape: InitShape::Singo,
                run_t_end: 1.0,
                run_snapshots: vec![0.0, 0.5, 1.0],
                run_check_invariance: false,
                run_lane_window: None,
                ..base
            },
            ScenarioName::Custom => Params {
                geometry_kind: GeometryKind::File,
                model_nu: NuKind::Geodesic,
                run_snapshots: vec![0.0],
                run_t_end: 10.0,
                run_lane_window: None,
                ..base
            },
        }
    }

    /// Assigns one key (or alias).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = canonical_key(key)?;
        let v = value.trim();
        match key {
            "grid.dx" => self.grid_dx = num(key, v)?,
            "geometry.kind" => {
                self.geometry_kind = match v {
                    "corridor" => GeometryKind::Corridor,
                    "room" => GeometryKind::Room,
                    "box" => GeometryKind::Box,
                    "file" => GeometryKind::File,
                    _ => return Err(Error::Config(format!("{key}: expected corridor | room | box | file, got `{v}`"))),
                }
            }
            "geometry.x_min" => self.geometry_x_min = num(key, v)?,
            "geometry.length" => self.geometry_length = num(key, v)?,
            "geometry.half_width" => self.geometry_half_width = num(key, v)?,
            "geometry.room_width" => self.geometry_room_width = num(key, v)?,
            "geometry.room_height" => self.geometry_room_height = num(key, v)?,
            "geometry.door_width" => self.geometry_door_width = num(key, v)?,
            "geometry.half_size" => self.geometry_half_size = num(key, v)?,
            "geometry.columns" => self.geometry_columns = rect_list(key, v)?,
            "geometry.mask_file" => self.geometry_mask_file = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            "kernel.r" => self.kernel_r = num(key, v)?,
            "kernel.normalized" => self.kernel_normalized = flag(key, v)?,
            "model.operator" => self.model_operator = v.parse().map_err(|e: Error| Error::Config(format!("{key}: {e}")))?,
            "model.eps" => self.model_eps = num(key, v)?,
            "model.vision_theta" => self.model_vision_theta = num(key, v)?,
            "model.nu" => {
                self.model_nu = match v {
                    "uniform" => NuKind::Uniform,
                    "geodesic" => NuKind::Geodesic,
                    "zero" => NuKind::Zero,
                    _ => return Err(Error::Config(format!("{key}: expected uniform | geodesic | zero, got `{v}`"))),
                }
            }
            "model.nu_x" => self.model_nu_x = num(key, v)?,
            "model.nu_y" => self.model_nu_y = num(key, v)?,
            "speed.v" => self.speed_v = num(key, v)?,
            "speed.r_max" => self.speed_r_max = num(key, v)?,
            "wall.lambda" => self.wall_lambda = num(key, v)?,
            "wall.ramp" => self.wall_ramp = num(key, v)?,
            "init.shape" => {
                self.init_shape = match v {
                    "box" => InitShape::Box,
                    "singo" => InitShape::Singo,
                    _ => return Err(Error::Config(format!("{key}: expected box | singo, got `{v}`"))),
                }
            }
            "init.rect" => self.init_rect = rect(key, v)?,
            "init.value" => self.init_value = num(key, v)?,
            "run.t_end" => self.run_t_end = num(key, v)?,
            "run.cfl" => self.run_cfl = num(key, v)?,
            "run.snapshots" => self.run_snapshots = num_list(key, v)?,
            "run.snapshot_every" => self.run_snapshot_every = num(key, v)?,
            "run.check_invariance" => self.run_check_invariance = flag(key, v)?,
            "run.lane_window" => {
                self.run_lane_window = match v {
                    "none" => None,
                    _ if v.starts_with("auto") => {
                        let t = v.strip_prefix("auto").unwrap().trim_start_matches(':');
                        let threshold = if t.is_empty() { 0.05 } else { num(key, t)? };
                        Some(LaneWindow::Occupied { threshold })
                    }
                    _ => {
                        let xs = num_list(key, v)?;
                        if xs.len() != 2 || !(xs[1] > xs[0]) {
                            return Err(Error::Config(format!("{key}: expected none | auto[:threshold] | x0,x1, got `{v}`")));
                        }
                        Some(LaneWindow::Fixed(xs[0], xs[1]))
                    }
                }
            }
            _ => unreachable!("key table and setter out of sync: {key}"),
        }
        Ok(())
    }

    /// Current value of a key in config syntax.
    pub fn get(&self, key: &str) -> Result<String> {
        let key = canonical_key(key)?;
        let f = |x: f64| format!("{x:?}");
        let list = |xs: &[f64]| xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        Ok(match key {
            "grid.dx" => f(self.grid_dx),
            "geometry.kind" => match self.geometry_kind {
                GeometryKind::Corridor => "corridor",
                GeometryKind::Room => "room",
                GeometryKind::Box => "box",
                GeometryKind::File => "file",
            }
            .into(),
            "geometry.x_min" => f(self.geometry_x_min),
            "geometry.length" => f(self.geometry_length),
            "geometry.half_width" => f(self.geometry_half_width),
            "geometry.room_width" => f(self.geometry_room_width),
            "geometry.room_height" => f(self.geometry_room_height),
            "geometry.door_width" => f(self.geometry_door_width),
            "geometry.half_size" => f(self.geometry_half_size),
            "geometry.columns" => self.geometry_columns.iter().map(fmt_rect).collect::<Vec<_>>().join(";"),
            "geometry.mask_file" => self.geometry_mask_file.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            "kernel.r" => f(self.kernel_r),
            "kernel.normalized" => self.kernel_normalized.to_string(),
            "model.operator" => self.model_operator.to_string(),
            "model.eps" => f(self.model_eps),
            "model.vision_theta" => f(self.model_vision_theta),
            "model.nu" => match self.model_nu {
                NuKind::Uniform => "uniform",
                NuKind::Geodesic => "geodesic",
                NuKind::Zero => "zero",
            }
            .into(),
            "model.nu_x" => f(self.model_nu_x),
            "model.nu_y" => f(self.model_nu_y),
            "speed.v" => f(self.speed_v),
            "speed.r_max" => f(self.speed_r_max),
            "wall.lambda" => f(self.wall_lambda),
            "wall.ramp" => f(self.wall_ramp),
            "init.shape" => match self.init_shape {
                InitShape::Box => "box",
                InitShape::Singo => "singo",
            }
            .into(),
            "init.rect" => fmt_rect(&self.init_rect),
            "init.value" => f(self.init_value),
            "run.t_end" => f(self.run_t_end),
            "run.cfl" => f(self.run_cfl),
            "run.snapshots" => list(&self.run_snapshots),
            "run.snapshot_every" => f(self.run_snapshot_every),
            "run.check_invariance" => self.run_check_invariance.to_string(),
            "run.lane_window" => match self.run_lane_window {
                None => "none".into(),
                Some(LaneWindow::Occupied { threshold }) => format!("auto:{threshold:?}"),
                Some(LaneWindow::Fixed(a, b)) => format!("{a:?},{b:?}"),
            },
            _ => unreachable!("key table and getter out of sync: {key}"),
        })
    }

    /// Full configuration text; parsing it gives back `self`.
    pub fn to_config_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario = {}", self.scenario);
        for k in KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k).expect("known key"));
        }
        s
    }
}

fn strip_quotes(v: &str) -> &str {
    let v = v.trim();
    v.strip_prefix('"').and_then(|x| x.strip_suffix('"')).unwrap_or(v)
}

/// Parses a configuration file.
pub fn parse_config(text: &str) -> Result<Params> {
    let mut entries: Vec<(usize, String, String)> = Vec::new();
    let mut scenario: Option<ScenarioName> = None;
    let mut seen = std::collections::HashSet::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{raw}`", n + 1)))?;
        let k = k.trim();
        let v = strip_quotes(v);
        if k == "scenario" {
            if scenario.is_some() {
                return Err(Error::Config(format!("line {}: scenario: repeated key", n + 1)));
            }
            scenario = Some(v.parse()?);
            continue;
        }
        let canon = canonical_key(k).map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip_prefix(&e))))?;
        if !seen.insert(canon) {
            return Err(Error::Config(format!("line {}: {canon}: repeated key", n + 1)));
        }
        entries.push((n + 1, canon.to_string(), v.to_string()));
    }
    let mut p = Params::preset(scenario.unwrap_or(ScenarioName::Custom));
    for (line, k, v) in entries {
        p.set(&k, &v).map_err(|e| Error::Config(format!("line {line}: {}", strip_prefix(&e))))?;
    }
    Ok(p)
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

pub fn read_config(path: &Path) -> Result<Params> {
    parse_config(&std::fs::read_to_string(path)?)
}

/// A resolved scenario: its parameters, the run configuration and the wall
/// geometry used to build it.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub params: Params,
    pub config: RunConfig,
    pub wall: Option<WallGeometry>,
    /// Preferred direction before the wall discomfort is added.
    pub direction: VectorField,
}

fn cells(len: f64, h: f64, key: &str) -> Result<usize> {
    let n = len / h;
    let r = n.round();
    if !(r >= 1.0) || (n - r).abs() > 1e-6 * r.max(1.0) {
        return Err(Error::Config(format!("{key}: length {len} is not a whole number of cells of size {h}")));
    }
    Ok(r as usize)
}

fn corridor_mask(p: &Params) -> Result<DomainMask> {
    let h = p.grid_dx;
    let nx = cells(p.geometry_length, h, "geometry.length")?;
    let ny = cells(2.0 * p.geometry_half_width, h, "geometry.half_width")?;
    let g = Grid2D::new(nx, ny, h, h, p.geometry_x_min + 0.5 * h, -p.geometry_half_width + 0.5 * h)?;
    let mut m = DomainMask::open(g);
    for i in 0..nx {
        m.set(i, 0, CellKind::Wall);
        m.set(i, ny - 1, CellKind::Wall);
    }
    for j in 1..ny - 1 {
        m.set(0, j, CellKind::Wall);
        m.set(nx - 1, j, CellKind::Exit);
    }
    Ok(m)
}

fn room_mask(p: &Params) -> Result<DomainMask> {
    let h = p.grid_dx;
    let (w, ht) = (p.geometry_room_width, p.geometry_room_height);
    let nx = cells(w, h, "geometry.room_width")? + 2;
    let ny = cells(ht, h, "geometry.room_height")? + 2;
    let g = Grid2D::new(nx, ny, h, h, -0.5 * h, -0.5 * ht - 0.5 * h)?;
    let mut m = DomainMask::walled_box(g);
    let half_door = 0.5 * p.geometry_door_width;
    if !(half_door > 0.0 && half_door < 0.5 * ht) {
        return Err(Error::Config(format!("geometry.door_width: {} must lie in (0, {ht})", p.geometry_door_width)));
    }
    let mut door = 0;
    for j in 1..ny - 1 {
        let y = g.cell_center(nx - 1, j).1;
        if y.abs() < half_door {
            m.set(nx - 1, j, CellKind::Exit);
            door += 1;
        }
    }
    if door == 0 {
        return Err(Error::Config("geometry.door_width: door narrower than one cell".into()));
    }
    let room = Rect { x0: 0.0, y0: -0.5 * ht, x1: w, y1: 0.5 * ht };
    for (k, c) in p.geometry_columns.iter().enumerate() {
        let inside = c.x0 >= room.x0 && c.x1 <= room.x1 && c.y0 >= room.y0 && c.y1 <= room.y1;
        if !inside {
            return Err(Error::Config(format!("geometry.columns[{k}]: {} lies outside the room {}", fmt_rect(c), fmt_rect(&room))));
        }
        m.fill_rect(c.x0, c.y0, c.x1, c.y1, CellKind::Wall);
    }
    m.validate()?;
    Ok(m)
}

fn box_mask(p: &Params) -> Result<DomainMask> {
    let h = p.grid_dx;
    let a = p.geometry_half_size;
    let n = cells(2.0 * a, h, "geometry.half_size")? + 2;
    let g = Grid2D::new(n, n, h, h, -a - 0.5 * h, -a - 0.5 * h)?;
    Ok(DomainMask::walled_box(g))
}

/// Builds the mask described by `p` without the rest of the scenario.
pub fn build_mask(p: &Params) -> Result<DomainMask> {
    if !(p.grid_dx > 0.0) {
        return Err(Error::Config(format!("grid.dx: must be positive, got {}", p.grid_dx)));
    }
    match p.geometry_kind {
        GeometryKind::Corridor => corridor_mask(p),
        GeometryKind::Room => room_mask(p),
        GeometryKind::Box => box_mask(p),
        GeometryKind::File => {
            let path = p.geometry_mask_file.as_ref().ok_or_else(|| Error::Config("geometry.mask_file: required for geometry.kind = file".into()))?;
            let m = read_mask(path).map_err(|e| Error::Config(format!("geometry.mask_file: {}: {e}", path.display())))?;
            let mut m = m;
            for (k, c) in p.geometry_columns.iter().enumerate() {
                let before = m.count(CellKind::Wall);
                m.fill_rect(c.x0, c.y0, c.x1, c.y1, CellKind::Wall);
                if m.count(CellKind::Wall) == before {
                    return Err(Error::Config(format!("geometry.columns[{k}]: {} covers no cell", fmt_rect(c))));
                }
            }
            m.validate()?;
            Ok(m)
        }
    }
}

fn initial_density(p: &Params, g: Grid2D, mask: &DomainMask) -> ScalarField {
    let mut rho = match p.init_shape {
        InitShape::Box => {
            let r = p.init_rect;
            let v = p.init_value;
            ScalarField::from_fn(g, |x, y| if r.contains(x, y) { v } else { 0.0 })
        }
        InitShape::Singo => ScalarField::from_fn(g, |x, y| {
            if x.abs() <= 1.5 && y.abs() <= 1.5 {
                (1.0 - 4.0 * x * x / 9.0).powi(2) * (1.0 - 4.0 * y * y / 9.0).powi(2)
            } else {
                0.0
            }
        }),
    };
    rho.zero_outside(mask);
    rho
}

/// Resolves a parameter set into a runnable configuration.
pub fn build(p: &Params) -> Result<Scenario> {
    let mask = build_mask(p)?;
    let g = mask.grid;
    let speed = SpeedLaw::linear(p.speed_v, p.speed_r_max).map_err(|e| Error::Config(format!("speed.v / speed.r_max: {}", strip_prefix(&e))))?;
    let kernel = build_polynomial_kernel(p.kernel_r, &g, p.kernel_normalized).map_err(|e| Error::Config(format!("kernel.r: {}", strip_prefix(&e))))?;

    let has_walls = mask.count(CellKind::Wall) > 0;
    let wall = if has_walls && p.wall_lambda > 0.0 {
        Some(wall_geometry(&mask, p.wall_ramp, p.wall_lambda).map_err(|e| Error::Config(format!("wall: {}", strip_prefix(&e))))?)
    } else if has_walls && p.run_check_invariance {
        Some(wall_geometry(&mask, p.wall_ramp.max(g.dx.min(g.dy)), 0.0)?)
    } else {
        None
    };

    let direction = match p.model_nu {
        NuKind::Uniform => VectorField::constant(g, p.model_nu_x, p.model_nu_y),
        NuKind::Zero => VectorField::zeros(g),
        NuKind::Geodesic => {
            let eik = solve_eikonal(&mask).map_err(|e| Error::Config(format!("model.nu: {}", strip_prefix(&e))))?;
            if !eik.unreachable.is_empty() {
                return Err(Error::Config(format!(
                    "geometry.columns: {} interior cells cannot reach an exit",
                    eik.unreachable.len()
                )));
            }
            match &wall {
                Some(wg) => project_off_walls(&eik.geodesic, wg, &mask)?,
                None => eik.geodesic,
            }
        }
    };
    let mut direction = direction;
    direction.ux.iter_mut().zip(direction.uy.iter_mut()).zip(&mask.kind).for_each(|((x, y), k)| {
        if *k != CellKind::Interior {
            *x = 0.0;
            *y = 0.0;
        }
    });
    let nu = match &wall {
        Some(wg) if wg.lambda > 0.0 => compose_nu(&direction, &discomfort_field(wg))?,
        _ => direction.clone(),
    };

    let vision = if p.model_operator == OperatorKind::Good {
        None
    } else if p.model_vision_theta > 0.0 {
        Some(VisionWeight::ramp(p.model_vision_theta)?)
    } else if p.model_vision_theta == 0.0 {
        Some(VisionWeight::One)
    } else {
        return Err(Error::Config(format!("model.vision_theta: must be nonnegative, got {}", p.model_vision_theta)));
    };
    let g_field = (p.model_operator != OperatorKind::Good).then(|| direction.clone());
    let spec = OperatorSpec { kind: p.model_operator, eps: p.model_eps, kernel, vision, g_field };

    let rho0 = initial_density(p, g, &mask);
    let snapshot_every = (p.run_snapshot_every > 0.0).then_some(p.run_snapshot_every);
    if p.run_snapshot_every < 0.0 {
        return Err(Error::Config("run.snapshot_every: must be nonnegative".into()));
    }
    let config = RunConfig {
        mask,
        spec,
        speed,
        nu,
        rho0,
        cfl: p.run_cfl,
        t_end: p.run_t_end,
        snapshot_every,
        snapshot_times: p.run_snapshots.clone(),
        wall: if p.run_check_invariance { wall.clone() } else { None },
        lane_window: p.run_lane_window,
        check_invariance: p.run_check_invariance,
    };
    config.validate().map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("run: {m}")),
        other => other,
    })?;
    Ok(Scenario { params: p.clone(), config, wall, direction })
}

/// Preset `name` with `overrides` applied in order.
pub fn build_scenario(name: ScenarioName, overrides: &[(String, String)]) -> Result<Scenario> {
    let mut p = Params::preset(name);
    for (k, v) in overrides {
        p.set(k, v)?;
    }
    build(&p)
}

/// Splits `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s.split_once('=').ok_or_else(|| Error::Config(format!("override `{s}` is not `key=value`")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}
