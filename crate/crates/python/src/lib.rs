//! Python bindings: grids, fields, masks, kernels, the nonlocal operator,
//! the eikonal solver and scenario runs.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use crowdsim::diagnostics;
use crowdsim::geometry;
use crowdsim::grid::{self as cgrid, CellKind};
use crowdsim::io;
use crowdsim::kernels::{self, Derivative};
use crowdsim::nonlocal;
use crowdsim::scenarios::{self, ScenarioName};
use crowdsim::solver;

fn to_py(e: crowdsim::Error) -> PyErr {
    match e {
        crowdsim::Error::Config(_) | crowdsim::Error::Parse(_) | crowdsim::Error::Structural(_) => PyValueError::new_err(e.to_string()),
        crowdsim::Error::Io(_) => PyIOError::new_err(e.to_string()),
        crowdsim::Error::Aborted { .. } => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Parses `value`, `ddx` or `ddy`.
pub fn parse_derivative(which: &str) -> Result<Derivative, String> {
    match which {
        "value" => Ok(Derivative::Value),
        "ddx" => Ok(Derivative::Ddx),
        "ddy" => Ok(Derivative::Ddy),
        other => Err(format!("unknown derivative `{other}` (value | ddx | ddy)")),
    }
}

/// Splits a row-major list of rows into one flat vector, checking the shape.
pub fn flatten_rows(rows: &[Vec<f64>], nx: usize, ny: usize) -> Result<Vec<f64>, String> {
    if rows.len() != ny || rows.iter().any(|r| r.len() != nx) {
        return Err(format!("expected {ny} rows of {nx} values"));
    }
    Ok(rows.concat())
}

#[pyclass(name = "Grid", from_py_object)]
#[derive(Clone, Copy)]
struct Grid(cgrid::Grid2D);

#[pymethods]
impl Grid {
    #[new]
    #[pyo3(signature = (nx, ny, dx, dy, x0 = 0.0, y0 = 0.0))]
    fn new(nx: usize, ny: usize, dx: f64, dy: f64, x0: f64, y0: f64) -> PyResult<Self> {
        cgrid::Grid2D::new(nx, ny, dx, dy, x0, y0).map(Grid).map_err(to_py)
    }

    #[getter]
    fn nx(&self) -> usize {
        self.0.nx
    }

    #[getter]
    fn ny(&self) -> usize {
        self.0.ny
    }

    #[getter]
    fn dx(&self) -> f64 {
        self.0.dx
    }

    #[getter]
    fn dy(&self) -> f64 {
        self.0.dy
    }

    #[getter]
    fn x0(&self) -> f64 {
        self.0.x0
    }

    #[getter]
    fn y0(&self) -> f64 {
        self.0.y0
    }

    fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        self.0.cell_center(i, j)
    }

    fn __repr__(&self) -> String {
        let g = self.0;
        format!("Grid(nx={}, ny={}, dx={}, dy={}, x0={}, y0={})", g.nx, g.ny, g.dx, g.dy, g.x0, g.y0)
    }
}

/// Scalar field; values are stored row by row (`j` outer, `i` inner).
#[pyclass(name = "Field", from_py_object)]
#[derive(Clone)]
struct Field(cgrid::ScalarField);

#[pymethods]
impl Field {
    #[new]
    fn new(grid: Grid, values: Vec<f64>) -> PyResult<Self> {
        cgrid::ScalarField::from_values(grid.0, values).map(Field).map_err(to_py)
    }

    #[staticmethod]
    fn zeros(grid: Grid) -> Self {
        Field(cgrid::ScalarField::zeros(grid.0))
    }

    #[staticmethod]
    fn from_rows(grid: Grid, rows: Vec<Vec<f64>>) -> PyResult<Self> {
        let v = flatten_rows(&rows, grid.0.nx, grid.0.ny).map_err(PyValueError::new_err)?;
        Self::new(grid, v)
    }

    /// Parses the text field format; returns `(field, t)`.
    #[staticmethod]
    fn from_text(text: &str) -> PyResult<(Self, f64)> {
        io::parse_field(text).map(|(f, t)| (Field(f), t)).map_err(to_py)
    }

    #[pyo3(signature = (t = 0.0))]
    fn to_text(&self, t: f64) -> String {
        io::field_to_string(&self.0, t)
    }

    #[getter]
    fn grid(&self) -> Grid {
        Grid(self.0.grid)
    }

    fn values(&self) -> Vec<f64> {
        self.0.values.clone()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        self.0.values.chunks(self.0.grid.nx).map(<[f64]>::to_vec).collect()
    }

    fn get(&self, i: usize, j: usize) -> PyResult<f64> {
        self.check(i, j)?;
        Ok(self.0.get(i, j))
    }

    fn set(&mut self, i: usize, j: usize, v: f64) -> PyResult<()> {
        self.check(i, j)?;
        self.0.set(i, j, v);
        Ok(())
    }

    /// `dx*dy` times the sum over the Interior cells of `mask`.
    fn mass(&self, mask: &Mask) -> PyResult<f64> {
        cgrid::total_mass(&self.0, &mask.0).map_err(to_py)
    }

    /// `(min, max)` over the Interior cells of `mask`.
    fn range(&self, mask: &Mask) -> PyResult<(f64, f64)> {
        cgrid::linf_range(&self.0, &mask.0).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.0.values.len()
    }
}

impl Field {
    fn check(&self, i: usize, j: usize) -> PyResult<()> {
        let g = self.0.grid;
        if i >= g.nx || j >= g.ny {
            return Err(PyValueError::new_err(format!("cell ({i}, {j}) outside {}x{}", g.nx, g.ny)));
        }
        Ok(())
    }
}

/// Cell classification: `.` interior, `#` wall, `E` exit.
#[pyclass(name = "Mask", from_py_object)]
#[derive(Clone)]
struct Mask(cgrid::DomainMask);

#[pymethods]
impl Mask {
    #[staticmethod]
    fn open(grid: Grid) -> Self {
        Mask(cgrid::DomainMask::open(grid.0))
    }

    #[staticmethod]
    fn walled_box(grid: Grid) -> Self {
        Mask(cgrid::DomainMask::walled_box(grid.0))
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        io::parse_mask(text).map(Mask).map_err(to_py)
    }

    fn to_text(&self) -> String {
        io::mask_to_string(&self.0)
    }

    #[getter]
    fn grid(&self) -> Grid {
        Grid(self.0.grid)
    }

    fn get(&self, i: usize, j: usize) -> PyResult<char> {
        let g = self.0.grid;
        if i >= g.nx || j >= g.ny {
            return Err(PyValueError::new_err(format!("cell ({i}, {j}) outside {}x{}", g.nx, g.ny)));
        }
        Ok(self.0.get(i, j).to_char())
    }

    fn set(&mut self, i: usize, j: usize, c: char) -> PyResult<()> {
        let g = self.0.grid;
        if i >= g.nx || j >= g.ny {
            return Err(PyValueError::new_err(format!("cell ({i}, {j}) outside {}x{}", g.nx, g.ny)));
        }
        let k = CellKind::from_char(c).ok_or_else(|| PyValueError::new_err(format!("unknown cell kind `{c}`")))?;
        self.0.set(i, j, k);
        Ok(())
    }

    fn fill_rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, c: char) -> PyResult<()> {
        let k = CellKind::from_char(c).ok_or_else(|| PyValueError::new_err(format!("unknown cell kind `{c}`")))?;
        self.0.fill_rect(x0, y0, x1, y1, k);
        Ok(())
    }

    /// Number of cells of kind `c`.
    fn count(&self, c: char) -> PyResult<usize> {
        let k = CellKind::from_char(c).ok_or_else(|| PyValueError::new_err(format!("unknown cell kind `{c}`")))?;
        Ok(self.0.count(k))
    }
}

#[pyclass(name = "Kernel", from_py_object)]
#[derive(Clone)]
struct Kernel(kernels::Kernel);

#[pymethods]
impl Kernel {
    #[new]
    #[pyo3(signature = (r, grid, normalized = false))]
    fn new(r: f64, grid: Grid, normalized: bool) -> PyResult<Self> {
        kernels::build_polynomial_kernel(r, &grid.0, normalized).map(Kernel).map_err(to_py)
    }

    #[getter]
    fn r(&self) -> f64 {
        self.0.r
    }

    #[getter]
    fn normalized(&self) -> bool {
        self.0.normalized
    }

    #[getter]
    fn norm_l1_grad(&self) -> f64 {
        self.0.norm_l1_grad
    }

    #[getter]
    fn norm_w11(&self) -> f64 {
        self.0.norm_w11
    }

    fn value(&self, z1: f64, z2: f64) -> f64 {
        self.0.value(z1, z2)
    }
}

#[pyfunction]
#[pyo3(signature = (rho, mask, kernel, which = "value"))]
fn convolve(rho: &Field, mask: &Mask, kernel: &Kernel, which: &str) -> PyResult<Field> {
    let d = parse_derivative(which).map_err(PyValueError::new_err)?;
    kernels::convolve(&rho.0, &mask.0, &kernel.0, d).map(Field).map_err(to_py)
}

fn split(v: cgrid::VectorField) -> (Field, Field) {
    let g = v.grid;
    (
        Field(cgrid::ScalarField { grid: g, values: v.ux }),
        Field(cgrid::ScalarField { grid: g, values: v.uy }),
    )
}

/// `(d/dx, d/dy)` of `rho * eta`.
#[pyfunction]
fn convolve_gradient(rho: &Field, mask: &Mask, kernel: &Kernel) -> PyResult<(Field, Field)> {
    kernels::convolve_gradient(&rho.0, &mask.0, &kernel.0).map(split).map_err(to_py)
}

/// Gradient-avoidance deviation `-eps G / sqrt(1 + |G|^2)`, `G = grad(rho * eta)`.
#[pyfunction]
fn i_good(rho: &Field, mask: &Mask, kernel: &Kernel, eps: f64) -> PyResult<(Field, Field)> {
    let spec = nonlocal::OperatorSpec::good(eps, kernel.0.clone());
    nonlocal::i_good(&rho.0, &mask.0, &spec).map(split).map_err(to_py)
}

#[pyfunction]
fn lambda_min_good(eps: f64, r_max: f64, kernel: &Kernel) -> PyResult<f64> {
    nonlocal::lambda_min_good(eps, r_max, &kernel.0).map_err(to_py)
}

type EikonalTuple = (Field, Field, Field, Vec<(usize, usize)>);

/// Returns `(potential, geodesic_x, geodesic_y, unreachable_cells)`.
#[pyfunction]
fn solve_eikonal(mask: &Mask) -> PyResult<EikonalTuple> {
    let e = geometry::solve_eikonal(&mask.0).map_err(to_py)?;
    let (gx, gy) = split(e.geodesic);
    Ok((Field(e.potential), gx, gy, e.unreachable))
}

#[pyfunction]
fn lane_count(rho: &Field, mask: &Mask, x0: f64, x1: f64) -> PyResult<usize> {
    diagnostics::lane_count(&rho.0, &mask.0, (x0, x1)).map_err(to_py)
}

#[pyfunction]
fn transverse_profile(rho: &Field, mask: &Mask, x0: f64, x1: f64) -> PyResult<Vec<f64>> {
    diagnostics::transverse_profile(&rho.0, &mask.0, (x0, x1)).map_err(to_py)
}

#[pyfunction]
fn count_peaks(profile: Vec<f64>) -> usize {
    diagnostics::count_peaks(&profile)
}

/// A preset with overrides applied, ready to run.
#[pyclass(name = "Scenario")]
struct Scenario(scenarios::Scenario);

#[pymethods]
impl Scenario {
    /// `overrides` maps config keys (or their short aliases) to values; values
    /// are converted with `str()`.
    #[new]
    #[pyo3(signature = (name, overrides = None))]
    fn new(name: &str, overrides: Option<Vec<(String, Bound<'_, PyAny>)>>) -> PyResult<Self> {
        let name: ScenarioName = name.parse().map_err(to_py)?;
        let mut ov = Vec::new();
        for (k, v) in overrides.unwrap_or_default() {
            ov.push((k, v.str()?.to_string()));
        }
        scenarios::build_scenario(name, &ov).map(Scenario).map_err(to_py)
    }

    #[staticmethod]
    fn from_config(text: &str) -> PyResult<Self> {
        let p = scenarios::parse_config(text).map_err(to_py)?;
        scenarios::build(&p).map(Scenario).map_err(to_py)
    }

    fn config_text(&self) -> String {
        self.0.params.to_config_text()
    }

    /// Value of one config key, as written in the config file.
    fn get(&self, key: &str) -> PyResult<String> {
        self.0.params.get(key).map_err(to_py)
    }

    #[getter]
    fn mask(&self) -> Mask {
        Mask(self.0.config.mask.clone())
    }

    #[getter]
    fn rho0(&self) -> Field {
        Field(self.0.config.rho0.clone())
    }

    #[getter]
    fn grid(&self) -> Grid {
        Grid(self.0.config.grid())
    }

    fn run(&self, py: Python<'_>) -> PyResult<RunResult> {
        let cfg = self.0.config.clone();
        py.detach(move || solver::run(cfg)).map(RunResult).map_err(to_py)
    }
}

#[pyclass(name = "RunResult")]
struct RunResult(solver::RunOutput);

#[pymethods]
impl RunResult {
    /// `[(requested_time, time, field), ...]`
    fn snapshots(&self) -> Vec<(f64, f64, Field)> {
        self.0.snapshots.iter().map(|s| (s.requested, s.t, Field(s.rho.clone()))).collect()
    }

    /// `[(t, mass, min, max, tv, leak, lanes, dt), ...]`
    #[allow(clippy::type_complexity)]
    fn rows(&self) -> Vec<(f64, f64, f64, f64, f64, f64, Option<usize>, f64)> {
        self.0
            .diagnostics
            .rows
            .iter()
            .map(|r| (r.t, r.mass, r.min, r.max, r.tv, r.leak, r.lanes, r.dt))
            .collect()
    }

    fn diagnostics_csv(&self) -> String {
        self.0.diagnostics.to_csv()
    }

    fn summary_text(&self) -> String {
        self.0.diagnostics.summary_text()
    }

    #[getter]
    fn steps(&self) -> usize {
        self.0.diagnostics.summary.steps
    }

    #[getter]
    fn t_final(&self) -> f64 {
        self.0.diagnostics.summary.t_final
    }

    #[getter]
    fn evacuation_time(&self) -> Option<f64> {
        self.0.diagnostics.summary.evacuation_time
    }
}

#[pymodule]
fn crowdsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Grid>()?;
    m.add_class::<Field>()?;
    m.add_class::<Mask>()?;
    m.add_class::<Kernel>()?;
    m.add_class::<Scenario>()?;
    m.add_class::<RunResult>()?;
    m.add_function(wrap_pyfunction!(convolve, m)?)?;
    m.add_function(wrap_pyfunction!(convolve_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(i_good, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_min_good, m)?)?;
    m.add_function(wrap_pyfunction!(solve_eikonal, m)?)?;
    m.add_function(wrap_pyfunction!(lane_count, m)?)?;
    m.add_function(wrap_pyfunction!(transverse_profile, m)?)?;
    m.add_function(wrap_pyfunction!(count_peaks, m)?)?;
    Ok(())
}
