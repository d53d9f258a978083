//! Nonlocal deviation operators, the assembled advection field, and the
//! boundary invariance checks and bound constants that go with them.

use std::fmt::Write as _;

use crate::error::{config, Error, Result};
use crate::geometry::WallGeometry;
use crate::grid::{CellKind, DomainMask, ScalarField, VectorField};
use crate::kernels::{convolve_gradient, direct_sum, weighted_convolution_gradient, Kernel};
use crate::solver::SpeedLaw;

/// Anisotropic weight `phi` applied to `(y - x)·g(x)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum VisionWeight {
    /// `phi ≡ 1` (isotropic).
    One,
    /// `phi = S(s / theta)` with the quintic smoothstep `S(u) = u^3 (6u^2 - 15u + 10)`,
    /// zero for `s <= 0` and one for `s >= theta`.
    Ramp { theta: f64 },
}

impl VisionWeight {
    pub fn ramp(theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return config(format!("vision ramp length must be positive, got {theta}"));
        }
        Ok(VisionWeight::Ramp { theta })
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, VisionWeight::One)
    }

    pub fn value(&self, s: f64) -> f64 {
        match *self {
            VisionWeight::One => 1.0,
            VisionWeight::Ramp { theta } => {
                let u = (s / theta).clamp(0.0, 1.0);
                u * u * u * (u * (6.0 * u - 15.0) + 10.0)
            }
        }
    }

    pub fn derivative(&self, s: f64) -> f64 {
        match *self {
            VisionWeight::One => 0.0,
            VisionWeight::Ramp { theta } => {
                let u = s / theta;
                if u <= 0.0 || u >= 1.0 {
                    return 0.0;
                }
                30.0 * u * u * (1.0 - u) * (1.0 - u) / theta
            }
        }
    }

    /// `||phi||_{W^{1,inf}} = sup|phi| + sup|phi'|`
    pub fn w1inf_norm(&self) -> f64 {
        match *self {
            VisionWeight::One => 1.0,
            VisionWeight::Ramp { theta } => 1.0 + 1.875 / theta,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorKind {
    /// Gradient avoidance: `-eps grad(rho*eta) / sqrt(1 + |grad(rho*eta)|^2)`.
    Good,
    /// Vision-weighted variant of `Good`.
    Pt,
    /// Linear vision-weighted operator without normalisation.
    LinearPt,
}

impl std::str::FromStr for OperatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "good" => Ok(OperatorKind::Good),
            "pt" => Ok(OperatorKind::Pt),
            "linear-pt" => Ok(OperatorKind::LinearPt),
            _ => config(format!("unknown operator `{s}` (good | pt | linear-pt)")),
        }
    }
}

impl std::fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OperatorKind::Good => "good",
            OperatorKind::Pt => "pt",
            OperatorKind::LinearPt => "linear-pt",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OperatorSpec {
    pub kind: OperatorKind,
    pub eps: f64,
    pub kernel: Kernel,
    pub vision: Option<VisionWeight>,
    /// Preferred direction `g` (Pt) or `nu` (LinearPt).
    pub g_field: Option<VectorField>,
}

impl OperatorSpec {
    pub fn good(eps: f64, kernel: Kernel) -> Self {
        Self { kind: OperatorKind::Good, eps, kernel, vision: None, g_field: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.eps.is_finite() {
            return config("eps must be finite");
        }
        if self.eps < 0.0 && self.kind != OperatorKind::Good {
            return config("negative eps is only supported for the gradient-avoidance operator");
        }
        if self.kind != OperatorKind::Good && (self.vision.is_none() || self.g_field.is_none()) {
            return config(format!("operator `{}` needs a vision weight and a direction field", self.kind));
        }
        Ok(())
    }

    fn parts(&self) -> Result<(&VisionWeight, &VectorField)> {
        match (&self.vision, &self.g_field) {
            (Some(v), Some(g)) => Ok((v, g)),
            _ => config(format!("operator `{}` needs a vision weight and a direction field", self.kind)),
        }
    }

    /// Evaluates the operator selected by `kind`.
    pub fn apply(&self, rho: &ScalarField, mask: &DomainMask) -> Result<VectorField> {
        match self.kind {
            OperatorKind::Good => i_good(rho, mask, self),
            OperatorKind::Pt => i_pt(rho, mask, self),
            OperatorKind::LinearPt => i_linear_pt(rho, mask, self),
        }
    }
}

/// `-eps * G / sqrt(1 + |G|^2)` pointwise, zero off the Interior.
fn saturate(mut gfield: VectorField, eps: f64, mask: &DomainMask) -> VectorField {
    for k in 0..gfield.ux.len() {
        if mask.kind[k] != CellKind::Interior {
            gfield.ux[k] = 0.0;
            gfield.uy[k] = 0.0;
            continue;
        }
        let (gx, gy) = (gfield.ux[k], gfield.uy[k]);
        let s = -eps / (1.0 + gx * gx + gy * gy).sqrt();
        gfield.ux[k] = s * gx;
        gfield.uy[k] = s * gy;
    }
    gfield
}

pub fn i_good(rho: &ScalarField, mask: &DomainMask, spec: &OperatorSpec) -> Result<VectorField> {
    if spec.kind != OperatorKind::Good {
        return config("i_good called with a non-Good operator spec");
    }
    let g = convolve_gradient(rho, mask, &spec.kernel)?;
    Ok(saturate(g, spec.eps, mask))
}

pub fn i_pt(rho: &ScalarField, mask: &DomainMask, spec: &OperatorSpec) -> Result<VectorField> {
    let (phi, g) = spec.parts()?;
    let w = weighted_convolution_gradient(rho, mask, &spec.kernel, phi, g)?;
    Ok(saturate(w, spec.eps, mask))
}

/// `eps ∫ rho(y) grad eta(x - y) phi((y - x)·nu(x)) dy`, no normalisation.
pub fn i_linear_pt(rho: &ScalarField, mask: &DomainMask, spec: &OperatorSpec) -> Result<VectorField> {
    let (phi, nu) = spec.parts()?;
    let mut out = if phi.is_identity() {
        convolve_gradient(rho, mask, &spec.kernel)?
    } else {
        direct_sum(rho, mask, &spec.kernel, Some(nu), |off, _eta, grad, d| {
            let w = phi.value(-(off.0 * d.0 + off.1 * d.1));
            (grad.0 * w, grad.1 * w)
        })?
    };
    for k in 0..out.ux.len() {
        if mask.kind[k] == CellKind::Interior {
            out.ux[k] *= spec.eps;
            out.uy[k] *= spec.eps;
        } else {
            out.ux[k] = 0.0;
            out.uy[k] = 0.0;
        }
    }
    Ok(out)
}

/// `w = nu + I` together with the CFL speed bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct AdvectionField {
    pub w: VectorField,
    /// `sup |w|` over the Interior.
    pub max_norm: f64,
    /// `max_d sup |w_d|` over the Interior, the speed bound of each split sweep.
    pub max_component: f64,
}

pub fn advection_field(nu: &VectorField, i_field: &VectorField, mask: &DomainMask) -> Result<AdvectionField> {
    nu.grid.check_same(&mask.grid, "advection field")?;
    let w = nu.add(i_field)?;
    let max_norm = w.max_norm(mask);
    let max_component = w.max_component(mask);
    Ok(AdvectionField { w, max_norm, max_component })
}

/// Smallest discomfort intensity for which the gradient-avoidance model keeps
/// the crowd inside the walls: `eps * R * ||grad eta||_1`.
pub fn lambda_min_good(eps: f64, r_max: f64, k: &Kernel) -> Result<f64> {
    if eps < 0.0 {
        return config(format!("invariance threshold needs eps >= 0, got {eps}"));
    }
    Ok(eps * r_max * k.norm_l1_grad)
}

/// Threshold for the vision-weighted model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PtThreshold {
    /// `R ||eta||_{W1,1} ||phi||_{W1,inf} (1 + l ||grad g||_inf)`
    pub printed: f64,
    /// The same multiplied by `eps`.
    pub eps_scaled: f64,
    pub grad_g_inf: f64,
}

pub fn lambda_min_pt(
    eps: f64,
    r_max: f64,
    k: &Kernel,
    phi: &VisionWeight,
    g: &VectorField,
    mask: &DomainMask,
    ell: f64,
) -> Result<PtThreshold> {
    g.grid.check_same(&mask.grid, "lambda_min_pt")?;
    let grad_g_inf = grad_linf(g, mask);
    let printed = r_max * k.norm_w11 * phi.w1inf_norm() * (1.0 + ell * grad_g_inf);
    Ok(PtThreshold { printed, eps_scaled: eps.abs() * printed, grad_g_inf })
}

/// Central differences of `v` at an Interior cell, one-sided next to
/// non-Interior cells. Returns `[[dux/dx, dux/dy], [duy/dx, duy/dy]]`.
pub(crate) fn jacobian_at(v: &VectorField, mask: &DomainMask, i: usize, j: usize) -> [[f64; 2]; 2] {
    let g = v.grid;
    let comp = |c: &Vec<f64>| -> [f64; 2] {
        let at = |a: usize, b: usize| c[g.idx(a, b)];
        let ok = |a: usize, b: usize| mask.is_interior(a, b);
        let d = |lo: Option<(usize, usize)>, hi: Option<(usize, usize)>, h: f64| -> f64 {
            let lo = lo.filter(|&(a, b)| ok(a, b));
            let hi = hi.filter(|&(a, b)| ok(a, b));
            match (lo, hi) {
                (Some(l), Some(r)) => (at(r.0, r.1) - at(l.0, l.1)) / (2.0 * h),
                (Some(l), None) => (at(i, j) - at(l.0, l.1)) / h,
                (None, Some(r)) => (at(r.0, r.1) - at(i, j)) / h,
                (None, None) => 0.0,
            }
        };
        [
            d(i.checked_sub(1).map(|a| (a, j)), (i + 1 < g.nx).then_some((i + 1, j)), g.dx),
            d(j.checked_sub(1).map(|b| (i, b)), (j + 1 < g.ny).then_some((i, j + 1)), g.dy),
        ]
    };
    [comp(&v.ux), comp(&v.uy)]
}

/// `sup |grad v|` (Frobenius) over Interior cells.
pub fn grad_linf(v: &VectorField, mask: &DomainMask) -> f64 {
    let g = v.grid;
    let mut m = 0.0f64;
    for j in 0..g.ny {
        for i in 0..g.nx {
            if mask.is_interior(i, j) {
                let jac = jacobian_at(v, mask, i, j);
                let f = jac.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
                m = m.max(f);
            }
        }
    }
    m
}

/// `||grad div v||_1` by finite differences over Interior cells.
pub fn grad_div_l1(v: &VectorField, mask: &DomainMask) -> f64 {
    let g = v.grid;
    let mut div = VectorField::zeros(g);
    for j in 0..g.ny {
        for i in 0..g.nx {
            if mask.is_interior(i, j) {
                let jac = jacobian_at(v, mask, i, j);
                let k = g.idx(i, j);
                div.ux[k] = jac[0][0] + jac[1][1];
            }
        }
    }
    // reuse the Jacobian helper on (div, 0)
    let mut s = 0.0;
    for j in 0..g.ny {
        for i in 0..g.nx {
            if mask.is_interior(i, j) {
                let jac = jacobian_at(&div, mask, i, j);
                s += jac[0][0].abs() + jac[0][1].abs();
            }
        }
    }
    s * g.cell_area()
}

/// Outcome of the boundary condition `(nu + I)·n >= 0` on wall-adjacent cells.
#[derive(Clone, Debug, PartialEq)]
pub struct NagumoReport {
    pub min_wn: f64,
    pub checked: usize,
    pub violations: Vec<(usize, usize, f64)>,
}

impl NagumoReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    /// Line-oriented `key=value` serialisation.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "nagumo.min={:.17e}", self.min_wn);
        let _ = writeln!(s, "nagumo.checked={}", self.checked);
        let _ = writeln!(s, "nagumo.violations={}", self.violations.len());
        for (i, j, v) in &self.violations {
            let _ = writeln!(s, "nagumo.violation={i},{j},{v:.17e}");
        }
        let _ = writeln!(s, "nagumo.result={}", if self.passed() { "PASS" } else { "FAIL" });
        s
    }
}

pub const NAGUMO_TOL: f64 = 1e-9;

pub fn nagumo_check(w: &VectorField, wg: &WallGeometry, mask: &DomainMask) -> Result<NagumoReport> {
    w.grid.check_same(&mask.grid, "nagumo_check")?;
    wg.normal.grid.check_same(&mask.grid, "nagumo_check")?;
    let mut min_wn = f64::INFINITY;
    let mut violations = Vec::new();
    let mut checked = 0;
    for (i, j) in mask.wall_adjacent_cells() {
        let (wx, wy) = w.get(i, j);
        let (nx, ny) = wg.normal.get(i, j);
        if nx == 0.0 && ny == 0.0 {
            continue;
        }
        checked += 1;
        let d = wx * nx + wy * ny;
        min_wn = min_wn.min(d);
        if d < -NAGUMO_TOL {
            violations.push((i, j, d));
        }
    }
    Ok(NagumoReport { min_wn, checked, violations })
}

/// Constants bounding the gradient-avoidance operator and the TV growth rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundConstants {
    /// Bound on `||I(rho)||_{W1,inf}`.
    pub c_i_w1inf: f64,
    /// Bound on `||div I(rho)||_1`.
    pub c_i_div_l1: f64,
    /// Bound on `||grad div I(rho)||_1`.
    pub c_i_grad_div_l1: f64,
    /// The largest of the three, used as `C_I(||rho0||_1)`.
    pub c_i: f64,
    /// Lipschitz constant of `rho -> I(rho)`.
    pub k_i: f64,
    /// Exponential rate of the TV bound, `(2N + 1) ||q'||_inf (||grad nu||_inf + C_I)`.
    pub k_gronwall: f64,
    /// `W_2 = ∫_0^{π/2} cos^2 = π/4`.
    pub w2: f64,
    pub q_inf: f64,
    pub q_prime_inf: f64,
    pub grad_nu_inf: f64,
    pub grad_div_nu_l1: f64,
}

pub const SPACE_DIM: f64 = 2.0;

pub fn bound_constants(
    spec: &OperatorSpec,
    speed: &SpeedLaw,
    nu: &VectorField,
    mask: &DomainMask,
    rho0_mass: f64,
) -> Result<BoundConstants> {
    let n = &spec.kernel.norms;
    let eps = spec.eps.abs();
    let r = speed.r_max();
    let m = rho0_mass.abs();
    let (c_i_w1inf, c_i_div_l1, c_i_grad_div_l1, k_i) = match spec.kind {
        OperatorKind::Good => {
            let sup_i = eps * m * n.linf_grad;
            let grad_i = eps * m * n.grad_w1inf() * (1.0 + r * r * n.l1_grad * n.l1_hess);
            let grad2 = eps * r * r * m * n.grad_w21() * n.grad_w11().powi(2) * (5.0 + 3.0 * r * r * n.grad_w11().powi(2));
            let lip_inf = eps * (1.0 + r * r * n.l1_grad.powi(2)) * n.linf_grad;
            let lip_l1 = eps * (1.0 + r * r * n.l1_grad.powi(2)) * n.l1_grad
                + eps * n.grad_w11() * (1.0 + 8.0 * r * r * n.grad_w11().powi(2) + 3.0 * r.powi(4) * n.grad_w11().powi(4));
            (sup_i + grad_i, grad_i, grad2, lip_inf.max(lip_l1))
        }
        OperatorKind::Pt | OperatorKind::LinearPt => {
            // same structure with the weighted kernel eta*phi: norms of the
            // product are bounded by the kernel norms times ||phi||_{W2,inf}
            let (phi, g) = spec.parts()?;
            let phi_n = phi.w1inf_norm();
            let g_n = 1.0 + grad_linf(g, mask);
            let k_eff = phi_n * g_n * (1.0 + spec.kernel.r);
            let sup_i = eps * m * n.linf_grad * k_eff;
            let grad_i = eps * m * (n.grad_w1inf() + n.linf_grad) * k_eff * k_eff;
            let grad2 = eps * m * n.grad_w21() * k_eff.powi(3);
            let lip = eps * (n.linf_grad + n.grad_w11()) * k_eff * k_eff;
            (sup_i + grad_i, grad_i, grad2, lip)
        }
    };
    let c_i = c_i_w1inf.max(c_i_div_l1).max(c_i_grad_div_l1);
    let q_prime_inf = speed.max_abs_q_prime();
    let grad_nu_inf = grad_linf(nu, mask);
    let k_gronwall = (2.0 * SPACE_DIM + 1.0) * q_prime_inf * (grad_nu_inf + c_i);
    Ok(BoundConstants {
        c_i_w1inf,
        c_i_div_l1,
        c_i_grad_div_l1,
        c_i,
        k_i,
        k_gronwall,
        w2: std::f64::consts::FRAC_PI_4,
        q_inf: speed.max_q(),
        q_prime_inf,
        grad_nu_inf,
        grad_div_nu_l1: grad_div_l1(nu, mask),
    })
}

/// `TV(rho0) e^{kt} + t e^{kt} N W_N ||q||_inf (||grad div nu||_1 + C_I)`
pub fn tv_envelope(tv0: f64, t: f64, bc: &BoundConstants) -> f64 {
    let e = (bc.k_gronwall * t).exp();
    tv0 * e + t * e * SPACE_DIM * bc.w2 * bc.q_inf * (bc.grad_div_nu_l1 + bc.c_i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;
    use crate::kernels::build_polynomial_kernel;
    use rand::{Rng, SeedableRng};

    fn setup(n: usize, h: f64, r: f64) -> (Grid2D, DomainMask, Kernel) {
        let g = Grid2D::new(n, n, h, h, 0.0, 0.0).unwrap();
        (g, DomainMask::open(g), build_polynomial_kernel(r, &g, false).unwrap())
    }

    fn random_field(g: Grid2D, seed: u64) -> ScalarField {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        ScalarField::from_values(g, (0..g.len()).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    #[test]
    fn vision_weight_shape() {
        let phi = VisionWeight::ramp(0.4).unwrap();
        assert_eq!(phi.value(-1.0), 0.0);
        assert_eq!(phi.value(0.0), 0.0);
        assert_eq!(phi.value(0.4), 1.0);
        assert_eq!(phi.value(3.0), 1.0);
        assert!((phi.value(0.2) - 0.5).abs() < 1e-15);
        let h = 1e-7;
        let mut prev = 0.0;
        for k in 0..=100 {
            let s = -0.1 + 0.006 * k as f64;
            let v = phi.value(s);
            assert!(v >= prev && (0.0..=1.0).contains(&v));
            prev = v;
            assert!(phi.derivative(s) >= 0.0);
            let fd = (phi.value(s + h) - phi.value(s - h)) / (2.0 * h);
            assert!((fd - phi.derivative(s)).abs() < 1e-5);
        }
        // max phi' = 30/16/theta at the ramp midpoint
        assert!((phi.derivative(0.2) - 1.875 / 0.4).abs() < 1e-12);
        assert!(VisionWeight::ramp(0.0).is_err());
    }

    #[test]
    fn spec_validation() {
        let (_, _, k) = setup(20, 0.1, 0.3);
        assert!(OperatorSpec::good(-1.0, k.clone()).validate().is_ok());
        let mut s = OperatorSpec::good(0.4, k);
        s.kind = OperatorKind::Pt;
        assert!(s.validate().is_err());
        s.kind = OperatorKind::LinearPt;
        s.eps = -0.1;
        assert!(s.validate().is_err());
    }

    #[test]
    fn zero_density_gives_zero_operator() {
        let (g, m, k) = setup(20, 0.1, 0.3);
        let z = ScalarField::zeros(g);
        let dir = VectorField::constant(g, 1.0, 0.0);
        let good = OperatorSpec::good(0.4, k.clone());
        let pt = OperatorSpec { kind: OperatorKind::Pt, vision: Some(VisionWeight::ramp(0.15).unwrap()), g_field: Some(dir), ..good.clone() };
        let lin = OperatorSpec { kind: OperatorKind::LinearPt, ..pt.clone() };
        for s in [&good, &pt, &lin] {
            let v = s.apply(&z, &m).unwrap();
            assert!(v.ux.iter().chain(&v.uy).all(|x| *x == 0.0));
        }
    }

    #[test]
    fn constant_density_gives_zero_inside() {
        let (g, m, k) = setup(30, 0.1, 0.4);
        let v = i_good(&ScalarField::constant(g, 0.6), &m, &OperatorSpec::good(0.4, k)).unwrap();
        for j in 5..25 {
            for i in 5..25 {
                assert!(v.get(i, j).0.abs() < 1e-13 && v.get(i, j).1.abs() < 1e-13);
            }
        }
    }

    #[test]
    fn linear_ramp_matches_separable_oracle() {
        // rho = x on the whole support of the cells checked
        let h = 0.05;
        let r = 0.3;
        let (g, m, k) = setup(40, h, r);
        let rho = ScalarField::from_fn(g, |x, _| x);
        let eps = 0.4;
        let v = i_good(&rho, &m, &OperatorSpec::good(eps, k)).unwrap();
        // oracle: G_x = sum_m (x - m h) K'(m h) h * sum_n K(n h) h  = -sum_m m h K'(m h) h * sum K h
        let p = crate::kernels::PolyProfile { r };
        let half = 6i32;
        let sk: f64 = (-half..=half).map(|n| p.value(n as f64 * h) * h).sum();
        let sg: f64 = (-half..=half).map(|mm| -(mm as f64 * h) * p.d1(mm as f64 * h) * h).sum();
        let s = sk * sg;
        // close to the continuous value (∫K)^2
        assert!((s - (32.0 * r / 35.0).powi(2)).abs() < 1e-3);
        let expect = -eps * s / (1.0 + s * s).sqrt();
        for j in 8..32 {
            for i in 8..32 {
                let (ix, iy) = v.get(i, j);
                assert!((ix - expect).abs() < 1e-10, "{ix} vs {expect}");
                assert!(iy.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn operator_norm_bounded_by_eps() {
        let (g, m, k) = setup(32, 0.05, 0.2);
        let rho = ScalarField::from_values(g, random_field(g, 9).values.iter().map(|v| 40.0 * v).collect()).unwrap();
        let dir = VectorField::constant(g, 0.6, 0.8);
        let good = OperatorSpec::good(0.7, k);
        let pt = OperatorSpec { kind: OperatorKind::Pt, vision: Some(VisionWeight::ramp(0.1).unwrap()), g_field: Some(dir), ..good.clone() };
        for s in [&good, &pt] {
            let v = s.apply(&rho, &m).unwrap();
            for q in 0..g.len() {
                assert!(v.norm_at(q) <= 0.7 + 1e-15);
            }
        }
    }

    #[test]
    fn pt_with_identity_weight_is_good() {
        let (g, m, k) = setup(24, 0.1, 0.3);
        let rho = random_field(g, 4);
        let good = OperatorSpec::good(0.4, k);
        let pt = OperatorSpec {
            kind: OperatorKind::Pt,
            vision: Some(VisionWeight::One),
            g_field: Some(VectorField::constant(g, 1.0, 0.0)),
            ..good.clone()
        };
        assert_eq!(i_pt(&rho, &m, &pt).unwrap(), i_good(&rho, &m, &good).unwrap());
    }

    #[test]
    fn pt_ignores_crowd_behind() {
        let (g, m, k) = setup(30, 0.05, 0.3);
        let mut rho = ScalarField::zeros(g);
        rho.set(10, 15, 50.0);
        let spec = OperatorSpec {
            kind: OperatorKind::Pt,
            eps: 0.4,
            kernel: k,
            vision: Some(VisionWeight::ramp(0.15).unwrap()),
            g_field: Some(VectorField::constant(g, 1.0, 0.0)),
        };
        let v = i_pt(&rho, &m, &spec).unwrap();
        // x ahead of the crowd: (y - x)·g < 0
        assert_eq!(v.get(14, 15), (0.0, 0.0));
        assert_eq!(v.get(13, 17), (0.0, 0.0));
        // x behind the crowd sees it
        assert!(v.get(6, 15).0.abs() > 0.0);
    }

    #[test]
    fn weighted_gradient_single_cell_matches_point_mass_oracle() {
        let h = 0.05;
        let r = 0.4;
        let (g, m, k) = setup(40, h, r);
        let c = (20, 20);
        let mass = 1.0;
        let mut rho = ScalarField::zeros(g);
        rho.set(c.0, c.1, mass / g.cell_area());
        let phi = VisionWeight::ramp(r / 2.0).unwrap();
        let dir = VectorField::constant(g, 1.0, 0.0);
        let w = crate::kernels::weighted_convolution_gradient(&rho, &m, &k, &phi, &dir).unwrap();
        // analytic integrand at a point mass: grad_x[eta(x-c) phi((c-x)·e1)]
        let p = crate::kernels::PolyProfile { r };
        let (cx, cy) = g.cell_center(c.0, c.1);
        for (i, j) in [(15, 20), (14, 22), (17, 18), (12, 21)] {
            let (x, y) = g.cell_center(i, j);
            let (z1, z2) = (x - cx, y - cy);
            let s = cx - x;
            let eta = p.value(z1) * p.value(z2);
            let grad = (p.d1(z1) * p.value(z2), p.value(z1) * p.d1(z2));
            let fx = grad.0 * phi.value(s) - eta * phi.derivative(s);
            let fy = grad.1 * phi.value(s);
            let (wx, wy) = w.get(i, j);
            assert!((wx - mass * fx).abs() <= 1e-6 * fx.abs().max(1e-12), "{wx} vs {fx}");
            assert!((wy - mass * fy).abs() <= 1e-6 * fy.abs().max(1e-12), "{wy} vs {fy}");
        }
    }

    #[test]
    fn weighted_gradient_smooth_density_matches_oversampled_quadrature() {
        let h = 0.05;
        let r = 0.4;
        let (g, m, k) = setup(40, h, r);
        let bump = |x: f64, y: f64| {
            let d2 = (x - 1.0).powi(2) + (y - 1.0).powi(2);
            if d2 < 0.36 { (1.0 - d2 / 0.36).powi(3) } else { 0.0 }
        };
        let rho = ScalarField::from_fn(g, bump);
        let phi = VisionWeight::ramp(0.2).unwrap();
        let dir = VectorField::constant(g, 0.6, 0.8);
        let w = crate::kernels::weighted_convolution_gradient(&rho, &m, &k, &phi, &dir).unwrap();
        let p = crate::kernels::PolyProfile { r };
        let (gx, gy) = (0.6, 0.8);
        let (x, y) = g.cell_center(18, 17);
        let fine = h / 8.0;
        let n = (2.0 * r / fine) as i32;
        let (mut ox, mut oy) = (0.0, 0.0);
        for a in 0..n {
            for b in 0..n {
                let z1 = -r + (a as f64 + 0.5) * fine;
                let z2 = -r + (b as f64 + 0.5) * fine;
                let yv = bump(x - z1, y - z2);
                let s = -(z1 * gx + z2 * gy);
                let eta = p.value(z1) * p.value(z2);
                ox += yv * (p.d1(z1) * p.value(z2) * phi.value(s) - eta * phi.derivative(s) * gx);
                oy += yv * (p.value(z1) * p.d1(z2) * phi.value(s) - eta * phi.derivative(s) * gy);
            }
        }
        ox *= fine * fine;
        oy *= fine * fine;
        let (wx, wy) = w.get(18, 17);
        let scale = ox.hypot(oy);
        assert!((wx - ox).abs() < 2e-2 * scale && (wy - oy).abs() < 2e-2 * scale, "({wx},{wy}) vs ({ox},{oy})");
    }

    #[test]
    fn linear_pt_is_linear() {
        let (g, m, k) = setup(24, 0.1, 0.3);
        let dir = VectorField::constant(g, 0.0, 1.0);
        let spec = OperatorSpec {
            kind: OperatorKind::LinearPt,
            eps: 0.3,
            kernel: k,
            vision: Some(VisionWeight::ramp(0.15).unwrap()),
            g_field: Some(dir),
        };
        let r1 = random_field(g, 1);
        let r2 = random_field(g, 2);
        let (a, b) = (1.7, -0.6);
        let comb = ScalarField::from_values(g, r1.values.iter().zip(&r2.values).map(|(u, v)| a * u + b * v).collect()).unwrap();
        let i1 = i_linear_pt(&r1, &m, &spec).unwrap();
        let i2 = i_linear_pt(&r2, &m, &spec).unwrap();
        let ic = i_linear_pt(&comb, &m, &spec).unwrap();
        for q in 0..g.len() {
            assert!((ic.ux[q] - (a * i1.ux[q] + b * i2.ux[q])).abs() < 1e-12);
            assert!((ic.uy[q] - (a * i1.uy[q] + b * i2.uy[q])).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_pt_point_mass_closed_form() {
        let (g, m, k) = setup(30, 0.05, 0.3);
        let spec = OperatorSpec {
            kind: OperatorKind::LinearPt,
            eps: 0.5,
            kernel: k.clone(),
            vision: Some(VisionWeight::One),
            g_field: Some(VectorField::constant(g, 1.0, 0.0)),
        };
        let mut rho = ScalarField::zeros(g);
        let mass = 0.8;
        rho.set(15, 15, mass / g.cell_area());
        let v = i_linear_pt(&rho, &m, &spec).unwrap();
        let (cx, cy) = g.cell_center(15, 15);
        for (i, j) in [(12, 15), (17, 19), (15, 11)] {
            let (x, y) = g.cell_center(i, j);
            let gr = k.grad(x - cx, y - cy);
            let (vx, vy) = v.get(i, j);
            assert!((vx - 0.5 * mass * gr.0).abs() < 1e-12);
            assert!((vy - 0.5 * mass * gr.1).abs() < 1e-12);
        }
    }

    #[test]
    fn reflection_symmetry_in_corridor() {
        let g = Grid2D::new(30, 21, 0.05, 0.05, 0.0, -0.5).unwrap();
        let mut m = DomainMask::open(g);
        for i in 0..30 {
            m.set(i, 0, CellKind::Wall);
            m.set(i, 20, CellKind::Wall);
        }
        let k = build_polynomial_kernel(0.2, &g, false).unwrap();
        let rho = random_field(g, 11);
        let mut refl = rho.clone();
        for j in 0..21 {
            for i in 0..30 {
                refl.set(i, 20 - j, rho.get(i, j));
            }
        }
        let spec = OperatorSpec::good(0.4, k);
        let a = i_good(&rho, &m, &spec).unwrap();
        let b = i_good(&refl, &m, &spec).unwrap();
        for j in 0..21 {
            for i in 0..30 {
                let (ax, ay) = a.get(i, j);
                let (bx, by) = b.get(i, 20 - j);
                assert!((ax - bx).abs() < 1e-12);
                assert!((ay + by).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn advection_field_sum_and_bound() {
        let (g, m, k) = setup(20, 0.1, 0.3);
        let nu = VectorField::constant(g, 1.0, 0.0);
        let a = advection_field(&nu, &VectorField::zeros(g), &m).unwrap();
        assert_eq!(a.w, nu);
        assert_eq!(a.max_norm, 1.0);
        let rho = ScalarField::from_values(g, random_field(g, 5).values.iter().map(|v| 10.0 * v).collect()).unwrap();
        let i = i_good(&rho, &m, &OperatorSpec::good(0.4, k)).unwrap();
        let a = advection_field(&nu, &i, &m).unwrap();
        assert!(a.max_norm <= 1.0 + 0.4 + 1e-15);
        assert!(a.max_component <= a.max_norm);
    }

    #[test]
    fn good_threshold() {
        let (_, _, k) = setup(40, 0.1, 0.6);
        assert_eq!(lambda_min_good(0.0, 1.0, &k).unwrap(), 0.0);
        let one = lambda_min_good(0.4, 1.0, &k).unwrap();
        let two = lambda_min_good(0.4, 2.0, &k).unwrap();
        assert!((two - 2.0 * one).abs() < 1e-15);
        assert!(lambda_min_good(-0.1, 1.0, &k).is_err());
    }

    #[test]
    fn pt_threshold_reductions() {
        let (g, m, k) = setup(40, 0.05, 0.8);
        let dir = VectorField::constant(g, 1.0, 0.0);
        let ell = k.support_diameter();
        let t = lambda_min_pt(0.4, 1.0, &k, &VisionWeight::One, &dir, &m, ell).unwrap();
        assert_eq!(t.grad_g_inf, 0.0);
        assert!((t.printed - k.norm_w11).abs() < 1e-15);
        let phi = VisionWeight::ramp(0.4).unwrap();
        let t = lambda_min_pt(0.4, 1.0, &k, &phi, &dir, &m, ell).unwrap();
        assert!((t.printed - k.norm_w11 * (1.0 + 1.875 / 0.4)).abs() < 1e-12);
        assert!((t.eps_scaled - 0.4 * t.printed).abs() < 1e-15);
    }

    #[test]
    fn nagumo_examples() {
        let g = Grid2D::new(10, 10, 0.1, 0.1, 0.0, 0.0).unwrap();
        let m = DomainMask::walled_box(g);
        let wg = crate::geometry::wall_geometry(&m, 0.2, 1.0).unwrap();
        let rep = nagumo_check(&wg.normal, &wg, &m).unwrap();
        assert!(rep.passed());
        assert!((rep.min_wn - 1.0).abs() < 1e-12);
        let mut w = wg.normal.clone();
        let (a, b) = (1, 5);
        let n = wg.normal.get(a, b);
        w.set(a, b, (-n.0, -n.1));
        let rep = nagumo_check(&w, &wg, &m).unwrap();
        assert_eq!(rep.violations.len(), 1);
        assert_eq!((rep.violations[0].0, rep.violations[0].1), (a, b));
        assert!(rep.to_text().contains("nagumo.result=FAIL"));
    }

    #[test]
    fn bound_constant_reductions() {
        let g = Grid2D::new(20, 20, 0.1, 0.1, 0.0, 0.0).unwrap();
        let m = DomainMask::walled_box(g);
        let k = build_polynomial_kernel(0.4, &g, false).unwrap();
        let speed = SpeedLaw::linear(0.5, 1.0).unwrap();
        let mut nu = VectorField::zeros(g);
        for j in 0..20 {
            for i in 0..20 {
                let (x, _) = g.cell_center(i, j);
                nu.set(i, j, (1.0, 0.3 * x));
            }
        }
        let bc = bound_constants(&OperatorSpec::good(0.0, k.clone()), &speed, &nu, &m, 3.0).unwrap();
        assert_eq!(bc.c_i, 0.0);
        assert_eq!(bc.w2, std::f64::consts::FRAC_PI_4);
        assert!((bc.grad_nu_inf - 0.3).abs() < 1e-12);
        assert!((bc.k_gronwall - 5.0 * 0.5 * 0.3).abs() < 1e-12);
        let bc = bound_constants(&OperatorSpec::good(0.4, k), &speed, &nu, &m, 3.0).unwrap();
        assert!(bc.c_i > 0.0 && bc.k_i > 0.0 && bc.k_gronwall > 5.0 * 0.5 * 0.3);
    }
}
