//! Separable polynomial mollifiers and discrete convolution.
//!
//! The kernel is `eta(x1, x2) = c * K(x1) * K(x2)` with `K(s) = (1 - (s/r)^2)^3`
//! on `[-r, r]`. Convolutions are evaluated as two banded passes (rows, then
//! columns), which is the matrix-product form `A * rho * B`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{DomainMask, Grid2D, ScalarField, VectorField};
use crate::nonlocal::VisionWeight;

/// 1D profile `(1 - u^2)^3`, `u = s / r`, and its first three derivatives in `s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolyProfile {
    pub r: f64,
}

impl PolyProfile {
    pub fn value(&self, s: f64) -> f64 {
        let u = s / self.r;
        if u.abs() >= 1.0 {
            return 0.0;
        }
        let w = 1.0 - u * u;
        w * w * w
    }

    pub fn d1(&self, s: f64) -> f64 {
        let u = s / self.r;
        if u.abs() >= 1.0 {
            return 0.0;
        }
        let w = 1.0 - u * u;
        -6.0 * u * w * w / self.r
    }

    pub fn d2(&self, s: f64) -> f64 {
        let u = s / self.r;
        if u.abs() >= 1.0 {
            return 0.0;
        }
        -6.0 * (1.0 - u * u) * (1.0 - 5.0 * u * u) / (self.r * self.r)
    }

    pub fn d3(&self, s: f64) -> f64 {
        let u = s / self.r;
        if u.abs() >= 1.0 {
            return 0.0;
        }
        (72.0 * u - 120.0 * u * u * u) / (self.r * self.r * self.r)
    }
}

/// Quadrature norms of the 2D kernel (gradient norms sum the component norms,
/// which bounds the Euclidean ones from above).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KernelNorms {
    pub l1: f64,
    pub linf: f64,
    pub l1_grad: f64,
    pub linf_grad: f64,
    pub l1_hess: f64,
    pub linf_hess: f64,
    pub l1_third: f64,
}

impl KernelNorms {
    /// `||eta||_{W^{1,1}}`
    pub fn w11(&self) -> f64 {
        self.l1 + self.l1_grad
    }

    /// `||grad eta||_{W^{1,1}}`
    pub fn grad_w11(&self) -> f64 {
        self.l1_grad + self.l1_hess
    }

    /// `||grad eta||_{W^{1,inf}}`
    pub fn grad_w1inf(&self) -> f64 {
        self.linf_grad + self.linf_hess
    }

    /// `||grad eta||_{W^{2,1}}`
    pub fn grad_w21(&self) -> f64 {
        self.l1_grad + self.l1_hess + self.l1_third
    }
}

/// Sampled separable mollifier on a fixed grid spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    pub r: f64,
    pub dx: f64,
    pub dy: f64,
    pub half_x: usize,
    pub half_y: usize,
    /// `kx[m + half_x]` is the x factor at offset `m * dx`.
    pub kx: Vec<f64>,
    pub ky: Vec<f64>,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub normalized: bool,
    /// Amplitudes of the two factors, so that `eta = cx K(x1) * cy K(x2)`.
    pub cx: f64,
    pub cy: f64,
    pub profile: PolyProfile,
    pub norm_l1_grad: f64,
    pub norm_w11: f64,
    pub norms: KernelNorms,
}

/// Which quantity [`convolve`] produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Derivative {
    Value,
    Ddx,
    Ddy,
}

fn sample(profile: &PolyProfile, h: f64, half: usize, f: impl Fn(&PolyProfile, f64) -> f64) -> Vec<f64> {
    (0..=2 * half)
        .map(|k| f(profile, (k as f64 - half as f64) * h))
        .collect()
}

/// Composite midpoint rule on `[-r, r]` with steps no larger than `h`;
/// the origin is always a node.
fn midpoint(r: f64, h: f64, f: impl Fn(f64) -> f64) -> f64 {
    let n = 2 * (r / h).ceil().max(1.0) as usize;
    let step = 2.0 * r / n as f64;
    (0..n).map(|k| f(-r + (k as f64 + 0.5) * step)).sum::<f64>() * step
}

fn sup(r: f64, h: f64, f: impl Fn(f64) -> f64) -> f64 {
    let n = (2.0 * r / h).ceil().max(1.0) as usize;
    let step = 2.0 * r / n as f64;
    (0..=n).map(|k| f(-r + k as f64 * step).abs()).fold(0.0, f64::max)
}

/// Builds `eta(x) = [1-(x1/r)^2]^3 [1-(x2/r)^2]^3` on `[-r, r]^2`, sampled at the
/// cell offsets of `grid`. With `normalized`, the factors are rescaled so the
/// discrete integral `dx*dy*sum(kx ⊗ ky)` equals one.
pub fn build_polynomial_kernel(r: f64, grid: &Grid2D, normalized: bool) -> Result<Kernel> {
    let h = grid.dx.max(grid.dy);
    if !(r.is_finite() && r >= 2.0 * h) {
        return Err(Error::Config(format!(
            "kernel radius {r} must be at least two cells ({})",
            2.0 * h
        )));
    }
    let profile = PolyProfile { r };
    let half_x = (r / grid.dx).ceil() as usize;
    let half_y = (r / grid.dy).ceil() as usize;
    let mut kx = sample(&profile, grid.dx, half_x, PolyProfile::value);
    let mut ky = sample(&profile, grid.dy, half_y, PolyProfile::value);
    let mut gx = sample(&profile, grid.dx, half_x, PolyProfile::d1);
    let mut gy = sample(&profile, grid.dy, half_y, PolyProfile::d1);

    let (mut cx, mut cy) = (1.0, 1.0);
    if normalized {
        cx = 1.0 / (grid.dx * kx.iter().sum::<f64>());
        cy = 1.0 / (grid.dy * ky.iter().sum::<f64>());
        kx.iter_mut().chain(gx.iter_mut()).for_each(|v| *v *= cx);
        ky.iter_mut().chain(gy.iter_mut()).for_each(|v| *v *= cy);
    }

    let hq = grid.dx.min(grid.dy) / 64.0;
    let i0 = midpoint(r, hq, |s| profile.value(s));
    let i1 = midpoint(r, hq, |s| profile.d1(s).abs());
    let i2 = midpoint(r, hq, |s| profile.d2(s).abs());
    let i3 = midpoint(r, hq, |s| profile.d3(s).abs());
    let s0 = sup(r, hq, |s| profile.value(s));
    let s1 = sup(r, hq, |s| profile.d1(s));
    let s2 = sup(r, hq, |s| profile.d2(s));
    let a = cx * cy;
    let norms = KernelNorms {
        l1: a * i0 * i0,
        linf: a * s0 * s0,
        l1_grad: a * 2.0 * i0 * i1,
        linf_grad: a * 2.0 * s0 * s1,
        l1_hess: a * (2.0 * i2 * i0 + 2.0 * i1 * i1),
        linf_hess: a * (2.0 * s2 * s0 + 2.0 * s1 * s1),
        l1_third: a * (2.0 * i3 * i0 + 6.0 * i2 * i1),
    };

    Ok(Kernel {
        r,
        dx: grid.dx,
        dy: grid.dy,
        half_x,
        half_y,
        kx,
        ky,
        gx,
        gy,
        normalized,
        cx,
        cy,
        profile,
        norm_l1_grad: norms.l1_grad,
        norm_w11: norms.w11(),
        norms,
    })
}

impl Kernel {
    /// Analytic kernel value at an arbitrary offset.
    pub fn value(&self, z1: f64, z2: f64) -> f64 {
        self.cx * self.cy * self.profile.value(z1) * self.profile.value(z2)
    }

    /// Analytic kernel gradient at an arbitrary offset.
    pub fn grad(&self, z1: f64, z2: f64) -> (f64, f64) {
        let a = self.cx * self.cy;
        (
            a * self.profile.d1(z1) * self.profile.value(z2),
            a * self.profile.value(z1) * self.profile.d1(z2),
        )
    }

    /// The separable profile is not a function of `|x|` alone.
    pub fn is_radial(&self) -> bool {
        false
    }

    /// Support diameter of the square support `[-r, r]^2`.
    pub fn support_diameter(&self) -> f64 {
        2.0 * self.r * std::f64::consts::SQRT_2
    }

    pub(crate) fn check_grid(&self, g: &Grid2D) -> Result<()> {
        if self.dx != g.dx || self.dy != g.dy {
            return Err(Error::Structural(format!(
                "kernel sampled at ({}, {}) but grid spacing is ({}, {})",
                self.dx, self.dy, g.dx, g.dy
            )));
        }
        Ok(())
    }
}

/// Banded 1D pass along x: `out[j][i] = sum_m a[m] * f[j][i - m]`.
fn pass_x(g: &Grid2D, f: &[f64], a: &[f64], half: usize) -> Vec<f64> {
    let nx = g.nx;
    let mut out = vec![0.0; f.len()];
    out.par_chunks_mut(nx).zip(f.par_chunks(nx)).for_each(|(orow, frow)| {
        for (i, o) in orow.iter_mut().enumerate() {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(nx - 1);
            let mut s = 0.0;
            for h in lo..=hi {
                // offset m = i - h
                s += a[i + half - h] * frow[h];
            }
            *o = s;
        }
    });
    out
}

/// Banded 1D pass along y: `out[j][i] = sum_n b[n] * f[j - n][i]`.
fn pass_y(g: &Grid2D, f: &[f64], b: &[f64], half: usize) -> Vec<f64> {
    let (nx, ny) = (g.nx, g.ny);
    let mut out = vec![0.0; f.len()];
    out.par_chunks_mut(nx).enumerate().for_each(|(j, orow)| {
        let lo = j.saturating_sub(half);
        let hi = (j + half).min(ny - 1);
        for k in lo..=hi {
            let w = b[j + half - k];
            if w == 0.0 {
                continue;
            }
            let frow = &f[k * nx..(k + 1) * nx];
            for (o, v) in orow.iter_mut().zip(frow) {
                *o += w * v;
            }
        }
    });
    out
}

/// Density restricted to the Interior (Wall and Exit cells read as zero).
fn restricted(rho: &ScalarField, mask: &DomainMask) -> Vec<f64> {
    rho.values
        .iter()
        .zip(&mask.kind)
        .map(|(v, k)| if *k == crate::grid::CellKind::Interior { *v } else { 0.0 })
        .collect()
}

/// `rho * eta` (or one of its partial derivatives) restricted to the domain.
pub fn convolve(rho: &ScalarField, mask: &DomainMask, k: &Kernel, which: Derivative) -> Result<ScalarField> {
    rho.grid.check_same(&mask.grid, "convolve")?;
    k.check_grid(&rho.grid)?;
    let g = rho.grid;
    let f = restricted(rho, mask);
    let (a, b) = match which {
        Derivative::Value => (&k.kx, &k.ky),
        Derivative::Ddx => (&k.gx, &k.ky),
        Derivative::Ddy => (&k.kx, &k.gy),
    };
    let tmp = pass_x(&g, &f, a, k.half_x);
    let mut out = pass_y(&g, &tmp, b, k.half_y);
    let area = g.cell_area();
    out.iter_mut().for_each(|v| *v *= area);
    Ok(ScalarField { grid: g, values: out })
}

/// `grad (rho * eta)` as a vector field.
pub fn convolve_gradient(rho: &ScalarField, mask: &DomainMask, k: &Kernel) -> Result<VectorField> {
    let gx = convolve(rho, mask, k, Derivative::Ddx)?;
    let gy = convolve(rho, mask, k, Derivative::Ddy)?;
    Ok(VectorField { grid: rho.grid, ux: gx.values, uy: gy.values })
}

/// Direct quadrature over the kernel support of
/// `sum_y rho(y) * term(offset, eta, grad eta, dir(x))`, one cell at a time.
/// `offset` is `x - y`.
pub(crate) fn direct_sum(
    rho: &ScalarField,
    mask: &DomainMask,
    k: &Kernel,
    dir: Option<&VectorField>,
    term: impl Fn((f64, f64), f64, (f64, f64), (f64, f64)) -> (f64, f64) + Sync,
) -> Result<VectorField> {
    rho.grid.check_same(&mask.grid, "weighted convolution")?;
    k.check_grid(&rho.grid)?;
    if let Some(d) = dir {
        rho.grid.check_same(&d.grid, "direction field")?;
    }
    let g = rho.grid;
    let f = restricted(rho, mask);
    let (hx, hy) = (k.half_x as isize, k.half_y as isize);
    let (nx, ny) = (g.nx as isize, g.ny as isize);
    let area = g.cell_area();
    let mut ux = vec![0.0; g.len()];
    let mut uy = vec![0.0; g.len()];
    ux.par_chunks_mut(g.nx)
        .zip(uy.par_chunks_mut(g.nx))
        .enumerate()
        .for_each(|(j, (rx, ry))| {
            let j = j as isize;
            for i in 0..nx {
                let d = dir.map_or((0.0, 0.0), |d| d.get(i as usize, j as usize));
                let (mut sx, mut sy) = (0.0, 0.0);
                for n in -hy..=hy {
                    let jj = j - n;
                    if jj < 0 || jj >= ny {
                        continue;
                    }
                    let kyv = k.ky[(n + hy) as usize];
                    let gyv = k.gy[(n + hy) as usize];
                    for m in -hx..=hx {
                        let ii = i - m;
                        if ii < 0 || ii >= nx {
                            continue;
                        }
                        let r = f[(jj * nx + ii) as usize];
                        if r == 0.0 {
                            continue;
                        }
                        let kxv = k.kx[(m + hx) as usize];
                        let gxv = k.gx[(m + hx) as usize];
                        let off = (m as f64 * g.dx, n as f64 * g.dy);
                        let (tx, ty) = term(off, kxv * kyv, (gxv * kyv, kxv * gyv), d);
                        sx += r * tx;
                        sy += r * ty;
                    }
                }
                rx[i as usize] = sx * area;
                ry[i as usize] = sy * area;
            }
        });
    Ok(VectorField { grid: g, ux, uy })
}

/// `grad_x ∫ rho(y) eta(x - y) phi((y - x)·g(x)) dy` with `g` frozen at `x`.
///
/// The product rule gives `grad eta * phi - eta * phi' * g(x)`; the term in
/// `grad g` is dropped. With `phi ≡ 1` this is exactly [`convolve_gradient`].
pub fn weighted_convolution_gradient(
    rho: &ScalarField,
    mask: &DomainMask,
    k: &Kernel,
    phi: &VisionWeight,
    g: &VectorField,
) -> Result<VectorField> {
    if phi.is_identity() {
        rho.grid.check_same(&g.grid, "direction field")?;
        return convolve_gradient(rho, mask, k);
    }
    weighted_convolution_gradient_direct(rho, mask, k, phi, g)
}

/// Same as [`weighted_convolution_gradient`] but always by direct quadrature.
pub fn weighted_convolution_gradient_direct(
    rho: &ScalarField,
    mask: &DomainMask,
    k: &Kernel,
    phi: &VisionWeight,
    g: &VectorField,
) -> Result<VectorField> {
    direct_sum(rho, mask, k, Some(g), |off, eta, grad, d| {
        // (y - x)·g = -(offset·g)
        let s = -(off.0 * d.0 + off.1 * d.1);
        let w = phi.value(s);
        let wp = phi.derivative(s);
        (grad.0 * w - eta * wp * d.0, grad.1 * w - eta * wp * d.1)
    })
}
