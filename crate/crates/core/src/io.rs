//! Plain-text field and mask files.
//!
//! ```text
//! FIELD nx ny dx dy x0 y0 t
//! <ny lines, j = 0 .. ny-1, each nx values with 17 significant digits>
//!
//! MASK nx ny dx dy x0 y0 t
//! <ny lines of nx characters: '.' interior, '#' wall, 'E' exit>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{CellKind, DomainMask, Grid2D, ScalarField};

fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn header(tag: &str, g: &Grid2D, t: f64) -> String {
    format!(
        "{tag} {} {} {} {} {} {} {}",
        g.nx,
        g.ny,
        fmt_real(g.dx),
        fmt_real(g.dy),
        fmt_real(g.x0),
        fmt_real(g.y0),
        fmt_real(t)
    )
}

pub fn field_to_string(f: &ScalarField, t: f64) -> String {
    let g = f.grid;
    let mut s = header("FIELD", &g, t);
    s.push('\n');
    for j in 0..g.ny {
        for i in 0..g.nx {
            if i > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{}", fmt_real(f.get(i, j)));
        }
        s.push('\n');
    }
    s
}

pub fn mask_to_string(m: &DomainMask) -> String {
    let g = m.grid;
    let mut s = header("MASK", &g, 0.0);
    s.push('\n');
    for j in 0..g.ny {
        for i in 0..g.nx {
            s.push(m.get(i, j).to_char());
        }
        s.push('\n');
    }
    s
}

fn parse_header(line: &str, tag: &str) -> Result<(Grid2D, f64)> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 8 || parts[0] != tag {
        return Err(Error::Parse(format!("expected `{tag} nx ny dx dy x0 y0 t`, got `{line}`")));
    }
    let int = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("{s}: {e}")));
    let real = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s}: {e}")));
    let grid = Grid2D::new(
        int(parts[1])?,
        int(parts[2])?,
        real(parts[3])?,
        real(parts[4])?,
        real(parts[5])?,
        real(parts[6])?,
    )?;
    Ok((grid, real(parts[7])?))
}

/// Parses a field file, returning the field and its time stamp.
pub fn parse_field(text: &str) -> Result<(ScalarField, f64)> {
    let mut lines = text.lines();
    let (grid, t) = parse_header(lines.next().unwrap_or(""), "FIELD")?;
    let mut values = Vec::with_capacity(grid.len());
    for j in 0..grid.ny {
        let line = lines.next().ok_or_else(|| Error::Parse(format!("missing row {j}")))?;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("row {j}: {s}: {e}"))))
            .collect::<Result<_>>()?;
        if row.len() != grid.nx {
            return Err(Error::Parse(format!("row {j}: expected {} values, got {}", grid.nx, row.len())));
        }
        values.extend(row);
    }
    Ok((ScalarField::from_values(grid, values)?, t))
}

pub fn parse_mask(text: &str) -> Result<DomainMask> {
    let mut lines = text.lines();
    let (grid, _) = parse_header(lines.next().unwrap_or(""), "MASK")?;
    let mut kind = Vec::with_capacity(grid.len());
    for j in 0..grid.ny {
        let line = lines.next().ok_or_else(|| Error::Parse(format!("missing mask row {j}")))?;
        let row: Vec<CellKind> = line
            .trim_end()
            .chars()
            .map(|c| CellKind::from_char(c).ok_or_else(|| Error::Parse(format!("row {j}: bad mask char {c:?}"))))
            .collect::<Result<_>>()?;
        if row.len() != grid.nx {
            return Err(Error::Parse(format!("mask row {j}: expected {} cells, got {}", grid.nx, row.len())));
        }
        kind.extend(row);
    }
    DomainMask::from_kinds(grid, kind)
}

pub fn write_field(path: &Path, f: &ScalarField, t: f64) -> Result<()> {
    std::fs::write(path, field_to_string(f, t))?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<(ScalarField, f64)> {
    parse_field(&std::fs::read_to_string(path)?)
}

pub fn write_mask(path: &Path, m: &DomainMask) -> Result<()> {
    std::fs::write(path, mask_to_string(m))?;
    Ok(())
}

pub fn read_mask(path: &Path) -> Result<DomainMask> {
    parse_mask(&std::fs::read_to_string(path)?)
}

/// Snapshot file name for a requested time, e.g. `rho_t2.529000.fld`.
pub fn snapshot_name(t: f64) -> String {
    format!("rho_t{t:.6}.fld")
}
