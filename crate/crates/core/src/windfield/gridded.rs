//! Text-file gridded winds with multilinear interpolation.
//!
//! ```text
//! # comment
//! axis x: -200 200          (km)
//! axis y: -200 200          (km)
//! axis z: 15000 25000       (m)
//! axis t: 0 2880            (min)
//! u v                       one line per cell, x-major (t varies fastest)
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::{check_query, WindModel, WindSample};
use crate::{Error, Result};

/// Raw grid contents. `east`/`north` are indexed
/// `((ix * ny + iy) * nz + iz) * nt + it`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub zs: Vec<f64>,
    pub ts: Vec<f64>,
    pub east: Vec<f64>,
    pub north: Vec<f64>,
}

impl WindGrid {
    pub fn cell_count(&self) -> usize {
        self.xs.len() * self.ys.len() * self.zs.len() * self.ts.len()
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize, it: usize) -> usize {
        ((ix * self.ys.len() + iy) * self.zs.len() + iz) * self.ts.len() + it
    }

    /// Fills a grid by evaluating `f(x, y, z, t) -> (east, north)` at every node.
    pub fn from_fn(
        xs: Vec<f64>,
        ys: Vec<f64>,
        zs: Vec<f64>,
        ts: Vec<f64>,
        mut f: impl FnMut(f64, f64, f64, f64) -> (f64, f64),
    ) -> Self {
        let mut east = Vec::new();
        let mut north = Vec::new();
        for &x in &xs {
            for &y in &ys {
                for &z in &zs {
                    for &t in &ts {
                        let (e, n) = f(x, y, z, t);
                        east.push(e);
                        north.push(n);
                    }
                }
            }
        }
        Self {
            xs,
            ys,
            zs,
            ts,
            east,
            north,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GriddedWindModel {
    grid: WindGrid,
    v_max: f64,
}

fn check_axis(name: &str, axis: &[f64]) -> std::result::Result<(), String> {
    if axis.is_empty() {
        return Err(format!("axis {name} is empty"));
    }
    if let Some(v) = axis.iter().find(|v| !v.is_finite()) {
        return Err(format!("axis {name} has non-finite value {v}"));
    }
    if let Some(w) = axis.windows(2).find(|w| w[1] <= w[0]) {
        return Err(format!(
            "axis {name} is not strictly increasing ({} then {})",
            w[0], w[1]
        ));
    }
    Ok(())
}

impl GriddedWindModel {
    pub fn from_grid(grid: WindGrid, v_max: f64) -> Result<Self> {
        for (name, axis) in [("x", &grid.xs), ("y", &grid.ys), ("z", &grid.zs), ("t", &grid.ts)] {
            check_axis(name, axis).map_err(Error::InvalidWindModel)?;
        }
        let n = grid.cell_count();
        if grid.east.len() != n || grid.north.len() != n {
            return Err(Error::InvalidWindModel(format!(
                "grid has {} cells but {} values",
                n,
                grid.east.len().min(grid.north.len())
            )));
        }
        if grid.east.iter().chain(&grid.north).any(|v| !v.is_finite()) {
            return Err(Error::InvalidWindModel("non-finite wind component".into()));
        }
        Ok(Self { grid, v_max })
    }

    pub fn load(path: impl AsRef<Path>, v_max: f64) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string(), v_max)
    }

    pub fn parse(text: &str, context: &str, v_max: f64) -> Result<Self> {
        let mut axes: [Option<Vec<f64>>; 4] = Default::default();
        let mut east = Vec::new();
        let mut north = Vec::new();
        let mut expected = None;
        let mut last_line = 0;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            last_line = line_no;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("axis") {
                if expected.is_some() {
                    return Err(Error::parse(context, line_no, "axis header after data lines"));
                }
                let (name, values) = rest
                    .split_once(':')
                    .ok_or_else(|| Error::parse(context, line_no, "expected `axis <name>: values`"))?;
                let slot = match name.trim() {
                    "x" => 0,
                    "y" => 1,
                    "z" => 2,
                    "t" => 3,
                    other => return Err(Error::parse(context, line_no, format!("unknown axis `{other}`"))),
                };
                if axes[slot].is_some() {
                    return Err(Error::parse(
                        context,
                        line_no,
                        format!("axis {} given twice", name.trim()),
                    ));
                }
                let values = values
                    .split_whitespace()
                    .map(|tok| parse_number(tok, context, line_no))
                    .collect::<Result<Vec<_>>>()?;
                check_axis(name.trim(), &values).map_err(|m| Error::parse(context, line_no, m))?;
                axes[slot] = Some(values);
                continue;
            }
            let total = match expected {
                Some(n) => n,
                None => {
                    let mut n = 1;
                    for (slot, name) in ["x", "y", "z", "t"].iter().enumerate() {
                        let axis = axes[slot].as_ref().ok_or_else(|| {
                            Error::parse(context, line_no, format!("data before `axis {name}` header"))
                        })?;
                        n *= axis.len();
                    }
                    expected = Some(n);
                    n
                }
            };
            if east.len() == total {
                return Err(Error::parse(context, line_no, format!("more than {total} cell lines")));
            }
            let mut toks = line.split_whitespace();
            let (Some(u), Some(v), None) = (toks.next(), toks.next(), toks.next()) else {
                return Err(Error::parse(context, line_no, "expected two values `u v`"));
            };
            east.push(parse_number(u, context, line_no)?);
            north.push(parse_number(v, context, line_no)?);
        }
        let [Some(xs), Some(ys), Some(zs), Some(ts)] = axes else {
            return Err(Error::parse(context, last_line, "missing axis header"));
        };
        let total = xs.len() * ys.len() * zs.len() * ts.len();
        if east.len() != total {
            return Err(Error::parse(
                context,
                last_line,
                format!("expected {total} cell lines, found {}", east.len()),
            ));
        }
        Self::from_grid(
            WindGrid {
                xs,
                ys,
                zs,
                ts,
                east,
                north,
            },
            v_max,
        )
    }

    pub fn grid(&self) -> &WindGrid {
        &self.grid
    }
}

fn parse_number(tok: &str, context: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::parse(context, line, format!("`{tok}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::parse(context, line, format!("non-finite value `{tok}`")));
    }
    Ok(v)
}

/// Bracketing indices and interpolation weight, clamping outside the axis.
fn bracket(axis: &[f64], q: f64) -> (usize, usize, f64) {
    let last = axis.len() - 1;
    if q <= axis[0] {
        return (0, 0, 0.0);
    }
    if q >= axis[last] {
        return (last, last, 0.0);
    }
    let hi = axis.partition_point(|&a| a <= q);
    let lo = hi - 1;
    (lo, hi, (q - axis[lo]) / (axis[hi] - axis[lo]))
}

impl WindModel for GriddedWindModel {
    fn sample(&self, x_km: f64, y_km: f64, altitude_m: f64, t_min: f64) -> Result<WindSample> {
        check_query(x_km, y_km, altitude_m, t_min)?;
        let g = &self.grid;
        let bx = bracket(&g.xs, x_km);
        let by = bracket(&g.ys, y_km);
        let bz = bracket(&g.zs, altitude_m);
        let bt = bracket(&g.ts, t_min);
        let (mut east, mut north) = (0.0, 0.0);
        for (ix, wx) in [(bx.0, 1.0 - bx.2), (bx.1, bx.2)] {
            for (iy, wy) in [(by.0, 1.0 - by.2), (by.1, by.2)] {
                for (iz, wz) in [(bz.0, 1.0 - bz.2), (bz.1, bz.2)] {
                    for (it, wt) in [(bt.0, 1.0 - bt.2), (bt.1, bt.2)] {
                        let w = wx * wy * wz * wt;
                        if w != 0.0 {
                            let k = g.index(ix, iy, iz, it);
                            east += w * g.east[k];
                            north += w * g.north[k];
                        }
                    }
                }
            }
        }
        Ok(WindSample::from_components(east, north, self.v_max))
    }

    fn v_max(&self) -> f64 {
        self.v_max
    }

    fn time_horizon(&self) -> Option<f64> {
        self.grid.ts.last().copied()
    }
}

/// Serializes a grid in the text format, 6 significant digits per component.
pub fn write_gridded(path: impl AsRef<Path>, grid: &WindGrid) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    let axis_line = |out: &mut String, name: &str, axis: &[f64]| {
        let vals: Vec<String> = axis.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "axis {name}: {}", vals.join(" "));
    };
    out.push_str("# gridded wind: u (east) v (north) in m/s, x-major order\n");
    axis_line(&mut out, "x", &grid.xs);
    axis_line(&mut out, "y", &grid.ys);
    axis_line(&mut out, "z", &grid.zs);
    axis_line(&mut out, "t", &grid.ts);
    for (u, v) in grid.east.iter().zip(&grid.north) {
        let _ = writeln!(out, "{u:.5e} {v:.5e}");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
