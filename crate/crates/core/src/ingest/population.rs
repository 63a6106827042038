//! ESRI ASCII grid population rasters (LandScan-style, lat/lon cells).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::GeoPoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationGrid {
    pub ncols: usize,
    pub nrows: usize,
    /// West edge, degrees.
    pub xllcorner: f64,
    /// South edge, degrees.
    pub yllcorner: f64,
    pub cellsize: f64,
    pub nodata: f64,
    /// Row-major, first row northernmost.
    pub values: Vec<f64>,
}

impl PopulationGrid {
    pub fn new(ncols: usize, nrows: usize, xllcorner: f64, yllcorner: f64, cellsize: f64, nodata: f64, values: Vec<f64>) -> Result<Self> {
        if !(cellsize.is_finite() && cellsize > 0.0) {
            return Err(Error::Invalid(format!("cellsize must be positive, got {cellsize}")));
        }
        if values.len() != ncols * nrows {
            return Err(Error::Invalid(format!("{} values for a {nrows}x{ncols} grid", values.len())));
        }
        if let Some(v) = values.iter().find(|&&v| v != nodata && !(v.is_finite() && v >= 0.0)) {
            return Err(Error::Invalid(format!("population value {v} is negative or non-finite")));
        }
        Ok(PopulationGrid {
            ncols,
            nrows,
            xllcorner,
            yllcorner,
            cellsize,
            nodata,
            values,
        })
    }

    pub fn value(&self, row: usize, col: usize) -> Option<f64> {
        let v = self.values[row * self.ncols + col];
        (v != self.nodata).then_some(v)
    }

    /// Center of cell `(row, col)`; row 0 is the northern edge.
    pub fn cell_center(&self, row: usize, col: usize) -> GeoPoint {
        GeoPoint {
            lon: self.xllcorner + (col as f64 + 0.5) * self.cellsize,
            lat: self.yllcorner + (self.nrows as f64 - row as f64 - 0.5) * self.cellsize,
        }
    }

    pub fn total(&self) -> f64 {
        self.values.iter().filter(|&&v| v != self.nodata).sum()
    }

    /// Inclusive `(row_lo, row_hi, col_lo, col_hi)` covering a lon/lat
    /// rectangle, clipped to the grid; `None` when disjoint.
    pub fn window(&self, bounds: [f64; 4]) -> Option<(usize, usize, usize, usize)> {
        let cs = self.cellsize;
        let top = self.yllcorner + self.nrows as f64 * cs;
        let c0 = ((bounds[0] - self.xllcorner) / cs).floor();
        let c1 = ((bounds[2] - self.xllcorner) / cs).floor();
        let r0 = ((top - bounds[3]) / cs).floor();
        let r1 = ((top - bounds[1]) / cs).floor();
        if c1 < 0.0 || r1 < 0.0 || c0 >= self.ncols as f64 || r0 >= self.nrows as f64 {
            return None;
        }
        let clamp = |v: f64, n: usize| v.max(0.0).min(n as f64 - 1.0) as usize;
        Some((
            clamp(r0, self.nrows),
            clamp(r1, self.nrows),
            clamp(c0, self.ncols),
            clamp(c1, self.ncols),
        ))
    }
}

pub fn parse_population_grid(text: &str) -> Result<PopulationGrid> {
    let mut ncols = None;
    let mut nrows = None;
    let mut xll = None;
    let mut yll = None;
    let mut center_ref = false;
    let mut cellsize = None;
    let mut nodata = -9999.0;
    let mut values = Vec::new();

    let mut lines = text.lines().enumerate().peekable();
    while let Some((i, raw)) = lines.peek().copied() {
        let line = raw.trim();
        let Some(key) = line.split_whitespace().next() else {
            lines.next();
            continue;
        };
        if key.chars().next().is_some_and(|c| c.is_ascii_digit() || c == '-' || c == '.') {
            break;
        }
        lines.next();
        let err = |m: String| Error::Line { line: i + 1, message: m };
        let val = line
            .split_whitespace()
            .nth(1)
            .ok_or_else(|| err(format!("header {key:?} has no value")))?;
        let num: f64 = val
            .parse()
            .map_err(|_| err(format!("header {key:?} value {val:?} is not a number")))?;
        match key.to_ascii_lowercase().as_str() {
            "ncols" => ncols = Some(num as usize),
            "nrows" => nrows = Some(num as usize),
            "xllcorner" => xll = Some(num),
            "yllcorner" => yll = Some(num),
            "xllcenter" => {
                xll = Some(num);
                center_ref = true;
            }
            "yllcenter" => {
                yll = Some(num);
                center_ref = true;
            }
            "cellsize" => cellsize = Some(num),
            "nodata_value" => nodata = num,
            other => return Err(err(format!("unknown header {other:?}"))),
        }
    }
    let missing = |k: &str| Error::Line {
        line: 1,
        message: format!("missing header {k}"),
    };
    let ncols = ncols.ok_or_else(|| missing("ncols"))?;
    let nrows = nrows.ok_or_else(|| missing("nrows"))?;
    let cellsize = cellsize.ok_or_else(|| missing("cellsize"))?;
    let mut xll = xll.ok_or_else(|| missing("xllcorner"))?;
    let mut yll = yll.ok_or_else(|| missing("yllcorner"))?;
    if center_ref {
        xll -= cellsize / 2.0;
        yll -= cellsize / 2.0;
    }

    let mut rows_seen = 0;
    for (i, raw) in lines {
        let toks: Vec<&str> = raw.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        let err = |m: String| Error::Line { line: i + 1, message: m };
        if toks.len() != ncols {
            return Err(err(format!("row has {} values, header says ncols {ncols}", toks.len())));
        }
        rows_seen += 1;
        if rows_seen > nrows {
            return Err(err(format!("more than nrows {nrows} data rows")));
        }
        for t in toks {
            values.push(t.parse::<f64>().map_err(|_| err(format!("value {t:?} is not a number")))?);
        }
    }
    if rows_seen != nrows {
        return Err(Error::Line {
            line: text.lines().count(),
            message: format!("found {rows_seen} data rows, header says nrows {nrows}"),
        });
    }
    PopulationGrid::new(ncols, nrows, xll, yll, cellsize, nodata, values)
}

pub fn write_population_grid(grid: &PopulationGrid) -> String {
    let mut out = String::new();
    writeln!(out, "ncols {}", grid.ncols).unwrap();
    writeln!(out, "nrows {}", grid.nrows).unwrap();
    writeln!(out, "xllcorner {}", grid.xllcorner).unwrap();
    writeln!(out, "yllcorner {}", grid.yllcorner).unwrap();
    writeln!(out, "cellsize {}", grid.cellsize).unwrap();
    writeln!(out, "NODATA_value {}", grid.nodata).unwrap();
    for row in grid.values.chunks(grid.ncols.max(1)) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(" ")).unwrap();
    }
    out
}
