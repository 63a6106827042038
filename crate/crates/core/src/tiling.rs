//! Crop grids over mosaics and the 1 km annotation grid over regions.

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geo::{self, GeoPoint, Geometry, MercatorPoint};
use crate::planar::{self, Pt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropSpec {
    pub image_size: u32,
    pub crop_size: u32,
    pub overlap: u32,
}

impl Default for CropSpec {
    fn default() -> Self {
        CropSpec {
            image_size: 4096,
            crop_size: 640,
            overlap: 64,
        }
    }
}

impl CropSpec {
    pub fn stride(&self) -> u32 {
        self.crop_size - self.overlap
    }

    fn validate(&self) -> Result<()> {
        if self.crop_size == 0 || self.overlap >= self.crop_size {
            return Err(Error::Invalid(format!(
                "need crop_size > overlap >= 0, got crop_size={} overlap={}",
                self.crop_size, self.overlap
            )));
        }
        if self.crop_size > self.image_size {
            return Err(Error::Invalid(format!(
                "crop_size {} exceeds image_size {}",
                self.crop_size, self.image_size
            )));
        }
        Ok(())
    }

    /// Origins along one axis; the last crop is clamped to end at the edge.
    pub fn axis_origins(&self) -> Result<Vec<u32>> {
        self.validate()?;
        let mut out = Vec::new();
        let mut o = 0;
        while o + self.crop_size < self.image_size {
            out.push(o);
            o += self.stride();
        }
        out.push(self.image_size - self.crop_size);
        Ok(out)
    }
}

/// Top-left pixel origins `(x0, y0)` of every crop, row-major.
pub fn crop_origins(spec: &CropSpec) -> Result<Vec<(u32, u32)>> {
    let axis = spec.axis_origins()?;
    Ok(axis.iter().flat_map(|&y| axis.iter().map(move |&x| (x, y))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellStatus {
    #[default]
    Unvisited,
    InProgress,
    Done,
}

impl CellStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CellStatus::Unvisited => "unvisited",
            CellStatus::InProgress => "in-progress",
            CellStatus::Done => "done",
        }
    }
}

impl FromStr for CellStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unvisited" => Ok(CellStatus::Unvisited),
            "in-progress" | "in_progress" => Ok(CellStatus::InProgress),
            "done" => Ok(CellStatus::Done),
            other => Err(Error::Invalid(format!("unknown cell status {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub row: u32,
    pub col: u32,
    /// `[min_x, min_y, max_x, max_y]` in Mercator meters.
    pub mercator_bounds: [f64; 4],
    pub polygon: Geometry,
    pub status: CellStatus,
    /// Who the cell is assigned to, if anyone.
    #[serde(default)]
    pub assignee: Option<String>,
}

fn project_ring(ring: &[GeoPoint]) -> Result<Vec<Pt>> {
    let mut pts: Vec<Pt> = ring
        .iter()
        .map(|p| geo::wgs84_to_mercator(*p).map(|m| (m.x, m.y)))
        .collect::<Result<_>>()?;
    pts.pop(); // closing vertex
    Ok(pts)
}

const EDGE_EPS_M: f64 = 1e-6;

/// Square cells of `cell_km` Mercator kilometers anchored at the region's
/// south-west bounding corner; only cells whose interior overlaps the
/// region are returned. Rows count northward from 0.
pub fn annotation_grid(region: &Geometry, cell_km: f64) -> Result<Vec<GridCell>> {
    if !(cell_km.is_finite() && cell_km > 0.0) {
        return Err(Error::Invalid(format!("cell size must be positive, got {cell_km}")));
    }
    let (outer, holes) = match region {
        Geometry::Polygon { outer, holes } => (outer, holes),
        other => {
            return Err(Error::InvalidGeometry(format!(
                "annotation region must be a polygon, got {}",
                other.type_name()
            )))
        }
    };
    region.validate()?;
    let outer_m = project_ring(outer)?;
    let holes_m: Vec<Vec<Pt>> = holes.iter().map(|h| project_ring(h)).collect::<Result<_>>()?;
    if planar::area(&outer_m) <= 0.0 {
        return Ok(Vec::new());
    }

    let cell = cell_km * 1000.0;
    let b = planar::bounds(&outer_m);
    let ncols = (((b[2] - b[0]) - EDGE_EPS_M) / cell).ceil().max(1.0) as u32;
    let nrows = (((b[3] - b[1]) - EDGE_EPS_M) / cell).ceil().max(1.0) as u32;
    // ignore slivers from floating point noise along shared edges
    let min_overlap = cell * cell * 1e-9;

    let mut cells = Vec::new();
    for row in 0..nrows {
        for col in 0..ncols {
            let x0 = b[0] + col as f64 * cell;
            let y0 = b[1] + row as f64 * cell;
            let square = [(x0, y0), (x0 + cell, y0), (x0 + cell, y0 + cell), (x0, y0 + cell)];
            let mut overlap = planar::area(&planar::clip_to_convex(&outer_m, &square));
            if overlap <= min_overlap {
                continue;
            }
            for h in &holes_m {
                overlap -= planar::area(&planar::clip_to_convex(h, &square));
            }
            if overlap <= min_overlap {
                continue;
            }
            let ring = square
                .iter()
                .map(|&(x, y)| geo::mercator_to_wgs84(MercatorPoint { x, y }))
                .collect::<Result<Vec<_>>>()?;
            cells.push(GridCell {
                row,
                col,
                mercator_bounds: [x0, y0, x0 + cell, y0 + cell],
                polygon: Geometry::polygon(ring, vec![])?,
                status: CellStatus::Unvisited,
                assignee: None,
            });
        }
    }
    Ok(cells)
}

pub fn grid_to_geojson(cells: &[GridCell]) -> Value {
    let features: Vec<Value> = cells
        .iter()
        .map(|c| {
            let mut f = json!({
                "type": "Feature",
                "geometry": crate::ingest::geometry_to_json(&c.polygon),
                "properties": {
                    "row": c.row,
                    "col": c.col,
                    "status": c.status.as_str(),
                    "mercator_bounds": c.mercator_bounds,
                },
            });
            if let Some(a) = &c.assignee {
                f["properties"]["assignee"] = json!(a);
            }
            f
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

pub fn grid_from_geojson(bytes: &[u8]) -> Result<Vec<GridCell>> {
    let v: Value = serde_json::from_slice(bytes).map_err(|e| Error::json(bytes, e))?;
    let features = v
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Invalid("grid file is not a FeatureCollection".into()))?;
    features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let bad = |m: &str| Error::Invalid(format!("grid feature #{i}: {m}"));
            let props = f.get("properties").ok_or_else(|| bad("missing properties"))?;
            let geom = crate::ingest::geometry_from_json(f.get("geometry").ok_or_else(|| bad("missing geometry"))?)
                .map_err(|e| bad(&e.to_string()))?;
            let geom = geom.into_iter().next().ok_or_else(|| bad("empty geometry"))?;
            let num = |k: &str| props.get(k).and_then(Value::as_u64).ok_or_else(|| bad(&format!("missing {k}")));
            let bounds: [f64; 4] = match props.get("mercator_bounds") {
                Some(b) => serde_json::from_value(b.clone()).map_err(|e| bad(&e.to_string()))?,
                None => {
                    let gb = geom.bounds();
                    let lo = geo::wgs84_to_mercator(GeoPoint { lon: gb[0], lat: gb[1] })?;
                    let hi = geo::wgs84_to_mercator(GeoPoint { lon: gb[2], lat: gb[3] })?;
                    [lo.x, lo.y, hi.x, hi.y]
                }
            };
            Ok(GridCell {
                row: num("row")? as u32,
                col: num("col")? as u32,
                mercator_bounds: bounds,
                polygon: geom,
                status: props.get("status").and_then(Value::as_str).unwrap_or("unvisited").parse()?,
                assignee: props.get("assignee").and_then(Value::as_str).map(str::to_string),
            })
        })
        .collect()
}
