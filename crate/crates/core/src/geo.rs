//! Coordinates, projections and distances.
//!
//! Two Earth models are in play: the spherical Web Mercator projection
//! (EPSG:3857) uses the WGS84 semi-major axis, while great-circle distances
//! use the IUGG mean radius.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sphere radius of the EPSG:3857 projection, meters.
pub const MERCATOR_RADIUS_M: f64 = 6_378_137.0;
/// Mean Earth radius used for haversine distances, meters.
pub const EARTH_MEAN_RADIUS_M: f64 = 6_371_008.8;
/// Half the width of the projected world, `π·R`.
pub const MERCATOR_HALF_EXTENT_M: f64 = PI * MERCATOR_RADIUS_M;
/// Largest latitude representable in Web Mercator (`atan(sinh π)`), degrees.
pub const MAX_MERCATOR_LAT: f64 = 85.051_128_779_806_59;
/// Pixel edge of a web map tile.
pub const TILE_SIZE_PX: f64 = 256.0;
pub const MAX_ZOOM: u8 = 23;

/// Slack for values that land a few ulps outside a closed range after a
/// round trip through trigonometric functions.
const BOUND_EPS: f64 = 1e-9;

/// WGS84 longitude/latitude in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    /// Validates latitude against the Mercator band and wraps longitude into
    /// `[-180, 180]`.
    pub fn new(lon: f64, lat: f64) -> Result<Self> {
        if !lon.is_finite() || !lat.is_finite() {
            return Err(Error::Domain(format!("non-finite coordinate ({lon}, {lat})")));
        }
        if lat.abs() > MAX_MERCATOR_LAT + BOUND_EPS {
            return Err(Error::Domain(format!(
                "latitude {lat} outside Web Mercator band ±{MAX_MERCATOR_LAT}"
            )));
        }
        Ok(GeoPoint {
            lon: normalize_lon(lon),
            lat: lat.clamp(-MAX_MERCATOR_LAT, MAX_MERCATOR_LAT),
        })
    }

    pub fn to_mercator(self) -> Result<MercatorPoint> {
        wgs84_to_mercator(self)
    }
}

fn normalize_lon(lon: f64) -> f64 {
    if (-180.0..=180.0).contains(&lon) {
        lon
    } else {
        let wrapped = (lon + 180.0).rem_euclid(360.0) - 180.0;
        if wrapped == -180.0 && lon > 0.0 {
            180.0
        } else {
            wrapped
        }
    }
}

/// EPSG:3857 coordinates in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MercatorPoint {
    pub x: f64,
    pub y: f64,
}

impl MercatorPoint {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        let limit = MERCATOR_HALF_EXTENT_M * (1.0 + BOUND_EPS);
        if !x.is_finite() || !y.is_finite() || x.abs() > limit || y.abs() > limit {
            return Err(Error::Domain(format!(
                "Mercator point ({x}, {y}) outside ±{MERCATOR_HALF_EXTENT_M} m"
            )));
        }
        Ok(MercatorPoint { x, y })
    }

    pub fn to_wgs84(self) -> Result<GeoPoint> {
        mercator_to_wgs84(self)
    }
}

pub fn wgs84_to_mercator(p: GeoPoint) -> Result<MercatorPoint> {
    let p = GeoPoint::new(p.lon, p.lat)?;
    let x = MERCATOR_RADIUS_M * p.lon.to_radians();
    // asinh(tan φ) = ln(tan(π/4 + φ/2)), exact at the equator
    let y = MERCATOR_RADIUS_M * p.lat.to_radians().tan().asinh();
    Ok(MercatorPoint {
        x,
        y: y.clamp(-MERCATOR_HALF_EXTENT_M, MERCATOR_HALF_EXTENT_M),
    })
}

pub fn mercator_to_wgs84(p: MercatorPoint) -> Result<GeoPoint> {
    let p = MercatorPoint::new(p.x, p.y)?;
    let lon = (p.x / MERCATOR_RADIUS_M).to_degrees();
    let lat = (p.y / MERCATOR_RADIUS_M).sinh().atan().to_degrees();
    GeoPoint::new(lon.clamp(-180.0, 180.0), lat)
}

/// Ground meters per pixel of a 256 px web tile at `zoom` and latitude `lat`.
pub fn ground_resolution(zoom: u8, lat: f64) -> Result<f64> {
    if zoom > MAX_ZOOM {
        return Err(Error::Domain(format!("zoom {zoom} outside [0, {MAX_ZOOM}]")));
    }
    if !lat.is_finite() || lat.abs() > MAX_MERCATOR_LAT + BOUND_EPS {
        return Err(Error::Domain(format!("latitude {lat} outside Web Mercator band")));
    }
    Ok(2.0 * PI * MERCATOR_RADIUS_M * lat.to_radians().cos() / (TILE_SIZE_PX * 2f64.powi(zoom as i32)))
}

/// Projected (EPSG:3857) meters per pixel at `zoom`; equals the equatorial
/// ground resolution and is latitude independent.
pub fn mercator_resolution(zoom: u8) -> Result<f64> {
    ground_resolution(zoom, 0.0)
}

pub fn haversine_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_MEAN_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Vector geometry in WGS84 degrees.
///
/// Rings are stored closed (first vertex repeated at the end).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Geometry {
    Point(GeoPoint),
    Polyline(Vec<GeoPoint>),
    Polygon { outer: Vec<GeoPoint>, holes: Vec<Vec<GeoPoint>> },
}

impl Geometry {
    /// Builds a polygon, closing rings that are not already closed.
    pub fn polygon(outer: Vec<GeoPoint>, holes: Vec<Vec<GeoPoint>>) -> Result<Self> {
        let g = Geometry::Polygon {
            outer: close_ring(outer),
            holes: holes.into_iter().map(close_ring).collect(),
        };
        g.validate()?;
        Ok(g)
    }

    pub fn polyline(vertices: Vec<GeoPoint>) -> Result<Self> {
        let g = Geometry::Polyline(vertices);
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Geometry::Point(p) => check_point(p),
            Geometry::Polyline(vs) => {
                if vs.len() < 2 {
                    return Err(Error::InvalidGeometry(format!(
                        "polyline needs at least 2 vertices, got {}",
                        vs.len()
                    )));
                }
                vs.iter().try_for_each(check_point)
            }
            Geometry::Polygon { outer, holes } => {
                check_ring(outer, "outer ring")?;
                for (i, h) in holes.iter().enumerate() {
                    check_ring(h, &format!("hole {i}"))?;
                }
                Ok(())
            }
        }
    }

    /// `(min_lon, min_lat, max_lon, max_lat)`.
    pub fn bounds(&self) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        let mut add = |p: &GeoPoint| {
            b[0] = b[0].min(p.lon);
            b[1] = b[1].min(p.lat);
            b[2] = b[2].max(p.lon);
            b[3] = b[3].max(p.lat);
        };
        match self {
            Geometry::Point(p) => add(p),
            Geometry::Polyline(vs) => vs.iter().for_each(add),
            // holes lie inside the outer ring
            Geometry::Polygon { outer, .. } => outer.iter().for_each(add),
        }
        b
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Geometry::Point(_) => "Point",
            Geometry::Polyline(_) => "LineString",
            Geometry::Polygon { .. } => "Polygon",
        }
    }
}

fn close_ring(mut ring: Vec<GeoPoint>) -> Vec<GeoPoint> {
    if let (Some(first), Some(last)) = (ring.first().copied(), ring.last().copied()) {
        if first != last {
            ring.push(first);
        }
    }
    ring
}

fn check_point(p: &GeoPoint) -> Result<()> {
    GeoPoint::new(p.lon, p.lat)
        .map(|_| ())
        .map_err(|e| Error::InvalidGeometry(e.to_string()))
}

fn check_ring(ring: &[GeoPoint], what: &str) -> Result<()> {
    if ring.len() < 4 || ring.first() != ring.last() {
        return Err(Error::InvalidGeometry(format!("{what} is not a closed ring of >= 3 vertices")));
    }
    let mut distinct: Vec<(u64, u64)> = ring[..ring.len() - 1].iter().map(|p| (p.lon.to_bits(), p.lat.to_bits())).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::InvalidGeometry(format!("{what} has fewer than 3 distinct vertices")));
    }
    ring.iter().try_for_each(check_point)
}

/// Location of a point relative to a polygon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Containment {
    Inside,
    Boundary,
    Outside,
}

/// Even-odd ray casting against a single closed ring, in lon/lat space.
pub fn point_in_ring(p: GeoPoint, ring: &[GeoPoint]) -> bool {
    let mut inside = false;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        if (a.lat > p.lat) != (b.lat > p.lat) {
            let x = a.lon + (p.lat - a.lat) / (b.lat - a.lat) * (b.lon - a.lon);
            if p.lon < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Classifies `p` against a polygon (outer ring minus holes). Points within
/// `tol_deg` of any ring edge are reported as [`Containment::Boundary`].
pub fn locate_in_polygon(p: GeoPoint, outer: &[GeoPoint], holes: &[Vec<GeoPoint>], tol_deg: f64) -> Containment {
    let on_ring = |ring: &[GeoPoint]| {
        ring.windows(2).any(|w| {
            let (d, _) = planar_segment_distance((w[0].lon - p.lon, w[0].lat - p.lat), (w[1].lon - p.lon, w[1].lat - p.lat));
            d <= tol_deg
        })
    };
    if on_ring(outer) || holes.iter().any(|h| on_ring(h)) {
        return Containment::Boundary;
    }
    if point_in_ring(p, outer) && !holes.iter().any(|h| point_in_ring(p, h)) {
        Containment::Inside
    } else {
        Containment::Outside
    }
}

pub fn polygon_contains(p: GeoPoint, g: &Geometry) -> bool {
    match g {
        Geometry::Polygon { outer, holes } => locate_in_polygon(p, outer, holes, 0.0) != Containment::Outside,
        _ => false,
    }
}

/// Distance from the origin to segment `a`–`b` in a planar frame, together
/// with the clamped projection parameter.
pub(crate) fn planar_segment_distance(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (-(a.0 * dx + a.1 * dy) / len2).clamp(0.0, 1.0)
    };
    let (x, y) = (a.0 + t * dx, a.1 + t * dy);
    ((x * x + y * y).sqrt(), t)
}

/// Local equirectangular frame centered on an anchor point; maps lon/lat to
/// meters east/north of the anchor.
#[derive(Debug, Clone, Copy)]
pub struct LocalFrame {
    anchor: GeoPoint,
    cos_lat: f64,
}

impl LocalFrame {
    pub fn new(anchor: GeoPoint) -> Self {
        LocalFrame {
            anchor,
            cos_lat: anchor.lat.to_radians().cos(),
        }
    }

    pub fn project(&self, q: GeoPoint) -> (f64, f64) {
        let mut dlon = q.lon - self.anchor.lon;
        if dlon > 180.0 {
            dlon -= 360.0;
        } else if dlon < -180.0 {
            dlon += 360.0;
        }
        (
            EARTH_MEAN_RADIUS_M * dlon.to_radians() * self.cos_lat,
            EARTH_MEAN_RADIUS_M * (q.lat - self.anchor.lat).to_radians(),
        )
    }
}

/// Meters from `p` to the nearest point of a polyline, measured in the local
/// flat frame centered at `p`.
pub(crate) fn distance_to_polyline(p: GeoPoint, vertices: &[GeoPoint]) -> f64 {
    let frame = LocalFrame::new(p);
    if vertices.len() == 1 {
        let (x, y) = frame.project(vertices[0]);
        return x.hypot(y);
    }
    vertices
        .windows(2)
        .map(|w| planar_segment_distance(frame.project(w[0]), frame.project(w[1])).0)
        .fold(f64::INFINITY, f64::min)
}

/// Distance without validating `g` first. Callers guarantee validity.
pub(crate) fn distance_unchecked(p: GeoPoint, g: &Geometry) -> f64 {
    match g {
        Geometry::Point(q) => haversine_distance(p, *q),
        Geometry::Polyline(vs) => distance_to_polyline(p, vs),
        Geometry::Polygon { outer, holes } => {
            if point_in_ring(p, outer) && !holes.iter().any(|h| point_in_ring(p, h)) {
                return 0.0;
            }
            std::iter::once(outer)
                .chain(holes.iter())
                .map(|ring| distance_to_polyline(p, ring))
                .fold(f64::INFINITY, f64::min)
        }
    }
}

/// Meters from `p` to geometry `g`; zero when `p` lies on or inside `g`.
pub fn point_to_geometry_distance(p: GeoPoint, g: &Geometry) -> Result<f64> {
    check_point(&p)?;
    g.validate()?;
    Ok(distance_unchecked(p, g))
}

/// Lon/lat rectangle guaranteed to contain every point within `radius_m` of
/// `p`, both by haversine and by the local flat approximation.
pub fn search_bounds(p: GeoPoint, radius_m: f64) -> [f64; 4] {
    let dlat = (radius_m / EARTH_MEAN_RADIUS_M).to_degrees() * (1.0 + 1e-9) + 1e-12;
    let max_lat = (p.lat.abs() + dlat).min(89.999_999);
    let dlon = (dlat / max_lat.to_radians().cos()).min(360.0);
    [p.lon - dlon, p.lat - dlat, p.lon + dlon, p.lat + dlat]
}
