//! Oriented bounding boxes: corner reconstruction, rotated IoU, greedy NMS
//! and pixel/Mercator reprojection.
//!
//! Angles are measured counterclockwise *as displayed north-up* from the +x
//! axis to the `w` edge. In the Mercator frame (y north) that is the usual
//! mathematical convention; in the pixel frame (y down) the vertical offset
//! is mirrored so the same angle survives reprojection unchanged.

use std::cmp::Ordering;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{self, MercatorPoint};
use crate::planar::{self, Pt};

/// Coordinate frame of a box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    /// Crop-local pixels, origin top-left, y down.
    Pixel,
    /// EPSG:3857 meters.
    Mercator,
}

impl FromStr for Frame {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pixel" | "px" => Ok(Frame::Pixel),
            "mercator" | "epsg:3857" | "3857" => Ok(Frame::Mercator),
            other => Err(Error::Invalid(format!("unknown frame {other:?}"))),
        }
    }
}

/// Brick kiln firing technology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KilnClass {
    #[serde(rename = "CFCBK")]
    Cfcbk,
    #[serde(rename = "FCBK")]
    Fcbk,
    #[serde(rename = "Zigzag")]
    Zigzag,
}

impl KilnClass {
    pub const ALL: [KilnClass; 3] = [KilnClass::Cfcbk, KilnClass::Fcbk, KilnClass::Zigzag];

    /// Index used by label files.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            KilnClass::Cfcbk => "CFCBK",
            KilnClass::Fcbk => "FCBK",
            KilnClass::Zigzag => "Zigzag",
        }
    }
}

impl fmt::Display for KilnClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KilnClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cfcbk" | "0" => Ok(KilnClass::Cfcbk),
            "fcbk" | "1" => Ok(KilnClass::Fcbk),
            "zigzag" | "2" => Ok(KilnClass::Zigzag),
            other => Err(Error::Invalid(format!("unknown kiln class {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
    pub frame: Frame,
}

const SQUARE_REL_TOL: f64 = 1e-12;

/// Brings `(w, h, theta)` to the canonical form `w >= h`,
/// `theta ∈ [-π/2, π/2)`; squares additionally use `theta ∈ [0, π/2)`.
fn canonicalize(mut w: f64, mut h: f64, mut theta: f64) -> (f64, f64, f64) {
    if h > w {
        std::mem::swap(&mut w, &mut h);
        theta += FRAC_PI_2;
    }
    let square = (w - h).abs() <= SQUARE_REL_TOL * w;
    let period = if square { FRAC_PI_2 } else { PI };
    let lo = if square { 0.0 } else { -FRAC_PI_2 };
    theta = (theta - lo).rem_euclid(period) + lo;
    if theta >= lo + period {
        theta -= period;
    }
    (w, h, theta)
}

impl OrientedBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64, frame: Frame) -> Result<Self> {
        if ![cx, cy, w, h, theta].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidBox("non-finite box parameter".into()));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidBox(format!("extents must be positive, got w={w} h={h}")));
        }
        let (w, h, theta) = canonicalize(w, h, theta);
        Ok(OrientedBox {
            cx,
            cy,
            w,
            h,
            theta,
            frame,
        })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Four vertices, counterclockwise as displayed north-up.
    pub fn corners(&self) -> [Pt; 4] {
        let (s, c) = self.theta.sin_cos();
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        let ys = match self.frame {
            Frame::Mercator => 1.0,
            Frame::Pixel => -1.0,
        };
        [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)].map(|(u, v)| {
            let dx = u * c - v * s;
            let dy = u * s + v * c;
            (self.cx + dx, self.cy + ys * dy)
        })
    }

    /// Axis-aligned bounds `[min_x, min_y, max_x, max_y]`.
    pub fn aabb(&self) -> [f64; 4] {
        planar::bounds(&self.corners())
    }

    /// Fits the minimum-area oriented rectangle around four points given in
    /// `frame` coordinates. Exact when the points are rectangle corners.
    pub fn from_quad(points: [Pt; 4], frame: Frame) -> Result<Self> {
        let ys = match frame {
            Frame::Mercator => 1.0,
            Frame::Pixel => -1.0,
        };
        // work in a y-up plane so angles follow the display convention
        let pts: Vec<Pt> = points.iter().map(|&(x, y)| (x, ys * y)).collect();
        let hull = convex_hull(&pts);
        if hull.len() < 3 || planar::area(&hull) <= 0.0 {
            return Err(Error::InvalidBox("quadrilateral is degenerate".into()));
        }
        let mut best: Option<(f64, f64, f64, Pt)> = None;
        for i in 0..hull.len() {
            let a = hull[i];
            let b = hull[(i + 1) % hull.len()];
            let theta = (b.1 - a.1).atan2(b.0 - a.0);
            let (s, c) = theta.sin_cos();
            let (mut u0, mut u1, mut v0, mut v1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
            for p in &hull {
                let u = p.0 * c + p.1 * s;
                let v = -p.0 * s + p.1 * c;
                u0 = u0.min(u);
                u1 = u1.max(u);
                v0 = v0.min(v);
                v1 = v1.max(v);
            }
            let (w, h) = (u1 - u0, v1 - v0);
            let (um, vm) = ((u0 + u1) / 2.0, (v0 + v1) / 2.0);
            let center = (um * c - vm * s, um * s + vm * c);
            if best.is_none_or(|bst| w * h < bst.0 * bst.1 * (1.0 - 1e-12)) {
                best = Some((w, h, theta, center));
            }
        }
        let (w, h, theta, center) = best.expect("hull has edges");
        OrientedBox::new(center.0, ys * center.1, w, h, theta, frame)
    }

    /// True when both boxes describe the same rectangle within `tol`
    /// (absolute, in frame units and radians).
    pub fn approx_eq(&self, other: &OrientedBox, tol: f64) -> bool {
        if self.frame != other.frame {
            return false;
        }
        let ca = self.corners();
        let cb = other.corners();
        ca.iter()
            .all(|p| cb.iter().any(|q| (p.0 - q.0).abs() <= tol && (p.1 - q.1).abs() <= tol))
    }
}

fn convex_hull(points: &[Pt]) -> Vec<Pt> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: Pt, a: Pt, b: Pt| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut lower: Vec<Pt> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Pt> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

pub fn corners(b: &OrientedBox) -> [Pt; 4] {
    b.corners()
}

/// Area of the intersection of two convex quadrilaterals.
pub fn convex_intersection_area(a: &[Pt; 4], b: &[Pt; 4]) -> f64 {
    planar::convex_intersection_area(a, b)
}

fn aabb_overlap(a: &[f64; 4], b: &[f64; 4]) -> bool {
    a[0] <= b[2] && b[0] <= a[2] && a[1] <= b[3] && b[1] <= a[3]
}

/// Rotated intersection-over-union. Both boxes must share a frame.
pub fn obb_iou(a: &OrientedBox, b: &OrientedBox) -> f64 {
    debug_assert_eq!(a.frame, b.frame, "IoU across frames is meaningless");
    if !aabb_overlap(&a.aabb(), &b.aabb()) {
        return 0.0;
    }
    let inter = convex_intersection_area(&a.corners(), &b.corners());
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub id: String,
    pub class: KilnClass,
    pub confidence: f64,
    #[serde(rename = "box")]
    pub bbox: OrientedBox,
    pub source_crop: String,
}

impl Detection {
    pub fn new(
        id: impl Into<String>,
        class: KilnClass,
        confidence: f64,
        bbox: OrientedBox,
        source_crop: impl Into<String>,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::Invalid(format!("confidence {confidence} outside [0, 1]")));
        }
        Ok(Detection {
            id: id.into(),
            class,
            confidence,
            bbox,
            source_crop: source_crop.into(),
        })
    }
}

/// Higher confidence first, then lexicographic id.
pub fn rank_order(a: &Detection, b: &Detection) -> Ordering {
    b.confidence.total_cmp(&a.confidence).then_with(|| a.id.cmp(&b.id))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmsConfig {
    pub iou_thresh: f64,
    pub conf_thresh: f64,
    /// Suppress across classes; a physical kiln has one technology.
    pub class_agnostic: bool,
}

impl Default for NmsConfig {
    fn default() -> Self {
        NmsConfig {
            iou_thresh: 0.33,
            conf_thresh: 0.25,
            class_agnostic: true,
        }
    }
}

/// Greedy non-maximum suppression. Output is sorted by [`rank_order`].
pub fn nms(ds: &[Detection], cfg: &NmsConfig) -> Vec<Detection> {
    let mut cand: Vec<&Detection> = ds.iter().filter(|d| d.confidence >= cfg.conf_thresh).collect();
    cand.sort_by(|a, b| rank_order(a, b));

    let mut kept: Vec<(&Detection, [f64; 4])> = Vec::new();
    for d in cand {
        let bb = d.bbox.aabb();
        let suppressed = kept.iter().any(|(k, kb)| {
            (cfg.class_agnostic || k.class == d.class) && aabb_overlap(kb, &bb) && obb_iou(&k.bbox, &d.bbox) >= cfg.iou_thresh
        });
        if !suppressed {
            kept.push((d, bb));
        }
    }
    kept.into_iter().map(|(d, _)| d.clone()).collect()
}

/// Deduplicates detections from overlapping crops after they have been
/// reprojected into the Mercator frame.
pub fn merge_cross_tile(ds: &[Detection], cfg: &NmsConfig) -> Result<Vec<Detection>> {
    if let Some(d) = ds.iter().find(|d| d.bbox.frame != Frame::Mercator) {
        return Err(Error::FrameMismatch(format!(
            "detection {} is in the {:?} frame; reproject to Mercator before merging",
            d.id, d.bbox.frame
        )));
    }
    Ok(nms(ds, cfg))
}

/// Georeference of a crop: Mercator position of its top-left pixel corner
/// and the projected meters per pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropGeoref {
    pub crop_id: String,
    pub origin: MercatorPoint,
    pub meters_per_pixel: f64,
    pub size_px: u32,
}

impl CropGeoref {
    pub fn new(crop_id: impl Into<String>, origin: MercatorPoint, meters_per_pixel: f64, size_px: u32) -> Result<Self> {
        if !(meters_per_pixel.is_finite() && meters_per_pixel > 0.0) {
            return Err(Error::Invalid(format!("meters_per_pixel must be positive, got {meters_per_pixel}")));
        }
        if size_px == 0 {
            return Err(Error::Invalid("crop size must be positive".into()));
        }
        Ok(CropGeoref {
            crop_id: crop_id.into(),
            origin,
            meters_per_pixel,
            size_px,
        })
    }

    /// Georeference for a crop rendered at a web-map zoom level.
    pub fn at_zoom(crop_id: impl Into<String>, origin: MercatorPoint, zoom: u8, size_px: u32) -> Result<Self> {
        CropGeoref::new(crop_id, origin, geo::mercator_resolution(zoom)?, size_px)
    }

    /// Unreferenced crop used when only pixel-space work is needed.
    pub fn unreferenced(crop_id: impl Into<String>, size_px: u32) -> Self {
        CropGeoref {
            crop_id: crop_id.into(),
            origin: MercatorPoint { x: 0.0, y: 0.0 },
            meters_per_pixel: 1.0,
            size_px,
        }
    }
}

/// Affine scale + translate between the pixel and Mercator frames; the
/// angle is preserved.
pub fn reproject_box(b: &OrientedBox, from: Frame, to: Frame, georef: &CropGeoref) -> Result<OrientedBox> {
    if b.frame != from {
        return Err(Error::FrameMismatch(format!("box is in {:?}, expected {:?}", b.frame, from)));
    }
    let m = georef.meters_per_pixel;
    let o = georef.origin;
    match (from, to) {
        (Frame::Pixel, Frame::Mercator) => OrientedBox::new(o.x + b.cx * m, o.y - b.cy * m, b.w * m, b.h * m, b.theta, Frame::Mercator),
        (Frame::Mercator, Frame::Pixel) => OrientedBox::new((b.cx - o.x) / m, (o.y - b.cy) / m, b.w / m, b.h / m, b.theta, Frame::Pixel),
        _ => Ok(*b),
    }
}
