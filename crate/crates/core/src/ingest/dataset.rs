//! The canonical kiln dataset: a WGS84 GeoJSON FeatureCollection with one
//! polygon (the four box corners) per kiln.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, FeatureIssue, Result};
use crate::geo::{self, GeoPoint, Geometry, MercatorPoint};
use crate::obb::{CropGeoref, Detection, Frame, KilnClass, OrientedBox};

use super::{feature_collection_text, geometry_from_json, geometry_to_json};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationState {
    #[default]
    Pending,
    Accepted,
    Adjusted,
    Reclassified,
    Discarded,
}

impl ValidationState {
    pub const ALL: [ValidationState; 5] = [
        ValidationState::Pending,
        ValidationState::Accepted,
        ValidationState::Adjusted,
        ValidationState::Reclassified,
        ValidationState::Discarded,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ValidationState::Pending => "pending",
            ValidationState::Accepted => "accepted",
            ValidationState::Adjusted => "adjusted",
            ValidationState::Reclassified => "reclassified",
            ValidationState::Discarded => "discarded",
        }
    }
}

impl fmt::Display for ValidationState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ValidationState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ValidationState::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown validation state {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub crop_id: Option<String>,
    pub model_run: Option<String>,
    pub created_at: Option<String>,
    pub updated_at: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KilnRecord {
    pub id: String,
    /// Footprint in the Mercator frame.
    pub bbox: OrientedBox,
    pub class: KilnClass,
    pub confidence: f64,
    /// Administrative state; empty when unassigned.
    pub state: String,
    /// Changed only through [`crate::workflow`].
    pub validation_state: ValidationState,
    pub provenance: Provenance,
}

impl KilnRecord {
    pub fn centroid(&self) -> GeoPoint {
        geo::mercator_to_wgs84(MercatorPoint {
            x: self.bbox.cx,
            y: self.bbox.cy,
        })
        .expect("kiln boxes are validated on construction")
    }

    /// Corner polygon in WGS84.
    pub fn footprint(&self) -> Geometry {
        let ring = self
            .bbox
            .corners()
            .iter()
            .map(|&(x, y)| geo::mercator_to_wgs84(MercatorPoint { x, y }).expect("corners inside the projection"))
            .collect();
        Geometry::polygon(ring, vec![]).expect("box corners form a valid ring")
    }

    pub fn is_active(&self) -> bool {
        self.validation_state != ValidationState::Discarded
    }

    /// Wraps a Mercator-frame detection as a pending record.
    pub fn from_detection(det: &Detection, model_run: Option<String>) -> Result<Self> {
        if det.bbox.frame != Frame::Mercator {
            return Err(Error::FrameMismatch(format!(
                "detection {} must be reprojected to Mercator",
                det.id
            )));
        }
        check_box_in_world(&det.bbox)?;
        Ok(KilnRecord {
            id: det.id.clone(),
            bbox: det.bbox,
            class: det.class,
            confidence: det.confidence,
            state: String::new(),
            validation_state: ValidationState::Pending,
            provenance: Provenance {
                crop_id: Some(det.source_crop.clone()),
                model_run,
                created_at: None,
                updated_at: None,
            },
        })
    }

    pub fn to_detection(&self) -> Detection {
        Detection {
            id: self.id.clone(),
            class: self.class,
            confidence: self.confidence,
            bbox: self.bbox,
            source_crop: self.provenance.crop_id.clone().unwrap_or_default(),
        }
    }

    /// Reprojects a pixel-frame detection through its crop georeference.
    pub fn from_pixel_detection(det: &Detection, georef: &CropGeoref, model_run: Option<String>) -> Result<Self> {
        let bbox = crate::obb::reproject_box(&det.bbox, Frame::Pixel, Frame::Mercator, georef)?;
        KilnRecord::from_detection(&Detection { bbox, ..det.clone() }, model_run)
    }

    pub fn to_feature(&self) -> Value {
        let mut props = Map::new();
        props.insert("id".into(), json!(self.id));
        props.insert("class".into(), json!(self.class.as_str()));
        props.insert("confidence".into(), json!(self.confidence));
        props.insert("state".into(), json!(self.state));
        props.insert("validation_state".into(), json!(self.validation_state.as_str()));
        props.insert("theta".into(), json!(self.bbox.theta));
        props.insert("w_m".into(), json!(self.bbox.w));
        props.insert("h_m".into(), json!(self.bbox.h));
        props.insert("cx_m".into(), json!(self.bbox.cx));
        props.insert("cy_m".into(), json!(self.bbox.cy));
        let p = &self.provenance;
        for (k, v) in [
            ("crop_id", &p.crop_id),
            ("model_run", &p.model_run),
            ("created_at", &p.created_at),
            ("updated_at", &p.updated_at),
        ] {
            if let Some(v) = v {
                props.insert(k.into(), json!(v));
            }
        }
        json!({
            "type": "Feature",
            "id": self.id,
            "geometry": geometry_to_json(&self.footprint()),
            "properties": props,
        })
    }
}

fn check_box_in_world(b: &OrientedBox) -> Result<()> {
    for (x, y) in b.corners() {
        MercatorPoint::new(x, y)?;
    }
    Ok(())
}

/// A parsed dataset plus the action-log sequence number it reflects, when
/// it is a snapshot.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KilnDataset {
    pub records: Vec<KilnRecord>,
    pub log_seq: Option<u64>,
}

fn record_from_feature(f: &Value) -> Result<KilnRecord> {
    let props = f
        .get("properties")
        .and_then(Value::as_object)
        .ok_or_else(|| Error::Invalid("missing properties".into()))?;
    let s = |k: &str| -> Result<String> {
        props
            .get(k)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Error::Invalid(format!("property {k:?} missing or not a string")))
    };
    let opt_s = |k: &str| props.get(k).and_then(Value::as_str).map(str::to_string);
    let opt_n = |k: &str| -> Result<Option<f64>> {
        match props.get(k) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v
                .as_f64()
                .map(Some)
                .ok_or_else(|| Error::Invalid(format!("property {k:?} is not a number"))),
        }
    };

    let id = s("id")?;
    let class: KilnClass = s("class")?.parse()?;
    let confidence = opt_n("confidence")?.unwrap_or(1.0);
    if !(0.0..=1.0).contains(&confidence) {
        return Err(Error::Invalid(format!("confidence {confidence} outside [0, 1]")));
    }
    let validation_state = match opt_s("validation_state") {
        Some(v) => v.parse()?,
        None => ValidationState::Pending,
    };

    let geom = geometry_from_json(f.get("geometry").ok_or_else(|| Error::Invalid("missing geometry".into()))?)?;
    let ring = match geom.as_slice() {
        [Geometry::Polygon { outer, .. }] if outer.len() == 5 => outer.clone(),
        _ => return Err(Error::InvalidGeometry("kiln geometry must be a single 4-corner polygon".into())),
    };
    let mut corners = [(0.0, 0.0); 4];
    for (k, p) in ring[..4].iter().enumerate() {
        let m = geo::wgs84_to_mercator(*p)?;
        corners[k] = (m.x, m.y);
    }
    let fitted = OrientedBox::from_quad(corners, Frame::Mercator)?;
    let (cx, cy) = match (opt_n("cx_m")?, opt_n("cy_m")?) {
        (Some(x), Some(y)) => (x, y),
        _ => (fitted.cx, fitted.cy),
    };
    let bbox = match (opt_n("theta")?, opt_n("w_m")?, opt_n("h_m")?) {
        (Some(t), Some(w), Some(h)) => OrientedBox::new(cx, cy, w, h, t, Frame::Mercator)?,
        _ => OrientedBox { cx, cy, ..fitted },
    };
    check_box_in_world(&bbox)?;
    Ok(KilnRecord {
        id,
        bbox,
        class,
        confidence,
        state: opt_s("state").unwrap_or_default(),
        validation_state,
        provenance: Provenance {
            crop_id: opt_s("crop_id"),
            model_run: opt_s("model_run"),
            created_at: opt_s("created_at"),
            updated_at: opt_s("updated_at"),
        },
    })
}

/// Reads a kiln dataset. Every invalid feature is collected into a single
/// [`Error::Features`].
pub fn read_kiln_dataset(bytes: &[u8]) -> Result<KilnDataset> {
    let root: Value = serde_json::from_slice(bytes).map_err(|e| Error::json(bytes, e))?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::Invalid("expected a GeoJSON FeatureCollection".into()));
    }
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Invalid("FeatureCollection has no features array".into()))?;
    let mut records = Vec::with_capacity(features.len());
    let mut issues = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (index, f) in features.iter().enumerate() {
        match record_from_feature(f) {
            Ok(r) if !seen.insert(r.id.clone()) => issues.push(FeatureIssue {
                index,
                id: Some(r.id),
                message: "duplicate kiln id".into(),
            }),
            Ok(r) => records.push(r),
            Err(e) => issues.push(FeatureIssue {
                index,
                id: f
                    .get("properties")
                    .and_then(|p| p.get("id"))
                    .and_then(Value::as_str)
                    .map(str::to_string),
                message: e.to_string(),
            }),
        }
    }
    if !issues.is_empty() {
        return Err(Error::Features(issues));
    }
    Ok(KilnDataset {
        records,
        log_seq: root.get("log_seq").and_then(Value::as_u64),
    })
}

pub fn write_kiln_dataset(records: &[KilnRecord], log_seq: Option<u64>) -> String {
    let features: Vec<Value> = records.iter().map(KilnRecord::to_feature).collect();
    let foreign: Vec<(&str, Value)> = log_seq.map(|s| ("log_seq", json!(s))).into_iter().collect();
    feature_collection_text(&features, &foreign)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planar;

    fn record(id: &str, lon: f64, lat: f64, theta: f64) -> KilnRecord {
        let c = geo::wgs84_to_mercator(GeoPoint { lon, lat }).unwrap();
        KilnRecord {
            id: id.into(),
            bbox: OrientedBox::new(c.x, c.y, 160.0, 90.0, theta, Frame::Mercator).unwrap(),
            class: KilnClass::Fcbk,
            confidence: 0.87,
            state: "Bihar".into(),
            validation_state: ValidationState::Pending,
            provenance: Provenance {
                crop_id: Some("crop-3".into()),
                ..Default::default()
            },
        }
    }

    #[test]
    fn empty_round_trip() {
        let text = write_kiln_dataset(&[], None);
        assert_eq!(read_kiln_dataset(text.as_bytes()).unwrap(), KilnDataset::default());
    }

    #[test]
    fn three_kiln_round_trip() {
        let mut recs = vec![
            record("a", 85.1, 25.6, 0.2),
            record("b", 85.2, 25.7, -1.0),
            record("c", 77.3, 28.9, 1.2),
        ];
        recs[1].validation_state = ValidationState::Adjusted;
        recs[2].class = KilnClass::Zigzag;
        let text = write_kiln_dataset(&recs, Some(12));
        let back = read_kiln_dataset(text.as_bytes()).unwrap();
        assert_eq!(back.records, recs);
        assert_eq!(back.log_seq, Some(12));
        assert_eq!(write_kiln_dataset(&back.records, Some(12)), text);
    }

    #[test]
    fn corner_polygon_area_consistent() {
        let r = record("a", 80.0, 27.0, 0.7);
        let ring = match r.footprint() {
            Geometry::Polygon { outer, .. } => outer,
            _ => unreachable!(),
        };
        let pts: Vec<(f64, f64)> = ring[..4]
            .iter()
            .map(|p| {
                let m = geo::wgs84_to_mercator(*p).unwrap();
                (m.x, m.y)
            })
            .collect();
        let a = planar::area(&pts);
        assert!((a / (r.bbox.w * r.bbox.h) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn plain_polygon_fitted() {
        let r = record("a", 80.0, 27.0, 0.3);
        let mut f = r.to_feature();
        let props = f["properties"].as_object_mut().unwrap();
        for k in ["theta", "w_m", "h_m", "cx_m", "cy_m"] {
            props.remove(k);
        }
        let text = feature_collection_text(&[f], &[]);
        let back = read_kiln_dataset(text.as_bytes()).unwrap();
        assert!(back.records[0].bbox.approx_eq(&r.bbox, 1e-4));
    }

    #[test]
    fn schema_errors_per_feature() {
        let good = record("a", 80.0, 27.0, 0.3).to_feature();
        let mut bad_class = good.clone();
        bad_class["properties"]["class"] = json!("Hoffmann");
        bad_class["properties"]["id"] = json!("x");
        let mut bad_geom = good.clone();
        bad_geom["geometry"] = json!({"type": "Point", "coordinates": [80, 27]});
        bad_geom["properties"]["id"] = json!("y");
        let text = feature_collection_text(&[good.clone(), bad_class, bad_geom, good], &[]);
        match read_kiln_dataset(text.as_bytes()) {
            Err(Error::Features(issues)) => {
                let idx: Vec<usize> = issues.iter().map(|i| i.index).collect();
                assert_eq!(idx, vec![1, 2, 3]);
            }
            other => panic!("{other:?}"),
        }
    }
}
