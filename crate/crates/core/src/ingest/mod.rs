//! Readers and writers for every external format: OSM-derived feature
//! layers, quad label files, ASCII population grids, rule tables and the
//! canonical kiln dataset.

pub mod dataset;
pub mod features;
pub mod labels;
pub mod population;
pub mod rules;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geo::{GeoPoint, Geometry};

pub use dataset::{read_kiln_dataset, write_kiln_dataset, KilnDataset, KilnRecord, Provenance, ValidationState};
pub use features::{
    parse_feature_geojson, parse_regions, write_feature_geojson, Feature, FeatureCategory, FeatureFilter, FeatureLayer, ParsedLayer,
};
pub use labels::{parse_quad_labels, write_quad_labels};
pub use population::{parse_population_grid, write_population_grid, PopulationGrid};
pub use rules::{parse_rule_table, ComplianceRuleSet, Criterion};

fn coords(p: &GeoPoint) -> Value {
    json!([p.lon, p.lat])
}

/// GeoJSON geometry object for a [`Geometry`].
pub fn geometry_to_json(g: &Geometry) -> Value {
    match g {
        Geometry::Point(p) => json!({ "type": "Point", "coordinates": coords(p) }),
        Geometry::Polyline(vs) => json!({
            "type": "LineString",
            "coordinates": vs.iter().map(coords).collect::<Vec<_>>(),
        }),
        Geometry::Polygon { outer, holes } => {
            let rings: Vec<Value> = std::iter::once(outer)
                .chain(holes.iter())
                .map(|r| Value::Array(r.iter().map(coords).collect()))
                .collect();
            json!({ "type": "Polygon", "coordinates": rings })
        }
    }
}

fn parse_position(v: &Value) -> Result<GeoPoint> {
    let arr = v
        .as_array()
        .filter(|a| a.len() >= 2)
        .ok_or_else(|| Error::InvalidGeometry(format!("position must be [lon, lat], got {v}")))?;
    let lon = arr[0]
        .as_f64()
        .ok_or_else(|| Error::InvalidGeometry("non-numeric longitude".into()))?;
    let lat = arr[1]
        .as_f64()
        .ok_or_else(|| Error::InvalidGeometry("non-numeric latitude".into()))?;
    GeoPoint::new(lon, lat).map_err(|e| Error::InvalidGeometry(e.to_string()))
}

fn parse_positions(v: &Value) -> Result<Vec<GeoPoint>> {
    v.as_array()
        .ok_or_else(|| Error::InvalidGeometry("expected an array of positions".into()))?
        .iter()
        .map(parse_position)
        .collect()
}

fn parse_polygon(v: &Value) -> Result<Geometry> {
    let rings = v
        .as_array()
        .filter(|r| !r.is_empty())
        .ok_or_else(|| Error::InvalidGeometry("polygon needs at least one ring".into()))?;
    let outer = parse_positions(&rings[0])?;
    let holes = rings[1..].iter().map(parse_positions).collect::<Result<Vec<_>>>()?;
    let g = Geometry::Polygon { outer, holes };
    g.validate()?;
    Ok(g)
}

/// Parses a GeoJSON geometry object. Multi-part geometries are split into
/// their parts; `GeometryCollection` and unknown types are rejected.
pub fn geometry_from_json(v: &Value) -> Result<Vec<Geometry>> {
    let ty = v
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::InvalidGeometry("geometry has no type".into()))?;
    let c = v
        .get("coordinates")
        .ok_or_else(|| Error::InvalidGeometry(format!("{ty} has no coordinates")))?;
    let many = |c: &Value| -> Result<Vec<Value>> {
        c.as_array()
            .cloned()
            .ok_or_else(|| Error::InvalidGeometry(format!("{ty} coordinates must be an array")))
    };
    let out = match ty {
        "Point" => vec![Geometry::Point(parse_position(c)?)],
        "LineString" => vec![Geometry::polyline(parse_positions(c)?)?],
        "Polygon" => vec![parse_polygon(c)?],
        "MultiPoint" => many(c)?
            .iter()
            .map(|p| parse_position(p).map(Geometry::Point))
            .collect::<Result<_>>()?,
        "MultiLineString" => many(c)?
            .iter()
            .map(|l| parse_positions(l).and_then(Geometry::polyline))
            .collect::<Result<_>>()?,
        "MultiPolygon" => many(c)?.iter().map(parse_polygon).collect::<Result<_>>()?,
        other => return Err(Error::InvalidGeometry(format!("unsupported geometry type {other:?}"))),
    };
    if out.is_empty() {
        return Err(Error::InvalidGeometry(format!("empty {ty}")));
    }
    Ok(out)
}

/// Serializes a FeatureCollection with one feature per line, so diffs of
/// written files stay readable.
pub(crate) fn feature_collection_text(features: &[Value], foreign: &[(&str, Value)]) -> String {
    let mut out = String::from("{\"type\":\"FeatureCollection\"");
    for (k, v) in foreign {
        out.push_str(&format!(",{}:{}", Value::String((*k).to_string()), v));
    }
    out.push_str(",\"features\":[");
    for (i, f) in features.iter().enumerate() {
        out.push_str(if i == 0 { "\n" } else { ",\n" });
        out.push_str(&f.to_string());
    }
    if !features.is_empty() {
        out.push('\n');
    }
    out.push_str("]}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multipolygon_is_split() {
        let v = json!({"type": "MultiPolygon", "coordinates": [
            [[[0, 0], [1, 0], [1, 1], [0, 0]]],
            [[[2, 2], [3, 2], [3, 3], [2, 2]]]
        ]});
        assert_eq!(geometry_from_json(&v).unwrap().len(), 2);
    }

    #[test]
    fn unknown_type_rejected() {
        let v = json!({"type": "GeometryCollection", "geometries": []});
        assert!(geometry_from_json(&v).is_err());
        let v = json!({"type": "Curve", "coordinates": []});
        assert!(matches!(geometry_from_json(&v), Err(Error::InvalidGeometry(_))));
    }

    #[test]
    fn geometry_json_round_trip() {
        let g = Geometry::polygon(
            vec![
                GeoPoint { lon: 77.0, lat: 28.0 },
                GeoPoint { lon: 77.1, lat: 28.0 },
                GeoPoint { lon: 77.1, lat: 28.1 },
            ],
            vec![],
        )
        .unwrap();
        assert_eq!(geometry_from_json(&geometry_to_json(&g)).unwrap(), vec![g]);
    }
}
