use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, FeatureIssue, Result};
use crate::geo::Geometry;

use super::{feature_collection_text, geometry_from_json, geometry_to_json};

/// Kinds of geographic features that siting rules refer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureCategory {
    Habitation,
    Orchard,
    NatureReserve,
    School,
    Hospital,
    Religious,
    NationalHighway,
    StateHighway,
    DistrictHighway,
    Wetland,
    River,
    Railway,
    Kiln,
}

impl FeatureCategory {
    pub const ALL: [FeatureCategory; 13] = [
        FeatureCategory::Habitation,
        FeatureCategory::Orchard,
        FeatureCategory::NatureReserve,
        FeatureCategory::School,
        FeatureCategory::Hospital,
        FeatureCategory::Religious,
        FeatureCategory::NationalHighway,
        FeatureCategory::StateHighway,
        FeatureCategory::DistrictHighway,
        FeatureCategory::Wetland,
        FeatureCategory::River,
        FeatureCategory::Railway,
        FeatureCategory::Kiln,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureCategory::Habitation => "habitation",
            FeatureCategory::Orchard => "orchard",
            FeatureCategory::NatureReserve => "nature_reserve",
            FeatureCategory::School => "school",
            FeatureCategory::Hospital => "hospital",
            FeatureCategory::Religious => "religious",
            FeatureCategory::NationalHighway => "national_highway",
            FeatureCategory::StateHighway => "state_highway",
            FeatureCategory::DistrictHighway => "district_highway",
            FeatureCategory::Wetland => "wetland",
            FeatureCategory::River => "river",
            FeatureCategory::Railway => "railway",
            FeatureCategory::Kiln => "kiln",
        }
    }
}

impl fmt::Display for FeatureCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        FeatureCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == key)
            .ok_or_else(|| Error::Invalid(format!("unknown feature category {s:?}")))
    }
}

/// Attribute predicate deciding which OSM features belong to a category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureFilter {
    Any,
    /// `properties[key]` equals one of `values`.
    Equals {
        key: String,
        values: Vec<String>,
    },
    /// `properties[key]` starts with one of `prefixes`.
    Prefix {
        key: String,
        prefixes: Vec<String>,
    },
}

impl FeatureFilter {
    fn equals(key: &str, values: &[&str]) -> Self {
        FeatureFilter::Equals {
            key: key.into(),
            values: values.iter().map(|v| v.to_string()).collect(),
        }
    }

    fn prefix(key: &str, prefixes: &[&str]) -> Self {
        FeatureFilter::Prefix {
            key: key.into(),
            prefixes: prefixes.iter().map(|v| v.to_string()).collect(),
        }
    }

    /// The extraction filter used for each category of the Geofabrik
    /// shapefile exports (landuse, buildings, roads, water, waterways,
    /// railways).
    pub fn for_category(category: FeatureCategory) -> Self {
        use FeatureCategory::*;
        match category {
            Habitation => Self::equals("fclass", &["residential"]),
            Orchard => Self::equals("fclass", &["orchard"]),
            NatureReserve => Self::equals("fclass", &["nature_reserve"]),
            School => Self::equals("type", &["school"]),
            Hospital => Self::equals("type", &["hospital"]),
            Religious => Self::equals("type", &["temple", "mosque", "church"]),
            NationalHighway => Self::prefix("ref", &["NH", "NE"]),
            StateHighway => Self::prefix("ref", &["SH"]),
            DistrictHighway => Self::prefix("ref", &["MDR"]),
            Wetland => Self::equals("fclass", &["wetland"]),
            River => Self::equals("fclass", &["river"]),
            Railway | Kiln => FeatureFilter::Any,
        }
    }

    pub fn accepts(&self, props: &Map<String, Value>) -> bool {
        match self {
            FeatureFilter::Any => true,
            FeatureFilter::Equals { key, values } => props
                .get(key)
                .and_then(Value::as_str)
                .is_some_and(|v| values.iter().any(|x| x == v)),
            FeatureFilter::Prefix { key, prefixes } => props
                .get(key)
                .and_then(Value::as_str)
                .is_some_and(|v| prefixes.iter().any(|p| v.starts_with(p.as_str()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub id: String,
    pub geometry: Geometry,
    pub properties: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLayer {
    pub category: FeatureCategory,
    pub features: Vec<Feature>,
}

impl FeatureLayer {
    pub fn new(category: FeatureCategory) -> Self {
        FeatureLayer {
            category,
            features: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ParsedLayer {
    pub layer: FeatureLayer,
    /// Features that passed the filter but could not be represented.
    pub issues: Vec<FeatureIssue>,
    /// Features the category filter rejected.
    pub filtered_out: usize,
}

fn feature_id(f: &Value) -> Option<String> {
    let raw = f
        .get("id")
        .or_else(|| f.get("properties").and_then(|p| p.get("osm_id")))
        .or_else(|| f.get("properties").and_then(|p| p.get("id")))?;
    match raw {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Parses a WGS84 GeoJSON FeatureCollection, keeping features that satisfy
/// `filter`. Geometries that cannot be represented are listed in
/// [`ParsedLayer::issues`].
pub fn parse_feature_geojson(bytes: &[u8], category: FeatureCategory, filter: &FeatureFilter) -> Result<ParsedLayer> {
    let root: Value = serde_json::from_slice(bytes).map_err(|e| Error::json(bytes, e))?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::Invalid("expected a GeoJSON FeatureCollection".into()));
    }
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Invalid("FeatureCollection has no features array".into()))?;

    let mut layer = FeatureLayer::new(category);
    let mut issues = Vec::new();
    let mut filtered_out = 0;
    for (index, f) in features.iter().enumerate() {
        let id = feature_id(f);
        let issue = |message: String| FeatureIssue {
            index,
            id: id.clone(),
            message,
        };
        let props = match f.get("properties") {
            Some(Value::Object(m)) => m.clone(),
            Some(Value::Null) | None => Map::new(),
            Some(_) => {
                issues.push(issue("properties must be an object".into()));
                continue;
            }
        };
        if !filter.accepts(&props) {
            filtered_out += 1;
            continue;
        }
        let geoms = match f.get("geometry") {
            Some(g) if !g.is_null() => geometry_from_json(g),
            _ => Err(Error::InvalidGeometry("missing geometry".into())),
        };
        match geoms {
            Ok(parts) => {
                let base = id.clone().unwrap_or_else(|| format!("{category}-{index}"));
                let multi = parts.len() > 1;
                for (k, geometry) in parts.into_iter().enumerate() {
                    layer.features.push(Feature {
                        id: if multi { format!("{base}#{k}") } else { base.clone() },
                        geometry,
                        properties: props.clone(),
                    });
                }
            }
            Err(e) => issues.push(issue(e.to_string())),
        }
    }
    Ok(ParsedLayer {
        layer,
        issues,
        filtered_out,
    })
}

/// Named polygons (states, districts) from a FeatureCollection, with the
/// name taken from `properties[name_key]`. Multi-polygons keep one name.
pub fn parse_regions(bytes: &[u8], name_key: &str) -> Result<Vec<(String, Geometry)>> {
    let parsed = parse_feature_geojson(bytes, FeatureCategory::Habitation, &FeatureFilter::Any)?;
    if !parsed.issues.is_empty() {
        return Err(Error::Features(parsed.issues));
    }
    let mut out = Vec::new();
    for f in parsed.layer.features {
        let name = f
            .properties
            .get(name_key)
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Invalid(format!("region {} has no string property {name_key:?}", f.id)))?;
        if !matches!(f.geometry, Geometry::Polygon { .. }) {
            return Err(Error::InvalidGeometry(format!(
                "region {name:?} is a {}, not a polygon",
                f.geometry.type_name()
            )));
        }
        out.push((name.to_string(), f.geometry));
    }
    Ok(out)
}

pub fn write_feature_geojson(layer: &FeatureLayer) -> String {
    let features: Vec<Value> = layer
        .features
        .iter()
        .map(|f| {
            json!({
                "type": "Feature",
                "id": f.id,
                "geometry": geometry_to_json(&f.geometry),
                "properties": f.properties,
            })
        })
        .collect();
    feature_collection_text(&features, &[("category", json!(layer.category.as_str()))])
}
