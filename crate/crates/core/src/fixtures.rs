//! Bundled reference tables and small synthetic scenes used by tests,
//! benches and the demo server.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geo::{self, GeoPoint, Geometry};
use crate::impact::ClassCounts;
use crate::ingest::{
    geometry_to_json, write_feature_geojson, write_kiln_dataset, write_population_grid, write_quad_labels, ComplianceRuleSet, Feature,
    FeatureCategory, FeatureLayer, KilnRecord, PopulationGrid, Provenance, ValidationState,
};
use crate::obb::{CropGeoref, Detection, Frame, KilnClass, OrientedBox};
use crate::survey::DistrictCounts;

pub const SURVEY_DELHI_NCR: &str = include_str!("../fixtures/survey_delhi_ncr.csv");
pub const SURVEY_WEST_BENGAL: &str = include_str!("../fixtures/survey_west_bengal.csv");
pub const SURVEY_BIHAR: &str = include_str!("../fixtures/survey_bihar.csv");
pub const PRODUCTION: &str = include_str!("../fixtures/production.csv");
pub const STATE_KILN_COUNTS: &str = include_str!("../fixtures/state_kiln_counts.csv");
pub const EMISSIONS_EXPECTED: &str = include_str!("../fixtures/emissions_expected.csv");
pub const LEAVE_ONE_REGION_OUT: &str = include_str!("../fixtures/leave_one_region_out.csv");
/// Delhi Airshed leave-one-region-out counts as quad label files.
pub const DELHI_DETECTIONS: &str = include_str!("../fixtures/eval_delhi_dets.txt");
pub const DELHI_TRUTH: &str = include_str!("../fixtures/eval_delhi_truth.txt");

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn num<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> Result<T> {
    let s = rec.get(i).unwrap_or("");
    s.parse().map_err(|_| Error::Line {
        line,
        message: format!("column {} value {s:?} is not a number", i + 1),
    })
}

/// Reads `district,survey,ours` tables.
pub fn parse_district_pairs(text: &str) -> Result<DistrictCounts> {
    let mut rows = Vec::new();
    for (i, rec) in reader(text).records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        rows.push((
            rec.get(0).unwrap_or("").to_string(),
            num::<f64>(&rec, 1, line)?,
            num::<usize>(&rec, 2, line)?,
        ));
    }
    let borrowed: Vec<(&str, f64, usize)> = rows.iter().map(|(d, s, o)| (d.as_str(), *s, *o)).collect();
    Ok(DistrictCounts::from_pairs(&borrowed))
}

/// Reads `state,cfcbk,fcbk,zigzag` tables.
pub fn parse_state_counts(text: &str) -> Result<BTreeMap<String, ClassCounts>> {
    let mut out = BTreeMap::new();
    for (i, rec) in reader(text).records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let c = ClassCounts::new(num(&rec, 1, line)?, num(&rec, 2, line)?, num(&rec, 3, line)?);
        out.insert(rec.get(0).unwrap_or("").to_string(), c);
    }
    Ok(out)
}

/// One leave-one-region-out row with its published precision and recall.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionCounts {
    pub region: String,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
}

pub fn region_counts() -> Result<Vec<RegionCounts>> {
    let mut out = Vec::new();
    for (i, rec) in reader(LEAVE_ONE_REGION_OUT).records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        out.push(RegionCounts {
            region: rec.get(0).unwrap_or("").to_string(),
            tp: num(&rec, 1, line)?,
            fp: num(&rec, 2, line)?,
            fn_: num(&rec, 3, line)?,
            precision: num(&rec, 4, line)?,
            recall: num(&rec, 5, line)?,
        });
    }
    Ok(out)
}

/// Moves `p` by meters east and north on the sphere.
pub fn offset(p: GeoPoint, east_m: f64, north_m: f64) -> GeoPoint {
    let m_per_deg = geo::EARTH_MEAN_RADIUS_M.to_radians();
    GeoPoint {
        lon: p.lon + east_m / (m_per_deg * p.lat.to_radians().cos()),
        lat: p.lat + north_m / m_per_deg,
    }
}

/// A Mercator-frame kiln record centered on `p`.
pub fn kiln_at(id: &str, p: GeoPoint, class: KilnClass, theta: f64) -> KilnRecord {
    let m = geo::wgs84_to_mercator(p).expect("fixture point in range");
    KilnRecord {
        id: id.to_string(),
        bbox: OrientedBox::new(m.x, m.y, 160.0, 90.0, theta, Frame::Mercator).expect("fixture box"),
        class,
        confidence: 0.9,
        state: "Uttar Pradesh".into(),
        validation_state: ValidationState::Pending,
        provenance: Provenance {
            crop_id: Some("demo".into()),
            model_run: Some("fixture".into()),
            ..Default::default()
        },
    }
}

fn feature(id: &str, g: Geometry) -> Feature {
    Feature {
        id: id.to_string(),
        geometry: g,
        properties: Default::default(),
    }
}

/// Synthetic Uttar Pradesh scene around Lucknow.
#[derive(Debug, Clone)]
pub struct DemoScene {
    pub records: Vec<KilnRecord>,
    pub layers: Vec<FeatureLayer>,
    pub rules: ComplianceRuleSet,
    pub population: PopulationGrid,
    pub region: (String, Geometry),
}

pub const DEMO_ORIGIN: GeoPoint = GeoPoint { lon: 80.90, lat: 26.80 };

/// Twenty kilns on a 2 km lattice with six planted violations: k03 school,
/// k07 habitation, k11 national highway, k14 railway, and the k18/k19 pair
/// 500 m apart.
pub fn demo_scene() -> DemoScene {
    let o = DEMO_ORIGIN;
    let classes = [KilnClass::Fcbk, KilnClass::Zigzag, KilnClass::Zigzag, KilnClass::Cfcbk];
    let mut pos = Vec::new();
    for i in 0..20 {
        let (r, c) = (i / 5, i % 5);
        pos.push(offset(o, 2000.0 * c as f64, 2000.0 * r as f64));
    }
    pos[19] = offset(pos[18], 500.0, 0.0);
    let records: Vec<KilnRecord> = pos
        .iter()
        .enumerate()
        .map(|(i, &p)| kiln_at(&format!("k{i:02}"), p, classes[i % 4], 0.15 * i as f64 - 1.2))
        .collect();

    let mut school = FeatureLayer::new(FeatureCategory::School);
    school
        .features
        .push(feature("school-1", Geometry::Point(offset(pos[3], 0.0, 500.0))));
    let mut hospital = FeatureLayer::new(FeatureCategory::Hospital);
    hospital
        .features
        .push(feature("hospital-1", Geometry::Point(offset(pos[0], -1500.0, 0.0))));
    let mut habitation = FeatureLayer::new(FeatureCategory::Habitation);
    let c = offset(pos[7], 0.0, -700.0);
    let sq: Vec<GeoPoint> = [(-100.0, -100.0), (100.0, -100.0), (100.0, 100.0), (-100.0, 100.0)]
        .iter()
        .map(|&(e, n)| offset(c, e, n))
        .collect();
    habitation
        .features
        .push(feature("village-1", Geometry::polygon(sq, vec![]).expect("fixture polygon")));
    let mut nh = FeatureLayer::new(FeatureCategory::NationalHighway);
    nh.features.push(feature(
        "nh-1",
        Geometry::polyline(vec![offset(pos[11], -150.0, 150.0), offset(pos[11], 150.0, 150.0)]).expect("fixture line"),
    ));
    let mut rail = FeatureLayer::new(FeatureCategory::Railway);
    rail.features.push(feature(
        "rail-1",
        Geometry::polyline(vec![offset(pos[14], 150.0, -200.0), offset(pos[14], 150.0, 200.0)]).expect("fixture line"),
    ));
    let mut religious = FeatureLayer::new(FeatureCategory::Religious);
    religious
        .features
        .push(feature("temple-1", Geometry::Point(offset(pos[16], 0.0, -1900.0))));

    let sw = offset(o, -3000.0, -3000.0);
    let ne = offset(o, 11_000.0, 9000.0);
    let cell = 0.005;
    let ncols = ((ne.lon - sw.lon) / cell).ceil() as usize;
    let nrows = ((ne.lat - sw.lat) / cell).ceil() as usize;
    let values = (0..nrows * ncols)
        .map(|i| {
            let (r, c) = (i / ncols, i % ncols);
            (100 + (r * 7 + c * 13) % 50) as f64
        })
        .collect();
    let population = PopulationGrid::new(ncols, nrows, sw.lon, sw.lat, cell, -9999.0, values).expect("fixture grid");
    let region = Geometry::polygon(
        vec![sw, GeoPoint { lon: ne.lon, lat: sw.lat }, ne, GeoPoint { lon: sw.lon, lat: ne.lat }],
        vec![],
    )
    .expect("fixture region");

    DemoScene {
        records,
        layers: vec![school, hospital, habitation, nh, rail, religious],
        rules: ComplianceRuleSet::reference(),
        population,
        region: ("Uttar Pradesh".into(), region),
    }
}

/// The first three demo kilns, for end-to-end validation loops.
pub fn three_kilns() -> Vec<KilnRecord> {
    demo_scene().records.into_iter().take(3).collect()
}

/// `n` kilns each seen by two overlapping crops, already in Mercator.
/// Merging should keep exactly one detection per kiln.
pub fn duplicated_cross_tile(n: usize) -> Vec<Detection> {
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        let k = kiln_at(&format!("k{i}"), offset(DEMO_ORIGIN, 1000.0 * i as f64, 0.0), KilnClass::Fcbk, 0.3);
        let mut a = k.to_detection();
        a.id = format!("crop-a/{i}");
        a.source_crop = "crop-a".into();
        a.confidence = 0.9;
        let mut b = a.clone();
        b.id = format!("crop-b/{i}");
        b.source_crop = "crop-b".into();
        b.confidence = 0.8;
        b.bbox = OrientedBox::new(
            a.bbox.cx + 3.0,
            a.bbox.cy - 2.0,
            a.bbox.w - 4.0,
            a.bbox.h + 2.0,
            a.bbox.theta + 0.02,
            Frame::Mercator,
        )
        .expect("fixture box");
        out.push(a);
        out.push(b);
    }
    out
}

/// Detections and truths of one class laid out so that matching at IoU 0.5
/// yields exactly `tp`, `fp` and `fn_`.
pub fn labels_with_counts(class: KilnClass, tp: usize, fp: usize, fn_: usize) -> (Vec<Detection>, Vec<Detection>) {
    layout(Frame::Mercator, 1000.0, (120.0, 60.0), class, tp, fp, fn_)
}

/// Crop size of the label-file form of [`labels_with_counts`].
pub const LABEL_CROP_PX: u32 = 10_000;

/// Quad label files (detections, truths) with the given counts, for a crop
/// of [`LABEL_CROP_PX`] pixels.
pub fn label_files_with_counts(tp: usize, fp: usize, fn_: usize) -> Result<(String, String)> {
    let (d, t) = layout(Frame::Pixel, 100.0, (60.0, 30.0), KilnClass::Fcbk, tp, fp, fn_);
    let g = CropGeoref::unreferenced("fixture", LABEL_CROP_PX);
    Ok((write_quad_labels(&d, &g)?, write_quad_labels(&t, &g)?))
}

fn layout(
    frame: Frame,
    pitch: f64,
    size: (f64, f64),
    class: KilnClass,
    tp: usize,
    fp: usize,
    fn_: usize,
) -> (Vec<Detection>, Vec<Detection>) {
    let place = |i: usize| {
        let (r, c) = (i / 100, i % 100);
        OrientedBox::new(pitch * (c as f64 + 0.5), pitch * (r as f64 + 0.5), size.0, size.1, 0.25, frame).expect("fixture box")
    };
    let mk = |id: String, b: OrientedBox, conf: f64| Detection {
        id,
        class,
        confidence: conf,
        bbox: b,
        source_crop: "fixture".into(),
    };
    let (mut dets, mut truths) = (Vec::new(), Vec::new());
    let mut slot = 0;
    let total = tp + fp;
    let conf = |k: usize| ((0.99 - 0.98 * k as f64 / total.max(1) as f64) * 1e4).round() / 1e4;
    let (mut t, mut f) = (0, 0);
    for k in 0..total {
        // interleave hits and false alarms in rank order
        let hit = t < tp && (f >= fp || t * fp <= f * tp);
        let b = place(slot);
        slot += 1;
        if hit {
            truths.push(mk(format!("t{t:05}"), b, 1.0));
            let shifted = OrientedBox::new(b.cx + pitch / 200.0, b.cy, b.w, b.h, b.theta, frame).expect("fixture box");
            dets.push(mk(format!("d{k:05}"), shifted, conf(k)));
            t += 1;
        } else {
            dets.push(mk(format!("d{k:05}"), b, conf(k)));
            f += 1;
        }
    }
    for j in 0..fn_ {
        truths.push(mk(format!("m{j:05}"), place(slot), 1.0));
        slot += 1;
    }
    (dets, truths)
}

/// Writes the demo scene as input files: `kilns.geojson`, `features/`,
/// `population.asc`, `production.csv`, `rules.csv` and `region.geojson`.
pub fn write_demo_inputs(dir: &Path) -> Result<()> {
    let s = demo_scene();
    fs::create_dir_all(dir.join("features"))?;
    fs::write(dir.join("kilns.geojson"), write_kiln_dataset(&s.records, None))?;
    for layer in &s.layers {
        fs::write(
            dir.join("features").join(format!("{}.geojson", layer.category.as_str())),
            write_feature_geojson(layer),
        )?;
    }
    fs::write(dir.join("population.asc"), write_population_grid(&s.population))?;
    fs::write(dir.join("production.csv"), "state,daily_t\nUttar Pradesh,15000\n")?;
    fs::write(dir.join("rules.csv"), s.rules.to_table_text())?;
    let region = serde_json::json!({
        "type": "FeatureCollection",
        "features": [{"type": "Feature", "properties": {"name": s.region.0}, "geometry": geometry_to_json(&s.region.1)}],
    });
    fs::write(dir.join("region.geojson"), format!("{region}\n"))?;
    Ok(())
}
