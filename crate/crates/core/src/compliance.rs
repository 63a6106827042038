//! Distance-based siting audit over an R-tree of feature envelopes.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use rstar::primitives::{GeomWithData, Rectangle};
use rstar::{RTree, AABB};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{self, Containment, GeoPoint, Geometry, LocalFrame, MAX_MERCATOR_LAT, MERCATOR_HALF_EXTENT_M};
use crate::ingest::{ComplianceRuleSet, Criterion, Feature, FeatureCategory, FeatureLayer, KilnRecord};
use crate::planar::{self, Pt};

/// Where distances are measured from on the kiln.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KilnAnchor {
    #[default]
    Centroid,
    /// Nearest point of the kiln footprint.
    Edge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AuditOptions {
    pub anchor: KilnAnchor,
}

type Entry = GeomWithData<Rectangle<[f64; 2]>, usize>;

/// Immutable per-category R-trees over Mercator envelopes.
#[derive(Debug, Default)]
pub struct SpatialIndex {
    features: Vec<(FeatureCategory, Feature)>,
    trees: HashMap<FeatureCategory, RTree<Entry>>,
}

fn mercator_x(lon: f64) -> f64 {
    geo::MERCATOR_RADIUS_M * lon.to_radians()
}

fn mercator_y(lat: f64) -> f64 {
    let lat = lat.clamp(-MAX_MERCATOR_LAT, MAX_MERCATOR_LAT);
    geo::MERCATOR_RADIUS_M * lat.to_radians().tan().asinh()
}

fn mercator_envelope(b: [f64; 4]) -> ([f64; 2], [f64; 2]) {
    ([mercator_x(b[0]), mercator_y(b[1])], [mercator_x(b[2]), mercator_y(b[3])])
}

impl SpatialIndex {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature(&self, i: usize) -> (&FeatureCategory, &Feature) {
        let (c, f) = &self.features[i];
        (c, f)
    }

    /// Indices of every `category` feature whose envelope meets the search
    /// box of `radius_m` around `p`. A superset of the features within
    /// `radius_m`; callers refine with exact distances.
    pub fn candidates(&self, category: FeatureCategory, p: GeoPoint, radius_m: f64) -> Vec<usize> {
        let Some(tree) = self.trees.get(&category) else {
            return Vec::new();
        };
        let (lo, hi) = mercator_envelope(geo::search_bounds(p, radius_m));
        let world = 2.0 * MERCATOR_HALF_EXTENT_M;
        let mut out = Vec::new();
        for shift in [0.0, world, -world] {
            let (a, b) = ([lo[0] + shift, lo[1]], [hi[0] + shift, hi[1]]);
            if b[0] < -MERCATOR_HALF_EXTENT_M - 1.0 || a[0] > MERCATOR_HALF_EXTENT_M + 1.0 {
                continue;
            }
            out.extend(tree.locate_in_envelope_intersecting(&AABB::from_corners(a, b)).map(|e| e.data));
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Features of `category` within `radius_m` of `p`, with distances.
    pub fn within(&self, category: FeatureCategory, p: GeoPoint, radius_m: f64) -> Vec<(usize, f64)> {
        self.candidates(category, p, radius_m)
            .into_iter()
            .map(|i| (i, geo::distance_unchecked(p, &self.features[i].1.geometry)))
            .filter(|&(_, d)| d <= radius_m)
            .collect()
    }
}

/// Bulk-loads one tree per category. Input order fixes feature indices.
pub fn build_index(layers: &[FeatureLayer]) -> SpatialIndex {
    let mut features = Vec::new();
    let mut entries: HashMap<FeatureCategory, Vec<Entry>> = HashMap::new();
    for layer in layers {
        for f in &layer.features {
            let (a, b) = mercator_envelope(f.geometry.bounds());
            entries
                .entry(layer.category)
                .or_default()
                .push(GeomWithData::new(Rectangle::from_corners(a, b), features.len()));
            features.push((layer.category, f.clone()));
        }
    }
    let trees = entries.into_iter().map(|(c, v)| (c, RTree::bulk_load(v))).collect();
    SpatialIndex { features, trees }
}

/// Kiln centroids as a point layer for the inter-kiln rule. Discarded
/// records are skipped.
pub fn kiln_layer(records: &[KilnRecord]) -> FeatureLayer {
    FeatureLayer {
        category: FeatureCategory::Kiln,
        features: records
            .iter()
            .filter(|r| r.is_active())
            .map(|r| Feature {
                id: r.id.clone(),
                geometry: Geometry::Point(r.centroid()),
                properties: Default::default(),
            })
            .collect(),
    }
}

fn kiln_outline(k: &KilnRecord, frame: &LocalFrame) -> Vec<Pt> {
    match k.footprint() {
        Geometry::Polygon { outer, .. } => outer[..4].iter().map(|p| frame.project(*p)).collect(),
        _ => unreachable!("footprints are polygons"),
    }
}

fn rect_distance(rect: &[Pt], g: &Geometry, frame: &LocalFrame) -> f64 {
    let edges = |poly: &[Pt]| -> Vec<(Pt, Pt)> { (0..poly.len()).map(|i| (poly[i], poly[(i + 1) % poly.len()])).collect() };
    let rect_edges = edges(rect);
    let point_to_rect = |p: Pt| {
        if planar::point_in_polygon(p, rect) {
            0.0
        } else {
            rect_edges
                .iter()
                .map(|&(a, b)| planar::point_segment_distance(p, a, b))
                .fold(f64::INFINITY, f64::min)
        }
    };
    let chain_distance = |chain: &[Pt]| -> f64 {
        let segs: Vec<(Pt, Pt)> = chain.windows(2).map(|w| (w[0], w[1])).collect();
        if segs
            .iter()
            .any(|&(a, b)| rect_edges.iter().any(|&(c, d)| planar::segments_intersect(a, b, c, d)))
        {
            return 0.0;
        }
        let from_chain = chain.iter().map(|&p| point_to_rect(p)).fold(f64::INFINITY, f64::min);
        let from_rect = rect
            .iter()
            .flat_map(|&c| segs.iter().map(move |&(a, b)| planar::point_segment_distance(c, a, b)))
            .fold(f64::INFINITY, f64::min);
        from_chain.min(from_rect)
    };
    match g {
        Geometry::Point(q) => point_to_rect(frame.project(*q)),
        Geometry::Polyline(vs) => {
            let chain: Vec<Pt> = vs.iter().map(|p| frame.project(*p)).collect();
            chain_distance(&chain)
        }
        Geometry::Polygon { outer, holes } => {
            let rings: Vec<Vec<Pt>> = std::iter::once(outer)
                .chain(holes)
                .map(|r| r.iter().map(|p| frame.project(*p)).collect())
                .collect();
            let inside = planar::point_in_polygon(rect[0], &rings[0]) && !rings[1..].iter().any(|h| planar::point_in_polygon(rect[0], h));
            if inside {
                return 0.0;
            }
            rings.iter().map(|r| chain_distance(r)).fold(f64::INFINITY, f64::min)
        }
    }
}

/// Meters from kiln `k` to geometry `g` under `anchor`.
pub fn kiln_distance(k: &KilnRecord, g: &Geometry, anchor: KilnAnchor) -> f64 {
    let c = k.centroid();
    match anchor {
        KilnAnchor::Centroid => geo::distance_unchecked(c, g),
        KilnAnchor::Edge => {
            let frame = LocalFrame::new(c);
            rect_distance(&kiln_outline(k, &frame), g, &frame)
        }
    }
}

/// Search radius that covers every feature closer than `threshold` under
/// `anchor`.
fn search_radius(k: &KilnRecord, threshold: f64, anchor: KilnAnchor) -> f64 {
    match anchor {
        KilnAnchor::Centroid => threshold,
        // Mercator meters overstate ground size, so this over-covers
        KilnAnchor::Edge => threshold + 0.5 * k.bbox.w.hypot(k.bbox.h),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kiln_id: String,
    pub criterion: Criterion,
    pub feature_id: String,
    pub distance_m: f64,
    pub threshold_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KilnAudit {
    pub kiln_id: String,
    pub state: String,
    pub violations: Vec<Violation>,
}

/// Nearest `(feature id, distance)` strictly closer than `limit`; equal
/// distances resolve to the smaller id.
fn nearest_below<'a>(cands: impl Iterator<Item = (&'a str, f64)>, limit: f64) -> Option<(&'a str, f64)> {
    let mut best: Option<(&str, f64)> = None;
    for (id, d) in cands {
        if d >= limit {
            continue;
        }
        best = match best {
            Some((bid, bd)) if bd < d || (bd == d && bid <= id) => Some((bid, bd)),
            _ => Some((id, d)),
        };
    }
    best
}

/// One violation per criterion with a rule in the kiln's state, against the
/// nearest offending feature.
pub fn audit_kiln(k: &KilnRecord, idx: &SpatialIndex, rules: &ComplianceRuleSet, opts: &AuditOptions) -> Result<Vec<Violation>> {
    let rows = rules
        .rules_for(&k.state)
        .ok_or_else(|| Error::UnknownState(format!("kiln {} has state {:?}, which has no rule row", k.id, k.state)))?;
    let mut out = Vec::new();
    for (criterion, threshold) in rows {
        let cat = criterion.category();
        let centroid = k.centroid();
        let cands = idx
            .candidates(cat, centroid, search_radius(k, threshold, opts.anchor))
            .into_iter()
            .map(|i| &idx.features[i].1)
            .filter(|f| !(cat == FeatureCategory::Kiln && f.id == k.id))
            .map(|f| {
                let d = match (cat, opts.anchor) {
                    // inter-kiln spacing is centroid to centroid
                    (FeatureCategory::Kiln, _) => geo::distance_unchecked(centroid, &f.geometry),
                    _ => kiln_distance(k, &f.geometry, opts.anchor),
                };
                (f.id.as_str(), d)
            });
        if let Some((fid, d)) = nearest_below(cands, threshold) {
            out.push(Violation {
                kiln_id: k.id.clone(),
                criterion,
                feature_id: fid.to_string(),
                distance_m: d,
                threshold_m: threshold,
            });
        }
    }
    Ok(out)
}

/// Audits every non-discarded kiln in parallel; output follows input order.
pub fn audit_all(records: &[KilnRecord], idx: &SpatialIndex, rules: &ComplianceRuleSet, opts: &AuditOptions) -> Result<Vec<KilnAudit>> {
    records
        .par_iter()
        .filter(|r| r.is_active())
        .map(|r| {
            Ok(KilnAudit {
                kiln_id: r.id.clone(),
                state: r.state.clone(),
                violations: audit_kiln(r, idx, rules, opts)?,
            })
        })
        .collect()
}

/// Index and audit in one step, with the inter-kiln layer built from
/// `records`.
pub fn run_audit(
    records: &[KilnRecord],
    layers: &[FeatureLayer],
    rules: &ComplianceRuleSet,
    opts: &AuditOptions,
) -> Result<Vec<KilnAudit>> {
    let mut all: Vec<FeatureLayer> = layers.iter().filter(|l| l.category != FeatureCategory::Kiln).cloned().collect();
    all.push(kiln_layer(records));
    audit_all(records, &build_index(&all), rules, opts)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionHit {
    pub region: Option<String>,
    /// On a shared edge or inside several regions.
    pub ambiguous: bool,
}

/// Point-in-polygon lookup; several matches resolve to the
/// lexicographically first name and are flagged.
pub fn locate_region(p: GeoPoint, regions: &[(String, Geometry)]) -> RegionHit {
    const EDGE_TOL_DEG: f64 = 1e-9;
    let mut hits: Vec<(&str, bool)> = regions
        .iter()
        .filter_map(|(name, g)| match g {
            Geometry::Polygon { outer, holes } => match geo::locate_in_polygon(p, outer, holes, EDGE_TOL_DEG) {
                Containment::Inside => Some((name.as_str(), false)),
                Containment::Boundary => Some((name.as_str(), true)),
                Containment::Outside => None,
            },
            _ => None,
        })
        .collect();
    hits.sort();
    RegionHit {
        region: hits.first().map(|(n, _)| n.to_string()),
        ambiguous: hits.len() > 1 || hits.iter().any(|&(_, edge)| edge),
    }
}

/// Sets `state` on every record from a boundary layer; returns the ids of
/// records that were ambiguous or fell outside every region.
pub fn assign_states(records: &mut [KilnRecord], regions: &[(String, Geometry)]) -> Vec<String> {
    let hits: Vec<RegionHit> = records.par_iter().map(|r| locate_region(r.centroid(), regions)).collect();
    let mut flagged = Vec::new();
    for (r, hit) in records.iter_mut().zip(hits) {
        if hit.ambiguous || hit.region.is_none() {
            flagged.push(r.id.clone());
        }
        r.state = hit.region.unwrap_or_default();
    }
    flagged
}

pub fn percentage(part: usize, total: usize) -> u32 {
    if total == 0 {
        0
    } else {
        (100.0 * part as f64 / total as f64).round() as u32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    pub state: String,
    /// `None` where the state has no rule for the criterion.
    pub violations: BTreeMap<Criterion, Option<usize>>,
    pub non_compliant: usize,
    pub total: usize,
    pub percentage: u32,
}

/// Per-state violation matrix with a trailing "Total" column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceSummary {
    pub states: Vec<StateSummary>,
    pub total: StateSummary,
}

/// States appear in rule-table order; kilns in states missing from the
/// table are counted under their own name after those.
pub fn aggregate(audits: &[KilnAudit], rules: &ComplianceRuleSet) -> ComplianceSummary {
    let mut names: Vec<String> = rules.states.clone();
    for a in audits {
        if !names.contains(&a.state) {
            names.push(a.state.clone());
        }
    }
    let mut states: Vec<StateSummary> = names
        .iter()
        .map(|s| StateSummary {
            state: s.clone(),
            violations: Criterion::ALL.iter().map(|&c| (c, rules.threshold(s, c).map(|_| 0))).collect(),
            non_compliant: 0,
            total: 0,
            percentage: 0,
        })
        .collect();
    let pos: HashMap<&str, usize> = names.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    for a in audits {
        let row = &mut states[pos[a.state.as_str()]];
        row.total += 1;
        if !a.violations.is_empty() {
            row.non_compliant += 1;
        }
        for v in &a.violations {
            *row.violations.get_mut(&v.criterion).unwrap().get_or_insert(0) += 1;
        }
    }
    let mut total = StateSummary {
        state: "Total".into(),
        violations: Criterion::ALL.iter().map(|&c| (c, None)).collect(),
        non_compliant: 0,
        total: 0,
        percentage: 0,
    };
    for s in &mut states {
        s.percentage = percentage(s.non_compliant, s.total);
        total.non_compliant += s.non_compliant;
        total.total += s.total;
        for (c, v) in &s.violations {
            if let Some(n) = v {
                *total.violations.get_mut(c).unwrap().get_or_insert(0) += n;
            }
        }
    }
    total.percentage = percentage(total.non_compliant, total.total);
    ComplianceSummary { states, total }
}

impl ComplianceSummary {
    /// Restricts the matrix to one state, keeping its own row as the total.
    pub fn for_state(&self, state: &str) -> Option<ComplianceSummary> {
        let row = self.states.iter().find(|s| s.state == state)?.clone();
        Some(ComplianceSummary {
            states: vec![row.clone()],
            total: StateSummary {
                state: "Total".into(),
                ..row
            },
        })
    }

    /// Criterion rows by state columns, `null` for undefined rules.
    pub fn to_json(&self) -> serde_json::Value {
        let cols: Vec<&StateSummary> = self.states.iter().chain(std::iter::once(&self.total)).collect();
        let mut rows = Vec::new();
        for c in Criterion::ALL {
            let vals: Vec<Option<usize>> = cols.iter().map(|s| s.violations[&c]).collect();
            rows.push(serde_json::json!({"criterion": c.as_str(), "counts": vals}));
        }
        serde_json::json!({
            "states": cols.iter().map(|s| s.state.as_str()).collect::<Vec<_>>(),
            "rows": rows,
            "non_compliant": cols.iter().map(|s| s.non_compliant).collect::<Vec<_>>(),
            "total": cols.iter().map(|s| s.total).collect::<Vec<_>>(),
            "percentage": cols.iter().map(|s| s.percentage).collect::<Vec<_>>(),
        })
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_json()).expect("summary serializes");
        s.push('\n');
        s
    }
}

/// `kiln_id,criterion,distance_m,threshold_m,feature_id`, one row per
/// violation.
pub fn violations_csv(audits: &[KilnAudit]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["kiln_id", "criterion", "distance_m", "threshold_m", "feature_id"])?;
    for v in audits.iter().flat_map(|a| &a.violations) {
        w.write_record([
            v.kiln_id.as_str(),
            v.criterion.as_str(),
            &format!("{:.3}", v.distance_m),
            &v.threshold_m.to_string(),
            v.feature_id.as_str(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Provenance, ValidationState};
    use crate::obb::{Frame, KilnClass, OrientedBox};

    pub(crate) fn kiln(id: &str, state: &str, lon: f64, lat: f64) -> KilnRecord {
        let c = geo::wgs84_to_mercator(GeoPoint { lon, lat }).unwrap();
        KilnRecord {
            id: id.into(),
            bbox: OrientedBox::new(c.x, c.y, 120.0, 60.0, 0.0, Frame::Mercator).unwrap(),
            class: KilnClass::Fcbk,
            confidence: 0.9,
            state: state.into(),
            validation_state: ValidationState::Accepted,
            provenance: Provenance::default(),
        }
    }

    /// Point `meters` due east of `(lon, lat)` by haversine.
    fn east(lon: f64, lat: f64, meters: f64) -> GeoPoint {
        let dlon = (meters / (geo::EARTH_MEAN_RADIUS_M * lat.to_radians().cos())).to_degrees();
        GeoPoint { lon: lon + dlon, lat }
    }

    fn point_layer(cat: FeatureCategory, pts: &[(&str, GeoPoint)]) -> FeatureLayer {
        FeatureLayer {
            category: cat,
            features: pts
                .iter()
                .map(|(id, p)| Feature {
                    id: id.to_string(),
                    geometry: Geometry::Point(*p),
                    properties: Default::default(),
                })
                .collect(),
        }
    }

    #[test]
    fn empty_and_single_feature() {
        let idx = build_index(&[]);
        assert!(idx
            .within(FeatureCategory::School, GeoPoint { lon: 80.0, lat: 26.0 }, 1e4)
            .is_empty());
        let p = GeoPoint { lon: 80.0, lat: 26.0 };
        let idx = build_index(&[point_layer(FeatureCategory::School, &[("s", east(80.0, 26.0, 500.0))])]);
        let hits = idx.within(FeatureCategory::School, p, 600.0);
        assert_eq!(hits.len(), 1);
        assert!((hits[0].1 - 500.0).abs() < 0.01);
    }

    #[test]
    fn habitation_just_inside_threshold() {
        let rules = ComplianceRuleSet::reference();
        let k = kiln("k", "Uttar Pradesh", 80.9, 26.8);
        let layers = [point_layer(FeatureCategory::Habitation, &[("h", east(80.9, 26.8, 999.0))])];
        let v = run_audit(&[k], &layers, &rules, &AuditOptions::default()).unwrap();
        let v = &v[0].violations;
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].criterion, Criterion::Habitation);
        assert!((v[0].distance_m - 999.0).abs() < 0.01);
        assert_eq!(v[0].threshold_m, 1000.0);
    }

    #[test]
    fn kilns_apart_in_bihar() {
        let rules = ComplianceRuleSet::reference();
        let b = east(85.0, 25.5, 1200.0);
        let ks = [kiln("a", "Bihar", 85.0, 25.5), kiln("b", "Bihar", b.lon, b.lat)];
        let out = run_audit(&ks, &[], &rules, &AuditOptions::default()).unwrap();
        assert!(out.iter().all(|a| a.violations.is_empty()));
        let c = east(85.0, 25.5, 900.0);
        let ks = [kiln("a", "Bihar", 85.0, 25.5), kiln("c", "Bihar", c.lon, c.lat)];
        let out = run_audit(&ks, &[], &rules, &AuditOptions::default()).unwrap();
        assert_eq!(out[0].violations[0].feature_id, "c");
        assert_eq!(out[1].violations[0].feature_id, "a");
    }

    #[test]
    fn inside_reserve_is_zero() {
        let rules = ComplianceRuleSet::reference();
        let ring = vec![
            GeoPoint { lon: 88.0, lat: 22.0 },
            GeoPoint { lon: 88.2, lat: 22.0 },
            GeoPoint { lon: 88.2, lat: 22.2 },
            GeoPoint { lon: 88.0, lat: 22.2 },
        ];
        let reserve = FeatureLayer {
            category: FeatureCategory::NatureReserve,
            features: vec![Feature {
                id: "r".into(),
                geometry: Geometry::polygon(ring, vec![]).unwrap(),
                properties: Default::default(),
            }],
        };
        let k = kiln("k", "West Bengal", 88.1, 22.1);
        for anchor in [KilnAnchor::Centroid, KilnAnchor::Edge] {
            let out = run_audit(std::slice::from_ref(&k), std::slice::from_ref(&reserve), &rules, &AuditOptions { anchor }).unwrap();
            let v = &out[0].violations;
            assert_eq!(
                (v[0].criterion, v[0].distance_m, v[0].threshold_m),
                (Criterion::NatureReserve, 0.0, 5000.0)
            );
        }
    }

    #[test]
    fn edge_anchor_is_closer() {
        let k = kiln("k", "Bihar", 85.0, 25.5);
        let g = Geometry::Point(east(85.0, 25.5, 300.0));
        let c = kiln_distance(&k, &g, KilnAnchor::Centroid);
        let e = kiln_distance(&k, &g, KilnAnchor::Edge);
        // half the 120 Mercator-meter width, shrunk by cos(lat) on the ground
        let half_w = 60.0 * 25.5f64.to_radians().cos();
        assert!((c - e - half_w).abs() < 0.5, "{c} {e}");
    }

    #[test]
    fn unknown_state_rejected() {
        let rules = ComplianceRuleSet::reference();
        let r = run_audit(&[kiln("k", "Goa", 74.0, 15.0)], &[], &rules, &AuditOptions::default());
        assert!(matches!(r, Err(Error::UnknownState(_))));
    }

    #[test]
    fn aggregate_shapes() {
        let rules = ComplianceRuleSet::reference();
        let a = |id: &str, st: &str, cs: &[Criterion]| KilnAudit {
            kiln_id: id.into(),
            state: st.into(),
            violations: cs
                .iter()
                .map(|&c| Violation {
                    kiln_id: id.into(),
                    criterion: c,
                    feature_id: "f".into(),
                    distance_m: 1.0,
                    threshold_m: 2.0,
                })
                .collect(),
        };
        let clean = aggregate(&[a("1", "Bihar", &[]), a("2", "Bihar", &[])], &rules);
        assert_eq!(clean.total.non_compliant, 0);
        assert_eq!(clean.total.percentage, 0);
        let s = aggregate(
            &[
                a("1", "Bihar", &[Criterion::School]),
                a("2", "Punjab", &[Criterion::InterKiln, Criterion::Habitation]),
            ],
            &rules,
        );
        assert_eq!(s.total.non_compliant, 2);
        assert_eq!(s.total.percentage, 100);
        let bihar = &s.states[1];
        assert_eq!(bihar.violations[&Criterion::NationalHighway], Some(0));
        assert_eq!(bihar.violations[&Criterion::River], Some(0));
        assert_eq!(s.states[3].violations[&Criterion::River], None);
        assert_eq!(s.total.violations[&Criterion::InterKiln], Some(1));
        assert_eq!(percentage(13296, 17335), 77);
        assert_eq!(percentage(21402, 30638), 70);
    }

    #[test]
    fn shared_edge_goes_to_first_name() {
        let sq = |x0: f64| {
            Geometry::polygon(
                vec![
                    GeoPoint { lon: x0, lat: 0.0 },
                    GeoPoint { lon: x0 + 1.0, lat: 0.0 },
                    GeoPoint { lon: x0 + 1.0, lat: 1.0 },
                    GeoPoint { lon: x0, lat: 1.0 },
                ],
                vec![],
            )
            .unwrap()
        };
        let regions = vec![("b".to_string(), sq(0.0)), ("a".to_string(), sq(1.0))];
        let hit = locate_region(GeoPoint { lon: 1.0, lat: 0.5 }, &regions);
        assert_eq!(
            hit,
            RegionHit {
                region: Some("a".into()),
                ambiguous: true
            }
        );
        let hit = locate_region(GeoPoint { lon: 0.5, lat: 0.5 }, &regions);
        assert_eq!(
            hit,
            RegionHit {
                region: Some("b".into()),
                ambiguous: false
            }
        );
        assert_eq!(locate_region(GeoPoint { lon: 5.0, lat: 0.5 }, &regions).region, None);
    }

    #[test]
    fn csv_columns() {
        let rules = ComplianceRuleSet::reference();
        let k = kiln("k", "Uttar Pradesh", 80.9, 26.8);
        let layers = [point_layer(FeatureCategory::School, &[("s1", east(80.9, 26.8, 250.0))])];
        let out = run_audit(&[k], &layers, &rules, &AuditOptions::default()).unwrap();
        let text = violations_csv(&out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("kiln_id,criterion,distance_m,threshold_m,feature_id"));
        assert_eq!(lines.next(), Some("k,school,250.000,1000,s1"));
    }
}
