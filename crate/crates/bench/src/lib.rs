//! Seeded synthetic workloads shared by the benchmarks.

use kilnwatch_core::fixtures::{kiln_at, offset};
use kilnwatch_core::ingest::Feature;
use kilnwatch_core::{
    Detection, FeatureCategory, FeatureLayer, Frame, GeoPoint, Geometry, KilnClass, KilnRecord, OrientedBox, PopulationGrid,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// South-west corner of the synthetic study area, in Uttar Pradesh.
pub const AREA_SW: GeoPoint = GeoPoint { lon: 80.0, lat: 26.0 };
/// Edge of the square study area in meters.
pub const AREA_M: f64 = 100_000.0;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_point(r: &mut ChaCha8Rng) -> GeoPoint {
    offset(AREA_SW, r.gen_range(0.0..AREA_M), r.gen_range(0.0..AREA_M))
}

pub fn random_box(r: &mut impl Rng, frame: Frame) -> OrientedBox {
    OrientedBox::new(
        r.gen_range(0.0..200.0),
        r.gen_range(0.0..200.0),
        r.gen_range(20.0..120.0),
        r.gen_range(10.0..60.0),
        r.gen_range(-3.2..3.2),
        frame,
    )
    .unwrap()
}

/// `n` Mercator detections in clusters of about `dup` overlapping boxes,
/// as produced by overlapping crops.
pub fn clustered_detections(n: usize, dup: usize, seed: u64) -> Vec<Detection> {
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(n);
    let origin = AREA_SW.to_mercator().unwrap();
    while out.len() < n {
        let (cx, cy) = (origin.x + r.gen_range(0.0..AREA_M), origin.y + r.gen_range(0.0..AREA_M));
        let theta = r.gen_range(-1.5..1.5);
        for _ in 0..dup.min(n - out.len()) {
            let b = OrientedBox::new(
                cx + r.gen_range(-8.0..8.0),
                cy + r.gen_range(-8.0..8.0),
                r.gen_range(140.0..170.0),
                r.gen_range(80.0..100.0),
                theta + r.gen_range(-0.05..0.05),
                Frame::Mercator,
            )
            .unwrap();
            let class = KilnClass::ALL[r.gen_range(0..3)];
            out.push(Detection::new(format!("d{}", out.len()), class, r.gen_range(0.2..1.0), b, "bench").unwrap());
        }
    }
    out
}

pub fn kilns(n: usize, seed: u64) -> Vec<KilnRecord> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            kiln_at(
                &format!("k{i}"),
                random_point(&mut r),
                KilnClass::ALL[i % 3],
                r.gen_range(-1.5..1.5),
            )
        })
        .collect()
}

fn feature(id: String, geometry: Geometry) -> Feature {
    Feature {
        id,
        geometry,
        properties: serde_json::Map::new(),
    }
}

/// Point layers for schools, hospitals and religious sites, settlement
/// polygons, and road and rail polylines.
pub fn layers(points_per_layer: usize, lines: usize, seed: u64) -> Vec<FeatureLayer> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    for cat in [FeatureCategory::School, FeatureCategory::Hospital, FeatureCategory::Religious] {
        let mut l = FeatureLayer::new(cat);
        for i in 0..points_per_layer {
            l.features
                .push(feature(format!("{}-{i}", cat.as_str()), Geometry::Point(random_point(&mut r))));
        }
        out.push(l);
    }
    let mut hab = FeatureLayer::new(FeatureCategory::Habitation);
    for i in 0..points_per_layer / 4 {
        let c = random_point(&mut r);
        let s = r.gen_range(100.0..600.0);
        let ring = vec![offset(c, -s, -s), offset(c, s, -s), offset(c, s, s), offset(c, -s, s)];
        hab.features
            .push(feature(format!("hab-{i}"), Geometry::polygon(ring, vec![]).unwrap()));
    }
    out.push(hab);
    for cat in [FeatureCategory::NationalHighway, FeatureCategory::Railway] {
        let mut l = FeatureLayer::new(cat);
        for i in 0..lines {
            let mut p = random_point(&mut r);
            let mut verts = vec![p];
            for _ in 0..40 {
                p = offset(p, r.gen_range(-1500.0..1500.0), r.gen_range(-1500.0..1500.0));
                verts.push(p);
            }
            l.features
                .push(feature(format!("{}-{i}", cat.as_str()), Geometry::polyline(verts).unwrap()));
        }
        out.push(l);
    }
    out
}

/// A 1 km-ish population raster over the study area.
pub fn population(seed: u64) -> PopulationGrid {
    let mut r = rng(seed);
    let cell = 0.01;
    let n = 110;
    let values = (0..n * n).map(|_| r.gen_range(0.0..2000.0f64).round()).collect();
    PopulationGrid::new(n, n, AREA_SW.lon - 0.05, AREA_SW.lat - 0.05, cell, -9999.0, values).unwrap()
}
