//! Reference implementations and scene generators shared by the
//! integration tests. Oracles are written for clarity, not speed, and avoid
//! the code paths they check.

#![allow(dead_code)]

use std::collections::BTreeMap;

use kilnwatch_core::compliance::{kiln_distance, AuditOptions, KilnAudit, Violation};
use kilnwatch_core::fixtures::offset;
use kilnwatch_core::geo::{self, haversine_distance, point_to_geometry_distance};
use kilnwatch_core::ingest::{Feature, Provenance};
use kilnwatch_core::obb::obb_iou;
use kilnwatch_core::{
    ComplianceRuleSet, Criterion, Detection, FeatureCategory, FeatureLayer, Frame, GeoPoint, Geometry, KilnClass, KilnRecord, NmsConfig,
    OrientedBox, PopulationGrid, ValidationState,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

// ---- geometry ----

/// x-interval where `|(x - cx)·a + k| <= half`, as a closed range.
fn slab(cx: f64, a: f64, k: f64, half: f64) -> Option<(f64, f64)> {
    if a.abs() < 1e-15 {
        return (k.abs() <= half).then_some((f64::NEG_INFINITY, f64::INFINITY));
    }
    let (u, v) = ((-half - k) / a + cx, (half - k) / a + cx);
    Some((u.min(v), u.max(v)))
}

/// Points of row `y` inside box `b`, from the box's own slab equations.
fn row_interval(b: &OrientedBox, y: f64) -> Option<(f64, f64)> {
    let (s, c) = b.theta.sin_cos();
    let dy = y - b.cy;
    // local u = dx·c + dy·s, v = -dx·s + dy·c
    let (u0, u1) = slab(b.cx, c, dy * s, b.w / 2.0)?;
    let (v0, v1) = slab(b.cx, -s, dy * c, b.h / 2.0)?;
    let (lo, hi) = (u0.max(v0), u1.min(v1));
    (lo <= hi).then_some((lo, hi))
}

/// IoU by scanning rows `resolution` times finer than the smaller box side,
/// exact along each row.
pub fn raster_iou(a: &OrientedBox, b: &OrientedBox, resolution: f64) -> f64 {
    let step = a.w.min(a.h).min(b.w).min(b.h) / resolution;
    let (ab, bb) = (a.aabb(), b.aabb());
    let (y0, y1) = (ab[1].min(bb[1]), ab[3].max(bb[3]));
    let rows = ((y1 - y0) / step).ceil() as usize;
    let (mut inter, mut area_a, mut area_b) = (0.0, 0.0, 0.0);
    for i in 0..rows {
        let y = y0 + (i as f64 + 0.5) * step;
        let ia = row_interval(a, y);
        let ib = row_interval(b, y);
        if let Some((l, h)) = ia {
            area_a += h - l;
        }
        if let Some((l, h)) = ib {
            area_b += h - l;
        }
        if let (Some(p), Some(q)) = (ia, ib) {
            inter += (p.1.min(q.1) - p.0.max(q.0)).max(0.0);
        }
    }
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

pub fn random_box(rng: &mut ChaCha8Rng, spread: f64) -> OrientedBox {
    let w = rng.gen_range(5.0..60.0);
    let h = rng.gen_range(5.0..60.0);
    OrientedBox::new(
        rng.gen_range(-spread..spread),
        rng.gen_range(-spread..spread),
        w,
        h,
        rng.gen_range(-3.2..3.2),
        Frame::Mercator,
    )
    .unwrap()
}

// ---- NMS ----

/// Textbook NMS: take the best remaining box, drop everything it
/// suppresses, repeat.
pub fn reference_nms(ds: &[Detection], cfg: &NmsConfig) -> Vec<String> {
    let mut rest: Vec<&Detection> = ds.iter().filter(|d| d.confidence >= cfg.conf_thresh).collect();
    let mut kept = Vec::new();
    while !rest.is_empty() {
        let mut best = 0;
        for i in 1..rest.len() {
            let (a, b) = (rest[i], rest[best]);
            if a.confidence > b.confidence || (a.confidence == b.confidence && a.id < b.id) {
                best = i;
            }
        }
        let top = rest.remove(best);
        rest.retain(|d| !((cfg.class_agnostic || d.class == top.class) && obb_iou(&top.bbox, &d.bbox) >= cfg.iou_thresh));
        kept.push(top.id.clone());
    }
    kept
}

pub fn random_detections(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> Vec<Detection> {
    (0..n)
        .map(|i| Detection {
            id: format!("d{:03}", rng.gen_range(0..1000) * 1000 + i),
            class: KilnClass::from_index(rng.gen_range(0..3)).unwrap(),
            // coarse confidences force ties
            confidence: (rng.gen_range(0..20) as f64) / 19.0,
            bbox: random_box(rng, spread),
            source_crop: "r".into(),
        })
        .collect()
}

// ---- evaluation ----

/// All-points AP by definition: at every true positive, the best precision
/// at that recall or beyond, averaged over the ground truth.
pub fn reference_ap(flags: &[bool], truth_count: usize) -> f64 {
    let prec: Vec<f64> = flags
        .iter()
        .scan(0usize, |tp, &h| {
            *tp += h as usize;
            Some(*tp)
        })
        .enumerate()
        .map(|(i, tp)| tp as f64 / (i + 1) as f64)
        .collect();
    let mut sum = 0.0;
    for (k, &h) in flags.iter().enumerate() {
        if h {
            sum += prec[k..].iter().cloned().fold(0.0, f64::max);
        }
    }
    sum / truth_count as f64
}

// ---- compliance ----

/// Audits without any index: every feature of every relevant category is
/// measured.
pub fn brute_force_audit(
    records: &[KilnRecord],
    layers: &[FeatureLayer],
    rules: &ComplianceRuleSet,
    opts: &AuditOptions,
) -> Vec<KilnAudit> {
    let active: Vec<&KilnRecord> = records
        .iter()
        .filter(|r| r.validation_state != ValidationState::Discarded)
        .collect();
    let mut out = Vec::new();
    for k in &active {
        let mut violations = Vec::new();
        for c in Criterion::ALL {
            let Some(limit) = rules.threshold(&k.state, c) else { continue };
            let cands: Vec<(String, f64)> = if c == Criterion::InterKiln {
                active
                    .iter()
                    .filter(|o| o.id != k.id)
                    .map(|o| (o.id.clone(), haversine_distance(k.centroid(), o.centroid())))
                    .collect()
            } else {
                layers
                    .iter()
                    .filter(|l| l.category == c.category())
                    .flat_map(|l| &l.features)
                    .map(|f| {
                        let d = match opts.anchor {
                            kilnwatch_core::compliance::KilnAnchor::Centroid => {
                                point_to_geometry_distance(k.centroid(), &f.geometry).unwrap()
                            }
                            _ => kiln_distance(k, &f.geometry, opts.anchor),
                        };
                        (f.id.clone(), d)
                    })
                    .collect()
            };
            let best = cands
                .into_iter()
                .filter(|(_, d)| *d < limit)
                .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
            if let Some((id, d)) = best {
                violations.push((c, id, d, limit));
            }
        }
        violations.sort_by_key(|v| Criterion::ALL.iter().position(|c| *c == v.0));
        out.push(KilnAudit {
            kiln_id: k.id.clone(),
            state: k.state.clone(),
            violations: violations
                .into_iter()
                .map(|(criterion, feature_id, distance_m, threshold_m)| Violation {
                    kiln_id: k.id.clone(),
                    criterion,
                    feature_id,
                    distance_m,
                    threshold_m,
                })
                .collect(),
        });
    }
    out
}

pub const STATES: [&str; 5] = ["Uttar Pradesh", "Bihar", "West Bengal", "Haryana", "Punjab"];

/// Same shape as the published table: five states, every criterion either
/// a distance or absent.
pub fn random_rules(rng: &mut ChaCha8Rng) -> ComplianceRuleSet {
    let mut rules = ComplianceRuleSet::default();
    for s in STATES {
        for c in Criterion::ALL {
            let v = rng
                .gen_bool(0.75)
                .then(|| [100.0, 200.0, 300.0, 500.0, 800.0, 1000.0, 5000.0][rng.gen_range(0..7)]);
            rules.set(s, c, v).unwrap();
        }
    }
    rules
}

pub fn kiln(id: String, p: GeoPoint, class: KilnClass, theta: f64, state: &str) -> KilnRecord {
    let m = geo::wgs84_to_mercator(p).unwrap();
    KilnRecord {
        id,
        bbox: OrientedBox::new(m.x, m.y, 140.0, 80.0, theta, Frame::Mercator).unwrap(),
        class,
        confidence: 0.9,
        state: state.into(),
        validation_state: ValidationState::Pending,
        provenance: Provenance::default(),
    }
}

fn random_point(rng: &mut ChaCha8Rng, o: GeoPoint, extent_m: f64) -> GeoPoint {
    offset(o, rng.gen_range(0.0..extent_m), rng.gen_range(0.0..extent_m))
}

fn random_geometry(rng: &mut ChaCha8Rng, o: GeoPoint, extent_m: f64) -> Geometry {
    let p = random_point(rng, o, extent_m);
    match rng.gen_range(0..3) {
        0 => Geometry::Point(p),
        1 => {
            let n = rng.gen_range(2..6);
            let mut v = vec![p];
            for _ in 1..n {
                let last = *v.last().unwrap();
                v.push(offset(last, rng.gen_range(-1500.0..1500.0), rng.gen_range(-1500.0..1500.0)));
            }
            Geometry::polyline(v).unwrap()
        }
        _ => {
            let (w, h) = (rng.gen_range(50.0..1500.0), rng.gen_range(50.0..1500.0));
            let outer = vec![p, offset(p, w, 0.0), offset(p, w, h), offset(p, 0.0, h)];
            let holes = if rng.gen_bool(0.3) {
                vec![vec![
                    offset(p, w * 0.25, h * 0.25),
                    offset(p, w * 0.75, h * 0.25),
                    offset(p, w * 0.5, h * 0.75),
                ]]
            } else {
                vec![]
            };
            Geometry::polygon(outer, holes).unwrap()
        }
    }
}

pub struct Scene {
    pub records: Vec<KilnRecord>,
    pub layers: Vec<FeatureLayer>,
    pub rules: ComplianceRuleSet,
}

/// Random kilns and features packed into a square of `extent_m`.
pub fn random_scene(rng: &mut ChaCha8Rng, max_kilns: usize, max_features: usize) -> Scene {
    let o = GeoPoint {
        lon: 80.0 + rng.gen_range(-2.0..2.0),
        lat: 26.0 + rng.gen_range(-2.0..2.0),
    };
    let extent = rng.gen_range(3000.0..20_000.0);
    let nk = rng.gen_range(1..=max_kilns);
    let nf = rng.gen_range(0..=max_features);
    let mut records: Vec<KilnRecord> = (0..nk)
        .map(|i| {
            let mut k = kiln(
                format!("k{i:04}"),
                random_point(rng, o, extent),
                KilnClass::from_index(rng.gen_range(0..3)).unwrap(),
                rng.gen_range(-1.5..1.5),
                STATES[rng.gen_range(0..5)],
            );
            if rng.gen_bool(0.05) {
                k.validation_state = ValidationState::Discarded;
            }
            k
        })
        .collect();
    // a stacked duplicate exercises equal-distance ties
    if nk >= 2 {
        records[1].bbox = records[0].bbox;
    }
    let cats: Vec<FeatureCategory> = FeatureCategory::ALL.into_iter().filter(|c| *c != FeatureCategory::Kiln).collect();
    let mut by_cat: BTreeMap<FeatureCategory, Vec<Feature>> = BTreeMap::new();
    for i in 0..nf {
        let g = random_geometry(rng, o, extent);
        let cat = cats[rng.gen_range(0..cats.len())];
        by_cat.entry(cat).or_default().push(Feature {
            id: format!("f{i:05}"),
            geometry: g.clone(),
            properties: Default::default(),
        });
        if rng.gen_bool(0.02) {
            by_cat.entry(cat).or_default().push(Feature {
                id: format!("f{i:05}b"),
                geometry: g,
                properties: Default::default(),
            });
        }
    }
    Scene {
        records,
        layers: by_cat
            .into_iter()
            .map(|(category, features)| FeatureLayer { category, features })
            .collect(),
        rules: random_rules(rng),
    }
}

// ---- exposure ----

/// Visits every cell of the grid; no windowing.
pub fn brute_force_population(points: &[GeoPoint], grid: &PopulationGrid, radius_km: f64) -> f64 {
    let mut visited = vec![false; grid.values.len()];
    for r in 0..grid.nrows {
        for c in 0..grid.ncols {
            let center = grid.cell_center(r, c);
            if points.iter().any(|&p| haversine_distance(p, center) <= radius_km * 1000.0) {
                visited[r * grid.ncols + c] = true;
            }
        }
    }
    visited
        .iter()
        .zip(&grid.values)
        .filter(|&(&v, &x)| v && x != grid.nodata)
        .map(|(_, x)| x)
        .sum()
}

/// Integer-valued grid with scattered nodata cells.
pub fn random_grid(rng: &mut ChaCha8Rng) -> PopulationGrid {
    let (ncols, nrows) = (rng.gen_range(5..80), rng.gen_range(5..80));
    let cellsize = [0.001, 0.0025, 0.005, 0.01][rng.gen_range(0..4)];
    let values = (0..ncols * nrows)
        .map(|_| {
            if rng.gen_bool(0.05) {
                -9999.0
            } else {
                rng.gen_range(0..5000) as f64
            }
        })
        .collect();
    PopulationGrid::new(
        ncols,
        nrows,
        77.0 + rng.gen_range(0.0..1.0),
        25.0 + rng.gen_range(0.0..1.0),
        cellsize,
        -9999.0,
        values,
    )
    .unwrap()
}

pub fn points_around(rng: &mut ChaCha8Rng, grid: &PopulationGrid, n: usize) -> Vec<GeoPoint> {
    let w = grid.ncols as f64 * grid.cellsize;
    let h = grid.nrows as f64 * grid.cellsize;
    (0..n)
        .map(|_| GeoPoint {
            lon: grid.xllcorner + rng.gen_range(-0.1 * w..1.1 * w),
            lat: grid.yllcorner + rng.gen_range(-0.1 * h..1.1 * h),
        })
        .collect()
}

// ---- persistence ----

use kilnwatch_core::tiling::{annotation_grid, CellStatus, GridCell};
use kilnwatch_core::workflow::{
    apply_validation, parse_log, ActionKind, CellChange, FailPoint, LogEntry, ValidationAction, Workspace, LOG_FILE,
};
use kilnwatch_core::Error;

#[derive(Debug, Clone, PartialEq)]
enum Request {
    Validation(ValidationAction),
    Cell(CellChange),
}

impl Request {
    fn id(&self) -> &str {
        match self {
            Request::Validation(a) => &a.action_id,
            Request::Cell(c) => &c.action_id,
        }
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct TrialStats {
    pub applied: usize,
    pub crashes: usize,
    pub retries: usize,
    pub refused: usize,
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn apply_cell_model(grid: &mut [GridCell], c: &CellChange) {
    let cell = grid.iter_mut().find(|g| (g.row, g.col) == (c.row, c.col)).unwrap();
    cell.status = c.status;
    if c.assignee.is_some() {
        cell.assignee = c.assignee.clone();
    }
}

fn random_request(rng: &mut ChaCha8Rng, n: usize, model: &[KilnRecord], grid: &[GridCell]) -> Request {
    let ts = format!("2024-03-01T{:02}:{:02}:{:02}Z", n / 3600 % 24, n / 60 % 60, n % 60);
    let action_id = format!("a{n:05}");
    if rng.gen_bool(0.25) && !grid.is_empty() {
        let g = &grid[rng.gen_range(0..grid.len())];
        return Request::Cell(CellChange {
            action_id,
            row: g.row,
            col: g.col,
            status: [CellStatus::Unvisited, CellStatus::InProgress, CellStatus::Done][rng.gen_range(0..3)],
            assignee: rng.gen_bool(0.5).then(|| ["asha", "ravi"][rng.gen_range(0..2)].to_string()),
            actor: "tester".into(),
            timestamp: ts,
        });
    }
    let kiln_id = if rng.gen_bool(0.03) {
        "missing".to_string()
    } else {
        model[rng.gen_range(0..model.len())].id.clone()
    };
    let kind = match rng.gen_range(0..10) {
        0..=2 => ActionKind::Accept,
        3..=5 => {
            let b = model.iter().find(|r| r.id == kiln_id).map(|r| r.bbox).unwrap_or(model[0].bbox);
            ActionKind::Adjust {
                bbox: OrientedBox::new(
                    b.cx + rng.gen_range(-20.0..20.0),
                    b.cy + rng.gen_range(-20.0..20.0),
                    b.w * rng.gen_range(0.8..1.2),
                    b.h * rng.gen_range(0.8..1.2),
                    b.theta + rng.gen_range(-0.3..0.3),
                    Frame::Mercator,
                )
                .unwrap(),
            }
        }
        6..=8 => ActionKind::Reclassify {
            class: KilnClass::from_index(rng.gen_range(0..3)).unwrap(),
        },
        _ => ActionKind::Discard,
    };
    Request::Validation(ValidationAction {
        action_id,
        kiln_id,
        kind,
        actor: "tester".into(),
        timestamp: ts,
    })
}

fn submit(ws: &mut Workspace, r: &Request) -> Result<bool, Error> {
    match r {
        Request::Validation(a) => ws.submit(a.clone()).map(|o| o.duplicate),
        Request::Cell(c) => ws.set_cell_status(c.clone()).map(|o| o.duplicate),
    }
}

/// Model-checked run of random actions, retries and crashes against a
/// workspace. The model applies exactly the actions that reached the log.
pub fn persistence_trial(seed: u64, steps: usize) -> Result<TrialStats, String> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let scene = kilnwatch_core::fixtures::demo_scene();
    let initial: Vec<KilnRecord> = scene.records.into_iter().take(12).collect();
    let grid0 = annotation_grid(&scene.region.1, 4.0).map_err(|e| e.to_string())?;
    let mut ws = Workspace::create(dir.path(), initial.clone(), grid0.clone()).map_err(|e| e.to_string())?;
    let (mut model, mut grid) = (initial.clone(), grid0);
    let mut durable: Vec<Request> = Vec::new();
    let mut stats = TrialStats::default();
    let reopen = |ws: Workspace| -> Result<Workspace, String> {
        drop(ws);
        Workspace::open(dir.path()).map_err(|e| format!("reopen failed: {e}"))
    };

    for n in 0..steps {
        let roll = rng.gen_range(0..100);
        if roll < 10 && !durable.is_empty() {
            // retry of an acknowledged or crashed-but-logged request
            let r = durable[rng.gen_range(0..durable.len())].clone();
            let dup = submit(&mut ws, &r).map_err(|e| format!("retry of {} failed: {e}", r.id()))?;
            check(dup, || format!("retry of {} was applied again", r.id()))?;
            stats.retries += 1;
            continue;
        }
        if roll < 13 && !durable.is_empty() {
            let prev = durable[rng.gen_range(0..durable.len())].id().to_string();
            let mut r = random_request(&mut rng, n, &model, &grid);
            match &mut r {
                Request::Validation(a) => a.action_id = prev.clone(),
                Request::Cell(c) => c.action_id = prev.clone(),
            }
            let same = durable.iter().any(|d| match (d, &r) {
                (Request::Validation(a), Request::Validation(b)) => {
                    a.action_id == b.action_id && a.kiln_id == b.kiln_id && a.kind == b.kind
                }
                (Request::Cell(a), Request::Cell(b)) => {
                    a.action_id == b.action_id && (a.row, a.col, a.status, &a.assignee) == (b.row, b.col, b.status, &b.assignee)
                }
                _ => false,
            });
            if !same {
                let res = submit(&mut ws, &r);
                check(matches!(res, Err(Error::Conflict(_))), || format!("reused id {prev} gave {res:?}"))?;
            }
            continue;
        }
        if roll < 18 {
            if rng.gen_bool(0.5) {
                ws.inject_failure(FailPoint::BeforeSnapshotRename);
                check(ws.snapshot().is_err(), || "snapshot fail point did not fire".into())?;
                stats.crashes += 1;
            } else {
                ws.snapshot().map_err(|e| e.to_string())?;
            }
            ws = reopen(ws)?;
        } else {
            let r = random_request(&mut rng, n, &model, &grid);
            let fail = rng.gen_bool(0.15).then(|| {
                if rng.gen_bool(0.5) {
                    FailPoint::AfterLogAppend
                } else {
                    FailPoint::TornAppend
                }
            });
            if let Some(fp) = fail {
                ws.inject_failure(fp);
            }
            // what the model says should happen
            let expected = match &r {
                Request::Validation(a) => {
                    let mut m = model.clone();
                    apply_validation(&mut m, a).map(|_| m).map_err(|e| e.code())
                }
                Request::Cell(_) => Ok(model.clone()),
            };
            let res = submit(&mut ws, &r);
            match (&expected, res) {
                (Err(code), Err(e)) => {
                    check(*code == e.code(), || format!("{} refused with {} not {code}", r.id(), e.code()))?;
                    stats.refused += 1;
                    // a refusal leaves any armed fail point for a later write
                    ws = reopen(ws)?;
                }
                (Err(code), Ok(_)) => return Err(format!("{} accepted but the model refuses it ({code})", r.id())),
                (Ok(_), Ok(dup)) => {
                    check(!dup, || format!("fresh action {} reported as duplicate", r.id()))?;
                    check(fail.is_none(), || format!("fail point {fail:?} did not fire"))?;
                    if let Ok(m) = expected {
                        model = m;
                    }
                    if let Request::Cell(c) = &r {
                        apply_cell_model(&mut grid, c);
                    }
                    durable.push(r);
                    stats.applied += 1;
                }
                (Ok(_), Err(e)) => {
                    match fail {
                        Some(FailPoint::AfterLogAppend) => {
                            if let Ok(m) = expected {
                                model = m;
                            }
                            if let Request::Cell(c) = &r {
                                apply_cell_model(&mut grid, c);
                            }
                            durable.push(r);
                        }
                        Some(FailPoint::TornAppend) => {}
                        _ => return Err(format!("unexpected error {e}")),
                    }
                    stats.crashes += 1;
                    ws = reopen(ws)?;
                }
            }
        }
        if rng.gen_bool(0.1) {
            ws.maybe_snapshot(5).map_err(|e| e.to_string())?;
        }
        check(ws.records() == model.as_slice(), || format!("step {n}: records diverge from model"))?;
        check(ws.grid() == grid.as_slice(), || format!("step {n}: grid diverges from model"))?;
    }

    // the log alone, replayed over the initial records, rebuilds the state
    let log = parse_log(&std::fs::read(dir.path().join(LOG_FILE)).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    check(log.entries.len() == durable.len(), || {
        format!("{} log entries for {} durable actions", log.entries.len(), durable.len())
    })?;
    let mut replayed = initial;
    for e in &log.entries {
        if let LogEntry::Validation { action, .. } = e {
            apply_validation(&mut replayed, action).map_err(|e| format!("replay: {e}"))?;
        }
    }
    check(replayed == ws.records(), || "log replay differs from live state".into())?;
    ws.snapshot().map_err(|e| e.to_string())?;
    let ws2 = reopen(ws)?;
    check(ws2.records() == replayed.as_slice(), || "snapshot differs from log replay".into())?;
    Ok(stats)
}
