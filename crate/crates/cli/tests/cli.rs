use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use kilnwatch_core::fixtures::{self, DELHI_DETECTIONS, DELHI_TRUTH, DEMO_ORIGIN, LABEL_CROP_PX, SURVEY_WEST_BENGAL};
use kilnwatch_core::geo::mercator_resolution;
use kilnwatch_core::ingest::{read_kiln_dataset, write_kiln_dataset};
use kilnwatch_core::workflow::Workspace;
use kilnwatch_core::KilnRecord;
use serde_json::Value;

fn kilnwatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kilnwatch")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = kilnwatch(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn merge_halves_duplicated_detections() {
    let tmp = tempfile::tempdir().unwrap();
    let dets = fixtures::duplicated_cross_tile(12);
    let records: Vec<KilnRecord> = dets.iter().map(|d| KilnRecord::from_detection(d, None).unwrap()).collect();
    let (a, b): (Vec<_>, Vec<_>) = records.into_iter().partition(|r| r.id.starts_with("crop-a"));
    let (fa, fb, out) = (
        tmp.path().join("a.geojson"),
        tmp.path().join("b.geojson"),
        tmp.path().join("merged.geojson"),
    );
    fs::write(&fa, write_kiln_dataset(&a, None)).unwrap();
    fs::write(&fb, write_kiln_dataset(&b, None)).unwrap();
    ok(&["merge", s(&fa), s(&fb), "--out", s(&out)]);
    let merged = read_kiln_dataset(&fs::read(&out).unwrap()).unwrap().records;
    assert_eq!(merged.len(), 12);
    assert!(merged.iter().all(|r| r.id.starts_with("crop-a")));
}

#[test]
fn eval_reproduces_delhi_precision_and_recall() {
    let tmp = tempfile::tempdir().unwrap();
    let (d, t) = (tmp.path().join("d.txt"), tmp.path().join("t.txt"));
    fs::write(&d, DELHI_DETECTIONS).unwrap();
    fs::write(&t, DELHI_TRUTH).unwrap();
    let size = LABEL_CROP_PX.to_string();
    let v: Value = serde_json::from_str(&ok(&["eval", "--dets", s(&d), "--truth", s(&t), "--crop-size", &size, "--json"])).unwrap();
    let total = &v["total"];
    assert_eq!(
        (total["tp"].as_u64(), total["fp"].as_u64(), total["fn"].as_u64()),
        (Some(317), Some(421), Some(632)),
        "{v}"
    );
    assert!((total["precision"].as_f64().unwrap() - 0.43).abs() < 0.005);
    assert!((total["recall"].as_f64().unwrap() - 0.33).abs() < 0.005);
}

#[test]
fn crop_grid_counts() {
    assert_eq!(ok(&["crop-grid", "--count"]).trim(), "49");
    let csv = ok(&["crop-grid", "--image-size", "1280", "--crop-size", "640", "--overlap", "0"]);
    assert_eq!(csv, "x0,y0\n0,0\n640,0\n0,640\n640,640\n");
    assert!(!kilnwatch(&["crop-grid", "--crop-size", "64", "--overlap", "64"]).status.success());
}

#[test]
fn audit_flags_the_planted_violations() {
    let tmp = tempfile::tempdir().unwrap();
    fixtures::write_demo_inputs(tmp.path()).unwrap();
    let p = |f: &str| tmp.path().join(f);
    let viol = p("violations.csv");
    let text = ok(&[
        "audit",
        "--rules",
        s(&p("rules.csv")),
        "--kilns",
        s(&p("kilns.geojson")),
        "--features",
        s(&p("features")),
        "--violations",
        s(&viol),
        "--state",
        "Uttar Pradesh",
    ]);
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["non_compliant"][0], 6);
    assert_eq!(v["total"][0], 20);
    let rows = fs::read_to_string(&viol).unwrap();
    let flagged: std::collections::BTreeSet<&str> = rows.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(flagged.into_iter().collect::<Vec<_>>(), ["k03", "k07", "k11", "k14", "k18", "k19"]);

    // the same kilns with state taken from the region layer
    let again = ok(&[
        "audit",
        "--rules",
        s(&p("rules.csv")),
        "--kilns",
        s(&p("kilns.geojson")),
        "--features",
        s(&p("features")),
        "--regions",
        s(&p("region.geojson")),
        "--state",
        "Uttar Pradesh",
    ]);
    assert_eq!(again, text);
}

#[test]
fn bad_inputs_fail_with_a_message() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.geojson");
    fs::write(&bad, "{\"type\": \"FeatureCollection\", \"features\": [").unwrap();
    let out = kilnwatch(&["audit", "--kilns", s(&bad), "--features", s(tmp.path())]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("malformed JSON"), "{err}");
    assert!(!kilnwatch(&["eval", "--dets", "/nonexistent", "--truth", "/nonexistent"])
        .status
        .success());
}

#[test]
fn impact_commands() {
    let tmp = tempfile::tempdir().unwrap();
    fixtures::write_demo_inputs(tmp.path()).unwrap();
    let p = |f: &str| tmp.path().join(f);
    let csv = ok(&[
        "emissions",
        "--kilns",
        s(&p("kilns.geojson")),
        "--production",
        s(&p("production.csv")),
        "--format",
        "csv",
    ]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "state,mass_t_per_day,pm2_5,so2,co,co2");
    assert!(lines[1].starts_with("Uttar Pradesh,15000.00,"));
    let v: Value = serde_json::from_str(&ok(&[
        "exposure",
        "--kilns",
        s(&p("kilns.geojson")),
        "--population",
        s(&p("population.asc")),
        "--radius-km",
        "1,2",
    ]))
    .unwrap();
    assert_eq!(v["rows"][0]["radius_km"], serde_json::json!([1.0, 2.0]));
}

#[test]
fn survey_and_dating() {
    let tmp = tempfile::tempdir().unwrap();
    let pairs = tmp.path().join("wb.csv");
    fs::write(&pairs, SURVEY_WEST_BENGAL).unwrap();
    let v: Value = serde_json::from_str(&ok(&["survey-compare", "--pairs", s(&pairs)])).unwrap();
    assert!((v["comparison"]["r"].as_f64().unwrap() - 0.84).abs() <= 0.01, "{v}");

    let obs = tmp.path().join("obs.csv");
    let mut text = String::from("kiln_id,year,observation\n");
    for y in 2014..=2023 {
        let o = match y {
            ..=2016 => "absent",
            2017..=2019 => "FCBK",
            _ => "Zigzag",
        };
        text.push_str(&format!("k1,{y},{o}\n"));
    }
    fs::write(&obs, text).unwrap();
    let line = ok(&["date-kilns", "--observations", s(&obs), "--start", "2014", "--end", "2023"]);
    let v: Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(v["kiln_id"], "k1");
    assert_eq!(v["result"]["conversion"], 2020);
    assert_eq!(v["result"]["final_class"], "Zigzag");
}

fn quad(x0: f64, y0: f64, w: f64, h: f64, size: f64) -> String {
    let pts = [(x0, y0), (x0 + w, y0), (x0 + w, y0 + h), (x0, y0 + h)];
    pts.iter()
        .map(|(x, y)| format!("{:.6} {:.6}", x / size, y / size))
        .collect::<Vec<_>>()
        .join(" ")
}

#[test]
fn ingest_from_overlapping_crop_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let labels = tmp.path().join("labels");
    fs::create_dir(&labels).unwrap();
    let origin = DEMO_ORIGIN.to_mercator().unwrap();
    let res = mercator_resolution(17).unwrap();
    let shift = 576.0 * res;
    fs::write(
        tmp.path().join("crops.csv"),
        format!(
            "crop_id,origin_x,origin_y,zoom,size_px\na,{},{},17,640\nb,{},{},17,640\n",
            origin.x,
            origin.y,
            origin.x + shift,
            origin.y
        ),
    )
    .unwrap();
    // one kiln seen by both crops plus one only in b
    fs::write(labels.join("a.txt"), format!("1 {} 0.9\n", quad(600.0, 300.0, 30.0, 20.0, 640.0))).unwrap();
    fs::write(
        labels.join("b.txt"),
        format!(
            "1 {} 0.8\n2 {} 0.7\n",
            quad(24.0, 300.0, 30.0, 20.0, 640.0),
            quad(300.0, 100.0, 40.0, 20.0, 640.0)
        ),
    )
    .unwrap();
    let ws = tmp.path().join("ws");
    ok(&[
        "ingest",
        "--workspace",
        s(&ws),
        "--labels",
        s(&labels),
        "--crops",
        s(&tmp.path().join("crops.csv")),
        "--model-run",
        "r1",
    ]);
    let w = Workspace::open(&ws).unwrap();
    let mut ids: Vec<&str> = w.records().iter().map(|r| r.id.as_str()).collect();
    ids.sort();
    assert_eq!(ids, ["a:1", "b:2"]);
    assert_eq!(w.kiln("a:1").unwrap().provenance.model_run.as_deref(), Some("r1"));

    // refuses to clobber without --force
    let again = kilnwatch(&[
        "ingest",
        "--workspace",
        s(&ws),
        "--labels",
        s(&labels),
        "--crops",
        s(&tmp.path().join("crops.csv")),
    ]);
    assert!(!again.status.success());
}

#[test]
fn annotation_grid_covers_the_region() {
    let tmp = tempfile::tempdir().unwrap();
    fixtures::write_demo_inputs(tmp.path()).unwrap();
    let out = tmp.path().join("grid.geojson");
    ok(&[
        "annotation-grid",
        "--region",
        s(&tmp.path().join("region.geojson")),
        "--cell-km",
        "5",
        "--out",
        s(&out),
    ]);
    let v: Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    let cells = v["features"].as_array().unwrap();
    assert!(!cells.is_empty());
    assert!(cells.iter().all(|c| c["properties"]["status"] == "unvisited"));
}

#[test]
fn serve_reads_config_and_env() {
    let tmp = tempfile::tempdir().unwrap();
    fixtures::write_demo_inputs(tmp.path()).unwrap();
    let ws = tmp.path().join("ws");
    ok(&["ingest", "--workspace", s(&ws), "--kilns", s(&tmp.path().join("kilns.geojson"))]);
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = tmp.path().join("kilnwatch.toml");
    fs::write(&cfg, "listen = \"127.0.0.1:1\"\nworkspace = \"/nonexistent\"\n").unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_kilnwatch"))
        .args(["serve", "--config", s(&cfg)])
        .env("KILNWATCH_LISTEN", format!("127.0.0.1:{port}"))
        .env("KILNWATCH_WORKSPACE", &ws)
        .stderr(std::process::Stdio::null())
        .spawn()
        .unwrap();
    let mut body = None;
    for _ in 0..100 {
        if let Ok(mut conn) = std::net::TcpStream::connect(("127.0.0.1", port)) {
            use std::io::{Read, Write};
            conn.write_all(b"GET /api/progress HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n")
                .unwrap();
            let mut resp = String::new();
            conn.read_to_string(&mut resp).unwrap();
            body = Some(resp);
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(50));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    let resp = body.expect("server came up");
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains("\"total\":20"), "{resp}");
}
