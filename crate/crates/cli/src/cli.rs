//! Command-line interface.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use kilnwatch_core::compliance::{assign_states, violations_csv, AuditOptions, KilnAnchor};
use kilnwatch_core::eval::{evaluate, MATCH_IOU};
use kilnwatch_core::impact::{emissions_csv, exposure_csv, EXPOSURE_RADII_KM};
use kilnwatch_core::ingest::{
    parse_quad_labels, parse_regions, read_kiln_dataset, write_feature_geojson, write_kiln_dataset, write_population_grid,
};
use kilnwatch_core::obb::{merge_cross_tile, CropGeoref};
use kilnwatch_core::survey::{compare, date_kiln, district_csv, district_join, parse_observations_csv, parse_survey_csv, YearRange};
use kilnwatch_core::tiling::{annotation_grid, crop_origins, grid_to_geojson, CropSpec};
use kilnwatch_core::workflow::Workspace;
use kilnwatch_core::{fixtures, Detection, Geometry, KilnRecord, MercatorPoint, NmsConfig};
use serde::Deserialize;
use serde_json::json;

use crate::config::Config;
use crate::inputs::{self, Reference, FEATURES_DIR, POPULATION_FILE, PRODUCTION_FILE, RULES_FILE};
use crate::reports;
use crate::server::{self, parse_radii, AppState};
use crate::tiles::TileProxy;

#[derive(Debug, Parser)]
#[command(name = "kilnwatch", version, about = "Brick-kiln inventory, validation and compliance audits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a validation workspace from a kiln inventory or label files.
    Ingest(IngestArgs),
    /// List crop origins for tiling a large image.
    CropGrid(CropGridArgs),
    /// Cut a region into square annotation cells.
    AnnotationGrid(AnnotationGridArgs),
    /// Deduplicate detections from overlapping crops.
    Merge(MergeArgs),
    /// Score detections against ground truth.
    Eval(EvalArgs),
    /// Check kilns against siting rules and print the violation matrix.
    Audit(AuditArgs),
    /// Daily pollutant mass per state.
    Emissions(EmissionsArgs),
    /// Population living near kilns.
    Exposure(ExposureArgs),
    /// Compare kiln counts with a district survey.
    SurveyCompare(SurveyArgs),
    /// Establishment and conversion years from yearly observations.
    DateKilns(DateArgs),
    /// Run the validation API.
    Serve(ServeArgs),
    /// Write a small synthetic input set to try the other commands on.
    Demo(DemoArgs),
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct RegionArgs {
    /// Polygon layer used to set each kiln's state.
    #[arg(long)]
    pub regions: Option<PathBuf>,
    /// Property holding the region name.
    #[arg(long, default_value = "name")]
    pub name_field: String,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub workspace: PathBuf,
    /// Kiln inventory GeoJSON.
    #[arg(long, conflicts_with_all = ["labels", "crops"], required_unless_present = "labels")]
    pub kilns: Option<PathBuf>,
    /// Directory of `<crop_id>.txt` quad label files.
    #[arg(long, requires = "crops")]
    pub labels: Option<PathBuf>,
    /// CSV `crop_id,origin_x,origin_y,zoom,size_px` georeferencing each crop.
    #[arg(long)]
    pub crops: Option<PathBuf>,
    #[arg(long)]
    pub model_run: Option<String>,
    /// Directory of `<category>.geojson` feature files.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Apply the OpenStreetMap tag filters for each category.
    #[arg(long)]
    pub osm_filter: bool,
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long)]
    pub population: Option<PathBuf>,
    #[arg(long)]
    pub production: Option<PathBuf>,
    #[command(flatten)]
    pub region: RegionArgs,
    /// Region polygon for the annotation grid.
    #[arg(long)]
    pub grid_region: Option<PathBuf>,
    #[arg(long, default_value_t = 10.0)]
    pub cell_km: f64,
    /// Replace an existing workspace.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct CropGridArgs {
    #[arg(long, default_value_t = 4096)]
    pub image_size: u32,
    #[arg(long, default_value_t = 640)]
    pub crop_size: u32,
    #[arg(long, default_value_t = 64)]
    pub overlap: u32,
    /// Print only the number of crops.
    #[arg(long)]
    pub count: bool,
}

#[derive(Debug, Args)]
pub struct AnnotationGridArgs {
    #[arg(long)]
    pub region: PathBuf,
    #[arg(long, default_value = "name")]
    pub name_field: String,
    /// Use only the named region when the layer holds several.
    #[arg(long)]
    pub region_name: Option<String>,
    #[arg(long, default_value_t = 10.0)]
    pub cell_km: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    /// Kiln GeoJSON files with detections from overlapping crops.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = NmsConfig::default().iou_thresh)]
    pub iou: f64,
    #[arg(long, default_value_t = NmsConfig::default().conf_thresh)]
    pub conf: f64,
    /// Suppress only within a class.
    #[arg(long)]
    pub per_class: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Detections: quad label file with confidences, or kiln GeoJSON.
    #[arg(long)]
    pub dets: PathBuf,
    /// Ground truth in the same format as the detections.
    #[arg(long)]
    pub truth: PathBuf,
    /// Crop edge in pixels for label files.
    #[arg(long, default_value_t = 640)]
    pub crop_size: u32,
    #[arg(long, default_value_t = MATCH_IOU)]
    pub iou: f64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Rule table; the built-in reference table if omitted.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long)]
    pub kilns: PathBuf,
    /// Directory of `<category>.geojson` feature files.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub osm_filter: bool,
    #[arg(long, value_enum, default_value = "centroid")]
    pub anchor: AnchorArg,
    /// Restrict the output to one state.
    #[arg(long)]
    pub state: Option<String>,
    /// Also write one CSV row per violation here.
    #[arg(long)]
    pub violations: Option<PathBuf>,
    #[command(flatten)]
    pub region: RegionArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AnchorArg {
    Centroid,
    Edge,
}

impl From<AnchorArg> for KilnAnchor {
    fn from(a: AnchorArg) -> Self {
        match a {
            AnchorArg::Centroid => KilnAnchor::Centroid,
            AnchorArg::Edge => KilnAnchor::Edge,
        }
    }
}

#[derive(Debug, Args)]
pub struct EmissionsArgs {
    #[arg(long)]
    pub kilns: PathBuf,
    /// CSV `state,daily_t` or `state,annual_t`.
    #[arg(long)]
    pub production: PathBuf,
    #[arg(long)]
    pub state: Option<String>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    #[command(flatten)]
    pub region: RegionArgs,
}

#[derive(Debug, Args)]
pub struct ExposureArgs {
    #[arg(long)]
    pub kilns: PathBuf,
    /// ESRI ASCII population grid.
    #[arg(long)]
    pub population: PathBuf,
    /// Comma-separated radii; 0.8, 2 and 5 km if omitted.
    #[arg(long, value_delimiter = ',', value_parser = positive_km)]
    pub radius_km: Vec<f64>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    #[command(flatten)]
    pub region: RegionArgs,
}

#[derive(Debug, Args)]
pub struct SurveyArgs {
    /// Precomputed `district,survey,ours` table.
    #[arg(long, conflicts_with_all = ["kilns", "districts", "survey"], required_unless_present = "kilns")]
    pub pairs: Option<PathBuf>,
    #[arg(long, requires_all = ["districts", "survey"])]
    pub kilns: Option<PathBuf>,
    /// District polygons.
    #[arg(long)]
    pub districts: Option<PathBuf>,
    #[arg(long, default_value = "name")]
    pub name_field: String,
    /// CSV `district,count`.
    #[arg(long)]
    pub survey: Option<PathBuf>,
    /// Write the per-district table here.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DateArgs {
    /// CSV `kiln_id,year,observation`.
    #[arg(long)]
    pub observations: PathBuf,
    #[arg(long)]
    pub start: i32,
    #[arg(long)]
    pub end: i32,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long)]
    pub out: PathBuf,
}

fn positive_km(s: &str) -> Result<f64, String> {
    parse_radii(s).map(|v| v[0])
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_regions(path: &Path, name_field: &str) -> Result<Vec<(String, Geometry)>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_regions(&bytes, name_field).with_context(|| format!("parsing {}", path.display()))
}

/// Loads kilns and, when a region layer is given, overwrites their states.
fn load_kilns_with_states(path: &Path, region: &RegionArgs) -> Result<Vec<KilnRecord>> {
    let mut records = inputs::load_kilns(path)?;
    if let Some(r) = &region.regions {
        let regions = load_regions(r, &region.name_field)?;
        let flagged = assign_states(&mut records, &regions);
        if !flagged.is_empty() {
            tracing::warn!(
                "{} kiln(s) outside every region or on a boundary: {}",
                flagged.len(),
                flagged.join(", ")
            );
        }
    }
    Ok(records)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::CropGrid(a) => crop_grid(a),
        Command::AnnotationGrid(a) => annotation_grid_cmd(a),
        Command::Merge(a) => merge(a),
        Command::Eval(a) => eval(a),
        Command::Audit(a) => audit(a),
        Command::Emissions(a) => emissions(a),
        Command::Exposure(a) => exposure(a),
        Command::SurveyCompare(a) => survey_compare(a),
        Command::DateKilns(a) => date_kilns(a),
        Command::Serve(a) => serve(a),
        Command::Demo(a) => {
            fixtures::write_demo_inputs(&a.out)?;
            eprintln!("wrote demo inputs to {}", a.out.display());
            Ok(())
        }
    }
}

#[derive(Debug, Deserialize)]
struct CropRow {
    crop_id: String,
    origin_x: f64,
    origin_y: f64,
    zoom: u8,
    size_px: u32,
}

/// Reprojects every crop's labels to Mercator and merges across crops.
fn records_from_labels(dir: &Path, crops: &Path, model_run: Option<String>) -> Result<Vec<KilnRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(crops)
        .with_context(|| format!("reading {}", crops.display()))?;
    let mut dets = Vec::new();
    for row in rdr.deserialize::<CropRow>() {
        let row = row.with_context(|| format!("parsing {}", crops.display()))?;
        let georef = CropGeoref::at_zoom(
            row.crop_id.clone(),
            MercatorPoint::new(row.origin_x, row.origin_y)?,
            row.zoom,
            row.size_px,
        )?;
        let file = dir.join(format!("{}.txt", row.crop_id));
        let text = match fs::read_to_string(&file) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
            Err(e) => return Err(e).with_context(|| format!("reading {}", file.display())),
        };
        for d in parse_quad_labels(&text, &georef).with_context(|| format!("parsing {}", file.display()))? {
            dets.push(KilnRecord::from_pixel_detection(&d, &georef, None)?.to_detection());
        }
    }
    let merged = merge_cross_tile(&dets, &NmsConfig::default())?;
    tracing::info!("{} detections, {} after merging", dets.len(), merged.len());
    merged
        .iter()
        .map(|d| Ok(KilnRecord::from_detection(d, model_run.clone())?))
        .collect()
}

fn ingest(a: IngestArgs) -> Result<()> {
    if a.workspace.join(kilnwatch_core::workflow::KILNS_FILE).exists() && !a.force {
        bail!("{} already holds a workspace; pass --force to replace it", a.workspace.display());
    }
    let mut records = match (&a.kilns, &a.labels, &a.crops) {
        (Some(k), _, _) => inputs::load_kilns(k)?,
        (None, Some(l), Some(c)) => records_from_labels(l, c, a.model_run.clone())?,
        _ => bail!("give --kilns or --labels with --crops"),
    };
    if let Some(r) = &a.region.regions {
        let flagged = assign_states(&mut records, &load_regions(r, &a.region.name_field)?);
        if !flagged.is_empty() {
            tracing::warn!("{} kiln(s) outside every region or on a boundary", flagged.len());
        }
    }
    let grid = match &a.grid_region {
        Some(p) => {
            let regions = load_regions(p, &a.region.name_field)?;
            let mut cells = Vec::new();
            for (_, g) in &regions {
                cells.extend(annotation_grid(g, a.cell_km)?);
            }
            cells
        }
        None => Vec::new(),
    };

    // reference data is validated before anything is written
    let layers = match &a.features {
        Some(d) => Some(inputs::load_features(d, a.osm_filter)?),
        None => None,
    };
    let rules = a.rules.as_deref().map(|p| inputs::load_rules(Some(p))).transpose()?;
    let population = a.population.as_deref().map(inputs::load_population).transpose()?;
    if let Some(p) = &a.production {
        inputs::load_production(p)?;
    }

    let n = records.len();
    let ws = Workspace::create(&a.workspace, records, grid)?;
    let dir = ws.dir();
    if let Some(layers) = layers {
        let fdir = dir.join(FEATURES_DIR);
        if fdir.exists() {
            fs::remove_dir_all(&fdir)?;
        }
        fs::create_dir_all(&fdir)?;
        for l in &layers {
            fs::write(fdir.join(format!("{}.geojson", l.category.as_str())), write_feature_geojson(l))?;
        }
    }
    if let Some(r) = rules {
        fs::write(dir.join(RULES_FILE), r.to_table_text())?;
    }
    if let Some(p) = population {
        fs::write(dir.join(POPULATION_FILE), write_population_grid(&p))?;
    }
    if let Some(p) = &a.production {
        fs::copy(p, dir.join(PRODUCTION_FILE))?;
    }
    eprintln!("workspace {} ready: {n} kilns, {} grid cells", dir.display(), ws.grid().len());
    Ok(())
}

fn crop_grid(a: CropGridArgs) -> Result<()> {
    let origins = crop_origins(&CropSpec {
        image_size: a.image_size,
        crop_size: a.crop_size,
        overlap: a.overlap,
    })?;
    if a.count {
        println!("{}", origins.len());
    } else {
        println!("x0,y0");
        for (x, y) in origins {
            println!("{x},{y}");
        }
    }
    Ok(())
}

fn annotation_grid_cmd(a: AnnotationGridArgs) -> Result<()> {
    let regions = load_regions(&a.region, &a.name_field)?;
    let selected: Vec<&Geometry> = regions
        .iter()
        .filter(|(n, _)| a.region_name.as_deref().is_none_or(|want| want == n))
        .map(|(_, g)| g)
        .collect();
    if selected.is_empty() {
        bail!("no region polygon selected");
    }
    let mut cells = Vec::new();
    for g in selected {
        cells.extend(annotation_grid(g, a.cell_km)?);
    }
    eprintln!("{} cells", cells.len());
    emit(a.out.as_deref(), &reports::pretty(&grid_to_geojson(&cells)))
}

fn merge(a: MergeArgs) -> Result<()> {
    let mut by_id: BTreeMap<String, KilnRecord> = BTreeMap::new();
    for p in &a.inputs {
        for r in inputs::load_kilns(p)? {
            if by_id.contains_key(&r.id) {
                bail!("kiln id {:?} appears in more than one input", r.id);
            }
            by_id.insert(r.id.clone(), r);
        }
    }
    let dets: Vec<Detection> = by_id.values().map(KilnRecord::to_detection).collect();
    let cfg = NmsConfig {
        iou_thresh: a.iou,
        conf_thresh: a.conf,
        class_agnostic: !a.per_class,
    };
    let kept = merge_cross_tile(&dets, &cfg)?;
    eprintln!("{} detections, {} kept", dets.len(), kept.len());
    let records: Vec<KilnRecord> = kept.iter().map(|d| by_id[&d.id].clone()).collect();
    emit(a.out.as_deref(), &write_kiln_dataset(&records, None))
}

fn load_eval_set(path: &Path, crop_size: u32) -> Result<Vec<Detection>> {
    if path.extension().is_some_and(|x| x == "geojson" || x == "json") {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let ds = read_kiln_dataset(&bytes).with_context(|| format!("parsing {}", path.display()))?;
        return Ok(ds.records.iter().map(KilnRecord::to_detection).collect());
    }
    let georef = CropGeoref::unreferenced("eval", crop_size);
    parse_quad_labels(&inputs::read_text(path)?, &georef).with_context(|| format!("parsing {}", path.display()))
}

fn eval(a: EvalArgs) -> Result<()> {
    let dets = load_eval_set(&a.dets, a.crop_size)?;
    let truth = load_eval_set(&a.truth, a.crop_size)?;
    let report = evaluate(&dets, &truth, a.iou)?;
    if a.json {
        print!("{}", reports::pretty(&report.to_json()));
    } else {
        print!("{}", report.to_text());
    }
    Ok(())
}

fn audit(a: AuditArgs) -> Result<()> {
    let records = load_kilns_with_states(&a.kilns, &a.region)?;
    let layers = inputs::load_features(&a.features, a.osm_filter)?;
    let rules = inputs::load_rules(a.rules.as_deref())?;
    let opts = AuditOptions { anchor: a.anchor.into() };
    let (audits, summary) = reports::audit(&records, &layers, &rules, &opts)?;
    if let Some(p) = &a.violations {
        fs::write(p, violations_csv(&audits)?).with_context(|| format!("writing {}", p.display()))?;
    }
    print!("{}", reports::compliance_json(&summary, a.state.as_deref())?);
    Ok(())
}

fn emissions(a: EmissionsArgs) -> Result<()> {
    let records = load_kilns_with_states(&a.kilns, &a.region)?;
    let prod = inputs::load_production(&a.production)?;
    let rows = reports::emissions(&records, &prod, a.state.as_deref())?;
    match a.format {
        Format::Json => print!("{}", reports::emissions_json(&rows)),
        Format::Csv => print!("{}", emissions_csv(&rows)?),
    }
    Ok(())
}

fn exposure(a: ExposureArgs) -> Result<()> {
    let records = load_kilns_with_states(&a.kilns, &a.region)?;
    let grid = inputs::load_population(&a.population)?;
    let radii = if a.radius_km.is_empty() {
        EXPOSURE_RADII_KM.to_vec()
    } else {
        a.radius_km
    };
    let rows = reports::exposure(&records, &grid, &radii)?;
    match a.format {
        Format::Json => print!("{}", reports::exposure_json(&rows)),
        Format::Csv => print!("{}", exposure_csv(&rows)?),
    }
    Ok(())
}

fn survey_compare(a: SurveyArgs) -> Result<()> {
    let counts = match (&a.pairs, &a.kilns, &a.districts, &a.survey) {
        (Some(p), ..) => fixtures::parse_district_pairs(&inputs::read_text(p)?).with_context(|| format!("parsing {}", p.display()))?,
        (None, Some(k), Some(d), Some(s)) => {
            let records = inputs::load_kilns(k)?;
            let districts = load_regions(d, &a.name_field)?;
            let survey = parse_survey_csv(&inputs::read_text(s)?).with_context(|| format!("parsing {}", s.display()))?;
            district_join(&records, &districts, &survey)
        }
        _ => bail!("give --pairs, or --kilns with --districts and --survey"),
    };
    if let Some(t) = &a.table {
        fs::write(t, district_csv(&counts)?).with_context(|| format!("writing {}", t.display()))?;
    }
    let cmp = compare(&counts)?;
    let out = json!({
        "comparison": cmp,
        "unassigned": counts.unassigned,
        "boundary": counts.boundary,
        "survey_only": counts.survey_only,
        "missing_survey": counts.missing_survey(),
    });
    print!("{}", reports::pretty(&out));
    Ok(())
}

fn date_kilns(a: DateArgs) -> Result<()> {
    if a.start > a.end {
        bail!("--start {} is after --end {}", a.start, a.end);
    }
    let range = YearRange {
        start: a.start,
        end: a.end,
    };
    let table =
        parse_observations_csv(&inputs::read_text(&a.observations)?).with_context(|| format!("parsing {}", a.observations.display()))?;
    for (id, oracle) in table {
        let res = date_kiln(oracle, range).with_context(|| format!("dating {id}"))?;
        println!("{}", json!({"kiln_id": id, "result": res}));
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let cfg = Config::load(a.config.as_deref())?;
    let ws = Workspace::open(&cfg.workspace).with_context(|| format!("opening workspace {}", cfg.workspace.display()))?;
    let reference = Reference::load(&cfg.workspace)?;
    let tiles = cfg
        .tiles
        .as_ref()
        .map(|t| TileProxy::new(t.upstream.clone(), cfg.tile_cache_dir().expect("tiles configured")));
    let state = AppState::new(ws, reference, AuditOptions { anchor: cfg.anchor }, cfg.snapshot_every, tiles);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(server::serve(state.clone(), cfg.listen))?;
    let mut ws = state.workspace.lock().unwrap_or_else(|e| e.into_inner());
    if ws.unsnapshotted() > 0 {
        ws.snapshot()?;
    }
    Ok(())
}
