//! Loading pipeline inputs from disk.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kilnwatch_core::impact::{parse_production_csv, StateProduction};
use kilnwatch_core::ingest::{parse_feature_geojson, parse_population_grid, parse_rule_table, read_kiln_dataset, FeatureFilter};
use kilnwatch_core::{ComplianceRuleSet, FeatureCategory, FeatureLayer, KilnRecord, PopulationGrid};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn load_kilns(path: &Path) -> Result<Vec<KilnRecord>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(read_kiln_dataset(&bytes)
        .with_context(|| format!("parsing {}", path.display()))?
        .records)
}

/// `None` reads the bundled reference table.
pub fn load_rules(path: Option<&Path>) -> Result<ComplianceRuleSet> {
    match path {
        Some(p) => parse_rule_table(&read_text(p)?).with_context(|| format!("parsing {}", p.display())),
        None => Ok(ComplianceRuleSet::reference()),
    }
}

pub fn load_population(path: &Path) -> Result<PopulationGrid> {
    parse_population_grid(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

pub fn load_production(path: &Path) -> Result<Vec<StateProduction>> {
    parse_production_csv(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

/// Feature files in `dir`, one per category, named `<category>.geojson`
/// (e.g. `school.geojson`). With `osm_filter` the per-category attribute
/// filters for OSM exports are applied; otherwise every feature is kept.
pub fn load_features(dir: &Path, osm_filter: bool) -> Result<Vec<FeatureLayer>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "geojson" || x == "json"))
        .collect();
    files.sort();
    let mut layers = Vec::new();
    for f in files {
        let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let category: FeatureCategory = match stem.parse() {
            Ok(c) => c,
            Err(_) => bail!("{}: file name does not name a feature category", f.display()),
        };
        if category == FeatureCategory::Kiln {
            bail!(
                "{}: kiln spacing is measured against the kiln inventory, not a feature file",
                f.display()
            );
        }
        let filter = if osm_filter {
            FeatureFilter::for_category(category)
        } else {
            FeatureFilter::Any
        };
        let bytes = fs::read(&f).with_context(|| format!("reading {}", f.display()))?;
        let parsed = parse_feature_geojson(&bytes, category, &filter).with_context(|| format!("parsing {}", f.display()))?;
        for issue in &parsed.issues {
            tracing::warn!(file = %f.display(), "skipped feature: {issue}");
        }
        layers.push(parsed.layer);
    }
    Ok(layers)
}

pub const FEATURES_DIR: &str = "features";
pub const RULES_FILE: &str = "rules.csv";
pub const POPULATION_FILE: &str = "population.asc";
pub const PRODUCTION_FILE: &str = "production.csv";

/// Read-only reference data stored next to a validation workspace.
#[derive(Debug, Clone)]
pub struct Reference {
    pub layers: Vec<FeatureLayer>,
    pub rules: ComplianceRuleSet,
    pub population: Option<PopulationGrid>,
    pub production: Option<Vec<StateProduction>>,
}

impl Reference {
    pub fn load(workspace: &Path) -> Result<Self> {
        let features = workspace.join(FEATURES_DIR);
        let rules = workspace.join(RULES_FILE);
        let population = workspace.join(POPULATION_FILE);
        let production = workspace.join(PRODUCTION_FILE);
        Ok(Reference {
            layers: if features.is_dir() {
                load_features(&features, false)?
            } else {
                Vec::new()
            },
            rules: load_rules(rules.exists().then_some(rules.as_path()))?,
            population: population.exists().then(|| load_population(&population)).transpose()?,
            production: production.exists().then(|| load_production(&production)).transpose()?,
        })
    }
}
