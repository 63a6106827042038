//! Report rendering shared by the batch commands and the HTTP API, so both
//! produce identical bytes for the same inputs.

use kilnwatch_core::compliance::{aggregate, run_audit, AuditOptions, ComplianceSummary, KilnAudit};
use kilnwatch_core::impact::{
    counts_by_state, emissions_table, exposure_table, EmissionRates, EmissionRow, ExposureRow, Pollutant, StateProduction,
};
use kilnwatch_core::{ComplianceRuleSet, Error, FeatureLayer, KilnRecord, PopulationGrid, Result};
use serde_json::{json, Map, Value};

pub fn audit(
    records: &[KilnRecord],
    layers: &[FeatureLayer],
    rules: &ComplianceRuleSet,
    opts: &AuditOptions,
) -> Result<(Vec<KilnAudit>, ComplianceSummary)> {
    let audits = run_audit(records, layers, rules, opts)?;
    let summary = aggregate(&audits, rules);
    Ok((audits, summary))
}

/// State-by-criterion violation matrix as pretty JSON. With `state` the
/// matrix is cut down to that column.
pub fn compliance_json(summary: &ComplianceSummary, state: Option<&str>) -> Result<String> {
    match state {
        None => Ok(summary.to_json_string()),
        Some(s) => summary
            .for_state(s)
            .map(|sub| sub.to_json_string())
            .ok_or_else(|| Error::UnknownState(s.to_string())),
    }
}

/// Emission rows for the production entries whose state has active kilns.
pub fn emissions(records: &[KilnRecord], production: &[StateProduction], state: Option<&str>) -> Result<Vec<EmissionRow>> {
    let counts = counts_by_state(records);
    let prods: Vec<StateProduction> = production
        .iter()
        .filter(|p| counts.contains_key(&p.state))
        .filter(|p| state.is_none_or(|s| s == p.state))
        .cloned()
        .collect();
    if let Some(s) = state {
        if prods.is_empty() {
            return Err(Error::UnknownState(s.to_string()));
        }
    }
    emissions_table(&counts, &EmissionRates::reference(), &prods)
}

pub fn emissions_json(rows: &[EmissionRow]) -> String {
    let rows: Vec<Value> = rows
        .iter()
        .map(|r| {
            let mut m = Map::new();
            m.insert("state".into(), json!(r.state));
            m.insert("mass_t_per_day".into(), json!(r.mass));
            for p in Pollutant::ALL {
                m.insert(p.as_str().into(), json!(r.get(p)));
            }
            Value::Object(m)
        })
        .collect();
    pretty(&json!({ "unit": "t/day", "rows": rows }))
}

pub fn exposure(records: &[KilnRecord], grid: &PopulationGrid, radii_km: &[f64]) -> Result<Vec<ExposureRow>> {
    exposure_table(records, grid, radii_km)
}

pub fn exposure_json(rows: &[ExposureRow]) -> String {
    let rows: Vec<Value> = rows
        .iter()
        .map(|r| json!({"state": r.state, "radius_km": r.radius_km, "population": r.population}))
        .collect();
    pretty(&json!({ "rows": rows }))
}

pub fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}
