//! Emission estimates from the technology mix and population counts around
//! kilns.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{self, GeoPoint};
use crate::ingest::{KilnRecord, PopulationGrid};
use crate::obb::KilnClass;

/// Firing season length used to spread annual production.
pub const FIRING_DAYS: f64 = 180.0;

/// Radii reported by default, km.
pub const EXPOSURE_RADII_KM: [f64; 3] = [0.8, 2.0, 5.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pollutant {
    #[serde(rename = "PM2.5")]
    Pm25,
    #[serde(rename = "SO2")]
    So2,
    #[serde(rename = "CO")]
    Co,
    #[serde(rename = "CO2")]
    Co2,
}

impl Pollutant {
    pub const ALL: [Pollutant; 4] = [Pollutant::Pm25, Pollutant::So2, Pollutant::Co, Pollutant::Co2];

    pub fn as_str(self) -> &'static str {
        match self {
            Pollutant::Pm25 => "PM2.5",
            Pollutant::So2 => "SO2",
            Pollutant::Co => "CO",
            Pollutant::Co2 => "CO2",
        }
    }
}

impl fmt::Display for Pollutant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// g of pollutant per kg of fired brick, indexed by [`Pollutant::ALL`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionRates {
    /// CFCBK and FCBK share one rate.
    pub old: [f64; 4],
    pub zigzag: [f64; 4],
}

impl EmissionRates {
    pub fn new(old: [f64; 4], zigzag: [f64; 4]) -> Result<Self> {
        for (i, p) in Pollutant::ALL.iter().enumerate() {
            if !(old[i] > 0.0 && zigzag[i] > 0.0 && old[i].is_finite()) {
                return Err(Error::Invalid(format!("{p} rates must be positive")));
            }
            if zigzag[i] >= old[i] {
                return Err(Error::Invalid(format!("{p}: zigzag rate {} is not below {}", zigzag[i], old[i])));
            }
        }
        Ok(EmissionRates { old, zigzag })
    }

    /// Published field-measurement rates.
    pub fn reference() -> Self {
        EmissionRates {
            old: [0.18, 0.52, 3.63, 179.0],
            zigzag: [0.09, 0.15, 1.19, 107.5],
        }
    }

    pub fn rate(&self, class: KilnClass, p: Pollutant) -> f64 {
        let i = p as usize;
        match class {
            KilnClass::Cfcbk | KilnClass::Fcbk => self.old[i],
            KilnClass::Zigzag => self.zigzag[i],
        }
    }
}

pub fn daily_production(annual_tonnes: f64) -> Result<f64> {
    if !(annual_tonnes.is_finite() && annual_tonnes > 0.0) {
        return Err(Error::Invalid(format!("annual production must be positive, got {annual_tonnes}")));
    }
    Ok(annual_tonnes / FIRING_DAYS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub cfcbk: usize,
    pub fcbk: usize,
    pub zigzag: usize,
}

impl ClassCounts {
    pub fn new(cfcbk: usize, fcbk: usize, zigzag: usize) -> Self {
        ClassCounts { cfcbk, fcbk, zigzag }
    }

    pub fn total(&self) -> usize {
        self.cfcbk + self.fcbk + self.zigzag
    }

    pub fn add(&mut self, class: KilnClass) {
        match class {
            KilnClass::Cfcbk => self.cfcbk += 1,
            KilnClass::Fcbk => self.fcbk += 1,
            KilnClass::Zigzag => self.zigzag += 1,
        }
    }
}

/// Class counts of active records per state.
pub fn counts_by_state(records: &[KilnRecord]) -> BTreeMap<String, ClassCounts> {
    let mut out: BTreeMap<String, ClassCounts> = BTreeMap::new();
    for r in records.iter().filter(|r| r.is_active()) {
        out.entry(r.state.clone()).or_default().add(r.class);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateProduction {
    pub state: String,
    /// Tonnes of fired brick per day.
    pub daily_mass: f64,
}

impl StateProduction {
    pub fn new(state: impl Into<String>, daily_mass: f64) -> Result<Self> {
        if !(daily_mass.is_finite() && daily_mass > 0.0) {
            return Err(Error::Invalid(format!("daily mass must be positive, got {daily_mass}")));
        }
        Ok(StateProduction {
            state: state.into(),
            daily_mass,
        })
    }
}

/// Tonnes per day of each pollutant for one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionRow {
    pub state: String,
    pub mass: f64,
    pub tonnes: BTreeMap<Pollutant, f64>,
}

impl EmissionRow {
    pub fn get(&self, p: Pollutant) -> f64 {
        self.tonnes[&p]
    }
}

/// Count-weighted mean rate, g/kg.
pub fn effective_rate(counts: &ClassCounts, rates: &EmissionRates, p: Pollutant) -> Result<f64> {
    let n = counts.total();
    if n == 0 {
        return Err(Error::Invalid("no kilns to weight emission rates".into()));
    }
    let i = p as usize;
    Ok((rates.old[i] * (counts.cfcbk + counts.fcbk) as f64 + rates.zigzag[i] * counts.zigzag as f64) / n as f64)
}

pub fn state_emissions(counts: &ClassCounts, rates: &EmissionRates, prod: &StateProduction) -> Result<EmissionRow> {
    let mut tonnes = BTreeMap::new();
    for p in Pollutant::ALL {
        // g/kg * t/day * 1000 kg/t / 1e6 g/t = t/day
        let t = effective_rate(counts, rates, p)? * prod.daily_mass * 1000.0 / 1e6;
        tonnes.insert(p, t);
    }
    Ok(EmissionRow {
        state: prod.state.clone(),
        mass: prod.daily_mass,
        tonnes,
    })
}

/// One row per production entry, in input order, plus a "Total" row.
pub fn emissions_table(
    counts: &BTreeMap<String, ClassCounts>,
    rates: &EmissionRates,
    prods: &[StateProduction],
) -> Result<Vec<EmissionRow>> {
    let mut rows = Vec::with_capacity(prods.len() + 1);
    for prod in prods {
        let c = counts
            .get(&prod.state)
            .ok_or_else(|| Error::UnknownState(format!("no kiln counts for {}", prod.state)))?;
        rows.push(state_emissions(c, rates, prod)?);
    }
    let total = EmissionRow {
        state: "Total".into(),
        mass: rows.iter().map(|r| r.mass).sum(),
        tonnes: Pollutant::ALL.iter().map(|&p| (p, rows.iter().map(|r| r.get(p)).sum())).collect(),
    };
    rows.push(total);
    Ok(rows)
}

pub fn emissions_csv(rows: &[EmissionRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["state", "mass_t_per_day", "pm2_5", "so2", "co", "co2"])?;
    for r in rows {
        let mut rec = vec![r.state.clone(), format!("{:.2}", r.mass)];
        rec.extend(Pollutant::ALL.iter().map(|&p| format!("{:.2}", r.get(p))));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Reads `state,daily_t` or `state,annual_t` production tables.
pub fn parse_production_csv(text: &str) -> Result<Vec<StateProduction>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let annual = match headers.get(1) {
        Some("daily_t") => false,
        Some("annual_t") => true,
        other => return Err(Error::Config(format!("expected a daily_t or annual_t column, found {other:?}"))),
    };
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let err = |m: String| Error::Line { line, message: m };
        let state = rec.get(0).unwrap_or("").to_string();
        let v: f64 = rec
            .get(1)
            .unwrap_or("")
            .parse()
            .map_err(|_| err(format!("{:?} is not a number", rec.get(1))))?;
        let daily = if annual {
            daily_production(v).map_err(|e| err(e.to_string()))?
        } else {
            v
        };
        out.push(StateProduction::new(state, daily).map_err(|e| err(e.to_string()))?);
    }
    Ok(out)
}

/// Indices (row-major) of grid cells whose centers lie within `radius_m`
/// of `p`.
fn cells_near(p: GeoPoint, grid: &PopulationGrid, radius_m: f64) -> Vec<usize> {
    let Some((r0, r1, c0, c1)) = grid.window(geo::search_bounds(p, radius_m)) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for r in r0..=r1 {
        for c in c0..=c1 {
            if geo::haversine_distance(p, grid.cell_center(r, c)) <= radius_m {
                out.push(r * grid.ncols + c);
            }
        }
    }
    out
}

/// Persons in cells whose center is within `radius_km` of at least one
/// point; each cell counts once.
pub fn population_within(points: &[GeoPoint], grid: &PopulationGrid, radius_km: f64) -> Result<f64> {
    if !(radius_km.is_finite() && radius_km > 0.0) {
        return Err(Error::Invalid(format!("radius must be positive, got {radius_km}")));
    }
    let radius_m = radius_km * 1000.0;
    let hits: Vec<Vec<usize>> = points.par_iter().map(|&p| cells_near(p, grid, radius_m)).collect();
    let mut seen = vec![false; grid.values.len()];
    for i in hits.into_iter().flatten() {
        seen[i] = true;
    }
    // summed in cell order so the result does not depend on kiln order
    Ok(seen
        .iter()
        .zip(&grid.values)
        .filter(|&(&s, &v)| s && v != grid.nodata)
        .map(|(_, v)| v)
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureRow {
    pub state: String,
    pub radius_km: Vec<f64>,
    pub population: Vec<f64>,
}

/// Exposure per state and overall. The "Total" row is the union over all
/// kilns, so it can be below the sum of state rows near borders.
pub fn exposure_table(records: &[KilnRecord], grid: &PopulationGrid, radii_km: &[f64]) -> Result<Vec<ExposureRow>> {
    let mut by_state: BTreeMap<&str, Vec<GeoPoint>> = BTreeMap::new();
    let mut all = Vec::new();
    for r in records.iter().filter(|r| r.is_active()) {
        let c = r.centroid();
        by_state.entry(r.state.as_str()).or_default().push(c);
        all.push(c);
    }
    let row = |state: &str, pts: &[GeoPoint]| -> Result<ExposureRow> {
        Ok(ExposureRow {
            state: state.to_string(),
            radius_km: radii_km.to_vec(),
            population: radii_km.iter().map(|&r| population_within(pts, grid, r)).collect::<Result<_>>()?,
        })
    };
    let mut out = by_state.iter().map(|(s, pts)| row(s, pts)).collect::<Result<Vec<_>>>()?;
    out.push(row("Total", &all)?);
    Ok(out)
}

pub fn exposure_csv(rows: &[ExposureRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["state".to_string()];
    if let Some(r) = rows.first() {
        header.extend(r.radius_km.iter().map(|k| format!("within_{k}_km")));
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.state.clone()];
        rec.extend(r.population.iter().map(|p| format!("{p:.0}")));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b
    }

    #[test]
    fn production_per_day() {
        assert_eq!(daily_production(180.0).unwrap(), 1.0);
        assert!((daily_production(143_067_000.0).unwrap() - 794_816.67).abs() < 0.01);
        assert!(daily_production(0.0).is_err());
    }

    #[test]
    fn uttar_pradesh_pm25() {
        let prod = StateProduction::new("Uttar Pradesh", 794_816.67).unwrap();
        let row = state_emissions(&ClassCounts::new(1450, 9933, 5952), &EmissionRates::reference(), &prod).unwrap();
        assert!(rel(row.get(Pollutant::Pm25), 118.51) < 0.01, "{}", row.get(Pollutant::Pm25));
    }

    #[test]
    fn all_zigzag_uses_zigzag_rate() {
        let rates = EmissionRates::reference();
        let prod = StateProduction::new("x", 2000.0).unwrap();
        let row = state_emissions(&ClassCounts::new(0, 0, 17), &rates, &prod).unwrap();
        for p in Pollutant::ALL {
            assert_eq!(row.get(p), rates.zigzag[p as usize] * 2.0);
        }
        assert!(state_emissions(&ClassCounts::default(), &rates, &prod).is_err());
    }

    #[test]
    fn rate_invariants_checked() {
        assert!(EmissionRates::new([1.0; 4], [2.0; 4]).is_err());
        assert!(EmissionRates::new([1.0; 4], [0.0; 4]).is_err());
        let r = EmissionRates::reference();
        assert_eq!(EmissionRates::new(r.old, r.zigzag).unwrap(), r);
    }

    #[test]
    fn production_csv_forms() {
        let d = parse_production_csv("state,daily_t\nBihar,401661.11\n").unwrap();
        assert_eq!(d[0].daily_mass, 401661.11);
        let a = parse_production_csv("# comment\nstate,annual_t\nBihar,180\n").unwrap();
        assert_eq!(a[0].daily_mass, 1.0);
        assert!(matches!(
            parse_production_csv("state,daily_t\nBihar,x\n"),
            Err(Error::Line { line: 2, .. })
        ));
    }

    fn grid(n: usize) -> PopulationGrid {
        PopulationGrid::new(n, n, 80.0, 26.0, 0.01, -9999.0, (0..n * n).map(|i| (i % 7) as f64).collect()).unwrap()
    }

    #[test]
    fn exposure_basics() {
        let g = grid(20);
        assert_eq!(population_within(&[], &g, 2.0).unwrap(), 0.0);
        let c = g.cell_center(4, 5);
        let v = g.value(4, 5).unwrap();
        assert!(population_within(&[c], &g, 0.1).unwrap() >= v);
        let twice = population_within(&[c, c], &g, 3.0).unwrap();
        assert_eq!(twice, population_within(&[c], &g, 3.0).unwrap());
        assert!(population_within(&[c], &g, 0.0).is_err());
    }
}
