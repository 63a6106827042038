//! Per-state siting-distance tables.
//!
//! Text format: comma separated, `#` comments. The first row names the
//! criteria (its first cell is ignored), every following row starts with a
//! state name, and cells hold meters or `-` for "no rule".

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::features::FeatureCategory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    InterKiln,
    Hospital,
    Habitation,
    NationalHighway,
    River,
    StateHighway,
    DistrictHighway,
    Railway,
    NatureReserve,
    Orchard,
    Wetland,
    School,
    Religious,
}

impl Criterion {
    /// Reporting order, most frequently violated first.
    pub const ALL: [Criterion; 13] = [
        Criterion::InterKiln,
        Criterion::Hospital,
        Criterion::Habitation,
        Criterion::NationalHighway,
        Criterion::River,
        Criterion::StateHighway,
        Criterion::DistrictHighway,
        Criterion::Railway,
        Criterion::NatureReserve,
        Criterion::Orchard,
        Criterion::Wetland,
        Criterion::School,
        Criterion::Religious,
    ];

    /// Feature layer the criterion is measured against.
    pub fn category(self) -> FeatureCategory {
        match self {
            Criterion::InterKiln => FeatureCategory::Kiln,
            Criterion::Hospital => FeatureCategory::Hospital,
            Criterion::Habitation => FeatureCategory::Habitation,
            Criterion::NationalHighway => FeatureCategory::NationalHighway,
            Criterion::River => FeatureCategory::River,
            Criterion::StateHighway => FeatureCategory::StateHighway,
            Criterion::DistrictHighway => FeatureCategory::DistrictHighway,
            Criterion::Railway => FeatureCategory::Railway,
            Criterion::NatureReserve => FeatureCategory::NatureReserve,
            Criterion::Orchard => FeatureCategory::Orchard,
            Criterion::Wetland => FeatureCategory::Wetland,
            Criterion::School => FeatureCategory::School,
            Criterion::Religious => FeatureCategory::Religious,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::InterKiln => "inter_kiln",
            other => other.category().as_str(),
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        let key = match key.as_str() {
            "religious_places" => "religious",
            "orchards" | "fruit_orchard" => "orchard",
            "hospitals" => "hospital",
            "schools" => "school",
            "rivers" => "river",
            "railways" | "railway_tracks" => "railway",
            "inter_kiln_distance" | "kiln" => "inter_kiln",
            k => k,
        };
        Criterion::ALL
            .into_iter()
            .find(|c| c.as_str() == key)
            .ok_or_else(|| Error::Config(format!("unknown criterion {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ComplianceRuleSet {
    /// States in table order.
    pub states: Vec<String>,
    thresholds: BTreeMap<String, BTreeMap<Criterion, f64>>,
}

impl ComplianceRuleSet {
    pub fn threshold(&self, state: &str, criterion: Criterion) -> Option<f64> {
        self.thresholds.get(state).and_then(|m| m.get(&criterion)).copied()
    }

    pub fn has_state(&self, state: &str) -> bool {
        self.thresholds.contains_key(state)
    }

    /// Defined `(criterion, meters)` pairs for a state, in reporting order.
    pub fn rules_for(&self, state: &str) -> Option<Vec<(Criterion, f64)>> {
        let m = self.thresholds.get(state)?;
        Some(Criterion::ALL.iter().filter_map(|c| m.get(c).map(|t| (*c, *t))).collect())
    }

    pub fn set(&mut self, state: &str, criterion: Criterion, meters: Option<f64>) -> Result<()> {
        if let Some(t) = meters {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::Config(format!(
                    "threshold for {state}/{criterion} must be positive, got {t}"
                )));
            }
        }
        if !self.thresholds.contains_key(state) {
            self.states.push(state.to_string());
        }
        let row = self.thresholds.entry(state.to_string()).or_default();
        match meters {
            Some(t) => row.insert(criterion, t),
            None => row.remove(&criterion),
        };
        Ok(())
    }

    /// The bundled per-state table for Uttar Pradesh, Bihar, West Bengal,
    /// Haryana and Punjab.
    pub fn reference() -> Self {
        parse_rule_table(REFERENCE_TABLE).expect("bundled rule table parses")
    }

    pub fn to_table_text(&self) -> String {
        let mut out = String::from("state");
        for c in Criterion::ALL {
            out.push(',');
            out.push_str(c.as_str());
        }
        out.push('\n');
        for s in &self.states {
            out.push_str(s);
            for c in Criterion::ALL {
                out.push(',');
                match self.threshold(s, c) {
                    Some(t) => out.push_str(&t.to_string()),
                    None => out.push('-'),
                }
            }
            out.push('\n');
        }
        out
    }
}

pub const REFERENCE_TABLE: &str = include_str!("../../fixtures/siting_rules.csv");

pub fn parse_rule_table(text: &str) -> Result<ComplianceRuleSet> {
    let mut rows = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hline, header) = rows.next().ok_or_else(|| Error::Config("rule table is empty".into()))?;
    let criteria: Vec<Criterion> = header
        .split(',')
        .skip(1)
        .map(|c| c.parse().map_err(|e: Error| Error::Config(format!("line {hline}: {e}"))))
        .collect::<Result<_>>()?;
    for (i, c) in criteria.iter().enumerate() {
        if criteria[..i].contains(c) {
            return Err(Error::Config(format!("line {hline}: duplicate criterion {c}")));
        }
    }

    let mut set = ComplianceRuleSet::default();
    for (line, row) in rows {
        let cells: Vec<&str> = row.split(',').map(str::trim).collect();
        if cells.len() != criteria.len() + 1 {
            return Err(Error::Config(format!(
                "line {line}: expected {} cells, found {}",
                criteria.len() + 1,
                cells.len()
            )));
        }
        let state = cells[0];
        if state.is_empty() {
            return Err(Error::Config(format!("line {line}: empty state name")));
        }
        if set.has_state(state) {
            return Err(Error::Config(format!("line {line}: duplicate state {state:?}")));
        }
        set.states.push(state.to_string());
        set.thresholds.insert(state.to_string(), BTreeMap::new());
        for (c, cell) in criteria.iter().zip(&cells[1..]) {
            let meters = match *cell {
                "-" | "" => None,
                v => Some(
                    v.parse::<f64>()
                        .map_err(|_| Error::Config(format!("line {line}: {v:?} is not a distance")))?,
                ),
            };
            if let Some(m) = meters {
                if !(m.is_finite() && m > 0.0) {
                    return Err(Error::Config(format!("line {line}: threshold {m} for {c} must be positive")));
                }
            }
            set.set(state, *c, meters)?;
        }
    }
    Ok(set)
}
