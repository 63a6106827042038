//! Comparisons with district field surveys, and dating kilns by binary
//! search over yearly imagery.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::compliance::locate_region;
use crate::error::{Error, Result};
use crate::geo::Geometry;
use crate::ingest::KilnRecord;
use crate::obb::KilnClass;

/// Product-moment correlation. `Ok(None)` when either side has zero
/// variance.
pub fn pearson_r(xs: &[f64], ys: &[f64]) -> Result<Option<f64>> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Invalid(format!(
            "pearson_r needs two equal series of length >= 2, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub median: f64,
    /// Population standard deviation.
    pub std: f64,
}

/// Statistics of `|x - y|` per district.
pub fn error_stats(xs: &[f64], ys: &[f64]) -> Result<ErrorStats> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(Error::Invalid(format!(
            "error_stats needs two equal non-empty series, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let mut errs: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| (x - y).abs()).collect();
    errs.sort_by(|a, b| a.total_cmp(b));
    let n = errs.len();
    let mean = errs.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        errs[n / 2]
    } else {
        (errs[n / 2 - 1] + errs[n / 2]) / 2.0
    };
    let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n as f64;
    Ok(ErrorStats {
        mean,
        median,
        std: var.sqrt(),
    })
}

/// Lowercase ASCII alphanumerics only, so "Gautam Buddha-Nagar" and
/// "gautambuddhanagar" join.
pub fn normalize_district(name: &str) -> String {
    name.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistrictRow {
    pub district: String,
    /// `None` when the survey has no entry for the district.
    pub survey: Option<f64>,
    pub ours: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DistrictCounts {
    pub rows: Vec<DistrictRow>,
    /// Kilns outside every district polygon.
    pub unassigned: Vec<String>,
    /// Kilns on a shared boundary, assigned to the first district by name.
    pub boundary: Vec<String>,
    /// Survey districts with no polygon.
    pub survey_only: Vec<String>,
}

impl DistrictCounts {
    /// `(survey, ours)` for districts present in both sources.
    pub fn paired(&self) -> (Vec<f64>, Vec<f64>) {
        self.rows.iter().filter_map(|r| r.survey.map(|s| (s, r.ours as f64))).unzip()
    }

    pub fn missing_survey(&self) -> Vec<&str> {
        self.rows
            .iter()
            .filter(|r| r.survey.is_none())
            .map(|r| r.district.as_str())
            .collect()
    }

    pub fn from_pairs(pairs: &[(&str, f64, usize)]) -> Self {
        DistrictCounts {
            rows: pairs
                .iter()
                .map(|&(d, s, o)| DistrictRow {
                    district: d.to_string(),
                    survey: Some(s),
                    ours: o,
                })
                .collect(),
            ..Default::default()
        }
    }
}

/// Counts active kilns per district polygon by centroid and joins them to
/// survey counts by normalized name.
pub fn district_join(records: &[KilnRecord], districts: &[(String, Geometry)], survey: &BTreeMap<String, f64>) -> DistrictCounts {
    let mut ours: BTreeMap<&str, usize> = districts.iter().map(|(n, _)| (n.as_str(), 0)).collect();
    let mut out = DistrictCounts::default();
    for r in records.iter().filter(|r| r.is_active()) {
        let hit = locate_region(r.centroid(), districts);
        match hit.region {
            Some(d) => {
                if hit.ambiguous {
                    out.boundary.push(r.id.clone());
                }
                *ours.get_mut(d.as_str()).unwrap() += 1;
            }
            None => out.unassigned.push(r.id.clone()),
        }
    }
    let by_norm: BTreeMap<String, (&String, f64)> = survey.iter().map(|(k, v)| (normalize_district(k), (k, *v))).collect();
    let mut used = std::collections::BTreeSet::new();
    for (name, _) in districts {
        let key = normalize_district(name);
        let s = by_norm.get(&key).map(|(_, v)| *v);
        if s.is_some() {
            used.insert(key);
        }
        out.rows.push(DistrictRow {
            district: name.clone(),
            survey: s,
            ours: ours[name.as_str()],
        });
    }
    out.survey_only = by_norm
        .iter()
        .filter(|(k, _)| !used.contains(*k))
        .map(|(_, (name, _))| (*name).clone())
        .collect();
    out
}

/// Reads `district,count` rows.
pub fn parse_survey_csv(text: &str) -> Result<BTreeMap<String, f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let (Some(name), Some(count)) = (rec.get(0), rec.get(1)) else {
            return Err(Error::Line {
                line,
                message: "expected district,count".into(),
            });
        };
        let v: f64 = count.parse().map_err(|_| Error::Line {
            line,
            message: format!("count {count:?} is not a number"),
        })?;
        if v < 0.0 {
            return Err(Error::Line {
                line,
                message: format!("negative count {v}"),
            });
        }
        if out.insert(name.to_string(), v).is_some() {
            return Err(Error::Line {
                line,
                message: format!("duplicate district {name:?}"),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyComparison {
    pub districts: usize,
    pub survey_total: f64,
    pub our_total: f64,
    pub r: Option<f64>,
    pub errors: ErrorStats,
}

pub fn compare(counts: &DistrictCounts) -> Result<SurveyComparison> {
    let (s, o) = counts.paired();
    Ok(SurveyComparison {
        districts: s.len(),
        survey_total: s.iter().sum(),
        our_total: o.iter().sum(),
        r: if s.len() >= 2 { pearson_r(&s, &o)? } else { None },
        errors: error_stats(&s, &o)?,
    })
}

pub fn district_csv(counts: &DistrictCounts) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["district", "survey", "ours"])?;
    for r in &counts.rows {
        let s = r.survey.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([r.district.as_str(), &s, &r.ours.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

// ---- dating ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Presence {
    Absent,
    Present(KilnClass),
}

impl fmt::Display for Presence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Presence::Absent => f.write_str("absent"),
            Presence::Present(c) => write!(f, "{c}"),
        }
    }
}

/// Answers "what was at this site in `year`", typically by a person
/// looking at that year's imagery.
pub trait PresenceOracle {
    fn query(&mut self, year: i32) -> Result<Presence>;
}

impl<F: FnMut(i32) -> Result<Presence>> PresenceOracle for F {
    fn query(&mut self, year: i32) -> Result<Presence> {
        self(year)
    }
}

/// Records every answer and rejects histories where a kiln disappears.
pub struct CountingOracle<O> {
    inner: O,
    answers: BTreeMap<i32, Presence>,
    queries: usize,
}

impl<O: PresenceOracle> CountingOracle<O> {
    pub fn new(inner: O) -> Self {
        CountingOracle {
            inner,
            answers: BTreeMap::new(),
            queries: 0,
        }
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    pub fn answers(&self) -> &BTreeMap<i32, Presence> {
        &self.answers
    }

    /// Cached answers are not re-asked.
    pub fn ask(&mut self, year: i32) -> Result<Presence> {
        if let Some(p) = self.answers.get(&year) {
            return Ok(*p);
        }
        let p = self.inner.query(year)?;
        self.queries += 1;
        let bad = match p {
            Presence::Absent => self.answers.range(..year).find(|(_, a)| **a != Presence::Absent),
            Presence::Present(_) => self.answers.range(year + 1..).find(|(_, a)| **a == Presence::Absent),
        };
        if let Some((y, a)) = bad {
            return Err(Error::InconsistentOracle(format!("{p} in {year} but {a} in {y}")));
        }
        self.answers.insert(year, p);
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearRange {
    pub start: i32,
    pub end: i32,
}

impl Default for YearRange {
    fn default() -> Self {
        YearRange { start: 2010, end: 2022 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "year")]
pub enum Establishment {
    /// Already present in the first year of the range.
    BeforeRange,
    Year(i32),
    AbsentThroughout,
}

impl Establishment {
    pub fn first_present(self, range: YearRange) -> Option<i32> {
        match self {
            Establishment::BeforeRange => Some(range.start),
            Establishment::Year(y) => Some(y),
            Establishment::AbsentThroughout => None,
        }
    }
}

/// Lower-bound search for the first year the kiln is present. `end + 1`
/// stands for "never", so the first query is the midpoint of the range.
pub fn establishment_year<O: PresenceOracle>(oracle: &mut CountingOracle<O>, range: YearRange) -> Result<Establishment> {
    if range.end < range.start {
        return Err(Error::Invalid(format!("empty year range {}..={}", range.start, range.end)));
    }
    let (mut lo, mut hi) = (range.start, range.end + 1);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        match oracle.ask(mid)? {
            Presence::Present(_) => hi = mid,
            Presence::Absent => lo = mid + 1,
        }
    }
    Ok(if lo > range.end {
        Establishment::AbsentThroughout
    } else if lo == range.start {
        Establishment::BeforeRange
    } else {
        Establishment::Year(lo)
    })
}

fn class_at<O: PresenceOracle>(oracle: &mut CountingOracle<O>, year: i32) -> Result<KilnClass> {
    match oracle.ask(year)? {
        Presence::Present(c) => Ok(c),
        Presence::Absent => Err(Error::InconsistentOracle(format!("kiln absent in {year} after it was established"))),
    }
}

/// First year in `[from, range.end]` whose class equals the class in
/// `range.end`; `None` when the class never changed.
pub fn conversion_year<O: PresenceOracle>(oracle: &mut CountingOracle<O>, from: i32, range: YearRange) -> Result<Option<i32>> {
    let last = class_at(oracle, range.end)?;
    let (mut lo, mut hi) = (from, range.end);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if class_at(oracle, mid)? == last {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok((lo > from || class_at(oracle, from)? != last).then_some(lo))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatingResult {
    pub establishment: Establishment,
    pub conversion: Option<i32>,
    pub initial_class: Option<KilnClass>,
    pub final_class: Option<KilnClass>,
    pub establishment_queries: usize,
    pub conversion_queries: usize,
    /// Every answer seen, by year.
    pub timeline: Vec<(i32, Presence)>,
}

pub fn date_kiln<O: PresenceOracle>(oracle: O, range: YearRange) -> Result<DatingResult> {
    let mut o = CountingOracle::new(oracle);
    let establishment = establishment_year(&mut o, range)?;
    let establishment_queries = o.queries();
    let (mut conversion, mut initial_class, mut final_class) = (None, None, None);
    if let Some(first) = establishment.first_present(range) {
        conversion = conversion_year(&mut o, first, range)?;
        initial_class = Some(class_at(&mut o, first)?);
        final_class = Some(class_at(&mut o, range.end)?);
    }
    Ok(DatingResult {
        establishment,
        conversion,
        initial_class,
        final_class,
        establishment_queries,
        conversion_queries: o.queries() - establishment_queries,
        timeline: o.answers().iter().map(|(y, p)| (*y, *p)).collect(),
    })
}

/// Oracle backed by a table of yearly observations. Asking for a year the
/// table lacks is an error.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TableOracle {
    pub years: BTreeMap<i32, Presence>,
}

impl PresenceOracle for TableOracle {
    fn query(&mut self, year: i32) -> Result<Presence> {
        self.years
            .get(&year)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("no observation for {year}")))
    }
}

/// Reads `kiln_id,year,observation` rows, where an observation is a class
/// name or `absent`.
pub fn parse_observations_csv(text: &str) -> Result<BTreeMap<String, TableOracle>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out: BTreeMap<String, TableOracle> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let err = |m: String| Error::Line { line, message: m };
        if rec.len() != 3 {
            return Err(err(format!("expected 3 fields, found {}", rec.len())));
        }
        let year: i32 = rec[1].parse().map_err(|_| err(format!("year {:?} is not an integer", &rec[1])))?;
        let p = match &rec[2] {
            "absent" | "-" => Presence::Absent,
            c => Presence::Present(c.parse().map_err(|e: Error| err(e.to_string()))?),
        };
        out.entry(rec[0].to_string()).or_default().years.insert(year, p);
    }
    Ok(out)
}
