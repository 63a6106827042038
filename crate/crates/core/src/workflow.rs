//! Hand validation of detections with durable, replayable persistence.
//!
//! A workspace directory holds `kilns.geojson` and `grid.geojson`
//! snapshots plus an append-only `actions.jsonl` log. Every mutation is
//! appended and fsynced before memory changes. Snapshots carry the `log_seq`
//! they include, and opening a workspace replays the rest of the log. A torn
//! final line (a crash mid-append) is dropped.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::ingest::{read_kiln_dataset, write_kiln_dataset, KilnRecord, ValidationState};
use crate::obb::{Frame, KilnClass, OrientedBox};
use crate::tiling::{grid_from_geojson, grid_to_geojson, CellStatus, GridCell};

pub const KILNS_FILE: &str = "kilns.geojson";
pub const GRID_FILE: &str = "grid.geojson";
pub const LOG_FILE: &str = "actions.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ActionKind {
    Accept,
    Adjust {
        #[serde(rename = "box")]
        bbox: OrientedBox,
    },
    Reclassify {
        class: KilnClass,
    },
    Discard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationAction {
    /// Client-chosen key that makes retries idempotent.
    pub action_id: String,
    #[serde(default)]
    pub kiln_id: String,
    #[serde(flatten)]
    pub kind: ActionKind,
    #[serde(default)]
    pub actor: String,
    /// RFC 3339.
    #[serde(default)]
    pub timestamp: String,
}

impl ValidationAction {
    pub fn new(action_id: impl Into<String>, kiln_id: impl Into<String>, kind: ActionKind, actor: impl Into<String>) -> Self {
        ValidationAction {
            action_id: action_id.into(),
            kiln_id: kiln_id.into(),
            kind,
            actor: actor.into(),
            timestamp: now(),
        }
    }

    fn same_request(&self, other: &ValidationAction) -> bool {
        self.kiln_id == other.kiln_id && self.kind == other.kind
    }
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn check_timestamp(ts: &str) -> Result<()> {
    chrono::DateTime::parse_from_rfc3339(ts)
        .map(|_| ())
        .map_err(|e| Error::Invalid(format!("timestamp {ts:?} is not RFC 3339: {e}")))
}

/// The record after `action`, or why the action is refused. Pure.
pub fn transition(rec: &KilnRecord, action: &ValidationAction) -> Result<KilnRecord> {
    if rec.validation_state == ValidationState::Discarded {
        return Err(Error::Discarded(rec.id.clone()));
    }
    check_timestamp(&action.timestamp)?;
    let mut next = rec.clone();
    match &action.kind {
        ActionKind::Accept => next.validation_state = ValidationState::Accepted,
        ActionKind::Adjust { bbox } => {
            if bbox.frame != Frame::Mercator {
                return Err(Error::FrameMismatch("adjusted boxes must be in the Mercator frame".into()));
            }
            let b = OrientedBox::new(bbox.cx, bbox.cy, bbox.w, bbox.h, bbox.theta, Frame::Mercator)?;
            for (x, y) in b.corners() {
                crate::geo::MercatorPoint::new(x, y)?;
            }
            next.bbox = b;
            next.validation_state = ValidationState::Adjusted;
        }
        ActionKind::Reclassify { class } => {
            next.class = *class;
            next.validation_state = ValidationState::Reclassified;
        }
        ActionKind::Discard => next.validation_state = ValidationState::Discarded,
    }
    next.provenance.updated_at = Some(action.timestamp.clone());
    Ok(next)
}

/// Applies `action` to the matching record in place; nothing changes on
/// error.
pub fn apply_validation(records: &mut [KilnRecord], action: &ValidationAction) -> Result<KilnRecord> {
    let rec = records
        .iter_mut()
        .find(|r| r.id == action.kiln_id)
        .ok_or_else(|| Error::UnknownKiln(action.kiln_id.clone()))?;
    let next = transition(rec, action)?;
    *rec = next.clone();
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellChange {
    pub action_id: String,
    pub row: u32,
    pub col: u32,
    pub status: CellStatus,
    /// New assignee; `None` leaves the assignment alone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignee: Option<String>,
    #[serde(default)]
    pub actor: String,
    #[serde(default)]
    pub timestamp: String,
}

impl CellChange {
    fn same_request(&self, other: &CellChange) -> bool {
        (self.row, self.col, self.status, &self.assignee) == (other.row, other.col, other.status, &other.assignee)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum LogEntry {
    Validation {
        seq: u64,
        action: ValidationAction,
        result: KilnRecord,
    },
    Cell {
        seq: u64,
        change: CellChange,
    },
}

impl LogEntry {
    pub fn seq(&self) -> u64 {
        match self {
            LogEntry::Validation { seq, .. } | LogEntry::Cell { seq, .. } => *seq,
        }
    }
}

/// Parsed log plus the byte length of its intact prefix.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LogContents {
    pub entries: Vec<LogEntry>,
    pub valid_len: u64,
    /// Bytes after the last newline were discarded.
    pub torn: bool,
}

pub fn parse_log(bytes: &[u8]) -> Result<LogContents> {
    let valid_len = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let mut entries: Vec<LogEntry> = Vec::new();
    for (i, line) in bytes[..valid_len].split(|&b| b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let e: LogEntry = serde_json::from_slice(line).map_err(|e| Error::Line {
            line: i + 1,
            message: format!("corrupt action log entry: {e}"),
        })?;
        let expected = entries.last().map_or(1, |p| p.seq() + 1);
        if e.seq() != expected {
            return Err(Error::Line {
                line: i + 1,
                message: format!("log sequence {} where {expected} was expected", e.seq()),
            });
        }
        entries.push(e);
    }
    Ok(LogContents {
        entries,
        valid_len: valid_len as u64,
        torn: valid_len < bytes.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub pending: usize,
    pub accepted: usize,
    pub adjusted: usize,
    pub reclassified: usize,
    pub discarded: usize,
    pub cells_done: usize,
    pub cells_total: usize,
}

pub fn progress(records: &[KilnRecord], grid: &[GridCell]) -> Progress {
    let mut p = Progress {
        total: records.len(),
        cells_total: grid.len(),
        cells_done: grid.iter().filter(|c| c.status == CellStatus::Done).count(),
        ..Default::default()
    };
    for r in records {
        match r.validation_state {
            ValidationState::Pending => p.pending += 1,
            ValidationState::Accepted => p.accepted += 1,
            ValidationState::Adjusted => p.adjusted += 1,
            ValidationState::Reclassified => p.reclassified += 1,
            ValidationState::Discarded => p.discarded += 1,
        }
    }
    p
}

/// Result of a mutation; `duplicate` marks a replayed retry.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome<T> {
    pub value: T,
    pub seq: u64,
    pub duplicate: bool,
}

/// Crash simulation hooks for tests. Each fires once.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailPoint {
    /// Entry is durable, memory is not updated, caller sees an error.
    AfterLogAppend,
    /// Only part of the entry reaches the file.
    TornAppend,
    /// Snapshot temp file written, never renamed.
    BeforeSnapshotRename,
}

#[allow(clippy::large_enum_variant)]
enum Applied {
    Validation(ValidationAction, KilnRecord, u64),
    Cell(CellChange, u64),
}

/// Single-writer handle on a workspace directory.
pub struct Workspace {
    dir: PathBuf,
    records: Vec<KilnRecord>,
    by_id: HashMap<String, usize>,
    grid: Vec<GridCell>,
    by_cell: HashMap<(u32, u32), usize>,
    seq: u64,
    snapshot_seq: u64,
    applied: HashMap<String, Applied>,
    log: File,
    fail: Option<FailPoint>,
}

fn injected() -> Error {
    Error::Io(std::io::Error::other("injected failure"))
}

fn write_atomic(path: &Path, bytes: &[u8], fail: &mut Option<FailPoint>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    if *fail == Some(FailPoint::BeforeSnapshotRename) {
        *fail = None;
        return Err(injected());
    }
    fs::rename(&tmp, path)?;
    if let Some(parent) = path.parent() {
        // directory fsync is best effort; not every platform allows it
        if let Ok(d) = File::open(parent) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

fn grid_text(grid: &[GridCell], seq: u64) -> String {
    let mut v = grid_to_geojson(grid);
    v["log_seq"] = Value::from(seq);
    let mut s = v.to_string();
    s.push('\n');
    s
}

fn index_of<K: std::hash::Hash + Eq, T>(items: &[T], key: impl Fn(&T) -> K) -> HashMap<K, usize> {
    items.iter().enumerate().map(|(i, t)| (key(t), i)).collect()
}

impl Workspace {
    /// Initializes a workspace, replacing any previous snapshots and log.
    pub fn create(dir: impl AsRef<Path>, records: Vec<KilnRecord>, grid: Vec<GridCell>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut none = None;
        write_atomic(&dir.join(KILNS_FILE), write_kiln_dataset(&records, Some(0)).as_bytes(), &mut none)?;
        write_atomic(&dir.join(GRID_FILE), grid_text(&grid, 0).as_bytes(), &mut none)?;
        File::create(dir.join(LOG_FILE))?.sync_all()?;
        Self::open(dir)
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let kilns = read_kiln_dataset(&fs::read(dir.join(KILNS_FILE))?)?;
        let kiln_seq = kilns.log_seq.unwrap_or(0);
        let (grid, grid_seq) = match fs::read(dir.join(GRID_FILE)) {
            Ok(bytes) => {
                let seq = serde_json::from_slice::<Value>(&bytes)
                    .ok()
                    .and_then(|v| v.get("log_seq").and_then(Value::as_u64))
                    .unwrap_or(0);
                (grid_from_geojson(&bytes)?, seq)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => (Vec::new(), 0),
            Err(e) => return Err(e.into()),
        };
        let log_path = dir.join(LOG_FILE);
        let bytes = match fs::read(&log_path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let contents = parse_log(&bytes)?;
        let mut log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        if contents.torn {
            log.set_len(contents.valid_len)?;
            log.sync_all()?;
            log.seek(SeekFrom::End(0))?;
        }

        let records = kilns.records;
        let mut ws = Workspace {
            by_id: index_of(&records, |r| r.id.clone()),
            by_cell: index_of(&grid, |c| (c.row, c.col)),
            records,
            grid,
            seq: 0,
            snapshot_seq: kiln_seq.min(grid_seq),
            applied: HashMap::new(),
            dir,
            log,
            fail: None,
        };
        let last = contents.entries.last().map_or(0, LogEntry::seq);
        if kiln_seq > last || grid_seq > last {
            return Err(Error::Invalid(format!(
                "snapshot claims log_seq {} but the log ends at {last}",
                kiln_seq.max(grid_seq)
            )));
        }
        for e in contents.entries {
            let seq = e.seq();
            match e {
                LogEntry::Validation { action, result, .. } => {
                    if seq > kiln_seq {
                        let i = *ws
                            .by_id
                            .get(&action.kiln_id)
                            .ok_or_else(|| Error::UnknownKiln(action.kiln_id.clone()))?;
                        let replayed = transition(&ws.records[i], &action)?;
                        if replayed != result {
                            return Err(Error::Invalid(format!("log entry {seq} does not replay to its recorded result")));
                        }
                        ws.records[i] = replayed;
                    }
                    ws.applied
                        .insert(action.action_id.clone(), Applied::Validation(action, result, seq));
                }
                LogEntry::Cell { change, .. } => {
                    if seq > grid_seq {
                        ws.apply_cell(&change)?;
                    }
                    ws.applied.insert(change.action_id.clone(), Applied::Cell(change, seq));
                }
            }
            ws.seq = seq;
        }
        Ok(ws)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn records(&self) -> &[KilnRecord] {
        &self.records
    }

    pub fn kiln(&self, id: &str) -> Option<&KilnRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    pub fn grid(&self) -> &[GridCell] {
        &self.grid
    }

    pub fn cell(&self, row: u32, col: u32) -> Option<&GridCell> {
        self.by_cell.get(&(row, col)).map(|&i| &self.grid[i])
    }

    pub fn log_seq(&self) -> u64 {
        self.seq
    }

    /// Log entries not yet covered by a snapshot.
    pub fn unsnapshotted(&self) -> u64 {
        self.seq - self.snapshot_seq
    }

    pub fn progress(&self) -> Progress {
        progress(&self.records, &self.grid)
    }

    #[doc(hidden)]
    pub fn inject_failure(&mut self, fp: FailPoint) {
        self.fail = Some(fp);
    }

    fn append(&mut self, entry: &LogEntry) -> Result<()> {
        let mut line = serde_json::to_vec(entry).map_err(|e| Error::Invalid(e.to_string()))?;
        line.push(b'\n');
        if self.fail == Some(FailPoint::TornAppend) {
            self.fail = None;
            self.log.write_all(&line[..line.len() / 2])?;
            self.log.sync_data()?;
            return Err(injected());
        }
        self.log.write_all(&line)?;
        self.log.sync_data()?;
        if self.fail == Some(FailPoint::AfterLogAppend) {
            self.fail = None;
            return Err(injected());
        }
        Ok(())
    }

    /// Validates, logs, then applies `action`. A retry with a known
    /// `action_id` returns the original result without logging again.
    pub fn submit(&mut self, mut action: ValidationAction) -> Result<Outcome<KilnRecord>> {
        if action.timestamp.is_empty() {
            action.timestamp = now();
        }
        if action.action_id.is_empty() {
            return Err(Error::Invalid("action_id is required".into()));
        }
        match self.applied.get(&action.action_id) {
            Some(Applied::Validation(prev, result, seq)) if prev.same_request(&action) => {
                return Ok(Outcome {
                    value: result.clone(),
                    seq: *seq,
                    duplicate: true,
                })
            }
            Some(_) => {
                return Err(Error::Conflict(format!(
                    "action id {:?} was used for a different request",
                    action.action_id
                )))
            }
            None => {}
        }
        let i = *self
            .by_id
            .get(&action.kiln_id)
            .ok_or_else(|| Error::UnknownKiln(action.kiln_id.clone()))?;
        let result = transition(&self.records[i], &action)?;
        let seq = self.seq + 1;
        self.append(&LogEntry::Validation {
            seq,
            action: action.clone(),
            result: result.clone(),
        })?;
        self.seq = seq;
        self.records[i] = result.clone();
        self.applied
            .insert(action.action_id.clone(), Applied::Validation(action, result.clone(), seq));
        Ok(Outcome {
            value: result,
            seq,
            duplicate: false,
        })
    }

    fn apply_cell(&mut self, change: &CellChange) -> Result<GridCell> {
        let i = *self
            .by_cell
            .get(&(change.row, change.col))
            .ok_or_else(|| Error::Invalid(format!("no grid cell at row {} col {}", change.row, change.col)))?;
        let cell = &mut self.grid[i];
        cell.status = change.status;
        if change.assignee.is_some() {
            cell.assignee = change.assignee.clone();
        }
        Ok(cell.clone())
    }

    pub fn set_cell_status(&mut self, mut change: CellChange) -> Result<Outcome<GridCell>> {
        if change.timestamp.is_empty() {
            change.timestamp = now();
        }
        check_timestamp(&change.timestamp)?;
        if change.action_id.is_empty() {
            return Err(Error::Invalid("action_id is required".into()));
        }
        match self.applied.get(&change.action_id) {
            Some(Applied::Cell(prev, seq)) if prev.same_request(&change) => {
                return Ok(Outcome {
                    value: self.cell(change.row, change.col).cloned().expect("logged cells exist"),
                    seq: *seq,
                    duplicate: true,
                })
            }
            Some(_) => {
                return Err(Error::Conflict(format!(
                    "action id {:?} was used for a different request",
                    change.action_id
                )))
            }
            None => {}
        }
        if self.cell(change.row, change.col).is_none() {
            return Err(Error::Invalid(format!("no grid cell at row {} col {}", change.row, change.col)));
        }
        let seq = self.seq + 1;
        self.append(&LogEntry::Cell {
            seq,
            change: change.clone(),
        })?;
        self.seq = seq;
        let cell = self.apply_cell(&change)?;
        self.applied.insert(change.action_id.clone(), Applied::Cell(change, seq));
        Ok(Outcome {
            value: cell,
            seq,
            duplicate: false,
        })
    }

    /// Writes both snapshots at the current log position.
    pub fn snapshot(&mut self) -> Result<()> {
        let seq = self.seq;
        write_atomic(
            &self.dir.join(KILNS_FILE),
            write_kiln_dataset(&self.records, Some(seq)).as_bytes(),
            &mut self.fail,
        )?;
        write_atomic(&self.dir.join(GRID_FILE), grid_text(&self.grid, seq).as_bytes(), &mut self.fail)?;
        self.snapshot_seq = seq;
        Ok(())
    }

    /// Snapshots once `every` entries have accumulated.
    pub fn maybe_snapshot(&mut self, every: u64) -> Result<bool> {
        if self.unsnapshotted() >= every.max(1) {
            self.snapshot()?;
            return Ok(true);
        }
        Ok(false)
    }

    /// Replaces the grid (e.g. after generating one for a new region).
    pub fn replace_grid(&mut self, grid: Vec<GridCell>) -> Result<()> {
        self.by_cell = index_of(&grid, |c| (c.row, c.col));
        self.grid = grid;
        self.snapshot()
    }

    pub fn action_ids(&self) -> impl Iterator<Item = &str> {
        self.applied.keys().map(String::as_str)
    }
}

/// Filters for listing kilns. `bbox` is `[west, south, east, north]` in
/// degrees and matches any footprint that intersects it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KilnQuery {
    pub bbox: Option<[f64; 4]>,
    pub state: Option<String>,
    pub class: Option<KilnClass>,
    pub validation_state: Option<ValidationState>,
    /// Id of the last record of the previous page.
    pub cursor: Option<String>,
    pub limit: Option<usize>,
}

pub const DEFAULT_PAGE: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct Page<'a> {
    pub records: Vec<&'a KilnRecord>,
    pub next_cursor: Option<String>,
}

/// Matching records ordered by id, one page at a time.
pub fn query_kilns<'a>(records: &'a [KilnRecord], q: &KilnQuery) -> Page<'a> {
    let limit = q.limit.unwrap_or(DEFAULT_PAGE).max(1);
    let mut hits: Vec<&KilnRecord> = records
        .iter()
        .filter(|r| q.cursor.as_deref().is_none_or(|c| r.id.as_str() > c))
        .filter(|r| q.state.as_deref().is_none_or(|s| r.state == s))
        .filter(|r| q.class.is_none_or(|c| r.class == c))
        .filter(|r| q.validation_state.is_none_or(|v| r.validation_state == v))
        .filter(|r| {
            q.bbox.is_none_or(|b| {
                let f = r.footprint().bounds();
                f[0] <= b[2] && f[2] >= b[0] && f[1] <= b[3] && f[3] >= b[1]
            })
        })
        .collect();
    hits.sort_by(|a, b| a.id.cmp(&b.id));
    let next_cursor = (hits.len() > limit).then(|| hits[limit - 1].id.clone());
    hits.truncate(limit);
    Page {
        records: hits,
        next_cursor,
    }
}
