//! HTTP API over a validation workspace.
//!
//! The workspace sits behind one mutex and is only touched from blocking
//! threads; reports work on a cloned copy of the records so a long audit
//! never holds the lock.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use kilnwatch_core::compliance::AuditOptions;
use kilnwatch_core::impact::EXPOSURE_RADII_KM;
use kilnwatch_core::tiling::{grid_to_geojson, CellStatus};
use kilnwatch_core::workflow::{self, CellChange, KilnQuery, ValidationAction, Workspace};
use kilnwatch_core::{Error, KilnRecord};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::inputs::Reference;
use crate::reports;
use crate::tiles::{TileAddr, TileError, TileProxy};

pub struct AppState {
    pub workspace: Mutex<Workspace>,
    pub reference: Arc<Reference>,
    pub audit: AuditOptions,
    pub snapshot_every: u64,
    pub tiles: Option<TileProxy>,
}

impl AppState {
    pub fn new(
        workspace: Workspace,
        reference: Reference,
        audit: AuditOptions,
        snapshot_every: u64,
        tiles: Option<TileProxy>,
    ) -> Arc<Self> {
        Arc::new(AppState {
            workspace: Mutex::new(workspace),
            reference: Arc::new(reference),
            audit,
            snapshot_every,
            tiles,
        })
    }

    fn records(&self) -> Vec<KilnRecord> {
        self.workspace.lock().unwrap_or_else(|e| e.into_inner()).records().to_vec()
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code: code.into(),
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::UnknownKiln(_) => StatusCode::NOT_FOUND,
            Error::Discarded(_) | Error::Conflict(_) => StatusCode::CONFLICT,
            Error::Io(_) | Error::Csv(_) | Error::Config(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<TileError> for ApiError {
    fn from(e: TileError) -> Self {
        let (status, code) = match &e {
            TileError::BadAddress(_) => (StatusCode::BAD_REQUEST, "invalid_tile"),
            TileError::Upstream(_) => (StatusCode::BAD_GATEWAY, "upstream"),
            TileError::Cache(_) => (StatusCode::INTERNAL_SERVER_ERROR, "io"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = %self.code, "{}", self.message);
        }
        (self.status, axum::Json(json!({"code": self.code, "message": self.message}))).into_response()
    }
}

type ApiResult<T = Response> = std::result::Result<T, ApiError>;

fn json_text(body: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_json", e.to_string()))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/api/kilns", get(list_kilns))
        .route("/api/kilns/{id}", get(get_kiln))
        .route("/api/kilns/{id}/action", post(kiln_action))
        .route("/api/grid", get(get_grid))
        .route("/api/grid/{row}/{col}/status", post(cell_status))
        .route("/api/progress", get(get_progress))
        .route("/api/reports/compliance", get(compliance_report))
        .route("/api/reports/emissions", get(emissions_report))
        .route("/api/reports/exposure", get(exposure_report))
        .route("/tiles/{z}/{x}/{y}", get(tile))
        .with_state(state)
}

fn parse_bbox(s: &str) -> ApiResult<[f64; 4]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| ApiError::bad_request(format!("bbox {s:?} is not four numbers")))?;
    match v[..] {
        [w, s2, e, n] if v.iter().all(|x| x.is_finite()) && w <= e && s2 <= n => Ok([w, s2, e, n]),
        _ => Err(ApiError::bad_request(format!("bbox {s:?} must be west,south,east,north"))),
    }
}

fn kiln_query(p: &HashMap<String, String>) -> ApiResult<KilnQuery> {
    let mut q = KilnQuery::default();
    for (k, v) in p {
        match k.as_str() {
            "bbox" => q.bbox = Some(parse_bbox(v)?),
            "state" => q.state = Some(v.clone()),
            "class" => q.class = Some(v.parse().map_err(ApiError::from)?),
            "validation_state" => q.validation_state = Some(v.parse().map_err(ApiError::from)?),
            "cursor" => q.cursor = Some(v.clone()),
            "limit" => {
                let n: usize = v
                    .parse()
                    .map_err(|_| ApiError::bad_request(format!("limit {v:?} is not a count")))?;
                if n == 0 {
                    return Err(ApiError::bad_request("limit must be positive"));
                }
                q.limit = Some(n);
            }
            other => return Err(ApiError::bad_request(format!("unknown query parameter {other:?}"))),
        }
    }
    Ok(q)
}

async fn list_kilns(State(st): State<Arc<AppState>>, Query(p): Query<HashMap<String, String>>) -> ApiResult {
    let q = kiln_query(&p)?;
    let ws = st.workspace.lock().unwrap_or_else(|e| e.into_inner());
    let page = workflow::query_kilns(ws.records(), &q);
    let features: Vec<Value> = page.records.iter().map(|r| r.to_feature()).collect();
    let body = json!({"type": "FeatureCollection", "features": features, "next_cursor": page.next_cursor});
    Ok(axum::Json(body).into_response())
}

async fn get_kiln(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let ws = st.workspace.lock().unwrap_or_else(|e| e.into_inner());
    let rec = ws.kiln(&id).ok_or_else(|| ApiError::from(Error::UnknownKiln(id.clone())))?;
    Ok(axum::Json(rec.to_feature()).into_response())
}

async fn kiln_action(State(st): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let mut action: ValidationAction = parse_body(&body)?;
    if action.kiln_id.is_empty() {
        action.kiln_id = id;
    } else if action.kiln_id != id {
        return Err(ApiError::bad_request(format!(
            "body names kiln {:?} but the path names {id:?}",
            action.kiln_id
        )));
    }
    let out = blocking(move || {
        let mut ws = st.workspace.lock().unwrap_or_else(|e| e.into_inner());
        let out = ws.submit(action)?;
        ws.maybe_snapshot(st.snapshot_every)?;
        Ok(out)
    })
    .await?;
    Ok(axum::Json(json!({"record": out.value.to_feature(), "seq": out.seq, "duplicate": out.duplicate})).into_response())
}

async fn get_grid(State(st): State<Arc<AppState>>) -> ApiResult {
    let ws = st.workspace.lock().unwrap_or_else(|e| e.into_inner());
    Ok(axum::Json(grid_to_geojson(ws.grid())).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CellBody {
    action_id: String,
    status: CellStatus,
    #[serde(default)]
    assignee: Option<String>,
    #[serde(default)]
    actor: String,
    #[serde(default)]
    timestamp: String,
}

async fn cell_status(State(st): State<Arc<AppState>>, Path((row, col)): Path<(u32, u32)>, body: Bytes) -> ApiResult {
    let b: CellBody = parse_body(&body)?;
    let change = CellChange {
        action_id: b.action_id,
        row,
        col,
        status: b.status,
        assignee: b.assignee,
        actor: b.actor,
        timestamp: b.timestamp,
    };
    let out = blocking(move || {
        let mut ws = st.workspace.lock().unwrap_or_else(|e| e.into_inner());
        let out = ws.set_cell_status(change)?;
        ws.maybe_snapshot(st.snapshot_every)?;
        Ok(out)
    })
    .await?;
    let cell = grid_to_geojson(std::slice::from_ref(&out.value))["features"][0].clone();
    Ok(axum::Json(json!({"cell": cell, "seq": out.seq, "duplicate": out.duplicate})).into_response())
}

async fn get_progress(State(st): State<Arc<AppState>>) -> ApiResult {
    let ws = st.workspace.lock().unwrap_or_else(|e| e.into_inner());
    Ok(axum::Json(ws.progress()).into_response())
}

fn only_params(p: &HashMap<String, String>, allowed: &[&str]) -> ApiResult<()> {
    match p.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(ApiError::bad_request(format!("unknown query parameter {k:?}"))),
        None => Ok(()),
    }
}

async fn compliance_report(State(st): State<Arc<AppState>>, Query(p): Query<HashMap<String, String>>) -> ApiResult {
    only_params(&p, &["state"])?;
    let records = st.records();
    let body = blocking(move || {
        let r = &st.reference;
        let (_, summary) = reports::audit(&records, &r.layers, &r.rules, &st.audit)?;
        Ok(reports::compliance_json(&summary, p.get("state").map(String::as_str))?)
    })
    .await?;
    Ok(json_text(body))
}

fn not_configured(what: &str) -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_configured", format!("the workspace has no {what}"))
}

async fn emissions_report(State(st): State<Arc<AppState>>, Query(p): Query<HashMap<String, String>>) -> ApiResult {
    only_params(&p, &["state"])?;
    if st.reference.production.is_none() {
        return Err(not_configured("production table"));
    }
    let records = st.records();
    let body = blocking(move || {
        let prod = st.reference.production.as_deref().unwrap_or_default();
        let rows = reports::emissions(&records, prod, p.get("state").map(String::as_str))?;
        Ok(reports::emissions_json(&rows))
    })
    .await?;
    Ok(json_text(body))
}

pub fn parse_radii(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| match t.trim().parse::<f64>() {
            Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
            _ => Err(format!("radius {t:?} is not a positive number of kilometers")),
        })
        .collect()
}

async fn exposure_report(State(st): State<Arc<AppState>>, Query(p): Query<HashMap<String, String>>) -> ApiResult {
    only_params(&p, &["radius_km"])?;
    let radii = match p.get("radius_km") {
        Some(s) => parse_radii(s).map_err(ApiError::bad_request)?,
        None => EXPOSURE_RADII_KM.to_vec(),
    };
    if st.reference.population.is_none() {
        return Err(not_configured("population grid"));
    }
    let records = st.records();
    let body = blocking(move || {
        let grid = st.reference.population.as_ref().expect("checked above");
        Ok(reports::exposure_json(&reports::exposure(&records, grid, &radii)?))
    })
    .await?;
    Ok(json_text(body))
}

async fn tile(State(st): State<Arc<AppState>>, Path((z, x, y)): Path<(String, String, String)>) -> ApiResult {
    let proxy = st.tiles.as_ref().ok_or_else(|| not_configured("tile upstream"))?;
    let t = proxy.get(TileAddr::parse(&z, &x, &y)?).await?;
    Ok((
        [
            (header::CONTENT_TYPE, t.content_type),
            (header::CACHE_CONTROL, "public, max-age=86400"),
            (
                header::HeaderName::from_static("x-tile-cache"),
                if t.cached { "hit" } else { "miss" },
            ),
        ],
        t.bytes,
    )
        .into_response())
}

/// Binds and serves until ctrl-c.
pub async fn serve(state: Arc<AppState>, listen: std::net::SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(listen).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
