//! Command implementations behind the `pulse` binary and the HTTP adapter
//! that exposes [`Service::handle`] over axum.

use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use axum::body::{to_bytes, Body};
use axum::extract::{Query, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Router;
use chrono::{DateTime, Utc};
use pulse_core::econ::{simulate_cohort, SimulationConfig};
use pulse_core::scheduler::InboundForecast;
use pulse_core::service::api::ApiRequest;
use pulse_core::service::{parse_script, CallOutcome, PlanRequest, Service, ServiceConfig};

/// Largest request body the adapter will buffer.
const MAX_BODY: usize = 4 << 20;

#[derive(Clone)]
struct AppState {
    service: Arc<Service>,
    ui_dir: Option<PathBuf>,
}

/// Router forwarding every request to the service dispatcher. With a UI
/// directory, non-API GETs are served as static files from it.
pub fn router(service: Arc<Service>, ui_dir: Option<PathBuf>) -> Router {
    Router::new().fallback(dispatch).with_state(AppState { service, ui_dir })
}

const API_PREFIXES: [&str; 12] = [
    "health",
    "patients",
    "flows",
    "calls",
    "transcripts",
    "assessments",
    "alerts",
    "trends",
    "plans",
    "cache",
    "econ",
    "analytics",
];

fn is_api_path(path: &str) -> bool {
    let first = path.trim_start_matches('/').split('/').next().unwrap_or("");
    API_PREFIXES.contains(&first)
}

async fn dispatch(State(app): State<AppState>, req: Request) -> Response {
    let (parts, body) = req.into_parts();
    let path = parts.uri.path().to_string();
    if let Some(dir) = &app.ui_dir {
        if parts.method == Method::GET && !is_api_path(&path) {
            return static_file(dir, &path).await;
        }
    }
    let query = match Query::<BTreeMap<String, String>>::try_from_uri(&parts.uri) {
        Ok(Query(q)) => q,
        Err(e) => return (StatusCode::BAD_REQUEST, e.to_string()).into_response(),
    };
    let bytes = match to_bytes(body, MAX_BODY).await {
        Ok(b) => b,
        Err(_) => return (StatusCode::PAYLOAD_TOO_LARGE, "request body too large").into_response(),
    };
    let body = if bytes.is_empty() {
        None
    } else {
        match String::from_utf8(bytes.to_vec()) {
            Ok(s) => Some(s),
            Err(_) => return (StatusCode::BAD_REQUEST, "body must be UTF-8").into_response(),
        }
    };
    let api = ApiRequest {
        method: parts.method.as_str().to_string(),
        path,
        query,
        body,
        authorization: parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string),
    };
    let service = Arc::clone(&app.service);
    // Calls and plans take the store's write lock; keep them off the reactor.
    let res = match tokio::task::spawn_blocking(move || service.handle(&api)).await {
        Ok(r) => r,
        Err(e) => return (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    };
    let status = StatusCode::from_u16(res.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    let mut out = Response::new(Body::from(res.body.to_string()));
    *out.status_mut() = status;
    out.headers_mut()
        .insert(header::CONTENT_TYPE, HeaderValue::from_static("application/json"));
    out
}

async fn static_file(dir: &Path, path: &str) -> Response {
    let rel = path.trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    let rel = Path::new(rel);
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return StatusCode::NOT_FOUND.into_response();
    }
    let mut file = dir.join(rel);
    if tokio::fs::metadata(&file).await.is_err() {
        // Client-side routes fall back to the app shell.
        file = dir.join("index.html");
    }
    match tokio::fs::read(&file).await {
        Ok(bytes) => {
            let mime = match file.extension().and_then(|e| e.to_str()) {
                Some("html") => "text/html; charset=utf-8",
                Some("js") => "text/javascript",
                Some("css") => "text/css",
                Some("json") => "application/json",
                Some("svg") => "image/svg+xml",
                _ => "application/octet-stream",
            };
            ([(header::CONTENT_TYPE, mime)], bytes).into_response()
        }
        Err(_) => StatusCode::NOT_FOUND.into_response(),
    }
}

pub fn load_config(path: Option<&Path>) -> Result<ServiceConfig> {
    ServiceConfig::load(path).context("loading configuration")
}

/// Runs one scripted call against the file-backed store, registering the
/// pilot patients first if the store has none.
pub fn run_call(config: ServiceConfig, patient: &str, flow: &str, script: &Path) -> Result<CallOutcome> {
    let text = std::fs::read_to_string(script).with_context(|| format!("reading {}", script.display()))?;
    let service = Service::open(config)?;
    service.seed_pilot_patients()?;
    Ok(service.run_call(patient, flow, &parse_script(&text))?)
}

pub fn render_call(outcome: &CallOutcome) -> String {
    let mut out = format!("session {} ({:?})\n\n", outcome.session_id, outcome.status);
    out.push_str(&outcome.assessment.to_tables());
    for a in &outcome.alerts {
        out.push_str(&format!("alert [{:?}]: {}\n", a.severity, a.trigger_text));
    }
    if let Some(e) = &outcome.storage_error {
        out.push_str(&format!("storage error: {e}\n"));
    }
    out
}

pub struct PlanArgs<'a> {
    pub horizon: usize,
    pub capacity: Option<u32>,
    pub forecast: Option<&'a Path>,
    pub spike: Option<f64>,
    pub start: Option<DateTime<Utc>>,
}

/// Plans outbound calls for every stored patient and returns the plan as CSV.
pub fn plan(config: ServiceConfig, args: PlanArgs<'_>) -> Result<String> {
    let forecast = match args.forecast {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            InboundForecast::from_csv(&text, 1.0)?.expected
        }
        None => Vec::new(),
    };
    let service = Service::open(config)?;
    service.seed_pilot_patients()?;
    let plan = service.plan_calls(&PlanRequest {
        horizon: args.horizon,
        capacity: args.capacity,
        forecast,
        spike_multiplier: args.spike,
        start: args.start,
        patient_ids: None,
    })?;
    let patients: Vec<_> = service.read(|s| s.patients.values().cloned().collect());
    let mut out = plan.to_csv(&patients)?;
    for id in &plan.unplaced {
        out.push_str(&format!("# unplaced: {id}\n"));
    }
    Ok(out)
}

pub struct SimulateArgs<'a> {
    pub config: Option<&'a Path>,
    pub seed: Option<u64>,
    pub patients: Option<u32>,
    pub periods: Option<u32>,
    pub stabilization: Option<f64>,
}

pub fn simulation_config(args: &SimulateArgs<'_>) -> Result<SimulationConfig> {
    let mut cfg: SimulationConfig = match args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SimulationConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.patients {
        cfg.patients = n;
    }
    if let Some(n) = args.periods {
        cfg.periods = n;
    }
    if let Some(s) = args.stabilization {
        cfg.dynamics.ai_stabilization = s;
    }
    Ok(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Table,
    Csv,
    Json,
}

pub fn simulate(args: &SimulateArgs<'_>, format: Format) -> Result<String> {
    let cfg = simulation_config(args)?;
    let (_, report) = simulate_cohort(&cfg)?;
    Ok(match format {
        Format::Table => report.to_table(),
        Format::Csv => report.to_csv(),
        Format::Json => serde_json::to_string_pretty(&report)? + "\n",
    })
}

pub fn cache_report(config: ServiceConfig, session: Option<&str>, format: Format) -> Result<String> {
    let service = Service::open(config)?;
    match (format, session) {
        (Format::Csv, Some(id)) => Ok(service.cache_csv(id)?),
        (Format::Csv, None) => bail!("--csv needs --session"),
        (Format::Json, _) => Ok(serde_json::to_string_pretty(&service.cache_reports(session)?)? + "\n"),
        (Format::Table, _) => {
            let mut out = format!(
                "{:<14} {:>6} {:>8} {:>10} {:>10} {:>10}\n",
                "session", "calls", "prefix", "avoided", "speedup", "ttft"
            );
            for r in service.cache_reports(session)? {
                out.push_str(&format!(
                    "{:<14} {:>6} {:>8} {:>10} {:>10.4} {:>10.1}\n",
                    r.session_id,
                    r.calls,
                    r.cached_prefix_len,
                    r.metrics.redundancy_avoided,
                    r.metrics.speedup_factor,
                    r.metrics.ttft_model
                ));
            }
            Ok(out)
        }
    }
}
