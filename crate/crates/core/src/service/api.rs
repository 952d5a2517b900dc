//! Transport-independent request handling. The HTTP server forwards every
//! request here, so the endpoint logic is testable without a socket.

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{FlowSummary, PlanRequest, Service, ServiceError};
use crate::domain::PatientProfile;
use crate::econ::{self, SimulationConfig};
use crate::extraction::Dimension;

pub const DEFAULT_PAGE: usize = 50;
pub const MAX_PAGE: usize = 500;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ApiRequest {
    pub method: String,
    pub path: String,
    pub query: BTreeMap<String, String>,
    pub body: Option<String>,
    pub authorization: Option<String>,
}

impl ApiRequest {
    pub fn get(path: &str) -> Self {
        Self {
            method: "GET".into(),
            path: path.into(),
            ..Self::default()
        }
    }

    pub fn post(path: &str, body: impl Into<String>) -> Self {
        Self {
            method: "POST".into(),
            path: path.into(),
            body: Some(body.into()),
            ..Self::default()
        }
    }

    pub fn with_query(mut self, key: &str, value: &str) -> Self {
        self.query.insert(key.into(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiResponse {
    pub status: u16,
    pub body: Value,
}

impl ApiResponse {
    fn ok(body: impl Serialize) -> Self {
        Self {
            status: 200,
            body: serde_json::to_value(body).expect("response serializes"),
        }
    }

    fn error(status: u16, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": message.into() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page<T> {
    pub items: Vec<T>,
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRequest {
    pub patient_id: String,
    #[serde(default = "default_flow")]
    pub flow_id: String,
    /// Patient utterances in order.
    #[serde(default)]
    pub script: Vec<String>,
}

fn default_flow() -> String {
    "pulse".into()
}

struct Failure(ApiResponse);

impl From<ServiceError> for Failure {
    fn from(e: ServiceError) -> Self {
        let status = match &e {
            ServiceError::UnknownPatient(_) | ServiceError::UnknownFlow(_) | ServiceError::NotFound(_) => 404,
            ServiceError::Store(_) => 500,
            _ => 400,
        };
        Failure(ApiResponse::error(status, e.to_string()))
    }
}

fn bad_request(msg: impl Into<String>) -> Failure {
    Failure(ApiResponse::error(400, msg))
}

fn not_found(msg: impl Into<String>) -> Failure {
    Failure(ApiResponse::error(404, msg))
}

fn paginate<T: Clone + Serialize>(items: &[T], query: &BTreeMap<String, String>) -> Result<Page<T>, Failure> {
    let num = |key: &str, default: usize| -> Result<usize, Failure> {
        match query.get(key) {
            Some(v) => v
                .parse::<usize>()
                .map_err(|_| bad_request(format!("`{key}` must be a non-negative integer"))),
            None => Ok(default),
        }
    };
    let offset = num("offset", 0)?;
    let limit = num("limit", DEFAULT_PAGE)?;
    if limit == 0 || limit > MAX_PAGE {
        return Err(bad_request(format!("`limit` must be between 1 and {MAX_PAGE}")));
    }
    Ok(Page {
        items: items.iter().skip(offset).take(limit).cloned().collect(),
        total: items.len(),
        offset,
        limit,
    })
}

fn parse_body<T: DeserializeOwned>(req: &ApiRequest) -> Result<T, Failure> {
    let body = req.body.as_deref().unwrap_or("");
    serde_json::from_str(body).map_err(|e| bad_request(format!("malformed body: {e}")))
}

impl Service {
    /// Dispatches one API request.
    pub fn handle(&self, req: &ApiRequest) -> ApiResponse {
        if let Some(token) = &self.config().api_token {
            let expected = format!("Bearer {token}");
            if req.authorization.as_deref() != Some(expected.as_str()) {
                return ApiResponse::error(401, "missing or invalid bearer token");
            }
        }
        match self.route(req) {
            Ok(r) => r,
            Err(Failure(r)) => r,
        }
    }

    fn route(&self, req: &ApiRequest) -> Result<ApiResponse, Failure> {
        let segments: Vec<&str> = req.path.trim_matches('/').split('/').filter(|s| !s.is_empty()).collect();
        let q = &req.query;
        match (req.method.as_str(), segments.as_slice()) {
            ("GET", ["health"]) => Ok(ApiResponse::ok(json!({ "status": "ok" }))),

            ("GET", ["patients"]) => {
                let items: Vec<PatientProfile> = self.read(|s| s.patients.values().cloned().collect());
                Ok(ApiResponse::ok(paginate(&items, q)?))
            }
            ("GET", ["patients", id]) => self
                .read(|s| s.patients.get(*id).cloned())
                .map(ApiResponse::ok)
                .ok_or_else(|| not_found(format!("patient `{id}`"))),
            ("POST", ["patients"]) => {
                let p: PatientProfile = parse_body(req)?;
                self.upsert_patient(p.clone())?;
                Ok(ApiResponse::ok(p))
            }

            ("GET", ["flows"]) => {
                let items: Vec<FlowSummary> = self
                    .flows()
                    .iter()
                    .map(|(id, f)| FlowSummary {
                        id: id.clone(),
                        source_instruments: f.source_instruments.clone(),
                        steps: f.len(),
                    })
                    .collect();
                Ok(ApiResponse::ok(paginate(&items, q)?))
            }
            ("GET", ["flows", id]) => self
                .flows()
                .get(*id)
                .map(ApiResponse::ok)
                .ok_or_else(|| not_found(format!("flow `{id}`"))),

            ("POST", ["calls"]) => {
                let call: CallRequest = parse_body(req)?;
                let outcome = self.run_call(&call.patient_id, &call.flow_id, &call.script)?;
                Ok(ApiResponse::ok(outcome))
            }

            ("GET", ["transcripts"]) => {
                let patient = q.get("patient");
                let items: Vec<_> = self.read(|s| {
                    s.sessions
                        .values()
                        .filter(|r| patient.is_none_or(|p| &r.patient_id == p))
                        .map(|r| r.transcript())
                        .collect()
                });
                Ok(ApiResponse::ok(paginate(&items, q)?))
            }
            ("GET", ["transcripts", id]) => self
                .read(|s| s.sessions.get(*id).map(|r| r.transcript()))
                .map(ApiResponse::ok)
                .ok_or_else(|| not_found(format!("session `{id}`"))),

            ("GET", ["assessments"]) => {
                let patient = q.get("patient");
                let items: Vec<_> = self.read(|s| {
                    s.assessments
                        .values()
                        .filter(|a| patient.is_none_or(|p| &a.patient_id == p))
                        .cloned()
                        .collect()
                });
                Ok(ApiResponse::ok(paginate(&items, q)?))
            }
            ("GET", ["assessments", id]) => self
                .read(|s| s.assessments.get(*id).cloned())
                .map(|a| ApiResponse::ok(json!({ "tables": a.to_tables(), "result": a })))
                .ok_or_else(|| not_found(format!("assessment for session `{id}`"))),

            ("GET", ["alerts"]) => {
                let filter = q.get("status").map(String::as_str).unwrap_or("all");
                if !matches!(filter, "all" | "open" | "acknowledged") {
                    return Err(bad_request("`status` must be all, open or acknowledged"));
                }
                let mut items: Vec<_> = self.read(|s| {
                    s.alerts
                        .iter()
                        .filter(|a| match filter {
                            "open" => !a.acknowledged,
                            "acknowledged" => a.acknowledged,
                            _ => true,
                        })
                        .cloned()
                        .collect()
                });
                if q.get("order").map(String::as_str) == Some("severity") {
                    items.sort_by(|a, b| {
                        b.alert
                            .severity
                            .cmp(&a.alert.severity)
                            .then(a.alert.created_at.cmp(&b.alert.created_at))
                            .then(a.id.cmp(&b.id))
                    });
                }
                Ok(ApiResponse::ok(paginate(&items, q)?))
            }
            ("POST", ["alerts", id, "ack"]) => {
                let id: u64 = id.parse().map_err(|_| bad_request("alert id must be an integer"))?;
                self.acknowledge_alert(id)?;
                Ok(ApiResponse::ok(json!({ "id": id, "acknowledged": true })))
            }

            ("GET", ["trends", patient]) => {
                let dim = q
                    .get("dimension")
                    .ok_or_else(|| bad_request("`dimension` query parameter is required"))?;
                let dim: Dimension = dim.parse().map_err(|e: crate::extraction::ExtractionError| bad_request(e.to_string()))?;
                Ok(ApiResponse::ok(self.trend(patient, dim)?))
            }

            ("GET", ["plans"]) => {
                let items: Vec<_> = self.read(|s| s.plans.iter().map(|(seq, p)| json!({ "id": seq, "plan": p })).collect());
                Ok(ApiResponse::ok(paginate(&items, q)?))
            }
            ("POST", ["plans"]) => {
                let plan_req: PlanRequest = parse_body(req)?;
                Ok(ApiResponse::ok(self.plan_calls(&plan_req)?))
            }

            ("GET", ["cache", "metrics"]) => {
                let reports = self.cache_reports(q.get("session").map(String::as_str))?;
                Ok(ApiResponse::ok(paginate(&reports, q)?))
            }

            ("POST", ["econ", "simulate"]) => {
                let cfg: SimulationConfig = if req.body.as_deref().is_none_or(|b| b.trim().is_empty()) {
                    SimulationConfig::default()
                } else {
                    parse_body(req)?
                };
                let (trajectories, report) = econ::simulate_cohort(&cfg).map_err(ServiceError::from)?;
                let body = if q.get("trajectories").map(String::as_str) == Some("true") {
                    json!({ "report": report, "trajectories": trajectories })
                } else {
                    json!({ "report": report })
                };
                Ok(ApiResponse::ok(body))
            }

            ("GET", ["analytics", "preferences"]) => Ok(ApiResponse::ok(self.preferences()?)),
            ("GET", ["analytics", "completeness"]) => Ok(ApiResponse::ok(self.completeness()?)),

            (_, []) | (_, ["health" | "patients" | "flows" | "calls" | "transcripts" | "assessments" | "alerts" | "trends" | "plans" | "cache" | "econ" | "analytics", ..]) => {
                Err(Failure(ApiResponse::error(405, format!("{} {} is not supported", req.method, req.path))))
            }
            _ => Err(not_found(format!("no route for {}", req.path))),
        }
    }
}
