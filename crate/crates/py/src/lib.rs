//! Python bindings. Structured results cross the boundary as plain dicts
//! and lists (serialized through JSON), errors as `ValueError`.

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use pulse_core::cache::{LatencyModel, SegmentKind, SessionCacheState};
use pulse_core::domain::{CallWindow, PatientProfile};
use pulse_core::econ::{self, CareCosts, CohortEconConfig, SeverityThresholds, SimulationConfig};
use pulse_core::scheduler::{self, Horizon, InboundForecast};
use pulse_core::service::api::ApiRequest;
use pulse_core::service::{self, PlanRequest, ServiceConfig, SystemClock};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: serde::de::DeserializeOwned>(py: Python<'_>, value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (value,))?.extract()?;
    serde_json::from_str(&text).map_err(err)
}

/// Percentage cost reduction of AI over human care.
#[pyfunction]
fn cost_efficiency(c_h: f64, c_a: f64) -> PyResult<f64> {
    econ::cost_efficiency(c_h, c_a).map_err(err)
}

/// Returns `(value, label)`.
#[pyfunction]
fn icer(c_h: f64, c_a: f64, qaly_h: f64, qaly_a: f64) -> PyResult<(f64, String)> {
    let r = econ::icer(&CareCosts { c_h, c_a, qaly_h, qaly_a }).map_err(err)?;
    Ok((r.value, format!("{:?}", r.label)))
}

/// Returns `(c_human, c_ai, r_percent)`.
#[pyfunction]
fn monitoring_costs(n_p: u64, c_m: f64, f: f64, v_a: f64) -> PyResult<(f64, f64, f64)> {
    let m = econ::monitoring_costs(&CohortEconConfig {
        n_p,
        c_m,
        f,
        v_a,
        r: 0.0,
        flows: vec![],
    })
    .map_err(err)?;
    Ok((m.c_human, m.c_ai, m.r))
}

/// Net present value of `(benefit, cost)` pairs, first flow undiscounted.
#[pyfunction]
fn npv(flows: Vec<(f64, f64)>, r: f64) -> PyResult<f64> {
    econ::npv(&flows, r).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (s, s_l = 0.2, s_m = 0.5, s_h = 0.8))]
fn assign_care_level(s: f64, s_l: f64, s_m: f64, s_h: f64) -> PyResult<String> {
    let t = SeverityThresholds::new(s_l, s_m, s_h).map_err(err)?;
    Ok(format!("{:?}", econ::assign_care_level(s, &t).map_err(err)?))
}

/// Cohort simulation. `config` takes the same keys as the TOML file; the
/// result has `report` and, if requested, `trajectories`.
#[pyfunction]
#[pyo3(signature = (config = None, trajectories = false))]
fn simulate_cohort(py: Python<'_>, config: Option<&Bound<'_, PyAny>>, trajectories: bool) -> PyResult<Py<PyAny>> {
    let cfg: SimulationConfig = match config {
        Some(c) => from_py(py, c)?,
        None => SimulationConfig::default(),
    };
    let (tr, report) = econ::simulate_cohort(&cfg).map_err(err)?;
    #[derive(Serialize)]
    struct Out<'a> {
        report: &'a econ::CostReport,
        #[serde(skip_serializing_if = "Option::is_none")]
        trajectories: Option<&'a [econ::Trajectory]>,
    }
    to_py(
        py,
        &Out {
            report: &report,
            trajectories: trajectories.then_some(tr.as_slice()),
        },
    )
}

/// Plans outbound calls. `patients` items are
/// `(id, timezone, window_start_hour, window_end_hour)`.
#[pyfunction]
#[pyo3(signature = (patients, horizon, start, capacity, forecast = None, spike = 1.0))]
fn plan_calls(
    py: Python<'_>,
    patients: Vec<(String, String, u32, u32)>,
    horizon: usize,
    start: &str,
    capacity: u32,
    forecast: Option<Vec<f64>>,
    spike: f64,
) -> PyResult<Py<PyAny>> {
    let profiles = patients
        .into_iter()
        .map(|(id, tz, a, b)| PatientProfile::new(id.clone(), id, tz, CallWindow::hours(a, b)?))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let start: DateTime<Utc> = start.parse().map_err(err)?;
    let forecast = InboundForecast::new(forecast.unwrap_or_else(|| vec![0.0; horizon]), spike).map_err(err)?;
    let plan = scheduler::plan_outbound(&profiles, &Horizon::hourly(start, horizon), capacity, &forecast).map_err(err)?;
    to_py(py, &plan)
}

/// Token ledger of one conversation's prefix cache.
#[pyclass(name = "SessionCache")]
struct PySessionCache {
    inner: SessionCacheState,
}

#[pymethods]
impl PySessionCache {
    #[new]
    fn new(session_id: &str) -> Self {
        Self {
            inner: SessionCacheState::new(session_id),
        }
    }

    fn prime(&mut self, py: Python<'_>, tokens: u64) -> PyResult<Py<PyAny>> {
        let st = self.inner.prime(tokens, SegmentKind::SystemPrompt).map_err(err)?;
        to_py(py, &st)
    }

    fn extend(&mut self, py: Python<'_>, tokens: u64) -> PyResult<Py<PyAny>> {
        let st = self.inner.extend(tokens).map_err(err)?;
        to_py(py, &st)
    }

    /// `injected` items are `(length, origin)`.
    fn blend(&mut self, py: Python<'_>, injected: Vec<(u64, String)>, new_tokens: u64, fraction: f64) -> PyResult<Py<PyAny>> {
        let st = self.inner.blend(&injected, new_tokens, fraction).map_err(err)?;
        to_py(py, &st)
    }

    /// `(baseline, processed)` token totals.
    fn ratio(&self) -> (u64, u64) {
        self.inner.speedup_ratio()
    }

    #[pyo3(signature = (alpha = 50.0, beta = 0.5))]
    fn metrics(&self, py: Python<'_>, alpha: f64, beta: f64) -> PyResult<Py<PyAny>> {
        let m = self.inner.metrics(&LatencyModel { alpha, beta }).map_err(err)?;
        to_py(py, &m)
    }

    #[getter]
    fn cached_prefix_len(&self) -> u64 {
        self.inner.cached_prefix_len
    }
}

/// The monitoring service. In memory unless `data_dir` is given.
#[pyclass(name = "Service")]
struct PyService {
    inner: Arc<service::Service>,
}

#[pymethods]
impl PyService {
    #[new]
    #[pyo3(signature = (data_dir = None, seed_pilot = true))]
    fn new(data_dir: Option<std::path::PathBuf>, seed_pilot: bool) -> PyResult<Self> {
        let inner = match data_dir {
            Some(dir) => service::Service::open(ServiceConfig {
                data_dir: dir,
                ..ServiceConfig::default()
            }),
            None => service::Service::in_memory(ServiceConfig::default(), Arc::new(SystemClock)),
        }
        .map_err(err)?;
        if seed_pilot {
            inner.seed_pilot_patients().map_err(err)?;
        }
        Ok(Self { inner: Arc::new(inner) })
    }

    /// Runs one scripted call; returns transcript, assessment and alerts.
    #[pyo3(signature = (patient_id, script, flow_id = "pulse"))]
    fn run_call(&self, py: Python<'_>, patient_id: &str, script: Vec<String>, flow_id: &str) -> PyResult<Py<PyAny>> {
        let inner = Arc::clone(&self.inner);
        let (p, f) = (patient_id.to_string(), flow_id.to_string());
        let out = py.detach(move || inner.run_call(&p, &f, &script)).map_err(err)?;
        to_py(py, &out)
    }

    fn plan(&self, py: Python<'_>, request: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
        let req: PlanRequest = from_py(py, request)?;
        to_py(py, &self.inner.plan_calls(&req).map_err(err)?)
    }

    fn acknowledge_alert(&self, alert_id: u64) -> PyResult<()> {
        self.inner.acknowledge_alert(alert_id).map_err(err)
    }

    /// Dispatches an API request; returns `(status, body)`.
    #[pyo3(signature = (method, path, body = None, query = None))]
    fn request(
        &self,
        py: Python<'_>,
        method: &str,
        path: &str,
        body: Option<&Bound<'_, PyAny>>,
        query: Option<BTreeMap<String, String>>,
    ) -> PyResult<(u16, Py<PyAny>)> {
        let body = match body {
            Some(b) => Some(py.import("json")?.call_method1("dumps", (b,))?.extract::<String>()?),
            None => None,
        };
        let req = ApiRequest {
            method: method.to_uppercase(),
            path: path.to_string(),
            query: query.unwrap_or_default(),
            body,
            authorization: None,
        };
        let res = self.inner.handle(&req);
        Ok((res.status, to_py(py, &res.body)?))
    }

    fn state_digest(&self) -> String {
        self.inner.state_digest()
    }

    /// Rebuilds state from the event log and compares digests.
    fn replay_matches(&self) -> PyResult<bool> {
        let events = self.inner.events().map_err(err)?;
        let rebuilt = service::store::replay(&events, self.inner.config().cache.budget_tokens).map_err(err)?;
        Ok(rebuilt.digest() == self.inner.state_digest())
    }

    fn event_count(&self) -> PyResult<usize> {
        Ok(self.inner.events().map_err(err)?.len())
    }
}

#[pyfunction]
fn golden_script() -> Vec<String> {
    service::parse_script(service::GOLDEN_SCRIPT)
}

#[pymodule]
fn pulse(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyService>()?;
    m.add_class::<PySessionCache>()?;
    m.add_function(wrap_pyfunction!(cost_efficiency, m)?)?;
    m.add_function(wrap_pyfunction!(icer, m)?)?;
    m.add_function(wrap_pyfunction!(monitoring_costs, m)?)?;
    m.add_function(wrap_pyfunction!(npv, m)?)?;
    m.add_function(wrap_pyfunction!(assign_care_level, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_cohort, m)?)?;
    m.add_function(wrap_pyfunction!(plan_calls, m)?)?;
    m.add_function(wrap_pyfunction!(golden_script, m)?)?;
    Ok(())
}
