//! The service layer: event-sourced storage, call execution and the views
//! served to the dashboard.

pub mod api;
pub mod config;
pub mod store;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use chrono::{DateTime, Duration, DurationRound, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{self, AnalyticsError, FixtureCohort, PreferenceDistribution};
use crate::cache::CacheMetrics;
use crate::dialogue::{self, DialogueError, ResponseGenerator, ScriptedGenerator, SessionStatus};
use crate::domain::{
    bundled_eq5d3l, bundled_mhbi, consolidate, CompletionStatus, ConsolidatedFlow, ConversationTranscript,
    DomainError, Instrument, PatientProfile,
};
use crate::econ::EconError;
use crate::extraction::{
    self, Alert, AssessmentResult, CompletenessReport, Dimension, ExtractionError, RuleExtractor, TrendSummary,
};
use crate::lexicon;
use crate::scheduler::{self, AdmissionController, CallPlan, Horizon, InboundForecast, SchedulerError};

pub use config::ServiceConfig;
pub use store::{EventBackend, EventPayload, EventRecord, FaultyBackend, FileBackend, MemoryBackend, State, Store, StoreError};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown patient `{0}`")]
    UnknownPatient(String),
    #[error("unknown flow `{0}`")]
    UnknownFlow(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Dialogue(#[from] DialogueError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Econ(#[from] EconError),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Deterministic clock advancing by a fixed step on every reading.
#[derive(Debug)]
pub struct SteppingClock {
    start: DateTime<Utc>,
    step_ms: i64,
    ticks: AtomicI64,
}

impl SteppingClock {
    pub fn new(start: DateTime<Utc>, step: Duration) -> Self {
        Self {
            start,
            step_ms: step.num_milliseconds(),
            ticks: AtomicI64::new(0),
        }
    }
}

impl Clock for SteppingClock {
    fn now(&self) -> DateTime<Utc> {
        let n = self.ticks.fetch_add(1, Ordering::SeqCst);
        self.start + Duration::milliseconds(n * self.step_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallOutcome {
    pub session_id: String,
    pub status: CompletionStatus,
    pub transcript: ConversationTranscript,
    pub assessment: AssessmentResult,
    pub alerts: Vec<Alert>,
    /// Set when a write failed mid-call and the session was cut short.
    pub storage_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRequest {
    pub horizon: usize,
    #[serde(default)]
    pub capacity: Option<u32>,
    /// Expected inbound arrivals per period; missing periods count as 0.
    #[serde(default)]
    pub forecast: Vec<f64>,
    #[serde(default)]
    pub spike_multiplier: Option<f64>,
    #[serde(default)]
    pub start: Option<DateTime<Utc>>,
    /// Restricts planning to these patients; all patients otherwise.
    #[serde(default)]
    pub patient_ids: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheReport {
    pub session_id: String,
    pub calls: usize,
    pub cached_prefix_len: u64,
    pub metrics: CacheMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    pub id: String,
    pub source_instruments: Vec<String>,
    pub steps: usize,
}

pub fn bundled_flows() -> BTreeMap<String, ConsolidatedFlow> {
    let mhbi = bundled_mhbi();
    let eq = bundled_eq5d3l();
    let mut flows = BTreeMap::new();
    let mk = |insts: &[Instrument]| consolidate(insts).expect("bundled instruments consolidate");
    flows.insert("pulse".to_string(), mk(&[mhbi.clone(), eq.clone()]));
    flows.insert("mhbi".to_string(), mk(&[mhbi]));
    flows.insert("eq5d3l".to_string(), mk(&[eq]));
    flows.insert("pilot".to_string(), mk(&[analytics::bundled_pilot()]));
    flows
}

pub struct Service {
    config: ServiceConfig,
    store: RwLock<Store>,
    flows: BTreeMap<String, ConsolidatedFlow>,
    extractor: RuleExtractor,
    generator: Box<dyn ResponseGenerator>,
    clock: Arc<dyn Clock>,
    admission: AdmissionController,
}

impl Service {
    pub fn new(config: ServiceConfig, backend: Box<dyn EventBackend>, clock: Arc<dyn Clock>) -> Result<Self, ServiceError> {
        let store = Store::open(backend, config.cache.budget_tokens)?;
        let instruments = [bundled_mhbi(), bundled_eq5d3l(), analytics::bundled_pilot()];
        Ok(Self {
            extractor: RuleExtractor::with_rubric(&instruments, config.rubric.clone()),
            admission: AdmissionController::new(config.scheduler.capacity, config.scheduler.queue_band),
            config,
            store: RwLock::new(store),
            flows: bundled_flows(),
            generator: Box::new(ScriptedGenerator::default()),
            clock,
        })
    }

    pub fn in_memory(config: ServiceConfig, clock: Arc<dyn Clock>) -> Result<Self, ServiceError> {
        Self::new(config, Box::new(MemoryBackend::new()), clock)
    }

    /// File-backed service rooted at `config.data_dir`.
    pub fn open(config: ServiceConfig) -> Result<Self, ServiceError> {
        let backend = FileBackend::open(&config.data_dir)?;
        Self::new(config, Box::new(backend), Arc::new(SystemClock))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn extractor(&self) -> &RuleExtractor {
        &self.extractor
    }

    pub fn admission(&self) -> &AdmissionController {
        &self.admission
    }

    pub fn flows(&self) -> &BTreeMap<String, ConsolidatedFlow> {
        &self.flows
    }

    fn read_store(&self) -> RwLockReadGuard<'_, Store> {
        self.store.read().expect("store lock poisoned")
    }

    fn write_store(&self) -> RwLockWriteGuard<'_, Store> {
        self.store.write().expect("store lock poisoned")
    }

    /// Runs `f` against a consistent view of the derived state.
    pub fn read<T>(&self, f: impl FnOnce(&State) -> T) -> T {
        f(self.read_store().state())
    }

    pub fn events(&self) -> Result<Vec<EventRecord>, ServiceError> {
        Ok(self.read_store().events()?)
    }

    pub fn state_digest(&self) -> String {
        self.read(State::digest)
    }

    pub fn upsert_patient(&self, patient: PatientProfile) -> Result<(), ServiceError> {
        patient.validate()?;
        let at = self.clock.now();
        self.write_store().append(EventPayload::PatientUpserted(patient), at)?;
        Ok(())
    }

    /// Registers the pilot cohort patients when the store has no patients.
    pub fn seed_pilot_patients(&self) -> Result<usize, ServiceError> {
        if self.read(|s| !s.patients.is_empty()) {
            return Ok(0);
        }
        let cohort = analytics::bundled_cohort();
        for m in &cohort.members {
            self.upsert_patient(m.patient.clone())?;
        }
        Ok(cohort.members.len())
    }

    /// Conducts one scripted call end to end and stores everything it produces.
    pub fn run_call(&self, patient_id: &str, flow_id: &str, script: &[String]) -> Result<CallOutcome, ServiceError> {
        let mut store = self.write_store();
        let patient = store
            .state()
            .patients
            .get(patient_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownPatient(patient_id.to_string()))?;
        let flow = self
            .flows
            .get(flow_id)
            .ok_or_else(|| ServiceError::UnknownFlow(flow_id.to_string()))?;
        let session_id = format!("sess-{:06}", store.state().sessions.len() + 1);

        store.append(
            EventPayload::CallStarted {
                session_id: session_id.clone(),
                patient_id: patient.id.clone(),
                flow_id: flow_id.to_string(),
                system_prompt_tokens: self.config.cache.system_prompt_tokens,
            },
            self.clock.now(),
        )?;

        let mut storage_error: Option<String> = None;
        let mut persist = |store: &mut Store, payload: EventPayload, at: DateTime<Utc>| -> bool {
            match store.append(payload, at) {
                Ok(_) => true,
                Err(e) => {
                    storage_error.get_or_insert_with(|| e.to_string());
                    false
                }
            }
        };
        let record = |turn: &crate::domain::Turn| EventPayload::TurnRecorded {
            session_id: session_id.clone(),
            turn: turn.clone(),
        };

        let (mut session, first) = dialogue::start_session(
            session_id.clone(),
            &patient,
            flow,
            self.generator.as_ref(),
            self.config.dialogue.clone(),
            self.clock.now(),
        )?;
        let mut status = None;
        if !persist(&mut store, record(&first), first.timestamp) {
            status = Some(CompletionStatus::Abandoned);
        }

        if status.is_none() {
            for utterance in script {
                let before = session.turn_log.len();
                let wrapping_up = session.status == SessionStatus::WrapUp;
                dialogue::advance(&mut session, utterance, self.generator.as_ref(), self.clock.now())?;
                let fresh: Vec<_> = session.turn_log[before..].to_vec();
                if !fresh.iter().all(|t| persist(&mut store, record(t), t.timestamp)) {
                    status = Some(CompletionStatus::Abandoned);
                    break;
                }
                if lexicon::normalize(utterance).affirms_any(extraction::cues::EMERGENCY) {
                    status = Some(CompletionStatus::Escalated);
                    break;
                }
                if session.abandon_requested {
                    status = Some(CompletionStatus::Abandoned);
                    break;
                }
                if wrapping_up {
                    status = Some(CompletionStatus::Completed);
                    break;
                }
            }
        }
        let status = status.unwrap_or(CompletionStatus::Abandoned);
        let closed_at = self.clock.now();
        dialogue::close_session(&mut session, status, closed_at)?;
        persist(
            &mut store,
            EventPayload::SessionClosed {
                session_id: session_id.clone(),
                status,
            },
            closed_at,
        );

        // Assess exactly what was stored.
        let transcript = store
            .state()
            .sessions
            .get(&session_id)
            .map(|s| s.transcript())
            .ok_or_else(|| ServiceError::NotFound(session_id.clone()))?;
        let (assessment, alerts) = self.extractor.assess(&transcript);
        let at = self.clock.now();
        persist(&mut store, EventPayload::AssessmentStored(assessment.clone()), at);
        for alert in &alerts {
            persist(&mut store, EventPayload::AlertRaised(alert.clone()), at);
        }
        Ok(CallOutcome {
            session_id,
            status: transcript.completion_status,
            transcript,
            assessment,
            alerts,
            storage_error,
        })
    }

    pub fn acknowledge_alert(&self, alert_id: u64) -> Result<(), ServiceError> {
        let mut store = self.write_store();
        if !store.state().alerts.iter().any(|a| a.id == alert_id) {
            return Err(ServiceError::NotFound(format!("alert {alert_id}")));
        }
        let at = self.clock.now();
        store.append(EventPayload::AlertAcknowledged { alert_id }, at)?;
        Ok(())
    }

    pub fn plan_calls(&self, req: &PlanRequest) -> Result<CallPlan, ServiceError> {
        let settings = &self.config.scheduler;
        let capacity = req.capacity.unwrap_or(settings.capacity);
        let start = match req.start {
            Some(s) => s,
            None => {
                let now = self.clock.now();
                now.duration_trunc(Duration::hours(1)).unwrap_or(now) + Duration::hours(1)
            }
        };
        let horizon = Horizon {
            start,
            periods: req.horizon,
            period_minutes: settings.period_minutes,
        };
        let forecast = InboundForecast::new(
            req.forecast.clone(),
            req.spike_multiplier.unwrap_or(settings.spike_multiplier),
        )?;
        let patients: Vec<PatientProfile> = self.read(|s| match &req.patient_ids {
            Some(ids) => ids
                .iter()
                .map(|id| s.patients.get(id).cloned().ok_or_else(|| ServiceError::UnknownPatient(id.clone())))
                .collect(),
            None => Ok(s.patients.values().cloned().collect()),
        })?;
        let plan = scheduler::plan_outbound(&patients, &horizon, capacity, &forecast)?;
        let at = self.clock.now();
        self.write_store().append(EventPayload::CallPlanned(plan.clone()), at)?;
        Ok(plan)
    }

    pub fn trend(&self, patient_id: &str, dimension: Dimension) -> Result<TrendSummary, ServiceError> {
        let mut results: Vec<AssessmentResult> = self.read(|s| {
            s.assessments
                .values()
                .filter(|a| a.patient_id == patient_id)
                .cloned()
                .collect()
        });
        if results.is_empty() && !self.read(|s| s.patients.contains_key(patient_id)) {
            return Err(ServiceError::UnknownPatient(patient_id.to_string()));
        }
        results.sort_by_key(|a| a.assessed_at);
        let mut summary = self.extractor.trend_analysis(&results, dimension)?;
        summary.patient_id = patient_id.to_string();
        Ok(summary)
    }

    pub fn cache_reports(&self, session: Option<&str>) -> Result<Vec<CacheReport>, ServiceError> {
        let latency = self.config.cache.latency;
        let reports = self.read(|s| {
            s.cache_ledgers()
                .into_iter()
                .filter(|c| session.is_none_or(|id| c.session_id == id))
                .filter_map(|c| {
                    c.metrics(&latency).ok().map(|metrics| CacheReport {
                        session_id: c.session_id.clone(),
                        calls: c.calls.len(),
                        cached_prefix_len: c.cached_prefix_len,
                        metrics,
                    })
                })
                .collect::<Vec<_>>()
        });
        if let Some(id) = session {
            if reports.is_empty() {
                return Err(ServiceError::NotFound(format!("cache ledger for session {id}")));
            }
        }
        Ok(reports)
    }

    pub fn cache_csv(&self, session: &str) -> Result<String, ServiceError> {
        self.read(|s| s.cache.get(session).map(|c| c.metrics_csv()))
            .ok_or_else(|| ServiceError::NotFound(format!("cache ledger for session {session}")))
    }

    pub fn preferences(&self) -> Result<PreferenceDistribution, ServiceError> {
        Ok(analytics::bundled_cohort().preferences()?)
    }

    /// Completeness over the pilot cohort's calls.
    pub fn completeness(&self) -> Result<CompletenessReport, ServiceError> {
        Ok(self.extractor.completeness_report(&pilot_transcripts())?)
    }
}

pub fn pilot_transcripts() -> Vec<ConversationTranscript> {
    let cohort: FixtureCohort = analytics::bundled_cohort();
    cohort.transcripts(&analytics::bundled_pilot(), analytics::pilot_epoch())
}

/// Splits a plain-text utterance script: one utterance per line, blank
/// lines and `#` comments skipped.
pub fn parse_script(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

pub const GOLDEN_SCRIPT: &str = include_str!("../../fixtures/golden_call.script");
