//! Append-only event log and the state derived from it.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cache::{CacheBudget, SegmentKind, SessionCacheState};
use crate::domain::{CompletionStatus, ConversationTranscript, PatientProfile, Turn};
use crate::extraction::{Alert, AssessmentResult};
use crate::scheduler::CallPlan;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("event log io: {0}")]
    Io(#[from] std::io::Error),
    #[error("event log line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("event sequence not increasing at seq {0}")]
    OutOfOrder(u64),
    #[error("injected storage failure at append {0}")]
    Injected(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    PatientUpserted,
    CallPlanned,
    CallStarted,
    TurnRecorded,
    SessionClosed,
    AssessmentStored,
    AlertRaised,
    AlertAcknowledged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventPayload {
    PatientUpserted(PatientProfile),
    CallPlanned(CallPlan),
    CallStarted {
        session_id: String,
        patient_id: String,
        flow_id: String,
        system_prompt_tokens: u64,
    },
    TurnRecorded {
        session_id: String,
        turn: Turn,
    },
    SessionClosed {
        session_id: String,
        status: CompletionStatus,
    },
    AssessmentStored(AssessmentResult),
    AlertRaised(Alert),
    AlertAcknowledged {
        alert_id: u64,
    },
}

impl EventPayload {
    pub fn kind(&self) -> EventKind {
        match self {
            EventPayload::PatientUpserted(_) => EventKind::PatientUpserted,
            EventPayload::CallPlanned(_) => EventKind::CallPlanned,
            EventPayload::CallStarted { .. } => EventKind::CallStarted,
            EventPayload::TurnRecorded { .. } => EventKind::TurnRecorded,
            EventPayload::SessionClosed { .. } => EventKind::SessionClosed,
            EventPayload::AssessmentStored(_) => EventKind::AssessmentStored,
            EventPayload::AlertRaised(_) => EventKind::AlertRaised,
            EventPayload::AlertAcknowledged { .. } => EventKind::AlertAcknowledged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub payload: EventPayload,
}

/// Durable home of the event log.
pub trait EventBackend: Send + Sync {
    fn append(&mut self, record: &EventRecord) -> Result<(), StoreError>;
    fn load(&self) -> Result<Vec<EventRecord>, StoreError>;
}

#[derive(Debug, Default, Clone)]
pub struct MemoryBackend {
    records: Vec<EventRecord>,
}

impl MemoryBackend {
    pub fn new() -> Self {
        Self::default()
    }
}

impl EventBackend for MemoryBackend {
    fn append(&mut self, record: &EventRecord) -> Result<(), StoreError> {
        self.records.push(record.clone());
        Ok(())
    }

    fn load(&self) -> Result<Vec<EventRecord>, StoreError> {
        Ok(self.records.clone())
    }
}

/// One JSON record per line in `events.jsonl`.
#[derive(Debug)]
pub struct FileBackend {
    path: PathBuf,
}

impl FileBackend {
    pub const FILE_NAME: &'static str = "events.jsonl";

    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(Self::FILE_NAME);
        if !path.exists() {
            File::create(&path)?;
        }
        Ok(Self { path })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl EventBackend for FileBackend {
    fn append(&mut self, record: &EventRecord) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(record).expect("event serializes");
        line.push('\n');
        let mut f = OpenOptions::new().append(true).open(&self.path)?;
        f.write_all(line.as_bytes())?;
        f.flush()?;
        Ok(())
    }

    fn load(&self) -> Result<Vec<EventRecord>, StoreError> {
        let reader = BufReader::new(File::open(&self.path)?);
        let mut out = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
                line: i + 1,
                message: e.to_string(),
            })?;
            out.push(rec);
        }
        Ok(out)
    }
}

/// Memory backend that fails the appends whose (0-based) ordinals are listed.
/// Used to exercise mid-call storage failures.
#[derive(Debug, Default)]
pub struct FaultyBackend {
    inner: MemoryBackend,
    fail_on: BTreeSet<usize>,
    attempts: usize,
}

impl FaultyBackend {
    pub fn new(fail_on: impl IntoIterator<Item = usize>) -> Self {
        Self {
            inner: MemoryBackend::new(),
            fail_on: fail_on.into_iter().collect(),
            attempts: 0,
        }
    }
}

impl EventBackend for FaultyBackend {
    fn append(&mut self, record: &EventRecord) -> Result<(), StoreError> {
        let n = self.attempts;
        self.attempts += 1;
        if self.fail_on.contains(&n) {
            return Err(StoreError::Injected(n));
        }
        self.inner.append(record)
    }

    fn load(&self) -> Result<Vec<EventRecord>, StoreError> {
        self.inner.load()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub patient_id: String,
    pub flow_id: String,
    pub started_at: DateTime<Utc>,
    pub ended_at: Option<DateTime<Utc>>,
    pub status: Option<CompletionStatus>,
    pub turns: Vec<Turn>,
}

impl SessionRecord {
    pub fn transcript(&self) -> ConversationTranscript {
        ConversationTranscript {
            session_id: self.session_id.clone(),
            patient_id: self.patient_id.clone(),
            turns: self.turns.clone(),
            started_at: self.started_at,
            ended_at: self.ended_at.unwrap_or_else(|| self.turns.last().map(|t| t.timestamp).unwrap_or(self.started_at)),
            completion_status: self.status.unwrap_or(CompletionStatus::Abandoned),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertEntry {
    /// Sequence number of the raising event.
    pub id: u64,
    pub alert: Alert,
    pub acknowledged: bool,
}

/// Everything the service knows, rebuilt solely by applying events.
#[derive(Debug, Clone)]
pub struct State {
    pub patients: BTreeMap<String, PatientProfile>,
    pub sessions: BTreeMap<String, SessionRecord>,
    pub assessments: BTreeMap<String, AssessmentResult>,
    pub alerts: Vec<AlertEntry>,
    pub plans: Vec<(u64, CallPlan)>,
    pub cache: CacheBudget,
    pub last_seq: Option<u64>,
}

/// Whitespace-separated words as a stand-in token count.
pub fn token_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

impl State {
    pub fn new(cache_budget_tokens: u64) -> Self {
        Self {
            patients: BTreeMap::new(),
            sessions: BTreeMap::new(),
            assessments: BTreeMap::new(),
            alerts: Vec::new(),
            plans: Vec::new(),
            cache: CacheBudget::new(cache_budget_tokens),
            last_seq: None,
        }
    }

    pub fn apply(&mut self, rec: &EventRecord) {
        self.last_seq = Some(rec.seq);
        match &rec.payload {
            EventPayload::PatientUpserted(p) => {
                self.patients.insert(p.id.clone(), p.clone());
            }
            EventPayload::CallPlanned(plan) => self.plans.push((rec.seq, plan.clone())),
            EventPayload::CallStarted {
                session_id,
                patient_id,
                flow_id,
                system_prompt_tokens,
            } => {
                self.sessions.insert(
                    session_id.clone(),
                    SessionRecord {
                        session_id: session_id.clone(),
                        patient_id: patient_id.clone(),
                        flow_id: flow_id.clone(),
                        started_at: rec.at,
                        ended_at: None,
                        status: None,
                        turns: Vec::new(),
                    },
                );
                let tokens = (*system_prompt_tokens).max(1);
                self.cache.touch(session_id, |c| {
                    // A replayed log may start a session id again only after eviction.
                    if !c.is_primed() {
                        let _ = c.prime(tokens, SegmentKind::SystemPrompt);
                    }
                });
            }
            EventPayload::TurnRecorded { session_id, turn } => {
                if let Some(s) = self.sessions.get_mut(session_id) {
                    s.turns.push(turn.clone());
                }
                if self.cache.get(session_id).is_some() {
                    let n = token_count(&turn.text);
                    self.cache.touch(session_id, |c| {
                        let _ = c.extend(n);
                    });
                }
            }
            EventPayload::SessionClosed { session_id, status } => {
                if let Some(s) = self.sessions.get_mut(session_id) {
                    s.status = Some(*status);
                    s.ended_at = Some(rec.at);
                }
            }
            EventPayload::AssessmentStored(a) => {
                self.assessments.insert(a.session_id.clone(), a.clone());
            }
            EventPayload::AlertRaised(a) => self.alerts.push(AlertEntry {
                id: rec.seq,
                alert: a.clone(),
                acknowledged: false,
            }),
            EventPayload::AlertAcknowledged { alert_id } => {
                if let Some(e) = self.alerts.iter_mut().find(|e| e.id == *alert_id) {
                    e.acknowledged = true;
                }
            }
        }
    }

    /// Cache ledgers sorted by session id.
    pub fn cache_ledgers(&self) -> Vec<&SessionCacheState> {
        let mut out: Vec<&SessionCacheState> = self
            .sessions
            .keys()
            .filter_map(|id| self.cache.get(id))
            .collect();
        out.sort_by(|a, b| a.session_id.cmp(&b.session_id));
        out
    }

    /// Canonical serialization used for replay comparison.
    pub fn snapshot_json(&self) -> String {
        #[derive(Serialize)]
        struct Snapshot<'a> {
            patients: &'a BTreeMap<String, PatientProfile>,
            sessions: &'a BTreeMap<String, SessionRecord>,
            assessments: &'a BTreeMap<String, AssessmentResult>,
            alerts: &'a [AlertEntry],
            plans: &'a [(u64, CallPlan)],
            cache: Vec<&'a SessionCacheState>,
            last_seq: Option<u64>,
        }
        serde_json::to_string(&Snapshot {
            patients: &self.patients,
            sessions: &self.sessions,
            assessments: &self.assessments,
            alerts: &self.alerts,
            plans: &self.plans,
            cache: self.cache_ledgers(),
            last_seq: self.last_seq,
        })
        .expect("state serializes")
    }

    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.snapshot_json().as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Single-writer event store with its derived state.
pub struct Store {
    backend: Box<dyn EventBackend>,
    state: State,
    cache_budget_tokens: u64,
}

impl Store {
    /// Opens the backend and replays whatever it already holds.
    pub fn open(backend: Box<dyn EventBackend>, cache_budget_tokens: u64) -> Result<Self, StoreError> {
        let events = backend.load()?;
        let state = replay(&events, cache_budget_tokens)?;
        Ok(Self {
            backend,
            state,
            cache_budget_tokens,
        })
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn cache_budget_tokens(&self) -> u64 {
        self.cache_budget_tokens
    }

    /// Persists one event, then applies it. A failed write leaves the state
    /// untouched.
    pub fn append(&mut self, payload: EventPayload, at: DateTime<Utc>) -> Result<u64, StoreError> {
        let seq = self.state.last_seq.map_or(1, |s| s + 1);
        let rec = EventRecord { seq, at, payload };
        self.backend.append(&rec)?;
        self.state.apply(&rec);
        Ok(seq)
    }

    pub fn events(&self) -> Result<Vec<EventRecord>, StoreError> {
        self.backend.load()
    }
}

/// Rebuilds state from a log, rejecting non-increasing sequence numbers.
pub fn replay(events: &[EventRecord], cache_budget_tokens: u64) -> Result<State, StoreError> {
    let mut state = State::new(cache_budget_tokens);
    for rec in events {
        if state.last_seq.is_some_and(|s| rec.seq <= s) {
            return Err(StoreError::OutOfOrder(rec.seq));
        }
        state.apply(rec);
    }
    Ok(state)
}
