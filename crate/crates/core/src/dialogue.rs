//! Survey conversation state machine.
//!
//! A session walks the steps of a [`ConsolidatedFlow`] in order. Each patient
//! utterance is parsed against the current step; confident answers move the
//! flow on, unclear ones trigger a bounded number of clarifications.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    AnswerKind, CompletionStatus, ConsolidatedFlow, ConversationTranscript, PatientProfile,
    QuestionSpec, Speaker, Turn,
};
use crate::extraction;
use crate::lexicon::{self, Correction};

#[derive(Debug, Error, PartialEq)]
pub enum DialogueError {
    #[error("flow has no steps")]
    EmptyFlow,
    #[error("session `{0}` is closed")]
    Closed(String),
    #[error("invalid generator script line {line}: {message}")]
    Script { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DialogueConfig {
    /// Answers parsed below this confidence trigger a clarification.
    pub confidence_threshold: f64,
    /// Clarifications allowed per step before it is skipped.
    pub max_clarifications: u32,
    /// Consecutive empty utterances after which the call should be abandoned.
    pub silence_budget: u32,
}

impl Default for DialogueConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.6,
            max_clarifications: 2,
            silence_budget: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Intent {
    Ask,
    Clarify,
    Acknowledge,
    WrapUp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionStatus {
    Active,
    WrapUp,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AnswerValue {
    Rating(u32),
    Count(u32),
    Polar(bool),
    Free(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    pub raw_text: String,
    pub normalized: AnswerValue,
    pub confidence: f64,
    pub lexicon_corrections: Vec<(String, String)>,
}

/// Result of interpreting one utterance against one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Understanding {
    pub confidence: f64,
    pub corrections: Vec<Correction>,
    pub value: Option<AnswerValue>,
}

const FILLERS: &[&str] = &[
    "um", "uh", "umm", "uhh", "hmm", "mm", "er", "erm", "eh", "huh", "what", "sorry", "pardon",
];

/// Confidence that `utterance` answers `step`.
///
/// Starts at 1.0 when the text parses for the step's answer kind and 0.3
/// when it does not, then loses `0.1 * (1 + distance)` multiplicatively per
/// lexicon correction. Empty input scores 0.
pub fn detect_confusion(utterance: &str, step: &QuestionSpec) -> Understanding {
    let norm = lexicon::normalize(utterance);
    if norm.is_empty() {
        return Understanding {
            confidence: 0.0,
            corrections: Vec::new(),
            value: None,
        };
    }
    let value = match step.answer_kind {
        AnswerKind::NumericRating0to100 => lexicon::parse_rating(&norm.tokens).map(AnswerValue::Rating),
        AnswerKind::Count24h => lexicon::parse_count(&norm.tokens).map(AnswerValue::Count),
        AnswerKind::YesNo => lexicon::parse_polar(&norm.tokens).map(AnswerValue::Polar),
        AnswerKind::FreeText => norm
            .tokens
            .iter()
            .any(|t| !FILLERS.contains(&t.text.as_str()))
            .then(|| AnswerValue::Free(norm.text())),
    };
    let base = if value.is_some() { 1.0 } else { 0.3 };
    let confidence = norm
        .corrections
        .iter()
        .fold(base, |c, corr| c * (1.0 - 0.1 * (1.0 + corr.distance as f64)));
    Understanding {
        confidence: confidence.clamp(0.0, 1.0),
        corrections: norm.corrections,
        value,
    }
}

/// Produces agent text for an intent. Implementations must be deterministic
/// given identical session state.
pub trait ResponseGenerator: Send + Sync {
    fn generate(&self, session: &SessionState, intent: Intent, step: Option<&QuestionSpec>) -> String;
}

/// Reference generator driven by `Intent|template` records.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedGenerator {
    ask: Vec<String>,
    clarify: Vec<String>,
    acknowledge: Vec<String>,
    wrap_up: Vec<String>,
}

pub const DEFAULT_GENERATOR_SCRIPT: &str = include_str!("../fixtures/scripted_generator.script");

impl Default for ScriptedGenerator {
    fn default() -> Self {
        Self::parse(DEFAULT_GENERATOR_SCRIPT).expect("bundled generator script is valid")
    }
}

impl ScriptedGenerator {
    pub fn parse(script: &str) -> Result<Self, DialogueError> {
        let mut g = ScriptedGenerator {
            ask: Vec::new(),
            clarify: Vec::new(),
            acknowledge: Vec::new(),
            wrap_up: Vec::new(),
        };
        for (i, raw) in script.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: &str| DialogueError::Script {
                line: i + 1,
                message: message.to_string(),
            };
            let (intent, template) = line.split_once('|').ok_or_else(|| err("expected `Intent|template`"))?;
            let bucket = match intent.trim() {
                "Ask" => &mut g.ask,
                "Clarify" => &mut g.clarify,
                "Acknowledge" => &mut g.acknowledge,
                "WrapUp" => &mut g.wrap_up,
                other => return Err(err(&format!("unknown intent `{other}`"))),
            };
            bucket.push(template.trim().to_string());
        }
        for (name, bucket) in [
            ("Ask", &g.ask),
            ("Clarify", &g.clarify),
            ("Acknowledge", &g.acknowledge),
            ("WrapUp", &g.wrap_up),
        ] {
            if bucket.is_empty() {
                return Err(DialogueError::Script {
                    line: 0,
                    message: format!("no {name} record"),
                });
            }
        }
        Ok(g)
    }

    fn fill(&self, template: &str, session: &SessionState, step: Option<&QuestionSpec>, agent_turns: usize) -> String {
        let ack = &self.acknowledge[agent_turns % self.acknowledge.len()];
        template
            .replace("{name}", &session.patient_name)
            .replace("{prompt}", step.map(|s| s.prompt_template.as_str()).unwrap_or(""))
            .replace("{ack}", ack)
            .trim()
            .to_string()
    }
}

/// Picks `list[0]` for the first use and rotates over the rest afterwards.
fn first_then_rotate(list: &[String], uses: usize) -> &str {
    if uses == 0 || list.len() == 1 {
        &list[0]
    } else {
        &list[1 + (uses - 1) % (list.len() - 1)]
    }
}

impl ResponseGenerator for ScriptedGenerator {
    fn generate(&self, session: &SessionState, intent: Intent, step: Option<&QuestionSpec>) -> String {
        let agent_turns = session.turn_log.iter().filter(|t| t.speaker == Speaker::Agent).count();
        let template = match intent {
            Intent::Ask => first_then_rotate(&self.ask, agent_turns),
            Intent::Clarify => &self.clarify[agent_turns % self.clarify.len()],
            Intent::Acknowledge => &self.acknowledge[agent_turns % self.acknowledge.len()],
            Intent::WrapUp => {
                let wrap_turns = session
                    .turn_log
                    .iter()
                    .filter(|t| t.speaker == Speaker::Agent && t.step_id.is_none())
                    .count();
                first_then_rotate(&self.wrap_up, wrap_turns)
            }
        };
        self.fill(template, session, step, agent_turns)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub patient_id: String,
    pub patient_name: String,
    pub flow: ConsolidatedFlow,
    pub config: DialogueConfig,
    pub asked: BTreeSet<String>,
    pub answered: BTreeMap<String, ParsedAnswer>,
    /// Steps covered by an answer to a different question, never asked.
    pub volunteered: BTreeSet<String>,
    /// Steps abandoned after exhausting clarifications.
    pub skipped: BTreeSet<String>,
    pub pending_clarification: Option<String>,
    pub clarifications: BTreeMap<String, u32>,
    pub current_step: Option<String>,
    pub turn_log: Vec<Turn>,
    pub status: SessionStatus,
    pub started_at: DateTime<Utc>,
    pub silent_streak: u32,
    /// Set once the silence budget is exhausted; the caller should close
    /// the session as Abandoned.
    pub abandon_requested: bool,
}

impl SessionState {
    pub fn current(&self) -> Option<&QuestionSpec> {
        self.current_step.as_deref().and_then(|id| self.flow.step(id))
    }

    /// True once every required step is answered or skipped.
    pub fn required_covered(&self) -> bool {
        self.flow
            .steps
            .iter()
            .filter(|s| s.required)
            .all(|s| self.answered.contains_key(&s.id) || self.skipped.contains(&s.id))
    }

    pub fn agent_turns(&self) -> usize {
        self.turn_log.iter().filter(|t| t.speaker == Speaker::Agent).count()
    }

    fn next_step(&self) -> Option<&QuestionSpec> {
        self.flow.steps.iter().find(|s| {
            !self.answered.contains_key(&s.id) && !self.skipped.contains(&s.id) && !self.asked.contains(&s.id)
        })
    }

    fn push_agent(&mut self, generator: &dyn ResponseGenerator, intent: Intent, at: DateTime<Utc>) -> Turn {
        let step = match intent {
            Intent::WrapUp => None,
            _ => self.current().cloned(),
        };
        let text = generator.generate(self, intent, step.as_ref());
        let turn = Turn::agent(text, step.map(|s| s.id), at);
        self.turn_log.push(turn.clone());
        turn
    }

    /// Asks the next uncovered step, or wraps up when none is left.
    fn ask_next(&mut self, generator: &dyn ResponseGenerator, at: DateTime<Utc>) -> Turn {
        self.pending_clarification = None;
        match self.next_step().map(|s| s.id.clone()) {
            Some(id) => {
                self.asked.insert(id.clone());
                self.current_step = Some(id);
                self.push_agent(generator, Intent::Ask, at)
            }
            None => {
                self.current_step = None;
                self.status = SessionStatus::WrapUp;
                self.push_agent(generator, Intent::WrapUp, at)
            }
        }
    }
}

/// Opens a session on the flow's overall-health rating step, or its first
/// step when it has none.
pub fn start_session(
    session_id: impl Into<String>,
    patient: &PatientProfile,
    flow: &ConsolidatedFlow,
    generator: &dyn ResponseGenerator,
    config: DialogueConfig,
    at: DateTime<Utc>,
) -> Result<(SessionState, Turn), DialogueError> {
    let first = flow
        .steps
        .iter()
        .find(|s| s.answer_kind == AnswerKind::NumericRating0to100)
        .or_else(|| flow.steps.first())
        .ok_or(DialogueError::EmptyFlow)?
        .id
        .clone();
    let mut session = SessionState {
        session_id: session_id.into(),
        patient_id: patient.id.clone(),
        patient_name: patient.display_name.clone(),
        flow: flow.clone(),
        config,
        asked: BTreeSet::from([first.clone()]),
        answered: BTreeMap::new(),
        volunteered: BTreeSet::new(),
        skipped: BTreeSet::new(),
        pending_clarification: None,
        clarifications: BTreeMap::new(),
        current_step: Some(first),
        turn_log: Vec::new(),
        status: SessionStatus::Active,
        started_at: at,
        silent_streak: 0,
        abandon_requested: false,
    };
    let turn = session.push_agent(generator, Intent::Ask, at);
    Ok((session, turn))
}

/// Records one patient utterance and returns the agent's reply.
pub fn advance(
    session: &mut SessionState,
    utterance: &str,
    generator: &dyn ResponseGenerator,
    at: DateTime<Utc>,
) -> Result<Turn, DialogueError> {
    if session.status == SessionStatus::Closed {
        return Err(DialogueError::Closed(session.session_id.clone()));
    }
    if utterance.trim().is_empty() {
        session.silent_streak += 1;
        if session.silent_streak >= session.config.silence_budget {
            session.abandon_requested = true;
        }
    } else {
        session.silent_streak = 0;
    }

    if session.status == SessionStatus::WrapUp {
        let free = QuestionSpec {
            id: String::new(),
            category: crate::domain::Category::Wrapup,
            prompt_template: String::new(),
            answer_kind: AnswerKind::FreeText,
            required: false,
            dimension: String::new(),
        };
        let u = detect_confusion(utterance, &free);
        session.turn_log.push(Turn::patient(utterance, None, u.confidence, at));
        return Ok(session.push_agent(generator, Intent::WrapUp, at));
    }

    let step = session.current().cloned().expect("active session has a current step");
    let u = detect_confusion(utterance, &step);
    session
        .turn_log
        .push(Turn::patient(utterance, Some(step.id.clone()), u.confidence, at));

    if u.confidence >= session.config.confidence_threshold {
        let corrections: Vec<(String, String)> =
            u.corrections.iter().map(|c| (c.heard.clone(), c.corrected.clone())).collect();
        let value = u.value.clone().unwrap_or_else(|| AnswerValue::Free(utterance.trim().to_string()));
        session.answered.insert(
            step.id.clone(),
            ParsedAnswer {
                raw_text: utterance.to_string(),
                normalized: value,
                confidence: u.confidence,
                lexicon_corrections: corrections.clone(),
            },
        );
        let norm = lexicon::normalize(utterance);
        let extra: Vec<String> = session
            .flow
            .steps
            .iter()
            .filter(|s| {
                s.id != step.id
                    && !session.asked.contains(&s.id)
                    && !session.answered.contains_key(&s.id)
                    && extraction::volunteers(s.category, &norm)
            })
            .map(|s| s.id.clone())
            .collect();
        for id in extra {
            session.volunteered.insert(id.clone());
            session.answered.insert(
                id,
                ParsedAnswer {
                    raw_text: utterance.to_string(),
                    normalized: AnswerValue::Free(norm.text()),
                    confidence: u.confidence,
                    lexicon_corrections: corrections.clone(),
                },
            );
        }
        return Ok(session.ask_next(generator, at));
    }

    let used = session.clarifications.entry(step.id.clone()).or_insert(0);
    if *used < session.config.max_clarifications {
        *used += 1;
        session.pending_clarification = Some(step.id.clone());
        Ok(session.push_agent(generator, Intent::Clarify, at))
    } else {
        session.skipped.insert(step.id);
        Ok(session.ask_next(generator, at))
    }
}

/// Seals the session into a transcript.
pub fn close_session(
    session: &mut SessionState,
    reason: CompletionStatus,
    at: DateTime<Utc>,
) -> Result<ConversationTranscript, DialogueError> {
    if session.status == SessionStatus::Closed {
        return Err(DialogueError::Closed(session.session_id.clone()));
    }
    session.status = SessionStatus::Closed;
    session.pending_clarification = None;
    Ok(ConversationTranscript {
        session_id: session.session_id.clone(),
        patient_id: session.patient_id.clone(),
        turns: session.turn_log.clone(),
        started_at: session.started_at,
        ended_at: at.max(session.started_at),
        completion_status: reason,
    })
}
