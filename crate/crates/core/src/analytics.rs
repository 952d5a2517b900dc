//! Pilot cohort fixture: contact-modality preferences and per-category
//! answer completeness.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::detect_confusion;
use crate::domain::{
    load_instrument, CallWindow, CompletionStatus, ConversationTranscript, DomainError, Instrument,
    PatientProfile, Turn,
};

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("cohort weights must be positive")]
    NonPositiveWeight,
    #[error("cohort file: {0}")]
    Parse(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Preference {
    AI,
    Zoom,
    Both,
    NoPreference,
    Human,
    Neither,
}

impl Preference {
    pub const ALL: [Preference; 6] = [
        Preference::AI,
        Preference::Zoom,
        Preference::Both,
        Preference::NoPreference,
        Preference::Human,
        Preference::Neither,
    ];

    /// Labels that count as accepting the AI caller.
    pub fn accepts_ai(self) -> bool {
        matches!(self, Preference::AI | Preference::Both | Preference::NoPreference)
    }
}

impl fmt::Display for Preference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Preference {
    type Err = AnalyticsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preference::ALL
            .into_iter()
            .find(|p| p.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| AnalyticsError::Parse(format!("unknown preference `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDistribution {
    pub shares: BTreeMap<Preference, f64>,
    pub acceptance: f64,
}

/// Normalized weighted tally of preference labels.
pub fn preference_analytics(labels: &[(Preference, f64)]) -> Result<PreferenceDistribution, AnalyticsError> {
    if labels.is_empty() {
        return Err(AnalyticsError::EmptyCohort);
    }
    if labels.iter().any(|(_, w)| !(*w > 0.0)) {
        return Err(AnalyticsError::NonPositiveWeight);
    }
    let total: f64 = labels.iter().map(|(_, w)| w).sum();
    let mut shares: BTreeMap<Preference, f64> = Preference::ALL.into_iter().map(|p| (p, 0.0)).collect();
    for (p, w) in labels {
        *shares.get_mut(p).expect("all labels present") += w;
    }
    for v in shares.values_mut() {
        *v /= total;
    }
    let acceptance = shares.iter().filter(|(p, _)| p.accepts_ai()).map(|(_, v)| v).sum();
    Ok(PreferenceDistribution { shares, acceptance })
}

/// How one pilot question went for one patient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Answered,
    Unanswered,
    NotAsked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortMember {
    pub patient: PatientProfile,
    pub preference: Preference,
    pub weight: f64,
    /// Pilot item id to outcome.
    pub outcomes: BTreeMap<String, Outcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureCohort {
    pub members: Vec<CohortMember>,
}

pub const PILOT_DOCUMENT: &str = include_str!("../fixtures/pilot.instrument");
pub const PILOT_COHORT_CSV: &str = include_str!("../fixtures/pilot_cohort.csv");

pub fn bundled_pilot() -> Instrument {
    load_instrument(PILOT_DOCUMENT).expect("bundled pilot survey is valid")
}

pub fn bundled_cohort() -> FixtureCohort {
    FixtureCohort::from_csv(PILOT_COHORT_CSV).expect("bundled cohort is valid")
}

fn parse_weight(s: &str) -> Result<f64, AnalyticsError> {
    let bad = || AnalyticsError::Parse(format!("bad weight `{s}`"));
    match s.split_once('/') {
        Some((n, d)) => {
            let n: f64 = n.trim().parse().map_err(|_| bad())?;
            let d: f64 = d.trim().parse().map_err(|_| bad())?;
            Ok(n / d)
        }
        None => s.trim().parse().map_err(|_| bad()),
    }
}

const OUTCOME_COLUMNS: [&str; 6] = [
    "daily_impact",
    "symptoms",
    "daily_activities",
    "treatment_feedback",
    "environmental_triggers",
    "research_solutions",
];

impl FixtureCohort {
    /// Reads the cohort table. Lines starting with `#` are comments; weights
    /// may be written as fractions (`37/1200`).
    pub fn from_csv(text: &str) -> Result<Self, AnalyticsError> {
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let mut members = Vec::new();
        for row in reader.deserialize::<BTreeMap<String, String>>() {
            let row = row.map_err(|e| AnalyticsError::Parse(e.to_string()))?;
            let field = |k: &str| {
                row.get(k)
                    .map(String::as_str)
                    .ok_or_else(|| AnalyticsError::Parse(format!("missing column `{k}`")))
            };
            let mut patient = PatientProfile::new(
                field("patient_id")?,
                field("display_name")?,
                field("timezone")?,
                CallWindow::hours(9, 17)?,
            )?;
            patient.cohort_tags.insert("pilot".into());
            let mut outcomes = BTreeMap::new();
            for col in OUTCOME_COLUMNS {
                let o = match field(col)?.trim() {
                    "A" => Outcome::Answered,
                    "U" => Outcome::Unanswered,
                    "-" => Outcome::NotAsked,
                    other => return Err(AnalyticsError::Parse(format!("bad outcome `{other}` in `{col}`"))),
                };
                outcomes.insert(col.to_string(), o);
            }
            members.push(CohortMember {
                patient,
                preference: field("preference")?.parse()?,
                weight: parse_weight(field("weight")?)?,
                outcomes,
            });
        }
        Ok(Self { members })
    }

    pub fn preferences(&self) -> Result<PreferenceDistribution, AnalyticsError> {
        let labels: Vec<(Preference, f64)> = self.members.iter().map(|m| (m.preference, m.weight)).collect();
        preference_analytics(&labels)
    }

    /// One pilot-call transcript per member, asking the pilot items in
    /// instrument order. Answered items get a substantive reply, unanswered
    /// ones a filler that parses below the answer threshold.
    pub fn transcripts(&self, pilot: &Instrument, start: DateTime<Utc>) -> Vec<ConversationTranscript> {
        self.members
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let t0 = start + Duration::days(i as i64);
                let mut turns = Vec::new();
                let mut clock = t0;
                for item in &pilot.items {
                    let outcome = m.outcomes.get(&item.id).copied().unwrap_or(Outcome::NotAsked);
                    if outcome == Outcome::NotAsked {
                        continue;
                    }
                    let step = format!("{}.{}", pilot.id, item.id);
                    turns.push(Turn::agent(&item.prompt_template, Some(step.clone()), clock));
                    clock += Duration::seconds(20);
                    let reply = match outcome {
                        Outcome::Answered => "It has been a fairly ordinary week overall",
                        _ => "Hmm.",
                    };
                    let confidence = detect_confusion(reply, item).confidence;
                    turns.push(Turn::patient(reply, Some(step), confidence, clock));
                    clock += Duration::seconds(10);
                }
                ConversationTranscript {
                    session_id: format!("pilot-call-{:02}", i + 1),
                    patient_id: m.patient.id.clone(),
                    turns,
                    started_at: t0,
                    ended_at: clock,
                    completion_status: CompletionStatus::Completed,
                }
            })
            .collect()
    }
}

/// Fixed start date for generated pilot transcripts.
pub fn pilot_epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 9, 2, 14, 0, 0).unwrap()
}
