//! Instruments, questions, patients and transcripts shared by every stage of
//! the pipeline.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveTime, Utc};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("parse error at line {line}, column {column}{}: {message}", field.as_ref().map(|f| format!(" (field `{f}`)")).unwrap_or_default())]
    Parse {
        line: usize,
        column: usize,
        field: Option<String>,
        message: String,
    },
    #[error("instrument `{0}` must contain at least one item")]
    NoItems(String),
    #[error("duplicate item id `{item}` in instrument `{instrument}`")]
    DuplicateItem { instrument: String, item: String },
    #[error("item `{0}` has an empty score dimension")]
    MissingDimension(String),
    #[error("duplicate instrument id `{0}`")]
    DuplicateInstrument(String),
    #[error("no instruments to consolidate")]
    NoInstruments,
    #[error("unknown timezone `{0}`")]
    UnknownTimezone(String),
    #[error("call window start {start} must be before end {end}")]
    InvalidWindow { start: NaiveTime, end: NaiveTime },
    #[error("invalid transcript: {0}")]
    InvalidTranscript(String),
}

/// Question area. The declaration order is the canonical survey order:
/// symptom and daily-life areas come first, research and feedback last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    DailyLifeImpact,
    Symptoms,
    ExtraIntestinal,
    DailyActivities,
    Mobility,
    SelfCare,
    Emotional,
    TreatmentFeedback,
    EnvironmentalTriggers,
    CareBarriers,
    ResearchSolutions,
    Wrapup,
}

impl Category {
    pub const ALL: [Category; 12] = [
        Category::DailyLifeImpact,
        Category::Symptoms,
        Category::ExtraIntestinal,
        Category::DailyActivities,
        Category::Mobility,
        Category::SelfCare,
        Category::Emotional,
        Category::TreatmentFeedback,
        Category::EnvironmentalTriggers,
        Category::CareBarriers,
        Category::ResearchSolutions,
        Category::Wrapup,
    ];

    pub fn priority(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::DailyLifeImpact => "DailyLifeImpact",
            Category::Symptoms => "Symptoms",
            Category::ExtraIntestinal => "ExtraIntestinal",
            Category::DailyActivities => "DailyActivities",
            Category::Mobility => "Mobility",
            Category::SelfCare => "SelfCare",
            Category::Emotional => "Emotional",
            Category::TreatmentFeedback => "TreatmentFeedback",
            Category::EnvironmentalTriggers => "EnvironmentalTriggers",
            Category::CareBarriers => "CareBarriers",
            Category::ResearchSolutions => "ResearchSolutions",
            Category::Wrapup => "Wrapup",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnswerKind {
    NumericRating0to100,
    Count24h,
    FreeText,
    YesNo,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSpec {
    pub id: String,
    pub category: Category,
    pub prompt_template: String,
    pub answer_kind: AnswerKind,
    #[serde(default = "default_required")]
    pub required: bool,
    /// Score dimension the answer feeds. Consolidated steps join the
    /// dimensions of the items they cover with `+`.
    pub dimension: String,
}

fn default_required() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instrument {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub scale_docs: String,
    pub items: Vec<QuestionSpec>,
}

impl Instrument {
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.items.is_empty() {
            return Err(DomainError::NoItems(self.id.clone()));
        }
        let mut seen = HashSet::new();
        for item in &self.items {
            if !seen.insert(item.id.as_str()) {
                return Err(DomainError::DuplicateItem {
                    instrument: self.id.clone(),
                    item: item.id.clone(),
                });
            }
            if item.dimension.trim().is_empty() {
                return Err(DomainError::MissingDimension(item.id.clone()));
            }
        }
        Ok(())
    }

    /// Distinct score dimensions in item order.
    pub fn dimensions(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for item in &self.items {
            if !out.contains(&item.dimension.as_str()) {
                out.push(&item.dimension);
            }
        }
        out
    }

    pub fn item(&self, id: &str) -> Option<&QuestionSpec> {
        self.items.iter().find(|i| i.id == id)
    }

    /// Renders the instrument definition file format.
    pub fn to_document(&self) -> String {
        toml::to_string_pretty(self).expect("instrument serializes to TOML")
    }
}

fn line_col(doc: &str, offset: usize) -> (usize, usize) {
    let prefix = &doc[..offset.min(doc.len())];
    let line = prefix.matches('\n').count() + 1;
    let column = prefix.len() - prefix.rfind('\n').map(|p| p + 1).unwrap_or(0) + 1;
    (line, column)
}

/// Parses an instrument definition document and checks its invariants.
pub fn load_instrument(document: &str) -> Result<Instrument, DomainError> {
    let instrument: Instrument = toml::from_str(document).map_err(|e| {
        let (line, column) = e.span().map(|s| line_col(document, s.start)).unwrap_or((0, 0));
        let message = e.message().to_string();
        let field = message
            .split('`')
            .nth(1)
            .filter(|_| message.contains("field"))
            .map(str::to_string);
        DomainError::Parse {
            line,
            column,
            field,
            message,
        }
    })?;
    instrument.validate()?;
    Ok(instrument)
}

/// A (instrument id, item id) pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ItemRef {
    pub instrument: String,
    pub item: String,
}

impl ItemRef {
    pub fn new(instrument: impl Into<String>, item: impl Into<String>) -> Self {
        Self {
            instrument: instrument.into(),
            item: item.into(),
        }
    }

    pub fn qualified(&self) -> String {
        format!("{}.{}", self.instrument, self.item)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsolidatedFlow {
    pub source_instruments: Vec<String>,
    pub steps: Vec<QuestionSpec>,
    pub coverage_map: BTreeMap<String, BTreeSet<ItemRef>>,
}

impl ConsolidatedFlow {
    pub fn step(&self, id: &str) -> Option<&QuestionSpec> {
        self.steps.iter().find(|s| s.id == id)
    }

    pub fn step_index(&self, id: &str) -> Option<usize> {
        self.steps.iter().position(|s| s.id == id)
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }
}

/// Merges instruments into one survey flow.
///
/// Items are grouped by category and the groups are emitted in canonical
/// category order. Within a category the k-th item of each instrument joins
/// the k-th step, so overlapping areas from different instruments collapse
/// into one question while items of a single instrument stay separate.
pub fn consolidate(instruments: &[Instrument]) -> Result<ConsolidatedFlow, DomainError> {
    if instruments.is_empty() {
        return Err(DomainError::NoInstruments);
    }
    let mut ids = HashSet::new();
    for inst in instruments {
        inst.validate()?;
        if !ids.insert(inst.id.as_str()) {
            return Err(DomainError::DuplicateInstrument(inst.id.clone()));
        }
    }

    let mut steps = Vec::new();
    let mut coverage_map = BTreeMap::new();
    for category in Category::ALL {
        let per_instrument: Vec<(&Instrument, Vec<&QuestionSpec>)> = instruments
            .iter()
            .map(|inst| {
                let items = inst.items.iter().filter(|i| i.category == category).collect();
                (inst, items)
            })
            .collect();
        let depth = per_instrument.iter().map(|(_, items)| items.len()).max().unwrap_or(0);
        for k in 0..depth {
            let members: Vec<(&Instrument, &QuestionSpec)> = per_instrument
                .iter()
                .filter_map(|(inst, items)| items.get(k).map(|q| (*inst, *q)))
                .collect();
            let refs: Vec<ItemRef> = members
                .iter()
                .map(|(inst, q)| ItemRef::new(&inst.id, &q.id))
                .collect();
            let id = refs.iter().map(ItemRef::qualified).collect::<Vec<_>>().join("+");
            let (_, lead) = members[0];
            let step = QuestionSpec {
                id: id.clone(),
                category,
                prompt_template: lead.prompt_template.clone(),
                answer_kind: lead.answer_kind,
                required: members.iter().any(|(_, q)| q.required),
                dimension: members
                    .iter()
                    .map(|(_, q)| q.dimension.as_str())
                    .collect::<Vec<_>>()
                    .join("+"),
            };
            coverage_map.insert(id, refs.into_iter().collect());
            steps.push(step);
        }
    }

    Ok(ConsolidatedFlow {
        source_instruments: instruments.iter().map(|i| i.id.clone()).collect(),
        steps,
        coverage_map,
    })
}

/// Local-time interval during which a patient may be called.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallWindow {
    pub start: NaiveTime,
    pub end: NaiveTime,
}

impl CallWindow {
    pub fn new(start: NaiveTime, end: NaiveTime) -> Result<Self, DomainError> {
        if start >= end {
            return Err(DomainError::InvalidWindow { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn hours(start: u32, end: u32) -> Result<Self, DomainError> {
        let t = |h: u32| {
            if h == 24 {
                NaiveTime::from_hms_opt(23, 59, 59)
            } else {
                NaiveTime::from_hms_opt(h, 0, 0)
            }
        };
        let (Some(s), Some(e)) = (t(start), t(end)) else {
            return Err(DomainError::InvalidWindow {
                start: NaiveTime::MIN,
                end: NaiveTime::MIN,
            });
        };
        Self::new(s, e)
    }

    pub fn contains(&self, t: NaiveTime) -> bool {
        self.start <= t && t < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientProfile {
    pub id: String,
    pub display_name: String,
    /// IANA zone name.
    pub timezone: String,
    /// BCP-47 language tag.
    pub language: String,
    pub allowed_call_window: CallWindow,
    #[serde(default)]
    pub cohort_tags: BTreeSet<String>,
}

impl PatientProfile {
    pub fn new(
        id: impl Into<String>,
        display_name: impl Into<String>,
        timezone: impl Into<String>,
        window: CallWindow,
    ) -> Result<Self, DomainError> {
        let p = Self {
            id: id.into(),
            display_name: display_name.into(),
            timezone: timezone.into(),
            language: "en-US".to_string(),
            allowed_call_window: window,
            cohort_tags: BTreeSet::new(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn tz(&self) -> Result<Tz, DomainError> {
        Tz::from_str(&self.timezone).map_err(|_| DomainError::UnknownTimezone(self.timezone.clone()))
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        self.tz()?;
        let w = self.allowed_call_window;
        if w.start >= w.end {
            return Err(DomainError::InvalidWindow {
                start: w.start,
                end: w.end,
            });
        }
        Ok(())
    }

    /// Renders a UTC instant in the patient's local time.
    pub fn local_time(&self, at: DateTime<Utc>) -> Result<DateTime<Tz>, DomainError> {
        Ok(at.with_timezone(&self.tz()?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speaker {
    Agent,
    Patient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    /// Step asked (agent) or answered (patient). Absent on wrap-up turns.
    pub step_id: Option<String>,
    /// Only set on patient turns.
    pub parse_confidence: Option<f64>,
    pub timestamp: DateTime<Utc>,
}

impl Turn {
    pub fn agent(text: impl Into<String>, step_id: Option<String>, timestamp: DateTime<Utc>) -> Self {
        Self {
            speaker: Speaker::Agent,
            text: text.into(),
            step_id,
            parse_confidence: None,
            timestamp,
        }
    }

    pub fn patient(
        text: impl Into<String>,
        step_id: Option<String>,
        confidence: f64,
        timestamp: DateTime<Utc>,
    ) -> Self {
        Self {
            speaker: Speaker::Patient,
            text: text.into(),
            step_id,
            parse_confidence: Some(confidence),
            timestamp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CompletionStatus {
    Completed,
    Abandoned,
    Escalated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationTranscript {
    pub session_id: String,
    pub patient_id: String,
    pub turns: Vec<Turn>,
    pub started_at: DateTime<Utc>,
    pub ended_at: DateTime<Utc>,
    pub completion_status: CompletionStatus,
}

impl ConversationTranscript {
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.ended_at < self.started_at {
            return Err(DomainError::InvalidTranscript("ended_at precedes started_at".into()));
        }
        for (i, turn) in self.turns.iter().enumerate() {
            let expected = if i % 2 == 0 { Speaker::Agent } else { Speaker::Patient };
            if turn.speaker != expected {
                return Err(DomainError::InvalidTranscript(format!(
                    "turn {i} is {:?}, expected {:?}",
                    turn.speaker, expected
                )));
            }
            match turn.speaker {
                Speaker::Agent if turn.parse_confidence.is_some() => {
                    return Err(DomainError::InvalidTranscript(format!(
                        "agent turn {i} carries a parse confidence"
                    )));
                }
                Speaker::Patient => match turn.parse_confidence {
                    Some(c) if (0.0..=1.0).contains(&c) => {}
                    _ => {
                        return Err(DomainError::InvalidTranscript(format!(
                            "patient turn {i} has no confidence in [0,1]"
                        )))
                    }
                },
                _ => {}
            }
        }
        Ok(())
    }

    pub fn patient_turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(|t| t.speaker == Speaker::Patient)
    }
}

pub const MHBI_DOCUMENT: &str = include_str!("../fixtures/mhbi.instrument");
pub const EQ5D3L_DOCUMENT: &str = include_str!("../fixtures/eq5d3l.instrument");

pub fn bundled_mhbi() -> Instrument {
    load_instrument(MHBI_DOCUMENT).expect("bundled MHBI definition is valid")
}

pub fn bundled_eq5d3l() -> Instrument {
    load_instrument(EQ5D3L_DOCUMENT).expect("bundled EQ-5D-3L definition is valid")
}

/// The combined MHBI + EQ-5D-3L flow used for routine check-ins.
pub fn bundled_pulse_flow() -> ConsolidatedFlow {
    consolidate(&[bundled_mhbi(), bundled_eq5d3l()]).expect("bundled instruments consolidate")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, category: Category) -> QuestionSpec {
        QuestionSpec {
            id: id.into(),
            category,
            prompt_template: format!("Tell me about {id}"),
            answer_kind: AnswerKind::FreeText,
            required: true,
            dimension: id.to_uppercase(),
        }
    }

    fn instrument(id: &str, items: Vec<QuestionSpec>) -> Instrument {
        Instrument {
            id: id.into(),
            name: id.into(),
            scale_docs: String::new(),
            items,
        }
    }

    #[test]
    fn bundled_mhbi_has_four_dimensions() {
        let mhbi = bundled_mhbi();
        assert_eq!(
            mhbi.dimensions(),
            vec!["GeneralWellbeing", "AbdominalPain", "LiquidStools", "AdditionalManifestations"]
        );
    }

    #[test]
    fn bundled_eq5d_has_five_dimensions_and_scale() {
        let eq = bundled_eq5d3l();
        assert_eq!(eq.items.len(), 6);
        assert!(eq.dimensions().contains(&"HealthScale"));
    }

    #[test]
    fn empty_items_rejected() {
        let doc = "id = \"x\"\nname = \"X\"\nitems = []\n";
        let err = load_instrument(doc).unwrap_err();
        assert!(err.to_string().contains("at least one item"), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let doc = r#"
id = "x"
name = "X"

[[items]]
id = "q1"
category = "Symptoms"
prompt_template = "a"
answer_kind = "FreeText"
dimension = "A"

[[items]]
id = "q1"
category = "Emotional"
prompt_template = "b"
answer_kind = "FreeText"
dimension = "B"
"#;
        assert_eq!(
            load_instrument(doc).unwrap_err(),
            DomainError::DuplicateItem {
                instrument: "x".into(),
                item: "q1".into()
            }
        );
    }

    #[test]
    fn parse_error_reports_location() {
        let doc = "id = \"x\"\nname = \"X\"\n\n[[items]]\nid = \"q1\"\ncategory = \"Nope\"\n";
        match load_instrument(doc).unwrap_err() {
            DomainError::Parse { line, .. } => assert_eq!(line, 6),
            other => panic!("unexpected {other:?}"),
        }
        let missing = "id = \"x\"\n[[items]]\nid = \"q\"\n";
        let err = load_instrument(missing).unwrap_err();
        assert!(matches!(err, DomainError::Parse { .. }), "{err}");
    }

    #[test]
    fn pulse_flow_merges_pain_and_wellbeing() {
        let flow = bundled_pulse_flow();
        assert!(flow.len() < 4 + 6);
        let pain = flow
            .coverage_map
            .values()
            .find(|items| items.contains(&ItemRef::new("mhbi", "abdominal_pain")))
            .unwrap();
        assert!(pain.contains(&ItemRef::new("eq5d3l", "pain_discomfort")));
        assert_eq!(flow.steps[0].answer_kind, AnswerKind::NumericRating0to100);
    }

    #[test]
    fn single_instrument_is_identity() {
        let mhbi = bundled_mhbi();
        let flow = consolidate(std::slice::from_ref(&mhbi)).unwrap();
        assert_eq!(flow.len(), mhbi.items.len());
        for (step, item) in flow.steps.iter().zip(&mhbi.items) {
            assert_eq!(step.id, format!("mhbi.{}", item.id));
            assert_eq!(
                QuestionSpec {
                    id: item.id.clone(),
                    ..step.clone()
                },
                *item
            );
        }
    }

    #[test]
    fn disjoint_categories_concatenate() {
        let a = instrument("a", vec![item("s", Category::Symptoms), item("m", Category::Mobility)]);
        let b = instrument("b", vec![item("r", Category::ResearchSolutions)]);
        let flow = consolidate(&[a, b]).unwrap();
        assert_eq!(flow.len(), 3);
        assert_eq!(flow.steps[2].id, "b.r");
    }

    #[test]
    fn fatigue_aware_order() {
        let a = instrument(
            "a",
            vec![item("r", Category::ResearchSolutions), item("s", Category::Symptoms)],
        );
        let flow = consolidate(&[a]).unwrap();
        assert_eq!(flow.steps[0].category, Category::Symptoms);
    }

    #[test]
    fn consolidate_rejects_bad_input() {
        assert_eq!(consolidate(&[]).unwrap_err(), DomainError::NoInstruments);
        let a = instrument("a", vec![item("s", Category::Symptoms)]);
        assert_eq!(
            consolidate(&[a.clone(), a]).unwrap_err(),
            DomainError::DuplicateInstrument("a".into())
        );
    }

    #[test]
    fn patient_validation() {
        let w = CallWindow::hours(9, 17).unwrap();
        assert!(PatientProfile::new("p", "P", "America/New_York", w).is_ok());
        assert_eq!(
            PatientProfile::new("p", "P", "Mars/Olympus", w).unwrap_err(),
            DomainError::UnknownTimezone("Mars/Olympus".into())
        );
        assert!(CallWindow::hours(17, 9).is_err());
    }

    #[test]
    fn transcript_alternation_checked() {
        let now = Utc::now();
        let mut t = ConversationTranscript {
            session_id: "s".into(),
            patient_id: "p".into(),
            turns: vec![Turn::agent("hi", None, now), Turn::patient("hello", None, 1.0, now)],
            started_at: now,
            ended_at: now,
            completion_status: CompletionStatus::Completed,
        };
        assert!(t.validate().is_ok());
        t.turns.push(Turn::patient("again", None, 1.0, now));
        assert!(t.validate().is_err());
    }
}
