//! Rule-based analysis of finished transcripts: MHBI and EQ-5D-3L scoring,
//! escalation alerts, completeness tallies and longitudinal trends.
//!
//! Every score is derived from *evidence turns*: patient turns answering a
//! step that covers the dimension, plus patient turns that mention one of the
//! dimension's cue words anywhere in the call. Dimensions without evidence
//! are left absent rather than defaulted.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_with::{DeserializeFromStr, SerializeDisplay};
use thiserror::Error;

use crate::domain::{Category, CompletionStatus, ConversationTranscript, Instrument, Speaker, Turn};
use crate::lexicon::{self, Normalized};

#[derive(Debug, Error, PartialEq)]
pub enum ExtractionError {
    #[error("completeness report needs at least one transcript")]
    NoTranscripts,
    #[error("trend analysis mixes patients `{0}` and `{1}`")]
    MixedPatients(String, String),
    #[error("unknown dimension `{0}`")]
    UnknownDimension(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MhbiDimension {
    LiquidStools,
    AbdominalPain,
    GeneralWellbeing,
    AdditionalManifestations,
}

impl MhbiDimension {
    pub const ALL: [MhbiDimension; 4] = [
        MhbiDimension::LiquidStools,
        MhbiDimension::AbdominalPain,
        MhbiDimension::GeneralWellbeing,
        MhbiDimension::AdditionalManifestations,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Eq5dDimension {
    Mobility,
    SelfCare,
    UsualActivities,
    PainDiscomfort,
    AnxietyDepression,
}

impl Eq5dDimension {
    pub const ALL: [Eq5dDimension; 5] = [
        Eq5dDimension::Mobility,
        Eq5dDimension::SelfCare,
        Eq5dDimension::UsualActivities,
        Eq5dDimension::PainDiscomfort,
        Eq5dDimension::AnxietyDepression,
    ];
}

/// Any scored dimension, including the 0-100 health scale. Serialized by
/// name so it can key JSON maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, SerializeDisplay, DeserializeFromStr)]
pub enum Dimension {
    Mhbi(MhbiDimension),
    Eq5d(Eq5dDimension),
    HealthScale,
}

impl Dimension {
    pub const ALL: [Dimension; 10] = [
        Dimension::Mhbi(MhbiDimension::LiquidStools),
        Dimension::Mhbi(MhbiDimension::AbdominalPain),
        Dimension::Mhbi(MhbiDimension::GeneralWellbeing),
        Dimension::Mhbi(MhbiDimension::AdditionalManifestations),
        Dimension::Eq5d(Eq5dDimension::Mobility),
        Dimension::Eq5d(Eq5dDimension::SelfCare),
        Dimension::Eq5d(Eq5dDimension::UsualActivities),
        Dimension::Eq5d(Eq5dDimension::PainDiscomfort),
        Dimension::Eq5d(Eq5dDimension::AnxietyDepression),
        Dimension::HealthScale,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Mhbi(MhbiDimension::LiquidStools) => "LiquidStools",
            Dimension::Mhbi(MhbiDimension::AbdominalPain) => "AbdominalPain",
            Dimension::Mhbi(MhbiDimension::GeneralWellbeing) => "GeneralWellbeing",
            Dimension::Mhbi(MhbiDimension::AdditionalManifestations) => "AdditionalManifestations",
            Dimension::Eq5d(Eq5dDimension::Mobility) => "Mobility",
            Dimension::Eq5d(Eq5dDimension::SelfCare) => "SelfCare",
            Dimension::Eq5d(Eq5dDimension::UsualActivities) => "UsualActivities",
            Dimension::Eq5d(Eq5dDimension::PainDiscomfort) => "PainDiscomfort",
            Dimension::Eq5d(Eq5dDimension::AnxietyDepression) => "AnxietyDepression",
            Dimension::HealthScale => "HealthScale",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Dimension::Mhbi(MhbiDimension::LiquidStools) => "Liquid Stools",
            Dimension::Mhbi(MhbiDimension::AbdominalPain) => "Abdominal Pain",
            Dimension::Mhbi(MhbiDimension::GeneralWellbeing) => "General Wellbeing",
            Dimension::Mhbi(MhbiDimension::AdditionalManifestations) => "Additional Manifestations",
            Dimension::Eq5d(Eq5dDimension::Mobility) => "Mobility",
            Dimension::Eq5d(Eq5dDimension::SelfCare) => "Self-Care",
            Dimension::Eq5d(Eq5dDimension::UsualActivities) => "Usual Activities",
            Dimension::Eq5d(Eq5dDimension::PainDiscomfort) => "Pain / Discomfort",
            Dimension::Eq5d(Eq5dDimension::AnxietyDepression) => "Anxiety / Depression",
            Dimension::HealthScale => "Health Scale",
        }
    }

    /// +1 when a higher score means a worse state, -1 when it means better.
    pub fn polarity(self) -> f64 {
        match self {
            Dimension::HealthScale => -1.0,
            _ => 1.0,
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dimension {
    type Err = ExtractionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dimension::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ExtractionError::UnknownDimension(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RecommendedAction {
    None,
    Callback,
    ProviderFollowUp,
    Emergency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentResult {
    pub session_id: String,
    pub patient_id: String,
    pub assessed_at: DateTime<Utc>,
    pub mhbi: BTreeMap<MhbiDimension, u32>,
    pub eq5d: BTreeMap<Eq5dDimension, u8>,
    pub health_scale: Option<u8>,
    pub notes: BTreeMap<Dimension, String>,
    pub recommended_action: RecommendedAction,
}

impl AssessmentResult {
    pub fn empty(transcript: &ConversationTranscript) -> Self {
        Self {
            session_id: transcript.session_id.clone(),
            patient_id: transcript.patient_id.clone(),
            assessed_at: transcript.ended_at,
            mhbi: BTreeMap::new(),
            eq5d: BTreeMap::new(),
            health_scale: None,
            notes: BTreeMap::new(),
            recommended_action: RecommendedAction::None,
        }
    }

    pub fn score(&self, dimension: Dimension) -> Option<u32> {
        match dimension {
            Dimension::Mhbi(d) => self.mhbi.get(&d).copied(),
            Dimension::Eq5d(d) => self.eq5d.get(&d).map(|v| u32::from(*v)),
            Dimension::HealthScale => self.health_scale.map(u32::from),
        }
    }

    /// Checks declared score ranges and that notes only cover scored dimensions.
    pub fn check_ranges(&self) -> Result<(), String> {
        for (d, v) in &self.mhbi {
            let ok = match d {
                MhbiDimension::AbdominalPain => *v <= 3,
                MhbiDimension::GeneralWellbeing => *v <= 4,
                MhbiDimension::AdditionalManifestations => *v <= MANIFESTATIONS.len() as u32,
                MhbiDimension::LiquidStools => true,
            };
            if !ok {
                return Err(format!("{d:?} = {v} out of range"));
            }
        }
        if let Some((d, v)) = self.eq5d.iter().find(|(_, v)| !(1..=3).contains(*v)) {
            return Err(format!("{d:?} = {v} out of range"));
        }
        if self.health_scale.is_some_and(|h| h > 100) {
            return Err("health scale above 100".into());
        }
        if let Some(d) = self.notes.keys().find(|d| self.score(**d).is_none()) {
            return Err(format!("note for unscored dimension {d}"));
        }
        Ok(())
    }

    /// Plain-text rendering of the two score tables: `dimension | score | note`.
    pub fn to_tables(&self) -> String {
        let mut out = String::from("MHBI\n");
        for d in MhbiDimension::ALL {
            let dim = Dimension::Mhbi(d);
            if let Some(v) = self.mhbi.get(&d) {
                out.push_str(&format!("{} | {} | {}\n", dim.label(), v, self.note(dim)));
            }
        }
        out.push_str("EQ-5D-3L\n");
        for d in Eq5dDimension::ALL {
            let dim = Dimension::Eq5d(d);
            if let Some(v) = self.eq5d.get(&d) {
                out.push_str(&format!("{} | {} | {}\n", dim.label(), v, self.note(dim)));
            }
        }
        if let Some(h) = self.health_scale {
            let dim = Dimension::HealthScale;
            out.push_str(&format!("{} | {}/100 | {}\n", dim.label(), h, self.note(dim)));
        }
        out.push_str(&format!("Recommended Action | {:?}\n", self.recommended_action));
        out
    }

    fn note(&self, d: Dimension) -> &str {
        self.notes.get(&d).map(String::as_str).unwrap_or("")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AlertSeverity {
    Info,
    Callback,
    Emergency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub session_id: String,
    pub severity: AlertSeverity,
    pub trigger_text: String,
    pub created_at: DateTime<Utc>,
}

impl Alert {
    /// One record of the line-delimited alert feed.
    pub fn to_feed_line(&self) -> String {
        serde_json::to_string(self).expect("alert serializes")
    }
}

pub fn recommended_action(alerts: &[Alert]) -> RecommendedAction {
    match alerts.iter().map(|a| a.severity).max() {
        Some(AlertSeverity::Emergency) => RecommendedAction::Emergency,
        Some(AlertSeverity::Callback) => RecommendedAction::Callback,
        Some(AlertSeverity::Info) => RecommendedAction::ProviderFollowUp,
        None => RecommendedAction::None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryCompleteness {
    pub category: Category,
    pub asked: u32,
    pub answered: u32,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletenessReport {
    /// Sorted by rate descending, then canonical category order.
    pub categories: Vec<CategoryCompleteness>,
}

impl CompletenessReport {
    pub fn rate(&self, category: Category) -> Option<f64> {
        self.categories.iter().find(|c| c.category == category).map(|c| c.rate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrendDirection {
    Improving,
    Stable,
    Worsening,
    Insufficient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSummary {
    pub patient_id: String,
    pub dimension: Dimension,
    pub series: Vec<(DateTime<Utc>, f64)>,
    pub direction: TrendDirection,
    /// Score units per day.
    pub slope: f64,
}

/// Cue vocabularies. Phrases are matched against lexicon-corrected tokens.
pub mod cues {
    pub const MOBILITY: &[&str] = &[
        "walk", "walking", "moving", "move", "get around", "getting around", "mobility",
        "bedridden", "stairs", "wheelchair",
    ];
    pub const SELF_CARE: &[&str] = &[
        "wash myself", "dress myself", "washing", "dressing", "bathing", "self care",
    ];
    pub const USUAL_ACTIVITIES: &[&str] = &[
        "daily activities", "usual activities", "chores", "housework", "errands", "my job",
    ];
    pub const PAIN_DISCOMFORT: &[&str] = &[
        "pain", "discomfort", "ache", "aches", "hurts", "hurt", "sore", "bloating", "cramps", "gas",
        "twinge",
    ];
    pub const ANXIETY: &[&str] = &["anxiety", "stress", "worried", "nervous", "panic"];
    pub const DEPRESSION: &[&str] = &["depression", "hopeless", "sad", "overwhelmed", "down"];
    pub const ABDOMINAL: &[&str] = &["stomach", "abdominal", "bloating", "cramps", "gas"];

    pub const ABDOMINAL_PAIN: &[&str] = &[
        "pain", "bloating", "gas", "cramps", "discomfort", "ache", "hurts", "hurt", "sore",
        "twinge", "nausea",
    ];
    pub const SEVERE: &[&str] = &[
        "severe", "terrible", "unbearable", "excruciating", "worst", "really bad", "a lot",
        "awful", "extreme", "extremely",
    ];
    pub const MILD: &[&str] = &["slight", "slightly", "twinge", "mild", "a little", "a bit", "minor"];

    pub const LIQUID: &[&str] = &["diarrhea", "liquid", "loose", "watery", "runny", "soft"];
    pub const FORMED: &[&str] = &["formed", "solid", "firm", "hard"];

    pub const LEVEL_EXTREME: &[&str] = &[
        "unable", "can't", "cannot", "not able", "bedridden", "confined", "extreme", "extremely",
        "severe", "unbearable",
    ];
    pub const LEVEL_SOME: &[&str] = &[
        "some", "help", "helps", "helping", "difficulty", "difficult", "trouble", "problem",
        "problems", "hard", "pain", "slow", "struggle", "limited", "tired", "fatigue",
    ];
    pub const LEVEL_NONE: &[&str] = &[
        "fine", "independent", "independently", "by myself", "normal", "no problems", "no problem",
        "no trouble", "well",
    ];

    pub const WELLBEING_4: &[&str] = &["terrible", "awful", "horrible", "worst"];
    pub const WELLBEING_3: &[&str] = &["very poor", "very bad", "bad"];
    pub const WELLBEING_2: &[&str] = &["poor"];
    pub const WELLBEING_0: &[&str] = &["great", "excellent", "very well", "wonderful", "fantastic"];
    pub const WELLBEING_1: &[&str] = &["good", "fine", "ok", "okay", "well", "alright"];

    pub const EMERGENCY: &[&str] = &[
        "chest pain", "can't breathe", "cannot breathe", "trouble breathing", "suicide",
        "suicidal", "kill myself", "end my life", "passed out", "fainted", "unconscious",
        "severe bleeding", "bleeding heavily", "lots of bleeding", "emergency", "911",
    ];
    pub const CALLBACK: &[&str] = &[
        "call me back", "call me", "callback", "call back", "contact me", "speak to a doctor",
        "speak to someone", "speak with someone", "talk to a doctor", "talk to a nurse",
        "talk to someone", "real person", "a human",
    ];
    pub const CONCERN: &[&str] = &[
        "bleeding", "vomiting", "getting worse", "much worse", "weight loss", "fever",
    ];
}

/// Extra-intestinal manifestation groups counted by AdditionalManifestations.
pub const MANIFESTATIONS: &[(&str, &[&str])] = &[
    ("joint", &["joint", "arthritis", "arthralgia", "stiffness"]),
    ("eye", &["eye", "eyes", "uveitis", "vision", "blurry"]),
    ("skin", &["skin", "rash", "ulcers", "bumps", "lesions"]),
    ("psychological", &["stress", "anxiety", "depression"]),
    ("fever", &["fever", "temperature", "chills"]),
];

/// Cue groups by which an answer volunteers information for a step of the
/// given category. A step counts as covered when every group is mentioned.
pub fn coverage_cues(category: Category) -> &'static [&'static [&'static str]] {
    match category {
        Category::Mobility => &[cues::MOBILITY],
        Category::DailyActivities => &[cues::USUAL_ACTIVITIES],
        Category::SelfCare => &[cues::SELF_CARE],
        Category::Emotional => &[cues::ANXIETY, cues::DEPRESSION],
        _ => &[],
    }
}

/// True when `answer` mentions every cue group of `category`.
pub fn volunteers(category: Category, answer: &Normalized) -> bool {
    let groups = coverage_cues(category);
    !groups.is_empty() && groups.iter().all(|g| answer.contains_any(g))
}

fn dimension_cues(d: Dimension) -> &'static [&'static str] {
    match d {
        Dimension::Eq5d(Eq5dDimension::Mobility) => cues::MOBILITY,
        Dimension::Eq5d(Eq5dDimension::SelfCare) => cues::SELF_CARE,
        Dimension::Eq5d(Eq5dDimension::UsualActivities) => cues::USUAL_ACTIVITIES,
        Dimension::Eq5d(Eq5dDimension::PainDiscomfort) => cues::PAIN_DISCOMFORT,
        Dimension::Mhbi(MhbiDimension::AbdominalPain) => cues::ABDOMINAL,
        _ => &[],
    }
}

fn mentions(d: Dimension, n: &Normalized) -> bool {
    match d {
        Dimension::Eq5d(Eq5dDimension::AnxietyDepression) => {
            n.contains_any(cues::ANXIETY) || n.contains_any(cues::DEPRESSION)
        }
        Dimension::Mhbi(MhbiDimension::AdditionalManifestations) => {
            MANIFESTATIONS.iter().any(|(_, words)| n.contains_any(words))
        }
        other => n.contains_any(dimension_cues(other)),
    }
}

/// Scoring thresholds that deployments may override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Rubric {
    /// Patient turns below this confidence do not count as answered.
    pub answered_confidence: f64,
    /// |slope| below this many units per day is reported as stable.
    pub stable_slope: f64,
}

impl Default for Rubric {
    fn default() -> Self {
        Self {
            answered_confidence: 0.6,
            stable_slope: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
struct StepInfo {
    category: Category,
    dimensions: Vec<Dimension>,
}

/// Reference extractor. Resolves step ids (`instrument.item+...`) against a
/// registry of instruments to learn which dimensions each answer feeds.
#[derive(Debug, Clone)]
pub struct RuleExtractor {
    instruments: HashMap<String, Instrument>,
    rubric: Rubric,
}

struct Evidence<'a> {
    turn: &'a Turn,
    norm: Normalized,
    /// Answers a step covering the dimension.
    on_step: bool,
}

impl RuleExtractor {
    pub fn new(instruments: &[Instrument]) -> Self {
        Self::with_rubric(instruments, Rubric::default())
    }

    pub fn with_rubric(instruments: &[Instrument], rubric: Rubric) -> Self {
        Self {
            instruments: instruments.iter().map(|i| (i.id.clone(), i.clone())).collect(),
            rubric,
        }
    }

    pub fn rubric(&self) -> &Rubric {
        &self.rubric
    }

    fn step_info(&self, step_id: &str) -> Option<StepInfo> {
        let mut category = None;
        let mut dimensions = Vec::new();
        for part in step_id.split('+') {
            let (inst, item) = part.split_once('.')?;
            let q = self.instruments.get(inst)?.item(item)?;
            category.get_or_insert(q.category);
            if let Ok(d) = q.dimension.parse::<Dimension>() {
                dimensions.push(d);
            }
            if inst == "mhbi" && q.dimension == "GeneralWellbeing" {
                dimensions.push(Dimension::HealthScale);
            }
        }
        Some(StepInfo {
            category: category?,
            dimensions,
        })
    }

    fn step_dimensions(&self, turn: &Turn) -> Vec<Dimension> {
        turn.step_id
            .as_deref()
            .and_then(|s| self.step_info(s))
            .map(|i| i.dimensions)
            .unwrap_or_default()
    }

    /// Dimensions a patient turn can influence: those of the step it answers
    /// and those whose cue words it mentions.
    pub fn addressed_dimensions(&self, turn: &Turn) -> BTreeSet<Dimension> {
        if turn.speaker != Speaker::Patient {
            return BTreeSet::new();
        }
        let norm = lexicon::normalize(&turn.text);
        let mut out: BTreeSet<Dimension> = self.step_dimensions(turn).into_iter().collect();
        out.extend(Dimension::ALL.into_iter().filter(|d| mentions(*d, &norm)));
        if out.contains(&Dimension::HealthScale) {
            out.insert(Dimension::Mhbi(MhbiDimension::GeneralWellbeing));
        }
        out
    }

    fn evidence<'a>(&self, transcript: &'a ConversationTranscript, d: Dimension, use_cues: bool) -> Vec<Evidence<'a>> {
        transcript
            .patient_turns()
            .filter_map(|turn| {
                let norm = lexicon::normalize(&turn.text);
                let on_step = self.step_dimensions(turn).contains(&d);
                (on_step || (use_cues && mentions(d, &norm))).then_some(Evidence { turn, norm, on_step })
            })
            .collect()
    }

    fn escalated_before_answer(transcript: &ConversationTranscript) -> bool {
        transcript.completion_status == CompletionStatus::Escalated
            && transcript.patient_turns().next().is_none()
    }

    /// MHBI dimensions, health scale and their notes.
    pub fn extract_mhbi(&self, transcript: &ConversationTranscript) -> AssessmentResult {
        let mut result = AssessmentResult::empty(transcript);
        if Self::escalated_before_answer(transcript) {
            return result;
        }

        let mut rating: Option<(u32, &str)> = None;
        for ev in self.evidence(transcript, Dimension::HealthScale, false) {
            if let Some(v) = lexicon::parse_rating(&ev.norm.tokens) {
                rating = Some((v, ev.turn.text.trim()));
            }
        }
        if let Some((v, quote)) = rating {
            result.health_scale = Some(v as u8);
            result.notes.insert(
                Dimension::HealthScale,
                format!("Patient rated their health at {v}/100 (\"{quote}\")"),
            );
        }

        let wellbeing = Dimension::Mhbi(MhbiDimension::GeneralWellbeing);
        if let Some((v, _)) = rating {
            let score = (4.0 - (f64::from(v) / 25.0).round()).clamp(0.0, 4.0) as u32;
            result.mhbi.insert(MhbiDimension::GeneralWellbeing, score);
            result
                .notes
                .insert(wellbeing, format!("Overall health rated {v}/100{}", fatigue_suffix(transcript)));
        } else {
            let mut band = None;
            for ev in self.evidence(transcript, wellbeing, false) {
                if let Some(b) = wellbeing_band(&ev.norm) {
                    band = Some((b, ev.turn.text.trim()));
                }
            }
            if let Some((b, quote)) = band {
                result.mhbi.insert(MhbiDimension::GeneralWellbeing, b);
                result.notes.insert(wellbeing, format!("Patient described wellbeing as \"{quote}\""));
            }
        }

        let pain = Dimension::Mhbi(MhbiDimension::AbdominalPain);
        let scored: Vec<(u32, &str)> = self
            .evidence(transcript, pain, true)
            .iter()
            .filter_map(|ev| abdominal_pain_level(ev).map(|l| (l, ev.turn.text.trim())))
            .collect();
        if let Some(max) = scored.iter().map(|(l, _)| *l).max() {
            result.mhbi.insert(MhbiDimension::AbdominalPain, max);
            result.notes.insert(pain, quote_note("Patient reported", scored.iter().map(|(_, q)| *q)));
        }

        let stools = Dimension::Mhbi(MhbiDimension::LiquidStools);
        let mut stool_score = None;
        for ev in self.evidence(transcript, stools, false) {
            if let Some(v) = liquid_stool_count(&ev.norm) {
                stool_score = Some((v, ev.turn.text.trim()));
            }
        }
        if let Some((v, quote)) = stool_score {
            result.mhbi.insert(MhbiDimension::LiquidStools, v);
            result.notes.insert(
                stools,
                format!("{v} liquid stool(s) in the past 24 hours (\"{quote}\")"),
            );
        }

        let manifest = Dimension::Mhbi(MhbiDimension::AdditionalManifestations);
        let evidence = self.evidence(transcript, manifest, true);
        if !evidence.is_empty() {
            let found: Vec<&str> = MANIFESTATIONS
                .iter()
                .filter(|(_, words)| evidence.iter().any(|ev| ev.norm.affirms_any(words)))
                .map(|(name, _)| *name)
                .collect();
            result.mhbi.insert(MhbiDimension::AdditionalManifestations, found.len() as u32);
            let note = if found.is_empty() {
                "No additional manifestations reported".to_string()
            } else {
                format!("Reported manifestations: {}", found.join(", "))
            };
            result.notes.insert(manifest, note);
        }
        result
    }

    /// EQ-5D-3L levels and their notes.
    pub fn extract_eq5d(&self, transcript: &ConversationTranscript) -> AssessmentResult {
        let mut result = AssessmentResult::empty(transcript);
        if Self::escalated_before_answer(transcript) {
            return result;
        }
        for d in Eq5dDimension::ALL {
            let dim = Dimension::Eq5d(d);
            let scored: Vec<(u8, &str)> = self
                .evidence(transcript, dim, true)
                .iter()
                .filter_map(|ev| eq5d_level(d, ev).map(|l| (l, ev.turn.text.trim())))
                .collect();
            if let Some(max) = scored.iter().map(|(l, _)| *l).max() {
                result.eq5d.insert(d, max);
                result.notes.insert(dim, quote_note("Patient said", scored.iter().map(|(_, q)| *q)));
            }
        }
        result
    }

    /// Callback, emergency and concern alerts, at most one per patient turn.
    pub fn detect_escalation(&self, transcript: &ConversationTranscript) -> Vec<Alert> {
        transcript
            .patient_turns()
            .filter_map(|turn| {
                let norm = lexicon::normalize(&turn.text);
                let severity = if norm.affirms_any(cues::EMERGENCY) {
                    AlertSeverity::Emergency
                } else if norm.contains_any(cues::CALLBACK) {
                    AlertSeverity::Callback
                } else if norm.affirms_any(cues::CONCERN) {
                    AlertSeverity::Info
                } else {
                    return None;
                };
                Some(Alert {
                    session_id: transcript.session_id.clone(),
                    severity,
                    trigger_text: turn.text.trim().to_string(),
                    created_at: turn.timestamp,
                })
            })
            .collect()
    }

    /// Both instruments merged, with the recommended action set from the
    /// highest-severity alert.
    pub fn assess(&self, transcript: &ConversationTranscript) -> (AssessmentResult, Vec<Alert>) {
        let mut result = self.extract_mhbi(transcript);
        let eq = self.extract_eq5d(transcript);
        result.eq5d = eq.eq5d;
        result.notes.extend(eq.notes);
        let alerts = self.detect_escalation(transcript);
        result.recommended_action = recommended_action(&alerts);
        (result, alerts)
    }

    pub fn completeness_report(
        &self,
        transcripts: &[ConversationTranscript],
    ) -> Result<CompletenessReport, ExtractionError> {
        if transcripts.is_empty() {
            return Err(ExtractionError::NoTranscripts);
        }
        let mut tally: BTreeMap<Category, (u32, u32)> = BTreeMap::new();
        for t in transcripts {
            let asked: BTreeSet<&str> = t
                .turns
                .iter()
                .filter(|turn| turn.speaker == Speaker::Agent)
                .filter_map(|turn| turn.step_id.as_deref())
                .collect();
            let answered: BTreeSet<&str> = t
                .patient_turns()
                .filter(|turn| turn.parse_confidence.unwrap_or(0.0) >= self.rubric.answered_confidence)
                .filter_map(|turn| turn.step_id.as_deref())
                .collect();
            for step in asked {
                let Some(info) = self.step_info(step) else { continue };
                let entry = tally.entry(info.category).or_default();
                entry.0 += 1;
                if answered.contains(step) {
                    entry.1 += 1;
                }
            }
        }
        let mut categories: Vec<CategoryCompleteness> = tally
            .into_iter()
            .map(|(category, (asked, answered))| CategoryCompleteness {
                category,
                asked,
                answered,
                rate: f64::from(answered) / f64::from(asked),
            })
            .collect();
        categories.sort_by(|a, b| b.rate.total_cmp(&a.rate).then(a.category.cmp(&b.category)));
        Ok(CompletenessReport { categories })
    }

    pub fn trend_analysis(
        &self,
        results: &[AssessmentResult],
        dimension: Dimension,
    ) -> Result<TrendSummary, ExtractionError> {
        trend_analysis(results, dimension, self.rubric.stable_slope)
    }
}

/// Least-squares trend of one dimension over time-ordered assessments.
pub fn trend_analysis(
    results: &[AssessmentResult],
    dimension: Dimension,
    stable_slope: f64,
) -> Result<TrendSummary, ExtractionError> {
    let patient_id = results.first().map(|r| r.patient_id.clone()).unwrap_or_default();
    if let Some(other) = results.iter().find(|r| r.patient_id != patient_id) {
        return Err(ExtractionError::MixedPatients(patient_id, other.patient_id.clone()));
    }
    let series: Vec<(DateTime<Utc>, f64)> = results
        .iter()
        .filter_map(|r| r.score(dimension).map(|s| (r.assessed_at, f64::from(s))))
        .collect();
    if series.len() < 2 {
        return Ok(TrendSummary {
            patient_id,
            dimension,
            series,
            direction: TrendDirection::Insufficient,
            slope: 0.0,
        });
    }
    let t0 = series[0].0;
    let xs: Vec<f64> = series
        .iter()
        .map(|(t, _)| (*t - t0).num_milliseconds() as f64 / 86_400_000.0)
        .collect();
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = series.iter().map(|(_, y)| y).sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mean_x).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&series).map(|(x, (_, y))| (x - mean_x) * (y - mean_y)).sum();
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    let direction = if slope.abs() < stable_slope {
        TrendDirection::Stable
    } else if slope * dimension.polarity() > 0.0 {
        TrendDirection::Worsening
    } else {
        TrendDirection::Improving
    };
    Ok(TrendSummary {
        patient_id,
        dimension,
        series,
        direction,
        slope,
    })
}

fn quote_note<'a>(prefix: &str, quotes: impl Iterator<Item = &'a str>) -> String {
    let mut seen = Vec::new();
    for q in quotes {
        if !seen.contains(&q) {
            seen.push(q);
        }
    }
    let quoted: Vec<String> = seen.iter().map(|q| format!("\"{q}\"")).collect();
    format!("{prefix} {}", quoted.join("; "))
}

fn fatigue_suffix(transcript: &ConversationTranscript) -> &'static str {
    let tired = transcript
        .patient_turns()
        .any(|t| lexicon::normalize(&t.text).affirms_any(&["tired", "fatigue", "exhausted"]));
    if tired {
        " and reported fatigue"
    } else {
        ""
    }
}

fn wellbeing_band(n: &Normalized) -> Option<u32> {
    if n.affirms_any(cues::WELLBEING_4) {
        Some(4)
    } else if n.affirms_any(cues::WELLBEING_3) {
        Some(3)
    } else if n.affirms_any(cues::WELLBEING_2)
        || n.denies_any(cues::WELLBEING_0)
        || n.denies_any(cues::WELLBEING_1)
    {
        Some(2)
    } else if n.affirms_any(cues::WELLBEING_0) {
        Some(0)
    } else if n.affirms_any(cues::WELLBEING_1) {
        Some(1)
    } else {
        None
    }
}

fn abdominal_pain_level(ev: &Evidence<'_>) -> Option<u32> {
    let n = &ev.norm;
    if n.affirms_any(cues::ABDOMINAL_PAIN) {
        if n.affirms_any(cues::SEVERE) {
            Some(3)
        } else if n.affirms_any(cues::MILD) {
            Some(1)
        } else {
            Some(2)
        }
    } else if n.denies_any(cues::ABDOMINAL_PAIN)
        || (ev.on_step && lexicon::parse_polar(&n.tokens) == Some(false))
    {
        Some(0)
    } else {
        None
    }
}

fn liquid_stool_count(n: &Normalized) -> Option<u32> {
    let count = lexicon::parse_count(&n.tokens);
    if n.affirms_any(cues::LIQUID) {
        count
    } else if n.affirms_any(cues::FORMED) || count == Some(0) {
        Some(0)
    } else {
        count
    }
}

fn eq5d_level(d: Eq5dDimension, ev: &Evidence<'_>) -> Option<u8> {
    let n = &ev.norm;
    if n.contains_any(cues::LEVEL_EXTREME) {
        return Some(3);
    }
    let intrinsic = match d {
        Eq5dDimension::PainDiscomfort => n.affirms_any(cues::PAIN_DISCOMFORT),
        Eq5dDimension::AnxietyDepression => {
            n.affirms_any(cues::ANXIETY) || n.affirms_any(cues::DEPRESSION)
        }
        _ => false,
    };
    let polar = if ev.on_step { lexicon::parse_polar(&n.tokens) } else { None };
    // Questions about mood and pain are phrased so that "yes" reports a problem.
    let yes_is_problem = matches!(d, Eq5dDimension::PainDiscomfort | Eq5dDimension::AnxietyDepression);
    if intrinsic || n.affirms_any(cues::LEVEL_SOME) || (yes_is_problem && polar == Some(true)) {
        Some(2)
    } else if n.affirms_any(cues::LEVEL_NONE)
        || polar == Some(false)
        || (!yes_is_problem && polar == Some(true))
        || n.denies_any(cues::LEVEL_SOME)
        || n.denies_any(dimension_cues(Dimension::Eq5d(d)))
    {
        Some(1)
    } else {
        None
    }
}
