use std::collections::BTreeMap;

use chrono::{DateTime, Duration, TimeZone, Utc};
use proptest::prelude::*;
use pulse_core::analytics::{bundled_pilot, pilot_epoch, CohortMember, FixtureCohort, Outcome, Preference};
use pulse_core::domain::{
    bundled_eq5d3l, bundled_mhbi, bundled_pulse_flow, CallWindow, Category, CompletionStatus, ConversationTranscript,
    PatientProfile, Turn,
};
use pulse_core::extraction::{
    AlertSeverity, AssessmentResult, Dimension, Eq5dDimension, ExtractionError, MhbiDimension, RecommendedAction,
    RuleExtractor, TrendDirection,
};

fn extractor() -> RuleExtractor {
    RuleExtractor::new(&[bundled_mhbi(), bundled_eq5d3l(), bundled_pilot()])
}

fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 2, 3, 9, 0, 0).unwrap()
}

/// Transcript from (step id, patient reply) pairs.
fn transcript(pairs: &[(&str, &str)]) -> ConversationTranscript {
    let mut turns = Vec::new();
    let mut at = t0();
    for (step, reply) in pairs {
        turns.push(Turn::agent("question", Some(step.to_string()), at));
        at += Duration::seconds(10);
        turns.push(Turn::patient(*reply, Some(step.to_string()), 0.95, at));
        at += Duration::seconds(10);
    }
    ConversationTranscript {
        session_id: "s".into(),
        patient_id: "p".into(),
        turns,
        started_at: t0(),
        ended_at: at,
        completion_status: CompletionStatus::Completed,
    }
}

const RATING: &str = "mhbi.general_wellbeing+eq5d3l.health_scale";
const PAIN: &str = "mhbi.abdominal_pain+eq5d3l.pain_discomfort";
const STOOLS: &str = "mhbi.liquid_stools";
const EXTRA: &str = "mhbi.extraintestinal";
const PERIANAL: &str = "mhbi.perianal";
const ACTIVITIES: &str = "eq5d3l.usual_activities";
const MOBILITY: &str = "eq5d3l.mobility";
const SELF_CARE: &str = "eq5d3l.self_care";
const EMOTIONAL: &str = "eq5d3l.anxiety_depression";

const FRAGMENTS: &[&str] = &[
    "25%", "100", "0", "three times", "twelve times", "no pain", "severe pain", "slight twinge", "bloating and gas",
    "diarrhea", "formed", "my joints ache", "eye redness", "a rash", "fever", "anxious", "depressed", "hopeless",
    "I can walk", "unable to walk", "bedridden", "my wife helps me", "I wash myself", "no problems", "call me back",
    "chest pain", "can't breathe", "yes", "no", "not", "um", "",
];

fn arb_reply() -> impl Strategy<Value = String> {
    prop_oneof![
        3 => prop::collection::vec(prop::sample::select(FRAGMENTS), 0..5).prop_map(|v| v.join(" ")),
        1 => ".{0,40}",
    ]
}

fn arb_pairs() -> impl Strategy<Value = Vec<(String, String)>> {
    let steps: Vec<String> = bundled_pulse_flow().steps.into_iter().map(|s| s.id).collect();
    prop::collection::vec((prop::sample::select(steps), arb_reply()), 0..12)
}

fn owned(pairs: &[(String, String)]) -> Vec<(&str, &str)> {
    pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect()
}

proptest! {
    #[test]
    fn scores_stay_in_range(pairs in arb_pairs()) {
        let tr = transcript(&owned(&pairs));
        let (r, alerts) = extractor().assess(&tr);
        prop_assert!(r.check_ranges().is_ok(), "{:?}", r.check_ranges());
        for a in &alerts {
            prop_assert!(tr.patient_turns().any(|t| t.text.contains(&a.trigger_text)));
        }
        let max = alerts.iter().map(|a| a.severity).max();
        let expected = match max {
            Some(AlertSeverity::Emergency) => RecommendedAction::Emergency,
            Some(AlertSeverity::Callback) => RecommendedAction::Callback,
            Some(AlertSeverity::Info) => RecommendedAction::ProviderFollowUp,
            None => RecommendedAction::None,
        };
        prop_assert_eq!(r.recommended_action, expected);
    }

    #[test]
    fn new_turn_only_touches_addressed_dimensions(pairs in arb_pairs(), extra in (prop::sample::select(
        bundled_pulse_flow().steps.into_iter().map(|s| s.id).collect::<Vec<_>>()), arb_reply())) {
        let ex = extractor();
        let before = ex.assess(&transcript(&owned(&pairs))).0;
        let mut longer = pairs.clone();
        longer.push(extra);
        let tr = transcript(&owned(&longer));
        let after = ex.assess(&tr).0;
        let added = tr.turns.last().unwrap();
        let addressed = ex.addressed_dimensions(added);
        for d in Dimension::ALL {
            if !addressed.contains(&d) {
                prop_assert_eq!(before.score(d), after.score(d), "{} changed", d);
            }
        }
    }

    #[test]
    fn completeness_equals_tally(rows in prop::collection::vec(prop::collection::vec(0u8..3, 6), 1..50)) {
        let pilot = bundled_pilot();
        let members: Vec<CohortMember> = rows
            .iter()
            .enumerate()
            .map(|(i, row)| CohortMember {
                patient: PatientProfile::new(format!("c{i}"), "X", "UTC", CallWindow::hours(9, 17).unwrap()).unwrap(),
                preference: Preference::AI,
                weight: 1.0,
                outcomes: pilot
                    .items
                    .iter()
                    .zip(row)
                    .map(|(q, o)| (q.id.clone(), [Outcome::NotAsked, Outcome::Answered, Outcome::Unanswered][*o as usize]))
                    .collect(),
            })
            .collect();
        let cohort = FixtureCohort { members };
        let report = extractor().completeness_report(&cohort.transcripts(&pilot, pilot_epoch())).unwrap();

        let mut tally: BTreeMap<Category, (u32, u32)> = BTreeMap::new();
        for row in &rows {
            for (q, o) in pilot.items.iter().zip(row) {
                if *o != 0 {
                    let e = tally.entry(q.category).or_default();
                    e.0 += 1;
                    e.1 += u32::from(*o == 1);
                }
            }
        }
        prop_assert_eq!(report.categories.len(), tally.len());
        for c in &report.categories {
            let (asked, answered) = tally[&c.category];
            prop_assert_eq!((c.asked, c.answered), (asked, answered));
            prop_assert_eq!(c.rate, f64::from(answered) / f64::from(asked));
        }
        for w in report.categories.windows(2) {
            prop_assert!(w[0].rate >= w[1].rate);
        }
    }
}

#[test]
fn empty_transcript_scores_nothing() {
    let (r, alerts) = extractor().assess(&transcript(&[]));
    assert!(r.mhbi.is_empty() && r.eq5d.is_empty() && r.health_scale.is_none() && r.notes.is_empty());
    assert!(alerts.is_empty());
}

#[test]
fn quiescent_patient_scores_zero() {
    // Rubric by hand: rating 95 -> 4 - round(3.8) = 0; no pain -> 0; one formed
    // stool -> 0 liquid; nothing else -> 0 manifestations.
    let tr = transcript(&[
        (RATING, "Feeling great, I'd say 95."),
        (PAIN, "No pain at all."),
        (STOOLS, "Just one formed stool."),
        (EXTRA, "No, no other issues."),
    ]);
    let r = extractor().extract_mhbi(&tr);
    for d in MhbiDimension::ALL {
        assert_eq!(r.mhbi[&d], 0, "{d:?}");
    }
    assert_eq!(r.health_scale, Some(95));
}

#[test]
fn no_problems_anywhere_scores_level_one() {
    let tr = transcript(&[
        (PAIN, "No pain or discomfort."),
        (ACTIVITIES, "No problems with my usual activities."),
        (MOBILITY, "No problems walking about."),
        (SELF_CARE, "I wash and dress myself, no problems."),
        (EMOTIONAL, "Not anxious or depressed, I'm coping well."),
    ]);
    let r = extractor().extract_eq5d(&tr);
    for d in Eq5dDimension::ALL {
        assert_eq!(r.eq5d.get(&d), Some(&1), "{d:?}");
    }
}

#[test]
fn bedridden_is_mobility_three() {
    let r = extractor().extract_eq5d(&transcript(&[(MOBILITY, "I'm unable to walk, bedridden since Monday.")]));
    assert_eq!(r.eq5d[&Eq5dDimension::Mobility], 3);
}

#[test]
fn emergency_phrase_raises_emergency() {
    let ex = extractor();
    let (r, alerts) = ex.assess(&transcript(&[(PAIN, "severe chest pain right now")]));
    assert_eq!(alerts.len(), 1);
    assert_eq!(alerts[0].severity, AlertSeverity::Emergency);
    assert_eq!(alerts[0].trigger_text, "severe chest pain right now");
    assert_eq!(r.recommended_action, RecommendedAction::Emergency);
}

#[test]
fn benign_transcript_raises_nothing() {
    let alerts = extractor().detect_escalation(&transcript(&[
        (RATING, "80"),
        (PAIN, "Just a slight twinge."),
        (PERIANAL, "No."),
        (EMOTIONAL, "I'm doing fine."),
    ]));
    assert!(alerts.is_empty(), "{alerts:?}");
}

#[test]
fn pilot_completeness_matches_fixture_counts() {
    let report = extractor().completeness_report(&pulse_core::service::pilot_transcripts()).unwrap();
    let get = |c: Category| report.categories.iter().find(|x| x.category == c).unwrap().clone();
    for c in [Category::DailyActivities, Category::DailyLifeImpact] {
        let row = get(c);
        assert_eq!((row.asked, row.answered), (18, 17));
        assert_eq!(row.rate, 17.0 / 18.0);
    }
    let research = get(Category::ResearchSolutions);
    assert_eq!((research.asked, research.answered), (12, 1));
    for c in [Category::TreatmentFeedback, Category::EnvironmentalTriggers, Category::ResearchSolutions] {
        assert!(get(c).rate < 0.10);
    }
    assert!(report.categories.last().unwrap().rate < 0.1);
}

#[test]
fn completeness_requires_transcripts() {
    assert_eq!(extractor().completeness_report(&[]).unwrap_err(), ExtractionError::NoTranscripts);
}

fn result_at(days: i64, patient: &str, wellbeing: u32) -> AssessmentResult {
    let mut r = AssessmentResult::empty(&transcript(&[]));
    r.patient_id = patient.into();
    r.assessed_at = t0() + Duration::days(days);
    r.mhbi.insert(MhbiDimension::GeneralWellbeing, wellbeing);
    r
}

#[test]
fn trend_examples() {
    let ex = extractor();
    let wb = Dimension::Mhbi(MhbiDimension::GeneralWellbeing);
    let one = ex.trend_analysis(&[result_at(0, "p", 3)], wb).unwrap();
    assert_eq!(one.direction, TrendDirection::Insufficient);

    let falling = ex
        .trend_analysis(&[result_at(0, "p", 3), result_at(7, "p", 2), result_at(14, "p", 1)], wb)
        .unwrap();
    // Hand regression: x = 0, 7, 14; y = 3, 2, 1; slope = -14/98.
    assert!((falling.slope - (-1.0 / 7.0)).abs() < 1e-12);
    assert_eq!(falling.direction, TrendDirection::Improving);

    let flat = ex.trend_analysis(&[result_at(0, "p", 2), result_at(7, "p", 2)], wb).unwrap();
    assert_eq!((flat.direction, flat.slope), (TrendDirection::Stable, 0.0));

    let mixed = ex.trend_analysis(&[result_at(0, "p", 2), result_at(7, "q", 2)], wb);
    assert!(matches!(mixed, Err(ExtractionError::MixedPatients(..))));
}

#[test]
fn rising_health_scale_improves() {
    let mk = |d: i64, h: u8| {
        let mut r = result_at(d, "p", 0);
        r.health_scale = Some(h);
        r
    };
    let t = extractor()
        .trend_analysis(&[mk(0, 40), mk(1, 50), mk(2, 60)], Dimension::HealthScale)
        .unwrap();
    assert_eq!(t.direction, TrendDirection::Improving);
}
