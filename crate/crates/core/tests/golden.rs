use chrono::{TimeZone, Utc};
use pulse_core::dialogue::{advance, close_session, start_session, DialogueConfig, ScriptedGenerator, SessionStatus};
use pulse_core::domain::{bundled_eq5d3l, bundled_mhbi, bundled_pulse_flow, CallWindow, CompletionStatus, PatientProfile};
use pulse_core::extraction::{Eq5dDimension, MhbiDimension, RecommendedAction, RuleExtractor};

const SCRIPT: &str = include_str!("../fixtures/golden_call.script");

#[test]
fn golden_conversation() {
    let g = ScriptedGenerator::default();
    let p = PatientProfile::new("p1", "John", "America/Chicago", CallWindow::hours(9, 17).unwrap()).unwrap();
    let at = Utc.with_ymd_and_hms(2025, 3, 1, 15, 0, 0).unwrap();
    let (mut s, first) = start_session("s1", &p, &bundled_pulse_flow(), &g, DialogueConfig::default(), at).unwrap();
    println!("AGENT: {}", first.text);
    for line in SCRIPT.lines() {
        let t = advance(&mut s, line, &g, at).unwrap();
        println!("PATIENT: {line}\nAGENT[{:?}]: {}", t.step_id, t.text);
    }
    assert_eq!(s.status, SessionStatus::WrapUp);
    let tr = close_session(&mut s, CompletionStatus::Completed, at).unwrap();
    let ex = RuleExtractor::new(&[bundled_mhbi(), bundled_eq5d3l()]);
    let (r, alerts) = ex.assess(&tr);
    println!("{}", r.to_tables());
    assert_eq!(r.mhbi[&MhbiDimension::LiquidStools], 3);
    assert_eq!(r.mhbi[&MhbiDimension::AbdominalPain], 2);
    assert_eq!(r.mhbi[&MhbiDimension::GeneralWellbeing], 3);
    assert_eq!(r.mhbi[&MhbiDimension::AdditionalManifestations], 2);
    for d in Eq5dDimension::ALL {
        assert_eq!(r.eq5d[&d], 2, "{d:?}");
    }
    assert_eq!(r.health_scale, Some(25));
    assert_eq!(r.recommended_action, RecommendedAction::Callback);
    assert_eq!(alerts.len(), 1);
}
