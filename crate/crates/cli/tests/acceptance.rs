//! Acceptance gate. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.

#[path = "../../core/tests/support/oracles.rs"]
mod oracles;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration as StdDuration, Instant};

use chrono::{DateTime, Duration, TimeZone, Utc};
use chrono_tz::Tz;
use pulse_core::analytics::{bundled_cohort, Preference};
use pulse_core::cache::{LatencyModel, SegmentKind, SessionCacheState};
use pulse_core::domain::{CallWindow, Category, PatientProfile};
use pulse_core::econ::{
    assign_care_level, cost_efficiency, icer, monitoring_costs, npv, simulate_cohort, CareCosts, CareLevel,
    CohortEconConfig, Dynamics, SeverityThresholds, SimulationConfig,
};
use pulse_core::scheduler::{plan_outbound, Horizon, InboundForecast};
use pulse_core::service::store::replay;
use pulse_core::service::{
    parse_script, FileBackend, PlanRequest, Service, ServiceConfig, SteppingClock, GOLDEN_SCRIPT,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

const GOLDEN_FILE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures/golden_call.script");

fn golden_transcript() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let started = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_pulse"))
        .env("PULSE_DATA_DIR", dir.path())
        .args(["call", "--patient", "pilot-01", "--script", GOLDEN_FILE, "--json"])
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    ensure!(out.status.success(), "pulse call failed: {}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    let a = &v["assessment"];
    let mhbi = [("LiquidStools", 3), ("AbdominalPain", 2), ("GeneralWellbeing", 3), ("AdditionalManifestations", 2)];
    for (k, want) in mhbi {
        ensure!(a["mhbi"][k] == want, "MHBI {k} = {}, want {want}", a["mhbi"][k]);
    }
    let eq = a["eq5d"].as_object().ok_or("no EQ-5D table")?;
    ensure!(eq.len() == 5, "EQ-5D has {} dimensions", eq.len());
    for (k, got) in eq {
        ensure!(*got == 2, "EQ-5D {k} = {got}, want 2");
    }
    ensure!(a["health_scale"] == 25, "health scale {}", a["health_scale"]);
    ensure!(a["recommended_action"] == "Callback", "action {}", a["recommended_action"]);
    ensure!(elapsed < StdDuration::from_secs(1), "took {elapsed:?}");
    Ok(format!("tables match, Callback, {} ms", elapsed.as_millis()))
}

fn economic_arithmetic() -> Outcome {
    const N: usize = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(0xEC0);
    let cents = |rng: &mut ChaCha8Rng, hi: i64| rng.random_range(1..hi);
    for _ in 0..N {
        let (c_h, c_a) = (cents(&mut rng, 10_000_000), rng.random_range(0..10_000_000i64));
        let got = cost_efficiency(c_h as f64 / 100.0, c_a as f64 / 100.0).map_err(|e| e.to_string())?;
        oracles::check_2dp(got, oracles::cost_efficiency(c_h.into(), c_a.into())).map_err(|e| format!("E: {e}"))?;

        let (c_a, c_h) = (cents(&mut rng, 1_000_000), cents(&mut rng, 1_000_000));
        let (q_a, q_h) = (rng.random_range(0..500i64), rng.random_range(0..500i64));
        if q_a != q_h {
            let costs = CareCosts {
                c_h: c_h as f64 / 100.0,
                c_a: c_a as f64 / 100.0,
                qaly_h: q_h as f64 / 100.0,
                qaly_a: q_a as f64 / 100.0,
            };
            let got = icer(&costs).map_err(|e| e.to_string())?.value;
            oracles::check_2dp(got, oracles::icer(c_a.into(), c_h.into(), q_a.into(), q_h.into()))
                .map_err(|e| format!("ICER: {e}"))?;
        }

        let (n_p, c_m, f, v_a) = (
            rng.random_range(1..100_000i64),
            cents(&mut rng, 100_000),
            rng.random_range(0..10_000_000i64),
            rng.random_range(0..100_000i64),
        );
        let cfg = CohortEconConfig {
            n_p: n_p as u64,
            c_m: c_m as f64 / 100.0,
            f: f as f64 / 100.0,
            v_a: v_a as f64 / 100.0,
            r: 0.0,
            flows: vec![],
        };
        let got = monitoring_costs(&cfg).map_err(|e| e.to_string())?;
        let (human, ai, r) = oracles::monitoring(n_p.into(), c_m.into(), f.into(), v_a.into());
        for (g, e, name) in [(got.c_human, human, "C_human"), (got.c_ai, ai, "C_AI"), (got.r, r, "R")] {
            oracles::check_2dp(g, e).map_err(|err| format!("{name}: {err}"))?;
        }

        let len = rng.random_range(0..8);
        let nets: Vec<i64> = (0..len).map(|_| rng.random_range(-1_000_000..1_000_000)).collect();
        let p = rng.random_range(-20..100i64);
        let flows: Vec<(f64, f64)> = nets.iter().map(|n| (*n as f64 / 100.0, 0.0)).collect();
        let got = npv(&flows, p as f64 / 100.0).map_err(|e| e.to_string())?;
        let wide: Vec<i128> = nets.iter().map(|n| i128::from(*n)).collect();
        oracles::check_2dp(got, oracles::npv(&wide, p.into(), 100)).map_err(|e| format!("NPV: {e}"))?;

        let flows: Vec<(f64, f64)> = (0..len)
            .map(|_| (rng.random_range(0..1_000_000) as f64, rng.random_range(0..1_000_000) as f64))
            .collect();
        let plain: f64 = flows.iter().map(|(b, c)| b - c).sum();
        let zero = npv(&flows, 0.0).map_err(|e| e.to_string())?;
        ensure!(zero == plain, "NPV at r=0 is {zero}, plain sum {plain}");
    }
    let e = cost_efficiency(100.0, 30.0).map_err(|e| e.to_string())?;
    ensure!(e == 70.0, "E(100,30) = {e}");
    let m = monitoring_costs(&CohortEconConfig {
        n_p: 1000,
        c_m: 50.0,
        f: 10_000.0,
        v_a: 5.0,
        r: 0.0,
        flows: vec![],
    })
    .map_err(|e| e.to_string())?;
    ensure!(m.r == 70.0, "R(1000,50,10000,5) = {}", m.r);
    Ok(format!("{N} random inputs per equation, E(100,30)=70, R=70"))
}

fn care_allocation() -> Outcome {
    const TIERS: [CareLevel; 4] = [CareLevel::AI, CareLevel::Caregiver, CareLevel::Nurse, CareLevel::Physician];
    let mut rng = ChaCha8Rng::seed_from_u64(0xCA5E);
    let mut mismatches = 0usize;
    let mut checked = 0usize;
    let mut triples = 0;
    while triples < 100 {
        let mut v = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
        v.sort_by(f64::total_cmp);
        if !(0.0 < v[0] && v[0] < v[1] && v[1] < v[2] && v[2] < 1.0) {
            continue;
        }
        triples += 1;
        let t = SeverityThresholds::new(v[0], v[1], v[2]).map_err(|e| e.to_string())?;
        for i in 0..10_000u32 {
            let s = f64::from(i) / 9_999.0;
            let got = assign_care_level(s, &t).map_err(|e| e.to_string())?;
            if got != TIERS[oracles::care_tier(s, v[0], v[1], v[2])] {
                mismatches += 1;
            }
            checked += 1;
        }
        for (s, want) in [(v[0], CareLevel::AI), (v[1], CareLevel::Caregiver), (v[2], CareLevel::Nurse)] {
            ensure!(assign_care_level(s, &t).ok() == Some(want), "S={s} with {v:?} is not {want:?}");
        }
    }
    ensure!(mismatches == 0, "{mismatches} mismatches");
    let t = SeverityThresholds::default();
    for (s, want) in [(t.s_l, CareLevel::AI), (t.s_m, CareLevel::Caregiver), (t.s_h, CareLevel::Nurse)] {
        ensure!(assign_care_level(s, &t).ok() == Some(want), "default boundary S={s} is not {want:?}");
    }
    Ok(format!("{checked} points, 0 mismatches, boundaries exact"))
}

fn stabilization_lowers_readmissions() -> Outcome {
    let started = Instant::now();
    let mut wins = 0;
    let mut means = Vec::new();
    for seed in 1..=30u64 {
        let run = |stab: f64| {
            let cfg = SimulationConfig {
                patients: 100,
                periods: 52,
                seed,
                dynamics: Dynamics { ai_stabilization: stab, ..Dynamics::default() },
                ..SimulationConfig::default()
            };
            simulate_cohort(&cfg).map(|(_, r)| r.mean_readmissions).map_err(|e| e.to_string())
        };
        let (with, without) = (run(0.05)?, run(0.0)?);
        if with < without {
            wins += 1;
        }
        means.push((with, without));
    }
    let elapsed = started.elapsed();
    ensure!(wins >= 28, "lower in only {wins}/30 pairs: {means:?}");
    ensure!(elapsed < StdDuration::from_secs(10), "took {elapsed:?}");
    Ok(format!("lower in {wins}/30 pairs, {} ms", elapsed.as_millis()))
}

fn cache_accounting() -> Outcome {
    let grid = [10u64, 100, 1000];
    let mut rng = ChaCha8Rng::seed_from_u64(0xCAC4E);
    for _ in 0..100 {
        let (p, k, t) = (grid[rng.random_range(0..3)], grid[rng.random_range(0..3)], grid[rng.random_range(0..3)]);
        let mut s = SessionCacheState::new("a");
        s.prime(p, SegmentKind::SystemPrompt).map_err(|e| e.to_string())?;
        for _ in 1..t {
            s.extend(k).map_err(|e| e.to_string())?;
        }
        let (baseline, processed) = oracles::geometric_speedup(p, k, t);
        ensure!(s.speedup_ratio() == (baseline, processed), "P={p} k={k} T={t}: {:?}", s.speedup_ratio());
        let m = s.metrics(&LatencyModel::default()).map_err(|e| e.to_string())?;
        ensure!(m.speedup_factor == baseline as f64 / processed as f64, "speedup {}", m.speedup_factor);
    }
    for _ in 0..100 {
        let (prefix, injected, new) = (rng.random_range(1..1000), rng.random_range(1..1000), rng.random_range(0..500));
        for frac in [0.0, 1.0] {
            let mut s = SessionCacheState::new("b");
            s.prime(prefix, SegmentKind::SystemPrompt).map_err(|e| e.to_string())?;
            let st = s.blend(&[(injected, "kb".into())], new, frac).map_err(|e| e.to_string())?;
            let want = if frac == 0.0 { new } else { st.baseline_tokens };
            ensure!(st.processed() == want, "fraction {frac}: processed {} want {want}", st.processed());
        }
    }
    Ok("100 (P,k,T) points exact, blend limits exact".into())
}

const ZONES: [&str; 9] = [
    "UTC",
    "America/New_York",
    "America/Los_Angeles",
    "Europe/London",
    "Europe/Berlin",
    "Asia/Tokyo",
    "Asia/Kolkata",
    "Australia/Sydney",
    "Pacific/Auckland",
];

struct Instance {
    patients: Vec<PatientProfile>,
    horizon: Horizon,
    capacity: u32,
    forecast: InboundForecast,
}

fn instance(rng: &mut ChaCha8Rng, max_patients: usize, max_periods: usize) -> Instance {
    let n = rng.random_range(0..=max_patients);
    let periods = rng.random_range(1..=max_periods);
    let patients = (0..n)
        .map(|i| {
            let a = rng.random_range(0..24);
            let b = (a + rng.random_range(1..12)).min(24);
            let zone = ZONES[rng.random_range(0..ZONES.len())];
            PatientProfile::new(format!("f{i}"), "x", zone, CallWindow::hours(a, b).expect("valid window"))
                .expect("valid patient")
        })
        .collect();
    // Starts spread over a year so DST transitions are crossed.
    let start = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap() + Duration::hours(rng.random_range(0..24 * 365));
    let expected = (0..periods).map(|_| f64::from(rng.random_range(0..5u32))).collect();
    Instance {
        patients,
        horizon: Horizon::hourly(start, periods),
        capacity: rng.random_range(1..6),
        forecast: InboundForecast::new(expected, rng.random_range(1.0..2.0)).expect("valid forecast"),
    }
}

fn in_window(p: &PatientProfile, at: DateTime<Utc>) -> bool {
    let tz: Tz = p.timezone.parse().expect("known zone");
    let local = at.with_timezone(&tz).time();
    p.allowed_call_window.start <= local && local < p.allowed_call_window.end
}

fn budgets(inst: &Instance) -> Vec<u32> {
    (0..inst.horizon.periods)
        .map(|t| {
            let need = (inst.forecast.expected[t] * inst.forecast.spike_multiplier).ceil() as u32;
            inst.capacity - need.min(inst.capacity)
        })
        .collect()
}

/// Placed count, or a description of the first violation.
fn violations(inst: &Instance) -> Result<usize, String> {
    let plan = plan_outbound(&inst.patients, &inst.horizon, inst.capacity, &inst.forecast).map_err(|e| e.to_string())?;
    let by_id: BTreeMap<&str, &PatientProfile> = inst.patients.iter().map(|p| (p.id.as_str(), p)).collect();
    let budgets = budgets(inst);
    let mut used = vec![0u32; inst.horizon.periods];
    let mut seen = std::collections::BTreeSet::new();
    for s in &plan.slots {
        let p = by_id[s.patient_id.as_str()];
        ensure!(in_window(p, s.start), "{} called at {} outside its window", p.id, s.start);
        ensure!(seen.insert(&s.patient_id), "{} placed twice", s.patient_id);
        used[s.period] += 1;
    }
    for t in 0..used.len() {
        ensure!(used[t] <= budgets[t], "period {t}: {} calls over budget {}", used[t], budgets[t]);
        ensure!(used[t] + plan.inbound_reserve[t] <= inst.capacity, "period {t} over capacity");
    }
    Ok(plan.slots.len())
}

fn scheduler_safety() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5C4ED);
    for i in 0..1000 {
        let inst = instance(&mut rng, 50, 48);
        violations(&inst).map_err(|e| format!("instance {i}: {e}"))?;
    }
    let mut small = 0;
    for i in 0..1000 {
        let inst = instance(&mut rng, 6, 8);
        let placed = violations(&inst).map_err(|e| format!("small instance {i}: {e}"))?;
        let allowed: Vec<Vec<usize>> = inst
            .patients
            .iter()
            .map(|p| (0..inst.horizon.periods).filter(|t| in_window(p, inst.horizon.period_start(*t))).collect())
            .collect();
        let best = oracles::max_placeable(&allowed, &budgets(&inst));
        ensure!(placed == best, "small instance {i}: placed {placed}, exhaustive {best}");
        small += 1;
    }
    Ok(format!("1000 fuzzed instances clean, {small} small instances match exhaustive search"))
}

fn analytics() -> Outcome {
    let d = bundled_cohort().preferences().map_err(|e| e.to_string())?;
    let want = [
        (Preference::AI, 0.37),
        (Preference::Zoom, 0.24),
        (Preference::Both, 0.18),
        (Preference::NoPreference, 0.15),
        (Preference::Human, 0.03),
        (Preference::Neither, 0.03),
    ];
    for (p, share) in want {
        let got = d.shares.get(&p).copied().unwrap_or(f64::NAN);
        ensure!((got - share).abs() < 1e-12, "{p}: {got}, want {share}");
    }
    ensure!((d.acceptance - 0.70).abs() < 1e-12, "acceptance {}", d.acceptance);

    let service = Service::in_memory(ServiceConfig::default(), Arc::new(pulse_core::service::SystemClock))
        .map_err(|e| e.to_string())?;
    let report = service.completeness().map_err(|e| e.to_string())?;
    for c in [Category::DailyActivities, Category::DailyLifeImpact] {
        let rate = report.rate(c).ok_or(format!("{c:?} missing"))?;
        ensure!(format!("{:.1}", rate * 100.0) == "94.4", "{c:?} completeness {rate}");
    }
    for c in [Category::ResearchSolutions, Category::EnvironmentalTriggers, Category::TreatmentFeedback] {
        let rate = report.rate(c).ok_or(format!("{c:?} missing"))?;
        ensure!(rate < 0.10, "{c:?} completeness {rate}");
    }
    Ok("shares .37/.24/.18/.15/.03/.03, acceptance .70, completeness 94.4%".into())
}

fn stepping() -> Arc<SteppingClock> {
    Arc::new(SteppingClock::new(Utc.with_ymd_and_hms(2025, 5, 5, 13, 0, 0).unwrap(), Duration::seconds(5)))
}

fn matches_replay(s: &Service) -> Result<(), String> {
    let events = s.events().map_err(|e| e.to_string())?;
    let rebuilt = replay(&events, s.config().cache.budget_tokens).map_err(|e| e.to_string())?;
    ensure!(rebuilt.digest() == s.state_digest(), "digest differs after {} events", events.len());
    Ok(())
}

fn random_run(s: &Service, rng: &mut ChaCha8Rng) -> Result<(), String> {
    let script = parse_script(GOLDEN_SCRIPT);
    for _ in 0..rng.random_range(1..10) {
        match rng.random_range(0..4) {
            0 => {
                let p = format!("pilot-{:02}", rng.random_range(1..=33));
                let n = rng.random_range(0..=script.len());
                s.run_call(&p, "pulse", &script[..n]).map_err(|e| e.to_string())?;
            }
            1 => {
                let p = PatientProfile::new(
                    format!("extra-{}", rng.random_range(0..5)),
                    "x",
                    ZONES[rng.random_range(0..ZONES.len())],
                    CallWindow::hours(8, 20).expect("valid window"),
                )
                .expect("valid patient");
                s.upsert_patient(p).map_err(|e| e.to_string())?;
            }
            2 => {
                s.plan_calls(&PlanRequest {
                    horizon: rng.random_range(1..48),
                    capacity: Some(rng.random_range(1..5)),
                    forecast: vec![],
                    spike_multiplier: None,
                    start: None,
                    patient_ids: None,
                })
                .map_err(|e| e.to_string())?;
            }
            _ => {
                if let Some(id) = s.read(|st| st.alerts.iter().find(|a| !a.acknowledged).map(|a| a.id)) {
                    s.acknowledge_alert(id).map_err(|e| e.to_string())?;
                }
            }
        }
    }
    Ok(())
}

fn event_log_replay() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1095);
    let mut runs = 0;
    for _ in 0..40 {
        let s = Service::in_memory(ServiceConfig::default(), stepping()).map_err(|e| e.to_string())?;
        s.seed_pilot_patients().map_err(|e| e.to_string())?;
        random_run(&s, &mut rng)?;
        matches_replay(&s)?;
        runs += 1;
    }

    // File-backed: a CLI run, then more work in-process, then a reopen.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = Command::new(env!("CARGO_BIN_EXE_pulse"))
        .env("PULSE_DATA_DIR", dir.path())
        .args(["call", "--patient", "pilot-07", "--script", GOLDEN_FILE])
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "pulse call failed");
    let cfg = ServiceConfig {
        data_dir: dir.path().to_path_buf(),
        ..ServiceConfig::default()
    };
    let backend = FileBackend::open(dir.path()).map_err(|e| e.to_string())?;
    let live = Service::new(cfg.clone(), Box::new(backend), stepping()).map_err(|e| e.to_string())?;
    random_run(&live, &mut rng)?;
    matches_replay(&live)?;
    let digest = live.state_digest();
    drop(live);
    let reopened = Service::open(cfg).map_err(|e| e.to_string())?;
    ensure!(reopened.state_digest() == digest, "reopened store differs");
    runs += 1;
    Ok(format!("{runs} runs replay to identical digests"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("golden-transcript", golden_transcript),
        ("economic-arithmetic", economic_arithmetic),
        ("care-allocation", care_allocation),
        ("stabilization-readmissions", stabilization_lowers_readmissions),
        ("cache-accounting", cache_accounting),
        ("scheduler-safety", scheduler_safety),
        ("analytics", analytics),
        ("event-log-replay", event_log_replay),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", 8 - failed, 8);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
