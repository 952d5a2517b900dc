//! Cost-utility arithmetic, severity-based care allocation and the cohort
//! trajectory simulator.

use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EconError {
    #[error("human care cost must be positive, got {0}")]
    NonPositiveHumanCost(f64),
    #[error("QALYs are equal ({0}); the ratio is undefined")]
    EqualQalys(f64),
    #[error("QALYs must be non-negative")]
    NegativeQaly,
    #[error("cohort is empty; the cost reduction factor is undefined")]
    EmptyCohort,
    #[error("discount rate must exceed -1, got {0}")]
    InvalidDiscountRate(f64),
    #[error("severity {0} is outside [0,1]")]
    SeverityOutOfRange(f64),
    #[error("thresholds must satisfy 0 < S_l < S_m < S_h < 1, got ({0}, {1}, {2})")]
    InvalidThresholds(f64, f64, f64),
    #[error("invalid dynamics: {0}")]
    InvalidDynamics(String),
    #[error("invalid config: {0}")]
    Config(String),
}

/// Rounds to currency precision.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Percentage cost reduction of AI care against human care.
pub fn cost_efficiency(c_h: f64, c_a: f64) -> Result<f64, EconError> {
    if c_h <= 0.0 || c_h.is_nan() {
        return Err(EconError::NonPositiveHumanCost(c_h));
    }
    Ok((c_h - c_a) / c_h * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CareCosts {
    pub c_h: f64,
    pub c_a: f64,
    pub qaly_h: f64,
    pub qaly_a: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IcerLabel {
    /// Cheaper and more effective.
    Dominant,
    /// Costlier and less effective.
    Dominated,
    CostlierMoreEffective,
    CheaperLessEffective,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Icer {
    /// Currency per QALY gained.
    pub value: f64,
    pub label: IcerLabel,
}

impl fmt::Display for Icer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}/QALY ({:?})", self.value, self.label)
    }
}

pub fn icer(costs: &CareCosts) -> Result<Icer, EconError> {
    if costs.qaly_a < 0.0 || costs.qaly_h < 0.0 {
        return Err(EconError::NegativeQaly);
    }
    let dq = costs.qaly_a - costs.qaly_h;
    if dq == 0.0 {
        return Err(EconError::EqualQalys(costs.qaly_a));
    }
    let dc = costs.c_a - costs.c_h;
    let label = match (dc < 0.0, dq > 0.0) {
        (true, true) => IcerLabel::Dominant,
        (false, false) => IcerLabel::Dominated,
        (false, true) => IcerLabel::CostlierMoreEffective,
        (true, false) => IcerLabel::CheaperLessEffective,
    };
    Ok(Icer { value: dc / dq, label })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortEconConfig {
    pub n_p: u64,
    /// Traditional monitoring cost per patient per month.
    pub c_m: f64,
    /// Fixed AI deployment cost.
    pub f: f64,
    /// AI variable cost per patient per month.
    pub v_a: f64,
    pub r: f64,
    /// Per-period (benefit, cost) flows starting at t = 0.
    #[serde(default)]
    pub flows: Vec<(f64, f64)>,
}

impl CohortEconConfig {
    /// Non-fatal findings, e.g. AI variable cost not below monitoring cost.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.v_a >= self.c_m {
            out.push(format!(
                "AI variable cost {} is not below monitoring cost {}",
                self.v_a, self.c_m
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitoringCosts {
    pub c_human: f64,
    pub c_ai: f64,
    /// Percentage reduction.
    pub r: f64,
}

pub fn monitoring_costs(cfg: &CohortEconConfig) -> Result<MonitoringCosts, EconError> {
    if cfg.n_p == 0 {
        return Err(EconError::EmptyCohort);
    }
    let n = cfg.n_p as f64;
    let c_human = n * cfg.c_m;
    let c_ai = cfg.f + n * cfg.v_a;
    if c_human <= 0.0 {
        return Err(EconError::NonPositiveHumanCost(c_human));
    }
    Ok(MonitoringCosts {
        c_human,
        c_ai,
        r: (c_human - c_ai) / c_human * 100.0,
    })
}

/// Discounted sum of net flows, the first flow undiscounted.
pub fn npv(flows: &[(f64, f64)], r: f64) -> Result<f64, EconError> {
    if r <= -1.0 || r.is_nan() {
        return Err(EconError::InvalidDiscountRate(r));
    }
    let mut factor = 1.0;
    let mut total = 0.0;
    for (b, c) in flows {
        total += (b - c) / factor;
        factor *= 1.0 + r;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CareLevel {
    AI,
    Caregiver,
    Nurse,
    Physician,
}

impl CareLevel {
    pub const ALL: [CareLevel; 4] = [CareLevel::Physician, CareLevel::Nurse, CareLevel::Caregiver, CareLevel::AI];
}

impl fmt::Display for CareLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityThresholds {
    pub s_l: f64,
    pub s_m: f64,
    pub s_h: f64,
}

impl Default for SeverityThresholds {
    fn default() -> Self {
        Self {
            s_l: 0.2,
            s_m: 0.5,
            s_h: 0.8,
        }
    }
}

impl SeverityThresholds {
    pub fn new(s_l: f64, s_m: f64, s_h: f64) -> Result<Self, EconError> {
        let t = Self { s_l, s_m, s_h };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), EconError> {
        let Self { s_l, s_m, s_h } = *self;
        if 0.0 < s_l && s_l < s_m && s_m < s_h && s_h < 1.0 {
            Ok(())
        } else {
            Err(EconError::InvalidThresholds(s_l, s_m, s_h))
        }
    }
}

pub fn assign_care_level(s: f64, t: &SeverityThresholds) -> Result<CareLevel, EconError> {
    if !(0.0..=1.0).contains(&s) {
        return Err(EconError::SeverityOutOfRange(s));
    }
    Ok(if s > t.s_h {
        CareLevel::Physician
    } else if s > t.s_m {
        CareLevel::Nurse
    } else if s > t.s_l {
        CareLevel::Caregiver
    } else {
        CareLevel::AI
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: u32,
    pub s: f64,
    pub care: CareLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub patient_id: String,
    pub samples: Vec<Sample>,
    pub readmissions: u32,
}

impl Trajectory {
    /// Labels a severity series and counts readmissions.
    pub fn from_severities(
        patient_id: impl Into<String>,
        severities: &[f64],
        thresholds: &SeverityThresholds,
    ) -> Result<Self, EconError> {
        let samples = severities
            .iter()
            .enumerate()
            .map(|(t, s)| {
                Ok(Sample {
                    t: t as u32,
                    s: *s,
                    care: assign_care_level(*s, thresholds)?,
                })
            })
            .collect::<Result<Vec<_>, EconError>>()?;
        let readmissions = count_readmissions(&samples);
        Ok(Self {
            patient_id: patient_id.into(),
            samples,
            readmissions,
        })
    }
}

/// Entries into physician care by a patient who has already left it once.
pub fn count_readmissions(samples: &[Sample]) -> u32 {
    let mut was_physician = false;
    let mut count = 0;
    for w in samples.windows(2) {
        was_physician |= w[0].care == CareLevel::Physician;
        if was_physician && w[0].care != CareLevel::Physician && w[1].care == CareLevel::Physician {
            count += 1;
        }
    }
    count
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Dynamics {
    /// Deterministic severity change per period.
    pub drift: f64,
    /// Standard deviation of the per-period Gaussian shock.
    pub noise: f64,
    /// Severity reduction per period while under AI care.
    pub ai_stabilization: f64,
    pub initial_severity: f64,
    /// Severity reached after one period of physician treatment (plus
    /// noise). `None` applies the plain random walk under every care level.
    pub treatment_target: Option<f64>,
}

impl Default for Dynamics {
    fn default() -> Self {
        Self {
            drift: 0.02,
            noise: 0.03,
            ai_stabilization: 0.05,
            initial_severity: 0.9,
            treatment_target: Some(0.15),
        }
    }
}

impl Dynamics {
    pub fn validate(&self) -> Result<(), EconError> {
        let bad = |m: &str| Err(EconError::InvalidDynamics(m.to_string()));
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise scale must be a non-negative number");
        }
        if !(self.ai_stabilization >= 0.0) {
            return bad("ai_stabilization must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.initial_severity) {
            return bad("initial severity must lie in [0,1]");
        }
        if self.treatment_target.is_some_and(|t| !(0.0..=1.0).contains(&t)) {
            return bad("treatment target must lie in [0,1]");
        }
        if !self.drift.is_finite() {
            return bad("drift must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnitCosts {
    pub physician: f64,
    pub nurse: f64,
    pub caregiver: f64,
    pub ai: f64,
}

impl Default for UnitCosts {
    fn default() -> Self {
        Self {
            physician: 500.0,
            nurse: 150.0,
            caregiver: 40.0,
            ai: 5.0,
        }
    }
}

impl UnitCosts {
    pub fn of(&self, level: CareLevel) -> f64 {
        match level {
            CareLevel::Physician => self.physician,
            CareLevel::Nurse => self.nurse,
            CareLevel::Caregiver => self.caregiver,
            CareLevel::AI => self.ai,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub care_level: CareLevel,
    pub person_periods: u64,
    pub unit_cost: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    pub total: f64,
    pub mean_readmissions: f64,
}

impl CostReport {
    pub fn from_trajectories(trajectories: &[Trajectory], unit_costs: &UnitCosts) -> Self {
        let mut periods: BTreeMap<CareLevel, u64> = BTreeMap::new();
        for s in trajectories.iter().flat_map(|t| &t.samples) {
            *periods.entry(s.care).or_default() += 1;
        }
        let rows: Vec<CostRow> = CareLevel::ALL
            .into_iter()
            .map(|level| {
                let n = periods.get(&level).copied().unwrap_or(0);
                let unit_cost = unit_costs.of(level);
                CostRow {
                    care_level: level,
                    person_periods: n,
                    unit_cost,
                    total: round2(n as f64 * unit_cost),
                }
            })
            .collect();
        let total = round2(rows.iter().map(|r| r.total).sum());
        let mean_readmissions = if trajectories.is_empty() {
            0.0
        } else {
            trajectories.iter().map(|t| f64::from(t.readmissions)).sum::<f64>() / trajectories.len() as f64
        };
        Self {
            rows,
            total,
            mean_readmissions,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["care_level", "person_periods", "unit_cost", "total"])
            .expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.care_level.to_string(),
                r.person_periods.to_string(),
                format!("{:.2}", r.unit_cost),
                format!("{:.2}", r.total),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<10} {:>14} {:>10} {:>14}\n", "care", "person-periods", "unit", "total");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<10} {:>14} {:>10.2} {:>14.2}\n",
                r.care_level.to_string(),
                r.person_periods,
                r.unit_cost,
                r.total
            ));
        }
        out.push_str(&format!("{:<10} {:>14} {:>10} {:>14.2}\n", "total", "", "", self.total));
        out.push_str(&format!("mean readmissions per patient: {:.3}\n", self.mean_readmissions));
        out
    }
}

/// One row per (patient, t, S, care) for external plotting.
pub fn trajectories_csv(trajectories: &[Trajectory]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["patient_id", "t", "severity", "care"]).expect("in-memory write");
    for tr in trajectories {
        for s in &tr.samples {
            w.write_record([
                tr.patient_id.clone(),
                s.t.to_string(),
                format!("{:.6}", s.s),
                s.care.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub patients: u32,
    pub periods: u32,
    pub seed: u64,
    pub thresholds: SeverityThresholds,
    pub dynamics: Dynamics,
    pub unit_costs: UnitCosts,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            patients: 100,
            periods: 52,
            seed: 1,
            thresholds: SeverityThresholds::default(),
            dynamics: Dynamics::default(),
            unit_costs: UnitCosts::default(),
        }
    }
}

impl SimulationConfig {
    pub fn from_toml(text: &str) -> Result<Self, EconError> {
        toml::from_str(text).map_err(|e| EconError::Config(e.to_string()))
    }
}

/// Seeded cohort simulation. Each patient draws from its own ChaCha stream,
/// so results do not depend on iteration order.
///
/// Outside physician care severity follows
/// `S' = clamp(S + drift + shock - ai_stabilization * [care = AI])`.
/// Under physician care with a treatment target set, `S' = clamp(target + shock)`.
pub fn simulate_cohort(cfg: &SimulationConfig) -> Result<(Vec<Trajectory>, CostReport), EconError> {
    cfg.thresholds.validate()?;
    cfg.dynamics.validate()?;
    if cfg.periods == 0 {
        return Err(EconError::InvalidDynamics("at least one period is required".into()));
    }
    let d = cfg.dynamics;
    let shock = Normal::new(0.0, d.noise).map_err(|e| EconError::InvalidDynamics(e.to_string()))?;
    let mut trajectories = Vec::with_capacity(cfg.patients as usize);
    for p in 0..cfg.patients {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(u64::from(p));
        let mut s = d.initial_severity;
        let mut severities = Vec::with_capacity(cfg.periods as usize);
        for _ in 0..cfg.periods {
            severities.push(s);
            let care = assign_care_level(s, &cfg.thresholds)?;
            let eps = shock.sample(&mut rng);
            s = match (care, d.treatment_target) {
                (CareLevel::Physician, Some(target)) => target + eps,
                (CareLevel::AI, _) => s + d.drift + eps - d.ai_stabilization,
                _ => s + d.drift + eps,
            }
            .clamp(0.0, 1.0);
        }
        trajectories.push(Trajectory::from_severities(format!("patient-{p:03}"), &severities, &cfg.thresholds)?);
    }
    let report = CostReport::from_trajectories(&trajectories, &cfg.unit_costs);
    Ok((trajectories, report))
}

/// Three illustrative trajectories: two stabilise after treatment, the
/// third relapses and is readmitted.
pub fn illustrative_trajectories() -> Vec<Trajectory> {
    let t = SeverityThresholds::default();
    let series: [(&str, &[f64]); 3] = [
        ("patient-1", &[0.92, 0.86, 0.64, 0.45, 0.30, 0.19, 0.15, 0.13, 0.12, 0.12, 0.11, 0.11]),
        ("patient-2", &[0.88, 0.70, 0.48, 0.33, 0.45, 0.62, 0.78, 0.86, 0.91, 0.66, 0.41, 0.24]),
        ("patient-3", &[0.95, 0.90, 0.72, 0.52, 0.38, 0.26, 0.18, 0.16, 0.14, 0.15, 0.13, 0.12]),
    ];
    series
        .iter()
        .map(|(id, s)| Trajectory::from_severities(*id, s, &t).expect("fixture severities are valid"))
        .collect()
}
