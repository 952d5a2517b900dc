//! Outbound call planning under patient call windows, with per-period
//! capacity held back for inbound calls.

use std::sync::Mutex;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DomainError, PatientProfile};

#[derive(Debug, Error, PartialEq)]
pub enum SchedulerError {
    #[error("capacity must be positive")]
    ZeroCapacity,
    #[error("forecast values must be non-negative, got {0} at period {1}")]
    NegativeForecast(f64, usize),
    #[error("spike multiplier must be at least 1, got {0}")]
    InvalidMultiplier(f64),
    #[error("period length must be positive")]
    InvalidPeriod,
    #[error("forecast file: {0}")]
    Forecast(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InboundForecast {
    /// Expected inbound arrivals per period.
    pub expected: Vec<f64>,
    pub spike_multiplier: f64,
}

impl InboundForecast {
    pub fn new(expected: Vec<f64>, spike_multiplier: f64) -> Result<Self, SchedulerError> {
        let f = Self {
            expected,
            spike_multiplier,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn flat(periods: usize, expected: f64) -> Self {
        Self {
            expected: vec![expected; periods],
            spike_multiplier: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), SchedulerError> {
        if !(self.spike_multiplier >= 1.0) {
            return Err(SchedulerError::InvalidMultiplier(self.spike_multiplier));
        }
        if let Some((i, v)) = self.expected.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(SchedulerError::NegativeForecast(*v, i));
        }
        Ok(())
    }

    /// Reads `period,expected` rows (header required), ordered by period.
    pub fn from_csv(text: &str, spike_multiplier: f64) -> Result<Self, SchedulerError> {
        #[derive(Deserialize)]
        struct Row {
            period: usize,
            expected: f64,
        }
        let mut rows: Vec<Row> = csv::Reader::from_reader(text.as_bytes())
            .deserialize()
            .collect::<Result<_, _>>()
            .map_err(|e| SchedulerError::Forecast(e.to_string()))?;
        rows.sort_by_key(|r| r.period);
        let len = rows.last().map(|r| r.period + 1).unwrap_or(0);
        let mut expected = vec![0.0; len];
        for r in rows {
            expected[r.period] = r.expected;
        }
        Self::new(expected, spike_multiplier)
    }

    /// Expected arrivals after the spike multiplier, 0 beyond the forecast.
    pub fn peak(&self, period: usize) -> f64 {
        self.expected.get(period).copied().unwrap_or(0.0) * self.spike_multiplier
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodAllocation {
    pub inbound_reserve: u32,
    pub outbound_budget: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub periods: Vec<PeriodAllocation>,
    /// Backlog calls that do not fit in the summed outbound budget.
    pub shortfall: u32,
}

impl Allocation {
    pub fn total_budget(&self) -> u64 {
        self.periods.iter().map(|p| u64::from(p.outbound_budget)).sum()
    }
}

/// Splits each period between inbound reserve and outbound budget:
/// `reserve = min(capacity, ceil(expected * multiplier))`.
pub fn mix_workloads(
    forecast: &InboundForecast,
    periods: usize,
    backlog: u32,
    capacity: u32,
) -> Result<Allocation, SchedulerError> {
    if capacity == 0 {
        return Err(SchedulerError::ZeroCapacity);
    }
    forecast.validate()?;
    let periods: Vec<PeriodAllocation> = (0..periods)
        .map(|t| {
            let need = forecast.peak(t).ceil();
            let reserve = if need >= f64::from(capacity) { capacity } else { need as u32 };
            PeriodAllocation {
                inbound_reserve: reserve,
                outbound_budget: capacity - reserve,
            }
        })
        .collect();
    let budget: u64 = periods.iter().map(|p| u64::from(p.outbound_budget)).sum();
    let shortfall = u64::from(backlog).saturating_sub(budget) as u32;
    Ok(Allocation { periods, shortfall })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Horizon {
    pub start: DateTime<Utc>,
    pub periods: usize,
    pub period_minutes: i64,
}

impl Horizon {
    pub fn hourly(start: DateTime<Utc>, periods: usize) -> Self {
        Self {
            start,
            periods,
            period_minutes: 60,
        }
    }

    pub fn period_start(&self, t: usize) -> DateTime<Utc> {
        self.start + Duration::minutes(self.period_minutes * t as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    Outbound,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub patient_id: String,
    pub start: DateTime<Utc>,
    pub period: usize,
    pub channel: Channel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallPlan {
    pub horizon: Horizon,
    /// Ordered by period, then patient id.
    pub slots: Vec<Slot>,
    pub capacity_profile: Vec<u32>,
    pub inbound_reserve: Vec<u32>,
    /// Patients whose window meets no period with spare capacity; they roll
    /// over to the next horizon.
    pub unplaced: Vec<String>,
}

impl CallPlan {
    pub fn outbound_in(&self, period: usize) -> usize {
        self.slots.iter().filter(|s| s.period == period).count()
    }

    /// `patient_id,utc_start,local_start,period` rows.
    pub fn to_csv(&self, patients: &[PatientProfile]) -> Result<String, SchedulerError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["patient_id", "utc_start", "local_start", "period"])
            .map_err(|e| SchedulerError::Forecast(e.to_string()))?;
        for s in &self.slots {
            let local = match patients.iter().find(|p| p.id == s.patient_id) {
                Some(p) => p.local_time(s.start)?.to_rfc3339(),
                None => String::new(),
            };
            w.write_record([s.patient_id.clone(), s.start.to_rfc3339(), local, s.period.to_string()])
                .map_err(|e| SchedulerError::Forecast(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| SchedulerError::Forecast(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf8"))
    }
}

/// Periods in which a patient may be called, i.e. whose start falls in the
/// patient's local window.
pub fn eligible_periods(patient: &PatientProfile, horizon: &Horizon) -> Result<Vec<usize>, SchedulerError> {
    let tz = patient.tz()?;
    Ok((0..horizon.periods)
        .filter(|t| {
            let local = horizon.period_start(*t).with_timezone(&tz).time();
            patient.allowed_call_window.contains(local)
        })
        .collect())
}

/// Places at most one outbound call per patient.
///
/// Each patient tries its eligible periods from lowest to highest forecast
/// (ties by period index). When a period is full, the planner tries to move
/// one of its occupants to another of their periods (augmenting path), so the
/// number of placed calls is the maximum achievable under the budgets.
pub fn plan_outbound(
    patients: &[PatientProfile],
    horizon: &Horizon,
    capacity: u32,
    forecast: &InboundForecast,
) -> Result<CallPlan, SchedulerError> {
    if horizon.period_minutes <= 0 {
        return Err(SchedulerError::InvalidPeriod);
    }
    let alloc = mix_workloads(forecast, horizon.periods, patients.len() as u32, capacity)?;
    let budgets: Vec<u32> = alloc.periods.iter().map(|p| p.outbound_budget).collect();
    let prefs = patients
        .iter()
        .map(|p| {
            let mut periods = eligible_periods(p, horizon)?;
            periods.retain(|t| budgets[*t] > 0);
            periods.sort_by(|a, b| forecast.peak(*a).total_cmp(&forecast.peak(*b)).then(a.cmp(b)));
            Ok(periods)
        })
        .collect::<Result<Vec<_>, SchedulerError>>()?;

    let assignment = max_assignment(&prefs, &budgets);
    let mut slots: Vec<Slot> = Vec::new();
    let mut unplaced = Vec::new();
    for (p, a) in patients.iter().zip(&assignment) {
        match a {
            Some(t) => slots.push(Slot {
                patient_id: p.id.clone(),
                start: horizon.period_start(*t),
                period: *t,
                channel: Channel::Outbound,
            }),
            None => unplaced.push(p.id.clone()),
        }
    }
    slots.sort_by(|a, b| a.period.cmp(&b.period).then_with(|| a.patient_id.cmp(&b.patient_id)));
    Ok(CallPlan {
        horizon: *horizon,
        slots,
        capacity_profile: vec![capacity; horizon.periods],
        inbound_reserve: alloc.periods.iter().map(|p| p.inbound_reserve).collect(),
        unplaced,
    })
}

/// Capacitated bipartite matching by augmenting paths. `prefs[i]` lists the
/// periods patient `i` accepts in preference order.
fn max_assignment(prefs: &[Vec<usize>], budgets: &[u32]) -> Vec<Option<usize>> {
    let mut assigned: Vec<Option<usize>> = vec![None; prefs.len()];
    let mut occupants: Vec<Vec<usize>> = vec![Vec::new(); budgets.len()];

    fn augment(
        i: usize,
        prefs: &[Vec<usize>],
        budgets: &[u32],
        visited: &mut [bool],
        assigned: &mut [Option<usize>],
        occupants: &mut [Vec<usize>],
    ) -> bool {
        for &t in &prefs[i] {
            if (occupants[t].len() as u32) < budgets[t] {
                occupants[t].push(i);
                assigned[i] = Some(t);
                return true;
            }
        }
        for &t in &prefs[i] {
            if visited[t] {
                continue;
            }
            visited[t] = true;
            for k in 0..occupants[t].len() {
                let j = occupants[t][k];
                if augment(j, prefs, budgets, visited, assigned, occupants) {
                    let pos = occupants[t].iter().position(|x| *x == j).expect("occupant present");
                    occupants[t][pos] = i;
                    assigned[i] = Some(t);
                    return true;
                }
            }
        }
        false
    }

    for i in 0..prefs.len() {
        let mut visited = vec![false; budgets.len()];
        augment(i, prefs, budgets, &mut visited, &mut assigned, &mut occupants);
    }
    assigned
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Admission {
    Accept,
    Queue,
    Shed,
}

/// Accept below capacity, queue within `queue_band` above it, shed beyond.
pub fn admit_inbound(current_load: u32, capacity: u32, queue_band: u32) -> Admission {
    if current_load < capacity {
        Admission::Accept
    } else if current_load < capacity.saturating_add(queue_band) {
        Admission::Queue
    } else {
        Admission::Shed
    }
}

/// Single admission authority for one capacity pool.
#[derive(Debug)]
pub struct AdmissionController {
    capacity: u32,
    queue_band: u32,
    load: Mutex<u32>,
}

impl AdmissionController {
    pub fn new(capacity: u32, queue_band: u32) -> Self {
        Self {
            capacity,
            queue_band,
            load: Mutex::new(0),
        }
    }

    /// Decides and, unless shed, counts the call against the pool.
    pub fn admit(&self) -> Admission {
        let mut load = self.load.lock().expect("admission lock poisoned");
        let decision = admit_inbound(*load, self.capacity, self.queue_band);
        if decision != Admission::Shed {
            *load += 1;
        }
        decision
    }

    pub fn release(&self) {
        let mut load = self.load.lock().expect("admission lock poisoned");
        *load = load.saturating_sub(1);
    }

    pub fn load(&self) -> u32 {
        *self.load.lock().expect("admission lock poisoned")
    }
}

/// Calls served over the horizon when inbound arrivals are
/// `ceil(expected * multiplier)` per period: inbound answered from the
/// reserve plus the outbound calls the plan placed.
pub fn served_calls(plan: &CallPlan, forecast: &InboundForecast) -> u64 {
    (0..plan.horizon.periods)
        .map(|t| {
            let arrivals = forecast.peak(t).ceil() as u64;
            let inbound = arrivals.min(u64::from(plan.inbound_reserve[t]));
            inbound + plan.outbound_in(t) as u64
        })
        .sum()
}

/// Same as [`plan_outbound`] but with a fixed half/half split of every
/// period, used as the baseline the adaptive split is compared against.
pub fn plan_static_split(
    patients: &[PatientProfile],
    horizon: &Horizon,
    capacity: u32,
) -> Result<CallPlan, SchedulerError> {
    if capacity == 0 {
        return Err(SchedulerError::ZeroCapacity);
    }
    let outbound = capacity / 2;
    let budgets = vec![outbound; horizon.periods];
    let prefs = patients
        .iter()
        .map(|p| {
            let mut v = eligible_periods(p, horizon)?;
            v.retain(|t| budgets[*t] > 0);
            Ok(v)
        })
        .collect::<Result<Vec<_>, SchedulerError>>()?;
    let assignment = max_assignment(&prefs, &budgets);
    let mut slots: Vec<Slot> = patients
        .iter()
        .zip(&assignment)
        .filter_map(|(p, a)| {
            a.map(|t| Slot {
                patient_id: p.id.clone(),
                start: horizon.period_start(t),
                period: t,
                channel: Channel::Outbound,
            })
        })
        .collect();
    slots.sort_by(|a, b| a.period.cmp(&b.period).then_with(|| a.patient_id.cmp(&b.patient_id)));
    let unplaced = patients
        .iter()
        .zip(&assignment)
        .filter(|(_, a)| a.is_none())
        .map(|(p, _)| p.id.clone())
        .collect();
    Ok(CallPlan {
        horizon: *horizon,
        slots,
        capacity_profile: vec![capacity; horizon.periods],
        inbound_reserve: vec![capacity - outbound; horizon.periods],
        unplaced,
    })
}
