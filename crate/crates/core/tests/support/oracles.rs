//! Independent reference computations for tests. Nothing here calls into
//! the library's arithmetic: money is integer cents, ratios are exact
//! rationals over i128, and search problems are solved by enumeration.
#![allow(dead_code)]

/// An exact rational `num / den` with `den > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: i128,
    pub den: i128,
}

impl Ratio {
    pub fn new(num: i128, den: i128) -> Self {
        assert!(den != 0);
        if den < 0 {
            Self { num: -num, den: -den }
        } else {
            Self { num, den }
        }
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Value in hundredths, rounded half away from zero.
    pub fn hundredths(self) -> i128 {
        round_div(100 * self.num, self.den)
    }

    /// Distance from the nearest rounding tie, in hundredths.
    fn tie_gap(self) -> f64 {
        let r = (100 * self.num % self.den).abs();
        (2 * r - self.den).abs() as f64 / (2 * self.den) as f64
    }
}

/// `num / den` rounded half away from zero.
pub fn round_div(num: i128, den: i128) -> i128 {
    assert!(den != 0);
    let (num, den) = if den < 0 { (-num, -den) } else { (num, den) };
    let q = num / den;
    let r = num % den;
    if 2 * r.abs() >= den {
        q + num.signum()
    } else {
        q
    }
}

/// Checks that `got` equals the exact value to two decimal places: it lies
/// within 1e-9 (relative) of the exact value, and rounds to the same cent
/// unless the exact value sits within 1e-7 cent of a rounding tie, where a
/// binary float cannot say which side it is on.
pub fn check_2dp(got: f64, exact: Ratio) -> Result<(), String> {
    let x = exact.to_f64();
    if (got - x).abs() > 1e-9 * x.abs().max(1.0) {
        return Err(format!("{got} differs from exact {x}"));
    }
    let rounded = (got * 100.0).round() as i128;
    if exact.tie_gap() > 1e-7 && rounded != exact.hundredths() {
        return Err(format!("{got} rounds to {rounded} cents, exact value to {}", exact.hundredths()));
    }
    Ok(())
}

/// Cost reduction percentage, costs in cents.
pub fn cost_efficiency(c_h: i128, c_a: i128) -> Ratio {
    Ratio::new(100 * (c_h - c_a), c_h)
}

/// Currency per QALY; costs in cents, QALYs in hundredths.
pub fn icer(c_a: i128, c_h: i128, q_a: i128, q_h: i128) -> Ratio {
    // ((c_a - c_h) / 100) / ((q_a - q_h) / 100)
    Ratio::new(c_a - c_h, q_a - q_h)
}

/// (C_human, C_AI) in currency and R in percent; inputs in cents.
pub fn monitoring(n_p: i128, c_m: i128, f: i128, v_a: i128) -> (Ratio, Ratio, Ratio) {
    let human = n_p * c_m;
    let ai = f + n_p * v_a;
    (Ratio::new(human, 100), Ratio::new(ai, 100), Ratio::new(100 * (human - ai), human))
}

/// NPV in currency of net flows in cents, discount rate `p/q`, first flow
/// undiscounted. Dividing by ((q+p)/q)^t is multiplying by q^t/(q+p)^t, so
/// everything goes over the common denominator (q+p)^last.
pub fn npv(nets: &[i128], p: i128, q: i128) -> Ratio {
    if nets.is_empty() {
        return Ratio::new(0, 1);
    }
    let last = nets.len() as u32 - 1;
    let num: i128 = nets
        .iter()
        .enumerate()
        .map(|(t, n)| n * q.pow(t as u32) * (q + p).pow(last - t as u32))
        .sum();
    Ratio::new(num, 100 * (q + p).pow(last))
}

/// Care tier index (0 = AI .. 3 = Physician) by counting exceeded thresholds.
pub fn care_tier(s: f64, s_l: f64, s_m: f64, s_h: f64) -> usize {
    usize::from(s > s_l) + usize::from(s > s_m) + usize::from(s > s_h)
}

/// Readmissions as the number of physician-care runs after the first.
pub fn readmissions(is_physician: &[bool]) -> u32 {
    let mut runs = 0u32;
    let mut prev = false;
    for &p in is_physician {
        if p && !prev {
            runs += 1;
        }
        prev = p;
    }
    runs.saturating_sub(1)
}

/// Cumulative speedup of P initial tokens then k per turn over T calls, as
/// an exact fraction (baseline, processed).
pub fn geometric_speedup(p: u64, k: u64, t: u64) -> (u64, u64) {
    let baseline = t * p + k * t * (t - 1) / 2;
    let processed = p + (t - 1) * k;
    (baseline, processed)
}

/// Maximum number of patients placeable, each in one of its allowed periods,
/// with `budget[t]` places per period, by exhaustive enumeration.
pub fn max_placeable(allowed: &[Vec<usize>], budget: &[u32]) -> usize {
    fn go(i: usize, allowed: &[Vec<usize>], left: &mut [u32]) -> usize {
        if i == allowed.len() {
            return 0;
        }
        let mut best = go(i + 1, allowed, left);
        for &t in &allowed[i] {
            if left[t] > 0 {
                left[t] -= 1;
                best = best.max(1 + go(i + 1, allowed, left));
                left[t] += 1;
            }
        }
        best
    }
    go(0, allowed, &mut budget.to_vec())
}
