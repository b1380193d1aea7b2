//! Evaluation math: behavior distances, the compliance predicate, α, CDF
//! curves and one-way ANOVA.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Command, GlobalPlan};

/// Undirected Hausdorff distance between the point sets of two plans, by
/// exhaustive double loop.
pub fn hausdorff(a: &GlobalPlan, b: &GlobalPlan) -> Result<f64> {
    if a.points.is_empty() || b.points.is_empty() {
        return Err(Error::DegeneratePlan);
    }
    let directed = |p: &GlobalPlan, q: &GlobalPlan| {
        p.points
            .iter()
            .map(|u| {
                q.points.iter().map(|w| (u.x - w.x) * (u.x - w.x) + (u.y - w.y) * (u.y - w.y)).fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    Ok(directed(a, b).max(directed(b, a)).sqrt())
}

pub fn l2_command(a: Command, b: Command) -> f64 {
    ((a.v - b.v).powi(2) + (a.omega - b.omega).powi(2)).sqrt()
}

/// Definition of compliance adopted throughout: d ≤ ε.
pub fn is_compliant(d: f64, eps: f64) -> bool {
    d <= eps
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Global,
    Local,
}

/// A behavior at one of the two comparison levels.
#[derive(Debug, Clone, Copy)]
pub enum Behavior<'a> {
    Plan(&'a GlobalPlan),
    Command(Command),
}

pub fn per_step_distance(planner: Behavior<'_>, demo: Behavior<'_>, level: Level) -> Result<f64> {
    match (level, planner, demo) {
        (Level::Global, Behavior::Plan(a), Behavior::Plan(b)) => hausdorff(a, b),
        (Level::Local, Behavior::Command(a), Behavior::Command(b)) => Ok(l2_command(a, b)),
        _ => Err(Error::LevelMismatch),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplianceRecord {
    pub step: usize,
    pub d_global: f64,
    pub d_local: f64,
    pub compliant: bool,
}

impl ComplianceRecord {
    pub fn new(step: usize, d_global: f64, d_local: f64, eps: f64) -> Self {
        Self { step, d_global, d_local, compliant: is_compliant(d_global, eps) }
    }
}

/// Fraction of distances within `eps`.
pub fn alpha(ds: &[f64], eps: f64) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyRecords);
    }
    Ok(ds.iter().filter(|&&d| is_compliant(d, eps)).count() as f64 / ds.len() as f64)
}

/// α over the global-level distances of records.
pub fn alpha_records(records: &[ComplianceRecord], eps: f64) -> Result<f64> {
    alpha(&records.iter().map(|r| r.d_global).collect::<Vec<_>>(), eps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfCurve {
    pub thresholds: Vec<f64>,
    pub fractions: Vec<f64>,
}

/// Empirical CDF at each threshold, by binary search in the sorted sample.
pub fn cdf(ds: &[f64], thresholds: &[f64]) -> Result<CdfCurve> {
    if thresholds.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument("thresholds must be strictly ascending".into()));
    }
    let mut sorted = ds.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len().max(1) as f64;
    let fractions = thresholds.iter().map(|&t| sorted.partition_point(|&d| d <= t) as f64 / n).collect();
    Ok(CdfCurve { thresholds: thresholds.to_vec(), fractions })
}

/// `start, start+step, …` up to `end` inclusive. Points are computed by
/// index and snapped to 9 decimals, so decimal thresholds such as 3.0 are
/// represented exactly (30 × 0.1 alone overshoots by one ulp).
pub fn threshold_grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    let n = ((end - start) / step).round() as usize;
    (0..=n).map(|k| ((start + k as f64 * step) * 1e9).round() / 1e9).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anova {
    pub f: f64,
    pub p: f64,
    pub df_between: usize,
    pub df_within: usize,
}

/// One-way ANOVA across groups.
pub fn one_way_anova(groups: &[Vec<f64>]) -> Result<Anova> {
    if groups.len() < 2 || groups.iter().any(|g| g.len() < 2) {
        return Err(Error::InvalidArgument("ANOVA needs at least two groups of two scores".into()));
    }
    let n: usize = groups.iter().map(Vec::len).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for g in groups {
        let m = g.iter().sum::<f64>() / g.len() as f64;
        ssb += g.len() as f64 * (m - grand).powi(2);
        ssw += g.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    }
    let df_between = groups.len() - 1;
    let df_within = n - groups.len();
    let msb = ssb / df_between as f64;
    let msw = ssw / df_within as f64;
    // Relative tolerance so exact-arithmetic zeros survive rounding noise.
    let scale = groups.iter().flatten().map(|x| x * x).sum::<f64>().max(1e-300);
    let ssb_zero = ssb <= 1e-24 * scale;
    let ssw_zero = ssw <= 1e-24 * scale;
    let (f, p) = match (ssb_zero, ssw_zero) {
        (true, _) => (0.0, 1.0),
        (false, true) => (f64::INFINITY, 0.0),
        _ => {
            let f = msb / msw;
            (f, f_survival(f, df_between as f64, df_within as f64))
        }
    };
    Ok(Anova { f, p, df_between, df_within })
}

/// P(F > f) for an F(d1, d2) variable.
pub fn f_survival(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    regularized_incomplete_beta(d2 / (d2 + d1 * f), d2 / 2.0, d1 / 2.0)
}

/// Lanczos approximation (g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// I_x(a, b) by the continued fraction (modified Lentz), using the symmetry
/// relation where the fraction converges slowly.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_fraction(x, a, b) / a
    } else {
        1.0 - ln_front.exp() * beta_fraction(1.0 - x, b, a) / b
    }
}

fn beta_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        d = 1.0 + aa * d;
        d = if d.abs() < TINY { TINY } else { d };
        c = 1.0 + aa / c;
        c = if c.abs() < TINY { TINY } else { c };
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
        d = 1.0 + aa * d;
        d = if d.abs() < TINY { TINY } else { d };
        c = 1.0 + aa / c;
        c = if c.abs() < TINY { TINY } else { c };
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}
