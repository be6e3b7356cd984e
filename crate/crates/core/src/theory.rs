//! Numerical checks of discounted-cost convergence and cost boundedness.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{Error, Result};

/// Per-task discount weight `gamma(tau)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "param", rename_all = "lowercase")]
pub enum GammaSchedule {
    /// `c`
    Constant(f64),
    /// `r^tau`, `0 < r < 1`
    Geometric(f64),
    /// `(1 + tau)^-p`
    Harmonic(f64),
    /// `g * tau`
    Growing(f64),
}

impl GammaSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            GammaSchedule::Constant(c) => c > 0.0 && c.is_finite(),
            GammaSchedule::Geometric(r) => r > 0.0 && r < 1.0,
            GammaSchedule::Harmonic(p) => p > 0.0 && p.is_finite(),
            GammaSchedule::Growing(g) => g > 0.0 && g.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid schedule {self}")))
        }
    }

    pub fn eval(&self, tau: f64) -> f64 {
        match *self {
            GammaSchedule::Constant(c) => c,
            GammaSchedule::Geometric(r) => r.powf(tau),
            GammaSchedule::Harmonic(p) => (1.0 + tau).powf(-p),
            GammaSchedule::Growing(g) => g * tau,
        }
    }
}

impl fmt::Display for GammaSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GammaSchedule::Constant(v) => write!(f, "constant:{v}"),
            GammaSchedule::Geometric(v) => write!(f, "geometric:{v}"),
            GammaSchedule::Harmonic(v) => write!(f, "harmonic:{v}"),
            GammaSchedule::Growing(v) => write!(f, "growing:{v}"),
        }
    }
}

/// Parses `kind:value`, e.g. `geometric:0.9`.
impl FromStr for GammaSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("schedule {s:?} is not of the form kind:value")))?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad schedule parameter {value:?}")))?;
        let schedule = match kind.trim().to_ascii_lowercase().as_str() {
            "constant" => GammaSchedule::Constant(v),
            "geometric" => GammaSchedule::Geometric(v),
            "harmonic" => GammaSchedule::Harmonic(v),
            "growing" => GammaSchedule::Growing(v),
            other => return Err(Error::InvalidArgument(format!("unknown schedule kind {other:?}"))),
        };
        schedule.validate()?;
        Ok(schedule)
    }
}

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_LADDER: [f64; 4] = [10.0, 1e2, 1e3, 1e4];
pub const DEFAULT_STEP: f64 = 0.01;

fn check_bounds(loss_lower: f64, loss_upper: f64) -> Result<()> {
    if !(loss_lower > 0.0 && loss_lower <= loss_upper && loss_upper.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "loss bounds need 0 < lower <= upper, got {loss_lower} and {loss_upper}"
        )));
    }
    Ok(())
}

fn trapezoid(schedule: &GammaSchedule, from: f64, to: f64, step: f64) -> f64 {
    if to <= from {
        return 0.0;
    }
    // Nodes sit at `from + i * step` so a longer horizon only appends panels.
    let full = ((to - from) / step * (1.0 + 1e-12)).floor() as usize;
    let node = |i: usize| from + i as f64 * step;
    let mut sum: f64 = (0..full).map(|i| 0.5 * step * (schedule.eval(node(i)) + schedule.eval(node(i + 1)))).sum();
    let last = node(full);
    if to > last {
        sum += 0.5 * (to - last) * (schedule.eval(last) + schedule.eval(to));
    }
    sum
}

/// Trapezoidal integrals of `gamma * loss_lower` and `gamma * loss_upper`
/// over `[0, horizon]`.
pub fn gamma_partial_integral(
    schedule: &GammaSchedule,
    loss_lower: f64,
    loss_upper: f64,
    horizon: f64,
    step: f64,
) -> Result<(f64, f64)> {
    schedule.validate()?;
    check_bounds(loss_lower, loss_upper)?;
    if !(step > 0.0) || !(horizon >= 0.0) {
        return Err(Error::InvalidArgument("step must be positive and horizon nonnegative".into()));
    }
    let base = trapezoid(schedule, 0.0, horizon, step);
    Ok((base * loss_lower, base * loss_upper))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Convergent,
    Divergent,
    Inconclusive,
}

/// JSON-serializable outcome of [`classify_convergence`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub schedule: GammaSchedule,
    pub loss_lower: f64,
    pub loss_upper: f64,
    pub ladder: Vec<f64>,
    pub tol: f64,
    pub verdict: Verdict,
    /// Upper-bound partial integrals at each ladder horizon.
    pub partial_values: Vec<f64>,
    /// Lower-bound partial integrals at each ladder horizon.
    pub lower_values: Vec<f64>,
    /// Successive differences of `partial_values`.
    pub cauchy_gaps: Vec<f64>,
    /// `gamma(t2) / gamma(t1)` on consecutive ladder points.
    pub ratios: Vec<f64>,
}

/// Decides convergence of the discounted cost integral from partial
/// integrals on an increasing horizon ladder.
pub fn classify_convergence(
    schedule: &GammaSchedule,
    loss_lower: f64,
    loss_upper: f64,
    ladder: &[f64],
    tol: f64,
) -> Result<ConvergenceReport> {
    schedule.validate()?;
    check_bounds(loss_lower, loss_upper)?;
    if ladder.len() < 2 || ladder.windows(2).any(|w| w[0] >= w[1]) || ladder[0] < 0.0 {
        return Err(Error::InvalidArgument("ladder must hold at least two strictly increasing horizons".into()));
    }
    // Integrate piecewise so each horizon reuses the previous partial value.
    let mut base = Vec::with_capacity(ladder.len());
    let mut acc = 0.0;
    let mut prev = 0.0;
    for &t in ladder {
        acc += trapezoid(schedule, prev, t, DEFAULT_STEP);
        base.push(acc);
        prev = t;
    }
    let partial_values: Vec<f64> = base.iter().map(|v| v * loss_upper).collect();
    let lower_values: Vec<f64> = base.iter().map(|v| v * loss_lower).collect();
    let cauchy_gaps: Vec<f64> = partial_values.windows(2).map(|w| w[1] - w[0]).collect();
    let lower_gaps: Vec<f64> = lower_values.windows(2).map(|w| w[1] - w[0]).collect();
    let ratios: Vec<f64> = ladder
        .windows(2)
        .map(|w| schedule.eval(w[1]) / schedule.eval(w[0]))
        .collect();
    let last_gap = *cauchy_gaps.last().expect("ladder has two points");
    let verdict = if last_gap.abs() < tol && ratios.iter().all(|&r| r < 1.0) {
        Verdict::Convergent
    } else if lower_gaps.windows(2).all(|w| w[1] >= w[0]) && lower_gaps[0] > 0.0 {
        Verdict::Divergent
    } else {
        Verdict::Inconclusive
    };
    Ok(ConvergenceReport {
        schedule: *schedule,
        loss_lower,
        loss_upper,
        ladder: ladder.to_vec(),
        tol,
        verdict,
        partial_values,
        lower_values,
        cauchy_gaps,
        ratios,
    })
}

/// Cost history of a training run with per-task input shifts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LyapunovTrace {
    pub j_series: Vec<f64>,
    pub dv_estimates: Vec<f64>,
    pub input_shift_norms: Vec<f64>,
}

impl LyapunovTrace {
    /// Builds the trace from a cost series and the stream it was trained on.
    /// `dv_estimates[k]` is the change in the tail sum of costs from step
    /// `k` to `k + 1`, which is `-J(k)`.
    pub fn from_costs(j_series: Vec<f64>, tasks: &[Task]) -> Result<Self> {
        if let Some(k) = j_series.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("cost series at step {k}")));
        }
        let total: f64 = j_series.iter().sum();
        let mut tail = total;
        let mut dv_estimates = Vec::with_capacity(j_series.len().saturating_sub(1));
        for j in j_series.iter().take(j_series.len().saturating_sub(1)) {
            let next = tail - j;
            dv_estimates.push(next - tail);
            tail = next;
        }
        let input_shift_norms = tasks
            .windows(2)
            .map(|w| input_shift_norm(&w[0], &w[1]))
            .collect::<Result<_>>()?;
        Ok(Self {
            j_series,
            dv_estimates,
            input_shift_norms,
        })
    }
}

/// Result of [`cost_bound_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub bounded: bool,
    pub max_cost: f64,
    pub burn_in_steps: usize,
}

pub const DEFAULT_BURN_IN: f64 = 0.2;

/// True iff every cost after the first `burn_in` fraction of steps is at
/// most `beta`.
pub fn cost_bound_check(trace: &LyapunovTrace, beta: f64, burn_in: f64) -> Result<BoundCheck> {
    if trace.j_series.is_empty() {
        return Err(Error::InvalidArgument("empty cost trace".into()));
    }
    if !(0.0..1.0).contains(&burn_in) {
        return Err(Error::InvalidArgument(format!("burn-in fraction must lie in [0, 1), got {burn_in}")));
    }
    let burn_in_steps = (burn_in * trace.j_series.len() as f64).floor() as usize;
    let max_cost = trace.j_series[burn_in_steps..]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(BoundCheck {
        bounded: max_cost <= beta,
        max_cost,
        burn_in_steps,
    })
}

/// Euclidean distance between the mean training inputs of two tasks.
pub fn input_shift_norm(a: &Task, b: &Task) -> Result<f64> {
    if a.input_dim() != b.input_dim() {
        return Err(Error::shape("input shift", a.input_dim(), b.input_dim()));
    }
    let (ma, mb) = (a.train.x.column_means(), b.train.x.column_means());
    Ok(ma.iter().zip(&mb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
}
