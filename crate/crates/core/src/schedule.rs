//! Deterministic decreasing step-size sequences `η_1 ≥ η_2 ≥ … > 0` and
//! their grid times `t_n = η_1 + … + η_n`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(
    feature = "serde",
    serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)
)]
pub enum StepSchedule {
    /// `η_n = eta / n^gamma`
    Polynomial { eta: f64, gamma: f64 },
    /// `η_n = values[n - 1]`
    Explicit { values: Vec<f64> },
}

impl StepSchedule {
    pub fn polynomial(eta: f64, gamma: f64) -> Result<Self> {
        let s = StepSchedule::Polynomial { eta, gamma };
        s.validate()?;
        Ok(s)
    }

    pub fn explicit(values: Vec<f64>) -> Result<Self> {
        let s = StepSchedule::Explicit { values };
        s.validate()?;
        Ok(s)
    }

    /// Parameter checks that do not depend on a horizon. Monotonicity of
    /// explicit lists is left to [`theta_min`] / [`validate_schedule`].
    pub fn validate(&self) -> Result<()> {
        match self {
            StepSchedule::Polynomial { eta, gamma } => {
                if !(*eta > 0.0 && eta.is_finite()) {
                    return Err(Error::InvalidInput("polynomial schedule needs eta > 0"));
                }
                if !(*gamma > 0.0 && *gamma <= 1.0) {
                    return Err(Error::InvalidInput(
                        "polynomial schedule needs gamma in (0, 1]",
                    ));
                }
            }
            StepSchedule::Explicit { values } => {
                if values.is_empty() {
                    return Err(Error::InvalidInput("explicit schedule is empty"));
                }
                if !values.iter().all(|v| *v > 0.0 && v.is_finite()) {
                    return Err(Error::InvalidInput(
                        "explicit schedule needs positive finite steps",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Largest valid index, if the schedule is finite.
    pub fn len(&self) -> Option<u64> {
        match self {
            StepSchedule::Polynomial { .. } => None,
            StepSchedule::Explicit { values } => Some(values.len() as u64),
        }
    }

    /// `η_n` for `n ≥ 1`.
    pub fn eta(&self, n: u64) -> Result<f64> {
        if n == 0 {
            return Err(Error::InvalidIndex {
                index: 0,
                reason: "step indices start at 1",
            });
        }
        match self {
            StepSchedule::Polynomial { eta, gamma } => Ok(eta / libm::pow(n as f64, *gamma)),
            StepSchedule::Explicit { values } => {
                values
                    .get((n - 1) as usize)
                    .copied()
                    .ok_or(Error::InvalidIndex {
                        index: n,
                        reason: "beyond the end of the explicit schedule",
                    })
            }
        }
    }

    pub fn describe(&self) -> alloc::string::String {
        match self {
            StepSchedule::Polynomial { eta, gamma } => {
                alloc::format!("polynomial(eta={eta}, gamma={gamma})")
            }
            StepSchedule::Explicit { values } => alloc::format!("explicit({} steps)", values.len()),
        }
    }
}

/// Walks the grid `(n, η_n, t_n)` for `n = 1, 2, …` with compensated
/// accumulation of `t_n`.
#[derive(Debug, Clone)]
pub struct GridClock<'a> {
    schedule: &'a StepSchedule,
    n: u64,
    time: CompensatedSum,
}

impl<'a> GridClock<'a> {
    pub fn new(schedule: &'a StepSchedule) -> Self {
        Self {
            schedule,
            n: 0,
            time: CompensatedSum::new(),
        }
    }

    pub fn index(&self) -> u64 {
        self.n
    }

    pub fn time(&self) -> f64 {
        self.time.value()
    }

    /// Advances to the next grid point, returning `(n, η_n, t_n)`.
    pub fn advance(&mut self) -> Result<(u64, f64, f64)> {
        let eta = self.schedule.eta(self.n + 1)?;
        self.n += 1;
        self.time.add(eta);
        Ok((self.n, eta, self.time.value()))
    }
}

/// `t_n`, with `t_0 = 0`.
pub fn grid_time(schedule: &StepSchedule, n: u64) -> Result<f64> {
    let mut clock = GridClock::new(schedule);
    for _ in 0..n {
        clock.advance()?;
    }
    Ok(clock.time())
}

/// All grid times `t_0, …, t_n`.
pub fn grid_times(schedule: &StepSchedule, n: u64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n as usize + 1);
    out.push(0.0);
    let mut clock = GridClock::new(schedule);
    for _ in 0..n {
        out.push(clock.advance()?.2);
    }
    Ok(out)
}

/// Smallest index `n` with `t_n ≥ time` (within a relative `1e-12`).
pub fn first_index_reaching(schedule: &StepSchedule, time: f64, max_n: u64) -> Result<u64> {
    if time <= 0.0 {
        return Ok(0);
    }
    let mut clock = GridClock::new(schedule);
    while clock.index() < max_n {
        let (n, _, t) = clock.advance()?;
        if t >= time * (1.0 - 1e-12) {
            return Ok(n);
        }
    }
    Err(Error::InvalidInput(
        "checkpoint time is not reached within the step budget",
    ))
}

/// `max_{2 ≤ n ≤ N} (η_{n−1} − η_n) / η_n²`.
pub fn theta_min(schedule: &StepSchedule, n_max: u64) -> Result<f64> {
    if n_max < 2 {
        return Err(Error::InvalidInput("theta_min needs N >= 2"));
    }
    let mut prev = schedule.eta(1)?;
    let mut worst = 0.0_f64;
    for n in 2..=n_max {
        let cur = schedule.eta(n)?;
        if cur > prev {
            return Err(Error::NonMonotone { index: n });
        }
        worst = worst.max((prev - cur) / cur / cur);
        prev = cur;
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScheduleReport {
    pub n_checked: u64,
    pub monotone_ok: bool,
    /// First `n` with `η_n > η_{n−1}`.
    pub first_non_monotone: Option<u64>,
    pub vanishing_ok: bool,
    pub divergence_ok: bool,
    /// Whether the two asymptotic conditions were only checked on a finite
    /// prefix (explicit schedules) rather than certified analytically.
    pub heuristic: bool,
    pub theta_min: Option<f64>,
    pub theta: f64,
    pub horizon: f64,
    pub eta_last: f64,
    pub t_last: f64,
    pub pass: bool,
}

/// Checks the step-size conditions on the prefix `1..=N` against a given `θ`.
pub fn validate_schedule(
    schedule: &StepSchedule,
    n_max: u64,
    theta: f64,
    horizon: f64,
) -> Result<ScheduleReport> {
    if n_max < 2 {
        return Err(Error::InvalidInput("validate_schedule needs N >= 2"));
    }
    schedule.validate()?;
    let n_checked = schedule.len().map_or(n_max, |len| len.min(n_max));

    let mut clock = GridClock::new(schedule);
    let (_, eta_first, _) = clock.advance()?;
    let mut prev = eta_first;
    let mut first_non_monotone = None;
    let mut theta_seen = 0.0_f64;
    let mut eta_last = eta_first;
    for _ in 2..=n_checked {
        let (n, cur, _) = clock.advance()?;
        if cur > prev && first_non_monotone.is_none() {
            first_non_monotone = Some(n);
        }
        theta_seen = theta_seen.max((prev - cur) / cur / cur);
        prev = cur;
        eta_last = cur;
    }
    let t_last = clock.time();
    let monotone_ok = first_non_monotone.is_none();

    let (vanishing_ok, divergence_ok, heuristic) = match schedule {
        StepSchedule::Polynomial { gamma, .. } => (true, *gamma <= 1.0, false),
        StepSchedule::Explicit { .. } => (eta_last < eta_first, t_last >= horizon, true),
    };
    let theta_min = monotone_ok.then_some(theta_seen);
    let pass =
        monotone_ok && vanishing_ok && divergence_ok && theta_min.is_some_and(|t| t <= theta);
    Ok(ScheduleReport {
        n_checked,
        monotone_ok,
        first_non_monotone,
        vanishing_ok,
        divergence_ok,
        heuristic,
        theta_min,
        theta,
        horizon,
        eta_last,
        t_last,
        pass,
    })
}
