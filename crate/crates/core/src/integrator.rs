//! The tamed Euler–Maruyama recursion
//!
//! ```text
//! Y_{n+1} = Y_n + η_{n+1} b(Y_n) / (1 + η_{n+1}^α ∥∇b(Y_n)∥) + σ(Y_n) (B_{t_{n+1}} − B_{t_n})
//! ```
//!
//! on a decreasing schedule, a constant-step reference run, coupled one-step
//! pairs on shared Brownian paths, and the first-variation process used by
//! the Bismut–Elworthy–Li gradient estimator.
//!
//! Noise for step `n` (1-based) of path `p` is drawn from the counter
//! `(p, n)` of a stream keyed by the master seed and a [`StreamTag`], so
//! every path can be reproduced in isolation.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::linalg::{matvec, spectral_norm, Lu};
use crate::model::{DiffusionKind, SdeProblem};
use crate::numeric::{all_finite, dot, mean_and_se, norm};
use crate::rng::{NoiseStream, StreamTag};
use crate::schedule::{GridClock, StepSchedule};

/// Exponent `α` of the taming denominator `1 + η^α ∥∇b∥`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct TamingExponent(f64);

impl TamingExponent {
    /// Exponent of the scheme itself, restricted to `(0, 1/2)`.
    pub fn scheme(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha < 0.5 {
            Ok(Self(alpha))
        } else {
            Err(Error::InvalidInput(
                "taming exponent alpha must lie in (0, 1/2)",
            ))
        }
    }

    /// Exponent for reference runs, allowed in `(0, 1]`.
    pub fn reference(exponent: f64) -> Result<Self> {
        if exponent > 0.0 && exponent <= 1.0 {
            Ok(Self(exponent))
        } else {
            Err(Error::InvalidInput(
                "reference taming exponent must lie in (0, 1]",
            ))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `1 / (1 + η^α · opnorm)`
pub fn taming_factor(eta: f64, alpha: TamingExponent, opnorm: f64) -> f64 {
    1.0 / (1.0 + libm::pow(eta, alpha.0) * opnorm)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PathState {
    pub position: Vec<f64>,
    pub time: f64,
    pub step_index: u64,
}

impl PathState {
    pub fn start(x0: &[f64]) -> Self {
        Self {
            position: x0.to_vec(),
            time: 0.0,
            step_index: 0,
        }
    }
}

/// A Brownian increment over a step of length `eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseIncrement {
    pub db: Vec<f64>,
    pub eta: f64,
}

impl NoiseIncrement {
    pub fn draw(
        stream: &NoiseStream,
        path_index: u64,
        step_index: u64,
        eta: f64,
        dim: usize,
    ) -> Self {
        let mut db = vec![0.0; dim];
        stream.normals(path_index, step_index, &mut db);
        let scale = libm::sqrt(eta);
        db.iter_mut().for_each(|z| *z *= scale);
        Self { db, eta }
    }

    pub fn zero(dim: usize, eta: f64) -> Self {
        Self {
            db: vec![0.0; dim],
            eta,
        }
    }
}

/// Scratch buffers for repeated steps on one problem.
struct Stepper<'p> {
    problem: &'p dyn SdeProblem,
    d: usize,
    drift: Vec<f64>,
    jac: Vec<f64>,
    sigma: Vec<f64>,
    noise: Vec<f64>,
    db: Vec<f64>,
}

impl<'p> Stepper<'p> {
    fn new(problem: &'p dyn SdeProblem) -> Self {
        let d = problem.dim();
        Self {
            problem,
            d,
            drift: vec![0.0; d],
            jac: vec![0.0; d * d],
            sigma: vec![0.0; d * d],
            noise: vec![0.0; d],
            db: vec![0.0; d],
        }
    }

    fn draw(&mut self, stream: &NoiseStream, path_index: u64, step_index: u64, eta: f64) {
        stream.normals(path_index, step_index, &mut self.db);
        let scale = libm::sqrt(eta);
        self.db.iter_mut().for_each(|z| *z *= scale);
    }

    /// Drift multiplier at `x`: the taming factor, or 1 when untamed.
    fn factor(&mut self, x: &[f64], eta: f64, taming: Option<TamingExponent>) -> Result<f64> {
        match taming {
            None => Ok(1.0),
            Some(alpha) => {
                self.problem.drift_jacobian(x, &mut self.jac);
                let op = spectral_norm(&self.jac, self.d)?;
                let f = taming_factor(eta, alpha, op);
                #[cfg(debug_assertions)]
                {
                    let b = norm(&self.drift);
                    let disp = eta * f * b;
                    debug_assert!(disp <= eta * b * (1.0 + 1e-12));
                    if op >= 1.0 {
                        let bound = libm::pow(eta, 1.0 - alpha.0) * b / op;
                        debug_assert!(disp <= bound * (1.0 + 1e-12) + f64::MIN_POSITIVE);
                    }
                }
                Ok(f)
            }
        }
    }

    /// `x ← x + η·factor·b(x) + σ(x)·db` using `self.db`.
    fn step(
        &mut self,
        x: &mut [f64],
        eta: f64,
        taming: Option<TamingExponent>,
        step_index: u64,
    ) -> Result<()> {
        self.problem.drift(x, &mut self.drift);
        let f = self.factor(x, eta, taming)?;
        self.problem.diffusion(x, &mut self.sigma);
        matvec(&self.sigma, &self.db, &mut self.noise);
        for i in 0..self.d {
            x[i] = x[i] + eta * f * self.drift[i] + self.noise[i];
        }
        if !all_finite(x) {
            return Err(Error::Divergence {
                step_index,
                position: x.to_vec(),
            });
        }
        Ok(())
    }
}

fn check_start(problem: &dyn SdeProblem, x0: &[f64]) -> Result<()> {
    if x0.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            got: x0.len(),
        });
    }
    if !all_finite(x0) {
        return Err(Error::InvalidInput("initial point is not finite"));
    }
    Ok(())
}

/// One tamed step from `state` with the given increment.
pub fn tamed_step(
    problem: &dyn SdeProblem,
    state: &PathState,
    eta: f64,
    alpha: TamingExponent,
    noise: &NoiseIncrement,
) -> Result<PathState> {
    check_start(problem, &state.position)?;
    if !(eta > 0.0) || noise.eta != eta {
        return Err(Error::InvalidInput(
            "noise increment was drawn for a different step size",
        ));
    }
    if noise.db.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            got: noise.db.len(),
        });
    }
    let mut stepper = Stepper::new(problem);
    stepper.db.copy_from_slice(&noise.db);
    let mut position = state.position.clone();
    let step_index = state.step_index + 1;
    stepper.step(&mut position, eta, Some(alpha), step_index)?;
    Ok(PathState {
        position,
        time: state.time + eta,
        step_index,
    })
}

/// Runs the tamed scheme over `schedule` for `n_steps` steps and records
/// the position at each (sorted) checkpoint index. Index 0 is `x0`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_path(
    problem: &dyn SdeProblem,
    schedule: &StepSchedule,
    alpha: TamingExponent,
    x0: &[f64],
    n_steps: u64,
    checkpoints: &[u64],
    path_index: u64,
    master_seed: u64,
) -> Result<Vec<(u64, Vec<f64>)>> {
    check_start(problem, x0)?;
    if checkpoints.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidInput("checkpoints must be sorted"));
    }
    if checkpoints.last().is_some_and(|&c| c > n_steps) {
        return Err(Error::InvalidInput("checkpoint beyond n_steps"));
    }
    let stream = NoiseStream::new(master_seed, StreamTag::VariableStep);
    let mut stepper = Stepper::new(problem);
    let mut x = x0.to_vec();
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut next = 0;
    while next < checkpoints.len() && checkpoints[next] == 0 {
        out.push((0, x.clone()));
        next += 1;
    }
    let mut clock = GridClock::new(schedule);
    while next < checkpoints.len() {
        let (n, eta, _) = clock.advance()?;
        stepper.draw(&stream, path_index, n, eta);
        stepper.step(&mut x, eta, Some(alpha), n)?;
        while next < checkpoints.len() && checkpoints[next] == n {
            out.push((n, x.clone()));
            next += 1;
        }
    }
    Ok(out)
}

/// Settings of the constant-step run standing in for the exact law.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReferenceRun {
    pub eta_ref: f64,
    /// Taming exponent of the reference scheme; `None` runs plain Euler–Maruyama.
    pub taming: Option<TamingExponent>,
    /// Selects an independent noise stream under the reference tag.
    pub lane: u32,
}

/// Number of steps and length of the final (possibly shortened) step of a
/// constant-step run landing exactly on `t_final`.
fn constant_grid(t_final: f64, eta: f64) -> (u64, f64) {
    if t_final <= 0.0 {
        return (0, 0.0);
    }
    let n = libm::ceil(t_final / eta - 1e-9).max(1.0) as u64;
    (n, t_final - (n - 1) as f64 * eta)
}

fn step_length(j: u64, n: u64, eta: f64, last: f64) -> f64 {
    if j < n {
        eta
    } else {
        last
    }
}

/// Endpoint at `t_final` of a constant-step run from `x0`.
pub fn simulate_reference(
    problem: &dyn SdeProblem,
    t_final: f64,
    run: &ReferenceRun,
    x0: &[f64],
    path_index: u64,
    master_seed: u64,
) -> Result<Vec<f64>> {
    let mut out = simulate_reference_times(problem, &[t_final], run, x0, path_index, master_seed)?;
    Ok(out.pop().unwrap_or_default())
}

/// Positions of one constant-step run at each of the sorted `times`. Each
/// segment between consecutive times is covered by steps of `eta_ref` with
/// the last one shortened to land exactly on the next time.
pub fn simulate_reference_times(
    problem: &dyn SdeProblem,
    times: &[f64],
    run: &ReferenceRun,
    x0: &[f64],
    path_index: u64,
    master_seed: u64,
) -> Result<Vec<Vec<f64>>> {
    check_start(problem, x0)?;
    if !(run.eta_ref > 0.0) || times.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::InvalidInput(
            "reference run needs eta_ref > 0 and non-negative times",
        ));
    }
    if times.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidInput("reference times must be sorted"));
    }
    let stream = NoiseStream::with_lane(master_seed, StreamTag::Reference, run.lane);
    let mut stepper = Stepper::new(problem);
    let mut x = x0.to_vec();
    let mut out = Vec::with_capacity(times.len());
    let mut step = 0u64;
    let mut now = 0.0;
    for &t in times {
        let (n, last) = constant_grid(t - now, run.eta_ref);
        for j in 1..=n {
            let h = step_length(j, n, run.eta_ref, last);
            step += 1;
            stepper.draw(&stream, path_index, step, h);
            stepper.step(&mut x, h, run.taming, step)?;
        }
        now = t;
        out.push(x.clone());
    }
    Ok(out)
}

/// One step of length `eta` from `x` on a Brownian path resolved at
/// `eta / n_sub`. Returns `(x_fine, y_one)`: `x_fine` runs the tamed scheme
/// over the `n_sub` sub-increments, `y_one` is the frozen-coefficient
/// endpoint `x + η·factor·b(x) + σ(x)·ΔB` driven by the summed increment.
pub fn coupled_one_step(
    problem: &dyn SdeProblem,
    x: &[f64],
    eta: f64,
    alpha: TamingExponent,
    n_sub: u32,
    path_index: u64,
    master_seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_start(problem, x)?;
    if n_sub == 0 || !(eta > 0.0) {
        return Err(Error::InvalidInput(
            "coupled_one_step needs n_sub >= 1 and eta > 0",
        ));
    }
    let d = problem.dim();
    let additive = problem.diffusion_kind() == DiffusionKind::Additive;
    let stream = NoiseStream::new(master_seed, StreamTag::Coupled);
    let h = eta / f64::from(n_sub);
    let mut stepper = Stepper::new(problem);

    let mut sigma0 = vec![0.0; d * d];
    problem.diffusion(x, &mut sigma0);

    let mut drift_acc = vec![0.0; d];
    let mut noise_acc = vec![0.0; d];
    let mut total_db = vec![0.0; d];
    let mut pos = x.to_vec();
    let mut tmp = vec![0.0; d];
    for j in 1..=u64::from(n_sub) {
        for i in 0..d {
            pos[i] = (x[i] + drift_acc[i]) + noise_acc[i];
        }
        stepper.draw(&stream, path_index, j, h);
        problem.drift(&pos, &mut stepper.drift);
        let f = stepper.factor(&pos, h, Some(alpha))?;
        for i in 0..d {
            drift_acc[i] += h * f * stepper.drift[i];
            total_db[i] += stepper.db[i];
        }
        if additive {
            matvec(&sigma0, &total_db, &mut noise_acc);
        } else {
            problem.diffusion(&pos, &mut stepper.sigma);
            matvec(&stepper.sigma, &stepper.db, &mut tmp);
            for i in 0..d {
                noise_acc[i] += tmp[i];
            }
        }
    }
    let x_fine: Vec<f64> = (0..d)
        .map(|i| (x[i] + drift_acc[i]) + noise_acc[i])
        .collect();

    let mut b0 = vec![0.0; d];
    problem.drift(x, &mut b0);
    stepper.drift.copy_from_slice(&b0);
    let f0 = stepper.factor(x, eta, Some(alpha))?;
    matvec(&sigma0, &total_db, &mut tmp);
    let y_one: Vec<f64> = (0..d).map(|i| (x[i] + eta * f0 * b0[i]) + tmp[i]).collect();

    for (v, step_index) in [(&x_fine, u64::from(n_sub)), (&y_one, 1)] {
        if !all_finite(v) {
            return Err(Error::Divergence {
                step_index,
                position: v.clone(),
            });
        }
    }
    Ok((x_fine, y_one))
}

/// State of the pair `(X_t, R_t^v)` and the running weight
/// `∫₀ᵗ ⟨σ⁻¹(X_s) R_s, dB_s⟩`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TangentState {
    pub base: PathState,
    pub tangent: Vec<f64>,
    pub integral_acc: f64,
}

/// Euler–Maruyama discretisation of `X` and its first variation
/// `dR = ∇_R b(X) dt + ∇_R σ(X) dB`, `R_0 = v`, on a constant step.
pub fn simulate_tangent(
    problem: &dyn SdeProblem,
    t_final: f64,
    eta_ref: f64,
    x0: &[f64],
    v: &[f64],
    path_index: u64,
    master_seed: u64,
) -> Result<TangentState> {
    simulate_tangent_on(
        problem,
        t_final,
        eta_ref,
        x0,
        v,
        path_index,
        &NoiseStream::new(master_seed, StreamTag::Tangent),
    )
}

fn simulate_tangent_on(
    problem: &dyn SdeProblem,
    t_final: f64,
    eta_ref: f64,
    x0: &[f64],
    v: &[f64],
    path_index: u64,
    stream: &NoiseStream,
) -> Result<TangentState> {
    check_start(problem, x0)?;
    if v.len() != x0.len() || norm(v) == 0.0 {
        return Err(Error::InvalidInput(
            "tangent direction must be non-zero with matching dimension",
        ));
    }
    if !(eta_ref > 0.0) || !(t_final >= 0.0) {
        return Err(Error::InvalidInput(
            "tangent run needs eta_ref > 0 and t_final >= 0",
        ));
    }
    let d = problem.dim();
    let mut st = Stepper::new(problem);
    let mut x = x0.to_vec();
    let mut r = v.to_vec();
    let mut weight = 0.0;
    let mut dsigma = vec![0.0; d * d];
    let mut solved = vec![0.0; d];
    let mut jr = vec![0.0; d];
    let mut dsr = vec![0.0; d];
    let (n, last) = constant_grid(t_final, eta_ref);
    for j in 1..=n {
        let h = step_length(j, n, eta_ref, last);
        st.draw(stream, path_index, j, h);
        problem.drift(&x, &mut st.drift);
        problem.drift_jacobian(&x, &mut st.jac);
        problem.diffusion(&x, &mut st.sigma);
        problem.diffusion_derivative(&x, &r, &mut dsigma);

        Lu::new(&st.sigma, d)?.solve(&r, &mut solved);
        weight += dot(&solved, &st.db);

        matvec(&st.sigma, &st.db, &mut st.noise);
        matvec(&st.jac, &r, &mut jr);
        matvec(&dsigma, &st.db, &mut dsr);
        for i in 0..d {
            x[i] += h * st.drift[i] + st.noise[i];
            r[i] += h * jr[i] + dsr[i];
        }
        if !all_finite(&x) || !all_finite(&r) || !weight.is_finite() {
            return Err(Error::Divergence {
                step_index: j,
                position: x,
            });
        }
    }
    Ok(TangentState {
        base: PathState {
            position: x,
            time: t_final,
            step_index: n,
        },
        tangent: r,
        integral_acc: weight,
    })
}

/// Scalar observable evaluated at endpoints.
pub type Observable<'a> = &'a (dyn Fn(&[f64]) -> f64 + Sync);

/// Monte Carlo estimate of `∇_v P_t f(x0)` by the Bismut–Elworthy–Li
/// representation `(1/t) E[f(X_t) ∫₀ᵗ ⟨σ⁻¹(X_s) R_s, dB_s⟩]`.
/// Returns `(estimate, standard_error)`.
#[allow(clippy::too_many_arguments)]
pub fn bel_gradient<E: Executor>(
    problem: &dyn SdeProblem,
    f: Observable<'_>,
    t: f64,
    x0: &[f64],
    v: &[f64],
    samples: usize,
    eta_ref: f64,
    master_seed: u64,
    exec: &E,
) -> Result<(f64, f64)> {
    if !(t > 0.0) || samples < 2 {
        return Err(Error::InvalidInput(
            "bel_gradient needs t > 0 and at least 2 samples",
        ));
    }
    let values = exec.map(samples, |i| {
        simulate_tangent(problem, t, eta_ref, x0, v, i as u64, master_seed)
            .map(|s| f(&s.base.position) * s.integral_acc / t)
    });
    let values: Vec<f64> = values.into_iter().collect::<Result<_>>()?;
    Ok(mean_and_se(&values))
}

/// Central finite difference `(P_t f(x0 + hv) − P_t f(x0 − hv)) / 2h` with
/// both endpoints driven by the same noise (same Euler discretisation as
/// [`simulate_tangent`], independent stream).
#[allow(clippy::too_many_arguments)]
pub fn fd_gradient<E: Executor>(
    problem: &dyn SdeProblem,
    f: Observable<'_>,
    t: f64,
    x0: &[f64],
    v: &[f64],
    h: f64,
    samples: usize,
    eta_ref: f64,
    master_seed: u64,
    exec: &E,
) -> Result<(f64, f64)> {
    if !(t > 0.0) || !(h > 0.0) || samples < 2 {
        return Err(Error::InvalidInput(
            "fd_gradient needs t > 0, h > 0 and at least 2 samples",
        ));
    }
    check_start(problem, x0)?;
    let plus: Vec<f64> = x0.iter().zip(v).map(|(x, d)| x + h * d).collect();
    let minus: Vec<f64> = x0.iter().zip(v).map(|(x, d)| x - h * d).collect();
    let stream = NoiseStream::new(master_seed, StreamTag::FiniteDifference);
    let values = exec.map(samples, |i| -> Result<f64> {
        let up = simulate_tangent_on(problem, t, eta_ref, &plus, v, i as u64, &stream)?;
        let down = simulate_tangent_on(problem, t, eta_ref, &minus, v, i as u64, &stream)?;
        Ok((f(&up.base.position) - f(&down.base.position)) / (2.0 * h))
    });
    let values: Vec<f64> = values.into_iter().collect::<Result<_>>()?;
    Ok(mean_and_se(&values))
}
