//! End-to-end experiments: convergence of the tamed scheme against a
//! reference law, moment stability, one-step order, gradient oracle and
//! the auxiliary step-sum and Gaussian-moment probes.

use std::fmt;

use serde::{Deserialize, Serialize};
use tamed_sde_core::{
    bel_gradient, check_assumption_a1, check_assumption_a2, fd_gradient, first_index_reaching,
    fit_moment_decay, grid_time, lemma_a1_sums, lemma_a2_mc, lyapunov_moment, lyapunov_v,
    one_step_order, rate_fit, simulate_path, simulate_reference_times, sliced_wasserstein1,
    spearman, tv_histogram, validate_schedule, wasserstein1_values, AssumptionReport,
    DiffusionKind, EnsembleMeta, Executor, LemmaA1Sums, LemmaA2Estimate, MomentFit, OneStepOrder,
    PathEnsemble, RateFit, ReferenceRun, ScheduleReport, SdeProblem, StepSchedule, StreamTag,
    TamingExponent,
};

use crate::config::{Config, ObservableKind};
use crate::error::{Error, Result};

/// One pass/fail line of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            pass,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

fn all_pass(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.pass)
}

/// Runs the sampled assumption checks for the configured problem.
pub fn check_assumptions(cfg: &Config) -> Result<(Vec<AssumptionReport>, Vec<Check>)> {
    let problem = cfg.problem()?;
    let spec = cfg.assumptions.probe_spec();
    let mut reports: Vec<AssumptionReport> = check_assumption_a1(problem.as_ref(), &spec)?.into();
    reports.push(check_assumption_a2(problem.as_ref(), &spec)?);
    let checks = reports
        .iter()
        .map(|r| {
            Check::new(
                &format!("{:?}", r.condition),
                r.pass(),
                format!(
                    "worst violation {} at {:?} over {} probes within radius {}",
                    r.worst_violation, r.worst_point, r.n_probes, r.radius
                ),
            )
        })
        .collect();
    Ok((reports, checks))
}

fn require_assumptions(cfg: &Config) -> Result<()> {
    if !cfg.assumptions.enabled {
        return Ok(());
    }
    let (reports, _) = check_assumptions(cfg)?;
    if reports.iter().all(AssumptionReport::pass) {
        Ok(())
    } else {
        Err(Error::Assumptions(reports))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleOutcome {
    pub schedule: StepSchedule,
    pub report: ScheduleReport,
    pub checks: Vec<Check>,
    pub pass: bool,
    pub config_hash: String,
}

pub fn run_validate_schedule(cfg: &Config) -> Result<ScheduleOutcome> {
    let v = &cfg.validation;
    let report = validate_schedule(&cfg.schedule, v.n_max, v.theta, v.horizon)?;
    let mut checks = vec![Check::new(
        "monotone",
        report.monotone_ok,
        match report.first_non_monotone {
            Some(n) => format!("eta increases at index {n}"),
            None => format!("non-increasing over {} steps", report.n_checked),
        },
    )];
    let heuristic = if report.heuristic {
        " (finite-prefix proxy)"
    } else {
        ""
    };
    checks.push(Check::new(
        "vanishing",
        report.vanishing_ok,
        format!(
            "eta_N = {} after {} steps{heuristic}",
            report.eta_last, report.n_checked
        ),
    ));
    checks.push(Check::new(
        "divergent_sum",
        report.divergence_ok,
        format!(
            "t_N = {} against horizon {}{heuristic}",
            report.t_last, report.horizon
        ),
    ));
    checks.push(Check::new(
        "theta",
        report.theta_min.is_some_and(|t| t <= v.theta),
        match report.theta_min {
            Some(t) => format!("theta_min = {t} against theta = {}", v.theta),
            None => "undefined for a non-monotone schedule".into(),
        },
    ));
    let pass = report.pass;
    Ok(ScheduleOutcome {
        schedule: cfg.schedule.clone(),
        report,
        checks,
        pass,
        config_hash: cfg.hash(),
    })
}

/// Step indices of the experiment checkpoints and the number of steps to run.
pub fn resolve_checkpoints(cfg: &Config) -> Result<(Vec<u64>, u64)> {
    let e = &cfg.experiment;
    let ks = match &e.checkpoints {
        Some(c) => c.clone(),
        None => indices_for_times(&cfg.schedule, &e.checkpoint_times, e.max_steps)?,
    };
    if ks.is_empty() {
        return Err(Error::config("no checkpoints configured"));
    }
    let n_steps = e.n_steps.unwrap_or(*ks.last().unwrap());
    Ok((ks, n_steps))
}

fn indices_for_times(schedule: &StepSchedule, times: &[f64], max_steps: u64) -> Result<Vec<u64>> {
    let mut ks = Vec::with_capacity(times.len());
    for &t in times {
        let k = first_index_reaching(schedule, t, max_steps)?;
        if ks.last().is_some_and(|&last| last >= k) {
            return Err(Error::config(format!(
                "checkpoint time {t} maps to an index already used"
            )));
        }
        ks.push(k);
    }
    Ok(ks)
}

/// Endpoints of `m` paths at each checkpoint, stored flat per checkpoint.
struct Ensembles {
    per_checkpoint: Vec<Vec<f64>>,
    diverged: u64,
}

fn collect<E: Executor>(
    exec: &E,
    m: usize,
    k: usize,
    f: impl Fn(u64) -> tamed_sde_core::Result<Vec<Vec<f64>>> + Sync + Send,
) -> Result<Ensembles> {
    let results = exec.map(m, |i| f(i as u64));
    let mut per_checkpoint = vec![Vec::new(); k];
    let mut diverged = 0;
    for r in results {
        match r {
            Ok(points) => {
                for (dst, x) in per_checkpoint.iter_mut().zip(points) {
                    dst.extend(x);
                }
            }
            Err(tamed_sde_core::Error::Divergence { .. }) => diverged += 1,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Ensembles {
        per_checkpoint,
        diverged,
    })
}

#[allow(clippy::too_many_arguments)]
fn tamed_ensemble<E: Executor>(
    problem: &dyn SdeProblem,
    schedule: &StepSchedule,
    alpha: TamingExponent,
    x0: &[f64],
    checkpoints: &[u64],
    n_steps: u64,
    m: usize,
    seed: u64,
    exec: &E,
) -> Result<Ensembles> {
    collect(exec, m, checkpoints.len(), |i| {
        simulate_path(problem, schedule, alpha, x0, n_steps, checkpoints, i, seed)
            .map(|v| v.into_iter().map(|(_, x)| x).collect())
    })
}

fn distance(a: &[f64], b: &[f64], d: usize, projections: usize, seed: u64) -> Result<f64> {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    if d == 1 {
        return Ok(wasserstein1_values(a, b)?);
    }
    let ea = PathEnsemble::from_samples(d, a.to_vec())?;
    let eb = PathEnsemble::from_samples(d, b.to_vec())?;
    Ok(sliced_wasserstein1(&ea, &eb, projections, seed)?)
}

/// Half the spread of the distance over four disjoint quarter-ensembles.
fn quarter_spread(a: &[f64], b: &[f64], d: usize, projections: usize, seed: u64) -> Result<f64> {
    let q = a.len().min(b.len()) / d / 4;
    if q < 2 {
        return Ok(f64::NAN);
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for j in 0..4 {
        let r = j * q * d..(j + 1) * q * d;
        let w = distance(&a[r.clone()], &b[r], d, projections, seed)?;
        lo = lo.min(w);
        hi = hi.max(w);
    }
    Ok(0.5 * (hi - lo))
}

/// Distances at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRecord {
    pub n: u64,
    pub t_n: f64,
    pub eta_n: f64,
    pub w1: f64,
    /// Half-spread of W1 over four quarter-ensembles.
    pub w1_se: f64,
    pub tv: Option<f64>,
    /// W1 against the reference run at half the reference step.
    pub w1_half_reference: Option<f64>,
    pub reference_gap: Option<f64>,
    /// W1 clears the reference gap by more than the noise-floor margin.
    pub resolved: bool,
    pub lyapunov_moment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub problem: String,
    pub alpha: f64,
    pub series: Vec<DistanceRecord>,
    pub w1_fit: Option<RateFit>,
    pub tv_fit: Option<RateFit>,
    pub tv_spearman: Option<f64>,
    /// `Ĉ` of the envelope `Ĉ η_n^α`, anchored at the largest fitted step.
    pub envelope_constant: Option<f64>,
    /// Largest `Ê[V(Y)³]` over checkpoints.
    pub max_lyapunov_moment: f64,
    pub moments_saturated: bool,
    pub self_consistency_gap: Option<f64>,
    pub diverged_paths: u64,
    pub reference_diverged_paths: u64,
    pub checks: Vec<Check>,
    pub pass: bool,
    pub config: Config,
    pub config_hash: String,
    #[serde(skip)]
    pub ensembles: Vec<PathEnsemble>,
}

impl ConvergenceReport {
    /// Rate fit restricted to resolved checkpoints with `t_n ≥ burn_in`.
    pub fn fit_after(&self, burn_in: f64) -> Option<RateFit> {
        let pts: Vec<(f64, f64)> = self
            .series
            .iter()
            .filter(|r| r.t_n >= burn_in && r.resolved && r.w1 > 0.0)
            .map(|r| (r.eta_n, r.w1))
            .collect();
        rate_fit(&pts).ok()
    }
}

/// Variable-step ensemble against an independent constant-step reference
/// at each checkpoint, with rate fits and pass flags.
pub fn run_convergence<E: Executor>(cfg: &Config, exec: &E) -> Result<ConvergenceReport> {
    require_assumptions(cfg)?;
    let problem = cfg.problem()?;
    let p = problem.as_ref();
    let d = p.dim();
    let alpha = cfg.alpha()?;
    let x0 = cfg.x0(d);
    let e = &cfg.experiment;
    let seed = e.master_seed;
    let (ks, n_steps) = resolve_checkpoints(cfg)?;
    let times: Vec<f64> = ks
        .iter()
        .map(|&k| grid_time(&cfg.schedule, k))
        .collect::<tamed_sde_core::Result<_>>()?;

    let y = tamed_ensemble(p, &cfg.schedule, alpha, &x0, &ks, n_steps, e.m, seed, exec)?;
    let taming = e
        .reference_taming
        .map(TamingExponent::reference)
        .transpose()?;
    let reference = |eta_ref: f64, lane: u32| {
        let run = ReferenceRun {
            eta_ref,
            taming,
            lane,
        };
        collect(exec, e.m, ks.len(), |i| {
            simulate_reference_times(p, &times, &run, &x0, i, seed)
        })
    };
    let x = reference(e.eta_ref, 0)?;
    let x_half = if e.self_consistency {
        Some(reference(e.eta_ref / 2.0, 1)?)
    } else {
        None
    };

    let bins = cfg
        .distances
        .bins
        .unwrap_or_else(|| tamed_sde_core::default_bins(e.m));
    let proj = cfg.distances.projections;
    let mut series = Vec::with_capacity(ks.len());
    let mut ensembles = Vec::with_capacity(ks.len());
    let mut max_moment = 0.0f64;
    let mut saturated = false;
    for (j, (&n, &t_n)) in ks.iter().zip(&times).enumerate() {
        let ya = &y.per_checkpoint[j];
        let xa = &x.per_checkpoint[j];
        let w1 = distance(ya, xa, d, proj, seed)?;
        let w1_se = quarter_spread(ya, xa, d, proj, seed)?;
        let w1_half = x_half
            .as_ref()
            .map(|h| distance(ya, &h.per_checkpoint[j], d, proj, seed))
            .transpose()?;
        let gap = w1_half.map(|h| (w1 - h).abs());
        let ey = PathEnsemble::new(
            d,
            ya.clone(),
            t_n,
            EnsembleMeta {
                master_seed: seed,
                stream_tag: StreamTag::VariableStep,
                schedule: cfg.schedule.describe(),
            },
        )?;
        let tv = if cfg.distances.tv && d <= 3 {
            let ex = PathEnsemble::from_samples(d, xa.clone())?;
            Some(tv_histogram(&ey, &ex, bins)?)
        } else {
            None
        };
        let mom = lyapunov_moment(&ey, 3.0)?;
        saturated |= mom.saturated;
        max_moment = max_moment.max(mom.mean);
        let resolved = w1 - gap.unwrap_or(0.0) > cfg.tolerances.noise_floor * w1_se;
        series.push(DistanceRecord {
            n,
            t_n,
            eta_n: cfg.schedule.eta(n.max(1))?,
            w1,
            w1_se,
            tv,
            w1_half_reference: w1_half,
            reference_gap: gap,
            resolved,
            lyapunov_moment: mom.mean,
        });
        ensembles.push(ey);
    }

    let mut report = ConvergenceReport {
        problem: cfg.problem.id.clone(),
        alpha: alpha.value(),
        series,
        w1_fit: None,
        tv_fit: None,
        tv_spearman: None,
        envelope_constant: None,
        max_lyapunov_moment: max_moment,
        moments_saturated: saturated,
        self_consistency_gap: None,
        diverged_paths: y.diverged,
        reference_diverged_paths: x.diverged + x_half.as_ref().map_or(0, |h| h.diverged),
        checks: Vec::new(),
        pass: false,
        config: cfg.clone(),
        config_hash: cfg.hash(),
        ensembles,
    };
    evaluate_convergence(&mut report, cfg);
    Ok(report)
}

fn evaluate_convergence(report: &mut ConvergenceReport, cfg: &Config) {
    let tol = &cfg.tolerances;
    let burn_in = cfg.experiment.burn_in;
    let alpha = report.alpha;
    let post: Vec<&DistanceRecord> = report.series.iter().filter(|r| r.t_n >= burn_in).collect();
    let fitted: Vec<&DistanceRecord> = post
        .iter()
        .copied()
        .filter(|r| r.resolved && r.w1 > 0.0)
        .collect();
    let mut checks = Vec::new();

    checks.push(Check::new(
        "divergence",
        report.diverged_paths == 0 && report.reference_diverged_paths == 0,
        format!(
            "{} tamed and {} reference paths diverged",
            report.diverged_paths, report.reference_diverged_paths
        ),
    ));

    report.w1_fit = report.fit_after(burn_in);
    match report.w1_fit {
        Some(f) => {
            checks.push(Check::new(
                "w1_slope",
                f.slope >= alpha - tol.slope,
                format!(
                    "slope {} against alpha - {} = {} over {} checkpoints",
                    f.slope,
                    tol.slope,
                    alpha - tol.slope,
                    f.n_points
                ),
            ));
            checks.push(Check::new(
                "w1_r_squared",
                f.r_squared >= tol.min_r_squared,
                format!("r^2 {} against {}", f.r_squared, tol.min_r_squared),
            ));
        }
        None => checks.push(Check::new(
            "w1_slope",
            false,
            format!(
                "{} resolved checkpoints after burn-in, at least 3 needed",
                fitted.len()
            ),
        )),
    }

    if let Some(first) = fitted.iter().max_by(|a, b| a.eta_n.total_cmp(&b.eta_n)) {
        let c = first.w1 / first.eta_n.powf(alpha);
        report.envelope_constant = Some(c);
        let worst = fitted
            .iter()
            .map(|r| r.w1 - (c * r.eta_n.powf(alpha) + 2.0 * r.w1_se))
            .fold(f64::NEG_INFINITY, f64::max);
        checks.push(Check::new(
            "w1_envelope",
            worst <= 0.0,
            format!("C = {c}; largest excess over C eta^alpha + 2 se is {worst}"),
        ));
    }

    let tv_pts: Vec<(f64, f64)> = post
        .iter()
        .filter_map(|r| r.tv.map(|t| (r.eta_n, t)))
        .collect();
    if tv_pts.len() >= 2 {
        let (eta, tv): (Vec<f64>, Vec<f64>) = tv_pts.iter().copied().unzip();
        let rho = spearman(&eta, &tv).unwrap_or(f64::NAN);
        report.tv_spearman = Some(rho);
        report.tv_fit = rate_fit(&tv_pts).ok();
        checks.push(Check::new(
            "tv_trend",
            rho > 0.0,
            format!("Spearman rho(eta_n, TV) = {rho}"),
        ));
    }

    let gaps: Vec<f64> = post.iter().filter_map(|r| r.reference_gap).collect();
    if !gaps.is_empty() {
        let gap = gaps.iter().copied().fold(0.0, f64::max);
        let min_w1 = post.iter().map(|r| r.w1).fold(f64::INFINITY, f64::min);
        report.self_consistency_gap = Some(gap);
        checks.push(Check::new(
            "reference_self_consistency",
            gap < tol.self_consistency * min_w1,
            format!(
                "halving eta_ref moves W1 by at most {gap}; limit {} x {min_w1}",
                tol.self_consistency
            ),
        ));
    }

    checks.push(Check::new(
        "moments_finite",
        !report.moments_saturated && report.max_lyapunov_moment.is_finite(),
        format!("max E[V(Y)^3] = {}", report.max_lyapunov_moment),
    ));
    report.pass = all_pass(&checks);
    report.checks = checks;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRecord {
    pub n: u64,
    pub t_n: f64,
    pub mean: f64,
    pub standard_error: f64,
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub problem: String,
    pub x0: Vec<f64>,
    pub p: f64,
    pub series: Vec<MomentRecord>,
    pub fit: Option<MomentFit>,
    pub doubled_series: Option<Vec<MomentRecord>>,
    pub doubled_fit: Option<MomentFit>,
    pub diverged_paths: u64,
    pub checks: Vec<Check>,
    pub pass: bool,
    pub config: Config,
    pub config_hash: String,
}

fn moment_series<E: Executor>(
    cfg: &Config,
    p: &dyn SdeProblem,
    x0: &[f64],
    ks: &[u64],
    m: usize,
    exec: &E,
) -> Result<(Vec<MomentRecord>, u64)> {
    let d = p.dim();
    let n_steps = *ks.last().unwrap();
    let ens = tamed_ensemble(
        p,
        &cfg.schedule,
        cfg.alpha()?,
        x0,
        ks,
        n_steps,
        m,
        cfg.experiment.master_seed,
        exec,
    )?;
    let mut out = Vec::with_capacity(ks.len());
    for (j, &n) in ks.iter().enumerate() {
        let e = PathEnsemble::from_samples(d, ens.per_checkpoint[j].clone())?;
        let mom = lyapunov_moment(&e, cfg.moments.p)?;
        out.push(MomentRecord {
            n,
            t_n: grid_time(&cfg.schedule, n)?,
            mean: mom.mean,
            standard_error: mom.standard_error,
            saturated: mom.saturated,
        });
    }
    Ok((out, ens.diverged))
}

fn fit_series(series: &[MomentRecord], amplitude: f64) -> Option<MomentFit> {
    if series.iter().any(|r| r.saturated) {
        return None;
    }
    let t: Vec<f64> = series.iter().map(|r| r.t_n).collect();
    let m: Vec<f64> = series.iter().map(|r| r.mean).collect();
    fit_moment_decay(&t, &m, amplitude).ok()
}

/// Tracks `Ê[V(Y)^p]` along the tamed chain and fits `A e^{−λt} + C`
/// with `A = V(x0)^p`.
pub fn run_moment_experiment<E: Executor>(cfg: &Config, exec: &E) -> Result<MomentReport> {
    require_assumptions(cfg)?;
    let problem = cfg.problem()?;
    let p = problem.as_ref();
    let x0 = cfg.moments.x0.clone().unwrap_or_else(|| cfg.x0(p.dim()));
    let times = &cfg.moments.checkpoint_times;
    let mut ks = Vec::with_capacity(times.len());
    for &t in times {
        ks.push(first_index_reaching(
            &cfg.schedule,
            t,
            cfg.experiment.max_steps,
        )?);
    }
    if ks.is_empty() || ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config(
            "moments.checkpoint_times must map to distinct increasing indices",
        ));
    }
    let amplitude = lyapunov_v(&x0, cfg.moments.p)?.value;
    let (series, diverged) = moment_series(cfg, p, &x0, &ks, cfg.moments.m, exec)?;
    let fit = fit_series(&series, amplitude);
    let (doubled_series, doubled_fit) = if cfg.moments.check_doubling {
        let (s, _) = moment_series(cfg, p, &x0, &ks, 2 * cfg.moments.m, exec)?;
        let f = fit_series(&s, amplitude);
        (Some(s), f)
    } else {
        (None, None)
    };

    let tol = &cfg.tolerances;
    let saturated = series.iter().any(|r| r.saturated);
    let mut checks = vec![
        Check::new(
            "divergence",
            diverged == 0,
            format!("{diverged} paths diverged"),
        ),
        Check::new(
            "moments_finite",
            !saturated,
            format!(
                "max E[V^{}] = {}",
                cfg.moments.p,
                series.iter().map(|r| r.mean).fold(0.0, f64::max)
            ),
        ),
    ];
    match fit {
        Some(f) => {
            checks.push(Check::new(
                "decay_rate",
                f.lambda > 1.01e-3,
                format!("lambda = {} (search floor 1e-3)", f.lambda),
            ));
            checks.push(Check::new(
                "fit_residual",
                f.max_rel_residual <= tol.moment_residual,
                format!(
                    "max relative residual {} against {}",
                    f.max_rel_residual, tol.moment_residual
                ),
            ));
            if let Some(g) = doubled_fit {
                let rel = (g.constant - f.constant).abs() / f.constant.abs().max(f64::MIN_POSITIVE);
                checks.push(Check::new(
                    "constant_stable",
                    rel <= tol.moment_stability,
                    format!(
                        "C = {} at M, {} at 2M, relative change {rel}",
                        f.constant, g.constant
                    ),
                ));
            } else if cfg.moments.check_doubling {
                checks.push(Check::new("constant_stable", false, "fit failed at 2M"));
            }
        }
        None => checks.push(Check::new(
            "fit_residual",
            false,
            "no fit (saturated or degenerate series)",
        )),
    }
    let pass = all_pass(&checks);
    Ok(MomentReport {
        problem: cfg.problem.id.clone(),
        x0,
        p: cfg.moments.p,
        series,
        fit,
        doubled_series,
        doubled_fit,
        diverged_paths: diverged,
        checks,
        pass,
        config: cfg.clone(),
        config_hash: cfg.hash(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneStepReport {
    pub problem: String,
    pub diffusion: String,
    pub x: Vec<f64>,
    pub alpha: f64,
    pub expected_slope: f64,
    pub order: OneStepOrder,
    pub checks: Vec<Check>,
    pub pass: bool,
    pub config_hash: String,
}

/// Slope of `Ê|x_fine − y_one|⁴` against `η`: `4 + 4α` for additive noise, 4 otherwise.
pub fn run_one_step<E: Executor>(cfg: &Config, exec: &E) -> Result<OneStepReport> {
    let problem = cfg.problem()?;
    let p = problem.as_ref();
    let alpha = cfg.alpha()?;
    let x = cfg.one_step.x.clone().unwrap_or_else(|| cfg.x0(p.dim()));
    let o = &cfg.one_step;
    let order = one_step_order(
        p,
        &x,
        &o.etas,
        alpha,
        o.n_sub,
        o.m,
        cfg.experiment.master_seed,
        exec,
    )?;
    let additive = p.diffusion_kind() == DiffusionKind::Additive;
    let expected = if additive {
        4.0 + 4.0 * alpha.value()
    } else {
        4.0
    };
    let slope = order.fit.slope;
    let checks = vec![Check::new(
        "one_step_slope",
        (slope - expected).abs() <= cfg.tolerances.one_step,
        format!(
            "slope {slope} against {expected} +/- {} (r^2 {})",
            cfg.tolerances.one_step, order.fit.r_squared
        ),
    )];
    let pass = all_pass(&checks);
    Ok(OneStepReport {
        problem: cfg.problem.id.clone(),
        diffusion: if additive {
            "additive"
        } else {
            "multiplicative"
        }
        .into(),
        x,
        alpha: alpha.value(),
        expected_slope: expected,
        order,
        checks,
        pass,
        config_hash: cfg.hash(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BelReport {
    pub problem: String,
    pub t: f64,
    pub x0: Vec<f64>,
    pub v: Vec<f64>,
    pub observable: ObservableKind,
    pub estimate: f64,
    pub standard_error: f64,
    pub finite_difference: f64,
    pub finite_difference_se: f64,
    pub closed_form: Option<f64>,
    pub checks: Vec<Check>,
    pub pass: bool,
    pub config_hash: String,
}

/// `∇_v E f(X_t)` for the unit-rate OU process from `x0`, where
/// `X_t ~ N(x0 e^{−t}, (1 − e^{−2t})/2)`.
pub fn ou_gradient(observable: ObservableKind, t: f64, x0: f64, v: f64) -> Option<f64> {
    let decay = (-t).exp();
    let damp = (-(1.0 - (-2.0 * t).exp()) / 4.0).exp();
    let mean = x0 * decay;
    match observable {
        ObservableKind::Sin => Some(v * decay * mean.cos() * damp),
        ObservableKind::Cos => Some(-v * decay * mean.sin() * damp),
        ObservableKind::Tanh => None,
    }
}

/// Gradient estimator against the closed form (when known) and a
/// common-random-number finite difference.
pub fn run_bel_check<E: Executor>(cfg: &Config, exec: &E) -> Result<BelReport> {
    let problem = cfg.problem()?;
    let p = problem.as_ref();
    let d = p.dim();
    let b = &cfg.bel;
    let x0 = b.x0.clone().unwrap_or_else(|| cfg.x0(d));
    let v = b.v.clone().unwrap_or_else(|| {
        let mut e1 = vec![0.0; d];
        e1[0] = 1.0;
        e1
    });
    let obs = b.observable;
    let f = move |x: &[f64]| obs.eval(x);
    let seed = cfg.experiment.master_seed;
    let (estimate, se) = bel_gradient(p, &f, b.t, &x0, &v, b.m, b.eta_ref, seed, exec)?;
    let (fd, fd_se) = fd_gradient(p, &f, b.t, &x0, &v, b.h, b.m, b.eta_ref, seed, exec)?;
    let closed_form = (cfg.problem.id == "ou-1d")
        .then(|| ou_gradient(obs, b.t, x0[0], v[0]))
        .flatten();
    let k = cfg.tolerances.bel_sigmas;
    let mut checks = Vec::new();
    if let Some(c) = closed_form {
        checks.push(Check::new(
            "bel_closed_form",
            (estimate - c).abs() <= k * se,
            format!("estimate {estimate} +/- {se} against exact {c}"),
        ));
    }
    let combined = (se * se + fd_se * fd_se).sqrt();
    checks.push(Check::new(
        "bel_finite_difference",
        (estimate - fd).abs() <= k * combined,
        format!("estimate {estimate} against finite difference {fd} +/- {fd_se}"),
    ));
    let pass = all_pass(&checks);
    Ok(BelReport {
        problem: cfg.problem.id.clone(),
        t: b.t,
        x0,
        v,
        observable: obs,
        estimate,
        standard_error: se,
        finite_difference: fd,
        finite_difference_se: fd_se,
        closed_form,
        checks,
        pass,
        config_hash: cfg.hash(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub a1: Vec<LemmaA1Sums>,
    /// max/min of each ratio over the configured indices.
    pub a1_spread: [f64; 3],
    pub a2: Vec<LemmaA2Estimate>,
    /// max/min of the fitted outside constant over the step sizes.
    pub a2_outside_spread: f64,
    /// max of the outside constant relative to its value at the largest step.
    pub a2_outside_growth: f64,
    pub a2_inside_spread: Option<f64>,
    pub notes: Vec<String>,
    pub checks: Vec<Check>,
    pub pass: bool,
    pub config_hash: String,
}

fn spread(v: &[f64]) -> f64 {
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// Step-sum ratios and Gaussian exponential-moment constants.
pub fn run_lemma_probes<E: Executor>(cfg: &Config, exec: &E) -> Result<LemmaReport> {
    let l = &cfg.lemmas;
    let tol = &cfg.tolerances;
    let mut notes = Vec::new();
    let mut checks = Vec::new();

    let a1: Vec<LemmaA1Sums> = l
        .a1_n
        .iter()
        .map(|&n| lemma_a1_sums(&l.a1_schedule, l.a1_beta, l.a1_c, n))
        .collect::<tamed_sde_core::Result<_>>()?;
    let r1: Vec<f64> = a1.iter().map(|s| s.ratio1).collect();
    let r2: Vec<f64> = a1.iter().map(|s| s.ratio2).collect();
    let r3: Vec<f64> = a1.iter().map(|s| s.ratio3.unwrap_or(f64::NAN)).collect();
    let a1_spread = [spread(&r1), spread(&r2), spread(&r3)];
    for (name, s) in ["a1_ratio_1", "a1_ratio_2", "a1_ratio_3"]
        .iter()
        .zip(a1_spread)
    {
        checks.push(Check::new(
            name,
            s <= tol.lemma_a1_factor,
            format!("max/min {s} against {}", tol.lemma_a1_factor),
        ));
    }
    if let Some(bad) = a1.iter().find(|s| !s.hypothesis_ok) {
        notes.push(format!(
            "step-sum hypothesis theta < c e^-c / beta = {} fails: theta_min = {} at n = {}",
            l.a1_c * (-l.a1_c).exp() / l.a1_beta,
            bad.theta_min.unwrap_or(f64::NAN),
            bad.n
        ));
    }

    let d = l.a2_mu.len();
    let a2: Vec<LemmaA2Estimate> = l
        .a2_etas
        .iter()
        .map(|&eta| {
            lemma_a2_mc(
                &l.a2_mu,
                &l.a2_sigma,
                eta,
                l.a2_m,
                cfg.experiment.master_seed,
                exec,
            )
        })
        .collect::<tamed_sde_core::Result<_>>()?;
    let c_out: Vec<f64> = a2.iter().map(|e| e.c_outside).collect();
    let a2_outside_spread = spread(&c_out);
    checks.push(Check::new(
        "a2_outside_stable",
        a2_outside_spread <= tol.lemma_a2_factor,
        format!(
            "fitted constants {c_out:?}, max/min {a2_outside_spread} against {}",
            tol.lemma_a2_factor
        ),
    ));
    let largest = a2.iter().max_by(|a, b| a.eta.total_cmp(&b.eta));
    let a2_outside_growth = largest.map_or(f64::NAN, |big| {
        c_out.iter().copied().fold(0.0, f64::max) / big.c_outside
    });
    notes.push(format!(
        "outside constant relative to the largest step: max ratio {a2_outside_growth}"
    ));
    if let Some(big) = largest {
        let rel = big.se_outside / big.lhs_outside;
        checks.push(Check::new(
            "a2_outside_standard_error",
            rel < tol.lemma_a2_rel_se,
            format!(
                "relative standard error {rel} at eta = {} with {} outside hits",
                big.eta, big.hits_outside
            ),
        ));
    }
    let c_in: Option<Vec<f64>> = a2.iter().map(|e| e.inside.map(|i| i.constant)).collect();
    let a2_inside_spread = c_in.as_ref().map(|c| spread(c));
    match (&c_in, a2_inside_spread) {
        (Some(c), Some(s)) => checks.push(Check::new(
            "a2_inside_stable",
            s <= tol.lemma_a2_factor,
            format!("fitted constants {c:?}, max/min {s}"),
        )),
        _ => notes.push("inside bound skipped: requires |mu| >= 2/3".into()),
    }
    let sigma_norm = tamed_sde_core::linalg::spectral_norm(&l.a2_sigma, d)?;
    let too_big = 1.01 / (6.0 * sigma_norm);
    let enforced = matches!(
        lemma_a2_mc(&l.a2_mu, &l.a2_sigma, too_big, l.a2_m.max(10_000), 0, exec),
        Err(tamed_sde_core::Error::Precondition(_))
    );
    checks.push(Check::new(
        "a2_precondition",
        enforced,
        format!("eta = {too_big} violating eta ||Sigma|| <= 1/6 is rejected"),
    ));
    let pass = all_pass(&checks);
    Ok(LemmaReport {
        a1,
        a1_spread,
        a2,
        a2_outside_spread,
        a2_outside_growth,
        a2_inside_spread,
        notes,
        checks,
        pass,
        config_hash: cfg.hash(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub n: u64,
    pub t_n: f64,
    pub eta_n: f64,
    pub mean: Vec<f64>,
    pub lyapunov_moment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub problem: String,
    pub records: Vec<SimulationRecord>,
    pub diverged_paths: u64,
    pub checks: Vec<Check>,
    pub pass: bool,
    pub config: Config,
    pub config_hash: String,
    #[serde(skip)]
    pub ensembles: Vec<PathEnsemble>,
}

/// Runs the tamed ensemble and keeps the endpoints at each checkpoint.
pub fn run_simulate<E: Executor>(cfg: &Config, exec: &E) -> Result<SimulationReport> {
    let problem = cfg.problem()?;
    let p = problem.as_ref();
    let d = p.dim();
    let (ks, n_steps) = resolve_checkpoints(cfg)?;
    let x0 = cfg.x0(d);
    let seed = cfg.experiment.master_seed;
    let ens = tamed_ensemble(
        p,
        &cfg.schedule,
        cfg.alpha()?,
        &x0,
        &ks,
        n_steps,
        cfg.experiment.m,
        seed,
        exec,
    )?;
    let mut records = Vec::with_capacity(ks.len());
    let mut ensembles = Vec::with_capacity(ks.len());
    for (j, &n) in ks.iter().enumerate() {
        let t_n = grid_time(&cfg.schedule, n)?;
        let e = PathEnsemble::new(
            d,
            ens.per_checkpoint[j].clone(),
            t_n,
            EnsembleMeta {
                master_seed: seed,
                stream_tag: StreamTag::VariableStep,
                schedule: cfg.schedule.describe(),
            },
        )?;
        let mean = (0..d)
            .map(|k| e.iter().map(|x| x[k]).sum::<f64>() / e.len() as f64)
            .collect();
        records.push(SimulationRecord {
            n,
            t_n,
            eta_n: cfg.schedule.eta(n.max(1))?,
            mean,
            lyapunov_moment: lyapunov_moment(&e, 3.0)?.mean,
        });
        ensembles.push(e);
    }
    let checks = vec![Check::new(
        "divergence",
        ens.diverged == 0,
        format!("{} of {} paths diverged", ens.diverged, cfg.experiment.m),
    )];
    let pass = all_pass(&checks);
    Ok(SimulationReport {
        problem: cfg.problem.id.clone(),
        records,
        diverged_paths: ens.diverged,
        checks,
        pass,
        config: cfg.clone(),
        config_hash: cfg.hash(),
        ensembles,
    })
}
