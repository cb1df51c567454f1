//! Numerical checks of the auxiliary estimates and the rate-fitting
//! utilities used by the experiments.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::integrator::{coupled_one_step, TamingExponent};
use crate::linalg::{cholesky, matvec, spectral_norm};
use crate::model::SdeProblem;
use crate::numeric::{mean_and_se, norm, pairwise_sum};
use crate::rng::{NoiseStream, StreamTag};
use crate::schedule::{grid_times, theta_min, StepSchedule};

/// Least-squares fit of `ln(distance) = intercept + slope · ln(η)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

/// Log-log regression of distances on step sizes.
pub fn rate_fit(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::InvalidInput("rate_fit needs at least 3 points"));
    }
    if points
        .iter()
        .any(|&(e, d)| !(e > 0.0 && d > 0.0 && e.is_finite() && d.is_finite()))
    {
        return Err(Error::InvalidInput("rate_fit needs positive finite values"));
    }
    let n = points.len() as f64;
    // shift by the first point so constant series give exact zeros
    let (x0, y0) = (libm::log(points[0].0), libm::log(points[0].1));
    let xs: Vec<f64> = points.iter().map(|p| libm::log(p.0) - x0).collect();
    let ys: Vec<f64> = points.iter().map(|p| libm::log(p.1) - y0).collect();
    let mx = pairwise_sum(&xs) / n;
    let my = pairwise_sum(&ys) / n;
    let sxx = pairwise_sum(&xs.iter().map(|x| (x - mx) * (x - mx)).collect::<Vec<_>>());
    let sxy = pairwise_sum(
        &xs.iter()
            .zip(&ys)
            .map(|(x, y)| (x - mx) * (y - my))
            .collect::<Vec<_>>(),
    );
    let syy = pairwise_sum(&ys.iter().map(|y| (y - my) * (y - my)).collect::<Vec<_>>());
    if !(sxx > 0.0) {
        return Err(Error::InvalidInput(
            "rate_fit needs at least two distinct step sizes",
        ));
    }
    let slope = sxy / sxx;
    let intercept = (my + y0) - slope * (mx + x0);
    let ss_res = pairwise_sum(
        &xs.iter()
            .zip(&ys)
            .map(|(x, y)| {
                let r = (y - my) - slope * (x - mx);
                r * r
            })
            .collect::<Vec<_>>(),
    );
    let r_squared = if syy <= 1e-24 * (1.0 + my * my) * n {
        1.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        n_points: points.len(),
    })
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties. Zero when
/// either series is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::UnequalSizes {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InvalidInput("spearman needs at least 2 points"));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let m = (n + 1.0) / 2.0;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - m) * (y - m);
        saa += (x - m) * (x - m);
        sbb += (y - m) * (y - m);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(0.0);
    }
    Ok(sab / libm::sqrt(saa * sbb))
}

/// Weighted step sums over a schedule prefix and their normalised ratios.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LemmaA1Sums {
    pub n: u64,
    pub beta: f64,
    pub c: f64,
    /// `Σ_{k=1}^n η_k^{1+β} e^{−c(t_n − t_k)}`
    pub s1: f64,
    /// `Σ_{k=K_n}^{n−1} η_k^{1+β} / √(t_n − t_k)`
    pub s2: f64,
    /// `Σ_{k=K_n}^{n−1} η_k^{1+β} / (t_n − t_k)`
    pub s3: f64,
    /// `S1 / η_n^β`
    pub ratio1: f64,
    /// `S2 / η_n^β`
    pub ratio2: f64,
    /// `S3 / (η_n^β |ln η_n|)`; absent when `η_n = 1`.
    pub ratio3: Option<f64>,
    /// `min{k ≥ 1 : t_n − t_k ≤ 1}`; absent when `t_n ≤ 1`.
    pub k_n: Option<u64>,
    pub empty_range: bool,
    pub theta_min: Option<f64>,
    /// `θ_min < c e^{−c} / β`
    pub hypothesis_ok: bool,
}

/// Evaluates the three step sums at index `n`.
pub fn lemma_a1_sums(schedule: &StepSchedule, beta: f64, c: f64, n: u64) -> Result<LemmaA1Sums> {
    if !(beta > 0.0 && beta <= 0.5) {
        return Err(Error::InvalidInput("beta must lie in (0, 1/2]"));
    }
    if !(c > 0.0) || n == 0 {
        return Err(Error::InvalidInput("lemma_a1_sums needs c > 0 and n >= 1"));
    }
    schedule.validate()?;
    let times = grid_times(schedule, n)?;
    let etas: Vec<f64> = (1..=n).map(|k| schedule.eta(k)).collect::<Result<_>>()?;
    let tn = times[n as usize];
    let eta_n = etas[n as usize - 1];
    let weight = |k: usize| libm::pow(etas[k - 1], 1.0 + beta);

    let s1_terms: Vec<f64> = (1..=n as usize)
        .map(|k| weight(k) * libm::exp(-c * (tn - times[k])))
        .collect();
    let s1 = pairwise_sum(&s1_terms);

    let (k_n, s2, s3) = if tn <= 1.0 {
        (None, 0.0, 0.0)
    } else {
        // times is increasing, so the predicate t_n − t_k ≤ 1 is monotone in k
        let k = times[1..].partition_point(|&t| tn - t > 1.0) as u64 + 1;
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for j in k as usize..n as usize {
            let gap = tn - times[j];
            a.push(weight(j) / libm::sqrt(gap));
            b.push(weight(j) / gap);
        }
        (Some(k), pairwise_sum(&a), pairwise_sum(&b))
    };
    let scale = libm::pow(eta_n, beta);
    let log_eta = libm::fabs(libm::log(eta_n));
    let theta = if n >= 2 {
        Some(theta_min(schedule, n)?)
    } else {
        None
    };
    let bound = c * libm::exp(-c) / beta;
    Ok(LemmaA1Sums {
        n,
        beta,
        c,
        s1,
        s2,
        s3,
        ratio1: s1 / scale,
        ratio2: s2 / scale,
        ratio3: (log_eta > 0.0).then(|| s3 / (scale * log_eta)),
        k_n,
        empty_range: k_n.is_none(),
        theta_min: theta,
        hypothesis_ok: theta.map_or(true, |t| t < bound),
    })
}

/// Part (ii) of the Gaussian exponential-moment probe.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InsideEstimate {
    /// `E[e^{|ξ|} 1{|ξ − μ| ≤ 1/3}]`
    pub lhs: f64,
    pub standard_error: f64,
    /// `(ln lhs − |μ|) / η`
    pub constant: f64,
}

/// Monte Carlo estimates for `ξ ~ N(μ, ηΣ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LemmaA2Estimate {
    pub eta: f64,
    pub samples: usize,
    /// `E[e^{|ξ|} 1{|ξ − μ| > 1/3}]`
    pub lhs_outside: f64,
    pub se_outside: f64,
    /// `lhs_outside / (η e^{|μ|})`
    pub c_outside: f64,
    /// Samples falling outside the ball.
    pub hits_outside: u64,
    /// Absent when `|μ| < 2/3`.
    pub inside: Option<InsideEstimate>,
}

const A2_BLOCK: usize = 8192;

/// Estimates both exponential moments of `N(μ, ηΣ)` split at `|ξ − μ| = 1/3`.
pub fn lemma_a2_mc<E: Executor>(
    mu: &[f64],
    sigma: &[f64],
    eta: f64,
    samples: usize,
    seed: u64,
    exec: &E,
) -> Result<LemmaA2Estimate> {
    let d = mu.len();
    if d == 0 || sigma.len() != d * d {
        return Err(Error::DimensionMismatch {
            expected: d * d,
            got: sigma.len(),
        });
    }
    if !(eta > 0.0) {
        return Err(Error::InvalidInput("eta must be positive"));
    }
    let chol = cholesky(sigma, d)?;
    if eta * spectral_norm(sigma, d)? > 1.0 / 6.0 {
        return Err(Error::Precondition("η∥Σ∥ ≤ 1/6"));
    }
    if samples < 10_000 {
        return Err(Error::InvalidInput("lemma_a2_mc needs M >= 10^4"));
    }
    let stream = NoiseStream::new(seed, StreamTag::GaussianProbe);
    let scale = libm::sqrt(eta);
    let n_blocks = samples.div_ceil(A2_BLOCK);
    let blocks = exec.map(n_blocks, |blk| {
        let start = blk * A2_BLOCK;
        let end = (start + A2_BLOCK).min(samples);
        let mut z = vec![0.0; d];
        let mut lz = vec![0.0; d];
        let mut xi = vec![0.0; d];
        let mut out = Vec::with_capacity(end - start);
        let mut inn = Vec::with_capacity(end - start);
        let mut hits = 0u64;
        for i in start..end {
            stream.normals(i as u64, 0, &mut z);
            matvec(&chol, &z, &mut lz);
            for k in 0..d {
                xi[k] = mu[k] + scale * lz[k];
            }
            let v = libm::exp(norm(&xi));
            if scale * norm(&lz) > 1.0 / 3.0 {
                out.push(v);
                inn.push(0.0);
                hits += 1;
            } else {
                out.push(0.0);
                inn.push(v);
            }
        }
        (out, inn, hits)
    });
    let mut outside = Vec::with_capacity(samples);
    let mut inside = Vec::with_capacity(samples);
    let mut hits_outside = 0;
    for (o, i, h) in blocks {
        outside.extend(o);
        inside.extend(i);
        hits_outside += h;
    }
    let (lhs_outside, se_outside) = mean_and_se(&outside);
    let mu_norm = norm(mu);
    let inside = (mu_norm >= 2.0 / 3.0).then(|| {
        let (lhs, standard_error) = mean_and_se(&inside);
        InsideEstimate {
            lhs,
            standard_error,
            constant: (libm::log(lhs) - mu_norm) / eta,
        }
    });
    Ok(LemmaA2Estimate {
        eta,
        samples,
        lhs_outside,
        se_outside,
        c_outside: lhs_outside / (eta * libm::exp(mu_norm)),
        hits_outside,
        inside,
    })
}

/// `E|x_fine − y_one|⁴` at one step size.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OneStepPoint {
    pub eta: f64,
    pub mean: f64,
    pub standard_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OneStepOrder {
    pub points: Vec<OneStepPoint>,
    pub fit: RateFit,
}

/// Fourth moment of the one-step gap between a sub-stepped tamed path and
/// the frozen-coefficient endpoint, for each step size, with its log-log slope.
#[allow(clippy::too_many_arguments)]
pub fn one_step_order<E: Executor>(
    problem: &dyn SdeProblem,
    x: &[f64],
    etas: &[f64],
    alpha: TamingExponent,
    n_sub: u32,
    samples: usize,
    master_seed: u64,
    exec: &E,
) -> Result<OneStepOrder> {
    if samples < 2 {
        return Err(Error::InvalidInput(
            "one_step_order needs at least 2 samples",
        ));
    }
    let mut points = Vec::with_capacity(etas.len());
    for &eta in etas {
        let gaps = exec.map(samples, |i| -> Result<f64> {
            let (fine, one) =
                coupled_one_step(problem, x, eta, alpha, n_sub, i as u64, master_seed)?;
            let diff: Vec<f64> = fine.iter().zip(&one).map(|(a, b)| a - b).collect();
            let r = norm(&diff);
            Ok(r * r * r * r)
        });
        let gaps: Vec<f64> = gaps.into_iter().collect::<Result<_>>()?;
        let (mean, standard_error) = mean_and_se(&gaps);
        points.push(OneStepPoint {
            eta,
            mean,
            standard_error,
        });
    }
    let fit = rate_fit(&points.iter().map(|p| (p.eta, p.mean)).collect::<Vec<_>>())?;
    Ok(OneStepOrder { points, fit })
}

/// Fit of `m(t) ≈ A e^{−λt} + C` with `A` fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MomentFit {
    pub amplitude: f64,
    pub lambda: f64,
    pub constant: f64,
    /// `max_i |m_i − fit(t_i)| / m_i`
    pub max_rel_residual: f64,
}

const LAMBDA_MIN: f64 = 1e-3;
const LAMBDA_MAX: f64 = 1e3;

/// Minimises `Σ ((m_i − A e^{−λ t_i} − C) / m_i)²` over `λ ∈ [1e-3, 1e3]`
/// and `C ≥ 0`. For fixed `λ` the optimal `C` is a weighted mean.
pub fn fit_moment_decay(times: &[f64], moments: &[f64], amplitude: f64) -> Result<MomentFit> {
    if times.len() != moments.len() {
        return Err(Error::UnequalSizes {
            left: times.len(),
            right: moments.len(),
        });
    }
    if times.len() < 2 {
        return Err(Error::InvalidInput("moment fit needs at least 2 points"));
    }
    if moments.iter().any(|m| !(m.is_finite() && *m > 0.0))
        || !(amplitude.is_finite() && amplitude >= 0.0)
    {
        return Err(Error::InvalidInput(
            "moment fit needs positive finite moments",
        ));
    }
    let constant_for = |lambda: f64| -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (t, m) in times.iter().zip(moments) {
            let w = 1.0 / (m * m);
            num += w * (m - amplitude * libm::exp(-lambda * t));
            den += w;
        }
        (num / den).max(0.0)
    };
    let objective = |lambda: f64| -> f64 {
        let c = constant_for(lambda);
        times
            .iter()
            .zip(moments)
            .map(|(t, m)| {
                let r = (m - amplitude * libm::exp(-lambda * t) - c) / m;
                r * r
            })
            .sum()
    };
    // coarse log grid, then golden-section refinement in log λ
    let grid = 400;
    let (lo, hi) = (libm::log(LAMBDA_MIN), libm::log(LAMBDA_MAX));
    let at = |i: usize| lo + (hi - lo) * i as f64 / grid as f64;
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for i in 0..=grid {
        let v = objective(libm::exp(at(i)));
        if v < best_val {
            best_val = v;
            best = i;
        }
    }
    let (mut a, mut b) = (at(best.saturating_sub(1)), at((best + 1).min(grid)));
    let g = 0.5 * (libm::sqrt(5.0) - 1.0);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let mut f1 = objective(libm::exp(x1));
    let mut f2 = objective(libm::exp(x2));
    for _ in 0..100 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = objective(libm::exp(x1));
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = objective(libm::exp(x2));
        }
    }
    let mut log_lambda = 0.5 * (a + b);
    if best_val < objective(libm::exp(log_lambda)) {
        log_lambda = at(best);
    }
    let lambda = libm::exp(log_lambda);
    let constant = constant_for(lambda);
    let max_rel_residual = times
        .iter()
        .zip(moments)
        .map(|(t, m)| libm::fabs(m - amplitude * libm::exp(-lambda * t) - constant) / m)
        .fold(0.0, f64::max);
    Ok(MomentFit {
        amplitude,
        lambda,
        constant,
        max_rel_residual,
    })
}
