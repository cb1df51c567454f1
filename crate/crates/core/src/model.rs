//! SDE problems `dX = b(X) dt + σ(X) dB`, the Lyapunov function and sampled
//! checks of the structural assumptions on `b` and `σ`.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, square_dim, Lu};
use crate::numeric::norm;
use crate::rng::{NoiseStream, StreamTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum DiffusionKind {
    /// `σ` is a constant matrix.
    Additive,
    Multiplicative,
}

/// Constants the problem claims to satisfy: growth order `r`, `L1`, `λ`
/// for the drift and `L2` for the diffusion.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DeclaredConstants {
    pub r: f64,
    pub l1: f64,
    pub lambda: f64,
    pub l2: f64,
}

impl DeclaredConstants {
    pub fn new(r: f64, l1: f64, lambda: f64, l2: f64) -> Result<Self> {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::InvalidInput(
                "growth order r must be finite and >= 0",
            ));
        }
        for v in [l1, lambda, l2] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(
                    "L1, lambda and L2 must be finite and > 0",
                ));
            }
        }
        Ok(Self { r, l1, lambda, l2 })
    }
}

/// Coefficients of an SDE on `ℝ^d`. Matrices are row-major `d × d`.
pub trait SdeProblem: Send + Sync {
    fn dim(&self) -> usize;
    fn drift(&self, x: &[f64], out: &mut [f64]);
    /// `out[i*d + j] = ∂b_i/∂x_j`
    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]);
    fn diffusion(&self, x: &[f64], out: &mut [f64]);
    fn diffusion_kind(&self) -> DiffusionKind;
    fn constants(&self) -> DeclaredConstants;

    fn name(&self) -> &str {
        "custom"
    }

    /// Directional derivative `∇_v σ(x)`. The default uses central
    /// differences; built-in problems override it with the exact value.
    fn diffusion_derivative(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        if self.diffusion_kind() == DiffusionKind::Additive {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let scale = norm(v);
        if scale == 0.0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let h = fd_step(x);
        let d = x.len();
        let mut plus = vec![0.0; d];
        let mut minus = vec![0.0; d];
        for i in 0..d {
            plus[i] = x[i] + h * v[i] / scale;
            minus[i] = x[i] - h * v[i] / scale;
        }
        let mut sp = vec![0.0; d * d];
        self.diffusion(&plus, &mut sp);
        self.diffusion(&minus, out);
        for (o, p) in out.iter_mut().zip(&sp) {
            *o = (p - *o) / (2.0 * h) * scale;
        }
    }
}

fn fd_step(x: &[f64]) -> f64 {
    1e-4 * (1.0 + norm(x))
}

/// Ids accepted by [`builtin`].
pub const BUILTIN_IDS: [&str; 4] = [
    "double-well-1d",
    "double-well-1d-additive",
    "ou-1d",
    "double-well-3d",
];

pub fn builtin(id: &str) -> Option<Box<dyn SdeProblem>> {
    match id {
        "double-well-1d" => Some(Box::new(DoubleWell1d { additive: false })),
        "double-well-1d-additive" => Some(Box::new(DoubleWell1d { additive: true })),
        "ou-1d" => Some(Box::new(Ou1d)),
        "double-well-3d" => Some(Box::new(DoubleWell3d)),
        _ => None,
    }
}

/// `b(x) = x − x³` with `σ(x) = 2 + sin x`, or `σ = 1` when additive.
#[derive(Debug, Clone, Copy)]
pub struct DoubleWell1d {
    pub additive: bool,
}

impl SdeProblem for DoubleWell1d {
    fn dim(&self) -> usize {
        1
    }
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x[0] - x[0] * x[0] * x[0];
    }
    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 1.0 - 3.0 * x[0] * x[0];
    }
    fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        out[0] = if self.additive {
            1.0
        } else {
            2.0 + libm::sin(x[0])
        };
    }
    fn diffusion_kind(&self) -> DiffusionKind {
        if self.additive {
            DiffusionKind::Additive
        } else {
            DiffusionKind::Multiplicative
        }
    }
    fn constants(&self) -> DeclaredConstants {
        DeclaredConstants {
            r: 2.0,
            l1: 1.5,
            lambda: 0.5,
            l2: if self.additive { 1.0 } else { 3.0 },
        }
    }
    fn name(&self) -> &str {
        if self.additive {
            "double-well-1d-additive"
        } else {
            "double-well-1d"
        }
    }
    fn diffusion_derivative(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        out[0] = if self.additive {
            0.0
        } else {
            libm::cos(x[0]) * v[0]
        };
    }
}

/// Ornstein–Uhlenbeck: `b(x) = −x`, `σ = 1`.
#[derive(Debug, Clone, Copy)]
pub struct Ou1d;

impl SdeProblem for Ou1d {
    fn dim(&self) -> usize {
        1
    }
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        out[0] = -x[0];
    }
    fn drift_jacobian(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = -1.0;
    }
    fn diffusion(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }
    fn diffusion_kind(&self) -> DiffusionKind {
        DiffusionKind::Additive
    }
    fn constants(&self) -> DeclaredConstants {
        DeclaredConstants {
            r: 0.0,
            l1: 1.0,
            lambda: 1.0,
            l2: 1.0,
        }
    }
    fn name(&self) -> &str {
        "ou-1d"
    }
    fn diffusion_derivative(&self, _x: &[f64], _v: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
}

/// `b_i(x) = x_i − x_i |x|²`, `σ(x) = I + 0.2 diag(sin x_i)`.
#[derive(Debug, Clone, Copy)]
pub struct DoubleWell3d;

impl SdeProblem for DoubleWell3d {
    fn dim(&self) -> usize {
        3
    }
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        for (o, xi) in out.iter_mut().zip(x) {
            *o = xi - xi * r2;
        }
    }
    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        for i in 0..3 {
            for j in 0..3 {
                let diag = if i == j { 1.0 - r2 } else { 0.0 };
                out[i * 3 + j] = diag - 2.0 * x[i] * x[j];
            }
        }
    }
    fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..3 {
            out[i * 3 + i] = 1.0 + 0.2 * libm::sin(x[i]);
        }
    }
    fn diffusion_kind(&self) -> DiffusionKind {
        DiffusionKind::Multiplicative
    }
    fn constants(&self) -> DeclaredConstants {
        DeclaredConstants {
            r: 2.0,
            l1: 3.0,
            lambda: 0.5,
            l2: 1.25,
        }
    }
    fn name(&self) -> &str {
        "double-well-3d"
    }
    fn diffusion_derivative(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..3 {
            out[i * 3 + i] = 0.2 * libm::cos(x[i]) * v[i];
        }
    }
}

type VecFn = Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// A problem assembled from closures, for coefficients defined in code.
pub struct FnProblem {
    dim: usize,
    kind: DiffusionKind,
    constants: DeclaredConstants,
    drift: VecFn,
    jacobian: VecFn,
    diffusion: VecFn,
}

impl FnProblem {
    pub fn new(
        dim: usize,
        kind: DiffusionKind,
        constants: DeclaredConstants,
        drift: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        jacobian: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        diffusion: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            kind,
            constants,
            drift: Box::new(drift),
            jacobian: Box::new(jacobian),
            diffusion: Box::new(diffusion),
        }
    }
}

impl SdeProblem for FnProblem {
    fn dim(&self) -> usize {
        self.dim
    }
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }
    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) {
        (self.jacobian)(x, out)
    }
    fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, out)
    }
    fn diffusion_kind(&self) -> DiffusionKind {
        self.kind
    }
    fn constants(&self) -> DeclaredConstants {
        self.constants
    }
}

/// Operator (spectral) norm of a row-major `d × d` matrix.
pub fn jacobian_opnorm(j: &[f64]) -> Result<f64> {
    let d = square_dim(j.len())?;
    spectral_norm(j, d)
}

/// Value of `V(x)^p` where `V = exp(s(|x|))` and `s` is the identity
/// outside the unit ball and `3/8 + 3ρ²/4 − ρ⁴/8` inside it (the even
/// quartic matching value, slope and curvature at `ρ = 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Lyapunov {
    /// `exp(p·s(|x|))`, or `f64::MAX` when saturated.
    pub value: f64,
    /// `p·s(|x|)`, always finite for finite input.
    pub exponent: f64,
    pub saturated: bool,
}

/// `s(ρ)`: the radial profile of `ln V`.
pub fn lyapunov_profile(rho: f64) -> f64 {
    if rho >= 1.0 {
        rho
    } else {
        let r2 = rho * rho;
        0.375 + 0.75 * r2 - 0.125 * r2 * r2
    }
}

pub fn lyapunov_v(x: &[f64], p: f64) -> Result<Lyapunov> {
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("lyapunov_v: non-finite point"));
    }
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::InvalidInput("lyapunov_v: power must be positive"));
    }
    let exponent = p * lyapunov_profile(norm(x));
    let value = libm::exp(exponent);
    if value.is_finite() {
        Ok(Lyapunov {
            value,
            exponent,
            saturated: false,
        })
    } else {
        Ok(Lyapunov {
            value: f64::MAX,
            exponent,
            saturated: true,
        })
    }
}

/// Where to evaluate the sampled assumption checks.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProbeSpec {
    pub radius: f64,
    /// Points per ray (per axis direction in d > 1, on `[-R, R]` in d = 1).
    pub grid_points: usize,
    /// Additional quasi-random points drawn uniformly in the ball.
    pub random_points: usize,
    pub seed: u64,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self {
            radius: 10.0,
            grid_points: 401,
            random_points: 400,
            seed: 0,
        }
    }
}

impl ProbeSpec {
    /// Probe points: a grid through the origin plus random points in the ball.
    pub fn points(&self, d: usize) -> Result<Vec<Vec<f64>>> {
        if !(self.radius > 0.0 && self.radius.is_finite()) || self.grid_points < 2 || d == 0 {
            return Err(Error::InvalidInput(
                "probe spec needs radius > 0 and >= 2 grid points",
            ));
        }
        let mut pts = Vec::new();
        pts.push(vec![0.0; d]);
        let g = self.grid_points;
        if d == 1 {
            for k in 0..g {
                let t = -self.radius + 2.0 * self.radius * k as f64 / (g - 1) as f64;
                pts.push(vec![t]);
            }
        } else {
            let mut rays: Vec<Vec<f64>> = Vec::new();
            for i in 0..d {
                for sign in [1.0, -1.0] {
                    let mut e = vec![0.0; d];
                    e[i] = sign;
                    rays.push(e);
                }
            }
            let diag = 1.0 / libm::sqrt(d as f64);
            rays.push(vec![diag; d]);
            rays.push(vec![-diag; d]);
            for ray in &rays {
                for k in 1..g {
                    let t = self.radius * k as f64 / (g - 1) as f64;
                    pts.push(ray.iter().map(|v| v * t).collect());
                }
            }
        }
        let stream = NoiseStream::new(self.seed, StreamTag::AssumptionProbe);
        let mut dir = vec![0.0; d];
        for i in 0..self.random_points {
            stream.normals(i as u64, 0, &mut dir);
            let n = norm(&dir);
            let (u, _) = stream.uniforms(i as u64, 1, 0);
            let rho = self.radius * libm::pow(u, 1.0 / d as f64);
            pts.push(dir.iter().map(|v| v / n * rho).collect());
        }
        Ok(pts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Condition {
    /// `⟨x, b(x)⟩ ≤ L1 − λ|x|^{r+2}`
    A1Dissipativity,
    /// `|b(x)| ≤ L1 (1 + |x| ∥∇b(x)∥)`
    A1Growth,
    /// `|b(x) − b(y)| ≤ L1 (1 + |x|^r + |y|^r) |x − y|`
    A1PolyLipschitz,
    /// `∥σ∥, ∥σ⁻¹∥, ∥∇σ∥, ∥∇²σ∥ ≤ L2`
    A2Bounds,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AssumptionReport {
    pub condition: Condition,
    pub n_probes: usize,
    /// Largest `LHS − RHS` seen; the condition holds on the probes iff `≤ 0`.
    pub worst_violation: f64,
    pub worst_point: Vec<f64>,
    /// Second point of the worst pair, for two-point conditions.
    pub worst_partner: Option<Vec<f64>>,
    /// Set when `σ` was numerically singular at `worst_point`.
    pub singular: bool,
    pub radius: f64,
}

impl AssumptionReport {
    fn new(condition: Condition, radius: f64) -> Self {
        Self {
            condition,
            n_probes: 0,
            worst_violation: f64::NEG_INFINITY,
            worst_point: Vec::new(),
            worst_partner: None,
            singular: false,
            radius,
        }
    }

    fn record(&mut self, violation: f64, x: &[f64], y: Option<&[f64]>) {
        self.n_probes += 1;
        let violation = if violation.is_nan() {
            f64::MAX
        } else {
            violation
        };
        if violation > self.worst_violation || self.worst_point.is_empty() {
            self.worst_violation = violation;
            self.worst_point = x.to_vec();
            self.worst_partner = y.map(<[f64]>::to_vec);
        }
    }

    pub fn pass(&self) -> bool {
        !self.singular && self.worst_violation <= 0.0
    }
}

/// Checks the three drift inequalities on the probe set, in the order
/// dissipativity, growth, polynomial Lipschitz.
pub fn check_assumption_a1(
    problem: &dyn SdeProblem,
    probes: &ProbeSpec,
) -> Result<[AssumptionReport; 3]> {
    let d = problem.dim();
    let c = problem.constants();
    let pts = probes.points(d)?;
    let mut dissip = AssumptionReport::new(Condition::A1Dissipativity, probes.radius);
    let mut growth = AssumptionReport::new(Condition::A1Growth, probes.radius);
    let mut lip = AssumptionReport::new(Condition::A1PolyLipschitz, probes.radius);

    let mut bx = vec![0.0; d];
    let mut by = vec![0.0; d];
    let mut jac = vec![0.0; d * d];
    for x in &pts {
        problem.drift(x, &mut bx);
        problem.drift_jacobian(x, &mut jac);
        let rx = norm(x);
        let inner: f64 = x.iter().zip(&bx).map(|(a, b)| a * b).sum();
        dissip.record(
            inner - (c.l1 - c.lambda * libm::pow(rx, c.r + 2.0)),
            x,
            None,
        );
        let op = spectral_norm(&jac, d)?;
        growth.record(norm(&bx) - c.l1 * (1.0 + rx * op), x, None);
    }

    let n = pts.len();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for i in 0..n.saturating_sub(1) {
        pairs.push((i, i + 1));
        pairs.push((i, n - 1 - i));
    }
    let mut lipschitz = |x: &[f64], y: &[f64]| {
        problem.drift(x, &mut bx);
        problem.drift(y, &mut by);
        let diff: f64 = libm::sqrt(bx.iter().zip(&by).map(|(a, b)| (a - b) * (a - b)).sum());
        let dist: f64 = libm::sqrt(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum());
        let rhs = c.l1 * (1.0 + libm::pow(norm(x), c.r) + libm::pow(norm(y), c.r)) * dist;
        lip.record(diff - rhs, x, Some(y));
    };
    for (i, j) in pairs {
        if i != j {
            lipschitz(&pts[i], &pts[j]);
        }
    }
    for x in &pts {
        let h = 1e-3 * (1.0 + norm(x));
        let mut y = x.clone();
        y[0] += h;
        lipschitz(x, &y);
    }
    Ok([dissip, growth, lip])
}

const SINGULAR_CONDITION: f64 = 1e12;
const FD_SLACK: f64 = 1e-6;

/// Checks the bounds on `σ`, `σ⁻¹` and the first two derivatives of `σ`
/// (central differences along the coordinate axes and the diagonal).
pub fn check_assumption_a2(
    problem: &dyn SdeProblem,
    probes: &ProbeSpec,
) -> Result<AssumptionReport> {
    let d = problem.dim();
    let l2 = problem.constants().l2;
    let pts = probes.points(d)?;
    let mut report = AssumptionReport::new(Condition::A2Bounds, probes.radius);

    let mut dirs: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            e
        })
        .collect();
    if d > 1 {
        dirs.push(vec![1.0 / libm::sqrt(d as f64); d]);
    }

    let mut s0 = vec![0.0; d * d];
    let mut sp = vec![0.0; d * d];
    let mut sm = vec![0.0; d * d];
    let mut tmp = vec![0.0; d * d];
    for x in &pts {
        problem.diffusion(x, &mut s0);
        let s_norm = spectral_norm(&s0, d)?;
        let inv_norm = match Lu::new(&s0, d) {
            Ok(lu) => spectral_norm(&lu.inverse(), d)?,
            Err(_) => f64::INFINITY,
        };
        let condition = s_norm * inv_norm;
        if !(condition.is_finite() && condition <= SINGULAR_CONDITION) {
            report.n_probes += 1;
            report.singular = true;
            report.worst_violation = f64::MAX;
            report.worst_point = x.clone();
            report.worst_partner = None;
            return Ok(report);
        }
        let mut worst = (s_norm - l2).max(inv_norm - l2);

        let h = fd_step(x);
        let mut xp = x.clone();
        let mut xm = x.clone();
        for dir in &dirs {
            for k in 0..d {
                xp[k] = x[k] + h * dir[k];
                xm[k] = x[k] - h * dir[k];
            }
            problem.diffusion(&xp, &mut sp);
            problem.diffusion(&xm, &mut sm);
            for k in 0..d * d {
                tmp[k] = (sp[k] - sm[k]) / (2.0 * h);
            }
            let first = spectral_norm(&tmp, d)?;
            for k in 0..d * d {
                tmp[k] = (sp[k] - 2.0 * s0[k] + sm[k]) / (h * h);
            }
            let second = spectral_norm(&tmp, d)?;
            worst = worst
                .max(first - l2 * (1.0 + FD_SLACK))
                .max(second - l2 * (1.0 + FD_SLACK));
        }
        report.record(worst, x, None);
    }
    Ok(report)
}
