//! Experiment configuration: TOML sections, dotted overrides and the
//! canonical hash used to tag reports.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tamed_sde_core::{builtin, ProbeSpec, SdeProblem, StepSchedule, TamingExponent};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub problem: ProblemSection,
    pub schedule: StepSchedule,
    pub experiment: ExperimentSection,
    pub distances: DistanceSection,
    pub tolerances: Tolerances,
    pub assumptions: AssumptionSection,
    pub validation: ValidationSection,
    pub moments: MomentSection,
    pub one_step: OneStepSection,
    pub bel: BelSection,
    pub lemmas: LemmaSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            problem: ProblemSection::default(),
            schedule: StepSchedule::Polynomial {
                eta: 0.2,
                gamma: 0.6,
            },
            experiment: ExperimentSection::default(),
            distances: DistanceSection::default(),
            tolerances: Tolerances::default(),
            assumptions: AssumptionSection::default(),
            validation: ValidationSection::default(),
            moments: MomentSection::default(),
            one_step: OneStepSection::default(),
            bel: BelSection::default(),
            lemmas: LemmaSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSection {
    /// One of the built-in problem ids.
    pub id: String,
    /// Start point; the origin when absent.
    pub x0: Option<Vec<f64>>,
}

impl Default for ProblemSection {
    fn default() -> Self {
        Self {
            id: "double-well-1d".into(),
            x0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub alpha: f64,
    /// Explicit checkpoint step indices; take precedence over `checkpoint_times`.
    pub checkpoints: Option<Vec<u64>>,
    /// Checkpoints as target times, resolved to the first grid index reaching each.
    pub checkpoint_times: Vec<f64>,
    /// Steps to run; defaults to the last checkpoint.
    pub n_steps: Option<u64>,
    /// Step budget when resolving `checkpoint_times`.
    pub max_steps: u64,
    pub m: usize,
    pub eta_ref: f64,
    /// Taming exponent of the reference runs; absent for plain Euler–Maruyama.
    pub reference_taming: Option<f64>,
    pub master_seed: u64,
    /// Only checkpoints with `t_n ≥ burn_in` enter the rate fit.
    pub burn_in: f64,
    /// Rerun the reference at `eta_ref / 2` to measure its own bias.
    pub self_consistency: bool,
    /// Write `ensemble_<n>.bin` for each checkpoint.
    pub dump_ensembles: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            checkpoints: None,
            checkpoint_times: vec![2.0, 3.0, 4.0, 6.0, 8.0],
            n_steps: None,
            max_steps: 10_000_000,
            m: 20_000,
            eta_ref: 2e-3,
            reference_taming: Some(1.0),
            master_seed: 0,
            burn_in: 2.0,
            self_consistency: true,
            dump_ensembles: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistanceSection {
    /// Random directions for sliced W1 when `d > 1`.
    pub projections: usize,
    /// Histogram cells per axis; `⌈M^{1/3}⌉` clamped to `[8, 256]` when absent.
    pub bins: Option<usize>,
    pub tv: bool,
}

impl Default for DistanceSection {
    fn default() -> Self {
        Self {
            projections: tamed_sde_core::DEFAULT_PROJECTIONS,
            bins: None,
            tv: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Pass when the fitted W1 slope is at least `alpha − slope`.
    pub slope: f64,
    pub min_r_squared: f64,
    /// Reference gap must stay below this fraction of the smallest W1.
    pub self_consistency: f64,
    /// Checkpoints with `W1 − gap ≤ noise_floor · spread` are left out of the fit.
    pub noise_floor: f64,
    pub moment_residual: f64,
    pub moment_stability: f64,
    pub one_step: f64,
    pub lemma_a1_factor: f64,
    pub lemma_a2_factor: f64,
    pub lemma_a2_rel_se: f64,
    pub bel_sigmas: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            slope: 0.1,
            min_r_squared: 0.8,
            self_consistency: 0.25,
            noise_floor: 2.0,
            moment_residual: 0.2,
            moment_stability: 0.2,
            one_step: 0.3,
            lemma_a1_factor: 3.0,
            lemma_a2_factor: 2.0,
            lemma_a2_rel_se: 0.05,
            bel_sigmas: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssumptionSection {
    /// Check the problem before running experiments.
    pub enabled: bool,
    pub radius: f64,
    pub grid_points: usize,
    pub random_points: usize,
    pub seed: u64,
}

impl Default for AssumptionSection {
    fn default() -> Self {
        let p = ProbeSpec::default();
        Self {
            enabled: true,
            radius: p.radius,
            grid_points: p.grid_points,
            random_points: p.random_points,
            seed: p.seed,
        }
    }
}

impl AssumptionSection {
    pub fn probe_spec(&self) -> ProbeSpec {
        ProbeSpec {
            radius: self.radius,
            grid_points: self.grid_points,
            random_points: self.random_points,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationSection {
    pub n_max: u64,
    pub theta: f64,
    /// Time an explicit schedule must cover to count as divergent.
    pub horizon: f64,
}

impl Default for ValidationSection {
    fn default() -> Self {
        Self {
            n_max: 10_000,
            theta: 20.0,
            horizon: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentSection {
    /// Start point; `[problem].x0` when absent.
    pub x0: Option<Vec<f64>>,
    pub checkpoint_times: Vec<f64>,
    pub p: f64,
    pub m: usize,
    /// Refit with `2m` paths and require a stable constant.
    pub check_doubling: bool,
}

impl Default for MomentSection {
    fn default() -> Self {
        Self {
            x0: None,
            checkpoint_times: vec![0.0, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0],
            p: 3.0,
            m: 10_000,
            check_doubling: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OneStepSection {
    /// Start point of the probe; `[problem].x0` when absent.
    pub x: Option<Vec<f64>>,
    pub etas: Vec<f64>,
    pub n_sub: u32,
    pub m: usize,
}

impl Default for OneStepSection {
    fn default() -> Self {
        Self {
            x: None,
            etas: (4..=9).map(|k| 0.5f64.powi(k)).collect(),
            n_sub: 64,
            m: 200_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservableKind {
    Sin,
    Cos,
    Tanh,
}

impl ObservableKind {
    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            ObservableKind::Sin => x[0].sin(),
            ObservableKind::Cos => x[0].cos(),
            ObservableKind::Tanh => x[0].tanh(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BelSection {
    pub t: f64,
    /// Start point; `[problem].x0` when absent.
    pub x0: Option<Vec<f64>>,
    /// Direction; the first basis vector when absent.
    pub v: Option<Vec<f64>>,
    pub observable: ObservableKind,
    pub m: usize,
    pub eta_ref: f64,
    /// Finite-difference half-width.
    pub h: f64,
}

impl Default for BelSection {
    fn default() -> Self {
        Self {
            t: 0.5,
            x0: None,
            v: None,
            observable: ObservableKind::Sin,
            m: 100_000,
            eta_ref: 2e-3,
            h: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LemmaSection {
    pub a1_schedule: StepSchedule,
    pub a1_beta: f64,
    pub a1_c: f64,
    pub a1_n: Vec<u64>,
    pub a2_mu: Vec<f64>,
    /// Row-major covariance.
    pub a2_sigma: Vec<f64>,
    pub a2_etas: Vec<f64>,
    pub a2_m: usize,
}

impl Default for LemmaSection {
    fn default() -> Self {
        Self {
            a1_schedule: StepSchedule::Polynomial {
                eta: 0.1,
                gamma: 0.6,
            },
            a1_beta: 0.25,
            a1_c: 0.5,
            a1_n: vec![1_000, 10_000, 100_000],
            a2_mu: vec![1.0],
            a2_sigma: vec![1.0],
            a2_etas: vec![0.01, 0.005, 0.0025],
            a2_m: 1_000_000,
        }
    }
}

impl Config {
    /// Reads a TOML file and applies `key.path=value` overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::config(format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problem()?;
        if let Some(x0) = &self.problem.x0 {
            check_dim("problem.x0", x0, p.dim())?;
        }
        self.schedule
            .validate()
            .map_err(|e| Error::config(format!("schedule: {e}")))?;
        self.alpha()?;
        let e = &self.experiment;
        if e.m < 100 {
            return Err(Error::config("experiment.m must be at least 100"));
        }
        if !(e.eta_ref > 0.0) {
            return Err(Error::config("experiment.eta_ref must be positive"));
        }
        if let Some(r) = e.reference_taming {
            TamingExponent::reference(r)
                .map_err(|err| Error::config(format!("experiment.reference_taming: {err}")))?;
        }
        if let (Some(c), Some(n)) = (&e.checkpoints, e.n_steps) {
            if c.iter().any(|&k| k > n) {
                return Err(Error::config(
                    "experiment.checkpoints must not exceed n_steps",
                ));
            }
        }
        if e.checkpoints
            .as_ref()
            .is_some_and(|c| c.windows(2).any(|w| w[0] >= w[1]))
        {
            return Err(Error::config(
                "experiment.checkpoints must be strictly increasing",
            ));
        }
        if e.checkpoint_times.windows(2).any(|w| w[0] >= w[1])
            || self
                .moments
                .checkpoint_times
                .windows(2)
                .any(|w| w[0] >= w[1])
        {
            return Err(Error::config(
                "checkpoint_times must be strictly increasing",
            ));
        }
        if let Some(x) = &self.moments.x0 {
            check_dim("moments.x0", x, p.dim())?;
        }
        if let Some(x) = &self.one_step.x {
            check_dim("one_step.x", x, p.dim())?;
        }
        if let Some(x) = &self.bel.x0 {
            check_dim("bel.x0", x, p.dim())?;
        }
        if let Some(v) = &self.bel.v {
            check_dim("bel.v", v, p.dim())?;
        }
        if self.distances.bins == Some(0) || self.distances.projections == 0 {
            return Err(Error::config(
                "distances.bins and distances.projections must be positive",
            ));
        }
        if self.lemmas.a2_sigma.len() != self.lemmas.a2_mu.len().pow(2) {
            return Err(Error::config(
                "lemmas.a2_sigma must hold d*d entries for d = len(a2_mu)",
            ));
        }
        self.lemmas
            .a1_schedule
            .validate()
            .map_err(|e| Error::config(format!("lemmas.a1_schedule: {e}")))?;
        Ok(())
    }

    pub fn problem(&self) -> Result<Box<dyn SdeProblem>> {
        builtin(&self.problem.id).ok_or_else(|| {
            Error::config(format!(
                "unknown problem id {:?} (known: {})",
                self.problem.id,
                tamed_sde_core::model::BUILTIN_IDS.join(", ")
            ))
        })
    }

    pub fn alpha(&self) -> Result<TamingExponent> {
        TamingExponent::scheme(self.experiment.alpha)
            .map_err(|e| Error::config(format!("experiment.alpha: {e}")))
    }

    pub fn x0(&self, dim: usize) -> Vec<f64> {
        self.problem.x0.clone().unwrap_or_else(|| vec![0.0; dim])
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        let digest = Sha256::digest(bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn check_dim(key: &str, v: &[f64], d: usize) -> Result<()> {
    if v.len() != d {
        return Err(Error::config(format!(
            "{key} has {} entries, problem dimension is {d}",
            v.len()
        )));
    }
    Ok(())
}

/// Applies one `a.b.c=value` override. The value is parsed as a TOML value
/// and falls back to a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override {spec:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::config(format!(
            "override {spec:?} has an empty key segment"
        )));
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override {spec:?}: {part} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        Config::default().validate().unwrap();
    }

    #[test]
    fn schedule_inline_table() {
        let c =
            Config::from_toml_str("schedule = { kind = \"polynomial\", eta = 0.1, gamma = 0.6 }")
                .unwrap();
        assert_eq!(
            c.schedule,
            StepSchedule::Polynomial {
                eta: 0.1,
                gamma: 0.6
            }
        );
        let c =
            Config::from_toml_str("[schedule]\nkind = \"explicit\"\nvalues = [0.3, 0.2]").unwrap();
        assert_eq!(
            c.schedule,
            StepSchedule::Explicit {
                values: vec![0.3, 0.2]
            }
        );
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Config::from_toml_str("[experiment]\nmm = 3").is_err());
        assert!(Config::from_toml_str("[nonsense]\na = 1").is_err());
        assert!(Config::from_toml_str(
            "[schedule]\nkind = \"polynomial\"\neta = 0.1\ngamma = 0.5\nextra = 1"
        )
        .is_err());
    }

    #[test]
    fn overrides_last_wins() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "experiment.m=500").unwrap();
        apply_override(&mut t, "experiment.m=700").unwrap();
        apply_override(&mut t, "problem.id=ou-1d").unwrap();
        let c: Config = toml::Value::Table(t).try_into().unwrap();
        assert_eq!(c.experiment.m, 700);
        assert_eq!(c.problem.id, "ou-1d");
        assert!(apply_override(&mut toml::Table::new(), "novalue").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(Config::from_toml_str("[experiment]\nalpha = 0.5").is_err());
        assert!(Config::from_toml_str("[experiment]\nm = 10").is_err());
        assert!(Config::from_toml_str("[problem]\nid = \"nope\"").is_err());
        assert!(Config::from_toml_str("[problem]\nx0 = [1.0, 2.0]").is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = Config::default();
        let mut b = Config::default();
        assert_eq!(a.hash(), b.hash());
        b.experiment.master_seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
