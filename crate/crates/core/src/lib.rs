//! Tamed Euler–Maruyama integration of SDEs with superlinearly growing drift
//! on decreasing step-size schedules.
//!
//! The crate is `no_std` and only needs `alloc`. Everything here is pure
//! numerics: problem definitions, step schedules, the tamed integrator and
//! its tangent process, empirical distances between ensembles, and the
//! probes used to check the long-time error bounds numerically. File formats,
//! configuration, parallel execution and the command-line tool live in the
//! `tamed-sde` crate.
//!
//! All transcendental functions go through [`libm`] so that results are
//! bit-identical across platforms with IEEE-754 doubles.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

mod error;
pub mod exec;
pub mod integrator;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod probes;
pub mod rng;
pub mod schedule;

pub use error::{Error, Result};
pub use exec::{Executor, Sequential};
pub use integrator::{
    bel_gradient, coupled_one_step, fd_gradient, simulate_path, simulate_reference,
    simulate_reference_times, simulate_tangent, tamed_step, taming_factor, NoiseIncrement,
    Observable, PathState, ReferenceRun, TamingExponent, TangentState,
};
pub use metrics::{
    default_bins, lyapunov_moment, sliced_wasserstein1, tv_histogram, wasserstein1_1d,
    wasserstein1_values, EnsembleMeta, LyapunovMoment, PathEnsemble, DEFAULT_PROJECTIONS,
};
pub use model::{
    builtin, check_assumption_a1, check_assumption_a2, jacobian_opnorm, lyapunov_v,
    AssumptionReport, Condition, DeclaredConstants, DiffusionKind, FnProblem, Lyapunov, ProbeSpec,
    SdeProblem,
};
pub use probes::{
    fit_moment_decay, lemma_a1_sums, lemma_a2_mc, one_step_order, rate_fit, spearman,
    InsideEstimate, LemmaA1Sums, LemmaA2Estimate, MomentFit, OneStepOrder, OneStepPoint, RateFit,
};
pub use rng::{NoiseStream, StreamTag};
pub use schedule::{
    first_index_reaching, grid_time, grid_times, theta_min, validate_schedule, GridClock,
    ScheduleReport, StepSchedule,
};
