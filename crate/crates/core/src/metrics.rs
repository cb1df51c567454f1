//! Empirical distances between endpoint ensembles.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::lyapunov_v;
use crate::numeric::{all_finite, mean_and_se, pairwise_sum};
use crate::rng::{NoiseStream, StreamTag};

/// Provenance of an ensemble.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EnsembleMeta {
    pub master_seed: u64,
    pub stream_tag: StreamTag,
    pub schedule: String,
}

/// `M` samples of dimension `dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PathEnsemble {
    dim: usize,
    samples: Vec<f64>,
    pub checkpoint_time: f64,
    pub meta: EnsembleMeta,
}

impl PathEnsemble {
    pub fn new(
        dim: usize,
        samples: Vec<f64>,
        checkpoint_time: f64,
        meta: EnsembleMeta,
    ) -> Result<Self> {
        if dim == 0 || samples.len() % dim != 0 {
            return Err(Error::InvalidInput(
                "sample buffer length is not a multiple of dim",
            ));
        }
        if samples.len() / dim < 2 {
            return Err(Error::InvalidInput("an ensemble needs at least 2 samples"));
        }
        if !all_finite(&samples) {
            return Err(Error::InvalidInput("ensemble contains non-finite samples"));
        }
        Ok(Self {
            dim,
            samples,
            checkpoint_time,
            meta,
        })
    }

    /// Ensemble with placeholder metadata, for ad hoc comparisons.
    pub fn from_samples(dim: usize, samples: Vec<f64>) -> Result<Self> {
        let meta = EnsembleMeta {
            master_seed: 0,
            stream_tag: StreamTag::VariableStep,
            schedule: String::new(),
        };
        Self::new(dim, samples, 0.0, meta)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.chunks_exact(self.dim)
    }
}

fn check_pair(a: &PathEnsemble, b: &PathEnsemble) -> Result<()> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch {
            expected: a.dim,
            got: b.dim,
        });
    }
    if a.len() != b.len() {
        return Err(Error::UnequalSizes {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// W1 between two equal-size empirical measures on the line, via the sorted coupling.
pub fn wasserstein1_values(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::UnequalSizes {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("empty sample"));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_unstable_by(f64::total_cmp);
    sb.sort_unstable_by(f64::total_cmp);
    let diffs: Vec<f64> = sa.iter().zip(&sb).map(|(x, y)| libm::fabs(x - y)).collect();
    Ok(pairwise_sum(&diffs) / a.len() as f64)
}

/// Exact W1 for one-dimensional ensembles of equal size.
pub fn wasserstein1_1d(a: &PathEnsemble, b: &PathEnsemble) -> Result<f64> {
    check_pair(a, b)?;
    if a.dim != 1 {
        return Err(Error::UnsupportedDimension { dim: a.dim, max: 1 });
    }
    wasserstein1_values(&a.samples, &b.samples)
}

/// Default number of random directions for [`sliced_wasserstein1`].
pub const DEFAULT_PROJECTIONS: usize = 64;

/// Mean of the 1D W1 over `n_projections` uniform random unit directions.
/// For `dim = 1` this is the exact W1.
pub fn sliced_wasserstein1(
    a: &PathEnsemble,
    b: &PathEnsemble,
    n_projections: usize,
    seed: u64,
) -> Result<f64> {
    check_pair(a, b)?;
    if a.dim == 1 {
        return wasserstein1_values(&a.samples, &b.samples);
    }
    if n_projections == 0 {
        return Err(Error::InvalidInput("n_projections must be positive"));
    }
    let stream = NoiseStream::new(seed, StreamTag::Projection);
    let d = a.dim;
    let mut u = vec![0.0; d];
    let mut pa = vec![0.0; a.len()];
    let mut pb = vec![0.0; b.len()];
    let mut per_direction = Vec::with_capacity(n_projections);
    for k in 0..n_projections as u64 {
        // resample the rare near-zero draw
        let mut attempt = 0;
        loop {
            stream.normals(k, attempt, &mut u);
            let len = crate::numeric::norm(&u);
            if len > 1e-12 {
                u.iter_mut().for_each(|c| *c /= len);
                break;
            }
            attempt += 1;
        }
        for (dst, x) in pa.iter_mut().zip(a.iter()) {
            *dst = crate::numeric::dot(x, &u);
        }
        for (dst, x) in pb.iter_mut().zip(b.iter()) {
            *dst = crate::numeric::dot(x, &u);
        }
        per_direction.push(wasserstein1_values(&pa, &pb)?);
    }
    Ok(pairwise_sum(&per_direction) / n_projections as f64)
}

/// Default histogram resolution: `⌈M^{1/3}⌉` clamped to `[8, 256]`.
pub fn default_bins(m: usize) -> usize {
    (libm::ceil(libm::cbrt(m as f64)) as usize).clamp(8, 256)
}

/// Histogram TV on a common grid over the pooled range widened by 5%.
/// Grids with `k·bins` cells per axis refine the grid with `bins` cells.
pub fn tv_histogram(a: &PathEnsemble, b: &PathEnsemble, bins_per_dim: usize) -> Result<f64> {
    let d = a.dim;
    if d != b.dim {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: b.dim,
        });
    }
    if d > 3 {
        return Err(Error::UnsupportedDimension { dim: d, max: 3 });
    }
    if bins_per_dim == 0 {
        return Err(Error::InvalidInput("bins_per_dim must be positive"));
    }
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for x in a.iter().chain(b.iter()) {
        for i in 0..d {
            lo[i] = lo[i].min(x[i]);
            hi[i] = hi[i].max(x[i]);
        }
    }
    let mut width = vec![0.0; d];
    for i in 0..d {
        let span = hi[i] - lo[i];
        let pad = if span > 0.0 { 0.025 * span } else { 0.5 };
        lo[i] -= pad;
        width[i] = span + 2.0 * pad;
    }
    let cell = |x: &[f64]| -> u64 {
        let mut key = 0u64;
        for i in 0..d {
            let u = (x[i] - lo[i]) / width[i];
            let idx = (libm::floor(u * bins_per_dim as f64) as i64)
                .clamp(0, bins_per_dim as i64 - 1) as u64;
            key = key * bins_per_dim as u64 + idx;
        }
        key
    };
    let mut ka: Vec<u64> = a.iter().map(cell).collect();
    let mut kb: Vec<u64> = b.iter().map(cell).collect();
    ka.sort_unstable();
    kb.sort_unstable();
    let (wa, wb) = (1.0 / a.len() as f64, 1.0 / b.len() as f64);
    let mut terms = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < ka.len() || j < kb.len() {
        let key = match (ka.get(i), kb.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        let (mut ca, mut cb) = (0usize, 0usize);
        while i < ka.len() && ka[i] == key {
            ca += 1;
            i += 1;
        }
        while j < kb.len() && kb[j] == key {
            cb += 1;
            j += 1;
        }
        terms.push(libm::fabs(ca as f64 * wa - cb as f64 * wb));
    }
    Ok((0.5 * pairwise_sum(&terms)).clamp(0.0, 1.0))
}

/// Sample mean of `V(x)` over an ensemble.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LyapunovMoment {
    pub mean: f64,
    pub standard_error: f64,
    /// Some evaluation overflowed; `mean` is then infinite.
    pub saturated: bool,
}

/// Mean of `V(x) = exp(p·s(|x|))` over the ensemble with its standard error.
pub fn lyapunov_moment(a: &PathEnsemble, p: f64) -> Result<LyapunovMoment> {
    if !(p >= 1.0) {
        return Err(Error::InvalidInput("Lyapunov exponent p must be >= 1"));
    }
    let mut values = Vec::with_capacity(a.len());
    let mut saturated = false;
    for x in a.iter() {
        let v = lyapunov_v(x, p)?;
        saturated |= v.saturated;
        values.push(v.value);
    }
    if saturated {
        return Ok(LyapunovMoment {
            mean: f64::INFINITY,
            standard_error: f64::INFINITY,
            saturated,
        });
    }
    let (mean, standard_error) = mean_and_se(&values);
    Ok(LyapunovMoment {
        mean,
        standard_error,
        saturated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ens(d: usize, v: &[f64]) -> PathEnsemble {
        PathEnsemble::from_samples(d, v.to_vec()).unwrap()
    }

    #[test]
    fn ensemble_invariants() {
        assert!(PathEnsemble::from_samples(1, vec![1.0]).is_err());
        assert!(PathEnsemble::from_samples(1, vec![1.0, f64::NAN]).is_err());
        assert!(PathEnsemble::from_samples(2, vec![1.0, 2.0, 3.0]).is_err());
        let e = ens(2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.len(), 2);
        assert_eq!(e.sample(1), &[3.0, 4.0]);
    }

    #[test]
    fn w1_examples() {
        let a = ens(1, &[0.0, 2.0]);
        assert_eq!(wasserstein1_1d(&a, &a).unwrap(), 0.0);
        assert_eq!(wasserstein1_1d(&a, &ens(1, &[3.0, 1.0])).unwrap(), 1.0);
        assert_eq!(wasserstein1_values(&[0.0], &[1.0]).unwrap(), 1.0);
        assert!(matches!(
            wasserstein1_1d(&a, &ens(1, &[1.0, 2.0, 3.0])),
            Err(Error::UnequalSizes { left: 2, right: 3 })
        ));
    }

    #[test]
    fn sliced_examples() {
        let a = ens(1, &[0.0, 2.0, 5.0]);
        let b = ens(1, &[1.0, -3.0, 0.5]);
        assert_eq!(
            sliced_wasserstein1(&a, &b, 7, 1).unwrap(),
            wasserstein1_1d(&a, &b).unwrap()
        );
        let p = ens(2, &[0.0, 0.0, 0.0, 0.0]);
        let q = ens(2, &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(sliced_wasserstein1(&p, &p, 16, 1).unwrap(), 0.0);
        let s = sliced_wasserstein1(&p, &q, 4096, 1).unwrap();
        let target = 2.0 / core::f64::consts::PI;
        assert!((s - target).abs() < 0.02 * target, "{s}");
    }

    #[test]
    fn tv_examples() {
        let a = ens(1, &[0.0, 0.0, 1.0, 1.0]);
        let b = ens(1, &[0.0, 1.0, 1.0, 1.0]);
        assert_eq!(tv_histogram(&a, &b, 2).unwrap(), 0.25);
        assert_eq!(tv_histogram(&a, &a, 16).unwrap(), 0.0);
        let c = ens(1, &[10.0, 11.0]);
        let d = ens(1, &[-10.0, -11.0]);
        assert_eq!(tv_histogram(&c, &d, 8).unwrap(), 1.0);
        let e4 = ens(4, &[0.0; 8]);
        assert!(matches!(
            tv_histogram(&e4, &e4, 8),
            Err(Error::UnsupportedDimension { dim: 4, max: 3 })
        ));
        // unequal sizes are fine
        assert!(tv_histogram(&a, &ens(1, &[0.0, 1.0]), 4).is_ok());
    }

    #[test]
    fn default_bins_clamped() {
        assert_eq!(default_bins(10), 8);
        assert_eq!(default_bins(20_000), 28);
        assert_eq!(default_bins(100_000_000), 256);
    }

    #[test]
    fn lyapunov_moment_examples() {
        let zero = ens(1, &[0.0, 0.0, 0.0]);
        let m = lyapunov_moment(&zero, 3.0).unwrap();
        assert!((m.mean - libm::exp(9.0 / 8.0)).abs() < 1e-12);
        let two = ens(2, &[2.0, 0.0, 0.0, -2.0]);
        let m = lyapunov_moment(&two, 1.0).unwrap();
        assert!((m.mean - libm::exp(2.0)).abs() < 1e-12);
        let far = ens(1, &[1e6, 0.0]);
        assert!(lyapunov_moment(&far, 3.0).unwrap().saturated);
        assert!(lyapunov_moment(&zero, 0.5).is_err());
    }
}
