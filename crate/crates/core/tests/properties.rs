use proptest::prelude::*;
use tamed_sde_core::{
    builtin, grid_time, jacobian_opnorm, rate_fit, sliced_wasserstein1, tv_histogram,
    validate_schedule, wasserstein1_1d, PathEnsemble, StepSchedule,
};

fn ensemble(dim: usize, v: Vec<f64>) -> PathEnsemble {
    PathEnsemble::from_samples(dim, v).unwrap()
}

fn samples(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0..50.0f64, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn w1_is_a_metric((a, b, c) in (2usize..40).prop_flat_map(|m| (samples(m), samples(m), samples(m)))) {
        let (a, b, c) = (ensemble(1, a), ensemble(1, b), ensemble(1, c));
        let ab = wasserstein1_1d(&a, &b).unwrap();
        let ba = wasserstein1_1d(&b, &a).unwrap();
        let ac = wasserstein1_1d(&a, &c).unwrap();
        let cb = wasserstein1_1d(&c, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!(ab <= ac + cb + 1e-12);
        prop_assert_eq!(wasserstein1_1d(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn sliced_bounded_by_w1_on_embedded_lines(
        (a, b) in (2usize..30).prop_flat_map(|m| (samples(m), samples(m))),
        angle in 0.0..std::f64::consts::TAU,
        seed in any::<u64>(),
    ) {
        let w = wasserstein1_1d(&ensemble(1, a.clone()), &ensemble(1, b.clone())).unwrap();
        let (c, s) = (angle.cos(), angle.sin());
        let embed = |v: &[f64]| v.iter().flat_map(|x| [x * c, x * s]).collect::<Vec<_>>();
        let sw = sliced_wasserstein1(&ensemble(2, embed(&a)), &ensemble(2, embed(&b)), 32, seed).unwrap();
        prop_assert!(sw <= w * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn sliced_is_translation_consistent(
        (a, b) in (2usize..20).prop_flat_map(|m| (samples(3 * m), samples(3 * m))),
        shift in prop::array::uniform3(-20.0..20.0f64),
        seed in any::<u64>(),
    ) {
        let moved = |v: &[f64]| v.chunks(3).flat_map(|x| [x[0] + shift[0], x[1] + shift[1], x[2] + shift[2]]).collect::<Vec<_>>();
        let base = sliced_wasserstein1(&ensemble(3, a.clone()), &ensemble(3, b.clone()), 16, seed).unwrap();
        let shifted = sliced_wasserstein1(&ensemble(3, moved(&a)), &ensemble(3, moved(&b)), 16, seed).unwrap();
        prop_assert!((base - shifted).abs() < 1e-10, "{} {}", base, shifted);
    }

    #[test]
    fn tv_symmetric_bounded_and_monotone_under_refinement(
        (a, b) in (2usize..200).prop_flat_map(|m| (samples(2 * m), samples(2 * m))),
        bins in 1usize..20,
    ) {
        let (a, b) = (ensemble(2, a), ensemble(2, b));
        let coarse = tv_histogram(&a, &b, bins).unwrap();
        prop_assert!((0.0..=1.0).contains(&coarse));
        prop_assert_eq!(coarse, tv_histogram(&b, &a, bins).unwrap());
        let fine = tv_histogram(&a, &b, 2 * bins).unwrap();
        prop_assert!(fine >= coarse - 1e-12, "{} < {}", fine, coarse);
    }

    #[test]
    fn opnorm_transpose_and_scaling(j in prop::collection::vec(-10.0..10.0f64, 9), c in -5.0..5.0f64) {
        let t = [j[0], j[3], j[6], j[1], j[4], j[7], j[2], j[5], j[8]];
        let n = jacobian_opnorm(&j).unwrap();
        let nt = jacobian_opnorm(&t).unwrap();
        prop_assert!((n - nt).abs() <= 1e-9 * (1.0 + n));
        let scaled: Vec<f64> = j.iter().map(|v| c * v).collect();
        prop_assert!((jacobian_opnorm(&scaled).unwrap() - c.abs() * n).abs() <= 1e-9 * (1.0 + c.abs() * n));
    }

    #[test]
    fn validate_schedule_is_monotone_in_theta(eta in 0.01..1.0f64, gamma in 0.1..1.0f64, t1 in 0.0..100.0f64, t2 in 0.0..100.0f64) {
        let s = StepSchedule::polynomial(eta, gamma).unwrap();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let a = validate_schedule(&s, 200, lo, 1.0).unwrap();
        let b = validate_schedule(&s, 200, hi, 1.0).unwrap();
        prop_assert!(!a.pass || b.pass);
    }

    #[test]
    fn rate_fit_slope_is_scale_invariant(
        pts in prop::collection::vec((1e-4..1.0f64, 1e-3..10.0f64), 3..20),
        scale in 1e-3..1e3f64,
    ) {
        let mut pts = pts;
        pts[1].0 = pts[0].0 * 0.5;
        let a = rate_fit(&pts).unwrap();
        let scaled: Vec<(f64, f64)> = pts.iter().map(|&(e, d)| (e, scale * d)).collect();
        let b = rate_fit(&scaled).unwrap();
        prop_assert!((a.slope - b.slope).abs() < 1e-12, "{} {}", a.slope, b.slope);
        prop_assert!((b.intercept - a.intercept - scale.ln()).abs() < 1e-9);
    }

    #[test]
    fn grid_time_increments_match_steps(eta in 1e-3..1.0f64, gamma in 0.0..1.0f64, n in 1u64..2000) {
        let s = StepSchedule::polynomial(eta, gamma).unwrap();
        let prev = grid_time(&s, n - 1).unwrap();
        let next = grid_time(&s, n).unwrap();
        let step = s.eta(n).unwrap();
        let ulp = f64::EPSILON * next;
        prop_assert!(((next - prev) - step).abs() <= ulp, "{} vs {}", next - prev, step);
    }
}

#[test]
fn builtin_jacobians_match_finite_differences() {
    use tamed_sde_core::{NoiseStream, StreamTag};
    let stream = NoiseStream::new(17, StreamTag::AssumptionProbe);
    for id in [
        "double-well-1d",
        "double-well-1d-additive",
        "ou-1d",
        "double-well-3d",
    ] {
        let p = builtin(id).unwrap();
        let d = p.dim();
        let mut x = vec![0.0; d];
        let mut jac = vec![0.0; d * d];
        let (mut bp, mut bm) = (vec![0.0; d], vec![0.0; d]);
        for i in 0..100 {
            stream.normals(i, 0, &mut x);
            x.iter_mut().for_each(|v| *v *= 1.5);
            p.drift_jacobian(&x, &mut jac);
            for col in 0..d {
                let h = 1e-6 * (1.0 + x[col].abs());
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[col] += h;
                xm[col] -= h;
                p.drift(&xp, &mut bp);
                p.drift(&xm, &mut bm);
                for row in 0..d {
                    let fd = (bp[row] - bm[row]) / (2.0 * h);
                    let exact = jac[row * d + col];
                    assert!(
                        (fd - exact).abs() < 1e-5 * (1.0 + exact.abs()),
                        "{id} at {x:?}: {fd} vs {exact}"
                    );
                }
            }
        }
    }
}
