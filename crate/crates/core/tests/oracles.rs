use tamed_sde_core::{
    bel_gradient, builtin, coupled_one_step, fd_gradient, first_index_reaching, grid_time,
    lemma_a1_sums, simulate_path, simulate_reference, simulate_tangent, taming_factor,
    wasserstein1_1d, DeclaredConstants, DiffusionKind, FnProblem, NoiseStream, PathEnsemble,
    ReferenceRun, Sequential, StepSchedule, StreamTag, TamingExponent,
};

fn brownian(d: usize) -> FnProblem {
    FnProblem::new(
        d,
        DiffusionKind::Additive,
        DeclaredConstants::new(0.0, 1.0, 1.0, 1.0).unwrap(),
        |_, o| o.fill(0.0),
        |_, o| o.fill(0.0),
        move |_, o| {
            o.fill(0.0);
            for i in 0..d {
                o[i * d + i] = 1.0;
            }
        },
    )
}

/// Brute-force W1 over all bijections.
fn w1_exhaustive(a: &[f64], b: &[f64]) -> f64 {
    fn permute(k: usize, perm: &mut Vec<usize>, a: &[f64], b: &[f64], best: &mut f64) {
        if k == perm.len() {
            let cost: f64 = perm
                .iter()
                .enumerate()
                .map(|(i, &j)| (a[i] - b[j]).abs())
                .sum();
            *best = best.min(cost / a.len() as f64);
            return;
        }
        for i in k..perm.len() {
            perm.swap(k, i);
            permute(k + 1, perm, a, b, best);
            perm.swap(k, i);
        }
    }
    let mut perm: Vec<usize> = (0..a.len()).collect();
    let mut best = f64::INFINITY;
    permute(0, &mut perm, a, b, &mut best);
    best
}

#[test]
fn w1_matches_exhaustive_assignment() {
    let stream = NoiseStream::new(99, StreamTag::AssumptionProbe);
    for trial in 0..300u64 {
        let m = 1 + (trial % 8) as usize;
        let mut a = vec![0.0; m];
        let mut b = vec![0.0; m];
        stream.normals(trial, 0, &mut a);
        stream.normals(trial, 1, &mut b);
        let brute = w1_exhaustive(&a, &b);
        let fast = tamed_sde_core::wasserstein1_values(&a, &b).unwrap();
        assert!(
            (brute - fast).abs() <= 1e-12 * (1.0 + brute),
            "{brute} {fast}"
        );
    }
}

#[test]
fn brownian_reference_has_unit_variance() {
    let p = brownian(1);
    let run = ReferenceRun {
        eta_ref: 0.01,
        taming: None,
        lane: 0,
    };
    let m = 20_000;
    let xs: Vec<f64> = (0..m)
        .map(|i| simulate_reference(&p, 1.0, &run, &[0.5], i, 7).unwrap()[0])
        .collect();
    let mean = xs.iter().sum::<f64>() / m as f64;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1) as f64;
    // SE of the sample variance of a Gaussian is √(2/(M−1))
    let se = (2.0 / (m - 1) as f64).sqrt();
    assert!((var - 1.0).abs() < 3.0 * se, "{var}");
    assert!((mean - 0.5).abs() < 3.0 / (m as f64).sqrt());
}

#[test]
fn tamed_ou_mean_follows_exact_product() {
    let p = builtin("ou-1d").unwrap();
    let alpha = TamingExponent::scheme(0.25).unwrap();
    let s = StepSchedule::polynomial(0.1, 0.6).unwrap();
    let n = first_index_reaching(&s, 3.0, 10_000).unwrap();
    let x0 = 2.0;
    // b(x) = −x has ∥∇b∥ = 1, so the mean contracts deterministically
    let product: f64 = (1..=n)
        .map(|k| {
            let eta = s.eta(k).unwrap();
            1.0 - eta * taming_factor(eta, alpha, 1.0)
        })
        .product();
    let m = 20_000;
    let ys: Vec<f64> = (0..m)
        .map(|i| simulate_path(p.as_ref(), &s, alpha, &[x0], n, &[n], i, 3).unwrap()[0].1[0])
        .collect();
    let mean = ys.iter().sum::<f64>() / m as f64;
    let sd = (ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / (m - 1) as f64).sqrt();
    let se = sd / (m as f64).sqrt();
    assert!(
        (mean - x0 * product).abs() < 3.0 * se,
        "{mean} vs {}",
        x0 * product
    );
    // taming slows the contraction relative to e^{−t}
    let t = grid_time(&s, n).unwrap();
    assert!(x0 * product > x0 * (-t).exp());
}

#[test]
fn coupled_step_without_drift_is_exact() {
    let p = brownian(3);
    let alpha = TamingExponent::scheme(0.3).unwrap();
    for i in 0..50 {
        let (fine, one) = coupled_one_step(&p, &[0.1, -2.0, 5.0], 0.03, alpha, 64, i, 1).unwrap();
        assert_eq!(fine, one);
    }
}

#[test]
fn tangent_of_brownian_motion_is_constant() {
    let p = brownian(2);
    let s = simulate_tangent(&p, 0.7, 0.01, &[1.0, 2.0], &[3.0, -1.0], 5, 9).unwrap();
    assert_eq!(s.tangent, vec![3.0, -1.0]);
    assert!(simulate_tangent(&p, 0.7, 0.01, &[1.0, 2.0], &[0.0, 0.0], 5, 9).is_err());
}

#[test]
fn ou_tangent_decays_exponentially() {
    let p = builtin("ou-1d").unwrap();
    for eta in [1e-2, 5e-3, 1e-3] {
        let s = simulate_tangent(p.as_ref(), 1.0, eta, &[0.3], &[2.0], 0, 1).unwrap();
        assert!(
            (s.tangent[0] - 2.0 / std::f64::consts::E).abs() < 2.0 * eta,
            "{eta}: {}",
            s.tangent[0]
        );
    }
}

#[test]
fn bel_gradient_matches_ou_closed_form_and_finite_difference() {
    let p = builtin("ou-1d").unwrap();
    let f = |x: &[f64]| x[0].sin();
    let (t, x0) = (0.5f64, 0.7f64);
    let exact = (-t).exp() * (x0 * (-t).exp()).cos() * (-(1.0 - (-2.0 * t).exp()) / 4.0).exp();
    let m = 20_000;
    let (est, se) =
        bel_gradient(p.as_ref(), &f, t, &[x0], &[1.0], m, 1e-3, 21, &Sequential).unwrap();
    assert!((est - exact).abs() < 3.0 * se, "{est} ± {se} vs {exact}");
    let (fd, fd_se) = fd_gradient(
        p.as_ref(),
        &f,
        t,
        &[x0],
        &[1.0],
        1e-2,
        m,
        1e-3,
        21,
        &Sequential,
    )
    .unwrap();
    let combined = (se * se + fd_se * fd_se).sqrt();
    assert!((est - fd).abs() < 3.0 * combined, "{est} vs {fd}");
}

#[test]
fn lemma_a1_sums_monotone_in_parameters() {
    let s = StepSchedule::polynomial(0.1, 0.6).unwrap();
    let n = 5_000;
    let betas = [0.05, 0.1, 0.25, 0.4, 0.5];
    let cs = [2.0, 1.0, 0.5, 0.25, 0.1];
    for &beta in &betas {
        let mut last = 0.0;
        for &c in &cs {
            let r = lemma_a1_sums(&s, beta, c, n).unwrap();
            assert!(r.s1 >= last);
            last = r.s1;
        }
    }
    for &c in &cs {
        let mut last = (0.0, 0.0, 0.0);
        for &beta in &betas {
            let r = lemma_a1_sums(&s, beta, c, n).unwrap();
            let cur = (r.ratio1, r.ratio2, r.ratio3.unwrap());
            assert!(
                cur.0 >= last.0 && cur.1 >= last.1 && cur.2 >= last.2,
                "{beta} {c}"
            );
            last = cur;
        }
    }
}

#[test]
fn reference_self_consistency_on_ou() {
    let p = builtin("ou-1d").unwrap();
    let m = 4_000;
    let endpoints = |eta_ref: f64, lane: u32| {
        let run = ReferenceRun {
            eta_ref,
            taming: None,
            lane,
        };
        let xs = (0..m)
            .map(|i| simulate_reference(p.as_ref(), 1.0, &run, &[1.0], i, 5).unwrap()[0])
            .collect();
        PathEnsemble::from_samples(1, xs).unwrap()
    };
    let coarse = endpoints(0.02, 0);
    let fine = endpoints(0.01, 1);
    let other = endpoints(0.02, 2);
    // discretisation gap is below the sampling resolution
    let gap = wasserstein1_1d(&coarse, &fine).unwrap();
    let noise = wasserstein1_1d(&coarse, &other).unwrap();
    assert!(gap < 3.0 * noise, "{gap} {noise}");
}
