//! Invariants of the numerical layers, checked against nalgebra and direct
//! formulas on randomized instances.

use hyperbo::acquisition::{ei_from_moments, tau};
use hyperbo::gp::{log_marginal_likelihood, Dataset, Posterior};
use hyperbo::hypercontrol::{
    clamp_nu, estimate_theta_constrained, shrink_upper_bounds, ControllerConfig, HyperBounds,
    MlSearchConfig,
};
use hyperbo::infogain::{greedy_max_info_gain, info_gain_logdet, info_gain_sequential};
use hyperbo::kernel::{KernelFamily, KernelSpec, LengthScales};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn family(matern: bool) -> KernelFamily {
    if matern {
        KernelFamily::Matern52
    } else {
        KernelFamily::SquaredExponential
    }
}

fn spec(f: KernelFamily, theta: &[f64]) -> KernelSpec {
    KernelSpec::new(f, LengthScales::new(theta.to_vec()).unwrap())
}

fn gram(s: &KernelSpec, xs: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(xs.len(), xs.len(), |i, j| s.eval(&xs[i], &xs[j]).unwrap())
}

/// Point sets in `[0, 1]^d` with matching length scales.
fn instance(max_n: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, bool)> {
    (1usize..=3).prop_flat_map(move |d| {
        (
            prop::collection::vec(prop::collection::vec(0.0f64..1.0, d), 1..=max_n),
            prop::collection::vec(0.05f64..1.0, d),
            any::<bool>(),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn kernel_matrices_are_positive_semidefinite((xs, theta, m) in instance(20)) {
        let k = gram(&spec(family(m), &theta), &xs);
        let min = k.symmetric_eigenvalues().min();
        prop_assert!(min >= -1e-10, "min eigenvalue {min}");
    }

    #[test]
    fn posterior_matches_dense_oracle(
        (xs, theta, m) in instance(15),
        sigma in 0.01f64..0.5,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = theta.len();
        let ys: Vec<f64> = xs.iter().map(|_| rng.random_range(-3.0..3.0)).collect();
        let s = spec(family(m), &theta);
        let post = Posterior::fit(s.clone(), Dataset::new(xs.clone(), ys.clone(), sigma).unwrap()).unwrap();
        let n = xs.len();
        let inv = (gram(&s, &xs) + DMatrix::identity(n, n) * sigma * sigma).try_inverse().unwrap();
        let y = DVector::from_vec(ys.clone());
        let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let kx = DVector::from_iterator(n, xs.iter().map(|p| s.eval(p, &x).unwrap()));
        let mean = kx.dot(&(&inv * &y));
        let var = 1.0 - kx.dot(&(&inv * &kx));
        prop_assert!((post.mean(&x).unwrap() - mean).abs() < 1e-8);
        prop_assert!((post.var(&x).unwrap() - var.max(0.0)).abs() < 1e-8);

        // log marginal likelihood against the dense formula
        let a = gram(&s, &xs) + DMatrix::identity(n, n) * sigma * sigma;
        let lml = -0.5 * y.dot(&(&inv * &y))
            - 0.5 * a.determinant().ln()
            - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        let ours = log_marginal_likelihood(&s, post.data()).unwrap();
        prop_assert!((ours - lml).abs() < 1e-6 * (1.0 + lml.abs()), "{ours} vs {lml}");
    }

    #[test]
    fn more_data_never_raises_variance(
        (xs, theta, m) in instance(12),
        sigma in 0.01f64..0.5,
        probe in prop::collection::vec(0.0f64..1.0, 3),
    ) {
        let s = spec(family(m), &theta);
        let x = &probe[..theta.len()];
        let mut prev = 1.0 + 1e-12;
        for n in 0..=xs.len() {
            let data = Dataset::new(xs[..n].to_vec(), vec![0.0; n], sigma).unwrap();
            let v = Posterior::fit(s.clone(), data).unwrap().var(x).unwrap();
            prop_assert!(v <= prev + 1e-10, "n = {n}: {v} > {prev}");
            prev = v;
        }
    }

    #[test]
    fn shorter_length_scales_never_lower_variance(
        (xs, theta, _m) in instance(12),
        factor in 0.2f64..1.0,
        sigma in 0.01f64..0.5,
        probe in prop::collection::vec(0.0f64..1.0, 3),
    ) {
        let small: Vec<f64> = theta.iter().map(|t| t * factor).collect();
        let data = Dataset::new(xs.clone(), vec![0.0; xs.len()], sigma).unwrap();
        let x = &probe[..theta.len()];
        let fam = KernelFamily::SquaredExponential;
        let big = Posterior::fit(spec(fam, &theta), data.clone()).unwrap().var(x).unwrap();
        let short = Posterior::fit(spec(fam, &small), data).unwrap().var(x).unwrap();
        prop_assert!(big <= short + 1e-8, "{big} > {short}");
    }

    #[test]
    fn information_gain_identities(
        (xs, theta, m) in instance(20),
        factor in 0.2f64..1.0,
        sigma in 0.05f64..1.0,
    ) {
        let s = spec(family(m), &theta);
        let rep = info_gain_sequential(&s, &xs, sigma).unwrap();
        let eig = gram(&s, &xs).symmetric_eigenvalues();
        let oracle: f64 = eig.iter().map(|l| 0.5 * (1.0 + l.max(0.0) / (sigma * sigma)).ln()).sum();
        prop_assert!((rep.total - oracle).abs() < 1e-8);
        prop_assert!(rep.per_point_terms.iter().all(|t| *t >= 0.0));

        let small: Vec<f64> = theta.iter().map(|t| t * factor).collect();
        let shrunk = info_gain_logdet(&spec(family(m), &small), &xs, sigma).unwrap();
        prop_assert!(rep.logdet_total <= shrunk + 1e-8);
    }

    #[test]
    fn shrinking_is_monotone_and_terminates(
        lower in prop::collection::vec(0.01f64..0.5, 1..4),
        spread in prop::collection::vec(1.0f64..100.0, 4),
        p in 0.1f64..0.9,
        isotropic in any::<bool>(),
    ) {
        let lower: Vec<f64> = if isotropic { vec![lower[0]; lower.len()] } else { lower };
        let upper: Vec<f64> = lower.iter().zip(&spread).map(|(l, s)| l * s).collect();
        let mut b = HyperBounds::new(
            LengthScales::new(lower.clone()).unwrap(),
            LengthScales::new(upper.clone()).unwrap(),
        ).unwrap();
        let min_l = lower.iter().copied().fold(f64::INFINITY, f64::min);
        let max_l = lower.iter().copied().fold(0.0, f64::max);
        let max_u = upper.iter().copied().fold(0.0, f64::max);
        let limit = ((min_l / max_u).ln() / p.ln()).ceil().max(0.0) as usize;
        let mut events = 0;
        loop {
            let next = shrink_upper_bounds(&b, p);
            prop_assert!(next.upper().le(b.upper()));
            prop_assert!(next.lower() == b.lower());
            prop_assert!(next.lower().le(next.upper()));
            if next == b {
                break;
            }
            b = next;
            events += 1;
            prop_assert!(events <= limit, "{events} shrinks exceed {limit}");
        }
        if isotropic {
            prop_assert!(b.is_collapsed());
        } else {
            // with unequal lower bounds the rule can settle above θ^L, at
            // max(min(p·max θ^L, initial θ^U_i), θ^L_i)
            for ((u, l), u0) in b.upper().values().iter().zip(&lower).zip(&upper) {
                let fixed = (p * max_l).min(*u0).max(*l);
                prop_assert!((u - fixed).abs() <= 1e-12 * fixed, "{u} vs {fixed}");
            }
        }
    }

    #[test]
    fn nu_stays_in_interval(estimate in 0.0f64..1e4, xi in 1e-3f64..1e3, c1 in 1e-4f64..0.5, gap in 0.01f64..10.0) {
        let cfg = ControllerConfig { c1, c2: c1 + gap, ..ControllerConfig::default() };
        let nu = clamp_nu(estimate, xi, &cfg);
        prop_assert!(nu >= cfg.c1 * xi && nu <= cfg.c2 * xi);
    }

    #[test]
    fn tau_relations(z in -30.0f64..30.0, w in -30.0f64..30.0) {
        prop_assert!((tau(z) - tau(-z) - z).abs() < 1e-12);
        prop_assert!(tau(z) >= 0.0 && tau(z) >= z);
        if z <= w {
            prop_assert!(tau(z) <= tau(w));
        }
    }

    #[test]
    fn ei_increases_with_nu(mean in -2.0f64..2.0, sd in 0.01f64..2.0, inc in -2.0f64..2.0, nu in 0.1f64..5.0, extra in 0.0f64..5.0) {
        prop_assert!(ei_from_moments(mean, sd, inc, nu) <= ei_from_moments(mean, sd, inc, nu + extra) + 1e-15);
    }
}

#[test]
fn greedy_information_gain_is_near_optimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..20 {
        let n = 8;
        let k = 3;
        let cands: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let s = spec(family(trial % 2 == 1), &[0.3, 0.3]);
        let (chosen, greedy) = greedy_max_info_gain(&s, &cands, k, 0.1).unwrap();
        assert_eq!(chosen.len(), k);
        let direct = info_gain_logdet(&s, &chosen.iter().map(|&i| cands[i].clone()).collect::<Vec<_>>(), 0.1).unwrap();
        assert!((direct - greedy).abs() < 1e-9);
        let mut best: f64 = 0.0;
        for a in 0..n {
            for b in a + 1..n {
                for c in b + 1..n {
                    let pts = vec![cands[a].clone(), cands[b].clone(), cands[c].clone()];
                    best = best.max(info_gain_logdet(&s, &pts, 0.1).unwrap());
                }
            }
        }
        assert!(greedy >= (1.0 - (-1f64).exp()) * best - 1e-12, "{greedy} vs {best}");
        assert!(greedy <= best + 1e-12);
    }
}

fn sample_gp(rng: &mut ChaCha8Rng, xs: &[Vec<f64>], theta: f64, sigma: f64) -> Vec<f64> {
    let s = spec(KernelFamily::SquaredExponential, &[theta]);
    let n = xs.len();
    let l = (gram(&s, xs) + DMatrix::identity(n, n) * 1e-10).cholesky().unwrap().l();
    let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)));
    let f = l * z;
    f.iter()
        .map(|v| {
            let e: f64 = StandardNormal.sample(rng);
            v + sigma * e
        })
        .collect()
}

#[test]
fn likelihood_search_recovers_true_length_scale() {
    let bounds = HyperBounds::new(
        LengthScales::new(vec![0.01]).unwrap(),
        LengthScales::new(vec![1.0]).unwrap(),
    )
    .unwrap();
    let seeds = 20;
    let mut hits = 0;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.random::<f64>()]).collect();
        let ys = sample_gp(&mut rng, &xs, 0.2, 0.05);
        let data = Dataset::new(xs, ys, 0.05).unwrap();
        let est = estimate_theta_constrained(&data, &bounds, KernelFamily::SquaredExponential, &MlSearchConfig::default())
            .unwrap();
        let t = est.values()[0];
        if (0.1..=0.4).contains(&t) {
            hits += 1;
        }

        // no random feasible probe beats the search
        let best = log_marginal_likelihood(&KernelSpec::new(KernelFamily::SquaredExponential, est), &data).unwrap();
        for _ in 0..10 {
            let probe = (rng.random_range(0.01f64.ln()..0.0)).exp();
            let l = log_marginal_likelihood(&spec(KernelFamily::SquaredExponential, &[probe]), &data).unwrap();
            assert!(best >= l - 1e-9, "probe {probe} beats estimate {t}");
        }
    }
    assert!(hits as f64 >= 0.9 * seeds as f64, "{hits}/{seeds} within a factor 2");
}

#[test]
fn collapsed_bounds_return_lower() {
    let b = HyperBounds::new(
        LengthScales::new(vec![0.3, 0.2]).unwrap(),
        LengthScales::new(vec![0.3, 0.2]).unwrap(),
    )
    .unwrap();
    let data = Dataset::new(vec![vec![0.1, 0.2]], vec![1.0], 0.1).unwrap();
    let t = estimate_theta_constrained(&data, &b, KernelFamily::Matern52, &MlSearchConfig::default()).unwrap();
    assert_eq!(t.values(), &[0.3, 0.2]);
}
