use proptest::prelude::*;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use trimfmr::em::{em_iteration, fit_penalized_fmr, EmControls};
use trimfmr::metrics::{align_components, aligned};
use trimfmr::mixture::{component_density, log_likelihood, mixture_density, penalized_objective, Dataset, MixtureParams};
use trimfmr::penalty::{PenaltyFamily, PenaltySpec};
use trimfmr::rng::stream;

fn family() -> impl Strategy<Value = PenaltyFamily> {
    prop_oneof![Just(PenaltyFamily::Lasso), Just(PenaltyFamily::Scad), Just(PenaltyFamily::Mcp)]
}

fn spec(family: PenaltyFamily, lambda: f64, a_extra: f64) -> PenaltySpec {
    let a = match family {
        PenaltyFamily::Scad => 2.05 + a_extra,
        _ => 1.05 + a_extra,
    };
    PenaltySpec::new(family, lambda, a).unwrap()
}

/// Random parameters and data from a seed; slopes are exactly zero with
/// probability 0.3.
fn fixture(seed: u64, m: usize, cols: usize, n: usize) -> (Dataset, MixtureParams) {
    let mut rng = stream(seed, &[]);
    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let coef: Vec<Vec<f64>> = (0..m)
        .map(|j| {
            (0..cols)
                .map(|k| {
                    if k > 0 && rng.random::<f64>() < 0.3 {
                        0.0
                    } else {
                        3.0 * j as f64 + rng.random_range(-1.5..1.5)
                    }
                })
                .collect()
        })
        .collect();
    let vars: Vec<f64> = (0..m).map(|_| rng.random_range(0.2..1.5)).collect();
    let theta = MixtureParams::new(raw.iter().map(|r| r / total).collect(), coef, vars).unwrap();
    let mut y = Vec::new();
    let mut rows = Vec::new();
    for i in 0..n {
        let j = i % m;
        let x: Vec<f64> = (1..cols).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b = &theta.coefficients()[j];
        let e: f64 = StandardNormal.sample(&mut rng);
        y.push(b[0] + x.iter().zip(&b[1..]).map(|(a, c)| a * c).sum::<f64>() + theta.variances()[j].sqrt() * e);
        rows.push(x);
    }
    (Dataset::from_covariates(y, &rows).unwrap(), theta)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn penalty_is_even_nonnegative_and_nondecreasing(
        fam in family(), lambda in 0.0f64..3.0, a_extra in 0.0f64..5.0,
        b1 in 0.0f64..5.0, b2 in 0.0f64..5.0, n in 1usize..500,
    ) {
        let s = spec(fam, lambda, a_extra);
        prop_assert_eq!(s.value(0.0, n), 0.0);
        prop_assert_eq!(s.value(b1, n), s.value(-b1, n));
        prop_assert!(s.value(b1, n) >= 0.0);
        prop_assert!(s.derivative(b1, n) >= 0.0);
        let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
        prop_assert!(s.value(lo, n) <= s.value(hi, n) + 1e-12);
    }

    #[test]
    fn concave_penalties_are_flat_past_a_lambda(
        lambda in 0.01f64..3.0, a_extra in 0.0f64..5.0, n in 1usize..500, t in 1.0f64..4.0,
    ) {
        let rn = (n as f64).sqrt();
        for fam in [PenaltyFamily::Scad, PenaltyFamily::Mcp] {
            let s = spec(fam, lambda, a_extra);
            let edge = s.a * lambda / rn;
            prop_assert!((s.value(edge * t, n) - s.value(edge, n)).abs() <= 1e-12 * (1.0 + s.value(edge, n)));
            prop_assert_eq!(s.derivative(edge * t * 1.0001, n), 0.0);
        }
    }

    #[test]
    fn zero_lambda_objective_is_the_log_likelihood(seed in any::<u64>(), m in 1usize..4, fam in family()) {
        let (data, theta) = fixture(seed, m, 3, 30);
        let specs = vec![spec(fam, 0.0, 1.0); m];
        let ll = log_likelihood(&data, &theta, None).unwrap();
        prop_assert_eq!(penalized_objective(&data, &theta, &specs, None).unwrap(), ll);
    }

    #[test]
    fn mixture_density_dominates_each_weighted_component(seed in any::<u64>(), m in 1usize..4) {
        let (data, theta) = fixture(seed, m, 3, 10);
        for i in 0..data.len() {
            let f = mixture_density(data.responses()[i], data.row(i), &theta);
            for j in 0..m {
                let part = theta.proportions()[j]
                    * component_density(data.responses()[i], data.row(i), &theta.coefficients()[j], theta.variances()[j]).unwrap();
                prop_assert!(f >= part * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn em_trace_never_decreases(seed in any::<u64>(), m in 1usize..3, fam in family(), lambda in 0.0f64..1.5) {
        let (data, theta) = fixture(seed, m, 4, 60);
        let controls = EmControls { n_starts: 0, max_iter: 200, monotonicity_assert: false, ..EmControls::default() };
        let specs = vec![spec(fam, lambda, 1.5); m];
        let r = fit_penalized_fmr(&data, &data.all_rows(), m, &specs, &controls, Some(&theta));
        if let Ok(fit) = r {
            for w in fit.objective_trace.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-7, "drop {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn relabeling_commutes_with_an_iteration(seed in any::<u64>(), fam in family(), lambda in 0.0f64..1.5) {
        let (data, theta) = fixture(seed, 3, 3, 40);
        let perm = [2, 0, 1];
        let specs = vec![spec(fam, lambda, 1.5); 3];
        let rows = data.all_rows();
        let floor = data.variance_floor();
        let ll = log_likelihood(&data, &theta, None).unwrap();
        let ll_perm = log_likelihood(&data, &theta.permuted(&perm), None).unwrap();
        prop_assert!((ll - ll_perm).abs() <= 1e-9 * (1.0 + ll.abs()));
        let (Ok(a), Ok(b)) = (
            em_iteration(&data, &rows, &theta, &specs, data.len(), floor),
            em_iteration(&data, &rows, &theta.permuted(&perm), &specs, data.len(), floor),
        ) else { return Ok(()) };
        for (u, v) in a.permuted(&perm).to_flat().iter().zip(b.to_flat()) {
            prop_assert!((u - v).abs() <= 1e-8 * (1.0 + u.abs()), "{u} vs {v}");
        }
    }

    #[test]
    fn frozen_slopes_stay_zero(seed in any::<u64>(), m in 1usize..3, fam in family(), lambda in 0.01f64..1.5) {
        let (data, theta) = fixture(seed, m, 4, 50);
        let controls = EmControls { n_starts: 0, max_iter: 50, ..EmControls::default() };
        let specs = vec![spec(fam, lambda, 1.5); m];
        if let Ok(fit) = fit_penalized_fmr(&data, &data.all_rows(), m, &specs, &controls, Some(&theta)) {
            for (start, end) in theta.coefficients().iter().zip(fit.theta.coefficients()) {
                for k in 1..start.len() {
                    if start[k] == 0.0 {
                        prop_assert_eq!(end[k], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn alignment_undoes_a_relabeling(seed in any::<u64>(), m in 1usize..5, pick in any::<u64>()) {
        let (_, theta) = fixture(seed, m, 3, 1);
        let mut perm: Vec<usize> = (0..m).collect();
        let mut rng = stream(pick, &[]);
        for i in (1..m).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let shuffled = theta.permuted(&perm);
        prop_assert_eq!(aligned(&shuffled, &theta).unwrap(), theta.clone());
        let identity: Vec<usize> = (0..m).collect();
        prop_assert_eq!(align_components(&theta, &theta).unwrap(), identity);
    }
}
