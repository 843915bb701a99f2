use std::f64::consts::PI;

use adiabatic_core::adiabatic::{
    count_degree, estimate_r_exponent, rhs_counting, rhs_trace_of_function, run_sweep, ExponentEstimate, SweepOptions,
    SweepTarget,
};
use adiabatic_core::leafwise::{leafwise_distribution_fibered, leafwise_distribution_flat, LeafQuadrature};
use adiabatic_core::models::{binomial, build_fibered_model, build_flat_model, Bigrade};
use adiabatic_core::operators::assemble_fibered_operators;
use adiabatic_core::spectra::{count_modes, enumerate_modes, trace_of_function, DEFAULT_ENUMERATION_BUDGET};
use adiabatic_core::{FiberedTorusModel, FlatLinearFoliation, TestFunction};
use proptest::prelude::*;

fn kronecker() -> FlatLinearFoliation {
    build_flat_model(2, &[vec![1.0, 2f64.sqrt()]]).unwrap()
}

fn axis() -> FlatLinearFoliation {
    build_flat_model(2, &[vec![1.0, 0.0]]).unwrap()
}

fn varying_fibered(n: usize) -> FiberedTorusModel {
    build_fibered_model(
        n,
        n,
        |x, y| 1.0 + 0.3 * (2.0 * PI * x).cos() * (2.0 * PI * y).cos(),
        |_, y| 1.0 + 0.5 * (2.0 * PI * y).sin().powi(2),
    )
    .unwrap()
}

#[test]
fn form_degree_sum_rule_in_three_dimensions() {
    let m = build_flat_model(3, &[vec![1.0, 2f64.sqrt(), 0.0]]).unwrap();
    let (p, q) = (m.leaf_dim(), m.codim());
    for lambda in [0.0, 40.0, 90.0] {
        let f = count_modes(&m, m.functions(), 0.4, lambda, DEFAULT_ENUMERATION_BUDGET).unwrap();
        let mut total = 0;
        for k in 0..=3 {
            let by_degree = count_degree(&m, k, 0.4, lambda, DEFAULT_ENUMERATION_BUDGET).unwrap();
            assert_eq!(by_degree, binomial(3, k) * f);
            total += by_degree;
        }
        assert_eq!(total, 8 * f);
        for i in 0..=p {
            for j in 0..=q {
                let g = Bigrade::new(i, j, p, q).unwrap();
                let n = count_modes(&m, g, 0.4, lambda, DEFAULT_ENUMERATION_BUDGET).unwrap();
                assert_eq!(n, binomial(p, i) * binomial(q, j) * f);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn counting_is_monotone(l1 in 0.0f64..200.0, dl in 0.0f64..100.0, h1 in 0.05f64..1.0, shrink in 0.3f64..1.0) {
        let m = kronecker();
        let g = m.functions();
        let low = count_modes(&m, g, h1, l1, DEFAULT_ENUMERATION_BUDGET).unwrap();
        let high = count_modes(&m, g, h1, l1 + dl, DEFAULT_ENUMERATION_BUDGET).unwrap();
        prop_assert!(low <= high);
        let smaller_h = count_modes(&m, g, h1 * shrink, l1, DEFAULT_ENUMERATION_BUDGET).unwrap();
        prop_assert!(low <= smaller_h);
    }

    #[test]
    fn enumeration_agrees_with_doubled_bound(lambda in 1.0f64..150.0, h in 0.1f64..1.0) {
        let m = axis();
        let a = enumerate_modes(&m, m.functions(), h, lambda, DEFAULT_ENUMERATION_BUDGET).unwrap();
        let b = enumerate_modes(&m, m.functions(), h, 2.0 * lambda, DEFAULT_ENUMERATION_BUDGET).unwrap();
        let below: Vec<_> = b.eigenvalues.into_iter().filter(|e| e.value <= lambda).collect();
        prop_assert_eq!(a.eigenvalues, below);
    }
}

#[test]
fn leafwise_scaling_under_doubled_transverse_metric() {
    let one = varying_fibered(32);
    let mut two = one.clone();
    two.b.iter_mut().for_each(|b| *b *= 2.0);
    let a = leafwise_distribution_fibered(&one, LeafQuadrature::AllRows, 800.0).unwrap();
    let b = leafwise_distribution_fibered(&two, LeafQuadrature::AllRows, 800.0).unwrap();
    for lambda in [0.0, 10.0, 100.0, 400.0] {
        let want = 2f64.sqrt() * a.evaluate(lambda);
        assert!((b.evaluate(lambda) - want).abs() <= 1e-12 * want.max(1.0));
    }
    let mass: f64 = one.b.iter().map(|b| b.sqrt()).sum::<f64>() / one.ny as f64;
    assert!((a.evaluate(0.0) - mass).abs() < 1e-12);
}

#[test]
fn sharpening_indicator_converges_to_counts() {
    let m = axis();
    let sample = enumerate_modes(&m, m.functions(), 0.3, 200.0, DEFAULT_ENUMERATION_BUDGET).unwrap();
    let lambda = 60.0;
    let exact = count_modes(&m, m.functions(), 0.3, lambda, DEFAULT_ENUMERATION_BUDGET).unwrap() as f64;
    let mut previous = f64::INFINITY;
    for ramp in [1.0, 0.1, 1e-3] {
        let f = TestFunction::SmoothedIndicator { edge: lambda, ramp };
        let v = trace_of_function(&sample, &f).unwrap().value;
        let err = (v - exact).abs();
        assert!(err <= previous);
        previous = err;
    }
    assert!(previous < 1e-12);

    // the same limit on the prediction side
    let nf = leafwise_distribution_flat(&kronecker(), kronecker().functions(), 0.0).unwrap();
    let c = rhs_counting(&nf, lambda, 1).unwrap();
    let f = TestFunction::SmoothedIndicator {
        edge: lambda,
        ramp: 1e-4,
    };
    let v = rhs_trace_of_function(&nf, &f, 1).unwrap();
    assert!((v - c).abs() < 1e-4 * c);
}

#[test]
fn no_flagged_cells_on_supported_models() {
    let grid: Vec<f64> = (0..8).map(|i| -5.0 + 15.0 * i as f64).collect();
    let schedule = [0.4, 0.2, 0.1];

    let k = kronecker();
    let nf = leafwise_distribution_flat(&k, k.functions(), 0.0).unwrap();
    let target = SweepTarget::Flat {
        model: &k,
        grade: k.functions(),
    };
    let report = run_sweep("kronecker", &target, &nf, &schedule, &grid, &SweepOptions::default()).unwrap();
    assert!(report.flagged.is_empty());

    let a = axis();
    for grade in [a.functions(), a.bigrade(1, 1).unwrap()] {
        let nf = leafwise_distribution_flat(&a, grade, 1e3).unwrap();
        let target = SweepTarget::Flat { model: &a, grade };
        let report = run_sweep("axis", &target, &nf, &schedule, &grid, &SweepOptions::default()).unwrap();
        assert!(report.flagged.is_empty());
    }

    let model = varying_fibered(24);
    let pair = assemble_fibered_operators(&model).unwrap();
    let nf = leafwise_distribution_fibered(&model, LeafQuadrature::AllRows, 1e4).unwrap();
    let target = SweepTarget::Fibered { pair: &pair, count: 40 };
    let report = run_sweep("fibered", &target, &nf, &schedule, &grid, &SweepOptions::default()).unwrap();
    assert!(report.flagged.is_empty());
    assert_eq!(report.lhs[0][0], Some(0));
    assert!(report.lhs[0][1].unwrap() >= 1);
}

#[test]
fn fitted_exponents_stay_in_bracket() {
    let schedule = [0.2, 0.1, 0.05, 0.025];
    let eps = 0.15;
    for (m, lambda) in [
        (kronecker(), 10.0),
        (kronecker(), 100.0),
        (axis(), 10.0),
        (axis(), 100.0),
    ] {
        let counts: Vec<f64> = schedule
            .iter()
            .map(|&h| count_modes(&m, m.functions(), h, lambda, DEFAULT_ENUMERATION_BUDGET).unwrap() as f64)
            .collect();
        match estimate_r_exponent(&counts, &schedule).unwrap() {
            ExponentEstimate::Finite { r, .. } => {
                assert!(r >= -eps && r <= m.codim() as f64 + eps, "λ={lambda}: r={r}")
            }
            ExponentEstimate::NegInfinity => panic!("counts include the zero mode"),
        }
    }
}

#[test]
fn sweep_is_independent_of_worker_count() {
    let k = kronecker();
    let nf = leafwise_distribution_flat(&k, k.functions(), 0.0).unwrap();
    let target = SweepTarget::Flat {
        model: &k,
        grade: k.functions(),
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                run_sweep(
                    "kronecker",
                    &target,
                    &nf,
                    &[0.2, 0.1, 0.05, 0.025],
                    &[1.0, 10.0, 100.0],
                    &SweepOptions::default(),
                )
                .unwrap()
            })
    };
    let one = run(1);
    let four = run(4);
    assert_eq!(
        serde_json::to_string(&one).unwrap(),
        serde_json::to_string(&four).unwrap()
    );
}
