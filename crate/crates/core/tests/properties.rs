use proptest::prelude::*;

use fairalloc::arrivals::measure_l1_discrepancy;
use fairalloc::instance::{read_csv, utilities_of, write_csv};
use fairalloc::online::run_greedy;
use fairalloc::solver::brute_force_oracle;
use fairalloc::welfare::{conjugate, dual_objective, eval_log_welfare, eval_welfare, grad_log_welfare};
use fairalloc::{solve_hindsight, AllocationPlan, ItemSequence, SolverOptions, WelfareSpec};

fn exponent() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), -3.0..0.9f64]
}

fn spec_and_point(n: usize) -> impl Strategy<Value = (WelfareSpec, Vec<f64>)> {
    (
        exponent(),
        prop::collection::vec(0.1..3.0f64, n),
        prop::collection::vec(0.05..5.0f64, n),
    )
        .prop_map(|(p, w, u)| (WelfareSpec::new(p, w).unwrap(), u))
}

/// Items with every agent valuing at least one row.
fn instance(max_n: usize, max_t: usize) -> impl Strategy<Value = (WelfareSpec, ItemSequence)> {
    (1..=max_n).prop_flat_map(move |n| {
        (n..=max_t).prop_flat_map(move |t| {
            (
                exponent(),
                prop::collection::vec(0.2..2.0f64, n),
                prop::collection::vec(prop_oneof![1 => Just(0.0), 4 => 0.01..1.0f64], t * n),
            )
                .prop_map(move |(p, w, mut values)| {
                    for i in 0..n {
                        if (0..t).all(|r| values[r * n + i] == 0.0) {
                            values[(i % t) * n + i] = 0.5;
                        }
                    }
                    (
                        WelfareSpec::new(p, w).unwrap(),
                        ItemSequence::from_flat(values, n, 1.0).unwrap(),
                    )
                })
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn welfare_is_homogeneous((spec, u) in spec_and_point(3), alpha in 0.1..10.0f64) {
        let scaled: Vec<f64> = u.iter().map(|x| alpha * x).collect();
        let lhs = eval_welfare(&spec, &scaled).unwrap();
        let rhs = alpha * eval_welfare(&spec, &u).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.max(1.0));
    }

    #[test]
    fn gradient_matches_central_differences((spec, u) in spec_and_point(4)) {
        let g = grad_log_welfare(&spec, &u).unwrap();
        for i in 0..u.len() {
            let h = 1e-6 * u[i];
            let mut up = u.clone();
            let mut down = u.clone();
            up[i] += h;
            down[i] -= h;
            let fd = (eval_log_welfare(&spec, &up).unwrap() - eval_log_welfare(&spec, &down).unwrap()) / (2.0 * h);
            prop_assert!((g[i] - fd).abs() <= 1e-5 * g[i].max(1.0), "{} vs {}", g[i], fd);
        }
        // Euler: ⟨∇log f(u), u⟩ = 1.
        let euler: f64 = g.iter().zip(&u).map(|(a, b)| a * b).sum();
        prop_assert!((euler - 1.0).abs() < 1e-10);
    }

    #[test]
    fn fenchel_young((spec, u) in spec_and_point(3), beta in prop::collection::vec(0.05..5.0f64, 3)) {
        let lhs = eval_log_welfare(&spec, &u).unwrap();
        let inner: f64 = beta.iter().zip(&u).map(|(b, x)| b * x).sum();
        prop_assert!(lhs <= inner + conjugate(&spec, &beta).unwrap() + 1e-10);
        // Equality at the gradient.
        let g = grad_log_welfare(&spec, &u).unwrap();
        let at_grad: f64 = g.iter().zip(&u).map(|(b, x)| b * x).sum::<f64>() + conjugate(&spec, &g).unwrap();
        prop_assert!((lhs - at_grad).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn csv_round_trip_is_exact(values in prop::collection::vec(0.0..1.0f64, 1..40), n in 1usize..5) {
        let rows = values.len() / n;
        prop_assume!(rows > 0);
        let seq = ItemSequence::from_flat(values[..rows * n].to_vec(), n, 1.0).unwrap();
        let mut buf = Vec::new();
        write_csv(&seq, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), Some(1.0)).unwrap();
        prop_assert_eq!(back.as_flat(), seq.as_flat());
    }

    #[test]
    fn l1_discrepancy_is_a_metric(a in prop::collection::vec(0.0..1.0f64, 12), b in prop::collection::vec(0.0..1.0f64, 12)) {
        let a = ItemSequence::from_flat(a, 3, 1.0).unwrap();
        let b = ItemSequence::from_flat(b, 3, 1.0).unwrap();
        let ab = measure_l1_discrepancy(&a, &b).unwrap();
        let ba = measure_l1_discrepancy(&b, &a).unwrap();
        prop_assert_eq!(ab.delta_avg, ba.delta_avg);
        prop_assert_eq!(measure_l1_discrepancy(&a, &a).unwrap().delta_avg, 0.0);
    }

    #[test]
    fn greedy_bookkeeping((spec, items) in instance(4, 30)) {
        let traj = run_greedy(&spec, &items, true).unwrap();
        let u = utilities_of(&items, &traj.choices).unwrap();
        for i in 0..spec.n() {
            prop_assert!((u[i] - traj.final_u[i]).abs() < 1e-12);
        }
        let integral = AllocationPlan::integral(&traj.winners, spec.n());
        prop_assert_eq!(integral.as_flat(), traj.choices.as_flat());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn solver_is_certified_and_dominates_plans((spec, items) in instance(4, 25), beta in prop::collection::vec(0.05..5.0f64, 4)) {
        let result = solve_hindsight(&spec, &items, SolverOptions::default()).unwrap();
        prop_assert!(result.certified);
        prop_assert!(result.relative_gap() <= 1e-8);
        let n = spec.n();
        // Weak duality at arbitrary prices.
        let dual = dual_objective(&spec, &beta[..n], &vec![0.0; n], items.as_flat(), items.len()).unwrap();
        prop_assert!(result.primal <= dual + 1e-10);
        // The plan realizes u*.
        let u = utilities_of(&items, &result.plan).unwrap();
        for i in 0..n {
            prop_assert!((u[i] - result.u_star[i]).abs() < 1e-9);
        }
        // Greedy is feasible, so it cannot beat the optimum.
        let greedy = run_greedy(&spec, &items, true).unwrap();
        let f = eval_log_welfare(&spec, &greedy.final_u).unwrap();
        prop_assert!(f <= result.primal + 1e-9);
    }

    #[test]
    fn optimum_is_homogeneous((spec, items) in instance(3, 12), alpha in 0.1..1.0f64) {
        let base = solve_hindsight(&spec, &items, SolverOptions::default()).unwrap();
        let scaled = solve_hindsight(&spec, &items.scaled(alpha).unwrap(), SolverOptions::default()).unwrap();
        prop_assert!((scaled.primal - base.primal - alpha.ln()).abs() < 1e-7);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn solver_agrees_with_grid_oracle((spec, items) in instance(3, 4)) {
        let result = solve_hindsight(&spec, &items, SolverOptions::default()).unwrap();
        let grid = brute_force_oracle(&spec, &items, 30).unwrap();
        let opt = result.primal.exp();
        prop_assert!(opt >= grid - 1e-9);
        prop_assert!(opt - grid <= 3.0 * items.n() as f64 / 30.0, "{opt} vs {grid}");
    }
}
