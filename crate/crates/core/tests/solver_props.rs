use ehsel_core::baselines::{joshi_boyd_select, lower_bound, solve_ss};
use ehsel_core::jsseh::{majorizer, solve_jsseh, InitKind};
use ehsel_core::oracle::reference_waterfill;
use ehsel_core::scenario::{generate, GeneratorParams};
use ehsel_core::sseh::{eh_aware_phases, power_allocation, power_allocation_with_duals, solve_sseh, SelectionSets};
use ehsel_core::waterfill::{directional_waterfill, WaterfillProblem};
use ehsel_core::{Scenario, SolverOptions};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scenario(sensors: usize, slots: usize, k: usize, seed: u64) -> Scenario {
    generate(&GeneratorParams {
        sensors,
        slots,
        k,
        dim: 3,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn waterfill_problem() -> impl Strategy<Value = WaterfillProblem> {
    (1usize..=10).prop_flat_map(|n| {
        (
            prop::collection::vec(0.1f64..3.0, n),
            prop::collection::vec(0.1f64..3.0, n),
            prop::collection::vec(prop_oneof![Just(0.0), 0.1f64..4.0], n),
            0.5f64..2.0,
        )
            .prop_map(|(lambda, xi, mut energy, ts)| {
                energy[0] += 0.2;
                WaterfillProblem { lambda, xi, energy, ts }
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn levels_rise_only_at_arrivals(prob in waterfill_problem()) {
        let sol = directional_waterfill(&prob, 1e-8).unwrap();
        for t in 1..prob.len() {
            let (a, b) = (sol.levels[t - 1], sol.levels[t]);
            prop_assert!(a <= b);
            if a.is_finite() && b > a * (1.0 + 1e-12) {
                prop_assert!(prob.energy[t] > 0.0, "level rose at a slot without arrival");
            }
        }
    }

    #[test]
    fn positive_last_weight_spends_everything(prob in waterfill_problem()) {
        let sol = directional_waterfill(&prob, 1e-8).unwrap();
        let spent: f64 = prob.ts * sol.p.iter().sum::<f64>();
        let harvested: f64 = prob.energy.iter().sum();
        prop_assert!((spent - harvested).abs() <= 1e-9 * harvested.max(1.0));
    }

    #[test]
    fn weight_scaling_keeps_powers(prob in waterfill_problem(), c in 0.01f64..100.0) {
        let sol = directional_waterfill(&prob, 1e-8).unwrap();
        let scaled = WaterfillProblem { lambda: prob.lambda.iter().map(|l| c * l).collect(), ..prob.clone() };
        let other = directional_waterfill(&scaled, 1e-8).unwrap();
        for (a, b) in sol.p.iter().zip(&other.p) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn waterfill_at_least_oracle(prob in waterfill_problem()) {
        let sol = directional_waterfill(&prob, 1e-8).unwrap();
        let oracle = reference_waterfill(&prob);
        prop_assert!(prob.objective(&sol.p) >= prob.objective(&oracle) - 1e-6);
    }

    #[test]
    fn majorizer_bounds_bilinear(
        z in 0.0f64..=1.0, s in 0.0f64..=1.0, p in 0.0f64..5.0,
        z0 in 0.0f64..=1.0, s0 in 0.0f64..=1.0, p0 in 0.0f64..5.0,
        xi in 1.0f64..20.0,
    ) {
        let upper = majorizer(z, s, p, z0, s0, p0, xi) - s * xi;
        prop_assert!(upper >= s * p - p * z - 1e-10);
        let tight = majorizer(z0, s0, p0, z0, s0, p0, xi) - s0 * xi;
        prop_assert!((tight - (s0 * p0 - p0 * z0)).abs() <= 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn duals_stay_nonnegative(seed in 0u64..10_000) {
        let sc = scenario(5, 4, 2, seed);
        let sets = SelectionSets::all(5, 4);
        let (_, duals) = power_allocation_with_duals(&sc, &sets, &SolverOptions::default()).unwrap();
        prop_assert!(duals.lambda.iter().all(|&l| l >= 0.0));
        prop_assert!(duals.beta.iter().all(|&b| b >= 0.0));
    }

    // Per slot this can fail: a sensor dropped from one slot saves its
    // energy for a later one. Only the total is ordered.
    #[test]
    fn restriction_never_helps_in_total(seed in 0u64..10_000) {
        let sc = scenario(6, 4, 2, seed);
        let opts = SolverOptions::default();
        let (sets, relaxed) = eh_aware_phases(&sc, &opts).unwrap();
        let restricted = power_allocation(&sc, &sets, &opts).unwrap();
        prop_assert!(restricted.total_distortion >= relaxed.total_distortion - 1e-9);
    }

    #[test]
    fn mm_descends_and_stays_feasible(seed in 0u64..10_000, init in 0usize..3) {
        let sc = scenario(5, 3, 2, seed);
        let kind = [InitKind::FromSseh, InitKind::UniformZero, InitKind::Random(seed)][init];
        let r = solve_jsseh(&sc, kind, &SolverOptions::default()).unwrap();
        let trace = r.iterates.as_ref().unwrap();
        for w in trace.windows(2) {
            prop_assert!(w[1].objective <= w[0].objective + 1e-8);
        }
        prop_assert!(trace.iter().all(|rec| rec.constraint_residual <= 1e-6));
        prop_assert!(r.residuals.audit.passed);
    }

    #[test]
    fn relaxed_selection_ignores_energy(seed in 0u64..10_000) {
        let sc = scenario(6, 4, 3, seed);
        let opts = SolverOptions::default();
        let (z, set) = joshi_boyd_select(&sc, &opts).unwrap();
        let mut values: Vec<f64> = sc.e.iter().cloned().collect();
        values.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let e = ndarray::Array2::from_shape_vec(sc.e.dim(), values).unwrap();
        let shuffled = Scenario { e, ..sc.clone() };
        let (z2, set2) = joshi_boyd_select(&shuffled, &opts).unwrap();
        prop_assert_eq!(set, set2);
        prop_assert_eq!(z, z2);
    }

    #[test]
    fn lower_bound_below_every_policy(seed in 0u64..10_000) {
        let sc = scenario(6, 4, 2, seed);
        let opts = SolverOptions::default();
        let lb = lower_bound(&sc, &opts).unwrap().total_distortion;
        let others = [
            solve_ss(&sc, &opts).unwrap().total_distortion,
            solve_sseh(&sc, &opts).unwrap().total_distortion,
            solve_jsseh(&sc, InitKind::UniformZero, &opts).unwrap().total_distortion,
        ];
        for d in others {
            prop_assert!(lb <= d + 1e-9);
        }
    }

    #[test]
    fn lower_bound_monotone_in_energy(seed in 0u64..10_000) {
        let sc = scenario(5, 4, 2, seed);
        let opts = SolverOptions::default();
        let more = Scenario { e: sc.e.mapv(|v| 2.0 * v), ..sc.clone() };
        let a = lower_bound(&sc, &opts).unwrap().total_distortion;
        let b = lower_bound(&more, &opts).unwrap().total_distortion;
        prop_assert!(b <= a + 1e-9);
    }
}
