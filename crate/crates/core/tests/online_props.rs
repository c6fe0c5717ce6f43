use ehsel_core::online::{run_online, unspent_energy, OnlineConfig, Policy, Window};
use ehsel_core::scenario::{generate, GeneratorParams};
use ehsel_core::sseh::solve_sseh;
use ehsel_core::{Scenario, SolverOptions};
use proptest::prelude::*;

fn scenario(seed: u64, mu: f64) -> Scenario {
    generate(&GeneratorParams {
        sensors: 5,
        slots: 6,
        k: 2,
        dim: 3,
        mu,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn cfg(policy: Policy, window: Window) -> OnlineConfig {
    OnlineConfig {
        policy,
        window,
        options: SolverOptions::default(),
    }
}

fn window() -> impl Strategy<Value = Window> {
    prop_oneof![Just(Window::FullHorizon), (1usize..=6).prop_map(Window::Slots)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn future_arrivals_leave_prefix_alone(
        seed in 0u64..10_000,
        cut in 0usize..5,
        later in prop::collection::vec(prop_oneof![Just(0.0), 0.5f64..3.0], 30),
        w in window(),
    ) {
        let sc = scenario(seed, 0.4);
        let mut e = sc.e.clone();
        for i in 0..sc.sensors {
            for t in cut + 1..sc.slots {
                e[[i, t]] = later[i * sc.slots + t];
            }
        }
        let changed = Scenario { e, ..sc.clone() };
        let c = cfg(Policy::SsEh, w);
        let a = run_online(&sc, &c).unwrap().result.allocation;
        let b = run_online(&changed, &c).unwrap().result.allocation;
        for t in 0..=cut {
            prop_assert_eq!(a.z.column(t), b.z.column(t));
            prop_assert_eq!(a.p.column(t), b.p.column(t));
            prop_assert_eq!(a.s.column(t), b.s.column(t));
        }
    }

    #[test]
    fn stitched_allocation_is_feasible(seed in 0u64..10_000, w in window(), joint in any::<bool>()) {
        let sc = scenario(seed, 0.5);
        let policy = if joint { Policy::JssEh } else { Policy::SsEh };
        let r = run_online(&sc, &cfg(policy, w)).unwrap();
        prop_assert!(r.result.residuals.audit.passed, "{:?}", r.result.residuals.audit);
    }

    #[test]
    fn full_horizon_plans_use_the_last_slot(seed in 0u64..10_000) {
        let sc = scenario(seed, 0.5);
        let r = run_online(&sc, &cfg(Policy::SsEh, Window::FullHorizon)).unwrap();
        for plan in &r.plans {
            let alloc = &plan.allocation;
            let last = alloc.p.ncols() - 1;
            for i in alloc.selected(last) {
                let energized = alloc.p.row(i).iter().any(|&p| p > 0.0);
                if energized {
                    prop_assert!(alloc.p[[i, last]] > 0.0, "sensor {} idle in the final slot", i);
                }
            }
        }
    }

    #[test]
    fn unspent_matches_direct_sum(seed in 0u64..10_000, t_o in 0usize..=6) {
        let sc = scenario(seed, 0.5);
        let p = solve_sseh(&sc, &SolverOptions::default()).unwrap().allocation.p;
        let left = unspent_energy(&sc.e, &p, sc.ts, t_o).unwrap();
        for i in 0..sc.sensors {
            let (mut harvested, mut spent) = (0.0, 0.0);
            for t in 0..t_o {
                harvested += sc.e[[i, t]];
                spent += p[[i, t]];
            }
            prop_assert_eq!(left[i], (harvested - sc.ts * spent).max(0.0));
        }
    }
}

#[test]
fn online_never_beats_offline_with_full_information() {
    let opts = SolverOptions::default();
    for seed in 0..5 {
        let sc = scenario(seed, 0.8);
        let offline = solve_sseh(&sc, &opts).unwrap().total_distortion;
        let online = run_online(&sc, &cfg(Policy::SsEh, Window::FullHorizon)).unwrap();
        assert!(offline <= online.result.total_distortion + 1e-9);
    }
}
