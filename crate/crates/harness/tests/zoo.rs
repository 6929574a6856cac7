use optenet::linear::tabular_bridge;
use optenet::model::Sizes;
use optenet_harness::config::Tolerances;
use optenet_harness::zoo::{generate_family, load_family, save_family, GENERATORS};
use optenet_harness::HarnessError;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn mdp_has_identity_emissions_and_gamma_equal_to_states() {
    for s in 2..=4 {
        let family = generate_family("mdp", Sizes::new(s, 2, s, 2), 3, &Tolerances::default(), &mut rng(1)).unwrap();
        for m in family.candidates() {
            for h in 1..=2 {
                assert_eq!(m.emission_matrix(h), nalgebra::DMatrix::identity(s, s));
            }
            assert!((tabular_bridge(m).unwrap().gamma - s as f64).abs() < 1e-12);
        }
    }
    let err = generate_family("mdp", Sizes::new(2, 2, 3, 2), 2, &Tolerances::default(), &mut rng(1));
    assert!(matches!(err, Err(HarnessError::Validation(_))));
}

#[test]
fn noisy_ring_is_deterministic_given_the_seed() {
    let sizes = Sizes::new(2, 2, 3, 3);
    let a = generate_family("noisy-ring", sizes, 3, &Tolerances::default(), &mut rng(42)).unwrap();
    let b = generate_family("noisy-ring", sizes, 3, &Tolerances::default(), &mut rng(42)).unwrap();
    assert_eq!(a, b);
    let c = generate_family("noisy-ring", sizes, 3, &Tolerances::default(), &mut rng(43)).unwrap();
    assert_ne!(a, c);
    for m in a.candidates() {
        tabular_bridge(m).unwrap();
    }
}

#[test]
fn fewer_observations_than_states_is_rejected() {
    for name in GENERATORS {
        let err = generate_family(name, Sizes::new(3, 2, 2, 2), 2, &Tolerances::default(), &mut rng(0));
        assert!(matches!(err, Err(HarnessError::Undercomplete { states: 3, observations: 2 })), "{name}");
    }
}

#[test]
fn unknown_names_and_impossible_tolerances_fail() {
    let t = Tolerances::default();
    assert!(matches!(
        generate_family("maze", Sizes::new(2, 2, 2, 2), 2, &t, &mut rng(0)),
        Err(HarnessError::UnknownGenerator(_))
    ));
    let strict = Tolerances {
        min_lambda: 1e9,
        max_attempts: 1000,
    };
    assert!(matches!(
        generate_family("random", Sizes::new(2, 2, 2, 2), 2, &strict, &mut rng(0)),
        Err(HarnessError::GenerationExhausted { attempts: 1000, .. })
    ));
}

#[test]
fn decoy_candidates_promise_more_than_the_truth() {
    use optenet::bellman::evaluate_j;
    use optenet::planner::{plan_exact_with_budget, DEFAULT_PLAN_BUDGET};
    let family = generate_family("decoy", Sizes::new(2, 2, 2, 3), 4, &Tolerances::default(), &mut rng(5)).unwrap();
    let truth = family.true_model();
    let best = plan_exact_with_budget(truth, DEFAULT_PLAN_BUDGET).unwrap().value;
    for m in &family.candidates()[1..] {
        let plan = plan_exact_with_budget(m, DEFAULT_PLAN_BUDGET).unwrap();
        assert!(plan.value > best);
        assert!(evaluate_j(truth, &plan.policy) < best - 0.1);
    }
    assert!(generate_family("decoy", Sizes::new(2, 2, 3, 3), 4, &Tolerances::default(), &mut rng(5)).is_err());
}

#[test]
fn family_files_round_trip() {
    let family = generate_family("random", Sizes::new(2, 2, 3, 3), 3, &Tolerances::default(), &mut rng(8)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("family.toml");
    save_family(&family, &path).unwrap();
    assert_eq!(load_family(&path).unwrap(), family);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn generated_families_share_their_start_and_bridge(seed in any::<u64>(), which in 0usize..4, n in 1usize..5) {
        let name = GENERATORS[which];
        let sizes = match name {
            "mdp" => Sizes::new(2, 2, 2, 3),
            "decoy" => Sizes::new(2, 2, 2, 3),
            _ => Sizes::new(2, 2, 3, 3),
        };
        let t = Tolerances::default();
        let family = generate_family(name, sizes, n, &t, &mut rng(seed)).unwrap();
        prop_assert_eq!(family.len(), n);
        prop_assert_eq!(family.true_index(), 0);
        prop_assert!(family.shares_initialization());
        for m in family.candidates() {
            let b = tabular_bridge(m).unwrap();
            prop_assert!(optenet_harness::zoo::min_lambda(&b) >= t.min_lambda);
        }
    }
}
