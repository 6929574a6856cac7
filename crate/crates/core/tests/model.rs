mod common;

use common::*;
use optenet::model::{
    forward_belief, interventional_law, mix, observation_index, sample_episode, sample_intervention_triple,
    state_marginal, FullHistory, Policy, Sizes, TabularModel, TripleSpace,
};
use proptest::prelude::*;
use rand::Rng;

fn all_sequences(len: usize, radix: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..radix).map(move |x| {
                    let mut q = p.clone();
                    q.push(x);
                    q
                })
            })
            .collect();
    }
    out
}

fn three_sigma(counts: &[usize], law: &[f64], n: usize, what: &str) {
    for (i, (&c, &p)) in counts.iter().zip(law).enumerate() {
        let freq = c as f64 / n as f64;
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        assert!((freq - p).abs() <= 3.0 * sd + 1e-12, "{what}[{i}]: {freq} vs {p}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn belief_masses_sum_to_one(seed in any::<u64>(), which in 0usize..5) {
        let sizes = sizes(which);
        let mut r = rng(seed);
        let model = TabularModel::random(sizes, &mut r).unwrap();
        for step in 1..=sizes.horizon {
            let actions: Vec<usize> = (0..step - 1).map(|_| r.random_range(0..sizes.actions)).collect();
            let total: f64 = all_sequences(step, sizes.observations)
                .into_iter()
                .map(|obs| {
                    let h = FullHistory::new(obs, actions.clone()).unwrap();
                    forward_belief(&model, &h).unwrap().iter().sum::<f64>()
                })
                .sum();
            prop_assert!((total - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn toml_round_trip(seed in any::<u64>(), which in 0usize..5) {
        let model = TabularModel::random(sizes(which), &mut rng(seed)).unwrap();
        let text = toml::to_string(&model).unwrap();
        let back: TabularModel = toml::from_str(&text).unwrap();
        prop_assert_eq!(back, model);
    }
}

#[test]
fn episode_marginals_match_enumeration() {
    let sizes = Sizes::new(3, 2, 3, 3);
    let mut r = rng(11);
    let model = TabularModel::random(sizes, &mut r).unwrap();
    let policy = random_policy(sizes, &mut r);
    let n = 100_000;
    let mut states = vec![vec![0usize; sizes.states]; sizes.horizon];
    let mut histories = vec![0usize; sizes.observation_histories(sizes.horizon)];
    let mut reward = 0.0;
    for _ in 0..n {
        let t = sample_episode(&model, &policy, &mut r);
        for (h, &s) in t.states.iter().enumerate() {
            states[h][s] += 1;
        }
        histories[observation_index(&t.observations, sizes.observations)] += 1;
        reward += t.total_reward();
    }
    for step in 1..=sizes.horizon {
        three_sigma(&states[step - 1], &state_marginal(&model, &policy, step), n, "state");
    }
    let law: Vec<f64> = all_sequences(sizes.horizon, sizes.observations)
        .into_iter()
        .map(|obs| {
            let actions: Vec<usize> = (1..obs.len()).map(|t| policy.action(&obs[..t])).collect();
            forward_belief(&model, &FullHistory::new(obs, actions).unwrap()).unwrap().iter().sum()
        })
        .collect();
    three_sigma(&histories, &law, n, "history");
    let j = optenet::bellman::evaluate_j(&model, &policy);
    let bound = sizes.horizon as f64;
    assert!((reward / n as f64 - j).abs() <= 3.0 * bound / (n as f64).sqrt());
}

#[test]
fn intervention_triples_match_exact_law() {
    let sizes = Sizes::new(2, 2, 3, 3);
    let mut r = rng(12);
    let model = TabularModel::random(sizes, &mut r).unwrap();
    let behavior = mix(vec![random_policy(sizes, &mut r), random_policy(sizes, &mut r)]).unwrap();
    let space = TripleSpace::new(sizes.observations);
    let n = 100_000;
    for (step, first, second) in [(2, 0, 1), (3, 1, 1), (2, 1, 0)] {
        let exact = interventional_law(&model, &behavior, step, first, second).unwrap();
        assert!((exact.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut counts = vec![0usize; space.len()];
        for _ in 0..n {
            let t = sample_intervention_triple(&model, &behavior, step, first, second, &mut r).unwrap();
            counts[space.index(t)] += 1;
        }
        three_sigma(&counts, &exact, n, "triple");
    }
}

#[test]
fn interventional_law_is_a_sum_of_forward_beliefs() {
    let sizes = Sizes::new(2, 2, 2, 3);
    let mut r = rng(13);
    let model = TabularModel::random(sizes, &mut r).unwrap();
    let policy = random_policy(sizes, &mut r);
    let space = TripleSpace::new(2);
    let (first, second) = (1, 0);
    for step in 2..=sizes.horizon {
        let terminal = step == sizes.horizon;
        let mut oracle = vec![0.0; space.len()];
        let len = if terminal { step } else { step + 1 };
        for obs in all_sequences(len, 2) {
            let mut actions: Vec<usize> = (1..step - 1).map(|t| policy.action(&obs[..t])).collect();
            actions.push(first);
            if !terminal {
                actions.push(second);
            }
            let mass: f64 = forward_belief(&model, &FullHistory::new(obs.clone(), actions).unwrap())
                .unwrap()
                .iter()
                .sum();
            let last = if terminal { TripleSpace::END } else { obs[step] };
            oracle[space.index([obs[step - 2], obs[step - 1], last])] += mass;
        }
        let exact = interventional_law(&model, &policy, step, first, second).unwrap();
        for (x, y) in exact.iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn constant_policy_ids_differ() {
    let sizes = Sizes::new(2, 2, 2, 2);
    let a = Policy::constant(sizes, 0).unwrap();
    let b = Policy::constant(sizes, 1).unwrap();
    assert_ne!(a.id(), b.id());
}
