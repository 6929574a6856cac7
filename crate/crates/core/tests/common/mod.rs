#![allow(dead_code)]

use optenet::linear::tabular_bridge;
use optenet::model::{Policy, Sizes, TabularModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random model whose tabular bridge exists.
pub fn bridged_model(sizes: Sizes, rng: &mut ChaCha8Rng) -> TabularModel {
    loop {
        let m = TabularModel::random(sizes, rng).unwrap();
        if tabular_bridge(&m).is_ok() {
            return m;
        }
    }
}

/// Random model sharing the initial law, the first transition, the first two
/// emissions and the rewards with `anchor`.
pub fn sibling(anchor: &TabularModel, rng: &mut ChaCha8Rng) -> TabularModel {
    loop {
        let other = bridged_model(anchor.sizes(), rng);
        let mut transitions = other.raw_transitions().to_vec();
        transitions[0] = anchor.raw_transitions()[0].clone();
        let mut emissions = other.raw_emissions().to_vec();
        emissions[0] = anchor.raw_emissions()[0].clone();
        if emissions.len() > 1 {
            emissions[1] = anchor.raw_emissions()[1].clone();
        }
        let m = TabularModel::from_raw(
            anchor.sizes(),
            anchor.initial().to_vec(),
            transitions,
            emissions,
            anchor.raw_rewards().to_vec(),
        )
        .unwrap();
        if tabular_bridge(&m).is_ok() {
            return m;
        }
    }
}

pub fn random_policy(sizes: Sizes, rng: &mut ChaCha8Rng) -> Policy {
    Policy::from_fn(sizes, |_| rng.random_range(0..sizes.actions)).unwrap()
}

pub fn signs(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

pub fn uniform(n: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn distribution(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    optenet::simplex::uniform(n, rng)
}

/// Desk-scale sizes exercised by the property tests.
pub const SIZES: [(usize, usize, usize, usize); 5] = [(2, 2, 2, 2), (2, 2, 3, 3), (3, 2, 3, 2), (2, 1, 2, 3), (3, 2, 4, 2)];

pub fn sizes(i: usize) -> Sizes {
    let (s, a, o, h) = SIZES[i % SIZES.len()];
    Sizes::new(s, a, o, h)
}
