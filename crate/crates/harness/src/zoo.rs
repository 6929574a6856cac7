//! Named family generators and family files.
//!
//! Every generator puts the true model at index 0 and makes the other
//! candidates share its initial law, first transition, first two emissions
//! and rewards, so that interventional data can tell them apart.

use std::path::Path;

use optenet::linear::{tabular_bridge, Bridge};
use optenet::model::{ParameterFamily, Sizes, TabularModel};
use optenet::simplex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{FamilyConfig, Tolerances};
use crate::error::{io_error, HarnessError, Result};

pub const GENERATORS: [&str; 4] = ["mdp", "noisy-ring", "random", "decoy"];

/// On-disk family: a list of models and the index of the true one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyFile {
    pub true_index: usize,
    pub candidates: Vec<TabularModel>,
}

pub fn load_family(path: &Path) -> Result<ParameterFamily> {
    let text = std::fs::read_to_string(path).map_err(io_error(path))?;
    let file: FamilyFile = toml::from_str(&text).map_err(|e| HarnessError::Parse {
        path: path.to_path_buf(),
        message: e.to_string().trim_end().to_string(),
    })?;
    Ok(ParameterFamily::new(file.candidates, file.true_index)?)
}

pub fn save_family(family: &ParameterFamily, path: &Path) -> Result<()> {
    let file = FamilyFile {
        true_index: family.true_index(),
        candidates: family.candidates().to_vec(),
    };
    let text = toml::to_string(&file).expect("family serializes");
    std::fs::write(path, text).map_err(io_error(path))
}

pub fn load_model(path: &Path) -> Result<TabularModel> {
    let text = std::fs::read_to_string(path).map_err(io_error(path))?;
    toml::from_str(&text).map_err(|e| HarnessError::Parse {
        path: path.to_path_buf(),
        message: e.to_string().trim_end().to_string(),
    })
}

/// The family described by a config section.
pub fn build_family(config: &FamilyConfig, tolerances: &Tolerances) -> Result<ParameterFamily> {
    match (&config.generator, &config.file) {
        (Some(name), _) => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            generate_family(name, config.sizes(), config.candidates, tolerances, &mut rng)
        }
        (None, Some(path)) => load_family(path),
        (None, None) => Err(HarnessError::Validation("family needs a generator or a file".into())),
    }
}

/// Smallest eigenvalue of the auxiliary Gram matrix over all steps.
pub fn min_lambda(bridge: &Bridge) -> f64 {
    bridge.steps.iter().map(|s| s.min_eigenvalue).fold(f64::INFINITY, f64::min)
}

fn accepted(model: &TabularModel, tolerances: &Tolerances) -> bool {
    tabular_bridge(model).is_ok_and(|b| min_lambda(&b) >= tolerances.min_lambda)
}

pub fn generate_family(
    name: &str,
    sizes: Sizes,
    candidates: usize,
    tolerances: &Tolerances,
    rng: &mut ChaCha8Rng,
) -> Result<ParameterFamily> {
    if !GENERATORS.contains(&name) {
        return Err(HarnessError::UnknownGenerator(name.to_string()));
    }
    if sizes.observations < sizes.states {
        return Err(HarnessError::Undercomplete {
            states: sizes.states,
            observations: sizes.observations,
        });
    }
    if candidates == 0 {
        return Err(HarnessError::Validation("family needs at least one candidate".into()));
    }
    let mut gen = Generator {
        name,
        sizes,
        tolerances,
        attempts: 0,
    };
    let models = match name {
        "mdp" => gen.mdp(candidates, rng)?,
        "noisy-ring" => gen.ring(candidates, rng)?,
        "random" => gen.random(candidates, rng)?,
        _ => gen.decoy(candidates, rng)?,
    };
    Ok(ParameterFamily::new(models, 0)?)
}

struct Generator<'a> {
    name: &'a str,
    sizes: Sizes,
    tolerances: &'a Tolerances,
    attempts: usize,
}

impl Generator<'_> {
    fn attempt(&mut self) -> Result<()> {
        self.attempts += 1;
        if self.attempts > self.tolerances.max_attempts {
            return Err(HarnessError::GenerationExhausted {
                name: self.name.to_string(),
                attempts: self.tolerances.max_attempts,
            });
        }
        Ok(())
    }

    /// Draws candidates until each one passes the bridge check.
    fn draw(
        &mut self,
        rng: &mut ChaCha8Rng,
        mut next: impl FnMut(&mut ChaCha8Rng) -> Result<TabularModel>,
    ) -> Result<TabularModel> {
        loop {
            self.attempt()?;
            let m = next(rng)?;
            if accepted(&m, self.tolerances) {
                return Ok(m);
            }
        }
    }

    fn siblings(
        &mut self,
        candidates: usize,
        rng: &mut ChaCha8Rng,
        mut fresh: impl FnMut(&mut ChaCha8Rng) -> Result<TabularModel>,
    ) -> Result<Vec<TabularModel>> {
        let truth = self.draw(rng, &mut fresh)?;
        let mut out = vec![truth.clone()];
        while out.len() < candidates {
            let other = self.draw(rng, |r| fresh(r).and_then(|m| Ok(share_start(&truth, &m)?)))?;
            out.push(other);
        }
        Ok(out)
    }

    fn mdp(&mut self, candidates: usize, rng: &mut ChaCha8Rng) -> Result<Vec<TabularModel>> {
        let s = self.sizes.states;
        if self.sizes.observations != s {
            return Err(HarnessError::Validation(format!(
                "the mdp generator needs as many observations as states, got {} and {s}",
                self.sizes.observations
            )));
        }
        let identity: Vec<f64> = (0..s * s).map(|i| if i / s == i % s { 1.0 } else { 0.0 }).collect();
        let sizes = self.sizes;
        self.siblings(candidates, rng, |r| {
            let m = TabularModel::random(sizes, r)?;
            Ok(TabularModel::from_raw(
                sizes,
                m.initial().to_vec(),
                m.raw_transitions().to_vec(),
                vec![identity.clone(); sizes.horizon],
                m.raw_rewards().to_vec(),
            )?)
        })
    }

    /// States on a cycle; action 0 tends to stay, action 1 tends to advance.
    /// Each state emits its own label with probability `1 - noise`.
    fn ring(&mut self, candidates: usize, rng: &mut ChaCha8Rng) -> Result<Vec<TabularModel>> {
        let sizes = self.sizes;
        let (s, a, o, h) = (sizes.states, sizes.actions, sizes.observations, sizes.horizon);
        self.siblings(candidates, rng, |r| {
            let transitions = (1..h)
                .map(|_| {
                    let slip: f64 = r.random_range(0.05..0.3);
                    let mut t = vec![0.0; a * s * s];
                    for act in 0..a {
                        for state in 0..s {
                            let col = &mut t[(act * s + state) * s..(act * s + state + 1) * s];
                            let (main, other) = if act % 2 == 0 {
                                (state, (state + 1) % s)
                            } else {
                                ((state + 1) % s, state)
                            };
                            col[main] += 1.0 - slip;
                            col[other] += slip;
                        }
                    }
                    t
                })
                .collect();
            let emissions = (0..h)
                .map(|_| {
                    let noise: f64 = r.random_range(0.05..0.3);
                    let mut e = vec![0.0; s * o];
                    for state in 0..s {
                        for obs in 0..o {
                            e[state * o + obs] = if obs == state {
                                1.0 - noise
                            } else {
                                noise / (o - 1).max(1) as f64
                            };
                        }
                        if o == 1 {
                            e[state * o] = 1.0;
                        }
                    }
                    e
                })
                .collect();
            let rewards = (0..o * a).map(|_| r.random::<f64>()).collect();
            Ok(TabularModel::from_raw(
                sizes,
                simplex::uniform(s, r),
                transitions,
                emissions,
                rewards,
            )?)
        })
    }

    fn random(&mut self, candidates: usize, rng: &mut ChaCha8Rng) -> Result<Vec<TabularModel>> {
        let sizes = self.sizes;
        self.siblings(candidates, rng, |r| Ok(TabularModel::random(sizes, r)?))
    }

    /// Two states, two actions, three steps. Observation 0 pays and mostly
    /// comes from state 0. In the true model the second action at step 2
    /// mostly leads to state 1; every other candidate claims it leads to
    /// state 0 with a higher probability than the first action does, so each
    /// of them promises more than the truth while its plan loses under it.
    fn decoy(&mut self, candidates: usize, rng: &mut ChaCha8Rng) -> Result<Vec<TabularModel>> {
        let sizes = self.sizes;
        if sizes != Sizes::new(2, 2, 2, 3) {
            return Err(HarnessError::Validation(
                "the decoy generator is defined for 2 states, 2 actions, 2 observations and horizon 3".into(),
            ));
        }
        self.attempt()?;
        let emission = vec![0.85, 0.15, 0.15, 0.85];
        let first = vec![0.5, 0.5, 0.5, 0.5, 0.6, 0.4, 0.4, 0.6];
        let second = |to_zero: f64| vec![0.75, 0.25, 0.75, 0.25, to_zero, 1.0 - to_zero, to_zero, 1.0 - to_zero];
        let rewards = vec![0.9, 0.9, 0.1, 0.1];
        let build = |to_zero: f64| {
            TabularModel::from_raw(
                sizes,
                vec![0.5, 0.5],
                vec![first.clone(), second(to_zero)],
                vec![emission.clone(); 3],
                rewards.clone(),
            )
        };
        let mut out = vec![build(0.25)?];
        while out.len() < candidates {
            out.push(build(rng.random_range(0.8..0.95))?);
        }
        Ok(out)
    }
}

/// `other` with the initial law, first transition, first two emissions and
/// rewards of `anchor`.
pub fn share_start(anchor: &TabularModel, other: &TabularModel) -> optenet::Result<TabularModel> {
    let mut transitions = other.raw_transitions().to_vec();
    if !transitions.is_empty() {
        transitions[0] = anchor.raw_transitions()[0].clone();
    }
    let mut emissions = other.raw_emissions().to_vec();
    for (i, e) in emissions.iter_mut().enumerate().take(2) {
        *e = anchor.raw_emissions()[i].clone();
    }
    TabularModel::from_raw(
        anchor.sizes(),
        anchor.initial().to_vec(),
        transitions,
        emissions,
        anchor.raw_rewards().to_vec(),
    )
}
