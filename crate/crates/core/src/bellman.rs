//! Full-memory and finite-memory Bellman operators on history functions.
//!
//! A [`HistoryFunction`] at step `h ≤ H` is stored densely over every full
//! history `(o_1, a_1, ..., a_{h-1}, o_h)`, with arbitrary actions, so that
//! conditional expectations given `(τ̄_{h-1}, a_{h-1})` can be taken for every
//! action. Step `H + 1` holds completed episodes `(o_1, a_1, ..., o_H, a_H)`.
//!
//! Indices interleave observations and actions in mixed radix:
//! the history at step `h + 1` obtained by appending `(a, o)` to history `i`
//! has index `(i * A + a) * O + o`.

use crate::error::{Error, Result};
use crate::linear::Bridge;
use crate::model::{observation_index, policy_branches, FullHistory, Policy, Sizes, TabularModel, TripleSpace};

/// Dense index of the full histories of a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HistorySpace {
    sizes: Sizes,
}

impl HistorySpace {
    pub fn new(sizes: Sizes) -> Self {
        Self { sizes }
    }

    pub fn sizes(&self) -> Sizes {
        self.sizes
    }

    /// Number of full histories at `step` (`1..=H+1`).
    pub fn len(&self, step: usize) -> usize {
        let (o, a) = (self.sizes.observations, self.sizes.actions);
        if step <= self.sizes.horizon {
            o.pow(step as u32) * a.pow(step as u32 - 1)
        } else {
            o.pow(self.sizes.horizon as u32) * a.pow(self.sizes.horizon as u32)
        }
    }

    /// Number of `(τ̄_{h}, a_{h})` pairs, i.e. conditioning events for step `h + 1`.
    pub fn pairs(&self, step: usize) -> usize {
        self.len(step) * self.sizes.actions
    }

    pub fn index(&self, history: &FullHistory) -> usize {
        let (o, a) = (self.sizes.observations, self.sizes.actions);
        let obs = history.observations();
        let acts = history.actions();
        let mut idx = obs[0];
        for t in 1..obs.len() {
            idx = (idx * a + acts[t - 1]) * o + obs[t];
        }
        if acts.len() == obs.len() {
            idx = idx * a + acts[acts.len() - 1];
        }
        idx
    }

    /// Decodes an index at `step` into observations and actions.
    pub fn decode(&self, step: usize, index: usize) -> (Vec<usize>, Vec<usize>) {
        let (o, a) = (self.sizes.observations, self.sizes.actions);
        let complete = step > self.sizes.horizon;
        let n_obs = step.min(self.sizes.horizon);
        let mut rest = index;
        let mut acts = Vec::with_capacity(n_obs);
        let mut obs = Vec::with_capacity(n_obs);
        if complete {
            acts.push(rest % a);
            rest /= a;
        }
        for t in (0..n_obs).rev() {
            obs.push(rest % o);
            rest /= o;
            if t > 0 {
                acts.push(rest % a);
                rest /= a;
            }
        }
        obs.reverse();
        acts.reverse();
        (obs, acts)
    }

    pub fn history(&self, step: usize, index: usize) -> FullHistory {
        let (obs, acts) = self.decode(step, index);
        FullHistory::new(obs, acts).expect("decoded histories are well formed")
    }

    /// Index of the observation history `τ_h` contained in full history `index`.
    pub fn observation_part(&self, step: usize, index: usize) -> usize {
        let (obs, _) = self.decode(step, index);
        observation_index(&obs, self.sizes.observations)
    }
}

/// Real function over every full history of one step.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryFunction {
    step: usize,
    values: Vec<f64>,
}

impl HistoryFunction {
    pub fn new(space: &HistorySpace, step: usize, values: Vec<f64>) -> Result<Self> {
        if step == 0 || step > space.sizes().horizon + 1 {
            return Err(Error::StepOutOfRange {
                step,
                min: 1,
                max: space.sizes().horizon + 1,
            });
        }
        if values.len() != space.len(step) {
            return Err(Error::ShapeMismatch(format!(
                "history function at step {step} needs {} values, got {}",
                space.len(step),
                values.len()
            )));
        }
        Ok(Self { step, values })
    }

    pub fn constant(space: &HistorySpace, step: usize, value: f64) -> Self {
        Self {
            step,
            values: vec![value; space.len(step)],
        }
    }

    pub fn from_fn(space: &HistorySpace, step: usize, mut f: impl FnMut(&[usize], &[usize]) -> f64) -> Self {
        let values = (0..space.len(step))
            .map(|i| {
                let (obs, acts) = space.decode(step, i);
                f(&obs, &acts)
            })
            .collect();
        Self { step, values }
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, index: usize) -> f64 {
        self.values[index]
    }

    pub fn get(&self, space: &HistorySpace, history: &FullHistory) -> Result<f64> {
        history.validate(&space.sizes())?;
        if history.step() != self.step {
            return Err(Error::StepOutOfRange {
                step: history.step(),
                min: self.step,
                max: self.step,
            });
        }
        Ok(self.values[space.index(history)])
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Forward beliefs `p(τ̄_h, s_h)` for every full history at steps `1..=H`.
#[derive(Clone, Debug)]
pub struct BeliefTable {
    space: HistorySpace,
    // beliefs[h-1][index * S + s]
    beliefs: Vec<Vec<f64>>,
    masses: Vec<Vec<f64>>,
}

impl BeliefTable {
    pub fn new(model: &TabularModel) -> Self {
        Self::up_to(model, model.horizon())
    }

    /// Beliefs for steps `1..=last` only.
    pub fn up_to(model: &TabularModel, last: usize) -> Self {
        let sizes = model.sizes();
        let space = HistorySpace::new(sizes);
        let (s, a, o) = (sizes.states, sizes.actions, sizes.observations);
        let mut beliefs: Vec<Vec<f64>> = Vec::with_capacity(last);
        let mut first = Vec::with_capacity(o * s);
        for obs in 0..o {
            first.extend(model.condition(1, model.initial(), obs));
        }
        beliefs.push(first);
        for step in 2..=last {
            let prev = &beliefs[step - 2];
            let mut next = vec![0.0; space.len(step) * s];
            for (i, b) in prev.chunks(s).enumerate() {
                for action in 0..a {
                    let predicted = model.predict(step - 1, b, action);
                    for obs in 0..o {
                        let child = (i * a + action) * o + obs;
                        for state in 0..s {
                            next[child * s + state] = predicted[state] * model.emission(step, obs, state);
                        }
                    }
                }
            }
            beliefs.push(next);
        }
        let masses = beliefs
            .iter()
            .map(|layer| layer.chunks(s).map(|b| b.iter().sum()).collect())
            .collect();
        Self {
            space,
            beliefs,
            masses,
        }
    }

    pub fn space(&self) -> &HistorySpace {
        &self.space
    }

    pub fn belief(&self, step: usize, index: usize) -> &[f64] {
        let s = self.space.sizes().states;
        &self.beliefs[step - 1][index * s..(index + 1) * s]
    }

    /// `p(τ̄_h)` (with actions taken as interventions).
    pub fn mass(&self, step: usize, index: usize) -> f64 {
        self.masses[step - 1][index]
    }

    /// Probability of the conditioning event `(τ̄_{h-1}, a_{h-1})` for step `h`.
    /// At step 1 the event is trivial.
    pub fn event_mass(&self, step: usize, event: usize) -> f64 {
        if step == 1 {
            1.0
        } else {
            self.mass(step - 1, event / self.space.sizes().actions)
        }
    }
}

/// Total reward `Σ_h r(o_h, a_h)` of a completed episode.
pub fn total_reward(model: &TabularModel, history: &FullHistory) -> Result<f64> {
    history.validate(&model.sizes())?;
    let h = model.horizon();
    if history.observations().len() != h || history.actions().len() != h {
        return Err(Error::IncompleteHistory {
            len: history.actions().len(),
            expected: h,
        });
    }
    Ok(history
        .observations()
        .iter()
        .zip(history.actions())
        .map(|(&o, &a)| model.reward(o, a))
        .sum())
}

/// The reward functional `R` as a history function at step `H + 1`.
pub fn reward_function(model: &TabularModel) -> HistoryFunction {
    let space = HistorySpace::new(model.sizes());
    HistoryFunction::from_fn(&space, model.horizon() + 1, |obs, acts| {
        obs.iter().zip(acts).map(|(&o, &a)| model.reward(o, a)).sum()
    })
}

fn check_input(model: &TabularModel, step: usize, f: &HistoryFunction) -> Result<()> {
    model.check_step(step, 1, model.horizon())?;
    let space = HistorySpace::new(model.sizes());
    if f.step != step + 1 || f.values.len() != space.len(step + 1) {
        return Err(Error::ShapeMismatch(format!(
            "operator at step {step} needs a function at step {}, got step {}",
            step + 1,
            f.step
        )));
    }
    Ok(())
}

/// Full-memory operator:
/// `(ℙf)(τ̄_h) = Σ_{o'} f(τ̄_h, π(τ_h), o') p(o' | τ̄_h, π(τ_h))`, zero on
/// zero-mass histories. At `h = H` the next observation is the end marker.
pub fn apply_p(model: &TabularModel, policy: &Policy, step: usize, f: &HistoryFunction) -> Result<HistoryFunction> {
    check_input(model, step, f)?;
    let beliefs = BeliefTable::up_to(model, step);
    Ok(apply_p_with(model, &beliefs, policy, step, f))
}

pub(crate) fn apply_p_with(
    model: &TabularModel,
    beliefs: &BeliefTable,
    policy: &Policy,
    step: usize,
    f: &HistoryFunction,
) -> HistoryFunction {
    let space = beliefs.space();
    let (a, o) = (model.actions(), model.observations());
    let values = (0..space.len(step))
        .map(|i| {
            let mass = beliefs.mass(step, i);
            if mass <= 0.0 {
                return 0.0;
            }
            let action = policy.action_by_index(step, space.observation_part(step, i));
            if step == model.horizon() {
                return f.values[i * a + action];
            }
            let predicted = model.predict(step, beliefs.belief(step, i), action);
            let next = model.observe(step + 1, &predicted);
            (0..o).map(|obs| f.values[(i * a + action) * o + obs] * next[obs] / mass).sum()
        })
        .collect();
    HistoryFunction { step, values }
}

/// `ℬ_{h,a}(o, õ, õ')` stored over the triple space, `õ'` ranging over
/// observations and the end marker.
#[derive(Clone, Debug, PartialEq)]
pub struct BTensor {
    space: TripleSpace,
    values: Vec<f64>,
}

impl BTensor {
    pub fn get(&self, o: usize, next: usize, after: usize) -> f64 {
        self.values[self.space.index([o, next, after])]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn space(&self) -> TripleSpace {
        self.space
    }

    /// `max_o Σ_{õ, õ'} |ℬ(o, õ, õ')|`.
    pub fn row_abs_max(&self) -> f64 {
        let width = self.space.observations() * self.space.last_slot();
        self.values
            .chunks(width)
            .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// `ℬ_{h,a}(o, õ, õ') = Σ_s Z_h(s, o) E_h(õ | s) P(õ' | s, a)` where `P` is the
/// next-observation law, or the point mass on the end marker at `h = H`.
pub fn build_b_tensor(model: &TabularModel, bridge: &Bridge, step: usize, action: usize) -> Result<BTensor> {
    model.check_step(step, 1, model.horizon())?;
    if action >= model.actions() {
        return Err(Error::IndexOutOfRange {
            what: "action",
            index: action,
            bound: model.actions(),
        });
    }
    let (s, o) = (model.states(), model.observations());
    let space = TripleSpace::new(o);
    let z = bridge.z(step);
    // joint[state][õ * (O+1) + õ']
    let width = o * space.last_slot();
    let mut joint = vec![0.0; s * width];
    for state in 0..s {
        let ahead: Vec<f64> = if step < model.horizon() {
            let mut point = vec![0.0; s];
            point[state] = 1.0;
            let mut law = model.observe(step + 1, &model.predict(step, &point, action));
            law.push(0.0);
            law
        } else {
            let mut law = vec![0.0; o + 1];
            law[o] = 1.0;
            law
        };
        for cur in 0..o {
            let e = model.emission(step, cur, state);
            for (after, p) in ahead.iter().enumerate() {
                joint[state * width + cur * space.last_slot() + after] = e * p;
            }
        }
    }
    let mut values = vec![0.0; space.len()];
    for obs in 0..o {
        for state in 0..s {
            let weight = z[(state, obs)];
            if weight == 0.0 {
                continue;
            }
            for k in 0..width {
                values[obs * width + k] += weight * joint[state * width + k];
            }
        }
    }
    Ok(BTensor { space, values })
}

/// All tensors `ℬ_{h,a}` of a model, `h = 1..=H`, `a < A`.
#[derive(Clone, Debug, PartialEq)]
pub struct BTensorSet {
    actions: usize,
    tensors: Vec<BTensor>,
    gamma: f64,
}

impl BTensorSet {
    pub fn build(model: &TabularModel, bridge: &Bridge) -> Result<Self> {
        let mut tensors = Vec::with_capacity(model.horizon() * model.actions());
        for step in 1..=model.horizon() {
            for action in 0..model.actions() {
                tensors.push(build_b_tensor(model, bridge, step, action)?);
            }
        }
        Ok(Self {
            actions: model.actions(),
            tensors,
            gamma: bridge.gamma,
        })
    }

    pub fn get(&self, step: usize, action: usize) -> &BTensor {
        &self.tensors[(step - 1) * self.actions + action]
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn horizon(&self) -> usize {
        self.tensors.len() / self.actions
    }
}

/// Finite-memory operator:
/// `(𝔹f)(τ̄_h) = Σ_{õ, õ'} f(τ̄_h†, π(τ_h†), õ') ℬ_{h, π(τ_h†)}(o_h, õ, õ')`
/// where `τ̄_h†` replaces the last observation of `τ̄_h` by `õ`.
pub fn apply_b(
    model: &TabularModel,
    policy: &Policy,
    tensors: &BTensorSet,
    step: usize,
    f: &HistoryFunction,
) -> Result<HistoryFunction> {
    check_input(model, step, f)?;
    Ok(apply_b_unchecked(model, policy, tensors, step, f))
}

fn apply_b_unchecked(
    model: &TabularModel,
    policy: &Policy,
    tensors: &BTensorSet,
    step: usize,
    f: &HistoryFunction,
) -> HistoryFunction {
    let space = HistorySpace::new(model.sizes());
    let (a, o) = (model.actions(), model.observations());
    let last = o + 1;
    let terminal = step == model.horizon();
    let events = space.len(step) / o;
    let mut values = vec![0.0; space.len(step)];
    for event in 0..events {
        // (swapped observation, action taken there, contributions by õ')
        for swapped in 0..o {
            let mirrored = event * o + swapped;
            let action = policy.action_by_index(step, space.observation_part(step, mirrored));
            let tensor = tensors.get(step, action);
            for cur in 0..o {
                let row = &tensor.values[(cur * o + swapped) * last..(cur * o + swapped + 1) * last];
                let contribution = if terminal {
                    f.values[mirrored * a + action] * row[o]
                } else {
                    (0..o)
                        .map(|after| f.values[(mirrored * a + action) * o + after] * row[after])
                        .sum()
                };
                values[event * o + cur] += contribution;
            }
        }
    }
    HistoryFunction { step, values }
}

/// Value recursion `V_{H+1} = R`, `V_h = 𝔹_h V_{h+1}`; element `h - 1` holds `V_h`.
pub fn compute_values(model: &TabularModel, policy: &Policy, tensors: &BTensorSet) -> Vec<HistoryFunction> {
    let h = model.horizon();
    let mut values = vec![reward_function(model)];
    for step in (1..=h).rev() {
        let next = apply_b_unchecked(model, policy, tensors, step, values.last().expect("nonempty"));
        values.push(next);
    }
    values.reverse();
    values
}

/// Exact `J(θ, π)` by enumerating the history tree generated by the policy.
pub fn evaluate_j(model: &TabularModel, policy: &Policy) -> f64 {
    (1..=model.horizon())
        .map(|step| {
            policy_branches(model, policy, step)
                .iter()
                .map(|branch| {
                    let obs = *branch.observations.last().expect("nonempty");
                    branch.mass() * model.reward(obs, policy.action(&branch.observations))
                })
                .sum::<f64>()
        })
        .sum()
}

/// `E[g(τ̄_h) | τ̄_{h-1}, a_{h-1}]` for every conditioning event, `None` on zero
/// mass, for `1 <= h <= H`. At `h = 1` there is a single event and the
/// expectation is unconditional.
pub fn conditional_expectation(beliefs: &BeliefTable, step: usize, g: &HistoryFunction) -> Vec<Option<f64>> {
    let space = beliefs.space();
    let o = space.sizes().observations;
    if step == 1 {
        let total: f64 = (0..o).map(|obs| beliefs.mass(1, obs) * g.values[obs]).sum();
        return vec![Some(total)];
    }
    let events = space.len(step) / o;
    (0..events)
        .map(|event| {
            let mass = beliefs.event_mass(step, event);
            if mass <= 0.0 {
                return None;
            }
            let num: f64 = (0..o)
                .map(|obs| beliefs.mass(step, event * o + obs) * g.values[event * o + obs])
                .sum();
            Some(num / mass)
        })
        .collect()
}

/// `E[V_1(o_1)]` under the first-observation law of `model`.
pub fn expected_initial_value(model: &TabularModel, v1: &HistoryFunction) -> f64 {
    let law = model.observe(1, model.initial());
    law.iter().zip(&v1.values).map(|(p, v)| p * v).sum()
}
