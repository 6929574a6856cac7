//! Finite POMDPs, histories, policies, exact forward filtering and simulation.
//!
//! Steps are numbered from 1 to `H` as in the episode. A transition tensor
//! exists for steps `1..H` (it moves `s_h` to `s_{h+1}`), an emission matrix
//! for steps `1..=H`. Observation `o_{H+1}` does not exist physically; where
//! the operators need it, the episode is extended with a single end-of-episode
//! marker emitted with probability one (see [`TripleSpace::END`]).

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::simplex;

/// Tolerance used to validate probability vectors.
pub const PROB_TOL: f64 = 1e-12;

/// Sizes of the finite spaces and the horizon.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sizes {
    pub states: usize,
    pub actions: usize,
    pub observations: usize,
    pub horizon: usize,
}

impl Sizes {
    pub fn new(states: usize, actions: usize, observations: usize, horizon: usize) -> Self {
        Self {
            states,
            actions,
            observations,
            horizon,
        }
    }

    /// Number of observation histories of length `step`.
    pub fn observation_histories(&self, step: usize) -> usize {
        self.observations.pow(step as u32)
    }
}

/// Human-readable layout of a [`TabularModel`], used by model files.
///
/// `transitions[h][a][s]` is the distribution of `s_{h+2}` given `s_{h+1} = s`
/// and action `a` (zero-based `h`, so the first entry belongs to step 1);
/// `emissions[h][s]` is the distribution of the observation at step `h + 1`;
/// `rewards[o][a]` is `r(o, a)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub horizon: usize,
    pub states: usize,
    pub actions: usize,
    pub observations: usize,
    pub initial: Vec<f64>,
    pub transitions: Vec<Vec<Vec<Vec<f64>>>>,
    pub emissions: Vec<Vec<Vec<f64>>>,
    pub rewards: Vec<Vec<f64>>,
}

/// A finite POMDP: the role of one parameter value in a candidate class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSpec", into = "ModelSpec")]
pub struct TabularModel {
    sizes: Sizes,
    initial: Vec<f64>,
    // per step, index (a * S + s) * S + s'
    transitions: Vec<Vec<f64>>,
    // per step, index s * O + o
    emissions: Vec<Vec<f64>>,
    // index o * A + a
    rewards: Vec<f64>,
}

fn check_distribution(what: &str, p: &[f64]) -> Result<()> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(invalid(format!("{what} has a negative or non-finite entry")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(invalid(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

impl TabularModel {
    /// Builds a model from flat arrays, validating every invariant.
    ///
    /// Layouts: `transitions[h-1][(a * S + s) * S + s']`,
    /// `emissions[h-1][s * O + o]`, `rewards[o * A + a]`.
    pub fn from_raw(
        sizes: Sizes,
        initial: Vec<f64>,
        transitions: Vec<Vec<f64>>,
        emissions: Vec<Vec<f64>>,
        rewards: Vec<f64>,
    ) -> Result<Self> {
        let Sizes {
            states: s,
            actions: a,
            observations: o,
            horizon: h,
        } = sizes;
        if s == 0 || a == 0 || o == 0 || h == 0 {
            return Err(invalid("all sizes and the horizon must be positive"));
        }
        if initial.len() != s {
            return Err(invalid(format!("initial distribution has length {}, expected {s}", initial.len())));
        }
        check_distribution("initial distribution", &initial)?;
        if transitions.len() != h - 1 {
            return Err(invalid(format!(
                "expected {} transition tensors, found {}",
                h - 1,
                transitions.len()
            )));
        }
        for (step, t) in transitions.iter().enumerate() {
            if t.len() != a * s * s {
                return Err(invalid(format!("transition tensor for step {} has wrong size", step + 1)));
            }
            for (col, chunk) in t.chunks(s).enumerate() {
                check_distribution(
                    &format!("transition column (step {}, state {}, action {})", step + 1, col % s, col / s),
                    chunk,
                )?;
            }
        }
        if emissions.len() != h {
            return Err(invalid(format!("expected {h} emission matrices, found {}", emissions.len())));
        }
        for (step, e) in emissions.iter().enumerate() {
            if e.len() != s * o {
                return Err(invalid(format!("emission matrix for step {} has wrong size", step + 1)));
            }
            for (state, chunk) in e.chunks(o).enumerate() {
                check_distribution(&format!("emission column (step {}, state {state})", step + 1), chunk)?;
            }
        }
        if rewards.len() != o * a {
            return Err(invalid("reward table has wrong size"));
        }
        if rewards.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(invalid("rewards must lie in [0, 1]"));
        }
        Ok(Self {
            sizes,
            initial,
            transitions,
            emissions,
            rewards,
        })
    }

    pub fn from_spec(spec: ModelSpec) -> Result<Self> {
        Self::try_from(spec)
    }

    pub fn to_spec(&self) -> ModelSpec {
        ModelSpec::from(self.clone())
    }

    /// A model with every distribution drawn uniformly from its simplex and
    /// rewards uniform on `[0, 1]`.
    pub fn random<R: Rng + ?Sized>(sizes: Sizes, rng: &mut R) -> Result<Self> {
        let Sizes {
            states: s,
            actions: a,
            observations: o,
            horizon: h,
        } = sizes;
        let initial = simplex::uniform(s, rng);
        let transitions = (1..h)
            .map(|_| (0..a * s).flat_map(|_| simplex::uniform(s, rng)).collect())
            .collect();
        let emissions = (0..h)
            .map(|_| (0..s).flat_map(|_| simplex::uniform(o, rng)).collect())
            .collect();
        let rewards = (0..o * a).map(|_| rng.random::<f64>()).collect();
        Self::from_raw(sizes, initial, transitions, emissions, rewards)
    }

    pub fn sizes(&self) -> Sizes {
        self.sizes
    }
    pub fn horizon(&self) -> usize {
        self.sizes.horizon
    }
    pub fn states(&self) -> usize {
        self.sizes.states
    }
    pub fn actions(&self) -> usize {
        self.sizes.actions
    }
    pub fn observations(&self) -> usize {
        self.sizes.observations
    }
    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// `T_h(next | state, action)` for `1 <= step < H`.
    pub fn transition(&self, step: usize, next: usize, state: usize, action: usize) -> f64 {
        let s = self.sizes.states;
        self.transitions[step - 1][(action * s + state) * s + next]
    }

    /// Distribution of the next state given `(state, action)` at `step`.
    pub fn transition_column(&self, step: usize, state: usize, action: usize) -> &[f64] {
        let s = self.sizes.states;
        let start = (action * s + state) * s;
        &self.transitions[step - 1][start..start + s]
    }

    /// `E_h(obs | state)` for `1 <= step <= H`.
    pub fn emission(&self, step: usize, obs: usize, state: usize) -> f64 {
        self.emissions[step - 1][state * self.sizes.observations + obs]
    }

    pub fn emission_column(&self, step: usize, state: usize) -> &[f64] {
        let o = self.sizes.observations;
        &self.emissions[step - 1][state * o..(state + 1) * o]
    }

    /// Emission matrix of `step` as an `O x S` matrix.
    pub fn emission_matrix(&self, step: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.sizes.observations, self.sizes.states, |o, s| self.emission(step, o, s))
    }

    pub fn reward(&self, obs: usize, action: usize) -> f64 {
        self.rewards[obs * self.sizes.actions + action]
    }

    pub fn raw_transitions(&self) -> &[Vec<f64>] {
        &self.transitions
    }
    pub fn raw_emissions(&self) -> &[Vec<f64>] {
        &self.emissions
    }
    pub fn raw_rewards(&self) -> &[f64] {
        &self.rewards
    }

    /// Same dynamics with a different reward table.
    pub fn with_rewards(&self, rewards: Vec<f64>) -> Result<Self> {
        Self::from_raw(
            self.sizes,
            self.initial.clone(),
            self.transitions.clone(),
            self.emissions.clone(),
            rewards,
        )
    }

    /// Propagates a (possibly unnormalized) state measure through `T_step(. | ., action)`.
    pub fn predict(&self, step: usize, measure: &[f64], action: usize) -> Vec<f64> {
        let s = self.sizes.states;
        let mut next = vec![0.0; s];
        for (state, &w) in measure.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (n, p) in next.iter_mut().zip(self.transition_column(step, state, action)) {
                *n += w * p;
            }
        }
        next
    }

    /// Pointwise product of a state measure with the likelihood of `obs` at `step`.
    pub fn condition(&self, step: usize, measure: &[f64], obs: usize) -> Vec<f64> {
        measure
            .iter()
            .enumerate()
            .map(|(state, w)| w * self.emission(step, obs, state))
            .collect()
    }

    /// Observation law at `step` induced by a state measure.
    pub fn observe(&self, step: usize, measure: &[f64]) -> Vec<f64> {
        let o = self.sizes.observations;
        let mut out = vec![0.0; o];
        for (state, &w) in measure.iter().enumerate() {
            for (x, e) in out.iter_mut().zip(self.emission_column(step, state)) {
                *x += w * e;
            }
        }
        out
    }

    pub(crate) fn check_step(&self, step: usize, min: usize, max: usize) -> Result<()> {
        if step < min || step > max {
            return Err(Error::StepOutOfRange { step, min, max });
        }
        Ok(())
    }
}

impl TryFrom<ModelSpec> for TabularModel {
    type Error = Error;

    fn try_from(spec: ModelSpec) -> Result<Self> {
        let sizes = Sizes::new(spec.states, spec.actions, spec.observations, spec.horizon);
        let (s, a, o) = (spec.states, spec.actions, spec.observations);
        let mut transitions = Vec::with_capacity(spec.transitions.len());
        for (step, per_action) in spec.transitions.into_iter().enumerate() {
            if per_action.len() != a {
                return Err(invalid(format!("transitions[{step}] must list {a} actions")));
            }
            let mut flat = Vec::with_capacity(a * s * s);
            for (action, per_state) in per_action.into_iter().enumerate() {
                if per_state.len() != s {
                    return Err(invalid(format!("transitions[{step}][{action}] must list {s} states")));
                }
                for column in per_state {
                    if column.len() != s {
                        return Err(invalid(format!(
                            "transition distributions at step {} must have {s} entries",
                            step + 1
                        )));
                    }
                    flat.extend(column);
                }
            }
            transitions.push(flat);
        }
        let mut emissions = Vec::with_capacity(spec.emissions.len());
        for (step, per_state) in spec.emissions.into_iter().enumerate() {
            if per_state.len() != s {
                return Err(invalid(format!("emissions[{step}] must list {s} states")));
            }
            let mut flat = Vec::with_capacity(s * o);
            for column in per_state {
                if column.len() != o {
                    return Err(invalid(format!(
                        "emission distributions at step {} must have {o} entries",
                        step + 1
                    )));
                }
                flat.extend(column);
            }
            emissions.push(flat);
        }
        if spec.rewards.len() != o || spec.rewards.iter().any(|row| row.len() != a) {
            return Err(invalid(format!("rewards must be a {o} x {a} table")));
        }
        let rewards = spec.rewards.into_iter().flatten().collect();
        Self::from_raw(sizes, spec.initial, transitions, emissions, rewards)
    }
}

impl From<TabularModel> for ModelSpec {
    fn from(m: TabularModel) -> Self {
        let Sizes {
            states: s,
            actions: a,
            observations: o,
            horizon,
        } = m.sizes;
        let transitions = m
            .transitions
            .iter()
            .map(|t| {
                (0..a)
                    .map(|action| {
                        (0..s)
                            .map(|state| t[(action * s + state) * s..(action * s + state + 1) * s].to_vec())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let emissions = m
            .emissions
            .iter()
            .map(|e| e.chunks(o).map(<[f64]>::to_vec).collect())
            .collect();
        let rewards = m.rewards.chunks(a).map(<[f64]>::to_vec).collect();
        ModelSpec {
            horizon,
            states: s,
            actions: a,
            observations: o,
            initial: m.initial,
            transitions,
            emissions,
            rewards,
        }
    }
}

/// A POMDP in the linear-kernel form
/// `T_h(s' | s, a) = u(s')ᵀ M_{h,a} v(s)` and `E_h(o | s) = q(o)ᵀ g_h(s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearKernelModel {
    sizes: Sizes,
    /// `S x d_u`; columns are distributions over states.
    pub u: DMatrix<f64>,
    /// `S x d_v`.
    pub v: DMatrix<f64>,
    /// `O x d_q`; columns are distributions over observations.
    pub q: DMatrix<f64>,
    /// `m[h-1][a]`, `d_u x d_v`, for steps `1..H`.
    pub m: Vec<Vec<DMatrix<f64>>>,
    /// `g[h-1]`, `d_q x S`, for steps `1..=H`.
    pub g: Vec<DMatrix<f64>>,
    pub initial: Vec<f64>,
    rewards: Vec<f64>,
}

impl LinearKernelModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        sizes: Sizes,
        u: DMatrix<f64>,
        v: DMatrix<f64>,
        q: DMatrix<f64>,
        m: Vec<Vec<DMatrix<f64>>>,
        g: Vec<DMatrix<f64>>,
        initial: Vec<f64>,
        rewards: Vec<f64>,
    ) -> Result<Self> {
        let model = Self {
            sizes,
            u,
            v,
            q,
            m,
            g,
            initial,
            rewards,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let Sizes {
            states: s,
            actions: a,
            observations: o,
            horizon: h,
        } = self.sizes;
        if self.u.nrows() != s || self.v.nrows() != s || self.q.nrows() != o {
            return Err(invalid("basis functions have the wrong number of rows"));
        }
        for (name, mat) in [("u", &self.u), ("q", &self.q)] {
            for (j, col) in mat.column_iter().enumerate() {
                let col: Vec<f64> = col.iter().copied().collect();
                check_distribution(&format!("column {j} of {name}"), &col)?;
            }
        }
        if self.v.iter().any(|x| *x < 0.0) {
            return Err(invalid("v must be nonnegative"));
        }
        if self.m.len() != h - 1 || self.m.iter().any(|per| per.len() != a) {
            return Err(invalid("expected one M matrix per (step, action) for steps 1..H"));
        }
        for per in &self.m {
            for mat in per {
                if mat.shape() != (self.u.ncols(), self.v.ncols()) || mat.iter().any(|x| *x < 0.0) {
                    return Err(invalid("M matrices must be nonnegative d_u x d_v"));
                }
            }
        }
        if self.g.len() != h
            || self
                .g
                .iter()
                .any(|g| g.shape() != (self.q.ncols(), s) || g.iter().any(|x| *x < 0.0))
        {
            return Err(invalid("g matrices must be nonnegative d_q x S, one per step"));
        }
        let residual = simplex::hull_residual(&self.u, &self.initial);
        if residual > 1e-9 {
            return Err(invalid(format!(
                "initial distribution is not in the convex hull of u (residual {residual:e})"
            )));
        }
        // The reconstruction validates the conditional distributions.
        self.to_tabular().map(|_| ())
    }

    /// Embeds a tabular model with one-hot bases: `u = v = I_S`, `q = I_O`.
    pub fn embed_tabular(model: &TabularModel) -> Self {
        let Sizes {
            states: s,
            actions: a,
            observations: o,
            horizon: h,
        } = model.sizes();
        let m = (1..h)
            .map(|step| {
                (0..a)
                    .map(|action| DMatrix::from_fn(s, s, |next, state| model.transition(step, next, state, action)))
                    .collect()
            })
            .collect();
        let g = (1..=h).map(|step| model.emission_matrix(step)).collect();
        Self {
            sizes: model.sizes(),
            u: DMatrix::identity(s, s),
            v: DMatrix::identity(s, s),
            q: DMatrix::identity(o, o),
            m,
            g,
            initial: model.initial().to_vec(),
            rewards: model.raw_rewards().to_vec(),
        }
    }

    /// Random linear-kernel model. Rows of `v` and columns of every `M` are
    /// stochastic, which makes each reconstructed transition a distribution.
    pub fn random<R: Rng + ?Sized>(sizes: Sizes, d_u: usize, d_v: usize, d_q: usize, rng: &mut R) -> Result<Self> {
        let Sizes {
            states: s,
            actions: a,
            observations: o,
            horizon: h,
        } = sizes;
        let column_stochastic = |rows: usize, cols: usize, rng: &mut R| {
            let data: Vec<f64> = (0..cols).flat_map(|_| simplex::uniform(rows, rng)).collect();
            DMatrix::from_column_slice(rows, cols, &data)
        };
        let u = column_stochastic(s, d_u, rng);
        let v = column_stochastic(d_v, s, rng).transpose();
        let q = column_stochastic(o, d_q, rng);
        let m = (1..h)
            .map(|_| (0..a).map(|_| column_stochastic(d_u, d_v, rng)).collect())
            .collect();
        let g = (0..h).map(|_| column_stochastic(d_q, s, rng)).collect();
        let weights = simplex::uniform(d_u, rng);
        let initial = (&u * nalgebra::DVector::from_vec(weights)).iter().copied().collect();
        let rewards = (0..o * a).map(|_| rng.random::<f64>()).collect();
        Self::new(sizes, u, v, q, m, g, initial, rewards)
    }

    pub fn sizes(&self) -> Sizes {
        self.sizes
    }

    pub fn transition(&self, step: usize, next: usize, state: usize, action: usize) -> f64 {
        (self.u.row(next) * &self.m[step - 1][action] * self.v.row(state).transpose())[(0, 0)]
    }

    pub fn emission(&self, step: usize, obs: usize, state: usize) -> f64 {
        self.q.row(obs).dot(&self.g[step - 1].column(state).transpose())
    }

    /// Reconstructs the tabular kernels; fails if they are not valid distributions.
    pub fn to_tabular(&self) -> Result<TabularModel> {
        let Sizes {
            states: s,
            actions: a,
            observations: o,
            horizon: h,
        } = self.sizes;
        let transitions = (1..h)
            .map(|step| {
                let mut flat = vec![0.0; a * s * s];
                for action in 0..a {
                    let full = &self.u * &self.m[step - 1][action] * self.v.transpose();
                    for state in 0..s {
                        for next in 0..s {
                            flat[(action * s + state) * s + next] = full[(next, state)];
                        }
                    }
                }
                flat
            })
            .collect();
        let emissions = (1..=h)
            .map(|step| {
                let full = &self.q * &self.g[step - 1];
                let mut flat = vec![0.0; s * o];
                for state in 0..s {
                    for obs in 0..o {
                        flat[state * o + obs] = full[(obs, state)];
                    }
                }
                flat
            })
            .collect();
        let fix = |x: Vec<f64>| -> Vec<f64> { x.into_iter().map(|p| if p.abs() < 1e-15 { 0.0 } else { p }).collect() };
        TabularModel::from_raw(
            self.sizes,
            fix(self.initial.clone()),
            transitions,
            emissions,
            self.rewards.clone(),
        )
    }
}

/// Encodes an observation history as a big-endian base-`O` integer.
pub fn observation_index(observations: &[usize], num_observations: usize) -> usize {
    observations.iter().fold(0, |acc, &o| acc * num_observations + o)
}

/// Observation history `τ_h = (o_1, ..., o_h)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ObservationHistory(pub Vec<usize>);

impl ObservationHistory {
    pub fn step(&self) -> usize {
        self.0.len()
    }
}

/// Full history `(o_1, a_1, ..., a_{h-1}, o_h)`, or a completed episode
/// `(o_1, a_1, ..., o_H, a_H)` whose step is `H + 1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FullHistory {
    observations: Vec<usize>,
    actions: Vec<usize>,
}

impl FullHistory {
    pub fn new(observations: Vec<usize>, actions: Vec<usize>) -> Result<Self> {
        let ok = !observations.is_empty()
            && (actions.len() + 1 == observations.len() || actions.len() == observations.len());
        if !ok {
            return Err(Error::MalformedHistory {
                observations: observations.len(),
                actions: actions.len(),
            });
        }
        Ok(Self { observations, actions })
    }

    pub fn observations(&self) -> &[usize] {
        &self.observations
    }
    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    /// Step index `h` of the history; a completed episode has step `H + 1`.
    pub fn step(&self) -> usize {
        if self.actions.len() == self.observations.len() {
            self.observations.len() + 1
        } else {
            self.observations.len()
        }
    }

    pub fn observation_history(&self) -> ObservationHistory {
        ObservationHistory(self.observations.clone())
    }

    pub fn validate(&self, sizes: &Sizes) -> Result<()> {
        if self.step() > sizes.horizon + 1 {
            return Err(Error::StepOutOfRange {
                step: self.step(),
                min: 1,
                max: sizes.horizon + 1,
            });
        }
        if let Some(&o) = self.observations.iter().find(|&&o| o >= sizes.observations) {
            return Err(Error::IndexOutOfRange {
                what: "observation",
                index: o,
                bound: sizes.observations,
            });
        }
        if let Some(&a) = self.actions.iter().find(|&&a| a >= sizes.actions) {
            return Err(Error::IndexOutOfRange {
                what: "action",
                index: a,
                bound: sizes.actions,
            });
        }
        Ok(())
    }
}

/// Deterministic policy on observation histories, stored as one action table
/// per step indexed by [`observation_index`].
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Policy {
    observations: usize,
    actions: usize,
    tables: Vec<Vec<usize>>,
}

impl Policy {
    pub fn from_tables(sizes: Sizes, tables: Vec<Vec<usize>>) -> Result<Self> {
        if tables.len() != sizes.horizon {
            return Err(Error::ShapeMismatch(format!(
                "policy needs {} step tables, got {}",
                sizes.horizon,
                tables.len()
            )));
        }
        for (i, table) in tables.iter().enumerate() {
            if table.len() != sizes.observation_histories(i + 1) {
                return Err(Error::ShapeMismatch(format!("policy table for step {} has wrong size", i + 1)));
            }
            if let Some(&a) = table.iter().find(|&&a| a >= sizes.actions) {
                return Err(Error::IndexOutOfRange {
                    what: "action",
                    index: a,
                    bound: sizes.actions,
                });
            }
        }
        Ok(Self {
            observations: sizes.observations,
            actions: sizes.actions,
            tables,
        })
    }

    /// Builds the policy by evaluating `rule` on every observation history.
    pub fn from_fn(sizes: Sizes, mut rule: impl FnMut(&[usize]) -> usize) -> Result<Self> {
        let o = sizes.observations;
        let tables = (1..=sizes.horizon)
            .map(|step| {
                let mut history = vec![0; step];
                (0..sizes.observation_histories(step))
                    .map(|index| {
                        let mut rest = index;
                        for slot in history.iter_mut().rev() {
                            *slot = rest % o;
                            rest /= o;
                        }
                        rule(&history)
                    })
                    .collect()
            })
            .collect();
        Self::from_tables(sizes, tables)
    }

    pub fn constant(sizes: Sizes, action: usize) -> Result<Self> {
        Self::from_fn(sizes, |_| action)
    }

    pub fn horizon(&self) -> usize {
        self.tables.len()
    }

    pub fn action(&self, observations: &[usize]) -> usize {
        self.tables[observations.len() - 1][observation_index(observations, self.observations)]
    }

    /// Action at `step` for the observation history with the given index.
    pub fn action_by_index(&self, step: usize, index: usize) -> usize {
        self.tables[step - 1][index]
    }

    pub fn tables(&self) -> &[Vec<usize>] {
        &self.tables
    }

    /// Compact textual id, one digit group per step (`"0-01-0110"`).
    pub fn id(&self) -> String {
        let radix = self.actions.max(2) as u32;
        self.tables
            .iter()
            .map(|t| {
                t.iter()
                    .map(|&a| char::from_digit(a as u32, radix.min(36)).unwrap_or('?'))
                    .collect::<String>()
            })
            .collect::<Vec<_>>()
            .join("-")
    }
}

/// Uniform mixture of deterministic policies; one component is drawn per episode.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixingPolicy {
    components: Vec<Policy>,
}

/// Builds a mixing policy from a nonempty list.
pub fn mix(policies: Vec<Policy>) -> Result<MixingPolicy> {
    if policies.is_empty() {
        return Err(Error::EmptyPolicyList);
    }
    Ok(MixingPolicy { components: policies })
}

/// Anything that selects a deterministic policy for a new episode.
pub trait Behavior {
    fn components(&self) -> &[Policy];

    fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> &Policy {
        let c = self.components();
        if c.len() == 1 {
            &c[0]
        } else {
            &c[rng.random_range(0..c.len())]
        }
    }
}

impl Behavior for Policy {
    fn components(&self) -> &[Policy] {
        std::slice::from_ref(self)
    }
}

impl Behavior for MixingPolicy {
    fn components(&self) -> &[Policy] {
        &self.components
    }
}

/// Joint measure `p(τ̄_h, s_h = ·)` obtained by forward filtering.
pub fn forward_belief(model: &TabularModel, history: &FullHistory) -> Result<Vec<f64>> {
    history.validate(&model.sizes())?;
    let step = history.step();
    model.check_step(step, 1, model.horizon())?;
    let obs = history.observations();
    let mut belief = model.condition(1, model.initial(), obs[0]);
    for t in 1..step {
        let predicted = model.predict(t, &belief, history.actions()[t - 1]);
        belief = model.condition(t + 1, &predicted, obs[t]);
    }
    Ok(belief)
}

/// One branch of the observation-history tree generated by a policy.
#[derive(Clone, Debug)]
pub struct PolicyBranch {
    pub observations: Vec<usize>,
    pub actions: Vec<usize>,
    /// `p(τ̄_h, s_h = ·)`.
    pub belief: Vec<f64>,
}

impl PolicyBranch {
    pub fn mass(&self) -> f64 {
        self.belief.iter().sum()
    }
}

/// Every observation history of length `step` with the actions chosen by
/// `policy`, together with its forward belief. Zero-mass branches are kept.
pub fn policy_branches(model: &TabularModel, policy: &Policy, step: usize) -> Vec<PolicyBranch> {
    let o = model.observations();
    let mut layer: Vec<PolicyBranch> = (0..o)
        .map(|obs| PolicyBranch {
            observations: vec![obs],
            actions: vec![],
            belief: model.condition(1, model.initial(), obs),
        })
        .collect();
    for t in 1..step {
        let mut next = Vec::with_capacity(layer.len() * o);
        for branch in &layer {
            let action = policy.action(&branch.observations);
            let predicted = model.predict(t, &branch.belief, action);
            for obs in 0..o {
                let mut observations = branch.observations.clone();
                observations.push(obs);
                let mut actions = branch.actions.clone();
                actions.push(action);
                next.push(PolicyBranch {
                    observations,
                    actions,
                    belief: model.condition(t + 1, &predicted, obs),
                });
            }
        }
        layer = next;
    }
    layer
}

/// Marginal law of `s_step` when `policy` drives the episode.
pub fn state_marginal(model: &TabularModel, policy: &Policy, step: usize) -> Vec<f64> {
    let mut out = vec![0.0; model.states()];
    for branch in policy_branches(model, policy, step) {
        for (x, b) in out.iter_mut().zip(&branch.belief) {
            *x += b;
        }
    }
    out
}

/// A simulated episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub observations: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

impl Trajectory {
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Observation triple `(o_{h-1}, o_h, o_{h+1})`; the last slot may hold
/// [`TripleSpace::END`].
pub type ObsTriple = [usize; 3];

/// Index space of observation triples `O x O x (O + 1)`.
///
/// The third slot carries the end-of-episode marker when the triple ends at
/// step `H`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TripleSpace {
    observations: usize,
}

impl TripleSpace {
    /// Offset of the end-of-episode marker: it is the observation index `O`.
    pub const END: usize = usize::MAX;

    pub fn new(observations: usize) -> Self {
        Self { observations }
    }

    pub fn observations(&self) -> usize {
        self.observations
    }

    /// Value used for the end marker in the third slot.
    pub fn end(&self) -> usize {
        self.observations
    }

    /// Number of values the third slot can take.
    pub fn last_slot(&self) -> usize {
        self.observations + 1
    }

    pub fn len(&self) -> usize {
        self.observations * self.observations * (self.observations + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, t: ObsTriple) -> usize {
        let third = if t[2] == Self::END { self.end() } else { t[2] };
        (t[0] * self.observations + t[1]) * self.last_slot() + third
    }

    pub fn triple(&self, index: usize) -> ObsTriple {
        let third = index % self.last_slot();
        let rest = index / self.last_slot();
        [rest / self.observations, rest % self.observations, third]
    }

    /// Integer coordinates used by distance-based kernels; the end marker sits at `O`.
    pub fn coordinates(&self, index: usize) -> [f64; 3] {
        let t = self.triple(index);
        [t[0] as f64, t[1] as f64, t[2] as f64]
    }
}

pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Simulates one episode of `model` under `behavior`.
pub fn sample_episode<B: Behavior, R: Rng + ?Sized>(model: &TabularModel, behavior: &B, rng: &mut R) -> Trajectory {
    let policy = behavior.pick(rng);
    let h = model.horizon();
    let mut traj = Trajectory {
        states: Vec::with_capacity(h),
        observations: Vec::with_capacity(h),
        actions: Vec::with_capacity(h),
        rewards: Vec::with_capacity(h),
    };
    let mut state = sample_categorical(model.initial(), rng);
    for step in 1..=h {
        let obs = sample_categorical(model.emission_column(step, state), rng);
        traj.states.push(state);
        traj.observations.push(obs);
        let action = policy.action(&traj.observations);
        traj.actions.push(action);
        traj.rewards.push(model.reward(obs, action));
        if step < h {
            state = sample_categorical(model.transition_column(step, state, action), rng);
        }
    }
    traj
}

/// Runs `behavior` for the first `step - 2` actions, then forces
/// `a_{step-1} = first` and `a_step = second`, and returns
/// `(o_{step-1}, o_step, o_{step+1})`.
pub fn sample_intervention_triple<B: Behavior, R: Rng + ?Sized>(
    model: &TabularModel,
    behavior: &B,
    step: usize,
    first: usize,
    second: usize,
    rng: &mut R,
) -> Result<ObsTriple> {
    model.check_step(step, 2, model.horizon())?;
    check_action(model, first)?;
    check_action(model, second)?;
    let policy = behavior.pick(rng);
    let mut state = sample_categorical(model.initial(), rng);
    let mut observations = vec![sample_categorical(model.emission_column(1, state), rng)];
    for t in 1..step - 1 {
        let action = policy.action(&observations);
        state = sample_categorical(model.transition_column(t, state, action), rng);
        observations.push(sample_categorical(model.emission_column(t + 1, state), rng));
    }
    let prev = *observations.last().expect("at least one observation");
    state = sample_categorical(model.transition_column(step - 1, state, first), rng);
    let cur = sample_categorical(model.emission_column(step, state), rng);
    let next = if step < model.horizon() {
        state = sample_categorical(model.transition_column(step, state, second), rng);
        sample_categorical(model.emission_column(step + 1, state), rng)
    } else {
        TripleSpace::END
    };
    Ok([prev, cur, next])
}

fn check_action(model: &TabularModel, action: usize) -> Result<()> {
    if action >= model.actions() {
        return Err(Error::IndexOutOfRange {
            what: "action",
            index: action,
            bound: model.actions(),
        });
    }
    Ok(())
}

/// Exact law of the interventional triple `ρ_{h,a,a'}` under `behavior`,
/// as a vector over [`TripleSpace`].
pub fn interventional_law<B: Behavior>(
    model: &TabularModel,
    behavior: &B,
    step: usize,
    first: usize,
    second: usize,
) -> Result<Vec<f64>> {
    model.check_step(step, 2, model.horizon())?;
    check_action(model, first)?;
    check_action(model, second)?;
    let space = TripleSpace::new(model.observations());
    let o = model.observations();
    let mut law = vec![0.0; space.len()];
    let components = behavior.components();
    let weight = 1.0 / components.len() as f64;
    for policy in components {
        for branch in policy_branches(model, policy, step - 1) {
            let prev = *branch.observations.last().expect("nonempty branch");
            let predicted = model.predict(step - 1, &branch.belief, first);
            for cur in 0..o {
                let joint = model.condition(step, &predicted, cur);
                if step < model.horizon() {
                    let ahead = model.predict(step, &joint, second);
                    let obs_law = model.observe(step + 1, &ahead);
                    for (next, p) in obs_law.iter().enumerate() {
                        law[space.index([prev, cur, next])] += weight * p;
                    }
                } else {
                    let mass: f64 = joint.iter().sum();
                    law[space.index([prev, cur, TripleSpace::END])] += weight * mass;
                }
            }
        }
    }
    Ok(law)
}

/// A finite candidate class with a realizable true member.
///
/// The learner only sees [`ParameterFamily::candidates`] and the sampling
/// interface of [`ParameterFamily::environment`]; the true index is for the
/// experiment harness.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterFamily {
    candidates: Vec<TabularModel>,
    true_index: usize,
}

impl ParameterFamily {
    pub fn new(candidates: Vec<TabularModel>, true_index: usize) -> Result<Self> {
        let first = candidates.first().ok_or_else(|| invalid("family has no candidates"))?;
        if true_index >= candidates.len() {
            return Err(Error::IndexOutOfRange {
                what: "true candidate",
                index: true_index,
                bound: candidates.len(),
            });
        }
        for (i, c) in candidates.iter().enumerate().skip(1) {
            if c.sizes() != first.sizes() {
                return Err(invalid(format!("candidate {i} has different sizes")));
            }
            if c.initial() != first.initial() {
                return Err(invalid(format!("candidate {i} has a different initial distribution")));
            }
            if c.raw_rewards() != first.raw_rewards() {
                return Err(invalid(format!("candidate {i} has a different reward table")));
            }
        }
        Ok(Self { candidates, true_index })
    }

    pub fn candidates(&self) -> &[TabularModel] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn sizes(&self) -> Sizes {
        self.candidates[0].sizes()
    }

    pub fn true_index(&self) -> usize {
        self.true_index
    }

    pub fn true_model(&self) -> &TabularModel {
        &self.candidates[self.true_index]
    }

    pub fn environment(&self) -> Environment<'_> {
        Environment {
            model: self.true_model(),
        }
    }

    /// Whether all candidates agree on `T_1`, `E_1` and `E_2`, the components
    /// the confidence set cannot identify from interventional triples.
    pub fn shares_initialization(&self) -> bool {
        let first = &self.candidates[0];
        let h = first.horizon();
        self.candidates.iter().all(|c| {
            (h < 2 || c.raw_transitions()[0] == first.raw_transitions()[0])
                && c.raw_emissions()[0] == first.raw_emissions()[0]
                && (h < 2 || c.raw_emissions()[1] == first.raw_emissions()[1])
        })
    }
}

/// Sampling access to the true model of a family.
#[derive(Clone, Copy, Debug)]
pub struct Environment<'a> {
    model: &'a TabularModel,
}

impl Environment<'_> {
    pub fn sizes(&self) -> Sizes {
        self.model.sizes()
    }

    pub fn sample_episode<B: Behavior, R: Rng + ?Sized>(&self, behavior: &B, rng: &mut R) -> Trajectory {
        sample_episode(self.model, behavior, rng)
    }

    pub fn sample_intervention_triple<B: Behavior, R: Rng + ?Sized>(
        &self,
        behavior: &B,
        step: usize,
        first: usize,
        second: usize,
        rng: &mut R,
    ) -> Result<ObsTriple> {
        sample_intervention_triple(self.model, behavior, step, first, second, rng)
    }
}
