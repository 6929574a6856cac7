//! Exact planning, optimistic selection over a confidence set, the learning
//! loop and the confidence-level schedule.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bellman::{evaluate_j, BTensorSet};
use crate::error::{Error, Result};
use crate::estimation::{
    confidence_set_or_best, error_profile, loss_from_projections, project_dataset, tuples, TripleDataset,
};
use crate::linear::tabular_bridge;
use crate::model::{ParameterFamily, Policy, TabularModel};
use crate::rkhs::RkhsContext;
use crate::solver::{nearest_candidate, solve_minimax, DualState, MinimaxProblem, SmoothFamily, TraceRow};

/// Default cap on `(O·A)^H`, the number of leaves of the planning tree.
pub const DEFAULT_PLAN_BUDGET: u128 = 1_000_000;
/// Environment variable overriding [`DEFAULT_PLAN_BUDGET`].
pub const BUDGET_ENV: &str = "OPTENET_PLAN_BUDGET";
/// Values closer than this count as ties.
pub const TIE_TOL: f64 = 1e-12;

/// Planning budget, honoring [`BUDGET_ENV`] when it parses as an integer.
pub fn plan_budget() -> u128 {
    std::env::var(BUDGET_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_PLAN_BUDGET)
}

/// Leaves of the planning tree, `(O·A)^H`, saturating on overflow.
pub fn plan_nodes(model: &TabularModel) -> u128 {
    let base = (model.observations() * model.actions()) as u128;
    base.checked_pow(model.horizon() as u32).unwrap_or(u128::MAX)
}

/// An optimal policy with its value.
#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub policy: Policy,
    pub value: f64,
}

struct Search<'a> {
    model: &'a TabularModel,
}

impl Search<'_> {
    /// Best achievable reward from `step` on, given the unnormalized state
    /// measure `predicted` before observing `o_step`.
    fn value(&self, step: usize, predicted: &[f64]) -> f64 {
        (0..self.model.observations())
            .map(|obs| {
                let belief = self.model.condition(step, predicted, obs);
                self.best_action(step, obs, &belief).1
            })
            .sum()
    }

    fn action_value(&self, step: usize, obs: usize, belief: &[f64], action: usize) -> f64 {
        let mass: f64 = belief.iter().sum();
        let now = self.model.reward(obs, action) * mass;
        if step == self.model.horizon() || mass == 0.0 {
            now
        } else {
            now + self.value(step + 1, &self.model.predict(step, belief, action))
        }
    }

    fn best_action(&self, step: usize, obs: usize, belief: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for action in 0..self.model.actions() {
            let v = self.action_value(step, obs, belief, action);
            if v > best.1 + TIE_TOL {
                best = (action, v);
            }
        }
        best
    }

    fn assign(&self, step: usize, predicted: &[f64], prefix: usize, tables: &mut [Vec<usize>]) {
        let o = self.model.observations();
        for obs in 0..o {
            let belief = self.model.condition(step, predicted, obs);
            let (action, _) = self.best_action(step, obs, &belief);
            let index = prefix * o + obs;
            tables[step - 1][index] = action;
            if step < self.model.horizon() {
                let next = self.model.predict(step, &belief, action);
                self.assign(step + 1, &next, index, tables);
            }
        }
    }
}

/// Optimal policy by backward induction over the observation-history tree,
/// carrying unnormalized beliefs; ties go to the lowest action.
pub fn plan_exact(model: &TabularModel) -> Result<Policy> {
    plan_exact_with_budget(model, plan_budget()).map(|p| p.policy)
}

pub fn plan_exact_with_budget(model: &TabularModel, budget: u128) -> Result<Plan> {
    let nodes = plan_nodes(model);
    if nodes > budget {
        return Err(Error::BudgetExceeded { nodes, budget });
    }
    let sizes = model.sizes();
    let mut tables: Vec<Vec<usize>> = (1..=sizes.horizon).map(|h| vec![0; sizes.observation_histories(h)]).collect();
    let search = Search { model };
    search.assign(1, model.initial(), 0, &mut tables);
    let value = search.value(1, model.initial());
    Ok(Plan {
        policy: Policy::from_tables(sizes, tables)?,
        value,
    })
}

/// Optimal policy and value of every candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimalPlans {
    pub plans: Vec<Plan>,
}

impl OptimalPlans {
    pub fn compute(candidates: &[TabularModel], budget: u128) -> Result<Self> {
        let plans = candidates
            .par_iter()
            .map(|m| plan_exact_with_budget(m, budget))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { plans })
    }

    pub fn value(&self, index: usize) -> f64 {
        self.plans[index].value
    }

    pub fn policy(&self, index: usize) -> &Policy {
        &self.plans[index].policy
    }
}

/// `argmax_{θ ∈ members} J(θ, π̂(θ))`, lowest index on ties.
pub fn optimistic_plan<'a>(plans: &'a OptimalPlans, members: &[usize]) -> Result<(usize, &'a Policy)> {
    let mut sorted = members.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut best: Option<usize> = None;
    for &i in &sorted {
        if i >= plans.plans.len() {
            return Err(Error::IndexOutOfRange {
                what: "candidate",
                index: i,
                bound: plans.plans.len(),
            });
        }
        if best.map_or(true, |b| plans.value(i) > plans.value(b) + TIE_TOL) {
            best = Some(i);
        }
    }
    let chosen = best.ok_or(Error::EmptyConfidenceSet)?;
    Ok((chosen, plans.policy(chosen)))
}

/// Smallest confidence level covered by the sample-complexity guarantee:
/// `d_o^{3/2} (γ + 1) / α · sqrt(8 ln(2 K H A² / δ))`.
pub fn beta_min(
    d_o: usize,
    gamma: f64,
    alpha: f64,
    iterations: usize,
    horizon: usize,
    actions: usize,
    delta: f64,
) -> Result<f64> {
    if d_o == 0 || iterations == 0 || horizon == 0 || actions == 0 {
        return Err(Error::Domain("dimensions and counts must be positive".into()));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::Domain(format!("gamma must be nonnegative, got {gamma}")));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    let count = 2.0 * iterations as f64 * horizon as f64 * (actions * actions) as f64;
    Ok((d_o as f64).powf(1.5) * (gamma + 1.0) / alpha * (8.0 * (count / delta).ln()).sqrt())
}

/// Right-hand side of the average-suboptimality guarantee after `K` iterations:
/// `4 d_s γ² β H² A² ln K / √K + 4 d_s γ H² / K`.
pub fn regret_bound(d_s: usize, gamma: f64, beta: f64, horizon: usize, actions: usize, iterations: usize) -> f64 {
    let k = iterations.max(1) as f64;
    let (d, h, a) = (d_s as f64, horizon as f64, actions as f64);
    4.0 * d * gamma * gamma * beta * h * h * a * a * k.ln() / k.sqrt() + 4.0 * d * gamma * h * h / k
}

/// Operators of every candidate: one-hot state basis, delta auxiliary kernel.
pub fn candidate_operators(candidates: &[TabularModel]) -> Result<(Vec<BTensorSet>, f64)> {
    let built = candidates
        .par_iter()
        .map(|m| {
            let bridge = tabular_bridge(m)?;
            BTensorSet::build(m, &bridge)
        })
        .collect::<Result<Vec<_>>>()?;
    let gamma = built.iter().map(BTensorSet::gamma).fold(0.0, f64::max);
    Ok((built, gamma))
}

/// Parameters of one learning run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSettings {
    pub iterations: usize,
    pub beta: f64,
    pub seed: u64,
    pub budget: u128,
    pub solver: SolverChoice,
}

/// How the next parameter is chosen each iteration.
#[derive(Clone, Debug, PartialEq)]
pub enum SolverChoice {
    /// Optimistic argmax over the confidence set.
    Exact,
    /// Primal-dual descent on the Lagrangian from the previous choice, then
    /// the nearest candidate.
    Stochastic(StochasticSettings),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StochasticSettings {
    pub steps: usize,
    pub batch: usize,
    pub eta: f64,
    pub n_dual: usize,
    pub n_primal: usize,
}

impl Default for StochasticSettings {
    fn default() -> Self {
        Self {
            steps: 10,
            batch: 4,
            eta: 1e-2,
            n_dual: 50,
            n_primal: 1,
        }
    }
}

/// One row of the run log.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub theta_index: usize,
    pub policy_id: String,
    pub set_size: usize,
    pub fallback: bool,
    pub true_in_set: bool,
    pub loss_true: f64,
    pub loss_chosen: f64,
    pub optimistic_value: f64,
    pub suboptimality: f64,
    /// `Some` when the true parameter is in the confidence set.
    pub optimism_holds: Option<bool>,
    pub decomposition_bound: Option<f64>,
    pub decomposition_holds: Option<bool>,
}

/// Full log of a learning run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub beta: f64,
    pub iterations: usize,
    pub seed: u64,
    pub gamma: f64,
    pub alpha: f64,
    pub d_s: usize,
    pub d_o: usize,
    pub true_index: usize,
    pub optimal_value: f64,
    pub episodes: usize,
    pub rows: Vec<IterationRecord>,
    /// `(iteration, row)` pairs of the stochastic solver, empty for the exact one.
    pub solver_trace: Vec<(usize, TraceRow)>,
    /// Every interventional triple collected during the run.
    pub dataset: TripleDataset,
    pub elapsed_seconds: f64,
}

impl RunRecord {
    /// Mean suboptimality over iterations `from..to` (1-based, inclusive start, exclusive end).
    pub fn mean_suboptimality(&self, from: usize, to: usize) -> f64 {
        let slice: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.iteration >= from && r.iteration < to)
            .map(|r| r.suboptimality)
            .collect();
        slice.iter().sum::<f64>() / slice.len().max(1) as f64
    }

    /// Average suboptimality over the first `k` iterations.
    pub fn average_suboptimality(&self, k: usize) -> f64 {
        self.mean_suboptimality(1, k + 1)
    }

    pub fn membership_rate(&self) -> f64 {
        let hits = self.rows.iter().filter(|r| r.true_in_set).count();
        hits as f64 / self.rows.len().max(1) as f64
    }

    /// Whether every iteration with the truth in the confidence set satisfied
    /// both optimism and the error decomposition.
    pub fn checks_hold(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.optimism_holds != Some(false) && r.decomposition_holds != Some(false))
    }

    pub fn regret_bound(&self, horizon: usize, actions: usize) -> f64 {
        regret_bound(self.d_s, self.gamma, self.beta, horizon, actions, self.iterations)
    }
}

/// Stream id of the RNG used for tuple `tuple_index` at iteration `iteration`.
pub fn stream_id(iteration: usize, tuple_index: usize, tuple_count: usize) -> u64 {
    ((iteration - 1) * tuple_count + tuple_index) as u64
}

/// Collects one interventional triple per tuple under `behavior`, each from
/// its own RNG stream.
pub fn collect_iteration(
    family: &ParameterFamily,
    policy: &Policy,
    dataset: &mut TripleDataset,
    iteration: usize,
    seed: u64,
) -> Result<()> {
    let env = family.environment();
    let all = tuples(&family.sizes());
    let count = all.len();
    let triples = all
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream_id(iteration, i, count));
            env.sample_intervention_triple(policy, t.step, t.first, t.second, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    for (t, triple) in all.into_iter().zip(triples) {
        dataset.push(t, triple)?;
    }
    Ok(())
}

/// The optimistic learning loop: collect data with the previous policy,
/// rebuild the confidence set, plan optimistically, log.
pub fn run_optenet(family: &ParameterFamily, settings: &RunSettings, ctx: &RkhsContext) -> Result<RunRecord> {
    if settings.iterations == 0 {
        return Err(Error::Domain("the number of iterations must be at least 1".into()));
    }
    let start = Instant::now();
    let sizes = family.sizes();
    if ctx.space().observations() != sizes.observations {
        return Err(Error::ShapeMismatch("kernel context and family disagree on O".into()));
    }
    let candidates = family.candidates();
    let truth = family.true_index();
    let (operators, gamma) = candidate_operators(candidates)?;
    let plans = OptimalPlans::compute(candidates, settings.budget)?;
    let optimal_value = evaluate_j(family.true_model(), plans.policy(truth));
    let mut policy = Policy::constant(sizes, 0)?;
    let mut dataset = TripleDataset::new(sizes);
    let mut rows = Vec::with_capacity(settings.iterations);
    let mut solver_trace = Vec::new();
    let mut previous: Option<usize> = None;
    for k in 1..=settings.iterations {
        collect_iteration(family, &policy, &mut dataset, k, settings.seed)?;
        let projections = project_dataset(&dataset, ctx)?;
        let losses = operators
            .par_iter()
            .map(|ops| loss_from_projections(ops, &sizes, &projections).map(|r| r.value))
            .collect::<Result<Vec<_>>>()?;
        let set = confidence_set_or_best(&losses, settings.beta, k)?;
        let chosen = match &settings.solver {
            SolverChoice::Exact => optimistic_plan(&plans, &set.members)?.0,
            SolverChoice::Stochastic(opts) => {
                let start = previous.unwrap_or_else(|| argmin(&losses));
                let (index, trace) = stochastic_choice(candidates, start, &dataset, ctx, settings, opts, k)?;
                solver_trace.extend(trace.into_iter().map(|row| (k, row)));
                index
            }
        };
        previous = Some(chosen);
        let next = plans.policy(chosen).clone();
        let suboptimality = optimal_value - evaluate_j(family.true_model(), &next);
        let true_in_set = set.members.contains(&truth);
        let (optimism_holds, decomposition_bound, decomposition_holds) = if true_in_set {
            let profile = error_profile(
                &candidates[chosen],
                family.true_model(),
                &next,
                &operators[chosen],
                &operators[truth],
            )?;
            let bound: f64 = profile.iter().map(|e| e.expected).sum();
            (
                Some(plans.value(chosen) >= optimal_value - 1e-9),
                Some(bound),
                Some(suboptimality <= bound + 1e-8),
            )
        } else {
            (None, None, None)
        };
        rows.push(IterationRecord {
            iteration: k,
            theta_index: chosen,
            policy_id: next.id(),
            set_size: set.members.len(),
            fallback: set.fallback,
            true_in_set,
            loss_true: losses[truth],
            loss_chosen: losses[chosen],
            optimistic_value: plans.value(chosen),
            suboptimality,
            optimism_holds,
            decomposition_bound,
            decomposition_holds,
        });
        policy = next;
    }
    Ok(RunRecord {
        beta: settings.beta,
        iterations: settings.iterations,
        seed: settings.seed,
        gamma,
        alpha: ctx.alpha(),
        d_s: sizes.states,
        d_o: ctx.dim(),
        true_index: truth,
        optimal_value,
        episodes: dataset.total(),
        rows,
        solver_trace,
        dataset,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

fn stochastic_choice(
    candidates: &[TabularModel],
    start: usize,
    dataset: &TripleDataset,
    ctx: &RkhsContext,
    settings: &RunSettings,
    opts: &StochasticSettings,
    iteration: usize,
) -> Result<(usize, Vec<TraceRow>)> {
    let family = SmoothFamily::full(&candidates[start])?;
    let problem = MinimaxProblem::new(&family, dataset, ctx, settings.beta, settings.budget)?;
    let mut dual = DualState::new(problem.tuples().len());
    dual.eta_theta = opts.eta;
    dual.eta_lambda = opts.eta;
    dual.eta_w = opts.eta;
    dual.n_dual = opts.n_dual;
    dual.n_primal = opts.n_primal;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    rng.set_stream(u64::MAX - iteration as u64);
    let theta0 = SmoothFamily::logits_of(&candidates[start]);
    let outcome = solve_minimax(&problem, &theta0, &dual, opts.steps, opts.batch, &mut rng)?;
    let index = nearest_candidate(&family.model(&outcome.theta)?, candidates)?;
    Ok((index, outcome.trace))
}
