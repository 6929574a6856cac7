//! Lagrangian relaxation of the confidence constraint, solved by stochastic
//! primal-dual gradient steps.
//!
//! The model is a [`SmoothFamily`]: every transition and emission column is a
//! softmax of logits that depend linearly on a parameter vector. The
//! discriminators are `f^w_t(x) = tanh(w_{t,x})`, one free weight per tuple and
//! triple, so `‖f^w‖∞ < 1` for every `w`.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::bellman::{evaluate_j, BTensorSet};
use crate::error::{Error, Result};
use crate::estimation::{apply_f, empirical_distribution, loss_from_projections, tuples, TripleDataset, Tuple};
use crate::linear::tabular_bridge;
use crate::model::{sample_categorical, Policy, Sizes, TabularModel, TripleSpace};
use crate::planner::plan_exact_with_budget;
use crate::rkhs::RkhsContext;

/// Logits are floored here so that zero probabilities stay finite.
pub const LOGIT_FLOOR: f64 = -60.0;

fn logit(p: f64) -> f64 {
    if p > 0.0 {
        p.ln().max(LOGIT_FLOOR)
    } else {
        LOGIT_FLOOR
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// Differentiable parametrization `θ ↦ model` with
/// `logits = base + D θ` and a softmax per transition or emission column.
///
/// Logits follow the flat layout of [`TabularModel::from_raw`]: all transition
/// steps first, then all emission steps. The initial distribution and the
/// rewards are fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothFamily {
    sizes: Sizes,
    initial: Vec<f64>,
    rewards: Vec<f64>,
    base: DVector<f64>,
    directions: DMatrix<f64>,
}

impl SmoothFamily {
    pub fn new(anchor: &TabularModel, base: Vec<f64>, directions: DMatrix<f64>) -> Result<Self> {
        let n = Self::logit_count(&anchor.sizes());
        if base.len() != n || directions.nrows() != n {
            return Err(Error::ShapeMismatch(format!("a smooth family needs {n} logits")));
        }
        if base.iter().chain(directions.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Domain("logits and directions must be finite".into()));
        }
        Ok(Self {
            sizes: anchor.sizes(),
            initial: anchor.initial().to_vec(),
            rewards: anchor.raw_rewards().to_vec(),
            base: DVector::from_vec(base),
            directions,
        })
    }

    /// One parameter per logit; `θ` is the logit vector itself.
    pub fn full(anchor: &TabularModel) -> Result<Self> {
        let n = Self::logit_count(&anchor.sizes());
        Self::new(anchor, vec![0.0; n], DMatrix::identity(n, n))
    }

    /// One-parameter family with `θ = 0` at `from` and `θ = 1` at `to`.
    pub fn interpolating(from: &TabularModel, to: &TabularModel) -> Result<Self> {
        if from.sizes() != to.sizes() {
            return Err(Error::ShapeMismatch("endpoints have different sizes".into()));
        }
        let a = Self::logits_of(from);
        let b = Self::logits_of(to);
        let direction: Vec<f64> = b.iter().zip(&a).map(|(x, y)| x - y).collect();
        let n = a.len();
        Self::new(from, a, DMatrix::from_column_slice(n, 1, &direction))
    }

    pub fn logit_count(sizes: &Sizes) -> usize {
        let (s, a, o, h) = (sizes.states, sizes.actions, sizes.observations, sizes.horizon);
        (h - 1) * a * s * s + h * s * o
    }

    /// Floored log-probabilities of a model in the family's layout.
    pub fn logits_of(model: &TabularModel) -> Vec<f64> {
        model
            .raw_transitions()
            .iter()
            .chain(model.raw_emissions())
            .flatten()
            .map(|&p| logit(p))
            .collect()
    }

    pub fn sizes(&self) -> Sizes {
        self.sizes
    }

    pub fn dim(&self) -> usize {
        self.directions.ncols()
    }

    fn transition_offset(&self, step: usize) -> usize {
        let s = self.sizes.states;
        (step - 1) * self.sizes.actions * s * s
    }

    fn emission_offset(&self, step: usize) -> usize {
        let s = self.sizes.states;
        (self.sizes.horizon - 1) * self.sizes.actions * s * s + (step - 1) * s * self.sizes.observations
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "parameter has length {}, family dimension is {}",
                theta.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn logits(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        Ok((&self.base + &self.directions * DVector::from_column_slice(theta)).iter().copied().collect())
    }

    fn column_width(&self, index: usize) -> usize {
        if index < self.emission_offset(1) {
            self.sizes.states
        } else {
            self.sizes.observations
        }
    }

    fn probabilities(&self, logits: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(logits.len());
        let mut i = 0;
        while i < logits.len() {
            let w = self.column_width(i);
            out.extend(softmax(&logits[i..i + w]));
            i += w;
        }
        out
    }

    fn split(&self, flat: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let s = self.sizes.states;
        let h = self.sizes.horizon;
        let t_len = self.sizes.actions * s * s;
        let e_len = s * self.sizes.observations;
        let transitions = (0..h - 1).map(|i| flat[i * t_len..(i + 1) * t_len].to_vec()).collect();
        let start = (h - 1) * t_len;
        let emissions = (0..h)
            .map(|i| flat[start + i * e_len..start + (i + 1) * e_len].to_vec())
            .collect();
        (transitions, emissions)
    }

    pub fn model(&self, theta: &[f64]) -> Result<TabularModel> {
        let probs = self.probabilities(&self.logits(theta)?);
        let (transitions, emissions) = self.split(&probs);
        TabularModel::from_raw(self.sizes, self.initial.clone(), transitions, emissions, self.rewards.clone())
    }

    /// Derivative of every transition and emission probability with respect
    /// to `θ_k`, in the raw layouts.
    pub fn tangent(&self, theta: &[f64], k: usize) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let probs = self.probabilities(&self.logits(theta)?);
        let dl = self.directions.column(k);
        let mut out = vec![0.0; probs.len()];
        let mut i = 0;
        while i < probs.len() {
            let w = self.column_width(i);
            let mean: f64 = (i..i + w).map(|l| probs[l] * dl[l]).sum();
            for l in i..i + w {
                out[l] = probs[l] * (dl[l] - mean);
            }
            i += w;
        }
        Ok(self.split(&out))
    }

    fn column_score(&self, model_probs: &[f64], start: usize, width: usize, hit: usize) -> Vec<f64> {
        (0..self.dim())
            .map(|k| {
                let d = self.directions.column(k);
                let mean: f64 = (0..width).map(|l| model_probs[l] * d[start + l]).sum();
                d[start + hit] - mean
            })
            .collect()
    }

    /// `∇_θ ln T_step(next | state, action)` at the model `current = model(θ)`.
    pub fn score_transition(&self, current: &TabularModel, step: usize, state: usize, action: usize, next: usize) -> Vec<f64> {
        let s = self.sizes.states;
        let start = self.transition_offset(step) + (action * s + state) * s;
        self.column_score(current.transition_column(step, state, action), start, s, next)
    }

    /// `∇_θ ln E_step(obs | state)` at the model `current = model(θ)`.
    pub fn score_emission(&self, current: &TabularModel, step: usize, state: usize, obs: usize) -> Vec<f64> {
        let o = self.sizes.observations;
        let start = self.emission_offset(step) + state * o;
        self.column_score(current.emission_column(step, state), start, o, obs)
    }
}

/// `ℬ_{h,a}` of a tabular bridge (one-hot state basis, delta auxiliary kernel)
/// and its directional derivative along `(dT, dE)`, both over the triple space.
pub fn b_tensor_with_derivative(
    model: &TabularModel,
    d_transitions: &[Vec<f64>],
    d_emissions: &[Vec<f64>],
    step: usize,
    action: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (s, o, h) = (model.states(), model.observations(), model.horizon());
    let space = TripleSpace::new(o);
    let last = space.last_slot();
    let e = model.emission_matrix(step);
    let de = DMatrix::from_fn(o, s, |obs, state| d_emissions[step - 1][state * o + obs]);
    let lambda = e.transpose() * &e;
    let lambda_inv = lambda
        .clone()
        .try_inverse()
        .ok_or(Error::SingularLambda {
            step,
            min_eigenvalue: lambda.symmetric_eigenvalues().min(),
        })?;
    let z = &lambda_inv * e.transpose();
    let d_lambda = de.transpose() * &e + e.transpose() * &de;
    let dz = -(&lambda_inv * d_lambda * &lambda_inv) * e.transpose() + &lambda_inv * de.transpose();
    // next-observation law per state and its derivative, over O + 1 slots
    let mut next = DMatrix::<f64>::zeros(s, last);
    let mut d_next = DMatrix::<f64>::zeros(s, last);
    for state in 0..s {
        if step < h {
            for after in 0..s {
                let t = model.transition(step, after, state, action);
                let dt = d_transitions[step - 1][(action * s + state) * s + after];
                for obs in 0..o {
                    let em = model.emission(step + 1, obs, after);
                    let dem = d_emissions[step][after * o + obs];
                    next[(state, obs)] += t * em;
                    d_next[(state, obs)] += dt * em + t * dem;
                }
            }
        } else {
            next[(state, o)] = 1.0;
        }
    }
    let mut b = vec![0.0; space.len()];
    let mut db = vec![0.0; space.len()];
    for obs in 0..o {
        for state in 0..s {
            let (zv, dzv) = (z[(state, obs)], dz[(state, obs)]);
            for cur in 0..o {
                let (ev, dev) = (e[(cur, state)], de[(cur, state)]);
                for after in 0..last {
                    let idx = (obs * o + cur) * last + after;
                    let j = ev * next[(state, after)];
                    let dj = dev * next[(state, after)] + ev * d_next[(state, after)];
                    b[idx] += zv * j;
                    db[idx] += dzv * j + zv * dj;
                }
            }
        }
    }
    Ok((b, db))
}

/// Discriminators `f^w_t(x) = tanh(w[t * n + x])` over `n` triples per tuple.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiscriminatorFamily {
    pub tuples: usize,
    pub points: usize,
}

impl DiscriminatorFamily {
    pub fn for_sizes(sizes: &Sizes) -> Self {
        Self {
            tuples: tuples(sizes).len(),
            points: TripleSpace::new(sizes.observations).len(),
        }
    }

    pub fn dim(&self) -> usize {
        self.tuples * self.points
    }

    pub fn zeros(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    /// `f^w_t` as a dense function over the triple space.
    pub fn function(&self, w: &[f64], t: usize) -> Vec<f64> {
        w[t * self.points..(t + 1) * self.points].iter().map(|x| x.tanh()).collect()
    }

    /// `∂f^w_t(x) / ∂w_{t,x}`; every other partial is zero.
    pub fn slope(&self, w: &[f64], t: usize, x: usize) -> f64 {
        let v = w[t * self.points + x].tanh();
        1.0 - v * v
    }
}

/// Dual variables and step-size schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct DualState {
    pub lambda: Vec<f64>,
    pub eta_theta: f64,
    pub eta_lambda: f64,
    pub eta_w: f64,
    pub n_dual: usize,
    pub n_primal: usize,
}

impl DualState {
    /// Unit multipliers, all step sizes `1e-2`, 50 dual steps, 1 primal step.
    ///
    /// With `λ = 0` and `w = 0` both dual gradients vanish when `β = 0`, so the
    /// multipliers start at one.
    pub fn new(tuples: usize) -> Self {
        Self {
            lambda: vec![1.0; tuples],
            eta_theta: 1e-2,
            eta_lambda: 1e-2,
            eta_w: 1e-2,
            n_dual: 50,
            n_primal: 1,
        }
    }

    fn project(&mut self) {
        for l in &mut self.lambda {
            if !(*l > 0.0) {
                *l = 0.0;
            }
        }
    }
}

/// Quantities at a fixed parameter value shared by every estimator draw.
#[derive(Clone, Debug)]
pub struct Point {
    pub theta: Vec<f64>,
    pub model: TabularModel,
    pub policy: Policy,
    /// `J(θ, π̂(θ))`.
    pub value: f64,
    pub tensors: BTensorSet,
    /// `d_tensors[k][(h - 1) * A + a]`, derivative of `ℬ_{h,a}` along `θ_k`.
    pub d_tensors: Vec<Vec<Vec<f64>>>,
}

/// The saddle-point problem for one dataset.
#[derive(Clone, Debug)]
pub struct MinimaxProblem<'a> {
    pub family: &'a SmoothFamily,
    pub dataset: &'a TripleDataset,
    pub ctx: &'a RkhsContext,
    pub beta: f64,
    pub budget: u128,
    pub discriminators: DiscriminatorFamily,
    tuples: Vec<Tuple>,
    empirical: Vec<Vec<f64>>,
    projections: Vec<Vec<f64>>,
    samplers: Vec<WeightedIndex<f64>>,
    pairs: Vec<(usize, usize, f64)>,
}

impl<'a> MinimaxProblem<'a> {
    pub fn new(
        family: &'a SmoothFamily,
        dataset: &'a TripleDataset,
        ctx: &'a RkhsContext,
        beta: f64,
        budget: u128,
    ) -> Result<Self> {
        if dataset.sizes() != family.sizes() {
            return Err(Error::ShapeMismatch("dataset and family have different sizes".into()));
        }
        let tuples = dataset.tuples();
        let empirical = tuples
            .iter()
            .map(|&t| empirical_distribution(dataset, t))
            .collect::<Result<Vec<_>>>()?;
        let projections = empirical.iter().map(|p| ctx.project(p)).collect();
        let phi = &ctx.bases.phi;
        let samplers = (0..phi.ncols())
            .map(|j| {
                WeightedIndex::new(phi.column(j).iter().copied())
                    .map_err(|_| Error::Domain(format!("basis column {j} is not a distribution")))
            })
            .collect::<Result<Vec<_>>>()?;
        let g = &ctx.gram.inverse;
        let mut pairs = Vec::new();
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                if g[(i, j)] != 0.0 {
                    pairs.push((i, j, g[(i, j)]));
                }
            }
        }
        Ok(Self {
            family,
            dataset,
            ctx,
            beta,
            budget,
            discriminators: DiscriminatorFamily::for_sizes(&dataset.sizes()),
            tuples,
            empirical,
            projections,
            samplers,
            pairs,
        })
    }

    pub fn tuples(&self) -> &[Tuple] {
        &self.tuples
    }

    pub fn k(&self) -> usize {
        self.dataset.k()
    }

    fn radius(&self) -> f64 {
        self.beta / (self.k().max(1) as f64).sqrt()
    }

    /// Model, plan, tensors and tensor derivatives at `θ`.
    pub fn prepare(&self, theta: &[f64]) -> Result<Point> {
        let model = self.family.model(theta)?;
        let plan = plan_exact_with_budget(&model, self.budget)?;
        let tensors = BTensorSet::build(&model, &tabular_bridge(&model)?)?;
        let (h, a) = (model.horizon(), model.actions());
        let mut d_tensors = Vec::with_capacity(self.family.dim());
        for k in 0..self.family.dim() {
            let (dt, de) = self.family.tangent(theta, k)?;
            let mut per = Vec::with_capacity(h * a);
            for step in 1..=h {
                for action in 0..a {
                    per.push(b_tensor_with_derivative(&model, &dt, &de, step, action)?.1);
                }
            }
            d_tensors.push(per);
        }
        Ok(Point {
            theta: theta.to_vec(),
            value: plan.value,
            policy: plan.policy,
            model,
            tensors,
            d_tensors,
        })
    }

    /// `L̂^w_t(θ) = E_{D̂_t}[(𝕊𝔽f^w_t − 𝕊f^w_t)(X)]` for every tuple.
    pub fn constraint_values(&self, point: &Point, w: &[f64]) -> Result<Vec<f64>> {
        self.tuples
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let f = self.discriminators.function(w, i);
                let ff = apply_f(&point.tensors, t.step, t.second, &f)?;
                let diff: Vec<f64> = ff.iter().zip(&f).map(|(x, y)| x - y).collect();
                let smoothed = self.ctx.smooth(&diff);
                Ok(smoothed.iter().zip(&self.empirical[i]).map(|(s, p)| s * p).sum())
            })
            .collect()
    }

    /// `−J(θ, π̂(θ)) + Σ_t λ_t (L̂^w_t(θ) − β k^{-1/2})`.
    pub fn lagrangian(&self, theta: &[f64], lambda: &[f64], w: &[f64]) -> Result<f64> {
        let point = self.prepare(theta)?;
        self.lagrangian_at(&point, lambda, w)
    }

    pub fn lagrangian_at(&self, point: &Point, lambda: &[f64], w: &[f64]) -> Result<f64> {
        let radius = self.radius();
        let c = self.constraint_values(point, w)?;
        Ok(-point.value + lambda.iter().zip(&c).map(|(l, v)| l * (v - radius)).sum::<f64>())
    }

    /// Closed-form adversarial loss `L(θ)` at the point.
    pub fn loss_at(&self, point: &Point) -> Result<f64> {
        Ok(loss_from_projections(&point.tensors, &self.dataset.sizes(), &self.projections)?.value)
    }

    /// Exact `∂_λ 𝓛`.
    pub fn exact_grad_lambda(&self, point: &Point, w: &[f64]) -> Result<Vec<f64>> {
        let radius = self.radius();
        Ok(self.constraint_values(point, w)?.into_iter().map(|v| v - radius).collect())
    }

    /// Exact `∇_w 𝓛 = λ_t (𝕍ρ̂_t − ρ̂_t)(x) · (1 − tanh² w_{t,x})`.
    pub fn exact_grad_w(&self, point: &Point, lambda: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let report = loss_from_projections(&point.tensors, &self.dataset.sizes(), &self.projections)?;
        let n = self.discriminators.points;
        let mut g = vec![0.0; self.discriminators.dim()];
        for (i, tl) in report.tuples.iter().enumerate() {
            for x in 0..n {
                g[i * n + x] = lambda[i] * tl.residual[x] * self.discriminators.slope(w, i, x);
            }
        }
        Ok(g)
    }

    fn draw_datum<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> usize {
        let entry = self.dataset.entry(self.tuples[i]).expect("tuple of this dataset");
        self.ctx.space().index(entry[rng.random_range(0..entry.len())])
    }

    /// Visits one importance-sampled draw for every nonzero `G⁻¹[i, j]`:
    /// `(weight = G⁻¹[i,j] K(x, Y), Y', (o_{h-1}, Ỹ), (o_h, Ỹ), φ_ip(Ỹ))`.
    fn visit<R: Rng + ?Sized>(
        &self,
        tuple: Tuple,
        x: usize,
        rng: &mut R,
        mut visit: impl FnMut(f64, usize, usize, usize, f64),
    ) {
        let space = self.ctx.space();
        let o = space.observations();
        let terminal = tuple.step == self.dataset.sizes().horizon;
        let kernel = self.ctx.kernel.matrix();
        for &(i, j, g) in &self.pairs {
            let y = self.samplers[i].sample(rng);
            let y_prime = self.samplers[j].sample(rng);
            let [prev, cur, _] = space.triple(y_prime);
            let next = rng.random_range(0..o);
            let (after, prob) = if terminal {
                (TripleSpace::END, 1.0 / o as f64)
            } else {
                (rng.random_range(0..o), 1.0 / (o * o) as f64)
            };
            let weight = g * kernel[(x, y)];
            visit(
                weight,
                y_prime,
                space.index([prev, next, after]),
                space.index([cur, next, after]),
                prob,
            );
        }
    }

    /// One draw of `g_λ` at a prepared point.
    pub fn sample_grad_lambda<R: Rng + ?Sized>(&self, point: &Point, w: &[f64], batch: usize, rng: &mut R) -> Result<Vec<f64>> {
        check_batch(batch)?;
        let radius = self.radius();
        let mut out = Vec::with_capacity(self.tuples.len());
        for (i, &t) in self.tuples.iter().enumerate() {
            let f = self.discriminators.function(w, i);
            let b = point.tensors.get(t.step, t.second).values();
            let mut total = 0.0;
            for _ in 0..batch {
                let x = self.draw_datum(i, rng);
                self.visit(t, x, rng, |weight, y_prime, shifted, b_idx, prob| {
                    total += weight * (f[shifted] * b[b_idx] / prob - f[y_prime]);
                });
            }
            out.push(total / batch as f64 - radius);
        }
        Ok(out)
    }

    /// One draw of `g_w` at a prepared point.
    pub fn sample_grad_w<R: Rng + ?Sized>(
        &self,
        point: &Point,
        lambda: &[f64],
        w: &[f64],
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        check_batch(batch)?;
        let n = self.discriminators.points;
        let mut g = vec![0.0; self.discriminators.dim()];
        for (i, &t) in self.tuples.iter().enumerate() {
            if lambda[i] == 0.0 {
                continue;
            }
            let b = point.tensors.get(t.step, t.second).values();
            let scale = lambda[i] / batch as f64;
            for _ in 0..batch {
                let x = self.draw_datum(i, rng);
                self.visit(t, x, rng, |weight, y_prime, shifted, b_idx, prob| {
                    g[i * n + shifted] += scale * weight * self.discriminators.slope(w, i, shifted) * b[b_idx] / prob;
                    g[i * n + y_prime] -= scale * weight * self.discriminators.slope(w, i, y_prime);
                });
            }
        }
        Ok(g)
    }

    /// Score-function estimate of `∇_θ J(θ, π)` at fixed `π = π̂(θ)` from
    /// `batch` simulated episodes of the model at `θ`.
    pub fn sample_grad_j<R: Rng + ?Sized>(&self, point: &Point, batch: usize, rng: &mut R) -> Result<Vec<f64>> {
        check_batch(batch)?;
        let model = &point.model;
        let h = model.horizon();
        let mut g = vec![0.0; self.family.dim()];
        for _ in 0..batch {
            let mut state = sample_categorical(model.initial(), rng);
            let mut observations = Vec::with_capacity(h);
            let mut score = vec![0.0; self.family.dim()];
            let mut reward = 0.0;
            for step in 1..=h {
                let obs = sample_categorical(model.emission_column(step, state), rng);
                add(&mut score, &self.family.score_emission(model, step, state, obs));
                observations.push(obs);
                let action = point.policy.action(&observations);
                reward += model.reward(obs, action);
                if step < h {
                    let next = sample_categorical(model.transition_column(step, state, action), rng);
                    add(&mut score, &self.family.score_transition(model, step, state, action, next));
                    state = next;
                }
            }
            for (gk, sk) in g.iter_mut().zip(&score) {
                *gk += reward * sk / batch as f64;
            }
        }
        Ok(g)
    }

    /// Importance-sampled estimate of `Σ_t λ_t E_{D̂_t}[𝕊 (∇_θ 𝔽) f^w_t]`.
    pub fn sample_grad_constraint<R: Rng + ?Sized>(
        &self,
        point: &Point,
        lambda: &[f64],
        w: &[f64],
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        check_batch(batch)?;
        let a = self.dataset.sizes().actions;
        let mut g = vec![0.0; self.family.dim()];
        for (i, &t) in self.tuples.iter().enumerate() {
            if lambda[i] == 0.0 {
                continue;
            }
            let f = self.discriminators.function(w, i);
            let slot = (t.step - 1) * a + t.second;
            let scale = lambda[i] / batch as f64;
            for _ in 0..batch {
                let x = self.draw_datum(i, rng);
                self.visit(t, x, rng, |weight, _, shifted, b_idx, prob| {
                    let common = scale * weight * f[shifted] / prob;
                    for (k, gk) in g.iter_mut().enumerate() {
                        *gk += common * point.d_tensors[k][slot][b_idx];
                    }
                });
            }
        }
        Ok(g)
    }

    /// One draw of `g_θ = −∇̂J + Σ_t λ_t ∇̂_θ L̂^w_t` at a prepared point.
    pub fn sample_grad_theta<R: Rng + ?Sized>(
        &self,
        point: &Point,
        lambda: &[f64],
        w: &[f64],
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let j = self.sample_grad_j(point, batch, rng)?;
        let c = self.sample_grad_constraint(point, lambda, w, batch, rng)?;
        Ok(c.iter().zip(&j).map(|(ci, ji)| ci - ji).collect())
    }

    pub fn grad_lambda_hat<R: Rng + ?Sized>(&self, theta: &[f64], w: &[f64], batch: usize, rng: &mut R) -> Result<Vec<f64>> {
        self.sample_grad_lambda(&self.prepare(theta)?, w, batch, rng)
    }

    pub fn grad_w_hat<R: Rng + ?Sized>(
        &self,
        theta: &[f64],
        lambda: &[f64],
        w: &[f64],
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        self.sample_grad_w(&self.prepare(theta)?, lambda, w, batch, rng)
    }

    pub fn grad_theta_hat<R: Rng + ?Sized>(
        &self,
        theta: &[f64],
        lambda: &[f64],
        w: &[f64],
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        self.sample_grad_theta(&self.prepare(theta)?, lambda, w, batch, rng)
    }
}

fn add(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

fn check_batch(batch: usize) -> Result<()> {
    if batch == 0 {
        return Err(Error::Domain("batch must be nonempty".into()));
    }
    Ok(())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One row of the optimizer trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub lagrangian: f64,
    pub loss: f64,
    pub grad_theta_norm: f64,
    pub grad_lambda_norm: f64,
    pub grad_w_norm: f64,
    pub max_constraint_residual: f64,
    pub policy_id: String,
}

/// Final iterate of the primal-dual loop and its trace.
#[derive(Clone, Debug, PartialEq)]
pub struct MinimaxOutcome {
    pub theta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub w: Vec<f64>,
    pub initial_loss: f64,
    pub trace: Vec<TraceRow>,
    pub policy_switches: usize,
}

impl MinimaxOutcome {
    pub fn final_loss(&self) -> f64 {
        self.trace.last().map_or(self.initial_loss, |r| r.loss)
    }
}

/// `N_dual` ascent steps on `(λ, w)` with `λ` projected onto `λ ≥ 0`, then
/// `N_primal` descent steps on `θ`, repeated `iterations` times.
pub fn solve_minimax<R: Rng + ?Sized>(
    problem: &MinimaxProblem<'_>,
    theta0: &[f64],
    dual: &DualState,
    iterations: usize,
    batch: usize,
    rng: &mut R,
) -> Result<MinimaxOutcome> {
    if dual.lambda.len() != problem.tuples().len() {
        return Err(Error::ShapeMismatch("one multiplier per tuple is required".into()));
    }
    let mut dual = dual.clone();
    dual.project();
    let mut theta = theta0.to_vec();
    let mut w = problem.discriminators.zeros();
    let mut point = problem.prepare(&theta)?;
    let initial_loss = problem.loss_at(&point)?;
    let mut trace = Vec::with_capacity(iterations);
    let mut switches = 0;
    for step in 1..=iterations {
        let mut g_lambda = vec![0.0; dual.lambda.len()];
        let mut g_w = vec![0.0; w.len()];
        for _ in 0..dual.n_dual {
            g_lambda = problem.sample_grad_lambda(&point, &w, batch, rng)?;
            g_w = problem.sample_grad_w(&point, &dual.lambda, &w, batch, rng)?;
            for (l, g) in dual.lambda.iter_mut().zip(&g_lambda) {
                *l += dual.eta_lambda * g;
            }
            dual.project();
            for (x, g) in w.iter_mut().zip(&g_w) {
                *x += dual.eta_w * g;
            }
        }
        let mut g_theta = vec![0.0; theta.len()];
        for _ in 0..dual.n_primal {
            g_theta = problem.sample_grad_theta(&point, &dual.lambda, &w, batch, rng)?;
            let (next_theta, next_point) = primal_step(problem, &theta, &g_theta, dual.eta_theta)?;
            if next_point.policy.id() != point.policy.id() {
                switches += 1;
            }
            theta = next_theta;
            point = next_point;
        }
        let residuals = problem.exact_grad_lambda(&point, &w)?;
        trace.push(TraceRow {
            step,
            lagrangian: problem.lagrangian_at(&point, &dual.lambda, &w)?,
            loss: problem.loss_at(&point)?,
            grad_theta_norm: norm(&g_theta),
            grad_lambda_norm: norm(&g_lambda),
            grad_w_norm: norm(&g_w),
            max_constraint_residual: residuals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            policy_id: point.policy.id(),
        });
    }
    Ok(MinimaxOutcome {
        theta,
        lambda: dual.lambda,
        w,
        initial_loss,
        trace,
        policy_switches: switches,
    })
}

/// Steps against `g`, halving the step while the bridge of the new model is
/// singular.
fn primal_step(problem: &MinimaxProblem<'_>, theta: &[f64], g: &[f64], eta: f64) -> Result<(Vec<f64>, Point)> {
    let mut eta = eta;
    let mut last = None;
    for _ in 0..MAX_HALVINGS {
        let next: Vec<f64> = theta.iter().zip(g).map(|(t, g)| t - eta * g).collect();
        match problem.prepare(&next) {
            Ok(point) => return Ok((next, point)),
            Err(e @ (Error::SingularLambda { .. } | Error::LeftInverseFailed { .. })) => {
                last = Some(e);
                eta /= 2.0;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

const MAX_HALVINGS: usize = 30;

/// Candidate closest to `model` in total ℓ¹ distance over transitions and
/// emissions; lowest index on ties.
pub fn nearest_candidate(model: &TabularModel, candidates: &[TabularModel]) -> Result<usize> {
    let flat = |m: &TabularModel| -> Vec<f64> {
        m.raw_transitions().iter().chain(m.raw_emissions()).flatten().copied().collect()
    };
    let target = flat(model);
    candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let d: f64 = flat(c).iter().zip(&target).map(|(x, y)| (x - y).abs()).sum();
            (i, d)
        })
        .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
            Some((_, bd)) if bd <= d => best,
            _ => Some((i, d)),
        })
        .map(|(i, _)| i)
        .ok_or(Error::EmptyConfidenceSet)
}

/// Exact `J(θ, π)` along the family, for finite-difference checks.
pub fn value_at(family: &SmoothFamily, theta: &[f64], policy: &Policy) -> Result<f64> {
    Ok(evaluate_j(&family.model(theta)?, policy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::tabular_bridge;
    use crate::bellman::build_b_tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn base_model(seed: u64) -> TabularModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let m = TabularModel::random(Sizes::new(2, 2, 2, 3), &mut rng).unwrap();
            if tabular_bridge(&m).is_ok() {
                return m;
            }
        }
    }

    #[test]
    fn full_family_reproduces_anchor() {
        let m = base_model(0);
        let fam = SmoothFamily::full(&m).unwrap();
        let theta = SmoothFamily::logits_of(&m);
        let back = fam.model(&theta).unwrap();
        for (x, y) in back.raw_transitions().iter().flatten().zip(m.raw_transitions().iter().flatten()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_endpoints() {
        let a = base_model(1);
        let b = base_model(2).with_rewards(a.raw_rewards().to_vec()).unwrap();
        let b = TabularModel::from_raw(
            a.sizes(),
            a.initial().to_vec(),
            b.raw_transitions().to_vec(),
            b.raw_emissions().to_vec(),
            a.raw_rewards().to_vec(),
        )
        .unwrap();
        let fam = SmoothFamily::interpolating(&a, &b).unwrap();
        let end = fam.model(&[1.0]).unwrap();
        for (x, y) in end.raw_emissions().iter().flatten().zip(b.raw_emissions().iter().flatten()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn tangent_matches_finite_difference() {
        let m = base_model(3);
        let fam = SmoothFamily::full(&m).unwrap();
        let theta = SmoothFamily::logits_of(&m);
        let k = 5;
        let (dt, _) = fam.tangent(&theta, k).unwrap();
        let eps = 1e-6;
        let mut plus = theta.clone();
        plus[k] += eps;
        let mut minus = theta.clone();
        minus[k] -= eps;
        let (mp, mm) = (fam.model(&plus).unwrap(), fam.model(&minus).unwrap());
        for i in 0..dt[0].len() {
            let fd = (mp.raw_transitions()[0][i] - mm.raw_transitions()[0][i]) / (2.0 * eps);
            assert!((fd - dt[0][i]).abs() < 1e-8);
        }
    }

    #[test]
    fn b_tensor_derivative_matches_finite_difference() {
        let m = base_model(4);
        let fam = SmoothFamily::full(&m).unwrap();
        let theta = SmoothFamily::logits_of(&m);
        let eps = 1e-6;
        for k in [0, 9, 17, 20, 25] {
            let (dt, de) = fam.tangent(&theta, k).unwrap();
            for (step, action) in [(1, 0), (2, 1), (3, 0)] {
                let (b, db) = b_tensor_with_derivative(&m, &dt, &de, step, action).unwrap();
                let direct = build_b_tensor(&m, &tabular_bridge(&m).unwrap(), step, action).unwrap();
                for (x, y) in b.iter().zip(direct.values()) {
                    assert!((x - y).abs() < 1e-10);
                }
                let mut plus = theta.clone();
                plus[k] += eps;
                let mut minus = theta.clone();
                minus[k] -= eps;
                let bp = b_tensor_with_derivative(&fam.model(&plus).unwrap(), &dt, &de, step, action).unwrap().0;
                let bm = b_tensor_with_derivative(&fam.model(&minus).unwrap(), &dt, &de, step, action).unwrap().0;
                for i in 0..b.len() {
                    let fd = (bp[i] - bm[i]) / (2.0 * eps);
                    assert!((fd - db[i]).abs() < 1e-6, "k={k} step={step} i={i}: {fd} vs {}", db[i]);
                }
            }
        }
    }

    #[test]
    fn discriminators_are_bounded() {
        let d = DiscriminatorFamily { tuples: 2, points: 3 };
        let w = vec![-1e6, 0.0, 3.0, 40.0, -0.5, 1e300];
        for t in 0..2 {
            assert!(d.function(&w, t).iter().all(|x| x.abs() <= 1.0));
        }
    }

    #[test]
    fn nearest_candidate_ties_go_low() {
        let m = base_model(5);
        assert_eq!(nearest_candidate(&m, &[m.clone(), m.clone()]).unwrap(), 0);
    }
}
