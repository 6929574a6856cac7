//! Interventional datasets, the truncated operator and its adjoint, the
//! adversarial loss with its exact maximizer, confidence sets and the
//! state-dependent estimation error.

use crate::bellman::{apply_b, compute_values, BTensor, BTensorSet, HistoryFunction, HistorySpace};
use crate::error::{Error, Result};
use crate::model::{policy_branches, FullHistory, ObsTriple, Policy, Sizes, TabularModel, TripleSpace};
use crate::rkhs::RkhsContext;

/// Data-collection tuple `(h, a, a')`: `a_{h-1} = first`, `a_h = second`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tuple {
    pub step: usize,
    pub first: usize,
    pub second: usize,
}

impl std::fmt::Display for Tuple {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}:{}", self.step, self.first, self.second)
    }
}

/// All tuples with `2 <= h <= H`, ordered by `h`, then `a`, then `a'`.
pub fn tuples(sizes: &Sizes) -> Vec<Tuple> {
    let a = sizes.actions;
    (2..=sizes.horizon)
        .flat_map(|step| {
            (0..a).flat_map(move |first| (0..a).map(move |second| Tuple { step, first, second }))
        })
        .collect()
}

/// Interventional triples for every tuple.
#[derive(Clone, Debug, PartialEq)]
pub struct TripleDataset {
    sizes: Sizes,
    entries: Vec<Vec<ObsTriple>>,
}

impl TripleDataset {
    pub fn new(sizes: Sizes) -> Self {
        Self {
            sizes,
            entries: vec![Vec::new(); tuples(&sizes).len()],
        }
    }

    pub fn sizes(&self) -> Sizes {
        self.sizes
    }

    pub fn tuples(&self) -> Vec<Tuple> {
        tuples(&self.sizes)
    }

    pub fn tuple_index(&self, t: Tuple) -> Result<usize> {
        let a = self.sizes.actions;
        if t.step < 2 || t.step > self.sizes.horizon {
            return Err(Error::StepOutOfRange {
                step: t.step,
                min: 2,
                max: self.sizes.horizon,
            });
        }
        if t.first >= a || t.second >= a {
            return Err(Error::IndexOutOfRange {
                what: "action",
                index: t.first.max(t.second),
                bound: a,
            });
        }
        Ok(((t.step - 2) * a + t.first) * a + t.second)
    }

    pub fn push(&mut self, t: Tuple, triple: ObsTriple) -> Result<()> {
        let idx = self.tuple_index(t)?;
        let o = self.sizes.observations;
        let terminal = t.step == self.sizes.horizon;
        let third_ok = if terminal {
            triple[2] == TripleSpace::END || triple[2] == o
        } else {
            triple[2] < o
        };
        if triple[0] >= o || triple[1] >= o || !third_ok {
            return Err(Error::IndexOutOfRange {
                what: "observation triple",
                index: *triple.iter().max().unwrap_or(&0),
                bound: o,
            });
        }
        let mut stored = triple;
        if terminal {
            stored[2] = TripleSpace::END;
        }
        self.entries[idx].push(stored);
        Ok(())
    }

    pub fn entry(&self, t: Tuple) -> Result<&[ObsTriple]> {
        Ok(&self.entries[self.tuple_index(t)?])
    }

    /// Smallest per-tuple count.
    pub fn k(&self) -> usize {
        self.entries.iter().map(Vec::len).min().unwrap_or(0)
    }

    pub fn is_balanced(&self) -> bool {
        self.entries.iter().all(|e| e.len() == self.entries[0].len())
    }

    pub fn total(&self) -> usize {
        self.entries.iter().map(Vec::len).sum()
    }
}

/// Normalized counts of the triples recorded for `t`.
pub fn empirical_distribution(dataset: &TripleDataset, t: Tuple) -> Result<Vec<f64>> {
    let entry = dataset.entry(t)?;
    if entry.is_empty() {
        return Err(Error::EmptyDataset {
            step: t.step,
            first: t.first,
            second: t.second,
        });
    }
    let space = TripleSpace::new(dataset.sizes.observations);
    let mut law = vec![0.0; space.len()];
    let weight = 1.0 / entry.len() as f64;
    for &triple in entry {
        law[space.index(triple)] += weight;
    }
    Ok(law)
}

fn check_operator(tensors: &BTensorSet, step: usize, second: usize) -> Result<&BTensor> {
    let h = tensors.horizon();
    if step < 2 || step > h {
        return Err(Error::StepOutOfRange { step, min: 2, max: h });
    }
    let a = tensors.actions();
    if second >= a {
        return Err(Error::IndexOutOfRange {
            what: "action",
            index: second,
            bound: a,
        });
    }
    Ok(tensors.get(step, second))
}

/// `(𝔽f)(o, o', ·) = Σ_{õ, õ'} f(o, õ, õ') ℬ_{h,a'}(o', õ, õ')`, constant in the last slot.
pub fn apply_f(tensors: &BTensorSet, step: usize, second: usize, f: &[f64]) -> Result<Vec<f64>> {
    let tensor = check_operator(tensors, step, second)?;
    let space = tensor.space();
    let o = space.observations();
    let last = space.last_slot();
    let width = o * last;
    let b = tensor.values();
    let mut out = vec![0.0; space.len()];
    for prev in 0..o {
        let f_row = &f[prev * width..(prev + 1) * width];
        for cur in 0..o {
            let b_row = &b[cur * width..(cur + 1) * width];
            let v: f64 = f_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            out[prev * width + cur * last..prev * width + (cur + 1) * last].fill(v);
        }
    }
    Ok(out)
}

/// Adjoint of [`apply_f`]: `(𝕍ρ)(o, õ, õ') = Σ_{o'} (Σ_{o''} ρ(o, o', o'')) ℬ_{h,a'}(o', õ, õ')`.
pub fn apply_f_adjoint(tensors: &BTensorSet, step: usize, second: usize, rho: &[f64]) -> Result<Vec<f64>> {
    let tensor = check_operator(tensors, step, second)?;
    let space = tensor.space();
    let o = space.observations();
    let last = space.last_slot();
    let width = o * last;
    let b = tensor.values();
    let mut out = vec![0.0; space.len()];
    for prev in 0..o {
        for cur in 0..o {
            let start = prev * width + cur * last;
            let pair: f64 = rho[start..start + last].iter().sum();
            if pair == 0.0 {
                continue;
            }
            let b_row = &b[cur * width..(cur + 1) * width];
            for (x, y) in out[prev * width..(prev + 1) * width].iter_mut().zip(b_row) {
                *x += pair * y;
            }
        }
    }
    Ok(out)
}

/// Residual of one tuple: `c = 𝕍ρ̂ − ρ̂`.
#[derive(Clone, Debug, PartialEq)]
pub struct TupleLoss {
    pub tuple: Tuple,
    pub residual: Vec<f64>,
    /// `‖c‖₁`.
    pub value: f64,
}

impl TupleLoss {
    /// The discriminator `sign(c)` that attains the supremum.
    pub fn maximizer(&self) -> Vec<f64> {
        self.residual
            .iter()
            .map(|&c| if c > 0.0 { 1.0 } else if c < 0.0 { -1.0 } else { 0.0 })
            .collect()
    }
}

/// Per-tuple residuals and the overall loss `L(θ) = max_t ‖c_t‖₁`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub tuples: Vec<TupleLoss>,
    pub value: f64,
    pub argmax: Vec<Tuple>,
}

/// Projects the empirical law of every tuple; shared by all candidates.
pub fn project_dataset(dataset: &TripleDataset, ctx: &RkhsContext) -> Result<Vec<Vec<f64>>> {
    dataset
        .tuples()
        .into_iter()
        .map(|t| Ok(ctx.project(&empirical_distribution(dataset, t)?)))
        .collect()
}

/// Loss of one candidate from precomputed projections (ordered as [`tuples`]).
pub fn loss_from_projections(tensors: &BTensorSet, sizes: &Sizes, projections: &[Vec<f64>]) -> Result<LossReport> {
    let mut report = LossReport {
        tuples: Vec::with_capacity(projections.len()),
        value: 0.0,
        argmax: Vec::new(),
    };
    for (t, rho_hat) in tuples(sizes).into_iter().zip(projections) {
        let pushed = apply_f_adjoint(tensors, t.step, t.second, rho_hat)?;
        let residual: Vec<f64> = pushed.iter().zip(rho_hat).map(|(v, r)| v - r).collect();
        let value = residual.iter().map(|c| c.abs()).sum();
        report.tuples.push(TupleLoss { tuple: t, residual, value });
    }
    report.value = report.tuples.iter().map(|t| t.value).fold(0.0, f64::max);
    report.argmax = report
        .tuples
        .iter()
        .filter(|t| t.value == report.value)
        .map(|t| t.tuple)
        .collect();
    Ok(report)
}

/// `L(θ) = max_{h,a,a'} sup_{‖f‖∞ ≤ 1} E_{D̂}[(𝕊𝔽f − 𝕊f)(X)]`, solved in closed form.
pub fn compute_loss(tensors: &BTensorSet, dataset: &TripleDataset, ctx: &RkhsContext) -> Result<LossReport> {
    let projections = project_dataset(dataset, ctx)?;
    loss_from_projections(tensors, &dataset.sizes(), &projections)
}

/// `E_{D̂}[(𝕊𝔽f − 𝕊f)(X)]` evaluated literally, for an arbitrary discriminator.
pub fn discriminator_value(
    tensors: &BTensorSet,
    ctx: &RkhsContext,
    empirical: &[f64],
    t: Tuple,
    f: &[f64],
) -> Result<f64> {
    let ff = apply_f(tensors, t.step, t.second, f)?;
    let diff: Vec<f64> = ff.iter().zip(f).map(|(a, b)| a - b).collect();
    let smoothed = ctx.smooth(&diff);
    Ok(smoothed.iter().zip(empirical).map(|(s, p)| s * p).sum())
}

/// `{θ : L(θ) ≤ β / √k}`; may be empty.
pub fn confidence_set(losses: &[f64], beta: f64, k: usize) -> Vec<usize> {
    let radius = beta / (k.max(1) as f64).sqrt();
    losses
        .iter()
        .enumerate()
        .filter(|(_, &l)| l <= radius)
        .map(|(i, _)| i)
        .collect()
}

/// Confidence set that falls back to the loss minimizer when empty.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfidenceSet {
    pub members: Vec<usize>,
    pub fallback: bool,
}

pub fn confidence_set_or_best(losses: &[f64], beta: f64, k: usize) -> Result<ConfidenceSet> {
    let members = confidence_set(losses, beta, k);
    if !members.is_empty() {
        return Ok(ConfidenceSet {
            members,
            fallback: false,
        });
    }
    let best = losses
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .ok_or(Error::EmptyConfidenceSet)?;
    Ok(ConfidenceSet {
        members: vec![best],
        fallback: true,
    })
}

/// State-dependent error `e_h(s_{h-1})`; entries with zero mass are 0 and flagged.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorVector {
    pub step: usize,
    pub values: Vec<f64>,
    pub zero_mass: Vec<bool>,
    /// `E[e_h(s_{h-1})]` under the true model and the policy.
    pub expected: f64,
}

/// `e_h(s) = |E_{θ*,π}[(𝔹^{θ̂}_h − 𝔹^{θ*}_h) V^{θ̂}_{h+1} | s_{h-1} = s]|`.
///
/// At `h = 1` there is no previous state and every entry holds the
/// unconditional value.
pub fn compute_error_e(
    theta_hat: &TabularModel,
    theta_star: &TabularModel,
    policy: &Policy,
    tensors_hat: &BTensorSet,
    tensors_star: &BTensorSet,
    step: usize,
) -> Result<ErrorVector> {
    if theta_hat.sizes() != theta_star.sizes() {
        return Err(Error::ShapeMismatch("models have different sizes".into()));
    }
    theta_star.check_step(step, 1, theta_star.horizon())?;
    let values = compute_values(theta_hat, policy, tensors_hat);
    error_from_values(theta_star, policy, &values, tensors_hat, tensors_star, step)
}

/// [`compute_error_e`] for every step, sharing one value recursion.
pub fn error_profile(
    theta_hat: &TabularModel,
    theta_star: &TabularModel,
    policy: &Policy,
    tensors_hat: &BTensorSet,
    tensors_star: &BTensorSet,
) -> Result<Vec<ErrorVector>> {
    if theta_hat.sizes() != theta_star.sizes() {
        return Err(Error::ShapeMismatch("models have different sizes".into()));
    }
    let values = compute_values(theta_hat, policy, tensors_hat);
    (1..=theta_star.horizon())
        .map(|step| error_from_values(theta_star, policy, &values, tensors_hat, tensors_star, step))
        .collect()
}

fn error_from_values(
    theta_star: &TabularModel,
    policy: &Policy,
    values: &[HistoryFunction],
    tensors_hat: &BTensorSet,
    tensors_star: &BTensorSet,
    step: usize,
) -> Result<ErrorVector> {
    let next = &values[step];
    let hat = apply_b(theta_star, policy, tensors_hat, step, next)?;
    let star = apply_b(theta_star, policy, tensors_star, step, next)?;
    let gap: Vec<f64> = hat.values().iter().zip(star.values()).map(|(x, y)| x - y).collect();
    let s = theta_star.states();
    let o = theta_star.observations();
    let a = theta_star.actions();
    if step == 1 {
        let law = theta_star.observe(1, theta_star.initial());
        let v = law.iter().zip(&gap).map(|(p, g)| p * g).sum::<f64>().abs();
        return Ok(ErrorVector {
            step,
            values: vec![v; s],
            zero_mass: vec![false; s],
            expected: v,
        });
    }
    let space = HistorySpace::new(theta_star.sizes());
    let mut num = vec![0.0; s];
    let mut den = vec![0.0; s];
    for branch in policy_branches(theta_star, policy, step - 1) {
        let action = policy.action(&branch.observations);
        let history = FullHistory::new(branch.observations.clone(), branch.actions.clone())?;
        let base = space.index(&history) * a + action;
        for (state, &b) in branch.belief.iter().enumerate() {
            if b <= 0.0 {
                continue;
            }
            let ahead = theta_star.observe(step, theta_star.transition_column(step - 1, state, action));
            den[state] += b;
            num[state] += b * (0..o).map(|obs| ahead[obs] * gap[base * o + obs]).sum::<f64>();
        }
    }
    let zero_mass: Vec<bool> = den.iter().map(|&d| d <= 0.0).collect();
    let values: Vec<f64> = num
        .iter()
        .zip(&den)
        .map(|(n, &d)| if d > 0.0 { (n / d).abs() } else { 0.0 })
        .collect();
    let expected = num.iter().map(|n| n.abs()).sum();
    Ok(ErrorVector {
        step,
        values,
        zero_mass,
        expected,
    })
}
