//! Bases, the observation operator and the bridge (left inverse of the
//! observation operator on the span of the state basis).

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{LinearKernelModel, TabularModel, TripleSpace};

/// Tolerance under which basis columns are considered duplicates (ℓ¹).
pub const DEDUP_TOL: f64 = 1e-12;
/// Smallest admissible eigenvalue of the auxiliary Gram matrix.
pub const LAMBDA_MIN: f64 = 1e-10;
/// Tolerance of the left-inverse postcondition.
pub const LEFT_INVERSE_TOL: f64 = 1e-9;

/// State basis `ψ`, an `S x d_s` matrix of probability columns.
#[derive(Clone, Debug, PartialEq)]
pub struct StateBases {
    pub psi: DMatrix<f64>,
}

impl StateBases {
    pub fn dim(&self) -> usize {
        self.psi.ncols()
    }

    /// One-hot basis of size `S`.
    pub fn one_hot(states: usize) -> Self {
        Self {
            psi: DMatrix::identity(states, states),
        }
    }

    /// Greedy subset of columns that is linearly independent and spans the
    /// same space. Useful when the product construction yields more than `S`
    /// columns, in which case the auxiliary Gram matrix is necessarily singular.
    pub fn independent_subset(&self) -> Self {
        let mut kept: Vec<usize> = Vec::new();
        for j in 0..self.psi.ncols() {
            let mut trial = kept.clone();
            trial.push(j);
            let sub = self.psi.select_columns(&trial);
            if sub.rank(1e-9) == trial.len() {
                kept = trial;
            }
        }
        Self {
            psi: self.psi.select_columns(&kept),
        }
    }
}

fn push_unique(columns: &mut Vec<Vec<f64>>, candidate: Vec<f64>) {
    let duplicate = columns
        .iter()
        .any(|c| c.iter().zip(&candidate).map(|(x, y)| (x - y).abs()).sum::<f64>() <= DEDUP_TOL);
    if !duplicate {
        columns.push(candidate);
    }
}

/// Columns of `u` followed by every normalized product `u_i ⊙ v_j` with
/// nonzero mass, deduplicated.
pub fn build_state_bases(model: &LinearKernelModel) -> StateBases {
    let s = model.u.nrows();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for col in model.u.column_iter() {
        push_unique(&mut columns, col.iter().copied().collect());
    }
    for i in 0..model.u.ncols() {
        for j in 0..model.v.ncols() {
            let product: Vec<f64> = (0..s).map(|k| model.u[(k, i)] * model.v[(k, j)]).collect();
            let mass: f64 = product.iter().sum();
            if mass > 0.0 {
                push_unique(&mut columns, product.into_iter().map(|x| x / mass).collect());
            }
        }
    }
    let flat: Vec<f64> = columns.concat();
    StateBases {
        psi: DMatrix::from_column_slice(s, columns.len(), &flat),
    }
}

/// Observation basis `φ` over the triple space, an `O²(O+1) x d_o` matrix.
///
/// Columns are `q_i ⊗ q_j ⊗ q'_l` where `q'` is `q` padded with zero mass on the
/// end-of-episode marker plus one extra column, the point mass on the marker.
/// Hence `d_o = d_q² (d_q + 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsBases {
    pub phi: DMatrix<f64>,
    pub space: TripleSpace,
}

impl ObsBases {
    pub fn dim(&self) -> usize {
        self.phi.ncols()
    }

    /// Triple basis built from an explicit `O x d_q` matrix of probability columns.
    pub fn from_q(q: &DMatrix<f64>) -> Self {
        let o = q.nrows();
        let dq = q.ncols();
        let space = TripleSpace::new(o);
        let last = |l: usize, x: usize| -> f64 {
            match (l < dq, x < o) {
                (true, true) => q[(x, l)],
                (false, false) => 1.0,
                _ => 0.0,
            }
        };
        let d = dq * dq * (dq + 1);
        let mut phi = DMatrix::zeros(space.len(), d);
        for i in 0..dq {
            for j in 0..dq {
                for l in 0..=dq {
                    let col = (i * dq + j) * (dq + 1) + l;
                    for idx in 0..space.len() {
                        let [x, y, z] = space.triple(idx);
                        phi[(idx, col)] = q[(x, i)] * q[(y, j)] * last(l, z);
                    }
                }
            }
        }
        Self { phi, space }
    }

    pub fn one_hot(observations: usize) -> Self {
        Self::from_q(&DMatrix::identity(observations, observations))
    }
}

pub fn build_obs_bases(model: &LinearKernelModel) -> ObsBases {
    ObsBases::from_q(&model.q)
}

/// Observation operator: `(𝕆f)(o) = Σ_s E_step(o | s) f(s)`.
pub fn apply_o(model: &TabularModel, step: usize, f: &[f64]) -> Vec<f64> {
    model.observe(step, f)
}

/// Kronecker delta kernel on `n` points.
pub fn delta_kernel(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n)
}

/// Per-step bridge data.
#[derive(Clone, Debug, PartialEq)]
pub struct BridgeStep {
    /// `O x d_s`, columns `𝕆ψ_i`.
    pub nu: DMatrix<f64>,
    /// `d_s x d_s`.
    pub lambda: DMatrix<f64>,
    pub lambda_inv: DMatrix<f64>,
    /// `S x O`, the bridge function values.
    pub z: DMatrix<f64>,
    pub min_eigenvalue: f64,
    pub condition: f64,
    pub left_inverse_residual: f64,
}

/// Bridge for every step together with the ill-conditioning constant `γ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Bridge {
    pub steps: Vec<BridgeStep>,
    pub gamma: f64,
    pub basis_dim: usize,
}

impl Bridge {
    /// Bridge matrix `Z_step` (`S x O`).
    pub fn z(&self, step: usize) -> &DMatrix<f64> {
        &self.steps[step - 1].z
    }
}

impl fmt::Display for Bridge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "bridge: d_s = {}, gamma = {}", self.basis_dim, self.gamma)?;
        for (i, s) in self.steps.iter().enumerate() {
            writeln!(
                f,
                "  step {}: lambda_min = {:e}, cond = {:e}, left-inverse residual = {:e}",
                i + 1,
                s.min_eigenvalue,
                s.condition,
                s.left_inverse_residual
            )?;
        }
        Ok(())
    }
}

/// Builds `ν_h = 𝕆ψ`, `Λ_h = ν_hᵀ K̃ ν_h`, `Z_h = ψ Λ_h⁻¹ (K̃ ν_h)ᵀ` and
/// `γ = d_s · max_h max_j Σ_i |Λ_h⁻¹[i, j]|`.
pub fn build_bridge(model: &TabularModel, bases: &StateBases, kernel_tilde: &DMatrix<f64>) -> Result<Bridge> {
    let o = model.observations();
    if kernel_tilde.shape() != (o, o) {
        return Err(Error::ShapeMismatch(format!("auxiliary kernel must be {o} x {o}")));
    }
    if kernel_tilde.iter().any(|k| k.abs() > 1.0) {
        return Err(Error::Domain("auxiliary kernel entries must lie in [-1, 1]".into()));
    }
    if (kernel_tilde - kernel_tilde.transpose()).amax() > 1e-12 {
        return Err(Error::Domain("auxiliary kernel must be symmetric".into()));
    }
    if bases.psi.nrows() != model.states() {
        return Err(Error::ShapeMismatch("state basis has the wrong number of rows".into()));
    }
    let psi = &bases.psi;
    let d_s = psi.ncols();
    let mut steps = Vec::with_capacity(model.horizon());
    let mut worst_column = 0.0f64;
    for step in 1..=model.horizon() {
        let nu = model.emission_matrix(step) * psi;
        let k_nu = kernel_tilde * &nu;
        let lambda = nu.transpose() * &k_nu;
        let lambda = (&lambda + lambda.transpose()) * 0.5;
        let eig = SymmetricEigen::new(lambda.clone());
        let min_eigenvalue = eig.eigenvalues.min();
        let max_eigenvalue = eig.eigenvalues.max();
        if min_eigenvalue <= LAMBDA_MIN {
            return Err(Error::SingularLambda { step, min_eigenvalue });
        }
        let lambda_inv = lambda
            .clone()
            .cholesky()
            .ok_or(Error::SingularLambda { step, min_eigenvalue })?
            .inverse();
        let z = psi * &lambda_inv * k_nu.transpose();
        let recovered = &z * model.emission_matrix(step) * psi;
        let left_inverse_residual = (0..d_s)
            .map(|j| (recovered.column(j) - psi.column(j)).abs().sum())
            .fold(0.0, f64::max);
        if left_inverse_residual > LEFT_INVERSE_TOL {
            return Err(Error::LeftInverseFailed {
                step,
                residual: left_inverse_residual,
            });
        }
        for j in 0..d_s {
            worst_column = worst_column.max(lambda_inv.column(j).abs().sum());
        }
        steps.push(BridgeStep {
            nu,
            lambda,
            lambda_inv,
            z,
            min_eigenvalue,
            condition: max_eigenvalue / min_eigenvalue,
            left_inverse_residual,
        });
    }
    Ok(Bridge {
        steps,
        gamma: d_s as f64 * worst_column,
        basis_dim: d_s,
    })
}

/// Bridge of a tabular model with one-hot state basis and delta auxiliary kernel.
pub fn tabular_bridge(model: &TabularModel) -> Result<Bridge> {
    build_bridge(
        model,
        &StateBases::one_hot(model.states()),
        &delta_kernel(model.observations()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Sizes;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_emission_model() -> TabularModel {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = TabularModel::random(Sizes::new(3, 2, 3, 3), &mut rng).unwrap();
        let eye: Vec<f64> = DMatrix::<f64>::identity(3, 3).iter().copied().collect();
        TabularModel::from_raw(
            base.sizes(),
            base.initial().to_vec(),
            base.raw_transitions().to_vec(),
            vec![eye; 3],
            base.raw_rewards().to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn one_hot_products_deduplicate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = TabularModel::random(Sizes::new(3, 2, 4, 2), &mut rng).unwrap();
        let bases = build_state_bases(&LinearKernelModel::embed_tabular(&model));
        assert_eq!(bases.psi, DMatrix::identity(3, 3));
    }

    #[test]
    fn single_column_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lk = LinearKernelModel::random(Sizes::new(3, 2, 2, 2), 1, 1, 1, &mut rng).unwrap();
        let bases = build_state_bases(&lk);
        assert_eq!(bases.dim(), 1);
        assert_eq!(bases.psi.column(0), lk.u.column(0));
        let obs = build_obs_bases(&lk);
        // one product column plus the end-marker column
        assert_eq!(obs.dim(), 2);
    }

    #[test]
    fn one_hot_triple_basis_is_identity() {
        let bases = ObsBases::one_hot(2);
        assert_eq!(bases.dim(), bases.space.len());
        let mut sorted: Vec<usize> = (0..bases.dim())
            .map(|j| bases.phi.column(j).iter().position(|&x| x == 1.0).unwrap())
            .collect();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..bases.space.len()).collect::<Vec<_>>());
        for j in 0..bases.dim() {
            assert_eq!(bases.phi.column(j).sum(), 1.0);
        }
    }

    #[test]
    fn identity_emission_bridge() {
        let model = identity_emission_model();
        let bridge = tabular_bridge(&model).unwrap();
        for step in &bridge.steps {
            assert_eq!(step.lambda, DMatrix::identity(3, 3));
            assert_eq!(step.z, DMatrix::identity(3, 3));
        }
        assert_eq!(bridge.gamma, 3.0);
    }

    #[test]
    fn rank_deficient_emission_is_rejected() {
        let e = vec![0.5, 0.5, 0.5, 0.5];
        let model = TabularModel::from_raw(
            Sizes::new(2, 1, 2, 1),
            vec![0.5, 0.5],
            vec![],
            vec![e],
            vec![0.0, 0.0],
        )
        .unwrap();
        assert!(matches!(tabular_bridge(&model), Err(Error::SingularLambda { step: 1, .. })));
    }

    #[test]
    fn apply_o_of_initial_is_first_marginal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = TabularModel::random(Sizes::new(2, 2, 3, 2), &mut rng).unwrap();
        let marginal = apply_o(&model, 1, model.initial());
        for o in 0..3 {
            let direct: f64 = (0..2).map(|s| model.initial()[s] * model.emission(1, o, s)).sum();
            assert!((marginal[o] - direct).abs() < 1e-15);
        }
        let bridge = tabular_bridge(&model).unwrap();
        for i in 0..2 {
            let mut e = vec![0.0; 2];
            e[i] = 1.0;
            let nu = apply_o(&model, 2, &e);
            for o in 0..3 {
                assert!((nu[o] - bridge.steps[1].nu[(o, i)]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn independent_subset_spans() {
        let psi = DMatrix::from_column_slice(2, 3, &[1.0, 0.0, 0.0, 1.0, 0.5, 0.5]);
        let reduced = StateBases { psi }.independent_subset();
        assert_eq!(reduced.dim(), 2);
    }
}
