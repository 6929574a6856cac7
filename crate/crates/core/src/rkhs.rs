//! Kernel embeddings on the triple space, the Gram matrix of the observation
//! basis, the smoothing projection and MMD.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linear::ObsBases;
use crate::model::TripleSpace;

/// Smallest admissible eigenvalue of the Gram matrix.
pub const ALPHA_MIN: f64 = 1e-10;

/// Symmetric bounded kernel on the triple space, as a dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct TripleKernel {
    space: TripleSpace,
    matrix: DMatrix<f64>,
}

impl TripleKernel {
    pub fn delta(observations: usize) -> Self {
        let space = TripleSpace::new(observations);
        Self {
            space,
            matrix: DMatrix::identity(space.len(), space.len()),
        }
    }

    /// Gaussian kernel `exp(-‖x − y‖² / (2 w²))` on integer coordinates; the end
    /// marker sits at coordinate `O`.
    pub fn rbf(observations: usize, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Domain(format!("bandwidth must be positive, got {bandwidth}")));
        }
        let space = TripleSpace::new(observations);
        let n = space.len();
        let matrix = DMatrix::from_fn(n, n, |i, j| {
            let (x, y) = (space.coordinates(i), space.coordinates(j));
            let d2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
            (-d2 / (2.0 * bandwidth * bandwidth)).exp()
        });
        Ok(Self { space, matrix })
    }

    pub fn custom(observations: usize, matrix: DMatrix<f64>) -> Result<Self> {
        let space = TripleSpace::new(observations);
        if matrix.shape() != (space.len(), space.len()) {
            return Err(Error::ShapeMismatch(format!(
                "kernel must be {0} x {0}",
                space.len()
            )));
        }
        if matrix.iter().any(|k| !(k.abs() <= 1.0)) {
            return Err(Error::Domain("kernel entries must lie in [-1, 1]".into()));
        }
        if (&matrix - matrix.transpose()).amax() > 1e-12 {
            return Err(Error::Domain("kernel must be symmetric".into()));
        }
        Ok(Self { space, matrix })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn space(&self) -> TripleSpace {
        self.space
    }
}

/// `(𝕂p)(x) = Σ_y K(x, y) p(y)`.
pub fn embed(kernel: &TripleKernel, p: &[f64]) -> Vec<f64> {
    (kernel.matrix() * DVector::from_column_slice(p)).iter().copied().collect()
}

/// Gram matrix `G = Φᵀ K Φ` with its inverse and `α = λ_min(G)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GramG {
    pub matrix: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
    pub alpha: f64,
    pub condition: f64,
}

pub fn compute_g(kernel: &TripleKernel, bases: &ObsBases) -> Result<GramG> {
    if bases.phi.nrows() != kernel.space().len() {
        return Err(Error::ShapeMismatch("basis and kernel live on different spaces".into()));
    }
    let g = bases.phi.transpose() * kernel.matrix() * &bases.phi;
    let g = (&g + g.transpose()) * 0.5;
    let eig = SymmetricEigen::new(g.clone());
    let alpha = eig.eigenvalues.min();
    if alpha <= ALPHA_MIN {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: alpha });
    }
    let inverse = g
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { min_eigenvalue: alpha })?
        .inverse();
    Ok(GramG {
        condition: eig.eigenvalues.max() / alpha,
        matrix: g,
        inverse,
        alpha,
    })
}

/// `(𝕊f)(x) = Σ_{i,j} G⁻¹[i,j] (𝕂φ_i)(x) ⟨φ_j, f⟩`.
pub fn apply_s(kernel: &TripleKernel, bases: &ObsBases, gram: &GramG, f: &[f64]) -> Vec<f64> {
    let k_phi = kernel.matrix() * &bases.phi;
    let coeffs = bases.phi.transpose() * DVector::from_column_slice(f);
    (k_phi * (&gram.inverse * coeffs)).iter().copied().collect()
}

/// `ρ̂ = Σ_j φ_j Σ_i G⁻¹[i,j] ⟨𝕂φ_i, ρ⟩`, the Gram-metric projection of `ρ`
/// onto the span of the basis.
pub fn project_distribution(kernel: &TripleKernel, bases: &ObsBases, gram: &GramG, rho: &[f64]) -> Vec<f64> {
    let embedded = bases.phi.transpose() * (kernel.matrix() * DVector::from_column_slice(rho));
    (&bases.phi * (&gram.inverse * embedded)).iter().copied().collect()
}

/// `‖𝕂p1 − 𝕂p2‖ = sqrt((p1 − p2)ᵀ K (p1 − p2))`, clipped at zero.
pub fn mmd(kernel: &TripleKernel, p1: &[f64], p2: &[f64]) -> f64 {
    let d = DVector::from_iterator(p1.len(), p1.iter().zip(p2).map(|(a, b)| a - b));
    d.dot(&(kernel.matrix() * &d)).max(0.0).sqrt()
}

/// Kernel, basis and Gram matrix bundled with the dense operators they induce.
#[derive(Clone, Debug)]
pub struct RkhsContext {
    pub kernel: TripleKernel,
    pub bases: ObsBases,
    pub gram: GramG,
    // Φ G⁻¹ Φᵀ K
    projector: DMatrix<f64>,
    // K Φ G⁻¹ Φᵀ
    smoother: DMatrix<f64>,
}

impl RkhsContext {
    pub fn new(kernel: TripleKernel, bases: ObsBases) -> Result<Self> {
        let gram = compute_g(&kernel, &bases)?;
        let phi_ginv = &bases.phi * &gram.inverse;
        let projector = &phi_ginv * bases.phi.transpose() * kernel.matrix();
        let smoother = kernel.matrix() * &phi_ginv * bases.phi.transpose();
        Ok(Self {
            kernel,
            bases,
            gram,
            projector,
            smoother,
        })
    }

    /// Delta kernel and one-hot basis over the triple space.
    pub fn tabular(observations: usize) -> Result<Self> {
        Self::new(TripleKernel::delta(observations), ObsBases::one_hot(observations))
    }

    pub fn space(&self) -> TripleSpace {
        self.kernel.space()
    }

    pub fn alpha(&self) -> f64 {
        self.gram.alpha
    }

    pub fn dim(&self) -> usize {
        self.bases.dim()
    }

    pub fn project(&self, rho: &[f64]) -> Vec<f64> {
        (&self.projector * DVector::from_column_slice(rho)).iter().copied().collect()
    }

    pub fn smooth(&self, f: &[f64]) -> Vec<f64> {
        (&self.smoother * DVector::from_column_slice(f)).iter().copied().collect()
    }

    /// Dense matrix of `𝕊`.
    pub fn smoother(&self) -> &DMatrix<f64> {
        &self.smoother
    }
}
