mod common;

use common::*;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use optenet::linear::ObsBases;
use optenet::model::TripleSpace;
use optenet::rkhs::{RkhsContext, TripleKernel};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn random_q(o: usize, dq: usize, r: &mut ChaCha8Rng) -> DMatrix<f64> {
    loop {
        let cols: Vec<f64> = (0..dq).flat_map(|_| distribution(o, r)).collect();
        let q = DMatrix::from_column_slice(o, dq, &cols);
        if q.rank(1e-6) == dq {
            return q;
        }
    }
}

fn random_context(o: usize, r: &mut ChaCha8Rng) -> RkhsContext {
    loop {
        let dq = r.random_range(1..=o);
        let kernel = if r.random::<bool>() {
            TripleKernel::rbf(o, r.random_range(0.5..2.0)).unwrap()
        } else {
            let n = TripleSpace::new(o).len();
            let a = DMatrix::<f64>::from_fn(n, n, |_, _| r.random_range(-1.0..1.0));
            let m = &a * a.transpose() + DMatrix::identity(n, n) * 0.1;
            let corr = DMatrix::from_fn(n, n, |i, j| m[(i, j)] / (m[(i, i)] * m[(j, j)]).sqrt());
            TripleKernel::custom(o, corr).unwrap()
        };
        if let Ok(ctx) = RkhsContext::new(kernel, ObsBases::from_q(&random_q(o, dq, r))) {
            if ctx.gram.condition < 1e6 {
                return ctx;
            }
        }
    }
}

/// Minimizer of `(ρ − Φc)ᵀ K (ρ − Φc)` by ordinary least squares on `K^{1/2}`.
fn qp_oracle(ctx: &RkhsContext, rho: &[f64]) -> Vec<f64> {
    let eig = SymmetricEigen::new(ctx.kernel.matrix().clone());
    let root = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|x| x.max(0.0).sqrt()))
        * eig.eigenvectors.transpose();
    let a = &root * &ctx.bases.phi;
    let b = &root * DVector::from_column_slice(rho);
    let c = a.svd(true, true).solve(&b, 1e-14).unwrap();
    (&ctx.bases.phi * c).iter().copied().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn smoothing_is_dual_to_projection(seed in any::<u64>(), o in 2usize..4) {
        let mut r = rng(seed);
        let ctx = random_context(o, &mut r);
        let n = ctx.space().len();
        for _ in 0..5 {
            let f = uniform(n, -1.0, 1.0, &mut r);
            let rho = distribution(n, &mut r);
            let lhs: f64 = ctx.smooth(&f).iter().zip(&rho).map(|(a, b)| a * b).sum();
            let rhs: f64 = ctx.project(&rho).iter().zip(&f).map(|(a, b)| a * b).sum();
            prop_assert!((lhs - rhs).abs() <= 1e-10, "{lhs} {rhs} alpha {} cond {}", ctx.alpha(), ctx.gram.condition);
        }
    }

    #[test]
    fn projection_is_idempotent_and_orthogonal(seed in any::<u64>(), o in 2usize..4) {
        let mut r = rng(seed);
        let ctx = random_context(o, &mut r);
        let rho = distribution(ctx.space().len(), &mut r);
        let hat = ctx.project(&rho);
        let twice = ctx.project(&hat);
        for (a, b) in hat.iter().zip(&twice) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
        let resid = DVector::from_iterator(rho.len(), rho.iter().zip(&hat).map(|(a, b)| a - b));
        let k_phi = ctx.kernel.matrix() * &ctx.bases.phi;
        for j in 0..ctx.dim() {
            prop_assert!(resid.dot(&k_phi.column(j)).abs() <= 1e-10);
        }
    }

    #[test]
    fn projection_matches_least_squares(seed in any::<u64>(), o in 2usize..4) {
        let mut r = rng(seed);
        let ctx = random_context(o, &mut r);
        let rho = distribution(ctx.space().len(), &mut r);
        let oracle = qp_oracle(&ctx, &rho);
        for (a, b) in ctx.project(&rho).iter().zip(&oracle) {
            prop_assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
        }
    }
}

#[test]
fn empirical_projection_error_shrinks() {
    let o = 2;
    let mut r = rng(31);
    let ctx = RkhsContext::new(TripleKernel::rbf(o, 1.0).unwrap(), ObsBases::from_q(&random_q(o, 2, &mut r))).unwrap();
    let n = ctx.space().len();
    let law = distribution(n, &mut r);
    let target = ctx.project(&law);
    let cdf: Vec<f64> = law
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    let deviation = |k: usize, r: &mut ChaCha8Rng| -> f64 {
        let mut emp = vec![0.0; n];
        for _ in 0..k {
            let u: f64 = r.random();
            let i = cdf.iter().position(|c| u < *c).unwrap_or(n - 1);
            emp[i] += 1.0 / k as f64;
        }
        ctx.project(&emp).iter().zip(&target).map(|(a, b)| (a - b).abs()).sum()
    };
    let median = |mut v: Vec<f64>| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    let small = median((0..41).map(|_| deviation(25, &mut r)).collect());
    let large = median((0..41).map(|_| deviation(400, &mut r)).collect());
    // the rate is k^{-1/2}, so a 16x sample increase should cut the error about 4x
    assert!(large < small / 2.0, "{small} -> {large}");
}
