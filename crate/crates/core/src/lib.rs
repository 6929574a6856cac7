//! Optimistic exploration for POMDPs with linear structure, computed exactly
//! on finite models.
//!
//! The crate follows the learning pipeline end to end:
//!
//! - [`model`]: finite POMDPs, histories, policies and simulation
//! - [`linear`]: state and observation bases, the observation operator and the bridge
//! - [`bellman`]: full-memory and finite-memory Bellman operators and value recursion
//! - [`rkhs`]: triple kernels, Gram matrices, projection and MMD
//! - [`estimation`]: interventional datasets, the adversarial loss and confidence sets
//! - [`planner`]: exact planning, optimism and the outer learning loop
//! - [`solver`]: Lagrangian relaxation with stochastic gradient estimators
//!
//! ```
//! use optenet::model::{Policy, Sizes, TabularModel};
//! use optenet::bellman::evaluate_j;
//! use rand::SeedableRng;
//!
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
//! let model = TabularModel::random(Sizes::new(2, 2, 3, 3), &mut rng).unwrap();
//! let policy = Policy::constant(model.sizes(), 0).unwrap();
//! let value = evaluate_j(&model, &policy);
//! assert!((0.0..=3.0).contains(&value));
//! ```

pub mod bellman;
pub mod error;
pub mod estimation;
pub mod linear;
pub mod model;
pub mod planner;
pub mod rkhs;
pub mod simplex;
pub mod solver;

pub use error::{Error, Result};
