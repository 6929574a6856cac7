//! Configuration, environment generators and seeded experiment runs for the
//! `optenet` learning loop.
//!
//! The `optenet` binary wraps these modules; the same entry points are
//! usable from Rust:
//!
//! ```
//! use optenet_harness::config::{parse_config, SolverKind};
//!
//! let config = parse_config("iterations = 5\n[family]\ngenerator = \"mdp\"\n").unwrap();
//! assert_eq!(config.delta, 0.05);
//! assert_eq!(config.solver, SolverKind::Exact);
//! ```

pub mod config;
pub mod error;
pub mod experiment;
pub mod zoo;

pub use error::{HarnessError, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/bridge.md")]
    mod bridge {}
    #[doc = include_str!("../../../book/src/bellman.md")]
    mod bellman {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    mod kernels {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/learning-loop.md")]
    mod learning_loop {}
    #[doc = include_str!("../../../book/src/stochastic-solver.md")]
    mod stochastic_solver {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
}
