//! Robust Dynkin games on finite scenario trees under rectangular ambiguity.
//!
//! The solver runs the doubly reflected backward recursion
//! `v = min(U, max(L, inf_P E_P[v_next] + g·Δ))`; the oracle enumerates every
//! stopping rule and every policy to check it.

pub mod ambiguity;
pub mod error;
pub mod oracle;
pub mod payoff;
pub mod runner;
pub mod sde;
pub mod solver;
pub mod spec;
pub mod sweep;
pub mod tree;

pub use ambiguity::{Kernel, KernelMenu, Policy};
pub use error::{Error, Result};
pub use oracle::OracleCaps;
pub use payoff::Payoffs;
pub use solver::{backward_induction, backward_induction_grid, GameSolution, StoppingRegion};
pub use spec::{parse_spec, GameSpec};
pub use tree::{ScenarioTree, TimeGrid};
