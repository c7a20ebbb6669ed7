//! Outcome-level mode collapse under expected-return optimization, and its
//! correction by inverse probability scaling (IPS).
//!
//! The crate is a small numerical laboratory with three layers:
//!
//! * [`simplex`] and [`flow`]: the outcome-selection bandit. Under the
//!   expected-return gradient flow the log-ratio of two outcomes moves at
//!   `p_i a_i - p_j a_j`, so the more probable outcome is pushed harder and
//!   the policy collapses. Dividing each reward by the outcome probability
//!   turns the flow into `dz_i/dt = r_i - p_i Σ r`, whose unique stationary
//!   point is the reward-proportional distribution `p* = r / Σ r`.
//! * [`grid`] and [`policy`]: increment-only lattice environments with
//!   tabular softmax policies and exact dynamic-programming oracles for the
//!   induced terminal distribution and path multiplicities.
//! * [`trainer`] and [`metrics`]: GRPO and IPS-GRPO on those policies, with
//!   the quantities used to compare them.
//!
//! ```
//! use ipslab::flow::{integrate_flow, stationary_distribution, FlowConfig, Integrator, Objective};
//! use ipslab::simplex::{l1_distance, Logits, RewardVector};
//!
//! let rewards = RewardVector::new(vec![2.0, 1.0, 1.0])?;
//! let trace = integrate_flow(&FlowConfig {
//!     rewards: rewards.clone(),
//!     init_logits: Logits::new(vec![1.0, -2.0, 0.5])?,
//!     objective: Objective::Ips,
//!     step_size: 0.01,
//!     horizon: 100.0,
//!     integrator: Integrator::Rk4,
//! })?;
//! let target = stationary_distribution(&rewards)?;
//! assert!(l1_distance(trace.final_simplex(), &target)? < 1e-4);
//! # Ok::<(), ipslab::Error>(())
//! ```
//!
//! A longer walk-through lives in the `book/` directory of the repository;
//! its code listings are compiled and run as doc-tests of this crate.

pub mod error;
pub mod flow;
pub mod grid;
pub mod metrics;
pub mod policy;
pub mod render;
pub mod sampling;
pub mod simplex;
pub mod trainer;

pub use error::{Error, Result};

// Every chapter of the guide is a doc-test module, so `cargo test --doc`
// keeps the listings honest.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/simplex.md")]
    pub mod simplex {}
    #[doc = include_str!("../../../book/src/collapse.md")]
    pub mod collapse {}
    #[doc = include_str!("../../../book/src/ips.md")]
    pub mod ips {}
    #[doc = include_str!("../../../book/src/hypergrid.md")]
    pub mod hypergrid {}
    #[doc = include_str!("../../../book/src/policies.md")]
    pub mod policies {}
    #[doc = include_str!("../../../book/src/ips_grpo.md")]
    pub mod ips_grpo {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    pub mod metrics {}
}
