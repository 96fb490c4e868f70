//! Combinatorial exchange mechanism laboratory.
//!
//! The crate is `no_std` (with `alloc`) and contains every algorithmic piece:
//! market types and instance generators, exact winner determination with VCG
//! discounts, the family of budget-balanced payment rules, payoff-distribution
//! metrics, extreme-value fitting, restricted equilibrium search by iterated
//! best response, unilateral deviation curves and online mechanism selection.
//!
//! Enable the `parallel` feature to spread per-instance work over a rayon
//! pool. Results are identical with and without it.
#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

mod error;
pub(crate) mod math;
pub(crate) mod par;

pub mod deviation;
pub mod equilibrium;
pub mod fitting;
pub mod generators;
pub mod market;
pub mod metrics;
pub mod online;
pub mod optimize;
pub mod payment;
pub mod rng;
pub mod stats;
pub mod wd;

pub use error::{Error, Result};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use generators::{GeneratorConfig, Scenario};
pub use market::{Agent, Atom, Instance, Role, TradeProfile, TradeVector, XorValuation};
pub use payment::RuleId;
pub use wd::WdResult;
