//! Design-based estimation and inference for difference-in-differences with
//! staggered adoption.
//!
//! Units adopt an absorbing treatment at some date (or never), and the only
//! source of randomness is the assignment of adoption dates with fixed
//! per-date counts. On top of that design this crate provides:
//!
//! - the two-way fixed-effects DID point estimate, in closed form, as a
//!   weighted average of group means, and as a least-squares fit
//!   ([`estimator`]);
//! - the exact randomization variance of the estimate, a conservative
//!   estimator of it, the cluster-robust sandwich, and two cluster
//!   bootstraps ([`variance`]);
//! - exhaustive enumeration of the assignment support, for verifying the
//!   closed forms against brute force on small populations ([`design`]);
//! - a Monte Carlo study of all five variances over four data-generating
//!   designs ([`sim`]);
//! - checkers for the identifying assumptions and a permutation pretest
//!   ([`panel`]).
//!
//! The `staggered-did` binary exposes estimation, simulation, oracle
//! verification, and the pretest over CSV panels; see the guide under
//! `book/` for a walkthrough.
//!
//! ```
//! use staggered_did::panel::{AdoptionAssignment, AdoptionDate, Panel};
//! use staggered_did::estimator::did_estimate;
//!
//! // Two units, two periods: one adopts in period 2, one never does.
//! let assignment = AdoptionAssignment::new(
//!     vec![AdoptionDate::At(2), AdoptionDate::Never],
//!     2,
//! )?;
//! let panel = Panel::new(vec![1.0, 5.0, 2.0, 3.0], assignment)?;
//! let tau = did_estimate(&panel)?;
//! assert_eq!(tau, (5.0 - 1.0) - (3.0 - 2.0));
//! # Ok::<(), staggered_did::Error>(())
//! ```

pub mod cli;
pub mod design;
pub mod error;
pub mod estimator;
pub mod numerics;
pub mod panel;
pub mod sim;
pub mod variance;

#[cfg(doctest)]
pub mod guide;

pub use error::{Error, Result};
