//! Equilibrium reinsurance design for an insurer with a time-consistent
//! mean-variance objective, when insurer and reinsurer disagree about the
//! claim-size distribution and the contract must be incentive compatible
//! (both ceded and retained loss nondecreasing in the claim).
//!
//! The crate is `no_std` (with `alloc`). It contains the beliefs, the
//! piecewise contract representation, the static objective `H(t, I)`, the
//! solvers for the special cases and the general finite-dimensional search,
//! a brute-force discretized oracle, the value-function ODEs and a
//! counter-seeded Monte Carlo kernel. IO, configuration and parallel drivers
//! live in the companion `mvreins` crate.

#![no_std]
#![warn(missing_debug_implementations)]
// `!(x > 0.0)` rejects NaN along with the bound; kept on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod beliefs;
pub mod error;
pub mod hjb;
pub mod indemnity;
pub mod numeric;
pub mod objective;
pub mod oracle;
pub mod partition;
pub mod simulate;
pub mod solver;

pub use beliefs::{ClaimDistribution, DistortionFunction, LikelihoodRatio, LrPiece, ReinsurerBelief};
pub use error::{Error, Result};
pub use indemnity::{IndemnityFunction, MarginalIndemnity, Piecewise, Segment, SegmentKind, UnconstrainedIndemnity};
pub use partition::{MarketParams, Partition, SlopeRegime};
pub use solver::{EquilibriumSolution, Problem, SolverTag, StaticSolution};
