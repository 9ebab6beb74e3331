//! Resilient projected push-pull (RP3) over directed graphs.
//!
//! Legitimate agents minimize the average of their private strongly convex
//! costs while an unknown set of Byzantine agents injects arbitrary (but
//! set-constrained) values. Agents learn whom to trust from stochastic trust
//! observations, mix only with trusted neighbors, and project their
//! gradient-tracking variables onto growing balls so that the tracking
//! property is restored once the trust estimates settle.
//!
//! Module map:
//! - [`graph`]: communication digraphs, generators, connectivity checks, diameter and edge utility.
//! - [`trust`]: trust observations, aggregate trust, opinion propagation, learning-time bounds.
//! - [`optim`]: costs, constraint sets, projections, growing set sequences.
//! - [`protocol`]: weight construction, adversaries, the RP3 / PPP updates and the simulation engine.
//! - [`analysis`]: Perron vectors, contraction parameters, the gain matrix and bound curves.
//! - [`problems`]: consensus, target tracking and random quadratic problems with centralized oracles.
//! - [`harness`]: configuration, seeding, experiment orchestration and file output.

pub mod analysis;
pub mod error;
pub mod graph;
pub mod harness;
pub mod optim;
pub mod problems;
pub mod protocol;
pub mod trust;

pub use error::{Error, Result};

/// A point in the decision space.
pub type Point = nalgebra::DVector<f64>;
