//! PRReach: probabilistic risk assessment of UAV flight plans via zonotope
//! reachability, and synthesis of risk-bounded feedback controllers that
//! minimally perturb a baseline LQR gain subject to per-step risk
//! constraints.
//!
//! The pipeline, end to end:
//!
//! 1. [`dynamics`] builds the linear quadrotor model, applies a hazard-cause
//!    variant (deficient rotor, sensor error, wind), discretizes it with a
//!    zero-order hold, and synthesizes the baseline LQR gain.
//! 2. [`hazard`] ingests gridded spatial density data and fits the hazard
//!    map as a sum of powers of linear forms, the one polynomial shape the
//!    simplex integrator accepts in closed form.
//! 3. [`reach`] propagates zonotope reach sets under the closed-loop matrix
//!    with accumulated disturbances and per-step order reduction.
//! 4. [`risk`] integrates the fitted polynomial exactly over each reach
//!    set's planar projection and turns the integrals into per-step risks,
//!    mission success probability and risk-to-go.
//! 5. [`optimizer`] solves the risk-bounded gain perturbation problem with
//!    an augmented-Lagrangian method and recovers the feedback gain through
//!    the Moore-Penrose pseudoinverse.
//! 6. [`sim`] runs closed-loop flights with sampled wind, drives the offline
//!    and online experiments, and assembles the report tables.

pub mod config;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod hazard;
pub mod optimizer;
pub mod reach;
pub mod risk;
pub mod sim;

pub use dynamics::{GainMatrix, HazardCause, LinearModel, QuadrotorParams};
pub use geometry::{Polygon2D, Simplex, Zonotope};
pub use hazard::{HazardGrid, LinearFormPoly};
pub use optimizer::{ProblemSpec, Solution, SolveStatus};
pub use risk::{RiskProfile, RiskThresholds};
