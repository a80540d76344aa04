//! Secure state reconstruction and safe control for discrete-time linear
//! systems whose sensors may be spoofed.
//!
//! An adversary owning up to `s` sensors can report arbitrary values, so a
//! single state estimate is unavailable in general. Instead, the library
//! enumerates every combination of `p - s` sensors, solves the stacked
//! regression each combination induces over a data window, and keeps the
//! union of the consistent solution sets: a finite collection of points
//! and affine subspaces guaranteed to contain the true state. Safety is
//! then enforced with a polytopic control barrier function whose one-step
//! decrease condition is imposed at every plausible state at once through
//! a small projection QP, plus kernel conditions that make the constraints
//! well-posed on subspace entries.
//!
//! Module map:
//!
//! - [`model`] — LTI systems, observability stacks, rank/kernel primitives,
//!   sparse observability, zero-order-hold discretization.
//! - [`reconstruction`] — window regressions, solution classification,
//!   plausible-set assembly, propagation, worst-case envelopes.
//! - [`safety`] — barrier types, offline admissibility, online constraint
//!   assembly and the safety filter.
//! - [`qp`] — the dense active-set projection solver behind the filter.
//! - [`attack`] — adversary models and the closed-loop simulator.
//! - [`matjson`] — the JSON matrix wire format shared with the CLI.
//! - [`demo`] — the bundled 2D-vehicle demonstration plant.

pub mod attack;
pub mod config;
pub mod demo;
pub mod error;
pub mod matjson;
pub mod model;
pub mod qp;
pub mod reconstruction;
pub mod safety;

pub use config::NumericConfig;
pub use error::{Error, Result};
