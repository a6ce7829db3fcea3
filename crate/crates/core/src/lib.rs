//! Contour-guided stochastic gradient Langevin sampling.
//!
//! The crate centers on samplers that learn a piecewise view of the energy
//! landscape while they run: the energy axis is cut into bands, a simplex of
//! band weights is adapted by stochastic approximation, and the weights feed
//! back into the drift so chains can cross energy barriers. Several parallel
//! chains may share one weight vector, which averages their contributions
//! and shrinks the adaptation noise.
//!
//! Baselines (plain, cyclic-step-size, and replica-exchange Langevin
//! samplers), analytic and finite-sum targets, grid metrics, and a batch
//! experiment harness round out the benchmark kit.
//!
//! ```
//! use contour_core::contour::{ContourParams, FieldVariant, Partition, Theta};
//!
//! let partition = Partition::uniform(-4.0, 0.5, 10).unwrap();
//! let params = ContourParams::new(0.75, 1.0, FieldVariant::New).unwrap();
//! let mut theta = Theta::uniform(partition.num_bands());
//!
//! // three chains all landed in band 2 this round
//! theta = contour_core::contour::sa_update(&theta, &params, &[2, 2, 2], 0.1).unwrap();
//! assert!(theta.weight(2) > theta.weight(3));
//! ```

pub mod contour;
pub mod error;
pub mod exec;
pub mod harness;
pub mod interaction;
pub mod metrics;
pub mod rng;
pub mod samplers;
pub mod targets;

pub use error::{Error, Result};
