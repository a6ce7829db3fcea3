//! Energy models: exact energies/gradients plus stochastic estimators.
//!
//! Two families are provided. [`AnalyticTarget`] evaluates closed-form
//! energies exactly and can inject Gaussian estimator noise on demand.
//! [`DatasetTarget`] is a finite-sum posterior over data records with
//! mini-batch estimators scaled by `N/n`, plus the control-variate
//! variance-reduced energy estimator in [`VRState`].

mod analytic;
mod dataset;

pub use analytic::{AnalyticTarget, NoiseSpec};
pub use dataset::{refresh_anchor, vr_energy, DatasetTarget, GaussianPrior, VRState};

use crate::error::{Error, Result};
use crate::rng::ChainRng;

/// One stochastic evaluation: an unbiased energy estimate and an unbiased
/// gradient estimate from a single draw. Finite-sum targets evaluate both
/// on the same mini-batch.
#[derive(Clone, Debug)]
pub struct Estimate {
    pub energy: f64,
    pub grad: Vec<f64>,
}

/// An energy model a sampler can run against.
#[derive(Clone, Debug)]
pub enum Target {
    Analytic(AnalyticTarget),
    Dataset(DatasetTarget),
}

impl Target {
    pub fn dim(&self) -> usize {
        match self {
            Target::Analytic(t) => t.dim(),
            Target::Dataset(t) => t.dim(),
        }
    }

    /// Exact energy `U(x)`.
    pub fn energy_exact(&self, x: &[f64]) -> Result<f64> {
        match self {
            Target::Analytic(t) => t.energy_exact(x),
            Target::Dataset(t) => t.energy_exact(x),
        }
    }

    /// Exact gradient of `U`.
    pub fn grad_exact(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Target::Analytic(t) => t.grad_exact(x),
            Target::Dataset(t) => t.grad_exact(x),
        }
    }

    /// One stochastic draw of energy and gradient together.
    pub fn estimate(&self, x: &[f64], rng: &mut ChainRng) -> Result<Estimate> {
        match self {
            Target::Analytic(t) => t.estimate(x, rng),
            Target::Dataset(t) => t.estimate(x, rng),
        }
    }

    /// Unbiased energy estimate (one draw).
    pub fn energy_stochastic(&self, x: &[f64], rng: &mut ChainRng) -> Result<f64> {
        Ok(self.estimate(x, rng)?.energy)
    }

    /// Unbiased gradient estimate (one draw).
    pub fn grad_stochastic(&self, x: &[f64], rng: &mut ChainRng) -> Result<Vec<f64>> {
        Ok(self.estimate(x, rng)?.grad)
    }
}

pub(crate) fn check_dim(expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(Error::input(format!(
            "position has dimension {}, target expects {}",
            x.len(),
            expected
        )));
    }
    Ok(())
}
