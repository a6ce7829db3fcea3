use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng::{standard_normal, ChainRng};
use crate::targets::{check_dim, Estimate};

type EnergyFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Additive Gaussian noise applied to the stochastic estimators, simulating
/// mini-batch noise for targets that have no dataset. Energy and gradient
/// noise are drawn independently; a zero std still consumes its draw so the
/// stream layout does not depend on the std value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub energy_std: f64,
    pub grad_std: f64,
}

#[derive(Clone)]
enum Kind {
    /// 2-d lattice of 25 wells: `0.2|x|^2 - 2(cos 2πx_1 + cos 2πx_2)`,
    /// plus the confinement term `(|x|^2 - 20)_+` folded into the energy.
    MultiModal25,
    /// 1-d Gaussian mixture, `U = -log Σ w_j N(x; μ_j, σ_j)`.
    GaussianMixture1d(Vec<(f64, f64, f64)>),
    /// Caller-supplied energy/gradient closures.
    Custom {
        dim: usize,
        energy: EnergyFn,
        grad: GradFn,
    },
}

/// Closed-form energy model, optionally with injected estimator noise.
#[derive(Clone)]
pub struct AnalyticTarget {
    kind: Kind,
    noise: Option<NoiseSpec>,
}

impl fmt::Debug for AnalyticTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match &self.kind {
            Kind::MultiModal25 => "MultiModal25",
            Kind::GaussianMixture1d(_) => "GaussianMixture1d",
            Kind::Custom { .. } => "Custom",
        };
        f.debug_struct("AnalyticTarget")
            .field("kind", &name)
            .field("noise", &self.noise)
            .finish()
    }
}

impl AnalyticTarget {
    pub fn multimodal25() -> Self {
        AnalyticTarget {
            kind: Kind::MultiModal25,
            noise: None,
        }
    }

    /// Components are `(weight, mean, std)` triples; weights must sum to one.
    pub fn gaussian_mixture_1d(components: &[(f64, f64, f64)]) -> Result<Self> {
        if components.is_empty() {
            return Err(crate::error::Error::input("mixture needs components"));
        }
        let wsum: f64 = components.iter().map(|c| c.0).sum();
        if (wsum - 1.0).abs() > 1e-9 {
            return Err(crate::error::Error::input(format!(
                "mixture weights sum to {}, expected 1",
                wsum
            )));
        }
        if components.iter().any(|c| c.0 <= 0.0 || c.2 <= 0.0) {
            return Err(crate::error::Error::input(
                "mixture weights and stds must be positive",
            ));
        }
        Ok(AnalyticTarget {
            kind: Kind::GaussianMixture1d(components.to_vec()),
            noise: None,
        })
    }

    /// Arbitrary smooth energy given by closures.
    pub fn custom<E, G>(dim: usize, energy: E, grad: G) -> Self
    where
        E: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        AnalyticTarget {
            kind: Kind::Custom {
                dim,
                energy: Arc::new(energy),
                grad: Arc::new(grad),
            },
            noise: None,
        }
    }

    pub fn with_noise(mut self, energy_std: f64, grad_std: f64) -> Self {
        self.noise = Some(NoiseSpec {
            energy_std,
            grad_std,
        });
        self
    }

    pub fn noise(&self) -> Option<NoiseSpec> {
        self.noise
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            Kind::MultiModal25 => 2,
            Kind::GaussianMixture1d(_) => 1,
            Kind::Custom { dim, .. } => *dim,
        }
    }

    pub fn energy_exact(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x)?;
        Ok(match &self.kind {
            Kind::MultiModal25 => multimodal25_energy(x),
            Kind::GaussianMixture1d(c) => mixture_energy(c, x[0]),
            Kind::Custom { energy, .. } => energy(x),
        })
    }

    pub fn grad_exact(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x)?;
        Ok(match &self.kind {
            Kind::MultiModal25 => multimodal25_grad(x),
            Kind::GaussianMixture1d(c) => vec![mixture_grad(c, x[0])],
            Kind::Custom { grad, .. } => grad(x),
        })
    }

    /// Exact values plus one noise draw per configured estimator. Draw order
    /// is fixed: energy noise first, then gradient noise per component.
    pub fn estimate(&self, x: &[f64], rng: &mut ChainRng) -> Result<Estimate> {
        let mut energy = self.energy_exact(x)?;
        let mut grad = self.grad_exact(x)?;
        if let Some(noise) = self.noise {
            energy += noise.energy_std * standard_normal(rng);
            for g in grad.iter_mut() {
                *g += noise.grad_std * standard_normal(rng);
            }
        }
        Ok(Estimate { energy, grad })
    }
}

fn multimodal25_energy(x: &[f64]) -> f64 {
    let r2 = x[0] * x[0] + x[1] * x[1];
    let wells = -2.0 * ((2.0 * PI * x[0]).cos() + (2.0 * PI * x[1]).cos());
    let confinement = (r2 - 20.0).max(0.0);
    0.2 * r2 + wells + confinement
}

fn multimodal25_grad(x: &[f64]) -> Vec<f64> {
    let r2 = x[0] * x[0] + x[1] * x[1];
    let confined = r2 > 20.0;
    x.iter()
        .map(|&xi| {
            let mut g = 0.4 * xi + 4.0 * PI * (2.0 * PI * xi).sin();
            if confined {
                g += 2.0 * xi;
            }
            g
        })
        .collect()
}

fn log_normal_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - 0.5 * (2.0 * PI).ln()
}

fn mixture_energy(components: &[(f64, f64, f64)], x: f64) -> f64 {
    // log-sum-exp over component log densities
    let logs: Vec<f64> = components
        .iter()
        .map(|&(w, mean, std)| w.ln() + log_normal_pdf(x, mean, std))
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
    -(max + sum.ln())
}

fn mixture_grad(components: &[(f64, f64, f64)], x: f64) -> f64 {
    let logs: Vec<f64> = components
        .iter()
        .map(|&(w, mean, std)| w.ln() + log_normal_pdf(x, mean, std))
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let mut weighted = 0.0;
    for (log, &(_, mean, std)) in logs.iter().zip(components) {
        let resp = (log - max).exp();
        total += resp;
        weighted += resp * (x - mean) / (std * std);
    }
    weighted / total
}
