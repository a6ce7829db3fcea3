use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{seeded_rng, standard_normal, ChainRng};
use crate::targets::{check_dim, Estimate};

/// Isotropic Gaussian prior `‖x − mean‖² / (2 std²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrior {
    mean: Vec<f64>,
    std: f64,
}

impl GaussianPrior {
    pub fn new(mean: Vec<f64>, std: f64) -> Result<Self> {
        if !(std > 0.0) {
            return Err(Error::input("prior std must be positive"));
        }
        Ok(GaussianPrior { mean, std })
    }

    pub fn energy(&self, x: &[f64]) -> f64 {
        let s2 = self.std * self.std;
        x.iter()
            .zip(&self.mean)
            .map(|(xi, mi)| (xi - mi) * (xi - mi))
            .sum::<f64>()
            / (2.0 * s2)
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let s2 = self.std * self.std;
        x.iter().zip(&self.mean).map(|(xi, mi)| (xi - mi) / s2).collect()
    }
}

/// Finite-sum posterior over `N` records with mini-batch estimators.
///
/// Per-point energy is Gaussian-likelihood mean estimation,
/// `U_i(x) = ‖x − y_i‖² / (2 σ²)`; the full energy is the sum over all
/// records plus the prior term when one is set. Mini-batch estimates scale
/// the batch sum by `N/n`.
#[derive(Clone)]
pub struct DatasetTarget {
    data: Vec<Vec<f64>>,
    batch: usize,
    likelihood_std: f64,
    prior: Option<GaussianPrior>,
}

impl fmt::Debug for DatasetTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DatasetTarget")
            .field("records", &self.data.len())
            .field("dim", &self.dim())
            .field("batch", &self.batch)
            .field("likelihood_std", &self.likelihood_std)
            .field("prior", &self.prior)
            .finish()
    }
}

impl DatasetTarget {
    pub fn new(
        data: Vec<Vec<f64>>,
        batch: usize,
        likelihood_std: f64,
        prior: Option<GaussianPrior>,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::input("dataset has no records"));
        }
        let dim = data[0].len();
        if dim == 0 {
            return Err(Error::input("dataset records are empty"));
        }
        if let Some(bad) = data.iter().position(|r| r.len() != dim) {
            return Err(Error::input(format!(
                "record {} has dimension {}, expected {}",
                bad,
                data[bad].len(),
                dim
            )));
        }
        if batch == 0 || batch > data.len() {
            return Err(Error::input(format!(
                "batch size {} out of range 1..={}",
                batch,
                data.len()
            )));
        }
        if !(likelihood_std > 0.0) {
            return Err(Error::input("likelihood std must be positive"));
        }
        if let Some(p) = &prior {
            if p.mean.len() != dim {
                return Err(Error::input(format!(
                    "prior mean has dimension {}, data has {}",
                    p.mean.len(),
                    dim
                )));
            }
        }
        Ok(DatasetTarget {
            data,
            batch,
            likelihood_std,
            prior,
        })
    }

    /// Draws `n_points` records from `N(true_mean, scatter² I)` with a
    /// dedicated RNG stream, so the same seed reproduces the same dataset.
    pub fn synthesize(
        seed: u64,
        n_points: usize,
        true_mean: &[f64],
        scatter: f64,
        batch: usize,
        likelihood_std: f64,
    ) -> Result<Self> {
        if true_mean.is_empty() {
            return Err(Error::input("true_mean must be non-empty"));
        }
        if !(scatter >= 0.0) {
            return Err(Error::input("scatter must be non-negative"));
        }
        let mut rng = seeded_rng(seed);
        let data = (0..n_points)
            .map(|_| {
                true_mean
                    .iter()
                    .map(|m| m + scatter * standard_normal(&mut rng))
                    .collect()
            })
            .collect();
        DatasetTarget::new(data, batch, likelihood_std, None)
    }

    pub fn with_prior(mut self, prior: GaussianPrior) -> Result<Self> {
        if prior.mean.len() != self.dim() {
            return Err(Error::input(format!(
                "prior mean has dimension {}, data has {}",
                prior.mean.len(),
                self.dim()
            )));
        }
        self.prior = Some(prior);
        Ok(self)
    }

    /// Loads records from a CSV file, one comma-separated record per line.
    /// Blank lines are skipped.
    pub fn from_csv<P: AsRef<Path>>(
        path: P,
        batch: usize,
        likelihood_std: f64,
        prior: Option<GaussianPrior>,
    ) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let mut data = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let record: Result<Vec<f64>> = line
                .split(',')
                .map(|field| {
                    field.trim().parse::<f64>().map_err(|e| {
                        Error::input(format!(
                            "{}:{}: bad number {:?}: {}",
                            path.as_ref().display(),
                            lineno + 1,
                            field,
                            e
                        ))
                    })
                })
                .collect();
            data.push(record?);
        }
        DatasetTarget::new(data, batch, likelihood_std, prior)
    }

    pub fn dim(&self) -> usize {
        self.data[0].len()
    }

    pub fn num_points(&self) -> usize {
        self.data.len()
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn prior(&self) -> Option<&GaussianPrior> {
        self.prior.as_ref()
    }

    pub fn per_point_energy(&self, i: usize, x: &[f64]) -> f64 {
        let s2 = self.likelihood_std * self.likelihood_std;
        x.iter()
            .zip(&self.data[i])
            .map(|(xi, yi)| (xi - yi) * (xi - yi))
            .sum::<f64>()
            / (2.0 * s2)
    }

    fn add_per_point_grad(&self, i: usize, x: &[f64], scale: f64, out: &mut [f64]) {
        let s2 = self.likelihood_std * self.likelihood_std;
        for ((o, xi), yi) in out.iter_mut().zip(x).zip(&self.data[i]) {
            *o += scale * (xi - yi) / s2;
        }
    }

    pub fn prior_energy(&self, x: &[f64]) -> f64 {
        self.prior.as_ref().map_or(0.0, |p| p.energy(x))
    }

    fn add_prior_grad(&self, x: &[f64], out: &mut [f64]) {
        if let Some(p) = &self.prior {
            for (o, g) in out.iter_mut().zip(p.grad(x)) {
                *o += g;
            }
        }
    }

    pub fn energy_exact(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x)?;
        let sum: f64 = (0..self.data.len())
            .map(|i| self.per_point_energy(i, x))
            .sum();
        Ok(sum + self.prior_energy(x))
    }

    pub fn grad_exact(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x)?;
        let mut grad = vec![0.0; x.len()];
        for i in 0..self.data.len() {
            self.add_per_point_grad(i, x, 1.0, &mut grad);
        }
        self.add_prior_grad(x, &mut grad);
        Ok(grad)
    }

    /// Uniform batch of `batch_size` distinct record indices.
    pub fn draw_batch(&self, rng: &mut ChainRng) -> Vec<usize> {
        rand::seq::index::sample(rng, self.data.len(), self.batch).into_vec()
    }

    /// `(N/n)·Σ_{i∈batch} U_i(x)` plus the prior term.
    pub fn batch_energy(&self, x: &[f64], batch: &[usize]) -> Result<f64> {
        check_dim(self.dim(), x)?;
        self.check_batch(batch)?;
        let scale = self.data.len() as f64 / batch.len() as f64;
        let sum: f64 = batch.iter().map(|&i| self.per_point_energy(i, x)).sum();
        Ok(scale * sum + self.prior_energy(x))
    }

    /// `(N/n)·Σ_{i∈batch} ∇U_i(x)` plus the prior gradient.
    pub fn batch_grad(&self, x: &[f64], batch: &[usize]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x)?;
        self.check_batch(batch)?;
        let scale = self.data.len() as f64 / batch.len() as f64;
        let mut grad = vec![0.0; x.len()];
        for &i in batch {
            self.add_per_point_grad(i, x, scale, &mut grad);
        }
        self.add_prior_grad(x, &mut grad);
        Ok(grad)
    }

    /// One mini-batch draw evaluating energy and gradient on the same batch.
    /// With `batch == N` the full dataset is used in record order and no
    /// random draw is consumed, so the estimate equals the exact values.
    pub fn estimate(&self, x: &[f64], rng: &mut ChainRng) -> Result<Estimate> {
        if self.batch == self.data.len() {
            return Ok(Estimate {
                energy: self.energy_exact(x)?,
                grad: self.grad_exact(x)?,
            });
        }
        let batch = self.draw_batch(rng);
        Ok(Estimate {
            energy: self.batch_energy(x, &batch)?,
            grad: self.batch_grad(x, &batch)?,
        })
    }

    fn check_batch(&self, batch: &[usize]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::input("batch is empty"));
        }
        if let Some(&bad) = batch.iter().find(|&&i| i >= self.data.len()) {
            return Err(Error::input(format!(
                "batch index {} out of range for {} records",
                bad,
                self.data.len()
            )));
        }
        Ok(())
    }
}

/// Control-variate anchor for the variance-reduced energy estimator.
#[derive(Clone)]
pub struct VRState {
    anchor: Vec<f64>,
    anchor_full_energy: f64,
    anchor_per_point: Vec<f64>,
    update_period: usize,
}

impl fmt::Debug for VRState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VRState")
            .field("anchor", &self.anchor)
            .field("anchor_full_energy", &self.anchor_full_energy)
            .field("cached_points", &self.anchor_per_point.len())
            .field("update_period", &self.update_period)
            .finish()
    }
}

impl VRState {
    /// State with no anchor yet; `vr_energy` errors until the first refresh.
    pub fn new(update_period: usize) -> Result<Self> {
        if update_period == 0 {
            return Err(Error::input("update period must be at least 1"));
        }
        Ok(VRState {
            anchor: Vec::new(),
            anchor_full_energy: 0.0,
            anchor_per_point: Vec::new(),
            update_period,
        })
    }

    pub fn initialized(target: &DatasetTarget, x: &[f64], update_period: usize) -> Result<Self> {
        let mut vr = VRState::new(update_period)?;
        vr.set_anchor(target, x)?;
        Ok(vr)
    }

    pub fn is_initialized(&self) -> bool {
        !self.anchor.is_empty()
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    pub fn anchor_full_energy(&self) -> f64 {
        self.anchor_full_energy
    }

    pub fn update_period(&self) -> usize {
        self.update_period
    }

    fn set_anchor(&mut self, target: &DatasetTarget, x: &[f64]) -> Result<()> {
        check_dim(target.dim(), x)?;
        self.anchor = x.to_vec();
        self.anchor_per_point = (0..target.num_points())
            .map(|i| target.per_point_energy(i, x))
            .collect();
        // summed from the cache so the two fields agree bit-exactly
        self.anchor_full_energy = self.anchor_per_point.iter().sum();
        Ok(())
    }
}

/// Variance-reduced energy estimate
/// `(N/n)·Σ_{i∈batch}(U_i(x) − U_i(anchor)) + anchor_full_energy`,
/// with the same batch evaluating both the current and the anchor terms.
/// The prior term is not included; callers that need the posterior energy
/// add `target.prior_energy(x)` on top.
pub fn vr_energy(
    target: &DatasetTarget,
    vr: &VRState,
    x: &[f64],
    batch: &[usize],
) -> Result<f64> {
    if !vr.is_initialized() {
        return Err(Error::state("variance-reduction anchor not initialized"));
    }
    check_dim(target.dim(), x)?;
    target.check_batch(batch)?;
    let scale = target.num_points() as f64 / batch.len() as f64;
    let sum: f64 = batch
        .iter()
        .map(|&i| target.per_point_energy(i, x) - vr.anchor_per_point[i])
        .sum();
    Ok(scale * sum + vr.anchor_full_energy)
}

/// Moves the anchor to `x` when `k mod q = 0`, recomputing the per-point
/// cache; otherwise leaves the state untouched. Returns whether a refresh
/// happened.
pub fn refresh_anchor(
    target: &DatasetTarget,
    vr: &mut VRState,
    x: &[f64],
    k: u64,
) -> Result<bool> {
    if k % vr.update_period as u64 != 0 {
        return Ok(false);
    }
    vr.set_anchor(target, x)?;
    Ok(true)
}
