//! Energy partition, self-adapting weights, random fields, and the
//! stochastic-approximation update.
//!
//! The energy axis is cut into `m` bands by the [`Partition`]; a chain's
//! stochastic energy selects a band index, the band's weight in [`Theta`]
//! scales the gradient through [`gradient_multiplier`], and visits feed back
//! into the weights through [`sa_update`]. Weights estimate the (power
//! transformed) probability mass of each energy band, so well-visited bands
//! grow and the multiplier there shrinks or turns negative, pushing chains
//! out of regions they have already covered.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Subdivision of the energy axis into `m` bands. Interior cut points
/// `u_1 < … < u_{m-1}` are finite; the outer bands extend to ±infinity.
/// Band `i` (1-based) is the left-open right-closed interval `(u_{i-1}, u_i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    cuts: Vec<f64>,
    delta_u: f64,
}

impl Partition {
    /// Builds a partition from explicit cut points. Cuts must be strictly
    /// increasing and, when there are at least two, spaced `delta_u` apart
    /// (relative tolerance 1e-12).
    pub fn from_cuts(cuts: Vec<f64>, delta_u: f64) -> Result<Self> {
        if cuts.is_empty() {
            return Err(Error::input("partition needs at least one cut point"));
        }
        if !delta_u.is_finite() || delta_u <= 0.0 {
            return Err(Error::input("partition delta_u must be positive"));
        }
        if cuts.iter().any(|u| !u.is_finite()) {
            return Err(Error::input("partition cut points must be finite"));
        }
        for w in cuts.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::input("partition cut points must be strictly increasing"));
            }
            let gap = w[1] - w[0];
            if (gap - delta_u).abs() > 1e-12 * delta_u.max(gap) {
                return Err(Error::input(format!(
                    "partition spacing {} differs from delta_u {}",
                    gap, delta_u
                )));
            }
        }
        Ok(Partition { cuts, delta_u })
    }

    /// Uniform partition with `m` bands: cuts at `first_cut + i·delta_u` for
    /// `i = 0..m-1`.
    pub fn uniform(first_cut: f64, delta_u: f64, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::input("partition needs at least 2 bands"));
        }
        let cuts = (0..m - 1)
            .map(|i| first_cut + i as f64 * delta_u)
            .collect();
        Partition::from_cuts(cuts, delta_u)
    }

    /// Number of bands `m` (one more than the number of cut points).
    pub fn num_bands(&self) -> usize {
        self.cuts.len() + 1
    }

    pub fn delta_u(&self) -> f64 {
        self.delta_u
    }

    /// Cut point `u_i` for `i` in `1..=m-1`.
    pub fn cut(&self, i: usize) -> f64 {
        self.cuts[i - 1]
    }

    pub fn cuts(&self) -> &[f64] {
        &self.cuts
    }
}

/// Band index for a scaled energy value: the unique 1-based `i` with
/// `u_{i-1} < energy <= u_i`.
pub fn partition_index(partition: &Partition, scaled_energy: f64) -> Result<usize> {
    if scaled_energy.is_nan() {
        return Err(Error::input("partition_index: energy is NaN"));
    }
    Ok(partition.cuts.partition_point(|&u| u < scaled_energy) + 1)
}

/// Self-adapting band weights: a simplex vector with a positivity floor.
/// Values are immutable snapshots; updates produce a new `Theta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    weights: Vec<f64>,
    floor: f64,
    /// Cumulative count of floor clamps applied by [`sa_update`].
    clamp_events: u64,
}

pub const DEFAULT_THETA_FLOOR: f64 = 1e-10;

impl Theta {
    /// Uniform weights `1/m` with the default floor.
    pub fn uniform(m: usize) -> Self {
        Theta {
            weights: vec![1.0 / m as f64; m],
            floor: DEFAULT_THETA_FLOOR,
            clamp_events: 0,
        }
    }

    pub fn from_weights(weights: Vec<f64>, floor: f64) -> Result<Self> {
        let theta = Theta {
            weights,
            floor,
            clamp_events: 0,
        };
        theta.validate()?;
        Ok(theta)
    }

    /// Checks the simplex invariants: sum within 1e-9 of one and every
    /// weight at or above the floor.
    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(Error::input("theta must have at least one weight"));
        }
        if !(self.floor > 0.0) {
            return Err(Error::input("theta floor must be positive"));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() >= 1e-9 {
            return Err(Error::input(format!("theta weights sum to {}, expected 1", sum)));
        }
        if self.weights.iter().any(|&w| w < self.floor || !w.is_finite()) {
            return Err(Error::input("theta weight below floor"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Weight of band `i`, 1-based.
    pub fn weight(&self, band: usize) -> f64 {
        self.weights[band - 1]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn clamp_events(&self) -> u64 {
        self.clamp_events
    }
}

/// Which random-field form drives the weight update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldVariant {
    /// Leading factor `theta(J)`; magnitude independent of `zeta`, so the
    /// update survives arbitrarily large `zeta`.
    New,
    /// Leading factor `theta(J)^zeta`; underflows to zero for large `zeta`,
    /// freezing the weights. Kept so the failure mode stays demonstrable.
    Original,
}

/// Hyperparameters shared by the contour machinery.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContourParams {
    pub zeta: f64,
    pub tau: f64,
    pub field_variant: FieldVariant,
}

impl ContourParams {
    pub fn new(zeta: f64, tau: f64, field_variant: FieldVariant) -> Result<Self> {
        if !(zeta > 0.0) || !zeta.is_finite() {
            return Err(Error::input("zeta must be positive"));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::input("tau must be positive"));
        }
        Ok(ContourParams {
            zeta,
            tau,
            field_variant,
        })
    }
}

/// Scalar multiplying the stochastic gradient for a chain whose energy fell
/// in band `band`:
///
/// `1 + (zeta·tau/delta_u)·(log theta(J) - log theta((J-1) clamped to 1))`
///
/// Negative values move the chain *up* the gradient, the escape mechanism
/// that bounces chains out of over-weighted bands.
pub fn gradient_multiplier(
    theta: &Theta,
    params: &ContourParams,
    partition: &Partition,
    band: usize,
) -> f64 {
    assert!(band >= 1 && band <= theta.len(), "band index out of range");
    let below = band.max(2) - 1;
    let log_ratio = theta.weight(band).ln() - theta.weight(below).ln();
    1.0 + params.zeta * params.tau / partition.delta_u() * log_ratio
}

/// Random field driving the weight update, current form: component `i` is
/// `theta(band)·(1_{i=band} - theta(i))`. Components sum to zero on the
/// simplex.
pub fn random_field_new(theta: &Theta, band: usize) -> Vec<f64> {
    assert!(band >= 1 && band <= theta.len(), "band index out of range");
    let lead = theta.weight(band);
    field_with_lead(theta, band, lead)
}

/// Random field with the original `theta(band)^zeta` leading factor.
pub fn random_field_original(theta: &Theta, params: &ContourParams, band: usize) -> Vec<f64> {
    assert!(band >= 1 && band <= theta.len(), "band index out of range");
    let lead = theta.weight(band).powf(params.zeta);
    field_with_lead(theta, band, lead)
}

fn field_with_lead(theta: &Theta, band: usize, lead: f64) -> Vec<f64> {
    theta
        .weights()
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let indicator = if i + 1 == band { 1.0 } else { 0.0 };
            lead * (indicator - w)
        })
        .collect()
}

fn field_lead(theta: &Theta, params: &ContourParams, band: usize) -> f64 {
    match params.field_variant {
        FieldVariant::New => theta.weight(band),
        FieldVariant::Original => theta.weight(band).powf(params.zeta),
    }
}

/// One stochastic-approximation step: averages the random fields of the
/// reported band indices and moves the weights by `omega` along the average.
///
/// The update preserves the simplex sum analytically; the floor clamp (with
/// renormalization of the unclamped mass) fires only when an entry would
/// drop below the floor, and each firing is counted in
/// [`Theta::clamp_events`].
pub fn sa_update(
    theta: &Theta,
    params: &ContourParams,
    indices: &[usize],
    omega: f64,
) -> Result<Theta> {
    if indices.is_empty() {
        return Err(Error::input("sa_update: empty index list"));
    }
    if !(omega >= 0.0) || !omega.is_finite() {
        return Err(Error::input("sa_update: omega must be nonnegative"));
    }
    let m = theta.len();
    // Group the per-chain fields by band: the average field is
    //   (1/P)·sum_p lead_p·(1_{i=J_p} - theta(i))
    // which needs only the per-band lead totals and their grand total.
    let mut lead_by_band = vec![0.0f64; m];
    let mut lead_total = 0.0f64;
    for &band in indices {
        if band < 1 || band > m {
            return Err(Error::input(format!(
                "sa_update: band index {} outside 1..={}",
                band, m
            )));
        }
        let lead = field_lead(theta, params, band);
        lead_by_band[band - 1] += lead;
        lead_total += lead;
    }
    let inv_p = 1.0 / indices.len() as f64;
    let mut weights: Vec<f64> = theta
        .weights()
        .iter()
        .zip(&lead_by_band)
        .map(|(&w, &bump)| w + omega * inv_p * (bump - w * lead_total))
        .collect();

    let mut clamp_events = theta.clamp_events;
    loop {
        let clamped: Vec<usize> = (0..m).filter(|&i| weights[i] < theta.floor).collect();
        if clamped.is_empty() {
            break;
        }
        clamp_events += clamped.len() as u64;
        // pin offenders to the floor and rescale the rest so the sum stays 1
        let pinned_mass = theta.floor * clamped.len() as f64;
        let free_mass: f64 = (0..m)
            .filter(|i| !clamped.contains(i))
            .map(|i| weights[i])
            .sum();
        let scale = (1.0 - pinned_mass) / free_mass;
        for i in 0..m {
            if clamped.contains(&i) {
                weights[i] = theta.floor;
            } else {
                weights[i] *= scale;
            }
        }
        if scale >= 1.0 {
            break;
        }
    }

    Ok(Theta {
        weights,
        floor: theta.floor,
        clamp_events,
    })
}

/// Which interpolation `evaluate_psi` applies inside a band.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PsiVariant {
    /// Log-linear interpolation between band weights; continuous at cuts.
    PiecewiseExp,
    /// The band weight itself.
    PiecewiseConst,
}

/// Weight surrogate at energy `u`.
///
/// `PiecewiseConst` returns `theta(J(u))`. `PiecewiseExp` returns
/// `theta(J-1)·exp((log theta(J) - log theta(J-1))·(u - u_{J-1})/delta_u)`,
/// clamping `J-1` to the first band at the lower boundary.
pub fn evaluate_psi(
    theta: &Theta,
    partition: &Partition,
    u: f64,
    variant: PsiVariant,
) -> Result<f64> {
    if !u.is_finite() {
        return Err(Error::input("evaluate_psi: u must be finite"));
    }
    let band = partition_index(partition, u)?;
    match variant {
        PsiVariant::PiecewiseConst => Ok(theta.weight(band)),
        PsiVariant::PiecewiseExp => {
            if band == 1 {
                // the band below is clamped to band 1, so the log slope is
                // zero and the value is theta(1) throughout
                return Ok(theta.weight(1));
            }
            let below = theta.weight(band - 1);
            let slope = theta.weight(band).ln() - below.ln();
            let frac = (u - partition.cut(band - 1)) / partition.delta_u();
            Ok(below * (slope * frac).exp())
        }
    }
}
