//! Ground-truth oracles and run-quality metrics.
//!
//! The oracles integrate the target density on a dense grid: `bin_masses`
//! produces the per-band probability masses that both the fixed-point and
//! the mean-field oracle consume, so every derived quantity shares one
//! quadrature. Run quality is measured on a histogram grid (KL divergence
//! against the exact density), by total-variation distance of the learned
//! weights to the fixed point, and by mode coverage.

use serde::{Deserialize, Serialize};

use crate::contour::{partition_index, ContourParams, Partition};
use crate::error::{Error, Result};
use crate::rng::{standard_normal, ChainRng};
use crate::targets::Target;

/// Axis-aligned histogram grid with additive smoothing for the empirical
/// side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub cells: Vec<usize>,
    pub smoothing: f64,
}

impl GridSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, cells: Vec<usize>, smoothing: f64) -> Result<Self> {
        let spec = GridSpec {
            lower,
            upper,
            cells,
            smoothing,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.is_empty()
            || self.lower.len() != self.upper.len()
            || self.lower.len() != self.cells.len()
        {
            return Err(Error::input("grid bounds and cells must share one dimension"));
        }
        for d in 0..self.lower.len() {
            if !self.lower[d].is_finite() || !self.upper[d].is_finite() {
                return Err(Error::input("grid bounds must be finite"));
            }
            if self.lower[d] >= self.upper[d] {
                return Err(Error::input(format!(
                    "grid dimension {}: lower {} not below upper {}",
                    d, self.lower[d], self.upper[d]
                )));
            }
            if self.cells[d] < 2 {
                return Err(Error::input("grids need at least 2 cells per dimension"));
            }
        }
        if !(self.smoothing >= 0.0) {
            return Err(Error::input("grid smoothing must be nonnegative"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.iter().product()
    }

    /// Row-major cell index of `x`, or None when `x` lies outside the grid.
    /// The upper boundary belongs to the last cell of its dimension.
    pub fn cell_of(&self, x: &[f64]) -> Option<usize> {
        if x.len() != self.dim() {
            return None;
        }
        let mut cell = 0usize;
        for d in 0..self.dim() {
            if !(x[d] >= self.lower[d] && x[d] <= self.upper[d]) {
                return None;
            }
            let t = (x[d] - self.lower[d]) / (self.upper[d] - self.lower[d]);
            let idx = ((t * self.cells[d] as f64) as usize).min(self.cells[d] - 1);
            cell = cell * self.cells[d] + idx;
        }
        Some(cell)
    }

    /// Center position of a row-major cell index.
    pub fn center(&self, cell: usize) -> Vec<f64> {
        let mut rem = cell;
        let mut idx = vec![0usize; self.dim()];
        for d in (0..self.dim()).rev() {
            idx[d] = rem % self.cells[d];
            rem /= self.cells[d];
        }
        (0..self.dim())
            .map(|d| {
                let h = (self.upper[d] - self.lower[d]) / self.cells[d] as f64;
                self.lower[d] + (idx[d] as f64 + 0.5) * h
            })
            .collect()
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim())
            .map(|d| (self.upper[d] - self.lower[d]) / self.cells[d] as f64)
            .product()
    }
}

/// Exact cell probabilities: `exp(−U(center))·volume`, normalized.
pub fn truth_grid(target: &Target, grid: &GridSpec) -> Result<Vec<f64>> {
    grid.validate()?;
    let volume = grid.cell_volume();
    let mut probs = Vec::with_capacity(grid.num_cells());
    for cell in 0..grid.num_cells() {
        let u = target.energy_exact(&grid.center(cell))?;
        probs.push((-u).exp() * volume);
    }
    let total: f64 = probs.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::input(
            "grid carries no target mass; check bounds against the energy scale",
        ));
    }
    for p in probs.iter_mut() {
        *p /= total;
    }
    Ok(probs)
}

/// Streaming histogram over a grid; samples outside the grid are counted
/// but carry no mass.
#[derive(Clone, Debug)]
pub struct GridHistogram {
    grid: GridSpec,
    counts: Vec<u64>,
    in_range: u64,
    dropped: u64,
}

impl GridHistogram {
    pub fn new(grid: &GridSpec) -> Result<Self> {
        grid.validate()?;
        Ok(GridHistogram {
            counts: vec![0; grid.num_cells()],
            grid: grid.clone(),
            in_range: 0,
            dropped: 0,
        })
    }

    pub fn add(&mut self, x: &[f64]) {
        match self.grid.cell_of(x) {
            Some(cell) => {
                self.counts[cell] += 1;
                self.in_range += 1;
            }
            None => self.dropped += 1,
        }
    }

    pub fn in_range(&self) -> u64 {
        self.in_range
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// Smoothed probabilities `(count + δ)/(in_range + δ·cells)`.
    pub fn probabilities(&self) -> Result<Vec<f64>> {
        let delta = self.grid.smoothing;
        let denom = self.in_range as f64 + delta * self.counts.len() as f64;
        if !(denom > 0.0) {
            return Err(Error::input(
                "empty histogram with zero smoothing has no distribution",
            ));
        }
        Ok(self
            .counts
            .iter()
            .map(|&c| (c as f64 + delta) / denom)
            .collect())
    }
}

/// Histogram probabilities of a finished sample set.
pub fn empirical_grid(samples: &[Vec<f64>], grid: &GridSpec) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::input("no samples"));
    }
    let mut hist = GridHistogram::new(grid)?;
    for s in samples {
        hist.add(s);
    }
    hist.probabilities()
}

/// `Σ p_c·log(p_c/q_c)`; zero-probability truth cells contribute nothing,
/// and an empirical hole under truth mass returns +∞.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::input(format!(
            "distribution lengths differ: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    let mut kl = 0.0;
    for (&pc, &qc) in p.iter().zip(q) {
        if pc == 0.0 {
            continue;
        }
        if qc == 0.0 {
            return Ok(f64::INFINITY);
        }
        kl += pc * (pc / qc).ln();
    }
    Ok(kl.max(0.0))
}

/// Total-variation distance `½Σ|a−b|` between two weight vectors.
pub fn theta_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "weight vectors must share a length");
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Dense midpoint-rule grid for the oracles. Node counts are per dimension
/// and their product must reach 10^5 so oracle quadrature error stays well
/// below the tolerances it certifies.
#[derive(Clone, Debug)]
pub struct Quadrature {
    lower: Vec<f64>,
    upper: Vec<f64>,
    nodes: Vec<usize>,
}

impl Quadrature {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, nodes: Vec<usize>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() || lower.len() != nodes.len() {
            return Err(Error::input("quadrature bounds and nodes must share one dimension"));
        }
        for d in 0..lower.len() {
            if !lower[d].is_finite() || !upper[d].is_finite() || lower[d] >= upper[d] {
                return Err(Error::input("quadrature bounds must be finite and ordered"));
            }
            if nodes[d] == 0 {
                return Err(Error::input("quadrature needs nodes in every dimension"));
            }
        }
        let total: usize = nodes.iter().product();
        if total < 100_000 {
            return Err(Error::input(format!(
                "{} quadrature nodes are too few; oracles require at least 100000",
                total
            )));
        }
        Ok(Quadrature {
            lower,
            upper,
            nodes,
        })
    }

    fn dim(&self) -> usize {
        self.lower.len()
    }
}

/// Per-band masses of `π ∝ exp(−U/τ)` under the partition, normalized over
/// the quadrature box. `truncated` reports whether widening the box by 15%
/// per side would gain more than a 1e-6 mass fraction, which means the box
/// cut off part of the support.
#[derive(Clone, Debug)]
pub struct BinMasses {
    pub masses: Vec<f64>,
    pub truncated: bool,
}

pub fn bin_masses(
    target: &Target,
    partition: &Partition,
    tau: f64,
    quad: &Quadrature,
) -> Result<BinMasses> {
    if !(tau > 0.0) {
        return Err(Error::input("temperature must be positive"));
    }
    if target.dim() != quad.dim() {
        return Err(Error::input(format!(
            "quadrature dimension {} does not match target dimension {}",
            quad.dim(),
            target.dim()
        )));
    }
    let dim = quad.dim();
    let mut step = vec![0.0; dim];
    let mut ext = vec![0usize; dim];
    let mut count = vec![0usize; dim];
    for d in 0..dim {
        step[d] = (quad.upper[d] - quad.lower[d]) / quad.nodes[d] as f64;
        ext[d] = ((quad.nodes[d] as f64) * 0.15).ceil() as usize;
        count[d] = quad.nodes[d] + 2 * ext[d];
    }

    let node_pos = |idx: &[usize]| -> Vec<f64> {
        (0..dim)
            .map(|d| quad.lower[d] + (idx[d] as f64 - ext[d] as f64 + 0.5) * step[d])
            .collect()
    };
    let in_base = |idx: &[usize]| (0..dim).all(|d| idx[d] >= ext[d] && idx[d] < ext[d] + quad.nodes[d]);

    // pass 1: shared exponent shift so huge energies cannot underflow the
    // whole integral
    let mut min_u = f64::INFINITY;
    let mut idx = vec![0usize; dim];
    loop {
        let u = target.energy_exact(&node_pos(&idx))?;
        if u < min_u {
            min_u = u;
        }
        if !advance(&mut idx, &count) {
            break;
        }
    }
    if !min_u.is_finite() {
        return Err(Error::numerical("energy not finite over quadrature box", &[]));
    }

    // pass 2: accumulate per-band base mass and the extended total
    let mut masses = vec![0.0f64; partition.num_bands()];
    let mut base_total = 0.0f64;
    let mut ext_total = 0.0f64;
    let mut idx = vec![0usize; dim];
    loop {
        let x = node_pos(&idx);
        let u = target.energy_exact(&x)?;
        let w = (-(u - min_u) / tau).exp();
        ext_total += w;
        if in_base(&idx) {
            base_total += w;
            let band = partition_index(partition, u)?;
            masses[band - 1] += w;
        }
        if !advance(&mut idx, &count) {
            break;
        }
    }
    if !(base_total > 0.0) {
        return Err(Error::input("quadrature box carries no target mass"));
    }
    for m in masses.iter_mut() {
        *m /= base_total;
    }
    Ok(BinMasses {
        masses,
        truncated: base_total < (1.0 - 1e-6) * ext_total,
    })
}

/// Odometer increment over a multi-index; false once exhausted.
fn advance(idx: &mut [usize], count: &[usize]) -> bool {
    for d in (0..idx.len()).rev() {
        idx[d] += 1;
        if idx[d] < count[d] {
            return true;
        }
        idx[d] = 0;
    }
    false
}

/// `v_i^power / Σ_k v_k^power` for nonnegative inputs.
pub fn power_normalize(values: &[f64], power: f64) -> Result<Vec<f64>> {
    if !(power > 0.0) || !power.is_finite() {
        return Err(Error::input("power must be positive and finite"));
    }
    if values.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::input("values must be nonnegative"));
    }
    let powered: Vec<f64> = values
        .iter()
        .map(|&v| if v == 0.0 { 0.0 } else { v.powf(power) })
        .collect();
    let total: f64 = powered.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::input("values have no normalizable mass"));
    }
    Ok(powered.iter().map(|&v| v / total).collect())
}

/// The weight vector the adaptation converges to, plus the plain density
/// of states.
#[derive(Clone, Debug)]
pub struct FixedPoint {
    /// Normalized `masses^{1/ζ}`.
    pub theta_star: Vec<f64>,
    /// Normalized masses themselves (the ζ = 1 case).
    pub theta_inf: Vec<f64>,
    pub truncated: bool,
}

pub fn fixed_point_oracle(
    target: &Target,
    partition: &Partition,
    tau: f64,
    zeta: f64,
    quad: &Quadrature,
) -> Result<FixedPoint> {
    if !(zeta > 0.0) {
        return Err(Error::input("zeta must be positive"));
    }
    let bins = bin_masses(target, partition, tau, quad)?;
    Ok(FixedPoint {
        theta_star: power_normalize(&bins.masses, 1.0 / zeta)?,
        theta_inf: power_normalize(&bins.masses, 1.0)?,
        truncated: bins.truncated,
    })
}

/// Mean drift of the weight update at `theta`: the expectation of the
/// random field under the reweighted density `π/θ^ζ(J)`. Band membership
/// makes the integrand constant per band, so the expectation factors
/// exactly through the bin masses:
///
/// `h_i = (m_i·θ_i^{1−ζ} − θ_i·Σ_k m_k·θ_k^{1−ζ}) / Σ_k m_k·θ_k^{−ζ}`
///
/// Zero-mass bands contribute nothing regardless of their weight.
pub fn mean_field_from_masses(masses: &[f64], zeta: f64, theta: &[f64]) -> Result<Vec<f64>> {
    if masses.len() != theta.len() {
        return Err(Error::input(format!(
            "mass vector length {} does not match theta length {}",
            masses.len(),
            theta.len()
        )));
    }
    if !(zeta > 0.0) {
        return Err(Error::input("zeta must be positive"));
    }
    let sum: f64 = theta.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || theta.iter().any(|&t| !(t >= 0.0)) {
        return Err(Error::input("theta must be a probability vector"));
    }
    let mut z = 0.0;
    let mut weighted = 0.0;
    for (&m, &t) in masses.iter().zip(theta) {
        if m == 0.0 {
            continue;
        }
        if t == 0.0 {
            return Err(Error::input(
                "theta vanishes on a band with positive mass",
            ));
        }
        z += m * t.powf(-zeta);
        weighted += m * t.powf(1.0 - zeta);
    }
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::numerical("reweighted mass degenerate", &[]));
    }
    Ok(masses
        .iter()
        .zip(theta)
        .map(|(&m, &t)| {
            let own = if m == 0.0 { 0.0 } else { m * t.powf(1.0 - zeta) };
            (own - t * weighted) / z
        })
        .collect())
}

pub fn mean_field_oracle(
    target: &Target,
    partition: &Partition,
    params: &ContourParams,
    theta: &[f64],
    quad: &Quadrature,
) -> Result<Vec<f64>> {
    let bins = bin_masses(target, partition, params.tau, quad)?;
    mean_field_from_masses(&bins.masses, params.zeta, theta)
}

/// Random simplex point at total-variation distance up to `tv` from `base`,
/// perturbing only bands that carry weight clear of `floor`.
///
/// The direction is multiplicative, `delta_i = base_i·(g_i - g̅)` with the
/// mean `g̅` weighted by `base`, so it sums to zero exactly and scales down
/// near-empty bands instead of annihilating them; the scale halves until
/// every entry stays above `floor`, which a moderate `tv` never triggers.
pub fn perturb_on_simplex(
    base: &[f64],
    tv: f64,
    floor: f64,
    rng: &mut ChainRng,
) -> Result<Vec<f64>> {
    if !(tv > 0.0) || !(floor >= 0.0) {
        return Err(Error::input("perturbation needs tv > 0 and floor >= 0"));
    }
    let support: Vec<usize> = (0..base.len())
        .filter(|&i| base[i] > 10.0 * floor.max(1e-300))
        .collect();
    if support.len() < 2 {
        return Err(Error::input("perturbation needs at least two loaded bands"));
    }
    let mut delta = vec![0.0; base.len()];
    let mut weighted_mean = 0.0;
    let mut support_mass = 0.0;
    for &i in &support {
        delta[i] = standard_normal(rng);
        weighted_mean += base[i] * delta[i];
        support_mass += base[i];
    }
    weighted_mean /= support_mass;
    for &i in &support {
        delta[i] = base[i] * (delta[i] - weighted_mean);
    }
    let norm: f64 = 0.5 * delta.iter().map(|d| d.abs()).sum::<f64>();
    if norm == 0.0 {
        return Err(Error::numerical("degenerate perturbation direction", &[]));
    }
    let mut scale = tv / norm;
    for _ in 0..60 {
        let candidate: Vec<f64> = base
            .iter()
            .zip(&delta)
            .map(|(b, d)| b + scale * d)
            .collect();
        if candidate.iter().all(|&v| v >= floor) {
            return Ok(candidate);
        }
        scale /= 2.0;
    }
    Err(Error::numerical("perturbation could not respect the floor", &[]))
}

/// Metric row of one trial at one checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricPoint {
    pub round: u64,
    pub kl: f64,
    pub theta_tv: f64,
    pub messages: u64,
    pub wall_ms: u64,
}

/// One trial's metric trajectory and outcome.
#[derive(Clone, Debug)]
pub struct TrialResult {
    pub algorithm: String,
    pub seed: u64,
    pub series: Vec<MetricPoint>,
    pub final_theta: Vec<f64>,
    pub wall_ms: u64,
    pub message_scalars: u64,
    /// Error text when the trial aborted; its series covers the completed
    /// prefix.
    pub aborted: Option<String>,
}

/// Pointwise mean and standard error of one named metric across trials.
/// All trials must checkpoint at the same rounds.
pub fn trial_stats(trials: &[TrialResult], metric: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    if trials.is_empty() {
        return Err(Error::input("no trials"));
    }
    let pick: fn(&MetricPoint) -> f64 = match metric {
        "kl" => |p| p.kl,
        "theta_tv" => |p| p.theta_tv,
        other => {
            return Err(Error::input(format!(
                "unknown metric {:?}; expected \"kl\" or \"theta_tv\"",
                other
            )))
        }
    };
    let rounds: Vec<u64> = trials[0].series.iter().map(|p| p.round).collect();
    for t in trials {
        let theirs: Vec<u64> = t.series.iter().map(|p| p.round).collect();
        if theirs != rounds {
            return Err(Error::input(format!(
                "trial (seed {}) checkpoints at different rounds",
                t.seed
            )));
        }
    }
    let n = trials.len() as f64;
    let mut means = Vec::with_capacity(rounds.len());
    let mut stderrs = Vec::with_capacity(rounds.len());
    for i in 0..rounds.len() {
        let values: Vec<f64> = trials.iter().map(|t| pick(&t.series[i])).collect();
        let mean = values.iter().sum::<f64>() / n;
        let stderr = if trials.len() < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        };
        means.push(mean);
        stderrs.push(stderr);
    }
    Ok((means, stderrs))
}

/// How many of the given mode centers have at least one sample within
/// `radius` (Euclidean).
pub fn mode_coverage(samples: &[Vec<f64>], centers: &[Vec<f64>], radius: f64) -> usize {
    centers
        .iter()
        .filter(|c| {
            samples.iter().any(|s| {
                let d2: f64 = s
                    .iter()
                    .zip(c.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                d2 <= radius * radius
            })
        })
        .count()
}

/// Integer lattice `{−range..range}²`, the well centers of the 25-mode
/// target when `range = 2`.
pub fn lattice_modes(range: i32) -> Vec<Vec<f64>> {
    let mut centers = Vec::new();
    for i in -range..=range {
        for j in -range..=range {
            centers.push(vec![i as f64, j as f64]);
        }
    }
    centers
}
