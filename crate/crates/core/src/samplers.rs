//! Per-step sampler kernels and the interacting round.
//!
//! All kernels share one discipline: every random draw a chain makes comes
//! from the chain's own RNG stream, in a fixed order (estimator draws first,
//! then one normal per coordinate). This makes trajectories bit-reproducible
//! and lets the contour kernel reduce exactly to plain Langevin when the
//! weights are uniform.

use std::f64::consts::PI;

use rand::Rng;

use crate::contour::{gradient_multiplier, partition_index, sa_update, ContourParams, Partition, Theta};
use crate::error::{Error, Result};
use crate::exec::map_items;
use crate::rng::{seeded_rng, standard_normal, ChainRng};
use crate::targets::{refresh_anchor, vr_energy, Target, VRState};

/// One sampler chain: a position, its iteration counter, a dedicated RNG
/// stream, the optional variance-reduction anchor, and the temperature-ladder
/// slot used by replica exchange.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub x: Vec<f64>,
    pub k: u64,
    pub rng: ChainRng,
    pub vr: Option<VRState>,
    pub temperature_slot: usize,
}

impl ChainState {
    pub fn new(x: Vec<f64>, seed: u64) -> Self {
        ChainState {
            x,
            k: 0,
            rng: seeded_rng(seed),
            vr: None,
            temperature_slot: 0,
        }
    }

    pub fn with_vr(mut self, vr: VRState) -> Self {
        self.vr = Some(vr);
        self
    }

    pub fn with_slot(mut self, slot: usize) -> Self {
        self.temperature_slot = slot;
        self
    }
}

/// Learning-rate sequence ε_k, indexed from k = 1.
#[derive(Clone, Debug)]
pub enum LearningRateSchedule {
    Constant {
        eps0: f64,
    },
    /// `eps0 · (offset / (offset + k))^gamma`
    PolynomialDecay {
        eps0: f64,
        gamma: f64,
        offset: f64,
    },
    /// Cosine restarts over `cycles` cycles spanning `total_iters` steps.
    CosineCyclical {
        eps0: f64,
        total_iters: u64,
        cycles: u64,
    },
}

impl LearningRateSchedule {
    pub fn eps_at(&self, k: u64) -> Result<f64> {
        match *self {
            LearningRateSchedule::Constant { eps0 } => {
                check_eps0(eps0)?;
                Ok(eps0)
            }
            LearningRateSchedule::PolynomialDecay { eps0, gamma, offset } => {
                check_eps0(eps0)?;
                if !(gamma >= 0.0) || !(offset > 0.0) {
                    return Err(Error::input(
                        "polynomial decay needs gamma >= 0 and offset > 0",
                    ));
                }
                Ok(eps0 * (offset / (offset + k as f64)).powf(gamma))
            }
            LearningRateSchedule::CosineCyclical {
                eps0,
                total_iters,
                cycles,
            } => cyc_lr(k, total_iters, cycles, eps0),
        }
    }
}

fn check_eps0(eps0: f64) -> Result<()> {
    if !(eps0 > 0.0) {
        return Err(Error::input("learning rate must be positive"));
    }
    Ok(())
}

/// Cosine cyclical learning rate:
/// `(eps0/2)·(cos(π·((k−1) mod L)/L) + 1)` with `L = ⌈total/cycles⌉`.
pub fn cyc_lr(k: u64, total_iters: u64, cycles: u64, eps0: f64) -> Result<f64> {
    check_eps0(eps0)?;
    if total_iters == 0 || cycles == 0 {
        return Err(Error::input("cyclical schedule needs total_iters and cycles >= 1"));
    }
    if k < 1 || k > total_iters {
        return Err(Error::input(format!(
            "iteration {} outside schedule range 1..={}",
            k, total_iters
        )));
    }
    let cycle_len = total_iters.div_ceil(cycles);
    let pos = (k - 1) % cycle_len;
    Ok(eps0 / 2.0 * ((PI * pos as f64 / cycle_len as f64).cos() + 1.0))
}

/// Weight-update step size ω_k = min(cap, 1/(k^alpha + offset)).
#[derive(Clone, Debug, PartialEq)]
pub struct StepSizeSchedule {
    cap: f64,
    alpha: f64,
    offset: f64,
}

impl StepSizeSchedule {
    pub fn new(cap: f64, alpha: f64, offset: f64) -> Result<Self> {
        if !(cap > 0.0) {
            return Err(Error::input("step-size cap must be positive"));
        }
        if !(alpha > 0.5 && alpha <= 1.0) {
            return Err(Error::input(format!(
                "step-size decay exponent {} outside (0.5, 1]",
                alpha
            )));
        }
        if !(offset >= 0.0) {
            return Err(Error::input("step-size offset must be nonnegative"));
        }
        Ok(StepSizeSchedule { cap, alpha, offset })
    }

    pub fn omega_at(&self, k: u64) -> f64 {
        self.cap.min(1.0 / ((k as f64).powf(self.alpha) + self.offset))
    }
}

fn check_step_params(eps: f64, tau: f64) -> Result<()> {
    if !(eps > 0.0) {
        return Err(Error::input("step size must be positive"));
    }
    if !(tau >= 0.0) {
        return Err(Error::input("temperature must be nonnegative"));
    }
    Ok(())
}

fn check_grad(grad: &[f64], x: &[f64]) -> Result<()> {
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::numerical("non-finite stochastic gradient", x));
    }
    Ok(())
}

/// Applies the Langevin update `x' = x − eps·drift + √(2·tau·eps)·w` in
/// place, drawing one standard normal per coordinate, and bumps `k`.
fn commit_step(state: &mut ChainState, drift: &[f64], eps: f64, tau: f64) -> Result<()> {
    let noise_scale = (2.0 * tau * eps).sqrt();
    let mut next = Vec::with_capacity(state.x.len());
    for (xi, di) in state.x.iter().zip(drift) {
        next.push(xi - eps * di + noise_scale * standard_normal(&mut state.rng));
    }
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("position diverged", &state.x));
    }
    state.x = next;
    state.k += 1;
    Ok(())
}

/// One plain stochastic-gradient Langevin step.
pub fn sgld_step(state: &mut ChainState, target: &Target, eps: f64, tau: f64) -> Result<()> {
    check_step_params(eps, tau)?;
    let est = target.estimate(&state.x, &mut state.rng)?;
    check_grad(&est.grad, &state.x)?;
    commit_step(state, &est.grad, eps, tau)
}

/// One contour-guided step: estimate the scaled energy, locate its band,
/// scale the gradient by the band multiplier, then take the Langevin step.
/// Returns the band index used, for the weight update.
///
/// When the chain carries a variance-reduction anchor the energy comes from
/// the anchored estimator (plus the prior term, which the anchored estimator
/// excludes) and the gradient from the same mini-batch; the anchor refreshes
/// whenever `k mod q = 0`, so a fresh chain anchors at its start position.
pub fn csgld_step(
    state: &mut ChainState,
    theta: &Theta,
    partition: &Partition,
    params: &ContourParams,
    target: &Target,
    eps: f64,
    tau: f64,
) -> Result<usize> {
    check_step_params(eps, tau)?;
    let (energy, grad) = match &mut state.vr {
        Some(vr) => {
            let dataset = match target {
                Target::Dataset(d) => d,
                Target::Analytic(_) => {
                    return Err(Error::state(
                        "variance reduction requires a dataset target",
                    ))
                }
            };
            refresh_anchor(dataset, vr, &state.x, state.k)?;
            let batch = dataset.draw_batch(&mut state.rng);
            let energy =
                vr_energy(dataset, vr, &state.x, &batch)? + dataset.prior_energy(&state.x);
            let grad = dataset.batch_grad(&state.x, &batch)?;
            (energy, grad)
        }
        None => {
            let est = target.estimate(&state.x, &mut state.rng)?;
            (est.energy, est.grad)
        }
    };
    if !energy.is_finite() {
        return Err(Error::numerical("non-finite energy estimate", &state.x));
    }
    check_grad(&grad, &state.x)?;
    let band = partition_index(partition, energy)?;
    let multiplier = gradient_multiplier(theta, params, partition, band);
    let drift: Vec<f64> = grad.iter().map(|g| multiplier * g).collect();
    commit_step(state, &drift, eps, tau)?;
    Ok(band)
}

/// Steps every chain once against the same frozen `theta` snapshot and
/// returns the band indices in chain order. Chains run via the execution
/// lane, so results are identical sequential or parallel.
pub fn step_chains(
    states: &mut [ChainState],
    theta: &Theta,
    partition: &Partition,
    params: &ContourParams,
    target: &Target,
    eps: f64,
    tau: f64,
) -> Result<Vec<usize>> {
    let results = map_items(states, |s| {
        csgld_step(s, theta, partition, params, target, eps, tau)
    });
    results.into_iter().collect()
}

/// Steps every chain with the plain kernel (no contour feedback).
pub fn sgld_round(states: &mut [ChainState], target: &Target, eps: f64, tau: f64) -> Result<()> {
    let results = map_items(states, |s| sgld_step(s, target, eps, tau));
    results.into_iter().collect()
}

/// One interacting round: all chains step against the same `theta`
/// snapshot, then their band indices feed a single averaged weight update
/// with step size `omega`. On any chain error the update is skipped, so
/// `theta` never reflects a partial round.
pub fn icsgld_round(
    states: &mut [ChainState],
    theta: &Theta,
    partition: &Partition,
    params: &ContourParams,
    target: &Target,
    eps: f64,
    tau: f64,
    omega: f64,
) -> Result<Theta> {
    let indices = step_chains(states, theta, partition, params, target, eps, tau)?;
    sa_update(theta, params, &indices, omega)
}

/// Per-slot step sizes and temperatures for replica exchange, slot 0 the
/// coldest.
#[derive(Clone, Debug)]
pub struct TemperatureLadder {
    eps: Vec<f64>,
    tau: Vec<f64>,
}

impl TemperatureLadder {
    pub fn new(eps: Vec<f64>, tau: Vec<f64>) -> Result<Self> {
        if eps.is_empty() || eps.len() != tau.len() {
            return Err(Error::input(
                "ladder needs matching nonempty step-size and temperature lists",
            ));
        }
        if eps.iter().any(|&e| !(e > 0.0)) || tau.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::input("ladder entries must be positive"));
        }
        Ok(TemperatureLadder { eps, tau })
    }

    pub fn len(&self) -> usize {
        self.eps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eps.is_empty()
    }

    pub fn eps(&self, slot: usize) -> f64 {
        self.eps[slot]
    }

    pub fn tau(&self, slot: usize) -> f64 {
        self.tau[slot]
    }
}

/// Swap bookkeeping for replica exchange: a dedicated RNG for swap decisions
/// and correction probes, the bias correction F, and acceptance counters.
#[derive(Clone, Debug)]
pub struct SwapState {
    rng: ChainRng,
    correction: f64,
    correction_interval: u64,
    probe_draws: usize,
    swap_interval: u64,
    pub swaps_attempted: u64,
    pub swaps_accepted: u64,
}

impl SwapState {
    /// Defaults: F = 30, re-estimated every 100 rounds from 16 probe draws,
    /// swaps attempted every round.
    pub fn new(seed: u64) -> Self {
        SwapState {
            rng: seeded_rng(seed),
            correction: 30.0,
            correction_interval: 100,
            probe_draws: 16,
            swap_interval: 1,
            swaps_attempted: 0,
            swaps_accepted: 0,
        }
    }

    pub fn with_correction(mut self, f: f64) -> Self {
        self.correction = f;
        self
    }

    pub fn with_correction_interval(mut self, rounds: u64) -> Self {
        self.correction_interval = rounds.max(1);
        self
    }

    pub fn with_swap_interval(mut self, rounds: u64) -> Self {
        self.swap_interval = rounds.max(1);
        self
    }

    pub fn correction(&self) -> f64 {
        self.correction
    }
}

/// Acceptance probability for swapping a (colder, hotter) pair:
/// `min{1, exp((1/tau_lo − 1/tau_hi)·(e_lo − e_hi − f))}`.
pub fn swap_probability(tau_lo: f64, tau_hi: f64, e_lo: f64, e_hi: f64, f: f64) -> f64 {
    let arg = (1.0 / tau_lo - 1.0 / tau_hi) * (e_lo - e_hi - f);
    arg.exp().min(1.0)
}

/// One replica-exchange round: every chain takes a plain Langevin step at
/// its slot's (ε, τ), then adjacent slot pairs attempt position swaps with
/// parity alternating by round. The correction F is re-estimated on
/// schedule as the sample variance of repeated energy probes at the coldest
/// chain's position: with an exact energy the probes agree and F falls to
/// zero, with a noisy estimator F tracks the noise scale the swap test must
/// discount.
pub fn resgld_round(
    states: &mut [ChainState],
    target: &Target,
    ladder: &TemperatureLadder,
    swap: &mut SwapState,
    round: u64,
) -> Result<()> {
    if states.is_empty() {
        return Err(Error::input("no chains"));
    }
    let mut slot_of = vec![usize::MAX; ladder.len()];
    for (i, s) in states.iter().enumerate() {
        if s.temperature_slot >= ladder.len() {
            return Err(Error::input(format!(
                "temperature slot {} outside ladder of {}",
                s.temperature_slot,
                ladder.len()
            )));
        }
        if slot_of[s.temperature_slot] != usize::MAX {
            return Err(Error::input(format!(
                "duplicate temperature slot {}",
                s.temperature_slot
            )));
        }
        slot_of[s.temperature_slot] = i;
    }

    let results = map_items(states, |s| {
        sgld_step(
            s,
            target,
            ladder.eps(s.temperature_slot),
            ladder.tau(s.temperature_slot),
        )
    });
    results.into_iter().collect::<Result<()>>()?;

    if round > 0 && round % swap.correction_interval == 0 {
        let coldest = slot_of[0];
        if coldest != usize::MAX {
            let mut probes = Vec::with_capacity(swap.probe_draws);
            for _ in 0..swap.probe_draws {
                probes.push(target.energy_stochastic(&states[coldest].x, &mut swap.rng)?);
            }
            let mean = probes.iter().sum::<f64>() / probes.len() as f64;
            swap.correction = probes
                .iter()
                .map(|e| (e - mean) * (e - mean))
                .sum::<f64>()
                / (probes.len() - 1) as f64;
        }
    }

    if round % swap.swap_interval != 0 {
        return Ok(());
    }
    let parity = ((round / swap.swap_interval) % 2) as usize;
    let mut lo_slot = parity;
    while lo_slot + 1 < ladder.len() {
        let (a, b) = (slot_of[lo_slot], slot_of[lo_slot + 1]);
        if a == usize::MAX || b == usize::MAX {
            lo_slot += 2;
            continue;
        }
        let e_lo = target.energy_stochastic(&states[a].x, &mut swap.rng)?;
        let e_hi = target.energy_stochastic(&states[b].x, &mut swap.rng)?;
        let p = swap_probability(
            ladder.tau(lo_slot),
            ladder.tau(lo_slot + 1),
            e_lo,
            e_hi,
            swap.correction,
        );
        swap.swaps_attempted += 1;
        if swap.rng.gen::<f64>() < p {
            swap.swaps_accepted += 1;
            // positions trade places; streams, counters and slots stay put
            let (lo, hi) = if a < b {
                let (head, tail) = states.split_at_mut(b);
                (&mut head[a].x, &mut tail[0].x)
            } else {
                let (head, tail) = states.split_at_mut(a);
                (&mut tail[0].x, &mut head[b].x)
            };
            std::mem::swap(lo, hi);
        }
        lo_slot += 2;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contour::FieldVariant;
    use crate::rng::split_seed;
    use crate::targets::{AnalyticTarget, DatasetTarget, VRState};

    fn quadratic() -> Target {
        Target::Analytic(AnalyticTarget::custom(
            1,
            |x| 0.5 * x[0] * x[0],
            |x| vec![x[0]],
        ))
    }

    fn default_params() -> ContourParams {
        ContourParams::new(1.0, 1.0, FieldVariant::New).unwrap()
    }

    #[test]
    fn cyc_lr_examples() {
        let eps0 = 0.01;
        // cycle start
        assert_eq!(cyc_lr(1, 100, 10, eps0).unwrap(), eps0);
        // cycle midpoint: pos 5 of 10
        let mid = cyc_lr(6, 100, 10, eps0).unwrap();
        assert!((mid - eps0 / 2.0).abs() < 1e-15);
        // just before cycle end
        let tail = cyc_lr(10, 100, 10, eps0).unwrap();
        assert!(tail < 0.03 * eps0);
        // second cycle restarts
        assert_eq!(cyc_lr(11, 100, 10, eps0).unwrap(), eps0);
        // range errors
        assert!(cyc_lr(0, 100, 10, eps0).is_err());
        assert!(cyc_lr(101, 100, 10, eps0).is_err());
        assert!(cyc_lr(1, 100, 0, eps0).is_err());
        assert!(cyc_lr(1, 100, 10, 0.0).is_err());
    }

    #[test]
    fn schedule_shapes() {
        let c = LearningRateSchedule::Constant { eps0: 0.2 };
        assert_eq!(c.eps_at(1).unwrap(), 0.2);
        assert_eq!(c.eps_at(999).unwrap(), 0.2);

        let p = LearningRateSchedule::PolynomialDecay {
            eps0: 0.2,
            gamma: 0.55,
            offset: 10.0,
        };
        let e1 = p.eps_at(1).unwrap();
        let e100 = p.eps_at(100).unwrap();
        assert!(e1 < 0.2 && e100 < e1 && e100 > 0.0);
    }

    #[test]
    fn step_size_schedule_caps_then_decays() {
        let s = StepSizeSchedule::new(3e-3, 0.6, 100.0).unwrap();
        assert_eq!(s.omega_at(1), 3e-3);
        let far = s.omega_at(10_000_000);
        assert!((far - 1.0 / (1e7f64.powf(0.6) + 100.0)).abs() < 1e-18);
        let mut prev = f64::INFINITY;
        for k in 1..2000 {
            let w = s.omega_at(k);
            assert!(w <= prev && w > 0.0);
            prev = w;
        }
    }

    #[test]
    fn step_size_schedule_rejects_bad_exponent() {
        for alpha in [0.4, 0.5, 1.2] {
            let err = StepSizeSchedule::new(1e-3, alpha, 0.0).unwrap_err();
            assert!(err.to_string().contains("(0.5, 1]"), "{}", err);
        }
        assert!(StepSizeSchedule::new(1e-3, 1.0, 0.0).is_ok());
    }

    #[test]
    fn sgld_noiseless_limit_is_gradient_descent() {
        let t = quadratic();
        let mut s = ChainState::new(vec![1.0], 7);
        sgld_step(&mut s, &t, 0.1, 0.0).unwrap();
        assert!((s.x[0] - 0.9).abs() < 1e-15);
        assert_eq!(s.k, 1);
    }

    #[test]
    fn sgld_displacement_vanishes_with_eps() {
        let t = quadratic();
        let mut last = f64::INFINITY;
        for eps in [1e-2, 1e-4, 1e-6] {
            let mut s = ChainState::new(vec![1.0], 7);
            sgld_step(&mut s, &t, eps, 1.0).unwrap();
            let disp = (s.x[0] - 1.0).abs();
            assert!(disp < last);
            last = disp;
        }
    }

    #[test]
    fn sgld_matches_ar1_stationary_variance() {
        // U = x²/2 with exact gradient makes SGLD the AR(1) process
        // x' = (1−ε)x + √(2τε)·w, stationary variance 2τε/(1−(1−ε)²).
        let t = quadratic();
        let (eps, tau) = (0.1, 1.0);
        let expected = 2.0 * tau * eps / (1.0 - (1.0 - eps) * (1.0 - eps));
        let mut s = ChainState::new(vec![0.0], 99);
        for _ in 0..10_000 {
            sgld_step(&mut s, &t, eps, tau).unwrap();
        }
        let n = 1_000_000u64;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..n {
            sgld_step(&mut s, &t, eps, tau).unwrap();
            sum += s.x[0];
            sumsq += s.x[0] * s.x[0];
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(
            (var - expected).abs() / expected < 0.05,
            "sample variance {} vs stationary {}",
            var,
            expected
        );
    }

    #[test]
    fn sgld_rejects_bad_step_params() {
        let t = quadratic();
        let mut s = ChainState::new(vec![1.0], 7);
        assert!(sgld_step(&mut s, &t, 0.0, 1.0).is_err());
        assert!(sgld_step(&mut s, &t, 0.1, -1.0).is_err());
        assert_eq!(s.k, 0);
    }

    #[test]
    fn diverging_position_reports_numerical_error() {
        let t = Target::Analytic(AnalyticTarget::custom(
            1,
            |_| 0.0,
            |_| vec![f64::INFINITY],
        ));
        let mut s = ChainState::new(vec![2.5], 7);
        let err = sgld_step(&mut s, &t, 0.1, 1.0).unwrap_err();
        match err {
            Error::Numerical { position, .. } => assert_eq!(position, vec![2.5]),
            other => panic!("expected numerical error, got {:?}", other),
        }
        assert_eq!(s.k, 0);
    }

    #[test]
    fn csgld_with_uniform_theta_reduces_to_sgld() {
        let t = Target::Analytic(AnalyticTarget::multimodal25().with_noise(0.5, 0.5));
        let partition = Partition::uniform(-4.0, 0.5, 20).unwrap();
        let theta = Theta::uniform(20);
        let params = default_params();
        let mut a = ChainState::new(vec![0.3, -0.7], 21);
        let mut b = ChainState::new(vec![0.3, -0.7], 21);
        for _ in 0..1000 {
            csgld_step(&mut a, &theta, &partition, &params, &t, 1e-3, 1.0).unwrap();
            sgld_step(&mut b, &t, 1e-3, 1.0).unwrap();
            assert_eq!(a.x, b.x);
        }
        assert_eq!(a.k, b.k);
    }

    #[test]
    fn negative_multiplier_climbs_the_gradient() {
        // energy 5.5 at x=1 lands in band 2; band 1 below carries far more
        // weight, so the log ratio is deeply negative, the multiplier flips
        // sign, and the noiseless step moves away from the minimum.
        let t = Target::Analytic(AnalyticTarget::custom(
            1,
            |x| 0.5 * x[0] * x[0] + 5.0,
            |x| vec![x[0]],
        ));
        let partition = Partition::from_cuts(vec![0.0], 1.0).unwrap();
        let theta = Theta::from_weights(vec![0.99, 0.01], 1e-10).unwrap();
        let params = ContourParams::new(100.0, 1.0, FieldVariant::New).unwrap();
        let mut s = ChainState::new(vec![1.0], 3);
        let band = csgld_step(&mut s, &theta, &partition, &params, &t, 1e-3, 0.0).unwrap();
        assert_eq!(band, 2);
        assert!(
            gradient_multiplier(&theta, &params, &partition, 2) < 0.0
        );
        assert!(s.x[0] > 1.0, "escape move should climb, got {}", s.x[0]);
    }

    #[test]
    fn csgld_vr_uses_exact_energy_at_anchor() {
        let dataset = DatasetTarget::synthesize(50, 1000, &[2.0], 1.0, 100, 1.0).unwrap();
        let x0 = vec![0.5];
        let exact = dataset.energy_exact(&x0).unwrap();
        let t = Target::Dataset(dataset);
        let partition = Partition::uniform(400.0, 25.0, 40).unwrap();
        let theta = Theta::uniform(40);
        let params = default_params();
        // fresh chain: k = 0, so the first step anchors at x0 and the band
        // comes from the exact full energy no matter which batch is drawn
        for seed in 0..20 {
            let mut s = ChainState::new(x0.clone(), seed).with_vr(VRState::new(25).unwrap());
            let band =
                csgld_step(&mut s, &theta, &partition, &params, &t, 1e-6, 1.0).unwrap();
            assert_eq!(band, partition_index(&partition, exact).unwrap());
        }
    }

    #[test]
    fn vr_on_analytic_target_is_a_state_error() {
        let t = Target::Analytic(AnalyticTarget::multimodal25());
        let partition = Partition::uniform(-4.0, 0.5, 20).unwrap();
        let theta = Theta::uniform(20);
        let mut s =
            ChainState::new(vec![0.0, 0.0], 1).with_vr(VRState::new(10).unwrap());
        let err = csgld_step(
            &mut s,
            &theta,
            &partition,
            &default_params(),
            &t,
            1e-3,
            1.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn icsgld_round_single_chain_matches_csgld_step() {
        let t = Target::Analytic(AnalyticTarget::multimodal25().with_noise(0.3, 0.3));
        let partition = Partition::uniform(-4.0, 0.5, 20).unwrap();
        let theta = Theta::uniform(20);
        let params = default_params();

        let mut solo = ChainState::new(vec![0.1, 0.2], 5);
        let mut round = vec![ChainState::new(vec![0.1, 0.2], 5)];
        let band = csgld_step(&mut solo, &theta, &partition, &params, &t, 1e-3, 1.0).unwrap();
        let expected = sa_update(&theta, &params, &[band], 0.01).unwrap();
        let got =
            icsgld_round(&mut round, &theta, &partition, &params, &t, 1e-3, 1.0, 0.01).unwrap();
        assert_eq!(round[0].x, solo.x);
        assert_eq!(got.weights(), expected.weights());
    }

    #[test]
    fn icsgld_same_bin_matches_single_index_update() {
        // one huge band: every chain lands in band 1, so the averaged field
        // equals the single-index field
        let t = quadratic();
        let partition = Partition::from_cuts(vec![1e9], 1e9).unwrap();
        let theta = Theta::from_weights(vec![0.3, 0.7], 1e-10).unwrap();
        let params = default_params();
        let mut states: Vec<ChainState> = (0..4)
            .map(|p| ChainState::new(vec![p as f64 * 0.1], split_seed(77, p)))
            .collect();
        let got =
            icsgld_round(&mut states, &theta, &partition, &params, &t, 1e-3, 1.0, 0.05).unwrap();
        let expected = sa_update(&theta, &params, &[1], 0.05).unwrap();
        assert_eq!(got.weights(), expected.weights());
    }

    #[test]
    fn icsgld_rounds_are_deterministic() {
        let t = Target::Analytic(AnalyticTarget::multimodal25().with_noise(0.4, 0.4));
        let partition = Partition::uniform(-4.0, 0.5, 20).unwrap();
        let params = default_params();
        let run = || {
            let mut theta = Theta::uniform(20);
            let mut states: Vec<ChainState> = (0..4)
                .map(|p| {
                    ChainState::new(vec![0.0, 0.0], split_seed(123, p))
                })
                .collect();
            for _ in 0..50 {
                theta =
                    icsgld_round(&mut states, &theta, &partition, &params, &t, 1e-3, 1.0, 0.01)
                        .unwrap();
            }
            (states.iter().map(|s| s.x.clone()).collect::<Vec<_>>(), theta)
        };
        let (xs1, theta1) = run();
        let (xs2, theta2) = run();
        assert_eq!(xs1, xs2);
        assert_eq!(theta1.weights(), theta2.weights());
    }

    #[test]
    fn icsgld_error_leaves_theta_unused() {
        let t = Target::Analytic(AnalyticTarget::custom(
            1,
            |_| 0.0,
            |_| vec![f64::NAN],
        ));
        let partition = Partition::from_cuts(vec![0.0], 1.0).unwrap();
        let theta = Theta::uniform(2);
        let mut states = vec![ChainState::new(vec![0.0], 1)];
        let err = icsgld_round(
            &mut states,
            &theta,
            &partition,
            &default_params(),
            &t,
            1e-3,
            1.0,
            0.01,
        );
        assert!(err.is_err());
        theta.validate().unwrap();
        assert_eq!(theta.weights(), Theta::uniform(2).weights());
    }

    #[test]
    fn swap_probability_limits() {
        // equal temperatures: exponent is zero
        assert_eq!(swap_probability(2.0, 2.0, 10.0, -5.0, 30.0), 1.0);
        // identical energies with no correction
        assert_eq!(swap_probability(1.0, 2.0, 7.0, 7.0, 0.0), 1.0);
        // huge correction suppresses swaps
        assert!(swap_probability(1.0, 2.0, 7.0, 7.0, 1e6) < 1e-100);
        // favorable energy gap accepts
        assert_eq!(swap_probability(1.0, 2.0, 10.0, 0.0, 0.0), 1.0);
    }

    fn ladder_chains(n: usize, seed: u64) -> Vec<ChainState> {
        (0..n)
            .map(|p| ChainState::new(vec![p as f64], split_seed(seed, p as u64)).with_slot(p))
            .collect()
    }

    #[test]
    fn resgld_equal_temperatures_always_swap() {
        let t = quadratic();
        let ladder = TemperatureLadder::new(vec![1e-3, 1e-3], vec![1.0, 1.0]).unwrap();
        let mut states = ladder_chains(2, 4);
        let mut swap = SwapState::new(11).with_correction(0.0);
        for round in 0..20 {
            resgld_round(&mut states, &t, &ladder, &mut swap, round).unwrap();
        }
        // parity alternates, so pair (0,1) is attempted on even rounds only
        assert_eq!(swap.swaps_attempted, 10);
        assert_eq!(swap.swaps_accepted, 10);
        assert_eq!(states[0].k, 20);
    }

    #[test]
    fn resgld_huge_correction_suppresses_swaps() {
        let t = quadratic();
        let ladder =
            TemperatureLadder::new(vec![1e-3, 2e-3, 3e-3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut states = ladder_chains(3, 4);
        let mut swap = SwapState::new(11).with_correction(1e9).with_correction_interval(1_000_000);
        for round in 0..50 {
            resgld_round(&mut states, &t, &ladder, &mut swap, round).unwrap();
        }
        assert!(swap.swaps_attempted > 0);
        assert_eq!(swap.swaps_accepted, 0);
    }

    #[test]
    fn resgld_correction_tracks_estimator_noise() {
        let noisy = Target::Analytic(
            AnalyticTarget::custom(1, |x| 0.5 * x[0] * x[0], |x| vec![x[0]]).with_noise(2.0, 0.0),
        );
        let ladder = TemperatureLadder::new(vec![1e-4, 2e-4], vec![1.0, 2.0]).unwrap();
        let mut states = ladder_chains(2, 8);
        let mut swap = SwapState::new(13);
        assert_eq!(swap.correction(), 30.0);
        for round in 0..=100 {
            resgld_round(&mut states, &noisy, &ladder, &mut swap, round).unwrap();
        }
        // probes have std 2, so the sample variance should land near 4
        assert!(
            swap.correction() > 0.5 && swap.correction() < 20.0,
            "correction {}",
            swap.correction()
        );

        let exact = quadratic();
        let mut states = ladder_chains(2, 9);
        let mut swap = SwapState::new(14);
        for round in 0..=100 {
            resgld_round(&mut states, &exact, &ladder, &mut swap, round).unwrap();
        }
        // identical probes: variance is zero up to summation round-off
        assert!(swap.correction() < 1e-30, "correction {}", swap.correction());
    }

    #[test]
    fn resgld_rejects_bad_slots() {
        let t = quadratic();
        let ladder = TemperatureLadder::new(vec![1e-3, 2e-3], vec![1.0, 2.0]).unwrap();
        let mut dup = vec![
            ChainState::new(vec![0.0], 1).with_slot(0),
            ChainState::new(vec![1.0], 2).with_slot(0),
        ];
        let mut swap = SwapState::new(3);
        assert!(resgld_round(&mut dup, &t, &ladder, &mut swap, 0).is_err());
        let mut out_of_range = vec![ChainState::new(vec![0.0], 1).with_slot(5)];
        assert!(resgld_round(&mut out_of_range, &t, &ladder, &mut swap, 0).is_err());
    }

    #[test]
    fn resgld_is_deterministic() {
        let t = Target::Analytic(AnalyticTarget::multimodal25().with_noise(0.5, 0.5));
        let ladder = TemperatureLadder::new(
            vec![1e-3, 2e-3, 3e-3, 4e-3, 5e-3],
            vec![1.0, 2.0, 3.0, 4.0, 5.0],
        )
        .unwrap();
        let run = || {
            let mut states: Vec<ChainState> = (0..5)
                .map(|p| {
                    ChainState::new(vec![0.0, 0.0], split_seed(55, p as u64)).with_slot(p)
                })
                .collect();
            let mut swap = SwapState::new(66);
            for round in 0..200 {
                resgld_round(&mut states, &t, &ladder, &mut swap, round).unwrap();
            }
            (
                states.iter().map(|s| s.x.clone()).collect::<Vec<_>>(),
                swap.swaps_accepted,
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn ladder_validation() {
        assert!(TemperatureLadder::new(vec![], vec![]).is_err());
        assert!(TemperatureLadder::new(vec![1e-3], vec![1.0, 2.0]).is_err());
        assert!(TemperatureLadder::new(vec![0.0], vec![1.0]).is_err());
        assert!(TemperatureLadder::new(vec![1e-3], vec![0.0]).is_err());
    }
}
