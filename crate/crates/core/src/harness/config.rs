//! Experiment configuration: a strict JSON schema, validation that names
//! the offending field, and the built-in presets.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contour::FieldVariant;
use crate::error::{Error, Result};
use crate::interaction::Mode;
use crate::metrics::{GridSpec, Quadrature};
use crate::samplers::{LearningRateSchedule, StepSizeSchedule, TemperatureLadder};
use crate::targets::{AnalyticTarget, DatasetTarget, GaussianPrior, NoiseSpec, Target};

/// Full description of one experiment. Unknown JSON keys are rejected so a
/// typo cannot silently fall back to a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub target: TargetSpec,
    pub algorithm: AlgorithmSpec,
    pub rounds: u64,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_seed")]
    pub base_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default)]
    pub init: InitSpec,
    /// Record chain positions every this many rounds; 0 disables sampling.
    #[serde(default = "default_stride")]
    pub sample_stride: u64,
    /// Metric checkpoint cadence in rounds; 0 picks rounds/50.
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default)]
    pub log_messages: bool,
    /// Histogram grid for KL against the exact density; omit to skip.
    #[serde(default)]
    pub grid: Option<GridSpec>,
    /// Quadrature box for the fixed-point oracle; omit to skip theta error.
    #[serde(default)]
    pub oracle: Option<OracleSpec>,
}

fn default_repeats() -> usize {
    1
}

fn default_seed() -> u64 {
    2026
}

fn default_output_dir() -> String {
    "runs/experiment".to_string()
}

fn default_stride() -> u64 {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    /// 25-mode lattice target on the plane.
    Multimodal25 {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        noise: Option<NoiseSpec>,
    },
    GaussianMixture1d {
        components: Vec<MixtureComponent>,
        /// Additive Gaussian noise on the energy and gradient estimators,
        /// standing in for mini-batch noise on a closed-form target.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        noise: Option<NoiseSpec>,
    },
    /// Gaussian cloud drawn once from its own seed, shared by every trial.
    SyntheticDataset {
        seed: u64,
        points: usize,
        true_mean: Vec<f64>,
        scatter: f64,
        batch: usize,
        likelihood_std: f64,
        #[serde(default)]
        prior_std: Option<f64>,
    },
    DatasetCsv {
        path: String,
        batch: usize,
        likelihood_std: f64,
        #[serde(default)]
        prior_std: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

impl TargetSpec {
    pub fn build(&self) -> Result<Target> {
        match self {
            TargetSpec::Multimodal25 { noise } => {
                let target = apply_noise(AnalyticTarget::multimodal25(), noise)?;
                Ok(Target::Analytic(target))
            }
            TargetSpec::GaussianMixture1d { components, noise } => {
                let parts: Vec<(f64, f64, f64)> =
                    components.iter().map(|c| (c.weight, c.mean, c.std)).collect();
                let target = apply_noise(AnalyticTarget::gaussian_mixture_1d(&parts)?, noise)?;
                Ok(Target::Analytic(target))
            }
            TargetSpec::SyntheticDataset {
                seed,
                points,
                true_mean,
                scatter,
                batch,
                likelihood_std,
                prior_std,
            } => {
                let mut data = DatasetTarget::synthesize(
                    *seed,
                    *points,
                    true_mean,
                    *scatter,
                    *batch,
                    *likelihood_std,
                )?;
                if let Some(std) = prior_std {
                    data = data.with_prior(GaussianPrior::new(vec![0.0; true_mean.len()], *std)?)?;
                }
                Ok(Target::Dataset(data))
            }
            TargetSpec::DatasetCsv {
                path,
                batch,
                likelihood_std,
                prior_std,
            } => {
                let mut data = DatasetTarget::from_csv(path, *batch, *likelihood_std, None)?;
                if let Some(std) = prior_std {
                    let dim = data.dim();
                    data = data.with_prior(GaussianPrior::new(vec![0.0; dim], *std)?)?;
                }
                Ok(Target::Dataset(data))
            }
        }
    }

    pub fn is_dataset(&self) -> bool {
        matches!(
            self,
            TargetSpec::SyntheticDataset { .. } | TargetSpec::DatasetCsv { .. }
        )
    }
}

fn apply_noise(target: AnalyticTarget, noise: &Option<NoiseSpec>) -> Result<AnalyticTarget> {
    let Some(spec) = noise else {
        return Ok(target);
    };
    for (name, std) in [
        ("noise.energy_std", spec.energy_std),
        ("noise.grad_std", spec.grad_std),
    ] {
        if !std.is_finite() || std < 0.0 {
            return Err(Error::config(name, "must be finite and nonnegative"));
        }
    }
    Ok(target.with_noise(spec.energy_std, spec.grad_std))
}

/// Sampler choice plus its hyperparameters, tagged by `name` in JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgorithmSpec {
    Sgld {
        chains: usize,
        eps: ScheduleSpec,
        #[serde(default = "default_tau")]
        tau: f64,
    },
    /// Single chain under a cosine learning-rate schedule by default; the
    /// time budget comes from `rounds`.
    Cycsgld {
        #[serde(default = "default_one")]
        chains: usize,
        eps0: f64,
        cycles: u64,
        #[serde(default = "default_tau")]
        tau: f64,
    },
    /// Replica exchange: one chain per ladder slot, slot 0 the coldest.
    Resgld {
        eps_ladder: Vec<f64>,
        tau_ladder: Vec<f64>,
        #[serde(default = "default_correction")]
        init_correction: f64,
        #[serde(default = "default_correction_interval")]
        correction_interval: u64,
        #[serde(default = "default_one_u64")]
        swap_interval: u64,
    },
    /// Single contour-guided chain.
    Csgld {
        eps: ScheduleSpec,
        #[serde(default = "default_tau")]
        tau: f64,
        contour: ContourSpec,
    },
    /// Contour-guided chains sharing one weight vector.
    Icsgld {
        chains: usize,
        eps: ScheduleSpec,
        #[serde(default = "default_tau")]
        tau: f64,
        contour: ContourSpec,
        #[serde(default = "default_one")]
        workers: usize,
        #[serde(default = "default_one_u64")]
        comm_interval: u64,
        #[serde(default = "default_mode")]
        mode: Mode,
    },
}

fn default_tau() -> f64 {
    1.0
}

fn default_one() -> usize {
    1
}

fn default_one_u64() -> u64 {
    1
}

fn default_correction() -> f64 {
    30.0
}

fn default_correction_interval() -> u64 {
    100
}

fn default_mode() -> Mode {
    Mode::SharedMemory
}

fn default_variant() -> FieldVariant {
    FieldVariant::New
}

impl AlgorithmSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmSpec::Sgld { .. } => "sgld",
            AlgorithmSpec::Cycsgld { .. } => "cycsgld",
            AlgorithmSpec::Resgld { .. } => "resgld",
            AlgorithmSpec::Csgld { .. } => "csgld",
            AlgorithmSpec::Icsgld { .. } => "icsgld",
        }
    }

    /// Chains one trial steps each round, which fixes the step budget
    /// `rounds × chains`.
    pub fn total_chains(&self) -> usize {
        match self {
            AlgorithmSpec::Sgld { chains, .. } => *chains,
            AlgorithmSpec::Cycsgld { chains, .. } => *chains,
            AlgorithmSpec::Resgld { eps_ladder, .. } => eps_ladder.len(),
            AlgorithmSpec::Csgld { .. } => 1,
            AlgorithmSpec::Icsgld { chains, .. } => *chains,
        }
    }

    pub fn contour(&self) -> Option<&ContourSpec> {
        match self {
            AlgorithmSpec::Csgld { contour, .. } | AlgorithmSpec::Icsgld { contour, .. } => {
                Some(contour)
            }
            _ => None,
        }
    }

    pub fn tau(&self) -> Option<f64> {
        match self {
            AlgorithmSpec::Sgld { tau, .. }
            | AlgorithmSpec::Cycsgld { tau, .. }
            | AlgorithmSpec::Csgld { tau, .. }
            | AlgorithmSpec::Icsgld { tau, .. } => Some(*tau),
            AlgorithmSpec::Resgld { .. } => None,
        }
    }
}

/// Energy-partition and weight-update hyperparameters shared by the
/// contour samplers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContourSpec {
    pub zeta: f64,
    /// Number of energy bands m.
    pub bands: usize,
    /// Band width Δu.
    pub band_width: f64,
    /// Lowest cut point; band 1 is everything at or below it.
    pub first_cut: f64,
    pub omega: OmegaSpec,
    #[serde(default = "default_variant")]
    pub field_variant: FieldVariant,
    /// Anchor refresh period of the variance-reduced energy estimator;
    /// 0 disables it. Needs a dataset target.
    #[serde(default)]
    pub vr_period: usize,
}

/// Weight-update step size `min(cap, 1/(k^alpha + offset))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OmegaSpec {
    pub cap: f64,
    pub alpha: f64,
    pub offset: f64,
}

impl OmegaSpec {
    pub fn build(&self) -> Result<StepSizeSchedule> {
        StepSizeSchedule::new(self.cap, self.alpha, self.offset)
    }
}

/// Learning-rate schedule; the cyclical variant spans the configured
/// number of rounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Constant { eps0: f64 },
    PolynomialDecay { eps0: f64, gamma: f64, offset: f64 },
    CosineCyclical { eps0: f64, cycles: u64 },
}

impl ScheduleSpec {
    pub fn build(&self, rounds: u64) -> LearningRateSchedule {
        match *self {
            ScheduleSpec::Constant { eps0 } => LearningRateSchedule::Constant { eps0 },
            ScheduleSpec::PolynomialDecay { eps0, gamma, offset } => {
                LearningRateSchedule::PolynomialDecay { eps0, gamma, offset }
            }
            ScheduleSpec::CosineCyclical { eps0, cycles } => LearningRateSchedule::CosineCyclical {
                eps0,
                total_iters: rounds,
                cycles,
            },
        }
    }
}

/// Where each chain starts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    Origin,
    /// Independent draws from `N(0, std² I)` per chain.
    Gaussian { std: f64 },
    Point { x: Vec<f64> },
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec::Origin
    }
}

/// Quadrature box for the oracle integrals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub nodes: Vec<usize>,
}

impl OracleSpec {
    pub fn build(&self) -> Result<Quadrature> {
        Quadrature::new(self.lower.clone(), self.upper.clone(), self.nodes.clone())
    }
}

fn field(path: &str, err: Error) -> Error {
    Error::config(path, err.to_string())
}

impl ExperimentConfig {
    /// Range and cross-field checks beyond what the schema enforces; every
    /// error names the field that caused it.
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::config("rounds", "must be at least 1"));
        }
        if self.repeats == 0 {
            return Err(Error::config("repeats", "must be at least 1"));
        }
        if self.output_dir.is_empty() {
            return Err(Error::config("output_dir", "must not be empty"));
        }
        let target = self.target.build().map_err(|e| field("target", e))?;
        if let InitSpec::Point { x } = &self.init {
            if x.len() != target.dim() {
                return Err(Error::config(
                    "init.x",
                    format!(
                        "dimension {} does not match the target dimension {}",
                        x.len(),
                        target.dim()
                    ),
                ));
            }
        }
        if let InitSpec::Gaussian { std } = &self.init {
            if !(*std > 0.0) {
                return Err(Error::config("init.std", "must be positive"));
            }
        }
        if let Some(grid) = &self.grid {
            grid.validate().map_err(|e| field("grid", e))?;
            if grid.dim() != target.dim() {
                return Err(Error::config(
                    "grid",
                    format!(
                        "dimension {} does not match the target dimension {}",
                        grid.dim(),
                        target.dim()
                    ),
                ));
            }
            if self.sample_stride == 0 {
                return Err(Error::config(
                    "sample_stride",
                    "must be nonzero when a grid is configured",
                ));
            }
        }
        if let Some(oracle) = &self.oracle {
            let quad = oracle.build().map_err(|e| field("oracle", e))?;
            drop(quad);
            if oracle.lower.len() != target.dim() {
                return Err(Error::config(
                    "oracle",
                    format!(
                        "dimension {} does not match the target dimension {}",
                        oracle.lower.len(),
                        target.dim()
                    ),
                ));
            }
        }
        self.validate_algorithm()?;
        Ok(())
    }

    fn validate_algorithm(&self) -> Result<()> {
        if let Some(tau) = self.algorithm.tau() {
            if !(tau > 0.0) {
                return Err(Error::config("algorithm.tau", "must be positive"));
            }
        }
        match &self.algorithm {
            AlgorithmSpec::Sgld { chains, eps, .. } => {
                if *chains == 0 {
                    return Err(Error::config("algorithm.chains", "must be at least 1"));
                }
                self.check_schedule(eps)?;
            }
            AlgorithmSpec::Cycsgld {
                chains,
                eps0,
                cycles,
                ..
            } => {
                if *chains == 0 {
                    return Err(Error::config("algorithm.chains", "must be at least 1"));
                }
                if !(*eps0 > 0.0) {
                    return Err(Error::config("algorithm.eps0", "must be positive"));
                }
                if *cycles == 0 {
                    return Err(Error::config("algorithm.cycles", "must be at least 1"));
                }
            }
            AlgorithmSpec::Resgld {
                eps_ladder,
                tau_ladder,
                init_correction,
                ..
            } => {
                TemperatureLadder::new(eps_ladder.clone(), tau_ladder.clone())
                    .map_err(|e| field("algorithm.eps_ladder/tau_ladder", e))?;
                if !(*init_correction >= 0.0) {
                    return Err(Error::config(
                        "algorithm.init_correction",
                        "must be nonnegative",
                    ));
                }
            }
            AlgorithmSpec::Csgld { eps, contour, .. } => {
                self.check_schedule(eps)?;
                self.check_contour(contour)?;
            }
            AlgorithmSpec::Icsgld {
                chains,
                eps,
                contour,
                workers,
                comm_interval,
                ..
            } => {
                if *chains == 0 {
                    return Err(Error::config("algorithm.chains", "must be at least 1"));
                }
                if *workers == 0 || chains % workers != 0 {
                    return Err(Error::config(
                        "algorithm.workers",
                        format!("{} must divide the chain count {}", workers, chains),
                    ));
                }
                if *comm_interval == 0 {
                    return Err(Error::config("algorithm.comm_interval", "must be at least 1"));
                }
                self.check_schedule(eps)?;
                self.check_contour(contour)?;
            }
        }
        Ok(())
    }

    fn check_schedule(&self, eps: &ScheduleSpec) -> Result<()> {
        let schedule = eps.build(self.rounds);
        schedule
            .eps_at(1)
            .and(schedule.eps_at(self.rounds))
            .map_err(|e| field("algorithm.eps", e))?;
        Ok(())
    }

    fn check_contour(&self, contour: &ContourSpec) -> Result<()> {
        if !(contour.zeta > 0.0) || !contour.zeta.is_finite() {
            return Err(Error::config("algorithm.contour.zeta", "must be positive"));
        }
        if contour.bands < 2 {
            return Err(Error::config(
                "algorithm.contour.bands",
                "need at least 2 energy bands",
            ));
        }
        if contour.bands > u16::MAX as usize {
            return Err(Error::config(
                "algorithm.contour.bands",
                format!("{} exceeds the wire index limit {}", contour.bands, u16::MAX),
            ));
        }
        if !(contour.band_width > 0.0) || !contour.first_cut.is_finite() {
            return Err(Error::config(
                "algorithm.contour.band_width",
                "band width must be positive and the first cut finite",
            ));
        }
        contour
            .omega
            .build()
            .map_err(|e| field("algorithm.contour.omega", e))?;
        if contour.vr_period > 0 && !self.target.is_dataset() {
            return Err(Error::config(
                "algorithm.contour.vr_period",
                "variance reduction needs a dataset target",
            ));
        }
        Ok(())
    }

    /// Multiplies the round budget, keeping every other setting fixed.
    pub fn apply_scale(&mut self, scale: f64) -> Result<()> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::config("scale", "must be positive and finite"));
        }
        self.rounds = ((self.rounds as f64 * scale).round() as u64).max(1);
        Ok(())
    }

    /// Checkpoint cadence with the `0 = rounds/50` default resolved.
    pub fn resolved_checkpoint_every(&self) -> u64 {
        if self.checkpoint_every > 0 {
            self.checkpoint_every
        } else {
            (self.rounds / 50).max(1)
        }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        text
    }
}

/// Parses and validates a config from JSON text. Schema violations report
/// the JSON path of the offending field.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut deserializer = serde_json::Deserializer::from_str(text);
    let config: ExperimentConfig = serde_path_to_error::deserialize(&mut deserializer)
        .map_err(|e| Error::config(e.path().to_string(), e.inner().to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    parse_config(&text)
}

/// 64-bit FNV-1a over the canonical JSON form, as a fixed-width hex
/// string. The standard library's hasher is not stable across releases,
/// and the manifest hash must be. The output directory names where the
/// results go, not what they are, so it is excluded.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let mut canonical = config.clone();
    canonical.output_dir = String::new();
    let bytes = serde_json::to_vec(&canonical).expect("config serializes");
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    let mut out = String::with_capacity(16);
    write!(out, "{:016x}", hash).expect("hex formats");
    out
}

/// Built-in experiment configurations.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    match name {
        "d2_multimodal" => Ok(d2_multimodal()),
        "d5_mixture" => Ok(d5_mixture()),
        "mnist_style" => Ok(mnist_style()),
        other => Err(Error::input(format!(
            "unknown preset {:?}; expected d2_multimodal, d5_mixture, or mnist_style",
            other
        ))),
    }
}

pub const PRESET_NAMES: [&str; 3] = ["d2_multimodal", "d5_mixture", "mnist_style"];

/// 25-mode lattice target on the plane: 5 interacting chains against the
/// parallel and time-budget baselines, scored by grid KL.
fn d2_multimodal() -> ExperimentConfig {
    ExperimentConfig {
        target: TargetSpec::Multimodal25 { noise: None },
        algorithm: AlgorithmSpec::Icsgld {
            chains: 5,
            eps: ScheduleSpec::Constant { eps0: 3e-3 },
            tau: 1.0,
            contour: ContourSpec {
                zeta: 0.75,
                bands: 100,
                band_width: 0.125,
                first_cut: -3.875,
                omega: OmegaSpec {
                    cap: 3e-3,
                    alpha: 0.6,
                    offset: 100.0,
                },
                field_variant: FieldVariant::New,
                vr_period: 0,
            },
            workers: 1,
            comm_interval: 1,
            mode: Mode::SharedMemory,
        },
        rounds: 80_000,
        repeats: 20,
        base_seed: 2026,
        output_dir: "runs/d2_multimodal".to_string(),
        init: InitSpec::Origin,
        sample_stride: 10,
        checkpoint_every: 0,
        log_messages: false,
        grid: Some(GridSpec {
            lower: vec![-5.5, -5.5],
            upper: vec![5.5, 5.5],
            cells: vec![100, 100],
            smoothing: 1e-10,
        }),
        oracle: Some(OracleSpec {
            lower: vec![-5.5, -5.5],
            upper: vec![5.5, 5.5],
            nodes: vec![400, 400],
        }),
    }
}

/// Two-component 1D Gaussian mixture: 10 interacting chains learning the
/// band weights, scored by distance to the fixed point.
fn d5_mixture() -> ExperimentConfig {
    ExperimentConfig {
        target: TargetSpec::GaussianMixture1d {
            components: vec![
                MixtureComponent {
                    weight: 0.4,
                    mean: -6.0,
                    std: 1.0,
                },
                MixtureComponent {
                    weight: 0.6,
                    mean: 4.0,
                    std: 1.0,
                },
            ],
            noise: None,
        },
        algorithm: AlgorithmSpec::Icsgld {
            chains: 10,
            eps: ScheduleSpec::Constant { eps0: 0.1 },
            tau: 1.0,
            contour: ContourSpec {
                zeta: 0.9,
                bands: 30,
                band_width: 1.0,
                // the lowest mixture energy is about 1.43, so the first cut
                // sits just above it: band 1 holds both mode cores and the
                // bottom band never faces an empty neighbor below
                first_cut: 2.0,
                // the slowest admissible decay: the weight estimate keeps
                // averaging fresh visits late into the run, which is what the
                // pooled-versus-single-chain variance comparison measures
                omega: OmegaSpec {
                    cap: 3e-3,
                    alpha: 0.55,
                    offset: 100.0,
                },
                field_variant: FieldVariant::New,
                vr_period: 0,
            },
            workers: 1,
            comm_interval: 1,
            mode: Mode::SharedMemory,
        },
        rounds: 1_000_000,
        repeats: 10,
        base_seed: 2027,
        output_dir: "runs/d5_mixture".to_string(),
        init: InitSpec::Origin,
        sample_stride: 100,
        checkpoint_every: 0,
        log_messages: false,
        grid: Some(GridSpec {
            lower: vec![-12.0],
            upper: vec![10.0],
            cells: vec![110],
            smoothing: 1e-10,
        }),
        oracle: Some(OracleSpec {
            lower: vec![-12.0],
            upper: vec![10.0],
            nodes: vec![100_000],
        }),
    }
}

/// Desk-scale stand-in for the image-classification runs: a synthetic
/// Gaussian-cloud posterior with mini-batch gradients, large zeta, and the
/// variance-reduced energy estimator switched on.
fn mnist_style() -> ExperimentConfig {
    ExperimentConfig {
        target: TargetSpec::SyntheticDataset {
            seed: 11,
            points: 1000,
            true_mean: vec![0.0; 10],
            scatter: 1.0,
            batch: 100,
            likelihood_std: 1.0,
            prior_std: Some(10.0),
        },
        algorithm: AlgorithmSpec::Icsgld {
            chains: 4,
            eps: ScheduleSpec::Constant { eps0: 2e-4 },
            tau: 1.0,
            contour: ContourSpec {
                zeta: 3e4,
                bands: 100,
                band_width: 20.0,
                first_cut: 4000.0,
                omega: OmegaSpec {
                    cap: 1e-4,
                    alpha: 0.6,
                    offset: 1000.0,
                },
                field_variant: FieldVariant::New,
                vr_period: 20,
            },
            workers: 1,
            comm_interval: 1,
            mode: Mode::SharedMemory,
        },
        rounds: 20_000,
        repeats: 1,
        base_seed: 2028,
        output_dir: "runs/mnist_style".to_string(),
        init: InitSpec::Origin,
        sample_stride: 10,
        checkpoint_every: 0,
        log_messages: false,
        grid: None,
        oracle: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "target": {"kind": "multimodal25"},
        "algorithm": {"name": "sgld", "chains": 2, "eps": {"kind": "constant", "eps0": 0.003}},
        "rounds": 100
    }"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let config = parse_config(MINIMAL).unwrap();
        assert_eq!(config.repeats, 1);
        assert_eq!(config.base_seed, 2026);
        assert_eq!(config.sample_stride, 10);
        assert_eq!(config.checkpoint_every, 0);
        assert_eq!(config.resolved_checkpoint_every(), 2);
        assert_eq!(config.init, InitSpec::Origin);
        assert!(config.grid.is_none());
        assert!(!config.log_messages);
        match config.algorithm {
            AlgorithmSpec::Sgld { tau, .. } => assert_eq!(tau, 1.0),
            _ => panic!("wrong algorithm"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected_with_a_path() {
        let bad = MINIMAL.replace("\"rounds\": 100", "\"rounds\": 100, \"typo\": 1");
        let err = parse_config(&bad).unwrap_err().to_string();
        assert!(err.contains("typo"), "{}", err);

        let bad = MINIMAL.replace(
            "\"eps\": {\"kind\": \"constant\", \"eps0\": 0.003}",
            "\"eps\": {\"kind\": \"constant\", \"eps0\": 0.003, \"gamma\": 1}",
        );
        // tagged-enum content is buffered, so the path stops at the enum
        let err = parse_config(&bad).unwrap_err().to_string();
        assert!(err.contains("algorithm"), "{}", err);
        assert!(err.contains("gamma"), "{}", err);
    }

    #[test]
    fn zero_chains_is_a_range_error() {
        let bad = MINIMAL.replace("\"chains\": 2", "\"chains\": 0");
        let err = parse_config(&bad).unwrap_err().to_string();
        assert!(err.contains("algorithm.chains"), "{}", err);
    }

    #[test]
    fn out_of_range_decay_exponent_cites_the_rule() {
        let mut config = preset("d2_multimodal").unwrap();
        if let AlgorithmSpec::Icsgld { contour, .. } = &mut config.algorithm {
            contour.omega.alpha = 0.4;
        }
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("algorithm.contour.omega"), "{}", err);
        assert!(err.contains("(0.5, 1]"), "{}", err);
    }

    #[test]
    fn mismatched_grid_dimension_is_rejected() {
        let mut config = parse_config(MINIMAL).unwrap();
        config.grid = Some(GridSpec {
            lower: vec![0.0],
            upper: vec![1.0],
            cells: vec![4],
            smoothing: 0.0,
        });
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("grid"), "{}", err);

        config.grid = None;
        config.init = InitSpec::Point { x: vec![0.0] };
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("init.x"), "{}", err);
    }

    #[test]
    fn vr_without_a_dataset_target_is_rejected() {
        let mut config = preset("d2_multimodal").unwrap();
        if let AlgorithmSpec::Icsgld { contour, .. } = &mut config.algorithm {
            contour.vr_period = 5;
        }
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("vr_period"), "{}", err);
    }

    #[test]
    fn workers_must_divide_chains() {
        let mut config = preset("d2_multimodal").unwrap();
        if let AlgorithmSpec::Icsgld { workers, .. } = &mut config.algorithm {
            *workers = 3;
        }
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("algorithm.workers"), "{}", err);
    }

    #[test]
    fn presets_validate_and_carry_their_settings() {
        let d2 = preset("d2_multimodal").unwrap();
        d2.validate().unwrap();
        assert_eq!(d2.rounds, 80_000);
        assert_eq!(d2.repeats, 20);
        match &d2.algorithm {
            AlgorithmSpec::Icsgld { chains, contour, eps, .. } => {
                assert_eq!(*chains, 5);
                assert_eq!(contour.zeta, 0.75);
                assert_eq!(contour.bands, 100);
                assert_eq!(contour.band_width, 0.125);
                assert_eq!(*eps, ScheduleSpec::Constant { eps0: 3e-3 });
            }
            _ => panic!("wrong algorithm"),
        }

        let d5 = preset("d5_mixture").unwrap();
        d5.validate().unwrap();
        assert_eq!(d5.rounds, 1_000_000);
        match &d5.algorithm {
            AlgorithmSpec::Icsgld { chains, contour, .. } => {
                assert_eq!(*chains, 10);
                assert_eq!(contour.zeta, 0.9);
                assert_eq!(contour.band_width, 1.0);
            }
            _ => panic!("wrong algorithm"),
        }

        let mnist = preset("mnist_style").unwrap();
        mnist.validate().unwrap();
        assert!(mnist.target.is_dataset());
        match &mnist.algorithm {
            AlgorithmSpec::Icsgld { contour, .. } => assert!(contour.vr_period > 0),
            _ => panic!("wrong algorithm"),
        }

        assert!(preset("d7_unknown").is_err());
    }

    #[test]
    fn scale_multiplies_only_rounds() {
        let mut config = preset("d2_multimodal").unwrap();
        config.apply_scale(0.25).unwrap();
        assert_eq!(config.rounds, 20_000);
        assert_eq!(config.repeats, 20);
        let mut tiny = preset("d2_multimodal").unwrap();
        tiny.apply_scale(1e-9).unwrap();
        assert_eq!(tiny.rounds, 1);
        assert!(tiny.apply_scale(0.0).is_err());
    }

    #[test]
    fn estimator_noise_is_parsed_validated_and_applied() {
        let noisy = MINIMAL.replace(
            "{\"kind\": \"multimodal25\"}",
            "{\"kind\": \"multimodal25\", \"noise\": {\"energy_std\": 0.5, \"grad_std\": 0.0}}",
        );
        let config = parse_config(&noisy).unwrap();
        config.validate().unwrap();
        match config.target.build().unwrap() {
            Target::Analytic(t) => {
                let spec = t.noise().unwrap();
                assert_eq!(spec.energy_std, 0.5);
                assert_eq!(spec.grad_std, 0.0);
            }
            _ => panic!("wrong target"),
        }

        let bad = noisy.replace("\"energy_std\": 0.5", "\"energy_std\": -1.0");
        let err = parse_config(&bad).unwrap_err().to_string();
        assert!(err.contains("energy_std"), "{}", err);
    }

    #[test]
    fn config_json_roundtrips_and_hash_is_stable() {
        let config = preset("d5_mixture").unwrap();
        let text = config.to_json();
        let back = parse_config(&text).unwrap();
        assert_eq!(back, config);
        assert_eq!(config_hash(&config), config_hash(&back));
        assert_eq!(config_hash(&config).len(), 16);

        let mut other = config.clone();
        other.base_seed += 1;
        assert_ne!(config_hash(&config), config_hash(&other));
    }
}
