//! Experiment configuration: one TOML file, strictly validated.
//!
//! Every table rejects unknown keys. Sections an experiment does not use
//! may be present and are ignored, so one file can drive several
//! experiments by changing only `experiment`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mvlov_core::fpe::Boundary;
use mvlov_core::grid::GridSpec;
use mvlov_core::kernels::{Direction, KernelSpec, TimeScaling};
use mvlov_core::metrics::{Lattice, NormSpec};
use mvlov_core::particles::{Diffusion, DriftSolver, InitialLaw, NoiseMode, SimConfig};

use crate::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Simulate,
    Fpe,
    Superpose,
    Chaos,
    TruncationSweep,
    ZvonkinSweep,
    GirsanovCheck,
    BoundsFit,
    GradientFit,
    KrylovCheck,
    PairKrylov,
    Moments,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Fpe => "fpe",
            Self::Superpose => "superpose",
            Self::Chaos => "chaos",
            Self::TruncationSweep => "truncation_sweep",
            Self::ZvonkinSweep => "zvonkin_sweep",
            Self::GirsanovCheck => "girsanov_check",
            Self::BoundsFit => "bounds_fit",
            Self::GradientFit => "gradient_fit",
            Self::KrylovCheck => "krylov_check",
            Self::PairKrylov => "pair_krylov",
            Self::Moments => "moments",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    /// relative paths resolve against the directory of the config file
    pub output_dir: PathBuf,
    #[serde(default)]
    pub kernel: KernelConfig,
    pub particles: Option<ParticlesConfig>,
    pub fpe: Option<FpeSection>,
    pub superpose: Option<SuperposeSection>,
    pub chaos: Option<ChaosSection>,
    pub truncation_sweep: Option<TruncationSweepSection>,
    pub zvonkin: Option<ZvonkinSection>,
    pub girsanov: Option<GirsanovSection>,
    pub fit: Option<FitSection>,
    pub krylov: Option<KrylovSection>,
    pub pair_krylov: Option<PairKrylovSection>,
    pub moments: Option<MomentsSection>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    #[default]
    Zero,
    Constant {
        value: Vec<f64>,
        #[serde(default)]
        time_scaling: Option<Vec<f64>>,
    },
    PowerLaw {
        kappa: f64,
        alpha: f64,
        #[serde(default = "radial")]
        direction: Direction,
        #[serde(default)]
        truncation: Option<f64>,
        #[serde(default)]
        time_scaling: Option<Vec<f64>>,
    },
}

fn radial() -> Direction {
    Direction::Radial
}

impl KernelConfig {
    pub fn build(&self) -> Result<KernelSpec, RunError> {
        let scaled = |k: KernelSpec, ts: &Option<Vec<f64>>| match ts {
            Some(c) => k.with_time_scaling(TimeScaling { coeffs: c.clone() }),
            None => k,
        };
        Ok(match self {
            KernelConfig::Zero => KernelSpec::zero(),
            KernelConfig::Constant { value, time_scaling } => scaled(KernelSpec::constant(value.clone())?, time_scaling),
            KernelConfig::PowerLaw {
                kappa,
                alpha,
                direction,
                truncation,
                time_scaling,
            } => {
                let k = scaled(KernelSpec::power_law(*kappa, *alpha, *direction)?, time_scaling);
                match truncation {
                    Some(n) => k.truncate(*n)?,
                    None => k,
                }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SolverConfig {
    #[default]
    Auto,
    Direct,
    Mesh {
        spacing: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiffusionConfig {
    #[default]
    ConstantSqrt2,
    DiagonalState {
        c0: f64,
        gamma: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    Point {
        x0: Vec<f64>,
    },
    /// either `cov` (row-major) or the isotropic shorthand `var`
    Gaussian {
        mean: Vec<f64>,
        #[serde(default)]
        cov: Option<Vec<f64>>,
        #[serde(default)]
        var: Option<f64>,
    },
    UniformBox {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
}

impl InitialConfig {
    pub fn dim(&self) -> usize {
        match self {
            InitialConfig::Point { x0 } => x0.len(),
            InitialConfig::Gaussian { mean, .. } => mean.len(),
            InitialConfig::UniformBox { lo, .. } => lo.len(),
        }
    }

    pub fn build(&self) -> Result<InitialLaw, RunError> {
        let law = match self {
            InitialConfig::Point { x0 } => InitialLaw::Point { x0: x0.clone() },
            InitialConfig::Gaussian { mean, cov, var } => match (cov, var) {
                (Some(c), None) => InitialLaw::Gaussian {
                    mean: mean.clone(),
                    cov: c.clone(),
                },
                (None, Some(v)) => InitialLaw::isotropic(mean.clone(), *v),
                _ => return Err(RunError::Config("gaussian initial law needs exactly one of `cov` and `var`".into())),
            },
            InitialConfig::UniformBox { lo, hi } => InitialLaw::UniformBox {
                lo: lo.clone(),
                hi: hi.clone(),
            },
        };
        law.validate(self.dim())?;
        Ok(law)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticlesConfig {
    pub n: usize,
    pub d: usize,
    pub dt: f64,
    pub t_end: f64,
    /// defaults to `[0, t_end]`
    #[serde(default)]
    pub snapshot_times: Option<Vec<f64>>,
    #[serde(default)]
    pub truncation_schedule: Option<Vec<f64>>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub diffusion: DiffusionConfig,
    pub initial: InitialConfig,
    #[serde(default)]
    pub noise: NoiseMode,
}

impl ParticlesConfig {
    pub fn build(&self, kernel: KernelSpec, seed: u64) -> Result<SimConfig, RunError> {
        if self.initial.dim() != self.d {
            return Err(RunError::Config(format!(
                "initial law has dimension {}, particles.d = {}",
                self.initial.dim(),
                self.d
            )));
        }
        let mut sim = SimConfig::new(self.n, self.d, self.dt, self.t_end, kernel, self.initial.build()?, seed);
        if let Some(s) = &self.snapshot_times {
            sim.snapshot_times = s.clone();
        }
        sim.truncation_schedule = self.truncation_schedule.clone();
        sim.solver = match self.solver {
            SolverConfig::Auto => DriftSolver::Auto,
            SolverConfig::Direct => DriftSolver::Direct,
            SolverConfig::Mesh { spacing } => DriftSolver::Mesh { spacing },
        };
        sim.diffusion = match self.diffusion {
            DiffusionConfig::ConstantSqrt2 => Diffusion::ConstantSqrt2,
            DiffusionConfig::DiagonalState { c0, gamma } => Diffusion::DiagonalState { c0, gamma },
        };
        sim.noise = self.noise;
        sim.validate()?;
        Ok(sim)
    }
}

/// A box given either as a centred cube or by its corners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub half_width: Option<f64>,
    #[serde(default)]
    pub lo: Option<Vec<f64>>,
    #[serde(default)]
    pub hi: Option<Vec<f64>>,
    /// cells per axis
    pub cells: usize,
}

impl GridConfig {
    pub fn build(&self, d: usize) -> Result<GridSpec, RunError> {
        self.build_scaled(d, 1)
    }

    /// The same box with `factor` times as many cells per axis.
    pub fn build_scaled(&self, d: usize, factor: usize) -> Result<GridSpec, RunError> {
        let cells = self.cells * factor;
        match (&self.half_width, &self.lo, &self.hi) {
            (Some(w), None, None) => Ok(GridSpec::cube(d, *w, cells)?),
            (None, Some(lo), Some(hi)) => {
                if lo.len() != d || hi.len() != d {
                    return Err(RunError::Config(format!("grid corners must have {d} coordinates")));
                }
                Ok(GridSpec::new(lo.clone(), hi.clone(), vec![cells; d])?)
            }
            _ => Err(RunError::Config("grid needs either `half_width` or both `lo` and `hi`".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpeSection {
    pub grid: GridConfig,
    /// defaults to the step-size limit of the grid and kernel
    #[serde(default)]
    pub dt: Option<f64>,
    /// defaults to `particles.t_end`
    #[serde(default)]
    pub t_end: Option<f64>,
    #[serde(default)]
    pub boundary: Boundary,
    /// defaults to `particles.initial`
    #[serde(default)]
    pub initial: Option<InitialConfig>,
    /// defaults to `particles.snapshot_times`, else `[t_end]`
    #[serde(default)]
    pub snapshot_times: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuperposeSection {
    /// fixed KDE bandwidth; Silverman's rule when absent
    #[serde(default)]
    pub bandwidth: Option<f64>,
    /// further particle counts to compare against `particles.n`
    #[serde(default)]
    pub compare_n: Vec<usize>,
    #[serde(default = "one")]
    pub replicas: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChaosReference {
    /// the grid solution of the nonlinear Fokker-Planck equation
    #[default]
    Fpe,
    /// the pooled particles of the largest-N replicas
    LargestN,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChaosSection {
    pub n_values: Vec<usize>,
    pub replicas: usize,
    #[serde(default)]
    pub reference: ChaosReference,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    /// KDE grid for the `largest_n` reference; the FPE grid otherwise
    #[serde(default)]
    pub grid: Option<GridConfig>,
}

fn default_bootstrap() -> usize {
    200
}

pub const MIN_CHAOS_REPLICAS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationSweepSection {
    pub levels: Vec<f64>,
    pub reference_level: f64,
    #[serde(default = "two")]
    pub beta: f64,
}

fn two() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeynmanKacSection {
    pub paths: usize,
    pub dt: f64,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZvonkinSection {
    #[serde(default = "two_usize")]
    pub d: usize,
    pub cells: usize,
    /// the torus is `[-half_width, half_width)^d`
    #[serde(default = "pi")]
    pub half_width: f64,
    pub lambdas: Vec<f64>,
    pub t_end: f64,
    pub ds_max: f64,
    #[serde(default = "half")]
    pub threshold: f64,
    #[serde(default)]
    pub feynman_kac: Option<FeynmanKacSection>,
}

fn two_usize() -> usize {
    2
}

fn pi() -> f64 {
    std::f64::consts::PI
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GirsanovSection {
    /// reference-flow frames over `[0, T)`
    #[serde(default = "ten")]
    pub frames: usize,
}

fn ten() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensitySource {
    /// kernel density estimates of the particle snapshots
    #[default]
    Particles,
    /// the Fokker-Planck grid solution
    Fpe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    #[serde(default)]
    pub source: DensitySource,
    /// KDE grid; the FPE grid is used for `source = "fpe"`
    #[serde(default)]
    pub grid: Option<GridConfig>,
    pub gamma_search: Vec<f64>,
    pub c_max: f64,
    /// snapshot times to fit; defaults to every positive snapshot time
    #[serde(default)]
    pub times: Option<Vec<f64>>,
    #[serde(default)]
    pub bandwidth: Option<f64>,
    /// repeat the fit with twice the cells per axis
    #[serde(default)]
    pub refine: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormConfig {
    pub p: f64,
    pub q: f64,
    #[serde(default = "one_f64")]
    pub r: f64,
    #[serde(default = "continuum")]
    pub lattice: Lattice,
}

fn one_f64() -> f64 {
    1.0
}

fn continuum() -> Lattice {
    Lattice::ContinuumSup
}

impl NormConfig {
    pub fn build(&self) -> Result<NormSpec, RunError> {
        Ok(NormSpec::new(self.p, self.q, self.r, self.lattice)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KrylovSection {
    pub norm: NormConfig,
    pub grid: GridConfig,
    /// Gaussian bump centres; the family is every centre with every width
    pub centers: Vec<Vec<f64>>,
    pub widths: Vec<f64>,
    /// frames are kept every `stride` steps
    #[serde(default = "one_u64")]
    pub stride: u64,
    /// rerun with this step size and compare the largest ratio
    #[serde(default)]
    pub refine_dt: Option<f64>,
    /// also estimate `E exp(lambda int f(X) dt)` for the first test
    #[serde(default)]
    pub khasminskii_lambda: Option<f64>,
}

fn one_u64() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairKrylovSection {
    /// grid for each of the two variables
    pub grid: GridConfig,
    pub p1: f64,
    pub p2: f64,
    pub q0: f64,
    /// test function `min(|x - y|^-alpha, cap)`
    pub alpha: f64,
    pub cap: f64,
    #[serde(default = "one_u64")]
    pub stride: u64,
    #[serde(default)]
    pub refine_dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsSection {
    /// order of the moment `(1/N) sum |X^i|^beta`
    pub beta: f64,
    #[serde(default = "four")]
    pub increment_beta: f64,
    pub deltas: Vec<f64>,
    #[serde(default = "one_u64")]
    pub stride: u64,
}

fn four() -> f64 {
    4.0
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))
    }

    /// Hex SHA-256 of the canonical JSON form, without `output_dir`, so the
    /// same experiment hashes identically wherever it is written.
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output_dir");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec, RunError> {
        self.kernel.build()
    }

    pub fn particles(&self) -> Result<&ParticlesConfig, RunError> {
        self.particles
            .as_ref()
            .ok_or_else(|| RunError::Config(format!("experiment `{}` needs a [particles] table", self.experiment.name())))
    }

    pub fn sim_config(&self) -> Result<SimConfig, RunError> {
        self.particles()?.build(self.kernel_spec()?, self.seed)
    }

    /// The named optional section, or a config error naming it.
    pub fn section<'a, T>(&self, s: &'a Option<T>, name: &str) -> Result<&'a T, RunError> {
        s.as_ref()
            .ok_or_else(|| RunError::Config(format!("experiment `{}` needs a [{name}] table", self.experiment.name())))
    }

    /// Checks everything the chosen experiment needs without running it.
    pub fn validate(&self) -> Result<(), RunError> {
        let kernel = self.kernel_spec()?;
        use ExperimentKind::*;
        let fpe_fit = matches!(&self.fit, Some(f) if f.source == DensitySource::Fpe);
        let needs_particles = match self.experiment {
            Fpe | ZvonkinSweep => false,
            BoundsFit | GradientFit => !fpe_fit,
            _ => true,
        };
        if needs_particles {
            // sweeps replace the kernel truncation themselves
            let k = match (self.experiment, &self.truncation_sweep) {
                (TruncationSweep, Some(s)) => kernel.truncate(s.reference_level)?,
                _ => kernel.clone(),
            };
            self.particles()?.build(k, self.seed)?;
        }
        match self.experiment {
            Fpe | Superpose | GirsanovCheck => {
                self.section(&self.fpe, "fpe")?;
            }
            _ => {}
        }
        match self.experiment {
            Superpose => {
                self.section(&self.superpose, "superpose")?;
            }
            Chaos => {
                let c = self.section(&self.chaos, "chaos")?;
                if c.replicas < MIN_CHAOS_REPLICAS {
                    return Err(RunError::Config(format!(
                        "chaos.replicas = {} is too few marginal samples; need at least {MIN_CHAOS_REPLICAS}",
                        c.replicas
                    )));
                }
                if c.n_values.is_empty() || c.n_values.windows(2).any(|w| w[1] <= w[0]) || c.n_values[0] < 2 {
                    return Err(RunError::Config("chaos.n_values must be increasing and >= 2".into()));
                }
                match c.reference {
                    ChaosReference::Fpe => {
                        self.section(&self.fpe, "fpe")?;
                    }
                    ChaosReference::LargestN => {
                        if c.grid.is_none() {
                            return Err(RunError::Config("chaos.reference = \"largest_n\" needs chaos.grid".into()));
                        }
                    }
                }
            }
            TruncationSweep => {
                let s = self.section(&self.truncation_sweep, "truncation_sweep")?;
                if s.levels.is_empty() || s.levels.iter().any(|&l| !(l > 0.0 && l < s.reference_level)) {
                    return Err(RunError::Config("truncation levels must lie in (0, reference_level)".into()));
                }
            }
            ZvonkinSweep => {
                let z = self.section(&self.zvonkin, "zvonkin")?;
                if z.lambdas.is_empty() {
                    return Err(RunError::Config("zvonkin.lambdas is empty".into()));
                }
            }
            GirsanovCheck => {
                self.section(&self.girsanov, "girsanov")?;
            }
            BoundsFit | GradientFit => {
                let f = self.section(&self.fit, "fit")?;
                match f.source {
                    DensitySource::Particles if f.grid.is_none() => {
                        return Err(RunError::Config("fit.grid is required for source = \"particles\"".into()));
                    }
                    DensitySource::Fpe => {
                        self.section(&self.fpe, "fpe")?;
                    }
                    _ => {}
                }
            }
            KrylovCheck => {
                self.section(&self.krylov, "krylov")?.norm.build()?;
            }
            PairKrylov => {
                self.section(&self.pair_krylov, "pair_krylov")?;
            }
            Moments => {
                self.section(&self.moments, "moments")?;
            }
            Simulate | Fpe => {}
        }
        Ok(())
    }
}
