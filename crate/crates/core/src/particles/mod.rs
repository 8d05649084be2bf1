//! Interacting particle approximation of the mean-field SDE
//! `dX = B(X, mu) dt + sigma(X) dW`, `B(x, mu) = int b(x, y) mu(dy)`.
//!
//! Stepping is explicit Euler-Maruyama. Noise for particle `i` at step `k`
//! comes from a counter-based stream keyed by the run seed, so two runs with
//! the same seed see identical Brownian increments and results never depend
//! on the number of worker threads.

mod drift;
mod girsanov;
mod io;

pub use drift::{mean_field_drift, DriftSolver, DriftWorkspace};
pub use girsanov::{
    frozen_flow_simulate, girsanov_weights, weighted_expectation, FrozenFlow, GirsanovWeight,
};
pub use io::{read_mvl1, write_csv, write_mvl1};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{KernelForm, KernelSpec};
use crate::rng::{derive_seed, CounterRng, Stream};

/// Reproducible noise position: the run seed and the number of steps taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseState {
    pub seed: u64,
    pub step: u64,
}

/// `N` particles in `R^d` at one time point.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    positions: Vec<f64>,
    n: usize,
    d: usize,
    time: f64,
    noise: NoiseState,
}

impl ParticleEnsemble {
    /// `positions` is row-major `N x d`.
    pub fn new(positions: Vec<f64>, d: usize, time: f64, noise: NoiseState) -> Result<Self> {
        if d == 0 || positions.len() % d != 0 {
            return Err(Error::invalid("positions length must be a multiple of d >= 1"));
        }
        let n = positions.len() / d;
        if n < 2 {
            return Err(Error::invalid("an ensemble needs at least two particles"));
        }
        if let Some(i) = positions.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("particle {} has a non-finite coordinate", i / d)));
        }
        Ok(Self {
            positions,
            n,
            d,
            time,
            noise,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn noise_state(&self) -> NoiseState {
        self.noise
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.positions[i * self.d..(i + 1) * self.d]
    }

    /// Coordinate `axis` of every particle.
    pub fn axis(&self, axis: usize) -> Vec<f64> {
        self.positions.iter().skip(axis).step_by(self.d).copied().collect()
    }
}

/// Noise coefficient `sigma(x)`, diagonal in every supported case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diffusion {
    /// `sigma = sqrt(2) I`
    ConstantSqrt2,
    /// `sigma_k(x) = sqrt(2) (1 + 0.25 sin(x_k) / (1 + |x|))`.
    ///
    /// `c0` is the claimed ellipticity constant and must dominate the true
    /// range `[sqrt(2) * 0.75, sqrt(2) * 1.25]`; `gamma` is the claimed
    /// Hölder exponent, in `(0, 1]`.
    DiagonalState { c0: f64, gamma: f64 },
}

const STATE_AMPLITUDE: f64 = 0.25;

impl Diffusion {
    /// Smallest and largest diagonal entry over all of `R^d`.
    pub fn range(&self) -> (f64, f64) {
        let s = std::f64::consts::SQRT_2;
        match self {
            Diffusion::ConstantSqrt2 => (s, s),
            Diffusion::DiagonalState { .. } => (s * (1.0 - STATE_AMPLITUDE), s * (1.0 + STATE_AMPLITUDE)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Diffusion::DiagonalState { c0, gamma } = *self {
            let (lo, hi) = self.range();
            let needed = hi.max(1.0 / lo);
            if !(c0 >= needed) {
                return Err(Error::invalid(format!(
                    "ellipticity constant c0 = {c0} does not bound sigma; need c0 >= {needed:.6}"
                )));
            }
            if !(gamma > 0.0 && gamma <= 1.0) {
                return Err(Error::invalid("Hölder exponent gamma must lie in (0, 1]"));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Diffusion::ConstantSqrt2 => out.iter_mut().for_each(|o| *o = std::f64::consts::SQRT_2),
            Diffusion::DiagonalState { .. } => {
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = std::f64::consts::SQRT_2 * (1.0 + STATE_AMPLITUDE * v.sin() / (1.0 + norm));
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialLaw {
    Point { x0: Vec<f64> },
    /// `cov` is row-major `d x d`, symmetric positive definite.
    Gaussian { mean: Vec<f64>, cov: Vec<f64> },
    UniformBox { lo: Vec<f64>, hi: Vec<f64> },
}

impl InitialLaw {
    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Point { x0 } => x0.len(),
            InitialLaw::Gaussian { mean, .. } => mean.len(),
            InitialLaw::UniformBox { lo, .. } => lo.len(),
        }
    }

    /// Isotropic Gaussian `N(mean, var I)`.
    pub fn isotropic(mean: Vec<f64>, var: f64) -> Self {
        let d = mean.len();
        let mut cov = vec![0.0; d * d];
        for k in 0..d {
            cov[k * d + k] = var;
        }
        InitialLaw::Gaussian { mean, cov }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.dim() != d {
            return Err(Error::invalid(format!(
                "initial law is {}-dimensional, dimension is {d}",
                self.dim()
            )));
        }
        match self {
            InitialLaw::Point { x0 } if x0.iter().any(|v| !v.is_finite()) => {
                Err(Error::invalid("point initial law must be finite"))
            }
            InitialLaw::Gaussian { cov, .. } => {
                if cov.len() != d * d {
                    return Err(Error::invalid("covariance must be d x d"));
                }
                cholesky(cov, d).map(|_| ())
            }
            InitialLaw::UniformBox { lo, hi } => {
                if hi.len() != d || lo.iter().zip(hi).any(|(a, b)| !(b > a)) {
                    return Err(Error::invalid("uniform box needs lo < hi on every axis"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Draw `n` particles from the `Initial` stream of `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<f64>> {
        let d = self.dim();
        self.validate(d)?;
        let rng = CounterRng::new(seed, Stream::Initial);
        let mut out = vec![0.0; n * d];
        match self {
            InitialLaw::Point { x0 } => {
                for chunk in out.chunks_mut(d) {
                    chunk.copy_from_slice(x0);
                }
            }
            InitialLaw::Gaussian { mean, cov } => {
                let l = cholesky(cov, d)?;
                let mut z = vec![0.0; d];
                for (i, chunk) in out.chunks_mut(d).enumerate() {
                    rng.fill_normals(0, i as u32, &mut z);
                    for r in 0..d {
                        chunk[r] = mean[r] + (0..=r).map(|c| l[r * d + c] * z[c]).sum::<f64>();
                    }
                }
            }
            InitialLaw::UniformBox { lo, hi } => {
                for (i, chunk) in out.chunks_mut(d).enumerate() {
                    for k in 0..d {
                        let u = rng.uniform_pair(0, i as u32, k as u32)[0];
                        chunk[k] = lo[k] + u * (hi[k] - lo[k]);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Lower-triangular factor of a row-major SPD matrix.
fn cholesky(a: &[f64], d: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::invalid("covariance is not positive definite"));
                }
                l[i * d + i] = s.sqrt();
            } else {
                if (a[i * d + j] - a[j * d + i]).abs() > 1e-12 * (1.0 + a[i * d + j].abs()) {
                    return Err(Error::invalid("covariance is not symmetric"));
                }
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Ok(l)
}

/// Test hook: `Zero` freezes the Brownian increments at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    #[default]
    Gaussian,
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub d: usize,
    pub dt: f64,
    pub t_end: f64,
    pub kernel: KernelSpec,
    pub diffusion: Diffusion,
    pub initial: InitialLaw,
    pub seed: u64,
    pub snapshot_times: Vec<f64>,
    /// Level `k` applies on the `k`-th interval between consecutive points
    /// of `{0} ∪ snapshot_times ∪ {t_end}`.
    pub truncation_schedule: Option<Vec<f64>>,
    pub solver: DriftSolver,
    pub noise: NoiseMode,
}

impl SimConfig {
    /// Constant diffusion, automatic drift solver, snapshots at `0` and `t_end`.
    pub fn new(n: usize, d: usize, dt: f64, t_end: f64, kernel: KernelSpec, initial: InitialLaw, seed: u64) -> Self {
        Self {
            n,
            d,
            dt,
            t_end,
            kernel,
            diffusion: Diffusion::ConstantSqrt2,
            initial,
            seed,
            snapshot_times: vec![0.0, t_end],
            truncation_schedule: None,
            solver: DriftSolver::Auto,
            noise: NoiseMode::Gaussian,
        }
    }

    pub fn steps(&self) -> u64 {
        (self.t_end / self.dt).round() as u64
    }

    fn step_of(&self, t: f64) -> Result<u64> {
        let k = (t / self.dt).round();
        if (k * self.dt - t).abs() > 1e-9 * self.dt.max(t) {
            return Err(Error::invalid(format!("time {t} is not a multiple of dt = {}", self.dt)));
        }
        Ok(k as u64)
    }

    /// Snapshot step indices, sorted and deduplicated.
    pub fn snapshot_steps(&self) -> Result<Vec<u64>> {
        let mut s = self
            .snapshot_times
            .iter()
            .map(|&t| {
                if !(0.0..=self.t_end * (1.0 + 1e-12)).contains(&t) {
                    return Err(Error::invalid(format!("snapshot time {t} outside [0, T]")));
                }
                self.step_of(t)
            })
            .collect::<Result<Vec<_>>>()?;
        s.sort_unstable();
        s.dedup();
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid("N must be at least 2"));
        }
        if self.d == 0 {
            return Err(Error::invalid("dimension must be >= 1"));
        }
        if !(self.dt > 0.0 && self.t_end > 0.0 && self.dt <= self.t_end) {
            return Err(Error::invalid("need 0 < dt <= T"));
        }
        if self.n > u32::MAX as usize {
            return Err(Error::invalid("particle count exceeds the noise counter range"));
        }
        self.step_of(self.t_end)?;
        self.kernel.check_dimension(self.d)?;
        self.initial.validate(self.d)?;
        self.diffusion.validate()?;
        let boundaries = self.schedule_boundaries()?;
        match &self.truncation_schedule {
            Some(levels) => {
                if levels.len() != boundaries.len() - 1 {
                    return Err(Error::invalid(format!(
                        "truncation schedule has {} levels for {} snapshot intervals",
                        levels.len(),
                        boundaries.len() - 1
                    )));
                }
                if levels.iter().any(|&n| !(n > 0.0)) {
                    return Err(Error::invalid("truncation levels must be > 0"));
                }
            }
            None => require_steppable(&self.kernel)?,
        }
        Ok(())
    }

    fn schedule_boundaries(&self) -> Result<Vec<u64>> {
        let mut b = self.snapshot_steps()?;
        b.push(0);
        b.push(self.steps());
        b.sort_unstable();
        b.dedup();
        Ok(b)
    }

    /// Kernel in force during step `k` (covering `[k dt, (k+1) dt)`).
    fn kernel_schedule(&self) -> Result<Vec<(u64, KernelSpec)>> {
        match &self.truncation_schedule {
            None => Ok(vec![(0, self.kernel.clone())]),
            Some(levels) => {
                let b = self.schedule_boundaries()?;
                b.iter()
                    .zip(levels)
                    .map(|(&start, &n)| Ok((start, self.kernel.with_truncation(None)?.truncate(n)?)))
                    .collect()
            }
        }
    }
}

/// Singular kernels are only ever stepped in truncated form.
fn require_steppable(k: &KernelSpec) -> Result<()> {
    if k.truncation().is_none() {
        if let KernelForm::PowerLaw { kappa, .. } = k.form() {
            if *kappa > 0.0 {
                return Err(Error::invalid(
                    "power-law kernels must be truncated before time stepping",
                ));
            }
        }
    }
    Ok(())
}

/// Per-step noise source for [`em_step`].
#[derive(Debug, Clone, Copy)]
pub enum NoiseDraw<'a> {
    /// Draw from the ensemble's own stream at its current step.
    Stream,
    Zero,
    /// Explicit `N x d` standard normals.
    Explicit(&'a [f64]),
}

/// One Euler-Maruyama step with the drift evaluated at the start of the step.
pub fn em_step(
    ens: &ParticleEnsemble,
    dt: f64,
    kernel: &KernelSpec,
    diffusion: &Diffusion,
    noise: NoiseDraw<'_>,
    ws: &mut DriftWorkspace,
) -> Result<ParticleEnsemble> {
    let drift = ws.compute(ens.time, ens, kernel)?;
    let mut out = ens.clone();
    advance(&mut out, &drift, dt, diffusion, noise, None)?;
    Ok(out)
}

/// Applies a precomputed drift; optionally records the standard Brownian
/// increments `sqrt(dt) xi`.
fn advance(
    ens: &mut ParticleEnsemble,
    drift: &[f64],
    dt: f64,
    diffusion: &Diffusion,
    noise: NoiseDraw<'_>,
    increments: Option<&mut Vec<f64>>,
) -> Result<()> {
    use rayon::prelude::*;
    let d = ens.d;
    let step = ens.noise.step;
    let rng = CounterRng::new(ens.noise.seed, Stream::Noise);
    let sqdt = dt.sqrt();
    let mut dw = vec![0.0; ens.positions.len()];
    dw.par_chunks_mut(d).enumerate().for_each(|(i, w)| match noise {
        NoiseDraw::Stream => {
            rng.fill_normals(step, i as u32, w);
            w.iter_mut().for_each(|v| *v *= sqdt);
        }
        NoiseDraw::Zero => {}
        NoiseDraw::Explicit(xi) => {
            for k in 0..d {
                w[k] = xi[i * d + k] * sqdt;
            }
        }
    });
    ens.positions
        .par_chunks_mut(d)
        .zip(drift.par_chunks(d))
        .zip(dw.par_chunks(d))
        .for_each(|((x, b), w)| {
            let mut sig = [0.0; 16];
            diffusion.apply(x, &mut sig[..d]);
            for k in 0..d {
                x[k] += b[k] * dt + sig[k] * w[k];
            }
        });
    ens.time = (step + 1) as f64 * dt;
    ens.noise.step = step + 1;
    if let Some(i) = ens.positions.iter().position(|v| !v.is_finite()) {
        return Err(Error::BlowUp {
            particle: i / d,
            step,
            time: ens.time,
            partial: Vec::new(),
        });
    }
    if let Some(buf) = increments {
        *buf = dw;
    }
    Ok(())
}

/// Recorded particle paths, used by increment and Krylov statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub n: usize,
    pub d: usize,
    /// simulation step size
    pub dt: f64,
    /// positions are stored every `stride` steps
    pub stride: u64,
    pub seed: u64,
    /// `frames[k]` holds all positions at time `k * stride * dt`
    pub frames: Vec<Vec<f64>>,
    /// per-step standard Brownian increments, if requested
    pub increments: Option<Vec<Vec<f64>>>,
}

impl Trajectory {
    pub fn frame_dt(&self) -> f64 {
        self.dt * self.stride as f64
    }

    pub fn horizon(&self) -> f64 {
        self.frame_dt() * (self.frames.len().saturating_sub(1)) as f64
    }

    pub fn frame_time(&self, k: usize) -> f64 {
        self.frame_dt() * k as f64
    }
}

/// What to record besides the snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Recording {
    /// keep positions every `stride` steps (`0` keeps none)
    pub stride: u64,
    pub increments: bool,
}

/// Snapshots plus an optional recorded trajectory.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub snapshots: Vec<ParticleEnsemble>,
    pub trajectory: Option<Trajectory>,
}

pub fn initial_ensemble(cfg: &SimConfig) -> Result<ParticleEnsemble> {
    let pos = cfg.initial.sample(cfg.n, cfg.seed)?;
    ParticleEnsemble::new(pos, cfg.d, 0.0, NoiseState { seed: cfg.seed, step: 0 })
}

/// Runs `cfg` and returns the ensembles at the snapshot times.
pub fn simulate(cfg: &SimConfig) -> Result<Vec<ParticleEnsemble>> {
    Ok(simulate_recording(cfg, Recording::default())?.snapshots)
}

pub fn simulate_recording(cfg: &SimConfig, rec: Recording) -> Result<SimOutput> {
    cfg.validate()?;
    let snaps = cfg.snapshot_steps()?;
    let schedule = cfg.kernel_schedule()?;
    let mut ens = initial_ensemble(cfg)?;
    let mut ws = DriftWorkspace::new(cfg.solver, cfg.n, cfg.d);
    let mut out = Vec::with_capacity(snaps.len());
    let mut traj = (rec.stride > 0 || rec.increments).then(|| Trajectory {
        n: cfg.n,
        d: cfg.d,
        dt: cfg.dt,
        stride: rec.stride.max(1),
        seed: cfg.seed,
        frames: Vec::new(),
        increments: rec.increments.then(Vec::new),
    });
    let mut next_snap = 0;
    let noise = match cfg.noise {
        NoiseMode::Gaussian => NoiseDraw::Stream,
        NoiseMode::Zero => NoiseDraw::Zero,
    };
    let mut inc = Vec::new();
    let mut kernel_idx = 0;
    let total = cfg.steps();
    for step in 0..=total {
        if next_snap < snaps.len() && snaps[next_snap] == step {
            out.push(ens.clone());
            next_snap += 1;
        }
        if let Some(tr) = traj.as_mut() {
            if rec.stride > 0 && step % rec.stride == 0 {
                tr.frames.push(ens.positions.clone());
            }
        }
        if step == total {
            break;
        }
        while kernel_idx + 1 < schedule.len() && schedule[kernel_idx + 1].0 <= step {
            kernel_idx += 1;
        }
        let kernel = &schedule[kernel_idx].1;
        let drift = ws.compute(ens.time, &ens, kernel)?;
        let want_inc = traj.as_ref().is_some_and(|t| t.increments.is_some());
        let res = advance(
            &mut ens,
            &drift,
            cfg.dt,
            &cfg.diffusion,
            noise,
            want_inc.then_some(&mut inc),
        );
        if let Err(Error::BlowUp {
            particle,
            step,
            time,
            ..
        }) = res
        {
            return Err(Error::BlowUp {
                particle,
                step,
                time,
                partial: out,
            });
        }
        res?;
        if want_inc {
            if let Some(incs) = traj.as_mut().and_then(|t| t.increments.as_mut()) {
                incs.push(std::mem::take(&mut inc));
            }
        }
    }
    Ok(SimOutput {
        snapshots: out,
        trajectory: traj,
    })
}

/// `E sup_t |X_t - Y_t|^beta` for two systems sharing noise and initial data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoupledStats {
    pub beta: f64,
    pub sup_diff_moment: f64,
    pub std_error: f64,
}

/// Runs `cfg` twice, with `kernel_a` and `kernel_b`, on the same seed.
pub fn coupled_simulate(cfg: &SimConfig, kernel_a: &KernelSpec, kernel_b: &KernelSpec, beta: f64) -> Result<CoupledStats> {
    if !(beta > 0.0) {
        return Err(Error::invalid("beta must be positive"));
    }
    let mut ca = cfg.clone();
    ca.kernel = kernel_a.clone();
    ca.truncation_schedule = None;
    let mut cb = ca.clone();
    cb.kernel = kernel_b.clone();
    ca.validate()?;
    cb.validate()?;
    let noise = match cfg.noise {
        NoiseMode::Gaussian => NoiseDraw::Stream,
        NoiseMode::Zero => NoiseDraw::Zero,
    };
    let mut xa = initial_ensemble(&ca)?;
    let mut xb = xa.clone();
    let mut wa = DriftWorkspace::new(cfg.solver, cfg.n, cfg.d);
    let mut wb = DriftWorkspace::new(cfg.solver, cfg.n, cfg.d);
    let d = cfg.d;
    let mut sup = vec![0.0f64; cfg.n];
    for _ in 0..cfg.steps() {
        let da = wa.compute(xa.time, &xa, kernel_a)?;
        let db = wb.compute(xb.time, &xb, kernel_b)?;
        advance(&mut xa, &da, cfg.dt, &cfg.diffusion, noise, None)?;
        advance(&mut xb, &db, cfg.dt, &cfg.diffusion, noise, None)?;
        for (i, s) in sup.iter_mut().enumerate() {
            let dist = (0..d)
                .map(|k| (xa.positions[i * d + k] - xb.positions[i * d + k]).powi(2))
                .sum::<f64>()
                .sqrt();
            *s = s.max(dist);
        }
    }
    let vals: Vec<f64> = sup.iter().map(|s| s.powf(beta)).collect();
    let (mean, se) = mean_and_se(&vals);
    Ok(CoupledStats {
        beta,
        sup_diff_moment: mean,
        std_error: se,
    })
}

pub(crate) fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `(1/N) sum_i |X^i|^beta`.
pub fn empirical_moment(ens: &ParticleEnsemble, beta: f64) -> Result<f64> {
    if !(beta >= 1.0) {
        return Err(Error::invalid("moment order beta must be >= 1"));
    }
    let d = ens.d;
    Ok(ens
        .positions
        .chunks(d)
        .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt().powf(beta))
        .sum::<f64>()
        / ens.n as f64)
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

/// `E sup_{t <= T - delta} |X_{t + delta} - X_t|^beta` over recorded frames.
pub fn increment_statistic(traj: &Trajectory, delta: f64, beta: f64) -> Result<Estimate> {
    if traj.frames.len() < 2 {
        return Err(Error::invalid("trajectory has fewer than two frames"));
    }
    let fdt = traj.frame_dt();
    let horizon = traj.horizon();
    if !(delta > 0.0) || delta > horizon * (1.0 + 1e-12) {
        return Err(Error::invalid(format!("delta = {delta} must lie in (0, T = {horizon}]")));
    }
    let m = (delta / fdt).round();
    if (m * fdt - delta).abs() > 1e-9 * delta {
        return Err(Error::invalid(format!(
            "delta = {delta} is not a multiple of the frame spacing {fdt}"
        )));
    }
    let m = m as usize;
    let d = traj.d;
    let vals: Vec<f64> = (0..traj.n)
        .map(|i| {
            let mut sup = 0.0f64;
            for k in 0..traj.frames.len() - m {
                let a = &traj.frames[k][i * d..(i + 1) * d];
                let b = &traj.frames[k + m][i * d..(i + 1) * d];
                let r2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                sup = sup.max(r2);
            }
            sup.sqrt().powf(beta)
        })
        .collect();
    let (mean, std_error) = mean_and_se(&vals);
    Ok(Estimate { mean, std_error })
}

/// Seed for replica `r` of a run seeded with `seed`; independent of `N`.
pub fn replica_seed(seed: u64, replica: u64) -> u64 {
    derive_seed(seed, replica.wrapping_add(0x5245_504C_0000_0000))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Direction;

    fn two_particle(kernel: KernelSpec) -> ParticleEnsemble {
        let _ = kernel;
        ParticleEnsemble::new(vec![0.0, 0.0, 1.0, 0.0], 2, 0.0, NoiseState { seed: 1, step: 0 }).unwrap()
    }

    fn radial_unit() -> KernelSpec {
        KernelSpec::power_law(1.0, 1.0, Direction::Radial).unwrap()
    }

    #[test]
    fn ensemble_invariants() {
        let ns = NoiseState { seed: 0, step: 0 };
        assert!(ParticleEnsemble::new(vec![0.0, 1.0], 2, 0.0, ns).is_err());
        assert!(ParticleEnsemble::new(vec![0.0, f64::NAN], 1, 0.0, ns).is_err());
        assert!(ParticleEnsemble::new(vec![0.0, 1.0, 2.0], 2, 0.0, ns).is_err());
    }

    #[test]
    fn pure_diffusion_step_arithmetic() {
        let ens = two_particle(KernelSpec::zero());
        let xi = [1.0, 0.0, 0.0, 0.0];
        let mut ws = DriftWorkspace::new(DriftSolver::Direct, 2, 2);
        let next = em_step(
            &ens,
            0.01,
            &KernelSpec::zero(),
            &Diffusion::ConstantSqrt2,
            NoiseDraw::Explicit(&xi),
            &mut ws,
        )
        .unwrap();
        assert!((next.particle(0)[0] - 0.141_421_356_237_309_5).abs() < 1e-15);
        assert_eq!(next.particle(0)[1], 0.0);
        assert_eq!(next.noise_state().step, 1);
        assert!((next.time() - 0.01).abs() < 1e-18);
    }

    #[test]
    fn frozen_noise_drift_step() {
        let ens = two_particle(radial_unit());
        let k = radial_unit().truncate(100.0).unwrap();
        let mut ws = DriftWorkspace::new(DriftSolver::Direct, 2, 2);
        let next = em_step(&ens, 0.1, &k, &Diffusion::ConstantSqrt2, NoiseDraw::Zero, &mut ws).unwrap();
        // drift at particle 0 is (1/2) (0 - 1) / 1 = -0.5
        assert!((next.particle(0)[0] + 0.05).abs() < 1e-15);
        assert!((next.particle(1)[0] - 1.05).abs() < 1e-15);
    }

    #[test]
    fn diffusion_bounds_are_checked() {
        let (lo, hi) = Diffusion::DiagonalState { c0: 2.0, gamma: 1.0 }.range();
        assert!((hi - 1.25 * std::f64::consts::SQRT_2).abs() < 1e-15);
        assert!(lo > 1.0);
        assert!(Diffusion::DiagonalState { c0: 1.34, gamma: 1.0 }.validate().is_err());
        assert!(Diffusion::DiagonalState { c0: 1.77, gamma: 1.0 }.validate().is_ok());
        assert!(Diffusion::DiagonalState { c0: 1.77, gamma: 1.5 }.validate().is_err());
        // sampled values stay inside the declared range
        let sig = Diffusion::DiagonalState { c0: 2.0, gamma: 1.0 };
        let mut out = [0.0; 2];
        for k in 0..1000 {
            let x = [k as f64 * 0.37 - 100.0, (k as f64).sin() * 3.0];
            sig.apply(&x, &mut out);
            assert!(out.iter().all(|&s| s >= lo && s <= hi));
        }
    }

    #[test]
    fn untruncated_singular_kernel_is_not_stepped() {
        let cfg = SimConfig::new(4, 2, 0.1, 1.0, radial_unit(), InitialLaw::Point { x0: vec![0.0, 0.0] }, 1);
        assert!(cfg.validate().is_err());
        let mut ok = cfg.clone();
        ok.truncation_schedule = Some(vec![5.0]);
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn snapshot_alignment_is_enforced() {
        let mut cfg = SimConfig::new(
            4,
            1,
            0.1,
            1.0,
            KernelSpec::zero(),
            InitialLaw::Point { x0: vec![0.0] },
            1,
        );
        cfg.snapshot_times = vec![0.0, 0.25, 1.0];
        assert!(cfg.validate().is_err());
        cfg.snapshot_times = vec![0.0, 0.3, 1.0];
        assert!(cfg.validate().is_ok());
        cfg.snapshot_times = vec![0.0, 1.5];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn first_snapshot_is_initial_sample() {
        let mut cfg = SimConfig::new(
            50,
            2,
            0.05,
            0.5,
            KernelSpec::zero(),
            InitialLaw::isotropic(vec![0.0, 0.0], 0.25),
            9,
        );
        cfg.snapshot_times = vec![0.0, 0.5];
        let snaps = simulate(&cfg).unwrap();
        assert_eq!(snaps.len(), 2);
        assert_eq!(snaps[0].positions(), initial_ensemble(&cfg).unwrap().positions());
        assert!((snaps[1].time() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn truncation_schedule_switches_levels() {
        // constant drift 5 clamped to 1 then 2: displacement 0.5 * 1 + 0.5 * 2
        let mut cfg = SimConfig::new(
            3,
            1,
            0.1,
            1.0,
            KernelSpec::constant(vec![5.0]).unwrap(),
            InitialLaw::UniformBox {
                lo: vec![0.0],
                hi: vec![1.0],
            },
            2,
        );
        cfg.noise = NoiseMode::Zero;
        cfg.solver = DriftSolver::Direct;
        cfg.snapshot_times = vec![0.0, 0.5, 1.0];
        cfg.truncation_schedule = Some(vec![1.0, 2.0]);
        let snaps = simulate(&cfg).unwrap();
        let shift = snaps[2].particle(0)[0] - snaps[0].particle(0)[0];
        // (N - 1)/N of the clamped value acts on each particle
        let expected = (2.0 / 3.0) * (0.5 * 1.0 + 0.5 * 2.0);
        assert!((shift - expected).abs() < 1e-12, "{shift}");
    }

    #[test]
    fn moment_hand_arithmetic() {
        let ens = ParticleEnsemble::new(vec![1.0, 0.0, 0.0, -2.0], 2, 0.0, NoiseState { seed: 0, step: 0 }).unwrap();
        assert!((empirical_moment(&ens, 2.0).unwrap() - 2.5).abs() < 1e-15);
        assert!(empirical_moment(&ens, 0.5).is_err());
        let zero = ParticleEnsemble::new(vec![0.0; 6], 3, 0.0, NoiseState { seed: 0, step: 0 }).unwrap();
        assert_eq!(empirical_moment(&zero, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn coupled_identical_kernels_agree_exactly() {
        let mut cfg = SimConfig::new(
            64,
            2,
            0.01,
            0.2,
            KernelSpec::zero(),
            InitialLaw::isotropic(vec![0.0, 0.0], 1.0),
            3,
        );
        cfg.solver = DriftSolver::Direct;
        let k = KernelSpec::power_law(0.5, 1.5, Direction::Radial).unwrap().truncate(10.0).unwrap();
        let s = coupled_simulate(&cfg, &k, &k, 2.0).unwrap();
        assert_eq!(s.sup_diff_moment, 0.0);
    }

    #[test]
    fn coupled_constant_offset() {
        let mut cfg = SimConfig::new(
            10,
            2,
            0.01,
            0.5,
            KernelSpec::zero(),
            InitialLaw::isotropic(vec![0.0, 0.0], 1.0),
            3,
        );
        cfg.solver = DriftSolver::Direct;
        let c = 0.8;
        let s = coupled_simulate(&cfg, &KernelSpec::zero(), &KernelSpec::constant(vec![c, 0.0]).unwrap(), 1.0).unwrap();
        // self-interaction is excluded, so the mean-field drift is c (N-1)/N
        let expected = c * 0.5 * 9.0 / 10.0;
        assert!((s.sup_diff_moment - expected).abs() < 1e-12, "{}", s.sup_diff_moment);
    }

    #[test]
    fn frozen_dynamics_have_no_increments() {
        let mut cfg = SimConfig::new(
            8,
            1,
            0.01,
            0.1,
            KernelSpec::zero(),
            InitialLaw::isotropic(vec![0.0], 1.0),
            3,
        );
        cfg.noise = NoiseMode::Zero;
        let out = simulate_recording(
            &cfg,
            Recording {
                stride: 1,
                increments: false,
            },
        )
        .unwrap();
        let tr = out.trajectory.unwrap();
        assert_eq!(tr.frames.len(), 11);
        assert_eq!(increment_statistic(&tr, 0.05, 2.0).unwrap().mean, 0.0);
        assert!(increment_statistic(&tr, 0.2, 2.0).is_err());
        assert!(increment_statistic(&tr, 0.015, 2.0).is_err());
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = [4.0, 2.0, 0.6, 2.0, 2.0, 0.5, 0.6, 0.5, 3.0];
        let l = cholesky(&a, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| l[i * 3 + k] * l[j * 3 + k]).sum();
                assert!((v - a[i * 3 + j]).abs() < 1e-12);
            }
        }
        assert!(cholesky(&[1.0, 2.0, 2.0, 1.0], 2).is_err());
    }
}
