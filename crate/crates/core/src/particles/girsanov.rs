//! Change of measure between the driftless dynamics `dZ = sigma(Z) dW` and
//! the linear SDE `dX = B_t(X) dt + sigma(X) dW` whose drift is frozen to a
//! reference measure flow.
//!
//! On the Euler-Maruyama grid the per-step likelihood ratio is exactly
//! `exp(bt . dW - |bt|^2 dt / 2)` with `bt = sigma^{-1} B`, so
//! reweighting driftless paths reproduces the drifted scheme's law without
//! any discretisation bias.

use rayon::prelude::*;

use super::{advance, initial_ensemble, mean_and_se, Diffusion, Estimate, NoiseDraw, NoiseMode, ParticleEnsemble, SimConfig, Trajectory};
use crate::density::GridDensity;
use crate::error::{Error, Result};
use crate::fpe::{convolve_drift, Boundary, VectorField};
use crate::kernels::KernelSpec;

/// Time-dependent drift `B_t(x)`, piecewise constant in time between frames
/// and multilinear in space; zero outside the frame grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenFlow {
    frames: Vec<(f64, VectorField)>,
}

impl FrozenFlow {
    /// Frames must start at `t = 0` with strictly increasing times.
    pub fn new(frames: Vec<(f64, VectorField)>) -> Result<Self> {
        if frames.is_empty() || frames[0].0 != 0.0 {
            return Err(Error::invalid("a frozen flow needs a frame at t = 0"));
        }
        if frames.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::invalid("frozen flow frame times must increase"));
        }
        if frames.iter().flat_map(|(_, f)| f.components.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("frozen drift must be finite"));
        }
        Ok(Self { frames })
    }

    pub fn constant(field: VectorField) -> Self {
        Self {
            frames: vec![(0.0, field)],
        }
    }

    /// `B_t(x) = int b_t(x - y) mu_t(dy)` for each density of the flow.
    pub fn from_densities(flow: &[(f64, GridDensity)], kernel: &KernelSpec, boundary: Boundary) -> Result<Self> {
        let frames = flow
            .iter()
            .map(|(t, rho)| Ok((*t, convolve_drift(rho, kernel, *t, boundary)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(frames)
    }

    pub fn frames(&self) -> &[(f64, VectorField)] {
        &self.frames
    }

    pub fn dim(&self) -> usize {
        self.frames[0].1.grid.dim()
    }

    fn active(&self, t: f64) -> &VectorField {
        let k = self.frames.partition_point(|(tf, _)| *tf <= t + 1e-12);
        &self.frames[k.max(1) - 1].1
    }

    pub fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.active(t).interpolate(x, out);
    }
}

/// Stochastic exponential of one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GirsanovWeight {
    pub log_weight: f64,
    /// `(1/2) int |bt|^2 ds`
    pub integrated_quadratic: f64,
}

impl GirsanovWeight {
    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }
}

/// Weights of every path in `traj`, which must come from a zero-kernel run
/// with `diffusion` and stored increments.
///
/// Paths are rebuilt step by step from the initial frame and the
/// increments, so any frame stride is accepted.
pub fn girsanov_weights(traj: &Trajectory, diffusion: &Diffusion, flow: &FrozenFlow) -> Result<Vec<GirsanovWeight>> {
    let incs = traj.increments.as_ref().ok_or(Error::MissingIncrements)?;
    let z0 = traj
        .frames
        .first()
        .ok_or_else(|| Error::invalid("trajectory has no initial frame"))?;
    let d = traj.d;
    if flow.dim() != d {
        return Err(Error::invalid("frozen flow and trajectory dimensions differ"));
    }
    let dt = traj.dt;
    let weights = (0..traj.n)
        .into_par_iter()
        .map(|i| {
            let mut z = z0[i * d..(i + 1) * d].to_vec();
            let mut b = vec![0.0; d];
            let mut sig = vec![0.0; d];
            let (mut stoch, mut quad) = (0.0, 0.0);
            for (k, step) in incs.iter().enumerate() {
                let dw = &step[i * d..(i + 1) * d];
                flow.eval(k as f64 * dt, &z, &mut b);
                diffusion.apply(&z, &mut sig);
                for c in 0..d {
                    let bt = b[c] / sig[c];
                    stoch += bt * dw[c];
                    quad += 0.5 * bt * bt * dt;
                    z[c] += sig[c] * dw[c];
                }
            }
            GirsanovWeight {
                log_weight: stoch - quad,
                integrated_quadratic: quad,
            }
        })
        .collect::<Vec<_>>();
    if let Some(w) = weights.iter().find(|w| !w.log_weight.is_finite()) {
        return Err(Error::invalid(format!("non-finite log weight {}", w.log_weight)));
    }
    Ok(weights)
}

/// `E[f ℰ]` from per-path values and weights. With `self_normalized` the
/// sum is divided by the total weight instead of the path count; the
/// standard error then comes from the delta method.
pub fn weighted_expectation(values: &[f64], weights: &[GirsanovWeight], self_normalized: bool) -> Result<Estimate> {
    if values.len() != weights.len() || values.len() < 2 {
        return Err(Error::invalid("need matching values and weights, at least two paths"));
    }
    let w: Vec<f64> = weights.iter().map(GirsanovWeight::weight).collect();
    if !self_normalized {
        let prod: Vec<f64> = values.iter().zip(&w).map(|(f, w)| f * w).collect();
        let (mean, std_error) = mean_and_se(&prod);
        return Ok(Estimate { mean, std_error });
    }
    let total: f64 = w.iter().sum();
    let mean = values.iter().zip(&w).map(|(f, w)| f * w).sum::<f64>() / total;
    let var = values.iter().zip(&w).map(|(f, w)| (w * (f - mean)).powi(2)).sum::<f64>();
    Ok(Estimate {
        mean,
        std_error: var.sqrt() / total,
    })
}

/// Independent particles driven by the frozen drift, on the noise stream of
/// `cfg.seed`; `cfg.kernel` is ignored. Returns the snapshots of `cfg`.
pub fn frozen_flow_simulate(cfg: &SimConfig, flow: &FrozenFlow) -> Result<Vec<ParticleEnsemble>> {
    let mut c = cfg.clone();
    c.kernel = KernelSpec::zero();
    c.truncation_schedule = None;
    c.validate()?;
    if flow.dim() != c.d {
        return Err(Error::invalid("frozen flow and configuration dimensions differ"));
    }
    let snaps = c.snapshot_steps()?;
    let noise = match c.noise {
        NoiseMode::Gaussian => NoiseDraw::Stream,
        NoiseMode::Zero => NoiseDraw::Zero,
    };
    let mut ens = initial_ensemble(&c)?;
    let mut out = Vec::with_capacity(snaps.len());
    let d = c.d;
    let mut drift = vec![0.0; c.n * d];
    let mut next = 0;
    for step in 0..=c.steps() {
        if next < snaps.len() && snaps[next] == step {
            out.push(ens.clone());
            next += 1;
        }
        if step == c.steps() {
            break;
        }
        let t = step as f64 * c.dt;
        drift
            .par_chunks_mut(d)
            .zip(ens.positions.par_chunks(d))
            .for_each(|(b, x)| flow.eval(t, x, b));
        advance(&mut ens, &drift, c.dt, &c.diffusion, noise, None)?;
    }
    Ok(out)
}
