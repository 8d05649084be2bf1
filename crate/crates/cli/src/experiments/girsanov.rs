//! Change of measure with the flow of marginals frozen: driftless paths
//! reweighted by the exponential martingale against paths simulated with
//! the frozen drift.

use serde::Serialize;

use mvlov_core::kernels::KernelSpec;
use mvlov_core::particles::{
    frozen_flow_simulate, girsanov_weights, weighted_expectation, Estimate, FrozenFlow, GirsanovWeight, Recording,
};
use mvlov_core::rng::derive_seed;

use super::{fpe_run, mean_se, run_particles};
use crate::artifacts::{num, ArtifactWriter};
use crate::config::ExperimentConfig;
use crate::RunError;

#[derive(Debug, Clone, Serialize)]
pub struct GirsanovReport {
    pub paths: usize,
    /// `E[weight]`, which should be one
    pub mean_weight: Estimate,
    /// `|mean_weight - 1|` in standard errors
    pub weight_z: f64,
    pub min_weight: f64,
    /// `E[f(Z_T) weight]` over driftless paths, `f` the first coordinate
    pub reweighted: Estimate,
    /// the self-normalized variant of `reweighted`
    pub reweighted_self_normalized: Estimate,
    /// `E[f(X_T)]` over paths driven by the frozen drift
    pub drifted: Estimate,
    /// `|reweighted - drifted|` in combined standard errors
    pub agreement_z: f64,
}

pub fn girsanov_check(cfg: &ExperimentConfig, out: &mut ArtifactWriter) -> Result<GirsanovReport, RunError> {
    let g = cfg.section(&cfg.girsanov, "girsanov")?;
    let kernel = cfg.kernel_spec()?;
    let sim = cfg.sim_config()?;
    if g.frames == 0 {
        return Err(RunError::Config("girsanov.frames must be positive".into()));
    }
    let times: Vec<f64> = (0..g.frames).map(|k| sim.t_end * k as f64 / g.frames as f64).collect();
    let run = fpe_run(cfg, &kernel, Some(times), 1)?;
    let boundary = cfg.section(&cfg.fpe, "fpe")?.boundary;
    let flow = FrozenFlow::from_densities(&run.output.snapshots, &kernel, boundary)?;

    let mut driftless = sim.clone();
    driftless.kernel = KernelSpec::zero();
    driftless.truncation_schedule = None;
    driftless.snapshot_times = vec![sim.t_end];
    let traj = run_particles(
        &driftless,
        Recording {
            stride: driftless.steps(),
            increments: true,
        },
        out,
    )?
    .trajectory
    .expect("recording requested");
    let weights: Vec<GirsanovWeight> = girsanov_weights(&traj, &sim.diffusion, &flow)?;
    let d = traj.d;
    let last = traj.frames.last().expect("final frame");
    let f: Vec<f64> = (0..traj.n).map(|i| last[i * d]).collect();
    let ones = vec![1.0; traj.n];
    let mean_weight = weighted_expectation(&ones, &weights, false)?;
    let reweighted = weighted_expectation(&f, &weights, false)?;
    let reweighted_self_normalized = weighted_expectation(&f, &weights, true)?;

    let mut drifted_cfg = sim.clone();
    drifted_cfg.seed = derive_seed(cfg.seed, 1);
    drifted_cfg.snapshot_times = vec![sim.t_end];
    let ens = frozen_flow_simulate(&drifted_cfg, &flow)?.pop().expect("final snapshot");
    let (mean, std_error) = mean_se(&ens.axis(0));
    let drifted = Estimate { mean, std_error };

    let csv: Vec<Vec<String>> = weights
        .iter()
        .zip(&f)
        .enumerate()
        .map(|(i, (w, x))| vec![i.to_string(), num(w.log_weight), num(w.integrated_quadratic), num(*x)])
        .collect();
    out.csv("weights.csv", &["path", "log_weight", "integrated_quadratic", "f"], &csv)?;
    Ok(GirsanovReport {
        paths: traj.n,
        weight_z: (mean_weight.mean - 1.0).abs() / mean_weight.std_error,
        mean_weight,
        min_weight: weights.iter().map(|w| w.weight()).fold(f64::INFINITY, f64::min),
        agreement_z: (reweighted.mean - drifted.mean).abs() / reweighted.std_error.hypot(drifted.std_error),
        reweighted,
        reweighted_self_normalized,
        drifted,
    })
}
