//! Particle ensembles against the Fokker-Planck solution: the
//! superposition check at fixed `N` and propagation of chaos across `N`.

use rayon::prelude::*;
use serde::Serialize;

use mvlov_core::density::{kde, GridDensity};
use mvlov_core::metrics::{wasserstein_1d_grid, wasserstein_1d_samples_grid};
use mvlov_core::particles::{replica_seed, simulate, NoiseState, ParticleEnsemble};
use mvlov_core::rng::{derive_seed, CounterRng, Stream};
use mvlov_core::Error;

use super::{bandwidth, fpe_run, mean_se, snapshots};
use crate::artifacts::{num, ArtifactWriter};
use crate::config::{ChaosReference, ExperimentConfig};
use crate::RunError;

#[derive(Debug, Clone, Serialize)]
pub struct SuperposeRow {
    pub n: usize,
    pub replica: usize,
    pub time: f64,
    /// first-axis marginal W1 between the particle KDE and the grid solution
    pub w1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuperposeSummary {
    pub n: usize,
    pub time: f64,
    pub mean_w1: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuperposeReport {
    pub rows: Vec<SuperposeRow>,
    pub summary: Vec<SuperposeSummary>,
}

impl SuperposeReport {
    pub fn summary_for(&self, n: usize) -> Vec<&SuperposeSummary> {
        self.summary.iter().filter(|s| s.n == n).collect()
    }
}

pub fn superpose(cfg: &ExperimentConfig, out: &mut ArtifactWriter) -> Result<SuperposeReport, RunError> {
    let s = cfg.section(&cfg.superpose, "superpose")?;
    let base = cfg.sim_config()?;
    let kernel = cfg.kernel_spec()?;
    let times: Vec<f64> = base.snapshot_steps()?.iter().map(|&k| k as f64 * base.dt).collect();
    let run = fpe_run(cfg, &kernel, Some(times.clone()), 1)?;
    if run.output.snapshots.len() != times.len() {
        return Err(RunError::Config("particle and grid snapshot times do not line up".into()));
    }
    let reference: Vec<GridDensity> = run
        .output
        .snapshots
        .iter()
        .map(|(_, rho)| rho.marginal(0))
        .collect::<Result<_, Error>>()?;
    let bw = bandwidth(s.bandwidth);
    let mut ns = vec![base.n];
    ns.extend(s.compare_n.iter().copied());
    let mut rows = Vec::new();
    for &n in &ns {
        for r in 0..s.replicas {
            let mut sim = base.clone();
            sim.n = n;
            sim.seed = replica_seed(derive_seed(cfg.seed, n as u64), r as u64);
            let snaps = snapshots(&sim)?;
            for (ens, (t, reference)) in snaps.iter().zip(times.iter().zip(&reference)) {
                let est = kde(ens, &bw, &run.grid)?.marginal(0)?;
                rows.push(SuperposeRow {
                    n,
                    replica: r,
                    time: *t,
                    w1: wasserstein_1d_grid(&est, reference, 1.0)?,
                });
            }
        }
    }
    let mut summary = Vec::new();
    for &n in &ns {
        for &t in &times {
            let v: Vec<f64> = rows.iter().filter(|r| r.n == n && r.time == t).map(|r| r.w1).collect();
            let (mean_w1, std_error) = mean_se(&v);
            summary.push(SuperposeSummary {
                n,
                time: t,
                mean_w1,
                std_error,
            });
        }
    }
    let csv: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.n.to_string(), r.replica.to_string(), num(r.time), num(r.w1)])
        .collect();
    out.csv("superpose.csv", &["n", "replica", "time", "w1"], &csv)?;
    out.jsonl("superpose_summary.jsonl", &summary)?;
    Ok(SuperposeReport { rows, summary })
}

#[derive(Debug, Clone, Serialize)]
pub struct ChaosRow {
    pub n: usize,
    /// W1 between the law of particle 0 (over replicas) and the reference
    pub w1: f64,
    /// bootstrap standard error
    pub std_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChaosReport {
    pub reference: ChaosReference,
    pub replicas: usize,
    pub rows: Vec<ChaosRow>,
    /// every step in `N` is non-increasing up to two combined standard errors
    pub decreasing_within_error: bool,
}

fn bootstrap_se(samples: &[f64], reference: &GridDensity, resamples: usize, seed: u64) -> Result<f64, Error> {
    if resamples < 2 {
        return Ok(f64::NAN);
    }
    let rng = CounterRng::new(seed, Stream::Bootstrap);
    let m = samples.len();
    let dists = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let re: Vec<f64> = (0..m)
                .map(|i| samples[((rng.uniform(b as u64, i as u32) * m as f64) as usize).min(m - 1)])
                .collect();
            wasserstein_1d_samples_grid(&re, reference, 1.0)
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let mean = dists.iter().sum::<f64>() / resamples as f64;
    let var = dists.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (resamples as f64 - 1.0);
    Ok(var.sqrt())
}

pub fn chaos(cfg: &ExperimentConfig, out: &mut ArtifactWriter) -> Result<ChaosReport, RunError> {
    let c = cfg.section(&cfg.chaos, "chaos")?;
    let mut base = cfg.sim_config()?;
    base.snapshot_times = vec![base.t_end];
    let kernel = cfg.kernel_spec()?;
    // replica `r` uses the same seed for every N
    let run_n = |n: usize| -> Result<Vec<ParticleEnsemble>, Error> {
        (0..c.replicas)
            .into_par_iter()
            .map(|r| {
                let mut sim = base.clone();
                sim.n = n;
                sim.seed = replica_seed(cfg.seed, r as u64);
                Ok(simulate(&sim)?.pop().expect("final snapshot"))
            })
            .collect()
    };
    let (reference, compared): (GridDensity, &[usize]) = match c.reference {
        ChaosReference::Fpe => {
            let run = fpe_run(cfg, &kernel, Some(vec![base.t_end]), 1)?;
            let rho = run.output.snapshots.last().expect("final snapshot").1.marginal(0)?;
            (rho, &c.n_values)
        }
        ChaosReference::LargestN => {
            let (&largest, rest) = c.n_values.split_last().expect("validated non-empty");
            let grid = c.grid.as_ref().expect("validated").build(base.d)?;
            let pooled: Vec<f64> = run_n(largest)?.iter().flat_map(|e| e.positions().to_vec()).collect();
            let ens = ParticleEnsemble::new(pooled, base.d, base.t_end, NoiseState { seed: cfg.seed, step: 0 })?;
            (kde(&ens, &bandwidth(None), &grid)?.marginal(0)?, rest)
        }
    };
    let mut rows = Vec::new();
    for &n in compared {
        let samples: Vec<f64> = run_n(n)?.iter().map(|e| e.particle(0)[0]).collect();
        rows.push(ChaosRow {
            n,
            w1: wasserstein_1d_samples_grid(&samples, &reference, 1.0)?,
            std_error: bootstrap_se(&samples, &reference, c.bootstrap, derive_seed(cfg.seed, n as u64))?,
        });
    }
    let decreasing_within_error = rows
        .windows(2)
        .all(|w| w[1].w1 <= w[0].w1 + 2.0 * w[0].std_error.hypot(w[1].std_error));
    let csv: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.n.to_string(), num(r.w1), num(r.std_error)])
        .collect();
    out.csv("chaos.csv", &["n", "w1", "std_error"], &csv)?;
    Ok(ChaosReport {
        reference: c.reference,
        replicas: c.replicas,
        rows,
        decreasing_within_error,
    })
}
