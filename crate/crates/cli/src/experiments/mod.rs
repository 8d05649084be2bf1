//! One function per experiment kind. Each returns a typed report, which is
//! also the `summary` of the manifest, and writes its own artifacts.

mod ensemble;
mod fits;
mod girsanov;
mod krylov;
mod zvonkin;

pub use ensemble::{chaos, superpose, ChaosReport, ChaosRow, SuperposeReport, SuperposeRow, SuperposeSummary};
pub use fits::{bounds_fit, gradient_fit, BoundsFitReport, GradientFitReport};
pub use girsanov::{girsanov_check, GirsanovReport};
pub use krylov::{krylov, pair_krylov, KrylovCheckReport, PairKrylovReport};
pub use zvonkin::{zvonkin_sweep, ZvonkinRow, ZvonkinSweepReport};

use serde::Serialize;
use serde_json::Value;

use mvlov_core::density::{initial_density, write_density_csv, write_mvg1, Bandwidth};
use mvlov_core::fpe::{cfl_limit, fpe_solve, FpeConfig, FpeOutput};
use mvlov_core::grid::GridSpec;
use mvlov_core::kernels::KernelSpec;
use mvlov_core::particles::{
    coupled_simulate, empirical_moment, increment_statistic, simulate, simulate_recording, write_csv, write_mvl1,
    Estimate, ParticleEnsemble, Recording, SimOutput,
};
use mvlov_core::Error;

use crate::artifacts::{num, ArtifactWriter};
use crate::config::{ExperimentConfig, ExperimentKind, FpeSection};
use crate::RunError;

pub fn dispatch(cfg: &ExperimentConfig, out: &mut ArtifactWriter) -> Result<Value, RunError> {
    fn json<T: Serialize>(r: T) -> Result<Value, RunError> {
        serde_json::to_value(r).map_err(|e| RunError::Config(e.to_string()))
    }
    use ExperimentKind::*;
    match cfg.experiment {
        Simulate => json(simulate_experiment(cfg, out)?),
        Fpe => json(fpe_experiment(cfg, out)?),
        Superpose => json(superpose(cfg, out)?),
        Chaos => json(chaos(cfg, out)?),
        TruncationSweep => json(truncation_sweep(cfg, out)?),
        ZvonkinSweep => json(zvonkin_sweep(cfg, out)?),
        GirsanovCheck => json(girsanov_check(cfg, out)?),
        BoundsFit => json(bounds_fit(cfg, out)?),
        GradientFit => json(gradient_fit(cfg, out)?),
        KrylovCheck => json(krylov(cfg, out)?),
        PairKrylov => json(pair_krylov(cfg, out)?),
        Moments => json(moments(cfg, out)?),
    }
}

pub(crate) fn bandwidth(fixed: Option<f64>) -> Bandwidth {
    match fixed {
        Some(h) => Bandwidth::Fixed(h),
        None => Bandwidth::Auto,
    }
}

pub(crate) fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Least-squares slope of `ln y` against `ln x`.
pub(crate) fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Runs a particle simulation; on blow-up the completed snapshots are
/// written before the error is passed on.
pub(crate) fn run_particles(
    sim: &mvlov_core::particles::SimConfig,
    rec: Recording,
    out: &mut ArtifactWriter,
) -> Result<SimOutput, RunError> {
    match simulate_recording(sim, rec) {
        Ok(o) => Ok(o),
        Err(e) => {
            if let Error::BlowUp { partial, .. } = &e {
                write_ensembles(partial, out)?;
            }
            Err(e.into())
        }
    }
}

fn write_ensembles(snaps: &[ParticleEnsemble], out: &mut ArtifactWriter) -> Result<Vec<String>, RunError> {
    let mut names = Vec::new();
    for (k, ens) in snaps.iter().enumerate() {
        let stem = format!("snapshot_{k:03}");
        out.binary(&format!("{stem}.mvl1"), |b| write_mvl1(ens, b))?;
        out.csv_with(&format!("{stem}.csv"), |b| write_csv(ens, b, true))?;
        names.push(stem);
    }
    Ok(names)
}

/// The grid, initial density and solution of the Fokker-Planck section.
pub(crate) struct FpeRun {
    pub grid: GridSpec,
    pub output: FpeOutput,
    pub dt: f64,
}

pub(crate) fn fpe_run(
    cfg: &ExperimentConfig,
    kernel: &KernelSpec,
    times: Option<Vec<f64>>,
    refine: usize,
) -> Result<FpeRun, RunError> {
    let f: &FpeSection = cfg.section(&cfg.fpe, "fpe")?;
    let initial = match (&f.initial, &cfg.particles) {
        (Some(i), _) => i.clone(),
        (None, Some(p)) => p.initial.clone(),
        (None, None) => return Err(RunError::Config("fpe needs `fpe.initial` or a [particles] table".into())),
    };
    let grid = f.grid.build_scaled(initial.dim(), refine)?;
    let rho0 = initial_density(&initial.build()?, &grid)?;
    let t_end = f
        .t_end
        .or(cfg.particles.as_ref().map(|p| p.t_end))
        .ok_or_else(|| RunError::Config("fpe needs `fpe.t_end` or a [particles] table".into()))?;
    let snapshot_times = times
        .or_else(|| f.snapshot_times.clone())
        .or_else(|| cfg.particles.as_ref().and_then(|p| p.snapshot_times.clone()))
        .unwrap_or_else(|| vec![t_end]);
    let dt = match f.dt {
        Some(dt) => dt,
        None => cfl_limit(&grid, kernel.component_bound(t_end).unwrap_or(0.0)),
    };
    let output = fpe_solve(&FpeConfig {
        grid: grid.clone(),
        dt,
        t_end,
        kernel: kernel.clone(),
        boundary: f.boundary,
        initial: rho0,
        snapshot_times,
    })?;
    Ok(FpeRun { grid, output, dt })
}

#[derive(Debug, Clone, Serialize)]
pub struct SnapshotSummary {
    pub time: f64,
    pub mean: Vec<f64>,
    pub second_moment: f64,
    pub file: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateReport {
    pub n: usize,
    pub d: usize,
    pub steps: u64,
    pub snapshots: Vec<SnapshotSummary>,
}

pub fn simulate_experiment(cfg: &ExperimentConfig, out: &mut ArtifactWriter) -> Result<SimulateReport, RunError> {
    let sim = cfg.sim_config()?;
    let snaps = run_particles(&sim, Recording::default(), out)?.snapshots;
    let names = write_ensembles(&snaps, out)?;
    let snapshots = snaps
        .iter()
        .zip(names)
        .map(|(e, file)| {
            let mean = (0..e.dim())
                .map(|k| e.axis(k).iter().sum::<f64>() / e.len() as f64)
                .collect();
            Ok(SnapshotSummary {
                time: e.time(),
                mean,
                second_moment: empirical_moment(e, 2.0)?,
                file,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let rows: Vec<Vec<String>> = snapshots
        .iter()
        .map(|s| {
            let mut r = vec![num(s.time), num(s.second_moment)];
            r.extend(s.mean.iter().map(|m| num(*m)));
            r
        })
        .collect();
    let mut header = vec!["time".to_string(), "second_moment".to_string()];
    header.extend((0..sim.d).map(|k| format!("mean_{k}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.csv("summary.csv", &header, &rows)?;
    Ok(SimulateReport {
        n: sim.n,
        d: sim.d,
        steps: sim.steps(),
        snapshots,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FpeReport {
    pub cells: usize,
    pub dt: f64,
    pub steps: usize,
    pub max_mass_drift: f64,
    pub max_step_mass_change: f64,
    pub times: Vec<f64>,
}

pub fn fpe_experiment(cfg: &ExperimentConfig, out: &mut ArtifactWriter) -> Result<FpeReport, RunError> {
    let kernel = cfg.kernel_spec()?;
    let run = fpe_run(cfg, &kernel, None, 1)?;
    let mut rows = Vec::new();
    for (k, (t, rho)) in run.output.snapshots.iter().enumerate() {
        out.binary(&format!("density_{k:03}.mvg1"), |b| write_mvg1(rho, b))?;
        out.csv_with(&format!("density_{k:03}.csv"), |b| write_density_csv(rho, b))?;
        rows.push(vec![num(*t), num(rho.mass())]);
    }
    out.csv("mass.csv", &["time", "mass"], &rows)?;
    Ok(FpeReport {
        cells: run.grid.len(),
        dt: run.dt,
        steps: run.output.steps,
        max_mass_drift: run.output.max_mass_drift,
        max_step_mass_change: run.output.max_step_mass_change,
        times: run.output.snapshots.iter().map(|s| s.0).collect(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct IncrementRow {
    pub delta: f64,
    pub estimate: Estimate,
    /// `estimate / delta^(beta / 2)`
    pub normalized: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentsReport {
    pub beta: f64,
    /// `max_t m_beta(t) / (m_beta(0) + 1)`
    pub moment_ratio: f64,
    pub increment_beta: f64,
    pub increments: Vec<IncrementRow>,
    /// max over min of the normalized increment statistic
    pub increment_spread: f64,
}

pub fn moments(cfg: &ExperimentConfig, out: &mut ArtifactWriter) -> Result<MomentsReport, RunError> {
    let m = cfg.section(&cfg.moments, "moments")?;
    let sim = cfg.sim_config()?;
    let traj = run_particles(
        &sim,
        Recording {
            stride: m.stride,
            increments: false,
        },
        out,
    )?
    .trajectory
    .expect("recording requested");
    let d = traj.d;
    let mut rows = Vec::new();
    let mut moments = Vec::new();
    for (k, frame) in traj.frames.iter().enumerate() {
        let mb = frame
            .chunks(d)
            .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt().powf(m.beta))
            .sum::<f64>()
            / traj.n as f64;
        rows.push(vec![num(traj.frame_time(k)), num(mb)]);
        moments.push(mb);
    }
    out.csv("moments.csv", &["time", "moment"], &rows)?;
    let moment_ratio = moments.iter().fold(0.0f64, |a, &b| a.max(b)) / (moments[0] + 1.0);
    let increments = m
        .deltas
        .iter()
        .map(|&delta| {
            let estimate = increment_statistic(&traj, delta, m.increment_beta)?;
            Ok(IncrementRow {
                delta,
                estimate,
                normalized: estimate.mean / delta.powf(m.increment_beta / 2.0),
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let rows: Vec<Vec<String>> = increments
        .iter()
        .map(|r| vec![num(r.delta), num(r.estimate.mean), num(r.estimate.std_error), num(r.normalized)])
        .collect();
    out.csv("increments.csv", &["delta", "mean", "std_error", "normalized"], &rows)?;
    let hi = increments.iter().map(|r| r.normalized).fold(f64::NEG_INFINITY, f64::max);
    let lo = increments.iter().map(|r| r.normalized).fold(f64::INFINITY, f64::min);
    let increment_spread = if increments.is_empty() { f64::NAN } else { hi / lo };
    Ok(MomentsReport {
        beta: m.beta,
        moment_ratio,
        increment_beta: m.increment_beta,
        increments,
        increment_spread,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TruncationRow {
    pub level: f64,
    pub sup_diff_moment: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TruncationSweepReport {
    pub reference_level: f64,
    pub beta: f64,
    pub rows: Vec<TruncationRow>,
    /// log-log slope of the coupled moment against the level
    pub slope: f64,
}

pub fn truncation_sweep(cfg: &ExperimentConfig, out: &mut ArtifactWriter) -> Result<TruncationSweepReport, RunError> {
    let s = cfg.section(&cfg.truncation_sweep, "truncation_sweep")?;
    let kernel = cfg.kernel_spec()?;
    let reference = kernel.with_truncation(None)?.truncate(s.reference_level)?;
    let sim = cfg.particles()?.build(reference.clone(), cfg.seed)?;
    let mut levels = s.levels.clone();
    levels.sort_by(f64::total_cmp);
    let rows = levels
        .iter()
        .map(|&level| {
            let k = kernel.with_truncation(None)?.truncate(level)?;
            let st = coupled_simulate(&sim, &k, &reference, s.beta)?;
            Ok(TruncationRow {
                level,
                sup_diff_moment: st.sup_diff_moment,
                std_error: st.std_error,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let csv: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![num(r.level), num(r.sup_diff_moment), num(r.std_error)])
        .collect();
    out.csv("truncation.csv", &["level", "sup_diff_moment", "std_error"], &csv)?;
    let positive: Vec<&TruncationRow> = rows.iter().filter(|r| r.sup_diff_moment > 0.0).collect();
    let slope = if positive.len() >= 2 {
        let x: Vec<f64> = positive.iter().map(|r| r.level).collect();
        let y: Vec<f64> = positive.iter().map(|r| r.sup_diff_moment).collect();
        log_log_slope(&x, &y)
    } else {
        f64::NAN
    };
    Ok(TruncationSweepReport {
        reference_level: s.reference_level,
        beta: s.beta,
        rows,
        slope,
    })
}

/// Ensembles at the configured snapshot times, without writing them.
pub(crate) fn snapshots(sim: &mvlov_core::particles::SimConfig) -> Result<Vec<ParticleEnsemble>, RunError> {
    Ok(simulate(sim)?)
}
