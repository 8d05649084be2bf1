//! Two-sided heat-kernel bounds and the gradient bound, fitted to particle
//! KDEs or to the grid solution.

use serde::Serialize;

use mvlov_core::density::{
    fit_gradient_bound, fit_two_sided, initial_density, kde, normalized_gradient_sup, AtomMeasure, FitReport,
    GridDensity, Measure,
};
use mvlov_core::grid::GridSpec;
use mvlov_core::particles::{InitialLaw, ParticleEnsemble};
use mvlov_core::Error;

use super::{bandwidth, fpe_run, snapshots};
use crate::artifacts::{num, ArtifactWriter};
use crate::config::{DensitySource, ExperimentConfig, FitSection};
use crate::RunError;

/// Densities at the fit times on one resolution, plus the initial measure.
struct FitInput {
    rho: Vec<(f64, GridDensity)>,
    mu0: Measure,
}

fn initial_measure(law: &InitialLaw, grid: &GridSpec) -> Result<Measure, Error> {
    Ok(match law {
        InitialLaw::Point { x0 } => Measure::Atoms(AtomMeasure::dirac(x0)),
        other => Measure::Grid(initial_density(other, grid)?),
    })
}

fn wanted(f: &FitSection, t: f64) -> bool {
    match &f.times {
        Some(ts) => ts.iter().any(|s| (s - t).abs() <= 1e-9 * t.max(1.0)),
        None => t > 0.0,
    }
}

/// Collects the fit input at `factor` times the configured resolution.
/// Particle snapshots are simulated once and passed in.
fn fit_input(
    cfg: &ExperimentConfig,
    f: &FitSection,
    ensembles: Option<&[ParticleEnsemble]>,
    factor: usize,
) -> Result<FitInput, RunError> {
    match f.source {
        DensitySource::Particles => {
            let p = cfg.particles()?;
            let grid = f.grid.as_ref().expect("validated").build_scaled(p.d, factor)?;
            let bw = bandwidth(f.bandwidth);
            let rho = ensembles
                .expect("particle snapshots")
                .iter()
                .filter(|e| wanted(f, e.time()))
                .map(|e| Ok((e.time(), kde(e, &bw, &grid)?)))
                .collect::<Result<Vec<_>, Error>>()?;
            let mu0 = initial_measure(&p.initial.build()?, &grid)?;
            Ok(FitInput { rho, mu0 })
        }
        DensitySource::Fpe => {
            let kernel = cfg.kernel_spec()?;
            let run = fpe_run(cfg, &kernel, f.times.clone(), factor)?;
            let fpe = cfg.section(&cfg.fpe, "fpe")?;
            let law = match (&fpe.initial, &cfg.particles) {
                (Some(i), _) => i.build()?,
                (None, Some(p)) => p.initial.build()?,
                (None, None) => unreachable!("fpe_run checked the initial law"),
            };
            let rho = run.output.snapshots.into_iter().filter(|(t, _)| wanted(f, *t)).collect();
            let mu0 = initial_measure(&law, &run.grid)?;
            Ok(FitInput { rho, mu0 })
        }
    }
}

fn particle_snapshots(cfg: &ExperimentConfig, f: &FitSection) -> Result<Option<Vec<ParticleEnsemble>>, RunError> {
    match f.source {
        DensitySource::Particles => Ok(Some(snapshots(&cfg.sim_config()?)?)),
        DensitySource::Fpe => Ok(None),
    }
}

fn write_fit(out: &mut ArtifactWriter, stem: &str, fits: &[&FitReport]) -> Result<(), RunError> {
    out.jsonl(&format!("{stem}.jsonl"), fits)?;
    let rows: Vec<Vec<String>> = fits
        .iter()
        .enumerate()
        .flat_map(|(level, r)| {
            r.profile
                .iter()
                .map(move |(g, c)| vec![level.to_string(), num(*g), num(*c)])
        })
        .collect();
    out.csv(&format!("{stem}_profile.csv"), &["refinement", "gamma", "c"], &rows)
}

fn ratio(a: f64, b: f64) -> f64 {
    (a / b).max(b / a)
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundsFitReport {
    pub fit: FitReport,
    pub refined: Option<FitReport>,
    /// `max(c / c', c' / c)` between the two resolutions
    pub c_stability: Option<f64>,
}

pub fn bounds_fit(cfg: &ExperimentConfig, out: &mut ArtifactWriter) -> Result<BoundsFitReport, RunError> {
    let f = cfg.section(&cfg.fit, "fit")?;
    let ens = particle_snapshots(cfg, f)?;
    let run = |factor| -> Result<FitReport, RunError> {
        let input = fit_input(cfg, f, ens.as_deref(), factor)?;
        Ok(fit_two_sided(&input.rho, &input.mu0, &f.gamma_search, f.c_max)?)
    };
    let fit = run(1)?;
    let refined = if f.refine { Some(run(2)?) } else { None };
    let c_stability = refined.as_ref().map(|r| ratio(fit.fit.c, r.fit.c));
    let mut all = vec![&fit];
    all.extend(refined.as_ref());
    write_fit(out, "bounds_fit", &all)?;
    Ok(BoundsFitReport {
        fit,
        refined,
        c_stability,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientFitReport {
    pub fit: FitReport,
    pub refined: Option<FitReport>,
    pub c_stability: Option<f64>,
    /// `(t, sup t^{1/2} |grad rho_t| / P_{gamma t} mu0)` at the fitted gamma
    pub normalized: Vec<(f64, f64)>,
    /// max over min of the normalized quantity across times
    pub normalized_variation: f64,
}

pub fn gradient_fit(cfg: &ExperimentConfig, out: &mut ArtifactWriter) -> Result<GradientFitReport, RunError> {
    let f = cfg.section(&cfg.fit, "fit")?;
    let ens = particle_snapshots(cfg, f)?;
    let input = fit_input(cfg, f, ens.as_deref(), 1)?;
    let fit = fit_gradient_bound(&input.rho, &input.mu0, &f.gamma_search, f.c_max)?;
    let refined = if f.refine {
        let fine = fit_input(cfg, f, ens.as_deref(), 2)?;
        Some(fit_gradient_bound(&fine.rho, &fine.mu0, &f.gamma_search, f.c_max)?)
    } else {
        None
    };
    let normalized = input
        .rho
        .iter()
        .map(|(t, rho)| Ok((*t, normalized_gradient_sup(*t, rho, &input.mu0, fit.fit.gamma)?)))
        .collect::<Result<Vec<_>, Error>>()?;
    let hi = normalized.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    let lo = normalized.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    let c_stability = refined.as_ref().map(|r| ratio(fit.fit.c, r.fit.c));
    let mut all = vec![&fit];
    all.extend(refined.as_ref());
    write_fit(out, "gradient_fit", &all)?;
    let rows: Vec<Vec<String>> = normalized.iter().map(|(t, v)| vec![num(*t), num(*v)]).collect();
    out.csv("gradient_normalized.csv", &["time", "normalized"], &rows)?;
    Ok(GradientFitReport {
        fit,
        refined,
        c_stability,
        normalized,
        normalized_variation: hi / lo,
    })
}
