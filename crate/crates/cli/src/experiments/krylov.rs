//! Krylov-type ratios `E int f(t, X_t) dt / ||f||` over a family of bumps,
//! and the two-particle version with a capped singular test function.

use serde::Serialize;

use mvlov_core::grid::GridSpec;
use mvlov_core::metrics::{
    exp_moment_check, krylov_check, pair_krylov_check, ExpMomentReport, KrylovReport, KrylovTest, PairField,
    SpaceTimeField,
};
use mvlov_core::particles::{Recording, SimConfig, Trajectory};
use mvlov_core::rng::derive_seed;
use mvlov_core::Error;

use super::run_particles;
use crate::artifacts::{num, ArtifactWriter};
use crate::config::ExperimentConfig;
use crate::RunError;

fn record(sim: &SimConfig, stride: u64, out: &mut ArtifactWriter) -> Result<Trajectory, RunError> {
    let mut sim = sim.clone();
    sim.snapshot_times = vec![sim.t_end];
    Ok(run_particles(
        &sim,
        Recording {
            stride,
            increments: false,
        },
        out,
    )?
    .trajectory
    .expect("recording requested"))
}

/// Same sampling interval at step size `dt`.
fn refined(sim: &SimConfig, stride: u64, dt: f64) -> (SimConfig, u64) {
    let mut fine = sim.clone();
    fine.dt = dt;
    let stride = ((stride as f64 * sim.dt / dt).round() as u64).max(1);
    (fine, stride)
}

fn bump_tests(grid: &GridSpec, centers: &[Vec<f64>], widths: &[f64], t_end: f64) -> Result<Vec<KrylovTest>, Error> {
    let d = grid.dim();
    let mut x = vec![0.0; d];
    let mut tests = Vec::new();
    for (ci, c) in centers.iter().enumerate() {
        if c.len() != d {
            return Err(Error::InvalidInput(format!("bump centre {ci} is not {d}-dimensional")));
        }
        for &w in widths {
            let values = (0..grid.len())
                .map(|k| {
                    grid.center(k, &mut x);
                    let r2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                    (-r2 / (2.0 * w * w)).exp()
                })
                .collect();
            tests.push(KrylovTest {
                id: format!("bump_c{ci}_w{w}"),
                field: SpaceTimeField::stationary(grid.clone(), values, t_end)?,
            });
        }
    }
    Ok(tests)
}

#[derive(Debug, Clone, Serialize)]
pub struct KrylovCheckReport {
    pub report: KrylovReport,
    pub refined: Option<KrylovReport>,
    pub khasminskii: Option<ExpMomentReport>,
}

fn write_entries(out: &mut ArtifactWriter, name: &str, reports: &[&KrylovReport]) -> Result<(), RunError> {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .enumerate()
        .flat_map(|(level, r)| {
            r.per_test.iter().map(move |e| {
                vec![
                    level.to_string(),
                    e.id.clone(),
                    num(e.lhs),
                    num(e.lhs_std_error),
                    num(e.norm),
                    num(e.ratio),
                ]
            })
        })
        .collect();
    out.csv(name, &["refinement", "id", "lhs", "lhs_std_error", "norm", "ratio"], &rows)
}

pub fn krylov(cfg: &ExperimentConfig, out: &mut ArtifactWriter) -> Result<KrylovCheckReport, RunError> {
    let k = cfg.section(&cfg.krylov, "krylov")?;
    let spec = k.norm.build()?;
    let sim = cfg.sim_config()?;
    let grid = k.grid.build(sim.d)?;
    let tests = bump_tests(&grid, &k.centers, &k.widths, sim.t_end)?;
    let traj = record(&sim, k.stride, out)?;
    let mut report = krylov_check(&traj, &tests, &spec)?;
    let refined = match k.refine_dt {
        Some(dt) => {
            let (fine, stride) = refined(&sim, k.stride, dt);
            let r = krylov_check(&record(&fine, stride, out)?, &tests, &spec)?;
            report.compare_refinement(&r);
            Some(r)
        }
        None => None,
    };
    let khasminskii = match (k.khasminskii_lambda, tests.first()) {
        (Some(lambda), Some(t)) => Some(exp_moment_check(&traj, &t.field, lambda)?),
        _ => None,
    };
    let mut all = vec![&report];
    all.extend(refined.as_ref());
    write_entries(out, "krylov.csv", &all)?;
    if let Some(e) = &khasminskii {
        out.jsonl("khasminskii.jsonl", std::slice::from_ref(e))?;
    }
    Ok(KrylovCheckReport {
        report,
        refined,
        khasminskii,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PairKrylovReport {
    pub report: KrylovReport,
    pub refined: Option<KrylovReport>,
}

pub fn pair_krylov(cfg: &ExperimentConfig, out: &mut ArtifactWriter) -> Result<PairKrylovReport, RunError> {
    let pk = cfg.section(&cfg.pair_krylov, "pair_krylov")?;
    let sim = cfg.sim_config()?;
    let grid = pk.grid.build(sim.d)?;
    let (alpha, cap) = (pk.alpha, pk.cap);
    let field = PairField::from_fn(grid.clone(), grid, sim.t_end, 1, |_, x, y| {
        let r = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if r > 0.0 { r.powf(-alpha).min(cap) } else { cap }
    })?;
    let pair = |sim: &SimConfig, stride: u64, out: &mut ArtifactWriter| -> Result<KrylovReport, RunError> {
        let mut a = sim.clone();
        a.seed = derive_seed(cfg.seed, 1);
        let mut b = sim.clone();
        b.seed = derive_seed(cfg.seed, 2);
        let ta = record(&a, stride, out)?;
        let tb = record(&b, stride, out)?;
        Ok(pair_krylov_check(&ta, &tb, &field, pk.p1, pk.p2, pk.q0)?)
    };
    let mut report = pair(&sim, pk.stride, out)?;
    let refined = match pk.refine_dt {
        Some(dt) => {
            let (fine, stride) = refined(&sim, pk.stride, dt);
            let r = pair(&fine, stride, out)?;
            report.compare_refinement(&r);
            Some(r)
        }
        None => None,
    };
    let mut all = vec![&report];
    all.extend(refined.as_ref());
    write_entries(out, "pair_krylov.csv", &all)?;
    Ok(PairKrylovReport { report, refined })
}
