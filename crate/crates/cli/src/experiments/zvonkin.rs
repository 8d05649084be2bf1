//! Sweep of the resolvent parameter for the backward Kolmogorov equation on
//! the torus, with the kernel itself as the drift field.

use serde::Serialize;

use mvlov_core::fpe::{feynman_kac_check, zvonkin_solve, FeynmanKacReport, VectorField, ZvonkinConfig};
use mvlov_core::grid::GridSpec;
use mvlov_core::kernels::KernelSpec;

use super::log_log_slope;
use crate::artifacts::{num, ArtifactWriter};
use crate::config::ExperimentConfig;
use crate::RunError;

/// Frames of the drift for time-scaled kernels; one frame otherwise.
const TIME_FRAMES: usize = 16;
const CELL_LEVELS: usize = 4;

#[derive(Debug, Clone, Serialize)]
pub struct ZvonkinRow {
    pub lambda: f64,
    pub sup_u: f64,
    pub sup_grad_u: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ZvonkinSweepReport {
    pub rows: Vec<ZvonkinRow>,
    /// log-log slope of `sup |grad u|` against `lambda`
    pub grad_slope: f64,
    pub strictly_decreasing: bool,
    pub threshold: f64,
    /// smallest swept `lambda` with `sup |u| + sup |grad u| <= threshold`
    pub lambda_star: Option<f64>,
    pub feynman_kac: Option<FeynmanKacReport>,
}

pub(crate) fn drift_frames(kernel: &KernelSpec, grid: &GridSpec, t_end: f64) -> Vec<(f64, VectorField)> {
    let h = grid.spacings();
    let frames = if kernel.time_scaling().is_some() { TIME_FRAMES } else { 1 };
    (0..frames)
        .map(|k| {
            let t = t_end * k as f64 / frames as f64;
            let field = VectorField::from_fn(grid.clone(), |x, out| kernel.cell_average(t, x, &h, CELL_LEVELS, out));
            (t, field)
        })
        .collect()
}

pub fn zvonkin_sweep(cfg: &ExperimentConfig, out: &mut ArtifactWriter) -> Result<ZvonkinSweepReport, RunError> {
    let z = cfg.section(&cfg.zvonkin, "zvonkin")?;
    let kernel = cfg.kernel_spec()?;
    kernel.check_dimension(z.d)?;
    if kernel.component_bound(z.t_end).is_none() {
        return Err(RunError::Config("the drift must be bounded; truncate the kernel".into()));
    }
    let grid = GridSpec::cube(z.d, z.half_width, z.cells)?;
    let b = drift_frames(&kernel, &grid, z.t_end);
    let mut lambdas = z.lambdas.clone();
    lambdas.sort_by(f64::total_cmp);
    let mut rows = Vec::new();
    let mut first = None;
    for &lambda in &lambdas {
        let sol = zvonkin_solve(
            &b,
            &ZvonkinConfig {
                grid: grid.clone(),
                lambda,
                t_end: z.t_end,
                ds_max: z.ds_max,
                keep_frames: false,
            },
        )?;
        rows.push(ZvonkinRow {
            lambda,
            sup_u: sol.sup_u,
            sup_grad_u: sol.sup_grad_u,
            steps: sol.steps,
        });
        if first.is_none() {
            first = Some(sol);
        }
    }
    let feynman_kac = match (&z.feynman_kac, &first) {
        (Some(fk), Some(sol)) => Some(feynman_kac_check(&b, sol, &fk.x0, fk.paths, fk.dt, z.t_end, cfg.seed)?),
        _ => None,
    };
    let x: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.sup_grad_u).collect();
    let grad_slope = if rows.len() >= 2 && y.iter().all(|v| *v > 0.0) {
        log_log_slope(&x, &y)
    } else {
        f64::NAN
    };
    let strictly_decreasing = rows.windows(2).all(|w| w[1].sup_grad_u < w[0].sup_grad_u);
    let lambda_star = rows
        .iter()
        .find(|r| r.sup_u + r.sup_grad_u <= z.threshold)
        .map(|r| r.lambda);
    let csv: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![num(r.lambda), num(r.sup_u), num(r.sup_grad_u), r.steps.to_string()])
        .collect();
    out.csv("zvonkin.csv", &["lambda", "sup_u", "sup_grad_u", "steps"], &csv)?;
    if let Some(fk) = &feynman_kac {
        out.jsonl("feynman_kac.jsonl", std::slice::from_ref(fk))?;
    }
    Ok(ZvonkinSweepReport {
        rows,
        grad_slope,
        strictly_decreasing,
        threshold: z.threshold,
        lambda_star,
        feynman_kac,
    })
}
