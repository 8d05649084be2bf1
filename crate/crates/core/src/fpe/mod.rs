//! Grid solvers: the nonlinear Fokker-Planck equation
//! `d rho / dt = Laplace(rho) - div(B[rho] rho)`, with
//! `B[rho](x) = int b(x - y) rho(y) dy`, and the backward Zvonkin equation.
//!
//! The divergence sign is the one Itô's formula gives for
//! `dX = B dt + sqrt(2) dW`, so particle marginals and grid solutions are
//! directly comparable.

mod zvonkin;

pub use zvonkin::{feynman_kac_check, zvonkin_solve, FeynmanKacReport, ZvonkinConfig, ZvonkinSolution};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conv::StencilConvolver;
use crate::density::GridDensity;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::kernels::KernelSpec;

/// Refinement levels of the cell-averaged stencil near the origin.
const STENCIL_LEVELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    NoFlux,
    Periodic,
}

/// A vector field sampled at cell centres, one array per component.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: GridSpec,
    pub components: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn new(grid: GridSpec, components: Vec<Vec<f64>>) -> Result<Self> {
        if components.len() != grid.dim() || components.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::GridMismatch("vector field components do not match the grid".into()));
        }
        Ok(Self { grid, components })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        let d = grid.dim();
        let n = grid.len();
        Self {
            grid,
            components: vec![vec![0.0; n]; d],
        }
    }

    /// Tabulate `f` at the cell centres.
    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64], &mut [f64])) -> Self {
        let d = grid.dim();
        let mut components = vec![vec![0.0; grid.len()]; d];
        let mut x = vec![0.0; d];
        let mut v = vec![0.0; d];
        for c in 0..grid.len() {
            grid.center(c, &mut x);
            f(&x, &mut v);
            for k in 0..d {
                components[k][c] = v[k];
            }
        }
        Self { grid, components }
    }

    /// Multilinear interpolation, zero outside the box.
    pub fn interpolate(&self, x: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = self.grid.interpolate(c, x);
        }
    }

    /// Largest Euclidean norm over the cells.
    pub fn max_norm(&self) -> f64 {
        (0..self.grid.len())
            .map(|c| self.components.iter().map(|v| v[c] * v[c]).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn max_component(&self) -> f64 {
        self.components.iter().flatten().fold(0.0, |m: f64, v| m.max(v.abs()))
    }
}

/// Precomputed convolution `rho -> B[rho]` on a fixed grid.
pub struct DriftConvolver {
    grid: GridSpec,
    conv: StencilConvolver,
}

impl DriftConvolver {
    /// The stencil is the cell average of `b_t` over each offset cell.
    pub fn new(grid: &GridSpec, kernel: &KernelSpec, t: f64, boundary: Boundary) -> Result<Self> {
        kernel.check_dimension(grid.dim())?;
        let h = grid.spacings();
        let stencil = |m: &[i64], out: &mut [f64]| {
            let centre: Vec<f64> = m.iter().zip(&h).map(|(&i, &s)| i as f64 * s).collect();
            kernel.cell_average(t, &centre, &h, STENCIL_LEVELS, out);
        };
        let conv = StencilConvolver::new(&grid.shape, grid.dim(), boundary == Boundary::Periodic, stencil);
        Ok(Self {
            grid: grid.clone(),
            conv,
        })
    }

    pub fn apply(&self, rho: &GridDensity) -> Result<VectorField> {
        rho.grid().require_same(&self.grid)?;
        let masses = rho.cell_masses();
        VectorField::new(self.grid.clone(), self.conv.apply(&masses))
    }
}

/// `B(x_i) = sum_j rho_j vol K(i - j)` with `K` the cell-averaged kernel.
pub fn convolve_drift(rho: &GridDensity, kernel: &KernelSpec, t: f64, boundary: Boundary) -> Result<VectorField> {
    DriftConvolver::new(rho.grid(), kernel, t, boundary)?.apply(rho)
}

/// The same sum evaluated directly in `O(M^2)`; a reference for tests.
pub fn convolve_drift_direct(rho: &GridDensity, kernel: &KernelSpec, t: f64, boundary: Boundary) -> Result<VectorField> {
    let g = rho.grid();
    let d = g.dim();
    kernel.check_dimension(d)?;
    let h = g.spacings();
    let masses = rho.cell_masses();
    let n = g.len();
    let mut comps = vec![vec![0.0; n]; d];
    let (mut ii, mut jj) = (vec![0usize; d], vec![0usize; d]);
    let mut centre = vec![0.0; d];
    let mut v = vec![0.0; d];
    for i in 0..n {
        g.unravel(i, &mut ii);
        for (j, &m) in masses.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            g.unravel(j, &mut jj);
            for k in 0..d {
                let mut off = ii[k] as i64 - jj[k] as i64;
                if boundary == Boundary::Periodic {
                    let l = g.shape[k] as i64;
                    off = off.rem_euclid(l);
                    if off > l / 2 {
                        off -= l;
                    }
                }
                centre[k] = off as f64 * h[k];
            }
            kernel.cell_average(t, &centre, &h, STENCIL_LEVELS, &mut v);
            for k in 0..d {
                comps[k][i] += m * v[k];
            }
        }
    }
    VectorField::new(g.clone(), comps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FpeConfig {
    pub grid: GridSpec,
    /// largest allowed time step
    pub dt: f64,
    pub t_end: f64,
    pub kernel: KernelSpec,
    pub boundary: Boundary,
    pub initial: GridDensity,
    /// output times in `[0, t_end]`
    pub snapshot_times: Vec<f64>,
}

/// Result of [`fpe_solve`].
#[derive(Debug, Clone)]
pub struct FpeOutput {
    pub snapshots: Vec<(f64, GridDensity)>,
    pub steps: usize,
    /// `max |mass(t) - mass(0)|` over all steps
    pub max_mass_drift: f64,
    /// largest per-step mass change
    pub max_step_mass_change: f64,
}

/// Time-step limit `min(h^2 / (4d), h / (2 max_drift))`.
pub fn cfl_limit(grid: &GridSpec, max_drift: f64) -> f64 {
    let d = grid.dim() as f64;
    let h = grid.spacings().into_iter().fold(f64::INFINITY, f64::min);
    let diff = h * h / (4.0 * d);
    if max_drift > 0.0 {
        diff.min(h / (2.0 * max_drift))
    } else {
        diff
    }
}

/// Step bound under which every cell update is a convex combination, so
/// values stay nonnegative.
fn positivity_limit(grid: &GridSpec, max_drift: f64) -> f64 {
    let rate: f64 = grid
        .spacings()
        .iter()
        .map(|h| 2.0 / (h * h) + 2.0 * max_drift / h)
        .sum();
    1.0 / rate
}

pub fn fpe_solve(cfg: &FpeConfig) -> Result<FpeOutput> {
    let g = &cfg.grid;
    cfg.initial.grid().require_same(g)?;
    if !(cfg.dt > 0.0 && cfg.t_end > 0.0) {
        return Err(Error::invalid("need dt > 0 and T > 0"));
    }
    if (cfg.initial.mass() - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "initial mass is {}, expected 1",
            cfg.initial.mass()
        )));
    }
    cfg.kernel.check_dimension(g.dim())?;
    let max_drift = cfg.kernel.component_bound(cfg.t_end).ok_or_else(|| {
        Error::invalid("the FPE solver needs a bounded (truncated) kernel")
    })?;
    let limit = cfl_limit(g, max_drift);
    if cfg.dt > limit * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt: cfg.dt, limit });
    }
    let dt_max = cfg.dt.min(positivity_limit(g, max_drift));
    let mut times = cfg.snapshot_times.clone();
    if times.iter().any(|t| !(0.0..=cfg.t_end * (1.0 + 1e-12)).contains(t)) {
        return Err(Error::invalid("snapshot times must lie in [0, T]"));
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup();

    let time_dependent = cfg.kernel.time_scaling().is_some();
    let static_conv = if cfg.kernel.is_zero() || time_dependent {
        None
    } else {
        Some(DriftConvolver::new(g, &cfg.kernel, 0.0, cfg.boundary)?)
    };
    let mut rho = cfg.initial.values().to_vec();
    let m0 = cfg.initial.mass();
    let vol = g.cell_volume();
    let mut out = Vec::new();
    let mut t = 0.0;
    let mut steps = 0usize;
    let mut max_mass_drift = 0.0f64;
    let mut max_step = 0.0f64;
    let mut prev_mass = m0;
    let mut next = vec![0.0; rho.len()];
    let mut faces = Vec::new();
    for &target in &times {
        let span = target - t;
        let n = if span > 0.0 { (span / dt_max).ceil() as usize } else { 0 };
        let dt = if n > 0 { span / n as f64 } else { 0.0 };
        for k in 0..n {
            let now = t + k as f64 * dt;
            let field = if cfg.kernel.is_zero() {
                None
            } else {
                let dens = GridDensity::new(g.clone(), rho.clone()).map_err(|_| Error::NegativeDensity {
                    cell: rho.iter().position(|v| *v < 0.0).unwrap_or(0),
                    step: steps,
                    value: rho.iter().cloned().fold(f64::INFINITY, f64::min),
                })?;
                Some(match &static_conv {
                    Some(c) => c.apply(&dens)?,
                    None => convolve_drift(&dens, &cfg.kernel, now, cfg.boundary)?,
                })
            };
            let check = fv_step(g, cfg.boundary, &rho, field.as_ref(), dt, &mut next, &mut faces);
            std::mem::swap(&mut rho, &mut next);
            steps += 1;
            if let Some((cell, value)) = check.bad {
                return Err(Error::NegativeDensity {
                    cell,
                    step: steps,
                    value,
                });
            }
            let mass = check.sum * vol;
            max_step = max_step.max((mass - prev_mass).abs());
            max_mass_drift = max_mass_drift.max((mass - m0).abs());
            prev_mass = mass;
        }
        t = target;
        out.push((t, GridDensity::new(g.clone(), rho.clone())?));
    }
    Ok(FpeOutput {
        snapshots: out,
        steps,
        max_mass_drift,
        max_step_mass_change: max_step,
    })
}

/// Target cells per work unit of a step. Work units are whole lines along
/// the last axis, fixed by the grid alone, so per-unit mass sums and hence
/// the reported diagnostics do not depend on the worker count.
const CHUNK: usize = 8192;

/// Outcome of one step: the new mass (before the cell-volume factor) and
/// the first cell that went negative or non-finite.
struct StepCheck {
    sum: f64,
    bad: Option<(usize, f64)>,
}

/// Net flux `F(a -> b)` per unit face area, for cells `a` left of `b`.
#[inline(always)]
fn face_flux(ra: f64, rb: f64, va: f64, vb: f64, inv_h: f64) -> f64 {
    let v = 0.5 * (va + vb);
    -(rb - ra) * inv_h + if v > 0.0 { v * ra } else { v * rb }
}

/// One conservative finite-volume step: centred diffusive flux, upwind
/// advective flux with face velocity the mean of the two cell velocities.
fn fv_step(
    g: &GridSpec,
    boundary: Boundary,
    rho: &[f64],
    field: Option<&VectorField>,
    dt: f64,
    out: &mut [f64],
    faces: &mut Vec<f64>,
) -> StepCheck {
    let line = *g.shape.last().expect("grids have d >= 1");
    let unit = line * (CHUNK / line).max(1);
    let run = |ci: usize, chunk: &mut [f64], faces: &mut [f64]| {
        let mut check = StepCheck { sum: 0.0, bad: None };
        for (li, cells) in chunk.chunks_mut(line).enumerate() {
            fv_line(g, boundary, rho, field, dt, ci * unit + li * line, cells, faces, &mut check);
        }
        check
    };
    faces.resize(line + 1, 0.0);
    let parts: Vec<StepCheck> = if out.len() <= unit {
        vec![run(0, out, faces)]
    } else {
        out.par_chunks_mut(unit)
            .enumerate()
            .map(|(ci, chunk)| run(ci, chunk, &mut vec![0.0; line + 1]))
            .collect()
    };
    StepCheck {
        sum: parts.iter().map(|p| p.sum).sum(),
        bad: parts.iter().find_map(|p| p.bad),
    }
}

/// The update, the mass sum and the sign check in one pass. `base(j, o)`
/// is the value before the last-axis fluxes. Four lanes of partial sums and
/// minima vectorize and are combined in a fixed order; a NaN or infinite
/// cell shows up as a non-finite sum, so the minimum need not see it.
#[inline(always)]
fn finish_line(out: &mut [f64], base: impl Fn(usize, f64) -> f64, faces: &[f64], coef: f64) -> (f64, bool) {
    let faces = &faces[..out.len() + 1];
    let mut acc = [0.0; 4];
    let mut lo = [f64::INFINITY; 4];
    let mut lanes = out.chunks_exact_mut(4);
    let mut j = 0;
    for o in &mut lanes {
        for a in 0..4 {
            let s = j + a;
            let x = base(s, o[a]) - coef * (faces[s + 1] - faces[s]);
            o[a] = x;
            acc[a] += x;
            lo[a] = lo[a].min(x);
        }
        j += 4;
    }
    for (a, o) in lanes.into_remainder().iter_mut().enumerate() {
        let s = j + a;
        let x = base(s, *o) - coef * (faces[s + 1] - faces[s]);
        *o = x;
        acc[a] += x;
        lo[a] = lo[a].min(x);
    }
    let sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    let min = lo[0].min(lo[1]).min(lo[2].min(lo[3]));
    (sum, sum.is_finite() && min >= 0.0)
}

/// Update the line of cells starting at flat index `b` along the last axis.
#[allow(clippy::too_many_arguments)]
fn fv_line(
    g: &GridSpec,
    boundary: Boundary,
    rho: &[f64],
    field: Option<&VectorField>,
    dt: f64,
    b: usize,
    out: &mut [f64],
    faces: &mut [f64],
    check: &mut StepCheck,
) {
    let d = g.dim();
    let l = out.len();
    let periodic = boundary == Boundary::Periodic;
    let zero = [0.0];
    // velocity along axis k on the cells starting at `at`, broadcast zero without a field
    let vel = |k: usize, at: usize| -> &[f64] {
        match field {
            Some(f) => &f.components[k][at..at + l],
            None => &zero,
        }
    };
    let here = &rho[b..b + l];
    if d > 1 {
        out.copy_from_slice(here);
    }

    // axes across lines: the neighbours form whole lines
    let strides = g.strides();
    let mut rest = b;
    for k in (0..d - 1).rev() {
        let n = g.shape[k];
        let s = strides[k];
        rest /= g.shape[k + 1];
        let i = rest % n;
        let inv_h = 1.0 / g.spacing(k);
        let coef = dt * inv_h;
        let right = if i + 1 < n { Some(b + s) } else if periodic { Some(b + s - n * s) } else { None };
        let left = if i > 0 { Some(b - s) } else if periodic { Some(b + (n - 1) * s) } else { None };
        let vh = vel(k, b);
        for (nb, sign) in [(right, 1.0), (left, -1.0)] {
            let Some(nb) = nb else { continue };
            let there = &rho[nb..nb + l];
            let vt = vel(k, nb);
            for j in 0..l {
                let (vj, vn) = if field.is_some() { (vh[j], vt[j]) } else { (0.0, 0.0) };
                // outflow through this face, oriented away from the line
                let f = if sign > 0.0 {
                    face_flux(here[j], there[j], vj, vn, inv_h)
                } else {
                    -face_flux(there[j], here[j], vn, vj, inv_h)
                };
                out[j] -= coef * f;
            }
        }
    }

    // last axis: faces inside the line, then the two ends
    let k = d - 1;
    let inv_h = 1.0 / g.spacing(k);
    let coef = dt * inv_h;
    let v = vel(k, b);
    match field {
        Some(_) => {
            for j in 0..l - 1 {
                faces[j + 1] = face_flux(here[j], here[j + 1], v[j], v[j + 1], inv_h);
            }
        }
        None => {
            for (f, w) in faces[1..l].iter_mut().zip(here.windows(2)) {
                *f = -(w[1] - w[0]) * inv_h;
            }
        }
    }
    let wrap = if periodic && l > 1 {
        let (v0, vl) = if field.is_some() { (v[0], v[l - 1]) } else { (0.0, 0.0) };
        face_flux(here[l - 1], here[0], vl, v0, inv_h)
    } else {
        0.0
    };
    faces[0] = wrap;
    faces[l] = wrap;
    // the update, the mass sum and the sign check in one pass; four partial
    // sums break the dependency chain, in a fixed order
    let (sum, ok) = if d > 1 {
        finish_line(out, |_, o| o, faces, coef)
    } else {
        finish_line(out, |j, _| here[j], faces, coef)
    };
    check.sum += sum;
    if !ok && check.bad.is_none() {
        check.bad = out
            .iter()
            .enumerate()
            .find(|(_, x)| !(**x >= 0.0 && x.is_finite()))
            .map(|(j, &x)| (b + j, x));
    }
}
