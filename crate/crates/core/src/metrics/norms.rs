//! Localized space-time norms `sup_z (int_0^T ||f_t chi_r^z||_p^q dt)^(1/q)`
//! and the mixed two-variable norm over unit-cube pairs.
//!
//! Space integrals use the cell-centre rule; time integrals treat each frame
//! as constant on its interval.

use serde::{Deserialize, Serialize};

use crate::conv::StencilConvolver;
use crate::cutoff::chi;
use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Where the supremum over translates `z` is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lattice {
    /// `z` ranges over all cell centres, with the cutoff `chi((x - z) / r)`.
    ContinuumSup,
    /// `z` ranges over `Z^d` and the localizer is the indicator of the unit
    /// cube `(z_1, z_1 + 1] x ... x (z_d, z_d + 1]`; `r` is not used.
    UnitLattice,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub lattice: Lattice,
}

impl NormSpec {
    pub fn new(p: f64, q: f64, r: f64, lattice: Lattice) -> Result<Self> {
        let s = Self { p, q, r, lattice };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0 && self.q > 1.0) {
            return Err(Error::invalid(format!(
                "norm exponents must exceed 1, got p = {}, q = {}",
                self.p, self.q
            )));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::invalid("cutoff radius must be positive"));
        }
        Ok(())
    }
}

/// A function of `(t, x)` stored as frames on a fixed grid; frame `k`
/// holds the values on `[k dt, (k + 1) dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    pub grid: GridSpec,
    pub dt: f64,
    pub frames: Vec<Vec<f64>>,
}

impl SpaceTimeField {
    pub fn new(grid: GridSpec, dt: f64, frames: Vec<Vec<f64>>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::invalid("a space-time field needs at least one frame"));
        }
        if !(dt > 0.0) {
            return Err(Error::invalid("frame spacing must be positive"));
        }
        if frames.iter().any(|f| f.len() != grid.len()) {
            return Err(Error::GridMismatch("frame length does not match the grid".into()));
        }
        Ok(Self { grid, dt, frames })
    }

    /// Time-independent field on `[0, t_end)`.
    pub fn stationary(grid: GridSpec, values: Vec<f64>, t_end: f64) -> Result<Self> {
        Self::new(grid, t_end, vec![values])
    }

    /// Tabulates `f(t_k, x)` at cell centres for `t_k = k dt`.
    pub fn from_fn(grid: GridSpec, dt: f64, frames: usize, f: impl Fn(f64, &[f64]) -> f64) -> Result<Self> {
        let mut x = vec![0.0; grid.dim()];
        let data = (0..frames)
            .map(|k| {
                (0..grid.len())
                    .map(|c| {
                        grid.center(c, &mut x);
                        f(k as f64 * dt, &x)
                    })
                    .collect()
            })
            .collect();
        Self::new(grid, dt, data)
    }

    pub fn t_end(&self) -> f64 {
        self.dt * self.frames.len() as f64
    }

    pub fn frame_index(&self, t: f64) -> usize {
        ((t / self.dt + 1e-9).floor().max(0.0) as usize).min(self.frames.len() - 1)
    }

    /// Multilinear in space, piecewise constant in time, zero off the grid.
    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        self.grid.interpolate(&self.frames[self.frame_index(t)], x)
    }

    pub fn sup_abs(&self) -> f64 {
        self.frames.iter().flatten().fold(0.0, |m: f64, v| m.max(v.abs()))
    }
}

/// Integer cube `z` with `x in (z, z + 1]` per axis.
fn unit_cube_of(x: &[f64]) -> Vec<i64> {
    x.iter().map(|v| v.ceil() as i64 - 1).collect()
}

/// Cell lists of every unit cube that contains at least one cell centre.
fn unit_cubes(g: &GridSpec) -> Vec<Vec<usize>> {
    let mut x = vec![0.0; g.dim()];
    let mut keys: Vec<(Vec<i64>, usize)> = (0..g.len())
        .map(|c| {
            g.center(c, &mut x);
            (unit_cube_of(&x), c)
        })
        .collect();
    keys.sort();
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut last: Option<Vec<i64>> = None;
    for (k, c) in keys {
        if last.as_ref() != Some(&k) {
            out.push(Vec::new());
            last = Some(k);
        }
        out.last_mut().unwrap().push(c);
    }
    out
}

/// Accumulates `sum_t dt n_t(z)^q` (or `max_t n_t(z)`) over frames.
struct TimeAccumulator {
    q: f64,
    acc: Vec<f64>,
}

impl TimeAccumulator {
    fn new(q: f64, n: usize) -> Self {
        Self { q, acc: vec![0.0; n] }
    }

    fn add(&mut self, dt: f64, local: &[f64]) {
        for (a, n) in self.acc.iter_mut().zip(local) {
            if self.q.is_infinite() {
                *a = a.max(*n);
            } else {
                *a += dt * n.powf(self.q);
            }
        }
    }

    fn sup(&self) -> f64 {
        let m = self.acc.iter().cloned().fold(0.0, f64::max);
        if self.q.is_infinite() {
            m
        } else {
            m.powf(1.0 / self.q)
        }
    }
}

/// Per-frame local norms `||f_t chi_r^z||_p` at every cell centre `z`.
struct ContinuumLocalizer {
    p: f64,
    conv: Option<StencilConvolver>,
    offsets: Vec<(Vec<i64>, f64)>,
    grid: GridSpec,
}

impl ContinuumLocalizer {
    fn new(g: &GridSpec, p: f64, r: f64) -> Self {
        let h = g.spacings();
        let weight = move |m: &[i64]| {
            let r2: f64 = m.iter().zip(&h).map(|(&i, s)| (i as f64 * s).powi(2)).sum();
            chi(r2.sqrt() / r)
        };
        if p.is_infinite() {
            // enumerate the offsets inside the cutoff support
            let d = g.dim();
            let reach: Vec<i64> = g.spacings().iter().map(|s| (2.0 * r / s).ceil() as i64).collect();
            let mut offsets = Vec::new();
            let mut m = reach.iter().map(|k| -k).collect::<Vec<_>>();
            'outer: loop {
                let w = weight(&m);
                if w > 0.0 {
                    offsets.push((m.clone(), w));
                }
                for k in 0..d {
                    m[k] += 1;
                    if m[k] <= reach[k] {
                        continue 'outer;
                    }
                    m[k] = -reach[k];
                }
                break;
            }
            return Self {
                p,
                conv: None,
                offsets,
                grid: g.clone(),
            };
        }
        let vol = g.cell_volume();
        let conv = StencilConvolver::new(&g.shape, 1, false, |m, out| out[0] = weight(m).powf(p) * vol);
        Self {
            p,
            conv: Some(conv),
            offsets: Vec::new(),
            grid: g.clone(),
        }
    }

    fn local(&self, f: &[f64]) -> Vec<f64> {
        if let Some(conv) = &self.conv {
            let pw: Vec<f64> = f.iter().map(|v| v.abs().powf(self.p)).collect();
            return conv.apply(&pw)[0].iter().map(|v| v.max(0.0).powf(1.0 / self.p)).collect();
        }
        let g = &self.grid;
        let d = g.dim();
        let mut idx = vec![0usize; d];
        (0..g.len())
            .map(|c| {
                g.unravel(c, &mut idx);
                let mut best = 0.0f64;
                'off: for (m, w) in &self.offsets {
                    let mut flat = 0;
                    let strides = g.strides();
                    for k in 0..d {
                        let j = idx[k] as i64 + m[k];
                        if j < 0 || j >= g.shape[k] as i64 {
                            continue 'off;
                        }
                        flat += j as usize * strides[k];
                    }
                    best = best.max(f[flat].abs() * w);
                }
                best
            })
            .collect()
    }
}

fn lp_over(cells: &[usize], f: &[f64], p: f64, vol: f64) -> f64 {
    if p.is_infinite() {
        cells.iter().fold(0.0, |m: f64, &c| m.max(f[c].abs()))
    } else {
        (cells.iter().map(|&c| f[c].abs().powf(p)).sum::<f64>() * vol).powf(1.0 / p)
    }
}

/// `sup_z (int_0^T ||f_t chi_r^z||_p^q dt)^(1/q)`; `q = inf` takes the
/// maximum over frames.
pub fn localized_norm(f: &SpaceTimeField, spec: &NormSpec) -> Result<f64> {
    spec.validate()?;
    if f.grid.is_empty() {
        return Err(Error::invalid("empty domain"));
    }
    match spec.lattice {
        Lattice::ContinuumSup => {
            let loc = ContinuumLocalizer::new(&f.grid, spec.p, spec.r);
            let mut acc = TimeAccumulator::new(spec.q, f.grid.len());
            for frame in &f.frames {
                acc.add(f.dt, &loc.local(frame));
            }
            Ok(acc.sup())
        }
        Lattice::UnitLattice => {
            let cubes = unit_cubes(&f.grid);
            let vol = f.grid.cell_volume();
            let mut acc = TimeAccumulator::new(spec.q, cubes.len());
            for frame in &f.frames {
                let local: Vec<f64> = cubes.iter().map(|c| lp_over(c, frame, spec.p, vol)).collect();
                acc.add(f.dt, &local);
            }
            Ok(acc.sup())
        }
    }
}

/// Global `L^q_t L^p_x` norm, the upper bound of every localized norm.
pub fn global_norm(f: &SpaceTimeField, p: f64, q: f64) -> f64 {
    let all: Vec<usize> = (0..f.grid.len()).collect();
    let mut acc = TimeAccumulator::new(q, 1);
    let vol = f.grid.cell_volume();
    for frame in &f.frames {
        acc.add(f.dt, &[lp_over(&all, frame, p, vol)]);
    }
    acc.sup()
}

/// A function `f_t(x, y)` on the product of two grids; each frame is stored
/// row-major with the `x` axes first, so value `(i, j)` sits at
/// `i * grid_y.len() + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairField {
    pub grid_x: GridSpec,
    pub grid_y: GridSpec,
    pub dt: f64,
    pub frames: Vec<Vec<f64>>,
    joint: GridSpec,
}

impl PairField {
    pub fn new(grid_x: GridSpec, grid_y: GridSpec, dt: f64, frames: Vec<Vec<f64>>) -> Result<Self> {
        let n = grid_x.len() * grid_y.len();
        if frames.is_empty() || !(dt > 0.0) {
            return Err(Error::invalid("a pair field needs frames and dt > 0"));
        }
        if frames.iter().any(|f| f.len() != n) {
            return Err(Error::GridMismatch("pair field frame does not match the product grid".into()));
        }
        let cat = |a: &[f64], b: &[f64]| a.iter().chain(b).cloned().collect::<Vec<f64>>();
        let joint = GridSpec::new(
            cat(&grid_x.lo, &grid_y.lo),
            cat(&grid_x.hi, &grid_y.hi),
            grid_x.shape.iter().chain(&grid_y.shape).cloned().collect(),
        )?;
        Ok(Self {
            grid_x,
            grid_y,
            dt,
            frames,
            joint,
        })
    }

    pub fn from_fn(grid_x: GridSpec, grid_y: GridSpec, dt: f64, frames: usize, f: impl Fn(f64, &[f64], &[f64]) -> f64) -> Result<Self> {
        let mut x = vec![0.0; grid_x.dim()];
        let mut y = vec![0.0; grid_y.dim()];
        let data = (0..frames)
            .map(|k| {
                let mut v = Vec::with_capacity(grid_x.len() * grid_y.len());
                for i in 0..grid_x.len() {
                    grid_x.center(i, &mut x);
                    for j in 0..grid_y.len() {
                        grid_y.center(j, &mut y);
                        v.push(f(k as f64 * dt, &x, &y));
                    }
                }
                v
            })
            .collect();
        Self::new(grid_x, grid_y, dt, data)
    }

    pub fn t_end(&self) -> f64 {
        self.dt * self.frames.len() as f64
    }

    pub fn eval(&self, t: f64, x: &[f64], y: &[f64]) -> f64 {
        let k = ((t / self.dt + 1e-9).floor().max(0.0) as usize).min(self.frames.len() - 1);
        let xy: Vec<f64> = x.iter().chain(y).cloned().collect();
        self.joint.interpolate(&self.frames[k], &xy)
    }
}

/// `sup_{z, z'} (int_0^T (int_{Q_z'} ||1_{Q_z} f_t(., y)||_{p1}^{p2} dy)^{q0/p2} dt)^{1/q0}`.
pub fn mixed_localized_norm(f: &PairField, p1: f64, p2: f64, q0: f64) -> Result<f64> {
    if !(p1 >= 1.0 && p2 >= 1.0 && q0 >= 1.0) {
        return Err(Error::invalid("mixed norm exponents must be >= 1"));
    }
    let cx = unit_cubes(&f.grid_x);
    let cy = unit_cubes(&f.grid_y);
    let ny = f.grid_y.len();
    let (vx, vy) = (f.grid_x.cell_volume(), f.grid_y.cell_volume());
    let mut acc = TimeAccumulator::new(q0, cx.len() * cy.len());
    let mut inner = vec![0.0; ny];
    let mut local = vec![0.0; cx.len() * cy.len()];
    for frame in &f.frames {
        for (a, qx) in cx.iter().enumerate() {
            for (j, slot) in inner.iter_mut().enumerate() {
                *slot = if p1.is_infinite() {
                    qx.iter().fold(0.0, |m: f64, &i| m.max(frame[i * ny + j].abs()))
                } else {
                    (qx.iter().map(|&i| frame[i * ny + j].abs().powf(p1)).sum::<f64>() * vx).powf(1.0 / p1)
                };
            }
            for (b, qy) in cy.iter().enumerate() {
                local[a * cy.len() + b] = lp_over(qy, &inner, p2, vy);
            }
        }
        acc.add(f.dt, &local);
    }
    Ok(acc.sup())
}
