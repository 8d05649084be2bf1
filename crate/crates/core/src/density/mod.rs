//! Densities on grids: kernel density estimates of ensembles, the Gaussian
//! semigroup `P_t`, and empirical fits of two-sided and gradient bounds of
//! the form `c^{-1} P_{t/gamma} mu0 <= rho_t <= c P_{gamma t} mu0`.
//!
//! `P_t mu(y) = (2 pi t)^{-d/2} int exp(-|x - y|^2 / (2t)) mu(dx)`, i.e.
//! variance `t` per coordinate. The law of `sqrt(2) W_t` is therefore
//! `P_{2t} delta_0`, and for a zero drift the exact fit is `gamma = 2`.

mod fit;
mod io;

pub use fit::{fit_gradient_bound, fit_two_sided, normalized_gradient_sup, BoundFit, FitReport, FIT_THRESHOLD};
pub use io::{read_mvg1, write_density_csv, write_mvg1};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::particles::{InitialLaw, ParticleEnsemble};
use crate::quadrature::normal_interval;

/// Nonnegative cell-centre values on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    grid: GridSpec,
    values: Vec<f64>,
    mass: f64,
}

impl GridDensity {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} cells",
                values.len(),
                grid.len()
            )));
        }
        if let Some(c) = values.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid(format!(
                "density value {} in cell {c} is not a finite nonnegative number",
                values[c]
            )));
        }
        let mass = values.iter().sum::<f64>() * grid.cell_volume();
        Ok(Self { grid, values, mass })
    }

    /// Tabulate a nonnegative function at the cell centres.
    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let d = grid.dim();
        let centres = grid.centers();
        let values = centres.chunks(d).map(f).collect();
        Self::new(grid, values)
    }

    /// `N(mean, var I)` evaluated at the cell centres.
    pub fn gaussian(grid: GridSpec, mean: &[f64], var: f64) -> Result<Self> {
        if !(var > 0.0) {
            return Err(Error::invalid("variance must be positive"));
        }
        let d = grid.dim();
        let norm = (2.0 * std::f64::consts::PI * var).powf(-(d as f64) / 2.0);
        Self::from_fn(grid, |x| {
            let r2: f64 = x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
            norm * (-r2 / (2.0 * var)).exp()
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `sum values * cell_volume`.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// `|mass - 1|`, reported rather than forced.
    pub fn mass_defect(&self) -> f64 {
        (self.mass - 1.0).abs()
    }

    /// Multilinear interpolation, zero outside the box.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        self.grid.interpolate(&self.values, x)
    }

    /// Cell masses `values * cell_volume`.
    pub fn cell_masses(&self) -> Vec<f64> {
        let v = self.grid.cell_volume();
        self.values.iter().map(|x| x * v).collect()
    }

    /// Marginal density of coordinate `axis` on that axis of the grid.
    pub fn marginal(&self, axis: usize) -> Result<GridDensity> {
        let d = self.grid.dim();
        if axis >= d {
            return Err(Error::invalid(format!("axis {axis} out of range for dimension {d}")));
        }
        let n = self.grid.shape[axis];
        let h = self.grid.spacing(axis);
        let stride = self.grid.strides()[axis];
        let mut out = vec![0.0; n];
        for (c, m) in self.cell_masses().into_iter().enumerate() {
            out[(c / stride) % n] += m;
        }
        out.iter_mut().for_each(|v| *v /= h);
        let g = GridSpec::new(vec![self.grid.lo[axis]], vec![self.grid.hi[axis]], vec![n])?;
        GridDensity::new(g, out)
    }
}

/// Exact cell averages of an initial law, for laws with a density.
///
/// Gaussian laws must have a diagonal covariance; mass outside the grid is
/// lost, so callers should check [`GridDensity::mass`].
pub fn initial_density(law: &InitialLaw, grid: &GridSpec) -> Result<GridDensity> {
    let d = grid.dim();
    law.validate(d)?;
    // per-axis cell masses, combined as a product
    let axis_masses: Vec<Vec<f64>> = match law {
        InitialLaw::Point { .. } => {
            return Err(Error::invalid("a point initial law has no density on a grid"));
        }
        InitialLaw::Gaussian { mean, cov } => {
            for i in 0..d {
                for j in 0..d {
                    if i != j && cov[i * d + j] != 0.0 {
                        return Err(Error::invalid("grid initial densities need a diagonal covariance"));
                    }
                }
            }
            (0..d)
                .map(|k| {
                    let s = cov[k * d + k].sqrt();
                    let h = grid.spacing(k);
                    (0..grid.shape[k])
                        .map(|i| {
                            let a = grid.lo[k] + i as f64 * h - mean[k];
                            normal_interval(a / s, (a + h) / s)
                        })
                        .collect()
                })
                .collect()
        }
        InitialLaw::UniformBox { lo, hi } => (0..d)
            .map(|k| {
                let h = grid.spacing(k);
                (0..grid.shape[k])
                    .map(|i| {
                        let a = grid.lo[k] + i as f64 * h;
                        let overlap = ((a + h).min(hi[k]) - a.max(lo[k])).max(0.0);
                        overlap / (hi[k] - lo[k])
                    })
                    .collect()
            })
            .collect(),
    };
    let vol = grid.cell_volume();
    let mut idx = vec![0usize; d];
    let values = (0..grid.len())
        .map(|c| {
            grid.unravel(c, &mut idx);
            (0..d).map(|k| axis_masses[k][idx[k]]).product::<f64>() / vol
        })
        .collect();
    GridDensity::new(grid.clone(), values)
}

/// A finite weighted point set in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomMeasure {
    d: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl AtomMeasure {
    pub fn new(d: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if d == 0 || points.len() != d * weights.len() {
            return Err(Error::invalid("atom points must be weights.len() x d"));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || points.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("atoms need finite points and nonnegative weights"));
        }
        Ok(Self { d, points, weights })
    }

    pub fn dirac(x: &[f64]) -> Self {
        Self {
            d: x.len(),
            points: x.to_vec(),
            weights: vec![1.0],
        }
    }

    /// Empirical measure of an ensemble.
    pub fn empirical(ens: &ParticleEnsemble) -> Self {
        let n = ens.len();
        Self {
            d: ens.dim(),
            points: ens.positions().to_vec(),
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Input to [`heat_semigroup`].
#[derive(Debug, Clone, PartialEq)]
pub enum Measure {
    Grid(GridDensity),
    Atoms(AtomMeasure),
}

impl Measure {
    pub fn dim(&self) -> usize {
        match self {
            Measure::Grid(g) => g.grid.dim(),
            Measure::Atoms(a) => a.d,
        }
    }

    pub fn mass(&self) -> f64 {
        match self {
            Measure::Grid(g) => g.mass,
            Measure::Atoms(a) => a.mass(),
        }
    }
}

/// Number of fixed accumulation blocks; independent of the thread count.
const BLOCKS: usize = 32;

/// `out[cell] = sum_a weight(a) * prod_k f_k(a, cell_k)` where the per-axis
/// factors are supplied on index ranges by `fill`.
fn accumulate_separable<F>(grid: &GridSpec, atoms: usize, fill: F) -> Vec<f64>
where
    F: Fn(usize, usize, &mut Vec<f64>) -> (usize, f64) + Sync,
{
    let d = grid.dim();
    let strides = grid.strides();
    let per = atoms.div_ceil(BLOCKS).max(1);
    let partial: Vec<Vec<f64>> = (0..BLOCKS)
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![0.0; grid.len()];
            let mut factors: Vec<Vec<f64>> = vec![Vec::new(); d];
            let mut starts = vec![0usize; d];
            let mut idx = vec![0usize; d];
            for a in (b * per)..((b + 1) * per).min(atoms) {
                let mut weight = 1.0;
                let mut empty = false;
                for k in 0..d {
                    let (start, w) = fill(a, k, &mut factors[k]);
                    if k == 0 {
                        weight = w;
                    }
                    starts[k] = start;
                    empty |= factors[k].is_empty();
                }
                if empty || weight == 0.0 {
                    continue;
                }
                // iterate the product of ranges, last axis fastest
                idx.iter_mut().for_each(|i| *i = 0);
                'outer: loop {
                    let mut w = weight;
                    let mut flat = 0;
                    for k in 0..d {
                        w *= factors[k][idx[k]];
                        flat += (starts[k] + idx[k]) * strides[k];
                    }
                    acc[flat] += w;
                    let mut k = d;
                    loop {
                        if k == 0 {
                            break 'outer;
                        }
                        k -= 1;
                        idx[k] += 1;
                        if idx[k] < factors[k].len() {
                            break;
                        }
                        idx[k] = 0;
                    }
                }
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; grid.len()];
    for p in partial {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum Bandwidth {
    /// Silverman's rule per axis.
    Auto,
    /// Silverman's rule per axis, floored at `spacings` grid spacings.
    AutoFloored { spacings: f64 },
    Fixed(f64),
    PerAxis(Vec<f64>),
}

/// Silverman's rule `sigma_k (4 / (d + 2))^{1/(d+4)} N^{-1/(d+4)}` per axis.
pub fn silverman(ens: &ParticleEnsemble) -> Vec<f64> {
    let d = ens.dim() as f64;
    let n = ens.len() as f64;
    let factor = (4.0 / (d + 2.0)).powf(1.0 / (d + 4.0)) * n.powf(-1.0 / (d + 4.0));
    (0..ens.dim())
        .map(|k| {
            let x = ens.axis(k);
            let m = x.iter().sum::<f64>() / n;
            let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
            var.sqrt() * factor
        })
        .collect()
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let f = pos - lo as f64;
    sorted[lo] * (1.0 - f) + sorted[hi] * f
}

/// Bandwidths in standard deviations beyond which kernel weight is dropped.
const KDE_REACH: f64 = 12.0;

/// Gaussian kernel density estimate on `grid`.
///
/// Each particle deposits the exact Gaussian mass of every cell, with mirror
/// images across the box faces, so the total mass equals the fraction of
/// particles inside the box.
pub fn kde(ens: &ParticleEnsemble, bandwidth: &Bandwidth, grid: &GridSpec) -> Result<GridDensity> {
    let d = ens.dim();
    if grid.dim() != d {
        return Err(Error::GridMismatch(format!(
            "{}-dimensional grid for a {d}-dimensional ensemble",
            grid.dim()
        )));
    }
    let bw: Vec<f64> = match bandwidth {
        Bandwidth::Auto => silverman(ens),
        Bandwidth::AutoFloored { spacings } => silverman(ens)
            .into_iter()
            .enumerate()
            .map(|(k, b)| b.max(spacings * grid.spacing(k)))
            .collect(),
        Bandwidth::Fixed(b) => vec![*b; d],
        Bandwidth::PerAxis(v) => {
            if v.len() != d {
                return Err(Error::invalid("per-axis bandwidth needs d entries"));
            }
            v.clone()
        }
    };
    if bw.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {bw:?}")));
    }
    for k in 0..d {
        let mut x = ens.axis(k);
        x.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (qlo, qhi) = (quantile_sorted(&x, 0.005), quantile_sorted(&x, 0.995));
        if qlo < grid.lo[k] || qhi > grid.hi[k] {
            return Err(Error::invalid(format!(
                "grid axis {k} [{}, {}] does not cover the 99% quantile box [{qlo}, {qhi}]",
                grid.lo[k], grid.hi[k]
            )));
        }
    }
    let n = ens.len();
    let pos = ens.positions();
    let fill = |a: usize, k: usize, out: &mut Vec<f64>| -> (usize, f64) {
        out.clear();
        let x = pos[a * d + k];
        let (lo, hi, h, b) = (grid.lo[k], grid.hi[k], grid.spacing(k), bw[k]);
        if x < lo || x > hi {
            return (0, 0.0);
        }
        let first = (((x - KDE_REACH * b - lo) / h).floor().max(0.0)) as usize;
        let last = ((((x + KDE_REACH * b - lo) / h).ceil()) as usize).min(grid.shape[k]);
        let images = [x, 2.0 * lo - x, 2.0 * hi - x];
        for i in first..last {
            let (a0, a1) = (lo + i as f64 * h, lo + (i + 1) as f64 * h);
            let mut m = 0.0;
            for (j, &c) in images.iter().enumerate() {
                if j > 0 && (c - x).abs() > 2.0 * KDE_REACH * b {
                    continue;
                }
                m += normal_interval((a0 - c) / b, (a1 - c) / b);
            }
            out.push(m);
        }
        (first, 1.0)
    };
    let acc = accumulate_separable(grid, n, fill);
    let scale = 1.0 / (n as f64 * grid.cell_volume());
    GridDensity::new(grid.clone(), acc.into_iter().map(|v| v * scale).collect())
}

/// Applies `mat` (`new_len x shape[axis]`) along `axis` of a row-major array.
fn contract_axis(data: &[f64], shape: &[usize], axis: usize, mat: &[f64], new_len: usize) -> Vec<f64> {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let s = shape[axis];
    let mut out = vec![0.0; outer * new_len * inner];
    out.par_chunks_mut(inner).enumerate().for_each(|(row, o)| {
        let (oi, i) = (row / new_len, row % new_len);
        for j in 0..s {
            let a = mat[i * s + j];
            if a == 0.0 {
                continue;
            }
            let src = &data[(oi * s + j) * inner..(oi * s + j + 1) * inner];
            for (x, y) in o.iter_mut().zip(src) {
                *x += a * y;
            }
        }
    });
    out
}

fn gauss_1d(t: f64, r: f64) -> f64 {
    (2.0 * std::f64::consts::PI * t).powf(-0.5) * (-r * r / (2.0 * t)).exp()
}

/// `P_t mu0` evaluated at the cell centres of `grid`.
pub fn heat_semigroup(mu0: &Measure, t: f64, grid: &GridSpec) -> Result<GridDensity> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!("semigroup time must be > 0, got {t}")));
    }
    let d = mu0.dim();
    if grid.dim() != d {
        return Err(Error::GridMismatch("semigroup source and target dimensions differ".into()));
    }
    match mu0 {
        Measure::Grid(src) => {
            let mut data = src.cell_masses();
            let mut shape = src.grid.shape.clone();
            for k in 0..d {
                let xs = src.grid.axis_centers(k);
                let ys = grid.axis_centers(k);
                let mat: Vec<f64> = ys
                    .iter()
                    .flat_map(|y| xs.iter().map(move |x| gauss_1d(t, y - x)))
                    .collect();
                data = contract_axis(&data, &shape, k, &mat, ys.len());
                shape[k] = ys.len();
            }
            GridDensity::new(grid.clone(), data)
        }
        Measure::Atoms(atoms) => {
            let fill = |a: usize, k: usize, out: &mut Vec<f64>| -> (usize, f64) {
                out.clear();
                let x = atoms.point(a)[k];
                out.extend((0..grid.shape[k]).map(|i| gauss_1d(t, grid.axis_center(k, i) - x)));
                (0, atoms.weights[a])
            };
            let acc = accumulate_separable(grid, atoms.len(), fill);
            GridDensity::new(grid.clone(), acc)
        }
    }
}

/// `P_t mu0(y)` at a single point.
pub fn heat_point(mu0: &Measure, t: f64, y: &[f64]) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::invalid("semigroup time must be > 0"));
    }
    let d = y.len();
    let norm = (2.0 * std::f64::consts::PI * t).powf(-(d as f64) / 2.0);
    let term = |x: &[f64], w: f64| {
        let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        w * norm * (-r2 / (2.0 * t)).exp()
    };
    Ok(match mu0 {
        Measure::Grid(g) => {
            let centres = g.grid.centers();
            centres
                .chunks(d)
                .zip(g.cell_masses())
                .map(|(x, m)| term(x, m))
                .sum()
        }
        Measure::Atoms(a) => (0..a.len()).map(|i| term(a.point(i), a.weights[i])).sum(),
    })
}
