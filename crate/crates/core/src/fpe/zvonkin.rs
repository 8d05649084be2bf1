//! Backward equation `du/dt + Laplace(u) - lambda u + b . grad(u) = -b`,
//! `u(T) = 0`, solved componentwise on a periodic grid.
//!
//! In reversed time `s = T - t` each step solves
//! `(1 + ds lambda - ds Laplace_h) u_new = u + ds (b . grad_h u + b)`:
//! the diffusion and the `lambda` term are implicit (diagonal in Fourier
//! space), the transport term is explicit and upwinded.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::VectorField;
use crate::conv::FftNd;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::particles::mean_and_se;
use crate::rng::{CounterRng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct ZvonkinConfig {
    /// one period of the periodic domain
    pub grid: GridSpec,
    pub lambda: f64,
    pub t_end: f64,
    /// largest allowed reversed-time step
    pub ds_max: f64,
    pub keep_frames: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZvonkinSolution {
    pub grid: GridSpec,
    pub lambda: f64,
    /// `u(0, .)`, one array per component
    pub u0: Vec<Vec<f64>>,
    /// `(t, u(t, .))` from `t = T` down to `t = 0`, if kept
    pub frames: Vec<(f64, Vec<Vec<f64>>)>,
    /// `max |u_k(t, x)|` over components, times and cells
    pub sup_u: f64,
    /// `max |grad u(t, x)|` (Frobenius norm of the Jacobian)
    pub sup_grad_u: f64,
    pub steps: usize,
}

/// Field active at time `t`: the last frame with time `<= t`.
fn field_at(b: &[(f64, VectorField)], t: f64) -> &VectorField {
    let mut cur = &b[0].1;
    for (tf, f) in b {
        if *tf <= t + 1e-12 {
            cur = f;
        }
    }
    cur
}

fn periodic_neighbours(shape: &[usize], strides: &[usize], c: usize, k: usize) -> (usize, usize) {
    let n = shape[k];
    let s = strides[k];
    let i = (c / s) % n;
    let right = if i + 1 < n { c + s } else { c + s - n * s };
    let left = if i > 0 { c - s } else { c + (n - 1) * s };
    (left, right)
}

fn grad_sup(g: &GridSpec, u: &[Vec<f64>]) -> f64 {
    let d = g.dim();
    let strides = g.strides();
    let h = g.spacings();
    (0..g.len())
        .map(|c| {
            let mut s = 0.0;
            for k in 0..d {
                let (l, r) = periodic_neighbours(&g.shape, &strides, c, k);
                for comp in u {
                    let dk = (comp[r] - comp[l]) / (2.0 * h[k]);
                    s += dk * dk;
                }
            }
            s.sqrt()
        })
        .fold(0.0, f64::max)
}

pub fn zvonkin_solve(b: &[(f64, VectorField)], cfg: &ZvonkinConfig) -> Result<ZvonkinSolution> {
    if !(cfg.lambda >= 1.0) {
        return Err(Error::invalid(format!("lambda must be >= 1, got {}", cfg.lambda)));
    }
    if !(cfg.t_end > 0.0 && cfg.ds_max > 0.0) {
        return Err(Error::invalid("need T > 0 and ds > 0"));
    }
    if b.is_empty() {
        return Err(Error::invalid("no drift frames"));
    }
    let g = &cfg.grid;
    let d = g.dim();
    let mut maxb = 0.0f64;
    for (_, f) in b {
        f.grid.require_same(g)?;
        if f.components.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("the frozen drift must be finite (truncated)"));
        }
        maxb = maxb.max(f.max_component());
    }
    let h = g.spacings();
    let hmin = h.iter().cloned().fold(f64::INFINITY, f64::min);
    let ds_cap = if maxb > 0.0 {
        cfg.ds_max.min(0.5 * hmin / (maxb * d as f64))
    } else {
        cfg.ds_max
    };
    let n_steps = (cfg.t_end / ds_cap).ceil() as usize;
    let ds = cfg.t_end / n_steps as f64;
    let fft = FftNd::new(&g.shape);
    let strides = g.strides();
    let mut idx = vec![0usize; d];
    let den: Vec<f64> = (0..g.len())
        .map(|c| {
            g.unravel(c, &mut idx);
            let lap: f64 = (0..d)
                .map(|k| {
                    let theta = 2.0 * std::f64::consts::PI * idx[k] as f64 / g.shape[k] as f64;
                    (2.0 - 2.0 * theta.cos()) / (h[k] * h[k])
                })
                .sum();
            1.0 + ds * cfg.lambda + ds * lap
        })
        .collect();
    let mut u = vec![vec![0.0; g.len()]; d];
    let mut frames = Vec::new();
    if cfg.keep_frames {
        frames.push((cfg.t_end, u.clone()));
    }
    let (mut sup_u, mut sup_grad) = (0.0f64, 0.0f64);
    let mut buf = vec![Complex64::new(0.0, 0.0); g.len()];
    for m in 0..n_steps {
        let t_new = cfg.t_end - (m + 1) as f64 * ds;
        let field = field_at(b, t_new.max(0.0));
        let mut next = Vec::with_capacity(d);
        for comp in 0..d {
            let uc = &u[comp];
            for (c, slot) in buf.iter_mut().enumerate() {
                let mut adv = 0.0;
                for k in 0..d {
                    let v = field.components[k][c];
                    if v == 0.0 {
                        continue;
                    }
                    let (l, r) = periodic_neighbours(&g.shape, &strides, c, k);
                    adv += if v > 0.0 {
                        v * (uc[r] - uc[c]) / h[k]
                    } else {
                        v * (uc[c] - uc[l]) / h[k]
                    };
                }
                *slot = Complex64::new(uc[c] + ds * (adv + field.components[comp][c]), 0.0);
            }
            fft.forward(&mut buf);
            for (x, dn) in buf.iter_mut().zip(&den) {
                *x /= dn;
            }
            fft.inverse(&mut buf);
            next.push(buf.iter().map(|z| z.re).collect::<Vec<f64>>());
        }
        u = next;
        sup_u = sup_u.max(u.iter().flatten().fold(0.0, |a: f64, v| a.max(v.abs())));
        sup_grad = sup_grad.max(grad_sup(g, &u));
        if cfg.keep_frames {
            frames.push((t_new.max(0.0), u.clone()));
        }
    }
    Ok(ZvonkinSolution {
        grid: g.clone(),
        lambda: cfg.lambda,
        u0: u,
        frames,
        sup_u,
        sup_grad_u: sup_grad,
        steps: n_steps,
    })
}

/// Multilinear interpolation with periodic wrap-around.
fn interpolate_periodic(g: &GridSpec, values: &[f64], x: &[f64]) -> f64 {
    let d = g.dim();
    let strides = g.strides();
    let mut acc = 0.0;
    let mut i0 = [0usize; 8];
    let mut fr = [0.0; 8];
    for k in 0..d {
        let n = g.shape[k] as f64;
        let u = (x[k] - g.lo[k]) / g.spacing(k) - 0.5;
        let fl = u.floor();
        fr[k] = u - fl;
        i0[k] = (fl.rem_euclid(n)) as usize;
    }
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        let mut flat = 0;
        for k in 0..d {
            let up = (corner >> k) & 1 == 1;
            let i = if up { (i0[k] + 1) % g.shape[k] } else { i0[k] };
            w *= if up { fr[k] } else { 1.0 - fr[k] };
            flat += i * strides[k];
        }
        acc += w * values[flat];
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeynmanKacReport {
    /// `u_k(0, x0)` from the PDE
    pub pde: Vec<f64>,
    /// `E int_0^T e^{-lambda s} b_k(s, X_s) ds` by Monte Carlo
    pub monte_carlo: Vec<f64>,
    pub std_error: Vec<f64>,
    pub paths: usize,
}

/// Compares `u(0, x0)` with the Feynman-Kac representation along
/// `dX = b(t, X) dt + sqrt(2) dW` on the torus, started at `x0`.
pub fn feynman_kac_check(
    b: &[(f64, VectorField)],
    solution: &ZvonkinSolution,
    x0: &[f64],
    paths: usize,
    dt: f64,
    t_end: f64,
    seed: u64,
) -> Result<FeynmanKacReport> {
    use rayon::prelude::*;
    let g = &solution.grid;
    let d = g.dim();
    if x0.len() != d || paths < 2 || !(dt > 0.0) {
        return Err(Error::invalid("need x0 in R^d, at least two paths and dt > 0"));
    }
    let pde: Vec<f64> = solution.u0.iter().map(|c| interpolate_periodic(g, c, x0)).collect();
    let steps = (t_end / dt).round() as u64;
    let rng = CounterRng::new(seed, Stream::Auxiliary(7));
    let sq = (2.0 * dt).sqrt();
    let integrals: Vec<Vec<f64>> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut x = x0.to_vec();
            let mut acc = vec![0.0; d];
            let mut bx = vec![0.0; d];
            let mut xi = vec![0.0; d];
            for k in 0..steps {
                let t = k as f64 * dt;
                let f = field_at(b, t);
                for c in 0..d {
                    bx[c] = interpolate_periodic(g, &f.components[c], &x);
                }
                let disc = (-solution.lambda * t).exp() * dt;
                for c in 0..d {
                    acc[c] += disc * bx[c];
                }
                rng.fill_normals(k, p as u32, &mut xi);
                for c in 0..d {
                    x[c] += bx[c] * dt + sq * xi[c];
                }
            }
            acc
        })
        .collect();
    let mut mc = Vec::with_capacity(d);
    let mut se = Vec::with_capacity(d);
    for c in 0..d {
        let v: Vec<f64> = integrals.iter().map(|a| a[c]).collect();
        let (m, s) = mean_and_se(&v);
        mc.push(m);
        se.push(s);
    }
    Ok(FeynmanKacReport {
        pde,
        monte_carlo: mc,
        std_error: se,
        paths,
    })
}
