//! Mean-field drift `(1/N) sum_j b_t(X^i, X^j)` for every particle.
//!
//! `Direct` evaluates all pairs. Each particle's sum is reduced over a fixed
//! binary tree on `j`, so the bits do not depend on how particles are split
//! across threads.
//!
//! `Mesh` is a particle-mesh approximation: cloud-in-cell deposit onto an
//! origin-anchored lattice of spacing `h`, convolution with the cell-averaged
//! kernel by zero-padded FFT, and cloud-in-cell interpolation back. Each
//! particle's own contribution is subtracted so the diagonal convention
//! holds on the mesh too. Cost is `O(N + M log M)` for `M` mesh nodes.

use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ParticleEnsemble;
use crate::conv::StencilConvolver;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;

const LEAF: usize = 16;
const MAX_DIM: usize = 16;
/// Largest padded mesh, in nodes.
const MESH_CAP: usize = 1 << 24;
/// Below this many particles `Auto` uses the exact pairwise sum.
const AUTO_DIRECT_MAX: usize = 1024;
/// Refinement levels for the cell-averaged stencil near the origin.
const STENCIL_LEVELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftSolver {
    /// `Direct` for small ensembles, `Mesh` with a default spacing otherwise.
    #[default]
    Auto,
    Direct,
    Mesh { spacing: f64 },
}

impl DriftSolver {
    fn resolve(self, n: usize, d: usize) -> DriftSolver {
        match self {
            DriftSolver::Auto if n <= AUTO_DIRECT_MAX || d > 3 => DriftSolver::Direct,
            DriftSolver::Auto => DriftSolver::Mesh {
                spacing: match d {
                    1 => 0.005,
                    2 => 0.03,
                    _ => 0.1,
                },
            },
            other => other,
        }
    }
}

/// `(1/N) sum_j b_t(X^i, X^j)` by the exact pairwise sum.
pub fn mean_field_drift(t: f64, i: usize, ens: &ParticleEnsemble, kernel: &KernelSpec) -> Result<Vec<f64>> {
    if i >= ens.len() {
        return Err(Error::invalid(format!("particle index {i} out of range")));
    }
    check_finite(ens)?;
    let d = ens.dim();
    let mut out = vec![0.0; d];
    tree_sum(kernel, t, ens.particle(i), ens.positions(), d, 0, ens.len(), &mut out);
    let inv = 1.0 / ens.len() as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    Ok(out)
}

fn check_finite(ens: &ParticleEnsemble) -> Result<()> {
    if let Some(k) = ens.positions().iter().position(|v| !v.is_finite()) {
        return Err(Error::BlowUp {
            particle: k / ens.dim(),
            step: ens.noise_state().step,
            time: ens.time(),
            partial: Vec::new(),
        });
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn tree_sum(kernel: &KernelSpec, t: f64, xi: &[f64], pos: &[f64], d: usize, lo: usize, hi: usize, out: &mut [f64]) {
    if hi - lo <= LEAF {
        let mut v = [0.0; MAX_DIM];
        out.iter_mut().for_each(|o| *o = 0.0);
        for j in lo..hi {
            kernel.eval(t, xi, &pos[j * d..(j + 1) * d], &mut v[..d]);
            for k in 0..d {
                out[k] += v[k];
            }
        }
        return;
    }
    let mid = lo + (hi - lo) / 2;
    let mut a = [0.0; MAX_DIM];
    let mut b = [0.0; MAX_DIM];
    tree_sum(kernel, t, xi, pos, d, lo, mid, &mut a[..d]);
    tree_sum(kernel, t, xi, pos, d, mid, hi, &mut b[..d]);
    for k in 0..d {
        out[k] = a[k] + b[k];
    }
}

type StencilKey = (KernelSpec, Vec<usize>, u64, u64);

/// Mesh stencils are pure functions of their key, so one process-wide
/// cache serves every run, including parallel replicas.
static STENCILS: Mutex<Vec<(StencilKey, Arc<MeshStencil>)>> = Mutex::new(Vec::new());
const STENCIL_CACHE: usize = 8;

fn cached_stencil(key: StencilKey, t: f64, kernel: &KernelSpec, padded: &[usize], h: f64) -> Arc<MeshStencil> {
    let lookup = |key: &StencilKey| {
        let cache = STENCILS.lock().unwrap_or_else(|e| e.into_inner());
        cache.iter().find(|(k, _)| k == key).map(|(_, s)| s.clone())
    };
    if let Some(s) = lookup(&key) {
        return s;
    }
    // built outside the lock; a concurrent duplicate build is harmless
    let s = Arc::new(build_stencil(t, kernel, padded, h));
    let mut cache = STENCILS.lock().unwrap_or_else(|e| e.into_inner());
    if !cache.iter().any(|(k, _)| *k == key) {
        if cache.len() >= STENCIL_CACHE {
            cache.remove(0);
        }
        cache.push((key, s.clone()));
    }
    s
}

/// Reusable state for drift evaluation.
pub struct DriftWorkspace {
    solver: DriftSolver,
}

struct MeshStencil {
    conv: StencilConvolver,
    /// stencil on offsets in `{-1, 0, 1}^d`, for the self-term
    near: Vec<Vec<f64>>,
}

impl DriftWorkspace {
    pub fn new(solver: DriftSolver, n: usize, d: usize) -> Self {
        Self {
            solver: solver.resolve(n, d),
        }
    }

    pub fn solver(&self) -> DriftSolver {
        self.solver
    }

    /// Drift for every particle, row-major `N x d`.
    pub fn compute(&mut self, t: f64, ens: &ParticleEnsemble, kernel: &KernelSpec) -> Result<Vec<f64>> {
        check_finite(ens)?;
        let d = ens.dim();
        if d > MAX_DIM {
            return Err(Error::invalid(format!("dimension {d} exceeds {MAX_DIM}")));
        }
        if kernel.is_zero() {
            return Ok(vec![0.0; ens.positions().len()]);
        }
        match self.solver {
            DriftSolver::Direct | DriftSolver::Auto => Ok(direct(t, ens, kernel)),
            DriftSolver::Mesh { spacing } => self.mesh(t, ens, kernel, spacing),
        }
    }

    fn mesh(&self, t: f64, ens: &ParticleEnsemble, kernel: &KernelSpec, h: f64) -> Result<Vec<f64>> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::invalid("mesh spacing must be positive"));
        }
        let d = ens.dim();
        if d > 3 {
            return Err(Error::invalid("the mesh solver supports d <= 3"));
        }
        let n = ens.len();
        let pos = ens.positions();
        // origin-anchored lattice: node j sits at j * h
        let mut lo = vec![i64::MAX; d];
        let mut hi = vec![i64::MIN; d];
        for x in pos.chunks(d) {
            for k in 0..d {
                let c = (x[k] / h).floor() as i64;
                lo[k] = lo[k].min(c);
                hi[k] = hi[k].max(c + 1);
            }
        }
        let nodes: Vec<usize> = (0..d).map(|k| (hi[k] - lo[k] + 1) as usize).collect();
        let padded: Vec<usize> = nodes.iter().map(|&m| (2 * m).next_power_of_two()).collect();
        let total: usize = padded.iter().product();
        if total > MESH_CAP {
            return Err(Error::SizeCap {
                size: total,
                cap: MESH_CAP,
            });
        }
        let s_t = kernel.time_scaling().map_or(1.0, |ts| ts.eval(t));
        let key = (kernel.clone(), padded.clone(), h.to_bits(), s_t.to_bits());
        let stencil = cached_stencil(key, t, kernel, &padded, h);
        let mut strides = vec![1usize; d];
        for k in (0..d.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * padded[k + 1];
        }
        let corners = 1usize << d;
        // per-particle base node and weights
        let locate = |x: &[f64], base: &mut [usize], frac: &mut [f64]| {
            for k in 0..d {
                let u = x[k] / h;
                let c = u.floor();
                base[k] = (c as i64 - lo[k]) as usize;
                frac[k] = u - c;
            }
        };
        let mass = 1.0 / n as f64;
        let mut grid = vec![0.0; total];
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for x in pos.chunks(d) {
            locate(x, &mut base, &mut frac);
            for c in 0..corners {
                let (w, flat) = corner(c, &base, &frac, &strides);
                grid[flat] += w * mass;
            }
        }
        let fields = stencil.conv.apply(&grid);
        let mut out = vec![0.0; pos.len()];
        out.par_chunks_mut(d).zip(pos.par_chunks(d)).for_each(|(o, x)| {
            let mut base = [0usize; MAX_DIM];
            let mut frac = [0.0; MAX_DIM];
            locate(x, &mut base[..d], &mut frac[..d]);
            let mut wts = [0.0; 1 << 3];
            let mut flats = [0usize; 1 << 3];
            for c in 0..corners {
                let (w, flat) = corner(c, &base[..d], &frac[..d], &strides);
                wts[c] = w;
                flats[c] = flat;
            }
            for k in 0..d {
                let mut acc = 0.0;
                for c in 0..corners {
                    acc += wts[c] * fields[k][flats[c]];
                }
                // remove the particle's own mass: sum_a sum_b w_a w_b K(a - b)
                let mut own = 0.0;
                for a in 0..corners {
                    for b in 0..corners {
                        let mut idx = 0;
                        for ax in 0..d {
                            let off = ((a >> ax) & 1) as i64 - ((b >> ax) & 1) as i64 + 1;
                            idx = idx * 3 + off as usize;
                        }
                        own += wts[a] * wts[b] * stencil.near[k][idx];
                    }
                }
                o[k] = acc - own * mass;
            }
        });
        Ok(out)
    }
}

#[inline]
fn corner(c: usize, base: &[usize], frac: &[f64], strides: &[usize]) -> (f64, usize) {
    let mut w = 1.0;
    let mut flat = 0;
    for k in 0..base.len() {
        if (c >> k) & 1 == 1 {
            w *= frac[k];
            flat += (base[k] + 1) * strides[k];
        } else {
            w *= 1.0 - frac[k];
            flat += base[k] * strides[k];
        }
    }
    (w, flat)
}

fn build_stencil(t: f64, kernel: &KernelSpec, padded: &[usize], h: f64) -> MeshStencil {
    let d = padded.len();
    let spacing = vec![h; d];
    let cell = |m: &[i64], out: &mut [f64]| {
        let centre: Vec<f64> = m.iter().map(|&v| v as f64 * h).collect();
        kernel.cell_average(t, &centre, &spacing, STENCIL_LEVELS, out);
    };
    let conv = StencilConvolver::new(padded, d, true, cell);
    let mut near = vec![vec![0.0; 3usize.pow(d as u32)]; d];
    let mut m = vec![0i64; d];
    let mut v = vec![0.0; d];
    for idx in 0..3usize.pow(d as u32) {
        let mut rem = idx;
        for k in (0..d).rev() {
            m[k] = (rem % 3) as i64 - 1;
            rem /= 3;
        }
        cell(&m, &mut v);
        for k in 0..d {
            near[k][idx] = v[k];
        }
    }
    MeshStencil { conv, near }
}

fn direct(t: f64, ens: &ParticleEnsemble, kernel: &KernelSpec) -> Vec<f64> {
    let d = ens.dim();
    let n = ens.len();
    let pos = ens.positions();
    let inv = 1.0 / n as f64;
    let mut out = vec![0.0; pos.len()];
    out.par_chunks_mut(d).enumerate().for_each(|(i, o)| {
        tree_sum(kernel, t, &pos[i * d..(i + 1) * d], pos, d, 0, n, o);
        o.iter_mut().for_each(|v| *v *= inv);
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Direction;
    use crate::particles::NoiseState;
    use crate::rng::{CounterRng, Stream};

    fn random_ensemble(n: usize, d: usize, seed: u64, scale: f64) -> ParticleEnsemble {
        let rng = CounterRng::new(seed, Stream::Auxiliary(0));
        let mut pos = vec![0.0; n * d];
        for (i, c) in pos.chunks_mut(d).enumerate() {
            rng.fill_normals(0, i as u32, c);
            c.iter_mut().for_each(|v| *v *= scale);
        }
        ParticleEnsemble::new(pos, d, 0.0, NoiseState { seed, step: 0 }).unwrap()
    }

    #[test]
    fn two_particle_hand_value() {
        let ens = ParticleEnsemble::new(vec![0.0, 0.0, 1.0, 0.0], 2, 0.0, NoiseState { seed: 0, step: 0 }).unwrap();
        let k = KernelSpec::power_law(1.0, 1.0, Direction::Radial).unwrap();
        let b = mean_field_drift(0.0, 0, &ens, &k).unwrap();
        assert_eq!(b, vec![-0.5, 0.0]);
        let z = mean_field_drift(0.0, 1, &ens, &KernelSpec::zero()).unwrap();
        assert_eq!(z, vec![0.0, 0.0]);
    }

    #[test]
    fn odd_kernel_total_force_cancels() {
        let ens = random_ensemble(64, 2, 5, 1.0);
        let k = KernelSpec::power_law(1.3, 1.7, Direction::Radial).unwrap();
        let mut total = [0.0; 2];
        for i in 0..64 {
            let b = mean_field_drift(0.0, i, &ens, &k).unwrap();
            total[0] += 64.0 * b[0];
            total[1] += 64.0 * b[1];
        }
        assert!(total[0].abs() < 1e-10 && total[1].abs() < 1e-10, "{total:?}");
    }

    #[test]
    fn direct_is_thread_count_invariant() {
        let ens = random_ensemble(300, 2, 8, 1.0);
        let k = KernelSpec::power_law(0.5, 1.5, Direction::Rotational).unwrap().truncate(10.0).unwrap();
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| DriftWorkspace::new(DriftSolver::Direct, 300, 2).compute(0.0, &ens, &k).unwrap())
        };
        let a = run(1);
        let b = run(8);
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn mesh_matches_direct_for_bounded_kernel() {
        let n = 2000;
        let ens = random_ensemble(n, 1, 4, 1.0);
        let k = KernelSpec::power_law(0.5, 1.0, Direction::Radial).unwrap().truncate(10.0).unwrap();
        let exact = DriftWorkspace::new(DriftSolver::Direct, n, 1).compute(0.0, &ens, &k).unwrap();
        let mut ws = DriftWorkspace::new(DriftSolver::Mesh { spacing: 0.005 }, n, 1);
        let approx = ws.compute(0.0, &ens, &k).unwrap();
        let err: f64 = exact.iter().zip(&approx).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64;
        // the sign kernel is discontinuous, so the mesh smears it over ~h
        assert!(err < 5e-3, "mean abs error {err}");
    }

    #[test]
    fn mesh_matches_direct_in_the_plane() {
        let n = 1500;
        let ens = random_ensemble(n, 2, 6, 1.0);
        let k = KernelSpec::power_law(0.5, 1.5, Direction::Rotational).unwrap().truncate(10.0).unwrap();
        let exact = DriftWorkspace::new(DriftSolver::Direct, n, 2).compute(0.0, &ens, &k).unwrap();
        let approx = DriftWorkspace::new(DriftSolver::Mesh { spacing: 0.02 }, n, 2)
            .compute(0.0, &ens, &k)
            .unwrap();
        let scale: f64 = exact.iter().map(|v| v.abs()).sum::<f64>() / exact.len() as f64;
        let err: f64 = exact.iter().zip(&approx).map(|(a, b)| (a - b).abs()).sum::<f64>() / exact.len() as f64;
        assert!(err < 0.05 * scale, "mean abs error {err} vs scale {scale}");
    }

    #[test]
    fn mesh_excludes_self_for_constant_kernel() {
        let n = 1500;
        let ens = random_ensemble(n, 1, 2, 1.0);
        let k = KernelSpec::constant(vec![0.7]).unwrap();
        let approx = DriftWorkspace::new(DriftSolver::Mesh { spacing: 0.01 }, n, 1)
            .compute(0.0, &ens, &k)
            .unwrap();
        let expected = 0.7 * (n - 1) as f64 / n as f64;
        assert!(approx.iter().all(|v| (v - expected).abs() < 1e-10));
    }

    #[test]
    fn auto_resolution() {
        assert_eq!(DriftSolver::Auto.resolve(100, 2), DriftSolver::Direct);
        assert!(matches!(DriftSolver::Auto.resolve(20_000, 1), DriftSolver::Mesh { .. }));
    }
}
