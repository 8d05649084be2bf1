//! Empirical Krylov and Khasminskii quantities along recorded trajectories.
//!
//! Every time integral is the left Riemann sum over the trajectory frames,
//! so `f = 1` integrates to the horizon exactly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::norms::{localized_norm, mixed_localized_norm, NormSpec, PairField, SpaceTimeField};
use crate::error::{Error, Result};
use crate::particles::Trajectory;

/// One test function of a Krylov family.
#[derive(Debug, Clone, PartialEq)]
pub struct KrylovTest {
    pub id: String,
    pub field: SpaceTimeField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrylovEntry {
    pub id: String,
    /// Monte Carlo estimate of `E int_0^T f_t(X_t) dt`
    pub lhs: f64,
    pub lhs_std_error: f64,
    pub norm: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrylovReport {
    pub ratio_max: f64,
    pub per_test: Vec<KrylovEntry>,
    /// `max(a / b, b / a)` of `ratio_max` against a refinement partner; 1
    /// until [`KrylovReport::compare_refinement`] is called
    pub dt_stability: f64,
}

impl KrylovReport {
    fn from_entries(per_test: Vec<KrylovEntry>) -> Self {
        let ratio_max = per_test.iter().map(|e| e.ratio).fold(0.0, f64::max);
        Self {
            ratio_max,
            per_test,
            dt_stability: 1.0,
        }
    }

    /// Records and returns the change of `ratio_max` against a run of the
    /// same family at another step size.
    pub fn compare_refinement(&mut self, other: &KrylovReport) -> f64 {
        let (a, b) = (self.ratio_max, other.ratio_max);
        self.dt_stability = if a > 0.0 && b > 0.0 {
            (a / b).max(b / a)
        } else if a == b {
            1.0
        } else {
            f64::INFINITY
        };
        self.dt_stability
    }
}

fn check_horizon(traj: &Trajectory, t_end: f64) -> Result<()> {
    if traj.frames.len() < 2 {
        return Err(Error::invalid("trajectory has fewer than two frames"));
    }
    let horizon = traj.horizon();
    if (t_end - horizon).abs() > 1e-9 * horizon.max(1.0) && t_end < horizon {
        return Err(Error::invalid(format!(
            "test function covers [0, {t_end}) but the trajectory runs to {horizon}"
        )));
    }
    Ok(())
}

/// Per-path `int_0^T f_t(X^i_t) dt`.
fn path_integrals(traj: &Trajectory, f: &SpaceTimeField) -> Vec<f64> {
    let d = traj.d;
    let fdt = traj.frame_dt();
    let steps = traj.frames.len() - 1;
    (0..traj.n)
        .into_par_iter()
        .map(|i| {
            (0..steps)
                .map(|k| f.eval(k as f64 * fdt, &traj.frames[k][i * d..(i + 1) * d]))
                .sum::<f64>()
                * fdt
        })
        .collect()
}

/// Ratios `E int f(X) dt / |||f|||` for a family of nonnegative tests.
pub fn krylov_check(traj: &Trajectory, tests: &[KrylovTest], spec: &NormSpec) -> Result<KrylovReport> {
    spec.validate()?;
    let mut entries = Vec::with_capacity(tests.len());
    for t in tests {
        if t.field.grid.dim() != traj.d {
            return Err(Error::invalid(format!("test {} has the wrong dimension", t.id)));
        }
        if t.field.frames.iter().flatten().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::invalid(format!("test {} must be finite and nonnegative", t.id)));
        }
        check_horizon(traj, t.field.t_end())?;
        let norm = localized_norm(&t.field, spec)?;
        if !(norm > 0.0) {
            return Err(Error::ZeroNorm(t.id.clone()));
        }
        let vals = path_integrals(traj, &t.field);
        let (lhs, se) = crate::particles::mean_and_se(&vals);
        entries.push(KrylovEntry {
            id: t.id.clone(),
            lhs,
            lhs_std_error: se,
            norm,
            ratio: lhs / norm,
        });
    }
    Ok(KrylovReport::from_entries(entries))
}

/// `E int f_t(X_t, Y_t) dt` for independent runs, paired path by path,
/// against the mixed localized norm.
pub fn pair_krylov_check(a: &Trajectory, b: &Trajectory, f: &PairField, p1: f64, p2: f64, q0: f64) -> Result<KrylovReport> {
    if a.seed == b.seed {
        return Err(Error::SeedCollision(a.seed));
    }
    if a.n != b.n || a.frames.len() != b.frames.len() || (a.frame_dt() - b.frame_dt()).abs() > 1e-12 * a.frame_dt() {
        return Err(Error::invalid("paired trajectories need equal path counts and frame times"));
    }
    if f.grid_x.dim() != a.d || f.grid_y.dim() != b.d {
        return Err(Error::invalid("pair test function has the wrong dimensions"));
    }
    if f.frames.iter().flatten().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::invalid("pair test function must be finite and nonnegative"));
    }
    check_horizon(a, f.t_end())?;
    let norm = mixed_localized_norm(f, p1, p2, q0)?;
    if !(norm > 0.0) {
        return Err(Error::ZeroNorm("pair".into()));
    }
    let (da, db) = (a.d, b.d);
    let fdt = a.frame_dt();
    let steps = a.frames.len() - 1;
    let vals: Vec<f64> = (0..a.n)
        .into_par_iter()
        .map(|i| {
            (0..steps)
                .map(|k| {
                    f.eval(
                        k as f64 * fdt,
                        &a.frames[k][i * da..(i + 1) * da],
                        &b.frames[k][i * db..(i + 1) * db],
                    )
                })
                .sum::<f64>()
                * fdt
        })
        .collect();
    let (lhs, se) = crate::particles::mean_and_se(&vals);
    Ok(KrylovReport::from_entries(vec![KrylovEntry {
        id: "pair".into(),
        lhs,
        lhs_std_error: se,
        norm,
        ratio: lhs / norm,
    }]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpMomentReport {
    pub lambda: f64,
    /// `E exp(lambda int_0^T f_t(X_t) dt)`; infinite if it overflows
    pub estimate: f64,
    pub std_error: f64,
    /// logarithm of the estimate, always finite
    pub log_estimate: f64,
    pub sup_f: f64,
}

/// Khasminskii-type exponential moment, accumulated in log space.
pub fn exp_moment_check(traj: &Trajectory, f: &SpaceTimeField, lambda: f64) -> Result<ExpMomentReport> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid("lambda must be positive"));
    }
    if f.grid.dim() != traj.d {
        return Err(Error::invalid("test function has the wrong dimension"));
    }
    if f.frames.iter().flatten().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::invalid("test function must be finite and nonnegative"));
    }
    check_horizon(traj, f.t_end())?;
    let expo: Vec<f64> = path_integrals(traj, f).into_iter().map(|v| lambda * v).collect();
    let m = expo.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = expo.iter().map(|e| (e - m).exp()).collect();
    let n = w.len() as f64;
    let sum: f64 = w.iter().sum();
    let log_estimate = m + (sum / n).ln();
    let mean_w = sum / n;
    let var = if w.len() > 1 {
        w.iter().map(|v| (v - mean_w).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        f64::NAN
    };
    let scale = m.exp();
    Ok(ExpMomentReport {
        lambda,
        estimate: log_estimate.exp(),
        std_error: (var / n).sqrt() * scale,
        log_estimate,
        sup_f: f.sup_abs(),
    })
}
