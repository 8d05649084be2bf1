//! Local Hardy-Littlewood maximal function on a dyadic radius ladder.
//!
//! Radii are `R, R/2, R/4, ...` down to the coarsest grid spacing. Between
//! two rungs the ball volume changes by `2^d`, so the ladder value is at
//! least `2^{-d}` times the continuum supremum over `r in (0, R)`.
//! Averages are taken over the part of each ball that lies inside the grid.

use crate::conv::StencilConvolver;
use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Radii of the ladder, largest first.
pub fn dyadic_radii(grid: &GridSpec, r_max: f64) -> Vec<f64> {
    let h = grid.spacings().into_iter().fold(0.0, f64::max);
    let mut out = vec![r_max];
    let mut r = r_max;
    while r / 2.0 >= h {
        r /= 2.0;
        out.push(r);
    }
    out
}

fn ball_convolver(g: &GridSpec, r: f64) -> StencilConvolver {
    let h = g.spacings();
    StencilConvolver::new(&g.shape, 1, false, |m, out| {
        let r2: f64 = m.iter().zip(&h).map(|(&i, s)| (i as f64 * s).powi(2)).sum();
        out[0] = if r2 <= r * r * (1.0 + 1e-12) { 1.0 } else { 0.0 };
    })
}

/// `M_R f(x) = max_r (1 / |B_r(x) ∩ D|) sum_{B_r(x) ∩ D} |f|` over the
/// dyadic ladder, with balls counted by cell centres.
pub fn maximal_function(grid: &GridSpec, values: &[f64], r_max: f64) -> Result<Vec<f64>> {
    if values.len() != grid.len() {
        return Err(Error::GridMismatch("values do not match the grid".into()));
    }
    let hmax = grid.spacings().into_iter().fold(0.0, f64::max);
    if !(r_max >= 2.0 * hmax) {
        return Err(Error::invalid(format!(
            "maximal radius {r_max} must be at least two grid spacings ({})",
            2.0 * hmax
        )));
    }
    let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let ones = vec![1.0; grid.len()];
    let sup_f = abs.iter().cloned().fold(0.0, f64::max);
    let mut out = abs.clone();
    for r in dyadic_radii(grid, r_max) {
        let conv = ball_convolver(grid, r);
        let sums = conv.apply(&abs).pop().unwrap();
        let counts = conv.apply(&ones).pop().unwrap();
        for ((o, s), c) in out.iter_mut().zip(&sums).zip(&counts) {
            // FFT round-off can push an average marginally past sup |f|
            let avg = (s / c.round().max(1.0)).clamp(0.0, sup_f);
            *o = o.max(avg);
        }
    }
    Ok(out)
}
