//! Wasserstein distances and the weighted total variation.

use crate::density::{AtomMeasure, GridDensity};
use crate::error::{Error, Result};

/// Largest atom count accepted by [`wasserstein_discrete`].
pub const DISCRETE_ATOM_CAP: usize = 512;

fn check_theta(theta: f64) -> Result<()> {
    if !(theta >= 1.0 && theta.is_finite()) {
        return Err(Error::invalid(format!("theta = {theta} must be a finite value >= 1")));
    }
    Ok(())
}

/// `W_theta` between two equally sized sample sets in one dimension, by
/// the sorted (quantile) coupling, which is optimal for every `theta >= 1`.
pub fn wasserstein_1d(a: &[f64], b: &[f64], theta: f64) -> Result<f64> {
    check_theta(theta)?;
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(format!(
            "sorted coupling needs equal nonzero sample counts, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("samples must be finite"));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let cost: f64 = x.iter().zip(&y).map(|(u, v)| (u - v).abs().powf(theta)).sum::<f64>() / x.len() as f64;
    Ok(cost.powf(1.0 / theta))
}

/// Quantile function of a piecewise-constant density as linear pieces
/// `(u_start, u_end, x_start, x_end)` over cells of positive mass.
fn quantile_pieces(rho: &GridDensity) -> Vec<(f64, f64, f64, f64)> {
    let g = rho.grid();
    let h = g.spacing(0);
    let masses = rho.cell_masses();
    let total: f64 = masses.iter().sum();
    let mut out = Vec::new();
    let mut u = 0.0;
    for (i, m) in masses.iter().enumerate() {
        if *m <= 0.0 {
            continue;
        }
        let x0 = g.lo[0] + i as f64 * h;
        let u1 = u + m / total;
        out.push((u, u1, x0, x0 + h));
        u = u1;
    }
    if let Some(last) = out.last_mut() {
        last.1 = 1.0;
    }
    out
}

/// `int_a^b |c0 + s (u - a)|^theta du` for a linear integrand.
fn linear_power_integral(a: f64, b: f64, c0: f64, c1: f64, theta: f64) -> f64 {
    let len = b - a;
    if len <= 0.0 {
        return 0.0;
    }
    let s = (c1 - c0) / len;
    if s.abs() < 1e-300 || (c1 - c0).abs() <= 1e-14 * (c0.abs() + c1.abs()) {
        return len * (0.5 * (c0 + c1)).abs().powf(theta);
    }
    // |v|^theta has the antiderivative sign(v) |v|^(theta + 1) / (theta + 1)
    let prim = |v: f64| v.abs().powf(theta + 1.0) * v.signum() / (theta + 1.0);
    ((prim(c1) - prim(c0)) / s).abs()
}

/// `W_theta` between two one-dimensional densities on grids, each
/// normalized to unit mass and treated as constant on cells.
///
/// The quantile functions are piecewise linear, so the quantile coupling is
/// integrated exactly.
pub fn wasserstein_1d_grid(a: &GridDensity, b: &GridDensity, theta: f64) -> Result<f64> {
    check_theta(theta)?;
    if a.grid().dim() != 1 || b.grid().dim() != 1 {
        return Err(Error::invalid("wasserstein_1d_grid needs one-dimensional densities"));
    }
    if !(a.mass() > 0.0 && b.mass() > 0.0) {
        return Err(Error::invalid("densities must have positive mass"));
    }
    Ok(coupled_quantile_cost(&quantile_pieces(a), &quantile_pieces(b), theta).powf(1.0 / theta))
}

/// `int_0^1 |F^-1(u) - G^-1(u)|^theta du` for piecewise-linear quantiles.
fn coupled_quantile_cost(qa: &[(f64, f64, f64, f64)], qb: &[(f64, f64, f64, f64)], theta: f64) -> f64 {
    let at = |p: &(f64, f64, f64, f64), u: f64| {
        let w = p.1 - p.0;
        if w <= 0.0 {
            p.2
        } else {
            p.2 + (p.3 - p.2) * ((u - p.0) / w).clamp(0.0, 1.0)
        }
    };
    let (mut i, mut j) = (0, 0);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < qa.len() && j < qb.len() {
        let end = qa[i].1.min(qb[j].1);
        if end > u {
            let c0 = at(&qa[i], u) - at(&qb[j], u);
            let c1 = at(&qa[i], end) - at(&qb[j], end);
            total += linear_power_integral(u, end, c0, c1, theta);
            u = end;
        }
        if qa[i].1 <= end {
            i += 1;
        }
        if qb[j].1 <= end {
            j += 1;
        }
    }
    total
}

/// `W_theta` between an empirical sample and a one-dimensional grid
/// density (normalized to unit mass), by the exact quantile coupling.
pub fn wasserstein_1d_samples_grid(samples: &[f64], rho: &GridDensity, theta: f64) -> Result<f64> {
    check_theta(theta)?;
    if rho.grid().dim() != 1 {
        return Err(Error::invalid("wasserstein_1d_samples_grid needs a one-dimensional density"));
    }
    if samples.is_empty() || samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("samples must be finite and nonempty"));
    }
    if !(rho.mass() > 0.0) {
        return Err(Error::invalid("density must have positive mass"));
    }
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    // the empirical quantile is a step function: constant pieces
    let qa: Vec<(f64, f64, f64, f64)> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| (i as f64 / n, if i + 1 == x.len() { 1.0 } else { (i + 1) as f64 / n }, v, v))
        .collect();
    Ok(coupled_quantile_cost(&qa, &quantile_pieces(rho), theta).powf(1.0 / theta))
}

/// Exact `W_theta` between two weighted atom sets of at most
/// [`DISCRETE_ATOM_CAP`] atoms each.
///
/// Solves the transportation problem with cost `|x - y|^theta` by
/// successive shortest paths with Dijkstra on reduced costs; every
/// augmentation exhausts a supply, a demand or a reverse arc, so the loop
/// terminates with an optimal plan.
pub fn wasserstein_discrete(a: &AtomMeasure, b: &AtomMeasure, theta: f64) -> Result<f64> {
    check_theta(theta)?;
    for m in [a, b] {
        if m.len() > DISCRETE_ATOM_CAP {
            return Err(Error::SizeCap {
                size: m.len(),
                cap: DISCRETE_ATOM_CAP,
            });
        }
        if m.is_empty() || (m.mass() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("atom weights must sum to 1, got {}", m.mass())));
        }
    }
    if a.dim() != b.dim() {
        return Err(Error::invalid("atom sets live in different dimensions"));
    }
    let (n, m) = (a.len(), b.len());
    let cost: Vec<f64> = (0..n)
        .flat_map(|i| {
            (0..m).map(move |j| {
                let r2: f64 = a.point(i).iter().zip(b.point(j)).map(|(x, y)| (x - y) * (x - y)).sum();
                r2.sqrt().powf(theta)
            })
        })
        .collect();
    let flow = transport_plan(a.weights(), b.weights(), &cost);
    let total: f64 = flow.iter().zip(&cost).map(|(f, c)| f * c).sum();
    Ok(total.max(0.0).powf(1.0 / theta))
}

/// Optimal plan for supplies `s`, demands `t` (equal totals) and a dense
/// `n x m` cost matrix.
pub(crate) fn transport_plan(s: &[f64], t: &[f64], cost: &[f64]) -> Vec<f64> {
    const EPS: f64 = 1e-15;
    let (n, m) = (s.len(), t.len());
    let scale = s.iter().sum::<f64>() / t.iter().sum::<f64>();
    let mut supply = s.to_vec();
    let mut demand: Vec<f64> = t.iter().map(|v| v * scale).collect();
    let mut flow = vec![0.0; n * m];
    // node ids: sources 0..n, sinks n..n+m
    let nodes = n + m;
    let mut pot = vec![0.0f64; nodes];
    let cmin = cost.iter().cloned().fold(f64::INFINITY, f64::min);
    for p in pot.iter_mut().skip(n) {
        *p = cmin;
    }
    let mut dist = vec![0.0f64; nodes];
    let mut prev = vec![usize::MAX; nodes];
    let mut done = vec![false; nodes];
    loop {
        if supply.iter().all(|v| *v <= EPS) || demand.iter().all(|v| *v <= EPS) {
            break;
        }
        dist.iter_mut().for_each(|v| *v = f64::INFINITY);
        prev.iter_mut().for_each(|v| *v = usize::MAX);
        done.iter_mut().for_each(|v| *v = false);
        for i in 0..n {
            if supply[i] > EPS {
                dist[i] = 0.0;
            }
        }
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..nodes {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u < n {
                for j in 0..m {
                    let v = n + j;
                    let rc = (cost[u * m + j] + pot[u] - pot[v]).max(0.0);
                    if dist[u] + rc < dist[v] {
                        dist[v] = dist[u] + rc;
                        prev[v] = u;
                    }
                }
            } else {
                let j = u - n;
                for i in 0..n {
                    if flow[i * m + j] > EPS {
                        let rc = (pot[u] - pot[i] - cost[i * m + j]).max(0.0);
                        if dist[u] + rc < dist[i] {
                            dist[i] = dist[u] + rc;
                            prev[i] = u;
                        }
                    }
                }
            }
        }
        let target = (0..m)
            .filter(|&j| demand[j] > EPS && dist[n + j].is_finite())
            .min_by(|&x, &y| dist[n + x].total_cmp(&dist[n + y]));
        let Some(tj) = target else { break };
        let dt = dist[n + tj];
        for v in 0..nodes {
            pot[v] += dist[v].min(dt);
        }
        // bottleneck along the path back to a source
        let mut amount = demand[tj];
        let mut v = n + tj;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u >= n {
                amount = amount.min(flow[v * m + (u - n)]);
            }
            v = u;
        }
        amount = amount.min(supply[v]);
        supply[v] -= amount;
        demand[tj] -= amount;
        let mut v = n + tj;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u < n {
                flow[u * m + (v - n)] += amount;
            } else {
                flow[v * m + (u - n)] -= amount;
            }
            v = u;
        }
    }
    flow
}

/// `sum_cells (1 + |x|^theta) |rho1 - rho2| vol`, i.e. the total variation
/// of `phi_theta (mu1 - mu2)` with the convention `||mu||_TV = int |rho|`.
pub fn weighted_tv(rho1: &GridDensity, rho2: &GridDensity, theta: f64) -> Result<f64> {
    rho1.grid().require_same(rho2.grid())?;
    if !(theta >= 0.0) {
        return Err(Error::invalid("theta must be nonnegative"));
    }
    let g = rho1.grid();
    let vol = g.cell_volume();
    let mut x = vec![0.0; g.dim()];
    let mut total = 0.0;
    for (c, (a, b)) in rho1.values().iter().zip(rho2.values()).enumerate() {
        let diff = (a - b).abs();
        if diff == 0.0 {
            continue;
        }
        g.center(c, &mut x);
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        // theta = 0 is plain TV rather than the literal 1 + |x|^0 = 2
        let phi = if theta == 0.0 { 1.0 } else { 1.0 + r.powf(theta) };
        total += phi * diff * vol;
    }
    Ok(total)
}
