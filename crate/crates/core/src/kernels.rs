//! Two-point interaction kernels `b_t(x, y)`, their truncations and
//! envelopes.
//!
//! All kernel forms here are translation invariant, `b_t(x, y) = f_t(x - y)`,
//! which is what lets grid solvers apply them by convolution. The value on
//! the diagonal `x == y` is defined to be zero, so a particle never
//! interacts with itself.

use serde::{Deserialize, Serialize};

use crate::cutoff::chi;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::quadrature::{gauss_legendre, sphere_area};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `kappa * (x - y) / |x - y|^alpha`
    Radial,
    /// `kappa * (x - y)^perp / |x - y|^alpha`, planar only.
    Rotational,
}

/// Vector-valued table of `f(z)` on a grid of offsets, zero outside.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    grid: GridSpec,
    /// one array per component
    values: Vec<Vec<f64>>,
}

impl KernelTable {
    pub fn new(grid: GridSpec, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != grid.dim() {
            return Err(Error::invalid("kernel table needs one value array per dimension"));
        }
        if values.iter().any(|v| v.len() != grid.len()) {
            return Err(Error::invalid("kernel table value arrays must match the grid size"));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("kernel table values must be finite"));
        }
        Ok(Self { grid, values })
    }

    /// Tabulate `f` at the cell centres of `grid`.
    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64], &mut [f64])) -> Result<Self> {
        let d = grid.dim();
        let mut values = vec![vec![0.0; grid.len()]; d];
        let mut z = vec![0.0; d];
        let mut out = vec![0.0; d];
        for c in 0..grid.len() {
            grid.center(c, &mut z);
            f(&z, &mut out);
            for k in 0..d {
                values[k][c] = out[k];
            }
        }
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn max_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    fn eval(&self, z: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.grid.interpolate(&self.values[k], z);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelForm {
    Zero,
    PowerLaw {
        kappa: f64,
        alpha: f64,
        direction: Direction,
    },
    /// `b(x, y) = value` for `x != y`.
    Constant(Vec<f64>),
    Table(KernelTable),
}

/// Multiplicative time profile `s(t) = sum_k coeffs[k] * t^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeScaling {
    pub coeffs: Vec<f64>,
}

impl TimeScaling {
    pub fn eval(&self, t: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    fn sup_abs(&self, t_max: f64) -> f64 {
        // bound by the sum of absolute terms
        self.coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c.abs() * t_max.max(0.0).powi(k as i32))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    form: KernelForm,
    truncation: Option<f64>,
    time_scaling: Option<TimeScaling>,
}

impl KernelSpec {
    pub fn zero() -> Self {
        Self {
            form: KernelForm::Zero,
            truncation: None,
            time_scaling: None,
        }
    }

    pub fn power_law(kappa: f64, alpha: f64, direction: Direction) -> Result<Self> {
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(Error::invalid(format!("kappa must be finite and >= 0, got {kappa}")));
        }
        if !(1.0..2.0).contains(&alpha) {
            return Err(Error::invalid(format!("alpha must lie in [1, 2), got {alpha}")));
        }
        Ok(Self {
            form: KernelForm::PowerLaw {
                kappa,
                alpha,
                direction,
            },
            truncation: None,
            time_scaling: None,
        })
    }

    pub fn constant(value: Vec<f64>) -> Result<Self> {
        if value.is_empty() || value.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("constant kernel needs a finite nonempty vector"));
        }
        Ok(Self {
            form: KernelForm::Constant(value),
            truncation: None,
            time_scaling: None,
        })
    }

    pub fn table(table: KernelTable) -> Self {
        Self {
            form: KernelForm::Table(table),
            truncation: None,
            time_scaling: None,
        }
    }

    pub fn with_time_scaling(mut self, scaling: TimeScaling) -> Self {
        self.time_scaling = Some(scaling);
        self
    }

    pub fn form(&self) -> &KernelForm {
        &self.form
    }

    pub fn truncation(&self) -> Option<f64> {
        self.truncation
    }

    pub fn time_scaling(&self) -> Option<&TimeScaling> {
        self.time_scaling.as_ref()
    }

    pub fn is_zero(&self) -> bool {
        let form_zero = match &self.form {
            KernelForm::Zero => true,
            KernelForm::PowerLaw { kappa, .. } => *kappa == 0.0,
            KernelForm::Constant(v) => v.iter().all(|&c| c == 0.0),
            KernelForm::Table(t) => t.max_abs() == 0.0,
        };
        form_zero || self.truncation == Some(0.0)
    }

    /// `b(x, y) = -b(y, x)` holds exactly.
    pub fn is_odd(&self) -> bool {
        matches!(self.form, KernelForm::Zero | KernelForm::PowerLaw { .. })
    }

    /// Divergence free in `x` away from the diagonal.
    pub fn is_divergence_free(&self) -> bool {
        matches!(
            self.form,
            KernelForm::Zero
                | KernelForm::Constant(_)
                | KernelForm::PowerLaw {
                    direction: Direction::Rotational,
                    ..
                }
        )
    }

    /// Componentwise bound `sup |b_t(x, y)_k|` over `t <= t_max`, if finite.
    pub fn component_bound(&self, t_max: f64) -> Option<f64> {
        let s = self.time_scaling.as_ref().map_or(1.0, |ts| ts.sup_abs(t_max));
        let raw = match &self.form {
            KernelForm::Zero => Some(0.0),
            KernelForm::PowerLaw { kappa, alpha, .. } => {
                if *kappa == 0.0 {
                    Some(0.0)
                } else if *alpha == 1.0 {
                    Some(*kappa)
                } else {
                    None
                }
            }
            KernelForm::Constant(v) => Some(v.iter().fold(0.0, |m: f64, c| m.max(c.abs()))),
            KernelForm::Table(t) => Some(t.max_abs()),
        }
        .map(|b| b * s);
        match (raw, self.truncation) {
            (Some(b), Some(n)) => Some(b.min(n)),
            (Some(b), None) => Some(b),
            (None, Some(n)) => Some(n),
            (None, None) => None,
        }
    }

    /// Checks that the kernel can act in dimension `d`.
    pub fn check_dimension(&self, d: usize) -> Result<()> {
        match &self.form {
            KernelForm::PowerLaw {
                direction: Direction::Rotational,
                ..
            } if d != 2 => Err(Error::invalid("rotational kernels are planar (d = 2) only")),
            KernelForm::Constant(v) if v.len() != d => Err(Error::invalid(format!(
                "constant kernel has {} components, dimension is {d}",
                v.len()
            ))),
            KernelForm::Table(t) if t.grid.dim() != d => Err(Error::invalid(format!(
                "kernel table is {}-dimensional, dimension is {d}",
                t.grid.dim()
            ))),
            _ => Ok(()),
        }
    }

    /// Componentwise clamp into `[-n, n]`; composes as the minimum level.
    pub fn truncate(&self, n: f64) -> Result<Self> {
        if !(n > 0.0) {
            return Err(Error::invalid(format!("truncation level must be > 0, got {n}")));
        }
        let mut out = self.clone();
        out.truncation = Some(self.truncation.map_or(n, |m| m.min(n)));
        Ok(out)
    }

    /// Same kernel with the truncation level replaced.
    pub fn with_truncation(&self, n: Option<f64>) -> Result<Self> {
        match n {
            Some(level) => {
                let mut base = self.clone();
                base.truncation = None;
                base.truncate(level)
            }
            None => {
                let mut base = self.clone();
                base.truncation = None;
                Ok(base)
            }
        }
    }

    /// `b_t(x, y)` written into `out`.
    #[inline]
    pub fn eval(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        let d = x.len();
        debug_assert!(d <= 16);
        let mut z = [0.0; 16];
        for k in 0..d {
            z[k] = x[k] - y[k];
        }
        self.eval_offset(t, &z[..d], out);
    }

    /// `f_t(z)` for the offset `z = x - y`.
    #[inline]
    pub fn eval_offset(&self, t: f64, z: &[f64], out: &mut [f64]) {
        if z.iter().all(|&v| v == 0.0) {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        match &self.form {
            KernelForm::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            KernelForm::PowerLaw {
                kappa,
                alpha,
                direction,
            } => {
                let r2: f64 = z.iter().map(|v| v * v).sum();
                let r = r2.sqrt();
                let scale = if *alpha == 1.0 {
                    kappa / r
                } else {
                    kappa / r.powf(*alpha)
                };
                match direction {
                    Direction::Radial => {
                        for (o, &v) in out.iter_mut().zip(z) {
                            *o = scale * v;
                        }
                    }
                    Direction::Rotational => {
                        assert_eq!(z.len(), 2, "rotational kernels are planar");
                        out[0] = -scale * z[1];
                        out[1] = scale * z[0];
                    }
                }
            }
            KernelForm::Constant(v) => out.copy_from_slice(v),
            KernelForm::Table(t) => t.eval(z, out),
        }
        if let Some(ts) = &self.time_scaling {
            let s = ts.eval(t);
            out.iter_mut().for_each(|o| *o *= s);
        }
        if let Some(n) = self.truncation {
            out.iter_mut().for_each(|o| *o = o.clamp(-n, n));
        }
    }

    /// Envelope `h` with `|b_t(x, y)| <= h(|x - y|)` for `t <= t_max`.
    pub fn envelope(&self, d: usize, t_max: f64) -> Envelope {
        let s = self.time_scaling.as_ref().map_or(1.0, |ts| ts.sup_abs(t_max));
        let (scale, decay) = match &self.form {
            KernelForm::Zero => (0.0, 0.0),
            KernelForm::PowerLaw { kappa, alpha, .. } => (kappa * s, alpha - 1.0),
            KernelForm::Constant(v) => (v.iter().map(|c| c * c).sum::<f64>().sqrt() * s, 0.0),
            KernelForm::Table(t) => {
                let m = (0..t.grid.len())
                    .map(|c| t.values.iter().map(|v| v[c] * v[c]).sum::<f64>().sqrt())
                    .fold(0.0, f64::max);
                (m * s, 0.0)
            }
        };
        Envelope {
            scale,
            decay,
            cap: self.truncation.map(|n| n * (d as f64).sqrt()),
        }
    }

    /// Mean of `f_t` over the box `centre +- spacing/2`.
    ///
    /// Boxes that contain or touch the origin are split into `2^d`
    /// sub-boxes recursively, `levels` times, before a tensor Gauss rule is
    /// applied; this resolves the integrable singularity of power laws.
    pub fn cell_average(&self, t: f64, centre: &[f64], spacing: &[f64], levels: usize, out: &mut [f64]) {
        let d = centre.len();
        let (nodes, weights) = gauss_legendre(3);
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut acc = vec![0.0; d];
        self.average_rec(t, centre, spacing, levels, &nodes, &weights, &mut acc);
        out.copy_from_slice(&acc);
    }

    #[allow(clippy::too_many_arguments)]
    fn average_rec(
        &self,
        t: f64,
        centre: &[f64],
        spacing: &[f64],
        levels: usize,
        nodes: &[f64],
        weights: &[f64],
        out: &mut [f64],
    ) {
        let d = centre.len();
        let near = (0..d).all(|k| centre[k].abs() <= spacing[k] * 1.0 + 1e-300);
        if near && levels > 0 {
            let half: Vec<f64> = spacing.iter().map(|h| h / 2.0).collect();
            let mut sub = vec![0.0; d];
            let mut part = vec![0.0; d];
            for corner in 0..(1usize << d) {
                let mut c = centre.to_vec();
                for k in 0..d {
                    let sgn = if (corner >> k) & 1 == 1 { 0.5 } else { -0.5 };
                    c[k] += sgn * half[k];
                }
                part.iter_mut().for_each(|p| *p = 0.0);
                self.average_rec(t, &c, &half, levels - 1, nodes, weights, &mut part);
                for k in 0..d {
                    sub[k] += part[k];
                }
            }
            let inv = 1.0 / (1usize << d) as f64;
            for k in 0..d {
                out[k] = sub[k] * inv;
            }
            return;
        }
        let q = nodes.len();
        let total = q.pow(d as u32);
        let mut z = vec![0.0; d];
        let mut val = vec![0.0; d];
        let mut acc = vec![0.0; d];
        for flat in 0..total {
            let mut rem = flat;
            let mut w = 1.0;
            for k in 0..d {
                let i = rem % q;
                rem /= q;
                z[k] = centre[k] + 0.5 * spacing[k] * nodes[i];
                w *= 0.5 * weights[i];
            }
            self.eval_offset(t, &z, &mut val);
            for k in 0..d {
                acc[k] += w * val[k];
            }
        }
        out.copy_from_slice(&acc);
    }
}

/// Radial profile `h(rho) = min(scale * rho^(-decay), cap)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub scale: f64,
    pub decay: f64,
    pub cap: Option<f64>,
}

impl Envelope {
    pub fn power(scale: f64, decay: f64) -> Self {
        Self {
            scale,
            decay,
            cap: None,
        }
    }

    pub fn constant(value: f64) -> Self {
        Self::power(value, 0.0)
    }

    pub fn eval(&self, rho: f64) -> f64 {
        let h = if self.decay == 0.0 {
            self.scale
        } else {
            self.scale * rho.powf(-self.decay)
        };
        self.cap.map_or(h, |c| h.min(c))
    }

    /// Radius below which the cap is active.
    fn cap_radius(&self) -> Option<f64> {
        match self.cap {
            Some(c) if self.decay > 0.0 && self.scale > 0.0 && c > 0.0 => {
                Some((self.scale / c).powf(1.0 / self.decay))
            }
            _ => None,
        }
    }
}

/// Envelope together with the integrability exponents `p, q` (`q` may be
/// `f64::INFINITY`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeSpec {
    pub profile: Envelope,
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub admissible: bool,
    /// `1 - d/p - 2/q`
    pub slack: f64,
}

/// `d/p + 2/q < 1`, required of the envelope exponents.
pub fn check_admissible(env: &EnvelopeSpec, d: usize) -> Result<AdmissibilityReport> {
    if !(env.p > 2.0) || !(env.q > 2.0) {
        return Err(Error::invalid(format!(
            "exponents must satisfy p, q > 2 (got p = {}, q = {})",
            env.p, env.q
        )));
    }
    let slack = 1.0 - d as f64 / env.p - 2.0 / env.q;
    Ok(AdmissibilityReport {
        admissible: slack > 0.0,
        slack,
    })
}

/// Graded radial rule: `levels` dyadic shells toward the origin, each
/// integrated with an `order`-point Gauss rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialQuadrature {
    pub levels: usize,
    pub order: usize,
}

impl Default for RadialQuadrature {
    fn default() -> Self {
        Self {
            levels: 48,
            order: 16,
        }
    }
}

/// `sup_z || h * chi_r^z ||_{L^p(R^d)}` for a radial nonincreasing envelope,
/// which is attained at `z = 0`.
pub fn envelope_localized_norm(env: &EnvelopeSpec, d: usize, r: f64, quad: RadialQuadrature) -> Result<f64> {
    let h = env.profile;
    let p = env.p;
    if !(r > 0.0) {
        return Err(Error::invalid("cutoff radius must be positive"));
    }
    if !(p >= 1.0) {
        return Err(Error::invalid("p must be >= 1"));
    }
    if p.is_infinite() {
        if h.decay > 0.0 && h.cap.is_none() && h.scale > 0.0 {
            return Err(Error::NonIntegrable("unbounded envelope has no L^inf norm".into()));
        }
        return Ok(h.eval(1e-300_f64.max(0.0)).min(h.cap.unwrap_or(f64::INFINITY)));
    }
    let e = d as f64 - h.decay * p;
    if h.cap.is_none() && h.scale > 0.0 && e <= 0.0 {
        return Err(Error::NonIntegrable(format!(
            "p * decay = {} >= d = {d}",
            h.decay * p
        )));
    }
    let (nodes, weights) = gauss_legendre(quad.order);
    let integrand = |rho: f64| h.eval(rho).powf(p) * chi(rho / r).powf(p) * rho.powi(d as i32 - 1);
    let mut breaks: Vec<f64> = (0..=quad.levels).map(|j| 2.0 * r * 0.5f64.powi(j as i32)).collect();
    // the cutoff's kink at rho = r and the envelope cap are breakpoints too;
    // the cutoff shell gets its own panels
    breaks.extend((0..16).map(|k| r * (1.0 + k as f64 / 16.0)));
    let inner = *breaks.last().unwrap();
    let inner = inner.min(2.0 * r * 0.5f64.powi(quad.levels as i32));
    if let Some(rc) = h.cap_radius() {
        if rc > inner && rc < 2.0 * r {
            breaks.push(rc);
        }
    }
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * b.abs());
    let mut total = 0.0;
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= inner {
            continue;
        }
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        total += half
            * nodes
                .iter()
                .zip(&weights)
                .map(|(x, wt)| wt * integrand(mid + half * x))
                .sum::<f64>();
    }
    // innermost ball: chi = 1 there, integrate the profile exactly
    let a = inner;
    let core = match h.cap_radius() {
        Some(rc) if rc >= a => h.cap.unwrap().powf(p) * a.powi(d as i32) / d as f64,
        Some(rc) => {
            h.cap.unwrap().powf(p) * rc.powi(d as i32) / d as f64
                + h.scale.powf(p) * (a.powf(e) - rc.powf(e)) / e
        }
        None if h.scale == 0.0 => 0.0,
        None => h.scale.powf(p) * a.powf(e) / e,
    };
    total += core;
    Ok((sphere_area(d) * total).powf(1.0 / p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cutoff::chi_lp_norm_with;
    use crate::quadrature::integrate;
    use proptest::prelude::*;

    fn radial(kappa: f64, alpha: f64) -> KernelSpec {
        KernelSpec::power_law(kappa, alpha, Direction::Radial).unwrap()
    }

    #[test]
    fn unit_distance_radial() {
        let k = radial(1.0, 1.0);
        let mut out = [0.0; 2];
        k.eval(0.0, &[1.0, 0.0], &[0.0, 0.0], &mut out);
        assert_eq!(out, [1.0, 0.0]);
    }

    #[test]
    fn diagonal_is_zero_for_every_form() {
        let forms = vec![
            KernelSpec::zero(),
            radial(3.0, 1.7),
            KernelSpec::power_law(1.0, 1.2, Direction::Rotational).unwrap(),
            KernelSpec::constant(vec![2.0, -1.0]).unwrap(),
        ];
        for k in forms {
            let mut out = [9.0; 2];
            k.eval(0.3, &[0.4, -2.0], &[0.4, -2.0], &mut out);
            assert_eq!(out, [0.0, 0.0]);
        }
    }

    #[test]
    fn stiff_power_law_against_scalar_formula() {
        let k = radial(2.0, 1.5);
        let mut out = [0.0; 2];
        k.eval(0.0, &[0.25, 0.0], &[0.0, 0.0], &mut out);
        // independent scalar route: kappa * r / r^alpha along e_1
        let r: f64 = 0.25;
        let expected = 2.0 * r / r.powf(1.5);
        assert!((expected - 4.0).abs() < 1e-12);
        assert!((out[0] - expected).abs() < 1e-12);
        assert_eq!(out[1], 0.0);
    }

    #[test]
    fn truncation_clamps_and_composes() {
        let k = KernelSpec::constant(vec![5.0, -7.0]).unwrap().truncate(3.0).unwrap();
        let mut out = [0.0; 2];
        k.eval(0.0, &[1.0, 0.0], &[0.0, 0.0], &mut out);
        assert_eq!(out, [3.0, -3.0]);
        assert!(KernelSpec::zero().truncate(0.0).is_err());
        assert!(KernelSpec::zero().truncate(-1.0).is_err());
        assert!(KernelSpec::zero().truncate(f64::NAN).is_err());

        let base = radial(1.0, 1.8);
        let a = base.truncate(3.0).unwrap().truncate(5.0).unwrap();
        let b = base.truncate(3.0).unwrap();
        assert_eq!(a.truncation(), Some(3.0));
        let rng = crate::rng::CounterRng::new(99, crate::rng::Stream::Auxiliary(1));
        let (mut oa, mut ob) = ([0.0; 3], [0.0; 3]);
        let mut xy = [0.0; 6];
        for i in 0..10_000u32 {
            rng.fill_normals(0, i, &mut xy);
            let scale = 10f64.powf(rng.uniform(1, i) * 4.0 - 3.0);
            let x: Vec<f64> = xy[..3].iter().map(|v| v * scale).collect();
            let t = rng.uniform(2, i);
            a.eval(t, &x, &xy[3..], &mut oa);
            b.eval(t, &x, &xy[3..], &mut ob);
            assert_eq!(oa, ob);
        }
    }

    #[test]
    fn rotational_requires_the_plane() {
        let k = KernelSpec::power_law(1.0, 1.5, Direction::Rotational).unwrap();
        assert!(k.check_dimension(2).is_ok());
        assert!(k.check_dimension(3).is_err());
        assert!(KernelSpec::power_law(1.0, 2.0, Direction::Radial).is_err());
        assert!(KernelSpec::power_law(1.0, 0.9, Direction::Radial).is_err());
    }

    #[test]
    fn time_scaling_multiplies_before_clamping() {
        let k = KernelSpec::constant(vec![1.0])
            .unwrap()
            .with_time_scaling(TimeScaling { coeffs: vec![1.0, 2.0] })
            .truncate(2.5)
            .unwrap();
        let mut out = [0.0];
        k.eval(0.5, &[1.0], &[0.0], &mut out);
        assert_eq!(out[0], 2.0);
        k.eval(1.0, &[1.0], &[0.0], &mut out);
        assert_eq!(out[0], 2.5);
    }

    #[test]
    fn table_kernel_interpolates_and_vanishes_outside() {
        let g = GridSpec::cube(1, 1.0, 20).unwrap();
        let t = KernelTable::from_fn(g, |z, out| out[0] = z[0]).unwrap();
        let k = KernelSpec::table(t);
        let mut out = [0.0];
        k.eval(0.0, &[0.3], &[0.0], &mut out);
        assert!((out[0] - 0.3).abs() < 1e-12);
        k.eval(0.0, &[3.0], &[0.0], &mut out);
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn admissibility_arithmetic() {
        let env = |p, q| EnvelopeSpec {
            profile: Envelope::constant(1.0),
            p,
            q,
        };
        let r = check_admissible(&env(5.0, 10.0), 2).unwrap();
        assert!(r.admissible);
        assert!((r.slack - 0.4).abs() < 1e-15);
        assert!(!check_admissible(&env(4.0, 4.0), 2).unwrap().admissible);
        assert!(check_admissible(&env(3.0, 1e6), 2).unwrap().admissible);
        assert!(check_admissible(&env(2.0, 10.0), 2).is_err());
        assert!(check_admissible(&env(5.0, 1.5), 2).is_err());
        assert!(check_admissible(&env(5.0, f64::INFINITY), 2).unwrap().admissible);
    }

    #[test]
    fn envelope_norm_of_constant_is_chi_norm() {
        for &(d, p) in &[(1usize, 3.0), (2, 3.0), (2, 5.0)] {
            let env = EnvelopeSpec {
                profile: Envelope::constant(1.0),
                p,
                q: f64::INFINITY,
            };
            let v = envelope_localized_norm(&env, d, 1.0, RadialQuadrature::default()).unwrap();
            // oracle: chi quadrature at 4x the panel count
            let oracle = chi_lp_norm_with(d, p, 256, 16);
            assert!((v - oracle).abs() < 1e-9 * oracle, "{v} vs {oracle}");
        }
    }

    #[test]
    fn envelope_norm_singular_but_integrable() {
        // h(z) = |z|^{-1/2}, d = 2, p = 3
        let env = EnvelopeSpec {
            profile: Envelope::power(1.0, 0.5),
            p: 3.0,
            q: f64::INFINITY,
        };
        let v = envelope_localized_norm(&env, 2, 1.0, RadialQuadrature::default()).unwrap();
        // oracle: substitute rho = s^2 so the integrand is smooth at 0,
        // 2 pi * int_0^2 rho^{-3/2} chi^3 rho drho = 2 pi * int_0^sqrt2 2 chi(s^2)^3 ds
        let oracle = (2.0
            * std::f64::consts::PI
            * integrate(|s| 2.0 * chi(s * s).powi(3), 0.0, 2f64.sqrt(), 2048, 8))
        .powf(1.0 / 3.0);
        assert!(v.is_finite());
        assert!((v - oracle).abs() < 1e-7 * oracle, "{v} vs {oracle}");
    }

    #[test]
    fn envelope_norm_detects_divergence() {
        let env = EnvelopeSpec {
            profile: Envelope::power(1.0, 1.0),
            p: 3.0,
            q: f64::INFINITY,
        };
        assert!(matches!(
            envelope_localized_norm(&env, 2, 1.0, RadialQuadrature::default()),
            Err(Error::NonIntegrable(_))
        ));
        // a capped envelope is always integrable
        let capped = EnvelopeSpec {
            profile: Envelope {
                cap: Some(10.0),
                ..env.profile
            },
            ..env
        };
        assert!(envelope_localized_norm(&capped, 2, 1.0, RadialQuadrature::default()).is_ok());
    }

    #[test]
    fn capped_envelope_matches_smooth_substitution() {
        let env = EnvelopeSpec {
            profile: Envelope {
                scale: 0.5,
                decay: 0.5,
                cap: Some(4.0),
            },
            p: 3.0,
            q: f64::INFINITY,
        };
        let v = envelope_localized_norm(&env, 2, 1.0, RadialQuadrature::default()).unwrap();
        let rc = (0.5f64 / 4.0).powi(2);
        let f = |rho: f64| env.profile.eval(rho).powi(3) * chi(rho).powi(3) * rho;
        let oracle = (2.0
            * std::f64::consts::PI
            * (integrate(f, 0.0, rc, 64, 8) + integrate(|s| 2.0 * s * f(s * s), rc.sqrt(), 2f64.sqrt(), 4096, 8)))
        .powf(1.0 / 3.0);
        assert!((v - oracle).abs() < 1e-7 * oracle, "{v} vs {oracle}");
    }

    #[test]
    fn cell_average_of_odd_kernel_vanishes_at_origin() {
        let k = radial(1.0, 1.5);
        let mut out = [1.0; 2];
        k.cell_average(0.0, &[0.0, 0.0], &[0.1, 0.1], 4, &mut out);
        assert!(out[0].abs() < 1e-12 && out[1].abs() < 1e-12);
        let c = KernelSpec::constant(vec![0.7, 0.0]).unwrap();
        c.cell_average(0.0, &[0.0, 0.0], &[0.1, 0.1], 4, &mut out);
        assert!((out[0] - 0.7).abs() < 1e-14);
    }

    fn arb_kernel() -> impl Strategy<Value = KernelSpec> {
        (0.0f64..3.0, 1.0f64..1.99, prop::bool::ANY, prop::option::of(0.5f64..20.0)).prop_map(
            |(kappa, alpha, rot, trunc)| {
                let dir = if rot { Direction::Rotational } else { Direction::Radial };
                let k = KernelSpec::power_law(kappa, alpha, dir).unwrap();
                match trunc {
                    Some(n) => k.truncate(n).unwrap(),
                    None => k,
                }
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(512))]

        #[test]
        fn envelope_dominance_and_oddness(
            k in arb_kernel(),
            x in prop::array::uniform2(-3.0f64..3.0),
            y in prop::array::uniform2(-3.0f64..3.0),
            t in 0.0f64..1.0,
        ) {
            let mut a = [0.0; 2];
            let mut b = [0.0; 2];
            k.eval(t, &x, &y, &mut a);
            k.eval(t, &y, &x, &mut b);
            prop_assert_eq!(a[0], -b[0]);
            prop_assert_eq!(a[1], -b[1]);
            let rho = ((x[0]-y[0]).powi(2) + (x[1]-y[1]).powi(2)).sqrt();
            let env = k.envelope(2, 1.0);
            let norm = (a[0]*a[0] + a[1]*a[1]).sqrt();
            if rho > 0.0 {
                prop_assert!(norm <= env.eval(rho) * (1.0 + 1e-12));
            }
            if let Some(n) = k.truncation() {
                prop_assert!(a.iter().all(|v| v.abs() <= n));
            }
        }

        #[test]
        fn rotational_is_orthogonal(
            kappa in 0.1f64..3.0,
            alpha in 1.0f64..1.99,
            x in prop::array::uniform2(-3.0f64..3.0),
            y in prop::array::uniform2(-3.0f64..3.0),
        ) {
            let k = KernelSpec::power_law(kappa, alpha, Direction::Rotational).unwrap();
            let mut a = [0.0; 2];
            k.eval(0.0, &x, &y, &mut a);
            let z = [x[0]-y[0], x[1]-y[1]];
            let dot = a[0]*z[0] + a[1]*z[1];
            let scale = (a[0].hypot(a[1])) * z[0].hypot(z[1]);
            prop_assert!(dot.abs() <= 1e-12 * scale.max(1e-300));
        }

        #[test]
        fn admissibility_is_monotone(
            p in 2.01f64..50.0, q in 2.01f64..50.0,
            dp in 0.0f64..20.0, dq in 0.0f64..20.0,
            d in 1usize..4,
        ) {
            let env = |p, q| EnvelopeSpec { profile: Envelope::constant(1.0), p, q };
            let base = check_admissible(&env(p, q), d).unwrap();
            let bigger = check_admissible(&env(p + dp, q + dq), d).unwrap();
            prop_assert!(!base.admissible || bigger.admissible);
        }
    }
}
