//! Regular cell-centred grids on boxes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A box `[lo, hi]` split into `shape[k]` equal cells along axis `k`.
///
/// Values attached to a grid are stored row-major: the last axis varies
/// fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub shape: Vec<usize>,
}

impl GridSpec {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() || lo.len() != shape.len() {
            return Err(Error::invalid("grid lo/hi/shape must have the same nonzero length"));
        }
        for k in 0..lo.len() {
            if !(lo[k].is_finite() && hi[k].is_finite() && hi[k] > lo[k]) {
                return Err(Error::invalid(format!("grid axis {k}: need finite lo < hi")));
            }
            if shape[k] == 0 {
                return Err(Error::invalid(format!("grid axis {k}: zero cells")));
            }
        }
        Ok(Self { lo, hi, shape })
    }

    /// The cube `[-half_width, half_width]^d` with `cells` cells per axis.
    pub fn cube(d: usize, half_width: f64, cells: usize) -> Result<Self> {
        Self::new(vec![-half_width; d], vec![half_width; d], vec![cells; d])
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.shape[axis] as f64
    }

    pub fn spacings(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| self.spacing(k)).collect()
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.spacing(k)).product()
    }

    pub fn axis_center(&self, axis: usize, i: usize) -> f64 {
        self.lo[axis] + (i as f64 + 0.5) * self.spacing(axis)
    }

    pub fn axis_centers(&self, axis: usize) -> Vec<f64> {
        (0..self.shape[axis]).map(|i| self.axis_center(axis, i)).collect()
    }

    pub fn strides(&self) -> Vec<usize> {
        let d = self.dim();
        let mut s = vec![1; d];
        for k in (0..d.saturating_sub(1)).rev() {
            s[k] = s[k + 1] * self.shape[k + 1];
        }
        s
    }

    pub fn unravel(&self, mut flat: usize, out: &mut [usize]) {
        for k in (0..self.dim()).rev() {
            out[k] = flat % self.shape[k];
            flat /= self.shape[k];
        }
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn center(&self, flat: usize, out: &mut [f64]) {
        let mut idx = vec![0; self.dim()];
        self.unravel(flat, &mut idx);
        for k in 0..self.dim() {
            out[k] = self.axis_center(k, idx[k]);
        }
    }

    pub fn centers(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; self.len() * d];
        for (c, chunk) in out.chunks_mut(d).enumerate() {
            self.center(c, chunk);
        }
        out
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .enumerate()
            .all(|(k, &v)| v >= self.lo[k] && v <= self.hi[k])
    }

    /// Index of the cell containing `x`, if inside the box.
    pub fn cell_of(&self, x: &[f64]) -> Option<usize> {
        let mut flat = 0;
        for k in 0..self.dim() {
            let u = (x[k] - self.lo[k]) / self.spacing(k);
            if !(u >= 0.0 && u <= self.shape[k] as f64) {
                return None;
            }
            let i = (u as usize).min(self.shape[k] - 1);
            flat = flat * self.shape[k] + i;
        }
        Some(flat)
    }

    pub fn same_as(&self, other: &GridSpec) -> bool {
        if self.shape != other.shape {
            return false;
        }
        let tol = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()));
        self.lo.iter().zip(&other.lo).all(|(&a, &b)| tol(a, b))
            && self.hi.iter().zip(&other.hi).all(|(&a, &b)| tol(a, b))
    }

    pub fn require_same(&self, other: &GridSpec) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }

    /// Same box with every axis refined by `factor`.
    pub fn refined(&self, factor: usize) -> GridSpec {
        GridSpec {
            lo: self.lo.clone(),
            hi: self.hi.clone(),
            shape: self.shape.iter().map(|&n| n * factor).collect(),
        }
    }

    /// Multilinear interpolation of cell-centre values at `x`.
    ///
    /// Points outside the box evaluate to zero; between the box edge and the
    /// outermost centre the edge value is held constant.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        let d = self.dim();
        debug_assert_eq!(values.len(), self.len());
        if !self.contains(x) {
            return 0.0;
        }
        let mut base = [0usize; 8];
        let mut frac = [0.0f64; 8];
        let mut hi_ok = [false; 8];
        assert!(d <= 8, "interpolation supports up to 8 dimensions");
        for k in 0..d {
            let u = (x[k] - self.lo[k]) / self.spacing(k) - 0.5;
            let n = self.shape[k];
            if u <= 0.0 {
                base[k] = 0;
                frac[k] = 0.0;
            } else if u >= (n - 1) as f64 {
                base[k] = n - 1;
                frac[k] = 0.0;
            } else {
                let i = u.floor() as usize;
                base[k] = i;
                frac[k] = u - i as f64;
            }
            hi_ok[k] = base[k] + 1 < n;
        }
        let strides = self.strides();
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut flat = 0;
            let mut skip = false;
            for k in 0..d {
                let up = (corner >> k) & 1 == 1;
                if up {
                    if !hi_ok[k] || frac[k] == 0.0 {
                        skip = true;
                        break;
                    }
                    w *= frac[k];
                    flat += (base[k] + 1) * strides[k];
                } else {
                    w *= 1.0 - frac[k];
                    flat += base[k] * strides[k];
                }
            }
            if !skip && w != 0.0 {
                acc += w * values[flat];
            }
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ravel_round_trip_and_centers() {
        let g = GridSpec::new(vec![0.0, -1.0], vec![2.0, 1.0], vec![4, 8]).unwrap();
        let mut idx = [0; 2];
        for flat in 0..g.len() {
            g.unravel(flat, &mut idx);
            assert_eq!(g.ravel(&idx), flat);
        }
        let mut c = [0.0; 2];
        g.center(0, &mut c);
        assert_eq!(c, [0.25, -0.875]);
        assert_eq!(g.cell_of(&[0.3, -0.9]), Some(g.ravel(&[0, 0])));
        assert_eq!(g.cell_of(&[2.5, 0.0]), None);
    }

    #[test]
    fn interpolation_is_exact_for_affine_fields() {
        let g = GridSpec::new(vec![-1.0, -1.0], vec![1.0, 1.0], vec![10, 12]).unwrap();
        let centers = g.centers();
        let vals: Vec<f64> = centers.chunks(2).map(|c| 2.0 * c[0] - 0.5 * c[1] + 1.0).collect();
        for &(x, y) in &[(0.13, -0.41), (0.0, 0.0), (-0.85, 0.8)] {
            let v = g.interpolate(&vals, &[x, y]);
            assert!((v - (2.0 * x - 0.5 * y + 1.0)).abs() < 1e-12);
        }
        assert_eq!(g.interpolate(&vals, &[1.5, 0.0]), 0.0);
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(GridSpec::new(vec![0.0], vec![0.0], vec![3]).is_err());
        assert!(GridSpec::new(vec![0.0], vec![1.0], vec![0]).is_err());
        assert!(GridSpec::new(vec![0.0], vec![1.0, 2.0], vec![3]).is_err());
    }
}
