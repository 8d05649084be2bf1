//! Discrete convolution on regular grids via FFT.
//!
//! Used for mean-field drifts on meshes and for localized norms, where the
//! same translation-invariant stencil is applied at every grid point.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Forward or inverse FFT along every axis of a row-major array.
pub struct FftNd {
    shape: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl FftNd {
    pub fn new(shape: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        let forward = shape.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        Self {
            shape: shape.to_vec(),
            forward,
            inverse,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn run(&self, data: &mut [Complex64], inverse: bool) {
        let d = self.shape.len();
        let total = self.len();
        assert_eq!(data.len(), total);
        let mut line = Vec::new();
        for axis in 0..d {
            let n = self.shape[axis];
            if n == 1 {
                continue;
            }
            let stride: usize = self.shape[axis + 1..].iter().product();
            let plan = if inverse {
                &self.inverse[axis]
            } else {
                &self.forward[axis]
            };
            line.resize(n, Complex64::new(0.0, 0.0));
            let outer = total / (n * stride);
            for o in 0..outer {
                for s in 0..stride {
                    let base = o * n * stride + s;
                    for (i, slot) in line.iter_mut().enumerate() {
                        *slot = data[base + i * stride];
                    }
                    plan.process(&mut line);
                    for (i, v) in line.iter().enumerate() {
                        data[base + i * stride] = *v;
                    }
                }
            }
        }
        if inverse {
            let scale = 1.0 / total as f64;
            for v in data.iter_mut() {
                *v *= scale;
            }
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, false);
    }

    /// Normalised inverse transform.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, true);
    }
}

/// Applies fixed stencils `out_c[i] = sum_j K_c(i - j) * input[j]` on a grid.
///
/// With `periodic = false` the input is zero-padded to twice its size, so
/// the result equals the direct (non-wrapping) sum. With `periodic = true`
/// offsets wrap around and each offset is represented by its minimal image.
pub struct StencilConvolver {
    shape: Vec<usize>,
    padded: Vec<usize>,
    periodic: bool,
    fft: FftNd,
    kernels_hat: Vec<Vec<Complex64>>,
}

impl StencilConvolver {
    /// `stencil(offset, out)` writes the `components` stencil values for an
    /// integer offset vector.
    pub fn new<F>(shape: &[usize], components: usize, periodic: bool, mut stencil: F) -> Self
    where
        F: FnMut(&[i64], &mut [f64]),
    {
        let d = shape.len();
        let padded: Vec<usize> = if periodic {
            shape.to_vec()
        } else {
            shape.iter().map(|&n| 2 * n).collect()
        };
        let fft = FftNd::new(&padded);
        let total = fft.len();
        let mut kernels = vec![vec![Complex64::new(0.0, 0.0); total]; components];
        let mut idx = vec![0usize; d];
        let mut offset = vec![0i64; d];
        let mut vals = vec![0.0; components];
        for flat in 0..total {
            let mut rem = flat;
            for k in (0..d).rev() {
                idx[k] = rem % padded[k];
                rem /= padded[k];
            }
            let mut skip = false;
            for k in 0..d {
                let l = padded[k] as i64;
                let i = idx[k] as i64;
                // minimal image; for padded grids offsets beyond n-1 never contribute
                let m = if i <= l / 2 { i } else { i - l };
                if !periodic && m.unsigned_abs() as usize >= shape[k] {
                    skip = true;
                }
                offset[k] = m;
            }
            if skip {
                continue;
            }
            stencil(&offset, &mut vals);
            for c in 0..components {
                kernels[c][flat] = Complex64::new(vals[c], 0.0);
            }
        }
        for k in kernels.iter_mut() {
            fft.forward(k);
        }
        Self {
            shape: shape.to_vec(),
            padded,
            periodic,
            fft,
            kernels_hat: kernels,
        }
    }

    pub fn components(&self) -> usize {
        self.kernels_hat.len()
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    /// Convolve `input` (row-major on `shape`) with every stencil component.
    pub fn apply(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let d = self.shape.len();
        let n_in: usize = self.shape.iter().product();
        assert_eq!(input.len(), n_in);
        let total = self.fft.len();
        let mut buf = vec![Complex64::new(0.0, 0.0); total];
        let mut idx = vec![0usize; d];
        for (flat, &v) in input.iter().enumerate() {
            let mut rem = flat;
            for k in (0..d).rev() {
                idx[k] = rem % self.shape[k];
                rem /= self.shape[k];
            }
            let p = idx
                .iter()
                .zip(&self.padded)
                .fold(0, |acc, (&i, &n)| acc * n + i);
            buf[p] = Complex64::new(v, 0.0);
        }
        self.fft.forward(&mut buf);
        let mut out = Vec::with_capacity(self.components());
        let mut work = vec![Complex64::new(0.0, 0.0); total];
        for kh in &self.kernels_hat {
            for ((w, &a), &b) in work.iter_mut().zip(&buf).zip(kh) {
                *w = a * b;
            }
            self.fft.inverse(&mut work);
            let mut res = vec![0.0; n_in];
            for (flat, r) in res.iter_mut().enumerate() {
                let mut rem = flat;
                for k in (0..d).rev() {
                    idx[k] = rem % self.shape[k];
                    rem /= self.shape[k];
                }
                let p = idx
                    .iter()
                    .zip(&self.padded)
                    .fold(0, |acc, (&i, &n)| acc * n + i);
                *r = work[p].re;
            }
            out.push(res);
        }
        out
    }
}
