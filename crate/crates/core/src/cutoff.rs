//! The smooth cutoff profile used by every localized norm.
//!
//! `chi(x) = 1` for `|x| <= 1`, `chi(x) = 0` for `|x| >= 2`, and in between
//! `chi(x) = exp(1 - 1 / (1 - (|x| - 1)^2))`, which is C-infinity and
//! radially nonincreasing.

use crate::quadrature::{integrate, sphere_area};

/// Cutoff profile as a function of the radius `|x|`.
pub fn chi(radius: f64) -> f64 {
    if radius <= 1.0 {
        1.0
    } else if radius >= 2.0 {
        0.0
    } else {
        let s = radius - 1.0;
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    }
}

/// `chi((x - z) / r)`.
pub fn chi_at(x: &[f64], z: &[f64], r: f64) -> f64 {
    let d2: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
    chi(d2.sqrt() / r)
}

/// `||chi||_{L^p(R^d)}` (with unit radius), by radial quadrature.
///
/// This is the reference value of the localized norm of the constant
/// function 1: `sup_z ||chi_r^z||_p = r^{d/p} * chi_lp_norm(d, p)`.
pub fn chi_lp_norm(d: usize, p: f64) -> f64 {
    chi_lp_norm_with(d, p, 64, 16)
}

/// Same as [`chi_lp_norm`] with an explicit panel count and rule order.
pub fn chi_lp_norm_with(d: usize, p: f64, panels: usize, order: usize) -> f64 {
    if p.is_infinite() {
        return 1.0;
    }
    let inner = 1.0 / d as f64;
    let shell = integrate(|rho| chi(rho).powf(p) * rho.powi(d as i32 - 1), 1.0, 2.0, panels, order);
    (sphere_area(d) * (inner + shell)).powf(1.0 / p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_shape() {
        assert_eq!(chi(0.0), 1.0);
        assert_eq!(chi(1.0), 1.0);
        assert_eq!(chi(2.0), 0.0);
        assert_eq!(chi(7.0), 0.0);
        let mut prev = 1.0;
        for k in 0..=1000 {
            let v = chi(1.0 + k as f64 / 1000.0);
            assert!(v <= prev && v >= 0.0);
            prev = v;
        }
        // value at the midpoint of the shell: exp(1 - 4/3)
        assert!((chi(1.5) - (-1.0f64 / 3.0).exp()).abs() < 1e-15);
    }

    #[test]
    fn chi_norm_bounds() {
        // between the unit ball and the ball of radius 2
        for d in 1..=3 {
            for &p in &[1.5, 2.0, 5.0] {
                let v = chi_lp_norm(d, p).powf(p);
                let lo = crate::quadrature::ball_volume(d, 1.0);
                let hi = crate::quadrature::ball_volume(d, 2.0);
                assert!(v > lo && v < hi);
            }
        }
    }
}
