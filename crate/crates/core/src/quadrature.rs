//! Gauss-Legendre rules and a few radial integration helpers.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Composite Gauss-Legendre integral of `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize, order: usize) -> f64 {
    let (x, w) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        let mut s = 0.0;
        for (xi, wi) in x.iter().zip(&w) {
            s += wi * f(mid + 0.5 * h * xi);
        }
        acc += 0.5 * h * s;
    }
    acc
}

/// Surface area of the unit sphere in `R^d`.
pub fn sphere_area(d: usize) -> f64 {
    let half = d as f64 / 2.0;
    2.0 * PI.powf(half) / libm::tgamma(half)
}

/// Volume of the ball of radius `r` in `R^d`.
pub fn ball_volume(d: usize, r: f64) -> f64 {
    sphere_area(d) / d as f64 * r.powi(d as i32)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `P(a < Z < b)` for a standard normal `Z`, accurate in both tails.
pub fn normal_interval(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        0.5 * (libm::erfc(a / std::f64::consts::SQRT_2) - libm::erfc(b / std::f64::consts::SQRT_2))
    } else if b <= 0.0 {
        0.5 * (libm::erfc(-b / std::f64::consts::SQRT_2) - libm::erfc(-a / std::f64::consts::SQRT_2))
    } else {
        1.0 - normal_cdf(a) - (1.0 - normal_cdf(b))
    }
}
