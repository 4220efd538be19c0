//! Gauss-Legendre rules and collapsed-coordinate (Duffy) rules on the
//! reference triangle and tetrahedron.

use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev-like initial guess, Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        nodes[i] = 0.5 * (1.0 - x);
        weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let dp = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, dp)
}

/// A quadrature rule: points in reference coordinates and weights.
#[derive(Clone, Debug)]
pub struct Rule<const D: usize> {
    pub points: Vec<[f64; D]>,
    pub weights: Vec<f64>,
}

impl<const D: usize> Rule<D> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Rule on the triangle `{x, y >= 0, x + y <= 1}`, exact for total degree
/// `2n - 2`.
pub fn triangle_rule(n: usize) -> Rule<2> {
    let (x, w) = gauss_legendre_unit(n);
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for (&a, &wa) in x.iter().zip(&w) {
        for (&b, &wb) in x.iter().zip(&w) {
            points.push([a * (1.0 - b), b]);
            weights.push(wa * wb * (1.0 - b));
        }
    }
    Rule { points, weights }
}

/// Rule on the tetrahedron `{x, y, z >= 0, x + y + z <= 1}`, exact for total
/// degree `2n - 3`.
pub fn tetrahedron_rule(n: usize) -> Rule<3> {
    let (x, w) = gauss_legendre_unit(n);
    let mut points = Vec::with_capacity(n * n * n);
    let mut weights = Vec::with_capacity(n * n * n);
    for (&a, &wa) in x.iter().zip(&w) {
        for (&b, &wb) in x.iter().zip(&w) {
            for (&c, &wc) in x.iter().zip(&w) {
                points.push([a * (1.0 - b) * (1.0 - c), b * (1.0 - c), c]);
                weights.push(wa * wb * wc * (1.0 - b) * (1.0 - c) * (1.0 - c));
            }
        }
    }
    Rule { points, weights }
}

/// Exactness degree of [`tetrahedron_rule`] with `n` points per direction.
pub fn tetrahedron_exactness(n: usize) -> usize {
    (2 * n).saturating_sub(3)
}

/// Exactness degree of [`triangle_rule`] with `n` points per direction.
pub fn triangle_exactness(n: usize) -> usize {
    (2 * n).saturating_sub(2)
}
