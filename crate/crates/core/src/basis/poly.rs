//! Dense multivariate polynomials in up to three variables.
//!
//! The modal bases are built symbolically so that evaluation, differentiation
//! and traces on faces are exact up to rounding.

use std::ops::{Add, Mul};

/// Polynomial in `(x, y, z)` stored as a dense cube of coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly3 {
    deg: usize,
    coeffs: Vec<f64>,
}

impl Poly3 {
    pub fn zero(deg: usize) -> Self {
        Self { deg, coeffs: vec![0.0; (deg + 1).pow(3)] }
    }

    pub fn constant(value: f64) -> Self {
        Self { deg: 0, coeffs: vec![value] }
    }

    /// Affine polynomial `c0 + cx*x + cy*y + cz*z`.
    pub fn linear(c0: f64, cx: f64, cy: f64, cz: f64) -> Self {
        let mut p = Self::zero(1);
        *p.coeff_mut(0, 0, 0) = c0;
        *p.coeff_mut(1, 0, 0) = cx;
        *p.coeff_mut(0, 1, 0) = cy;
        *p.coeff_mut(0, 0, 1) = cz;
        p
    }

    pub fn degree_bound(&self) -> usize {
        self.deg
    }

    #[inline]
    fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * (self.deg + 1) + j) * (self.deg + 1) + k
    }

    pub fn coeff(&self, i: usize, j: usize, k: usize) -> f64 {
        if i > self.deg || j > self.deg || k > self.deg {
            0.0
        } else {
            self.coeffs[self.idx(i, j, k)]
        }
    }

    fn coeff_mut(&mut self, i: usize, j: usize, k: usize) -> &mut f64 {
        let idx = self.idx(i, j, k);
        &mut self.coeffs[idx]
    }

    pub fn scale(mut self, s: f64) -> Self {
        self.coeffs.iter_mut().for_each(|c| *c *= s);
        self
    }

    pub fn pow(&self, n: usize) -> Self {
        let mut out = Self::constant(1.0);
        for _ in 0..n {
            out = &out * self;
        }
        out
    }

    /// Actual total degree (largest `i+j+k` with a nonzero coefficient).
    pub fn total_degree(&self) -> usize {
        let mut best = 0;
        for i in 0..=self.deg {
            for j in 0..=self.deg {
                for k in 0..=self.deg {
                    if self.coeff(i, j, k).abs() > 1e-13 {
                        best = best.max(i + j + k);
                    }
                }
            }
        }
        best
    }

    pub fn eval(&self, x: f64, y: f64, z: f64) -> f64 {
        // Horner in z, then y, then x.
        let n = self.deg + 1;
        let mut acc_x = 0.0;
        for i in (0..n).rev() {
            let mut acc_y = 0.0;
            for j in (0..n).rev() {
                let mut acc_z = 0.0;
                for k in (0..n).rev() {
                    acc_z = acc_z * z + self.coeffs[(i * n + j) * n + k];
                }
                acc_y = acc_y * y + acc_z;
            }
            acc_x = acc_x * x + acc_y;
        }
        acc_x
    }

    /// Partial derivative with respect to variable `dir` (0, 1 or 2).
    pub fn derivative(&self, dir: usize) -> Self {
        let mut out = Self::zero(self.deg);
        for i in 0..=self.deg {
            for j in 0..=self.deg {
                for k in 0..=self.deg {
                    let c = self.coeff(i, j, k);
                    if c == 0.0 {
                        continue;
                    }
                    match dir {
                        0 if i > 0 => *out.coeff_mut(i - 1, j, k) += c * i as f64,
                        1 if j > 0 => *out.coeff_mut(i, j - 1, k) += c * j as f64,
                        2 if k > 0 => *out.coeff_mut(i, j, k - 1) += c * k as f64,
                        _ => {}
                    }
                }
            }
        }
        out
    }
}

impl Add for &Poly3 {
    type Output = Poly3;
    fn add(self, rhs: &Poly3) -> Poly3 {
        let deg = self.deg.max(rhs.deg);
        let mut out = Poly3::zero(deg);
        for i in 0..=deg {
            for j in 0..=deg {
                for k in 0..=deg {
                    *out.coeff_mut(i, j, k) = self.coeff(i, j, k) + rhs.coeff(i, j, k);
                }
            }
        }
        out
    }
}

impl Mul for &Poly3 {
    type Output = Poly3;
    fn mul(self, rhs: &Poly3) -> Poly3 {
        let mut out = Poly3::zero(self.deg + rhs.deg);
        for i in 0..=self.deg {
            for j in 0..=self.deg {
                for k in 0..=self.deg {
                    let a = self.coeff(i, j, k);
                    if a == 0.0 {
                        continue;
                    }
                    for p in 0..=rhs.deg {
                        for q in 0..=rhs.deg {
                            for r in 0..=rhs.deg {
                                let b = rhs.coeff(p, q, r);
                                if b != 0.0 {
                                    *out.coeff_mut(i + p, j + q, k + r) += a * b;
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Monomial coefficients of the Jacobi polynomial `P_n^{(alpha, 0)}(x)`.
pub fn jacobi_coeffs(n: usize, alpha: f64) -> Vec<f64> {
    let beta = 0.0;
    let mut p_prev = vec![1.0];
    if n == 0 {
        return p_prev;
    }
    // P_1 = ((alpha + beta + 2) x + (alpha - beta)) / 2
    let mut p_cur = vec![(alpha - beta) / 2.0, (alpha + beta + 2.0) / 2.0];
    for k in 1..n {
        let k = k as f64;
        let s = 2.0 * k + alpha + beta;
        let a1 = 2.0 * (k + 1.0) * (k + alpha + beta + 1.0) * s;
        let a2 = (s + 1.0) * (alpha * alpha - beta * beta);
        let a3 = s * (s + 1.0) * (s + 2.0);
        let a4 = 2.0 * (k + alpha) * (k + beta) * (s + 2.0);
        let mut next = vec![0.0; p_cur.len() + 1];
        for (m, &c) in p_cur.iter().enumerate() {
            next[m] += a2 * c / a1;
            next[m + 1] += a3 * c / a1;
        }
        for (m, &c) in p_prev.iter().enumerate() {
            next[m] -= a4 * c / a1;
        }
        p_prev = p_cur;
        p_cur = next;
    }
    p_cur
}

/// Homogenized Jacobi polynomial `scale^n * P_n(arg / scale)` where both
/// `arg` and `scale` are polynomials; the result is again a polynomial.
pub fn scaled_jacobi(n: usize, alpha: f64, arg: &Poly3, scale: &Poly3) -> Poly3 {
    let coeffs = jacobi_coeffs(n, alpha);
    let mut out = Poly3::zero(0);
    for (m, &c) in coeffs.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let term = &arg.pow(m) * &scale.pow(n - m);
        out = &out + &term.scale(c);
    }
    out
}
