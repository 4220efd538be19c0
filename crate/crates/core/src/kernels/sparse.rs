use crate::dense::Mat;
use crate::real::Real;

/// Small matrix stored as coordinate triplets, applied to row-major blocks
/// of element data with a fused slot dimension.
#[derive(Clone, Debug)]
pub struct SparseOp<R> {
    rows: usize,
    cols: usize,
    entries: Vec<(u32, u32, R)>,
}

impl<R: Real> SparseOp<R> {
    pub fn filtered(m: &Mat, keep: impl Fn(usize, usize) -> bool) -> Self {
        let mut entries = Vec::new();
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                if keep(r, c) {
                    entries.push((r as u32, c as u32, R::of(m[(r, c)])));
                }
            }
        }
        Self { rows: m.rows(), cols: m.cols(), entries }
    }

    pub fn dense(m: &Mat) -> Self {
        Self::filtered(m, |_, _| true)
    }

    pub fn nonzero(m: &Mat) -> Self {
        Self::filtered(m, |r, c| m[(r, c)] != 0.0)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// `out += A x`, where `x` has `cols` rows of length `stride` and `out`
    /// has `rows` rows of the same length.
    pub fn left_mul_add(&self, x: &[R], stride: usize, out: &mut [R]) {
        for &(r, c, v) in &self.entries {
            let src = &x[c as usize * stride..(c as usize + 1) * stride];
            let dst = &mut out[r as usize * stride..(r as usize + 1) * stride];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += v * s;
            }
        }
    }

    /// `out += alpha A x`.
    pub fn left_mul_add_scaled(&self, alpha: R, x: &[R], stride: usize, out: &mut [R]) {
        for &(r, c, v) in &self.entries {
            let v = alpha * v;
            let src = &x[c as usize * stride..(c as usize + 1) * stride];
            let dst = &mut out[r as usize * stride..(r as usize + 1) * stride];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += v * s;
            }
        }
    }

    /// `out += X A` for `nrows` rows of `X`, each holding `rows` modes of
    /// `width` fused slots; `out` rows hold `cols` modes.
    pub fn right_mul_add(&self, x: &[R], nrows: usize, width: usize, out: &mut [R]) {
        let (k_len, m_len) = (self.rows * width, self.cols * width);
        for r in 0..nrows {
            let xr = &x[r * k_len..(r + 1) * k_len];
            let or = &mut out[r * m_len..(r + 1) * m_len];
            if width == 1 {
                for &(k, c, v) in &self.entries {
                    or[c as usize] += v * xr[k as usize];
                }
            } else {
                for &(k, c, v) in &self.entries {
                    let src = &xr[k as usize * width..(k as usize + 1) * width];
                    let dst = &mut or[c as usize * width..(c as usize + 1) * width];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += v * s;
                    }
                }
            }
        }
    }
}
