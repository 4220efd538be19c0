//! ADER-DG element kernels: Cauchy-Kowalevski time derivatives with Taylor
//! integration, volume, local and neighboring surface contributions.
//!
//! Element data is stored variable-major, then mode, with the fused
//! simulation slot innermost: entry `(p, b, s)` lives at `(p * B + b) * W + s`.
//! Rows `0..9` hold the elastic quantities, followed by six memory variables
//! per relaxation mechanism.

mod sparse;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use sparse::SparseOp;

use crate::basis::ReferenceMatrices;
use crate::equations::{ElementOperators, N_ELASTIC, N_MEMORY};
use crate::real::Real;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("missing neighbor payload for interior face {0}")]
    MissingPayload(usize),
}

/// How much of the operator sparsity the kernels exploit. Both variants
/// produce the same numbers; they differ only in the work performed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sparsity {
    /// Only the zero blocks of the Jacobian structure are skipped.
    Block,
    /// Every structural zero is skipped.
    Full,
}

impl Sparsity {
    /// Fused runs exploit all sparsity, single runs only block sparsity.
    pub fn for_width(w: usize) -> Self {
        if w > 1 {
            Sparsity::Full
        } else {
            Sparsity::Block
        }
    }
}

/// Sizes shared by all elements of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    pub order: usize,
    pub nb: usize,
    pub nf: usize,
    pub mechanisms: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(order: usize, nb: usize, nf: usize, mechanisms: usize, width: usize) -> Self {
        assert!(width >= 1, "fusion width must be positive");
        Self { order, nb, nf, mechanisms, width }
    }

    pub fn nq(&self) -> usize {
        N_ELASTIC + N_MEMORY * self.mechanisms
    }

    /// Values in one variable row (`B * W`).
    pub fn row(&self) -> usize {
        self.nb * self.width
    }

    /// Values in one face row (`F * W`).
    pub fn face_row(&self) -> usize {
        self.nf * self.width
    }

    pub fn dofs_len(&self) -> usize {
        self.nq() * self.row()
    }

    pub fn elastic_len(&self) -> usize {
        N_ELASTIC * self.row()
    }

    /// Values in one face payload (`9 * F * W`).
    pub fn payload_len(&self) -> usize {
        N_ELASTIC * self.face_row()
    }

    pub fn index(&self, var: usize, mode: usize, slot: usize) -> usize {
        (var * self.nb + mode) * self.width + slot
    }
}

/// Reference matrices in working precision.
#[derive(Clone, Debug)]
pub struct RefOps<R> {
    pub stiffness: [SparseOp<R>; 3],
    pub stiffness_t: [SparseOp<R>; 3],
    pub flux_local: [SparseOp<R>; 4],
    pub flux_local_t: [SparseOp<R>; 4],
    pub flux_neighbor: Vec<SparseOp<R>>,
}

impl<R: Real> RefOps<R> {
    pub fn new(m: &ReferenceMatrices, sparsity: Sparsity) -> Self {
        let conv = |x: &crate::dense::Mat| match sparsity {
            Sparsity::Block => SparseOp::dense(x),
            Sparsity::Full => SparseOp::nonzero(x),
        };
        Self {
            stiffness: std::array::from_fn(|c| conv(&m.stiffness[c])),
            stiffness_t: std::array::from_fn(|c| conv(&m.stiffness_t[c])),
            flux_local: std::array::from_fn(|i| conv(&m.flux_local[i])),
            flux_local_t: std::array::from_fn(|i| conv(&m.flux_local_t[i])),
            flux_neighbor: m.flux_neighbor.iter().map(conv).collect(),
        }
    }

    pub fn fbar(&self, face: usize, orientation: usize) -> &SparseOp<R> {
        &self.flux_neighbor[3 * face + orientation]
    }
}

/// Element operators in working precision.
#[derive(Clone, Debug)]
pub struct ElemOps<R> {
    pub star_e: [SparseOp<R>; 3],
    pub star_a: [SparseOp<R>; 3],
    pub coupling: Vec<SparseOp<R>>,
    pub omega: Vec<R>,
    pub flux_e_minus: [SparseOp<R>; 4],
    pub flux_e_plus: [SparseOp<R>; 4],
    pub flux_a_minus: [SparseOp<R>; 4],
    pub flux_a_plus: [SparseOp<R>; 4],
    /// Faces whose neighboring contribution needs a payload.
    pub interior: [bool; 4],
}

impl<R: Real> ElemOps<R> {
    pub fn new(ops: &ElementOperators, interior: [bool; 4], sparsity: Sparsity) -> Self {
        let pick = |m: &crate::dense::Mat, block: &dyn Fn(usize, usize) -> bool| match sparsity {
            Sparsity::Block => SparseOp::filtered(m, block),
            Sparsity::Full => SparseOp::nonzero(m),
        };
        // Stresses couple to velocities and vice versa.
        let elastic_blocks = |r: usize, c: usize| (r < 6) != (c < 6);
        let velocity_cols = |_: usize, c: usize| c >= 6;
        let stress_rows = |r: usize, _: usize| r < 6;
        let all = |_: usize, _: usize| true;
        Self {
            star_e: std::array::from_fn(|c| pick(&ops.star_e[c], &elastic_blocks)),
            star_a: std::array::from_fn(|c| pick(&ops.star_a[c], &velocity_cols)),
            coupling: ops.coupling.iter().map(|e| pick(e, &stress_rows)).collect(),
            omega: ops.omega.iter().map(|&w| R::of(w)).collect(),
            flux_e_minus: std::array::from_fn(|i| pick(&ops.flux_e_minus[i], &all)),
            flux_e_plus: std::array::from_fn(|i| pick(&ops.flux_e_plus[i], &all)),
            flux_a_minus: std::array::from_fn(|i| pick(&ops.flux_a_minus[i], &all)),
            flux_a_plus: std::array::from_fn(|i| pick(&ops.flux_a_plus[i], &all)),
            interior,
        }
    }

    pub fn mechanisms(&self) -> usize {
        self.omega.len()
    }
}

/// Scratch buffers reused across kernel calls.
#[derive(Clone, Debug)]
pub struct Workspace<R> {
    xk: [Vec<R>; 3],
    y: Vec<R>,
    face_e: Vec<R>,
    face_a: Vec<R>,
    za: Vec<R>,
    /// `T^e F~_i` of the last [`surface_local`] call.
    pub face_products: [Vec<R>; 4],
}

impl<R: Real> Workspace<R> {
    pub fn new(shape: &Shape) -> Self {
        let e = shape.elastic_len();
        let f = shape.payload_len();
        Self {
            xk: std::array::from_fn(|_| vec![R::zero(); e]),
            y: vec![R::zero(); N_MEMORY * shape.row()],
            face_e: vec![R::zero(); f],
            face_a: vec![R::zero(); N_MEMORY * shape.face_row()],
            za: vec![R::zero(); N_MEMORY * shape.row()],
            face_products: std::array::from_fn(|_| vec![R::zero(); f]),
        }
    }
}

fn zero<R: Real>(v: &mut [R]) {
    v.iter_mut().for_each(|x| *x = R::zero());
}

/// Time derivatives `d[0..O]` of one element at its expansion point.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeStack<R> {
    len: usize,
    data: Vec<R>,
}

impl<R: Real> DerivativeStack<R> {
    pub fn new(shape: &Shape) -> Self {
        let len = shape.dofs_len();
        Self { len, data: vec![R::zero(); len * shape.order] }
    }

    pub fn order(&self) -> usize {
        self.data.len() / self.len
    }

    pub fn get(&self, j: usize) -> &[R] {
        &self.data[j * self.len..(j + 1) * self.len]
    }

    pub fn get_mut(&mut self, j: usize) -> &mut [R] {
        &mut self.data[j * self.len..(j + 1) * self.len]
    }

    /// Re-expands the Taylor polynomial at `t0 + tau`.
    pub fn shifted(&self, tau: f64) -> Self {
        let order = self.order();
        let mut out = Self { len: self.len, data: vec![R::zero(); self.data.len()] };
        for j in 0..order {
            let mut coef = 1.0;
            for i in j..order {
                if i > j {
                    coef *= tau / (i - j) as f64;
                }
                let c = R::of(coef);
                let src = self.get(i);
                for (o, &s) in out.get_mut(j).iter_mut().zip(src) {
                    *o += c * s;
                }
            }
        }
        out
    }
}

/// Cauchy-Kowalevski procedure: fills `d[0] = Q` and the higher derivatives.
pub fn ck_derivatives<R: Real>(
    shape: &Shape,
    refs: &RefOps<R>,
    ops: &ElemOps<R>,
    q: &[R],
    derivs: &mut DerivativeStack<R>,
    ws: &mut Workspace<R>,
) {
    let row = shape.row();
    let e_len = shape.elastic_len();
    let m = shape.mechanisms;
    derivs.get_mut(0).copy_from_slice(q);
    for j in 0..shape.order - 1 {
        let (lo, hi) = derivs.data.split_at_mut((j + 1) * derivs.len);
        let cur = &lo[j * derivs.len..];
        let next = &mut hi[..derivs.len];
        zero(next);
        // Spatial derivatives of the elastic part, shared by both blocks.
        for c in 0..3 {
            zero(&mut ws.xk[c]);
            refs.stiffness_t[c].right_mul_add(&cur[..e_len], N_ELASTIC, shape.width, &mut ws.xk[c]);
        }
        let (next_e, next_a) = next.split_at_mut(e_len);
        for c in 0..3 {
            ops.star_e[c].left_mul_add_scaled(-R::one(), &ws.xk[c], row, next_e);
        }
        if m == 0 {
            continue;
        }
        let cur_a = &cur[e_len..];
        for l in 0..m {
            ops.coupling[l].left_mul_add(&cur_a[l * N_MEMORY * row..(l + 1) * N_MEMORY * row], row, next_e);
        }
        zero(&mut ws.y);
        for c in 0..3 {
            ops.star_a[c].left_mul_add(&ws.xk[c], row, &mut ws.y);
        }
        for l in 0..m {
            let w = ops.omega[l];
            let block = l * N_MEMORY * row..(l + 1) * N_MEMORY * row;
            for ((o, &y), &a) in next_a[block.clone()].iter_mut().zip(&ws.y).zip(&cur_a[block]) {
                *o = w * (-y - a);
            }
        }
    }
}

/// Taylor coefficients `dt^(j+1) / (j+1)!` for `j = 0..order`.
fn taylor_coefficients(order: usize, dt: f64) -> Vec<f64> {
    let mut c = Vec::with_capacity(order);
    let mut v = dt;
    for j in 0..order {
        c.push(v);
        v *= dt / (j + 2) as f64;
    }
    c
}

/// Time integral over `[t0, t0 + dt]` of the leading `out.len()` values.
pub fn taylor_integrate<R: Real>(derivs: &DerivativeStack<R>, dt: f64, out: &mut [R]) {
    let coef = taylor_coefficients(derivs.order(), dt);
    let n = out.len();
    for (j, &c) in coef.iter().enumerate() {
        let c = R::of(c);
        let d = &derivs.get(j)[..n];
        if j == 0 {
            for (o, &v) in out.iter_mut().zip(d) {
                *o = c * v;
            }
        } else {
            for (o, &v) in out.iter_mut().zip(d) {
                *o += c * v;
            }
        }
    }
}

/// Taylor expansion evaluated at `t0 + tau` for the leading `out.len()` values.
pub fn taylor_evaluate<R: Real>(derivs: &DerivativeStack<R>, tau: f64, out: &mut [R]) {
    let n = out.len();
    let mut coef = 1.0;
    for j in 0..derivs.order() {
        if j > 0 {
            coef *= tau / j as f64;
        }
        let c = R::of(coef);
        let d = &derivs.get(j)[..n];
        if j == 0 {
            out.copy_from_slice(d);
        } else {
            for (o, &v) in out.iter_mut().zip(d) {
                *o += c * v;
            }
        }
    }
}

/// Adds the volume contribution of the time-integrated DOFs `t` to `out`.
pub fn volume_kernel<R: Real>(
    shape: &Shape,
    refs: &RefOps<R>,
    ops: &ElemOps<R>,
    t: &[R],
    out: &mut [R],
    ws: &mut Workspace<R>,
) {
    let row = shape.row();
    let e_len = shape.elastic_len();
    let m = shape.mechanisms;
    for c in 0..3 {
        zero(&mut ws.xk[c]);
        refs.stiffness[c].right_mul_add(&t[..e_len], N_ELASTIC, shape.width, &mut ws.xk[c]);
    }
    let (out_e, out_a) = out.split_at_mut(e_len);
    for c in 0..3 {
        ops.star_e[c].left_mul_add(&ws.xk[c], row, out_e);
    }
    if m == 0 {
        return;
    }
    let t_a = &t[e_len..];
    for l in 0..m {
        ops.coupling[l].left_mul_add(&t_a[l * N_MEMORY * row..(l + 1) * N_MEMORY * row], row, out_e);
    }
    zero(&mut ws.y);
    for c in 0..3 {
        ops.star_a[c].left_mul_add(&ws.xk[c], row, &mut ws.y);
    }
    for l in 0..m {
        let w = ops.omega[l];
        let block = l * N_MEMORY * row..(l + 1) * N_MEMORY * row;
        for ((o, &y), &a) in out_a[block.clone()].iter_mut().zip(&ws.y).zip(&t_a[block]) {
            *o += w * (y - a);
        }
    }
}

/// Adds the element-local surface contribution to `out` and leaves the face
/// products `T^e F~_i` in `ws.face_products`.
pub fn surface_local<R: Real>(
    shape: &Shape,
    refs: &RefOps<R>,
    ops: &ElemOps<R>,
    t: &[R],
    out: &mut [R],
    ws: &mut Workspace<R>,
) {
    let e_len = shape.elastic_len();
    for i in 0..4 {
        zero(&mut ws.face_products[i]);
        refs.flux_local[i].right_mul_add(&t[..e_len], N_ELASTIC, shape.width, &mut ws.face_products[i]);
    }
    let products = std::mem::take(&mut ws.face_products);
    let faces: [Option<&[R]>; 4] = std::array::from_fn(|i| Some(products[i].as_slice()));
    apply_flux(shape, refs, &ops.flux_e_minus, &ops.flux_a_minus, &ops.omega, faces, out, ws);
    ws.face_products = products;
}

/// Adds the neighboring surface contribution from the four face payloads
/// `T^e_{k_i} F-_{j,h}` (9 x F x W each) to `out`.
pub fn surface_neighbor<R: Real>(
    shape: &Shape,
    refs: &RefOps<R>,
    ops: &ElemOps<R>,
    payloads: [Option<&[R]>; 4],
    out: &mut [R],
    ws: &mut Workspace<R>,
) -> Result<(), KernelError> {
    for i in 0..4 {
        if ops.interior[i] && payloads[i].is_none() {
            return Err(KernelError::MissingPayload(i));
        }
    }
    let faces: [Option<&[R]>; 4] = std::array::from_fn(|i| if ops.interior[i] { payloads[i] } else { None });
    apply_flux(shape, refs, &ops.flux_e_plus, &ops.flux_a_plus, &ops.omega, faces, out, ws);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn apply_flux<R: Real>(
    shape: &Shape,
    refs: &RefOps<R>,
    flux_e: &[SparseOp<R>; 4],
    flux_a: &[SparseOp<R>; 4],
    omega: &[R],
    faces: [Option<&[R]>; 4],
    out: &mut [R],
    ws: &mut Workspace<R>,
) {
    let row = shape.row();
    let frow = shape.face_row();
    let e_len = shape.elastic_len();
    let m = shape.mechanisms;
    zero(&mut ws.za);
    let (out_e, out_a) = out.split_at_mut(e_len);
    for (i, face) in faces.iter().enumerate() {
        let Some(face) = face else { continue };
        zero(&mut ws.face_e);
        flux_e[i].left_mul_add(face, frow, &mut ws.face_e);
        refs.flux_local_t[i].right_mul_add(&ws.face_e, N_ELASTIC, shape.width, out_e);
        if m > 0 {
            zero(&mut ws.face_a);
            flux_a[i].left_mul_add(face, frow, &mut ws.face_a);
            refs.flux_local_t[i].right_mul_add(&ws.face_a, N_MEMORY, shape.width, &mut ws.za);
        }
    }
    for (l, &w) in omega.iter().enumerate().take(m) {
        let block = &mut out_a[l * N_MEMORY * row..(l + 1) * N_MEMORY * row];
        for (o, &z) in block.iter_mut().zip(&ws.za) {
            *o += w * z;
        }
    }
}

/// Face payload `T^e F-_{j,h}` sent to the neighbor behind local face `j`,
/// which sees this face under orientation `h`.
pub fn neighbor_payload<R: Real>(shape: &Shape, refs: &RefOps<R>, te: &[R], face: usize, orientation: usize, out: &mut [R]) {
    zero(out);
    refs.fbar(face, orientation).right_mul_add(&te[..shape.elastic_len()], N_ELASTIC, shape.width, out);
}

/// Writes `a - b` into `out`.
pub fn difference<R: Real>(a: &[R], b: &[R], out: &mut [R]) {
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o = x - y;
    }
}

#[cfg(test)]
mod tests;
