//! Constant-per-element operators of the anelastic wave equations: Jacobians,
//! anelastic coupling, relaxation parameters and upwind flux solvers.
//!
//! State ordering is `(sxx, syy, szz, sxy, syz, sxz, u, v, w)` followed by six
//! memory variables `(xx, yy, zz, xy, yz, xz)` per relaxation mechanism.
//! Memory variables are strain-like: mechanism `l` obeys
//! `d/dt theta_l = omega_l (strain_rate - theta_l)`, and feeds the stresses
//! through the coupling block `E^l`, which carries the fitted weights.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dense::Mat;
use crate::mesh::ElementGeometry;

pub const N_ELASTIC: usize = 9;
pub const N_MEMORY: usize = 6;

/// Total number of state variables for `m` relaxation mechanisms.
pub const fn n_quantities(mechanisms: usize) -> usize {
    N_ELASTIC + N_MEMORY * mechanisms
}

#[derive(Debug, Error, PartialEq)]
pub enum EquationsError {
    #[error("invalid material: {0}")]
    InvalidMaterial(String),
    #[error("invalid relaxation setup: {0}")]
    InvalidRelaxation(String),
    #[error("degenerate element geometry: {0}")]
    Geometry(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub rho: f64,
    pub lam: f64,
    pub mu: f64,
    pub vp: f64,
    pub vs: f64,
    /// Quality factors; `f64::INFINITY` marks a purely elastic material.
    pub qp: f64,
    pub qs: f64,
}

impl Material {
    pub fn from_velocities(rho: f64, vp: f64, vs: f64, qp: f64, qs: f64) -> Result<Self, EquationsError> {
        let mu = rho * vs * vs;
        let lam = rho * vp * vp - 2.0 * mu;
        let m = Self { rho, lam, mu, vp, vs, qp, qs };
        m.validate()?;
        Ok(m)
    }

    pub fn elastic(rho: f64, vp: f64, vs: f64) -> Result<Self, EquationsError> {
        Self::from_velocities(rho, vp, vs, f64::INFINITY, f64::INFINITY)
    }

    pub fn validate(&self) -> Result<(), EquationsError> {
        let bad = |msg: String| Err(EquationsError::InvalidMaterial(msg));
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad(format!("density {} must be positive", self.rho));
        }
        if !(self.mu >= 0.0) {
            return bad(format!("shear modulus {} must be non-negative", self.mu));
        }
        if !(self.lam + 2.0 * self.mu > 0.0) {
            return bad(format!("P-wave modulus {} must be positive", self.lam + 2.0 * self.mu));
        }
        if !(self.qp > 0.0 && self.qs > 0.0) {
            return bad(format!("quality factors ({}, {}) must be positive", self.qp, self.qs));
        }
        let vp = ((self.lam + 2.0 * self.mu) / self.rho).sqrt();
        let vs = (self.mu / self.rho).sqrt();
        if (vp - self.vp).abs() > 1e-9 * vp || (vs - self.vs).abs() > 1e-9 * vp {
            return bad("wave speeds inconsistent with Lame parameters".into());
        }
        Ok(())
    }

    pub fn p_impedance(&self) -> f64 {
        self.rho * self.vp
    }

    pub fn s_impedance(&self) -> f64 {
        self.rho * self.vs
    }
}

/// Relaxation frequencies and fitted anelastic weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxationSet {
    /// Relaxation frequencies in rad/s, strictly increasing.
    pub omega: Vec<f64>,
    /// Weights of the P-wave modulus per mechanism.
    pub weight_p: Vec<f64>,
    /// Weights of the shear modulus per mechanism.
    pub weight_s: Vec<f64>,
    /// Set when the fit is poorly conditioned for the requested band.
    #[serde(default)]
    pub warning: Option<String>,
}

impl RelaxationSet {
    pub fn elastic() -> Self {
        Self { omega: Vec::new(), weight_p: Vec::new(), weight_s: Vec::new(), warning: None }
    }

    pub fn mechanisms(&self) -> usize {
        self.omega.len()
    }

    pub fn n_quantities(&self) -> usize {
        n_quantities(self.mechanisms())
    }

    pub fn validate(&self) -> Result<(), EquationsError> {
        let m = self.omega.len();
        if self.weight_p.len() != m || self.weight_s.len() != m {
            return Err(EquationsError::InvalidRelaxation("weight count differs from mechanism count".into()));
        }
        if self.omega.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(EquationsError::InvalidRelaxation("relaxation frequencies must be positive".into()));
        }
        if self.omega.windows(2).any(|w| w[1] <= w[0]) {
            return Err(EquationsError::InvalidRelaxation("relaxation frequencies must increase".into()));
        }
        Ok(())
    }

    /// Same frequencies with all weights zero.
    pub fn with_zero_weights(&self) -> Self {
        Self {
            omega: self.omega.clone(),
            weight_p: vec![0.0; self.omega.len()],
            weight_s: vec![0.0; self.omega.len()],
            warning: None,
        }
    }
}

/// Log-spaced frequencies over `[lo, hi]`; a single sample sits at the
/// geometric center.
fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![(lo * hi).sqrt()];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Quality factor of a modulus with weights `y` at angular frequency `w`,
/// from the exact complex modulus `M(w) = M_u (1 - sum y_l w_l / (w_l + i w))`.
pub fn quality_factor(omega: &[f64], y: &[f64], w: f64) -> f64 {
    let mut re = 1.0;
    let mut im = 0.0;
    for (&wl, &yl) in omega.iter().zip(y) {
        let d = wl * wl + w * w;
        re -= yl * wl * wl / d;
        im += yl * wl * w / d;
    }
    re / im
}

fn fit_weights(omega: &[f64], fit_freqs: &[f64], q: f64) -> Vec<f64> {
    let qinv = 1.0 / q;
    let a = DMatrix::from_fn(fit_freqs.len(), omega.len(), |k, l| {
        let (wl, wk) = (omega[l], fit_freqs[k]);
        (wl * wk + wl * wl * qinv) / (wl * wl + wk * wk)
    });
    let b = DVector::from_element(fit_freqs.len(), qinv);
    let svd = a.svd(true, true);
    svd.solve(&b, 1e-14).expect("SVD computed with U and V").iter().copied().collect()
}

const FIT_SAMPLES: usize = 40;

/// Fits `m` relaxation mechanisms to constant quality factors over the band
/// `[center/10, center*10]` by linear least squares over log-spaced
/// frequencies in that band.
pub fn fit_relaxation(qp: f64, qs: f64, center_freq: f64, m: usize) -> Result<RelaxationSet, EquationsError> {
    if m == 0 {
        return Err(EquationsError::InvalidRelaxation("at least one mechanism required".into()));
    }
    if !(qp.is_finite() && qs.is_finite() && qp > 0.0 && qs > 0.0) {
        return Err(EquationsError::InvalidRelaxation(format!("quality factors ({qp}, {qs}) must be finite and positive")));
    }
    if !(center_freq > 0.0 && center_freq.is_finite()) {
        return Err(EquationsError::InvalidRelaxation(format!("center frequency {center_freq} must be positive")));
    }
    let lo = 2.0 * PI * center_freq / 10.0;
    let hi = 2.0 * PI * center_freq * 10.0;
    let omega = log_spaced(lo, hi, m);
    // A single mechanism is matched exactly at its own frequency.
    let fit_freqs = if m == 1 { omega.clone() } else { log_spaced(lo, hi, FIT_SAMPLES) };
    // Two decades support roughly two mechanisms per decade before the
    // least-squares system becomes ill-conditioned.
    let warning = (m > 8).then(|| format!("{m} mechanisms over two decades: over-determined fit, weights may be ill-conditioned"));
    Ok(RelaxationSet {
        weight_p: fit_weights(&omega, &fit_freqs, qp),
        weight_s: fit_weights(&omega, &fit_freqs, qs),
        omega,
        warning,
    })
}

/// Relaxation set of one material: mechanisms at the shared frequencies,
/// weights fitted to its quality factors; an infinite `Q` gets zero weights.
pub fn relaxation_for(mat: &Material, center_freq: f64, m: usize) -> Result<RelaxationSet, EquationsError> {
    if m == 0 {
        return Ok(RelaxationSet::elastic());
    }
    let finite = |q: f64| if q.is_finite() { q } else { 1.0 };
    let mut set = fit_relaxation(finite(mat.qp), finite(mat.qs), center_freq, m)?;
    if !mat.qp.is_finite() {
        set.weight_p.iter_mut().for_each(|w| *w = 0.0);
    }
    if !mat.qs.is_finite() {
        set.weight_s.iter_mut().for_each(|w| *w = 0.0);
    }
    Ok(set)
}

/// Jacobian blocks of one material.
#[derive(Clone, Debug)]
pub struct JacobianSet {
    /// `A^e, B^e, C^e` (9x9).
    pub elastic: [Mat; 3],
    /// `A^a, B^a, C^a` (6x9), relaxation frequency factored out.
    pub anelastic: [Mat; 3],
    /// `E^l` (9x6) per mechanism.
    pub coupling: Vec<Mat>,
    /// Diagonal of `E'`: `-omega_l` repeated for each memory variable.
    pub coupling_diag: Vec<f64>,
    /// Relaxation frequencies, kept to reconstruct the full Jacobians.
    pub omega: Vec<f64>,
}

impl JacobianSet {
    pub fn mechanisms(&self) -> usize {
        self.coupling.len()
    }

    /// Full `N^q x N^q` Jacobian for direction `dir`.
    pub fn full_jacobian(&self, dir: usize) -> Mat {
        let nq = n_quantities(self.mechanisms());
        let mut m = Mat::zeros(nq, nq);
        for r in 0..9 {
            for c in 0..9 {
                m[(r, c)] = self.elastic[dir][(r, c)];
            }
        }
        for (l, &w) in self.omega.iter().enumerate() {
            for r in 0..6 {
                for c in 0..9 {
                    m[(9 + 6 * l + r, c)] = w * self.anelastic[dir][(r, c)];
                }
            }
        }
        m
    }

    /// Full `N^q x N^q` reactive source matrix.
    pub fn full_source(&self) -> Mat {
        let nq = n_quantities(self.mechanisms());
        let mut m = Mat::zeros(nq, nq);
        for (l, e) in self.coupling.iter().enumerate() {
            for r in 0..9 {
                for c in 0..6 {
                    m[(r, 9 + 6 * l + c)] = e[(r, c)];
                }
            }
        }
        for (i, &d) in self.coupling_diag.iter().enumerate() {
            m[(9 + i, 9 + i)] = d;
        }
        m
    }

    /// Elastic face-normal Jacobian `n_x A + n_y B + n_z C`.
    pub fn normal_elastic(&self, n: [f64; 3]) -> Mat {
        combine(&self.elastic, n)
    }

    pub fn normal_anelastic(&self, n: [f64; 3]) -> Mat {
        combine(&self.anelastic, n)
    }
}

fn combine(mats: &[Mat; 3], coef: [f64; 3]) -> Mat {
    mats[0].scaled(coef[0]).add(&mats[1].scaled(coef[1])).add(&mats[2].scaled(coef[2]))
}

// Voigt indices of the stress/strain tensor components.
const SXX: usize = 0;
const SYY: usize = 1;
const SZZ: usize = 2;
const SXY: usize = 3;
const SYZ: usize = 4;
const SXZ: usize = 5;
const U: usize = 6;
const V: usize = 7;
const W: usize = 8;

pub fn build_jacobians(mat: &Material, relax: &RelaxationSet) -> Result<JacobianSet, EquationsError> {
    mat.validate()?;
    relax.validate()?;
    let (rho, lam, mu) = (mat.rho, mat.lam, mat.mu);
    let lam2mu = lam + 2.0 * mu;

    let mut a = Mat::zeros(9, 9);
    a[(SXX, U)] = -lam2mu;
    a[(SYY, U)] = -lam;
    a[(SZZ, U)] = -lam;
    a[(SXY, V)] = -mu;
    a[(SXZ, W)] = -mu;
    a[(U, SXX)] = -1.0 / rho;
    a[(V, SXY)] = -1.0 / rho;
    a[(W, SXZ)] = -1.0 / rho;

    let mut b = Mat::zeros(9, 9);
    b[(SXX, V)] = -lam;
    b[(SYY, V)] = -lam2mu;
    b[(SZZ, V)] = -lam;
    b[(SXY, U)] = -mu;
    b[(SYZ, W)] = -mu;
    b[(U, SXY)] = -1.0 / rho;
    b[(V, SYY)] = -1.0 / rho;
    b[(W, SYZ)] = -1.0 / rho;

    let mut c = Mat::zeros(9, 9);
    c[(SXX, W)] = -lam;
    c[(SYY, W)] = -lam;
    c[(SZZ, W)] = -lam2mu;
    c[(SYZ, V)] = -mu;
    c[(SXZ, U)] = -mu;
    c[(U, SXZ)] = -1.0 / rho;
    c[(V, SYZ)] = -1.0 / rho;
    c[(W, SZZ)] = -1.0 / rho;

    // Strain-rate operators: theta_t + omega * (A^a q_x + ...) = -omega * theta.
    let mut aa = Mat::zeros(6, 9);
    aa[(SXX, U)] = -1.0;
    aa[(SXY, V)] = -0.5;
    aa[(SXZ, W)] = -0.5;
    let mut ba = Mat::zeros(6, 9);
    ba[(SYY, V)] = -1.0;
    ba[(SXY, U)] = -0.5;
    ba[(SYZ, W)] = -0.5;
    let mut ca = Mat::zeros(6, 9);
    ca[(SZZ, W)] = -1.0;
    ca[(SYZ, V)] = -0.5;
    ca[(SXZ, U)] = -0.5;

    let mut coupling = Vec::with_capacity(relax.mechanisms());
    let mut coupling_diag = Vec::with_capacity(6 * relax.mechanisms());
    for l in 0..relax.mechanisms() {
        // lam * Y^lambda and mu * Y^mu from the P- and S-modulus weights.
        let lam_y = lam2mu * relax.weight_p[l] - 2.0 * mu * relax.weight_s[l];
        let mu_y = mu * relax.weight_s[l];
        let mut e = Mat::zeros(9, 6);
        for i in 0..3 {
            for j in 0..3 {
                e[(i, j)] = -lam_y - if i == j { 2.0 * mu_y } else { 0.0 };
            }
        }
        e[(SXY, SXY)] = -2.0 * mu_y;
        e[(SYZ, SYZ)] = -2.0 * mu_y;
        e[(SXZ, SXZ)] = -2.0 * mu_y;
        coupling.push(e);
        coupling_diag.extend(std::iter::repeat(-relax.omega[l]).take(6));
    }

    Ok(JacobianSet {
        elastic: [a, b, c],
        anelastic: [aa, ba, ca],
        coupling,
        coupling_diag,
        omega: relax.omega.clone(),
    })
}

/// Boundary or neighbor condition of one element face.
#[derive(Clone, Copy, Debug)]
pub enum FaceCondition<'a> {
    Neighbor(&'a Material),
    FreeSurface,
    Outflow,
}

/// Element-local operators of one tetrahedron.
#[derive(Clone, Debug)]
pub struct ElementOperators {
    /// `sum_d (J^-1)_{c,d} A^e_d` for `c = 0..3` (9x9).
    pub star_e: [Mat; 3],
    /// Anelastic counterpart (6x9).
    pub star_a: [Mat; 3],
    /// `E^l` of the element material (9x6).
    pub coupling: Vec<Mat>,
    pub omega: Vec<f64>,
    /// Flux solvers acting on the element's own trace (9x9).
    pub flux_e_minus: [Mat; 4],
    /// Flux solvers acting on the neighbor's trace (9x9).
    pub flux_e_plus: [Mat; 4],
    pub flux_a_minus: [Mat; 4],
    pub flux_a_plus: [Mat; 4],
}

impl ElementOperators {
    pub fn mechanisms(&self) -> usize {
        self.omega.len()
    }
}

/// 9x9 map from face-aligned state to physical state for the orthonormal
/// frame `R = [n s t]` (columns).
fn rotation(r: [[f64; 3]; 3]) -> Mat {
    // r[row][col] with columns n, s, t.
    let mut out = Mat::zeros(9, 9);
    let voigt = [(0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (0, 2)];
    for (col, &(p, q)) in voigt.iter().enumerate() {
        // Symmetric unit tensor in the face frame.
        let mut sf = [[0.0; 3]; 3];
        sf[p][q] = 1.0;
        sf[q][p] = 1.0;
        for (row, &(i, j)) in voigt.iter().enumerate() {
            let mut v = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    v += r[i][a] * sf[a][b] * r[j][b];
                }
            }
            out[(row, col)] = v;
        }
    }
    for a in 0..3 {
        for i in 0..3 {
            out[(6 + i, 6 + a)] = r[i][a];
        }
    }
    out
}

fn frame(n: [f64; 3], s: [f64; 3], t: [f64; 3]) -> [[f64; 3]; 3] {
    [[n[0], s[0], t[0]], [n[1], s[1], t[1]], [n[2], s[2], t[2]]]
}

fn transpose3(r: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| r[j][i]))
}

/// Godunov interface state on the minus side in the face-aligned frame:
/// `q* = S_minus q_minus + S_plus q_plus`.
pub fn star_state_face_frame(minus: &Material, plus: &Material) -> (Mat, Mat) {
    let mut sm = Mat::identity(9);
    let mut sp = Mat::zeros(9, 9);

    let zp_m = minus.p_impedance();
    let zp_p = plus.p_impedance();
    // alpha_p = (sxx+ - sxx- + Zp+ (u+ - u-)) / (Zp- + Zp+)
    let inv = 1.0 / (zp_m + zp_p);
    let mut alpha_m = [0.0; 9];
    let mut alpha_p = [0.0; 9];
    alpha_m[SXX] = -inv;
    alpha_m[U] = -zp_p * inv;
    alpha_p[SXX] = inv;
    alpha_p[U] = zp_p * inv;
    let lam_over_vp = minus.lam / minus.vp;
    for c in 0..9 {
        sm[(SXX, c)] += zp_m * alpha_m[c];
        sp[(SXX, c)] += zp_m * alpha_p[c];
        sm[(SYY, c)] += lam_over_vp * alpha_m[c];
        sp[(SYY, c)] += lam_over_vp * alpha_p[c];
        sm[(SZZ, c)] += lam_over_vp * alpha_m[c];
        sp[(SZZ, c)] += lam_over_vp * alpha_p[c];
        sm[(U, c)] += alpha_m[c];
        sp[(U, c)] += alpha_p[c];
    }

    let zs_m = minus.s_impedance();
    let zs_p = plus.s_impedance();
    if zs_m + zs_p > 0.0 {
        let inv = 1.0 / (zs_m + zs_p);
        for (stress, vel) in [(SXY, V), (SXZ, W)] {
            let mut am = [0.0; 9];
            let mut ap = [0.0; 9];
            am[stress] = -inv;
            am[vel] = -zs_p * inv;
            ap[stress] = inv;
            ap[vel] = zs_p * inv;
            for c in 0..9 {
                sm[(stress, c)] += zs_m * am[c];
                sp[(stress, c)] += zs_m * ap[c];
                sm[(vel, c)] += am[c];
                sp[(vel, c)] += ap[c];
            }
        }
    }
    (sm, sp)
}

/// Physical-frame maps from the two traces to the Godunov state seen by the
/// minus side, including boundary conditions.
pub fn interface_state_maps(
    minus: &Material,
    cond: FaceCondition<'_>,
    normal: [f64; 3],
    tangent_s: [f64; 3],
    tangent_t: [f64; 3],
) -> (Mat, Mat) {
    let r = frame(normal, tangent_s, tangent_t);
    let to_phys = rotation(r);
    let to_face = rotation(transpose3(r));
    let lift = |m: &Mat| to_phys.matmul(m).matmul(&to_face);
    match cond {
        FaceCondition::Neighbor(plus) => {
            let (sm, sp) = star_state_face_frame(minus, plus);
            (lift(&sm), lift(&sp))
        }
        FaceCondition::FreeSurface => {
            let (sm, sp) = star_state_face_frame(minus, minus);
            // Mirror state: normal tractions flipped, velocities kept.
            let mut mirror = Mat::identity(9);
            mirror[(SXX, SXX)] = -1.0;
            mirror[(SXY, SXY)] = -1.0;
            mirror[(SXZ, SXZ)] = -1.0;
            (lift(&sm.add(&sp.matmul(&mirror))), Mat::zeros(9, 9))
        }
        FaceCondition::Outflow => {
            let (sm, _) = star_state_face_frame(minus, minus);
            (lift(&sm), Mat::zeros(9, 9))
        }
    }
}

pub fn build_element_operators(
    geom: &ElementGeometry,
    mat: &Material,
    relax: &RelaxationSet,
    faces: [FaceCondition<'_>; 4],
) -> Result<ElementOperators, EquationsError> {
    if !(geom.volume > 0.0 && geom.volume.is_finite()) {
        return Err(EquationsError::Geometry(format!("non-positive volume {}", geom.volume)));
    }
    let jac = build_jacobians(mat, relax)?;
    let star_e = std::array::from_fn(|c| combine(&jac.elastic, geom.jac_inv[c]));
    let star_a = std::array::from_fn(|c| combine(&jac.anelastic, geom.jac_inv[c]));

    let mut flux_e_minus: [Mat; 4] = std::array::from_fn(|_| Mat::zeros(9, 9));
    let mut flux_e_plus: [Mat; 4] = std::array::from_fn(|_| Mat::zeros(9, 9));
    let mut flux_a_minus: [Mat; 4] = std::array::from_fn(|_| Mat::zeros(6, 9));
    let mut flux_a_plus: [Mat; 4] = std::array::from_fn(|_| Mat::zeros(6, 9));
    for (i, cond) in faces.iter().enumerate() {
        let n = geom.face_normal[i];
        let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(EquationsError::Geometry(format!("face {i} normal has length {norm}")));
        }
        let (sm, sp) = interface_state_maps(mat, *cond, n, geom.face_tangents[i][0], geom.face_tangents[i][1]);
        // Surface integral over the face, divided by the element mass scale.
        let scale = -geom.face_area[i] / (3.0 * geom.volume);
        let an_e = jac.normal_elastic(n).scaled(scale);
        let an_a = jac.normal_anelastic(n).scaled(scale);
        flux_e_minus[i] = an_e.matmul(&sm);
        flux_e_plus[i] = an_e.matmul(&sp);
        flux_a_minus[i] = an_a.matmul(&sm);
        flux_a_plus[i] = an_a.matmul(&sp);
    }

    Ok(ElementOperators {
        star_e,
        star_a,
        coupling: jac.coupling,
        omega: relax.omega.clone(),
        flux_e_minus,
        flux_e_plus,
        flux_a_minus,
        flux_a_plus,
    })
}
