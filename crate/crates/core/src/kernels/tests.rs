use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::basis::{assemble_reference_matrices, Basis};
use crate::dense::Mat;
use crate::equations::{build_element_operators, build_jacobians, fit_relaxation, FaceCondition, Material, RelaxationSet};
use crate::mesh::ElementGeometry;

struct Setup {
    shape: Shape,
    basis: Basis,
    mats: ReferenceMatrices,
    ops: ElementOperators,
    geom: ElementGeometry,
    relax: RelaxationSet,
    material: Material,
}

fn material() -> Material {
    Material::from_velocities(1.2, 2.0, 1.1, 40.0, 20.0).unwrap()
}

fn setup(order: usize, m: usize, width: usize) -> Setup {
    let geom = ElementGeometry::new([[0.1, 0.0, 0.2], [1.1, 0.1, 0.0], [0.2, 0.9, 0.1], [0.0, 0.3, 1.2]]).unwrap();
    let material = material();
    let relax = if m == 0 { RelaxationSet::elastic() } else { fit_relaxation(40.0, 20.0, 1.0, m).unwrap() };
    let other = Material::elastic(1.0, 1.5, 0.9).unwrap();
    let faces = [
        FaceCondition::Neighbor(&material),
        FaceCondition::Neighbor(&other),
        FaceCondition::FreeSurface,
        FaceCondition::Outflow,
    ];
    let ops = build_element_operators(&geom, &material, &relax, faces).unwrap();
    let basis = Basis::new(order).unwrap();
    let mats = assemble_reference_matrices(&basis).unwrap();
    let shape = Shape::new(order, basis.nb(), basis.nf(), m, width);
    Setup { shape, basis, mats, ops, geom, relax, material }
}

fn random(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn as_mat(v: &[f64], rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |r, c| v[r * cols + c])
}

fn rows(m: &Mat, from: usize, count: usize) -> Mat {
    Mat::from_fn(count, m.cols(), |r, c| m[(from + r, c)])
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    let scale = b.iter().fold(1e-300_f64, |m, v| m.max(v.abs()));
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol * scale, "entry {i}: {x} vs {y} (scale {scale})");
    }
}

fn ops_f64(s: &Setup, sparsity: Sparsity) -> (RefOps<f64>, ElemOps<f64>) {
    (RefOps::new(&s.mats, sparsity), ElemOps::new(&s.ops, [true, true, false, false], sparsity))
}

#[test]
fn zero_state_gives_zero_derivatives() {
    let s = setup(3, 2, 1);
    let (r, e) = ops_f64(&s, Sparsity::Block);
    let mut d = DerivativeStack::new(&s.shape);
    let mut ws = Workspace::new(&s.shape);
    ck_derivatives(&s.shape, &r, &e, &vec![0.0; s.shape.dofs_len()], &mut d, &mut ws);
    for j in 0..3 {
        assert!(d.get(j).iter().all(|&v| v == 0.0));
    }
}

#[test]
fn first_derivative_matches_pde_on_polynomial() {
    for order in [2, 3] {
        let s = setup(order, 0, 1);
        let (r, e) = ops_f64(&s, Sparsity::Block);
        let nb = s.shape.nb;
        let q = random(s.shape.dofs_len(), 7);
        let mut d = DerivativeStack::new(&s.shape);
        let mut ws = Workspace::new(&s.shape);
        ck_derivatives(&s.shape, &r, &e, &q, &mut d, &mut ws);
        let jac = build_jacobians(&s.material, &s.relax).unwrap();
        for xi in [[0.1, 0.2, 0.3], [0.25, 0.25, 0.25], [0.6, 0.1, 0.05]] {
            let grad = s.basis.eval_grad(xi);
            let phi = s.basis.eval(xi);
            // Physical gradient of each quantity.
            let mut dq = [[0.0; 9]; 3];
            for p in 0..9 {
                for b in 0..nb {
                    for dir in 0..3 {
                        let g: f64 = (0..3).map(|c| s.geom.jac_inv[c][dir] * grad[b][c]).sum();
                        dq[dir][p] += q[p * nb + b] * g;
                    }
                }
            }
            for p in 0..9 {
                let expect: f64 = -(0..3).map(|dir| (0..9).map(|c| jac.elastic[dir][(p, c)] * dq[dir][c]).sum::<f64>()).sum::<f64>();
                let got: f64 = (0..nb).map(|b| d.get(1)[p * nb + b] * phi[b]).sum();
                assert!((got - expect).abs() < 1e-10 * (1.0 + expect.abs()), "O={order} p={p}: {got} vs {expect}");
            }
        }
    }
}

#[test]
fn anelastic_first_derivative() {
    let s = setup(3, 1, 1);
    let (r, e) = ops_f64(&s, Sparsity::Block);
    let nb = s.shape.nb;
    let q = random(s.shape.dofs_len(), 3);
    let mut d = DerivativeStack::new(&s.shape);
    let mut ws = Workspace::new(&s.shape);
    ck_derivatives(&s.shape, &r, &e, &q, &mut d, &mut ws);
    let qm = as_mat(&q, 15, nb);
    let qe = rows(&qm, 0, 9);
    let qa = rows(&qm, 9, 6);
    let mut y = Mat::zeros(6, nb);
    for c in 0..3 {
        y = y.add(&s.ops.star_a[c].matmul(&qe.matmul(&s.mats.stiffness_t[c])));
    }
    let w = s.relax.omega[0];
    let expect = y.scaled(-w).add(&qa.scaled(-w));
    assert_close(&d.get(1)[9 * nb..], expect.as_slice(), 1e-12);
}

#[test]
fn taylor_edge_cases() {
    let s = setup(1, 0, 1);
    let mut d = DerivativeStack::new(&s.shape);
    d.get_mut(0).copy_from_slice(&random(s.shape.dofs_len(), 1));
    let mut out = vec![1.0; s.shape.dofs_len()];
    taylor_integrate(&d, 0.0, &mut out);
    assert!(out.iter().all(|&v| v == 0.0));
    taylor_integrate(&d, 0.3, &mut out);
    let expect: Vec<f64> = d.get(0).iter().map(|v| 0.3 * v).collect();
    assert_eq!(out, expect);
}

#[test]
fn taylor_integral_is_additive_under_reexpansion() {
    let s = setup(5, 1, 1);
    let mut d = DerivativeStack::new(&s.shape);
    for j in 0..5 {
        d.get_mut(j).copy_from_slice(&random(s.shape.dofs_len(), 10 + j as u64));
    }
    let dt = 0.37;
    let n = s.shape.dofs_len();
    let (mut full, mut first, mut second) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    taylor_integrate(&d, dt, &mut full);
    taylor_integrate(&d, dt / 2.0, &mut first);
    taylor_integrate(&d.shifted(dt / 2.0), dt / 2.0, &mut second);
    let sum: Vec<f64> = first.iter().zip(&second).map(|(a, b)| a + b).collect();
    assert_close(&sum, &full, 1e-14);
}

#[test]
fn volume_matches_dense_oracle() {
    let s = setup(3, 1, 1);
    let (r, e) = ops_f64(&s, Sparsity::Full);
    let nb = s.shape.nb;
    let t = random(s.shape.dofs_len(), 21);
    let mut out = vec![0.0; t.len()];
    let mut ws = Workspace::new(&s.shape);
    volume_kernel(&s.shape, &r, &e, &t, &mut out, &mut ws);

    let tm = as_mat(&t, 15, nb);
    let te = rows(&tm, 0, 9);
    let ta = rows(&tm, 9, 6);
    let mut ve = s.ops.coupling[0].matmul(&ta);
    let mut y = Mat::zeros(6, nb);
    for c in 0..3 {
        let x = te.matmul(&s.mats.stiffness[c]);
        ve = ve.add(&s.ops.star_e[c].matmul(&x));
        y = y.add(&s.ops.star_a[c].matmul(&x));
    }
    let w = s.relax.omega[0];
    let va = y.add(&ta.scaled(-1.0)).scaled(w);
    assert_close(&out[..9 * nb], ve.as_slice(), 1e-12);
    assert_close(&out[9 * nb..], va.as_slice(), 1e-12);
}

#[test]
fn surfaces_match_dense_oracle() {
    let s = setup(3, 2, 1);
    let (r, e) = ops_f64(&s, Sparsity::Block);
    let nb = s.shape.nb;
    let nf = s.shape.nf;
    let t = random(s.shape.dofs_len(), 5);
    let neigh = random(9 * nb, 6);
    let mut ws = Workspace::new(&s.shape);

    let mut local = vec![0.0; t.len()];
    surface_local(&s.shape, &r, &e, &t, &mut local, &mut ws);
    let payloads: Vec<Vec<f64>> = (0..4)
        .map(|i| {
            let mut p = vec![0.0; 9 * nf];
            neighbor_payload(&s.shape, &r, &neigh, (i + 1) % 4, i % 3, &mut p);
            p
        })
        .collect();
    let mut nbr = vec![0.0; t.len()];
    let refs: [Option<&[f64]>; 4] = std::array::from_fn(|i| Some(payloads[i].as_slice()));
    surface_neighbor(&s.shape, &r, &e, refs, &mut nbr, &mut ws).unwrap();

    let te = rows(&as_mat(&t, 21, nb), 0, 9);
    let ne = as_mat(&neigh, 9, nb);
    let mut le = Mat::zeros(9, nb);
    let mut la = Mat::zeros(6, nb);
    let mut pe = Mat::zeros(9, nb);
    let mut pa = Mat::zeros(6, nb);
    for i in 0..4 {
        let fl = te.matmul(&s.mats.flux_local[i]);
        assert_close(&ws.face_products[i], fl.as_slice(), 1e-14);
        le = le.add(&s.ops.flux_e_minus[i].matmul(&fl).matmul(&s.mats.flux_local_t[i]));
        la = la.add(&s.ops.flux_a_minus[i].matmul(&fl).matmul(&s.mats.flux_local_t[i]));
        if i < 2 {
            let fb = ne.matmul(s.mats.fbar((i + 1) % 4, i % 3));
            pe = pe.add(&s.ops.flux_e_plus[i].matmul(&fb).matmul(&s.mats.flux_local_t[i]));
            pa = pa.add(&s.ops.flux_a_plus[i].matmul(&fb).matmul(&s.mats.flux_local_t[i]));
        }
    }
    assert_close(&local[..9 * nb], le.as_slice(), 1e-12);
    assert_close(&nbr[..9 * nb], pe.as_slice(), 1e-12);
    for l in 0..2 {
        let w = s.relax.omega[l];
        assert_close(&local[(9 + 6 * l) * nb..(15 + 6 * l) * nb], la.scaled(w).as_slice(), 1e-12);
        assert_close(&nbr[(9 + 6 * l) * nb..(15 + 6 * l) * nb], pa.scaled(w).as_slice(), 1e-12);
    }
}

#[test]
fn missing_interior_payload_is_an_error() {
    let s = setup(2, 0, 1);
    let (r, e) = ops_f64(&s, Sparsity::Block);
    let mut out = vec![0.0; s.shape.dofs_len()];
    let mut ws = Workspace::new(&s.shape);
    let p = vec![0.0; s.shape.payload_len()];
    let err = surface_neighbor(&s.shape, &r, &e, [Some(&p), None, None, None], &mut out, &mut ws).unwrap_err();
    assert_eq!(err, KernelError::MissingPayload(1));
    // Boundary faces need nothing.
    surface_neighbor(&s.shape, &r, &e, [Some(&p), Some(&p), None, None], &mut out, &mut ws).unwrap();
    assert!(out.iter().all(|&v| v == 0.0));
}

#[test]
fn sparsity_modes_agree() {
    let s = setup(4, 1, 1);
    let q = random(s.shape.dofs_len(), 77);
    let mut results = Vec::new();
    for sp in [Sparsity::Block, Sparsity::Full] {
        let (r, e) = ops_f64(&s, sp);
        let mut d = DerivativeStack::new(&s.shape);
        let mut ws = Workspace::new(&s.shape);
        ck_derivatives(&s.shape, &r, &e, &q, &mut d, &mut ws);
        let mut t = vec![0.0; q.len()];
        taylor_integrate(&d, 0.1, &mut t);
        let mut out = vec![0.0; q.len()];
        volume_kernel(&s.shape, &r, &e, &t, &mut out, &mut ws);
        surface_local(&s.shape, &r, &e, &t, &mut out, &mut ws);
        results.push(out);
    }
    assert_close(&results[0], &results[1], 1e-14);
}

fn run_pipeline<R: Real>(shape: &Shape, r: &RefOps<R>, e: &ElemOps<R>, q: &[R], nb_payload: &[R]) -> Vec<R> {
    let mut d = DerivativeStack::new(shape);
    let mut ws = Workspace::new(shape);
    ck_derivatives(shape, r, e, q, &mut d, &mut ws);
    let mut t = vec![R::zero(); q.len()];
    taylor_integrate(&d, 0.05, &mut t);
    let mut out = vec![R::zero(); q.len()];
    volume_kernel(shape, r, e, &t, &mut out, &mut ws);
    surface_local(shape, r, e, &t, &mut out, &mut ws);
    let p = [Some(nb_payload), Some(nb_payload), None, None];
    surface_neighbor(shape, r, e, p, &mut out, &mut ws).unwrap();
    out
}

#[test]
fn kernels_are_linear_in_single_precision() {
    let s = setup(3, 1, 1);
    let r: RefOps<f32> = RefOps::new(&s.mats, Sparsity::Block);
    let e: ElemOps<f32> = ElemOps::new(&s.ops, [true, true, false, false], Sparsity::Block);
    let to32 = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect::<Vec<f32>>();
    let x = to32(random(s.shape.dofs_len(), 1));
    let y = to32(random(s.shape.dofs_len(), 2));
    let px = to32(random(s.shape.payload_len(), 3));
    let py = to32(random(s.shape.payload_len(), 4));
    let (a, b) = (0.7_f32, -1.3_f32);
    let comb = |u: &[f32], v: &[f32]| u.iter().zip(v).map(|(p, q)| a * p + b * q).collect::<Vec<f32>>();
    let lhs = run_pipeline(&s.shape, &r, &e, &comb(&x, &y), &comb(&px, &py));
    let rhs = comb(&run_pipeline(&s.shape, &r, &e, &x, &px), &run_pipeline(&s.shape, &r, &e, &y, &py));
    let norm = rhs.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
    let diff = lhs.iter().zip(&rhs).map(|(p, q)| ((p - q) as f64).powi(2)).sum::<f64>().sqrt();
    assert!(diff <= 1e-6 * norm, "relative deviation {}", diff / norm);
}

#[test]
fn fused_slots_match_unfused_runs() {
    let w = 4;
    let s1 = setup(3, 1, 1);
    let sw = setup(3, 1, w);
    let (r, e) = ops_f64(&sw, Sparsity::Full);
    let (r1, e1) = ops_f64(&s1, Sparsity::Block);
    let slots: Vec<Vec<f64>> = (0..w).map(|k| random(s1.shape.dofs_len(), 100 + k as u64)).collect();
    let pays: Vec<Vec<f64>> = (0..w).map(|k| random(s1.shape.payload_len(), 200 + k as u64)).collect();
    let interleave = |v: &[Vec<f64>]| {
        let n = v[0].len();
        let mut out = vec![0.0; n * w];
        for (k, slot) in v.iter().enumerate() {
            for i in 0..n {
                out[i * w + k] = slot[i];
            }
        }
        out
    };
    let fused = run_pipeline(&sw.shape, &r, &e, &interleave(&slots), &interleave(&pays));
    for k in 0..w {
        let single = run_pipeline(&s1.shape, &r1, &e1, &slots[k], &pays[k]);
        let slot: Vec<f64> = (0..single.len()).map(|i| fused[i * w + k]).collect();
        assert_close(&slot, &single, 1e-12);
    }
    // Identical inputs give bitwise identical slots.
    let same = run_pipeline(&sw.shape, &r, &e, &interleave(&vec![slots[0].clone(); w]), &interleave(&vec![pays[0].clone(); w]));
    for i in 0..same.len() / w {
        for k in 1..w {
            assert_eq!(same[i * w].to_bits(), same[i * w + k].to_bits());
        }
    }
}

#[test]
fn derivatives_do_not_raise_modal_degree() {
    let s = setup(5, 1, 1);
    let (r, e) = ops_f64(&s, Sparsity::Block);
    let nb = s.shape.nb;
    let p = 2;
    let mut q = random(s.shape.dofs_len(), 9);
    for var in 0..15 {
        for b in 0..nb {
            if s.basis.mode_degree[b] > p {
                q[var * nb + b] = 0.0;
            }
        }
    }
    let mut d = DerivativeStack::new(&s.shape);
    let mut ws = Workspace::new(&s.shape);
    ck_derivatives(&s.shape, &r, &e, &q, &mut d, &mut ws);
    for j in 0..5 {
        let scale = d.get(j).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for var in 0..15 {
            for b in 0..nb {
                if s.basis.mode_degree[b] > p {
                    assert!(d.get(j)[var * nb + b].abs() <= 1e-12 * scale.max(1.0));
                }
            }
        }
    }
}
