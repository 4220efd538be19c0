use super::*;
use crate::lts::{assign_clusters, cfl_timesteps, normalize_clusters, Clustering};
use crate::mesh::generate::{box_mesh, BoxSpec};
use crate::mesh::{FaceAdjacency, TetMesh};
use crate::partition::transport::InProcess;
use crate::partition::{build_dual_graph, build_partitions, GreedyPartitioner, Partitioner, PlanParams};

fn unit_material() -> Material {
    // rho = 1, lambda = mu = 1.
    Material::from_velocities(1.0, 3f64.sqrt(), 1.0, f64::INFINITY, f64::INFINITY).unwrap()
}

struct Setup {
    mesh: TetMesh,
    adj: FaceAdjacency,
    clustering: Clustering,
}

fn setup(mesh: TetMesh, order: usize, nc: usize, lambda: f64) -> Setup {
    let adj = mesh.build_adjacency().unwrap();
    let geom = mesh.compute_geometry();
    let ts = cfl_timesteps(&geom, &mesh.materials, order, 0.5).unwrap();
    let mut clustering = assign_clusters(&ts, nc, lambda).unwrap();
    normalize_clusters(&mut clustering, &adj);
    Setup { mesh, adj, clustering }
}

fn partitions(s: &Setup, parts: usize, order: usize, bits: u32, width: usize, m: usize) -> Vec<PartitionData> {
    let part = if parts == 1 {
        vec![0; s.mesh.len()]
    } else {
        let g = build_dual_graph(&s.clustering, &s.adj, 1);
        GreedyPartitioner.partition(&g, parts).unwrap()
    };
    let params = PlanParams { order, precision_bits: bits, width, mechanisms: m, center_freq: 1.0 };
    build_partitions(&s.mesh, &s.adj, &s.clustering, &part, parts, &params).unwrap()
}

fn serial(t_end: f64) -> SolverOptions {
    SolverOptions { parallel: false, samples: 20, ..SolverOptions::new(t_end) }
}

fn wave() -> PlaneWave {
    plane_wave(&unit_material(), [1.0, 1.0, 0.0], WaveKind::P, [0.0; 3])
}

/// Wavenumber of the (1, 1, 0) wave that is periodic on the unit cube.
const K: f64 = 2.0 * std::f64::consts::PI * std::f64::consts::SQRT_2;

#[test]
fn constant_state_is_preserved() {
    let mesh = box_mesh(&BoxSpec::periodic_cube(3, 1.0), |_| unit_material()).unwrap();
    let s = setup(mesh, 3, 1, 1.0);
    let data = partitions(&s, 1, 3, 64, 1, 0);
    let mut solver = Solver::<f64>::new(&data[0], serial(0.1)).unwrap();
    let c = [0.3, -0.2, 0.1, 0.05, 0.0, -0.4, 1.0, 2.0, -3.0];
    solver.set_initial(|_, _| c);
    let before: Vec<Vec<f64>> = (0..solver.len()).map(|k| solver.state(k).to_vec()).collect();
    solver.add_receiver(0, [0.5, 0.5, 0.5], 0);
    solver.run(None, |_, _| {}).unwrap();
    for (k, b) in before.iter().enumerate() {
        for (x, y) in solver.state(k).iter().zip(b) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }
    let seis = &solver.seismograms()[0].1[0];
    assert_eq!(seis.samples.len(), 21);
    for s in &seis.samples {
        for (v, e) in s.iter().zip([1.0, 2.0, -3.0]) {
            assert!((v - e).abs() < 1e-12);
        }
    }
}

#[test]
fn lts_with_one_cluster_matches_lockstep_every_step() {
    let mesh = box_mesh(&BoxSpec::periodic_cube(3, 1.0), |_| unit_material()).unwrap();
    let s = setup(mesh, 3, 1, 1.0);
    let data = partitions(&s, 1, 3, 64, 1, 0);
    let w = wave();
    let mut gts = Solver::<f64>::new(&data[0], serial(0.2)).unwrap();
    gts.set_initial(|_, x| w.at(K, x, 0.0));
    let mut lts = Solver::<f64>::new(&data[0], serial(0.2)).unwrap();
    lts.set_initial(|_, x| w.at(K, x, 0.0));
    let mut trajectory = Vec::new();
    gts.run_gts(|_, s| trajectory.push((0..s.len()).flat_map(|k| s.state(k).to_vec()).collect::<Vec<_>>())).unwrap();
    let mut step = 0;
    lts.run(None, |_, s| {
        let now: Vec<f64> = (0..s.len()).flat_map(|k| s.state(k).to_vec()).collect();
        let scale = trajectory[step].iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let diff = now.iter().zip(&trajectory[step]).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        assert!(diff <= 1e-12 * scale, "step {step}: {diff}");
        step += 1;
    })
    .unwrap();
    assert_eq!(step, trajectory.len());
}

#[test]
fn plane_wave_error_is_small() {
    let mesh = box_mesh(&BoxSpec::periodic_cube(3, 1.0), |_| unit_material()).unwrap();
    let s = setup(mesh, 4, 1, 1.0);
    let data = partitions(&s, 1, 4, 64, 1, 0);
    let w = wave();
    let t_end = 0.1;
    let mut solver = Solver::<f64>::new(&data[0], serial(t_end)).unwrap();
    solver.set_initial(|_, x| w.at(K, x, 0.0));
    solver.run(None, |_, _| {}).unwrap();
    let (err, norm) = solver.l2_error(0, |x| w.at(K, x, t_end));
    assert!((err / norm).sqrt() < 0.05, "relative error {}", (err / norm).sqrt());
}

/// Periodic in y and z; wave speeds 2.5 times higher for x < 0.5.
fn contrast(n: usize) -> TetMesh {
    let spec = BoxSpec { periodic: [false, true, true], ..BoxSpec::cube(n, 1.0) };
    box_mesh(&spec, |c| {
        let m = unit_material();
        if c[0] < 0.5 {
            Material::from_velocities(1.0, 2.5 * m.vp, 2.5 * m.vs, f64::INFINITY, f64::INFINITY).unwrap()
        } else {
            m
        }
    })
    .unwrap()
}

/// Largest receiver misfit of a two-cluster run against lockstep stepping.
fn two_cluster_misfit(n: usize, order: usize) -> f64 {
    let s = setup(contrast(n), order, 2, 1.0);
    assert_eq!(s.clustering.used_clusters(), 2, "{:?}", s.clustering.counts());
    let one = Clustering { nc: 1, cluster: vec![0; s.mesh.len()], ..s.clustering.clone() };
    let gts_setup = Setup { mesh: s.mesh.clone(), adj: s.adj.clone(), clustering: one };
    let w = plane_wave(&unit_material(), [1.0, 0.0, 0.0], WaveKind::P, [0.0; 3]);
    let init = |_: usize, x: [f64; 3]| {
        let a = (-((x[0] - 0.4).powi(2)) / 0.01).exp();
        w.r.map(|r| r * a)
    };
    let t_end = 0.15;
    let run = |setup: &Setup, gts: bool| {
        let data = partitions(setup, 1, order, 64, 1, 0);
        let mut solver = Solver::<f64>::new(&data[0], serial(t_end)).unwrap();
        solver.set_initial(init);
        for (i, x) in [[0.3, 0.5, 0.5], [0.8, 0.2, 0.6]].iter().enumerate() {
            let k = solver.locate(*x).unwrap();
            solver.add_receiver(i, *x, solver.global_ids()[k]);
        }
        let stats = if gts { solver.run_gts(|_, _| {}).unwrap() } else { solver.run(None, |_, _| {}).unwrap() };
        (solver.seismograms(), stats)
    };
    let (reference, gts_stats) = run(&gts_setup, true);
    let (lts, lts_stats) = run(&s, false);
    assert!(lts_stats.element_updates < gts_stats.element_updates);
    lts.iter()
        .zip(&reference)
        .map(|((_, a), (_, b))| crate::source_receiver::channel_misfit(&a[0].channel(0), &b[0].channel(0)).unwrap())
        .fold(0.0, f64::max)
}

#[test]
fn two_cluster_run_tracks_lockstep() {
    let e = two_cluster_misfit(4, 3);
    assert!(e < 1e-2, "misfit {e}");
}

#[test]
fn partitioned_run_matches_single_address_space() {
    let s = setup(contrast(4), 2, 2, 1.0);
    let w = plane_wave(&unit_material(), [1.0, 0.0, 0.0], WaveKind::P, [0.0; 3]);
    let init = move |_: usize, x: [f64; 3]| w.r.map(|r| r * (-((x[0] - 0.4).powi(2)) / 0.01).exp());
    let t_end = 0.08;
    let single = {
        let data = partitions(&s, 1, 2, 64, 1, 0);
        let mut solver = Solver::<f64>::new(&data[0], serial(t_end)).unwrap();
        solver.set_initial(init);
        solver.run(None, |_, _| {}).unwrap();
        let mut out = vec![Vec::new(); s.mesh.len()];
        for k in 0..solver.len() {
            out[solver.global_ids()[k] as usize] = solver.state(k).to_vec();
        }
        out
    };
    let data = partitions(&s, 2, 2, 64, 1, 0);
    assert!(data.iter().all(|d| !d.ghosts.is_empty()));
    let mut endpoints = InProcess::mesh(2);
    let results: Vec<(Vec<(u64, Vec<f64>)>, RunStats)> = std::thread::scope(|scope| {
        let handles: Vec<_> = data
            .iter()
            .zip(endpoints.iter_mut())
            .map(|(d, ep)| {
                scope.spawn(move || {
                    let mut solver = Solver::<f64>::new(d, serial(t_end)).unwrap();
                    solver.set_initial(init);
                    let stats = solver.run(Some(ep), |_, _| {}).unwrap();
                    ((0..solver.len()).map(|k| (solver.global_ids()[k], solver.state(k).to_vec())).collect(), stats)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let sent: u64 = results.iter().map(|r| r.1.messages_sent).sum();
    let received: u64 = results.iter().map(|r| r.1.messages_received).sum();
    assert!(sent > 0);
    assert_eq!(sent, received);
    for (states, _) in &results {
        for (g, q) in states {
            let r = &single[*g as usize];
            let scale = r.iter().fold(1e-30f64, |a, v| a.max(v.abs()));
            for (x, y) in q.iter().zip(r) {
                assert!((x - y).abs() <= 1e-12 * scale, "element {g}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn precision_mismatch_is_a_version_error() {
    let mesh = box_mesh(&BoxSpec::cube(1, 1.0), |_| unit_material()).unwrap();
    let s = setup(mesh, 2, 1, 1.0);
    let data = partitions(&s, 1, 2, 64, 1, 0);
    assert!(matches!(Solver::<f32>::new(&data[0], serial(1.0)), Err(SolverError::Version(_))));
}

#[test]
fn plane_wave_is_an_eigenvector() {
    let m = Material::from_velocities(2.7, 6.0, 3.464, f64::INFINITY, f64::INFINITY).unwrap();
    let jac = crate::equations::build_jacobians(&m, &RelaxationSet::elastic()).unwrap();
    for (kind, pol) in [(WaveKind::P, [0.0; 3]), (WaveKind::S, [0.0, 0.0, 1.0]), (WaveKind::S, [1.0, -1.0, 0.3])] {
        let w = plane_wave(&m, [1.0, 2.0, -0.5], kind, pol);
        let an = jac.normal_elastic(w.n);
        let ar = an.matvec(&w.r);
        for (a, r) in ar.iter().zip(w.r) {
            assert!((a - w.speed * r).abs() < 1e-9 * m.p_impedance(), "{kind:?}: {a} vs {}", w.speed * r);
        }
    }
}

/// Exact solution of the elastic system for quadratic initial data.
struct Quadratic {
    g: [[f64; 9]; 3],
    h: [[[f64; 9]; 3]; 3],
    jac: crate::equations::JacobianSet,
}

impl Quadratic {
    fn new(seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut r = || rng.gen_range(-0.5..0.5);
        let g = std::array::from_fn(|_| std::array::from_fn(|_| r()));
        let h = std::array::from_fn(|_| std::array::from_fn(|_| std::array::from_fn(|_| r())));
        let jac = crate::equations::build_jacobians(&unit_material(), &RelaxationSet::elastic()).unwrap();
        Self { g, h, jac }
    }

    fn grad(&self, d: usize, x: [f64; 3]) -> Vec<f64> {
        (0..9).map(|r| self.g[d][r] + (0..3).map(|e| (self.h[d][e][r] + self.h[e][d][r]) * x[e]).sum::<f64>()).collect()
    }

    /// `q(t) = q0 - t L q0 + t^2/2 L^2 q0` with `L = sum_d A_d d/dx_d`.
    fn at(&self, x: [f64; 3], t: f64) -> [f64; 9] {
        let a = &self.jac.elastic;
        let mut lq = [0.0; 9];
        let mut l2q = [0.0; 9];
        for d in 0..3 {
            for (o, v) in lq.iter_mut().zip(a[d].matvec(&self.grad(d, x))) {
                *o += v;
            }
            for e in 0..3 {
                let he: Vec<f64> = (0..9).map(|r| self.h[d][e][r] + self.h[e][d][r]).collect();
                for (o, v) in l2q.iter_mut().zip(a[d].matvec(&a[e].matvec(&he))) {
                    *o += v;
                }
            }
        }
        std::array::from_fn(|r| {
            let q0: f64 = (0..3).map(|d| self.g[d][r] * x[d] + (0..3).map(|e| self.h[d][e][r] * x[d] * x[e]).sum::<f64>()).sum();
            q0 - t * lq[r] + 0.5 * t * t * l2q[r]
        })
    }
}

#[test]
fn quadratic_state_is_exact_for_one_step_inside() {
    for order in [3, 4] {
        let mesh = box_mesh(&BoxSpec::cube(4, 1.0), |_| unit_material()).unwrap();
        let s = setup(mesh, order, 1, 1.0);
        let data = partitions(&s, 1, order, 64, 1, 0);
        let exact = Quadratic::new(order as u64);
        let t_end = 2e-3;
        let mut solver = Solver::<f64>::new(&data[0], serial(t_end)).unwrap();
        solver.set_initial(|_, x| exact.at(x, 0.0));
        assert_eq!(solver.run(None, |_, _| {}).unwrap().steps, vec![1]);
        let nb = solver.shape().nb;
        let mut checked = 0;
        for k in 0..solver.len() {
            let g = &solver.geometry()[k];
            // Elements away from the absorbing boundary.
            if g.vertices.iter().flatten().all(|&c| c > 0.2 && c < 0.8) {
                for r in 0..9 {
                    let e = solver.basis().project(|xi| exact.at(g.to_physical(xi), t_end)[r], order + 2);
                    for b in 0..nb {
                        assert!((solver.state(k)[r * nb + b] - e[b]).abs() < 1e-12, "order {order} element {k}");
                    }
                }
                checked += 1;
            }
        }
        assert!(checked > 0);
    }
}

/// Plane wave error of a run with the half `x >= 0.5` forced into a coarser cluster.
fn forced_two_cluster_error(n: usize, order: usize, gts: bool) -> f64 {
    let mesh = box_mesh(&BoxSpec::periodic_cube(n, 1.0), |_| unit_material()).unwrap();
    let mut s = setup(mesh, order, 1, 1.0);
    let geom = s.mesh.compute_geometry();
    s.clustering.nc = 2;
    s.clustering.dt_min *= 0.5;
    s.clustering.cluster = geom.iter().map(|g| (g.centroid()[0] >= 0.5) as u8).collect();
    let w = wave();
    let data = partitions(&s, 1, order, 64, 1, 0);
    let mut solver = Solver::<f64>::new(&data[0], SolverOptions { parallel: true, ..serial(0.2) }).unwrap();
    solver.set_initial(|_, x| w.at(K, x, 0.0));
    if gts {
        solver.run_gts(|_, _| {}).unwrap();
    } else {
        solver.run(None, |_, _| {}).unwrap();
    }
    let (e, nn) = solver.l2_error(0, |x| w.at(K, x, 0.2));
    (e / nn).sqrt()
}

#[test]
fn cluster_interface_keeps_convergence_order() {
    let coarse = forced_two_cluster_error(3, 3, false);
    let fine = forced_two_cluster_error(4, 3, false);
    let rate = (coarse / fine).ln() / (4.0f64 / 3.0).ln();
    assert!(rate > 2.5, "rate {rate}");
    let lockstep = forced_two_cluster_error(4, 3, true);
    assert!(fine < 1.05 * lockstep, "lts {fine} lockstep {lockstep}");
}
