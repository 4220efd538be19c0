//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use ader_lts::driver::{self, LambdaMode, Mode, ReceiverConfig, RunConfig, Scheme, SourceConfig, TimeFunction};
use ader_lts::equations::Material;
use ader_lts::kernels::{taylor_integrate, DerivativeStack, Shape};
use ader_lts::lts::{
    assign_clusters, build_schedule, cfl_timesteps, normalize_clusters, optimize_lambda, theoretical_speedup, Action,
    ClusterGraph, Clustering, Contribution, ExchangeBuffers, ReaderStep, Span, TimeGrid, TimestepSet,
};
use ader_lts::mesh::generate::{box_mesh, coords_from_widths, BoxSpec};
use ader_lts::mesh::{msh, BoundaryKind, FaceAdjacency, FaceLink, TetMesh};
use ader_lts::partition::transport::InProcess;
use ader_lts::partition::{build_dual_graph, build_partitions, GreedyPartitioner, PartitionData, Partitioner, PlanParams};
use ader_lts::real::Real;
use ader_lts::solver::{plane_wave, RunStats, Solver, SolverOptions, WaveKind};
use ader_lts::source_receiver::{channel_misfit, MomentRate, PointSource, Seismogram};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn unit_material() -> Material {
    Material::from_velocities(1.0, 3f64.sqrt(), 1.0, f64::INFINITY, f64::INFINITY).unwrap()
}

fn scaled(m: &Material, s: f64, q: f64) -> Material {
    Material::from_velocities(m.rho, s * m.vp, s * m.vs, q, q).unwrap()
}

struct Setup {
    mesh: TetMesh,
    adj: FaceAdjacency,
    clustering: Clustering,
}

fn setup(mesh: TetMesh, order: usize, nc: usize, cfl: f64) -> Setup {
    let adj = mesh.build_adjacency().unwrap();
    let ts = cfl_timesteps(&mesh.compute_geometry(), &mesh.materials, order, cfl).unwrap();
    let mut clustering = assign_clusters(&ts, nc, 1.0).unwrap();
    normalize_clusters(&mut clustering, &adj);
    Setup { mesh, adj, clustering }
}

impl Setup {
    fn lockstep(&self) -> Setup {
        let clustering = Clustering { nc: 1, cluster: vec![0; self.mesh.len()], ..self.clustering.clone() };
        Setup { mesh: self.mesh.clone(), adj: self.adj.clone(), clustering }
    }

    fn partitions(&self, parts: usize, order: usize, bits: u32, width: usize, mechanisms: usize) -> Vec<PartitionData> {
        let part = if parts == 1 {
            vec![0; self.mesh.len()]
        } else {
            GreedyPartitioner.partition(&build_dual_graph(&self.clustering, &self.adj, 1), parts).unwrap()
        };
        let params = PlanParams { order, precision_bits: bits, width, mechanisms, center_freq: 1.0 };
        build_partitions(&self.mesh, &self.adj, &self.clustering, &part, parts, &params).unwrap()
    }
}

fn serial(t_end: f64) -> SolverOptions {
    SolverOptions { parallel: false, samples: 50, ..SolverOptions::new(t_end) }
}

/// Periodic in y and z; speeds `contrast` times higher for `x < 0.5`.
fn contrast_cube(n: usize, contrast: f64) -> TetMesh {
    let spec = BoxSpec { periodic: [false, true, true], ..BoxSpec::cube(n, 1.0) };
    box_mesh(&spec, |c| if c[0] < 0.5 { scaled(&unit_material(), contrast, f64::INFINITY) } else { unit_material() }).unwrap()
}

/// P pulse along x centered at `x = 0.4`.
fn x_pulse(_: usize, x: [f64; 3]) -> [f64; 9] {
    let w = plane_wave(&unit_material(), [1.0, 0.0, 0.0], WaveKind::P, [0.0; 3]);
    w.r.map(|r| r * (-((x[0] - 0.4).powi(2)) / 0.01).exp())
}

fn by_global<R: Real>(s: &Solver<R>) -> Vec<(u64, Vec<f64>)> {
    (0..s.len()).map(|k| (s.global_ids()[k], s.state(k).iter().map(|&v| Real::to_f64(v)).collect())).collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Runs every partition on its own thread and returns final states by global id.
fn run_partitions<R: Real>(data: &[PartitionData], t_end: f64, init: fn(usize, [f64; 3]) -> [f64; 9]) -> (Vec<Vec<f64>>, Vec<RunStats>) {
    let n: usize = data.iter().map(|d| d.elements.len()).sum();
    let mut endpoints = InProcess::mesh(data.len());
    let results: Vec<_> = std::thread::scope(|scope| {
        let handles: Vec<_> = data
            .iter()
            .zip(endpoints.iter_mut())
            .map(|(d, ep)| {
                scope.spawn(move || {
                    let mut s = Solver::<R>::new(d, serial(t_end)).unwrap();
                    s.set_initial(init);
                    let transport: Option<&mut dyn ader_lts::partition::transport::Transport> =
                        if data.len() > 1 { Some(ep) } else { None };
                    let stats = s.run(transport, |_, _| {}).unwrap();
                    (by_global(&s), stats)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut states = vec![Vec::new(); n];
    let mut stats = Vec::new();
    for (st, rs) in results {
        for (g, q) in st {
            states[g as usize] = q;
        }
        stats.push(rs);
    }
    (states, stats)
}

fn flat(states: &[Vec<f64>]) -> Vec<f64> {
    states.iter().flatten().copied().collect()
}

// 1. Convergence of an elastic plane wave under joint refinement of h and dt.
fn convergence() -> Outcome {
    let k = 2.0 * std::f64::consts::PI * std::f64::consts::SQRT_2;
    let wave = plane_wave(&unit_material(), [1.0, 1.0, 0.0], WaveKind::P, [0.0; 3]);
    let t_end = 0.1;
    let sizes = [3usize, 4, 6];
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for order in 2..=4 {
        let start = Instant::now();
        let errors: Vec<f64> = sizes
            .iter()
            .map(|&n| {
                let s = setup(box_mesh(&BoxSpec::periodic_cube(n, 1.0), |_| unit_material()).unwrap(), order, 1, 0.5);
                let data = s.partitions(1, order, 64, 1, 0);
                let mut solver = Solver::<f64>::new(&data[0], SolverOptions::new(t_end)).unwrap();
                solver.set_initial(|_, x| wave.at(k, x, 0.0));
                solver.run(None, |_, _| {}).unwrap();
                let (e, norm) = solver.l2_error(0, |x| wave.at(k, x, t_end));
                (e / norm).sqrt()
            })
            .collect();
        let rates: Vec<f64> =
            (1..sizes.len()).map(|i| (errors[i - 1] / errors[i]).ln() / (sizes[i] as f64 / sizes[i - 1] as f64).ln()).collect();
        if rates.iter().any(|&r| !(r >= order as f64 - 0.5)) {
            failures.push(order);
        }
        lines.push(format!(
            "O={order} errors {:.2e}/{:.2e}/{:.2e} rates {:.2}/{:.2} ({:.1}s)",
            errors[0],
            errors[1],
            errors[2],
            rates[0],
            rates[1],
            start.elapsed().as_secs_f64()
        ));
    }
    let text = lines.join("; ");
    ensure(failures.is_empty(), || format!("rate below O - 0.5 for orders {failures:?}: {text}"))?;
    Ok(text)
}

// 2. One cluster with lambda = 1 retraces lockstep stepping.
fn gts_degeneracy() -> Outcome {
    let s = setup(contrast_cube(4, 2.5), 3, 1, 0.5);
    ensure(s.mesh.len() <= 500, || format!("{} tets", s.mesh.len()))?;
    let data = s.partitions(1, 3, 64, 1, 0);
    let t_end = 0.2;
    let mut gts = Solver::<f64>::new(&data[0], serial(t_end)).unwrap();
    gts.set_initial(x_pulse);
    let mut trajectory: Vec<Vec<(u64, Vec<f64>)>> = Vec::new();
    gts.run_gts(|_, s| trajectory.push(by_global(s))).unwrap();
    let mut lts = Solver::<f64>::new(&data[0], serial(t_end)).unwrap();
    lts.set_initial(x_pulse);
    let mut step = 0;
    let mut worst: f64 = 0.0;
    lts.run(None, |_, s| {
        let now = by_global(s);
        let refs = &trajectory[step];
        let scale = refs.iter().fold(0.0f64, |a, (_, q)| a.max(max_abs(q)));
        for ((ga, a), (gb, b)) in now.iter().zip(refs) {
            assert_eq!(ga, gb);
            worst = worst.max(max_diff(a, b) / scale);
        }
        step += 1;
    })
    .unwrap();
    ensure(step == trajectory.len(), || format!("{step} steps vs {} lockstep steps", trajectory.len()))?;
    ensure(worst <= 1e-12, || format!("relative deviation {worst:.3e}"))?;
    Ok(format!("{} tets, {step} steps, max relative deviation {worst:.2e}", s.mesh.len()))
}

// 3. Exchange buffer identities and the three-cluster walkthrough.
fn buffer_algebra() -> Outcome {
    let shape = Shape::new(4, 20, 10, 0, 1);
    let len = shape.elastic_len();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut d0 = DerivativeStack::<f64>::new(&shape);
    for j in 0..shape.order {
        d0.get_mut(j).iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    }
    // Base step 0.25; the element steps 0.5 and has finer and coarser neighbors.
    let grid = TimeGrid::new(0.25, 100.0);
    let mut bufs = ExchangeBuffers::<f64>::new(len, true, true);
    bufs.update(&d0, &grid, Span::new(0, 2), 1, 0);
    let mut full = vec![0.0; len];
    let mut half = vec![0.0; len];
    taylor_integrate(&d0, 0.5, &mut full);
    taylor_integrate(&d0, 0.25, &mut half);
    let Ok(Contribution::Difference(a, b)) = bufs.contribution(ReaderStep::Smaller, Span::new(1, 2)) else {
        return Err("second substep does not read B1 - B2".into());
    };
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let expect: Vec<f64> = full.iter().zip(&half).map(|(x, y)| x - y).collect();
    ensure(diff == expect, || "B1 - B2 differs bitwise from the difference of the integrals".into())?;
    let mut second = vec![0.0; len];
    taylor_integrate(&d0.shifted(0.25), 0.25, &mut second);
    let half_err = max_diff(&diff, &second) / max_abs(&second);

    let first_b1 = bufs.b1.clone();
    bufs.update(&d0.shifted(0.5), &grid, Span::new(2, 4), 3, 1);
    let Ok(Contribution::Buffer(b3)) = bufs.contribution(ReaderStep::Larger, Span::new(0, 4)) else {
        return Err("B3 not readable after two steps".into());
    };
    let summed: Vec<f64> = first_b1.iter().zip(&bufs.b1).map(|(a, b)| a + b).collect();
    ensure(b3 == summed.as_slice(), || "B3 is not the bitwise sum of the two step integrals".into())?;
    let mut whole = vec![0.0; len];
    taylor_integrate(&d0, 1.0, &mut whole);
    let b3_err = max_diff(b3, &whole) / max_abs(&whole);
    ensure(half_err <= 1e-13 && b3_err <= 1e-13, || format!("integral mismatch: half {half_err:.2e}, B3 {b3_err:.2e}"))?;

    let graph = ClusterGraph { nc: 3, present: vec![true; 3], adjacent: vec![true, true, false] };
    let labels: Vec<String> = build_schedule(&graph, &TimeGrid::new(1.0, 4.0))
        .map_err(|e| e.to_string())?
        .iter()
        .map(|a| match a {
            Action::Predict { cluster, span, .. } => format!("P{}@{}", cluster + 1, span.start),
            Action::Correct { cluster, span, .. } => format!("C{}@{}", cluster + 1, span.start),
        })
        .collect();
    let walkthrough = [
        "P1@0", "P2@0", "P3@0", "C1@0", "P1@1", "C1@1", "C2@0", "P1@2", "P2@2", "C1@2", "P1@3", "C1@3", "C2@2", "C3@0",
    ];
    ensure(labels == walkthrough, || format!("schedule {labels:?}"))?;
    Ok(format!(
        "B1-B2 bitwise, vs re-expanded integral {half_err:.1e}; B3 bitwise sum, vs T(t0, 4dt) {b3_err:.1e}; walkthrough order ok"
    ))
}

// 4. Two-cluster run against lockstep at the fine step on a graded mesh.
fn lts_accuracy() -> Outcome {
    let widths = [0.1, 0.1, 0.15, 0.2, 0.2, 0.25];
    let c = coords_from_widths(0.0, &widths);
    let spec = BoxSpec { coords: [c.clone(), c.clone(), c], ..BoxSpec::cube(1, 1.0) };
    let order = 3;
    let s = setup(box_mesh(&spec, |_| unit_material()).unwrap(), order, 2, 0.5);
    ensure(s.mesh.len() <= 2000, || format!("{} tets", s.mesh.len()))?;
    let counts = s.clustering.counts();
    ensure(s.clustering.used_clusters() == 2, || format!("clusters {counts:?}"))?;
    let receivers = [[0.7, 0.6, 0.5], [0.2, 0.75, 0.4], [0.6, 0.3, 0.8]];
    let t_end = 0.3;
    let init = |_: usize, x: [f64; 3]| {
        let w = plane_wave(&unit_material(), [1.0, 1.0, 1.0], WaveKind::P, [0.0; 3]);
        let d2: f64 = x.iter().map(|v| (v - 0.4).powi(2)).sum();
        w.r.map(|r| r * (-d2 / 0.02).exp())
    };
    let run = |setup: &Setup, lockstep: bool| {
        let data = setup.partitions(1, order, 64, 1, 0);
        let mut solver = Solver::<f64>::new(&data[0], SolverOptions { samples: 100, ..SolverOptions::new(t_end) }).unwrap();
        solver.set_initial(init);
        for (i, x) in receivers.iter().enumerate() {
            let k = solver.locate(*x).unwrap();
            solver.add_receiver(i, *x, solver.global_ids()[k]);
        }
        let stats = if lockstep { solver.run_gts(|_, _| {}) } else { solver.run(None, |_, _| {}) }.unwrap();
        (solver.seismograms(), stats.element_updates)
    };
    let (reference, gts_updates) = run(&s.lockstep(), true);
    let (lts, lts_updates) = run(&s, false);
    let mut worst: f64 = 0.0;
    for ((_, a), (_, b)) in lts.iter().zip(&reference) {
        for ch in 0..3 {
            worst = worst.max(channel_misfit(&a[0].channel(ch), &b[0].channel(ch)).map_err(|e| e.to_string())?);
        }
    }
    ensure(worst <= 1e-2, || format!("misfit {worst:.3e}"))?;
    Ok(format!(
        "{} tets, clusters {counts:?}, max misfit {worst:.2e} over 3 receivers x 3 channels, updates {lts_updates} vs {gts_updates}",
        s.mesh.len()
    ))
}

fn graph_adjacency(n: usize, edges: &[(usize, usize)]) -> FaceAdjacency {
    let mut links = vec![[FaceLink::Boundary(BoundaryKind::Outflow); 4]; n];
    let mut used = vec![0; n];
    for &(a, b) in edges {
        links[a][used[a]] = FaceLink::Neighbor { element: b, face: used[b], orientation: 0 };
        links[b][used[b]] = FaceLink::Neighbor { element: a, face: used[a], orientation: 0 };
        used[a] += 1;
        used[b] += 1;
    }
    FaceAdjacency { links }
}

// 5. Cluster assignment, normalization and the lambda search.
fn clustering_properties() -> Outcome {
    let lambda = 0.8;
    let ts = TimestepSet::new(vec![1.0, 3.0 * lambda]).unwrap();
    let c = assign_clusters(&ts, 3, lambda).unwrap();
    ensure(c.cluster == [0, 1], || format!("dt = 3 lambda dt_min went to {:?}", c.cluster))?;

    // 10 elements at dt_min, 90 spread over (3, 4) dt_min.
    let mut dt = vec![1.0; 10];
    dt.extend((0..90).map(|i| 3.05 + 0.9 * i as f64 / 90.0));
    let ts = TimestepSet::new(dt).unwrap();
    let c = assign_clusters(&ts, 3, 0.75).unwrap();
    ensure(c.cluster[10..].iter().all(|&l| l == 2), || "lambda = 0.75 leaves slow elements below the third cluster".into())?;
    let c = assign_clusters(&ts, 3, 1.0).unwrap();
    ensure(c.cluster[10..].iter().all(|&l| l == 1), || "lambda = 1 puts slow elements outside the second cluster".into())?;
    let search = optimize_lambda(&ts, &graph_adjacency(100, &[]), 3).unwrap();
    ensure(search.lambda < 1.0 && search.speedup > 100.0 / 55.0, || format!("search {} {}", search.lambda, search.speedup))?;

    let chain = |n: usize| graph_adjacency(n, &(0..n - 1).map(|i| (i, i + 1)).collect::<Vec<_>>());
    let mut c = Clustering { nc: 3, lambda: 1.0, dt_min: 1.0, cluster: vec![2, 0] };
    normalize_clusters(&mut c, &chain(2));
    ensure(c.cluster == [1, 0], || format!("normalized {:?}", c.cluster))?;
    let mut c = Clustering { nc: 4, lambda: 1.0, dt_min: 1.0, cluster: vec![0, 3, 3] };
    normalize_clusters(&mut c, &chain(3));
    ensure(c.cluster == [0, 1, 2], || format!("normalized {:?}", c.cluster))?;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut gain: f64 = 0.0;
    for case in 0..100 {
        let n = rng.gen_range(1..300);
        let dt: Vec<f64> = (0..n).map(|_| 1.0 + rng.gen_range(0.0f64..1.0).powi(2) * 12.0).collect();
        let ts = TimestepSet::new(dt).unwrap();
        let adj = graph_adjacency(n, &[]);
        let nc = rng.gen_range(1..6);
        let r = optimize_lambda(&ts, &adj, nc).unwrap();
        let at_one = theoretical_speedup(&assign_clusters(&ts, nc, 1.0).unwrap());
        let oracle = |lambda: f64| {
            let base = lambda * ts.dt_min;
            let work: f64 = ts
                .dt
                .iter()
                .map(|&d| {
                    let mut l = 0;
                    while l + 1 < nc && d >= base * (1u64 << (l + 1)) as f64 {
                        l += 1;
                    }
                    ts.dt_min / (base * (1u64 << l) as f64)
                })
                .sum();
            n as f64 / work
        };
        ensure(r.speedup >= at_one, || format!("case {case}: {} < {at_one}", r.speedup))?;
        ensure((r.speedup - oracle(r.lambda)).abs() <= 1e-9 * r.speedup, || format!("case {case}: oracle mismatch"))?;
        ensure((at_one - oracle(1.0)).abs() <= 1e-9 * at_one, || format!("case {case}: oracle mismatch at 1"))?;
        gain = gain.max(r.speedup / at_one - 1.0);
    }
    Ok(format!("examples ok, 100 random distributions ok (largest gain from lambda {:.1}%)", 100.0 * gain))
}

// 6. Face payload size, partitioned surface contributions and partition invariance.
fn communication() -> Outcome {
    let shape = Shape::new(5, 35, 15, 0, 1);
    ensure(shape.payload_len() == 135, || format!("payload {} values", shape.payload_len()))?;

    let order = 3;
    let s = setup(contrast_cube(4, 2.5), order, 2, 0.5);
    let t_end = 0.1;
    let (single, _) = run_partitions::<f64>(&s.partitions(1, order, 64, 1, 0), t_end, x_pulse);
    let (split, stats) = run_partitions::<f64>(&s.partitions(2, order, 64, 1, 0), t_end, x_pulse);
    let scale = max_abs(&flat(&single));
    let dev64 = max_diff(&flat(&split), &flat(&single)) / scale;
    ensure(dev64 <= 16.0 * f64::EPSILON, || format!("64-bit split deviation {dev64:.3e}"))?;
    let face_values = 9 * (order * (order + 1) / 2) as u64;
    let sent: u64 = stats.iter().map(|r| r.messages_sent).sum();
    let values: u64 = stats.iter().map(|r| r.values_sent).sum();
    ensure(sent > 0 && values == sent * face_values, || format!("{values} values in {sent} messages"))?;

    let (one, _) = run_partitions::<f32>(&s.partitions(1, order, 32, 1, 0), t_end, x_pulse);
    let one = flat(&one);
    let mut worst: f64 = 0.0;
    for p in [2, 4] {
        let (q, _) = run_partitions::<f32>(&s.partitions(p, order, 32, 1, 0), t_end, x_pulse);
        worst = worst.max(max_diff(&flat(&q), &one) / max_abs(&one));
    }
    ensure(worst <= 1e-6, || format!("32-bit partition deviation {worst:.3e}"))?;
    Ok(format!(
        "135 values per O=5 face; {sent} messages of {face_values} values; 64-bit split vs single {dev64:.1e}; 32-bit p=2,4 vs p=1 {worst:.1e}"
    ))
}

fn run_fused<R: Real>(data: &PartitionData, t_end: f64, init: impl Fn(usize, [f64; 3]) -> [f64; 9], src: Option<&PointSource>) -> Vec<Vec<[f64; 3]>> {
    let mut s = Solver::<R>::new(data, serial(t_end)).unwrap();
    s.set_initial(init);
    if let Some(src) = src {
        let k = s.locate(src.location).unwrap();
        s.add_source(src, s.global_ids()[k]).unwrap();
    }
    let x = [0.7, 0.45, 0.55];
    let k = s.locate(x).unwrap();
    s.add_receiver(0, x, s.global_ids()[k]);
    s.run(None, |_, _| {}).unwrap();
    s.seismograms().remove(0).1.into_iter().map(|g: Seismogram| g.samples).collect()
}

fn rel_dev(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let fa: Vec<f64> = a.iter().flatten().copied().collect();
    let fb: Vec<f64> = b.iter().flatten().copied().collect();
    max_diff(&fa, &fb) / max_abs(&fb).max(1e-300)
}

// 7. Fused simulations.
fn fused() -> Outcome {
    let order = 2;
    let s = setup(contrast_cube(3, 2.0), order, 2, 0.5);
    let t_end = 0.15;
    let src = |scale: Vec<f64>| PointSource {
        location: [0.55, 0.5, 0.5],
        moment: [1.0, 0.5, 0.25, 0.1, 0.0, 0.0],
        rate: MomentRate::sampled(t_end / 400.0, 401, |t| (-((t - 0.05) / 0.02).powi(2)).exp()),
        slot_scale: scale,
    };
    let wide = s.partitions(1, order, 64, 16, 0);
    let same = run_fused::<f64>(&wide[0], t_end, x_pulse, Some(&src(vec![])));
    ensure(same.iter().all(|g| g == &same[0]), || "identical slots differ".into())?;
    ensure(max_abs(&same[0].iter().flatten().copied().collect::<Vec<_>>()) > 0.0, || "no signal".into())?;

    // Heterogeneous: per-slot initial amplitude and source scale.
    let amp = |w: usize| 1.0 + 0.5 * w as f64;
    let scales: Vec<f64> = (0..16).map(|w| 2.0 - 0.1 * w as f64).collect();
    let varied = run_fused::<f64>(&wide[0], t_end, |w, x| x_pulse(w, x).map(|v| v * amp(w)), Some(&src(scales.clone())));
    let narrow = s.partitions(1, order, 64, 1, 0);
    let mut worst: f64 = 0.0;
    for w in [0, 5, 15] {
        let alone = run_fused::<f64>(&narrow[0], t_end, |_, x| x_pulse(0, x).map(|v| v * amp(w)), Some(&src(vec![scales[w]])));
        worst = worst.max(rel_dev(&varied[w], &alone[0]));
    }
    ensure(worst <= 1e-6, || format!("heterogeneous deviation {worst:.3e}"))?;
    Ok(format!("W=16 identical slots bitwise equal; slots 0, 5, 15 vs unfused runs {worst:.1e}"))
}

// 8. Anelastic limit and cost ratio.
fn anelastic() -> Outcome {
    let order = 3;
    let t_end = 0.2;
    let build = |q: f64, m: usize| {
        let spec = BoxSpec::cube(3, 1.0);
        let mesh = box_mesh(&spec, |c| scaled(&unit_material(), if c[0] < 0.5 { 2.0 } else { 1.0 }, q)).unwrap();
        setup(mesh, order, 2, 0.5).partitions(1, order, 64, 1, m)
    };
    let elastic = build(f64::INFINITY, 0);
    let lossy = build(1e9, 3);
    let source = PointSource {
        location: [0.55, 0.5, 0.5],
        moment: [1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
        rate: MomentRate::sampled(t_end / 400.0, 401, |t| (-((t - 0.05) / 0.02).powi(2)).exp()),
        slot_scale: vec![],
    };
    let a = run_fused::<f64>(&elastic[0], t_end, |_, _| [0.0; 9], Some(&source));
    let b = run_fused::<f64>(&lossy[0], t_end, |_, _| [0.0; 9], Some(&source));
    let dev = rel_dev(&b[0], &a[0]);
    ensure(dev <= 1e-5, || format!("relative deviation {dev:.3e}"))?;
    let ratio = driver::cost_ratio(&lossy[0], 0.2).map_err(|e| e.to_string())?;
    ensure(ratio.is_finite() && ratio > 0.0, || format!("cost ratio {ratio}"))?;
    Ok(format!("m=3, Q=1e9 vs elastic {dev:.1e}; anelastic/elastic cost ratio {ratio:.2} (reported)"))
}

// 9. Realized update count against the theoretical speedup.
fn realized_speedup() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let widths = [0.05, 0.1, 0.2, 0.4];
    let c = coords_from_widths(0.0, &widths);
    let spec = BoxSpec { coords: [c, vec![0.0, 0.4, 0.8], vec![0.0, 0.4, 0.8]], ..BoxSpec::cube(1, 1.0) };
    let mesh = box_mesh(&spec, |_| unit_material()).unwrap();
    let (mesh_path, materials) = msh::save(&mesh, tmp.path(), "graded").map_err(|e| e.to_string())?;
    let mut cfg = RunConfig {
        mesh: mesh_path,
        materials,
        output: tmp.path().join("out"),
        mode: Mode::Preprocess,
        scheme: Scheme::Lts,
        order: 1,
        precision: 64,
        mechanisms: 0,
        center_frequency: 1.0,
        clusters: 4,
        lambda: LambdaMode::OPTIMIZE,
        cfl: 0.5,
        partitions: 2,
        width: 1,
        t_end: 1.0,
        samples: 10,
        threads: false,
        initial: None,
        sources: vec![SourceConfig {
            location: [0.3, 0.4, 0.4],
            moment: [1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
            time_function: TimeFunction::Gaussian { width: 0.05, delay: 0.1 },
            slot_scale: vec![],
        }],
        receivers: vec![ReceiverConfig { location: [0.6, 0.3, 0.5] }],
    };
    let pre = driver::preprocess(&cfg).map_err(|e| e.to_string())?;
    ensure(pre.cluster_elements.iter().filter(|&&n| n > 0).count() >= 2, || format!("clusters {:?}", pre.cluster_elements))?;
    cfg.t_end = 1000.5 * pre.lambda * pre.dt_min;
    cfg.mode = Mode::Run;
    let run = driver::run(&cfg).map_err(|e| e.to_string())?;
    let steps = run.cluster_steps[0];
    ensure(steps >= 1000, || format!("{steps} steps"))?;
    let rel = (run.realized_speedup / run.theoretical_speedup - 1.0).abs();
    ensure(rel <= 0.02, || format!("realized {} vs theoretical {}", run.realized_speedup, run.theoretical_speedup))?;
    Ok(format!(
        "{} tets, clusters {:?}, lambda {:.2}, {steps} finest steps: realized {:.4} vs theoretical {:.4} ({:.2}%)",
        pre.elements,
        pre.cluster_elements,
        pre.lambda,
        run.realized_speedup,
        run.theoretical_speedup,
        100.0 * rel
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("convergence", convergence),
        ("lockstep degeneracy", gts_degeneracy),
        ("buffer algebra", buffer_algebra),
        ("two-cluster accuracy", lts_accuracy),
        ("clustering properties", clustering_properties),
        ("communication", communication),
        ("fused simulations", fused),
        ("anelastic limit", anelastic),
        ("realized speedup", realized_speedup),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] {id}. {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {id}. {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
