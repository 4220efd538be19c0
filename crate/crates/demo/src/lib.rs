//! WebAssembly entry points for the static demo page. Each export returns a
//! JSON string; the plain functions behind them are usable natively.

use std::f64::consts::PI;

use ader_lts::equations::{fit_relaxation, quality_factor, Material};
use ader_lts::lts::{assign_clusters, cfl_timesteps, normalize_clusters, theoretical_speedup, Clustering};
use ader_lts::mesh::generate::{box_mesh, coords_from_widths, BoxSpec};
use ader_lts::mesh::TetMesh;
use ader_lts::partition::{build_partitions, PlanParams};
use ader_lts::solver::{plane_wave, Solver, SolverOptions, WaveKind};
use ader_lts::source_receiver::channel_misfit;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct ClusterExploration {
    /// Element time steps over the smallest one.
    pub dt_rel: Vec<f64>,
    pub lambda: Vec<f64>,
    pub speedup: Vec<f64>,
    pub best_lambda: f64,
    pub best_speedup: f64,
    /// Elements per cluster at the best lambda.
    pub counts: Vec<usize>,
}

/// Column of `cells x 2 x 2` boxes whose widths grow by `grading` per cell
/// and whose wave speed grows linearly to `velocity_ratio` times the start.
fn graded_column(cells: usize, grading: f64, velocity_ratio: f64) -> Result<TetMesh, String> {
    let widths: Vec<f64> = (0..cells).map(|i| grading.powi(i as i32)).collect();
    let x = coords_from_widths(0.0, &widths);
    let len = *x.last().unwrap();
    let w = widths[cells - 1];
    let yz = vec![0.0, w, 2.0 * w];
    let spec = BoxSpec { coords: [x, yz.clone(), yz], ..BoxSpec::cube(1, 1.0) };
    box_mesh(&spec, |c| {
        let s = 1.0 + (velocity_ratio - 1.0) * c[0] / len;
        Material::elastic(1.0, 2.0 * s, s).expect("positive speeds")
    })
    .map_err(|e| e.to_string())
}

pub fn cluster_exploration(cells: usize, grading: f64, velocity_ratio: f64, clusters: usize) -> Result<ClusterExploration, String> {
    if !(1..=200).contains(&cells) || !(grading >= 1.0) || !(velocity_ratio > 0.0) || !(1..=8).contains(&clusters) {
        return Err("cells in [1, 200], grading >= 1, velocity ratio > 0, clusters in [1, 8]".into());
    }
    let mesh = graded_column(cells, grading, velocity_ratio)?;
    let adj = mesh.build_adjacency().map_err(|e| e.to_string())?;
    let ts = cfl_timesteps(&mesh.compute_geometry(), &mesh.materials, 4, 0.9).map_err(|e| e.to_string())?;
    let mut lambda = Vec::new();
    let mut speedup = Vec::new();
    let mut best: Option<(f64, f64, Clustering)> = None;
    for i in (51..=100).rev() {
        let l = i as f64 / 100.0;
        let mut c = assign_clusters(&ts, clusters, l).map_err(|e| e.to_string())?;
        normalize_clusters(&mut c, &adj);
        let s = theoretical_speedup(&c);
        lambda.push(l);
        speedup.push(s);
        if best.as_ref().map_or(true, |b| s > b.1 * (1.0 + 1e-12)) {
            best = Some((l, s, c));
        }
    }
    lambda.reverse();
    speedup.reverse();
    let (best_lambda, best_speedup, c) = best.expect("fifty candidates");
    Ok(ClusterExploration {
        dt_rel: ts.dt.iter().map(|d| d / ts.dt_min).collect(),
        lambda,
        speedup,
        best_lambda,
        best_speedup,
        counts: c.counts(),
    })
}

#[derive(Debug, Serialize)]
pub struct QFit {
    pub frequency: Vec<f64>,
    pub qp: Vec<f64>,
    pub qs: Vec<f64>,
    pub band: [f64; 2],
    /// Largest relative deviation from the targets inside the band.
    pub max_error: f64,
    pub warning: Option<String>,
}

pub fn q_fit(qp: f64, qs: f64, center_freq: f64, mechanisms: usize) -> Result<QFit, String> {
    let set = fit_relaxation(qp, qs, center_freq, mechanisms).map_err(|e| e.to_string())?;
    let band = [center_freq / 10.0, center_freq * 10.0];
    let frequency: Vec<f64> = (0..=200).map(|i| center_freq / 100.0 * 10f64.powf(4.0 * i as f64 / 200.0)).collect();
    let eval = |y: &[f64]| -> Vec<f64> { frequency.iter().map(|f| quality_factor(&set.omega, y, 2.0 * PI * f)).collect() };
    let (fp, fs) = (eval(&set.weight_p), eval(&set.weight_s));
    let mut max_error: f64 = 0.0;
    for (i, f) in frequency.iter().enumerate() {
        if *f >= band[0] * (1.0 - 1e-12) && *f <= band[1] * (1.0 + 1e-12) {
            max_error = max_error.max((fp[i] - qp).abs() / qp).max((fs[i] - qs).abs() / qs);
        }
    }
    Ok(QFit { frequency, qp: fp, qs: fs, band, max_error, warning: set.warning })
}

#[derive(Debug, Serialize)]
pub struct SchemeComparison {
    pub time: Vec<f64>,
    /// Particle velocity `u` at the receiver, lockstep and clustered.
    pub gts: Vec<f64>,
    pub lts: Vec<f64>,
    pub misfit: f64,
    pub gts_updates: u64,
    pub lts_updates: u64,
    pub cluster_counts: Vec<usize>,
}

/// P pulse crossing a cube whose `x < 0.5` half is `contrast` times faster,
/// run with two clusters and in lockstep at the smallest step.
pub fn scheme_comparison(cells: usize, order: usize, contrast: f64) -> Result<SchemeComparison, String> {
    if !(2..=6).contains(&cells) || !(1..=4).contains(&order) || !(1.0..=8.0).contains(&contrast) {
        return Err("cells in [2, 6], order in [1, 4], contrast in [1, 8]".into());
    }
    let slow = Material::elastic(1.0, 3f64.sqrt(), 1.0).expect("unit material");
    let fast = Material::elastic(1.0, contrast * slow.vp, contrast * slow.vs).expect("scaled material");
    let spec = BoxSpec { periodic: [false, true, true], ..BoxSpec::cube(cells, 1.0) };
    let spec = if cells < 3 { BoxSpec { periodic: [false; 3], ..spec } } else { spec };
    let mesh = box_mesh(&spec, |c| if c[0] < 0.5 { fast } else { slow }).map_err(|e| e.to_string())?;
    let adj = mesh.build_adjacency().map_err(|e| e.to_string())?;
    let ts = cfl_timesteps(&mesh.compute_geometry(), &mesh.materials, order, 0.5).map_err(|e| e.to_string())?;
    let mut lts = assign_clusters(&ts, 2, 1.0).map_err(|e| e.to_string())?;
    normalize_clusters(&mut lts, &adj);
    let gts = Clustering { nc: 1, cluster: vec![0; mesh.len()], ..lts.clone() };

    let wave = plane_wave(&slow, [1.0, 0.0, 0.0], WaveKind::P, [0.0; 3]);
    let init = |_: usize, x: [f64; 3]| wave.r.map(|r| r * (-((x[0] - 0.4).powi(2)) / 0.01).exp());
    let receiver = [0.8, 0.45, 0.55];
    let t_end = 0.25;
    let params = PlanParams { order, precision_bits: 64, width: 1, mechanisms: 0, center_freq: 1.0 };
    let run = |c: &Clustering, lockstep: bool| -> Result<(Vec<f64>, u64, f64), String> {
        let data = build_partitions(&mesh, &adj, c, &vec![0; mesh.len()], 1, &params).map_err(|e| e.to_string())?;
        let opts = SolverOptions { parallel: false, samples: 100, ..SolverOptions::new(t_end) };
        let mut s = Solver::<f64>::new(&data[0], opts).map_err(|e| e.to_string())?;
        s.set_initial(init);
        let k = s.locate(receiver).ok_or("receiver outside the mesh")?;
        s.add_receiver(0, receiver, s.global_ids()[k]);
        let stats = if lockstep { s.run_gts(|_, _| {}) } else { s.run(None, |_, _| {}) }.map_err(|e| e.to_string())?;
        let seis = &s.seismograms()[0].1[0];
        Ok((seis.channel(0), stats.element_updates, seis.dt))
    };
    let (g, gu, dt) = run(&gts, true)?;
    let (l, lu, _) = run(&lts, false)?;
    let misfit = channel_misfit(&l, &g).map_err(|e| e.to_string())?;
    Ok(SchemeComparison {
        time: (0..g.len()).map(|i| i as f64 * dt).collect(),
        gts: g,
        lts: l,
        misfit,
        gts_updates: gu,
        lts_updates: lu,
        cluster_counts: lts.counts(),
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string())).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = exploreClusters)]
pub fn explore_clusters(cells: usize, grading: f64, velocity_ratio: f64, clusters: usize) -> Result<String, JsValue> {
    to_js(cluster_exploration(cells, grading, velocity_ratio, clusters))
}

#[wasm_bindgen(js_name = qFit)]
pub fn q_fit_js(qp: f64, qs: f64, center_freq: f64, mechanisms: usize) -> Result<String, JsValue> {
    to_js(q_fit(qp, qs, center_freq, mechanisms))
}

#[wasm_bindgen(js_name = compareSchemes)]
pub fn compare_schemes(cells: usize, order: usize, contrast: f64) -> Result<String, JsValue> {
    to_js(scheme_comparison(cells, order, contrast))
}
