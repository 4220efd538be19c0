//! Clustered rate-2 local time stepping: CFL time steps, cluster assignment
//! with the scaling factor lambda, normalization, speedup estimates, the
//! exchange buffers and the cluster schedule.

pub mod buffers;
pub mod schedule;

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equations::Material;
use crate::mesh::{ElementGeometry, FaceAdjacency};

pub use buffers::{Contribution, ExchangeBuffers, ReaderStep, Span, Tick, TimeGrid, END};
pub use schedule::{build_schedule, Action, ClusterGraph};

#[derive(Debug, Error, PartialEq)]
pub enum LtsError {
    #[error("lambda {0} outside (0.5, 1]")]
    InvalidLambda(f64),
    #[error("cluster count must be at least 1")]
    InvalidClusterCount,
    #[error("time step {dt} of element {element} is not positive")]
    InvalidTimestep { element: usize, dt: f64 },
    #[error("buffer {buffer} holds {held:?} but the reader needs {needed:?}")]
    IncompleteBuffer { buffer: &'static str, held: Option<Span>, needed: Span },
    #[error("schedule deadlock: {0}")]
    Deadlock(String),
}

pub const DEFAULT_CFL: f64 = 0.9;

/// Element-local CFL time steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimestepSet {
    pub dt: Vec<f64>,
    pub dt_min: f64,
}

impl TimestepSet {
    pub fn new(dt: Vec<f64>) -> Result<Self, LtsError> {
        if let Some((element, &dt)) = dt.iter().enumerate().find(|(_, d)| !(**d > 0.0 && d.is_finite())) {
            return Err(LtsError::InvalidTimestep { element, dt });
        }
        let dt_min = dt.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self { dt, dt_min })
    }
}

/// `dt_k = cfl * d_k / ((2O - 1) vp_k)` with `d_k` the insphere diameter.
pub fn cfl_timesteps(geom: &[ElementGeometry], mats: &[Material], order: usize, cfl: f64) -> Result<TimestepSet, LtsError> {
    let dt = geom
        .iter()
        .zip(mats)
        .map(|(g, m)| cfl * g.insphere_diameter / ((2 * order - 1) as f64 * m.vp))
        .collect();
    TimestepSet::new(dt)
}

/// Cluster ids are 0-based here; cluster `l` steps with `2^l * lambda * dt_min`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub nc: usize,
    pub lambda: f64,
    pub dt_min: f64,
    pub cluster: Vec<u8>,
}

impl Clustering {
    pub fn cluster_dt(&self, l: usize) -> f64 {
        (1u64 << l) as f64 * self.lambda * self.dt_min
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.nc];
        for &l in &self.cluster {
            c[l as usize] += 1;
        }
        c
    }

    /// Number of clusters actually holding elements, counted from the finest.
    pub fn used_clusters(&self) -> usize {
        self.cluster.iter().map(|&l| l as usize + 1).max().unwrap_or(1)
    }
}

fn check_lambda(lambda: f64) -> Result<(), LtsError> {
    if lambda > 0.5 && lambda <= 1.0 {
        Ok(())
    } else {
        Err(LtsError::InvalidLambda(lambda))
    }
}

/// Assigns `dt in [2^l lambda dt_min, 2^(l+1) lambda dt_min)` to cluster `l`;
/// the coarsest cluster is open-ended.
pub fn assign_clusters(ts: &TimestepSet, nc: usize, lambda: f64) -> Result<Clustering, LtsError> {
    check_lambda(lambda)?;
    if nc == 0 || nc > 32 {
        return Err(LtsError::InvalidClusterCount);
    }
    let base = lambda * ts.dt_min;
    let cluster = ts
        .dt
        .iter()
        .map(|&dt| {
            let mut l = 0;
            while l + 1 < nc && dt >= (1u64 << (l + 1)) as f64 * base {
                l += 1;
            }
            l as u8
        })
        .collect();
    Ok(Clustering { nc, lambda, dt_min: ts.dt_min, cluster })
}

/// Lowers cluster ids until face neighbors differ by at most one level.
/// Returns the number of elements that moved.
pub fn normalize_clusters(c: &mut Clustering, adj: &FaceAdjacency) -> usize {
    let initial = c.cluster.clone();
    let mut queue: VecDeque<usize> = (0..c.cluster.len()).collect();
    let mut queued = vec![true; c.cluster.len()];
    while let Some(k) = queue.pop_front() {
        queued[k] = false;
        let lk = c.cluster[k];
        for n in adj.neighbors(k) {
            if c.cluster[n] > lk + 1 {
                c.cluster[n] = lk + 1;
                if !queued[n] {
                    queued[n] = true;
                    queue.push_back(n);
                }
            }
        }
    }
    c.cluster.iter().zip(&initial).filter(|(a, b)| a != b).count()
}

/// Ratio of GTS to LTS element updates per unit simulated time.
pub fn theoretical_speedup(c: &Clustering) -> f64 {
    let k = c.cluster.len() as f64;
    let denom: f64 = c.cluster.iter().map(|&l| 0.5f64.powi(l as i32)).sum();
    k * c.lambda / denom
}

/// Result of the lambda search.
#[derive(Clone, Debug)]
pub struct LambdaSearch {
    pub lambda: f64,
    pub clustering: Clustering,
    pub speedup: f64,
    /// `(lambda, speedup)` for every candidate.
    pub candidates: Vec<(f64, f64)>,
}

/// Tests `lambda in {0.51, ..., 1.00}` and keeps the best; ties favor the
/// larger lambda.
pub fn optimize_lambda(ts: &TimestepSet, adj: &FaceAdjacency, nc: usize) -> Result<LambdaSearch, LtsError> {
    let mut best: Option<LambdaSearch> = None;
    let mut candidates = Vec::with_capacity(50);
    for i in (51..=100).rev() {
        let lambda = i as f64 / 100.0;
        let mut c = assign_clusters(ts, nc, lambda)?;
        normalize_clusters(&mut c, adj);
        let s = theoretical_speedup(&c);
        candidates.push((lambda, s));
        if best.as_ref().map_or(true, |b| s > b.speedup * (1.0 + 1e-12)) {
            best = Some(LambdaSearch { lambda, clustering: c, speedup: s, candidates: Vec::new() });
        }
    }
    candidates.reverse();
    let mut best = best.expect("at least one candidate");
    best.candidates = candidates;
    Ok(best)
}

/// CSV with one row per cluster: bounds and steps relative to `dt_min`,
/// element counts and the share of the update load.
pub fn cluster_report(c: &Clustering) -> String {
    let counts = c.counts();
    let load: Vec<f64> = counts.iter().enumerate().map(|(l, &n)| n as f64 * 0.5f64.powi(l as i32)).collect();
    let total: f64 = load.iter().sum();
    let mut out = String::from("cluster,lower,upper,step,elements,load_share\n");
    for l in 0..c.nc {
        let lower = (1u64 << l) as f64 * c.lambda;
        let upper = if l + 1 == c.nc { f64::INFINITY } else { 2.0 * lower };
        let _ = writeln!(out, "{},{lower},{upper},{lower},{},{}", l + 1, counts[l], load[l] / total);
    }
    out
}

/// CSV with each element's relative time step and cluster (1-based).
pub fn timestep_report(ts: &TimestepSet, c: &Clustering) -> String {
    let mut out = String::from("element,dt_rel,cluster\n");
    for (k, (&dt, &l)) in ts.dt.iter().zip(&c.cluster).enumerate() {
        let _ = writeln!(out, "{k},{},{}", dt / ts.dt_min, l + 1);
    }
    out
}
