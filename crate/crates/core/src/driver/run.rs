use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, Scheme};
use super::{create_dir, seismogram_file_name, write_json, write_manifest, DriverError, PARTITION_DIR, SEISMOGRAM_DIR};
use crate::mesh::BoundaryKind;
use crate::partition::transport::InProcess;
use crate::partition::{file, LinkRecord, PartitionData};
use crate::real::Real;
use crate::solver::{gts_updates, RunStats, Solver, SolverOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocatedPoint {
    pub id: usize,
    pub location: [f64; 3],
    /// Global id of the owning element.
    pub element: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scheme: Scheme,
    pub elements: usize,
    pub partitions: usize,
    pub order: usize,
    pub precision: u32,
    pub width: usize,
    pub mechanisms: usize,
    pub clusters: usize,
    pub lambda: f64,
    pub dt_min: f64,
    pub t_end: f64,
    /// Steps taken by each cluster, finest first.
    pub cluster_steps: Vec<u64>,
    /// Element updates per cluster over all partitions.
    pub cluster_updates: Vec<u64>,
    pub lts_updates: u64,
    /// Updates of a lockstep run at `dt_min`.
    pub gts_updates: u64,
    pub realized_speedup: f64,
    pub theoretical_speedup: f64,
    pub messages: u64,
    pub values_sent: u64,
    pub wall_seconds: f64,
    /// Time per element update with memory variables over the purely
    /// elastic one; only measured for anelastic runs.
    pub anelastic_cost_ratio: Option<f64>,
    pub sources: Vec<LocatedPoint>,
    pub receivers: Vec<LocatedPoint>,
}

/// Runs the partition files written by `preprocess` and writes seismograms
/// and `summary.json`.
pub fn run(cfg: &RunConfig) -> Result<RunSummary, DriverError> {
    cfg.validate()?;
    let dir = cfg.output.join(PARTITION_DIR);
    let data = (0..cfg.partitions)
        .map(|p| file::read(&dir.join(file::partition_file_name(p))))
        .collect::<Result<Vec<_>, _>>()?;
    check_headers(cfg, &data)?;
    let summary = match cfg.precision {
        32 => run_typed::<f32>(cfg, &data)?,
        _ => run_typed::<f64>(cfg, &data)?,
    };
    write_json(&cfg.output.join("summary.json"), &summary)?;
    write_manifest(&cfg.output)?;
    Ok(summary)
}

fn check_headers(cfg: &RunConfig, data: &[PartitionData]) -> Result<(), DriverError> {
    for d in data {
        let h = &d.header;
        let mut diffs = Vec::new();
        if h.order != cfg.order {
            diffs.push(format!("order {} (config {})", h.order, cfg.order));
        }
        if h.precision_bits != cfg.precision {
            diffs.push(format!("precision {} (config {})", h.precision_bits, cfg.precision));
        }
        if h.width != cfg.width {
            diffs.push(format!("width {} (config {})", h.width, cfg.width));
        }
        if h.partitions != cfg.partitions {
            diffs.push(format!("{} partitions (config {})", h.partitions, cfg.partitions));
        }
        if h.mechanisms != cfg.mechanisms {
            diffs.push(format!("{} mechanisms (config {})", h.mechanisms, cfg.mechanisms));
        }
        if cfg.scheme == Scheme::Gts && h.nc != 1 {
            diffs.push(format!("{} clusters for a lockstep run", h.nc));
        }
        if !diffs.is_empty() {
            return Err(DriverError::Version(format!("partition {} was written with {}", h.partition, diffs.join(", "))));
        }
    }
    Ok(())
}

/// Global id of the element owning `x`: the lowest id over all partitions.
fn owner<R: Real>(solvers: &[Solver<R>], x: [f64; 3]) -> Option<u64> {
    solvers.iter().filter_map(|s| s.locate(x).map(|k| s.global_ids()[k])).min()
}

fn run_typed<R: Real>(cfg: &RunConfig, data: &[PartitionData]) -> Result<RunSummary, DriverError> {
    let opts = SolverOptions { parallel: cfg.threads, samples: cfg.samples, ..SolverOptions::new(cfg.t_end) };
    let mut solvers = data.iter().map(|d| Solver::<R>::new(d, opts.clone())).collect::<Result<Vec<_>, _>>()?;

    if let Some(init) = &cfg.initial {
        let f = init.evaluator()?;
        for s in &mut solvers {
            s.set_initial(|_, x| f(x));
        }
    }
    let mut sources = Vec::new();
    for (i, src) in cfg.sources.iter().enumerate() {
        let element = owner(&solvers, src.location)
            .ok_or_else(|| DriverError::Config(format!("source {i} at {:?} lies outside the mesh", src.location)))?;
        let ps = src.point_source(cfg.t_end)?;
        for s in &mut solvers {
            s.add_source(&ps, element)?;
        }
        sources.push(LocatedPoint { id: i, location: src.location, element });
    }
    let mut receivers = Vec::new();
    for (i, r) in cfg.receivers.iter().enumerate() {
        let element = owner(&solvers, r.location)
            .ok_or_else(|| DriverError::Config(format!("receiver {i} at {:?} lies outside the mesh", r.location)))?;
        for s in &mut solvers {
            s.add_receiver(i, r.location, element);
        }
        receivers.push(LocatedPoint { id: i, location: r.location, element });
    }

    let start = Instant::now();
    let stats = run_all(&mut solvers)?;
    let wall_seconds = start.elapsed().as_secs_f64();

    let seis_dir = create_dir(&cfg.output.join(SEISMOGRAM_DIR))?;
    clear_seismograms(&seis_dir)?;
    for s in &solvers {
        for (id, slots) in s.seismograms() {
            for (slot, seis) in slots.iter().enumerate() {
                seis.write_csv(&seis_dir.join(seismogram_file_name(id, slot)))?;
            }
        }
    }

    let h = &data[0].header;
    let elements: usize = data.iter().map(|d| d.elements.len()).sum();
    let mut cluster_steps = vec![0; h.nc];
    let mut cluster_updates = vec![0; h.nc];
    for st in &stats {
        for (l, (&s, &u)) in st.steps.iter().zip(&st.updates).enumerate() {
            cluster_steps[l] = cluster_steps[l].max(s);
            cluster_updates[l] += u;
        }
    }
    let lts_updates: u64 = stats.iter().map(|s| s.element_updates).sum();
    let gts = gts_updates(elements as u64, h.dt_min, cfg.t_end);
    let load: f64 = data.iter().flat_map(|d| &d.elements).map(|e| 0.5f64.powi(e.cluster as i32)).sum();
    let anelastic_cost_ratio = if cfg.mechanisms > 0 { Some(cost_ratio(&data[0], 0.05)?) } else { None };

    Ok(RunSummary {
        scheme: cfg.scheme,
        elements,
        partitions: data.len(),
        order: h.order,
        precision: h.precision_bits,
        width: h.width,
        mechanisms: h.mechanisms,
        clusters: h.nc,
        lambda: h.lambda,
        dt_min: h.dt_min,
        t_end: cfg.t_end,
        cluster_steps,
        cluster_updates,
        lts_updates,
        gts_updates: gts,
        realized_speedup: gts as f64 / lts_updates as f64,
        theoretical_speedup: elements as f64 * h.lambda / load,
        messages: stats.iter().map(|s| s.messages_sent).sum(),
        values_sent: stats.iter().map(|s| s.values_sent).sum(),
        wall_seconds,
        anelastic_cost_ratio,
        sources,
        receivers,
    })
}

/// One worker thread per partition, connected by in-process channels.
fn run_all<R: Real>(solvers: &mut [Solver<R>]) -> Result<Vec<RunStats>, DriverError> {
    if let [only] = solvers {
        return Ok(vec![only.run(None, |_, _| {})?]);
    }
    let mut endpoints = InProcess::mesh(solvers.len());
    let results: Vec<Result<RunStats, DriverError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = solvers
            .iter_mut()
            .zip(endpoints.iter_mut())
            .map(|(s, ep)| scope.spawn(move || s.run(Some(ep), |_, _| {})))
            .collect();
        handles
            .into_iter()
            .enumerate()
            .map(|(p, h)| match h.join() {
                Ok(r) => r.map_err(DriverError::from),
                Err(_) => Err(DriverError::Worker(p)),
            })
            .collect()
    });
    results.into_iter().collect()
}

fn clear_seismograms(dir: &Path) -> Result<(), DriverError> {
    let entries = std::fs::read_dir(dir).map_err(|e| DriverError::io(dir, e))?;
    for e in entries {
        let path = e.map_err(|e| DriverError::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "csv") {
            std::fs::remove_file(&path).map_err(|e| DriverError::io(&path, e))?;
        }
    }
    Ok(())
}

/// The partition with its ghost faces turned into outflow boundaries, so it
/// runs without peers.
fn standalone(data: &PartitionData) -> PartitionData {
    let mut d = data.clone();
    for e in &mut d.elements {
        for l in &mut e.links {
            if matches!(l, LinkRecord::Ghost { .. }) {
                *l = LinkRecord::Boundary(BoundaryKind::Outflow);
            }
        }
    }
    d.ghosts.clear();
    d.sends.clear();
    d.header.partition = 0;
    d.header.partitions = 1;
    d
}

/// Measured time per element update of `data` with its memory variables
/// over the same partition run purely elastic. Each variant repeats short
/// serial runs until `min_seconds` of stepping have accumulated.
pub fn cost_ratio(data: &PartitionData, min_seconds: f64) -> Result<f64, DriverError> {
    let anelastic = standalone(data);
    let mut elastic = anelastic.clone();
    elastic.header.mechanisms = 0;
    let per_update = |d: &PartitionData| match d.header.precision_bits {
        32 => time_per_update::<f32>(d, min_seconds),
        _ => time_per_update::<f64>(d, min_seconds),
    };
    Ok(per_update(&anelastic)? / per_update(&elastic)?)
}

fn time_per_update<R: Real>(data: &PartitionData, min_seconds: f64) -> Result<f64, DriverError> {
    let h = &data.header;
    let t_end = 2.0 * (1u64 << (h.nc - 1)) as f64 * h.lambda * h.dt_min;
    let opts = SolverOptions { parallel: false, samples: 1, ..SolverOptions::new(t_end) };
    let (mut seconds, mut updates) = (0.0, 0u64);
    while seconds < min_seconds || updates == 0 {
        let mut s = Solver::<R>::new(data, opts.clone())?;
        let st = s.run(None, |_, _| {})?;
        seconds += st.wall_seconds;
        updates += st.element_updates;
    }
    Ok(seconds / updates as f64)
}
