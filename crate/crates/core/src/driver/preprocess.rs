use serde::{Deserialize, Serialize};

use super::config::{LambdaMode, RunConfig, Scheme};
use super::{create_dir, write_file, write_json, write_manifest, DriverError, PARTITION_DIR};
use crate::basis::basis_counts;
use crate::lts::{
    assign_clusters, cfl_timesteps, cluster_report, normalize_clusters, optimize_lambda, theoretical_speedup,
    timestep_report,
};
use crate::mesh::TetMesh;
use crate::partition::{build_dual_graph, build_partitions, file, partition_report, GreedyPartitioner, Partitioner, PlanParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub elements: usize,
    pub partitions: usize,
    pub order: usize,
    pub precision: u32,
    pub width: usize,
    pub mechanisms: usize,
    pub clusters: usize,
    pub lambda: f64,
    pub dt_min: f64,
    /// Elements per cluster, finest first.
    pub cluster_elements: Vec<usize>,
    pub theoretical_speedup: f64,
    /// Speedup of the raw assignment, before neighbor normalization.
    pub speedup_before_normalization: f64,
    /// Elements moved to a finer cluster by normalization.
    pub normalized_elements: usize,
    pub partition_elements: Vec<usize>,
    pub partition_weights: Vec<u64>,
    /// Max over mean partition weight, minus one.
    pub weight_imbalance: f64,
    /// Max over min partition element count.
    pub element_ratio: f64,
    pub edge_cut: u64,
}

/// Load, cluster, partition, reorder and write one file per partition.
pub fn preprocess(cfg: &RunConfig) -> Result<PreprocessSummary, DriverError> {
    cfg.validate()?;
    let mesh = TetMesh::load(&cfg.mesh, &cfg.materials)?;
    if cfg.partitions > mesh.len() {
        return Err(DriverError::Config(format!("{} partitions for {} elements", cfg.partitions, mesh.len())));
    }
    let adj = mesh.build_adjacency()?;
    let geom = mesh.compute_geometry();
    let ts = cfl_timesteps(&geom, &mesh.materials, cfg.order, cfg.cfl)?;

    let out = create_dir(&cfg.output)?;
    let (nc, lambda) = match cfg.scheme {
        Scheme::Gts => (1, LambdaMode::Fixed(1.0)),
        Scheme::Lts => (cfg.clusters, cfg.lambda),
    };
    let lambda = match lambda {
        LambdaMode::Fixed(l) => l,
        LambdaMode::Named(_) => {
            let search = optimize_lambda(&ts, &adj, nc)?;
            let mut csv = String::from("lambda,speedup\n");
            for (l, s) in &search.candidates {
                csv.push_str(&format!("{l},{s}\n"));
            }
            write_file(&out.join("lambda.csv"), csv.as_bytes())?;
            search.lambda
        }
    };
    let mut clustering = assign_clusters(&ts, nc, lambda)?;
    let raw_speedup = theoretical_speedup(&clustering);
    let moved = normalize_clusters(&mut clustering, &adj);

    let nf = basis_counts(cfg.order)?.nb2d;
    let graph = build_dual_graph(&clustering, &adj, nf);
    let part = if cfg.partitions == 1 { vec![0; mesh.len()] } else { GreedyPartitioner.partition(&graph, cfg.partitions)? };
    let params = PlanParams {
        order: cfg.order,
        precision_bits: cfg.precision,
        width: cfg.width,
        mechanisms: cfg.mechanisms,
        center_freq: cfg.center_frequency,
    };
    let data = build_partitions(&mesh, &adj, &clustering, &part, cfg.partitions, &params)?;

    let dir = create_dir(&out.join(PARTITION_DIR))?;
    clear_partition_files(&dir)?;
    for d in &data {
        file::write(d, &dir)?;
    }
    write_file(&out.join("clusters.csv"), cluster_report(&clustering).as_bytes())?;
    write_file(&out.join("timesteps.csv"), timestep_report(&ts, &clustering).as_bytes())?;
    write_file(&out.join("partitions.csv"), partition_report(&clustering, &part, cfg.partitions, &graph).as_bytes())?;

    let counts: Vec<usize> = data.iter().map(|d| d.elements.len()).collect();
    let summary = PreprocessSummary {
        elements: mesh.len(),
        partitions: cfg.partitions,
        order: cfg.order,
        precision: cfg.precision,
        width: cfg.width,
        mechanisms: cfg.mechanisms,
        clusters: clustering.nc,
        lambda: clustering.lambda,
        dt_min: clustering.dt_min,
        cluster_elements: clustering.counts(),
        theoretical_speedup: theoretical_speedup(&clustering),
        speedup_before_normalization: raw_speedup,
        normalized_elements: moved,
        partition_weights: graph.part_weights(&part, cfg.partitions),
        weight_imbalance: graph.imbalance(&part, cfg.partitions),
        element_ratio: *counts.iter().max().unwrap() as f64 / *counts.iter().min().unwrap() as f64,
        partition_elements: counts,
        edge_cut: graph.cut(&part),
    };
    write_json(&out.join("preprocess.json"), &summary)?;
    write_file(&out.join("config.toml"), cfg.to_toml().as_bytes())?;
    write_manifest(&out)?;
    Ok(summary)
}

/// Drops partition files left over from an earlier run with more partitions.
fn clear_partition_files(dir: &std::path::Path) -> Result<(), DriverError> {
    let entries = std::fs::read_dir(dir).map_err(|e| DriverError::io(dir, e))?;
    for e in entries {
        let path = e.map_err(|e| DriverError::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("partition_") && name.ends_with(".bin") {
            std::fs::remove_file(&path).map_err(|e| DriverError::io(&path, e))?;
        }
    }
    Ok(())
}
