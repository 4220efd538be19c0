use std::fmt::Write as _;
use std::path::Path;

use super::preprocess::PreprocessSummary;
use super::run::RunSummary;
use super::{read_json, write_file, write_manifest, DriverError, SEISMOGRAM_DIR};
use crate::source_receiver::{misfit, Seismogram};

/// Misfit of one seismogram against the reference, per channel `u, v, w`.
#[derive(Clone, Debug, PartialEq)]
pub struct MisfitRow {
    pub receiver: usize,
    pub slot: usize,
    pub misfit: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportOutput {
    pub text: String,
    pub misfits: Vec<MisfitRow>,
}

fn parse_name(name: &str) -> Option<(usize, usize)> {
    let rest = name.strip_prefix("receiver_")?.strip_suffix(".csv")?;
    let (r, s) = rest.split_once("_slot_")?;
    Some((r.parse().ok()?, s.parse().ok()?))
}

/// Seismogram files of an output directory as `(receiver, slot, path)`.
fn seismograms(dir: &Path) -> Result<Vec<(usize, usize, std::path::PathBuf)>, DriverError> {
    let dir = dir.join(SEISMOGRAM_DIR);
    let mut out = Vec::new();
    let entries = std::fs::read_dir(&dir).map_err(|e| DriverError::io(&dir, e))?;
    for e in entries {
        let path = e.map_err(|e| DriverError::io(&dir, e))?.path();
        if let Some((r, s)) = path.file_name().and_then(|n| n.to_str()).and_then(parse_name) {
            out.push((r, s, path));
        }
    }
    out.sort();
    Ok(out)
}

/// Summarizes an output directory into `report.txt`; with a `reference`
/// output directory, also writes `misfit.csv` over the shared seismograms.
pub fn report(output: &Path, reference: Option<&Path>) -> Result<ReportOutput, DriverError> {
    let pre_path = output.join("preprocess.json");
    let run_path = output.join("summary.json");
    if !pre_path.exists() && !run_path.exists() {
        return Err(DriverError::Config(format!("{} holds neither preprocess nor run output", output.display())));
    }
    let mut text = String::new();
    if pre_path.exists() {
        let p: PreprocessSummary = read_json(&pre_path)?;
        let _ = writeln!(text, "elements            {}", p.elements);
        let _ = writeln!(text, "order               {}", p.order);
        let _ = writeln!(text, "clusters            {} (lambda {:.2})", p.clusters, p.lambda);
        let _ = writeln!(text, "cluster elements    {:?}", p.cluster_elements);
        let _ = writeln!(text, "normalized elements {}", p.normalized_elements);
        let _ = writeln!(
            text,
            "theoretical speedup {:.4} (before normalization {:.4})",
            p.theoretical_speedup, p.speedup_before_normalization
        );
        let _ = writeln!(text, "partitions          {} elements {:?}", p.partitions, p.partition_elements);
        let _ = writeln!(text, "weight imbalance    {:.2}%", 100.0 * p.weight_imbalance);
        let _ = writeln!(text, "element max/min     {:.2}", p.element_ratio);
    }
    if run_path.exists() {
        let r: RunSummary = read_json(&run_path)?;
        let _ = writeln!(text, "scheme              {:?}", r.scheme);
        let _ = writeln!(text, "cluster steps       {:?}", r.cluster_steps);
        let _ = writeln!(text, "element updates     {} (lockstep {})", r.lts_updates, r.gts_updates);
        let _ = writeln!(text, "realized speedup    {:.4} (theoretical {:.4})", r.realized_speedup, r.theoretical_speedup);
        let _ = writeln!(text, "messages            {} ({} values)", r.messages, r.values_sent);
        let _ = writeln!(text, "wall time           {:.3} s", r.wall_seconds);
        if let Some(c) = r.anelastic_cost_ratio {
            let _ = writeln!(text, "anelastic cost      {c:.2}x elastic");
        }
    }

    let mut misfits = Vec::new();
    if let Some(reference) = reference {
        let theirs = seismograms(reference)?;
        for (receiver, slot, path) in seismograms(output)? {
            let Some((_, _, ref_path)) = theirs.iter().find(|(r, s, _)| *r == receiver && *s == slot) else { continue };
            let a = Seismogram::read_csv(&path, [0.0; 3])?;
            let b = Seismogram::read_csv(ref_path, [0.0; 3])?;
            misfits.push(MisfitRow { receiver, slot, misfit: misfit(&a, &b)? });
        }
        let mut csv = String::from("receiver,slot,misfit_u,misfit_v,misfit_w\n");
        for m in &misfits {
            let _ = writeln!(csv, "{},{},{:.17e},{:.17e},{:.17e}", m.receiver, m.slot, m.misfit[0], m.misfit[1], m.misfit[2]);
        }
        write_file(&output.join("misfit.csv"), csv.as_bytes())?;
        let worst = misfits.iter().flat_map(|m| m.misfit).fold(0.0, f64::max);
        let _ = writeln!(text, "misfit              max {worst:.3e} over {} seismograms", misfits.len());
    }
    write_file(&output.join("report.txt"), text.as_bytes())?;
    write_manifest(output)?;
    Ok(ReportOutput { text, misfits })
}
