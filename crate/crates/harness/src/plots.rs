//! Plot-ready CSV series derived from a finished run directory.

use crate::config::Scheme;
use crate::experiment::{aggregate, read_rows, Aggregate, Summary, TimingRow};
use anyhow::{Context, Result};
use skyharvest::offline::OfflineSolution;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

fn write_aggregates(path: &Path, aggs: &[Aggregate], schemes: &[Scheme]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["scheme", "k", "duration", "n", "mean", "stderr"])?;
    for a in aggs.iter().filter(|a| schemes.contains(&a.scheme)) {
        w.write_record([a.scheme.to_string(), a.k.to_string(), a.duration.to_string(), a.n.to_string(), a.mean.to_string(), a.stderr.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `results.csv`, `summary.json`, `timings.csv` and `offline/` from
/// `run_dir` and writes the series into `out`. Returns the files written.
pub fn plot_data(run_dir: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    let rows = read_rows(&run_dir.join("results.csv"))?;
    let summary: Summary = serde_json::from_str(
        &std::fs::read_to_string(run_dir.join("summary.json")).context("reading summary.json")?,
    )?;
    let aggs = aggregate(&rows);
    let mut written = Vec::new();

    let p = out.join("fig4_convergence.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["scheme", "k", "duration", "iteration", "eta"])?;
    for o in &summary.offline {
        for (i, eta) in o.eta_trace.iter().enumerate() {
            w.write_record([o.scheme.to_string(), o.k.to_string(), o.duration.to_string(), i.to_string(), eta.to_string()])?;
        }
    }
    w.flush()?;
    written.push(p);

    for (name, schemes) in [
        ("fig5_offline.csv", &[Scheme::Lb, Scheme::Plla, Scheme::Plb, Scheme::Static][..]),
        ("fig7a_online.csv", &[Scheme::Plb, Scheme::Acs, Scheme::Ja, Scheme::Oja][..]),
        ("fig8b_sensors.csv", &Scheme::ALL[..]),
    ] {
        let p = out.join(name);
        write_aggregates(&p, &aggs, schemes)?;
        written.push(p);
    }

    let p = out.join("fig6_trajectories.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["scheme", "k", "duration", "waypoint", "x", "y", "z"])?;
    for o in &summary.offline {
        let file = run_dir.join("offline").join(format!("{}_k{}_t{}.json", o.scheme, o.k, o.duration));
        let sol = OfflineSolution::from_json(&std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?)?;
        for (i, wp) in sol.trajectory.waypoints.iter().enumerate() {
            w.write_record([o.scheme.to_string(), o.k.to_string(), o.duration.to_string(), i.to_string(), wp.q.x.to_string(), wp.q.y.to_string(), wp.z.to_string()])?;
        }
    }
    w.flush()?;
    written.push(p);

    let timing_path = run_dir.join("timings.csv");
    if timing_path.exists() {
        let mut r = csv::Reader::from_path(&timing_path)?;
        let mut groups: BTreeMap<(Scheme, usize, u64, usize), Vec<f64>> = BTreeMap::new();
        for t in r.deserialize() {
            let t: TimingRow = t?;
            groups.entry((t.scheme, t.k, t.duration.to_bits(), t.segment)).or_default().push(t.wall_time_s);
        }
        let p = out.join("fig8a_walltime.csv");
        let mut w = csv::Writer::from_path(&p)?;
        w.write_record(["scheme", "k", "duration", "segment", "n", "mean_wall_time_s", "max_wall_time_s"])?;
        for ((scheme, k, d, seg), v) in groups {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let max = v.iter().cloned().fold(0.0, f64::max);
            w.write_record([scheme.to_string(), k.to_string(), f64::from_bits(d).to_string(), seg.to_string(), v.len().to_string(), mean.to_string(), max.to_string()])?;
        }
        w.flush()?;
        written.push(p);
    }
    Ok(written)
}
