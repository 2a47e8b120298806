use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::correlation::{CorrelationReport, DatasetCorrelation, Rho};
use super::search::SearchReport;
use super::sweep::SweepRecord;
use crate::error::Result;

pub const MANIFEST_FILE: &str = "run.json";

/// Record of one CLI run. Contains no timestamps, so identical inputs give
/// an identical manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// sha256 over the config JSON and every input file, each length-prefixed.
    pub input_hash: String,
    /// sha256 of every other file under the output directory, by relative path.
    pub outputs: BTreeMap<String, String>,
}

/// Hex sha256 of the length-prefixed concatenation of `parts`.
pub fn content_hash(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

fn files_under(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Hashes the inputs and the current contents of `out`, then writes the
/// manifest into `out`. Call after every other output is written.
pub fn write_manifest(
    out: &Path,
    command: &str,
    seed: u64,
    config: &impl Serialize,
    inputs: &[&Path],
) -> Result<RunManifest> {
    std::fs::create_dir_all(out)?;
    let config = serde_json::to_value(config)?;
    let mut parts = vec![serde_json::to_vec(&config)?];
    for p in inputs {
        for f in if p.is_dir() { files_under(p)? } else { vec![p.to_path_buf()] } {
            parts.push(std::fs::read(f)?);
        }
    }
    let input_hash = content_hash(&parts.iter().map(Vec::as_slice).collect::<Vec<_>>());
    let mut outputs = BTreeMap::new();
    for f in files_under(out)? {
        let rel = f.strip_prefix(out).expect("walked from out").to_string_lossy().replace('\\', "/");
        if rel != MANIFEST_FILE {
            outputs.insert(rel, content_hash(&[&std::fs::read(&f)?]));
        }
    }
    let manifest =
        RunManifest { command: command.into(), version: env!("CARGO_PKG_VERSION").into(), seed, config, input_hash, outputs };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| x.to_string())
}

fn rho(r: &Rho) -> String {
    opt(r.value())
}

/// One row per edge with kind, site and summary statistics.
pub fn sweep_csv(records: &[SweepRecord]) -> String {
    let mut s = String::from("src,dst,kind,runs,failures,mean_test_accuracy,std_test_accuracy,mean_train_loss,std_train_loss\n");
    for r in records {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.edge.src,
            r.edge.dst,
            r.kind.as_str(),
            r.seeds.len(),
            r.failures.len(),
            opt(r.mean_test_accuracy),
            opt(r.std_test_accuracy),
            opt(r.mean_train_loss),
            opt(r.std_train_loss)
        )
        .unwrap();
    }
    s
}

/// `n x n` grid of mean test accuracies, `NA` where nothing was swept.
pub fn sweep_grid_csv(records: &[SweepRecord], n: usize) -> String {
    let mut grid = vec![None; n * n];
    for r in records {
        grid[r.edge.src.0 * n + r.edge.dst.0] = r.mean_test_accuracy;
    }
    let mut s = String::from("src");
    for j in 0..n {
        write!(s, ",{j}").unwrap();
    }
    s.push('\n');
    for i in 0..n {
        write!(s, "{i}").unwrap();
        for j in 0..n {
            write!(s, ",{}", opt(grid[i * n + j])).unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn scatter_csv(report: &CorrelationReport) -> String {
    let mut s = String::from("src,dst,score,mean_test_accuracy,mean_train_loss\n");
    for p in &report.points {
        writeln!(s, "{},{},{},{},{}", p.edge.src, p.edge.dst, p.score, p.mean_test_accuracy, p.mean_train_loss).unwrap();
    }
    s
}

pub fn correlation_csv(reports: &[CorrelationReport]) -> String {
    let mut s = String::from("aggregator,eta,pairs,rho_test_accuracy,rho_train_loss\n");
    for r in reports {
        writeln!(s, "{},{},{},{},{}", r.aggregator, r.eta, r.points.len(), rho(&r.rho_test_accuracy), rho(&r.rho_train_loss))
            .unwrap();
    }
    s
}

pub fn dataset_csv(m: &DatasetCorrelation) -> String {
    let mut s = String::from("task");
    for t in &m.tasks {
        write!(s, ",{t}").unwrap();
    }
    s.push('\n');
    for (t, row) in m.tasks.iter().zip(&m.rho) {
        s.push_str(t);
        for r in row {
            write!(s, ",{}", rho(r)).unwrap();
        }
        s.push('\n');
    }
    s
}

/// Rank, label, mean and edge list per placement, samples first in rank
/// order, then the baselines.
pub fn search_csv(report: &SearchReport) -> String {
    let mut s = String::from("rank,label,mode,runs,mean_test_accuracy,std_test_accuracy,edges\n");
    let rows = report.ranking.iter().enumerate().map(|(k, &i)| ((k + 1).to_string(), &report.samples[i]));
    for (rank, o) in rows.chain(report.baselines.iter().map(|b| ("NA".to_string(), b))) {
        let edges: Vec<String> = o.edges.iter().map(|e| format!("{}-{}", e.src, e.dst)).collect();
        let mode = serde_json::to_value(o.mode).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        writeln!(
            s,
            "{rank},{},{mode},{},{},{},{}",
            o.label,
            o.seeds.len(),
            opt(o.mean_test_accuracy),
            opt(o.std_test_accuracy),
            edges.join(" ")
        )
        .unwrap();
    }
    s
}
