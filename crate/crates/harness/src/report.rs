//! Markdown summary rendered from stored artifacts only.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use neurogen_core::circuit::CircuitFile;
use neurogen_core::devsim::Census;

use crate::metrics::{self, AblationRow, MetricsRecord};

pub const CENSUS_FILE: &str = "census.json";
pub const CIRCUIT_FILE: &str = "circuit.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const ABLATION_FILE: &str = "ablation.csv";

fn require(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    fs::read_to_string(&path).with_context(|| format!("missing artifact {}", path.display()))
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn census_table(out: &mut String, census: &Census, circuit: &CircuitFile) {
    let g = &circuit.stats.graph;
    let s = &circuit.stats.spectral;
    writeln!(out, "## Table I. Cell population after development\n").unwrap();
    writeln!(out, "| Cell Type | Count | Proportion |").unwrap();
    writeln!(out, "|---|---:|---:|").unwrap();
    for row in &census.rows {
        writeln!(
            out,
            "| {} | {} | {:.1}% |",
            row.cell_type.label(),
            row.count,
            100.0 * census.proportion(row.cell_type)
        )
        .unwrap();
    }
    writeln!(out, "| **Total** | **{}** | **100%** |\n", census.total).unwrap();
    writeln!(
        out,
        "Circuit: {} neurons, {} synaptic connections (average total degree {:.1}).",
        g.n_neurons, g.n_synapses, g.avg_total_degree
    )
    .unwrap();
    let moduli: Vec<String> = s.top_moduli.iter().map(|m| format!("{m:.6}")).collect();
    writeln!(
        out,
        "Spectral radius of W: {:.6}; leading |eigenvalues|: {}{}.\n",
        s.spectral_radius,
        moduli.join(", "),
        if s.converged { "" } else { " (not converged)" }
    )
    .unwrap();
}

fn training_table(out: &mut String, title: &str, records: &[&MetricsRecord]) {
    writeln!(out, "## {title}\n").unwrap();
    if records.is_empty() {
        writeln!(out, "No runs recorded.\n").unwrap();
        return;
    }
    let mut runs: Vec<&str> = records.iter().map(|r| r.run_id.as_str()).collect();
    runs.dedup();
    for run in runs {
        let rows: Vec<&&MetricsRecord> = records.iter().filter(|r| r.run_id == run).collect();
        writeln!(out, "Run `{run}` ({}, seed {})\n", rows[0].phase, rows[0].seed).unwrap();
        writeln!(out, "| Epoch | Split | Accuracy | Loss |").unwrap();
        writeln!(out, "|---:|---|---:|---:|").unwrap();
        for r in &rows {
            let label = if r.epoch == 0 { "0 (untrained)".to_owned() } else { r.epoch.to_string() };
            writeln!(out, "| {label} | {} | {} | {:.4} |", r.split, pct(r.accuracy), r.loss).unwrap();
        }
        let test = |e: u64| rows.iter().find(|r| r.split == "test" && r.epoch == e).map(|r| r.accuracy);
        if let (Some(a0), Some(a1)) = (test(0), test(1)) {
            writeln!(out, "\nOne-epoch gain: {:+.2} percentage points.", 100.0 * (a1 - a0)).unwrap();
        }
        writeln!(out).unwrap();
    }
}

fn ablation_table(out: &mut String, rows: &[AblationRow]) {
    writeln!(out, "## Ablation. Developmental versus density-matched random topology\n").unwrap();
    writeln!(out, "| Epoch | Developmental | Random | Delta |").unwrap();
    writeln!(out, "|---:|---:|---:|---:|").unwrap();
    for r in rows {
        writeln!(
            out,
            "| {} | {} | {} | {:+.2} pp |",
            r.epoch,
            pct(r.dev_accuracy),
            pct(r.rand_accuracy),
            100.0 * r.delta
        )
        .unwrap();
    }
    writeln!(out).unwrap();
}

/// Builds the report from `census.json`, `circuit.json`, `metrics.csv` and,
/// when present, `ablation.csv` in `dir`.
pub fn render(dir: &Path) -> Result<String> {
    let census: Census = serde_json::from_str(&require(dir, CENSUS_FILE)?).context("malformed census")?;
    let circuit = CircuitFile::from_json(&require(dir, CIRCUIT_FILE)?)?;
    require(dir, METRICS_FILE)?;
    let records = metrics::read(&dir.join(METRICS_FILE))?;
    if records.is_empty() {
        bail!("{} has no records", dir.join(METRICS_FILE).display());
    }

    let mut out = String::from("# Developmental circuit report\n\n");
    census_table(&mut out, &census, &circuit);
    let of = |dataset: &str| -> Vec<&MetricsRecord> {
        records.iter().filter(|r| r.phase.starts_with(dataset)).collect()
    };
    training_table(&mut out, "Table II. Training dynamics on MNIST", &of("mnist:"));
    training_table(&mut out, "Table III. Transfer to CIFAR-10", &of("cifar10:"));
    let ablation = dir.join(ABLATION_FILE);
    if ablation.exists() {
        ablation_table(&mut out, &metrics::read_ablation(&ablation)?);
    }
    Ok(out)
}
