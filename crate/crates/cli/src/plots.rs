//! Plot-data emission: CSV tables plus a self-contained matplotlib script.
//!
//! Everything here is derived from `trials.csv`, `plots/u2_levels.csv` and
//! the run summary, so `kljn plots --out DIR` can regenerate the plot data
//! for any completed run directory without re-simulating.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use kljn_core::{Error, Result};

use crate::runner::Summary;

const HIST_BINS: usize = 41;

/// One parsed `trials.csv` row, reduced to what the histograms need.
struct StatRow {
    attack: String,
    truth_high: bool,
    abstained: bool,
    statistic: f64,
}

fn parse_trials(csv: &str) -> Result<Vec<StatRow>> {
    let mut rows = Vec::new();
    for (ln, line) in csv.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::Parse(format!(
                "trials.csv line {}: expected 9 fields, got {}",
                ln + 1,
                fields.len()
            )));
        }
        rows.push(StatRow {
            attack: fields[3].to_string(),
            truth_high: fields[4] == "1",
            abstained: fields[6] == "1",
            statistic: fields[7]
                .parse()
                .map_err(|e| Error::Parse(format!("trials.csv line {}: {e}", ln + 1)))?,
        });
    }
    Ok(rows)
}

/// Two-class histogram: `bin_center,count_truth_low,count_truth_high`.
/// Returns None when there is nothing to bin or no spread to bin over.
fn histogram_csv(values: &[(bool, f64)]) -> Option<String> {
    let finite: Vec<(bool, f64)> = values
        .iter()
        .filter(|(_, x)| x.is_finite())
        .copied()
        .collect();
    let (min, max) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, x)| {
            (lo.min(x), hi.max(x))
        });
    if finite.is_empty() || !(max > min) {
        return None;
    }
    let width = (max - min) / HIST_BINS as f64;
    let mut low = [0u64; HIST_BINS];
    let mut high = [0u64; HIST_BINS];
    for &(truth_high, x) in &finite {
        let bin = (((x - min) / width) as usize).min(HIST_BINS - 1);
        if truth_high {
            high[bin] += 1;
        } else {
            low[bin] += 1;
        }
    }
    let mut out = String::from("bin_center,count_truth_low,count_truth_high\n");
    for b in 0..HIST_BINS {
        let center = min + (b as f64 + 0.5) * width;
        out.push_str(&format!("{center},{},{}\n", low[b], high[b]));
    }
    Some(out)
}

/// Write plot data for a run. `trials_csv` is the full text of trials.csv;
/// `levels_csv` the tap-level table if one was recorded. Returns the paths
/// written.
pub(crate) fn render(
    out_dir: &Path,
    summary: &Summary,
    trials_csv: &str,
    levels_csv: Option<&str>,
) -> Result<Vec<PathBuf>> {
    let plots_dir = out_dir.join("plots");
    fs::create_dir_all(&plots_dir)?;
    let mut written = Vec::new();

    // Per-attack statistic histograms, split by the true arrangement. For a
    // sound attack the two classes separate; for a defeated one they overlap.
    let mut per_attack: BTreeMap<String, Vec<(bool, f64)>> = BTreeMap::new();
    for row in parse_trials(trials_csv)? {
        if !row.abstained {
            per_attack
                .entry(row.attack)
                .or_default()
                .push((row.truth_high, row.statistic));
        }
    }
    for (attack, values) in &per_attack {
        if let Some(csv) = histogram_csv(values) {
            let path = plots_dir.join(format!("hist_{attack}.csv"));
            fs::write(&path, csv)?;
            written.push(path);
        }
    }

    // Tap DC levels by truth class — shows whether a deterministic artifact
    // splits the arrangements at all.
    if let Some(levels) = levels_csv {
        let mut values = Vec::new();
        for line in levels.lines().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() == 4 {
                if let Ok(level) = fields[3].parse::<f64>() {
                    values.push((fields[2] == "1", level));
                }
            }
        }
        if let Some(csv) = histogram_csv(&values) {
            let path = plots_dir.join("hist_u2_levels.csv");
            fs::write(&path, csv)?;
            written.push(path);
        }
    }

    // Sweep fit table: measured success probability against the squared
    // parameter, next to the fitted line.
    if let Some(sweep) = &summary.sweep {
        let mut csv = String::from("value,value_sq,p_hat,p_fit\n");
        for point in &sweep.points {
            let p_hat = point.attacks[&sweep.fit.attack].p_hat;
            let sq = point.value * point.value;
            let p_fit = 0.5 + sweep.fit.theta_prime * sq;
            csv.push_str(&format!("{},{sq},{p_hat},{p_fit}\n", point.value));
        }
        let path = plots_dir.join("sweep_fit.csv");
        fs::write(&path, csv)?;
        written.push(path);
    }

    let script = plots_dir.join("plot.py");
    fs::write(&script, PLOT_SCRIPT)?;
    written.push(script);
    Ok(written)
}

/// Regenerate plot data from a completed run directory.
pub fn emit(out_dir: &Path) -> Result<Vec<PathBuf>> {
    let summary_path = out_dir.join("summary.json");
    let summary_text = fs::read_to_string(&summary_path).map_err(|_| {
        Error::invalid(
            "plots",
            format!(
                "{} holds no summary.json — run a scenario into this directory first",
                out_dir.display()
            ),
        )
    })?;
    let summary: Summary = serde_json::from_str(&summary_text)
        .map_err(|e| Error::Parse(format!("summary.json: {e}")))?;
    let trials = fs::read_to_string(out_dir.join("trials.csv")).map_err(|_| {
        Error::invalid(
            "plots",
            format!("{} holds no trials.csv", out_dir.display()),
        )
    })?;
    let levels = fs::read_to_string(out_dir.join("plots").join("u2_levels.csv")).ok();
    render(out_dir, &summary, &trials, levels.as_deref())
}

const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Render the CSV plot data in this directory to PNGs."""
import csv
import glob
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))


def read(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


made = []

for path in sorted(glob.glob(os.path.join(HERE, "hist_*.csv"))):
    rows = read(path)
    if not rows:
        continue
    centers = [float(r["bin_center"]) for r in rows]
    low = [int(r["count_truth_low"]) for r in rows]
    high = [int(r["count_truth_high"]) for r in rows]
    width = (centers[1] - centers[0]) if len(centers) > 1 else 1.0
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(centers, low, width=width, alpha=0.6, label="truth: Bob low")
    ax.bar(centers, high, width=width, alpha=0.6, label="truth: Bob high")
    name = os.path.basename(path)[len("hist_") : -len(".csv")]
    ax.set_xlabel("decision statistic")
    ax.set_ylabel("count")
    ax.set_title(name)
    ax.legend()
    out = os.path.join(HERE, name + ".png")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    made.append(out)

fit_path = os.path.join(HERE, "sweep_fit.csv")
if os.path.exists(fit_path):
    rows = read(fit_path)
    xs = [float(r["value_sq"]) for r in rows]
    ps = [float(r["p_hat"]) for r in rows]
    fit = [float(r["p_fit"]) for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(xs, ps, "o", label="measured")
    ax.plot(xs, fit, "-", label="fit through origin")
    ax.axhline(0.5, color="grey", lw=0.8, ls=":")
    ax.set_xlabel("swept value, squared")
    ax.set_ylabel("success probability")
    ax.legend()
    out = os.path.join(HERE, "sweep_fit.png")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    made.append(out)

for p in made:
    print(p)
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_splits_truth_classes_and_clamps_the_max() {
        let mut values: Vec<(bool, f64)> = (0..100).map(|i| (i % 2 == 0, i as f64)).collect();
        values.push((true, f64::NAN)); // ignored, not propagated
        let csv = histogram_csv(&values).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + HIST_BINS);
        let total: u64 = lines[1..]
            .iter()
            .flat_map(|l| l.split(',').skip(1).map(|x| x.parse::<u64>().unwrap()))
            .sum();
        assert_eq!(total, 100, "every finite sample lands in exactly one bin");
        assert!(
            histogram_csv(&[(true, 1.0), (false, 1.0)]).is_none(),
            "no spread, no bins"
        );
        assert!(histogram_csv(&[]).is_none());
    }

    #[test]
    fn emit_refuses_a_directory_without_a_summary() {
        let dir = tempfile::tempdir().unwrap();
        let err = emit(dir.path()).unwrap_err().to_string();
        assert!(err.contains("summary.json"), "got: {err}");
        println!("plots error reads: {err}");
    }
}
