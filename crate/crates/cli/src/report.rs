//! Comparison tables over completed runs: one row per `sweep.csv` found
//! under the results directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::Args;
use netsynth::energy::format_joules;
use netsynth::pipeline::{best_row, most_compressed_row, read_sweep_csv, Method, SweepRow};
use walkdir::WalkDir;

use crate::Failure;

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Directory searched recursively for `sweep.csv` files.
    #[arg(long)]
    results: PathBuf,
    /// Where `report.txt` and `report.csv` go; defaults to the results directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accuracy slack below the baseline still counted as meeting it.
    #[arg(long, default_value_t = 0.0)]
    tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Variant {
    Baseline,
    HighestAccuracy,
    MostCompressed,
}

const COLUMNS: [(&str, Method, Variant); 7] = [
    ("MLP", Method::Mlp, Variant::Baseline),
    ("DR H.A.", Method::Dr, Variant::HighestAccuracy),
    ("DR M.C.", Method::Dr, Variant::MostCompressed),
    ("Synth H.A.", Method::Synth, Variant::HighestAccuracy),
    ("Synth M.C.", Method::Synth, Variant::MostCompressed),
    ("DR+Synth H.A.", Method::DrSynth, Variant::HighestAccuracy),
    ("DR+Synth M.C.", Method::DrSynth, Variant::MostCompressed),
];

struct RunTable {
    name: String,
    baseline: Option<SweepRow>,
    cells: Vec<Option<SweepRow>>,
}

/// Picks the row shown in each column. M.C. without a baseline row falls
/// back to the smallest network.
fn pick(rows: &[SweepRow], tolerance: f64) -> (Option<SweepRow>, Vec<Option<SweepRow>>) {
    let baseline = rows.iter().find(|r| r.method == Method::Mlp).cloned();
    let floor = baseline.as_ref().map_or(f64::NEG_INFINITY, |b| b.val_acc);
    let cells = COLUMNS
        .iter()
        .map(|&(_, method, variant)| {
            let of = || rows.iter().enumerate().filter(move |(_, r)| r.method == method);
            let idx = match variant {
                Variant::Baseline => return baseline.clone(),
                Variant::HighestAccuracy => best_row(of()),
                Variant::MostCompressed => most_compressed_row(of(), floor, tolerance),
            };
            idx.map(|i| rows[i].clone())
        })
        .collect();
    (baseline, cells)
}

fn collect(results: &Path, tolerance: f64) -> Result<Vec<RunTable>> {
    let mut runs = Vec::new();
    for entry in WalkDir::new(results).sort_by_file_name() {
        let entry = entry?;
        if entry.file_name() != "sweep.csv" || !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        let rows = read_sweep_csv(fs::File::open(path)?).with_context(|| format!("reading {}", path.display()))?;
        let dir = path.parent().unwrap_or(results);
        let name = match dir.strip_prefix(results) {
            Ok(p) if !p.as_os_str().is_empty() => p.display().to_string(),
            _ => dir.file_name().map_or_else(|| ".".into(), |n| n.to_string_lossy().into_owned()),
        };
        let (baseline, cells) = pick(&rows, tolerance);
        runs.push(RunTable { name, baseline, cells });
    }
    Ok(runs)
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn render(title: &str, names: &[String], cells: &[Vec<String>]) -> String {
    let mut header = vec!["run".to_string()];
    header.extend(COLUMNS.iter().map(|c| c.0.to_string()));
    let mut lines: Vec<Vec<String>> = vec![header];
    for (n, row) in names.iter().zip(cells) {
        let mut l = vec![n.clone()];
        l.extend(row.iter().cloned());
        lines.push(l);
    }
    let widths: Vec<usize> = (0..lines[0].len())
        .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = format!("{title}\n");
    for (i, l) in lines.iter().enumerate() {
        let cols: Vec<String> = l
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (s, w))| if c == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
            .collect();
        out.push_str(cols.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    out
}

fn tables(runs: &[RunTable]) -> String {
    let mut names: Vec<String> = runs.iter().map(|r| r.name.clone()).collect();
    let with_mean = runs.len() > 1;
    if with_mean {
        names.push("mean".into());
    }
    let grid = |f: &dyn Fn(&SweepRow, Option<&SweepRow>) -> Option<f64>, fmt: &dyn Fn(f64) -> String| {
        let mut g: Vec<Vec<String>> = runs
            .iter()
            .map(|r| {
                r.cells
                    .iter()
                    .map(|c| c.as_ref().and_then(|c| f(c, r.baseline.as_ref())).map_or("-".into(), fmt))
                    .collect()
            })
            .collect();
        if with_mean {
            g.push(
                (0..COLUMNS.len())
                    .map(|c| {
                        let vals = runs
                            .iter()
                            .filter_map(|r| r.cells[c].as_ref().and_then(|x| f(x, r.baseline.as_ref())));
                        mean(vals).map_or("-".into(), fmt)
                    })
                    .collect(),
            );
        }
        g
    };
    let mut out = String::new();
    out.push_str(&render("Validation accuracy (%)", &names, &grid(&|r, _| Some(r.val_acc), &pct)));
    out.push('\n');
    out.push_str(&render("Test accuracy (%)", &names, &grid(&|r, _| r.test_acc, &pct)));
    out.push('\n');
    out.push_str(&render(
        "Connections",
        &names,
        &grid(&|r, _| Some(r.connections as f64), &|x| format!("{}", x.round() as u64)),
    ));
    out.push('\n');
    out.push_str(&render(
        "Compression vs MLP (x)",
        &names,
        &grid(
            &|r, b| b.filter(|_| r.connections > 0).map(|b| b.connections as f64 / r.connections as f64),
            &|x| format!("{x:.1}"),
        ),
    ));
    out.push('\n');
    out.push_str(&render(
        "Inference energy incl. reducer (J)",
        &names,
        &grid(&|r, _| Some(r.energy_with_reducer), &format_joules),
    ));
    out
}

fn csv_report(runs: &[RunTable]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "run",
        "column",
        "reducer",
        "k",
        "scheme",
        "final_fraction",
        "val_acc",
        "test_acc",
        "connections",
        "compression",
        "energy",
        "energy_with_reducer",
    ])?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in runs {
        for ((label, _, _), cell) in COLUMNS.iter().zip(&r.cells) {
            let Some(c) = cell else { continue };
            let compression = r
                .baseline
                .as_ref()
                .filter(|_| c.connections > 0)
                .map(|b| (b.connections as f64 / c.connections as f64).to_string());
            w.write_record([
                r.name.clone(),
                label.to_string(),
                opt(c.reducer.map(|x| x.name().to_string())),
                opt(c.k.map(|x| x.to_string())),
                opt(c.scheme.map(|x| format!("{x:?}"))),
                opt(c.final_fraction.map(|x| x.to_string())),
                c.val_acc.to_string(),
                opt(c.test_acc.map(|x| x.to_string())),
                c.connections.to_string(),
                opt(compression),
                format_joules(c.energy),
                format_joules(c.energy_with_reducer),
            ])?;
        }
    }
    w.into_inner().map_err(|e| anyhow!("{e}"))
}

pub fn report(a: &ReportArgs) -> Result<(), Failure> {
    if !a.results.is_dir() {
        return Err(Failure::usage(anyhow!("{} is not a directory", a.results.display())));
    }
    let runs = collect(&a.results, a.tolerance).map_err(Failure::run)?;
    if runs.is_empty() {
        return Err(Failure::usage(anyhow!("no sweep.csv under {}", a.results.display())));
    }
    let text = tables(&runs);
    let out = a.out.clone().unwrap_or_else(|| a.results.clone());
    let write = || -> Result<()> {
        fs::create_dir_all(&out)?;
        fs::write(out.join("report.txt"), &text)?;
        fs::write(out.join("report.csv"), csv_report(&runs)?)?;
        Ok(())
    };
    write().map_err(Failure::run)?;
    print!("{text}");
    Ok(())
}
