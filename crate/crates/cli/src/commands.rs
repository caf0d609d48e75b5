use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::Args;
use log::{error, info};
use netsynth::data::{
    holdout_validation, load_csv, load_feature_csv, load_idx, load_prepared, save_prepared, split_explicit,
    split_fractions, CsvSchema, Dataset, Holdout, Split, SplitFractions,
};
use netsynth::dimreduce::shrink_architecture;
use netsynth::energy::EnergyCostModel;
use netsynth::pipeline::{
    find_baseline, run_pipeline, train_mlp, write_sweep_csv, FeaturePipeline, Method, ModelBundle, SweepRow,
};
use netsynth::schemes::{run_scheme, run_scheme_from};
use netsynth::RandomSource;
use serde_json::{json, Value};

use crate::manifest::{self, Effective, Start};
use crate::{Failure, RunArgs};

#[derive(Args, Debug)]
pub struct PrepArgs {
    /// CSV file with one row per sample.
    #[arg(long, conflicts_with = "idx")]
    csv: Option<PathBuf>,
    /// IDX image and label files; repeat to stack several pairs.
    #[arg(long, num_args = 2, value_names = ["IMAGES", "LABELS"], action = clap::ArgAction::Append)]
    idx: Vec<PathBuf>,
    /// IDX pairs forming the canonical test split.
    #[arg(long, num_args = 2, value_names = ["IMAGES", "LABELS"], action = clap::ArgAction::Append, requires = "idx")]
    test_idx: Vec<PathBuf>,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    #[arg(long)]
    no_header: bool,
    /// Zero-based label column; defaults to the last one.
    #[arg(long)]
    label_column: Option<usize>,
    /// Stratified split fractions, e.g. `0.6,0.15,0.25`.
    #[arg(long, value_delimiter = ',', conflicts_with = "split_files")]
    fractions: Option<Vec<f64>>,
    /// Index files for train, validation and optionally test.
    #[arg(long, num_args = 2..=3)]
    split_files: Option<Vec<PathBuf>>,
    /// Fraction of training rows held out for validation when no other split is given.
    #[arg(long, default_value_t = 0.15)]
    holdout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    /// Model bundle written by `synth`, `baseline` or `sweep`.
    #[arg(long)]
    model: PathBuf,
    /// Feature CSV without a label column.
    #[arg(long)]
    features: PathBuf,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    #[arg(long)]
    no_header: bool,
    /// Output file, one label per line; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn canonical(p: &Path) -> Result<PathBuf, Failure> {
    p.canonicalize()
        .with_context(|| format!("{} not found", p.display()))
        .map_err(Failure::usage)
}

fn pairs(flat: &[PathBuf]) -> Result<Vec<(PathBuf, PathBuf)>, Failure> {
    flat.chunks(2).map(|c| Ok((canonical(&c[0])?, canonical(&c[1])?))).collect()
}

pub fn prep(a: &PrepArgs) -> Result<(), Failure> {
    if a.fractions.as_ref().is_some_and(|f| f.len() != 3) {
        return Err(Failure::usage(anyhow!("--fractions takes three values: train,val,test")));
    }
    let mut rng = RandomSource::new(a.seed);
    let ds = if let Some(csv) = &a.csv {
        let schema = CsvSchema {
            delimiter: a.delimiter,
            has_header: !a.no_header,
            label_column: a.label_column,
        };
        load_csv(&canonical(csv)?, &schema).map_err(|e| Failure::run(e.into()))?
    } else if !a.idx.is_empty() {
        let train = pairs(&a.idx)?;
        let test = pairs(&a.test_idx)?;
        let mut all = train.clone();
        all.extend(test.iter().cloned());
        let mut ds = load_idx(&all).map_err(|e| Failure::run(e.into()))?;
        if !test.is_empty() {
            let n_test = load_idx(&test).map_err(|e| Failure::run(e.into()))?.len();
            let n_train = ds.len() - n_test;
            ds.split = Split {
                train: (0..n_train).collect(),
                val: Vec::new(),
                test: (n_train..ds.len()).collect(),
            };
        }
        ds
    } else {
        return Err(Failure::usage(anyhow!("give --csv or --idx")));
    };
    let mut split = |ds: Dataset| -> netsynth::Result<Dataset> {
        if let Some(f) = &a.fractions {
            split_fractions(
                ds,
                SplitFractions {
                    train: f[0],
                    val: f[1],
                    test: f[2],
                },
                &mut rng,
            )
        } else if let Some(files) = &a.split_files {
            split_explicit(ds, &files[0], &files[1], files.get(2).map(PathBuf::as_path))
        } else {
            holdout_validation(ds, Holdout::Fraction(a.holdout), &mut rng)
        }
    };
    let ds = split(ds).map_err(|e| {
        let usage = matches!(e, netsynth::Error::InvalidArgument(_));
        let err = anyhow::Error::from(e).context("splitting dataset");
        if usage {
            Failure::usage(err)
        } else {
            Failure::run(err)
        }
    })?;
    save_prepared(&ds, &a.out)
        .with_context(|| format!("writing {}", a.out.display()))
        .map_err(Failure::run)?;
    println!(
        "{}: {} rows, {} features, {} classes; train {}, val {}, test {}",
        a.out.display(),
        ds.len(),
        ds.n_features(),
        ds.n_classes(),
        ds.split.train.len(),
        ds.split.val.len(),
        ds.split.test.len()
    );
    Ok(())
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn write_rows(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let f = fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
    write_sweep_csv(rows, f)?;
    Ok(())
}

/// Mean of every top-level numeric field present in all runs.
fn mean_metrics(runs: &[Value]) -> Value {
    let mut out = serde_json::Map::new();
    let Some(Value::Object(first)) = runs.first() else {
        return Value::Object(out);
    };
    for key in first.keys() {
        if key == "seed" {
            continue;
        }
        let vals: Option<Vec<f64>> = runs.iter().map(|r| r.get(key).and_then(Value::as_f64)).collect();
        if let Some(v) = vals {
            out.insert(key.clone(), json!(v.iter().sum::<f64>() / v.len() as f64));
        }
    }
    Value::Object(out)
}

/// Runs `body` once per seed in `out/seed-<n>`, removing the directory of
/// any seed that fails, then writes the effective manifest and the
/// per-seed and averaged metrics.
fn run_seeds(eff: &Effective, body: impl Fn(u64, &Path) -> Result<Value>) -> Result<(), Failure> {
    let existed = eff.out.exists();
    fs::create_dir_all(&eff.out)
        .with_context(|| format!("creating {}", eff.out.display()))
        .map_err(Failure::run)?;
    let mut runs = Vec::new();
    let mut first_failure = None;
    for &seed in &eff.seeds {
        let dir = eff.out.join(format!("seed-{seed}"));
        let outcome = fs::create_dir_all(&dir).map_err(anyhow::Error::from).and_then(|_| body(seed, &dir));
        match outcome {
            Ok(v) => runs.push(v),
            Err(e) => {
                error!("seed {seed}: {e:#}");
                let _ = fs::remove_dir_all(&dir);
                first_failure.get_or_insert(Failure::run(e.context(format!("seed {seed}"))));
            }
        }
    }
    if runs.is_empty() {
        if !existed {
            let _ = fs::remove_dir_all(&eff.out);
        }
        return Err(first_failure.expect("no seeds ran and none failed"));
    }
    let finish = || -> Result<()> {
        fs::write(eff.out.join("manifest.toml"), eff.to_toml()?)?;
        let metrics = json!({ "mean": mean_metrics(&runs), "runs": runs });
        write_json(&eff.out.join("metrics.json"), &metrics)
    };
    finish().map_err(Failure::run)?;
    match first_failure {
        None => Ok(()),
        Some(f) => Err(f),
    }
}

fn resolve(a: &RunArgs, command: &str) -> Result<(manifest::RunManifest, Effective), Failure> {
    let (m, base) = manifest::load(a.manifest.as_deref()).map_err(Failure::usage)?;
    let eff = m.resolve_common(&base, &a.overrides(), command).map_err(Failure::usage)?;
    Ok((m, eff))
}

fn load_dataset(eff: &Effective) -> Result<Dataset, Failure> {
    load_prepared(&eff.dataset)
        .with_context(|| format!("loading {}", eff.dataset.display()))
        .map_err(Failure::run)
}

fn dense_connections(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn ratio(reference: Option<usize>, connections: usize) -> Value {
    match reference {
        Some(r) if connections > 0 => json!(r as f64 / connections as f64),
        _ => Value::Null,
    }
}

pub fn synth(a: &RunArgs) -> Result<(), Failure> {
    let (m, mut eff) = resolve(a, "synth")?;
    let s = m.resolve_synth(&a.overrides()).map_err(Failure::usage)?;
    eff.synth = Some(s.clone());
    let ds = load_dataset(&eff)?;
    let raw = ds.splits().map_err(|e| Failure::run(e.into()))?;
    if let Some(b) = &s.baseline {
        if b.len() < 2 || b[0] != raw.n_features() || b[b.len() - 1] != raw.n_classes {
            return Err(Failure::usage(anyhow!(
                "synth.baseline {b:?} does not fit data with {} features and {} classes",
                raw.n_features(),
                raw.n_classes
            )));
        }
    }
    let energy = EnergyCostModel::default();
    let reference = s.baseline.as_deref().map(dense_connections);
    run_seeds(&eff, |seed, dir| {
        let root = RandomSource::new(seed);
        let (features, data) = FeaturePipeline::fit(&raw, s.reducer.zip(s.k), &mut root.derive(0))?;
        let reducer = features.reducer.as_ref();
        let mut cfg = s.scheme.clone();
        cfg.seed = seed;
        let mut rows = Vec::new();
        let result = match s.start {
            Start::Initial => run_scheme(&cfg, &data, &mut root.derive(2))?,
            Start::Baseline => {
                let declared = s.baseline.clone().expect("checked when resolving");
                let sizes = match reducer {
                    Some(r) => shrink_architecture(&declared, r.ratio())?,
                    None => declared,
                };
                let opt = cfg.optimizer.clone().with_epochs(s.baseline_epochs);
                let net = train_mlp(&sizes, &data, &opt, &mut root.derive(1))?;
                let method = if reducer.is_some() { Method::Dr } else { Method::Mlp };
                rows.push(SweepRow::evaluate(method, &net, &data, reducer, seed, &energy)?);
                run_scheme_from(&cfg, &data, net, &mut root.derive(2))?
            }
        };
        let method = if reducer.is_some() { Method::DrSynth } else { Method::Synth };
        let row = SweepRow::evaluate(method, &result.best, &data, reducer, seed, &energy)?.with_scheme(cfg.scheme, None);
        info!("seed {seed}: val {} with {} connections", row.val_acc, row.connections);
        result.save_history_csv(&dir.join("history.csv"))?;
        let bundle = ModelBundle::new(features.clone(), &result.best, seed, ds.label_map.clone(), (&row).into());
        bundle.save(&dir.join("model.json"))?;
        let best = result.best_record();
        let mut metrics = json!({
            "seed": seed,
            "scheme": cfg.scheme,
            "reducer": s.reducer,
            "k": s.k,
            "val_acc": row.val_acc,
            "test_acc": row.test_acc,
            "connections": row.connections,
            "hidden_neurons": result.best.n_hidden(),
            "depth": row.depth,
            "energy": row.energy,
            "energy_with_reducer": row.energy_with_reducer,
            "best_iteration": best.iteration,
            "reference_connections": reference,
            "compression_ratio": ratio(reference, row.connections),
        });
        if let Some(b) = rows.first() {
            let obj = metrics.as_object_mut().expect("object literal");
            obj.insert("baseline_val_acc".into(), json!(b.val_acc));
            obj.insert("baseline_test_acc".into(), json!(b.test_acc));
            obj.insert("baseline_connections".into(), json!(b.connections));
        }
        rows.push(row);
        write_rows(&dir.join("sweep.csv"), &rows)?;
        write_json(&dir.join("metrics.json"), &metrics)?;
        Ok(metrics)
    })
}

pub fn baseline(a: &RunArgs) -> Result<(), Failure> {
    let (m, mut eff) = resolve(a, "baseline")?;
    let cfg = m.resolve_baseline().map_err(Failure::usage)?;
    eff.baseline = Some(cfg.clone());
    let ds = load_dataset(&eff)?;
    let raw = ds.splits().map_err(|e| Failure::run(e.into()))?;
    let energy = EnergyCostModel::default();
    run_seeds(&eff, |seed, dir| {
        let root = RandomSource::new(seed);
        let (features, data) = FeaturePipeline::fit(&raw, None, &mut root.derive(0))?;
        let b = find_baseline(&data, &cfg, &mut root.derive(1))?;
        let row = SweepRow::evaluate(Method::Mlp, &b.network, &data, None, seed, &energy)?;
        ModelBundle::new(features, &b.network, seed, ds.label_map.clone(), (&row).into()).save(&dir.join("model.json"))?;
        write_rows(&dir.join("sweep.csv"), std::slice::from_ref(&row))?;
        let metrics = json!({
            "seed": seed,
            "layer_sizes": b.layer_sizes,
            "trials": b.trials,
            "val_acc": row.val_acc,
            "test_acc": row.test_acc,
            "connections": row.connections,
            "energy": row.energy,
        });
        write_json(&dir.join("metrics.json"), &metrics)?;
        Ok(metrics)
    })
}

pub fn sweep(a: &RunArgs) -> Result<(), Failure> {
    let (m, mut eff) = resolve(a, "sweep")?;
    let cfg = m.resolve_sweep(&a.overrides()).map_err(Failure::usage)?;
    eff.sweep = Some(cfg.clone());
    let ds = load_dataset(&eff)?;
    let raw = ds.splits().map_err(|e| Failure::run(e.into()))?;
    let workers = a.workers();
    run_seeds(&eff, |seed, dir| {
        let r = run_pipeline(&raw, &cfg, seed, workers)?;
        write_rows(&dir.join("sweep.csv"), &r.rows)?;
        let baseline = r.baseline_row();
        let mut metrics = serde_json::Map::new();
        metrics.insert("seed".into(), json!(seed));
        metrics.insert("baseline_layer_sizes".into(), json!(r.baseline.layer_sizes));
        metrics.insert("baseline_val_acc".into(), json!(baseline.val_acc));
        metrics.insert("baseline_test_acc".into(), json!(baseline.test_acc));
        metrics.insert("baseline_connections".into(), json!(baseline.connections));
        let picks: Vec<Value> = r
            .candidates
            .picks
            .iter()
            .map(|p| {
                let m = &r.reduced[p.index];
                json!({
                    "reducer": m.reducer.kind,
                    "k": m.reducer.k,
                    "layer_sizes": m.layer_sizes,
                    "val_acc": m.val_acc,
                    "connections": m.connections,
                    "high_accuracy": p.high_accuracy,
                    "compressed": p.compressed,
                    "near_miss": p.near_miss,
                })
            })
            .collect();
        metrics.insert("candidates".into(), Value::Array(picks));
        for method in [Method::Dr, Method::Synth, Method::DrSynth] {
            let key = method.name().replace('+', "_");
            if let Some(i) = r.highest_accuracy(method) {
                metrics.insert(format!("{key}_ha"), serde_json::to_value(&r.rows[i])?);
            }
            if let Some(i) = r.most_compressed(method, cfg.tolerance) {
                let row = &r.rows[i];
                metrics.insert(format!("{key}_mc"), serde_json::to_value(row)?);
                metrics.insert(
                    format!("{key}_mc_compression"),
                    ratio(Some(baseline.connections), row.connections),
                );
            }
        }
        // the deployed model: best synthesized network on validation
        let synthesized = r
            .rows
            .iter()
            .enumerate()
            .filter(|(_, x)| matches!(x.method, Method::Synth | Method::DrSynth));
        let best = netsynth::pipeline::best_row(synthesized).unwrap_or(0);
        let row = &r.rows[best];
        metrics.insert("best_val_acc".into(), json!(row.val_acc));
        metrics.insert("best_test_acc".into(), json!(row.test_acc));
        metrics.insert("best_connections".into(), json!(row.connections));
        metrics.insert("best_compression".into(), ratio(Some(baseline.connections), row.connections));
        r.bundle(best, seed, &ds.label_map).save(&dir.join("model.json"))?;
        if let Some(i) = r.most_compressed(Method::DrSynth, cfg.tolerance) {
            r.bundle(i, seed, &ds.label_map).save(&dir.join("model-mc.json"))?;
        }
        let metrics = Value::Object(metrics);
        write_json(&dir.join("metrics.json"), &metrics)?;
        Ok(metrics)
    })
}

pub fn infer(a: &InferArgs) -> Result<(), Failure> {
    if !a.model.is_file() {
        return Err(Failure::usage(anyhow!("model bundle {} not found", a.model.display())));
    }
    if !a.features.is_file() {
        return Err(Failure::usage(anyhow!("feature file {} not found", a.features.display())));
    }
    let bundle = ModelBundle::load(&a.model)
        .with_context(|| format!("loading {}", a.model.display()))
        .map_err(Failure::run)?;
    let x = load_feature_csv(&a.features, a.delimiter, !a.no_header, bundle.features.input_width())
        .with_context(|| format!("reading {}", a.features.display()))
        .map_err(Failure::run)?;
    let labels = bundle.predict_labels(&x).map_err(|e| Failure::run(e.into()))?;
    let mut text = String::new();
    for l in &labels {
        text.push_str(l);
        text.push('\n');
    }
    let written = match &a.out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(Into::into),
    };
    written.map_err(Failure::run)
}
