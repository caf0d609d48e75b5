//! End-to-end compression: baseline MLP search, per-layer compression by
//! dimensionality reduction, candidate selection, and synthesis runs seeded
//! from the selected candidates.

use std::cmp::Ordering;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{DataSplits, LabelMap};
use crate::dimreduce::{fit_reducer, normalize, shrink_architecture, CompressionRatio, Normalizer, Reducer, ReducerKind};
use crate::energy::{count_ops, count_ops_reducer, estimate_energy, three_significant, EnergyCostModel};
use crate::error::{Error, Result};
use crate::network::NetworkTopology;
use crate::numerics::{Matrix, RandomSource};
use crate::schemes::{run_scheme, run_scheme_from, train_weights, OptimizerConfig, Scheme, SchemeConfig};

/// Hidden width used by the baseline search at every depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidthRule {
    /// `round(sqrt(d * c))`, at least `min`.
    GeometricMean { min: usize },
    Fixed(usize),
}

impl WidthRule {
    pub fn width(&self, d: usize, c: usize) -> usize {
        match *self {
            WidthRule::GeometricMean { min } => (((d * c) as f64).sqrt().round() as usize).max(min),
            WidthRule::Fixed(w) => w.max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSearchConfig {
    pub width: WidthRule,
    pub max_depth: usize,
    /// A deeper net must beat the best so far by more than this; 0 tries
    /// every depth.
    pub epsilon: f64,
    pub optimizer: OptimizerConfig,
}

impl Default for BaselineSearchConfig {
    fn default() -> Self {
        Self {
            width: WidthRule::GeometricMean { min: 16 },
            max_depth: 3,
            epsilon: 0.002,
            optimizer: OptimizerConfig::adam(0.01, 1e-3).with_epochs(30),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineTrial {
    pub layer_sizes: Vec<usize>,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub layer_sizes: Vec<usize>,
    pub val_acc: f64,
    pub network: NetworkTopology,
    pub trials: Vec<BaselineTrial>,
}

/// Trains a fresh MLP, halving the learning rate after a divergence.
pub fn train_mlp(sizes: &[usize], data: &DataSplits, opt: &OptimizerConfig, rng: &mut RandomSource) -> Result<NetworkTopology> {
    let mut net = NetworkTopology::from_mlp(sizes, rng)?;
    let mut opt = opt.clone();
    for _ in 0..8 {
        match train_weights(&mut net, &data.train, &opt, opt.epochs_per_iteration, rng) {
            Ok(_) => return Ok(net),
            Err(Error::Divergence { .. }) => opt.learning_rate *= 0.5,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Divergence {
        epoch: opt.epochs_per_iteration,
    })
}

/// Trains MLPs of increasing depth until a deeper one stops improving
/// validation accuracy by more than `epsilon`.
pub fn find_baseline(data: &DataSplits, cfg: &BaselineSearchConfig, rng: &mut RandomSource) -> Result<BaselineResult> {
    if cfg.max_depth == 0 {
        return Err(Error::invalid("baseline search needs max_depth >= 1"));
    }
    let (d, c) = (data.n_features(), data.n_classes);
    let w = cfg.width.width(d, c);
    let mut trials = Vec::new();
    let mut best: Option<(Vec<usize>, f64, NetworkTopology)> = None;
    for depth in 1..=cfg.max_depth {
        let mut sizes = vec![d];
        sizes.extend(std::iter::repeat_n(w, depth));
        sizes.push(c);
        let net = train_mlp(&sizes, data, &cfg.optimizer, rng)?;
        let acc = net.accuracy(&data.val.x, &data.val.y)?;
        info!("baseline {sizes:?}: validation accuracy {acc}");
        trials.push(BaselineTrial {
            layer_sizes: sizes.clone(),
            val_acc: acc,
        });
        let improved = match &best {
            None => true,
            Some((_, b, _)) => acc - b > cfg.epsilon || (cfg.epsilon == 0.0 && acc > *b),
        };
        if improved {
            best = Some((sizes, acc, net));
        } else if cfg.epsilon > 0.0 {
            break;
        }
    }
    let (layer_sizes, val_acc, network) = best.expect("at least one depth");
    Ok(BaselineResult {
        layer_sizes,
        val_acc,
        network,
        trials,
    })
}

/// Default `k` grid: `d/2, d/4, d/8, d/16`, at least 4 and below `d`.
pub fn default_k_grid(d: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = [2, 4, 8, 16].iter().map(|f| (d / f).max(4)).filter(|&k| k < d).collect();
    ks.dedup();
    ks
}

/// Features pushed through the fitted transforms of a reduced model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePipeline {
    pub normalizer: Normalizer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reducer: Option<Reducer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub renormalizer: Option<Normalizer>,
}

impl FeaturePipeline {
    /// Fits normalization and an optional reducer on the raw training
    /// split and returns the transformed splits.
    pub fn fit(raw: &DataSplits, reducer: Option<(ReducerKind, usize)>, rng: &mut RandomSource) -> Result<(Self, DataSplits)> {
        let (data, normalizer) = normalize(raw)?;
        let Some((kind, k)) = reducer else {
            let fp = Self {
                normalizer,
                reducer: None,
                renormalizer: None,
            };
            return Ok((fp, data));
        };
        let r = fit_reducer(kind, &data.train.x, k, rng)?;
        let (reduced, renorm) = reduce_splits(&data, &r)?;
        let fp = Self {
            normalizer,
            reducer: Some(r),
            renormalizer: Some(renorm),
        };
        Ok((fp, reduced))
    }

    pub fn input_width(&self) -> usize {
        self.normalizer.width()
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = self.normalizer.transform(x)?;
        if let Some(r) = &self.reducer {
            y = r.transform(&y)?;
        }
        if let Some(n) = &self.renormalizer {
            y = n.transform(&y)?;
        }
        Ok(y)
    }

    /// Applies the transforms after the first normalization.
    fn apply_normalized(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = x.clone();
        if let Some(r) = &self.reducer {
            y = r.transform(&y)?;
        }
        if let Some(n) = &self.renormalizer {
            y = n.transform(&y)?;
        }
        Ok(y)
    }
}

/// One entry of the per-layer compression table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedModel {
    pub reducer: Reducer,
    pub renormalizer: Normalizer,
    pub layer_sizes: Vec<usize>,
    pub network: NetworkTopology,
    pub val_acc: f64,
    pub test_acc: Option<f64>,
    pub connections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionConfig {
    pub reducers: Vec<ReducerKind>,
    /// `None` uses [`default_k_grid`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_grid: Option<Vec<usize>>,
    pub optimizer: OptimizerConfig,
}

/// Features reduced by a fitted reducer, then rescaled to `[0, 1]` on the
/// training split.
fn reduce_splits(data: &DataSplits, reducer: &Reducer) -> Result<(DataSplits, Normalizer)> {
    let reduced = data.map_features(|x| reducer.transform(x))?;
    let (out, renorm) = normalize(&reduced)?;
    Ok((out, renorm))
}

/// Trains the shrunk baseline on every `(reducer, k)` pair. `data` must be
/// normalized already. Cells run on `workers` threads; results are in grid
/// order regardless.
pub fn compress_per_layer(
    data: &DataSplits,
    baseline_sizes: &[usize],
    cfg: &CompressionConfig,
    seed: u64,
    workers: usize,
) -> Result<Vec<ReducedModel>> {
    let d = data.n_features();
    let ks = cfg.k_grid.clone().unwrap_or_else(|| default_k_grid(d));
    let cells: Vec<(ReducerKind, usize)> = cfg
        .reducers
        .iter()
        .flat_map(|&r| ks.iter().map(move |&k| (r, k)))
        .collect();
    let root = RandomSource::new(seed);
    run_parallel(workers, &cells, |idx, &(kind, k)| {
        let mut rng = root.derive(1000 + idx as u64);
        let reducer = fit_reducer(kind, &data.train.x, k, &mut rng)?;
        let (reduced, renormalizer) = reduce_splits(data, &reducer)?;
        let sizes = shrink_architecture(baseline_sizes, CompressionRatio::new(d, k)?)?;
        let network = train_mlp(&sizes, &reduced, &cfg.optimizer, &mut rng)?;
        let val_acc = network.accuracy(&reduced.val.x, &reduced.val.y)?;
        let test_acc = match &reduced.test {
            Some(t) => Some(network.accuracy(&t.x, &t.y)?),
            None => None,
        };
        info!("reduced {kind} k={k} {sizes:?}: validation accuracy {val_acc}");
        Ok(ReducedModel {
            connections: network.connection_count(),
            reducer,
            renormalizer,
            layer_sizes: sizes,
            network,
            val_acc,
            test_acc,
        })
    })
}

fn run_parallel<T: Sync, R: Send>(
    workers: usize,
    items: &[T],
    f: impl Fn(usize, &T) -> Result<R> + Sync + Send,
) -> Result<Vec<R>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect())
}

/// What candidate selection sees of a table row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateStats {
    pub reducer: ReducerKind,
    pub k: usize,
    pub val_acc: f64,
    pub connections: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePick {
    /// Row index in the table passed to [`select_candidates`].
    pub index: usize,
    pub high_accuracy: bool,
    pub compressed: bool,
    /// A compressed slot filled by an entry below the baseline accuracy.
    pub near_miss: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CandidateSet {
    pub picks: Vec<CandidatePick>,
}

impl CandidateSet {
    pub fn indices(&self) -> Vec<usize> {
        self.picks.iter().map(|p| p.index).collect()
    }
}

fn by_accuracy(a: &CandidateStats, b: &CandidateStats) -> Ordering {
    b.val_acc
        .total_cmp(&a.val_acc)
        .then(a.connections.cmp(&b.connections))
        .then(a.reducer.cmp(&b.reducer))
        .then(a.k.cmp(&b.k))
}

fn by_compression(a: &CandidateStats, b: &CandidateStats) -> Ordering {
    a.connections
        .cmp(&b.connections)
        .then(b.val_acc.total_cmp(&a.val_acc))
        .then(a.reducer.cmp(&b.reducer))
        .then(a.k.cmp(&b.k))
}

/// The three most accurate rows plus the three smallest rows meeting
/// `baseline_acc - tolerance`, merged. Missing compressed slots are filled
/// by the most accurate remaining rows, flagged as near misses. Picks are
/// listed accuracy-first, then compressed, each in rank order.
pub fn select_candidates(rows: &[CandidateStats], baseline_acc: f64, tolerance: f64) -> CandidateSet {
    const SLOTS: usize = 3;
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| by_accuracy(&rows[a], &rows[b]));
    let top: Vec<usize> = order.iter().copied().take(SLOTS).collect();

    let floor = baseline_acc - tolerance;
    let mut meeting: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].val_acc >= floor).collect();
    meeting.sort_by(|&a, &b| by_compression(&rows[a], &rows[b]));
    let mut compressed: Vec<(usize, bool)> = meeting.into_iter().take(SLOTS).map(|i| (i, false)).collect();
    if compressed.len() < SLOTS {
        let fill: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&i| rows[i].val_acc < floor)
            .take(SLOTS - compressed.len())
            .collect();
        compressed.extend(fill.into_iter().map(|i| (i, true)));
    }

    let mut picks: Vec<CandidatePick> = top
        .iter()
        .map(|&i| CandidatePick {
            index: i,
            high_accuracy: true,
            compressed: false,
            near_miss: false,
        })
        .collect();
    for (i, miss) in compressed {
        match picks.iter_mut().find(|p| p.index == i) {
            Some(p) => {
                p.compressed = true;
                p.near_miss |= miss;
            }
            None => picks.push(CandidatePick {
                index: i,
                high_accuracy: false,
                compressed: true,
                near_miss: miss,
            }),
        }
    }
    CandidateSet { picks }
}

/// Per-scheme templates and the compression budgets of synthesis cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub schemes: Vec<Scheme>,
    /// Prune budgets of B and C cells as fractions of the seeding
    /// network's active connections.
    pub final_fractions: Vec<f64>,
    pub scheme_a: SchemeConfig,
    pub scheme_b: SchemeConfig,
    pub scheme_c: SchemeConfig,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        let get = |n: &str| SchemeConfig::preset(n).expect("builtin preset");
        Self {
            schemes: vec![Scheme::A, Scheme::B, Scheme::C],
            final_fractions: vec![0.3],
            scheme_a: get("toy-a"),
            scheme_b: get("toy-b"),
            scheme_c: get("toy-c"),
        }
    }
}

impl SynthesisConfig {
    pub fn template(&self, s: Scheme) -> &SchemeConfig {
        match s {
            Scheme::A => &self.scheme_a,
            Scheme::B => &self.scheme_b,
            Scheme::C => &self.scheme_c,
        }
    }

    /// Scheme config derived from a seeding network: A is capped at its
    /// connection count, B and C prune to a fraction of its weights.
    pub fn derive(&self, scheme: Scheme, seed_net: &NetworkTopology, fraction: Option<f64>, seed: u64) -> Result<SchemeConfig> {
        let mut cfg = self.template(scheme).clone();
        cfg.scheme = scheme;
        cfg.seed = seed;
        cfg.max_connections = Some(seed_net.connection_count());
        match scheme {
            Scheme::A => {
                cfg.final_connections = None;
            }
            Scheme::B | Scheme::C => {
                let f = fraction.ok_or_else(|| Error::invalid("B and C cells need a final fraction"))?;
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::invalid(format!("final fraction must be in (0, 1], got {f}")));
                }
                let budget = ((seed_net.n_active() as f64 * f).round() as usize).max(1);
                cfg.final_connections = Some(budget);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mlp,
    Dr,
    Synth,
    DrSynth,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mlp => "mlp",
            Method::Dr => "dr",
            Method::Synth => "synth",
            Method::DrSynth => "dr+synth",
        }
    }
}

/// One line of the sweep results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: Method,
    pub reducer: Option<ReducerKind>,
    pub k: Option<usize>,
    pub scheme: Option<Scheme>,
    pub final_fraction: Option<f64>,
    pub seed: u64,
    pub val_acc: f64,
    pub test_acc: Option<f64>,
    pub connections: usize,
    pub depth: usize,
    pub energy: f64,
    pub energy_with_reducer: f64,
}

pub const SWEEP_COLUMNS: [&str; 12] = [
    "method",
    "reducer",
    "k",
    "scheme",
    "final_fraction",
    "seed",
    "val_acc",
    "test_acc",
    "connections",
    "depth",
    "energy",
    "energy_with_reducer",
];

fn opt_str<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(String::new, T::to_string)
}

impl SweepRow {
    pub fn record(&self) -> Vec<String> {
        vec![
            self.method.name().to_string(),
            opt_str(&self.reducer.map(ReducerKind::name)),
            opt_str(&self.k),
            opt_str(&self.scheme.map(|s| format!("{s:?}"))),
            opt_str(&self.final_fraction),
            self.seed.to_string(),
            self.val_acc.to_string(),
            opt_str(&self.test_acc),
            self.connections.to_string(),
            self.depth.to_string(),
            format!("{:.2e}", self.energy),
            format!("{:.2e}", self.energy_with_reducer),
        ]
    }

    pub fn from_record(rec: &csv::StringRecord) -> Result<Self> {
        let field = |i: usize| rec.get(i).unwrap_or("");
        let bad = |what: &str| Error::Format(format!("sweep row: bad {what}"));
        let opt_parse = |i: usize| -> Option<&str> { Some(field(i)).filter(|s| !s.is_empty()) };
        let method = match field(0) {
            "mlp" => Method::Mlp,
            "dr" => Method::Dr,
            "synth" => Method::Synth,
            "dr+synth" => Method::DrSynth,
            _ => return Err(bad("method")),
        };
        let scheme = match opt_parse(3) {
            None => None,
            Some("A") => Some(Scheme::A),
            Some("B") => Some(Scheme::B),
            Some("C") => Some(Scheme::C),
            Some(_) => return Err(bad("scheme")),
        };
        Ok(Self {
            method,
            reducer: opt_parse(1).map(ReducerKind::parse).transpose()?,
            k: opt_parse(2).map(|s| s.parse().map_err(|_| bad("k"))).transpose()?,
            scheme,
            final_fraction: opt_parse(4).map(|s| s.parse().map_err(|_| bad("final_fraction"))).transpose()?,
            seed: field(5).parse().map_err(|_| bad("seed"))?,
            val_acc: field(6).parse().map_err(|_| bad("val_acc"))?,
            test_acc: opt_parse(7).map(|s| s.parse().map_err(|_| bad("test_acc"))).transpose()?,
            connections: field(8).parse().map_err(|_| bad("connections"))?,
            depth: field(9).parse().map_err(|_| bad("depth"))?,
            energy: field(10).parse().map_err(|_| bad("energy"))?,
            energy_with_reducer: field(11).parse().map_err(|_| bad("energy_with_reducer"))?,
        })
    }
}

pub fn write_sweep_csv(rows: &[SweepRow], w: impl std::io::Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_COLUMNS)?;
    for r in rows {
        out.write_record(r.record())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_sweep_csv(r: impl std::io::Read) -> Result<Vec<SweepRow>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.records().map(|rec| SweepRow::from_record(&rec?)).collect()
}

fn scheme_rank(s: Option<Scheme>) -> u8 {
    match s {
        Some(Scheme::C) => 0,
        Some(Scheme::B) => 1,
        Some(Scheme::A) => 2,
        None => 3,
    }
}

/// Highest validation accuracy, then fewer connections, then C over B over
/// A, then table order.
pub fn best_row<'a>(rows: impl IntoIterator<Item = (usize, &'a SweepRow)>) -> Option<usize> {
    let mut best: Option<(usize, &SweepRow)> = None;
    for (i, r) in rows {
        let better = match best {
            None => true,
            Some((_, b)) => {
                r.val_acc > b.val_acc
                    || (r.val_acc == b.val_acc
                        && (r.connections < b.connections
                            || (r.connections == b.connections && scheme_rank(r.scheme) < scheme_rank(b.scheme))))
            }
        };
        if better {
            best = Some((i, r));
        }
    }
    best.map(|(i, _)| i)
}

/// Fewest connections among rows within `tolerance` of `baseline_acc`,
/// ties to higher accuracy, then C over B over A.
pub fn most_compressed_row<'a>(
    rows: impl IntoIterator<Item = (usize, &'a SweepRow)>,
    baseline_acc: f64,
    tolerance: f64,
) -> Option<usize> {
    let mut best: Option<(usize, &SweepRow)> = None;
    for (i, r) in rows {
        if r.val_acc < baseline_acc - tolerance {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, b)) => {
                r.connections < b.connections
                    || (r.connections == b.connections
                        && (r.val_acc > b.val_acc
                            || (r.val_acc == b.val_acc && scheme_rank(r.scheme) < scheme_rank(b.scheme))))
            }
        };
        if better {
            best = Some((i, r));
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub baseline: BaselineSearchConfig,
    pub compression: CompressionConfig,
    pub synthesis: SynthesisConfig,
    /// Slack below the baseline accuracy that still counts as meeting it.
    #[serde(default)]
    pub tolerance: f64,
    /// Also run the schemes on full-width features from the baseline.
    #[serde(default = "yes")]
    pub synth_only: bool,
    #[serde(default)]
    pub energy: EnergyCostModel,
}

fn yes() -> bool {
    true
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            baseline: BaselineSearchConfig::default(),
            compression: CompressionConfig {
                reducers: ReducerKind::ALL.to_vec(),
                k_grid: None,
                optimizer: BaselineSearchConfig::default().optimizer,
            },
            synthesis: SynthesisConfig::default(),
            tolerance: 0.0,
            synth_only: true,
            energy: EnergyCostModel::default(),
        }
    }
}

/// Everything needed to run inference on raw features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format: String,
    pub features: FeaturePipeline,
    pub network: Checkpoint,
    pub label_map: LabelMap,
    pub metrics: ModelMetrics,
}

pub const BUNDLE_FORMAT: &str = "netsynth-bundle-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<Scheme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reducer: Option<ReducerKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub val_acc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_acc: Option<f64>,
    pub connections: usize,
    pub depth: usize,
    pub energy: f64,
    pub energy_with_reducer: f64,
}

impl From<&SweepRow> for ModelMetrics {
    fn from(r: &SweepRow) -> Self {
        Self {
            method: r.method,
            scheme: r.scheme,
            reducer: r.reducer,
            k: r.k,
            val_acc: r.val_acc,
            test_acc: r.test_acc,
            connections: r.connections,
            depth: r.depth,
            energy: r.energy,
            energy_with_reducer: r.energy_with_reducer,
        }
    }
}

impl ModelBundle {
    pub fn new(features: FeaturePipeline, net: &NetworkTopology, seed: u64, label_map: LabelMap, metrics: ModelMetrics) -> Self {
        Self {
            format: BUNDLE_FORMAT.into(),
            features,
            network: Checkpoint::from_network(net, seed),
            label_map,
            metrics,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let b: Self = serde_json::from_str(s)?;
        if b.format != BUNDLE_FORMAT {
            return Err(Error::Format(format!("unknown bundle format {:?}", b.format)));
        }
        Ok(b)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Dense class ids for raw feature rows.
    pub fn predict(&self, raw: &Matrix) -> Result<Vec<usize>> {
        if raw.cols() != self.features.input_width() {
            return Err(Error::FeatureWidth {
                expected: self.features.input_width(),
                got: raw.cols(),
            });
        }
        let net = self.network.to_network()?;
        if raw.rows() == 0 {
            return Ok(Vec::new());
        }
        net.predict(&self.features.apply(raw)?)
    }

    pub fn predict_labels(&self, raw: &Matrix) -> Result<Vec<String>> {
        Ok(self
            .predict(raw)?
            .into_iter()
            .map(|id| self.label_map.name(id).unwrap_or_default().to_string())
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineResult {
    pub baseline: BaselineResult,
    pub reduced: Vec<ReducedModel>,
    pub candidates: CandidateSet,
    pub rows: Vec<SweepRow>,
    /// Network behind each row of `rows`, with its feature pipeline.
    pub models: Vec<(FeaturePipeline, NetworkTopology)>,
}

impl PipelineResult {
    pub fn baseline_row(&self) -> &SweepRow {
        &self.rows[0]
    }

    fn rows_of(&self, m: Method) -> impl Iterator<Item = (usize, &SweepRow)> {
        self.rows.iter().enumerate().filter(move |(_, r)| r.method == m)
    }

    /// Highest-accuracy row of a method.
    pub fn highest_accuracy(&self, m: Method) -> Option<usize> {
        best_row(self.rows_of(m))
    }

    /// Most compressed row of a method meeting the baseline accuracy.
    pub fn most_compressed(&self, m: Method, tolerance: f64) -> Option<usize> {
        most_compressed_row(self.rows_of(m), self.baseline_row().val_acc, tolerance)
    }

    pub fn bundle(&self, row: usize, seed: u64, label_map: &LabelMap) -> ModelBundle {
        let r = &self.rows[row];
        let (features, net) = &self.models[row];
        ModelBundle::new(features.clone(), net, seed, label_map.clone(), r.into())
    }
}

impl SweepRow {
    /// Scores `net` on `data`, whose features already went through
    /// `reducer` when there is one.
    pub fn evaluate(
        method: Method,
        net: &NetworkTopology,
        data: &DataSplits,
        reducer: Option<&Reducer>,
        seed: u64,
        energy: &EnergyCostModel,
    ) -> Result<SweepRow> {
        let val_acc = net.accuracy(&data.val.x, &data.val.y)?;
        let test_acc = match &data.test {
            Some(t) => Some(net.accuracy(&t.x, &t.y)?),
            None => None,
        };
        let ops = count_ops(net);
        let e = estimate_energy(ops, energy);
        let e_red = match reducer {
            Some(r) => estimate_energy(ops + count_ops_reducer(r.d, r.k), energy),
            None => e,
        };
        Ok(SweepRow {
            method,
            reducer: reducer.map(|r| r.kind),
            k: reducer.map(|r| r.k),
            scheme: None,
            final_fraction: None,
            seed,
            val_acc,
            test_acc,
            connections: net.connection_count(),
            depth: net.depth().unwrap_or(0),
            energy: three_significant(e),
            energy_with_reducer: three_significant(e_red),
        })
    }

    pub fn with_scheme(mut self, scheme: Scheme, final_fraction: Option<f64>) -> Self {
        self.scheme = Some(scheme);
        self.final_fraction = final_fraction;
        self
    }
}

enum CellSource {
    Full,
    Candidate(usize),
}

struct Cell {
    source: CellSource,
    scheme: Scheme,
    fraction: Option<f64>,
}

/// The full sweep on raw (unnormalized) splits.
pub fn run_pipeline(raw: &DataSplits, cfg: &PipelineConfig, seed: u64, workers: usize) -> Result<PipelineResult> {
    let root = RandomSource::new(seed);
    let (data, normalizer) = normalize(raw)?;
    let identity = FeaturePipeline {
        normalizer: normalizer.clone(),
        reducer: None,
        renormalizer: None,
    };
    let baseline = find_baseline(&data, &cfg.baseline, &mut root.derive(1))?;
    let mut rows = vec![SweepRow::evaluate(Method::Mlp, &baseline.network, &data, None, seed, &cfg.energy)?];
    let mut models = vec![(identity.clone(), baseline.network.clone())];

    let reduced = compress_per_layer(&data, &baseline.layer_sizes, &cfg.compression, root.derive(2).seed(), workers)?;
    let mut reduced_features = Vec::with_capacity(reduced.len());
    for m in &reduced {
        let features = FeaturePipeline {
            normalizer: normalizer.clone(),
            reducer: Some(m.reducer.clone()),
            renormalizer: Some(m.renormalizer.clone()),
        };
        let splits = data.map_features(|x| features.apply_normalized(x))?;
        rows.push(SweepRow::evaluate(Method::Dr, &m.network, &splits, Some(&m.reducer), seed, &cfg.energy)?);
        models.push((features.clone(), m.network.clone()));
        reduced_features.push((features, splits));
    }

    let stats: Vec<CandidateStats> = reduced
        .iter()
        .map(|m| CandidateStats {
            reducer: m.reducer.kind,
            k: m.reducer.k,
            val_acc: m.val_acc,
            connections: m.connections,
        })
        .collect();
    let candidates = select_candidates(&stats, baseline.val_acc, cfg.tolerance);

    let mut cells = Vec::new();
    let mut sources = Vec::new();
    if cfg.synth_only {
        sources.push(CellSource::Full);
    }
    sources.extend(candidates.indices().into_iter().map(CellSource::Candidate));
    for source in sources {
        for &scheme in &cfg.synthesis.schemes {
            let fractions: Vec<Option<f64>> = match scheme {
                Scheme::A => vec![None],
                _ => cfg.synthesis.final_fractions.iter().map(|&f| Some(f)).collect(),
            };
            for fraction in fractions {
                cells.push(Cell {
                    source: match source {
                        CellSource::Full => CellSource::Full,
                        CellSource::Candidate(i) => CellSource::Candidate(i),
                    },
                    scheme,
                    fraction,
                });
            }
        }
    }

    let outcomes = run_parallel(workers, &cells, |idx, cell| {
        let mut rng = root.derive(10_000 + idx as u64);
        let (features, splits, seed_net, reducer, method) = match cell.source {
            CellSource::Full => (&identity, &data, &baseline.network, None, Method::Synth),
            CellSource::Candidate(i) => (
                &reduced_features[i].0,
                &reduced_features[i].1,
                &reduced[i].network,
                Some(&reduced[i].reducer),
                Method::DrSynth,
            ),
        };
        let scfg = cfg.synthesis.derive(cell.scheme, seed_net, cell.fraction, rng.seed())?;
        let result = match cell.scheme {
            Scheme::A => run_scheme(&scfg, splits, &mut rng)?,
            Scheme::B | Scheme::C => run_scheme_from(&scfg, splits, seed_net.clone(), &mut rng)?,
        };
        let row = SweepRow::evaluate(method, &result.best, splits, reducer, seed, &cfg.energy)?.with_scheme(cell.scheme, cell.fraction);
        info!(
            "{} scheme {:?} fraction {:?}: val {} with {} connections",
            method.name(),
            cell.scheme,
            cell.fraction,
            row.val_acc,
            row.connections
        );
        Ok((row, (features.clone(), result.best)))
    })?;
    for (row, model) in outcomes {
        rows.push(row);
        models.push(model);
    }
    Ok(PipelineResult {
        baseline,
        reduced,
        candidates,
        rows,
        models,
    })
}
