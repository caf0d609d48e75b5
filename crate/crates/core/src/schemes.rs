//! Weight training and the three synthesis schemes: constructive growth on
//! a general DAG (A), prune/grow-back on a general DAG (B) and prune/grow-back
//! restricted to adjacent layers of an MLP (C).
//!
//! A scheme run is an optional list of initial steps followed by
//! `max_iterations` repetitions of a per-iteration step list. Every training
//! step appends a history row; rows flagged as candidates compete for the
//! returned best network.

use std::io::Write;
use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::data::{DataSplits, LabeledSet};
use crate::error::{Error, Result};
use crate::network::{EvalPlan, NetworkTopology, Workspace};
use crate::numerics::{Matrix, RandomSource};
use crate::ops::{
    self, fraction_count, grow_connections, grow_neuron, possible_connections, prune_connections, prune_random,
    GrowthAmount, GrowthKind, GrowthPolicy, NeuronGrowthPolicy, PrunePolicy,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs_per_iteration: usize,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
}

fn default_momentum() -> f64 {
    0.9
}
fn default_batch() -> usize {
    64
}
fn default_epochs() -> usize {
    10
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum,
            learning_rate,
            momentum,
            weight_decay,
            batch_size: default_batch(),
            epochs_per_iteration: default_epochs(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_eps(),
        }
    }

    pub fn adam(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            ..Self::sgd(learning_rate, 0.0, weight_decay)
        }
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs_per_iteration = epochs;
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }

    /// Learning rate 0 is allowed so a run can freeze weights.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!("learning rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid(format!("weight decay must be >= 0, got {}", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::invalid("adam needs beta1, beta2 in [0, 1) and epsilon > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainReport {
    pub epochs: usize,
    /// Mean minibatch loss over the last epoch.
    pub loss: f64,
}

/// Minibatch training of the active weights and all biases. Inactive
/// entries stay exactly zero. On a non-finite loss the network is restored
/// to its state at entry and [`Error::Divergence`] is returned.
pub fn train_weights(
    net: &mut NetworkTopology,
    train: &LabeledSet,
    opt: &OptimizerConfig,
    epochs: usize,
    rng: &mut RandomSource,
) -> Result<TrainReport> {
    opt.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    if train.x.cols() != net.n_in() {
        return Err(Error::FeatureWidth {
            expected: net.n_in(),
            got: train.x.cols(),
        });
    }
    if let Some(&bad) = train.y.iter().find(|&&l| l >= net.n_out()) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: net.n_out(),
        });
    }
    let snapshot = net.clone();
    let plan = EvalPlan::new(net);
    let n = net.n_neurons();
    let active: Vec<usize> = net
        .mask()
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m != 0.0)
        .map(|(k, _)| k)
        .collect();
    let nb = net.bias().len();
    let adam = opt.kind == OptimizerKind::Adam;
    let mut m_w = vec![0.0; active.len()];
    let mut m_b = vec![0.0; nb];
    let (mut v_w, mut v_b) = if adam {
        (vec![0.0; active.len()], vec![0.0; nb])
    } else {
        (Vec::new(), Vec::new())
    };
    let mut d_weights = Matrix::zeros(n, n);
    let mut d_bias = vec![0.0; nb];
    let bs = opt.batch_size.min(train.len());
    let mut ws = Workspace::new(bs, n);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut labels = Vec::with_capacity(bs);
    let mut step = 0i32;
    let mut last_loss = 0.0;
    let lr = opt.learning_rate;

    for epoch in 0..epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(bs) {
            let batch = train.x.select_rows(chunk);
            labels.clear();
            labels.extend(chunk.iter().map(|&i| train.y[i]));
            let loss = net.backprop(&plan, &batch, &labels, opt.weight_decay, &mut ws, &mut d_weights, &mut d_bias);
            if !loss.is_finite() {
                *net = snapshot;
                return Err(Error::Divergence { epoch: epoch + 1 });
            }
            total += loss;
            batches += 1;
            step += 1;
            let g = d_weights.as_slice();
            if adam {
                let c1 = 1.0 - opt.beta1.powi(step);
                let c2 = 1.0 - opt.beta2.powi(step);
                let w = net.weights_mut().as_mut_slice();
                for (k, &idx) in active.iter().enumerate() {
                    let gk = g[idx];
                    m_w[k] = opt.beta1 * m_w[k] + (1.0 - opt.beta1) * gk;
                    v_w[k] = opt.beta2 * v_w[k] + (1.0 - opt.beta2) * gk * gk;
                    w[idx] -= lr * (m_w[k] / c1) / ((v_w[k] / c2).sqrt() + opt.epsilon);
                }
                let b = net.bias_mut();
                for k in 0..nb {
                    let gk = d_bias[k];
                    m_b[k] = opt.beta1 * m_b[k] + (1.0 - opt.beta1) * gk;
                    v_b[k] = opt.beta2 * v_b[k] + (1.0 - opt.beta2) * gk * gk;
                    b[k] -= lr * (m_b[k] / c1) / ((v_b[k] / c2).sqrt() + opt.epsilon);
                }
            } else {
                let mu = opt.momentum;
                let w = net.weights_mut().as_mut_slice();
                for (k, &idx) in active.iter().enumerate() {
                    m_w[k] = mu * m_w[k] + g[idx];
                    w[idx] -= lr * m_w[k];
                }
                let b = net.bias_mut();
                for k in 0..nb {
                    m_b[k] = mu * m_b[k] + d_bias[k];
                    b[k] -= lr * m_b[k];
                }
            }
        }
        last_loss = total / batches.max(1) as f64;
    }
    if !net.weights().is_finite() || net.bias().iter().any(|b| !b.is_finite()) {
        *net = snapshot;
        return Err(Error::Divergence { epoch: epochs });
    }
    Ok(TrainReport { epochs, loss: last_loss })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    A,
    B,
    C,
}

/// How many connections a growth step activates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowAmount {
    /// Fraction of the currently inactive candidates.
    FractionOfInactive(f64),
    /// Fraction of all structurally possible connections, added on top.
    FractionOfPossible(f64),
    /// Grow until this fraction of all possible connections is active.
    TargetFractionOfPossible(f64),
    Count(usize),
    /// Every candidate.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneRule {
    Threshold(f64),
    Budget(usize),
    /// Budget equal to the configured `final_connections`.
    Final,
    /// Magnitude-prune this fraction of the active connections.
    FractionOfExisting(f64),
    /// Uniformly drop this fraction of the active connections.
    Random(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Step {
    Train {
        /// Overrides the optimizer's epochs per iteration.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        epochs: Option<usize>,
        /// Whether the trained network competes for the best checkpoint.
        #[serde(default = "default_true")]
        candidate: bool,
    },
    GrowConnections {
        kind: GrowthKind,
        amount: GrowAmount,
    },
    GrowNeurons {
        count: usize,
    },
    Prune {
        rule: PruneRule,
    },
}

fn default_true() -> bool {
    true
}

impl Step {
    pub fn train() -> Self {
        Step::Train {
            epochs: None,
            candidate: true,
        }
    }

    pub fn train_silent() -> Self {
        Step::Train {
            epochs: None,
            candidate: false,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Step::Train { .. } => "train",
            Step::GrowConnections { .. } => "grow_connections",
            Step::GrowNeurons { .. } => "grow_neurons",
            Step::Prune { .. } => "prune",
        }
    }
}

/// Architecture a scheme starts from when none is supplied.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InitialNetwork {
    /// Hidden layer widths. Empty means one layer of `max(4, classes)`.
    #[serde(default)]
    pub hidden: Vec<usize>,
    /// Fraction of connections dropped uniformly before the first step.
    #[serde(default)]
    pub random_prune: f64,
    /// Activate every legal skip connection with zero weight.
    #[serde(default)]
    pub skip_connections: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    #[serde(default)]
    pub seed: u64,
    pub max_iterations: usize,
    /// Cap on hidden neurons for neuron growth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_neurons: Option<usize>,
    /// Cap on the connection count (weights plus biases) for growth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_connections: Option<usize>,
    /// Weight budget used by [`PruneRule::Final`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_connections: Option<usize>,
    #[serde(default)]
    pub initial: InitialNetwork,
    /// Training rows sampled for gradient growth and activation division.
    #[serde(default = "default_growth_batch")]
    pub growth_batch: usize,
    #[serde(default)]
    pub neuron_growth: NeuronGrowthPolicy,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub initial_steps: Vec<Step>,
    pub steps: Vec<Step>,
}

fn default_growth_batch() -> usize {
    256
}

impl SchemeConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        if let (Some(f), Some(m)) = (self.final_connections, self.max_connections) {
            if f > m {
                return Err(Error::invalid(format!("final_connections {f} exceeds max_connections {m}")));
            }
        }
        if !(0.0..1.0).contains(&self.initial.random_prune) {
            return Err(Error::invalid("initial random_prune must be in [0, 1)"));
        }
        for step in self.initial_steps.iter().chain(&self.steps) {
            match step {
                Step::Prune { rule: PruneRule::Final } if self.final_connections.is_none() => {
                    return Err(Error::invalid("prune rule `final` needs final_connections"));
                }
                Step::Prune {
                    rule: PruneRule::FractionOfExisting(f) | PruneRule::Random(f),
                } if !(0.0..=1.0).contains(f) => {
                    return Err(Error::invalid(format!("prune fraction must be in [0, 1], got {f}")));
                }
                Step::GrowConnections {
                    amount:
                        GrowAmount::FractionOfInactive(f)
                        | GrowAmount::FractionOfPossible(f)
                        | GrowAmount::TargetFractionOfPossible(f),
                    ..
                } if !(*f > 0.0 && *f <= 1.0) => {
                    return Err(Error::invalid(format!("growth fraction must be in (0, 1], got {f}")));
                }
                _ => {}
            }
        }
        if self.scheme == Scheme::C && self.initial.skip_connections {
            return Err(Error::invalid("scheme C cannot start with skip connections"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Named configurations. `mnist-*` follow the published MNIST recipes
    /// scaled to an MLP; `toy-*` are small and fast.
    pub fn preset(name: &str) -> Result<Self> {
        let sgd = OptimizerConfig::sgd(0.03, 0.9, 1e-4);
        let cfg = match name {
            "mnist-a" => Self {
                scheme: Scheme::A,
                seed: 0,
                max_iterations: 5,
                max_neurons: None,
                max_connections: None,
                final_connections: None,
                initial: InitialNetwork {
                    hidden: vec![400],
                    random_prune: 0.95,
                    skip_connections: false,
                },
                growth_batch: default_growth_batch(),
                neuron_growth: NeuronGrowthPolicy::default(),
                optimizer: sgd.with_epochs(3),
                initial_steps: vec![Step::train()],
                steps: vec![
                    Step::GrowConnections {
                        kind: GrowthKind::Gradient,
                        amount: GrowAmount::FractionOfPossible(0.3),
                    },
                    Step::train_silent(),
                    Step::Prune {
                        rule: PruneRule::FractionOfExisting(0.25),
                    },
                    Step::train(),
                ],
            },
            "mnist-b" => Self {
                scheme: Scheme::B,
                final_connections: Some(16_000),
                initial: InitialNetwork {
                    hidden: vec![500],
                    ..Default::default()
                },
                initial_steps: vec![Step::train_silent()],
                steps: vec![
                    Step::Prune { rule: PruneRule::Final },
                    Step::train(),
                    Step::GrowConnections {
                        kind: GrowthKind::Gradient,
                        amount: GrowAmount::TargetFractionOfPossible(0.9),
                    },
                    Step::train_silent(),
                ],
                ..Self::preset("mnist-a")?
            },
            "mnist-c" => Self {
                scheme: Scheme::C,
                final_connections: Some(6_000),
                steps: vec![
                    Step::Prune { rule: PruneRule::Final },
                    Step::train(),
                    Step::GrowConnections {
                        kind: GrowthKind::Full,
                        amount: GrowAmount::All,
                    },
                    Step::train_silent(),
                ],
                ..Self::preset("mnist-b")?
            },
            "toy-a" => Self {
                initial: InitialNetwork::default(),
                optimizer: OptimizerConfig::adam(0.01, 1e-4).with_epochs(20).with_batch_size(32),
                max_iterations: 4,
                max_neurons: Some(32),
                steps: vec![
                    Step::GrowNeurons { count: 2 },
                    Step::GrowConnections {
                        kind: GrowthKind::Gradient,
                        amount: GrowAmount::FractionOfInactive(0.5),
                    },
                    Step::train_silent(),
                    Step::Prune {
                        rule: PruneRule::FractionOfExisting(0.1),
                    },
                    Step::train(),
                ],
                ..Self::preset("mnist-a")?
            },
            "toy-b" => Self {
                scheme: Scheme::B,
                final_connections: Some(60),
                initial: InitialNetwork {
                    hidden: vec![16, 16],
                    random_prune: 0.0,
                    skip_connections: true,
                },
                initial_steps: vec![Step::train_silent()],
                steps: vec![
                    Step::Prune { rule: PruneRule::Final },
                    Step::train(),
                    Step::GrowConnections {
                        kind: GrowthKind::Gradient,
                        amount: GrowAmount::TargetFractionOfPossible(0.9),
                    },
                    Step::train_silent(),
                ],
                ..Self::preset("toy-a")?
            },
            "toy-c" => Self {
                scheme: Scheme::C,
                initial: InitialNetwork {
                    hidden: vec![16, 16],
                    ..Default::default()
                },
                steps: vec![
                    Step::Prune { rule: PruneRule::Final },
                    Step::train(),
                    Step::GrowConnections {
                        kind: GrowthKind::Full,
                        amount: GrowAmount::All,
                    },
                    Step::train_silent(),
                ],
                ..Self::preset("toy-b")?
            },
            other => return Err(Error::invalid(format!("unknown preset {other:?}"))),
        };
        Ok(cfg)
    }
}

/// One row of the per-run history log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: usize,
    pub step: usize,
    pub candidate: bool,
    pub train_loss: f64,
    pub val_acc: f64,
    pub connections: usize,
    pub neurons: usize,
    pub depth: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub best: NetworkTopology,
    /// Index into `history` of the row the best network was taken at.
    pub best_row: usize,
    pub history: Vec<HistoryRow>,
    pub test_acc: Option<f64>,
    /// Final network after the last step, whatever its score.
    pub last: NetworkTopology,
}

impl SynthesisResult {
    pub fn best_val_acc(&self) -> f64 {
        self.history[self.best_row].val_acc
    }

    pub fn best_record(&self) -> &HistoryRow {
        &self.history[self.best_row]
    }

    pub fn write_history_csv(&self, w: impl Write) -> Result<()> {
        write_history_csv(&self.history, w)
    }

    pub fn save_history_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_history_csv(std::io::BufWriter::new(f))
    }
}

pub fn write_history_csv(rows: &[HistoryRow], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "iteration",
        "step",
        "candidate",
        "train_loss",
        "val_acc",
        "connections",
        "neurons",
        "depth",
        "learning_rate",
    ])?;
    for r in rows {
        out.write_record([
            r.iteration.to_string(),
            r.step.to_string(),
            u8::from(r.candidate).to_string(),
            r.train_loss.to_string(),
            r.val_acc.to_string(),
            r.connections.to_string(),
            r.neurons.to_string(),
            r.depth.to_string(),
            r.learning_rate.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Builds the starting network of a scheme from its configuration.
pub fn initial_network(cfg: &SchemeConfig, n_in: usize, n_out: usize, rng: &mut RandomSource) -> Result<NetworkTopology> {
    let hidden = if cfg.initial.hidden.is_empty() {
        vec![n_out.max(4)]
    } else {
        cfg.initial.hidden.clone()
    };
    let mut sizes = vec![n_in];
    sizes.extend(&hidden);
    sizes.push(n_out);
    let mut net = NetworkTopology::from_mlp(&sizes, rng)?;
    if cfg.initial.skip_connections {
        grow_connections(&mut net, &GrowthPolicy::full(), rng)?;
    }
    if cfg.initial.random_prune > 0.0 {
        prune_random(&mut net, cfg.initial.random_prune, rng)?;
    }
    Ok(net)
}

pub fn run_scheme_a(cfg: &SchemeConfig, data: &DataSplits, rng: &mut RandomSource) -> Result<SynthesisResult> {
    expect_scheme(cfg, Scheme::A)?;
    run_scheme(cfg, data, rng)
}

pub fn run_scheme_b(cfg: &SchemeConfig, data: &DataSplits, rng: &mut RandomSource) -> Result<SynthesisResult> {
    expect_scheme(cfg, Scheme::B)?;
    run_scheme(cfg, data, rng)
}

pub fn run_scheme_c(cfg: &SchemeConfig, data: &DataSplits, rng: &mut RandomSource) -> Result<SynthesisResult> {
    expect_scheme(cfg, Scheme::C)?;
    run_scheme(cfg, data, rng)
}

fn expect_scheme(cfg: &SchemeConfig, s: Scheme) -> Result<()> {
    if cfg.scheme != s {
        return Err(Error::invalid(format!("expected a scheme {s:?} config, got {:?}", cfg.scheme)));
    }
    Ok(())
}

/// Runs the scheme named by `cfg` from its configured initial network.
pub fn run_scheme(cfg: &SchemeConfig, data: &DataSplits, rng: &mut RandomSource) -> Result<SynthesisResult> {
    cfg.validate()?;
    let net = initial_network(cfg, data.n_features(), data.n_classes, rng)?;
    run_scheme_from(cfg, data, net, rng)
}

/// Runs the scheme named by `cfg` starting from `net`, e.g. a trained
/// baseline.
pub fn run_scheme_from(
    cfg: &SchemeConfig,
    data: &DataSplits,
    net: NetworkTopology,
    rng: &mut RandomSource,
) -> Result<SynthesisResult> {
    cfg.validate()?;
    if net.n_in() != data.n_features() || net.n_out() != data.n_classes {
        return Err(Error::invalid(format!(
            "network is {}->{}, data is {}->{}",
            net.n_in(),
            net.n_out(),
            data.n_features(),
            data.n_classes
        )));
    }
    if cfg.scheme == Scheme::C && net.layers().is_none() {
        return Err(Error::invalid("scheme C needs a layered MLP"));
    }
    let mut run = Runner {
        cfg,
        data,
        net,
        lr: cfg.optimizer.learning_rate,
        history: Vec::new(),
        best: None,
        last_loss: f64::NAN,
    };
    const MAX_RETRIES: usize = 8;
    let mut retries = 0;
    loop {
        let snapshot = run.net.clone();
        let rows = run.history.len();
        match run.execute(&cfg.initial_steps, 0, rng) {
            Ok(()) => break,
            Err(Error::Divergence { epoch }) if retries < MAX_RETRIES => {
                retries += 1;
                run.diverged(snapshot, rows, 0, epoch);
            }
            Err(e) => return Err(e),
        }
    }
    for it in 1..=cfg.max_iterations {
        let snapshot = run.net.clone();
        let rows = run.history.len();
        match run.execute(&cfg.steps, it, rng) {
            Ok(()) => {}
            Err(Error::Divergence { epoch }) if retries < MAX_RETRIES => {
                retries += 1;
                run.diverged(snapshot, rows, it, epoch);
            }
            Err(e) => return Err(e),
        }
    }
    let (best_row, best) = match run.best {
        Some(b) => b,
        None => {
            // no candidate rows: score the final network
            run.record(0, true)?;
            run.best.take().expect("just recorded")
        }
    };
    let test_acc = match &data.test {
        Some(t) => Some(best.accuracy(&t.x, &t.y)?),
        None => None,
    };
    Ok(SynthesisResult {
        best,
        best_row,
        history: run.history,
        test_acc,
        last: run.net,
    })
}

struct Runner<'a> {
    cfg: &'a SchemeConfig,
    data: &'a DataSplits,
    net: NetworkTopology,
    lr: f64,
    history: Vec<HistoryRow>,
    best: Option<(usize, NetworkTopology)>,
    last_loss: f64,
}

impl Runner<'_> {
    fn diverged(&mut self, snapshot: NetworkTopology, rows: usize, iteration: usize, epoch: usize) {
        warn!(
            "iteration {iteration}: training diverged at epoch {epoch}; restoring and halving learning rate to {}",
            self.lr * 0.5
        );
        self.net = snapshot;
        self.lr *= 0.5;
        self.history.truncate(rows);
        if let Some((row, _)) = &self.best {
            if *row >= rows {
                self.best = None;
            }
        }
    }

    fn execute(&mut self, steps: &[Step], iteration: usize, rng: &mut RandomSource) -> Result<()> {
        for (k, step) in steps.iter().enumerate() {
            self.apply(step, rng)?;
            if let Step::Train { candidate, .. } = step {
                let row = self.record(iteration, *candidate)?;
                self.history[row].step = k;
            }
            info!(
                "iteration {iteration} step {k} ({}): {} connections, {} hidden",
                step.name(),
                self.net.connection_count(),
                self.net.n_hidden()
            );
        }
        Ok(())
    }

    fn record(&mut self, iteration: usize, candidate: bool) -> Result<usize> {
        let val_acc = self.net.accuracy(&self.data.val.x, &self.data.val.y)?;
        let row = HistoryRow {
            iteration,
            step: 0,
            candidate,
            train_loss: self.last_loss,
            val_acc,
            connections: self.net.connection_count(),
            neurons: self.net.n_hidden(),
            depth: self.net.depth().unwrap_or(0),
            learning_rate: self.lr,
        };
        let idx = self.history.len();
        if candidate {
            let better = match &self.best {
                None => true,
                Some((b, _)) => {
                    let cur = &self.history[*b];
                    val_acc > cur.val_acc || (val_acc == cur.val_acc && row.connections < cur.connections)
                }
            };
            if better {
                self.best = Some((idx, self.net.clone()));
            }
        }
        self.history.push(row);
        Ok(idx)
    }

    fn sample_batch(&self, rng: &mut RandomSource) -> (Matrix, Vec<usize>) {
        let train = &self.data.train;
        let idx = rng.sample_indices(train.len(), self.cfg.growth_batch.max(1));
        (train.x.select_rows(&idx), idx.iter().map(|&i| train.y[i]).collect())
    }

    fn apply(&mut self, step: &Step, rng: &mut RandomSource) -> Result<()> {
        let adjacent = self.cfg.scheme == Scheme::C;
        match *step {
            Step::Train { epochs, .. } => {
                let opt = OptimizerConfig {
                    learning_rate: self.lr,
                    ..self.cfg.optimizer.clone()
                };
                let epochs = epochs.unwrap_or(opt.epochs_per_iteration);
                let report = train_weights(&mut self.net, &self.data.train, &opt, epochs, rng)?;
                self.last_loss = report.loss;
            }
            Step::GrowConnections { kind, amount } => {
                let candidates = ops::growth_candidates(&self.net, adjacent).len();
                let possible = possible_connections(&self.net, adjacent);
                let active = self.net.n_active();
                let mut k = match amount {
                    GrowAmount::All => candidates,
                    GrowAmount::FractionOfInactive(f) => fraction_count(f, candidates),
                    GrowAmount::FractionOfPossible(f) => fraction_count(f, possible).min(candidates),
                    GrowAmount::TargetFractionOfPossible(f) => fraction_count(f, possible).saturating_sub(active),
                    GrowAmount::Count(c) => c.min(candidates),
                };
                if let Some(cap) = self.cfg.max_connections {
                    let room = cap.saturating_sub(self.net.connection_count());
                    if room < k {
                        info!("connection growth capped at {room} by max_connections {cap}");
                        k = room;
                    }
                }
                if k == 0 {
                    info!("connection growth: nothing to add");
                    return Ok(());
                }
                let kind = if kind == GrowthKind::Full && k < candidates {
                    GrowthKind::Gradient
                } else {
                    kind
                };
                let (bx, by) = self.sample_batch(rng);
                let policy = GrowthPolicy {
                    kind,
                    amount: GrowthAmount::Count(k),
                    batch: (kind == GrowthKind::Gradient).then_some((&bx, by.as_slice())),
                    adjacent_only: adjacent,
                };
                grow_connections(&mut self.net, &policy, rng)?;
            }
            Step::GrowNeurons { count } => {
                for _ in 0..count {
                    if let Some(cap) = self.cfg.max_neurons {
                        if self.net.n_hidden() >= cap {
                            info!("neuron growth: budget of {cap} hidden neurons reached");
                            break;
                        }
                    }
                    if adjacent && self.cfg.neuron_growth.kind == ops::NeuronGrowthKind::RandomFresh {
                        return Err(Error::invalid("scheme C only supports neuron division"));
                    }
                    let (bx, _) = self.sample_batch(rng);
                    grow_neuron(&mut self.net, &self.cfg.neuron_growth, Some(&bx), rng)?;
                }
            }
            Step::Prune { rule } => {
                let active = self.net.n_active();
                match rule {
                    PruneRule::Threshold(t) => {
                        prune_connections(&mut self.net, PrunePolicy::Threshold(t))?;
                    }
                    PruneRule::Budget(b) => {
                        prune_connections(&mut self.net, PrunePolicy::Budget(b))?;
                    }
                    PruneRule::Final => {
                        let b = self.cfg.final_connections.expect("validated");
                        prune_connections(&mut self.net, PrunePolicy::Budget(b))?;
                    }
                    PruneRule::FractionOfExisting(f) => {
                        let keep = active - fraction_count(f, active);
                        prune_connections(&mut self.net, PrunePolicy::Budget(keep))?;
                    }
                    PruneRule::Random(f) => {
                        prune_random(&mut self.net, f, rng)?;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two Gaussian blobs separated along every axis.
    fn blobs(n: usize, d: usize, seed: u64) -> LabeledSet {
        let mut rng = RandomSource::new(seed);
        let mut data = Vec::with_capacity(n * d);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % 2;
            let center = if c == 0 { -2.0 } else { 2.0 };
            for _ in 0..d {
                data.push(center + rng.normal(0.0, 0.5));
            }
            y.push(c);
        }
        LabeledSet::new(Matrix::from_vec(n, d, data).unwrap(), y).unwrap()
    }

    fn blob_splits(seed: u64) -> DataSplits {
        DataSplits {
            train: blobs(200, 4, seed),
            val: blobs(60, 4, seed + 1),
            test: Some(blobs(60, 4, seed + 2)),
            n_classes: 2,
        }
    }

    #[test]
    fn separable_blobs_are_learned() {
        let mut rng = RandomSource::new(1);
        let data = blobs(200, 4, 7);
        let mut net = NetworkTopology::from_mlp(&[4, 8, 2], &mut rng).unwrap();
        let opt = OptimizerConfig::sgd(0.05, 0.9, 0.0).with_batch_size(16);
        train_weights(&mut net, &data, &opt, 50, &mut rng).unwrap();
        assert!(net.accuracy(&data.x, &data.y).unwrap() >= 0.99);
    }

    #[test]
    fn zero_learning_rate_freezes_weights() {
        let mut rng = RandomSource::new(2);
        let data = blobs(40, 3, 1);
        let mut net = NetworkTopology::from_mlp(&[3, 5, 2], &mut rng).unwrap();
        let before = net.clone();
        for opt in [OptimizerConfig::sgd(0.0, 0.9, 1e-3), OptimizerConfig::adam(0.0, 1e-3)] {
            train_weights(&mut net, &data, &opt, 3, &mut rng).unwrap();
            assert_eq!(net, before);
        }
    }

    #[test]
    fn masked_entries_stay_zero() {
        let mut rng = RandomSource::new(3);
        let data = blobs(64, 3, 2);
        let mut net = NetworkTopology::from_mlp(&[3, 6, 4, 2], &mut rng).unwrap();
        prune_random(&mut net, 0.5, &mut rng).unwrap();
        for opt in [OptimizerConfig::sgd(0.05, 0.9, 1e-3), OptimizerConfig::adam(0.01, 1e-3)] {
            train_weights(&mut net, &data, &opt, 5, &mut rng).unwrap();
            let n = net.n_neurons();
            for i in 0..n {
                for j in 0..n {
                    if !net.is_active(i, j) {
                        assert_eq!(net.weights()[(i, j)].to_bits(), 0.0f64.to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn divergence_restores_weights() {
        let mut rng = RandomSource::new(4);
        let mut data = blobs(32, 3, 3);
        data.x = data.x.scale(1e200);
        let mut net = NetworkTopology::from_mlp(&[3, 4, 2], &mut rng).unwrap();
        let before = net.clone();
        let r = train_weights(&mut net, &data, &OptimizerConfig::sgd(10.0, 0.9, 0.0), 5, &mut rng);
        assert!(matches!(r, Err(Error::Divergence { .. })));
        assert_eq!(net, before);
    }

    #[test]
    fn manifest_round_trips() {
        for name in ["mnist-a", "mnist-b", "mnist-c", "toy-a", "toy-b", "toy-c"] {
            let mut cfg = SchemeConfig::preset(name).unwrap();
            cfg.optimizer.learning_rate = 0.1 + 0.2;
            let text = cfg.to_toml().unwrap();
            let back = SchemeConfig::from_toml(&text).unwrap();
            assert_eq!(back, cfg, "{name}");
            assert_eq!(back.optimizer.learning_rate.to_bits(), (0.1f64 + 0.2).to_bits());
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = SchemeConfig::preset("toy-b").unwrap();
        cfg.max_connections = Some(10);
        assert!(cfg.validate().is_err());
        let mut cfg = SchemeConfig::preset("toy-b").unwrap();
        cfg.max_iterations = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = SchemeConfig::preset("toy-b").unwrap();
        cfg.optimizer.momentum = 1.0;
        assert!(cfg.validate().is_err());
        assert!(run_scheme_a(&SchemeConfig::preset("toy-b").unwrap(), &blob_splits(0), &mut RandomSource::new(0)).is_err());
    }

    #[test]
    fn noop_single_iteration_returns_trained_seed() {
        let data = blob_splits(5);
        let mut cfg = SchemeConfig::preset("toy-a").unwrap();
        cfg.max_iterations = 1;
        cfg.initial_steps = vec![];
        cfg.steps = vec![Step::train()];
        let r = run_scheme_a(&cfg, &data, &mut RandomSource::new(9)).unwrap();
        assert_eq!(r.history.len(), 1);
        assert_eq!(r.best.n_hidden(), 4);
        assert_eq!(r.best, r.last);

        let mut rng = RandomSource::new(9);
        let mut seed_net = initial_network(&cfg, 4, 2, &mut rng).unwrap();
        train_weights(&mut seed_net, &data.train, &cfg.optimizer, cfg.optimizer.epochs_per_iteration, &mut rng).unwrap();
        assert_eq!(seed_net, r.best);
    }

    #[test]
    fn scheme_c_keeps_layering_and_depth() {
        let data = blob_splits(6);
        let cfg = SchemeConfig::preset("toy-c").unwrap();
        let r = run_scheme_c(&cfg, &data, &mut RandomSource::new(1)).unwrap();
        assert!(r.history.iter().all(|h| h.depth == 3));
        let tags = r.best.layers().unwrap();
        for (i, j) in r.best.active_connections() {
            assert_eq!(tags[j], tags[i] + 1);
        }
    }

    #[test]
    fn scheme_b_reports_pruned_model() {
        let data = blob_splits(7);
        let cfg = SchemeConfig::preset("toy-b").unwrap();
        let r = run_scheme_b(&cfg, &data, &mut RandomSource::new(2)).unwrap();
        assert!(r.best.n_active() <= 60);
        assert!(r.best_val_acc() >= 0.95);
        let max = r.history.iter().filter(|h| h.candidate).map(|h| h.val_acc).fold(0.0, f64::max);
        assert_eq!(r.best_val_acc(), max);
    }

    #[test]
    fn runs_are_deterministic() {
        let data = blob_splits(8);
        let cfg = SchemeConfig::preset("toy-a").unwrap();
        let a = run_scheme_a(&cfg, &data, &mut RandomSource::new(3)).unwrap();
        let b = run_scheme_a(&cfg, &data, &mut RandomSource::new(3)).unwrap();
        assert_eq!(a, b);
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        a.write_history_csv(&mut ca).unwrap();
        b.write_history_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
        assert!(a.last.n_hidden() > 4);
    }

    #[test]
    fn best_is_monotone_in_iterations() {
        let data = blob_splits(9);
        let mut prev = 0.0;
        for it in 1..=3 {
            let mut cfg = SchemeConfig::preset("toy-b").unwrap();
            cfg.max_iterations = it;
            let r = run_scheme_b(&cfg, &data, &mut RandomSource::new(4)).unwrap();
            assert!(r.best_val_acc() >= prev);
            prev = r.best_val_acc();
        }
    }

    /// With one hidden layer, threshold pruning and full restore, the scheme
    /// must follow the hand-written prune-retrain-restore loop exactly.
    #[test]
    fn threshold_restore_loop_matches_reference() {
        let data = blob_splits(10);
        let cfg = SchemeConfig {
            scheme: Scheme::C,
            max_iterations: 3,
            initial: InitialNetwork {
                hidden: vec![6],
                ..Default::default()
            },
            initial_steps: vec![Step::train_silent()],
            steps: vec![
                Step::Prune {
                    rule: PruneRule::Threshold(0.3),
                },
                Step::train(),
                Step::GrowConnections {
                    kind: GrowthKind::Full,
                    amount: GrowAmount::All,
                },
                Step::train_silent(),
            ],
            optimizer: OptimizerConfig::sgd(0.02, 0.9, 0.0).with_epochs(2),
            ..SchemeConfig::preset("toy-c").unwrap()
        };
        let r = run_scheme_c(&cfg, &data, &mut RandomSource::new(5)).unwrap();

        let mut rng = RandomSource::new(5);
        let mut net = NetworkTopology::from_mlp(&[4, 6, 2], &mut rng).unwrap();
        let opt = &cfg.optimizer;
        train_weights(&mut net, &data.train, opt, 2, &mut rng).unwrap();
        let mut masks = Vec::new();
        for _ in 0..3 {
            prune_connections(&mut net, PrunePolicy::Threshold(0.3)).unwrap();
            train_weights(&mut net, &data.train, opt, 2, &mut rng).unwrap();
            masks.push(net.mask().clone());
            // full growth samples a batch even though it does not use it
            rng.sample_indices(data.train.len(), cfg.growth_batch);
            grow_connections(&mut net, &GrowthPolicy::full().adjacent_only(true), &mut rng).unwrap();
            train_weights(&mut net, &data.train, opt, 2, &mut rng).unwrap();
        }
        assert_eq!(r.last, net);
        let best_iter = r.best_record().iteration;
        assert_eq!(r.best.mask(), &masks[best_iter - 1]);
    }
}
