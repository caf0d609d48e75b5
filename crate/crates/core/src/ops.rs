//! The three architecture-changing operations: connection growth, neuron
//! growth and magnitude-based connection pruning.
//!
//! All operations mutate a network in place and keep every topology
//! invariant. Ties are broken by lexicographic `(i, j)` order.

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{argmax, NetworkTopology};
use crate::numerics::{gemm, Matrix, RandomSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthKind {
    /// Activate every candidate.
    Full,
    /// Activate uniformly chosen candidates.
    Random,
    /// Activate the candidates with the largest mean `|dL/du_j * x_i|`.
    Gradient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GrowthAmount {
    /// `ceil(f * |candidates|)` with `0 < f <= 1`.
    FractionOfInactive(f64),
    /// Exact count, clipped to the number of candidates.
    Count(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct GrowthPolicy<'a> {
    pub kind: GrowthKind,
    pub amount: GrowthAmount,
    /// Minibatch and labels, required by [`GrowthKind::Gradient`].
    pub batch: Option<(&'a Matrix, &'a [usize])>,
    /// Restrict candidates to adjacent layers (MLP-only growth).
    pub adjacent_only: bool,
}

impl<'a> GrowthPolicy<'a> {
    pub fn full() -> Self {
        Self {
            kind: GrowthKind::Full,
            amount: GrowthAmount::FractionOfInactive(1.0),
            batch: None,
            adjacent_only: false,
        }
    }

    pub fn random(amount: GrowthAmount) -> Self {
        Self {
            kind: GrowthKind::Random,
            amount,
            batch: None,
            adjacent_only: false,
        }
    }

    pub fn gradient(amount: GrowthAmount, batch: &'a Matrix, labels: &'a [usize]) -> Self {
        Self {
            kind: GrowthKind::Gradient,
            amount,
            batch: Some((batch, labels)),
            adjacent_only: false,
        }
    }

    pub fn adjacent_only(mut self, yes: bool) -> Self {
        self.adjacent_only = yes;
        self
    }
}

/// Inactive connections that growth may activate, in lexicographic order.
pub fn growth_candidates(net: &NetworkTopology, adjacent_only: bool) -> Vec<(usize, usize)> {
    let n = net.n_neurons();
    let mut out = Vec::new();
    for i in 0..net.n_in() + net.n_hidden() {
        for j in (i + 1).max(net.n_in())..n {
            if !net.is_active(i, j) && net.is_candidate(i, j, adjacent_only) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Number of structurally possible connections (active or not).
pub fn possible_connections(net: &NetworkTopology, adjacent_only: bool) -> usize {
    let n = net.n_neurons();
    let mut count = 0;
    for i in 0..net.n_in() + net.n_hidden() {
        for j in (i + 1).max(net.n_in())..n {
            if net.is_candidate(i, j, adjacent_only) {
                count += 1;
            }
        }
    }
    count
}

/// `ceil(fraction * n)` tolerant to representation error, e.g. `0.3 * 100`.
pub fn fraction_count(fraction: f64, n: usize) -> usize {
    let raw = fraction * n as f64;
    let rounded = raw.round();
    let v = if (raw - rounded).abs() < 1e-9 { rounded } else { raw.ceil() };
    (v.max(0.0) as usize).min(n)
}

/// Batch-mean `|dL/du_j * x_i|` for every pair, as an `N x N` matrix.
pub fn gradient_growth_scores(net: &NetworkTopology, batch: &Matrix, labels: &[usize]) -> Result<Matrix> {
    let grads = net.loss_and_gradients(batch, labels, 0.0)?;
    let trace = net.forward(batch)?;
    // d_pre is the gradient of the batch-mean loss, i.e. the per-sample
    // gradient divided by the batch size, so this product is already the mean.
    let abs_x = trace.x.map(f64::abs);
    let abs_du = grads.d_pre.map(f64::abs);
    let n = net.n_neurons();
    let mut scores = Matrix::zeros(n, n);
    gemm(1.0, abs_x.view().t(), abs_du.view(), 0.0, scores.view_mut());
    Ok(scores)
}

/// Activates candidate connections with zero weight. Returns how many were
/// added.
pub fn grow_connections(net: &mut NetworkTopology, policy: &GrowthPolicy<'_>, rng: &mut RandomSource) -> Result<usize> {
    if policy.kind == GrowthKind::Gradient && policy.batch.is_none() {
        return Err(Error::invalid("gradient growth needs a data batch"));
    }
    if let GrowthAmount::FractionOfInactive(f) = policy.amount {
        if policy.kind != GrowthKind::Full && !(f > 0.0 && f <= 1.0) {
            return Err(Error::invalid(format!("growth fraction must be in (0, 1], got {f}")));
        }
    }
    let candidates = growth_candidates(net, policy.adjacent_only);
    if candidates.is_empty() {
        info!("connection growth: no candidate connections, nothing to do");
        return Ok(0);
    }
    let k = match (policy.kind, policy.amount) {
        (GrowthKind::Full, _) => candidates.len(),
        (_, GrowthAmount::FractionOfInactive(f)) => fraction_count(f, candidates.len()),
        (_, GrowthAmount::Count(c)) => c.min(candidates.len()),
    };
    let chosen: Vec<(usize, usize)> = match policy.kind {
        GrowthKind::Full => candidates,
        GrowthKind::Random => rng
            .sample_indices(candidates.len(), k)
            .into_iter()
            .map(|idx| candidates[idx])
            .collect(),
        GrowthKind::Gradient => {
            let (batch, labels) = policy.batch.expect("checked above");
            let scores = gradient_growth_scores(net, batch, labels)?;
            top_k_by(&candidates, k, |&(i, j)| scores[(i, j)])
        }
    };
    for &(i, j) in &chosen {
        net.connect(i, j, 0.0)?;
    }
    Ok(chosen.len())
}

/// The `k` entries with the largest key; equal keys keep input order.
fn top_k_by(items: &[(usize, usize)], k: usize, key: impl Fn(&(usize, usize)) -> f64) -> Vec<(usize, usize)> {
    let mut keyed: Vec<(f64, (usize, usize))> = items.iter().map(|p| (key(p), *p)).collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<(usize, usize)> = keyed.into_iter().take(k).map(|(_, p)| p).collect();
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeuronGrowthKind {
    /// Duplicate the hidden neuron with the largest preactivity statistic.
    DivisionActivation,
    /// Duplicate a uniformly chosen hidden neuron.
    DivisionRandom,
    /// Add a neuron with random wiring and Gaussian weights.
    RandomFresh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseStd {
    Absolute(f64),
    /// Multiple of the standard deviation of the parent's nonzero weights.
    RelativeToParent(f64),
}

/// Statistic for activation-based parent selection over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationStat {
    #[default]
    MeanPreactivity,
    MaxPreactivity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronGrowthPolicy {
    pub kind: NeuronGrowthKind,
    pub noise: NoiseStd,
    #[serde(default)]
    pub selection: ActivationStat,
    /// Fraction of legal in- and out-pairs wired by [`NeuronGrowthKind::RandomFresh`].
    pub fresh_connection_fraction: f64,
}

impl Default for NeuronGrowthPolicy {
    fn default() -> Self {
        Self {
            kind: NeuronGrowthKind::DivisionActivation,
            noise: NoiseStd::RelativeToParent(0.01),
            selection: ActivationStat::MeanPreactivity,
            fresh_connection_fraction: 0.5,
        }
    }
}

/// Parent chosen by activation-based selection: argmax over hidden neurons
/// of the batch statistic of `u`, lowest index on ties.
pub fn select_by_activation(net: &NetworkTopology, batch: &Matrix, stat: ActivationStat) -> Result<usize> {
    if net.n_hidden() == 0 {
        return Err(Error::NoHiddenNeuron);
    }
    let trace = net.forward(batch)?;
    let rows = batch.rows().max(1) as f64;
    let stats: Vec<f64> = net
        .hidden_range()
        .map(|h| {
            let col = (0..batch.rows()).map(|b| trace.u[(b, h)]);
            match stat {
                ActivationStat::MeanPreactivity => col.sum::<f64>() / rows,
                ActivationStat::MaxPreactivity => col.fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();
    Ok(net.n_in() + argmax(&stats))
}

/// Adds one hidden neuron. Returns its global index.
pub fn grow_neuron(
    net: &mut NetworkTopology,
    policy: &NeuronGrowthPolicy,
    batch: Option<&Matrix>,
    rng: &mut RandomSource,
) -> Result<usize> {
    match policy.kind {
        NeuronGrowthKind::DivisionActivation | NeuronGrowthKind::DivisionRandom => {
            if net.n_hidden() == 0 {
                return Err(Error::NoHiddenNeuron);
            }
            let parent = if policy.kind == NeuronGrowthKind::DivisionActivation {
                let batch = batch.ok_or_else(|| Error::invalid("activation-based division needs a data batch"))?;
                select_by_activation(net, batch, policy.selection)?
            } else {
                net.n_in() + rng.index(net.n_hidden())
            };
            divide_neuron(net, parent, policy.noise, rng)
        }
        NeuronGrowthKind::RandomFresh => {
            let f = policy.fresh_connection_fraction;
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::invalid(format!("fresh connection fraction must be in (0, 1], got {f}")));
            }
            let pos = net.n_in() + rng.index(net.n_hidden() + 1);
            net.insert_hidden(pos, 0.0, None);
            net.clear_layers();
            let sources = pos;
            let targets = net.n_neurons() - pos - 1;
            let srcs = rng.sample_indices(sources, fraction_count(f, sources).max(1));
            let std_in = (2.0 / srcs.len().max(1) as f64).sqrt();
            for &i in &srcs {
                let w = rng.normal(0.0, std_in);
                net.connect(i, pos, w)?;
            }
            let dsts = rng.sample_indices(targets, fraction_count(f, targets).max(1));
            for &d in &dsts {
                let j = pos + 1 + d;
                let fan_in = net.in_degree(j) + 1;
                let w = rng.normal(0.0, (2.0 / fan_in as f64).sqrt());
                net.connect(pos, j, w)?;
            }
            Ok(pos)
        }
    }
}

/// Duplicates hidden neuron `parent` into a child placed right after it.
/// The child copies the parent's in/out wiring and bias; its weights are the
/// parent's plus i.i.d. Gaussian noise.
pub fn divide_neuron(net: &mut NetworkTopology, parent: usize, noise: NoiseStd, rng: &mut RandomSource) -> Result<usize> {
    if !net.is_hidden(parent) {
        return Err(Error::invalid(format!("neuron {parent} is not hidden")));
    }
    let ins: Vec<(usize, f64)> = (0..parent)
        .filter(|&i| net.is_active(i, parent))
        .map(|i| (i, net.weights()[(i, parent)]))
        .collect();
    let outs: Vec<(usize, f64)> = ((parent + 1)..net.n_neurons())
        .filter(|&j| net.is_active(parent, j))
        .map(|j| (j, net.weights()[(parent, j)]))
        .collect();
    let std = match noise {
        NoiseStd::Absolute(s) => s,
        NoiseStd::RelativeToParent(f) => {
            let nz: Vec<f64> = ins.iter().chain(&outs).map(|&(_, w)| w).filter(|&w| w != 0.0).collect();
            let sd = if nz.len() > 1 {
                let mean = nz.iter().sum::<f64>() / nz.len() as f64;
                (nz.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (nz.len() - 1) as f64).sqrt()
            } else {
                nz.first().map_or(1.0, |w| w.abs())
            };
            f * sd
        }
    };
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::invalid(format!("noise std must be finite and >= 0, got {std}")));
    }
    let child = parent + 1;
    let bias = net.bias()[parent - net.n_in()];
    let tag = net.layers().map(|t| t[parent]);
    net.insert_hidden(child, bias, tag);
    for (i, w) in ins {
        let w = w + rng.normal(0.0, std);
        net.connect(i, child, w)?;
    }
    for (j, w) in outs {
        let w = w + rng.normal(0.0, std);
        net.connect(child, j + 1, w)?;
    }
    Ok(child)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrunePolicy {
    /// Deactivate every active connection with `|w| < t`.
    Threshold(f64),
    /// Keep exactly this many connections, the largest `|w|` first.
    Budget(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PruneReport {
    pub pruned_connections: usize,
    pub removed_neurons: usize,
}

/// Active connections that a magnitude prune under `policy` retains,
/// before isolated neurons are removed. Lexicographic order.
pub fn prune_survivors(net: &NetworkTopology, policy: PrunePolicy) -> Result<Vec<(usize, usize)>> {
    let active = net.active_connections();
    match policy {
        PrunePolicy::Threshold(t) => {
            if !(t >= 0.0) {
                return Err(Error::invalid(format!("prune threshold must be >= 0, got {t}")));
            }
            Ok(active
                .into_iter()
                .filter(|&(i, j)| net.weights()[(i, j)].abs() >= t)
                .collect())
        }
        PrunePolicy::Budget(k) => {
            if k >= active.len() {
                return Ok(active);
            }
            Ok(top_k_by(&active, k, |&(i, j)| net.weights()[(i, j)].abs()))
        }
    }
}

/// Magnitude pruning followed by removal of isolated hidden neurons.
pub fn prune_connections(net: &mut NetworkTopology, policy: PrunePolicy) -> Result<PruneReport> {
    let active = net.n_active();
    if let PrunePolicy::Budget(k) = policy {
        if k > active {
            info!("pruning: budget {k} exceeds {active} active connections, nothing to do");
            return Ok(PruneReport::default());
        }
    }
    let keep = prune_survivors(net, policy)?;
    apply_survivors(net, &keep, active)
}

/// Deactivates `ceil(fraction * active)` uniformly chosen connections, then
/// removes isolated neurons.
pub fn prune_random(net: &mut NetworkTopology, fraction: f64, rng: &mut RandomSource) -> Result<PruneReport> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("random prune fraction must be in [0, 1], got {fraction}")));
    }
    let active = net.active_connections();
    let n_drop = fraction_count(fraction, active.len());
    let dropped = rng.sample_indices(active.len(), n_drop);
    let mut drop_flag = vec![false; active.len()];
    for d in dropped {
        drop_flag[d] = true;
    }
    let keep: Vec<(usize, usize)> = active
        .iter()
        .zip(&drop_flag)
        .filter(|(_, &d)| !d)
        .map(|(p, _)| *p)
        .collect();
    apply_survivors(net, &keep, active.len())
}

fn apply_survivors(net: &mut NetworkTopology, keep: &[(usize, usize)], active: usize) -> Result<PruneReport> {
    let n = net.n_neurons();
    let mut keep_mask = vec![false; n * n];
    for &(i, j) in keep {
        keep_mask[i * n + j] = true;
    }
    for (i, j) in net.active_connections() {
        if !keep_mask[i * n + j] {
            net.disconnect(i, j);
        }
    }
    let removed_neurons = net.prune_isolated_neurons();
    Ok(PruneReport {
        pruned_connections: active - net.n_active(),
        removed_neurons,
    })
}
