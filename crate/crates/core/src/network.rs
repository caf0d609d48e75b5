//! General feed-forward network over a totally ordered neuron set.
//!
//! Neurons are ordered `[inputs | hidden | outputs]`. Connection `i -> j` is
//! legal iff `i < j`, `j` is not an input and `i` is not an output, so the
//! mask is strictly upper-triangular and acyclicity never needs checking.
//! Depth is whatever the wiring makes it.
//!
//! Evaluation groups consecutive neurons into segments that have no active
//! connection among themselves; each segment is one matrix product against
//! everything before it. For a layered wiring the segments are the layers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gemm, sample_gaussian, Matrix, RandomSource};

/// Nonlinearity applied to hidden neurons. Outputs are always affine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, u: f64) -> f64 {
        match self {
            Activation::Relu => u.max(0.0),
        }
    }

    #[inline]
    pub fn derivative(self, u: f64) -> f64 {
        match self {
            Activation::Relu => {
                if u > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    n_in: usize,
    n_hidden: usize,
    n_out: usize,
    mask: Matrix,
    weights: Matrix,
    bias: Vec<f64>,
    activation: Activation,
    /// Layer tag per neuron for networks built from an MLP; drives the
    /// adjacent-layer restriction of MLP-only growth.
    layers: Option<Vec<u32>>,
}

/// Per-sample preactivities `u` and activities `x` for every neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub u: Matrix,
    pub x: Matrix,
    n_out: usize,
}

impl ForwardTrace {
    pub fn logits(&self) -> Matrix {
        let n = self.x.cols();
        let rows: Vec<&[f64]> = (0..self.x.rows()).map(|b| &self.x.row(b)[n - self.n_out..]).collect();
        Matrix::from_rows(&rows).expect("uniform rows")
    }

    pub fn predictions(&self) -> Vec<usize> {
        let n = self.x.cols();
        (0..self.x.rows())
            .map(|b| argmax(&self.x.row(b)[n - self.n_out..]))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub loss: f64,
    /// Zero wherever the mask is zero.
    pub d_weights: Matrix,
    pub d_bias: Vec<f64>,
    /// `dL/du` per sample and neuron (input columns are zero).
    pub d_pre: Matrix,
}

/// Lowest index wins ties.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl NetworkTopology {
    /// Network with no connections and zero biases.
    pub fn empty(n_in: usize, n_hidden: usize, n_out: usize) -> Result<Self> {
        if n_in == 0 || n_out == 0 {
            return Err(Error::invalid("network needs at least one input and one output"));
        }
        let n = n_in + n_hidden + n_out;
        Ok(Self {
            n_in,
            n_hidden,
            n_out,
            mask: Matrix::zeros(n, n),
            weights: Matrix::zeros(n, n),
            bias: vec![0.0; n_hidden + n_out],
            activation: Activation::Relu,
            layers: None,
        })
    }

    /// Fully connected layered wiring between adjacent layers only, with
    /// He-style Gaussian weights (`std = sqrt(2 / fan_in)`) and zero biases.
    pub fn from_mlp(layer_sizes: &[usize], rng: &mut RandomSource) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::invalid("an MLP needs at least an input and an output layer"));
        }
        if let Some(pos) = layer_sizes.iter().position(|&s| s == 0) {
            return Err(Error::invalid(format!("layer {pos} is empty")));
        }
        let n_in = layer_sizes[0];
        let n_out = *layer_sizes.last().unwrap();
        let n_hidden: usize = layer_sizes[1..layer_sizes.len() - 1].iter().sum();
        let mut net = Self::empty(n_in, n_hidden, n_out)?;
        let mut tags = Vec::with_capacity(net.n_neurons());
        for (l, &size) in layer_sizes.iter().enumerate() {
            tags.extend(std::iter::repeat_n(l as u32, size));
        }
        let mut start = 0;
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let std = (2.0 / fan_in as f64).sqrt();
            let w = sample_gaussian(rng, fan_in, fan_out, 0.0, std)?;
            for i in 0..fan_in {
                for j in 0..fan_out {
                    let (src, dst) = (start + i, start + fan_in + j);
                    net.mask[(src, dst)] = 1.0;
                    net.weights[(src, dst)] = w[(i, j)];
                }
            }
            start += fan_in;
        }
        net.layers = Some(tags);
        Ok(net)
    }

    /// Assembles a network from raw parts, validating every invariant.
    pub fn from_parts(
        n_in: usize,
        n_hidden: usize,
        n_out: usize,
        mask: Matrix,
        weights: Matrix,
        bias: Vec<f64>,
        activation: Activation,
        layers: Option<Vec<u32>>,
    ) -> Result<Self> {
        let net = Self {
            n_in,
            n_hidden,
            n_out,
            mask,
            weights,
            bias,
            activation,
            layers,
        };
        net.validate()?;
        Ok(net)
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_neurons();
        if self.n_in == 0 || self.n_out == 0 {
            return Err(Error::invalid("network needs at least one input and one output"));
        }
        if self.mask.shape() != (n, n) || self.weights.shape() != (n, n) {
            return Err(Error::invalid(format!("mask and weights must be {n}x{n}")));
        }
        if self.bias.len() != self.n_hidden + self.n_out {
            return Err(Error::invalid("bias length must equal hidden + output count"));
        }
        if let Some(tags) = &self.layers {
            if tags.len() != n {
                return Err(Error::invalid("layer tags must cover every neuron"));
            }
        }
        for i in 0..n {
            for j in 0..n {
                let m = self.mask[(i, j)];
                let w = self.weights[(i, j)];
                if m != 0.0 && m != 1.0 {
                    return Err(Error::invalid(format!("mask[{i}][{j}] = {m} is not binary")));
                }
                if m == 1.0 && !self.is_legal(i, j) {
                    return Err(Error::invalid(format!("connection {i}->{j} is not forward-legal")));
                }
                if w != 0.0 && m == 0.0 {
                    return Err(Error::invalid(format!("weight {i}->{j} is nonzero but masked")));
                }
                if !w.is_finite() {
                    return Err(Error::invalid(format!("weight {i}->{j} is not finite")));
                }
            }
        }
        if self.bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("non-finite bias"));
        }
        Ok(())
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn n_neurons(&self) -> usize {
        self.n_in + self.n_hidden + self.n_out
    }

    pub fn hidden_range(&self) -> std::ops::Range<usize> {
        self.n_in..self.n_in + self.n_hidden
    }

    pub fn output_range(&self) -> std::ops::Range<usize> {
        self.n_in + self.n_hidden..self.n_neurons()
    }

    pub fn is_hidden(&self, i: usize) -> bool {
        self.hidden_range().contains(&i)
    }

    pub fn is_output(&self, i: usize) -> bool {
        i >= self.n_in + self.n_hidden
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn mask(&self) -> &Matrix {
        &self.mask
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn layers(&self) -> Option<&[u32]> {
        self.layers.as_deref()
    }

    /// Drops the layer tags, turning the network into a free-form DAG.
    pub fn clear_layers(&mut self) {
        self.layers = None;
    }

    pub fn is_active(&self, i: usize, j: usize) -> bool {
        self.mask[(i, j)] != 0.0
    }

    /// Structural legality of `i -> j`, independent of the current mask.
    pub fn is_legal(&self, i: usize, j: usize) -> bool {
        i < j && j >= self.n_in && !self.is_output(i) && j < self.n_neurons()
    }

    /// Legality plus, when the network is layered and `adjacent_only` is
    /// set, `layer(j) == layer(i) + 1`.
    pub fn is_candidate(&self, i: usize, j: usize, adjacent_only: bool) -> bool {
        if !self.is_legal(i, j) {
            return false;
        }
        match (&self.layers, adjacent_only) {
            (Some(tags), true) => tags[j] == tags[i] + 1,
            _ => true,
        }
    }

    /// Activates `i -> j` with weight `w`.
    pub fn connect(&mut self, i: usize, j: usize, w: f64) -> Result<()> {
        if !self.is_legal(i, j) {
            return Err(Error::invalid(format!("connection {i}->{j} is not forward-legal")));
        }
        self.mask[(i, j)] = 1.0;
        self.weights[(i, j)] = w;
        Ok(())
    }

    /// Deactivates `i -> j` and zeroes its weight.
    pub fn disconnect(&mut self, i: usize, j: usize) {
        self.mask[(i, j)] = 0.0;
        self.weights[(i, j)] = 0.0;
    }

    /// Sets the weight of an active connection.
    pub fn set_weight(&mut self, i: usize, j: usize, w: f64) -> Result<()> {
        if !self.is_active(i, j) {
            return Err(Error::invalid(format!("connection {i}->{j} is inactive")));
        }
        self.weights[(i, j)] = w;
        Ok(())
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    /// Active `(i, j)` pairs in lexicographic order.
    pub fn active_connections(&self) -> Vec<(usize, usize)> {
        let n = self.n_neurons();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.mask[(i, j)] != 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Number of ones in the mask.
    pub fn n_active(&self) -> usize {
        self.mask.count_nonzero()
    }

    pub fn in_degree(&self, j: usize) -> usize {
        (0..j).filter(|&i| self.mask[(i, j)] != 0.0).count()
    }

    pub fn out_degree(&self, i: usize) -> usize {
        ((i + 1)..self.n_neurons()).filter(|&j| self.mask[(i, j)] != 0.0).count()
    }

    /// Neurons reachable from some input over active connections.
    pub fn reachable(&self) -> Vec<bool> {
        let n = self.n_neurons();
        let mut seen = vec![false; n];
        seen[..self.n_in].fill(true);
        for j in self.n_in..n {
            seen[j] = (0..j).any(|i| seen[i] && self.mask[(i, j)] != 0.0);
        }
        seen
    }

    /// Active connections plus the biases of reachable neurons.
    pub fn connection_count(&self) -> usize {
        let reach = self.reachable();
        self.n_active() + reach[self.n_in..].iter().filter(|&&r| r).count()
    }

    /// Longest active path, in edges, from any input to any output.
    pub fn depth(&self) -> Result<usize> {
        let n = self.n_neurons();
        let mut longest: Vec<Option<usize>> = vec![None; n];
        for slot in longest.iter_mut().take(self.n_in) {
            *slot = Some(0);
        }
        for j in self.n_in..n {
            longest[j] = (0..j)
                .filter(|&i| self.mask[(i, j)] != 0.0)
                .filter_map(|i| longest[i].map(|d| d + 1))
                .max();
        }
        longest[self.output_range()]
            .iter()
            .flatten()
            .copied()
            .max()
            .ok_or(Error::UnreachableOutput)
    }

    /// Removes hidden neurons lacking active in- or out-edges, repeating to
    /// a fixed point, then compacts indices preserving order. Returns the
    /// number of neurons removed.
    pub fn prune_isolated_neurons(&mut self) -> usize {
        let n = self.n_neurons();
        let mut indeg: Vec<usize> = (0..n).map(|j| self.in_degree(j)).collect();
        let mut outdeg: Vec<usize> = (0..n).map(|i| self.out_degree(i)).collect();
        let mut alive = vec![true; n];
        loop {
            let mut changed = false;
            for h in self.hidden_range() {
                if alive[h] && (indeg[h] == 0 || outdeg[h] == 0) {
                    alive[h] = false;
                    changed = true;
                    for j in (h + 1)..n {
                        if self.mask[(h, j)] != 0.0 {
                            self.disconnect(h, j);
                            indeg[j] -= 1;
                        }
                    }
                    for i in 0..h {
                        if self.mask[(i, h)] != 0.0 {
                            self.disconnect(i, h);
                            outdeg[i] -= 1;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let removed = alive.iter().filter(|a| !**a).count();
        if removed > 0 {
            self.retain(&alive);
        }
        removed
    }

    /// Keeps neurons with `keep[i]`; only hidden neurons may be dropped.
    fn retain(&mut self, keep: &[bool]) {
        let old: Vec<usize> = (0..self.n_neurons()).filter(|&i| keep[i]).collect();
        let dropped_hidden = self.hidden_range().filter(|&h| !keep[h]).count();
        let n = old.len();
        let mut mask = Matrix::zeros(n, n);
        let mut weights = Matrix::zeros(n, n);
        for (a, &i) in old.iter().enumerate() {
            for (b, &j) in old.iter().enumerate().skip(a + 1) {
                mask[(a, b)] = self.mask[(i, j)];
                weights[(a, b)] = self.weights[(i, j)];
            }
        }
        let bias = old[self.n_in..].iter().map(|&i| self.bias[i - self.n_in]).collect();
        self.layers = self.layers.take().map(|t| old.iter().map(|&i| t[i]).collect());
        self.mask = mask;
        self.weights = weights;
        self.bias = bias;
        self.n_hidden -= dropped_hidden;
    }

    /// Inserts an unconnected hidden neuron at global index `pos`, shifting
    /// later neurons up by one. Its bias is `bias` and its layer tag `tag`.
    pub(crate) fn insert_hidden(&mut self, pos: usize, bias: f64, tag: Option<u32>) {
        assert!(pos >= self.n_in && pos <= self.n_in + self.n_hidden);
        let n = self.n_neurons();
        let shift = |i: usize| if i >= pos { i + 1 } else { i };
        let mut mask = Matrix::zeros(n + 1, n + 1);
        let mut weights = Matrix::zeros(n + 1, n + 1);
        for i in 0..n {
            for j in (i + 1)..n {
                if self.mask[(i, j)] != 0.0 {
                    mask[(shift(i), shift(j))] = 1.0;
                    weights[(shift(i), shift(j))] = self.weights[(i, j)];
                }
            }
        }
        self.bias.insert(pos - self.n_in, bias);
        self.layers = match (self.layers.take(), tag) {
            (Some(mut t), Some(tag)) => {
                t.insert(pos, tag);
                Some(t)
            }
            _ => None,
        };
        self.mask = mask;
        self.weights = weights;
        self.n_hidden += 1;
    }

    /// Sum of squared active weights.
    pub fn weight_norm_sq(&self) -> f64 {
        self.weights.as_slice().iter().map(|w| w * w).sum()
    }

    pub fn forward(&self, batch: &Matrix) -> Result<ForwardTrace> {
        self.check_batch(batch)?;
        let plan = EvalPlan::new(self);
        let mut trace = ForwardTrace {
            u: Matrix::zeros(batch.rows(), self.n_neurons()),
            x: Matrix::zeros(batch.rows(), self.n_neurons()),
            n_out: self.n_out,
        };
        self.forward_with(&plan, batch, &mut trace.u, &mut trace.x);
        Ok(trace)
    }

    fn check_batch(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.n_in {
            return Err(Error::FeatureWidth {
                expected: self.n_in,
                got: batch.cols(),
            });
        }
        Ok(())
    }

    pub(crate) fn forward_with(&self, plan: &EvalPlan, batch: &Matrix, u: &mut Matrix, x: &mut Matrix) {
        let rows = batch.rows();
        let n = self.n_neurons();
        debug_assert_eq!(u.shape(), (rows, n));
        for b in 0..rows {
            let src = batch.row(b);
            u.row_mut(b)[..self.n_in].copy_from_slice(src);
            x.row_mut(b)[..self.n_in].copy_from_slice(src);
        }
        let out_start = self.n_in + self.n_hidden;
        for &(s, e) in &plan.segments {
            let width = e - s;
            gemm(
                1.0,
                x.block(0, 0, rows, s),
                self.weights.block(0, s, s, width),
                0.0,
                u.block_mut(0, s, rows, width),
            );
            let bias = &self.bias[s - self.n_in..e - self.n_in];
            let hidden = s < out_start;
            for b in 0..rows {
                let urow = &mut u.row_mut(b)[s..e];
                let xrow = &mut x.row_mut(b)[s..e];
                for ((uv, xv), &bv) in urow.iter_mut().zip(xrow.iter_mut()).zip(bias) {
                    *uv += bv;
                    *xv = if hidden { self.activation.apply(*uv) } else { *uv };
                }
            }
        }
    }

    /// Mean softmax cross-entropy plus `weight_decay / 2 * sum(w^2)` over
    /// active weights, with its gradients.
    pub fn loss_and_gradients(&self, batch: &Matrix, labels: &[usize], weight_decay: f64) -> Result<Gradients> {
        self.check_batch(batch)?;
        if labels.len() != batch.rows() {
            return Err(Error::invalid(format!(
                "{} labels for a batch of {}",
                labels.len(),
                batch.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.n_out) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: self.n_out,
            });
        }
        let plan = EvalPlan::new(self);
        let mut ws = Workspace::new(batch.rows(), self.n_neurons());
        let mut grads = Gradients {
            loss: 0.0,
            d_weights: Matrix::zeros(self.n_neurons(), self.n_neurons()),
            d_bias: vec![0.0; self.n_hidden + self.n_out],
            d_pre: Matrix::zeros(0, 0),
        };
        grads.loss = self.backprop(&plan, batch, labels, weight_decay, &mut ws, &mut grads.d_weights, &mut grads.d_bias);
        grads.d_pre = ws.du;
        Ok(grads)
    }

    /// Forward + backward into caller-owned buffers. Returns the loss.
    /// Only the `rows 0..s, cols s..e` block of each segment is written, so
    /// `d_weights` must be zero elsewhere.
    pub(crate) fn backprop(
        &self,
        plan: &EvalPlan,
        batch: &Matrix,
        labels: &[usize],
        weight_decay: f64,
        ws: &mut Workspace,
        d_weights: &mut Matrix,
        d_bias: &mut [f64],
    ) -> f64 {
        let rows = batch.rows();
        let n = self.n_neurons();
        ws.resize(rows, n);
        self.forward_with(plan, batch, &mut ws.u, &mut ws.x);

        let out_start = self.n_in + self.n_hidden;
        let inv = 1.0 / rows as f64;
        let mut loss = 0.0;
        ws.du.as_mut_slice().fill(0.0);
        ws.dx.as_mut_slice().fill(0.0);
        for b in 0..rows {
            let logits = &ws.x.row(b)[out_start..];
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
            let lse = max + sum.ln();
            loss += lse - logits[labels[b]];
            let probs: Vec<f64> = logits.iter().map(|&z| (z - lse).exp()).collect();
            let du = &mut ws.du.row_mut(b)[out_start..];
            for (k, p) in probs.iter().enumerate() {
                du[k] = (p - if k == labels[b] { 1.0 } else { 0.0 }) * inv;
            }
        }
        loss *= inv;

        for &(s, e) in plan.segments.iter().rev() {
            let width = e - s;
            if s < out_start {
                for b in 0..rows {
                    for j in s..e {
                        let g = ws.dx[(b, j)] * self.activation.derivative(ws.u[(b, j)]);
                        ws.du[(b, j)] = g;
                    }
                }
            }
            gemm(
                1.0,
                ws.x.block(0, 0, rows, s).t(),
                ws.du.block(0, s, rows, width),
                0.0,
                d_weights.block_mut(0, s, s, width),
            );
            if s > self.n_in {
                let h = s - self.n_in;
                gemm(
                    1.0,
                    ws.du.block(0, s, rows, width),
                    self.weights.block(self.n_in, s, h, width).t(),
                    1.0,
                    ws.dx.block_mut(0, self.n_in, rows, h),
                );
            }
        }

        for &(s, e) in &plan.segments {
            for i in 0..s {
                let g = &mut d_weights.row_mut(i)[s..e];
                let m = &self.mask.row(i)[s..e];
                let w = &self.weights.row(i)[s..e];
                for ((g, &m), &wv) in g.iter_mut().zip(m).zip(w) {
                    *g = if m != 0.0 { *g + weight_decay * wv } else { 0.0 };
                }
            }
        }
        if weight_decay != 0.0 {
            loss += 0.5 * weight_decay * self.weight_norm_sq();
        }
        d_bias.fill(0.0);
        for b in 0..rows {
            let row = &ws.du.row(b)[self.n_in..];
            for (acc, &g) in d_bias.iter_mut().zip(row) {
                *acc += g;
            }
        }
        loss
    }

    /// Predicted class per row, evaluated in chunks to bound memory.
    pub fn predict(&self, features: &Matrix) -> Result<Vec<usize>> {
        self.check_batch(features)?;
        const CHUNK: usize = 512;
        let plan = EvalPlan::new(self);
        let n = self.n_neurons();
        let out_start = self.n_in + self.n_hidden;
        let mut preds = Vec::with_capacity(features.rows());
        let mut u = Matrix::zeros(0, 0);
        let mut x = Matrix::zeros(0, 0);
        let mut start = 0;
        while start < features.rows() {
            let end = (start + CHUNK).min(features.rows());
            let idx: Vec<usize> = (start..end).collect();
            let chunk = features.select_rows(&idx);
            if u.rows() != chunk.rows() {
                u = Matrix::zeros(chunk.rows(), n);
                x = Matrix::zeros(chunk.rows(), n);
            }
            self.forward_with(&plan, &chunk, &mut u, &mut x);
            preds.extend((0..chunk.rows()).map(|b| argmax(&x.row(b)[out_start..])));
            start = end;
        }
        Ok(preds)
    }

    /// Fraction of rows whose argmax logit equals the label.
    pub fn accuracy(&self, features: &Matrix, labels: &[usize]) -> Result<f64> {
        if labels.is_empty() {
            return Ok(0.0);
        }
        let preds = self.predict(features)?;
        let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

/// Segmentation of non-input neurons into independently evaluable runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct EvalPlan {
    pub(crate) segments: Vec<(usize, usize)>,
}

impl EvalPlan {
    pub(crate) fn new(net: &NetworkTopology) -> Self {
        let n = net.n_neurons();
        let out_start = net.n_in + net.n_hidden;
        let mut segments = Vec::new();
        let mut s = net.n_in;
        let mut e = s;
        while e < n {
            let breaks = e == out_start && s < out_start || (s..e).any(|i| net.mask[(i, e)] != 0.0);
            if breaks && e > s {
                segments.push((s, e));
                s = e;
            }
            e += 1;
        }
        if e > s {
            segments.push((s, e));
        }
        Self { segments }
    }
}

/// Scratch buffers for repeated forward/backward passes.
#[derive(Debug, Clone)]
pub(crate) struct Workspace {
    pub(crate) u: Matrix,
    pub(crate) x: Matrix,
    pub(crate) du: Matrix,
    pub(crate) dx: Matrix,
}

impl Workspace {
    pub(crate) fn new(rows: usize, n: usize) -> Self {
        Self {
            u: Matrix::zeros(rows, n),
            x: Matrix::zeros(rows, n),
            du: Matrix::zeros(rows, n),
            dx: Matrix::zeros(rows, n),
        }
    }

    fn resize(&mut self, rows: usize, n: usize) {
        if self.u.shape() != (rows, n) {
            *self = Self::new(rows, n);
        }
    }
}
