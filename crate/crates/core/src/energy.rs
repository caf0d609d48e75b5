//! Inference energy estimate from operation counts of a single-sample
//! forward pass, priced with per-operation constants of a 130 nm process.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NetworkTopology;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyCostModel {
    /// Joules per multiply-accumulate.
    pub e_mac: f64,
    /// Joules per SRAM access.
    pub e_sram: f64,
    /// Joules per comparison.
    pub e_cmp: f64,
}

impl Default for EnergyCostModel {
    fn default() -> Self {
        Self {
            e_mac: 11.8e-12,
            e_sram: 34.6e-12,
            e_cmp: 6.16e-15,
        }
    }
}

impl EnergyCostModel {
    pub fn validate(&self) -> Result<()> {
        if [self.e_mac, self.e_sram, self.e_cmp].iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
            return Err(Error::invalid(format!("energy constants must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OpCounts {
    pub macs: u64,
    pub sram_accesses: u64,
    pub comparisons: u64,
}

impl std::ops::Add for OpCounts {
    type Output = OpCounts;

    fn add(self, o: OpCounts) -> OpCounts {
        OpCounts {
            macs: self.macs + o.macs,
            sram_accesses: self.sram_accesses + o.sram_accesses,
            comparisons: self.comparisons + o.comparisons,
        }
    }
}

impl OpCounts {
    /// Counts for an `M x N` by `N x K` matrix product.
    pub fn matmul(m: u64, n: u64, k: u64) -> Self {
        Self {
            macs: m * n * k,
            sram_accesses: 2 * m * n * k,
            comparisons: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CountOptions {
    /// Also count the `c - 1` comparisons of the output argmax.
    pub argmax: bool,
}

/// One MAC and two SRAM accesses per active connection, one comparison per
/// ReLU of a hidden neuron reachable from the inputs. Bias additions are not
/// counted.
pub fn count_ops(net: &NetworkTopology) -> OpCounts {
    count_ops_with(net, CountOptions::default())
}

pub fn count_ops_with(net: &NetworkTopology, opts: CountOptions) -> OpCounts {
    let macs = net.n_active() as u64;
    let reach = net.reachable();
    let relus = net.hidden_range().filter(|&h| reach[h]).count() as u64;
    let argmax = if opts.argmax { net.n_out().saturating_sub(1) as u64 } else { 0 };
    OpCounts {
        macs,
        sram_accesses: 2 * macs,
        comparisons: relus + argmax,
    }
}

/// Counts for a dense layered MLP by the matrix-product rule with one sample.
pub fn count_ops_dense(layer_sizes: &[usize]) -> OpCounts {
    let mut total = OpCounts::default();
    for w in layer_sizes.windows(2) {
        total = total + OpCounts::matmul(1, w[0] as u64, w[1] as u64);
    }
    if layer_sizes.len() > 2 {
        total.comparisons = layer_sizes[1..layer_sizes.len() - 1].iter().sum::<usize>() as u64;
    }
    total
}

/// Cost of projecting one `d`-dimensional sample to `k` dimensions.
pub fn count_ops_reducer(d: usize, k: usize) -> OpCounts {
    OpCounts::matmul(1, d as u64, k as u64)
}

pub fn estimate_energy(counts: OpCounts, model: &EnergyCostModel) -> f64 {
    counts.macs as f64 * model.e_mac + counts.sram_accesses as f64 * model.e_sram + counts.comparisons as f64 * model.e_cmp
}

/// Three significant digits in scientific notation, e.g. `3.08e-5`.
pub fn format_joules(e: f64) -> String {
    if e == 0.0 {
        return "0".into();
    }
    format!("{e:.2e}")
}

/// Rounds to three significant digits.
pub fn three_significant(e: f64) -> f64 {
    if e == 0.0 || !e.is_finite() {
        return e;
    }
    format!("{e:.2e}").parse().unwrap_or(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RandomSource;
    use crate::ops::{prune_random, PrunePolicy};

    #[test]
    fn formula_example() {
        let c = OpCounts {
            macs: 24,
            sram_accesses: 48,
            comparisons: 0,
        };
        let e = estimate_energy(c, &EnergyCostModel::default());
        assert!((e - 1.944e-9).abs() <= 1e-24);
        assert_eq!(estimate_energy(OpCounts::default(), &EnergyCostModel::default()), 0.0);
    }

    #[test]
    fn dense_mlp_counts_match_matmul_rule() {
        let mut rng = RandomSource::new(0);
        for sizes in [vec![16, 12, 10], vec![5, 7, 3, 2], vec![4, 2]] {
            let net = NetworkTopology::from_mlp(&sizes, &mut rng).unwrap();
            assert_eq!(count_ops(&net), count_ops_dense(&sizes));
        }
        let net = NetworkTopology::from_mlp(&[16, 12, 10], &mut rng).unwrap();
        let c = count_ops(&net);
        assert_eq!((c.macs, c.sram_accesses, c.comparisons), (312, 624, 12));
    }

    #[test]
    fn empty_network_counts_zero() {
        let net = NetworkTopology::empty(3, 0, 2).unwrap();
        assert_eq!(count_ops(&net), OpCounts::default());
    }

    #[test]
    fn macs_equal_edge_enumeration() {
        let mut rng = RandomSource::new(4);
        let mut net = NetworkTopology::from_mlp(&[6, 5, 4, 3], &mut rng).unwrap();
        crate::ops::grow_connections(&mut net, &crate::ops::GrowthPolicy::full(), &mut rng).unwrap();
        prune_random(&mut net, 0.4, &mut rng).unwrap();
        let n = net.n_neurons();
        let edges = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|&(i, j)| net.is_active(i, j)).count();
        assert_eq!(count_ops(&net).macs, edges as u64);
    }

    #[test]
    fn pruning_lowers_energy() {
        let mut rng = RandomSource::new(1);
        let model = EnergyCostModel::default();
        let mut net = NetworkTopology::from_mlp(&[8, 6, 3], &mut rng).unwrap();
        let before = estimate_energy(count_ops(&net), &model);
        let keep = net.n_active() - 1;
        crate::ops::prune_connections(&mut net, PrunePolicy::Budget(keep)).unwrap();
        assert!(estimate_energy(count_ops(&net), &model) < before);
    }

    #[test]
    fn argmax_option_adds_output_comparisons() {
        let mut rng = RandomSource::new(2);
        let net = NetworkTopology::from_mlp(&[4, 3, 5], &mut rng).unwrap();
        let c = count_ops_with(&net, CountOptions { argmax: true });
        assert_eq!(c.comparisons, 3 + 4);
    }

    #[test]
    fn formatting() {
        assert_eq!(format_joules(3.0826e-5), "3.08e-5");
        assert_eq!(format_joules(1.944e-9), "1.94e-9");
        assert_eq!(format_joules(2.5), "2.50e0");
        assert_eq!(three_significant(3.0826e-5), 3.08e-5);
    }
}
