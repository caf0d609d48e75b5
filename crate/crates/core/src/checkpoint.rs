//! Self-describing JSON checkpoint for a [`NetworkTopology`].
//!
//! The mask is stored as run-length encoded rows and the weights as
//! `(i, j, value)` triples for active entries only. Floats are written in
//! shortest round-trip form, so save followed by load is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Activation, NetworkTopology};
use crate::numerics::Matrix;

pub const CHECKPOINT_FORMAT: &str = "netsynth-network";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
    pub activation: Activation,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<u32>>,
    /// Per source row, `(start, length)` runs of active targets.
    pub mask_runs: Vec<Vec<(usize, usize)>>,
    pub weights: Vec<(usize, usize, f64)>,
    pub bias: Vec<f64>,
}

impl Checkpoint {
    pub fn from_network(net: &NetworkTopology, seed: u64) -> Self {
        let n = net.n_neurons();
        let mask = net.mask();
        let mut mask_runs = Vec::with_capacity(n);
        let mut weights = Vec::new();
        for i in 0..n {
            let mut runs = Vec::new();
            let mut j = 0;
            while j < n {
                if mask[(i, j)] != 0.0 {
                    let start = j;
                    while j < n && mask[(i, j)] != 0.0 {
                        weights.push((i, j, net.weights()[(i, j)]));
                        j += 1;
                    }
                    runs.push((start, j - start));
                } else {
                    j += 1;
                }
            }
            mask_runs.push(runs);
        }
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            n_in: net.n_in(),
            n_hidden: net.n_hidden(),
            n_out: net.n_out(),
            activation: net.activation(),
            seed,
            layers: net.layers().map(<[u32]>::to_vec),
            mask_runs,
            weights,
            bias: net.bias().to_vec(),
        }
    }

    pub fn to_network(&self) -> Result<NetworkTopology> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}, found {} v{}",
                self.format, self.version
            )));
        }
        let n = self.n_in + self.n_hidden + self.n_out;
        if self.mask_runs.len() != n {
            return Err(Error::Format(format!("{} mask rows for {n} neurons", self.mask_runs.len())));
        }
        let mut mask = Matrix::zeros(n, n);
        for (i, runs) in self.mask_runs.iter().enumerate() {
            for &(start, len) in runs {
                if start + len > n {
                    return Err(Error::Format(format!("mask run in row {i} exceeds {n} columns")));
                }
                mask.row_mut(i)[start..start + len].fill(1.0);
            }
        }
        if self.weights.len() != mask.count_nonzero() {
            return Err(Error::Format(format!(
                "{} weight triples for {} active connections",
                self.weights.len(),
                mask.count_nonzero()
            )));
        }
        let mut weights = Matrix::zeros(n, n);
        for &(i, j, w) in &self.weights {
            if i >= n || j >= n || mask[(i, j)] == 0.0 {
                return Err(Error::Format(format!("weight triple ({i}, {j}) is not an active connection")));
            }
            weights[(i, j)] = w;
        }
        NetworkTopology::from_parts(
            self.n_in,
            self.n_hidden,
            self.n_out,
            mask,
            weights,
            self.bias.clone(),
            self.activation,
            self.layers.clone(),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RandomSource;
    use proptest::prelude::*;

    #[test]
    fn rejects_foreign_format() {
        let mut rng = RandomSource::new(0);
        let net = NetworkTopology::from_mlp(&[2, 2, 1], &mut rng).unwrap();
        let mut ck = Checkpoint::from_network(&net, 0);
        ck.format = "other".into();
        assert!(matches!(ck.to_network(), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_triple_outside_mask() {
        let mut rng = RandomSource::new(0);
        let net = NetworkTopology::from_mlp(&[2, 2, 1], &mut rng).unwrap();
        let mut ck = Checkpoint::from_network(&net, 0);
        ck.weights[0] = (0, 1, 1.0);
        assert!(ck.to_network().is_err());
    }

    #[test]
    fn rle_groups_contiguous_targets() {
        let mut rng = RandomSource::new(0);
        let net = NetworkTopology::from_mlp(&[2, 3, 1], &mut rng).unwrap();
        let ck = Checkpoint::from_network(&net, 11);
        assert_eq!(ck.mask_runs[0], vec![(2, 3)]);
        assert_eq!(ck.mask_runs[2], vec![(5, 1)]);
    }

    proptest! {
        #[test]
        fn json_round_trip_is_bit_exact(seed in any::<u64>(), drop in proptest::collection::vec(any::<bool>(), 30)) {
            let mut rng = RandomSource::new(seed);
            let mut net = NetworkTopology::from_mlp(&[3, 4, 2, 2], &mut rng).unwrap();
            for ((i, j), d) in net.active_connections().into_iter().zip(drop) {
                if d {
                    net.disconnect(i, j);
                }
            }
            net.bias_mut()[1] = -0.0;
            net.bias_mut()[2] = 1.0 / 3.0;
            let json = Checkpoint::from_network(&net, seed).to_json().unwrap();
            let back = Checkpoint::from_json(&json).unwrap().to_network().unwrap();
            prop_assert_eq!(back.bias()[1].to_bits(), (-0.0f64).to_bits());
            for (a, b) in back.weights().as_slice().iter().zip(net.weights().as_slice()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            prop_assert_eq!(back, net);
        }
    }
}
