//! Versioned JSON serialization of Q networks.
//!
//! Parameters are stored as `f64`, which represents every `f32` exactly, so a
//! save/load round trip reproduces forward outputs bit for bit.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{ActionGrid, Dense, LearnerConfig, Mlp, ObsScaling, QNet, Real, NUM_ACTIONS, OBS_DIM};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `(inputs, outputs)`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetCheckpoint {
    pub format_version: u32,
    pub agents: usize,
    pub layers: Vec<LayerParams>,
    pub action_grid: Vec<f64>,
    pub obs_scaling: ObsScaling,
}

impl NetCheckpoint {
    pub fn from_qnet<F: Real>(net: &QNet<F>, obs_scaling: ObsScaling) -> Self {
        let layers = net
            .mlp()
            .layers()
            .iter()
            .map(|l| LayerParams {
                inputs: l.inputs(),
                outputs: l.outputs(),
                weights: l.weights.iter().map(|w| w.as_f64()).collect(),
                bias: l.bias.iter().map(|b| b.as_f64()).collect(),
            })
            .collect();
        NetCheckpoint {
            format_version: FORMAT_VERSION,
            agents: net.agents(),
            layers,
            action_grid: ActionGrid.values(),
            obs_scaling,
        }
    }

    pub fn to_qnet<F: Real>(&self, config: &LearnerConfig) -> Result<QNet<F>> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "checkpoint format {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.action_grid != ActionGrid.values() {
            return Err(Error::Schema("checkpoint action grid differs".into()));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::Schema(format!("layer {i} has inconsistent sizes")));
            }
            let weights = Array2::from_shape_vec(
                (l.inputs, l.outputs),
                l.weights.iter().map(|&w| F::of(w)).collect(),
            )
            .map_err(|e| Error::Schema(e.to_string()))?;
            let bias = Array1::from_iter(l.bias.iter().map(|&b| F::of(b)));
            layers.push(Dense { weights, bias });
        }
        let mlp = Mlp::from_layers(layers)?;
        if mlp.input_dim() != OBS_DIM + self.agents || mlp.output_dim() != NUM_ACTIONS {
            return Err(Error::Schema(format!(
                "network maps {} -> {}, expected {} -> {NUM_ACTIONS}",
                mlp.input_dim(),
                mlp.output_dim(),
                OBS_DIM + self.agents
            )));
        }
        Ok(QNet::from_mlp(mlp, self.agents, config))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = LearnerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = QNet::<f32>::new(3, &cfg, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        NetCheckpoint::from_qnet(&net, ObsScaling::new(60))
            .save(&path)
            .unwrap();
        let loaded = NetCheckpoint::load(&path).unwrap();
        assert_eq!(loaded.obs_scaling, ObsScaling::new(60));
        let back: QNet<f32> = loaded.to_qnet(&cfg).unwrap();
        assert_eq!(back.mlp(), net.mlp());
        for _ in 0..20 {
            let f = [rng.random(), rng.random(), rng.random()];
            assert_eq!(net.q_values(&f, 2), back.q_values(&f, 2));
        }
    }

    #[test]
    fn rejects_unknown_version() {
        let cfg = LearnerConfig::default();
        let net = QNet::<f64>::zeros(2, &cfg);
        let mut ck = NetCheckpoint::from_qnet(&net, ObsScaling::new(100));
        ck.format_version = 99;
        assert!(matches!(ck.to_qnet::<f64>(&cfg), Err(Error::Schema(_))));
    }

    #[test]
    fn rejects_corrupt_shapes() {
        let cfg = LearnerConfig::default();
        let net = QNet::<f64>::zeros(2, &cfg);
        let mut ck = NetCheckpoint::from_qnet(&net, ObsScaling::new(100));
        ck.layers[1].weights.pop();
        assert!(ck.to_qnet::<f64>(&cfg).is_err());
    }
}
