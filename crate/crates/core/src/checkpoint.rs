//! Trained-model files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::{forward, standardize, GcnParams, GraphInput, IN_DIM};
use crate::topology::{
    load_topology, propagation_matrix, PropagationMatrix, Topology, TopologyDoc,
};
use crate::train::TrainConfig;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub params: GcnParams,
    /// Mean of log10 features over the training windows.
    pub feature_mean: [f64; IN_DIM],
    pub feature_std: [f64; IN_DIM],
    pub topology_fingerprint: String,
    pub topology: TopologyDoc,
    /// Edge weights used to build the propagation matrix; all ones when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_weights: Option<Vec<f64>>,
    pub train_config: TrainConfig,
    pub seed: u64,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
}

impl ModelCheckpoint {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint format {}",
                self.format_version
            )));
        }
        if !self.params.is_finite() {
            return Err(Error::invalid("checkpoint parameters are not finite"));
        }
        if self.feature_mean.iter().any(|m| !m.is_finite())
            || self
                .feature_std
                .iter()
                .any(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(Error::invalid("checkpoint feature statistics are invalid"));
        }
        Ok(())
    }

    /// Errors with [`Error::FingerprintMismatch`] unless `t` is the training
    /// topology or `force` is set.
    pub fn check_topology(&self, t: &Topology, force: bool) -> Result<()> {
        let found = t.fingerprint();
        if !force && found != self.topology_fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: self.topology_fingerprint.clone(),
                found,
            });
        }
        Ok(())
    }

    /// Re-targets the checkpoint at `t`, which later fingerprint checks then accept.
    pub fn rebind(&mut self, t: &Topology) {
        self.topology_fingerprint = t.fingerprint();
        self.topology = t.to_doc();
    }

    /// The topology stored in the checkpoint.
    pub fn stored_topology(&self) -> Result<Topology> {
        load_topology(&self.topology, true)
    }

    pub fn propagation(&self, t: &Topology) -> Result<PropagationMatrix> {
        propagation_matrix(t, self.edge_weights.as_deref())
    }

    /// Standardized features replicated over `n_nodes` rows.
    pub fn graph_input(&self, features: &[f64; IN_DIM], n_nodes: usize) -> Result<GraphInput> {
        let x = standardize(features, &self.feature_mean, &self.feature_std)?;
        Ok(GraphInput::replicated(x, n_nodes))
    }

    /// Probability of the positive class for one raw feature vector.
    pub fn predict(&self, a: &PropagationMatrix, features: &[f64; IN_DIM]) -> Result<f64> {
        let x = self.graph_input(features, a.n())?;
        Ok(forward(&self.params, a, &x)?.p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: ModelCheckpoint = serde_json::from_str(text)?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    /// Loads and validates; with `topology` set, also checks its fingerprint.
    /// A forced load of a mismatched checkpoint is rebound to `topology`.
    pub fn load(path: &Path, topology: Option<&Topology>, force: bool) -> Result<Self> {
        let mut ck = Self::from_json(&fs::read_to_string(path)?)?;
        if let Some(t) = topology {
            ck.check_topology(t, force)?;
            if force && ck.topology_fingerprint != t.fingerprint() {
                log::warn!(
                    "{}: forcing checkpoint onto a different topology",
                    path.display()
                );
                ck.rebind(t);
            }
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{default_topology, Normalization};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> ModelCheckpoint {
        let t = default_topology();
        ModelCheckpoint {
            format_version: FORMAT_VERSION,
            params: GcnParams::glorot(&mut ChaCha8Rng::seed_from_u64(3)),
            feature_mean: [1.0, 0.5, 0.2, 0.1, -0.3],
            feature_std: [0.3, 0.2, 0.25, 0.1, 0.4],
            topology_fingerprint: t.fingerprint(),
            topology: t.to_doc(),
            edge_weights: None,
            train_config: TrainConfig::default(),
            seed: 3,
            loss_curve: vec![0.7, 0.5],
        }
    }

    #[test]
    fn json_round_trip_keeps_predictions() {
        let ck = sample();
        let back = ModelCheckpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(ck, back);
        let t = default_topology();
        let a = ck.propagation(&t).unwrap();
        let f = [12.0, 3.0, 40.0, 0.5, 1.0];
        assert_eq!(ck.predict(&a, &f).unwrap(), back.predict(&a, &f).unwrap());
    }

    #[test]
    fn fingerprint_mismatch_refused_unless_forced() {
        let ck = sample();
        let other = default_topology().with_normalization(Normalization::Symmetric);
        assert!(matches!(
            ck.check_topology(&other, false),
            Err(Error::FingerprintMismatch { .. })
        ));
        ck.check_topology(&other, true).unwrap();
        ck.check_topology(&default_topology(), false).unwrap();
    }

    #[test]
    fn invalid_stats_rejected() {
        let mut ck = sample();
        ck.feature_std[2] = 0.0;
        assert!(ModelCheckpoint::from_json(&ck.to_json().unwrap()).is_err());
    }
}
