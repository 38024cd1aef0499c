//! Parameter and optimizer snapshots stored in the shared binary container.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::adam::AdamState;
use crate::data::Container;
use crate::error::{FameError, Result};
use crate::model::{FameNet, NetworkConfig, ParamStore, INIT_SCHEME};

const PARAM_PREFIX: &str = "param/";
const M_PREFIX: &str = "adam_m/";
const V_PREFIX: &str = "adam_v/";

/// Hex SHA-256 of the canonical network configuration and the
/// initialization scheme.
pub fn fingerprint(cfg: &NetworkConfig) -> String {
    let mut h = Sha256::new();
    h.update(cfg.canonical().as_bytes());
    h.update(b"init=");
    h.update(INIT_SCHEME.as_bytes());
    hex::encode(h.finalize())
}

/// Position of the training RNG stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub word_pos: u128,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore<f32>,
    pub adam: AdamState<f32>,
    /// Number of completed epochs.
    pub epoch: usize,
    pub rng: RngState,
    pub fingerprint: String,
    /// Resolved run configuration, `key=value` pairs.
    pub config: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn to_container(&self) -> Container {
        let names = self.params.names();
        let mut arrays = Vec::with_capacity(3 * names.len());
        for (prefix, tensors) in [
            (PARAM_PREFIX, self.params.tensors()),
            (M_PREFIX, &self.adam.m[..]),
            (V_PREFIX, &self.adam.v[..]),
        ] {
            arrays.extend(names.iter().zip(tensors).map(|(n, t)| (format!("{prefix}{n}"), t.clone())));
        }
        let mut metadata = vec![
            ("kind".to_string(), "checkpoint".to_string()),
            ("fingerprint".to_string(), self.fingerprint.clone()),
            ("epoch".to_string(), self.epoch.to_string()),
            ("adam_step".to_string(), self.adam.step.to_string()),
            ("rng_seed".to_string(), self.rng.seed.to_string()),
            ("rng_word_pos".to_string(), self.rng.word_pos.to_string()),
            ("names".to_string(), names.join(",")),
        ];
        metadata.extend(self.config.iter().map(|(k, v)| (format!("config.{k}"), v.clone())));
        Container { bands: 0, height: 0, width: 0, arrays, metadata }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.meta("kind") != Some("checkpoint") {
            return Err(FameError::Contract("container is not a checkpoint".into()));
        }
        let names: Vec<&str> = c.meta("names").unwrap_or_default().split(',').filter(|s| !s.is_empty()).collect();
        if c.arrays.len() != 3 * names.len() {
            return Err(FameError::Contract(format!(
                "name table lists {} parameters but the checkpoint holds {} arrays",
                names.len(),
                c.arrays.len()
            )));
        }
        let mut params = ParamStore::new();
        let (mut m, mut v) = (Vec::new(), Vec::new());
        for n in &names {
            params.add(*n, c.array(&format!("{PARAM_PREFIX}{n}"))?.clone());
            m.push(c.array(&format!("{M_PREFIX}{n}"))?.clone());
            v.push(c.array(&format!("{V_PREFIX}{n}"))?.clone());
        }
        let config = c
            .metadata
            .iter()
            .filter_map(|(k, val)| k.strip_prefix("config.").map(|k| (k.to_string(), val.clone())))
            .collect();
        Ok(Checkpoint {
            params,
            adam: AdamState { step: c.meta_parsed("adam_step")?, m, v },
            epoch: c.meta_parsed("epoch")?,
            rng: RngState { seed: c.meta_parsed("rng_seed")?, word_pos: c.meta_parsed("rng_word_pos")? },
            fingerprint: c.meta("fingerprint").unwrap_or_default().to_string(),
            config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }

    /// Fails with a config error when this checkpoint was produced by a
    /// different network configuration.
    pub fn check_compatible(&self, cfg: &NetworkConfig) -> Result<()> {
        let want = fingerprint(cfg);
        if self.fingerprint != want {
            return Err(FameError::config(
                "fingerprint",
                format!("checkpoint {} does not match model {want}", self.fingerprint),
            ));
        }
        Ok(())
    }

    /// Parameters checked against the live parameter set of `net`.
    pub fn restore(&self, net: &FameNet) -> Result<ParamStore<f32>> {
        self.check_compatible(&net.cfg)?;
        let (_, mut store) = FameNet::new::<f32>(net.cfg.clone(), 0)?;
        let items = self.params.names().iter().cloned().zip(self.params.tensors().iter().cloned()).collect();
        store.load_named(items)?;
        Ok(store)
    }
}
