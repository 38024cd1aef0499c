//! Flat `key = value` run configuration with `#` comments.

use std::str::FromStr;

use crate::error::{FameError, Result};
use crate::model::NetworkConfig;
use crate::trainer::TrainConfig;

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "FAME_SEED";

/// Every accepted key, in the order [`RunConfig::entries`] emits them.
pub const KEYS: [&str; 22] = [
    "num_experts",
    "top_k",
    "base_channels",
    "num_resblocks",
    "gumbel_tau",
    "ms_bands",
    "upsample_factor",
    "ablation_disable_mask",
    "ablation_replace_mixture",
    "eval_mode_noise_off",
    "epochs",
    "lr",
    "batch_size",
    "seed",
    "alpha_initial",
    "beta",
    "anneal_cutoff_fraction",
    "checkpoint_every",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "grad_clip",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
}

fn parse_value<V: FromStr>(key: &str, value: &str, what: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| FameError::config(key, format!("expected {what}, got `{value}`")))
}

impl RunConfig {
    /// Defaults overridden by the assignments in `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                FameError::config(line, format!("line {} is not `key = value`", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key) {
                return Err(FameError::config(key, format!("assigned twice (line {})", lineno + 1)));
            }
            seen.push(key);
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Rebuilds a configuration from [`RunConfig::entries`] output.
    pub fn from_entries<K: AsRef<str>, V: AsRef<str>>(entries: &[(K, V)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (k, v) in entries {
            cfg.set(k.as_ref(), v.as_ref())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (n, t) = (&mut self.network, &mut self.train);
        let int = "a non-negative integer";
        let float = "a number";
        let boolean = "`true` or `false`";
        match key {
            "num_experts" => n.num_experts = parse_value(key, value, int)?,
            "top_k" => n.top_k = parse_value(key, value, int)?,
            "base_channels" => n.base_channels = parse_value(key, value, int)?,
            "num_resblocks" => n.num_resblocks = parse_value(key, value, int)?,
            "gumbel_tau" => n.gumbel_tau = parse_value(key, value, float)?,
            "ms_bands" => n.ms_bands = parse_value(key, value, int)?,
            "upsample_factor" => n.upsample_factor = parse_value(key, value, int)?,
            "ablation_disable_mask" => n.ablation_disable_mask = parse_value(key, value, boolean)?,
            "ablation_replace_mixture" => n.ablation_replace_mixture = parse_value(key, value, boolean)?,
            "eval_mode_noise_off" => n.eval_mode_noise_off = parse_value(key, value, boolean)?,
            "epochs" => t.epochs = parse_value(key, value, int)?,
            "lr" => t.lr = parse_value(key, value, float)?,
            "batch_size" => t.batch_size = parse_value(key, value, int)?,
            "seed" => t.seed = parse_value(key, value, int)?,
            "alpha_initial" => t.loss_weights.alpha_initial = parse_value(key, value, float)?,
            "beta" => t.loss_weights.beta = parse_value(key, value, float)?,
            "anneal_cutoff_fraction" => t.loss_weights.anneal_cutoff_fraction = parse_value(key, value, float)?,
            "checkpoint_every" => t.checkpoint_every = parse_value(key, value, int)?,
            "adam_beta1" => t.beta1 = parse_value(key, value, float)?,
            "adam_beta2" => t.beta2 = parse_value(key, value, float)?,
            "adam_eps" => t.eps = parse_value(key, value, float)?,
            "grad_clip" => {
                t.grad_clip = match value {
                    "none" | "off" => None,
                    v => Some(parse_value(key, v, "a number or `none`")?),
                }
            }
            _ => {
                return Err(FameError::config(
                    key,
                    format!("unknown key; accepted keys: {}", KEYS.join(", ")),
                ))
            }
        }
        t.loss_weights.total_epochs = t.epochs;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()
    }

    /// Replaces the seed with `value` when it is set.
    pub fn override_seed(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            self.train.seed = parse_value(SEED_ENV, v.trim(), "a non-negative integer")?;
        }
        Ok(())
    }

    /// Every key with its resolved value.
    pub fn entries(&self) -> Vec<(String, String)> {
        let (n, t) = (&self.network, &self.train);
        let values = [
            n.num_experts.to_string(),
            n.top_k.to_string(),
            n.base_channels.to_string(),
            n.num_resblocks.to_string(),
            format!("{:?}", n.gumbel_tau),
            n.ms_bands.to_string(),
            n.upsample_factor.to_string(),
            n.ablation_disable_mask.to_string(),
            n.ablation_replace_mixture.to_string(),
            n.eval_mode_noise_off.to_string(),
            t.epochs.to_string(),
            format!("{:?}", t.lr),
            t.batch_size.to_string(),
            t.seed.to_string(),
            format!("{:?}", t.loss_weights.alpha_initial),
            format!("{:?}", t.loss_weights.beta),
            format!("{:?}", t.loss_weights.anneal_cutoff_fraction),
            t.checkpoint_every.to_string(),
            format!("{:?}", t.beta1),
            format!("{:?}", t.beta2),
            format!("{:?}", t.eps),
            t.grad_clip.map_or("none".to_string(), |c| format!("{c:?}")),
        ];
        KEYS.iter().zip(values).map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Parseable text with every default materialized.
    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
