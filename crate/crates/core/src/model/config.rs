use crate::error::{FameError, Result};

/// Architecture and routing hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub num_experts: usize,
    pub top_k: usize,
    pub base_channels: usize,
    pub num_resblocks: usize,
    pub gumbel_tau: f64,
    pub ms_bands: usize,
    pub upsample_factor: usize,
    pub ablation_disable_mask: bool,
    pub ablation_replace_mixture: bool,
    /// Disables gate and Gumbel noise outside training.
    pub eval_mode_noise_off: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            num_experts: 4,
            top_k: 2,
            base_channels: 32,
            num_resblocks: 2,
            gumbel_tau: 1.0,
            ms_bands: 4,
            upsample_factor: 4,
            ablation_disable_mask: false,
            ablation_replace_mixture: false,
            eval_mode_noise_off: true,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_experts == 0 {
            return Err(FameError::config("num_experts", "must be at least 1"));
        }
        if self.top_k == 0 || self.top_k > self.num_experts {
            return Err(FameError::config(
                "top_k",
                format!("must lie in 1..={}, got {}", self.num_experts, self.top_k),
            ));
        }
        if self.base_channels == 0 {
            return Err(FameError::config("base_channels", "must be positive"));
        }
        if !(self.gumbel_tau > 0.0 && self.gumbel_tau.is_finite()) {
            return Err(FameError::config(
                "gumbel_tau",
                format!("must be positive, got {}", self.gumbel_tau),
            ));
        }
        if self.ms_bands == 0 {
            return Err(FameError::config("ms_bands", "must be positive"));
        }
        if !matches!(self.upsample_factor, 2 | 4) {
            return Err(FameError::config(
                "upsample_factor",
                format!("must be 2 or 4, got {}", self.upsample_factor),
            ));
        }
        Ok(())
    }

    /// Stable textual form; feeds the checkpoint fingerprint.
    pub fn canonical(&self) -> String {
        format!(
            "num_experts={}\ntop_k={}\nbase_channels={}\nnum_resblocks={}\ngumbel_tau={:?}\nms_bands={}\n\
             upsample_factor={}\nablation_disable_mask={}\nablation_replace_mixture={}\neval_mode_noise_off={}\n",
            self.num_experts,
            self.top_k,
            self.base_channels,
            self.num_resblocks,
            self.gumbel_tau,
            self.ms_bands,
            self.upsample_factor,
            self.ablation_disable_mask,
            self.ablation_replace_mixture,
            self.eval_mode_noise_off,
        )
    }
}
