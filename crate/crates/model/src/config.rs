use std::path::Path;

use lfv_core::lightfield::ThresholdPolicy;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

/// Network shape, loss weights and training schedule.
///
/// Unknown keys are rejected so typos in config files surface early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Channel width `b` of the first encoder layer; the encoder uses
    /// `b, 2b, 4b, 4b`, the fusion layers `8b`, the occlusion net `b/2, b, 2b`.
    pub base_channels: usize,
    /// Convolution layers in the shared frame encoder.
    pub encoder_depth: usize,
    /// Correlation search radius in encoder pixels.
    pub max_disp: usize,
    /// Drop the correlation channels and fuse encoder features only.
    pub correlation_bypass: bool,
    /// Shift applied to the input per unit of angular coordinate (px/view).
    pub eta: f32,
    /// Bound on each appearance-flow component in pixels.
    pub flow_cap: f32,
    pub w_global: f32,
    pub w_local: f32,
    pub w_occ: f32,
    pub w_percep: f32,
    pub w_temp: f32,
    pub w_flow: f32,
    /// Binarization of the variance image fed to the occlusion net.
    pub variance_threshold: ThresholdPolicy,
    pub learning_rate: f64,
    pub warmup_iters: usize,
    pub total_iters: usize,
    /// Side of the square training crop; a multiple of 8.
    pub crop: usize,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            encoder_depth: 4,
            max_disp: 4,
            correlation_bypass: false,
            eta: 1.0,
            flow_cap: 5.0,
            w_global: 1.0,
            w_local: 1.0,
            w_occ: 1.0,
            w_percep: 0.1,
            w_temp: 0.5,
            w_flow: 1.0,
            variance_threshold: ThresholdPolicy::default(),
            learning_rate: 2e-4,
            warmup_iters: 2000,
            total_iters: 10_000,
            crop: 64,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.base_channels < 2 || !self.base_channels.is_multiple_of(2) {
            return bad(format!(
                "base_channels {} must be even and >= 2",
                self.base_channels
            ));
        }
        if self.encoder_depth != 4 {
            return bad(format!(
                "encoder_depth {} unsupported; the encoder has 4 layers",
                self.encoder_depth
            ));
        }
        let weights = [
            ("w_global", self.w_global),
            ("w_local", self.w_local),
            ("w_occ", self.w_occ),
            ("w_percep", self.w_percep),
            ("w_temp", self.w_temp),
            ("w_flow", self.w_flow),
        ];
        for (name, w) in weights {
            if !(w.is_finite() && w >= 0.0) {
                return bad(format!("{name} = {w} must be finite and >= 0"));
            }
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return bad(format!("eta {} must be finite and >= 0", self.eta));
        }
        if !(self.flow_cap.is_finite() && self.flow_cap > 0.0) {
            return bad(format!("flow_cap {} must be positive", self.flow_cap));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            ));
        }
        if self.warmup_iters > self.total_iters {
            return bad(format!(
                "warmup_iters {} exceeds total_iters {}",
                self.warmup_iters, self.total_iters
            ));
        }
        if self.crop < 16 || !self.crop.is_multiple_of(8) {
            return bad(format!(
                "crop {} must be a multiple of 8 and >= 16",
                self.crop
            ));
        }
        if 8.0 * self.eta >= self.crop as f32 {
            return bad(format!("eta {} too large for crop {}", self.eta, self.crop));
        }
        match self.variance_threshold {
            ThresholdPolicy::Percentile(q) if !(0.0..=1.0).contains(&q) => {
                bad(format!("variance percentile {q} outside [0, 1]"))
            }
            ThresholdPolicy::Absolute(t) if !(t.is_finite() && t >= 0.0) => {
                bad(format!("variance threshold {t} must be finite and >= 0"))
            }
            _ => Ok(()),
        }
    }

    /// Parses JSON or TOML, chosen by the file extension.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)
                .map_err(|e| ModelError::Config(format!("{}: {e}", path.display())))?,
            Some("toml") => toml::from_str(&text)
                .map_err(|e| ModelError::Config(format!("{}: {e}", path.display())))?,
            _ => {
                return Err(ModelError::Config(format!(
                    "{}: expected a .json or .toml file",
                    path.display()
                )))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn occ_channels(&self) -> usize {
        self.base_channels / 2
    }
}
