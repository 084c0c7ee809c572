use serde::{Deserialize, Serialize};

use crate::entropy::{DEFAULT_FILTERS, DEFAULT_PRECISION, DEFAULT_TAIL_MASS};
use crate::error::{Error, Result};
use crate::nncore::OptimizerKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Local,
    Fed,
    Fedavg,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Local => "local",
            Regime::Fed => "fed",
            Regime::Fedavg => "fedavg",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Transform and entropy-model shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Latent dimension `d_y`.
    pub latent_dim: usize,
    /// Hidden widths of `g_a`; `g_s` mirrors them.
    pub hidden: Vec<usize>,
    /// Internal widths of the entropy model's per-channel chain.
    pub filters: Vec<usize>,
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: 16,
            hidden: vec![32],
            filters: DEFAULT_FILTERS.to_vec(),
            init_scale: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("model.latent_dim must be positive".into()));
        }
        if self.hidden.contains(&0) || self.filters.contains(&0) {
            return Err(Error::Config("model widths must be positive".into()));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config("model.init_scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Communication rounds `T`.
    pub rounds: usize,
    /// Entropy-model steps per participation in Fed-NTC (`T_p`).
    pub entropy_steps: usize,
    /// Transform steps per participation in Fed-NTC (`T_g`).
    pub transform_steps: usize,
    /// Joint steps per round for Local-NTC.
    pub local_steps: usize,
    /// Joint local steps per participation in FedAvg.
    pub fedavg_steps: usize,
    /// Participation rate `r`.
    pub participation: f64,
    pub lr: f64,
    pub lambda: f64,
    pub batch: usize,
    pub optimizer: OptimizerKind,
    /// Whether Fed-NTC and FedAvg clients carry their optimizer moments from
    /// one participation to the next. When false every local copy starts
    /// from a fresh optimizer.
    pub keep_optimizer_state: bool,
    pub precision: u32,
    pub tail_mass: f64,
    /// Rounds averaged into the final metric.
    pub final_window: usize,
    /// Peak signal value for PSNR logging; omitted when unset.
    pub psnr_peak: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rounds: 100,
            entropy_steps: 10,
            transform_steps: 10,
            local_steps: 20,
            fedavg_steps: 10,
            participation: 0.1,
            lr: 1e-3,
            lambda: 1.0,
            batch: 32,
            optimizer: OptimizerKind::Adam,
            keep_optimizer_state: true,
            precision: DEFAULT_PRECISION,
            tail_mass: DEFAULT_TAIL_MASS,
            final_window: 10,
            psnr_peak: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("training.rounds", self.rounds),
            ("training.entropy_steps", self.entropy_steps),
            ("training.transform_steps", self.transform_steps),
            ("training.local_steps", self.local_steps),
            ("training.fedavg_steps", self.fedavg_steps),
            ("training.batch", self.batch),
            ("training.final_window", self.final_window),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{key} must be at least 1")));
            }
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::Config(format!(
                "training.participation must lie in (0, 1], got {}",
                self.participation
            )));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("training.lambda must be positive, got {}", self.lambda)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("training.lr must be positive, got {}", self.lr)));
        }
        if !(8..=24).contains(&self.precision) {
            return Err(Error::Config(format!(
                "training.precision must lie in [8, 24], got {}",
                self.precision
            )));
        }
        if !(self.tail_mass > 0.0 && self.tail_mass < 0.01) {
            return Err(Error::Config(format!(
                "training.tail_mass must lie in (0, 0.01), got {}",
                self.tail_mass
            )));
        }
        if let Some(p) = self.psnr_peak {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::Config("training.psnr_peak must be positive".into()));
            }
        }
        Ok(())
    }
}
