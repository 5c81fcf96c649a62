//! Knowledge-enhanced spatial guidance.
//!
//! Each character in a scene gets a Gaussian position prior, refined by a
//! small knowledge encoder, discretized to a mask over the latent grid and
//! used to push that character's caption tokens toward its region of the
//! cross-attention map with a time-dependent strength.

mod attention;
mod edit;
mod encoder;
pub mod features;
mod pipeline;
mod prior;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;

pub use attention::{
    random_matrix, softmax_rows, toy_cross_attention, AttentionKind, AttentionTensor, ToyAttentionOutput,
    ToyCrossAttention,
};
pub use edit::{apply_guidance, apply_guidance_with_scale, guidance_scale, in_region_mass, RegionEdit};
pub use encoder::{
    fit_encoder_supervised, knowledge_encoder_forward, DenseLayer, EncoderOutput, EncoderWeights, FitReport,
    FitSample,
};
pub use pipeline::{
    plan_scene, toy_guidance_report, CharacterGuidance, MassReport, MassRow, ToyHarness, REPORT_TIMESTEPS,
    TOY_INPUT_DIM, TOY_LATENT_DIM,
};
pub use prior::{init_position_prior, CoordinateBox, Mask, PositionPrior};

#[derive(Debug, Error, PartialEq)]
pub enum GuidanceError {
    #[error("character index {index} out of range for {count} characters")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("covariance is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("covariance scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("timestep must be non-negative, got {0}")]
    NegativeTimestep(i64),
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch { context: &'static str, expected: usize, found: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Where the additive edit is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceMode {
    /// Edit pre-softmax scores; the map is their row softmax.
    #[default]
    Logit,
    /// Edit the normalized map, clamp at zero and renormalize rows.
    PostSoftmaxRenorm,
}

impl std::str::FromStr for GuidanceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logit" => Ok(Self::Logit),
            "post_softmax_renorm" => Ok(Self::PostSoftmaxRenorm),
            other => Err(format!("unknown guidance mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
}

impl Grid {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_dim: usize,
    #[serde(default = "EncoderConfig::default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Optional JSON file with trained weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<String>,
}

impl EncoderConfig {
    fn default_hidden() -> Vec<usize> {
        vec![64, 64]
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(self.input_dim);
        sizes.extend(&self.hidden);
        sizes.push(3);
        sizes
    }
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { input_dim: 64, hidden: Self::default_hidden(), seed: 0, weights: None }
    }
}

/// Per-dataset guidance strength.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetProfile {
    Pororo,
    Frozen,
}

impl DatasetProfile {
    pub fn alpha(self) -> f64 {
        match self {
            DatasetProfile::Pororo => 2.5,
            DatasetProfile::Frozen => 1.0,
        }
    }
}

impl std::str::FromStr for DatasetProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pororo" => Ok(Self::Pororo),
            "frozen" => Ok(Self::Frozen),
            other => Err(format!("unknown dataset profile `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
pub struct GuidanceConfig<T> {
    pub alpha: T,
    #[serde(default = "default_beta_fraction")]
    pub beta_fraction: T,
    #[serde(default)]
    pub mode: GuidanceMode,
    pub grid: Grid,
    #[serde(default)]
    pub extent: CoordinateBox<T>,
    #[serde(default)]
    pub encoder: EncoderConfig,
}

fn default_beta_fraction<T: Scalar>() -> T {
    T::lit(0.85)
}

impl<T: Scalar> Default for GuidanceConfig<T> {
    fn default() -> Self {
        Self::for_profile(DatasetProfile::Pororo)
    }
}

impl<T: Scalar> GuidanceConfig<T> {
    pub fn for_profile(profile: DatasetProfile) -> Self {
        Self {
            alpha: T::lit(profile.alpha()),
            beta_fraction: default_beta_fraction(),
            mode: GuidanceMode::Logit,
            grid: Grid { height: 16, width: 16 },
            extent: CoordinateBox::default(),
            encoder: EncoderConfig::default(),
        }
    }

    /// Overrides only `alpha`.
    pub fn apply_profile(&mut self, profile: DatasetProfile) {
        self.alpha = T::lit(profile.alpha());
    }

    pub fn validate(&self) -> Result<(), GuidanceError> {
        if !(self.alpha > T::zero()) {
            return Err(GuidanceError::InvalidConfig(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.beta_fraction > T::zero() && self.beta_fraction < T::one()) {
            return Err(GuidanceError::InvalidConfig(format!(
                "beta_fraction must lie in (0, 1), got {}",
                self.beta_fraction
            )));
        }
        if self.grid.height == 0 || self.grid.width == 0 {
            return Err(GuidanceError::InvalidConfig("grid dimensions must be >= 1".into()));
        }
        self.extent.validate()?;
        if self.encoder.input_dim == 0 || self.encoder.hidden.contains(&0) {
            return Err(GuidanceError::InvalidConfig("encoder layer sizes must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_profiles() {
        let c = GuidanceConfig::<f64>::default();
        assert_eq!(c.alpha, 2.5);
        assert_eq!(c.beta_fraction, 0.85);
        assert_eq!(c.mode, GuidanceMode::Logit);
        let f = GuidanceConfig::<f64>::for_profile(DatasetProfile::Frozen);
        assert_eq!(f.alpha, 1.0);
        c.validate().unwrap();
    }

    #[test]
    fn config_json() {
        let text = r#"{"alpha": 1.5, "mode": "post_softmax_renorm", "grid": {"height": 8, "width": 4},
            "extent": {"x_min": -2, "x_max": 2, "y_min": -1, "y_max": 1},
            "encoder": {"input_dim": 16, "hidden": [8], "seed": 3}}"#;
        let c: GuidanceConfig<f64> = serde_json::from_str(text).unwrap();
        assert_eq!(c.beta_fraction, 0.85);
        assert_eq!(c.mode, GuidanceMode::PostSoftmaxRenorm);
        assert_eq!(c.encoder.layer_sizes(), vec![16, 8, 3]);
        c.validate().unwrap();
        assert!(serde_json::from_str::<GuidanceConfig<f64>>(r#"{"alpha":1,"grid":{"height":1,"width":1},"gamma":2}"#).is_err());
        let bad: GuidanceConfig<f64> = serde_json::from_str(r#"{"alpha":1,"beta_fraction":1.0,"grid":{"height":1,"width":1}}"#).unwrap();
        assert!(bad.validate().is_err());
    }
}
