use log::warn;
use serde::{Deserialize, Serialize};

use crate::convgraph::EdgeRules;
use crate::encoders::{Modalities, PerModality};
use crate::error::{Error, Result};
use crate::fusion::GdfSettings;

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Focal,
}

/// How per-class loss weights are derived from the training labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    Uniform,
    InverseFrequency,
}

/// What produces the refined embeddings `o` fed to the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    /// The gated graph stack.
    Gdf,
    /// A fully connected layer over the concatenated modality embeddings.
    Concat,
    /// No fusion: `o = x`.
    Identity,
}

/// Architecture and objective settings.
///
/// Defaults: `d = 64`, `K = 16`, `α = 0.2`, `ρ = 0.5`, `γ^δ = 1`, all
/// modalities, both edge rules, all components on, focal loss with
/// focusing parameter 2 and inverse-frequency class weights, `η = 3e-5`
/// on the unsquared parameter norm, forget-gate bias 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub k: usize,
    pub alpha: f64,
    pub rho: f64,
    pub gamma_a: f64,
    pub gamma_v: f64,
    pub gamma_t: f64,
    pub modalities: Modalities,
    pub intra: bool,
    pub inter: bool,
    pub use_gdf: bool,
    /// When `use_gdf` is off, fuse by concatenation (true) or not at all.
    pub concat_fallback: bool,
    pub use_speaker: bool,
    pub use_context: bool,
    pub loss: LossKind,
    pub focal_gamma: f64,
    pub class_weighting: ClassWeighting,
    pub eta: f64,
    /// Penalize `‖Θ‖²` instead of `‖Θ‖`.
    pub l2_squared: bool,
    pub forget_bias: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 64,
            k: 16,
            alpha: 0.2,
            rho: 0.5,
            gamma_a: 1.0,
            gamma_v: 1.0,
            gamma_t: 1.0,
            modalities: Modalities::ALL,
            intra: true,
            inter: true,
            use_gdf: true,
            concat_fallback: true,
            use_speaker: true,
            use_context: true,
            loss: LossKind::Focal,
            focal_gamma: 2.0,
            class_weighting: ClassWeighting::InverseFrequency,
            eta: 3e-5,
            l2_squared: false,
            forget_bias: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d < 2 || !self.d.is_multiple_of(2) {
            return Err(Error::Config(format!("d = {} must be even and at least 2", self.d)));
        }
        self.gdf_settings().validate()?;
        if !(self.focal_gamma >= 0.0) {
            return Err(Error::Config(format!("focal_gamma must be >= 0, got {}", self.focal_gamma)));
        }
        if !(self.eta >= 0.0) {
            return Err(Error::Config(format!("eta must be >= 0, got {}", self.eta)));
        }
        for g in [self.gamma_a, self.gamma_v, self.gamma_t, self.forget_bias] {
            if !g.is_finite() {
                return Err(Error::Config("trade-off weights and biases must be finite".into()));
            }
        }
        if self.fusion_mode() == FusionMode::Gdf && self.k > 0 && !self.intra && !self.inter {
            warn!("both edge rules are off with {} fusion layers: propagation reduces to the identity", self.k);
        }
        Ok(())
    }

    pub fn fusion_mode(&self) -> FusionMode {
        match (self.use_gdf, self.concat_fallback) {
            (true, _) => FusionMode::Gdf,
            (false, true) => FusionMode::Concat,
            (false, false) => FusionMode::Identity,
        }
    }

    pub fn gammas(&self) -> PerModality<f64> {
        PerModality::new(self.gamma_a, self.gamma_v, self.gamma_t)
    }

    pub fn edge_rules(&self) -> EdgeRules {
        EdgeRules {
            intra: self.intra,
            inter: self.inter,
        }
    }

    pub fn gdf_settings(&self) -> GdfSettings {
        GdfSettings {
            layers: self.k,
            alpha: self.alpha,
            rho: self.rho,
        }
    }

    /// Width of the classifier input, `2 · |modalities| · d`.
    pub fn classifier_width(&self) -> usize {
        2 * self.modalities.len() * self.d
    }
}
