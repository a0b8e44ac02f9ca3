use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::{read_json, require_ood, AdapterConfig, ClassifierHandle};
use crate::error::{validation, Result};
use crate::explainers::{ExplainerKind, LimeSettings, MaskSpec, OcclusionPlusMode};
use crate::masking::MaskConfig;
use crate::metrics::DEFAULT_THRESHOLD;
use crate::types::Fill;

/// Class explained for each manifest image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetPolicy {
    /// The manifest label, falling back to the prediction when the label is blank.
    #[default]
    Label,
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSettings {
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    #[serde(default = "default_steps")]
    pub n_theta: usize,
    /// Deletion replacement value; defaults to the explainer fill.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fill: Option<Fill>,
    #[serde(default = "default_threshold")]
    pub degradation_threshold: f64,
}

fn default_steps() -> usize {
    100
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_groups() -> usize {
    1
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings {
            n_steps: default_steps(),
            n_theta: default_steps(),
            fill: None,
            degradation_threshold: default_threshold(),
        }
    }
}

/// Everything an `evaluate` run needs besides the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub adapter: AdapterConfig,
    /// Separate model for features and class weights; defaults to `adapter`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood_adapter: Option<AdapterConfig>,
    pub explainers: Vec<ExplainerKind>,
    #[serde(default)]
    pub masks: MaskConfig,
    #[serde(default)]
    pub metrics: MetricSettings,
    #[serde(default)]
    pub fill: Fill,
    #[serde(default)]
    pub lime: LimeSettings,
    #[serde(default)]
    pub occlusion_plus: OcclusionPlusMode,
    #[serde(default)]
    pub target: TargetPolicy,
    /// Images per group; all processed images when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_size: Option<usize>,
    #[serde(default = "default_groups")]
    pub n_groups: usize,
    #[serde(default)]
    pub seed: u64,
    /// Directory that relative paths in the config resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = read_json(path)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.explainers.is_empty() {
            return Err(validation("config lists no explainers"));
        }
        if self.group_size == Some(0) {
            return Err(validation("group_size must be at least 1"));
        }
        if self.n_groups == 0 {
            return Err(validation("n_groups must be at least 1"));
        }
        if self.metrics.n_steps == 0 || self.metrics.n_theta == 0 {
            return Err(validation("n_steps and n_theta must be at least 1"));
        }
        Ok(())
    }

    /// Mask spec used by `kind`, with defaults for families the config omits.
    pub fn mask_spec(&self, kind: ExplainerKind) -> MaskSpec {
        match kind {
            ExplainerKind::Rise | ExplainerKind::RisePlus => MaskSpec::Rise(self.masks.rise.unwrap_or_default()),
            ExplainerKind::Occlusion | ExplainerKind::OcclusionPlus => {
                MaskSpec::Occlusion(self.masks.occlusion.unwrap_or_default())
            }
            ExplainerKind::Lime | ExplainerKind::LimePlus => {
                let mut params = self.masks.lime.clone().unwrap_or_default();
                if let Some(p) = &params.segments_png {
                    if p.is_relative() {
                        params.segments_png = Some(self.base_dir.join(p));
                    }
                }
                MaskSpec::Lime(params)
            }
        }
    }

    pub fn deletion_fill(&self) -> &Fill {
        self.metrics.fill.as_ref().unwrap_or(&self.fill)
    }

    /// Loads the classifier and the inlier-score model.
    pub fn load_models(&self) -> Result<Models> {
        let model = self.adapter.load(&self.base_dir)?;
        let ood = match &self.ood_adapter {
            Some(cfg) => Some(cfg.load(&self.base_dir)?),
            None => None,
        };
        let models = Models { model, ood };
        if self.explainers.iter().any(|k| k.uses_ood()) {
            require_ood(models.ood_handle().as_ref())
                .map_err(|e| validation(format!("explainers with inlier scores need an OoD-capable model: {e}")))?;
        }
        Ok(models)
    }
}

#[derive(Debug, Clone)]
pub struct Models {
    pub model: ClassifierHandle,
    pub ood: Option<ClassifierHandle>,
}

impl Models {
    pub fn ood_handle(&self) -> &ClassifierHandle {
        self.ood.as_ref().unwrap_or(&self.model)
    }

    pub fn ood_capable(&self) -> bool {
        self.ood_handle().capabilities().ood_capable()
    }
}
