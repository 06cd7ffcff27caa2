//! TOML configuration with compiled-in defaults and CLI overrides.
//!
//! Defaults follow the reference settings (T=1000, N=3, s_a=0.3, s_n=0.8);
//! `configs/desk.toml` scales them down so end-to-end runs finish on one
//! CPU core. Unknown keys are rejected so typos fail loudly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use scoreadv_core::error::{Error, Result};
use scoreadv_core::guidance::GuidanceConfig;
use scoreadv_core::models::classifier::TrainConfig;
use scoreadv_core::models::dataset::DatasetSpec;
use scoreadv_core::models::denoiser::DenoiserConfig;
use scoreadv_core::models::embedder::EmbedderConfig;
use scoreadv_core::saliency::{CombineSpace, SaliencyMethod, SaliencySettings};
use scoreadv_core::schedule::{ScheduleSpec, SigmaMode};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub dataset: DatasetSection,
    pub schedule: ScheduleSection,
    pub train: TrainSection,
    pub guidance: GuidanceSection,
    pub attack: AttackSection,
    pub gates: GatesSection,
    pub models: ModelsSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub resolution: usize,
    pub classes: usize,
    pub per_class_train: usize,
    pub per_class_test: usize,
    pub seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            resolution: 32,
            classes: 10,
            per_class_train: 300,
            per_class_test: 40,
            seed: 1,
        }
    }
}

impl DatasetSection {
    pub fn spec(&self) -> DatasetSpec {
        DatasetSpec {
            resolution: self.resolution,
            classes: self.classes,
            per_class_train: self.per_class_train,
            per_class_test: self.per_class_test,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub sigma_mode: SigmaMode,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            sigma_mode: SigmaMode::PosteriorSqrt,
        }
    }
}

impl ScheduleSection {
    pub fn spec(&self) -> ScheduleSpec {
        ScheduleSpec {
            steps: self.steps,
            beta_start: self.beta_start,
            beta_end: self.beta_end,
            sigma_mode: self.sigma_mode,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub classifier: TrainConfig,
    pub mlp: TrainConfig,
    pub embedder: EmbedderConfig,
    pub denoiser: DenoiserConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            classifier: TrainConfig::default(),
            mlp: TrainConfig {
                seed: 12,
                ..TrainConfig::default()
            },
            embedder: EmbedderConfig::default(),
            denoiser: DenoiserConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceSection {
    /// Guidance window T*; `None` means the full schedule.
    pub adv_window: Option<usize>,
    pub cycles: usize,
    pub adv_scale: f64,
    pub class_scale: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for GuidanceSection {
    fn default() -> Self {
        GuidanceSection {
            adv_window: None,
            cycles: 3,
            adv_scale: 0.3,
            class_scale: 1.0,
            noise_scale: 0.8,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub count: usize,
    pub workers: usize,
    /// Which classifier supplies gradients: "conv" or "mlp".
    pub surrogate: String,
    pub early_stop: bool,
    pub grad_at_mean: bool,
    pub chain_x0_factor: bool,
    pub fuse_before_guidance: bool,
    pub similarity_threshold: f64,
    /// PNG whose content is inpainted outside the saliency mask.
    pub reference: Option<String>,
    /// PNG whose embedding the attack should approach (recognition mode).
    pub target_image: Option<String>,
    pub saliency_method: SaliencyMethod,
    pub saliency_layer: String,
    pub saliency_combine: CombineSpace,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            count: 200,
            workers: 1,
            surrogate: "conv".to_string(),
            early_stop: false,
            grad_at_mean: false,
            chain_x0_factor: false,
            fuse_before_guidance: false,
            similarity_threshold: 0.7,
            reference: None,
            target_image: None,
            saliency_method: SaliencyMethod::ScoreCam,
            saliency_layer: "conv3".to_string(),
            saliency_combine: CombineSpace::Feature,
        }
    }
}

impl AttackSection {
    pub fn saliency_settings(&self) -> SaliencySettings {
        SaliencySettings {
            method: self.saliency_method,
            layer: self.saliency_layer.clone(),
            combine: self.saliency_combine,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatesSection {
    pub classifier_accuracy: f64,
    pub embedder_verification: f64,
    pub verification_threshold: f64,
    pub verification_pairs: usize,
    /// Unguided-sample desk-FID must beat pure noise by this factor.
    pub denoiser_fid_factor: f64,
    pub fid_sample_count: usize,
    pub sample_seed: u64,
}

impl Default for GatesSection {
    fn default() -> Self {
        GatesSection {
            classifier_accuracy: 0.85,
            embedder_verification: 0.90,
            verification_threshold: 0.7,
            verification_pairs: 200,
            denoiser_fid_factor: 5.0,
            fid_sample_count: 64,
            sample_seed: 99,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsSection {
    /// Train-run directory holding checkpoints/ and manifest.json.
    pub dir: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub root: String,
    pub tag: Option<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            root: "runs".to_string(),
            tag: None,
        }
    }
}

impl Config {
    /// Reads a TOML file; a missing path argument yields pure defaults.
    pub fn load(path: Option<&Path>) -> Result<Config> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::ingestion(format!("config {}: {e}", path.display()))
        })?;
        toml::from_str(&text)
            .map_err(|e| Error::parameter(format!("config {}: {e}", path.display())))
    }

    /// Guidance knobs resolved against the schedule length.
    pub fn guidance_config(&self) -> GuidanceConfig {
        GuidanceConfig {
            steps: self.schedule.steps,
            adv_window: self.guidance.adv_window.unwrap_or(self.schedule.steps),
            cycles: self.guidance.cycles,
            adv_scale: self.guidance.adv_scale,
            class_scale: self.guidance.class_scale,
            noise_scale: self.guidance.noise_scale,
            seed: self.guidance.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.guidance_config().validate()?;
        self.schedule.spec().build()?;
        if self.attack.count == 0 {
            return Err(Error::parameter("attack count must be >= 1"));
        }
        if self.attack.workers == 0 {
            return Err(Error::parameter("workers must be >= 1"));
        }
        if self.attack.surrogate != "conv" && self.attack.surrogate != "mlp" {
            return Err(Error::parameter(format!(
                "surrogate must be conv or mlp, got {}",
                self.attack.surrogate
            )));
        }
        Ok(())
    }
}
