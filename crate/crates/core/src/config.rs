//! Run configuration: one TOML file covering data, model, training,
//! evaluation, synthesis, and output placement. Unknown keys are rejected;
//! command-line flags override file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::pyramid::{BackboneKind, ExtractorConfig};
use crate::synthetic::{TextureFamily, TextureSpec};
use crate::training::{LossWeights, OptimizerKind, TrainConfig};

fn default_input_size() -> usize {
    256
}
fn default_norm_mean() -> [f32; 3] {
    [0.5, 0.5, 0.5]
}
fn default_norm_std() -> [f32; 3] {
    [0.5, 0.5, 0.5]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub root: PathBuf,
    pub domains: Vec<String>,
    pub target: String,
    #[serde(default = "default_input_size")]
    pub input_size: usize,
    #[serde(default = "default_norm_mean")]
    pub norm_mean: [f32; 3],
    #[serde(default = "default_norm_std")]
    pub norm_std: [f32; 3],
}

fn default_backbone() -> String {
    "small-cnn".to_string()
}
fn default_levels() -> usize {
    3
}
fn default_channels() -> usize {
    64
}
fn default_bifpn_repeats() -> usize {
    2
}
fn default_projection_dim() -> usize {
    64
}
fn default_mlp_hidden() -> Vec<usize> {
    vec![128, 64]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_backbone")]
    pub backbone: String,
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_bifpn_repeats")]
    pub bifpn_repeats: usize,
    #[serde(default = "default_projection_dim")]
    pub projection_dim: usize,
    #[serde(default = "default_mlp_hidden")]
    pub mlp_hidden: Vec<usize>,
    #[serde(default)]
    pub backbone_weights: Option<PathBuf>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            backbone: default_backbone(),
            levels: default_levels(),
            channels: default_channels(),
            bifpn_repeats: default_bifpn_repeats(),
            projection_dim: default_projection_dim(),
            mlp_hidden: default_mlp_hidden(),
            backbone_weights: None,
        }
    }
}

fn default_loss_weights() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}
fn default_steps() -> u64 {
    2000
}
fn default_batch_episodes() -> usize {
    8
}
fn default_learning_rate() -> f64 {
    1e-4
}
fn default_optimizer() -> String {
    "adam-like".to_string()
}
fn default_n_ref() -> usize {
    1
}
fn default_abnormal_prob() -> f64 {
    0.5
}
fn default_rank_pairs() -> usize {
    32
}
fn default_lambda() -> f64 {
    1.0
}
fn default_grad_clip() -> f64 {
    5.0
}
fn default_log_every() -> u64 {
    50
}
fn default_checkpoint_every() -> u64 {
    500
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    /// (cls, att, rank) loss weights.
    #[serde(default = "default_loss_weights")]
    pub loss_weights: [f64; 3],
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default = "default_batch_episodes")]
    pub batch_episodes: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_optimizer")]
    pub optimizer: String,
    #[serde(default = "default_n_ref")]
    pub n_ref: usize,
    #[serde(default = "default_abnormal_prob")]
    pub abnormal_prob: f64,
    #[serde(default = "default_rank_pairs")]
    pub rank_pairs: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_grad_clip")]
    pub grad_clip: f64,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        toml::from_str("").expect("all train fields have defaults")
    }
}

fn default_fraction() -> f64 {
    1.0
}
fn default_fractions() -> Vec<f64> {
    vec![0.1, 0.25, 0.5, 0.75, 1.0]
}
fn default_eval_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    #[serde(default = "default_eval_seeds")]
    pub seeds: Vec<u64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            fraction: default_fraction(),
            fractions: default_fractions(),
            seeds: default_eval_seeds(),
        }
    }
}

fn default_synth_frequency() -> f32 {
    6.0
}
fn default_synth_jitter() -> f32 {
    0.08
}
fn default_synth_test_fraction() -> f64 {
    0.25
}
fn default_color_a() -> [f32; 3] {
    [0.25, 0.30, 0.35]
}
fn default_color_b() -> [f32; 3] {
    [0.75, 0.70, 0.62]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthDomain {
    pub name: String,
    pub family: String,
    pub n_normal: usize,
    pub n_abnormal: usize,
    pub seed: u64,
    #[serde(default = "default_color_a")]
    pub color_a: [f32; 3],
    #[serde(default = "default_color_b")]
    pub color_b: [f32; 3],
    #[serde(default = "default_synth_frequency")]
    pub frequency: f32,
    #[serde(default)]
    pub angle_deg: f32,
    #[serde(default = "default_synth_jitter")]
    pub jitter: f32,
    #[serde(default = "default_synth_test_fraction")]
    pub test_normal_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    /// Generated image side; defaults to data.input_size.
    #[serde(default)]
    pub size: Option<usize>,
    pub domains: Vec<SynthDomain>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub root: Option<PathBuf>,
    #[serde(default)]
    pub run_name: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub synth: Option<SynthSection>,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.domains.is_empty() {
            return Err(Error::Config("data.domains must be non-empty".into()));
        }
        if !self.data.domains.contains(&self.data.target) {
            return Err(Error::Config(format!(
                "data.target {:?} is not among data.domains {:?}",
                self.data.target, self.data.domains
            )));
        }
        self.model_config()?.validate()?;
        self.train_config()?.validate()?;
        if !(self.eval.fraction > 0.0 && self.eval.fraction <= 1.0) {
            return Err(Error::Config("eval.fraction must lie in (0, 1]".into()));
        }
        if let Some(synth) = &self.synth {
            for d in &synth.domains {
                d.family.parse::<TextureFamily>()?;
                if d.n_normal < 1 {
                    return Err(Error::Config(format!(
                        "synth domain {:?} needs n_normal >= 1",
                        d.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let backbone: BackboneKind = self.model.backbone.parse()?;
        Ok(ModelConfig {
            extractor: ExtractorConfig {
                backbone,
                levels: self.model.levels,
                channels: self.model.channels,
                bifpn_repeats: self.model.bifpn_repeats,
                backbone_weights: self.model.backbone_weights.clone(),
            },
            input_size: self.data.input_size,
            projection_dim: self.model.projection_dim,
            mlp_hidden: self.model.mlp_hidden.clone(),
            norm_mean: self.data.norm_mean,
            norm_std: self.data.norm_std,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let optimizer = match self.train.optimizer.as_str() {
            "adam-like" => OptimizerKind::AdamLike,
            "sgd-momentum" => OptimizerKind::SgdMomentum,
            other => {
                return Err(Error::Config(format!(
                    "unknown optimizer {other:?} (expected adam-like or sgd-momentum)"
                )))
            }
        };
        Ok(TrainConfig {
            loss_weights: LossWeights {
                cls: self.train.loss_weights[0],
                att: self.train.loss_weights[1],
                rank: self.train.loss_weights[2],
            },
            steps: self.train.steps,
            batch_episodes: self.train.batch_episodes,
            learning_rate: self.train.learning_rate,
            seed: self.train.seed,
            optimizer,
            n_ref: self.train.n_ref,
            abnormal_prob: self.train.abnormal_prob,
            rank_pairs: self.train.rank_pairs,
            lambda: self.train.lambda,
            grad_clip: self.train.grad_clip,
            log_every: self.train.log_every,
            checkpoint_every: self.train.checkpoint_every,
        })
    }

    pub fn texture_spec(&self, d: &SynthDomain) -> Result<TextureSpec> {
        Ok(TextureSpec {
            family: d.family.parse()?,
            size: self
                .synth
                .as_ref()
                .and_then(|s| s.size)
                .unwrap_or(self.data.input_size),
            color_a: d.color_a,
            color_b: d.color_b,
            frequency: d.frequency,
            angle_deg: d.angle_deg,
            jitter: d.jitter,
            test_normal_fraction: d.test_normal_fraction,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
