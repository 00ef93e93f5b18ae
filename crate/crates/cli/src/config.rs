//! Run configuration: one strict JSON document covering every stage. Every
//! field has a default, unknown keys are rejected, and flag overrides land
//! in the struct before the echo is written, so `config_echo.json` always
//! names the effective values of a run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use neurodecode::cgan::{DiscSpec, GLossMode, GanConfig, GenSpec, NoiseMode};
use neurodecode::encoder::{ConvSpec, EncoderHyper, EncoderSpec};
use neurodecode::recon::{ReconHyper, ReconLossKind, ReconSpec};
use neurodecode::ridge::RidgeOptions;
use neurodecode::synth::SynthConfig;
use neurodecode::Result;

// Stage seeds derive from the global seed so one --seed moves every stream.
pub const ENCODER_SEED_OFFSET: u64 = 0x100;
pub const RECON_SEED_OFFSET: u64 = 0x200;
/// Per-category GAN seeds add the category id on top of this offset.
pub const GAN_SEED_OFFSET: u64 = 0x300;
pub const PIPELINE_SEED_OFFSET: u64 = 0x400;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub deterministic: bool,
    pub synth: SynthSection,
    pub encoder: EncoderSection,
    pub decoder: DecoderSection,
    pub recon: ReconSection,
    pub gan: GanSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            deterministic: false,
            synth: SynthSection::default(),
            encoder: EncoderSection::default(),
            decoder: DecoderSection::default(),
            recon: ReconSection::default(),
            gan: GanSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub num_categories: usize,
    pub samples_per_category: usize,
    pub image_size: usize,
    pub feature_dim: usize,
    pub num_voxels: usize,
    pub sigma_v: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            num_categories: 2,
            samples_per_category: 20,
            image_size: 16,
            feature_dim: 12,
            num_voxels: 20,
            sigma_v: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Channel widths of the 3x3 stride-2 conv stack.
    pub conv_channels: Vec<usize>,
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            steps: 400,
            batch: 16,
            lr: 1e-3,
            conv_channels: vec![8, 16],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderSection {
    /// Penalty used for the pipeline's decoder checkpoint.
    pub alpha: f64,
    /// Grid swept by `evaluate` (the near-zero baseline is added on top).
    pub alphas: Vec<f64>,
    pub standardize: bool,
}

impl Default for DecoderSection {
    fn default() -> Self {
        DecoderSection {
            alpha: 0.7,
            alphas: vec![0.1, 0.7, 3.0],
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconSection {
    pub epochs: usize,
    pub batch: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub sigma_scale: f64,
    pub loss: ReconLossKind,
    pub fc_shape: [usize; 3],
    pub deconv_channels: Vec<usize>,
}

impl Default for ReconSection {
    fn default() -> Self {
        ReconSection {
            epochs: 150,
            batch: 8,
            lr0: 0.01,
            lr_decay: 0.95,
            sigma_scale: 0.01,
            loss: ReconLossKind::default(),
            fc_shape: [8, 4, 4],
            deconv_channels: vec![16, 8],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanSection {
    pub lambda_l1: f64,
    pub theta_recon: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub noise: NoiseMode,
    pub g_loss: GLossMode,
    /// Train only this category; None trains one GAN per category present.
    pub category: Option<usize>,
    pub gen_channels: Vec<usize>,
    pub disc_channels: Vec<usize>,
}

impl Default for GanSection {
    fn default() -> Self {
        GanSection {
            lambda_l1: 100.0,
            theta_recon: 0.0,
            lr: 1e-3,
            batch: 8,
            epochs: 60,
            noise: NoiseMode::Gaussian,
            g_loss: GLossMode::default(),
            category: None,
            gen_channels: vec![8, 16],
            disc_channels: vec![8, 16],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategorySourceKind {
    /// Ground-truth labels from the manifest.
    Given,
    /// Categories decoded from the voxels by the fitted classifier.
    Classifier,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Number of test samples tiled into the comparison grid.
    pub grid_samples: usize,
    pub fallback_to_coarse: bool,
    pub category_source: CategorySourceKind,
    pub classifier_alpha: f64,
    pub noise: NoiseMode,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            grid_samples: 4,
            fallback_to_coarse: true,
            category_source: CategorySourceKind::Classifier,
            classifier_alpha: 0.7,
            noise: NoiseMode::Gaussian,
        }
    }
}

impl RunConfig {
    /// Built-in defaults when no file is named; strict JSON otherwise.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let raw = std::fs::read_to_string(p)?;
                Ok(serde_json::from_str(&raw)?)
            }
        }
    }

    pub fn write_echo(&self, out: &Path) -> Result<()> {
        std::fs::create_dir_all(out)?;
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(out.join("config_echo.json"), s)?;
        Ok(())
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            num_categories: self.synth.num_categories,
            samples_per_category: self.synth.samples_per_category,
            image_size: self.synth.image_size,
            feature_dim: self.synth.feature_dim,
            num_voxels: self.synth.num_voxels,
            sigma_v: self.synth.sigma_v,
            seed: self.seed,
        }
    }

    pub fn encoder_spec(&self, num_categories: usize) -> EncoderSpec {
        EncoderSpec {
            input_size: self.synth.image_size,
            conv: self
                .encoder
                .conv_channels
                .iter()
                .map(|&channels| ConvSpec {
                    channels,
                    kernel: 3,
                    stride: 2,
                })
                .collect(),
            fc: vec![self.synth.feature_dim, num_categories],
        }
    }

    pub fn encoder_hyper(&self) -> EncoderHyper {
        EncoderHyper {
            steps: self.encoder.steps,
            batch: self.encoder.batch,
            lr: self.encoder.lr,
            seed: self.seed.wrapping_add(ENCODER_SEED_OFFSET),
        }
    }

    pub fn ridge_options(&self) -> RidgeOptions {
        RidgeOptions {
            standardize: self.decoder.standardize,
            ..RidgeOptions::default()
        }
    }

    pub fn recon_spec(&self) -> ReconSpec {
        ReconSpec {
            feature_dim: self.synth.feature_dim,
            fc_shape: self.recon.fc_shape,
            deconv_channels: self.recon.deconv_channels.clone(),
        }
    }

    pub fn recon_hyper(&self) -> ReconHyper {
        ReconHyper {
            epochs: self.recon.epochs,
            batch: self.recon.batch,
            lr0: self.recon.lr0,
            lr_decay: self.recon.lr_decay,
            sigma_scale: self.recon.sigma_scale,
            seed: self.seed.wrapping_add(RECON_SEED_OFFSET),
            loss: self.recon.loss,
        }
    }

    pub fn gen_spec(&self) -> GenSpec {
        GenSpec {
            image_size: self.synth.image_size,
            enc_channels: self.gan.gen_channels.clone(),
        }
    }

    pub fn disc_spec(&self) -> DiscSpec {
        DiscSpec {
            image_size: self.synth.image_size,
            channels: self.gan.disc_channels.clone(),
        }
    }

    pub fn gan_config(&self, category: usize) -> GanConfig {
        GanConfig {
            lambda_l1: self.gan.lambda_l1,
            theta_recon: self.gan.theta_recon,
            lr: self.gan.lr,
            batch: self.gan.batch,
            epochs: self.gan.epochs,
            noise: self.gan.noise,
            g_loss: self.gan.g_loss,
            seed: self
                .seed
                .wrapping_add(GAN_SEED_OFFSET)
                .wrapping_add(category as u64),
        }
    }

    pub fn pipeline_seed(&self) -> u64 {
        self.seed.wrapping_add(PIPELINE_SEED_OFFSET)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_echo_every_field() {
        let cfg = RunConfig::default();
        let json = serde_json::to_value(&cfg).unwrap();
        for key in ["seed", "deterministic", "synth", "encoder", "decoder", "recon", "gan", "eval"]
        {
            assert!(json.get(key).is_some(), "echo missing {key}");
        }
        assert_eq!(json["decoder"]["alpha"], 0.7);
        assert_eq!(json["gan"]["lambda_l1"], 100.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{ "sead": 3 }"#);
        assert!(err.is_err());
        let err = serde_json::from_str::<RunConfig>(r#"{ "decoder": { "alhpa": 0.5 } }"#);
        assert!(err.is_err());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{ "seed": 99, "decoder": { "alpha": 2.0 } }"#).unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.decoder.alpha, 2.0);
        assert_eq!(cfg.decoder.alphas, vec![0.1, 0.7, 3.0]);
        assert_eq!(cfg.synth.image_size, 16);
    }

    #[test]
    fn stage_seeds_derive_from_global() {
        let mut cfg = RunConfig::default();
        cfg.seed = 1000;
        assert_eq!(cfg.encoder_hyper().seed, 1000 + ENCODER_SEED_OFFSET);
        assert_eq!(cfg.recon_hyper().seed, 1000 + RECON_SEED_OFFSET);
        assert_eq!(cfg.gan_config(2).seed, 1000 + GAN_SEED_OFFSET + 2);
        assert_ne!(cfg.gan_config(0).seed, cfg.gan_config(1).seed);
    }

    #[test]
    fn recon_spec_matches_synth_dims() {
        let cfg = RunConfig::default();
        let spec = cfg.recon_spec();
        assert_eq!(spec.feature_dim, cfg.synth.feature_dim);
        assert_eq!(
            spec.output_dims(),
            [cfg.synth.image_size, cfg.synth.image_size, 3]
        );
    }
}
