//! Run configuration (TOML) shared by every command.
//!
//! Every field has a default, so an empty file is a valid configuration
//! describing the full-scale setup: lr 1e-4, batch 4, 100 epochs per model,
//! thresholds `[0.01, 0.1, 0.6]`, Tversky (0.7, 0.3) for model 1 and
//! (0.5, 0.5) for model 2, cross-entropy weight 0.5 and an 80/20 split.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentSpec;
use crate::cascade::{check_model2_channels, ThresholdSet, WindowSpec};
use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::loss::{CompositeLossConfig, TverskyParams};
use crate::nn::AdamConfig;
use crate::rng;
use crate::train::{NoisyTeacher, TrainOptions};
use crate::unet::UNetConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub tversky: TverskyParams,
    pub ce_weight: f64,
    /// Apply the augmentation pipeline to training batches.
    pub augment: bool,
    /// Train on random square crops of this side (a multiple of the
    /// model's spatial factor); whole tiles when unset.
    pub crop: Option<usize>,
}

impl StageConfig {
    fn with_tversky(tversky: TverskyParams) -> Self {
        Self {
            epochs: 100,
            batch_size: 4,
            optimizer: AdamConfig::default(),
            tversky,
            ce_weight: 0.5,
            augment: true,
            crop: None,
        }
    }

    pub fn loss(&self) -> CompositeLossConfig {
        CompositeLossConfig {
            tversky: self.tversky,
            ce_weight: self.ce_weight,
        }
    }
}

impl Default for StageConfig {
    fn default() -> Self {
        Self::with_tversky(TverskyParams::STAGE1)
    }
}

/// What stage 2 thresholds during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum TeacherConfig {
    /// The trained model 1 checkpoint.
    #[default]
    Model1,
    GroundTruth,
    Noisy {
        blur_sigma: f64,
        noise_std: f64,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset directory; defaults to `<out>/data`.
    pub root: Option<PathBuf>,
    pub train_fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    /// Directory of input tiles (searched recursively); defaults to the
    /// dataset root.
    pub input: Option<PathBuf>,
    /// Also write heatmap, stack channels and overlay per tile.
    pub intermediates: bool,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            input: None,
            intermediates: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Prediction directory; defaults to `<out>/pred`.
    pub pred: Option<PathBuf>,
    /// Ground-truth dataset; defaults to the dataset root.
    pub gt: Option<PathBuf>,
    /// Compare predictions carrying different config hashes.
    pub force: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    pub synthetic: SyntheticSpec,
    pub model1: UNetConfig,
    pub model2: UNetConfig,
    pub thresholds: ThresholdSet,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub teacher: TeacherConfig,
    pub window: WindowSpec,
    pub augment: AugmentSpec,
    pub infer: InferConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            synthetic: SyntheticSpec::default(),
            model1: UNetConfig::new(3, vec![16, 32, 64, 128]),
            model2: UNetConfig::new(4, vec![16, 32, 64, 128]),
            thresholds: ThresholdSet::default(),
            stage1: StageConfig::with_tversky(TverskyParams::STAGE1),
            stage2: StageConfig::with_tversky(TverskyParams::BALANCED),
            teacher: TeacherConfig::Model1,
            window: WindowSpec::default(),
            augment: AugmentSpec::default(),
            infer: InferConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(e) = o.epochs {
            self.stage1.epochs = e;
            self.stage2.epochs = e;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model1.validate()?;
        self.model2.validate()?;
        if self.model1.in_channels != 3 {
            return Err(Error::config(format!(
                "model1.in_channels must be 3, got {}",
                self.model1.in_channels
            )));
        }
        check_model2_channels(self.model2.in_channels, &self.thresholds)?;
        for (name, st, model) in [
            ("stage1", &self.stage1, &self.model1),
            ("stage2", &self.stage2, &self.model2),
        ] {
            if let Some(c) = st.crop {
                let f = model.spatial_factor();
                if c == 0 || c % f != 0 {
                    return Err(Error::config(format!(
                        "{name}.crop {c} must be a positive multiple of {f}"
                    )));
                }
            }
            if st.batch_size == 0 {
                return Err(Error::config(format!("{name}.batch_size must be positive")));
            }
            if !(st.optimizer.lr >= 0.0 && st.optimizer.lr.is_finite()) {
                return Err(Error::config(format!("{name}.optimizer.lr is invalid")));
            }
            if !(st.ce_weight >= 0.0 && st.ce_weight.is_finite()) {
                return Err(Error::config(format!("{name}.ce_weight is invalid")));
            }
            st.tversky.validate()?;
        }
        if let Some(f) = self.data.train_fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::config(format!(
                    "data.train_fraction {f} outside [0, 1]"
                )));
            }
        }
        for m in [&self.model1, &self.model2] {
            self.window.validate(m.spatial_factor())?;
        }
        if let TeacherConfig::Noisy {
            blur_sigma,
            noise_std,
        } = self.teacher
        {
            if !(blur_sigma >= 0.0 && noise_std >= 0.0) {
                return Err(Error::config(
                    "teacher blur_sigma and noise_std must be non-negative",
                ));
            }
        }
        self.augment.validate()
    }

    /// SHA-256 of the canonical JSON form (hex). The output directory is
    /// left out: it says where a run is written, not what it computes.
    pub fn hash(&self) -> String {
        let canonical = Self {
            out: PathBuf::new(),
            ..self.clone()
        };
        let json = serde_json::to_string(&canonical).expect("run config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn data_root(&self) -> PathBuf {
        self.data
            .root
            .clone()
            .unwrap_or_else(|| self.out.join("data"))
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            seed: self.seed,
            ..self.synthetic.clone()
        }
    }

    pub fn split_spec(&self) -> crate::data::SplitSpec {
        crate::data::SplitSpec {
            train_fraction: self.data.train_fraction.unwrap_or(0.8),
            seed: self.seed,
        }
    }

    /// Initialization seed of model `stage` (1 or 2).
    pub fn init_seed(&self, stage: u64) -> u64 {
        rng::derive_seed(&[rng::TAG_INIT, self.seed, stage])
    }

    pub fn train_options(&self, stage: u8) -> TrainOptions {
        let st = if stage == 1 {
            &self.stage1
        } else {
            &self.stage2
        };
        TrainOptions {
            epochs: st.epochs,
            batch_size: st.batch_size,
            adam: st.optimizer,
            loss: st.loss(),
            augment: if st.augment {
                AugmentSpec {
                    seed: rng::derive_seed(&[self.augment.seed, self.seed, u64::from(stage)]),
                    ..self.augment.clone()
                }
            } else {
                AugmentSpec::disabled()
            },
            crop: st.crop,
            seed: rng::derive_seed(&[self.seed, u64::from(stage)]),
        }
    }

    pub fn noisy_teacher(&self) -> Option<NoisyTeacher> {
        match self.teacher {
            TeacherConfig::Noisy {
                blur_sigma,
                noise_std,
            } => Some(NoisyTeacher {
                blur_sigma,
                noise_std,
                seed: self.seed,
            }),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_paper_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c.stage1.optimizer.lr, 1e-4);
        assert_eq!((c.stage1.batch_size, c.stage1.epochs), (4, 100));
        assert_eq!((c.stage2.batch_size, c.stage2.epochs), (4, 100));
        assert_eq!(c.thresholds.values(), &[0.01, 0.1, 0.6]);
        assert_eq!((c.stage1.tversky.alpha, c.stage1.tversky.beta), (0.7, 0.3));
        assert_eq!((c.stage2.tversky.alpha, c.stage2.tversky.beta), (0.5, 0.5));
        assert_eq!((c.stage1.ce_weight, c.stage2.ce_weight), (0.5, 0.5));
        assert_eq!(c.split_spec().train_fraction, 0.8);
        assert_eq!(c.model2.in_channels, 4);
    }

    #[test]
    fn toml_round_trip_keeps_hash() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn overrides_change_hash() {
        let mut c = RunConfig::default();
        let h = c.hash();
        c.apply(&Overrides {
            epochs: Some(3),
            ..Default::default()
        });
        assert_eq!(c.stage2.epochs, 3);
        assert_ne!(c.hash(), h);
        let h = c.hash();
        c.apply(&Overrides {
            out: Some("elsewhere".into()),
            ..Default::default()
        });
        assert_eq!(c.hash(), h);
    }

    #[test]
    fn crop_must_fit_the_network() {
        assert!(RunConfig::from_toml("[stage1]\ncrop = 100").is_err());
        let c = RunConfig::from_toml("[stage2]\ncrop = 128").unwrap();
        assert_eq!(c.train_options(2).crop, Some(128));
        assert_eq!(c.train_options(1).crop, None);
    }

    #[test]
    fn channel_mismatch_is_config_error() {
        let err = RunConfig::from_toml("thresholds = [0.1, 0.6]").unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(RunConfig::from_toml("nonsense = 1").is_err());
    }
}
