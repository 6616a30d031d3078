//! Run configuration: flat `key = value` text with `[data]`, `[train]`,
//! `[cv]` and `[gls]` sections (TOML). Every key has a default, so an empty
//! file is a valid configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::copula::{Bandwidth, Task};
use crate::error::{Error, Result};
use crate::gls::{ExperimentConfig, Overlap, SurDesign};

/// Kernel bandwidth for the nonparametric marginals: `"silverman"` or a
/// fixed positive number.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum BandwidthChoice {
    #[default]
    Silverman,
    Fixed(f64),
}

impl Serialize for BandwidthChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BandwidthChoice::Silverman => s.serialize_str("silverman"),
            BandwidthChoice::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for BandwidthChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(v) => Ok(BandwidthChoice::Fixed(v)),
            Raw::Text(t) if t.eq_ignore_ascii_case("silverman") => Ok(BandwidthChoice::Silverman),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "bandwidth must be \"silverman\" or a number, got {t:?}"
            ))),
        }
    }
}

impl BandwidthChoice {
    pub fn to_bandwidth(self) -> Bandwidth<f64> {
        match self {
            BandwidthChoice::Silverman => Bandwidth::Silverman,
            BandwidthChoice::Fixed(v) => Bandwidth::Fixed(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    pub epochs_warmup: usize,
    pub epochs_ccnn: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub early_stopping: bool,
    pub batch_size: usize,
    pub lr_warmup: f64,
    /// C-CNN learning rate = lr_warmup · lr_ccnn_factor.
    pub lr_ccnn_factor: f64,
    /// Share of the training portion held out for early stopping.
    pub validation_fraction: f64,
    pub bandwidth: BandwidthChoice,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: Task::RrGaussian,
            epochs_warmup: 200,
            epochs_ccnn: 100,
            patience: 20,
            early_stopping: true,
            batch_size: 64,
            lr_warmup: 1e-3,
            lr_ccnn_factor: 0.1,
            validation_fraction: 0.25,
            bandwidth: BandwidthChoice::Silverman,
            seed: 2024,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs_warmup == 0 || self.epochs_ccnn == 0 {
            return bad("epochs_warmup and epochs_ccnn must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr_warmup > 0.0 && self.lr_warmup.is_finite()) {
            return bad(format!(
                "lr_warmup must be positive, got {}",
                self.lr_warmup
            ));
        }
        if !(self.lr_ccnn_factor > 0.0 && self.lr_ccnn_factor.is_finite()) {
            return bad(format!(
                "lr_ccnn_factor must be positive, got {}",
                self.lr_ccnn_factor
            ));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!(
                "validation_fraction must lie in (0,1), got {}",
                self.validation_fraction
            ));
        }
        if let BandwidthChoice::Fixed(b) = self.bandwidth {
            if !(b > 0.0 && b.is_finite()) {
                return bad(format!("bandwidth must be positive, got {b}"));
            }
        }
        if self.early_stopping && self.patience == 0 {
            return bad("patience must be at least 1 when early stopping is on".into());
        }
        Ok(())
    }

    pub fn lr_ccnn(&self) -> f64 {
        self.lr_warmup * self.lr_ccnn_factor
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { n: 2000, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub folds: usize,
    pub rounds: usize,
    pub workers: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            rounds: 2,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlsConfig {
    pub n: usize,
    pub k: usize,
    pub support_size: usize,
    pub overlap: Overlap,
    pub rho: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub replicates: usize,
    pub draws: usize,
    pub seed: u64,
}

impl Default for GlsConfig {
    fn default() -> Self {
        Self {
            n: 500,
            k: 8,
            support_size: 3,
            overlap: Overlap::Disjoint,
            rho: 0.7,
            sigma1: 1.0,
            sigma2: 2.0,
            replicates: 200,
            draws: 200,
            seed: 11,
        }
    }
}

impl GlsConfig {
    pub fn experiment(&self, workers: usize) -> ExperimentConfig {
        let mut design = SurDesign::new(
            self.n,
            self.k,
            self.overlap,
            self.rho,
            [self.sigma1, self.sigma2],
        );
        design.support_size = self.support_size;
        let mut cfg = ExperimentConfig::new(design, self.replicates, self.draws, self.seed);
        cfg.workers = workers;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    pub cv: CvConfig,
    pub gls: GlsConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.data.n == 0 {
            return Err(Error::Config("data.n must be positive".into()));
        }
        if self.cv.folds < 2 {
            return Err(Error::Config(format!(
                "cv.folds must be at least 2, got {}",
                self.cv.folds
            )));
        }
        if self.cv.rounds == 0 {
            return Err(Error::Config("cv.rounds must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        assert!(text.contains("[train]"));
        assert!(text.contains("bandwidth = \"silverman\""));
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
        assert_eq!(RunConfig::from_toml_str("").unwrap(), cfg);
    }

    #[test]
    fn overrides_and_rejections() {
        let cfg =
            RunConfig::from_toml_str("[train]\ntask = \"rc\"\nbandwidth = 0.3\n[cv]\nfolds = 3\n")
                .unwrap();
        assert_eq!(cfg.train.task, Task::Rc);
        assert_eq!(cfg.train.bandwidth, BandwidthChoice::Fixed(0.3));
        assert_eq!(cfg.cv.folds, 3);
        assert!((cfg.train.lr_ccnn() - 1e-4).abs() < 1e-18);
        assert!(RunConfig::from_toml_str("[train]\nlr_ccnn_factor = 0\n").is_err());
        assert!(RunConfig::from_toml_str("[train]\nepochs_warmup = 0\n").is_err());
        assert!(RunConfig::from_toml_str("[train]\nbogus = 1\n").is_err());
        assert!(RunConfig::from_toml_str("[train]\nbandwidth = \"scott\"\n").is_err());
    }
}
