use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fusion::{Modalities, PoolMode, DEFAULT_D_CAP};
use crate::pca::DEFAULT_COMPONENTS;
use crate::resfusion::{ResFusionConfig, TrainHyper};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extractor {
    /// Slices are pixel vectors; PCA is fit on training patients.
    #[default]
    Pca,
    /// Slices already hold feature vectors and are used as given.
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSection {
    pub lr: f64,
    pub lr_min: f64,
    pub epochs: usize,
}

impl Default for OptimSection {
    fn default() -> Self {
        let h = TrainHyper::default();
        Self {
            lr: h.lr,
            lr_min: h.lr_min,
            epochs: h.epochs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    pub extractor: Extractor,
    pub b1: usize,
    pub d_cap: usize,
    pub pool: PoolMode,
    /// Fit one basis per patient on that patient's own slices instead of a
    /// shared basis over all training slices.
    pub per_patient_pca: bool,
}

impl Default for FusionSection {
    fn default() -> Self {
        Self {
            extractor: Extractor::Pca,
            b1: DEFAULT_COMPONENTS,
            d_cap: DEFAULT_D_CAP,
            pool: PoolMode::Full,
            per_patient_pca: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub dir: Option<PathBuf>,
    pub modalities: String,
    pub stratified: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dir: None,
            modalities: Modalities::ALL.to_string(),
            stratified: false,
        }
    }
}

/// Harness settings read from a TOML file with `[model]`, `[optim]`,
/// `[fusion]` and `[data]` sections. Missing keys take their defaults.
/// `model.n_classes` is replaced by the task's class count.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub model: ResFusionConfig,
    pub optim: OptimSection,
    pub fusion: FusionSection,
    pub data: DataSection,
}

impl HarnessConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match Error::io(path, e) {
            Error::NotFound(p) => Error::Config(format!("config file {} not found", p.display())),
            other => other,
        })?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let mut model = self.model.clone();
        model.n_classes = model.n_classes.max(2);
        model.validate()?;
        if !(self.optim.lr >= self.optim.lr_min && self.optim.lr_min >= 0.0) {
            return Err(Error::Config(format!(
                "need lr ≥ lr_min ≥ 0, got lr={} lr_min={}",
                self.optim.lr, self.optim.lr_min
            )));
        }
        if self.optim.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.fusion.b1 == 0 {
            return Err(Error::Config("b1 must be at least 1".into()));
        }
        if self.fusion.d_cap == 0 {
            return Err(Error::Config("d_cap must be at least 1".into()));
        }
        self.modalities()?;
        Ok(())
    }

    pub fn modalities(&self) -> Result<Modalities> {
        Modalities::parse(&self.data.modalities)
    }

    pub fn hyper(&self) -> TrainHyper {
        TrainHyper {
            lr: self.optim.lr,
            lr_min: self.optim.lr_min,
            epochs: self.optim.epochs,
            pool: self.fusion.pool,
            d_cap: self.fusion.d_cap,
        }
    }

    /// Short hex digest of the configuration together with the run's task,
    /// modalities, fold count and seed.
    pub fn fingerprint(&self, task_id: u8, modalities: Modalities, k: usize, seed: u64) -> String {
        let mut canonical = self.clone();
        let model_seed = canonical.model.seed;
        canonical.model.seed = 0;
        canonical.data.dir = None;
        let text = toml::to_string(&canonical).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        hasher.update(
            format!("|model_seed={model_seed}|task={task_id}|modalities={modalities}|k={k}|seed={seed}").as_bytes(),
        );
        hex::encode(&hasher.finalize()[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_sections() {
        let cfg = HarnessConfig::from_toml(
            "[model]\nhidden_dim = 32\nuse_residual = false\n[optim]\nepochs = 10\n[fusion]\nextractor = \"external\"\n",
        )
        .unwrap();
        assert_eq!(cfg.model.hidden_dim, 32);
        assert_eq!(cfg.model.n_blocks, 6);
        assert!(!cfg.model.use_residual);
        assert_eq!(cfg.optim.lr, 0.001);
        assert_eq!(cfg.optim.epochs, 10);
        assert_eq!(cfg.fusion.extractor, Extractor::External);
        assert_eq!(cfg.fusion.b1, 64);
        assert_eq!(cfg.modalities().unwrap(), Modalities::ALL);
    }

    #[test]
    fn bad_configs() {
        for text in [
            "[model]\nn_blocks = 0\n",
            "[optim]\nlr = -1.0\n",
            "[optim]\nepochs = 0\n",
            "[model]\nwidth = 3\n",
            "[data]\nmodalities = \"mri\"\n",
            "[fusion]\nextractor = \"resnet\"\n",
            "not toml",
        ] {
            assert!(
                matches!(HarnessConfig::from_toml(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn fingerprint_tracks_inputs() {
        let cfg = HarnessConfig::default();
        let f = cfg.fingerprint(1, Modalities::ALL, 5, 0);
        assert_eq!(f.len(), 16);
        assert_eq!(f, cfg.fingerprint(1, Modalities::ALL, 5, 0));
        assert_ne!(f, cfg.fingerprint(2, Modalities::ALL, 5, 0));
        assert_ne!(f, cfg.fingerprint(1, Modalities::ALL, 5, u64::MAX));
        let mut other = cfg.clone();
        other.model.hidden_dim = 16;
        assert_ne!(f, other.fingerprint(1, Modalities::ALL, 5, 0));
    }
}
