//! Experiment configuration: TOML sections per module, flag overrides applied
//! on top, and the fully resolved file written next to every run's outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifiers::ClassifierKind;
use crate::data::{balance_relaxation, load_csv, synth_generate, SampleTable, SynthParams};
use crate::error::{Error, Result};
use crate::model::{ModelVariant, ScheduleParams};
use crate::train::TrainConfig;

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub variant: ModelVariant,
    /// Classifier tags: mlp, knn, tree, lda, logreg.
    pub classifiers: Vec<String>,
    pub seeds: Vec<u64>,
    /// Share of each fold's train and validation rows kept.
    pub fraction: f64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            variant: ModelVariant::DaCRae,
            classifiers: vec!["mlp".into()],
            seeds: vec![0],
            fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub dim: usize,
    pub alpha: f64,
    /// Adversary to nuisance node ratio of the hard split.
    pub ratio: [u32; 2],
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            dim: 15,
            alpha: 3.0,
            ratio: [2, 1],
        }
    }
}

impl ModelSection {
    pub fn schedule_params(&self) -> ScheduleParams {
        ScheduleParams {
            alpha: self.alpha,
            ratio: (self.ratio[0], self.ratio[1]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSettings {
    pub knn_k: usize,
    pub tree_max_depth: usize,
    pub tree_min_leaf: usize,
    pub lda_shrinkage: f64,
    pub logreg_l2: f64,
    pub logreg_iterations: usize,
    pub logreg_step: f64,
}

impl Default for ClassifierSettings {
    fn default() -> Self {
        Self {
            knn_k: 5,
            tree_max_depth: 10,
            tree_min_leaf: 2,
            lda_shrinkage: 1e-3,
            logreg_l2: 1e-4,
            logreg_iterations: 500,
            logreg_step: 0.1,
        }
    }
}

impl ClassifierSettings {
    pub fn kind(&self, tag: &str) -> Result<ClassifierKind> {
        let kind = match tag.parse::<ClassifierKind>()? {
            ClassifierKind::Mlp => ClassifierKind::Mlp,
            ClassifierKind::Knn { .. } => ClassifierKind::Knn { k: self.knn_k },
            ClassifierKind::Tree { .. } => ClassifierKind::Tree {
                max_depth: self.tree_max_depth,
                min_leaf: self.tree_min_leaf,
            },
            ClassifierKind::Lda { .. } => ClassifierKind::Lda { shrinkage: self.lda_shrinkage },
            ClassifierKind::Logreg { .. } => ClassifierKind::Logreg {
                l2: self.logreg_l2,
                iterations: self.logreg_iterations,
                step: self.logreg_step,
            },
        };
        kind.validate()?;
        Ok(kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub lambda_a: Vec<f64>,
    pub lambda_n: Vec<f64>,
    /// In accuracy points.
    pub tie_tolerance: f64,
    pub dims: Vec<usize>,
    pub fractions: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            lambda_a: vec![0.0, 0.01, 0.05, 0.1, 0.2, 0.5],
            lambda_n: vec![0.0, 0.005, 0.01, 0.05, 0.2, 0.5],
            tie_tolerance: 0.5,
            dims: (3..=25).step_by(2).collect(),
            fractions: vec![1.0, 0.5, 0.25, 0.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// `"synth"` or a CSV path.
    pub source: String,
    pub synth: SynthParams,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: "synth".into(),
            synth: SynthParams::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub classifier: ClassifierSettings,
    pub sweep: SweepSection,
    pub data: DataSection,
}

fn check_fraction(f: f64) -> Result<()> {
    if f > 0.0 && f <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("data fraction {f} outside (0, 1]")))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// Writes `resolved_config.toml` into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RESOLVED_CONFIG_FILE);
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.experiment.classifiers.is_empty() {
            return Err(Error::Config("classifier list is empty".into()));
        }
        self.classifier_kinds()?;
        check_fraction(self.experiment.fraction)?;
        if self.model.dim < 2 {
            return Err(Error::Config(format!("latent dimension must be >= 2, got {}", self.model.dim)));
        }
        if !(self.model.alpha > 0.0 && self.model.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be > 0, got {}", self.model.alpha)));
        }
        if self.model.ratio.contains(&0) {
            return Err(Error::Config("hard split ratio components must be positive".into()));
        }
        self.train.validate()?;
        let s = &self.sweep;
        if s.lambda_a.is_empty() || s.lambda_n.is_empty() || s.dims.is_empty() || s.fractions.is_empty() {
            return Err(Error::Config("sweep grids must be non-empty".into()));
        }
        if s.lambda_a.iter().chain(&s.lambda_n).any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Config("lambda grid values must be finite and >= 0".into()));
        }
        if s.dims.iter().any(|&d| d < 2) {
            return Err(Error::Config("dimension grid values must be >= 2".into()));
        }
        for &f in &s.fractions {
            check_fraction(f)?;
        }
        if !(s.tie_tolerance >= 0.0) {
            return Err(Error::Config("tie tolerance must be >= 0".into()));
        }
        if self.data.source.trim().is_empty() {
            return Err(Error::Config("data source is empty".into()));
        }
        Ok(())
    }

    pub fn classifier_kinds(&self) -> Result<Vec<ClassifierKind>> {
        self.experiment
            .classifiers
            .iter()
            .map(|t| self.classifier.kind(t))
            .collect()
    }

    pub fn is_synthetic(&self) -> bool {
        self.data.source == "synth"
    }

    /// Generates or ingests the dataset. CSV input is relaxation-balanced.
    pub fn load_data(&self) -> Result<SampleTable> {
        if self.is_synthetic() {
            synth_generate(&self.data.synth)
        } else {
            let (table, _) = load_csv(Path::new(&self.data.source))?;
            balance_relaxation(&table)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        assert!(text.contains("[train.optimizer]"));
    }

    #[test]
    fn partial_file_takes_defaults() {
        let cfg = ExperimentConfig::from_toml(
            "[experiment]\nvariant = \"D-cRAE\"\nseeds = [3, 4]\n[train]\nlambda_n = 0.2\n",
        )
        .unwrap();
        assert_eq!(cfg.experiment.variant, ModelVariant::DCRae);
        assert_eq!(cfg.experiment.seeds, vec![3, 4]);
        assert_eq!(cfg.train.lambda_n, 0.2);
        assert_eq!(cfg.train.epochs, 50);
        assert_eq!(cfg.sweep.dims.len(), 12);
    }

    #[test]
    fn rejects_bad_files() {
        for text in [
            "[experiment]\nunknown = 1\n",
            "[experiment]\nvariant = \"XYZ\"\n",
            "[experiment]\nfraction = 0.0\n",
            "[experiment]\nclassifiers = [\"svm\"]\n",
            "[train]\nlambda_a = -1.0\n",
            "[sweep]\nlambda_a = []\n",
            "not toml at all [",
        ] {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn classifier_settings_apply() {
        let mut cfg = ExperimentConfig::default();
        cfg.classifier.knn_k = 3;
        cfg.experiment.classifiers = vec!["knn".into(), "MLP".into()];
        assert_eq!(
            cfg.classifier_kinds().unwrap(),
            vec![ClassifierKind::Knn { k: 3 }, ClassifierKind::Mlp]
        );
    }
}
