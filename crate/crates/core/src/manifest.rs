//! Run manifest: the TOML file that pins every input, seed and setting of
//! a command-line run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cobyla::CobylaConfig;
use crate::driver::DEFAULT_LAMBDAS;
use crate::mlp::{MlpArchitecture, MlpTrainConfig};
use crate::objective::DEFAULT_TAU;
use crate::trees::TreesTrainParams;
use crate::trust_constr::TrustConstrConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema_version: u32,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub pipeline: Pipeline,
    #[serde(default)]
    pub models: Models,
    #[serde(default)]
    pub objective: ObjectiveSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Element table; the built-in 39-element registry when absent.
    pub elements: Option<PathBuf>,
    pub enthalpy: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Pipeline {
    pub dedup: bool,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for Pipeline {
    fn default() -> Self {
        Pipeline {
            dedup: true,
            train_fraction: 0.8,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Settings used on the raw measurements.
    Raw,
    /// Settings used on the de-duplicated table.
    Dedup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Models {
    pub trees_preset: Preset,
    pub mlp_preset: Preset,
    /// Explicit settings override the preset.
    pub trees: Option<TreesTrainParams>,
    pub mlp_hidden: Option<Vec<usize>>,
    pub mlp_dropout: Option<f64>,
    pub mlp_train: Option<MlpTrainConfig>,
    /// Epoch count override applied on top of the preset or explicit config.
    pub mlp_epochs: Option<usize>,
    /// Saved models to load instead of training.
    pub trees_file: Option<PathBuf>,
    pub mlp_file: Option<PathBuf>,
}

impl Default for Models {
    fn default() -> Self {
        Models {
            trees_preset: Preset::Dedup,
            mlp_preset: Preset::Dedup,
            trees: None,
            mlp_hidden: None,
            mlp_dropout: None,
            mlp_train: None,
            mlp_epochs: None,
            trees_file: None,
            mlp_file: None,
        }
    }
}

impl Models {
    pub fn trees_params(&self, seed: u64) -> TreesTrainParams {
        self.trees.unwrap_or(match self.trees_preset {
            Preset::Raw => TreesTrainParams::raw_data_preset(seed),
            Preset::Dedup => TreesTrainParams::dedup_data_preset(seed),
        })
    }

    pub fn mlp_arch(&self) -> MlpArchitecture {
        let base = match self.mlp_preset {
            Preset::Raw => MlpArchitecture::raw_data_preset(),
            Preset::Dedup => MlpArchitecture::dedup_data_preset(),
        };
        match (&self.mlp_hidden, self.mlp_dropout) {
            (None, None) => base,
            (h, d) => {
                let hidden = h.clone().unwrap_or_else(|| base.hidden.clone());
                let rate = d.unwrap_or_else(|| base.dropout.first().copied().unwrap_or(0.0));
                MlpArchitecture::new(hidden, rate)
            }
        }
    }

    pub fn mlp_train(&self, seed: u64) -> MlpTrainConfig {
        let mut cfg = self.mlp_train.unwrap_or(match self.mlp_preset {
            Preset::Raw => MlpTrainConfig::raw_data_preset(seed),
            Preset::Dedup => MlpTrainConfig::dedup_data_preset(seed),
        });
        if let Some(e) = self.mlp_epochs {
            cfg.epochs = e;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveSection {
    pub lambda1: f64,
    pub lambda2: f64,
    pub ts_target: f64,
    pub tau: f64,
    /// Measure the proximity constraint on standardized features.
    pub standardized_index: bool,
    /// Include the proximity constraint at all.
    pub proximity: bool,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        ObjectiveSection {
            lambda1: 1.0,
            lambda2: 0.0,
            ts_target: 100.0,
            tau: DEFAULT_TAU,
            standardized_index: false,
            proximity: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Derivative-free, driven by the trees model.
    Dfo,
    /// Gradient-based, driven by the network.
    Grad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub kind: OptimizerKind,
    pub dfo: CobylaConfig,
    pub grad: TrustConstrConfig,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            kind: OptimizerKind::Grad,
            dfo: CobylaConfig::default(),
            grad: TrustConstrConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Perturb a known alloy and recover its temperature with both optimizers.
    Recovery,
    /// Cost-only multistart.
    Cost,
    /// One multistart per weight pair.
    Sweep,
    /// Repeat a derivative-free multistart for several initial radii.
    RhobegSweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    pub u_values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub restarts: usize,
    pub lambdas: Vec<[f64; 2]>,
    /// Recovery target temperature; looked up in the dataset.
    pub target_ts: Option<f64>,
    /// Recovery target row, used when `target_ts` is absent.
    pub target_row: Option<usize>,
    pub rhobeg_values: Vec<f64>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            kind: ExperimentKind::Recovery,
            u_values: vec![0.0, 10.0, 20.0],
            seeds: vec![0],
            restarts: 50,
            lambdas: DEFAULT_LAMBDAS.iter().map(|&(a, b)| [a, b]).collect(),
            target_ts: None,
            target_row: None,
            rhobeg_values: vec![0.5, 1.0, 2.0, 5.0],
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("unsupported manifest schema_version {0} (expected {SCHEMA_VERSION})")]
    Version(u32),
    #[error("invalid manifest: {0}")]
    Invalid(String),
}

impl Default for RunManifest {
    fn default() -> Self {
        RunManifest {
            schema_version: SCHEMA_VERSION,
            paths: Paths::default(),
            pipeline: Pipeline::default(),
            models: Models::default(),
            objective: ObjectiveSection::default(),
            optimizer: OptimizerSection::default(),
            experiment: ExperimentSection::default(),
        }
    }
}

impl RunManifest {
    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        let m: RunManifest = toml::from_str(text)?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(ManifestError::Version(m.schema_version));
        }
        m.validate()?;
        Ok(m)
    }

    /// Reads a manifest; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|e| ManifestError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut m = Self::parse(&text)?;
        if let Some(base) = path.parent() {
            m.paths.rebase(base);
            for p in [&mut m.models.trees_file, &mut m.models.mlp_file].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        let o = &self.objective;
        if !(o.lambda1 >= 0.0 && o.lambda2 >= 0.0)
            || (o.lambda1 + o.lambda2 - 1.0).abs() > crate::objective::WEIGHT_SUM_TOLERANCE
        {
            return Err(ManifestError::Invalid(format!(
                "objective weights must be non-negative and sum to 1, got ({}, {})",
                o.lambda1, o.lambda2
            )));
        }
        for l in &self.experiment.lambdas {
            if !(l[0] >= 0.0 && l[1] >= 0.0) || (l[0] + l[1] - 1.0).abs() > crate::objective::WEIGHT_SUM_TOLERANCE {
                return Err(ManifestError::Invalid(format!("sweep pair {l:?} must sum to 1")));
            }
        }
        if self.experiment.u_values.iter().any(|u| !(*u >= 0.0)) {
            return Err(ManifestError::Invalid(
                "perturbation half-widths must be non-negative".into(),
            ));
        }
        if self.experiment.restarts == 0 {
            return Err(ManifestError::Invalid("restarts must be at least 1".into()));
        }
        if !(self.pipeline.train_fraction > 0.0 && self.pipeline.train_fraction < 1.0) {
            return Err(ManifestError::Invalid("train_fraction must lie in (0, 1)".into()));
        }
        if self.paths.elements.is_some() != self.paths.enthalpy.is_some() {
            return Err(ManifestError::Invalid("elements and enthalpy paths go together".into()));
        }
        Ok(())
    }
}

impl Paths {
    fn rebase(&mut self, base: &Path) {
        for p in [
            &mut self.elements,
            &mut self.enthalpy,
            &mut self.dataset,
            &mut self.out_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}
