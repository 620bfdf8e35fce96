//! Common interface of the temperature predictors, accuracy metrics and
//! versioned model files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::ModelError;
use crate::features::{FeatureVector, N_FEATURES};
use crate::mlp::MlpModel;
use crate::trees::ExtraTreesModel;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// A learned map from the feature vector to a martensite start temperature.
pub trait Surrogate: Send + Sync {
    /// Predicted temperature in °C.
    fn predict(&self, y: &FeatureVector) -> f64;

    /// Gradient of the prediction with respect to the features, when the
    /// response is differentiable.
    fn input_gradient(&self, _y: &FeatureVector) -> Option<[f64; N_FEATURES]> {
        None
    }

    fn is_differentiable(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurrogateModel {
    Trees(ExtraTreesModel),
    Mlp(MlpModel),
}

impl SurrogateModel {
    pub fn name(&self) -> &'static str {
        match self {
            SurrogateModel::Trees(_) => "trees",
            SurrogateModel::Mlp(_) => "mlp",
        }
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let v: serde_json::Value = serde_json::from_str(s)?;
        let version = v.get("format_version").and_then(|x| x.as_u64()).unwrap_or(0) as u32;
        if version != MODEL_FORMAT_VERSION {
            return Err(ModelError::UnsupportedVersion(version));
        }
        let file: ModelFile = serde_json::from_value(v)?;
        Ok(file.model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    model: SurrogateModel,
}

impl Surrogate for SurrogateModel {
    fn predict(&self, y: &FeatureVector) -> f64 {
        match self {
            SurrogateModel::Trees(m) => m.predict(y),
            SurrogateModel::Mlp(m) => m.forward(y),
        }
    }

    fn input_gradient(&self, y: &FeatureVector) -> Option<[f64; N_FEATURES]> {
        match self {
            SurrogateModel::Trees(_) => None,
            SurrogateModel::Mlp(m) => Some(m.input_gradient(y)),
        }
    }

    fn is_differentiable(&self) -> bool {
        matches!(self, SurrogateModel::Mlp(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub r_squared: f64,
    /// °C
    pub mae: f64,
}

/// R² (about the data mean) and mean absolute error.
pub fn regression_metrics(predicted: &[f64], truth: &[f64]) -> Result<Scores, ModelError> {
    if truth.is_empty() || predicted.len() != truth.len() {
        return Err(ModelError::EmptyData);
    }
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(ModelError::ZeroVariance);
    }
    let ss_res: f64 = predicted.iter().zip(truth).map(|(p, t)| (t - p) * (t - p)).sum();
    let mae = predicted.iter().zip(truth).map(|(p, t)| (t - p).abs()).sum::<f64>() / n;
    Ok(Scores {
        r_squared: 1.0 - ss_res / ss_tot,
        mae,
    })
}

pub fn predict_all<S: Surrogate + ?Sized>(m: &S, data: &Dataset) -> Vec<f64> {
    data.records.iter().map(|r| m.predict(&r.features)).collect()
}

pub fn score<S: Surrogate + ?Sized>(m: &S, data: &Dataset) -> Result<Scores, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyData);
    }
    regression_metrics(&predict_all(m, data), &data.targets())
}
