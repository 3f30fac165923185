//! Lightweight logistic-regression verifier: training, L2 grid search with
//! ROC-AUC model selection, and recall/F1 threshold calibration.

mod grid;
mod logistic;
mod metrics;
mod threshold;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use grid::{grid_search, log_spaced, stratified_split, TrainConfig};
pub use logistic::{fit, objective, sigmoid, train_logistic, FitReport, Objective};
pub use metrics::{f1_score, roc_auc};
pub use threshold::{select_threshold, Criterion, ThresholdChoice};

use crate::error::{Error, Result};
use crate::lm::FeatureVector;

pub const JUDGE_FORMAT_VERSION: u32 = 1;

/// Per-feature z-scoring applied before the linear layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(features: &[FeatureVector]) -> Self {
        let dim = features.first().map_or(0, FeatureVector::dim);
        let n = features.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for f in features {
            for (m, x) in mean.iter_mut().zip(f.values()) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; dim];
        for f in features {
            for ((v, x), m) in var.iter_mut().zip(f.values()).zip(&mean) {
                *v += (x - m) * (x - m) / n;
            }
        }
        let std = var.into_iter().map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
        Self { mean, std }
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}

/// Decision thresholds in probability space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub theta_recall: f64,
    pub theta_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    #[serde(rename = "C")]
    pub c: f64,
    /// Holdout ROC-AUC of the selected model (`None` for a bare fit).
    pub auc: Option<f64>,
    pub seed: u64,
    pub iterations: usize,
    pub final_loss: f64,
    pub target_recall: Option<f64>,
}

/// Logistic-regression verifier over target-model features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeModel {
    pub format_version: u32,
    pub feature_dim: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaler: Option<Scaler>,
    pub thresholds: Option<Thresholds>,
    pub training_meta: TrainingMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

impl JudgeModel {
    /// Logit `w·f + b` (after scaling, when enabled).
    pub fn decision_value(&self, features: &FeatureVector) -> Result<f64> {
        if features.dim() != self.feature_dim {
            return Err(Error::DimensionMismatch { expected: self.feature_dim, actual: features.dim() });
        }
        let x = match &self.scaler {
            Some(s) => s.apply(features.values()),
            None => features.values().to_vec(),
        };
        Ok(self.weights.iter().zip(&x).map(|(w, x)| w * x).sum::<f64>() + self.bias)
    }

    pub fn predict_proba(&self, features: &FeatureVector) -> Result<f64> {
        Ok(sigmoid(self.decision_value(features)?))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: JudgeModel = serde_json::from_str(text)?;
        if model.format_version != JUDGE_FORMAT_VERSION {
            return Err(Error::FormatVersion(model.format_version));
        }
        if model.weights.len() != model.feature_dim {
            return Err(Error::DimensionMismatch { expected: model.feature_dim, actual: model.weights.len() });
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_model(dim: usize) -> JudgeModel {
        JudgeModel {
            format_version: JUDGE_FORMAT_VERSION,
            feature_dim: dim,
            weights: vec![0.0; dim],
            bias: 0.0,
            scaler: None,
            thresholds: None,
            training_meta: TrainingMeta {
                c: 1.0,
                auc: None,
                seed: 0,
                iterations: 0,
                final_loss: 0.0,
                target_recall: None,
            },
            provenance: None,
        }
    }

    #[test]
    fn zero_model_is_half() {
        let m = zero_model(3);
        assert_eq!(m.predict_proba(&FeatureVector::new(vec![1.0, -2.0, 3.0])).unwrap(), 0.5);
    }

    #[test]
    fn dimension_mismatch() {
        let m = zero_model(3);
        assert!(matches!(
            m.predict_proba(&FeatureVector::new(vec![1.0])),
            Err(Error::DimensionMismatch { expected: 3, actual: 1 })
        ));
    }

    #[test]
    fn monotone_in_positive_weight() {
        let mut m = zero_model(2);
        m.weights = vec![0.7, -0.2];
        let lo = m.predict_proba(&FeatureVector::new(vec![0.1, 1.0])).unwrap();
        let hi = m.predict_proba(&FeatureVector::new(vec![0.2, 1.0])).unwrap();
        assert!(hi > lo);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mut m = zero_model(2);
        m.weights = vec![0.1 + 0.2, -1.0 / 3.0];
        m.bias = std::f64::consts::PI * 1e-7;
        m.thresholds = Some(Thresholds { theta_recall: 0.123_456_789_012_345_67, theta_f1: 2.0f64.sqrt() });
        let back = JudgeModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        for (a, b) in back.weights.iter().zip(&m.weights) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
