use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::logistic::train_logistic;
use super::metrics::roc_auc;
use super::threshold::{select_threshold, Criterion};
use super::{JudgeModel, Thresholds};
use crate::error::{Error, Result};
use crate::lm::FeatureVector;

/// `count` points evenly spaced in log10 between `lo` and `hi`.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => (0..count)
            .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub c_grid: Vec<f64>,
    pub holdout_fraction: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    pub target_recall: f64,
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            c_grid: log_spaced(1e-3, 100.0, 10),
            holdout_fraction: 0.2,
            max_iter: 2000,
            tol: 1e-6,
            seed: 0,
            target_recall: 0.99,
            standardize: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c_grid.is_empty() || self.c_grid.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::InvalidArgument("c_grid must be nonempty and positive".into()));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::InvalidArgument("holdout_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Seeded split that keeps both classes on both sides. Returns
/// `(train, holdout)` index lists, each sorted.
pub fn stratified_split(labels: &[bool], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < 2 {
            return Err(Error::DegenerateLabels);
        }
        idx.shuffle(&mut rng);
        let k = ((idx.len() as f64 * fraction).round() as usize).clamp(1, idx.len() - 1);
        holdout.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    holdout.sort_unstable();
    Ok((train, holdout))
}

/// Trains one model per `C`, keeps the best holdout ROC-AUC (smaller `C` on
/// ties), then calibrates both thresholds on the holdout scores.
pub fn grid_search(features: &[FeatureVector], labels: &[bool], config: &TrainConfig) -> Result<JudgeModel> {
    config.validate()?;
    if features.len() != labels.len() {
        return Err(Error::InvalidArgument("features and labels differ in length".into()));
    }
    let (train_idx, hold_idx) = stratified_split(labels, config.holdout_fraction, config.seed)?;
    let pick = |idx: &[usize]| -> (Vec<FeatureVector>, Vec<bool>) {
        (idx.iter().map(|&i| features[i].clone()).collect(), idx.iter().map(|&i| labels[i]).collect())
    };
    let (train_x, train_y) = pick(&train_idx);
    let (hold_x, hold_y) = pick(&hold_idx);

    let fitted: Vec<(JudgeModel, f64)> = config
        .c_grid
        .par_iter()
        .map(|&c| {
            let model = train_logistic(&train_x, &train_y, c, config.max_iter, config.tol, config.seed, config.standardize)?;
            let scores = hold_x.iter().map(|f| model.predict_proba(f)).collect::<Result<Vec<_>>>()?;
            let auc = roc_auc(&scores, &hold_y)?;
            Ok((model, auc))
        })
        .collect::<Result<_>>()?;

    let mut best: Option<(JudgeModel, f64)> = None;
    for (model, auc) in fitted {
        let better = match &best {
            None => true,
            Some((b, b_auc)) => auc > *b_auc || (auc == *b_auc && model.training_meta.c < b.training_meta.c),
        };
        if better {
            best = Some((model, auc));
        }
    }
    let (mut model, auc) = best.expect("grid is nonempty");

    let scores = hold_x.iter().map(|f| model.predict_proba(f)).collect::<Result<Vec<_>>>()?;
    let recall = select_threshold(&scores, &hold_y, Criterion::Recall, config.target_recall)?;
    let f1 = select_threshold(&scores, &hold_y, Criterion::F1, config.target_recall)?;
    model.thresholds = Some(Thresholds { theta_recall: recall.theta, theta_f1: f1.theta });
    model.training_meta.auc = Some(auc);
    model.training_meta.target_recall = Some(config.target_recall);
    Ok(model)
}
