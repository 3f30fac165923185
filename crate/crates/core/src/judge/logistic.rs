use super::{JudgeModel, Scaler, TrainingMeta, JUDGE_FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::lm::FeatureVector;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean logistic NLL plus `‖w‖² / (2 C n)`; the bias is not penalized.
pub struct Objective<'a> {
    x: &'a [Vec<f64>],
    y: &'a [bool],
    c: f64,
}

pub fn objective<'a>(x: &'a [Vec<f64>], y: &'a [bool], c: f64) -> Objective<'a> {
    Objective { x, y, c }
}

impl Objective<'_> {
    fn n(&self) -> f64 {
        self.x.len() as f64
    }

    fn logit(w: &[f64], b: f64, x: &[f64]) -> f64 {
        w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b
    }

    pub fn loss(&self, w: &[f64], b: f64) -> f64 {
        let nll: f64 = self
            .x
            .iter()
            .zip(self.y)
            .map(|(x, &y)| {
                let z = Self::logit(w, b, x);
                softplus(z) - if y { z } else { 0.0 }
            })
            .sum();
        let l2: f64 = w.iter().map(|w| w * w).sum();
        nll / self.n() + l2 / (2.0 * self.c * self.n())
    }

    /// Gradient with respect to `(w, b)`.
    pub fn gradient(&self, w: &[f64], b: f64) -> (Vec<f64>, f64) {
        let n = self.n();
        let mut gw: Vec<f64> = w.iter().map(|w| w / (self.c * n)).collect();
        let mut gb = 0.0;
        for (x, &y) in self.x.iter().zip(self.y) {
            let err = (sigmoid(Self::logit(w, b, x)) - if y { 1.0 } else { 0.0 }) / n;
            for (g, xi) in gw.iter_mut().zip(x) {
                *g += err * xi;
            }
            gb += err;
        }
        (gw, gb)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Loss before the first step and after every accepted step.
    pub losses: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Full-batch gradient descent with Armijo backtracking.
pub fn fit(x: &[Vec<f64>], y: &[bool], c: f64, max_iter: usize, tol: f64) -> FitReport {
    const ARMIJO: f64 = 1e-4;
    let dim = x.first().map_or(0, Vec::len);
    let obj = objective(x, y, c);
    let mut w = vec![0.0; dim];
    // start from the base-rate logit, the optimum when w = 0
    let pos = y.iter().filter(|&&l| l).count() as f64;
    let mut b = if pos > 0.0 && pos < y.len() as f64 { (pos / (y.len() as f64 - pos)).ln() } else { 0.0 };
    let mut loss = obj.loss(&w, b);
    let mut losses = vec![loss];
    let mut step = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        let (gw, gb) = obj.gradient(&w, b);
        let gnorm2 = gw.iter().map(|g| g * g).sum::<f64>() + gb * gb;
        if gnorm2.sqrt() < tol {
            converged = true;
            break;
        }
        iterations += 1;
        step *= 2.0;
        loop {
            let w_new: Vec<f64> = w.iter().zip(&gw).map(|(w, g)| w - step * g).collect();
            let b_new = b - step * gb;
            let new_loss = obj.loss(&w_new, b_new);
            if new_loss <= loss - ARMIJO * step * gnorm2 {
                w = w_new;
                b = b_new;
                loss = new_loss;
                losses.push(loss);
                break;
            }
            step *= 0.5;
            if step < 1e-30 {
                // no representable descent step left
                return FitReport { weights: w, bias: b, losses, iterations, converged: true };
            }
        }
    }
    FitReport { weights: w, bias: b, losses, iterations, converged }
}

fn has_both_classes(labels: &[bool]) -> bool {
    labels.iter().any(|&l| l) && labels.iter().any(|&l| !l)
}

/// Fits a verifier on `(features, labels)`. Thresholds are left unset.
pub fn train_logistic(
    features: &[FeatureVector],
    labels: &[bool],
    c: f64,
    max_iter: usize,
    tol: f64,
    seed: u64,
    standardize: bool,
) -> Result<JudgeModel> {
    if features.len() != labels.len() {
        return Err(Error::InvalidArgument("features and labels differ in length".into()));
    }
    if !has_both_classes(labels) {
        return Err(Error::DegenerateLabels);
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidArgument(format!("C must be positive, got {c}")));
    }
    let dim = features[0].dim();
    if let Some(f) = features.iter().find(|f| f.dim() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, actual: f.dim() });
    }
    let scaler = standardize.then(|| Scaler::fit(features));
    let x: Vec<Vec<f64>> = features
        .iter()
        .map(|f| match &scaler {
            Some(s) => s.apply(f.values()),
            None => f.values().to_vec(),
        })
        .collect();
    let report = fit(&x, labels, c, max_iter, tol);
    Ok(JudgeModel {
        format_version: JUDGE_FORMAT_VERSION,
        feature_dim: dim,
        weights: report.weights,
        bias: report.bias,
        scaler,
        thresholds: None,
        training_meta: TrainingMeta {
            c,
            auc: None,
            seed,
            iterations: report.iterations,
            final_loss: *report.losses.last().unwrap(),
            target_recall: None,
        },
        provenance: None,
    })
}
