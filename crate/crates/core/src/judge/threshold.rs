use log::warn;
use serde::{Deserialize, Serialize};

use super::metrics::f1_score;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Recall,
    F1,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdChoice {
    pub theta: f64,
    /// Recall or F1 at `theta`, depending on the criterion.
    pub value: f64,
    /// Set when the recall target was unattainable.
    pub fallback: bool,
}

/// Picks a threshold for the rule "accept iff score > theta".
///
/// Candidates are one below the minimum score, the midpoints between
/// consecutive distinct scores, and one above the maximum. `F1` maximizes F1
/// of the positive (acceptable) class, preferring the larger theta on ties.
/// `Recall` returns the largest candidate whose recall reaches
/// `target_recall`.
pub fn select_threshold(
    scores: &[f64],
    labels: &[bool],
    criterion: Criterion,
    target_recall: f64,
) -> Result<ThresholdChoice> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("non-finite score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::DegenerateLabels);
    }

    let mut pairs: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // distinct values ascending with (positives, negatives) at each value
    let mut values: Vec<(f64, usize, usize)> = Vec::new();
    for (s, l) in pairs {
        match values.last_mut() {
            Some(last) if last.0 == s => {
                if l { last.1 += 1 } else { last.2 += 1 }
            }
            _ => values.push((s, l as usize, (!l) as usize)),
        }
    }

    // candidate j accepts values[j..]; j = values.len() accepts nothing
    let m = values.len();
    let theta_of = |j: usize| -> f64 {
        if j == 0 {
            values[0].0 - 1.0
        } else if j == m {
            values[m - 1].0 + 1.0
        } else {
            (values[j - 1].0 + values[j].0) / 2.0
        }
    };
    let mut tp = vec![0usize; m + 1];
    let mut fp = vec![0usize; m + 1];
    for j in (0..m).rev() {
        tp[j] = tp[j + 1] + values[j].1;
        fp[j] = fp[j + 1] + values[j].2;
    }

    match criterion {
        Criterion::F1 => {
            let mut best = (0, f64::NEG_INFINITY);
            for j in 0..=m {
                let f1 = f1_score(tp[j], fp[j], n_pos - tp[j]);
                if f1 >= best.1 {
                    best = (j, f1);
                }
            }
            Ok(ThresholdChoice { theta: theta_of(best.0), value: best.1, fallback: false })
        }
        Criterion::Recall => {
            for j in (0..=m).rev() {
                let recall = tp[j] as f64 / n_pos as f64;
                if recall >= target_recall {
                    return Ok(ThresholdChoice { theta: theta_of(j), value: recall, fallback: false });
                }
            }
            warn!("recall target {target_recall} unattainable; accepting every score");
            Ok(ThresholdChoice { theta: theta_of(0), value: 1.0, fallback: true })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_f1_is_one() {
        let s = [0.1, 0.2, 0.3, 0.7, 0.8];
        let l = [false, false, false, true, true];
        let c = select_threshold(&s, &l, Criterion::F1, 0.99).unwrap();
        assert_eq!(c.value, 1.0);
        assert!((c.theta - 0.5).abs() < 1e-12);
    }

    #[test]
    fn recall_zero_target_is_above_max() {
        let s = [0.1, 0.4, 0.9];
        let l = [true, false, true];
        let c = select_threshold(&s, &l, Criterion::Recall, 0.0).unwrap();
        assert_eq!(c.theta, 1.9);
        assert!(c.theta.is_finite());
    }

    #[test]
    fn recall_target_picks_largest_theta() {
        let s = [0.1, 0.4, 0.6, 0.9];
        let l = [true, false, true, true];
        // recall >= 0.6 needs the 0.6 and 0.9 positives: theta in (0.4, 0.6)
        let c = select_threshold(&s, &l, Criterion::Recall, 0.6).unwrap();
        assert_eq!(c.theta, 0.5);
        let c = select_threshold(&s, &l, Criterion::Recall, 1.0).unwrap();
        assert_eq!(c.theta, -0.9);
    }

    #[test]
    fn unattainable_recall_falls_back() {
        let c = select_threshold(&[0.2, 0.3], &[true, false], Criterion::Recall, 1.5).unwrap();
        assert!(c.fallback);
        assert!((c.theta - (0.2 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn needs_both_classes() {
        assert!(select_threshold(&[0.2, 0.3], &[true, true], Criterion::F1, 0.9).is_err());
    }
}
