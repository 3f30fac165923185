//! Exact-enumeration checks that conditioning a token on its suffix as well
//! as its prefix never increases conditional entropy, and strictly lowers it
//! when the suffix carries information about the token.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Joint distribution over (prefix C, token X, suffix S), stored `[c][x][s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub prefixes: usize,
    pub tokens: usize,
    pub suffixes: usize,
    probs: Vec<f64>,
}

impl Joint {
    pub fn from_weights(prefixes: usize, tokens: usize, suffixes: usize, weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), prefixes * tokens * suffixes);
        let total: f64 = weights.iter().sum();
        let probs = weights.into_iter().map(|w| w / total).collect();
        Self { prefixes, tokens, suffixes, probs }
    }

    pub fn p(&self, c: usize, x: usize, s: usize) -> f64 {
        self.probs[(c * self.tokens + x) * self.suffixes + s]
    }

    fn p_c(&self, c: usize) -> f64 {
        (0..self.tokens).flat_map(|x| (0..self.suffixes).map(move |s| (x, s))).map(|(x, s)| self.p(c, x, s)).sum()
    }

    fn p_cx(&self, c: usize, x: usize) -> f64 {
        (0..self.suffixes).map(|s| self.p(c, x, s)).sum()
    }

    fn p_cs(&self, c: usize, s: usize) -> f64 {
        (0..self.tokens).map(|x| self.p(c, x, s)).sum()
    }

    /// `H(X | C)` in nats.
    pub fn entropy_given_prefix(&self) -> f64 {
        let mut h = 0.0;
        for c in 0..self.prefixes {
            let pc = self.p_c(c);
            for x in 0..self.tokens {
                let pcx = self.p_cx(c, x);
                if pcx > 0.0 {
                    h -= pcx * (pcx / pc).ln();
                }
            }
        }
        h
    }

    /// `H(X | C, S)` in nats.
    pub fn entropy_given_both(&self) -> f64 {
        let mut h = 0.0;
        for c in 0..self.prefixes {
            for s in 0..self.suffixes {
                let pcs = self.p_cs(c, s);
                for x in 0..self.tokens {
                    let p = self.p(c, x, s);
                    if p > 0.0 {
                        h -= p * (p / pcs).ln();
                    }
                }
            }
        }
        h
    }

    /// `I(X; S | C)` from its KL form, independent of the entropy routines.
    pub fn conditional_mutual_information(&self) -> f64 {
        let mut i = 0.0;
        for c in 0..self.prefixes {
            let pc = self.p_c(c);
            for x in 0..self.tokens {
                let pcx = self.p_cx(c, x);
                for s in 0..self.suffixes {
                    let p = self.p(c, x, s);
                    if p > 0.0 {
                        i += p * (pc * p / (pcx * self.p_cs(c, s))).ln();
                    }
                }
            }
        }
        i
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum JointKind {
    General,
    Sparse,
    Independent,
    Deterministic,
}

fn random_joint<R: Rng + ?Sized>(rng: &mut R, kind: JointKind) -> Joint {
    let prefixes = rng.random_range(1..=3);
    let tokens = rng.random_range(2..=8);
    let suffixes = rng.random_range(2..=8);
    // exponential draws give a flat Dirichlet after normalization
    let expo = |rng: &mut R| -(1.0 - rng.random::<f64>()).ln();
    let mut w = vec![0.0; prefixes * tokens * suffixes];
    let idx = |c: usize, x: usize, s: usize| (c * tokens + x) * suffixes + s;
    match kind {
        JointKind::General | JointKind::Sparse => {
            for v in w.iter_mut() {
                *v = expo(rng);
                if kind == JointKind::Sparse && rng.random::<f64>() < 0.6 {
                    *v = 0.0;
                }
            }
            if w.iter().all(|&v| v == 0.0) {
                w[0] = 1.0;
            }
        }
        JointKind::Independent => {
            for c in 0..prefixes {
                let pc = expo(rng);
                let px: Vec<f64> = (0..tokens).map(|_| expo(rng)).collect();
                let ps: Vec<f64> = (0..suffixes).map(|_| expo(rng)).collect();
                for x in 0..tokens {
                    for s in 0..suffixes {
                        w[idx(c, x, s)] = pc * px[x] * ps[s];
                    }
                }
            }
        }
        JointKind::Deterministic => {
            let f: Vec<usize> = (0..tokens).map(|x| x % suffixes).collect();
            let injective = tokens <= suffixes;
            for c in 0..prefixes {
                for x in 0..tokens {
                    let s = if injective { x } else { f[x] };
                    w[idx(c, x, s)] = expo(rng);
                }
            }
        }
    }
    Joint::from_weights(prefixes, tokens, suffixes, w)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub trials: usize,
    pub seed: u64,
    /// `H(X|C,S) > H(X|C) + 1e-12`.
    pub monotonicity_violations: usize,
    /// `I(X;S|C) > 1e-6` but the entropy gap is not strictly positive.
    pub strictness_violations: usize,
    /// Entropy gap disagrees with the KL-form CMI by more than 1e-9.
    pub identity_violations: usize,
    pub strict_cases: usize,
    pub max_gap_error: f64,
}

impl TheoremReport {
    pub fn passed(&self) -> bool {
        self.monotonicity_violations == 0 && self.strictness_violations == 0 && self.identity_violations == 0
    }
}

pub const MONOTONE_TOL: f64 = 1e-12;
pub const CMI_STRICT: f64 = 1e-6;

pub fn check_theorem(trials: usize, seed: u64) -> TheoremReport {
    let kinds = [JointKind::General, JointKind::Sparse, JointKind::Independent, JointKind::Deterministic];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = TheoremReport { trials, seed, ..Default::default() };
    for t in 0..trials {
        let joint = random_joint(&mut rng, kinds[t % kinds.len()]);
        let h_prefix = joint.entropy_given_prefix();
        let h_both = joint.entropy_given_both();
        let cmi = joint.conditional_mutual_information();
        let gap = h_prefix - h_both;
        if h_both > h_prefix + MONOTONE_TOL {
            report.monotonicity_violations += 1;
        }
        if cmi > CMI_STRICT {
            report.strict_cases += 1;
            if gap <= 0.0 {
                report.strictness_violations += 1;
            }
        }
        let err = (gap - cmi).abs();
        report.max_gap_error = report.max_gap_error.max(err);
        if err > 1e-9 {
            report.identity_violations += 1;
        }
    }
    report
}
