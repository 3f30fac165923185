use rand::Rng;

use super::{Distribution, TokenId};

/// Draws a token. Temperature 0 is argmax with lowest-id tie-break; otherwise
/// samples from `probs^(1/t)` renormalized.
pub fn sample_token<R: Rng + ?Sized>(dist: &Distribution, temperature: f64, rng: &mut R) -> TokenId {
    if temperature == 0.0 {
        return dist.argmax();
    }
    let tempered;
    let dist = if temperature == 1.0 {
        dist
    } else {
        tempered = dist.tempered(temperature);
        &tempered
    };
    sample_inverse_cdf(dist, rng.random::<f64>())
}

/// Inverse-CDF lookup for a uniform draw in `[0, 1)`; floating-point slack at
/// the top end lands on the last token with positive mass.
pub(crate) fn sample_inverse_cdf(dist: &Distribution, u: f64) -> TokenId {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in dist.probs().iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}
