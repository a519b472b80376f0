use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KappaError {
    #[error("label sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("label sequences are empty")]
    Empty,
}

/// Cohen's kappa between two raters over the same items.
///
/// With `A` agreements over `n` items and chance-agreement numerator
/// `E = Σ_c count_a(c)·count_b(c)`, kappa is `(A·n − E) / (n² − E)`, which is
/// `(p_o − p_e) / (1 − p_e)` evaluated with a single rounding. When both raters
/// use one and the same category throughout (`p_e = 1`) the result is 1.
pub fn cohen_kappa<T: Ord>(labels_a: &[T], labels_b: &[T]) -> Result<f64, KappaError> {
    if labels_a.len() != labels_b.len() {
        return Err(KappaError::LengthMismatch(labels_a.len(), labels_b.len()));
    }
    if labels_a.is_empty() {
        return Err(KappaError::Empty);
    }
    let n = labels_a.len() as u128;
    let mut marginals: BTreeMap<&T, (u128, u128)> = BTreeMap::new();
    let mut agreements = 0u128;
    for (a, b) in labels_a.iter().zip(labels_b) {
        marginals.entry(a).or_default().0 += 1;
        marginals.entry(b).or_default().1 += 1;
        if a == b {
            agreements += 1;
        }
    }
    let chance: u128 = marginals.values().map(|(ca, cb)| ca * cb).sum();
    let total = n * n;
    if chance == total {
        return Ok(1.0);
    }
    let numerator = (agreements * n) as f64 - chance as f64;
    Ok(numerator / (total - chance) as f64)
}
