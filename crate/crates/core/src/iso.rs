//! Pool-adjacent-violators for nondecreasing least-squares fits.

/// Weighted isotonic (nondecreasing) regression of `values`.
pub fn pava(values: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len());
    // blocks of (mean, weight, length)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (m2, w2, l2) = blocks[blocks.len() - 1];
            let (m1, w1, l1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            let w = w1 + w2;
            let m = if w > 0.0 { (m1 * w1 + m2 * w2) / w } else { 0.5 * (m1 + m2) };
            blocks.push((m, w, l1 + l2));
        }
    }
    let mut out = Vec::with_capacity(values.len());
    for (m, _, l) in blocks {
        out.extend(std::iter::repeat(m).take(l));
    }
    out
}

/// Unit-weight isotonic regression.
pub fn pava_unweighted(values: &[f64]) -> Vec<f64> {
    pava(values, &vec![1.0; values.len()])
}
