//! Rank and error metrics for comparing evaluators.

/// Kendall's tau-b; ties in either sequence are corrected for. Returns
/// `None` for fewer than two pairs or when one sequence is constant.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len(), "sequences differ in length");
    let n = a.len();
    if n < 2 {
        return None;
    }
    let (mut conc, mut disc, mut tie_a, mut tie_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let da = a[i].partial_cmp(&a[j])?;
            let db = b[i].partial_cmp(&b[j])?;
            use std::cmp::Ordering::Equal;
            match (da, db) {
                (Equal, Equal) => {}
                (Equal, _) => tie_a += 1,
                (_, Equal) => tie_b += 1,
                _ if da == db => conc += 1,
                _ => disc += 1,
            }
        }
    }
    let denom = (((conc + disc + tie_a) as f64) * ((conc + disc + tie_b) as f64)).sqrt();
    if denom == 0.0 {
        return None;
    }
    Some((conc - disc) as f64 / denom)
}

/// Mean absolute percentage error of `pred` against `truth`, skipping zero
/// truths. Percent.
pub fn mape(pred: &[f64], truth: &[f64]) -> Option<f64> {
    assert_eq!(pred.len(), truth.len(), "sequences differ in length");
    let terms: Vec<f64> =
        pred.iter().zip(truth).filter(|(_, t)| **t != 0.0).map(|(p, t)| ((p - t) / t).abs()).collect();
    if terms.is_empty() {
        return None;
    }
    Some(100.0 * terms.iter().sum::<f64>() / terms.len() as f64)
}
