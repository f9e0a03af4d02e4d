//! Reliability, measurement-error, correlation and exposure metrics.

use crate::error::{Error, Result};

/// Product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Malformed(format!(
            "correlation inputs differ in length ({} vs {})",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return Err(Error::DegenerateVariance);
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(Error::DegenerateVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Correlation between first and second sittings of the same takers.
pub fn retest_reliability(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 3 {
        return Err(Error::DegenerateVariance);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    pearson(&xs, &ys)
}

/// Standard error of measurement `sd * sqrt(1 - rr)`.
pub fn sem(rr: f64, population_sd: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&rr) {
        return Err(Error::OutOfRange(format!("reliability {rr} outside [0, 1]")));
    }
    if !(population_sd > 0.0 && population_sd.is_finite()) {
        return Err(Error::OutOfRange(format!("population sd {population_sd} must be > 0")));
    }
    Ok(population_sd * (1.0 - rr).sqrt())
}

/// Relative SEM reduction when reliability rises from `rr_from` to `rr_to`,
/// expressed against the new SEM: `sem(rr_from) / sem(rr_to) - 1`.
pub fn sem_reduction(rr_from: f64, rr_to: f64) -> Result<f64> {
    let new = sem(rr_to, 1.0)?;
    if new == 0.0 {
        return Err(Error::OutOfRange("reliability of 1 has zero SEM".into()));
    }
    Ok(sem(rr_from, 1.0)? / new - 1.0)
}

/// Correlation of an item-type score with a reference score.
pub fn score_correlation(scores: &[f64], reference: &[f64]) -> Result<f64> {
    pearson(scores, reference)
}

pub fn rmse(estimates: &[f64], truth: &[f64]) -> Result<f64> {
    if estimates.len() != truth.len() || estimates.is_empty() {
        return Err(Error::Malformed("rmse inputs must be non-empty and equal length".into()));
    }
    let ss: f64 = estimates.iter().zip(truth).map(|(e, t)| (e - t) * (e - t)).sum();
    Ok((ss / estimates.len() as f64).sqrt())
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    Some((xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// Largest share of administration events taken by a single item.
/// Returns the share and the item id; ties go to the first id.
pub fn max_exposure<'a, I>(counts: I) -> Result<(f64, String)>
where
    I: IntoIterator<Item = (&'a String, &'a u64)>,
{
    let mut total = 0u64;
    let mut best: Option<(&String, u64)> = None;
    for (id, &c) in counts {
        total += c;
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((id, c));
        }
    }
    match best {
        Some((id, c)) if total > 0 => Ok((c as f64 / total as f64, id.clone())),
        _ => Err(Error::EmptyReport),
    }
}
