use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Normalized mean-squared error in percent,
/// `100 / (N σ²) · Σ ‖ŷ_i − y_i‖²`, where `sigma_pop` is the population
/// standard deviation (for vector targets, the square root of the summed
/// per-dimension variances).
pub fn nmse(predictions: &[Vec<f64>], observations: &[Vec<f64>], sigma_pop: f64) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Empty("NMSE predictions"));
    }
    if predictions.len() != observations.len() {
        return Err(Error::DimensionMismatch {
            context: "NMSE inputs",
            expected: observations.len(),
            actual: predictions.len(),
        });
    }
    if !(sigma_pop > 0.0 && sigma_pop.is_finite()) {
        return Err(Error::ZeroVariance("NMSE normalizer"));
    }
    let mut sse = 0.0;
    for (p, o) in predictions.iter().zip(observations) {
        if p.len() != o.len() {
            return Err(Error::DimensionMismatch {
                context: "NMSE target vector",
                expected: o.len(),
                actual: p.len(),
            });
        }
        sse += p.iter().zip(o).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(100.0 * sse / (predictions.len() as f64 * sigma_pop * sigma_pop))
}

/// Standard deviation (1/N) over every target; vector targets sum their
/// per-dimension variances before the square root.
pub fn population_sigma<'a, I>(targets: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let targets: Vec<&[f64]> = targets.into_iter().collect();
    let first = targets.first().ok_or(Error::Empty("population targets"))?;
    let dim = first.len();
    let n = targets.len() as f64;
    let mut mean = vec![0.0; dim];
    for t in &targets {
        if t.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "population targets",
                expected: dim,
                actual: t.len(),
            });
        }
        mean.iter_mut().zip(t.iter()).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let var: f64 = targets
        .iter()
        .map(|t| t.iter().zip(&mean).map(|(v, m)| (v - m).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n;
    if !(var > 0.0) {
        return Err(Error::ZeroVariance("population targets"));
    }
    Ok(var.sqrt())
}

/// Hidden size with the lowest validation loss; ties go to the smaller size.
pub fn select_hidden(validation_losses: &BTreeMap<usize, f64>) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    // BTreeMap iterates in ascending key order, so strict `<` keeps the
    // smaller size on ties.
    for (&h, &loss) in validation_losses {
        match best {
            Some((_, b)) if !(loss < b) => {}
            _ if loss.is_nan() => {}
            _ => best = Some((h, loss)),
        }
    }
    best.map(|(h, _)| h).ok_or(Error::Empty("validation losses"))
}

/// Mean and 1/N standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
