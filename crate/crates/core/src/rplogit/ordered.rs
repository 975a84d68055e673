use rayon::prelude::*;

use crate::error::{Error, Result};

use super::{ModelData, ParameterVector};

/// Smallest probability admitted into a log-likelihood.
pub const PROBABILITY_FLOOR: f64 = 1e-300;

/// Observations per parallel work unit. Partial sums are combined in chunk
/// order, so results do not depend on the thread count.
pub(crate) const CHUNK: usize = 256;

pub fn logistic_cdf(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn logistic_pdf(z: f64) -> f64 {
    logistic_cdf(z) * logistic_cdf(-z)
}

/// Probability of one level and the densities at its two cut points.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LevelProb {
    pub p: f64,
    /// Density at the upper cut `kappa_j - eta` (0 for the top level).
    pub f_upper: f64,
    /// Density at the lower cut `kappa_{j-1} - eta` (0 for level 1).
    pub f_lower: f64,
}

/// `level` is 1-based; `thresholds` holds the `J - 1` finite cuts.
#[inline]
pub(crate) fn level_prob(thresholds: &[f64], level: usize, eta: f64) -> LevelProb {
    let top = thresholds.len() + 1;
    let upper = (level < top).then(|| thresholds[level - 1] - eta);
    let lower = (level > 1).then(|| thresholds[level - 2] - eta);
    let p = match (lower, upper) {
        (None, Some(a)) => logistic_cdf(a),
        (Some(b), None) => logistic_cdf(-b),
        (Some(b), Some(a)) if b > 0.0 => logistic_cdf(-b) - logistic_cdf(-a),
        (Some(b), Some(a)) => logistic_cdf(a) - logistic_cdf(b),
        (None, None) => 1.0,
    };
    LevelProb {
        p,
        f_upper: upper.map_or(0.0, logistic_pdf),
        f_lower: lower.map_or(0.0, logistic_pdf),
    }
}

fn eta_of(x: &[f64], params: &ParameterVector) -> f64 {
    params.constant + x.iter().zip(&params.beta).map(|(a, b)| a * b).sum::<f64>()
}

fn check_row(x: &[f64], params: &ParameterVector) -> Result<()> {
    if x.len() != params.beta.len() {
        return Err(Error::invalid(format!(
            "{} covariates for {} coefficients",
            x.len(),
            params.beta.len()
        )));
    }
    if params.thresholds.windows(2).any(|w| !(w[1] > w[0])) || params.thresholds.is_empty() {
        return Err(Error::invalid("thresholds must be non-empty and strictly increasing"));
    }
    Ok(())
}

/// Probability that an observation with covariates `x` falls in `level`
/// (1-based), using the mean coefficients.
pub fn ordered_prob(x: &[f64], params: &ParameterVector, level: usize) -> Result<f64> {
    check_row(x, params)?;
    if level == 0 || level > params.levels() {
        return Err(Error::Range(format!("level {level} outside 1..={}", params.levels())));
    }
    Ok(level_prob(&params.thresholds, level, eta_of(x, params)).p)
}

/// All level probabilities for one covariate vector.
pub fn ordered_probs(x: &[f64], params: &ParameterVector) -> Result<Vec<f64>> {
    check_row(x, params)?;
    let eta = eta_of(x, params);
    Ok((1..=params.levels())
        .map(|j| level_prob(&params.thresholds, j, eta).p)
        .collect())
}

pub(crate) fn check_model(data: &ModelData, params: &ParameterVector) -> Result<()> {
    params.validate(data.n_cov(), data.n_random)?;
    if params.levels() != data.levels {
        return Err(Error::invalid(format!(
            "{} thresholds for a {}-level response",
            params.thresholds.len(),
            data.levels
        )));
    }
    Ok(())
}

pub(crate) fn warn_floored(count: usize) {
    if count > 0 {
        log::warn!("{count} probabilities fell below {PROBABILITY_FLOOR:e} and were floored");
    }
}

/// Log-likelihood with every coefficient fixed at its mean.
pub fn loglik_fixed(data: &ModelData, params: &ParameterVector) -> Result<f64> {
    check_model(data, params)?;
    let parts: Vec<(f64, usize)> = (0..data.n_obs())
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|rows| {
            let mut ll = 0.0;
            let mut floored = 0;
            for &i in rows {
                let lp = level_prob(&params.thresholds, data.y[i], eta_of(data.row(i), params));
                if lp.p > PROBABILITY_FLOOR {
                    ll += lp.p.ln();
                } else {
                    ll += PROBABILITY_FLOOR.ln();
                    floored += 1;
                }
            }
            (ll, floored)
        })
        .collect();
    let mut total = 0.0;
    let mut floored = 0;
    for (ll, f) in parts {
        total += ll;
        floored += f;
    }
    warn_floored(floored);
    Ok(total)
}

/// Log-likelihood and its gradient. The sigma block of the gradient is 0.
pub fn loglik_fixed_with_gradient(data: &ModelData, params: &ParameterVector) -> Result<(f64, ParameterVector)> {
    check_model(data, params)?;
    let parts: Vec<(f64, ParameterVector, usize)> = (0..data.n_obs())
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|rows| {
            let mut ll = 0.0;
            let mut g = params.zeros_like();
            let mut floored = 0;
            for &i in rows {
                let x = data.row(i);
                let level = data.y[i];
                let lp = level_prob(&params.thresholds, level, eta_of(x, params));
                if lp.p <= PROBABILITY_FLOOR {
                    ll += PROBABILITY_FLOOR.ln();
                    floored += 1;
                    continue;
                }
                ll += lp.p.ln();
                let d_eta = (lp.f_lower - lp.f_upper) / lp.p;
                g.constant += d_eta;
                for (gb, xv) in g.beta.iter_mut().zip(x) {
                    *gb += d_eta * xv;
                }
                if level < data.levels {
                    g.thresholds[level - 1] += lp.f_upper / lp.p;
                }
                if level > 1 {
                    g.thresholds[level - 2] -= lp.f_lower / lp.p;
                }
            }
            (ll, g, floored)
        })
        .collect();
    let mut total = 0.0;
    let mut grad = params.zeros_like();
    let mut floored = 0;
    for (ll, g, f) in parts {
        total += ll;
        grad.add_scaled(&g, 1.0);
        floored += f;
    }
    warn_floored(floored);
    Ok((total, grad))
}
