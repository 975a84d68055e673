use rayon::prelude::*;

use crate::error::{Error, Result};

use super::halton::normal_draws;
use super::ordered::{check_model, level_prob, loglik_fixed, warn_floored, PROBABILITY_FLOOR};
use super::{ModelData, ParameterVector};

/// Standard normal draws shared by every panel unit, row-major `r x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Draws {
    pub r: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl Draws {
    pub fn halton(dim: usize, r: usize, seed: u64) -> Result<Self> {
        if r == 0 {
            return Err(Error::invalid("need at least one draw"));
        }
        let values = if dim == 0 { Vec::new() } else { normal_draws(dim, r, seed)? };
        Ok(Self { r, dim, values })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

fn check_draws(data: &ModelData, draws: &Draws) -> Result<()> {
    if draws.dim != data.n_random {
        return Err(Error::invalid(format!(
            "{} draw dimensions for {} random covariates",
            draws.dim, data.n_random
        )));
    }
    Ok(())
}

fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|s| (s - m).exp()).sum::<f64>().ln()
}

struct GroupEval {
    ll: f64,
    grad: Option<Vec<f64>>,
    floored: usize,
}

// Flat gradient layout: constant, beta, sigma, thresholds.
fn eval_group(
    data: &ModelData,
    params: &ParameterVector,
    draws: &Draws,
    rows: &[usize],
    want_grad: bool,
) -> GroupEval {
    let k = data.n_cov();
    let kr = data.n_random;
    let first_random = k - kr;
    let np = 1 + k + kr + params.thresholds.len();
    let base: Vec<f64> = rows
        .iter()
        .map(|&i| params.constant + data.row(i).iter().zip(&params.beta).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let mut s = vec![0.0; draws.r];
    let mut g = if want_grad { vec![0.0; draws.r * np] } else { Vec::new() };
    let mut floored = 0;
    for r in 0..draws.r {
        let omega = draws.row(r);
        let gr = if want_grad { &mut g[r * np..(r + 1) * np] } else { &mut [][..] };
        for (t, &i) in rows.iter().enumerate() {
            let x = data.row(i);
            let xr = &x[first_random..];
            let eta = base[t] + xr.iter().zip(&params.sigma).zip(omega).map(|((a, sd), w)| a * sd * w).sum::<f64>();
            let level = data.y[i];
            let lp = level_prob(&params.thresholds, level, eta);
            if lp.p <= PROBABILITY_FLOOR {
                s[r] += PROBABILITY_FLOOR.ln();
                floored += 1;
                continue;
            }
            s[r] += lp.p.ln();
            if want_grad {
                let d_eta = (lp.f_lower - lp.f_upper) / lp.p;
                gr[0] += d_eta;
                for (gb, xv) in gr[1..=k].iter_mut().zip(x) {
                    *gb += d_eta * xv;
                }
                for (j, gs) in gr[1 + k..1 + k + kr].iter_mut().enumerate() {
                    *gs += d_eta * xr[j] * omega[j];
                }
                let th = &mut gr[1 + k + kr..];
                if level < data.levels {
                    th[level - 1] += lp.f_upper / lp.p;
                }
                if level > 1 {
                    th[level - 2] -= lp.f_lower / lp.p;
                }
            }
        }
    }
    let lse = logsumexp(&s);
    let ll = lse - (draws.r as f64).ln();
    let grad = want_grad.then(|| {
        let mut out = vec![0.0; np];
        for r in 0..draws.r {
            let w = (s[r] - lse).exp();
            for (o, v) in out.iter_mut().zip(&g[r * np..(r + 1) * np]) {
                *o += w * v;
            }
        }
        out
    });
    GroupEval { ll, grad, floored }
}

fn unflatten(flat: &[f64], like: &ParameterVector) -> ParameterVector {
    let k = like.beta.len();
    let kr = like.sigma.len();
    ParameterVector {
        constant: flat[0],
        beta: flat[1..=k].to_vec(),
        sigma: flat[1 + k..1 + k + kr].to_vec(),
        thresholds: flat[1 + k + kr..].to_vec(),
    }
}

fn all_sigma_zero(params: &ParameterVector) -> bool {
    params.sigma.iter().all(|s| *s == 0.0)
}

/// Simulated panel log-likelihood. Each unit's sequence probability is
/// averaged over the shared draws. With every sigma at 0 this is exactly
/// [`loglik_fixed`].
pub fn loglik_simulated(data: &ModelData, params: &ParameterVector, draws: &Draws) -> Result<f64> {
    check_model(data, params)?;
    check_draws(data, draws)?;
    if all_sigma_zero(params) {
        return loglik_fixed(data, params);
    }
    let parts: Vec<GroupEval> = data
        .groups
        .par_iter()
        .map(|rows| eval_group(data, params, draws, rows, false))
        .collect();
    let mut total = 0.0;
    let mut floored = 0;
    for p in parts {
        total += p.ll;
        floored += p.floored;
    }
    warn_floored(floored);
    Ok(total)
}

/// Simulated log-likelihood and its analytic gradient, including the sigma block.
pub fn loglik_simulated_with_gradient(
    data: &ModelData,
    params: &ParameterVector,
    draws: &Draws,
) -> Result<(f64, ParameterVector)> {
    check_model(data, params)?;
    check_draws(data, draws)?;
    let parts: Vec<GroupEval> = data
        .groups
        .par_iter()
        .map(|rows| eval_group(data, params, draws, rows, true))
        .collect();
    let np = 1 + params.beta.len() + params.sigma.len() + params.thresholds.len();
    let mut total = 0.0;
    let mut flat = vec![0.0; np];
    let mut floored = 0;
    for p in parts {
        total += p.ll;
        floored += p.floored;
        for (a, b) in flat.iter_mut().zip(p.grad.expect("gradient requested")) {
            *a += b;
        }
    }
    warn_floored(floored);
    Ok((total, unflatten(&flat, params)))
}
