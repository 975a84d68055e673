use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

use super::optimize::{minimize_bfgs, BfgsOptions};
use super::ordered::loglik_fixed_with_gradient;
use super::simulated::{loglik_simulated_with_gradient, Draws};
use super::{ModelData, ModelSpec, ParameterVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParameterKind {
    Constant,
    /// Coefficient of a fixed covariate.
    Slope,
    /// Mean of a random coefficient.
    Mean,
    StdDev,
    Threshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterEstimate {
    pub name: String,
    pub kind: ParameterKind,
    pub estimate: f64,
    pub odds_ratio: Option<f64>,
    pub std_error: Option<f64>,
    pub z_value: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub iterations: usize,
    pub gradient_max_abs: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: ModelSpec,
    pub n_observations: usize,
    pub n_groups: usize,
    /// Number of estimated parameters.
    pub n_parameters: usize,
    pub log_likelihood: f64,
    pub log_likelihood_start: f64,
    pub aic: f64,
    pub bic: f64,
    pub convergence: Convergence,
    pub std_errors_available: bool,
    pub parameters: Vec<ParameterEstimate>,
    /// Full natural-scale parameters; standard deviations reported as `|sigma|`.
    pub estimates: ParameterVector,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitOptions {
    pub bfgs: BfgsOptions,
}

/// `(AIC, BIC)` for a log-likelihood with `k` parameters and `n` observations.
pub fn information_criteria(loglik: f64, k: usize, n: usize) -> (f64, f64) {
    let k = k as f64;
    (2.0 * k - 2.0 * loglik, k * (n as f64).ln() - 2.0 * loglik)
}

pub fn odds_ratio(coefficient: f64) -> f64 {
    coefficient.exp()
}

const HESSIAN_STEP: f64 = 1e-4;
const START_SIGMA: f64 = 0.1;
const MIN_START_GAP: f64 = 0.05;

// Maps between the full parameter vector, the free natural-scale vector `z`
// and the unconstrained optimiser vector `theta`. The two free vectors share
// an ordering: constant, betas, free sigmas, free thresholds. In `theta` the
// thresholds after the first are log increments.
struct Layout {
    constant: bool,
    k: usize,
    sigma_fixed: Vec<Option<f64>>,
    n_thr: usize,
}

impl Layout {
    fn free_sigma(&self) -> impl Iterator<Item = usize> + '_ {
        self.sigma_fixed.iter().enumerate().filter(|(_, f)| f.is_none()).map(|(i, _)| i)
    }

    fn n_free_sigma(&self) -> usize {
        self.free_sigma().count()
    }

    fn first_free_thr(&self) -> usize {
        usize::from(self.constant)
    }

    fn n_free(&self) -> usize {
        usize::from(self.constant) + self.k + self.n_free_sigma() + self.n_thr - self.first_free_thr()
    }

    fn base(&self) -> ParameterVector {
        ParameterVector {
            constant: 0.0,
            beta: vec![0.0; self.k],
            sigma: self.sigma_fixed.iter().map(|f| f.unwrap_or(0.0)).collect(),
            thresholds: vec![0.0; self.n_thr],
        }
    }

    /// Writes the non-threshold free values; returns the cursor.
    fn put_head(&self, v: &[f64], p: &mut ParameterVector) -> usize {
        let mut i = 0;
        if self.constant {
            p.constant = v[0];
            i = 1;
        }
        p.beta.copy_from_slice(&v[i..i + self.k]);
        i += self.k;
        for s in self.free_sigma().collect::<Vec<_>>() {
            p.sigma[s] = v[i];
            i += 1;
        }
        i
    }

    fn head_of(&self, p: &ParameterVector) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_free());
        if self.constant {
            out.push(p.constant);
        }
        out.extend_from_slice(&p.beta);
        out.extend(self.free_sigma().map(|s| p.sigma[s]));
        out
    }

    fn params_from_z(&self, z: &[f64]) -> ParameterVector {
        let mut p = self.base();
        let i = self.put_head(z, &mut p);
        p.thresholds[self.first_free_thr()..].copy_from_slice(&z[i..]);
        p
    }

    fn z_from_params(&self, p: &ParameterVector) -> Vec<f64> {
        let mut out = self.head_of(p);
        out.extend_from_slice(&p.thresholds[self.first_free_thr()..]);
        out
    }

    fn grad_z(&self, g: &ParameterVector) -> Vec<f64> {
        self.z_from_params(g)
    }

    fn params_from_theta(&self, t: &[f64]) -> ParameterVector {
        let mut p = self.base();
        let mut i = self.put_head(t, &mut p);
        if !self.constant {
            p.thresholds[0] = t[i];
            i += 1;
        }
        for m in 1..self.n_thr {
            p.thresholds[m] = p.thresholds[m - 1] + t[i].exp();
            i += 1;
        }
        p
    }

    fn theta_from_params(&self, p: &ParameterVector) -> Vec<f64> {
        let mut out = self.head_of(p);
        if !self.constant {
            out.push(p.thresholds[0]);
        }
        for w in p.thresholds.windows(2) {
            out.push((w[1] - w[0]).ln());
        }
        out
    }

    fn grad_theta(&self, p: &ParameterVector, g: &ParameterVector) -> Vec<f64> {
        let mut out = self.head_of(g);
        // suffix sums: kappa_m depends on every increment up to m
        let mut tail = vec![0.0; self.n_thr + 1];
        for m in (0..self.n_thr).rev() {
            tail[m] = tail[m + 1] + g.thresholds[m];
        }
        if !self.constant {
            out.push(tail[0]);
        }
        for (m, t) in tail.iter().enumerate().take(self.n_thr).skip(1) {
            out.push(t * (p.thresholds[m] - p.thresholds[m - 1]));
        }
        out
    }

    fn labels(&self, spec: &ModelSpec) -> Vec<(String, ParameterKind)> {
        let mut out = Vec::new();
        if self.constant {
            out.push(("constant".to_string(), ParameterKind::Constant));
        }
        for f in &spec.fixed {
            out.push((f.clone(), ParameterKind::Slope));
        }
        for r in &spec.random {
            out.push((r.name.clone(), ParameterKind::Mean));
        }
        for s in self.free_sigma() {
            out.push((format!("sd.{}", spec.random[s].name), ParameterKind::StdDev));
        }
        for m in self.first_free_thr()..self.n_thr {
            out.push((format!("kappa.{m}"), ParameterKind::Threshold));
        }
        out
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn start_values(layout: &Layout, data: &ModelData) -> ParameterVector {
    let counts = data.level_counts();
    let n = data.n_obs() as f64;
    let mut cum = 0.0;
    let mut cuts = Vec::with_capacity(layout.n_thr);
    for c in &counts[..layout.n_thr] {
        cum += *c as f64;
        cuts.push(logit((cum / n).clamp(1e-4, 1.0 - 1e-4)));
    }
    for m in 1..cuts.len() {
        if cuts[m] < cuts[m - 1] + MIN_START_GAP {
            cuts[m] = cuts[m - 1] + MIN_START_GAP;
        }
    }
    let mut p = layout.base();
    for s in layout.free_sigma().collect::<Vec<_>>() {
        p.sigma[s] = START_SIGMA;
    }
    if layout.constant {
        p.constant = -cuts[0];
        let c0 = cuts[0];
        p.thresholds = cuts.into_iter().map(|c| c - c0).collect();
    } else {
        p.thresholds = cuts;
    }
    p
}

enum Evaluator {
    Fixed,
    Simulated(Draws),
}

impl Evaluator {
    fn eval(&self, data: &ModelData, p: &ParameterVector) -> Result<(f64, ParameterVector)> {
        match self {
            Evaluator::Fixed => loglik_fixed_with_gradient(data, p),
            Evaluator::Simulated(d) => loglik_simulated_with_gradient(data, p, d),
        }
    }
}

fn check_data(data: &ModelData, spec: &ModelSpec) -> Result<()> {
    let names = spec.covariates();
    if data.covariates.iter().map(String::as_str).ne(names.iter().copied()) || data.n_random != spec.random.len() {
        return Err(Error::invalid("model data does not match the model specification"));
    }
    if data.n_obs() == 0 {
        return Err(Error::invalid("no observations"));
    }
    if data.level_counts().iter().filter(|c| **c > 0).count() < 2 {
        return Err(Error::invalid("response takes a single level; nothing to estimate"));
    }
    Ok(())
}

pub fn fit(data: &ModelData, spec: &ModelSpec) -> Result<FitResult> {
    fit_with(data, spec, &FitOptions::default())
}

/// Maximum (simulated) likelihood fit. A model whose random coefficients all
/// have sigma fixed at 0 is evaluated exactly as the fixed-coefficient model.
pub fn fit_with(data: &ModelData, spec: &ModelSpec, opts: &FitOptions) -> Result<FitResult> {
    spec.validate()?;
    check_data(data, spec)?;
    let layout = Layout {
        constant: spec.constant,
        k: data.n_cov(),
        sigma_fixed: spec.random.iter().map(|r| r.fixed_sigma).collect(),
        n_thr: data.levels - 1,
    };
    let fixed_equivalent = layout.sigma_fixed.iter().all(|s| *s == Some(0.0));
    let evaluator = if fixed_equivalent {
        Evaluator::Fixed
    } else {
        Evaluator::Simulated(Draws::halton(data.n_random, spec.draws, spec.seed)?)
    };

    let start = start_values(&layout, data);
    let (ll_start, _) = evaluator.eval(data, &start)?;
    let outcome = minimize_bfgs(
        |theta| {
            let p = layout.params_from_theta(theta);
            // A threshold gap lost to rounding is outside the domain; the line
            // search backs off from non-finite values.
            if p.thresholds.windows(2).any(|w| !(w[1] > w[0])) {
                return Ok((f64::INFINITY, vec![0.0; theta.len()]));
            }
            let (ll, g) = evaluator.eval(data, &p)?;
            let gt = layout.grad_theta(&p, &g);
            Ok((-ll, gt.into_iter().map(|v| -v).collect()))
        },
        layout.theta_from_params(&start),
        opts.bfgs,
    )?;
    let est = layout.params_from_theta(&outcome.x);
    let (ll, _) = evaluator.eval(data, &est)?;
    if !outcome.converged {
        log::warn!("optimiser stopped without converging: {}", outcome.message);
    }

    let z = layout.z_from_params(&est);
    let cov = covariance(&layout, &evaluator, data, &z);
    if cov.is_none() {
        log::warn!("negative Hessian not positive definite; standard errors unavailable");
    }
    let k = layout.n_free();
    let (aic, bic) = information_criteria(ll, k, data.n_obs());

    let parameters = layout
        .labels(spec)
        .into_iter()
        .enumerate()
        .map(|(i, (name, kind))| {
            let estimate = if kind == ParameterKind::StdDev { z[i].abs() } else { z[i] };
            let std_error = cov.as_ref().map(|c| c[(i, i)].sqrt());
            let z_value = std_error.map(|se| estimate / se);
            ParameterEstimate {
                name,
                kind,
                estimate,
                odds_ratio: matches!(kind, ParameterKind::Slope | ParameterKind::Mean).then(|| odds_ratio(estimate)),
                std_error,
                z_value,
                p_value: z_value.map(|zv| erfc(zv.abs() / std::f64::consts::SQRT_2)),
            }
        })
        .collect();

    let mut reported = est.clone();
    for s in reported.sigma.iter_mut() {
        *s = s.abs();
    }
    Ok(FitResult {
        model: spec.clone(),
        n_observations: data.n_obs(),
        n_groups: data.groups.len(),
        n_parameters: k,
        log_likelihood: ll,
        log_likelihood_start: ll_start,
        aic,
        bic,
        convergence: Convergence {
            converged: outcome.converged,
            iterations: outcome.iterations,
            gradient_max_abs: outcome.grad.iter().fold(0.0, |m, v| m.max(v.abs())),
            message: outcome.message,
        },
        std_errors_available: cov.is_some(),
        parameters,
        estimates: reported,
    })
}

// Inverse of the negative Hessian of the log-likelihood in the free
// natural-scale parameters, from central differences of the gradient.
fn covariance(layout: &Layout, evaluator: &Evaluator, data: &ModelData, z: &[f64]) -> Option<DMatrix<f64>> {
    let n = z.len();
    let mut h = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let step = HESSIAN_STEP.max(HESSIAN_STEP * z[i].abs());
        let grad_at = |delta: f64| -> Option<Vec<f64>> {
            let mut zz = z.to_vec();
            zz[i] += delta;
            let p = layout.params_from_z(&zz);
            evaluator.eval(data, &p).ok().map(|(_, g)| layout.grad_z(&g))
        };
        let up = grad_at(step)?;
        let down = grad_at(-step)?;
        for j in 0..n {
            h[(j, i)] = (up[j] - down[j]) / (2.0 * step);
        }
    }
    let neg = -(&h + h.transpose()) * 0.5;
    if neg.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let inv = neg.cholesky()?.inverse();
    inv.diagonal().iter().all(|d| *d > 0.0 && d.is_finite()).then_some(inv)
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

fn stars(p: Option<f64>) -> &'static str {
    match p {
        Some(p) if p < 0.001 => "***",
        Some(p) if p < 0.01 => "**",
        Some(p) if p < 0.05 => "*",
        Some(p) if p < 0.1 => ".",
        _ => "",
    }
}

impl FitResult {
    pub fn parameter(&self, name: &str) -> Option<&ParameterEstimate> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Coefficient table as aligned plain text.
    pub fn report_text(&self) -> String {
        let mut s = String::new();
        let kind = if self.model.random.is_empty() { "Ordered logit" } else { "Random-parameter ordered logit" };
        let _ = writeln!(s, "{kind}: {}", self.model.response);
        let _ = writeln!(
            s,
            "No. of obs = {}   Groups = {}   Draws = {}   Seed = {}",
            self.n_observations, self.n_groups, self.model.draws, self.model.seed
        );
        let _ = writeln!(
            s,
            "Log likelihood = {:.3}   AIC = {:.3}   BIC = {:.3}",
            self.log_likelihood, self.aic, self.bic
        );
        let _ = writeln!(
            s,
            "Converged: {} ({} iterations)",
            if self.convergence.converged { "yes" } else { "no" },
            self.convergence.iterations
        );
        let _ = writeln!(s);
        let width = self.parameters.iter().map(|p| p.name.len()).max().unwrap_or(0).max(12);
        let _ = writeln!(
            s,
            "{:<width$} {:>10} {:>10} {:>10} {:>9} {:>9}",
            "Coefficient", "Estimate", "Odds ratio", "Std. error", "z-value", "Pr(>|z|)"
        );
        for p in &self.parameters {
            let _ = writeln!(
                s,
                "{:<width$} {:>10.3} {:>10} {:>10} {:>9} {:>9} {}",
                p.name,
                p.estimate,
                fmt_opt(p.odds_ratio, 3),
                fmt_opt(p.std_error, 3),
                fmt_opt(p.z_value, 2),
                fmt_opt(p.p_value, 4),
                stars(p.p_value)
            );
        }
        s.truncate(s.trim_end().len());
        s.push('\n');
        s
    }
}
