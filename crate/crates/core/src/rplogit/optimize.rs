use nalgebra::{DMatrix, DVector};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the largest gradient component falls below this.
    pub gtol: f64,
    /// Stop when the relative objective change falls below this.
    pub ftol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            gtol: 1e-5,
            ftol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub message: String,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimises `objective`, which returns the value and gradient at a point.
///
/// Quasi-Newton with an inverse-Hessian BFGS update and a backtracking
/// line search on the sufficient-decrease condition. Updates with
/// non-positive curvature are skipped.
pub fn minimize_bfgs<F>(mut objective: F, x0: Vec<f64>, opts: BfgsOptions) -> Result<BfgsOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = DVector::from_vec(x0);
    let (mut f, g0) = objective(x.as_slice())?;
    let mut g = DVector::from_vec(g0);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut first_update = true;
    let mut iterations = 0;

    let done = |x: DVector<f64>, f: f64, g: DVector<f64>, it: usize, ok: bool, msg: &str| BfgsOutcome {
        x: x.as_slice().to_vec(),
        f,
        grad: g.as_slice().to_vec(),
        iterations: it,
        converged: ok,
        message: msg.to_string(),
    };

    if !f.is_finite() {
        return Ok(done(x, f, g, 0, false, "objective not finite at start"));
    }
    if max_abs(&g) < opts.gtol {
        return Ok(done(x, f, g, 0, true, "gradient tolerance met"));
    }

    while iterations < opts.max_iter {
        iterations += 1;
        let mut p = -(&h * &g);
        let mut slope = g.dot(&p);
        if !(slope < 0.0) {
            h = DMatrix::identity(n, n);
            first_update = true;
            p = -g.clone();
            slope = g.dot(&p);
        }
        // keep the first trial step modest before curvature is known
        let mut alpha = if first_update { (1.0 / max_abs(&p)).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial = &x + alpha * &p;
            let (ft, gt) = objective(trial.as_slice())?;
            if ft.is_finite() && ft <= f + ARMIJO_C1 * alpha * slope {
                accepted = Some((trial, ft, DVector::from_vec(gt)));
                break;
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            let ok = max_abs(&g) < opts.gtol * 10.0;
            return Ok(done(x, f, g, iterations, ok, "line search failed"));
        };
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if first_update {
                h *= sy / y.dot(&y);
                first_update = false;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H+ = H - rho (s hy' + hy s') + (rho^2 y'Hy + rho) s s'
            h -= rho * (&s * hy.transpose() + &hy * s.transpose());
            h += (rho * rho * yhy + rho) * (&s * s.transpose());
        }
        let rel = (f_new - f).abs() / f.abs().max(1.0);
        x = x_new;
        f = f_new;
        g = g_new;
        if max_abs(&g) < opts.gtol {
            return Ok(done(x, f, g, iterations, true, "gradient tolerance met"));
        }
        if rel < opts.ftol {
            return Ok(done(x, f, g, iterations, true, "relative change tolerance met"));
        }
    }
    Ok(done(x, f, g, iterations, false, "iteration limit reached"))
}
