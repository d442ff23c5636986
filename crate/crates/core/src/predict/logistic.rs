//! L2-penalised logistic regression on standardised features, fitted by
//! damped Newton with a gradient-descent fallback.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::proto::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            l2: 1e-4,
            max_iter: 500,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// Weights on standardised features; 0 for constant training columns.
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Training-row means and population standard deviations.
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted iteration, starting from the initial point.
    pub loss_history: Vec<f64>,
}

impl LogisticModel {
    pub fn standardize(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.means)
            .zip(&self.sds)
            .map(|((v, m), s)| if *s > 0.0 { (v - m) / s } else { 0.0 })
            .collect()
    }

    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        let z: f64 = self.standardize(row).iter().zip(&self.weights).map(|(x, w)| x * w).sum::<f64>() + self.intercept;
        sigmoid(z)
    }
}

/// Numerically stable ln(1 + e^z).
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean negative log-likelihood plus `l2/2·‖w‖²` (intercept unpenalised)
/// and its gradient. `params` is the weights followed by the intercept.
pub fn logistic_objective(x: &[Vec<f64>], y: &[bool], l2: f64, params: &[f64]) -> (f64, Vec<f64>) {
    let d = params.len() - 1;
    let (w, b) = (&params[..d], params[d]);
    let n = x.len().max(1) as f64;
    let mut f = 0.0;
    let mut g = vec![0.0; d + 1];
    for (row, &yi) in x.iter().zip(y) {
        let z: f64 = row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b;
        // -[y log σ(z) + (1-y) log(1-σ(z))] = softplus(z) - y z
        f += softplus(z) - if yi { z } else { 0.0 };
        let r = sigmoid(z) - if yi { 1.0 } else { 0.0 };
        for (gj, xj) in g.iter_mut().zip(row) {
            *gj += r * xj;
        }
        g[d] += r;
    }
    f /= n;
    g.iter_mut().for_each(|v| *v /= n);
    f += 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    for (gj, wj) in g.iter_mut().zip(w) {
        *gj += l2 * wj;
    }
    (f, g)
}

fn hessian(x: &[Vec<f64>], l2: f64, params: &[f64]) -> Vec<f64> {
    let d = params.len() - 1;
    let m = d + 1;
    let n = x.len().max(1) as f64;
    let mut h = vec![0.0; m * m];
    let mut xa = vec![0.0; m];
    for row in x {
        let z: f64 = row.iter().zip(&params[..d]).map(|(a, c)| a * c).sum::<f64>() + params[d];
        let p = sigmoid(z);
        let s = p * (1.0 - p);
        if s == 0.0 {
            continue;
        }
        xa[..d].copy_from_slice(row);
        xa[d] = 1.0;
        for i in 0..m {
            let si = s * xa[i];
            if si == 0.0 {
                continue;
            }
            let hrow = &mut h[i * m..i * m + i + 1];
            for (hij, xj) in hrow.iter_mut().zip(&xa[..=i]) {
                *hij += si * xj;
            }
        }
    }
    for i in 0..m {
        for j in 0..=i {
            h[i * m + j] /= n;
            h[j * m + i] = h[i * m + j];
        }
    }
    for i in 0..d {
        h[i * m + i] += l2;
    }
    // keeps the intercept row positive definite when every p is 0 or 1
    h[d * m + d] += 1e-12;
    h
}

/// Solves `a·x = b` for symmetric positive definite `a` (row-major m×m).
/// `None` if `a` is not numerically positive definite.
fn cholesky_solve(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let m = b.len();
    let mut l = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..=i {
            let mut s = a[i * m + j];
            for k in 0..j {
                s -= l[i * m + k] * l[j * m + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i * m + i] = s.sqrt();
            } else {
                l[i * m + j] = s / l[j * m + j];
            }
        }
    }
    let mut z = vec![0.0; m];
    for i in 0..m {
        let s = b[i] - (0..i).map(|k| l[i * m + k] * z[k]).sum::<f64>();
        z[i] = s / l[i * m + i];
    }
    let mut x = vec![0.0; m];
    for i in (0..m).rev() {
        let s = z[i] - (i + 1..m).map(|k| l[k * m + i] * x[k]).sum::<f64>();
        x[i] = s / l[i * m + i];
    }
    Some(x)
}

const MAX_HALVINGS: usize = 40;

/// Standardises with training statistics and minimises the penalised mean
/// NLL. Each accepted iteration is non-increasing in the objective.
pub fn fit_logistic(x: &[Vec<f64>], y: &[bool], cfg: &LogisticConfig) -> Result<LogisticModel> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!("{} rows vs {} labels", x.len(), y.len())));
    }
    let pos = y.iter().filter(|&&v| v).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::SingleClass(format!("{pos} positives among {} training rows", y.len())));
    }
    let d = x.first().map_or(0, Vec::len);
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidInput("ragged feature matrix".into()));
    }
    let n = x.len() as f64;
    let mut means = vec![0.0; d];
    for r in x {
        for (m, v) in means.iter_mut().zip(r) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut sds = vec![0.0; d];
    for r in x {
        for ((s, v), m) in sds.iter_mut().zip(r).zip(&means) {
            *s += (v - m) * (v - m);
        }
    }
    sds.iter_mut().for_each(|s| *s = (*s / n).sqrt());
    // constant columns become zero and keep weight zero
    let xs: Vec<Vec<f64>> = x
        .iter()
        .map(|r| {
            r.iter()
                .zip(&means)
                .zip(&sds)
                .map(|((v, m), s)| if *s > 1e-12 { (v - m) / s } else { 0.0 })
                .collect()
        })
        .collect();
    sds.iter_mut().for_each(|s| {
        if *s <= 1e-12 {
            *s = 0.0
        }
    });

    let prev = pos as f64 / n;
    let mut theta = vec![0.0; d + 1];
    theta[d] = (prev / (1.0 - prev)).ln();
    let (mut f, mut g) = logistic_objective(&xs, y, cfg.l2, &theta);
    let mut history = vec![f];
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..cfg.max_iter {
        iterations += 1;
        let newton = cholesky_solve(&hessian(&xs, cfg.l2, &theta), &g);
        let mut accepted: Option<(Vec<f64>, f64, Vec<f64>)> = None;
        let directions: Vec<Vec<f64>> = match newton {
            Some(dir) => vec![dir, g.clone()],
            None => vec![g.clone()],
        };
        for dir in directions {
            let mut t = 1.0;
            for _ in 0..MAX_HALVINGS {
                let cand: Vec<f64> = theta.iter().zip(&dir).map(|(a, b)| a - t * b).collect();
                let (cf, cg) = logistic_objective(&xs, y, cfg.l2, &cand);
                if cf <= f {
                    accepted = Some((cand, cf, cg));
                    break;
                }
                t *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((cand, cf, cg)) = accepted else {
            // no descent step left: at the optimum to machine precision
            converged = true;
            break;
        };
        let change = cand.iter().zip(&theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        theta = cand;
        f = cf;
        g = cg;
        history.push(f);
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("logistic fit stopped at max_iter={} without converging", cfg.max_iter);
    }
    Ok(LogisticModel {
        weights: theta[..d].to_vec(),
        intercept: theta[d],
        means,
        sds,
        iterations,
        converged,
        loss_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intercept_only_matches_prevalence() {
        let x: Vec<Vec<f64>> = vec![vec![]; 10];
        let y: Vec<bool> = (0..10).map(|i| i < 3).collect();
        let m = fit_logistic(&x, &y, &LogisticConfig::default()).unwrap();
        assert!((m.predict_proba(&[]) - 0.3).abs() < 1e-9);
    }

    #[test]
    fn separable_fit_bounded() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<bool> = (0..20).map(|i| i >= 10).collect();
        let m = fit_logistic(&x, &y, &LogisticConfig::default()).unwrap();
        assert!(m.weights[0].is_finite() && m.weights[0] > 0.0);
        assert!(m.weights[0] < 1e4);
        assert!(m.predict_proba(&[15.0]) > m.predict_proba(&[5.0]));
    }

    #[test]
    fn single_class_rejected() {
        let x = vec![vec![1.0], vec![2.0]];
        assert!(matches!(
            fit_logistic(&x, &[true, true], &LogisticConfig::default()),
            Err(Error::SingleClass(_))
        ));
    }

    #[test]
    fn constant_column_weight_zero() {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![3.0, (i % 4) as f64]).collect();
        let y: Vec<bool> = (0..12).map(|i| i % 4 >= 2).collect();
        let m = fit_logistic(&x, &y, &LogisticConfig::default()).unwrap();
        assert_eq!(m.weights[0], 0.0);
        assert_eq!(m.sds[0], 0.0);
    }

    #[test]
    fn loss_non_increasing() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 1.3).cos()]).collect();
        let y: Vec<bool> = (0..40).map(|i| (i as f64 * 0.37).sin() + 0.3 * (i as f64 * 2.1).sin() > 0.0).collect();
        let m = fit_logistic(&x, &y, &LogisticConfig::default()).unwrap();
        assert!(m.converged);
        assert!(m.loss_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn cholesky_small_system() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let x = cholesky_solve(&a, &[2.0, 1.0]).unwrap();
        assert!((4.0 * x[0] + 2.0 * x[1] - 2.0).abs() < 1e-12);
        assert!((2.0 * x[0] + 3.0 * x[1] - 1.0).abs() < 1e-12);
        assert!(cholesky_solve(&[0.0], &[1.0]).is_none());
    }
}
