//! l1-penalized local fit on the coordinator shard, used as the initial estimate.
//!
//! Minimizes `L_1(beta) + lambda * ||beta||_1` with no intercept. Gaussian uses
//! cyclic coordinate descent with soft-thresholding; the other families use
//! proximal gradient (ISTA) with a backtracking Lipschitz estimate.

use log::warn;
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{DvsError, Result};
use crate::glm::{gradient_from_predictor, linear_predictor, loss_from_predictor, CoefVector, DataShard, Family};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lambda {
    Fixed(f64),
    /// `c * sqrt(ln p / n)`
    Auto { c: f64 },
}

impl Default for Lambda {
    fn default() -> Self {
        Lambda::Auto { c: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoConfig {
    pub lambda: Lambda,
    pub max_iter: usize,
    pub tol: f64,
    pub standardize: bool,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            lambda: Lambda::default(),
            max_iter: 1000,
            tol: 1e-7,
            standardize: false,
        }
    }
}

impl LassoConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda: Lambda::Fixed(lambda),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.lambda {
            Lambda::Fixed(l) if !(l >= 0.0 && l.is_finite()) => {
                return Err(DvsError::Config(format!("lambda must be a finite value >= 0, got {l}")))
            }
            Lambda::Auto { c } if !(c >= 0.0 && c.is_finite()) => {
                return Err(DvsError::Config(format!("auto-lambda constant must be >= 0, got {c}")))
            }
            _ => {}
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(DvsError::Config(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }

    pub fn resolve_lambda(&self, shard: &DataShard) -> f64 {
        match self.lambda {
            Lambda::Fixed(l) => l,
            Lambda::Auto { c } => auto_lambda(shard, c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub beta: CoefVector,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Penalized objective after each iteration (standardized scale when standardizing).
    pub objective_trace: Vec<f64>,
}

#[inline]
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// `c * sqrt(ln p / n)`, or `c * sqrt(1 / n)` when `p < 2`.
pub fn auto_lambda(shard: &DataShard, c: f64) -> f64 {
    lambda_rate(shard.n() as f64, shard.p() as f64, c)
}

pub fn lambda_rate(n: f64, p: f64, c: f64) -> f64 {
    if p < 2.0 {
        warn!("auto lambda with p < 2; using c * sqrt(1/n)");
        return c * (1.0 / n).sqrt();
    }
    c * (p.ln() / n).sqrt()
}

/// `L_1(beta) + lambda * ||beta||_1` on the raw (unstandardized) shard.
pub fn lasso_objective(shard: &DataShard, family: Family, beta: &CoefVector, lambda: f64) -> Result<f64> {
    let loss = crate::glm::local_loss(shard, beta, family)?;
    Ok(loss + lambda * beta.values().iter().map(|v| v.abs()).sum::<f64>())
}

pub fn lasso_fit(shard: &DataShard, family: Family, cfg: &LassoConfig) -> Result<LassoFit> {
    cfg.validate()?;
    let lambda = cfg.resolve_lambda(shard);
    let (work, scales) = if cfg.standardize {
        let (x, s) = scale_columns(shard);
        (DataShard::new(shard.machine_id, x, shard.y().to_owned())?, Some(s))
    } else {
        (shard.clone(), None)
    };

    let mut fit = match family {
        Family::Gaussian => coordinate_descent(&work, lambda, cfg),
        _ => proximal_gradient(&work, family, lambda, cfg)?,
    };
    if let Some(scales) = scales {
        let beta = fit.beta.values() / &scales;
        fit.beta = CoefVector::from(beta);
    }
    if !fit.converged {
        warn!(
            "lasso did not converge within {} iterations (lambda = {lambda})",
            cfg.max_iter
        );
    }
    Ok(fit)
}

/// Divides each column by its root mean square; all-zero columns are left alone.
fn scale_columns(shard: &DataShard) -> (Array2<f64>, Array1<f64>) {
    let n = shard.n() as f64;
    let scales = shard
        .x()
        .map_axis(Axis(0), |col| {
            let rms = (col.dot(&col) / n).sqrt();
            if rms > 0.0 {
                rms
            } else {
                1.0
            }
        });
    let x = &shard.x() / &scales;
    (x, scales)
}

fn coordinate_descent(shard: &DataShard, lambda: f64, cfg: &LassoConfig) -> LassoFit {
    let (n, p) = (shard.n(), shard.p());
    let nf = n as f64;
    let cols = shard.x().t().as_standard_layout().into_owned();
    let col_sq: Vec<f64> = cols.outer_iter().map(|c| c.dot(&c) / nf).collect();
    let y = shard.y();
    let yy = y.dot(&y);

    let mut beta = Array1::<f64>::zeros(p);
    let mut resid = y.to_owned();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        let mut max_change = 0.0f64;
        for j in 0..p {
            if col_sq[j] == 0.0 {
                continue;
            }
            let col = cols.row(j);
            let z = col.dot(&resid) / nf + col_sq[j] * beta[j];
            let next = soft_threshold(z, lambda) / col_sq[j];
            let delta = next - beta[j];
            if delta != 0.0 {
                resid.scaled_add(-delta, &col);
                beta[j] = next;
                max_change = max_change.max(delta.abs());
            }
        }
        // L_1 = (||y - X beta||^2 - ||y||^2) / (2n), recomputed from scratch
        let fresh = &y - &linear_predictor(shard.x(), beta.view());
        let obj = (fresh.dot(&fresh) - yy) / (2.0 * nf) + lambda * beta.iter().map(|v| v.abs()).sum::<f64>();
        trace.push(obj);
        if max_change <= cfg.tol {
            converged = true;
            break;
        }
    }
    LassoFit {
        beta: CoefVector::from(beta),
        lambda,
        iterations,
        converged,
        objective_trace: trace,
    }
}

fn proximal_gradient(shard: &DataShard, family: Family, lambda: f64, cfg: &LassoConfig) -> Result<LassoFit> {
    const MAX_LIPSCHITZ: f64 = 1e30;
    let p = shard.p();
    let l1 = |b: &Array1<f64>| b.iter().map(|v| v.abs()).sum::<f64>();

    let mut beta = Array1::<f64>::zeros(p);
    let mut theta = linear_predictor(shard.x(), beta.view());
    let mut loss = loss_from_predictor(&theta, shard.y(), family)?;
    let mut lipschitz = 1.0f64;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    'outer: while iterations < cfg.max_iter {
        iterations += 1;
        let grad = gradient_from_predictor(shard, &theta, family)?;
        loop {
            let cand = Array1::from_shape_fn(p, |j| {
                soft_threshold(beta[j] - grad[j] / lipschitz, lambda / lipschitz)
            });
            let step = &cand - &beta;
            let cand_theta = linear_predictor(shard.x(), cand.view());
            let accepted = match loss_from_predictor(&cand_theta, shard.y(), family) {
                Ok(cand_loss) => {
                    let model = loss + grad.dot(&step) + 0.5 * lipschitz * step.dot(&step);
                    (cand_loss <= model + 1e-14 * loss.abs().max(1.0)).then_some(cand_loss)
                }
                Err(DvsError::Overflow { .. }) => None,
                Err(e) => return Err(e),
            };
            match accepted {
                Some(cand_loss) => {
                    let max_change = step.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    beta = cand;
                    theta = cand_theta;
                    loss = cand_loss;
                    trace.push(loss + lambda * l1(&beta));
                    if max_change <= cfg.tol {
                        converged = true;
                        break 'outer;
                    }
                    lipschitz *= 0.9;
                    break;
                }
                None => {
                    lipschitz *= 2.0;
                    if lipschitz > MAX_LIPSCHITZ {
                        warn!("lasso backtracking exhausted; returning current iterate");
                        break 'outer;
                    }
                }
            }
        }
    }
    Ok(LassoFit {
        beta: CoefVector::from(beta),
        lambda,
        iterations,
        converged,
        objective_trace: trace,
    })
}
