//! Canonical-link exponential families and the per-shard likelihood primitives.
//!
//! Every loss here is the 1/n-normalized negative log-likelihood
//!
//! ```text
//! L_i(beta) = n^-1 * sum_j [ b(x_j' beta) - (x_j' beta) * y_j ]
//! ```
//!
//! where `b` is the cumulant of the family. Gradients and curvature follow
//! from `b'` (the mean) and `b''` (the variance).

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, DvsError, Result};

/// Largest natural parameter accepted for the Poisson family; `e^30` is about `1e13`.
pub const POISSON_THETA_LIMIT: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Bernoulli,
    Poisson,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Gaussian, Family::Bernoulli, Family::Poisson];

    fn check_theta(self, theta: f64) -> Result<()> {
        if !theta.is_finite() {
            return Err(DvsError::InvalidArgument(format!(
                "natural parameter must be finite, got {theta}"
            )));
        }
        if self == Family::Poisson && theta > POISSON_THETA_LIMIT {
            return Err(DvsError::Overflow {
                theta,
                limit: POISSON_THETA_LIMIT,
            });
        }
        Ok(())
    }

    /// Cumulant `b(theta)`.
    pub fn cumulant(self, theta: f64) -> Result<f64> {
        self.check_theta(theta)?;
        Ok(match self {
            Family::Gaussian => 0.5 * theta * theta,
            // ln(1 + e^t) without overflow for large |t|
            Family::Bernoulli => theta.max(0.0) + (-theta.abs()).exp().ln_1p(),
            Family::Poisson => theta.exp(),
        })
    }

    /// Mean function `b'(theta)`.
    pub fn mean(self, theta: f64) -> Result<f64> {
        self.check_theta(theta)?;
        Ok(match self {
            Family::Gaussian => theta,
            Family::Bernoulli => logistic(theta),
            Family::Poisson => theta.exp(),
        })
    }

    /// Variance function `b''(theta)`, always nonnegative.
    pub fn variance(self, theta: f64) -> Result<f64> {
        self.check_theta(theta)?;
        Ok(match self {
            Family::Gaussian => 1.0,
            Family::Bernoulli => {
                let mu = logistic(theta);
                mu * (1.0 - mu)
            }
            Family::Poisson => theta.exp(),
        })
    }

    /// Global bound on `b''`, when one exists. Poisson has none; see [`curvature_bound`].
    pub fn static_curvature_bound(self) -> Option<f64> {
        match self {
            Family::Gaussian => Some(1.0),
            Family::Bernoulli => Some(0.25),
            Family::Poisson => None,
        }
    }

    /// Checks a response value for this family.
    pub fn validate_response(self, y: f64) -> std::result::Result<(), String> {
        if !y.is_finite() {
            return Err(format!("response {y} is not finite"));
        }
        match self {
            Family::Gaussian => Ok(()),
            Family::Bernoulli if y == 0.0 || y == 1.0 => Ok(()),
            Family::Bernoulli => Err(format!("response {y} is not binary (0/1)")),
            Family::Poisson if y >= 0.0 && y.fract() == 0.0 => Ok(()),
            Family::Poisson => Err(format!("response {y} is not a nonnegative integer count")),
        }
    }

    pub fn tag(self) -> u64 {
        match self {
            Family::Gaussian => 0,
            Family::Bernoulli => 1,
            Family::Poisson => 2,
        }
    }

    pub fn from_tag(tag: u64) -> Option<Family> {
        match tag {
            0 => Some(Family::Gaussian),
            1 => Some(Family::Bernoulli),
            2 => Some(Family::Poisson),
            _ => None,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Gaussian => "gaussian",
            Family::Bernoulli => "bernoulli",
            Family::Poisson => "poisson",
        })
    }
}

impl FromStr for Family {
    type Err = DvsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "linear" | "normal" => Ok(Family::Gaussian),
            "bernoulli" | "logistic" | "binomial" => Ok(Family::Bernoulli),
            "poisson" => Ok(Family::Poisson),
            other => Err(DvsError::Config(format!("unknown family '{other}'"))),
        }
    }
}

#[inline]
fn logistic(theta: f64) -> f64 {
    if theta >= 0.0 {
        1.0 / (1.0 + (-theta).exp())
    } else {
        let e = theta.exp();
        e / (1.0 + e)
    }
}

/// One machine's block of observations. Rows are observations.
#[derive(Debug, Clone, PartialEq)]
pub struct DataShard {
    pub machine_id: usize,
    x: Array2<f64>,
    y: Array1<f64>,
}

impl DataShard {
    pub fn new(machine_id: usize, x: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        let (n, p) = x.dim();
        if n == 0 || p == 0 {
            return Err(DvsError::InvalidArgument(format!(
                "shard {machine_id} must have n >= 1 and p >= 1, got {n}x{p}"
            )));
        }
        check_len("shard response length", n, y.len())?;
        Ok(Self { machine_id, x, y })
    }

    /// Rejects responses that are invalid for `family`, reporting the 0-based row.
    pub fn validate_for(&self, family: Family) -> Result<()> {
        for (row, &v) in self.y.iter().enumerate() {
            family
                .validate_response(v)
                .map_err(|reason| DvsError::DataValidation { row, reason })?;
        }
        if let Some((idx, _)) = self.x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(DvsError::DataValidation {
                row: idx / self.p(),
                reason: "non-finite covariate".into(),
            });
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn y(&self) -> ArrayView1<'_, f64> {
        self.y.view()
    }

    pub fn into_parts(self) -> (usize, Array2<f64>, Array1<f64>) {
        (self.machine_id, self.x, self.y)
    }
}

/// Dense coefficient vector; the support is always derived from the values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoefVector(Array1<f64>);

impl CoefVector {
    pub fn zeros(p: usize) -> Self {
        Self(Array1::zeros(p))
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(Array1::from(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.0
    }

    /// Indices `j` (0-based) with `values[j] != 0`.
    pub fn support(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn support_set(&self) -> BTreeSet<usize> {
        self.support().into_iter().collect()
    }

    pub fn nnz(&self) -> usize {
        self.0.iter().filter(|v| **v != 0.0).count()
    }
}

impl From<Array1<f64>> for CoefVector {
    fn from(values: Array1<f64>) -> Self {
        Self(values)
    }
}

/// `X beta`, walking only the nonzero coefficients when beta is sparse.
pub(crate) fn linear_predictor(x: ArrayView2<'_, f64>, beta: ArrayView1<'_, f64>) -> Array1<f64> {
    let nnz = beta.iter().filter(|v| **v != 0.0).count();
    if nnz * 4 < beta.len() {
        let mut theta = Array1::zeros(x.nrows());
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                theta.scaled_add(b, &x.column(j));
            }
        }
        theta
    } else {
        x.dot(&beta)
    }
}

fn check_dims(shard: &DataShard, beta: ArrayView1<'_, f64>) -> Result<()> {
    check_len("coefficient length vs shard p", shard.p(), beta.len())
}

/// `n^-1 sum_j [b(theta_j) - theta_j y_j]` for `theta = X beta`.
pub fn local_loss(shard: &DataShard, beta: &CoefVector, family: Family) -> Result<f64> {
    check_dims(shard, beta.view())?;
    let theta = linear_predictor(shard.x(), beta.view());
    loss_from_predictor(&theta, shard.y(), family)
}

pub(crate) fn loss_from_predictor(
    theta: &Array1<f64>,
    y: ArrayView1<'_, f64>,
    family: Family,
) -> Result<f64> {
    let mut total = 0.0;
    for (&t, &yi) in theta.iter().zip(y.iter()) {
        total += family.cumulant(t)? - t * yi;
    }
    Ok(total / theta.len() as f64)
}

/// `n^-1 sum_j x_j (b'(theta_j) - y_j)`.
pub fn local_gradient(shard: &DataShard, beta: &CoefVector, family: Family) -> Result<Array1<f64>> {
    check_dims(shard, beta.view())?;
    let theta = linear_predictor(shard.x(), beta.view());
    gradient_from_predictor(shard, &theta, family)
}

pub(crate) fn gradient_from_predictor(
    shard: &DataShard,
    theta: &Array1<f64>,
    family: Family,
) -> Result<Array1<f64>> {
    let mut resid = Array1::zeros(theta.len());
    for ((r, &t), &yi) in resid.iter_mut().zip(theta.iter()).zip(shard.y().iter()) {
        *r = family.mean(t)? - yi;
    }
    let mut grad = shard.x().t().dot(&resid);
    grad /= shard.n() as f64;
    Ok(grad)
}

/// `v' H v` with `H = n^-1 sum_j x_j b''(x_j' beta) x_j'`.
pub fn local_hessian_quadform(
    shard: &DataShard,
    beta: &CoefVector,
    v: ArrayView1<'_, f64>,
    family: Family,
) -> Result<f64> {
    check_dims(shard, beta.view())?;
    check_len("direction length vs shard p", shard.p(), v.len())?;
    let theta = linear_predictor(shard.x(), beta.view());
    let xv = shard.x().dot(&v);
    let mut total = 0.0;
    for (&t, &s) in theta.iter().zip(xv.iter()) {
        total += family.variance(t)? * s * s;
    }
    Ok(total / shard.n() as f64)
}

/// Curvature bound `mu` used by the static step size.
///
/// Gaussian and Bernoulli use their global bounds. Poisson has no finite
/// global bound, so the maximum of `b''` over the observed predictors at
/// `beta` is used instead.
pub fn curvature_bound(shard: &DataShard, beta: &CoefVector, family: Family) -> Result<f64> {
    if let Some(mu) = family.static_curvature_bound() {
        return Ok(mu);
    }
    check_dims(shard, beta.view())?;
    let theta = linear_predictor(shard.x(), beta.view());
    theta.iter().try_fold(0.0f64, |acc, &t| Ok(acc.max(family.variance(t)?)))
}
