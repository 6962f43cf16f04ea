//! Surrogate likelihood and distributed iterative hard-thresholding.
//!
//! After the single aggregation round the coordinator holds
//!
//! ```text
//! c       = grad L_1(beta_tilde) - grad L(beta_tilde)
//! ell(b)  = L_1(b) - <b, c>
//! ```
//!
//! and minimizes `ell` over `||b||_0 <= k` by projected gradient steps
//! `b <- H_k(b - grad ell(b) / vartheta)`, doubling `vartheta` whenever a
//! step fails to decrease `ell`. No further communication is needed.

use std::io::Write;
use std::sync::Arc;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, DvsError, Result};
use crate::glm::{
    curvature_bound, gradient_from_predictor, linear_predictor, loss_from_predictor, CoefVector,
    DataShard, Family,
};
use crate::linalg::{gram_top_eigenvalue, l2_norm};
use crate::model_select::EbicTrace;
use crate::shard_net::{broadcast_and_aggregate, ClusterSpec, RoundStats};

/// Slack on the descent test, absorbing floating-point noise.
pub const DESCENT_TOL: f64 = 1e-12;
/// `vartheta` may grow to at most `2^60 * vartheta0`.
pub const MAX_DOUBLINGS: i32 = 60;

/// Everything the coordinator needs to evaluate the surrogate loss.
#[derive(Debug, Clone)]
pub struct SurrogateState {
    shard0: Arc<DataShard>,
    correction: Array1<f64>,
    beta_tilde: CoefVector,
    global_gradient: Array1<f64>,
    n_total: usize,
    machines: usize,
    communication: RoundStats,
}

impl SurrogateState {
    /// Runs the one broadcast/aggregate round at `beta_tilde` and caches the result.
    pub fn from_cluster(cluster: &ClusterSpec, beta_tilde: CoefVector, family: Family) -> Result<Self> {
        let agg = broadcast_and_aggregate(cluster, &beta_tilde, family)?;
        let correction = &agg.coordinator_gradient - &agg.gradient;
        if correction.iter().any(|v| !v.is_finite()) {
            return Err(DvsError::NumericalFailure("non-finite gradient correction".into()));
        }
        Ok(Self {
            shard0: Arc::clone(cluster.coordinator()),
            correction,
            beta_tilde,
            global_gradient: agg.gradient,
            n_total: cluster.total_observations(),
            machines: cluster.machines(),
            communication: agg.stats,
        })
    }

    /// Assembles a state from precomputed gradients, without any communication.
    pub fn from_gradients(
        shard0: Arc<DataShard>,
        beta_tilde: CoefVector,
        coordinator_gradient: &Array1<f64>,
        global_gradient: Array1<f64>,
        n_total: usize,
        machines: usize,
    ) -> Result<Self> {
        check_len("coordinator gradient length", shard0.p(), coordinator_gradient.len())?;
        check_len("global gradient length", shard0.p(), global_gradient.len())?;
        check_len("beta_tilde length", shard0.p(), beta_tilde.len())?;
        Ok(Self {
            correction: coordinator_gradient - &global_gradient,
            shard0,
            beta_tilde,
            global_gradient,
            n_total,
            machines,
            communication: RoundStats::default(),
        })
    }

    pub fn shard0(&self) -> &DataShard {
        &self.shard0
    }

    pub fn correction(&self) -> &Array1<f64> {
        &self.correction
    }

    pub fn beta_tilde(&self) -> &CoefVector {
        &self.beta_tilde
    }

    /// The aggregated `grad L(beta_tilde)`.
    pub fn global_gradient(&self) -> &Array1<f64> {
        &self.global_gradient
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn machines(&self) -> usize {
        self.machines
    }

    pub fn p(&self) -> usize {
        self.shard0.p()
    }

    pub fn communication(&self) -> RoundStats {
        self.communication
    }
}

/// `L_1(beta) - <beta, c>`.
pub fn surrogate_loss(state: &SurrogateState, beta: &CoefVector, family: Family) -> Result<f64> {
    check_len("coefficient length vs surrogate p", state.p(), beta.len())?;
    let theta = linear_predictor(state.shard0.x(), beta.view());
    let local = loss_from_predictor(&theta, state.shard0.y(), family)?;
    Ok(local - beta.values().dot(&state.correction))
}

/// `grad L_1(beta) - c`.
pub fn surrogate_gradient(state: &SurrogateState, beta: &CoefVector, family: Family) -> Result<Array1<f64>> {
    check_len("coefficient length vs surrogate p", state.p(), beta.len())?;
    let theta = linear_predictor(state.shard0.x(), beta.view());
    let grad = gradient_from_predictor(&state.shard0, &theta, family)?;
    Ok(grad - &state.correction)
}

/// Keeps the `k` largest-magnitude entries of `gamma` (ties to the smaller index).
pub fn hard_threshold(gamma: ArrayView1<'_, f64>, k: usize) -> Result<CoefVector> {
    let p = gamma.len();
    if k == 0 || k > p {
        return Err(DvsError::Config(format!("sparsity k={k} must lie in [1, {p}]")));
    }
    if gamma.iter().any(|v| !v.is_finite()) {
        return Err(DvsError::InvalidArgument("hard_threshold input is not finite".into()));
    }
    let mut out = Array1::zeros(p);
    if k == p {
        out.assign(&gamma);
        return Ok(CoefVector::from(out));
    }
    let mut order: Vec<usize> = (0..p).collect();
    let by_magnitude = |a: &usize, b: &usize| {
        gamma[*b].abs().total_cmp(&gamma[*a].abs()).then(a.cmp(b))
    };
    order.select_nth_unstable_by(k - 1, by_magnitude);
    for &j in &order[..k] {
        out[j] = gamma[j];
    }
    Ok(CoefVector::from(out))
}

/// One projected step `H_k(beta_t - grad ell(beta_t) / vartheta)`.
pub fn diht_step(
    state: &SurrogateState,
    beta_t: &CoefVector,
    vartheta: f64,
    k: usize,
    family: Family,
) -> Result<CoefVector> {
    let grad = surrogate_gradient(state, beta_t, family)?;
    step_from_gradient(beta_t, &grad, vartheta, k)
}

fn step_from_gradient(beta_t: &CoefVector, grad: &Array1<f64>, vartheta: f64, k: usize) -> Result<CoefVector> {
    if !(vartheta > 0.0 && vartheta.is_finite()) {
        return Err(DvsError::InvalidArgument(format!("vartheta must be positive, got {vartheta}")));
    }
    let gamma = beta_t.values() - &(grad / vartheta);
    hard_threshold(gamma.view(), k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DihtConfig {
    pub k: usize,
    pub vartheta0: f64,
    pub epsilon: f64,
    pub max_iter: usize,
}

impl Default for DihtConfig {
    fn default() -> Self {
        Self {
            k: 1,
            vartheta0: 1.0,
            epsilon: 1e-6,
            max_iter: 500,
        }
    }
}

impl DihtConfig {
    pub fn with_k(k: usize) -> Self {
        Self { k, ..Self::default() }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.k == 0 || self.k > p {
            return Err(DvsError::Config(format!("sparsity k={} must lie in [1, {p}]", self.k)));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(DvsError::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.vartheta0 > 0.0 && self.vartheta0.is_finite()) {
            return Err(DvsError::Config(format!("vartheta0 must be positive, got {}", self.vartheta0)));
        }
        Ok(())
    }
}

/// Static step scale `rho_1 * mu / n` with `rho_1` the top eigenvalue of `X_1'X_1`.
///
/// For Poisson, `mu` is the largest observed `b''` at `beta`.
pub fn static_step_bound(shard: &DataShard, family: Family, beta: &CoefVector) -> Result<f64> {
    let rho = gram_top_eigenvalue(shard.x(), 200, 1e-9);
    let mu = curvature_bound(shard, beta, family)?;
    Ok(rho * mu / shard.n() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub surrogate_loss: f64,
    pub vartheta: f64,
    /// 0-based indices of the nonzero coefficients.
    pub support: Vec<usize>,
    pub step_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoublingEvent {
    pub t: usize,
    pub from: f64,
    pub to: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    /// Record `t = 0` is the (projected) starting point; later records are accepted iterates.
    pub records: Vec<IterationRecord>,
    pub doublings: Vec<DoublingEvent>,
}

impl IterationLog {
    /// One JSON object per line, one line per iteration.
    pub fn write_json_lines<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Largest increase between consecutive accepted losses (negative when strictly decreasing).
    pub fn max_loss_increase(&self) -> f64 {
        self.records
            .windows(2)
            .map(|w| w[1].surrogate_loss - w[0].surrogate_loss)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningRun {
    pub k: usize,
    pub beta: CoefVector,
    /// 0-based selected covariates.
    pub support: Vec<usize>,
    pub surrogate_loss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub log: IterationLog,
    pub ebic_trace: Option<EbicTrace>,
    pub communication: RoundStats,
}

impl ScreeningRun {
    pub fn doubling_events(&self) -> usize {
        self.log.doublings.len()
    }
}

/// Iterates [`diht_step`] from `beta0` with the adaptive `vartheta` rule.
///
/// A `beta0` with more than `k` nonzeros is first projected onto the
/// feasible set. `max_iter == 0` returns `beta0` untouched, flagged as not
/// converged.
pub fn diht_run(
    state: &SurrogateState,
    cfg: &DihtConfig,
    family: Family,
    beta0: &CoefVector,
) -> Result<ScreeningRun> {
    cfg.validate(state.p())?;
    check_len("beta0 length", state.p(), beta0.len())?;

    let mut log = IterationLog::default();
    if cfg.max_iter == 0 {
        let loss = surrogate_loss(state, beta0, family)?;
        log.records.push(IterationRecord {
            t: 0,
            surrogate_loss: loss,
            vartheta: cfg.vartheta0,
            support: beta0.support(),
            step_norm: 0.0,
        });
        return Ok(ScreeningRun {
            k: cfg.k,
            support: beta0.support(),
            beta: beta0.clone(),
            surrogate_loss: loss,
            iterations: 0,
            converged: false,
            log,
            ebic_trace: None,
            communication: state.communication,
        });
    }

    let mut beta = if beta0.nnz() > cfg.k {
        hard_threshold(beta0.view(), cfg.k)?
    } else {
        beta0.clone()
    };
    let mut loss = surrogate_loss(state, &beta, family)?;
    let mut vartheta = cfg.vartheta0;
    let ceiling = cfg.vartheta0 * 2f64.powi(MAX_DOUBLINGS);
    log.records.push(IterationRecord {
        t: 0,
        surrogate_loss: loss,
        vartheta,
        support: beta.support(),
        step_norm: 0.0,
    });

    let mut converged = false;
    let mut iterations = 0;
    for t in 1..=cfg.max_iter {
        iterations = t;
        let grad = surrogate_gradient(state, &beta, family)?;
        let (cand, cand_loss) = loop {
            let cand = step_from_gradient(&beta, &grad, vartheta, cfg.k)?;
            match surrogate_loss(state, &cand, family) {
                Ok(l) if l <= loss + DESCENT_TOL => break (cand, l),
                // out-of-range predictors count as a failed descent
                Ok(_) | Err(DvsError::Overflow { .. }) | Err(DvsError::InvalidArgument(_)) => {}
                Err(e) => return Err(e),
            }
            let next = 2.0 * vartheta;
            if next > ceiling {
                return Err(DvsError::NumericalFailure(format!(
                    "vartheta exceeded 2^{MAX_DOUBLINGS} * vartheta0 at iteration {t} (k = {})",
                    cfg.k
                )));
            }
            log.doublings.push(DoublingEvent { t, from: vartheta, to: next });
            vartheta = next;
        };
        let step_norm = l2_norm(&(cand.values() - beta.values()));
        log.records.push(IterationRecord {
            t,
            surrogate_loss: cand_loss,
            vartheta,
            support: cand.support(),
            step_norm,
        });
        beta = cand;
        loss = cand_loss;
        if step_norm <= cfg.epsilon {
            converged = true;
            break;
        }
    }

    Ok(ScreeningRun {
        k: cfg.k,
        support: beta.support(),
        beta,
        surrogate_loss: loss,
        iterations,
        converged,
        log,
        ebic_trace: None,
        communication: state.communication,
    })
}
