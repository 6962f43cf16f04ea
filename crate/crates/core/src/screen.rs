//! End-to-end screening: Lasso on the coordinator, one aggregation round, then DIHT.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::diht::{diht_run, DihtConfig, ScreeningRun, SurrogateState};
use crate::error::Result;
use crate::glm::{CoefVector, Family};
use crate::lasso::{lasso_fit, LassoConfig, LassoFit};
use crate::model_select::{default_k_max, select_k};
use crate::shard_net::ClusterSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sparsity {
    Fixed(usize),
    /// EBIC scan over `1..=k_max`; `None` means `min(p, 50)`.
    Scan { k_max: Option<usize> },
}

impl Default for Sparsity {
    fn default() -> Self {
        Sparsity::Scan { k_max: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ScreenConfig {
    pub lasso: LassoConfig,
    pub sparsity: Sparsity,
    /// `k` is taken from `sparsity`.
    pub diht: DihtConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub lasso_ms: f64,
    pub aggregate_ms: f64,
    pub diht_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenResult {
    pub family: Family,
    pub lasso: LassoFit,
    pub run: ScreeningRun,
    pub timings: PhaseTimings,
}

impl ScreenResult {
    /// 0-based selected covariates.
    pub fn support(&self) -> &[usize] {
        &self.run.support
    }
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

pub fn screen(cluster: &ClusterSpec, family: Family, cfg: &ScreenConfig) -> Result<ScreenResult> {
    cluster.validate_for(family)?;
    cfg.lasso.validate()?;
    let p = cluster.p();

    let t0 = Instant::now();
    let lasso = lasso_fit(cluster.coordinator(), family, &cfg.lasso)?;
    let lasso_ms = elapsed_ms(t0);

    let t1 = Instant::now();
    let state = SurrogateState::from_cluster(cluster, lasso.beta.clone(), family)?;
    let aggregate_ms = elapsed_ms(t1);

    let t2 = Instant::now();
    let run = match cfg.sparsity {
        Sparsity::Fixed(k) => {
            let dcfg = DihtConfig { k, ..cfg.diht.clone() };
            diht_run(&state, &dcfg, family, state.beta_tilde())?
        }
        Sparsity::Scan { k_max } => {
            let k_max = k_max.unwrap_or_else(|| default_k_max(p));
            select_k(&state, family, k_max, &cfg.diht)?.0
        }
    };
    let diht_ms = elapsed_ms(t2);

    Ok(ScreenResult {
        family,
        lasso,
        run,
        timings: PhaseTimings { lasso_ms, aggregate_ms, diht_ms },
    })
}

/// Runs DIHT from a caller-supplied initial estimate instead of the Lasso.
pub fn screen_from(
    cluster: &ClusterSpec,
    family: Family,
    beta_tilde: CoefVector,
    sparsity: Sparsity,
    diht: &DihtConfig,
) -> Result<ScreeningRun> {
    cluster.validate_for(family)?;
    let state = SurrogateState::from_cluster(cluster, beta_tilde, family)?;
    match sparsity {
        Sparsity::Fixed(k) => diht_run(&state, &DihtConfig { k, ..diht.clone() }, family, state.beta_tilde()),
        Sparsity::Scan { k_max } => {
            let k_max = k_max.unwrap_or_else(|| default_k_max(cluster.p()));
            Ok(select_k(&state, family, k_max, diht)?.0)
        }
    }
}
