//! EBIC scan over the sparsity budget `k`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diht::{diht_run, DihtConfig, ScreeningRun, SurrogateState};
use crate::error::{DvsError, Result};
use crate::glm::Family;

/// Upper end of the default scan, `K = min(p, DEFAULT_K_MAX)`.
pub const DEFAULT_K_MAX: usize = 50;

/// `loss + k (ln N + 0.5 ln p) / N`.
pub fn ebic(loss: f64, k: usize, n_total: usize, p: usize) -> Result<f64> {
    if n_total == 0 || p == 0 {
        return Err(DvsError::Config(format!(
            "EBIC needs N >= 1 and p >= 1, got N={n_total}, p={p}"
        )));
    }
    let n = n_total as f64;
    Ok(loss + k as f64 * (n.ln() + 0.5 * (p as f64).ln()) / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EbicRecord {
    pub k: usize,
    pub surrogate_loss: f64,
    pub ebic: f64,
    /// 0-based.
    pub support: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EbicTrace {
    pub records: Vec<EbicRecord>,
    pub chosen_k: usize,
}

impl EbicTrace {
    /// Minimum EBIC over converged runs, ties to the smallest `k`.
    ///
    /// A run that hit `max_iter` has no fitted value to score (its loss is
    /// typically still falling because the surrogate is unbounded on that
    /// support), so it only competes when no run converged. Panics on an
    /// empty record list.
    fn from_records(records: Vec<EbicRecord>) -> Self {
        let any_converged = records.iter().any(|r| r.converged);
        let mut best: Option<&EbicRecord> = None;
        for r in records.iter().filter(|r| r.converged || !any_converged) {
            if best.is_none_or(|b| r.ebic < b.ebic) {
                best = Some(r);
            }
        }
        let chosen_k = best.expect("at least one record").k;
        Self { records, chosen_k }
    }
}

/// Runs DIHT for every `k` in `1..=k_max` from the shared `beta_tilde` and picks `k` by EBIC.
///
/// All runs reuse the cached aggregate, so the scan adds no communication.
/// `cfg.k` is ignored; the other fields apply to every run.
pub fn select_k(
    state: &SurrogateState,
    family: Family,
    k_max: usize,
    cfg: &DihtConfig,
) -> Result<(ScreeningRun, EbicTrace)> {
    let p = state.p();
    if k_max == 0 || k_max > p {
        return Err(DvsError::Config(format!("K={k_max} must lie in [1, {p}]")));
    }
    let beta0 = state.beta_tilde();
    let mut runs: Vec<ScreeningRun> = (1..=k_max)
        .into_par_iter()
        .map(|k| {
            let cfg = DihtConfig { k, ..cfg.clone() };
            diht_run(state, &cfg, family, beta0).map_err(|e| DvsError::NumericalFailure(format!("EBIC scan aborted at k={k}: {e}")))
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::with_capacity(k_max);
    for run in &runs {
        records.push(EbicRecord {
            k: run.k,
            surrogate_loss: run.surrogate_loss,
            ebic: ebic(run.surrogate_loss, run.k, state.n_total(), p)?,
            support: run.support.clone(),
            iterations: run.iterations,
            converged: run.converged,
        });
    }
    let trace = EbicTrace::from_records(records);
    let mut chosen = runs.swap_remove(trace.chosen_k - 1);
    chosen.ebic_trace = Some(trace.clone());
    Ok((chosen, trace))
}

pub fn default_k_max(p: usize) -> usize {
    p.min(DEFAULT_K_MAX)
}
