//! Coordinator/worker execution of the single gradient-aggregation round.
//!
//! Machine 0 is the coordinator and holds the shard the surrogate loss is
//! built on. It broadcasts the initial estimate to the `m - 1` workers, each
//! worker replies with its local gradient, and the coordinator averages the
//! replies in ascending `machine_id` order so the result does not depend on
//! arrival order or transport.

pub mod frame;
pub mod tcp;

use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use log::warn;
use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::diht::ScreeningRun;
use crate::error::{DvsError, Result};
use crate::glm::{local_gradient, CoefVector, DataShard, Family};

pub const TIMEOUT_ENV: &str = "DVS_WORKER_TIMEOUT_MS";
pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;

/// Worker timeout from `DVS_WORKER_TIMEOUT_MS`, falling back to 30 s.
pub fn worker_timeout_from_env() -> Duration {
    let ms = std::env::var(TIMEOUT_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<u64>().ok())
        .unwrap_or(DEFAULT_TIMEOUT_MS);
    Duration::from_millis(ms)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    #[default]
    InProcess,
    Tcp,
}

#[derive(Debug, Clone)]
pub struct ClusterSpec {
    shards: Vec<Arc<DataShard>>,
    pub transport: Transport,
    pub timeout: Duration,
}

impl ClusterSpec {
    /// Shard `i` must carry `machine_id == i`; all shards must share `p`.
    pub fn new(shards: Vec<DataShard>, transport: Transport) -> Result<Self> {
        if shards.is_empty() {
            return Err(DvsError::Config("a cluster needs at least one shard".into()));
        }
        let p = shards[0].p();
        for (i, s) in shards.iter().enumerate() {
            if s.machine_id != i {
                return Err(DvsError::Config(format!(
                    "shard at position {i} has machine_id {}",
                    s.machine_id
                )));
            }
            if s.p() != p {
                return Err(DvsError::Shape {
                    context: "shard covariate count",
                    expected: p,
                    found: s.p(),
                });
            }
        }
        Ok(Self {
            shards: shards.into_iter().map(Arc::new).collect(),
            transport,
            timeout: worker_timeout_from_env(),
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn machines(&self) -> usize {
        self.shards.len()
    }

    pub fn p(&self) -> usize {
        self.shards[0].p()
    }

    pub fn total_observations(&self) -> usize {
        self.shards.iter().map(|s| s.n()).sum()
    }

    pub fn coordinator(&self) -> &Arc<DataShard> {
        &self.shards[0]
    }

    pub fn shards(&self) -> &[Arc<DataShard>] {
        &self.shards
    }

    pub fn validate_for(&self, family: Family) -> Result<()> {
        self.shards.iter().try_for_each(|s| s.validate_for(family))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReply {
    pub machine_id: usize,
    pub grad: Array1<f64>,
    pub n_local: usize,
}

/// Message accounting for the broadcast/aggregate exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RoundStats {
    pub rounds: usize,
    pub broadcasts: usize,
    pub replies: usize,
}

#[derive(Debug, Clone)]
pub struct Aggregate {
    /// `m^-1 sum_i grad L_i(beta_tilde)`.
    pub gradient: Array1<f64>,
    /// The coordinator's own `grad L_1(beta_tilde)`.
    pub coordinator_gradient: Array1<f64>,
    pub stats: RoundStats,
}

/// Broadcast `beta_tilde`, gather every local gradient, and average them.
pub fn broadcast_and_aggregate(
    cluster: &ClusterSpec,
    beta_tilde: &CoefVector,
    family: Family,
) -> Result<Aggregate> {
    let p = cluster.p();
    if beta_tilde.len() != p {
        return Err(DvsError::Shape {
            context: "broadcast coefficient length",
            expected: p,
            found: beta_tilde.len(),
        });
    }
    let m = cluster.machines();
    let sizes: Vec<usize> = cluster.shards.iter().map(|s| s.n()).collect();
    if sizes.iter().any(|&n| n != sizes[0]) {
        warn!("unequal shard sizes {sizes:?}: the unweighted mean of local gradients is not the pooled gradient");
    }

    let (own, mut replies) = match cluster.transport {
        Transport::InProcess => gather_in_process(cluster, beta_tilde, family)?,
        Transport::Tcp => gather_tcp(cluster, beta_tilde, family)?,
    };

    replies.sort_by_key(|r| r.machine_id);
    for (expected, r) in (1..m).zip(&replies) {
        if r.machine_id != expected {
            return Err(DvsError::Aggregation {
                machine_id: expected,
                reason: "no reply received".into(),
            });
        }
    }
    let mut sum = own.clone();
    for r in &replies {
        if let Some(bad) = r.grad.iter().position(|v| !v.is_finite()) {
            return Err(DvsError::Aggregation {
                machine_id: r.machine_id,
                reason: format!("non-finite gradient coordinate {bad}"),
            });
        }
        sum += &r.grad;
    }
    sum /= m as f64;
    Ok(Aggregate {
        gradient: sum,
        coordinator_gradient: own,
        stats: RoundStats {
            rounds: 1,
            broadcasts: m - 1,
            replies: replies.len(),
        },
    })
}

type Gathered = (Array1<f64>, Vec<GradientReply>);

fn gather_in_process(cluster: &ClusterSpec, beta: &CoefVector, family: Family) -> Result<Gathered> {
    let m = cluster.machines();
    let deadline = Instant::now() + cluster.timeout;
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<(usize, Result<Array1<f64>>)>();
        for shard in &cluster.shards[1..] {
            let tx = tx.clone();
            let shard = Arc::clone(shard);
            let beta = beta.clone();
            scope.spawn(move || {
                let _ = tx.send((shard.machine_id, local_gradient(&shard, &beta, family)));
            });
        }
        drop(tx);
        let own = local_gradient(&cluster.shards[0], beta, family)?;
        let mut replies = Vec::with_capacity(m - 1);
        while replies.len() < m - 1 {
            let wait = deadline.saturating_duration_since(Instant::now());
            match rx.recv_timeout(wait) {
                Ok((machine_id, grad)) => {
                    let grad = grad.map_err(|e| DvsError::Aggregation {
                        machine_id,
                        reason: e.to_string(),
                    })?;
                    replies.push(GradientReply {
                        machine_id,
                        n_local: cluster.shards[machine_id].n(),
                        grad,
                    });
                }
                Err(_) => {
                    let missing = (1..m)
                        .find(|id| !replies.iter().any(|r| r.machine_id == *id))
                        .unwrap_or(1);
                    return Err(DvsError::Aggregation {
                        machine_id: missing,
                        reason: format!("timed out after {} ms", cluster.timeout.as_millis()),
                    });
                }
            }
        }
        Ok((own, replies))
    })
}

fn gather_tcp(cluster: &ClusterSpec, beta: &CoefVector, family: Family) -> Result<Gathered> {
    let mut workers = Vec::with_capacity(cluster.machines() - 1);
    for shard in &cluster.shards[1..] {
        workers.push((shard.machine_id, tcp::spawn_local_worker(Arc::clone(shard), family)?));
    }
    let timeout = cluster.timeout;
    let outcome = std::thread::scope(|scope| {
        let pending: Vec<_> = workers
            .iter()
            .map(|(id, (addr, _))| {
                let (id, addr) = (*id, *addr);
                scope.spawn(move || tcp::request_gradient(addr, id, beta, timeout))
            })
            .collect();
        let own = local_gradient(&cluster.shards[0], beta, family);
        let replies: Vec<Result<Array1<f64>>> = pending
            .into_iter()
            .map(|h| h.join().expect("coordinator request thread panicked"))
            .collect();
        (own, replies)
    });
    let (own, replies) = outcome;
    let mut out = Vec::with_capacity(replies.len());
    for ((machine_id, (_, handle)), reply) in workers.into_iter().zip(replies) {
        let grad = reply?;
        handle
            .join()
            .map_err(|_| DvsError::Aggregation {
                machine_id,
                reason: "worker thread panicked".into(),
            })?
            .map_err(|e| DvsError::Aggregation {
                machine_id,
                reason: e.to_string(),
            })?;
        out.push(GradientReply {
            machine_id,
            n_local: cluster.shards[machine_id].n(),
            grad,
        });
    }
    Ok((own?, out))
}

/// Number of broadcast/aggregate rounds a completed screening run used.
///
/// A single-machine cluster sends no messages but still counts as one logical round.
pub fn communication_rounds(run: &ScreeningRun) -> usize {
    run.communication.rounds
}
