//! Distributed variable screening for generalized linear models.
//!
//! A coordinator fits a Lasso on its own shard, gathers one round of
//! gradients from every machine, and runs iterative hard thresholding on the
//! resulting surrogate loss. Marginal screening baselines, scenario
//! generators and a replication harness are included.

pub mod diht;
pub mod error;
pub mod glm;
pub mod io;
pub mod lasso;
pub mod linalg;
pub mod marginal;
pub mod metrics;
pub mod model_select;
pub mod screen;
pub mod shard_net;
pub mod simgen;

pub use diht::{
    diht_run, diht_step, hard_threshold, static_step_bound, surrogate_gradient, surrogate_loss, DihtConfig,
    IterationLog, ScreeningRun, SurrogateState,
};
pub use error::{DvsError, Result};
pub use glm::{curvature_bound, local_gradient, local_hessian_quadform, local_loss, CoefVector, DataShard, Family};
pub use lasso::{lasso_fit, Lambda, LassoConfig, LassoFit};
pub use marginal::{aggregate_and_rank, MarginalMethod, MarginalUtility};
pub use metrics::{compute_metrics, run_campaign, CampaignConfig, Method, ReplicationReport};
pub use model_select::{ebic, select_k, EbicTrace};
pub use screen::{screen, ScreenConfig, ScreenResult, Sparsity};
pub use shard_net::{broadcast_and_aggregate, communication_rounds, ClusterSpec, Transport};
pub use simgen::{ar1_cholesky, generate, GeneratedDataset, Scenario, ScenarioSpec};
