//! Selection metrics over Monte Carlo replications and the campaign driver.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DvsError, Result};
use crate::marginal::{aggregate_and_rank, MarginalMethod};
use crate::screen::{screen, ScreenConfig};
use crate::shard_net::Transport;
use crate::simgen::{generate, ScenarioSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub method: String,
    /// Replications that produced a selection (failures excluded).
    pub replications: usize,
    pub sc: f64,
    pub cf: f64,
    pub ams: f64,
    pub psr: f64,
    pub fdr: f64,
    pub failures: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected: Option<Vec<BTreeSet<usize>>>,
}

/// SC, CF, AMS, PSR and FDR of `selected` against `truth`.
///
/// An empty selection contributes 0 to the FDR average.
pub fn compute_metrics(
    method: &str,
    selected: &[BTreeSet<usize>],
    truth: &BTreeSet<usize>,
) -> Result<ReplicationReport> {
    if truth.is_empty() {
        return Err(DvsError::Config("true support must be nonempty".into()));
    }
    if selected.is_empty() {
        return Err(DvsError::Config("need at least one replication".into()));
    }
    let t = selected.len();
    let (mut contain, mut exact, mut size, mut hits) = (0usize, 0usize, 0usize, 0usize);
    let mut fdr_sum = 0.0;
    for s in selected {
        let tp = s.intersection(truth).count();
        contain += usize::from(tp == truth.len());
        exact += usize::from(s == truth);
        size += s.len();
        hits += tp;
        if !s.is_empty() {
            fdr_sum += (s.len() - tp) as f64 / s.len() as f64;
        }
    }
    let tf = t as f64;
    Ok(ReplicationReport {
        method: method.to_string(),
        replications: t,
        sc: contain as f64 / tf,
        cf: exact as f64 / tf,
        ams: size as f64 / tf,
        psr: hits as f64 / (tf * truth.len() as f64),
        fdr: fdr_sum / tf,
        failures: 0,
        selected: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dvs,
    Marginal(MarginalMethod),
}

impl Method {
    pub const NAMES: [&'static str; 5] = ["dvs", "pearson", "kendall", "sirs", "dcor"];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Dvs => f.write_str("dvs"),
            Method::Marginal(m) => m.fmt(f),
        }
    }
}

impl FromStr for Method {
    type Err = DvsError;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("dvs") {
            return Ok(Method::Dvs);
        }
        s.parse::<MarginalMethod>().map(Method::Marginal).map_err(|_| {
            DvsError::Config(format!("unknown method '{s}' (valid: {})", Method::NAMES.join(", ")))
        })
    }
}

/// Model size used for the marginal baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineD {
    Fixed(usize),
    /// Both `ceil(N / ln N)` and the DVS model size of the same replication.
    #[default]
    Both,
}

pub fn n_over_log_n(n_total: usize) -> usize {
    let n = n_total as f64;
    ((n / n.ln()).ceil() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    /// Base scenario; replication `t` uses seed `scenario.seed + t`.
    pub scenario: ScenarioSpec,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub baseline_d: BaselineD,
    pub screen: ScreenConfig,
    pub transport: Transport,
    /// Worker threads; 0 uses the global pool.
    pub jobs: usize,
    pub retain_sets: bool,
}

impl CampaignConfig {
    pub fn new(scenario: ScenarioSpec, methods: Vec<Method>, replications: usize) -> Self {
        Self {
            scenario,
            methods,
            replications,
            baseline_d: BaselineD::default(),
            screen: ScreenConfig::default(),
            transport: Transport::InProcess,
            jobs: 0,
            retain_sets: false,
        }
    }
}

/// Row labels in output order, e.g. `dvs`, `pearson@d=145`, `pearson@d=dvs`.
fn row_labels(cfg: &CampaignConfig) -> Vec<(String, Method, RowSize)> {
    let has_dvs = cfg.methods.contains(&Method::Dvs);
    let mut rows = Vec::new();
    for &m in &cfg.methods {
        match m {
            Method::Dvs => rows.push(("dvs".to_string(), m, RowSize::Dvs)),
            Method::Marginal(_) => match cfg.baseline_d {
                BaselineD::Fixed(d) => rows.push((format!("{m}@d={d}"), m, RowSize::Fixed(d))),
                BaselineD::Both => {
                    let d = n_over_log_n(cfg.scenario.n_total).min(cfg.scenario.p);
                    rows.push((format!("{m}@d={d}"), m, RowSize::Fixed(d)));
                    if has_dvs {
                        rows.push((format!("{m}@d=dvs"), m, RowSize::MatchDvs));
                    }
                }
            },
        }
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowSize {
    Dvs,
    Fixed(usize),
    MatchDvs,
}

type Outcome = std::result::Result<BTreeSet<usize>, String>;

fn run_replication(cfg: &CampaignConfig, rows: &[(String, Method, RowSize)], t: usize) -> Vec<Outcome> {
    let spec = ScenarioSpec { seed: cfg.scenario.seed.wrapping_add(t as u64), ..cfg.scenario };
    let data = match generate(&spec) {
        Ok(d) => d,
        Err(e) => return vec![Err(e.to_string()); rows.len()],
    };
    let family = data.family;
    let cluster = match data.into_cluster(cfg.transport) {
        Ok(c) => c,
        Err(e) => return vec![Err(e.to_string()); rows.len()],
    };

    let dvs: Option<Outcome> = cfg.methods.contains(&Method::Dvs).then(|| {
        screen(&cluster, family, &cfg.screen)
            .map(|r| r.support().iter().copied().collect())
            .map_err(|e| e.to_string())
    });

    let mut rankings: Vec<(MarginalMethod, Vec<usize>)> = Vec::new();
    rows.iter()
        .map(|(_, method, size)| match (method, size) {
            (Method::Dvs, _) => dvs.clone().expect("dvs outcome computed"),
            (Method::Marginal(mm), size) => {
                let d = match size {
                    RowSize::Fixed(d) => *d,
                    _ => match &dvs {
                        Some(Ok(s)) => s.len(),
                        _ => return Err("no DVS model size for this replication".to_string()),
                    },
                };
                let ranking = match rankings.iter().find(|(m, _)| m == mm) {
                    Some((_, r)) => r.clone(),
                    None => {
                        let (util, _) = aggregate_and_rank(&cluster, *mm, cluster.p()).map_err(|e| e.to_string())?;
                        rankings.push((*mm, util.ranking.clone()));
                        util.ranking
                    }
                };
                Ok(ranking.into_iter().take(d).collect())
            }
        })
        .collect()
}

/// Runs `cfg.replications` independent replications and reports one row per method.
///
/// A failing method in one replication is excluded from that row and counted
/// in `failures`; the campaign continues.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<Vec<ReplicationReport>> {
    if cfg.replications == 0 {
        return Err(DvsError::Config("T must be at least 1".into()));
    }
    if cfg.methods.is_empty() {
        return Err(DvsError::Config("no methods requested".into()));
    }
    cfg.scenario.validate()?;
    let truth: BTreeSet<usize> = cfg.scenario.truth().support().into_iter().collect();
    let rows = row_labels(cfg);

    let work = || -> Vec<Vec<Outcome>> {
        (1..=cfg.replications)
            .into_par_iter()
            .map(|t| run_replication(cfg, &rows, t))
            .collect()
    };
    let outcomes = if cfg.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| DvsError::Config(format!("thread pool: {e}")))?
            .install(work)
    } else {
        work()
    };

    let mut reports = Vec::with_capacity(rows.len());
    for (i, (label, _, _)) in rows.iter().enumerate() {
        let mut sets = Vec::with_capacity(cfg.replications);
        let mut failures = 0;
        for (t, rep) in outcomes.iter().enumerate() {
            match &rep[i] {
                Ok(s) => sets.push(s.clone()),
                Err(e) => {
                    failures += 1;
                    warn!("{label}: replication {} failed: {e}", t + 1);
                }
            }
        }
        let mut report = if sets.is_empty() {
            ReplicationReport {
                method: label.clone(),
                replications: 0,
                sc: f64::NAN,
                cf: f64::NAN,
                ams: f64::NAN,
                psr: f64::NAN,
                fdr: f64::NAN,
                failures: 0,
                selected: None,
            }
        } else {
            compute_metrics(label, &sets, &truth)?
        };
        report.failures = failures;
        if cfg.retain_sets {
            report.selected = Some(sets);
        }
        reports.push(report);
    }
    Ok(reports)
}

/// Table layout: method, T, SC, CF, AMS, PSR, FDR, failures.
pub fn write_reports_csv<W: Write>(reports: &[ReplicationReport], mut w: W) -> Result<()> {
    writeln!(w, "method,T,SC,CF,AMS,PSR,FDR,failures")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{}",
            r.method, r.replications, r.sc, r.cf, r.ams, r.psr, r.fdr, r.failures
        )?;
    }
    Ok(())
}
