//! Marginal screening utilities, averaged across machines.
//!
//! Each utility scores one covariate against the response on one shard. The
//! distributed version computes the score vector on every shard, takes the
//! unweighted mean, and ranks covariates by the magnitude of that mean.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DvsError, Result};
use crate::glm::DataShard;
use crate::shard_net::ClusterSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginalMethod {
    Pearson,
    Kendall,
    Sirs,
    Dcor,
}

impl MarginalMethod {
    pub const ALL: [MarginalMethod; 4] = [
        MarginalMethod::Pearson,
        MarginalMethod::Kendall,
        MarginalMethod::Sirs,
        MarginalMethod::Dcor,
    ];

    pub fn score(self, x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> ColumnScore {
        match self {
            MarginalMethod::Pearson => pearson(x, y),
            MarginalMethod::Kendall => kendall_tau(x, y),
            MarginalMethod::Sirs => sirs(x, y),
            MarginalMethod::Dcor => distance_correlation(x, y),
        }
    }
}

impl fmt::Display for MarginalMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MarginalMethod::Pearson => "pearson",
            MarginalMethod::Kendall => "kendall",
            MarginalMethod::Sirs => "sirs",
            MarginalMethod::Dcor => "dcor",
        })
    }
}

impl FromStr for MarginalMethod {
    type Err = DvsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pearson" => Ok(Self::Pearson),
            "kendall" => Ok(Self::Kendall),
            "sirs" => Ok(Self::Sirs),
            "dcor" | "dc" => Ok(Self::Dcor),
            other => Err(DvsError::Config(format!("unknown marginal method '{other}'"))),
        }
    }
}

/// A per-column utility; `degenerate` marks a constant column or response scored as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnScore {
    pub score: f64,
    pub degenerate: bool,
}

impl ColumnScore {
    fn ok(score: f64) -> Self {
        Self { score, degenerate: false }
    }

    fn degenerate() -> Self {
        Self { score: 0.0, degenerate: true }
    }
}

pub fn pearson_utility(shard: &DataShard, j: usize) -> ColumnScore {
    pearson(shard.x().column(j), shard.y())
}

pub fn kendall_utility(shard: &DataShard, j: usize) -> ColumnScore {
    kendall_tau(shard.x().column(j), shard.y())
}

pub fn sirs_utility(shard: &DataShard, j: usize) -> ColumnScore {
    sirs(shard.x().column(j), shard.y())
}

pub fn dcor_utility(shard: &DataShard, j: usize) -> ColumnScore {
    distance_correlation(shard.x().column(j), shard.y())
}

/// Sample Pearson correlation.
pub fn pearson(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> ColumnScore {
    let n = x.len() as f64;
    let mx = x.sum() / n;
    let my = y.sum() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y.iter()) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return ColumnScore::degenerate();
    }
    ColumnScore::ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Kendall's tau-a: `(concordant - discordant) / (n (n - 1) / 2)`; tied pairs count as neither.
pub fn kendall_tau(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> ColumnScore {
    let n = x.len();
    if n < 2 {
        return ColumnScore::degenerate();
    }
    let mut net: i64 = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let s = (x[i] - x[j]).signum() * (y[i] - y[j]).signum();
            if (x[i] != x[j]) && (y[i] != y[j]) {
                net += s as i64;
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    ColumnScore::ok(net as f64 / pairs)
}

/// Sorted copy; summing in value order makes the result independent of row order.
fn sorted(v: ArrayView1<'_, f64>) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Mean and population standard deviation, accumulated in value order.
fn order_free_moments(x: ArrayView1<'_, f64>) -> (f64, f64) {
    let s = sorted(x);
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let mut dev: Vec<f64> = s.iter().map(|v| (v - mean) * (v - mean)).collect();
    dev.sort_by(f64::total_cmp);
    (mean, (dev.iter().sum::<f64>() / n).sqrt())
}

/// SIRS utility `n^-1 sum_k [ n^-1 sum_i x~_i 1(y_i < y_k) ]^2` with `x~` standardized.
pub fn sirs(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> ColumnScore {
    let n = x.len();
    if n < 2 {
        return ColumnScore::degenerate();
    }
    let (mean, sd) = order_free_moments(x);
    if sd == 0.0 {
        return ColumnScore::degenerate();
    }
    let nf = n as f64;
    // pairs ordered by (y, x~) so every partial sum is row-order independent
    let mut pairs: Vec<(f64, f64)> = y.iter().zip(x.iter()).map(|(&yi, &xi)| (yi, (xi - mean) / sd)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let mut total = 0.0;
    let mut below = 0.0; // sum of x~ over y strictly below the current group
    let mut i = 0;
    while i < n {
        let mut j = i;
        let mut group = 0.0;
        while j < n && pairs[j].0 == pairs[i].0 {
            group += pairs[j].1;
            j += 1;
        }
        let inner = below / nf;
        total += (j - i) as f64 * inner * inner;
        below += group;
        i = j;
    }
    ColumnScore::ok(total / nf)
}

/// Sample distance correlation (V-statistic), in `[0, 1]`.
pub fn distance_correlation(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> ColumnScore {
    let n = x.len();
    if n < 2 {
        return ColumnScore::degenerate();
    }
    let nf = n as f64;
    // double-centered products without storing n x n matrices:
    // n^-2 sum A_kl B_kl = n^-2 sum a b - 2 n^-3 sum_k a_k. b_k. + n^-4 (sum a)(sum b)
    let row_sums = |v: ArrayView1<'_, f64>| -> Array1<f64> {
        Array1::from_shape_fn(n, |k| v.iter().map(|u| (v[k] - u).abs()).sum())
    };
    let ax = row_sums(x);
    let by = row_sums(y);
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for k in 0..n {
        for l in 0..n {
            let a = (x[k] - x[l]).abs();
            let b = (y[k] - y[l]).abs();
            xy += a * b;
            xx += a * a;
            yy += b * b;
        }
    }
    let (sa, sb) = (ax.sum(), by.sum());
    let centered = |prod: f64, ra: &Array1<f64>, rb: &Array1<f64>, ta: f64, tb: f64| {
        prod / (nf * nf) - 2.0 * ra.dot(rb) / (nf * nf * nf) + ta * tb / (nf * nf * nf * nf)
    };
    let dcov = centered(xy, &ax, &by, sa, sb);
    let dvar_x = centered(xx, &ax, &ax, sa, sa);
    let dvar_y = centered(yy, &by, &by, sb, sb);
    if dvar_x <= 0.0 || dvar_y <= 0.0 {
        return ColumnScore::degenerate();
    }
    let r2 = (dcov / (dvar_x * dvar_y).sqrt()).max(0.0);
    ColumnScore::ok(r2.sqrt().min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalUtility {
    pub method: MarginalMethod,
    /// Unweighted mean across machines.
    pub scores: Vec<f64>,
    /// 0-based covariates by descending `|score|`, ties to the smaller index.
    pub ranking: Vec<usize>,
    /// Number of (machine, covariate) pairs scored as degenerate.
    pub degenerate: usize,
}

impl MarginalUtility {
    pub fn top(&self, d: usize) -> Vec<usize> {
        self.ranking[..d.min(self.ranking.len())].to_vec()
    }

    /// 1-based rank of covariate `j` (0-based).
    pub fn rank_of(&self, j: usize) -> Option<usize> {
        self.ranking.iter().position(|&c| c == j).map(|r| r + 1)
    }

    /// CSV rows `method,covariate,score,rank` with 1-based covariate and rank.
    pub fn write_csv<W: Write>(&self, mut w: W, header: bool) -> Result<()> {
        if header {
            writeln!(w, "method,covariate,score,rank")?;
        }
        let mut rank = vec![0usize; self.scores.len()];
        for (r, &j) in self.ranking.iter().enumerate() {
            rank[j] = r + 1;
        }
        for (j, s) in self.scores.iter().enumerate() {
            writeln!(w, "{},{},{},{}", self.method, j + 1, s, rank[j])?;
        }
        Ok(())
    }
}

fn rank_by_magnitude(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*b].abs().total_cmp(&scores[*a].abs()).then(a.cmp(b)));
    order
}

/// Per-shard utility vector for every covariate.
pub fn shard_utilities(shard: &DataShard, method: MarginalMethod) -> (Vec<f64>, usize) {
    let y = shard.y();
    let scored: Vec<ColumnScore> = (0..shard.p())
        .into_par_iter()
        .map(|j| method.score(shard.x().column(j), y))
        .collect();
    let degenerate = scored.iter().filter(|s| s.degenerate).count();
    (scored.into_iter().map(|s| s.score).collect(), degenerate)
}

/// Averages utilities over machines, ranks them, and returns the top `d` covariates (0-based).
pub fn aggregate_and_rank(
    cluster: &ClusterSpec,
    method: MarginalMethod,
    d: usize,
) -> Result<(MarginalUtility, Vec<usize>)> {
    let p = cluster.p();
    if d == 0 || d > p {
        return Err(DvsError::Config(format!("model size d={d} must lie in [1, {p}]")));
    }
    let per_shard: Vec<(Vec<f64>, usize)> = cluster
        .shards()
        .iter()
        .map(|s| shard_utilities(s, method))
        .collect();
    let m = cluster.machines() as f64;
    let mut scores = vec![0.0; p];
    let mut degenerate = 0;
    for (s, deg) in &per_shard {
        for (acc, v) in scores.iter_mut().zip(s) {
            *acc += v;
        }
        degenerate += deg;
    }
    for v in &mut scores {
        *v /= m;
    }
    if let Some(j) = scores.iter().position(|v| !v.is_finite()) {
        return Err(DvsError::NumericalFailure(format!("{method} utility for covariate {j} is not finite")));
    }
    let ranking = rank_by_magnitude(&scores);
    let selected = ranking[..d].to_vec();
    Ok((
        MarginalUtility {
            method,
            scores,
            ranking,
            degenerate,
        },
        selected,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::{array, Array2};

    #[test]
    fn pearson_examples() {
        let x = array![1.0, 2.0, 4.0, 7.0];
        assert_relative_eq!(pearson(x.view(), x.view()).score, 1.0, max_relative = 1e-15);
        let y = x.mapv(|v| -2.0 * v);
        assert_relative_eq!(pearson(x.view(), y.view()).score, -1.0, max_relative = 1e-15);
        let flat = array![3.0, 3.0, 3.0, 3.0];
        let s = pearson(flat.view(), x.view());
        assert!(s.degenerate);
        assert_eq!(s.score, 0.0);
    }

    #[test]
    fn pearson_six_points() {
        let x = array![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y = array![2.0, 1.0, 4.0, 3.0, 7.0, 5.0];
        // dx = (-5, -3, -1, 1, 3, 5)/2, dy = (-5, -8, 1, -2, 10, 4)/3
        // sxy = 16, sxx = 17.5, syy = 210/9
        let expected = 16.0 / (17.5f64.sqrt() * (210.0f64 / 9.0).sqrt());
        assert_relative_eq!(expected, 0.791_794_654_888_629_5, epsilon = 1e-15);
        assert_relative_eq!(pearson(x.view(), y.view()).score, expected, epsilon = 1e-12);
    }

    #[test]
    fn kendall_examples() {
        let x = array![1.0, 2.0, 3.0];
        assert_eq!(kendall_tau(x.view(), x.view()).score, 1.0);
        let y = array![3.0, 2.0, 1.0];
        assert_eq!(kendall_tau(x.view(), y.view()).score, -1.0);
        // one tied pair in y reduces |tau| below 1
        let y = array![1.0, 1.0, 2.0];
        assert_relative_eq!(kendall_tau(x.view(), y.view()).score, 2.0 / 3.0);
    }

    #[test]
    fn sirs_constant_column_is_zero() {
        let x = array![0.0, 0.0, 0.0, 0.0];
        let y = array![1.0, 2.0, 3.0, 4.0];
        let s = sirs(x.view(), y.view());
        assert_eq!(s.score, 0.0);
        assert!(s.degenerate);
    }

    #[test]
    fn sirs_scale_invariant() {
        let x = array![0.3, -1.2, 2.2, 0.1, 0.9, -0.4];
        let y = array![1.0, 0.0, 3.0, 2.0, 2.0, -1.0];
        let a = sirs(x.view(), y.view()).score;
        let b = sirs(x.mapv(|v| 2.0 * v).view(), y.view()).score;
        assert_relative_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn dcor_examples() {
        let x = array![0.5, 1.7, -0.3, 2.2, 0.9];
        assert_relative_eq!(distance_correlation(x.view(), x.view()).score, 1.0, epsilon = 1e-12);
        let flat = array![1.0, 1.0, 1.0, 1.0, 1.0];
        let s = distance_correlation(flat.view(), x.view());
        assert_eq!(s.score, 0.0);
        assert!(s.degenerate);
    }

    #[test]
    fn ranking_and_selection() {
        let x = Array2::from_shape_fn((8, 3), |(i, j)| match j {
            0 => i as f64,
            1 => ((i * 5) % 8) as f64,
            _ => -(i as f64) * 0.5,
        });
        let y = Array1::from_shape_fn(8, |i| i as f64);
        let shard = DataShard::new(0, x, y).unwrap();
        let cluster = ClusterSpec::new(vec![shard], crate::shard_net::Transport::InProcess).unwrap();
        let (u, top) = aggregate_and_rank(&cluster, MarginalMethod::Pearson, 2).unwrap();
        // columns 0 and 2 tie at |r| = 1; smaller index first
        assert_eq!(u.ranking[..2], [0, 2]);
        assert_eq!(top, vec![0, 2]);
        assert_eq!(u.rank_of(1), Some(3));
        assert!(aggregate_and_rank(&cluster, MarginalMethod::Pearson, 0).is_err());
        assert!(aggregate_and_rank(&cluster, MarginalMethod::Pearson, 4).is_err());

        let mut buf = Vec::new();
        u.write_csv(&mut buf, true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("method,covariate,score,rank"));
        assert!(text.lines().nth(1).unwrap().starts_with("pearson,1,1,1"));
    }
}
