//! Seeded synthetic scenarios with known truth, generated pre-sharded.
//!
//! Randomness comes from ChaCha8 seeded with `seed`; machine `i` draws from
//! stream `i` of that generator, so every shard is reproducible on its own
//! and independent of thread count. Normals use `rand_distr::StandardNormal`
//! (ziggurat), Poisson counts use `rand_distr::Poisson`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DvsError, Result};
use crate::glm::{CoefVector, DataShard, Family};
use crate::shard_net::{ClusterSpec, Transport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// Joint-effect design where covariate 1 is marginally weak.
    Linear11,
    /// AR(1) covariates with a machine-specific correlation.
    Linear12,
    Logistic21,
    Logistic22,
    Poisson21,
    Poisson22,
}

const TRUTH_LINEAR_11: [f64; 5] = [2.0, 4.0, 6.0, 8.0, 10.0];
const TRUTH_LINEAR_12: [f64; 5] = [0.25, -0.5, 1.0, 0.3, -0.2];
const TRUTH_LOGISTIC: [f64; 6] = [0.0, 1.5, 0.0, 2.0, 0.0, -0.6];
const TRUTH_POISSON: [f64; 5] = [0.0, 0.8, -0.6, 0.0, 0.5];

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::Linear11,
        Scenario::Linear12,
        Scenario::Logistic21,
        Scenario::Logistic22,
        Scenario::Poisson21,
        Scenario::Poisson22,
    ];

    pub fn family(self) -> Family {
        match self {
            Scenario::Linear11 | Scenario::Linear12 => Family::Gaussian,
            Scenario::Logistic21 | Scenario::Logistic22 => Family::Bernoulli,
            Scenario::Poisson21 | Scenario::Poisson22 => Family::Poisson,
        }
    }

    /// Leading entries of the true coefficient vector; the rest are zero.
    pub fn truth_prefix(self) -> &'static [f64] {
        match self {
            Scenario::Linear11 => &TRUTH_LINEAR_11,
            Scenario::Linear12 => &TRUTH_LINEAR_12,
            Scenario::Logistic21 | Scenario::Logistic22 => &TRUTH_LOGISTIC,
            Scenario::Poisson21 | Scenario::Poisson22 => &TRUTH_POISSON,
        }
    }

    fn ar1_covariates(self) -> bool {
        matches!(self, Scenario::Linear12 | Scenario::Logistic22 | Scenario::Poisson22)
    }

    pub fn label(self) -> &'static str {
        match self {
            Scenario::Linear11 => "1.1",
            Scenario::Linear12 => "1.2",
            Scenario::Logistic21 => "2.1",
            Scenario::Logistic22 => "2.2",
            Scenario::Poisson21 => "3.1",
            Scenario::Poisson22 => "3.2",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Scenario {
    type Err = DvsError;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.label() == s)
            .ok_or_else(|| DvsError::Config(format!("unknown scenario '{s}' (expected 1.1, 1.2, 2.1, 2.2, 3.1 or 3.2)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub n_total: usize,
    pub p: usize,
    pub m: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n_total == 0 {
            return Err(DvsError::Config("N and m must be positive".into()));
        }
        if !self.n_total.is_multiple_of(self.m) {
            return Err(DvsError::Config("N must be divisible by m".into()));
        }
        if self.p < 6 {
            return Err(DvsError::Config(format!("p must be at least 6, got {}", self.p)));
        }
        Ok(())
    }

    pub fn shard_size(&self) -> usize {
        self.n_total / self.m
    }

    pub fn truth(&self) -> CoefVector {
        let mut beta = vec![0.0; self.p];
        let prefix = self.scenario.truth_prefix();
        beta[..prefix.len()].copy_from_slice(prefix);
        CoefVector::from_vec(beta)
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub spec: ScenarioSpec,
    pub family: Family,
    pub shards: Vec<DataShard>,
    pub truth: CoefVector,
    /// 0-based true support.
    pub support: Vec<usize>,
}

impl GeneratedDataset {
    pub fn into_cluster(self, transport: Transport) -> Result<ClusterSpec> {
        ClusterSpec::new(self.shards, transport)
    }

    pub fn cluster(&self, transport: Transport) -> Result<ClusterSpec> {
        ClusterSpec::new(self.shards.clone(), transport)
    }

    /// All shards stacked in machine order.
    pub fn pooled(&self) -> DataShard {
        pool_shards(&self.shards)
    }
}

/// Concatenates shards row-wise into one machine-0 shard.
pub fn pool_shards(shards: &[DataShard]) -> DataShard {
    let p = shards[0].p();
    let n: usize = shards.iter().map(|s| s.n()).sum();
    let mut x = Array2::zeros((n, p));
    let mut y = Array1::zeros(n);
    let mut row = 0;
    for s in shards {
        let k = s.n();
        x.slice_mut(ndarray::s![row..row + k, ..]).assign(&s.x());
        y.slice_mut(ndarray::s![row..row + k]).assign(&s.y());
        row += k;
    }
    DataShard::new(0, x, y).expect("pooled shard dimensions are consistent")
}

/// Generator for machine `machine_id`: ChaCha8 seeded with `seed`, stream `machine_id`.
pub fn machine_rng(seed: u64, machine_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(machine_id as u64);
    rng
}

pub fn generate(spec: &ScenarioSpec) -> Result<GeneratedDataset> {
    spec.validate()?;
    let truth = spec.truth();
    let shards = (0..spec.m)
        .into_par_iter()
        .map(|i| generate_shard(spec, &truth, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(GeneratedDataset {
        spec: *spec,
        family: spec.scenario.family(),
        shards,
        support: truth.support(),
        truth,
    })
}

fn generate_shard(spec: &ScenarioSpec, truth: &CoefVector, machine_id: usize) -> Result<DataShard> {
    let (n, p) = (spec.shard_size(), spec.p);
    let mut rng = machine_rng(spec.seed, machine_id);
    let upsilon: f64 = if spec.scenario.ar1_covariates() {
        rng.random_range(0.2..0.3)
    } else {
        0.0
    };
    let family = spec.scenario.family();
    let active: Vec<(usize, f64)> = truth.support().into_iter().map(|j| (j, truth.values()[j])).collect();

    let mut x = Array2::zeros((n, p));
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let mut row = x.row_mut(i);
        match spec.scenario {
            Scenario::Linear11 => {
                let z: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
                let w: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
                let head: f64 = z[..5].iter().sum();
                for l in 0..p {
                    row[l] = if l < 5 {
                        (z[l] + w[l]) / std::f64::consts::SQRT_2
                    } else {
                        (z[l] + head) / 2.0
                    };
                }
            }
            _ if upsilon != 0.0 => {
                // stationary AR(1): x_t = u x_{t-1} + sqrt(1 - u^2) z_t
                let scale = (1.0 - upsilon * upsilon).sqrt();
                let mut prev: f64 = rng.sample(StandardNormal);
                row[0] = prev;
                for l in 1..p {
                    let z: f64 = rng.sample(StandardNormal);
                    prev = upsilon * prev + scale * z;
                    row[l] = prev;
                }
            }
            _ => {
                for l in 0..p {
                    row[l] = rng.sample(StandardNormal);
                }
            }
        }
        let theta: f64 = active.iter().map(|&(j, b)| b * row[j]).sum();
        y[i] = match family {
            Family::Gaussian => theta + rng.sample::<f64, _>(StandardNormal),
            Family::Bernoulli => {
                let prob = 1.0 / (1.0 + (-theta).exp());
                if rng.random::<f64>() < prob {
                    1.0
                } else {
                    0.0
                }
            }
            Family::Poisson => {
                let dist = Poisson::new(theta.exp())
                    .map_err(|e| DvsError::NumericalFailure(format!("Poisson rate: {e}")))?;
                dist.sample(&mut rng)
            }
        };
    }
    DataShard::new(machine_id, x, y)
}

/// Lower-triangular `L` with `L L' = (u^|s-t|)`.
pub fn ar1_cholesky(p: usize, upsilon: f64) -> Result<Array2<f64>> {
    if upsilon.is_nan() || upsilon.abs() >= 1.0 {
        return Err(DvsError::InvalidArgument(format!("AR(1) coefficient must satisfy |u| < 1, got {upsilon}")));
    }
    let scale = (1.0 - upsilon * upsilon).sqrt();
    let mut l = Array2::zeros((p, p));
    for i in 0..p {
        l[[i, 0]] = upsilon.powi(i as i32);
        for j in 1..=i {
            l[[i, j]] = scale * upsilon.powi((i - j) as i32);
        }
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(scenario: Scenario, n_total: usize, p: usize, m: usize, seed: u64) -> ScenarioSpec {
        ScenarioSpec { scenario, n_total, p, m, seed }
    }

    #[test]
    fn truth_vectors_are_literal() {
        let t = spec(Scenario::Linear11, 10, 8, 1, 0).truth();
        assert_eq!(t.values().to_vec(), vec![2.0, 4.0, 6.0, 8.0, 10.0, 0.0, 0.0, 0.0]);
        let t = spec(Scenario::Linear12, 10, 7, 1, 0).truth();
        assert_eq!(t.values().to_vec(), vec![0.25, -0.5, 1.0, 0.3, -0.2, 0.0, 0.0]);
        let t = spec(Scenario::Logistic22, 10, 7, 1, 0).truth();
        assert_eq!(t.values().to_vec(), vec![0.0, 1.5, 0.0, 2.0, 0.0, -0.6, 0.0]);
        assert_eq!(t.support(), vec![1, 3, 5]);
        let t = spec(Scenario::Poisson21, 10, 6, 1, 0).truth();
        assert_eq!(t.values().to_vec(), vec![0.0, 0.8, -0.6, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn validation_errors() {
        let e = generate(&spec(Scenario::Logistic21, 1001, 20, 10, 1)).unwrap_err();
        assert!(e.to_string().contains("N must be divisible by m"));
        assert!(generate(&spec(Scenario::Logistic21, 100, 5, 10, 1)).is_err());
    }

    #[test]
    fn shards_have_equal_sizes_and_valid_responses() {
        for sc in Scenario::ALL {
            let d = generate(&spec(sc, 60, 10, 3, 9)).unwrap();
            assert_eq!(d.shards.len(), 3);
            for (i, s) in d.shards.iter().enumerate() {
                assert_eq!(s.n(), 20);
                assert_eq!(s.p(), 10);
                assert_eq!(s.machine_id, i);
                s.validate_for(d.family).unwrap();
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        for sc in Scenario::ALL {
            let a = generate(&spec(sc, 40, 8, 4, 77)).unwrap();
            let b = generate(&spec(sc, 40, 8, 4, 77)).unwrap();
            assert_eq!(a.shards, b.shards);
            let c = generate(&spec(sc, 40, 8, 4, 78)).unwrap();
            assert_ne!(a.shards, c.shards);
        }
    }

    #[test]
    fn machine_streams_differ() {
        let d = generate(&spec(Scenario::Logistic21, 40, 8, 2, 5)).unwrap();
        assert_ne!(d.shards[0].x(), d.shards[1].x());
    }

    #[test]
    fn ar1_factor_examples() {
        assert_eq!(ar1_cholesky(4, 0.0).unwrap(), Array2::<f64>::eye(4));
        let l = ar1_cholesky(3, 0.5).unwrap();
        let s = l.dot(&l.t());
        let expected = ndarray::array![[1.0, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 1.0]];
        for (a, b) in s.iter().zip(expected.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert!(ar1_cholesky(3, 1.0).is_err());
        assert!(ar1_cholesky(3, -1.5).is_err());
    }

    #[test]
    fn ar1_reconstruction_large() {
        let (p, u) = (50, 0.29);
        let l = ar1_cholesky(p, u).unwrap();
        let s = l.dot(&l.t());
        let mut worst = 0.0f64;
        for i in 0..p {
            for j in 0..p {
                assert_eq!(l[[i, j]] != 0.0, j <= i, "factor must be lower triangular");
                worst = worst.max((s[[i, j]] - u.powi((i as i32 - j as i32).abs())).abs());
            }
        }
        assert!(worst <= 1e-10, "{worst}");
    }

    #[test]
    fn pooled_preserves_rows() {
        let d = generate(&spec(Scenario::Linear12, 30, 6, 3, 2)).unwrap();
        let pooled = d.pooled();
        assert_eq!(pooled.n(), 30);
        assert_eq!(pooled.x().row(10), d.shards[1].x().row(0));
    }

    #[test]
    fn scenario_labels_round_trip() {
        for sc in Scenario::ALL {
            assert_eq!(sc.label().parse::<Scenario>().unwrap(), sc);
        }
        assert!("4.1".parse::<Scenario>().is_err());
    }
}
