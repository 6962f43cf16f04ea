#![allow(dead_code, clippy::needless_range_loop)]

use dvs_core::{CoefVector, DataShard, Family};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

/// Draws an `n x p` standard normal design and a response from `family` at `beta`.
pub fn random_shard<R: Rng>(rng: &mut R, family: Family, n: usize, beta: &[f64], machine_id: usize) -> DataShard {
    let p = beta.len();
    let x = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
    let y = Array1::from_shape_fn(n, |i| {
        let theta: f64 = (0..p).map(|j| x[[i, j]] * beta[j]).sum();
        draw_response(rng, family, theta)
    });
    DataShard::new(machine_id, x, y).unwrap()
}

pub fn draw_response<R: Rng>(rng: &mut R, family: Family, theta: f64) -> f64 {
    match family {
        Family::Gaussian => theta + rng.sample::<f64, _>(StandardNormal),
        Family::Bernoulli => f64::from(rng.random::<f64>() < 1.0 / (1.0 + (-theta).exp())),
        Family::Poisson => Poisson::new(theta.clamp(-20.0, 3.0).exp()).unwrap().sample(rng),
    }
}

/// `q` nonzero entries of magnitude in `[lo, hi]` with random signs, at random positions.
pub fn sparse_beta<R: Rng>(rng: &mut R, p: usize, q: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut beta = vec![0.0; p];
    let mut idx: Vec<usize> = (0..p).collect();
    for t in 0..q {
        let pick = rng.random_range(t..p);
        idx.swap(t, pick);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        beta[idx[t]] = sign * rng.random_range(lo..=hi);
    }
    beta
}

/// Splits `shard` row-wise into `m` equal shards following `order`.
pub fn partition(shard: &DataShard, order: &[usize], m: usize) -> Vec<DataShard> {
    let n = shard.n() / m;
    (0..m)
        .map(|i| {
            let rows = &order[i * n..(i + 1) * n];
            let x = Array2::from_shape_fn((n, shard.p()), |(r, j)| shard.x()[[rows[r], j]]);
            let y = Array1::from_shape_fn(n, |r| shard.y()[rows[r]]);
            DataShard::new(i, x, y).unwrap()
        })
        .collect()
}

fn naive_b(family: Family, t: f64) -> (f64, f64, f64) {
    match family {
        Family::Gaussian => (0.5 * t * t, t, 1.0),
        Family::Bernoulli => {
            let mu = 1.0 / (1.0 + (-t).exp());
            ((1.0 + t.exp()).ln(), mu, mu * (1.0 - mu))
        }
        Family::Poisson => (t.exp(), t.exp(), t.exp()),
    }
}

fn naive_theta(shard: &DataShard, beta: &[f64], i: usize) -> f64 {
    let mut t = 0.0;
    for j in 0..shard.p() {
        t += shard.x()[[i, j]] * beta[j];
    }
    t
}

/// Loss by explicit loops over rows and columns.
pub fn naive_loss(shard: &DataShard, beta: &[f64], family: Family) -> f64 {
    let mut s = 0.0;
    for i in 0..shard.n() {
        let t = naive_theta(shard, beta, i);
        s += naive_b(family, t).0 - t * shard.y()[i];
    }
    s / shard.n() as f64
}

pub fn naive_gradient(shard: &DataShard, beta: &[f64], family: Family) -> Vec<f64> {
    let mut g = vec![0.0; shard.p()];
    for i in 0..shard.n() {
        let r = naive_b(family, naive_theta(shard, beta, i)).1 - shard.y()[i];
        for (j, gj) in g.iter_mut().enumerate() {
            *gj += shard.x()[[i, j]] * r;
        }
    }
    g.iter().map(|v| v / shard.n() as f64).collect()
}

/// Dense Hessian `n^-1 X' diag(b'') X`.
pub fn naive_hessian(shard: &DataShard, beta: &[f64], family: Family) -> Array2<f64> {
    let p = shard.p();
    let mut h = Array2::zeros((p, p));
    for i in 0..shard.n() {
        let w = naive_b(family, naive_theta(shard, beta, i)).2;
        for a in 0..p {
            for b in 0..p {
                h[[a, b]] += w * shard.x()[[i, a]] * shard.x()[[i, b]];
            }
        }
    }
    h / shard.n() as f64
}

pub fn coef(v: &[f64]) -> CoefVector {
    CoefVector::from_vec(v.to_vec())
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Max relative error of `a` against `b`, scaled by `max(|b|_inf, floor)`.
pub fn vec_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let scale = b.iter().fold(floor, |m, v| m.max(v.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

fn solve(mut a: Array2<f64>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[[i, c]].abs().total_cmp(&a[[j, c]].abs())).unwrap();
        for k in 0..n {
            a.swap([c, k], [piv, k]);
        }
        b.swap(c, piv);
        for r in (c + 1)..n {
            let f = a[[r, c]] / a[[c, c]];
            for k in c..n {
                a[[r, k]] -= f * a[[c, k]];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = ((r + 1)..n).map(|k| a[[r, k]] * x[k]).sum();
        x[r] = (b[r] - s) / a[[r, r]];
    }
    x
}

/// Minimum of `L(beta) - <beta, c>` over `beta` supported on `support`, by damped Newton.
pub fn subset_minimum(shard: &DataShard, c: &[f64], support: &[usize], family: Family) -> f64 {
    let p = shard.p();
    let f = |b: &[f64]| naive_loss(shard, b, family) - b.iter().zip(c).map(|(u, v)| u * v).sum::<f64>();
    let mut beta = vec![0.0; p];
    let mut val = f(&beta);
    for _ in 0..100 {
        let g = naive_gradient(shard, &beta, family);
        let h = naive_hessian(shard, &beta, family);
        let gs: Vec<f64> = support.iter().map(|&j| g[j] - c[j]).collect();
        if gs.iter().all(|v| v.abs() < 1e-12) {
            break;
        }
        let hs = Array2::from_shape_fn((support.len(), support.len()), |(a, b)| h[[support[a], support[b]]]);
        let step = solve(hs, gs);
        let mut t = 1.0;
        loop {
            let mut trial = beta.clone();
            for (s, &j) in support.iter().enumerate() {
                trial[j] -= t * step[s];
            }
            let fv = f(&trial);
            if fv <= val || t < 1e-10 {
                if fv <= val {
                    beta = trial;
                    val = fv;
                }
                break;
            }
            t *= 0.5;
        }
        if t < 1e-10 {
            break;
        }
    }
    val
}

/// All size-`k` subsets of `0..p` in lexicographic order.
pub fn subsets(p: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, p: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for j in start..p {
            cur.push(j);
            rec(j + 1, p, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, p, k, &mut Vec::new(), &mut out);
    out
}

/// Exhaustive best size-`k` support of `L(beta) - <beta, c>`.
pub fn best_subset(shard: &DataShard, c: &[f64], k: usize, family: Family) -> (Vec<usize>, f64) {
    subsets(shard.p(), k)
        .into_iter()
        .map(|s| {
            let v = subset_minimum(shard, c, &s, family);
            (s, v)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
}
