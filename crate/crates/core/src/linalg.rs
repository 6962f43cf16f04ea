use ndarray::{Array1, ArrayView2};

/// Largest eigenvalue of `X'X` by power iteration, never forming the Gram matrix.
///
/// Starts from a fixed irregular vector (a constant start can be orthogonal to
/// the top eigenvector for structured designs) and stops when the Rayleigh
/// quotient changes by less than `tol` (relative) or after `max_iter` rounds.
pub fn gram_top_eigenvalue(x: ArrayView2<'_, f64>, max_iter: usize, tol: f64) -> f64 {
    let p = x.ncols();
    let golden = 0.618_033_988_749_895;
    let mut v = Array1::from_shape_fn(p, |j| 0.5 + ((j + 1) as f64 * golden).fract());
    let n0 = l2_norm(&v);
    v /= n0;
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let xv = x.dot(&v);
        let w = x.t().dot(&xv);
        let next = v.dot(&w);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        let done = (next - lambda).abs() <= tol * next.abs();
        lambda = next;
        if done {
            break;
        }
    }
    // one more Rayleigh quotient at the final vector
    let xv = x.dot(&v);
    lambda.max(xv.dot(&xv))
}

pub fn l2_norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}
