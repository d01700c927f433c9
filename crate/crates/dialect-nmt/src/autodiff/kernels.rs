//! Shared numeric kernels. Both the tape (forward + backward) and the no-tape
//! inference path call these, so the two paths cannot drift apart numerically.

use super::scalar::Scalar;

/// c += alpha * a(m,k) * b(k,n), all row-major.
pub fn gemm_nn<T: Scalar>(m: usize, k: usize, n: usize, alpha: T, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        T::gemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            T::one(),
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// c += alpha * a(m,k) * b(n,k)^T. b is stored row-major as (n,k).
pub fn gemm_nt<T: Scalar>(m: usize, k: usize, n: usize, alpha: T, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        T::gemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            T::one(),
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// c += alpha * a(k,m)^T * b(k,n). a is stored row-major as (k,m).
pub fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, alpha: T, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        T::gemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            T::one(),
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Numerically stable softmax of one row, written to `out`.
pub fn softmax_row<T: Scalar>(x: &[T], out: &mut [T]) {
    let mut mx = x[0];
    for &v in &x[1..] {
        if v > mx {
            mx = v;
        }
    }
    let mut sum = T::zero();
    for (o, &v) in out.iter_mut().zip(x) {
        let e = (v - mx).exp();
        *o = e;
        sum += e;
    }
    let inv = T::one() / sum;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

/// log softmax of one row in f64, for decoding scores.
pub fn log_softmax_row_f64<T: Scalar>(x: &[T]) -> Vec<f64> {
    let mut mx = f64::NEG_INFINITY;
    for &v in x {
        mx = mx.max(v.as_f64());
    }
    let mut sum = 0.0f64;
    for &v in x {
        sum += (v.as_f64() - mx).exp();
    }
    let lse = mx + sum.ln();
    x.iter().map(|&v| v.as_f64() - lse).collect()
}

/// Layer norm of one row with affine gamma/beta. Returns (inv_std, xhat in
/// `xhat_out`); `out` gets gamma * xhat + beta. Population variance.
pub fn layer_norm_row<T: Scalar>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    eps: T,
    xhat_out: &mut [T],
    out: &mut [T],
) -> T {
    let n = T::from_f64(x.len() as f64);
    let mut mean = T::zero();
    for &v in x {
        mean += v;
    }
    mean = mean / n;
    let mut var = T::zero();
    for &v in x {
        let d = v - mean;
        var += d * d;
    }
    var = var / n;
    let inv_std = T::one() / (var + eps).sqrt();
    for i in 0..x.len() {
        let xh = (x[i] - mean) * inv_std;
        xhat_out[i] = xh;
        out[i] = gamma[i] * xh + beta[i];
    }
    inv_std
}

pub fn relu<T: Scalar>(x: &[T], out: &mut [T]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = if v > T::zero() { v } else { T::zero() };
    }
}

/// out[i][j] = x[i][j] + bias[j] for row-major x of width `cols`.
pub fn add_bias<T: Scalar>(x: &[T], bias: &[T], cols: usize, out: &mut [T]) {
    for (orow, xrow) in out.chunks_mut(cols).zip(x.chunks(cols)) {
        for ((o, &v), &b) in orow.iter_mut().zip(xrow).zip(bias) {
            *o = v + b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_mm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                for j in 0..n {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_variants_match_naive() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64) * 0.3 - 1.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64) * 0.1 - 0.7).collect();
        let want = naive_mm(m, k, n, &a, &b);

        let mut c = vec![0.0; m * n];
        gemm_nn(m, k, n, 1.0, &a, &b, &mut c);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // b stored transposed as (n,k)
        let mut bt = vec![0.0; k * n];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let mut c2 = vec![0.0; m * n];
        gemm_nt(m, k, n, 1.0, &a, &bt, &mut c2);
        for (x, y) in c2.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // a stored transposed as (k,m)
        let mut at = vec![0.0; m * k];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut c3 = vec![0.0; m * n];
        gemm_tn(m, k, n, 1.0, &at, &b, &mut c3);
        for (x, y) in c3.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gemm_accumulates() {
        let mut c = vec![10.0f64, 10.0];
        gemm_nn(1, 1, 2, 1.0, &[2.0], &[3.0, 4.0], &mut c);
        assert_eq!(c, vec![16.0, 18.0]);
    }

    #[test]
    fn softmax_row_sums_to_one_and_survives_big_inputs() {
        let x = [1000.0f64, 1001.0, 999.0];
        let mut out = [0.0; 3];
        softmax_row(&x, &mut out);
        let s: f64 = out.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(out.iter().all(|v| v.is_finite() && *v > 0.0));
        assert!(out[1] > out[0] && out[0] > out[2]);
    }

    #[test]
    fn layer_norm_row_zero_mean_unit_var() {
        let x = [1.0f64, 2.0, 3.0, 4.0];
        let gamma = [1.0; 4];
        let beta = [0.0; 4];
        let mut xhat = [0.0; 4];
        let mut out = [0.0; 4];
        layer_norm_row(&x, &gamma, &beta, 1e-5, &mut xhat, &mut out);
        let mean: f64 = out.iter().sum::<f64>() / 4.0;
        let var: f64 = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4); // eps shrinks it slightly
    }

    #[test]
    fn log_softmax_matches_softmax_log() {
        let x = [0.5f64, -1.0, 2.0];
        let mut sm = [0.0; 3];
        softmax_row(&x, &mut sm);
        let ls = log_softmax_row_f64(&x);
        for i in 0..3 {
            assert!((ls[i] - sm[i].ln()).abs() < 1e-12);
        }
    }
}
