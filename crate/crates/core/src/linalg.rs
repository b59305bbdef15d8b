//! Dense kernels shared by the operator and barrier networks. Everything is
//! phrased over contiguous slices in axpy/dot form so the autovectorizer emits
//! FMA code; these loops dominate the filter's per-step latency budget.

use crate::scalar::Real;

/// y += a * x
#[inline]
pub fn axpy<S: Real>(y: &mut [S], a: S, x: &[S]) {
    debug_assert_eq!(y.len(), x.len());
    for (y, &x) in y.iter_mut().zip(x) {
        *y = a.mul_add(x, *y);
    }
}

/// y += a * x + c * w  (two fused accumulations over the same output row)
#[inline]
pub fn axpy2<S: Real>(y: &mut [S], a: S, x: &[S], c: S, w: &[S]) {
    debug_assert_eq!(y.len(), x.len());
    debug_assert_eq!(y.len(), w.len());
    for ((y, &x), &w) in y.iter_mut().zip(x).zip(w) {
        *y = c.mul_add(w, a.mul_add(x, *y));
    }
}

/// Four-lane unrolled dot product. The fixed accumulator split keeps the
/// reduction order independent of slice length parity and fast.
#[inline]
pub fn dot<S: Real>(x: &[S], y: &[S]) -> S {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = [S::zero(); 4];
    let split = x.len() - x.len() % 4;
    let (xc, xr) = x.split_at(split);
    let (yc, yr) = y.split_at(split);
    for (xq, yq) in xc.chunks_exact(4).zip(yc.chunks_exact(4)) {
        acc[0] = xq[0].mul_add(yq[0], acc[0]);
        acc[1] = xq[1].mul_add(yq[1], acc[1]);
        acc[2] = xq[2].mul_add(yq[2], acc[2]);
        acc[3] = xq[3].mul_add(yq[3], acc[3]);
    }
    let mut tail = S::zero();
    for (&x, &y) in xr.iter().zip(yr) {
        tail = x.mul_add(y, tail);
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + tail
}

/// Complex axpy on split re/im planes: out += (ar + i*ai) * (xr + i*xi).
#[inline]
pub fn zaxpy<S: Real>(
    out_re: &mut [S],
    out_im: &mut [S],
    ar: S,
    ai: S,
    x_re: &[S],
    x_im: &[S],
) {
    debug_assert_eq!(out_re.len(), x_re.len());
    debug_assert_eq!(out_im.len(), x_im.len());
    for (((or, oi), &xr), &xi) in out_re.iter_mut().zip(out_im.iter_mut()).zip(x_re).zip(x_im) {
        *or = ar.mul_add(xr, *or) - ai * xi;
        *oi = ai.mul_add(xr, ar.mul_add(xi, *oi));
    }
}

pub fn fill<S: Real>(x: &mut [S], v: S) {
    for x in x.iter_mut() {
        *x = v;
    }
}

pub fn scale<S: Real>(x: &mut [S], a: S) {
    for x in x.iter_mut() {
        *x = *x * a;
    }
}

pub fn nrm2<S: Real>(x: &[S]) -> S {
    dot(x, x).sqrt()
}

/// Grow-or-shrink a scratch buffer and zero it.
pub fn reset<S: Real>(buf: &mut Vec<S>, len: usize) {
    buf.clear();
    buf.resize(len, S::zero());
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive_sum() {
        let x: Vec<f64> = (0..31).map(|i| (i as f64) * 0.25 - 3.0).collect();
        let y: Vec<f64> = (0..31).map(|i| 1.5 - (i as f64) * 0.125).collect();
        let naive: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        assert!((dot(&x, &y) - naive).abs() < 1e-12 * naive.abs().max(1.0));
    }

    #[test]
    fn axpy_accumulates() {
        let mut y = vec![1.0f64; 5];
        axpy(&mut y, 2.0, &[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(y, vec![3.0, 5.0, 7.0, 9.0, 11.0]);
    }

    #[test]
    fn zaxpy_is_complex_multiply_accumulate() {
        // (1 + 2i) * (3 + 4i) = -5 + 10i
        let mut re = vec![0.0f64];
        let mut im = vec![0.0f64];
        zaxpy(&mut re, &mut im, 1.0, 2.0, &[3.0], &[4.0]);
        assert!((re[0] + 5.0).abs() < 1e-15);
        assert!((im[0] - 10.0).abs() < 1e-15);
    }
}
