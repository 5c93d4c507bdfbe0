//! Small dense kernels shared by the convolution, linear and norm paths.
//!
//! Reductions use fixed-width independent accumulator lanes, so results do
//! not depend on thread count or scheduling: every value is combined in the
//! same order on every run. The matmul kernels hold a 4x16 tile of the
//! output in registers across the whole reduction, which keeps the FMA
//! pipeline busy instead of bottlenecking on one serial accumulator chain.

use crate::scalar::Element;

/// Rows per register tile.
const MR: usize = 4;
/// Columns per register tile.
const NR: usize = 16;

/// Dot product over eight independent 8-lane partial-sum chains.
pub fn dot<E: Element>(a: &[E], b: &[E]) -> E {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [[E::zero(); 8]; 8];
    let mut ca = a.chunks_exact(64);
    let mut cb = b.chunks_exact(64);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for ch in 0..8 {
            for l in 0..8 {
                acc[ch][l] = xa[ch * 8 + l].mul_add(xb[ch * 8 + l], acc[ch][l]);
            }
        }
    }
    let mut lanes = [E::zero(); 8];
    let mut ra = ca.remainder().chunks_exact(8);
    let mut rb = cb.remainder().chunks_exact(8);
    for (xa, xb) in (&mut ra).zip(&mut rb) {
        for l in 0..8 {
            lanes[l] = xa[l].mul_add(xb[l], lanes[l]);
        }
    }
    let mut tail = E::zero();
    for (&xa, &xb) in ra.remainder().iter().zip(rb.remainder()) {
        tail = xa.mul_add(xb, tail);
    }
    for ch in 0..8 {
        for l in 0..8 {
            lanes[l] += acc[ch][l];
        }
    }
    (((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])))
        + tail
}

/// Sum with eight independent partial sums.
pub fn sum<E: Element>(a: &[E]) -> E {
    let mut acc = [E::zero(); 8];
    let mut ch = a.chunks_exact(8);
    for xa in &mut ch {
        for l in 0..8 {
            acc[l] += xa[l];
        }
    }
    let mut tail = E::zero();
    for &xa in ch.remainder() {
        tail += xa;
    }
    (((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))) + tail
}

/// `c += alpha * b`, elementwise over equal-length slices.
pub fn axpy<E: Element>(alpha: E, b: &[E], c: &mut [E]) {
    debug_assert_eq!(b.len(), c.len());
    for (cj, &bj) in c.iter_mut().zip(b) {
        *cj = alpha.mul_add(bj, *cj);
    }
}

/// One register tile: `c[i0..i0+rows, jb..jb+NR] += a_col(p, i) . b[p, jb..]`
/// with `a_col` abstracting the A layout (normal or transposed).
#[inline(always)]
fn tile<E: Element>(
    k: usize,
    n: usize,
    rows: usize,
    a_col: impl Fn(usize, usize) -> E,
    b: &[E],
    c: &mut [E],
    i0: usize,
    jb: usize,
) {
    debug_assert!(rows <= MR);
    let mut acc = [[E::zero(); NR]; MR];
    for p in 0..k {
        let bp: &[E; NR] = b[p * n + jb..p * n + jb + NR].try_into().unwrap();
        for r in 0..rows {
            let av = a_col(p, i0 + r);
            for l in 0..NR {
                acc[r][l] = av.mul_add(bp[l], acc[r][l]);
            }
        }
    }
    for r in 0..rows {
        let crow = &mut c[(i0 + r) * n + jb..(i0 + r) * n + jb + NR];
        for l in 0..NR {
            crow[l] += acc[r][l];
        }
    }
}

/// Column remainder (fewer than NR columns): plain row-major accumulation.
#[inline(always)]
fn col_tail<E: Element>(
    k: usize,
    n: usize,
    m: usize,
    a_col: impl Fn(usize, usize) -> E,
    b: &[E],
    c: &mut [E],
    jb: usize,
) {
    for i in 0..m {
        for p in 0..k {
            let av = a_col(p, i);
            for j in jb..n {
                c[i * n + j] = av.mul_add(b[p * n + j], c[i * n + j]);
            }
        }
    }
}

#[inline(always)]
fn gemm_with<E: Element>(
    m: usize,
    k: usize,
    n: usize,
    a_col: impl Fn(usize, usize) -> E + Copy,
    b: &[E],
    c: &mut [E],
) {
    let mut jb = 0;
    while jb + NR <= n {
        let mut i = 0;
        while i + MR <= m {
            tile(k, n, MR, a_col, b, c, i, jb);
            i += MR;
        }
        if i < m {
            tile(k, n, m - i, a_col, b, c, i, jb);
        }
        jb += NR;
    }
    if jb < n {
        col_tail(k, n, m, a_col, b, c, jb);
    }
}

/// `c[m,n] += a[m,k] . b[k,n]`, all row-major.
pub fn gemm_nn<E: Element>(m: usize, k: usize, n: usize, a: &[E], b: &[E], c: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    gemm_with(m, k, n, |p, i| a[i * k + p], b, c);
}

/// `c[m,n] += a[k,m]^T . b[k,n]`, all row-major.
pub fn gemm_tn<E: Element>(m: usize, k: usize, n: usize, a: &[E], b: &[E], c: &mut [E]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    gemm_with(m, k, n, |p, i| a[p * m + i], b, c);
}

/// `c[m,n] += a[m,k] . b[n,k]^T`, all row-major.
pub fn gemm_nt<E: Element>(m: usize, k: usize, n: usize, a: &[E], b: &[E], c: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for (arow, crow) in a.chunks_exact(k).zip(c.chunks_exact_mut(n)) {
        for (cij, brow) in crow.iter_mut().zip(b.chunks_exact(k)) {
            *cij += dot(arow, brow);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
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
    fn gemm_variants_agree_with_naive() {
        let mut rng = crate::rng::seeded(11);
        // spans below, at and across the 4x16 tile boundaries
        for &(m, k, n) in &[(1, 1, 1), (2, 3, 4), (5, 17, 9), (8, 33, 26), (4, 16, 16), (13, 70, 37)] {
            let a: Vec<f64> = (0..m * k).map(|_| crate::rng::normal_f64(&mut rng)).collect();
            let b: Vec<f64> = (0..k * n).map(|_| crate::rng::normal_f64(&mut rng)).collect();
            let want = naive_nn(m, k, n, &a, &b);

            let mut c = vec![0.0; m * n];
            gemm_nn(m, k, n, &a, &b, &mut c);
            for (got, want) in c.iter().zip(&want) {
                assert!((got - want).abs() < 1e-12);
            }

            // b transposed: b_t[n,k]
            let mut bt = vec![0.0; n * k];
            for p in 0..k {
                for j in 0..n {
                    bt[j * k + p] = b[p * n + j];
                }
            }
            let mut c = vec![0.0; m * n];
            gemm_nt(m, k, n, &a, &bt, &mut c);
            for (got, want) in c.iter().zip(&want) {
                assert!((got - want).abs() < 1e-12);
            }

            // a transposed: a_t[k,m]
            let mut at = vec![0.0; k * m];
            for i in 0..m {
                for p in 0..k {
                    at[p * m + i] = a[i * k + p];
                }
            }
            let mut c = vec![0.0; m * n];
            gemm_tn(m, k, n, &at, &b, &mut c);
            for (got, want) in c.iter().zip(&want) {
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gemm_accumulates_into_existing_output() {
        let a = [1.0f64, 2.0];
        let b = [10.0f64, 100.0];
        let mut c = [7.0f64];
        gemm_nn(1, 2, 1, &a, &b, &mut c);
        assert_eq!(c[0], 7.0 + 210.0);
    }

    #[test]
    fn reductions_match_naive_order_free() {
        let xs: Vec<f64> = (0..1003).map(|i| (i as f64 * 0.371).sin()).collect();
        let naive: f64 = xs.iter().sum();
        assert!((sum(&xs) - naive).abs() < 1e-9);
        let dotted: f64 = xs.iter().map(|x| x * 0.5 * x).sum();
        let half: Vec<f64> = xs.iter().map(|x| 0.5 * x).collect();
        assert!((dot(&xs, &half) - dotted).abs() < 1e-9);
    }
}
