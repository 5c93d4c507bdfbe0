//! Fully connected layer over the last axis: y = x W^T + b.

use crate::error::{Error, Result};
use crate::ops::linalg::{gemm_nn, gemm_nt, gemm_tn, sum};
use crate::scalar::Element;
use crate::tensor::Tensor;

fn check<E: Element>(x: &Tensor<E>, w: &Tensor<E>, b: Option<&Tensor<E>>) -> Result<(usize, usize, usize)> {
    let xd = x.dims();
    let wd = w.dims();
    if xd.len() != 2 || wd.len() != 2 {
        return Err(Error::shape("linear", format!("need [N,in] and [out,in], got {:?} and {:?}", xd, wd)));
    }
    if xd[1] != wd[1] {
        return Err(Error::shape("linear", format!("input width {} vs weight width {}", xd[1], wd[1])));
    }
    if let Some(b) = b {
        if b.dims() != [wd[0]] {
            return Err(Error::shape("linear", format!("bias {:?} vs {} outputs", b.dims(), wd[0])));
        }
    }
    Ok((xd[0], xd[1], wd[0]))
}

/// x: [N, in], w: [out, in], b: [out]. Returns [N, out].
pub fn forward<E: Element>(x: &Tensor<E>, w: &Tensor<E>, b: Option<&Tensor<E>>) -> Result<Tensor<E>> {
    let (n, k, out) = check(x, w, b)?;
    let mut y = Tensor::zeros([n, out]);
    gemm_nt(n, k, out, x.data(), w.data(), y.data_mut());
    if let Some(b) = b {
        let bs = b.data();
        for row in y.data_mut().chunks_exact_mut(out) {
            for (v, &bi) in row.iter_mut().zip(bs) {
                *v += bi;
            }
        }
    }
    Ok(y)
}

/// Returns (dx, dw, db); db is None when the layer has no bias.
pub fn backward<E: Element>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    has_bias: bool,
    dy: &Tensor<E>,
) -> Result<(Tensor<E>, Tensor<E>, Option<Tensor<E>>)> {
    let (n, k, out) = check(x, w, None)?;
    if dy.dims() != [n, out] {
        return Err(Error::shape("linear", format!("grad {:?} vs output [{}, {}]", dy.dims(), n, out)));
    }
    // dx[N,in] = dy[N,out] * w[out,in]
    let mut dx = Tensor::zeros([n, k]);
    gemm_nn(n, out, k, dy.data(), w.data(), dx.data_mut());
    // dw[out,in] = dy^T[out,N] * x[N,in]
    let mut dw = Tensor::zeros([out, k]);
    gemm_tn(out, n, k, dy.data(), x.data(), dw.data_mut());
    let db = if has_bias {
        let mut db = Tensor::zeros([out]);
        let mut col = vec![E::zero(); n];
        for j in 0..out {
            for (i, c) in col.iter_mut().enumerate() {
                *c = dy.data()[i * out + j];
            }
            db.data_mut()[j] = sum(&col);
        }
        Some(db)
    } else {
        None
    };
    Ok((dx, dw, db))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_f64, seeded};
    use rand::Rng;

    fn randn(rng: &mut impl Rng, dims: &[usize]) -> Tensor<f64> {
        let mut t = Tensor::zeros(dims);
        for v in t.data_mut() {
            *v = normal_f64(rng);
        }
        t
    }

    #[test]
    fn forward_matches_explicit_loops() {
        let mut rng = seeded(11);
        let x = randn(&mut rng, &[4, 7]);
        let w = randn(&mut rng, &[5, 7]);
        let b = randn(&mut rng, &[5]);
        let y = forward(&x, &w, Some(&b)).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                let mut acc = b.data()[j];
                for t in 0..7 {
                    acc += x.data()[i * 7 + t] * w.data()[j * 7 + t];
                }
                assert!((y.data()[i * 5 + j] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_explicit_loops() {
        let mut rng = seeded(12);
        let x = randn(&mut rng, &[3, 6]);
        let w = randn(&mut rng, &[4, 6]);
        let dy = randn(&mut rng, &[3, 4]);
        let (dx, dw, db) = backward(&x, &w, true, &dy).unwrap();
        let db = db.unwrap();
        for i in 0..3 {
            for t in 0..6 {
                let mut acc = 0.0;
                for j in 0..4 {
                    acc += dy.data()[i * 4 + j] * w.data()[j * 6 + t];
                }
                assert!((dx.data()[i * 6 + t] - acc).abs() < 1e-12);
            }
        }
        for j in 0..4 {
            let mut accb = 0.0;
            for i in 0..3 {
                accb += dy.data()[i * 4 + j];
            }
            assert!((db.data()[j] - accb).abs() < 1e-12);
            for t in 0..6 {
                let mut acc = 0.0;
                for i in 0..3 {
                    acc += dy.data()[i * 4 + j] * x.data()[i * 6 + t];
                }
                assert!((dw.data()[j * 6 + t] - acc).abs() < 1e-12);
            }
        }
    }
}
