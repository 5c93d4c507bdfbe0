//! Pooling and axis reductions.

use rayon::prelude::*;

use super::linalg::sum;
use crate::error::{Error, Result};
use crate::scalar::Element;
use crate::tensor::Tensor;

/// `[N, C, H, W] -> [N, C]`, spatial mean.
pub fn global_avg_pool<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let d = x.dims();
    if d.len() != 4 {
        return Err(Error::shape("global_avg_pool", format!("input must be [N,C,H,W], got {:?}", d)));
    }
    let hw = d[2] * d[3];
    let inv = E::from_f64(1.0 / hw as f64);
    let data = x
        .data()
        .chunks_exact(hw)
        .map(|plane| sum(plane) * inv)
        .collect();
    Tensor::from_vec([d[0], d[1]], data)
}

pub fn global_avg_pool_backward<E: Element>(x_dims: &[usize], dy: &Tensor<E>) -> Tensor<E> {
    let hw = x_dims[2] * x_dims[3];
    let inv = E::from_f64(1.0 / hw as f64);
    let mut dx = Tensor::zeros(x_dims);
    for (plane, &g) in dx.data_mut().chunks_exact_mut(hw).zip(dy.data()) {
        plane.fill(g * inv);
    }
    dx
}

/// Max pooling with saved argmax indices (relative to each input plane).
/// Ties resolve to the first maximum in row-major scan order.
pub fn max_pool2d<E: Element>(
    x: &Tensor<E>,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<E>, Vec<u32>)> {
    let d = x.dims();
    if d.len() != 4 {
        return Err(Error::shape("max_pool2d", format!("input must be [N,C,H,W], got {:?}", d)));
    }
    let (n, c, h, w) = (d[0], d[1], d[2], d[3]);
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(Error::shape("max_pool2d", "window larger than padded input"));
    }
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut y = Tensor::zeros([n, c, oh, ow]);
    let mut arg = vec![0u32; n * c * oh * ow];
    let xs = x.data();
    y.data_mut()
        .par_chunks_exact_mut(oh * ow)
        .zip(arg.par_chunks_exact_mut(oh * ow))
        .enumerate()
        .for_each(|(plane_idx, (yp, ap))| {
            let xp = &xs[plane_idx * h * w..(plane_idx + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = E::neg_infinity();
                    let mut best_at = 0u32;
                    for ki in 0..k {
                        let iy = (oy * stride + ki) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kj in 0..k {
                            let ix = (ox * stride + kj) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let at = iy as usize * w + ix as usize;
                            if xp[at] > best {
                                best = xp[at];
                                best_at = at as u32;
                            }
                        }
                    }
                    yp[oy * ow + ox] = best;
                    ap[oy * ow + ox] = best_at;
                }
            }
        });
    Ok((y, arg))
}

pub fn max_pool2d_backward<E: Element>(
    x_dims: &[usize],
    out_hw: (usize, usize),
    argmax: &[u32],
    dy: &Tensor<E>,
) -> Tensor<E> {
    let hw = x_dims[2] * x_dims[3];
    let l = out_hw.0 * out_hw.1;
    let mut dx = Tensor::zeros(x_dims);
    let dxs = dx.data_mut();
    for (plane_idx, (gp, ap)) in dy.data().chunks_exact(l).zip(argmax.chunks_exact(l)).enumerate() {
        let base = plane_idx * hw;
        for (&g, &at) in gp.iter().zip(ap) {
            dxs[base + at as usize] += g;
        }
    }
    dx
}

/// Sums values in an order that does not depend on their input order:
/// sort ascending, then combine adjacent pairs until one value remains.
/// Duplicating every input exactly doubles the result, bit for bit.
pub fn orderless_sum<E: Element>(vals: &mut [E]) -> E {
    if vals.is_empty() {
        return E::zero();
    }
    vals.sort_unstable_by(|a, b| a.partial_cmp(b).expect("non-finite value in orderless_sum"));
    let mut len = vals.len();
    while len > 1 {
        let half = len / 2;
        for i in 0..half {
            vals[i] = vals[2 * i] + vals[2 * i + 1];
        }
        if len % 2 == 1 {
            vals[half] = vals[len - 1];
            len = half + 1;
        } else {
            len = half;
        }
    }
    vals[0]
}

/// Mean over one axis. The reduction is permutation invariant bit for bit,
/// which makes temporal score averaging immune to frame reordering; see
/// [`orderless_sum`].
pub fn mean_axis<E: Element>(x: &Tensor<E>, axis: usize) -> Result<Tensor<E>> {
    let d = x.dims();
    if axis >= d.len() {
        return Err(Error::shape("mean_axis", format!("axis {} out of range for {:?}", axis, d)));
    }
    if d.len() == 1 {
        // Reducing the only axis yields a scalar-shaped [1] tensor.
        let mut buf = x.data().to_vec();
        let total = orderless_sum(&mut buf);
        return Tensor::from_vec([1], vec![total / E::from_f64(d[0] as f64)]);
    }
    let (_outer, len, inner) = x.shape().split_at_axis(axis);
    let inv = E::from_f64(1.0 / len as f64);
    let mut out_dims = d.to_vec();
    out_dims.remove(axis);
    let mut y = Tensor::zeros(out_dims);
    let xs = x.data();
    let ys = y.data_mut();
    ys.par_chunks_mut(inner).enumerate().for_each(|(o, yrow)| {
        let mut buf = vec![E::zero(); len];
        for i in 0..inner {
            for (a, slot) in buf.iter_mut().enumerate() {
                *slot = xs[(o * len + a) * inner + i];
            }
            yrow[i] = orderless_sum(&mut buf) * inv;
        }
    });
    Ok(y)
}

pub fn mean_axis_backward<E: Element>(x_dims: &[usize], axis: usize, dy: &Tensor<E>) -> Tensor<E> {
    let len = x_dims[axis];
    let inv = E::from_f64(1.0 / len as f64);
    let inner: usize = x_dims[axis + 1..].iter().product();
    let mut dx = Tensor::zeros(x_dims);
    let dxs = dx.data_mut();
    let dys = dy.data();
    let outer: usize = x_dims[..axis].iter().product();
    for o in 0..outer {
        for a in 0..len {
            for i in 0..inner {
                dxs[(o * len + a) * inner + i] = dys[o * inner + i] * inv;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orderless_sum_is_permutation_invariant() {
        let base = [0.1f32, 7.25, -3.5, 0.7, 1e-3, 42.0, -0.125];
        let mut a = base;
        let mut b = base;
        b.reverse();
        b.swap(1, 3);
        assert_eq!(orderless_sum(&mut a).to_bits(), orderless_sum(&mut b).to_bits());
    }

    #[test]
    fn orderless_sum_doubles_exactly_on_duplication() {
        let base = [0.3f32, -1.7, 2.25, 9.5, -0.031];
        let mut once = base;
        let mut twice = [0.0f32; 10];
        twice[..5].copy_from_slice(&base);
        twice[5..].copy_from_slice(&base);
        let s1 = orderless_sum(&mut once);
        let s2 = orderless_sum(&mut twice);
        assert_eq!((s1 * 2.0).to_bits(), s2.to_bits());
    }

    #[test]
    fn mean_axis_is_permutation_invariant_bitwise() {
        // [1, 3, 2] layout: reversing the middle axis must not change the
        // mean over that axis in any bit.
        let x = Tensor::<f32>::from_vec([1, 3, 2], vec![0.1, -7.0, 0.52, 3.3, 1e-4, 2.75]).unwrap();
        let rev = Tensor::<f32>::from_vec([1, 3, 2], vec![1e-4, 2.75, 0.52, 3.3, 0.1, -7.0]).unwrap();
        let a = mean_axis(&x, 1).unwrap();
        let b = mean_axis(&rev, 1).unwrap();
        for (&p, &q) in a.data().iter().zip(b.data()) {
            assert_eq!(p.to_bits(), q.to_bits());
        }
    }

    #[test]
    fn gap_averages_each_plane() {
        let x = Tensor::<f64>::from_fn([2, 3, 2, 2], |i| i as f64);
        let y = global_avg_pool(&x).unwrap();
        assert_eq!(y.dims(), [2, 3]);
        for (pi, &v) in y.data().iter().enumerate() {
            let want = (0..4).map(|p| (pi * 4 + p) as f64).sum::<f64>() / 4.0;
            assert_eq!(v, want);
        }
        let dy = Tensor::<f64>::from_fn([2, 3], |i| (i + 1) as f64);
        let dx = global_avg_pool_backward(&[2, 3, 2, 2], &dy);
        for (pi, plane) in dx.data().chunks_exact(4).enumerate() {
            for &g in plane {
                assert_eq!(g, (pi + 1) as f64 / 4.0);
            }
        }
    }

    #[test]
    fn max_pool_matches_direct_scan() {
        use crate::rng::{normal_f64, seeded};
        let mut rng = seeded(401);
        let x = Tensor::<f64>::from_fn([2, 3, 7, 6], |_| normal_f64(&mut rng));
        let (y, argmax) = max_pool2d(&x, 3, 2, 1).unwrap();
        assert_eq!(y.dims(), [2, 3, 4, 3]);
        let [_, _, h, w] = <[usize; 4]>::try_from(x.dims()).unwrap();
        for (plane_idx, plane) in x.data().chunks_exact(h * w).enumerate() {
            for oy in 0..4 {
                for ox in 0..3 {
                    let mut best = f64::NEG_INFINITY;
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (oy * 2 + ky) as isize - 1;
                            let ix = (ox * 2 + kx) as isize - 1;
                            if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                                best = best.max(plane[iy as usize * w + ix as usize]);
                            }
                        }
                    }
                    let got = y.data()[(plane_idx * 4 + oy) * 3 + ox];
                    assert_eq!(got, best);
                    let at = argmax[(plane_idx * 4 + oy) * 3 + ox] as usize;
                    assert_eq!(plane[at], best, "argmax must point at the max");
                }
            }
        }
        // Backward routes each output grad to its argmax cell.
        let dy = Tensor::<f64>::from_fn(y.dims(), |i| (i % 5) as f64 + 1.0);
        let dx = max_pool2d_backward(x.dims(), (4, 3), &argmax, &dy);
        let total_in: f64 = dx.data().iter().sum();
        let total_out: f64 = dy.data().iter().sum();
        assert!((total_in - total_out).abs() < 1e-12);
    }

    #[test]
    fn mean_axis_backward_spreads_evenly() {
        let x_dims = [2usize, 4, 3];
        let dy = Tensor::<f64>::from_fn([2, 3], |i| i as f64);
        let dx = mean_axis_backward(&x_dims, 1, &dy);
        for o in 0..2 {
            for a in 0..4 {
                for i in 0..3 {
                    assert_eq!(dx.data()[(o * 4 + a) * 3 + i], dy.data()[o * 3 + i] / 4.0);
                }
            }
        }
    }
}
