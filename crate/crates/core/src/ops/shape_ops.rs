//! Layout-changing operations: permute, slice, concat.

use crate::error::{Error, Result};
use crate::scalar::Element;
use crate::tensor::{Shape, Tensor};

pub fn check_axes(rank: usize, axes: &[usize]) -> Result<()> {
    let mut seen = vec![false; rank];
    if axes.len() != rank {
        return Err(Error::shape("permute", format!("{} axes for rank {}", axes.len(), rank)));
    }
    for &a in axes {
        if a >= rank || seen[a] {
            return Err(Error::shape("permute", format!("invalid axes {:?} for rank {}", axes, rank)));
        }
        seen[a] = true;
    }
    Ok(())
}

pub fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// Materialized transpose: output axis `i` is input axis `axes[i]`.
pub fn permute<E: Element>(x: &Tensor<E>, axes: &[usize]) -> Result<Tensor<E>> {
    check_axes(x.shape().rank(), axes)?;
    let in_dims = x.dims();
    let in_strides = x.shape().strides();
    let out_dims: Vec<usize> = axes.iter().map(|&a| in_dims[a]).collect();
    let src_stride: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let rank = out_dims.len();

    let mut y = Tensor::zeros(Shape::new(out_dims.clone()));
    let xs = x.data();
    let ys = y.data_mut();

    // Walk the output in row-major order, keeping the source offset
    // incrementally updated; the innermost loop is a strided gather.
    let inner_len = out_dims[rank - 1];
    let inner_stride = src_stride[rank - 1];
    let outer: usize = out_dims[..rank - 1].iter().product();
    let mut idx = vec![0usize; rank - 1];
    let mut src_base = 0usize;
    for o in 0..outer {
        let dst = &mut ys[o * inner_len..(o + 1) * inner_len];
        if inner_stride == 1 {
            dst.copy_from_slice(&xs[src_base..src_base + inner_len]);
        } else {
            let mut src = src_base;
            for v in dst.iter_mut() {
                *v = xs[src];
                src += inner_stride;
            }
        }
        // Increment the multi-index over the leading axes.
        for ax in (0..rank - 1).rev() {
            idx[ax] += 1;
            src_base += src_stride[ax];
            if idx[ax] < out_dims[ax] {
                break;
            }
            src_base -= src_stride[ax] * out_dims[ax];
            idx[ax] = 0;
        }
    }
    Ok(y)
}

pub fn slice<E: Element>(x: &Tensor<E>, axis: usize, start: usize, len: usize) -> Result<Tensor<E>> {
    let d = x.dims();
    if axis >= d.len() {
        return Err(Error::shape("slice", format!("axis {} out of range for {:?}", axis, d)));
    }
    if len == 0 || start + len > d[axis] {
        return Err(Error::shape(
            "slice",
            format!("range {}..{} out of bounds for axis of extent {}", start, start + len, d[axis]),
        ));
    }
    let (outer, full, inner) = x.shape().split_at_axis(axis);
    let mut out_dims = d.to_vec();
    out_dims[axis] = len;
    let mut y = Tensor::zeros(out_dims);
    let xs = x.data();
    let ys = y.data_mut();
    for o in 0..outer {
        let src = (o * full + start) * inner;
        let dst = o * len * inner;
        ys[dst..dst + len * inner].copy_from_slice(&xs[src..src + len * inner]);
    }
    Ok(y)
}

/// Scatter of an output gradient back into the sliced range of a zero tensor.
pub fn slice_backward<E: Element>(
    x_dims: &[usize],
    axis: usize,
    start: usize,
    dy: &Tensor<E>,
) -> Tensor<E> {
    let mut dx = Tensor::zeros(x_dims);
    let outer: usize = x_dims[..axis].iter().product();
    let inner: usize = x_dims[axis + 1..].iter().product();
    let full = x_dims[axis];
    let len = dy.dims()[axis];
    let dxs = dx.data_mut();
    let dys = dy.data();
    for o in 0..outer {
        let dst = (o * full + start) * inner;
        let src = o * len * inner;
        dxs[dst..dst + len * inner].copy_from_slice(&dys[src..src + len * inner]);
    }
    dx
}

pub fn concat<E: Element>(parts: &[&Tensor<E>], axis: usize) -> Result<Tensor<E>> {
    if parts.is_empty() {
        return Err(Error::shape("concat", "no tensors given"));
    }
    let first = parts[0].dims();
    if axis >= first.len() {
        return Err(Error::shape("concat", format!("axis {} out of range for {:?}", axis, first)));
    }
    let mut total = 0;
    for p in parts {
        let d = p.dims();
        if d.len() != first.len()
            || d.iter().zip(first).enumerate().any(|(i, (a, b))| i != axis && a != b)
        {
            return Err(Error::shape(
                "concat",
                format!("incompatible shapes {:?} and {:?} along axis {}", first, d, axis),
            ));
        }
        total += d[axis];
    }
    let mut out_dims = first.to_vec();
    out_dims[axis] = total;
    let outer: usize = first[..axis].iter().product();
    let inner: usize = first[axis + 1..].iter().product();
    let mut y = Tensor::zeros(out_dims);
    let ys = y.data_mut();
    let mut offset = 0;
    for p in parts {
        let len = p.dims()[axis];
        let ps = p.data();
        for o in 0..outer {
            let dst = (o * total + offset) * inner;
            let src = o * len * inner;
            ys[dst..dst + len * inner].copy_from_slice(&ps[src..src + len * inner]);
        }
        offset += len;
    }
    Ok(y)
}

/// Splits a concat gradient back into per-part gradients.
pub fn concat_backward<E: Element>(
    part_extents: &[usize],
    axis: usize,
    dy: &Tensor<E>,
) -> Vec<Tensor<E>> {
    let mut grads = Vec::with_capacity(part_extents.len());
    let mut offset = 0;
    for &len in part_extents {
        grads.push(slice(dy, axis, offset, len).expect("concat_backward split"));
        offset += len;
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_then_inverse_is_identity() {
        let x = Tensor::<f64>::from_fn([2, 3, 4, 5], |i| i as f64);
        for axes in [[3usize, 1, 2, 0], [1, 0, 3, 2], [0, 1, 2, 3], [2, 3, 0, 1]] {
            let y = permute(&x, &axes).unwrap();
            let back = permute(&y, &inverse_axes(&axes)).unwrap();
            assert_eq!(back.data(), x.data());
            assert_eq!(back.dims(), x.dims());
        }
    }

    #[test]
    fn permute_matches_index_arithmetic() {
        let x = Tensor::<f64>::from_fn([2, 3, 4], |i| i as f64);
        let y = permute(&x, &[2, 0, 1]).unwrap();
        assert_eq!(y.dims(), [4, 2, 3]);
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    let src = (a * 3 + b) * 4 + c;
                    let dst = (c * 2 + a) * 3 + b;
                    assert_eq!(y.data()[dst], x.data()[src]);
                }
            }
        }
    }

    #[test]
    fn slice_concat_round_trip() {
        let x = Tensor::<f32>::from_fn([2, 5, 3], |i| i as f32);
        let a = slice(&x, 1, 0, 2).unwrap();
        let b = slice(&x, 1, 2, 3).unwrap();
        let back = concat(&[&a, &b], 1).unwrap();
        assert_eq!(back.data(), x.data());
    }
}
