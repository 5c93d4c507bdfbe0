//! Grouped 1D convolution over the trailing axis of `[M, C, T]` tensors.
//!
//! `groups == C` is the channel-wise temporal convolution used by the
//! spatiotemporal branch; `groups == 1` is its ordinary dense ablation.
//! `T` is a handful of frames, so direct loops beat any lowering.

use rayon::prelude::*;

use super::{ConvSpec, KernelSize};
use crate::error::{Error, Result};
use crate::scalar::Element;
use crate::tensor::Tensor;

fn check<E: Element>(x: &Tensor<E>, w: &Tensor<E>, spec: &ConvSpec) -> Result<(usize, usize, usize, usize)> {
    spec.validate()?;
    let k = match spec.kernel {
        KernelSize::OneD(k) => k,
        KernelSize::TwoD(..) => return Err(Error::shape("conv1d", "spec has a 2D kernel")),
    };
    if spec.has_bias {
        return Err(Error::Config("temporal convolutions carry no bias".into()));
    }
    let xd = x.dims();
    if xd.len() != 3 {
        return Err(Error::shape("conv1d", format!("input must be [M,C,T], got {:?}", xd)));
    }
    if xd[1] != spec.in_channels {
        return Err(Error::shape(
            "conv1d",
            format!("axis 1: input has {} channels, spec wants {}", xd[1], spec.in_channels),
        ));
    }
    if w.dims() != spec.weight_dims().as_slice() {
        return Err(Error::shape(
            "conv1d",
            format!("weight is {:?}, spec wants {:?}", w.dims(), spec.weight_dims()),
        ));
    }
    let ot = spec.out_len(xd[2])?;
    Ok((xd[0], xd[2], ot, k))
}

pub fn forward<E: Element>(x: &Tensor<E>, w: &Tensor<E>, spec: &ConvSpec) -> Result<Tensor<E>> {
    let (m, t, ot, k) = check(x, w, spec)?;
    let (cin, cout, g) = (spec.in_channels, spec.out_channels, spec.groups);
    let (cg_in, cg_out) = (cin / g, cout / g);
    let ws = w.data();
    let mut y = Tensor::zeros([m, cout, ot]);
    let (stride, pad) = (spec.stride, spec.padding);
    y.data_mut()
        .par_chunks_exact_mut(cout * ot)
        .zip(x.data().par_chunks_exact(cin * t))
        .for_each(|(ym, xm)| {
            for co in 0..cout {
                let grp = co / cg_out;
                let row = &mut ym[co * ot..(co + 1) * ot];
                for ci in 0..cg_in {
                    let xrow = &xm[(grp * cg_in + ci) * t..(grp * cg_in + ci + 1) * t];
                    let wrow = &ws[(co * cg_in + ci) * k..(co * cg_in + ci + 1) * k];
                    for (ti, out) in row.iter_mut().enumerate() {
                        let mut acc = *out;
                        for (kk, &wv) in wrow.iter().enumerate() {
                            let src = (ti * stride + kk) as isize - pad as isize;
                            if src >= 0 && (src as usize) < t {
                                acc = acc + wv * xrow[src as usize];
                            }
                        }
                        *out = acc;
                    }
                }
            }
        });
    Ok(y)
}

pub fn backward<E: Element>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    spec: &ConvSpec,
    dy: &Tensor<E>,
    need_dx: bool,
    need_dw: bool,
) -> Result<(Option<Tensor<E>>, Option<Tensor<E>>)> {
    let (m, t, ot, k) = check(x, w, spec)?;
    let (cin, cout, g) = (spec.in_channels, spec.out_channels, spec.groups);
    let (cg_in, cg_out) = (cin / g, cout / g);
    debug_assert_eq!(dy.dims(), [m, cout, ot]);
    let (stride, pad) = (spec.stride, spec.padding);

    let dw = if need_dw {
        let mut dw = Tensor::zeros(w.shape().clone());
        let dws = dw.data_mut();
        for mi in 0..m {
            let xm = &x.data()[mi * cin * t..(mi + 1) * cin * t];
            let dym = &dy.data()[mi * cout * ot..(mi + 1) * cout * ot];
            for co in 0..cout {
                let grp = co / cg_out;
                let dyrow = &dym[co * ot..(co + 1) * ot];
                for ci in 0..cg_in {
                    let xrow = &xm[(grp * cg_in + ci) * t..(grp * cg_in + ci + 1) * t];
                    let dwrow = &mut dws[(co * cg_in + ci) * k..(co * cg_in + ci + 1) * k];
                    for (kk, dwv) in dwrow.iter_mut().enumerate() {
                        let mut acc = *dwv;
                        for (ti, &dv) in dyrow.iter().enumerate() {
                            let src = (ti * stride + kk) as isize - pad as isize;
                            if src >= 0 && (src as usize) < t {
                                acc = acc + dv * xrow[src as usize];
                            }
                        }
                        *dwv = acc;
                    }
                }
            }
        }
        Some(dw)
    } else {
        None
    };

    let dx = if need_dx {
        let ws = w.data();
        let mut dx = Tensor::zeros(x.shape().clone());
        dx.data_mut()
            .par_chunks_exact_mut(cin * t)
            .zip(dy.data().par_chunks_exact(cout * ot))
            .for_each(|(dxm, dym)| {
                for co in 0..cout {
                    let grp = co / cg_out;
                    let dyrow = &dym[co * ot..(co + 1) * ot];
                    for ci in 0..cg_in {
                        let dxrow = &mut dxm[(grp * cg_in + ci) * t..(grp * cg_in + ci + 1) * t];
                        let wrow = &ws[(co * cg_in + ci) * k..(co * cg_in + ci + 1) * k];
                        for (ti, &dv) in dyrow.iter().enumerate() {
                            for (kk, &wv) in wrow.iter().enumerate() {
                                let src = (ti * stride + kk) as isize - pad as isize;
                                if src >= 0 && (src as usize) < t {
                                    dxrow[src as usize] += dv * wv;
                                }
                            }
                        }
                    }
                }
            });
        Some(dx)
    } else {
        None
    };

    Ok((dx, dw))
}
