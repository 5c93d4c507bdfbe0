//! Channel-wise motion extraction between adjacent frames.
//!
//! Works in a reduced channel space to stay cheap: a 1x1 convolution shrinks
//! C to C/r, then for every adjacent frame pair the next frame is passed
//! through a channel-wise 3x3 convolution and the current frame is subtracted
//! from the result. That yields T-1 motion maps; a zero map is appended so the
//! temporal length is preserved, and a final 1x1 convolution restores C
//! channels before batchnorm.

use crate::graph::{Graph, ValueId};
use crate::norm::{apply_norm, BnSite, NormCtx, StatSink};
use crate::ops::ConvSpec;
use crate::scalar::Element;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Graph handles for one CMM instance over C channels reduced to C/r.
///
/// `reduce` is `[C/r,C,1,1]`, `motion` is the shared channel-wise kernel
/// `[C/r,1,3,3]`, `restore` is `[C,C/r,1,1]`.
pub struct CmmParams<'a, E: Element> {
    pub reduce: ValueId,
    pub motion: ValueId,
    pub restore: ValueId,
    pub norm: BnSite<'a, E>,
}

/// Reduce -> adjacent-frame difference stack -> restore -> batchnorm on a
/// `[N,T,C,H,W]` value.
///
/// `stride` applies to the reduce convolution, so all motion arithmetic runs
/// at the output resolution; the result is `[N,T,C,H',W']` and matches the
/// input shape when `stride == 1`. The final temporal position holds the
/// appended zero map, normalized like every other frame.
///
/// `tag`, when given, labels the pre-restore difference stack `<tag>.motion`
/// so it can be pulled out of the graph for inspection.
pub fn cmm_forward<E: Element>(
    g: &mut Graph<E>,
    x: ValueId,
    stride: usize,
    p: &CmmParams<'_, E>,
    ctx: &NormCtx<E>,
    sink: &mut StatSink<E>,
    tag: Option<&str>,
) -> Result<ValueId> {
    let dims = g.value(x).dims().to_vec();
    let [n, t, c, h, w] = dims[..] else {
        return Err(Error::shape("cmm", format!("expected [N,T,C,H,W] input, got {dims:?}")));
    };
    if t < 2 {
        return Err(Error::shape("cmm", format!("motion needs at least 2 frames, got T={t}")));
    }
    let rd = g.value(p.reduce).dims().to_vec();
    if rd.len() != 4 || rd[1] != c || rd[2] != 1 || rd[3] != 1 {
        return Err(Error::Config(format!(
            "cmm: reduce weight shaped {rd:?} does not fit {c} input channels (want [C/r,{c},1,1])"
        )));
    }
    let cr = rd[0];
    let md = g.value(p.motion).dims();
    if md != [cr, 1, 3, 3] {
        return Err(Error::Config(format!(
            "cmm: motion kernel shaped {md:?} does not fit {cr} reduced channels (want [{cr},1,3,3])"
        )));
    }
    let sd = g.value(p.restore).dims();
    if sd != [c, cr, 1, 1] {
        return Err(Error::Config(format!(
            "cmm: restore weight shaped {sd:?} does not map {cr} reduced channels back to {c}"
        )));
    }

    let frames = g.reshape(x, &[n * t, c, h, w])?;
    let reduce_spec = ConvSpec::plane(c, cr, 1, stride, 0);
    let (oh, ow) = reduce_spec.out_hw(h, w)?;
    let reduced = g.conv2d(frames, p.reduce, None, reduce_spec)?;

    let motion = motion_stack(g, reduced, p.motion, n, t)?;
    if let Some(tag) = tag {
        g.set_label(motion, format!("{tag}.motion"));
    }

    let restored = g.conv2d(motion, p.restore, None, ConvSpec::plane(cr, c, 1, 1, 0))?;
    let y = apply_norm(g, restored, &p.norm, ctx, sink)?;
    g.reshape(y, &[n, t, c, oh, ow])
}

/// Adjacent-frame difference pipeline on an already-reduced `[N*T,C',H,W]`
/// value: conv(frame t+1) - frame t for t in [0,T-2], then a zero map at the
/// final temporal position. Returns the same shape as its input.
pub fn motion_stack<E: Element>(
    g: &mut Graph<E>,
    reduced: ValueId,
    motion_w: ValueId,
    n: usize,
    t: usize,
) -> Result<ValueId> {
    let dims = g.value(reduced).dims().to_vec();
    let [rows, cr, h, w] = dims[..] else {
        return Err(Error::shape("cmm", format!("expected [N*T,C',H,W] input, got {dims:?}")));
    };
    if rows != n * t {
        return Err(Error::shape("cmm", format!("{rows} rows cannot split into {n}x{t} frames")));
    }
    let clip = g.reshape(reduced, &[n, t, cr, h, w])?;
    let next = g.slice(clip, 1, 1, t - 1)?;
    let cur = g.slice(clip, 1, 0, t - 1)?;
    let next = g.reshape(next, &[n * (t - 1), cr, h, w])?;
    let cur = g.reshape(cur, &[n * (t - 1), cr, h, w])?;
    let conv = g.conv2d(next, motion_w, None, ConvSpec::plane_channelwise(cr, 3, 1, 1))?;
    let diff = g.sub(conv, cur)?;
    let diff = g.reshape(diff, &[n, t - 1, cr, h, w])?;
    let last = g.leaf(Tensor::zeros(vec![n, 1, cr, h, w]));
    let full = g.concat(&[diff, last], 1)?;
    g.reshape(full, &[n * t, cr, h, w])
}
