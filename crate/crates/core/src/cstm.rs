//! Channel-wise spatiotemporal convolution.
//!
//! Factorizes a 3D convolution into a cheap temporal stage and a standard
//! spatial stage: every channel first mixes its own three neighboring frames
//! with a private length-3 kernel (zero-padded, so the frame count is
//! preserved), then a dense 3x3 convolution models spatial structure within
//! each frame. The temporal stage costs 3*C weights instead of the 3*C*C an
//! ordinary temporal convolution would need.

use crate::graph::{Graph, ValueId};
use crate::norm::{apply_norm, BnSite, NormCtx, StatSink};
use crate::ops::ConvSpec;
use crate::scalar::Element;
use crate::{Error, Result};

/// Which temporal convolution the module runs. Channel-wise is the designed
/// form (3 weights per channel); the ordinary dense variant exists for cost
/// comparisons and ablations, spending 3*C weights per channel instead.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TemporalConv {
    Channelwise,
    Ordinary,
}

impl TemporalConv {
    /// Weight dims for a C-channel temporal kernel of this kind.
    pub fn weight_dims(self, c: usize) -> Vec<usize> {
        match self {
            TemporalConv::Channelwise => vec![c, 1, 3],
            TemporalConv::Ordinary => vec![c, c, 3],
        }
    }
}

impl std::str::FromStr for TemporalConv {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "channelwise" => Ok(TemporalConv::Channelwise),
            "ordinary" => Ok(TemporalConv::Ordinary),
            other => Err(Error::Usage(format!(
                "temporal conv must be `channelwise` or `ordinary`, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for TemporalConv {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TemporalConv::Channelwise => "channelwise",
            TemporalConv::Ordinary => "ordinary",
        })
    }
}

/// Graph handles for one CSTM instance over C channels.
///
/// `temporal` is the frame-mixing kernel: `[C,1,3]` selects the channel-wise
/// form, `[C,C,3]` the ordinary dense one. `spatial` is a dense 3x3
/// convolution weight, shape `[C,C,3,3]`.
pub struct CstmParams<'a, E: Element> {
    pub temporal: ValueId,
    pub spatial: ValueId,
    pub norm: BnSite<'a, E>,
}

/// Temporal conv -> spatial conv -> batchnorm on a `[N,T,C,H,W]` value.
///
/// The temporal stage runs at the input resolution; `stride` applies to the
/// spatial convolution only, so the output is `[N,T,C,H',W']` and equals the
/// input shape when `stride == 1`.
pub fn cstm_forward<E: Element>(
    g: &mut Graph<E>,
    x: ValueId,
    stride: usize,
    p: &CstmParams<'_, E>,
    ctx: &NormCtx<E>,
    sink: &mut StatSink<E>,
) -> Result<ValueId> {
    let dims = g.value(x).dims().to_vec();
    let [n, t, c, h, w] = dims[..] else {
        return Err(Error::shape("cstm", format!("expected [N,T,C,H,W] input, got {dims:?}")));
    };
    let tw = g.value(p.temporal).dims().to_vec();
    let temporal_spec = if tw == [c, 1, 3] {
        ConvSpec::temporal(c, 3, c)
    } else if tw == [c, c, 3] {
        ConvSpec::temporal(c, 3, 1)
    } else {
        return Err(Error::Config(format!(
            "cstm: temporal kernel shaped {tw:?} does not fit {c} input channels \
             (want [{c},1,3] channel-wise or [{c},{c},3] ordinary)"
        )));
    };
    let sw = g.value(p.spatial).dims();
    if sw != [c, c, 3, 3] {
        return Err(Error::Config(format!(
            "cstm: spatial weight shaped {sw:?} does not fit {c} input channels (want [{c},{c},3,3])"
        )));
    }

    // Move T innermost so each (sample, pixel) row becomes an independent
    // 1D sequence: [N,T,C,H,W] -> [N,H,W,C,T] -> [N*H*W, C, T].
    let rows = g.permute(x, &[0, 3, 4, 2, 1])?;
    let rows = g.reshape(rows, &[n * h * w, c, t])?;
    let mixed = g.conv1d(rows, p.temporal, temporal_spec)?;
    let mixed = g.reshape(mixed, &[n, h, w, c, t])?;
    let mixed = g.permute(mixed, &[0, 4, 3, 1, 2])?;

    // Spatial stage treats every frame as an ordinary image batch entry.
    let frames = g.reshape(mixed, &[n * t, c, h, w])?;
    let spec = ConvSpec::plane(c, c, 3, stride, 1);
    let (oh, ow) = spec.out_hw(h, w)?;
    let conv = g.conv2d(frames, p.spatial, None, spec)?;
    let y = apply_norm(g, conv, &p.norm, ctx, sink)?;
    g.reshape(y, &[n, t, c, oh, ow])
}
