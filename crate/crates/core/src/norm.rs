//! Graph-side handles for a batchnorm site.
//!
//! Parameters (scale, shift) live in the graph as trainable leaves; running
//! statistics live outside it, in whatever store owns the network state.
//! Applying a site in train mode yields updated running stats, which are
//! collected into a [`StatSink`] keyed by the caller's buffer slot so the
//! store can commit them after the forward pass.

use crate::graph::{Graph, ValueId};
use crate::ops::batchnorm::BnMode;
use crate::scalar::Element;
use crate::tensor::Tensor;
use crate::Result;

/// One batchnorm instance: graph ids for the affine parameters plus borrowed
/// running statistics and the slot they should be written back to.
pub struct BnSite<'a, E: Element> {
    pub scale: ValueId,
    pub shift: ValueId,
    pub running_mean: &'a Tensor<E>,
    pub running_var: &'a Tensor<E>,
    /// Identifies this site's running-stat buffers in the owning store.
    pub slot: usize,
}

/// Normalization settings shared by every batchnorm in one forward build.
#[derive(Clone, Copy, Debug)]
pub struct NormCtx<E> {
    pub mode: BnMode,
    pub momentum: E,
    pub eps: E,
}

/// Running-stat updates produced during a forward build: (slot, (mean, var)).
pub type StatSink<E> = Vec<(usize, (Tensor<E>, Tensor<E>))>;

/// Apply one batchnorm site, routing any running-stat update into `sink`.
pub fn apply_norm<E: Element>(
    g: &mut Graph<E>,
    x: ValueId,
    site: &BnSite<'_, E>,
    ctx: &NormCtx<E>,
    sink: &mut StatSink<E>,
) -> Result<ValueId> {
    let (y, update) = g.batch_norm(
        x,
        site.scale,
        site.shift,
        site.running_mean,
        site.running_var,
        ctx.mode,
        ctx.momentum,
        ctx.eps,
    )?;
    if let Some(u) = update {
        sink.push((site.slot, u));
    }
    Ok(y)
}
