//! Reverse-mode autodiff tape.
//!
//! One [`Graph`] records one forward pass. Every operation evaluates
//! eagerly, stores its output in an arena node and remembers how it was
//! produced; [`Graph::backward`] then walks the arena in reverse. Nodes are
//! addressed by [`ValueId`] indices, which are topologically ordered by
//! construction, so the reverse walk needs no explicit sort.
//!
//! Parameters enter the tape as leaves tagged with their slot in an
//! external store; after `backward`, [`Graph::take_param_grads`] hands the
//! accumulated gradients back keyed by that slot. The graph itself is
//! dropped after every step.

use crate::error::{Error, Result};
use crate::ops::batchnorm::{self, BnCtx, BnMode};
use crate::ops::{conv1d, conv2d, linear, loss, pool, shape_ops};
use crate::ops::ConvSpec;
use crate::scalar::Element;
use crate::tensor::Tensor;

/// Handle to a node in one graph. Only valid for the graph that made it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(usize);

enum Op<E: Element> {
    Leaf { param: Option<usize> },
    Conv2d { x: ValueId, w: ValueId, b: Option<ValueId>, spec: ConvSpec },
    Conv1d { x: ValueId, w: ValueId, spec: ConvSpec },
    BatchNorm { x: ValueId, scale: ValueId, shift: ValueId, ctx: BnCtx<E> },
    Relu { x: ValueId },
    Add { a: ValueId, b: ValueId },
    Sub { a: ValueId, b: ValueId },
    Linear { x: ValueId, w: ValueId, b: Option<ValueId> },
    MaxPool { x: ValueId, argmax: Vec<u32>, out_hw: (usize, usize) },
    Gap { x: ValueId },
    MeanAxis { x: ValueId, axis: usize },
    Permute { x: ValueId, axes: Vec<usize> },
    Reshape { x: ValueId },
    Slice { x: ValueId, axis: usize, start: usize },
    Concat { parts: Vec<ValueId>, axis: usize },
    CrossEntropy { logits: ValueId, labels: Vec<usize>, probs: Tensor<E> },
}

struct Node<E: Element> {
    value: Tensor<E>,
    grad: Option<Tensor<E>>,
    needs_grad: bool,
    op: Op<E>,
    label: Option<String>,
}

pub struct Graph<E: Element> {
    nodes: Vec<Node<E>>,
    /// False for pure inference: parameters enter with `needs_grad = false`
    /// and `backward` is refused.
    training: bool,
}

impl<E: Element> Graph<E> {
    pub fn new(training: bool) -> Self {
        Graph { nodes: Vec::new(), training }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor<E> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: ValueId) -> Option<&Tensor<E>> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn set_label(&mut self, id: ValueId, label: impl Into<String>) {
        self.nodes[id.0].label = Some(label.into());
    }

    pub fn label(&self, id: ValueId) -> Option<&str> {
        self.nodes[id.0].label.as_deref()
    }

    /// Last node carrying `label`, if any was tagged during the forward pass.
    pub fn find_label(&self, label: &str) -> Option<ValueId> {
        self.nodes
            .iter()
            .rposition(|n| n.label.as_deref() == Some(label))
            .map(ValueId)
    }

    fn push(&mut self, value: Tensor<E>, needs_grad: bool, op: Op<E>) -> ValueId {
        self.nodes.push(Node { value, grad: None, needs_grad: needs_grad && self.training, op, label: None });
        ValueId(self.nodes.len() - 1)
    }

    fn needs(&self, id: ValueId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Non-differentiable input (data, fixed masks, appended zeros).
    pub fn leaf(&mut self, value: Tensor<E>) -> ValueId {
        self.push(value, false, Op::Leaf { param: None })
    }

    /// Parameter leaf. `slot` keys the gradient on the way back out.
    pub fn param(&mut self, slot: usize, value: Tensor<E>, trainable: bool) -> ValueId {
        self.push(value, trainable, Op::Leaf { param: Some(slot) })
    }

    pub fn conv2d(&mut self, x: ValueId, w: ValueId, b: Option<ValueId>, spec: ConvSpec) -> Result<ValueId> {
        let y = conv2d::forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            &spec,
        )?;
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(y, needs, Op::Conv2d { x, w, b, spec }))
    }

    pub fn conv1d(&mut self, x: ValueId, w: ValueId, spec: ConvSpec) -> Result<ValueId> {
        let y = conv1d::forward(self.value(x), self.value(w), &spec)?;
        let needs = self.needs(x) || self.needs(w);
        Ok(self.push(y, needs, Op::Conv1d { x, w, spec }))
    }

    /// Batch normalization. Running statistics are plain tensors outside the
    /// tape; in `Train` mode the updated buffers come back as a side value
    /// for the caller to commit.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: ValueId,
        scale: ValueId,
        shift: ValueId,
        running_mean: &Tensor<E>,
        running_var: &Tensor<E>,
        mode: BnMode,
        momentum: E,
        eps: E,
    ) -> Result<(ValueId, Option<(Tensor<E>, Tensor<E>)>)> {
        let (y, ctx, updates) = batchnorm::forward(
            self.value(x),
            self.value(scale),
            self.value(shift),
            running_mean,
            running_var,
            mode,
            momentum,
            eps,
        )?;
        let needs = self.needs(x) || self.needs(scale) || self.needs(shift);
        let id = self.push(y, needs, Op::BatchNorm { x, scale, shift, ctx });
        Ok((id, updates))
    }

    pub fn relu(&mut self, x: ValueId) -> ValueId {
        let y = self.value(x).map(|v| if v > E::zero() { v } else { E::zero() });
        let needs = self.needs(x);
        self.push(y, needs, Op::Relu { x })
    }

    fn binary_check(&self, op: &'static str, a: ValueId, b: ValueId) -> Result<()> {
        if self.value(a).dims() != self.value(b).dims() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.value(a).dims(), self.value(b).dims()),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary_check("add", a, b)?;
        let mut y = self.value(a).clone();
        for (v, &u) in y.data_mut().iter_mut().zip(self.value(b).data()) {
            *v += u;
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(y, needs, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary_check("sub", a, b)?;
        let mut y = self.value(a).clone();
        for (v, &u) in y.data_mut().iter_mut().zip(self.value(b).data()) {
            *v -= u;
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(y, needs, Op::Sub { a, b }))
    }

    pub fn linear(&mut self, x: ValueId, w: ValueId, b: Option<ValueId>) -> Result<ValueId> {
        let y = linear::forward(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(y, needs, Op::Linear { x, w, b }))
    }

    pub fn max_pool(&mut self, x: ValueId, k: usize, stride: usize, pad: usize) -> Result<ValueId> {
        let (y, argmax) = pool::max_pool2d(self.value(x), k, stride, pad)?;
        let out_hw = (y.dims()[2], y.dims()[3]);
        let needs = self.needs(x);
        Ok(self.push(y, needs, Op::MaxPool { x, argmax, out_hw }))
    }

    pub fn global_avg_pool(&mut self, x: ValueId) -> Result<ValueId> {
        let y = pool::global_avg_pool(self.value(x))?;
        let needs = self.needs(x);
        Ok(self.push(y, needs, Op::Gap { x }))
    }

    pub fn mean_axis(&mut self, x: ValueId, axis: usize) -> Result<ValueId> {
        let y = pool::mean_axis(self.value(x), axis)?;
        let needs = self.needs(x);
        Ok(self.push(y, needs, Op::MeanAxis { x, axis }))
    }

    pub fn permute(&mut self, x: ValueId, axes: &[usize]) -> Result<ValueId> {
        let y = shape_ops::permute(self.value(x), axes)?;
        let needs = self.needs(x);
        Ok(self.push(y, needs, Op::Permute { x, axes: axes.to_vec() }))
    }

    pub fn reshape(&mut self, x: ValueId, dims: &[usize]) -> Result<ValueId> {
        let y = self.value(x).clone().reshaped(dims)?;
        let needs = self.needs(x);
        Ok(self.push(y, needs, Op::Reshape { x }))
    }

    pub fn slice(&mut self, x: ValueId, axis: usize, start: usize, len: usize) -> Result<ValueId> {
        let y = shape_ops::slice(self.value(x), axis, start, len)?;
        let needs = self.needs(x);
        Ok(self.push(y, needs, Op::Slice { x, axis, start }))
    }

    pub fn concat(&mut self, parts: &[ValueId], axis: usize) -> Result<ValueId> {
        let tensors: Vec<&Tensor<E>> = parts.iter().map(|&p| &self.nodes[p.0].value).collect();
        let y = shape_ops::concat(&tensors, axis)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(y, needs, Op::Concat { parts: parts.to_vec(), axis }))
    }

    /// Mean softmax cross entropy; the node value is a `[1]` scalar.
    pub fn cross_entropy(&mut self, logits: ValueId, labels: &[usize]) -> Result<ValueId> {
        let (l, probs) = loss::cross_entropy_forward(self.value(logits), labels)?;
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(l),
            needs,
            Op::CrossEntropy { logits, labels: labels.to_vec(), probs },
        ))
    }

    /// First node holding a non-finite value, scanning in creation order.
    /// Returns the node's label (or its op name when unlabeled).
    pub fn first_nonfinite(&self) -> Option<(usize, String)> {
        self.nodes.iter().enumerate().find_map(|(i, n)| {
            if n.value.is_all_finite() {
                None
            } else {
                Some((i, n.label.clone().unwrap_or_else(|| op_name(&n.op).to_string())))
            }
        })
    }

    fn accumulate(&mut self, id: ValueId, delta: Tensor<E>) {
        debug_assert_eq!(self.nodes[id.0].value.dims(), delta.dims());
        match &mut self.nodes[id.0].grad {
            Some(g) => {
                for (v, &d) in g.data_mut().iter_mut().zip(delta.data()) {
                    *v += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    /// Reverse pass from a scalar node. Gradients land on every node that
    /// `needs_grad`; parameter gradients are collected afterwards with
    /// [`Graph::take_param_grads`].
    pub fn backward(&mut self, loss: ValueId) -> Result<()> {
        if !self.training {
            return Err(Error::Config("backward on an inference graph".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).dims()),
            ));
        }
        if !self.nodes[loss.0].needs_grad {
            return Err(Error::Config("loss does not depend on any trainable parameter".into()));
        }
        self.accumulate(loss, Tensor::full(self.value(loss).dims(), E::one()));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            let deltas = self.node_backward(i)?;
            for (target, delta) in deltas {
                self.accumulate(target, delta);
            }
        }
        Ok(())
    }

    /// Gradient contributions of node `i` to its inputs.
    fn node_backward(&mut self, i: usize) -> Result<Vec<(ValueId, Tensor<E>)>> {
        // The upstream gradient is cloned out so the arena can be read
        // immutably while each rule runs.
        let dy = self.nodes[i].grad.clone().expect("checked by caller");
        let mut out = Vec::new();
        match &self.nodes[i].op {
            Op::Leaf { .. } => {}
            Op::Conv2d { x, w, b, spec } => {
                let (x, w, b, spec) = (*x, *w, *b, *spec);
                let (dx, dw, db) = conv2d::backward(
                    self.value(x),
                    self.value(w),
                    &spec,
                    &dy,
                    self.needs(x),
                    self.needs(w),
                    b.is_some_and(|b| self.needs(b)),
                )?;
                if let Some(dx) = dx {
                    out.push((x, dx));
                }
                if let Some(dw) = dw {
                    out.push((w, dw));
                }
                if let (Some(b), Some(db)) = (b, db) {
                    out.push((b, db));
                }
            }
            Op::Conv1d { x, w, spec } => {
                let (x, w, spec) = (*x, *w, *spec);
                let (dx, dw) =
                    conv1d::backward(self.value(x), self.value(w), &spec, &dy, self.needs(x), self.needs(w))?;
                if let Some(dx) = dx {
                    out.push((x, dx));
                }
                if let Some(dw) = dw {
                    out.push((w, dw));
                }
            }
            Op::BatchNorm { x, scale, shift, ctx } => {
                let (x, scale, shift) = (*x, *scale, *shift);
                let ctx = ctx.clone();
                let (dx, dscale, dshift) = batchnorm::backward(self.value(x), self.value(scale), &ctx, &dy);
                if self.needs(x) {
                    out.push((x, dx));
                }
                if self.needs(scale) {
                    out.push((scale, dscale));
                }
                if self.needs(shift) {
                    out.push((shift, dshift));
                }
            }
            Op::Relu { x } => {
                let x = *x;
                let mut dx = dy;
                for (g, &v) in dx.data_mut().iter_mut().zip(self.value(x).data()) {
                    if v <= E::zero() {
                        *g = E::zero();
                    }
                }
                out.push((x, dx));
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                if self.needs(a) {
                    out.push((a, dy.clone()));
                }
                if self.needs(b) {
                    out.push((b, dy));
                }
            }
            Op::Sub { a, b } => {
                let (a, b) = (*a, *b);
                if self.needs(b) {
                    let neg = dy.map(|v| -v);
                    out.push((b, neg));
                }
                if self.needs(a) {
                    out.push((a, dy));
                }
            }
            Op::Linear { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                let (dx, dw, db) = linear::backward(self.value(x), self.value(w), b.is_some(), &dy)?;
                if self.needs(x) {
                    out.push((x, dx));
                }
                if self.needs(w) {
                    out.push((w, dw));
                }
                if let (Some(b), Some(db)) = (b, db) {
                    if self.needs(b) {
                        out.push((b, db));
                    }
                }
            }
            Op::MaxPool { x, argmax, out_hw, .. } => {
                let x = *x;
                let dx = pool::max_pool2d_backward(self.value(x).dims(), *out_hw, argmax, &dy);
                out.push((x, dx));
            }
            Op::Gap { x } => {
                let x = *x;
                let dx = pool::global_avg_pool_backward(self.value(x).dims(), &dy);
                out.push((x, dx));
            }
            Op::MeanAxis { x, axis } => {
                let (x, axis) = (*x, *axis);
                let dx = pool::mean_axis_backward(self.value(x).dims(), axis, &dy);
                out.push((x, dx));
            }
            Op::Permute { x, axes } => {
                let x = *x;
                let dx = shape_ops::permute(&dy, &shape_ops::inverse_axes(axes))?;
                out.push((x, dx));
            }
            Op::Reshape { x } => {
                let x = *x;
                let dx = dy.reshaped(self.value(x).dims())?;
                out.push((x, dx));
            }
            Op::Slice { x, axis, start } => {
                let (x, axis, start) = (*x, *axis, *start);
                let dx = shape_ops::slice_backward(self.value(x).dims(), axis, start, &dy);
                out.push((x, dx));
            }
            Op::Concat { parts, axis } => {
                let parts = parts.clone();
                let axis = *axis;
                let extents: Vec<usize> = parts.iter().map(|&p| self.value(p).dims()[axis]).collect();
                let grads = shape_ops::concat_backward(&extents, axis, &dy);
                for (p, g) in parts.into_iter().zip(grads) {
                    if self.needs(p) {
                        out.push((p, g));
                    }
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let logits = *logits;
                let dl = loss::cross_entropy_backward(probs, labels, dy.item());
                out.push((logits, dl));
            }
        }
        Ok(out)
    }

    /// Drains `(slot, gradient)` pairs for every parameter leaf that
    /// received a gradient.
    pub fn take_param_grads(&mut self) -> Vec<(usize, Tensor<E>)> {
        let mut out = Vec::new();
        for n in &mut self.nodes {
            if let Op::Leaf { param: Some(slot) } = n.op {
                if let Some(g) = n.grad.take() {
                    out.push((slot, g));
                }
            }
        }
        out
    }
}

fn op_name<E: Element>(op: &Op<E>) -> &'static str {
    match op {
        Op::Leaf { param: Some(_) } => "param",
        Op::Leaf { param: None } => "leaf",
        Op::Conv2d { .. } => "conv2d",
        Op::Conv1d { .. } => "conv1d",
        Op::BatchNorm { .. } => "batch_norm",
        Op::Relu { .. } => "relu",
        Op::Add { .. } => "add",
        Op::Sub { .. } => "sub",
        Op::Linear { .. } => "linear",
        Op::MaxPool { .. } => "max_pool",
        Op::Gap { .. } => "global_avg_pool",
        Op::MeanAxis { .. } => "mean_axis",
        Op::Permute { .. } => "permute",
        Op::Reshape { .. } => "reshape",
        Op::Slice { .. } => "slice",
        Op::Concat { .. } => "concat",
        Op::CrossEntropy { .. } => "cross_entropy",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{max_grad_gap, numeric_grad};
    use crate::rng::{normal_f64, seeded};

    /// A miniature but representative net: conv, BN, relu, pool, temporal
    /// mixing, residual add, slice/concat, linear head, cross entropy.
    /// Returns the loss for the given parameter tensors.
    fn run(
        x: &Tensor<f64>,
        wc: &Tensor<f64>,
        scale: &Tensor<f64>,
        shift: &Tensor<f64>,
        wt: &Tensor<f64>,
        wl: &Tensor<f64>,
        bl: &Tensor<f64>,
        labels: &[usize],
        collect: bool,
    ) -> (f64, Vec<(usize, Tensor<f64>)>) {
        let c = 4;
        let spec = ConvSpec::plane(3, c, 3, 1, 1);
        let tspec = ConvSpec::temporal(c, 3, c);
        let rm = Tensor::zeros([c]);
        let rv = Tensor::full([c], 1.0);

        let mut g = Graph::<f64>::new(true);
        let x_id = g.leaf(x.clone());
        let wc_id = g.param(0, wc.clone(), true);
        let sc_id = g.param(1, scale.clone(), true);
        let sh_id = g.param(2, shift.clone(), true);
        let wt_id = g.param(3, wt.clone(), true);
        let wl_id = g.param(4, wl.clone(), true);
        let bl_id = g.param(5, bl.clone(), true);

        let y = g.conv2d(x_id, wc_id, None, spec).unwrap();
        let (y, _) = g
            .batch_norm(y, sc_id, sh_id, &rm, &rv, BnMode::TrainFrozen, 0.1, 1e-5)
            .unwrap();
        let y = g.relu(y);
        let y = g.max_pool(y, 3, 2, 1).unwrap();
        // [N*T, C, H, W] -> [N, T, C, H, W] with N = 2, T = 2.
        let d = g.value(y).dims().to_vec();
        let (h, w) = (d[2], d[3]);
        let y = g.reshape(y, &[2, 2, c, h, w]).unwrap();
        let y = g.permute(y, &[0, 2, 3, 4, 1]).unwrap();
        let y = g.reshape(y, &[2, c * h * w, 2]).unwrap();
        let y = g.conv1d(y, wt_id, tspec_reshaped(&tspec, c * h * w)).unwrap();
        let y = g.reshape(y, &[2, c, h, w, 2]).unwrap();
        let y = g.permute(y, &[0, 4, 1, 2, 3]).unwrap();
        let y = g.reshape(y, &[4, c, h, w]).unwrap();
        // Split in half along channels and cross-add as a residual stand-in.
        let lo = g.slice(y, 1, 0, c / 2).unwrap();
        let hi = g.slice(y, 1, c / 2, c / 2).unwrap();
        let sum = g.add(lo, hi).unwrap();
        let dif = g.sub(lo, hi).unwrap();
        let y = g.concat(&[sum, dif], 1).unwrap();
        let y = g.global_avg_pool(y).unwrap();
        let y = g.reshape(y, &[2, 2, c]).unwrap();
        let y = g.mean_axis(y, 1).unwrap();
        let y = g.linear(y, wl_id, Some(bl_id)).unwrap();
        let l = g.cross_entropy(y, labels).unwrap();
        let lv = g.value(l).item();
        let grads = if collect {
            g.backward(l).unwrap();
            g.take_param_grads()
        } else {
            Vec::new()
        };
        (lv, grads)
    }

    /// Channel-wise temporal spec for a flattened channel count.
    fn tspec_reshaped(base: &ConvSpec, channels: usize) -> ConvSpec {
        ConvSpec { in_channels: channels, out_channels: channels, groups: channels, ..*base }
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let mut rng = seeded(501);
        let c = 4;
        let x = Tensor::from_fn([4, 3, 6, 6], |_| normal_f64(&mut rng));
        let wc = Tensor::from_fn(ConvSpec::plane(3, c, 3, 1, 1).weight_dims(), |_| 0.3 * normal_f64(&mut rng));
        let scale = Tensor::from_fn([c], |_| 1.0 + 0.2 * normal_f64(&mut rng));
        let shift = Tensor::from_fn([c], |_| 0.1 * normal_f64(&mut rng));
        let hw = 3 * 3;
        let wt = Tensor::from_fn([c * hw, 1, 3], |_| 0.5 * normal_f64(&mut rng));
        let wl = Tensor::from_fn([3, c], |_| normal_f64(&mut rng));
        let bl = Tensor::from_fn([3], |_| 0.1 * normal_f64(&mut rng));
        let labels = [0usize, 2];

        let (_, grads) = run(&x, &wc, &scale, &shift, &wt, &wl, &bl, &labels, true);
        assert_eq!(grads.len(), 6, "every parameter must receive a gradient");

        let params: Vec<&Tensor<f64>> = vec![&wc, &scale, &shift, &wt, &wl, &bl];
        for (slot, analytic) in &grads {
            let numeric = numeric_grad(params[*slot], 1e-5, &mut |t| {
                let mut ps: Vec<Tensor<f64>> = params.iter().map(|p| (*p).clone()).collect();
                ps[*slot] = t.clone();
                run(&x, &ps[0], &ps[1], &ps[2], &ps[3], &ps[4], &ps[5], &labels, false).0
            });
            let gap = max_grad_gap(analytic, &numeric);
            assert!(gap < 1e-6, "slot {slot}: gap {gap:.3e}");
        }
    }

    #[test]
    fn grads_accumulate_across_backward_calls() {
        let mut g = Graph::<f64>::new(true);
        let w = g.param(0, Tensor::from_vec([1, 2], vec![2.0, -1.0]).unwrap(), true);
        let x = g.leaf(Tensor::from_vec([1, 2], vec![3.0, 5.0]).unwrap());
        let y = g.linear(x, w, None).unwrap();
        let l = g.cross_entropy(y, &[0]).unwrap();
        g.backward(l).unwrap();
        let g1 = g.grad(w).unwrap().clone();
        g.backward(l).unwrap();
        let g2 = g.grad(w).unwrap();
        for (a, b) in g1.data().iter().zip(g2.data()) {
            assert!((b - 2.0 * a).abs() < 1e-12, "second backward doubles the gradient");
        }
    }

    #[test]
    fn inference_graph_refuses_backward() {
        let mut g = Graph::<f64>::new(false);
        let w = g.param(0, Tensor::from_vec([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(), true);
        let x = g.leaf(Tensor::from_vec([1, 2], vec![1.0, 2.0]).unwrap());
        let y = g.linear(x, w, None).unwrap();
        let l = g.cross_entropy(y, &[1]).unwrap();
        assert!(g.backward(l).is_err());
    }

    #[test]
    fn nonfinite_scan_reports_label() {
        let mut g = Graph::<f64>::new(false);
        let a = g.leaf(Tensor::from_vec([2], vec![1.0, 2.0]).unwrap());
        assert!(g.first_nonfinite().is_none());
        let bad = g.leaf(Tensor::from_vec([2], vec![f64::NAN, 0.0]).unwrap());
        g.set_label(bad, "stage2.block0.bn1");
        let _ = g.add(a, bad).unwrap();
        let (idx, label) = g.first_nonfinite().unwrap();
        assert_eq!(label, "stage2.block0.bn1");
        assert_eq!(idx, 1);
    }

    #[test]
    fn untouched_branches_get_no_gradient() {
        let mut g = Graph::<f64>::new(true);
        let used = g.param(0, Tensor::from_vec([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), true);
        let unused = g.param(1, Tensor::from_vec([2, 2], vec![5.0; 4]).unwrap(), true);
        let frozen = g.param(2, Tensor::from_vec([1, 2], vec![1.0, 1.0]).unwrap(), false);
        let _ = unused;
        let x = g.leaf(Tensor::from_vec([1, 2], vec![1.0, -1.0]).unwrap());
        let h = g.linear(x, used, None).unwrap();
        let h2 = g.add(h, frozen).unwrap();
        let l = g.cross_entropy(h2, &[0]).unwrap();
        g.backward(l).unwrap();
        let grads = g.take_param_grads();
        assert_eq!(grads.len(), 1);
        assert_eq!(grads[0].0, 0);
    }
}
