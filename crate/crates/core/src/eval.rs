//! Validation metrics: top-1/top-5, per-class accuracy, confusion counts,
//! and a frame-reversal probe that measures how much the logits care about
//! temporal order.

use serde_json::json;

use crate::network::Network;
use crate::scalar::Element;
use crate::synth::{self, LabeledClip};
use crate::tensor::Tensor;
use crate::train::{argmax, eval_batch, multi_clip_scores};
use crate::{Error, Result};

/// Aggregate accuracy over one labeled set. `confusion[t][p]` counts clips
/// of true class `t` predicted as `p`, so row sums are class counts.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub n: usize,
    pub clips: usize,
    pub top1: f64,
    pub top5: f64,
    pub per_class: Vec<f64>,
    pub confusion: Vec<Vec<usize>>,
}

/// Scores `set` with `clips` phase-shifted samplings per clip (softmax
/// scores summed, then ranked).
pub fn evaluate(
    net: &Network<f32>,
    set: &[LabeledClip],
    clips: usize,
    batch: usize,
) -> Result<EvalReport> {
    if set.is_empty() {
        return Err(Error::Usage("cannot evaluate an empty set".into()));
    }
    let k = net.cfg.num_classes;
    let scores = multi_clip_scores(net, set, clips, batch)?;
    let mut confusion = vec![vec![0usize; k]; k];
    let mut top5_hits = 0usize;
    for (i, clip) in set.iter().enumerate() {
        if clip.label >= k {
            return Err(Error::Config(format!(
                "clip {i} carries label {} but the head has {k} classes",
                clip.label
            )));
        }
        let row = &scores[i * k..(i + 1) * k];
        confusion[clip.label][argmax(row)] += 1;
        let better = row.iter().filter(|&&s| s > row[clip.label]).count();
        if better < 5 {
            top5_hits += 1;
        }
    }
    let class_count = |t: usize| confusion[t].iter().sum::<usize>();
    let per_class: Vec<f64> = (0..k)
        .map(|t| match class_count(t) {
            0 => f64::NAN,
            n => confusion[t][t] as f64 / n as f64,
        })
        .collect();
    let top1 = (0..k).map(|t| confusion[t][t]).sum::<usize>() as f64 / set.len() as f64;
    Ok(EvalReport {
        n: set.len(),
        clips,
        top1,
        top5: top5_hits as f64 / set.len() as f64,
        per_class,
        confusion,
    })
}

/// Top-1 accuracy restricted to classes whose label flips under frame
/// reversal; clips of order-insensitive classes are left out entirely.
pub fn motion_pair_accuracy(predictions: &[usize], set: &[LabeledClip]) -> Result<f64> {
    if predictions.len() != set.len() {
        return Err(Error::Usage(format!(
            "{} predictions for {} clips",
            predictions.len(),
            set.len()
        )));
    }
    let mut hits = 0usize;
    let mut total = 0usize;
    for (p, clip) in predictions.iter().zip(set) {
        if synth::is_motion_class(clip.label) {
            total += 1;
            hits += (*p == clip.label) as usize;
        }
    }
    if total == 0 {
        return Err(Error::Usage("no motion-class clips in the set".into()));
    }
    Ok(hits as f64 / total as f64)
}

/// Reverses the frame axis of a `[N, T, C, H, W]` batch.
pub fn reverse_time<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let d = x.dims();
    if d.len() != 5 {
        return Err(Error::shape("reverse_time", format!("want [N,T,C,H,W], got {d:?}")));
    }
    let (n, t) = (d[0], d[1]);
    let frame = d[2] * d[3] * d[4];
    let mut out = vec![E::zero(); x.numel()];
    for i in 0..n {
        for j in 0..t {
            let src = (i * t + j) * frame;
            let dst = (i * t + (t - 1 - j)) * frame;
            out[dst..dst + frame].copy_from_slice(&x.data()[src..src + frame]);
        }
    }
    Tensor::from_vec(d.to_vec(), out)
}

/// Largest absolute logit change across `set` when the sampled frames are
/// fed in reverse order. A network that only ever pools across time returns
/// exactly zero; temporal convolution or frame differencing makes it
/// positive.
pub fn reversal_logit_gap(net: &Network<f32>, set: &[LabeledClip], batch: usize) -> Result<f64> {
    let idxs: Vec<usize> = (0..set.len()).collect();
    let mut gap = 0.0f64;
    for chunk in idxs.chunks(batch.max(1)) {
        let (x, _) = eval_batch(set, chunk, &net.cfg)?;
        let fwd = net.forward(&x, false)?;
        let rev = net.forward(&reverse_time(&x)?, false)?;
        let a = fwd.graph.value(fwd.logits).data();
        let b = rev.graph.value(rev.logits).data();
        for (u, v) in a.iter().zip(b) {
            gap = gap.max((u - v).abs() as f64);
        }
    }
    Ok(gap)
}

impl EvalReport {
    fn name(&self, c: usize) -> String {
        if self.per_class.len() == synth::NUM_CLASSES {
            synth::class_name(c).to_string()
        } else {
            format!("class-{c}")
        }
    }

    /// Per-class table plus confusion counts, aligned for terminals.
    pub fn text_table(&self) -> String {
        let k = self.per_class.len();
        let wide = (0..k).map(|c| self.name(c).len()).max().unwrap_or(0);
        let mut s = format!(
            "clips {}  samplings {}  top-1 {:.4}  top-5 {:.4}\n",
            self.n, self.clips, self.top1, self.top5
        );
        for c in 0..k {
            let row = &self.confusion[c];
            let counts: Vec<String> = row.iter().map(|v| format!("{v:4}")).collect();
            s.push_str(&format!(
                "{:wide$}  acc {:.4}  [{}]\n",
                self.name(c),
                self.per_class[c],
                counts.join(" ")
            ));
        }
        s
    }

    pub fn to_json(&self) -> String {
        json!({
            "n": self.n,
            "clips": self.clips,
            "top1": self.top1,
            "top5": self.top5,
            "per_class": self.per_class,
            "confusion": self.confusion,
        })
        .to_string()
    }
}
