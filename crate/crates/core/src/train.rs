//! SGD training over clip datasets.
//!
//! The loop is deliberately plain: shuffle, assemble a batch (segment-sample
//! frames, pad-and-crop, normalize), forward, cross entropy, backward, one
//! SGD step, commit batchnorm statistics. Learning rate follows a step
//! schedule; logs go out as line-delimited JSON records plus a short human
//! summary. Everything is keyed off one seed, so a rerun with the same
//! config and seed reproduces the run log bit for bit at one worker thread.
//!
//! Horizontal flips are deliberately absent from augmentation: two of the
//! synthetic classes differ only by direction of travel, and a flip would
//! swap their labels.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::configfile::ConfigMap;
use crate::error::{Error, Result};
use crate::network::{BackboneConfig, Network, ParamEntry};
use crate::ops::loss::softmax;
use crate::rng;
use crate::sampling;
use crate::scalar::Element;
use crate::synth::LabeledClip;
use crate::tensor::Tensor;

/// Optimizer and schedule settings. `milestones` are epochs after which the
/// learning rate drops by a factor of ten, so epoch `e` runs at
/// `lr * 10^-k` with `k` the number of milestones strictly below `e`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub milestones: Vec<usize>,
    pub batch_size: usize,
    pub seed: u64,
    /// Random-crop padding in pixels; 0 disables the augmentation.
    pub crop_pad: usize,
    /// Stop once validation top-1 reaches this value. Applied identically
    /// to every run of a sweep so no arm gets extra polish.
    pub early_stop_top1: Option<f64>,
    /// Stop after this many epochs with no improvement in validation top-1.
    pub patience: Option<usize>,
}

impl TrainConfig {
    /// Desk-scale schedule: 30 epochs, rate drops after 20 and 26.
    pub fn desk() -> Self {
        TrainConfig {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 30,
            milestones: vec![20, 26],
            batch_size: 16,
            seed: 0,
            crop_pad: 4,
            early_stop_top1: Some(0.995),
            patience: Some(10),
        }
    }

    /// Full-scale schedule: 50 epochs, rate drops after 30, 40 and 45.
    pub fn paper() -> Self {
        TrainConfig { epochs: 50, milestones: vec![30, 40, 45], ..Self::desk() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be nonzero".into()));
        }
        let increasing = self.milestones.windows(2).all(|w| w[0] < w[1]);
        let in_range = self.milestones.iter().all(|&m| m > 0 && m < self.epochs);
        if !(increasing && in_range) {
            return Err(Error::Config(format!(
                "milestones must increase strictly and stay below {} epochs, got {:?}",
                self.epochs, self.milestones
            )));
        }
        Ok(())
    }

    /// Learning rate in force during 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let k = self.milestones.iter().filter(|&&m| epoch > m).count();
        self.lr * 10f64.powi(-(k as i32))
    }

    /// Read settings from flat `key = value` pairs; `schedule` picks the
    /// `desk` (default) or `paper` preset, other keys override fields.
    /// `early_stop_top1 = 0` and `patience = 0` disable the two stops.
    pub fn from_config(map: &ConfigMap) -> Result<Self> {
        let mut out = match map.raw("schedule").unwrap_or("desk") {
            "desk" => Self::desk(),
            "paper" => Self::paper(),
            other => {
                return Err(Error::Usage(format!("schedule must be `desk` or `paper`, got `{other}`")))
            }
        };
        out.lr = map.get_or("lr", out.lr)?;
        out.momentum = map.get_or("momentum", out.momentum)?;
        out.weight_decay = map.get_or("weight_decay", out.weight_decay)?;
        out.epochs = map.get_or("epochs", out.epochs)?;
        if let Some(v) = map.list("milestones")? {
            out.milestones = v;
        }
        out.batch_size = map.get_or("batch_size", out.batch_size)?;
        out.seed = map.get_or("seed", out.seed)?;
        out.crop_pad = map.get_or("crop_pad", out.crop_pad)?;
        if let Some(v) = map.get::<f64>("early_stop_top1")? {
            out.early_stop_top1 = (v > 0.0).then_some(v);
        }
        if let Some(v) = map.get::<usize>("patience")? {
            out.patience = (v > 0).then_some(v);
        }
        out.validate()?;
        Ok(out)
    }
}

/// Momentum SGD with classic L2 weight decay folded into the gradient:
/// `v <- m*v + (g + wd*p); p <- p - lr*v`.
pub struct Sgd<E: Element> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: HashMap<usize, Tensor<E>>,
}

impl<E: Element> Sgd<E> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd { momentum, weight_decay, velocity: HashMap::new() }
    }

    pub fn step(
        &mut self,
        params: &mut [ParamEntry<E>],
        grads: Vec<(usize, Tensor<E>)>,
        lr: f64,
    ) -> Result<()> {
        let (lr, m, wd) = (E::from_f64(lr), E::from_f64(self.momentum), E::from_f64(self.weight_decay));
        for (slot, g) in grads {
            let p = &mut params[slot];
            if !p.trainable {
                continue;
            }
            if p.value.dims() != g.dims() {
                return Err(Error::shape(
                    "sgd",
                    format!("{}: gradient {:?} vs value {:?}", p.name, g.dims(), p.value.dims()),
                ));
            }
            let v = self
                .velocity
                .entry(slot)
                .or_insert_with(|| Tensor::zeros(g.dims().to_vec()));
            for ((vi, &gi), pi) in v.data_mut().iter_mut().zip(g.data()).zip(p.value.data_mut()) {
                *vi = m * *vi + (gi + wd * *pi);
                *pi = *pi - lr * *vi;
            }
        }
        Ok(())
    }
}

/// One epoch's worth of log: the `epoch` field is 1-based and contiguous.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_top1: f64,
    pub val_top1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_top1: f64,
    pub final_val_top1: f64,
    pub stopped_early: bool,
}

impl RunLog {
    /// Line-delimited JSON: one `run` header, one record per epoch, one
    /// `final` trailer.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = serde_json::json!({"run": {"seed": self.seed, "config": self.config}});
        out.push_str(&header.to_string());
        out.push('\n');
        for e in &self.epochs {
            let rec = serde_json::json!({"epoch": e});
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        let trailer = serde_json::json!({"final": {
            "best_epoch": self.best_epoch,
            "best_val_top1": self.best_val_top1,
            "final_val_top1": self.final_val_top1,
            "epochs_run": self.epochs.len(),
            "stopped_early": self.stopped_early,
        }});
        out.push_str(&trailer.to_string());
        out.push('\n');
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("seed {}\n", self.seed));
        for e in &self.epochs {
            out.push_str(&format!(
                "epoch {:>3}  lr {:<8}  loss {:.4}  train {:5.1}%  val {:5.1}%\n",
                e.epoch,
                e.lr,
                e.train_loss,
                100.0 * e.train_top1,
                100.0 * e.val_top1,
            ));
        }
        out.push_str(&format!(
            "best val top-1 {:.3} at epoch {}; final {:.3}{}\n",
            self.best_val_top1,
            self.best_epoch,
            self.final_val_top1,
            if self.stopped_early { " (stopped early)" } else { "" },
        ));
        out
    }

    /// Structural invariants every finished log satisfies.
    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.epochs.iter().enumerate() {
            if e.epoch != i + 1 {
                return Err(Error::Config(format!("epochs must run 1.. contiguously, got {} at {i}", e.epoch)));
            }
            if !(e.train_loss.is_finite() && e.train_top1 <= 1.0 && e.val_top1 <= 1.0) {
                return Err(Error::Numerical(format!("epoch {}: implausible metrics", e.epoch)));
            }
        }
        Ok(())
    }
}

/// Tokenized echo of every setting that shaped a run, for the log header.
pub fn config_echo(bb: &BackboneConfig, tc: &TrainConfig) -> BTreeMap<String, String> {
    let join = |xs: &[usize]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    let joinf = |xs: &[f64]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    let mut m = BTreeMap::new();
    m.insert("stage_channels".into(), join(&bb.stage_channels));
    m.insert("stage_blocks".into(), join(&bb.stage_blocks));
    m.insert(
        "stm_mask".into(),
        bb.stm_mask.iter().map(|&b| if b { '1' } else { '0' }).collect(),
    );
    m.insert("stem".into(), bb.stem.to_string());
    m.insert("num_classes".into(), bb.num_classes.to_string());
    m.insert("frames".into(), bb.frames.to_string());
    m.insert("input_size".into(), bb.input_size.to_string());
    m.insert("r".into(), bb.r.to_string());
    m.insert("fusion".into(), bb.fusion.to_string());
    m.insert("branches".into(), bb.branches.to_string());
    m.insert("temporal_conv".into(), bb.temporal.to_string());
    m.insert("mean".into(), joinf(&bb.mean));
    m.insert("std".into(), joinf(&bb.std));
    m.insert("zero_init_restore_norm".into(), bb.zero_init_restore_norm.to_string());
    m.insert("lr".into(), tc.lr.to_string());
    m.insert("momentum".into(), tc.momentum.to_string());
    m.insert("weight_decay".into(), tc.weight_decay.to_string());
    m.insert("epochs".into(), tc.epochs.to_string());
    m.insert("milestones".into(), join(&tc.milestones));
    m.insert("batch_size".into(), tc.batch_size.to_string());
    m.insert("crop_pad".into(), tc.crop_pad.to_string());
    m.insert(
        "early_stop_top1".into(),
        tc.early_stop_top1.map_or("0".into(), |v| v.to_string()),
    );
    m.insert("patience".into(), tc.patience.map_or("0".into(), |v| v.to_string()));
    m
}

/// Frame picks plus crop offset for one clip in one batch.
enum Augment {
    /// Uniform frame per segment, crop window shifted by (dy, dx) inside a
    /// zero-padded canvas.
    Train { dy: usize, dx: usize },
    /// Center frames, identity crop.
    Eval,
}

/// Stack `picks` into a normalized `[len,T,3,H,W]` batch row by row.
fn assemble(
    set: &[LabeledClip],
    picks: &[usize],
    bb: &BackboneConfig,
    pad: usize,
    mode: impl Fn(usize, &mut Vec<usize>) -> Augment,
) -> Result<(Tensor<f32>, Vec<usize>)> {
    let t = bb.frames;
    let (mean, std) = (bb.mean, bb.std);
    let mut frames_of = Vec::new();
    let mut data = Vec::new();
    let mut labels = Vec::with_capacity(picks.len());
    let mut hw = None;
    for (row, &i) in picks.iter().enumerate() {
        let clip = &set[i];
        let d = clip.frames.dims();
        let [l, c, h, w] = d[..] else {
            return Err(Error::shape("assemble", format!("clip frames are [L,3,H,W], got {d:?}")));
        };
        if c != 3 {
            return Err(Error::shape("assemble", format!("expected 3 channels, got {c}")));
        }
        match hw {
            None => hw = Some((h, w)),
            Some(prev) if prev != (h, w) => {
                return Err(Error::shape("assemble", "mixed frame sizes in one batch".to_string()))
            }
            _ => {}
        }
        frames_of.clear();
        let (dy, dx) = match mode(row, &mut frames_of) {
            Augment::Train { dy, dx } => (dy as isize - pad as isize, dx as isize - pad as isize),
            Augment::Eval => {
                frames_of = sampling::eval_center(l, t);
                (0, 0)
            }
        };
        let src = clip.frames.data();
        for &f in &frames_of {
            debug_assert!(f < l);
            for ch in 0..3 {
                let plane = &src[(f * 3 + ch) * h * w..(f * 3 + ch + 1) * h * w];
                let (m, s) = (mean[ch] as f32, std[ch] as f32);
                for y in 0..h {
                    let sy = y as isize + dy;
                    for x in 0..w {
                        let sx = x as isize + dx;
                        let raw = if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                            plane[sy as usize * w + sx as usize]
                        } else {
                            0.0
                        };
                        data.push((raw - m) / s);
                    }
                }
            }
        }
        labels.push(clip.label);
    }
    let (h, w) = hw.ok_or_else(|| Error::shape("assemble", "empty batch".to_string()))?;
    Ok((Tensor::from_vec(vec![picks.len(), t, 3, h, w], data)?, labels))
}

/// Training batch: per-clip seeded sampling and crop jitter.
pub fn train_batch(
    set: &[LabeledClip],
    picks: &[usize],
    bb: &BackboneConfig,
    tc: &TrainConfig,
    epoch: usize,
) -> Result<(Tensor<f32>, Vec<usize>)> {
    assemble(set, picks, bb, tc.crop_pad, |row, frames| {
        let clip = picks[row];
        let key = (epoch as u64) << 32 | clip as u64;
        let mut r = rng::seeded(rng::stream_seed(tc.seed, "augment", key));
        let l = set[clip].frames.dims()[0];
        *frames = sampling::train_random(l, bb.frames, &mut r);
        let span = 2 * tc.crop_pad + 1;
        Augment::Train { dy: rng::below(&mut r, span), dx: rng::below(&mut r, span) }
    })
}

/// Deterministic eval batch: centered frames, no augmentation.
pub fn eval_batch(
    set: &[LabeledClip],
    picks: &[usize],
    bb: &BackboneConfig,
) -> Result<(Tensor<f32>, Vec<usize>)> {
    assemble(set, picks, bb, 0, |_, _| Augment::Eval)
}

fn top1_hits(logits: &Tensor<f32>, labels: &[usize]) -> usize {
    let k = logits.dims()[1];
    logits
        .data()
        .chunks_exact(k)
        .zip(labels)
        .filter(|(row, &y)| {
            let best = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
                .map(|(i, _)| i);
            best == Some(y)
        })
        .count()
}

/// Plain top-1 on centered single-clip sampling; the full scoring report
/// lives in [`crate::eval`].
pub fn quick_val_top1(net: &Network<f32>, set: &[LabeledClip], batch: usize) -> Result<f64> {
    let mut hits = 0;
    let idxs: Vec<usize> = (0..set.len()).collect();
    for chunk in idxs.chunks(batch.max(1)) {
        let (x, y) = eval_batch(set, chunk, &net.cfg)?;
        let fwd = net.forward(&x, false)?;
        hits += top1_hits(fwd.graph.value(fwd.logits), &y);
    }
    Ok(hits as f64 / set.len().max(1) as f64)
}

/// Run the full loop. Checkpoints (`best.stmk`, `last.stmk`), the JSONL log
/// (`run.jsonl`) and a human summary (`summary.txt`) land in `out` when
/// given. Aborts with a diagnostic naming the first non-finite tensor if the
/// loss diverges.
pub fn train(
    net: &mut Network<f32>,
    tc: &TrainConfig,
    train_set: &[LabeledClip],
    val_set: &[LabeledClip],
    out: Option<&Path>,
) -> Result<RunLog> {
    tc.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Usage("training needs non-empty train and val sets".into()));
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    let bb = net.cfg.clone();
    let mut sgd = Sgd::new(tc.momentum, tc.weight_decay);
    let mut log = RunLog {
        seed: tc.seed,
        config: config_echo(&bb, tc),
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_top1: f64::NEG_INFINITY,
        final_val_top1: 0.0,
        stopped_early: false,
    };

    for epoch in 1..=tc.epochs {
        let lr = tc.lr_at(epoch);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        rng::shuffle(&mut rng::seeded(rng::stream_seed(tc.seed, "order", epoch as u64)), &mut order);

        let (mut loss_sum, mut hits, mut seen) = (0.0f64, 0usize, 0usize);
        for chunk in order.chunks(tc.batch_size) {
            let (x, y) = train_batch(train_set, chunk, &bb, tc, epoch)?;
            let fwd = net.forward(&x, true)?;
            let mut graph = fwd.graph;
            let loss_id = graph.cross_entropy(fwd.logits, &y)?;
            let loss = graph.value(loss_id).data()[0] as f64;
            if !loss.is_finite() {
                let at = graph
                    .first_nonfinite()
                    .map(|(i, what)| format!("node {i}: {what}"))
                    .unwrap_or_else(|| "loss".into());
                return Err(Error::Numerical(format!(
                    "epoch {epoch}: training diverged; first non-finite value at {at}"
                )));
            }
            hits += top1_hits(graph.value(fwd.logits), &y);
            seen += y.len();
            loss_sum += loss * y.len() as f64;
            graph.backward(loss_id)?;
            let grads = graph.take_param_grads();
            sgd.step(net.params.entries_mut(), grads, lr)?;
            net.commit_stats(fwd.stats);
        }

        let val_top1 = quick_val_top1(net, val_set, tc.batch_size)?;
        log.epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / seen as f64,
            train_top1: hits as f64 / seen as f64,
            val_top1,
        });
        if val_top1 > log.best_val_top1 {
            log.best_val_top1 = val_top1;
            log.best_epoch = epoch;
            if let Some(dir) = out {
                net.save(dir.join("best.stmk"))?;
            }
        }
        let plateaued = tc.patience.is_some_and(|p| epoch - log.best_epoch >= p);
        if tc.early_stop_top1.is_some_and(|target| val_top1 >= target) || plateaued {
            log.stopped_early = true;
            break;
        }
    }

    log.final_val_top1 = log.epochs.last().map(|e| e.val_top1).unwrap_or(0.0);
    log.validate()?;
    if let Some(dir) = out {
        net.save(dir.join("last.stmk"))?;
        std::fs::write(dir.join("run.jsonl"), log.to_jsonl())?;
        std::fs::write(dir.join("summary.txt"), log.summary())?;
    }
    Ok(log)
}

/// Averaged softmax over `clips` fixed phase-shifted samplings per clip;
/// returns the predicted class per clip. One clip reduces to plain argmax.
pub fn multi_clip_predictions(
    net: &Network<f32>,
    set: &[LabeledClip],
    clips: usize,
    batch: usize,
) -> Result<Vec<usize>> {
    let k = net.cfg.num_classes;
    let scores = multi_clip_scores(net, set, clips, batch)?;
    Ok(scores.chunks_exact(k).map(argmax).collect())
}

/// Softmax scores summed over `clips` fixed phase-shifted samplings, one row
/// of `num_classes` entries per clip in `set` order.
pub fn multi_clip_scores(
    net: &Network<f32>,
    set: &[LabeledClip],
    clips: usize,
    batch: usize,
) -> Result<Vec<f32>> {
    if clips == 0 {
        return Err(Error::Usage("clips must be at least 1".into()));
    }
    let k = net.cfg.num_classes;
    let mut scores = vec![0.0f32; set.len() * k];
    let idxs: Vec<usize> = (0..set.len()).collect();
    for clip_no in 0..clips {
        for chunk in idxs.chunks(batch.max(1)) {
            let (x, _) = assemble(set, chunk, &net.cfg, 0, |row, frames| {
                let l = set[chunk[row]].frames.dims()[0];
                *frames = sampling::clip_indices(l, net.cfg.frames, clips, clip_no);
                Augment::Train { dy: 0, dx: 0 }
            })?;
            let fwd = net.forward(&x, false)?;
            let probs = softmax(fwd.graph.value(fwd.logits))?;
            for (row, &i) in chunk.iter().enumerate() {
                for c in 0..k {
                    scores[i * k + c] += probs.data()[row * k + c];
                }
            }
        }
    }
    Ok(scores)
}

/// Index of the largest entry; the last maximum wins ties, matching
/// [`top1_hits`].
pub fn argmax(row: &[f32]) -> usize {
    row.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
        .map(|(i, _)| i)
        .unwrap_or(0)
}
