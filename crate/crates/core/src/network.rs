//! Whole-network assembly: stem, four bottleneck stages, pooled linear head.
//!
//! A clip `[N,T,3,H,W]` runs frame-by-frame through the 2D stem and the four
//! stages (every block sees the clip as 5D and mixes time internally when it
//! is a spatiotemporal one), then global average pooling and a temporal mean
//! collapse each clip to one feature vector ahead of the classifier. Temporal
//! averaging is the only cross-frame step outside the blocks, so a network
//! whose mask disables every spatiotemporal block is a pure per-frame model
//! with late score fusion.

use std::collections::HashMap;
use std::path::Path;

use crate::block::{
    block_forward, conv_layout, norm_layout, BlockConfig, BlockKind, BlockParams, Branches,
    ConvBn, Fusion,
};
use crate::checkpoint::{Container, FromAny};
use crate::cmm::CmmParams;
use crate::configfile::ConfigMap;
use crate::cstm::{CstmParams, TemporalConv};
use crate::graph::{Graph, ValueId};
use crate::init;
use crate::norm::{BnSite, NormCtx, StatSink};
use crate::ops::batchnorm::BnMode;
use crate::ops::ConvSpec;
use crate::rng;
use crate::scalar::Element;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Bottleneck width to block output width.
pub const EXPANSION: usize = 4;

fn fixed<T, const N: usize>(v: Vec<T>, key: &str) -> Result<[T; N]> {
    let n = v.len();
    v.try_into()
        .map_err(|_| Error::Usage(format!("key `{key}` needs exactly {N} entries, got {n}")))
}

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// First layers ahead of the stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StemKind {
    /// 7x7 stride-2 convolution plus 3x3 stride-2 max pool; pairs with
    /// 224x224 inputs.
    Full,
    /// Single 3x3 stride-2 convolution for small inputs.
    Desk,
}

impl std::str::FromStr for StemKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(StemKind::Full),
            "desk" => Ok(StemKind::Desk),
            other => Err(Error::Usage(format!("stem must be `full` or `desk`, got `{other}`"))),
        }
    }
}

impl std::fmt::Display for StemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StemKind::Full => "full",
            StemKind::Desk => "desk",
        })
    }
}

/// Everything needed to build a network: widths, depth, block mix and input
/// contract. `stm_mask` holds one flag per block in stage order; `true`
/// places a spatiotemporal block, `false` a plain residual one.
#[derive(Clone, Debug)]
pub struct BackboneConfig {
    pub stage_channels: [usize; 4],
    pub stage_blocks: [usize; 4],
    pub stm_mask: Vec<bool>,
    pub stem: StemKind,
    pub num_classes: usize,
    pub frames: usize,
    pub input_size: usize,
    /// Motion-branch channel reduction.
    pub r: usize,
    pub fusion: Fusion,
    pub branches: Branches,
    pub temporal: TemporalConv,
    /// Per-channel input normalization, applied by batch assembly rather
    /// than inside the network. The defaults are the usual ImageNet
    /// constants, kept as plain conventions.
    pub mean: [f64; 3],
    pub std: [f64; 3],
    /// Start every restore batchnorm at scale zero so blocks begin as
    /// identities; helps small nets train from scratch.
    pub zero_init_restore_norm: bool,
}

impl BackboneConfig {
    /// Standard 50-layer backbone; used for cost accounting and full-size
    /// builds.
    pub fn resnet50(num_classes: usize, frames: usize) -> Self {
        BackboneConfig {
            stage_channels: [64, 128, 256, 512],
            stage_blocks: [3, 4, 6, 3],
            stm_mask: vec![true; 16],
            stem: StemKind::Full,
            num_classes,
            frames,
            input_size: 224,
            r: 16,
            fusion: Fusion::Summation,
            branches: Branches::Both,
            temporal: TemporalConv::Channelwise,
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
            zero_init_restore_norm: false,
        }
    }

    /// Four-block miniature for 32x32 clips; trains from scratch in minutes.
    pub fn stm_tiny(num_classes: usize, frames: usize) -> Self {
        BackboneConfig {
            stage_channels: [8, 16, 32, 64],
            stage_blocks: [1, 1, 1, 1],
            stm_mask: vec![true; 4],
            stem: StemKind::Desk,
            input_size: 32,
            r: 4,
            zero_init_restore_norm: true,
            ..Self::resnet50(num_classes, frames)
        }
    }

    /// Same backbone with every block plain.
    pub fn all_plain(mut self) -> Self {
        self.stm_mask = vec![false; self.total_blocks()];
        self
    }

    /// Read a config from flat `key = value` pairs. `preset` picks the
    /// starting point (`stm_tiny`, the default, or `resnet50`); every other
    /// key overrides one field. Overriding `stage_blocks` without giving
    /// `stm_mask` resets the mask to all-spatiotemporal at the new depth.
    pub fn from_config(cfg: &ConfigMap) -> Result<Self> {
        let mut out = match cfg.raw("preset").unwrap_or("stm_tiny") {
            "stm_tiny" => Self::stm_tiny(6, 8),
            "resnet50" => Self::resnet50(174, 8),
            other => {
                return Err(Error::Usage(format!(
                    "preset must be `stm_tiny` or `resnet50`, got `{other}`"
                )))
            }
        };
        if let Some(v) = cfg.list("stage_channels")? {
            out.stage_channels = fixed(v, "stage_channels")?;
        }
        if let Some(v) = cfg.list("stage_blocks")? {
            out.stage_blocks = fixed(v, "stage_blocks")?;
            out.stm_mask = vec![true; out.total_blocks()];
        }
        if let Some(v) = cfg.mask("stm_mask")? {
            out.stm_mask = v;
        }
        if let Some(v) = cfg.get("stem")? {
            out.stem = v;
        }
        out.num_classes = cfg.get_or("num_classes", out.num_classes)?;
        out.frames = cfg.get_or("frames", out.frames)?;
        out.input_size = cfg.get_or("input_size", out.input_size)?;
        out.r = cfg.get_or("r", out.r)?;
        out.fusion = cfg.get_or("fusion", out.fusion)?;
        out.branches = cfg.get_or("branches", out.branches)?;
        out.temporal = cfg.get_or("temporal_conv", out.temporal)?;
        if let Some(v) = cfg.list("mean")? {
            out.mean = fixed(v, "mean")?;
        }
        if let Some(v) = cfg.list("std")? {
            out.std = fixed(v, "std")?;
        }
        out.zero_init_restore_norm = cfg.get_or("zero_init_restore_norm", out.zero_init_restore_norm)?;
        Ok(out)
    }

    pub fn total_blocks(&self) -> usize {
        self.stage_blocks.iter().sum()
    }

    /// Classifier input width.
    pub fn head_features(&self) -> usize {
        EXPANSION * self.stage_channels[3]
    }

    pub fn stem_spec(&self) -> ConvSpec {
        match self.stem {
            StemKind::Full => ConvSpec::plane(3, self.stage_channels[0], 7, 2, 3),
            StemKind::Desk => ConvSpec::plane(3, self.stage_channels[0], 3, 2, 1),
        }
    }

    /// Per-block configs in execution order, named `s<stage>.b<index>` with
    /// stages numbered 2..=5. Stage strides are fixed at [1,2,2,2], applied
    /// by each stage's first block.
    pub fn block_configs(&self) -> Result<Vec<(String, BlockConfig)>> {
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be at least 1".into()));
        }
        if self.frames == 0 || self.input_size == 0 {
            return Err(Error::Config("frames and input_size must be nonzero".into()));
        }
        if self.stm_mask.len() != self.total_blocks() {
            return Err(Error::Config(format!(
                "stm_mask holds {} flags but stages {:?} hold {} blocks",
                self.stm_mask.len(),
                self.stage_blocks,
                self.total_blocks()
            )));
        }
        let mut out = Vec::with_capacity(self.total_blocks());
        let mut c_in = self.stage_channels[0];
        let mut flat = 0;
        for (stage, (&cb, &count)) in
            self.stage_channels.iter().zip(&self.stage_blocks).enumerate()
        {
            let co = EXPANSION * cb;
            for b in 0..count {
                let stride = if b == 0 && stage > 0 { 2 } else { 1 };
                let cfg = BlockConfig {
                    in_channels: c_in,
                    bottleneck: cb,
                    out_channels: co,
                    stride,
                    r: self.r,
                    fusion: self.fusion,
                    branches: self.branches,
                    kind: if self.stm_mask[flat] { BlockKind::Stm } else { BlockKind::PlainResidual },
                    temporal: self.temporal,
                };
                cfg.validate()?;
                out.push((format!("s{}.b{}", stage + 2, b), cfg));
                c_in = co;
                flat += 1;
            }
        }
        Ok(out)
    }
}

/// One learnable tensor. The index of an entry inside the store is its
/// gradient slot on the tape.
#[derive(Clone, Debug)]
pub struct ParamEntry<E: Element> {
    pub name: String,
    pub value: Tensor<E>,
    pub trainable: bool,
}

/// Running statistics of one batchnorm site. The index of the buffer inside
/// the store is the `slot` reported through the stat sink.
#[derive(Clone, Debug)]
pub struct BnBuffers<E: Element> {
    pub name: String,
    pub mean: Tensor<E>,
    pub var: Tensor<E>,
}

/// Named parameters and batchnorm buffers in build order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<E: Element> {
    entries: Vec<ParamEntry<E>>,
    buffers: Vec<BnBuffers<E>>,
    by_name: HashMap<String, usize>,
    bn_by_name: HashMap<String, usize>,
}

impl<E: Element> ParamStore<E> {
    fn add(&mut self, name: String, value: Tensor<E>, trainable: bool) {
        let prev = self.by_name.insert(name.clone(), self.entries.len());
        assert!(prev.is_none(), "duplicate parameter name '{name}'");
        self.entries.push(ParamEntry { name, value, trainable });
    }

    /// Scale, shift and running stats of a batchnorm site over `c` channels.
    fn add_bn(&mut self, name: String, c: usize, scale: E) {
        self.add(format!("{name}.scale"), Tensor::full(vec![c], scale), true);
        self.add(format!("{name}.shift"), Tensor::zeros(vec![c]), true);
        let prev = self.bn_by_name.insert(name.clone(), self.buffers.len());
        assert!(prev.is_none(), "duplicate batchnorm name '{name}'");
        self.buffers.push(BnBuffers {
            name,
            mean: Tensor::zeros(vec![c]),
            var: Tensor::full(vec![c], E::one()),
        });
    }

    pub fn entries(&self) -> &[ParamEntry<E>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<E>] {
        &mut self.entries
    }

    pub fn buffers(&self) -> &[BnBuffers<E>] {
        &self.buffers
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn bn_index(&self, name: &str) -> Option<usize> {
        self.bn_by_name.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<E>> {
        self.index_of(name).map(|i| &self.entries[i].value)
    }

    /// Total scalar count across entries (buffers excluded).
    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }
}

/// A built network: config echo plus parameter store.
#[derive(Clone, Debug)]
pub struct Network<E: Element> {
    pub cfg: BackboneConfig,
    pub params: ParamStore<E>,
}

/// Result of one forward pass. `stats` holds fresh batchnorm running stats
/// in train mode; hand them back through [`Network::commit_stats`].
pub struct Forward<E: Element> {
    pub graph: Graph<E>,
    pub logits: ValueId,
    pub stats: StatSink<E>,
}

/// Name-to-graph wiring for one forward pass.
struct Wires<'a, E: Element> {
    store: &'a ParamStore<E>,
    ids: &'a [ValueId],
}

impl<'a, E: Element> Wires<'a, E> {
    fn pid(&self, name: &str) -> Result<ValueId> {
        self.store
            .index_of(name)
            .map(|i| self.ids[i])
            .ok_or_else(|| Error::Config(format!("no parameter named '{name}'")))
    }

    fn bn(&self, name: &str) -> Result<BnSite<'a, E>> {
        let slot = self
            .store
            .bn_index(name)
            .ok_or_else(|| Error::Config(format!("no batchnorm site named '{name}'")))?;
        let buf = &self.store.buffers()[slot];
        Ok(BnSite {
            scale: self.pid(&format!("{name}.scale"))?,
            shift: self.pid(&format!("{name}.shift"))?,
            running_mean: &buf.mean,
            running_var: &buf.var,
            slot,
        })
    }

    fn conv_bn(&self, prefix: &str) -> Result<ConvBn<'a, E>> {
        Ok(ConvBn { w: self.pid(&format!("{prefix}.w"))?, norm: self.bn(&format!("{prefix}.bn"))? })
    }

    fn block(&self, name: &str, cfg: &BlockConfig) -> Result<BlockParams<'a, E>> {
        Ok(BlockParams {
            reduce: self.conv_bn(&format!("{name}.reduce"))?,
            mid: if cfg.kind == BlockKind::PlainResidual {
                Some(self.conv_bn(&format!("{name}.mid"))?)
            } else {
                None
            },
            cstm: if cfg.uses_cstm() {
                Some(CstmParams {
                    temporal: self.pid(&format!("{name}.cstm.temporal"))?,
                    spatial: self.pid(&format!("{name}.cstm.spatial"))?,
                    norm: self.bn(&format!("{name}.cstm.bn"))?,
                })
            } else {
                None
            },
            cmm: if cfg.uses_cmm() {
                Some(CmmParams {
                    reduce: self.pid(&format!("{name}.cmm.reduce"))?,
                    motion: self.pid(&format!("{name}.cmm.motion"))?,
                    restore: self.pid(&format!("{name}.cmm.restore"))?,
                    norm: self.bn(&format!("{name}.cmm.bn"))?,
                })
            } else {
                None
            },
            merge: if cfg.needs_merge() {
                Some(self.conv_bn(&format!("{name}.merge"))?)
            } else {
                None
            },
            restore: self.conv_bn(&format!("{name}.restore"))?,
            shortcut: if cfg.needs_projection() {
                Some(self.conv_bn(&format!("{name}.shortcut"))?)
            } else {
                None
            },
        })
    }
}

impl<E: Element> Network<E> {
    /// Deterministic build: every tensor draws from its own stream keyed by
    /// `(seed, parameter name)`, so two builds from the same config and seed
    /// are parameter-identical and the draw order never matters.
    pub fn build(cfg: BackboneConfig, seed: u64) -> Result<Self> {
        let blocks = cfg.block_configs()?;
        let mut ps = ParamStore::default();

        let draw = |name: &str, dims: &[usize]| -> Tensor<E> {
            let mut r = rng::seeded(rng::stream_seed(seed, name, 0));
            let fan_in: usize = dims[1..].iter().product();
            init::normal_tensor(&mut r, dims, (2.0 / fan_in as f64).sqrt())
        };

        let c0 = cfg.stage_channels[0];
        ps.add("stem.conv.w".into(), draw("stem.conv.w", &cfg.stem_spec().weight_dims()), true);
        ps.add_bn("stem.bn".into(), c0, E::one());

        for (name, bc) in &blocks {
            for (role, dims) in conv_layout(bc)? {
                let full = format!("{name}.{role}");
                let value = if role == "cstm.temporal" {
                    match cfg.temporal {
                        TemporalConv::Channelwise => init::init_temporal_channelwise(bc.bottleneck),
                        TemporalConv::Ordinary => init::init_temporal_ordinary(bc.bottleneck),
                    }
                } else {
                    draw(&full, &dims)
                };
                ps.add(full, value, true);
            }
            for (role, c) in norm_layout(bc)? {
                let scale = if role == "restore.bn" && cfg.zero_init_restore_norm {
                    E::zero()
                } else {
                    E::one()
                };
                ps.add_bn(format!("{name}.{role}"), c, scale);
            }
        }

        let feat = cfg.head_features();
        let mut head_rng = rng::seeded(rng::stream_seed(seed, "head.w", 0));
        ps.add("head.w".into(), init::kaiming_linear(&mut head_rng, cfg.num_classes, feat), true);
        ps.add("head.b".into(), Tensor::zeros(vec![cfg.num_classes]), true);

        Ok(Network { cfg, params: ps })
    }

    /// One pass over a `[N,T,3,H,W]` clip batch, producing `[N,K]` logits.
    ///
    /// H and W must match the config; T may differ from `cfg.frames` (the
    /// temporal mean and the blocks adapt), which keeps frame-count
    /// experiments out of the build path. In train mode the tape records
    /// gradients and `stats` carries fresh batchnorm running values.
    pub fn forward(&self, frames: &Tensor<E>, training: bool) -> Result<Forward<E>> {
        let d = frames.dims().to_vec();
        let [n, t, c, h, w] = d[..] else {
            return Err(Error::shape("network", format!("clips are [N,T,3,H,W], got {d:?}")));
        };
        if c != 3 {
            return Err(Error::shape("network", format!("expected 3 input channels, got {c}")));
        }
        if h != self.cfg.input_size || w != self.cfg.input_size {
            return Err(Error::shape(
                "network",
                format!("expected {0}x{0} frames, got {h}x{w}", self.cfg.input_size),
            ));
        }

        let mut g = Graph::new(training);
        let mode = if training { BnMode::Train } else { BnMode::Eval };
        let ctx = NormCtx {
            mode,
            momentum: E::from_f64(BN_MOMENTUM),
            eps: E::from_f64(BN_EPS),
        };
        let mut sink: StatSink<E> = Vec::new();

        let ids: Vec<ValueId> = self
            .params
            .entries()
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let id = g.param(i, e.value.clone(), e.trainable);
                g.set_label(id, e.name.clone());
                id
            })
            .collect();
        let wires = Wires { store: &self.params, ids: &ids };

        let x = g.leaf(frames.clone());
        let x4 = g.reshape(x, &[n * t, c, h, w])?;
        let y = g.conv2d(x4, wires.pid("stem.conv.w")?, None, self.cfg.stem_spec())?;
        let y = crate::norm::apply_norm(&mut g, y, &wires.bn("stem.bn")?, &ctx, &mut sink)?;
        let mut y = g.relu(y);
        if self.cfg.stem == StemKind::Full {
            y = g.max_pool(y, 3, 2, 1)?;
        }
        g.set_label(y, "stem.out");

        let yd = g.value(y).dims().to_vec();
        let mut cur = g.reshape(y, &[n, t, yd[1], yd[2], yd[3]])?;
        for (name, bc) in self.cfg.block_configs()? {
            let p = wires.block(&name, &bc)?;
            cur = block_forward(&mut g, cur, &bc, &p, &ctx, &mut sink, Some(&name))?;
        }

        let cd = g.value(cur).dims().to_vec();
        let y4 = g.reshape(cur, &[n * t, cd[2], cd[3], cd[4]])?;
        let pooled = g.global_avg_pool(y4)?;
        let pooled = g.reshape(pooled, &[n, t, cd[2]])?;
        let clip_feat = g.mean_axis(pooled, 1)?;
        let logits = g.linear(clip_feat, wires.pid("head.w")?, Some(wires.pid("head.b")?))?;
        g.set_label(logits, "logits");

        Ok(Forward { graph: g, logits, stats: sink })
    }

    /// Fold fresh running statistics from a train-mode pass back into the
    /// store.
    pub fn commit_stats(&mut self, stats: StatSink<E>) {
        for (slot, (mean, var)) in stats {
            let buf = &mut self.params.buffers[slot];
            buf.mean = mean;
            buf.var = var;
        }
    }

    /// Replace one named parameter, keeping its shape contract.
    pub fn set_param(&mut self, name: &str, value: Tensor<E>) -> Result<()> {
        let i = self
            .params
            .index_of(name)
            .ok_or_else(|| Error::Config(format!("no parameter named '{name}'")))?;
        let e = &mut self.params.entries[i];
        if e.value.dims() != value.dims() {
            return Err(Error::shape(
                "set_param",
                format!("'{name}' holds {:?}, got {:?}", e.value.dims(), value.dims()),
            ));
        }
        e.value = value;
        Ok(())
    }
}

impl<E: Element + FromAny> Network<E> {
    /// All parameters plus batchnorm buffers (`<site>.mean` / `<site>.var`)
    /// as a checkpoint container.
    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        for e in self.params.entries() {
            c.push_tensor(e.name.clone(), e.value.clone());
        }
        for b in self.params.buffers() {
            c.push_tensor(format!("{}.mean", b.name), b.mean.clone());
            c.push_tensor(format!("{}.var", b.name), b.var.clone());
        }
        c
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().write_to(path)
    }

    pub fn load(cfg: BackboneConfig, path: impl AsRef<Path>) -> Result<Self> {
        let c = Container::read_from(path)?;
        Self::from_container(cfg, &c)
    }

    /// Rebuild a network from a container. Every tensor the config expects
    /// must be present with matching shape and dtype; entries the config
    /// does not know are errors too, except the `opt/` namespace, which
    /// belongs to training state and is ignored here.
    pub fn from_container(cfg: BackboneConfig, c: &Container) -> Result<Self> {
        let mut net = Network::<E>::build(cfg, 0)?;
        let mut expected: Vec<String> = Vec::new();
        let mut missing: Vec<String> = Vec::new();

        for e in net.params.entries_mut() {
            expected.push(e.name.clone());
            match c.get(&e.name) {
                None => missing.push(e.name.clone()),
                Some(_) => {
                    let t: Tensor<E> = c.get_tensor(&e.name)?;
                    if t.dims() != e.value.dims() {
                        return Err(Error::Checkpoint(format!(
                            "entry '{}' holds {:?} but the config wants {:?}",
                            e.name,
                            t.dims(),
                            e.value.dims()
                        )));
                    }
                    e.value = t;
                }
            }
        }
        for b in net.params.buffers.iter_mut() {
            for (field, dest) in [("mean", &mut b.mean), ("var", &mut b.var)] {
                let name = format!("{}.{field}", b.name);
                expected.push(name.clone());
                match c.get(&name) {
                    None => missing.push(name),
                    Some(_) => {
                        let t: Tensor<E> = c.get_tensor(&name)?;
                        if t.dims() != dest.dims() {
                            return Err(Error::Checkpoint(format!(
                                "entry '{name}' holds {:?} but the config wants {:?}",
                                t.dims(),
                                dest.dims()
                            )));
                        }
                        *dest = t;
                    }
                }
            }
        }

        let unexpected: Vec<&str> = c
            .names()
            .filter(|n| !n.starts_with("opt/") && !expected.iter().any(|e| e == n))
            .collect();
        if !missing.is_empty() || !unexpected.is_empty() {
            return Err(Error::Checkpoint(format!(
                "checkpoint does not fit the config: missing [{}]; unexpected [{}]",
                missing.join(", "),
                unexpected.join(", ")
            )));
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn clip(dims: &[usize], seed: u64) -> Tensor<f32> {
        let mut r = rng::seeded(seed);
        Tensor::from_fn(dims, |_| rng::uniform_f64(&mut r, 0.0, 1.0) as f32)
    }

    fn eval_logits(net: &Network<f32>, frames: &Tensor<f32>) -> Tensor<f32> {
        let f = net.forward(frames, false).unwrap();
        assert!(f.stats.is_empty(), "eval mode must not emit stat updates");
        f.graph.value(f.logits).clone()
    }

    #[test]
    fn desk_forward_yields_logits_and_labeled_internals() {
        let net = Network::<f32>::build(BackboneConfig::stm_tiny(6, 8), 1).unwrap();
        let x = clip(&[2, 8, 3, 32, 32], 11);
        let f = net.forward(&x, false).unwrap();
        let out = f.graph.value(f.logits);
        assert_eq!(out.dims(), [2, 6]);
        assert!(out.is_all_finite());
        for label in ["stem.out", "s2.b0.cstm", "s3.b0.cmm.motion", "s5.b0.out", "logits"] {
            assert!(f.graph.find_label(label).is_some(), "missing label {label}");
        }
    }

    #[test]
    fn same_seed_builds_identical_parameters() {
        let a = Network::<f32>::build(BackboneConfig::stm_tiny(6, 8), 9).unwrap();
        let b = Network::<f32>::build(BackboneConfig::stm_tiny(6, 8), 9).unwrap();
        assert_eq!(a.params.entries().len(), b.params.entries().len());
        for (ea, eb) in a.params.entries().iter().zip(b.params.entries()) {
            assert_eq!(ea.name, eb.name);
            assert_eq!(ea.value.data(), eb.value.data(), "{} must match", ea.name);
        }
        let c = Network::<f32>::build(BackboneConfig::stm_tiny(6, 8), 10).unwrap();
        let differs = a
            .params
            .entries()
            .iter()
            .zip(c.params.entries())
            .any(|(ea, ec)| ea.value.data() != ec.value.data());
        assert!(differs, "a different seed must change some parameter");
    }

    #[test]
    fn eval_logits_follow_batch_duplication_and_order() {
        let net = Network::<f32>::build(BackboneConfig::stm_tiny(4, 4), 3).unwrap();
        let a = clip(&[1, 4, 3, 32, 32], 21);
        let b = clip(&[1, 4, 3, 32, 32], 22);
        let mut ab = Vec::new();
        ab.extend_from_slice(a.data());
        ab.extend_from_slice(b.data());
        let mut ba = Vec::new();
        ba.extend_from_slice(b.data());
        ba.extend_from_slice(a.data());
        let mut aa = Vec::new();
        aa.extend_from_slice(a.data());
        aa.extend_from_slice(a.data());

        let lab = eval_logits(&net, &Tensor::from_vec(vec![2, 4, 3, 32, 32], ab).unwrap());
        let lba = eval_logits(&net, &Tensor::from_vec(vec![2, 4, 3, 32, 32], ba).unwrap());
        let laa = eval_logits(&net, &Tensor::from_vec(vec![2, 4, 3, 32, 32], aa).unwrap());

        let k = 4;
        assert_eq!(lab.data()[..k], lba.data()[k..], "row swap must swap logits");
        assert_eq!(lab.data()[k..], lba.data()[..k]);
        assert_eq!(laa.data()[..k], laa.data()[k..], "duplicated rows must agree");
        assert_eq!(laa.data()[..k], lab.data()[..k]);
    }

    #[test]
    fn wrong_mask_length_is_a_config_error() {
        let mut cfg = BackboneConfig::stm_tiny(6, 8);
        cfg.stm_mask = vec![true; 3];
        let err = Network::<f32>::build(cfg, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("stm_mask"), "got: {err}");
    }

    #[test]
    fn config_file_overrides_the_preset() {
        let text = "preset = stm_tiny\nframes = 4\nstm_mask = 0110\nbranches = cmm\n\
                    fusion = concat\ntemporal_conv = ordinary\nstem = desk\nmean = 0.5,0.5,0.5\n";
        let map = crate::configfile::ConfigMap::parse_str(text).unwrap();
        let cfg = BackboneConfig::from_config(&map).unwrap();
        assert!(map.unused().is_empty());
        assert_eq!(cfg.frames, 4);
        assert_eq!(cfg.stm_mask, vec![false, true, true, false]);
        assert_eq!(cfg.branches, Branches::CmmOnly);
        assert_eq!(cfg.fusion, Fusion::Concatenation);
        assert_eq!(cfg.temporal, TemporalConv::Ordinary);
        assert_eq!(cfg.mean, [0.5; 3]);
        assert_eq!(cfg.input_size, 32, "untouched fields keep preset values");

        let deeper = ConfigMap::parse_str("stage_blocks = 2,2,2,2\n").unwrap();
        let cfg = BackboneConfig::from_config(&deeper).unwrap();
        assert_eq!(cfg.stm_mask.len(), 8, "mask follows a deeper layout");

        let bad = ConfigMap::parse_str("branches = all\n").unwrap();
        let err = BackboneConfig::from_config(&bad).unwrap_err();
        assert!(matches!(err, Error::Usage(_)), "{err}");
    }

    #[test]
    fn checkpoint_round_trip_forwards_bit_identically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.stmk");
        let net = Network::<f32>::build(BackboneConfig::stm_tiny(6, 4), 5).unwrap();
        net.save(&path).unwrap();
        let back = Network::<f32>::load(BackboneConfig::stm_tiny(6, 4), &path).unwrap();
        let x = clip(&[2, 4, 3, 32, 32], 33);
        assert_eq!(eval_logits(&net, &x).data(), eval_logits(&back, &x).data());
    }

    #[test]
    fn plain_checkpoint_into_stm_config_lists_the_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plain.stmk");
        let plain = Network::<f32>::build(BackboneConfig::stm_tiny(6, 4).all_plain(), 5).unwrap();
        plain.save(&path).unwrap();
        let err = Network::<f32>::load(BackboneConfig::stm_tiny(6, 4), &path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("missing"), "got: {msg}");
        assert!(msg.contains("s2.b0.cstm.temporal"), "got: {msg}");
        assert!(msg.contains("s2.b0.cmm.motion"), "got: {msg}");
        assert!(msg.contains("unexpected"), "got: {msg}");
        assert!(msg.contains("s2.b0.mid.w"), "got: {msg}");
    }

    #[test]
    fn training_state_namespace_is_ignored_on_load() {
        let net = Network::<f32>::build(BackboneConfig::stm_tiny(6, 4), 5).unwrap();
        let mut c = net.to_container();
        c.push_tensor("opt/velocity/head.w", Tensor::<f32>::zeros(vec![6, 512]));
        let back = Network::<f32>::from_container(BackboneConfig::stm_tiny(6, 4), &c).unwrap();
        assert_eq!(back.params.get("head.w").unwrap().data(), net.params.get("head.w").unwrap().data());
    }

    #[test]
    fn duplicating_every_frame_keeps_plain_eval_logits() {
        let net = Network::<f32>::build(BackboneConfig::stm_tiny(5, 4).all_plain(), 7).unwrap();
        let x = clip(&[1, 4, 3, 32, 32], 44);
        let frame = 3 * 32 * 32;
        let mut doubled = Vec::with_capacity(2 * x.numel());
        for ti in 0..4 {
            let f = &x.data()[ti * frame..(ti + 1) * frame];
            doubled.extend_from_slice(f);
            doubled.extend_from_slice(f);
        }
        let x2 = Tensor::from_vec(vec![1, 8, 3, 32, 32], doubled).unwrap();
        assert_eq!(
            eval_logits(&net, &x).data(),
            eval_logits(&net, &x2).data(),
            "temporal averaging must absorb exact frame duplication"
        );
    }

    #[test]
    fn train_mode_emits_one_stat_update_per_norm_site() {
        let mut net = Network::<f32>::build(BackboneConfig::stm_tiny(6, 4), 2).unwrap();
        let x = clip(&[2, 4, 3, 32, 32], 55);
        let f = net.forward(&x, true).unwrap();
        assert_eq!(f.stats.len(), net.params.buffers().len());
        let before: Vec<f32> = net.params.buffers()[0].mean.data().to_vec();
        net.commit_stats(f.stats);
        assert_ne!(net.params.buffers()[0].mean.data(), &before[..]);
    }
}
