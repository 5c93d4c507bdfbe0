//! Residual bottleneck blocks.
//!
//! Two kinds share one skeleton: reduce 1x1 -> body -> restore 1x1 -> add
//! shortcut -> relu. The plain kind's body is the classic dense 3x3
//! convolution; the spatiotemporal kind runs the CSTM and CMM branches in
//! parallel on the bottleneck-width feature and fuses them. Spatial stride
//! lives in the body (and in the projection shortcut), never in the reduce
//! conv, so the temporal stage of CSTM always sees full-resolution frames.

use crate::cmm::{cmm_forward, CmmParams};
use crate::cstm::{cstm_forward, CstmParams, TemporalConv};
use crate::graph::{Graph, ValueId};
use crate::norm::{apply_norm, BnSite, NormCtx, StatSink};
use crate::ops::ConvSpec;
use crate::scalar::Element;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fusion {
    Summation,
    Concatenation,
}

impl std::str::FromStr for Fusion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Fusion::Summation),
            "concat" => Ok(Fusion::Concatenation),
            other => Err(Error::Usage(format!("fusion must be `sum` or `concat`, got `{other}`"))),
        }
    }
}

impl std::fmt::Display for Fusion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Fusion::Summation => "sum",
            Fusion::Concatenation => "concat",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branches {
    Both,
    CstmOnly,
    CmmOnly,
}

impl std::str::FromStr for Branches {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(Branches::Both),
            "cstm" => Ok(Branches::CstmOnly),
            "cmm" => Ok(Branches::CmmOnly),
            other => Err(Error::Usage(format!("branches must be `both`, `cstm` or `cmm`, got `{other}`"))),
        }
    }
}

impl std::fmt::Display for Branches {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Branches::Both => "both",
            Branches::CstmOnly => "cstm",
            Branches::CmmOnly => "cmm",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Stm,
    PlainResidual,
}

/// Static description of one block: widths, stride and branch wiring.
#[derive(Clone, Copy, Debug)]
pub struct BlockConfig {
    pub in_channels: usize,
    pub bottleneck: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// CMM channel reduction; must divide `bottleneck` when CMM is active.
    pub r: usize,
    pub fusion: Fusion,
    pub branches: Branches,
    pub kind: BlockKind,
    pub temporal: TemporalConv,
}

impl BlockConfig {
    /// Spatiotemporal block with the standard 4x bottleneck and r=16.
    pub fn stm(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        BlockConfig {
            in_channels,
            bottleneck: out_channels / 4,
            out_channels,
            stride,
            r: 16,
            fusion: Fusion::Summation,
            branches: Branches::Both,
            kind: BlockKind::Stm,
            temporal: TemporalConv::Channelwise,
        }
    }

    /// Plain bottleneck with the same widths.
    pub fn plain(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        BlockConfig { kind: BlockKind::PlainResidual, ..Self::stm(in_channels, out_channels, stride) }
    }

    pub fn uses_cstm(&self) -> bool {
        self.kind == BlockKind::Stm && self.branches != Branches::CmmOnly
    }

    pub fn uses_cmm(&self) -> bool {
        self.kind == BlockKind::Stm && self.branches != Branches::CstmOnly
    }

    pub fn needs_merge(&self) -> bool {
        self.kind == BlockKind::Stm
            && self.branches == Branches::Both
            && self.fusion == Fusion::Concatenation
    }

    pub fn needs_projection(&self) -> bool {
        self.in_channels != self.out_channels || self.stride != 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride != 1 && self.stride != 2 {
            return Err(Error::Config(format!("block stride must be 1 or 2, got {}", self.stride)));
        }
        if self.in_channels == 0 || self.bottleneck == 0 || self.out_channels == 0 {
            return Err(Error::Config("block widths must be nonzero".into()));
        }
        if self.uses_cmm() {
            if self.r == 0 || self.bottleneck % self.r != 0 {
                return Err(Error::Config(format!(
                    "motion reduction {} does not divide bottleneck width {}",
                    self.r, self.bottleneck
                )));
            }
        }
        if self.kind == BlockKind::Stm
            && self.fusion == Fusion::Concatenation
            && self.branches != Branches::Both
        {
            return Err(Error::Config(
                "concatenation fusion needs both branches active".into(),
            ));
        }
        Ok(())
    }
}

/// A convolution weight plus the batchnorm that follows it.
pub struct ConvBn<'a, E: Element> {
    pub w: ValueId,
    pub norm: BnSite<'a, E>,
}

/// Graph handles for every learnable piece of one block. Which options must
/// be populated follows from the config: `mid` for plain blocks, `cstm`/`cmm`
/// per the branch selection, `merge` for concatenation fusion, `shortcut`
/// exactly when the block projects.
pub struct BlockParams<'a, E: Element> {
    pub reduce: ConvBn<'a, E>,
    pub mid: Option<ConvBn<'a, E>>,
    pub cstm: Option<CstmParams<'a, E>>,
    pub cmm: Option<CmmParams<'a, E>>,
    pub merge: Option<ConvBn<'a, E>>,
    pub restore: ConvBn<'a, E>,
    pub shortcut: Option<ConvBn<'a, E>>,
}

/// Learnable conv weights of one block as (role, dims), in wiring order.
pub fn conv_layout(cfg: &BlockConfig) -> Result<Vec<(&'static str, Vec<usize>)>> {
    cfg.validate()?;
    let (ci, cb, co) = (cfg.in_channels, cfg.bottleneck, cfg.out_channels);
    let mut v = vec![("reduce.w", vec![cb, ci, 1, 1])];
    match cfg.kind {
        BlockKind::PlainResidual => v.push(("mid.w", vec![cb, cb, 3, 3])),
        BlockKind::Stm => {
            if cfg.uses_cstm() {
                v.push(("cstm.temporal", cfg.temporal.weight_dims(cb)));
                v.push(("cstm.spatial", vec![cb, cb, 3, 3]));
            }
            if cfg.uses_cmm() {
                let cr = cb / cfg.r;
                v.push(("cmm.reduce", vec![cr, cb, 1, 1]));
                v.push(("cmm.motion", vec![cr, 1, 3, 3]));
                v.push(("cmm.restore", vec![cb, cr, 1, 1]));
            }
            if cfg.needs_merge() {
                v.push(("merge.w", vec![cb, 2 * cb, 1, 1]));
            }
        }
    }
    v.push(("restore.w", vec![co, cb, 1, 1]));
    if cfg.needs_projection() {
        v.push(("shortcut.w", vec![co, ci, 1, 1]));
    }
    Ok(v)
}

/// Batchnorm sites of one block as (role, channels), in wiring order.
pub fn norm_layout(cfg: &BlockConfig) -> Result<Vec<(&'static str, usize)>> {
    cfg.validate()?;
    let (cb, co) = (cfg.bottleneck, cfg.out_channels);
    let mut v = vec![("reduce.bn", cb)];
    match cfg.kind {
        BlockKind::PlainResidual => v.push(("mid.bn", cb)),
        BlockKind::Stm => {
            if cfg.uses_cstm() {
                v.push(("cstm.bn", cb));
            }
            if cfg.uses_cmm() {
                v.push(("cmm.bn", cb));
            }
            if cfg.needs_merge() {
                v.push(("merge.bn", cb));
            }
        }
    }
    v.push(("restore.bn", co));
    if cfg.needs_projection() {
        v.push(("shortcut.bn", co));
    }
    Ok(v)
}

fn conv_norm<E: Element>(
    g: &mut Graph<E>,
    x: ValueId,
    p: &ConvBn<'_, E>,
    spec: ConvSpec,
    ctx: &NormCtx<E>,
    sink: &mut StatSink<E>,
) -> Result<ValueId> {
    let y = g.conv2d(x, p.w, None, spec)?;
    apply_norm(g, y, &p.norm, ctx, sink)
}

fn require<'p, T>(part: &'p Option<T>, what: &str, cfg: &BlockConfig) -> Result<&'p T> {
    part.as_ref().ok_or_else(|| {
        Error::Config(format!("block: {what} parameters missing for {cfg:?}"))
    })
}

fn forbid<T>(part: &Option<T>, what: &str) -> Result<()> {
    if part.is_some() {
        return Err(Error::Config(format!("block: unexpected {what} parameters")));
    }
    Ok(())
}

/// Run one block on a `[N,T,C_in,H,W]` value, returning `[N,T,C_out,H',W']`.
///
/// `tag`, when given, labels the branch outputs (`<tag>.cstm`, `<tag>.cmm`,
/// plus `<tag>.cmm.motion` for the pre-restore difference stack) and the
/// block output (`<tag>.out`) in the graph so feature dumps and non-finite
/// diagnostics can name them.
pub fn block_forward<E: Element>(
    g: &mut Graph<E>,
    x: ValueId,
    cfg: &BlockConfig,
    p: &BlockParams<'_, E>,
    ctx: &NormCtx<E>,
    sink: &mut StatSink<E>,
    tag: Option<&str>,
) -> Result<ValueId> {
    cfg.validate()?;
    let dims = g.value(x).dims().to_vec();
    let [n, t, c_in, h, w] = dims[..] else {
        return Err(Error::shape("block", format!("expected [N,T,C,H,W] input, got {dims:?}")));
    };
    if c_in != cfg.in_channels {
        return Err(Error::Config(format!(
            "block: input has {c_in} channels, config says {}",
            cfg.in_channels
        )));
    }
    match cfg.kind {
        BlockKind::Stm => forbid(&p.mid, "plain-path")?,
        BlockKind::PlainResidual => {
            forbid(&p.cstm, "cstm")?;
            forbid(&p.cmm, "cmm")?;
            forbid(&p.merge, "merge")?;
        }
    }
    if !cfg.uses_cstm() {
        forbid(&p.cstm, "cstm")?;
    }
    if !cfg.uses_cmm() {
        forbid(&p.cmm, "cmm")?;
    }
    if !cfg.needs_merge() {
        forbid(&p.merge, "merge")?;
    }
    if !cfg.needs_projection() {
        forbid(&p.shortcut, "projection-shortcut")?;
    }

    let (cb, co, s) = (cfg.bottleneck, cfg.out_channels, cfg.stride);
    let (oh, ow) = ConvSpec::plane(cb, cb, 3, s, 1).out_hw(h, w)?;

    let x4 = g.reshape(x, &[n * t, c_in, h, w])?;
    let red = conv_norm(g, x4, &p.reduce, ConvSpec::plane(c_in, cb, 1, 1, 0), ctx, sink)?;
    let red = g.relu(red);

    let fused = match cfg.kind {
        BlockKind::PlainResidual => {
            let mid = require(&p.mid, "plain-path", cfg)?;
            let m = conv_norm(g, red, mid, ConvSpec::plane(cb, cb, 3, s, 1), ctx, sink)?;
            g.relu(m)
        }
        BlockKind::Stm => {
            let clip = g.reshape(red, &[n, t, cb, h, w])?;
            let cmm_tag = tag.map(|t| format!("{t}.cmm"));
            let run_cstm = |g: &mut Graph<E>, sink: &mut StatSink<E>| -> Result<ValueId> {
                let a = cstm_forward(g, clip, s, require(&p.cstm, "cstm", cfg)?, ctx, sink)?;
                if let Some(t) = tag {
                    g.set_label(a, format!("{t}.cstm"));
                }
                Ok(a)
            };
            let run_cmm = |g: &mut Graph<E>, sink: &mut StatSink<E>| -> Result<ValueId> {
                let b = cmm_forward(
                    g,
                    clip,
                    s,
                    require(&p.cmm, "cmm", cfg)?,
                    ctx,
                    sink,
                    cmm_tag.as_deref(),
                )?;
                if let Some(t) = &cmm_tag {
                    g.set_label(b, t.clone());
                }
                Ok(b)
            };
            match cfg.branches {
                Branches::CstmOnly => {
                    let a = run_cstm(g, sink)?;
                    g.reshape(a, &[n * t, cb, oh, ow])?
                }
                Branches::CmmOnly => {
                    let b = run_cmm(g, sink)?;
                    g.reshape(b, &[n * t, cb, oh, ow])?
                }
                Branches::Both => {
                    let a = run_cstm(g, sink)?;
                    let b = run_cmm(g, sink)?;
                    match cfg.fusion {
                        Fusion::Summation => {
                            let f = g.add(a, b)?;
                            g.reshape(f, &[n * t, cb, oh, ow])?
                        }
                        Fusion::Concatenation => {
                            let cat = g.concat(&[a, b], 2)?;
                            let cat = g.reshape(cat, &[n * t, 2 * cb, oh, ow])?;
                            let merge = require(&p.merge, "merge", cfg)?;
                            conv_norm(g, cat, merge, ConvSpec::plane(2 * cb, cb, 1, 1, 0), ctx, sink)?
                        }
                    }
                }
            }
        }
    };

    // Restore path ends in batchnorm without relu so the residual sum can go
    // negative before the final activation.
    let main = conv_norm(g, fused, &p.restore, ConvSpec::plane(cb, co, 1, 1, 0), ctx, sink)?;

    let shortcut = if cfg.needs_projection() {
        let proj = require(&p.shortcut, "projection-shortcut", cfg)?;
        conv_norm(g, x4, proj, ConvSpec::plane(c_in, co, 1, s, 0), ctx, sink)?
    } else {
        x4
    };

    let y = g.add(main, shortcut)?;
    let y = g.relu(y);
    let out = g.reshape(y, &[n, t, co, oh, ow])?;
    if let Some(t) = tag {
        g.set_label(out, format!("{t}.out"));
    }
    Ok(out)
}
