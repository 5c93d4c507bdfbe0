//! Analytic parameter and FLOP accounting, exact to the integer.
//!
//! One multiply-accumulate counts as one FLOP; a convolution therefore costs
//! `Cout*(Cin/G)*prod(k)` per output position, which is also its bias-free
//! parameter count. Batchnorm counts 2 scalars per element (scale and
//! shift), elementwise ops one per element, max pooling one comparison per
//! window tap. These small terms are included for honesty but stay well
//! under one percent of any realistic total.
//!
//! The walker below mirrors the network builder layer for layer, sharing
//! [`ConvSpec`] with the executing kernels, so counted and executed
//! architectures cannot drift apart.

use crate::block::{BlockConfig, BlockKind};
use crate::cstm::TemporalConv;
use crate::network::{BackboneConfig, StemKind};
use crate::ops::ConvSpec;
use crate::Result;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub params: u64,
    pub flops: u64,
    pub out_shape: Vec<usize>,
}

#[derive(Clone, Debug, Default)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
}

impl CostReport {
    pub fn total_params(&self) -> u64 {
        self.layers.iter().map(|l| l.params).sum()
    }

    pub fn total_flops(&self) -> u64 {
        self.layers.iter().map(|l| l.flops).sum()
    }

    /// Aligned text table with a totals row.
    pub fn text_table(&self) -> String {
        let mut rows: Vec<[String; 4]> = vec![[
            "layer".into(),
            "params".into(),
            "flops".into(),
            "out_shape".into(),
        ]];
        for l in &self.layers {
            rows.push([l.name.clone(), l.params.to_string(), l.flops.to_string(), shape_str(&l.out_shape)]);
        }
        rows.push([
            "total".into(),
            self.total_params().to_string(),
            self.total_flops().to_string(),
            String::new(),
        ]);
        let width = |i: usize| rows.iter().map(|r| r[i].len()).max().unwrap();
        let w = [width(0), width(1), width(2), width(3)];
        let mut out = String::new();
        for (i, r) in rows.iter().enumerate() {
            out.push_str(&format!(
                "{:<w0$}  {:>w1$}  {:>w2$}  {:<w3$}\n",
                r[0], r[1], r[2], r[3],
                w0 = w[0], w1 = w[1], w2 = w[2], w3 = w[3],
            ));
            if i == 0 {
                out.push_str(&format!("{}\n", "-".repeat(w.iter().sum::<usize>() + 6)));
            }
        }
        out
    }

    /// Machine-readable rows: `name,params,flops,out_shape`, shapes joined
    /// with `x` so the file stays a plain 4-column CSV.
    pub fn csv(&self) -> String {
        let mut out = String::from("name,params,flops,out_shape\n");
        for l in &self.layers {
            out.push_str(&format!("{},{},{},{}\n", l.name, l.params, l.flops, shape_str(&l.out_shape)));
        }
        out
    }
}

fn shape_str(dims: &[usize]) -> String {
    dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

/// Dense-over-grouped FLOP ratio at equal widths; exactly the group count.
pub fn channelwise_speedup(spec: &ConvSpec) -> f64 {
    let dense = ConvSpec { groups: 1, ..*spec };
    dense.macs_per_output() as f64 / spec.macs_per_output() as f64
}

struct Walker {
    layers: Vec<LayerCost>,
}

impl Walker {
    fn push(&mut self, name: String, params: u64, flops: u64, out_shape: Vec<usize>) {
        self.layers.push(LayerCost { name, params, flops, out_shape });
    }

    /// 2D convolution over `rows` independent frames.
    fn conv(&mut self, name: String, spec: &ConvSpec, rows: usize, h: usize, w: usize) -> Result<(usize, usize)> {
        let (oh, ow) = spec.out_hw(h, w)?;
        let positions = (rows * oh * ow) as u64;
        self.push(
            name,
            spec.param_count(),
            spec.macs_per_output() * spec.out_channels as u64 * positions,
            vec![rows, spec.out_channels, oh, ow],
        );
        Ok((oh, ow))
    }

    /// Temporal convolution over `rows` independent (pixel, channel-block)
    /// sites, length-preserving.
    fn temporal(&mut self, name: String, spec: &ConvSpec, rows: usize, t: usize) {
        self.push(
            name,
            spec.param_count(),
            spec.macs_per_output() * spec.out_channels as u64 * (rows * t) as u64,
            vec![rows, spec.out_channels, t],
        );
    }

    fn bn(&mut self, name: String, c: usize, shape: Vec<usize>) {
        let numel: usize = shape.iter().product();
        self.push(name, 2 * c as u64, 2 * numel as u64, shape);
    }

    fn elementwise(&mut self, name: String, shape: Vec<usize>) {
        let numel: usize = shape.iter().product();
        self.push(name, 0, numel as u64, shape);
    }

    fn block(&mut self, name: &str, cfg: &BlockConfig, n: usize, t: usize, h: usize, w: usize) -> Result<(usize, usize)> {
        let (ci, cb, co, s) = (cfg.in_channels, cfg.bottleneck, cfg.out_channels, cfg.stride);
        let nt = n * t;

        let (h0, w0) = self.conv(format!("{name}.reduce"), &ConvSpec::plane(ci, cb, 1, 1, 0), nt, h, w)?;
        self.bn(format!("{name}.reduce.bn"), cb, vec![nt, cb, h0, w0]);
        self.elementwise(format!("{name}.reduce.relu"), vec![nt, cb, h0, w0]);

        let (oh, ow) = match cfg.kind {
            BlockKind::PlainResidual => {
                let (oh, ow) = self.conv(format!("{name}.mid"), &ConvSpec::plane(cb, cb, 3, s, 1), nt, h0, w0)?;
                self.bn(format!("{name}.mid.bn"), cb, vec![nt, cb, oh, ow]);
                self.elementwise(format!("{name}.mid.relu"), vec![nt, cb, oh, ow]);
                (oh, ow)
            }
            BlockKind::Stm => {
                let mut out = None;
                if cfg.uses_cstm() {
                    let groups = match cfg.temporal {
                        TemporalConv::Channelwise => cb,
                        TemporalConv::Ordinary => 1,
                    };
                    self.temporal(
                        format!("{name}.cstm.temporal"),
                        &ConvSpec::temporal(cb, 3, groups),
                        n * h0 * w0,
                        t,
                    );
                    let (oh, ow) =
                        self.conv(format!("{name}.cstm.spatial"), &ConvSpec::plane(cb, cb, 3, s, 1), nt, h0, w0)?;
                    self.bn(format!("{name}.cstm.bn"), cb, vec![nt, cb, oh, ow]);
                    out = Some((oh, ow));
                }
                if cfg.uses_cmm() {
                    let cr = cb / cfg.r;
                    let (oh, ow) =
                        self.conv(format!("{name}.cmm.reduce"), &ConvSpec::plane(cb, cr, 1, s, 0), nt, h0, w0)?;
                    self.conv(
                        format!("{name}.cmm.motion"),
                        &ConvSpec::plane_channelwise(cr, 3, 1, 1),
                        n * (t - 1).max(1),
                        oh,
                        ow,
                    )?;
                    self.elementwise(format!("{name}.cmm.sub"), vec![n * (t - 1).max(1), cr, oh, ow]);
                    self.conv(format!("{name}.cmm.restore"), &ConvSpec::plane(cr, cb, 1, 1, 0), nt, oh, ow)?;
                    self.bn(format!("{name}.cmm.bn"), cb, vec![nt, cb, oh, ow]);
                    out = Some((oh, ow));
                }
                let (oh, ow) = out.expect("validated config has at least one branch");
                if cfg.needs_merge() {
                    self.conv(format!("{name}.merge"), &ConvSpec::plane(2 * cb, cb, 1, 1, 0), nt, oh, ow)?;
                    self.bn(format!("{name}.merge.bn"), cb, vec![nt, cb, oh, ow]);
                } else if cfg.uses_cstm() && cfg.uses_cmm() {
                    self.elementwise(format!("{name}.fuse"), vec![nt, cb, oh, ow]);
                }
                (oh, ow)
            }
        };

        self.conv(format!("{name}.restore"), &ConvSpec::plane(cb, co, 1, 1, 0), nt, oh, ow)?;
        self.bn(format!("{name}.restore.bn"), co, vec![nt, co, oh, ow]);
        if cfg.needs_projection() {
            self.conv(format!("{name}.shortcut"), &ConvSpec::plane(ci, co, 1, s, 0), nt, h, w)?;
            self.bn(format!("{name}.shortcut.bn"), co, vec![nt, co, oh, ow]);
        }
        self.elementwise(format!("{name}.add"), vec![nt, co, oh, ow]);
        self.elementwise(format!("{name}.relu"), vec![nt, co, oh, ow]);
        Ok((oh, ow))
    }
}

/// Exact cost of one forward pass over an `[n,t,3,h,w]` batch, mirroring the
/// builder's layer order. Parameter totals equal the built network's scalar
/// count exactly; batchnorm running buffers are not parameters and are not
/// counted.
pub fn count_network(cfg: &BackboneConfig, n: usize, t: usize, h: usize, w: usize) -> Result<CostReport> {
    let blocks = cfg.block_configs()?;
    let mut wk = Walker { layers: Vec::new() };
    let nt = n * t;
    let c0 = cfg.stage_channels[0];

    let stem = cfg.stem_spec();
    let (mut ch, mut cw) = wk.conv("stem.conv".into(), &stem, nt, h, w)?;
    wk.bn("stem.bn".into(), c0, vec![nt, c0, ch, cw]);
    wk.elementwise("stem.relu".into(), vec![nt, c0, ch, cw]);
    if cfg.stem == StemKind::Full {
        let (ph, pw) = ((ch + 2 - 3) / 2 + 1, (cw + 2 - 3) / 2 + 1);
        wk.push("stem.pool".into(), 0, (9 * nt * c0 * ph * pw) as u64, vec![nt, c0, ph, pw]);
        (ch, cw) = (ph, pw);
    }

    for (name, bc) in &blocks {
        (ch, cw) = wk.block(name, bc, n, t, ch, cw)?;
    }

    let cf = cfg.head_features();
    wk.push("gap".into(), 0, (nt * cf * ch * cw) as u64, vec![nt, cf]);
    wk.push("temporal_mean".into(), 0, (nt * cf) as u64, vec![n, cf]);
    let k = cfg.num_classes;
    wk.push("head".into(), (k * cf + k) as u64, (k * cf * n) as u64, vec![n, k]);

    Ok(CostReport { layers: wk.layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::{Branches, Fusion};
    use crate::network::Network;

    fn r50(branches: Branches, temporal: TemporalConv) -> BackboneConfig {
        BackboneConfig { branches, temporal, ..BackboneConfig::resnet50(174, 8) }
    }

    fn report(cfg: &BackboneConfig, t: usize) -> CostReport {
        count_network(cfg, 1, t, cfg.input_size, cfg.input_size).unwrap()
    }

    #[test]
    fn frozen_parameter_totals() {
        let plain = BackboneConfig::resnet50(174, 8).all_plain();
        assert_eq!(report(&plain, 8).total_params(), 23_864_558);

        let cstm_cw = r50(Branches::CstmOnly, TemporalConv::Channelwise);
        assert_eq!(report(&cstm_cw, 8).total_params(), 23_875_886);

        let cstm_dense = r50(Branches::CstmOnly, TemporalConv::Ordinary);
        assert_eq!(report(&cstm_dense, 8).total_params(), 27_636_974);
        assert_eq!(
            report(&cstm_dense, 8).total_params() - report(&cstm_cw, 8).total_params(),
            3_761_088,
            "dense minus channelwise temporal weights"
        );

        let full = BackboneConfig::resnet50(174, 8);
        assert_eq!(report(&full, 8).total_params(), 24_042_746);
    }

    #[test]
    fn flops_land_in_the_published_windows() {
        let g = 1e9;
        let plain = report(&BackboneConfig::resnet50(174, 8).all_plain(), 8).total_flops() as f64;
        assert!((plain / g - 32.9).abs() <= 0.02 * 32.9, "plain: {plain}");

        let cw = report(&r50(Branches::CstmOnly, TemporalConv::Channelwise), 8).total_flops() as f64;
        assert!((cw / g - 32.93).abs() <= 0.02 * 32.93, "channelwise: {cw}");

        let dense = report(&r50(Branches::CstmOnly, TemporalConv::Ordinary), 8).total_flops() as f64;
        assert!((dense / g - 40.59).abs() <= 0.02 * 40.59, "dense: {dense}");

        let full8 = report(&BackboneConfig::resnet50(174, 8), 8).total_flops() as f64;
        assert!((full8 / g - 33.3).abs() <= 0.02 * 33.3, "full stm: {full8}");
        let ratio = full8 / plain;
        assert!((1.005..=1.03).contains(&ratio), "ratio {ratio}");

        let full16 = report(&BackboneConfig::resnet50(174, 8), 16).total_flops() as f64;
        assert!((full16 / g - 66.5).abs() <= 0.02 * 66.5, "full stm 16f: {full16}");
    }

    #[test]
    fn params_are_frame_count_invariant() {
        let cfg = BackboneConfig::resnet50(174, 8);
        assert_eq!(report(&cfg, 8).total_params(), report(&cfg, 16).total_params());
    }

    #[test]
    fn counts_match_built_networks_exactly() {
        let variants = [
            BackboneConfig::stm_tiny(6, 8),
            BackboneConfig::stm_tiny(6, 8).all_plain(),
            BackboneConfig { branches: Branches::CstmOnly, ..BackboneConfig::stm_tiny(6, 8) },
            BackboneConfig { branches: Branches::CmmOnly, ..BackboneConfig::stm_tiny(6, 8) },
            BackboneConfig { fusion: Fusion::Concatenation, ..BackboneConfig::stm_tiny(6, 8) },
            BackboneConfig { temporal: TemporalConv::Ordinary, ..BackboneConfig::stm_tiny(6, 8) },
            BackboneConfig::resnet50(174, 8),
        ];
        for cfg in variants {
            let counted = report(&cfg, cfg.frames).total_params();
            let built = Network::<f32>::build(cfg.clone(), 0).unwrap().params.param_count();
            assert_eq!(counted, built as u64, "{cfg:?}");
        }
    }

    #[test]
    fn flops_grow_with_every_extent() {
        let base = BackboneConfig::stm_tiny(6, 8);
        let at = |cfg: &BackboneConfig, t: usize, hw: usize| {
            count_network(cfg, 1, t, hw, hw).unwrap().total_flops()
        };
        assert!(at(&base, 16, 32) > at(&base, 8, 32));
        assert!(at(&base, 8, 64) > at(&base, 8, 32));
        let wide = BackboneConfig { stage_channels: [32, 64, 128, 256], ..base.clone() };
        assert!(at(&wide, 8, 32) > at(&base, 8, 32));
    }

    #[test]
    fn grouping_divides_flops_exactly() {
        assert_eq!(channelwise_speedup(&ConvSpec::plane_channelwise(64, 3, 1, 1)), 64.0);
        assert_eq!(channelwise_speedup(&ConvSpec::plane(64, 64, 3, 1, 1)), 1.0);
        let spec = ConvSpec { groups: 8, ..ConvSpec::plane(32, 48, 3, 1, 1) };
        let dense = ConvSpec { groups: 1, ..spec };
        let ratio = dense.macs_per_output() as f64 / spec.macs_per_output() as f64;
        assert_eq!(channelwise_speedup(&spec), ratio);
        assert_eq!(ratio, 8.0);
    }

    #[test]
    fn reports_render_as_table_and_csv() {
        let rep = report(&BackboneConfig::stm_tiny(6, 8), 8);
        let table = rep.text_table();
        assert!(table.contains("layer"));
        assert!(table.contains("total"));
        assert!(table.contains("s2.b0.cstm.temporal"));

        let csv = rep.csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "name,params,flops,out_shape");
        let mut params = 0u64;
        let mut flops = 0u64;
        for line in lines {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols.len(), 4, "bad row: {line}");
            params += cols[1].parse::<u64>().unwrap();
            flops += cols[2].parse::<u64>().unwrap();
        }
        assert_eq!(params, rep.total_params());
        assert_eq!(flops, rep.total_flops());
    }
}
