//! Tensor operation kernels: forward math and hand-derived backward passes.
//!
//! The differentiable graph in [`crate::graph`] dispatches into these
//! modules; they also serve the analytic cost model, which shares
//! [`ConvSpec`] so counted layers and executed layers cannot drift apart.

pub mod batchnorm;
pub mod conv1d;
pub mod conv2d;
pub mod linalg;
pub mod linear;
pub mod loss;
pub mod pool;
pub mod shape_ops;

use crate::error::{Error, Result};

/// Kernel extent of a convolution: one temporal tap count or a 2D pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelSize {
    OneD(usize),
    TwoD(usize, usize),
}

/// Static description of a convolution layer. Shared between the executing
/// kernels and the analytic cost model.
///
/// `stride` and `padding` apply to every spatial (or temporal) axis alike;
/// the architectures in this crate never need anisotropic values.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: KernelSize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    /// Dense 2D convolution with a square kernel.
    pub fn plane(cin: usize, cout: usize, k: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            in_channels: cin,
            out_channels: cout,
            kernel: KernelSize::TwoD(k, k),
            stride,
            padding,
            groups: 1,
            has_bias: false,
        }
    }

    /// Channel-wise (depthwise) 2D convolution with a square kernel.
    pub fn plane_channelwise(channels: usize, k: usize, stride: usize, padding: usize) -> Self {
        ConvSpec { groups: channels, ..ConvSpec::plane(channels, channels, k, stride, padding) }
    }

    /// Temporal convolution over `channels` with `groups` weight groups;
    /// `groups == channels` gives the channel-wise variant, `groups == 1`
    /// the ordinary dense one. Zero padded so the length is preserved.
    pub fn temporal(channels: usize, k: usize, groups: usize) -> Self {
        ConvSpec {
            in_channels: channels,
            out_channels: channels,
            kernel: KernelSize::OneD(k),
            stride: 1,
            padding: k / 2,
            groups,
            has_bias: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.groups == 0 {
            return Err(Error::Config(format!("conv spec has a zero extent: {:?}", self)));
        }
        if self.in_channels % self.groups != 0 || self.out_channels % self.groups != 0 {
            return Err(Error::Config(format!(
                "groups={} must divide in_channels={} and out_channels={}",
                self.groups, self.in_channels, self.out_channels
            )));
        }
        if self.stride == 0 {
            return Err(Error::Config("conv stride must be >= 1".into()));
        }
        match self.kernel {
            KernelSize::OneD(k) | KernelSize::TwoD(k, _) if k == 0 => {
                return Err(Error::Config("conv kernel extent must be >= 1".into()));
            }
            KernelSize::TwoD(_, k) if k == 0 => {
                return Err(Error::Config("conv kernel extent must be >= 1".into()));
            }
            _ => {}
        }
        Ok(())
    }

    /// Expected weight tensor dims: `[cout, cin/groups, kh, kw]` or
    /// `[cout, cin/groups, k]`.
    pub fn weight_dims(&self) -> Vec<usize> {
        let cg = self.in_channels / self.groups;
        match self.kernel {
            KernelSize::OneD(k) => vec![self.out_channels, cg, k],
            KernelSize::TwoD(kh, kw) => vec![self.out_channels, cg, kh, kw],
        }
    }

    /// Number of learned scalars, bias included.
    pub fn param_count(&self) -> u64 {
        let w: usize = self.weight_dims().iter().product();
        let b = if self.has_bias { self.out_channels } else { 0 };
        (w + b) as u64
    }

    /// Multiply-accumulates per output position (one output channel pixel).
    pub fn macs_per_output(&self) -> u64 {
        let cg = self.in_channels / self.groups;
        let taps = match self.kernel {
            KernelSize::OneD(k) => k,
            KernelSize::TwoD(kh, kw) => kh * kw,
        };
        (cg * taps) as u64
    }

    fn out_extent(&self, len: usize, k: usize, op: &'static str) -> Result<usize> {
        let padded = len + 2 * self.padding;
        if padded < k {
            return Err(Error::shape(
                op,
                format!("input extent {} with padding {} is smaller than kernel {}", len, self.padding, k),
            ));
        }
        Ok((padded - k) / self.stride + 1)
    }

    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match self.kernel {
            KernelSize::TwoD(kh, kw) => {
                Ok((self.out_extent(h, kh, "conv2d")?, self.out_extent(w, kw, "conv2d")?))
            }
            KernelSize::OneD(_) => Err(Error::shape("conv2d", "spec has a 1D kernel")),
        }
    }

    pub fn out_len(&self, t: usize) -> Result<usize> {
        match self.kernel {
            KernelSize::OneD(k) => self.out_extent(t, k, "conv1d"),
            KernelSize::TwoD(..) => Err(Error::shape("conv1d", "spec has a 2D kernel")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_must_divide_channels() {
        let mut spec = ConvSpec::plane(6, 8, 3, 1, 1);
        spec.groups = 4;
        assert!(spec.validate().is_err());
        spec.groups = 2;
        assert!(spec.validate().is_ok());
        assert_eq!(spec.weight_dims(), vec![8, 3, 3, 3]);
    }

    #[test]
    fn out_extents_floor() {
        let spec = ConvSpec::plane(3, 8, 3, 2, 1);
        assert_eq!(spec.out_hw(32, 32).unwrap(), (16, 16));
        assert_eq!(spec.out_hw(7, 7).unwrap(), (4, 4));
        let spec = ConvSpec::plane(3, 8, 7, 2, 3);
        assert_eq!(spec.out_hw(224, 224).unwrap(), (112, 112));
    }
}
