//! Parameter initialization.
//!
//! Convolutions and linear layers draw Kaiming fan-in normals,
//! `std = sqrt(2 / fan_in)`. Temporal mixing kernels start as pure frame
//! shifts: the first quarter of channels reads the previous frame, the last
//! quarter the next frame, and the middle half passes the current frame
//! through unchanged, so an untrained network begins as a slightly
//! frame-shuffled 2D one.

use rand::Rng;

use crate::ops::ConvSpec;
use crate::rng::normal_f64;
use crate::scalar::Element;
use crate::tensor::Tensor;

/// Normal tensor with the given standard deviation, drawn in f64 and then
/// rounded to `E`, so f32 and f64 networks see the same underlying values.
pub fn normal_tensor<E: Element>(rng: &mut impl Rng, dims: &[usize], std: f64) -> Tensor<E> {
    Tensor::from_fn(dims, |_| E::from_f64(std * normal_f64(rng)))
}

/// Kaiming fan-in normal for a convolution weight.
pub fn kaiming_conv<E: Element>(rng: &mut impl Rng, spec: &ConvSpec) -> Tensor<E> {
    let dims = spec.weight_dims();
    let fan_in: usize = dims[1..].iter().product();
    normal_tensor(rng, &dims, (2.0 / fan_in as f64).sqrt())
}

/// Kaiming fan-in normal for a `[out, in]` linear weight.
pub fn kaiming_linear<E: Element>(rng: &mut impl Rng, out_features: usize, in_features: usize) -> Tensor<E> {
    normal_tensor(rng, &[out_features, in_features], (2.0 / in_features as f64).sqrt())
}

/// The three-tap shift pattern for channel `ch` of `c`:
/// `[1,0,0]` (read previous frame) for the first quarter, `[0,0,1]` (read
/// next frame) for the last quarter, `[0,1,0]` (identity) for the middle
/// half. Quarters are `floor(c / 4)` wide, so widths not divisible by four
/// give the remainder to the identity region.
pub fn temporal_taps(c: usize, ch: usize) -> [f64; 3] {
    let q = c / 4;
    if ch < q {
        [1.0, 0.0, 0.0]
    } else if ch >= c - q {
        [0.0, 0.0, 1.0]
    } else {
        [0.0, 1.0, 0.0]
    }
}

/// Channel-wise temporal kernel `[C, 1, 3]` holding the shift pattern.
pub fn init_temporal_channelwise<E: Element>(c: usize) -> Tensor<E> {
    Tensor::from_fn([c, 1, 3], |i| E::from_f64(temporal_taps(c, i / 3)[i % 3]))
}

/// Ordinary (dense) temporal kernel `[C, C, 3]`: the same shift pattern on
/// the diagonal, zero elsewhere, so the dense variant also starts as a pure
/// frame shift.
pub fn init_temporal_ordinary<E: Element>(c: usize) -> Tensor<E> {
    let mut w = Tensor::zeros([c, c, 3]);
    for ch in 0..c {
        let taps = temporal_taps(c, ch);
        for (k, &t) in taps.iter().enumerate() {
            w.data_mut()[(ch * c + ch) * 3 + k] = E::from_f64(t);
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn table(c: usize) -> Vec<[f64; 3]> {
        (0..c).map(|ch| temporal_taps(c, ch)).collect()
    }

    #[test]
    fn quarter_half_quarter_tables() {
        assert_eq!(table(4), vec![[1., 0., 0.], [0., 1., 0.], [0., 1., 0.], [0., 0., 1.]]);

        let t8 = table(8);
        for ch in 0..2 {
            assert_eq!(t8[ch], [1., 0., 0.]);
        }
        for ch in 2..6 {
            assert_eq!(t8[ch], [0., 1., 0.]);
        }
        for ch in 6..8 {
            assert_eq!(t8[ch], [0., 0., 1.]);
        }

        for c in [64usize, 256] {
            let t = table(c);
            for (ch, taps) in t.iter().enumerate() {
                let want = if ch < c / 4 {
                    [1., 0., 0.]
                } else if ch >= c - c / 4 {
                    [0., 0., 1.]
                } else {
                    [0., 1., 0.]
                };
                assert_eq!(*taps, want, "c={c} ch={ch}");
            }
        }
    }

    #[test]
    fn non_divisible_widths_floor_the_quarters() {
        let t6 = table(6);
        assert_eq!(t6[0], [1., 0., 0.]);
        for ch in 1..5 {
            assert_eq!(t6[ch], [0., 1., 0.]);
        }
        assert_eq!(t6[5], [0., 0., 1.]);
    }

    #[test]
    fn channelwise_tensor_matches_pattern() {
        let w = init_temporal_channelwise::<f32>(8);
        assert_eq!(w.dims(), [8, 1, 3]);
        for ch in 0..8 {
            let taps = temporal_taps(8, ch);
            for k in 0..3 {
                assert_eq!(w.data()[ch * 3 + k], taps[k] as f32);
            }
        }
    }

    #[test]
    fn ordinary_tensor_is_diagonal() {
        let c = 8;
        let w = init_temporal_ordinary::<f64>(c);
        assert_eq!(w.dims(), [c, c, 3]);
        let mut nonzero = 0;
        for co in 0..c {
            for ci in 0..c {
                for k in 0..3 {
                    let v = w.data()[(co * c + ci) * 3 + k];
                    if co != ci {
                        assert_eq!(v, 0.0);
                    } else if v != 0.0 {
                        nonzero += 1;
                        assert_eq!(v, temporal_taps(c, co)[k]);
                    }
                }
            }
        }
        assert_eq!(nonzero, c, "exactly one tap per diagonal row");
    }

    #[test]
    fn kaiming_variance_tracks_fan_in() {
        let mut rng = seeded(77);
        let spec = ConvSpec::plane(64, 128, 3, 1, 1);
        let w = kaiming_conv::<f64>(&mut rng, &spec);
        let fan_in = 64 * 9;
        let want = 2.0 / fan_in as f64;
        let n = w.numel() as f64;
        let mean: f64 = w.data().iter().sum::<f64>() / n;
        let var: f64 = w.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!((var - want).abs() < 0.2 * want, "var {var:.3e} want {want:.3e}");
    }

    #[test]
    fn same_seed_same_weights() {
        let spec = ConvSpec::plane(8, 16, 3, 1, 1);
        let a = kaiming_conv::<f32>(&mut seeded(3), &spec);
        let b = kaiming_conv::<f32>(&mut seeded(3), &spec);
        assert_eq!(a.data(), b.data());
    }
}
