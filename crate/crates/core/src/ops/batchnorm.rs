//! Batch normalization over the channel axis of `[N, C, H, W]` tensors.
//!
//! Statistics are the biased (population) moments, computed in two passes,
//! and the same convention feeds the running buffers. Three modes:
//! `Train` normalizes by batch statistics and reports updated running
//! buffers, `TrainFrozen` normalizes by batch statistics without touching
//! them (pure, for gradient audits), `Eval` normalizes by the stored
//! running statistics.

use rayon::prelude::*;

use super::linalg::sum;
use crate::error::{Error, Result};
use crate::scalar::Element;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    TrainFrozen,
    Eval,
}

/// Context saved for the backward pass.
#[derive(Clone, Debug)]
pub struct BnCtx<E> {
    pub mean: Vec<E>,
    pub invstd: Vec<E>,
    /// Whether the forward used batch statistics, which the backward then
    /// differentiates through.
    pub batch_stats: bool,
}

fn check_channel_vec<E: Element>(t: &Tensor<E>, c: usize, what: &str) -> Result<()> {
    if t.dims() != [c] {
        return Err(Error::shape(
            "batch_norm",
            format!("{} is {:?}, want [{}]", what, t.dims(), c),
        ));
    }
    Ok(())
}

/// Two-pass per-channel mean and biased variance.
pub fn batch_moments<E: Element>(x: &Tensor<E>) -> (Vec<E>, Vec<E>) {
    let d = x.dims();
    let (n, c, hw) = (d[0], d[1], d[2] * d[3]);
    let m = E::from_f64((n * hw) as f64);
    let xs = x.data();
    let mut mean = vec![E::zero(); c];
    let mut var = vec![E::zero(); c];
    mean.par_iter_mut().zip(var.par_iter_mut()).enumerate().for_each(|(ci, (mu, va))| {
        let mut s = E::zero();
        for ni in 0..n {
            s += sum(&xs[(ni * c + ci) * hw..(ni * c + ci + 1) * hw]);
        }
        let mu_c = s / m;
        let mut sq = E::zero();
        for ni in 0..n {
            let run = &xs[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
            let mut acc = [E::zero(); 8];
            let mut ch = run.chunks_exact(8);
            for xa in &mut ch {
                for l in 0..8 {
                    let dv = xa[l] - mu_c;
                    acc[l] = dv.mul_add(dv, acc[l]);
                }
            }
            let mut tail = E::zero();
            for &xv in ch.remainder() {
                let dv = xv - mu_c;
                tail = dv.mul_add(dv, tail);
            }
            sq += (((acc[0] + acc[1]) + (acc[2] + acc[3]))
                + ((acc[4] + acc[5]) + (acc[6] + acc[7])))
                + tail;
        }
        *mu = mu_c;
        *va = sq / m;
    });
    (mean, var)
}

/// Returns the normalized output, the backward context, and in `Train`
/// mode the updated running buffers.
#[allow(clippy::too_many_arguments)]
pub fn forward<E: Element>(
    x: &Tensor<E>,
    scale: &Tensor<E>,
    shift: &Tensor<E>,
    running_mean: &Tensor<E>,
    running_var: &Tensor<E>,
    mode: BnMode,
    momentum: E,
    eps: E,
) -> Result<(Tensor<E>, BnCtx<E>, Option<(Tensor<E>, Tensor<E>)>)> {
    let d = x.dims();
    if d.len() != 4 {
        return Err(Error::shape("batch_norm", format!("input must be [N,C,H,W], got {:?}", d)));
    }
    let c = d[1];
    check_channel_vec(scale, c, "scale")?;
    check_channel_vec(shift, c, "shift")?;
    check_channel_vec(running_mean, c, "running mean")?;
    check_channel_vec(running_var, c, "running var")?;

    let (mean, var, updates) = match mode {
        BnMode::Train | BnMode::TrainFrozen => {
            let (mean, var) = batch_moments(x);
            let updates = (mode == BnMode::Train).then(|| {
                let one = E::one();
                let mix = |old: &[E], new: &[E]| {
                    Tensor::from_vec(
                        [c],
                        old.iter()
                            .zip(new)
                            .map(|(&o, &v)| (one - momentum) * o + momentum * v)
                            .collect(),
                    )
                    .unwrap()
                };
                (mix(running_mean.data(), &mean), mix(running_var.data(), &var))
            });
            (mean, var, updates)
        }
        BnMode::Eval => (running_mean.data().to_vec(), running_var.data().to_vec(), None),
    };

    let invstd: Vec<E> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();

    let hw = d[2] * d[3];
    let mut y = Tensor::zeros(x.shape().clone());
    let xs = x.data();
    let ss = scale.data();
    let sh = shift.data();
    y.data_mut().par_chunks_exact_mut(hw).enumerate().for_each(|(chunk, yrow)| {
        let ci = chunk % c;
        let a = ss[ci] * invstd[ci];
        let b = sh[ci] - mean[ci] * a;
        let xrow = &xs[chunk * hw..(chunk + 1) * hw];
        for (yv, &xv) in yrow.iter_mut().zip(xrow) {
            *yv = a.mul_add(xv, b);
        }
    });

    let ctx = BnCtx { mean, invstd, batch_stats: mode != BnMode::Eval };
    Ok((y, ctx, updates))
}

/// Gradients for input, scale and shift.
pub fn backward<E: Element>(
    x: &Tensor<E>,
    scale: &Tensor<E>,
    ctx: &BnCtx<E>,
    dy: &Tensor<E>,
) -> (Tensor<E>, Tensor<E>, Tensor<E>) {
    let d = x.dims();
    let (n, c, hw) = (d[0], d[1], d[2] * d[3]);
    let m = E::from_f64((n * hw) as f64);
    let xs = x.data();
    let dys = dy.data();
    let ss = scale.data();

    // Per-channel sums of dy and dy * xhat, in fixed order.
    let mut s1 = vec![E::zero(); c];
    let mut s2 = vec![E::zero(); c];
    s1.par_iter_mut().zip(s2.par_iter_mut()).enumerate().for_each(|(ci, (r1, r2))| {
        let mu = ctx.mean[ci];
        let inv = ctx.invstd[ci];
        let mut a1 = E::zero();
        let mut a2 = E::zero();
        for ni in 0..n {
            let base = (ni * c + ci) * hw;
            let dyrow = &dys[base..base + hw];
            let xrow = &xs[base..base + hw];
            a1 += sum(dyrow);
            let mut acc = E::zero();
            for (&dv, &xv) in dyrow.iter().zip(xrow) {
                acc = dv.mul_add((xv - mu) * inv, acc);
            }
            a2 += acc;
        }
        *r1 = a1;
        *r2 = a2;
    });

    let dshift = Tensor::from_vec([c], s1.clone()).unwrap();
    let dscale = Tensor::from_vec([c], s2.clone()).unwrap();

    let mut dx = Tensor::zeros(x.shape().clone());
    dx.data_mut().par_chunks_exact_mut(hw).enumerate().for_each(|(chunk, dxrow)| {
        let ci = chunk % c;
        let alpha = ss[ci] * ctx.invstd[ci];
        let xrow = &xs[chunk * hw..(chunk + 1) * hw];
        let dyrow = &dys[chunk * hw..(chunk + 1) * hw];
        if ctx.batch_stats {
            let beta = s1[ci] / m;
            let gamma = s2[ci] / m;
            let mu = ctx.mean[ci];
            let inv = ctx.invstd[ci];
            for ((dv, &dyv), &xv) in dxrow.iter_mut().zip(dyrow).zip(xrow) {
                let xhat = (xv - mu) * inv;
                *dv = alpha * (dyv - beta - xhat * gamma);
            }
        } else {
            for (dv, &dyv) in dxrow.iter_mut().zip(dyrow) {
                *dv = alpha * dyv;
            }
        }
    });

    (dx, dscale, dshift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{max_grad_gap, numeric_grad};
    use crate::rng::{normal_f64, seeded};
    use rand::Rng;

    fn randn(rng: &mut impl Rng, dims: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(dims, |_| normal_f64(rng))
    }

    const EPS: f64 = 1e-5;

    /// Plain two-pass reference: per-channel mean/var over N*H*W, then the
    /// affine map, everything in straightforward accumulation order.
    fn oracle(x: &Tensor<f64>, scale: &[f64], shift: &[f64], eps: f64) -> Tensor<f64> {
        let [n, c, h, w] = <[usize; 4]>::try_from(x.dims()).unwrap();
        let m = (n * h * w) as f64;
        let mut y = x.clone();
        for ci in 0..c {
            let mut s = 0.0;
            for ni in 0..n {
                for p in 0..h * w {
                    s += x.data()[(ni * c + ci) * h * w + p];
                }
            }
            let mu = s / m;
            let mut sq = 0.0;
            for ni in 0..n {
                for p in 0..h * w {
                    let d = x.data()[(ni * c + ci) * h * w + p] - mu;
                    sq += d * d;
                }
            }
            let var = sq / m;
            for ni in 0..n {
                for p in 0..h * w {
                    let i = (ni * c + ci) * h * w + p;
                    y.data_mut()[i] = scale[ci] * (x.data()[i] - mu) / (var + eps).sqrt() + shift[ci];
                }
            }
        }
        y
    }

    fn channel_params(rng: &mut impl Rng, c: usize) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>, Tensor<f64>) {
        let scale = Tensor::from_fn([c], |_| 1.0 + 0.3 * normal_f64(rng));
        let shift = randn(rng, &[c]);
        let rmean = randn(rng, &[c]);
        let rvar = Tensor::from_fn([c], |_| (0.5 + normal_f64(rng).abs()) as f64);
        (scale, shift, rmean, rvar)
    }

    #[test]
    fn train_mode_matches_two_pass_oracle() {
        let mut rng = seeded(301);
        let x = randn(&mut rng, &[3, 5, 4, 2]);
        let (scale, shift, rmean, rvar) = channel_params(&mut rng, 5);
        let (y, ctx, updates) =
            forward(&x, &scale, &shift, &rmean, &rvar, BnMode::Train, 0.1, EPS).unwrap();
        assert!(ctx.batch_stats);
        let want = oracle(&x, scale.data(), shift.data(), EPS);
        for (&a, &b) in y.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }

        // Running buffers blend old and batch statistics with momentum 0.1.
        let (new_mean, new_var) = updates.unwrap();
        let (bmean, bvar) = batch_moments(&x);
        for ci in 0..5 {
            let em = 0.9 * rmean.data()[ci] + 0.1 * bmean[ci];
            let ev = 0.9 * rvar.data()[ci] + 0.1 * bvar[ci];
            assert!((new_mean.data()[ci] - em).abs() < 1e-12);
            assert!((new_var.data()[ci] - ev).abs() < 1e-12);
        }
    }

    #[test]
    fn frozen_mode_uses_batch_stats_without_updates() {
        let mut rng = seeded(302);
        let x = randn(&mut rng, &[2, 3, 3, 3]);
        let (scale, shift, rmean, rvar) = channel_params(&mut rng, 3);
        let (y, ctx, updates) =
            forward(&x, &scale, &shift, &rmean, &rvar, BnMode::TrainFrozen, 0.1, EPS).unwrap();
        assert!(ctx.batch_stats);
        assert!(updates.is_none());
        let want = oracle(&x, scale.data(), shift.data(), EPS);
        for (&a, &b) in y.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_mode_is_an_affine_map_of_running_stats() {
        let mut rng = seeded(303);
        let x = randn(&mut rng, &[2, 4, 3, 2]);
        let (scale, shift, rmean, rvar) = channel_params(&mut rng, 4);
        let (y, ctx, updates) =
            forward(&x, &scale, &shift, &rmean, &rvar, BnMode::Eval, 0.1, EPS).unwrap();
        assert!(!ctx.batch_stats);
        assert!(updates.is_none());
        for ci in 0..4 {
            let a = scale.data()[ci] / (rvar.data()[ci] + EPS).sqrt();
            let b = shift.data()[ci] - rmean.data()[ci] * a;
            for ni in 0..2 {
                for p in 0..6 {
                    let i = (ni * 4 + ci) * 6 + p;
                    let want = a * x.data()[i] + b;
                    assert!((y.data()[i] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = seeded(304);
        let x = randn(&mut rng, &[3, 4, 2, 3]);
        let (scale, shift, rmean, rvar) = channel_params(&mut rng, 4);
        let r = randn(&mut rng, &[3, 4, 2, 3]);
        let proj =
            |y: &Tensor<f64>| -> f64 { y.data().iter().zip(r.data()).map(|(&a, &b)| a * b).sum() };

        for mode in [BnMode::Train, BnMode::Eval] {
            let (_, ctx, _) = forward(&x, &scale, &shift, &rmean, &rvar, mode, 0.1, EPS).unwrap();
            let (dx, dscale, dshift) = backward(&x, &scale, &ctx, &r);
            let run = |xx: &Tensor<f64>, sc: &Tensor<f64>, sh: &Tensor<f64>| -> f64 {
                proj(&forward(xx, sc, sh, &rmean, &rvar, mode, 0.1, EPS).unwrap().0)
            };
            let nx = numeric_grad(&x, 1e-6, &mut |t| run(t, &scale, &shift));
            assert!(max_grad_gap(&dx, &nx) < 1e-6, "dx gap in {mode:?}");
            let ns = numeric_grad(&scale, 1e-6, &mut |t| run(&x, t, &shift));
            assert!(max_grad_gap(&dscale, &ns) < 1e-7, "dscale gap in {mode:?}");
            let nb = numeric_grad(&shift, 1e-6, &mut |t| run(&x, &scale, t));
            assert!(max_grad_gap(&dshift, &nb) < 1e-7, "dshift gap in {mode:?}");
        }
    }
}
