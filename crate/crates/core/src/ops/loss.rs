//! Softmax cross entropy over logits [N, K], averaged across the batch.

use crate::error::{Error, Result};
use crate::scalar::Element;
use crate::tensor::Tensor;

/// Row-wise softmax with max subtraction. Exposed for eval-time score averaging.
pub fn softmax<E: Element>(logits: &Tensor<E>) -> Result<Tensor<E>> {
    let d = logits.dims();
    if d.len() != 2 {
        return Err(Error::shape("softmax", format!("need [N,K], got {:?}", d)));
    }
    let k = d[1];
    let mut probs = logits.clone();
    for row in probs.data_mut().chunks_exact_mut(k) {
        let mut m = row[0];
        for &v in row.iter() {
            if v > m {
                m = v;
            }
        }
        let mut z = E::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Ok(probs)
}

/// Returns (mean loss, probs); probs are retained for the backward pass.
pub fn cross_entropy_forward<E: Element>(
    logits: &Tensor<E>,
    labels: &[usize],
) -> Result<(E, Tensor<E>)> {
    let d = logits.dims();
    if d.len() != 2 || d[0] != labels.len() {
        return Err(Error::shape(
            "cross_entropy",
            format!("logits {:?} vs {} labels", d, labels.len()),
        ));
    }
    let (n, k) = (d[0], d[1]);
    for &l in labels {
        if l >= k {
            return Err(Error::shape("cross_entropy", format!("label {} out of range for {} classes", l, k)));
        }
    }
    // Work from shifted logits directly: -log p = log(sum exp(x - m)) - (x_y - m).
    // This avoids log(p) underflow for confidently wrong rows.
    let mut loss = E::zero();
    let probs = softmax(logits)?;
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits.data()[i * k..(i + 1) * k];
        let mut m = row[0];
        for &v in row {
            if v > m {
                m = v;
            }
        }
        let mut z = E::zero();
        for &v in row {
            z += (v - m).exp();
        }
        loss += z.ln() - (row[label] - m);
    }
    Ok((loss / E::from_f64(n as f64), probs))
}

/// dlogits = (probs - onehot(labels)) * upstream / N.
pub fn cross_entropy_backward<E: Element>(
    probs: &Tensor<E>,
    labels: &[usize],
    upstream: E,
) -> Tensor<E> {
    let d = probs.dims();
    let (n, k) = (d[0], d[1]);
    let scale = upstream / E::from_f64(n as f64);
    let mut dx = probs.clone();
    for (i, &label) in labels.iter().enumerate() {
        let row = &mut dx.data_mut()[i * k..(i + 1) * k];
        row[label] -= E::one();
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_f64, seeded};

    #[test]
    fn matches_direct_f64_evaluation() {
        let mut rng = seeded(5);
        let n = 6;
        let k = 9;
        let mut logits = Tensor::<f64>::zeros([n, k]);
        for v in logits.data_mut() {
            *v = 3.0 * normal_f64(&mut rng);
        }
        let labels: Vec<usize> = (0..n).map(|i| (i * 5 + 2) % k).collect();
        let (loss, probs) = cross_entropy_forward(&logits, &labels).unwrap();

        let mut expected = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = &logits.data()[i * k..(i + 1) * k];
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            expected += -(row[label].exp() / z).ln();
            let p: f64 = probs.data()[i * k..(i + 1) * k].iter().sum();
            assert!((p - 1.0).abs() < 1e-12, "probs row must sum to one");
        }
        expected /= n as f64;
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let logits = Tensor::<f32>::from_vec([2, 3], vec![800.0, -800.0, 0.0, -500.0, 500.0, 499.0]).unwrap();
        let (loss, probs) = cross_entropy_forward(&logits, &[1, 1]).unwrap();
        assert!(loss.is_finite());
        assert!(probs.is_all_finite());
        // Row 0 label has logit 1600 below the max: loss is huge but finite.
        assert!(loss > 100.0);
    }

    #[test]
    fn gradient_sums_to_zero_per_row() {
        let mut rng = seeded(6);
        let mut logits = Tensor::<f64>::zeros([4, 5]);
        for v in logits.data_mut() {
            *v = normal_f64(&mut rng);
        }
        let labels = vec![0, 4, 2, 2];
        let (_, probs) = cross_entropy_forward(&logits, &labels).unwrap();
        let dx = cross_entropy_backward(&probs, &labels, 1.0);
        for i in 0..4 {
            let s: f64 = dx.data()[i * 5..(i + 1) * 5].iter().sum();
            assert!(s.abs() < 1e-12, "softmax grad rows sum to zero");
        }
    }
}
