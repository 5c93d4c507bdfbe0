//! Finite-difference gradient checking in f64.
//!
//! Analytic gradients are compared against central differences of the same
//! scalar objective. All probes run in f64: the truncation error of the
//! central difference is O(eps^2) and the roundoff error O(ulp/eps), which
//! meet comfortably below 1e-6 relative for well-scaled objectives.

use crate::tensor::Tensor;

/// Relative gap with an absolute floor, so tiny gradients near zero do not
/// blow up the ratio: |a - n| / max(1, |a|, |n|).
pub fn relative_gap(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Central difference of `f` along coordinate `i`. Restores `x[i]` before
/// returning. `f` must be a pure function of `x`.
pub fn central_diff_at(x: &mut [f64], i: usize, eps: f64, f: &mut impl FnMut(&[f64]) -> f64) -> f64 {
    let keep = x[i];
    x[i] = keep + eps;
    let fp = f(x);
    x[i] = keep - eps;
    let fm = f(x);
    x[i] = keep;
    (fp - fm) / (2.0 * eps)
}

/// Full numeric gradient of a scalar objective over a tensor input.
/// Meant for small unit-test problems; cost is 2 * numel evaluations.
pub fn numeric_grad(x: &Tensor<f64>, eps: f64, f: &mut impl FnMut(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut g = Tensor::zeros(x.dims());
    for i in 0..x.numel() {
        let keep = probe.data()[i];
        probe.data_mut()[i] = keep + eps;
        let fp = f(&probe);
        probe.data_mut()[i] = keep - eps;
        let fm = f(&probe);
        probe.data_mut()[i] = keep;
        g.data_mut()[i] = (fp - fm) / (2.0 * eps);
    }
    g
}

/// Largest relative gap between an analytic gradient and the numeric one.
pub fn max_grad_gap(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| relative_gap(a, n))
        .fold(0.0, f64::max)
}

/// Evenly spread coordinate subsample; always covers both ends.
pub fn spread_coords(len: usize, want: usize) -> Vec<usize> {
    if len <= want {
        return (0..len).collect();
    }
    let mut out: Vec<usize> = (0..want).map(|i| i * (len - 1) / (want - 1)).collect();
    out.dedup();
    out
}

/// Outcome of one audited parameter group.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub name: String,
    pub checked: usize,
    pub max_rel: f64,
    pub worst_coord: usize,
    pub tolerance: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel.is_finite() && self.max_rel <= self.tolerance
    }
}

impl std::fmt::Display for GradReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: max rel {:.3e} over {} coords (tol {:.1e}, worst at #{})",
            if self.passed() { "ok  " } else { "FAIL" },
            self.name,
            self.max_rel,
            self.checked,
            self.tolerance,
            self.worst_coord,
        )
    }
}

/// Checks `analytic` against central differences of `f` at the given
/// coordinates of `x`, leaving `x` unchanged.
pub fn audit_coords(
    name: &str,
    x: &mut [f64],
    analytic: &[f64],
    coords: &[usize],
    eps: f64,
    tolerance: f64,
    f: &mut impl FnMut(&[f64]) -> f64,
) -> GradReport {
    assert_eq!(x.len(), analytic.len(), "gradient length mismatch for {name}");
    let mut max_rel = 0.0;
    let mut worst = 0;
    for &i in coords {
        let numeric = central_diff_at(x, i, eps, f);
        let rel = relative_gap(analytic[i], numeric);
        if rel > max_rel {
            max_rel = rel;
            worst = i;
        }
    }
    GradReport { name: name.to_string(), checked: coords.len(), max_rel, worst_coord: worst, tolerance }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_form_gradient() {
        // f(x) = sum_i (i + 1) * x_i^2 has gradient 2 (i + 1) x_i.
        let x = Tensor::<f64>::from_fn([5], |i| 0.3 * (i as f64) - 0.7);
        let mut f = |t: &Tensor<f64>| {
            t.data().iter().enumerate().map(|(i, &v)| (i + 1) as f64 * v * v).sum::<f64>()
        };
        let num = numeric_grad(&x, 1e-5, &mut f);
        let ana = Tensor::<f64>::from_fn([5], |i| 2.0 * (i + 1) as f64 * x.data()[i]);
        assert!(max_grad_gap(&ana, &num) < 1e-8);
    }

    #[test]
    fn spread_covers_ends() {
        let c = spread_coords(1000, 7);
        assert_eq!(*c.first().unwrap(), 0);
        assert_eq!(*c.last().unwrap(), 999);
        assert!(c.len() <= 7);
        let all = spread_coords(3, 10);
        assert_eq!(all, vec![0, 1, 2]);
    }
}
