use rand::Rng as _;

use crate::rng::Rng;

/// Result of comparing analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub probes: usize,
    pub max_rel_error: f64,
    /// Parameter index with the largest error.
    pub worst_index: usize,
}

/// Relative error with a floor on the denominator so that two near-zero
/// gradients compare as equal.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Checks `analytic` against central differences of `loss` at `probes`
/// random coordinates of `params`.
///
/// `loss` must be a pure function of its argument. Step size `h` is applied
/// additively.
pub fn check_gradients<F>(
    params: &[f64],
    analytic: &[f64],
    mut loss: F,
    probes: usize,
    h: f64,
    rng: &mut Rng,
) -> GradCheck
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(
        params.len(),
        analytic.len(),
        "gradient length differs from parameter length"
    );
    let mut work = params.to_vec();
    let mut out = GradCheck {
        probes,
        max_rel_error: 0.0,
        worst_index: 0,
    };
    for _ in 0..probes {
        let i = rng.random_range(0..params.len());
        work[i] = params[i] + h;
        let up = loss(&work);
        work[i] = params[i] - h;
        let down = loss(&work);
        work[i] = params[i];
        let err = relative_error(analytic[i], (up - down) / (2.0 * h));
        if err > out.max_rel_error || !err.is_finite() {
            out.max_rel_error = if err.is_finite() { err } else { f64::INFINITY };
            out.worst_index = i;
        }
    }
    out
}
