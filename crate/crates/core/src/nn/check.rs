//! Central finite differences for checking hand-built gradients.

/// Default step for [`central_difference`].
pub const FD_STEP: f64 = 1e-5;

pub fn central_difference<F: FnMut(&[f64]) -> f64>(x: &[f64], step: f64, mut f: F) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + step;
            let up = f(&probe);
            probe[k] = x[k] - step;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞, 1e-8)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let diff = a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    diff / inf(a).max(inf(b)).max(1e-8)
}
