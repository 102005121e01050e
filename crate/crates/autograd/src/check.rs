//! Finite-difference gradient verification helpers.

/// Central difference `(f(x + h) - f(x - h)) / 2h` of a scalar function of
/// one coordinate of `x`.
pub fn central_difference(x: &mut [f64], index: usize, step: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[index];
    x[index] = orig + step;
    let plus = f(x);
    x[index] = orig - step;
    let minus = f(x);
    x[index] = orig;
    (plus - minus) / (2.0 * step)
}

/// `||a - b|| / max(||a||, ||b||)`, or 0 when both vectors vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_derivative() {
        let mut x = vec![2.0, 1.0];
        let d = central_difference(&mut x, 0, 1e-5, |v| v[0].powi(3) + v[1]);
        assert!((d - 12.0).abs() < 1e-8);
        assert_eq!(x, vec![2.0, 1.0]);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
        assert!((relative_error(&[1.0, 0.0], &[0.0, 0.0]) - 1.0).abs() < 1e-15);
    }
}
