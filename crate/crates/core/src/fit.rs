//! Least-squares helpers shared by the fitting routines.

use crate::operators::C64;

/// Geometric grid lo, lo·r, lo·r², … up to hi (inclusive when hit).
pub fn geometric_points(lo: f64, hi: f64, ratio: f64) -> Vec<f64> {
    assert!(ratio > 1.0 && lo > 0.0);
    let mut out = Vec::new();
    let mut j = 0i32;
    loop {
        let x = lo * ratio.powi(j);
        if x > hi * (1.0 + 1e-12) {
            break;
        }
        out.push(x);
        j += 1;
    }
    out
}

/// Complex-valued straight-line fit y ≈ slope·x + intercept.
/// Returns (slope, intercept, max |residual|).
pub fn linear_fit(xs: &[f64], ys: &[C64]) -> (C64, C64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my: C64 = ys.iter().sum::<C64>() / n;
    let mut sxx = 0.0;
    let mut sxy = C64::new(0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (y - my) * (x - mx);
    }
    let slope = if sxx > 0.0 {
        sxy / sxx
    } else {
        C64::new(0.0, 0.0)
    };
    let intercept = my - slope * mx;
    let residual = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - (slope * x + intercept)).norm())
        .fold(0.0, f64::max);
    (slope, intercept, residual)
}

/// Real-valued version of [`linear_fit`].
pub fn linear_fit_real(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let yc: Vec<C64> = ys.iter().map(|&y| C64::new(y, 0.0)).collect();
    let (s, i, r) = linear_fit(xs, &yc);
    (s.re, i.re, r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_is_recovered() {
        let xs: Vec<f64> = (1..20).map(|i| i as f64 * 0.3).collect();
        let ys: Vec<C64> = xs.iter().map(|x| C64::new(2.0 * x + 0.3, -x)).collect();
        let (s, i, r) = linear_fit(&xs, &ys);
        assert!((s - C64::new(2.0, -1.0)).norm() < 1e-12);
        assert!((i - C64::new(0.3, 0.0)).norm() < 1e-12);
        assert!(r < 1e-12);
    }

    #[test]
    fn grid_is_geometric_and_bounded() {
        let g = geometric_points(1.0, 16.0, 2.0);
        assert_eq!(g, vec![1.0, 2.0, 4.0, 8.0, 16.0]);
    }
}
