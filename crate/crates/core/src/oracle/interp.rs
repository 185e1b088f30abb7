//! Monotone piecewise-cubic Hermite interpolation (Fritsch-Carlson slopes),
//! extended linearly beyond the data.

use crate::error::{LgocvError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

fn end_slope(h0: f64, h1: f64, del0: f64, del1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * del0 - h0 * del1) / (h0 + h1);
    if d.signum() != del0.signum() || del0 == 0.0 {
        0.0
    } else if del0.signum() != del1.signum() && d.abs() > 3.0 * del0.abs() {
        3.0 * del0
    } else {
        d
    }
}

impl Pchip {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(LgocvError::Config("interpolation needs at least two points".into()));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(LgocvError::Config("interpolation abscissae must be strictly increasing".into()));
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let del: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = del[0];
            d[1] = del[0];
        } else {
            for k in 1..n - 1 {
                if del[k - 1] * del[k] > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    d[k] = (w1 + w2) / (w1 / del[k - 1] + w2 / del[k]);
                }
            }
            d[0] = end_slope(h[0], h[1], del[0], del[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
        }
        Ok(Self { x: x.to_vec(), y: y.to_vec(), d })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        if t <= self.x[0] {
            return self.y[0] + self.d[0] * (t - self.x[0]);
        }
        if t >= self.x[n - 1] {
            return self.y[n - 1] + self.d[n - 1] * (t - self.x[n - 1]);
        }
        let k = self.x.partition_point(|&v| v <= t) - 1;
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        h00 * self.y[k] + h10 * h * self.d[k] + h01 * self.y[k + 1] + h11 * h * self.d[k + 1]
    }

    /// Abscissa at which the curve takes `target`, by bisection over the data
    /// range widened tenfold on each side. `None` if the target is not bracketed.
    pub fn invert(&self, target: f64) -> Option<f64> {
        let n = self.x.len();
        let span = self.x[n - 1] - self.x[0];
        let mut lo = self.x[0] - 10.0 * span;
        let mut hi = self.x[n - 1] + 10.0 * span;
        let f = |t: f64| self.eval(t) - target;
        let (mut flo, fhi) = (f(lo), f(hi));
        if flo == 0.0 {
            return Some(lo);
        }
        if flo.signum() == fhi.signum() {
            return None;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let fm = f(mid);
            if fm == 0.0 {
                return Some(mid);
            }
            if fm.signum() == flo.signum() {
                lo = mid;
                flo = fm;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn interpolates_and_extrapolates() {
        let p = Pchip::new(&[1.0, 2.0, 3.0, 4.0], &[-1.0, -1.5, -1.8, -2.0]).unwrap();
        for (x, y) in [(1.0, -1.0), (2.0, -1.5), (3.0, -1.8), (4.0, -2.0)] {
            assert!((p.eval(x) - y).abs() < 1e-15);
        }
        // Left slope from the three-point end formula: (3·(-0.5) - (-0.3)) / 2.
        assert!((p.eval(0.0) - (-1.0 + 0.6)).abs() < 1e-14);
        let t = p.invert(-1.2).unwrap();
        assert!((p.eval(t) + 1.2).abs() < 1e-12 && t > 1.0 && t < 2.0);
        assert!(Pchip::new(&[1.0, 1.0], &[0.0, 1.0]).is_err());
    }

    proptest! {
        #[test]
        fn monotone_data_gives_monotone_curve(steps in proptest::collection::vec(0.01f64..1.0, 2..10)) {
            let xs: Vec<f64> = (0..=steps.len()).map(|k| k as f64).collect();
            let mut ys = vec![0.0];
            for s in &steps {
                ys.push(ys.last().unwrap() - s);
            }
            let p = Pchip::new(&xs, &ys).unwrap();
            let mut prev = p.eval(-1.0);
            for k in 1..=400 {
                let v = p.eval(-1.0 + k as f64 * (xs.len() as f64 + 1.0) / 400.0);
                prop_assert!(v <= prev + 1e-12);
                prev = v;
            }
        }
    }
}
