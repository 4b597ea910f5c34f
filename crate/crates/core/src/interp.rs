use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-linear table, clamped outside its abscissa range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1D {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Table1D {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let t = Table1D { x, y };
        t.validate("table")?;
        Ok(t)
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        if self.x.len() != self.y.len() || self.x.is_empty() {
            return Err(Error::Validation(format!(
                "{what}: needs matching nonempty x/y columns"
            )));
        }
        if self.x.iter().chain(&self.y).any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("{what}: non-finite entry")));
        }
        if self.x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation(format!(
                "{what}: abscissa must be strictly increasing"
            )));
        }
        Ok(())
    }

    pub fn eval(&self, xq: f64) -> f64 {
        interp_clamped(&self.x, &self.y, xq)
    }

    /// Slope of the segment containing `xq` (zero outside the table).
    pub fn slope(&self, xq: f64) -> f64 {
        let n = self.x.len();
        if n < 2 || xq <= self.x[0] || xq >= self.x[n - 1] {
            return 0.0;
        }
        let k = segment(&self.x, xq);
        (self.y[k + 1] - self.y[k]) / (self.x[k + 1] - self.x[k])
    }

    pub fn x_min(&self) -> f64 {
        self.x[0]
    }

    pub fn x_max(&self) -> f64 {
        self.x[self.x.len() - 1]
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.y.windows(2).all(|w| w[1] >= w[0])
    }
}

fn segment(x: &[f64], xq: f64) -> usize {
    // index k with x[k] <= xq < x[k+1]
    match x.partition_point(|&v| v <= xq) {
        0 => 0,
        p => (p - 1).min(x.len() - 2),
    }
}

/// Linear interpolation on sorted `x`, clamped at both ends.
pub fn interp_clamped(x: &[f64], y: &[f64], xq: f64) -> f64 {
    let n = x.len();
    if n == 1 || xq <= x[0] {
        return y[0];
    }
    if xq >= x[n - 1] {
        return y[n - 1];
    }
    let k = segment(x, xq);
    let t = (xq - x[k]) / (x[k + 1] - x[k]);
    y[k] + t * (y[k + 1] - y[k])
}

/// Index of the sample nearest to `xq` on sorted `x`.
pub fn nearest_index(x: &[f64], xq: f64) -> usize {
    let p = x.partition_point(|&v| v < xq);
    if p == 0 {
        0
    } else if p >= x.len() {
        x.len() - 1
    } else if (xq - x[p - 1]) <= (x[p] - xq) {
        p - 1
    } else {
        p
    }
}

/// Trapezoidal integral of `f` on a grid with per-interval steps `h`.
pub fn trapezoid(h: &[f64], f: &[f64]) -> f64 {
    h.iter()
        .enumerate()
        .map(|(k, hk)| 0.5 * hk * (f[k] + f[k + 1]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamps_and_interpolates() {
        let t = Table1D::new(vec![0.0, 1.0, 3.0], vec![10.0, 20.0, 0.0]).unwrap();
        assert_eq!(t.eval(-1.0), 10.0);
        assert_eq!(t.eval(5.0), 0.0);
        assert_eq!(t.eval(0.5), 15.0);
        assert_eq!(t.eval(2.0), 10.0);
        assert_eq!(t.eval(1.0), 20.0);
        assert_eq!(t.slope(2.0), -10.0);
    }

    #[test]
    fn rejects_unsorted() {
        assert!(Table1D::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn nearest() {
        let x = [0.0, 1.0, 2.0];
        assert_eq!(nearest_index(&x, 0.4), 0);
        assert_eq!(nearest_index(&x, 0.6), 1);
        assert_eq!(nearest_index(&x, 9.0), 2);
    }
}
