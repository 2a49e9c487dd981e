//! Composite Simpson quadrature on a uniform grid.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Uniform grid on `[0, horizon]` with composite Simpson weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SimpsonGrid<T> {
    times: Vec<T>,
    weights: Vec<T>,
}

impl<T: Real> SimpsonGrid<T> {
    /// `intervals` must be even and positive.
    pub fn new(horizon: T, intervals: usize) -> Result<Self> {
        if intervals == 0 || intervals % 2 != 0 || !(horizon > T::zero()) {
            return Err(Error::Config(format!(
                "Simpson grid needs a positive horizon and an even interval count (got {intervals})"
            )));
        }
        let h = horizon / T::lit(intervals as f64);
        let third = h / T::lit(3.0);
        let times = (0..=intervals)
            .map(|k| if k == intervals { horizon } else { h * T::lit(k as f64) })
            .collect();
        let weights = (0..=intervals)
            .map(|k| {
                if k == 0 || k == intervals {
                    third
                } else if k % 2 == 1 {
                    third * T::lit(4.0)
                } else {
                    third * T::lit(2.0)
                }
            })
            .collect();
        Ok(Self { times, weights })
    }

    /// Grid with the given spacing in hours; the interval count is rounded up to even.
    pub fn with_spacing(horizon: T, spacing: T) -> Result<Self> {
        let n = (horizon / spacing).round().to_usize().unwrap_or(0);
        Self::new(horizon, n + n % 2)
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn horizon(&self) -> T {
        *self.times.last().expect("grid is never empty")
    }

    /// Integral of a function sampled on the grid.
    pub fn integrate(&self, values: &[T]) -> T {
        debug_assert_eq!(values.len(), self.weights.len());
        self.weights.iter().zip(values).fold(T::zero(), |acc, (&w, &v)| acc + w * v)
    }

    /// Integral of the squared difference of two sampled curves.
    pub fn integrate_squared_difference(&self, a: &[T], b: &[T]) -> T {
        debug_assert_eq!(a.len(), self.weights.len());
        debug_assert_eq!(b.len(), self.weights.len());
        self.weights
            .iter()
            .zip(a.iter().zip(b))
            .fold(T::zero(), |acc, (&w, (&x, &y))| acc + w * (x - y) * (x - y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_cubics() {
        let grid = SimpsonGrid::<f64>::new(3.0, 6).unwrap();
        let vals: Vec<f64> = grid.times().iter().map(|t| t * t * t - 2.0 * t + 1.0).collect();
        let exact = 81.0 / 4.0 - 9.0 + 3.0;
        assert!((grid.integrate(&vals) - exact).abs() < 1e-12);
    }

    #[test]
    fn odd_interval_count_is_rejected() {
        assert!(SimpsonGrid::<f64>::new(3.0, 5).is_err());
    }

    #[test]
    fn one_minute_grid_over_three_hours() {
        let grid = SimpsonGrid::<f64>::with_spacing(3.0, 1.0 / 60.0).unwrap();
        assert_eq!(grid.times().len(), 181);
        let total: f64 = grid.weights().iter().sum();
        assert!((total - 3.0).abs() < 1e-12);
    }
}
