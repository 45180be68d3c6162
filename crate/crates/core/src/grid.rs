//! Uniform space and time grids.

use serde::{Deserialize, Serialize};

use crate::scalar::{count, lit, Real};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("spatial grid needs an even number of points >= 2, got {0}")]
    BadPointCount(usize),
    #[error("time grid needs at least one point")]
    EmptyTimeGrid,
    #[error("grid extent must be positive and finite, got {0}")]
    BadExtent(f64),
}

/// Periodic grid on `[-R, R)` with `N` points, right endpoint excluded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralGrid<T> {
    half_width: T,
    n_points: usize,
}

impl<T: Real> SpectralGrid<T> {
    pub fn new(half_width: T, n_points: usize) -> Result<Self, GridError> {
        if n_points < 2 || n_points % 2 != 0 {
            return Err(GridError::BadPointCount(n_points));
        }
        if !(half_width.is_finite() && half_width > T::zero()) {
            return Err(GridError::BadExtent(half_width.to_f64().unwrap_or(f64::NAN)));
        }
        Ok(Self { half_width, n_points })
    }

    pub fn half_width(&self) -> T {
        self.half_width
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn spacing(&self) -> T {
        lit::<T>(2.0) * self.half_width / count(self.n_points)
    }

    pub fn point(&self, j: usize) -> T {
        -self.half_width + count::<T>(j) * self.spacing()
    }

    pub fn points(&self) -> Vec<T> {
        (0..self.n_points).map(|j| self.point(j)).collect()
    }

    /// Signed mode number of FFT slot `slot` (`0..N/2-1`, then `-N/2..-1`).
    pub fn mode(&self, slot: usize) -> isize {
        let n = self.n_points as isize;
        let s = slot as isize;
        if s < n / 2 {
            s
        } else {
            s - n
        }
    }

    /// FFT slot holding the Nyquist mode `-N/2`.
    pub fn nyquist_slot(&self) -> usize {
        self.n_points / 2
    }

    /// Angular wavenumbers `pi m / R` in FFT slot order.
    pub fn wavenumbers(&self) -> Vec<T> {
        let base = T::PI() / self.half_width;
        (0..self.n_points)
            .map(|slot| base * T::from_isize(self.mode(slot)).unwrap())
            .collect()
    }

    pub fn cast<U: Real>(&self) -> SpectralGrid<U> {
        SpectralGrid {
            half_width: lit(self.half_width.to_f64().unwrap()),
            n_points: self.n_points,
        }
    }
}

/// Uniform grid on `[-T, T]` with both endpoints included.
///
/// A single-point grid sits at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid<T> {
    half_length: T,
    n_points: usize,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(half_length: T, n_points: usize) -> Result<Self, GridError> {
        if n_points == 0 {
            return Err(GridError::EmptyTimeGrid);
        }
        if !(half_length.is_finite() && half_length >= T::zero()) {
            return Err(GridError::BadExtent(half_length.to_f64().unwrap_or(f64::NAN)));
        }
        Ok(Self { half_length, n_points })
    }

    pub fn half_length(&self) -> T {
        self.half_length
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn point(&self, l: usize) -> T {
        if self.n_points == 1 {
            return T::zero();
        }
        let step = lit::<T>(2.0) * self.half_length / count(self.n_points - 1);
        -self.half_length + count::<T>(l) * step
    }

    pub fn points(&self) -> Vec<T> {
        (0..self.n_points).map(|l| self.point(l)).collect()
    }

    pub fn cast<U: Real>(&self) -> TimeGrid<U> {
        TimeGrid {
            half_length: lit(self.half_length.to_f64().unwrap()),
            n_points: self.n_points,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spatial_grid_excludes_right_endpoint() {
        let g = SpectralGrid::new(2.0f64, 4).unwrap();
        assert_eq!(g.points(), vec![-2.0, -1.0, 0.0, 1.0]);
        assert_eq!(g.spacing(), 1.0);
    }

    #[test]
    fn odd_or_tiny_point_counts_are_rejected() {
        assert_eq!(SpectralGrid::new(1.0f64, 3), Err(GridError::BadPointCount(3)));
        assert_eq!(SpectralGrid::new(1.0f64, 0), Err(GridError::BadPointCount(0)));
        assert!(SpectralGrid::new(-1.0f64, 8).is_err());
    }

    #[test]
    fn wavenumbers_follow_fft_slot_order() {
        let g = SpectralGrid::new(std::f64::consts::PI, 8).unwrap();
        let k = g.wavenumbers();
        assert_eq!(k, vec![0.0, 1.0, 2.0, 3.0, -4.0, -3.0, -2.0, -1.0]);
        assert_eq!(g.nyquist_slot(), 4);
    }

    #[test]
    fn time_grid_includes_both_endpoints() {
        let g = TimeGrid::new(3.0f64, 4).unwrap();
        assert_eq!(g.points(), vec![-3.0, -1.0, 1.0, 3.0]);
        assert_eq!(TimeGrid::new(3.0f64, 1).unwrap().points(), vec![0.0]);
    }
}
