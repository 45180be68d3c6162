//! Fourier multiplier operators on the periodic truncation of the real line.
//!
//! Transforms use the angular convention `u^(k) = sum_j u(x_j) exp(-i k x_j) dx`
//! with `k = pi m / R`. In the ordinary-frequency convention `xi` this is
//! `k = 2 pi xi`, so the Airy phase `exp(8 pi^3 i t xi^3)` becomes
//! `exp(i k^3 t)`.
//!
//! Operators act on [`Field`]s and are built from [`Symbol`]s, the per-mode
//! multipliers. Every symbol produced here is conjugate-symmetric, so real
//! inputs stay real.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::grid::SpectralGrid;
use crate::scalar::{count, lit, Real};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpectralError {
    #[error("field lives on a grid with N={found_n}, R={found_r}; operator expects N={expected_n}, R={expected_r}")]
    GridMismatch {
        expected_n: usize,
        expected_r: f64,
        found_n: usize,
        found_r: f64,
    },
    #[error("field contains non-finite values")]
    NonFinite,
    #[error("time must be finite, got {0}")]
    NonFiniteTime(f64),
    #[error("derivative order must be 1, 2 or 3, got {0}")]
    BadOrder(u32),
    #[error("value count {found} does not match grid size {expected}")]
    Length { expected: usize, found: usize },
}

/// Samples of a (possibly complex) function on a [`SpectralGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field<T> {
    grid: SpectralGrid<T>,
    values: Vec<Complex<T>>,
}

impl<T: Real> Field<T> {
    pub fn from_complex(grid: SpectralGrid<T>, values: Vec<Complex<T>>) -> Result<Self, SpectralError> {
        if values.len() != grid.n_points() {
            return Err(SpectralError::Length {
                expected: grid.n_points(),
                found: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn from_real(grid: SpectralGrid<T>, values: &[T]) -> Result<Self, SpectralError> {
        Self::from_complex(grid, values.iter().map(|&v| Complex::new(v, T::zero())).collect())
    }

    pub fn from_fn(grid: SpectralGrid<T>, f: impl Fn(T) -> T) -> Self {
        let values = grid.points().into_iter().map(|x| Complex::new(f(x), T::zero())).collect();
        Self { grid, values }
    }

    pub fn zeros(grid: SpectralGrid<T>) -> Self {
        Self {
            grid,
            values: vec![Complex::new(T::zero(), T::zero()); grid.n_points()],
        }
    }

    pub fn grid(&self) -> &SpectralGrid<T> {
        &self.grid
    }

    pub fn values(&self) -> &[Complex<T>] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex<T>> {
        self.values
    }

    pub fn real_values(&self) -> Vec<T> {
        self.values.iter().map(|c| c.re).collect()
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, c| m.max(c.norm()))
    }

    pub fn max_abs_re(&self) -> T {
        self.values.iter().fold(T::zero(), |m, c| m.max(c.re.abs()))
    }

    pub fn max_abs_im(&self) -> T {
        self.values.iter().fold(T::zero(), |m, c| m.max(c.im.abs()))
    }

    /// Discrete `L^2` norm `(dx sum |f_j|^2)^(1/2)`.
    pub fn l2_norm(&self) -> T {
        let sq: Vec<T> = self.values.iter().map(|c| c.norm_sqr()).collect();
        (self.grid.spacing() * crate::scalar::pairwise_sum(&sq)).sqrt()
    }

    pub fn mean(&self) -> Complex<T> {
        let n = count::<T>(self.values.len());
        let re: Vec<T> = self.values.iter().map(|c| c.re).collect();
        let im: Vec<T> = self.values.iter().map(|c| c.im).collect();
        Complex::new(
            crate::scalar::pairwise_sum(&re) / n,
            crate::scalar::pairwise_sum(&im) / n,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn sub(&self, other: &Self) -> Result<Self, SpectralError> {
        check_same_grid(&self.grid, &other.grid)?;
        Ok(Self {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn scale(&self, factor: T) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|c| c * factor).collect(),
        }
    }
}

fn check_same_grid<T: Real>(expected: &SpectralGrid<T>, found: &SpectralGrid<T>) -> Result<(), SpectralError> {
    if expected != found {
        return Err(SpectralError::GridMismatch {
            expected_n: expected.n_points(),
            expected_r: expected.half_width().to_f64().unwrap(),
            found_n: found.n_points(),
            found_r: found.half_width().to_f64().unwrap(),
        });
    }
    Ok(())
}

/// Per-mode multiplier in FFT slot order.
#[derive(Debug, Clone, PartialEq)]
pub struct Symbol<T>(Vec<Complex<T>>);

impl<T: Real> Symbol<T> {
    pub fn from_values(values: Vec<Complex<T>>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[Complex<T>] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Pointwise product, i.e. operator composition.
    pub fn then(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a * b).collect())
    }

    /// Symbol of the adjoint operator.
    pub fn conj(&self) -> Self {
        Self(self.0.iter().map(|c| c.conj()).collect())
    }
}

/// FFT plans and wavenumbers for one grid.
///
/// Plans are immutable and shared; scratch buffers are allocated per call,
/// so one instance can serve many threads.
#[derive(Clone)]
pub struct SpectralOps<T: Real> {
    grid: SpectralGrid<T>,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
    kappa: Vec<T>,
}

impl<T: Real> std::fmt::Debug for SpectralOps<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralOps").field("grid", &self.grid).finish()
    }
}

impl<T: Real> SpectralOps<T> {
    pub fn new(grid: SpectralGrid<T>) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(grid.n_points()),
            inverse: planner.plan_fft_inverse(grid.n_points()),
            kappa: grid.wavenumbers(),
            grid,
        }
    }

    pub fn grid(&self) -> &SpectralGrid<T> {
        &self.grid
    }

    pub fn wavenumbers(&self) -> &[T] {
        &self.kappa
    }

    pub fn identity_symbol(&self) -> Symbol<T> {
        Symbol(vec![Complex::new(T::one(), T::zero()); self.kappa.len()])
    }

    /// `|k|^s`; for `s < 0` the zero mode is projected out.
    pub fn fractional_symbol(&self, s: T) -> Symbol<T> {
        if s == T::zero() {
            return self.identity_symbol();
        }
        Symbol(
            self.kappa
                .iter()
                .map(|&k| {
                    if k == T::zero() {
                        Complex::new(T::zero(), T::zero())
                    } else {
                        Complex::new(k.abs().powf(s), T::zero())
                    }
                })
                .collect(),
        )
    }

    /// `(i k)^order`, with the Nyquist mode zeroed for odd orders.
    pub fn derivative_symbol(&self, order: u32) -> Result<Symbol<T>, SpectralError> {
        if !(1..=3).contains(&order) {
            return Err(SpectralError::BadOrder(order));
        }
        let nyq = self.grid.nyquist_slot();
        Ok(Symbol(
            self.kappa
                .iter()
                .enumerate()
                .map(|(slot, &k)| {
                    if order % 2 == 1 && slot == nyq {
                        return Complex::new(T::zero(), T::zero());
                    }
                    Complex::new(T::zero(), k).powu(order)
                })
                .collect(),
        ))
    }

    /// `|k|^-1` with the zero mode set to zero.
    pub fn inverse_derivative_symbol(&self) -> Symbol<T> {
        self.fractional_symbol(-T::one())
    }

    /// `exp(i k^3 t)`, the Airy group at time `t`.
    ///
    /// The Nyquist mode is left untouched: odd derivatives annihilate it in
    /// this discretisation, so it is stationary under the linear flow.
    pub fn airy_symbol(&self, t: T) -> Symbol<T> {
        let nyq = self.grid.nyquist_slot();
        Symbol(
            self.kappa
                .iter()
                .enumerate()
                .map(|(slot, &k)| {
                    if slot == nyq {
                        Complex::new(T::one(), T::zero())
                    } else {
                        Complex::from_polar(T::one(), k * k * k * t)
                    }
                })
                .collect(),
        )
    }

    /// Forward transform in the angular convention (`dx`-weighted, phase
    /// referenced to `x_0 = -R`).
    pub fn forward_transform(&self, field: &Field<T>) -> Result<Vec<Complex<T>>, SpectralError> {
        check_same_grid(&self.grid, field.grid())?;
        let mut buf = field.values().to_vec();
        self.forward.process(&mut buf);
        let dx = self.grid.spacing();
        let r = self.grid.half_width();
        Ok(buf
            .into_iter()
            .zip(&self.kappa)
            .map(|(c, &k)| c * Complex::from_polar(dx, k * r))
            .collect())
    }

    /// Inverse of [`Self::forward_transform`].
    pub fn inverse_transform(&self, coeffs: &[Complex<T>]) -> Result<Field<T>, SpectralError> {
        let n = self.grid.n_points();
        if coeffs.len() != n {
            return Err(SpectralError::Length {
                expected: n,
                found: coeffs.len(),
            });
        }
        let dx = self.grid.spacing();
        let r = self.grid.half_width();
        let mut buf: Vec<Complex<T>> = coeffs
            .iter()
            .zip(&self.kappa)
            .map(|(c, &k)| c * Complex::from_polar(T::one() / dx, -k * r))
            .collect();
        self.inverse.process(&mut buf);
        let inv_n = T::one() / count(n);
        for c in buf.iter_mut() {
            *c = *c * inv_n;
        }
        Field::from_complex(self.grid, buf)
    }

    /// Applies `symbol` to a field.
    pub fn apply(&self, symbol: &Symbol<T>, field: &Field<T>) -> Result<Field<T>, SpectralError> {
        check_same_grid(&self.grid, field.grid())?;
        if !field.is_finite() {
            return Err(SpectralError::NonFinite);
        }
        let mut buf = field.values().to_vec();
        self.apply_in_place(symbol, &mut buf);
        Ok(Field {
            grid: self.grid,
            values: buf,
        })
    }

    /// Applies `symbol` to complex samples in place.
    pub fn apply_in_place(&self, symbol: &Symbol<T>, buf: &mut [Complex<T>]) {
        debug_assert_eq!(buf.len(), self.grid.n_points());
        self.forward.process(buf);
        let inv_n = T::one() / count(buf.len());
        for (c, m) in buf.iter_mut().zip(symbol.values()) {
            *c = *c * *m * inv_n;
        }
        self.inverse.process(buf);
    }

    /// Applies a conjugate-symmetric `symbol` to real samples.
    pub fn apply_real(&self, symbol: &Symbol<T>, input: &[T], output: &mut [T]) {
        let mut buf: Vec<Complex<T>> = input.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.apply_in_place(symbol, &mut buf);
        for (o, c) in output.iter_mut().zip(&buf) {
            *o = c.re;
        }
    }

    /// Unnormalised forward DFT in place.
    pub fn dft(&self, buf: &mut [Complex<T>]) {
        self.forward.process(buf);
    }

    /// Inverse DFT in place, including the `1/N` factor.
    pub fn idft(&self, buf: &mut [Complex<T>]) {
        self.inverse.process(buf);
        let inv_n = T::one() / count(buf.len());
        for c in buf.iter_mut() {
            *c = *c * inv_n;
        }
    }

    /// Unnormalised DFT of real samples, for reuse across several symbols.
    pub fn spectrum_of_real(&self, input: &[T]) -> Vec<Complex<T>> {
        let mut buf: Vec<Complex<T>> = input.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.forward.process(&mut buf);
        buf
    }

    /// Real part of `IDFT(symbol * spectrum) / N`.
    pub fn synthesize_real(&self, spectrum: &[Complex<T>], symbol: &Symbol<T>, output: &mut [T]) {
        let inv_n = T::one() / count(spectrum.len());
        let mut buf: Vec<Complex<T>> = spectrum
            .iter()
            .zip(symbol.values())
            .map(|(c, m)| c * m * inv_n)
            .collect();
        self.inverse.process(&mut buf);
        for (o, c) in output.iter_mut().zip(&buf) {
            *o = c.re;
        }
    }
}

/// Warning raised when `D_x^{-1}` discards a non-negligible mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroModeWarning {
    pub mean: f64,
    pub sup: f64,
}

/// Reports whether the zero mode of `f` is large enough that projecting it
/// out (as `D_x^{-1}` does) changes the answer.
pub fn zero_mode_diagnostic<T: Real>(f: &Field<T>) -> Option<ZeroModeWarning> {
    let mean = f.mean().norm();
    let sup = f.max_abs();
    if mean > lit::<T>(1e-6) * sup {
        Some(ZeroModeWarning {
            mean: mean.to_f64().unwrap(),
            sup: sup.to_f64().unwrap(),
        })
    } else {
        None
    }
}

/// `D_x^s f`, the Riesz fractional derivative `|k|^s`.
pub fn fractional_derivative<T: Real>(f: &Field<T>, s: T) -> Result<Field<T>, SpectralError> {
    if !f.is_finite() {
        return Err(SpectralError::NonFinite);
    }
    if s == T::zero() {
        return Ok(f.clone());
    }
    let ops = SpectralOps::new(*f.grid());
    ops.apply(&ops.fractional_symbol(s), f)
}

/// `d^order f / dx^order` for `order` in `1..=3`.
pub fn spatial_derivative<T: Real>(f: &Field<T>, order: u32) -> Result<Field<T>, SpectralError> {
    let ops = SpectralOps::new(*f.grid());
    let symbol = ops.derivative_symbol(order)?;
    ops.apply(&symbol, f)
}

/// `D_x^{-1} f`, exact on mean-free input; the mean is discarded.
pub fn inverse_derivative<T: Real>(f: &Field<T>) -> Result<Field<T>, SpectralError> {
    if let Some(w) = zero_mode_diagnostic(f) {
        log::warn!(
            "inverse derivative discards mean {:.3e} (sup {:.3e}); result is exact only for mean-free input",
            w.mean,
            w.sup
        );
    }
    let ops = SpectralOps::new(*f.grid());
    ops.apply(&ops.inverse_derivative_symbol(), f)
}

/// `exp(-t d_x^3) f`, the solution of `v_t + v_xxx = 0` with `v(0) = f`.
pub fn airy_group<T: Real>(f: &Field<T>, t: T) -> Result<Field<T>, SpectralError> {
    if !t.is_finite() {
        return Err(SpectralError::NonFiniteTime(t.to_f64().unwrap_or(f64::NAN)));
    }
    let ops = SpectralOps::new(*f.grid());
    ops.apply(&ops.airy_symbol(t), f)
}
