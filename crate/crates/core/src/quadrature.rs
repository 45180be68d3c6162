//! Discrete mixed Lebesgue functionals on space-time sample matrices.
//!
//! Samples are stored row-major with rows indexed by time `l` and columns by
//! space `j`. [`j_pq`] reduces over time first (exponent `q`) and then over
//! space (exponent `p`); [`k_qp`] does the opposite. Every level is a plain
//! mean, not a Riemann sum with `dx`/`dt`.

use serde::{Deserialize, Serialize};

use crate::grid::{SpectralGrid, TimeGrid};
use crate::scalar::{count, lit, pairwise_sum, Real};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QuadratureError {
    #[error("shape mismatch: expected {expected_rows}x{expected_cols}, found {found_rows}x{found_cols}")]
    Shape {
        expected_rows: usize,
        expected_cols: usize,
        found_rows: usize,
        found_cols: usize,
    },
    #[error("length mismatch: {0} values vs {1} weights")]
    Length(usize, usize),
    #[error("samples contain non-finite values")]
    NonFinite,
    #[error("weights must be finite and non-negative")]
    BadWeight,
    #[error("finite exponents must be >= 1, got {0}")]
    BadExponent(f64),
}

/// Lebesgue exponent: a real number in `[1, inf)` or infinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Exponent {
    Finite(f64),
    Inf,
}

impl Exponent {
    pub fn new(value: f64) -> Result<Self, QuadratureError> {
        if value == f64::INFINITY {
            return Ok(Self::Inf);
        }
        if !(value.is_finite() && value >= 1.0) {
            return Err(QuadratureError::BadExponent(value));
        }
        Ok(Self::Finite(value))
    }

    /// `a / b` as an exponent; panics when the ratio is below one.
    pub fn ratio(a: u32, b: u32) -> Self {
        Self::new(a as f64 / b as f64).expect("exponent ratio >= 1")
    }

    pub fn is_inf(&self) -> bool {
        matches!(self, Self::Inf)
    }

    fn check(&self) -> Result<(), QuadratureError> {
        match *self {
            Self::Inf => Ok(()),
            Self::Finite(v) if v.is_finite() && v >= 1.0 => Ok(()),
            Self::Finite(v) => Err(QuadratureError::BadExponent(v)),
        }
    }
}

impl std::fmt::Display for Exponent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Inf => write!(f, "inf"),
            Self::Finite(v) => write!(f, "{v}"),
        }
    }
}

/// Non-negative quadrature weights, `rows x cols`. `None` means all ones.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix<T> {
    rows: usize,
    cols: usize,
    entries: Option<Vec<T>>,
}

impl<T: Real> WeightMatrix<T> {
    pub fn ones(rows: usize, cols: usize) -> Self {
        Self { rows, cols, entries: None }
    }

    pub fn new(rows: usize, cols: usize, entries: Vec<T>) -> Result<Self, QuadratureError> {
        if entries.len() != rows * cols {
            return Err(QuadratureError::Length(rows * cols, entries.len()));
        }
        if entries.iter().any(|w| !w.is_finite() || *w < T::zero()) {
            return Err(QuadratureError::BadWeight);
        }
        Ok(Self {
            rows,
            cols,
            entries: Some(entries),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> Option<&[T]> {
        self.entries.as_deref()
    }

    pub fn transpose(&self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            entries: self.entries.as_ref().map(|e| transpose(e, self.rows, self.cols)),
        }
    }
}

/// Samples `g(t_l, x_j)` over a time grid and a spatial grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix<T> {
    time_grid: TimeGrid<T>,
    space_grid: SpectralGrid<T>,
    values: Vec<T>,
}

impl<T: Real> SampleMatrix<T> {
    pub fn new(time_grid: TimeGrid<T>, space_grid: SpectralGrid<T>, values: Vec<T>) -> Result<Self, QuadratureError> {
        let (m, n) = (time_grid.n_points(), space_grid.n_points());
        if values.len() != m * n {
            return Err(QuadratureError::Length(m * n, values.len()));
        }
        Ok(Self {
            time_grid,
            space_grid,
            values,
        })
    }

    pub fn from_fn(time_grid: TimeGrid<T>, space_grid: SpectralGrid<T>, f: impl Fn(T, T) -> T) -> Self {
        let xs = space_grid.points();
        let mut values = Vec::with_capacity(time_grid.n_points() * xs.len());
        for t in time_grid.points() {
            values.extend(xs.iter().map(|&x| f(t, x)));
        }
        Self {
            time_grid,
            space_grid,
            values,
        }
    }

    pub fn time_grid(&self) -> &TimeGrid<T> {
        &self.time_grid
    }

    pub fn space_grid(&self) -> &SpectralGrid<T> {
        &self.space_grid
    }

    pub fn rows(&self) -> usize {
        self.time_grid.n_points()
    }

    pub fn cols(&self) -> usize {
        self.space_grid.n_points()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn row(&self, l: usize) -> &[T] {
        let n = self.cols();
        &self.values[l * n..(l + 1) * n]
    }

    /// Entrywise `self - other`; grids must agree.
    pub fn sub(&self, other: &Self) -> Result<Self, QuadratureError> {
        self.check_same_shape(other)?;
        Ok(Self {
            values: self.values.iter().zip(&other.values).map(|(a, b)| *a - *b).collect(),
            ..*self
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self, QuadratureError> {
        self.check_same_shape(other)?;
        Ok(Self {
            values: self.values.iter().zip(&other.values).map(|(a, b)| *a + *b).collect(),
            ..*self
        })
    }

    pub fn scale(&self, factor: T) -> Self {
        Self {
            values: self.values.iter().map(|v| *v * factor).collect(),
            ..*self
        }
    }

    fn check_same_shape(&self, other: &Self) -> Result<(), QuadratureError> {
        if self.rows() != other.rows() || self.cols() != other.cols() {
            return Err(QuadratureError::Shape {
                expected_rows: self.rows(),
                expected_cols: self.cols(),
                found_rows: other.rows(),
                found_cols: other.cols(),
            });
        }
        Ok(())
    }
}

/// Which axis the inner reduction runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MixedKind {
    /// Inner over time, outer over space (`J_{p,q}`).
    J,
    /// Inner over space, outer over time (`K_{q,p}`).
    K,
}

/// A mixed functional: kind plus (outer, inner) exponents.
///
/// For `J_{p,q}` the outer exponent is `p` and the inner `q`; for `K_{q,p}`
/// the inner exponent is `q` and the outer `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixedNorm {
    pub kind: MixedKind,
    pub outer: Exponent,
    pub inner: Exponent,
}

impl MixedNorm {
    pub fn j(p: Exponent, q: Exponent) -> Self {
        Self {
            kind: MixedKind::J,
            outer: p,
            inner: q,
        }
    }

    pub fn k(q: Exponent, p: Exponent) -> Self {
        Self {
            kind: MixedKind::K,
            outer: p,
            inner: q,
        }
    }

    pub fn label(&self) -> String {
        match self.kind {
            MixedKind::J => format!("J[{},{}]", self.outer, self.inner),
            MixedKind::K => format!("K[{},{}]", self.inner, self.outer),
        }
    }

    /// Evaluates on a raw row-major `rows x cols` block.
    pub fn eval<T: Real>(&self, values: &[T], rows: usize, cols: usize, weights: Option<&[T]>) -> T {
        self.reduce(values, rows, cols, weights, None)
    }

    /// Value and gradient with respect to every sample.
    ///
    /// Max reductions send the full adjoint to the first attained maximum;
    /// power reductions give a zero subgradient at `g = 0`.
    pub fn eval_with_grad<T: Real>(&self, values: &[T], rows: usize, cols: usize, weights: Option<&[T]>) -> (T, Vec<T>) {
        let mut grad = vec![T::zero(); values.len()];
        let v = self.reduce(values, rows, cols, weights, Some(&mut grad));
        (v, grad)
    }

    fn reduce<T: Real>(&self, values: &[T], rows: usize, cols: usize, weights: Option<&[T]>, grad: Option<&mut [T]>) -> T {
        debug_assert_eq!(values.len(), rows * cols);
        let (n_outer, n_inner) = match self.kind {
            MixedKind::J => (cols, rows),
            MixedKind::K => (rows, cols),
        };
        let index = |o: usize, i: usize| match self.kind {
            MixedKind::J => i * cols + o,
            MixedKind::K => o * cols + i,
        };
        if n_outer == 0 || n_inner == 0 {
            return T::zero();
        }
        let mut inner_vals = vec![T::zero(); n_outer];
        let mut buf_abs = vec![T::zero(); n_inner];
        let mut buf_w = vec![T::one(); n_inner];
        let mut scratch = vec![T::zero(); n_inner.max(n_outer)];
        for (o, slot) in inner_vals.iter_mut().enumerate() {
            for i in 0..n_inner {
                let idx = index(o, i);
                buf_abs[i] = values[idx].abs();
                if let Some(w) = weights {
                    buf_w[i] = w[idx];
                }
            }
            *slot = power_mean(&buf_abs, &buf_w, self.inner, &mut scratch);
        }
        let ones = vec![T::one(); n_outer];
        let total = power_mean(&inner_vals, &ones, self.outer, &mut scratch);

        if let Some(grad) = grad {
            if total <= T::zero() {
                return total;
            }
            let outer_adj = power_mean_adjoint(&inner_vals, &ones, self.outer, total);
            for (o, &adj_o) in outer_adj.iter().enumerate() {
                if adj_o == T::zero() || inner_vals[o] <= T::zero() {
                    continue;
                }
                for i in 0..n_inner {
                    let idx = index(o, i);
                    buf_abs[i] = values[idx].abs();
                    buf_w[i] = weights.map_or(T::one(), |w| w[idx]);
                }
                let inner_adj = power_mean_adjoint(&buf_abs, &buf_w, self.inner, inner_vals[o]);
                for (i, &a) in inner_adj.iter().enumerate() {
                    if a != T::zero() {
                        let idx = index(o, i);
                        let sign = if values[idx] > T::zero() { T::one() } else { -T::one() };
                        grad[idx] = grad[idx] + adj_o * a * sign;
                    }
                }
            }
        }
        total
    }
}

/// `(mean w a^q)^(1/q)` for non-negative `a`, or `max w a` for `q = inf`.
///
/// Finite exponents are evaluated after scaling by the largest magnitude so
/// that large `q` cannot overflow.
fn power_mean<T: Real>(a: &[T], w: &[T], q: Exponent, scratch: &mut [T]) -> T {
    match q {
        Exponent::Inf => a.iter().zip(w).fold(T::zero(), |m, (&x, &wi)| m.max(wi * x)),
        Exponent::Finite(qf) => {
            let scale = a
                .iter()
                .zip(w)
                .filter(|(_, &wi)| wi > T::zero())
                .fold(T::zero(), |m, (&x, _)| m.max(x));
            if scale <= T::zero() {
                return T::zero();
            }
            let qt: T = lit(qf);
            let terms = &mut scratch[..a.len()];
            for ((t, &x), &wi) in terms.iter_mut().zip(a).zip(w) {
                *t = if wi > T::zero() && x > T::zero() {
                    wi * (x / scale).powf(qt)
                } else {
                    T::zero()
                };
            }
            let mean = pairwise_sum(terms) / count(a.len());
            scale * mean.powf(T::one() / qt)
        }
    }
}

/// Derivative of [`power_mean`] with respect to each `a_i`, given its value.
fn power_mean_adjoint<T: Real>(a: &[T], w: &[T], q: Exponent, value: T) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    if value <= T::zero() {
        return out;
    }
    match q {
        Exponent::Inf => {
            let mut best = T::neg_infinity();
            let mut arg = 0;
            for (i, (&x, &wi)) in a.iter().zip(w).enumerate() {
                if wi * x > best {
                    best = wi * x;
                    arg = i;
                }
            }
            out[arg] = w[arg];
        }
        Exponent::Finite(qf) => {
            let qm1: T = lit(qf - 1.0);
            let inv_n = T::one() / count(a.len());
            for ((o, &x), &wi) in out.iter_mut().zip(a).zip(w) {
                if x > T::zero() && wi > T::zero() {
                    *o = wi * (x / value).powf(qm1) * inv_n;
                }
            }
        }
    }
    out
}

fn transpose<T: Copy>(v: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(v.len());
    for j in 0..cols {
        for i in 0..rows {
            out.push(v[i * cols + j]);
        }
    }
    out
}

fn validate<T: Real>(samples: &SampleMatrix<T>, weights: &WeightMatrix<T>, exps: [Exponent; 2]) -> Result<(), QuadratureError> {
    for e in exps {
        e.check()?;
    }
    if weights.rows != samples.rows() || weights.cols != samples.cols() {
        return Err(QuadratureError::Shape {
            expected_rows: samples.rows(),
            expected_cols: samples.cols(),
            found_rows: weights.rows,
            found_cols: weights.cols,
        });
    }
    if samples.values.iter().any(|v| !v.is_finite()) {
        return Err(QuadratureError::NonFinite);
    }
    Ok(())
}

/// `((1/N) sum_j w_j |f_j|^2)^(1/2)`.
pub fn j_l2<T: Real>(values: &[T], weights: &[T]) -> Result<T, QuadratureError> {
    if values.len() != weights.len() {
        return Err(QuadratureError::Length(values.len(), weights.len()));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
        return Err(QuadratureError::BadWeight);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(QuadratureError::NonFinite);
    }
    Ok(j_l2_unchecked(values, Some(weights)))
}

/// [`j_l2`] without validation; `None` weights mean all ones.
pub fn j_l2_unchecked<T: Real>(values: &[T], weights: Option<&[T]>) -> T {
    MixedNorm::k(Exponent::Finite(2.0), Exponent::Finite(2.0)).eval(values, 1, values.len(), weights)
}

/// `J_{p,q}`: inner over time with exponent `q`, outer over space with `p`.
pub fn j_pq<T: Real>(samples: &SampleMatrix<T>, p: Exponent, q: Exponent, weights: &WeightMatrix<T>) -> Result<T, QuadratureError> {
    validate(samples, weights, [p, q])?;
    Ok(MixedNorm::j(p, q).eval(samples.values(), samples.rows(), samples.cols(), weights.entries()))
}

/// `K_{q,p}`: inner over space with exponent `q`, outer over time with `p`.
pub fn k_qp<T: Real>(samples: &SampleMatrix<T>, q: Exponent, p: Exponent, weights: &WeightMatrix<T>) -> Result<T, QuadratureError> {
    validate(samples, weights, [p, q])?;
    Ok(MixedNorm::k(q, p).eval(samples.values(), samples.rows(), samples.cols(), weights.entries()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const INF: Exponent = Exponent::Inf;

    fn fin(v: f64) -> Exponent {
        Exponent::Finite(v)
    }

    fn matrix(m: usize, n: usize, values: Vec<f64>) -> SampleMatrix<f64> {
        let tg = TimeGrid::new(1.0, m).unwrap();
        let sg = SpectralGrid::new(1.0, n).unwrap();
        SampleMatrix::new(tg, sg, values).unwrap()
    }

    #[test]
    fn l2_examples() {
        assert_relative_eq!(j_l2(&[2.5; 7], &[1.0; 7]).unwrap(), 2.5, max_relative = 1e-15);
        assert_relative_eq!(j_l2(&[3.0, 4.0], &[1.0, 1.0]).unwrap(), 12.5f64.sqrt(), max_relative = 1e-15);
        assert_eq!(j_l2(&[3.0, 4.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(j_l2(&[3.0], &[1.0, 1.0]), Err(QuadratureError::Length(1, 2)));
        assert_eq!(j_l2(&[3.0], &[-1.0]), Err(QuadratureError::BadWeight));
    }

    #[test]
    fn constant_samples_have_unit_norm() {
        let g = matrix(4, 6, vec![1.0; 24]);
        let w = WeightMatrix::ones(4, 6);
        for (p, q) in [(1.0, 1.0), (2.0, 5.0), (10.0 / 3.0, 21.0 / 4.0), (20.0, 2.5)] {
            assert_relative_eq!(j_pq(&g, fin(p), fin(q), &w).unwrap(), 1.0, max_relative = 1e-14);
            assert_relative_eq!(k_qp(&g, fin(q), fin(p), &w).unwrap(), 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn single_point_gives_absolute_value() {
        // Spectral grids need an even point count, so this goes through the raw block API.
        for e in [fin(1.0), fin(2.0), fin(7.5), INF] {
            for f in [fin(1.0), fin(3.0), INF] {
                assert_relative_eq!(MixedNorm::j(e, f).eval(&[-5.0], 1, 1, None), 5.0, max_relative = 1e-15);
                assert_relative_eq!(MixedNorm::k(e, f).eval(&[-5.0], 1, 1, None), 5.0, max_relative = 1e-15);
            }
        }
    }

    #[test]
    fn hand_arithmetic_examples() {
        let g = matrix(1, 2, vec![3.0, 4.0]);
        let w = WeightMatrix::ones(1, 2);
        assert_relative_eq!(j_pq(&g, fin(2.0), fin(2.0), &w).unwrap(), 12.5f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(k_qp(&g, fin(2.0), INF, &w).unwrap(), 12.5f64.sqrt(), max_relative = 1e-15);
        let g = matrix(2, 2, vec![1.0, 2.0, 1.0, 2.0]);
        let w = WeightMatrix::ones(2, 2);
        assert_relative_eq!(j_pq(&g, INF, fin(2.0), &w).unwrap(), 2.0, max_relative = 1e-15);
    }

    #[test]
    fn weights_multiply_inside_max() {
        let g = matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let w = WeightMatrix::new(2, 2, vec![1.0, 1.0, 1.0, 0.25]).unwrap();
        assert_eq!(j_pq(&g, INF, INF, &w).unwrap(), 3.0);
    }

    #[test]
    fn transpose_duality() {
        let vals: Vec<f64> = (0..12).map(|i| ((i * 7 % 5) as f64) - 1.7).collect();
        let w: Vec<f64> = (0..12).map(|i| 0.5 + (i % 3) as f64).collect();
        let (q, p) = (fin(3.0), fin(1.5));
        let k = MixedNorm::k(q, p).eval(&vals, 3, 4, Some(&w));
        let jt = MixedNorm::j(p, q).eval(&transpose(&vals, 3, 4), 4, 3, Some(&transpose(&w, 3, 4)));
        assert_relative_eq!(k, jt, max_relative = 1e-14);
    }

    #[test]
    fn large_exponents_do_not_overflow() {
        let vals: Vec<f64> = vec![1e200, 3e200, 2e200, 5e199];
        let v = MixedNorm::j(fin(100.0), fin(100.0)).eval(&vals, 2, 2, None);
        assert!(v.is_finite() && v > 1e200);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(Exponent::new(0.5).is_err());
        assert_eq!(Exponent::new(f64::INFINITY).unwrap(), INF);
        let g = matrix(2, 2, vec![1.0, f64::NAN, 0.0, 0.0]);
        assert_eq!(j_pq(&g, INF, INF, &WeightMatrix::ones(2, 2)), Err(QuadratureError::NonFinite));
        let g = matrix(2, 2, vec![1.0; 4]);
        assert!(matches!(j_pq(&g, INF, INF, &WeightMatrix::ones(3, 2)), Err(QuadratureError::Shape { .. })));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let vals: Vec<f64> = (0..20).map(|i| ((i as f64) * 1.37).sin() * 2.0 + 0.1).collect();
        let w: Vec<f64> = (0..20).map(|i| 0.5 + ((i as f64) * 0.7).cos().abs()).collect();
        let norms = [
            MixedNorm::j(fin(2.0), fin(2.0)),
            MixedNorm::j(fin(10.0 / 3.0), fin(21.0 / 4.0)),
            MixedNorm::k(fin(1.0), fin(2.0)),
            MixedNorm::j(INF, fin(2.0)),
            MixedNorm::k(INF, fin(4.0)),
            MixedNorm::j(fin(20.0), fin(2.5)),
        ];
        for norm in norms {
            let (_, g) = norm.eval_with_grad(&vals, 4, 5, Some(&w));
            for i in 0..vals.len() {
                let h = 1e-6;
                let mut up = vals.clone();
                up[i] += h;
                let mut dn = vals.clone();
                dn[i] -= h;
                let fd = (norm.eval(&up, 4, 5, Some(&w)) - norm.eval(&dn, 4, 5, Some(&w))) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-7 * (1.0 + fd.abs()), "{} idx {i}: fd {fd} vs {}", norm.label(), g[i]);
            }
        }
    }

    #[test]
    fn max_gradient_goes_to_first_argmax() {
        let vals = vec![1.0, -3.0, 3.0, 2.0];
        let (v, g) = MixedNorm::k(INF, INF).eval_with_grad(&vals, 1, 4, None);
        assert_eq!(v, 3.0);
        assert_eq!(g, vec![0.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_samples_have_zero_gradient() {
        let (v, g) = MixedNorm::j(fin(1.0), fin(1.5)).eval_with_grad(&[0.0; 6], 2, 3, None);
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }
}
