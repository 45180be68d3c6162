//! Discrete KPV functionals `Y_{k,s}` and the error metrics built on them.

use serde::{Deserialize, Serialize};

use crate::grid::{SpectralGrid, TimeGrid};
use crate::quadrature::{Exponent, MixedNorm, QuadratureError, SampleMatrix, WeightMatrix};
use crate::scalar::{lit, Real};
use crate::spectral::{SpectralError, SpectralOps};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NormsError {
    #[error("nonlinearity k={0} is not supported (expected 2..=5)")]
    UnsupportedPower(u32),
    #[error("regularity s={s} is below the threshold {threshold} for k={k}")]
    RegularityTooLow { k: u32, s: f64, threshold: f64 },
    #[error("sampler was built for s={found}, requested s={expected}")]
    RegularityMismatch { expected: f64, found: f64 },
    #[error("prediction sampler has no t=0 slice")]
    MissingInitialSlice,
    #[error("reference field is identically zero")]
    ZeroReference,
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Minimal regularity of the local theory for each `k`.
pub fn s_k(k: u32) -> Result<f64, NormsError> {
    match k {
        2 => Ok(0.75),
        3 => Ok(0.25),
        4 => Ok(1.0 / 12.0),
        5 => Ok(0.0),
        _ => Err(NormsError::UnsupportedPower(k)),
    }
}

/// Checks `s >= s_k`, strictly for `k = 2`.
pub fn check_regularity(k: u32, s: f64) -> Result<(), NormsError> {
    let threshold = s_k(k)?;
    let ok = if k == 2 { s > threshold } else { s >= threshold };
    if !ok || !s.is_finite() {
        return Err(NormsError::RegularityTooLow { k, s, threshold });
    }
    Ok(())
}

/// Sampled quantity a `Y` term is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quantity {
    U,
    Ux,
    DsU,
    DsUx,
}

impl Quantity {
    pub const ALL: [Quantity; 4] = [Quantity::U, Quantity::Ux, Quantity::DsU, Quantity::DsUx];

    pub fn name(&self) -> &'static str {
        match self {
            Quantity::U => "u",
            Quantity::Ux => "u_x",
            Quantity::DsU => "Ds u",
            Quantity::DsUx => "Ds u_x",
        }
    }
}

/// One summand of `Y_{k,s}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YTerm {
    pub norm: MixedNorm,
    pub quantity: Quantity,
}

impl YTerm {
    pub fn name(&self) -> String {
        format!("{}({})", self.norm.label(), self.quantity.name())
    }
}

/// Summands of `Y_{k,s}` in their fixed order.
pub fn y_terms(k: u32) -> Result<Vec<YTerm>, NormsError> {
    use Exponent::{Finite as F, Inf};
    use Quantity::*;
    let j = |p, q, quantity| YTerm {
        norm: MixedNorm::j(p, q),
        quantity,
    };
    let kk = |q, p, quantity| YTerm {
        norm: MixedNorm::k(q, p),
        quantity,
    };
    Ok(match k {
        2 => vec![
            kk(Inf, F(4.0), Ux),
            j(Inf, F(2.0), DsUx),
            j(F(2.0), Inf, U),
            kk(F(2.0), Inf, U),
            kk(F(2.0), Inf, DsU),
        ],
        3 => vec![
            j(Inf, F(2.0), Ux),
            j(F(4.0), Inf, U),
            j(Inf, F(2.0), DsUx),
            j(F(5.0), F(10.0), DsU),
            j(F(20.0), F(2.5), Ux),
        ],
        4 => vec![
            kk(Inf, F(2.0), Ux),
            kk(Inf, F(2.0), DsUx),
            j(F(42.0 / 13.0), F(21.0 / 4.0), U),
            j(F(60.0 / 13.0), F(15.0), U),
            j(F(10.0 / 3.0), F(30.0 / 7.0), U),
            j(Inf, F(2.0), Ux),
            j(Inf, F(2.0), DsUx),
            j(F(10.0 / 3.0), F(21.0 / 4.0), DsU),
        ],
        5 => vec![j(F(5.0), F(10.0), U)],
        _ => return Err(NormsError::UnsupportedPower(k)),
    })
}

/// Number of summands in `Y_{k,s}`: 5, 5, 8, 1 for `k = 2..5`.
pub fn term_count(k: u32) -> Result<usize, NormsError> {
    Ok(y_terms(k)?.len())
}

/// Sampled `u`, `u_x`, `D^s u` and `D^s u_x` over one space-time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSampler<T> {
    s: T,
    u: SampleMatrix<T>,
    ux: SampleMatrix<T>,
    ds_u: SampleMatrix<T>,
    ds_ux: SampleMatrix<T>,
    initial_slice: Option<Vec<T>>,
}

impl<T: Real> FieldSampler<T> {
    pub fn new(
        s: T,
        u: SampleMatrix<T>,
        ux: SampleMatrix<T>,
        ds_u: SampleMatrix<T>,
        ds_ux: SampleMatrix<T>,
    ) -> Result<Self, NormsError> {
        for m in [&ux, &ds_u, &ds_ux] {
            if m.rows() != u.rows() || m.cols() != u.cols() {
                return Err(QuadratureError::Shape {
                    expected_rows: u.rows(),
                    expected_cols: u.cols(),
                    found_rows: m.rows(),
                    found_cols: m.cols(),
                }
                .into());
            }
        }
        Ok(Self {
            s,
            u,
            ux,
            ds_u,
            ds_ux,
            initial_slice: None,
        })
    }

    /// Derives every matrix spectrally from samples of `u`, row by row.
    ///
    /// Exact for band-limited periodic data.
    pub fn from_values(time_grid: TimeGrid<T>, space_grid: SpectralGrid<T>, s: T, values: Vec<T>) -> Result<Self, NormsError> {
        let u = SampleMatrix::new(time_grid, space_grid, values)?;
        let ops = SpectralOps::new(space_grid);
        let symbols = derivative_symbols(&ops, s);
        let n = space_grid.n_points();
        let mut out = [
            vec![T::zero(); u.values().len()],
            vec![T::zero(); u.values().len()],
            vec![T::zero(); u.values().len()],
        ];
        for l in 0..u.rows() {
            let spectrum = ops.spectrum_of_real(u.row(l));
            for (dst, sym) in out.iter_mut().zip(&symbols) {
                ops.synthesize_real(&spectrum, sym, &mut dst[l * n..(l + 1) * n]);
            }
        }
        let [ux, ds_u, ds_ux] = out;
        Self::new(
            s,
            u,
            SampleMatrix::new(time_grid, space_grid, ux)?,
            SampleMatrix::new(time_grid, space_grid, ds_u)?,
            SampleMatrix::new(time_grid, space_grid, ds_ux)?,
        )
    }

    pub fn zeros(time_grid: TimeGrid<T>, space_grid: SpectralGrid<T>, s: T) -> Self {
        let z = SampleMatrix::new(time_grid, space_grid, vec![T::zero(); time_grid.n_points() * space_grid.n_points()])
            .expect("shape by construction");
        Self {
            s,
            u: z.clone(),
            ux: z.clone(),
            ds_u: z.clone(),
            ds_ux: z,
            initial_slice: None,
        }
    }

    /// Attaches `u(0, .)` on the spatial grid, needed by [`estimate_constants`].
    pub fn with_initial_slice(mut self, slice: Vec<T>) -> Self {
        self.initial_slice = Some(slice);
        self
    }

    pub fn s(&self) -> T {
        self.s
    }

    pub fn initial_slice(&self) -> Option<&[T]> {
        self.initial_slice.as_deref()
    }

    pub fn time_grid(&self) -> &TimeGrid<T> {
        self.u.time_grid()
    }

    pub fn space_grid(&self) -> &SpectralGrid<T> {
        self.u.space_grid()
    }

    pub fn get(&self, q: Quantity) -> &SampleMatrix<T> {
        match q {
            Quantity::U => &self.u,
            Quantity::Ux => &self.ux,
            Quantity::DsU => &self.ds_u,
            Quantity::DsUx => &self.ds_ux,
        }
    }

    /// Entrywise difference of every matrix (and of the initial slices when
    /// both are present).
    pub fn sub(&self, other: &Self) -> Result<Self, NormsError> {
        self.check_compatible(other)?;
        Ok(Self {
            s: self.s,
            u: self.u.sub(&other.u)?,
            ux: self.ux.sub(&other.ux)?,
            ds_u: self.ds_u.sub(&other.ds_u)?,
            ds_ux: self.ds_ux.sub(&other.ds_ux)?,
            initial_slice: match (&self.initial_slice, &other.initial_slice) {
                (Some(a), Some(b)) => Some(a.iter().zip(b).map(|(x, y)| *x - *y).collect()),
                _ => None,
            },
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self, NormsError> {
        self.check_compatible(other)?;
        Ok(Self {
            s: self.s,
            u: self.u.add(&other.u)?,
            ux: self.ux.add(&other.ux)?,
            ds_u: self.ds_u.add(&other.ds_u)?,
            ds_ux: self.ds_ux.add(&other.ds_ux)?,
            initial_slice: match (&self.initial_slice, &other.initial_slice) {
                (Some(a), Some(b)) => Some(a.iter().zip(b).map(|(x, y)| *x + *y).collect()),
                _ => None,
            },
        })
    }

    pub fn scale(&self, factor: T) -> Self {
        Self {
            s: self.s,
            u: self.u.scale(factor),
            ux: self.ux.scale(factor),
            ds_u: self.ds_u.scale(factor),
            ds_ux: self.ds_ux.scale(factor),
            initial_slice: self.initial_slice.as_ref().map(|v| v.iter().map(|x| *x * factor).collect()),
        }
    }

    fn check_compatible(&self, other: &Self) -> Result<(), NormsError> {
        if self.s != other.s {
            return Err(NormsError::RegularityMismatch {
                expected: self.s.to_f64().unwrap(),
                found: other.s.to_f64().unwrap(),
            });
        }
        if self.u.rows() != other.u.rows() || self.u.cols() != other.u.cols() {
            return Err(QuadratureError::Shape {
                expected_rows: self.u.rows(),
                expected_cols: self.u.cols(),
                found_rows: other.u.rows(),
                found_cols: other.u.cols(),
            }
            .into());
        }
        Ok(())
    }
}

/// Symbols of `d_x`, `D^s` and `D^s d_x`, in that order.
pub fn derivative_symbols<T: Real>(ops: &SpectralOps<T>, s: T) -> [crate::spectral::Symbol<T>; 3] {
    let dx = ops.derivative_symbol(1).expect("order 1 is valid");
    let ds = ops.fractional_symbol(s);
    let ds_dx = ds.then(&dx);
    [dx, ds, ds_dx]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormTerm {
    pub name: String,
    pub value: f64,
}

/// Per-term breakdown of a `Y` functional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub terms: Vec<NormTerm>,
    pub total: f64,
}

/// `Y_{k,s,N,M}` of the sampled field.
pub fn y_norm<T: Real>(k: u32, s: T, fs: &FieldSampler<T>, weights: &WeightMatrix<T>) -> Result<NormReport, NormsError> {
    let terms = y_terms(k)?;
    check_regularity(k, s.to_f64().unwrap())?;
    if fs.s != s {
        return Err(NormsError::RegularityMismatch {
            expected: s.to_f64().unwrap(),
            found: fs.s.to_f64().unwrap(),
        });
    }
    let (rows, cols) = (fs.u.rows(), fs.u.cols());
    if weights.rows() != rows || weights.cols() != cols {
        return Err(QuadratureError::Shape {
            expected_rows: rows,
            expected_cols: cols,
            found_rows: weights.rows(),
            found_cols: weights.cols(),
        }
        .into());
    }
    for q in Quantity::ALL {
        if fs.get(q).values().iter().any(|v| !v.is_finite()) {
            return Err(QuadratureError::NonFinite.into());
        }
    }
    let mut report = NormReport {
        terms: Vec::with_capacity(terms.len()),
        total: 0.0,
    };
    let mut total = T::zero();
    for term in &terms {
        let v = term.norm.eval(fs.get(term.quantity).values(), rows, cols, weights.entries());
        total = total + v;
        report.terms.push(NormTerm {
            name: term.name(),
            value: v.to_f64().unwrap(),
        });
    }
    report.total = total.to_f64().unwrap();
    Ok(report)
}

fn unit_weights<T: Real>(fs: &FieldSampler<T>) -> WeightMatrix<T> {
    WeightMatrix::ones(fs.u.rows(), fs.u.cols())
}

/// `Y_{k,s}[u - u_theta]` on the sampler's grid with unit weights.
pub fn error_y<T: Real>(k: u32, s: T, exact: &FieldSampler<T>, pred: &FieldSampler<T>) -> Result<T, NormsError> {
    let diff = exact.sub(pred)?;
    Ok(lit(y_norm(k, s, &diff, &unit_weights(&diff))?.total))
}

/// `J_{inf,2}[u] + J_{inf,2}[D^s u]` of a sampled field.
pub fn linf_hs<T: Real>(fs: &FieldSampler<T>) -> T {
    let (rows, cols) = (fs.u.rows(), fs.u.cols());
    let norm = MixedNorm::j(Exponent::Inf, Exponent::Finite(2.0));
    norm.eval(fs.u.values(), rows, cols, None) + norm.eval(fs.ds_u.values(), rows, cols, None)
}

/// `J_{inf,2}[u - u_theta] + J_{inf,2}[D^s (u - u_theta)]`.
pub fn error_linf_hs<T: Real>(s: T, exact: &FieldSampler<T>, pred: &FieldSampler<T>) -> Result<T, NormsError> {
    if exact.s != s {
        return Err(NormsError::RegularityMismatch {
            expected: s.to_f64().unwrap(),
            found: exact.s.to_f64().unwrap(),
        });
    }
    Ok(linf_hs(&exact.sub(pred)?))
}

/// `J_{2,2}[u - u_theta] / J_{2,2}[u]`.
pub fn error_rel<T: Real>(exact: &FieldSampler<T>, pred: &FieldSampler<T>) -> Result<T, NormsError> {
    let (rows, cols) = (exact.u.rows(), exact.u.cols());
    let norm = MixedNorm::j(Exponent::Finite(2.0), Exponent::Finite(2.0));
    let denom = norm.eval(exact.u.values(), rows, cols, None);
    if denom <= T::zero() {
        return Err(NormsError::ZeroReference);
    }
    let diff = exact.u.sub(&pred.u)?;
    Ok(norm.eval(diff.values(), rows, cols, None) / denom)
}

/// The constants `A`, `A~` and `L` of a trained network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub a: f64,
    pub a_tilde: f64,
    pub l: f64,
}

/// `A = J_{inf,2}[u] + J_{inf,2}[D^s u]`, `A~ = |u0 - u(0)| + |D^s (u0 - u(0))|`
/// in discrete `L^2`, and `L = Y_{k,s}[u]`.
pub fn estimate_constants<T: Real>(s: T, u0: &[T], pred: &FieldSampler<T>, k: u32) -> Result<Constants, NormsError> {
    let slice = pred.initial_slice().ok_or(NormsError::MissingInitialSlice)?;
    if slice.len() != u0.len() {
        return Err(QuadratureError::Length(u0.len(), slice.len()).into());
    }
    let a = linf_hs(pred);
    let diff: Vec<T> = u0.iter().zip(slice).map(|(a, b)| *a - *b).collect();
    let ops = SpectralOps::new(*pred.space_grid());
    let mut ds_diff = vec![T::zero(); diff.len()];
    ops.apply_real(&ops.fractional_symbol(s), &diff, &mut ds_diff);
    let a_tilde = crate::quadrature::j_l2_unchecked(&diff, None) + crate::quadrature::j_l2_unchecked(&ds_diff, None);
    let l = y_norm(k, s, pred, &unit_weights(pred))?.total;
    Ok(Constants {
        a: a.to_f64().unwrap(),
        a_tilde: a_tilde.to_f64().unwrap(),
        l,
    })
}
