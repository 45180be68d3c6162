//! The gKdV residual and closed-form solutions used as targets and oracles.
//!
//! Conventions: `u_t + u_xxx = mu (u^k)_x`, with `mu = -1` focusing and
//! `mu = +1` defocusing. The KdV `N`-soliton `6 (log f)_xx` solves the `k = 2`
//! focusing equation without rescaling, and the mKdV `N`-soliton
//! `2 sqrt 2 (arctan(g/f))_x` solves the `k = 3` focusing equation, so the
//! map `u -> a u(b t, x)` is the identity (`a = b = 1`) for both.

use num_complex::{Complex, ComplexFloat};
use serde::{Deserialize, Serialize};

use crate::grid::{SpectralGrid, TimeGrid};
use crate::network::Jet;
use crate::norms::{check_regularity, derivative_symbols, s_k, FieldSampler, NormsError};
use crate::quadrature::SampleMatrix;
use crate::scalar::{count, Real};
use crate::spectral::SpectralOps;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PhysicsError {
    #[error("invalid solution parameters: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Norms(#[from] NormsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Focusing,
    Defocusing,
}

impl Sign {
    pub fn mu(&self) -> f64 {
        match self {
            Sign::Focusing => -1.0,
            Sign::Defocusing => 1.0,
        }
    }
}

/// Nonlinearity power, sign and working regularity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub k: u32,
    pub sign: Sign,
    pub s: f64,
}

impl ModelSpec {
    pub fn new(k: u32, sign: Sign, s: f64) -> Result<Self, PhysicsError> {
        check_regularity(k, s)?;
        Ok(Self { k, sign, s })
    }

    /// `s = s_k`, nudged up by `1e-6` for `k = 2` where the threshold is strict.
    pub fn default_s(k: u32) -> Result<f64, PhysicsError> {
        let s = s_k(k)?;
        Ok(if k == 2 { s + 1e-6 } else { s })
    }

    pub fn with_default_s(k: u32, sign: Sign) -> Result<Self, PhysicsError> {
        Self::new(k, sign, Self::default_s(k)?)
    }

    pub fn mu(&self) -> f64 {
        self.sign.mu()
    }
}

/// `u_t + u_xxx - mu k u^{k-1} u_x`; vanishes on exact solutions.
pub fn residual<T: Real>(model: &ModelSpec, jet: &Jet<T>) -> T {
    let k = model.k as i32;
    let mu: T = crate::scalar::lit(model.mu());
    jet.u_t + jet.u_xxx - mu * count::<T>(model.k as usize) * jet.u.powi(k - 1) * jet.u_x
}

/// A closed-form solution family with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SolutionSpec {
    Soliton {
        k: u32,
        c: f64,
    },
    KdvNsoliton {
        speeds: Vec<f64>,
        #[serde(default)]
        shifts: Vec<f64>,
    },
    MkdvNsoliton {
        speeds: Vec<f64>,
        #[serde(default)]
        shifts: Vec<f64>,
    },
    Breather {
        alpha: f64,
        beta: f64,
        #[serde(default)]
        x1: f64,
        #[serde(default)]
        x2: f64,
    },
    Kink {
        lambda: f64,
    },
}

fn re<C: ComplexFloat>(x: f64) -> C {
    C::from(x).expect("real constant")
}

/// `sech(y)` without overflow for large `|Re y|`.
fn sech<C: ComplexFloat<Real = f64>>(y: C) -> C {
    if y.re() >= 0.0 {
        let e = (-y).exp();
        re::<C>(2.0) * e / (re::<C>(1.0) + e * e)
    } else {
        let e = y.exp();
        re::<C>(2.0) * e / (re::<C>(1.0) + e * e)
    }
}

/// `((k+1) c / 2 sech^2((k-1)/2 sqrt c (x - c t)))^{1/(k-1)}`.
pub fn soliton<C: ComplexFloat<Real = f64>>(k: u32, c: f64, t: C, x: C) -> C {
    let km1 = (k - 1) as f64;
    let arg = (x - re::<C>(c) * t) * re(0.5 * km1 * c.sqrt());
    let sh = sech(arg);
    (re::<C>((k + 1) as f64 * c / 2.0) * sh * sh).powf(1.0 / km1)
}

/// Interaction coefficients `(sqrt c_i - sqrt c_j)^2 / (sqrt c_i + sqrt c_j)^2`.
fn interactions(speeds: &[f64]) -> Vec<Vec<f64>> {
    let n = speeds.len();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let (p, q) = (speeds[i].sqrt(), speeds[j].sqrt());
            a[i][j] = ((p - q) / (p + q)).powi(2);
        }
    }
    a
}

/// Per-subset amplitude, exponent and `sum sqrt c` for every bitmask.
struct Subsets<C> {
    amp: Vec<f64>,
    eta: Vec<C>,
    rate: Vec<f64>,
}

fn subsets<C: ComplexFloat<Real = f64>>(speeds: &[f64], shifts: &[f64], t: C, x: C, sign: f64) -> Subsets<C> {
    let n = speeds.len();
    let a = interactions(speeds);
    let s: Vec<C> = (0..n)
        .map(|i| {
            let d = shifts.get(i).copied().unwrap_or(0.0);
            re::<C>(speeds[i].sqrt()) * (x - re::<C>(speeds[i]) * t) - re(d)
        })
        .collect();
    let total = 1usize << n;
    let mut out = Subsets {
        amp: Vec::with_capacity(total),
        eta: Vec::with_capacity(total),
        rate: Vec::with_capacity(total),
    };
    for mask in 0..total {
        let mut amp = 1.0;
        let mut eta = re::<C>(0.0);
        let mut rate = 0.0;
        for i in 0..n {
            if mask & (1 << i) == 0 {
                continue;
            }
            eta = eta + s[i];
            rate += speeds[i].sqrt();
            for j in (i + 1)..n {
                if mask & (1 << j) != 0 {
                    amp *= sign * a[i][j];
                }
            }
        }
        out.amp.push(amp);
        out.eta.push(eta);
        out.rate.push(rate);
    }
    // A common factor cancels in both N-soliton formulas; remove the largest
    // exponent to keep every term bounded.
    let shift = out.eta.iter().fold(0.0f64, |m, e| m.max(e.re()));
    for e in out.eta.iter_mut() {
        *e = *e - re(shift);
    }
    out
}

/// KdV `N`-soliton `6 (f f_xx - f_x^2) / f^2`.
pub fn kdv_nsoliton<C: ComplexFloat<Real = f64>>(speeds: &[f64], shifts: &[f64], t: C, x: C) -> C {
    let sub = subsets(speeds, shifts, t, x, 1.0);
    let terms: Vec<C> = (0..sub.amp.len()).map(|i| re::<C>(sub.amp[i]) * sub.eta[i].exp()).collect();
    let f = terms.iter().fold(re::<C>(0.0), |a, &b| a + b);
    // f f_xx - f_x^2 summed pairwise, free of cancellation.
    let mut num = re::<C>(0.0);
    for i in 0..terms.len() {
        for j in (i + 1)..terms.len() {
            let d = sub.rate[i] - sub.rate[j];
            num = num + terms[i] * terms[j] * re(d * d);
        }
    }
    re::<C>(6.0) * num / (f * f)
}

/// mKdV `N`-soliton `2 sqrt 2 (f g_x - g f_x) / (f^2 + g^2)`, with `f` over
/// even subsets and `g` over odd ones.
pub fn mkdv_nsoliton<C: ComplexFloat<Real = f64>>(speeds: &[f64], shifts: &[f64], t: C, x: C) -> C {
    let sub = subsets(speeds, shifts, t, x, -1.0);
    let terms: Vec<C> = (0..sub.amp.len()).map(|i| re::<C>(sub.amp[i]) * sub.eta[i].exp()).collect();
    let (mut f, mut g, mut num) = (re::<C>(0.0), re::<C>(0.0), re::<C>(0.0));
    for (i, &a) in terms.iter().enumerate() {
        if i.count_ones() % 2 == 0 {
            f = f + a;
            for (j, &b) in terms.iter().enumerate() {
                if j.count_ones() % 2 == 1 {
                    num = num + a * b * re(sub.rate[j] - sub.rate[i]);
                }
            }
        } else {
            g = g + a;
        }
    }
    re::<C>(2.0 * 2f64.sqrt()) * num / (f * f + g * g)
}

/// Breather in its expanded sech/tanh form.
pub fn breather<C: ComplexFloat<Real = f64>>(alpha: f64, beta: f64, x1: f64, x2: f64, t: C, x: C) -> C {
    let delta = alpha * alpha - 3.0 * beta * beta;
    let gamma = 3.0 * alpha * alpha - beta * beta;
    let y1 = x + re::<C>(delta) * t + re(x1);
    let y2 = x + re::<C>(gamma) * t + re(x2);
    let (sn, cs) = ((y1 * re(alpha)).sin(), (y1 * re(alpha)).cos());
    let sh = sech(y2 * re(beta));
    let th = (y2 * re(beta)).tanh();
    let r = re::<C>(beta / alpha);
    let num = cs - r * sn * th;
    let den = re::<C>(1.0) + r * r * sn * sn * sh * sh;
    re::<C>(2.0 * 2f64.sqrt() * beta) * sh * num / den
}

/// `sqrt 2 lambda tanh(lambda (x + 2 lambda^2 t))`, defocusing mKdV.
pub fn kink<C: ComplexFloat<Real = f64>>(lambda: f64, t: C, x: C) -> C {
    re::<C>(2f64.sqrt() * lambda) * ((x + re::<C>(2.0 * lambda * lambda) * t) * re(lambda)).tanh()
}

impl SolutionSpec {
    pub fn validate(&self) -> Result<(), PhysicsError> {
        let bad = |m: &str| Err(PhysicsError::InvalidSpec(m.to_string()));
        match self {
            SolutionSpec::Soliton { k, c } => {
                if !(2..=5).contains(k) {
                    return bad("soliton power must be in 2..=5");
                }
                if !(c.is_finite() && *c > 0.0) {
                    return bad("soliton speed must be positive");
                }
            }
            SolutionSpec::KdvNsoliton { speeds, shifts } | SolutionSpec::MkdvNsoliton { speeds, shifts } => {
                if speeds.is_empty() || speeds.len() > 4 {
                    return bad("N-soliton needs 1..=4 speeds");
                }
                if speeds.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
                    return bad("N-soliton speeds must be positive");
                }
                for i in 0..speeds.len() {
                    for j in (i + 1)..speeds.len() {
                        if speeds[i] == speeds[j] {
                            return bad("N-soliton speeds must be distinct");
                        }
                    }
                }
                if !shifts.is_empty() && shifts.len() != speeds.len() {
                    return bad("shift count must match speed count");
                }
            }
            SolutionSpec::Breather { alpha, beta, .. } => {
                if !(*alpha > 0.0 && *beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
                    return bad("breather needs alpha, beta > 0");
                }
            }
            SolutionSpec::Kink { lambda } => {
                if *lambda == 0.0 || !lambda.is_finite() {
                    return bad("kink needs lambda != 0");
                }
            }
        }
        Ok(())
    }

    /// Power `k` and sign of the equation this solution solves.
    pub fn equation(&self) -> (u32, Sign) {
        match self {
            SolutionSpec::Soliton { k, .. } => (*k, Sign::Focusing),
            SolutionSpec::KdvNsoliton { .. } => (2, Sign::Focusing),
            SolutionSpec::MkdvNsoliton { .. } | SolutionSpec::Breather { .. } => (3, Sign::Focusing),
            SolutionSpec::Kink { .. } => (3, Sign::Defocusing),
        }
    }

    /// Evaluates the closed form at a (possibly complex) point.
    pub fn eval_c<C: ComplexFloat<Real = f64>>(&self, t: C, x: C) -> C {
        match self {
            SolutionSpec::Soliton { k, c } => soliton(*k, *c, t, x),
            SolutionSpec::KdvNsoliton { speeds, shifts } => kdv_nsoliton(speeds, shifts, t, x),
            SolutionSpec::MkdvNsoliton { speeds, shifts } => mkdv_nsoliton(speeds, shifts, t, x),
            SolutionSpec::Breather { alpha, beta, x1, x2 } => breather(*alpha, *beta, *x1, *x2, t, x),
            SolutionSpec::Kink { lambda } => kink(*lambda, t, x),
        }
    }

    pub fn eval(&self, t: f64, x: f64) -> f64 {
        self.eval_c(t, x)
    }

    /// `u_t` by complex-step differentiation.
    pub fn u_t(&self, t: f64, x: f64) -> f64 {
        let h = f64::complex_step();
        self.eval_c(Complex::new(t, h), Complex::new(x, 0.0)).im / h
    }

    /// `u_x` by complex-step differentiation.
    pub fn u_x(&self, t: f64, x: f64) -> f64 {
        let h = f64::complex_step();
        self.eval_c(Complex::new(t, 0.0), Complex::new(x, h)).im / h
    }

    /// Rate of exponential decay of `u` (after far-field removal) away from
    /// its core.
    pub fn decay_rate(&self) -> f64 {
        match self {
            SolutionSpec::Soliton { c, .. } => c.sqrt(),
            SolutionSpec::KdvNsoliton { speeds, .. } | SolutionSpec::MkdvNsoliton { speeds, .. } => {
                speeds.iter().fold(f64::INFINITY, |m, c| m.min(c.sqrt()))
            }
            SolutionSpec::Breather { beta, .. } => *beta,
            SolutionSpec::Kink { lambda } => 2.0 * lambda.abs(),
        }
    }

    /// Largest speed of the solution's core.
    pub fn max_speed(&self) -> f64 {
        match self {
            SolutionSpec::Soliton { c, .. } => *c,
            SolutionSpec::KdvNsoliton { speeds, .. } | SolutionSpec::MkdvNsoliton { speeds, .. } => {
                speeds.iter().fold(0.0f64, |m, c| m.max(*c))
            }
            SolutionSpec::Breather { alpha, beta, x1, x2 } => {
                let gamma = 3.0 * alpha * alpha - beta * beta;
                gamma.abs() + x1.abs().max(x2.abs())
            }
            SolutionSpec::Kink { lambda } => 2.0 * lambda * lambda,
        }
    }

    pub fn far_field(&self) -> Option<FarField> {
        match self {
            SolutionSpec::Kink { lambda } => Some(FarField { lambda: *lambda }),
            _ => None,
        }
    }

    /// Nesting factor `m` (a power of two) such that the grid `[-m R, m R)`
    /// holds the solution's tails down to rounding level over `|t| <= t_max`.
    pub fn padding_factor(&self, half_width: f64, t_max: f64) -> usize {
        let shifts = match self {
            SolutionSpec::KdvNsoliton { shifts, .. } | SolutionSpec::MkdvNsoliton { shifts, .. } => {
                shifts.iter().fold(0.0f64, |m, d| m.max(d.abs()))
            }
            _ => 0.0,
        };
        let needed = half_width + self.max_speed() * t_max + shifts + 38.0 / self.decay_rate();
        let mut m = 1;
        while (m as f64) * half_width < needed && m < 64 {
            m *= 2;
        }
        m
    }
}

/// Reference profile `phi(x) = sqrt 2 lambda tanh(lambda x)` removed before
/// spectral differentiation of kink-like fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FarField {
    pub lambda: f64,
}

impl FarField {
    pub fn value(&self, x: f64) -> f64 {
        2f64.sqrt() * self.lambda * (self.lambda * x).tanh()
    }

    /// `phi`, `phi'`, `phi''`, `phi'''`.
    pub fn derivatives(&self, x: f64) -> [f64; 4] {
        let l = self.lambda;
        let th = (l * x).tanh();
        let s = 1.0 - th * th;
        let r2 = 2f64.sqrt();
        [
            r2 * l * th,
            r2 * l * l * s,
            -2.0 * r2 * l.powi(3) * s * th,
            -2.0 * r2 * l.powi(4) * (s * s - 2.0 * s * th * th),
        ]
    }

    /// `D^s phi (x) = sqrt 2 int_0^inf k^s csch(pi k / (2 lambda)) sin(k x) dk`.
    pub fn fractional(&self, s: f64, x: f64) -> f64 {
        if s == 0.0 {
            return self.value(x);
        }
        self.signum() * self.spectral_integral(s, x, f64::sin)
    }

    /// `D^s phi' (x) = sqrt 2 int_0^inf k^{s+1} csch(pi k / (2 lambda)) cos(k x) dk`.
    pub fn fractional_dx(&self, s: f64, x: f64) -> f64 {
        if s == 0.0 {
            return self.derivatives(x)[1];
        }
        self.spectral_integral(s + 1.0, x, f64::cos)
    }

    fn signum(&self) -> f64 {
        self.lambda.signum()
    }

    fn spectral_integral(&self, power: f64, x: f64, wave: fn(f64) -> f64) -> f64 {
        let scale = std::f64::consts::PI / (2.0 * self.lambda.abs());
        let f = |k: f64| k.powf(power) / (scale * k).sinh() * wave(k * x);
        let upper = 42.0 / scale;
        let width = (0.5 / (1.0 + x.abs())).min(upper / 8.0);
        let mut total = 0.0;
        // Geometrically graded panels resolve the k^s behaviour at the origin.
        let mut hi = width;
        for _ in 0..40 {
            let lo = hi * 0.5;
            total += gauss_legendre_16(&f, lo, hi);
            hi = lo;
        }
        let panels = ((upper - width) / width).ceil() as usize;
        let h = (upper - width) / panels as f64;
        for p in 0..panels {
            let lo = width + p as f64 * h;
            total += gauss_legendre_16(&f, lo, lo + h);
        }
        2f64.sqrt() * total
    }
}

const GL16_NODES: [f64; 8] = [
    0.0950125098376374,
    0.2816035507792589,
    0.4580167776572274,
    0.6178762444026438,
    0.7554044083550030,
    0.8656312023878318,
    0.9445750230732326,
    0.9894009349916499,
];
const GL16_WEIGHTS: [f64; 8] = [
    0.1894506104550685,
    0.1826034150449236,
    0.1691565193950025,
    0.1495959888165767,
    0.1246289712555339,
    0.0951585116824928,
    0.0622535239386479,
    0.0271524594117541,
];

fn gauss_legendre_16(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    let mut acc = 0.0;
    for (x, w) in GL16_NODES.iter().zip(&GL16_WEIGHTS) {
        acc += w * (f(mid - half * x) + f(mid + half * x));
    }
    acc * half
}

/// Grid `[-m R, m R)` with `m N` points; its point `j + (m-1) N / 2` is point
/// `j` of the original grid.
pub fn nested_grid(grid: &SpectralGrid<f64>, factor: usize) -> SpectralGrid<f64> {
    SpectralGrid::new(grid.half_width() * factor as f64, grid.n_points() * factor).expect("scaled grid is valid")
}

fn nested_offset(grid: &SpectralGrid<f64>, factor: usize) -> usize {
    (factor - 1) * grid.n_points() / 2
}

/// Spectral jets of an exact solution at time `t` on `grid`.
///
/// Spatial derivatives are spectral on a nested padded grid (with the
/// far-field profile removed for kinks); `u_t` is a complex step.
pub fn exact_jets(spec: &SolutionSpec, t: f64, grid: &SpectralGrid<f64>) -> Vec<Jet<f64>> {
    let m = spec.padding_factor(grid.half_width(), t.abs());
    let big = nested_grid(grid, m);
    let off = nested_offset(grid, m);
    let ops = SpectralOps::new(big);
    let xs = big.points();
    let far = spec.far_field();
    let u: Vec<f64> = xs.iter().map(|&x| spec.eval(t, x)).collect();
    let base: Vec<f64> = match &far {
        Some(ff) => u.iter().zip(&xs).map(|(v, &x)| v - ff.value(x)).collect(),
        None => u.clone(),
    };
    let spectrum = ops.spectrum_of_real(&base);
    let mut d = [vec![0.0; xs.len()], vec![0.0; xs.len()], vec![0.0; xs.len()]];
    for (order, dst) in d.iter_mut().enumerate() {
        let sym = ops.derivative_symbol(order as u32 + 1).expect("order 1..=3");
        ops.synthesize_real(&spectrum, &sym, dst);
    }
    (0..grid.n_points())
        .map(|j| {
            let i = off + j;
            let x = xs[i];
            let mut jet = Jet {
                u: u[i],
                u_t: spec.u_t(t, x),
                u_x: d[0][i],
                u_xx: d[1][i],
                u_xxx: d[2][i],
            };
            if let Some(ff) = &far {
                let p = ff.derivatives(x);
                jet.u_x += p[1];
                jet.u_xx += p[2];
                jet.u_xxx += p[3];
            }
            jet
        })
        .collect()
}

/// Largest `|residual|` of the exact solution over the given times.
pub fn max_exact_residual(spec: &SolutionSpec, model: &ModelSpec, times: &[f64], grid: &SpectralGrid<f64>) -> f64 {
    let mut worst = 0.0f64;
    for &t in times {
        for jet in exact_jets(spec, t, grid) {
            worst = worst.max(residual(model, &jet).abs());
        }
    }
    worst
}

/// Builds `u_x`, `D^s u`, `D^s u_x` from samples of `u` on one row of `grid`,
/// removing the far-field profile first when given.
struct RowDifferentiator {
    ops: SpectralOps<f64>,
    symbols: [crate::spectral::Symbol<f64>; 3],
    far: Option<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)>,
}

impl RowDifferentiator {
    /// `far` holds `phi`, `phi'`, `D^s phi` and `D^s phi'` on the grid.
    fn new(grid: SpectralGrid<f64>, s: f64, far: Option<&FarField>, far_restrict: Option<(&SpectralGrid<f64>, usize)>) -> Self {
        let ops = SpectralOps::new(grid);
        let symbols = derivative_symbols(&ops, s);
        let far = far.map(|ff| {
            let xs = grid.points();
            let phi: Vec<f64> = xs.iter().map(|&x| ff.value(x)).collect();
            let dphi: Vec<f64> = xs.iter().map(|&x| ff.derivatives(x)[1]).collect();
            // The quadratures are only needed where values are kept.
            let keep = match far_restrict {
                Some((small, off)) => off..off + small.n_points(),
                None => 0..xs.len(),
            };
            let mut ds_phi = vec![0.0; xs.len()];
            let mut ds_dphi = vec![0.0; xs.len()];
            for i in keep {
                ds_phi[i] = ff.fractional(s, xs[i]);
                ds_dphi[i] = ff.fractional_dx(s, xs[i]);
            }
            (phi, dphi, ds_phi, ds_dphi)
        });
        Self { ops, symbols, far }
    }

    /// Returns `[u_x, D^s u, D^s u_x]`.
    fn differentiate(&self, u: &[f64]) -> [Vec<f64>; 3] {
        let n = u.len();
        let base: Vec<f64> = match &self.far {
            Some((phi, ..)) => u.iter().zip(phi).map(|(a, b)| a - b).collect(),
            None => u.to_vec(),
        };
        let spectrum = self.ops.spectrum_of_real(&base);
        let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for (dst, sym) in out.iter_mut().zip(&self.symbols) {
            self.ops.synthesize_real(&spectrum, sym, dst);
        }
        if let Some((_, dphi, ds_phi, ds_dphi)) = &self.far {
            for i in 0..n {
                out[0][i] += dphi[i];
                out[1][i] += ds_phi[i];
                out[2][i] += ds_dphi[i];
            }
        }
        out
    }
}

/// Sampler of `u` given on `time_grid x space_grid`, row-major, with
/// spectral derivatives on the same grid.
pub fn sampler_from_values(
    time_grid: TimeGrid<f64>,
    space_grid: SpectralGrid<f64>,
    s: f64,
    values: Vec<f64>,
    far: Option<&FarField>,
) -> Result<FieldSampler<f64>, PhysicsError> {
    let n = space_grid.n_points();
    let diff = RowDifferentiator::new(space_grid, s, far, None);
    let mut mats = [vec![0.0; values.len()], vec![0.0; values.len()], vec![0.0; values.len()]];
    for l in 0..time_grid.n_points() {
        let out = diff.differentiate(&values[l * n..(l + 1) * n]);
        for (dst, src) in mats.iter_mut().zip(out) {
            dst[l * n..(l + 1) * n].copy_from_slice(&src);
        }
    }
    let [ux, ds_u, ds_ux] = mats;
    let mk = |v| SampleMatrix::new(time_grid, space_grid, v).map_err(NormsError::from);
    Ok(FieldSampler::new(s, mk(values)?, mk(ux)?, mk(ds_u)?, mk(ds_ux)?)?)
}

/// Sampler of an exact solution with spectral derivatives from a nested
/// padded grid, plus its `t = 0` slice.
pub fn sample_solution(
    spec: &SolutionSpec,
    s: f64,
    time_grid: &TimeGrid<f64>,
    space_grid: &SpectralGrid<f64>,
) -> Result<FieldSampler<f64>, PhysicsError> {
    spec.validate()?;
    let m = spec.padding_factor(space_grid.half_width(), time_grid.half_length());
    let big = nested_grid(space_grid, m);
    let off = nested_offset(space_grid, m);
    let far = spec.far_field();
    let diff = RowDifferentiator::new(big, s, far.as_ref(), Some((space_grid, off)));
    let xs = big.points();
    let n = space_grid.n_points();
    let rows = time_grid.n_points();
    let mut mats = [
        vec![0.0; rows * n],
        vec![0.0; rows * n],
        vec![0.0; rows * n],
        vec![0.0; rows * n],
    ];
    for (l, t) in time_grid.points().into_iter().enumerate() {
        let u: Vec<f64> = xs.iter().map(|&x| spec.eval(t, x)).collect();
        let [ux, ds_u, ds_ux] = diff.differentiate(&u);
        for (dst, src) in mats.iter_mut().zip([&u, &ux, &ds_u, &ds_ux]) {
            dst[l * n..(l + 1) * n].copy_from_slice(&src[off..off + n]);
        }
    }
    let [u, ux, ds_u, ds_ux] = mats;
    let mk = |v| SampleMatrix::new(*time_grid, *space_grid, v).map_err(NormsError::from);
    let initial: Vec<f64> = space_grid.points().iter().map(|&x| spec.eval(0.0, x)).collect();
    Ok(FieldSampler::new(s, mk(u)?, mk(ux)?, mk(ds_u)?, mk(ds_ux)?)?.with_initial_slice(initial))
}

/// `u(0, x_j)` on the grid.
pub fn initial_data(spec: &SolutionSpec, grid: &SpectralGrid<f64>) -> Vec<f64> {
    grid.points().iter().map(|&x| spec.eval(0.0, x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn focusing(k: u32) -> ModelSpec {
        ModelSpec::with_default_s(k, Sign::Focusing).unwrap()
    }

    #[test]
    fn residual_of_trivial_jets() {
        for k in 2..=5 {
            let m = focusing(k);
            assert_eq!(residual(&m, &Jet { u: 1.7, ..Default::default() }), 0.0);
            assert_eq!(residual(&m, &Jet::<f64>::default()), 0.0);
        }
    }

    #[test]
    fn default_regularity() {
        assert_eq!(ModelSpec::default_s(2).unwrap(), 0.75 + 1e-6);
        assert_eq!(ModelSpec::default_s(4).unwrap(), 1.0 / 12.0);
        assert!(ModelSpec::new(2, Sign::Focusing, 0.75).is_err());
    }

    #[test]
    fn soliton_peaks() {
        assert_eq!(soliton(2, 1.0, 0.0, 0.0), 1.5);
        for t in [-2.0, 0.3, 5.0] {
            assert_relative_eq!(soliton(3, 1.0, t, t), 2f64.sqrt(), max_relative = 1e-15);
        }
    }

    #[test]
    fn soliton_is_a_travelling_wave() {
        for i in 0..100 {
            let t = (i as f64 * 0.37).sin() * 3.0;
            let x = (i as f64 * 0.91).cos() * 15.0;
            for (k, c) in [(2, 1.0), (4, 3.0), (5, 0.5)] {
                assert_eq!(soliton(k, c, t, x), soliton(k, c, 0.0, x - c * t));
            }
        }
    }

    #[test]
    fn kdv_one_soliton_reduces_to_power_two_soliton() {
        for i in 0..100 {
            let (t, x) = ((i as f64) * 0.05 - 2.5, (i as f64) * 0.3 - 15.0);
            let direct = 1.5 * 1.3 / (0.5 * 1.3f64.sqrt() * (x - 1.3 * t)).cosh().powi(2);
            assert_relative_eq!(kdv_nsoliton(&[1.3], &[], t, x), direct, max_relative = 1e-12, epsilon = 1e-300);
            assert_relative_eq!(kdv_nsoliton(&[1.3], &[], t, x), soliton(2, 1.3, t, x), max_relative = 1e-12, epsilon = 1e-300);
        }
    }

    #[test]
    fn mkdv_one_soliton_reduces_to_power_three_soliton() {
        for i in 0..100 {
            let (t, x) = ((i as f64) * 0.05 - 2.5, (i as f64) * 0.3 - 15.0);
            assert_relative_eq!(mkdv_nsoliton(&[0.7], &[], t, x), soliton(3, 0.7, t, x), max_relative = 1e-12, epsilon = 1e-300);
        }
    }

    #[test]
    fn separated_two_soliton_is_a_superposition() {
        // At t = -30 the two cores sit far apart; each is a shifted single soliton.
        let (c1, c2) = (1.0f64, 2.0f64);
        let a12 = ((c1.sqrt() - c2.sqrt()) / (c1.sqrt() + c2.sqrt())).powi(2);
        let t = -30.0;
        let mut worst = 0.0f64;
        for i in 0..2000 {
            let x = -100.0 + i as f64 * 0.05;
            // Before the collision the slower soliton carries the ln A12 shift.
            let u1 = soliton(2, c1, t, x + a12.ln() / c1.sqrt());
            let u2 = soliton(2, c2, t, x);
            worst = worst.max((kdv_nsoliton(&[c1, c2], &[], t, x) - u1 - u2).abs());
        }
        assert!(worst <= 1e-6, "superposition gap {worst}");
    }

    #[test]
    fn permuting_speeds_leaves_field_unchanged() {
        for i in 0..50 {
            let (t, x) = ((i as f64) * 0.1 - 2.5, (i as f64) * 0.7 - 17.0);
            let a = kdv_nsoliton(&[0.5, 1.5, 2.0], &[0.1, -0.2, 0.3], t, x);
            let b = kdv_nsoliton(&[2.0, 0.5, 1.5], &[0.3, 0.1, -0.2], t, x);
            assert_relative_eq!(a, b, max_relative = 1e-12, epsilon = 1e-200);
            let a = mkdv_nsoliton(&[0.1, 1.0, 2.0], &[], t, x);
            let b = mkdv_nsoliton(&[1.0, 2.0, 0.1], &[], t, x);
            assert_relative_eq!(a, b, max_relative = 1e-12, epsilon = 1e-200);
        }
    }

    #[test]
    fn breather_at_origin() {
        for alpha in [0.5, 1.0, 1.3] {
            assert_relative_eq!(breather(alpha, 0.5, 0.0, 0.0, 0.0, 0.0), 2.0 * 2f64.sqrt() * 0.5, max_relative = 1e-15);
        }
    }

    /// `2 sqrt 2 q_x / (1 + q^2)` for the arctan argument `q`, with `q_x` by
    /// complex step.
    fn breather_potential_dx(alpha: f64, beta: f64, x1: f64, x2: f64, t: f64, x: f64, h: f64) -> f64 {
        let q = |x: Complex<f64>| {
            let t = Complex::new(t, 0.0);
            let y1 = x + t * (alpha * alpha - 3.0 * beta * beta) + x1;
            let y2 = x + t * (3.0 * alpha * alpha - beta * beta) + x2;
            (y1 * alpha).sin() * (beta / alpha) / (y2 * beta).cosh()
        };
        let q0 = q(Complex::new(x, 0.0)).re;
        let qx = q(Complex::new(x, h)).im / h;
        2.0 * 2f64.sqrt() * qx / (1.0 + q0 * q0)
    }

    #[test]
    fn breather_forms_agree() {
        let h = 1e-20;
        for i in 0..1000 {
            let t = ((i * 7919) % 1000) as f64 / 250.0 - 2.0;
            let x = ((i * 104729) % 1000) as f64 / 25.0 - 20.0;
            for (a, b) in [(1.0, 0.5), (0.9, 0.3)] {
                let expanded = breather(a, b, 0.2, -0.4, t, x);
                let from_potential = breather_potential_dx(a, b, 0.2, -0.4, t, x, h);
                assert!(
                    (expanded - from_potential).abs() <= 1e-10 * expanded.abs().max(1e-6),
                    "t={t} x={x}: {expanded} vs {from_potential}"
                );
            }
        }
    }

    #[test]
    fn kink_limits() {
        assert_eq!(kink(1.0, 0.0, 0.0), 0.0);
        assert_relative_eq!(kink(1.5, 0.0, 80.0), 2f64.sqrt() * 1.5, max_relative = 1e-15);
        assert_relative_eq!(kink(1.5, 0.0, -80.0), -2f64.sqrt() * 1.5, max_relative = 1e-15);
    }

    #[test]
    fn mkdv_soliton_residual_is_spectrally_small() {
        let grid = SpectralGrid::new(20.0, 1024).unwrap();
        let spec = SolutionSpec::Soliton { k: 3, c: 1.0 };
        let r = max_exact_residual(&spec, &focusing(3), &[-3.0, 0.0, 2.0], &grid);
        assert!(r <= 1e-6, "residual {r}");
    }

    #[test]
    fn far_field_fractional_derivative() {
        let ff = FarField { lambda: 1.0 };
        for x in [-7.0, -1.0, 0.3, 2.0] {
            assert_relative_eq!(ff.fractional(1e-12, x), ff.value(x), max_relative = 1e-8, epsilon = 1e-10);
        }
        // d/dx of D^s phi must match D^s phi'.
        let s = 0.25;
        for x in [-10.7, -3.0, 0.0, 0.4, 6.0] {
            let h = 1e-3;
            let fd = (ff.fractional(s, x - 2.0 * h) - 8.0 * ff.fractional(s, x - h) + 8.0 * ff.fractional(s, x + h)
                - ff.fractional(s, x + 2.0 * h))
                / (12.0 * h);
            assert!((fd - ff.fractional_dx(s, x)).abs() <= 1e-8, "x={x}: {fd} vs {}", ff.fractional_dx(s, x));
        }
        // Far from the periodic images, D^s phi' agrees with its spectral form
        // up to the algebraic tail of the images.
        let grid = SpectralGrid::new(400.0, 65536).unwrap();
        let ops = SpectralOps::new(grid);
        let xs = grid.points();
        let dphi: Vec<f64> = xs.iter().map(|&x| ff.derivatives(x)[1]).collect();
        let mut ds_dphi = vec![0.0; xs.len()];
        ops.apply_real(&ops.fractional_symbol(s), &dphi, &mut ds_dphi);
        for j in [30000usize, 32768, 34000] {
            let x = xs[j];
            assert!((ff.fractional_dx(s, x) - ds_dphi[j]).abs() <= 5e-3, "x={x}: {} vs {}", ff.fractional_dx(s, x), ds_dphi[j]);
        }
    }

    #[test]
    fn sampled_derivatives_match_complex_step() {
        let spec = SolutionSpec::Breather { alpha: 1.0, beta: 0.5, x1: 0.0, x2: 0.0 };
        let tg = TimeGrid::new(2.0, 5).unwrap();
        let sg = SpectralGrid::new(20.0, 256).unwrap();
        let fs = sample_solution(&spec, 0.25, &tg, &sg).unwrap();
        let ux = fs.get(crate::norms::Quantity::Ux);
        let mut worst = 0.0f64;
        for (l, t) in tg.points().into_iter().enumerate() {
            for (j, x) in sg.points().into_iter().enumerate() {
                worst = worst.max((ux.values()[l * 256 + j] - spec.u_x(t, x)).abs());
            }
        }
        assert!(worst <= 1e-9, "u_x error {worst}");
    }

    #[test]
    fn spec_validation() {
        assert!(SolutionSpec::Soliton { k: 6, c: 1.0 }.validate().is_err());
        assert!(SolutionSpec::KdvNsoliton { speeds: vec![1.0, 1.0], shifts: vec![] }.validate().is_err());
        assert!(SolutionSpec::Breather { alpha: 1.0, beta: 0.0, x1: 0.0, x2: 0.0 }.validate().is_err());
        assert!(SolutionSpec::Kink { lambda: 0.0 }.validate().is_err());
        assert!(SolutionSpec::MkdvNsoliton { speeds: vec![0.3, 1.8], shifts: vec![] }.validate().is_ok());
    }

    #[test]
    fn spec_serializes_with_family_tag() {
        let spec = SolutionSpec::Breather { alpha: 1.0, beta: 0.5, x1: 0.0, x2: 0.0 };
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"family\":\"breather\""));
        let back: SolutionSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
