//! Fully connected network `(t, x) -> u` with a trainable Gabor wavelet
//! activation `sin(w z + b) exp(-(s z)^2)` per hidden layer.
//!
//! Derivatives in `x` up to third order and the first derivative in `t` are
//! propagated as truncated Taylor jets, so they are exact up to rounding.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{SpectralGrid, TimeGrid};
use crate::scalar::{lit, Real, Strided, StridedMut};

/// Jet slots: value, `d/dt`, `d/dx`, `d^2/dx^2`, `d^3/dx^3`.
pub const JET_LEN: usize = 5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetworkError {
    #[error("architecture needs at least one hidden layer with one neuron")]
    Degenerate,
    #[error("parameter vector has length {found}, architecture needs {expected}")]
    Length { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden_layers: usize,
    pub neurons: usize,
}

impl Architecture {
    pub fn new(hidden_layers: usize, neurons: usize) -> Result<Self, NetworkError> {
        if hidden_layers == 0 || neurons == 0 {
            return Err(NetworkError::Degenerate);
        }
        Ok(Self { hidden_layers, neurons })
    }

    /// `(fan_in, fan_out)` of every dense layer, input first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = vec![(2, self.neurons)];
        for _ in 1..self.hidden_layers {
            shapes.push((self.neurons, self.neurons));
        }
        shapes.push((self.neurons, 1));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layout().len
    }

    pub(crate) fn layout(&self) -> Layout {
        let mut offset = 0;
        let mut layers = Vec::new();
        let mut wavelets = Vec::new();
        let shapes = self.layer_shapes();
        for (l, &(fan_in, fan_out)) in shapes.iter().enumerate() {
            let w = offset..offset + fan_in * fan_out;
            offset = w.end;
            let b = offset..offset + fan_out;
            offset = b.end;
            layers.push(LayerSlots { fan_in, fan_out, w, b });
            if l < self.hidden_layers {
                wavelets.push(offset);
                offset += 3;
            }
        }
        Layout {
            layers,
            wavelets,
            len: offset,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerSlots {
    pub fan_in: usize,
    pub fan_out: usize,
    pub w: Range<usize>,
    pub b: Range<usize>,
}

/// Offsets of every parameter block inside the flat vector.
///
/// Order: weights (row-major, `fan_out x fan_in`), bias, then the wavelet
/// triple `(w0, b0, s0)` of that layer if it is hidden.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub layers: Vec<LayerSlots>,
    pub wavelets: Vec<usize>,
    pub len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveletTriple<T> {
    pub w0: T,
    pub b0: T,
    pub s0: T,
}

/// Affine map applied to `(t, x)` before the first layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub t_scale: f64,
    pub t_shift: f64,
    pub x_scale: f64,
    pub x_shift: f64,
}

impl Default for InputScaling {
    fn default() -> Self {
        Self {
            t_scale: 1.0,
            t_shift: 0.0,
            x_scale: 1.0,
            x_shift: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Jet<T> {
    pub u: T,
    pub u_t: T,
    pub u_x: T,
    pub u_xx: T,
    pub u_xxx: T,
}

impl<T: Real> Jet<T> {
    pub fn as_array(&self) -> [T; JET_LEN] {
        [self.u, self.u_t, self.u_x, self.u_xx, self.u_xxx]
    }

    pub fn from_array(a: [T; JET_LEN]) -> Self {
        Self {
            u: a[0],
            u_t: a[1],
            u_x: a[2],
            u_xx: a[3],
            u_xxx: a[4],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

/// Network parameters stored as one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    arch: Architecture,
    scaling: InputScaling,
    flat: Vec<T>,
}

impl<T: Real> NetworkParams<T> {
    /// Glorot-uniform weights, zero biases, `w0 = 1`, `s0 = 1/sqrt 2`,
    /// `b0 ~ U(-pi/2, pi/2)` drawn independently per layer.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let layout = arch.layout();
        let mut flat = vec![T::zero(); layout.len];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (l, slots) in layout.layers.iter().enumerate() {
            let limit = (6.0 / (slots.fan_in + slots.fan_out) as f64).sqrt();
            for v in &mut flat[slots.w.clone()] {
                *v = lit(rng.gen_range(-limit..limit));
            }
            if let Some(&off) = layout.wavelets.get(l) {
                let half_pi = std::f64::consts::FRAC_PI_2;
                flat[off] = T::one();
                flat[off + 1] = lit(rng.gen_range(-half_pi..half_pi));
                flat[off + 2] = lit(std::f64::consts::FRAC_1_SQRT_2);
            }
        }
        Self {
            arch,
            scaling: InputScaling::default(),
            flat,
        }
    }

    pub fn from_flat(arch: Architecture, flat: Vec<T>) -> Result<Self, NetworkError> {
        let expected = arch.param_count();
        if flat.len() != expected {
            return Err(NetworkError::Length {
                expected,
                found: flat.len(),
            });
        }
        Ok(Self {
            arch,
            scaling: InputScaling::default(),
            flat,
        })
    }

    pub fn with_scaling(mut self, scaling: InputScaling) -> Self {
        self.scaling = scaling;
        self
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn scaling(&self) -> InputScaling {
        self.scaling
    }

    pub fn flat(&self) -> &[T] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [T] {
        &mut self.flat
    }

    pub fn into_flat(self) -> Vec<T> {
        self.flat
    }

    pub fn layer_count(&self) -> usize {
        self.arch.hidden_layers + 1
    }

    /// Weights of dense layer `l`, row-major `fan_out x fan_in`.
    pub fn weights(&self, l: usize) -> &[T] {
        &self.flat[self.arch.layout().layers[l].w.clone()]
    }

    pub fn bias(&self, l: usize) -> &[T] {
        &self.flat[self.arch.layout().layers[l].b.clone()]
    }

    pub fn wavelet(&self, l: usize) -> WaveletTriple<T> {
        let off = self.arch.layout().wavelets[l];
        WaveletTriple {
            w0: self.flat[off],
            b0: self.flat[off + 1],
            s0: self.flat[off + 2],
        }
    }

    pub fn wavelets(&self) -> Vec<WaveletTriple<T>> {
        (0..self.arch.hidden_layers).map(|l| self.wavelet(l)).collect()
    }
}

/// Physicists' Hermite polynomials `H_0..H_4` at `u`.
fn hermite<T: Real>(u: T) -> [T; 5] {
    let two: T = lit(2.0);
    let mut h = [T::one(), two * u, T::zero(), T::zero(), T::zero()];
    for n in 1..4 {
        h[n + 1] = two * u * h[n] - two * lit::<T>(n as f64) * h[n - 1];
    }
    h
}

/// Activation derivatives at one pre-activation.
///
/// `sigma[m]` is the `m`-th derivative in `z`; `dw`, `db`, `ds` hold the
/// parameter derivatives of `sigma[0..4]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveletDerivs<T> {
    pub sigma: [T; 5],
    pub dw: [T; 4],
    pub db: [T; 4],
    pub ds: [T; 4],
}

const BINOM: [[f64; 5]; 5] = [
    [1.0, 0.0, 0.0, 0.0, 0.0],
    [1.0, 1.0, 0.0, 0.0, 0.0],
    [1.0, 2.0, 1.0, 0.0, 0.0],
    [1.0, 3.0, 3.0, 1.0, 0.0],
    [1.0, 4.0, 6.0, 4.0, 1.0],
];

/// Closed-form derivatives of `sin(w z + b) exp(-(s z)^2)`.
///
/// Uses `g^(i) = w^i sin(theta + i pi/2)` and
/// `h^(j) = (-s)^j H_j(s z) exp(-(s z)^2)` with Leibniz's rule.
pub fn wavelet_derivs<T: Real>(z: T, tr: &WaveletTriple<T>) -> WaveletDerivs<T> {
    let theta = tr.w0 * z + tr.b0;
    let (sin, cos) = theta.sin_cos();
    let u = tr.s0 * z;
    wavelet_derivs_from(z, tr, sin, cos, (-u * u).exp())
}

/// `sigma^(m)` for `m = 0..4` by Leibniz's rule.
#[inline]
fn leibniz<T: Real>(z: T, tr: &WaveletTriple<T>, sin: T, cos: T, gauss: T) -> [T; 5] {
    let (w, s) = (tr.w0, tr.s0);
    let hm = hermite(s * z);
    // sin(theta + i pi/2) cycles through sin, cos, -sin, -cos.
    let trig = [sin, cos, -sin, -cos, sin];
    let mut g = [T::zero(); 5];
    let mut h = [T::zero(); 5];
    let (mut wp, mut sp) = (T::one(), gauss);
    for i in 0..5 {
        g[i] = wp * trig[i];
        h[i] = sp * hm[i];
        wp = wp * w;
        sp = -sp * s;
    }
    let mut sigma = [T::zero(); 5];
    for m in 0..5 {
        for i in 0..=m {
            let c: T = lit(BINOM[m][i]);
            sigma[m] = sigma[m] + c * g[i] * h[m - i];
        }
    }
    sigma
}

/// The parameter derivatives follow from `d_b sigma` (the same product with
/// the phase advanced by `pi/2`), `d_w sigma = z d_b sigma` and
/// `d_s sigma = -2 s z^2 sigma`.
#[inline]
pub(crate) fn wavelet_derivs_from<T: Real>(z: T, tr: &WaveletTriple<T>, sin: T, cos: T, gauss: T) -> WaveletDerivs<T> {
    let sigma = leibniz(z, tr, sin, cos, gauss);
    let shifted = leibniz(z, tr, cos, -sin, gauss);
    let db = [shifted[0], shifted[1], shifted[2], shifted[3]];
    let (two, z2, m2s): (T, T, T) = (lit(2.0), z * z, lit::<T>(-2.0) * tr.s0);
    let mut dw = [T::zero(); 4];
    let mut ds = [T::zero(); 4];
    for m in 0..4 {
        let mf: T = lit(m as f64);
        dw[m] = z * db[m];
        let mut acc = z2 * sigma[m];
        if m >= 1 {
            dw[m] = dw[m] + mf * db[m - 1];
            acc = acc + two * mf * z * sigma[m - 1];
        }
        if m >= 2 {
            acc = acc + mf * (mf - T::one()) * sigma[m - 2];
        }
        ds[m] = m2s * acc;
    }
    WaveletDerivs { sigma, dw, db, ds }
}

/// `[sigma, sigma', sigma'', sigma''']` truncated after `order`.
pub fn activation_jet<T: Real>(x: T, triple: &WaveletTriple<T>, order: usize) -> Vec<T> {
    let order = order.min(3);
    wavelet_derivs(x, triple).sigma[..=order].to_vec()
}

/// Batch of `points` evaluations with `features` each and `comps` jet slots.
///
/// Layout is `[comp][point][feature]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JetBatch<T> {
    pub comps: usize,
    pub points: usize,
    pub features: usize,
    pub data: Vec<T>,
}

impl<T: Real> JetBatch<T> {
    pub fn zeros(comps: usize, points: usize, features: usize) -> Self {
        Self {
            comps,
            points,
            features,
            data: vec![T::zero(); comps * points * features],
        }
    }

    /// Input features `(t, x)` after scaling, with seed jets when `comps = 5`.
    pub fn inputs(points: &[(T, T)], scaling: &InputScaling, comps: usize) -> Self {
        let mut b = Self::zeros(comps, points.len(), 2);
        let (ts, tb, xs, xb): (T, T, T, T) = (
            lit(scaling.t_scale),
            lit(scaling.t_shift),
            lit(scaling.x_scale),
            lit(scaling.x_shift),
        );
        for (p, &(t, x)) in points.iter().enumerate() {
            b.data[2 * p] = ts * t + tb;
            b.data[2 * p + 1] = xs * x + xb;
            if comps == JET_LEN {
                b.data[(points.len() + p) * 2] = ts;
                b.data[(2 * points.len() + p) * 2 + 1] = xs;
            }
        }
        b
    }
}

/// `out[c][p] = W a[c][p] (+ bias on the value slot)`.
pub(crate) fn dense_forward<T: Real>(w: &[T], bias: &[T], input: &JetBatch<T>, fan_out: usize) -> JetBatch<T> {
    let fan_in = input.features;
    let rows = input.comps * input.points;
    let mut out = JetBatch::zeros(input.comps, input.points, fan_out);
    T::gemm(
        (rows, fan_in, fan_out),
        T::one(),
        Strided::row_major(&input.data, fan_in),
        Strided::transposed(w, fan_in),
        T::zero(),
        StridedMut::row_major(&mut out.data, fan_out),
    );
    for dst in out.data[..input.points * fan_out].chunks_exact_mut(fan_out) {
        for (d, &b) in dst.iter_mut().zip(bias) {
            *d = *d + b;
        }
    }
    out
}

/// Per-element `sin(theta)`, `cos(theta)`, `exp(-(s z)^2)` cached for the
/// backward pass.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct WaveletCache<T> {
    pub sin: Vec<T>,
    pub cos: Vec<T>,
    pub gauss: Vec<T>,
}

/// Pushes a jet batch through the activation.
pub(crate) fn wavelet_forward<T: Real>(tr: &WaveletTriple<T>, z: &JetBatch<T>) -> (JetBatch<T>, WaveletCache<T>) {
    let pf = z.points * z.features;
    let mut out = JetBatch::zeros(z.comps, z.points, z.features);
    let mut cache = WaveletCache {
        sin: Vec::with_capacity(pf),
        cos: Vec::with_capacity(pf),
        gauss: Vec::with_capacity(pf),
    };
    for e in 0..pf {
        let z0 = z.data[e];
        let (sin, cos) = (tr.w0 * z0 + tr.b0).sin_cos();
        let u = tr.s0 * z0;
        let gauss = (-u * u).exp();
        cache.sin.push(sin);
        cache.cos.push(cos);
        cache.gauss.push(gauss);
        if z.comps == 1 {
            out.data[e] = sin * gauss;
            continue;
        }
        let s = &leibniz(z0, tr, sin, cos, gauss);
        let (zt, zx, zxx, zxxx) = (z.data[pf + e], z.data[2 * pf + e], z.data[3 * pf + e], z.data[4 * pf + e]);
        let three: T = lit(3.0);
        out.data[e] = s[0];
        out.data[pf + e] = s[1] * zt;
        out.data[2 * pf + e] = s[1] * zx;
        out.data[3 * pf + e] = s[2] * zx * zx + s[1] * zxx;
        out.data[4 * pf + e] = s[3] * zx * zx * zx + three * s[2] * zx * zxx + s[1] * zxxx;
    }
    (out, cache)
}

/// Evaluates the network on a list of points; `comps` is 1 (values) or 5 (jets).
pub fn eval_batch<T: Real>(params: &NetworkParams<T>, points: &[(T, T)], comps: usize) -> JetBatch<T> {
    assert!(comps == 1 || comps == JET_LEN);
    let layout = params.arch.layout();
    let mut act = JetBatch::inputs(points, &params.scaling, comps);
    for (l, slots) in layout.layers.iter().enumerate() {
        let z = dense_forward(&params.flat[slots.w.clone()], &params.flat[slots.b.clone()], &act, slots.fan_out);
        act = if l < params.arch.hidden_layers {
            wavelet_forward(&params.wavelet(l), &z).0
        } else {
            z
        };
    }
    act
}

/// `u_theta(t, x)`.
pub fn forward<T: Real>(params: &NetworkParams<T>, t: T, x: T) -> T {
    eval_batch(params, &[(t, x)], 1).data[0]
}

/// Value and derivatives `(u, u_t, u_x, u_xx, u_xxx)` at one point.
pub fn forward_jet<T: Real>(params: &NetworkParams<T>, t: T, x: T) -> Jet<T> {
    let b = eval_batch(params, &[(t, x)], JET_LEN);
    Jet::from_array([b.data[0], b.data[1], b.data[2], b.data[3], b.data[4]])
}

/// Collocation points in row-major order: time index outer, space inner.
pub fn grid_points<T: Real>(time_grid: &TimeGrid<T>, space_grid: &SpectralGrid<T>) -> Vec<(T, T)> {
    let xs = space_grid.points();
    let mut pts = Vec::with_capacity(time_grid.n_points() * xs.len());
    for t in time_grid.points() {
        pts.extend(xs.iter().map(|&x| (t, x)));
    }
    pts
}

/// Jets at every grid point, row-major (time outer).
pub fn forward_grid<T: Real>(params: &NetworkParams<T>, time_grid: &TimeGrid<T>, space_grid: &SpectralGrid<T>) -> Vec<Jet<T>> {
    let pts = grid_points(time_grid, space_grid);
    let b = eval_batch(params, &pts, JET_LEN);
    let p = pts.len();
    (0..p)
        .map(|i| Jet::from_array([b.data[i], b.data[p + i], b.data[2 * p + i], b.data[3 * p + i], b.data[4 * p + i]]))
        .collect()
}

/// Values at every grid point, row-major (time outer).
pub fn forward_values_grid<T: Real>(params: &NetworkParams<T>, time_grid: &TimeGrid<T>, space_grid: &SpectralGrid<T>) -> Vec<T> {
    eval_batch(params, &grid_points(time_grid, space_grid), 1).data
}

/// Values at `t` on every spatial grid point.
pub fn forward_slice<T: Real>(params: &NetworkParams<T>, t: T, space_grid: &SpectralGrid<T>) -> Vec<T> {
    let pts: Vec<(T, T)> = space_grid.points().into_iter().map(|x| (t, x)).collect();
    eval_batch(params, &pts, 1).data
}
