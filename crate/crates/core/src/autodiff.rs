//! Array-level reverse-mode differentiation of a scalar loss with respect to
//! the flat network parameter vector.
//!
//! Nodes hold whole tensors (`comps x rows x cols`), so a tape for a full
//! training loss has a few dozen nodes. Linear spectral operators are
//! differentiated through their adjoint multipliers instead of through the
//! FFT butterflies.

use std::sync::Arc;

use num_complex::Complex;

use crate::network::{dense_forward, wavelet_derivs_from, wavelet_forward, Architecture, InputScaling, JetBatch, WaveletCache, WaveletTriple, JET_LEN};
use crate::quadrature::MixedNorm;
use crate::scalar::{count, lit, Real, Strided, StridedMut};
use crate::spectral::{SpectralOps, Symbol};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Dense tensor with `comps` jet slots over a `rows x cols` block.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub comps: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(comps: usize, rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), comps * rows * cols, "tensor shape");
        Self { comps, rows, cols, data }
    }

    pub fn scalar(v: T) -> Self {
        Self::new(1, 1, 1, vec![v])
    }

    pub fn zeros_like(&self) -> Self {
        Self::new(self.comps, self.rows, self.cols, vec![T::zero(); self.data.len()])
    }

    fn from_batch(b: JetBatch<T>) -> Self {
        Self::new(b.comps, b.points, b.features, b.data)
    }

    fn as_batch(&self) -> JetBatch<T> {
        JetBatch {
            comps: self.comps,
            points: self.rows,
            features: self.cols,
            data: self.data.clone(),
        }
    }
}

#[derive(Debug, Clone)]
enum Op<T: Real> {
    Constant,
    Params,
    Dense {
        input: Var,
        w_off: usize,
        b_off: usize,
        fan_out: usize,
    },
    Wavelet {
        input: Var,
        off: usize,
        cache: WaveletCache<T>,
    },
    Residual {
        input: Var,
        k: u32,
        mu: T,
    },
    Select {
        input: Var,
        comp: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, T),
    Spectral {
        input: Var,
        ops: Arc<SpectralOps<T>>,
        symbols: Arc<Vec<Symbol<T>>>,
    },
    Norm {
        input: Var,
        norm: MixedNorm,
    },
    L2(Var),
    Dot(Var, Var),
    Sum(Vec<(Var, T)>),
}

#[derive(Debug, Clone)]
struct Node<T: Real> {
    op: Op<T>,
    value: Tensor<T>,
}

/// Recorded computation with one flat parameter vector as its only
/// differentiable leaf.
#[derive(Debug, Clone)]
pub struct Tape<T: Real> {
    theta: Vec<T>,
    nodes: Vec<Node<T>>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("loss is not finite: {0}")]
    NonFinitePrimal(f64),
    #[error("gradient contains non-finite entries")]
    NonFiniteAdjoint,
    #[error("loss node is not a scalar")]
    NotScalar,
}

impl<T: Real> Tape<T> {
    pub fn new(theta: Vec<T>) -> Self {
        Self { theta, nodes: Vec::new() }
    }

    pub fn theta(&self) -> &[T] {
        &self.theta
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data[0]
    }

    fn push(&mut self, op: Op<T>) -> Var {
        let value = self.eval(&op);
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn push_with_value(&mut self, op: Op<T>, value: Tensor<T>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push_with_value(Op::Constant, t)
    }

    /// The parameter vector itself as a `1 x 1 x len` tensor.
    pub fn params(&mut self) -> Var {
        self.push(Op::Params)
    }

    /// Records the full network on `points`; `comps` is 1 (values) or 5 (jets).
    /// Returns a `comps x points x 1` tensor.
    pub fn network(&mut self, arch: Architecture, scaling: &InputScaling, points: &[(T, T)], comps: usize) -> Var {
        assert!(comps == 1 || comps == JET_LEN);
        let layout = arch.layout();
        assert_eq!(layout.len, self.theta.len(), "parameter vector does not match architecture");
        let mut act = self.constant(Tensor::from_batch(JetBatch::inputs(points, scaling, comps)));
        for (l, slots) in layout.layers.iter().enumerate() {
            act = self.push(Op::Dense {
                input: act,
                w_off: slots.w.start,
                b_off: slots.b.start,
                fan_out: slots.fan_out,
            });
            if let Some(&off) = layout.wavelets.get(l) {
                let z = self.value(act).as_batch();
                let (out, cache) = wavelet_forward(&self.triple(off), &z);
                act = self.push_with_value(Op::Wavelet { input: act, off, cache }, Tensor::from_batch(out));
            }
        }
        act
    }

    /// `u_t + u_xxx - mu k u^{k-1} u_x` from a jet tensor, reshaped to `rows x cols`.
    pub fn residual(&mut self, jets: Var, k: u32, mu: T, rows: usize, cols: usize) -> Var {
        let v = self.push(Op::Residual { input: jets, k, mu });
        self.nodes[v.0].value.rows = rows;
        self.nodes[v.0].value.cols = cols;
        assert_eq!(rows * cols, self.nodes[v.0].value.data.len());
        v
    }

    /// Jet slot `comp`, reshaped to `rows x cols`.
    pub fn select(&mut self, jets: Var, comp: usize, rows: usize, cols: usize) -> Var {
        let v = self.push(Op::Select { input: jets, comp });
        self.nodes[v.0].value.rows = rows;
        self.nodes[v.0].value.cols = cols;
        assert_eq!(rows * cols, self.nodes[v.0].value.data.len());
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.push(Op::Scale(a, c))
    }

    /// Applies a multiplier along each row.
    ///
    /// With one symbol it is used for every row. With several, row `l` uses
    /// symbol `l`; a single-row input is then broadcast to one output row per
    /// symbol. Symbols must be conjugate-symmetric.
    pub fn spectral(&mut self, input: Var, ops: Arc<SpectralOps<T>>, symbols: Arc<Vec<Symbol<T>>>) -> Var {
        self.push(Op::Spectral { input, ops, symbols })
    }

    pub fn mixed_norm(&mut self, input: Var, norm: MixedNorm) -> Var {
        self.push(Op::Norm { input, norm })
    }

    /// `sqrt(mean |f|^2)` over all entries.
    pub fn l2(&mut self, input: Var) -> Var {
        self.push(Op::L2(input))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Dot(a, b))
    }

    /// `sum_i c_i v_i` over scalars.
    pub fn sum(&mut self, terms: &[(Var, T)]) -> Var {
        self.push(Op::Sum(terms.to_vec()))
    }

    fn triple(&self, off: usize) -> WaveletTriple<T> {
        WaveletTriple {
            w0: self.theta[off],
            b0: self.theta[off + 1],
            s0: self.theta[off + 2],
        }
    }

    fn eval(&self, op: &Op<T>) -> Tensor<T> {
        let val = |v: &Var| &self.nodes[v.0].value;
        match op {
            Op::Constant => unreachable!("constants carry their value"),
            Op::Params => Tensor::new(1, 1, self.theta.len(), self.theta.clone()),
            Op::Dense {
                input,
                w_off,
                b_off,
                fan_out,
            } => {
                let a = val(input);
                let w = &self.theta[*w_off..*w_off + a.cols * fan_out];
                let b = &self.theta[*b_off..*b_off + fan_out];
                Tensor::from_batch(dense_forward(w, b, &a.as_batch(), *fan_out))
            }
            Op::Wavelet { input, off, .. } => Tensor::from_batch(wavelet_forward(&self.triple(*off), &val(input).as_batch()).0),
            Op::Residual { input, k, mu } => {
                let j = val(input);
                assert_eq!(j.comps, JET_LEN);
                let p = j.rows * j.cols;
                let kk: T = count(*k as usize);
                let data = (0..p)
                    .map(|i| {
                        let (u, ut, ux, uxxx) = (j.data[i], j.data[p + i], j.data[2 * p + i], j.data[4 * p + i]);
                        ut + uxxx - *mu * kk * u.powi(*k as i32 - 1) * ux
                    })
                    .collect();
                Tensor::new(1, p, 1, data)
            }
            Op::Select { input, comp } => {
                let j = val(input);
                let p = j.rows * j.cols;
                Tensor::new(1, p, 1, j.data[comp * p..(comp + 1) * p].to_vec())
            }
            Op::Add(a, b) => zip(val(a), val(b), |x, y| x + y),
            Op::Sub(a, b) => zip(val(a), val(b), |x, y| x - y),
            Op::Scale(a, c) => {
                let a = val(a);
                Tensor::new(a.comps, a.rows, a.cols, a.data.iter().map(|x| *x * *c).collect())
            }
            Op::Spectral { input, ops, symbols } => spectral_forward(val(input), ops, symbols),
            Op::Norm { input, norm } => {
                let a = val(input);
                assert_eq!(a.comps, 1);
                Tensor::scalar(norm.eval(&a.data, a.rows, a.cols, None))
            }
            Op::L2(a) => Tensor::scalar(crate::quadrature::j_l2_unchecked(&val(a).data, None)),
            Op::Dot(a, b) => {
                let prods: Vec<T> = val(a).data.iter().zip(&val(b).data).map(|(x, y)| *x * *y).collect();
                Tensor::scalar(crate::scalar::pairwise_sum(&prods))
            }
            Op::Sum(terms) => {
                let mut acc = T::zero();
                for (v, c) in terms {
                    acc = acc + *c * val(v).data[0];
                }
                Tensor::scalar(acc)
            }
        }
    }

    /// Re-executes every recorded operation and returns the value of `out`.
    ///
    /// Deterministic kernels make this bit-identical to the recorded value.
    pub fn replay(&self, out: Var) -> T {
        let mut fresh = Tape {
            theta: self.theta.clone(),
            nodes: Vec::with_capacity(self.nodes.len()),
        };
        for node in &self.nodes {
            match &node.op {
                Op::Constant => {
                    fresh.push_with_value(Op::Constant, node.value.clone());
                }
                op => {
                    let mut value = fresh.eval(op);
                    value.rows = node.value.rows;
                    value.cols = node.value.cols;
                    fresh.push_with_value(op.clone(), value);
                }
            }
        }
        fresh.scalar(out)
    }

    /// Gradient of the scalar node `loss` with respect to the parameters.
    pub fn backward(&self, loss: Var) -> Result<Vec<T>, AutodiffError> {
        let lv = &self.nodes[loss.0].value;
        if lv.data.len() != 1 {
            return Err(AutodiffError::NotScalar);
        }
        if !lv.data[0].is_finite() {
            return Err(AutodiffError::NonFinitePrimal(lv.data[0].to_f64().unwrap_or(f64::NAN)));
        }
        let mut grad = vec![T::zero(); self.theta.len()];
        let mut adj: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Params => {
                    for (d, s) in grad.iter_mut().zip(&g) {
                        *d = *d + *s;
                    }
                }
                Op::Dense {
                    input,
                    w_off,
                    b_off,
                    fan_out,
                } => {
                    let a = &self.nodes[input.0].value;
                    let fan_in = a.cols;
                    let fo = *fan_out;
                    let w = &self.theta[*w_off..*w_off + fan_in * fo];
                    let rows = a.comps * a.rows;
                    {
                        let (gw, rest) = grad[*w_off..].split_at_mut(fan_in * fo);
                        T::gemm(
                            (fo, rows, fan_in),
                            T::one(),
                            Strided::transposed(&g, fo),
                            Strided::row_major(&a.data, fan_in),
                            T::one(),
                            StridedMut::row_major(gw, fan_in),
                        );
                        // Bias contributes to the value slot only.
                        let gb = &mut rest[*b_off - *w_off - fan_in * fo..][..fo];
                        for p in 0..a.rows {
                            for (d, &x) in gb.iter_mut().zip(&g[p * fo..(p + 1) * fo]) {
                                *d = *d + x;
                            }
                        }
                    }
                    if needs_grad(&self.nodes, *input) {
                        let mut gi = vec![T::zero(); a.data.len()];
                        T::gemm(
                            (rows, fo, fan_in),
                            T::one(),
                            Strided::row_major(&g, fo),
                            Strided::row_major(w, fan_in),
                            T::zero(),
                            StridedMut::row_major(&mut gi, fan_in),
                        );
                        accumulate(&mut adj, *input, gi);
                    }
                }
                Op::Wavelet { input, off, cache } => {
                    let z = &self.nodes[input.0].value;
                    let tr = self.triple(*off);
                    let (gi, dp) = wavelet_backward(&tr, z, cache, &g);
                    for i in 0..3 {
                        grad[off + i] = grad[off + i] + dp[i];
                    }
                    accumulate(&mut adj, *input, gi);
                }
                Op::Residual { input, k, mu } => {
                    let j = &self.nodes[input.0].value;
                    let p = j.rows * j.cols;
                    let mut gi = vec![T::zero(); j.data.len()];
                    let kk: T = count(*k as usize);
                    let km1: T = count(*k as usize - 1);
                    for i in 0..p {
                        let (u, ux) = (j.data[i], j.data[2 * p + i]);
                        let gv = g[i];
                        gi[i] = -gv * *mu * kk * km1 * u.powi(*k as i32 - 2) * ux;
                        gi[p + i] = gv;
                        gi[2 * p + i] = -gv * *mu * kk * u.powi(*k as i32 - 1);
                        gi[4 * p + i] = gv;
                    }
                    accumulate(&mut adj, *input, gi);
                }
                Op::Select { input, comp } => {
                    let j = &self.nodes[input.0].value;
                    let p = j.rows * j.cols;
                    let mut gi = vec![T::zero(); j.data.len()];
                    gi[comp * p..(comp + 1) * p].copy_from_slice(&g);
                    accumulate(&mut adj, *input, gi);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, g.iter().map(|x| -*x).collect());
                    accumulate(&mut adj, *a, g);
                }
                Op::Scale(a, c) => accumulate(&mut adj, *a, g.iter().map(|x| *x * *c).collect()),
                Op::Spectral { input, ops, symbols } => {
                    if needs_grad(&self.nodes, *input) {
                        let a = &self.nodes[input.0].value;
                        let gi = spectral_adjoint(a.rows, &node.value, &g, ops, symbols);
                        accumulate(&mut adj, *input, gi);
                    }
                }
                Op::Norm { input, norm } => {
                    let a = &self.nodes[input.0].value;
                    let (_, dg) = norm.eval_with_grad(&a.data, a.rows, a.cols, None);
                    accumulate(&mut adj, *input, dg.into_iter().map(|x| x * g[0]).collect());
                }
                Op::L2(a) => {
                    let av = &self.nodes[a.0].value;
                    let v = node.value.data[0];
                    let gi = if v > T::zero() {
                        let c = g[0] / (v * count(av.data.len()));
                        av.data.iter().map(|x| *x * c).collect()
                    } else {
                        vec![T::zero(); av.data.len()]
                    };
                    accumulate(&mut adj, *a, gi);
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    accumulate(&mut adj, *a, bv.data.iter().map(|x| *x * g[0]).collect());
                    accumulate(&mut adj, *b, av.data.iter().map(|x| *x * g[0]).collect());
                }
                Op::Sum(terms) => {
                    for (v, c) in terms {
                        accumulate(&mut adj, *v, vec![*c * g[0]]);
                    }
                }
            }
        }
        if grad.iter().any(|x| !x.is_finite()) {
            return Err(AutodiffError::NonFiniteAdjoint);
        }
        Ok(grad)
    }
}

fn needs_grad<T: Real>(nodes: &[Node<T>], v: Var) -> bool {
    !matches!(nodes[v.0].op, Op::Constant)
}

fn accumulate<T: Real>(adj: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    match &mut adj[v.0] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(g) {
                *e = *e + x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn zip<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    assert_eq!(a.data.len(), b.data.len(), "elementwise shape mismatch");
    Tensor::new(a.comps, a.rows, a.cols, a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect())
}

fn row_symbol<T: Real>(symbols: &[Symbol<T>], l: usize) -> &Symbol<T> {
    if symbols.len() == 1 {
        &symbols[0]
    } else {
        &symbols[l]
    }
}

fn spectral_forward<T: Real>(a: &Tensor<T>, ops: &SpectralOps<T>, symbols: &[Symbol<T>]) -> Tensor<T> {
    assert_eq!(a.comps, 1);
    let n = a.cols;
    assert_eq!(n, ops.grid().n_points(), "spectral op on wrong grid");
    let broadcast = a.rows == 1 && symbols.len() > 1;
    let out_rows = if broadcast { symbols.len() } else { a.rows };
    assert!(symbols.len() == 1 || symbols.len() == out_rows);
    let mut out = vec![T::zero(); out_rows * n];
    if broadcast {
        let spec = ops.spectrum_of_real(&a.data);
        for l in 0..out_rows {
            ops.synthesize_real(&spec, &symbols[l], &mut out[l * n..(l + 1) * n]);
        }
    } else {
        for l in 0..out_rows {
            let spec = ops.spectrum_of_real(&a.data[l * n..(l + 1) * n]);
            ops.synthesize_real(&spec, row_symbol(symbols, l), &mut out[l * n..(l + 1) * n]);
        }
    }
    Tensor::new(1, out_rows, n, out)
}

fn spectral_adjoint<T: Real>(in_rows: usize, out: &Tensor<T>, g: &[T], ops: &SpectralOps<T>, symbols: &[Symbol<T>]) -> Vec<T> {
    let n = out.cols;
    let broadcast = in_rows == 1 && out.rows > 1 && symbols.len() > 1;
    if broadcast {
        let mut acc = vec![Complex::new(T::zero(), T::zero()); n];
        for l in 0..out.rows {
            let spec = ops.spectrum_of_real(&g[l * n..(l + 1) * n]);
            for ((a, s), m) in acc.iter_mut().zip(&spec).zip(symbols[l].values()) {
                *a = *a + s * m.conj();
            }
        }
        let ident = ops.identity_symbol();
        let mut gi = vec![T::zero(); n];
        ops.synthesize_real(&acc, &ident, &mut gi);
        gi
    } else {
        let mut gi = vec![T::zero(); in_rows * n];
        for l in 0..in_rows {
            let spec = ops.spectrum_of_real(&g[l * n..(l + 1) * n]);
            let adj = row_symbol(symbols, l).conj();
            ops.synthesize_real(&spec, &adj, &mut gi[l * n..(l + 1) * n]);
        }
        gi
    }
}

/// Backward pass through the activation: input adjoint and `(w0, b0, s0)` gradient.
fn wavelet_backward<T: Real>(tr: &WaveletTriple<T>, z: &Tensor<T>, cache: &WaveletCache<T>, g: &[T]) -> (Vec<T>, [T; 3]) {
    let pf = z.rows * z.cols;
    let mut gi = vec![T::zero(); z.data.len()];
    let mut dp = [T::zero(); 3];
    let (two, three): (T, T) = (lit(2.0), lit(3.0));
    for e in 0..pf {
        let z0 = z.data[e];
        let d = wavelet_derivs_from(z0, tr, cache.sin[e], cache.cos[e], cache.gauss[e]);
        let s = &d.sigma;
        if z.comps == 1 {
            let g0 = g[e];
            gi[e] = g0 * s[1];
            dp[0] = dp[0] + g0 * d.dw[0];
            dp[1] = dp[1] + g0 * d.db[0];
            dp[2] = dp[2] + g0 * d.ds[0];
            continue;
        }
        let (zt, zx, zxx, zxxx) = (z.data[pf + e], z.data[2 * pf + e], z.data[3 * pf + e], z.data[4 * pf + e]);
        let (g0, gt, gx, gxx, gxxx) = (g[e], g[pf + e], g[2 * pf + e], g[3 * pf + e], g[4 * pf + e]);
        let zx2 = zx * zx;
        gi[e] = g0 * s[1]
            + gt * s[2] * zt
            + gx * s[2] * zx
            + gxx * (s[3] * zx2 + s[2] * zxx)
            + gxxx * (s[4] * zx2 * zx + three * s[3] * zx * zxx + s[2] * zxxx);
        gi[pf + e] = gt * s[1];
        gi[2 * pf + e] = gx * s[1] + two * gxx * s[2] * zx + gxxx * (three * s[3] * zx2 + three * s[2] * zxx);
        gi[3 * pf + e] = gxx * s[1] + three * gxxx * s[2] * zx;
        gi[4 * pf + e] = gxxx * s[1];
        for (slot, ds) in [d.dw, d.db, d.ds].iter().enumerate() {
            let contrib = g0 * ds[0]
                + gt * ds[1] * zt
                + gx * ds[1] * zx
                + gxx * (ds[2] * zx2 + ds[1] * zxx)
                + gxxx * (ds[3] * zx2 * zx + three * ds[2] * zx * zxx + ds[1] * zxxx);
            dp[slot] = dp[slot] + contrib;
        }
    }
    (gi, dp)
}

/// Value and gradient of the scalar built by `build` on a fresh tape.
pub fn grad_loss<T: Real>(params: &[T], build: impl FnOnce(&mut Tape<T>) -> Var) -> Result<(T, Vec<T>), AutodiffError> {
    let mut tape = Tape::new(params.to_vec());
    let loss = build(&mut tape);
    let value = tape.scalar(loss);
    let grad = tape.backward(loss)?;
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{SpectralGrid, TimeGrid};
    use crate::network::{grid_points, NetworkParams};
    use crate::quadrature::Exponent;

    fn fd_check(theta: &[f64], build: &dyn Fn(&mut Tape<f64>) -> Var, tol: f64) {
        let (_, g) = grad_loss(theta, |t| build(t)).unwrap();
        let h = 1e-6;
        for i in 0..theta.len() {
            let mut up = theta.to_vec();
            up[i] += h;
            let mut dn = theta.to_vec();
            dn[i] -= h;
            let fu = grad_loss(&up, |t| build(t)).unwrap().0;
            let fd = grad_loss(&dn, |t| build(t)).unwrap().0;
            let num = (fu - fd) / (2.0 * h);
            let err = (num - g[i]).abs() / (num.abs().max(g[i].abs()).max(1e-3));
            assert!(err <= tol, "param {i}: analytic {} vs numeric {num}", g[i]);
        }
    }

    #[test]
    fn half_squared_norm_has_identity_gradient() {
        let theta = vec![0.5, -1.25, 3.0, 0.0];
        let (v, g) = grad_loss(&theta, |t| {
            let p = t.params();
            let d = t.dot(p, p);
            t.scale(d, 0.5)
        })
        .unwrap();
        assert_eq!(v, 0.5 * (0.25 + 1.5625 + 9.0));
        assert_eq!(g, theta);
    }

    #[test]
    fn tiny_network_l2_loss_matches_finite_differences() {
        let arch = Architecture::new(1, 2).unwrap();
        let theta = NetworkParams::<f64>::init(arch, 3).into_flat();
        let tg = TimeGrid::new(1.0, 2).unwrap();
        let sg = SpectralGrid::new(1.0, 2).unwrap();
        let pts = grid_points(&tg, &sg);
        let build = move |t: &mut Tape<f64>| {
            let u = t.network(arch, &InputScaling::default(), &pts, 1);
            let u = t.select(u, 0, 2, 2);
            t.mixed_norm(u, MixedNorm::j(Exponent::Finite(2.0), Exponent::Finite(2.0)))
        };
        fd_check(&theta, &build, 1e-5);
    }

    #[test]
    fn residual_pipeline_matches_finite_differences() {
        let arch = Architecture::new(2, 3).unwrap();
        let theta = NetworkParams::<f64>::init(arch, 9).into_flat();
        let tg = TimeGrid::new(0.5, 3).unwrap();
        let sg = SpectralGrid::new(2.0, 4).unwrap();
        let ops = Arc::new(SpectralOps::new(sg));
        let ds = Arc::new(vec![ops.fractional_symbol(0.25)]);
        let pts = grid_points(&tg, &sg);
        for k in [2u32, 3, 5] {
            let (pts, ops, ds) = (pts.clone(), ops.clone(), ds.clone());
            let build = move |t: &mut Tape<f64>| {
                let jets = t.network(arch, &InputScaling::default(), &pts, JET_LEN);
                let e = t.residual(jets, k, -1.0, 3, 4);
                let de = t.spectral(e, ops.clone(), ds.clone());
                let a = t.mixed_norm(e, MixedNorm::j(Exponent::Finite(2.0), Exponent::Finite(2.0)));
                let b = t.mixed_norm(de, MixedNorm::j(Exponent::Finite(5.0), Exponent::Finite(10.0)));
                t.sum(&[(a, 1.0), (b, 0.5)])
            };
            fd_check(&theta, &build, 1e-5);
        }
    }

    #[test]
    fn broadcast_spectral_matches_finite_differences() {
        let arch = Architecture::new(1, 3).unwrap();
        let theta = NetworkParams::<f64>::init(arch, 4).into_flat();
        let sg = SpectralGrid::new(3.0, 8).unwrap();
        let ops = Arc::new(SpectralOps::new(sg));
        let syms: Vec<Symbol<f64>> = [-0.5, 0.1, 0.7].iter().map(|&t| ops.airy_symbol(t).then(&ops.derivative_symbol(1).unwrap())).collect();
        let syms = Arc::new(syms);
        let pts: Vec<(f64, f64)> = sg.points().into_iter().map(|x| (0.0, x)).collect();
        let u0: Vec<f64> = sg.points().iter().map(|x| (-x * x).exp()).collect();
        let build = move |t: &mut Tape<f64>| {
            let u = t.network(arch, &InputScaling::default(), &pts, 1);
            let u = t.select(u, 0, 1, 8);
            let c = t.constant(Tensor::new(1, 1, 8, u0.clone()));
            let d = t.sub(c, u);
            let v = t.spectral(d, ops.clone(), syms.clone());
            let a = t.mixed_norm(v, MixedNorm::k(Exponent::Finite(2.0), Exponent::Finite(4.0)));
            let b = t.l2(d);
            t.sum(&[(a, 1.0), (b, 1.0)])
        };
        fd_check(&theta, &build, 1e-5);
    }

    #[test]
    fn spectral_adjoint_identity() {
        let sg = SpectralGrid::new(5.0, 64).unwrap();
        let ops = SpectralOps::new(sg);
        let sym = ops.fractional_symbol(0.5);
        let f: Vec<f64> = (0..64).map(|i| ((i * 17 % 23) as f64 / 7.0).sin()).collect();
        let g: Vec<f64> = (0..64).map(|i| ((i * 5 % 13) as f64 / 3.0).cos()).collect();
        let mut df = vec![0.0; 64];
        let mut dg = vec![0.0; 64];
        ops.apply_real(&sym, &f, &mut df);
        ops.apply_real(&sym.conj(), &g, &mut dg);
        let lhs: f64 = df.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = f.iter().zip(&dg).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn replay_and_gradients_are_bit_identical() {
        let arch = Architecture::new(2, 4).unwrap();
        let theta = NetworkParams::<f64>::init(arch, 1).into_flat();
        let tg = TimeGrid::new(1.0, 3).unwrap();
        let sg = SpectralGrid::new(2.0, 4).unwrap();
        let pts = grid_points(&tg, &sg);
        let mut tape = Tape::new(theta.clone());
        let jets = tape.network(arch, &InputScaling::default(), &pts, JET_LEN);
        let e = tape.residual(jets, 3, -1.0, 3, 4);
        let loss = tape.mixed_norm(e, MixedNorm::j(Exponent::Inf, Exponent::Finite(2.0)));
        assert_eq!(tape.replay(loss).to_bits(), tape.scalar(loss).to_bits());
        let g1 = tape.backward(loss).unwrap();
        let g2 = tape.backward(loss).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn gradient_is_linear_in_the_loss() {
        let arch = Architecture::new(1, 3).unwrap();
        let theta = NetworkParams::<f64>::init(arch, 2).into_flat();
        let tg = TimeGrid::new(1.0, 2).unwrap();
        let sg = SpectralGrid::new(2.0, 4).unwrap();
        let pts = grid_points(&tg, &sg);
        let parts = |t: &mut Tape<f64>| {
            let jets = t.network(arch, &InputScaling::default(), &pts, JET_LEN);
            let e = t.residual(jets, 2, -1.0, 2, 4);
            let u = t.select(jets, 0, 2, 4);
            let a = t.mixed_norm(e, MixedNorm::j(Exponent::Finite(2.0), Exponent::Finite(2.0)));
            let b = t.mixed_norm(u, MixedNorm::k(Exponent::Finite(3.0), Exponent::Finite(2.0)));
            (a, b)
        };
        let (_, g1) = grad_loss(&theta, |t| parts(t).0).unwrap();
        let (_, g2) = grad_loss(&theta, |t| parts(t).1).unwrap();
        let (_, g) = grad_loss(&theta, |t| {
            let (a, b) = parts(t);
            t.sum(&[(a, 2.0), (b, -0.5)])
        })
        .unwrap();
        for i in 0..g.len() {
            let expected = 2.0 * g1[i] - 0.5 * g2[i];
            assert!((g[i] - expected).abs() <= 1e-12 * expected.abs().max(1e-12) + 1e-15);
        }
    }
}
