//! Loss assembly, L-BFGS and the training loop.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::grid::{GridError, SpectralGrid, TimeGrid};
use crate::network::{forward_slice, forward_values_grid, grid_points, Architecture, InputScaling, NetworkError, NetworkParams, JET_LEN};
use crate::norms::{estimate_constants, linf_hs, term_count, y_norm, y_terms, FieldSampler, NormsError, Quantity, YTerm};
use crate::physics::{sampler_from_values, ModelSpec, PhysicsError, SolutionSpec};
use crate::quadrature::{Exponent, MixedNorm};
use crate::spectral::{SpectralOps, Symbol};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Norms(#[from] NormsError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error("loss is not finite at the initial parameters")]
    NonFiniteStart,
    #[error("training diverged at iteration {iteration}")]
    Diverged { iteration: usize, last_finite: Box<NetworkParams<f64>> },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Weights and collocation grids of the loss `g1 L_evol + g2 L_PDE`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub model: ModelSpec,
    pub gamma1: f64,
    pub gamma2: f64,
    pub evol_time: TimeGrid<f64>,
    pub evol_space: SpectralGrid<f64>,
    pub pde_time: TimeGrid<f64>,
    pub pde_space: SpectralGrid<f64>,
}

impl LossConfig {
    /// Uniform grids on `[-t_max, t_max] x [-r, r)` with the default weights
    /// `g1 = 1 / #terms(Y_k)`, `g2 = 1`.
    pub fn new(model: ModelSpec, t_max: f64, r: f64, evol: (usize, usize), pde: (usize, usize)) -> Result<Self, TrainError> {
        let (n_evol, m_evol) = evol;
        let (n_pde, m_pde) = pde;
        if n_evol == 0 || m_evol == 0 || n_pde == 0 || m_pde == 0 {
            return Err(TrainError::Config("collocation sizes must be positive".into()));
        }
        Ok(Self {
            model,
            gamma1: 1.0 / term_count(model.k)? as f64,
            gamma2: 1.0,
            evol_time: TimeGrid::new(t_max, m_evol)?,
            evol_space: SpectralGrid::new(r, n_evol)?,
            pde_time: TimeGrid::new(t_max, m_pde)?,
            pde_space: SpectralGrid::new(r, n_pde)?,
        })
    }
}

/// Loss value, its two components and the gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub total: f64,
    pub evol: f64,
    pub pde: f64,
    pub grad: Vec<f64>,
}

/// The training loss with all grid-dependent operators precomputed.
#[derive(Debug, Clone)]
pub struct PinnLoss {
    config: LossConfig,
    arch: Architecture,
    scaling: InputScaling,
    u0: Vec<f64>,
    evol_points: Vec<(f64, f64)>,
    pde_points: Vec<(f64, f64)>,
    evol_ops: Arc<SpectralOps<f64>>,
    /// Per-row Airy symbols composed with each quantity's multiplier.
    evol_symbols: Vec<(Quantity, Arc<Vec<Symbol<f64>>>)>,
    terms: Vec<YTerm>,
    pde_ops: Arc<SpectralOps<f64>>,
    pde_symbol: Arc<Vec<Symbol<f64>>>,
}

impl PinnLoss {
    /// `u0` holds the initial data on `config.evol_space`.
    pub fn new(config: LossConfig, arch: Architecture, scaling: InputScaling, u0: Vec<f64>) -> Result<Self, TrainError> {
        if u0.len() != config.evol_space.n_points() {
            return Err(TrainError::Config(format!(
                "initial data has {} samples, evolution grid has {}",
                u0.len(),
                config.evol_space.n_points()
            )));
        }
        let s = config.model.s;
        let terms = y_terms(config.model.k)?;
        let evol_ops = Arc::new(SpectralOps::new(config.evol_space));
        let [dx, ds, ds_dx] = crate::norms::derivative_symbols(&evol_ops, s);
        let times = config.evol_time.points();
        let mut evol_symbols = Vec::new();
        for q in Quantity::ALL {
            if !terms.iter().any(|t| t.quantity == q) {
                continue;
            }
            let base = match q {
                Quantity::U => None,
                Quantity::Ux => Some(&dx),
                Quantity::DsU => Some(&ds),
                Quantity::DsUx => Some(&ds_dx),
            };
            let syms = times
                .iter()
                .map(|&t| {
                    let airy = evol_ops.airy_symbol(t);
                    match base {
                        Some(b) => airy.then(b),
                        None => airy,
                    }
                })
                .collect();
            evol_symbols.push((q, Arc::new(syms)));
        }
        let pde_ops = Arc::new(SpectralOps::new(config.pde_space));
        let pde_symbol = Arc::new(vec![if config.model.k == 5 {
            pde_ops.inverse_derivative_symbol()
        } else {
            pde_ops.fractional_symbol(s)
        }]);
        let evol_points = config.evol_space.points().into_iter().map(|x| (0.0, x)).collect();
        let pde_points = grid_points(&config.pde_time, &config.pde_space);
        Ok(Self {
            config,
            arch,
            scaling,
            u0,
            evol_points,
            pde_points,
            evol_ops,
            evol_symbols,
            terms,
            pde_ops,
            pde_symbol,
        })
    }

    pub fn config(&self) -> &LossConfig {
        &self.config
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    /// Records the loss; returns `(total, evol, pde)`.
    pub fn record(&self, tape: &mut Tape<f64>) -> (Var, Var, Var) {
        let evol = self.record_evol(tape);
        let pde = self.record_pde(tape);
        let total = tape.sum(&[(evol, self.config.gamma1), (pde, self.config.gamma2)]);
        (total, evol, pde)
    }

    fn record_evol(&self, tape: &mut Tape<f64>) -> Var {
        let n = self.config.evol_space.n_points();
        let u = tape.network(self.arch, &self.scaling, &self.evol_points, 1);
        let u = tape.select(u, 0, 1, n);
        let u0 = tape.constant(Tensor::new(1, 1, n, self.u0.clone()));
        let d = tape.sub(u0, u);
        let mut fields = Vec::with_capacity(self.evol_symbols.len());
        for (q, syms) in &self.evol_symbols {
            fields.push((*q, tape.spectral(d, self.evol_ops.clone(), syms.clone())));
        }
        let parts: Vec<(Var, f64)> = self
            .terms
            .iter()
            .map(|term| {
                let field = fields.iter().find(|(q, _)| *q == term.quantity).expect("symbol prepared").1;
                (tape.mixed_norm(field, term.norm), 1.0)
            })
            .collect();
        tape.sum(&parts)
    }

    fn record_pde(&self, tape: &mut Tape<f64>) -> Var {
        let (m, n) = (self.config.pde_time.n_points(), self.config.pde_space.n_points());
        let model = &self.config.model;
        let jets = tape.network(self.arch, &self.scaling, &self.pde_points, JET_LEN);
        let e = tape.residual(jets, model.k, model.mu(), m, n);
        let de = tape.spectral(e, self.pde_ops.clone(), self.pde_symbol.clone());
        if model.k == 5 {
            tape.mixed_norm(de, MixedNorm::j(Exponent::Finite(1.0), Exponent::Finite(2.0)))
        } else {
            let j22 = MixedNorm::j(Exponent::Finite(2.0), Exponent::Finite(2.0));
            let a = tape.mixed_norm(e, j22);
            let b = tape.mixed_norm(de, j22);
            tape.sum(&[(a, 1.0), (b, 1.0)])
        }
    }

    /// Loss components without the gradient.
    pub fn value(&self, theta: &[f64]) -> (f64, f64, f64) {
        let mut tape = Tape::new(theta.to_vec());
        let (total, evol, pde) = self.record(&mut tape);
        (tape.scalar(total), tape.scalar(evol), tape.scalar(pde))
    }

    pub fn value_and_grad(&self, theta: &[f64]) -> Result<LossEval, crate::autodiff::AutodiffError> {
        let mut tape = Tape::new(theta.to_vec());
        let (total, evol, pde) = self.record(&mut tape);
        let grad = tape.backward(total)?;
        Ok(LossEval {
            total: tape.scalar(total),
            evol: tape.scalar(evol),
            pde: tape.scalar(pde),
            grad,
        })
    }
}

/// L-BFGS settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbfgsConfig {
    pub max_iter: usize,
    pub history_size: usize,
    pub c1: f64,
    pub c2: f64,
    pub gtol: f64,
    pub ftol: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            max_iter: 3000,
            history_size: 50,
            c1: 1e-4,
            c2: 0.9,
            gtol: 1e-9,
            ftol: 1e-12,
            max_line_search: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIter,
    Gtol,
    Ftol,
    LineSearch,
    Callback,
}

/// State passed to the per-iteration callback after each accepted step.
#[derive(Debug)]
pub struct IterState<'a, A> {
    pub iter: usize,
    pub x: &'a [f64],
    pub f: f64,
    pub grad_inf: f64,
    pub evaluations: usize,
    pub aux: &'a A,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsOutcome<A> {
    pub x: Vec<f64>,
    pub f: f64,
    pub aux: A,
    pub iterations: usize,
    pub evaluations: usize,
    pub reason: StopReason,
    /// Line search failed to find a decrease.
    pub stalled: bool,
}

/// Oracle result: value, gradient and caller data. `None` marks a point where
/// the objective is not finite.
pub type Evaluation<A> = Option<(f64, Vec<f64>, A)>;

struct Point<A> {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    dphi: f64,
    aux: A,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimiser of the cubic through `(a, fa, ga)` and `(b, fb, gb)`, kept
/// inside the middle 80% of the bracket.
fn cubic_step(a: f64, fa: f64, ga: f64, b: f64, fb: f64, gb: f64) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - ga * gb;
    let mut t = f64::NAN;
    if disc >= 0.0 {
        let d2 = (b - a).signum() * disc.sqrt();
        t = b - (b - a) * ((gb + d2 - d1) / (gb - ga + 2.0 * d2));
    }
    let margin = 0.1 * (hi - lo);
    if !t.is_finite() || t < lo + margin || t > hi - margin {
        t = 0.5 * (lo + hi);
    }
    t
}

/// Strong-Wolfe line search along `d`. Returns the accepted point, or the
/// best sufficient-decrease trial if the Wolfe conditions were not met in
/// time, or `None` if no trial decreased `f`.
fn line_search<A: Clone>(
    oracle: &mut impl FnMut(&[f64]) -> Evaluation<A>,
    x: &[f64],
    f0: f64,
    dphi0: f64,
    d: &[f64],
    alpha0: f64,
    cfg: &LbfgsConfig,
    evals: &mut usize,
) -> Option<Point<A>> {
    let mut trial_x = vec![0.0; x.len()];
    let mut best: Option<Point<A>> = None;
    let mut eval = |alpha: f64, evals: &mut usize, best: &mut Option<Point<A>>| -> Option<Point<A>> {
        for i in 0..x.len() {
            trial_x[i] = x[i] + alpha * d[i];
        }
        *evals += 1;
        let (f, g, aux) = oracle(&trial_x)?;
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let dphi = dot(&g, d);
        let p = Point { alpha, f, g, dphi, aux };
        if p.f <= f0 + cfg.c1 * alpha * dphi0 && best.as_ref().is_none_or(|b| p.f < b.f) {
            *best = Some(Point {
                alpha: p.alpha,
                f: p.f,
                g: p.g.clone(),
                dphi: p.dphi,
                aux: p.aux.clone(),
            });
        }
        Some(p)
    };

    let armijo = |p: &Point<A>| p.f <= f0 + cfg.c1 * p.alpha * dphi0;
    let curvature = |p: &Point<A>| p.dphi.abs() <= -cfg.c2 * dphi0;

    let mut trials = 0;
    let mut prev: (f64, f64, f64) = (0.0, f0, dphi0);
    let mut alpha = alpha0;
    // Bracket phase.
    let bracket: Option<((f64, f64, f64), (f64, f64, f64))> = loop {
        if trials >= cfg.max_line_search {
            return best;
        }
        trials += 1;
        let Some(p) = eval(alpha, evals, &mut best) else {
            // Non-finite trial: treat as overshoot.
            break Some((prev, (alpha, f64::INFINITY, f64::NAN)));
        };
        if !armijo(&p) || (trials > 1 && p.f >= prev.1) {
            break Some((prev, (p.alpha, p.f, p.dphi)));
        }
        if curvature(&p) {
            return Some(p);
        }
        if p.dphi >= 0.0 {
            break Some(((p.alpha, p.f, p.dphi), prev));
        }
        prev = (p.alpha, p.f, p.dphi);
        alpha *= 2.0;
    };
    let (mut lo, mut hi) = bracket?;
    // Zoom phase.
    while trials < cfg.max_line_search {
        trials += 1;
        let a = if hi.1.is_finite() && hi.2.is_finite() {
            cubic_step(lo.0, lo.1, lo.2, hi.0, hi.1, hi.2)
        } else {
            0.5 * (lo.0 + hi.0)
        };
        if (hi.0 - lo.0).abs() <= 1e-16 * lo.0.abs().max(1e-300) {
            break;
        }
        let Some(p) = eval(a, evals, &mut best) else {
            hi = (a, f64::INFINITY, f64::NAN);
            continue;
        };
        if !armijo(&p) || p.f >= lo.1 {
            hi = (p.alpha, p.f, p.dphi);
        } else {
            if curvature(&p) {
                return Some(p);
            }
            if p.dphi * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (p.alpha, p.f, p.dphi);
        }
    }
    best
}

/// Limited-memory BFGS with a strong-Wolfe line search.
///
/// Stops on `max_iter` accepted steps, `|g|_inf <= gtol`, a relative decrease
/// below `ftol`, or when `on_iter` returns `false`. Always returns the best
/// point seen.
pub fn lbfgs_minimize<A: Clone>(
    mut oracle: impl FnMut(&[f64]) -> Evaluation<A>,
    x0: Vec<f64>,
    cfg: &LbfgsConfig,
    mut on_iter: impl FnMut(&IterState<'_, A>) -> bool,
) -> Option<LbfgsOutcome<A>> {
    let (mut f, mut g, mut aux) = oracle(&x0)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let n = x0.len();
    let mut x = x0;
    let mut evaluations = 1;
    let mut s_hist: std::collections::VecDeque<Vec<f64>> = Default::default();
    let mut y_hist: std::collections::VecDeque<Vec<f64>> = Default::default();
    let mut rho_hist: std::collections::VecDeque<f64> = Default::default();
    let mut iter = 0;
    let mut stalled = false;
    let reason;
    let mut d = vec![0.0; n];
    let mut alpha_buf = vec![0.0; cfg.history_size.max(1)];

    loop {
        if inf_norm(&g) <= cfg.gtol {
            reason = StopReason::Gtol;
            break;
        }
        if iter >= cfg.max_iter {
            reason = StopReason::MaxIter;
            break;
        }
        // Two-loop recursion.
        let mut q = g.clone();
        let m = s_hist.len();
        for i in (0..m).rev() {
            let a = rho_hist[i] * dot(&s_hist[i], &q);
            alpha_buf[i] = a;
            for (qj, yj) in q.iter_mut().zip(&y_hist[i]) {
                *qj -= a * yj;
            }
        }
        let h0 = if m > 0 {
            dot(&s_hist[m - 1], &y_hist[m - 1]) / dot(&y_hist[m - 1], &y_hist[m - 1])
        } else {
            1.0
        };
        for v in q.iter_mut() {
            *v *= h0;
        }
        for i in 0..m {
            let b = rho_hist[i] * dot(&y_hist[i], &q);
            for (qj, sj) in q.iter_mut().zip(&s_hist[i]) {
                *qj += (alpha_buf[i] - b) * sj;
            }
        }
        for (di, qi) in d.iter_mut().zip(&q) {
            *di = -qi;
        }
        let mut dphi0 = dot(&g, &d);
        if !(dphi0 < 0.0) {
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            for (di, gi) in d.iter_mut().zip(&g) {
                *di = -gi;
            }
            dphi0 = dot(&g, &d);
        }
        let alpha0 = if s_hist.is_empty() {
            (1.0 / g.iter().map(|v| v.abs()).sum::<f64>()).min(1.0)
        } else {
            1.0
        };
        let mut found = line_search(&mut oracle, &x, f, dphi0, &d, alpha0, cfg, &mut evaluations);
        if found.is_none() && !s_hist.is_empty() {
            // Retry once along steepest descent with a fresh memory.
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            for (di, gi) in d.iter_mut().zip(&g) {
                *di = -gi;
            }
            dphi0 = dot(&g, &d);
            let a0 = (1.0 / g.iter().map(|v| v.abs()).sum::<f64>()).min(1.0);
            found = line_search(&mut oracle, &x, f, dphi0, &d, a0, cfg, &mut evaluations);
        }
        let Some(p) = found else {
            stalled = true;
            reason = StopReason::LineSearch;
            break;
        };
        let s: Vec<f64> = d.iter().map(|di| p.alpha * di).collect();
        let y: Vec<f64> = p.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if s_hist.len() == cfg.history_size {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
            s_hist.push_back(s.clone());
            y_hist.push_back(y);
            rho_hist.push_back(1.0 / sy);
        }
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi += si;
        }
        let f_prev = f;
        f = p.f;
        g = p.g;
        aux = p.aux;
        iter += 1;
        let go_on = on_iter(&IterState {
            iter,
            x: &x,
            f,
            grad_inf: inf_norm(&g),
            evaluations,
            aux: &aux,
        });
        if !go_on {
            reason = StopReason::Callback;
            break;
        }
        if f_prev - f <= cfg.ftol * f_prev.abs().max(f.abs()).max(f64::MIN_POSITIVE) {
            reason = StopReason::Ftol;
            break;
        }
    }
    Some(LbfgsOutcome {
        x,
        f,
        aux,
        iterations: iter,
        evaluations,
        reason,
        stalled,
    })
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iter: usize,
    pub loss_evol: f64,
    pub loss_pde: f64,
    pub a: Option<f64>,
    pub a_tilde: Option<f64>,
    pub l: Option<f64>,
    pub error_y: Option<f64>,
    pub seconds: f64,
}

impl HistoryRecord {
    pub fn loss(&self, gamma1: f64, gamma2: f64) -> f64 {
        gamma1 * self.loss_evol + gamma2 * self.loss_pde
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<HistoryRecord>,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "iter,loss_evol,loss_pde,A,A_tilde,L,error_Y,seconds";

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for r in &self.records {
            writeln!(
                w,
                "{},{:e},{:e},{},{},{},{},{:.6}",
                r.iter,
                r.loss_evol,
                r.loss_pde,
                opt(r.a),
                opt(r.a_tilde),
                opt(r.l),
                opt(r.error_y),
                r.seconds
            )?;
        }
        Ok(())
    }

    pub fn read_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        if lines.next() != Some(Self::CSV_HEADER) {
            return Err("unexpected history header".into());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| format!("{s:?}: {e}"));
        let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        let mut records = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let c: Vec<&str> = line.split(',').collect();
            if c.len() != 8 {
                return Err(format!("expected 8 columns, got {}", c.len()));
            }
            records.push(HistoryRecord {
                iter: c[0].parse().map_err(|e| format!("{e}"))?,
                loss_evol: num(c[1])?,
                loss_pde: num(c[2])?,
                a: opt(c[3])?,
                a_tilde: opt(c[4])?,
                l: opt(c[5])?,
                error_y: opt(c[6])?,
                seconds: num(c[7])?,
            });
        }
        Ok(Self { records })
    }

    /// Best-so-far total loss after each record.
    pub fn envelope(&self, gamma1: f64, gamma2: f64) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.records
            .iter()
            .map(|r| {
                best = best.min(r.loss(gamma1, gamma2));
                best
            })
            .collect()
    }
}

/// Space-time box `[-t_max, t_max] x [-r, r]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub t_max: f64,
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Collocation {
    pub n_evol: usize,
    pub m_evol: usize,
    pub n_pde: usize,
    pub m_pde: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestGrid {
    pub n_test: usize,
    pub m_test: usize,
}

impl Default for TestGrid {
    fn default() -> Self {
        Self { n_test: 300, m_test: 300 }
    }
}

/// Everything needed to run one training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub solution: SolutionSpec,
    /// Regularity; defaults to `s_k` (nudged for `k = 2`).
    #[serde(default)]
    pub s: Option<f64>,
    pub domain: Domain,
    pub hidden_layers: usize,
    pub neurons: usize,
    pub collocation: Collocation,
    #[serde(default)]
    pub gamma1: Option<f64>,
    #[serde(default)]
    pub gamma2: Option<f64>,
    #[serde(default)]
    pub optimizer: LbfgsConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub test_grid: TestGrid,
    /// Record `A`, `A~`, `L`, `error_Y` every this many iterations (0: never).
    #[serde(default)]
    pub monitor_every: usize,
    #[serde(default)]
    pub input_scaling: InputScaling,
}

impl ExperimentConfig {
    pub fn model(&self) -> Result<ModelSpec, TrainError> {
        let (k, sign) = self.solution.equation();
        let s = match self.s {
            Some(s) => s,
            None => ModelSpec::default_s(k)?,
        };
        Ok(ModelSpec::new(k, sign, s)?)
    }

    pub fn arch(&self) -> Result<Architecture, TrainError> {
        Ok(Architecture::new(self.hidden_layers, self.neurons)?)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.solution.validate()?;
        self.model()?;
        self.arch()?;
        if !(self.domain.t_max > 0.0 && self.domain.r > 0.0) {
            return Err(TrainError::Config("domain half-lengths must be positive".into()));
        }
        for g in [self.gamma1, self.gamma2].into_iter().flatten() {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(TrainError::Config("loss weights must be non-negative".into()));
            }
        }
        if self.test_grid.n_test < 2 || self.test_grid.m_test < 1 {
            return Err(TrainError::Config("test grid too small".into()));
        }
        Ok(())
    }

    pub fn loss_config(&self) -> Result<LossConfig, TrainError> {
        let c = &self.collocation;
        let mut cfg = LossConfig::new(self.model()?, self.domain.t_max, self.domain.r, (c.n_evol, c.m_evol), (c.n_pde, c.m_pde))?;
        if let Some(g) = self.gamma1 {
            cfg.gamma1 = g;
        }
        if let Some(g) = self.gamma2 {
            cfg.gamma2 = g;
        }
        Ok(cfg)
    }

    pub fn loss(&self) -> Result<PinnLoss, TrainError> {
        let cfg = self.loss_config()?;
        let u0 = crate::physics::initial_data(&self.solution, &cfg.evol_space);
        PinnLoss::new(cfg, self.arch()?, self.input_scaling, u0)
    }
}

/// Final metrics of a trained network on the test grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub name: String,
    pub seed: u64,
    pub k: u32,
    pub s: f64,
    pub error_y: f64,
    pub error_linf_hs: f64,
    pub error_rel: f64,
    pub a: f64,
    pub a_tilde: f64,
    pub l: f64,
    pub loss: f64,
    pub loss_evol: f64,
    pub loss_pde: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub stalled: bool,
    pub seconds: f64,
}

/// Test-grid quantities shared by the final report and the history monitor.
pub struct Evaluator {
    solution: SolutionSpec,
    model: ModelSpec,
    time_grid: TimeGrid<f64>,
    space_grid: SpectralGrid<f64>,
    exact: Vec<f64>,
    u0: Vec<f64>,
}

/// Metric values of one network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub error_y: f64,
    pub error_linf_hs: f64,
    pub error_rel: f64,
    pub a: f64,
    pub a_tilde: f64,
    pub l: f64,
}

impl Evaluator {
    pub fn new(solution: &SolutionSpec, model: ModelSpec, domain: Domain, grid: TestGrid) -> Result<Self, TrainError> {
        solution.validate()?;
        let time_grid = TimeGrid::new(domain.t_max, grid.m_test)?;
        let space_grid = SpectralGrid::new(domain.r, grid.n_test)?;
        let xs = space_grid.points();
        let mut exact = Vec::with_capacity(xs.len() * time_grid.n_points());
        for t in time_grid.points() {
            exact.extend(xs.iter().map(|&x| solution.eval(t, x)));
        }
        let u0 = crate::physics::initial_data(solution, &space_grid);
        Ok(Self {
            solution: solution.clone(),
            model,
            time_grid,
            space_grid,
            exact,
            u0,
        })
    }

    /// Exact solution on the test grid, row-major with rows = time.
    pub fn exact_values(&self) -> &[f64] {
        &self.exact
    }

    /// Spectral sampler of the network on the test grid, with its `t = 0` slice.
    pub fn predict(&self, params: &NetworkParams<f64>) -> Result<FieldSampler<f64>, TrainError> {
        let values = forward_values_grid(params, &self.time_grid, &self.space_grid);
        self.sampler(values, params)
    }

    fn sampler(&self, values: Vec<f64>, params: &NetworkParams<f64>) -> Result<FieldSampler<f64>, TrainError> {
        let far = self.solution.far_field();
        let fs = sampler_from_values(self.time_grid, self.space_grid, self.model.s, values, far.as_ref())?;
        Ok(fs.with_initial_slice(forward_slice(params, 0.0, &self.space_grid)))
    }

    /// Sampler of `u - u_theta`, differentiated on the test grid itself.
    pub fn difference(&self, params: &NetworkParams<f64>) -> Result<FieldSampler<f64>, TrainError> {
        let pred = forward_values_grid(params, &self.time_grid, &self.space_grid);
        self.difference_of(&pred)
    }

    fn difference_of(&self, pred: &[f64]) -> Result<FieldSampler<f64>, TrainError> {
        let diff = self.exact.iter().zip(pred).map(|(u, v)| u - v).collect();
        Ok(FieldSampler::from_values(self.time_grid, self.space_grid, self.model.s, diff)?)
    }

    pub fn metrics(&self, params: &NetworkParams<f64>) -> Result<Metrics, TrainError> {
        let values = forward_values_grid(params, &self.time_grid, &self.space_grid);
        let diff = self.difference_of(&values)?;
        let pred = self.sampler(values, params)?;
        let (s, k) = (self.model.s, self.model.k);
        let c = estimate_constants(s, &self.u0, &pred, k)?;
        let (rows, cols) = (self.time_grid.n_points(), self.space_grid.n_points());
        let j22 = MixedNorm::j(Exponent::Finite(2.0), Exponent::Finite(2.0));
        let denom = j22.eval(&self.exact, rows, cols, None);
        if denom <= 0.0 {
            return Err(NormsError::ZeroReference.into());
        }
        let weights = crate::quadrature::WeightMatrix::ones(rows, cols);
        Ok(Metrics {
            error_y: y_norm(k, s, &diff, &weights)?.total,
            error_linf_hs: linf_hs(&diff),
            error_rel: j22.eval(diff.get(Quantity::U).values(), rows, cols, None) / denom,
            a: c.a,
            a_tilde: c.a_tilde,
            l: c.l,
        })
    }
}

/// Metrics and terminal loss of `params` as [`train`] reports them, with
/// zero iteration counts and time.
pub fn evaluate(config: &ExperimentConfig, params: &NetworkParams<f64>) -> Result<MetricsReport, TrainError> {
    config.validate()?;
    if params.arch() != config.arch()? {
        return Err(TrainError::Config("parameters do not match the architecture".into()));
    }
    let model = config.model()?;
    let loss = config.loss()?;
    let evaluator = Evaluator::new(&config.solution, model, config.domain, config.test_grid)?;
    let metrics = evaluator.metrics(params)?;
    let (total, evol, pde) = loss.value(params.flat());
    Ok(MetricsReport {
        name: config.name.clone(),
        seed: config.seed,
        k: model.k,
        s: model.s,
        error_y: metrics.error_y,
        error_linf_hs: metrics.error_linf_hs,
        error_rel: metrics.error_rel,
        a: metrics.a,
        a_tilde: metrics.a_tilde,
        l: metrics.l,
        loss: total,
        loss_evol: evol,
        loss_pde: pde,
        iterations: 0,
        evaluations: 0,
        stalled: false,
        seconds: 0.0,
    })
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams<f64>,
    pub history: TrainHistory,
    pub report: MetricsReport,
    pub reason: StopReason,
}

/// Runs one experiment from `config.seed`.
pub fn train(config: &ExperimentConfig) -> Result<TrainOutcome, TrainError> {
    train_from(config, None)
}

/// Like [`train`], starting from `start` instead of a fresh initialisation.
pub fn train_from(config: &ExperimentConfig, start: Option<NetworkParams<f64>>) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let clock = Instant::now();
    let arch = config.arch()?;
    let model = config.model()?;
    let loss = config.loss()?;
    let evaluator = Evaluator::new(&config.solution, model, config.domain, config.test_grid)?;
    let init = match start {
        Some(p) => {
            if p.arch() != arch {
                return Err(TrainError::Config("start parameters do not match the architecture".into()));
            }
            p
        }
        None => NetworkParams::init(arch, config.seed).with_scaling(config.input_scaling),
    };
    let scaling = init.scaling();

    let oracle = |theta: &[f64]| -> Evaluation<(f64, f64)> {
        let e = loss.value_and_grad(theta).ok()?;
        Some((e.total, e.grad, (e.evol, e.pde)))
    };
    let mut history = TrainHistory::default();
    let mut last_finite = init.flat().to_vec();
    let monitor = |theta: &[f64], iter: usize| -> Option<Metrics> {
        if config.monitor_every == 0 || iter % config.monitor_every != 0 {
            return None;
        }
        let p = NetworkParams::from_flat(arch, theta.to_vec()).ok()?.with_scaling(scaling);
        evaluator.metrics(&p).ok()
    };
    let (e0, p0) = {
        let (_, e, p) = loss.value(init.flat());
        (e, p)
    };
    if !(e0.is_finite() && p0.is_finite()) {
        return Err(TrainError::NonFiniteStart);
    }
    let m0 = monitor(init.flat(), 0);
    history.records.push(HistoryRecord {
        iter: 0,
        loss_evol: e0,
        loss_pde: p0,
        a: m0.map(|m| m.a),
        a_tilde: m0.map(|m| m.a_tilde),
        l: m0.map(|m| m.l),
        error_y: m0.map(|m| m.error_y),
        seconds: clock.elapsed().as_secs_f64(),
    });
    let mut diverged_at = None;
    let outcome = lbfgs_minimize(oracle, init.flat().to_vec(), &config.optimizer, |st| {
        let (evol, pde) = *st.aux;
        if !(evol.is_finite() && pde.is_finite()) {
            diverged_at = Some(st.iter);
            return false;
        }
        last_finite.copy_from_slice(st.x);
        let m = monitor(st.x, st.iter);
        history.records.push(HistoryRecord {
            iter: st.iter,
            loss_evol: evol,
            loss_pde: pde,
            a: m.map(|m| m.a),
            a_tilde: m.map(|m| m.a_tilde),
            l: m.map(|m| m.l),
            error_y: m.map(|m| m.error_y),
            seconds: clock.elapsed().as_secs_f64(),
        });
        log::debug!("iter {} loss {:e} (evol {:e}, pde {:e})", st.iter, st.f, evol, pde);
        true
    })
    .ok_or(TrainError::NonFiniteStart)?;
    if let Some(iteration) = diverged_at {
        let p = NetworkParams::from_flat(arch, last_finite)?.with_scaling(scaling);
        return Err(TrainError::Diverged {
            iteration,
            last_finite: Box::new(p),
        });
    }
    let params = NetworkParams::from_flat(arch, outcome.x)?.with_scaling(scaling);
    let metrics = evaluator.metrics(&params)?;
    let (evol, pde) = outcome.aux;
    let report = MetricsReport {
        name: config.name.clone(),
        seed: config.seed,
        k: model.k,
        s: model.s,
        error_y: metrics.error_y,
        error_linf_hs: metrics.error_linf_hs,
        error_rel: metrics.error_rel,
        a: metrics.a,
        a_tilde: metrics.a_tilde,
        l: metrics.l,
        loss: outcome.f,
        loss_evol: evol,
        loss_pde: pde,
        iterations: outcome.iterations,
        evaluations: outcome.evaluations,
        stalled: outcome.stalled,
        seconds: clock.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome {
        params,
        history,
        report,
        reason: outcome.reason,
    })
}

/// Trains each seed in turn and keeps the run with the smallest
/// `error_rel`; stops early once `accept` holds.
pub fn train_best_of(
    config: &ExperimentConfig,
    seeds: &[u64],
    accept: impl Fn(&MetricsReport) -> bool,
) -> Result<(TrainOutcome, Vec<MetricsReport>), TrainError> {
    let mut best: Option<TrainOutcome> = None;
    let mut reports = Vec::new();
    for &seed in seeds {
        let mut cfg = config.clone();
        cfg.seed = seed;
        let out = match train(&cfg) {
            Ok(o) => o,
            Err(TrainError::Diverged { iteration, .. }) => {
                log::warn!("seed {seed} diverged at iteration {iteration}");
                continue;
            }
            Err(e) => return Err(e),
        };
        log::info!("seed {seed}: error_rel {:e}, {:.1} s", out.report.error_rel, out.report.seconds);
        reports.push(out.report.clone());
        let done = accept(&out.report);
        if best.as_ref().is_none_or(|b| out.report.error_rel < b.report.error_rel) {
            best = Some(out);
        }
        if done {
            break;
        }
    }
    let best = best.ok_or_else(|| TrainError::Config("every seed diverged".into()))?;
    Ok((best, reports))
}
