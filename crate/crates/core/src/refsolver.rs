//! Split-step Fourier reference integrator for gKdV on the periodic box.
//!
//! Integrating-factor (Lawson) RK4: the Airy part is exact, the nonlinear
//! term `mu (u^k)_x` is pseudo-spectral with 2/3-rule de-aliasing.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::grid::SpectralGrid;
use crate::physics::ModelSpec;
use crate::spectral::{SpectralOps, Symbol};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    IntegratingFactorRk4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub steps: usize,
    pub model: ModelSpec,
    pub grid: SpectralGrid<f64>,
    #[serde(default)]
    pub scheme: Scheme,
    /// Save a slice every this many steps; the last step is always saved.
    #[serde(default = "default_save_every")]
    pub save_every: usize,
    #[serde(default)]
    pub t0: f64,
    /// Drop the nonlinear term (pure Airy flow).
    #[serde(default)]
    pub linear_only: bool,
}

fn default_save_every() -> usize {
    1
}

impl IntegratorConfig {
    pub fn new(model: ModelSpec, grid: SpectralGrid<f64>, dt: f64, steps: usize) -> Self {
        Self {
            dt,
            steps,
            model,
            grid,
            scheme: Scheme::IntegratingFactorRk4,
            save_every: 1,
            t0: 0.0,
            linear_only: false,
        }
    }

    pub fn saving_every(mut self, every: usize) -> Self {
        self.save_every = every;
        self
    }

    pub fn validate(&self) -> Result<(), RefSolverError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(RefSolverError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.save_every == 0 {
            return Err(RefSolverError::Config("save_every must be at least 1".into()));
        }
        if !self.t0.is_finite() {
            return Err(RefSolverError::Config("t0 must be finite".into()));
        }
        Ok(())
    }
}

/// Saved slices of a run, one real field per time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub model: ModelSpec,
    pub grid: SpectralGrid<f64>,
    pub slices: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn last(&self) -> Option<(f64, &[f64])> {
        Some((*self.times.last()?, self.slices.last()?.as_slice()))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RefSolverError {
    #[error("integrator config: {0}")]
    Config(String),
    #[error("initial data has {found} samples, grid has {expected}")]
    Length { expected: usize, found: usize },
    #[error("initial data is not finite")]
    NonFinite,
    #[error("step guard violated at t = {time}: dt * max|u|^(k-1) = {value} > 0.5")]
    StepGuard { time: f64, value: f64, partial: Box<Trajectory> },
    #[error("solution blew up at t = {time}")]
    BlowUp { time: f64, partial: Box<Trajectory> },
}

impl RefSolverError {
    /// Trajectory saved before the failure, if any.
    pub fn partial(&self) -> Option<&Trajectory> {
        match self {
            RefSolverError::StepGuard { partial, .. } | RefSolverError::BlowUp { partial, .. } => Some(partial),
            _ => None,
        }
    }
}

struct Nonlinear {
    ops: SpectralOps<f64>,
    /// `mu * i kappa`, zero outside the 2/3 band.
    symbol: Vec<Complex<f64>>,
    k: i32,
    buf: Vec<Complex<f64>>,
    max_abs: f64,
}

impl Nonlinear {
    fn new(ops: SpectralOps<f64>, model: &ModelSpec) -> Self {
        let grid = *ops.grid();
        let n = grid.n_points();
        let cut = n / 3;
        let dx = ops.derivative_symbol(1).expect("first order");
        let symbol = dx
            .values()
            .iter()
            .enumerate()
            .map(|(slot, &m)| {
                if grid.mode(slot).unsigned_abs() > cut {
                    Complex::new(0.0, 0.0)
                } else {
                    m * model.mu()
                }
            })
            .collect();
        Self {
            ops,
            symbol,
            k: model.k as i32,
            buf: vec![Complex::new(0.0, 0.0); n],
            max_abs: 0.0,
        }
    }

    /// Spectrum of `mu (u^k)_x` given the spectrum of `u`.
    fn eval(&mut self, u_hat: &[Complex<f64>], out: &mut [Complex<f64>]) {
        self.buf.copy_from_slice(u_hat);
        self.ops.idft(&mut self.buf);
        let mut max_abs = 0.0f64;
        for c in self.buf.iter_mut() {
            let v = c.re;
            max_abs = max_abs.max(v.abs());
            *c = Complex::new(v.powi(self.k), 0.0);
        }
        self.max_abs = max_abs;
        self.ops.dft(&mut self.buf);
        for ((o, b), m) in out.iter_mut().zip(&self.buf).zip(&self.symbol) {
            *o = b * m;
        }
    }
}

fn times_symbol(a: &[Complex<f64>], e: &Symbol<f64>, out: &mut [Complex<f64>]) {
    for ((o, x), m) in out.iter_mut().zip(a).zip(e.values()) {
        *o = x * m;
    }
}

/// Integrates `u0` for `config.steps` steps of size `config.dt`.
///
/// The returned trajectory starts with `u0` at `t0`. A non-finite state or a
/// violated step guard aborts the run and returns the slices saved so far.
pub fn evolve(u0: &[f64], config: &IntegratorConfig) -> Result<Trajectory, RefSolverError> {
    config.validate()?;
    let grid = config.grid;
    let n = grid.n_points();
    if u0.len() != n {
        return Err(RefSolverError::Length { expected: n, found: u0.len() });
    }
    if u0.iter().any(|v| !v.is_finite()) {
        return Err(RefSolverError::NonFinite);
    }
    let ops = SpectralOps::new(grid);
    let h = config.dt;
    let full = ops.airy_symbol(h);
    let half = ops.airy_symbol(0.5 * h);
    let mut nl = Nonlinear::new(ops.clone(), &config.model);
    let guard_power = config.model.k as i32 - 1;

    let mut traj = Trajectory {
        times: vec![config.t0],
        model: config.model,
        grid,
        slices: vec![u0.to_vec()],
    };
    let mut u_hat: Vec<Complex<f64>> = u0.iter().map(|&v| Complex::new(v, 0.0)).collect();
    ops.dft(&mut u_hat);

    let zero = Complex::new(0.0, 0.0);
    let (mut k1, mut k2, mut k3, mut k4) = (vec![zero; n], vec![zero; n], vec![zero; n], vec![zero; n]);
    let (mut stage, mut e_half_u, mut tmp) = (vec![zero; n], vec![zero; n], vec![zero; n]);

    for step in 1..=config.steps {
        let t_prev = config.t0 + (step - 1) as f64 * h;
        times_symbol(&u_hat, &half, &mut e_half_u);
        if config.linear_only {
            times_symbol(&e_half_u, &half, &mut u_hat);
        } else {
            nl.eval(&u_hat, &mut k1);
            let guard = h * nl.max_abs.powi(guard_power);
            if guard > 0.5 {
                return Err(RefSolverError::StepGuard {
                    time: t_prev,
                    value: guard,
                    partial: Box::new(traj),
                });
            }
            for i in 0..n {
                tmp[i] = u_hat[i] + k1[i] * (0.5 * h);
            }
            times_symbol(&tmp, &half, &mut stage);
            nl.eval(&stage, &mut k2);
            for i in 0..n {
                stage[i] = e_half_u[i] + k2[i] * (0.5 * h);
            }
            nl.eval(&stage, &mut k3);
            times_symbol(&k3, &half, &mut tmp);
            times_symbol(&u_hat, &full, &mut stage);
            for i in 0..n {
                stage[i] = stage[i] + tmp[i] * h;
            }
            nl.eval(&stage, &mut k4);
            // u_{n+1} = E(h) u + h/6 (E(h) k1 + 2 E(h/2)(k2 + k3) + k4)
            for i in 0..n {
                tmp[i] = u_hat[i] + k1[i] * (h / 6.0);
            }
            times_symbol(&tmp, &full, &mut u_hat);
            for i in 0..n {
                tmp[i] = k2[i] + k3[i];
            }
            times_symbol(&tmp, &half, &mut stage);
            for i in 0..n {
                u_hat[i] = u_hat[i] + stage[i] * (h / 3.0) + k4[i] * (h / 6.0);
            }
        }
        let t = config.t0 + step as f64 * h;
        if u_hat.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(RefSolverError::BlowUp { time: t, partial: Box::new(traj) });
        }
        if step % config.save_every == 0 || step == config.steps {
            let mut buf = u_hat.clone();
            ops.idft(&mut buf);
            traj.times.push(t);
            traj.slices.push(buf.iter().map(|c| c.re).collect());
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{Sign, SolutionSpec};
    use crate::spectral::{airy_group, Field};

    fn l2(a: &[f64]) -> f64 {
        a.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        l2(&d) / l2(b)
    }

    fn soliton_run(k: u32, c: f64, n: usize, dt: f64, t_end: f64) -> (Trajectory, Vec<f64>) {
        let grid = SpectralGrid::new(20.0, n).unwrap();
        let spec = SolutionSpec::Soliton { k, c };
        let u0: Vec<f64> = grid.points().iter().map(|&x| spec.eval(0.0, x)).collect();
        let model = ModelSpec::with_default_s(k, Sign::Focusing).unwrap();
        let steps = (t_end / dt).round() as usize;
        let cfg = IntegratorConfig::new(model, grid, dt, steps).saving_every(steps);
        let exact: Vec<f64> = grid.points().iter().map(|&x| spec.eval(t_end, x)).collect();
        (evolve(&u0, &cfg).unwrap(), exact)
    }

    #[test]
    fn zero_stays_zero() {
        let grid = SpectralGrid::new(10.0, 64).unwrap();
        let model = ModelSpec::with_default_s(3, Sign::Focusing).unwrap();
        let traj = evolve(&[0.0; 64], &IntegratorConfig::new(model, grid, 0.01, 50)).unwrap();
        assert_eq!(traj.slices.len(), 51);
        assert!(traj.slices.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn kdv_soliton_propagates() {
        let (traj, exact) = soliton_run(2, 1.0, 1024, 1e-4, 1.0);
        let (t, u) = traj.last().unwrap();
        assert!((t - 1.0).abs() < 1e-12);
        let e = rel_err(u, &exact);
        assert!(e <= 1e-4, "relative error {e}");
    }

    #[test]
    fn mean_and_mass_are_conserved() {
        let (traj, _) = soliton_run(3, 1.0, 512, 1e-3, 1.0);
        let m0: f64 = traj.slices[0].iter().sum();
        let m1: f64 = traj.last().unwrap().1.iter().sum();
        assert!(((m1 - m0) / m0).abs() <= 1e-8);
        let q0 = l2(&traj.slices[0]);
        let q1 = l2(traj.last().unwrap().1);
        assert!(((q1 - q0) / q0).abs() <= 1e-6, "L2 drift {}", (q1 - q0) / q0);
    }

    #[test]
    fn fourth_order_in_time() {
        // Against a fine-step run, so the periodic-box floor of the closed
        // form does not mask the temporal error.
        let reference = soliton_run(2, 1.0, 128, 0.0003125, 1.0).0;
        let reference = reference.last().unwrap().1;
        let err = |dt| {
            let (traj, _) = soliton_run(2, 1.0, 128, dt, 1.0);
            rel_err(traj.last().unwrap().1, reference)
        };
        let ratio = err(0.01) / err(0.005);
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn linear_flow_is_airy_group() {
        let grid = SpectralGrid::new(10.0, 128).unwrap();
        let u0: Vec<f64> = grid.points().iter().map(|&x| f64::exp(-x * x) * (1.0 + x)).collect();
        let model = ModelSpec::with_default_s(2, Sign::Focusing).unwrap();
        let mut cfg = IntegratorConfig::new(model, grid, 0.01, 70);
        cfg.linear_only = true;
        let traj = evolve(&u0, &cfg).unwrap();
        let reference = airy_group(&Field::from_real(grid, &u0).unwrap(), 0.7).unwrap().real_values();
        let e = rel_err(traj.last().unwrap().1, &reference);
        assert!(e <= 1e-10, "relative error {e}");
    }

    #[test]
    fn blow_up_returns_partial_trajectory() {
        let grid = SpectralGrid::new(10.0, 64).unwrap();
        let model = ModelSpec::with_default_s(5, Sign::Focusing).unwrap();
        let u0: Vec<f64> = grid.points().iter().map(|&x| 3.0 * f64::exp(-x * x)).collect();
        let err = evolve(&u0, &IntegratorConfig::new(model, grid, 0.1, 10)).unwrap_err();
        assert!(matches!(err, RefSolverError::StepGuard { .. }));
        assert_eq!(err.partial().unwrap().slices.len(), 1);
    }

    #[test]
    fn rejects_bad_input() {
        let grid = SpectralGrid::new(10.0, 64).unwrap();
        let model = ModelSpec::with_default_s(3, Sign::Focusing).unwrap();
        assert!(matches!(
            evolve(&[0.0; 10], &IntegratorConfig::new(model, grid, 0.1, 1)),
            Err(RefSolverError::Length { .. })
        ));
        assert!(matches!(
            evolve(&[0.0; 64], &IntegratorConfig::new(model, grid, -0.1, 1)),
            Err(RefSolverError::Config(_))
        ));
    }
}
