use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use gkdv::io::{self, Checkpoint};
use gkdv::network::forward_slice;
use gkdv::norms::{s_k, y_norm, y_terms, FieldSampler};
use gkdv::physics::{initial_data, ModelSpec, SolutionSpec};
use gkdv::quadrature::WeightMatrix;
use gkdv::refsolver::{evolve, IntegratorConfig, RefSolverError};
use gkdv::training::{self, ExperimentConfig, TrainError};
use gkdv::{Exponent, MixedKind, MixedNorm, SpectralGrid, TimeGrid};

use crate::config::{parse_seeds, RunConfig};
use crate::{Failure, Source, EXIT_DIVERGED};

fn out_root(cli: Option<&Path>, run: &RunConfig) -> PathBuf {
    cli.map(Path::to_path_buf)
        .or_else(|| run.output.clone())
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::io(format!("{}: {e}", dir.display())))
}

pub fn run_dir(root: &Path, name: &str, seed: u64) -> PathBuf {
    root.join(name).join(format!("seed-{seed}"))
}

pub fn train(
    out: Option<&Path>,
    source: &Source,
    seed: Option<u64>,
    seeds: Option<&str>,
    jobs: usize,
    iters: Option<usize>,
    monitor_every: Option<usize>,
) -> Result<(), Failure> {
    let mut run = source.resolve()?;
    if let Some(n) = iters {
        run.experiment.optimizer.max_iter = n;
    }
    if let Some(n) = monitor_every {
        run.experiment.monitor_every = n;
    }
    let seeds = match (seed, seeds) {
        (Some(s), _) => vec![s],
        (None, Some(list)) => parse_seeds(list)?,
        (None, None) => run.seeds.clone().unwrap_or_else(|| vec![run.experiment.seed]),
    };
    let root = out_root(out, &run);
    if jobs > 1 && seeds.len() > 1 {
        return fan_out(&root, &run, &seeds, jobs);
    }
    let mut worst = None;
    for s in seeds {
        let mut exp = run.experiment.clone();
        exp.seed = s;
        // Divergence marks the sweep as failed; anything else aborts it.
        match train_one(&root, &exp) {
            Err(f) if f.code == EXIT_DIVERGED => {
                eprintln!("seed {s}: {}", f.message);
                worst = Some(f);
            }
            other => other?,
        }
    }
    worst.map_or(Ok(()), Err)
}

/// Runs every seed as its own `gkdv train` process, `jobs` at a time.
fn fan_out(root: &Path, run: &RunConfig, seeds: &[u64], jobs: usize) -> Result<(), Failure> {
    let exe = std::env::current_exe()?;
    create_dir(root)?;
    let cfg_path = root.join(format!(".{}.worker.toml", run.experiment.name));
    io::write_atomic(&cfg_path, run.to_toml().as_bytes())?;
    let mut pending = seeds.iter().copied();
    let mut running = Vec::new();
    let mut worst: Option<Failure> = None;
    loop {
        while running.len() < jobs {
            let Some(seed) = pending.next() else { break };
            let child = Command::new(&exe)
                .arg("--out")
                .arg(root)
                .arg("train")
                .arg("--config")
                .arg(&cfg_path)
                .arg("--seed")
                .arg(seed.to_string())
                .spawn()?;
            running.push((seed, child));
        }
        let Some((seed, mut child)) = (!running.is_empty()).then(|| running.remove(0)) else {
            break;
        };
        let status = child.wait()?;
        if !status.success() {
            let code = status.code().and_then(|c| u8::try_from(c).ok()).unwrap_or(1);
            let f = Failure {
                code,
                message: format!("worker for seed {seed} exited with {status}"),
            };
            if worst.as_ref().is_none_or(|w| w.code < f.code) {
                worst = Some(f);
            }
        }
    }
    let _ = std::fs::remove_file(&cfg_path);
    worst.map_or(Ok(()), Err)
}

fn train_one(root: &Path, exp: &ExperimentConfig) -> Result<(), Failure> {
    let dir = run_dir(root, &exp.name, exp.seed);
    create_dir(&dir)?;
    let model = exp.model()?;
    let mut run = RunConfig::from(exp.clone());
    run.output = Some(root.to_path_buf());
    io::write_atomic(&dir.join("config.toml"), run.to_toml().as_bytes())?;
    log::info!("training {} seed {} into {}", exp.name, exp.seed, dir.display());
    let outcome = match training::train(exp) {
        Ok(o) => o,
        Err(TrainError::Diverged { iteration, last_finite }) => {
            Checkpoint::new(*last_finite, &model, exp.seed, exp.domain, exp.collocation, iteration).save(&dir.join("checkpoint.ckpt"))?;
            return Err(Failure {
                code: EXIT_DIVERGED,
                message: format!("training diverged at iteration {iteration}; last finite parameters saved"),
            });
        }
        Err(e) => return Err(e.into()),
    };
    let report = &outcome.report;
    Checkpoint::new(outcome.params.clone(), &model, exp.seed, exp.domain, exp.collocation, report.iterations)
        .save(&dir.join("checkpoint.ckpt"))?;
    let mut csv = Vec::new();
    outcome.history.write_csv(&mut csv)?;
    io::write_atomic(&dir.join("history.csv"), &csv)?;
    io::save_json(&dir.join("metrics.json"), report)?;
    io::write_atomic(&dir.join("slices.csv"), slices_csv(exp, &outcome.params)?.as_bytes())?;
    println!("{}", serde_json::to_string(report).expect("metrics serialize"));
    Ok(())
}

/// Exact and predicted profiles at `t = -T, 0, 2T/3` on the test grid.
pub fn slices_csv(exp: &ExperimentConfig, params: &gkdv::NetworkParams) -> Result<String, Failure> {
    let grid = SpectralGrid::new(exp.domain.r, exp.test_grid.n_test).map_err(|e| Failure::config(e.to_string()))?;
    let xs = grid.points();
    let t_max = exp.domain.t_max;
    let mut out = String::from("x,t,exact,predicted\n");
    for t in [-t_max, 0.0, 2.0 * t_max / 3.0] {
        let pred = forward_slice(params, t, &grid);
        for (&x, p) in xs.iter().zip(pred) {
            writeln!(out, "{x},{t},{},{p}", exp.solution.eval(t, x)).expect("string write");
        }
    }
    Ok(out)
}

pub fn eval(source: &Source, checkpoint: &Path) -> Result<(), Failure> {
    let run = source.resolve()?;
    let ck = Checkpoint::load(checkpoint)?;
    let mut exp = run.experiment;
    exp.seed = ck.meta.seed;
    let report = training::evaluate(&exp, &ck.params)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("metrics serialize"));
    Ok(())
}

pub fn refsolve(out: Option<&Path>, source: &Source, n: usize, dt: f64, save_every: usize) -> Result<(), Failure> {
    let run = source.resolve()?;
    let exp = &run.experiment;
    if matches!(exp.solution, SolutionSpec::Kink { .. }) {
        return Err(Failure::config("the reference solver is periodic and cannot integrate a kink"));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Failure::config("dt must be positive"));
    }
    let model = exp.model()?;
    let grid = SpectralGrid::new(exp.domain.r, n).map_err(|e| Failure::config(e.to_string()))?;
    let steps = (exp.domain.t_max / dt).round() as usize;
    let cfg = IntegratorConfig::new(model, grid, dt, steps).saving_every(save_every.max(1));
    let u0 = initial_data(&exp.solution, &grid);
    let dir = out_root(out, &run).join(&exp.name).join("refsolve");
    create_dir(&dir)?;
    let path = dir.join("trajectory.traj");
    match evolve(&u0, &cfg) {
        Ok(traj) => {
            io::save_trajectory(&path, &traj)?;
            if let Some((t, last)) = traj.last() {
                let err = grid
                    .points()
                    .iter()
                    .zip(last)
                    .map(|(&x, v)| (exp.solution.eval(t, x) - v).abs())
                    .fold(0.0, f64::max);
                println!("t = {t}: max |u_ref - u_exact| = {err:e}");
            }
            println!("wrote {}", path.display());
            Ok(())
        }
        Err(e @ (RefSolverError::StepGuard { .. } | RefSolverError::BlowUp { .. })) => {
            if let Some(partial) = e.partial() {
                io::save_trajectory(&path, partial)?;
            }
            Err(Failure {
                code: EXIT_DIVERGED,
                message: e.to_string(),
            })
        }
        Err(e) => Err(Failure::config(e.to_string())),
    }
}

/// `(2R)^{1/a} (2T)^{1/b}` for a functional whose space exponent is `a` and
/// time exponent `b`; infinite exponents and a single time slice contribute 1.
fn continuum_factor(norm: &MixedNorm, r: f64, t: f64, rows: usize) -> f64 {
    let (space, time) = match norm.kind {
        MixedKind::J => (norm.outer, norm.inner),
        MixedKind::K => (norm.inner, norm.outer),
    };
    let pow = |len: f64, e: Exponent| match e {
        Exponent::Finite(p) => len.powf(1.0 / p),
        Exponent::Inf => 1.0,
    };
    let time_factor = if rows > 1 { pow(2.0 * t, time) } else { 1.0 };
    pow(2.0 * r, space) * time_factor
}

pub fn norms(file: &Path, k: u32, s: Option<f64>, calibrated: bool) -> Result<(), Failure> {
    let s = match s {
        Some(s) => s,
        None => ModelSpec::default_s(k).map_err(|e| Failure::config(e.to_string()))?,
    };
    s_k(k).map_err(|e| Failure::config(e.to_string()))?;
    let bad = |e: gkdv::norms::NormsError| Failure::config(e.to_string());
    let sampler = match file.extension().and_then(|e| e.to_str()) {
        Some("field") => {
            let field = io::load_field(file)?;
            let tg = TimeGrid::new(0.0, 1).expect("single slice");
            FieldSampler::from_values(tg, *field.grid(), s, field.real_values()).map_err(bad)?
        }
        Some("samples") => {
            let m = io::load_samples(file)?;
            FieldSampler::from_values(*m.time_grid(), *m.space_grid(), s, m.into_values()).map_err(bad)?
        }
        _ => return Err(Failure::config("expected a .field or .samples file")),
    };
    let rows = sampler.time_grid().n_points();
    let cols = sampler.space_grid().n_points();
    let mut report = y_norm(k, s, &sampler, &WeightMatrix::ones(rows, cols)).map_err(bad)?;
    if calibrated {
        let (r, t) = (sampler.space_grid().half_width(), sampler.time_grid().half_length());
        let terms = y_terms(k).map_err(bad)?;
        for (term, out) in terms.iter().zip(report.terms.iter_mut()) {
            out.value *= continuum_factor(&term.norm, r, t, rows);
        }
        report.total = report.terms.iter().map(|t| t.value).sum();
    }
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}

pub fn presets(name: Option<&str>) -> Result<(), Failure> {
    match name {
        None => {
            for n in gkdv::presets::names() {
                println!("{n}");
            }
        }
        Some(n) => {
            let exp = gkdv::presets::get(n).ok_or_else(|| Failure::config(format!("unknown preset `{n}`")))?;
            print!("{}", RunConfig::from(exp).to_toml());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn continuum_factor_turns_means_into_integrals() {
        let j = MixedNorm::j(Exponent::Finite(2.0), Exponent::Finite(4.0));
        assert!((continuum_factor(&j, 8.0, 8.0, 3) - 4.0 * 2.0).abs() < 1e-12);
        let k = MixedNorm::k(Exponent::Finite(2.0), Exponent::Inf);
        assert!((continuum_factor(&k, 8.0, 1.0, 3) - 4.0).abs() < 1e-12);
        assert!((continuum_factor(&j, 8.0, 8.0, 1) - 4.0).abs() < 1e-12);
    }
}
