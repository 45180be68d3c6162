//! The experiment settings of the published tables, by name.

use crate::network::InputScaling;
use crate::physics::SolutionSpec;
use crate::training::{Collocation, Domain, ExperimentConfig, LbfgsConfig, TestGrid};

fn fmt_num(v: f64) -> String {
    let s = format!("{v}");
    s.trim_end_matches(".0").to_string()
}

fn base(name: String, solution: SolutionSpec, domain: Domain, (h, n): (usize, usize), collocation: Collocation, iters: usize) -> ExperimentConfig {
    ExperimentConfig {
        name,
        solution,
        s: None,
        domain,
        hidden_layers: h,
        neurons: n,
        collocation,
        gamma1: None,
        gamma2: None,
        optimizer: LbfgsConfig {
            max_iter: iters,
            ..Default::default()
        },
        seed: 0,
        test_grid: TestGrid::default(),
        monitor_every: 0,
        input_scaling: InputScaling::default(),
    }
}

fn soliton(k: u32, c: f64) -> ExperimentConfig {
    let col = (k as usize - 2) * 2 + usize::from(c > 1.0);
    let n_evol = [64, 64, 64, 64, 128, 128, 128, 128][col];
    let n_pde = [64, 64, 128, 128, 128, 128, 128, 256][col];
    let m_evol = if (k, c) == (5, 3.0) { 128 } else { 32 };
    base(
        format!("soliton-k{k}-c{}", fmt_num(c)),
        SolutionSpec::Soliton { k, c },
        Domain { t_max: 3.0, r: 20.0 },
        (2, 20),
        Collocation {
            n_evol,
            m_evol,
            n_pde,
            m_pde: 32,
        },
        3000,
    )
}

fn multi(k: u32, speeds: &[f64]) -> ExperimentConfig {
    let shifts = vec![0.0; speeds.len()];
    let solution = if k == 2 {
        SolutionSpec::KdvNsoliton {
            speeds: speeds.to_vec(),
            shifts,
        }
    } else {
        SolutionSpec::MkdvNsoliton {
            speeds: speeds.to_vec(),
            shifts,
        }
    };
    let three = speeds.len() == 3;
    let small = speeds == [0.1, 0.4] || speeds == [0.5, 1.0];
    let label = speeds.iter().map(|&c| fmt_num(c)).collect::<Vec<_>>().join("-");
    base(
        format!("{}{}-c{label}", if k == 2 { "kdv" } else { "mkdv" }, speeds.len()),
        solution,
        Domain { t_max: 3.0, r: 20.0 },
        (3, if three { 40 } else { 32 }),
        Collocation {
            n_evol: 128,
            m_evol: 32,
            n_pde: if small { 128 } else { 256 },
            m_pde: 32,
        },
        if three { 5000 } else { 3000 },
    )
}

fn breather(alpha: f64, beta: f64) -> ExperimentConfig {
    base(
        format!("breather-a{}-b{}", fmt_num(alpha), fmt_num(beta)),
        SolutionSpec::Breather {
            alpha,
            beta,
            x1: 0.0,
            x2: 0.0,
        },
        Domain { t_max: 2.0, r: 20.0 },
        (3, 40),
        Collocation {
            n_evol: 128,
            m_evol: 128,
            n_pde: 128,
            m_pde: 64,
        },
        5000,
    )
}

fn kink(lambda: f64) -> ExperimentConfig {
    base(
        format!("kink-l{}", fmt_num(lambda)),
        SolutionSpec::Kink { lambda },
        Domain { t_max: 1.0, r: 20.0 },
        (2, 20),
        Collocation {
            n_evol: 128,
            m_evol: 32,
            n_pde: 128,
            m_pde: 32,
        },
        3000,
    )
}

/// Every preset, in table order.
pub fn all() -> Vec<ExperimentConfig> {
    let mut out = Vec::new();
    for k in 2..=5 {
        for c in [1.0, 3.0] {
            out.push(soliton(k, c));
        }
    }
    let pairs: [&[f64]; 4] = [&[0.1, 0.4], &[0.5, 1.0], &[0.3, 1.8], &[1.0, 2.0]];
    let triples: [&[f64]; 2] = [&[0.1, 1.0, 2.0], &[0.5, 1.5, 2.0]];
    for k in [2, 3] {
        for c in pairs {
            out.push(multi(k, c));
        }
    }
    for k in [2, 3] {
        for c in triples {
            out.push(multi(k, c));
        }
    }
    for (a, b) in [(0.5, 0.5), (0.9, 0.3), (1.0, 0.5), (1.3, 0.2)] {
        out.push(breather(a, b));
    }
    for l in [1.0, 2.5] {
        out.push(kink(l));
    }
    out
}

pub fn names() -> Vec<String> {
    all().into_iter().map(|c| c.name).collect()
}

pub fn get(name: &str) -> Option<ExperimentConfig> {
    all().into_iter().find(|c| c.name == name)
}
