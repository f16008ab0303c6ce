#![allow(dead_code)]

use confocal_hmc::integrators::PhaseState;
use confocal_hmc::model::{simulate, ExperimentParams, Measurements, Trajectory};
use confocal_hmc::{PosteriorProblem, RandomStream};

/// Order-one parameters on a tiny mesh, so finite-difference Jacobians are
/// well conditioned.
pub fn unit_params(n: usize, k: usize) -> ExperimentParams {
    ExperimentParams {
        diffusion: 1.0,
        i_ref: 3.0,
        i_bg: 0.5,
        omega: 0.5,
        tau_dead: 0.2,
        tau_exp: 0.9,
        n_cycles: n,
        k_sub: k,
    }
}

pub fn unit_problem(n: usize, k: usize, seed: u64) -> PosteriorProblem {
    let params = unit_params(n, k);
    let mut s = RandomStream::new(seed);
    let w = Measurements {
        w: (0..n).map(|_| s.poisson(2.0).unwrap()).collect(),
    };
    PosteriorProblem::new(params, w).unwrap()
}

pub fn table_problem(n: usize, k: usize, seed: u64) -> (Trajectory, PosteriorProblem) {
    let params = ExperimentParams::default().with_sizes(n, k);
    let sim = simulate(&mut RandomStream::new(seed), &params).unwrap();
    let problem = PosteriorProblem::new(params, sim.measurements).unwrap();
    (sim.trajectory, problem)
}

pub fn random_state(m: usize, seed: u64, q_scale: f64) -> PhaseState {
    let mut s = RandomStream::new(seed);
    let mut q: Vec<f64> = (0..m).map(|_| q_scale * s.standard_normal()).collect();
    q[0] = 0.0;
    let p = (0..m).map(|_| s.standard_normal()).collect();
    PhaseState::new(q, p).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Central-difference gradient of `f` at `q`, skipping slot 0.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, q: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; q.len()];
    let mut x = q.to_vec();
    for i in 1..q.len() {
        let eps = 1e-6 * (1.0 + q[i].abs());
        x[i] = q[i] + eps;
        let up = f(&x);
        x[i] = q[i] - eps;
        let down = f(&x);
        x[i] = q[i];
        g[i] = (up - down) / (2.0 * eps);
    }
    g
}

/// `‖JᵀΩJ − Ω‖∞` for a one-step map on the free coordinates `(q₁.., p₁..)`,
/// with `J` from central differences.
pub fn symplectic_defect(map: impl Fn(&PhaseState) -> PhaseState, at: &PhaseState) -> f64 {
    let m = at.len();
    let f = m - 1;
    let dim = 2 * f;
    let pack = |s: &PhaseState| -> Vec<f64> { s.q[1..].iter().chain(&s.p[1..]).copied().collect() };
    let unpack = |x: &[f64]| -> PhaseState {
        let mut q = vec![0.0; m];
        let mut p = vec![0.0; m];
        q[1..].copy_from_slice(&x[..f]);
        p[1..].copy_from_slice(&x[f..]);
        PhaseState { q, p }
    };
    let x0 = pack(at);
    let eps = 1e-6;
    let mut jac = vec![vec![0.0; dim]; dim];
    for j in 0..dim {
        let mut up = x0.clone();
        up[j] += eps;
        let mut down = x0.clone();
        down[j] -= eps;
        let fu = pack(&map(&unpack(&up)));
        let fd = pack(&map(&unpack(&down)));
        for i in 0..dim {
            jac[i][j] = (fu[i] - fd[i]) / (2.0 * eps);
        }
    }
    let omega = |i: usize, j: usize| -> f64 {
        if i < f && j == i + f {
            1.0
        } else if i >= f && j + f == i {
            -1.0
        } else {
            0.0
        }
    };
    let mut worst: f64 = 0.0;
    for a in 0..dim {
        for b in 0..dim {
            let mut s = 0.0;
            for i in 0..dim {
                for j in 0..dim {
                    let w = omega(i, j);
                    if w != 0.0 {
                        s += jac[i][a] * w * jac[j][b];
                    }
                }
            }
            worst = worst.max((s - omega(a, b)).abs());
        }
    }
    worst
}

/// Population variance of column `i` across `rows`.
pub fn column_variance(rows: &[Vec<f64>], i: usize) -> f64 {
    let n = rows.len() as f64;
    let mean = rows.iter().map(|r| r[i]).sum::<f64>() / n;
    rows.iter().map(|r| (r[i] - mean).powi(2)).sum::<f64>() / n
}
