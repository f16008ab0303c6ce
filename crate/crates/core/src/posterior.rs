//! Potential energy of the trajectory posterior, its gradient, the two-scale
//! discrete Laplacian, and the spectral quantities behind the explicit
//! integrator's step-size limit.
//!
//! `V(q) = V_like(q) + V_prior(q)` with additive constants dropped: the
//! `log(w_n!)` terms of the Poisson likelihood and the Gaussian normalisers of
//! the prior never enter a Metropolis ratio.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::{ExperimentParams, Measurements};
use crate::tridiag::TridiagonalOperator;

/// Full-system integrator used for HMC proposals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Störmer–Verlet on the full Hamiltonian.
    Svex,
    /// Strang split: implicit midpoint on the prior, Störmer–Verlet on the likelihood.
    Imex,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Svex => "svex",
            Scheme::Imex => "imex",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "svex" => Ok(Scheme::Svex),
            "imex" => Ok(Scheme::Imex),
            other => Err(Error::InvalidArgument(format!("unknown scheme '{other}'"))),
        }
    }
}

/// Sampler controls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmcParams {
    /// Fraction of kinetic energy assigned to the prior subsystem.
    pub theta: f64,
    pub mass: f64,
    pub step: f64,
    /// Integration steps per proposal.
    pub steps: usize,
    pub scheme: Scheme,
    /// Chain length `J`.
    pub chain_len: usize,
    pub seed: u64,
}

impl Default for HmcParams {
    fn default() -> Self {
        Self {
            theta: 0.5,
            mass: 1.0,
            step: 0.01,
            steps: 20,
            scheme: Scheme::Imex,
            chain_len: 1000,
            seed: 0,
        }
    }
}

impl HmcParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidArgument(format!(
                "theta must lie in [0, 1], got {}",
                self.theta
            )));
        }
        if !(self.mass > 0.0) || !self.mass.is_finite() {
            return Err(Error::InvalidArgument(format!("mass must be positive, got {}", self.mass)));
        }
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::InvalidArgument(format!("step must be positive, got {}", self.step)));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument("L must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_step(mut self, step: f64, steps: usize) -> Self {
        self.step = step;
        self.steps = steps;
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }
}

/// Off-diagonal couplings of `Δ_τ`: `1/τ_dead` then `K` copies of `1/τ_sub`,
/// repeated `N` times.
fn link_weights(params: &ExperimentParams) -> Vec<f64> {
    let s0 = 1.0 / params.tau_dead;
    let s2 = 1.0 / params.tau_sub();
    let mut off = Vec::with_capacity(params.node_count() - 1);
    for _ in 0..params.n_cycles {
        off.push(s0);
        off.extend(std::iter::repeat_n(s2, params.k_sub));
    }
    off
}

/// Two-scale discrete Laplacian `Δ_τ` on the trajectory mesh.
pub fn build_laplacian(params: &ExperimentParams) -> TridiagonalOperator {
    let off = link_weights(params);
    let m = params.node_count();
    let diag = (0..m)
        .map(|i| {
            let left = if i > 0 { off[i - 1] } else { 0.0 };
            let right = if i + 1 < m { off[i] } else { 0.0 };
            -(left + right)
        })
        .collect();
    TridiagonalOperator {
        sub: off.clone(),
        diag,
        sup: off,
    }
}

/// Places copies of a symmetric dense block along the diagonal of a
/// tridiagonal operator. `blocks` lists `(start_row, block)` pairs.
fn tridiagonal_from_blocks(m: usize, blocks: &[(usize, Vec<Vec<f64>>)]) -> TridiagonalOperator {
    let mut op = TridiagonalOperator {
        sub: vec![0.0; m - 1],
        diag: vec![0.0; m],
        sup: vec![0.0; m - 1],
    };
    for (start, block) in blocks {
        let b = block.len();
        for i in 0..b {
            op.diag[start + i] += block[i][i];
            if i + 1 < b {
                op.sup[start + i] += block[i][i + 1];
                op.sub[start + i] += block[i + 1][i];
            }
        }
    }
    op
}

/// `(K+1)×(K+1)` unit-spacing Neumann Laplacian.
pub fn neumann_block(k_sub: usize) -> Vec<Vec<f64>> {
    let b = k_sub + 1;
    let mut block = vec![vec![0.0; b]; b];
    for i in 0..b {
        block[i][i] = if i == 0 || i == b - 1 { -1.0 } else { -2.0 };
        if i + 1 < b {
            block[i][i + 1] = 1.0;
            block[i + 1][i] = 1.0;
        }
    }
    block
}

/// Dead-time part `A` of `Δ_τ = A/τ_dead + B/τ_sub`: a `[[-1, 1], [1, -1]]`
/// block on every dead-time link.
pub fn dead_time_part(params: &ExperimentParams) -> TridiagonalOperator {
    let a1 = vec![vec![-1.0, 1.0], vec![1.0, -1.0]];
    let blocks: Vec<_> = (1..=params.n_cycles)
        .map(|n| (params.node_index(n, 0) - 1, a1.clone()))
        .collect();
    tridiagonal_from_blocks(params.node_count(), &blocks)
}

/// Subpanel part `B`: a leading zero then one Neumann block per exposure.
pub fn subpanel_part(params: &ExperimentParams) -> TridiagonalOperator {
    let b1 = neumann_block(params.k_sub);
    let blocks: Vec<_> = (1..=params.n_cycles)
        .map(|n| (params.node_index(n, 0), b1.clone()))
        .collect();
    tridiagonal_from_blocks(params.node_count(), &blocks)
}

/// Eigenvalues `-4 sin²(πk / (2(K+1)))`, `k = 0..=K`, of the Neumann block.
pub fn b1_eigenvalues(k_sub: usize) -> Vec<f64> {
    let denom = 2.0 * (k_sub + 1) as f64;
    (0..=k_sub)
        .map(|k| {
            let s = (std::f64::consts::PI * k as f64 / denom).sin();
            -4.0 * s * s
        })
        .collect()
}

/// Upper bound `1/(D τ_dead) + 2/(D τ_sub)` on the top eigenvalue of the
/// prior gradient map.
pub fn max_eigenvalue_bound(params: &ExperimentParams) -> f64 {
    let d = params.diffusion;
    1.0 / (d * params.tau_dead) + 2.0 / (d * params.tau_sub())
}

/// Largest eigenvalue of a symmetric tridiagonal matrix by Sturm-sequence
/// bisection inside the Gershgorin interval.
pub fn largest_eigenvalue(op: &TridiagonalOperator) -> f64 {
    let m = op.size();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..m {
        let mut r = 0.0;
        if i > 0 {
            r += op.sub[i - 1].abs();
        }
        if i + 1 < m {
            r += op.sup[i].abs();
        }
        lo = lo.min(op.diag[i] - r);
        hi = hi.max(op.diag[i] + r);
    }
    let tiny = f64::EPSILON * (hi - lo).abs().max(1.0);
    // number of eigenvalues strictly below x
    let count_below = |x: f64| {
        let mut count = 0;
        let mut d = 1.0;
        for i in 0..m {
            let off2 = if i > 0 { op.sub[i - 1] * op.sup[i - 1] } else { 0.0 };
            d = op.diag[i] - x - if i > 0 { off2 / d } else { 0.0 };
            if d == 0.0 {
                d = -tiny;
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count_below(mid) < m {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Explicit step-size limit for Störmer–Verlet on the prior subsystem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CflCertificate {
    /// Oscillator frequency `sqrt(θ / (m D τ_sub))`.
    pub c: f64,
    /// `2 / c`; infinite when `θ = 0`.
    pub h_max: f64,
    pub h: f64,
    pub stable: bool,
}

pub fn cfl_certificate(params: &ExperimentParams, hmc: &HmcParams) -> CflCertificate {
    let c = (hmc.theta / (hmc.mass * params.diffusion * params.tau_sub())).sqrt();
    let h_max = if c > 0.0 { 2.0 / c } else { f64::INFINITY };
    CflCertificate {
        c,
        h_max,
        h: hmc.step,
        stable: hmc.step < h_max,
    }
}

/// Step-size limit from the exact top eigenvalue of the pinned prior
/// gradient map, `2 / sqrt(θ λ_max / m)`.
pub fn spectral_step_limit(problem: &PosteriorProblem, hmc: &HmcParams) -> f64 {
    let lambda = largest_eigenvalue(&problem.prior_hessian());
    let freq = (hmc.theta * lambda / hmc.mass).sqrt();
    if freq > 0.0 {
        2.0 / freq
    } else {
        f64::INFINITY
    }
}

/// Observed data together with the precomputed Laplacian.
///
/// When `measurements` is `None` the likelihood is switched off and the
/// target reduces to the random-walk prior.
#[derive(Clone, Debug)]
pub struct PosteriorProblem {
    pub params: ExperimentParams,
    pub measurements: Option<Measurements>,
    pub laplacian: TridiagonalOperator,
    pinned_laplacian: TridiagonalOperator,
}

impl PosteriorProblem {
    pub fn new(params: ExperimentParams, measurements: Measurements) -> Result<Self> {
        params.validate_for_inference()?;
        check_len(params.n_cycles, measurements.w.len())?;
        Ok(Self::build(params, Some(measurements)))
    }

    pub fn prior_only(params: ExperimentParams) -> Result<Self> {
        params.validate_for_inference()?;
        Ok(Self::build(params, None))
    }

    fn build(params: ExperimentParams, measurements: Option<Measurements>) -> Self {
        let laplacian = build_laplacian(&params);
        let mut pinned_laplacian = laplacian.clone();
        pinned_laplacian.diag[0] = 0.0;
        pinned_laplacian.sup[0] = 0.0;
        pinned_laplacian.sub[0] = 0.0;
        Self {
            params,
            measurements,
            laplacian,
            pinned_laplacian,
        }
    }

    pub fn node_count(&self) -> usize {
        self.params.node_count()
    }

    pub fn has_likelihood(&self) -> bool {
        self.measurements.is_some()
    }

    /// `Δ_τ` with the row and column of the pinned `q₀` zeroed: the Laplacian
    /// restricted to the free coordinates, padded with a zero slot.
    pub fn pinned_laplacian(&self) -> &TridiagonalOperator {
        &self.pinned_laplacian
    }

    /// Hessian `-(1/2D) Δ_τ` of the prior restricted to free coordinates.
    pub fn prior_hessian(&self) -> TridiagonalOperator {
        let m = self.node_count();
        let mut free = self.laplacian.scaled(-0.5 / self.params.diffusion);
        free.diag.remove(0);
        free.sub.remove(0);
        free.sup.remove(0);
        debug_assert_eq!(free.size(), m - 1);
        free
    }

    /// Sum of squared increments, weighted `1/(4Dτ)` per link.
    pub fn v_prior(&self, q: &[f64]) -> Result<f64> {
        check_len(self.node_count(), q.len())?;
        let p = &self.params;
        let dead = 1.0 / (4.0 * p.diffusion * p.tau_dead);
        let sub = 1.0 / (4.0 * p.diffusion * p.tau_sub());
        let mut total = 0.0;
        for n in 1..=p.n_cycles {
            let start = p.node_index(n, 0);
            total += dead * (q[start] - q[start - 1]).powi(2);
            let mut acc = 0.0;
            for k in 1..=p.k_sub {
                acc += (q[start + k] - q[start + k - 1]).powi(2);
            }
            total += sub * acc;
        }
        Ok(total)
    }

    /// `-(1/2D) Δ_τ q`.
    pub fn grad_v_prior(&self, q: &[f64]) -> Result<Vec<f64>> {
        check_len(self.node_count(), q.len())?;
        let mut out = vec![0.0; q.len()];
        self.grad_v_prior_into(q, &mut out);
        Ok(out)
    }

    pub fn grad_v_prior_into(&self, q: &[f64], out: &mut [f64]) {
        self.laplacian.matvec_into(q, out);
        let scale = -0.5 / self.params.diffusion;
        out.iter_mut().for_each(|g| *g *= scale);
    }

    /// `Σ_n u_n(q) - w_n log u_n(q)`; zero when the likelihood is disabled.
    pub fn v_like(&self, q: &[f64]) -> Result<f64> {
        check_len(self.node_count(), q.len())?;
        let Some(data) = &self.measurements else {
            return Ok(0.0);
        };
        let u = crate::model::signal_of(q, &self.params)?;
        Ok(u.iter()
            .zip(&data.w)
            .map(|(&un, &wn)| {
                if wn == 0 {
                    un
                } else {
                    un - wn as f64 * un.ln()
                }
            })
            .sum())
    }

    pub fn grad_v_like(&self, q: &[f64]) -> Result<Vec<f64>> {
        check_len(self.node_count(), q.len())?;
        let mut out = vec![0.0; q.len()];
        self.grad_v_like_into(q, &mut out);
        Ok(out)
    }

    /// `∂V_like/∂q_{n,k} = (1 - w_n/u_n) τ_sub c_k I'(q_{n,k})` with trapezoid
    /// weights `c_0 = c_K = 1/2`, `c_k = 1` otherwise.
    pub fn grad_v_like_into(&self, q: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        let Some(data) = &self.measurements else {
            return;
        };
        let p = &self.params;
        let k_sub = p.k_sub;
        let tau_sub = p.tau_sub();
        let inv_two_omega = 0.5 / p.omega;
        let slope = -p.i_ref / p.omega;
        for (n, &wn) in (1..=p.n_cycles).zip(&data.w) {
            let start = p.node_index(n, 0);
            let window = &q[start..=start + k_sub];
            let grad = &mut out[start..=start + k_sub];
            let mut weighted_sum = 0.0;
            for (k, (g, &x)) in grad.iter_mut().zip(window).enumerate() {
                let weight = if k == 0 || k == k_sub { 0.5 } else { 1.0 };
                let gauss = (-x * x * inv_two_omega).exp();
                weighted_sum += weight * (p.i_bg + p.i_ref * gauss);
                *g = weight * slope * x * gauss;
            }
            let u = tau_sub * weighted_sum;
            let factor = (1.0 - wn as f64 / u) * tau_sub;
            grad.iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn potential(&self, q: &[f64]) -> Result<f64> {
        Ok(self.v_like(q)? + self.v_prior(q)?)
    }

    pub fn grad_potential(&self, q: &[f64]) -> Result<Vec<f64>> {
        check_len(self.node_count(), q.len())?;
        let mut out = vec![0.0; q.len()];
        let mut scratch = vec![0.0; q.len()];
        self.grad_potential_into(q, &mut out, &mut scratch);
        Ok(out)
    }

    pub fn grad_potential_into(&self, q: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        self.grad_v_prior_into(q, out);
        if self.has_likelihood() {
            self.grad_v_like_into(q, scratch);
            out.iter_mut().zip(scratch.iter()).for_each(|(g, l)| *g += l);
        }
    }
}

fn kinetic(p: &[f64], mass: f64) -> f64 {
    p.iter().map(|x| x * x).sum::<f64>() / (2.0 * mass)
}

/// Total energy `V(q) + p·p / 2m`.
pub fn hamiltonian(q: &[f64], p: &[f64], problem: &PosteriorProblem, hmc: &HmcParams) -> Result<f64> {
    check_len(q.len(), p.len())?;
    Ok(problem.potential(q)? + kinetic(p, hmc.mass))
}

/// `V_like(q) + (1-θ) p·p / 2m`.
pub fn hamiltonian_like(
    q: &[f64],
    p: &[f64],
    problem: &PosteriorProblem,
    hmc: &HmcParams,
) -> Result<f64> {
    check_len(q.len(), p.len())?;
    Ok(problem.v_like(q)? + (1.0 - hmc.theta) * kinetic(p, hmc.mass))
}

/// `V_prior(q) + θ p·p / 2m`.
pub fn hamiltonian_prior(
    q: &[f64],
    p: &[f64],
    problem: &PosteriorProblem,
    hmc: &HmcParams,
) -> Result<f64> {
    check_len(q.len(), p.len())?;
    Ok(problem.v_prior(q)? + hmc.theta * kinetic(p, hmc.mass))
}
