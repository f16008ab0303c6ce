//! Forward model: Gaussian PSF, photon intensity, the two-scale time mesh,
//! trapezoid signal quadrature, the random-walk trajectory prior, and Poisson
//! photon counts.
//!
//! Trajectories are stored flat with `q[0]` the pinned initial position and
//! `q[node_index(n, k)]` the position at `t_{n,k}` for `n = 1..=N`, `k = 0..=K`.
//! The end of one exposure and the start of the next dead-time link share a
//! storage cell.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng::RandomStream;

/// Physical constants, optics and mesh sizes of one experiment.
///
/// Units: positions in μm, times in seconds, rates in photons/sec.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentParams {
    /// Diffusion coefficient (μm²/sec).
    pub diffusion: f64,
    /// Peak photon rate of the PSF (photons/sec).
    pub i_ref: f64,
    /// Background photon rate (photons/sec).
    pub i_bg: f64,
    /// Optical waist; enters the PSF as `exp(-x² / (2ω))`.
    pub omega: f64,
    pub tau_dead: f64,
    pub tau_exp: f64,
    /// Number of duty cycles.
    pub n_cycles: usize,
    /// Trapezoid subpanels per exposure.
    pub k_sub: usize,
}

impl Default for ExperimentParams {
    /// Typical in vitro values for free fluorescent dyes, with `N = K = 20`.
    fn default() -> Self {
        Self {
            diffusion: 5.0e2,
            i_ref: 5.0e4,
            i_bg: 1.0e3,
            omega: 2.3e-1,
            tau_dead: 1.0e-6,
            tau_exp: 9.0e-5,
            n_cycles: 20,
            k_sub: 20,
        }
    }
}

impl ExperimentParams {
    pub fn with_sizes(mut self, n_cycles: usize, k_sub: usize) -> Self {
        self.n_cycles = n_cycles;
        self.k_sub = k_sub;
        self
    }

    pub fn tau_sub(&self) -> f64 {
        self.tau_exp / self.k_sub as f64
    }

    /// Number of trajectory nodes `N(K+1) + 1`.
    pub fn node_count(&self) -> usize {
        self.n_cycles * (self.k_sub + 1) + 1
    }

    /// Flat index of node `(n, k)`, `1 ≤ n ≤ N`, `0 ≤ k ≤ K`.
    pub fn node_index(&self, n: usize, k: usize) -> usize {
        debug_assert!(n >= 1 && n <= self.n_cycles && k <= self.k_sub);
        1 + (n - 1) * (self.k_sub + 1) + k
    }

    /// Strict positivity of every rate and duration, and nonzero mesh sizes.
    /// A zero diffusion coefficient is allowed here (forward simulation only).
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("I_ref", self.i_ref),
            ("I_bg", self.i_bg),
            ("omega", self.omega),
            ("tau_dead", self.tau_dead),
            ("tau_exp", self.tau_exp),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive and finite, got {value}"
                )));
            }
        }
        if !(self.diffusion >= 0.0) || !self.diffusion.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "D must be nonnegative and finite, got {}",
                self.diffusion
            )));
        }
        if self.n_cycles == 0 || self.k_sub == 0 {
            return Err(Error::InvalidArgument(format!(
                "N and K must be at least 1, got N={} K={}",
                self.n_cycles, self.k_sub
            )));
        }
        Ok(())
    }

    /// Validation for inference, where the prior precision needs `D > 0`.
    pub fn validate_for_inference(&self) -> Result<()> {
        self.validate()?;
        if !(self.diffusion > 0.0) {
            return Err(Error::InvalidArgument(
                "inference requires a strictly positive diffusion coefficient".into(),
            ));
        }
        Ok(())
    }

    /// True when the subpanel spacing exceeds the dead time, in which case the
    /// dead-time links dominate the stiffness of the prior.
    pub fn subpanel_exceeds_dead_time(&self) -> bool {
        self.tau_sub() > self.tau_dead
    }
}

/// Node times of the two-scale mesh, starting at `t₀ = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeMesh {
    times: Vec<f64>,
}

impl TimeMesh {
    pub fn new(params: &ExperimentParams) -> Self {
        let tau_sub = params.tau_sub();
        let mut times = Vec::with_capacity(params.node_count());
        times.push(0.0);
        for n in 1..=params.n_cycles {
            // exact cycle boundaries avoid accumulated drift
            let start = (n - 1) as f64 * (params.tau_dead + params.tau_exp) + params.tau_dead;
            for k in 0..=params.k_sub {
                times.push(start + k as f64 * tau_sub);
            }
        }
        Self { times }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Measurement time `t_n`, the end of exposure `n`.
    pub fn cycle_end(&self, params: &ExperimentParams, n: usize) -> f64 {
        self.times[params.node_index(n, params.k_sub)]
    }
}

/// Discrete molecule path on the two-scale mesh, in μm.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub values: Vec<f64>,
}

impl Trajectory {
    pub fn new(values: Vec<f64>, params: &ExperimentParams) -> Result<Self> {
        check_len(params.node_count(), values.len())?;
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "trajectory entries must be finite, found {bad}"
            )));
        }
        Ok(Self { values })
    }

    pub fn zeros(params: &ExperimentParams) -> Self {
        Self {
            values: vec![0.0; params.node_count()],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Expected photon counts per duty cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    pub u: Vec<f64>,
}

/// Photon counts per duty cycle.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Measurements {
    pub w: Vec<u64>,
}

impl Measurements {
    pub fn zeros(n: usize) -> Self {
        Self { w: vec![0; n] }
    }
}

pub fn psf(x: f64, omega: f64) -> f64 {
    (-x * x / (2.0 * omega)).exp()
}

pub fn intensity(x: f64, params: &ExperimentParams) -> f64 {
    params.i_bg + params.i_ref * psf(x, params.omega)
}

/// `dI/dx`.
pub fn intensity_derivative(x: f64, params: &ExperimentParams) -> f64 {
    -(params.i_ref * x / params.omega) * psf(x, params.omega)
}

/// Composite trapezoid rule over each exposure window `q_{n,0..=K}`.
pub fn signal(traj: &Trajectory, params: &ExperimentParams) -> Result<Signal> {
    signal_of(&traj.values, params).map(|u| Signal { u })
}

pub(crate) fn signal_of(q: &[f64], params: &ExperimentParams) -> Result<Vec<f64>> {
    check_len(params.node_count(), q.len())?;
    let k_sub = params.k_sub;
    let half = 0.5 * params.tau_sub();
    let u = (1..=params.n_cycles)
        .map(|n| {
            let start = params.node_index(n, 0);
            let window = &q[start..=start + k_sub];
            let mut acc = 0.0;
            let mut prev = intensity(window[0], params);
            for &x in &window[1..] {
                let cur = intensity(x, params);
                acc += prev + cur;
                prev = cur;
            }
            half * acc
        })
        .collect();
    Ok(u)
}

/// Ancestral draw from the pinned Gaussian random walk, `q₀ = 0`.
pub fn sample_prior_trajectory(
    stream: &mut RandomStream,
    params: &ExperimentParams,
) -> Result<Trajectory> {
    params.validate()?;
    let dead_var = 2.0 * params.diffusion * params.tau_dead;
    let sub_var = 2.0 * params.diffusion * params.tau_sub();
    let mut values = Vec::with_capacity(params.node_count());
    let mut last = 0.0;
    values.push(last);
    for _ in 0..params.n_cycles {
        last = stream.normal(last, dead_var)?;
        values.push(last);
        for _ in 0..params.k_sub {
            last = stream.normal(last, sub_var)?;
            values.push(last);
        }
    }
    Ok(Trajectory { values })
}

pub fn sample_measurements(stream: &mut RandomStream, u: &Signal) -> Result<Measurements> {
    let w = u
        .u
        .iter()
        .map(|&mean| stream.poisson(mean))
        .collect::<Result<Vec<_>>>()?;
    Ok(Measurements { w })
}

/// Ground-truth trajectory, its signal, and simulated counts.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub trajectory: Trajectory,
    pub signal: Signal,
    pub measurements: Measurements,
}

pub fn simulate(stream: &mut RandomStream, params: &ExperimentParams) -> Result<Simulation> {
    let trajectory = sample_prior_trajectory(stream, params)?;
    let signal = signal(&trajectory, params)?;
    let measurements = sample_measurements(stream, &signal)?;
    Ok(Simulation {
        trajectory,
        signal,
        measurements,
    })
}
