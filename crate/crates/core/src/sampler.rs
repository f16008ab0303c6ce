//! HMC / reflection-within-Gibbs Markov chain over trajectories.
//!
//! Each iteration is one HMC update (fresh momentum, `L` integrator steps,
//! Metropolis accept on the energy change) followed by a sweep of head or
//! tail reflections through the origin, one proposal per node `(n, k)`.

use crate::error::{Error, Result};
use crate::integrators::{Integrator, PhaseState, Workspace};
use crate::model::{ExperimentParams, Trajectory};
use crate::posterior::{hamiltonian, HmcParams, PosteriorProblem};
use crate::rng::RandomStream;

/// Energies around one HMC update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub accepted: bool,
    pub h_before: f64,
    pub h_after: f64,
}

impl StepRecord {
    pub fn delta_h(&self) -> f64 {
        self.h_after - self.h_before
    }
}

#[derive(Clone, Debug, Default)]
pub struct Chain {
    /// Initial state followed by every `thin`-th iterate.
    pub samples: Vec<Trajectory>,
    pub records: Vec<StepRecord>,
    pub reflect_accepts: usize,
    pub reflect_proposals: usize,
    pub thin: usize,
}

impl Chain {
    pub fn accept_flags(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.accepted).collect()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.accepted).count() as f64 / self.records.len() as f64
    }
}

/// Which side of the split node a reflection negates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reflection {
    /// Every node at or before `t_{n,k}`.
    Head,
    /// Every node strictly after `t_{n,k}`.
    Tail,
}

fn split_index(params: &ExperimentParams, n: usize, k: usize) -> Result<usize> {
    if n < 1 || n > params.n_cycles || k < 1 || k > params.k_sub {
        return Err(Error::IndexOutOfRange(format!(
            "reflection node (n={n}, k={k}) outside 1..={} x 1..={}",
            params.n_cycles, params.k_sub
        )));
    }
    Ok(params.node_index(n, k))
}

fn reflect_in_place(q: &mut [f64], split: usize, side: Reflection) {
    let range = match side {
        Reflection::Head => 0..split + 1,
        Reflection::Tail => split + 1..q.len(),
    };
    q[range].iter_mut().for_each(|x| *x = -*x);
}

pub fn reflect(q: &Trajectory, params: &ExperimentParams, n: usize, k: usize, side: Reflection) -> Result<Trajectory> {
    let split = split_index(params, n, k)?;
    let mut out = q.clone();
    reflect_in_place(&mut out.values, split, side);
    Ok(out)
}

pub fn reflect_head(q: &Trajectory, params: &ExperimentParams, n: usize, k: usize) -> Result<Trajectory> {
    reflect(q, params, n, k, Reflection::Head)
}

pub fn reflect_tail(q: &Trajectory, params: &ExperimentParams, n: usize, k: usize) -> Result<Trajectory> {
    reflect(q, params, n, k, Reflection::Tail)
}

/// `log P(r(q)|w) - log P(q|w)` for a reflection split after node `split`.
///
/// The likelihood is even in every coordinate, so only the prior term of the
/// single increment crossing the split changes.
fn reflection_log_ratio(q: &[f64], split: usize, params: &ExperimentParams) -> f64 {
    if split + 1 >= q.len() {
        return 0.0;
    }
    // the link after the last subpanel of a cycle is a dead-time link
    let tau = if (split - 1) % (params.k_sub + 1) == params.k_sub {
        params.tau_dead
    } else {
        params.tau_sub()
    };
    -q[split] * q[split + 1] / (params.diffusion * tau)
}

/// Localised reflection log-ratio for node `(n, k)`.
pub fn reflection_ratio(q: &Trajectory, params: &ExperimentParams, n: usize, k: usize) -> Result<f64> {
    let split = split_index(params, n, k)?;
    Ok(reflection_log_ratio(&q.values, split, params))
}

/// Reusable sampler state for one chain.
pub struct Sampler<'a> {
    problem: &'a PosteriorProblem,
    hmc: HmcParams,
    integrator: Integrator,
    ws: Workspace,
    state: PhaseState,
    check_reflections: bool,
}

impl<'a> Sampler<'a> {
    pub fn new(problem: &'a PosteriorProblem, hmc: HmcParams) -> Result<Self> {
        hmc.validate()?;
        let m = problem.node_count();
        Ok(Self {
            integrator: Integrator::new(problem, &hmc)?,
            problem,
            hmc,
            ws: Workspace::new(m),
            state: PhaseState::new(vec![0.0; m], vec![0.0; m])?,
            check_reflections: cfg!(debug_assertions) && m <= 128,
        })
    }

    pub fn hmc(&self) -> &HmcParams {
        &self.hmc
    }

    /// One HMC update of `q` in place. Non-finite terminal energies reject.
    pub fn hmc_update(&mut self, q: &mut [f64], stream: &mut RandomStream) -> Result<StepRecord> {
        let sd = self.hmc.mass.sqrt();
        let state = &mut self.state;
        state.q.copy_from_slice(q);
        state.p[0] = 0.0;
        for p in state.p.iter_mut().skip(1) {
            *p = sd * stream.standard_normal();
        }
        let h_before = hamiltonian(&state.q, &state.p, self.problem, &self.hmc)?;
        self.integrator
            .integrate(state, self.problem, &self.hmc, &mut self.ws)?;
        let h_after = if state.is_finite() {
            hamiltonian(&state.q, &state.p, self.problem, &self.hmc)?
        } else {
            f64::NAN
        };
        let log_accept = if h_after.is_finite() {
            h_before - h_after
        } else {
            f64::NEG_INFINITY
        };
        let accepted = stream.uniform().ln() < log_accept;
        if accepted {
            q.copy_from_slice(&state.q);
        }
        Ok(StepRecord {
            accepted,
            h_before,
            h_after,
        })
    }

    /// Sweep of head (or tail, with probability ½) reflections over every
    /// `(n, k)`, updating `q` in place. Returns the number accepted.
    pub fn reflection_update(&self, q: &mut [f64], stream: &mut RandomStream) -> usize {
        reflection_sweep(q, self.problem, stream, self.check_reflections)
    }

    /// Runs `J` iterations from `init`, keeping every `thin`-th sample, and
    /// calls `observe(j, q)` after every iteration.
    pub fn run_with<F>(
        &mut self,
        init: &Trajectory,
        stream: &mut RandomStream,
        thin: usize,
        mut observe: F,
    ) -> Result<Chain>
    where
        F: FnMut(usize, &[f64]),
    {
        let params = &self.problem.params;
        if init.len() != params.node_count() {
            return Err(Error::Shape {
                expected: params.node_count(),
                actual: init.len(),
            });
        }
        if init.values[0] != 0.0 {
            return Err(Error::InvalidArgument("initial trajectory must have q0 = 0".into()));
        }
        let thin = thin.max(1);
        let j_total = self.hmc.chain_len;
        let mut chain = Chain {
            samples: vec![init.clone()],
            records: Vec::with_capacity(j_total),
            thin,
            ..Chain::default()
        };
        let mut q = init.values.clone();
        for j in 1..=j_total {
            let record = self.hmc_update(&mut q, stream)?;
            chain.records.push(record);
            chain.reflect_accepts += self.reflection_update(&mut q, stream);
            chain.reflect_proposals += params.n_cycles * params.k_sub;
            observe(j, &q);
            if j % thin == 0 {
                chain.samples.push(Trajectory { values: q.clone() });
            }
        }
        Ok(chain)
    }
}

fn reflection_sweep(
    q: &mut [f64],
    problem: &PosteriorProblem,
    stream: &mut RandomStream,
    check: bool,
) -> usize {
    let params = &problem.params;
    let side = if stream.bernoulli(0.5) {
        Reflection::Head
    } else {
        Reflection::Tail
    };
    let mut accepted = 0;
    for n in 1..=params.n_cycles {
        for k in 1..=params.k_sub {
            let split = params.node_index(n, k);
            let log_ratio = reflection_log_ratio(q, split, params);
            if check {
                let before = problem.potential(q).expect("shape checked");
                let mut r = q.to_vec();
                reflect_in_place(&mut r, split, side);
                let after = problem.potential(&r).expect("shape checked");
                let v_like_q = problem.v_like(q).expect("shape checked");
                let v_like_r = problem.v_like(&r).expect("shape checked");
                debug_assert_eq!(v_like_q, v_like_r, "likelihood not reflection invariant");
                debug_assert!(
                    ((before - after) - log_ratio).abs() <= 1e-8 * (1.0 + before.abs()),
                    "localised reflection ratio disagrees with recomputation"
                );
            }
            if stream.uniform().ln() < log_ratio {
                reflect_in_place(q, split, side);
                accepted += 1;
            }
        }
    }
    accepted
}

/// One HMC update with a freshly built integrator.
pub fn hmc_update(
    q: &Trajectory,
    problem: &PosteriorProblem,
    hmc: &HmcParams,
    stream: &mut RandomStream,
) -> Result<(Trajectory, StepRecord)> {
    let mut sampler = Sampler::new(problem, *hmc)?;
    let mut values = q.values.clone();
    let record = sampler.hmc_update(&mut values, stream)?;
    Ok((Trajectory { values }, record))
}

pub fn reflection_update(
    q: &Trajectory,
    problem: &PosteriorProblem,
    stream: &mut RandomStream,
) -> (Trajectory, usize) {
    let mut values = q.values.clone();
    let check = cfg!(debug_assertions) && values.len() <= 128;
    let accepted = reflection_sweep(&mut values, problem, stream, check);
    (Trajectory { values }, accepted)
}

/// `J = hmc.chain_len` iterations of HMC then reflection, keeping all samples.
pub fn run_chain(
    init: &Trajectory,
    problem: &PosteriorProblem,
    hmc: &HmcParams,
    stream: &mut RandomStream,
) -> Result<Chain> {
    Sampler::new(problem, *hmc)?.run_with(init, stream, 1, |_, _| {})
}
