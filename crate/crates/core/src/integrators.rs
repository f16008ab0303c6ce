//! Symplectic one-step maps and their L-step compositions.
//!
//! | map                    | system     | method                          |
//! |------------------------|------------|---------------------------------|
//! | [`sv_full_step`]       | full       | Störmer–Verlet (SVEX)           |
//! | [`sv_likelihood_step`] | likelihood | Störmer–Verlet, kinetic (1-θ)/m |
//! | [`sv_prior_step`]      | prior      | Störmer–Verlet, kinetic θ/m     |
//! | [`midpoint_prior_step`]| prior      | implicit midpoint (two Thomas solves) |
//!
//! The IMEX step is the Strang composition χ_{h/2}^MP ∘ ψ_h^SV ∘ χ_{h/2}^MP.
//!
//! Slot 0 holds the pinned initial position. Its momentum is zero, kicks and
//! drifts skip it, and the midpoint matrices act on the free coordinates only,
//! so every map here is a map on the pinned subspace.

use crate::error::{check_len, Error, Result};
use crate::posterior::{HmcParams, PosteriorProblem, Scheme};
use crate::tridiag::TridiagonalOperator;

/// Phase-space point `(q, p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhaseState {
    pub fn new(q: Vec<f64>, mut p: Vec<f64>) -> Result<Self> {
        check_len(q.len(), p.len())?;
        if q.is_empty() {
            return Err(Error::InvalidArgument("empty phase state".into()));
        }
        p[0] = 0.0;
        Ok(Self { q, p })
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn negate_momentum(&mut self) {
        self.p.iter_mut().for_each(|x| *x = -*x);
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.p).all(|x| x.is_finite())
    }

    pub fn position_norm(&self) -> f64 {
        self.q.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Scratch buffers reused across steps, plus a gradient-evaluation counter.
#[derive(Clone, Debug)]
pub struct Workspace {
    grad: Vec<f64>,
    scratch: Vec<f64>,
    rhs: Vec<f64>,
    thomas: Vec<f64>,
    pub grad_evals: usize,
}

impl Workspace {
    pub fn new(m: usize) -> Self {
        Self {
            grad: vec![0.0; m],
            scratch: vec![0.0; m],
            rhs: vec![0.0; m],
            thomas: vec![0.0; m],
            grad_evals: 0,
        }
    }
}

/// Which potential a Störmer–Verlet kick uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Force {
    Full,
    Likelihood,
    Prior,
}

fn eval_force(force: Force, problem: &PosteriorProblem, q: &[f64], ws: &mut Workspace) {
    match force {
        Force::Full => problem.grad_potential_into(q, &mut ws.grad, &mut ws.scratch),
        Force::Likelihood => problem.grad_v_like_into(q, &mut ws.grad),
        Force::Prior => problem.grad_v_prior_into(q, &mut ws.grad),
    }
    ws.grad[0] = 0.0;
    ws.grad_evals += 1;
}

fn kick(p: &mut [f64], grad: &[f64], scale: f64) {
    p.iter_mut().zip(grad).skip(1).for_each(|(pi, g)| *pi -= scale * g);
}

fn drift(q: &mut [f64], p: &[f64], scale: f64) {
    q.iter_mut().zip(p).skip(1).for_each(|(qi, pi)| *qi += scale * pi);
}

/// Generic Störmer–Verlet step for `H = V(q) + κ p·p/2` with a caller-supplied
/// gradient. Slot 0 is held fixed.
pub fn verlet_step_with<F>(state: &mut PhaseState, h: f64, kinetic_scale: f64, mut grad: F)
where
    F: FnMut(&[f64], &mut [f64]),
{
    let mut g = vec![0.0; state.len()];
    grad(&state.q, &mut g);
    g[0] = 0.0;
    kick(&mut state.p, &g, 0.5 * h);
    drift(&mut state.q, &state.p, h * kinetic_scale);
    grad(&state.q, &mut g);
    g[0] = 0.0;
    kick(&mut state.p, &g, 0.5 * h);
}

fn verlet_in_place(
    state: &mut PhaseState,
    problem: &PosteriorProblem,
    force: Force,
    h: f64,
    kinetic_scale: f64,
    ws: &mut Workspace,
) {
    eval_force(force, problem, &state.q, ws);
    kick(&mut state.p, &ws.grad, 0.5 * h);
    drift(&mut state.q, &state.p, h * kinetic_scale);
    eval_force(force, problem, &state.q, ws);
    kick(&mut state.p, &ws.grad, 0.5 * h);
}

/// φ_h^SVEX: one Störmer–Verlet step of the full Hamiltonian.
pub fn sv_full_step(state: &PhaseState, problem: &PosteriorProblem, hmc: &HmcParams) -> PhaseState {
    let mut out = state.clone();
    let mut ws = Workspace::new(state.len());
    verlet_in_place(&mut out, problem, Force::Full, hmc.step, 1.0 / hmc.mass, &mut ws);
    out
}

/// ψ_h^SV: one Störmer–Verlet step of the likelihood subsystem.
pub fn sv_likelihood_step(
    state: &PhaseState,
    problem: &PosteriorProblem,
    hmc: &HmcParams,
) -> PhaseState {
    let mut out = state.clone();
    let mut ws = Workspace::new(state.len());
    let kinetic = (1.0 - hmc.theta) / hmc.mass;
    verlet_in_place(&mut out, problem, Force::Likelihood, hmc.step, kinetic, &mut ws);
    out
}

/// χ_h^SV: one Störmer–Verlet step of the prior subsystem.
pub fn sv_prior_step(state: &PhaseState, problem: &PosteriorProblem, hmc: &HmcParams) -> PhaseState {
    let mut out = state.clone();
    let mut ws = Workspace::new(state.len());
    let kinetic = hmc.theta / hmc.mass;
    verlet_in_place(&mut out, problem, Force::Prior, hmc.step, kinetic, &mut ws);
    out
}

/// Implicit-midpoint matrices for the prior subsystem at one step size.
///
/// With `a = θh²/(8Dm)`: `lhs = I - aΔ`, `rhs_op = I + aΔ`,
/// `scaled_lap = (h/2D)Δ`, all built from the pinned Laplacian.
#[derive(Clone, Debug)]
pub struct MidpointSystem {
    pub lhs: TridiagonalOperator,
    pub rhs_op: TridiagonalOperator,
    pub scaled_lap: TridiagonalOperator,
    pub step: f64,
    drift_scale: f64,
}

impl MidpointSystem {
    pub fn new(problem: &PosteriorProblem, step: f64, hmc: &HmcParams) -> Result<Self> {
        if !(step > 0.0) {
            return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
        }
        let d = problem.params.diffusion;
        let a = hmc.theta * step * step / (8.0 * d * hmc.mass);
        let lap = problem.pinned_laplacian();
        let lhs = lap.shifted(1.0, -a);
        if !lhs.is_strictly_diagonally_dominant() {
            return Err(Error::InvalidArgument(
                "midpoint system matrix is not strictly diagonally dominant".into(),
            ));
        }
        Ok(Self {
            rhs_op: lap.shifted(1.0, a),
            scaled_lap: lap.scaled(step / (2.0 * d)),
            lhs,
            step,
            drift_scale: hmc.theta * step / hmc.mass,
        })
    }

    fn step_in_place(&self, state: &mut PhaseState, ws: &mut Workspace) -> Result<()> {
        // momentum right-hand side needs the old q, so build it first
        self.rhs_op.matvec_into(&state.p, &mut ws.rhs);
        self.scaled_lap.matvec_into(&state.q, &mut ws.scratch);
        ws.rhs.iter_mut().zip(&ws.scratch).for_each(|(r, s)| *r += s);

        self.rhs_op.matvec_into(&state.q, &mut ws.scratch);
        for (i, (qi, pi)) in ws.scratch.iter().zip(&state.p).enumerate().skip(1) {
            state.q[i] = qi + self.drift_scale * pi;
        }
        state.q[0] = ws.scratch[0];
        self.lhs.thomas_solve_in_place(&mut state.q, &mut ws.thomas)?;

        state.p.copy_from_slice(&ws.rhs);
        self.lhs.thomas_solve_in_place(&mut state.p, &mut ws.thomas)?;
        state.p[0] = 0.0;
        Ok(())
    }
}

/// χ_h^MP: one implicit-midpoint step of the prior subsystem.
pub fn midpoint_prior_step(state: &PhaseState, sys: &MidpointSystem) -> Result<PhaseState> {
    let mut out = state.clone();
    let mut ws = Workspace::new(state.len());
    sys.step_in_place(&mut out, &mut ws)?;
    Ok(out)
}

/// Cached midpoint systems for a fixed step `h`: one at `h`, one at `h/2`.
#[derive(Clone, Debug)]
pub struct ImexSystems {
    pub full: MidpointSystem,
    pub half: MidpointSystem,
}

impl ImexSystems {
    pub fn new(problem: &PosteriorProblem, hmc: &HmcParams) -> Result<Self> {
        Ok(Self {
            full: MidpointSystem::new(problem, hmc.step, hmc)?,
            half: MidpointSystem::new(problem, 0.5 * hmc.step, hmc)?,
        })
    }
}

/// A full-system integrator ready to run repeated proposals.
#[derive(Clone, Debug)]
pub enum Integrator {
    Svex,
    Imex(ImexSystems),
}

impl Integrator {
    pub fn new(problem: &PosteriorProblem, hmc: &HmcParams) -> Result<Self> {
        hmc.validate()?;
        Ok(match hmc.scheme {
            Scheme::Svex => Integrator::Svex,
            Scheme::Imex => Integrator::Imex(ImexSystems::new(problem, hmc)?),
        })
    }

    pub fn scheme(&self) -> Scheme {
        match self {
            Integrator::Svex => Scheme::Svex,
            Integrator::Imex(_) => Scheme::Imex,
        }
    }

    /// `L` telescoped steps, in place.
    pub fn integrate(
        &self,
        state: &mut PhaseState,
        problem: &PosteriorProblem,
        hmc: &HmcParams,
        ws: &mut Workspace,
    ) -> Result<()> {
        match self {
            Integrator::Svex => {
                leapfrog(state, problem, hmc, ws);
                Ok(())
            }
            Integrator::Imex(sys) => imex_telescoped(state, problem, hmc, sys, ws),
        }
    }

    /// One untelescoped step, in place.
    pub fn step(
        &self,
        state: &mut PhaseState,
        problem: &PosteriorProblem,
        hmc: &HmcParams,
        ws: &mut Workspace,
    ) -> Result<()> {
        match self {
            Integrator::Svex => {
                verlet_in_place(state, problem, Force::Full, hmc.step, 1.0 / hmc.mass, ws);
                Ok(())
            }
            Integrator::Imex(sys) => {
                let kinetic = (1.0 - hmc.theta) / hmc.mass;
                sys.half.step_in_place(state, ws)?;
                verlet_in_place(state, problem, Force::Likelihood, hmc.step, kinetic, ws);
                sys.half.step_in_place(state, ws)
            }
        }
    }
}

fn leapfrog(state: &mut PhaseState, problem: &PosteriorProblem, hmc: &HmcParams, ws: &mut Workspace) {
    let h = hmc.step;
    let inv_mass = 1.0 / hmc.mass;
    eval_force(Force::Full, problem, &state.q, ws);
    kick(&mut state.p, &ws.grad, 0.5 * h);
    for l in 0..hmc.steps {
        drift(&mut state.q, &state.p, h * inv_mass);
        eval_force(Force::Full, problem, &state.q, ws);
        let scale = if l + 1 < hmc.steps { h } else { 0.5 * h };
        kick(&mut state.p, &ws.grad, scale);
    }
}

fn imex_telescoped(
    state: &mut PhaseState,
    problem: &PosteriorProblem,
    hmc: &HmcParams,
    sys: &ImexSystems,
    ws: &mut Workspace,
) -> Result<()> {
    let kinetic = (1.0 - hmc.theta) / hmc.mass;
    sys.half.step_in_place(state, ws)?;
    for l in 0..hmc.steps {
        verlet_in_place(state, problem, Force::Likelihood, hmc.step, kinetic, ws);
        if l + 1 < hmc.steps {
            sys.full.step_in_place(state, ws)?;
        }
    }
    sys.half.step_in_place(state, ws)
}

/// (φ_h^IMEX)^L, telescoped.
pub fn imex_l_steps(
    state: &PhaseState,
    problem: &PosteriorProblem,
    hmc: &HmcParams,
) -> Result<PhaseState> {
    let sys = ImexSystems::new(problem, hmc)?;
    let mut out = state.clone();
    let mut ws = Workspace::new(state.len());
    imex_telescoped(&mut out, problem, hmc, &sys, &mut ws)?;
    Ok(out)
}

/// (φ_h^SVEX)^L with leapfrog folding of the inner half kicks.
pub fn svex_l_steps(state: &PhaseState, problem: &PosteriorProblem, hmc: &HmcParams) -> PhaseState {
    let mut out = state.clone();
    let mut ws = Workspace::new(state.len());
    leapfrog(&mut out, problem, hmc, &mut ws);
    out
}

/// Runs `L` untelescoped steps, calling `observe(ℓ, state)` for `ℓ = 0..=L`.
/// Stops early when the state becomes non-finite; returns the steps taken.
pub fn integrate_observed<F>(
    integrator: &Integrator,
    state: &mut PhaseState,
    problem: &PosteriorProblem,
    hmc: &HmcParams,
    mut observe: F,
) -> Result<usize>
where
    F: FnMut(usize, &PhaseState),
{
    let mut ws = Workspace::new(state.len());
    observe(0, state);
    for l in 1..=hmc.steps {
        integrator.step(state, problem, hmc, &mut ws)?;
        observe(l, state);
        if !state.is_finite() {
            return Ok(l);
        }
    }
    Ok(hmc.steps)
}
