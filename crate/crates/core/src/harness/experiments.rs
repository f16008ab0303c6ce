//! Drivers for each experiment. Every `run_*` function returns its data;
//! the matching `exp_*` function also writes CSVs and `run_meta`.

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;

use super::config::{Experiment, ExperimentConfig};
use super::output::{fmt_f64, OutputSink};
use super::{log_log_slope, primes_below_100};
use crate::error::{Error, Result};
use crate::integrators::{integrate_observed, sv_prior_step, Integrator, PhaseState, Workspace};
use crate::model::{sample_prior_trajectory, signal, sample_measurements, simulate, Simulation, TimeMesh, Trajectory};
use crate::posterior::{
    cfl_certificate, hamiltonian, hamiltonian_prior, spectral_step_limit, CflCertificate, HmcParams,
    PosteriorProblem, Scheme,
};
use crate::rng::RandomStream;
use crate::sampler::{Chain, Sampler};

/// Failure of an experiment run, split by exit-code class.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("numerical setup error: {0}")]
    Numerical(#[from] Error),
}

pub type HarnessResult<T> = std::result::Result<T, HarnessError>;

// Stream ids. Each experiment draws its ground truth and momenta from fixed,
// documented sub-streams of the configured seed.
const STREAM_DATA: u64 = 0;
const STREAM_MOMENTUM: u64 = 1;
const STREAM_COUNTS: u64 = 2;
const STREAM_CHAIN_SVEX: u64 = 3;
const STREAM_CHAIN_IMEX: u64 = 4;

fn gaussian_momentum(stream: &mut RandomStream, m: usize, mass: f64) -> Vec<f64> {
    let sd = mass.sqrt();
    let mut p: Vec<f64> = (0..m).map(|_| sd * stream.standard_normal()).collect();
    p[0] = 0.0;
    p
}

fn ground_truth(cfg: &ExperimentConfig) -> Result<(Simulation, PosteriorProblem)> {
    let mut stream = RandomStream::derived(cfg.hmc.seed, STREAM_DATA);
    let sim = simulate(&mut stream, &cfg.params)?;
    let problem = PosteriorProblem::new(cfg.params, sim.measurements.clone())?;
    Ok((sim, problem))
}

/// Step-size limits an explicit run should respect.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLimits {
    pub certificate: CflCertificate,
    /// Exact limit for Störmer–Verlet on the prior subsystem (kinetic θ/m).
    pub prior_spectral: f64,
    /// Exact limit from the prior part of the full system (kinetic 1/m).
    pub full_prior_spectral: f64,
}

pub fn step_limits(cfg: &ExperimentConfig) -> Result<StepLimits> {
    let problem = PosteriorProblem::prior_only(cfg.params)?;
    let full = HmcParams {
        theta: 1.0,
        ..cfg.hmc
    };
    Ok(StepLimits {
        certificate: cfl_certificate(&cfg.params, &cfg.hmc),
        prior_spectral: spectral_step_limit(&problem, &cfg.hmc),
        full_prior_spectral: spectral_step_limit(&problem, &full),
    })
}

// ---------------------------------------------------------------- simulate

pub fn exp_simulate(cfg: &ExperimentConfig, sink: &mut OutputSink) -> HarnessResult<Simulation> {
    cfg.params.validate()?;
    let mut stream = RandomStream::derived(cfg.hmc.seed, STREAM_DATA);
    let sim = simulate(&mut stream, &cfg.params)?;
    let mesh = TimeMesh::new(&cfg.params);
    write_counts(sink, "simulate", None, cfg, &mesh, &sim)?;
    sink.write_csv(
        "simulate",
        Some("trajectory"),
        &["node_index", "time_sec", "q_um"],
        sim.trajectory
            .values
            .iter()
            .zip(mesh.times())
            .enumerate()
            .map(|(i, (q, t))| vec![i.to_string(), fmt_f64(*t), fmt_f64(*q)]),
    )?;
    Ok(sim)
}

fn write_counts(
    sink: &mut OutputSink,
    stem: &str,
    part: Option<&str>,
    cfg: &ExperimentConfig,
    mesh: &TimeMesh,
    sim: &Simulation,
) -> HarnessResult<PathBuf> {
    let rows = (1..=cfg.params.n_cycles).map(|n| {
        vec![
            n.to_string(),
            fmt_f64(mesh.cycle_end(&cfg.params, n)),
            fmt_f64(sim.signal.u[n - 1]),
            sim.measurements.w[n - 1].to_string(),
        ]
    });
    Ok(sink.write_csv(stem, part, &["n", "t_n", "u_n", "w_n"], rows)?)
}

// ---------------------------------------------------------------- certify

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CertifyReport {
    pub limits: StepLimits,
}

impl CertifyReport {
    pub fn human_readable(&self) -> String {
        let c = &self.limits.certificate;
        format!(
            "oscillator frequency c = {:.4}\n\
             explicit step limit h_max = 2/c = {:.4}\n\
             requested step h = {}\n\
             verdict: {}\n\
             prior-subsystem limit from the exact top eigenvalue = {:.4}\n\
             full-system (kinetic 1/m) prior limit from the exact top eigenvalue = {:.4}\n",
            c.c,
            c.h_max,
            c.h,
            if c.stable { "stable" } else { "unstable" },
            self.limits.prior_spectral,
            self.limits.full_prior_spectral,
        )
    }
}

pub fn exp_certify(cfg: &ExperimentConfig, sink: &mut OutputSink) -> HarnessResult<CertifyReport> {
    let report = CertifyReport {
        limits: step_limits(cfg)?,
    };
    let c = report.limits.certificate;
    sink.write_csv(
        "certify",
        None,
        &["c", "h_max", "h", "stable"],
        [vec![fmt_f64(c.c), fmt_f64(c.h_max), fmt_f64(c.h), c.stable.to_string()]],
    )?;
    Ok(report)
}

// ---------------------------------------------------------------- infer

#[derive(Clone, Debug)]
pub struct InferResult {
    pub simulation: Simulation,
    pub svex: Chain,
    pub imex: Chain,
    pub limits: StepLimits,
}

/// Per-node standard deviation of `|q|` over the chain samples after the
/// initial state.
pub fn abs_spread(chain: &Chain) -> Vec<f64> {
    let draws = &chain.samples[1.min(chain.samples.len())..];
    let m = chain.samples.first().map_or(0, |s| s.len());
    let n = draws.len() as f64;
    (0..m)
        .map(|i| {
            let mean = draws.iter().map(|s| s.values[i].abs()).sum::<f64>() / n;
            let var = draws.iter().map(|s| (s.values[i].abs() - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            var.sqrt()
        })
        .collect()
}

pub fn run_infer(cfg: &ExperimentConfig) -> Result<InferResult> {
    cfg.validate()?;
    let (simulation, problem) = ground_truth(cfg)?;
    let limits = step_limits(cfg)?;
    let run = |scheme: Scheme, stream_id: u64| -> Result<Chain> {
        let hmc = cfg.hmc.with_scheme(scheme);
        let mut stream = RandomStream::derived(cfg.hmc.seed, stream_id);
        Sampler::new(&problem, hmc)?.run_with(&simulation.trajectory, &mut stream, cfg.thin, |_, _| {})
    };
    Ok(InferResult {
        svex: run(Scheme::Svex, STREAM_CHAIN_SVEX)?,
        imex: run(Scheme::Imex, STREAM_CHAIN_IMEX)?,
        simulation,
        limits,
    })
}

pub fn exp_infer(cfg: &ExperimentConfig, sink: &mut OutputSink) -> HarnessResult<InferResult> {
    let result = run_infer(cfg)?;
    let c = result.limits.certificate;
    if !c.stable || cfg.hmc.step >= result.limits.full_prior_spectral {
        eprintln!(
            "warning: explicit step h = {} may be unstable (certificate h_max = {:.4}, exact full-system limit = {:.4})",
            cfg.hmc.step, c.h_max, result.limits.full_prior_spectral
        );
    }
    let mesh = TimeMesh::new(&cfg.params);
    write_counts(sink, "infer", Some("counts"), cfg, &mesh, &result.simulation)?;
    sink.write_csv(
        "infer",
        Some("truth"),
        &["node_index", "time_sec", "abs_q_um"],
        result
            .simulation
            .trajectory
            .values
            .iter()
            .zip(mesh.times())
            .enumerate()
            .map(|(i, (q, t))| vec![i.to_string(), fmt_f64(*t), fmt_f64(q.abs())]),
    )?;
    for (name, chain) in [("svex", &result.svex), ("imex", &result.imex)] {
        write_traces(sink, "infer", name, chain)?;
        write_chain_records(sink, "infer", name, chain)?;
    }
    Ok(result)
}

fn write_traces(sink: &mut OutputSink, stem: &str, name: &str, chain: &Chain) -> HarnessResult<()> {
    let thin = chain.thin;
    let rows = chain.samples.iter().enumerate().flat_map(|(s, traj)| {
        traj.values
            .iter()
            .enumerate()
            .map(move |(i, q)| vec![(s * thin).to_string(), i.to_string(), fmt_f64(q.abs())])
    });
    sink.write_csv(stem, Some(&format!("{name}_traces")), &["step", "node_index", "abs_q_um"], rows)?;
    Ok(())
}

fn write_chain_records(sink: &mut OutputSink, stem: &str, name: &str, chain: &Chain) -> HarnessResult<()> {
    let rows = chain.records.iter().enumerate().map(|(j, r)| {
        vec![
            (j + 1).to_string(),
            (r.accepted as u8).to_string(),
            fmt_f64(r.h_before),
            fmt_f64(r.h_after),
        ]
    });
    sink.write_csv(stem, Some(&format!("{name}_chain")), &["step", "accepted", "H_before", "H_after"], rows)?;
    Ok(())
}

// ---------------------------------------------------------------- surrogate

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurrogatePoint {
    pub h: f64,
    pub b_full: f64,
    pub b_prior: f64,
}

/// Largest `‖q‖` over `ℓ = 0..=L`; infinite once the state overflows.
fn max_position_norm(mut state: PhaseState, steps: usize, mut step: impl FnMut(&PhaseState) -> Result<PhaseState>) -> Result<f64> {
    let mut b = state.position_norm();
    for _ in 0..steps {
        state = step(&state)?;
        if !state.is_finite() {
            return Ok(f64::INFINITY);
        }
        b = b.max(state.position_norm());
    }
    Ok(b)
}

/// Sweeps `cfg.sweep`; `L = 0` is allowed and gives `b = ‖q₀‖`.
pub fn run_surrogate(cfg: &ExperimentConfig) -> Result<Vec<SurrogatePoint>> {
    let mut checked = cfg.clone();
    checked.hmc.steps = cfg.hmc.steps.max(1);
    checked.validate()?;
    let (sim, problem) = ground_truth(cfg)?;
    let m = problem.node_count();
    let p0 = gaussian_momentum(&mut RandomStream::derived(cfg.hmc.seed, STREAM_MOMENTUM), m, cfg.hmc.mass);
    let start = PhaseState::new(sim.trajectory.values.clone(), p0)?;
    cfg.sweep
        .iter()
        .map(|&h| {
            let hmc = checked.hmc.with_step(h, checked.hmc.steps).with_scheme(Scheme::Svex);
            let full = Integrator::new(&problem, &hmc)?;
            let mut ws = Workspace::new(m);
            let b_full = max_position_norm(start.clone(), cfg.hmc.steps, |s| {
                let mut next = s.clone();
                full.step(&mut next, &problem, &hmc, &mut ws)?;
                Ok(next)
            })?;
            let b_prior = max_position_norm(start.clone(), cfg.hmc.steps, |s| Ok(sv_prior_step(s, &problem, &hmc)))?;
            Ok(SurrogatePoint { h, b_full, b_prior })
        })
        .collect()
}

/// Smallest swept step whose bound exceeds `threshold`.
pub fn first_blowup(points: &[SurrogatePoint], threshold: f64, full: bool) -> Option<f64> {
    points
        .iter()
        .find(|p| if full { p.b_full } else { p.b_prior } > threshold)
        .map(|p| p.h)
}

pub fn exp_surrogate(cfg: &ExperimentConfig, sink: &mut OutputSink) -> HarnessResult<Vec<SurrogatePoint>> {
    let points = run_surrogate(cfg)?;
    sink.write_csv(
        "surrogate",
        None,
        &["h", "b_full", "b_prior"],
        points.iter().map(|p| vec![fmt_f64(p.h), fmt_f64(p.b_full), fmt_f64(p.b_prior)]),
    )?;
    Ok(points)
}

// ---------------------------------------------------------------- stability

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StabilityRow {
    pub step: usize,
    pub eta: f64,
    pub q_probe: f64,
    pub p_probe: f64,
    /// Prior-subsystem energy along the explicit prior integration.
    pub h_prior: f64,
    /// Total energy along the IMEX full-posterior integration.
    pub h_imex: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityTrace {
    pub h: f64,
    pub probe: usize,
    pub rows: Vec<StabilityRow>,
}

impl StabilityTrace {
    fn ratio(&self, pick: impl Fn(&StabilityRow) -> f64) -> f64 {
        let e0 = pick(&self.rows[0]).abs();
        self.rows
            .iter()
            .map(|r| {
                let v = pick(r);
                if v.is_finite() {
                    v.abs() / e0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }

    /// `max_η |H_prior(η) / H_prior(0)|`.
    pub fn prior_energy_ratio(&self) -> f64 {
        self.ratio(|r| r.h_prior)
    }

    /// `max_η |H(η) / H(0)|` for the IMEX full-posterior run.
    pub fn imex_energy_ratio(&self) -> f64 {
        self.ratio(|r| r.h_imex)
    }
}

pub fn run_stability(cfg: &ExperimentConfig) -> Result<Vec<StabilityTrace>> {
    cfg.validate()?;
    let params = cfg.params;
    let m = params.node_count();
    let q0 = sample_prior_trajectory(&mut RandomStream::derived(cfg.hmc.seed, STREAM_DATA), &params)?;
    let p0 = gaussian_momentum(&mut RandomStream::derived(cfg.hmc.seed, STREAM_MOMENTUM), m, cfg.hmc.mass);
    let counts = sample_measurements(
        &mut RandomStream::derived(cfg.hmc.seed, STREAM_COUNTS),
        &signal(&q0, &params)?,
    )?;
    let problem = PosteriorProblem::new(params, counts)?;
    let probe = cfg.probe_node.unwrap_or(m / 2);
    let start = PhaseState::new(q0.values, p0)?;

    cfg.sweep
        .iter()
        .map(|&h| {
            let hmc = cfg.hmc.with_step(h, cfg.hmc.steps);
            let mut prior_states = Vec::with_capacity(hmc.steps + 1);
            let mut state = start.clone();
            prior_states.push(state.clone());
            for _ in 0..hmc.steps {
                state = sv_prior_step(&state, &problem, &hmc);
                prior_states.push(state.clone());
            }
            let imex = Integrator::new(&problem, &hmc.with_scheme(Scheme::Imex))?;
            let mut imex_energy = Vec::with_capacity(hmc.steps + 1);
            let mut state = start.clone();
            integrate_observed(&imex, &mut state, &problem, &hmc, |_, s| {
                imex_energy.push(hamiltonian(&s.q, &s.p, &problem, &hmc).unwrap_or(f64::NAN));
            })?;
            imex_energy.resize(hmc.steps + 1, f64::NAN);
            let rows = prior_states
                .iter()
                .zip(&imex_energy)
                .enumerate()
                .map(|(l, (s, &h_imex))| StabilityRow {
                    step: l,
                    eta: l as f64 * h,
                    q_probe: s.q[probe],
                    p_probe: s.p[probe],
                    h_prior: hamiltonian_prior(&s.q, &s.p, &problem, &hmc).unwrap_or(f64::NAN),
                    h_imex,
                })
                .collect();
            Ok(StabilityTrace { h, probe, rows })
        })
        .collect()
}

pub fn exp_stability(cfg: &ExperimentConfig, sink: &mut OutputSink) -> HarnessResult<Vec<StabilityTrace>> {
    let traces = run_stability(cfg)?;
    let rows = traces.iter().flat_map(|t| {
        t.rows.iter().map(move |r| {
            vec![
                fmt_f64(t.h),
                r.step.to_string(),
                fmt_f64(r.eta),
                t.probe.to_string(),
                fmt_f64(r.q_probe),
                fmt_f64(r.p_probe),
                fmt_f64(r.h_prior),
                fmt_f64(r.h_imex),
            ]
        })
    });
    sink.write_csv(
        "stability",
        None,
        &["h", "step", "eta", "probe_node", "q_i", "p_i", "H_prior", "H_imex"],
        rows,
    )?;
    Ok(traces)
}

// ---------------------------------------------------------------- efficiency

#[derive(Clone, Debug, PartialEq)]
pub struct EfficiencyPoint {
    pub h: f64,
    pub ar_svex: f64,
    pub ar_imex: f64,
    /// `(L, AR_L svex, AR_L imex)` for every prime `L`.
    pub per_l: Vec<(usize, f64, f64)>,
}

/// Prime-averaged terminal acceptance rate for every swept `h`.
///
/// Each `L` gets its own simulated ground truth, shared by both schemes and
/// every `h`; each chain of `updates` iterations starts from that truth.
pub fn run_efficiency(cfg: &ExperimentConfig) -> Result<Vec<EfficiencyPoint>> {
    cfg.validate()?;
    let primes = primes_below_100();
    let datasets: Vec<(Trajectory, PosteriorProblem)> = primes
        .iter()
        .map(|&l| {
            let mut stream = RandomStream::derived(cfg.hmc.seed, 1_000 + l as u64);
            let sim = simulate(&mut stream, &cfg.params)?;
            Ok((sim.trajectory, PosteriorProblem::new(cfg.params, sim.measurements)?))
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize, Scheme)> = (0..cfg.sweep.len())
        .flat_map(|hi| {
            (0..primes.len()).flat_map(move |li| [Scheme::Svex, Scheme::Imex].map(|s| (hi, li, s)))
        })
        .collect();
    let rates: Vec<f64> = jobs
        .par_iter()
        .map(|&(hi, li, scheme)| {
            let (truth, problem) = &datasets[li];
            let hmc = HmcParams {
                chain_len: cfg.updates,
                ..cfg.hmc.with_step(cfg.sweep[hi], primes[li]).with_scheme(scheme)
            };
            let id = 10_000_000 + 10_000 * hi as u64 + 10 * li as u64 + (scheme == Scheme::Imex) as u64;
            let mut stream = RandomStream::derived(cfg.hmc.seed, id);
            let chain = Sampler::new(problem, hmc)?.run_with(truth, &mut stream, usize::MAX, |_, _| {})?;
            Ok(chain.acceptance_rate())
        })
        .collect::<Result<_>>()?;

    let per_point = 2 * primes.len();
    Ok(cfg
        .sweep
        .iter()
        .enumerate()
        .map(|(hi, &h)| {
            let block = &rates[hi * per_point..(hi + 1) * per_point];
            let per_l: Vec<(usize, f64, f64)> = primes
                .iter()
                .enumerate()
                .map(|(li, &l)| (l, block[2 * li], block[2 * li + 1]))
                .collect();
            let n = per_l.len() as f64;
            EfficiencyPoint {
                h,
                ar_svex: per_l.iter().map(|x| x.1).sum::<f64>() / n,
                ar_imex: per_l.iter().map(|x| x.2).sum::<f64>() / n,
                per_l,
            }
        })
        .collect())
}

pub fn exp_efficiency(cfg: &ExperimentConfig, sink: &mut OutputSink) -> HarnessResult<Vec<EfficiencyPoint>> {
    let points = run_efficiency(cfg)?;
    sink.write_csv(
        "efficiency",
        None,
        &["h", "AR_svex", "AR_imex"],
        points.iter().map(|p| vec![fmt_f64(p.h), fmt_f64(p.ar_svex), fmt_f64(p.ar_imex)]),
    )?;
    let rows = points.iter().flat_map(|p| {
        p.per_l
            .iter()
            .map(move |(l, s, i)| vec![fmt_f64(p.h), l.to_string(), fmt_f64(*s), fmt_f64(*i)])
    });
    sink.write_csv("efficiency", Some("per_L"), &["h", "L", "AR_L_svex", "AR_L_imex"], rows)?;
    Ok(points)
}

// ---------------------------------------------------------------- convergence

pub const REFERENCE_STEP: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergencePoint {
    pub h: f64,
    pub steps: usize,
    pub q_err_svex: f64,
    pub q_err_imex: f64,
    pub h_err_svex: f64,
    pub h_err_imex: f64,
    pub svex_blowup: bool,
    pub imex_blowup: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceSlopes {
    pub q_svex: f64,
    pub q_imex: f64,
    pub h_svex: f64,
    pub h_imex: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceResult {
    pub points: Vec<ConvergencePoint>,
    pub slopes: ConvergenceSlopes,
    /// Swept points used in the slope fit (neither scheme blew up).
    pub fit_steps: Vec<f64>,
}

struct RunError {
    terminal_q: Vec<f64>,
    energy_err: f64,
    finite: bool,
}

fn integrate_for_error(
    problem: &PosteriorProblem,
    hmc: &HmcParams,
    start: &PhaseState,
) -> Result<RunError> {
    let integrator = Integrator::new(problem, hmc)?;
    let h0 = hamiltonian(&start.q, &start.p, problem, hmc)?;
    let mut energy_err: f64 = 0.0;
    let mut state = start.clone();
    integrate_observed(&integrator, &mut state, problem, hmc, |l, s| {
        if l > 0 {
            let e = hamiltonian(&s.q, &s.p, problem, hmc).unwrap_or(f64::NAN);
            energy_err = energy_err.max(if e.is_finite() { (h0 - e).abs() } else { f64::INFINITY });
        }
    })?;
    Ok(RunError {
        finite: state.is_finite() && energy_err.is_finite(),
        terminal_q: state.q,
        energy_err,
    })
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, |m, d| if d.is_nan() { f64::INFINITY } else { m.max(d) })
}

/// Errors at `Lh = 1` against an `h* = 1e-4` run of the same scheme.
///
/// A run counts as a blow-up when it overflows or its energy error exceeds
/// `|H(q₀, p₀)|`; blow-ups are excluded from the slope fit.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<ConvergenceResult> {
    cfg.validate()?;
    let (sim, problem) = ground_truth(cfg)?;
    let m = problem.node_count();
    let p0 = gaussian_momentum(&mut RandomStream::derived(cfg.hmc.seed, STREAM_MOMENTUM), m, cfg.hmc.mass);
    let start = PhaseState::new(sim.trajectory.values.clone(), p0)?;
    let h0 = hamiltonian(&start.q, &start.p, &problem, &cfg.hmc)?.abs();
    let steps_for = |h: f64| ((1.0 / h).round() as usize).max(1);

    let reference = |scheme: Scheme| {
        let hmc = cfg.hmc.with_step(REFERENCE_STEP, steps_for(REFERENCE_STEP)).with_scheme(scheme);
        integrate_for_error(&problem, &hmc, &start)
    };
    let ref_svex = reference(Scheme::Svex)?;
    let ref_imex = reference(Scheme::Imex)?;

    let points: Vec<ConvergencePoint> = cfg
        .sweep
        .par_iter()
        .map(|&h| {
            let steps = steps_for(h);
            let svex = integrate_for_error(&problem, &cfg.hmc.with_step(h, steps).with_scheme(Scheme::Svex), &start)?;
            let imex = integrate_for_error(&problem, &cfg.hmc.with_step(h, steps).with_scheme(Scheme::Imex), &start)?;
            Ok(ConvergencePoint {
                h,
                steps,
                q_err_svex: sup_distance(&svex.terminal_q, &ref_svex.terminal_q),
                q_err_imex: sup_distance(&imex.terminal_q, &ref_imex.terminal_q),
                h_err_svex: svex.energy_err,
                h_err_imex: imex.energy_err,
                svex_blowup: !svex.finite || svex.energy_err > h0,
                imex_blowup: !imex.finite || imex.energy_err > h0,
            })
        })
        .collect::<Result<_>>()?;

    let fit: Vec<&ConvergencePoint> = points.iter().filter(|p| !p.svex_blowup && !p.imex_blowup && p.h != REFERENCE_STEP).collect();
    let xs: Vec<f64> = fit.iter().map(|p| p.h).collect();
    let slope = |pick: fn(&ConvergencePoint) -> f64| {
        let ys: Vec<f64> = fit.iter().map(|p| pick(p)).collect();
        log_log_slope(&xs, &ys)
    };
    Ok(ConvergenceResult {
        slopes: ConvergenceSlopes {
            q_svex: slope(|p| p.q_err_svex),
            q_imex: slope(|p| p.q_err_imex),
            h_svex: slope(|p| p.h_err_svex),
            h_imex: slope(|p| p.h_err_imex),
        },
        fit_steps: xs,
        points,
    })
}

pub fn exp_convergence(cfg: &ExperimentConfig, sink: &mut OutputSink) -> HarnessResult<ConvergenceResult> {
    let result = run_convergence(cfg)?;
    sink.write_csv(
        "convergence",
        None,
        &["h", "L", "q_err_svex", "q_err_imex", "H_err_svex", "H_err_imex", "svex_blowup", "imex_blowup"],
        result.points.iter().map(|p| {
            vec![
                fmt_f64(p.h),
                p.steps.to_string(),
                fmt_f64(p.q_err_svex),
                fmt_f64(p.q_err_imex),
                fmt_f64(p.h_err_svex),
                fmt_f64(p.h_err_imex),
                p.svex_blowup.to_string(),
                p.imex_blowup.to_string(),
            ]
        }),
    )?;
    Ok(result)
}

// ---------------------------------------------------------------- complexity

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComplexityPoint {
    pub k_sub: usize,
    pub nodes: usize,
    pub wall_svex_sec: f64,
    pub wall_imex_sec: f64,
}

const TIMING_BUDGET_SEC: f64 = 2e-2;

/// One timed integrator: a start state and the number of back-to-back
/// integrations that fill the timing budget.
struct TimingCase<'a> {
    integrator: Integrator,
    problem: &'a PosteriorProblem,
    start: PhaseState,
    state: PhaseState,
    ws: Workspace,
    inner: usize,
}

impl<'a> TimingCase<'a> {
    fn new(integrator: Integrator, problem: &'a PosteriorProblem, start: PhaseState) -> Self {
        Self {
            ws: Workspace::new(start.len()),
            state: start.clone(),
            integrator,
            problem,
            start,
            inner: 1,
        }
    }

    fn run(&mut self, hmc: &HmcParams, count: usize) -> Result<f64> {
        let t0 = Instant::now();
        for _ in 0..count {
            self.state.q.copy_from_slice(&self.start.q);
            self.state.p.copy_from_slice(&self.start.p);
            self.integrator.integrate(&mut self.state, self.problem, hmc, &mut self.ws)?;
        }
        std::hint::black_box(&self.state);
        Ok(t0.elapsed().as_secs_f64())
    }

    fn calibrate(&mut self, hmc: &HmcParams) -> Result<()> {
        while self.run(hmc, self.inner)? < TIMING_BUDGET_SEC && self.inner < 1 << 24 {
            self.inner *= 2;
        }
        Ok(())
    }

    fn per_integration(&mut self, hmc: &HmcParams) -> Result<f64> {
        Ok(self.run(hmc, self.inner)? / self.inner as f64)
    }
}

/// Wall time of one `L`-step integration per swept `K`. After one untimed
/// warm-up round, repetitions go round-robin over all cases and each case
/// keeps its best time.
pub fn run_complexity(cfg: &ExperimentConfig) -> Result<Vec<ComplexityPoint>> {
    cfg.validate()?;
    let mut setups = Vec::with_capacity(cfg.sweep.len());
    for &k in &cfg.sweep {
        let k_sub = k.round() as usize;
        let params = cfg.params.with_sizes(cfg.params.n_cycles, k_sub);
        let mut stream = RandomStream::derived(cfg.hmc.seed, 100_000 + k_sub as u64);
        let sim = simulate(&mut stream, &params)?;
        let problem = PosteriorProblem::new(params, sim.measurements)?;
        let p0 = gaussian_momentum(&mut stream, params.node_count(), cfg.hmc.mass);
        let start = PhaseState::new(sim.trajectory.values, p0)?;
        setups.push((k_sub, problem, start));
    }
    let mut cases = Vec::with_capacity(2 * setups.len());
    for (_, problem, start) in &setups {
        for scheme in [Scheme::Svex, Scheme::Imex] {
            let integrator = Integrator::new(problem, &cfg.hmc.with_scheme(scheme))?;
            let mut case = TimingCase::new(integrator, problem, start.clone());
            case.calibrate(&cfg.hmc)?;
            cases.push(case);
        }
    }
    for case in cases.iter_mut() {
        case.per_integration(&cfg.hmc)?;
    }
    let mut best = vec![f64::INFINITY; cases.len()];
    for _ in 0..cfg.reps.max(1) {
        for (case, b) in cases.iter_mut().zip(best.iter_mut()) {
            *b = b.min(case.per_integration(&cfg.hmc)?);
        }
    }
    Ok(setups
        .iter()
        .enumerate()
        .map(|(i, (k_sub, problem, _))| ComplexityPoint {
            k_sub: *k_sub,
            nodes: problem.node_count(),
            wall_svex_sec: best[2 * i],
            wall_imex_sec: best[2 * i + 1],
        })
        .collect())
}

pub fn exp_complexity(cfg: &ExperimentConfig, sink: &mut OutputSink) -> HarnessResult<Vec<ComplexityPoint>> {
    let points = run_complexity(cfg)?;
    sink.write_csv(
        "complexity",
        None,
        &["K", "M", "wall_svex_sec", "wall_imex_sec"],
        points.iter().map(|p| {
            vec![
                p.k_sub.to_string(),
                p.nodes.to_string(),
                fmt_f64(p.wall_svex_sec),
                fmt_f64(p.wall_imex_sec),
            ]
        }),
    )?;
    Ok(points)
}

// ---------------------------------------------------------------- dispatch

/// Runs one experiment, writes its CSVs and `run_meta`, and returns the
/// human-readable summary printed by the CLI.
pub fn run_experiment(cfg: &ExperimentConfig, sink: &mut OutputSink) -> HarnessResult<String> {
    let t0 = Instant::now();
    let mut extra: Vec<(String, String)> = Vec::new();
    let summary = match cfg.experiment {
        Experiment::Simulate => {
            let sim = exp_simulate(cfg, sink)?;
            let total: u64 = sim.measurements.w.iter().sum();
            format!("simulated {} cycles, {} photons", sim.measurements.w.len(), total)
        }
        Experiment::Certify => exp_certify(cfg, sink)?.human_readable(),
        Experiment::Infer => {
            let r = exp_infer(cfg, sink)?;
            extra.push(("thin".into(), cfg.thin.to_string()));
            extra.push(("samples_per_chain".into(), r.svex.samples.len().to_string()));
            extra.push(("reflection_accept_rate_svex".into(), ratio(r.svex.reflect_accepts, r.svex.reflect_proposals)));
            format!(
                "acceptance rate svex {:.3}, imex {:.3}",
                r.svex.acceptance_rate(),
                r.imex.acceptance_rate()
            )
        }
        Experiment::Surrogate => {
            let pts = exp_surrogate(cfg, sink)?;
            let show = |v: Option<f64>| v.map_or("none".to_string(), |h| h.to_string());
            format!(
                "first h with b > 1e6: full {}, prior {}",
                show(first_blowup(&pts, 1e6, true)),
                show(first_blowup(&pts, 1e6, false))
            )
        }
        Experiment::Stability => {
            let traces = exp_stability(cfg, sink)?;
            traces
                .iter()
                .map(|t| {
                    format!(
                        "h = {}: max H_prior ratio {:.3e}, max IMEX H ratio {:.3e}",
                        t.h,
                        t.prior_energy_ratio(),
                        t.imex_energy_ratio()
                    )
                })
                .collect::<Vec<_>>()
                .join("\n")
        }
        Experiment::Efficiency => {
            extra.push(("updates_per_point".into(), cfg.updates.to_string()));
            extra.push(("L_set".into(), "primes < 100".into()));
            exp_efficiency(cfg, sink)?
                .iter()
                .map(|p| format!("h = {}: AR svex {:.3}, AR imex {:.3}", p.h, p.ar_svex, p.ar_imex))
                .collect::<Vec<_>>()
                .join("\n")
        }
        Experiment::Convergence => {
            let r = exp_convergence(cfg, sink)?;
            extra.push(("reference_step".into(), REFERENCE_STEP.to_string()));
            extra.push(("fit_points".into(), r.fit_steps.len().to_string()));
            format!(
                "slopes: q_err svex {:.3}, imex {:.3}; H_err svex {:.3}, imex {:.3}",
                r.slopes.q_svex, r.slopes.q_imex, r.slopes.h_svex, r.slopes.h_imex
            )
        }
        Experiment::Complexity => {
            let pts = exp_complexity(cfg, sink)?;
            let ks: Vec<f64> = pts.iter().map(|p| p.k_sub as f64).collect();
            let sv: Vec<f64> = pts.iter().map(|p| p.wall_svex_sec).collect();
            let im: Vec<f64> = pts.iter().map(|p| p.wall_imex_sec).collect();
            format!(
                "log-log slope of wall time vs K: svex {:.3}, imex {:.3}",
                log_log_slope(&ks, &sv),
                log_log_slope(&ks, &im)
            )
        }
    };
    sink.write_meta(cfg, t0.elapsed().as_secs_f64(), &extra)?;
    Ok(summary)
}

fn ratio(a: usize, b: usize) -> String {
    if b == 0 {
        "0".into()
    } else {
        format!("{}", a as f64 / b as f64)
    }
}
