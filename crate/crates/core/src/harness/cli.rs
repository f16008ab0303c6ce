//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 I/O error, 3 numerical setup error.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::config::{ConfigError, ConfigFile, Experiment, ExperimentConfig};
use super::experiments::{run_experiment, HarnessError};
use super::output::OutputSink;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "confocal-hmc", version, about = "Confocal photon-count simulation and HMC trajectory inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a trajectory and its photon counts.
    Simulate(Common),
    /// Run SVEX and IMEX chains on simulated data.
    Infer(Common),
    /// Print the explicit-integrator stability certificate.
    Certify(Common),
    /// Sweep h and record the position bound of a short integration.
    Surrogate(Common),
    /// Energy traces for explicit prior and IMEX integrations.
    Stability(Common),
    /// Prime-averaged acceptance rates over an h sweep.
    Efficiency(Common),
    /// Terminal position and energy errors against a fine reference.
    Convergence(Common),
    /// Wall time of L integrator steps against K.
    Complexity(Common),
}

impl Command {
    fn split(self) -> (Experiment, Common) {
        match self {
            Command::Simulate(c) => (Experiment::Simulate, c),
            Command::Infer(c) => (Experiment::Infer, c),
            Command::Certify(c) => (Experiment::Certify, c),
            Command::Surrogate(c) => (Experiment::Surrogate, c),
            Command::Stability(c) => (Experiment::Stability, c),
            Command::Efficiency(c) => (Experiment::Efficiency, c),
            Command::Convergence(c) => (Experiment::Convergence, c),
            Command::Complexity(c) => (Experiment::Complexity, c),
        }
    }
}

#[derive(Args, Debug, Default)]
struct Common {
    /// TOML file of overrides; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run tag used in file names (default: UNIX milliseconds).
    #[arg(long)]
    tag: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Diffusion coefficient (µm²/s).
    #[arg(long = "D")]
    diffusion: Option<f64>,
    #[arg(long = "I-ref")]
    i_ref: Option<f64>,
    #[arg(long = "I-bg")]
    i_bg: Option<f64>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    tau_dead: Option<f64>,
    #[arg(long)]
    tau_exp: Option<f64>,
    /// Number of measurement cycles.
    #[arg(long = "N")]
    n_cycles: Option<usize>,
    /// Subpanels per cycle.
    #[arg(long = "K")]
    k_sub: Option<usize>,
    #[arg(long)]
    theta: Option<f64>,
    /// Momentum mass.
    #[arg(long = "m")]
    mass: Option<f64>,
    /// Integrator step size.
    #[arg(long = "h")]
    step: Option<f64>,
    /// Integrator steps per proposal.
    #[arg(long = "L")]
    steps: Option<usize>,
    /// svex or imex.
    #[arg(long)]
    scheme: Option<String>,
    /// Chain length.
    #[arg(long = "J")]
    chain_len: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    /// Chain length per efficiency point.
    #[arg(long)]
    updates: Option<usize>,
    /// Timing repetitions per complexity point.
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    probe_node: Option<usize>,
    /// Comma-separated sweep values (h, or K for complexity).
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<f64>>,
}

impl Common {
    fn overrides(&self) -> ConfigFile {
        ConfigFile {
            diffusion: self.diffusion,
            i_ref: self.i_ref,
            i_bg: self.i_bg,
            omega: self.omega,
            tau_dead: self.tau_dead,
            tau_exp: self.tau_exp,
            n_cycles: self.n_cycles,
            k_sub: self.k_sub,
            seed: self.seed,
            theta: self.theta,
            mass: self.mass,
            step: self.step,
            steps: self.steps,
            scheme: self.scheme.clone(),
            chain_len: self.chain_len,
            thin: self.thin,
            updates: self.updates,
            reps: self.reps,
            probe_node: self.probe_node,
            sweep: self.sweep.clone(),
            output_dir: self.out.clone(),
        }
    }
}

/// Parses `argv` (including the program name), runs the experiment, and
/// returns the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (experiment, common) = cli.command.split();
    let mut cfg = ExperimentConfig::defaults_for(experiment);
    if let Some(path) = &common.config {
        if let Err(e) = cfg.apply_file(path) {
            eprintln!("error: {e}");
            return match e {
                ConfigError::Io(..) => EXIT_IO,
                ConfigError::Parse(_) | ConfigError::Invalid(_) => EXIT_USAGE,
            };
        }
    }
    if let Err(e) = cfg.apply(&common.overrides()) {
        eprintln!("error: {e}");
        return EXIT_USAGE;
    }
    let valid = if experiment == Experiment::Simulate {
        cfg.params.validate()
    } else {
        cfg.validate()
    };
    if let Err(e) = valid {
        eprintln!("error: {e}");
        return EXIT_USAGE;
    }
    let mut sink = match OutputSink::new(&cfg.output_dir, common.tag.clone()) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: cannot create output directory {}: {e}", cfg.output_dir.display());
            return EXIT_IO;
        }
    };
    match run_experiment(&cfg, &mut sink) {
        Ok(summary) => {
            // a closed stdout is not a failure of the run itself
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "{summary}");
            for path in sink.written() {
                let _ = writeln!(out, "wrote {}", path.display());
            }
            EXIT_OK
        }
        Err(HarnessError::Io(e)) => {
            eprintln!("error: {e}");
            EXIT_IO
        }
        Err(HarnessError::Numerical(e)) => {
            eprintln!("error: {e}");
            EXIT_NUMERICAL
        }
    }
}
