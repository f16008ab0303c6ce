//! Experiment configuration: built-in defaults per experiment, overridden by
//! a flat key-value (TOML) file, overridden by command-line flags.
//!
//! Recognised keys: `D, I_ref, I_bg, omega, tau_dead, tau_exp, N, K, seed,
//! theta, m, h, L, scheme, J, thin, updates, reps, probe_node, sweep,
//! output_dir`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::ExperimentParams;
use crate::posterior::{HmcParams, Scheme};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Simulate,
    Infer,
    Surrogate,
    Stability,
    Efficiency,
    Convergence,
    Complexity,
    Certify,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::Simulate,
        Experiment::Infer,
        Experiment::Certify,
        Experiment::Surrogate,
        Experiment::Stability,
        Experiment::Efficiency,
        Experiment::Convergence,
        Experiment::Complexity,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Infer => "infer",
            Experiment::Surrogate => "surrogate",
            Experiment::Stability => "stability",
            Experiment::Efficiency => "efficiency",
            Experiment::Convergence => "convergence",
            Experiment::Complexity => "complexity",
            Experiment::Certify => "certify",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown experiment '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub params: ExperimentParams,
    pub hmc: HmcParams,
    /// Step sizes (or K values for `complexity`), ascending.
    pub sweep: Vec<f64>,
    pub output_dir: PathBuf,
    pub thin: usize,
    /// HMC updates per `(h, L)` point in the efficiency experiment.
    pub updates: usize,
    /// Timing repetitions per point in the complexity experiment.
    pub reps: usize,
    /// Coordinate recorded in the stability phase portrait; `None` picks the
    /// middle node.
    pub probe_node: Option<usize>,
}

impl ExperimentConfig {
    /// Built-in defaults: the in vitro parameter table, θ = 1/2, m = 1.
    pub fn defaults_for(experiment: Experiment) -> Self {
        let mut cfg = Self {
            experiment,
            params: ExperimentParams::default(),
            hmc: HmcParams::default(),
            sweep: Vec::new(),
            output_dir: PathBuf::from("out"),
            thin: 1,
            updates: 200,
            reps: 3,
            probe_node: None,
        };
        match experiment {
            Experiment::Simulate | Experiment::Certify => {}
            Experiment::Infer => {
                cfg.hmc.step = 0.02;
                cfg.hmc.steps = 20;
                cfg.hmc.chain_len = 2000;
                cfg.thin = 2;
            }
            Experiment::Surrogate => {
                cfg.hmc.steps = 20;
                cfg.sweep = (1..=60).map(|i| i as f64 * 0.005).collect();
            }
            Experiment::Stability => {
                cfg.hmc.steps = 100;
                cfg.sweep = vec![0.1, 0.2];
            }
            Experiment::Efficiency => {
                cfg.sweep = vec![0.005, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.08, 0.1, 0.12, 0.15];
            }
            Experiment::Convergence => {
                cfg.sweep = [2000.0, 1250.0, 800.0, 500.0, 320.0, 200.0, 125.0, 80.0, 50.0]
                    .iter()
                    .map(|l| 1.0 / l)
                    .collect();
            }
            Experiment::Complexity => {
                cfg.params.n_cycles = 2;
                cfg.hmc.step = 0.05;
                cfg.hmc.steps = 20;
                cfg.sweep = (1..=10).map(|i| (10 * i) as f64).collect();
            }
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate_for_inference()?;
        self.hmc.validate()?;
        if self.thin == 0 {
            return Err(Error::InvalidArgument("thin must be at least 1".into()));
        }
        if self.sweep.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidArgument("sweep values must be positive".into()));
        }
        if self.sweep.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("sweep values must be ascending".into()));
        }
        if let Some(i) = self.probe_node {
            if i >= self.params.node_count() {
                return Err(Error::InvalidArgument(format!("probe_node {i} out of range")));
            }
        }
        Ok(())
    }

    /// Applies every key present in a config file.
    pub fn apply_file(&mut self, path: &Path) -> std::result::Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
        let file: ConfigFile = toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        self.apply(&file).map_err(ConfigError::Invalid)
    }

    pub fn apply(&mut self, o: &ConfigFile) -> Result<()> {
        let p = &mut self.params;
        set(&mut p.diffusion, o.diffusion);
        set(&mut p.i_ref, o.i_ref);
        set(&mut p.i_bg, o.i_bg);
        set(&mut p.omega, o.omega);
        set(&mut p.tau_dead, o.tau_dead);
        set(&mut p.tau_exp, o.tau_exp);
        set(&mut p.n_cycles, o.n_cycles);
        set(&mut p.k_sub, o.k_sub);
        let h = &mut self.hmc;
        set(&mut h.seed, o.seed);
        set(&mut h.theta, o.theta);
        set(&mut h.mass, o.mass);
        set(&mut h.step, o.step);
        set(&mut h.steps, o.steps);
        set(&mut h.chain_len, o.chain_len);
        if let Some(s) = &o.scheme {
            h.scheme = s.parse::<Scheme>()?;
        }
        set(&mut self.thin, o.thin);
        set(&mut self.updates, o.updates);
        set(&mut self.reps, o.reps);
        if o.probe_node.is_some() {
            self.probe_node = o.probe_node;
        }
        if let Some(s) = &o.sweep {
            self.sweep = s.clone();
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
        Ok(())
    }

    /// Flat `key = value` lines describing every setting.
    pub fn describe(&self) -> Vec<(String, String)> {
        let p = &self.params;
        let h = &self.hmc;
        let sweep = self
            .sweep
            .iter()
            .map(|v| format!("{v}"))
            .collect::<Vec<_>>()
            .join(",");
        vec![
            ("experiment", self.experiment.to_string()),
            ("D", p.diffusion.to_string()),
            ("I_ref", p.i_ref.to_string()),
            ("I_bg", p.i_bg.to_string()),
            ("omega", p.omega.to_string()),
            ("tau_dead", p.tau_dead.to_string()),
            ("tau_exp", p.tau_exp.to_string()),
            ("tau_sub", p.tau_sub().to_string()),
            ("N", p.n_cycles.to_string()),
            ("K", p.k_sub.to_string()),
            ("M", p.node_count().to_string()),
            ("seed", h.seed.to_string()),
            ("theta", h.theta.to_string()),
            ("m", h.mass.to_string()),
            ("h", h.step.to_string()),
            ("L", h.steps.to_string()),
            ("scheme", h.scheme.to_string()),
            ("J", h.chain_len.to_string()),
            ("thin", self.thin.to_string()),
            ("updates", self.updates.to_string()),
            ("reps", self.reps.to_string()),
            (
                "probe_node",
                self.probe_node.map_or("middle".to_string(), |i| i.to_string()),
            ),
            ("sweep", sweep),
            ("output_dir", self.output_dir.display().to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

fn set<T: Copy>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// On-disk configuration; every key optional.
#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(rename = "D")]
    pub diffusion: Option<f64>,
    #[serde(rename = "I_ref")]
    pub i_ref: Option<f64>,
    #[serde(rename = "I_bg")]
    pub i_bg: Option<f64>,
    pub omega: Option<f64>,
    pub tau_dead: Option<f64>,
    pub tau_exp: Option<f64>,
    #[serde(rename = "N")]
    pub n_cycles: Option<usize>,
    #[serde(rename = "K")]
    pub k_sub: Option<usize>,
    pub seed: Option<u64>,
    pub theta: Option<f64>,
    #[serde(rename = "m")]
    pub mass: Option<f64>,
    #[serde(rename = "h")]
    pub step: Option<f64>,
    #[serde(rename = "L")]
    pub steps: Option<usize>,
    pub scheme: Option<String>,
    #[serde(rename = "J")]
    pub chain_len: Option<usize>,
    pub thin: Option<usize>,
    pub updates: Option<usize>,
    pub reps: Option<usize>,
    pub probe_node: Option<usize>,
    pub sweep: Option<Vec<f64>>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file {0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("malformed config file: {0}")]
    Parse(String),
    #[error(transparent)]
    Invalid(Error),
}
