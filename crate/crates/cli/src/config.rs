//! Run configuration: one JSON document, overridden field-by-field by flags.
//!
//! Precedence is flags > file > defaults. The thread count additionally
//! falls back to `PERCODRIFT_THREADS` when `--threads` is absent, and that
//! variable in turn beats the file.

use std::path::{Path, PathBuf};

use percodrift::kernel::{constants, Bias, ModelConstants};
use percodrift::traps::TrapStatistic;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Green/resistance dictionary, relative.
    pub dictionary: f64,
    /// Exhaustive Kalikow identity, absolute.
    pub kalikow: f64,
    /// Resolvent expansion reconstruction, max-norm.
    pub resolvent: f64,
    /// Agreement of the derivative forms, relative.
    pub derivative: f64,
    /// Closed-edge lemma and α identity.
    pub lemma: f64,
    /// Escape and stationary-weight identities.
    pub escape: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { dictionary: 1e-8, kalikow: 1e-10, resolvent: 1e-10, derivative: 1e-6, lemma: 1e-5, escape: 1e-4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub d: usize,
    pub lambda: f64,
    /// Raw bias direction as given; `normalized_direction` is filled in by
    /// validation.
    pub direction: Vec<f64>,
    #[serde(skip_deserializing)]
    pub normalized_direction: Vec<f64>,
    pub p: f64,
    pub eps_grid: Vec<f64>,
    pub delta: f64,
    pub delta_grid: Vec<f64>,
    /// p and δ values of the conditional Green ratio experiment.
    pub ratio_p: f64,
    pub ratio_deltas: Vec<f64>,
    /// Box radius of the Kalikow lattice estimators.
    pub box_radius: u32,
    /// Reach radius used for conditioning on the infinite cluster.
    pub check_radius: u32,
    /// Reach radius used for conditioning the speed simulations.
    pub speed_check_radius: u32,
    /// Reach radius that certifies infinite membership in trap statistics.
    pub proxy_radius: u32,
    /// Trap ball radius r.
    pub trap_r: u32,
    pub trap_p: Vec<f64>,
    pub trap_statistics: Vec<String>,
    pub n_envs: u64,
    pub n_samples: u64,
    pub n_steps: u64,
    pub n_reps: u64,
    pub rejection_budget: u64,
    /// Cap for every radius-growth loop.
    pub max_radius: u32,
    pub truncation_start: u32,
    pub truncation_max: u32,
    pub master_seed: u64,
    pub tolerances: Tolerances,
    pub out_dir: PathBuf,
    /// Worker threads; results never depend on it, so it is left out of
    /// artifacts.
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            d: 2,
            lambda: 0.5,
            direction: vec![1.0, 0.0],
            normalized_direction: Vec::new(),
            p: 0.95,
            eps_grid: vec![0.0, 0.01, 0.02, 0.04],
            delta: 0.9,
            delta_grid: vec![0.5, 0.9, 0.99],
            ratio_p: 0.98,
            ratio_deltas: vec![0.9, 0.99, 0.999],
            box_radius: 12,
            check_radius: 8,
            speed_check_radius: 40,
            proxy_radius: 24,
            trap_r: 1,
            trap_p: vec![0.9, 0.98],
            trap_statistics: vec!["L".into()],
            n_envs: 200,
            n_samples: 10_000,
            n_steps: 1_000_000,
            n_reps: 8,
            rejection_budget: 10_000,
            max_radius: 512,
            truncation_start: 30,
            truncation_max: 240,
            master_seed: 2024,
            tolerances: Tolerances::default(),
            out_dir: PathBuf::from("out"),
            threads: None,
        }
    }
}

/// Flag values that override the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

pub const THREADS_ENV: &str = "PERCODRIFT_THREADS";

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config does not parse: {e}")))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Io(format!("cannot read {}: {e}", p.display())))?;
                RunConfig::from_json(&text)
            }
        }
    }

    /// Apply flags, then the environment fallback for threads.
    pub fn apply(&mut self, o: &Overrides, env_threads: Option<&str>) -> Result<(), CliError> {
        if let Some(s) = o.seed {
            self.master_seed = s;
        }
        if let Some(out) = &o.out {
            self.out_dir = out.clone();
        }
        if let Some(t) = o.threads {
            self.threads = Some(t);
        } else if let Some(raw) = env_threads {
            let t = raw
                .trim()
                .parse::<usize>()
                .map_err(|_| CliError::Config(format!("{THREADS_ENV}={raw:?} is not a thread count")))?;
            self.threads = Some(t);
        }
        Ok(())
    }

    /// Checks shared by every subcommand; fills `normalized_direction`.
    pub fn validate(&mut self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.d < 1 || self.d > 8 {
            return bad(format!("d = {} outside 1..=8", self.d));
        }
        if self.direction.len() != self.d {
            return bad(format!("direction has {} components for d = {}", self.direction.len(), self.d));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return bad(format!("λ must be positive and finite, got {}", self.lambda));
        }
        let norm = self.direction.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return bad("direction must be a finite non-zero vector".into());
        }
        self.normalized_direction = self.direction.iter().map(|x| x / norm).collect();
        if !(0.0..=1.0).contains(&self.p) {
            return bad(format!("p = {} outside [0, 1]", self.p));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("δ = {} must lie in (0, 1) for killed solves", self.delta));
        }
        if self.delta_grid.is_empty() || self.delta_grid.iter().any(|d| !(0.0..1.0).contains(d)) {
            return bad("delta_grid must be non-empty with every δ in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.ratio_p) {
            return bad(format!("ratio_p = {} outside [0, 1]", self.ratio_p));
        }
        if self.ratio_deltas.is_empty() || self.ratio_deltas.iter().any(|d| !(0.0..1.0).contains(d)) {
            return bad("ratio_deltas must be non-empty with every δ in [0, 1)".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        if self.truncation_start < 2 || self.truncation_start > self.truncation_max {
            return bad("need 2 ≤ truncation_start ≤ truncation_max".into());
        }
        for t in [
            self.tolerances.dictionary,
            self.tolerances.kalikow,
            self.tolerances.resolvent,
            self.tolerances.derivative,
            self.tolerances.lemma,
            self.tolerances.escape,
        ] {
            if !(t > 0.0) {
                return bad("tolerances must be positive".into());
            }
        }
        Ok(())
    }

    pub fn bias(&self) -> Result<Bias, CliError> {
        Ok(Bias::new(self.lambda, &self.direction)?)
    }

    pub fn statistics(&self) -> Result<Vec<TrapStatistic>, CliError> {
        if self.trap_statistics.is_empty() {
            return Err(CliError::Config("trap_statistics is empty".into()));
        }
        self.trap_statistics
            .iter()
            .map(|s| s.parse::<TrapStatistic>().map_err(|e| CliError::Config(e.to_string())))
            .collect()
    }

    /// κ₀, κ₁, η, ρ_d for the configured bias; η is certified up to
    /// `max_radius`.
    pub fn model_constants(&self) -> Result<ModelConstants, CliError> {
        Ok(constants(&self.bias()?, self.d, self.max_radius.max(1) as usize)?)
    }
}

/// What every artifact carries for audit.
#[derive(Clone, Debug, Serialize)]
pub struct Audit<'a> {
    pub config: &'a RunConfig,
    pub constants: ModelConstants,
}
