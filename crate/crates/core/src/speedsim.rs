//! Long-run speed by direct simulation and the ε-sweep slope test.
//!
//! Walks query the environment oracle directly. The oracle is a pure hash
//! of (seed, edge), so revisits are consistent and no edge cache is kept.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{condition_on_infinite_cluster, validate_statistics_regime, ConditionedOracle};
use crate::error::{Error, Result};
use crate::green::{step, KillingClock};
use crate::kernel::Bias;
use crate::lattice::Vertex;
use crate::rng::{derive_seed, stream, SeedStream};
use crate::stats::{mean_se, ratio_estimate, t_quantile, wls_line, wls_quadratic};

const TAG_ENV: u64 = 0x656e_76;
const TAG_WALK: u64 = 0x7761_6c6b;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkSummary {
    pub n_steps: u64,
    pub displacement: Vec<i64>,
    /// max_t (X_0 − X_t)·ℓ̂.
    pub max_backtrack: f64,
    pub origin_visits: u64,
    /// Steps spent at a vertex with no open edge (only possible off K_∞).
    pub stuck_steps: u64,
}

/// The quenched walk from the origin for `n_steps` transitions.
pub fn run_walk(oracle: &ConditionedOracle, bias: &Bias, n_steps: u64, walk_seed: u64) -> Result<WalkSummary> {
    let d = bias.dim();
    let origin = Vertex::origin(d);
    let mut rng = stream(walk_seed, &[TAG_WALK]);
    let mut x = origin;
    let mut max_backtrack: f64 = 0.0;
    let mut origin_visits = 1;
    let mut stuck_steps = 0;
    for _ in 0..n_steps {
        let next = step(&oracle.oracle, bias, &x, &mut rng)?;
        if next == x {
            stuck_steps += 1;
        }
        x = next;
        if x == origin {
            origin_visits += 1;
        }
        max_backtrack = max_backtrack.max(-x.dot(&bias.direction));
    }
    Ok(WalkSummary {
        n_steps,
        displacement: x.coords().iter().map(|c| *c as i64).collect(),
        max_backtrack,
        origin_visits,
        stuck_steps,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimBudget {
    pub n_steps: u64,
    pub n_reps: u64,
    /// Radius of the reach proxy for I.
    pub check_radius: u32,
    pub rejection_budget: u64,
}

impl Default for SimBudget {
    fn default() -> Self {
        SimBudget { n_steps: 1_000_000, n_reps: 8, check_radius: 40, rejection_budget: 10_000 }
    }
}

pub const MIN_REPLICAS: u64 = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedEstimate {
    pub p: f64,
    pub bias: Bias,
    pub v_hat: Vec<f64>,
    /// 95% t-interval half-widths from replica means.
    pub ci: Vec<f64>,
    pub se: Vec<f64>,
    pub n_steps: u64,
    pub n_reps: u64,
    pub seed: u64,
    /// X_n/n per replica.
    pub replica_speeds: Vec<Vec<f64>>,
    pub max_backtrack: Vec<f64>,
    pub rejections: u64,
    pub warnings: Vec<String>,
}

impl SpeedEstimate {
    /// v̂·ℓ̂ with its standard error and CI half-width.
    pub fn along_bias(&self) -> (f64, f64, f64) {
        let proj: Vec<f64> = self.replica_speeds.iter().map(|v| self.bias.projection(v)).collect();
        let m = mean_se(&proj);
        let q = t_quantile(0.95, proj.len() - 1).unwrap_or(f64::NAN);
        (m.mean, m.se, q * m.se)
    }
}

/// λ beyond which a warning is attached: the walk is sub-ballistic for large
/// drifts at any p < 1, and slow to equilibrate well before that.
pub const LARGE_LAMBDA: f64 = 2.0;

/// `n_reps` independent (environment, walk) replicas, each conditioned on
/// the reach proxy for I.
pub fn estimate_speed(p: f64, bias: &Bias, budget: &SimBudget, seed: u64) -> Result<SpeedEstimate> {
    validate_statistics_regime(p)?;
    if budget.n_reps < MIN_REPLICAS {
        return Err(Error::invalid(format!("at least {MIN_REPLICAS} replicas are required")));
    }
    if budget.n_steps == 0 {
        return Err(Error::invalid("n_steps must be positive"));
    }
    let d = bias.dim();
    let mut warnings = Vec::new();
    if bias.lambda > LARGE_LAMBDA && p < 1.0 {
        warnings.push(format!(
            "λ = {} is large: at p < 1 the speed vanishes for strong enough drift and finite-time averages converge slowly",
            bias.lambda
        ));
    }
    let reps: Vec<Result<(WalkSummary, u64)>> = (0..budget.n_reps)
        .into_par_iter()
        .map(|r| {
            let seeds = SeedStream::new(derive_seed(seed, &[TAG_ENV, r]), 0);
            let env = condition_on_infinite_cluster(p, d, budget.check_radius, seeds, budget.rejection_budget)?;
            let walk = run_walk(&env, bias, budget.n_steps, derive_seed(seed, &[TAG_WALK, r]))?;
            Ok((walk, env.rejections))
        })
        .collect();
    let mut speeds = Vec::new();
    let mut backtrack = Vec::new();
    let mut rejections = 0;
    for r in reps {
        let (w, rej) = r?;
        speeds.push(w.displacement.iter().map(|x| *x as f64 / budget.n_steps as f64).collect::<Vec<f64>>());
        backtrack.push(w.max_backtrack);
        rejections += rej;
    }
    let q = t_quantile(0.95, speeds.len() - 1)?;
    let mut v_hat = vec![0.0; d];
    let mut se = vec![0.0; d];
    for c in 0..d {
        let col: Vec<f64> = speeds.iter().map(|v| v[c]).collect();
        let m = mean_se(&col);
        v_hat[c] = m.mean;
        se[c] = m.se;
    }
    Ok(SpeedEstimate {
        p,
        bias: bias.clone(),
        ci: se.iter().map(|s| q * s).collect(),
        v_hat,
        se,
        n_steps: budget.n_steps,
        n_reps: budget.n_reps,
        seed,
        replica_speeds: speeds,
        max_backtrack: backtrack,
        rejections,
        warnings,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub grid: Vec<f64>,
    pub estimates: Vec<SpeedEstimate>,
    /// Weighted fit of v̂·ℓ̂ against ε.
    pub intercept: f64,
    pub slope: f64,
    pub slope_se: f64,
    /// −v′(1)·ℓ̂.
    pub theoretical: f64,
    pub z_score: f64,
    /// Coefficient of ε² in a weighted quadratic fit and its standard error.
    pub quadratic: f64,
    pub quadratic_se: f64,
}

pub const DEFAULT_MAX_EPS: f64 = 0.05;

pub fn validate_grid(grid: &[f64], max_eps: f64) -> Result<()> {
    if grid.len() < 3 {
        return Err(Error::invalid("an ε-grid needs at least three points"));
    }
    if !grid.contains(&0.0) {
        return Err(Error::invalid("the ε-grid must include 0"));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("the ε-grid must be strictly increasing"));
    }
    if grid.iter().any(|e| !(0.0..=max_eps).contains(e)) {
        return Err(Error::invalid(format!("ε values must lie in [0, {max_eps}]")));
    }
    Ok(())
}

/// One speed estimate per ε, then a weighted linear fit of v̂·ℓ̂ against ε
/// compared with `theoretical` = −v′(1)·ℓ̂.
pub fn sweep_and_fit(
    grid: &[f64],
    bias: &Bias,
    budget: &SimBudget,
    seed: u64,
    theoretical: f64,
    max_eps: f64,
) -> Result<SweepResult> {
    validate_grid(grid, max_eps)?;
    let mut estimates = Vec::with_capacity(grid.len());
    for (k, eps) in grid.iter().enumerate() {
        estimates.push(estimate_speed(1.0 - eps, bias, budget, derive_seed(seed, &[k as u64]))?);
    }
    let (y, sigma): (Vec<f64>, Vec<f64>) = estimates
        .iter()
        .map(|e| {
            let (m, se, _) = e.along_bias();
            (m, se.max(1e-300))
        })
        .unzip();
    let fit = wls_line(grid, &y, &sigma)?;
    let (quadratic, quadratic_se) = if grid.len() >= 3 {
        let (c, se) = wls_quadratic(grid, &y, &sigma)?;
        (c[2], se)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(SweepResult {
        grid: grid.to_vec(),
        z_score: (fit.slope - theoretical) / fit.slope_se,
        intercept: fit.intercept,
        slope: fit.slope,
        slope_se: fit.slope_se,
        theoretical,
        quadratic,
        quadratic_se,
        estimates,
    })
}

impl SweepResult {
    /// One row per grid point: ε, each component of v̂ with its CI, n_steps,
    /// n_reps.
    pub fn write_points_csv(&self, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.estimates.first().map_or(0, |e| e.v_hat.len());
        let mut header = vec!["eps".to_string()];
        for c in 0..d {
            header.push(format!("v{c}"));
            header.push(format!("ci{c}"));
        }
        header.extend(["n_steps".into(), "n_reps".into()]);
        w.write_record(&header)?;
        for (eps, est) in self.grid.iter().zip(&self.estimates) {
            let mut row = vec![eps.to_string()];
            for c in 0..d {
                row.push(est.v_hat[c].to_string());
                row.push(est.ci[c].to_string());
            }
            row.push(est.n_steps.to_string());
            row.push(est.n_reps.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// ε, v̂·ℓ̂, CI half-width, theoretical line v(1)·ℓ̂ + ε·theoretical.
    pub fn write_plot_csv(&self, v1_along: f64, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["eps", "v_along", "ci", "theory"])?;
        for (eps, est) in self.grid.iter().zip(&self.estimates) {
            let (m, _, ci) = est.along_bias();
            w.write_record([
                eps.to_string(),
                m.to_string(),
                ci.to_string(),
                (v1_along + eps * self.theoretical).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KilledSpeed {
    /// E[X_τ]/E[τ] per component.
    pub ratio: Vec<f64>,
    pub se: Vec<f64>,
    pub delta: f64,
    pub n_samples: u64,
}

/// E[X_τ]/E[τ] for a walk killed at rate 1 − δ, over independent
/// I-conditioned (environment, walk) pairs.
pub fn killed_speed_ratio(p: f64, bias: &Bias, delta: f64, n_samples: u64, budget: &SimBudget, seed: u64) -> Result<KilledSpeed> {
    validate_statistics_regime(p)?;
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::invalid("δ must lie in [0, 1)"));
    }
    if n_samples < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    let d = bias.dim();
    let clock = KillingClock::new(delta)?;
    let samples: Vec<Result<(Vec<f64>, f64)>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let seeds = SeedStream::new(derive_seed(seed, &[TAG_ENV, i]), 1);
            let env = condition_on_infinite_cluster(p, d, budget.check_radius, seeds, budget.rejection_budget)?;
            let mut rng = stream(seed, &[TAG_WALK, i]);
            let mut x = Vertex::origin(d);
            let mut tau = 0u64;
            while clock.survives(&mut rng) {
                x = step(&env.oracle, bias, &x, &mut rng)?;
                tau += 1;
            }
            Ok((x.coords().iter().map(|c| *c as f64).collect(), tau as f64))
        })
        .collect();
    let (num, den): (Vec<Vec<f64>>, Vec<f64>) = samples.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    let (ratio, se) = ratio_estimate(&num, &den)?;
    Ok(KilledSpeed { ratio, se, delta, n_samples })
}
