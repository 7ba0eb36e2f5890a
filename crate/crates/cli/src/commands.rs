//! One function per subcommand. Each returns `Ok(())` when every check it
//! owns passes and writes its artifacts before reporting a failed check.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use percodrift::environment::{EdgeConfig, EnvironmentOracle};
use percodrift::expansion::{
    compute_j_all, derivative, escape_identity_residual, escape_probabilities, v_one, ExpansionReport,
    TruncationOptions,
};
use percodrift::green::{green_exact, green_stopped, perturb_expand, Boundary, FiniteChain};
use percodrift::kalikow::{
    conditional_ratio_experiment, kalikow_exhaustive, kalikow_row_mc_instance, EnumerableInstance, KalikowSetup,
    RatioTable,
};
use percodrift::kernel::Bias;
use percodrift::lattice::{Ball, Dir, DirSet, Edge, Vertex};
use percodrift::network::{build_killed, resistance_to_delta, resistance_to_target};
use percodrift::rng::derive_seed;
use percodrift::speedsim::{sweep_and_fit, SimBudget, SweepResult, DEFAULT_MAX_EPS};
use percodrift::traps::{tail_survey, SurveyVariant, TailSurvey, TrapOptions};
use serde::Serialize;

use crate::config::{Audit, RunConfig};
use crate::error::CliError;

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn out_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out_dir.join(name)
}

// ---------------------------------------------------------------- identities

#[derive(Clone, Debug, Serialize)]
pub struct IdentityCheck {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub detail: String,
}

impl IdentityCheck {
    fn new(name: &str, residual: f64, tolerance: f64, detail: String) -> Self {
        IdentityCheck { name: name.into(), residual, tolerance, pass: residual <= tolerance, detail }
    }
}

#[derive(Serialize)]
struct IdentityReport<'a> {
    #[serde(flatten)]
    audit: Audit<'a>,
    identities: Vec<IdentityCheck>,
    pass: bool,
}

const DICTIONARY_CONFIGS: u64 = 20;
const DICTIONARY_WINDOW: u32 = 4;

/// A configuration that is random on the edges of B(0, 4) and closed
/// everywhere else, so every solve below is exact.
fn finite_window(d: usize, p: f64, seed: u64) -> Result<EdgeConfig, CliError> {
    let inside = EnvironmentOracle::new(seed, p)?;
    let outside = EnvironmentOracle::new(seed, 0.0)?;
    Ok(EdgeConfig::with_window(
        Ball::around_origin(d, DICTIONARY_WINDOW),
        |e| inside.is_open(e),
        Some(outside),
    ))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// (max relative residual of G(x,x) = π^{ω(δ)}(x) R(x↔Δ), same for the
/// stopped variant, configurations used).
pub fn dictionary_residuals(cfg: &RunConfig, bias: &Bias, delta: f64) -> Result<(f64, f64, u64), CliError> {
    let d = cfg.d;
    let x = Vertex::origin(d);
    let solve_ball = Ball::around_origin(d, DICTIONARY_WINDOW + 2);
    let (mut plain, mut stopped, mut used) = (0.0f64, 0.0f64, 0);
    for k in 0..DICTIONARY_CONFIGS {
        let omega = finite_window(d, cfg.p, derive_seed(cfg.master_seed, &[0x6469_6374, k]))?;
        let net = build_killed(&omega, bias, delta, &solve_ball)?;
        let Some(killed_degree) = net.killed_degree(&x) else { continue };
        used += 1;
        let g = green_exact(&omega, bias, delta, &x, &solve_ball, f64::INFINITY)?.value(&x);
        let r = resistance_to_delta(&net, &x, 1e-12)?.value;
        plain = plain.max(rel(g, killed_degree * r));
        let z = Dir::all(d)
            .map(|e| x.step(e))
            .chain(Dir::all(d).map(|e| x.step(e).step(e)))
            .find(|z| net.region.index_of(z).is_some());
        if let Some(z) = z {
            let gz = green_stopped(&omega, bias, delta, &x, &x, &[z], &solve_ball)?;
            let rz = resistance_to_target(&net, &x, &z, 1e-12)?.value;
            stopped = stopped.max(rel(gz, killed_degree * rz));
        }
    }
    Ok((plain, stopped, used))
}

/// Max-norm reconstruction error of the order-3 resolvent expansion on a
/// radius-5 box when the edge [0, e₁] is closed.
pub fn resolvent_error(d: usize, bias: &Bias, delta: f64) -> Result<f64, CliError> {
    let ball = Ball::around_origin(d, 5);
    let full = EdgeConfig::full_lattice();
    let mut cut = EdgeConfig::full_lattice();
    cut.force(Edge::at(Vertex::origin(d), Dir::new(0, true)), false);
    let a = FiniteChain::on_ball(&full, bias, &ball, Boundary::KilledOnExit)?;
    let b = FiniteChain::on_ball(&cut, bias, &ball, Boundary::KilledOnExit)?;
    let y = a.index(&Vertex::origin(d))?;
    let exp = perturb_expand(&a.dense(), &b.dense(), delta, 3, y)?;
    Ok(exp.reconstruction_error())
}

fn truncation(cfg: &RunConfig) -> TruncationOptions {
    TruncationOptions { start_radius: cfg.truncation_start, max_radius: cfg.truncation_max, ..Default::default() }
}

pub fn identity_checks(cfg: &RunConfig) -> Result<Vec<IdentityCheck>, CliError> {
    let bias = cfg.bias()?;
    let tol = &cfg.tolerances;
    let mut out = Vec::new();
    for delta in [0.5, cfg.delta] {
        let (plain, stopped, used) = dictionary_residuals(cfg, &bias, delta)?;
        out.push(IdentityCheck::new(
            &format!("green-resistance dictionary (δ = {delta})"),
            plain,
            tol.dictionary,
            format!("{used} configurations on B(0, {DICTIONARY_WINDOW})"),
        ));
        out.push(IdentityCheck::new(
            &format!("stopped green-resistance dictionary (δ = {delta})"),
            stopped,
            tol.dictionary,
            format!("{used} configurations, Z = one nearby vertex"),
        ));
    }
    if cfg.d >= 2 {
        let inst = EnumerableInstance::strip(bias.clone(), cfg.p)?;
        let z = Vertex::origin(cfg.d).step(Dir::new(0, true));
        let mut worst = 0.0f64;
        for &delta in &cfg.delta_grid {
            worst = worst.max(kalikow_exhaustive(&inst, delta, &z)?.max_residual);
        }
        out.push(IdentityCheck::new(
            "kalikow exhaustive",
            worst,
            tol.kalikow,
            format!("{} random edges, δ ∈ {:?}", inst.random_edges.len(), cfg.delta_grid),
        ));
    }
    out.push(IdentityCheck::new(
        "resolvent expansion (n = 3)",
        resolvent_error(cfg.d, &bias, cfg.delta)?,
        tol.resolvent,
        "radius-5 box, one closed edge".into(),
    ));

    let report = derivative(&bias, &truncation(cfg), f64::INFINITY)?;
    let lemma = report.directions.iter().map(|e| e.terms.lemma_residual).fold(0.0, f64::max);
    let alpha = report.directions.iter().map(|e| e.terms.alpha_residual).fold(0.0, f64::max);
    out.push(IdentityCheck::new("closed-edge lemma", lemma, tol.lemma, "all 2d directions".into()));
    out.push(IdentityCheck::new("alpha identity", alpha, tol.lemma, "all 2d directions".into()));
    out.push(IdentityCheck::new(
        "stationary-weight drift identity",
        report.pi_identity_residual,
        tol.escape,
        "∑ π^e d_e against π^∅ d_∅".into(),
    ));
    out.push(IdentityCheck::new(
        "derivative forms",
        report.forms_relative_gap,
        tol.derivative,
        "three assemblies of v′(1)".into(),
    ));
    let jv = compute_j_all(&bias, &truncation(cfg))?;
    let esc = escape_probabilities(&bias, jv.radius)?;
    let escape = Dir::all(cfg.d).map(|e| escape_identity_residual(&bias, e, &jv, &esc)).fold(0.0, f64::max);
    out.push(IdentityCheck::new(
        "escape identity",
        escape,
        tol.escape,
        format!("hitting solve at radius {}", jv.radius),
    ));
    Ok(out)
}

pub fn cmd_identity_suite(cfg: &RunConfig) -> Result<(), CliError> {
    ensure_dir(&cfg.out_dir)?;
    let identities = identity_checks(cfg)?;
    let pass = identities.iter().all(|c| c.pass);
    let audit = Audit { config: cfg, constants: cfg.model_constants()? };
    write_json(&out_path(cfg, "identity_suite.json"), &IdentityReport { audit, identities: identities.clone(), pass })?;
    let failing: Vec<String> = identities
        .iter()
        .filter(|c| !c.pass)
        .map(|c| format!("{} (residual {:.3e} > {:.1e})", c.name, c.residual, c.tolerance))
        .collect();
    if failing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(failing.join("; ")))
    }
}

// ---------------------------------------------------------------- expansion

#[derive(Serialize)]
struct ExpansionArtifact<'a> {
    #[serde(flatten)]
    audit: Audit<'a>,
    report: &'a ExpansionReport,
}

fn write_expansion_csv(report: &ExpansionReport, out: impl Write) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["direction", "j", "j_ee", "j_ee_direct", "phi", "psi", "alpha", "lemma_residual", "alpha_residual"])?;
    for e in &report.directions {
        w.write_record([
            e.label.clone(),
            e.j.to_string(),
            e.j_ee.to_string(),
            e.terms.j_ee_direct.to_string(),
            e.terms.phi.to_string(),
            e.terms.psi.to_string(),
            e.terms.alpha.to_string(),
            e.terms.lemma_residual.to_string(),
            e.terms.alpha_residual.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_expansion(cfg: &RunConfig) -> Result<(), CliError> {
    ensure_dir(&cfg.out_dir)?;
    let bias = cfg.bias()?;
    let report = derivative(&bias, &truncation(cfg), cfg.tolerances.derivative)?;
    let audit = Audit { config: cfg, constants: cfg.model_constants()? };
    write_json(&out_path(cfg, "expansion.json"), &ExpansionArtifact { audit, report: &report })?;
    let mut w = create(&out_path(cfg, "expansion_terms.csv"))?;
    write_expansion_csv(&report, &mut w)?;
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- speed sweep

#[derive(Clone, Debug, Serialize)]
pub struct SweepChecks {
    pub v1_along: f64,
    pub slope_within_two_se: bool,
    /// One entry per ε > 0: upper end of the 95% interval below v(1)·ℓ̂.
    pub slowdown: Vec<(f64, bool)>,
}

pub fn sweep_checks(sweep: &SweepResult, v1_along: f64) -> SweepChecks {
    let slowdown = sweep
        .grid
        .iter()
        .zip(&sweep.estimates)
        .filter(|(eps, _)| **eps > 0.0)
        .map(|(eps, est)| {
            let (m, _, ci) = est.along_bias();
            (*eps, m + ci < v1_along)
        })
        .collect();
    SweepChecks { v1_along, slope_within_two_se: sweep.z_score.abs() <= 2.0, slowdown }
}

#[derive(Serialize)]
struct SweepArtifact<'a> {
    #[serde(flatten)]
    audit: Audit<'a>,
    sweep: &'a SweepResult,
    checks: &'a SweepChecks,
}

/// Runs the sweep and writes speed_points.csv, speed_plot.csv and
/// speed_sweep.json.
pub fn run_speed_sweep(cfg: &RunConfig) -> Result<(SweepResult, SweepChecks), CliError> {
    ensure_dir(&cfg.out_dir)?;
    let bias = cfg.bias()?;
    let report = derivative(&bias, &truncation(cfg), cfg.tolerances.derivative)?;
    let theoretical = -bias.projection(&report.derivative_from_j);
    let v1_along = bias.projection(&v_one(&bias));
    let budget = SimBudget {
        n_steps: cfg.n_steps,
        n_reps: cfg.n_reps,
        check_radius: cfg.speed_check_radius,
        rejection_budget: cfg.rejection_budget,
    };
    let sweep = sweep_and_fit(&cfg.eps_grid, &bias, &budget, cfg.master_seed, theoretical, DEFAULT_MAX_EPS)?;
    let checks = sweep_checks(&sweep, v1_along);
    let mut w = create(&out_path(cfg, "speed_points.csv"))?;
    sweep.write_points_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&out_path(cfg, "speed_plot.csv"))?;
    sweep.write_plot_csv(v1_along, &mut w)?;
    w.flush()?;
    let audit = Audit { config: cfg, constants: cfg.model_constants()? };
    write_json(&out_path(cfg, "speed_sweep.json"), &SweepArtifact { audit, sweep: &sweep, checks: &checks })?;
    Ok((sweep, checks))
}

pub fn cmd_speed_sweep(cfg: &RunConfig) -> Result<(), CliError> {
    let (sweep, checks) = run_speed_sweep(cfg)?;
    let mut failing = Vec::new();
    if !checks.slope_within_two_se {
        failing.push(format!(
            "slope {:.5} ± {:.5} vs {:.5} (z = {:.2})",
            sweep.slope, sweep.slope_se, sweep.theoretical, sweep.z_score
        ));
    }
    for (eps, ok) in &checks.slowdown {
        if !ok {
            failing.push(format!("no significant slow-down at ε = {eps}"));
        }
    }
    if failing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(failing.join("; ")))
    }
}

// ---------------------------------------------------------------- kalikow

#[derive(Clone, Debug, Serialize)]
pub struct ExhaustiveEntry {
    pub delta: f64,
    pub residual: f64,
    pub max_residual: f64,
    pub accepted_probability: f64,
    pub n_configs: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct McComparison {
    pub delta: f64,
    pub n_envs: u64,
    /// Largest |MC − exact| / SE over the row at e₁.
    pub max_z: f64,
}

#[derive(Serialize)]
struct KalikowArtifact<'a> {
    #[serde(flatten)]
    audit: Audit<'a>,
    exhaustive: &'a [ExhaustiveEntry],
    mc_vs_exhaustive: &'a McComparison,
    ratios: &'a RatioTable,
}

/// A Monte Carlo row may sit this many standard errors from the exact row.
pub const MC_Z_LIMIT: f64 = 4.0;

pub fn cmd_kalikow_check(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.d < 2 {
        return Err(CliError::Config("kalikow-check needs d ≥ 2".into()));
    }
    if cfg.n_envs < 2 {
        return Err(CliError::Config("kalikow-check needs n_envs ≥ 2".into()));
    }
    ensure_dir(&cfg.out_dir)?;
    let bias = cfg.bias()?;
    let d = cfg.d;
    let e1 = Dir::new(0, true);
    let z = Vertex::origin(d).step(e1);
    let inst = EnumerableInstance::strip(bias.clone(), cfg.p)?;

    let mut exhaustive = Vec::new();
    for &delta in &cfg.delta_grid {
        let r = kalikow_exhaustive(&inst, delta, &z)?;
        exhaustive.push(ExhaustiveEntry {
            delta,
            residual: r.residual,
            max_residual: r.max_residual,
            accepted_probability: r.accepted_probability,
            n_configs: r.n_configs,
        });
    }

    let exact = kalikow_exhaustive(&inst, cfg.delta, &z)?;
    let exact_row = &exact.rows[inst.region.index_of(&z).expect("z lies in the strip")].1;
    // Rows of the exact p̂ are indexed by region vertex.
    let exact_prob = |e: Dir| inst.region.index_of(&z.step(e)).map_or(0.0, |j| exact_row[j]);
    let mc = kalikow_row_mc_instance(
        &inst,
        cfg.delta,
        &z,
        cfg.n_envs,
        derive_seed(cfg.master_seed, &[0x6d63]),
        cfg.rejection_budget,
    )?;
    let max_z = Dir::all(d)
        .filter(|e| mc.row.se[e.index()] > 0.0)
        .map(|e| (mc.row.prob(e) - exact_prob(e)).abs() / mc.row.se[e.index()])
        .fold(0.0, f64::max);
    let comparison = McComparison { delta: cfg.delta, n_envs: cfg.n_envs, max_z };

    let setup = KalikowSetup {
        rejection_budget: cfg.rejection_budget,
        ..KalikowSetup::new(d, cfg.box_radius, cfg.check_radius)
    };
    let far = (cfg.box_radius / 4).max(2) as i32;
    let zs: Vec<Vertex> = [far, -far]
        .iter()
        .map(|k| {
            let mut c = vec![0; d];
            c[0] = *k;
            Vertex::new(&c)
        })
        .collect::<Result<_, _>>()?;
    let ratios = conditional_ratio_experiment(
        cfg.ratio_p,
        &bias,
        &zs,
        DirSet::single(e1),
        &cfg.ratio_deltas,
        cfg.n_envs,
        derive_seed(cfg.master_seed, &[0x7261_7469]),
        &setup,
    )?;

    let mut w = create(&out_path(cfg, "kalikow_exhaustive.csv"))?;
    {
        let mut c = csv::Writer::from_writer(&mut w);
        c.write_record(["delta", "residual", "max_residual", "accepted_probability", "n_configs"])?;
        for e in &exhaustive {
            c.write_record([
                e.delta.to_string(),
                e.residual.to_string(),
                e.max_residual.to_string(),
                e.accepted_probability.to_string(),
                e.n_configs.to_string(),
            ])?;
        }
        c.flush()?;
    }
    w.flush()?;
    let mut w = create(&out_path(cfg, "kalikow_ratios.csv"))?;
    ratios.write_csv(&mut w)?;
    w.flush()?;
    let audit = Audit { config: cfg, constants: cfg.model_constants()? };
    write_json(
        &out_path(cfg, "kalikow_check.json"),
        &KalikowArtifact { audit, exhaustive: &exhaustive, mc_vs_exhaustive: &comparison, ratios: &ratios },
    )?;

    let mut failing = Vec::new();
    let worst = exhaustive.iter().map(|e| e.max_residual).fold(0.0, f64::max);
    if worst > cfg.tolerances.kalikow {
        failing.push(format!("exhaustive residual {worst:.3e} > {:.1e}", cfg.tolerances.kalikow));
    }
    if max_z > MC_Z_LIMIT {
        failing.push(format!("Monte Carlo row {max_z:.2} standard errors from the exact row"));
    }
    for (z, ok) in &ratios.bounded {
        if !ok {
            failing.push(format!("ratio at {z:?} grows with δ"));
        }
    }
    if failing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(failing.join("; ")))
    }
}

// ---------------------------------------------------------------- traps

#[derive(Serialize)]
struct TrapArtifact<'a> {
    #[serde(flatten)]
    audit: Audit<'a>,
    surveys: &'a [TailSurvey],
}

fn p_label(p: f64) -> String {
    p.to_string().replace('.', "_")
}

/// Runs every (statistic, p) survey and writes one CSV each plus
/// trap_tails.json. Only configuration and budget problems are errors.
pub fn run_trap_tails(cfg: &RunConfig) -> Result<Vec<TailSurvey>, CliError> {
    ensure_dir(&cfg.out_dir)?;
    let bias = cfg.bias()?;
    let constants = cfg.model_constants()?;
    let stats = cfg.statistics()?;
    if cfg.trap_p.is_empty() {
        return Err(CliError::Config("trap_p is empty".into()));
    }
    let opts = TrapOptions { proxy_radius: cfg.proxy_radius, max_radius: cfg.max_radius };
    let mut surveys = Vec::new();
    for (i, stat) in stats.iter().enumerate() {
        for (j, &p) in cfg.trap_p.iter().enumerate() {
            let seed = derive_seed(cfg.master_seed, &[i as u64, j as u64]);
            let s = tail_survey(*stat, &bias, &constants, p, cfg.trap_r, cfg.n_samples, seed, &opts, &SurveyVariant::Plain)?;
            let name = format!("trap_{}_p{}.csv", cfg.trap_statistics[i], p_label(p));
            let mut w = create(&out_path(cfg, &name))?;
            s.write_csv(&mut w)?;
            w.flush()?;
            surveys.push(s);
        }
    }
    let audit = Audit { config: cfg, constants };
    write_json(&out_path(cfg, "trap_tails.json"), &TrapArtifact { audit, surveys: &surveys })?;
    Ok(surveys)
}

pub fn cmd_trap_tails(cfg: &RunConfig) -> Result<(), CliError> {
    run_trap_tails(cfg).map(|_| ())
}
