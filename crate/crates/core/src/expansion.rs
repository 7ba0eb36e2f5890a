//! First-order expansion of the speed at p = 1.
//!
//! Sign convention: v(1−ε) ≈ v(1) − ε·v′(1), where v′(1) is the derivative
//! in p at p = 1. All Green functions here are δ = 1 Green functions of the
//! homogeneous lattice ω₀ or of ω₀ with the single edge [0, e] deleted,
//! computed by Dirichlet truncation on cuboids that extend further against
//! the drift than along it.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{EnvironmentOracle, Surgered, SurgerySpec};
use crate::error::{Error, Result};
use crate::green::{Boundary, FiniteChain, McEstimate};
use crate::kernel::{local_drift, open_weight, Bias, LocalKernel};
use crate::lattice::{Dir, DirSet, Edge, Region, Vertex};
use crate::rng::stream;

pub const SIGN_CONVENTION: &str = "v(1-eps) = v(1) - eps * v'(1); v'(1) is the derivative in p at p = 1";

/// v(1) = d_∅ = ∑_e p(e) e.
pub fn v_one(bias: &Bias) -> Vec<f64> {
    LocalKernel::from_closed(DirSet::EMPTY, bias).drift()
}

/// d_e: the drift at a vertex whose only closed edge is in direction e.
pub fn drift_with_closed(bias: &Bias, e: Dir) -> Vec<f64> {
    local_drift(DirSet::single(e), bias).expect("one closed edge leaves others open")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cuboid of half-width R across the drift, reaching R(1 + ℓ̂_i⁻) ahead and
/// R(1 + ℓ̂_i⁺) behind along each axis.
pub fn truncation_region(bias: &Bias, radius: u32) -> Result<Region> {
    let r = radius as f64;
    let lo: Vec<i32> = bias.direction.iter().map(|l| -(r * (1.0 + l.max(0.0))).ceil() as i32).collect();
    let hi: Vec<i32> = bias.direction.iter().map(|l| (r * (1.0 + (-l).max(0.0))).ceil() as i32).collect();
    Region::cuboid(&lo, &hi)
}

/// G(·, 0) at δ = 1 on the truncation cuboid, with `closed` (an edge at the
/// origin) deleted when given.
#[derive(Clone, Debug)]
pub struct GreenColumn {
    pub region: Region,
    pub values: Vec<f64>,
    pub radius: u32,
}

impl GreenColumn {
    pub fn at(&self, v: &Vertex) -> f64 {
        self.region.index_of(v).map_or(0.0, |i| self.values[i])
    }
}

fn chain_for(bias: &Bias, closed: Option<Dir>, radius: u32) -> Result<FiniteChain> {
    if !(bias.lambda > 0.0) {
        return Err(Error::invalid("δ = 1 Green functions need λ > 0 (transience)"));
    }
    let region = truncation_region(bias, radius)?;
    let full = EnvironmentOracle::full();
    let origin = Vertex::origin(bias.dim());
    let spec = match closed {
        Some(e) => SurgerySpec::all_closed([Edge::at(origin, e)]),
        None => SurgerySpec::identity(),
    };
    FiniteChain::build(&Surgered { base: &full, spec: &spec }, bias, region, Boundary::KilledOnExit)
}

pub fn green_column(bias: &Bias, closed: Option<Dir>, radius: u32) -> Result<GreenColumn> {
    let chain = chain_for(bias, closed, radius)?;
    let values = chain.green_column(1.0, &Vertex::origin(bias.dim()))?;
    Ok(GreenColumn { region: chain.region, values, radius })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationOptions {
    pub start_radius: u32,
    pub max_radius: u32,
    /// Stop doubling once every quantity moves by less than this.
    pub tol: f64,
}

impl Default for TruncationOptions {
    fn default() -> Self {
        TruncationOptions { start_radius: 30, max_radius: 240, tol: 1e-9 }
    }
}

/// Solve at R, 2R, 4R, … until `extract` stabilizes; returns the value at
/// the last radius, that radius, and the last gap.
fn stabilized<T: Clone>(
    bias: &Bias,
    closed: Option<Dir>,
    opts: &TruncationOptions,
    extract: impl Fn(&GreenColumn) -> Vec<f64>,
    keep: impl Fn(GreenColumn) -> T,
) -> Result<(T, Vec<f64>, u32, f64)> {
    let mut r = opts.start_radius.max(2);
    let mut col = green_column(bias, closed, r)?;
    let mut prev = extract(&col);
    loop {
        let next_r = 2 * r;
        if next_r > opts.max_radius {
            return Err(Error::NonConvergence(format!(
                "truncation did not stabilize to {:.1e} by radius {r}",
                opts.tol
            )));
        }
        col = green_column(bias, closed, next_r)?;
        let cur = extract(&col);
        let gap = prev.iter().zip(&cur).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        r = next_r;
        if gap < opts.tol {
            return Ok((keep(col), cur, r, gap));
        }
        prev = cur;
    }
}

/// J^e = G^{ω₀}(0,0) − G^{ω₀}(e,0) for every e, from one column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JValues {
    /// Indexed by `Dir::index`.
    pub j: Vec<f64>,
    pub g00: f64,
    /// G^{ω₀}(e, 0), indexed by direction.
    pub g_e0: Vec<f64>,
    pub radius: u32,
    /// Change under the last radius doubling.
    pub truncation_gap: f64,
}

impl JValues {
    pub fn get(&self, e: Dir) -> f64 {
        self.j[e.index()]
    }
}

fn j_from_column(col: &GreenColumn, d: usize) -> Vec<f64> {
    let o = Vertex::origin(d);
    let mut v = vec![col.at(&o)];
    v.extend(Dir::all(d).map(|e| col.at(&o.step(e))));
    v
}

pub fn compute_j_all(bias: &Bias, opts: &TruncationOptions) -> Result<JValues> {
    let d = bias.dim();
    let (_, vals, radius, gap) = stabilized(bias, None, opts, |c| j_from_column(c, d), |_| ())?;
    Ok(JValues {
        j: vals[1..].iter().map(|g| vals[0] - g).collect(),
        g00: vals[0],
        g_e0: vals[1..].to_vec(),
        radius,
        truncation_gap: gap,
    })
}

/// J^e at a fixed truncation radius (no doubling).
pub fn j_values_at(bias: &Bias, radius: u32) -> Result<JValues> {
    let d = bias.dim();
    let vals = j_from_column(&green_column(bias, None, radius)?, d);
    Ok(JValues {
        j: vals[1..].iter().map(|g| vals[0] - g).collect(),
        g00: vals[0],
        g_e0: vals[1..].to_vec(),
        radius,
        truncation_gap: f64::NAN,
    })
}

/// J^e with its truncation error.
#[allow(non_snake_case)]
pub fn compute_J(bias: &Bias, e: Dir, tol: f64) -> Result<(f64, f64)> {
    let opts = TruncationOptions { tol, ..TruncationOptions::default() };
    let jv = compute_j_all(bias, &opts)?;
    Ok((jv.get(e), jv.truncation_gap))
}

/// max_e |p(e)G(e,0) − p(−e)G(−e,0)|: both sides from one solve.
pub fn reversibility_residual(bias: &Bias, jv: &JValues) -> f64 {
    let k = LocalKernel::from_closed(DirSet::EMPTY, bias);
    Dir::all(bias.dim())
        .map(|e| (k.prob(e) * jv.g_e0[e.index()] - k.prob(e.opposite()) * jv.g_e0[e.opposite().index()]).abs())
        .fold(0.0, f64::max)
}

/// Expected visits to 0 of the full-lattice walk from `start` during its
/// first `horizon` steps (time 0 included).
pub fn visits_mc(bias: &Bias, start: &Vertex, n_walks: u64, horizon: u64, seed: u64) -> Result<McEstimate> {
    if n_walks < 2 {
        return Err(Error::invalid("need at least two walks"));
    }
    let d = bias.dim();
    let k = LocalKernel::from_closed(DirSet::EMPTY, bias);
    let cum: Vec<f64> = Dir::all(d)
        .scan(0.0, |s, e| {
            *s += k.prob(e);
            Some(*s)
        })
        .collect();
    let origin = Vertex::origin(d);
    let counts: Vec<f64> = (0..n_walks)
        .into_par_iter()
        .map(|w| {
            let mut rng = stream(seed, &[0x7669_7369, w]);
            let mut x = *start;
            let mut visits = 0.0;
            for _ in 0..horizon {
                if x == origin {
                    visits += 1.0;
                }
                let u: f64 = rng.random::<f64>() * cum[cum.len() - 1];
                let i = cum.iter().position(|c| u < *c).unwrap_or(cum.len() - 1);
                x = x.step(Dir::from_index(i));
            }
            visits
        })
        .collect();
    let m = crate::stats::mean_se(&counts);
    Ok(McEstimate { mean: m.mean, se: m.se, n_walks, horizon, bias_bound: f64::NAN })
}

/// J^e by Monte Carlo visit counts: E_0[V_0] − E_e[V_0] with independent
/// walks; returns (estimate, standard error).
pub fn j_mc(bias: &Bias, e: Dir, n_walks: u64, horizon: u64, seed: u64) -> Result<(f64, f64)> {
    let o = Vertex::origin(bias.dim());
    let a = visits_mc(bias, &o, n_walks, horizon, crate::rng::derive_seed(seed, &[0]))?;
    let b = visits_mc(bias, &o.step(e), n_walks, horizon, crate::rng::derive_seed(seed, &[1]))?;
    Ok((a.mean - b.mean, a.se.hypot(b.se)))
}

/// 1 − p(e)J^e − p(−e)J^{−e}.
pub fn jee_denominator(bias: &Bias, e: Dir, jv: &JValues) -> f64 {
    let k = LocalKernel::from_closed(DirSet::EMPTY, bias);
    1.0 - k.prob(e) * jv.get(e) - k.prob(e.opposite()) * jv.get(e.opposite())
}

/// J_e^e = (1 − p(e)) J^e / (1 − p(e)J^e − p(−e)J^{−e}).
#[allow(non_snake_case)]
pub fn compute_J_ee(bias: &Bias, e: Dir, jv: &JValues) -> Result<f64> {
    let k = LocalKernel::from_closed(DirSet::EMPTY, bias);
    let den = jee_denominator(bias, e, jv);
    if !(den > 0.0) {
        return Err(Error::IdentityViolation { name: "J_e^e denominator positivity".into(), residual: den, tol: 0.0 });
    }
    Ok((1.0 - k.prob(e)) * jv.get(e) / den)
}

/// Escape probabilities P_x[T_0 = ∞] from a hitting solve (0 pinned to 1,
/// truncation boundary at 0), independent of the Green column.
pub fn escape_probabilities(bias: &Bias, radius: u32) -> Result<Vec<f64>> {
    let chain = chain_for(bias, None, radius)?;
    let o = Vertex::origin(bias.dim());
    let i0 = chain.index(&o)?;
    let h = chain.solve(1.0, &vec![0.0; chain.len()], &[(i0, 1.0)])?;
    Dir::all(bias.dim()).map(|e| Ok(1.0 - h[chain.index(&o.step(e))?])).collect()
}

/// |(1 − p(e)J^e − p(−e)J^{−e}) − (1 − G(0,0)(p(e)P_e[T₀⁺=∞] + p(−e)P_{−e}[T₀⁺=∞]))|.
pub fn escape_identity_residual(bias: &Bias, e: Dir, jv: &JValues, escape: &[f64]) -> f64 {
    let k = LocalKernel::from_closed(DirSet::EMPTY, bias);
    let rhs = 1.0
        - jv.g00 * (k.prob(e) * escape[e.index()] + k.prob(e.opposite()) * escape[e.opposite().index()]);
    (jee_denominator(bias, e, jv) - rhs).abs()
}

/// Quantities read off G^{ω₀^{0,e}}(·, 0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedEdgeTerms {
    pub dir: Dir,
    /// G^{ω₀^{0,e}}(0,0) − G^{ω₀^{0,e}}(e,0).
    pub j_ee_direct: f64,
    pub phi: f64,
    pub psi: f64,
    /// 1 + φ + ψ.
    pub alpha: f64,
    /// |φ + ψ − ((p(e) − p(−e)) J_e^e − p(e))|.
    pub lemma_residual: f64,
    /// |α − (π^e/π^∅ + (d_∅·e) J_e^e)|.
    pub alpha_residual: f64,
    pub radius: u32,
    pub truncation_gap: f64,
}

fn closed_edge_terms_from(bias: &Bias, e: Dir, col: &GreenColumn) -> ClosedEdgeTerms {
    let d = bias.dim();
    let o = Vertex::origin(d);
    let p0 = LocalKernel::from_closed(DirSet::EMPTY, bias);
    let pe = LocalKernel::from_closed(DirSet::single(e), bias);
    let pme = LocalKernel::from_closed(DirSet::single(e.opposite()), bias);
    let x = o.step(e);
    let phi: f64 = Dir::all(d).map(|f| (pe.prob(f) - p0.prob(f)) * col.at(&o.step(f))).sum();
    let psi: f64 = Dir::all(d).map(|f| (pme.prob(f) - p0.prob(f)) * col.at(&x.step(f))).sum();
    let j_ee = col.at(&o) - col.at(&x);
    let lemma_rhs = (p0.prob(e) - p0.prob(e.opposite())) * j_ee - p0.prob(e);
    let alpha = 1.0 + phi + psi;
    let pi_ratio = open_weight(DirSet::single(e), bias) / open_weight(DirSet::EMPTY, bias);
    let alpha_rhs = pi_ratio + dot(&v_one(bias), &e.as_vector(d)) * j_ee;
    ClosedEdgeTerms {
        dir: e,
        j_ee_direct: j_ee,
        phi,
        psi,
        alpha,
        lemma_residual: (phi + psi - lemma_rhs).abs(),
        alpha_residual: (alpha - alpha_rhs).abs(),
        radius: col.radius,
        truncation_gap: f64::NAN,
    }
}

/// φ(e), ψ(e), α(e) and the direct J_e^e at a fixed radius.
pub fn closed_edge_terms_at(bias: &Bias, e: Dir, radius: u32) -> Result<ClosedEdgeTerms> {
    Ok(closed_edge_terms_from(bias, e, &green_column(bias, Some(e), radius)?))
}

/// As [`closed_edge_terms_at`] with radius doubling until stable.
pub fn compute_phi_psi_alpha(bias: &Bias, e: Dir, opts: &TruncationOptions) -> Result<ClosedEdgeTerms> {
    let (terms, _, _, gap) = stabilized(
        bias,
        Some(e),
        opts,
        |c| {
            let t = closed_edge_terms_from(bias, e, c);
            vec![t.j_ee_direct, t.phi, t.psi]
        },
        |c| closed_edge_terms_from(bias, e, &c),
    )?;
    Ok(ClosedEdgeTerms { truncation_gap: gap, ..terms })
}

/// |∑_e π^e d_e − (2d−1) π^∅ d_∅|, with π^A the open weight at a vertex.
pub fn pi_identity_residual(bias: &Bias) -> f64 {
    let d = bias.dim();
    let pi0 = open_weight(DirSet::EMPTY, bias);
    let v = v_one(bias);
    let mut lhs = vec![0.0; d];
    for e in Dir::all(d) {
        let pe = open_weight(DirSet::single(e), bias);
        for (l, de) in lhs.iter_mut().zip(drift_with_closed(bias, e)) {
            *l += pe * de;
        }
    }
    lhs.iter().zip(&v).map(|(l, v)| (l - (2 * d - 1) as f64 * pi0 * v).abs()).fold(0.0, f64::max)
}

/// v′(1) = ∑_e (v·e) J_e^e (v − d_e).
pub fn derivative_from_jee(bias: &Bias, j_ee: &[f64]) -> Vec<f64> {
    let d = bias.dim();
    let v = v_one(bias);
    let mut out = vec![0.0; d];
    for e in Dir::all(d) {
        let w = dot(&v, &e.as_vector(d)) * j_ee[e.index()];
        for (o, (vi, di)) in out.iter_mut().zip(v.iter().zip(drift_with_closed(bias, e))) {
            *o += w * (vi - di);
        }
    }
    out
}

/// v′(1) = ∑_e (v·e) p(e)J^e / (1 − p(e)J^e − p(−e)J^{−e}) (e − v).
pub fn derivative_from_j(bias: &Bias, jv: &JValues) -> Vec<f64> {
    let d = bias.dim();
    let v = v_one(bias);
    let k = LocalKernel::from_closed(DirSet::EMPTY, bias);
    let mut out = vec![0.0; d];
    for e in Dir::all(d) {
        let ev = e.as_vector(d);
        let w = dot(&v, &ev) * k.prob(e) * jv.get(e) / jee_denominator(bias, e, jv);
        for (o, (ei, vi)) in out.iter_mut().zip(ev.iter().zip(&v)) {
            *o += w * (ei - vi);
        }
    }
    out
}

/// v′(1) = −∑_e α(e)(d_e − d_∅).
pub fn derivative_alpha(bias: &Bias, alpha: &[f64]) -> Vec<f64> {
    let d = bias.dim();
    let v = v_one(bias);
    let mut out = vec![0.0; d];
    for e in Dir::all(d) {
        for (o, (di, vi)) in out.iter_mut().zip(drift_with_closed(bias, e).iter().zip(&v)) {
            *o -= alpha[e.index()] * (di - vi);
        }
    }
    out
}

/// α(e) = π^e/π^∅ + (d_∅·e) J_e^e.
pub fn alpha_closed_form(bias: &Bias, e: Dir, j_ee: f64) -> f64 {
    let pi_ratio = open_weight(DirSet::single(e), bias) / open_weight(DirSet::EMPTY, bias);
    pi_ratio + dot(&v_one(bias), &e.as_vector(bias.dim())) * j_ee
}

/// Contribution of the pair {e, −e} to `derivative_from_j` for e = +e_i.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisPair {
    pub axis: usize,
    pub h: Vec<f64>,
    pub beta: f64,
    pub h_dot_v: f64,
}

pub fn axis_pairs(bias: &Bias, jv: &JValues) -> Vec<AxisPair> {
    let d = bias.dim();
    let v = v_one(bias);
    let k = LocalKernel::from_closed(DirSet::EMPTY, bias);
    (0..d)
        .map(|i| {
            let e = Dir::new(i, true);
            let m = e.opposite();
            let den = jee_denominator(bias, e, jv);
            let (a, b) = (k.prob(e) * jv.get(e), k.prob(m) * jv.get(m));
            let ve = v[i];
            let h: Vec<f64> = (0..d)
                .map(|c| ve / den * ((a + b) * e.as_vector(d)[c] - (a - b) * v[c]))
                .collect();
            AxisPair { axis: i, h_dot_v: dot(&h, &v), beta: ve / den, h }
        })
        .collect()
}

/// Per-direction slow-down condition v·e ≥ ‖v‖² for directions with v·e > 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slowdown {
    /// (direction, v·e, condition) for each e with v·e > 0.
    pub per_direction: Vec<(Dir, f64, bool)>,
    pub holds: bool,
    pub norm_sq: f64,
    /// v(1)·v′(1), filled in by [`derivative`].
    pub dot_product: f64,
}

pub fn slowdown_condition(bias: &Bias) -> Slowdown {
    let d = bias.dim();
    let v = v_one(bias);
    let norm_sq = dot(&v, &v);
    let per: Vec<(Dir, f64, bool)> = Dir::all(d)
        .map(|e| (e, dot(&v, &e.as_vector(d))))
        .filter(|(_, p)| *p > 0.0)
        .map(|(e, p)| (e, p, p >= norm_sq))
        .collect();
    Slowdown { holds: per.iter().all(|x| x.2), per_direction: per, norm_sq, dot_product: f64::NAN }
}

/// Largest λ ≤ `lambda_max` below which the slow-down condition holds for
/// direction ℓ̂, by a grid scan for the first failure then bisection.
/// `None` if it never fails on the grid.
pub fn critical_lambda(direction: &[f64], lambda_max: f64, tol: f64) -> Result<Option<f64>> {
    let holds = |l: f64| -> Result<bool> { Ok(slowdown_condition(&Bias::new(l, direction)?).holds) };
    let steps = 400;
    let mut prev = lambda_max / steps as f64;
    if !holds(prev)? {
        return Ok(Some(0.0));
    }
    for k in 2..=steps {
        let l = lambda_max * k as f64 / steps as f64;
        if !holds(l)? {
            let (mut lo, mut hi) = (prev, l);
            while hi - lo > tol {
                let mid = 0.5 * (lo + hi);
                if holds(mid)? {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Ok(Some(lo));
        }
        prev = l;
    }
    Ok(None)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionEntry {
    pub dir: Dir,
    pub label: String,
    pub d_e: Vec<f64>,
    pub j: f64,
    /// Closed form from the J values.
    pub j_ee: f64,
    pub terms: ClosedEdgeTerms,
    /// π^e/π^∅ + (d_∅·e) J_e^e with the closed-form J_e^e.
    pub alpha_closed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub sign_convention: String,
    pub lambda: f64,
    pub direction: Vec<f64>,
    pub v1: Vec<f64>,
    pub g00: f64,
    pub directions: Vec<DirectionEntry>,
    pub derivative_from_jee: Vec<f64>,
    pub derivative_from_j: Vec<f64>,
    /// −∑ α(e)(d_e − d_∅) with α from the closed form.
    pub derivative_alpha: Vec<f64>,
    /// Same with α = 1 + φ + ψ read off the Green tables.
    pub derivative_alpha_tables: Vec<f64>,
    pub axis_pairs: Vec<AxisPair>,
    pub truncation_radius: u32,
    pub j_error: f64,
    pub reversibility_residual: f64,
    pub pi_identity_residual: f64,
    pub forms_relative_gap: f64,
    pub slowdown: Slowdown,
}

fn rel_gap(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// The full report. Fails if the two derivative forms disagree beyond
/// `form_tol` (relative) or any positivity invariant breaks.
pub fn derivative(bias: &Bias, opts: &TruncationOptions, form_tol: f64) -> Result<ExpansionReport> {
    let d = bias.dim();
    let jv = compute_j_all(bias, opts)?;
    let dirs: Vec<Dir> = Dir::all(d).collect();
    let terms: Vec<ClosedEdgeTerms> =
        dirs.par_iter().map(|e| compute_phi_psi_alpha(bias, *e, opts)).collect::<Result<_>>()?;
    let mut entries = Vec::with_capacity(2 * d);
    for (e, t) in dirs.iter().zip(terms) {
        let j = jv.get(*e);
        if !(j > 0.0) {
            return Err(Error::IdentityViolation { name: format!("J^{e:?} > 0"), residual: j, tol: 0.0 });
        }
        let j_ee = compute_J_ee(bias, *e, &jv)?;
        entries.push(DirectionEntry {
            dir: *e,
            label: format!("{e:?}"),
            d_e: drift_with_closed(bias, *e),
            j,
            j_ee,
            alpha_closed: alpha_closed_form(bias, *e, j_ee),
            terms: t,
        });
    }
    let j_ee: Vec<f64> = entries.iter().map(|x| x.j_ee).collect();
    let alpha: Vec<f64> = entries.iter().map(|x| x.alpha_closed).collect();
    let alpha_tab: Vec<f64> = entries.iter().map(|x| x.terms.alpha).collect();
    let from_jee = derivative_from_jee(bias, &j_ee);
    let from_j = derivative_from_j(bias, &jv);
    let gap = rel_gap(&from_jee, &from_j);
    if gap > form_tol {
        return Err(Error::IdentityViolation { name: "derivative forms".into(), residual: gap, tol: form_tol });
    }
    let mut slowdown = slowdown_condition(bias);
    slowdown.dot_product = dot(&v_one(bias), &from_j);
    let j_error = entries.iter().map(|x| x.terms.truncation_gap).fold(jv.truncation_gap, f64::max);
    Ok(ExpansionReport {
        sign_convention: SIGN_CONVENTION.into(),
        lambda: bias.lambda,
        direction: bias.direction.clone(),
        v1: v_one(bias),
        g00: jv.g00,
        derivative_alpha: derivative_alpha(bias, &alpha),
        derivative_alpha_tables: derivative_alpha(bias, &alpha_tab),
        axis_pairs: axis_pairs(bias, &jv),
        truncation_radius: jv.radius,
        j_error,
        reversibility_residual: reversibility_residual(bias, &jv),
        pi_identity_residual: pi_identity_residual(bias),
        forms_relative_gap: gap,
        derivative_from_jee: from_jee,
        derivative_from_j: from_j,
        directions: entries,
        slowdown,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bias() -> Bias {
        Bias::axis(2, 0.5).unwrap()
    }

    #[test]
    fn full_lattice_drifts() {
        let b = bias();
        let v = v_one(&b);
        assert!((v[0] - (0.25f64).tanh()).abs() < 1e-15);
        assert_eq!(v[1], 0.0);
        let de1 = drift_with_closed(&b, Dir::new(0, true));
        let n = (-0.5f64).exp() + 2.0;
        assert!((de1[0] + (-0.5f64).exp() / n).abs() < 1e-15);
        let de2 = drift_with_closed(&b, Dir::new(1, true));
        let pi_e2 = 0.5f64.exp() + (-0.5f64).exp() + 1.0;
        assert!((de2[0] - (0.5f64.exp() - (-0.5f64).exp()) / pi_e2).abs() < 1e-15);
    }

    #[test]
    fn pi_identity_is_exact() {
        for l in [0.1, 0.5, 2.0] {
            let b = Bias::new(l, &[1.0, 0.4, -0.3]).unwrap();
            assert!(pi_identity_residual(&b) < 1e-12);
        }
    }

    #[test]
    fn j_values_small_box() {
        let b = bias();
        let jv = j_values_at(&b, 16).unwrap();
        assert!(jv.j.iter().all(|j| *j > 0.0));
        let (e2, m2) = (Dir::new(1, true), Dir::new(1, false));
        assert!((jv.get(e2) - jv.get(m2)).abs() < 1e-12);
        assert!(reversibility_residual(&b, &jv) < 1e-6);
        for e in Dir::all(2) {
            let den = jee_denominator(&b, e, &jv);
            assert!(den > 0.0 && den < 1.0);
            let t = closed_edge_terms_at(&b, e, 16).unwrap();
            assert!(t.lemma_residual < 1e-10 && t.alpha_residual < 1e-10);
        }
        let e2t = closed_edge_terms_at(&b, e2, 16).unwrap();
        let m2t = closed_edge_terms_at(&b, m2, 16).unwrap();
        assert!((e2t.phi - m2t.phi).abs() < 1e-12);
    }

    #[test]
    fn closed_form_at_zero_inputs() {
        let b = bias();
        let jv = JValues { j: vec![0.0; 4], g00: 1.0, g_e0: vec![1.0; 4], radius: 0, truncation_gap: 0.0 };
        assert_eq!(compute_J_ee(&b, Dir::new(0, true), &jv).unwrap(), 0.0);
        let bad = JValues { j: vec![5.0; 4], ..jv };
        assert!(compute_J_ee(&b, Dir::new(0, true), &bad).is_err());
    }

    #[test]
    fn forms_agree_and_slowdown_holds_on_axis() {
        let b = bias();
        let jv = j_values_at(&b, 16).unwrap();
        let jee: Vec<f64> = Dir::all(2).map(|e| compute_J_ee(&b, e, &jv).unwrap()).collect();
        let from_jee = derivative_from_jee(&b, &jee);
        let from_j = derivative_from_j(&b, &jv);
        assert!(rel_gap(&from_jee, &from_j) < 1e-12);
        let alpha: Vec<f64> = Dir::all(2).zip(&jee).map(|(e, j)| alpha_closed_form(&b, e, *j)).collect();
        assert!(rel_gap(&derivative_alpha(&b, &alpha), &from_j) < 1e-12);
        let pairs = axis_pairs(&b, &jv);
        let sum: Vec<f64> = (0..2).map(|c| pairs.iter().map(|p| p.h[c]).sum()).collect();
        assert!(rel_gap(&sum, &from_j) < 1e-12);
        let s = slowdown_condition(&b);
        assert!(s.holds);
        assert!(dot(&v_one(&b), &from_j) > 0.0);
    }

    #[test]
    fn critical_lambda_off_axis() {
        // Along an axis the condition holds for every λ.
        assert_eq!(critical_lambda(&[1.0, 0.0], 5.0, 1e-6).unwrap(), None);
        let lc = critical_lambda(&[1.0, 0.2], 20.0, 1e-8).unwrap().unwrap();
        assert!(lc > 0.0);
        assert!(slowdown_condition(&Bias::new(lc, &[1.0, 0.2]).unwrap()).holds);
        assert!(!slowdown_condition(&Bias::new(lc + 1e-6, &[1.0, 0.2]).unwrap()).holds);
    }
}
