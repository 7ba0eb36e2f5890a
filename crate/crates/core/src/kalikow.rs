//! Kalikow's auxiliary environment
//! p̂(z, z+e) = E[G_δ^ω(0,z) p^ω(z,z+e) | I] / E[G_δ^ω(0,z) | I],
//! estimated on the lattice by Monte Carlo and computed exactly on tiny
//! enumerable instances.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{
    condition_on_infinite_cluster, reaches_sphere, EdgeStates, EnvironmentOracle, Surgered, SurgerySpec,
};
use crate::error::{Error, Result};
use crate::green::{green_exact, Boundary, FiniteChain};
use crate::kernel::{local_drift, transition_row, Bias, LocalKernel};
use crate::lattice::{Ball, Dir, DirSet, Edge, Region, Vertex};
use crate::linalg::dense_resolvent;
use crate::rng::{derive_seed, stream, SeedStream};
use crate::stats::ratio_estimate;

/// One estimated row of p̂, indexed by direction, plus the lazy part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KalikowRow {
    pub probs: Vec<f64>,
    pub self_loop: f64,
    pub se: Vec<f64>,
    pub self_loop_se: f64,
}

impl KalikowRow {
    fn exact(k: &LocalKernel) -> Self {
        let d = k.dim();
        KalikowRow {
            probs: Dir::all(d).map(|e| k.prob(e)).collect(),
            self_loop: k.self_loop(),
            se: vec![0.0; 2 * d],
            self_loop_se: 0.0,
        }
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum::<f64>() + self.self_loop
    }

    /// ∑_e p̂(z, z+e) e.
    pub fn drift(&self) -> Vec<f64> {
        let d = self.probs.len() / 2;
        let mut v = vec![0.0; d];
        for e in Dir::all(d) {
            v[e.axis()] += e.sign() as f64 * self.probs[e.index()];
        }
        v
    }

    pub fn prob(&self, e: Dir) -> f64 {
        self.probs[e.index()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KalikowField {
    pub rows: Vec<(Vertex, KalikowRow)>,
    pub drift: Vec<(Vertex, Vec<f64>)>,
    /// Delta-method standard errors of the drift components.
    pub drift_se: Vec<(Vertex, Vec<f64>)>,
    pub delta: f64,
    pub epsilon: f64,
    pub n_envs: u64,
}

/// Box and conditioning used by the lattice estimators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KalikowSetup {
    /// Green functions are computed killed on leaving this ball.
    pub ball: Ball,
    /// I is approximated by "the origin's cluster reaches ∂B(0, check_radius)".
    pub check_radius: u32,
    pub rejection_budget: u64,
}

impl KalikowSetup {
    pub fn new(d: usize, box_radius: u32, check_radius: u32) -> Self {
        KalikowSetup { ball: Ball::around_origin(d, box_radius), check_radius, rejection_budget: 10_000 }
    }
}

fn check_common(p: f64, bias: &Bias, delta: f64, z: &Vertex, setup: &KalikowSetup, n_envs: u64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("p = {p} outside [0, 1]")));
    }
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::invalid(format!("Kalikow rows need δ ∈ [0, 1), got {delta}")));
    }
    if bias.dim() != z.dim() || setup.ball.dim() != z.dim() {
        return Err(Error::invalid("dimension mismatch"));
    }
    if z.l1_dist(&setup.ball.center) + 1 > setup.ball.radius as u64 {
        return Err(Error::invalid("z must lie inside the box with a margin of one"));
    }
    if n_envs < 2 {
        return Err(Error::invalid("at least two environments are needed for standard errors"));
    }
    Ok(())
}

/// (G_δ(0,z)·p(z,·), G_δ(0,z)) with the numerator laid out as
/// [p(e) for e in directions] ++ [self-loop].
fn weighted_row(g: f64, k: &LocalKernel) -> Vec<f64> {
    let mut v: Vec<f64> = Dir::all(k.dim()).map(|e| g * k.prob(e)).collect();
    v.push(g * k.self_loop());
    v
}

fn row_from_ratio(r: &[f64], se: &[f64]) -> KalikowRow {
    let k = r.len() - 1;
    KalikowRow { probs: r[..k].to_vec(), self_loop: r[k], se: se[..k].to_vec(), self_loop_se: se[k] }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowEstimate {
    pub z: Vertex,
    pub row: KalikowRow,
    pub drift: Vec<f64>,
    pub drift_se: Vec<f64>,
    pub n_envs: u64,
    /// Rejected environments across all draws.
    pub rejections: u64,
}

fn finish_row(z: Vertex, samples: Vec<(Vec<f64>, f64)>, rejections: u64) -> Result<RowEstimate> {
    let n_envs = samples.len() as u64;
    let d = z.dim();
    let (num, den): (Vec<Vec<f64>>, Vec<f64>) = samples.into_iter().unzip();
    let (r, se) = ratio_estimate(&num, &den)?;
    let row = row_from_ratio(&r, &se);
    // The drift is a linear image of the row: estimate it with its own
    // delta-method error rather than combining entry errors.
    let dnum: Vec<Vec<f64>> = num
        .iter()
        .map(|v| {
            let mut out = vec![0.0; d];
            for e in Dir::all(d) {
                out[e.axis()] += e.sign() as f64 * v[e.index()];
            }
            out
        })
        .collect();
    let (drift, drift_se) = ratio_estimate(&dnum, &den)?;
    Ok(RowEstimate { z, row, drift, drift_se, n_envs, rejections })
}

/// Monte Carlo p̂(z, ·) on the lattice: `n_envs` I-conditioned
/// environments, each used for both numerator and denominator.
#[allow(clippy::too_many_arguments)]
pub fn kalikow_row_mc(
    p: f64,
    bias: &Bias,
    delta: f64,
    z: &Vertex,
    n_envs: u64,
    seed: u64,
    setup: &KalikowSetup,
) -> Result<RowEstimate> {
    check_common(p, bias, delta, z, setup, n_envs)?;
    let d = z.dim();
    let origin = Vertex::origin(d);
    let samples: Vec<Result<((Vec<f64>, f64), u64)>> = (0..n_envs)
        .into_par_iter()
        .map(|i| {
            let seeds = SeedStream::new(derive_seed(seed, &[0x6b61_6c69, i]), 0);
            let cond = condition_on_infinite_cluster(p, d, setup.check_radius, seeds, setup.rejection_budget)?;
            let g = green_exact(&cond.oracle, bias, delta, z, &setup.ball, f64::INFINITY)?.value(&origin);
            let k = transition_row(&cond.oracle, z, bias)?;
            Ok(((weighted_row(g, &k), g), cond.rejections))
        })
        .collect();
    let mut rows = Vec::with_capacity(samples.len());
    let mut rejections = 0;
    for s in samples {
        let (r, rej) = s?;
        rows.push(r);
        rejections += rej;
    }
    finish_row(*z, rows, rejections)
}

/// The field on a list of vertices, one independent run per vertex.
#[allow(clippy::too_many_arguments)]
pub fn kalikow_field_mc(
    p: f64,
    bias: &Bias,
    delta: f64,
    zs: &[Vertex],
    n_envs: u64,
    seed: u64,
    setup: &KalikowSetup,
) -> Result<KalikowField> {
    let mut field = KalikowField {
        rows: Vec::new(),
        drift: Vec::new(),
        drift_se: Vec::new(),
        delta,
        epsilon: 1.0 - p,
        n_envs,
    };
    for (j, z) in zs.iter().enumerate() {
        let est = kalikow_row_mc(p, bias, delta, z, n_envs, derive_seed(seed, &[j as u64]), setup)?;
        field.rows.push((*z, est.row));
        field.drift.push((*z, est.drift));
        field.drift_se.push((*z, est.drift_se));
    }
    Ok(field)
}

/// P[C(z) = A] = ε^{|A|} (1−ε)^{2d−|A|}.
pub fn config_probability(p: f64, d: usize, a: DirSet) -> f64 {
    let k = a.len() as i32;
    (1.0 - p).powi(k) * p.powi(2 * d as i32 - k)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigWeight {
    pub closed: DirSet,
    /// P[C(z) = A].
    pub probability: f64,
    /// E[1_I G_δ(0,z) | C(z) = A] / E[1_I G_δ(0,z)].
    pub ratio: f64,
    pub ratio_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecomposedDrift {
    pub z: Vertex,
    pub drift: Vec<f64>,
    pub drift_se: Vec<f64>,
    pub weights: Vec<ConfigWeight>,
    pub n_envs: u64,
}

/// X_A = 1_I(ω^{z,A}) G_δ^{ω^{z,A}}(0, z) for every A ⊊ ν, all on one base
/// environment. A = ν is left out: an isolated z ≠ 0 is never visited and
/// an isolated origin is not in I.
fn star_samples(
    oracle: &EnvironmentOracle,
    bias: &Bias,
    delta: f64,
    z: &Vertex,
    setup: &KalikowSetup,
    configs: &[DirSet],
) -> Result<Vec<f64>> {
    let origin = Vertex::origin(z.dim());
    configs
        .iter()
        .map(|a| {
            let spec = SurgerySpec::star(*z, *a);
            let view = Surgered { base: oracle, spec: &spec };
            if !reaches_sphere(&view, &origin, setup.check_radius)? {
                return Ok(0.0);
            }
            Ok(green_exact(&view, bias, delta, z, &setup.ball, f64::INFINITY)?.value(&origin))
        })
        .collect()
}

fn star_table(
    p: f64,
    bias: &Bias,
    delta: f64,
    z: &Vertex,
    n_envs: u64,
    seed: u64,
    setup: &KalikowSetup,
) -> Result<(Vec<DirSet>, Vec<Vec<f64>>)> {
    let d = z.dim();
    let configs: Vec<DirSet> = DirSet::proper_subsets(d).collect();
    let per_env: Vec<Result<Vec<f64>>> = (0..n_envs)
        .into_par_iter()
        .map(|i| {
            let oracle = EnvironmentOracle::new(derive_seed(seed, &[0x6465_636f, i]), p)?;
            star_samples(&oracle, bias, delta, z, setup, &configs)
        })
        .collect();
    let table = per_env.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((configs, table))
}

/// d̂(z) = ∑_{A⊊ν} P[C(z)=A] · ratio_A · d_A, each ratio estimated through
/// the surgery ω^{z,A} on shared environments. The denominator
/// E[1_I G] = ∑_A P[C=A] E[X_A] is assembled from the same samples.
#[allow(clippy::too_many_arguments)]
pub fn kalikow_drift_decomposed(
    p: f64,
    bias: &Bias,
    delta: f64,
    z: &Vertex,
    n_envs: u64,
    seed: u64,
    setup: &KalikowSetup,
) -> Result<DecomposedDrift> {
    check_common(p, bias, delta, z, setup, n_envs)?;
    let d = z.dim();
    let (configs, table) = star_table(p, bias, delta, z, n_envs, seed, setup)?;
    let q: Vec<f64> = configs.iter().map(|a| config_probability(p, d, *a)).collect();
    let drifts: Vec<Vec<f64>> = configs.iter().map(|a| local_drift(*a, bias)).collect::<Result<_>>()?;
    let den: Vec<f64> = table.iter().map(|x| x.iter().zip(&q).map(|(x, q)| x * q).sum()).collect();
    let num: Vec<Vec<f64>> = table
        .iter()
        .map(|x| {
            let mut v = vec![0.0; d];
            for ((xa, qa), da) in x.iter().zip(&q).zip(&drifts) {
                for c in 0..d {
                    v[c] += qa * xa * da[c];
                }
            }
            v
        })
        .collect();
    let (drift, drift_se) = ratio_estimate(&num, &den)?;
    let (ratios, ratio_se) = ratio_estimate(&table, &den)?;
    let weights = configs
        .iter()
        .zip(&q)
        .zip(ratios.iter().zip(&ratio_se))
        .map(|((a, q), (r, s))| ConfigWeight { closed: *a, probability: *q, ratio: *r, ratio_se: *s })
        .collect();
    Ok(DecomposedDrift { z: *z, drift, drift_se, weights, n_envs })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioEntry {
    pub z: Vertex,
    pub delta: f64,
    pub ratio: f64,
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioTable {
    pub closed: DirSet,
    pub epsilon: f64,
    pub n_envs: u64,
    pub entries: Vec<RatioEntry>,
    /// Per z: the largest ratio over δ stays within twice the value at the
    /// smallest δ.
    pub bounded: Vec<(Vertex, bool)>,
}

impl RatioTable {
    pub fn write_csv(&self, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["z", "delta", "ratio", "se"])?;
        for e in &self.entries {
            let z: Vec<String> = e.z.coords().iter().map(|c| c.to_string()).collect();
            w.write_record([z.join(" "), e.delta.to_string(), e.ratio.to_string(), e.se.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// E[1_I G_δ(0,z) | C(z)=A] / E[1_I G_δ(0,z)] over a grid of z and δ,
/// with a boundedness flag per z. No value of the limiting constant is
/// asserted.
#[allow(clippy::too_many_arguments)]
pub fn conditional_ratio_experiment(
    p: f64,
    bias: &Bias,
    zs: &[Vertex],
    a: DirSet,
    deltas: &[f64],
    n_envs: u64,
    seed: u64,
    setup: &KalikowSetup,
) -> Result<RatioTable> {
    let d = bias.dim();
    if a.is_full(d) {
        return Err(Error::invalid("A must be a proper subset of the directions"));
    }
    if deltas.is_empty() {
        return Err(Error::invalid("need at least one δ"));
    }
    let mut entries = Vec::new();
    let mut bounded = Vec::new();
    for (j, z) in zs.iter().enumerate() {
        let mut first = None;
        let mut worst = f64::NEG_INFINITY;
        for dl in deltas {
            check_common(p, bias, *dl, z, setup, n_envs)?;
            // Same environments for every δ at a given z.
            let (configs, table) = star_table(p, bias, *dl, z, n_envs, derive_seed(seed, &[j as u64]), setup)?;
            let q: Vec<f64> = configs.iter().map(|c| config_probability(p, d, *c)).collect();
            let den: Vec<f64> = table.iter().map(|x| x.iter().zip(&q).map(|(x, q)| x * q).sum()).collect();
            let ia = configs.iter().position(|c| *c == a).expect("A is a proper subset");
            let num: Vec<Vec<f64>> = table.iter().map(|x| vec![x[ia]]).collect();
            let (r, se) = ratio_estimate(&num, &den)?;
            entries.push(RatioEntry { z: *z, delta: *dl, ratio: r[0], se: se[0] });
            first.get_or_insert(r[0]);
            worst = worst.max(r[0]);
        }
        bounded.push((*z, worst <= 2.0 * first.unwrap_or(f64::INFINITY)));
    }
    Ok(RatioTable { closed: a, epsilon: 1.0 - p, n_envs, entries, bounded })
}

/// Which configurations of an enumerable instance are kept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Condition {
    Always,
    /// `from` is joined by open edges inside the region to a vertex with a
    /// lattice neighbour outside it.
    ReachesBoundary(Vertex),
}

/// A finite graph with a few random edges. Edges of the region that are not
/// random are open; with [`Boundary::Confined`] the walk never leaves.
#[derive(Clone, Debug)]
pub struct EnumerableInstance {
    pub region: Region,
    pub bias: Bias,
    pub random_edges: Vec<Edge>,
    /// Probability that each random edge is open.
    pub p_open: Vec<f64>,
    pub boundary: Boundary,
    pub condition: Condition,
    pub start: Vertex,
}

pub const MAX_ENUMERATED_EDGES: usize = 20;

impl EnumerableInstance {
    /// Every random edge open with probability `p`, walk confined to the
    /// region, no conditioning, started at the origin.
    pub fn new(region: Region, bias: Bias, random_edges: Vec<Edge>, p: f64) -> Result<Self> {
        let n = random_edges.len();
        let inst = EnumerableInstance {
            start: Vertex::origin(bias.dim()),
            region,
            bias,
            random_edges,
            p_open: vec![p; n],
            boundary: Boundary::Confined,
            condition: Condition::Always,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        if self.random_edges.len() > MAX_ENUMERATED_EDGES {
            return Err(Error::invalid(format!(
                "{} random edges exceed the enumeration limit of {MAX_ENUMERATED_EDGES}",
                self.random_edges.len()
            )));
        }
        if self.p_open.len() != self.random_edges.len() || self.p_open.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("one open probability in [0, 1] per random edge"));
        }
        if !self.region.contains(&self.start) {
            return Err(Error::invalid("start vertex outside the region"));
        }
        Ok(())
    }

    /// The strip [−2, 4] × [−2, 2]^{d−1} with random edges at the stars of
    /// 0, e₁ and 2e₁ plus the two e₁-edges one row up (12 edges in d = 2),
    /// conditioned on the origin reaching the strip boundary.
    pub fn strip(bias: Bias, p: f64) -> Result<Self> {
        let d = bias.dim();
        if d < 2 {
            return Err(Error::invalid("the strip instance needs d ≥ 2"));
        }
        let lo = vec![-2; d];
        let mut hi = vec![2; d];
        hi[0] = 4;
        let region = Region::cuboid(&lo, &hi)?;
        let e1 = Dir::new(0, true);
        let up = Dir::new(1, true);
        let mut edges = Vec::new();
        let mut x = Vertex::origin(d);
        for _ in 0..3 {
            for e in Dir::all(d) {
                let edge = Edge::at(x, e);
                if !edges.contains(&edge) {
                    edges.push(edge);
                }
            }
            x = x.step(e1);
        }
        let mut y = Vertex::origin(d).step(up);
        for _ in 0..2 {
            edges.push(Edge::at(y, e1));
            y = y.step(e1);
        }
        let mut inst = EnumerableInstance::new(region, bias, edges, p)?;
        inst.condition = Condition::ReachesBoundary(Vertex::origin(d));
        Ok(inst)
    }

    pub fn n_configs(&self) -> u64 {
        1u64 << self.random_edges.len()
    }

    fn weight(&self, bits: u64) -> f64 {
        self.p_open
            .iter()
            .enumerate()
            .map(|(i, p)| if bits >> i & 1 == 1 { *p } else { 1.0 - p })
            .product()
    }

    fn config(&self, bits: u64) -> InstanceConfig<'_> {
        InstanceConfig { inst: self, bits }
    }

    fn accepts(&self, omega: &impl EdgeStates) -> Result<bool> {
        match &self.condition {
            Condition::Always => Ok(true),
            Condition::ReachesBoundary(v) => {
                let mut seen = std::collections::HashSet::from([*v]);
                let mut stack = vec![*v];
                while let Some(u) = stack.pop() {
                    for e in Dir::all(u.dim()) {
                        let w = u.step(e);
                        if !self.region.contains(&w) {
                            return Ok(true);
                        }
                        if !seen.contains(&w) && omega.state(&Edge::at(u, e))? {
                            seen.insert(w);
                            stack.push(w);
                        }
                    }
                }
                Ok(false)
            }
        }
    }

    /// p^ω on the region (dense) for configuration `bits`.
    fn kernel(&self, bits: u64) -> Result<DMatrix<f64>> {
        Ok(FiniteChain::build(&self.config(bits), &self.bias, self.region.clone(), self.boundary)?.dense())
    }
}

struct InstanceConfig<'a> {
    inst: &'a EnumerableInstance,
    bits: u64,
}

impl EdgeStates for InstanceConfig<'_> {
    fn state(&self, e: &Edge) -> Result<bool> {
        match self.inst.random_edges.iter().position(|r| r == e) {
            Some(i) => Ok(self.bits >> i & 1 == 1),
            None => Ok(true),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExhaustiveResult {
    /// p̂ on every vertex of the region, in region order.
    pub rows: Vec<(Vertex, Vec<f64>)>,
    /// E[G_δ^ω(start, ·) | condition].
    pub annealed_green: Vec<f64>,
    /// G_δ^{p̂}(start, ·).
    pub kalikow_green: Vec<f64>,
    /// |E[G_δ^ω(start, z)] − G_δ^{p̂}(start, z)|.
    pub residual: f64,
    pub max_residual: f64,
    pub accepted_probability: f64,
    pub n_configs: u64,
}

/// Enumerate every configuration, build p̂ from exact per-configuration
/// Green functions, and compare the Green function of the p̂-chain with the
/// annealed one.
pub fn kalikow_exhaustive(inst: &EnumerableInstance, delta: f64, z: &Vertex) -> Result<ExhaustiveResult> {
    inst.validate()?;
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::invalid(format!("δ = {delta} outside [0, 1)")));
    }
    let n = inst.region.len();
    let iz = inst.region.index_of(z).ok_or_else(|| Error::invalid("z outside the region"))?;
    let i0 = inst.region.index_of(&inst.start).expect("validated");
    // Fixed-size chunks keep the floating-point summation order independent
    // of the thread count.
    const CHUNK: u64 = 256;
    let n_chunks = inst.n_configs().div_ceil(CHUNK);
    let partial: Vec<Result<(f64, Vec<f64>, DMatrix<f64>)>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut w_sum = 0.0;
            let mut g_sum = vec![0.0; n];
            let mut num = DMatrix::zeros(n, n);
            for bits in c * CHUNK..((c + 1) * CHUNK).min(inst.n_configs()) {
                let w = inst.weight(bits);
                if w == 0.0 || !inst.accepts(&inst.config(bits))? {
                    continue;
                }
                let p = inst.kernel(bits)?;
                let g = dense_resolvent(&p, delta)?;
                w_sum += w;
                for x in 0..n {
                    let gx = w * g[(i0, x)];
                    g_sum[x] += gx;
                    for y in 0..n {
                        num[(x, y)] += gx * p[(x, y)];
                    }
                }
            }
            Ok((w_sum, g_sum, num))
        })
        .collect();
    let mut total = 0.0;
    let mut g_sum = vec![0.0; n];
    let mut num = DMatrix::zeros(n, n);
    for part in partial {
        let (w, g, m) = part?;
        total += w;
        for x in 0..n {
            g_sum[x] += g[x];
        }
        num += m;
    }
    if !(total > 0.0) {
        return Err(Error::invalid("the conditioning event has probability 0"));
    }
    let annealed: Vec<f64> = g_sum.iter().map(|g| g / total).collect();
    // Rows never reached from the start are not seen by p̂-walks from it;
    // they get the all-open kernel.
    let fallback = FiniteChain::build(&inst.config(u64::MAX), &inst.bias, inst.region.clone(), inst.boundary)?.dense();
    let mut phat = DMatrix::zeros(n, n);
    for x in 0..n {
        for y in 0..n {
            phat[(x, y)] = if g_sum[x] > 0.0 { num[(x, y)] / g_sum[x] } else { fallback[(x, y)] };
        }
    }
    let gk = dense_resolvent(&phat, delta)?;
    let kalikow: Vec<f64> = (0..n).map(|x| gk[(i0, x)]).collect();
    let max_residual = annealed.iter().zip(&kalikow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(ExhaustiveResult {
        rows: (0..n).map(|x| (inst.region.vertex(x), phat.row(x).iter().copied().collect())).collect(),
        residual: (annealed[iz] - kalikow[iz]).abs(),
        annealed_green: annealed,
        kalikow_green: kalikow,
        max_residual,
        accepted_probability: total,
        n_configs: inst.n_configs(),
    })
}

/// p̂(z, ·) of an enumerable instance by Monte Carlo over its own law
/// (rejection on the condition), for comparison with the exhaustive row.
/// Entries are laid out like [`KalikowRow`].
pub fn kalikow_row_mc_instance(
    inst: &EnumerableInstance,
    delta: f64,
    z: &Vertex,
    n_envs: u64,
    seed: u64,
    rejection_budget: u64,
) -> Result<RowEstimate> {
    inst.validate()?;
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::invalid(format!("δ = {delta} outside [0, 1)")));
    }
    if n_envs < 2 {
        return Err(Error::invalid("at least two environments are needed for standard errors"));
    }
    let iz = inst.region.index_of(z).ok_or_else(|| Error::invalid("z outside the region"))?;
    let i0 = inst.region.index_of(&inst.start).expect("validated");
    let d = z.dim();
    let samples: Vec<Result<((Vec<f64>, f64), u64)>> = (0..n_envs)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, &[0x696e_7374, i]);
            for attempt in 0..rejection_budget {
                let bits = inst
                    .p_open
                    .iter()
                    .enumerate()
                    .fold(0u64, |b, (k, p)| if rng.random::<f64>() < *p { b | 1 << k } else { b });
                let cfg = inst.config(bits);
                if !inst.accepts(&cfg)? {
                    continue;
                }
                let p = inst.kernel(bits)?;
                let g = dense_resolvent(&p, delta)?[(i0, iz)];
                // Read the row off the finite chain: with a confined walk,
                // moves out of the region are suppressed.
                let row: Vec<f64> = Dir::all(d)
                    .map(|e| inst.region.index_of(&z.step(e)).map_or(0.0, |j| g * p[(iz, j)]))
                    .chain(std::iter::once(g * p[(iz, iz)]))
                    .collect();
                return Ok(((row, g), attempt));
            }
            Err(Error::BudgetExhausted {
                what: "instance rejection sampling",
                detail: format!("no accepted configuration in {rejection_budget} draws"),
            })
        })
        .collect();
    let mut rows = Vec::with_capacity(samples.len());
    let mut rejections = 0;
    for s in samples {
        let (r, rej) = s?;
        rows.push(r);
        rejections += rej;
    }
    finish_row(*z, rows, rejections)
}

/// The Kalikow row of the deterministic environment ω: p^ω(z, ·).
pub fn deterministic_row(omega: &impl EdgeStates, bias: &Bias, z: &Vertex) -> Result<KalikowRow> {
    Ok(KalikowRow::exact(&transition_row(omega, z, bias)?))
}
