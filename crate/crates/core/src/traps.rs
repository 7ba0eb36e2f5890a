//! Local trap quantities around a ball A = B^E(x, r).
//!
//! Everything is evaluated in ω^{A,0}, the configuration with every edge of A
//! closed, and ∂A is the L¹ sphere of radius r around x. Membership in the
//! infinite cluster uses the reach proxy: a vertex counts as infinite when
//! its cluster reaches ∂B(x, proxy_radius). Finiteness is exact (a cluster
//! that does not reach that sphere is contained in the ball).

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use petgraph::unionfind::UnionFind;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{validate_statistics_regime, EdgeStates, EnvironmentOracle, Surgered, SurgerySpec};
use crate::error::{Error, Result};
use crate::kernel::{Bias, ModelConstants};
use crate::lattice::{sphere, Ball, Dir, DirSet, Edge, Vertex};
use crate::rng::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrapOptions {
    /// Radius of the sphere that certifies "infinite" membership.
    pub proxy_radius: u32,
    /// Largest search radius for distances and for L¹_A, L_A.
    pub max_radius: u32,
}

impl Default for TrapOptions {
    fn default() -> Self {
        TrapOptions { proxy_radius: 24, max_radius: 512 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrapStats {
    pub m_a: u64,
    pub t_a: u64,
    pub l_a1: u32,
    pub l_a: u32,
    /// η·L¹_A, the offset of the half-space H_A.
    pub h_offset: u64,
    /// No vertex of ∂A is in the proxy infinite cluster.
    pub disconnected: bool,
    pub proxy_radius: u32,
}

fn check_radius(r: u32, opts: &TrapOptions) -> Result<()> {
    if r < 1 {
        return Err(Error::invalid("trap balls need r ≥ 1"));
    }
    if opts.proxy_radius <= r {
        return Err(Error::invalid("proxy radius must exceed r"));
    }
    Ok(())
}

/// ω^{A,0} for A = B^E(x, r).
pub fn closed_ball_spec(x: &Vertex, r: u32) -> SurgerySpec {
    SurgerySpec::all_closed(Ball { center: *x, radius: r }.edges())
}

/// BFS of the open cluster of `y` inside B(x, radius). `None` when the
/// cluster reaches ∂B(x, radius), otherwise the (finite) cluster.
fn finite_cluster(
    omega: &impl EdgeStates,
    x: &Vertex,
    radius: u32,
    y: &Vertex,
) -> Result<Option<HashSet<Vertex>>> {
    let b = Ball { center: *x, radius };
    let mut seen = HashSet::from([*y]);
    let mut queue = VecDeque::from([*y]);
    if b.on_sphere(y) {
        return Ok(None);
    }
    while let Some(u) = queue.pop_front() {
        for e in Dir::all(u.dim()) {
            let w = u.step(e);
            if seen.contains(&w) || !omega.state(&Edge::at(u, e))? {
                continue;
            }
            if b.on_sphere(&w) {
                return Ok(None);
            }
            seen.insert(w);
            queue.push_back(w);
        }
    }
    Ok(Some(seen))
}

/// |∂_E K|: lattice edges with exactly one endpoint in K.
pub fn edge_boundary_size(k: &HashSet<Vertex>) -> u64 {
    k.iter()
        .map(|v| Dir::all(v.dim()).filter(|e| !k.contains(&v.step(*e))).count() as u64)
        .sum()
}

/// BFS distances from `src` using open edges inside `b`.
fn bfs_distances(omega: &impl EdgeStates, b: &Ball, src: &Vertex) -> Result<HashMap<Vertex, u64>> {
    let mut dist = HashMap::from([(*src, 0u64)]);
    let mut queue = VecDeque::from([*src]);
    while let Some(u) = queue.pop_front() {
        let du = dist[&u];
        for e in Dir::all(u.dim()) {
            let w = u.step(e);
            if !b.contains(&w) || dist.contains_key(&w) || !omega.state(&Edge::at(u, e))? {
                continue;
            }
            dist.insert(w, du + 1);
            queue.push_back(w);
        }
    }
    Ok(dist)
}

/// ∂A split into proxy-infinite vertices and finite clusters.
struct BoundaryClasses {
    infinite: Vec<Vertex>,
    finite: Vec<HashSet<Vertex>>,
}

fn classify(view: &impl EdgeStates, x: &Vertex, r: u32, proxy: u32) -> Result<BoundaryClasses> {
    let mut infinite = Vec::new();
    let mut finite: Vec<HashSet<Vertex>> = Vec::new();
    for y in sphere(x, r) {
        if finite.iter().any(|k| k.contains(&y)) {
            continue;
        }
        match finite_cluster(view, x, proxy, &y)? {
            None => infinite.push(y),
            Some(k) => finite.push(k),
        }
    }
    Ok(BoundaryClasses { infinite, finite })
}

/// M_A: the largest ω^{A,0}-distance between vertices of ∂A in the
/// (proxy) infinite cluster, 0 when there are none.
pub fn compute_m(omega: &impl EdgeStates, x: &Vertex, r: u32, opts: &TrapOptions) -> Result<u64> {
    check_radius(r, opts)?;
    let spec = closed_ball_spec(x, r);
    let view = Surgered { base: omega, spec: &spec };
    let classes = classify(&view, x, r, opts.proxy_radius)?;
    m_from_members(&view, x, r, &classes.infinite, opts)
}

fn m_from_members(
    view: &impl EdgeStates,
    x: &Vertex,
    r: u32,
    members: &[Vertex],
    opts: &TrapOptions,
) -> Result<u64> {
    if members.len() < 2 {
        return Ok(0);
    }
    let mut radius = opts.proxy_radius;
    loop {
        let b = Ball { center: *x, radius };
        let mut worst = Some(0u64);
        for (i, y) in members.iter().enumerate() {
            let dist = bfs_distances(view, &b, y)?;
            for z in &members[i + 1..] {
                worst = match (worst, dist.get(z)) {
                    (Some(w), Some(d)) => Some(w.max(*d)),
                    _ => None,
                };
            }
        }
        // A geodesic of length D between two points of ∂A stays in
        // B(x, r + D/2), so the boxed distance is exact once D ≤ 2(R − r).
        if let Some(w) = worst {
            if w <= 2 * (radius - r) as u64 {
                return Ok(w);
            }
        }
        if radius >= opts.max_radius {
            return Err(Error::BudgetExhausted {
                what: "M_A distance search",
                detail: format!(
                    "boundary vertices in the proxy infinite cluster not resolved within radius {radius} (max distance so far {worst:?})"
                ),
            });
        }
        radius = (2 * radius).min(opts.max_radius);
    }
}

/// T_A: the largest edge boundary of a finite ω^{A,0}-cluster meeting ∂A,
/// 0 when every boundary vertex is in the (proxy) infinite cluster.
pub fn compute_t(omega: &impl EdgeStates, x: &Vertex, r: u32, opts: &TrapOptions) -> Result<u64> {
    check_radius(r, opts)?;
    let spec = closed_ball_spec(x, r);
    let view = Surgered { base: omega, spec: &spec };
    let classes = classify(&view, x, r, opts.proxy_radius)?;
    Ok(classes.finite.iter().map(edge_boundary_size).max().unwrap_or(0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalRadii {
    pub l_a1: u32,
    pub l_a: u32,
    pub h_offset: u64,
}

/// L¹_A and L_A by growing k = r+1, r+2, … and maintaining the open
/// components of B(x,k) in ω^{A,0} with a union-find. Only edges of
/// B^E(x,k) are read before deciding at k, so both are stopping times.
///
/// Alternative (2) of L_A is read as "no vertex of ∂A is connected to
/// ∂B(x,k)"; a vertex set cannot literally be connected to an edge set.
pub fn compute_l1_l(
    omega: &impl EdgeStates,
    x: &Vertex,
    r: u32,
    bias: &Bias,
    constants: &ModelConstants,
    max_radius: u32,
) -> Result<LocalRadii> {
    if r < 1 {
        return Err(Error::invalid("trap balls need r ≥ 1"));
    }
    if bias.dim() != x.dim() {
        return Err(Error::invalid("bias dimension does not match the lattice"));
    }
    let eta = constants.eta as u64;
    let boundary = sphere(x, r);
    let mut uf: UnionFind<usize> = UnionFind::new(0);
    let mut index: HashMap<Vertex, usize> = HashMap::new();
    let mut reach: Vec<f64> = Vec::new();
    let project = |v: &Vertex| v.sub(x).dot(&bias.direction);
    for v in &boundary {
        index.insert(*v, uf.new_set());
        reach.push(project(v));
    }
    let mut l1: Option<u32> = None;
    let mut h_offset = 0u64;
    let mut k = r;
    while k < max_radius {
        k += 1;
        let shell = sphere(x, k);
        for v in &shell {
            index.insert(*v, uf.new_set());
            reach.push(project(v));
        }
        for v in &shell {
            for e in Dir::all(v.dim()) {
                let w = v.step(e);
                if w.l1_dist(x) != (k - 1) as u64 {
                    continue;
                }
                // Edges between shells k−1 and k are never in A for k > r.
                if !omega.state(&Edge::at(*v, e))? {
                    continue;
                }
                let (a, b) = (index[v], index[&w]);
                let (ra, rb) = (uf.find_mut(a), uf.find_mut(b));
                if ra != rb {
                    let m = reach[ra].max(reach[rb]);
                    uf.union(ra, rb);
                    let root = uf.find_mut(ra);
                    reach[root] = m;
                }
            }
        }
        let touching: HashSet<usize> = shell.iter().map(|v| uf.find_mut(index[v])).collect();
        let roots: Vec<usize> = boundary.iter().map(|y| uf.find_mut(index[y])).collect();
        let mut reaching = roots.iter().filter(|r| touching.contains(r));
        if l1.is_none() {
            let first = reaching.next().copied();
            if reaching.all(|r| Some(*r) == first) {
                l1 = Some(k);
                h_offset = eta * k as u64;
            }
        }
        if let Some(l1v) = l1 {
            let threshold = h_offset as f64 - 1e-9;
            let joins_half_space = roots.iter().any(|r| reach[*r] >= threshold);
            let cut_off = !roots.iter().any(|r| touching.contains(r));
            if joins_half_space || cut_off {
                return Ok(LocalRadii { l_a1: l1v, l_a: k, h_offset });
            }
        }
    }
    Err(Error::BudgetExhausted {
        what: "L_A growth",
        detail: format!("no decision by radius {max_radius} (L¹_A = {l1:?})"),
    })
}

/// L'_A = d_{ω^{A,0}}(∂A, H_A), `None` for ∞ (no proxy-infinite boundary
/// vertex). Exact once r + D fits in the search ball.
pub fn distance_to_half_space(
    omega: &impl EdgeStates,
    x: &Vertex,
    r: u32,
    bias: &Bias,
    h_offset: u64,
    opts: &TrapOptions,
) -> Result<Option<u64>> {
    check_radius(r, opts)?;
    let spec = closed_ball_spec(x, r);
    let view = Surgered { base: omega, spec: &spec };
    let classes = classify(&view, x, r, opts.proxy_radius)?;
    if classes.infinite.is_empty() {
        return Ok(None);
    }
    let project = |v: &Vertex| v.sub(x).dot(&bias.direction);
    let threshold = h_offset as f64 - 1e-9;
    let mut radius = opts.proxy_radius.max(r + h_offset as u32);
    loop {
        let b = Ball { center: *x, radius };
        let sources = sphere(x, r);
        let mut dist: HashMap<Vertex, u64> = sources.iter().map(|v| (*v, 0)).collect();
        let mut queue: VecDeque<Vertex> = sources.into_iter().collect();
        let mut found = None;
        while let Some(u) = queue.pop_front() {
            let du = dist[&u];
            if project(&u) >= threshold {
                found = Some(du);
                break;
            }
            for e in Dir::all(u.dim()) {
                let w = u.step(e);
                if !b.contains(&w) || dist.contains_key(&w) || !view.state(&Edge::at(u, e))? {
                    continue;
                }
                dist.insert(w, du + 1);
                queue.push_back(w);
            }
        }
        if let Some(dv) = found {
            if r as u64 + dv <= radius as u64 {
                return Ok(Some(dv));
            }
        }
        if radius >= opts.max_radius {
            return Err(Error::BudgetExhausted {
                what: "half-space distance search",
                detail: format!("not resolved within radius {radius}"),
            });
        }
        radius = (2 * radius).min(opts.max_radius);
    }
}

/// All four quantities at once.
pub fn trap_stats(
    omega: &impl EdgeStates,
    x: &Vertex,
    r: u32,
    bias: &Bias,
    constants: &ModelConstants,
    opts: &TrapOptions,
) -> Result<TrapStats> {
    check_radius(r, opts)?;
    let spec = closed_ball_spec(x, r);
    let view = Surgered { base: omega, spec: &spec };
    let classes = classify(&view, x, r, opts.proxy_radius)?;
    let m_a = m_from_members(&view, x, r, &classes.infinite, opts)?;
    let t_a = classes.finite.iter().map(edge_boundary_size).max().unwrap_or(0);
    let radii = compute_l1_l(omega, x, r, bias, constants, opts.max_radius)?;
    Ok(TrapStats {
        m_a,
        t_a,
        l_a1: radii.l_a1,
        l_a: radii.l_a,
        h_offset: radii.h_offset,
        disconnected: classes.infinite.is_empty(),
        proxy_radius: opts.proxy_radius,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrapStatistic {
    M,
    T,
    L1,
    L,
}

impl std::str::FromStr for TrapStatistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "M" | "m" => Ok(TrapStatistic::M),
            "T" | "t" => Ok(TrapStatistic::T),
            "L1" | "l1" => Ok(TrapStatistic::L1),
            "L" | "l" => Ok(TrapStatistic::L),
            other => Err(Error::invalid(format!("unknown trap statistic {other:?}"))),
        }
    }
}

/// Configuration variant applied before measuring, through the surgery API.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub enum SurveyVariant {
    #[default]
    Plain,
    /// ω^{x,A}: the star at the centre closed exactly on A.
    Star(u32),
    /// ω^{(x,2),B}: the radius-2 edge ball at the centre closed exactly on
    /// B (edges relative to the origin).
    Ball2(Vec<Edge>),
}

impl SurveyVariant {
    fn spec(&self, x: &Vertex) -> Result<SurgerySpec> {
        Ok(match self {
            SurveyVariant::Plain => SurgerySpec::identity(),
            SurveyVariant::Star(bits) => SurgerySpec::star(*x, DirSet(*bits)),
            SurveyVariant::Ball2(edges) => SurgerySpec::ball(*x, 2, edges)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub rate: f64,
    pub rate_se: f64,
    /// 95% normal band on the rate.
    pub rate_ci: (f64, f64),
    pub intercept: f64,
    pub r_squared: f64,
    /// Range of n used: from the smallest observed value to the last n whose
    /// survival count is at least `min_count`.
    pub domain: (u64, u64),
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailSurvey {
    pub statistic: TrapStatistic,
    pub d: usize,
    pub p: f64,
    pub r: u32,
    pub n_samples: u64,
    pub seed: u64,
    pub proxy_radius: u32,
    pub variant: SurveyVariant,
    /// value → number of samples.
    pub counts: BTreeMap<u64, u64>,
    pub fit: Option<TailFit>,
}

pub const MIN_SURVIVAL_COUNT: u64 = 30;

impl TailSurvey {
    /// (n, #{samples ≥ n}) for n from 0 to the largest observed value.
    pub fn survival(&self) -> Vec<(u64, u64)> {
        let max = self.counts.keys().next_back().copied().unwrap_or(0);
        let mut out = Vec::with_capacity(max as usize + 1);
        let mut remaining = self.n_samples;
        for n in 0..=max {
            out.push((n, remaining));
            remaining -= self.counts.get(&n).copied().unwrap_or(0);
        }
        out
    }

    pub fn write_csv(&self, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "count", "survival"])?;
        for (n, s) in self.survival() {
            let c = self.counts.get(&n).copied().unwrap_or(0);
            w.write_record([n.to_string(), c.to_string(), s.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Least-squares fit of ln(S(n)/N) against n over the tail domain.
pub fn fit_tail(survival: &[(u64, u64)], n_samples: u64, min_count: u64) -> Option<TailFit> {
    let start = survival.iter().position(|(_, s)| *s < n_samples)?.saturating_sub(1);
    let pts: Vec<(f64, f64)> = survival[start..]
        .iter()
        .take_while(|(_, s)| *s >= min_count)
        .map(|(n, s)| (*n as f64, (*s as f64 / n_samples as f64).ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let rate = sxy / sxx;
    let intercept = my - rate * mx;
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - rate * p.0).powi(2)).sum();
    let rate_se = (sse / (k - 2.0) / sxx).sqrt();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Some(TailFit {
        rate,
        rate_se,
        rate_ci: (rate - 1.96 * rate_se, rate + 1.96 * rate_se),
        intercept,
        r_squared,
        domain: (pts[0].0 as u64, pts[pts.len() - 1].0 as u64),
        points: pts.len(),
    })
}

/// Sample the statistic over independent environments (one derived seed
/// per sample, centre at the origin) and fit the log-survival tail.
#[allow(clippy::too_many_arguments)]
pub fn tail_survey(
    statistic: TrapStatistic,
    bias: &Bias,
    constants: &ModelConstants,
    p: f64,
    r: u32,
    n_samples: u64,
    seed: u64,
    opts: &TrapOptions,
    variant: &SurveyVariant,
) -> Result<TailSurvey> {
    if p <= 0.6 {
        return Err(Error::invalid(format!("tail surveys need p > 0.6, got {p}")));
    }
    validate_statistics_regime(p)?;
    if n_samples < 1000 {
        return Err(Error::invalid("tail surveys need at least 10³ samples"));
    }
    let d = bias.dim();
    let x = Vertex::origin(d);
    let spec = variant.spec(&x)?;
    let values: Vec<Result<u64>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let oracle = EnvironmentOracle::new(derive_seed(seed, &[0x7472_6170, i]), p)?;
            let omega = Surgered { base: &oracle, spec: &spec };
            Ok(match statistic {
                TrapStatistic::M => compute_m(&omega, &x, r, opts)?,
                TrapStatistic::T => compute_t(&omega, &x, r, opts)?,
                TrapStatistic::L1 => compute_l1_l(&omega, &x, r, bias, constants, opts.max_radius)?.l_a1 as u64,
                TrapStatistic::L => compute_l1_l(&omega, &x, r, bias, constants, opts.max_radius)?.l_a as u64,
            })
        })
        .collect();
    let mut counts = BTreeMap::new();
    for v in values {
        *counts.entry(v?).or_insert(0u64) += 1;
    }
    let mut survey = TailSurvey {
        statistic,
        d,
        p,
        r,
        n_samples,
        seed,
        proxy_radius: opts.proxy_radius,
        variant: variant.clone(),
        counts,
        fit: None,
    };
    survey.fit = fit_tail(&survey.survival(), n_samples, MIN_SURVIVAL_COUNT);
    Ok(survey)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::EdgeConfig;
    use crate::kernel::constants;

    fn v2(a: i32, b: i32) -> Vertex {
        Vertex::new(&[a, b]).unwrap()
    }

    fn setup() -> (Bias, ModelConstants) {
        let b = Bias::axis(2, 0.5).unwrap();
        let c = constants(&b, 2, 50).unwrap();
        (b, c)
    }

    #[test]
    fn all_open_reference_values() {
        let (b, c) = setup();
        let full = EnvironmentOracle::full();
        let o = Vertex::origin(2);
        let opts = TrapOptions::default();
        assert_eq!(compute_m(&full, &o, 1, &opts).unwrap(), 4);
        assert_eq!(compute_t(&full, &o, 1, &opts).unwrap(), 0);
        let radii = compute_l1_l(&full, &o, 1, &b, &c, 100).unwrap();
        assert_eq!(radii.l_a1, 2);
        assert_eq!(radii.h_offset, 14);
        assert_eq!(radii.l_a, 14);
        let s = trap_stats(&full, &o, 1, &b, &c, &opts).unwrap();
        assert!(!s.disconnected);
    }

    #[test]
    fn fully_closed_environment() {
        let (b, c) = setup();
        let empty = EnvironmentOracle::new(0, 0.0).unwrap();
        let o = Vertex::origin(2);
        let opts = TrapOptions::default();
        assert_eq!(compute_m(&empty, &o, 1, &opts).unwrap(), 0);
        // Every boundary vertex is an isolated singleton.
        assert_eq!(compute_t(&empty, &o, 1, &opts).unwrap(), 4);
        let radii = compute_l1_l(&empty, &o, 1, &b, &c, 100).unwrap();
        // Nothing reaches ∂B(0,2): both conditions hold vacuously at k = 2.
        assert_eq!((radii.l_a1, radii.l_a), (2, 2));
        assert!(trap_stats(&empty, &o, 1, &b, &c, &opts).unwrap().disconnected);
    }

    #[test]
    fn ring_configuration() {
        // Only the 4-cycle through (±1,±1) and the spokes from ∂A to it, plus
        // a long open line to the right so the ring is "infinite".
        let mut cfg = EdgeConfig::from_oracle(EnvironmentOracle::new(0, 0.0).unwrap());
        let ring = [v2(1, 0), v2(1, 1), v2(0, 1), v2(-1, 1), v2(-1, 0), v2(-1, -1), v2(0, -1), v2(1, -1)];
        for i in 0..8 {
            cfg.force(Edge::between(ring[i], ring[(i + 1) % 8]).unwrap(), true);
        }
        for k in 1..60 {
            cfg.force(Edge::between(v2(k, 0), v2(k + 1, 0)).unwrap(), true);
        }
        let o = Vertex::origin(2);
        assert_eq!(compute_m(&cfg, &o, 1, &TrapOptions::default()).unwrap(), 4);
    }

    #[test]
    fn isolated_boundary_vertex_and_dead_end() {
        let o = Vertex::origin(2);
        let opts = TrapOptions::default();
        // Full lattice except that e₂ is cut off from everything outside A.
        let mut cfg = EdgeConfig::full_lattice();
        let y = v2(0, 1);
        for e in Dir::all(2) {
            cfg.force(Edge::at(y, e), false);
        }
        assert_eq!(compute_t(&cfg, &o, 1, &opts).unwrap(), 4);
        // Dead end of two vertices: e₂ and 2e₂, attached to each other only.
        cfg.force(Edge::between(y, v2(0, 2)).unwrap(), true);
        let z = v2(0, 2);
        for e in [Dir::new(0, true), Dir::new(0, false), Dir::new(1, true)] {
            cfg.force(Edge::at(z, e), false);
        }
        // Two vertices, one shared edge: 2·4 − 2 = 6 boundary edges.
        assert_eq!(compute_t(&cfg, &o, 1, &opts).unwrap(), 6);
    }

    #[test]
    fn fit_on_exact_geometric_tail() {
        let n = 1_000_000u64;
        let surv: Vec<(u64, u64)> = (0..40).map(|k| (k, (n as f64 * 0.5f64.powi(k as i32)) as u64)).collect();
        let fit = fit_tail(&surv, n, 30).unwrap();
        assert!((fit.rate - 0.5f64.ln()).abs() < 1e-3);
        assert!(fit.r_squared > 0.999);
        assert_eq!(fit.domain.0, 0);
    }

    #[test]
    fn degenerate_survey_at_p_one() {
        let (b, c) = setup();
        let s = tail_survey(TrapStatistic::L, &b, &c, 1.0, 1, 1000, 3, &TrapOptions::default(), &SurveyVariant::Plain)
            .unwrap();
        assert_eq!(s.counts.len(), 1);
        assert_eq!(s.counts[&14], 1000);
        assert!(s.fit.is_none());
        assert!(tail_survey(TrapStatistic::L, &b, &c, 0.5, 1, 1000, 3, &TrapOptions::default(), &SurveyVariant::Plain).is_err());
    }
}
