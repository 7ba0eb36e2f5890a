//! Bond-percolation configurations ω.
//!
//! An [`EnvironmentOracle`] realizes the product measure lazily: the state of
//! an edge is a pure function of (seed, edge, p), so the infinite lattice
//! needs no storage. An [`EdgeConfig`] adds an explicit bit window and an
//! overlay of forced states on top of an optional oracle; configuration
//! surgery (ω^{A,B} and friends) is expressed as an overlay.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Ball, Dir, DirSet, Edge, Region, Vertex};
use crate::rng::edge_uniform;

/// Anything that can answer "is this edge open?".
pub trait EdgeStates: Sync {
    fn state(&self, e: &Edge) -> Result<bool>;
}

/// Lazy i.i.d. Bernoulli(p) edge states keyed by a seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentOracle {
    pub seed: u64,
    pub p: f64,
}

impl EnvironmentOracle {
    pub fn new(seed: u64, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("open probability {p} outside [0, 1]")));
        }
        Ok(EnvironmentOracle { seed, p })
    }

    /// The full lattice ω₀.
    pub fn full() -> Self {
        EnvironmentOracle { seed: 0, p: 1.0 }
    }

    #[inline]
    pub fn is_open(&self, e: &Edge) -> bool {
        edge_uniform(self.seed, e) < self.p
    }
}

impl EdgeStates for EnvironmentOracle {
    #[inline]
    fn state(&self, e: &Edge) -> Result<bool> {
        Ok(self.is_open(e))
    }
}

/// `edge_state` in free-function form.
pub fn edge_state(oracle: &EnvironmentOracle, e: &Edge) -> bool {
    oracle.is_open(e)
}

#[derive(Clone, Debug)]
struct WindowBits {
    ball: Ball,
    edges: Arc<Vec<Edge>>,
    index: Arc<HashMap<Edge, usize>>,
    bits: Vec<u64>,
}

impl WindowBits {
    fn new(ball: Ball) -> Self {
        let edges = ball.edges();
        let index = edges.iter().enumerate().map(|(i, e)| (*e, i)).collect();
        let bits = vec![0u64; edges.len().div_ceil(64)];
        WindowBits { ball, edges: Arc::new(edges), index: Arc::new(index), bits }
    }

    fn get(&self, i: usize) -> bool {
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    fn set(&mut self, i: usize, open: bool) {
        if open {
            self.bits[i / 64] |= 1 << (i % 64);
        } else {
            self.bits[i / 64] &= !(1 << (i % 64));
        }
    }
}

/// A percolation configuration: overlay, then window bits, then oracle.
#[derive(Clone, Debug, Default)]
pub struct EdgeConfig {
    window: Option<WindowBits>,
    overlay: HashMap<Edge, bool>,
    backing: Option<EnvironmentOracle>,
}

impl EdgeConfig {
    pub fn from_oracle(oracle: EnvironmentOracle) -> Self {
        EdgeConfig { window: None, overlay: HashMap::new(), backing: Some(oracle) }
    }

    /// ω₀: every edge open.
    pub fn full_lattice() -> Self {
        EdgeConfig::from_oracle(EnvironmentOracle::full())
    }

    /// An explicit window whose bits are given by `open`; queries outside it
    /// fall through to `backing` (or fail when there is none).
    pub fn with_window(
        ball: Ball,
        open: impl Fn(&Edge) -> bool,
        backing: Option<EnvironmentOracle>,
    ) -> Self {
        let mut w = WindowBits::new(ball);
        for i in 0..w.edges.len() {
            let e = w.edges[i];
            w.set(i, open(&e));
        }
        EdgeConfig { window: Some(w), overlay: HashMap::new(), backing }
    }

    /// Materialize the oracle's states on `ball`, keeping the oracle behind.
    pub fn sample_window(oracle: EnvironmentOracle, ball: Ball) -> Self {
        EdgeConfig::with_window(ball, |e| oracle.is_open(e), Some(oracle))
    }

    pub fn backing(&self) -> Option<&EnvironmentOracle> {
        self.backing.as_ref()
    }

    pub fn window_ball(&self) -> Option<&Ball> {
        self.window.as_ref().map(|w| &w.ball)
    }

    pub fn overlay(&self) -> &HashMap<Edge, bool> {
        &self.overlay
    }

    /// Force the state of one edge, shadowing window and oracle.
    pub fn force(&mut self, e: Edge, open: bool) {
        self.overlay.insert(e, open);
    }

    pub fn is_resolvable(&self, e: &Edge) -> bool {
        self.overlay.contains_key(e)
            || self.window.as_ref().is_some_and(|w| w.index.contains_key(e))
            || self.backing.is_some()
    }
}

impl EdgeStates for EdgeConfig {
    fn state(&self, e: &Edge) -> Result<bool> {
        if let Some(s) = self.overlay.get(e) {
            return Ok(*s);
        }
        if let Some(w) = &self.window {
            if let Some(i) = w.index.get(e) {
                return Ok(w.get(*i));
            }
        }
        match &self.backing {
            Some(o) => Ok(o.is_open(e)),
            None => Err(Error::Unresolved(*e)),
        }
    }
}

impl<T: EdgeStates + ?Sized> EdgeStates for &T {
    fn state(&self, e: &Edge) -> Result<bool> {
        (**self).state(e)
    }
}

/// The surgery ω^{A₁,B₁}_{A₂,B₂}: edges of A₁ are closed iff in B₁, edges of
/// A₂ ∖ A₁ are closed iff in B₂, everything else is untouched.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SurgerySpec {
    a1: BTreeSet<Edge>,
    b1: BTreeSet<Edge>,
    a2: BTreeSet<Edge>,
    b2: BTreeSet<Edge>,
    forced: HashMap<Edge, bool>,
}

impl SurgerySpec {
    pub fn new(
        a1: BTreeSet<Edge>,
        b1: BTreeSet<Edge>,
        a2: BTreeSet<Edge>,
        b2: BTreeSet<Edge>,
    ) -> Result<Self> {
        if !b1.is_subset(&a1) {
            return Err(Error::invalid("surgery: B1 is not a subset of A1"));
        }
        if !b2.is_subset(&a2) {
            return Err(Error::invalid("surgery: B2 is not a subset of A2"));
        }
        let mut forced = HashMap::with_capacity(a1.len() + a2.len());
        for e in &a2 {
            forced.insert(*e, !b2.contains(e));
        }
        // A₁ takes precedence on the intersection.
        for e in &a1 {
            forced.insert(*e, !b1.contains(e));
        }
        Ok(SurgerySpec { a1, b1, a2, b2, forced })
    }

    pub fn identity() -> Self {
        SurgerySpec::default()
    }

    /// ω^{A,B}.
    pub fn on(a: BTreeSet<Edge>, b: BTreeSet<Edge>) -> Result<Self> {
        SurgerySpec::new(a, b, BTreeSet::new(), BTreeSet::new())
    }

    /// ω^{A,1}: every edge of A open.
    pub fn all_open(a: impl IntoIterator<Item = Edge>) -> Self {
        let a: BTreeSet<Edge> = a.into_iter().collect();
        SurgerySpec::on(a, BTreeSet::new()).expect("empty B is a subset")
    }

    /// ω^{A,0}: every edge of A closed.
    pub fn all_closed(a: impl IntoIterator<Item = Edge>) -> Self {
        let a: BTreeSet<Edge> = a.into_iter().collect();
        SurgerySpec::on(a.clone(), a).expect("A is a subset of itself")
    }

    /// ω^{z,A} for A ⊆ ν: the 2d edges at z, closed exactly in the directions of A.
    pub fn star(z: Vertex, closed: DirSet) -> Self {
        let a: BTreeSet<Edge> = Dir::all(z.dim()).map(|e| Edge::at(z, e)).collect();
        let b = closed.iter(z.dim()).map(|e| Edge::at(z, e)).collect();
        SurgerySpec::on(a, b).expect("closed star edges lie in the star")
    }

    /// ω^{(z,k),B} with B ⊆ B^E(0,k) given relative to the origin.
    pub fn ball(z: Vertex, k: u32, closed_relative: &[Edge]) -> Result<Self> {
        let a: BTreeSet<Edge> = Ball { center: z, radius: k }.edges().into_iter().collect();
        let b = closed_relative
            .iter()
            .map(|e| Edge { base: e.base.add(&z), axis: e.axis })
            .collect();
        SurgerySpec::on(a, b)
    }

    /// Add the secondary (A₂, B₂) pair of the two-slot notation.
    pub fn with_secondary(self, a2: BTreeSet<Edge>, b2: BTreeSet<Edge>) -> Result<Self> {
        SurgerySpec::new(self.a1, self.b1, a2, b2)
    }

    #[inline]
    pub fn forced_state(&self, e: &Edge) -> Option<bool> {
        self.forced.get(e).copied()
    }

    pub fn touched_edges(&self) -> impl Iterator<Item = &Edge> {
        self.forced.keys()
    }
}

/// Apply a surgery to an explicit configuration.
pub fn apply_surgery(omega: &EdgeConfig, s: &SurgerySpec) -> Result<EdgeConfig> {
    let mut out = omega.clone();
    let mut touched: Vec<(&Edge, &bool)> = s.forced.iter().collect();
    touched.sort();
    for (e, open) in touched {
        if !omega.is_resolvable(e) {
            return Err(Error::Unresolved(*e));
        }
        out.overlay.insert(*e, *open);
    }
    Ok(out)
}

/// A surgered configuration that borrows its base instead of copying it.
pub struct Surgered<'a, E: EdgeStates + ?Sized> {
    pub base: &'a E,
    pub spec: &'a SurgerySpec,
}

impl<E: EdgeStates + ?Sized> EdgeStates for Surgered<'_, E> {
    #[inline]
    fn state(&self, e: &Edge) -> Result<bool> {
        match self.spec.forced_state(e) {
            Some(s) => Ok(s),
            None => self.base.state(e),
        }
    }
}

/// C(z): the set of closed directions at z.
pub fn config_of(omega: &impl EdgeStates, z: &Vertex) -> Result<DirSet> {
    let mut closed = DirSet::EMPTY;
    for e in Dir::all(z.dim()) {
        if !omega.state(&Edge::at(*z, e))? {
            closed = closed.with(e);
        }
    }
    Ok(closed)
}

/// Open-cluster labeling restricted to a ball.
#[derive(Clone, Debug)]
pub struct ClusterLabeling {
    pub labels: HashMap<Vertex, usize>,
    pub sizes: Vec<usize>,
    pub touches_boundary: Vec<bool>,
}

impl ClusterLabeling {
    pub fn same_cluster(&self, a: &Vertex, b: &Vertex) -> bool {
        matches!((self.labels.get(a), self.labels.get(b)), (Some(x), Some(y)) if x == y)
    }

    pub fn num_clusters(&self) -> usize {
        self.sizes.len()
    }
}

/// Union-find labeling of open connectivity inside `b`. Cluster ids are
/// assigned in order of first appearance along [`Ball::vertices`], so the
/// labels are a pure function of the bit pattern.
pub fn clusters(omega: &impl EdgeStates, b: &Ball) -> Result<ClusterLabeling> {
    let region = Region::from_ball(b);
    let mut uf = UnionFind::<usize>::new(region.len());
    for (i, v) in region.vertices().iter().enumerate() {
        for axis in 0..v.dim() {
            let w = v.step(Dir::new(axis, true));
            if let Some(j) = region.index_of(&w) {
                if omega.state(&Edge { base: *v, axis: axis as u8 })? {
                    uf.union(i, j);
                }
            }
        }
    }
    let mut root_id: HashMap<usize, usize> = HashMap::new();
    let mut labels = HashMap::with_capacity(region.len());
    let mut sizes = Vec::new();
    let mut touches = Vec::new();
    for (i, v) in region.vertices().iter().enumerate() {
        let root = uf.find_mut(i);
        let next = root_id.len();
        let id = *root_id.entry(root).or_insert(next);
        if id == sizes.len() {
            sizes.push(0);
            touches.push(false);
        }
        sizes[id] += 1;
        touches[id] |= b.on_sphere(v);
        labels.insert(*v, id);
    }
    Ok(ClusterLabeling { labels, sizes, touches_boundary: touches })
}

/// Whether the open cluster of z reaches ∂B(z, radius), using only edges
/// inside that ball. This is the finite proxy for "z ∈ K_∞".
pub fn reaches_sphere(omega: &impl EdgeStates, z: &Vertex, radius: u32) -> Result<bool> {
    let b = Ball { center: *z, radius };
    if radius == 0 {
        return Ok(true);
    }
    let mut seen = std::collections::HashSet::from([*z]);
    let mut queue = VecDeque::from([*z]);
    while let Some(u) = queue.pop_front() {
        for e in Dir::all(u.dim()) {
            let w = u.step(e);
            if !b.contains(&w) || seen.contains(&w) || !omega.state(&Edge::at(u, e))? {
                continue;
            }
            if b.on_sphere(&w) {
                return Ok(true);
            }
            seen.insert(w);
            queue.push_back(w);
        }
    }
    Ok(false)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ConditionedOracle {
    pub oracle: EnvironmentOracle,
    pub rejections: u64,
    pub check_radius: u32,
}

/// Rejection-sample seeds until the origin's cluster reaches
/// ∂B(0, check_radius): the event "0 ∈ K_∞" approximated by reach.
/// Uniqueness of the infinite cluster is not checked.
pub fn condition_on_infinite_cluster(
    p: f64,
    d: usize,
    check_radius: u32,
    seeds: impl IntoIterator<Item = u64>,
    budget: u64,
) -> Result<ConditionedOracle> {
    if check_radius < 1 {
        return Err(Error::invalid("check radius must be at least 1"));
    }
    let origin = Vertex::origin(d);
    let mut attempts = 0u64;
    for seed in seeds.into_iter().take(budget as usize) {
        let oracle = EnvironmentOracle::new(seed, p)?;
        if reaches_sphere(&oracle, &origin, check_radius)? {
            return Ok(ConditionedOracle { oracle, rejections: attempts, check_radius });
        }
        attempts += 1;
    }
    Err(Error::BudgetExhausted {
        what: "conditioning on the infinite-cluster proxy",
        detail: format!(
            "0 accepted out of {attempts} seeds at p = {p}, radius {check_radius}; \
             acceptance rate below {:.2e}",
            1.0 / attempts.max(1) as f64
        ),
    })
}

/// The standing restriction ε < 1/2 for every statistic quoted against the
/// theory; raw sampling accepts any p.
pub fn validate_statistics_regime(p: f64) -> Result<()> {
    if !(p > 0.5 && p <= 1.0) {
        return Err(Error::invalid(format!(
            "statistics require ε = 1 - p < 1/2, got p = {p}"
        )));
    }
    Ok(())
}

const WINDOW_MAGIC: &[u8; 7] = b"PDWIN1\n";

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct WindowHeader {
    pub d: usize,
    pub center: Vertex,
    pub radius: u32,
    pub seed: Option<u64>,
    pub p: Option<f64>,
    pub n_edges: usize,
    pub overlay: Vec<(Edge, bool)>,
}

impl EdgeConfig {
    /// Write the window as: magic `PDWIN1\n`, u32 little-endian header
    /// length, UTF-8 JSON header, then one bit per edge of E(window) in
    /// sorted canonical order, bit i at byte i/8, position i%8 (LSB first).
    pub fn write_window(&self, mut out: impl Write) -> Result<()> {
        let w = self
            .window
            .as_ref()
            .ok_or_else(|| Error::invalid("configuration has no explicit window"))?;
        let mut overlay: Vec<(Edge, bool)> = self.overlay.iter().map(|(e, s)| (*e, *s)).collect();
        overlay.sort();
        let header = WindowHeader {
            d: w.ball.dim(),
            center: w.ball.center,
            radius: w.ball.radius,
            seed: self.backing.map(|o| o.seed),
            p: self.backing.map(|o| o.p),
            n_edges: w.edges.len(),
            overlay,
        };
        let json = serde_json::to_vec(&header)?;
        out.write_all(WINDOW_MAGIC)?;
        out.write_all(&(json.len() as u32).to_le_bytes())?;
        out.write_all(&json)?;
        let mut bytes = vec![0u8; w.edges.len().div_ceil(8)];
        for i in 0..w.edges.len() {
            if w.get(i) {
                bytes[i / 8] |= 1 << (i % 8);
            }
        }
        out.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_window(mut input: impl Read) -> Result<Self> {
        let mut magic = [0u8; 7];
        input.read_exact(&mut magic)?;
        if &magic != WINDOW_MAGIC {
            return Err(Error::invalid("not a window file (bad magic)"));
        }
        let mut len = [0u8; 4];
        input.read_exact(&mut len)?;
        let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
        input.read_exact(&mut json)?;
        let header: WindowHeader = serde_json::from_slice(&json)?;
        let ball = Ball { center: header.center, radius: header.radius };
        let mut w = WindowBits::new(ball);
        if w.edges.len() != header.n_edges {
            return Err(Error::invalid("window edge count does not match header"));
        }
        let mut bytes = vec![0u8; header.n_edges.div_ceil(8)];
        input.read_exact(&mut bytes)?;
        for i in 0..header.n_edges {
            w.set(i, bytes[i / 8] >> (i % 8) & 1 == 1);
        }
        let backing = match (header.seed, header.p) {
            (Some(seed), Some(p)) => Some(EnvironmentOracle::new(seed, p)?),
            _ => None,
        };
        Ok(EdgeConfig {
            window: Some(w),
            overlay: header.overlay.into_iter().collect(),
            backing,
        })
    }

    pub fn save_window(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_window(std::io::BufWriter::new(f))
    }

    pub fn load_window(path: &Path) -> Result<Self> {
        EdgeConfig::read_window(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    fn v2(a: i32, b: i32) -> Vertex {
        Vertex::new(&[a, b]).unwrap()
    }

    #[test]
    fn degenerate_probabilities() {
        let o = Vertex::origin(2);
        let full = EnvironmentOracle::new(3, 1.0).unwrap();
        let empty = EnvironmentOracle::new(3, 0.0).unwrap();
        for v in Ball::around_origin(2, 5).vertices() {
            for e in Dir::all(2) {
                assert!(full.is_open(&Edge::at(v, e)));
                assert!(!empty.is_open(&Edge::at(v, e)));
            }
        }
        assert!(edge_state(&full, &Edge::at(o, Dir::new(0, true))));
        assert!(EnvironmentOracle::new(0, 1.5).is_err());
    }

    #[test]
    fn open_fraction_concentrates() {
        let oracle = EnvironmentOracle::new(2024, 0.9).unwrap();
        let n = 1_000_000usize;
        let side = 1000;
        let mut open = 0usize;
        for i in 0..n {
            let base = v2((i % side) as i32 - 500, (i / side) as i32 - 500);
            if oracle.is_open(&Edge { base, axis: 0 }) {
                open += 1;
            }
        }
        let frac = open as f64 / n as f64;
        let se = (0.9f64 * 0.1 / n as f64).sqrt();
        assert!((frac - 0.9).abs() < 3.0 * se, "fraction {frac}");
    }

    #[test]
    fn queries_outside_window_need_an_oracle() {
        let ball = Ball::around_origin(2, 1);
        let cfg = EdgeConfig::with_window(ball, |_| true, None);
        let inside = Edge::at(Vertex::origin(2), Dir::new(0, true));
        let outside = Edge::at(v2(5, 5), Dir::new(0, true));
        assert!(cfg.state(&inside).unwrap());
        assert!(matches!(cfg.state(&outside), Err(Error::Unresolved(_))));
        let mut cfg = cfg;
        cfg.force(outside, false);
        assert!(!cfg.state(&outside).unwrap());
    }

    #[test]
    fn identity_surgery_changes_nothing() {
        let omega = EdgeConfig::from_oracle(EnvironmentOracle::new(5, 0.7).unwrap());
        let s = apply_surgery(&omega, &SurgerySpec::identity()).unwrap();
        for v in Ball::around_origin(2, 4).vertices() {
            for e in Dir::all(2) {
                let ed = Edge::at(v, e);
                assert_eq!(omega.state(&ed).unwrap(), s.state(&ed).unwrap());
            }
        }
    }

    #[test]
    fn star_surgery_sets_configuration() {
        let z = v2(2, -1);
        let omega = EdgeConfig::full_lattice();
        let nu = DirSet::full(2);
        let closed = apply_surgery(&omega, &SurgerySpec::star(z, nu)).unwrap();
        assert_eq!(config_of(&closed, &z).unwrap(), nu);
        let e1 = DirSet::single(Dir::new(0, true));
        let one = apply_surgery(&omega, &SurgerySpec::star(z, e1)).unwrap();
        assert_eq!(config_of(&one, &z).unwrap(), e1);
        assert_eq!(config_of(&omega, &z).unwrap(), DirSet::EMPTY);
    }

    #[test]
    fn primary_slot_wins_on_intersection() {
        let e = Edge::at(Vertex::origin(2), Dir::new(0, true));
        let a: BTreeSet<Edge> = [e].into();
        // e in A1 ∩ A2, e ∈ B2 \ B1: A1 says open.
        let s = SurgerySpec::new(a.clone(), BTreeSet::new(), a.clone(), a.clone()).unwrap();
        let omega = EdgeConfig::from_oracle(EnvironmentOracle::new(1, 0.0).unwrap());
        let out = apply_surgery(&omega, &s).unwrap();
        assert!(out.state(&e).unwrap());
    }

    #[test]
    fn surgery_rejects_b_outside_a() {
        let e = Edge::at(Vertex::origin(2), Dir::new(0, true));
        let r = SurgerySpec::on(BTreeSet::new(), [e].into());
        assert!(r.is_err());
    }

    #[test]
    fn shorthand_constructors() {
        let z = v2(1, 1);
        let star: Vec<Edge> = Dir::all(2).map(|e| Edge::at(z, e)).collect();
        let open = apply_surgery(
            &EdgeConfig::from_oracle(EnvironmentOracle::new(9, 0.0).unwrap()),
            &SurgerySpec::all_open(star.clone()),
        )
        .unwrap();
        assert_eq!(config_of(&open, &z).unwrap(), DirSet::EMPTY);
        let closed =
            apply_surgery(&EdgeConfig::full_lattice(), &SurgerySpec::all_closed(star)).unwrap();
        assert!(config_of(&closed, &z).unwrap().is_full(2));
        // ω^{(z,2),B}: B given relative to the origin.
        let rel = Edge::at(Vertex::origin(2), Dir::new(1, true));
        let s = SurgerySpec::ball(z, 2, &[rel]).unwrap();
        let cfg = apply_surgery(&EdgeConfig::full_lattice(), &s).unwrap();
        assert!(!cfg.state(&Edge::at(z, Dir::new(1, true))).unwrap());
        assert!(cfg.state(&Edge::at(z, Dir::new(0, true))).unwrap());
        assert!(SurgerySpec::ball(z, 1, &[Edge::at(v2(3, 0), Dir::new(0, true))]).is_err());
    }

    #[test]
    fn clusters_on_degenerate_configs() {
        let b = Ball::around_origin(2, 3);
        let full = clusters(&EnvironmentOracle::full(), &b).unwrap();
        assert_eq!(full.num_clusters(), 1);
        assert_eq!(full.sizes[0], 25);
        assert!(full.touches_boundary[0]);
        let empty = clusters(&EnvironmentOracle::new(0, 0.0).unwrap(), &b).unwrap();
        assert_eq!(empty.num_clusters(), 25);
        assert!(empty.sizes.iter().all(|s| *s == 1));
    }

    #[test]
    fn clusters_on_hand_drawn_window() {
        // Window B(0,2). Open: the horizontal path (-1,0)-(0,0)-(1,0)-(2,0)
        // and the vertical edge (0,1)-(0,2). Everything else closed.
        let open: BTreeSet<Edge> = [
            Edge::between(v2(-1, 0), v2(0, 0)).unwrap(),
            Edge::between(v2(0, 0), v2(1, 0)).unwrap(),
            Edge::between(v2(1, 0), v2(2, 0)).unwrap(),
            Edge::between(v2(0, 1), v2(0, 2)).unwrap(),
        ]
        .into();
        let b = Ball::around_origin(2, 2);
        let cfg = EdgeConfig::with_window(b, |e| open.contains(e), None);
        let lab = clusters(&cfg, &b).unwrap();
        assert_eq!(lab.num_clusters(), 13 - 3 - 1);
        assert!(lab.same_cluster(&v2(-1, 0), &v2(2, 0)));
        assert!(lab.same_cluster(&v2(0, 1), &v2(0, 2)));
        assert!(!lab.same_cluster(&v2(0, 0), &v2(0, 1)));
        let id = lab.labels[&v2(0, 0)];
        assert_eq!(lab.sizes[id], 4);
        assert!(lab.touches_boundary[id]);
        let sizes_total: usize = lab.sizes.iter().sum();
        assert_eq!(sizes_total, 13);
    }

    #[test]
    fn conditioning_accepts_immediately_on_full_lattice() {
        let c = condition_on_infinite_cluster(1.0, 2, 10, SeedStream::new(1, 0), 5).unwrap();
        assert_eq!(c.rejections, 0);
    }

    #[test]
    fn conditioning_exhausts_budget_when_subcritical() {
        let r = condition_on_infinite_cluster(0.3, 2, 30, SeedStream::new(1, 0), 40);
        assert!(matches!(r, Err(Error::BudgetExhausted { .. })));
        let r = condition_on_infinite_cluster(0.5, 2, 30, SeedStream::new(1, 0), 0);
        assert!(matches!(r, Err(Error::BudgetExhausted { .. })));
    }

    #[test]
    fn conditioning_acceptance_is_high_when_dense() {
        let trials = 400u64;
        let accepted = (0..trials)
            .filter(|i| {
                let o = EnvironmentOracle::new(*i, 0.98).unwrap();
                reaches_sphere(&o, &Vertex::origin(2), 30).unwrap()
            })
            .count();
        assert!(accepted as f64 / trials as f64 > 0.9);
    }

    #[test]
    fn star_configuration_law_matches_binomial() {
        let eps = 0.1f64;
        let n = 20_000u64;
        let z = Vertex::origin(2);
        let empty = (0..n)
            .filter(|s| {
                let o = EnvironmentOracle::new(*s, 1.0 - eps).unwrap();
                config_of(&o, &z).unwrap().is_empty()
            })
            .count();
        let target = (1.0 - eps).powi(4);
        let se = (target * (1.0 - target) / n as f64).sqrt();
        assert!((empty as f64 / n as f64 - target).abs() < 4.0 * se);
    }

    #[test]
    fn window_file_roundtrip() {
        let oracle = EnvironmentOracle::new(11, 0.6).unwrap();
        let mut cfg = EdgeConfig::sample_window(oracle, Ball::around_origin(2, 4));
        cfg.force(Edge::at(v2(9, 9), Dir::new(1, true)), false);
        let mut buf = Vec::new();
        cfg.write_window(&mut buf).unwrap();
        assert_eq!(&buf[..7], b"PDWIN1\n");
        let back = EdgeConfig::read_window(buf.as_slice()).unwrap();
        for e in Ball::around_origin(2, 6).edges() {
            assert_eq!(cfg.state(&e).unwrap(), back.state(&e).unwrap());
        }
        assert_eq!(back.overlay().len(), 1);
    }

    #[test]
    fn statistics_regime_validation() {
        assert!(validate_statistics_regime(0.98).is_ok());
        assert!(validate_statistics_regime(0.4).is_err());
    }
}
