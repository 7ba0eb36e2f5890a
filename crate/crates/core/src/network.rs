//! Electrical networks with a cemetery.
//!
//! The killed walk is the random walk on the network whose edges carry the
//! conductances c^ω and where every vertex x is also wired to a cemetery Δ
//! with conductance π(x)(1−δ)/δ, so that the total conductance at x is
//! π(x)/δ. Effective resistances to Δ are computed on a box with two
//! boundary treatments: edges leaving the box shorted to Δ (a lower bound by
//! Rayleigh) or cut (an upper bound).

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::environment::EdgeStates;
use crate::error::{Error, Result};
use crate::kernel::{conductance, Bias};
use crate::lattice::{Ball, Dir, Edge, Region, Vertex};
use crate::linalg::conjugate_gradient;

#[derive(Clone, Debug)]
pub struct KilledNetwork {
    pub ball: Ball,
    pub delta: f64,
    /// Vertices of the box with π > 0.
    pub region: Region,
    pub pi: Vec<f64>,
    /// Open edges with both endpoints in `region`.
    pub edges: Vec<(usize, usize, f64)>,
    edge_index: HashMap<Edge, usize>,
    /// c([x, Δ]).
    pub cemetery: Vec<f64>,
    /// Open edges from a region vertex to a vertex outside the box.
    pub outward: Vec<(usize, Edge, f64)>,
    outward_index: HashMap<Edge, usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryMode {
    /// Everything outside the box is shorted to Δ.
    Grounded,
    /// Edges leaving the box are removed.
    Free,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResistanceMethod {
    GroundedBoundary,
    FreeBoundary,
    Pair,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResistanceResult {
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub method: ResistanceMethod,
}

pub fn build_killed(
    omega: &impl EdgeStates,
    bias: &Bias,
    delta: f64,
    ball: &Ball,
) -> Result<KilledNetwork> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("killed networks need 0 < δ < 1, got {delta}")));
    }
    let mut verts = Vec::new();
    let mut pis = Vec::new();
    for x in ball.vertices() {
        let mut p = 0.0;
        for e in Dir::all(x.dim()) {
            let edge = Edge::at(x, e);
            if omega.state(&edge)? {
                p += conductance(&edge, bias);
            }
        }
        if p > 0.0 {
            verts.push(x);
            pis.push(p);
        }
    }
    let region = Region::from_vertices(verts);
    let mut edges = Vec::new();
    let mut edge_index = HashMap::new();
    let mut outward = Vec::new();
    let mut outward_index = HashMap::new();
    for (i, x) in region.vertices().iter().enumerate() {
        for e in Dir::all(x.dim()) {
            let y = x.step(e);
            let edge = Edge::at(*x, e);
            if !omega.state(&edge)? {
                continue;
            }
            let c = conductance(&edge, bias);
            if let Some(j) = region.index_of(&y) {
                if e.sign() > 0 {
                    edge_index.insert(edge, edges.len());
                    edges.push((i, j, c));
                }
            } else if !ball.contains(&y) {
                outward_index.insert(edge, outward.len());
                outward.push((i, edge, c));
            }
        }
    }
    let cemetery = pis.iter().map(|p| p * (1.0 - delta) / delta).collect();
    Ok(KilledNetwork {
        ball: *ball,
        delta,
        region,
        pi: pis,
        edges,
        edge_index,
        cemetery,
        outward,
        outward_index,
    })
}

impl KilledNetwork {
    /// π^{ω(δ)}(x) = π(x)/δ, the total conductance at x.
    pub fn killed_degree(&self, x: &Vertex) -> Option<f64> {
        self.region.index_of(x).map(|i| self.pi[i] / self.delta)
    }

    pub fn cemetery_conductance(&self, x: &Vertex) -> Option<f64> {
        self.region.index_of(x).map(|i| self.cemetery[i])
    }

    pub fn edge_conductance(&self, e: &Edge) -> Option<f64> {
        self.edge_index
            .get(e)
            .map(|k| self.edges[*k].2)
            .or_else(|| self.outward_index.get(e).map(|k| self.outward[*k].2))
    }

    /// Potentials with unit current injected at `source`, Δ and `grounded`
    /// at potential 0. Returns potentials indexed like `region`.
    pub fn potentials(
        &self,
        source: &Vertex,
        grounded: &[Vertex],
        mode: BoundaryMode,
    ) -> Result<Vec<f64>> {
        let n = self.region.len();
        let src = self
            .region
            .index_of(source)
            .ok_or_else(|| Error::invalid(format!("{source:?} is not a vertex of the network")))?;
        let ground: HashSet<usize> = grounded.iter().filter_map(|z| self.region.index_of(z)).collect();
        if ground.contains(&src) {
            return Err(Error::invalid("source is grounded"));
        }
        let free: Vec<usize> = (0..n).filter(|i| !ground.contains(i)).collect();
        let pos: HashMap<usize, usize> = free.iter().enumerate().map(|(k, i)| (*i, k)).collect();
        let m = free.len();
        let mut diag = vec![0.0; m];
        let mut off: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
        for (k, i) in free.iter().enumerate() {
            diag[k] = self.cemetery[*i];
        }
        for (i, j, c) in &self.edges {
            match (pos.get(i), pos.get(j)) {
                (Some(a), Some(b)) => {
                    diag[*a] += c;
                    diag[*b] += c;
                    off[*a].push((*b, *c));
                    off[*b].push((*a, *c));
                }
                (Some(a), None) => diag[*a] += c,
                (None, Some(b)) => diag[*b] += c,
                (None, None) => {}
            }
        }
        if mode == BoundaryMode::Grounded {
            for (i, _, c) in &self.outward {
                if let Some(a) = pos.get(i) {
                    diag[*a] += c;
                }
            }
        }
        let apply = |x: &[f64], out: &mut [f64]| {
            for k in 0..m {
                out[k] = diag[k] * x[k] - off[k].iter().map(|(j, c)| c * x[*j]).sum::<f64>();
            }
        };
        let mut b = vec![0.0; m];
        b[pos[&src]] = 1.0;
        let v = conjugate_gradient(apply, &diag, &b, 1e-14, 50 * m + 1000)?;
        let mut out = vec![0.0; n];
        for (k, i) in free.iter().enumerate() {
            out[*i] = v[k];
        }
        Ok(out)
    }

    fn bracketed(
        &self,
        x: &Vertex,
        grounded: &[Vertex],
        tol: f64,
        method: ResistanceMethod,
    ) -> Result<ResistanceResult> {
        let i = self
            .region
            .index_of(x)
            .ok_or_else(|| Error::invalid(format!("{x:?} has π = 0 or lies outside the box")))?;
        let lower = self.potentials(x, grounded, BoundaryMode::Grounded)?[i];
        let upper = self.potentials(x, grounded, BoundaryMode::Free)?[i];
        if upper - lower > tol {
            return Err(Error::BracketTooWide { lower, upper, tol });
        }
        Ok(ResistanceResult { value: lower, lower, upper, method })
    }

    /// The unit current flow from `source` to Δ ∪ `grounded`.
    pub fn current_flow(&self, source: &Vertex, grounded: &[Vertex], mode: BoundaryMode) -> Result<Flow> {
        let v = self.potentials(source, grounded, mode)?;
        Ok(self.flow_from_potentials(&v, mode))
    }

    pub fn flow_from_potentials(&self, v: &[f64], mode: BoundaryMode) -> Flow {
        let mut flow = Flow::default();
        for (e, k) in &self.edge_index {
            let (i, j, c) = self.edges[*k];
            flow.edges.insert(*e, c * (v[i] - v[j]));
        }
        for (i, x) in self.region.vertices().iter().enumerate() {
            flow.to_cemetery.insert(*x, self.cemetery[i] * v[i]);
        }
        if mode == BoundaryMode::Grounded {
            for (i, e, c) in &self.outward {
                flow.outward.insert(*e, c * v[*i]);
            }
        }
        flow
    }
}

/// R(x ↔ Δ) bracketed by the two boundary treatments.
pub fn resistance_to_delta(net: &KilledNetwork, x: &Vertex, tol: f64) -> Result<ResistanceResult> {
    net.bracketed(x, &[], tol, ResistanceMethod::GroundedBoundary)
}

/// R(x ↔ {z} ∪ Δ).
pub fn resistance_to_target(
    net: &KilledNetwork,
    x: &Vertex,
    z: &Vertex,
    tol: f64,
) -> Result<ResistanceResult> {
    if x == z {
        return Err(Error::invalid("source and target coincide"));
    }
    if net.region.index_of(z).is_none() {
        return Err(Error::invalid(format!("{z:?} has π = 0 or lies outside the box")));
    }
    net.bracketed(x, &[*z], tol, ResistanceMethod::Pair)
}

/// Grow the box around `x` until the bracket closes below `tol`.
pub fn resistance_to_delta_auto(
    omega: &impl EdgeStates,
    bias: &Bias,
    delta: f64,
    x: &Vertex,
    start_radius: u32,
    max_radius: u32,
    tol: f64,
) -> Result<(ResistanceResult, u32)> {
    let mut r = start_radius.max(1);
    loop {
        let net = build_killed(omega, bias, delta, &Ball { center: *x, radius: r })?;
        match resistance_to_delta(&net, x, tol) {
            Ok(res) => return Ok((res, r)),
            Err(Error::BracketTooWide { .. }) if r < max_radius => {
                r = (2 * r).min(max_radius);
            }
            Err(Error::BracketTooWide { lower, upper, .. }) => {
                return Err(Error::BudgetExhausted {
                    what: "resistance box growth",
                    detail: format!("bracket [{lower:e}, {upper:e}] at radius {r}"),
                })
            }
            Err(e) => return Err(e),
        }
    }
}

/// A flow on the killed network. Edge flows are signed along the canonical
/// orientation (base → base + e_axis); cemetery and outward flows leave the
/// vertex they are attached to.
#[derive(Clone, Debug, Default)]
pub struct Flow {
    pub edges: HashMap<Edge, f64>,
    pub to_cemetery: HashMap<Vertex, f64>,
    pub outward: HashMap<Edge, f64>,
}

impl Flow {
    pub fn scaled(&self, s: f64) -> Flow {
        Flow {
            edges: self.edges.iter().map(|(e, f)| (*e, f * s)).collect(),
            to_cemetery: self.to_cemetery.iter().map(|(v, f)| (*v, f * s)).collect(),
            outward: self.outward.iter().map(|(e, f)| (*e, f * s)).collect(),
        }
    }
}

/// ∑ r(e) θ(e)² for a unit flow from `source` absorbed at Δ ∪ `sinks`.
pub fn thomson_energy(
    net: &KilledNetwork,
    flow: &Flow,
    source: &Vertex,
    sinks: &[Vertex],
    mode: BoundaryMode,
) -> Result<f64> {
    let mut div: HashMap<Vertex, f64> = HashMap::new();
    let mut energy = 0.0;
    for (e, f) in &flow.edges {
        let k = net
            .edge_index
            .get(e)
            .ok_or_else(|| Error::invalid(format!("flow on {e:?}, which is not a network edge")))?;
        let (i, j, c) = net.edges[*k];
        *div.entry(net.region.vertex(i)).or_default() += f;
        *div.entry(net.region.vertex(j)).or_default() -= f;
        energy += f * f / c;
    }
    for (x, f) in &flow.to_cemetery {
        let i = net
            .region
            .index_of(x)
            .ok_or_else(|| Error::invalid(format!("cemetery flow at {x:?}, not a vertex")))?;
        *div.entry(*x).or_default() += f;
        energy += f * f / net.cemetery[i];
    }
    if mode == BoundaryMode::Free && flow.outward.values().any(|f| *f != 0.0) {
        return Err(Error::invalid("outward flow in a free-boundary network"));
    }
    for (e, f) in &flow.outward {
        let k = net
            .outward_index
            .get(e)
            .ok_or_else(|| Error::invalid(format!("outward flow on {e:?}, not a boundary edge")))?;
        let (i, _, c) = net.outward[*k];
        *div.entry(net.region.vertex(i)).or_default() += f;
        energy += f * f / c;
    }
    let scale = 1e-9;
    for x in net.region.vertices() {
        if sinks.contains(x) {
            continue;
        }
        let want = if x == source { 1.0 } else { 0.0 };
        let got = div.get(x).copied().unwrap_or(0.0);
        if (got - want).abs() > scale {
            return Err(Error::invalid(format!(
                "flow does not conserve at {x:?}: net outflow {got:.3e}, expected {want}"
            )));
        }
    }
    Ok(energy)
}

/// The ratio (R^ω − 4R^{ω^{A,1}})⁺ / (L^c e^{2λ(L − x·ℓ̂)}) recorded by the
/// edge-insertion experiment. Nothing is asserted about its size.
pub fn insertion_ratio(r_omega: f64, r_opened: f64, l_a: u32, x_dot_l: f64, lambda: f64, c: f64) -> f64 {
    let num = (r_omega - 4.0 * r_opened).max(0.0);
    let l = l_a as f64;
    num / (l.powf(c) * (2.0 * lambda * (l - x_dot_l)).exp())
}
