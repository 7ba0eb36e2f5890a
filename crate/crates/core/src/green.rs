//! Killed and stopped Green functions.
//!
//! G_δ(x,y) = E_x[∑_k δ^k 1{X_k = y}] is computed on a finite region by
//! solving (I − δP)g = 1_y. On a ball cut out of the lattice the walk is
//! killed when it leaves (Dirichlet data 0), which gives a lower bound;
//! boundary data 1/(1−δ) gives the matching upper bound.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{config_of, EdgeStates};
use crate::error::{Error, Result};
use crate::kernel::{open_weight, Bias, LocalKernel};
use crate::lattice::{Ball, Dir, DirSet, Edge, Region, Vertex};
use crate::linalg::{
    dense_resolvent, resolvent_residual, resolvent_solve, ReversibleKernel, SolveOptions,
    SparseRows,
};
use crate::rng::stream;

/// What happens to the walk at the edge of a finite region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    /// Moves to vertices outside the region kill the walk.
    KilledOnExit,
    /// The walk lives on the finite graph of open edges inside the region.
    Confined,
}

/// The walk restricted to a finite region, as a reversible sub-stochastic
/// kernel indexed like `region`.
#[derive(Clone, Debug)]
pub struct FiniteChain {
    pub region: Region,
    pub kernel: ReversibleKernel,
    /// Probability of leaving the region in one step.
    pub exit: Vec<f64>,
}

impl FiniteChain {
    pub fn build(
        omega: &impl EdgeStates,
        bias: &Bias,
        region: Region,
        boundary: Boundary,
    ) -> Result<Self> {
        let n = region.len();
        let mut p = SparseRows::new(n);
        let mut h = vec![0.0; n];
        let mut exit = vec![0.0; n];
        for (i, x) in region.vertices().iter().enumerate() {
            let mut closed = config_of(omega, x)?;
            if boundary == Boundary::Confined {
                for e in Dir::all(x.dim()) {
                    if !region.contains(&x.step(e)) {
                        closed = closed.with(e);
                    }
                }
            }
            let row = LocalKernel::from_closed(closed, bias);
            h[i] = bias.potential(x) + 0.5 * open_weight(closed, bias).max(f64::MIN_POSITIVE).ln();
            if row.self_loop() > 0.0 {
                p.rows[i].push((i, row.self_loop()));
            }
            for e in row.open_dirs() {
                match region.index_of(&x.step(e)) {
                    Some(j) => p.rows[i].push((j, row.prob(e))),
                    None => exit[i] += row.prob(e),
                }
            }
        }
        Ok(FiniteChain { region, kernel: ReversibleKernel { p, log_sqrt_pi: h }, exit })
    }

    pub fn on_ball(
        omega: &impl EdgeStates,
        bias: &Bias,
        b: &Ball,
        boundary: Boundary,
    ) -> Result<Self> {
        FiniteChain::build(omega, bias, Region::from_ball(b), boundary)
    }

    pub fn len(&self) -> usize {
        self.region.len()
    }

    pub fn is_empty(&self) -> bool {
        self.region.is_empty()
    }

    pub fn index(&self, v: &Vertex) -> Result<usize> {
        self.region
            .index_of(v)
            .ok_or_else(|| Error::invalid(format!("vertex {v:?} is outside the region")))
    }

    /// Solve (I − δP)g = b with g pinned to given values on `fixed`.
    pub fn solve(&self, delta: f64, b: &[f64], fixed: &[(usize, f64)]) -> Result<Vec<f64>> {
        if fixed.is_empty() {
            return resolvent_solve(&self.kernel, delta, b, SolveOptions::default());
        }
        let pinned: HashMap<usize, f64> = fixed.iter().copied().collect();
        let free: Vec<usize> = (0..self.len()).filter(|i| !pinned.contains_key(i)).collect();
        let pos: HashMap<usize, usize> = free.iter().enumerate().map(|(k, i)| (*i, k)).collect();
        let mut p = SparseRows::new(free.len());
        let mut rhs = vec![0.0; free.len()];
        for (k, i) in free.iter().enumerate() {
            rhs[k] = b[*i];
            for (j, v) in &self.kernel.p.rows[*i] {
                match pos.get(j) {
                    Some(kj) => p.rows[k].push((*kj, *v)),
                    None => rhs[k] += delta * v * pinned[j],
                }
            }
        }
        let h = free.iter().map(|i| self.kernel.log_sqrt_pi[*i]).collect();
        let reduced = ReversibleKernel { p, log_sqrt_pi: h };
        let g = resolvent_solve(&reduced, delta, &rhs, SolveOptions::default())?;
        let mut out = vec![0.0; self.len()];
        for (k, i) in free.iter().enumerate() {
            out[*i] = g[k];
        }
        for (i, v) in fixed {
            out[*i] = *v;
        }
        Ok(out)
    }

    /// The column G(·, y) of the chain.
    pub fn green_column(&self, delta: f64, y: &Vertex) -> Result<Vec<f64>> {
        let mut b = vec![0.0; self.len()];
        b[self.index(y)?] = 1.0;
        self.solve(delta, &b, &[])
    }

    pub fn dense(&self) -> DMatrix<f64> {
        self.kernel.p.to_dense()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GreenMethod {
    ExactSolve,
    MonteCarlo,
}

/// G(·, y) on a ball together with its truncation bracket.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GreenTable {
    pub target: Vertex,
    pub ball: Ball,
    pub delta: f64,
    pub method: GreenMethod,
    pub vertices: Vec<Vertex>,
    /// Dirichlet-0 values (lower bounds).
    pub values: Vec<f64>,
    /// Values with boundary data 1/(1−δ) (upper bounds).
    pub upper: Vec<f64>,
    /// Largest bracket width over the inner half of the ball.
    pub error: f64,
    /// Max-norm residual of the defining linear relation.
    pub residual: f64,
}

impl GreenTable {
    /// Lower-bound value, 0 outside the ball.
    pub fn value(&self, v: &Vertex) -> f64 {
        if !self.ball.contains(v) {
            return 0.0;
        }
        self.vertices.iter().position(|w| w == v).map_or(0.0, |i| self.values[i])
    }

    pub fn bracket(&self, v: &Vertex) -> Option<(f64, f64)> {
        self.vertices
            .iter()
            .position(|w| w == v)
            .map(|i| (self.values[i], self.upper[i]))
    }

    /// CSV rows `x0,…,x{d-1},value,upper` with a header.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.ball.dim();
        let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
        header.push("value".into());
        header.push("upper".into());
        w.write_record(&header)?;
        for (i, v) in self.vertices.iter().enumerate() {
            let mut rec: Vec<String> = v.coords().iter().map(|c| c.to_string()).collect();
            rec.push(format!("{:e}", self.values[i]));
            rec.push(format!("{:e}", self.upper[i]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// The JSON sidecar: everything except the per-vertex values.
    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "target": self.target,
            "ball": self.ball,
            "delta": self.delta,
            "method": self.method,
            "error": self.error,
            "residual": self.residual,
        })
    }
}

fn check_killed_delta(delta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::invalid(format!(
            "killed solves need 0 ≤ δ < 1, got {delta}; δ = 1 is only available for the \
             transient full-lattice computations of the expansion"
        )));
    }
    Ok(())
}

/// G_δ(·, y) on `b` with Dirichlet truncation and an upper bracket.
/// `tol` bounds the bracket width over the inner half of the ball.
pub fn green_exact(
    omega: &impl EdgeStates,
    bias: &Bias,
    delta: f64,
    y: &Vertex,
    b: &Ball,
    tol: f64,
) -> Result<GreenTable> {
    check_killed_delta(delta)?;
    if !b.contains(y) {
        return Err(Error::invalid("target outside the box"));
    }
    let chain = FiniteChain::on_ball(omega, bias, b, Boundary::KilledOnExit)?;
    let iy = chain.index(y)?;
    let mut rhs = vec![0.0; chain.len()];
    rhs[iy] = 1.0;
    let lower = chain.solve(delta, &rhs, &[])?;
    let residual = resolvent_residual(&chain.kernel.p, delta, &lower, &rhs);
    let gmax = 1.0 / (1.0 - delta);
    for (r, e) in rhs.iter_mut().zip(&chain.exit) {
        *r += delta * gmax * e;
    }
    let upper = chain.solve(delta, &rhs, &[])?;
    let inner = b.radius / 2;
    let error = chain
        .region
        .vertices()
        .iter()
        .enumerate()
        .filter(|(_, v)| v.l1_dist(&b.center) <= inner as u64)
        .map(|(i, _)| upper[i] - lower[i])
        .fold(0.0, f64::max);
    if error > tol {
        let i = chain.index(y)?;
        return Err(Error::BracketTooWide { lower: lower[i], upper: upper[i], tol });
    }
    Ok(GreenTable {
        target: *y,
        ball: *b,
        delta,
        method: GreenMethod::ExactSolve,
        vertices: chain.region.vertices().to_vec(),
        values: lower,
        upper,
        error,
        residual,
    })
}

/// G_{δ,Z}(x, y) = E_x[∑_{k ≤ T_Z} δ^k 1{X_k = y}], walk killed on leaving `b`.
pub fn green_stopped(
    omega: &impl EdgeStates,
    bias: &Bias,
    delta: f64,
    x: &Vertex,
    y: &Vertex,
    z_set: &[Vertex],
    b: &Ball,
) -> Result<f64> {
    check_killed_delta(delta)?;
    if z_set.contains(x) {
        return Ok(if x == y { 1.0 } else { 0.0 });
    }
    let chain = FiniteChain::on_ball(omega, bias, b, Boundary::KilledOnExit)?;
    let mut fixed = Vec::new();
    for z in z_set {
        if let Some(i) = chain.region.index_of(z) {
            fixed.push((i, if z == y { 1.0 } else { 0.0 }));
        }
    }
    let mut rhs = vec![0.0; chain.len()];
    if let Some(iy) = chain.region.index_of(y) {
        rhs[iy] = 1.0;
    }
    let g = chain.solve(delta, &rhs, &fixed)?;
    Ok(g[chain.index(x)?])
}

/// E_x[δ^{T_z}; T_z < ∞] = P_x[T_z < τ_δ] for every x of `b`.
pub fn hitting_discounted(
    omega: &impl EdgeStates,
    bias: &Bias,
    delta: f64,
    z: &Vertex,
    b: &Ball,
) -> Result<(Region, Vec<f64>)> {
    check_killed_delta(delta)?;
    let chain = FiniteChain::on_ball(omega, bias, b, Boundary::KilledOnExit)?;
    let iz = chain.index(z)?;
    let h = chain.solve(delta, &vec![0.0; chain.len()], &[(iz, 1.0)])?;
    Ok((chain.region, h))
}

/// Per-step survival with probability δ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KillingClock {
    pub delta: f64,
}

impl KillingClock {
    pub fn new(delta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::invalid(format!("δ = {delta} outside [0, 1]")));
        }
        Ok(KillingClock { delta })
    }

    #[inline]
    pub fn survives(&self, rng: &mut impl Rng) -> bool {
        self.delta >= 1.0 || rng.random::<f64>() < self.delta
    }
}

/// One step of the quenched walk.
#[inline]
pub fn step(omega: &impl EdgeStates, bias: &Bias, x: &Vertex, rng: &mut impl Rng) -> Result<Vertex> {
    let mut closed = DirSet::EMPTY;
    let mut w = [0.0; 2 * crate::lattice::MAX_DIM];
    let mut total = 0.0;
    for e in Dir::all(x.dim()) {
        if omega.state(&Edge::at(*x, e))? {
            w[e.index()] = bias.weight(e);
            total += w[e.index()];
        } else {
            closed = closed.with(e);
        }
    }
    if total == 0.0 {
        return Ok(*x);
    }
    let mut u = rng.random::<f64>() * total;
    let mut last = *x;
    for e in Dir::all(x.dim()) {
        if closed.contains(e) {
            continue;
        }
        last = x.step(e);
        u -= w[e.index()];
        if u < 0.0 {
            return Ok(last);
        }
    }
    Ok(last)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub n_walks: u64,
    pub horizon: u64,
    /// δ^horizon/(1−δ): the most the horizon cutoff can remove.
    pub bias_bound: f64,
}

/// Default horizon ⌈ln(tol(1−δ))/ln δ⌉.
pub fn default_horizon(delta: f64, tol: f64) -> u64 {
    if delta <= 0.0 {
        return 1;
    }
    ((tol * (1.0 - delta)).ln() / delta.ln()).ceil().max(1.0) as u64
}

/// Monte Carlo G_δ(x, y): mean discounted visit count over `n_walks`
/// killed walks. With `confine` set, leaving the ball kills the walk, which
/// matches the Dirichlet truncation of [`green_exact`].
#[allow(clippy::too_many_arguments)]
pub fn green_mc(
    omega: &(impl EdgeStates + Sync),
    bias: &Bias,
    delta: f64,
    x: &Vertex,
    y: &Vertex,
    n_walks: u64,
    horizon: u64,
    seed: u64,
    confine: Option<&Ball>,
) -> Result<McEstimate> {
    if n_walks < 1 {
        return Err(Error::invalid("n_walks must be at least 1"));
    }
    check_killed_delta(delta)?;
    let clock = KillingClock::new(delta)?;
    let counts: Vec<Result<f64>> = (0..n_walks)
        .into_par_iter()
        .map(|w| {
            let mut rng = stream(seed, &[0x6772_6565_6e, w]);
            let mut pos = *x;
            let mut visits = 0.0;
            for k in 0..horizon {
                if pos == *y {
                    visits += 1.0;
                }
                if k + 1 == horizon || !clock.survives(&mut rng) {
                    break;
                }
                pos = step(omega, bias, &pos, &mut rng)?;
                if confine.is_some_and(|b| !b.contains(&pos)) {
                    break;
                }
            }
            Ok(visits)
        })
        .collect();
    let mut sum = 0.0;
    let mut sq = 0.0;
    for c in counts {
        let c = c?;
        sum += c;
        sq += c * c;
    }
    let n = n_walks as f64;
    let mean = sum / n;
    let var = if n_walks > 1 { (sq - n * mean * mean).max(0.0) / (n - 1.0) } else { 0.0 };
    Ok(McEstimate {
        mean,
        se: (var / n).sqrt(),
        n_walks,
        horizon,
        bias_bound: delta.powf(horizon as f64) / (1.0 - delta),
    })
}

/// Terms of G^{P'} = ∑_{k=0}^{n} δ^k (G^P(P'−P))^k G^P + remainder, column y.
#[derive(Clone, Debug)]
pub struct PerturbExpansion {
    pub terms: Vec<DVector<f64>>,
    pub remainder: DVector<f64>,
    pub exact: DVector<f64>,
}

impl PerturbExpansion {
    pub fn partial_sum(&self, k: usize) -> DVector<f64> {
        self.terms.iter().take(k + 1).fold(DVector::zeros(self.exact.len()), |a, t| a + t)
    }

    /// Max-norm of (∑ terms + remainder) − G^{P'}.
    pub fn reconstruction_error(&self) -> f64 {
        (self.partial_sum(self.terms.len()) + &self.remainder - &self.exact).amax()
    }
}

pub fn perturb_expand(
    p: &DMatrix<f64>,
    p_prime: &DMatrix<f64>,
    delta: f64,
    n: usize,
    y: usize,
) -> Result<PerturbExpansion> {
    if p.shape() != p_prime.shape() || p.nrows() != p.ncols() {
        return Err(Error::invalid("kernels must be square and on the same vertex set"));
    }
    if y >= p.nrows() {
        return Err(Error::invalid("target index out of range"));
    }
    let g = dense_resolvent(p, delta)?;
    let g_prime = dense_resolvent(p_prime, delta)?;
    let m = &g * (p_prime - p) * delta;
    let mut cur = g.column(y).into_owned();
    let mut terms = Vec::with_capacity(n + 1);
    for _ in 0..=n {
        terms.push(cur.clone());
        cur = &m * cur;
    }
    // δ^{n+1}(G^P(P'−P))^{n+1}G^{P'} e_y.
    let mut rem = g_prime.column(y).into_owned();
    for _ in 0..=n {
        rem = &m * rem;
    }
    Ok(PerturbExpansion { terms, remainder: rem, exact: g_prime.column(y).into_owned() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{apply_surgery, EdgeConfig, EnvironmentOracle, SurgerySpec};
    use approx::assert_relative_eq;

    fn v2(a: i32, b: i32) -> Vertex {
        Vertex::new(&[a, b]).unwrap()
    }

    fn two_vertex() -> EdgeConfig {
        let mut cfg = EdgeConfig::from_oracle(EnvironmentOracle::new(0, 0.0).unwrap());
        cfg.force(Edge::at(Vertex::origin(2), Dir::new(0, true)), true);
        cfg
    }

    #[test]
    fn isolated_vertex() {
        let b = Bias::axis(2, 0.5).unwrap();
        let empty = EnvironmentOracle::new(0, 0.0).unwrap();
        let o = Vertex::origin(2);
        let t = green_exact(&empty, &b, 0.5, &o, &Ball::around_origin(2, 3), 1e-12).unwrap();
        assert_relative_eq!(t.value(&o), 2.0, epsilon = 1e-14);
        let mc = green_mc(&empty, &b, 0.5, &o, &o, 10_000, 200, 1, None).unwrap();
        assert!((mc.mean - 2.0).abs() < 3.0 * mc.se);
    }

    #[test]
    fn two_vertex_chain() {
        let b = Bias::axis(2, 0.5).unwrap();
        let cfg = two_vertex();
        let o = Vertex::origin(2);
        let t = green_exact(&cfg, &b, 0.5, &o, &Ball::around_origin(2, 3), 1e-12).unwrap();
        assert_relative_eq!(t.value(&o), 4.0 / 3.0, epsilon = 1e-13);
        let mc = green_mc(&cfg, &b, 0.5, &o, &o, 20_000, 200, 2, None).unwrap();
        assert!((mc.mean - 4.0 / 3.0).abs() < 3.0 * mc.se);
    }

    #[test]
    fn mc_at_zero_delta_is_indicator() {
        let b = Bias::axis(2, 0.5).unwrap();
        let o = Vertex::origin(2);
        let full = EnvironmentOracle::full();
        let same = green_mc(&full, &b, 0.0, &o, &o, 100, 10, 3, None).unwrap();
        assert_eq!(same.mean, 1.0);
        assert_eq!(same.se, 0.0);
        let other = green_mc(&full, &b, 0.0, &o, &v2(1, 0), 100, 10, 3, None).unwrap();
        assert_eq!(other.mean, 0.0);
    }

    #[test]
    fn unit_delta_is_rejected_for_killed_solves() {
        let b = Bias::axis(2, 0.5).unwrap();
        let o = Vertex::origin(2);
        let r = green_exact(&EnvironmentOracle::full(), &b, 1.0, &o, &Ball::around_origin(2, 3), 1.0);
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn exact_table_satisfies_its_equation_and_bracket() {
        let b = Bias::axis(2, 0.5).unwrap();
        let omega = EnvironmentOracle::new(4, 0.8).unwrap();
        let t = green_exact(&omega, &b, 0.9, &Vertex::origin(2), &Ball::around_origin(2, 12), f64::INFINITY)
            .unwrap();
        assert!(t.residual < 1e-10);
        assert!(t.values.iter().zip(&t.upper).all(|(l, u)| *l >= 0.0 && l <= u));
        assert!(t.value(&Vertex::origin(2)) >= 1.0);
        assert_eq!(t.value(&v2(40, 0)), 0.0);
        let narrow = green_exact(&omega, &b, 0.9, &Vertex::origin(2), &Ball::around_origin(2, 4), 1e-12);
        assert!(matches!(narrow, Err(Error::BracketTooWide { .. })));
    }

    #[test]
    fn stopped_green_edge_cases() {
        let b = Bias::axis(2, 0.5).unwrap();
        let omega = EnvironmentOracle::new(8, 0.8).unwrap();
        let bx = Ball::around_origin(2, 8);
        let o = Vertex::origin(2);
        assert_eq!(green_stopped(&omega, &b, 0.9, &o, &o, &[o], &bx).unwrap(), 1.0);
        // Z outside the box region the walk can reach changes nothing.
        let far = v2(30, 30);
        let g = green_stopped(&omega, &b, 0.9, &o, &o, &[far], &bx).unwrap();
        let t = green_exact(&omega, &b, 0.9, &o, &bx, f64::INFINITY).unwrap();
        assert_relative_eq!(g, t.value(&o), max_relative = 1e-12);
    }

    #[test]
    fn reversibility_and_factorization() {
        let b = Bias::axis(2, 0.5).unwrap();
        let omega = EnvironmentOracle::new(21, 0.85).unwrap();
        let bx = Ball::around_origin(2, 7);
        let o = Vertex::origin(2);
        let z = v2(2, 1);
        let col_z = green_exact(&omega, &b, 0.9, &z, &bx, f64::INFINITY).unwrap();
        let col_o = green_exact(&omega, &b, 0.9, &o, &bx, f64::INFINITY).unwrap();
        let pi_o = crate::kernel::pi(&omega, &o, &b).unwrap();
        let pi_z = crate::kernel::pi(&omega, &z, &b).unwrap();
        let (lhs, rhs) = (col_z.value(&o) * pi_o, col_o.value(&z) * pi_z);
        assert!((lhs - rhs).abs() <= 1e-8 * lhs.abs().max(1e-300));
        let (reg, h) = hitting_discounted(&omega, &b, 0.9, &z, &bx).unwrap();
        let h0 = h[reg.index_of(&o).unwrap()];
        let fact = h0 * col_z.value(&z);
        assert!((fact - col_z.value(&o)).abs() <= 1e-8 * fact.abs().max(1e-300));
    }

    #[test]
    fn monotone_in_delta() {
        let b = Bias::axis(2, 0.5).unwrap();
        let omega = EnvironmentOracle::new(5, 0.8).unwrap();
        let bx = Ball::around_origin(2, 6);
        let o = Vertex::origin(2);
        let mut prev: Option<GreenTable> = None;
        for delta in [0.1, 0.5, 0.9, 0.99] {
            let t = green_exact(&omega, &b, delta, &o, &bx, f64::INFINITY).unwrap();
            if let Some(p) = &prev {
                assert!(t.values.iter().zip(&p.values).all(|(a, b)| *a >= b - 1e-14));
            }
            prev = Some(t);
        }
    }

    #[test]
    fn perturbation_series() {
        let b = Bias::axis(2, 0.5).unwrap();
        let bx = Ball::around_origin(2, 5);
        let full = EdgeConfig::full_lattice();
        let e = Edge::at(Vertex::origin(2), Dir::new(0, true));
        let cut = apply_surgery(&full, &SurgerySpec::all_closed([e])).unwrap();
        let p = FiniteChain::on_ball(&full, &b, &bx, Boundary::KilledOnExit).unwrap().dense();
        let pp = FiniteChain::on_ball(&cut, &b, &bx, Boundary::KilledOnExit).unwrap().dense();
        let same = perturb_expand(&p, &p, 0.9, 3, 0).unwrap();
        assert!(same.terms[1..].iter().all(|t| t.amax() == 0.0));
        for n in [0, 3] {
            let ex = perturb_expand(&p, &pp, 0.9, n, 0).unwrap();
            assert!(ex.reconstruction_error() < 1e-12);
        }
        let ex = perturb_expand(&p, &pp, 0.9, 3, 0).unwrap();
        let target = ex.exact[0];
        // Single steps can overshoot (odd terms carry the sign of the
        // perturbation); every two steps the gap contracts.
        let gaps: Vec<f64> = (0..=3).map(|k| (ex.partial_sum(k)[0] - target).abs()).collect();
        assert!(gaps[2] < gaps[0] && gaps[3] < gaps[1], "{gaps:?}");
        assert!(gaps[3] < 0.1 * gaps[0]);
    }

    #[test]
    fn csv_output_has_header_and_rows() {
        let b = Bias::axis(2, 0.5).unwrap();
        let t = green_exact(&EnvironmentOracle::full(), &b, 0.5, &Vertex::origin(2), &Ball::around_origin(2, 2), 1.0)
            .unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x0,x1,value,upper\n"));
        assert_eq!(text.lines().count(), 14);
        assert_eq!(t.sidecar()["method"], "exact-solve");
    }
}
