//! Local law of the biased walk: conductances, transition rows, π, the
//! configuration drifts d_A and the model constants κ₀, κ₁, η, ρ.

use serde::{Deserialize, Serialize};

use crate::environment::EdgeStates;
use crate::error::{Error, Result};
use crate::lattice::{ball_size, rho_d, Dir, DirSet, Edge, Vertex, MAX_DIM};

/// Bias ℓ = λ ℓ̂.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBias", into = "RawBias")]
pub struct Bias {
    pub lambda: f64,
    pub direction: Vec<f64>,
    /// e^{(1)}, …, e^{(d)}: one direction per axis with e·ℓ̂ ≥ 0, sorted by
    /// decreasing projection.
    pub alignment: Vec<Dir>,
    weights: [f64; 2 * MAX_DIM],
}

impl Bias {
    /// Normalizes `direction` to unit Euclidean length.
    pub fn new(lambda: f64, direction: &[f64]) -> Result<Self> {
        let d = direction.len();
        if !(2..=MAX_DIM).contains(&d) {
            return Err(Error::invalid(format!("dimension {d} outside 2..={MAX_DIM}")));
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::invalid(format!("bias strength must be positive, got {lambda}")));
        }
        let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::invalid("bias direction must be a finite nonzero vector"));
        }
        let direction: Vec<f64> = direction.iter().map(|x| x / norm).collect();
        let mut alignment: Vec<Dir> = (0..d)
            .map(|axis| Dir::new(axis, direction[axis] >= 0.0))
            .collect();
        alignment.sort_by(|a, b| b.dot(&direction).total_cmp(&a.dot(&direction)));
        let mut weights = [0.0; 2 * MAX_DIM];
        for e in Dir::all(d) {
            weights[e.index()] = (lambda * e.dot(&direction)).exp();
        }
        Ok(Bias { lambda, direction, alignment, weights })
    }

    /// λ along the first axis.
    pub fn axis(d: usize, lambda: f64) -> Result<Self> {
        let mut dir = vec![0.0; d];
        dir[0] = 1.0;
        Bias::new(lambda, &dir)
    }

    pub fn dim(&self) -> usize {
        self.direction.len()
    }

    /// exp(λ e·ℓ̂): the conductance of [x, x+e] relative to exp(2λ x·ℓ̂).
    #[inline]
    pub fn weight(&self, e: Dir) -> f64 {
        self.weights[e.index()]
    }

    /// λ x·ℓ̂.
    #[inline]
    pub fn potential(&self, x: &Vertex) -> f64 {
        self.lambda * x.dot(&self.direction)
    }

    pub fn projection(&self, v: &[f64]) -> f64 {
        v.iter().zip(&self.direction).map(|(a, b)| a * b).sum()
    }
}

#[derive(Serialize, Deserialize)]
struct RawBias {
    lambda: f64,
    direction: Vec<f64>,
}

impl TryFrom<RawBias> for Bias {
    type Error = Error;

    fn try_from(raw: RawBias) -> Result<Self> {
        Bias::new(raw.lambda, &raw.direction)
    }
}

impl From<Bias> for RawBias {
    fn from(b: Bias) -> Self {
        RawBias { lambda: b.lambda, direction: b.direction }
    }
}

/// c(e) = exp((x+y)·λℓ̂) for e = [x, y].
pub fn conductance(e: &Edge, bias: &Bias) -> f64 {
    let (x, y) = e.endpoints();
    (bias.potential(&x) + bias.potential(&y)).exp()
}

/// One row of the transition matrix, indexed by direction, plus the self-loop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalKernel {
    dim: u8,
    probs: [f64; 2 * MAX_DIM],
    self_loop: f64,
}

impl LocalKernel {
    /// The row of a vertex whose closed incident directions are `closed`.
    pub fn from_closed(closed: DirSet, bias: &Bias) -> Self {
        let d = bias.dim();
        let mut probs = [0.0; 2 * MAX_DIM];
        let mut total = 0.0;
        for e in Dir::all(d) {
            if !closed.contains(e) {
                probs[e.index()] = bias.weight(e);
                total += probs[e.index()];
            }
        }
        if total == 0.0 {
            return LocalKernel { dim: d as u8, probs, self_loop: 1.0 };
        }
        for p in probs.iter_mut() {
            *p /= total;
        }
        LocalKernel { dim: d as u8, probs, self_loop: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn prob(&self, e: Dir) -> f64 {
        self.probs[e.index()]
    }

    pub fn self_loop(&self) -> f64 {
        self.self_loop
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum::<f64>() + self.self_loop
    }

    /// ∑_e p(e) e.
    pub fn drift(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        for e in Dir::all(self.dim()) {
            v[e.axis()] += e.sign() as f64 * self.prob(e);
        }
        v
    }

    pub fn open_dirs(&self) -> impl Iterator<Item = Dir> + '_ {
        Dir::all(self.dim()).filter(|e| self.prob(*e) > 0.0)
    }
}

/// p^ω(x, ·).
pub fn transition_row(omega: &impl EdgeStates, x: &Vertex, bias: &Bias) -> Result<LocalKernel> {
    Ok(LocalKernel::from_closed(crate::environment::config_of(omega, x)?, bias))
}

/// ∑_{e ∉ A} exp(λ e·ℓ̂), the local part of π.
pub fn open_weight(closed: DirSet, bias: &Bias) -> f64 {
    Dir::all(bias.dim())
        .filter(|e| !closed.contains(*e))
        .map(|e| bias.weight(e))
        .sum()
}

/// π^ω(x) = ∑_{y∼x} c^ω(x, y).
pub fn pi(omega: &impl EdgeStates, x: &Vertex, bias: &Bias) -> Result<f64> {
    let closed = crate::environment::config_of(omega, x)?;
    Ok((2.0 * bias.potential(x)).exp() * open_weight(closed, bias))
}

/// d_A = ∑_e p^A(e) e.
pub fn local_drift(closed: DirSet, bias: &Bias) -> Result<Vec<f64>> {
    if closed.is_full(bias.dim()) {
        return Err(Error::invalid("no drift is defined when every incident edge is closed"));
    }
    Ok(LocalKernel::from_closed(closed, bias).drift())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConstants {
    pub kappa0: f64,
    pub kappa1: f64,
    pub eta: u32,
    pub rho: f64,
}

const ETA_CAP: u32 = 1_000_000;

/// κ₀, κ₁ by enumerating every admissible configuration at a vertex, η by
/// integer scan up to `r_max` followed by a tail check.
pub fn constants(bias: &Bias, d: usize, r_max: usize) -> Result<ModelConstants> {
    if d != bias.dim() {
        return Err(Error::invalid("dimension does not match the bias"));
    }
    if r_max < 1 {
        return Err(Error::invalid("r_max must be at least 1"));
    }
    let mut kappa0 = f64::INFINITY;
    let mut s_min = f64::INFINITY;
    let mut s_max: f64 = 0.0;
    for closed in DirSet::proper_subsets(d) {
        let row = LocalKernel::from_closed(closed, bias);
        for e in row.open_dirs() {
            kappa0 = kappa0.min(row.prob(e));
        }
        let s = open_weight(closed, bias);
        s_min = s_min.min(s);
        s_max = s_max.max(s);
    }
    let kappa1 = s_max.max(1.0 / s_min);
    let rho = rho_d(d, r_max);
    let base = (3.0 * kappa1 * kappa1).ln();
    let holds = |eta: u32| -> bool {
        let slope = 2.0 * bias.lambda * (eta as f64 - 1.0);
        let finite = (1..=r_max).all(|n| slope * n as f64 >= base + (ball_size(d, n) as f64).ln());
        // Beyond r_max use |B(0,n)| ≤ ρ n^d: slope·n − d ln n is increasing
        // once slope > d/n, so checking n = r_max suffices.
        let n = r_max as f64;
        let tail = slope > d as f64 / n && slope * n >= base + rho.ln() + d as f64 * n.ln();
        finite && tail
    };
    let mut eta = 1;
    while !holds(eta) {
        eta += 1;
        if eta > ETA_CAP {
            return Err(Error::invalid("no admissible η below the scan cap"));
        }
    }
    Ok(ModelConstants { kappa0, kappa1, eta, rho })
}
