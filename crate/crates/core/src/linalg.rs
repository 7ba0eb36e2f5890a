//! Linear solves for Green functions and network potentials.
//!
//! Reversible sub-stochastic kernels are symmetrized with √π and solved by
//! Jacobi-preconditioned conjugate gradients; the answer is then polished
//! by iterative refinement against the unsymmetrized residual, since π spans
//! many orders of magnitude across a box and an accurate symmetric solve
//! can still leave a large relative error far behind the drift.
//! Non-reversible kernels are small and go through dense LU.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Square sparse matrix stored as row lists.
#[derive(Clone, Debug, Default)]
pub struct SparseRows {
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn new(n: usize) -> Self {
        SparseRows { rows: vec![Vec::new(); n] }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i].iter().filter(|(k, _)| *k == j).map(|(_, v)| v).sum()
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.rows) {
            *o = row.iter().map(|(j, v)| v * x[*j]).sum();
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for (j, v) in row {
                m[(i, *j)] += v;
            }
        }
        m
    }
}

/// A sub-stochastic kernel P with P(x,y) > 0 ⇔ P(y,x) > 0 and a reversing
/// measure π given through h = ln √π (up to an additive constant).
#[derive(Clone, Debug)]
pub struct ReversibleKernel {
    pub p: SparseRows,
    pub log_sqrt_pi: Vec<f64>,
}

impl ReversibleKernel {
    pub fn n(&self) -> usize {
        self.p.n()
    }

    /// S = D^{1/2} P D^{-1/2}, computed as √(P(x,y)P(y,x)) so no π enters.
    fn symmetrized(&self) -> SparseRows {
        let mut s = SparseRows::new(self.n());
        for (i, row) in self.p.rows.iter().enumerate() {
            for (j, v) in row {
                let back = self.p.get(*j, i);
                s.rows[i].push((*j, (v * back).sqrt()));
            }
        }
        s
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    /// Target max-norm of b − (I − δP)g, relative to max |b|.
    pub tol: f64,
    pub max_refinements: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-12, max_refinements: 30 }
    }
}

/// Jacobi-preconditioned CG for a symmetric positive-definite operator.
/// Stops when ‖r‖₂ ≤ rtol ‖b‖₂.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    diag: &[f64],
    b: &[f64],
    rtol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(x);
    }
    if diag.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::NonConvergence("nonpositive diagonal in SPD solve".into()));
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for _ in 0..max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NonConvergence(
                "operator is not positive definite (a component without exit at δ = 1?)".into(),
            ));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm2(&r) <= rtol * bnorm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NonConvergence(format!(
        "CG stalled after {max_iter} iterations, relative residual {:.3e}",
        norm2(&r) / bnorm
    )))
}

/// Solve (I − δP) g = b for a reversible kernel, δ ∈ [0, 1].
pub fn resolvent_solve(
    k: &ReversibleKernel,
    delta: f64,
    b: &[f64],
    opts: SolveOptions,
) -> Result<Vec<f64>> {
    let n = k.n();
    if b.len() != n {
        return Err(Error::invalid("right-hand side length mismatch"));
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::invalid(format!("δ = {delta} outside [0, 1]")));
    }
    let s_mat = k.symmetrized();
    let diag: Vec<f64> = (0..n).map(|i| 1.0 - delta * s_mat.get(i, i)).collect();
    let (lo, hi) = k
        .log_sqrt_pi
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, c), h| (a.min(*h), c.max(*h)));
    let mid = if n == 0 { 0.0 } else { 0.5 * (lo + hi) };
    let scale: Vec<f64> = k.log_sqrt_pi.iter().map(|h| (h - mid).exp()).collect();
    let apply = |x: &[f64], out: &mut [f64]| {
        s_mat.matvec(x, out);
        for i in 0..x.len() {
            out[i] = x[i] - delta * out[i];
        }
    };
    let bmax = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut g = vec![0.0; n];
    let mut r = b.to_vec();
    let mut pg = vec![0.0; n];
    for _ in 0..=opts.max_refinements {
        let rmax = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if rmax <= opts.tol * bmax.max(f64::MIN_POSITIVE) {
            return Ok(g);
        }
        let rhs: Vec<f64> = r.iter().zip(&scale).map(|(r, s)| r * s).collect();
        let w = conjugate_gradient(apply, &diag, &rhs, 1e-13, 50 * n + 1000)?;
        for i in 0..n {
            g[i] += w[i] / scale[i];
        }
        k.p.matvec(&g, &mut pg);
        for i in 0..n {
            r[i] = b[i] - (g[i] - delta * pg[i]);
        }
    }
    let rmax = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if rmax <= 1e3 * opts.tol * bmax {
        return Ok(g);
    }
    Err(Error::NonConvergence(format!(
        "iterative refinement left residual {rmax:.3e} (target {:.1e})",
        opts.tol * bmax
    )))
}

/// (I − δP)^{-1} by dense LU.
pub fn dense_resolvent(p: &DMatrix<f64>, delta: f64) -> Result<DMatrix<f64>> {
    let n = p.nrows();
    let a = DMatrix::identity(n, n) - p * delta;
    a.lu()
        .try_inverse()
        .ok_or_else(|| Error::NonConvergence("I − δP is singular".into()))
}

/// Max-norm of b − (I − δP)g.
pub fn resolvent_residual(p: &SparseRows, delta: f64, g: &[f64], b: &[f64]) -> f64 {
    let mut pg = vec![0.0; g.len()];
    p.matvec(g, &mut pg);
    (0..g.len())
        .map(|i| (b[i] - g[i] + delta * pg[i]).abs())
        .fold(0.0, f64::max)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
