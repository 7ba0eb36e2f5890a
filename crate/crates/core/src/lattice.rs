//! Geometry of the hypercubic lattice Z^d: vertices, unit directions,
//! canonical edges, L¹ balls and their boundaries.
//!
//! Every ball in this crate is a graph-distance (L¹) ball. Vertices store
//! their coordinates inline so they are `Copy` and cheap to hash, which
//! matters for the walk and BFS hot paths.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported ambient dimension.
pub const MAX_DIM: usize = 8;

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Vertex {
    coords: [i32; MAX_DIM],
    dim: u8,
}

impl Vertex {
    pub fn new(coords: &[i32]) -> Result<Self> {
        let d = coords.len();
        if !(2..=MAX_DIM).contains(&d) {
            return Err(Error::invalid(format!(
                "dimension must lie in [2, {MAX_DIM}], got {d}"
            )));
        }
        let mut c = [0; MAX_DIM];
        c[..d].copy_from_slice(coords);
        Ok(Vertex { coords: c, dim: d as u8 })
    }

    pub fn origin(d: usize) -> Self {
        assert!((2..=MAX_DIM).contains(&d), "unsupported dimension {d}");
        Vertex { coords: [0; MAX_DIM], dim: d as u8 }
    }

    /// `k` times the unit vector of `dir`.
    pub fn along(d: usize, dir: Dir, k: i32) -> Self {
        Vertex::origin(d).shift(dir, k)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn coords(&self) -> &[i32] {
        &self.coords[..self.dim as usize]
    }

    #[inline]
    pub fn coord(&self, axis: usize) -> i32 {
        self.coords[axis]
    }

    #[inline]
    pub fn step(&self, dir: Dir) -> Self {
        self.shift(dir, 1)
    }

    #[inline]
    pub fn shift(&self, dir: Dir, k: i32) -> Self {
        let mut v = *self;
        v.coords[dir.axis()] += dir.sign() * k;
        v
    }

    pub fn add(&self, other: &Vertex) -> Self {
        let mut v = *self;
        for i in 0..self.dim() {
            v.coords[i] += other.coords[i];
        }
        v
    }

    pub fn sub(&self, other: &Vertex) -> Self {
        let mut v = *self;
        for i in 0..self.dim() {
            v.coords[i] -= other.coords[i];
        }
        v
    }

    pub fn l1_norm(&self) -> u64 {
        self.coords().iter().map(|c| c.unsigned_abs() as u64).sum()
    }

    pub fn l1_dist(&self, other: &Vertex) -> u64 {
        self.coords()
            .iter()
            .zip(other.coords())
            .map(|(a, b)| (*a as i64 - *b as i64).unsigned_abs())
            .sum()
    }

    /// Euclidean inner product with a real vector of the same dimension.
    #[inline]
    pub fn dot(&self, v: &[f64]) -> f64 {
        self.coords().iter().zip(v).map(|(c, x)| *c as f64 * x).sum()
    }

    /// The unit direction pointing from `self` to an adjacent `other`.
    pub fn dir_to(&self, other: &Vertex) -> Option<Dir> {
        let diff = other.sub(self);
        if diff.l1_norm() != 1 {
            return None;
        }
        let axis = diff.coords().iter().position(|c| *c != 0)?;
        Some(Dir::new(axis, diff.coords[axis] > 0))
    }

    pub fn neighbours(&self) -> impl Iterator<Item = Vertex> + '_ {
        Dir::all(self.dim()).map(move |e| self.step(e))
    }
}

impl fmt::Debug for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.coords())
    }
}

impl PartialOrd for Vertex {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Vertex {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.dim
            .cmp(&other.dim)
            .then_with(|| self.coords().cmp(other.coords()))
    }
}

impl Serialize for Vertex {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.coords().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vertex {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let c = Vec::<i32>::deserialize(d)?;
        Vertex::new(&c).map_err(serde::de::Error::custom)
    }
}

/// A unit vector ±e_i of Z^d, i.e. an element of ν.
///
/// Encoded as `2 * axis + (sign < 0)`, so `+e_1, -e_1, +e_2, ...`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Dir(u8);

impl Dir {
    pub fn new(axis: usize, positive: bool) -> Self {
        Dir((2 * axis + usize::from(!positive)) as u8)
    }

    pub fn from_index(i: usize) -> Self {
        Dir(i as u8)
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    #[inline]
    pub fn axis(self) -> usize {
        (self.0 / 2) as usize
    }

    #[inline]
    pub fn sign(self) -> i32 {
        if self.0 % 2 == 0 {
            1
        } else {
            -1
        }
    }

    #[inline]
    pub fn opposite(self) -> Self {
        Dir(self.0 ^ 1)
    }

    /// All 2d directions in index order.
    pub fn all(d: usize) -> impl Iterator<Item = Dir> + Clone {
        (0..2 * d).map(Dir::from_index)
    }

    pub fn as_vector(self, d: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[self.axis()] = self.sign() as f64;
        v
    }

    /// `e · v` for a real vector `v`.
    #[inline]
    pub fn dot(self, v: &[f64]) -> f64 {
        self.sign() as f64 * v[self.axis()]
    }
}

impl fmt::Debug for Dir {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}e{}", if self.sign() > 0 { '+' } else { '-' }, self.axis() + 1)
    }
}

/// A subset of ν stored as a bitmask over direction indices.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DirSet(pub u32);

impl DirSet {
    pub const EMPTY: DirSet = DirSet(0);

    pub fn full(d: usize) -> Self {
        DirSet((1u32 << (2 * d)) - 1)
    }

    pub fn single(e: Dir) -> Self {
        DirSet(1 << e.index())
    }

    pub fn from_dirs(dirs: impl IntoIterator<Item = Dir>) -> Self {
        dirs.into_iter().fold(DirSet::EMPTY, |s, e| s.with(e))
    }

    #[inline]
    pub fn contains(self, e: Dir) -> bool {
        self.0 >> e.index() & 1 == 1
    }

    pub fn with(self, e: Dir) -> Self {
        DirSet(self.0 | 1 << e.index())
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_full(self, d: usize) -> bool {
        self == DirSet::full(d)
    }

    pub fn iter(self, d: usize) -> impl Iterator<Item = Dir> {
        Dir::all(d).filter(move |e| self.contains(*e))
    }

    /// Every subset of ν except ν itself, in increasing mask order.
    pub fn proper_subsets(d: usize) -> impl Iterator<Item = DirSet> {
        (0..DirSet::full(d).0).map(DirSet)
    }
}

impl fmt::Debug for DirSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dirs: Vec<Dir> = (0..32)
            .filter(|i| self.0 >> i & 1 == 1)
            .map(Dir::from_index)
            .collect();
        write!(f, "{dirs:?}")
    }
}

/// An undirected nearest-neighbour edge in canonical form: it joins `base`
/// and `base + e_axis`, so `base` is the lexicographically smaller endpoint.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub base: Vertex,
    pub axis: u8,
}

impl Edge {
    /// The edge `[x, x + e]`.
    #[inline]
    pub fn at(x: Vertex, e: Dir) -> Self {
        if e.sign() > 0 {
            Edge { base: x, axis: e.axis() as u8 }
        } else {
            Edge { base: x.step(e), axis: e.axis() as u8 }
        }
    }

    pub fn between(x: Vertex, y: Vertex) -> Result<Self> {
        x.dir_to(&y)
            .map(|e| Edge::at(x, e))
            .ok_or_else(|| Error::invalid(format!("{x:?} and {y:?} are not adjacent")))
    }

    pub fn endpoints(&self) -> (Vertex, Vertex) {
        (self.base, self.base.step(Dir::new(self.axis as usize, true)))
    }

    pub fn canonical(self) -> Self {
        self
    }

    pub fn touches(&self, v: &Vertex) -> bool {
        let (a, b) = self.endpoints();
        a == *v || b == *v
    }
}

impl fmt::Debug for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (a, b) = self.endpoints();
        write!(f, "[{a:?},{b:?}]")
    }
}

/// The L¹ ball B(center, radius).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vertex,
    pub radius: u32,
}

impl Ball {
    pub fn new(center: Vertex, radius: i64) -> Result<Self> {
        if radius < 0 {
            return Err(Error::invalid(format!("negative radius {radius}")));
        }
        Ok(Ball { center, radius: radius as u32 })
    }

    pub fn around_origin(d: usize, radius: u32) -> Self {
        Ball { center: Vertex::origin(d), radius }
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    #[inline]
    pub fn contains(&self, v: &Vertex) -> bool {
        self.center.l1_dist(v) <= self.radius as u64
    }

    pub fn on_sphere(&self, v: &Vertex) -> bool {
        self.center.l1_dist(v) == self.radius as u64
    }

    /// Vertices ordered by distance to the centre, then lexicographically.
    pub fn vertices(&self) -> Vec<Vertex> {
        (0..=self.radius)
            .flat_map(|k| sphere(&self.center, k))
            .collect()
    }

    /// E(B): edges with both endpoints in the ball, sorted.
    pub fn edges(&self) -> Vec<Edge> {
        let mut out = Vec::new();
        for v in self.vertices() {
            for axis in 0..self.dim() {
                let w = v.step(Dir::new(axis, true));
                if self.contains(&w) {
                    out.push(Edge { base: v, axis: axis as u8 });
                }
            }
        }
        out.sort();
        out
    }

    pub fn grown(&self, by: u32) -> Self {
        Ball { center: self.center, radius: self.radius + by }
    }
}

/// The L¹ sphere {y : |y - center|₁ = r}, lexicographically ordered.
pub fn sphere(center: &Vertex, r: u32) -> Vec<Vertex> {
    let d = center.dim();
    let mut out = Vec::new();
    let mut cur = vec![0i32; d];
    fill_sphere(&mut cur, 0, r as i32, &mut out, center);
    out
}

fn fill_sphere(cur: &mut [i32], i: usize, left: i32, out: &mut Vec<Vertex>, center: &Vertex) {
    let d = cur.len();
    if i == d - 1 {
        for c in if left == 0 { vec![0] } else { vec![-left, left] } {
            cur[i] = c;
            let off = Vertex::new(cur).expect("dimension already validated");
            out.push(center.add(&off));
        }
        return;
    }
    for c in -left..=left {
        cur[i] = c;
        fill_sphere(cur, i + 1, left - c.abs(), out, center);
    }
}

/// B(center, r) as an explicit vertex list.
pub fn ball(center: &Vertex, r: i64) -> Result<Vec<Vertex>> {
    Ok(Ball::new(*center, r)?.vertices())
}

/// ∂V: vertices of V with at least one neighbour outside V.
pub fn boundary(v: &HashSet<Vertex>) -> Vec<Vertex> {
    let mut out: Vec<Vertex> = v
        .iter()
        .filter(|x| x.neighbours().any(|y| !v.contains(&y)))
        .copied()
        .collect();
    out.sort();
    out
}

/// ∂_E V: edges with exactly one endpoint in V.
pub fn edge_boundary(v: &HashSet<Vertex>) -> Vec<Edge> {
    let mut out: Vec<Edge> = v
        .iter()
        .flat_map(|x| Dir::all(x.dim()).map(move |e| (x, e)))
        .filter(|(x, e)| !v.contains(&x.step(*e)))
        .map(|(x, e)| Edge::at(*x, e))
        .collect();
    out.sort();
    out
}

/// E(V): edges with both endpoints in V.
pub fn inner_edges(v: &HashSet<Vertex>) -> Vec<Edge> {
    let mut out: Vec<Edge> = v
        .iter()
        .flat_map(|x| (0..x.dim()).map(move |a| (x, Dir::new(a, true))))
        .filter(|(x, e)| v.contains(&x.step(*e)))
        .map(|(x, e)| Edge::at(*x, e))
        .collect();
    out.sort();
    out
}

/// Number of lattice points at L¹ distance exactly `s` from the origin,
/// counted by recursion over the first coordinate.
fn sphere_counts(d: usize, s_max: usize) -> Vec<u128> {
    // counts[k][s] for dimension k+1
    let mut prev: Vec<u128> = (0..=s_max).map(|s| if s == 0 { 1 } else { 2 }).collect();
    for _ in 1..d {
        let cur: Vec<u128> = (0..=s_max)
            .map(|s| {
                (-(s as i64)..=s as i64)
                    .map(|c| prev[s - c.unsigned_abs() as usize])
                    .sum()
            })
            .collect();
        prev = cur;
    }
    prev
}

/// |B(0, r)| in dimension d.
pub fn ball_size(d: usize, r: usize) -> u128 {
    sphere_counts(d, r).iter().sum()
}

/// |∂B(0, r)| in dimension d (the L¹ sphere for r ≥ 1).
pub fn sphere_size(d: usize, r: usize) -> u128 {
    sphere_counts(d, r)[r]
}

/// The smallest ρ with |B(x,r)| ≤ ρ r^d and |∂B(x,r)| ≤ ρ r^{d-1} for all
/// 1 ≤ r ≤ r_max.
///
/// The ratio |B(0,r)|/r^d decreases in r, so the maximum sits at small radii
/// and the enumerated value is valid beyond r_max as well.
pub fn rho_d(d: usize, r_max: usize) -> f64 {
    let counts = sphere_counts(d, r_max.max(1));
    let mut cum = 0u128;
    let mut rho = 0.0f64;
    for (r, c) in counts.iter().enumerate() {
        cum += c;
        if r == 0 {
            continue;
        }
        let rf = r as f64;
        rho = rho
            .max(cum as f64 / rf.powi(d as i32))
            .max(*c as f64 / rf.powi(d as i32 - 1));
    }
    rho
}

/// BFS distance from x to y using open edges with both endpoints in
/// `search`. `None` stands for d(x,y) = ∞.
pub fn graph_distance(
    open: impl Fn(&Edge) -> bool,
    x: &Vertex,
    y: &Vertex,
    search: &Ball,
) -> Option<u64> {
    if !search.contains(x) || !search.contains(y) {
        return None;
    }
    if x == y {
        return Some(0);
    }
    let mut dist: HashMap<Vertex, u64> = HashMap::new();
    dist.insert(*x, 0);
    let mut queue = VecDeque::from([*x]);
    while let Some(u) = queue.pop_front() {
        let du = dist[&u];
        for e in Dir::all(u.dim()) {
            let w = u.step(e);
            if !search.contains(&w) || dist.contains_key(&w) || !open(&Edge::at(u, e)) {
                continue;
            }
            if w == *y {
                return Some(du + 1);
            }
            dist.insert(w, du + 1);
            queue.push_back(w);
        }
    }
    None
}

/// A finite, ordered vertex set with O(1) index lookup; the unknowns of
/// every linear solve in the crate live on one of these.
#[derive(Clone, Debug)]
pub struct Region {
    vertices: Vec<Vertex>,
    index: HashMap<Vertex, usize>,
}

impl Region {
    pub fn from_vertices(vertices: Vec<Vertex>) -> Self {
        let index = vertices.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        Region { vertices, index }
    }

    pub fn from_ball(b: &Ball) -> Self {
        Region::from_vertices(b.vertices())
    }

    /// The axis-aligned box ∏ [lo_i, hi_i].
    pub fn cuboid(lo: &[i32], hi: &[i32]) -> Result<Self> {
        if lo.len() != hi.len() || lo.iter().zip(hi).any(|(a, b)| a > b) {
            return Err(Error::invalid("cuboid corners are inconsistent"));
        }
        let d = lo.len();
        let mut out = Vec::new();
        let mut cur = lo.to_vec();
        loop {
            out.push(Vertex::new(&cur)?);
            let mut i = 0;
            loop {
                if i == d {
                    return Ok(Region::from_vertices(out));
                }
                if cur[i] < hi[i] {
                    cur[i] += 1;
                    break;
                }
                cur[i] = lo[i];
                i += 1;
            }
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    #[inline]
    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    #[inline]
    pub fn index_of(&self, v: &Vertex) -> Option<usize> {
        self.index.get(v).copied()
    }

    pub fn contains(&self, v: &Vertex) -> bool {
        self.index.contains_key(v)
    }

    pub fn vertex(&self, i: usize) -> Vertex {
        self.vertices[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v2(a: i32, b: i32) -> Vertex {
        Vertex::new(&[a, b]).unwrap()
    }

    fn set(vs: Vec<Vertex>) -> HashSet<Vertex> {
        vs.into_iter().collect()
    }

    #[test]
    fn ball_sizes_match_enumeration() {
        let o = Vertex::origin(2);
        assert_eq!(ball(&o, 0).unwrap(), vec![o]);
        assert_eq!(ball(&o, 1).unwrap().len(), 5);
        assert_eq!(ball(&o, 2).unwrap().len(), 13);
        for r in 0..12 {
            assert_eq!(ball(&o, r).unwrap().len() as i64, 2 * r * r + 2 * r + 1);
            assert_eq!(ball_size(2, r as usize), (2 * r * r + 2 * r + 1) as u128);
        }
        assert!(ball(&o, -1).is_err());
        let o3 = Vertex::origin(3);
        for r in 0..6u32 {
            assert_eq!(ball(&o3, r as i64).unwrap().len() as u128, ball_size(3, r as usize));
        }
    }

    #[test]
    fn ball_is_translation_invariant() {
        let x = v2(7, -3);
        for r in 0..6 {
            assert_eq!(ball(&x, r).unwrap().len(), ball(&Vertex::origin(2), r).unwrap().len());
        }
    }

    #[test]
    fn boundaries_of_singleton_and_unit_ball() {
        let o = Vertex::origin(2);
        let single = set(vec![o]);
        assert_eq!(boundary(&single), vec![o]);
        assert_eq!(edge_boundary(&single).len(), 4);
        assert!(inner_edges(&single).is_empty());

        let b1 = set(ball(&o, 1).unwrap());
        let db = boundary(&b1);
        let mut expect: Vec<Vertex> = Dir::all(2).map(|e| o.step(e)).collect();
        expect.sort();
        assert_eq!(db, expect);
        assert_eq!(inner_edges(&b1).len(), 4);

        let b2 = set(ball(&o, 2).unwrap());
        assert_eq!(boundary(&b2).len(), 8);
    }

    #[test]
    fn edge_boundary_and_inner_edges_partition_incident_edges() {
        let o = Vertex::origin(2);
        let shapes = vec![
            set(ball(&o, 2).unwrap()),
            set(vec![o, v2(1, 0), v2(1, 1), v2(3, 3)]),
            set(vec![v2(0, 0), v2(0, 1), v2(0, 2), v2(1, 2)]),
        ];
        for v in shapes {
            let incident: HashSet<Edge> = v
                .iter()
                .flat_map(|x| Dir::all(2).map(move |e| Edge::at(*x, e)))
                .collect();
            let inner: HashSet<Edge> = inner_edges(&v).into_iter().collect();
            let bdry: HashSet<Edge> = edge_boundary(&v).into_iter().collect();
            assert!(inner.is_disjoint(&bdry));
            let union: HashSet<Edge> = inner.union(&bdry).copied().collect();
            assert_eq!(union, incident);
        }
    }

    #[test]
    fn canonical_edges_are_unique() {
        let x = v2(2, 5);
        for e in Dir::all(2) {
            let y = x.step(e);
            assert_eq!(Edge::at(x, e), Edge::at(y, e.opposite()));
            assert_eq!(Edge::between(x, y).unwrap(), Edge::at(x, e));
            assert_eq!(Edge::at(x, e).canonical(), Edge::at(x, e));
            assert!(Edge::at(x, e).touches(&x) && Edge::at(x, e).touches(&y));
        }
        assert!(Edge::between(x, x).is_err());
    }

    #[test]
    fn rho_values() {
        assert_eq!(rho_d(2, 50), 5.0);
        for r in 1..=50usize {
            assert_eq!(sphere_size(2, r), 4 * r as u128);
            assert!(4.0 * r as f64 <= 5.0 * r as f64);
        }
        // d = 3: |B(0,1)| = 7 dominates, spheres 4r² + 2 ≤ 6 r².
        assert_eq!(rho_d(3, 50), 7.0);
        for r in 1..=50usize {
            assert_eq!(sphere_size(3, r), (4 * r * r + 2) as u128);
            assert!((ball_size(3, r) as f64) <= 7.0 * (r as f64).powi(3));
        }
    }

    #[test]
    fn graph_distance_examples() {
        let o = Vertex::origin(2);
        let e1 = Dir::new(0, true);
        let search = Ball::around_origin(2, 6);
        assert_eq!(graph_distance(|_| true, &o, &o.shift(e1, 2), &search), Some(2));
        assert_eq!(graph_distance(|_| false, &o, &o.step(e1), &search), None);
        // Close every edge of B^E(0,1): the star at the origin.
        let closed: HashSet<Edge> = Dir::all(2).map(|e| Edge::at(o, e)).collect();
        let d = graph_distance(
            |e| !closed.contains(e),
            &o.step(e1),
            &o.step(e1.opposite()),
            &search,
        );
        assert_eq!(d, Some(4));
    }

    #[test]
    fn dirset_bookkeeping() {
        let d = 2;
        assert_eq!(DirSet::proper_subsets(d).count(), 15);
        let a = DirSet::from_dirs([Dir::new(0, true), Dir::new(1, false)]);
        assert_eq!(a.len(), 2);
        assert!(a.contains(Dir::new(1, false)));
        assert!(!a.contains(Dir::new(1, true)));
        assert_eq!(a.iter(d).count(), 2);
        assert!(DirSet::full(d).is_full(d));
    }

    #[test]
    fn cuboid_region_indexes_every_vertex() {
        let r = Region::cuboid(&[-2, -1], &[1, 1]).unwrap();
        assert_eq!(r.len(), 12);
        for (i, v) in r.vertices().iter().enumerate() {
            assert_eq!(r.index_of(v), Some(i));
        }
        assert!(!r.contains(&v2(2, 0)));
    }
}
