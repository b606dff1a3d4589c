//! Delzant polytopes: facet data, validation, vertex enumeration and interior
//! lattice grids.
//!
//! A polytope is stored as a list of facets `(h_k, λ_k)` and denotes the open
//! set `Δ = {ξ : ⟨ξ, h_k⟩ − λ_k > 0 for all k}`. The affine functions
//! `ℓ_k(ξ) = ⟨ξ, h_k⟩ − λ_k` are called facet values throughout the crate.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Feasibility tolerance used when deciding whether a candidate vertex lies on
/// the polytope.
pub const VERTEX_TOLERANCE: f64 = 1e-9;

/// Slack applied to the grid margin test so that lattice points whose facet
/// value equals the margin up to rounding are retained.
const GRID_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolytopeError {
    #[error("polytope has no facets")]
    NoFacets,
    #[error("dimension must be positive")]
    ZeroDimension,
    #[error("facet {facet} has a normal of length {found}, expected {expected}")]
    NormalLength {
        facet: usize,
        expected: usize,
        found: usize,
    },
    #[error("polytope is unbounded: recession direction {direction:?}")]
    Unbounded { direction: Vec<i64> },
    #[error("polytope has empty interior")]
    EmptyInterior,
    #[error("point {point:?} is not inside the open polytope (min facet value {min_value:e})")]
    OutsideInterior { point: Vec<f64>, min_value: f64 },
    #[error("interior grid with h = {h} and margin = {margin} is empty; shrink h or the margin")]
    EmptyGrid { h: f64, margin: f64 },
    #[error("grid spacing must be positive and the margin non-negative (h = {h}, margin = {margin})")]
    BadGridParameters { h: f64, margin: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Facet {
    pub normal: Vec<i64>,
    pub offset: f64,
}

/// Facet description of a (candidate) Delzant polytope.
///
/// Construction only checks shapes; use [`DelzantPolytope::validate_delzant`]
/// for the lattice conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolytopeJson", into = "PolytopeJson")]
pub struct DelzantPolytope {
    dim: usize,
    facets: Vec<Facet>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolytopeJson {
    dim: usize,
    facets: Vec<Facet>,
}

impl TryFrom<PolytopeJson> for DelzantPolytope {
    type Error = PolytopeError;

    fn try_from(raw: PolytopeJson) -> Result<Self, Self::Error> {
        DelzantPolytope::new(raw.dim, raw.facets)
    }
}

impl From<DelzantPolytope> for PolytopeJson {
    fn from(p: DelzantPolytope) -> Self {
        PolytopeJson {
            dim: p.dim,
            facets: p.facets,
        }
    }
}

/// A vertex together with the facets active at it.
#[derive(Debug, Clone, PartialEq)]
pub struct Vertex {
    pub point: DVector<f64>,
    pub active: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// A facet normal whose entries share a common factor.
    NonPrimitiveNormal { facet: usize, gcd: i64 },
    /// More than `n` facets meet at the vertex.
    NonSimpleVertex { vertex: Vec<f64>, active_facets: Vec<usize> },
    /// The primitive edge directions at the vertex do not form a lattice basis.
    NonUnimodularVertex {
        vertex: Vec<f64>,
        active_facets: Vec<usize>,
        edges: Vec<Vec<i64>>,
        determinant: i128,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VertexEdges {
    pub vertex: Vec<f64>,
    pub edges: Vec<Vec<i64>>,
    pub determinant: i128,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelzantReport {
    pub pass: bool,
    pub vertex_count: usize,
    pub vertices: Vec<VertexEdges>,
    pub violations: Vec<Violation>,
}

impl DelzantPolytope {
    pub fn new(dim: usize, facets: Vec<Facet>) -> Result<Self, PolytopeError> {
        if dim == 0 {
            return Err(PolytopeError::ZeroDimension);
        }
        if facets.is_empty() {
            return Err(PolytopeError::NoFacets);
        }
        for (k, f) in facets.iter().enumerate() {
            if f.normal.len() != dim {
                return Err(PolytopeError::NormalLength {
                    facet: k,
                    expected: dim,
                    found: f.normal.len(),
                });
            }
        }
        Ok(Self { dim, facets })
    }

    /// Builds a polytope from `(normal, offset)` pairs.
    pub fn from_pairs(dim: usize, pairs: &[(&[i64], f64)]) -> Result<Self, PolytopeError> {
        let facets = pairs
            .iter()
            .map(|(n, o)| Facet {
                normal: n.to_vec(),
                offset: *o,
            })
            .collect();
        Self::new(dim, facets)
    }

    /// The interval `(a, b)` with facets `ξ − a` and `b − ξ`.
    pub fn interval(a: f64, b: f64) -> Self {
        Self::from_pairs(1, &[(&[1], a), (&[-1], -b)]).expect("valid interval")
    }

    /// The unit cube `(0, 1)ⁿ`.
    pub fn unit_cube(dim: usize) -> Self {
        let mut facets = Vec::with_capacity(2 * dim);
        for i in 0..dim {
            let mut e = vec![0; dim];
            e[i] = 1;
            facets.push(Facet {
                normal: e.clone(),
                offset: 0.0,
            });
            e[i] = -1;
            facets.push(Facet {
                normal: e,
                offset: -1.0,
            });
        }
        Self::new(dim, facets).expect("valid cube")
    }

    /// The standard simplex `{ξ_i > 0, Σ ξ_i < 1}`.
    pub fn standard_simplex(dim: usize) -> Self {
        let mut facets = Vec::with_capacity(dim + 1);
        for i in 0..dim {
            let mut e = vec![0; dim];
            e[i] = 1;
            facets.push(Facet {
                normal: e,
                offset: 0.0,
            });
        }
        facets.push(Facet {
            normal: vec![-1; dim],
            offset: -1.0,
        });
        Self::new(dim, facets).expect("valid simplex")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    pub fn normal(&self, k: usize) -> DVector<f64> {
        DVector::from_iterator(self.dim, self.facets[k].normal.iter().map(|&c| c as f64))
    }

    /// `(ℓ_1(ξ), …, ℓ_d(ξ))`.
    pub fn facet_values(&self, xi: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.facets.len(),
            self.facets.iter().map(|f| {
                f.normal
                    .iter()
                    .zip(xi.iter())
                    .map(|(&h, &x)| h as f64 * x)
                    .sum::<f64>()
                    - f.offset
            }),
        )
    }

    pub fn min_facet_value(&self, xi: &DVector<f64>) -> f64 {
        self.facet_values(xi).min()
    }

    pub fn contains_open(&self, xi: &DVector<f64>) -> bool {
        xi.len() == self.dim && self.facet_values(xi).iter().all(|&l| l > 0.0)
    }

    /// Errors unless `xi` lies in the open polytope.
    pub fn require_interior(&self, xi: &DVector<f64>) -> Result<(), PolytopeError> {
        if xi.len() != self.dim {
            return Err(PolytopeError::DimensionMismatch {
                expected: self.dim,
                found: xi.len(),
            });
        }
        let min_value = self.min_facet_value(xi);
        if min_value > 0.0 {
            Ok(())
        } else {
            Err(PolytopeError::OutsideInterior {
                point: xi.iter().copied().collect(),
                min_value,
            })
        }
    }

    /// Exact boundedness test on the integer normals: the recession cone
    /// `{ξ : ⟨ξ, h_k⟩ ≥ 0 ∀k}` must be `{0}`.
    pub fn check_bounded(&self) -> Result<(), PolytopeError> {
        let n = self.dim;
        let normals: Vec<&[i64]> = self.facets.iter().map(|f| f.normal.as_slice()).collect();
        if integer_rank(&normals, n) < n {
            // A nonzero kernel vector is a recession line.
            return Err(PolytopeError::Unbounded {
                direction: kernel_witness(&normals, n),
            });
        }
        // A pointed cone other than {0} has an extreme ray cut out by n − 1
        // independent active constraints.
        for subset in combinations(normals.len(), n - 1) {
            let rows: Vec<&[i64]> = subset.iter().map(|&k| normals[k]).collect();
            let ray = generalized_cross(&rows, n);
            if ray.iter().all(|&c| c == 0) {
                continue;
            }
            for sign in [1i128, -1] {
                let candidate: Vec<i128> = ray.iter().map(|&c| sign * c).collect();
                let feasible = normals.iter().all(|h| {
                    h.iter()
                        .zip(candidate.iter())
                        .map(|(&a, &b)| a as i128 * b)
                        .sum::<i128>()
                        >= 0
                });
                if feasible {
                    return Err(PolytopeError::Unbounded {
                        direction: primitive(&candidate),
                    });
                }
            }
        }
        Ok(())
    }

    /// Vertices found by intersecting every `n`-subset of facets. Points where
    /// more than `n` facets meet are merged, with all active facets recorded.
    pub fn vertices(&self) -> Result<Vec<Vertex>, PolytopeError> {
        self.check_bounded()?;
        let n = self.dim;
        let mut found: Vec<Vertex> = Vec::new();
        for subset in combinations(self.facets.len(), n) {
            let a = DMatrix::from_fn(n, n, |r, c| self.facets[subset[r]].normal[c] as f64);
            let b = DVector::from_iterator(n, subset.iter().map(|&k| self.facets[k].offset));
            let Some(point) = a.lu().solve(&b) else {
                continue;
            };
            let values = self.facet_values(&point);
            let scale = 1.0 + point.amax();
            if values.iter().any(|&l| l < -VERTEX_TOLERANCE * scale) {
                continue;
            }
            if found
                .iter()
                .any(|v| (&v.point - &point).amax() <= VERTEX_TOLERANCE * scale)
            {
                continue;
            }
            let active = values
                .iter()
                .enumerate()
                .filter(|(_, &l)| l.abs() <= VERTEX_TOLERANCE * scale)
                .map(|(k, _)| k)
                .collect();
            found.push(Vertex { point, active });
        }
        if found.is_empty() {
            return Err(PolytopeError::EmptyInterior);
        }
        let centroid = found
            .iter()
            .fold(DVector::zeros(n), |acc, v| acc + &v.point)
            / found.len() as f64;
        let scale = 1.0 + centroid.amax();
        if self.min_facet_value(&centroid) <= VERTEX_TOLERANCE * scale {
            return Err(PolytopeError::EmptyInterior);
        }
        Ok(found)
    }

    /// Average of the vertices; an interior point of a full-dimensional polytope.
    pub fn barycenter(&self) -> Result<DVector<f64>, PolytopeError> {
        let vs = self.vertices()?;
        Ok(vs
            .iter()
            .fold(DVector::zeros(self.dim), |acc, v| acc + &v.point)
            / vs.len() as f64)
    }

    /// Checks primitivity of the normals and simplicity plus unimodularity at
    /// every vertex. The pass/fail decision uses integer arithmetic only.
    pub fn validate_delzant(&self) -> Result<DelzantReport, PolytopeError> {
        let vertices = self.vertices()?;
        let n = self.dim;
        let mut violations = Vec::new();
        for (k, f) in self.facets.iter().enumerate() {
            let g = f.normal.iter().fold(0i64, |acc, &c| gcd(acc, c));
            if g != 1 {
                violations.push(Violation::NonPrimitiveNormal { facet: k, gcd: g });
            }
        }
        let mut edges_report = Vec::with_capacity(vertices.len());
        for vertex in &vertices {
            let coords: Vec<f64> = vertex.point.iter().copied().collect();
            if vertex.active.len() != n {
                violations.push(Violation::NonSimpleVertex {
                    vertex: coords,
                    active_facets: vertex.active.clone(),
                });
                continue;
            }
            let normals: Vec<&[i64]> = vertex
                .active
                .iter()
                .map(|&k| self.facets[k].normal.as_slice())
                .collect();
            let edges: Vec<Vec<i64>> = (0..n)
                .map(|i| {
                    // Edge i leaves facet i and runs along the others.
                    let others: Vec<&[i64]> = (0..n).filter(|&j| j != i).map(|j| normals[j]).collect();
                    let mut dir = generalized_cross(&others, n);
                    let pairing: i128 = dir
                        .iter()
                        .zip(normals[i].iter())
                        .map(|(&d, &h)| d * h as i128)
                        .sum();
                    if pairing < 0 {
                        dir.iter_mut().for_each(|d| *d = -*d);
                    }
                    primitive(&dir)
                })
                .collect();
            let matrix: Vec<Vec<i128>> = (0..n)
                .map(|r| (0..n).map(|c| edges[c][r] as i128).collect())
                .collect();
            let det = bareiss_determinant(matrix);
            if det.abs() != 1 {
                violations.push(Violation::NonUnimodularVertex {
                    vertex: coords.clone(),
                    active_facets: vertex.active.clone(),
                    edges: edges.clone(),
                    determinant: det,
                });
            }
            edges_report.push(VertexEdges {
                vertex: coords,
                edges,
                determinant: det,
            });
        }
        Ok(DelzantReport {
            pass: violations.is_empty(),
            vertex_count: vertices.len(),
            vertices: edges_report,
            violations,
        })
    }

    /// Largest distance between two vertices.
    pub fn diameter(&self) -> Result<f64, PolytopeError> {
        let vs = self.vertices()?;
        let mut best: f64 = 0.0;
        for (i, a) in vs.iter().enumerate() {
            for b in &vs[i + 1..] {
                best = best.max((&a.point - &b.point).norm());
            }
        }
        Ok(best)
    }

    /// Euclidean distance from an interior point to the boundary.
    pub fn boundary_distance(&self, xi: &DVector<f64>) -> Result<f64, PolytopeError> {
        self.require_interior(xi)?;
        let values = self.facet_values(xi);
        Ok((0..self.facets.len())
            .map(|k| values[k] / self.normal(k).norm())
            .fold(f64::INFINITY, f64::min))
    }

    /// Lattice nodes of `hℤⁿ` inside the polytope with every facet value at
    /// least `margin`, in lexicographic index order.
    pub fn interior_grid(self: &Arc<Self>, h: f64, margin: f64) -> Result<GridDomain, PolytopeError> {
        if !(h > 0.0) || !(margin >= 0.0) || !h.is_finite() || !margin.is_finite() {
            return Err(PolytopeError::BadGridParameters { h, margin });
        }
        let vs = self.vertices()?;
        let n = self.dim;
        let mut lo = vec![i64::MAX; n];
        let mut hi = vec![i64::MIN; n];
        for v in &vs {
            for i in 0..n {
                lo[i] = lo[i].min((v.point[i] / h).floor() as i64);
                hi[i] = hi[i].max((v.point[i] / h).ceil() as i64);
            }
        }
        let mut indices = Vec::new();
        let mut nodes = Vec::new();
        let mut current = lo.clone();
        loop {
            let xi = DVector::from_iterator(n, current.iter().map(|&i| i as f64 * h));
            let values = self.facet_values(&xi);
            if values.iter().all(|&l| l > 0.0 && l >= margin - GRID_TOLERANCE) {
                indices.push(current.clone());
                nodes.push(xi);
            }
            // Odometer increment, last coordinate fastest.
            let mut axis = n;
            loop {
                if axis == 0 {
                    break;
                }
                axis -= 1;
                if current[axis] < hi[axis] {
                    current[axis] += 1;
                    for later in axis + 1..n {
                        current[later] = lo[later];
                    }
                    axis = usize::MAX;
                    break;
                }
            }
            if axis != usize::MAX {
                break;
            }
        }
        if nodes.is_empty() {
            return Err(PolytopeError::EmptyGrid { h, margin });
        }
        Ok(GridDomain::from_parts(Arc::clone(self), h, margin, indices, nodes))
    }

    /// Pulls the polytope back along the unimodular map `ξ ↦ Tξ`: the result
    /// is `T⁻¹Δ`, with normals `Tᵀh_k` and unchanged offsets.
    pub fn pullback(&self, t: &[Vec<i64>]) -> Result<Self, PolytopeError> {
        let n = self.dim;
        if t.len() != n || t.iter().any(|row| row.len() != n) {
            return Err(PolytopeError::DimensionMismatch {
                expected: n,
                found: t.len(),
            });
        }
        let facets = self
            .facets
            .iter()
            .map(|f| Facet {
                normal: (0..n)
                    .map(|c| (0..n).map(|r| t[r][c] * f.normal[r]).sum())
                    .collect(),
                offset: f.offset,
            })
            .collect();
        Self::new(n, facets)
    }

    /// Translates the polytope by `shift`.
    pub fn translate(&self, shift: &[f64]) -> Self {
        let facets = self
            .facets
            .iter()
            .map(|f| Facet {
                normal: f.normal.clone(),
                offset: f.offset
                    + f.normal
                        .iter()
                        .zip(shift)
                        .map(|(&h, &t)| h as f64 * t)
                        .sum::<f64>(),
            })
            .collect();
        Self {
            dim: self.dim,
            facets,
        }
    }
}

/// Finite set of lattice nodes `ξ = h·i` inside a polytope.
#[derive(Debug, Clone)]
pub struct GridDomain {
    polytope: Arc<DelzantPolytope>,
    h: f64,
    margin: f64,
    indices: Vec<Vec<i64>>,
    nodes: Vec<DVector<f64>>,
    lookup: HashMap<Vec<i64>, usize>,
}

impl GridDomain {
    fn from_parts(
        polytope: Arc<DelzantPolytope>,
        h: f64,
        margin: f64,
        indices: Vec<Vec<i64>>,
        nodes: Vec<DVector<f64>>,
    ) -> Self {
        let lookup = indices
            .iter()
            .enumerate()
            .map(|(k, idx)| (idx.clone(), k))
            .collect();
        Self {
            polytope,
            h,
            margin,
            indices,
            nodes,
            lookup,
        }
    }

    /// Keeps the nodes selected by `keep`, preserving order.
    pub fn restrict(&self, keep: impl Fn(usize) -> bool) -> Self {
        let mut indices = Vec::new();
        let mut nodes = Vec::new();
        for k in 0..self.len() {
            if keep(k) {
                indices.push(self.indices[k].clone());
                nodes.push(self.nodes[k].clone());
            }
        }
        Self::from_parts(Arc::clone(&self.polytope), self.h, self.margin, indices, nodes)
    }

    pub fn polytope(&self) -> &Arc<DelzantPolytope> {
        &self.polytope
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn dim(&self) -> usize {
        self.polytope.dim()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[DVector<f64>] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> &DVector<f64> {
        &self.nodes[k]
    }

    pub fn index(&self, k: usize) -> &[i64] {
        &self.indices[k]
    }

    /// Node number of the lattice index, if present.
    pub fn find(&self, index: &[i64]) -> Option<usize> {
        self.lookup.get(index).copied()
    }

    /// Node number of the neighbour at lattice offset `offset` from node `k`.
    pub fn neighbor(&self, k: usize, offset: &[i64]) -> Option<usize> {
        let idx: Vec<i64> = self.indices[k]
            .iter()
            .zip(offset)
            .map(|(a, b)| a + b)
            .collect();
        self.find(&idx)
    }

    /// Node nearest to `xi` (first in lexicographic order on ties).
    pub fn nearest(&self, xi: &DVector<f64>) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, node) in self.nodes.iter().enumerate() {
            let d = (node - xi).norm();
            if d < best_d - 1e-14 {
                best = k;
                best_d = d;
            }
        }
        best
    }

    /// `min over nodes of min_k ℓ_k(ξ)/|h_k|`.
    pub fn boundary_distance(&self) -> f64 {
        self.nodes
            .iter()
            .map(|xi| {
                self.polytope
                    .boundary_distance(xi)
                    .expect("grid nodes are interior")
            })
            .fold(f64::INFINITY, f64::min)
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

fn primitive(v: &[i128]) -> Vec<i64> {
    let mut g: i128 = 0;
    for &c in v {
        let (mut a, mut b) = (g.abs(), c.abs());
        while b != 0 {
            let r = a % b;
            a = b;
            b = r;
        }
        g = a;
    }
    if g == 0 {
        return v.iter().map(|&c| c as i64).collect();
    }
    v.iter().map(|&c| (c / g) as i64).collect()
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub(crate) fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut current: Vec<usize> = (0..k).collect();
    loop {
        out.push(current.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if current[i] < n - k + i {
                current[i] += 1;
                for j in i + 1..k {
                    current[j] = current[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Fraction-free Gaussian elimination; exact for integer matrices.
pub(crate) fn bareiss_determinant(mut m: Vec<Vec<i128>>) -> i128 {
    let n = m.len();
    if n == 0 {
        return 1;
    }
    let mut sign = 1;
    let mut prev = 1i128;
    for k in 0..n - 1 {
        if m[k][k] == 0 {
            let Some(swap) = (k + 1..n).find(|&r| m[r][k] != 0) else {
                return 0;
            };
            m.swap(k, swap);
            sign = -sign;
        }
        for i in k + 1..n {
            for j in k + 1..n {
                m[i][j] = (m[i][j] * m[k][k] - m[i][k] * m[k][j]) / prev;
            }
        }
        prev = m[k][k];
    }
    sign * m[n - 1][n - 1]
}

/// Vector orthogonal to `n − 1` integer vectors in `ℤⁿ`, with components the
/// signed maximal minors. Zero iff the rows are dependent.
fn generalized_cross(rows: &[&[i64]], n: usize) -> Vec<i128> {
    (0..n)
        .map(|skip| {
            let minor: Vec<Vec<i128>> = rows
                .iter()
                .map(|r| {
                    (0..n)
                        .filter(|&c| c != skip)
                        .map(|c| r[c] as i128)
                        .collect()
                })
                .collect();
            let d = bareiss_determinant(minor);
            if skip % 2 == 0 {
                d
            } else {
                -d
            }
        })
        .collect()
}

fn integer_rank(rows: &[&[i64]], n: usize) -> usize {
    let mut m: Vec<Vec<i128>> = rows
        .iter()
        .map(|r| r.iter().map(|&c| c as i128).collect())
        .collect();
    let mut rank = 0;
    for col in 0..n {
        let Some(pivot) = (rank..m.len()).find(|&r| m[r][col] != 0) else {
            continue;
        };
        m.swap(rank, pivot);
        for r in 0..m.len() {
            if r != rank && m[r][col] != 0 {
                let (a, b) = (m[rank][col], m[r][col]);
                for c in 0..n {
                    m[r][c] = m[r][c] * a - m[rank][c] * b;
                }
                let g = m[r].iter().fold(0i128, |acc, &x| {
                    let (mut p, mut q) = (acc.abs(), x.abs());
                    while q != 0 {
                        let t = p % q;
                        p = q;
                        q = t;
                    }
                    p
                });
                if g > 1 {
                    m[r].iter_mut().for_each(|x| *x /= g);
                }
            }
        }
        rank += 1;
    }
    rank
}

/// Nonzero integer vector in the kernel of a rank-deficient system.
fn kernel_witness(rows: &[&[i64]], n: usize) -> Vec<i64> {
    // Extend the rows with unit vectors until the rank is n − 1, then take the
    // generalized cross product of an independent (n − 1)-subset.
    let mut pool: Vec<Vec<i64>> = rows.iter().map(|r| r.to_vec()).collect();
    for i in 0..n {
        let mut e = vec![0; n];
        e[i] = 1;
        pool.push(e);
    }
    let mut chosen: Vec<Vec<i64>> = Vec::new();
    for r in pool.iter().take(rows.len()) {
        let mut trial = chosen.clone();
        trial.push(r.clone());
        let refs: Vec<&[i64]> = trial.iter().map(|v| v.as_slice()).collect();
        if integer_rank(&refs, n) == trial.len() {
            chosen = trial;
        }
    }
    let row_rank = chosen.len();
    for r in pool.iter().skip(rows.len()) {
        if chosen.len() + 1 >= n {
            break;
        }
        let mut trial = chosen.clone();
        trial.push(r.clone());
        let refs: Vec<&[i64]> = trial.iter().map(|v| v.as_slice()).collect();
        if integer_rank(&refs, n) == trial.len() {
            chosen = trial;
        }
    }
    debug_assert!(row_rank < n);
    let refs: Vec<&[i64]> = chosen.iter().map(|v| v.as_slice()).collect();
    primitive(&generalized_cross(&refs, n))
}
