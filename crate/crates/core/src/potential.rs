//! Symplectic potentials `u = v + ψ` on a Delzant polytope.
//!
//! `v(ξ) = Σ ℓ_k log ℓ_k` is the Guillemin potential and is always evaluated
//! in closed form. The perturbation `ψ` is zero, affine, a polynomial, nodal
//! values on a lattice grid, or (in one dimension) a profile given by its
//! second derivative `1/w − v″`, which is how exact solver output is carried.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jet::Jet;
use crate::polynomial::{unit_orders, Polynomial};
use crate::polytope::{DelzantPolytope, GridDomain, PolytopeError};
use crate::quadrature;

/// Offsets closer than this (in units of `h`) to a lattice node are treated
/// as the node itself.
const NODE_SNAP: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error("point {point:?} is outside the support of the grid perturbation")]
    OutOfSupport { point: Vec<f64> },
    #[error("finite-difference stencil at {point:?} leaves the grid perturbation")]
    MissingStencil { point: Vec<f64> },
    #[error("grid perturbation has {found} values but the grid has {expected} nodes")]
    GridSize { expected: usize, found: usize },
    #[error("analytic derivatives are unavailable for a grid perturbation")]
    AnalyticUnavailable,
    #[error("potentials live on different polytopes")]
    MismatchedPolytopes,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("unsupported operation: {0}")]
    Unsupported(&'static str),
}

/// `ξ ↦ ⟨slope, ξ⟩ + constant`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub slope: Vec<f64>,
    pub constant: f64,
}

impl Affine {
    pub fn zero(dim: usize) -> Self {
        Self {
            slope: vec![0.0; dim],
            constant: 0.0,
        }
    }

    pub fn eval(&self, xi: &DVector<f64>) -> f64 {
        self.slope.iter().zip(xi.iter()).map(|(a, x)| a * x).sum::<f64>() + self.constant
    }

    pub fn add(&self, o: &Self) -> Self {
        Self {
            slope: self.slope.iter().zip(&o.slope).map(|(a, b)| a + b).collect(),
            constant: self.constant + o.constant,
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            slope: self.slope.iter().map(|a| a * s).collect(),
            constant: self.constant * s,
        }
    }
}

/// Nodal perturbation values on a lattice grid with centred finite-difference
/// derivatives and multilinear interpolation between nodes.
#[derive(Debug, Clone)]
pub struct GridPsi {
    grid: Arc<GridDomain>,
    values: Vec<f64>,
    gradients: Vec<Option<DVector<f64>>>,
    hessians: Vec<Option<DMatrix<f64>>>,
}

impl GridPsi {
    pub fn new(grid: Arc<GridDomain>, values: Vec<f64>) -> Result<Self, PotentialError> {
        if values.len() != grid.len() {
            return Err(PotentialError::GridSize {
                expected: grid.len(),
                found: values.len(),
            });
        }
        let gradients = (0..grid.len()).map(|k| fd_gradient(&grid, &values, k)).collect();
        let hessians = (0..grid.len()).map(|k| fd_hessian(&grid, &values, k)).collect();
        Ok(Self {
            grid,
            values,
            gradients,
            hessians,
        })
    }

    pub fn grid(&self) -> &Arc<GridDomain> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn map_values(&self, f: impl Fn(&DVector<f64>, f64) -> f64) -> Self {
        let values = self
            .grid
            .nodes()
            .iter()
            .zip(&self.values)
            .map(|(xi, &v)| f(xi, v))
            .collect();
        Self::new(Arc::clone(&self.grid), values).expect("same grid")
    }

    /// Lattice node at `xi`, if `xi` sits on one.
    fn snap(&self, xi: &DVector<f64>) -> Option<usize> {
        let h = self.grid.h();
        let mut idx = Vec::with_capacity(xi.len());
        for &x in xi.iter() {
            let r = (x / h).round();
            if (x / h - r).abs() > NODE_SNAP {
                return None;
            }
            idx.push(r as i64);
        }
        self.grid.find(&idx)
    }

    /// Corner nodes and multilinear weights of the cell containing `xi`.
    fn cell(&self, xi: &DVector<f64>) -> Result<Vec<(usize, f64)>, PotentialError> {
        let h = self.grid.h();
        let n = xi.len();
        let base: Vec<i64> = xi.iter().map(|&x| (x / h).floor() as i64).collect();
        let frac: Vec<f64> = xi
            .iter()
            .zip(&base)
            .map(|(&x, &b)| x / h - b as f64)
            .collect();
        let mut out = Vec::with_capacity(1 << n);
        for mask in 0..(1usize << n) {
            let mut idx = base.clone();
            let mut weight = 1.0;
            for i in 0..n {
                if mask >> i & 1 == 1 {
                    idx[i] += 1;
                    weight *= frac[i];
                } else {
                    weight *= 1.0 - frac[i];
                }
            }
            let k = self.grid.find(&idx).ok_or_else(|| PotentialError::OutOfSupport {
                point: xi.iter().copied().collect(),
            })?;
            out.push((k, weight));
        }
        Ok(out)
    }

    pub fn value(&self, xi: &DVector<f64>) -> Result<f64, PotentialError> {
        if let Some(k) = self.snap(xi) {
            return Ok(self.values[k]);
        }
        Ok(self
            .cell(xi)?
            .into_iter()
            .map(|(k, w)| w * self.values[k])
            .sum())
    }

    fn derivatives(&self, xi: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>), PotentialError> {
        let missing = || PotentialError::MissingStencil {
            point: xi.iter().copied().collect(),
        };
        if let Some(k) = self.snap(xi) {
            let g = self.gradients[k].clone().ok_or_else(missing)?;
            let hm = self.hessians[k].clone().ok_or_else(missing)?;
            return Ok((g, hm));
        }
        let n = xi.len();
        let mut g = DVector::zeros(n);
        let mut hm = DMatrix::zeros(n, n);
        for (k, w) in self.cell(xi)? {
            g += self.gradients[k].as_ref().ok_or_else(missing)? * w;
            hm += self.hessians[k].as_ref().ok_or_else(missing)? * w;
        }
        Ok((g, hm))
    }
}

/// Centred first differences at node `k`, if all neighbours exist.
pub(crate) fn fd_gradient(grid: &GridDomain, values: &[f64], k: usize) -> Option<DVector<f64>> {
    let n = grid.dim();
    let h = grid.h();
    let mut g = DVector::zeros(n);
    for i in 0..n {
        let mut e = vec![0i64; n];
        e[i] = 1;
        let plus = grid.neighbor(k, &e)?;
        e[i] = -1;
        let minus = grid.neighbor(k, &e)?;
        g[i] = (values[plus] - values[minus]) / (2.0 * h);
    }
    Some(g)
}

/// Centred second differences at node `k`, if the full stencil exists.
pub(crate) fn fd_hessian(grid: &GridDomain, values: &[f64], k: usize) -> Option<DMatrix<f64>> {
    centred_hessian(grid.dim(), grid.h(), |o| grid.neighbor(k, o).map(|j| values[j]))
}

/// Second-order centred Hessian of `f` sampled at offsets (in units of `h`)
/// with `|o|∞ ≤ 1`.
pub(crate) fn centred_hessian(
    n: usize,
    h: f64,
    mut f: impl FnMut(&[i64]) -> Option<f64>,
) -> Option<DMatrix<f64>> {
    let h2 = h * h;
    let mut o = vec![0i64; n];
    let centre = f(&o)?;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        o[i] = 1;
        let plus = f(&o)?;
        o[i] = -1;
        let minus = f(&o)?;
        o[i] = 0;
        m[(i, i)] = (plus - 2.0 * centre + minus) / h2;
        for j in i + 1..n {
            let mut corner = |si: i64, sj: i64| {
                o[i] = si;
                o[j] = sj;
                let v = f(&o);
                o[i] = 0;
                o[j] = 0;
                v
            };
            let pp = corner(1, 1)?;
            let pm = corner(1, -1)?;
            let mp = corner(-1, 1)?;
            let mm = corner(-1, -1)?;
            let mixed = (pp - pm - mp + mm) / (4.0 * h2);
            m[(i, j)] = mixed;
            m[(j, i)] = mixed;
        }
    }
    Some(m)
}

/// One-dimensional perturbation defined by `ψ″ = c·(1/w − v″)` on `(α, β)`,
/// with `ψ(m) = ψ′(m) = 0` at the anchor `m`. `w` is a polynomial in `ξ`
/// given by its coefficients in increasing degree.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfilePsi {
    pub alpha: f64,
    pub beta: f64,
    pub anchor: f64,
    pub w: Vec<f64>,
    pub coefficient: f64,
}

impl ProfilePsi {
    const ORDER: usize = 16;
    const PANEL: f64 = 0.02;

    fn w_derivatives(&self, x: f64) -> (f64, f64, f64) {
        let (mut p, mut d1, mut d2) = (0.0, 0.0, 0.0);
        for (k, &c) in self.w.iter().enumerate().rev() {
            d2 = d2 * x + 2.0 * d1;
            d1 = d1 * x + p;
            p = p * x + c;
            let _ = k;
        }
        (p, d1, d2)
    }

    /// `ψ″` without the coefficient.
    fn second(&self, x: f64) -> f64 {
        let (w, _, _) = self.w_derivatives(x);
        1.0 / w - 1.0 / (x - self.alpha) - 1.0 / (self.beta - x)
    }

    fn panels(&self, x: f64) -> usize {
        ((x - self.anchor).abs() / Self::PANEL).ceil().max(1.0) as usize
    }

    fn value(&self, x: f64) -> f64 {
        let q = quadrature::integrate(
            |t| (x - t) * self.second(t),
            self.anchor,
            x,
            Self::ORDER,
            self.panels(x),
        );
        self.coefficient * q
    }

    fn slope(&self, x: f64) -> f64 {
        let q = quadrature::integrate(|t| self.second(t), self.anchor, x, Self::ORDER, self.panels(x));
        self.coefficient * q
    }

    fn hessian_jet(&self, x: f64) -> Jet {
        let (w, w1, w2) = self.w_derivatives(x);
        let wj = Jet {
            value: w,
            grad: DVector::from_element(1, w1),
            hess: DMatrix::from_element(1, 1, w2),
        };
        wj.recip().sub(&guillemin_hessian_jets_1d(self.alpha, self.beta, x)).scale(self.coefficient)
    }
}

fn guillemin_hessian_jets_1d(alpha: f64, beta: f64, x: f64) -> Jet {
    let left = Jet::affine(x - alpha, DVector::from_element(1, 1.0)).recip();
    let right = Jet::affine(beta - x, DVector::from_element(1, -1.0)).recip();
    left.add(&right)
}

#[derive(Debug, Clone)]
pub enum Perturbation {
    Zero,
    Affine(Affine),
    Polynomial(Polynomial),
    Grid(GridPsi),
    Profile(ProfilePsi),
}

impl Perturbation {
    fn kind(&self) -> &'static str {
        match self {
            Perturbation::Zero => "zero",
            Perturbation::Affine(_) => "affine",
            Perturbation::Polynomial(_) => "polynomial",
            Perturbation::Grid(_) => "grid",
            Perturbation::Profile(_) => "profile",
        }
    }
}

/// Record of the affine function subtracted by [`SymplecticPotential::normalize_at`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Normalization {
    pub point: Vec<f64>,
    pub subtracted: Affine,
}

/// Value, gradient and Hessian of a potential at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialValue {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub positive_definite: bool,
}

/// `u = c·v + ψ + (affine shift)` with `c` the Guillemin weight (1 for an
/// element of the standard class, 0 for a pure perturbation).
#[derive(Debug, Clone)]
pub struct SymplecticPotential {
    polytope: Arc<DelzantPolytope>,
    guillemin: f64,
    psi: Perturbation,
    shift: Affine,
    normalization: Option<Normalization>,
}

/// Guillemin potential with gradient `Σ (1 + log ℓ_k) h_k` and Hessian
/// `Σ h_k h_kᵀ / ℓ_k`.
pub fn guillemin_eval(
    polytope: &DelzantPolytope,
    xi: &DVector<f64>,
) -> Result<(f64, DVector<f64>, DMatrix<f64>), PotentialError> {
    polytope.require_interior(xi)?;
    let n = polytope.dim();
    let ell = polytope.facet_values(xi);
    let mut value = 0.0;
    let mut grad = DVector::zeros(n);
    let mut hess = DMatrix::zeros(n, n);
    for (k, &l) in ell.iter().enumerate() {
        let h = polytope.normal(k);
        value += l * l.ln();
        grad += &h * (1.0 + l.ln());
        hess += (&h * h.transpose()) / l;
    }
    Ok((value, grad, hess))
}

fn guillemin_hessian_jets(polytope: &DelzantPolytope, xi: &DVector<f64>) -> Vec<Vec<Jet>> {
    let n = polytope.dim();
    let ell = polytope.facet_values(xi);
    let mut m = vec![vec![Jet::constant(n, 0.0); n]; n];
    for (k, &l) in ell.iter().enumerate() {
        let h = polytope.normal(k);
        let inv = Jet::affine(l, h.clone()).recip();
        for a in 0..n {
            for b in 0..n {
                let c = h[a] * h[b];
                if c != 0.0 {
                    m[a][b] = m[a][b].add(&inv.scale(c));
                }
            }
        }
    }
    m
}

impl SymplecticPotential {
    pub fn new(
        polytope: Arc<DelzantPolytope>,
        guillemin: bool,
        psi: Perturbation,
    ) -> Result<Self, PotentialError> {
        let n = polytope.dim();
        match &psi {
            Perturbation::Affine(a) if a.slope.len() != n => {
                return Err(PotentialError::DimensionMismatch {
                    expected: n,
                    found: a.slope.len(),
                })
            }
            Perturbation::Polynomial(p) if !p.check_dim(n) => {
                return Err(PotentialError::DimensionMismatch {
                    expected: n,
                    found: p.terms().next().map(|(e, _)| e.len()).unwrap_or(0),
                })
            }
            Perturbation::Grid(g) if !Arc::ptr_eq(g.grid().polytope(), &polytope) && **g.grid().polytope() != *polytope => {
                return Err(PotentialError::MismatchedPolytopes)
            }
            Perturbation::Profile(_) if n != 1 => {
                return Err(PotentialError::Unsupported("profile perturbations are one-dimensional"))
            }
            _ => {}
        }
        Ok(Self {
            polytope,
            guillemin: if guillemin { 1.0 } else { 0.0 },
            psi,
            shift: Affine::zero(n),
            normalization: None,
        })
    }

    /// The Guillemin potential `v` itself.
    pub fn guillemin(polytope: Arc<DelzantPolytope>) -> Self {
        Self::new(polytope, true, Perturbation::Zero).expect("zero perturbation")
    }

    /// `v + p` for a polynomial `p`.
    pub fn with_polynomial(polytope: Arc<DelzantPolytope>, p: Polynomial) -> Result<Self, PotentialError> {
        Self::new(polytope, true, Perturbation::Polynomial(p))
    }

    /// `½|ξ|²` with no Guillemin part; defined on all of `ℝⁿ`.
    pub fn half_square(polytope: Arc<DelzantPolytope>) -> Self {
        let n = polytope.dim();
        Self::new(
            polytope,
            false,
            Perturbation::Polynomial(Polynomial::half_square_distance(&vec![0.0; n])),
        )
        .expect("matching dimension")
    }

    pub fn polytope(&self) -> &Arc<DelzantPolytope> {
        &self.polytope
    }

    pub fn dim(&self) -> usize {
        self.polytope.dim()
    }

    pub fn guillemin_weight(&self) -> f64 {
        self.guillemin
    }

    pub fn perturbation(&self) -> &Perturbation {
        &self.psi
    }

    pub fn shift(&self) -> &Affine {
        &self.shift
    }

    pub fn normalization(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    /// Whether analytic (jet) derivatives are available.
    pub fn is_analytic(&self) -> bool {
        !matches!(self.psi, Perturbation::Grid(_))
    }

    /// Whether the potential is confined to the open polytope. Pure polynomial
    /// potentials extend to all of `ℝⁿ`.
    pub fn confined(&self) -> bool {
        self.guillemin != 0.0 || matches!(self.psi, Perturbation::Grid(_) | Perturbation::Profile(_))
    }

    pub fn in_domain(&self, xi: &DVector<f64>) -> bool {
        if xi.len() != self.dim() {
            return false;
        }
        if self.confined() && !self.polytope.contains_open(xi) {
            return false;
        }
        match &self.psi {
            Perturbation::Grid(g) => g.snap(xi).is_some() || g.cell(xi).is_ok(),
            _ => true,
        }
    }

    fn check_point(&self, xi: &DVector<f64>) -> Result<(), PotentialError> {
        if xi.len() != self.dim() {
            return Err(PotentialError::DimensionMismatch {
                expected: self.dim(),
                found: xi.len(),
            });
        }
        if self.confined() {
            self.polytope.require_interior(xi)?;
        }
        Ok(())
    }

    /// Adds an affine function.
    pub fn add_affine(&self, a: &Affine) -> Self {
        let mut out = self.clone();
        out.shift = out.shift.add(a);
        out
    }

    pub fn add_constant(&self, c: f64) -> Self {
        self.add_affine(&Affine {
            slope: vec![0.0; self.dim()],
            constant: c,
        })
    }

    /// `λu`.
    pub fn scaled(&self, lambda: f64) -> Self {
        let psi = match &self.psi {
            Perturbation::Zero => Perturbation::Zero,
            Perturbation::Affine(a) => Perturbation::Affine(a.scale(lambda)),
            Perturbation::Polynomial(p) => Perturbation::Polynomial(p.scale(lambda)),
            Perturbation::Grid(g) => Perturbation::Grid(g.map_values(|_, v| v * lambda)),
            Perturbation::Profile(p) => Perturbation::Profile(ProfilePsi {
                coefficient: p.coefficient * lambda,
                ..p.clone()
            }),
        };
        Self {
            polytope: Arc::clone(&self.polytope),
            guillemin: self.guillemin * lambda,
            psi,
            shift: self.shift.scale(lambda),
            normalization: None,
        }
    }

    /// `ξ ↦ u(Tξ)` on the pulled-back polytope `T⁻¹Δ`.
    pub fn pullback(&self, t: &[Vec<i64>]) -> Result<Self, PotentialError> {
        let n = self.dim();
        let polytope = Arc::new(self.polytope.pullback(t)?);
        let tm = DMatrix::from_fn(n, n, |r, c| t[r][c] as f64);
        let psi = match &self.psi {
            Perturbation::Zero => Perturbation::Zero,
            Perturbation::Affine(a) => Perturbation::Affine(pull_affine(a, &tm)),
            Perturbation::Polynomial(p) => Perturbation::Polynomial(p.compose_linear(&tm)),
            _ => return Err(PotentialError::Unsupported("pullback of a grid or profile perturbation")),
        };
        Ok(Self {
            polytope,
            guillemin: self.guillemin,
            psi,
            shift: pull_affine(&self.shift, &tm),
            normalization: None,
        })
    }

    /// Value only; for grid perturbations this uses multilinear interpolation.
    pub fn value(&self, xi: &DVector<f64>) -> Result<f64, PotentialError> {
        self.check_point(xi)?;
        let mut value = self.shift.eval(xi);
        if self.guillemin != 0.0 {
            value += self.guillemin
                * self
                    .polytope
                    .facet_values(xi)
                    .iter()
                    .map(|l| l * l.ln())
                    .sum::<f64>();
        }
        value += match &self.psi {
            Perturbation::Zero => 0.0,
            Perturbation::Affine(a) => a.eval(xi),
            Perturbation::Polynomial(p) => p.eval(xi.as_slice()),
            Perturbation::Grid(g) => g.value(xi)?,
            Perturbation::Profile(p) => p.value(xi[0]),
        };
        Ok(value)
    }

    /// Value, gradient, Hessian and a positive-definiteness flag.
    pub fn eval(&self, xi: &DVector<f64>) -> Result<PotentialValue, PotentialError> {
        self.check_point(xi)?;
        let n = self.dim();
        let mut value = self.shift.eval(xi);
        let mut gradient = DVector::from_column_slice(&self.shift.slope);
        let mut hessian = DMatrix::zeros(n, n);
        if self.guillemin != 0.0 {
            let (v, g, h) = guillemin_eval(&self.polytope, xi)?;
            value += self.guillemin * v;
            gradient += g * self.guillemin;
            hessian += h * self.guillemin;
        }
        match &self.psi {
            Perturbation::Zero => {}
            Perturbation::Affine(a) => {
                value += a.eval(xi);
                gradient += DVector::from_column_slice(&a.slope);
            }
            Perturbation::Polynomial(p) => {
                value += p.eval(xi.as_slice());
                gradient += p.gradient(xi.as_slice());
                hessian += p.hessian(xi.as_slice());
            }
            Perturbation::Grid(g) => {
                value += g.value(xi)?;
                let (dg, dh) = g.derivatives(xi)?;
                gradient += dg;
                hessian += dh;
            }
            Perturbation::Profile(p) => {
                value += p.value(xi[0]);
                gradient[0] += p.slope(xi[0]);
                hessian[(0, 0)] += p.coefficient * p.second(xi[0]);
            }
        }
        let positive_definite = is_positive_definite(&hessian);
        Ok(PotentialValue {
            value,
            gradient,
            hessian,
            positive_definite,
        })
    }

    /// Hessian only (cheaper than [`Self::eval`] for profiles).
    pub fn hessian(&self, xi: &DVector<f64>) -> Result<DMatrix<f64>, PotentialError> {
        self.check_point(xi)?;
        let n = self.dim();
        let mut hessian = DMatrix::zeros(n, n);
        if self.guillemin != 0.0 {
            let ell = self.polytope.facet_values(xi);
            for (k, &l) in ell.iter().enumerate() {
                let h = self.polytope.normal(k);
                hessian += (&h * h.transpose()) * (self.guillemin / l);
            }
        }
        match &self.psi {
            Perturbation::Zero | Perturbation::Affine(_) => {}
            Perturbation::Polynomial(p) => hessian += p.hessian(xi.as_slice()),
            Perturbation::Grid(g) => hessian += g.derivatives(xi)?.1,
            Perturbation::Profile(p) => hessian[(0, 0)] += p.coefficient * p.second(xi[0]),
        }
        Ok(hessian)
    }

    /// Second-order jets of every Hessian entry: exact third and fourth
    /// derivatives of `u` packaged for jet arithmetic.
    pub fn hessian_jets(&self, xi: &DVector<f64>) -> Result<Vec<Vec<Jet>>, PotentialError> {
        self.check_point(xi)?;
        let n = self.dim();
        let mut m = if self.guillemin != 0.0 {
            guillemin_hessian_jets(&self.polytope, xi)
                .into_iter()
                .map(|row| row.into_iter().map(|j| j.scale(self.guillemin)).collect())
                .collect()
        } else {
            vec![vec![Jet::constant(n, 0.0); n]; n]
        };
        match &self.psi {
            Perturbation::Zero | Perturbation::Affine(_) => {}
            Perturbation::Polynomial(p) => {
                let x = xi.as_slice();
                for a in 0..n {
                    for b in 0..n {
                        let value = p.derivative_at(&unit_orders(n, &[a, b]), x);
                        let grad = DVector::from_fn(n, |c, _| p.derivative_at(&unit_orders(n, &[a, b, c]), x));
                        let hess = DMatrix::from_fn(n, n, |c, d| {
                            p.derivative_at(&unit_orders(n, &[a, b, c, d]), x)
                        });
                        m[a][b] = m[a][b].add(&Jet { value, grad, hess });
                    }
                }
            }
            Perturbation::Grid(_) => return Err(PotentialError::AnalyticUnavailable),
            Perturbation::Profile(p) => m[0][0] = m[0][0].add(&p.hessian_jet(xi[0])),
        }
        Ok(m)
    }

    /// Subtracts the affine function `u(p) + ⟨∇u(p), ξ − p⟩`, so the result
    /// vanishes to first order at `p`.
    pub fn normalize_at(&self, p: &DVector<f64>) -> Result<Self, PotentialError> {
        self.polytope.require_interior(p)?;
        let at = self.eval(p)?;
        let subtracted = Affine {
            slope: at.gradient.iter().copied().collect(),
            constant: at.value - at.gradient.dot(p),
        };
        let mut out = self.add_affine(&subtracted.scale(-1.0));
        out.normalization = Some(Normalization {
            point: p.iter().copied().collect(),
            subtracted,
        });
        Ok(out)
    }
}

fn pull_affine(a: &Affine, t: &DMatrix<f64>) -> Affine {
    let slope = t.transpose() * DVector::from_column_slice(&a.slope);
    Affine {
        slope: slope.iter().copied().collect(),
        constant: a.constant,
    }
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite()) && m.clone().cholesky().is_some()
}

/// Grid sup-norm of `u1 − u2` for one margin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupSweep {
    pub margin: f64,
    pub value: f64,
    pub argmax: Vec<f64>,
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupNormReport {
    /// Estimate from the finest sweep.
    pub value: f64,
    pub h: f64,
    pub margin: f64,
    pub sweeps: Vec<SupSweep>,
}

/// Approximates `‖u1 − u2‖` on the closed polytope by lattice sweeps with
/// margins `2h` and then `h`.
pub fn sup_norm_diff(
    u1: &SymplecticPotential,
    u2: &SymplecticPotential,
    h: f64,
) -> Result<SupNormReport, PotentialError> {
    if *u1.polytope != *u2.polytope {
        return Err(PotentialError::MismatchedPolytopes);
    }
    let mut sweeps = Vec::new();
    for margin in [2.0 * h, h] {
        let grid = u1.polytope.interior_grid(h, margin)?;
        sweeps.push(sup_sweep(u1, u2, &grid)?);
    }
    let last = sweeps.last().expect("two sweeps");
    Ok(SupNormReport {
        value: last.value,
        h,
        margin: last.margin,
        sweeps,
    })
}

pub(crate) fn sup_sweep(
    u1: &SymplecticPotential,
    u2: &SymplecticPotential,
    grid: &GridDomain,
) -> Result<SupSweep, PotentialError> {
    use rayon::prelude::*;
    let diffs: Vec<f64> = grid
        .nodes()
        .par_iter()
        .map(|xi| Ok((u1.value(xi)? - u2.value(xi)?).abs()))
        .collect::<Result<_, PotentialError>>()?;
    let mut best = 0;
    for (k, d) in diffs.iter().enumerate() {
        if *d > diffs[best] {
            best = k;
        }
    }
    Ok(SupSweep {
        margin: grid.margin(),
        value: diffs[best],
        argmax: grid.node(best).iter().copied().collect(),
        nodes: grid.len(),
    })
}

/// JSON description of a potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub guillemin: bool,
    pub psi: PsiSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PsiSpec {
    Zero,
    Affine { a: Vec<f64>, b: f64 },
    Polynomial { terms: Polynomial },
    Grid { h: f64, margin: f64, values: Vec<f64> },
}

impl PotentialSpec {
    pub fn build(&self, polytope: Arc<DelzantPolytope>) -> Result<SymplecticPotential, PotentialError> {
        let psi = match &self.psi {
            PsiSpec::Zero => Perturbation::Zero,
            PsiSpec::Affine { a, b } => Perturbation::Affine(Affine {
                slope: a.clone(),
                constant: *b,
            }),
            PsiSpec::Polynomial { terms } => Perturbation::Polynomial(terms.clone()),
            PsiSpec::Grid { h, margin, values } => {
                let grid = Arc::new(polytope.interior_grid(*h, *margin)?);
                Perturbation::Grid(GridPsi::new(grid, values.clone())?)
            }
        };
        SymplecticPotential::new(polytope, self.guillemin, psi)
    }
}

impl std::fmt::Display for SymplecticPotential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}·v + psi[{}]",
            self.guillemin,
            self.psi.kind()
        )
    }
}
