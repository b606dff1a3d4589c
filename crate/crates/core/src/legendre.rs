//! Legendre duality between symplectic potentials `u(ξ)` on the polytope and
//! Kähler potentials `f(x) = sup_ξ ⟨x, ξ⟩ − u(ξ)` on `ℝⁿ`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::polytope::DelzantPolytope;
use crate::potential::{is_positive_definite, sup_norm_diff, PotentialError, SupNormReport, SymplecticPotential};

pub const RESIDUAL_TOL: f64 = 1e-10;
pub const MAX_ITER: usize = 100;
pub const MAX_HALVINGS: usize = 60;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LegendreError {
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error("potential is not strictly convex at {xi:?}")]
    NonConvex { xi: Vec<f64> },
    #[error("Newton inversion failed after {iterations} iterations at x = {x:?}: last ξ = {last_xi:?}, residual {residual:e}")]
    NewtonFailure {
        x: Vec<f64>,
        last_xi: Vec<f64>,
        residual: f64,
        iterations: usize,
    },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("sublevel sets live on different x-grids")]
    GridMismatch,
    #[error("invalid x-box: {0}")]
    BadBox(String),
}

/// `f(x)`, the maximizer `ξ(x) = ∇f(x)` and `M_f(x) = D²f(x) = (D²u(ξ(x)))⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct LegendrePoint {
    pub x: DVector<f64>,
    pub xi: DVector<f64>,
    pub f: f64,
    pub hessian: DMatrix<f64>,
    /// `D²u(ξ(x))`.
    pub primal_hessian: DMatrix<f64>,
    pub residual: f64,
    pub iterations: usize,
}

impl LegendrePoint {
    /// `det M_f(x)`, computed as `1 / det D²u(ξ(x))`.
    pub fn det_hessian(&self) -> f64 {
        1.0 / self.primal_hessian.determinant()
    }
}

/// Solves `∇u(ξ) = x` by damped Newton from the barycenter.
pub fn legendre_value(u: &SymplecticPotential, x: &DVector<f64>) -> Result<LegendrePoint, LegendreError> {
    let n = u.dim();
    if x.len() != n {
        return Err(LegendreError::DimensionMismatch {
            expected: n,
            found: x.len(),
        });
    }
    let tol = RESIDUAL_TOL * (1.0 + x.norm());
    let mut xi = u.polytope().barycenter().map_err(PotentialError::from)?;
    let mut at = u.eval(&xi)?;
    let objective = |value: f64, xi: &DVector<f64>| x.dot(xi) - value;
    let mut converged = false;
    let mut iterations = 0;
    let mut polish = false;
    while iterations < MAX_ITER {
        let r = x - &at.gradient;
        let rn = r.norm();
        if rn <= tol {
            if polish {
                converged = true;
                break;
            }
            polish = true;
        }
        if !at.positive_definite {
            return Err(LegendreError::NonConvex {
                xi: xi.iter().copied().collect(),
            });
        }
        let step = at
            .hessian
            .clone()
            .cholesky()
            .ok_or_else(|| LegendreError::NonConvex {
                xi: xi.iter().copied().collect(),
            })?
            .solve(&r);
        // Below the floating-point resolution of ξ no further progress is possible.
        let floor = step
            .iter()
            .zip(xi.iter())
            .all(|(d, p)| d.abs() <= 4.0 * f64::EPSILON * p.abs().max(f64::MIN_POSITIVE));
        if floor {
            converged = true;
            break;
        }
        iterations += 1;
        let f_old = objective(at.value, &xi);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial = &xi + &step * t;
            if u.in_domain(&trial) {
                if let Ok(next) = u.eval(&trial) {
                    let f_new = objective(next.value, &trial);
                    let better = f_new >= f_old - 1e-15 * (1.0 + f_old.abs())
                        || (x - &next.gradient).norm() < rn;
                    if better {
                        accepted = Some((trial, next));
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, next)) => {
                xi = trial;
                at = next;
            }
            None => break,
        }
        if polish {
            converged = (x - &at.gradient).norm() <= tol;
            break;
        }
    }
    let residual = (x - &at.gradient).norm();
    if !converged && residual > tol {
        return Err(LegendreError::NewtonFailure {
            x: x.iter().copied().collect(),
            last_xi: xi.iter().copied().collect(),
            residual,
            iterations,
        });
    }
    if !is_positive_definite(&at.hessian) {
        return Err(LegendreError::NonConvex {
            xi: xi.iter().copied().collect(),
        });
    }
    let hessian = at
        .hessian
        .clone()
        .try_inverse()
        .ok_or_else(|| LegendreError::NonConvex {
            xi: xi.iter().copied().collect(),
        })?;
    Ok(LegendrePoint {
        x: x.clone(),
        f: objective(at.value, &xi),
        xi,
        hessian: (&hessian + hessian.transpose()) * 0.5,
        primal_hessian: at.hessian,
        residual,
        iterations,
    })
}

/// Cubic box `center ± half_width` sampled with spacing `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XBox {
    pub center: Vec<f64>,
    pub half_width: f64,
    pub h: f64,
}

/// Lexicographic lattice on an [`XBox`], last coordinate fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct XGrid {
    spec: XBox,
    per_axis: usize,
    nodes: Vec<DVector<f64>>,
}

impl XGrid {
    pub fn new(spec: XBox) -> Result<Self, LegendreError> {
        if spec.center.is_empty() {
            return Err(LegendreError::BadBox("empty center".into()));
        }
        if !(spec.h > 0.0 && spec.h.is_finite()) {
            return Err(LegendreError::BadBox(format!("h must be positive, got {}", spec.h)));
        }
        if !(spec.half_width >= 0.0 && spec.half_width.is_finite()) {
            return Err(LegendreError::BadBox(format!(
                "half_width must be nonnegative, got {}",
                spec.half_width
            )));
        }
        let steps = (spec.half_width / spec.h).round() as usize;
        let per_axis = 2 * steps + 1;
        let n = spec.center.len();
        let total = per_axis
            .checked_pow(n as u32)
            .filter(|&t| t <= 50_000_000)
            .ok_or_else(|| LegendreError::BadBox("too many nodes".into()))?;
        let mut nodes = Vec::with_capacity(total);
        let mut idx = vec![0usize; n];
        for _ in 0..total {
            nodes.push(DVector::from_fn(n, |d, _| {
                spec.center[d] + (idx[d] as f64 - steps as f64) * spec.h
            }));
            for d in (0..n).rev() {
                idx[d] += 1;
                if idx[d] < per_axis {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(Self { spec, per_axis, nodes })
    }

    pub fn spec(&self) -> &XBox {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.center.len()
    }

    pub fn h(&self) -> f64 {
        self.spec.h
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

    /// Axis indices of node `k`, each in `0..per_axis`.
    pub fn index(&self, k: usize) -> Vec<usize> {
        let n = self.dim();
        let mut idx = vec![0; n];
        let mut rest = k;
        for d in (0..n).rev() {
            idx[d] = rest % self.per_axis;
            rest /= self.per_axis;
        }
        idx
    }

    pub fn neighbor(&self, k: usize, offset: &[i64]) -> Option<usize> {
        let idx = self.index(k);
        let mut out = 0usize;
        for (i, o) in idx.iter().zip(offset) {
            let j = *i as i64 + o;
            if j < 0 || j >= self.per_axis as i64 {
                return None;
            }
            out = out * self.per_axis + j as usize;
        }
        Some(out)
    }

    /// Whether node `k` lies on the boundary of the box.
    pub fn on_boundary(&self, k: usize) -> bool {
        self.index(k).iter().any(|&i| i == 0 || i + 1 == self.per_axis)
    }

    /// Node closest to `x`.
    pub fn nearest(&self, x: &DVector<f64>) -> usize {
        let steps = (self.per_axis / 2) as i64;
        let mut out = 0usize;
        for d in 0..self.dim() {
            let i = ((x[d] - self.spec.center[d]) / self.spec.h).round() as i64 + steps;
            out = out * self.per_axis + i.clamp(0, self.per_axis as i64 - 1) as usize;
        }
        out
    }
}

/// Legendre values of `u` at every node, in node order.
pub fn legendre_field(u: &SymplecticPotential, grid: &XGrid) -> Result<Vec<LegendrePoint>, LegendreError> {
    grid.nodes().par_iter().map(|x| legendre_value(u, x)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhiNode {
    pub x: DVector<f64>,
    pub xi_f: DVector<f64>,
    pub f: f64,
    pub xi_g: DVector<f64>,
    pub g: f64,
    pub phi: f64,
}

/// `φ = f − g` where `g` is the dual of the Guillemin potential.
pub fn phi_field(u: &SymplecticPotential, grid: &XGrid) -> Result<Vec<PhiNode>, LegendreError> {
    let v = SymplecticPotential::guillemin(Arc::clone(u.polytope()));
    let fs = legendre_field(u, grid)?;
    let gs = legendre_field(&v, grid)?;
    Ok(fs
        .into_iter()
        .zip(gs)
        .map(|(f, g)| PhiNode {
            x: f.x,
            phi: f.f - g.f,
            xi_f: f.xi,
            f: f.f,
            xi_g: g.xi,
            g: g.f,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma42Report {
    pub psi_sup: f64,
    pub psi_margin: f64,
    pub phi_sup: f64,
    pub phi_argmax: Vec<f64>,
    pub discrepancy: f64,
    pub tolerance: f64,
    /// Every box-boundary node maps (through `∇g`) to a point with
    /// `min ℓ_k` below the ξ-grid margin.
    pub box_covers_margin: bool,
    pub pass: bool,
}

/// Compares `‖u − v‖` on the polytope (lattice spacing `xi_h`) with `‖φ‖`
/// on the x-box.
pub fn check_lemma42(
    u: &SymplecticPotential,
    xi_h: f64,
    grid: &XGrid,
    tolerance: f64,
) -> Result<Lemma42Report, LegendreError> {
    let v = SymplecticPotential::guillemin(Arc::clone(u.polytope()));
    let SupNormReport { value: psi_sup, margin, .. } = sup_norm_diff(u, &v, xi_h)?;
    let phi = phi_field(u, grid)?;
    let mut best = 0;
    for (k, p) in phi.iter().enumerate() {
        if p.phi.abs() > phi[best].phi.abs() {
            best = k;
        }
    }
    let polytope: &DelzantPolytope = u.polytope();
    let box_covers_margin = (0..grid.len())
        .filter(|&k| grid.on_boundary(k))
        .all(|k| polytope.min_facet_value(&phi[k].xi_g) < margin);
    let phi_sup = phi[best].phi.abs();
    let discrepancy = (psi_sup - phi_sup).abs();
    Ok(Lemma42Report {
        psi_sup,
        psi_margin: margin,
        phi_sup,
        phi_argmax: phi[best].x.iter().copied().collect(),
        discrepancy,
        tolerance,
        box_covers_margin,
        pass: discrepancy <= tolerance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SublevelTag {
    F,
    G,
}

/// `{x : f(x) ≤ C}` (or `g`) as a mask over an x-grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SublevelSet {
    pub tag: SublevelTag,
    pub level: f64,
    pub grid: XBox,
    pub mask: Vec<bool>,
}

impl SublevelSet {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Sublevel set from precomputed potential values on `grid`.
pub fn sublevel_from_values(tag: SublevelTag, level: f64, grid: &XGrid, values: &[f64]) -> SublevelSet {
    SublevelSet {
        tag,
        level,
        grid: grid.spec().clone(),
        mask: values.iter().map(|&v| v <= level).collect(),
    }
}

/// Sublevel set of `f` (the dual of `u`) or of `g` (the dual of the Guillemin
/// potential on the same polytope).
pub fn sublevel(
    tag: SublevelTag,
    u: &SymplecticPotential,
    level: f64,
    grid: &XGrid,
) -> Result<SublevelSet, LegendreError> {
    let source = match tag {
        SublevelTag::F => u.clone(),
        SublevelTag::G => SymplecticPotential::guillemin(Arc::clone(u.polytope())),
    };
    let values: Vec<f64> = legendre_field(&source, grid)?.into_iter().map(|p| p.f).collect();
    Ok(sublevel_from_values(tag, level, grid, &values))
}

/// `mask(a) ⊆ mask(b)`.
pub fn inclusion_check(a: &SublevelSet, b: &SublevelSet) -> Result<bool, LegendreError> {
    if a.grid != b.grid || a.mask.len() != b.mask.len() {
        return Err(LegendreError::GridMismatch);
    }
    Ok(a.mask.iter().zip(&b.mask).all(|(&x, &y)| !x || y))
}
