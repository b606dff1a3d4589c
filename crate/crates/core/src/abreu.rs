//! The Abreu operator `A(u) = Σ U^{ij} w_{ij}` with `w = 1 / det D²u`.
//!
//! Convention: scalar curvature is `K = −A(u)`, and `u` solves the equation
//! for a target `K` when `A(u) + K = 0`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jet;
use crate::polynomial::Polynomial;
use crate::polytope::GridDomain;
use crate::potential::{centred_hessian, is_positive_definite, PotentialError, SymplecticPotential};

pub const CONVENTION: &str = "A(u) = sum_ij U^ij w_ij with w = 1/det D^2u; K = -A(u); solved when A(u) + K = 0";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AbreuError {
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error("singular matrix: det = {det:e}, condition number = {condition:e}")]
    Singular { det: f64, condition: f64 },
    #[error("matrix is not symmetric (asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("curvature spec has dimension {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("grid is empty")]
    EmptyGrid,
    #[error("b must be nonnegative and finite, got {0}")]
    BadBound(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Analytic,
    #[serde(rename = "fd")]
    FiniteDifference,
}

/// Determinant and cofactor matrix `U = det(H)·H⁻¹`.
pub fn cofactor(h: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>), AbreuError> {
    let n = h.nrows();
    let scale = h.amax().max(f64::MIN_POSITIVE);
    let asymmetry = (h - h.transpose()).amax();
    if asymmetry > 1e-12 * scale {
        return Err(AbreuError::NotSymmetric { asymmetry });
    }
    let (det, u) = match n {
        1 => (h[(0, 0)], DMatrix::from_element(1, 1, 1.0)),
        2 => (
            h[(0, 0)] * h[(1, 1)] - h[(0, 1)] * h[(1, 0)],
            DMatrix::from_row_slice(2, 2, &[h[(1, 1)], -h[(0, 1)], -h[(1, 0)], h[(0, 0)]]),
        ),
        3 => {
            let c = |r0: usize, r1: usize, c0: usize, c1: usize| h[(r0, c0)] * h[(r1, c1)] - h[(r0, c1)] * h[(r1, c0)];
            // adj(H)_{ij} = (−1)^{i+j} M_{ji}
            let u = DMatrix::from_row_slice(
                3,
                3,
                &[
                    c(1, 2, 1, 2),
                    -c(0, 2, 1, 2),
                    c(0, 1, 1, 2),
                    -c(1, 2, 0, 2),
                    c(0, 2, 0, 2),
                    -c(0, 1, 0, 2),
                    c(1, 2, 0, 1),
                    -c(0, 2, 0, 1),
                    c(0, 1, 0, 1),
                ],
            );
            let det = h[(0, 0)] * u[(0, 0)] + h[(0, 1)] * u[(1, 0)] + h[(0, 2)] * u[(2, 0)];
            (det, u)
        }
        _ => {
            let lu = h.clone().lu();
            let det = lu.determinant();
            match lu.try_inverse() {
                Some(inv) => (det, inv * det),
                None => (det, DMatrix::zeros(n, n)),
            }
        }
    };
    let sv = h.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if det == 0.0 || !det.is_finite() || smin <= 1e-14 * smax {
        return Err(AbreuError::Singular {
            det,
            condition: if smin > 0.0 { smax / smin } else { f64::INFINITY },
        });
    }
    Ok((det, u))
}

/// Operator data at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCurvature {
    pub det_hess: f64,
    pub w: f64,
    pub cofactor: DMatrix<f64>,
    pub a: f64,
    /// Hessian not positive definite at the point or somewhere on its stencil.
    pub flagged: bool,
}

impl PointCurvature {
    fn flagged(n: usize, det_hess: f64) -> Self {
        Self {
            det_hess,
            w: 1.0 / det_hess,
            cofactor: DMatrix::from_element(n, n, f64::NAN),
            a: f64::NAN,
            flagged: true,
        }
    }

    pub fn k(&self) -> f64 {
        -self.a
    }
}

fn w_at(u: &SymplecticPotential, xi: &DVector<f64>) -> Result<Option<f64>, AbreuError> {
    let hm = u.hessian(xi)?;
    if !is_positive_definite(&hm) {
        return Ok(None);
    }
    Ok(Some(1.0 / hm.determinant()))
}

/// `A(u)(ξ)`; `h` is the finite-difference spacing and is ignored in
/// analytic mode.
pub fn abreu_at(
    u: &SymplecticPotential,
    xi: &DVector<f64>,
    mode: Mode,
    h: f64,
) -> Result<PointCurvature, AbreuError> {
    let n = u.dim();
    let hm = u.hessian(xi)?;
    if !is_positive_definite(&hm) {
        return Ok(PointCurvature::flagged(n, hm.determinant()));
    }
    let (det, cof) = cofactor(&hm)?;
    let w = 1.0 / det;
    let w2 = match mode {
        Mode::Analytic => {
            let wj = jet::determinant(u.hessian_jets(xi)?).recip();
            wj.hess
        }
        Mode::FiniteDifference => {
            let mut flagged = false;
            let mut error = None;
            let sample = |o: &[i64]| {
                if o.iter().all(|&c| c == 0) {
                    return Some(w);
                }
                let p = xi + DVector::from_iterator(n, o.iter().map(|&c| c as f64 * h));
                match w_at(u, &p) {
                    Ok(Some(v)) => Some(v),
                    Ok(None) => {
                        flagged = true;
                        None
                    }
                    Err(e) => {
                        error.get_or_insert(e);
                        None
                    }
                }
            };
            let m = centred_hessian(n, h, sample);
            if let Some(e) = error {
                return Err(e);
            }
            match m {
                Some(m) if !flagged => m,
                _ => return Ok(PointCurvature::flagged(n, det)),
            }
        }
    };
    let a = cof.component_mul(&w2).sum();
    Ok(PointCurvature {
        det_hess: det,
        w,
        cofactor: cof,
        a,
        flagged: false,
    })
}

/// Target scalar curvature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CurvatureSpec {
    Constant { value: f64 },
    Affine { a: Vec<f64>, b: f64 },
    Polynomial { terms: Polynomial },
}

impl CurvatureSpec {
    pub fn constant(value: f64) -> Self {
        Self::Constant { value }
    }

    pub fn check_dim(&self, n: usize) -> Result<(), AbreuError> {
        let found = match self {
            CurvatureSpec::Constant { .. } => return Ok(()),
            CurvatureSpec::Affine { a, .. } => a.len(),
            CurvatureSpec::Polynomial { terms } => {
                if terms.check_dim(n) {
                    return Ok(());
                }
                terms.terms().find(|(e, _)| e.len() != n).map(|(e, _)| e.len()).unwrap_or(0)
            }
        };
        if found == n {
            Ok(())
        } else {
            Err(AbreuError::DimensionMismatch { expected: n, found })
        }
    }

    pub fn eval(&self, xi: &DVector<f64>) -> f64 {
        match self {
            CurvatureSpec::Constant { value } => *value,
            CurvatureSpec::Affine { a, b } => a.iter().zip(xi.iter()).map(|(a, x)| a * x).sum::<f64>() + b,
            CurvatureSpec::Polynomial { terms } => terms.eval(xi.as_slice()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeCurvature {
    pub xi: DVector<f64>,
    pub point: PointCurvature,
    pub k_target: Option<f64>,
}

impl NodeCurvature {
    /// `A(u) + K_target`.
    pub fn residual(&self) -> Option<f64> {
        self.k_target.map(|k| self.point.a + k)
    }
}

/// Operator values over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureResult {
    pub mode: Mode,
    pub h: f64,
    pub nodes: Vec<NodeCurvature>,
}

/// Max-norm with its location plus RMS over unflagged nodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldSummary {
    pub max_abs: f64,
    pub argmax: Option<Vec<f64>>,
    pub rms: f64,
    pub counted: usize,
    pub flagged: usize,
}

impl CurvatureResult {
    pub fn flagged_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.point.flagged).count()
    }

    pub fn values(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.point.a).collect()
    }

    fn summarize(&self, f: impl Fn(&NodeCurvature) -> f64) -> FieldSummary {
        let mut max_abs = 0.0;
        let mut argmax = None;
        let mut sq = 0.0;
        let mut counted = 0;
        for node in self.nodes.iter().filter(|n| !n.point.flagged) {
            let v = f(node).abs();
            if argmax.is_none() || v > max_abs {
                max_abs = v;
                argmax = Some(node.xi.iter().copied().collect());
            }
            sq += v * v;
            counted += 1;
        }
        FieldSummary {
            max_abs,
            argmax,
            rms: if counted > 0 { (sq / counted as f64).sqrt() } else { 0.0 },
            counted,
            flagged: self.flagged_count(),
        }
    }

    /// Summary of `|A(u)|`.
    pub fn operator_summary(&self) -> FieldSummary {
        self.summarize(|n| n.point.a)
    }

    /// Summary of `|A(u) + K_target|`; nodes without a target count as zero.
    pub fn residual_summary(&self) -> FieldSummary {
        self.summarize(|n| n.residual().unwrap_or(0.0))
    }

    pub fn with_target(mut self, target: &CurvatureSpec) -> Self {
        for node in &mut self.nodes {
            node.k_target = Some(target.eval(&node.xi));
        }
        self
    }
}

/// Evaluates `A(u)` at every grid node in parallel, in node order.
pub fn abreu_operator(
    u: &SymplecticPotential,
    grid: &GridDomain,
    mode: Mode,
) -> Result<CurvatureResult, AbreuError> {
    if grid.is_empty() {
        return Err(AbreuError::EmptyGrid);
    }
    let h = grid.h();
    let nodes = grid
        .nodes()
        .par_iter()
        .map(|xi| {
            Ok(NodeCurvature {
                xi: xi.clone(),
                point: abreu_at(u, xi, mode, h)?,
                k_target: None,
            })
        })
        .collect::<Result<Vec<_>, AbreuError>>()?;
    Ok(CurvatureResult { mode, h, nodes })
}

/// `A(u) + K_target` over the grid with max-norm and RMS summaries.
pub fn residual(
    u: &SymplecticPotential,
    target: &CurvatureSpec,
    grid: &GridDomain,
    mode: Mode,
) -> Result<(CurvatureResult, FieldSummary), AbreuError> {
    target.check_dim(u.dim())?;
    let result = abreu_operator(u, grid, mode)?.with_target(target);
    let summary = result.residual_summary();
    Ok((result, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MembershipReport {
    pub pass: bool,
    pub b: f64,
    pub max_abs_a: f64,
    pub argmax: Option<Vec<f64>>,
    pub flagged: usize,
}

/// Whether `max |A(u)| ≤ b` over the grid; flagged nodes force a fail.
pub fn in_class_r(
    u: &SymplecticPotential,
    b: f64,
    grid: &GridDomain,
    mode: Mode,
) -> Result<MembershipReport, AbreuError> {
    if !(b >= 0.0 && b.is_finite()) {
        return Err(AbreuError::BadBound(b));
    }
    let result = abreu_operator(u, grid, mode)?;
    Ok(membership(&result, b))
}

/// Rounding slack of the `max |A(u)| ≤ b` comparison, relative to `max(1, b)`.
pub const MEMBERSHIP_SLACK: f64 = 1e-9;

pub fn membership(result: &CurvatureResult, b: f64) -> MembershipReport {
    let s = result.operator_summary();
    MembershipReport {
        pass: s.flagged == 0 && s.max_abs <= b + MEMBERSHIP_SLACK * b.max(1.0),
        b,
        max_abs_a: s.max_abs,
        argmax: s.argmax,
        flagged: s.flagged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polytope::DelzantPolytope;
    use crate::potential::Affine;
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn pt(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn cofactor_examples() {
        let (d, u) = cofactor(&DMatrix::from_element(1, 1, 4.0)).unwrap();
        assert_eq!((d, u[(0, 0)]), (4.0, 1.0));
        let (d, u) = cofactor(&DMatrix::from_diagonal(&pt(&[2.0, 3.0]))).unwrap();
        assert_eq!(d, 6.0);
        assert_eq!(u, DMatrix::from_diagonal(&pt(&[3.0, 2.0])));
        let (d, u) = cofactor(&DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        assert_eq!(d, 3.0);
        assert_eq!(u, DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]));
    }

    #[test]
    fn cofactor_times_matrix_is_det_identity() {
        for n in 1..=5 {
            let a = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.3 + if i == j { 2.0 } else { 0.0 });
            let h = &a * a.transpose();
            let (d, u) = cofactor(&h).unwrap();
            assert_abs_diff_eq!(d, h.determinant(), epsilon = 1e-10 * d.abs());
            assert_abs_diff_eq!(&u * &h, DMatrix::identity(n, n) * d, epsilon = 1e-9 * d.abs());
            assert_abs_diff_eq!(u.clone(), u.transpose(), epsilon = 1e-10 * d.abs());
        }
    }

    #[test]
    fn singular_cofactor_reports_condition() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(cofactor(&h), Err(AbreuError::Singular { .. })));
        let h4 = DMatrix::from_diagonal(&pt(&[1.0, 1.0, 1.0, 0.0]));
        assert!(matches!(cofactor(&h4), Err(AbreuError::Singular { .. })));
        let ns = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 4.0]);
        assert!(matches!(cofactor(&ns), Err(AbreuError::NotSymmetric { .. })));
    }

    #[test]
    fn guillemin_oracles_analytic() {
        let cases = [
            (DelzantPolytope::interval(0.0, 1.0), -2.0),
            (DelzantPolytope::standard_simplex(2), -6.0),
            (DelzantPolytope::unit_cube(2), -4.0),
            (DelzantPolytope::standard_simplex(3), -12.0),
        ];
        for (p, expected) in cases {
            let p = Arc::new(p);
            let v = SymplecticPotential::guillemin(Arc::clone(&p));
            let grid = p.interior_grid(0.1, 0.05).unwrap();
            let r = abreu_operator(&v, &grid, Mode::Analytic).unwrap();
            for node in &r.nodes {
                assert_abs_diff_eq!(node.point.a, expected, epsilon = 1e-9);
                assert_abs_diff_eq!(node.point.w * node.point.det_hess, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn interval_w_matches_closed_form() {
        let v = SymplecticPotential::guillemin(Arc::new(DelzantPolytope::interval(0.0, 1.0)));
        for x in [0.1, 0.5, 0.83] {
            let p = abreu_at(&v, &pt(&[x]), Mode::FiniteDifference, 1e-3).unwrap();
            assert_abs_diff_eq!(p.w, x * (1.0 - x), epsilon = 1e-15);
            // w is quadratic, so the centred difference is exact up to rounding.
            assert_abs_diff_eq!(p.a, -2.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn square_fd_is_exact_for_guillemin() {
        let p = Arc::new(DelzantPolytope::unit_cube(2));
        let v = SymplecticPotential::guillemin(Arc::clone(&p));
        let grid = p.interior_grid(1.0 / 32.0, 1.0 / 16.0).unwrap();
        let r = abreu_operator(&v, &grid, Mode::FiniteDifference).unwrap();
        assert!(r.nodes.iter().all(|n| (n.point.a + 4.0).abs() < 1e-9));
    }

    #[test]
    fn flat_potential_has_zero_operator() {
        let p = Arc::new(DelzantPolytope::unit_cube(2));
        let u = SymplecticPotential::half_square(Arc::clone(&p));
        let grid = p.interior_grid(0.1, 0.1).unwrap();
        for mode in [Mode::Analytic, Mode::FiniteDifference] {
            let r = abreu_operator(&u, &grid, mode).unwrap();
            assert!(r.nodes.iter().all(|n| n.point.a.abs() < 1e-12 && n.point.w == 1.0));
        }
        let (_, s) = residual(&u, &CurvatureSpec::constant(0.0), &grid, Mode::Analytic).unwrap();
        assert!(s.max_abs < 1e-12);
        assert!(in_class_r(&u, 0.0, &grid, Mode::Analytic).unwrap().pass);
    }

    #[test]
    fn residual_and_membership_on_interval() {
        let p = Arc::new(DelzantPolytope::interval(0.0, 1.0));
        let v = SymplecticPotential::guillemin(Arc::clone(&p));
        let grid = p.interior_grid(0.05, 0.05).unwrap();
        let (_, s) = residual(&v, &CurvatureSpec::constant(2.0), &grid, Mode::Analytic).unwrap();
        assert!(s.max_abs < 1e-10);
        let (r, s) = residual(&v, &CurvatureSpec::constant(0.0), &grid, Mode::Analytic).unwrap();
        assert_abs_diff_eq!(s.max_abs, 2.0, epsilon = 1e-10);
        assert!(r.nodes.iter().all(|n| (n.residual().unwrap() + 2.0).abs() < 1e-10));
        assert!(in_class_r(&v, 2.0 + 1e-9, &grid, Mode::Analytic).unwrap().pass);
        let fail = in_class_r(&v, 1.0, &grid, Mode::Analytic).unwrap();
        assert!(!fail.pass);
        assert!(fail.argmax.is_some());
        assert!(matches!(in_class_r(&v, -1.0, &grid, Mode::Analytic), Err(AbreuError::BadBound(_))));
    }

    #[test]
    fn nonconvex_nodes_are_flagged() {
        let p = Arc::new(DelzantPolytope::interval(0.0, 1.0));
        let bump = Polynomial::from_terms([(vec![2], -3.0), (vec![1], 3.0)]);
        let u = SymplecticPotential::with_polynomial(Arc::clone(&p), bump).unwrap();
        let grid = p.interior_grid(0.05, 0.05).unwrap();
        let r = abreu_operator(&u, &grid, Mode::Analytic).unwrap();
        assert!(r.flagged_count() > 0);
        assert!(r.flagged_count() < grid.len());
        let m = membership(&r, 1e9);
        assert!(!m.pass);
    }

    #[test]
    fn affine_shift_leaves_operator_unchanged() {
        let p = Arc::new(DelzantPolytope::standard_simplex(2));
        let v = SymplecticPotential::guillemin(Arc::clone(&p));
        let t = v.add_affine(&Affine {
            slope: vec![2.0, -1.5],
            constant: 0.3,
        });
        let x = pt(&[0.2, 0.5]);
        assert_eq!(
            abreu_at(&v, &x, Mode::Analytic, 0.0).unwrap().a,
            abreu_at(&t, &x, Mode::Analytic, 0.0).unwrap().a
        );
    }

    #[test]
    fn spec_json() {
        let k: CurvatureSpec = serde_json::from_str(r#"{"kind":"affine","a":[1,2],"b":0.5}"#).unwrap();
        assert_eq!(k.eval(&pt(&[1.0, 1.0])), 3.5);
        assert!(k.check_dim(3).is_err());
        let k: CurvatureSpec = serde_json::from_str(r#"{"kind":"polynomial","terms":[[[2],12],[[1],-12],[[0],4]]}"#).unwrap();
        assert_eq!(k.eval(&pt(&[0.5])), 1.0);
        assert!(serde_json::from_str::<CurvatureSpec>(r#"{"kind":"constant","value":1,"x":2}"#).is_err());
    }
}
