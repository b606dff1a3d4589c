//! Explicit quantities of the interior estimates: the determinant lower
//! bound `d₁`, the determinant ratio `H`, the Ricci norm `𝒦` of the reference
//! metric, and the right-hand side of the `H` upper bound.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::abreu::{self, abreu_at, AbreuError, CurvatureResult, Mode};
use crate::legendre::{legendre_field, LegendreError, LegendrePoint, XGrid};
use crate::polytope::{GridDomain, PolytopeError};
use crate::potential::SymplecticPotential;

pub const RICCI_CONVENTION: &str = "|Ric| = sqrt(tr((M^-1 P)^2)), M = D^2 g, P = D^2 log det M in x-coordinates; kappa is a box estimate";
pub const CURVATURE_ASSUMPTION: &str = "|S| is taken as max |A(u)| over the xi-grid, transported by the moment map";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error(transparent)]
    Abreu(#[from] AbreuError),
    #[error(transparent)]
    Legendre(#[from] LegendreError),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error("b = 0 makes d1 undefined")]
    ZeroBound,
    #[error("invalid argument: {0}")]
    BadArgument(String),
    #[error("no x-grid node has a complete fourth-order stencil")]
    NoStencil,
}

/// `d₁ = (4·b·diam²/n)^(−n)`.
pub fn d1_bound(b: f64, diam: f64, n: usize) -> Result<f64, EstimateError> {
    if b == 0.0 {
        return Err(EstimateError::ZeroBound);
    }
    if !(b > 0.0 && b.is_finite()) || !(diam > 0.0 && diam.is_finite()) || n == 0 {
        return Err(EstimateError::BadArgument(format!(
            "d1 needs b > 0, diam > 0, n >= 1 (got {b}, {diam}, {n})"
        )));
    }
    Ok((4.0 * b * diam * diam / n as f64).powi(-(n as i32)))
}

/// `(2 + S/(n(𝒦+1)))ⁿ · exp((2𝒦+1)·osc)`.
pub fn prop31_rhs(max_abs_s: f64, kappa: f64, osc_phi: f64, n: usize) -> f64 {
    (2.0 + max_abs_s / (n as f64 * (kappa + 1.0))).powi(n as i32) * ((2.0 * kappa + 1.0) * osc_phi).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Fail,
    PreconditionViolated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetLowerReport {
    pub outcome: Outcome,
    pub b: f64,
    pub max_abs_a: f64,
    pub d1: f64,
    pub min_det: f64,
    pub argmin: Vec<f64>,
    pub margin: f64,
    pub flagged: usize,
}

/// `min det D²u ≥ d₁(b, Diam Δ, n)` over the grid. `b` defaults to
/// `max |A(u)|`; a class-membership failure gives
/// [`Outcome::PreconditionViolated`].
pub fn check_det_lower(
    u: &SymplecticPotential,
    b: Option<f64>,
    grid: &GridDomain,
    mode: Mode,
) -> Result<DetLowerReport, EstimateError> {
    let result = abreu::abreu_operator(u, grid, mode)?;
    det_lower_from(&result, u, b)
}

pub fn det_lower_from(
    result: &CurvatureResult,
    u: &SymplecticPotential,
    b: Option<f64>,
) -> Result<DetLowerReport, EstimateError> {
    let summary = result.operator_summary();
    let b = b.unwrap_or(summary.max_abs);
    let d1 = d1_bound(b, u.polytope().diameter()?, u.dim())?;
    let (mut min_det, mut argmin) = (f64::INFINITY, Vec::new());
    for node in &result.nodes {
        if node.point.det_hess < min_det {
            min_det = node.point.det_hess;
            argmin = node.xi.iter().copied().collect();
        }
    }
    let member = abreu::membership(result, b);
    let outcome = if !member.pass {
        Outcome::PreconditionViolated
    } else if min_det >= d1 {
        Outcome::Pass
    } else {
        Outcome::Fail
    };
    Ok(DetLowerReport {
        outcome,
        b,
        max_abs_a: summary.max_abs,
        d1,
        min_det,
        argmin,
        margin: min_det - d1,
        flagged: summary.flagged,
    })
}

/// `H = det D²u(ξ_f(x)) / det D²v(ξ_g(x))`, i.e. `det M_g / det M_f`.
fn h_value(f: &LegendrePoint, g: &LegendrePoint) -> f64 {
    f.primal_hessian.determinant() / g.primal_hessian.determinant()
}

pub fn h_field(u: &SymplecticPotential, grid: &XGrid) -> Result<Vec<f64>, EstimateError> {
    let v = SymplecticPotential::guillemin(Arc::clone(u.polytope()));
    let fs = legendre_field(u, grid)?;
    let gs = legendre_field(&v, grid)?;
    Ok(fs.iter().zip(&gs).map(|(f, g)| h_value(f, g)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RicciField {
    /// `‖Ric‖` per node; `None` where the stencil leaves the box.
    pub norm: Vec<Option<f64>>,
    /// `tr(M⁻¹P)` per node.
    pub trace: Vec<Option<f64>>,
    pub kappa: f64,
    pub argmax: Vec<f64>,
}

const D1: [(i64, f64); 4] = [(-2, 1.0), (-1, -8.0), (1, 8.0), (2, -1.0)];
const D2: [(i64, f64); 5] = [(-2, -1.0), (-1, 16.0), (0, -30.0), (1, 16.0), (2, -1.0)];

/// Fourth-order centred Hessian of nodal values on the x-grid.
fn hessian4(grid: &XGrid, values: &[f64], k: usize) -> Option<DMatrix<f64>> {
    let n = grid.dim();
    let h = grid.h();
    let mut m = DMatrix::zeros(n, n);
    let mut o = vec![0i64; n];
    for i in 0..n {
        let mut s = 0.0;
        for (a, c) in D2 {
            o[i] = a;
            s += c * values[grid.neighbor(k, &o)?];
        }
        o[i] = 0;
        m[(i, i)] = s / (12.0 * h * h);
        for j in i + 1..n {
            let mut s = 0.0;
            for (a, ca) in D1 {
                for (b, cb) in D1 {
                    o[i] = a;
                    o[j] = b;
                    s += ca * cb * values[grid.neighbor(k, &o)?];
                }
            }
            o[i] = 0;
            o[j] = 0;
            let mixed = s / (144.0 * h * h);
            m[(i, j)] = mixed;
            m[(j, i)] = mixed;
        }
    }
    Some(m)
}

/// Ricci data from Legendre values on the whole grid.
pub fn ricci_from_points(points: &[LegendrePoint], grid: &XGrid) -> Result<RicciField, EstimateError> {
    // log det M = −log det D²u(ξ(x))
    let log_det: Vec<f64> = points.iter().map(|p| -p.primal_hessian.determinant().ln()).collect();
    let pairs: Vec<(Option<f64>, Option<f64>)> = (0..grid.len())
        .into_par_iter()
        .map(|k| match hessian4(grid, &log_det, k) {
            Some(p) => {
                let q = &points[k].primal_hessian * p;
                (Some((&q * &q).trace().max(0.0).sqrt()), Some(q.trace()))
            }
            None => (None, None),
        })
        .collect();
    let (norm, trace): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let mut best: Option<usize> = None;
    for (k, v) in norm.iter().enumerate() {
        if let Some(v) = v {
            if best.is_none_or(|b| *v > norm[b].unwrap()) {
                best = Some(k);
            }
        }
    }
    let best = best.ok_or(EstimateError::NoStencil)?;
    Ok(RicciField {
        kappa: norm[best].unwrap(),
        argmax: points[best].x.iter().copied().collect(),
        norm,
        trace,
    })
}

/// Ricci norm of the metric with Kähler potential dual to `reference`.
pub fn ricci_field(reference: &SymplecticPotential, grid: &XGrid) -> Result<RicciField, EstimateError> {
    let points = legendre_field(reference, grid)?;
    ricci_from_points(&points, grid)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Margins {
    pub lemma32: f64,
    pub prop31: f64,
    pub pointwise: f64,
    pub dual_det: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub n: usize,
    pub b: f64,
    #[serde(rename = "max_abs_S")]
    pub max_abs_s: f64,
    pub d1: f64,
    pub min_det: f64,
    pub min_det_argmin: Vec<f64>,
    #[serde(rename = "H_max")]
    pub h_max: f64,
    #[serde(rename = "H_argmax")]
    pub h_argmax: Vec<f64>,
    pub kappa: f64,
    pub kappa_argmax: Vec<f64>,
    pub max_phi: f64,
    pub min_phi: f64,
    pub osc_phi: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub rhs_33: f64,
    #[serde(rename = "F_max")]
    pub f_max: f64,
    #[serde(rename = "F_argmax")]
    pub f_argmax: Vec<f64>,
    #[serde(rename = "F_argmax_interior")]
    pub f_argmax_interior: bool,
    /// `max det M_f(x)` over the box, to compare with `1/d₁`.
    pub max_dual_det: f64,
    /// `max |tr(M_f⁻¹P_f)(x) − A(u)(ξ_f(x))|` over stencil-complete nodes.
    pub duality_defect: f64,
    pub flagged: usize,
    pub pass_lemma32: bool,
    pub pass_prop31: bool,
    pub pass_pointwise: bool,
    pub pass_dual_det: bool,
    pub margins: Margins,
    pub conventions: Vec<&'static str>,
}

/// Evaluates every quantity of the determinant-ratio estimate for `u`:
/// `|S|` and `min det` on `xi_grid`, and `φ`, `H`, `𝒦`, `ℱ` on `x_grid`.
pub fn verify_prop31(
    u: &SymplecticPotential,
    x_grid: &XGrid,
    xi_grid: &GridDomain,
    mode: Mode,
) -> Result<EstimateReport, EstimateError> {
    let n = u.dim();
    let curvature = abreu::abreu_operator(u, xi_grid, mode)?;
    let lemma = det_lower_from(&curvature, u, None)?;
    let max_abs_s = lemma.max_abs_a;

    let v = SymplecticPotential::guillemin(Arc::clone(u.polytope()));
    let fs = legendre_field(u, x_grid)?;
    let gs = legendre_field(&v, x_grid)?;
    let ricci = ricci_from_points(&gs, x_grid)?;
    let kappa = ricci.kappa;
    let c = 2.0 * kappa + 1.0;

    let phi: Vec<f64> = fs.iter().zip(&gs).map(|(f, g)| f.f - g.f).collect();
    let hs: Vec<f64> = fs.iter().zip(&gs).map(|(f, g)| h_value(f, g)).collect();
    let argmax = |v: &[f64]| (0..v.len()).fold(0, |b, k| if v[k] > v[b] { k } else { b });
    let max_phi = phi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_phi = phi.iter().copied().fold(f64::INFINITY, f64::min);
    let osc_phi = max_phi - min_phi;
    let kh = argmax(&hs);
    let h_max = hs[kh];
    let rhs_33 = prop31_rhs(max_abs_s, kappa, osc_phi, n);

    let big_f: Vec<f64> = phi.iter().zip(&hs).map(|(p, h)| (-c * p).exp() * h).collect();
    let kf = argmax(&big_f);
    let pointwise_rhs = (2.0 + max_abs_s / (n as f64 * (kappa + 1.0))).powi(n as i32) * (-c * min_phi).exp();

    let max_dual_det = fs.iter().map(|p| p.det_hessian()).fold(0.0, f64::max);

    let f_ricci = ricci_from_points(&fs, x_grid)?;
    let defects = fs
        .par_iter()
        .zip(&f_ricci.trace)
        .map(|(p, t)| match t {
            Some(t) => Ok((t - abreu_at(u, &p.xi, mode, xi_grid.h())?.a).abs()),
            None => Ok(0.0),
        })
        .collect::<Result<Vec<f64>, AbreuError>>()?;
    let duality_defect = defects.into_iter().fold(0.0, f64::max);

    let flagged = lemma.flagged;
    let clean = flagged == 0;
    let margins = Margins {
        lemma32: lemma.margin,
        prop31: rhs_33 - h_max,
        pointwise: pointwise_rhs - big_f[kf],
        dual_det: 1.0 / lemma.d1 - max_dual_det,
    };
    Ok(EstimateReport {
        n,
        b: lemma.b,
        max_abs_s,
        d1: lemma.d1,
        min_det: lemma.min_det,
        min_det_argmin: lemma.argmin,
        h_max,
        h_argmax: x_grid.node(kh).iter().copied().collect(),
        kappa,
        kappa_argmax: ricci.argmax,
        max_phi,
        min_phi,
        osc_phi,
        c,
        rhs_33,
        f_max: big_f[kf],
        f_argmax: x_grid.node(kf).iter().copied().collect(),
        f_argmax_interior: !x_grid.on_boundary(kf),
        max_dual_det,
        duality_defect,
        flagged,
        pass_lemma32: clean && lemma.outcome == Outcome::Pass,
        pass_prop31: clean && margins.prop31 >= 0.0,
        pass_pointwise: clean && margins.pointwise >= 0.0,
        pass_dual_det: clean && margins.dual_det >= 0.0,
        margins,
        conventions: vec![abreu::CONVENTION, RICCI_CONVENTION, CURVATURE_ASSUMPTION],
    })
}
