//! Candidate solutions of `A(u) + K = 0`.
//!
//! In one dimension the equation reads `w″ = −K` and is integrated exactly
//! under Guillemin boundary behaviour. On grids the perturbation `ψ` is found
//! by Levenberg–Marquardt on the finite-difference residual, with a band of
//! boundary values held fixed and the affine gauge fixed at a point.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abreu::{self, cofactor, AbreuError, CurvatureResult, CurvatureSpec, Mode};
use crate::estimates::{self, DetLowerReport, EstimateError};
use crate::polytope::{DelzantPolytope, GridDomain, PolytopeError};
use crate::potential::{
    centred_hessian, fd_gradient, fd_hessian, is_positive_definite, GridPsi, Perturbation, PotentialError,
    ProfilePsi, SymplecticPotential,
};
use crate::quadrature;

/// Feasibility residuals below this are treated as zero.
pub const FEASIBILITY_TOL: f64 = 1e-9;
const MAX_LAMBDA: f64 = 1e16;
const MIN_LAMBDA: f64 = 1e-18;
const MAX_BACKTRACK: usize = 30;
/// Residual target for intermediate band stages, which only seed the next one.
const STAGE_TOL: f64 = 1e-4;
const MAX_RAMP_HALVINGS: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Abreu(#[from] AbreuError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error("invalid solver configuration: {0}")]
    BadConfig(String),
    #[error("K is infeasible: ∫K − 2 = {}, ∫(ξ−α)K − (β−α) = {}", residuals[0], residuals[1])]
    Infeasible { residuals: [f64; 2] },
    #[error("non-metric solution: w changes sign at ξ = {location}")]
    NonMetric { location: f64 },
    #[error("the exact solver needs a one-dimensional interval")]
    NotOneDimensional,
    #[error("initial potential is not convex at ξ = {node:?}")]
    InitialNonConvex { node: Vec<f64> },
    #[error("initial perturbation has {found} values but the grid has {expected} nodes")]
    InitialSize { expected: usize, found: usize },
    #[error("band homotopy stalled at fraction {fraction}")]
    BandStalled { fraction: f64 },
    #[error("no node has a complete stencil; refine h or shrink the margin")]
    NoFreeNodes,
}

/// Solution of the one-dimensional problem.
#[derive(Debug, Clone)]
pub struct Solve1d {
    pub alpha: f64,
    pub beta: f64,
    /// Coefficients of `w` in increasing degree.
    pub w: Vec<f64>,
    /// Feasibility residuals (both zero within tolerance).
    pub residuals: [f64; 2],
    /// `u = v + ψ` with `ψ(m) = ψ′(m) = 0` at the midpoint `m`.
    pub potential: SymplecticPotential,
}

fn poly_eval(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

fn poly_coefficients(k: &CurvatureSpec) -> Result<Vec<f64>, SolveError> {
    k.check_dim(1)?;
    Ok(match k {
        CurvatureSpec::Constant { value } => vec![*value],
        CurvatureSpec::Affine { a, b } => vec![*b, a[0]],
        CurvatureSpec::Polynomial { terms } => {
            let mut c = vec![0.0; terms.degree() as usize + 1];
            for (e, v) in terms.terms() {
                c[e[0] as usize] += v;
            }
            c
        }
    })
}

/// Feasibility residuals `(∫K − 2, ∫(ξ−α)K − (β−α))` on `(α, β)`.
pub fn feasibility_residuals(k: &[f64], alpha: f64, beta: f64) -> [f64; 2] {
    let order = k.len() / 2 + 2;
    let i0 = quadrature::integrate(|t| poly_eval(k, t), alpha, beta, order, 1);
    let i1 = quadrature::integrate(|t| (t - alpha) * poly_eval(k, t), alpha, beta, order, 1);
    [i0 - 2.0, i1 - (beta - alpha)]
}

impl Solve1d {
    pub fn w_at(&self, xi: f64) -> f64 {
        poly_eval(&self.w, xi)
    }

    /// `w″` at `ξ`, which equals `−K(ξ)`.
    pub fn w_second(&self, xi: f64) -> f64 {
        let d2: Vec<f64> = self
            .w
            .iter()
            .enumerate()
            .skip(2)
            .map(|(j, c)| c * (j * (j - 1)) as f64)
            .collect();
        poly_eval(&d2, xi)
    }

    /// `ψ` at grid nodes.
    pub fn psi_on(&self, grid: &GridDomain) -> Result<Vec<f64>, SolveError> {
        let v = SymplecticPotential::guillemin(Arc::clone(self.potential.polytope()));
        grid.nodes()
            .iter()
            .map(|x| Ok(self.potential.value(x)? - v.value(x)?))
            .collect()
    }
}

/// Solves `w″ = −K` on `(α, β)` with `w(α) = w(β) = 0`, `w′(α) = 1`,
/// `w′(β) = −1`, and recovers `u` from `u″ = 1/w`.
pub fn solve_1d(k: &CurvatureSpec, polytope: Arc<DelzantPolytope>) -> Result<Solve1d, SolveError> {
    if polytope.dim() != 1 {
        return Err(SolveError::NotOneDimensional);
    }
    let vertices = polytope.vertices()?;
    let (alpha, beta) = match vertices.as_slice() {
        [a, b] => (a.point[0].min(b.point[0]), a.point[0].max(b.point[0])),
        _ => return Err(SolveError::NotOneDimensional),
    };
    let kc = poly_coefficients(k)?;
    let residuals = feasibility_residuals(&kc, alpha, beta);
    if residuals.iter().any(|r| r.abs() > FEASIBILITY_TOL) {
        return Err(SolveError::Infeasible { residuals });
    }
    // w = (ξ − α) − Σ_j k_j ∫_α^ξ (ξ − t) t^j dt
    let mut w = vec![0.0; kc.len() + 2];
    w[0] = -alpha;
    w[1] = 1.0;
    for (j, &c) in kc.iter().enumerate() {
        let (j1, j2) = ((j + 1) as f64, (j + 2) as f64);
        w[j + 2] -= c / (j1 * j2);
        w[1] += c * alpha.powi(j as i32 + 1) / j1;
        w[0] -= c * alpha.powi(j as i32 + 2) / j2;
    }
    if let Some(location) = first_nonpositive(&w, alpha, beta) {
        return Err(SolveError::NonMetric { location });
    }
    let psi = ProfilePsi {
        alpha,
        beta,
        anchor: 0.5 * (alpha + beta),
        w: w.clone(),
        coefficient: 1.0,
    };
    let potential = SymplecticPotential::new(polytope, true, Perturbation::Profile(psi))?;
    Ok(Solve1d {
        alpha,
        beta,
        w,
        residuals,
        potential,
    })
}

/// First point of `(α, β)` where `w ≤ 0`, by dense sampling then bisection.
fn first_nonpositive(w: &[f64], alpha: f64, beta: f64) -> Option<f64> {
    const SAMPLES: usize = 8192;
    let step = (beta - alpha) / SAMPLES as f64;
    let mut prev = alpha;
    for s in 1..SAMPLES {
        let x = alpha + s as f64 * step;
        if poly_eval(w, x) <= 0.0 {
            let (mut lo, mut hi) = (prev, x);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if poly_eval(w, mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Some(hi);
        }
        prev = x;
    }
    None
}

/// Where the fixed boundary band takes its values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BandSource {
    InitialGuess,
    Zero,
    /// Nodal values on the full solve grid; only band entries are used.
    Field { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    pub h: f64,
    pub margin: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub lambda0: f64,
    pub grow: f64,
    pub shrink: f64,
    /// Gauge point; the barycenter when absent.
    pub gauge: Option<Vec<f64>>,
    pub band: BandSource,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            h: 1.0 / 32.0,
            margin: 1.0 / 16.0,
            tol: 1e-8,
            max_iter: 50,
            lambda0: 1e-3,
            grow: 10.0,
            shrink: 0.3,
            gauge: None,
            band: BandSource::InitialGuess,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        let bad = |m: &str| Err(SolveError::BadConfig(m.into()));
        if !(self.h > 0.0 && self.h.is_finite()) {
            return bad("h must be positive");
        }
        if !(self.margin >= 2.0 * self.h * (1.0 - 1e-12)) {
            return bad("margin must be at least 2h");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if !(self.lambda0 > 0.0) || !(self.grow > 1.0) || !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad("damping needs lambda0 > 0, grow > 1, 0 < shrink < 1");
        }
        Ok(())
    }

    pub fn grid(&self, polytope: &Arc<DelzantPolytope>) -> Result<GridDomain, SolveError> {
        self.validate()?;
        Ok(polytope.interior_grid(self.h, self.margin)?)
    }
}

/// Summary of one band-homotopy stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageSummary {
    pub band_fraction: f64,
    pub iterations: usize,
    pub max_residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub grid: Arc<GridDomain>,
    /// `ψ` at every grid node, gauge-normalized.
    pub psi: Vec<f64>,
    pub free: Vec<bool>,
    /// `K` at free nodes, in node order.
    pub k: Vec<f64>,
    /// Max-norm of the residual after each accepted step of the final stage.
    pub history: Vec<f64>,
    /// `½‖r‖²` alongside `history`.
    pub objective: Vec<f64>,
    pub stages: Vec<StageSummary>,
    pub iterations: usize,
    pub converged: bool,
    pub tol: f64,
    pub gauge_node: usize,
}

impl SolveResult {
    pub fn potential(&self) -> SymplecticPotential {
        let psi = GridPsi::new(Arc::clone(&self.grid), self.psi.clone()).expect("sizes match");
        SymplecticPotential::new(Arc::clone(self.grid.polytope()), true, Perturbation::Grid(psi))
            .expect("same polytope")
    }

    pub fn free_grid(&self) -> GridDomain {
        self.grid.restrict(|k| self.free[k])
    }

    /// Finite-difference curvature at the free nodes with the target attached.
    pub fn curvature(&self) -> Result<CurvatureResult, SolveError> {
        let mut r = abreu::abreu_operator(&self.potential(), &self.free_grid(), Mode::FiniteDifference)?;
        for (node, &k) in r.nodes.iter_mut().zip(&self.k) {
            node.k_target = Some(k);
        }
        Ok(r)
    }

    pub fn max_residual(&self) -> f64 {
        self.history.last().copied().unwrap_or(f64::INFINITY)
    }

    /// Determinant lower bound with `b = max |K| + tol`, which bounds `|A(u)|`
    /// whenever the residual is within tolerance.
    pub fn det_check(&self) -> Result<DetLowerReport, SolveError> {
        let b = self.k.iter().fold(0.0f64, |m, k| m.max(k.abs())) + self.tol;
        Ok(estimates::check_det_lower(
            &self.potential(),
            Some(b),
            &self.free_grid(),
            Mode::FiniteDifference,
        )?)
    }
}

/// Residual evaluation on a fixed grid.
struct Problem {
    grid: Arc<GridDomain>,
    /// Guillemin Hessians at every node.
    vh: Vec<DMatrix<f64>>,
    /// Free node ids in node order.
    free: Vec<usize>,
    /// Position in `free` for each node.
    slot: Vec<Option<usize>>,
    k: Vec<f64>,
    stencil: Vec<(Vec<i64>, DMatrix<f64>)>,
}

impl Problem {
    fn new(grid: Arc<GridDomain>) -> Result<Self, SolveError> {
        let n = grid.dim();
        let v = SymplecticPotential::guillemin(Arc::clone(grid.polytope()));
        let vh = grid
            .nodes()
            .iter()
            .map(|x| v.hessian(x))
            .collect::<Result<Vec<_>, _>>()?;
        let offsets = offsets(n, 2);
        let free: Vec<usize> = (0..grid.len())
            .filter(|&k| offsets.iter().all(|o| grid.neighbor(k, o).is_some()))
            .collect();
        if free.is_empty() {
            return Err(SolveError::NoFreeNodes);
        }
        let mut slot = vec![None; grid.len()];
        for (s, &k) in free.iter().enumerate() {
            slot[k] = Some(s);
        }
        let stencil = hessian_stencil(n, grid.h());
        Ok(Self {
            grid,
            vh,
            free,
            slot,
            k: Vec::new(),
            stencil,
        })
    }

    fn hessian_at(&self, psi: &[f64], j: usize) -> Option<DMatrix<f64>> {
        Some(&self.vh[j] + fd_hessian(&self.grid, psi, j)?)
    }

    fn w_at(&self, psi: &[f64], j: usize) -> Option<f64> {
        let hm = self.hessian_at(psi, j)?;
        is_positive_definite(&hm).then(|| 1.0 / hm.determinant())
    }

    /// `A` at free slot `s`; `None` if any stencil Hessian is not positive definite.
    fn operator(&self, psi: &[f64], s: usize) -> Option<f64> {
        let i = self.free[s];
        let hm = self.hessian_at(psi, i)?;
        if !is_positive_definite(&hm) {
            return None;
        }
        let (_, cof) = cofactor(&hm).ok()?;
        let w2 = centred_hessian(self.grid.dim(), self.grid.h(), |o| {
            self.grid.neighbor(i, o).and_then(|j| self.w_at(psi, j))
        })?;
        Some(cof.component_mul(&w2).sum())
    }

    fn residuals(&self, psi: &[f64]) -> Option<Vec<f64>> {
        (0..self.free.len())
            .into_par_iter()
            .map(|s| self.operator(psi, s).map(|a| a + self.k[s]))
            .collect()
    }

    /// Positive-definiteness at every node with a Hessian stencil.
    fn convex(&self, psi: &[f64]) -> Result<(), usize> {
        match (0..self.grid.len())
            .into_par_iter()
            .find_first(|&j| matches!(self.hessian_at(psi, j), Some(hm) if !is_positive_definite(&hm)))
        {
            Some(j) => Err(j),
            None => Ok(()),
        }
    }

    /// Exact Jacobian of the discrete residual, row-major sparse: `rows[r] = [(col, value)]`.
    fn jacobian(&self, psi: &[f64]) -> Vec<Vec<(usize, f64)>> {
        (0..self.free.len())
            .into_par_iter()
            .map(|s| self.jacobian_row(psi, s).unwrap_or_default())
            .collect()
    }

    fn jacobian_row(&self, psi: &[f64], s: usize) -> Option<Vec<(usize, f64)>> {
        let n = self.grid.dim();
        let i = self.free[s];
        let hi = self.hessian_at(psi, i)?;
        let hi_inv = hi.clone().try_inverse()?;
        let det = hi.determinant();
        let (_, cof) = cofactor(&hi).ok()?;
        let mut w2 = DMatrix::zeros(n, n);
        let mut entries: Vec<(usize, f64)> = Vec::new();
        for (o, co) in &self.stencil {
            let m = self.grid.neighbor(i, o)?;
            let hm = self.hessian_at(psi, m)?;
            let hm_inv = hm.clone().try_inverse()?;
            let w = 1.0 / hm.determinant();
            w2 += co * w;
            let gamma = cof.component_mul(co).sum();
            for (q, cq) in &self.stencil {
                let oq: Vec<i64> = o.iter().zip(q).map(|(a, b)| a + b).collect();
                if let Some(c) = self.grid.neighbor(i, &oq).and_then(|j| self.slot[j]) {
                    entries.push((c, -gamma * w * hm_inv.component_mul(cq).sum()));
                }
            }
        }
        if n > 1 {
            for (q, cq) in &self.stencil {
                if let Some(c) = self.grid.neighbor(i, q).and_then(|j| self.slot[j]) {
                    let a = &hi_inv * cq * &hi_inv;
                    let d_cof = (&hi_inv * hi_inv.component_mul(cq).sum() - a) * det;
                    entries.push((c, d_cof.component_mul(&w2).sum()));
                }
            }
        }
        entries.sort_by_key(|e| e.0);
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
        for (c, v) in entries {
            match row.last_mut() {
                Some(last) if last.0 == c => last.1 += v,
                _ => row.push((c, v)),
            }
        }
        Some(row)
    }
}

/// Coefficients of the centred second-difference Hessian: `D²f ≈ Σ C_o f(x + h·o)`.
fn hessian_stencil(n: usize, h: f64) -> Vec<(Vec<i64>, DMatrix<f64>)> {
    let mut out: Vec<(Vec<i64>, DMatrix<f64>)> = Vec::new();
    let mut add = |o: Vec<i64>, a: usize, b: usize, c: f64| {
        let idx = match out.iter().position(|e| e.0 == o) {
            Some(k) => k,
            None => {
                out.push((o, DMatrix::zeros(n, n)));
                out.len() - 1
            }
        };
        out[idx].1[(a, b)] += c;
        if a != b {
            out[idx].1[(b, a)] += c;
        }
    };
    let h2 = h * h;
    for a in 0..n {
        let e = |sa: i64| {
            let mut o = vec![0i64; n];
            o[a] = sa;
            o
        };
        add(e(0), a, a, -2.0 / h2);
        add(e(1), a, a, 1.0 / h2);
        add(e(-1), a, a, 1.0 / h2);
        for b in a + 1..n {
            for (sa, sb, sign) in [(1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)] {
                let mut o = vec![0i64; n];
                o[a] = sa;
                o[b] = sb;
                add(o, a, b, sign / (4.0 * h2));
            }
        }
    }
    out
}

fn offsets(n: usize, radius: i64) -> Vec<Vec<i64>> {
    let side = (2 * radius + 1) as usize;
    (0..side.pow(n as u32))
        .map(|mut code| {
            let mut o = vec![0i64; n];
            for d in (0..n).rev() {
                o[d] = (code % side) as i64 - radius;
                code /= side;
            }
            o
        })
        .collect()
}

fn max_abs(r: &[f64]) -> f64 {
    r.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn half_square(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|x| x * x).sum::<f64>()
}

struct StageOutcome {
    history: Vec<f64>,
    objective: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// Levenberg–Marquardt on the free values of `psi` (band held fixed).
fn levenberg_marquardt(problem: &Problem, psi: &mut [f64], config: &SolveConfig, tol: f64) -> StageOutcome {
    let m = problem.free.len();
    let mut r = problem.residuals(psi).expect("caller checks convexity");
    let mut history = vec![max_abs(&r)];
    let mut objective = vec![half_square(&r)];
    let mut lambda = config.lambda0;
    let mut iterations = 0;
    while iterations < config.max_iter && max_abs(&r) > tol {
        iterations += 1;
        let rows = problem.jacobian(psi);
        let mut jac = DMatrix::<f64>::zeros(m, m);
        for (i, row) in rows.iter().enumerate() {
            for &(c, v) in row {
                jac[(i, c)] = v;
            }
        }
        let rhs = -DVector::from_column_slice(&r);
        let mut attempt = |step: &DVector<f64>| -> bool {
            let mut trial = psi.to_vec();
            for (s, &node) in problem.free.iter().enumerate() {
                trial[node] += step[s];
            }
            if problem.convex(&trial).is_err() {
                return false;
            }
            let Some(rt) = problem.residuals(&trial) else {
                return false;
            };
            let (obj, mx) = (half_square(&rt), max_abs(&rt));
            if obj < *objective.last().unwrap() && mx <= *history.last().unwrap() {
                psi.copy_from_slice(&trial);
                r = rt;
                history.push(mx);
                objective.push(obj);
                return true;
            }
            false
        };
        // Along the Newton direction every residual component shrinks to
        // first order, so a short enough step is accepted.
        let mut accepted = false;
        if let Some(newton) = jac.clone().lu().solve(&rhs).filter(|d| d.iter().all(|v| v.is_finite())) {
            let mut alpha = 1.0;
            for _ in 0..MAX_BACKTRACK {
                if attempt(&(&newton * alpha)) {
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
        }
        if accepted {
            lambda = (lambda * config.shrink).max(MIN_LAMBDA);
            continue;
        }
        // The operator is fourth order, so JᵀJ would square an already large
        // condition number; the damped step is formed from the SVD instead.
        let svd = jac.svd(true, true);
        let (u, vt) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
        let sigma = &svd.singular_values;
        let smax2 = sigma.max().powi(2).max(f64::MIN_POSITIVE);
        let utr = u.transpose() * &rhs;
        let direction = |lambda: f64| {
            vt.transpose() * DVector::from_fn(m, |i, _| sigma[i] * utr[i] / (sigma[i] * sigma[i] + lambda * smax2))
        };
        while !accepted && lambda <= MAX_LAMBDA {
            accepted = attempt(&direction(lambda));
            if !accepted {
                lambda *= config.grow;
            }
        }
        if !accepted {
            break;
        }
    }
    StageOutcome {
        converged: max_abs(&r) <= tol,
        history,
        objective,
        iterations,
    }
}

/// Subtracts the affine function matching `ψ(p)` and the centred `∇ψ(p)`.
pub fn gauge_normalize(grid: &GridDomain, psi: &mut [f64], p: usize) -> Result<(), SolveError> {
    let g = fd_gradient(grid, psi, p).ok_or_else(|| SolveError::BadConfig("gauge node lacks a gradient stencil".into()))?;
    let base = psi[p];
    let xp = grid.node(p).clone();
    for (j, value) in psi.iter_mut().enumerate() {
        *value -= base + g.dot(&(grid.node(j) - &xp));
    }
    psi[p] = 0.0;
    Ok(())
}

fn gauge_node(problem: &Problem, config: &SolveConfig) -> Result<usize, SolveError> {
    let grid = &problem.grid;
    let target = match &config.gauge {
        Some(p) => DVector::from_column_slice(p),
        None => grid.polytope().barycenter()?,
    };
    let mut best: Option<(f64, usize)> = None;
    for &k in &problem.free {
        let d = (grid.node(k) - &target).norm();
        if best.is_none_or(|(bd, _)| d < bd - 1e-12) {
            best = Some((d, k));
        }
    }
    Ok(best.expect("free nodes exist").1)
}

/// Solves on `grid` for per-free-node targets `k`.
fn solve_on(
    problem: &mut Problem,
    k: Vec<f64>,
    config: &SolveConfig,
    psi0: &[f64],
) -> Result<SolveResult, SolveError> {
    let grid = Arc::clone(&problem.grid);
    if psi0.len() != grid.len() {
        return Err(SolveError::InitialSize {
            expected: grid.len(),
            found: psi0.len(),
        });
    }
    problem.k = k;
    if let Err(j) = problem.convex(psi0) {
        return Err(SolveError::InitialNonConvex {
            node: grid.node(j).iter().copied().collect(),
        });
    }
    let target_band: Vec<f64> = match &config.band {
        BandSource::InitialGuess => psi0.to_vec(),
        BandSource::Zero => vec![0.0; grid.len()],
        BandSource::Field { values } => {
            if values.len() != grid.len() {
                return Err(SolveError::InitialSize {
                    expected: grid.len(),
                    found: values.len(),
                });
            }
            values.clone()
        }
    };
    let is_free: Vec<bool> = problem.slot.iter().map(Option::is_some).collect();
    let mut psi = psi0.to_vec();
    let mut stages = Vec::new();
    let needs_ramp = (0..grid.len()).any(|j| !is_free[j] && target_band[j] != psi0[j]);
    let mut fraction: f64 = if needs_ramp { 0.0 } else { 1.0 };
    let mut increment: f64 = 1.0;
    let band_at = |t: f64, j: usize| (1.0 - t) * psi0[j] + t * target_band[j];
    let outcome = loop {
        if fraction < 1.0 {
            let mut halvings = 0;
            loop {
                let next = (fraction + increment).min(1.0);
                let mut trial = psi.clone();
                for j in (0..grid.len()).filter(|&j| !is_free[j]) {
                    trial[j] = band_at(next, j);
                }
                if problem.convex(&trial).is_ok() && problem.residuals(&trial).is_some() {
                    psi = trial;
                    fraction = next;
                    increment *= 2.0;
                    break;
                }
                increment *= 0.5;
                halvings += 1;
                if halvings > MAX_RAMP_HALVINGS {
                    return Err(SolveError::BandStalled { fraction });
                }
            }
        } else if problem.residuals(&psi).is_none() {
            let j = problem.convex(&psi).err().unwrap_or(0);
            return Err(SolveError::InitialNonConvex {
                node: grid.node(j).iter().copied().collect(),
            });
        }
        let tol = if fraction >= 1.0 { config.tol } else { config.tol.max(STAGE_TOL) };
        let outcome = levenberg_marquardt(problem, &mut psi, config, tol);
        stages.push(StageSummary {
            band_fraction: fraction,
            iterations: outcome.iterations,
            max_residual: *outcome.history.last().unwrap(),
            converged: outcome.converged,
        });
        if fraction >= 1.0 {
            break outcome;
        }
    };
    let gauge = gauge_node(problem, config)?;
    gauge_normalize(&grid, &mut psi, gauge)?;
    Ok(SolveResult {
        k: problem.k.clone(),
        free: is_free,
        psi,
        history: outcome.history,
        objective: outcome.objective,
        iterations: stages.iter().map(|s| s.iterations).sum(),
        stages,
        converged: outcome.converged,
        tol: config.tol,
        gauge_node: gauge,
        grid,
    })
}

/// Solves `A(v + ψ) + K = 0` on the interior grid of `config` starting from
/// nodal values `psi0` (zeros when absent).
pub fn solve_nd(
    polytope: Arc<DelzantPolytope>,
    k: &CurvatureSpec,
    config: &SolveConfig,
    psi0: Option<&[f64]>,
) -> Result<SolveResult, SolveError> {
    k.check_dim(polytope.dim())?;
    let grid = Arc::new(config.grid(&polytope)?);
    let mut problem = Problem::new(Arc::clone(&grid))?;
    let targets = problem.free.iter().map(|&j| k.eval(grid.node(j))).collect();
    let zeros = vec![0.0; grid.len()];
    solve_on(&mut problem, targets, config, psi0.unwrap_or(&zeros))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepSummary {
    pub step: usize,
    pub t: f64,
    pub iterations: usize,
    pub max_residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct ContinuationResult {
    pub steps: Vec<StepSummary>,
    /// Result of the last step attempted.
    pub result: SolveResult,
    /// First non-converged step, if the chain was aborted.
    pub aborted_at: Option<usize>,
}

/// Homotopy `K_t = (1 − t)·K_v + t·K_target`, `t = s/steps`, where
/// `K_v = −A_fd(v)` on the solve grid; each step is warm-started.
pub fn continuation(
    polytope: Arc<DelzantPolytope>,
    k: &CurvatureSpec,
    steps: usize,
    config: &SolveConfig,
    psi0: Option<&[f64]>,
) -> Result<ContinuationResult, SolveError> {
    if steps == 0 {
        return Err(SolveError::BadConfig("steps must be at least 1".into()));
    }
    k.check_dim(polytope.dim())?;
    let grid = Arc::new(config.grid(&polytope)?);
    let mut problem = Problem::new(Arc::clone(&grid))?;
    let zeros = vec![0.0; grid.len()];
    problem.k = vec![0.0; problem.free.len()];
    let k_v: Vec<f64> = problem
        .residuals(&zeros)
        .ok_or(SolveError::InitialNonConvex { node: Vec::new() })?
        .into_iter()
        .map(|a| -a)
        .collect();
    let k_target: Vec<f64> = problem.free.iter().map(|&j| k.eval(grid.node(j))).collect();
    let mut psi = psi0.map(<[f64]>::to_vec).unwrap_or(zeros);
    let mut summaries = Vec::new();
    let mut config = config.clone();
    let mut result = None;
    for s in 1..=steps {
        let t = s as f64 / steps as f64;
        let targets = k_v.iter().zip(&k_target).map(|(a, b)| (1.0 - t) * a + t * b).collect();
        let r = solve_on(&mut problem, targets, &config, &psi)?;
        summaries.push(StepSummary {
            step: s,
            t,
            iterations: r.iterations,
            max_residual: r.max_residual(),
            converged: r.converged,
        });
        psi = r.psi.clone();
        // The band is in place after the first step.
        config.band = BandSource::InitialGuess;
        let converged = r.converged;
        result = Some(r);
        if !converged {
            return Ok(ContinuationResult {
                steps: summaries,
                result: result.unwrap(),
                aborted_at: Some(s),
            });
        }
    }
    Ok(ContinuationResult {
        steps: summaries,
        result: result.unwrap(),
        aborted_at: None,
    })
}
