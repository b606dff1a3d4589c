//! Sparse multivariate polynomials with exact derivative evaluation.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// `Σ c_α ξ^α`, stored as `(α, c_α)` pairs with distinct exponents.
///
/// JSON form is a list of `[[α_1, …, α_n], c]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<(Vec<u32>, f64)>", into = "Vec<(Vec<u32>, f64)>")]
pub struct Polynomial {
    terms: BTreeMap<Vec<u32>, f64>,
}

impl From<Vec<(Vec<u32>, f64)>> for Polynomial {
    fn from(terms: Vec<(Vec<u32>, f64)>) -> Self {
        Self::from_terms(terms)
    }
}

impl From<Polynomial> for Vec<(Vec<u32>, f64)> {
    fn from(p: Polynomial) -> Self {
        p.terms.into_iter().collect()
    }
}

impl Polynomial {
    pub fn zero() -> Self {
        Self {
            terms: BTreeMap::new(),
        }
    }

    pub fn from_terms(terms: impl IntoIterator<Item = (Vec<u32>, f64)>) -> Self {
        let mut out = Self::zero();
        for (exp, c) in terms {
            out.add_term(exp, c);
        }
        out
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::from_terms([(vec![0; dim], c)])
    }

    /// `½|ξ − center|²`.
    pub fn half_square_distance(center: &[f64]) -> Self {
        let dim = center.len();
        let mut terms = Vec::new();
        for (i, &c) in center.iter().enumerate() {
            let mut e2 = vec![0; dim];
            e2[i] = 2;
            terms.push((e2, 0.5));
            let mut e1 = vec![0; dim];
            e1[i] = 1;
            terms.push((e1, -c));
            terms.push((vec![0; dim], 0.5 * c * c));
        }
        Self::from_terms(terms)
    }

    fn add_term(&mut self, exp: Vec<u32>, c: f64) {
        if c == 0.0 {
            return;
        }
        let slot = self.terms.entry(exp.clone()).or_insert(0.0);
        *slot += c;
        if *slot == 0.0 {
            self.terms.remove(&exp);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u32>, &f64)> {
        self.terms.iter()
    }

    /// True when every exponent has `dim` entries.
    pub fn check_dim(&self, dim: usize) -> bool {
        self.terms.keys().all(|e| e.len() == dim)
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|e| e.iter().sum())
            .max()
            .unwrap_or(0)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_terms(self.terms.iter().map(|(e, c)| (e.clone(), c * s)))
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::from_terms(
            self.terms
                .iter()
                .chain(other.terms.iter())
                .map(|(e, c)| (e.clone(), *c)),
        )
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero();
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let e = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                out.add_term(e, ca * cb);
            }
        }
        out
    }

    /// `∂^α p (ξ)` for the multi-index `orders`.
    pub fn derivative_at(&self, orders: &[u32], xi: &[f64]) -> f64 {
        let mut total = 0.0;
        for (exp, &c) in &self.terms {
            let mut term = c;
            for ((&e, &d), &x) in exp.iter().zip(orders).zip(xi) {
                if d > e {
                    term = 0.0;
                    break;
                }
                // e!/(e−d)!
                for k in 0..d {
                    term *= (e - k) as f64;
                }
                term *= x.powi((e - d) as i32);
            }
            total += term;
        }
        total
    }

    pub fn eval(&self, xi: &[f64]) -> f64 {
        self.derivative_at(&vec![0; xi.len()], xi)
    }

    pub fn gradient(&self, xi: &[f64]) -> DVector<f64> {
        let n = xi.len();
        DVector::from_fn(n, |i, _| self.derivative_at(&unit_orders(n, &[i]), xi))
    }

    pub fn hessian(&self, xi: &[f64]) -> DMatrix<f64> {
        let n = xi.len();
        DMatrix::from_fn(n, n, |i, j| self.derivative_at(&unit_orders(n, &[i, j]), xi))
    }

    /// `ξ ↦ p(Tξ)` for a square matrix `T`.
    pub fn compose_linear(&self, t: &DMatrix<f64>) -> Self {
        let n = t.nrows();
        // Row i of T as a linear polynomial.
        let rows: Vec<Polynomial> = (0..n)
            .map(|i| {
                Self::from_terms((0..n).map(|j| {
                    let mut e = vec![0; n];
                    e[j] = 1;
                    (e, t[(i, j)])
                }))
            })
            .collect();
        let mut out = Self::zero();
        for (exp, &c) in &self.terms {
            let mut term = Self::constant(n, c);
            for (i, &e) in exp.iter().enumerate() {
                for _ in 0..e {
                    term = term.mul(&rows[i]);
                }
            }
            out = out.add(&term);
        }
        out
    }
}

/// Multi-index with one unit per listed axis.
pub(crate) fn unit_orders(n: usize, axes: &[usize]) -> Vec<u32> {
    let mut orders = vec![0; n];
    for &a in axes {
        orders[a] += 1;
    }
    orders
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn derivatives_of_monomials() {
        // p = 3 x² y + y³
        let p = Polynomial::from_terms([(vec![2, 1], 3.0), (vec![0, 3], 1.0)]);
        let x = [2.0, -1.0];
        assert_abs_diff_eq!(p.eval(&x), 3.0 * 4.0 * -1.0 - 1.0);
        assert_abs_diff_eq!(p.derivative_at(&[1, 0], &x), 6.0 * 2.0 * -1.0);
        assert_abs_diff_eq!(p.derivative_at(&[0, 1], &x), 3.0 * 4.0 + 3.0);
        assert_abs_diff_eq!(p.derivative_at(&[2, 1], &x), 6.0);
        assert_abs_diff_eq!(p.derivative_at(&[0, 3], &x), 6.0);
        assert_abs_diff_eq!(p.derivative_at(&[3, 0], &x), 0.0);
        assert_eq!(p.degree(), 3);
    }

    #[test]
    fn compose_with_shear() {
        let p = Polynomial::from_terms([(vec![2, 0], 1.0), (vec![1, 1], 2.0)]);
        let t = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let q = p.compose_linear(&t);
        let x = [0.3, -0.7];
        let tx = [x[0] + x[1], x[1]];
        assert_abs_diff_eq!(q.eval(&x), p.eval(&tx), epsilon = 1e-14);
    }

    #[test]
    fn cancelled_terms_vanish() {
        let p = Polynomial::from_terms([(vec![1], 2.0), (vec![1], -2.0)]);
        assert_eq!(p, Polynomial::zero());
    }

    #[test]
    fn json_shape() {
        let p: Polynomial = serde_json::from_str("[[[2],0.5],[[0],1.0]]").unwrap();
        assert_abs_diff_eq!(p.eval(&[2.0]), 3.0);
    }
}
