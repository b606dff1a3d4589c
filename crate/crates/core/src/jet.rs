//! Second-order jets: a value together with its exact gradient and Hessian.
//!
//! Arithmetic on jets applies the product and quotient rules, so composing
//! facet-function and monomial rules yields exact second derivatives of
//! quantities like `1 / det D²u` without finite differences.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

impl Jet {
    pub fn constant(n: usize, value: f64) -> Self {
        Self {
            value,
            grad: DVector::zeros(n),
            hess: DMatrix::zeros(n, n),
        }
    }

    /// An affine function `a + ⟨g, ·⟩` at the evaluation point.
    pub fn affine(value: f64, grad: DVector<f64>) -> Self {
        let n = grad.len();
        Self {
            value,
            grad,
            hess: DMatrix::zeros(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.grad.len()
    }

    pub fn add(&self, o: &Self) -> Self {
        Self {
            value: self.value + o.value,
            grad: &self.grad + &o.grad,
            hess: &self.hess + &o.hess,
        }
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self {
            value: self.value - o.value,
            grad: &self.grad - &o.grad,
            hess: &self.hess - &o.hess,
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            value: self.value * s,
            grad: &self.grad * s,
            hess: &self.hess * s,
        }
    }

    pub fn mul(&self, o: &Self) -> Self {
        let cross = &self.grad * o.grad.transpose();
        Self {
            value: self.value * o.value,
            grad: &o.grad * self.value + &self.grad * o.value,
            hess: &o.hess * self.value + &self.hess * o.value + &cross + cross.transpose(),
        }
    }

    pub fn recip(&self) -> Self {
        let r = 1.0 / self.value;
        let r2 = r * r;
        Self {
            value: r,
            grad: &self.grad * -r2,
            hess: &self.hess * -r2 + (&self.grad * self.grad.transpose()) * (2.0 * r2 * r),
        }
    }

    pub fn div(&self, o: &Self) -> Self {
        self.mul(&o.recip())
    }
}

/// Determinant of a matrix of jets by elimination without pivoting. Intended
/// for positive-definite matrices, whose leading minors never vanish.
pub fn determinant(mut m: Vec<Vec<Jet>>) -> Jet {
    let n = m.len();
    let dim = m[0][0].dim();
    let mut det = Jet::constant(dim, 1.0);
    for k in 0..n {
        let pivot = m[k][k].clone();
        det = det.mul(&pivot);
        if k + 1 == n {
            break;
        }
        let inv = pivot.recip();
        for i in k + 1..n {
            let factor = m[i][k].mul(&inv);
            for j in k + 1..n {
                let update = factor.mul(&m[k][j]);
                m[i][j] = m[i][j].sub(&update);
            }
        }
    }
    det
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn coord(n: usize, i: usize, x: f64) -> Jet {
        let mut g = DVector::zeros(n);
        g[i] = 1.0;
        Jet::affine(x, g)
    }

    #[test]
    fn quotient_rule_matches_closed_form() {
        // f(x, y) = x / (1 + x y) at (0.3, 0.7)
        let (x, y) = (0.3, 0.7);
        let jx = coord(2, 0, x);
        let jy = coord(2, 1, y);
        let f = jx.div(&Jet::constant(2, 1.0).add(&jx.mul(&jy)));
        let d = 1.0 + x * y;
        assert_abs_diff_eq!(f.value, x / d, epsilon = 1e-15);
        assert_abs_diff_eq!(f.grad[0], 1.0 / (d * d), epsilon = 1e-14);
        assert_abs_diff_eq!(f.grad[1], -x * x / (d * d), epsilon = 1e-14);
        assert_abs_diff_eq!(f.hess[(0, 0)], -2.0 * y / d.powi(3), epsilon = 1e-13);
        assert_abs_diff_eq!(f.hess[(1, 1)], 2.0 * x.powi(3) / d.powi(3), epsilon = 1e-13);
        let fxy = -2.0 * x / d.powi(2) + 2.0 * x * x * y / d.powi(3);
        assert_abs_diff_eq!(f.hess[(0, 1)], fxy, epsilon = 1e-13);
        assert_abs_diff_eq!(f.hess[(1, 0)], fxy, epsilon = 1e-13);
    }

    #[test]
    fn determinant_of_jets() {
        // [[x, y], [y, 2]] → det = 2x − y²
        let (x, y) = (1.5, 0.4);
        let m = vec![
            vec![coord(2, 0, x), coord(2, 1, y)],
            vec![coord(2, 1, y), Jet::constant(2, 2.0)],
        ];
        let d = determinant(m);
        assert_abs_diff_eq!(d.value, 2.0 * x - y * y, epsilon = 1e-14);
        assert_abs_diff_eq!(d.grad[0], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(d.grad[1], -2.0 * y, epsilon = 1e-14);
        assert_abs_diff_eq!(d.hess[(1, 1)], -2.0, epsilon = 1e-13);
        assert_abs_diff_eq!(d.hess[(0, 0)], 0.0, epsilon = 1e-13);
    }
}
