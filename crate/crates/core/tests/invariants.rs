use std::sync::Arc;

use abreu_core::abreu::{abreu_at, CurvatureSpec, Mode};
use abreu_core::estimates::{d1_bound, h_field};
use abreu_core::legendre::{inclusion_check, legendre_value, sublevel, SublevelTag, XBox, XGrid};
use abreu_core::polynomial::Polynomial;
use abreu_core::polytope::{DelzantPolytope, Facet};
use abreu_core::potential::{Affine, SymplecticPotential};
use abreu_core::solver::{solve_nd, BandSource, SolveConfig};
use nalgebra::DVector;
use proptest::prelude::*;

fn polytope(pairs: &[(&[i64], f64)]) -> DelzantPolytope {
    DelzantPolytope::from_pairs(2, pairs).unwrap()
}

fn catalogue() -> Vec<(DelzantPolytope, bool)> {
    vec![
        (DelzantPolytope::standard_simplex(2), true),
        (DelzantPolytope::unit_cube(2), true),
        (polytope(&[(&[1, 0], 0.0), (&[0, 1], 0.0), (&[-1, -1], -2.0), (&[0, -1], -1.5)]), true),
        (polytope(&[(&[1, 0], 0.0), (&[0, 1], 0.0), (&[-1, -2], -2.0)]), false),
        (polytope(&[(&[1, 0], 0.0), (&[0, 1], 0.0), (&[-2, -3], -6.0)]), false),
    ]
}

fn unimodular() -> impl Strategy<Value = Vec<Vec<i64>>> {
    prop::collection::vec((0usize..3, -2i64..=2), 1..5).prop_map(|ops| {
        let mut t = vec![vec![1i64, 0], vec![0, 1]];
        for (kind, k) in ops {
            let g = match kind {
                0 => vec![vec![1, k], vec![0, 1]],
                1 => vec![vec![1, 0], vec![k, 1]],
                _ => vec![vec![0, 1], vec![1, 0]],
            };
            t = (0..2)
                .map(|r| (0..2).map(|c| (0..2).map(|m| t[r][m] * g[m][c]).sum()).collect())
                .collect();
        }
        t
    })
}

fn square() -> Arc<DelzantPolytope> {
    Arc::new(DelzantPolytope::unit_cube(2))
}

fn interval() -> Arc<DelzantPolytope> {
    Arc::new(DelzantPolytope::interval(0.0, 1.0))
}

/// `v + c₁ξ₁² + c₂ξ₁ξ₂ + c₃ξ₂³` on the square.
fn perturbed_square(c: [f64; 3]) -> SymplecticPotential {
    let p = Polynomial::from_terms([(vec![2, 0], c[0]), (vec![1, 1], c[1]), (vec![0, 3], c[2])]);
    SymplecticPotential::with_polynomial(square(), p).unwrap()
}

fn coefficients() -> impl Strategy<Value = [f64; 3]> {
    (0.0..0.5f64, -0.1..0.1f64, -0.1..0.1f64).prop_map(|(a, b, c)| [a, b, c])
}

fn pt(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn delzant_verdict_is_invariant(
        index in 0usize..5,
        shift in prop::array::uniform2(-3.0..3.0f64),
        t in unimodular(),
        rotate in 0usize..5,
    ) {
        let (base, expected) = catalogue().swap_remove(index);
        prop_assert_eq!(base.validate_delzant().unwrap().pass, expected);
        let moved = base.translate(&shift);
        prop_assert_eq!(moved.validate_delzant().unwrap().pass, expected);
        let mut facets: Vec<Facet> = base.facets().to_vec();
        let k = rotate % facets.len();
        facets.rotate_left(k);
        facets.reverse();
        let relabelled = DelzantPolytope::new(2, facets).unwrap();
        prop_assert_eq!(relabelled.validate_delzant().unwrap().pass, expected);
        prop_assert_eq!(base.pullback(&t).unwrap().validate_delzant().unwrap().pass, expected);
    }

    #[test]
    fn operator_ignores_affine_terms(
        c in coefficients(),
        xi in prop::array::uniform2(0.05..0.95f64),
        slope in prop::array::uniform2(-5.0..5.0f64),
        constant in -5.0..5.0f64,
    ) {
        let u = perturbed_square(c);
        let shifted = u.add_affine(&Affine { slope: slope.to_vec(), constant });
        let a = abreu_at(&u, &pt(&xi), Mode::Analytic, 0.0).unwrap().a;
        let b = abreu_at(&shifted, &pt(&xi), Mode::Analytic, 0.0).unwrap().a;
        prop_assert!((a - b).abs() <= 1e-10, "{} vs {}", a, b);
    }

    #[test]
    fn operator_scales_inversely(
        c in coefficients(),
        xi in prop::array::uniform2(0.05..0.95f64),
        lambda in prop::sample::select(vec![0.5, 2.0, 7.0]),
    ) {
        let u = perturbed_square(c);
        let a = abreu_at(&u, &pt(&xi), Mode::Analytic, 0.0).unwrap().a;
        let b = abreu_at(&u.scaled(lambda), &pt(&xi), Mode::Analytic, 0.0).unwrap().a;
        prop_assert!((b - a / lambda).abs() <= 1e-10 * (1.0 + a.abs()), "{} vs {}", b, a / lambda);
    }

    #[test]
    fn operator_is_equivariant(c in coefficients(), eta in prop::array::uniform2(0.05..0.95f64)) {
        let t = vec![vec![1, 1], vec![0, 1]];
        let u = perturbed_square(c);
        let pulled = u.pullback(&t).unwrap();
        let xi = pt(&[eta[0] - eta[1], eta[1]]);
        let a = abreu_at(&u, &pt(&eta), Mode::Analytic, 0.0).unwrap().a;
        let b = abreu_at(&pulled, &xi, Mode::Analytic, 0.0).unwrap().a;
        prop_assert!((a - b).abs() <= 1e-8, "{} vs {}", a, b);
    }

    #[test]
    fn normalization_is_idempotent(
        c in coefficients(),
        p in prop::array::uniform2(0.1..0.9f64),
        q in prop::array::uniform2(0.05..0.95f64),
    ) {
        let once = perturbed_square(c).normalize_at(&pt(&p)).unwrap();
        let twice = once.normalize_at(&pt(&p)).unwrap();
        let e = once.eval(&pt(&p)).unwrap();
        prop_assert!(e.value.abs() <= 1e-12 && e.gradient.amax() <= 1e-12);
        prop_assert!((once.value(&pt(&q)).unwrap() - twice.value(&pt(&q)).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn gradient_map_inverts(c in 0.0..0.5f64, xi in 0.02..0.98f64) {
        let bump = Polynomial::from_terms([(vec![2], c), (vec![1], -c)]);
        let u = SymplecticPotential::with_polynomial(interval(), bump).unwrap();
        let x = u.eval(&pt(&[xi])).unwrap().gradient;
        let back = legendre_value(&u, &x).unwrap();
        prop_assert!((back.xi[0] - xi).abs() <= 1e-8);
        let product = &back.hessian * u.hessian(&pt(&[xi])).unwrap();
        prop_assert!((product[(0, 0)] - 1.0).abs() <= 1e-8);
    }

    #[test]
    fn d1_decreases(b in 0.01..10.0f64, db in 0.01..5.0f64, diam in 0.1..5.0f64, dd in 0.01..2.0f64, n in 1usize..4) {
        let base = d1_bound(b, diam, n).unwrap();
        prop_assert!(d1_bound(b + db, diam, n).unwrap() < base);
        prop_assert!(d1_bound(b, diam + dd, n).unwrap() < base);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn sublevel_sets_grow_with_level(c in 0.0..0.3f64, low in -1.0..3.0f64, gap in 0.0..2.0f64) {
        let bump = Polynomial::from_terms([(vec![2], c)]);
        let u = SymplecticPotential::with_polynomial(interval(), bump).unwrap();
        let grid = XGrid::new(XBox { center: vec![0.0], half_width: 6.0, h: 0.25 }).unwrap();
        for tag in [SublevelTag::F, SublevelTag::G] {
            let small = sublevel(tag, &u, low, &grid).unwrap();
            let large = sublevel(tag, &u, low + gap, &grid).unwrap();
            prop_assert!(inclusion_check(&small, &large).unwrap());
        }
    }

    #[test]
    fn ratio_is_one_for_constant_shifts(shift in -10.0..10.0f64) {
        let u = SymplecticPotential::guillemin(square()).add_constant(shift);
        let grid = XGrid::new(XBox { center: vec![0.0, 0.0], half_width: 3.0, h: 0.5 }).unwrap();
        prop_assert!(h_field(&u, &grid).unwrap().iter().all(|h| (h - 1.0).abs() <= 1e-8));
    }

    #[test]
    fn fd_error_is_second_order(c2 in 0.05..0.5f64, c3 in -0.2..0.2f64, c4 in -0.1..0.1f64) {
        let bump = Polynomial::from_terms([(vec![2], c2), (vec![3], c3), (vec![4], c4)]);
        let u = SymplecticPotential::with_polynomial(interval(), bump).unwrap();
        let points = interval().interior_grid(1.0 / 16.0, 0.25).unwrap();
        let error = |h: f64| {
            points.nodes().iter().fold(0.0f64, |m, xi| {
                let fd = abreu_at(&u, xi, Mode::FiniteDifference, h).unwrap().a;
                let exact = abreu_at(&u, xi, Mode::Analytic, h).unwrap().a;
                m.max((fd - exact).abs())
            })
        };
        let ratio = error(1.0 / 64.0) / error(1.0 / 128.0);
        prop_assert!((3.5..=4.5).contains(&ratio), "ratio {}", ratio);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn solver_history_never_increases(amplitude in 0.01..0.08f64, tilt in -0.5..0.5f64) {
        let config = SolveConfig {
            h: 1.0 / 16.0,
            margin: 1.0 / 8.0,
            tol: 1e-8,
            band: BandSource::Zero,
            ..SolveConfig::default()
        };
        let p = square();
        let grid = config.grid(&p).unwrap();
        let pi = std::f64::consts::PI;
        let psi0: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|x| amplitude * (pi * x[0]).sin() * (pi * x[1]).sin() + tilt * x[0])
            .collect();
        let r = solve_nd(p, &CurvatureSpec::constant(4.0), &config, Some(&psi0)).unwrap();
        prop_assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(r.objective.windows(2).all(|w| w[1] < w[0]));
        if r.converged {
            prop_assert!(r.max_residual() <= config.tol);
        }
    }
}
