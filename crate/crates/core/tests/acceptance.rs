//! Acceptance suite. Each criterion prints one `PASS`/`FAIL` line; the test
//! fails if any criterion does. Run with `--nocapture` to see the lines.

use std::f64::consts::{LN_2, PI};
use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use abreu_core::abreu::{abreu_at, CurvatureSpec, Mode};
use abreu_core::estimates::{check_det_lower, d1_bound, verify_prop31, Outcome};
use abreu_core::legendre::{check_lemma42, legendre_field, legendre_value, XBox, XGrid};
use abreu_core::polynomial::Polynomial;
use abreu_core::polytope::{DelzantPolytope, Violation};
use abreu_core::potential::{Affine, SymplecticPotential};
use abreu_core::solver::{solve_1d, solve_nd, BandSource, SolveConfig, SolveError};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn pt(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

fn interval() -> Arc<DelzantPolytope> {
    Arc::new(DelzantPolytope::interval(0.0, 1.0))
}

fn square() -> Arc<DelzantPolytope> {
    Arc::new(DelzantPolytope::unit_cube(2))
}

fn triangle() -> Arc<DelzantPolytope> {
    Arc::new(DelzantPolytope::standard_simplex(2))
}

/// Uniform interior points, rejecting those within `0.01` of a facet.
fn random_points(p: &DelzantPolytope, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x = DVector::from_fn(p.dim(), |_, _| rng.gen_range(0.0..1.0));
        if p.min_facet_value(&x) > 0.01 {
            out.push(x);
        }
    }
    out
}

fn max_over<T>(items: &[T], f: impl Fn(&T) -> f64) -> f64 {
    items.iter().map(f).fold(0.0, f64::max)
}

fn bump_1d(c: f64) -> SymplecticPotential {
    let p = Polynomial::from_terms([(vec![2], c), (vec![1], -c), (vec![0], 0.25 * c)]);
    SymplecticPotential::with_polynomial(interval(), p).unwrap()
}

fn perturbed_square() -> SymplecticPotential {
    let p = Polynomial::from_terms([
        (vec![2, 0], 0.5),
        (vec![1, 0], -0.5),
        (vec![0, 2], 0.5),
        (vec![0, 1], -0.5),
        (vec![1, 1], 0.2),
    ]);
    SymplecticPotential::with_polynomial(square(), p).unwrap()
}

fn c1_delzant() -> Verdict {
    let cp2 = triangle().validate_delzant().unwrap();
    let sq = square().validate_delzant().unwrap();
    let bad = DelzantPolytope::from_pairs(2, &[(&[1, 0], 0.0), (&[0, 1], 0.0), (&[-1, -2], -2.0)])
        .unwrap()
        .validate_delzant()
        .unwrap();
    let witness = bad.violations.iter().find_map(|v| match v {
        Violation::NonUnimodularVertex { vertex, determinant, .. } => Some((vertex.clone(), *determinant)),
        _ => None,
    });
    let witness_ok = matches!(&witness, Some((v, d)) if v == &vec![0.0, 1.0] && d.abs() == 2);
    check(
        cp2.pass && sq.pass && !bad.pass && witness_ok,
        format!("cp2={} square={} p112={} witness={:?}", cp2.pass, sq.pass, bad.pass, witness),
    )
}

fn c2_operator_oracles() -> Verdict {
    let cases = [(interval(), -2.0), (triangle(), -6.0), (square(), -4.0)];
    let mut worst = 0.0f64;
    for (seed, (p, expected)) in cases.iter().enumerate() {
        let v = SymplecticPotential::guillemin(Arc::clone(p));
        for xi in random_points(p, 100, seed as u64) {
            worst = worst.max((abreu_at(&v, &xi, Mode::Analytic, 0.0).unwrap().a - expected).abs());
        }
    }
    let mut flat = 0.0f64;
    for p in [interval(), square()] {
        let u = SymplecticPotential::half_square(Arc::clone(&p));
        for xi in random_points(&p, 100, 7) {
            flat = flat.max(abreu_at(&u, &xi, Mode::Analytic, 0.0).unwrap().a.abs());
        }
    }
    check(worst <= 1e-8 && flat <= 1e-12, format!("max |A(v) - oracle| = {worst:.3e}, max |A(flat)| = {flat:.3e}"))
}

fn fd_error(u: &SymplecticPotential, h: f64) -> f64 {
    let points = u.polytope().interior_grid(1.0 / 16.0, 0.25).unwrap();
    max_over(points.nodes(), |xi| {
        let fd = abreu_at(u, xi, Mode::FiniteDifference, h).unwrap().a;
        let exact = abreu_at(u, xi, Mode::Analytic, h).unwrap().a;
        (fd - exact).abs()
    })
}

fn c3_fd_convergence() -> Verdict {
    let line = bump_1d(0.5);
    let plane = perturbed_square();
    let ratios: Vec<f64> = [line, plane]
        .iter()
        .map(|u| fd_error(u, 1.0 / 64.0) / fd_error(u, 1.0 / 128.0))
        .collect();
    check(
        ratios.iter().all(|r| (3.5..=4.5).contains(r)),
        format!("error ratios h=1/64 -> 1/128: interval {:.4}, square {:.4}", ratios[0], ratios[1]),
    )
}

fn c4_invariance() -> Verdict {
    let u = perturbed_square();
    let points = random_points(&square(), 100, 11);
    let shifted = u.add_affine(&Affine {
        slope: vec![3.0, -1.5],
        constant: 2.25,
    });
    let a = |w: &SymplecticPotential, xi: &DVector<f64>| abreu_at(w, xi, Mode::Analytic, 0.0).unwrap().a;
    let affine = max_over(&points, |xi| (a(&shifted, xi) - a(&u, xi)).abs());
    let scaling = [0.5, 2.0, 7.0]
        .iter()
        .map(|&l| {
            let s = u.scaled(l);
            max_over(&points, |xi| (a(&s, xi) - a(&u, xi) / l).abs())
        })
        .fold(0.0, f64::max);
    let t = vec![vec![1, 1], vec![0, 1]];
    let pulled = u.pullback(&t).unwrap();
    let equivariance = max_over(&points, |eta| {
        let xi = pt(&[eta[0] - eta[1], eta[1]]);
        (a(&pulled, &xi) - a(&u, eta)).abs()
    });
    check(
        affine <= 1e-10 && scaling <= 1e-10 && equivariance <= 1e-8,
        format!("affine {affine:.3e}, scaling {scaling:.3e}, GL(2,Z) {equivariance:.3e}"),
    )
}

fn c5_legendre() -> Verdict {
    let v = SymplecticPotential::guillemin(interval());
    let f0 = legendre_value(&v, &pt(&[0.0])).unwrap().f;
    let u = perturbed_square();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut duality, mut involution) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let x = DVector::from_fn(2, |_, _| rng.gen_range(-5.0..5.0));
        let p = legendre_value(&u, &x).unwrap();
        let du = u.eval(&p.xi).unwrap();
        let identity = &p.hessian * &du.hessian - DMatrix::identity(2, 2);
        duality = duality.max(identity.amax());
        involution = involution
            .max((&du.gradient - &x).amax())
            .max((du.value + p.f - x.dot(&p.xi)).abs());
    }
    check(
        (f0 - LN_2).abs() <= 1e-8 && duality <= 1e-8 && involution <= 1e-8,
        format!(
            "|f(0) - log 2| = {:.3e}, Hessian duality {duality:.3e}, involution {involution:.3e}",
            (f0 - LN_2).abs()
        ),
    )
}

fn c6_lemma42() -> Verdict {
    let u = bump_1d(0.1);
    let mut discrepancies = Vec::new();
    let mut finest = None;
    for (h, w) in [(4e-3, 10.0), (2e-3, 15.0), (1e-3, 20.0)] {
        let grid = XGrid::new(XBox {
            center: vec![0.0],
            half_width: w,
            h,
        })
        .unwrap();
        let r = check_lemma42(&u, h, &grid, 1e-3).unwrap();
        discrepancies.push(r.discrepancy);
        finest = Some(r);
    }
    let r = finest.unwrap();
    let monotone = discrepancies.windows(2).all(|d| d[1] < d[0]);
    check(
        r.pass && monotone,
        format!(
            "sup|u-v| = {:.8}, sup|phi| = {:.8}, discrepancies {:?}",
            r.psi_sup,
            r.phi_sup,
            discrepancies.iter().map(|d| format!("{d:.3e}")).collect::<Vec<_>>()
        ),
    )
}

fn c7_det_lower() -> Verdict {
    let d1 = d1_bound(2.0, 1.0, 1).unwrap();
    let v = SymplecticPotential::guillemin(interval());
    let grid = interval().interior_grid(0.01, 0.01).unwrap();
    let r = check_det_lower(&v, Some(2.0), &grid, Mode::Analytic).unwrap();
    let xs = XGrid::new(XBox {
        center: vec![0.0],
        half_width: 20.0,
        h: 0.01,
    })
    .unwrap();
    let max_dual = max_over(&legendre_field(&v, &xs).unwrap(), |p| p.det_hessian());
    check(
        d1 == 0.125 && r.outcome == Outcome::Pass && (r.min_det - 4.0).abs() <= 1e-12 && max_dual <= 1.0 / d1,
        format!(
            "d1 = {d1}, outcome {:?}, min det = {:.12}, max det M_f = {max_dual:.6} <= {}",
            r.outcome,
            r.min_det,
            1.0 / d1
        ),
    )
}

fn c8_prop31() -> Verdict {
    let xs = XGrid::new(XBox {
        center: vec![0.0],
        half_width: 5.0,
        h: 0.025,
    })
    .unwrap();
    let xi = interval().interior_grid(0.01, 0.01).unwrap();
    let v = SymplecticPotential::guillemin(interval());
    let rv = verify_prop31(&v, &xs, &xi, Mode::Analytic).unwrap();
    let guillemin_ok = (rv.kappa - 2.0).abs() <= 1e-6
        && (rv.h_max - 1.0).abs() <= 1e-12
        && (rv.rhs_33 - 8.0 / 3.0).abs() <= 1e-6
        && rv.pass_prop31;
    let u = bump_1d(0.1);
    let ru = verify_prop31(&u, &xs, &xi, Mode::Analytic).unwrap();
    let h0 = {
        let f = legendre_value(&u, &pt(&[0.0])).unwrap();
        let g = legendre_value(&v, &pt(&[0.0])).unwrap();
        f.primal_hessian.determinant() / g.primal_hessian.determinant()
    };
    let bump_ok = (h0 - 1.05).abs() <= 1e-4 && ru.pass_prop31 && ru.margins.prop31 > 0.5;
    let duality = rv.duality_defect.max(ru.duality_defect);
    check(
        guillemin_ok && bump_ok && duality <= 1e-4,
        format!(
            "kappa = {:.9}, H_max(v) = {:.12}, RHS = {:.9}; H(0) = {h0:.9}, margin = {:.6}; duality defect {duality:.3e}",
            rv.kappa, rv.h_max, rv.rhs_33, ru.margins.prop31
        ),
    )
}

fn c9_solver_1d() -> Verdict {
    let s = solve_1d(&CurvatureSpec::constant(2.0), interval()).unwrap();
    let samples: Vec<f64> = (1..200).map(|i| i as f64 / 200.0).collect();
    let w_err = max_over(&samples, |&x| (s.w_at(x) - x * (1.0 - x)).abs());
    let certificate = match solve_1d(&CurvatureSpec::constant(0.0), interval()) {
        Err(SolveError::Infeasible { residuals }) => Some(residuals),
        _ => None,
    };
    let certificate_ok = matches!(certificate, Some([a, b]) if (a + 2.0).abs() <= 1e-12 && (b + 1.0).abs() <= 1e-12);
    let k = CurvatureSpec::Polynomial {
        terms: Polynomial::from_terms([(vec![2], 12.0), (vec![1], -12.0), (vec![0], 4.0)]),
    };
    let q = solve_1d(&k, interval()).unwrap();
    let residual = max_over(&samples, |&x| {
        let xi = pt(&[x]);
        (abreu_at(&q.potential, &xi, Mode::Analytic, 0.0).unwrap().a + k.eval(&xi)).abs()
    });
    let mid = (q.w_at(0.5) - 0.1875).abs();
    check(
        w_err <= 1e-12 && certificate_ok && mid <= 1e-12 && residual <= 1e-8,
        format!(
            "|w - xi(1-xi)| = {w_err:.3e}, certificate {certificate:?}, |w(1/2) - 0.1875| = {mid:.3e}, max |A+K| = {residual:.3e}"
        ),
    )
}

fn c10_solver_2d() -> Verdict {
    let p = square();
    let config = SolveConfig {
        h: 1.0 / 32.0,
        margin: 1.0 / 16.0,
        tol: 1e-7,
        band: BandSource::Zero,
        ..SolveConfig::default()
    };
    let grid = config.grid(&p).unwrap();
    let psi0: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|x| 0.1 * (PI * x[0]).sin() * (PI * x[1]).sin())
        .collect();
    let r = solve_nd(p, &CurvatureSpec::constant(4.0), &config, Some(&psi0)).unwrap();
    // ψ is gauge-normalized, so "zero up to affine" is a plain max-norm.
    let psi_max = r.psi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let det = r.det_check().unwrap();
    check(
        r.converged && r.max_residual() < 1e-6 && psi_max <= 1e-4 && det.outcome == Outcome::Pass,
        format!(
            "converged {} in {} iterations, residual {:.3e}, max |psi| {psi_max:.3e}, det check {:?}",
            r.converged,
            r.iterations,
            r.max_residual(),
            det.outcome
        ),
    )
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn c11_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture;
    let commands: Vec<(Vec<String>, Vec<&str>)> = vec![
        (vec!["check-delzant".into(), f("cp2.json"), "--out".into()], vec!["a.json"]),
        (
            ["curvature", "--polytope", &f("square.json"), "--potential", &f("guillemin.json"), "--h", "0.0625"]
                .iter()
                .map(|s| s.to_string())
                .chain(["--margin", "0.125", "--mode", "fd", "--k", &f("k_four.json"), "--out"].map(String::from))
                .collect(),
            vec!["b.csv"],
        ),
        (
            ["legendre", "--polytope", &f("interval.json"), "--potential", &f("bump1d.json"), "--box", &f("box1d.json"), "--out"]
                .map(String::from)
                .to_vec(),
            vec!["c.csv"],
        ),
        (
            [
                "verify-bounds", "--polytope", &f("interval.json"), "--potential", &f("bump1d.json"), "--box",
                &f("box1d.json"), "--h", "0.01", "--margin", "0.01", "--out",
            ]
            .map(String::from)
            .to_vec(),
            vec!["d.json"],
        ),
        (
            ["solve-1d", "--k", &f("k_quartic.json"), "--out"].map(String::from).to_vec(),
            vec!["e.json", "e.psi.csv"],
        ),
        (
            [
                "solve", "--polytope", &f("square.json"), "--k", &f("k_four.json"), "--h", "0.0625", "--margin", "0.125",
                "--out",
            ]
            .map(String::from)
            .to_vec(),
            vec!["g.json", "g.psi.csv"],
        ),
        (
            [
                "continuation", "--polytope", &f("interval.json"), "--k", &f("k_quartic.json"), "--h", "0.03125",
                "--margin", "0.0625", "--steps", "4", "--out",
            ]
            .map(String::from)
            .to_vec(),
            vec!["h.json", "h.psi.csv"],
        ),
    ];
    let mut differing = Vec::new();
    for (args, files) in &commands {
        let mut runs = Vec::new();
        for _ in 0..2 {
            let status = Command::new(env!("CARGO_BIN_EXE_abreu"))
                .args(args)
                .arg(dir.path().join(files[0]))
                .output()
                .unwrap();
            let bytes: Vec<Vec<u8>> = files.iter().map(|n| fs::read(dir.path().join(n)).unwrap_or_default()).collect();
            runs.push((status.status.code(), status.stdout, bytes));
            for n in files {
                let _ = fs::remove_file(dir.path().join(n));
            }
        }
        if runs[0] != runs[1] || runs[0].2.iter().any(Vec::is_empty) {
            differing.push(args[0].clone());
        }
    }
    check(
        differing.is_empty(),
        format!("{} commands re-run; differing: {differing:?}", commands.len()),
    )
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Verdict, u64); 11] = [
        ("Delzant gate", c1_delzant, 1),
        ("Abreu operator oracles", c2_operator_oracles, 5),
        ("FD convergence", c3_fd_convergence, 30),
        ("Invariance suite", c4_invariance, 5),
        ("Legendre suite", c5_legendre, 5),
        ("Sup-norm duality", c6_lemma42, 60),
        ("Determinant lower bound", c7_det_lower, 10),
        ("Determinant ratio estimate", c8_prop31, 60),
        ("1D solver", c9_solver_1d, 5),
        ("2D solver", c10_solver_2d, 120),
        ("Determinism", c11_determinism, 60),
    ];
    let mut failed = Vec::new();
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let verdict = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(*budget);
        let pass = verdict.pass && in_time;
        println!(
            "criterion {:>2} {:<28} {}  [{:.2}s / {}s] {}",
            i + 1,
            name,
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget,
            verdict.detail
        );
        if !pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
