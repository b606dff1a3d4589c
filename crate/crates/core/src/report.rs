//! Deterministic serialization: sorted-key JSON and CSV with every number
//! rounded to 12 significant digits.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::Value;

use crate::abreu::CurvatureResult;
use crate::legendre::PhiNode;
use crate::polytope::GridDomain;

pub const SIGNIFICANT_DIGITS: usize = 12;

/// Rounds to [`SIGNIFICANT_DIGITS`] significant digits; non-finite values pass through.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x).parse().unwrap_or(x)
}

/// Text form of a rounded number. Plain notation in `[1e-4, 1e15)`,
/// exponent notation elsewhere.
pub fn format_number(x: f64) -> String {
    let r = round_sig(x);
    if r.is_nan() {
        return "nan".into();
    }
    if r.is_infinite() {
        return if r > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if r == 0.0 {
        return "0".into();
    }
    let a = r.abs();
    if (1e-4..1e15).contains(&a) {
        format!("{r}")
    } else {
        format!("{r:e}")
    }
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().and_then(|x| serde_json::Number::from_f64(round_sig(x))) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Pretty JSON with sorted keys, rounded floats and a trailing newline.
/// Non-finite floats become `null`.
pub fn to_canonical_json<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let mut v = serde_json::to_value(value)?;
    round_value(&mut v);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

fn csv_text(header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(&header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

fn axis_header(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}_{i}"))
}

fn optional(x: Option<f64>) -> String {
    x.map(format_number).unwrap_or_default()
}

/// Columns `xi_1..xi_n, det_hess, w, A, K_target, residual, flagged`.
pub fn curvature_csv(result: &CurvatureResult) -> String {
    let n = result.nodes.first().map_or(0, |node| node.xi.len());
    let header = axis_header("xi", n)
        .chain(["det_hess", "w", "A", "K_target", "residual", "flagged"].map(String::from))
        .collect();
    let rows = result.nodes.iter().map(|node| {
        let p = &node.point;
        let mut row: Vec<String> = node.xi.iter().map(|&x| format_number(x)).collect();
        row.push(format_number(p.det_hess));
        row.push(format_number(p.w));
        row.push(if p.flagged { String::new() } else { format_number(p.a) });
        row.push(optional(node.k_target));
        row.push(if p.flagged { String::new() } else { optional(node.residual()) });
        row.push(p.flagged.to_string());
        row
    });
    csv_text(header, rows)
}

/// Columns `x_1..x_n, xi_1..xi_n, f, g, phi`; `ξ` is the gradient image under `u`.
pub fn legendre_csv(nodes: &[PhiNode]) -> String {
    let n = nodes.first().map_or(0, |node| node.x.len());
    let header = axis_header("x", n)
        .chain(axis_header("xi", n))
        .chain(["f", "g", "phi"].map(String::from))
        .collect();
    let rows = nodes.iter().map(|node| {
        node.x
            .iter()
            .chain(node.xi_f.iter())
            .chain([node.f, node.g, node.phi].iter())
            .map(|&v| format_number(v))
            .collect()
    });
    csv_text(header, rows)
}

/// Columns `xi_1..xi_n, psi, free`.
pub fn grid_field_csv(grid: &GridDomain, values: &[f64], free: &[bool]) -> String {
    let header = axis_header("xi", grid.dim()).chain(["psi", "free"].map(String::from)).collect();
    let rows = grid.nodes().iter().zip(values).zip(free).map(|((x, &v), &f)| {
        let mut row: Vec<String> = x.iter().map(|&c| format_number(c)).collect();
        row.push(format_number(v));
        row.push(f.to_string());
        row
    });
    csv_text(header, rows)
}

/// Columns `xi, psi, w` for nodal samples of a one-dimensional solution.
pub fn profile_csv(samples: &[(f64, f64, f64)]) -> String {
    let header = ["xi", "psi", "w"].map(String::from).to_vec();
    let rows = samples
        .iter()
        .map(|&(x, p, w)| vec![format_number(x), format_number(p), format_number(w)]);
    csv_text(header, rows)
}

/// Single-line human summary, e.g. `key: value`.
pub fn summary_line(key: &str, values: &[(&str, f64)]) -> String {
    let mut s = format!("{key}:");
    for (name, v) in values {
        let _ = write!(s, " {name}={}", format_number(*v));
    }
    s
}
