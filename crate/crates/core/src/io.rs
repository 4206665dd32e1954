//! Pattern files and the text exports of graphs, functions and reports.
//!
//! Floats are printed in Rust's shortest round-trip form, so an export can be
//! read back bit for bit and repeated runs produce identical bytes.

use std::fmt::Write as _;

use serde::Deserialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::carpet::CarpetGraph;
use crate::energy::ResistanceValue;
use crate::error::{CarpetError, Result};
use crate::extension::KernelSet;
use crate::pattern::PilingPattern;
use crate::scaling::{InequalityReport, ScalingTable};
use crate::trace::TraceForm;
use crate::walk::WalkEstimate;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PatternFile {
    #[serde(rename = "L")]
    side: i64,
    multiplicity: Vec<Vec<i64>>,
}

/// Parses `{"L": L, "multiplicity": [[...], ...]}` with row 0 the bottom row.
///
/// Admissibility is not checked here.
pub fn parse_pattern_file(text: &str) -> Result<PilingPattern> {
    let raw: PatternFile = serde_json::from_str(text).map_err(|e| CarpetError::Parse {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    if raw.side < 0 {
        return Err(CarpetError::Structural(format!("side count L = {} is negative", raw.side)));
    }
    let rows = raw
        .multiplicity
        .iter()
        .enumerate()
        .map(|(r, row)| {
            row.iter()
                .enumerate()
                .map(|(c, &v)| {
                    u32::try_from(v).map_err(|_| {
                        CarpetError::Structural(format!("entry {v} at column {c}, row {r} is not a nonnegative multiplicity"))
                    })
                })
                .collect::<Result<Vec<u32>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    PilingPattern::from_rows(raw.side as usize, &rows)
}

/// Canonical pattern file text; one row per line, bottom row first.
pub fn write_pattern(p: &PilingPattern) -> String {
    let rows = p.rows();
    let mut s = format!("{{\n  \"L\": {},\n  \"multiplicity\": [\n", p.side());
    for (r, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(u32::to_string).collect();
        let sep = if r + 1 < rows.len() { "," } else { "" };
        let _ = writeln!(s, "    [{}]{sep}", cells.join(", "));
    }
    s.push_str("  ]\n}\n");
    s
}

/// SHA-256 of the canonical pattern text, in hex.
pub fn pattern_hash(p: &PilingPattern) -> String {
    Sha256::digest(write_pattern(p).as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn to_json_string(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

pub fn graph_json(g: &CarpetGraph) -> Value {
    let vertices: Vec<Value> = (0..g.num_vertices())
        .map(|v| {
            let (x, y) = g.point(v);
            let rep = g.rep(v);
            json!({"id": v, "x": x, "y": y, "rep": rep.word.to_string(), "corner": rep.corner})
        })
        .collect();
    let edges: Vec<Value> = g.edges().iter().map(|e| json!({"u": e.u, "v": e.v, "mult": e.mult})).collect();
    json!({"level": g.level(), "L": g.side(), "vertices": vertices, "edges": edges})
}

/// `vertex_id,x,y,value`
pub fn function_csv(g: &CarpetGraph, f: &[f64]) -> String {
    let mut s = String::from("vertex_id,x,y,value\n");
    for (v, val) in f.iter().enumerate() {
        let (x, y) = g.point(v);
        let _ = writeln!(s, "{v},{x},{y},{val:?}");
    }
    s
}

pub fn resistance_json(n: usize, r: &ResistanceValue) -> Value {
    json!({
        "n": n,
        "terminals": [r.a, r.b],
        "value": r.value,
        "energy": r.energy,
        "residual": r.residual,
        "iterations": r.iterations,
    })
}

/// `vertex_id,x,y,psi0,psi1,psi2,psi3`
pub fn kernel_csv(g: &CarpetGraph, ks: &KernelSet) -> String {
    let mut s = String::from("vertex_id,x,y,psi0,psi1,psi2,psi3\n");
    for v in 0..g.num_vertices() {
        let (x, y) = g.point(v);
        let _ = writeln!(
            s,
            "{v},{x},{y},{:?},{:?},{:?},{:?}",
            ks.psi[0][v], ks.psi[1][v], ks.psi[2][v], ks.psi[3][v]
        );
    }
    s
}

pub fn trace_json(t: &TraceForm) -> Value {
    let n = t.len();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| t.matrix[(i, j)]).collect()).collect();
    json!({
        "fine_level": t.fine_level,
        "coarse_level": t.coarse_level,
        "coarse": t.coarse,
        "matrix": rows,
    })
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:?}")).unwrap_or_default()
}

/// `n,R_n,Rbar_n,ratio_R,ratio_Rbar,residual`; the residual is the larger of the two solves.
pub fn scaling_csv(t: &ScalingTable) -> String {
    let mut s = String::from("n,R_n,Rbar_n,ratio_R,ratio_Rbar,residual\n");
    for r in &t.rows {
        let _ = writeln!(
            s,
            "{},{:?},{:?},{},{},{:?}",
            r.n,
            r.corner,
            r.border,
            opt(r.ratio_corner),
            opt(r.ratio_border),
            r.corner_residual.max(r.border_residual)
        );
    }
    s
}

pub fn inequality_json(r: &InequalityReport) -> Value {
    let checks: Vec<Value> = r
        .checks
        .iter()
        .map(|c| {
            json!({
                "name": c.name,
                "observed": c.observed,
                "previous": c.previous,
                "relative_change": c.relative_change,
                "reference": c.reference,
                "status": c.status,
            })
        })
        .collect();
    json!({"max_level": r.max_level, "rho_a": r.rho_a, "checks": checks, "estimate": r.estimate})
}

pub fn walk_json(w: &WalkEstimate) -> Value {
    json!({
        "estimate": w.estimate,
        "stderr": w.stderr,
        "samples": w.samples,
        "requested": w.requested,
        "seed": w.seed,
        "steps": w.steps,
        "aborted": w.aborted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::carpet::build_graph;
    use crate::pattern::builtin_pattern;

    #[test]
    fn parse_sierpinski() {
        let p = parse_pattern_file(r#"{"L":3,"multiplicity":[[1,1,1],[1,0,1],[1,1,1]]}"#).unwrap();
        assert_eq!(p, builtin_pattern("sierpinski3").unwrap());
    }

    #[test]
    fn dimension_mismatch() {
        let e = parse_pattern_file(r#"{"L":3,"multiplicity":[[1,1],[1,0,1],[1,1,1]]}"#).unwrap_err();
        assert!(matches!(e, CarpetError::Structural(_)), "{e}");
        let e = parse_pattern_file(r#"{"L":3,"multiplicity":[[1,1,1],[1,0,1]]}"#).unwrap_err();
        assert!(matches!(e, CarpetError::Structural(_)), "{e}");
        let e = parse_pattern_file(r#"{"L":3,"multiplicity":[[1,1,1],[1,-1,1],[1,1,1]]}"#).unwrap_err();
        assert!(matches!(e, CarpetError::Structural(_)), "{e}");
    }

    #[test]
    fn syntax_error_position() {
        let e = parse_pattern_file("{\n  \"L\": 3,\n  \"multiplicity\": [[1,1,1],\n   [1,0,1]\n   [1,1,1]]\n}").unwrap_err();
        match e {
            CarpetError::Parse { line, column, .. } => assert_eq!((line, column), (5, 4)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn round_trip() {
        for name in ["sierpinski3", "pillow5"] {
            let p = builtin_pattern(name).unwrap();
            let text = write_pattern(&p);
            assert_eq!(parse_pattern_file(&text).unwrap(), p);
            assert_eq!(pattern_hash(&p).len(), 64);
        }
    }

    #[test]
    fn graph_export_shape() {
        let g = build_graph(&builtin_pattern("sierpinski3").unwrap(), 1).unwrap();
        let v = graph_json(&g);
        assert_eq!(v["vertices"].as_array().unwrap().len(), 16);
        assert_eq!(v["edges"].as_array().unwrap().len(), 24);
        assert_eq!(v["vertices"][0]["rep"], "0,0,0");
        let csv = function_csv(&g, &vec![0.5; 16]);
        assert_eq!(csv.lines().count(), 17);
        assert!(csv.lines().nth(1).unwrap().ends_with(",0.5"));
    }
}
