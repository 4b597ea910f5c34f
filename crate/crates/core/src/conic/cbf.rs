//! Conic Benchmark Format (version 3) writer, for cross-checking a program in
//! an external solver.

use std::fmt::Write as _;
use std::path::Path;

use super::program::ConicProgram;
use crate::error::Result;

pub fn to_cbf(p: &ConicProgram) -> String {
    let n = p.n_vars();
    // (cone tag, rows) where each row is (terms, constant) and the cone holds
    // the affine values.
    let mut blocks: Vec<(&'static str, Vec<(Vec<(usize, f64)>, f64)>)> = Vec::new();

    let eq: Vec<_> = p
        .eq_constraints
        .iter()
        .map(|r| (r.coefs.clone(), -r.rhs))
        .collect();
    if !eq.is_empty() {
        blocks.push(("L=", eq));
    }
    let mut le: Vec<_> = p
        .ineq_constraints
        .iter()
        .map(|r| (r.coefs.clone(), -r.rhs))
        .collect();
    let mut ge = Vec::new();
    for i in 0..n {
        if p.upper[i].is_finite() {
            le.push((vec![(i, 1.0)], -p.upper[i]));
        }
        if p.lower[i].is_finite() {
            ge.push((vec![(i, 1.0)], -p.lower[i]));
        }
    }
    if !le.is_empty() {
        blocks.push(("L-", le));
    }
    if !ge.is_empty() {
        blocks.push(("L+", ge));
    }
    for c in &p.soc_constraints {
        let mut rows = vec![(c.head.terms.clone(), c.head.constant)];
        rows.extend(c.tail.iter().map(|t| (t.terms.clone(), t.constant)));
        blocks.push(("Q", rows));
    }

    let mut out = String::new();
    let _ = writeln!(out, "VER\n3\n");
    let _ = writeln!(out, "OBJSENSE\nMIN\n");
    let _ = writeln!(out, "VAR\n{n} 1\nF {n}\n");

    let ints: Vec<usize> = (0..n).filter(|&i| p.integer[i]).collect();
    if !ints.is_empty() {
        let _ = writeln!(out, "INT\n{}", ints.len());
        for i in ints {
            let _ = writeln!(out, "{i}");
        }
        out.push('\n');
    }

    let m: usize = blocks.iter().map(|b| b.1.len()).sum();
    let _ = writeln!(out, "CON\n{m} {}", blocks.len());
    for (tag, rows) in &blocks {
        let _ = writeln!(out, "{tag} {}", rows.len());
    }
    out.push('\n');

    let obj: Vec<(usize, f64)> = p
        .objective
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != 0.0)
        .map(|(i, c)| (i, *c))
        .collect();
    if !obj.is_empty() {
        let _ = writeln!(out, "OBJACOORD\n{}", obj.len());
        for (i, c) in obj {
            let _ = writeln!(out, "{i} {c:e}");
        }
        out.push('\n');
    }
    if p.objective_constant != 0.0 {
        let _ = writeln!(out, "OBJBCOORD\n{:e}\n", p.objective_constant);
    }

    let mut acoord = Vec::new();
    let mut bcoord = Vec::new();
    let mut r = 0;
    for (_, rows) in &blocks {
        for (terms, c0) in rows {
            for &(j, v) in terms {
                acoord.push((r, j, v));
            }
            if *c0 != 0.0 {
                bcoord.push((r, *c0));
            }
            r += 1;
        }
    }
    if !acoord.is_empty() {
        let _ = writeln!(out, "ACOORD\n{}", acoord.len());
        for (i, j, v) in acoord {
            let _ = writeln!(out, "{i} {j} {v:e}");
        }
        out.push('\n');
    }
    if !bcoord.is_empty() {
        let _ = writeln!(out, "BCOORD\n{}", bcoord.len());
        for (i, v) in bcoord {
            let _ = writeln!(out, "{i} {v:e}");
        }
    }
    out
}

pub fn write_cbf(p: &ConicProgram, path: &Path) -> Result<()> {
    std::fs::write(path, to_cbf(p))?;
    Ok(())
}
