use std::io::Write;

use serde::Serialize;

use super::Model;
use crate::error::Result;

fn fmt_num(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x:.12e}")
    }
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "_.[]".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn write_terms<W: Write>(
    w: &mut W,
    model: &Model,
    terms: &[(super::VarId, f64)],
) -> std::io::Result<()> {
    if terms.is_empty() {
        return write!(
            w,
            " 0 {}",
            sanitize(&model.vars.first().map_or("x".into(), |v| v.name.clone()))
        );
    }
    for &(v, c) in terms {
        let sign = if c < 0.0 { '-' } else { '+' };
        write!(
            w,
            " {sign} {} {}",
            fmt_num(c.abs()),
            sanitize(&model.vars[v.0].name)
        )?;
    }
    Ok(())
}

/// Writes the linear part of the model in CPLEX LP format. Rotated cones
/// have no linear representation and are listed as comments.
pub fn write_lp<W: Write>(model: &Model, mut w: W) -> Result<()> {
    writeln!(
        w,
        "\\ objective constant {}",
        fmt_num(model.objective_constant)
    )?;
    for c in &model.cones {
        writeln!(w, "\\ cone {} ({:?}) omitted", sanitize(&c.name), c.tag)?;
    }
    writeln!(w, "Minimize")?;
    write!(w, " obj:")?;
    let costs: Vec<_> = model
        .vars
        .iter()
        .enumerate()
        .filter(|(_, v)| v.cost != 0.0)
        .map(|(i, v)| (super::VarId(i), v.cost))
        .collect();
    write_terms(&mut w, model, &costs)?;
    writeln!(w)?;
    writeln!(w, "Subject To")?;
    for (i, r) in model.rows.iter().enumerate() {
        let name = format!("r{i}_{}", sanitize(&r.name));
        let mut emit = |suffix: &str, op: &str, rhs: f64| -> std::io::Result<()> {
            write!(w, " {name}{suffix}:")?;
            write_terms(&mut w, model, &r.terms)?;
            writeln!(w, " {op} {}", fmt_num(rhs))
        };
        if r.lb == r.ub {
            emit("", "=", r.ub)?;
        } else {
            let both = r.lb.is_finite() && r.ub.is_finite();
            if r.lb.is_finite() {
                emit(if both { "_lo" } else { "" }, ">=", r.lb)?;
            }
            if r.ub.is_finite() {
                emit(if both { "_hi" } else { "" }, "<=", r.ub)?;
            }
        }
    }
    writeln!(w, "Bounds")?;
    for v in &model.vars {
        let n = sanitize(&v.name);
        match (v.lb.is_finite(), v.ub.is_finite()) {
            (true, true) if v.lb == v.ub => writeln!(w, " {n} = {}", fmt_num(v.lb))?,
            (true, true) => writeln!(w, " {} <= {n} <= {}", fmt_num(v.lb), fmt_num(v.ub))?,
            (true, false) => writeln!(w, " {n} >= {}", fmt_num(v.lb))?,
            (false, true) => writeln!(w, " -inf <= {n} <= {}", fmt_num(v.ub))?,
            (false, false) => writeln!(w, " {n} free")?,
        }
    }
    let ints: Vec<_> = model
        .vars
        .iter()
        .filter(|v| v.integer)
        .map(|v| sanitize(&v.name))
        .collect();
    if !ints.is_empty() {
        writeln!(w, "General")?;
        for chunk in ints.chunks(8) {
            writeln!(w, " {}", chunk.join(" "))?;
        }
    }
    writeln!(w, "End")?;
    Ok(())
}

#[derive(Serialize)]
struct RegistryEntry<'a> {
    name: &'a str,
    tag: crate::uc::ConstraintTag,
    node: Option<usize>,
    kind: &'static str,
    lb: Option<f64>,
    ub: Option<f64>,
    coefficients: Vec<(&'a str, f64)>,
}

/// JSON array describing every row and cone: tag, node and coefficients.
pub fn write_registry_json<W: Write>(model: &Model, w: W) -> Result<()> {
    let finite = |x: f64| x.is_finite().then_some(x);
    let mut entries: Vec<RegistryEntry> = model
        .rows
        .iter()
        .map(|r| RegistryEntry {
            name: &r.name,
            tag: r.tag,
            node: r.node,
            kind: "linear",
            lb: finite(r.lb),
            ub: finite(r.ub),
            coefficients: r
                .terms
                .iter()
                .map(|&(v, c)| (model.vars[v.0].name.as_str(), c))
                .collect(),
        })
        .collect();
    for c in &model.cones {
        let mut coefficients = Vec::new();
        for e in [&c.x1, &c.x2, &c.y] {
            coefficients.extend(
                e.terms
                    .iter()
                    .map(|&(v, k)| (model.vars[v.0].name.as_str(), k)),
            );
        }
        entries.push(RegistryEntry {
            name: &c.name,
            tag: c.tag,
            node: c.node,
            kind: "rotated_cone",
            lb: None,
            ub: None,
            coefficients,
        });
    }
    serde_json::to_writer_pretty(w, &entries)?;
    Ok(())
}
