//! Model serialization: a JSON document and an algebraic LP-style text.
//!
//! JSON layout (`format_version` 1):
//!
//! ```text
//! { "format_version": 1,
//!   "metadata":  { "p": 1 | 2 | "inf", "eps": .., "big_m": .. | null,
//!                  "linearized_inf": bool, "groups": { "x": [names], .. } },
//!   "variables": [ { "name", "kind": "continuous" | "binary", "lower", "upper" } ],
//!   "linear":    [ { "name", "terms": [[var, coef]], "relation": "<=" | ">=" | "=", "rhs" } ],
//!   "quadratic": [ { "name", "quad": [[var_i, var_j, q]], "terms", "relation", "rhs" } ],
//!   "objective": { "sense": "maximize", "quad", "terms", "constant" } }
//! ```
//!
//! Missing bounds are `null`. Floats are written in their shortest
//! round-trip form, so `parse_json(emit_json(m)) == m` exactly.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    LinearConstraint, MiqcqpModel, ModelError, ModelMetadata, Objective, QuadraticConstraint, VarKind, Variable,
};
use crate::norms::NormKind;
use crate::simplex::Relation;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    metadata: MetadataFile,
    variables: Vec<VariableFile>,
    linear: Vec<LinearFile>,
    quadratic: Vec<QuadraticFile>,
    objective: ObjectiveFile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetadataFile {
    p: NormKind,
    eps: f64,
    big_m: Option<f64>,
    #[serde(default)]
    linearized_inf: bool,
    #[serde(default)]
    groups: BTreeMap<String, Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VariableFile {
    name: String,
    kind: VarKind,
    lower: Option<f64>,
    upper: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearFile {
    name: String,
    terms: Vec<(String, f64)>,
    relation: Relation,
    rhs: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuadraticFile {
    name: String,
    quad: Vec<(String, String, f64)>,
    #[serde(default)]
    terms: Vec<(String, f64)>,
    relation: Relation,
    rhs: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectiveFile {
    sense: String,
    #[serde(default)]
    quad: Vec<(String, String, f64)>,
    #[serde(default)]
    terms: Vec<(String, f64)>,
    #[serde(default)]
    constant: f64,
}

pub fn emit_json(model: &MiqcqpModel) -> String {
    let name = |i: usize| model.variables[i].name.clone();
    let terms = |t: &[(usize, f64)]| t.iter().map(|&(i, c)| (name(i), c)).collect::<Vec<_>>();
    let quad = |q: &[(usize, usize, f64)]| q.iter().map(|&(i, j, c)| (name(i), name(j), c)).collect::<Vec<_>>();
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        metadata: MetadataFile {
            p: model.metadata.p,
            eps: model.metadata.eps,
            big_m: model.metadata.big_m,
            linearized_inf: model.metadata.linearized_inf,
            groups: model.metadata.groups.clone(),
        },
        variables: model
            .variables
            .iter()
            .map(|v| VariableFile { name: v.name.clone(), kind: v.kind, lower: v.lower, upper: v.upper })
            .collect(),
        linear: model
            .linear
            .iter()
            .map(|c| LinearFile { name: c.name.clone(), terms: terms(&c.terms), relation: c.relation, rhs: c.rhs })
            .collect(),
        quadratic: model
            .quadratic
            .iter()
            .map(|c| QuadraticFile {
                name: c.name.clone(),
                quad: quad(&c.quad),
                terms: terms(&c.terms),
                relation: c.relation,
                rhs: c.rhs,
            })
            .collect(),
        objective: ObjectiveFile {
            sense: "maximize".into(),
            quad: quad(&model.objective.quad),
            terms: terms(&model.objective.terms),
            constant: model.objective.constant,
        },
    };
    serde_json::to_string_pretty(&file).expect("model serialization is infallible")
}

pub fn parse_json(text: &str) -> Result<MiqcqpModel, ModelError> {
    let file: ModelFile = serde_json::from_str(text)?;
    let schema = |msg: String| Err(ModelError::Schema(msg));
    if file.format_version != FORMAT_VERSION {
        return schema(format!("unsupported format_version {}", file.format_version));
    }
    if file.objective.sense != "maximize" {
        return schema(format!("objective.sense: expected \"maximize\", got {:?}", file.objective.sense));
    }

    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut variables = Vec::with_capacity(file.variables.len());
    for (i, v) in file.variables.iter().enumerate() {
        if index.insert(v.name.as_str(), i).is_some() {
            return schema(format!("variables[{i}]: duplicate name '{}'", v.name));
        }
        if v.kind == VarKind::Binary && (v.lower != Some(0.0) || v.upper != Some(1.0)) {
            return schema(format!("variables[{i}]: binary '{}' must have bounds [0, 1]", v.name));
        }
        variables.push(Variable { name: v.name.clone(), kind: v.kind, lower: v.lower, upper: v.upper });
    }
    let resolve = |path: &str, name: &str| -> Result<usize, ModelError> {
        index
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::Schema(format!("{path}: undeclared variable '{name}'")))
    };
    let terms = |path: String, t: &[(String, f64)]| -> Result<Vec<(usize, f64)>, ModelError> {
        t.iter().map(|(n, c)| Ok((resolve(&path, n)?, *c))).collect()
    };
    let quad = |path: String, q: &[(String, String, f64)]| -> Result<Vec<(usize, usize, f64)>, ModelError> {
        q.iter()
            .map(|(a, b, c)| {
                let (i, j) = (resolve(&path, a)?, resolve(&path, b)?);
                Ok((i.max(j), i.min(j), *c))
            })
            .collect()
    };

    let linear = file
        .linear
        .iter()
        .enumerate()
        .map(|(k, c)| {
            Ok(LinearConstraint {
                name: c.name.clone(),
                terms: terms(format!("linear[{k}] ({})", c.name), &c.terms)?,
                relation: c.relation,
                rhs: c.rhs,
            })
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let quadratic = file
        .quadratic
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let path = format!("quadratic[{k}] ({})", c.name);
            Ok(QuadraticConstraint {
                name: c.name.clone(),
                quad: quad(path.clone(), &c.quad)?,
                terms: terms(path, &c.terms)?,
                relation: c.relation,
                rhs: c.rhs,
            })
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let objective = Objective {
        quad: quad("objective".into(), &file.objective.quad)?,
        terms: terms("objective".into(), &file.objective.terms)?,
        constant: file.objective.constant,
    };
    for (group, names) in &file.metadata.groups {
        for n in names {
            resolve(&format!("metadata.groups.{group}"), n)?;
        }
    }
    Ok(MiqcqpModel {
        variables,
        linear,
        quadratic,
        objective,
        metadata: ModelMetadata {
            p: file.metadata.p,
            eps: file.metadata.eps,
            big_m: file.metadata.big_m,
            linearized_inf: file.metadata.linearized_inf,
            groups: file.metadata.groups,
        },
    })
}

/// Algebraic text in the common LP-file layout. Quadratic parts sit in
/// brackets; the objective's bracket is halved, as the format expects.
pub fn emit_lp_text(model: &MiqcqpModel) -> String {
    let name = |i: usize| model.variables[i].name.as_str();
    let mut out = String::new();
    let meta = &model.metadata;
    let _ = writeln!(out, "\\ format_version {FORMAT_VERSION}");
    let _ = writeln!(
        out,
        "\\ p = {}, eps = {}, big-M = {}",
        meta.p,
        meta.eps,
        meta.big_m.map_or("none".to_string(), |c| c.to_string())
    );

    out.push_str("Maximize\n obj:");
    let mut expr = linear_expr(&model.objective.terms, &name);
    if !model.objective.quad.is_empty() {
        let doubled: Vec<_> = model.objective.quad.iter().map(|&(i, j, q)| (i, j, 2.0 * q)).collect();
        expr.push_str(&format!(" + [ {} ] / 2", quad_expr(&doubled, &name)));
    }
    if model.objective.constant != 0.0 {
        expr.push_str(&format!(" {}", signed(model.objective.constant, "")));
    }
    out.push_str(&tidy(&expr));
    out.push('\n');

    out.push_str("Subject To\n");
    for c in &model.linear {
        let _ = writeln!(
            out,
            " {}:{} {} {}",
            c.name,
            tidy(&linear_expr(&c.terms, &name)),
            c.relation.symbol(),
            c.rhs
        );
    }
    if !model.quadratic.is_empty() {
        out.push_str("Quadratic Constraints\n");
        for c in &model.quadratic {
            let mut expr = linear_expr(&c.terms, &name);
            if !c.quad.is_empty() {
                expr.push_str(&format!(" + [ {} ]", quad_expr(&c.quad, &name)));
            }
            let _ = writeln!(out, " {}:{} {} {}", c.name, tidy(&expr), c.relation.symbol(), c.rhs);
        }
    }

    out.push_str("Bounds\n");
    for v in model.variables.iter().filter(|v| v.kind == VarKind::Continuous) {
        let line = match (v.lower, v.upper) {
            (None, None) => format!(" {} free", v.name),
            (Some(l), None) => format!(" {} >= {l}", v.name),
            (None, Some(u)) => format!(" -inf <= {} <= {u}", v.name),
            (Some(l), Some(u)) => format!(" {l} <= {} <= {u}", v.name),
        };
        out.push_str(&line);
        out.push('\n');
    }
    let binaries: Vec<&str> = model
        .variables
        .iter()
        .filter(|v| v.kind == VarKind::Binary)
        .map(|v| v.name.as_str())
        .collect();
    if !binaries.is_empty() {
        out.push_str("Binaries\n");
        for b in binaries {
            let _ = writeln!(out, " {b}");
        }
    }
    out.push_str("End\n");
    out
}

fn signed(c: f64, var: &str) -> String {
    let mag = c.abs();
    let sign = if c < 0.0 { "-" } else { "+" };
    match (var.is_empty(), mag == 1.0) {
        (false, true) => format!("{sign} {var}"),
        (false, false) => format!("{sign} {mag} {var}"),
        (true, _) => format!("{sign} {mag}"),
    }
}

fn linear_expr<'a>(terms: &[(usize, f64)], name: &impl Fn(usize) -> &'a str) -> String {
    terms.iter().map(|&(i, c)| format!(" {}", signed(c, name(i)))).collect()
}

fn quad_expr<'a>(quad: &[(usize, usize, f64)], name: &impl Fn(usize) -> &'a str) -> String {
    let body: String = quad
        .iter()
        .map(|&(i, j, q)| {
            let prod = if i == j { format!("{} ^ 2", name(i)) } else { format!("{} * {}", name(i), name(j)) };
            format!(" {}", signed(q, &prod))
        })
        .collect();
    tidy(&body).trim().to_string()
}

/// Drops a leading `+`, and renders an empty expression as `0`.
fn tidy(expr: &str) -> String {
    let t = expr.trim_start();
    let t = t.strip_prefix("+ ").unwrap_or(t);
    if t.is_empty() {
        " 0".into()
    } else {
        format!(" {t}")
    }
}
