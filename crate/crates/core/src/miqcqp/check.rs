//! Independent evaluation of assignments against a model, and construction
//! of feasible assignments from engine results.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{MiqcqpModel, ModelError, VarKind};
use crate::bounds::BoundsReport;
use crate::domain::InputDomain;
use crate::network::{ActivationPattern, MlpNetwork};
use crate::norms::{norm_witness, NormKind};
use crate::simplex::Relation;

/// Variable name to value.
pub type Assignment = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: String,
    pub lhs: f64,
    pub rhs: f64,
    /// Signed room left in the constraint; negative when violated.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub violations: Vec<Violation>,
    pub objective: f64,
}

impl CheckReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

fn room(relation: Relation, lhs: f64, rhs: f64) -> f64 {
    -relation.violation(lhs, rhs)
}

/// Evaluates every bound, integrality requirement, linear and quadratic
/// constraint. A constraint is violated when it misses by more than `tol`.
pub fn check_assignment(model: &MiqcqpModel, a: &Assignment, tol: f64) -> Result<CheckReport, ModelError> {
    let values = model
        .variables
        .iter()
        .map(|v| a.get(&v.name).copied().ok_or_else(|| ModelError::MissingVariable(v.name.clone())))
        .collect::<Result<Vec<f64>, ModelError>>()?;
    let lin = |terms: &[(usize, f64)]| terms.iter().fold(0.0, |acc, &(i, c)| acc + c * values[i]);
    let quad = |q: &[(usize, usize, f64)]| q.iter().fold(0.0, |acc, &(i, j, c)| acc + c * values[i] * values[j]);

    let mut violations = Vec::new();
    let mut record = |constraint: String, relation: Relation, lhs: f64, rhs: f64| {
        let slack = room(relation, lhs, rhs);
        if slack < -tol || lhs.is_nan() {
            violations.push(Violation { constraint, lhs, rhs, slack });
        }
    };
    for (v, &x) in model.variables.iter().zip(&values) {
        if let Some(l) = v.lower {
            record(format!("{}_lower", v.name), Relation::Ge, x, l);
        }
        if let Some(u) = v.upper {
            record(format!("{}_upper", v.name), Relation::Le, x, u);
        }
        if v.kind == VarKind::Binary {
            let nearest = x.round();
            record(format!("{}_integral", v.name), Relation::Eq, x, nearest);
        }
    }
    for c in &model.linear {
        record(c.name.clone(), c.relation, lin(&c.terms), c.rhs);
    }
    for c in &model.quadratic {
        record(c.name.clone(), c.relation, quad(&c.quad) + lin(&c.terms), c.rhs);
    }
    let objective = quad(&model.objective.quad) + lin(&model.objective.terms) + model.objective.constant;
    Ok(CheckReport { violations, objective })
}

fn bit(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Assignment for pattern `sigma` and input `x0`: forward pass and Jacobian
/// chain by recursion, `y_0` a norm-attaining unit vector, and sign /
/// selector variables set from the resulting values.
pub fn witness_for_pattern(
    model: &MiqcqpModel,
    net: &MlpNetwork,
    sigma: &ActivationPattern,
    x0: &[f64],
) -> Result<Assignment, ModelError> {
    net.check_pattern(sigma)?;
    let p = model.metadata.p;
    let depth = net.depth();
    let layers = net.layers();
    let mut a = Assignment::new();
    let mut put = |prefix: &str, k: Option<usize>, v: &[f64]| {
        for (i, &x) in v.iter().enumerate() {
            let name = match k {
                Some(k) => format!("{prefix}{k}_{}", i + 1),
                None => format!("{prefix}_{}", i + 1),
            };
            a.insert(name, x);
        }
    };

    let mut x = x0.to_vec();
    put("x", Some(0), &x);
    for k in 1..depth {
        let layer = &layers[k - 1];
        let bits = &sigma.bits[k - 1];
        x = (0..bits.len())
            .map(|i| {
                let pre = layer.weights.row(i).iter().zip(&x).fold(0.0, |acc, (w, v)| acc + w * v) + layer.bias[i];
                bit(bits[i]) * pre
            })
            .collect();
        put("x", Some(k), &x);
        put("s", Some(k), &bits.iter().map(|&b| bit(b)).collect::<Vec<_>>());
    }

    let jac = net.jacobian(sigma)?;
    let y0 = norm_witness(&jac, p)?.vector;
    put("y", Some(0), &y0);
    let mut y = y0.clone();
    for k in 1..=depth {
        let w = &layers[k - 1].weights;
        let gated: Vec<f64> = if k == 1 {
            y.clone()
        } else {
            y.iter().zip(&sigma.bits[k - 2]).map(|(v, &b)| bit(b) * v).collect()
        };
        y = w.matvec(&gated);
        put("y", Some(k), &y);
    }
    let yl = y;
    let sign_bit = |v: &f64| if *v <= 0.0 { 1.0 } else { 0.0 };
    let abs: Vec<f64> = yl.iter().map(|v| v.abs()).collect();
    match p {
        NormKind::L2 => {}
        NormKind::L1 => {
            put("u", None, &y0.iter().map(|v| v.abs()).collect::<Vec<_>>());
            put("nu", None, &y0.iter().map(sign_bit).collect::<Vec<_>>());
            put("w", None, &abs);
            put("mu", None, &yl.iter().map(sign_bit).collect::<Vec<_>>());
        }
        NormKind::LInf => {
            // The bilinear identity |a| = (2 mu - 1) a needs mu = 1 for a >= 0;
            // the big-M rows use the opposite orientation.
            let mu: Vec<f64> = if model.metadata.linearized_inf {
                yl.iter().map(sign_bit).collect()
            } else {
                yl.iter().map(|v| bit(*v >= 0.0)).collect()
            };
            let u = abs.clone();
            let mut top = 0;
            for (i, v) in u.iter().enumerate() {
                if *v > u[top] {
                    top = i;
                }
            }
            let eta: Vec<f64> = (0..u.len()).map(|i| bit(i == top)).collect();
            if model.metadata.linearized_inf {
                put("z", None, &u.iter().zip(&eta).map(|(a, b)| a * b).collect::<Vec<_>>());
            }
            put("mu", None, &mu);
            put("u", None, &u);
            put("eta", None, &eta);
        }
    }
    Ok(a)
}

/// Witness assignment for the model at level `eps` from a bounds report:
/// the upper-bound argmax when `eps == 0`, otherwise the matching `eps`
/// entry.
pub fn witness_from_bounds(
    model: &MiqcqpModel,
    net: &MlpNetwork,
    domain: &InputDomain,
    report: &BoundsReport,
) -> Result<Assignment, ModelError> {
    domain.validate(net.input_dim())?;
    let eps = model.metadata.eps;
    if model.metadata.p != report.p {
        return Err(ModelError::NoWitness(format!(
            "model is for p = {}, report for p = {}",
            model.metadata.p, report.p
        )));
    }
    let bound = if eps == 0.0 {
        &report.upper
    } else {
        &report
            .eps_entry(eps)
            .ok_or_else(|| ModelError::NoWitness(format!("report has no entry for eps = {eps}")))?
            .bound
    };
    match (&bound.pattern, &bound.witness) {
        (Some(sigma), Some(x)) => witness_for_pattern(model, net, sigma, x),
        _ => Err(ModelError::NoWitness(format!("no pattern is admitted at eps = {eps}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::super::{build_model, ModelOptions};
    use super::*;
    use crate::bounds::brute_force_bounds;
    use crate::network::fixtures::{example1, example2};

    #[test]
    fn second_example_inf_witness() {
        let net = example2();
        let d = InputDomain::AllSpace;
        let report = brute_force_bounds(&net, &d, NormKind::LInf, &[0.1]).unwrap();
        let m = build_model(&net, &d, NormKind::LInf, 0.1, ModelOptions::default()).unwrap();
        let a = witness_from_bounds(&m, &net, &d, &report).unwrap();
        let r = check_assignment(&m, &a, 1e-7).unwrap();
        assert!(r.is_feasible(), "{:?}", r.violations);
        assert!((r.objective - 1.0).abs() < 1e-12);

        let mut flipped = a.clone();
        let s = flipped.get_mut("s1_1").unwrap();
        *s = 1.0 - *s;
        let r = check_assignment(&m, &flipped, 1e-7).unwrap();
        assert!(r.violations.iter().any(|v| v.constraint.starts_with("margin1_1")), "{:?}", r.violations);
    }

    #[test]
    fn zero_assignment_breaks_selector() {
        let m = build_model(&example2(), &InputDomain::AllSpace, NormKind::LInf, 0.0, ModelOptions::default()).unwrap();
        let a: Assignment = m.variables.iter().map(|v| (v.name.clone(), 0.0)).collect();
        let r = check_assignment(&m, &a, 1e-7).unwrap();
        assert!(r.violations.iter().any(|v| v.constraint == "eta_sum"));
    }

    #[test]
    fn missing_variable() {
        let m = build_model(&example1(), &InputDomain::AllSpace, NormKind::L2, 0.0, ModelOptions::default()).unwrap();
        assert!(matches!(
            check_assignment(&m, &Assignment::new(), 1e-7),
            Err(ModelError::MissingVariable(name)) if name == "x0_1"
        ));
    }

    #[test]
    fn first_example_l2_objective_is_squared_bound() {
        let net = example1();
        let d = InputDomain::AllSpace;
        let report = brute_force_bounds(&net, &d, NormKind::L2, &[]).unwrap();
        let m = build_model(&net, &d, NormKind::L2, 0.0, ModelOptions::default()).unwrap();
        let a = witness_from_bounds(&m, &net, &d, &report).unwrap();
        assert!((a["x0_1"] - 1.0).abs() < 1e-12);
        let r = check_assignment(&m, &a, 1e-7).unwrap();
        assert!(r.is_feasible(), "{:?}", r.violations);
        assert!((r.objective - 4.0).abs() < 1e-9);
    }

    #[test]
    fn second_example_l1_witness() {
        let net = example2();
        let d = InputDomain::AllSpace;
        let report = brute_force_bounds(&net, &d, NormKind::L1, &[0.4]).unwrap();
        let m = build_model(&net, &d, NormKind::L1, 0.4, ModelOptions::default()).unwrap();
        let a = witness_from_bounds(&m, &net, &d, &report).unwrap();
        assert_eq!(a["x0_1"], 0.0);
        let r = check_assignment(&m, &a, 1e-7).unwrap();
        assert!(r.is_feasible(), "{:?}", r.violations);
        assert!((r.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_level_has_no_witness() {
        // On [-0.2, 0.2] nothing reaches margin 5.
        let net = example2();
        let d = InputDomain::cube(1, 0.2);
        let report = brute_force_bounds(&net, &d, NormKind::L1, &[5.0]).unwrap();
        let m = build_model(&net, &d, NormKind::L1, 5.0, ModelOptions::default()).unwrap();
        assert!(matches!(witness_from_bounds(&m, &net, &d, &report), Err(ModelError::NoWitness(_))));
    }
}
