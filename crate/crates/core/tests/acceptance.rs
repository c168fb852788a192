//! Prints PASS/FAIL for each acceptance criterion; exits nonzero on any FAIL.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use common::{all_patterns, close, example1, example2, random_net, rng, unit_box, NORMS};
use lipbound::bounds::{self, BoundsOptions, BoundsReport, Target};
use lipbound::miqcqp::{self, MiqcqpModel, ModelOptions};
use lipbound::{operator_norm, pattern_norm, ActivationPattern, InputDomain, MlpNetwork, NormKind, RelaxedPattern};
use rand::Rng;

const INSTANCES: u64 = 50;
const MAX_BITS: usize = 12;
const EPS: f64 = 0.05;

struct Outcome {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self { failures: Vec::new(), notes: Vec::new() }
    }

    fn require(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(msg());
        }
    }
}

fn report(net: &MlpNetwork, domain: &InputDomain, p: NormKind, eps: &[f64]) -> BoundsReport {
    bounds::compute_bounds(net, domain, p, eps, BoundsOptions::default()).expect("bounds computation")
}

fn oracle(net: &MlpNetwork, domain: &InputDomain, p: NormKind, eps: &[f64]) -> BoundsReport {
    bounds::brute_force_bounds(net, domain, p, eps).expect("enumeration")
}

fn instances() -> Vec<MlpNetwork> {
    (0..INSTANCES).map(|i| random_net(1000 + i, MAX_BITS, false)).collect()
}

fn criterion1() -> Outcome {
    let mut out = Outcome::new();
    let started = Instant::now();
    let net = example1();
    for p in NORMS {
        let r = report(&net, &InputDomain::AllSpace, p, &[1e-6, 0.5, 5.0]);
        out.require(close(r.upper.value, 2.0, 1e-9), || format!("p={p}: upper {}", r.upper.value));
        out.require(close(r.lower.value, 1.0, 1e-9), || format!("p={p}: lower {}", r.lower.value));
        for e in &r.eps {
            out.require(close(e.bound.value, 1.0, 1e-9) && !e.bound.is_empty(), || {
                format!("p={p}: L_{} = {}", e.eps, e.bound.value)
            });
        }
    }
    let ms = started.elapsed().as_secs_f64() * 1e3;
    out.require(ms < 1000.0, || format!("took {ms:.1} ms"));
    out.notes.push(format!("{ms:.1} ms"));
    out
}

fn criterion2() -> Outcome {
    let mut out = Outcome::new();
    let started = Instant::now();
    let net = example2();
    for p in NORMS {
        let r = report(&net, &InputDomain::AllSpace, p, &[]);
        out.require(close(r.upper.value, 1.0, 1e-9), || format!("p={p}: upper {}", r.upper.value));
        out.require(close(r.lower.value, 1.0, 1e-9), || format!("p={p}: lower {}", r.lower.value));
        let ok = r.curve.len() == 2
            && close(r.curve[0].eps, 0.5, 1e-9)
            && close(r.curve[0].value, 1.0, 1e-9)
            && r.curve[1].eps == f64::INFINITY
            && close(r.curve[1].value, 0.0, 1e-9)
            && !r.curve.iter().any(|c| c.empty);
        out.require(ok, || format!("p={p}: curve {:?}", r.curve));
    }
    let ms = started.elapsed().as_secs_f64() * 1e3;
    out.require(ms < 1000.0, || format!("took {ms:.1} ms"));
    out.notes.push(format!("{ms:.1} ms"));
    out
}

fn criterion3(nets: &[MlpNetwork]) -> Outcome {
    let mut out = Outcome::new();
    let started = Instant::now();
    let mut nodes = 0;
    for (n, net) in nets.iter().enumerate() {
        let domain = unit_box(net);
        for p in NORMS {
            let truth = oracle(net, &domain, p, &[EPS]);
            let expected = [
                (Target::Upper, truth.upper.value),
                (Target::StrictLower, truth.lower.value),
                (Target::Eps(EPS), truth.eps[0].bound.value),
            ];
            for (target, want) in expected {
                let got = bounds::branch_and_bound(net, &domain, p, target).expect("search");
                nodes += got.stats.nodes_explored;
                out.require(close(got.value, want, 1e-9), || {
                    format!("net {n} p={p} {target:?}: search {} oracle {want}", got.value)
                });
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    out.require(secs < 60.0, || format!("took {secs:.1} s"));
    out.notes.push(format!("{} nets x 3 norms x 3 targets, {nodes} nodes, {secs:.2} s", nets.len()));
    out
}

fn criterion4(nets: &[MlpNetwork]) -> Outcome {
    let mut out = Outcome::new();
    for (n, net) in nets.iter().enumerate() {
        let domain = unit_box(net);
        for p in NORMS {
            let r = report(net, &domain, p, &[]);
            let sampled = bounds::sampled_lower_bound(net, &domain, p, 200, n as u64).expect("sampling").value;
            let pairs = bounds::pairwise_quotient_estimate(net, &domain, p, 200, n as u64).expect("pairs");
            let free = bounds::unconstrained_bound(net, p).expect("unconstrained");
            let (lo, up) = (r.lower.value, r.upper.value);
            out.require(sampled <= lo + 1e-9, || format!("net {n} p={p}: sampled {sampled} > lower {lo}"));
            out.require(lo <= up + 1e-9, || format!("net {n} p={p}: lower {lo} > upper {up}"));
            out.require(up <= free + 1e-9, || format!("net {n} p={p}: upper {up} > unconstrained {free}"));
            out.require(pairs <= up + 1e-6, || format!("net {n} p={p}: quotient {pairs} > upper {up}"));
        }
    }
    out
}

fn criterion5() -> Outcome {
    let mut out = Outcome::new();
    let levels = [0.01, 1.0, 100.0];
    for n in 0..10 {
        let net = random_net(5000 + n, MAX_BITS, true);
        for p in NORMS {
            let r = report(&net, &InputDomain::AllSpace, p, &levels);
            for e in &r.eps {
                out.require(close(e.bound.value, r.lower.value, 1e-12), || {
                    format!("net {n} p={p}: L_{} = {} but lower {}", e.eps, e.bound.value, r.lower.value)
                });
            }
        }
    }
    out
}

fn criterion6(nets: &[MlpNetwork]) -> Outcome {
    let mut out = Outcome::new();
    let mut steps = 0;
    for (n, net) in nets.iter().enumerate() {
        let domain = unit_box(net);
        for p in NORMS {
            let values: Vec<f64> = all_patterns(net).iter().map(|s| pattern_norm(net, s, p).unwrap()).collect();
            let r = report(net, &domain, p, &[]);
            steps += r.curve.len();
            for pair in r.curve.windows(2) {
                out.require(pair[1].value <= pair[0].value + 1e-12, || {
                    format!("net {n} p={p}: curve rises {} -> {}", pair[0].value, pair[1].value)
                });
                out.require(pair[0].eps < pair[1].eps, || format!("net {n} p={p}: breakpoints out of order"));
            }
            for c in &r.curve {
                let member = values.iter().any(|v| close(*v, c.value, 1e-9)) || (c.empty && c.value == 0.0);
                out.require(member, || format!("net {n} p={p}: curve value {} is no pattern norm", c.value));
            }
        }
    }
    out.notes.push(format!("{steps} curve pieces"));
    out
}

fn criterion7(nets: &[MlpNetwork]) -> Outcome {
    let mut out = Outcome::new();
    let mut checked = 0;
    for (n, net) in nets.iter().take(10).enumerate() {
        let domain = unit_box(net);
        for p in NORMS {
            let r = report(net, &domain, p, &[EPS]);
            let mut variants = vec![(0.0, false), (EPS, false)];
            if p == NormKind::LInf {
                variants.extend([(0.0, true), (EPS, true)]);
            }
            for (eps, linearize) in variants {
                let bound = if eps == 0.0 { &r.upper } else { &r.eps_entry(eps).unwrap().bound };
                if bound.is_empty() {
                    continue;
                }
                let opts = ModelOptions { linearize_inf_objective: linearize };
                let model = miqcqp::build_model(net, &domain, p, eps, opts).expect("model");
                let a = miqcqp::witness_from_bounds(&model, net, &domain, &r).expect("witness");
                let c = miqcqp::check_assignment(&model, &a, 1e-7).expect("check");
                let want = if p == NormKind::L2 { bound.value * bound.value } else { bound.value };
                checked += 1;
                out.require(c.is_feasible(), || {
                    format!("net {n} p={p} eps={eps} lin={linearize}: {:?}", c.violations.first())
                });
                out.require(close(c.objective, want, 1e-7), || {
                    format!("net {n} p={p} eps={eps} lin={linearize}: objective {} vs {want}", c.objective)
                });
            }
        }
    }
    out.notes.push(format!("{checked} witnesses"));
    out
}

/// Interval of values of variable `target` satisfying the named rows and its
/// bounds when every other variable is fixed by `fixed`.
fn feasible_interval(model: &MiqcqpModel, rows: &[&str], target: usize, fixed: &BTreeMap<usize, f64>) -> (f64, f64) {
    let var = &model.variables[target];
    let mut lo = var.lower.unwrap_or(f64::NEG_INFINITY);
    let mut hi = var.upper.unwrap_or(f64::INFINITY);
    let val = |i: usize| fixed[&i];
    let mut apply = |coef: f64, rest: f64, relation: lipbound::Relation, rhs: f64| {
        // coef * t + rest (rel) rhs
        let bound = (rhs - rest) / coef;
        let (le, ge) = match relation {
            lipbound::Relation::Le => (coef > 0.0, coef < 0.0),
            lipbound::Relation::Ge => (coef < 0.0, coef > 0.0),
            lipbound::Relation::Eq => (true, true),
        };
        if le {
            hi = hi.min(bound);
        }
        if ge {
            lo = lo.max(bound);
        }
    };
    let split = |terms: &[(usize, f64)]| {
        let mut coef = 0.0;
        let mut rest = 0.0;
        for &(i, c) in terms {
            if i == target {
                coef += c;
            } else {
                rest += c * val(i);
            }
        }
        (coef, rest)
    };
    for c in model.linear.iter().filter(|c| rows.contains(&c.name.as_str())) {
        let (coef, rest) = split(&c.terms);
        apply(coef, rest, c.relation, c.rhs);
    }
    for c in model.quadratic.iter().filter(|c| rows.contains(&c.name.as_str())) {
        assert!(c.quad.iter().all(|&(i, j, _)| i != target && j != target));
        let (coef, rest) = split(&c.terms);
        let q: f64 = c.quad.iter().map(|&(i, j, v)| v * val(i) * val(j)).sum();
        apply(coef, rest + q, c.relation, c.rhs);
    }
    (lo, hi)
}

/// Both sign-bit values: every feasible one pins the magnitude variable to
/// `|v|` and at least one is feasible.
fn abs_encoding_exact(model: &MiqcqpModel, rows: &[&str], v: usize, a: usize, bit: usize, value: f64, scale: f64) -> Result<(), String> {
    let tol = 1e-12 * scale.max(1.0);
    let mut feasible = 0;
    for lambda in [0.0, 1.0] {
        let fixed = BTreeMap::from([(v, value), (bit, lambda)]);
        let (lo, hi) = feasible_interval(model, rows, a, &fixed);
        if lo > hi + tol {
            continue;
        }
        feasible += 1;
        if !(close(lo, value.abs(), tol) && close(hi, value.abs(), tol)) {
            return Err(format!("value {value}, bit {lambda}: magnitude in [{lo}, {hi}]"));
        }
    }
    if feasible == 0 {
        return Err(format!("value {value}: no sign bit is feasible"));
    }
    Ok(())
}

fn criterion8(nets: &[MlpNetwork]) -> Outcome {
    let mut out = Outcome::new();
    let mut r = rng(8);
    let mut checks = 0;

    // |a| = (2 mu - 1) a on the bilinear p=inf model, and the six-row
    // big-M block on the p=1 model.
    let net = random_net(77, 6, false);
    let domain = InputDomain::AllSpace;
    let bilinear = miqcqp::build_model(&net, &domain, NormKind::LInf, 0.0, ModelOptions::default()).unwrap();
    let big_m = miqcqp::build_model(&net, &domain, NormKind::L1, 0.0, ModelOptions::default()).unwrap();
    let c = big_m.metadata.big_m.unwrap();
    let depth = net.depth();
    let idx = |m: &MiqcqpModel, name: String| m.index_of(&name).unwrap();
    let outputs = net.output_dim();
    for k in 0..10_000 {
        let i = k % outputs + 1;
        let value = match k % 50 {
            0 => 0.0,
            1 => c,
            2 => -c,
            _ => r.random_range(-c..=c),
        };
        let row = format!("u_def_{i}");
        let res = abs_encoding_exact(
            &bilinear,
            &[&row],
            idx(&bilinear, format!("y{depth}_{i}")),
            idx(&bilinear, format!("u_{i}")),
            idx(&bilinear, format!("mu_{i}")),
            value,
            c,
        );
        out.require(res.is_ok(), || format!("bilinear: {}", res.clone().unwrap_err()));
        let names: Vec<String> = ["ge_pos", "ge_neg", "sign_up", "sign_lo", "le_neg", "le_pos"]
            .iter()
            .map(|t| format!("w_{t}_{i}"))
            .collect();
        let rows: Vec<&str> = names.iter().map(String::as_str).collect();
        let res = abs_encoding_exact(
            &big_m,
            &rows,
            idx(&big_m, format!("y{depth}_{i}")),
            idx(&big_m, format!("w_{i}")),
            idx(&big_m, format!("mu_{i}")),
            value,
            c,
        );
        out.require(res.is_ok(), || format!("big-M: {}", res.clone().unwrap_err()));
        checks += 2;
    }

    // Jacobian chains from unit-ball inputs stay inside the big-M box.
    let mut chains = 0;
    for k in 0..1000 {
        let net = &nets[k % nets.len()];
        for p in [NormKind::L1, NormKind::LInf] {
            let c = miqcqp::compute_big_m(net, p).unwrap();
            let flat: Vec<bool> = (0..net.total_hidden()).map(|_| r.random_bool(0.5)).collect();
            let sigma = ActivationPattern::from_flat(net.hidden_widths(), &flat);
            let mut y: Vec<f64> = (0..net.input_dim()).map(|_| r.random_range(-1.0..=1.0)).collect();
            let scale = p.vector_norm(&y);
            if scale > 1.0 {
                y.iter_mut().for_each(|v| *v /= scale);
            }
            let yl = net.jacobian(&sigma).unwrap().matvec(&y);
            let worst = yl.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            out.require(worst <= c, || format!("chain {k} p={p}: |y_L| = {worst} > C = {c}"));
            chains += 1;
        }
    }
    out.notes.push(format!("{checks} encoding checks, {chains} chains"));
    out
}

fn criterion9(nets: &[MlpNetwork]) -> Outcome {
    let mut out = Outcome::new();
    let mut r = rng(9);
    for (n, net) in nets.iter().enumerate() {
        let widths = net.hidden_widths().to_vec();
        for p in NORMS {
            let binary_max = all_patterns(net)
                .iter()
                .map(|s| pattern_norm(net, s, p).unwrap())
                .fold(0.0, f64::max);
            let norm_of = |values: &Vec<Vec<f64>>| {
                let g = RelaxedPattern::new(values.clone()).unwrap();
                operator_norm(&net.relaxed_jacobian(&g).unwrap(), p).unwrap()
            };
            for _ in 0..1000 {
                let g: Vec<Vec<f64>> = widths.iter().map(|&w| (0..w).map(|_| r.random_range(0.0..=1.0)).collect()).collect();
                let v = norm_of(&g);
                out.require(v <= binary_max + 1e-9, || format!("net {n} p={p}: relaxed {v} > binary {binary_max}"));

                let layer = r.random_range(0..widths.len());
                let unit = r.random_range(0..widths[layer]);
                let (t1, t2): (f64, f64) = (r.random_range(0.0..=1.0), r.random_range(0.0..=1.0));
                let at = |t: f64| {
                    let mut h = g.clone();
                    h[layer][unit] = t;
                    norm_of(&h)
                };
                let (f1, f2, mid) = (at(t1), at(t2), at(0.5 * (t1 + t2)));
                out.require(mid <= 0.5 * (f1 + f2) + 1e-9, || {
                    format!("net {n} p={p}: midpoint {mid} > chord {}", 0.5 * (f1 + f2))
                });
            }
        }
    }
    out
}

fn main() -> ExitCode {
    let nets = instances();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("first example regression", Box::new(criterion1)),
        ("second example regression", Box::new(criterion2)),
        ("search equals enumeration", Box::new(|| criterion3(&nets))),
        ("sandwich", Box::new(|| criterion4(&nets))),
        ("zero-bias levels", Box::new(criterion5)),
        ("monotone curve", Box::new(|| criterion6(&nets))),
        ("model and engine agree", Box::new(|| criterion7(&nets))),
        ("linearization suite", Box::new(|| criterion8(&nets))),
        ("relaxation dominance", Box::new(|| criterion9(&nets))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = run();
        let status = if outcome.failures.is_empty() { "PASS" } else { "FAIL" };
        let notes = if outcome.notes.is_empty() { String::new() } else { format!(" ({})", outcome.notes.join(", ")) };
        println!("criterion {}: {status} {name}{notes}", i + 1);
        for f in outcome.failures.iter().take(5) {
            println!("    {f}");
        }
        if outcome.failures.len() > 5 {
            println!("    ... {} more", outcome.failures.len() - 5);
        }
        if !outcome.failures.is_empty() {
            failed += 1;
        }
    }
    if failed == 0 {
        println!("all criteria PASS");
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria FAIL");
        ExitCode::FAILURE
    }
}
