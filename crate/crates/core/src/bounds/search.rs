//! Depth-first branch and bound over activation patterns.
//!
//! Bits are fixed layer by layer, neuron by neuron, trying `1` before `0`.
//! When a layer is completed the node gets a new norm bound (the gated
//! prefix product times the norms of the remaining weight matrices) and,
//! when the target involves regions, a slack LP over the completed layers.
//! Both quantities can only shrink further down the tree.
//!
//! The tree is cut into a fixed frontier of subtrees that are searched
//! independently and merged in frontier order, so results and statistics
//! do not depend on the number of threads.

use std::time::Instant;

use rayon::prelude::*;

use super::{
    eps_admission, extremum, merge_curve, prepare, value_tol, BoundsError, BoundsReport, CurvePoint, EpsEntry,
    Mode, SearchStats,
};
use crate::domain::InputDomain;
use crate::linalg::Matrix;
use crate::network::{ActivationPattern, MlpNetwork};
use crate::norms::{operator_norm, NormKind};
use crate::region::{prefix_slack, Admission};

/// Frontier depth (in bits) where the tree is split into parallel tasks.
const SPLIT_BITS: usize = 6;

/// Relative margin before a node is discarded against the incumbent. It
/// absorbs rounding in the norm products, so nodes are only dropped when
/// they are clearly worse.
fn prune_margin(incumbent: f64) -> f64 {
    1e-9 * incumbent.abs().max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    /// Closed regions (slack `>= -1e-9`).
    Upper,
    /// Regions with interior (slack `> 1e-9`).
    StrictLower,
    /// Slack `>= eps - 1e-9`.
    Eps(f64),
    /// No region constraints at all.
    Unconstrained,
}

impl Target {
    fn admission(self) -> Option<Admission> {
        match self {
            Target::Upper => Some(Admission::Closed(0.0)),
            Target::StrictLower => Some(Admission::Strict),
            Target::Eps(e) => Some(eps_admission(e)),
            Target::Unconstrained => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    /// `0` when nothing is admitted.
    pub value: f64,
    pub pattern: Option<ActivationPattern>,
    /// Slack of `pattern` (`inf` for unconstrained searches).
    pub slack: f64,
    pub stats: SearchStats,
}

/// Prefix of `sigma` in layer-major, neuron-minor order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartialAssignment {
    pub fixed_bits: Vec<bool>,
}

impl PartialAssignment {
    pub fn new(fixed_bits: Vec<bool>) -> Self {
        Self { fixed_bits }
    }

    pub fn depth(&self) -> usize {
        self.fixed_bits.len()
    }
}

/// Upper bound on `N_p` over all completions of `partial`. Bits of a
/// partially fixed layer are ignored.
pub fn node_upper_bound(net: &MlpNetwork, partial: &PartialAssignment, p: NormKind) -> Result<f64, BoundsError> {
    let widths = net.hidden_widths();
    let total: usize = widths.iter().sum();
    if partial.depth() > total {
        return Err(crate::network::NetworkError::PatternShape {
            expected: widths.to_vec(),
            got: vec![partial.depth()],
        }
        .into());
    }
    let suffix = suffix_norms(net, p)?;
    let mut done = 0;
    let mut used = 0;
    for &w in widths {
        if used + w > partial.depth() {
            break;
        }
        used += w;
        done += 1;
    }
    if done == 0 {
        return Ok(suffix[0]);
    }
    let mut gates: Vec<Vec<bool>> = Vec::with_capacity(done);
    let mut offset = 0;
    for &w in &widths[..done] {
        gates.push(partial.fixed_bits[offset..offset + w].to_vec());
        offset += w;
    }
    let mut prefix: Option<Matrix> = None;
    for (k, g) in gates.iter().enumerate() {
        prefix = Some(extend_prefix(net, prefix.as_ref(), k, g));
    }
    layer_bound(net, &suffix, done - 1, prefix.as_ref().expect("one layer done"), p)
}

/// Maximum of `N_p` over all patterns, ignoring the input domain.
pub fn unconstrained_bound(net: &MlpNetwork, p: NormKind) -> Result<f64, BoundsError> {
    Ok(run(net, None, p, None, Goal::MaxNorm)?.value)
}

/// Single-target search.
pub fn branch_and_bound(
    net: &MlpNetwork,
    domain: &InputDomain,
    p: NormKind,
    target: Target,
) -> Result<SearchOutcome, BoundsError> {
    if let Target::Eps(e) = target {
        super::check_eps(&[e])?;
    }
    match target.admission() {
        None => run(net, None, p, None, Goal::MaxNorm),
        Some(a) => {
            prepare(net, domain, &[])?;
            run(net, Some(domain), p, Some(a), Goal::MaxNorm)
        }
    }
}

/// Full report from a sequence of searches.
pub(super) fn search_report(
    net: &MlpNetwork,
    domain: &InputDomain,
    p: NormKind,
    eps: &[f64],
) -> Result<BoundsReport, BoundsError> {
    let started: Instant = prepare(net, domain, eps)?;
    let mut stats = SearchStats::default();
    let mut search = |admission: Admission, goal: Goal| -> Result<SearchOutcome, BoundsError> {
        let out = run(net, Some(domain), p, Some(admission), goal)?;
        stats += out.stats;
        Ok(out)
    };
    let as_best = |o: &SearchOutcome| o.pattern.clone().map(|s| (o.value, s));

    let upper = search(Admission::Closed(0.0), Goal::MaxNorm)?;
    let lower = search(Admission::Strict, Goal::MaxNorm)?;
    let mut eps_hits = Vec::with_capacity(eps.len());
    for &e in eps {
        eps_hits.push((e, search(eps_admission(e), Goal::MaxNorm)?));
    }

    // Walk the curve from the left: best value beyond the last breakpoint,
    // then the deepest region still reaching that value.
    let mut steps = Vec::new();
    let mut level = Admission::Strict;
    loop {
        let top = search(level, Goal::MaxNorm)?;
        if top.pattern.is_none() {
            steps.push(CurvePoint { eps: f64::INFINITY, value: 0.0, empty: true });
            break;
        }
        let min_norm = top.value - value_tol(top.value);
        let deep = search(level, Goal::MaxSlack { min_norm })?;
        if deep.slack.is_infinite() {
            steps.push(CurvePoint { eps: f64::INFINITY, value: top.value, empty: false });
            break;
        }
        steps.push(CurvePoint { eps: deep.slack, value: top.value, empty: false });
        level = Admission::Above(deep.slack);
    }

    let upper = extremum(net, domain, as_best(&upper), 0.0)?;
    let lower = extremum(net, domain, as_best(&lower), 0.0)?;
    let eps_entries = eps_hits
        .iter()
        .map(|(e, o)| Ok(EpsEntry { eps: *e, bound: extremum(net, domain, as_best(o), *e)? }))
        .collect::<Result<Vec<_>, BoundsError>>()?;
    Ok(BoundsReport {
        p,
        upper,
        lower,
        eps: eps_entries,
        curve: merge_curve(steps),
        domain_relaxed: false,
        mode: Mode::BranchAndBound,
        stats,
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Goal {
    /// Maximize `N_p`.
    MaxNorm,
    /// Maximize the slack among patterns with `N_p >= min_norm`.
    MaxSlack { min_norm: f64 },
}

struct Problem<'a> {
    net: &'a MlpNetwork,
    domain: Option<&'a InputDomain>,
    p: NormKind,
    admission: Option<Admission>,
    goal: Goal,
    /// `suffix[j]`: product of the norms of layers `j+1 ..= L` (1-based),
    /// i.e. of the 0-based layers `j..L`.
    suffix: Vec<f64>,
    /// `(hidden layer, neuron)` of every flat bit position.
    position: Vec<(usize, usize)>,
}

#[derive(Clone)]
struct Node {
    gates: Vec<Vec<bool>>,
    pos: usize,
    prefix: Option<Matrix>,
    bound: f64,
    slack: f64,
}

#[derive(Default)]
struct Best {
    score: Option<f64>,
    value: f64,
    slack: f64,
    pattern: Option<ActivationPattern>,
}

impl Best {
    fn offer(&mut self, score: f64, value: f64, slack: f64, sigma: ActivationPattern) {
        let better = match (self.score, &self.pattern) {
            (Some(s), Some(cur)) => score > s || (score == s && sigma < *cur),
            _ => true,
        };
        if better {
            *self = Best { score: Some(score), value, slack, pattern: Some(sigma) };
        }
    }

    fn merge(&mut self, other: Best) {
        if let (Some(score), Some(sigma)) = (other.score, other.pattern) {
            self.offer(score, other.value, other.slack, sigma);
        }
    }
}

fn suffix_norms(net: &MlpNetwork, p: NormKind) -> Result<Vec<f64>, BoundsError> {
    let layers = net.layers();
    let mut suffix = vec![1.0; layers.len() + 1];
    for j in (0..layers.len()).rev() {
        suffix[j] = suffix[j + 1] * operator_norm(&layers[j].weights, p)?;
    }
    Ok(suffix)
}

/// `diag(g) M_{k+1} prefix`, matching the accumulation order of the
/// network's Jacobian product.
fn extend_prefix(net: &MlpNetwork, prefix: Option<&Matrix>, k: usize, gates: &[bool]) -> Matrix {
    let g: Vec<f64> = gates.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let w = &net.layers()[k].weights;
    match prefix {
        None => w.scale_rows(&g),
        Some(acc) => w.matmul(acc).scale_rows(&g),
    }
}

/// Bound once hidden layer `k` (0-based) is complete. With every hidden
/// layer fixed it is the pattern norm itself.
fn layer_bound(net: &MlpNetwork, suffix: &[f64], k: usize, prefix: &Matrix, p: NormKind) -> Result<f64, BoundsError> {
    let last = net.depth() - 1;
    if k + 1 == last {
        Ok(operator_norm(&net.layers()[last].weights.matmul(prefix), p)?)
    } else {
        Ok(suffix[k + 1] * operator_norm(prefix, p)?)
    }
}

fn run(
    net: &MlpNetwork,
    domain: Option<&InputDomain>,
    p: NormKind,
    admission: Option<Admission>,
    goal: Goal,
) -> Result<SearchOutcome, BoundsError> {
    let widths = net.hidden_widths();
    let position = widths
        .iter()
        .enumerate()
        .flat_map(|(k, &w)| (0..w).map(move |i| (k, i)))
        .collect();
    let problem = Problem { net, domain, p, admission, goal, suffix: suffix_norms(net, p)?, position };
    let root = Node {
        gates: widths.iter().map(|&w| vec![false; w]).collect(),
        pos: 0,
        prefix: None,
        bound: problem.suffix[0],
        slack: f64::INFINITY,
    };

    let mut stats = SearchStats::default();
    let split = SPLIT_BITS.min(problem.position.len());
    let mut frontier = Vec::new();
    problem.expand(root, split, &mut frontier, &mut stats)?;

    let results = frontier
        .into_par_iter()
        .map(|node| {
            let mut best = Best::default();
            let mut local = SearchStats::default();
            problem.visit(node, &mut best, &mut local)?;
            Ok((best, local))
        })
        .collect::<Result<Vec<_>, BoundsError>>()?;

    let mut best = Best::default();
    for (b, s) in results {
        best.merge(b);
        stats += s;
    }
    Ok(SearchOutcome {
        value: if best.pattern.is_some() { best.value } else { 0.0 },
        slack: best.slack,
        pattern: best.pattern,
        stats,
    })
}

impl Problem<'_> {
    fn prunable(&self, node: &Node, best: &Best) -> bool {
        if self.admission.is_some_and(|a| !a.admits(node.slack)) {
            return true;
        }
        match self.goal {
            Goal::MaxNorm => best.score.is_some_and(|s| node.bound < s - prune_margin(s)),
            Goal::MaxSlack { min_norm } => node.bound < min_norm || best.score.is_some_and(|s| node.slack < s),
        }
    }

    /// Children of `node`, in branching order.
    fn children(&self, node: &Node, stats: &mut SearchStats) -> Result<Vec<Node>, BoundsError> {
        let (k, i) = self.position[node.pos];
        let mut out = Vec::with_capacity(2);
        for bit in [true, false] {
            let mut gates = node.gates.clone();
            gates[k][i] = bit;
            let mut child = Node {
                gates,
                pos: node.pos + 1,
                prefix: node.prefix.clone(),
                bound: node.bound,
                slack: node.slack,
            };
            if i + 1 == child.gates[k].len() {
                let prefix = extend_prefix(self.net, node.prefix.as_ref(), k, &child.gates[k]);
                child.bound = layer_bound(self.net, &self.suffix, k, &prefix, self.p)?;
                child.prefix = Some(prefix);
                if let (Some(domain), Some(_)) = (self.domain, self.admission) {
                    stats.lp_calls += 1;
                    child.slack = prefix_slack(self.net, &child.gates, k + 1, domain)?.slack();
                }
            }
            out.push(child);
        }
        Ok(out)
    }

    /// Collects the surviving nodes at depth `split`.
    fn expand(&self, node: Node, split: usize, frontier: &mut Vec<Node>, stats: &mut SearchStats) -> Result<(), BoundsError> {
        if self.prunable(&node, &Best::default()) {
            stats.nodes_explored += 1;
            return Ok(());
        }
        if node.pos == split {
            frontier.push(node);
            return Ok(());
        }
        stats.nodes_explored += 1;
        for child in self.children(&node, stats)? {
            self.expand(child, split, frontier, stats)?;
        }
        Ok(())
    }

    fn visit(&self, node: Node, best: &mut Best, stats: &mut SearchStats) -> Result<(), BoundsError> {
        stats.nodes_explored += 1;
        if self.prunable(&node, best) {
            return Ok(());
        }
        if node.pos == self.position.len() {
            stats.patterns_feasible += 1;
            let score = match self.goal {
                Goal::MaxNorm => node.bound,
                Goal::MaxSlack { .. } => node.slack,
            };
            best.offer(score, node.bound, node.slack, ActivationPattern::new(node.gates));
            return Ok(());
        }
        for child in self.children(&node, stats)? {
            self.visit(child, best, stats)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::brute_force_bounds;
    use crate::network::fixtures::{example1, example2};

    #[test]
    fn first_example_targets() {
        let net = example1();
        for p in NormKind::ALL {
            let up = branch_and_bound(&net, &InputDomain::AllSpace, p, Target::Upper).unwrap();
            assert!((up.value - 2.0).abs() < 1e-12);
            assert_eq!(up.pattern, Some(ActivationPattern::from_ints(&[&[1, 1]])));
            let lo = branch_and_bound(&net, &InputDomain::AllSpace, p, Target::StrictLower).unwrap();
            assert!((lo.value - 1.0).abs() < 1e-12);
            let e = branch_and_bound(&net, &InputDomain::AllSpace, p, Target::Eps(5.0)).unwrap();
            assert!((e.value - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unconstrained_examples() {
        assert!((unconstrained_bound(&example1(), NormKind::L2).unwrap() - 2.0).abs() < 1e-12);
        assert!((unconstrained_bound(&example2(), NormKind::LInf).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn node_bounds() {
        let net = example1();
        let root = node_upper_bound(&net, &PartialAssignment::new(vec![]), NormKind::LInf).unwrap();
        assert_eq!(root, 2.0 * 1.0);
        let full = node_upper_bound(&net, &PartialAssignment::new(vec![true, true]), NormKind::LInf).unwrap();
        assert_eq!(full, 2.0);
        let half = node_upper_bound(&net, &PartialAssignment::new(vec![true]), NormKind::LInf).unwrap();
        assert_eq!(half, root);
        let off = node_upper_bound(&net, &PartialAssignment::new(vec![true, false]), NormKind::L1).unwrap();
        assert_eq!(off, 1.0);
    }

    #[test]
    fn infeasible_first_layer_is_pruned_without_deeper_lps() {
        // On [-1, 1]^2 both first-layer neurons x1 - 5 and x2 - 5 are negative,
        // so every subtree fixing either to 1 dies at the layer boundary.
        let net = MlpNetwork::from_rows(vec![
            (vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![-5.0, -5.0]),
            (vec![vec![1.0, 1.0], vec![1.0, -1.0]], vec![0.0, 0.0]),
            (vec![vec![1.0, 1.0]], vec![0.0]),
        ])
        .unwrap();
        let out = branch_and_bound(&net, &InputDomain::cube(2, 1.0), NormKind::L1, Target::Upper).unwrap();
        // One LP per first-layer completion, then only the all-off branch continues.
        assert_eq!(out.stats.lp_calls, 4 + 4);
        assert_eq!(out.value, 0.0);
        assert!(out.pattern.is_some());
    }

    #[test]
    fn report_matches_oracle_on_examples() {
        for net in [example1(), example2()] {
            for p in NormKind::ALL {
                let eps = [0.0, 0.3, 0.5, 0.6, 2.0];
                let a = search_report(&net, &InputDomain::AllSpace, p, &eps).unwrap();
                let b = brute_force_bounds(&net, &InputDomain::AllSpace, p, &eps).unwrap();
                assert_eq!(a.upper, b.upper);
                assert_eq!(a.lower, b.lower);
                assert_eq!(a.eps, b.eps);
                assert_eq!(a.curve, b.curve);
            }
        }
    }
}
