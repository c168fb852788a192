//! Exhaustive enumeration over every activation pattern.

use rayon::prelude::*;

use super::{
    eps_admission, extremum, merge_curve, prepare, BoundsError, BoundsReport, CurvePoint, EpsEntry, Mode,
    SearchStats, ENUMERATION_LIMIT,
};
use crate::domain::InputDomain;
use crate::network::{ActivationPattern, MlpNetwork};
use crate::norms::{pattern_norm, NormKind};
use crate::region::{max_slack, Admission};

struct Scored {
    sigma: ActivationPattern,
    slack: f64,
    norm: f64,
}

/// Enumerates all `2^(hidden neurons)` patterns, computing each slack and
/// pattern norm.
pub fn brute_force_bounds(
    net: &MlpNetwork,
    domain: &InputDomain,
    p: NormKind,
    eps: &[f64],
) -> Result<BoundsReport, BoundsError> {
    let bits = net.total_hidden();
    if bits > ENUMERATION_LIMIT {
        return Err(BoundsError::TooManyBits { bits, limit: ENUMERATION_LIMIT });
    }
    let started = prepare(net, domain, eps)?;
    let widths = net.hidden_widths();
    // Index order is lexicographic order, so the first maximum wins ties.
    let scored = (0..1u64 << bits)
        .into_par_iter()
        .map(|index| {
            let sigma = ActivationPattern::from_index(widths, index);
            let slack = max_slack(net, &sigma, domain)?.slack();
            let norm = pattern_norm(net, &sigma, p)?;
            Ok(Scored { sigma, slack, norm })
        })
        .collect::<Result<Vec<_>, BoundsError>>()?;

    let best = |admission: Admission| {
        let mut top: Option<&Scored> = None;
        for s in scored.iter().filter(|s| admission.admits(s.slack)) {
            if top.is_none_or(|t| s.norm > t.norm) {
                top = Some(s);
            }
        }
        top.map(|t| (t.norm, t.sigma.clone()))
    };

    let upper = extremum(net, domain, best(Admission::Closed(0.0)), 0.0)?;
    let lower = extremum(net, domain, best(Admission::Strict), 0.0)?;
    let eps_entries = eps
        .iter()
        .map(|&e| {
            Ok(EpsEntry { eps: e, bound: extremum(net, domain, best(eps_admission(e)), e)? })
        })
        .collect::<Result<Vec<_>, BoundsError>>()?;

    let strict: Vec<&Scored> = scored.iter().filter(|s| Admission::Strict.admits(s.slack)).collect();
    let mut breakpoints: Vec<f64> = strict.iter().map(|s| s.slack).filter(|v| v.is_finite()).collect();
    breakpoints.sort_by(f64::total_cmp);
    breakpoints.dedup();
    let max_at = |level: f64| {
        strict
            .iter()
            .filter(|s| s.slack >= level)
            .map(|s| s.norm)
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
    };
    let mut steps: Vec<CurvePoint> = breakpoints
        .iter()
        .map(|&b| CurvePoint { eps: b, value: max_at(b).unwrap_or(0.0), empty: false })
        .collect();
    steps.push(match max_at(f64::INFINITY) {
        Some(v) => CurvePoint { eps: f64::INFINITY, value: v, empty: false },
        None => CurvePoint { eps: f64::INFINITY, value: 0.0, empty: true },
    });

    let feasible = scored.iter().filter(|s| Admission::Closed(0.0).admits(s.slack)).count() as u64;
    let count = scored.len() as u64;
    Ok(BoundsReport {
        p,
        upper,
        lower,
        eps: eps_entries,
        curve: merge_curve(steps),
        domain_relaxed: false,
        mode: Mode::Oracle,
        stats: SearchStats { nodes_explored: count, lp_calls: count, patterns_feasible: feasible },
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::fixtures::{example1, example2};

    #[test]
    fn first_example_every_norm() {
        for p in NormKind::ALL {
            let r = brute_force_bounds(&example1(), &InputDomain::AllSpace, p, &[0.1, 1.0, 10.0]).unwrap();
            assert!((r.upper.value - 2.0).abs() < 1e-12);
            assert!((r.lower.value - 1.0).abs() < 1e-12);
            for e in &r.eps {
                assert!((e.bound.value - 1.0).abs() < 1e-12);
            }
            assert_eq!(r.upper.pattern, Some(ActivationPattern::from_ints(&[&[1, 1]])));
            assert_eq!(r.curve, vec![CurvePoint { eps: f64::INFINITY, value: 1.0, empty: false }]);
        }
    }

    #[test]
    fn second_example_curve() {
        let r = brute_force_bounds(&example2(), &InputDomain::AllSpace, NormKind::L1, &[0.4, 0.6]).unwrap();
        assert!((r.upper.value - 1.0).abs() < 1e-12);
        assert!((r.lower.value - 1.0).abs() < 1e-12);
        assert_eq!(r.curve.len(), 2);
        assert!((r.curve[0].eps - 0.5).abs() < 1e-12);
        assert_eq!(r.curve[0].value, 1.0);
        assert_eq!(r.curve[1], CurvePoint { eps: f64::INFINITY, value: 0.0, empty: false });
        assert_eq!(r.eps[0].bound.value, 1.0);
        assert_eq!(r.eps[1].bound.value, 0.0);
        assert!(!r.eps[1].bound.is_empty());
    }

    #[test]
    fn zero_output_layer() {
        let net = MlpNetwork::from_rows(vec![
            (vec![vec![1.0], vec![-2.0]], vec![0.5, 0.0]),
            (vec![vec![0.0, 0.0]], vec![1.0]),
        ])
        .unwrap();
        let r = brute_force_bounds(&net, &InputDomain::cube(1, 1.0), NormKind::L2, &[0.1]).unwrap();
        assert_eq!((r.upper.value, r.lower.value, r.eps[0].bound.value), (0.0, 0.0, 0.0));
    }

    #[test]
    fn enumeration_guard() {
        let wide = MlpNetwork::from_rows(vec![(vec![vec![1.0]; 25], vec![0.0; 25]), (vec![vec![1.0; 25]], vec![0.0])])
            .unwrap();
        assert!(matches!(
            brute_force_bounds(&wide, &InputDomain::AllSpace, NormKind::L1, &[]),
            Err(BoundsError::TooManyBits { bits: 25, .. })
        ));
    }
}
