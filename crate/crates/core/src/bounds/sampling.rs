//! Monte-Carlo lower estimates. These are heuristics; certified output
//! never depends on them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::BoundsError;
use crate::domain::InputDomain;
use crate::linalg::{dot, norm2};
use crate::network::{ActivationPattern, MlpNetwork};
use crate::norms::{pattern_norm, NormKind};
use crate::region::chebyshev_center;

/// Samples with some `|theta| <= SAMPLE_MARGIN` are discarded: they sit
/// too close to a region boundary to certify their pattern.
pub const SAMPLE_MARGIN: f64 = 1e-6;
/// Standard deviation of the Gaussian used on unbounded domains.
const ALL_SPACE_SCALE: f64 = 10.0;
/// Hit-and-run steps between kept polytope samples.
const HIT_AND_RUN_THIN: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleEstimate {
    /// `0` when no sample was valid.
    pub value: f64,
    pub best_x: Option<Vec<f64>>,
    pub best_pattern: Option<ActivationPattern>,
    pub valid_samples: usize,
}

/// Max pattern norm over random domain points away from every boundary.
pub fn sampled_lower_bound(
    net: &MlpNetwork,
    domain: &InputDomain,
    p: NormKind,
    n_samples: usize,
    seed: u64,
) -> Result<SampleEstimate, BoundsError> {
    if n_samples == 0 {
        return Err(BoundsError::NoSamples);
    }
    let points = sample_domain(domain, net.input_dim(), n_samples, seed)?;
    let mut est = SampleEstimate { value: 0.0, best_x: None, best_pattern: None, valid_samples: 0 };
    for x in points {
        let (_, pre) = net.forward(&x)?;
        if pre.iter().flatten().any(|v| v.abs() <= SAMPLE_MARGIN) {
            continue;
        }
        est.valid_samples += 1;
        let sigma = net.pattern_of(&x)?;
        let v = pattern_norm(net, &sigma, p)?;
        if est.best_pattern.is_none() || v > est.value {
            est.value = v;
            est.best_x = Some(x);
            est.best_pattern = Some(sigma);
        }
    }
    Ok(est)
}

/// `||f(y) - f(x)||_p / ||y - x||_p`, or `None` for coincident points.
pub fn difference_quotient(net: &MlpNetwork, x: &[f64], y: &[f64], p: NormKind) -> Result<Option<f64>, BoundsError> {
    let dx: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
    let gap = p.vector_norm(&dx);
    if gap == 0.0 {
        return Ok(None);
    }
    let fx = net.eval(x)?;
    let fy = net.eval(y)?;
    let df: Vec<f64> = fy.iter().zip(&fx).map(|(a, b)| a - b).collect();
    Ok(Some(p.vector_norm(&df) / gap))
}

/// Max difference quotient over `n_pairs` random pairs.
pub fn pairwise_quotient_estimate(
    net: &MlpNetwork,
    domain: &InputDomain,
    p: NormKind,
    n_pairs: usize,
    seed: u64,
) -> Result<f64, BoundsError> {
    if n_pairs == 0 {
        return Err(BoundsError::NoSamples);
    }
    let points = sample_domain(domain, net.input_dim(), 2 * n_pairs, seed)?;
    let mut best = 0.0f64;
    for pair in points.chunks(2) {
        if let Some(q) = difference_quotient(net, &pair[0], &pair[1], p)? {
            best = best.max(q);
        }
    }
    Ok(best)
}

/// `count` seeded points of `domain`: Gaussian (sd 10) on all of space,
/// uniform on boxes and balls, hit-and-run from the Chebyshev center on
/// polytopes.
pub fn sample_domain(domain: &InputDomain, dim: usize, count: usize, seed: u64) -> Result<Vec<Vec<f64>>, BoundsError> {
    domain.validate(dim).map_err(crate::region::RegionError::from)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = match domain {
        InputDomain::AllSpace => {
            let normal = Normal::new(0.0, ALL_SPACE_SCALE).expect("positive scale");
            (0..count).map(|_| (0..dim).map(|_| normal.sample(&mut rng)).collect()).collect()
        }
        InputDomain::Box { lower, upper } => (0..count)
            .map(|_| {
                lower
                    .iter()
                    .zip(upper)
                    .map(|(&l, &u)| if l < u { rng.random_range(l..=u) } else { l })
                    .collect()
            })
            .collect(),
        InputDomain::L2Ball { center, radius } => (0..count)
            .map(|_| {
                let dir = gaussian_direction(&mut rng, dim);
                let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
                center.iter().zip(&dir).map(|(c, d)| c + r * d).collect()
            })
            .collect(),
        InputDomain::Polytope { a, b } => {
            let (mut x, _) = chebyshev_center(domain, dim, ALL_SPACE_SCALE)?;
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                for _ in 0..HIT_AND_RUN_THIN {
                    let d = gaussian_direction(&mut rng, dim);
                    let (lo, hi) = chord(a, b, &x, &d);
                    if hi > lo {
                        let t = rng.random_range(lo..=hi);
                        x.iter_mut().zip(&d).for_each(|(xi, di)| *xi += t * di);
                    }
                }
                out.push(x.clone());
            }
            out
        }
    };
    Ok(points)
}

fn gaussian_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm2(&v);
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Parameter range `[lo, hi]` of `x + t d` inside `{A y <= b}`, clipped to
/// `|t| <= 10` along unbounded directions.
fn chord(a: &[Vec<f64>], b: &[f64], x: &[f64], d: &[f64]) -> (f64, f64) {
    let (mut lo, mut hi) = (-ALL_SPACE_SCALE, ALL_SPACE_SCALE);
    for (row, rhs) in a.iter().zip(b) {
        let ad = dot(row, d);
        let room = (rhs - dot(row, x)).max(0.0);
        if ad > 0.0 {
            hi = hi.min(room / ad);
        } else if ad < 0.0 {
            lo = lo.max(room / ad);
        }
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::fixtures::{example1, example2};

    #[test]
    fn first_example_samples() {
        let est = sampled_lower_bound(&example1(), &InputDomain::AllSpace, NormKind::L2, 100, 7).unwrap();
        assert_eq!(est.value, 1.0);
        assert!(est.valid_samples > 90);
    }

    #[test]
    fn second_example_samples_on_box() {
        let d = InputDomain::cube(1, 2.0);
        let est = sampled_lower_bound(&example2(), &d, NormKind::L1, 100, 1).unwrap();
        assert_eq!(est.value, 1.0);
        let x = est.best_x.unwrap();
        assert!(x[0].abs() < 1.0);
    }

    #[test]
    fn zero_samples_rejected() {
        assert!(matches!(
            sampled_lower_bound(&example1(), &InputDomain::AllSpace, NormKind::L1, 0, 1),
            Err(BoundsError::NoSamples)
        ));
    }

    #[test]
    fn quotients() {
        let q = difference_quotient(&example2(), &[-0.5], &[0.5], NormKind::L2).unwrap();
        assert_eq!(q, Some(1.0));
        assert_eq!(difference_quotient(&example2(), &[0.3], &[0.3], NormKind::L2).unwrap(), None);
        let d = InputDomain::Box { lower: vec![2.0], upper: vec![3.0] };
        let est = pairwise_quotient_estimate(&example1(), &d, NormKind::LInf, 50, 3).unwrap();
        assert!((est - 1.0).abs() < 1e-12);
    }

    #[test]
    fn samples_stay_inside() {
        let poly = InputDomain::Polytope {
            a: vec![vec![-1.0, 0.0], vec![0.0, -1.0], vec![1.0, 1.0]],
            b: vec![0.0, 0.0, 2.0],
        };
        let ball = InputDomain::L2Ball { center: vec![1.0, 1.0], radius: 0.5 };
        for d in [poly, ball, InputDomain::cube(2, 1.0)] {
            let pts = sample_domain(&d, 2, 200, 11).unwrap();
            assert!(pts.iter().all(|x| d.contains(x, 1e-9)), "{d:?}");
        }
        assert_eq!(
            sample_domain(&InputDomain::AllSpace, 3, 5, 4).unwrap(),
            sample_domain(&InputDomain::AllSpace, 3, 5, 4).unwrap()
        );
    }
}
