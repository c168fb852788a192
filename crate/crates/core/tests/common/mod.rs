#![allow(dead_code)]

use lipbound::{ActivationPattern, InputDomain, MlpNetwork, NormKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const NORMS: [NormKind; 3] = [NormKind::L1, NormKind::L2, NormKind::LInf];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Widths from {1..4}, two or three hidden layers with at most `max_bits`
/// hidden neurons, weights in [-1, 1] and biases in [-0.5, 0.5] (zero when
/// `zero_bias`).
pub fn random_net(seed: u64, max_bits: usize, zero_bias: bool) -> MlpNetwork {
    let mut r = rng(seed);
    let widths = loop {
        let hidden = r.random_range(2..=3);
        let w: Vec<usize> = (0..hidden + 2).map(|_| r.random_range(1..=4)).collect();
        if w[1..=hidden].iter().sum::<usize>() <= max_bits {
            break w;
        }
    };
    let layers = widths
        .windows(2)
        .map(|pair| {
            let weights = (0..pair[1])
                .map(|_| (0..pair[0]).map(|_| r.random_range(-1.0..=1.0)).collect())
                .collect();
            let bias = (0..pair[1])
                .map(|_| if zero_bias { 0.0 } else { r.random_range(-0.5..=0.5) })
                .collect();
            (weights, bias)
        })
        .collect();
    MlpNetwork::from_rows(layers).expect("generated network is well formed")
}

pub fn unit_box(net: &MlpNetwork) -> InputDomain {
    InputDomain::cube(net.input_dim(), 1.0)
}

pub fn all_patterns(net: &MlpNetwork) -> Vec<ActivationPattern> {
    let bits = net.total_hidden();
    (0..1u64 << bits).map(|i| ActivationPattern::from_index(net.hidden_widths(), i)).collect()
}

pub fn example1() -> MlpNetwork {
    MlpNetwork::from_rows(vec![
        (vec![vec![1.0], vec![-1.0]], vec![-1.0, 1.0]),
        (vec![vec![1.0, -1.0]], vec![0.0]),
    ])
    .unwrap()
}

pub fn example2() -> MlpNetwork {
    MlpNetwork::from_rows(vec![
        (vec![vec![1.0], vec![1.0]], vec![-1.0, 1.0]),
        (vec![vec![-1.0, 1.0]], vec![0.0]),
    ])
    .unwrap()
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}
