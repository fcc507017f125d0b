use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rum_core::rvq::fit;

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Minimum within-cluster sum of squares over every labelling of the points.
fn exhaustive_optimum(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let dim = points[0].len();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        let cost: f64 = points
            .iter()
            .zip(&labels)
            .map(|(p, &l)| {
                let mean: Vec<f64> = sums[l].iter().map(|s| s / counts[l] as f64).collect();
                sq(p, &mean)
            })
            .sum();
        best = best.min(cost);
        // next labelling in base k
        let mut i = 0;
        while i < n {
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
        if i == n {
            return best;
        }
    }
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let centers: Vec<Vec<f64>> = (0..3).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    (0..n)
        .map(|_| {
            let c = &centers[rng.random_range(0..3)];
            c.iter().map(|x| x + rng.random_range(-0.8..0.8)).collect()
        })
        .collect()
}

#[test]
fn layer_one_inertia_is_near_the_exhaustive_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for case in 0..60 {
        let n = rng.random_range(3..=8);
        let k = rng.random_range(1..=3.min(n));
        let dim = rng.random_range(1..=4);
        let points = random_points(&mut rng, n, dim);
        let cb = fit(&points, k, 1, 100, case).unwrap();
        let got = cb.meta.inertia[0];
        let opt = exhaustive_optimum(&points, k);
        assert!(got <= 1.05 * opt + 1e-12, "case {case}: n={n} k={k} inertia {got} vs optimum {opt}");
        if opt > 0.0 {
            worst = worst.max(got / opt);
        }
    }
    assert!(worst >= 1.0 - 1e-12);
}

#[test]
fn reported_inertia_matches_encoding_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let points = random_points(&mut rng, 40, 3);
    let cb = fit(&points, 4, 1, 100, 0).unwrap();
    let total = cb.mean_error(&points, 1).unwrap() * points.len() as f64;
    assert!((total - cb.meta.inertia[0]).abs() < 1e-9);
}

#[test]
fn error_is_non_increasing_in_depth() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for set in 0..10 {
        let n = rng.random_range(20..120);
        let dim = rng.random_range(2..9);
        let points: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let cb = fit(&points, 4, 4, 50, set).unwrap();
        let errs: Vec<f64> = (0..=4).map(|l| cb.mean_error(&points, l).unwrap()).collect();
        for w in errs.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "set {set}: {errs:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn extra_layers_do_not_raise_training_error(
        points in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 8..60),
        k in 1usize..6,
        seed in any::<u64>(),
    ) {
        prop_assume!(points.len() >= k);
        let cb = fit(&points, k, 3, 30, seed).unwrap();
        let one = cb.mean_error(&points, 1).unwrap();
        let all = cb.mean_error(&points, 3).unwrap();
        prop_assert!(all <= one + 1e-12);
    }

    #[test]
    fn fit_is_reproducible(points in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 6..30), seed in any::<u64>()) {
        let a = fit(&points, 3, 2, 40, seed).unwrap();
        let b = fit(&points, 3, 2, 40, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn codes_survive_decode_then_encode() {
    // Exhaustive over all code tuples of fitted codebooks on clustered data.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..5 {
        let centers: Vec<[f64; 2]> = (0..3).map(|i| [i as f64 * 3.0, (trial as f64) - i as f64 * 2.0]).collect();
        let points: Vec<Vec<f64>> = (0..90)
            .map(|j| {
                let c = centers[j % 3];
                let sub = if j % 2 == 0 { 0.3 } else { -0.3 };
                vec![c[0] + sub + rng.random_range(-0.02..0.02), c[1] + rng.random_range(-0.02..0.02)]
            })
            .collect();
        let cb = fit(&points, 3, 2, 100, trial).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let v = cb.decode(&[a, b]).unwrap();
                assert_eq!(cb.encode(&v).unwrap(), vec![a, b], "trial {trial}");
            }
        }
    }
}
