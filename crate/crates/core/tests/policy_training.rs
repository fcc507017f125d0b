use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rum_core::policy::{
    loss_and_grad_normalized, make_targets, predict_vector, train, Decoding, PolicyArch, PolicyParams, Targets,
    TrainConfig, Variant,
};
use rum_core::rvq;

/// Central differences over every parameter; returns the worst relative error.
fn max_fd_error(params: &PolicyParams, x: &Array2<f64>, t: &Targets, lambda: f64) -> f64 {
    let (_, analytic) = loss_and_grad_normalized(params, x.clone(), t, lambda).unwrap();
    let eps = 1e-5;
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    let grads: Vec<Vec<f64>> = analytic.tensors().iter().map(|g| g.to_vec()).collect();
    for (ti, g) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let orig = probe.net.tensors()[ti][i];
            probe.net.tensors_mut()[ti][i] = orig + eps;
            let (lp, _) = loss_and_grad_normalized(&probe, x.clone(), t, lambda).unwrap();
            probe.net.tensors_mut()[ti][i] = orig - eps;
            let (lm, _) = loss_and_grad_normalized(&probe, x.clone(), t, lambda).unwrap();
            probe.net.tensors_mut()[ti][i] = orig;
            let numeric = (lp - lm) / (2.0 * eps);
            let denom = g[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((g[i] - numeric).abs() / denom);
        }
    }
    worst
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for case in 0..5 {
        let variant = if case % 2 == 0 { Variant::Vqbet } else { Variant::Bc };
        let arch = PolicyArch {
            variant,
            history: rng.random_range(1..4),
            obs_dim: rng.random_range(2..6),
            chunk: rng.random_range(1..3),
            hidden: vec![rng.random_range(4..12), rng.random_range(4..12)],
            k: rng.random_range(2..5),
            code_layers: rng.random_range(1..3),
        };
        let mut params = PolicyParams::init(arch.clone(), case).unwrap();
        // the offset head starts at zero; randomize it so every path carries gradient
        for t in params.net.tensors_mut() {
            t.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
        let b = 10;
        let x = Array2::from_shape_fn((b, arch.input_dim()), |_| rng.random_range(-1.5..1.5));
        let chunks: Vec<Vec<f64>> =
            (0..b).map(|_| (0..arch.action_dim()).map(|_| rng.random_range(-0.5..0.5)).collect()).collect();
        let cb = rvq::fit(&chunks, arch.k, arch.code_layers, 20, case).unwrap();
        let t = make_targets(variant, &chunks, Some(&cb)).unwrap();
        let err = max_fd_error(&params, &x, &t, 0.7);
        assert!(err <= 1e-4, "case {case} ({variant}): relative error {err}");
    }
}

#[test]
fn bimodal_data_splits_vqbet_and_averages_bc() {
    use rum_core::datalog::TrainingPair;
    use rum_core::geom::{Delta3, Quat, RelAction3};
    let modes = [[0.03, 0.04, 0.0, 1.0], [0.03, -0.04, 0.0, 1.0]];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pairs: Vec<TrainingPair> = (0..400)
        .map(|i| {
            let m = modes[i % 2];
            let obs = vec![vec![0.0, 0.5]; 2];
            let a = RelAction3::new(Delta3 { dp: [m[0], m[1], 0.0], dq: Quat::from_yaw(m[2]) }, m[3]);
            TrainingPair { obs_history: obs, action_chunk: vec![a], step: 0 }
        })
        .collect();
    let chunks: Vec<Vec<f64>> = pairs.iter().map(|p| p.planar_chunk()).collect();
    let cb = rvq::fit(&chunks, 4, 2, 50, 0).unwrap();
    let cfg = TrainConfig { epochs: 100, batch_size: 200, lr: 3e-3, ..TrainConfig::default() };
    let arch = |v| PolicyArch { variant: v, history: 2, obs_dim: 2, chunk: 1, hidden: vec![32, 32], k: 4, code_layers: 2 };
    let vq = train(&pairs, arch(Variant::Vqbet), &cfg, Some(&cb)).unwrap();
    let bc = train(&pairs, arch(Variant::Bc), &cfg, None).unwrap();
    let obs = [0.0, 0.5, 0.0, 0.5];
    let mut near = 0;
    for _ in 0..1000 {
        let v = predict_vector(&vq.params, &obs, Some(&cb), Decoding::Sample { temperature: 1.0 }, &mut rng).unwrap();
        if modes.iter().any(|m| (v[1] - m[1]).abs() < 0.01) {
            near += 1;
        }
    }
    let b = predict_vector(&bc.params, &obs, None, Decoding::Argmax, &mut rng).unwrap();
    assert!(b[1].abs() < 0.01, "bc y = {}", b[1]);
    assert!(near >= 950, "{near} of 1000 vqbet samples near a mode");
}

#[test]
fn training_is_deterministic_and_converges() {
    use rum_core::datalog::TrainingPair;
    use rum_core::geom::{Delta3, Quat, RelAction3};
    let pairs: Vec<TrainingPair> = (0..200)
        .map(|i| {
            let f = (i as f64 / 200.0) - 0.5;
            let a = RelAction3::new(Delta3 { dp: [0.02 + 0.01 * f, 0.01 * f, 0.0], dq: Quat::from_yaw(0.1 * f) }, 1.0);
            TrainingPair { obs_history: vec![vec![f, -f, 0.3]; 2], action_chunk: vec![a; 2], step: 0 }
        })
        .collect();
    let arch = PolicyArch { variant: Variant::Bc, history: 2, obs_dim: 3, chunk: 2, hidden: vec![32, 32], k: 1, code_layers: 1 };
    let cfg = TrainConfig { epochs: 40, batch_size: 32, ..TrainConfig::default() };
    let a = train(&pairs, arch.clone(), &cfg, None).unwrap();
    let b = train(&pairs, arch, &cfg, None).unwrap();
    assert_eq!(a.params, b.params);
    let (first, last) = (a.loss_curve[0], *a.loss_curve.last().unwrap());
    assert!(last < 0.1 * first, "loss {first} -> {last}");
}
