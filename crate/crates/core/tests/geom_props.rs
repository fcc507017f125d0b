use nalgebra::{Isometry3, Matrix4, Quaternion, Translation3, UnitQuaternion, Vector3};
use proptest::prelude::*;
use rum_core::geom::{apply, fit_affine2, relative, slerp, wrap_angle, Affine2, Pose2, Pose3, Quat};

fn quat() -> impl Strategy<Value = Quat> {
    prop::array::uniform4(-1.0f64..1.0)
        .prop_filter("norm away from zero", |v| v.iter().map(|c| c * c).sum::<f64>() > 0.01)
        .prop_map(|v| Quat::new(v[0], v[1], v[2], v[3]).normalized().canonical())
}

fn pose3() -> impl Strategy<Value = Pose3> {
    (prop::array::uniform3(-2.0f64..2.0), quat()).prop_map(|(p, q)| Pose3::new(p, q))
}

fn pose2() -> impl Strategy<Value = Pose2> {
    (-2.0f64..2.0, -2.0f64..2.0, -3.2f64..3.2).prop_map(|(x, y, t)| Pose2::new(x, y, t))
}

fn iso(p: &Pose3) -> Isometry3<f64> {
    let q = UnitQuaternion::from_quaternion(Quaternion::new(p.q.w, p.q.x, p.q.y, p.q.z));
    Isometry3::from_parts(Translation3::new(p.p[0], p.p[1], p.p[2]), q)
}

fn homogeneous(p: &Pose2) -> Matrix4<f64> {
    let (s, c) = p.theta.sin_cos();
    Matrix4::new(c, -s, 0.0, p.x, s, c, 0.0, p.y, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0)
}

fn close3(a: &Pose3, b: &Pose3, tol: f64) -> bool {
    let dp = (0..3).all(|i| (a.p[i] - b.p[i]).abs() <= tol);
    // q and -q are the same rotation; compare through |dot|.
    dp && (1.0 - a.q.dot(&b.q).abs()) <= tol
}

fn close2(a: &Pose2, b: &Pose2, tol: f64) -> bool {
    (a.x - b.x).abs() <= tol && (a.y - b.y).abs() <= tol && wrap_angle(a.theta - b.theta).abs() <= tol
}

proptest! {
    #[test]
    fn round_trip_3d(a in pose3(), b in pose3()) {
        let d = relative(&a, &b).unwrap();
        let back = apply(&a, &d).unwrap();
        prop_assert!(close3(&back, &b, 1e-9), "{back:?} vs {b:?}");
    }

    #[test]
    fn round_trip_2d(a in pose2(), b in pose2()) {
        let back = apply(&a, &relative(&a, &b).unwrap()).unwrap();
        prop_assert!(close2(&back, &b, 1e-9));
    }

    #[test]
    fn relative_matches_isometry_oracle(a in pose3(), b in pose3()) {
        let d = relative(&a, &b).unwrap();
        let want = iso(&a).inverse() * iso(&b);
        let t = want.translation.vector;
        for i in 0..3 {
            prop_assert!((d.dp[i] - t[i]).abs() < 1e-9);
        }
        let wq = want.rotation.quaternion();
        let dot = d.dq.w * wq.w + d.dq.x * wq.i + d.dq.y * wq.j + d.dq.z * wq.k;
        prop_assert!((1.0 - dot.abs()) < 1e-9);
        prop_assert!(d.dq.w >= 0.0);
    }

    #[test]
    fn left_invariance_3d(g in pose3(), a in pose3(), b in pose3()) {
        let d0 = relative(&a, &b).unwrap();
        let d1 = relative(&g.compose(&a), &g.compose(&b)).unwrap();
        for i in 0..3 {
            prop_assert!((d0.dp[i] - d1.dp[i]).abs() < 1e-9);
        }
        prop_assert!((1.0 - d0.dq.dot(&d1.dq).abs()) < 1e-9);
    }

    #[test]
    fn left_invariance_2d(g in pose2(), a in pose2(), b in pose2()) {
        let move_by = |p: &Pose2| apply(&g, &relative(&Pose2::new(0.0, 0.0, 0.0), p).unwrap()).unwrap();
        let d0 = relative(&a, &b).unwrap();
        let d1 = relative(&move_by(&a), &move_by(&b)).unwrap();
        prop_assert!((d0.dx - d1.dx).abs() < 1e-9);
        prop_assert!((d0.dy - d1.dy).abs() < 1e-9);
        prop_assert!(wrap_angle(d0.dtheta - d1.dtheta).abs() < 1e-9);
    }

    #[test]
    fn chained_deltas_match_matrix_chain(start in pose2(), steps in prop::collection::vec(pose2(), 1..12)) {
        let origin = Pose2::new(0.0, 0.0, 0.0);
        let mut pose = start;
        let mut m = homogeneous(&start);
        for s in &steps {
            let d = relative(&origin, s).unwrap();
            pose = apply(&pose, &d).unwrap();
            m *= homogeneous(s);
        }
        prop_assert!((pose.x - m[(0, 3)]).abs() < 1e-9);
        prop_assert!((pose.y - m[(1, 3)]).abs() < 1e-9);
        prop_assert!(wrap_angle(pose.theta - m[(1, 0)].atan2(m[(0, 0)])).abs() < 1e-9);
    }

    #[test]
    fn slerp_angle_is_linear_in_t(q0 in quat(), q1 in quat(), t in 0.0f64..=1.0) {
        let q = slerp(&q0, &q1, t);
        let total = q0.angle_to(&q1);
        prop_assert!((q0.angle_to(&q) - t * total).abs() < 1e-7);
        prop_assert!((q.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn slerp_matches_nalgebra(q0 in quat(), q1 in quat(), t in 0.0f64..=1.0) {
        let n0 = UnitQuaternion::from_quaternion(Quaternion::new(q0.w, q0.x, q0.y, q0.z));
        let mut n1 = UnitQuaternion::from_quaternion(Quaternion::new(q1.w, q1.x, q1.y, q1.z));
        if n0.quaternion().dot(n1.quaternion()) < 0.0 {
            n1 = UnitQuaternion::from_quaternion(-n1.into_inner());
        }
        prop_assume!(n0.angle_to(&n1) > 1e-3);
        let want = n0.slerp(&n1, t);
        let got = slerp(&q0, &q1, t);
        let w = want.quaternion();
        let dot = got.w * w.w + got.x * w.i + got.y * w.j + got.z * w.k;
        prop_assert!((1.0 - dot.abs()) < 1e-9);
    }

    #[test]
    fn slerp_endpoints(q0 in quat(), q1 in quat()) {
        prop_assert!((1.0 - slerp(&q0, &q1, 0.0).dot(&q0).abs()) < 1e-12);
        prop_assert!((1.0 - slerp(&q0, &q1, 1.0).dot(&q1).abs()) < 1e-12);
    }

    #[test]
    fn affine_recovered_from_exact_correspondences(
        a in prop::array::uniform4(-3.0f64..3.0),
        b in prop::array::uniform2(-2.0f64..2.0),
        pts in prop::collection::vec(prop::array::uniform2(-1.0f64..1.0), 4..20),
    ) {
        prop_assume!((a[0] * a[3] - a[1] * a[2]).abs() > 0.1);
        let src: Vec<[f64; 2]> = pts;
        // Random point sets can be nearly collinear; require some spread.
        let n = src.len() as f64;
        let (mx, my) = (src.iter().map(|p| p[0]).sum::<f64>() / n, src.iter().map(|p| p[1]).sum::<f64>() / n);
        let (sxx, syy, sxy) = src.iter().fold((0.0, 0.0, 0.0), |(xx, yy, xy), p| {
            let (dx, dy) = (p[0] - mx, p[1] - my);
            (xx + dx * dx, yy + dy * dy, xy + dx * dy)
        });
        prop_assume!((sxx * syy - sxy * sxy) / (n * n) > 1e-3);
        let truth = Affine2 { a: [[a[0], a[1]], [a[2], a[3]]], b };
        let dst: Vec<[f64; 2]> = src.iter().map(|p| truth.apply(*p)).collect();
        let fit = fit_affine2(&src, &dst).unwrap();
        for i in 0..2 {
            prop_assert!((fit.b[i] - b[i]).abs() < 1e-9);
            for j in 0..2 {
                prop_assert!((fit.a[i][j] - truth.a[i][j]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn rotated_frame_example() {
    let a = Pose3::new([0.0; 3], Quat::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2));
    let b = Pose3::new([1.0, 0.0, 0.0], a.q);
    let d = relative(&a, &b).unwrap();
    let m = iso(&a).to_homogeneous().try_inverse().unwrap() * iso(&b).to_homogeneous();
    let want = Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
    for i in 0..3 {
        assert!((d.dp[i] - want[i]).abs() < 1e-12);
    }
    assert!((d.dp[1] + 1.0).abs() < 1e-12);
}

#[test]
fn known_affine_recovered() {
    let src = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.7, 0.3]];
    let truth = Affine2 { a: [[2.0, 0.0], [0.0, 2.0]], b: [1.0, -1.0] };
    let dst: Vec<[f64; 2]> = src.iter().map(|p| truth.apply(*p)).collect();
    let fit = fit_affine2(&src, &dst).unwrap();
    assert!((fit.a[0][0] - 2.0).abs() < 1e-9 && (fit.a[1][1] - 2.0).abs() < 1e-9);
    assert!(fit.a[0][1].abs() < 1e-9 && fit.a[1][0].abs() < 1e-9);
    assert!((fit.b[0] - 1.0).abs() < 1e-9 && (fit.b[1] + 1.0).abs() < 1e-9);
}

#[test]
fn affine_residual_shrinks_with_noise() {
    let src: Vec<[f64; 2]> = (0..12).map(|i| [(i as f64 * 0.37).sin(), (i as f64 * 0.91).cos()]).collect();
    let truth = Affine2 { a: [[1.2, -0.3], [0.4, 0.9]], b: [0.1, 0.2] };
    let pattern: Vec<[f64; 2]> = (0..12).map(|i| [((i * 7) % 5) as f64 - 2.0, ((i * 3) % 4) as f64 - 1.5]).collect();
    let mut last = f64::INFINITY;
    for sigma in [1e-1, 1e-2, 1e-3, 1e-4, 0.0] {
        let dst: Vec<[f64; 2]> = src
            .iter()
            .zip(&pattern)
            .map(|(p, e)| {
                let m = truth.apply(*p);
                [m[0] + sigma * e[0], m[1] + sigma * e[1]]
            })
            .collect();
        let fit = fit_affine2(&src, &dst).unwrap();
        let r = fit.rms_residual(&src, &dst);
        assert!(r <= last + 1e-15, "sigma {sigma}: {r} > {last}");
        last = r;
    }
    assert!(last < 1e-9);
}
