use std::collections::BTreeMap;

use proptest::prelude::*;
use rum_core::datalog::{
    assemble, build_pairs, resample, DatasetConfig, EpisodeLog, EpisodeMeta, Expertise, ResampledStep, Source,
    StreamRates, StreamSample,
};
use rum_core::geom::{apply, Pose3, Quat};

const RATE: f64 = 3.75;

fn meta(env: &str, expertise: Expertise) -> EpisodeMeta {
    EpisodeMeta {
        task_id: "door".into(),
        env_id: env.into(),
        demonstrator_id: "prop".into(),
        expertise,
        source: Source::Scripted,
        success: Some(true),
        extra: BTreeMap::new(),
    }
}

fn unit_quat(v: [f64; 4]) -> Quat {
    Quat::new(v[0] + 1.5, v[1], v[2], v[3]).normalized()
}

prop_compose! {
    /// A log whose three streams all sit on the control grid.
    fn grid_log()(n in 2usize..30)(
        poses in prop::collection::vec((prop::array::uniform3(-1.0f64..1.0), prop::array::uniform4(-1.0f64..1.0)), n),
        grips in prop::collection::vec(0.0f64..=1.0, n),
        obs in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), n),
    ) -> EpisodeLog {
        let t = |k: usize| k as f64 / RATE;
        EpisodeLog {
            meta: meta("grid", Expertise::Expert),
            rates: StreamRates { pose_hz: RATE, gripper_hz: RATE, obs_hz: RATE },
            pose_stream: poses.iter().enumerate().map(|(k, (p, q))| StreamSample { t: t(k), value: Pose3::new(*p, unit_quat(*q)) }).collect(),
            gripper_stream: grips.iter().enumerate().map(|(k, g)| StreamSample { t: t(k), value: *g }).collect(),
            obs_stream: obs.iter().enumerate().map(|(k, o)| StreamSample { t: t(k), value: o.clone() }).collect(),
        }
    }
}

prop_compose! {
    /// Multi-rate streams with jittered timestamps, as a recorder would produce.
    fn recorded_log()(
        pose_n in 20usize..120,
        g_n in 5usize..40,
        o_n in 5usize..40,
        gaps in prop::collection::vec(0.5f64..1.5, 120),
        walk in prop::collection::vec((prop::array::uniform3(-0.02f64..0.02), prop::array::uniform3(-0.2f64..0.2)), 120),
        grips in prop::collection::vec(0.0f64..=1.0, 40),
        extra_key in "[a-z]{1,6}",
        success in prop::option::of(any::<bool>()),
    ) -> EpisodeLog {
        let duration = 4.0;
        let times = |n: usize| -> Vec<f64> {
            let mut acc = 0.0;
            let raw: Vec<f64> = (0..n).map(|i| { let t = acc; acc += gaps[i % gaps.len()]; t }).collect();
            let scale = duration / raw[n - 1];
            raw.into_iter().map(|t| t * scale).collect()
        };
        let mut pose = Pose3::IDENTITY;
        let pose_stream = times(pose_n).into_iter().enumerate().map(|(i, t)| {
            let (dp, axis) = walk[i % walk.len()];
            let angle = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
            pose = pose.compose(&Pose3::new(dp, Quat::from_axis_angle(axis, angle)));
            StreamSample { t, value: pose }
        }).collect();
        let mut m = meta("rec", Expertise::Nonexpert);
        m.success = success;
        m.extra.insert(extra_key, serde_json::json!({"k": pose_n}));
        EpisodeLog {
            meta: m,
            rates: StreamRates { pose_hz: pose_n as f64 / duration, gripper_hz: g_n as f64 / duration, obs_hz: o_n as f64 / duration },
            pose_stream,
            gripper_stream: times(g_n).into_iter().enumerate().map(|(i, t)| StreamSample { t, value: grips[i % grips.len()] }).collect(),
            obs_stream: times(o_n).into_iter().enumerate().map(|(i, t)| StreamSample { t, value: vec![i as f64, t.sin()] }).collect(),
        }
    }
}

fn steps(poses: &[Pose3]) -> Vec<ResampledStep> {
    poses.iter().enumerate().map(|(k, p)| ResampledStep { t: k as f64, pose: *p, gripper: 0.5, obs: vec![k as f64] }).collect()
}

proptest! {
    #[test]
    fn on_grid_resample_is_exact(log in grid_log()) {
        let seq = resample(&log, RATE).unwrap();
        prop_assert_eq!(seq.len(), log.pose_stream.len());
        for (k, s) in seq.iter().enumerate() {
            prop_assert_eq!(s.pose, log.pose_stream[k].value);
            prop_assert_eq!(s.gripper.to_bits(), log.gripper_stream[k].value.to_bits());
            prop_assert_eq!(&s.obs, &log.obs_stream[k].value);
        }
    }

    #[test]
    fn chunks_integrate_to_later_pose(log in recorded_log(), h in 1usize..7, c in 1usize..5) {
        let seq = resample(&log, RATE).unwrap();
        prop_assume!(seq.len() > c);
        let pairs = build_pairs(&seq, h, c).unwrap();
        for p in &pairs {
            let mut pose = seq[p.step].pose;
            for a in &p.action_chunk {
                pose = apply(&pose, &a.delta).unwrap();
            }
            let want = seq[p.step + c].pose;
            for i in 0..3 {
                prop_assert!((pose.p[i] - want.p[i]).abs() < 1e-9);
            }
            prop_assert!((1.0 - pose.q.dot(&want.q).abs()) < 1e-9);
            prop_assert_eq!(p.action_chunk.last().unwrap().gripper, seq[p.step + c].gripper);
        }
    }

    #[test]
    fn pair_count_is_length_minus_chunk(t in 2usize..60, c in 1usize..8, h in 1usize..8) {
        prop_assume!(t > c);
        let poses: Vec<Pose3> = (0..t).map(|k| Pose3::new([k as f64 * 0.01, 0.0, 0.0], Quat::IDENTITY)).collect();
        let pairs = build_pairs(&steps(&poses), h, c).unwrap();
        prop_assert_eq!(pairs.len(), t - c);
        for p in &pairs {
            prop_assert_eq!(p.obs_history.len(), h);
            prop_assert_eq!(p.action_chunk.len(), c);
            let first = (p.step + 1).saturating_sub(h);
            prop_assert_eq!(p.obs_history[0][0], first as f64);
            prop_assert_eq!(p.obs_history[h - 1][0], p.step as f64);
        }
    }

    #[test]
    fn serialization_round_trips(log in recorded_log()) {
        let bytes = log.to_bytes().unwrap();
        let back = EpisodeLog::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &log);
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }
}

#[test]
fn linear_motion_resamples_onto_the_line() {
    let v = [0.12, -0.07, 0.03];
    let at = |t: f64| [0.3 + v[0] * t, -0.1 + v[1] * t, 0.2 + v[2] * t];
    let pose_stream: Vec<_> = (0..=400).map(|j| StreamSample { t: j as f64 / 100.0, value: Pose3::new(at(j as f64 / 100.0), Quat::IDENTITY) }).collect();
    let gripper_stream = (0..=240).map(|j| StreamSample { t: j as f64 / 60.0, value: 0.5 }).collect();
    let obs_stream = (0..=240).map(|j| StreamSample { t: j as f64 / 60.0, value: vec![0.0] }).collect();
    let log = EpisodeLog {
        meta: meta("line", Expertise::Expert),
        rates: StreamRates { pose_hz: 100.0, gripper_hz: 60.0, obs_hz: 60.0 },
        pose_stream,
        gripper_stream,
        obs_stream,
    };
    let seq = resample(&log, RATE).unwrap();
    assert_eq!(seq.len(), (4.0f64 * RATE).floor() as usize + 1);
    for s in &seq {
        let want = at(s.t);
        for i in 0..3 {
            assert!((s.pose.p[i] - want[i]).abs() < 1e-12, "t={} axis {i}", s.t);
        }
    }
}

#[test]
fn assembly_counts_and_determinism() {
    let base = resample_free_log();
    let mut logs = Vec::new();
    for e in 0..40 {
        for d in 0..25 {
            let mut l = base.clone();
            l.meta.env_id = format!("env-{e}");
            l.meta.expertise = if d % 5 == 0 { Expertise::Nonexpert } else { Expertise::Expert };
            logs.push(l);
        }
    }
    let cfg = DatasetConfig { env_count: Some(5), demos_per_env: Some(25), seed: 3, ..DatasetConfig::default() };
    let a = assemble(&logs, &cfg).unwrap();
    assert_eq!(a.selected_logs.len(), 125);
    assert_eq!(assemble(&logs, &cfg).unwrap().selected_logs, a.selected_logs);
    let other = assemble(&logs, &DatasetConfig { seed: 4, ..cfg.clone() }).unwrap();
    assert_ne!(other.selected_logs, a.selected_logs);

    let experts = assemble(&logs, &DatasetConfig { expertise: Some(Expertise::Expert), demos_per_env: None, ..cfg }).unwrap();
    assert_eq!(experts.selected_logs.len(), 5 * 20);
    assert!(experts.selected_logs.iter().all(|&i| logs[i].meta.expertise == Expertise::Expert));
}

fn resample_free_log() -> EpisodeLog {
    let n = 12;
    let t = |k: usize| k as f64 / RATE;
    EpisodeLog {
        meta: meta("x", Expertise::Expert),
        rates: StreamRates { pose_hz: RATE, gripper_hz: RATE, obs_hz: RATE },
        pose_stream: (0..n).map(|k| StreamSample { t: t(k), value: Pose3::new([k as f64 * 0.01, 0.0, 0.0], Quat::IDENTITY) }).collect(),
        gripper_stream: (0..n).map(|k| StreamSample { t: t(k), value: 1.0 }).collect(),
        obs_stream: (0..n).map(|k| StreamSample { t: t(k), value: vec![k as f64] }).collect(),
    }
}
