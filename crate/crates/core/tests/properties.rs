use std::sync::LazyLock;

use nalgebra::{Matrix4, Vector3};
use proptest::prelude::*;
use rbm_core::io;
use rbm_core::metrics::{mpjae, mpjpe, pa_mpjpe, procrustes_align};
use rbm_core::motion::{trim_and_resample, MotionFrame};
use rbm_core::normalization::{build_tree, encode_frame, normalize_frame, InputMode};
use rbm_core::rbm::{preset_names, synthesize_rbm_frame};
use rbm_core::so3::{geodesic_angle, geodesic_loss, geodesic_loss_and_grad, quat_from_axis_angle};
use rbm_core::{
    build_default_body, AxisAngle, BodyModel, BodyParams, JointSet, MotionSequence,
    RbmConfiguration, Se3Transform, UnitQuaternion,
};

static BODY: LazyLock<BodyModel> = LazyLock::new(|| build_default_body(42));

fn vec3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
    [-r..r, -r..r, -r..r].prop_map(|[x, y, z]| Vector3::new(x, y, z))
}

/// Rotation vectors with angle strictly below pi.
fn rotvec() -> impl Strategy<Value = Vector3<f64>> {
    (vec3(1.0), 0.0..3.1).prop_filter_map("nonzero axis", |(v, a)| {
        let n = v.norm();
        (n > 1e-3).then(|| v / n * a)
    })
}

fn quat() -> impl Strategy<Value = UnitQuaternion> {
    [-1.0..1.0f64, -1.0..1.0, -1.0..1.0, -1.0..1.0].prop_filter_map("nonzero", |[w, x, y, z]| {
        UnitQuaternion::new_normalize(w, x, y, z).ok()
    })
}

fn se3() -> impl Strategy<Value = Se3Transform> {
    (quat(), vec3(3.0)).prop_map(|(q, t)| Se3Transform::from_quaternion(&q, t))
}

fn body_params() -> impl Strategy<Value = BodyParams> {
    (
        proptest::collection::vec(vec3(0.5), 24),
        rotvec(),
        vec3(2.0),
        proptest::array::uniform10(-2.0..2.0f64),
    )
        .prop_map(|(mut theta, root, gamma, beta)| {
            theta[0] = root;
            BodyParams {
                beta,
                theta: theta.into_iter().map(AxisAngle).collect(),
                gamma,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exp_log_round_trip(r in rotvec()) {
        let back = UnitQuaternion::exp(&r).log();
        prop_assert!((back.vector() - r).norm() < 1e-9);
    }

    #[test]
    fn quaternion_matrix_round_trip(q in quat()) {
        let back = UnitQuaternion::from_rotation_matrix(&q.to_rotation_matrix());
        prop_assert!(back.same_rotation(&q, 1e-9));
        prop_assert!(q.log().angle() <= std::f64::consts::PI + 1e-12);
    }

    #[test]
    fn se3_matches_homogeneous_matrices(a in se3(), b in se3(), p in vec3(2.0)) {
        let c = a.compose(&b);
        prop_assert!((c.to_homogeneous() - a.to_homogeneous() * b.to_homogeneous()).abs().max() < 1e-9);
        let i = a.inverse().to_homogeneous() * a.to_homogeneous();
        prop_assert!((i - Matrix4::identity()).abs().max() < 1e-9);
        let h = a.to_homogeneous() * p.push(1.0);
        prop_assert!((a.transform_point(&p) - h.xyz()).norm() < 1e-9);
    }

    #[test]
    fn geodesic_loss_is_symmetric_bounded_and_sign_free(a in quat(), b in quat()) {
        let l = geodesic_loss(&a, &b);
        prop_assert!((0.0..=4.0).contains(&l));
        prop_assert!((l - geodesic_loss(&b, &a)).abs() < 1e-12);
        let neg = -b;
        prop_assert_eq!(l, geodesic_loss(&a, &neg));
        prop_assert_eq!(geodesic_angle(&a, &b), geodesic_angle(&a, &neg));
        let half = (geodesic_angle(&a, &b) / 2.0).sin();
        prop_assert!((l - 4.0 * half * half).abs() < 1e-9);
    }

    #[test]
    fn geodesic_gradient_matches_central_differences(r in rotvec(), t in quat()) {
        let (l, g) = geodesic_loss_and_grad(&r, &t);
        prop_assert!(l.is_finite() && g.iter().all(|v| v.is_finite()));
        let h = 1e-6;
        for k in 0..3 {
            let mut e = Vector3::zeros();
            e[k] = h;
            let fd = (geodesic_loss_and_grad(&(r + e), &t).0 - geodesic_loss_and_grad(&(r - e), &t).0) / (2.0 * h);
            prop_assert!((fd - g[k]).abs() < 1e-6 * (1.0 + fd.abs()), "component {k}: fd {fd} analytic {}", g[k]);
        }
    }

    #[test]
    fn marker_frames_are_rotations(p in body_params()) {
        let config = RbmConfiguration::full(&BODY).unwrap();
        let f = synthesize_rbm_frame(&BODY, &p, &config, 0.0).unwrap();
        for o in &f.observations {
            let m = *o.orientation.to_rotation_matrix().matrix();
            prop_assert!((m.transpose() * m - nalgebra::Matrix3::identity()).abs().max() < 1e-9);
            prop_assert!((m.determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn markers_follow_rigid_motion_of_the_body(p in body_params(), g in se3()) {
        let config = RbmConfiguration::full(&BODY).unwrap();
        let before = synthesize_rbm_frame(&BODY, &p, &config, 0.0).unwrap();
        let rq = g.quaternion();
        let j0 = BODY.topology.shaped_offsets(&p.beta)[0];
        let mut moved = p.clone();
        moved.theta[0] = (rq * UnitQuaternion::exp(p.theta[0].vector())).log();
        moved.gamma = rq.rotate(&(j0 + p.gamma)) + g.translation - j0;
        let after = synthesize_rbm_frame(&BODY, &moved, &config, 0.0).unwrap();
        for (a, b) in before.observations.iter().zip(&after.observations) {
            prop_assert!((g.transform_point(&a.position) - b.position).norm() < 1e-6);
            prop_assert!((rq * a.orientation).same_rotation(&b.orientation, 1e-6));
        }
    }

    #[test]
    fn normalized_inputs_ignore_global_translation(p in body_params(), t in vec3(5.0), which in 0usize..7) {
        let name = preset_names().nth(which).unwrap();
        let config = RbmConfiguration::preset(name, &BODY).unwrap();
        let tree = build_tree(&config, &BODY.topology).unwrap();
        let f = synthesize_rbm_frame(&BODY, &p, &config, 0.0).unwrap();
        let mut shifted = f.clone();
        for o in &mut shifted.observations {
            o.position += t;
        }
        let (a, b) = (normalize_frame(&f, &tree).unwrap(), normalize_frame(&shifted, &tree).unwrap());
        prop_assert_eq!(a.values.len(), 3 + 6 * config.len());
        prop_assert!((b.centroid() - a.centroid() - t).norm() < 1e-9);
        for (x, y) in a.values[3..].iter().zip(&b.values[3..]) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        prop_assert_eq!(encode_frame(&f, &tree, InputMode::Global).unwrap().values.len(), 6 * config.len());
    }

    #[test]
    fn relative_rotations_cancel_a_common_rotation(p in body_params(), q in quat()) {
        let config = RbmConfiguration::full(&BODY).unwrap();
        let tree = build_tree(&config, &BODY.topology).unwrap();
        let f = synthesize_rbm_frame(&BODY, &p, &config, 0.0).unwrap();
        let mut turned = f.clone();
        for o in &mut turned.observations {
            o.orientation = q * o.orientation;
        }
        let (a, b) = (normalize_frame(&f, &tree).unwrap(), normalize_frame(&turned, &tree).unwrap());
        for i in (0..tree.len()).filter(|&i| tree.parents[i].is_some()) {
            let (ra, rb) = (a.rotation(i, tree.len()), b.rotation(i, tree.len()));
            prop_assert!(UnitQuaternion::exp(&ra).same_rotation(&UnitQuaternion::exp(&rb), 1e-9));
        }
    }

    #[test]
    fn procrustes_removes_similarity_transforms(pts in proptest::collection::vec(vec3(1.0), 24), g in se3(), s in 0.5..2.0f64) {
        let target: Vec<_> = pts.iter().map(|p| s * g.rotation.apply(p) + g.translation).collect();
        let truth = JointSet { positions: target.clone(), rotations: vec![UnitQuaternion::IDENTITY; 24] };
        let pred = JointSet { positions: pts.clone(), rotations: vec![UnitQuaternion::IDENTITY; 24] };
        prop_assert!(pa_mpjpe(&[pred.clone()], &[truth.clone()]).unwrap() < 1e-6);
        prop_assert!(pa_mpjpe(&[pred.clone()], &[truth.clone()]).unwrap() <= mpjpe(&[pred], &[truth]).unwrap() + 1e-9);
        let a = procrustes_align(&pts, &target).unwrap();
        prop_assert!((a.scale - s).abs() < 1e-9);
    }

    #[test]
    fn mpjae_ignores_quaternion_sign(p in body_params(), t in body_params()) {
        let base = mpjae(&[p.clone()], &[t.clone()]).unwrap();
        let mut flipped = p.clone();
        for r in &mut flipped.theta {
            let q = quat_from_axis_angle(r).unwrap();
            let neg = UnitQuaternion::new_normalize(-q.w(), -q.x(), -q.y(), -q.z()).unwrap();
            *r = neg.log();
        }
        prop_assert!((mpjae(&[flipped], &[t]).unwrap() - base).abs() < 1e-9);
    }

    #[test]
    fn motion_files_round_trip(
        theta in proptest::collection::vec(proptest::collection::vec(vec3(3.0), 4), 1..20),
        beta in proptest::array::uniform10(-2.0..2.0f64),
        rate in 1.0..240.0f64,
        subject in "[a-z0-9_]{0,12}",
    ) {
        let m = MotionSequence {
            subject,
            sequence: "s".into(),
            frame_rate: rate,
            beta,
            frames: theta
                .into_iter()
                .enumerate()
                .map(|(i, t)| MotionFrame { theta: t.into_iter().map(AxisAngle).collect(), gamma: Vector3::new(i as f64, 0.5, -1.0) })
                .collect(),
        };
        let bytes = io::encode_motion(&m).unwrap();
        let back = io::decode_motion(&bytes).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(io::encode_motion(&back).unwrap(), bytes);
    }

    #[test]
    fn decoding_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..200), magic in 0usize..3) {
        let mut data = [b"RBMS", b"RBMR", b"RBMK"][magic].to_vec();
        data.extend_from_slice(&[1, 0, 0, 0, 0, 0]);
        data.extend(bytes);
        let _ = io::decode_motion(&data);
        let _ = io::decode_recording(&data);
        let _ = io::decode_checkpoint(&data);
    }

    #[test]
    fn resampling_keeps_endpoints(
        rate in 30.0..240.0f64,
        frames in 130usize..400,
        a in rotvec(),
        b in rotvec(),
    ) {
        let m = MotionSequence {
            subject: "p".into(),
            sequence: "r".into(),
            frame_rate: rate,
            beta: [0.0; 10],
            frames: (0..frames)
                .map(|i| {
                    let t = i as f64 / (frames - 1) as f64;
                    let q = UnitQuaternion::exp(&a).slerp(&UnitQuaternion::exp(&b), t);
                    MotionFrame { theta: vec![q.log()], gamma: Vector3::new(t, 0.0, 0.0) }
                })
                .collect(),
        };
        let target = 60.0;
        match trim_and_resample(&m, target, 1) {
            Ok(r) => {
                let first = UnitQuaternion::exp(r.frames[0].theta[0].vector());
                prop_assert!(first.same_rotation(&UnitQuaternion::exp(m.frames[0].theta[0].vector()), 1e-9));
                let span = (frames - 1) as f64 / rate;
                let expected = (span * target + 1e-9).floor() as usize + 1;
                prop_assert_eq!(r.frames.len(), expected);
                if (span * target - (expected - 1) as f64).abs() < 1e-9 {
                    let last = UnitQuaternion::exp(r.frames.last().unwrap().theta[0].vector());
                    prop_assert!(last.same_rotation(&UnitQuaternion::exp(m.frames.last().unwrap().theta[0].vector()), 1e-9));
                }
            }
            Err(e) => prop_assert!(false, "{e}"),
        }
    }
}
