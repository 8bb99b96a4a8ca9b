use proptest::prelude::*;

use radfield::metrics::rotation_error;
use radfield::se3::*;

const CASES: u32 = 10_000;

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn unit_quat() -> impl Strategy<Value = Quaternion> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("non-degenerate", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
        .prop_map(|(w, x, y, z)| Quaternion::new(w, x, y, z).normalize())
}

/// Vector part strictly inside the unit ball.
fn correction_vec() -> impl Strategy<Value = Vec3> {
    vec3(0.57).prop_filter("inside unit ball", |v| v.norm() < 0.98)
}

fn pose() -> impl Strategy<Value = Pose> {
    (unit_quat(), vec3(5.0)).prop_map(|(q, t)| Pose::new(q, t))
}

fn close(a: Vec3, b: Vec3) -> f64 {
    (a - b).norm()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn correction_quaternion_has_unit_norm(v in correction_vec()) {
        let q = PoseCorrection::new(v, Vec3::ZERO).rotation().unwrap();
        prop_assert!((q.norm() - 1.0).abs() < 1e-12);
        prop_assert!(q.w >= 0.0);
    }

    #[test]
    fn ray_refinement_equals_pose_refinement(
        p in pose(),
        v in correction_vec(),
        dt in vec3(0.5),
        i in 0usize..64,
        j in 0usize..48,
    ) {
        let intr = CameraIntrinsics::new(55.0, 57.0, 31.5, 24.2, 64, 48).unwrap();
        let corr = PoseCorrection::new(v, dt);
        let via_rays = refine_rays(&corr, &pixel_rays(&p, &intr, &[(i, j)]).unwrap()).unwrap()[0];
        let refined = apply_correction(&corr, &p).unwrap();
        let via_pose = pixel_rays(&refined, &intr, &[(i, j)]).unwrap()[0];
        prop_assert!(close(via_rays.origin, via_pose.origin) < 1e-9);
        prop_assert!(close(via_rays.dir, via_pose.dir) < 1e-9);
    }

    #[test]
    fn rotation_preserves_length_and_inverts(q in unit_quat(), v in vec3(10.0)) {
        let r = quat_rotate(q, v);
        prop_assert!((r.norm() - v.norm()).abs() < 1e-9);
        prop_assert!(close(quat_rotate(q.conjugate(), r), v) < 1e-9);
    }

    #[test]
    fn product_composes_rotations(a in unit_quat(), b in unit_quat(), v in vec3(3.0)) {
        let lhs = quat_rotate(quat_mul(a, b), v);
        let rhs = quat_rotate(a, quat_rotate(b, v));
        prop_assert!(close(lhs, rhs) < 1e-9);
    }

    #[test]
    fn matrix_round_trip(q in unit_quat(), v in vec3(3.0)) {
        let m = q.to_rotation_matrix();
        let mv = Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        );
        prop_assert!(close(mv, quat_rotate(q, v)) < 1e-9);
        let back = Quaternion::from_rotation_matrix(m);
        prop_assert!((back.dot(q).abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_correction_is_exact_identity(p in pose()) {
        let out = apply_correction(&PoseCorrection::default(), &p).unwrap();
        prop_assert_eq!(out, p);
    }

    #[test]
    fn correction_angle_matches_vector_norm(v in correction_vec(), p in pose()) {
        let corr = PoseCorrection::new(v, Vec3::ZERO);
        let refined = apply_correction(&corr, &p).unwrap();
        let expected = 2.0 * v.norm().asin();
        prop_assert!((rotation_error(&p, &refined) - expected).abs() < 1e-8);
    }

    #[test]
    fn look_at_points_the_optical_axis_at_the_target(eye in vec3(6.0), target in vec3(0.5)) {
        prop_assume!((eye - target).norm() > 0.5);
        let p = Pose::look_at(eye, target, Vec3::new(0.0, 0.0, 1.0));
        let axis = quat_rotate(p.q, Vec3::new(0.0, 0.0, 1.0));
        prop_assert!(close(axis, (target - eye).normalize()) < 1e-9);
        prop_assert!(close(p.t, eye) < 1e-12);
    }
}

#[test]
fn correction_outside_unit_ball_is_rejected() {
    let c = PoseCorrection::new(Vec3::new(0.8, 0.6, 0.1), Vec3::ZERO);
    assert!(c.rotation().is_err());
    assert!(apply_correction(&c, &Pose::default()).is_err());
}

#[test]
fn out_of_range_pixel_is_rejected() {
    let intr = CameraIntrinsics::from_fov(8, 8, 60.0).unwrap();
    assert!(pixel_rays(&Pose::default(), &intr, &[(8, 0)]).is_err());
}

#[test]
fn invalid_intrinsics_are_rejected() {
    assert!(CameraIntrinsics::new(-1.0, 1.0, 4.0, 4.0, 8, 8).is_err());
    assert!(CameraIntrinsics::new(1.0, 1.0, 9.0, 4.0, 8, 8).is_err());
}
