//! Unit quaternions, per-bone rotation encoding of pose sequences and the
//! forward-kinematic decoding back to joint positions.
//!
//! A bone's quaternion is measured against its T-pose direction in world
//! coordinates: for current direction `v` and rest direction `v0`,
//!
//! ```text
//! theta = arccos(v . v0),  u = (v x v0) / |v x v0|,  q = (cos(theta/2), sin(theta/2) u)
//! ```
//!
//! With the axis taken as `v x v0`, `q` carries `v` onto `v0`. Decoding
//! therefore applies the conjugate of `q` to `v0` to recover `v`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::skeleton::{PoseSequence, Skeleton, Vec3};

/// Below this angle a bone is treated as unrotated.
pub const SMALL_ANGLE: f64 = 1e-7;
const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuat {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl UnitQuat {
    pub const IDENTITY: UnitQuat = UnitQuat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes the components onto the unit sphere.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::ZeroNorm("quaternion"));
        }
        Ok(UnitQuat {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    /// Takes components that are already unit length (within 1e-6) as they are.
    pub fn from_unit(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !((n - 1.0).abs() <= UNIT_TOLERANCE) {
            return Err(Error::NotUnit("quaternion", n));
        }
        Ok(UnitQuat { w, x, y, z })
    }

    /// Rotation by `angle` radians about `axis` (normalized here).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !(n > 0.0) {
            return Err(Error::ZeroNorm("rotation axis"));
        }
        let (s, c) = (angle / 2.0).sin_cos();
        let u = axis / n;
        Ok(UnitQuat {
            w: c,
            x: s * u.x,
            y: s * u.y,
            z: s * u.z,
        })
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn vector(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn conjugate(&self) -> UnitQuat {
        UnitQuat {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn neg(&self) -> UnitQuat {
        UnitQuat {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn dot(&self, other: &UnitQuat) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Hamilton product `self * other`.
    pub fn mul(&self, o: &UnitQuat) -> UnitQuat {
        UnitQuat {
            w: self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            x: self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            y: self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            z: self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        }
    }

    /// `q v q*`.
    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        let u = self.vector();
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }
}

/// Quaternion taking unit direction `v` onto unit rest direction `v0`.
pub fn quat_from_bone_pair(v: &Vec3, v0: &Vec3) -> Result<UnitQuat> {
    for (name, x) in [("bone direction", v), ("rest direction", v0)] {
        let n = x.norm();
        if (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::NotUnit(name, n));
        }
    }
    let theta = v.dot(v0).clamp(-1.0, 1.0).acos();
    if theta < SMALL_ANGLE {
        return Ok(UnitQuat::IDENTITY);
    }
    let axis = if PI - theta < SMALL_ANGLE {
        perpendicular(v0)
    } else {
        let c = v.cross(v0);
        c / c.norm()
    };
    let (s, c) = (theta / 2.0).sin_cos();
    Ok(UnitQuat {
        w: c,
        x: s * axis.x,
        y: s * axis.y,
        z: s * axis.z,
    })
}

/// Unit vector perpendicular to `v`, crossing with the least aligned coordinate axis.
fn perpendicular(v: &Vec3) -> Vec3 {
    let k = (0..3).min_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap_or(0);
    let mut e = Vec3::zeros();
    e[k] = 1.0;
    let c = v.cross(&e);
    c / c.norm()
}

/// Rotation angle between two orientations, in `[0, pi]`.
///
/// Equal to `acos(2 (q1 . q2)^2 - 1)`, evaluated as twice the half-angle of
/// the relative rotation `q1* q2` so that it stays exact near zero.
pub fn geodesic_distance(q1: &UnitQuat, q2: &UnitQuat) -> f64 {
    let (v1, v2) = (q1.vector(), q2.vector());
    let w = q1.w * q2.w + v1.dot(&v2);
    let v = q1.w * v2 - q2.w * v1 - v1.cross(&v2);
    2.0 * v.norm().atan2(w.abs())
}

/// The literal `acos(clamp(2 (q1 . q2)^2 - 1, -1, 1))` form of [`geodesic_distance`].
pub fn geodesic_distance_acos(q1: &UnitQuat, q2: &UnitQuat) -> f64 {
    let d = q1.dot(q2);
    (2.0 * d * d - 1.0).clamp(-1.0, 1.0).acos()
}

/// Per-frame bone quaternions plus the root joint trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationSequence {
    quats: Vec<Vec<UnitQuat>>,
    root_positions: Vec<Vec3>,
}

impl RotationSequence {
    pub fn new(quats: Vec<Vec<UnitQuat>>, root_positions: Vec<Vec3>) -> Result<Self> {
        if quats.is_empty() {
            return Err(Error::EmptySequence("rotation sequence has no frames"));
        }
        if quats.len() != root_positions.len() {
            return Err(Error::shape(
                "rotation sequence root rows",
                quats.len(),
                root_positions.len(),
            ));
        }
        let n = quats[0].len();
        if let Some(t) = quats.iter().position(|f| f.len() != n) {
            return Err(Error::shape(
                "rotation frame",
                n,
                format!("{} at frame {t}", quats[t].len()),
            ));
        }
        if !root_positions.iter().all(|p| p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite { op: "root position" });
        }
        Ok(RotationSequence { quats, root_positions })
    }

    pub fn quats(&self) -> &[Vec<UnitQuat>] {
        &self.quats
    }

    pub fn root_positions(&self) -> &[Vec3] {
        &self.root_positions
    }

    pub fn len(&self) -> usize {
        self.quats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quats.is_empty()
    }

    pub fn num_bones(&self) -> usize {
        self.quats[0].len()
    }
}

/// Pose sequence to per-bone rotations relative to the T-pose.
pub fn encode(seq: &PoseSequence, skeleton: &Skeleton) -> Result<RotationSequence> {
    if seq.num_joints() != skeleton.num_joints() {
        return Err(Error::shape("encode", skeleton.num_joints(), seq.num_joints()));
    }
    let rest = skeleton.rest_directions();
    let mut quats = Vec::with_capacity(seq.len());
    let mut roots = Vec::with_capacity(seq.len());
    for frame in seq.frames() {
        let dirs = skeleton.bone_directions(frame)?;
        quats.push(
            dirs.iter()
                .zip(rest)
                .map(|(v, v0)| quat_from_bone_pair(v, v0))
                .collect::<Result<Vec<_>>>()?,
        );
        roots.push(frame[skeleton.root()]);
    }
    RotationSequence::new(quats, roots)
}

/// Forward kinematics: place the root, then every child joint from its parent
/// along the bone's rotated rest direction.
pub fn decode(rots: &RotationSequence, skeleton: &Skeleton) -> Result<PoseSequence> {
    if rots.num_bones() != skeleton.num_bones() {
        return Err(Error::shape("decode", skeleton.num_bones(), rots.num_bones()));
    }
    let bones = skeleton.bones();
    let lengths = skeleton.bone_lengths();
    let rest = skeleton.rest_directions();
    let frames = rots
        .quats()
        .iter()
        .zip(rots.root_positions())
        .map(|(qs, root)| {
            let mut frame = vec![Vec3::zeros(); skeleton.num_joints()];
            frame[skeleton.root()] = *root;
            for &b in skeleton.traversal() {
                let dir = qs[b].conjugate().rotate(&rest[b]);
                frame[bones[b].child] = frame[bones[b].parent] + lengths[b] * dir;
            }
            frame
        })
        .collect();
    PoseSequence::new(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};
    use proptest::prelude::*;

    const H: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn unit(v: [f64; 3]) -> Vec3 {
        Vec3::from(v).normalize()
    }

    /// Rodrigues rotation matrix built from the quaternion's axis and angle.
    fn rodrigues(q: &UnitQuat) -> Rotation3<f64> {
        let s = q.vector().norm();
        let angle = 2.0 * s.atan2(q.w());
        if s == 0.0 {
            return Rotation3::identity();
        }
        Rotation3::from_axis_angle(&Unit::new_normalize(q.vector()), angle)
    }

    #[test]
    fn identical_directions_give_identity() {
        let q = quat_from_bone_pair(&Vec3::x(), &Vec3::x()).unwrap();
        assert_eq!(q, UnitQuat::IDENTITY);
    }

    #[test]
    fn orthogonal_directions() {
        let q = quat_from_bone_pair(&Vec3::y(), &Vec3::x()).unwrap();
        let a = q.to_array();
        let expect = [H, 0.0, 0.0, -H];
        for (x, e) in a.iter().zip(expect) {
            assert!((x - e).abs() < 1e-15, "{a:?}");
        }
    }

    #[test]
    fn antiparallel_directions_rotate_back() {
        let v0 = Vec3::x();
        let v = -v0;
        let q = quat_from_bone_pair(&v, &v0).unwrap();
        assert!(q.w().abs() < 1e-12);
        assert!(q.vector().dot(&v0).abs() < 1e-12);
        let mapped = rodrigues(&q) * v;
        assert!((mapped - v0).amax() < 1e-12, "{mapped:?}");
    }

    #[test]
    fn non_unit_input_rejected() {
        assert!(matches!(
            quat_from_bone_pair(&Vec3::new(2.0, 0.0, 0.0), &Vec3::x()),
            Err(Error::NotUnit(..))
        ));
    }

    #[test]
    fn rotate_quarter_turn_about_z() {
        let q = UnitQuat::from_axis_angle(&Vec3::z(), PI / 2.0).unwrap();
        let r = q.rotate(&Vec3::x());
        assert!((r - Vec3::y()).amax() < 1e-12);
        assert_eq!(
            UnitQuat::IDENTITY.rotate(&Vec3::new(1.0, 2.0, 3.0)),
            Vec3::new(1.0, 2.0, 3.0)
        );
    }

    #[test]
    fn geodesic_examples() {
        let q = UnitQuat::new(0.3, -0.1, 0.7, 0.2).unwrap();
        assert_eq!(geodesic_distance(&q, &q), 0.0);
        assert_eq!(geodesic_distance(&q, &q.neg()), 0.0);
        let z90 = UnitQuat::from_axis_angle(&Vec3::z(), PI / 2.0).unwrap();
        assert!((geodesic_distance(&UnitQuat::IDENTITY, &z90) - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn t_pose_sequence_encodes_to_identity() {
        let s = Skeleton::demo();
        let seq = PoseSequence::new(vec![s.t_pose().to_vec(); 3]).unwrap();
        let r = encode(&seq, &s).unwrap();
        assert!(r.quats().iter().flatten().all(|q| *q == UnitQuat::IDENTITY));
        assert!(r.root_positions().iter().all(|p| *p == s.t_pose()[s.root()]));
    }

    #[test]
    fn single_bone_quarter_turn() {
        let s = Skeleton::new(
            vec!["r".into(), "c".into()],
            vec![None, Some(0)],
            vec![Vec3::zeros(), Vec3::x()],
            0,
            (0, 1),
        )
        .unwrap();
        let seq = PoseSequence::new(vec![vec![Vec3::zeros(), Vec3::x()], vec![Vec3::zeros(), Vec3::z()]]).unwrap();
        let r = encode(&seq, &s).unwrap();
        let angle = geodesic_distance(&UnitQuat::IDENTITY, &r.quats()[1][0]);
        assert!((angle - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn identity_rotations_decode_to_translated_t_pose() {
        let s = Skeleton::demo();
        let r = RotationSequence::new(vec![vec![UnitQuat::IDENTITY; s.num_bones()]], vec![Vec3::zeros()]).unwrap();
        let p = decode(&r, &s).unwrap();
        let shift = s.t_pose()[s.root()];
        for (got, want) in p.frames()[0].iter().zip(s.t_pose()) {
            assert!((got - (want - shift)).amax() < 1e-12);
        }
    }

    #[test]
    fn bone_count_mismatch_rejected() {
        let s = Skeleton::demo();
        let r = RotationSequence::new(vec![vec![UnitQuat::IDENTITY; 3]], vec![Vec3::zeros()]).unwrap();
        assert!(matches!(decode(&r, &s), Err(Error::ShapeMismatch { .. })));
    }

    fn arb_unit() -> impl Strategy<Value = Vec3> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("non-degenerate", |(x, y, z)| x * x + y * y + z * z > 1e-3)
            .prop_map(|(x, y, z)| unit([x, y, z]))
    }

    fn arb_quat() -> impl Strategy<Value = UnitQuat> {
        (arb_unit(), 0.0..PI).prop_map(|(a, t)| UnitQuat::from_axis_angle(&a, t).unwrap())
    }

    proptest! {
        #[test]
        fn rotate_matches_rotation_matrix(q in arb_quat(), v in arb_unit(), s in 0.1..10.0f64) {
            let v = v * s;
            let r = q.rotate(&v);
            prop_assert!((r.norm() - v.norm()).abs() < 1e-12 * v.norm().max(1.0));
            let m = rodrigues(&q) * v;
            prop_assert!((r - m).amax() < 1e-12 * s);
        }

        #[test]
        fn bone_pair_quat_maps_v_onto_v0(v in arb_unit(), v0 in arb_unit()) {
            let q = quat_from_bone_pair(&v, &v0).unwrap();
            prop_assert!(q.w() >= -1e-12);
            prop_assert!((rodrigues(&q) * v - v0).amax() < 1e-9);
        }

        #[test]
        fn geodesic_symmetric_and_sign_invariant(a in arb_quat(), b in arb_quat()) {
            let d = geodesic_distance(&a, &b);
            prop_assert_eq!(d, geodesic_distance(&b, &a));
            prop_assert!((geodesic_distance(&a.neg(), &b) - d).abs() < 1e-12);
            prop_assert!((geodesic_distance(&a, &b.neg()) - d).abs() < 1e-12);
            prop_assert!((0.0..=PI).contains(&d));
            // agrees with the arccos form away from its ill-conditioned ends
            if d > 1e-3 && d < PI - 1e-3 {
                prop_assert!((geodesic_distance_acos(&a, &b) - d).abs() < 1e-10);
            }
        }
    }
}
