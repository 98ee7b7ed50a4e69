//! Skeletal graph, reference T-pose and pose-sequence containers.

use std::collections::VecDeque;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// A directed bone from `parent` to `child` joint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bone {
    pub parent: usize,
    pub child: usize,
}

/// Joint hierarchy with a reference T-pose.
///
/// Bones are indexed by child joint: bone `i` is the edge ending at the
/// `i`-th non-root joint in joint-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    joint_names: Vec<String>,
    parents: Vec<Option<usize>>,
    t_pose: Vec<Vec3>,
    bones: Vec<Bone>,
    bone_lengths: Vec<f64>,
    rest_directions: Vec<Vec3>,
    root: usize,
    shoulders: (usize, usize),
    /// Bone indices ordered so every bone comes after the bone ending at its parent.
    traversal: Vec<usize>,
}

impl Skeleton {
    pub fn new(
        joint_names: Vec<String>,
        parents: Vec<Option<usize>>,
        t_pose: Vec<Vec3>,
        root: usize,
        shoulders: (usize, usize),
    ) -> Result<Self> {
        let n = joint_names.len();
        if n < 2 {
            return Err(Error::InvalidSkeleton(format!("need at least 2 joints, got {n}")));
        }
        if parents.len() != n || t_pose.len() != n {
            return Err(Error::InvalidSkeleton(format!(
                "{n} joint names but {} parents and {} T-pose positions",
                parents.len(),
                t_pose.len()
            )));
        }
        for (j, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                if p >= n {
                    return Err(Error::InvalidSkeleton(format!("joint {j} has out-of-range parent {p}")));
                }
                if p == j {
                    return Err(Error::CyclicSkeleton { joint: j });
                }
            }
        }
        for (j, p) in t_pose.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidSkeleton(format!(
                    "T-pose position of joint {j} is not finite"
                )));
            }
        }
        // Walk up from every joint; a walk longer than n means a cycle.
        for start in 0..n {
            let mut j = start;
            let mut steps = 0;
            while let Some(p) = parents[j] {
                j = p;
                steps += 1;
                if steps > n {
                    return Err(Error::CyclicSkeleton { joint: start });
                }
            }
        }
        let roots: Vec<usize> = (0..n).filter(|&j| parents[j].is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::RootCount { found: roots.len() });
        }
        if roots[0] != root {
            return Err(Error::InvalidSkeleton(format!(
                "declared root {root} has a parent; the parentless joint is {}",
                roots[0]
            )));
        }
        if shoulders.0 >= n || shoulders.1 >= n || shoulders.0 == shoulders.1 {
            return Err(Error::InvalidSkeleton(format!("invalid shoulder joints {shoulders:?}")));
        }

        let mut bones = Vec::with_capacity(n - 1);
        let mut bone_lengths = Vec::with_capacity(n - 1);
        let mut rest_directions = Vec::with_capacity(n - 1);
        let mut bone_of_child = vec![None; n];
        for child in 0..n {
            let Some(parent) = parents[child] else { continue };
            let offset = t_pose[child] - t_pose[parent];
            let len = offset.norm();
            let bone = bones.len();
            if !(len > 0.0) {
                return Err(Error::ZeroLengthBone { bone, parent, child });
            }
            bone_of_child[child] = Some(bone);
            bones.push(Bone { parent, child });
            bone_lengths.push(len);
            rest_directions.push(offset / len);
        }

        let mut children = vec![Vec::new(); n];
        for (j, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                children[p].push(j);
            }
        }
        let mut traversal = Vec::with_capacity(n - 1);
        let mut queue = VecDeque::from([root]);
        while let Some(j) = queue.pop_front() {
            for &c in &children[j] {
                traversal.push(bone_of_child[c].expect("non-root joint has a bone"));
                queue.push_back(c);
            }
        }

        Ok(Skeleton {
            joint_names,
            parents,
            t_pose,
            bones,
            bone_lengths,
            rest_directions,
            root,
            shoulders,
            traversal,
        })
    }

    /// The 11-joint upper-body skeleton used by the synthetic data and tests.
    ///
    /// Rooted at the head, arms out in a T, shoulder span 1.
    pub fn demo() -> Self {
        let joints: [(&str, Option<usize>, [f64; 3]); 11] = [
            ("head", None, [0.0, 0.5, 0.0]),
            ("neck", Some(0), [0.0, 0.0, 0.0]),
            ("right_shoulder", Some(1), [-0.5, 0.0, 0.0]),
            ("right_elbow", Some(2), [-1.0, 0.0, 0.0]),
            ("right_wrist", Some(3), [-1.45, 0.0, 0.0]),
            ("right_hand", Some(4), [-1.6, 0.0, 0.0]),
            ("left_shoulder", Some(1), [0.5, 0.0, 0.0]),
            ("left_elbow", Some(6), [1.0, 0.0, 0.0]),
            ("left_wrist", Some(7), [1.45, 0.0, 0.0]),
            ("left_hand", Some(8), [1.6, 0.0, 0.0]),
            ("torso", Some(1), [0.0, -1.0, 0.0]),
        ];
        Skeleton::new(
            joints.iter().map(|j| j.0.to_string()).collect(),
            joints.iter().map(|j| j.1).collect(),
            joints.iter().map(|j| Vec3::from(j.2)).collect(),
            0,
            (6, 2),
        )
        .expect("demo skeleton is valid")
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn t_pose(&self) -> &[Vec3] {
        &self.t_pose
    }

    pub fn bones(&self) -> &[Bone] {
        &self.bones
    }

    pub fn bone_lengths(&self) -> &[f64] {
        &self.bone_lengths
    }

    /// Unit T-pose direction of every bone.
    pub fn rest_directions(&self) -> &[Vec3] {
        &self.rest_directions
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn shoulders(&self) -> (usize, usize) {
        self.shoulders
    }

    pub fn num_joints(&self) -> usize {
        self.joint_names.len()
    }

    pub fn num_bones(&self) -> usize {
        self.bones.len()
    }

    /// Bone indices in root-outward order.
    pub fn traversal(&self) -> &[usize] {
        &self.traversal
    }

    pub fn mean_bone_length(&self) -> f64 {
        self.bone_lengths.iter().sum::<f64>() / self.bone_lengths.len() as f64
    }

    pub fn bone_name(&self, bone: usize) -> String {
        let b = self.bones[bone];
        format!("{}->{}", self.joint_names[b.parent], self.joint_names[b.child])
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    /// Unit direction of every bone in one frame.
    pub fn bone_directions(&self, frame: &[Vec3]) -> Result<Vec<Vec3>> {
        if frame.len() != self.num_joints() {
            return Err(Error::shape("bone_directions", self.num_joints(), frame.len()));
        }
        self.bones
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let offset = frame[b.child] - frame[b.parent];
                let len = offset.norm();
                if len > 0.0 && len.is_finite() {
                    Ok(offset / len)
                } else {
                    Err(Error::ZeroLengthBone {
                        bone: i,
                        parent: b.parent,
                        child: b.child,
                    })
                }
            })
            .collect()
    }

    /// Rescale the whole sequence so its mean shoulder-to-shoulder distance is 1.
    ///
    /// One global factor for all frames; positions are not re-centred.
    pub fn normalize(&self, seq: &PoseSequence) -> Result<PoseSequence> {
        if seq.num_joints() != self.num_joints() {
            return Err(Error::shape("normalize", self.num_joints(), seq.num_joints()));
        }
        let (l, r) = self.shoulders;
        let mean = seq.frames().iter().map(|f| (f[l] - f[r]).norm()).sum::<f64>() / seq.len() as f64;
        if !(mean > 0.0) || !mean.is_finite() {
            return Err(Error::ZeroShoulderDistance);
        }
        let scale = 1.0 / mean;
        PoseSequence::new(
            seq.frames()
                .iter()
                .map(|f| f.iter().map(|p| p * scale).collect())
                .collect(),
        )
    }
}

/// Frames of 3D joint positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    frames: Vec<Vec<Vec3>>,
}

impl PoseSequence {
    pub fn new(frames: Vec<Vec<Vec3>>) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::EmptySequence("pose sequence has no frames"));
        };
        let n = first.len();
        if n == 0 {
            return Err(Error::EmptySequence("pose frame has no joints"));
        }
        for (t, f) in frames.iter().enumerate() {
            if f.len() != n {
                return Err(Error::shape("pose frame", n, format!("{} at frame {t}", f.len())));
            }
            if !f.iter().all(|p| p.iter().all(|c| c.is_finite())) {
                return Err(Error::NonFinite { op: "pose frame" });
            }
        }
        Ok(PoseSequence { frames })
    }

    pub fn frames(&self) -> &[Vec<Vec3>] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Vec<Vec3>> {
        self.frames
    }

    /// Number of frames (T + 1).
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn num_joints(&self) -> usize {
        self.frames[0].len()
    }

    /// Same sequence shifted by a constant offset.
    pub fn translated(&self, offset: Vec3) -> PoseSequence {
        PoseSequence {
            frames: self
                .frames
                .iter()
                .map(|f| f.iter().map(|p| p + offset).collect())
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> Skeleton {
        Skeleton::new(
            vec!["root".into(), "a".into(), "b".into()],
            vec![None, Some(0), Some(1)],
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(2.0, 0.0, 0.0),
            ],
            0,
            (1, 2),
        )
        .unwrap()
    }

    #[test]
    fn chain_has_two_unit_bones() {
        let s = chain();
        assert_eq!(s.num_bones(), 2);
        assert_eq!(s.bone_lengths(), &[1.0, 1.0]);
        assert_eq!(s.bones()[1], Bone { parent: 1, child: 2 });
    }

    #[test]
    fn cycle_is_rejected() {
        let err = Skeleton::new(
            vec!["r".into(), "a".into(), "b".into()],
            vec![None, Some(2), Some(1)],
            vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            0,
            (1, 2),
        )
        .unwrap_err();
        assert!(err.to_string().contains("cyclic skeleton"), "{err}");
    }

    #[test]
    fn multiple_roots_rejected() {
        let err = Skeleton::new(
            vec!["r".into(), "a".into(), "b".into()],
            vec![None, None, Some(1)],
            vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            0,
            (1, 2),
        )
        .unwrap_err();
        assert!(matches!(err, Error::RootCount { found: 2 }));
    }

    #[test]
    fn coincident_t_pose_joints_rejected() {
        let err = Skeleton::new(
            vec!["r".into(), "a".into()],
            vec![None, Some(0)],
            vec![Vec3::zeros(), Vec3::zeros()],
            0,
            (0, 1),
        )
        .unwrap_err();
        assert!(err.to_string().contains("zero-length bone"), "{err}");
    }

    #[test]
    fn demo_skeleton_shape() {
        let s = Skeleton::demo();
        assert_eq!(s.num_joints(), 11);
        assert_eq!(s.num_bones(), 10);
        assert_eq!(s.traversal().len(), 10);
        let (l, r) = s.shoulders();
        assert!(((s.t_pose()[l] - s.t_pose()[r]).norm() - 1.0).abs() < 1e-15);
        // every bone is visited after the bone that ends at its parent
        let mut placed = vec![false; s.num_joints()];
        placed[s.root()] = true;
        for &b in s.traversal() {
            assert!(placed[s.bones()[b].parent]);
            placed[s.bones()[b].child] = true;
        }
    }

    #[test]
    fn t_pose_directions_are_rest_directions() {
        let s = Skeleton::demo();
        let d = s.bone_directions(s.t_pose()).unwrap();
        assert_eq!(d, s.rest_directions());
    }

    #[test]
    fn direction_is_normalized_offset() {
        let s = chain();
        let frame = [Vec3::zeros(), Vec3::new(0.0, 2.0, 0.0), Vec3::new(0.0, 2.0, 3.0)];
        let d = s.bone_directions(&frame).unwrap();
        assert_eq!(d[0], Vec3::new(0.0, 1.0, 0.0));
        assert_eq!(d[1], Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn coincident_frame_joints_name_the_bone() {
        let s = chain();
        let frame = [Vec3::zeros(), Vec3::x(), Vec3::x()];
        let err = s.bone_directions(&frame).unwrap_err();
        assert!(matches!(err, Error::ZeroLengthBone { bone: 1, .. }));
    }

    #[test]
    fn normalize_halves_double_shoulder_span() {
        let s = chain();
        let frame = vec![Vec3::zeros(), Vec3::new(1.0, 1.0, 0.0), Vec3::new(1.0, 3.0, 0.0)];
        let seq = PoseSequence::new(vec![frame.clone(), frame]).unwrap();
        let out = s.normalize(&seq).unwrap();
        for (a, b) in out.frames().iter().flatten().zip(seq.frames().iter().flatten()) {
            assert_eq!(*a, b * 0.5);
        }
        let again = s.normalize(&out).unwrap();
        for (a, b) in again.frames().iter().flatten().zip(out.frames().iter().flatten()) {
            assert!((a - b).amax() < 1e-12);
        }
    }

    #[test]
    fn normalize_rejects_coincident_shoulders() {
        let s = chain();
        let frame = vec![Vec3::zeros(), Vec3::x(), Vec3::x()];
        let seq = PoseSequence::new(vec![frame; 3]).unwrap();
        assert!(matches!(s.normalize(&seq), Err(Error::ZeroShoulderDistance)));
    }

    #[test]
    fn ragged_sequence_rejected() {
        let err = PoseSequence::new(vec![vec![Vec3::zeros(); 3], vec![Vec3::zeros(); 2]]);
        assert!(err.is_err());
    }
}
