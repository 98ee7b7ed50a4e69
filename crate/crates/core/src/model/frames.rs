use super::OutputMode;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rotation::{RotationSequence, UnitQuat};
use crate::skeleton::{PoseSequence, Vec3};

/// Column layout of one decoder frame.
///
/// Cartesian: `3 * joints` coordinates. Quaternion: `4 * bones` components
/// (`w x y z` per bone) followed by the 3-D root position. The counter, when
/// enabled, is the final column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameLayout {
    pub mode: OutputMode,
    pub num_joints: usize,
    pub counter: bool,
}

/// A target motion in whichever representation the model emits.
#[derive(Debug, Clone, PartialEq)]
pub enum Motion {
    Pose(PoseSequence),
    Rotation(RotationSequence),
}

impl Motion {
    pub fn len(&self) -> usize {
        match self {
            Motion::Pose(p) => p.len(),
            Motion::Rotation(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FrameLayout {
    pub fn new(mode: OutputMode, num_joints: usize, counter: bool) -> Self {
        FrameLayout {
            mode,
            num_joints,
            counter,
        }
    }

    pub fn num_bones(&self) -> usize {
        self.num_joints - 1
    }

    /// Columns before the counter.
    pub fn motion_cols(&self) -> usize {
        match self.mode {
            OutputMode::Cartesian => 3 * self.num_joints,
            OutputMode::Quaternion => 4 * self.num_bones() + 3,
        }
    }

    pub fn width(&self) -> usize {
        self.motion_cols() + usize::from(self.counter)
    }

    pub fn counter_col(&self) -> Option<usize> {
        self.counter.then(|| self.motion_cols())
    }

    /// Normalize quaternion blocks in place; zero blocks become the identity.
    pub fn normalize_row(&self, row: &mut [f64]) {
        if self.mode != OutputMode::Quaternion {
            return;
        }
        for q in row[..4 * self.num_bones()].chunks_exact_mut(4) {
            let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
            if n > 0.0 && n.is_finite() {
                q.iter_mut().for_each(|c| *c /= n);
            } else {
                q.copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
            }
        }
    }

    /// Interpret rows of model output as a motion (counter column dropped).
    pub fn to_motion(&self, frames: &Tensor) -> Result<Motion> {
        if frames.cols() != self.width() {
            return Err(Error::shape("frames", self.width(), frames.cols()));
        }
        match self.mode {
            OutputMode::Cartesian => {
                let poses = (0..frames.rows())
                    .map(|r| {
                        frames.row(r)[..3 * self.num_joints]
                            .chunks_exact(3)
                            .map(|c| Vec3::new(c[0], c[1], c[2]))
                            .collect()
                    })
                    .collect();
                Ok(Motion::Pose(PoseSequence::new(poses)?))
            }
            OutputMode::Quaternion => {
                let b = self.num_bones();
                let mut quats = Vec::with_capacity(frames.rows());
                let mut roots = Vec::with_capacity(frames.rows());
                for r in 0..frames.rows() {
                    let mut row = frames.row(r).to_vec();
                    self.normalize_row(&mut row);
                    let qs = row[..4 * b]
                        .chunks_exact(4)
                        .map(|q| UnitQuat::new(q[0], q[1], q[2], q[3]))
                        .collect::<Result<Vec<_>>>()?;
                    quats.push(qs);
                    roots.push(Vec3::new(row[4 * b], row[4 * b + 1], row[4 * b + 2]));
                }
                Ok(Motion::Rotation(RotationSequence::new(quats, roots)?))
            }
        }
    }
}

/// Counter value of frame `t` in a sequence of `n` frames.
pub(crate) fn counter_value(t: usize, n: usize) -> f64 {
    if n <= 1 {
        1.0
    } else {
        t as f64 / (n - 1) as f64
    }
}

/// Target rows for a motion: one row per frame, counter rising from 0 to 1.
pub fn target_frames(motion: &Motion, layout: &FrameLayout) -> Result<Tensor> {
    let n = motion.len();
    if n == 0 {
        return Err(Error::EmptySequence("target motion"));
    }
    let w = layout.width();
    let mut data = Vec::with_capacity(n * w);
    match (motion, layout.mode) {
        (Motion::Pose(p), OutputMode::Cartesian) => {
            if p.num_joints() != layout.num_joints {
                return Err(Error::shape("target pose", layout.num_joints, p.num_joints()));
            }
            for (t, frame) in p.frames().iter().enumerate() {
                data.extend(frame.iter().flat_map(|j| [j.x, j.y, j.z]));
                if layout.counter {
                    data.push(counter_value(t, n));
                }
            }
        }
        (Motion::Rotation(r), OutputMode::Quaternion) => {
            if r.num_bones() != layout.num_bones() {
                return Err(Error::shape("target rotations", layout.num_bones(), r.num_bones()));
            }
            for (t, (qs, root)) in r.quats().iter().zip(r.root_positions()).enumerate() {
                data.extend(qs.iter().flat_map(UnitQuat::to_array));
                data.extend([root.x, root.y, root.z]);
                if layout.counter {
                    data.push(counter_value(t, n));
                }
            }
        }
        _ => {
            return Err(Error::InvalidArgument(format!(
                "target motion does not match {} output mode",
                layout.mode
            )))
        }
    }
    Tensor::new(n, w, data)
}

/// Teacher-forcing inputs: an all-zero start frame, then every target frame but the last.
pub fn decoder_inputs(targets: &Tensor) -> Tensor {
    let (n, w) = targets.shape();
    let mut data = vec![0.0; w];
    data.extend_from_slice(&targets.data()[..(n.saturating_sub(1)) * w]);
    Tensor::new(n, w, data).expect("shape is consistent by construction")
}
