//! DTW alignment and the MJE / MBAE / PCK sequence metrics.
//!
//! All three metrics first align prediction and ground truth with dynamic
//! time warping (steps `(1,0)`, `(0,1)`, `(1,1)`, no window) and then average
//! over the aligned frame pairs. MJE and PCK align on mean joint distance,
//! MBAE on mean bone angle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::{geodesic_distance, RotationSequence};
use crate::skeleton::{PoseSequence, Skeleton};

pub const DEFAULT_PCK_ALPHA: f64 = 0.2;
/// Bounding radii below this fall back to the mean bone length.
pub const MIN_PCK_RADIUS: f64 = 1e-9;

/// Monotone warping path from `(0, 0)` to `(n - 1, m - 1)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentPath {
    pairs: Vec<(usize, usize)>,
}

impl AlignmentPath {
    /// `(pred_frame, gt_frame)` pairs in order.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Minimum-cost alignment of `pred` onto `gt`. Returns the path and its summed cost.
///
/// Ties between predecessors prefer the diagonal step, then `(0, 1)`, then `(1, 0)`.
pub fn dtw_align<A, B, F>(pred: &[A], gt: &[B], cost: F) -> Result<(AlignmentPath, f64)>
where
    F: Fn(&A, &B) -> f64,
{
    let (n, m) = (pred.len(), gt.len());
    if n == 0 || m == 0 {
        return Err(Error::EmptySequence("cannot align an empty sequence"));
    }
    let mut acc = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let c = cost(&pred[i], &gt[j]);
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                best_predecessor(&acc, m, i, j).1
            };
            acc[i * m + j] = best + c;
        }
    }
    let mut pairs = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while (i, j) != (0, 0) {
        (i, j) = best_predecessor(&acc, m, i, j).0;
        pairs.push((i, j));
    }
    pairs.reverse();
    Ok((AlignmentPath { pairs }, acc[n * m - 1]))
}

fn best_predecessor(acc: &[f64], m: usize, i: usize, j: usize) -> ((usize, usize), f64) {
    let mut best = ((usize::MAX, usize::MAX), f64::INFINITY);
    let candidates = [
        (i > 0 && j > 0).then(|| (i - 1, j - 1)),
        (j > 0).then(|| (i, j - 1)),
        (i > 0).then(|| (i - 1, j)),
    ];
    for (pi, pj) in candidates.into_iter().flatten() {
        let v = acc[pi * m + pj];
        if v < best.1 {
            best = ((pi, pj), v);
        }
    }
    best
}

fn check_joints(ctx: &'static str, pred: &PoseSequence, gt: &PoseSequence) -> Result<()> {
    if pred.num_joints() != gt.num_joints() {
        return Err(Error::shape(ctx, gt.num_joints(), pred.num_joints()));
    }
    Ok(())
}

fn joint_cost(a: &[crate::Vec3], b: &[crate::Vec3]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).norm()).sum::<f64>() / a.len() as f64
}

/// Alignment on mean per-joint Euclidean distance.
pub fn align_positions(pred: &PoseSequence, gt: &PoseSequence) -> Result<AlignmentPath> {
    check_joints("position alignment", pred, gt)?;
    Ok(dtw_align(pred.frames(), gt.frames(), |a, b| joint_cost(a, b))?.0)
}

/// Alignment on mean per-bone geodesic angle.
pub fn align_rotations(pred: &RotationSequence, gt: &RotationSequence) -> Result<AlignmentPath> {
    if pred.num_bones() != gt.num_bones() {
        return Err(Error::shape("rotation alignment", gt.num_bones(), pred.num_bones()));
    }
    let cost = |a: &Vec<crate::UnitQuat>, b: &Vec<crate::UnitQuat>| {
        a.iter().zip(b).map(|(p, q)| geodesic_distance(p, q)).sum::<f64>() / a.len() as f64
    };
    Ok(dtw_align(pred.quats(), gt.quats(), cost)?.0)
}

/// Mean joint error over aligned pairs, restricted to `joints`.
pub fn mje_on_path(pred: &PoseSequence, gt: &PoseSequence, path: &AlignmentPath, joints: &[usize]) -> f64 {
    let mut s = 0.0;
    for &(i, j) in path.pairs() {
        for &k in joints {
            s += (pred.frames()[i][k] - gt.frames()[j][k]).norm();
        }
    }
    s / (path.len() * joints.len()) as f64
}

/// Mean joint error after position alignment, in the sequences' units.
pub fn mje(pred: &PoseSequence, gt: &PoseSequence) -> Result<f64> {
    let path = align_positions(pred, gt)?;
    let all: Vec<usize> = (0..gt.num_joints()).collect();
    Ok(mje_on_path(pred, gt, &path, &all))
}

/// Mean bone angle error after angular alignment, in degrees.
pub fn mbae(pred: &RotationSequence, gt: &RotationSequence) -> Result<f64> {
    let path = align_rotations(pred, gt)?;
    let mut s = 0.0;
    for &(i, j) in path.pairs() {
        for (p, q) in pred.quats()[i].iter().zip(&gt.quats()[j]) {
            s += geodesic_distance(p, q);
        }
    }
    Ok((s / (path.len() * gt.num_bones()) as f64).to_degrees())
}

/// Radius of each joint's ground-truth `(x, y)` trajectory around its centroid.
pub fn bounding_radii(gt: &PoseSequence, skeleton: &Skeleton) -> Vec<f64> {
    let n = gt.len() as f64;
    (0..gt.num_joints())
        .map(|k| {
            let (cx, cy) = gt
                .frames()
                .iter()
                .fold((0.0, 0.0), |(x, y), f| (x + f[k].x, y + f[k].y));
            let (cx, cy) = (cx / n, cy / n);
            let r = gt
                .frames()
                .iter()
                .map(|f| (f[k].x - cx).hypot(f[k].y - cy))
                .fold(0.0, f64::max);
            if r < MIN_PCK_RADIUS {
                skeleton.mean_bone_length()
            } else {
                r
            }
        })
        .collect()
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "PCK alpha must be positive, got {alpha}"
        )))
    }
}

/// Fraction of aligned `(frame, joint)` pairs whose projected error is within
/// `alpha` times the joint's bounding radius.
pub fn pck_on_path(pred: &PoseSequence, gt: &PoseSequence, path: &AlignmentPath, radii: &[f64], alpha: f64) -> f64 {
    let mut correct = 0usize;
    for &(i, j) in path.pairs() {
        for (k, r) in radii.iter().enumerate() {
            let p = pred.frames()[i][k];
            let g = gt.frames()[j][k];
            if (p.x - g.x).hypot(p.y - g.y) <= alpha * r {
                correct += 1;
            }
        }
    }
    correct as f64 / (path.len() * radii.len()) as f64
}

pub fn pck(pred: &PoseSequence, gt: &PoseSequence, skeleton: &Skeleton, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if gt.num_joints() != skeleton.num_joints() {
        return Err(Error::shape("pck", skeleton.num_joints(), gt.num_joints()));
    }
    let path = align_positions(pred, gt)?;
    let radii = bounding_radii(gt, skeleton);
    Ok(pck_on_path(pred, gt, &path, &radii, alpha))
}

/// A named group of joints for the per-part MJE breakdown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BodyPart {
    pub name: String,
    pub joints: Vec<usize>,
}

/// Joints grouped by `left_` / `right_` name prefix; everything else is `body`.
pub fn default_body_parts(skeleton: &Skeleton) -> Vec<BodyPart> {
    let mut parts = vec![
        BodyPart {
            name: "body".into(),
            joints: vec![],
        },
        BodyPart {
            name: "left".into(),
            joints: vec![],
        },
        BodyPart {
            name: "right".into(),
            joints: vec![],
        },
    ];
    for (k, name) in skeleton.joint_names().iter().enumerate() {
        let slot = if name.starts_with("left") {
            1
        } else if name.starts_with("right") {
            2
        } else {
            0
        };
        parts[slot].joints.push(k);
    }
    parts.retain(|p| !p.joints.is_empty());
    parts
}

/// Metrics of one predicted sequence against its reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub mje: f64,
    pub mbae: f64,
    pub pck: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_part_mje: Vec<(String, f64)>,
}

/// Evaluates all metrics for one sequence pair given in both representations.
pub fn evaluate_sample(
    pred: (&PoseSequence, &RotationSequence),
    gt: (&PoseSequence, &RotationSequence),
    skeleton: &Skeleton,
    alpha: f64,
    parts: &[BodyPart],
) -> Result<SampleMetrics> {
    check_alpha(alpha)?;
    check_joints("evaluate", pred.0, gt.0)?;
    if gt.0.num_joints() != skeleton.num_joints() {
        return Err(Error::shape("evaluate", skeleton.num_joints(), gt.0.num_joints()));
    }
    let path = align_positions(pred.0, gt.0)?;
    let all: Vec<usize> = (0..skeleton.num_joints()).collect();
    let radii = bounding_radii(gt.0, skeleton);
    Ok(SampleMetrics {
        mje: mje_on_path(pred.0, gt.0, &path, &all),
        mbae: mbae(pred.1, gt.1)?,
        pck: pck_on_path(pred.0, gt.0, &path, &radii, alpha),
        per_part_mje: parts
            .iter()
            .map(|p| (p.name.clone(), mje_on_path(pred.0, gt.0, &path, &p.joints)))
            .collect(),
    })
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        if values.is_empty() {
            return Summary {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Summary { mean, std: var.sqrt() }
    }
}

/// Aggregate over an evaluation set, in sample order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub count: usize,
    pub mje: Summary,
    pub mbae: Summary,
    pub pck: Summary,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_part_mje: Vec<(String, Summary)>,
    #[serde(default)]
    pub truncated: usize,
}

impl MetricsReport {
    pub fn aggregate(samples: &[SampleMetrics]) -> Result<MetricsReport> {
        if samples.is_empty() {
            return Err(Error::EmptySequence("no samples to aggregate"));
        }
        let col = |f: &dyn Fn(&SampleMetrics) -> f64| samples.iter().map(f).collect::<Vec<_>>();
        let per_part_mje = samples[0]
            .per_part_mje
            .iter()
            .enumerate()
            .map(|(k, (name, _))| (name.clone(), Summary::of(&col(&|s| s.per_part_mje[k].1))))
            .collect();
        Ok(MetricsReport {
            count: samples.len(),
            mje: Summary::of(&col(&|s| s.mje)),
            mbae: Summary::of(&col(&|s| s.mbae)),
            pck: Summary::of(&col(&|s| s.pck)),
            per_part_mje,
            truncated: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::{encode, UnitQuat};
    use crate::skeleton::Vec3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Every monotone path from (0,0) to (n-1,m-1), costs summed in path order.
    fn brute_min(costs: &[Vec<f64>]) -> f64 {
        fn walk(c: &[Vec<f64>], i: usize, j: usize, acc: f64, best: &mut f64) {
            let acc = acc + c[i][j];
            let (n, m) = (c.len(), c[0].len());
            if (i, j) == (n - 1, m - 1) {
                *best = best.min(acc);
                return;
            }
            if i + 1 < n && j + 1 < m {
                walk(c, i + 1, j + 1, acc, best);
            }
            if j + 1 < m {
                walk(c, i, j + 1, acc, best);
            }
            if i + 1 < n {
                walk(c, i + 1, j, acc, best);
            }
        }
        let mut best = f64::INFINITY;
        walk(costs, 0, 0, 0.0, &mut best);
        best
    }

    #[test]
    fn dtw_identical_is_diagonal() {
        let a = [1.0, 3.0, 2.0, 5.0];
        let (path, cost) = dtw_align(&a, &a, |x: &f64, y: &f64| (x - y).abs()).unwrap();
        assert_eq!(cost, 0.0);
        assert_eq!(path.pairs(), &[(0, 0), (1, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn dtw_repetition_absorbs() {
        let (path, cost) = dtw_align(&[7.0], &[7.0, 7.0, 7.0], |x: &f64, y: &f64| (x - y).abs()).unwrap();
        assert_eq!(cost, 0.0);
        assert_eq!(path.len(), 3);
    }

    #[test]
    fn dtw_empty_rejected() {
        let empty: [f64; 0] = [];
        assert!(dtw_align(&empty, &[1.0], |x: &f64, y: &f64| x - y).is_err());
    }

    #[test]
    fn dtw_matches_enumeration_up_to_six() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=6 {
            for m in 1..=6 {
                let c: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.gen()).collect()).collect();
                let idx_a: Vec<usize> = (0..n).collect();
                let idx_b: Vec<usize> = (0..m).collect();
                let (path, cost) = dtw_align(&idx_a, &idx_b, |&i, &j| c[i][j]).unwrap();
                assert_eq!(cost, brute_min(&c), "{n}x{m}");
                assert!(path.len() >= n.max(m));
                let along: f64 = path.pairs().iter().fold(0.0, |s, &(i, j)| s + c[i][j]);
                assert_eq!(along, cost);
            }
        }
    }

    fn random_seq(rng: &mut ChaCha8Rng, frames: usize) -> PoseSequence {
        let s = Skeleton::demo();
        PoseSequence::new(
            (0..frames)
                .map(|_| {
                    s.t_pose()
                        .iter()
                        .map(|p| {
                            p + Vec3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5) * 0.3
                        })
                        .collect()
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn metric_identities() {
        let s = Skeleton::demo();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_seq(&mut rng, 6);
        assert_eq!(mje(&a, &a).unwrap(), 0.0);
        assert_eq!(pck(&a, &a, &s, DEFAULT_PCK_ALPHA).unwrap(), 1.0);
        let r = encode(&a, &s).unwrap();
        assert_eq!(mbae(&r, &r).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_mje() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_seq(&mut rng, 5);
        let off = Vec3::new(0.3, 0.0, 0.4).normalize() * 0.5;
        let b = a.translated(off);
        assert!((mje(&b, &a).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_angle_mbae() {
        let s = Skeleton::demo();
        let tilt = UnitQuat::from_axis_angle(&Vec3::new(0.2, -0.5, 0.7), 10f64.to_radians()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt: Vec<Vec<UnitQuat>> = (0..4)
            .map(|_| {
                (0..s.num_bones())
                    .map(|_| UnitQuat::new(rng.gen(), rng.gen(), rng.gen(), rng.gen()).unwrap())
                    .collect()
            })
            .collect();
        let pred: Vec<Vec<UnitQuat>> = gt.iter().map(|f| f.iter().map(|q| q.mul(&tilt)).collect()).collect();
        let roots = vec![Vec3::zeros(); 4];
        let gt = RotationSequence::new(gt, roots.clone()).unwrap();
        let pred = RotationSequence::new(pred, roots).unwrap();
        assert!((mbae(&pred, &gt).unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn pck_all_wrong_and_half_wrong() {
        let s = Skeleton::demo();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let gt = random_seq(&mut rng, 5);
        let radii = bounding_radii(&gt, &s);
        let displaced = |which: &dyn Fn(usize) -> bool| {
            PoseSequence::new(
                gt.frames()
                    .iter()
                    .map(|f| {
                        f.iter()
                            .enumerate()
                            .map(|(k, p)| {
                                if which(k) {
                                    p + Vec3::new(10.0 * DEFAULT_PCK_ALPHA * radii[k], 0.0, 0.0)
                                } else {
                                    *p
                                }
                            })
                            .collect()
                    })
                    .collect(),
            )
            .unwrap()
        };
        let all = displaced(&|_| true);
        let path = AlignmentPath {
            pairs: (0..5).map(|i| (i, i)).collect(),
        };
        assert_eq!(pck_on_path(&all, &gt, &path, &radii, DEFAULT_PCK_ALPHA), 0.0);

        // direct count over all (frame, joint) pairs: even joints exact, odd joints displaced
        let half = displaced(&|k| k % 2 == 1);
        let expect = (0..5 * 11).filter(|i| (i % 11) % 2 == 0).count() as f64 / 55.0;
        assert_eq!(pck_on_path(&half, &gt, &path, &radii, DEFAULT_PCK_ALPHA), expect);
    }

    #[test]
    fn static_joint_uses_mean_bone_length() {
        let s = Skeleton::demo();
        let gt = PoseSequence::new(vec![s.t_pose().to_vec(); 3]).unwrap();
        let r = bounding_radii(&gt, &s);
        assert!(r.iter().all(|&x| x == s.mean_bone_length()));
    }

    #[test]
    fn joint_count_mismatch_rejected() {
        let s = Skeleton::demo();
        let a = PoseSequence::new(vec![s.t_pose().to_vec()]).unwrap();
        let b = PoseSequence::new(vec![s.t_pose()[..5].to_vec()]).unwrap();
        assert!(mje(&a, &b).is_err());
        assert!(pck(&b, &a, &s, 0.2).is_err());
    }

    #[test]
    fn summary_is_population_std() {
        let s = Summary::of(&[1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
    }

    #[test]
    fn body_parts_cover_demo_skeleton() {
        let parts = default_body_parts(&Skeleton::demo());
        let total: usize = parts.iter().map(|p| p.joints.len()).sum();
        assert_eq!(total, 11);
        assert_eq!(parts.len(), 3);
    }

    #[test]
    fn mbae_invariant_under_rotation_of_whole_scene() {
        // rotating both sequences together with the rest pose leaves every
        // bone quaternion conjugated by the same rotation
        let s = Skeleton::demo();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_seq(&mut rng, 5);
        let b = random_seq(&mut rng, 4);
        let base = mbae(&encode(&a, &s).unwrap(), &encode(&b, &s).unwrap()).unwrap();
        let rot = UnitQuat::from_axis_angle(&Vec3::new(0.3, 1.0, -0.4), 1.1).unwrap();
        let turn = |seq: &PoseSequence| {
            PoseSequence::new(
                seq.frames()
                    .iter()
                    .map(|f| f.iter().map(|p| rot.rotate(p)).collect())
                    .collect(),
            )
            .unwrap()
        };
        let turned = Skeleton::new(
            s.joint_names().to_vec(),
            s.parents().to_vec(),
            s.t_pose().iter().map(|p| rot.rotate(p)).collect(),
            s.root(),
            s.shoulders(),
        )
        .unwrap();
        let moved = mbae(
            &encode(&turn(&a), &turned).unwrap(),
            &encode(&turn(&b), &turned).unwrap(),
        )
        .unwrap();
        assert!((moved - base).abs() < 1e-9, "{moved} vs {base}");
    }

    proptest! {
        #[test]
        fn translation_invariance(seed in 0u64..300, dx in -5.0..5.0f64, dy in -5.0..5.0f64, dz in -5.0..5.0f64) {
            let s = Skeleton::demo();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_seq(&mut rng, 4);
            let b = random_seq(&mut rng, 6);
            let off = Vec3::new(dx, dy, dz);
            let (at, bt) = (a.translated(off), b.translated(off));
            prop_assert!((mje(&a, &b).unwrap() - mje(&at, &bt).unwrap()).abs() < 1e-12);
            prop_assert_eq!(pck(&a, &b, &s, 0.2).unwrap(), pck(&at, &bt, &s, 0.2).unwrap());
        }

        #[test]
        fn pck_non_increasing_in_displacement(seed in 0u64..200) {
            let s = Skeleton::demo();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt = random_seq(&mut rng, 5);
            let dir = Vec3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, 0.0).normalize();
            let mut last = 1.0;
            for step in 0..12 {
                let pred = gt.translated(dir * (0.02 * step as f64));
                let p = pck(&pred, &gt, &s, 0.2).unwrap();
                prop_assert!(p <= last + 1e-15, "step {} pck {} > {}", step, p, last);
                last = p;
            }
        }
    }
}
