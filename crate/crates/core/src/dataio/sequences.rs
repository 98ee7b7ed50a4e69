//! Line-delimited JSON motion files: a header object on line 1, then one
//! frame per line.
//!
//! ```text
//! {"format": "pose", "joints": ["head", "neck", ...]}
//! [[x, y, z], [x, y, z], ...]
//! ```
//!
//! Rotation files name bones instead of joints and store
//! `{"root": [x, y, z], "quats": [[w, x, y, z], ...]}` per frame.

use std::path::Path;

use serde::Deserialize;

use super::{format_triple, parse_error, quote, read_text, write_atomic};
use crate::error::{Error, Result};
use crate::rotation::{RotationSequence, UnitQuat};
use crate::skeleton::{PoseSequence, Skeleton, Vec3};

#[derive(Deserialize)]
struct Header {
    format: String,
    #[serde(default)]
    joints: Option<Vec<String>>,
    #[serde(default)]
    bones: Option<Vec<String>>,
}

#[derive(Deserialize)]
struct RotationFrame {
    root: [f64; 3],
    quats: Vec<[f64; 4]>,
}

fn names_line(kind: &str, key: &str, names: &[String]) -> String {
    let quoted: Vec<String> = names.iter().map(|n| quote(n)).collect();
    format!("{{\"format\": \"{kind}\", \"{key}\": [{}]}}\n", quoted.join(", "))
}

pub fn pose_sequence_to_string(seq: &PoseSequence, skeleton: &Skeleton) -> Result<String> {
    if seq.num_joints() != skeleton.num_joints() {
        return Err(Error::shape("pose sequence", skeleton.num_joints(), seq.num_joints()));
    }
    let mut out = names_line("pose", "joints", skeleton.joint_names());
    for frame in seq.frames() {
        let joints: Vec<String> = frame.iter().map(|p| format_triple(&[p.x, p.y, p.z])).collect();
        out.push('[');
        out.push_str(&joints.join(", "));
        out.push_str("]\n");
    }
    Ok(out)
}

pub fn rotation_sequence_to_string(seq: &RotationSequence, skeleton: &Skeleton) -> Result<String> {
    if seq.num_bones() != skeleton.num_bones() {
        return Err(Error::shape("rotation sequence", skeleton.num_bones(), seq.num_bones()));
    }
    let bones: Vec<String> = (0..skeleton.num_bones()).map(|b| skeleton.bone_name(b)).collect();
    let mut out = names_line("rotation", "bones", &bones);
    for (qs, root) in seq.quats().iter().zip(seq.root_positions()) {
        let quats: Vec<String> = qs.iter().map(|q| format_triple(&q.to_array())).collect();
        out.push_str(&format!(
            "{{\"root\": {}, \"quats\": [{}]}}\n",
            format_triple(&[root.x, root.y, root.z]),
            quats.join(", ")
        ));
    }
    Ok(out)
}

pub fn save_pose_sequence(path: &Path, seq: &PoseSequence, skeleton: &Skeleton) -> Result<()> {
    write_atomic(path, pose_sequence_to_string(seq, skeleton)?.as_bytes())
}

pub fn save_rotation_sequence(path: &Path, seq: &RotationSequence, skeleton: &Skeleton) -> Result<()> {
    write_atomic(path, rotation_sequence_to_string(seq, skeleton)?.as_bytes())
}

/// Splits into numbered lines, rejecting blank lines anywhere but the end.
fn numbered_lines<'a>(path: &Path, text: &'a str) -> Result<Vec<(usize, &'a str)>> {
    let mut lines: Vec<(usize, &str)> = text.lines().enumerate().map(|(i, l)| (i + 1, l)).collect();
    while lines.last().is_some_and(|(_, l)| l.trim().is_empty()) {
        lines.pop();
    }
    if let Some((n, _)) = lines.iter().find(|(_, l)| l.trim().is_empty()) {
        return Err(parse_error(path, *n, "blank line"));
    }
    if lines.is_empty() {
        return Err(parse_error(path, 1, "missing header line"));
    }
    Ok(lines)
}

fn header(path: &Path, line: &str, kind: &str, key: &str, expected: &[String]) -> Result<()> {
    let h: Header = serde_json::from_str(line).map_err(|e| parse_error(path, 1, format!("bad header: {e}")))?;
    if h.format != kind {
        return Err(parse_error(
            path,
            1,
            format!("expected format `{kind}`, found `{}`", h.format),
        ));
    }
    let names = if key == "joints" { h.joints } else { h.bones };
    let names = names.ok_or_else(|| parse_error(path, 1, format!("header is missing `{key}`")))?;
    if names != expected {
        return Err(parse_error(path, 1, format!("{key} do not match the skeleton")));
    }
    Ok(())
}

/// Load a pose file whose joint order must match `skeleton`.
pub fn load_pose_sequence(path: &Path, skeleton: &Skeleton) -> Result<PoseSequence> {
    let text = read_text(path)?;
    let lines = numbered_lines(path, &text)?;
    header(path, lines[0].1, "pose", "joints", skeleton.joint_names())?;
    let mut frames = Vec::with_capacity(lines.len() - 1);
    for &(n, line) in &lines[1..] {
        let joints: Vec<[f64; 3]> =
            serde_json::from_str(line).map_err(|e| parse_error(path, n, format!("bad frame: {e}")))?;
        if joints.len() != skeleton.num_joints() {
            return Err(parse_error(
                path,
                n,
                format!("expected {} joints, found {}", skeleton.num_joints(), joints.len()),
            ));
        }
        frames.push(joints.into_iter().map(Vec3::from).collect());
    }
    if frames.is_empty() {
        return Err(parse_error(path, 1, "no frames after the header"));
    }
    PoseSequence::new(frames)
}

/// Load a rotation file; quaternions must already be unit length.
pub fn load_rotation_sequence(path: &Path, skeleton: &Skeleton) -> Result<RotationSequence> {
    let text = read_text(path)?;
    let lines = numbered_lines(path, &text)?;
    let bones: Vec<String> = (0..skeleton.num_bones()).map(|b| skeleton.bone_name(b)).collect();
    header(path, lines[0].1, "rotation", "bones", &bones)?;
    let mut quats = Vec::with_capacity(lines.len() - 1);
    let mut roots = Vec::with_capacity(lines.len() - 1);
    for &(n, line) in &lines[1..] {
        let f: RotationFrame =
            serde_json::from_str(line).map_err(|e| parse_error(path, n, format!("bad frame: {e}")))?;
        if f.quats.len() != bones.len() {
            return Err(parse_error(
                path,
                n,
                format!("expected {} quaternions, found {}", bones.len(), f.quats.len()),
            ));
        }
        let qs = f
            .quats
            .iter()
            .map(|q| UnitQuat::from_unit(q[0], q[1], q[2], q[3]))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| parse_error(path, n, e.to_string()))?;
        quats.push(qs);
        roots.push(Vec3::from(f.root));
    }
    if quats.is_empty() {
        return Err(parse_error(path, 1, "no frames after the header"));
    }
    RotationSequence::new(quats, roots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::encode;

    fn three_frames() -> PoseSequence {
        let sk = Skeleton::demo();
        let frames = (0..3)
            .map(|t| {
                sk.t_pose()
                    .iter()
                    .enumerate()
                    .map(|(j, p)| p + Vec3::new(0.1 * t as f64, 0.01 * j as f64, 1.0 / 3.0))
                    .collect()
            })
            .collect();
        PoseSequence::new(frames).unwrap()
    }

    #[test]
    fn pose_round_trip_is_exact() {
        let sk = Skeleton::demo();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pose.jsonl");
        let seq = three_frames();
        save_pose_sequence(&p, &seq, &sk).unwrap();
        let first = std::fs::read(&p).unwrap();
        let back = load_pose_sequence(&p, &sk).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back, seq);
        save_pose_sequence(&p, &back, &sk).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), first);
    }

    #[test]
    fn rotation_round_trip_is_exact() {
        let sk = Skeleton::demo();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rot.jsonl");
        let rot = encode(&three_frames(), &sk).unwrap();
        save_rotation_sequence(&p, &rot, &sk).unwrap();
        let first = std::fs::read(&p).unwrap();
        let back = load_rotation_sequence(&p, &sk).unwrap();
        assert_eq!(back, rot);
        save_rotation_sequence(&p, &back, &sk).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), first);
    }

    #[test]
    fn wrong_joint_count_reports_line() {
        let sk = Skeleton::demo();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pose.jsonl");
        let text = pose_sequence_to_string(&three_frames(), &sk).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[3] = "[[0, 0, 0], [1, 1, 1]]".into();
        std::fs::write(&p, lines.join("\n")).unwrap();
        let err = load_pose_sequence(&p, &sk).unwrap_err();
        match &err {
            Error::Parse { line, .. } => assert_eq!(*line, 4),
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("pose.jsonl:4"), "{err}");
    }

    #[test]
    fn blank_line_in_the_middle_is_rejected() {
        let sk = Skeleton::demo();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pose.jsonl");
        let text = pose_sequence_to_string(&three_frames(), &sk).unwrap();
        std::fs::write(&p, text.replacen('\n', "\n\n", 2)).unwrap();
        assert!(matches!(load_pose_sequence(&p, &sk), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn non_unit_quaternion_reports_line() {
        let sk = Skeleton::demo();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rot.jsonl");
        let rot = encode(&three_frames(), &sk).unwrap();
        let text = rotation_sequence_to_string(&rot, &sk).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let zero = "[0.0, 0.0, 0.0, 0.0]";
        let q = lines[2].find("[[").unwrap() + 1;
        let end = lines[2][q..].find(']').unwrap() + q + 1;
        lines[2].replace_range(q..end, zero);
        std::fs::write(&p, lines.join("\n")).unwrap();
        assert!(matches!(
            load_rotation_sequence(&p, &sk),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn mismatched_header_is_rejected() {
        let sk = Skeleton::demo();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pose.jsonl");
        std::fs::write(&p, "{\"format\": \"pose\", \"joints\": [\"a\"]}\n[[0,0,0]]\n").unwrap();
        assert!(matches!(load_pose_sequence(&p, &sk), Err(Error::Parse { line: 1, .. })));
    }
}
