use std::path::Path;

use serde_json::Value;

use super::{format_triple, quote, read_text, schema, write_atomic};
use crate::error::Result;
use crate::skeleton::{Skeleton, Vec3};

/// Canonical JSON text: fixed field order, one joint per line.
pub fn skeleton_to_string(s: &Skeleton) -> String {
    let names: Vec<String> = s.joint_names().iter().map(|n| quote(n)).collect();
    let parents: Vec<String> = s
        .parents()
        .iter()
        .map(|p| p.map_or("null".to_string(), |i| i.to_string()))
        .collect();
    let t_pose: Vec<String> = s
        .t_pose()
        .iter()
        .map(|p| format!("    {}", format_triple(&[p.x, p.y, p.z])))
        .collect();
    let (a, b) = s.shoulders();
    format!(
        "{{\n  \"joint_names\": [{}],\n  \"parents\": [{}],\n  \"t_pose\": [\n{}\n  ],\n  \"root\": {},\n  \"shoulders\": [{a}, {b}]\n}}\n",
        names.join(", "),
        parents.join(", "),
        t_pose.join(",\n"),
        s.root(),
    )
}

pub fn save_skeleton(path: &Path, s: &Skeleton) -> Result<()> {
    write_atomic(path, skeleton_to_string(s).as_bytes())
}

pub fn load_skeleton(path: &Path) -> Result<Skeleton> {
    parse_skeleton(&read_text(path)?, path)
}

fn field<'a>(obj: &'a Value, name: &str) -> Result<&'a Value, String> {
    obj.get(name).ok_or_else(|| format!("missing field `{name}`"))
}

fn index(v: &Value, at: &str) -> Result<usize, String> {
    v.as_u64()
        .map(|i| i as usize)
        .ok_or_else(|| format!("{at}: expected a non-negative integer"))
}

fn array<'a>(v: &'a Value, at: &str) -> Result<&'a Vec<Value>, String> {
    v.as_array().ok_or_else(|| format!("{at}: expected an array"))
}

/// Joint names, parents, T-pose, root and shoulder pair.
type Fields = (Vec<String>, Vec<Option<usize>>, Vec<Vec3>, usize, (usize, usize));

fn parse_fields(v: &Value) -> Result<Fields, String> {
    if !v.is_object() {
        return Err("top level: expected an object".into());
    }
    let names = array(field(v, "joint_names")?, "joint_names")?
        .iter()
        .enumerate()
        .map(|(i, n)| {
            n.as_str()
                .map(str::to_string)
                .ok_or_else(|| format!("joint_names[{i}]: expected a string"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let parents = array(field(v, "parents")?, "parents")?
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if p.is_null() {
                Ok(None)
            } else {
                index(p, &format!("parents[{i}]")).map(Some)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let t_pose = array(field(v, "t_pose")?, "t_pose")?
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let at = format!("t_pose[{i}]");
            let c = array(p, &at)?;
            if c.len() != 3 {
                return Err(format!("{at}: expected 3 coordinates, found {}", c.len()));
            }
            let xyz = c
                .iter()
                .enumerate()
                .map(|(k, x)| x.as_f64().ok_or_else(|| format!("{at}[{k}]: expected a number")))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Vec3::new(xyz[0], xyz[1], xyz[2]))
        })
        .collect::<Result<Vec<_>, String>>()?;
    let root = index(field(v, "root")?, "root")?;
    let sh = array(field(v, "shoulders")?, "shoulders")?;
    if sh.len() != 2 {
        return Err(format!("shoulders: expected 2 joint indices, found {}", sh.len()));
    }
    let shoulders = (index(&sh[0], "shoulders[0]")?, index(&sh[1], "shoulders[1]")?);
    Ok((names, parents, t_pose, root, shoulders))
}

/// Parse skeleton JSON; `path` is only used in error messages.
pub fn parse_skeleton(text: &str, path: &Path) -> Result<Skeleton> {
    let v: Value = serde_json::from_str(text).map_err(|e| schema(path, format!("invalid JSON: {e}")))?;
    let (names, parents, t_pose, root, shoulders) = parse_fields(&v).map_err(|m| schema(path, m))?;
    Skeleton::new(names, parents, t_pose, root, shoulders).map_err(|e| schema(path, e.to_string()))
}
