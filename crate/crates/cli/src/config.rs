//! `--config FILE`: a JSON object whose keys name flags of the chosen command.
//!
//! The entries are spliced in as flags right after the subcommand, ahead of
//! the real command line, so explicit flags override them.

use std::ffi::OsString;
use std::path::PathBuf;

use serde_json::Value;

use crate::Failure;

fn config_path(argv: &[OsString]) -> Result<Option<PathBuf>, Failure> {
    let mut it = argv.iter().skip(2);
    let mut found = None;
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            let v = it
                .next()
                .ok_or_else(|| Failure::Usage("--config needs a file path".into()))?;
            found = Some(PathBuf::from(v));
        } else if let Some(v) = s.strip_prefix("--config=") {
            found = Some(PathBuf::from(v));
        }
    }
    Ok(found)
}

fn scalar(key: &str, v: &Value) -> Result<String, Failure> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(Failure::Usage(format!(
            "config key `{key}`: expected a string or number"
        ))),
    }
}

/// Flags equivalent to the config object, in key order.
pub fn flags_from(text: &str) -> Result<Vec<OsString>, Failure> {
    let value: Value = serde_json::from_str(text).map_err(|e| Failure::Usage(format!("config: {e}")))?;
    let Value::Object(map) = value else {
        return Err(Failure::Usage("config must be a JSON object".into()));
    };
    let mut out = Vec::new();
    for (key, v) in &map {
        if key == "config" {
            return Err(Failure::Usage("config files cannot name another config".into()));
        }
        let flag = format!("--{}", key.replace('_', "-"));
        match v {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => out.push(flag.into()),
            Value::Array(items) => {
                let parts = items.iter().map(|x| scalar(key, x)).collect::<Result<Vec<_>, _>>()?;
                out.push(flag.into());
                out.push(parts.join(",").into());
            }
            other => {
                out.push(flag.into());
                out.push(scalar(key, other)?.into());
            }
        }
    }
    Ok(out)
}

pub fn expand(argv: Vec<OsString>) -> Result<Vec<OsString>, Failure> {
    let Some(path) = config_path(&argv)? else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let flags = flags_from(&text)?;
    let mut out: Vec<OsString> = argv[..2].to_vec();
    out.extend(flags);
    out.extend(argv[2..].iter().cloned());
    Ok(out)
}
