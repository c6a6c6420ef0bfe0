//! JSON config files as a twin of command-line flags.
//!
//! `{"epochs": 200, "vote": "majority", "verbose": true}` behaves like
//! `--epochs 200 --vote majority --verbose`. Flags given on the command line
//! win over the file.

use std::ffi::OsString;
use std::path::Path;

use serde_json::Value;

use crate::{read_json, HarnessError, Result};

fn flag_name(key: &str) -> String {
    format!("--{}", key.replace('_', "-"))
}

fn present(args: &[OsString], flag: &str) -> bool {
    args.iter().any(|a| {
        let a = a.to_string_lossy();
        a == flag || a.starts_with(&format!("{flag}="))
    })
}

/// Removes `--config <path>` from `args` and appends every config entry
/// whose flag is not already present.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut out = Vec::with_capacity(args.len());
    let mut config = None;
    let mut iter = args.into_iter();
    while let Some(a) = iter.next() {
        let s = a.to_string_lossy().into_owned();
        if s == "--config" {
            let path = iter
                .next()
                .ok_or_else(|| HarnessError::Config("--config needs a path".into()))?;
            config = Some(path);
        } else if let Some(path) = s.strip_prefix("--config=") {
            config = Some(path.into());
        } else {
            out.push(a);
        }
    }
    let Some(path) = config else {
        return Ok(out);
    };
    let value: Value = read_json(Path::new(&path))?;
    let Value::Object(map) = value else {
        return Err(HarnessError::Config("config file must hold a JSON object".into()));
    };
    for (key, value) in map {
        let flag = flag_name(&key);
        if present(&out, &flag) {
            continue;
        }
        match value {
            Value::Bool(true) => out.push(flag.into()),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                for item in items {
                    out.push(flag.clone().into());
                    out.push(scalar(&key, item)?.into());
                }
            }
            other => {
                out.push(flag.into());
                out.push(scalar(&key, other)?.into());
            }
        }
    }
    Ok(out)
}

fn scalar(key: &str, value: Value) -> Result<String> {
    match value {
        Value::String(s) => Ok(s),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        _ => Err(HarnessError::Config(format!("config key {key:?} must be a scalar or a list of scalars"))),
    }
}
