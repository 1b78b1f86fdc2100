//! JSON config files: every entry becomes a flag placed ahead of the user's
//! own arguments, so anything typed on the command line wins.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::Command;
use serde_json::Value;

/// Finds `--config PATH` (or `--config=PATH`) after the subcommand and splices
/// the file's entries in right after the subcommand name.
pub fn expand_args(args: Vec<OsString>, cli: &Command) -> Result<Vec<OsString>> {
    let Some(sub_name) = args.get(1).and_then(|s| s.to_str()) else {
        return Ok(args);
    };
    let Some(sub) = cli.find_subcommand(sub_name) else {
        return Ok(args);
    };
    let mut path = None;
    let mut it = args[2..].iter();
    while let Some(a) = it.next() {
        let a = a.to_string_lossy();
        if a == "--" {
            break;
        }
        if a == "--config" {
            path = it.next().cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.into());
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let injected = config_flags(Path::new(&path), sub)?;
    let mut out = args[..2].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[2..]);
    Ok(out)
}

fn config_flags(path: &Path, sub: &Command) -> Result<Vec<OsString>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let json: Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    let Value::Object(top) = json else {
        bail!("config {} must hold a JSON object", path.display());
    };
    let mut shared = Vec::new();
    let mut own = Vec::new();
    for (key, value) in &top {
        if let Value::Object(section) = value {
            if key == sub.get_name() {
                for (k, v) in section {
                    push_flag(&mut own, sub, k, v)?;
                }
            } else if !is_subcommand(key) {
                bail!("config section {key:?} is not a command");
            }
            continue;
        }
        push_flag(&mut shared, sub, key, value)?;
    }
    // Command sections refine the shared entries.
    shared.extend(own);
    Ok(shared)
}

fn is_subcommand(name: &str) -> bool {
    [
        "gen-data",
        "select-fragments",
        "train",
        "sample",
        "eval",
        "render",
    ]
    .contains(&name)
}

fn push_flag(out: &mut Vec<OsString>, sub: &Command, key: &str, value: &Value) -> Result<()> {
    let flag = key.replace('_', "-");
    let known = sub
        .get_arguments()
        .any(|a| a.get_long() == Some(flag.as_str()) && flag != "config");
    if !known {
        bail!("config key {key:?} is not a flag of {}", sub.get_name());
    }
    let scalar = |v: &Value| -> Result<String> {
        Ok(match v {
            Value::String(s) => s.clone(),
            Value::Number(n) => n.to_string(),
            other => bail!("config key {key:?}: unsupported value {other}"),
        })
    };
    match value {
        Value::Bool(true) => out.push(format!("--{flag}").into()),
        Value::Bool(false) => {}
        Value::Array(items) => {
            let parts = items.iter().map(scalar).collect::<Result<Vec<_>>>()?;
            out.push(format!("--{flag}").into());
            out.push(parts.join(",").into());
        }
        v => {
            out.push(format!("--{flag}").into());
            out.push(scalar(v)?.into());
        }
    }
    Ok(())
}
